//! CBOW word2vec with negative sampling, trained from scratch.
//!
//! Used twice: on item descriptions (word embeddings) and on compatible sets,
//! where product ids play the role of words and each set is one sentence.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::Catalog;
use crate::error::{Error, Result};

/// Lowercase, strip punctuation, split on whitespace. Punctuation inside a
/// word acts as a separator, so "A-line" becomes `["a", "line"]`.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            id: None,
            expected: u.len(),
            found: v.len(),
        });
    }
    let nu = dot(u, u).sqrt();
    let nv = dot(v, v).sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroVector(None));
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CbowConfig {
    pub dim: usize,
    /// Context radius on each side of the target.
    pub window: usize,
    /// Negative samples per target.
    pub negatives: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Floor of the linear learning-rate decay.
    pub min_learning_rate: f64,
    pub min_count: u64,
    pub seed: u64,
}

impl CbowConfig {
    /// Defaults for description text.
    pub fn text() -> Self {
        CbowConfig {
            dim: 100,
            window: 5,
            negatives: 5,
            epochs: 15,
            learning_rate: 0.025,
            min_learning_rate: 1e-4,
            min_count: 2,
            seed: 1,
        }
    }

    /// Defaults for product-id sentences built from compatible sets.
    pub fn context() -> Self {
        CbowConfig {
            window: 3,
            min_count: 1,
            ..Self::text()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::InvalidParameter("dim must be >= 2".into()));
        }
        if self.window < 1 {
            return Err(Error::InvalidParameter("window must be >= 1".into()));
        }
        if self.negatives < 1 {
            return Err(Error::InvalidParameter("negatives must be >= 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::InvalidParameter(
                "learning rate must be finite and non-negative".into(),
            ));
        }
        if !(self.min_learning_rate.is_finite() && self.min_learning_rate >= 0.0) {
            return Err(Error::InvalidParameter(
                "minimum learning rate must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }
}

impl Default for CbowConfig {
    fn default() -> Self {
        Self::text()
    }
}

/// Token vocabulary ordered by descending count, ties by token.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    counts: Vec<u64>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn build(corpus: &[Vec<String>], min_count: u64) -> Self {
        let mut counts: HashMap<&str, u64> = HashMap::new();
        for sentence in corpus {
            for tok in sentence {
                *counts.entry(tok.as_str()).or_default() += 1;
            }
        }
        let mut entries: Vec<(&str, u64)> = counts
            .into_iter()
            .filter(|&(_, c)| c >= min_count.max(1))
            .collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let tokens: Vec<String> = entries.iter().map(|(t, _)| t.to_string()).collect();
        let counts = entries.iter().map(|&(_, c)| c).collect();
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary {
            tokens,
            counts,
            index,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, idx: usize) -> &str {
        &self.tokens[idx]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn count(&self, idx: usize) -> u64 {
        self.counts[idx]
    }
}

/// Dense token -> vector map. Rows are stored contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct TableHeader {
    dim: usize,
    count: usize,
}

#[derive(Serialize, Deserialize)]
struct TableRow {
    t: String,
    v: Vec<f64>,
}

impl EmbeddingTable {
    pub fn from_rows(dim: usize, rows: Vec<(String, Vec<f64>)>) -> Result<Self> {
        let mut tokens = Vec::with_capacity(rows.len());
        let mut index = HashMap::with_capacity(rows.len());
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (tok, v) in rows {
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    id: Some(tok),
                    expected: dim,
                    found: v.len(),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(Some(tok)));
            }
            if index.insert(tok.clone(), tokens.len()).is_some() {
                return Err(Error::DuplicateId(tok));
            }
            tokens.push(tok);
            data.extend_from_slice(&v);
        }
        Ok(EmbeddingTable {
            dim,
            tokens,
            index,
            data,
        })
    }

    fn from_vocab(vocab: &Vocabulary, dim: usize, data: Vec<f64>) -> Self {
        EmbeddingTable {
            dim,
            tokens: vocab.tokens.clone(),
            index: vocab.index.clone(),
            data,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.index.get(token).map(|&i| self.row(i))
    }

    pub fn row(&self, idx: usize) -> &[f64] {
        &self.data[idx * self.dim..(idx + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.as_str(), self.row(i)))
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let header = TableHeader {
            dim: self.dim,
            count: self.len(),
        };
        let io = |e| Error::io("<embedding stream>", e);
        writeln!(w, "{}", serde_json::to_string(&header).unwrap()).map_err(io)?;
        for (t, v) in self.iter() {
            let row = TableRow {
                t: t.to_string(),
                v: v.to_vec(),
            };
            writeln!(w, "{}", serde_json::to_string(&row).unwrap()).map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut lines = BufReader::new(r).lines();
        let first = lines
            .next()
            .ok_or_else(|| Error::parse(1, "missing header"))?
            .map_err(|e| Error::io("<embedding stream>", e))?;
        let header: TableHeader =
            serde_json::from_str(&first).map_err(|e| Error::parse(1, e))?;
        let mut rows = Vec::with_capacity(header.count);
        for (i, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::io("<embedding stream>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            let row: TableRow = serde_json::from_str(&line).map_err(|e| Error::parse(i + 2, e))?;
            rows.push((row.t, row.v));
        }
        if rows.len() != header.count {
            return Err(Error::parse(
                1,
                format!("header declares {} rows, found {}", header.count, rows.len()),
            ));
        }
        Self::from_rows(header.dim, rows)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(BufWriter::new(f))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(f)
    }
}

/// Mean of the vectors of in-vocabulary tokens, `None` if there are none.
///
/// Tokens are summed in table order so the result does not depend on the
/// order of words in the text.
pub fn embed_text(text: &str, table: &EmbeddingTable) -> Option<Vec<f64>> {
    let mut idx: Vec<usize> = tokenize(text)
        .iter()
        .filter_map(|t| table.index.get(t.as_str()).copied())
        .collect();
    if idx.is_empty() {
        return None;
    }
    idx.sort_unstable();
    let mut acc = vec![0.0; table.dim];
    for &i in &idx {
        for (a, x) in acc.iter_mut().zip(table.row(i)) {
            *a += x;
        }
    }
    let n = idx.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Some(acc)
}

#[derive(Debug, Clone)]
pub struct CbowRun {
    pub table: EmbeddingTable,
    /// Mean negative-sampling loss per training position, one entry per epoch.
    pub epoch_loss: Vec<f64>,
}

/// The input vectors before any update: uniform in `[-0.5/dim, 0.5/dim)`.
pub fn initial_table(vocab: &Vocabulary, config: &CbowConfig) -> EmbeddingTable {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let scale = 1.0 / config.dim as f64;
    let data = (0..vocab.len() * config.dim)
        .map(|_| (rng.random::<f64>() - 0.5) * scale)
        .collect();
    EmbeddingTable::from_vocab(vocab, config.dim, data)
}

/// Cumulative unigram^0.75 distribution for negative sampling.
struct NegativeSampler {
    cdf: Vec<f64>,
}

impl NegativeSampler {
    fn new(vocab: &Vocabulary) -> Self {
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = vocab
            .counts
            .iter()
            .map(|&c| {
                acc += (c as f64).powf(0.75);
                acc
            })
            .collect();
        let total = acc;
        cdf.iter_mut().for_each(|x| *x /= total);
        NegativeSampler { cdf }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        self.cdf
            .partition_point(|&c| c <= u)
            .min(self.cdf.len() - 1)
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `-ln(sigmoid(x))` without overflow.
fn neg_log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

/// Train CBOW with negative sampling. Single-threaded and bit-deterministic
/// for a fixed seed.
pub fn train_cbow(corpus: &[Vec<String>], config: &CbowConfig) -> Result<CbowRun> {
    config.validate()?;
    let vocab = Vocabulary::build(corpus, config.min_count);
    if vocab.is_empty() {
        return Err(Error::EmptyVocabulary);
    }
    let mut table = initial_table(&vocab, config);
    let dim = config.dim;
    let sentences: Vec<Vec<usize>> = corpus
        .iter()
        .map(|s| s.iter().filter_map(|t| vocab.index_of(t)).collect())
        .collect();
    let positions: usize = sentences.iter().map(Vec::len).sum();
    let total = (positions * config.epochs).max(1) as f64;

    let sampler = NegativeSampler::new(&vocab);
    // Separate stream from the initialisation so epochs=0 leaves the
    // init untouched regardless of sampling.
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut output = vec![0.0; vocab.len() * dim];
    let mut hidden = vec![0.0; dim];
    let mut grad = vec![0.0; dim];
    let mut processed = 0usize;
    let mut epoch_loss = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let mut loss_sum = 0.0;
        let mut n_targets = 0usize;
        for sentence in &sentences {
            for pos in 0..sentence.len() {
                let progress = processed as f64 / total;
                processed += 1;
                let lr = (config.learning_rate
                    - (config.learning_rate - config.min_learning_rate) * progress)
                    .max(config.min_learning_rate.min(config.learning_rate));

                let lo = pos.saturating_sub(config.window);
                let hi = (pos + config.window + 1).min(sentence.len());
                let n_ctx = hi - lo - 1;
                if n_ctx == 0 {
                    continue;
                }
                hidden.iter_mut().for_each(|h| *h = 0.0);
                for (j, &c) in sentence[lo..hi].iter().enumerate() {
                    if lo + j != pos {
                        for (h, x) in hidden.iter_mut().zip(table.row(c)) {
                            *h += x;
                        }
                    }
                }
                hidden.iter_mut().for_each(|h| *h /= n_ctx as f64);
                grad.iter_mut().for_each(|g| *g = 0.0);

                let target = sentence[pos];
                for d in 0..=config.negatives {
                    let (word, label) = if d == 0 {
                        (target, 1.0)
                    } else {
                        let w = sampler.sample(&mut rng);
                        if w == target {
                            continue;
                        }
                        (w, 0.0)
                    };
                    let out = &mut output[word * dim..(word + 1) * dim];
                    let score = dot(&hidden, out);
                    loss_sum += if label > 0.0 {
                        neg_log_sigmoid(score)
                    } else {
                        neg_log_sigmoid(-score)
                    };
                    let g = (label - sigmoid(score)) * lr;
                    for k in 0..dim {
                        grad[k] += g * out[k];
                        out[k] += g * hidden[k];
                    }
                }
                let share = 1.0 / n_ctx as f64;
                for (j, &c) in sentence[lo..hi].iter().enumerate() {
                    if lo + j != pos {
                        let row = &mut table.data[c * dim..(c + 1) * dim];
                        for (x, g) in row.iter_mut().zip(&grad) {
                            *x += g * share;
                        }
                    }
                }
                n_targets += 1;
            }
        }
        let mean = if n_targets > 0 {
            loss_sum / n_targets as f64
        } else {
            0.0
        };
        if !mean.is_finite() || table.data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteLoss { epoch });
        }
        log::debug!("cbow epoch {epoch}: mean loss {mean:.6}");
        epoch_loss.push(mean);
    }
    Ok(CbowRun { table, epoch_loss })
}

/// Tokenized descriptions of every catalog item, in id order.
pub fn description_corpus(catalog: &Catalog) -> Vec<Vec<String>> {
    catalog
        .items()
        .map(|item| tokenize(&item.description))
        .collect()
}

/// Product-id embedding: each compatible set is a sentence of item ids.
/// Every item that appears in a set is kept (`min_count` is forced to 1).
pub fn train_context(catalog: &Catalog, config: &CbowConfig) -> Result<CbowRun> {
    if !catalog.sets().any(|s| s.item_ids.len() >= 2) {
        return Err(Error::InvalidParameter(
            "context training needs at least one set with two or more items".into(),
        ));
    }
    let corpus: Vec<Vec<String>> = catalog.sets().map(|s| s.item_ids.clone()).collect();
    let config = CbowConfig {
        min_count: 1,
        ..config.clone()
    };
    train_cbow(&corpus, &config)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn tokenize_rules() {
        assert_eq!(tokenize("Cozy, fluffy sofa!"), vec!["cozy", "fluffy", "sofa"]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("A-line DRESS"), vec!["a", "line", "dress"]);
    }

    #[test]
    fn cosine_values() {
        assert_eq!(cosine(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let c = cosine(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert!((c - 0.974631846).abs() < 1e-9);
        assert!(matches!(
            cosine(&[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::ZeroVector(_))
        ));
        assert!(matches!(
            cosine(&[1.0], &[1.0, 0.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn embed_text_mean_and_fallback() {
        let table = EmbeddingTable::from_rows(
            2,
            vec![("a".into(), vec![1.0, 0.0]), ("b".into(), vec![0.0, 1.0])],
        )
        .unwrap();
        assert_eq!(embed_text("a b", &table).unwrap(), vec![0.5, 0.5]);
        assert_eq!(embed_text("zz qq", &table), None);
        assert_eq!(embed_text("b zz a zz", &table), embed_text("a b", &table));
    }

    #[test]
    fn vocabulary_orders_by_count_then_token() {
        let corpus = vec![toks("b a c a"), toks("c d")];
        let v = Vocabulary::build(&corpus, 2);
        assert_eq!(v.tokens(), &["a".to_string(), "c".to_string()]);
        assert_eq!(v.count(0), 2);
    }

    #[test]
    fn empty_vocabulary_is_an_error() {
        let corpus = vec![toks("a b c")];
        let cfg = CbowConfig {
            min_count: 2,
            ..CbowConfig::text()
        };
        assert!(matches!(train_cbow(&corpus, &cfg), Err(Error::EmptyVocabulary)));
    }

    #[test]
    fn zero_epochs_returns_initialisation() {
        let corpus = vec![toks("a b c a b"), toks("c a b")];
        let cfg = CbowConfig {
            epochs: 0,
            dim: 8,
            min_count: 1,
            ..CbowConfig::text()
        };
        let run = train_cbow(&corpus, &cfg).unwrap();
        let vocab = Vocabulary::build(&corpus, 1);
        assert_eq!(run.table, initial_table(&vocab, &cfg));
        assert!(run.epoch_loss.is_empty());
    }

    #[test]
    fn table_round_trips_through_file_format() {
        let table = EmbeddingTable::from_rows(
            3,
            vec![
                ("x".into(), vec![0.1, -2.5e-17, 3.0]),
                ("y".into(), vec![1.0 / 3.0, 0.0, -7.25]),
            ],
        )
        .unwrap();
        let mut buf = Vec::new();
        table.write_to(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("{\"dim\":3,\"count\":2}\n"));
        assert_eq!(EmbeddingTable::read_from(&buf[..]).unwrap(), table);
    }

    #[test]
    fn invalid_config_rejected() {
        let corpus = vec![toks("a b")];
        for cfg in [
            CbowConfig { dim: 1, ..CbowConfig::text() },
            CbowConfig { window: 0, ..CbowConfig::text() },
            CbowConfig { negatives: 0, ..CbowConfig::text() },
        ] {
            assert!(matches!(
                train_cbow(&corpus, &cfg),
                Err(Error::InvalidParameter(_))
            ));
        }
    }
}
