use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    classification_loss, joint_loss, Activation, BlockGrads, DeepStyleBlock, Example,
    LossWeights, PairLabel, PairSample, BRANCH_DIM,
};
use crate::catalog::Catalog;
use crate::embed::EmbeddingTable;
use crate::error::{Error, Result};
use crate::visfeat::FeatureMap;

/// Stream offset separating the sampling RNG from the initialisation RNG.
const SAMPLING_STREAM: u64 = 0x5851_f42d_4c95_7f2d;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingItem {
    pub id: String,
    pub img: Vec<f64>,
    pub txt: Vec<f64>,
    pub label: usize,
}

/// Items with both modalities, plus compatible-set membership restricted to
/// those items.
#[derive(Debug, Clone)]
pub struct TrainingData {
    pub items: Vec<TrainingItem>,
    pub categories: Vec<String>,
    pub d_img: usize,
    pub d_txt: usize,
    /// Ids left out because a modality was missing.
    pub skipped: Vec<String>,
    sets: Vec<Vec<usize>>,
}

impl TrainingData {
    /// `restrict`, when given, limits training to those item ids.
    pub fn build(
        catalog: &Catalog,
        features: &FeatureMap,
        text: &EmbeddingTable,
        restrict: Option<&[String]>,
    ) -> Result<Self> {
        let allowed: Option<BTreeSet<&str>> =
            restrict.map(|ids| ids.iter().map(String::as_str).collect());
        let mut items = Vec::new();
        let mut skipped = Vec::new();
        let mut position = HashMap::new();
        for item in catalog.items() {
            if allowed.as_ref().is_some_and(|a| !a.contains(item.id.as_str())) {
                continue;
            }
            let (Some(img), Some(txt)) = (
                features.get(&item.id),
                super::text_input(&item.description, text),
            ) else {
                skipped.push(item.id.clone());
                continue;
            };
            let label = catalog
                .category_index(&item.category)
                .expect("catalog validates categories");
            position.insert(item.id.clone(), items.len());
            items.push(TrainingItem {
                id: item.id.clone(),
                img: img.values().to_vec(),
                txt,
                label,
            });
        }
        if !skipped.is_empty() {
            log::warn!("{} items skipped for missing modality", skipped.len());
        }
        if items.is_empty() {
            return Err(Error::NoTrainingData(
                "no item has both image features and a text embedding".into(),
            ));
        }
        let sets = catalog
            .sets()
            .map(|s| {
                s.item_ids
                    .iter()
                    .filter_map(|id| position.get(id).copied())
                    .collect::<Vec<_>>()
            })
            .filter(|m| m.len() >= 2)
            .collect();
        Ok(TrainingData {
            d_img: catalog.feature_dim(),
            d_txt: text.dim(),
            categories: catalog.categories().to_vec(),
            items,
            skipped,
            sets,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    fn example(&self, i: usize) -> Example<'_> {
        let it = &self.items[i];
        Example {
            img: &it.img,
            txt: &it.txt,
            label: it.label,
        }
    }

    /// Distinct within-set pairs `(i, j)`, `i < j`, sorted.
    pub fn positive_pairs(&self) -> Vec<(usize, usize)> {
        let mut out = BTreeSet::new();
        for members in &self.sets {
            for (a, &i) in members.iter().enumerate() {
                for &j in &members[a + 1..] {
                    out.insert((i.min(j), i.max(j)));
                }
            }
        }
        out.into_iter().collect()
    }

    fn memberships(&self) -> Vec<Vec<usize>> {
        let mut m = vec![Vec::new(); self.items.len()];
        for (s, members) in self.sets.iter().enumerate() {
            for &i in members {
                m[i].push(s);
            }
        }
        m
    }
}

/// One epoch of siamese pairs: every positive pair plus one negative per
/// positive, shuffled. A negative partners the positive's left item with a
/// set member it shares no set with; items outside every set are used only
/// when no such member exists.
pub fn sample_pairs(
    data: &TrainingData,
    positives: &[(usize, usize)],
    rng: &mut ChaCha8Rng,
) -> Vec<(usize, usize, PairLabel)> {
    let membership = data.memberships();
    let in_sets: Vec<usize> = (0..data.len()).filter(|&i| !membership[i].is_empty()).collect();
    let shares = |a: usize, b: usize| membership[a].iter().any(|s| membership[b].contains(s));
    let mut pairs = Vec::with_capacity(2 * positives.len());
    for &(a, b) in positives {
        pairs.push((a, b, PairLabel::Compatible));
        let mut neg = None;
        for _ in 0..64 {
            let &c = in_sets.choose(rng).expect("positives imply set members");
            if c != a && !shares(a, c) {
                neg = Some(c);
                break;
            }
        }
        if neg.is_none() {
            let ok = |c: &usize| *c != a && !shares(a, *c);
            let valid: Vec<usize> = in_sets.iter().copied().filter(ok).collect();
            neg = if valid.is_empty() {
                let rest: Vec<usize> = (0..data.len()).filter(ok).collect();
                rest.choose(rng).copied()
            } else {
                valid.choose(rng).copied()
            };
        }
        if let Some(c) = neg {
            pairs.push((a, c, PairLabel::Incompatible));
        }
    }
    pairs.shuffle(rng);
    pairs
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub momentum: f64,
    pub seed: u64,
    pub branch_dim: usize,
    pub activation: Activation,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            epochs: 20,
            learning_rate: 0.05,
            batch_size: 16,
            momentum: 0.0,
            seed: 1,
            branch_dim: BRANCH_DIM,
            activation: Activation::Relu,
        }
    }
}

impl ClassifierConfig {
    pub fn initial_block(&self, data: &TrainingData) -> DeepStyleBlock {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        DeepStyleBlock::random(
            data.d_img,
            data.d_txt,
            self.branch_dim,
            self.activation,
            data.categories.clone(),
            &mut rng,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiameseConfig {
    pub margin: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Seeds both the initial weights and the pair sampling.
    pub pair_seed: u64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub momentum: f64,
    pub branch_dim: usize,
    pub activation: Activation,
}

impl Default for SiameseConfig {
    fn default() -> Self {
        let w = LossWeights::default();
        SiameseConfig {
            margin: w.margin,
            alpha: w.alpha,
            beta: w.beta,
            gamma: w.gamma,
            pair_seed: 1,
            learning_rate: 0.05,
            epochs: 20,
            batch_size: 16,
            momentum: 0.0,
            branch_dim: BRANCH_DIM,
            activation: Activation::Relu,
        }
    }
}

impl SiameseConfig {
    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            margin: self.margin,
            alpha: self.alpha,
            beta: self.beta,
            gamma: self.gamma,
        }
    }

    pub fn initial_block(&self, data: &TrainingData) -> DeepStyleBlock {
        let mut rng = ChaCha8Rng::seed_from_u64(self.pair_seed);
        DeepStyleBlock::random(
            data.d_img,
            data.d_txt,
            self.branch_dim,
            self.activation,
            data.categories.clone(),
            &mut rng,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    DeepStyle,
    Siamese,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "objective", rename_all = "lowercase")]
pub enum TrainingEcho {
    Classifier(ClassifierConfig),
    Siamese(SiameseConfig),
}

/// A trained block with its provenance; this is the model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeepStyleModel {
    pub kind: ModelKind,
    pub block: DeepStyleBlock,
    pub training: TrainingEcho,
    pub epoch_loss: Vec<f64>,
}

impl DeepStyleModel {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        w.write_all(self.to_json().as_bytes())
            .and_then(|_| w.write_all(b"\n"))
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        let model: DeepStyleModel =
            serde_json::from_reader(BufReader::new(f)).map_err(|e| Error::parse(e.line(), e))?;
        model.block.validate()?;
        Ok(model)
    }
}

fn check_sgd(lr: f64, momentum: f64, batch_size: usize) -> Result<()> {
    if !(lr.is_finite() && lr >= 0.0) {
        return Err(Error::InvalidParameter("learning rate must be finite and >= 0".into()));
    }
    if !(momentum.is_finite() && (0.0..1.0).contains(&momentum)) {
        return Err(Error::InvalidParameter("momentum must be in [0, 1)".into()));
    }
    if batch_size == 0 {
        return Err(Error::InvalidParameter("batch size must be >= 1".into()));
    }
    Ok(())
}

/// Minibatch SGD on category cross-entropy.
pub fn train_classifier(data: &TrainingData, config: &ClassifierConfig) -> Result<DeepStyleModel> {
    check_sgd(config.learning_rate, config.momentum, config.batch_size)?;
    let mut block = config.initial_block(data);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ SAMPLING_STREAM);
    let mut grads = BlockGrads::zeros_like(&block);
    let mut velocity = BlockGrads::zeros_like(&block);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_loss = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            grads.reset();
            for &i in batch {
                total += classification_loss(&block, data.example(i), &mut grads)?;
            }
            grads.scale(1.0 / batch.len() as f64);
            block.sgd_step(&grads, config.learning_rate, config.momentum, &mut velocity);
        }
        let mean = total / data.len() as f64;
        if !mean.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        log::debug!("classifier epoch {epoch}: mean loss {mean:.6}");
        epoch_loss.push(mean);
    }
    Ok(DeepStyleModel {
        kind: ModelKind::DeepStyle,
        block,
        training: TrainingEcho::Classifier(config.clone()),
        epoch_loss,
    })
}

/// Minibatch SGD on the weighted contrastive + cross-entropy objective over
/// freshly sampled pairs each epoch (1:1 positive to negative).
pub fn train_siamese(data: &TrainingData, config: &SiameseConfig) -> Result<DeepStyleModel> {
    check_sgd(config.learning_rate, config.momentum, config.batch_size)?;
    let weights = config.loss_weights();
    weights.validate()?;
    let positives = data.positive_pairs();
    if positives.is_empty() {
        return Err(Error::NoPositivePairs);
    }
    let mut block = config.initial_block(data);
    let mut rng = ChaCha8Rng::seed_from_u64(config.pair_seed ^ SAMPLING_STREAM);
    let mut grads = BlockGrads::zeros_like(&block);
    let mut velocity = BlockGrads::zeros_like(&block);
    let mut epoch_loss = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let pairs = sample_pairs(data, &positives, &mut rng);
        let mut total = 0.0;
        for batch in pairs.chunks(config.batch_size) {
            grads.reset();
            for &(a, b, y) in batch {
                let pair = PairSample {
                    left: data.example(a),
                    right: data.example(b),
                    y,
                };
                total += joint_loss(&pair, &block, &weights, &mut grads)?.total;
            }
            grads.scale(1.0 / batch.len() as f64);
            block.sgd_step(&grads, config.learning_rate, config.momentum, &mut velocity);
        }
        let mean = total / pairs.len() as f64;
        if !mean.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        log::debug!("siamese epoch {epoch}: mean loss {mean:.6}");
        epoch_loss.push(mean);
    }
    Ok(DeepStyleModel {
        kind: ModelKind::Siamese,
        block,
        training: TrainingEcho::Siamese(config.clone()),
        epoch_loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::gen_synthetic;
    use crate::embed::{description_corpus, train_cbow, CbowConfig};
    use crate::visfeat::catalog_features;

    fn data() -> TrainingData {
        let s = gen_synthetic(60, 3, 15, 4).unwrap();
        let text = train_cbow(
            &description_corpus(&s.catalog),
            &CbowConfig { dim: 8, epochs: 2, ..CbowConfig::text() },
        )
        .unwrap()
        .table;
        let feats = catalog_features(&s.catalog, None).unwrap();
        TrainingData::build(&s.catalog, &feats, &text, None).unwrap()
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let d = data();
        let cfg = ClassifierConfig {
            learning_rate: 0.0,
            epochs: 2,
            branch_dim: 8,
            ..Default::default()
        };
        let m = train_classifier(&d, &cfg).unwrap();
        assert_eq!(m.block, cfg.initial_block(&d));
        assert_eq!(m.epoch_loss.len(), 2);
    }

    #[test]
    fn zero_loss_weights_leave_parameters() {
        let d = data();
        let cfg = SiameseConfig {
            alpha: 0.0,
            beta: 0.0,
            gamma: 0.0,
            epochs: 2,
            branch_dim: 8,
            ..Default::default()
        };
        let m = train_siamese(&d, &cfg).unwrap();
        assert_eq!(m.block, cfg.initial_block(&d));
    }

    #[test]
    fn pairs_respect_labels() {
        let d = data();
        let membership = d.memberships();
        let positives = d.positive_pairs();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pairs = sample_pairs(&d, &positives, &mut rng);
        let n_pos = pairs.iter().filter(|p| p.2 == PairLabel::Compatible).count();
        assert_eq!(n_pos, positives.len());
        assert_eq!(pairs.len(), 2 * positives.len());
        for (a, b, y) in pairs {
            let share = membership[a].iter().any(|s| membership[b].contains(s));
            assert_eq!(share, y == PairLabel::Compatible);
        }
    }

    #[test]
    fn model_file_round_trip() {
        let d = data();
        let cfg = ClassifierConfig { epochs: 1, branch_dim: 4, ..Default::default() };
        let m = train_classifier(&d, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        m.save(&p).unwrap();
        assert_eq!(DeepStyleModel::load(&p).unwrap(), m);
    }

    #[test]
    fn no_sets_means_no_positive_pairs() {
        let s = gen_synthetic(20, 2, 1, 4).unwrap();
        let rows = s
            .catalog
            .categories()
            .iter()
            .map(|c| (c.clone(), vec![1.0, 0.0]))
            .collect();
        let text = EmbeddingTable::from_rows(2, rows).unwrap();
        let feats = catalog_features(&s.catalog, None).unwrap();
        let set_members: Vec<String> = s.catalog.sets().next().unwrap().item_ids.clone();
        let others: Vec<String> = s
            .catalog
            .item_ids()
            .filter(|id| !set_members.iter().any(|m| m == id))
            .map(str::to_string)
            .collect();
        let d = TrainingData::build(&s.catalog, &feats, &text, Some(&others)).unwrap();
        assert!(matches!(
            train_siamese(&d, &SiameseConfig::default()),
            Err(Error::NoPositivePairs)
        ));
    }
}
