use std::collections::{BTreeMap, BTreeSet};

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ails, PairMode, SimilarityContext};
use crate::catalog::Catalog;
use crate::embed::{tokenize, EmbeddingTable};
use crate::error::{Error, Result};
use crate::par::Execution;

/// One protocol query: a query item (its image) and a text query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalQuery {
    pub item_id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryOutcome {
    pub item_id: String,
    pub text: String,
    pub results: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ails: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextBreakdown {
    pub queries: usize,
    pub mean_ails: f64,
}

/// Scores only; wall-clock timing is logged rather than stored so that
/// identical runs serialize identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub seed: Option<u64>,
    pub k: usize,
    pub pair_mode: PairMode,
    pub queries: usize,
    pub evaluated: usize,
    pub skipped: usize,
    /// `None` when every query was skipped.
    pub mean_ails: Option<f64>,
    pub category_diversity: f64,
    pub per_text: BTreeMap<String, TextBreakdown>,
    pub per_query: Vec<QueryOutcome>,
}

impl EvalReport {
    pub fn labelled(mut self, method: impl Into<String>, seed: Option<u64>) -> Self {
        self.method = method.into();
        self.seed = seed;
        self
    }

    pub fn scores(&self) -> impl Iterator<Item = f64> + '_ {
        self.per_query.iter().filter_map(|q| q.ails)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Runs every query through `method` (which receives the query and `k`) and
/// scores the returned ids with AILS. Queries run under `exec`; results are
/// aggregated in query order. A method error or a too-short list skips the
/// query.
pub fn evaluate<F>(
    method: F,
    queries: &[EvalQuery],
    k: usize,
    ctx: &SimilarityContext,
    catalog: &Catalog,
    mode: PairMode,
    exec: Execution,
) -> EvalReport
where
    F: Fn(&EvalQuery, usize) -> Result<Vec<String>> + Sync,
{
    let started = std::time::Instant::now();
    let per_query: Vec<QueryOutcome> = exec.map(queries, |q| {
        let scored = method(q, k).and_then(|ids| {
            let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
            let s = ails(&refs, Some(&q.item_id), ctx, mode)?;
            Ok((ids, s))
        });
        match scored {
            Ok((results, s)) => QueryOutcome {
                item_id: q.item_id.clone(),
                text: q.text.clone(),
                results,
                ails: Some(s),
                error: None,
            },
            Err(e) => QueryOutcome {
                item_id: q.item_id.clone(),
                text: q.text.clone(),
                results: Vec::new(),
                ails: None,
                error: Some(e.to_string()),
            },
        }
    });

    let scores: Vec<f64> = per_query.iter().filter_map(|q| q.ails).collect();
    let mean_ails = (!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64);

    let mut by_text: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for q in &per_query {
        if let Some(s) = q.ails {
            by_text.entry(q.text.clone()).or_default().push(s);
        }
    }
    let per_text = by_text
        .into_iter()
        .map(|(t, v)| {
            let b = TextBreakdown {
                queries: v.len(),
                mean_ails: v.iter().sum::<f64>() / v.len() as f64,
            };
            (t, b)
        })
        .collect();

    let lists: Vec<Vec<String>> = per_query
        .iter()
        .filter(|q| q.ails.is_some())
        .map(|q| q.results.clone())
        .collect();
    let diversity = category_diversity(&lists, catalog);

    let skipped = per_query.len() - scores.len();
    if skipped > 0 {
        log::warn!("{skipped} of {} queries skipped", per_query.len());
    }
    log::info!(
        "evaluated {} queries in {:.3}s",
        per_query.len(),
        started.elapsed().as_secs_f64()
    );
    EvalReport {
        method: String::new(),
        seed: None,
        k,
        pair_mode: mode,
        queries: per_query.len(),
        evaluated: scores.len(),
        skipped,
        mean_ails,
        category_diversity: diversity,
        per_text,
        per_query,
    }
}

/// Mean number of distinct categories per result list (0 for no lists).
/// Ids missing from the catalog are ignored.
pub fn category_diversity(results: &[Vec<String>], catalog: &Catalog) -> f64 {
    if results.is_empty() {
        return 0.0;
    }
    let total: usize = results
        .iter()
        .map(|list| {
            list.iter()
                .filter_map(|id| catalog.item(id).map(|it| it.category.as_str()))
                .collect::<BTreeSet<_>>()
                .len()
        })
        .sum();
    total as f64 / results.len() as f64
}

/// Mean AILS per group of text queries.
pub fn group_by_query_category(
    report: &EvalReport,
    groups: &BTreeMap<String, String>,
) -> Result<BTreeMap<String, f64>> {
    let mut acc: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for q in &report.per_query {
        let Some(s) = q.ails else { continue };
        let g = groups
            .get(&q.text)
            .ok_or_else(|| Error::UnmappedQuery(q.text.clone()))?;
        let e = acc.entry(g.as_str()).or_default();
        e.0 += s;
        e.1 += 1;
    }
    Ok(acc
        .into_iter()
        .map(|(g, (sum, n))| (g.to_string(), sum / n as f64))
        .collect())
}

/// The `top_n` most frequent description tokens outside `stoplist`, most
/// frequent first (ties lexicographic).
pub fn frequent_description_words(
    catalog: &Catalog,
    top_n: usize,
    stoplist: &BTreeSet<String>,
) -> Vec<String> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for item in catalog.items() {
        for t in tokenize(&item.description) {
            if !stoplist.contains(&t) {
                *counts.entry(t).or_default() += 1;
            }
        }
    }
    let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.into_iter().take(top_n).map(|(w, _)| w).collect()
}

/// Pairs every query item with a text query drawn (seeded) from the frequent
/// description words that occur in its own description. If `vocab` is given,
/// only in-vocabulary words qualify. Items with no qualifying word fall back
/// to the globally most frequent qualifying word.
pub fn protocol_queries(
    catalog: &Catalog,
    query_items: &[String],
    frequent_words: &[String],
    vocab: Option<&EmbeddingTable>,
    seed: u64,
) -> Result<Vec<EvalQuery>> {
    let usable: Vec<&str> = frequent_words
        .iter()
        .map(String::as_str)
        .filter(|w| vocab.is_none_or(|v| v.contains(w)))
        .collect();
    let fallback = *usable
        .first()
        .ok_or_else(|| Error::InvalidParameter("no usable text query words".into()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    query_items
        .iter()
        .map(|id| {
            let item = catalog
                .item(id)
                .ok_or_else(|| Error::UnknownItem(id.clone()))?;
            let own: BTreeSet<String> = tokenize(&item.description).into_iter().collect();
            let candidates: Vec<&str> = usable
                .iter()
                .copied()
                .filter(|w| own.contains(*w))
                .collect();
            let text = candidates.choose(&mut rng).copied().unwrap_or(fallback);
            Ok(EvalQuery {
                item_id: id.clone(),
                text: text.to_string(),
            })
        })
        .collect()
}
