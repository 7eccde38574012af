//! Style-similarity metrics and the evaluation protocol.
//!
//! Two items are similar to the degree they co-occur in compatible sets
//! (`sim_context`), or fully similar when their names share a frequent
//! descriptive word (`sim_name`). A result list is scored by the mean pairwise
//! similarity of its members (AILS).

mod protocol;
mod sweep;

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::catalog::Catalog;
use crate::error::{Error, Result};

pub use protocol::{
    category_diversity, evaluate, frequent_description_words, group_by_query_category,
    protocol_queries, EvalQuery, EvalReport, QueryOutcome, TextBreakdown,
};
pub use sweep::{sweep_n1_n2, SweepMatrix};

/// Default size of the frequent name-word set.
pub const DEFAULT_TOP_WORDS: usize = 50;

#[derive(Debug, Clone)]
pub struct SimilarityContext {
    item_sets: HashMap<String, Vec<String>>,
    name_words: HashMap<String, BTreeSet<String>>,
    frequent_words: BTreeSet<String>,
}

impl SimilarityContext {
    /// `frequent_words` is the set W; each item keeps the part of its name
    /// tokens that falls in W.
    pub fn new(catalog: &Catalog, frequent_words: BTreeSet<String>) -> Self {
        let item_sets = catalog
            .items()
            .map(|it| (it.id.clone(), it.set_ids.clone()))
            .collect();
        let name_words = catalog
            .items()
            .map(|it| {
                let w = it
                    .name_words
                    .iter()
                    .filter(|w| frequent_words.contains(*w))
                    .cloned()
                    .collect();
                (it.id.clone(), w)
            })
            .collect();
        SimilarityContext {
            item_sets,
            name_words,
            frequent_words,
        }
    }

    pub fn frequent_words(&self) -> &BTreeSet<String> {
        &self.frequent_words
    }

    fn sets_of(&self, id: &str) -> &[String] {
        self.item_sets.get(id).map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Shared sets over the larger of the two membership counts; 0 when neither
/// item belongs to any set.
pub fn sim_context(p1: &str, p2: &str, ctx: &SimilarityContext) -> f64 {
    let a = ctx.sets_of(p1);
    let b = ctx.sets_of(p2);
    let denom = a.len().max(b.len());
    if denom == 0 {
        return 0.0;
    }
    // Both lists are sorted.
    let (mut i, mut j, mut shared) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                shared += 1;
                i += 1;
                j += 1;
            }
        }
    }
    shared as f64 / denom as f64
}

/// 1 when the frequent-word parts of the two names intersect.
pub fn sim_name(p1: &str, p2: &str, ctx: &SimilarityContext) -> f64 {
    match (ctx.name_words.get(p1), ctx.name_words.get(p2)) {
        (Some(a), Some(b)) if !a.is_disjoint(b) => 1.0,
        _ => 0.0,
    }
}

pub fn sim(p1: &str, p2: &str, ctx: &SimilarityContext) -> f64 {
    sim_context(p1, p2, ctx).max(sim_name(p1, p2, ctx))
}

/// Which members form the evaluated list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairMode {
    /// Retrieved items plus the query item.
    #[default]
    WithQuery,
    RetrievedOnly,
}

/// Mean similarity over all unordered pairs of the evaluated list.
///
/// Members are summed in sorted order, so any permutation of `retrieved`
/// gives a bit-identical score. Repeated ids are counted once.
pub fn ails(
    retrieved: &[&str],
    query_item: Option<&str>,
    ctx: &SimilarityContext,
    mode: PairMode,
) -> Result<f64> {
    let mut members: BTreeSet<&str> = retrieved.iter().copied().collect();
    if mode == PairMode::WithQuery {
        if let Some(q) = query_item {
            members.insert(q);
        }
    }
    if members.len() < 2 {
        return Err(Error::ListTooShort(members.len()));
    }
    let members: Vec<&str> = members.into_iter().collect();
    let mut total = 0.0;
    let mut pairs = 0usize;
    for (i, a) in members.iter().enumerate() {
        for b in &members[i + 1..] {
            total += sim(a, b, ctx);
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}
