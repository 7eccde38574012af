//! Multimodal blending over the visual, contextual and textual spaces.
//!
//! Late fusion retrieves each modality independently and merges the lists.
//! Early fusion runs the modalities in sequence: visual neighbours of the
//! query image, their neighbours in the product-context embedding, then a
//! textual re-rank of the pooled candidates.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::catalog::Catalog;
use crate::embed::{dot, embed_text, EmbeddingTable};
use crate::error::{Error, Result};
use crate::knn::{Metric, Neighbor, VectorIndex};
use crate::visfeat::{FeatureMap, FeatureVector};

#[derive(Debug, Clone, Default)]
pub struct MultimodalQuery {
    pub visual: Option<FeatureVector>,
    pub text: Option<String>,
    /// Set when the query image is a catalog item; that item is never returned.
    pub query_item_id: Option<String>,
}

impl MultimodalQuery {
    pub fn new(visual: FeatureVector, text: impl Into<String>) -> Self {
        MultimodalQuery {
            visual: Some(visual),
            text: Some(text.into()),
            query_item_id: None,
        }
    }

    pub fn for_item(mut self, id: impl Into<String>) -> Self {
        self.query_item_id = Some(id.into());
        self
    }

    pub(crate) fn exclusions(&self) -> Vec<&str> {
        self.query_item_id.as_deref().into_iter().collect()
    }

    pub(crate) fn require_visual(&self) -> Result<&FeatureVector> {
        self.visual.as_ref().ok_or(Error::MissingModality("visual"))
    }

    pub(crate) fn require_text(&self) -> Result<&str> {
        self.text.as_deref().ok_or(Error::MissingModality("text"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlendParams {
    /// Visual candidates.
    pub n1: usize,
    /// Context neighbours per visual hit.
    pub n2: usize,
    /// Final results.
    pub n3: usize,
}

impl Default for BlendParams {
    fn default() -> Self {
        BlendParams { n1: 3, n2: 4, n3: 4 }
    }
}

impl BlendParams {
    pub fn validate(&self) -> Result<()> {
        if self.n1 == 0 || self.n2 == 0 || self.n3 == 0 {
            return Err(Error::InvalidParameter("n1, n2, n3 must all be >= 1".into()));
        }
        Ok(())
    }
}

/// Which retrieval stage contributed an item.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Visual,
    Context,
    Text,
    Joint,
    Random,
}

/// 1-based ranks of an item in each stage that saw it.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Provenance {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub visual: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub context: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub text: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultEntry {
    pub id: String,
    pub stage: Stage,
    pub score: Option<f64>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ResultList {
    pub entries: Vec<ResultEntry>,
    pub warnings: Vec<String>,
}

impl ResultList {
    pub fn ids(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.id.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub(crate) const WARN_TEXT_OOV: &str = "text query has no in-vocabulary tokens";

/// Description embeddings of catalog items plus the word table used to embed
/// text queries.
#[derive(Debug, Clone)]
pub struct TextSpace {
    table: EmbeddingTable,
    index: Option<VectorIndex>,
}

impl TextSpace {
    /// Items whose description has no in-vocabulary token are left out.
    pub fn build(catalog: &Catalog, table: EmbeddingTable) -> Result<Self> {
        let entries: Vec<(String, Vec<f64>)> = catalog
            .items()
            .filter_map(|it| embed_text(&it.description, &table).map(|v| (it.id.clone(), v)))
            .filter(|(_, v)| v.iter().any(|x| *x != 0.0))
            .collect();
        let skipped = catalog.len() - entries.len();
        if skipped > 0 {
            log::warn!("{skipped} items have no description embedding");
        }
        let index = if entries.is_empty() {
            None
        } else {
            Some(VectorIndex::build(entries, Metric::Cosine)?)
        };
        Ok(TextSpace { table, index })
    }

    pub fn table(&self) -> &EmbeddingTable {
        &self.table
    }

    pub fn embed_query(&self, text: &str) -> Option<Vec<f64>> {
        embed_text(text, &self.table).filter(|v| v.iter().any(|x| *x != 0.0))
    }

    /// Unit-norm description embedding of a catalog item.
    pub fn item_vector(&self, id: &str) -> Option<&[f64]> {
        self.index.as_ref().and_then(|i| i.vector(id))
    }

    /// Cosine similarity ranking of item descriptions against a query vector.
    pub fn query(&self, q: &[f64], k: usize, exclude: &[&str]) -> Result<Vec<Neighbor>> {
        match &self.index {
            Some(idx) => idx.query(q, k, exclude),
            None => Ok(Vec::new()),
        }
    }
}

/// Product-id embedding restricted to catalog items.
#[derive(Debug, Clone)]
pub struct ContextSpace {
    index: Option<VectorIndex>,
}

impl ContextSpace {
    pub fn build(catalog: &Catalog, table: &EmbeddingTable) -> Result<Self> {
        let entries: Vec<(&str, &[f64])> = catalog
            .item_ids()
            .filter_map(|id| table.get(id).map(|v| (id, v)))
            .collect();
        let index = if entries.is_empty() {
            None
        } else {
            Some(VectorIndex::build(entries, Metric::Cosine)?)
        };
        Ok(ContextSpace { index })
    }

    /// A context space in which no item has a vector.
    pub fn empty() -> Self {
        ContextSpace { index: None }
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.as_ref().is_some_and(|i| i.contains(id))
    }

    /// The `n` items closest to `id` by cosine, excluding `id` and `exclude`.
    /// Items without a context vector have no neighbours.
    pub fn neighbors(&self, id: &str, n: usize, exclude: &[&str]) -> Result<Vec<Neighbor>> {
        let Some(idx) = &self.index else {
            return Ok(Vec::new());
        };
        let Some(v) = idx.vector(id) else {
            return Ok(Vec::new());
        };
        let mut ex = exclude.to_vec();
        ex.push(id);
        idx.query(v, n, &ex)
    }
}

/// Everything the blending methods search over.
#[derive(Debug, Clone)]
pub struct BlendSpaces {
    pub visual: VectorIndex,
    pub text: TextSpace,
    pub context: Option<ContextSpace>,
}

impl BlendSpaces {
    pub fn build(
        features: &FeatureMap,
        text: TextSpace,
        context: Option<ContextSpace>,
    ) -> Result<Self> {
        let visual = VectorIndex::build(
            features.iter().map(|(id, v)| (id.as_str(), v.values())),
            Metric::Euclidean,
        )?;
        Ok(BlendSpaces {
            visual,
            text,
            context,
        })
    }

    fn visual_distance(&self, q: &[f64], id: &str) -> Option<f64> {
        self.visual.vector(id).map(|v| {
            v.iter()
                .zip(q)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        })
    }
}

/// Independent top-⌈k/2⌉ per modality, merged by alternating visual-first and
/// dropping repeats, truncated to `k`.
pub fn late_fusion(query: &MultimodalQuery, k: usize, spaces: &BlendSpaces) -> Result<ResultList> {
    if k == 0 {
        return Err(Error::InvalidParameter("k must be >= 1".into()));
    }
    let visual = query.require_visual()?;
    let text = query.require_text()?;
    let exclude = query.exclusions();

    let Some(tq) = spaces.text.embed_query(text) else {
        let vis = spaces.visual.query(visual.values(), k, &exclude)?;
        let entries = vis
            .into_iter()
            .enumerate()
            .map(|(r, n)| ResultEntry {
                id: n.id,
                stage: Stage::Visual,
                score: Some(n.score),
                provenance: Provenance {
                    visual: Some(r + 1),
                    ..Default::default()
                },
            })
            .collect();
        return Ok(ResultList {
            entries,
            warnings: vec![format!("{WARN_TEXT_OOV}; visual-only results")],
        });
    };

    let half = k.div_ceil(2);
    let vis = spaces.visual.query(visual.values(), half, &exclude)?;
    let txt = spaces.text.query(&tq, half, &exclude)?;

    let mut prov: HashMap<&str, Provenance> = HashMap::new();
    for (r, n) in vis.iter().enumerate() {
        prov.entry(&n.id).or_default().visual = Some(r + 1);
    }
    for (r, n) in txt.iter().enumerate() {
        prov.entry(&n.id).or_default().text = Some(r + 1);
    }

    let mut entries: Vec<ResultEntry> = Vec::with_capacity(k);
    let mut seen = HashSet::new();
    for i in 0..half {
        for (list, stage) in [(&vis, Stage::Visual), (&txt, Stage::Text)] {
            if let Some(n) = list.get(i) {
                if seen.insert(n.id.as_str()) {
                    entries.push(ResultEntry {
                        id: n.id.clone(),
                        stage,
                        score: Some(n.score),
                        provenance: prov[n.id.as_str()].clone(),
                    });
                }
            }
        }
    }
    entries.truncate(k);
    Ok(ResultList {
        entries,
        warnings: Vec::new(),
    })
}

/// Intermediate sets of the early-fusion pipeline, in stage order.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyFusionStages {
    /// Visual neighbours of the query image, nearest first.
    pub r_vis: Vec<String>,
    /// Union of context neighbours, in first-seen order.
    pub r_cont: Vec<String>,
    /// `r_vis` followed by the new members of `r_cont`.
    pub r_cand: Vec<String>,
    /// Final ranking with its scores (cosine distance to the text query, or
    /// visual distance when the text could not be embedded).
    pub r: Vec<Neighbor>,
    pub warnings: Vec<String>,
    context_rank: BTreeMap<String, usize>,
}

pub fn early_fusion_stages(
    query: &MultimodalQuery,
    params: BlendParams,
    spaces: &BlendSpaces,
) -> Result<EarlyFusionStages> {
    params.validate()?;
    let visual = query.require_visual()?;
    let text = query.require_text()?;
    let context = spaces
        .context
        .as_ref()
        .ok_or_else(|| Error::MethodUnavailable("early".into()))?;
    let exclude = query.exclusions();

    let r_vis: Vec<String> = spaces
        .visual
        .query(visual.values(), params.n1, &exclude)?
        .into_iter()
        .map(|n| n.id)
        .collect();

    let mut r_cont: Vec<String> = Vec::new();
    let mut context_rank: BTreeMap<String, usize> = BTreeMap::new();
    for r in &r_vis {
        for (rank, n) in context.neighbors(r, params.n2, &exclude)?.into_iter().enumerate() {
            let best = context_rank.entry(n.id.clone()).or_insert(rank + 1);
            *best = (*best).min(rank + 1);
            if !r_cont.contains(&n.id) {
                r_cont.push(n.id);
            }
        }
    }

    let mut r_cand = r_vis.clone();
    for id in &r_cont {
        if !r_cand.contains(id) {
            r_cand.push(id.clone());
        }
    }

    let mut warnings = Vec::new();
    let mut ranked: Vec<Neighbor> = match spaces.text.embed_query(text) {
        Some(tq) => {
            let norm = dot(&tq, &tq).sqrt();
            let tq: Vec<f64> = tq.iter().map(|x| x / norm).collect();
            r_cand
                .iter()
                .filter_map(|id| {
                    spaces.text.item_vector(id).map(|v| Neighbor {
                        id: id.clone(),
                        score: 1.0 - dot(v, &tq),
                    })
                })
                .collect()
        }
        None => {
            warnings.push(format!("{WARN_TEXT_OOV}; candidates ranked by visual distance"));
            r_cand
                .iter()
                .filter_map(|id| {
                    spaces
                        .visual_distance(visual.values(), id)
                        .map(|d| Neighbor { id: id.clone(), score: d })
                })
                .collect()
        }
    };
    ranked.sort_by(|a, b| a.score.total_cmp(&b.score).then_with(|| a.id.cmp(&b.id)));
    ranked.truncate(params.n3);

    Ok(EarlyFusionStages {
        r_vis,
        r_cont,
        r_cand,
        r: ranked,
        warnings,
        context_rank,
    })
}

/// Sequential visual → context → text pipeline; see [`early_fusion_stages`].
pub fn early_fusion(
    query: &MultimodalQuery,
    params: BlendParams,
    spaces: &BlendSpaces,
) -> Result<ResultList> {
    let st = early_fusion_stages(query, params, spaces)?;
    let text_ranked = st.warnings.is_empty();
    let entries = st
        .r
        .iter()
        .enumerate()
        .map(|(rank, n)| {
            let visual = st.r_vis.iter().position(|x| *x == n.id).map(|p| p + 1);
            ResultEntry {
                id: n.id.clone(),
                stage: if visual.is_some() {
                    Stage::Visual
                } else {
                    Stage::Context
                },
                score: Some(n.score),
                provenance: Provenance {
                    visual,
                    context: st.context_rank.get(&n.id).copied(),
                    text: text_ranked.then_some(rank + 1),
                },
            }
        })
        .collect();
    Ok(ResultList {
        entries,
        warnings: st.warnings,
    })
}
