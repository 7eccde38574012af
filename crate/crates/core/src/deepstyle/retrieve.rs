use super::DeepStyleBlock;
use crate::blend::{MultimodalQuery, Provenance, ResultEntry, ResultList, Stage, WARN_TEXT_OOV};
use crate::catalog::Catalog;
use crate::embed::EmbeddingTable;
use crate::error::{Error, Result};
use crate::knn::{Metric, VectorIndex};
use crate::par::Execution;
use crate::visfeat::FeatureMap;

pub use crate::knn::Metric as JointMetric;

/// Catalog items pre-embedded into the joint space of a block.
#[derive(Debug, Clone)]
pub struct JointIndex {
    block: DeepStyleBlock,
    text: EmbeddingTable,
    index: VectorIndex,
}

impl JointIndex {
    /// Embeds every item that has both modalities; the batch runs under
    /// `exec` and entries are kept in id order.
    pub fn build(
        block: DeepStyleBlock,
        catalog: &Catalog,
        features: &FeatureMap,
        text: EmbeddingTable,
        metric: Metric,
        exec: Execution,
    ) -> Result<Self> {
        block.validate()?;
        if block.image_dim() != catalog.feature_dim() || block.text_dim() != text.dim() {
            return Err(Error::DimensionMismatch {
                id: Some("model inputs".into()),
                expected: block.image_dim() + block.text_dim(),
                found: catalog.feature_dim() + text.dim(),
            });
        }
        let items: Vec<_> = catalog.items().collect();
        let embedded: Vec<Option<(String, Vec<f64>)>> = exec.map(&items, |item| {
            let img = features.get(&item.id)?;
            let txt = super::text_input(&item.description, &text)?;
            let (e, _) = block.forward(img.values(), &txt).ok()?;
            Some((item.id.clone(), e))
        });
        let entries: Vec<(String, Vec<f64>)> = embedded.into_iter().flatten().collect();
        if entries.len() < items.len() {
            log::warn!(
                "{} items not embedded (missing modality)",
                items.len() - entries.len()
            );
        }
        let index = VectorIndex::build(entries, metric)?;
        Ok(JointIndex { block, text, index })
    }

    pub fn block(&self) -> &DeepStyleBlock {
        &self.block
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn embedding(&self, id: &str) -> Option<&[f64]> {
        self.index.vector(id)
    }

    /// Joint embedding of a raw query; an unembeddable text becomes the zero
    /// vector (reported through the returned flag).
    pub fn embed_query(&self, query: &MultimodalQuery) -> Result<(Vec<f64>, bool)> {
        let visual = query.require_visual()?;
        let txt = query.text.as_deref().and_then(|t| super::text_input(t, &self.text));
        let oov = txt.is_none();
        let txt = txt.unwrap_or_else(|| vec![0.0; self.text.dim()]);
        let (e, _) = self.block.forward(visual.values(), &txt)?;
        Ok((e, oov))
    }

    /// The `k` catalog items nearest to the query in the joint space.
    pub fn retrieve(&self, query: &MultimodalQuery, k: usize) -> Result<ResultList> {
        let (q, oov) = self.embed_query(query)?;
        let hits = self.index.query(&q, k, &query.exclusions())?;
        let entries = hits
            .into_iter()
            .map(|n| ResultEntry {
                id: n.id,
                stage: Stage::Joint,
                score: Some(n.score),
                provenance: Provenance::default(),
            })
            .collect();
        let warnings = if oov {
            vec![format!("{WARN_TEXT_OOV}; text branch fed a zero vector")]
        } else {
            Vec::new()
        };
        Ok(ResultList { entries, warnings })
    }
}
