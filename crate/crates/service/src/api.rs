//! Request and response bodies.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use stylesearch_core::blend::{BlendParams, Provenance, Stage};
use stylesearch_core::catalog::Item;
use stylesearch_core::engine::{Method, Request, VisualInput};

use crate::error::ApiError;

pub const MAX_K: usize = 50;
pub const DEFAULT_K: usize = 4;

fn default_k() -> usize {
    DEFAULT_K
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct QueryRequest {
    #[serde(default)]
    pub item_id: Option<String>,
    #[serde(default)]
    pub features: Option<Vec<f64>>,
    pub text: String,
    pub method: Method,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub params: Option<BlendParams>,
}

impl QueryRequest {
    pub fn into_request(self) -> Result<Request, ApiError> {
        if !(1..=MAX_K).contains(&self.k) {
            return Err(ApiError::bad_request(format!("k must be in 1..={MAX_K}")));
        }
        let visual = match (self.item_id, self.features) {
            (Some(id), None) => VisualInput::Item(id),
            (None, Some(v)) => VisualInput::Features(v),
            _ => {
                return Err(ApiError::bad_request(
                    "exactly one of item_id and features is required",
                ))
            }
        };
        Ok(Request {
            visual,
            text: self.text,
            method: self.method,
            k: self.k,
            params: self.params,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultView {
    pub id: String,
    pub category: String,
    pub name: String,
    pub description: String,
    pub score: Option<f64>,
    pub stage: Stage,
    pub provenance: ProvenanceView,
}

/// 1-based stage ranks, mirroring [`Provenance`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceView {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub visual: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<usize>,
}

impl From<&Provenance> for ProvenanceView {
    fn from(p: &Provenance) -> Self {
        ProvenanceView {
            visual: p.visual,
            context: p.context,
            text: p.text,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResponse {
    pub method: Method,
    pub results: Vec<ResultView>,
    pub warnings: Vec<String>,
    pub elapsed_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemView {
    pub id: String,
    pub category: String,
    pub name: String,
    pub description: String,
    pub set_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_url: Option<String>,
}

impl From<&Item> for ItemView {
    fn from(it: &Item) -> Self {
        ItemView {
            id: it.id.clone(),
            category: it.category.clone(),
            name: it.name.clone(),
            description: it.description.clone(),
            set_ids: it.set_ids.clone(),
            image_url: it.image_url.clone(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct ItemsQuery {
    pub category: Option<String>,
    #[serde(default)]
    pub page: usize,
    pub per_page: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemPage {
    pub items: Vec<ItemView>,
    pub page: usize,
    pub per_page: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodStatus {
    pub name: Method,
    pub ready: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub items: usize,
    pub sets: usize,
    pub models: BTreeMap<String, String>,
}
