//! One loaded set of artifacts and uniform dispatch over the retrieval
//! methods. The CLI `query`/`eval`/`sweep` commands and the HTTP service all
//! go through [`Engine::query`].

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::IteratorRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::blend::{
    early_fusion, late_fusion, BlendParams, BlendSpaces, ContextSpace, MultimodalQuery,
    Provenance, ResultEntry, ResultList, Stage, TextSpace,
};
use crate::catalog::{load_catalog, Catalog};
use crate::deepstyle::{DeepStyleBlock, DeepStyleModel, JointIndex, JointMetric, ModelKind};
use crate::embed::EmbeddingTable;
use crate::error::{Error, Result};
use crate::evalkit::{evaluate, EvalQuery, EvalReport, PairMode, SimilarityContext};
use crate::par::Execution;
use crate::visfeat::{catalog_features, l2_normalize, load_features, FeatureMap, FeatureVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Random,
    Late,
    Early,
    DeepStyle,
    Siamese,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Random,
        Method::Late,
        Method::Early,
        Method::DeepStyle,
        Method::Siamese,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Random => "random",
            Method::Late => "late",
            Method::Early => "early",
            Method::DeepStyle => "deepstyle",
            Method::Siamese => "siamese",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown method {s:?}")))
    }
}

/// The query image: a catalog item or an externally extracted feature vector.
#[derive(Debug, Clone, PartialEq)]
pub enum VisualInput {
    Item(String),
    Features(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Request {
    pub visual: VisualInput,
    pub text: String,
    pub method: Method,
    pub k: usize,
    /// Early-fusion overrides; when absent n1 and n2 keep their defaults and
    /// n3 follows `k`.
    pub params: Option<BlendParams>,
}

impl Request {
    pub fn item(id: impl Into<String>, text: impl Into<String>, method: Method, k: usize) -> Self {
        Request {
            visual: VisualInput::Item(id.into()),
            text: text.into(),
            method,
            k,
            params: None,
        }
    }

    pub fn with_params(mut self, params: BlendParams) -> Self {
        self.params = Some(params);
        self
    }
}

/// In-memory inputs of an [`Engine`]. Everything except the catalog is
/// optional; methods whose inputs are missing report themselves unavailable.
#[derive(Debug, Clone)]
pub struct EngineParts {
    pub catalog: Catalog,
    /// External features; inline catalog features are used when `None`.
    pub features: Option<FeatureMap>,
    pub text: Option<EmbeddingTable>,
    pub context: Option<EmbeddingTable>,
    pub deepstyle: Option<DeepStyleBlock>,
    pub siamese: Option<DeepStyleBlock>,
    pub joint_metric: JointMetric,
    pub random_seed: u64,
    pub exec: Execution,
}

impl EngineParts {
    pub fn new(catalog: Catalog) -> Self {
        EngineParts {
            catalog,
            features: None,
            text: None,
            context: None,
            deepstyle: None,
            siamese: None,
            joint_metric: JointMetric::Euclidean,
            random_seed: 1,
            exec: Execution::default(),
        }
    }
}

/// Artifact file locations; see [`Engine::load`].
#[derive(Debug, Clone, Default)]
pub struct ArtifactPaths {
    pub catalog: PathBuf,
    pub features: Option<PathBuf>,
    pub text: Option<PathBuf>,
    pub context: Option<PathBuf>,
    pub deepstyle: Option<PathBuf>,
    pub siamese: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct Engine {
    catalog: Catalog,
    features: FeatureMap,
    spaces: Option<BlendSpaces>,
    deepstyle: Option<JointIndex>,
    siamese: Option<JointIndex>,
    random_seed: u64,
    fingerprints: Vec<(String, String)>,
}

impl Engine {
    pub fn build(parts: EngineParts) -> Result<Self> {
        let EngineParts {
            catalog,
            features,
            text,
            context,
            deepstyle,
            siamese,
            joint_metric,
            random_seed,
            exec,
        } = parts;
        let features = catalog_features(&catalog, features.as_ref())?;
        let mut fingerprints = Vec::new();

        let spaces = match &text {
            Some(table) => {
                fingerprints.push(("text".to_string(), fingerprint_table(table)));
                let ctx = match &context {
                    Some(c) => {
                        fingerprints.push(("context".to_string(), fingerprint_table(c)));
                        Some(ContextSpace::build(&catalog, c)?)
                    }
                    None => None,
                };
                let text_space = TextSpace::build(&catalog, table.clone())?;
                Some(BlendSpaces::build(&features, text_space, ctx)?)
            }
            None => None,
        };

        let mut joint = |name: &str, block: Option<DeepStyleBlock>| -> Result<Option<JointIndex>> {
            let Some(block) = block else { return Ok(None) };
            let table = text
                .clone()
                .ok_or(Error::MissingModality("text embedding for the joint model"))?;
            fingerprints.push((name.to_string(), fingerprint_block(&block)));
            JointIndex::build(block, &catalog, &features, table, joint_metric, exec).map(Some)
        };
        let deepstyle = joint("deepstyle", deepstyle)?;
        let siamese = joint("siamese", siamese)?;

        Ok(Engine {
            catalog,
            features,
            spaces,
            deepstyle,
            siamese,
            random_seed,
            fingerprints,
        })
    }

    /// Loads every present artifact. Model files must carry the matching
    /// kind.
    pub fn load(paths: &ArtifactPaths, random_seed: u64) -> Result<Self> {
        let catalog = load_catalog(&paths.catalog)?;
        let mut parts = EngineParts::new(catalog);
        parts.random_seed = random_seed;
        if let Some(p) = &paths.features {
            parts.features = Some(load_features(p, parts.catalog.feature_dim())?);
        }
        if let Some(p) = &paths.text {
            parts.text = Some(EmbeddingTable::load(p)?);
        }
        if let Some(p) = &paths.context {
            parts.context = Some(EmbeddingTable::load(p)?);
        }
        if let Some(p) = &paths.deepstyle {
            parts.deepstyle = Some(load_model(p, ModelKind::DeepStyle)?);
        }
        if let Some(p) = &paths.siamese {
            parts.siamese = Some(load_model(p, ModelKind::Siamese)?);
        }
        Engine::build(parts)
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn features(&self) -> &FeatureMap {
        &self.features
    }

    pub fn spaces(&self) -> Option<&BlendSpaces> {
        self.spaces.as_ref()
    }

    /// Short content hashes of the loaded embeddings and models.
    pub fn fingerprints(&self) -> &[(String, String)] {
        &self.fingerprints
    }

    /// The pre-embedded catalog of a joint model (`DeepStyle` or `Siamese`).
    pub fn joint_index(&self, method: Method) -> Option<&JointIndex> {
        match method {
            Method::DeepStyle => self.deepstyle.as_ref(),
            Method::Siamese => self.siamese.as_ref(),
            _ => None,
        }
    }

    pub fn is_ready(&self, method: Method) -> bool {
        match method {
            Method::Random => true,
            Method::Late => self.spaces.is_some(),
            Method::Early => self.spaces.as_ref().is_some_and(|s| s.context.is_some()),
            Method::DeepStyle => self.deepstyle.is_some(),
            Method::Siamese => self.siamese.is_some(),
        }
    }

    fn query_image(&self, visual: &VisualInput) -> Result<(FeatureVector, Option<String>)> {
        match visual {
            VisualInput::Item(id) => {
                if self.catalog.item(id).is_none() {
                    return Err(Error::UnknownItem(id.clone()));
                }
                let v = self
                    .features
                    .get(id)
                    .ok_or_else(|| Error::MissingFeatures(id.clone()))?;
                Ok((v.clone(), Some(id.clone())))
            }
            VisualInput::Features(v) => {
                if v.len() != self.catalog.feature_dim() {
                    return Err(Error::DimensionMismatch {
                        id: None,
                        expected: self.catalog.feature_dim(),
                        found: v.len(),
                    });
                }
                Ok((l2_normalize(v)?, None))
            }
        }
    }

    pub fn query(&self, req: &Request) -> Result<ResultList> {
        if req.k == 0 {
            return Err(Error::InvalidParameter("k must be >= 1".into()));
        }
        let (visual, item) = self.query_image(&req.visual)?;
        let mut query = MultimodalQuery::new(visual, req.text.clone());
        query.query_item_id = item;
        let unavailable = || Error::MethodUnavailable(req.method.to_string());

        let mut list = match req.method {
            Method::Random => self.random(query.query_item_id.as_deref(), &req.text, req.k),
            Method::Late => late_fusion(&query, req.k, self.spaces.as_ref().ok_or_else(unavailable)?)?,
            Method::Early => {
                let spaces = self.spaces.as_ref().ok_or_else(unavailable)?;
                let params = req.params.unwrap_or(BlendParams {
                    n3: req.k,
                    ..BlendParams::default()
                });
                early_fusion(&query, params, spaces)?
            }
            Method::DeepStyle => self.deepstyle.as_ref().ok_or_else(unavailable)?.retrieve(&query, req.k)?,
            Method::Siamese => self.siamese.as_ref().ok_or_else(unavailable)?.retrieve(&query, req.k)?,
        };
        list.entries.truncate(req.k);
        Ok(list)
    }

    /// Uniformly random catalog items other than the query item, seeded by
    /// the engine seed and the query so that every query is reproducible on
    /// its own.
    fn random(&self, exclude: Option<&str>, text: &str, k: usize) -> ResultList {
        let mut h = Fnv::new();
        h.write(exclude.unwrap_or("").as_bytes());
        h.write(&[0xff]);
        h.write(text.as_bytes());
        let mut rng = ChaCha8Rng::seed_from_u64(self.random_seed ^ h.finish());
        let ids = self
            .catalog
            .item_ids()
            .filter(|id| Some(*id) != exclude)
            .choose_multiple(&mut rng, k);
        ResultList {
            entries: ids
                .into_iter()
                .map(|id| ResultEntry {
                    id: id.to_string(),
                    stage: Stage::Random,
                    score: None,
                    provenance: Provenance::default(),
                })
                .collect(),
            warnings: Vec::new(),
        }
    }

    /// Runs the evaluation protocol for one method over catalog query items.
    #[allow(clippy::too_many_arguments)]
    pub fn evaluate(
        &self,
        method: Method,
        queries: &[EvalQuery],
        k: usize,
        params: Option<BlendParams>,
        ctx: &SimilarityContext,
        mode: PairMode,
        exec: Execution,
    ) -> EvalReport {
        let run = |q: &EvalQuery, k: usize| {
            let mut req = Request::item(q.item_id.clone(), q.text.clone(), method, k);
            req.params = params;
            self.query(&req)
                .map(|r| r.entries.into_iter().map(|e| e.id).collect())
        };
        evaluate(run, queries, k, ctx, &self.catalog, mode, exec)
    }
}

fn load_model(path: &Path, kind: ModelKind) -> Result<DeepStyleBlock> {
    let model = DeepStyleModel::load(path)?;
    if model.kind != kind {
        return Err(Error::InvalidParameter(format!(
            "{} holds a {:?} model, expected {:?}",
            path.display(),
            model.kind,
            kind
        )));
    }
    Ok(model.block)
}

/// 64-bit FNV-1a; stable across platforms and releases.
struct Fnv(u64);

impl Fnv {
    fn new() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }

    fn write(&mut self, bytes: &[u8]) {
        for b in bytes {
            self.0 ^= u64::from(*b);
            self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
        }
    }

    fn finish(&self) -> u64 {
        self.0
    }
}

fn fingerprint_table(t: &EmbeddingTable) -> String {
    let mut h = Fnv::new();
    for (tok, v) in t.iter() {
        h.write(tok.as_bytes());
        for x in v {
            h.write(&x.to_le_bytes());
        }
    }
    format!("{:016x}", h.finish())
}

fn fingerprint_block(b: &DeepStyleBlock) -> String {
    let mut h = Fnv::new();
    for x in b.parameters() {
        h.write(&x.to_le_bytes());
    }
    format!("{:016x}", h.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::gen_synthetic;

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("nope".parse::<Method>().is_err());
    }

    #[test]
    fn random_is_seeded_and_excludes_query() {
        let cat = gen_synthetic(40, 2, 5, 3).unwrap().catalog;
        let engine = Engine::build(EngineParts::new(cat)).unwrap();
        let req = Request::item("p0001", "x", Method::Random, 4);
        let a = engine.query(&req).unwrap();
        let b = engine.query(&req).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 4);
        assert!(!a.ids().contains(&"p0001"));
        assert!(!engine.is_ready(Method::Late));
        assert!(matches!(
            engine.query(&Request::item("p0001", "x", Method::Siamese, 4)),
            Err(Error::MethodUnavailable(_))
        ));
        assert!(matches!(
            engine.query(&Request::item("zz", "x", Method::Random, 4)),
            Err(Error::UnknownItem(_))
        ));
    }
}
