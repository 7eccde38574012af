//! Exact search and the fusion pipelines against brute-force oracles written
//! directly from the definitions.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stylesearch_core::blend::{
    early_fusion, early_fusion_stages, late_fusion, BlendParams, BlendSpaces, ContextSpace,
    MultimodalQuery, TextSpace,
};
use stylesearch_core::catalog::{gen_synthetic, Catalog};
use stylesearch_core::embed::{tokenize, EmbeddingTable};
use stylesearch_core::knn::{Metric, VectorIndex};
use stylesearch_core::par::Execution;
use stylesearch_core::visfeat::{catalog_features, l2_normalize, FeatureMap};
use stylesearch_core::Error;

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    d / (na * nb)
}

/// Full sort of every candidate; distance ascending or similarity descending,
/// then id.
fn brute_force(
    data: &[(String, Vec<f64>)],
    q: &[f64],
    k: usize,
    metric: Metric,
    exclude: &[&str],
) -> Vec<String> {
    let mut all: Vec<(f64, &str)> = data
        .iter()
        .filter(|(id, _)| !exclude.contains(&id.as_str()))
        .map(|(id, v)| match metric {
            Metric::Euclidean => (euclid(v, q), id.as_str()),
            Metric::Cosine => (-cos(v, q), id.as_str()),
        })
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(b.1)));
    all.into_iter().take(k).map(|(_, id)| id.to_string()).collect()
}

fn random_data(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<(String, Vec<f64>)> {
    (0..n)
        .map(|i| {
            let v = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            (format!("v{i:04}"), v)
        })
        .collect()
}

#[test]
fn knn_equals_exhaustive_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let data = random_data(&mut rng, 1000, 16);
    for metric in [Metric::Euclidean, Metric::Cosine] {
        let idx = VectorIndex::build(data.iter().map(|(i, v)| (i.as_str(), v)), metric).unwrap();
        for _ in 0..50 {
            let q: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
            for k in [1, 4, 10] {
                let got: Vec<String> = idx.query(&q, k, &[]).unwrap().into_iter().map(|n| n.id).collect();
                assert_eq!(got, brute_force(&data, &q, k, metric, &[]));
            }
        }
    }
}

#[test]
fn sequential_and_parallel_scans_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let data = random_data(&mut rng, 5000, 8);
    let idx = VectorIndex::build(data.iter().map(|(i, v)| (i.as_str(), v)), Metric::Euclidean).unwrap();
    let q = vec![0.1; 8];
    let a = idx.query_with(Execution::Sequential, &q, 25, &["v0001"]).unwrap();
    let b = idx.query_with(Execution::Parallel, &q, 25, &["v0001"]).unwrap();
    assert_eq!(a, b);
}

#[test]
fn knn_rejects_bad_queries() {
    let idx = VectorIndex::build([("a", vec![1.0, 0.0])], Metric::Cosine).unwrap();
    assert!(matches!(idx.query(&[1.0], 1, &[]), Err(Error::DimensionMismatch { .. })));
    assert!(matches!(idx.query(&[0.0, 0.0], 1, &[]), Err(Error::ZeroVector(_))));
    assert!(matches!(idx.query(&[1.0, 0.0], 0, &[]), Err(Error::InvalidParameter(_))));
}

proptest! {
    #[test]
    fn knn_invariants(
        vectors in prop::collection::vec(prop::collection::vec(-4i32..4, 3), 1..40),
        q in prop::collection::vec(-4i32..4, 3),
        k in 1usize..12,
        excluded in 0usize..40,
    ) {
        // Small integer coordinates force many exact ties.
        let data: Vec<(String, Vec<f64>)> = vectors
            .iter()
            .enumerate()
            .map(|(i, v)| (format!("i{i:02}"), v.iter().map(|x| *x as f64).collect()))
            .collect();
        let q: Vec<f64> = q.iter().map(|x| *x as f64).collect();
        let ex_id = format!("i{excluded:02}");
        let exclude = [ex_id.as_str()];
        let idx = VectorIndex::build(data.iter().map(|(i, v)| (i.as_str(), v)), Metric::Euclidean).unwrap();
        let got: Vec<String> = idx.query(&q, k, &exclude).unwrap().into_iter().map(|n| n.id).collect();
        prop_assert_eq!(&got, &brute_force(&data, &q, k, Metric::Euclidean, &exclude));
        let available = data.len() - usize::from(excluded < data.len());
        prop_assert_eq!(got.len(), k.min(available));
        prop_assert!(!got.contains(&ex_id));
    }
}

// ---- fusion -------------------------------------------------------------

struct Fixture {
    catalog: Catalog,
    features: FeatureMap,
    text: EmbeddingTable,
    context: EmbeddingTable,
}

/// Synthetic catalog with random (untrained) word and context vectors; the
/// oracles only need the tables, not their quality.
fn fixture(seed: u64) -> Fixture {
    let s = gen_synthetic(60, 3, 15, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut words: Vec<String> = s
        .catalog
        .items()
        .flat_map(|it| tokenize(&it.description))
        .collect();
    words.sort();
    words.dedup();
    // Leave some words out so descriptions and queries can be partly OOV.
    words.retain(|_| rng.random_bool(0.8));
    let text = EmbeddingTable::from_rows(
        6,
        words
            .into_iter()
            .map(|w| (w, (0..6).map(|_| rng.random_range(-1.0..1.0)).collect()))
            .collect(),
    )
    .unwrap();
    let mut ids: Vec<String> = s.catalog.sets().flat_map(|st| st.item_ids.clone()).collect();
    ids.sort();
    ids.dedup();
    let context = EmbeddingTable::from_rows(
        5,
        ids.into_iter()
            .map(|id| (id, (0..5).map(|_| rng.random_range(-1.0..1.0)).collect()))
            .collect(),
    )
    .unwrap();
    let features = catalog_features(&s.catalog, None).unwrap();
    Fixture { catalog: s.catalog, features, text, context }
}

impl Fixture {
    fn spaces(&self, with_context: bool) -> BlendSpaces {
        let text = TextSpace::build(&self.catalog, self.text.clone()).unwrap();
        let ctx = with_context.then(|| ContextSpace::build(&self.catalog, &self.context).unwrap());
        BlendSpaces::build(&self.features, text, ctx).unwrap()
    }

    /// Mean word vector, summed in sorted token order so that identical
    /// token multisets give identical vectors.
    fn mean_words(&self, text: &str) -> Option<Vec<f64>> {
        let mut toks = tokenize(text);
        toks.sort();
        let vs: Vec<&[f64]> = toks.iter().filter_map(|t| self.text.get(t)).collect();
        if vs.is_empty() {
            return None;
        }
        let mut m = vec![0.0; self.text.dim()];
        for v in &vs {
            for (a, b) in m.iter_mut().zip(*v) {
                *a += b / vs.len() as f64;
            }
        }
        m.iter().any(|x| *x != 0.0).then_some(m)
    }

    fn description(&self, id: &str) -> Option<Vec<f64>> {
        self.mean_words(&self.catalog.item(id).unwrap().description)
    }

    fn feature_rows(&self) -> Vec<(String, Vec<f64>)> {
        self.features.iter().map(|(k, v)| (k.clone(), v.values().to_vec())).collect()
    }

    fn context_rows(&self) -> Vec<(String, Vec<f64>)> {
        self.context.iter().map(|(k, v)| (k.to_string(), v.to_vec())).collect()
    }

    fn text_rows(&self) -> Vec<(String, Vec<f64>)> {
        self.catalog
            .item_ids()
            .filter_map(|id| self.description(id).map(|v| (id.to_string(), v)))
            .collect()
    }

    /// Visual, context, then text stages written out one by one.
    fn early_oracle(&self, qid: &str, qv: &[f64], text: &str, p: BlendParams) -> Vec<String> {
        let r_vis = brute_force(&self.feature_rows(), qv, p.n1, Metric::Euclidean, &[qid]);
        let ctx = self.context_rows();
        let mut cand = r_vis.clone();
        for r in &r_vis {
            let Some(rv) = self.context.get(r) else { continue };
            for c in brute_force(&ctx, rv, p.n2, Metric::Cosine, &[r.as_str(), qid]) {
                if !cand.contains(&c) {
                    cand.push(c);
                }
            }
        }
        let tq = self.mean_words(text).unwrap();
        let mut scored: Vec<(f64, String)> = cand
            .into_iter()
            .filter_map(|id| self.description(&id).map(|v| (1.0 - cos(&v, &tq), id)))
            .collect();
        scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        scored.into_iter().take(p.n3).map(|(_, id)| id).collect()
    }

    fn late_oracle(&self, qid: &str, qv: &[f64], text: &str, k: usize) -> Vec<String> {
        let half = k.div_ceil(2);
        let vis = brute_force(&self.feature_rows(), qv, half, Metric::Euclidean, &[qid]);
        let tq = self.mean_words(text).unwrap();
        let txt = brute_force(&self.text_rows(), &tq, half, Metric::Cosine, &[qid]);
        let mut out: Vec<String> = Vec::new();
        for i in 0..half {
            for list in [&vis, &txt] {
                if let Some(id) = list.get(i) {
                    if !out.contains(id) {
                        out.push(id.clone());
                    }
                }
            }
        }
        out.truncate(k);
        out
    }

    fn query(&self, id: &str, text: &str) -> MultimodalQuery {
        MultimodalQuery::new(self.features[id].clone(), text).for_item(id)
    }

    /// A query word with a vector.
    fn known_word(&self, rng: &mut ChaCha8Rng) -> String {
        let toks = self.text.tokens();
        toks[rng.random_range(0..toks.len())].clone()
    }
}

#[test]
fn early_fusion_equals_stagewise_oracle() {
    for seed in 1..=3 {
        let f = fixture(seed);
        let spaces = f.spaces(true);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let ids: Vec<String> = f.catalog.item_ids().map(str::to_string).collect();
        for _ in 0..10 {
            let qid = &ids[rng.random_range(0..ids.len())];
            let text = f.known_word(&mut rng);
            for (n1, n2, n3) in [(1, 1, 1), (3, 4, 4), (5, 5, 4)] {
                let p = BlendParams { n1, n2, n3 };
                let got = early_fusion(&f.query(qid, &text), p, &spaces).unwrap();
                let expected = f.early_oracle(qid, f.features[qid].values(), &text, p);
                assert_eq!(got.ids(), expected, "query {qid} {text:?} {p:?}");
            }
        }
    }
}

#[test]
fn late_fusion_equals_merge_oracle() {
    let f = fixture(4);
    let spaces = f.spaces(false);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let ids: Vec<String> = f.catalog.item_ids().map(str::to_string).collect();
    for _ in 0..20 {
        let qid = &ids[rng.random_range(0..ids.len())];
        let text = f.known_word(&mut rng);
        for k in [1, 2, 4, 7] {
            let got = late_fusion(&f.query(qid, &text), k, &spaces).unwrap();
            assert_eq!(got.ids(), f.late_oracle(qid, f.features[qid].values(), &text, k));
        }
    }
}

#[test]
fn early_fusion_stage_sets_nest() {
    let f = fixture(5);
    let spaces = f.spaces(true);
    let q = f.query("p0003", &f.text.tokens()[0]);
    let st = early_fusion_stages(&q, BlendParams { n1: 4, n2: 3, n3: 5 }, &spaces).unwrap();
    assert_eq!(&st.r_cand[..st.r_vis.len()], &st.r_vis[..]);
    for id in &st.r_cont {
        assert!(st.r_cand.contains(id));
    }
    for n in &st.r {
        assert!(st.r_cand.contains(&n.id));
    }
    assert!(st.r.len() <= 5);
    assert!(!st.r_cand.iter().any(|id| id == "p0003"));
}

#[test]
fn early_fusion_without_context_is_unavailable() {
    let f = fixture(6);
    let spaces = f.spaces(false);
    let q = f.query("p0001", &f.text.tokens()[0]);
    assert!(matches!(
        early_fusion(&q, BlendParams::default(), &spaces),
        Err(Error::MethodUnavailable(_))
    ));
}

#[test]
fn early_fusion_with_empty_context_reranks_visual_hits() {
    let f = fixture(7);
    let text = TextSpace::build(&f.catalog, f.text.clone()).unwrap();
    let spaces = BlendSpaces::build(&f.features, text, Some(ContextSpace::empty())).unwrap();
    let word = f.text.tokens()[0].clone();
    let q = f.query("p0002", &word);
    let st = early_fusion_stages(&q, BlendParams { n1: 4, n2: 3, n3: 4 }, &spaces).unwrap();
    assert!(st.r_cont.is_empty());
    assert_eq!(st.r_cand, st.r_vis);
}

#[test]
fn oov_text_falls_back_with_warning() {
    let f = fixture(8);
    let spaces = f.spaces(true);
    let q = f.query("p0004", "zzzz qqqq");
    let early = early_fusion(&q, BlendParams::default(), &spaces).unwrap();
    assert_eq!(early.warnings.len(), 1);
    assert!(early.len() <= 4);
    let late = late_fusion(&q, 4, &spaces).unwrap();
    let vis = brute_force(&f.feature_rows(), f.features["p0004"].values(), 4, Metric::Euclidean, &["p0004"]);
    assert_eq!(late.ids(), vis);
    assert_eq!(late.warnings.len(), 1);
}

#[test]
fn missing_modalities_are_errors() {
    let f = fixture(9);
    let spaces = f.spaces(true);
    let no_text = MultimodalQuery {
        visual: Some(f.features["p0001"].clone()),
        ..Default::default()
    };
    assert!(matches!(late_fusion(&no_text, 4, &spaces), Err(Error::MissingModality(_))));
    let no_image = MultimodalQuery { text: Some("x".into()), ..Default::default() };
    assert!(matches!(
        early_fusion(&no_image, BlendParams::default(), &spaces),
        Err(Error::MissingModality(_))
    ));
    assert!(matches!(
        early_fusion(&f.query("p0001", "x"), BlendParams { n1: 0, n2: 1, n3: 1 }, &spaces),
        Err(Error::InvalidParameter(_))
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]
    #[test]
    fn fusion_outputs_are_bounded_and_exclusive(
        seed in 1u64..6,
        item in 0usize..60,
        n1 in 1usize..6,
        n2 in 1usize..6,
        n3 in 1usize..8,
        k in 1usize..9,
    ) {
        let f = fixture(seed);
        let spaces = f.spaces(true);
        let qid = format!("p{item:04}");
        let word = f.text.tokens()[item % f.text.len()].clone();
        let q = f.query(&qid, &word);
        let early = early_fusion(&q, BlendParams { n1, n2, n3 }, &spaces).unwrap();
        let late = late_fusion(&q, k, &spaces).unwrap();
        for (list, cap) in [(&early, n3), (&late, k)] {
            let ids = list.ids();
            prop_assert!(ids.len() <= cap);
            prop_assert!(!ids.contains(&qid.as_str()));
            let mut sorted = ids.clone();
            sorted.sort();
            sorted.dedup();
            prop_assert_eq!(sorted.len(), ids.len());
        }
    }

    #[test]
    fn inline_features_rank_like_the_item(seed in 1u64..4, item in 0usize..60) {
        // The same vector passed inline ranks the item itself first (distance
        // 0); the rest follows the by-item ranking.
        let f = fixture(seed);
        let spaces = f.spaces(true);
        let qid = format!("p{item:04}");
        let v = l2_normalize(f.features[&qid].values()).unwrap();
        let inline = spaces.visual.query(v.values(), 6, &[]).unwrap();
        let by_item = spaces.visual.query(v.values(), 5, &[qid.as_str()]).unwrap();
        prop_assert_eq!(&inline[0].id, &qid);
        prop_assert_eq!(&inline[1..], &by_item[..]);
    }
}
