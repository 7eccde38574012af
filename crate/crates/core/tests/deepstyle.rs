//! Forward pass against straight-line matrix arithmetic, loss values against
//! independent formulas, and analytic gradients against central finite
//! differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stylesearch_core::blend::MultimodalQuery;
use stylesearch_core::catalog::gen_synthetic;
use stylesearch_core::deepstyle::{
    classification_loss, contrastive_loss, cross_entropy, joint_loss, softmax, train_classifier,
    train_siamese, Activation, BlockGrads, ClassifierConfig, DeepStyleBlock, Example, JointIndex,
    LossWeights, PairLabel, PairSample, SiameseConfig, TrainingData,
};
use stylesearch_core::embed::{description_corpus, train_cbow, CbowConfig};
use stylesearch_core::knn::Metric;
use stylesearch_core::par::Execution;
use stylesearch_core::visfeat::catalog_features;

const EPS: f64 = 1e-4;

fn cats(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("c{i}")).collect()
}

fn randvec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

/// A tiny block with every parameter (biases included) drawn at random.
fn tiny_block(rng: &mut ChaCha8Rng) -> DeepStyleBlock {
    let d_img = rng.random_range(2..=8);
    let d_txt = rng.random_range(2..=8);
    let hidden = rng.random_range(2..=5);
    let classes = rng.random_range(2..=4);
    let mut b = DeepStyleBlock::random(d_img, d_txt, hidden, Activation::Relu, cats(classes), rng);
    let n = b.parameters().len();
    let p = randvec(rng, n, 0.8);
    b.set_parameters(&p);
    b
}

fn matvec(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let n_in = x.len();
    (0..b.len())
        .map(|o| {
            let mut s = b[o];
            for j in 0..n_in {
                s += w[o * n_in + j] * x[j];
            }
            s
        })
        .collect()
}

fn relu(v: Vec<f64>) -> Vec<f64> {
    v.into_iter().map(|x| x.max(0.0)).collect()
}

#[test]
fn forward_matches_matrix_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut b = DeepStyleBlock::random(6, 5, 4, Activation::Relu, cats(3), &mut rng);
    let n = b.parameters().len();
    b.set_parameters(&randvec(&mut rng, n, 1.0));
    let img = randvec(&mut rng, 6, 1.0);
    let txt = randvec(&mut rng, 5, 1.0);
    let (e, l) = b.forward(&img, &txt).unwrap();

    let hi = relu(matvec(&b.image_branch.weights, &b.image_branch.bias, &img));
    let ht = relu(matvec(&b.text_branch.weights, &b.text_branch.bias, &txt));
    let emb: Vec<f64> = hi.into_iter().chain(ht).collect();
    let logits = matvec(&b.classifier.weights, &b.classifier.bias, &emb);
    for (a, o) in e.iter().zip(&emb) {
        assert!((a - o).abs() < 1e-10);
    }
    for (a, o) in l.iter().zip(&logits) {
        assert!((a - o).abs() < 1e-10);
    }
}

/// Cross-entropy via compensated summation of exp(z_i - z_label).
fn ce_oracle(logits: &[f64], label: usize) -> f64 {
    let (mut sum, mut c) = (0.0f64, 0.0f64);
    for z in logits {
        let y = (z - logits[label]).exp() - c;
        let t = sum + y;
        c = (t - sum) - y;
        sum = t;
    }
    sum.ln()
}

#[test]
fn cross_entropy_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200 {
        let logits = randvec(&mut rng, 5, 6.0);
        let label = rng.random_range(0..5);
        assert!((cross_entropy(&logits, label) - ce_oracle(&logits, label)).abs() < 1e-10);
    }
    // Uniform logits give log(n).
    assert!((cross_entropy(&[0.0; 4], 2) - 4f64.ln()).abs() < 1e-15);
    // Large logits stay finite.
    assert!(cross_entropy(&[1000.0, 0.0], 1).is_finite());
    let s = softmax(&[1000.0, 999.0, -5.0]);
    assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn contrastive_loss_formula() {
    let m = 2.0;
    assert_eq!(contrastive_loss(0.0, PairLabel::Compatible, m), 0.0);
    assert_eq!(contrastive_loss(3.0, PairLabel::Incompatible, m), 0.0);
    assert!((contrastive_loss(0.5, PairLabel::Incompatible, m) - 0.5 * 1.5 * 1.5).abs() < 1e-15);
    assert!((contrastive_loss(1.5, PairLabel::Compatible, m) - 0.5 * 2.25).abs() < 1e-15);
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

fn max_grad_error<F>(block: &DeepStyleBlock, analytic: &[f64], loss: F) -> f64
where
    F: Fn(&DeepStyleBlock) -> f64,
{
    let p0 = block.parameters();
    let mut worst = 0.0f64;
    let mut b = block.clone();
    for i in 0..p0.len() {
        let mut p = p0.clone();
        p[i] = p0[i] + EPS;
        b.set_parameters(&p);
        let up = loss(&b);
        p[i] = p0[i] - EPS;
        b.set_parameters(&p);
        let down = loss(&b);
        let numeric = (up - down) / (2.0 * EPS);
        worst = worst.max(rel_err(analytic[i], numeric));
    }
    worst
}

/// Inputs whose pre-activations all sit well away from the ReLU kink, so
/// that finite differences do not straddle it.
fn safe_inputs(block: &DeepStyleBlock, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    loop {
        let img = randvec(rng, block.image_dim(), 1.0);
        let txt = randvec(rng, block.text_dim(), 1.0);
        let p = block.forward_pass(&img, &txt).unwrap();
        if p.image_pre.iter().chain(&p.text_pre).all(|z| z.abs() > 0.02) {
            return (img, txt);
        }
    }
}

#[test]
fn classification_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..20 {
        let block = tiny_block(&mut rng);
        let (img, txt) = safe_inputs(&block, &mut rng);
        let label = rng.random_range(0..block.n_categories());
        let ex = Example { img: &img, txt: &txt, label };
        let mut g = BlockGrads::zeros_like(&block);
        classification_loss(&block, ex, &mut g).unwrap();
        let err = max_grad_error(&block, &g.flatten(), |b| {
            let mut scratch = BlockGrads::zeros_like(b);
            classification_loss(b, ex, &mut scratch).unwrap()
        });
        assert!(err < 1e-4, "relative error {err}");
    }
}

#[test]
fn joint_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mut checked = 0;
    while checked < 20 {
        let block = tiny_block(&mut rng);
        let (li, lt) = safe_inputs(&block, &mut rng);
        let (ri, rt) = safe_inputs(&block, &mut rng);
        let y = if checked % 2 == 0 {
            PairLabel::Compatible
        } else {
            PairLabel::Incompatible
        };
        let n = block.n_categories();
        let pair = PairSample {
            left: Example { img: &li, txt: &lt, label: rng.random_range(0..n) },
            right: Example { img: &ri, txt: &rt, label: rng.random_range(0..n) },
            y,
        };
        let weights = LossWeights {
            margin: rng.random_range(0.5..3.0),
            alpha: rng.random_range(0.1..2.0),
            beta: rng.random_range(0.0..2.0),
            gamma: rng.random_range(0.0..2.0),
        };
        let mut g = BlockGrads::zeros_like(&block);
        let jl = joint_loss(&pair, &block, &weights, &mut g).unwrap();
        // Keep clear of d = 0 and of the hinge at d = m.
        if jl.distance < 0.05 || (jl.distance - weights.margin).abs() < 0.05 {
            continue;
        }
        let err = max_grad_error(&block, &g.flatten(), |b| {
            let mut scratch = BlockGrads::zeros_like(b);
            joint_loss(&pair, b, &weights, &mut scratch).unwrap().total
        });
        assert!(err < 1e-4, "relative error {err}");
        checked += 1;
    }
}

#[test]
fn joint_loss_of_identical_inputs_has_zero_distance() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let block = tiny_block(&mut rng);
    let img = randvec(&mut rng, block.image_dim(), 1.0);
    let txt = randvec(&mut rng, block.text_dim(), 1.0);
    let ex = Example { img: &img, txt: &txt, label: 0 };
    let pair = PairSample { left: ex, right: ex, y: PairLabel::Compatible };
    let w = LossWeights { margin: 1.0, alpha: 1.0, beta: 0.0, gamma: 0.0 };
    let mut g = BlockGrads::zeros_like(&block);
    let jl = joint_loss(&pair, &block, &w, &mut g).unwrap();
    assert_eq!(jl.distance, 0.0);
    assert_eq!(jl.total, 0.0);
    assert!(g.flatten().iter().all(|x| *x == 0.0));
}

fn synthetic_data(seed: u64) -> TrainingData {
    let s = gen_synthetic(120, 3, 30, seed).unwrap();
    let text = train_cbow(
        &description_corpus(&s.catalog),
        &CbowConfig { dim: 16, epochs: 5, seed, ..CbowConfig::text() },
    )
    .unwrap()
    .table;
    let feats = catalog_features(&s.catalog, None).unwrap();
    TrainingData::build(&s.catalog, &feats, &text, None).unwrap()
}

#[test]
fn classifier_loss_decreases() {
    let d = synthetic_data(3);
    let cfg = ClassifierConfig { epochs: 20, branch_dim: 32, seed: 3, ..Default::default() };
    let m = train_classifier(&d, &cfg).unwrap();
    assert_eq!(m.epoch_loss.len(), 20);
    assert!(m.epoch_loss[19] < m.epoch_loss[0], "{:?}", m.epoch_loss);
}

#[test]
fn siamese_loss_non_increasing_early() {
    let d = synthetic_data(4);
    let cfg = SiameseConfig {
        epochs: 5,
        branch_dim: 32,
        learning_rate: 0.01,
        pair_seed: 4,
        ..Default::default()
    };
    let m = train_siamese(&d, &cfg).unwrap();
    for w in m.epoch_loss.windows(2) {
        assert!(w[1] <= w[0], "{:?}", m.epoch_loss);
    }
    let again = train_siamese(&d, &cfg).unwrap();
    assert_eq!(again, m);
}

/// Items of one latent style should cluster in the trained joint space:
/// the nearest other item shares the query's style most of the time.
#[test]
fn siamese_embedding_recovers_planted_styles() {
    let s = gen_synthetic(240, 4, 60, 6).unwrap();
    let text = train_cbow(
        &description_corpus(&s.catalog),
        &CbowConfig { dim: 24, epochs: 10, seed: 6, ..CbowConfig::text() },
    )
    .unwrap()
    .table;
    let feats = catalog_features(&s.catalog, None).unwrap();
    let data = TrainingData::build(&s.catalog, &feats, &text, None).unwrap();
    let cfg = SiameseConfig {
        margin: 2.0,
        beta: 0.1,
        gamma: 0.1,
        pair_seed: 6,
        ..Default::default()
    };
    let top1 = |block: DeepStyleBlock| {
        let idx = JointIndex::build(block, &s.catalog, &feats, text.clone(), Metric::Euclidean, Execution::Auto)
            .unwrap();
        let mut same = 0;
        for it in s.catalog.items() {
            let q = MultimodalQuery::new(feats[&it.id].clone(), it.description.clone()).for_item(&it.id);
            let hit = &idx.retrieve(&q, 1).unwrap().entries[0].id;
            same += usize::from(s.style_of[hit] == s.style_of[&it.id]);
        }
        same as f64 / s.catalog.len() as f64
    };
    let untrained = top1(cfg.initial_block(&data));
    let trained = top1(train_siamese(&data, &cfg).unwrap().block);
    assert!(trained >= 0.7, "trained top-1 same-style rate {trained}");
    assert!(trained > untrained, "trained {trained} vs untrained {untrained}");
}

#[test]
fn siamese_pulls_positives_closer_than_negatives() {
    let d = synthetic_data(8);
    let cfg = SiameseConfig { pair_seed: 8, epochs: 10, branch_dim: 32, ..Default::default() };
    let block = train_siamese(&d, &cfg).unwrap().block;
    let emb: Vec<Vec<f64>> = d.items.iter().map(|it| block.forward(&it.img, &it.txt).unwrap().0).collect();
    let dist = |a: usize, b: usize| -> f64 {
        emb[a].iter().zip(&emb[b]).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
    };
    let pos = d.positive_pairs();
    let linked: std::collections::BTreeSet<(usize, usize)> = pos.iter().copied().collect();
    let pos_mean = pos.iter().map(|&(a, b)| dist(a, b)).sum::<f64>() / pos.len() as f64;
    let mut neg = Vec::new();
    for a in 0..d.len() {
        for b in a + 1..d.len() {
            if !linked.contains(&(a, b)) {
                neg.push(dist(a, b));
            }
        }
    }
    let neg_mean = neg.iter().sum::<f64>() / neg.len() as f64;
    assert!(pos_mean < neg_mean, "positives {pos_mean} negatives {neg_mean}");
}

#[test]
fn classifier_separates_two_linear_classes() {
    use stylesearch_core::catalog::{Catalog, FeatureRef, Item};
    use stylesearch_core::embed::EmbeddingTable;
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let items: Vec<Item> = (0..80)
        .map(|i| {
            let class = i % 2;
            let mut f = randvec(&mut rng, 4, 0.3);
            f[0] += if class == 0 { 1.0 } else { -1.0 };
            Item::new(format!("t{i:02}"), ["left", "right"][class], "thing", "thing", FeatureRef::Inline(f))
        })
        .collect();
    let cat = Catalog::from_parts(vec!["left".into(), "right".into()], 4, items, vec![]).unwrap();
    let table = EmbeddingTable::from_rows(2, vec![("thing".into(), vec![1.0, 0.0])]).unwrap();
    let feats = catalog_features(&cat, None).unwrap();
    let d = TrainingData::build(&cat, &feats, &table, None).unwrap();
    let cfg = ClassifierConfig { epochs: 30, branch_dim: 8, seed: 12, ..Default::default() };
    let block = train_classifier(&d, &cfg).unwrap().block;
    let correct = d
        .items
        .iter()
        .filter(|it| {
            let (_, logits) = block.forward(&it.img, &it.txt).unwrap();
            let best = if logits[0] >= logits[1] { 0 } else { 1 };
            best == it.label
        })
        .count();
    let acc = correct as f64 / d.len() as f64;
    assert!(acc >= 0.95, "training accuracy {acc}");
}

#[test]
fn joint_retrieval_degenerate_and_self_cases() {
    let s = gen_synthetic(30, 3, 6, 2).unwrap();
    let text = train_cbow(
        &description_corpus(&s.catalog),
        &CbowConfig { dim: 8, epochs: 1, ..CbowConfig::text() },
    )
    .unwrap()
    .table;
    let feats = catalog_features(&s.catalog, None).unwrap();
    let cats = s.catalog.categories().to_vec();

    // All-zero block: every embedding is the origin, ties go by id.
    let zero = DeepStyleBlock::zeros(32, 8, 4, cats.clone());
    let idx = JointIndex::build(zero, &s.catalog, &feats, text.clone(), Metric::Euclidean, Execution::Sequential).unwrap();
    let it = s.catalog.item("p0000").unwrap();
    let q = MultimodalQuery::new(feats["p0000"].clone(), it.description.clone()).for_item("p0000");
    let ids: Vec<String> = idx.retrieve(&q, 3).unwrap().entries.into_iter().map(|e| e.id).collect();
    assert_eq!(ids, ["p0001", "p0002", "p0003"]);

    // A random block finds the item itself when it is not excluded.
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let block = DeepStyleBlock::random(32, 8, 16, Activation::Relu, cats, &mut rng);
    let idx = JointIndex::build(block, &s.catalog, &feats, text, Metric::Euclidean, Execution::Sequential).unwrap();
    for it in s.catalog.items() {
        let q = MultimodalQuery::new(feats[&it.id].clone(), it.description.clone());
        assert_eq!(idx.retrieve(&q, 1).unwrap().entries[0].id, it.id);
    }
}
