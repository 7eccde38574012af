//! Joint image-text network and its siamese extension.
//!
//! The block compresses image features and a text vector through two dense
//! ReLU branches, concatenates them into the joint embedding and predicts the
//! item category from it. The siamese variant runs two inputs through the same
//! block and adds a contrastive term on the pair of joint embeddings.

mod retrieve;
mod train;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::embed::{embed_text, EmbeddingTable};
use crate::error::{Error, Result};

pub use retrieve::{JointIndex, JointMetric};
pub use train::{
    sample_pairs, train_classifier, train_siamese, ClassifierConfig, DeepStyleModel, ModelKind,
    SiameseConfig, TrainingData, TrainingEcho, TrainingItem,
};

/// Width of each branch; the joint embedding is twice this.
pub const BRANCH_DIM: usize = 128;

/// Text input of the joint network: the description embedding scaled to unit
/// length, so that one-word queries and long descriptions enter the text
/// branch at the same scale as the unit-norm image features. `None` when no
/// token is in the table or the mean vector is zero.
pub fn text_input(text: &str, table: &EmbeddingTable) -> Option<Vec<f64>> {
    let v = embed_text(text, table)?;
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    (norm > 0.0 && norm.is_finite()).then(|| v.into_iter().map(|x| x / norm).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Fully connected layer; `weights` is `outputs x inputs`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        DenseLayer {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
            activation,
        }
    }

    /// He-normal weights for ReLU layers, Glorot-style otherwise; zero bias.
    pub fn random<R: Rng>(inputs: usize, outputs: usize, activation: Activation, rng: &mut R) -> Self {
        let std = match activation {
            Activation::Relu => (2.0 / inputs as f64).sqrt(),
            Activation::Identity => (1.0 / inputs as f64).sqrt(),
        };
        let normal = Normal::new(0.0, std).expect("finite std");
        DenseLayer {
            inputs,
            outputs,
            weights: (0..inputs * outputs).map(|_| normal.sample(rng)).collect(),
            bias: vec![0.0; outputs],
            activation,
        }
    }

    pub fn pre_activation(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.inputs);
        self.weights
            .chunks_exact(self.inputs)
            .zip(&self.bias)
            .map(|(row, b)| b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            .collect()
    }

    fn check(&self) -> bool {
        self.weights.len() == self.inputs * self.outputs
            && self.bias.len() == self.outputs
            && self.weights.iter().chain(&self.bias).all(|x| x.is_finite())
    }
}

/// Shared joint image-text block: two compressing branches and a classifier
/// on their concatenation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeepStyleBlock {
    pub image_branch: DenseLayer,
    pub text_branch: DenseLayer,
    pub classifier: DenseLayer,
    pub categories: Vec<String>,
}

/// Intermediate values of one forward pass, kept for backpropagation.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardPass {
    pub image_pre: Vec<f64>,
    pub text_pre: Vec<f64>,
    pub embedding: Vec<f64>,
    pub logits: Vec<f64>,
}

impl DeepStyleBlock {
    pub fn zeros(d_img: usize, d_txt: usize, branch_dim: usize, categories: Vec<String>) -> Self {
        let n = categories.len();
        DeepStyleBlock {
            image_branch: DenseLayer::zeros(d_img, branch_dim, Activation::Relu),
            text_branch: DenseLayer::zeros(d_txt, branch_dim, Activation::Relu),
            classifier: DenseLayer::zeros(2 * branch_dim, n, Activation::Identity),
            categories,
        }
    }

    pub fn random<R: Rng>(
        d_img: usize,
        d_txt: usize,
        branch_dim: usize,
        activation: Activation,
        categories: Vec<String>,
        rng: &mut R,
    ) -> Self {
        let n = categories.len();
        DeepStyleBlock {
            image_branch: DenseLayer::random(d_img, branch_dim, activation, rng),
            text_branch: DenseLayer::random(d_txt, branch_dim, activation, rng),
            classifier: DenseLayer::random(2 * branch_dim, n, Activation::Identity, rng),
            categories,
        }
    }

    pub fn image_dim(&self) -> usize {
        self.image_branch.inputs
    }

    pub fn text_dim(&self) -> usize {
        self.text_branch.inputs
    }

    pub fn embedding_dim(&self) -> usize {
        self.image_branch.outputs + self.text_branch.outputs
    }

    pub fn n_categories(&self) -> usize {
        self.classifier.outputs
    }

    pub fn validate(&self) -> Result<()> {
        let shapes_ok = self.image_branch.check()
            && self.text_branch.check()
            && self.classifier.check()
            && self.classifier.inputs == self.embedding_dim()
            && self.classifier.outputs == self.categories.len();
        if shapes_ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(
                "inconsistent or non-finite block parameters".into(),
            ))
        }
    }

    fn check_inputs(&self, img: &[f64], txt: &[f64]) -> Result<()> {
        if img.len() != self.image_dim() {
            return Err(Error::DimensionMismatch {
                id: Some("image input".into()),
                expected: self.image_dim(),
                found: img.len(),
            });
        }
        if txt.len() != self.text_dim() {
            return Err(Error::DimensionMismatch {
                id: Some("text input".into()),
                expected: self.text_dim(),
                found: txt.len(),
            });
        }
        Ok(())
    }

    pub fn forward_pass(&self, img: &[f64], txt: &[f64]) -> Result<ForwardPass> {
        self.check_inputs(img, txt)?;
        let image_pre = self.image_branch.pre_activation(img);
        let text_pre = self.text_branch.pre_activation(txt);
        let act_i = self.image_branch.activation;
        let act_t = self.text_branch.activation;
        let embedding: Vec<f64> = image_pre
            .iter()
            .map(|&z| act_i.apply(z))
            .chain(text_pre.iter().map(|&z| act_t.apply(z)))
            .collect();
        let logits = self.classifier.pre_activation(&embedding);
        Ok(ForwardPass {
            image_pre,
            text_pre,
            embedding,
            logits,
        })
    }

    /// Joint embedding and class logits.
    pub fn forward(&self, img: &[f64], txt: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let p = self.forward_pass(img, txt)?;
        Ok((p.embedding, p.logits))
    }

    /// All parameters in a fixed order: image W, b; text W, b; classifier W, b.
    pub fn parameters(&self) -> Vec<f64> {
        [&self.image_branch, &self.text_branch, &self.classifier]
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }

    pub fn set_parameters(&mut self, values: &[f64]) {
        let mut it = values.iter().copied();
        for l in [
            &mut self.image_branch,
            &mut self.text_branch,
            &mut self.classifier,
        ] {
            for w in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *w = it.next().expect("parameter vector too short");
            }
        }
        assert!(it.next().is_none(), "parameter vector too long");
    }

    fn layers_mut(&mut self) -> [&mut DenseLayer; 3] {
        [
            &mut self.image_branch,
            &mut self.text_branch,
            &mut self.classifier,
        ]
    }
}

/// Gradient buffers shaped like a [`DeepStyleBlock`].
#[derive(Debug, Clone, PartialEq)]
pub struct BlockGrads {
    layers: [(Vec<f64>, Vec<f64>); 3],
}

impl BlockGrads {
    pub fn zeros_like(block: &DeepStyleBlock) -> Self {
        let z = |l: &DenseLayer| (vec![0.0; l.weights.len()], vec![0.0; l.bias.len()]);
        BlockGrads {
            layers: [
                z(&block.image_branch),
                z(&block.text_branch),
                z(&block.classifier),
            ],
        }
    }

    /// Same ordering as [`DeepStyleBlock::parameters`].
    pub fn flatten(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|(w, b)| w.iter().chain(b).copied())
            .collect()
    }

    pub fn add_scaled(&mut self, other: &BlockGrads, scale: f64) {
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            w.iter_mut().zip(ow).for_each(|(x, y)| *x += scale * y);
            b.iter_mut().zip(ob).for_each(|(x, y)| *x += scale * y);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for (w, b) in self.layers.iter_mut() {
            w.iter_mut().chain(b.iter_mut()).for_each(|x| *x *= s);
        }
    }

    pub(crate) fn reset(&mut self) {
        for (w, b) in self.layers.iter_mut() {
            w.iter_mut().chain(b.iter_mut()).for_each(|x| *x = 0.0);
        }
    }

    /// Accumulates the gradient reaching one forward pass, given the loss
    /// gradient at the joint embedding and, optionally, at the logits.
    fn backprop(
        &mut self,
        block: &DeepStyleBlock,
        img: &[f64],
        txt: &[f64],
        pass: &ForwardPass,
        d_embedding: Option<&[f64]>,
        d_logits: Option<&[f64]>,
    ) {
        let emb_dim = block.embedding_dim();
        let mut de = match d_embedding {
            Some(d) => d.to_vec(),
            None => vec![0.0; emb_dim],
        };
        if let Some(dl) = d_logits {
            let (gw, gb) = &mut self.layers[2];
            let cls = &block.classifier;
            for (o, &g) in dl.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                gb[o] += g;
                let row = &mut gw[o * cls.inputs..(o + 1) * cls.inputs];
                let wrow = &cls.weights[o * cls.inputs..(o + 1) * cls.inputs];
                for j in 0..cls.inputs {
                    row[j] += g * pass.embedding[j];
                    de[j] += g * wrow[j];
                }
            }
        }
        let split = block.image_branch.outputs;
        let branches = [
            (0usize, &block.image_branch, &pass.image_pre, img, &de[..split]),
            (1usize, &block.text_branch, &pass.text_pre, txt, &de[split..]),
        ];
        for (slot, layer, pre, x, d) in branches {
            let (gw, gb) = &mut self.layers[slot];
            for (o, (&g, &z)) in d.iter().zip(pre.iter()).enumerate() {
                let dz = g * layer.activation.derivative(z);
                if dz == 0.0 {
                    continue;
                }
                gb[o] += dz;
                let row = &mut gw[o * layer.inputs..(o + 1) * layer.inputs];
                row.iter_mut().zip(x).for_each(|(w, v)| *w += dz * v);
            }
        }
    }
}

impl DeepStyleBlock {
    /// Plain SGD step (`momentum` = 0) or heavy-ball momentum with `velocity`.
    pub fn sgd_step(&mut self, grads: &BlockGrads, lr: f64, momentum: f64, velocity: &mut BlockGrads) {
        for (layer, ((gw, gb), (vw, vb))) in self
            .layers_mut()
            .into_iter()
            .zip(grads.layers.iter().zip(velocity.layers.iter_mut()))
        {
            for ((w, g), v) in layer.weights.iter_mut().zip(gw).zip(vw.iter_mut()) {
                *v = momentum * *v + g;
                *w -= lr * *v;
            }
            for ((b, g), v) in layer.bias.iter_mut().zip(gb).zip(vb.iter_mut()) {
                *v = momentum * *v + g;
                *b -= lr * *v;
            }
        }
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `-log softmax(logits)[label]`, stabilised by subtracting the max logit.
pub fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    lse - logits[label]
}

/// Whether a pair comes from the same compatible set (`y = 0`) or not (`y = 1`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PairLabel {
    Compatible,
    Incompatible,
}

impl PairLabel {
    pub fn y(self) -> f64 {
        match self {
            PairLabel::Compatible => 0.0,
            PairLabel::Incompatible => 1.0,
        }
    }
}

/// `(1-y)·½d² + y·½·max(0, m-d)²`.
pub fn contrastive_loss(d: f64, y: PairLabel, margin: f64) -> f64 {
    match y {
        PairLabel::Compatible => 0.5 * d * d,
        PairLabel::Incompatible => {
            let h = (margin - d).max(0.0);
            0.5 * h * h
        }
    }
}

fn contrastive_derivative(d: f64, y: PairLabel, margin: f64) -> f64 {
    match y {
        PairLabel::Compatible => d,
        PairLabel::Incompatible => -(margin - d).max(0.0),
    }
}

/// One side of a training pair.
#[derive(Debug, Clone, Copy)]
pub struct Example<'a> {
    pub img: &'a [f64],
    pub txt: &'a [f64],
    pub label: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct PairSample<'a> {
    pub left: Example<'a>,
    pub right: Example<'a>,
    pub y: PairLabel,
}

/// Loss weights and margin of the siamese objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub margin: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            margin: 1.0,
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.margin, self.alpha, self.beta, self.gamma]
            .iter()
            .all(|x| x.is_finite());
        if !finite || self.margin <= 0.0 {
            return Err(Error::InvalidParameter("margin must be positive".into()));
        }
        if self.alpha < 0.0 || self.beta < 0.0 || self.gamma < 0.0 {
            return Err(Error::InvalidParameter("loss weights must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointLoss {
    pub total: f64,
    pub contrastive: f64,
    pub left_ce: f64,
    pub right_ce: f64,
    pub distance: f64,
}

/// Cross-entropy of one example and its gradient, accumulated into `grads`.
pub fn classification_loss(
    block: &DeepStyleBlock,
    ex: Example<'_>,
    grads: &mut BlockGrads,
) -> Result<f64> {
    check_label(block, ex.label)?;
    let pass = block.forward_pass(ex.img, ex.txt)?;
    let loss = cross_entropy(&pass.logits, ex.label);
    let mut d = softmax(&pass.logits);
    d[ex.label] -= 1.0;
    grads.backprop(block, ex.img, ex.txt, &pass, None, Some(&d));
    Ok(loss)
}

fn check_label(block: &DeepStyleBlock, label: usize) -> Result<()> {
    if label >= block.n_categories() {
        return Err(Error::InvalidParameter(format!(
            "label {label} outside {} categories",
            block.n_categories()
        )));
    }
    Ok(())
}

/// Weighted siamese objective `α·L_C + β·L_X(left) + γ·L_X(right)` on a pair
/// passed through the same block. Gradients of both passes accumulate into
/// `grads`; terms with zero weight are skipped entirely.
pub fn joint_loss(
    pair: &PairSample<'_>,
    block: &DeepStyleBlock,
    weights: &LossWeights,
    grads: &mut BlockGrads,
) -> Result<JointLoss> {
    check_label(block, pair.left.label)?;
    check_label(block, pair.right.label)?;
    let lp = block.forward_pass(pair.left.img, pair.left.txt)?;
    let rp = block.forward_pass(pair.right.img, pair.right.txt)?;
    let diff: Vec<f64> = lp
        .embedding
        .iter()
        .zip(&rp.embedding)
        .map(|(a, b)| a - b)
        .collect();
    let d = diff.iter().map(|x| x * x).sum::<f64>().sqrt();
    let contrastive = contrastive_loss(d, pair.y, weights.margin);
    let left_ce = cross_entropy(&lp.logits, pair.left.label);
    let right_ce = cross_entropy(&rp.logits, pair.right.label);
    let total = weights.alpha * contrastive + weights.beta * left_ce + weights.gamma * right_ce;

    let (de_left, de_right) = if weights.alpha != 0.0 && d > 0.0 {
        let g = weights.alpha * contrastive_derivative(d, pair.y, weights.margin) / d;
        let left: Vec<f64> = diff.iter().map(|x| g * x).collect();
        let right: Vec<f64> = left.iter().map(|x| -x).collect();
        (Some(left), Some(right))
    } else {
        (None, None)
    };
    let ce_grad = |logits: &[f64], label: usize, w: f64| {
        (w != 0.0).then(|| {
            let mut s = softmax(logits);
            s[label] -= 1.0;
            s.iter_mut().for_each(|x| *x *= w);
            s
        })
    };
    let dl_left = ce_grad(&lp.logits, pair.left.label, weights.beta);
    let dl_right = ce_grad(&rp.logits, pair.right.label, weights.gamma);
    if de_left.is_some() || dl_left.is_some() {
        grads.backprop(
            block,
            pair.left.img,
            pair.left.txt,
            &lp,
            de_left.as_deref(),
            dl_left.as_deref(),
        );
    }
    if de_right.is_some() || dl_right.is_some() {
        grads.backprop(
            block,
            pair.right.img,
            pair.right.txt,
            &rp,
            de_right.as_deref(),
            dl_right.as_deref(),
        );
    }
    Ok(JointLoss {
        total,
        contrastive,
        left_ce,
        right_ce,
        distance: d,
    })
}
