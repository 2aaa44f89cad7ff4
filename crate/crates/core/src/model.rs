//! The point-cloud classifier: a feature generator (per-point embedding,
//! k-nearest-neighbor grouping, four offset-attention blocks, max pooling)
//! and two task-specific classifier heads over the pooled global feature.
//!
//! Everything here is built on the autodiff graph in [`crate::nn`]; the same
//! builder functions serve training (batch statistics, dropout) and inference
//! (running statistics, deterministic).

use std::path::Path;

use ndarray::{s, Array2, Array3};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{NormalizationStats, PointCloudSample, WindowConfig};
use crate::error::{Error, Result};
use crate::gesture::Gesture;
use crate::nn::{linear_init, BnMode, Graph, NodeId, ParamSet};
use crate::seeds::stream_rng;

pub const GENERATOR: usize = 0;
pub const CLASSIFIER_1: usize = 1;
pub const CLASSIFIER_2: usize = 2;

const BN_MOMENTUM: f64 = 0.1;
const BN_EPS: f64 = 1e-5;

/// How raw attention scores are normalized into weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttentionNorm {
    /// Softmax over the query axis followed by L1 normalization over keys.
    DualNorm,
    /// Conventional softmax over keys, scores scaled by 1/sqrt(d_k).
    ScaledSoftmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub embed_dims: [usize; 2],
    pub knn_k: usize,
    pub neighbor_dim: usize,
    pub attention_dim: usize,
    pub n_attention: usize,
    pub fused_dim: usize,
    pub classifier_dims: [usize; 2],
    pub n_classes: usize,
    pub dropout_rate: f64,
    pub attention_norm: AttentionNorm,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_dim: 12,
            embed_dims: [64, 64],
            knn_k: 4,
            neighbor_dim: 128,
            attention_dim: 128,
            n_attention: 4,
            fused_dim: 1024,
            classifier_dims: [512, 256],
            n_classes: 9,
            dropout_rate: 0.5,
            attention_norm: AttentionNorm::DualNorm,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self, n_points: usize) -> Result<()> {
        if self.knn_k >= n_points {
            return Err(Error::InvalidArgument(format!(
                "knn_k {} must be smaller than the point count {n_points}",
                self.knn_k
            )));
        }
        if self.n_attention != 4 {
            return Err(Error::InvalidArgument(format!(
                "the architecture uses 4 attention blocks, got {}",
                self.n_attention
            )));
        }
        if self.n_classes != 9 {
            return Err(Error::InvalidArgument(format!(
                "expected 9 gesture classes, got {}",
                self.n_classes
            )));
        }
        if self.attention_dim % 4 != 0 {
            return Err(Error::InvalidArgument(
                "attention_dim must be divisible by 4 (query/key width)".into(),
            ));
        }
        Ok(())
    }
}

/// Generator and classifier parameter sets. The two classifiers share shapes
/// but are initialized from different seeds, so their disagreement is nonzero
/// from step zero.
#[derive(Debug, Clone)]
pub struct ModelParameters {
    pub config: ModelConfig,
    pub generator: ParamSet,
    pub classifier1: ParamSet,
    pub classifier2: ParamSet,
}

impl ModelParameters {
    pub fn init(config: &ModelConfig, seed: u64) -> Self {
        let generator = init_generator(config, crate::seeds::derive_seed(seed, 0));
        let classifier1 = init_classifier(config, crate::seeds::derive_seed(seed, 1));
        let classifier2 = init_classifier(config, crate::seeds::derive_seed(seed, 2));
        ModelParameters {
            config: *config,
            generator,
            classifier1,
            classifier2,
        }
    }

    pub fn set(&self, tag: usize) -> &ParamSet {
        match tag {
            GENERATOR => &self.generator,
            CLASSIFIER_1 => &self.classifier1,
            CLASSIFIER_2 => &self.classifier2,
            _ => panic!("unknown parameter set tag {tag}"),
        }
    }

    pub fn set_mut(&mut self, tag: usize) -> &mut ParamSet {
        match tag {
            GENERATOR => &mut self.generator,
            CLASSIFIER_1 => &mut self.classifier1,
            CLASSIFIER_2 => &mut self.classifier2,
            _ => panic!("unknown parameter set tag {tag}"),
        }
    }
}

fn add_linear(
    set: &mut ParamSet,
    rng: &mut ChaCha8Rng,
    prefix: &str,
    fan_in: usize,
    fan_out: usize,
) {
    let (w, b) = linear_init(rng, fan_in, fan_out);
    set.add(&format!("{prefix}.w"), w, true);
    set.add(&format!("{prefix}.b"), b, true);
}

fn add_bn(set: &mut ParamSet, prefix: &str, width: usize) {
    set.add(&format!("{prefix}.bn.gamma"), Array2::ones((1, width)), true);
    set.add(&format!("{prefix}.bn.beta"), Array2::zeros((1, width)), true);
    set.add(&format!("{prefix}.bn.mean"), Array2::zeros((1, width)), false);
    set.add(&format!("{prefix}.bn.var"), Array2::ones((1, width)), false);
}

fn init_generator(cfg: &ModelConfig, seed: u64) -> ParamSet {
    let mut rng = stream_rng(seed, 0x9e0);
    let mut set = ParamSet::new();
    add_linear(&mut set, &mut rng, "embed1", cfg.input_dim, cfg.embed_dims[0]);
    add_bn(&mut set, "embed1", cfg.embed_dims[0]);
    add_linear(&mut set, &mut rng, "embed2", cfg.embed_dims[0], cfg.embed_dims[1]);
    add_bn(&mut set, "embed2", cfg.embed_dims[1]);
    add_linear(&mut set, &mut rng, "nbr", 2 * cfg.embed_dims[1], cfg.neighbor_dim);
    add_bn(&mut set, "nbr", cfg.neighbor_dim);
    let dq = cfg.attention_dim / 4;
    for i in 0..cfg.n_attention {
        let bound = 1.0 / (cfg.attention_dim as f64).sqrt();
        let q = Array2::from_shape_fn((cfg.attention_dim, dq), |_| {
            rand::Rng::random_range(&mut rng, -bound..bound)
        });
        let k = Array2::from_shape_fn((cfg.attention_dim, dq), |_| {
            rand::Rng::random_range(&mut rng, -bound..bound)
        });
        set.add(&format!("att{i}.q.w"), q, true);
        set.add(&format!("att{i}.k.w"), k, true);
        add_linear(&mut set, &mut rng, &format!("att{i}.v"), cfg.attention_dim, cfg.attention_dim);
        add_linear(
            &mut set,
            &mut rng,
            &format!("att{i}.trans"),
            cfg.attention_dim,
            cfg.attention_dim,
        );
        add_bn(&mut set, &format!("att{i}.trans"), cfg.attention_dim);
    }
    add_linear(
        &mut set,
        &mut rng,
        "fuse",
        cfg.n_attention * cfg.attention_dim,
        cfg.fused_dim,
    );
    add_bn(&mut set, "fuse", cfg.fused_dim);
    set
}

fn init_classifier(cfg: &ModelConfig, seed: u64) -> ParamSet {
    let mut rng = stream_rng(seed, 0xc1a);
    let mut set = ParamSet::new();
    add_linear(&mut set, &mut rng, "fc1", cfg.fused_dim, cfg.classifier_dims[0]);
    add_bn(&mut set, "fc1", cfg.classifier_dims[0]);
    add_linear(
        &mut set,
        &mut rng,
        "fc2",
        cfg.classifier_dims[0],
        cfg.classifier_dims[1],
    );
    add_bn(&mut set, "fc2", cfg.classifier_dims[1]);
    add_linear(&mut set, &mut rng, "out", cfg.classifier_dims[1], cfg.n_classes);
    set
}

// ---------------------------------------------------------------------------
// Forward builders
// ---------------------------------------------------------------------------

/// Whether a forward pass uses batch statistics and dropout (training) or
/// running statistics (inference), and whether running buffers may update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Train { update_stats: bool },
    Eval,
}

/// Parameter access for the forward builders: mutable during training (batch
/// norm buffers update), shared for inference.
pub enum Access<'a> {
    Mut(usize, &'a mut ParamSet),
    Ref(usize, &'a ParamSet),
}

impl Access<'_> {
    fn tag(&self) -> usize {
        match self {
            Access::Mut(t, _) => *t,
            Access::Ref(t, _) => *t,
        }
    }

    fn set(&self) -> &ParamSet {
        match self {
            Access::Mut(_, p) => p,
            Access::Ref(_, p) => p,
        }
    }

    fn leaf(&self, g: &mut Graph, name: &str) -> NodeId {
        let set = self.set();
        let idx = set.idx(name);
        g.param(set.value(idx).clone(), (self.tag(), idx))
    }

    fn batch_norm(&mut self, g: &mut Graph, x: NodeId, prefix: &str, phase: Phase) -> NodeId {
        let gamma = self.leaf(g, &format!("{prefix}.bn.gamma"));
        let beta = self.leaf(g, &format!("{prefix}.bn.beta"));
        match phase {
            Phase::Train { update_stats } => {
                let Access::Mut(_, set) = self else {
                    panic!("training forward needs mutable parameter access");
                };
                let mean_idx = set.idx(&format!("{prefix}.bn.mean"));
                let var_idx = set.idx(&format!("{prefix}.bn.var"));
                let (rm, rv) = set.pair_mut(mean_idx, var_idx);
                let mode = if update_stats {
                    BnMode::Train
                } else {
                    BnMode::TrainFrozen
                };
                g.batch_norm(x, gamma, beta, rm, rv, BN_MOMENTUM, BN_EPS, mode)
            }
            Phase::Eval => {
                let set = self.set();
                let rm = set.get(&format!("{prefix}.bn.mean"));
                let rv = set.get(&format!("{prefix}.bn.var"));
                let gv = set.get(&format!("{prefix}.bn.gamma"));
                let bv = set.get(&format!("{prefix}.bn.beta"));
                let cols = rm.ncols();
                let mut scale = vec![0.0; cols];
                let mut shift = vec![0.0; cols];
                for c in 0..cols {
                    let inv = 1.0 / (rv[[0, c]] + BN_EPS).sqrt();
                    scale[c] = gv[[0, c]] * inv;
                    shift[c] = bv[[0, c]] - rm[[0, c]] * scale[c];
                }
                g.col_affine(x, &scale, &shift)
            }
        }
    }

    /// Linear + batch norm + ReLU.
    fn lbr(&mut self, g: &mut Graph, x: NodeId, prefix: &str, phase: Phase) -> NodeId {
        let w = self.leaf(g, &format!("{prefix}.w"));
        let b = self.leaf(g, &format!("{prefix}.b"));
        let h = g.matmul(x, w);
        let h = g.add_row(h, b);
        let h = self.batch_norm(g, h, prefix, phase);
        g.relu(h)
    }
}

/// Stacks samples into the `(batch * n_points, channels)` layout the
/// builders expect.
pub fn stack_batch<'a, I>(samples: I, n_points: usize, channels: usize) -> Array2<f64>
where
    I: IntoIterator<Item = &'a Array2<f64>>,
    I::IntoIter: ExactSizeIterator,
{
    let iter = samples.into_iter();
    let mut out = Array2::zeros((iter.len() * n_points, channels));
    for (i, points) in iter.enumerate() {
        out.slice_mut(s![i * n_points..(i + 1) * n_points, ..])
            .assign(points);
    }
    out
}

/// For each point, the indices of its k nearest neighbors (self excluded) by
/// Euclidean distance within the same sample, in the current feature space.
/// Returned flat: neighbors of global row `r` sit at `r*k ..= r*k+k-1`.
pub fn knn_indices(features: &Array2<f64>, n_points: usize, k: usize) -> Vec<usize> {
    let rows = features.nrows();
    assert_eq!(rows % n_points, 0);
    let batches = rows / n_points;
    let mut out = Vec::with_capacity(rows * k);
    let mut dists: Vec<(f64, usize)> = Vec::with_capacity(n_points - 1);
    for b in 0..batches {
        let block = features.slice(s![b * n_points..(b + 1) * n_points, ..]);
        for i in 0..n_points {
            dists.clear();
            for j in 0..n_points {
                if j == i {
                    continue;
                }
                let mut d = 0.0;
                for c in 0..block.ncols() {
                    let diff = block[[i, c]] - block[[j, c]];
                    d += diff * diff;
                }
                dists.push((d, j));
            }
            dists.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            for &(_, j) in dists.iter().take(k) {
                out.push(b * n_points + j);
            }
        }
    }
    out
}

/// Groups each point with its k nearest neighbors: output `(n, k, 2c)` where
/// entry `(i, j)` is the concatenation of `(neighbor - center, center)`.
pub fn knn_group(features: &Array2<f64>, k: usize) -> Result<Array3<f64>> {
    let (n, c) = features.dim();
    if k >= n {
        return Err(Error::InvalidArgument(format!(
            "knn k {k} must be smaller than the point count {n}"
        )));
    }
    let idx = knn_indices(features, n, k);
    let mut out = Array3::zeros((n, k, 2 * c));
    for i in 0..n {
        for j in 0..k {
            let nbr = idx[i * k + j];
            for ch in 0..c {
                out[[i, j, ch]] = features[[nbr, ch]] - features[[i, ch]];
                out[[i, j, c + ch]] = features[[i, ch]];
            }
        }
    }
    Ok(out)
}

/// One offset-attention block: residual output
/// `LBR(x - attention(x)) + x`, shape preserved.
pub fn offset_attention(
    g: &mut Graph,
    access: &mut Access,
    cfg: &ModelConfig,
    x: NodeId,
    block: usize,
    n_points: usize,
    phase: Phase,
) -> NodeId {
    let prefix = format!("att{block}");
    let wq = access.leaf(g, &format!("{prefix}.q.w"));
    let wk = access.leaf(g, &format!("{prefix}.k.w"));
    let wv = access.leaf(g, &format!("{prefix}.v.w"));
    let bv = access.leaf(g, &format!("{prefix}.v.b"));

    let q = g.matmul(x, wq);
    let k = g.matmul(x, wk);
    let v = g.matmul(x, wv);
    let v = g.add_row(v, bv);

    let scores = g.per_sample_matmul_nt(q, k, n_points);
    let weights = match cfg.attention_norm {
        AttentionNorm::DualNorm => g.dual_norm(scores, n_points),
        AttentionNorm::ScaledSoftmax => {
            let dq = cfg.attention_dim / 4;
            g.row_softmax(scores, n_points, 1.0 / (dq as f64).sqrt())
        }
    };
    let attended = g.per_sample_matmul(weights, v, n_points);

    let offset = g.sub(x, attended);
    let transformed = access.lbr(g, offset, &format!("{prefix}.trans"), phase);
    g.add(transformed, x)
}

/// The full generator: per-point embedding, neighbor grouping, four
/// offset-attention blocks, feature fusion and max pooling into one global
/// feature per sample. Input `(batch * n_points, input_dim)`, output
/// `(batch, fused_dim)`.
pub fn encode_batch(
    g: &mut Graph,
    access: &mut Access,
    cfg: &ModelConfig,
    x: NodeId,
    n_points: usize,
    phase: Phase,
) -> NodeId {
    let h = access.lbr(g, x, "embed1", phase);
    let h = access.lbr(g, h, "embed2", phase);

    // Neighbor embedding: group in the current feature space, run a shared
    // per-neighbor LBR, then max over the k neighbors.
    let idx = knn_indices(g.value(h), n_points, cfg.knn_k);
    let neighbors = g.gather_rows(h, &idx);
    let centers = g.repeat_rows(h, cfg.knn_k);
    let diff = g.sub(neighbors, centers);
    let grouped = g.concat_cols(&[diff, centers]);
    let grouped = access.lbr(g, grouped, "nbr", phase);
    let h = g.max_pool_rows(grouped, cfg.knn_k);

    let mut att_outputs = Vec::with_capacity(cfg.n_attention);
    let mut current = h;
    for i in 0..cfg.n_attention {
        current = offset_attention(g, access, cfg, current, i, n_points, phase);
        att_outputs.push(current);
    }
    let cat = g.concat_cols(&att_outputs);
    let fused = access.lbr(g, cat, "fuse", phase);
    g.max_pool_rows(fused, n_points)
}

/// Classifier head: two LBRD stages then an affine map to class scores.
/// Input `(batch, fused_dim)`, output `(batch, n_classes)` raw logits.
pub fn classify_batch(
    g: &mut Graph,
    access: &mut Access,
    cfg: &ModelConfig,
    features: NodeId,
    phase: Phase,
    rng: &mut ChaCha8Rng,
) -> NodeId {
    let train = matches!(phase, Phase::Train { .. });
    let h = access.lbr(g, features, "fc1", phase);
    let h = if train {
        g.dropout(h, cfg.dropout_rate, rng)
    } else {
        h
    };
    let h = access.lbr(g, h, "fc2", phase);
    let h = if train {
        g.dropout(h, cfg.dropout_rate, rng)
    } else {
        h
    };
    let w = access.leaf(g, "out.w");
    let b = access.leaf(g, "out.b");
    let h = g.matmul(h, w);
    g.add_row(h, b)
}

// ---------------------------------------------------------------------------
// Inference
// ---------------------------------------------------------------------------

pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.iter().map(|e| e / sum).collect()
}

/// Deterministic evaluation-mode forward of a batch of normalized samples.
/// Returns per-sample (predicted gesture, averaged class probabilities).
pub fn predict_batch(
    params: &ModelParameters,
    points: &[&Array2<f64>],
) -> Result<Vec<(Gesture, Vec<f64>)>> {
    if points.is_empty() {
        return Err(Error::EmptyInput("prediction batch"));
    }
    let n_points = points[0].nrows();
    let channels = points[0].ncols();
    let cfg = &params.config;
    cfg.validate(n_points)?;
    for p in points {
        if p.nrows() != n_points || p.ncols() != cfg.input_dim {
            return Err(Error::ShapeMismatch {
                expected: format!("{n_points} x {}", cfg.input_dim),
                got: format!("{} x {}", p.nrows(), p.ncols()),
            });
        }
    }

    let mut g = Graph::new();
    let x = g.input(stack_batch(points.iter().copied(), n_points, channels));
    let mut gen_access = Access::Ref(GENERATOR, &params.generator);
    let feat = encode_batch(&mut g, &mut gen_access, cfg, x, n_points, Phase::Eval);

    let mut rng = stream_rng(0, 0);
    let mut c1 = Access::Ref(CLASSIFIER_1, &params.classifier1);
    let logits1 = classify_batch(&mut g, &mut c1, cfg, feat, Phase::Eval, &mut rng);
    let mut c2 = Access::Ref(CLASSIFIER_2, &params.classifier2);
    let logits2 = classify_batch(&mut g, &mut c2, cfg, feat, Phase::Eval, &mut rng);

    let l1 = g.value(logits1);
    let l2 = g.value(logits2);
    let mut out = Vec::with_capacity(points.len());
    for r in 0..points.len() {
        let p1 = softmax(l1.row(r).as_slice().unwrap());
        let p2 = softmax(l2.row(r).as_slice().unwrap());
        let probs: Vec<f64> = p1.iter().zip(&p2).map(|(a, b)| 0.5 * (a + b)).collect();
        let label = argmax(&probs);
        out.push((Gesture::from_index(label).unwrap(), probs));
    }
    Ok(out)
}

/// Single-sample convenience wrapper around [`predict_batch`].
pub fn predict(params: &ModelParameters, sample: &PointCloudSample) -> Result<(Gesture, Vec<f64>)> {
    Ok(predict_batch(params, &[&sample.points])?.remove(0))
}

/// Raw evaluation-mode logits of both classifiers (diagnostics and tests).
pub fn eval_logits(params: &ModelParameters, points: &Array2<f64>) -> Result<(Vec<f64>, Vec<f64>)> {
    let n_points = points.nrows();
    let cfg = &params.config;
    cfg.validate(n_points)?;
    let mut g = Graph::new();
    let x = g.input(points.clone());
    let mut gen_access = Access::Ref(GENERATOR, &params.generator);
    let feat = encode_batch(&mut g, &mut gen_access, cfg, x, n_points, Phase::Eval);
    let mut rng = stream_rng(0, 0);
    let mut c1 = Access::Ref(CLASSIFIER_1, &params.classifier1);
    let l1 = classify_batch(&mut g, &mut c1, cfg, feat, Phase::Eval, &mut rng);
    let mut c2 = Access::Ref(CLASSIFIER_2, &params.classifier2);
    let l2 = classify_batch(&mut g, &mut c2, cfg, feat, Phase::Eval, &mut rng);
    Ok((g.value(l1).row(0).to_vec(), g.value(l2).row(0).to_vec()))
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in xs.iter().enumerate() {
        if *v > xs[best] {
            best = i;
        }
    }
    best
}

/// The global feature for one normalized sample, evaluation mode.
pub fn encode_single(params: &ModelParameters, points: &Array2<f64>) -> Result<Vec<f64>> {
    let n_points = points.nrows();
    params.config.validate(n_points)?;
    let mut g = Graph::new();
    let x = g.input(points.clone());
    let mut access = Access::Ref(GENERATOR, &params.generator);
    let feat = encode_batch(&mut g, &mut access, &params.config, x, n_points, Phase::Eval);
    Ok(g.value(feat).row(0).to_vec())
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub trainable: bool,
    pub data: Vec<f64>,
}

/// Self-describing model archive: configuration, label vocabulary,
/// normalization statistics, window geometry and every parameter tensor.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: ModelConfig,
    pub window: WindowConfig,
    pub labels: Vec<String>,
    pub stats: NormalizationStats,
    pub generator: Vec<NamedTensor>,
    pub classifier1: Vec<NamedTensor>,
    pub classifier2: Vec<NamedTensor>,
}

fn set_to_tensors(set: &ParamSet) -> Vec<NamedTensor> {
    (0..set.len())
        .map(|i| {
            let v = set.value(i);
            NamedTensor {
                name: set.name(i).to_string(),
                rows: v.nrows(),
                cols: v.ncols(),
                trainable: set.is_trainable(i),
                data: v.iter().copied().collect(),
            }
        })
        .collect()
}

fn tensors_to_set(tensors: &[NamedTensor]) -> Result<ParamSet> {
    let mut set = ParamSet::new();
    for t in tensors {
        if t.data.len() != t.rows * t.cols {
            return Err(Error::CheckpointFormat(format!(
                "tensor {} claims {}x{} but has {} values",
                t.name,
                t.rows,
                t.cols,
                t.data.len()
            )));
        }
        let arr = Array2::from_shape_vec((t.rows, t.cols), t.data.clone())
            .map_err(|e| Error::CheckpointFormat(e.to_string()))?;
        set.add(&t.name, arr, t.trainable);
    }
    Ok(set)
}

impl Checkpoint {
    pub fn from_parameters(
        params: &ModelParameters,
        window: WindowConfig,
        stats: NormalizationStats,
    ) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config: params.config,
            window,
            labels: Gesture::vocabulary(),
            stats,
            generator: set_to_tensors(&params.generator),
            classifier1: set_to_tensors(&params.classifier1),
            classifier2: set_to_tensors(&params.classifier2),
        }
    }

    pub fn to_parameters(&self) -> Result<ModelParameters> {
        Ok(ModelParameters {
            config: self.config,
            generator: tensors_to_set(&self.generator)?,
            classifier1: tensors_to_set(&self.classifier1)?,
            classifier2: tensors_to_set(&self.classifier2)?,
        })
    }

    /// Atomic save: write to a temporary sibling, then rename into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, serde_json::to_vec(self)?)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let bytes = std::fs::read(path)?;
        let ckpt: Checkpoint =
            serde_json::from_slice(&bytes).map_err(|e| Error::CheckpointFormat(e.to_string()))?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::CheckpointFormat(format!(
                "unsupported checkpoint version {}",
                ckpt.version
            )));
        }
        Ok(ckpt)
    }
}
