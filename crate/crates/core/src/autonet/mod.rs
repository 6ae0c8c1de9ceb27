//! The temporal CNN: per-channel two-stage univariate convolutional
//! extractors (conv -> tanh -> dropout -> max-pool, twice), a flattening
//! concatenation, a ReLU hidden layer with dropout, and one sigmoid output
//! head per task. Training gradients come from the hand-written backward
//! pass in this module, verified against central finite differences.

mod checkpoint;
mod model;
pub mod ops;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use model::{backward, forward, grad_check, grad_check_detailed, GradCheck, Mode};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub filters: usize,
    pub width: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolSpec {
    pub width: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_channels: usize,
    pub t_days: usize,
    pub conv1: ConvSpec,
    pub conv2: ConvSpec,
    pub pool: PoolSpec,
    pub dropout_p: f64,
    pub hidden: usize,
    pub n_tasks: usize,
    /// When true, all channels share one extractor's weights. Off by default:
    /// each univariate sequence gets its own two-stage extractor.
    pub share_extractors: bool,
}

/// Sequence lengths after each stage: conv1 -> pool -> conv2 -> pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageLengths {
    pub l1: usize,
    pub p1: usize,
    pub l2: usize,
    pub p2: usize,
}

impl ModelConfig {
    /// The published architecture: 8 and 4 filters with kernel widths 7 and 5,
    /// stride 2, max pooling 2/2, 300 hidden units, dropout 0.5.
    pub fn paper_defaults(n_channels: usize, t_days: usize, n_tasks: usize) -> Self {
        Self {
            n_channels,
            t_days,
            conv1: ConvSpec { filters: 8, width: 7, stride: 2 },
            conv2: ConvSpec { filters: 4, width: 5, stride: 2 },
            pool: PoolSpec { width: 2, stride: 2 },
            dropout_p: 0.5,
            hidden: 300,
            n_tasks,
            share_extractors: false,
        }
    }

    pub fn stage_lengths(&self) -> Result<StageLengths> {
        let step = |l: usize, w: usize, s: usize, what: &str| -> Result<usize> {
            if l < w || s == 0 {
                return Err(Error::InvalidConfig(format!(
                    "{what}: input length {l} shorter than width {w}"
                )));
            }
            Ok((l - w) / s + 1)
        };
        let l1 = step(self.t_days, self.conv1.width, self.conv1.stride, "conv1")?;
        let p1 = step(l1, self.pool.width, self.pool.stride, "pool1")?;
        let l2 = step(p1, self.conv2.width, self.conv2.stride, "conv2")?;
        let p2 = step(l2, self.pool.width, self.pool.stride, "pool2")?;
        Ok(StageLengths { l1, p1, l2, p2 })
    }

    /// Flattened length fed to the hidden layer: n_channels x conv2.filters x P2.
    pub fn flatten_len(&self) -> Result<usize> {
        Ok(self.n_channels * self.conv2.filters * self.stage_lengths()?.p2)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_channels == 0 || self.n_tasks == 0 || self.hidden == 0 {
            return Err(Error::InvalidConfig(
                "n_channels, n_tasks, and hidden must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::InvalidConfig(format!(
                "dropout_p {} outside [0, 1)",
                self.dropout_p
            )));
        }
        self.stage_lengths()?;
        Ok(())
    }

    fn n_extractors(&self) -> usize {
        if self.share_extractors { 1 } else { self.n_channels }
    }
}

/// All weights and biases, stored as one flat vector with a fixed layout:
/// per extractor (conv1 w, conv1 b, conv2 w, conv2 b), then the hidden dense
/// layer (w, b), then per task (head w, head b). The flat form makes the
/// optimizer, checkpointing, and finite-difference checks uniform.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub data: Vec<f64>,
    layout: Layout,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Layout {
    n_extractors: usize,
    conv1_w: usize,
    conv1_b: usize,
    conv2_w: usize,
    conv2_b: usize,
    extractor: usize,
    dense_w: usize,
    dense_b: usize,
    head_w: usize,
    n_tasks: usize,
    total: usize,
}

impl Layout {
    fn from_config(cfg: &ModelConfig) -> Result<Self> {
        let conv1_w = cfg.conv1.filters * cfg.conv1.width;
        let conv1_b = cfg.conv1.filters;
        let conv2_w = cfg.conv2.filters * cfg.conv1.filters * cfg.conv2.width;
        let conv2_b = cfg.conv2.filters;
        let extractor = conv1_w + conv1_b + conv2_w + conv2_b;
        let flatten = cfg.flatten_len()?;
        let dense_w = cfg.hidden * flatten;
        let dense_b = cfg.hidden;
        let head_w = cfg.hidden;
        let n_extractors = cfg.n_extractors();
        let total =
            n_extractors * extractor + dense_w + dense_b + cfg.n_tasks * (head_w + 1);
        Ok(Self {
            n_extractors,
            conv1_w,
            conv1_b,
            conv2_w,
            conv2_b,
            extractor,
            dense_w,
            dense_b,
            head_w,
            n_tasks: cfg.n_tasks,
            total,
        })
    }
}

impl ModelParams {
    pub fn zeros(cfg: &ModelConfig) -> Result<Self> {
        let layout = Layout::from_config(cfg)?;
        Ok(Self {
            data: vec![0.0; layout.total],
            layout,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            data: vec![0.0; self.data.len()],
            layout: self.layout,
        }
    }

    pub fn n_params(&self) -> usize {
        self.data.len()
    }

    /// Extractor index serving channel `k`.
    pub fn extractor_for(&self, channel: usize) -> usize {
        if self.layout.n_extractors == 1 { 0 } else { channel }
    }

    pub fn conv1_w_range(&self, ex: usize) -> std::ops::Range<usize> {
        let base = ex * self.layout.extractor;
        base..base + self.layout.conv1_w
    }

    pub fn conv1_b_range(&self, ex: usize) -> std::ops::Range<usize> {
        let base = ex * self.layout.extractor + self.layout.conv1_w;
        base..base + self.layout.conv1_b
    }

    pub fn conv2_w_range(&self, ex: usize) -> std::ops::Range<usize> {
        let base = ex * self.layout.extractor + self.layout.conv1_w + self.layout.conv1_b;
        base..base + self.layout.conv2_w
    }

    pub fn conv2_b_range(&self, ex: usize) -> std::ops::Range<usize> {
        let base = ex * self.layout.extractor
            + self.layout.conv1_w
            + self.layout.conv1_b
            + self.layout.conv2_w;
        base..base + self.layout.conv2_b
    }

    pub fn dense_w_range(&self) -> std::ops::Range<usize> {
        let base = self.layout.n_extractors * self.layout.extractor;
        base..base + self.layout.dense_w
    }

    pub fn dense_b_range(&self) -> std::ops::Range<usize> {
        let base = self.layout.n_extractors * self.layout.extractor + self.layout.dense_w;
        base..base + self.layout.dense_b
    }

    pub fn head_w_range(&self, task: usize) -> std::ops::Range<usize> {
        let base = self.layout.n_extractors * self.layout.extractor
            + self.layout.dense_w
            + self.layout.dense_b
            + task * (self.layout.head_w + 1);
        base..base + self.layout.head_w
    }

    pub fn head_b_index(&self, task: usize) -> usize {
        self.head_w_range(task).end
    }

    pub fn conv1_w(&self, ex: usize) -> &[f64] {
        &self.data[self.conv1_w_range(ex)]
    }
    pub fn conv1_b(&self, ex: usize) -> &[f64] {
        &self.data[self.conv1_b_range(ex)]
    }
    pub fn conv2_w(&self, ex: usize) -> &[f64] {
        &self.data[self.conv2_w_range(ex)]
    }
    pub fn conv2_b(&self, ex: usize) -> &[f64] {
        &self.data[self.conv2_b_range(ex)]
    }
    pub fn dense_w(&self) -> &[f64] {
        &self.data[self.dense_w_range()]
    }
    pub fn dense_b(&self) -> &[f64] {
        &self.data[self.dense_b_range()]
    }
    pub fn head_w(&self, task: usize) -> &[f64] {
        &self.data[self.head_w_range(task)]
    }
    pub fn head_b(&self, task: usize) -> f64 {
        self.data[self.head_b_index(task)]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Accumulates `other * scale` into self; shapes must match.
    pub fn add_scaled(&mut self, other: &ModelParams, scale: f64) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b * scale;
        }
    }
}

/// Glorot-uniform weight initialization (biases zero), seeded.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<ModelParams> {
    cfg.validate()?;
    let mut params = ModelParams::zeros(cfg)?;
    let mut r = rng(seed);
    let flatten = cfg.flatten_len()?;

    let fill = |data: &mut [f64], range: std::ops::Range<usize>, fan_in: usize, fan_out: usize, r: &mut rand_chacha::ChaCha8Rng| {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        for v in &mut data[range] {
            *v = r.gen_range(-bound..bound);
        }
    };

    for ex in 0..cfg.n_extractors() {
        let r1 = params.conv1_w_range(ex);
        fill(&mut params.data, r1, cfg.conv1.width, cfg.conv1.filters * cfg.conv1.width, &mut r);
        let r2 = params.conv2_w_range(ex);
        fill(
            &mut params.data,
            r2,
            cfg.conv1.filters * cfg.conv2.width,
            cfg.conv2.filters * cfg.conv2.width,
            &mut r,
        );
    }
    let rd = params.dense_w_range();
    fill(&mut params.data, rd, flatten, cfg.hidden, &mut r);
    for task in 0..cfg.n_tasks {
        let rh = params.head_w_range(task);
        fill(&mut params.data, rh, cfg.hidden, 1, &mut r);
    }
    Ok(params)
}

/// Per-example cache of everything the backward pass needs.
#[derive(Debug, Clone)]
pub struct ForwardTape {
    pub mode: Mode,
    /// Channel-major input copy (n_channels x t_days).
    pub input: Vec<f64>,
    pub channels: Vec<ChannelTape>,
    pub flat: Vec<f64>,
    /// ReLU output of the hidden layer.
    pub hidden_out: Vec<f64>,
    /// Hidden activations after dropout; equals `hidden_out` in eval mode.
    pub hidden_dropped: Vec<f64>,
    pub dense_mask: Option<Vec<bool>>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ChannelTape {
    /// tanh outputs of stage 1 (filters1 x L1).
    pub a1: Vec<f64>,
    pub mask1: Option<Vec<bool>>,
    /// Stage-1 pooled output, the input to conv2 (filters1 x P1).
    pub p1: Vec<f64>,
    pub idx1: Vec<u32>,
    pub a2: Vec<f64>,
    pub mask2: Option<Vec<bool>>,
    pub idx2: Vec<u32>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_scale_shape_chain() {
        let cfg = ModelConfig::paper_defaults(74, 147, 9);
        let s = cfg.stage_lengths().unwrap();
        assert_eq!((s.l1, s.p1, s.l2, s.p2), (71, 35, 16, 8));
        assert_eq!(cfg.flatten_len().unwrap(), 74 * 4 * 8);
        assert_eq!(cfg.flatten_len().unwrap(), 2368);
    }

    #[test]
    fn too_short_window_is_rejected() {
        let cfg = ModelConfig::paper_defaults(5, 20, 1);
        assert!(cfg.stage_lengths().is_err());
    }

    #[test]
    fn layout_ranges_are_disjoint_and_cover_everything() {
        let cfg = ModelConfig {
            n_channels: 3,
            t_days: 30,
            conv1: ConvSpec { filters: 4, width: 5, stride: 2 },
            conv2: ConvSpec { filters: 2, width: 3, stride: 1 },
            pool: PoolSpec { width: 2, stride: 2 },
            dropout_p: 0.5,
            hidden: 7,
            n_tasks: 2,
            share_extractors: false,
        };
        let p = ModelParams::zeros(&cfg).unwrap();
        let mut covered = vec![0u8; p.n_params()];
        let mut mark = |range: std::ops::Range<usize>| {
            for i in range {
                covered[i] += 1;
            }
        };
        for ex in 0..3 {
            mark(p.conv1_w_range(ex));
            mark(p.conv1_b_range(ex));
            mark(p.conv2_w_range(ex));
            mark(p.conv2_b_range(ex));
        }
        mark(p.dense_w_range());
        mark(p.dense_b_range());
        for t in 0..2 {
            mark(p.head_w_range(t));
            mark(p.head_b_index(t)..p.head_b_index(t) + 1);
        }
        assert!(covered.iter().all(|&c| c == 1));
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let cfg = ModelConfig::paper_defaults(4, 40, 2);
        let a = init_params(&cfg, 7).unwrap();
        let b = init_params(&cfg, 7).unwrap();
        let c = init_params(&cfg, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.all_finite());
        assert!(a.conv1_b(0).iter().all(|&v| v == 0.0));
        assert!(a.dense_b().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shared_extractors_shrink_the_layout() {
        let mut cfg = ModelConfig::paper_defaults(10, 60, 3);
        let unshared = ModelParams::zeros(&cfg).unwrap();
        cfg.share_extractors = true;
        let shared = ModelParams::zeros(&cfg).unwrap();
        assert!(shared.n_params() < unshared.n_params());
        assert_eq!(shared.extractor_for(7), 0);
        assert_eq!(unshared.extractor_for(7), 7);
    }
}
