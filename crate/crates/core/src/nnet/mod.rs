//! Small neural-network engine: LSTM trunk with dense layer and sigmoid
//! heads, inverted dropout, weighted multi-task BCE, backprop through time,
//! Adam, input gradients and a binary checkpoint format.

mod adam;
mod checkpoint;
mod loss;
mod network;

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use thiserror::Error;

pub use adam::{adam_step, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use loss::{bce, mtl_loss, mtl_loss_logit_grads, PROB_CLAMP};
pub use network::{backward, forward, input_gradient, mc_forward, mc_from_masks, DropoutMask, ForwardTrace, McEstimate};

use crate::rng;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("trace does not match parameters or targets: {0}")]
    StaleTrace(String),
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NnError>;

/// Dense row-major tensor of 64-bit floats.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(NnError::ShapeMismatch(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(NnError::NonFinite("tensor data".into()));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor { shape, data: vec![0.0; n] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }
}

pub const HEAD_NAMES: [&str; 2] = ["anxiety", "protected"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trunk {
    /// LSTM over the time axis, final hidden state -> dropout -> dense+ReLU
    /// -> dropout -> heads.
    Lstm { hidden: usize, dense: usize },
    /// Each head is an affine function of the whole input matrix.
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Architecture {
    pub steps: usize,
    pub features: usize,
    pub trunk: Trunk,
    pub heads: usize,
}

impl Architecture {
    pub fn lstm(steps: usize, features: usize, hidden: usize, dense: usize, heads: usize) -> Self {
        Architecture { steps, features, trunk: Trunk::Lstm { hidden, dense }, heads }
    }

    pub fn linear(steps: usize, features: usize, heads: usize) -> Self {
        Architecture { steps, features, trunk: Trunk::Linear, heads }
    }

    /// Expected `(name, shape)` of every parameter tensor, in storage order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let head_in = match self.trunk {
            Trunk::Lstm { hidden, dense } => {
                out.push(("lstm.w_input".into(), vec![4 * hidden, self.features]));
                out.push(("lstm.w_recurrent".into(), vec![4 * hidden, hidden]));
                out.push(("lstm.bias".into(), vec![4 * hidden]));
                out.push(("dense.weight".into(), vec![dense, hidden]));
                out.push(("dense.bias".into(), vec![dense]));
                vec![1, dense]
            }
            Trunk::Linear => vec![self.steps, self.features],
        };
        for name in HEAD_NAMES.iter().take(self.heads) {
            out.push((format!("head.{name}.weight"), head_in.clone()));
            out.push((format!("head.{name}.bias"), vec![1]));
        }
        out
    }

    /// Sizes of the dropout layers (none for a linear trunk).
    pub fn dropout_sizes(&self) -> Vec<usize> {
        match self.trunk {
            Trunk::Lstm { hidden, dense } => vec![hidden, dense],
            Trunk::Linear => Vec::new(),
        }
    }

    fn infer(tensors: &[(String, Tensor)]) -> Result<Self> {
        let shape_of = |name: &str| tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t.shape());
        let heads = HEAD_NAMES
            .iter()
            .take_while(|h| shape_of(&format!("head.{h}.weight")).is_some())
            .count();
        if heads == 0 {
            return Err(NnError::ShapeMismatch("no output head".into()));
        }
        let arch = if let Some(w) = shape_of("lstm.w_input") {
            let dense = shape_of("dense.weight")
                .ok_or_else(|| NnError::ShapeMismatch("missing dense.weight".into()))?;
            if w.len() != 2 || dense.len() != 2 || w[0] % 4 != 0 {
                return Err(NnError::ShapeMismatch("bad LSTM tensor ranks".into()));
            }
            // The LSTM is length-agnostic; 24 steps is the nominal window.
            Architecture::lstm(crate::dataset::STEPS, w[1], w[0] / 4, dense[0], heads)
        } else {
            let w = shape_of("head.anxiety.weight").unwrap();
            if w.len() != 2 {
                return Err(NnError::ShapeMismatch("linear head must be rank 2".into()));
            }
            Architecture::linear(w[0], w[1], heads)
        };
        Ok(arch)
    }
}

/// Ordered parameter store plus the epoch and seed it was produced with.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    tensors: Vec<(String, Tensor)>,
    epoch: u32,
    rng_seed: u64,
    arch: Architecture,
}

impl ModelParams {
    pub fn new(tensors: Vec<(String, Tensor)>, epoch: u32, rng_seed: u64) -> Result<Self> {
        let arch = Architecture::infer(&tensors)?;
        let layout = arch.layout();
        if layout.len() != tensors.len() {
            return Err(NnError::ShapeMismatch(format!(
                "expected {} tensors, got {}",
                layout.len(),
                tensors.len()
            )));
        }
        for ((name, shape), (got_name, t)) in layout.iter().zip(&tensors) {
            if name != got_name || shape.as_slice() != t.shape() {
                return Err(NnError::ShapeMismatch(format!(
                    "expected {name} {shape:?}, got {got_name} {:?}",
                    t.shape()
                )));
            }
        }
        Ok(ModelParams { tensors, epoch, rng_seed, arch })
    }

    pub fn zeros(arch: Architecture) -> Self {
        let tensors = arch
            .layout()
            .into_iter()
            .map(|(n, s)| (n, Tensor::zeros(s)))
            .collect();
        ModelParams { tensors, epoch: 0, rng_seed: 0, arch }
    }

    /// Glorot-uniform weights, zero biases except a forget-gate bias of 1.
    pub fn init(arch: Architecture, seed: u64) -> Self {
        let mut rng = rng::stream(seed, "init", 0);
        let mut p = ModelParams::zeros(arch);
        p.rng_seed = seed;
        for (name, t) in p.tensors.iter_mut() {
            if name.ends_with("bias") {
                if name == "lstm.bias" {
                    let h = t.len() / 4;
                    t.data[h..2 * h].iter_mut().for_each(|v| *v = 1.0);
                }
                continue;
            }
            let shape = t.shape().to_vec();
            let (fan_out, fan_in) = match name.as_str() {
                "lstm.w_input" | "lstm.w_recurrent" => (shape[0] / 4, shape[1]),
                _ if shape.len() == 2 && name.starts_with("head") && arch.trunk == Trunk::Linear => {
                    (1, shape[0] * shape[1])
                }
                _ => (shape[0], shape[1]),
            };
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit);
            t.data.iter_mut().for_each(|v| *v = dist.sample(&mut rng));
        }
        p
    }

    pub fn architecture(&self) -> Architecture {
        self.arch
    }

    pub fn tensors(&self) -> &[(String, Tensor)] {
        &self.tensors
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Mutable access to parameter values; shapes stay fixed.
    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.tensors.iter_mut().map(|(_, t)| t.data.as_mut_slice())
    }

    pub(crate) fn slot(&self, i: usize) -> &[f64] {
        &self.tensors[i].1.data
    }

    pub fn epoch(&self) -> u32 {
        self.epoch
    }

    pub fn set_epoch(&mut self, epoch: u32) {
        self.epoch = epoch;
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors.iter().map(|(_, t)| t.len()).sum()
    }

    /// All parameter values concatenated in storage order.
    pub fn flat(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|(_, t)| t.data.iter().copied()).collect()
    }

    /// Multiplies the named head's weight and bias by `k`.
    pub fn scale_head(&mut self, head: usize, k: f64) {
        for suffix in ["weight", "bias"] {
            let name = format!("head.{}.{suffix}", HEAD_NAMES[head]);
            if let Some((_, t)) = self.tensors.iter_mut().find(|(n, _)| *n == name) {
                t.data.iter_mut().for_each(|v| *v *= k);
            }
        }
    }

    /// Copy with only the first `heads` output heads.
    pub fn with_heads(&self, heads: usize) -> ModelParams {
        let mut arch = self.arch;
        arch.heads = heads.min(self.arch.heads);
        let keep = arch.layout().len();
        ModelParams {
            tensors: self.tensors[..keep].to_vec(),
            epoch: self.epoch,
            rng_seed: self.rng_seed,
            arch,
        }
    }
}

/// Gradients laid out exactly like the parameters they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub slots: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Gradients { slots: params.tensors.iter().map(|(_, t)| vec![0.0; t.len()]).collect() }
    }

    pub fn add_scaled(&mut self, other: &Gradients, k: f64) {
        for (a, b) in self.slots.iter_mut().zip(&other.slots) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += k * y;
            }
        }
    }

    pub fn scale(&mut self, k: f64) {
        self.slots.iter_mut().flatten().for_each(|v| *v *= k);
    }

    pub fn flat(&self) -> Vec<f64> {
        self.slots.iter().flatten().copied().collect()
    }
}

/// Samples a dropout keep-mask for every dropout layer of `arch`.
pub fn sample_mask<R: Rng + ?Sized>(arch: &Architecture, keep_rate: f64, rng: &mut R) -> DropoutMask {
    let layers = arch
        .dropout_sizes()
        .into_iter()
        .map(|n| (0..n).map(|_| keep_rate >= 1.0 || rng.gen::<f64>() < keep_rate).collect())
        .collect();
    DropoutMask::new(keep_rate, layers)
}
