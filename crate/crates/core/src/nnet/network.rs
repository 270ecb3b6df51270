use rand::Rng;

use super::{loss, Architecture, Gradients, ModelParams, NnError, Result, Tensor, Trunk};

const W_INPUT: usize = 0;
const W_RECURRENT: usize = 1;
const LSTM_BIAS: usize = 2;
const DENSE_W: usize = 3;
const DENSE_B: usize = 4;

fn head_slot(arch: &Architecture, head: usize) -> usize {
    match arch.trunk {
        Trunk::Lstm { .. } => 5 + 2 * head,
        Trunk::Linear => 2 * head,
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Binary keep-masks for each dropout layer. Kept units are scaled by
/// `1 / keep_rate` (inverted dropout).
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    keep_rate: f64,
    layers: Vec<Vec<bool>>,
}

impl DropoutMask {
    pub fn new(keep_rate: f64, layers: Vec<Vec<bool>>) -> Self {
        assert!(keep_rate > 0.0 && keep_rate <= 1.0, "keep rate {keep_rate} outside (0, 1]");
        DropoutMask { keep_rate, layers }
    }

    pub fn keep_rate(&self) -> f64 {
        self.keep_rate
    }

    pub fn layers(&self) -> &[Vec<bool>] {
        &self.layers
    }

    fn scales(&self, layer: usize) -> Vec<f64> {
        let s = 1.0 / self.keep_rate;
        self.layers[layer].iter().map(|&k| if k { s } else { 0.0 }).collect()
    }
}

/// Activations cached by [`forward`] for use in [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    input: Vec<f64>,
    steps: usize,
    // Per step, concatenated [i, f, g, o] activations (4H each).
    gates: Vec<f64>,
    cells: Vec<f64>,
    hiddens: Vec<f64>,
    drop1: Vec<f64>,
    dense_pre: Vec<f64>,
    drop2: Vec<f64>,
    head_input: Vec<f64>,
    pub logits: Vec<f64>,
    pub outputs: Vec<f64>,
    num_params: usize,
}

fn check_input(arch: &Architecture, input: &Tensor) -> Result<usize> {
    let s = input.shape();
    match arch.trunk {
        Trunk::Lstm { .. } if s.len() == 2 && s[1] == arch.features && s[0] >= 1 => Ok(s[0]),
        Trunk::Linear if s == [arch.steps, arch.features] => Ok(s[0]),
        _ => Err(NnError::ShapeMismatch(format!(
            "input {s:?} does not fit model expecting [{}, {}]",
            arch.steps, arch.features
        ))),
    }
}

struct LstmRun {
    gates: Vec<f64>,
    cells: Vec<f64>,
    hiddens: Vec<f64>,
}

fn run_lstm(params: &ModelParams, hidden: usize, x: &[f64], steps: usize) -> LstmRun {
    let features = x.len() / steps;
    let wx = params.slot(W_INPUT);
    let wh = params.slot(W_RECURRENT);
    let b = params.slot(LSTM_BIAS);
    let g4 = 4 * hidden;
    let mut gates = vec![0.0; steps * g4];
    let mut cells = vec![0.0; steps * hidden];
    let mut hiddens = vec![0.0; steps * hidden];
    let mut h_prev = vec![0.0; hidden];
    let mut c_prev = vec![0.0; hidden];
    for t in 0..steps {
        let xt = &x[t * features..(t + 1) * features];
        let a = &mut gates[t * g4..(t + 1) * g4];
        for j in 0..g4 {
            let rx = &wx[j * features..(j + 1) * features];
            let rh = &wh[j * hidden..(j + 1) * hidden];
            let mut acc = b[j];
            for (w, v) in rx.iter().zip(xt) {
                acc += w * v;
            }
            for (w, v) in rh.iter().zip(&h_prev) {
                acc += w * v;
            }
            a[j] = acc;
        }
        for k in 0..hidden {
            let i = sigmoid(a[k]);
            let f = sigmoid(a[hidden + k]);
            let g = a[2 * hidden + k].tanh();
            let o = sigmoid(a[3 * hidden + k]);
            a[k] = i;
            a[hidden + k] = f;
            a[2 * hidden + k] = g;
            a[3 * hidden + k] = o;
            let c = f * c_prev[k] + i * g;
            cells[t * hidden + k] = c;
            hiddens[t * hidden + k] = o * c.tanh();
        }
        h_prev.copy_from_slice(&hiddens[t * hidden..(t + 1) * hidden]);
        c_prev.copy_from_slice(&cells[t * hidden..(t + 1) * hidden]);
    }
    LstmRun { gates, cells, hiddens }
}

/// Final LSTM hidden state for `input`. Dropout sits after this point, so it
/// is shared by every Monte-Carlo pass.
fn trunk_state(params: &ModelParams, input: &Tensor) -> Result<Vec<f64>> {
    let arch = params.architecture();
    let steps = check_input(&arch, input)?;
    Ok(match arch.trunk {
        Trunk::Lstm { hidden, .. } => {
            let run = run_lstm(params, hidden, input.data(), steps);
            run.hiddens[(steps - 1) * hidden..].to_vec()
        }
        Trunk::Linear => input.data().to_vec(),
    })
}

struct HeadPass {
    drop1: Vec<f64>,
    dense_pre: Vec<f64>,
    drop2: Vec<f64>,
    head_input: Vec<f64>,
    logits: Vec<f64>,
}

fn head_pass(params: &ModelParams, state: &[f64], mask: Option<&DropoutMask>) -> HeadPass {
    let arch = params.architecture();
    let (drop1, dense_pre, drop2, head_input) = match arch.trunk {
        Trunk::Lstm { hidden, dense } => {
            let drop1 = mask.map(|m| m.scales(0)).unwrap_or_else(|| vec![1.0; hidden]);
            let h: Vec<f64> = state.iter().zip(&drop1).map(|(a, s)| a * s).collect();
            let w = params.slot(DENSE_W);
            let b = params.slot(DENSE_B);
            let dense_pre: Vec<f64> = (0..dense)
                .map(|j| b[j] + w[j * hidden..(j + 1) * hidden].iter().zip(&h).map(|(a, c)| a * c).sum::<f64>())
                .collect();
            let drop2 = mask.map(|m| m.scales(1)).unwrap_or_else(|| vec![1.0; dense]);
            let head_input = dense_pre.iter().zip(&drop2).map(|(u, s)| u.max(0.0) * s).collect();
            (drop1, dense_pre, drop2, head_input)
        }
        Trunk::Linear => (Vec::new(), Vec::new(), Vec::new(), state.to_vec()),
    };
    let logits = (0..arch.heads)
        .map(|k| {
            let slot = head_slot(&arch, k);
            let w = params.slot(slot);
            params.slot(slot + 1)[0] + w.iter().zip(&head_input).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect();
    HeadPass { drop1, dense_pre, drop2, head_input, logits }
}

/// Runs the network on one `[steps, features]` input. Returns per-head
/// sigmoid outputs (also stored in the trace). `mask = None` disables
/// dropout entirely.
pub fn forward(params: &ModelParams, input: &Tensor, mask: Option<&DropoutMask>) -> Result<(Vec<f64>, ForwardTrace)> {
    let arch = params.architecture();
    let steps = check_input(&arch, input)?;
    if let Some(m) = mask {
        let sizes: Vec<usize> = m.layers.iter().map(Vec::len).collect();
        if sizes != arch.dropout_sizes() {
            return Err(NnError::ShapeMismatch(format!("dropout mask layers {sizes:?}")));
        }
    }
    let (run, state) = match arch.trunk {
        Trunk::Lstm { hidden, .. } => {
            let run = run_lstm(params, hidden, input.data(), steps);
            let state = run.hiddens[(steps - 1) * hidden..].to_vec();
            (Some(run), state)
        }
        Trunk::Linear => (None, input.data().to_vec()),
    };
    let pass = head_pass(params, &state, mask);
    let outputs: Vec<f64> = pass.logits.iter().map(|&z| sigmoid(z)).collect();
    let run = run.unwrap_or(LstmRun { gates: Vec::new(), cells: Vec::new(), hiddens: Vec::new() });
    let trace = ForwardTrace {
        input: input.data().to_vec(),
        steps,
        gates: run.gates,
        cells: run.cells,
        hiddens: run.hiddens,
        drop1: pass.drop1,
        dense_pre: pass.dense_pre,
        drop2: pass.drop2,
        head_input: pass.head_input,
        logits: pass.logits,
        outputs: outputs.clone(),
        num_params: params.num_parameters(),
    };
    Ok((outputs, trace))
}

/// Backpropagates arbitrary per-head logit gradients. Returns parameter
/// gradients and the gradient with respect to the input matrix.
pub(crate) fn backprop_logits(params: &ModelParams, trace: &ForwardTrace, dlogits: &[f64]) -> Result<(Gradients, Vec<f64>)> {
    let arch = params.architecture();
    if trace.num_params != params.num_parameters() || trace.logits.len() != arch.heads || dlogits.len() != arch.heads {
        return Err(NnError::StaleTrace(format!(
            "trace for {} params / {} heads, model has {} / {}",
            trace.num_params,
            trace.logits.len(),
            params.num_parameters(),
            arch.heads
        )));
    }
    let mut grads = Gradients::zeros_like(params);
    let mut d_head_input = vec![0.0; trace.head_input.len()];
    for (k, &dz) in dlogits.iter().enumerate() {
        let slot = head_slot(&arch, k);
        let w = params.slot(slot);
        for (j, (g, x)) in grads.slots[slot].iter_mut().zip(&trace.head_input).enumerate() {
            *g += dz * x;
            d_head_input[j] += dz * w[j];
        }
        grads.slots[slot + 1][0] += dz;
    }

    let (hidden, dense) = match arch.trunk {
        Trunk::Linear => return Ok((grads, d_head_input)),
        Trunk::Lstm { hidden, dense } => (hidden, dense),
    };

    // Dense + ReLU + dropout.
    let steps = trace.steps;
    let features = arch.features;
    let h_final = &trace.hiddens[(steps - 1) * hidden..];
    let h_dropped: Vec<f64> = h_final.iter().zip(&trace.drop1).map(|(h, s)| h * s).collect();
    let dw = params.slot(DENSE_W);
    let mut dh = vec![0.0; hidden];
    for j in 0..dense {
        let du = if trace.dense_pre[j] > 0.0 { d_head_input[j] * trace.drop2[j] } else { 0.0 };
        if du == 0.0 {
            continue;
        }
        grads.slots[DENSE_B][j] += du;
        let row = &mut grads.slots[DENSE_W][j * hidden..(j + 1) * hidden];
        for (g, h) in row.iter_mut().zip(&h_dropped) {
            *g += du * h;
        }
        for (d, w) in dh.iter_mut().zip(&dw[j * hidden..(j + 1) * hidden]) {
            *d += du * w;
        }
    }
    for (d, s) in dh.iter_mut().zip(&trace.drop1) {
        *d *= s;
    }

    // Backprop through time.
    let wx = params.slot(W_INPUT);
    let wh = params.slot(W_RECURRENT);
    let g4 = 4 * hidden;
    let mut dx = vec![0.0; steps * features];
    let mut dc = vec![0.0; hidden];
    let mut da = vec![0.0; g4];
    let zeros = vec![0.0; hidden];
    for t in (0..steps).rev() {
        let gates = &trace.gates[t * g4..(t + 1) * g4];
        let c = &trace.cells[t * hidden..(t + 1) * hidden];
        let c_prev = if t > 0 { &trace.cells[(t - 1) * hidden..t * hidden] } else { &zeros[..] };
        let h_prev = if t > 0 { &trace.hiddens[(t - 1) * hidden..t * hidden] } else { &zeros[..] };
        for k in 0..hidden {
            let (i, f, g, o) = (gates[k], gates[hidden + k], gates[2 * hidden + k], gates[3 * hidden + k]);
            let tc = c[k].tanh();
            let d_o = dh[k] * tc;
            let dck = dc[k] + dh[k] * o * (1.0 - tc * tc);
            da[k] = dck * g * i * (1.0 - i);
            da[hidden + k] = dck * c_prev[k] * f * (1.0 - f);
            da[2 * hidden + k] = dck * i * (1.0 - g * g);
            da[3 * hidden + k] = d_o * o * (1.0 - o);
            dc[k] = dck * f;
        }
        let xt = &trace.input[t * features..(t + 1) * features];
        let dxt = &mut dx[t * features..(t + 1) * features];
        dh.iter_mut().for_each(|v| *v = 0.0);
        for (j, &a) in da.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            grads.slots[LSTM_BIAS][j] += a;
            let gx = &mut grads.slots[W_INPUT][j * features..(j + 1) * features];
            for (g, x) in gx.iter_mut().zip(xt) {
                *g += a * x;
            }
            let gh = &mut grads.slots[W_RECURRENT][j * hidden..(j + 1) * hidden];
            for (g, h) in gh.iter_mut().zip(h_prev) {
                *g += a * h;
            }
            for (d, w) in dxt.iter_mut().zip(&wx[j * features..(j + 1) * features]) {
                *d += a * w;
            }
            for (d, w) in dh.iter_mut().zip(&wh[j * hidden..(j + 1) * hidden]) {
                *d += a * w;
            }
        }
    }
    Ok((grads, dx))
}

/// Exact gradient of [`loss::mtl_loss`] with respect to every parameter.
pub fn backward(params: &ModelParams, trace: &ForwardTrace, targets: &[f64], task_weights: &[f64]) -> Result<Gradients> {
    if targets.len() != trace.outputs.len() || task_weights.len() != trace.outputs.len() {
        return Err(NnError::StaleTrace(format!(
            "{} targets / {} weights for {} heads",
            targets.len(),
            task_weights.len(),
            trace.outputs.len()
        )));
    }
    let dz = loss::mtl_loss_logit_grads(&trace.outputs, targets, task_weights);
    Ok(backprop_logits(params, trace, &dz)?.0)
}

/// Gradient of head `head`'s pre-sigmoid score with respect to the input,
/// with dropout disabled.
pub fn input_gradient(params: &ModelParams, input: &Tensor, head: usize) -> Result<Tensor> {
    let arch = params.architecture();
    if head >= arch.heads {
        return Err(NnError::ShapeMismatch(format!("head {head} of {}", arch.heads)));
    }
    let (_, trace) = forward(params, input, None)?;
    let mut dz = vec![0.0; arch.heads];
    dz[head] = 1.0;
    let (_, dx) = backprop_logits(params, &trace, &dz)?;
    Tensor::new(input.shape().to_vec(), dx)
}

/// Per-head predictive mean and variance over Monte-Carlo dropout passes.
#[derive(Debug, Clone, PartialEq)]
pub struct McEstimate {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub passes: usize,
}

/// Mean and (1/T) variance of the head outputs over the given masks, one
/// forward pass per mask.
pub fn mc_from_masks(params: &ModelParams, input: &Tensor, masks: &[DropoutMask]) -> Result<McEstimate> {
    let arch = params.architecture();
    let state = trunk_state(params, input)?;
    let sizes = arch.dropout_sizes();
    let passes: Vec<Vec<f64>> = masks
        .iter()
        .map(|m| {
            let got: Vec<usize> = m.layers.iter().map(Vec::len).collect();
            if got != sizes {
                return Err(NnError::ShapeMismatch(format!("dropout mask layers {got:?}")));
            }
            Ok(head_pass(params, &state, Some(m)).logits.into_iter().map(sigmoid).collect())
        })
        .collect::<Result<_>>()?;
    Ok(moments(&passes, arch.heads))
}

fn moments(passes: &[Vec<f64>], heads: usize) -> McEstimate {
    let t = passes.len() as f64;
    let mean: Vec<f64> = (0..heads).map(|k| passes.iter().map(|p| p[k]).sum::<f64>() / t).collect();
    let variance = (0..heads)
        .map(|k| passes.iter().map(|p| (p[k] - mean[k]).powi(2)).sum::<f64>() / t)
        .collect();
    McEstimate { mean, variance, passes: passes.len() }
}

/// Monte-Carlo dropout: `passes` forward passes with fresh masks drawn from
/// `rng`.
pub fn mc_forward<R: Rng + ?Sized>(
    params: &ModelParams,
    input: &Tensor,
    passes: usize,
    keep_rate: f64,
    rng: &mut R,
) -> Result<McEstimate> {
    assert!(passes >= 1, "need at least one pass");
    let arch = params.architecture();
    let masks: Vec<DropoutMask> = (0..passes).map(|_| super::sample_mask(&arch, keep_rate, rng)).collect();
    mc_from_masks(params, input, &masks)
}
