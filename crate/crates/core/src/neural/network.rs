use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Sigmoid,
    /// `ln(1 + e^x)`; the reading used for the undefined "S" activation.
    Softplus,
}

impl Activation {
    pub const ALL: [Activation; 3] = [Activation::Tanh, Activation::Sigmoid, Activation::Softplus];

    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
            Activation::Softplus => x.max(0.0) + (-x.abs()).exp().ln_1p(),
        }
    }

    /// Derivative at pre-activation `x` with output `y = apply(x)`.
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Softplus => sigmoid(x),
        }
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

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchKind {
    Ffnn,
    Rnn,
}

/// Network shape. FFNN: fully connected hidden layers in order, then a
/// linear readout. RNN: one Elman cell of width `layer_widths[0]` whose final
/// state feeds a linear readout.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub kind: ArchKind,
    pub layer_widths: Vec<usize>,
    pub activations: Vec<Activation>,
    pub input_dim: usize,
    pub output_dim: usize,
}

impl ArchSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Err(Error::invalid("architecture", reason));
        if self.layer_widths.len() != self.activations.len() {
            return bad(format!(
                "{} widths but {} activations",
                self.layer_widths.len(),
                self.activations.len()
            ));
        }
        if self.layer_widths.contains(&0) {
            return bad("layer width 0".into());
        }
        if self.input_dim == 0 || self.output_dim == 0 {
            return bad("input and output dimensions must be positive".into());
        }
        if self.kind == ArchKind::Rnn && self.layer_widths.len() != 1 {
            return bad(format!(
                "an RNN has exactly one recurrent layer, got {}",
                self.layer_widths.len()
            ));
        }
        Ok(())
    }
}

/// Offsets of one affine map `W x + b` in the flat parameter vector; `W` is
/// row-major `rows × cols`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Dense {
    pub w: usize,
    pub b: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Dense {
    fn alloc(offset: &mut usize, rows: usize, cols: usize) -> Self {
        let w = *offset;
        let b = w + rows * cols;
        *offset = b + rows;
        Dense { w, b, rows, cols }
    }

    fn apply(&self, params: &[f64], x: &[f64], out: &mut [f64]) {
        let w = &params[self.w..self.w + self.rows * self.cols];
        for (r, o) in out.iter_mut().enumerate() {
            let row = &w[r * self.cols..(r + 1) * self.cols];
            *o = params[self.b + r] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    /// Accumulates `dW += d xᵀ`, `db += d` and returns `Wᵀ d`.
    fn backward(&self, params: &[f64], grads: &mut [f64], x: &[f64], d: &[f64]) -> Vec<f64> {
        let mut dx = vec![0.0; self.cols];
        for (r, &dr) in d.iter().enumerate() {
            grads[self.b + r] += dr;
            let base = self.w + r * self.cols;
            for c in 0..self.cols {
                grads[base + c] += dr * x[c];
                dx[c] += params[base + c] * dr;
            }
        }
        dx
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) enum Layout {
    Ffnn {
        hidden: Vec<Dense>,
        readout: Dense,
    },
    Rnn {
        input: Dense,
        /// Offset of the `h × h` recurrent matrix.
        recurrent: usize,
        readout: Dense,
    },
}

impl Layout {
    fn new(arch: &ArchSpec) -> (Layout, usize) {
        let mut offset = 0;
        match arch.kind {
            ArchKind::Ffnn => {
                let mut prev = arch.input_dim;
                let hidden = arch
                    .layer_widths
                    .iter()
                    .map(|&w| {
                        let d = Dense::alloc(&mut offset, w, prev);
                        prev = w;
                        d
                    })
                    .collect();
                let readout = Dense::alloc(&mut offset, arch.output_dim, prev);
                (Layout::Ffnn { hidden, readout }, offset)
            }
            ArchKind::Rnn => {
                let h = arch.layer_widths[0];
                let input = Dense::alloc(&mut offset, h, arch.input_dim);
                let recurrent = offset;
                offset += h * h;
                let readout = Dense::alloc(&mut offset, arch.output_dim, h);
                (
                    Layout::Rnn {
                        input,
                        recurrent,
                        readout,
                    },
                    offset,
                )
            }
        }
    }
}

/// Network input: a pooled vector for feedforward nets, a token-vector
/// sequence for recurrent ones.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Features {
    Vector(Vec<f64>),
    Sequence(Vec<Vec<f64>>),
}

/// A network with all weights and biases in one flat vector.
#[derive(Clone, Debug, PartialEq)]
pub struct AnnModel {
    arch: ArchSpec,
    layout: Layout,
    pub params: Vec<f64>,
    pub seed: u64,
}

/// Glorot-uniform weights, zero biases.
pub fn init_network(arch: &ArchSpec, seed: u64) -> Result<AnnModel> {
    arch.validate()?;
    let (layout, n) = Layout::new(arch);
    let mut params = vec![0.0; n];
    let mut r = rng::rng(seed);
    let mut fill = |offset: usize, rows: usize, cols: usize, r: &mut rng::Rng| {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        for p in &mut params[offset..offset + rows * cols] {
            *p = r.gen_range(-limit..=limit);
        }
    };
    match &layout {
        Layout::Ffnn { hidden, readout } => {
            for d in hidden.iter().chain(std::iter::once(readout)) {
                fill(d.w, d.rows, d.cols, &mut r);
            }
        }
        Layout::Rnn {
            input,
            recurrent,
            readout,
        } => {
            fill(input.w, input.rows, input.cols, &mut r);
            fill(*recurrent, input.rows, input.rows, &mut r);
            fill(readout.w, readout.rows, readout.cols, &mut r);
        }
    }
    Ok(AnnModel {
        arch: arch.clone(),
        layout,
        params,
        seed,
    })
}

/// Per-layer state kept from the forward pass.
struct Trace {
    /// Layer inputs (FFNN) or previous hidden states (RNN), one per step.
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl AnnModel {
    pub fn arch(&self) -> &ArchSpec {
        &self.arch
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Indices of bias entries in `params`.
    pub fn bias_indices(&self) -> Vec<usize> {
        let range = |d: &Dense| d.b..d.b + d.rows;
        match &self.layout {
            Layout::Ffnn { hidden, readout } => hidden
                .iter()
                .chain(std::iter::once(readout))
                .flat_map(range)
                .collect(),
            Layout::Rnn { input, readout, .. } => range(input).chain(range(readout)).collect(),
        }
    }

    /// `(index, limit)` for every weight entry, with its Glorot bound.
    pub fn weight_limits(&self) -> Vec<(usize, f64)> {
        let lim = |rows: usize, cols: usize| (6.0 / (rows + cols) as f64).sqrt();
        let dense = |d: &Dense| {
            let (w, n, l) = (d.w, d.rows * d.cols, lim(d.rows, d.cols));
            (w..w + n).map(move |i| (i, l))
        };
        match &self.layout {
            Layout::Ffnn { hidden, readout } => hidden
                .iter()
                .chain(std::iter::once(readout))
                .flat_map(dense)
                .collect(),
            Layout::Rnn {
                input,
                recurrent,
                readout,
            } => {
                let h = input.rows;
                dense(input)
                    .chain((*recurrent..*recurrent + h * h).map(move |i| (i, lim(h, h))))
                    .chain(dense(readout))
                    .collect()
            }
        }
    }

    fn check_input(&self, x: &Features) -> Result<()> {
        let dim = self.arch.input_dim;
        let mismatch = |actual| {
            Err(Error::LengthMismatch {
                expected: dim,
                actual,
            })
        };
        match (self.arch.kind, x) {
            (ArchKind::Ffnn, Features::Vector(v)) if v.len() != dim => mismatch(v.len()),
            (ArchKind::Ffnn, Features::Vector(_)) => Ok(()),
            (ArchKind::Rnn, Features::Sequence(seq)) => {
                if seq.is_empty() {
                    return Err(Error::invalid("input", "empty sequence"));
                }
                match seq.iter().find(|s| s.len() != dim) {
                    Some(s) => mismatch(s.len()),
                    None => Ok(()),
                }
            }
            (ArchKind::Ffnn, Features::Sequence(_)) => {
                Err(Error::invalid("input", "feedforward network expects a vector"))
            }
            (ArchKind::Rnn, Features::Vector(_)) => {
                Err(Error::invalid("input", "recurrent network expects a sequence"))
            }
        }
    }

    fn run(&self, x: &Features) -> Trace {
        let p = &self.params;
        let mut trace = Trace {
            inputs: Vec::new(),
            pre: Vec::new(),
            post: Vec::new(),
            output: vec![0.0; self.arch.output_dim],
        };
        match (&self.layout, x) {
            (Layout::Ffnn { hidden, readout }, Features::Vector(v)) => {
                let mut h = v.clone();
                for (d, act) in hidden.iter().zip(&self.arch.activations) {
                    let mut a = vec![0.0; d.rows];
                    d.apply(p, &h, &mut a);
                    let y: Vec<f64> = a.iter().map(|&z| act.apply(z)).collect();
                    trace.inputs.push(std::mem::replace(&mut h, y.clone()));
                    trace.pre.push(a);
                    trace.post.push(y);
                }
                readout.apply(p, &h, &mut trace.output);
                trace.inputs.push(h);
            }
            (
                Layout::Rnn {
                    input,
                    recurrent,
                    readout,
                },
                Features::Sequence(seq),
            ) => {
                let hdim = input.rows;
                let act = self.arch.activations[0];
                let wh = &p[*recurrent..*recurrent + hdim * hdim];
                let mut h = vec![0.0; hdim];
                for xt in seq {
                    let mut a = vec![0.0; hdim];
                    input.apply(p, xt, &mut a);
                    for (r, ar) in a.iter_mut().enumerate() {
                        *ar += wh[r * hdim..(r + 1) * hdim]
                            .iter()
                            .zip(&h)
                            .map(|(w, hv)| w * hv)
                            .sum::<f64>();
                    }
                    let y: Vec<f64> = a.iter().map(|&z| act.apply(z)).collect();
                    trace.inputs.push(std::mem::replace(&mut h, y.clone()));
                    trace.pre.push(a);
                    trace.post.push(y);
                }
                readout.apply(p, &h, &mut trace.output);
                trace.inputs.push(h);
            }
            _ => unreachable!("input checked against architecture"),
        }
        trace
    }

    pub fn forward(&self, x: &Features) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.run(x).output)
    }

    /// Loss `mean_b ‖ŷ_b − y_b‖² / output_dim` and its exact gradient with
    /// respect to every parameter (backpropagation through time for RNNs).
    pub fn gradients(&self, batch: &[(&Features, &[f64])]) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(Error::Empty("batch".into()));
        }
        let out_dim = self.arch.output_dim;
        let scale = 2.0 / (out_dim * batch.len()) as f64;
        let mut grads = vec![0.0; self.params.len()];
        let mut loss = 0.0;
        for (x, y) in batch {
            self.check_input(x)?;
            if y.len() != out_dim {
                return Err(Error::LengthMismatch {
                    expected: out_dim,
                    actual: y.len(),
                });
            }
            let trace = self.run(x);
            let dy: Vec<f64> = trace.output.iter().zip(y.iter()).map(|(o, t)| o - t).collect();
            loss += dy.iter().map(|d| d * d).sum::<f64>() / out_dim as f64;
            let dy: Vec<f64> = dy.iter().map(|d| d * scale).collect();
            self.backward(&trace, &dy, &mut grads, x);
        }
        Ok((loss / batch.len() as f64, grads))
    }

    fn backward(&self, trace: &Trace, dy: &[f64], grads: &mut [f64], x: &Features) {
        let p = &self.params;
        match &self.layout {
            Layout::Ffnn { hidden, readout } => {
                let last = trace.inputs.last().expect("readout input");
                let mut dh = readout.backward(p, grads, last, dy);
                for l in (0..hidden.len()).rev() {
                    let act = self.arch.activations[l];
                    let da: Vec<f64> = dh
                        .iter()
                        .zip(&trace.pre[l])
                        .zip(&trace.post[l])
                        .map(|((d, &a), &y)| d * act.derivative(a, y))
                        .collect();
                    dh = hidden[l].backward(p, grads, &trace.inputs[l], &da);
                }
            }
            Layout::Rnn {
                input,
                recurrent,
                readout,
            } => {
                let Features::Sequence(seq) = x else {
                    unreachable!("checked")
                };
                let hdim = input.rows;
                let act = self.arch.activations[0];
                let last = trace.inputs.last().expect("readout input");
                let mut dh = readout.backward(p, grads, last, dy);
                for t in (0..seq.len()).rev() {
                    let da: Vec<f64> = dh
                        .iter()
                        .zip(&trace.pre[t])
                        .zip(&trace.post[t])
                        .map(|((d, &a), &y)| d * act.derivative(a, y))
                        .collect();
                    input.backward(p, grads, &seq[t], &da);
                    let h_prev = &trace.inputs[t];
                    let mut next = vec![0.0; hdim];
                    for (r, &dr) in da.iter().enumerate() {
                        let base = recurrent + r * hdim;
                        for c in 0..hdim {
                            grads[base + c] += dr * h_prev[c];
                            next[c] += p[base + c] * dr;
                        }
                    }
                    dh = next;
                }
            }
        }
    }

    /// JSON checkpoint with a format tag, version, architecture and every
    /// parameter at full precision.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            arch: self.arch.clone(),
            seed: self.seed,
            params: self.params.clone(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(text)?;
        if c.format != CHECKPOINT_FORMAT || c.version != CHECKPOINT_VERSION {
            return Err(Error::Unsupported(format!(
                "checkpoint {} v{}",
                c.format, c.version
            )));
        }
        c.arch.validate()?;
        let (layout, n) = Layout::new(&c.arch);
        if c.params.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                actual: c.params.len(),
            });
        }
        Ok(AnnModel {
            arch: c.arch,
            layout,
            params: c.params,
            seed: c.seed,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

const CHECKPOINT_FORMAT: &str = "metastim-ann";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    arch: ArchSpec,
    seed: u64,
    params: Vec<f64>,
}
