//! Softmax classifiers with closed-form gradients.
//!
//! Parameters live in one flat vector, layer by layer, each weight matrix
//! row-major followed by its bias:
//!
//! * `Linear`: `W (m x d)`, `b (m)`.
//! * `OneHidden { width: h }`: `W1 (h x d)`, `b1 (h)`, `W2 (m x h)`, `b2 (m)`,
//!   with `tanh` hidden units.

use std::fmt;
use std::io::{BufRead, Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Batch;
use crate::error::{FermError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Architecture {
    Linear,
    OneHidden { width: usize },
}

impl Architecture {
    pub fn num_params(&self, d: usize, m: usize) -> usize {
        match *self {
            Architecture::Linear => m * (d + 1),
            Architecture::OneHidden { width: h } => h * (d + 1) + m * (h + 1),
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Architecture::Linear => f.write_str("linear"),
            Architecture::OneHidden { width } => write!(f, "hidden:{width}"),
        }
    }
}

impl std::str::FromStr for Architecture {
    type Err = FermError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Architecture::Linear),
            other => other
                .strip_prefix("hidden:")
                .and_then(|w| w.parse().ok())
                .filter(|&w: &usize| w > 0)
                .map(|width| Architecture::OneHidden { width })
                .ok_or_else(|| FermError::Config(format!("unknown architecture {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    arch: Architecture,
    d: usize,
    m: usize,
    weights: Vec<f64>,
}

/// Class probabilities and the argmax label (lowest index wins ties).
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub probs: Vec<f64>,
    pub label: usize,
}

/// Per-sample intermediate values reused between forward and backward.
#[derive(Debug, Clone, Default)]
pub struct Activations {
    hidden: Vec<f64>,
    logits: Vec<f64>,
    probs: Vec<f64>,
}

impl Activations {
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// `ln F_j` computed from the logits, finite even when `F_j` underflows.
    pub fn log_prob(&self, j: usize) -> f64 {
        let max = self.logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + self.logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        self.logits[j] - lse
    }
}

impl ModelParams {
    pub fn zeros(arch: Architecture, d: usize, m: usize) -> Self {
        ModelParams {
            arch,
            d,
            m,
            weights: vec![0.0; arch.num_params(d, m)],
        }
    }

    /// Weights uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, biases zero.
    pub fn init(arch: Architecture, d: usize, m: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Self::zeros(arch, d, m);
        let mut fill = |w: &mut [f64], fan_in: usize| {
            let r = 1.0 / (fan_in as f64).sqrt();
            w.iter_mut().for_each(|v| *v = rng.gen_range(-r..=r));
        };
        match arch {
            Architecture::Linear => fill(&mut params.weights[..m * d], d),
            Architecture::OneHidden { width: h } => {
                fill(&mut params.weights[..h * d], d);
                let w2 = h * (d + 1);
                fill(&mut params.weights[w2..w2 + m * h], h);
            }
        }
        params
    }

    pub fn from_flat(arch: Architecture, d: usize, m: usize, weights: Vec<f64>) -> Result<Self> {
        let expected = arch.num_params(d, m);
        if weights.len() != expected {
            return Err(FermError::DimensionMismatch {
                expected,
                got: weights.len(),
            });
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(FermError::Config("non-finite parameter".into()));
        }
        Ok(ModelParams { arch, d, m, weights })
    }

    pub fn architecture(&self) -> Architecture {
        self.arch
    }

    pub fn num_features(&self) -> usize {
        self.d
    }

    pub fn num_classes(&self) -> usize {
        self.m
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.d {
            return Err(FermError::DimensionMismatch {
                expected: self.d,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Forward pass into reusable buffers. `x` must have length `d`.
    pub fn forward_into(&self, x: &[f64], act: &mut Activations) {
        let (d, m) = (self.d, self.m);
        act.logits.resize(m, 0.0);
        act.probs.resize(m, 0.0);
        let w = &self.weights;
        match self.arch {
            Architecture::Linear => {
                for c in 0..m {
                    let row = &w[c * d..(c + 1) * d];
                    act.logits[c] = w[m * d + c] + dot(row, x);
                }
            }
            Architecture::OneHidden { width: h } => {
                act.hidden.resize(h, 0.0);
                for u in 0..h {
                    let row = &w[u * d..(u + 1) * d];
                    act.hidden[u] = (w[h * d + u] + dot(row, x)).tanh();
                }
                let w2 = h * (d + 1);
                for c in 0..m {
                    let row = &w[w2 + c * h..w2 + (c + 1) * h];
                    act.logits[c] = w[w2 + m * h + c] + dot(row, &act.hidden);
                }
            }
        }
        let max = act.logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for (p, z) in act.probs.iter_mut().zip(&act.logits) {
            *p = (z - max).exp();
            total += *p;
        }
        act.probs.iter_mut().for_each(|p| *p /= total);
    }

    /// Accumulate `scale * (d logits / d theta)^T dlogits` into `grad`.
    pub fn backward_into(
        &self,
        x: &[f64],
        act: &Activations,
        dlogits: &[f64],
        scale: f64,
        grad: &mut [f64],
    ) {
        let (d, m) = (self.d, self.m);
        match self.arch {
            Architecture::Linear => {
                for c in 0..m {
                    let g = scale * dlogits[c];
                    if g == 0.0 {
                        continue;
                    }
                    axpy(g, x, &mut grad[c * d..(c + 1) * d]);
                    grad[m * d + c] += g;
                }
            }
            Architecture::OneHidden { width: h } => {
                let w2 = h * (d + 1);
                let w = &self.weights;
                for c in 0..m {
                    let g = scale * dlogits[c];
                    axpy(g, &act.hidden, &mut grad[w2 + c * h..w2 + (c + 1) * h]);
                    grad[w2 + m * h + c] += g;
                }
                for u in 0..h {
                    let dh: f64 = (0..m).map(|c| dlogits[c] * w[w2 + c * h + u]).sum();
                    let dz = scale * dh * (1.0 - act.hidden[u] * act.hidden[u]);
                    axpy(dz, x, &mut grad[u * d..(u + 1) * d]);
                    grad[h * d + u] += dz;
                }
            }
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<Prediction> {
        self.check_input(x)?;
        let mut act = Activations::default();
        self.forward_into(x, &mut act);
        let label = argmax(&act.probs);
        Ok(Prediction {
            probs: act.probs,
            label,
        })
    }

    pub fn predict_labels(&self, batch: Batch<'_>) -> Vec<usize> {
        let data = batch.data();
        let mut act = Activations::default();
        batch
            .indices()
            .map(|i| {
                self.forward_into(data.row(i), &mut act);
                argmax(&act.probs)
            })
            .collect()
    }

    fn check_batch(&self, batch: &Batch<'_>) -> Result<()> {
        if batch.is_empty() {
            return Err(FermError::EmptyBatch);
        }
        if batch.data().num_features() != self.d {
            return Err(FermError::DimensionMismatch {
                expected: self.d,
                got: batch.data().num_features(),
            });
        }
        Ok(())
    }

    /// Mean cross-entropy `-(1/|B|) Σ ln F_{y_i}(x_i)`.
    pub fn loss(&self, batch: Batch<'_>) -> Result<f64> {
        self.check_batch(&batch)?;
        let data = batch.data();
        let mut act = Activations::default();
        let total: f64 = batch
            .indices()
            .map(|i| {
                self.forward_into(data.row(i), &mut act);
                -act.log_prob(data.label(i))
            })
            .sum();
        Ok(total / batch.len() as f64)
    }

    pub fn grad_loss(&self, batch: Batch<'_>) -> Result<Vec<f64>> {
        self.check_batch(&batch)?;
        let mut grad = vec![0.0; self.len()];
        self.add_loss_grad(batch, 1.0 / batch.len() as f64, &mut grad);
        Ok(grad)
    }

    /// `grad += scale * Σ_i ∇ -ln F_{y_i}(x_i)`.
    pub(crate) fn add_loss_grad(&self, batch: Batch<'_>, scale: f64, grad: &mut [f64]) {
        let data = batch.data();
        let mut act = Activations::default();
        let mut dlogits = vec![0.0; self.m];
        for i in batch.indices() {
            let x = data.row(i);
            self.forward_into(x, &mut act);
            dlogits.copy_from_slice(&act.probs);
            dlogits[data.label(i)] -= 1.0;
            self.backward_into(x, &act, &dlogits, scale, grad);
        }
    }

    /// `∇_θ F_j(x; θ)`.
    pub fn grad_prob(&self, x: &[f64], j: usize) -> Result<Vec<f64>> {
        self.check_input(x)?;
        if j >= self.m {
            return Err(FermError::ClassIndexOutOfRange {
                index: j,
                classes: self.m,
            });
        }
        let mut act = Activations::default();
        self.forward_into(x, &mut act);
        let mut upstream = vec![0.0; self.m];
        upstream[j] = 1.0;
        let dlogits = softmax_backward(&act.probs, &upstream);
        let mut grad = vec![0.0; self.len()];
        self.backward_into(x, &act, &dlogits, 1.0, &mut grad);
        Ok(grad)
    }

    pub fn write_checkpoint(&self, mut out: impl Write) -> Result<()> {
        match self.arch {
            Architecture::Linear => writeln!(out, "ferm-model v1 linear {} {}", self.d, self.m)?,
            Architecture::OneHidden { width } => {
                writeln!(out, "ferm-model v1 hidden {} {} {width}", self.d, self.m)?
            }
        }
        for w in &self.weights {
            out.write_all(&w.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_checkpoint(input: impl Read) -> Result<Self> {
        let mut reader = std::io::BufReader::new(input);
        let mut header = String::new();
        reader.read_line(&mut header)?;
        let bad = |msg: &str| FermError::Checkpoint(format!("{msg}: {:?}", header.trim_end()));
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() < 5 || fields[0] != "ferm-model" || fields[1] != "v1" {
            return Err(bad("bad header"));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad dimension"));
        let (d, m) = (num(fields[3])?, num(fields[4])?);
        let arch = match (fields[2], fields.len()) {
            ("linear", 5) => Architecture::Linear,
            ("hidden", 6) => Architecture::OneHidden {
                width: num(fields[5])?,
            },
            _ => return Err(bad("bad architecture")),
        };
        let mut bytes = Vec::new();
        reader.read_to_end(&mut bytes)?;
        let expected = arch.num_params(d, m);
        if bytes.len() != expected * 8 {
            return Err(FermError::Checkpoint(format!(
                "expected {expected} weights, found {} bytes",
                bytes.len()
            )));
        }
        let weights = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::from_flat(arch, d, m, weights)
    }
}

/// Maps an upstream gradient on probabilities to one on logits:
/// `dz_c = F_c (g_c - Σ_j g_j F_j)`.
pub fn softmax_backward(probs: &[f64], upstream: &[f64]) -> Vec<f64> {
    let mean: f64 = probs.iter().zip(upstream).map(|(p, g)| p * g).sum();
    probs.iter().zip(upstream).map(|(p, g)| p * (g - mean)).collect()
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
