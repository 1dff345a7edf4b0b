//! Small fully connected tanh classifier on a synthetic Gaussian-blob dataset.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::SampleLoss;
use crate::error::{Error, Result};
use crate::rng::replica_rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpOptions {
    /// Distance of each class centre from the origin.
    pub separation: f64,
    /// Per-coordinate standard deviation of the blobs.
    pub noise_std: f64,
    /// ℓ₂ penalty `λ ‖θ‖²` added to every sample loss.
    pub l2: f64,
}

impl Default for MlpOptions {
    fn default() -> Self {
        Self {
            separation: 1.0,
            noise_std: 1.0,
            l2: 1e-3,
        }
    }
}

#[derive(Debug, Clone)]
struct Layer {
    fan_in: usize,
    fan_out: usize,
    /// Offset of the row-major `fan_out × fan_in` weights; biases follow.
    offset: usize,
}

#[derive(Debug, Clone)]
pub struct MlpClassifier {
    layers: Vec<Layer>,
    n_params: usize,
    inputs: Vec<Vec<f64>>,
    labels: Vec<usize>,
    l2: f64,
}

impl MlpClassifier {
    pub fn new(widths: &[usize], n_samples: usize, seed: u64, opts: MlpOptions) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::invalid("layers", "need at least input and output widths"));
        }
        if widths.contains(&0) {
            return Err(Error::invalid("layers", "widths must be positive"));
        }
        let classes = *widths.last().unwrap();
        if classes < 2 {
            return Err(Error::invalid("layers", "output width (classes) must be >= 2"));
        }
        if n_samples < 2 {
            return Err(Error::invalid("n_samples", "need at least 2 samples"));
        }
        if !(opts.l2 >= 0.0) || !(opts.noise_std >= 0.0) || !opts.separation.is_finite() {
            return Err(Error::invalid("options", "l2 and noise_std must be >= 0"));
        }
        let mut layers = Vec::with_capacity(widths.len() - 1);
        let mut offset = 0;
        for w in widths.windows(2) {
            layers.push(Layer {
                fan_in: w[0],
                fan_out: w[1],
                offset,
            });
            offset += w[0] * w[1] + w[1];
        }

        let d_in = widths[0];
        let mut rng = replica_rng(seed, 0);
        let centres: Vec<Vec<f64>> = (0..classes)
            .map(|_| {
                let v: Vec<f64> = (0..d_in).map(|_| rng.sample(StandardNormal)).collect();
                let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
                v.iter().map(|a| a / norm * opts.separation).collect()
            })
            .collect();
        let mut inputs = Vec::with_capacity(n_samples);
        let mut labels = Vec::with_capacity(n_samples);
        for i in 0..n_samples {
            let c = i % classes;
            let z: Vec<f64> = centres[c]
                .iter()
                .map(|m| m + opts.noise_std * rng.sample::<f64, _>(StandardNormal))
                .collect();
            inputs.push(z);
            labels.push(c);
        }
        Ok(Self {
            layers,
            n_params: offset,
            inputs,
            labels,
            l2: opts.l2,
        })
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }
    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Forward pass; returns activations per layer (input first) and output logits.
    fn forward(&self, theta: &[f64], z: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(z.to_vec());
        for (li, l) in self.layers.iter().enumerate() {
            let input = acts.last().unwrap();
            let w = &theta[l.offset..l.offset + l.fan_in * l.fan_out];
            let b = &theta[l.offset + l.fan_in * l.fan_out..l.offset + l.fan_in * l.fan_out + l.fan_out];
            let last = li + 1 == self.layers.len();
            let out: Vec<f64> = (0..l.fan_out)
                .map(|r| {
                    let pre = b[r]
                        + w[r * l.fan_in..(r + 1) * l.fan_in]
                            .iter()
                            .zip(input)
                            .map(|(a, c)| a * c)
                            .sum::<f64>();
                    if last {
                        pre
                    } else {
                        pre.tanh()
                    }
                })
                .collect();
            acts.push(out);
        }
        acts
    }

    fn log_softmax_at(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = logits.iter().map(|l| (l - max).exp()).sum();
        let lse = max + sum.ln();
        let probs = logits.iter().map(|l| (l - lse).exp()).collect();
        (logits[label] - lse, probs)
    }

    fn penalty(&self, theta: &[f64]) -> f64 {
        self.l2 * theta.iter().map(|t| t * t).sum::<f64>()
    }

    /// Fraction of samples whose arg-max logit matches the label.
    pub fn accuracy(&self, theta: &[f64]) -> f64 {
        let hits = self
            .inputs
            .iter()
            .zip(&self.labels)
            .filter(|(z, &y)| {
                let acts = self.forward(theta, z);
                let logits = acts.last().unwrap();
                let best = logits
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc })
                    .0;
                best == y
            })
            .count();
        hits as f64 / self.inputs.len() as f64
    }
}

impl SampleLoss for MlpClassifier {
    fn n_samples(&self) -> usize {
        self.inputs.len()
    }
    fn dim(&self) -> usize {
        self.n_params
    }

    fn sample_value(&self, i: usize, x: &[f64]) -> f64 {
        let acts = self.forward(x, &self.inputs[i]);
        let (logp, _) = Self::log_softmax_at(acts.last().unwrap(), self.labels[i]);
        -logp + self.penalty(x)
    }

    fn sample_grad(&self, i: usize, x: &[f64], out: &mut [f64]) {
        let acts = self.forward(x, &self.inputs[i]);
        let (_, probs) = Self::log_softmax_at(acts.last().unwrap(), self.labels[i]);
        // dL/d(pre-activation) of the output layer
        let mut delta: Vec<f64> = probs;
        delta[self.labels[i]] -= 1.0;
        for (j, t) in x.iter().enumerate() {
            out[j] = 2.0 * self.l2 * t;
        }
        for li in (0..self.layers.len()).rev() {
            let l = &self.layers[li];
            let input = &acts[li];
            let woff = l.offset;
            let boff = l.offset + l.fan_in * l.fan_out;
            for r in 0..l.fan_out {
                out[boff + r] += delta[r];
                for c in 0..l.fan_in {
                    out[woff + r * l.fan_in + c] += delta[r] * input[c];
                }
            }
            if li > 0 {
                let mut prev = vec![0.0; l.fan_in];
                for r in 0..l.fan_out {
                    for c in 0..l.fan_in {
                        prev[c] += x[woff + r * l.fan_in + c] * delta[r];
                    }
                }
                // input[c] = tanh(pre) so tanh' = 1 − input²
                for c in 0..l.fan_in {
                    prev[c] *= 1.0 - input[c] * input[c];
                }
                delta = prev;
            }
        }
    }

    fn initial_point(&self, seed: u64) -> Option<Vec<f64>> {
        let mut rng = replica_rng(seed, 1);
        let mut theta = vec![0.0; self.n_params];
        for l in &self.layers {
            let scale = (1.0 / l.fan_in as f64).sqrt();
            for k in 0..l.fan_in * l.fan_out {
                theta[l.offset + k] = scale * rng.sample::<f64, _>(StandardNormal);
            }
        }
        Some(theta)
    }
}
