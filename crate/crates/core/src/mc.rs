//! Monte Carlo ground truth for the normalized layer.
//!
//! Every trial draws its own `W₀` from a ChaCha stream seeded with
//! `seed + trial`, and trial values are reduced in trial order, so estimates
//! do not depend on the number of worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{cholesky, gaussian_matrix_from, tri_solve_right_transposed, DenseMatrix};
use crate::moment_eval::{LayerSpec, WishartSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct McConfig {
    pub trials: usize,
    pub seed: u64,
    /// Input draws per sampled weight. `0` integrates the input out exactly.
    pub x_samples_per_weight: usize,
}

impl McConfig {
    pub fn new(trials: usize, seed: u64) -> Result<Self> {
        let cfg = Self {
            trials,
            seed,
            x_samples_per_weight: 0,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_x_samples(mut self, samples: usize) -> Self {
        self.x_samples_per_weight = samples;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.trials < 2 {
            return Err(Error::InvalidArgument(format!(
                "at least two trials are needed for a standard error, got {}",
                self.trials
            )));
        }
        Ok(())
    }

    fn rng(&self, trial: usize) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed.wrapping_add(trial as u64))
    }
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            trials: 1000,
            seed: 0,
            x_samples_per_weight: 0,
        }
    }
}

/// Sample mean with its standard error `s / √trials`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub trials: usize,
}

impl McEstimate {
    pub fn from_samples(samples: &[f64]) -> Self {
        let count = samples.len();
        let mean = samples.iter().sum::<f64>() / count as f64;
        let var = if count > 1 {
            samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (count - 1) as f64
        } else {
            0.0
        };
        Self {
            mean,
            std_error: (var / count as f64).sqrt(),
            trials: count,
        }
    }

    /// `√(se₁² + se₂²)`.
    pub fn combined_error(&self, other: &Self) -> f64 {
        self.std_error.hypot(other.std_error)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("estimate serializes")
    }
}

fn run_trials<F>(cfg: &McConfig, trial: F) -> Result<McEstimate>
where
    F: Fn(&mut ChaCha8Rng) -> Result<f64> + Sync,
{
    cfg.validate()?;
    let samples = (0..cfg.trials)
        .into_par_iter()
        .map(|t| trial(&mut cfg.rng(t)))
        .collect::<Result<Vec<f64>>>()?;
    Ok(McEstimate::from_samples(&samples))
}

/// `M = γ W R⁻ᵀ` with `R Rᵀ = αI + WᵀW`, so that `‖M‖₂ ≤ γ`.
pub fn normalize_layer(w: &DenseMatrix, layer: &LayerSpec) -> Result<DenseMatrix> {
    let mut gram = w.gram_cols();
    gram.add_to_diagonal(layer.alpha);
    let r = cholesky(&gram)?;
    Ok(tri_solve_right_transposed(w, &r)?.scaled(layer.gamma))
}

/// `tr((αI_m + WWᵀ)⁻¹)` through the smaller Gram side.
pub fn inverse_trace_sample(w: &DenseMatrix, alpha: f64) -> Result<f64> {
    let (m, n) = (w.rows(), w.cols());
    if w.max_abs() == 0.0 {
        return Ok(m as f64 / alpha);
    }
    if n < m {
        let mut g = w.gram_cols();
        g.add_to_diagonal(alpha);
        Ok((m - n) as f64 / alpha + cholesky(&g)?.inverse_trace())
    } else {
        inverse_trace_direct(w, alpha)
    }
}

/// `tr((αI_m + WWᵀ)⁻¹)` on the row side, whatever the shape.
pub fn inverse_trace_direct(w: &DenseMatrix, alpha: f64) -> Result<f64> {
    let mut g = w.gram_rows();
    g.add_to_diagonal(alpha);
    Ok(cholesky(&g)?.inverse_trace())
}

/// Estimates `E[tr((αI_m + W₀W₀ᵀ)⁻¹)]`.
pub fn mc_inverse_trace(spec: &WishartSpec, layer: &LayerSpec, cfg: &McConfig) -> Result<McEstimate> {
    let sigma = spec.sigma();
    run_trials(cfg, |rng| {
        let w = gaussian_matrix_from(spec.m, spec.n, sigma, rng);
        inverse_trace_sample(&w, layer.alpha)
    })
}

fn sample_gaussian_vectors(rows: usize, count: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
    gaussian_matrix_from(rows, count, 1.0, rng)
}

/// Estimates the marginal output variance `Var[y]` of `y = M x`, `x ~ N(0, I_n)`.
///
/// With `x_samples_per_weight = 0` each trial uses the exact conditional value
/// `(γ²/m) ‖M̃‖_F²` (`M̃` normalized with `γ = 1`).
pub fn mc_output_variance(spec: &WishartSpec, layer: &LayerSpec, cfg: &McConfig) -> Result<McEstimate> {
    let sigma = spec.sigma();
    let unit = LayerSpec {
        alpha: layer.alpha,
        gamma: 1.0,
    };
    let g2 = layer.gamma * layer.gamma;
    run_trials(cfg, |rng| {
        let w = gaussian_matrix_from(spec.m, spec.n, sigma, rng);
        let mt = normalize_layer(&w, &unit)?;
        Ok(g2
            * match cfg.x_samples_per_weight {
                0 => mt.frobenius_sq() / spec.m as f64,
                s => {
                    let x = sample_gaussian_vectors(spec.n, s, rng);
                    mt.matmul(&x)?.frobenius_sq() / (spec.m * s) as f64
                }
            })
    })
}

/// Gradient variance: `Δx = M̃ᵀ Δy` with `Δy ~ N(0, I_m)`, per input coordinate.
pub fn backward_variance(spec: &WishartSpec, layer: &LayerSpec, cfg: &McConfig) -> Result<McEstimate> {
    let sigma = spec.sigma();
    let unit = LayerSpec {
        alpha: layer.alpha,
        gamma: 1.0,
    };
    let g2 = layer.gamma * layer.gamma;
    run_trials(cfg, |rng| {
        let w = gaussian_matrix_from(spec.m, spec.n, sigma, rng);
        let mt = normalize_layer(&w, &unit)?;
        Ok(g2
            * match cfg.x_samples_per_weight {
                0 => mt.frobenius_sq() / spec.n as f64,
                s => {
                    let dy = sample_gaussian_vectors(spec.m, s, rng);
                    mt.transpose().matmul(&dy)?.frobenius_sq() / (spec.n * s) as f64
                }
            })
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    /// `x` for `x > 0`, `eˣ − 1` otherwise.
    Elu,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Elu if x > 0.0 => x,
            Activation::Elu => x.exp_m1(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Elu => "elu",
        }
    }
}

/// Input draws per trial when ELU propagation is requested without an
/// explicit sample count.
pub const DEFAULT_ELU_SAMPLES: usize = 256;

/// Propagates `x ~ N(0, I)` through `sigma2s.len()` independently sampled
/// square layers, recording the per-coordinate second moment after each.
///
/// Identity activation with `x_samples_per_weight = 0` tracks the output
/// covariance exactly; otherwise explicit input batches are pushed through.
pub fn depth_simulate(
    width: usize,
    sigma2s: &[f64],
    layer: &LayerSpec,
    activation: Activation,
    cfg: &McConfig,
) -> Result<Vec<McEstimate>> {
    cfg.validate()?;
    if width == 0 || sigma2s.is_empty() {
        return Err(Error::InvalidArgument(
            "depth simulation needs width >= 1 and at least one layer".into(),
        ));
    }
    if let Some(s) = sigma2s.iter().find(|s| !(**s >= 0.0) || !s.is_finite()) {
        return Err(Error::InvalidArgument(format!("invalid layer variance {s}")));
    }
    let samples = match (activation, cfg.x_samples_per_weight) {
        (Activation::Identity, 0) => 0,
        (_, 0) => DEFAULT_ELU_SAMPLES,
        (_, s) => s,
    };
    let per_trial = (0..cfg.trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = cfg.rng(t);
            // exact path: B with Cov = B Bᵀ; sampled path: a batch of inputs
            let mut state = if samples == 0 {
                DenseMatrix::identity(width)
            } else {
                sample_gaussian_vectors(width, samples, &mut rng)
            };
            // the exact path keeps Cov = B Bᵀ, so its trace needs no batch average
            let columns = if samples == 0 { 1.0 } else { state.cols() as f64 };
            let mut out = Vec::with_capacity(sigma2s.len());
            for &s2 in sigma2s {
                let w = gaussian_matrix_from(width, width, s2.sqrt(), &mut rng);
                let m = normalize_layer(&w, layer)?;
                state = m.matmul(&state)?;
                if samples != 0 && activation != Activation::Identity {
                    for r in 0..state.rows() {
                        state.row_mut(r).iter_mut().for_each(|x| *x = activation.apply(*x));
                    }
                }
                out.push(state.frobenius_sq() / (width as f64 * columns));
            }
            Ok(out)
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    Ok((0..sigma2s.len())
        .map(|l| {
            let column: Vec<f64> = per_trial.iter().map(|v| v[l]).collect();
            McEstimate::from_samples(&column)
        })
        .collect())
}

/// Singular values `μ` of `W₀` mapped through `μ ↦ γμ / √(α + μ²)`: the
/// singular values of the normalized layer.
pub fn normalized_singular_value(mu: f64, layer: &LayerSpec) -> f64 {
    layer.gamma * mu / (layer.alpha + mu * mu).sqrt()
}
