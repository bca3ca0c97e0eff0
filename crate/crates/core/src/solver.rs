//! Inverting the variance map: find the `σ` whose output variance hits a
//! target, and sweep variance over grids of dimensions and scales.
//!
//! Monte Carlo evaluations reuse the same seed at every `σ`, so `W₀ = σZ` with
//! `Z` fixed and the estimated curve is exactly monotone in `σ`.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::mc::{mc_output_variance, McConfig};
use crate::moment_eval::{
    convergence_bound, marginal_variance_series, LayerSpec, MomentSet, TruncationPolicy, WishartSpec,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Series,
    #[serde(rename = "mc")]
    MonteCarlo,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Series => "series",
            Method::MonteCarlo => "mc",
        }
    }
}

/// Settings shared by the solver and the sweeps.
#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub max_k: usize,
    pub policy: TruncationPolicy,
    /// Evaluate the series even where `σ²` exceeds the validity bound.
    pub allow_out_of_validity: bool,
    pub mc: McConfig,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            max_k: 10,
            policy: TruncationPolicy::Optimal,
            allow_out_of_validity: false,
            mc: McConfig::default(),
        }
    }
}

/// One evaluated point, laid out like the shared CSV schema.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariancePoint {
    pub m: usize,
    pub n: usize,
    pub sigma: f64,
    pub sigma2: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub method: &'static str,
    pub k_used: Option<usize>,
    pub value: f64,
    pub std_error: Option<f64>,
    pub within_validity: bool,
}

/// Evaluates `Var[y]` at one `(m, n, σ)` with the chosen method.
pub fn evaluate_variance(
    m: usize,
    n: usize,
    sigma: f64,
    layer: &LayerSpec,
    method: Method,
    opts: &EvalOptions,
    moments: &MomentSet,
) -> Result<VariancePoint> {
    let spec = WishartSpec::new(m, n, sigma * sigma)?;
    let within_validity = spec.sigma2 < convergence_bound(m, n, layer.alpha, 0.0);
    let (value, k_used, std_error) = match method {
        Method::Series => {
            let r = marginal_variance_series(&spec, layer, opts.max_k, opts.policy, moments)?;
            (r.value, Some(r.truncation_k), None)
        }
        Method::MonteCarlo => {
            let e = mc_output_variance(&spec, layer, &opts.mc)?;
            (e.mean, None, Some(e.std_error))
        }
    };
    Ok(VariancePoint {
        m,
        n,
        sigma,
        sigma2: spec.sigma2,
        alpha: layer.alpha,
        gamma: layer.gamma,
        method: method.name(),
        k_used,
        value,
        std_error,
        within_validity,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Solution {
    pub sigma: f64,
    pub variance: f64,
    pub std_error: Option<f64>,
    pub iterations: usize,
}

pub const MAX_BISECTION_STEPS: usize = 60;
const BRACKET_DECADES: f64 = 4.0;
const COARSE_POINTS_PER_DECADE: usize = 2;

/// Finds `σ` with `|Var[y](σ) − target| ≤ tol` by bisection on `log σ` over
/// `[10⁻⁴, 10⁴] / √n`.
#[allow(clippy::too_many_arguments)]
pub fn solve_sigma(
    target: f64,
    m: usize,
    n: usize,
    layer: &LayerSpec,
    method: Method,
    tol: f64,
    opts: &EvalOptions,
    moments: &MomentSet,
) -> Result<Solution> {
    let limit = layer.gamma * layer.gamma;
    if !target.is_finite() || !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "need a finite target and positive tol, got {target}, {tol}"
        )));
    }
    if target >= limit {
        return Err(Error::Unattainable { target, limit });
    }
    if target <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "target variance must be positive, got {target}"
        )));
    }
    WishartSpec::new(m, n, 0.0)?;

    let scale = 1.0 / (n as f64).sqrt();
    let mut log_lo = (10f64.powf(-BRACKET_DECADES) * scale).ln();
    let mut log_hi = (10f64.powf(BRACKET_DECADES) * scale).ln();
    if method == Method::Series && !opts.allow_out_of_validity {
        let bound = convergence_bound(m, n, layer.alpha, 0.0);
        log_hi = log_hi.min(0.5 * bound.ln());
    }

    let eval = |log_sigma: f64| -> Result<(f64, Option<f64>)> {
        let p = evaluate_variance(m, n, log_sigma.exp(), layer, method, opts, moments)?;
        Ok((p.value, p.std_error))
    };

    // coarse monotonicity guard
    let steps = ((log_hi - log_lo) / std::f64::consts::LN_10 * COARSE_POINTS_PER_DECADE as f64).ceil() as usize;
    let steps = steps.max(2);
    let grid: Vec<f64> = (0..=steps)
        .map(|i| log_lo + (log_hi - log_lo) * i as f64 / steps as f64)
        .collect();
    let values = grid.iter().map(|&x| eval(x)).collect::<Result<Vec<_>>>()?;
    let sweep: Vec<(f64, f64)> = grid.iter().zip(&values).map(|(x, v)| (x.exp(), v.0)).collect();
    for pair in values.windows(2) {
        let noise = 3.0 * pair[0].1.unwrap_or(0.0).hypot(pair[1].1.unwrap_or(0.0));
        let slack = noise + 1e-12 * limit;
        if pair[1].0 < pair[0].0 - slack {
            return Err(Error::NonMonotonic { sweep });
        }
    }
    let (first, last) = (values[0].0, values[values.len() - 1].0);
    if target > last + tol {
        if method == Method::Series && !opts.allow_out_of_validity {
            return Err(Error::SeriesOutOfValidity {
                bound: convergence_bound(m, n, layer.alpha, 0.0),
            });
        }
        return Err(Error::NoSolution { target, sweep });
    }
    if target < first - tol {
        return Err(Error::NoSolution { target, sweep });
    }
    for (i, v) in values.iter().enumerate() {
        if (v.0 - target).abs() <= tol {
            return finish(grid[i], *v, 0, tol, method);
        }
    }
    let upper = values.iter().position(|v| v.0 > target).unwrap_or(values.len() - 1);
    log_lo = grid[upper.saturating_sub(1)];
    log_hi = grid[upper];

    let mut iterations = 0;
    let mut mid = 0.5 * (log_lo + log_hi);
    let mut current = eval(mid)?;
    while iterations < MAX_BISECTION_STEPS {
        iterations += 1;
        if (current.0 - target).abs() <= tol {
            break;
        }
        if current.0 < target {
            log_lo = mid;
        } else {
            log_hi = mid;
        }
        mid = 0.5 * (log_lo + log_hi);
        current = eval(mid)?;
    }
    if (current.0 - target).abs() > tol {
        return Err(Error::NoSolution { target, sweep });
    }
    finish(mid, current, iterations, tol, method)
}

fn finish(log_sigma: f64, value: (f64, Option<f64>), iterations: usize, tol: f64, method: Method) -> Result<Solution> {
    if method == Method::MonteCarlo {
        let noise = 3.0 * value.1.unwrap_or(0.0);
        if noise >= tol {
            return Err(Error::ToleranceBelowNoise { tol, noise });
        }
    }
    Ok(Solution {
        sigma: log_sigma.exp(),
        variance: value.0,
        std_error: value.1,
        iterations,
    })
}

/// How a sweep's normalized scale maps to `σ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Scaling {
    /// `σ = s / n`
    LinearN,
    /// `σ = s / √n`
    SqrtN,
    /// `σ = s`
    Absolute,
}

impl Scaling {
    pub fn sigma(self, normalized: f64, n: usize) -> f64 {
        match self {
            Scaling::LinearN => normalized / n as f64,
            Scaling::SqrtN => normalized / (n as f64).sqrt(),
            Scaling::Absolute => normalized,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub normalized_sigma: f64,
    pub point: VariancePoint,
}

/// Evaluates every `(dims, scale)` pair; rows come back in grid order.
pub fn variance_sweep(
    dims: &[(usize, usize)],
    scales: &[f64],
    scaling: Scaling,
    layer: &LayerSpec,
    method: Method,
    opts: &EvalOptions,
    moments: &MomentSet,
) -> Result<Vec<SweepRow>> {
    if dims.is_empty() || scales.is_empty() {
        return Err(Error::InvalidArgument("sweep grids must be non-empty".into()));
    }
    let jobs: Vec<(usize, usize, f64)> = dims
        .iter()
        .flat_map(|&(m, n)| scales.iter().map(move |&s| (m, n, s)))
        .collect();
    jobs.par_iter()
        .map(|&(m, n, s)| {
            let point = evaluate_variance(m, n, scaling.sigma(s, n), layer, method, opts, moments)?;
            Ok(SweepRow {
                normalized_sigma: s,
                point,
            })
        })
        .collect()
}
