//! Series evaluation of `E[tr((αI + S)⁻¹)]` and the marginal output variance.
//!
//! With the Laplace representation `(αI + S)⁻¹ = ∫ e^{-αt} e^{-St} dt`, the
//! expectation expands termwise into
//!
//! ```text
//! E[tr((αI + S)⁻¹)] ~ Σ_k (−1)^k α^{−(k+1)} E[tr(S^k)]
//! ```
//!
//! which is asymptotic rather than convergent: it is only trustworthy while
//! `σ² < α / (√m + √n)²`. The marginal output variance of the normalized
//! layer follows as `Var[y] = γ² − (γ² α / m) E[tr((αI + S)⁻¹)]`.

use serde::Serialize;

use crate::bundled::{bundled_table, MAX_BUNDLED_ORDER};
use crate::error::{Error, Result};
use crate::wick::{moment_table, MomentTable};

/// Dimensions and entry variance of `W₀ ∈ ℝ^{m×n}`, `S = W₀W₀ᵀ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WishartSpec {
    pub m: usize,
    pub n: usize,
    pub sigma2: f64,
}

impl WishartSpec {
    pub fn new(m: usize, n: usize, sigma2: f64) -> Result<Self> {
        if m == 0 || n == 0 {
            return Err(Error::InvalidArgument(format!(
                "dimensions must be positive, got {m}x{n}"
            )));
        }
        if !(sigma2 >= 0.0) || !sigma2.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "sigma2 must be finite and non-negative, got {sigma2}"
            )));
        }
        Ok(Self { m, n, sigma2 })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma2.sqrt()
    }

    /// The same distribution seen from the other Gram side.
    pub fn transposed(&self) -> Self {
        Self {
            m: self.n,
            n: self.m,
            sigma2: self.sigma2,
        }
    }
}

/// Regularizer `α` and Lipschitz bound `γ` of `M = γ W (αI + WᵀW)^{-1/2}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LayerSpec {
    pub alpha: f64,
    pub gamma: f64,
}

impl LayerSpec {
    pub fn new(alpha: f64, gamma: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) || !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "alpha and gamma must be positive and finite, got alpha={alpha}, gamma={gamma}"
            )));
        }
        Ok(Self { alpha, gamma })
    }

    pub fn unit() -> Self {
        Self { alpha: 1.0, gamma: 1.0 }
    }
}

/// Where the series stops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TruncationPolicy {
    /// Sum every term up to the requested order.
    Fixed,
    /// Stop at the smallest term: sum the terms before it and add half of it.
    #[default]
    Optimal,
}

/// Moment tables indexed by order, starting at 1.
#[derive(Debug, Clone)]
pub struct MomentSet {
    tables: Vec<MomentTable>,
}

impl MomentSet {
    /// Bundled tables for orders `1..=10`.
    pub fn bundled() -> Result<Self> {
        Self::bundled_up_to(MAX_BUNDLED_ORDER)
    }

    pub fn bundled_up_to(max_k: usize) -> Result<Self> {
        let tables = (1..=max_k).map(bundled_table).collect::<Result<_>>()?;
        Ok(Self { tables })
    }

    /// Tables computed by matching enumeration for orders `1..=max_k`.
    pub fn enumerated(max_k: usize) -> Result<Self> {
        let tables = (1..=max_k).map(moment_table).collect::<Result<_>>()?;
        Ok(Self { tables })
    }

    pub fn from_tables(tables: Vec<MomentTable>) -> Result<Self> {
        for (i, t) in tables.iter().enumerate() {
            if t.order() != i + 1 {
                return Err(Error::TableMismatch {
                    k: i + 1,
                    table_k: t.order(),
                });
            }
        }
        Ok(Self { tables })
    }

    pub fn max_order(&self) -> usize {
        self.tables.len()
    }

    pub fn table(&self, k: usize) -> Option<&MomentTable> {
        k.checked_sub(1).and_then(|i| self.tables.get(i))
    }

    /// `E[tr(S^k)]`, including `k = 0`.
    pub fn trace_power(&self, spec: &WishartSpec, k: usize) -> Result<f64> {
        if k == 0 {
            return expected_trace_power(spec, 0, None);
        }
        let table = self.table(k).ok_or(Error::MissingTable(k))?;
        expected_trace_power(spec, k, Some(table))
    }
}

const LOG_SAFE: f64 = 690.0; // ≈ ln(1e300)

/// `E[tr(S^k)] = σ^{2k} Σ C_{a,b} n^a m^b`; `k = 0` gives `m` without a table.
pub fn expected_trace_power(spec: &WishartSpec, k: usize, table: Option<&MomentTable>) -> Result<f64> {
    let (m, n) = (spec.m as f64, spec.n as f64);
    if k == 0 {
        return Ok(m);
    }
    let table = table.ok_or(Error::MissingTable(k))?;
    if table.order() != k {
        return Err(Error::TableMismatch {
            k,
            table_k: table.order(),
        });
    }
    if spec.sigma2 == 0.0 {
        return Ok(0.0);
    }
    let log_poly_max = table
        .monomials()
        .map(|(a, b, c)| (c as f64).ln() + a as f64 * n.ln() + b as f64 * m.ln())
        .fold(f64::NEG_INFINITY, f64::max);
    let log_scale = k as f64 * spec.sigma2.ln();
    if log_poly_max > LOG_SAFE || log_scale.abs() > LOG_SAFE {
        return Ok(log_space_sum(table, m, n, log_scale));
    }
    // Horner in m within each row, then Horner in n across rows.
    let mut total = 0.0;
    for row in table.rows() {
        let in_m = row.iter().rev().fold(0.0, |acc, &c| acc * m + c as f64) * m;
        total = total * n + in_m;
    }
    total *= n;
    Ok(total * spec.sigma2.powi(k as i32))
}

fn log_space_sum(table: &MomentTable, m: f64, n: f64, log_scale: f64) -> f64 {
    let logs: Vec<f64> = table
        .monomials()
        .map(|(a, b, c)| (c as f64).ln() + a as f64 * n.ln() + b as f64 * m.ln() + log_scale)
        .collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logs.iter().map(|l| (l - max).exp()).sum();
    (max + sum.ln()).exp()
}

/// Closed forms `E[tr S] = nmσ²` and `E[tr S²] = σ⁴ nm(m + 1 + n)`.
pub fn closed_form_trace_power(spec: &WishartSpec, k: usize) -> Result<f64> {
    let (m, n, s2) = (spec.m as f64, spec.n as f64, spec.sigma2);
    match k {
        1 => Ok(n * m * s2),
        2 => Ok(s2 * s2 * n * m * (m + 1.0 + n)),
        _ => Err(Error::InvalidArgument(format!(
            "closed forms exist for orders 1 and 2 only, got {k}"
        ))),
    }
}

/// Largest `σ²` for which `‖S‖ < α` holds with probability `≥ 1 − 2e^{−t²/2}`:
/// `α / (√m + √n + t)²`.
pub fn convergence_bound(m: usize, n: usize, alpha: f64, t: f64) -> f64 {
    let root = (m as f64).sqrt() + (n as f64).sqrt() + t.max(0.0);
    alpha / (root * root)
}

/// Truncated series for `E[tr((αI + S)⁻¹)]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InverseTraceSeries {
    pub value: f64,
    /// Last order summed in full.
    pub used_k: usize,
    /// Signed terms `(−1)^k α^{−(k+1)} E[tr(S^k)]` for `k = 0..=K`.
    pub terms: Vec<f64>,
    /// Magnitude of the first term left out (halved under `Optimal`).
    pub error_estimate: f64,
}

pub fn truncated_inverse_trace(
    spec: &WishartSpec,
    layer: &LayerSpec,
    max_k: usize,
    policy: TruncationPolicy,
    moments: &MomentSet,
) -> Result<InverseTraceSeries> {
    if max_k > moments.max_order() {
        return Err(Error::MissingTable(max_k));
    }
    let alpha = layer.alpha;
    let terms = (0..=max_k)
        .map(|k| {
            let moment = moments.trace_power(spec, k)?;
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            Ok(sign * moment / alpha.powi(k as i32 + 1))
        })
        .collect::<Result<Vec<f64>>>()?;

    let (value, used_k, error_estimate) = match policy {
        TruncationPolicy::Fixed => (terms.iter().sum(), max_k, 0.0),
        TruncationPolicy::Optimal => {
            // first term whose successor is no smaller; the last term if the
            // magnitudes keep shrinking through max_k
            let smallest = (0..max_k)
                .find(|&k| terms[k + 1].abs() >= terms[k].abs())
                .unwrap_or(max_k);
            if smallest == 0 {
                (terms[0], 0, terms.get(1).map_or(0.0, |t| t.abs()))
            } else {
                let head: f64 = terms[..smallest].iter().sum();
                (head + 0.5 * terms[smallest], smallest - 1, 0.5 * terms[smallest].abs())
            }
        }
    };
    Ok(InverseTraceSeries {
        value,
        used_k,
        terms,
        error_estimate,
    })
}

/// Series estimate of `Var[y]` for the normalized layer.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarianceReport {
    pub value: f64,
    pub truncation_k: usize,
    pub within_validity: bool,
    pub term_magnitudes: Vec<f64>,
    pub error_estimate: f64,
    pub sigma2_bound: f64,
}

impl VarianceReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

pub fn marginal_variance_series(
    spec: &WishartSpec,
    layer: &LayerSpec,
    max_k: usize,
    policy: TruncationPolicy,
    moments: &MomentSet,
) -> Result<VarianceReport> {
    let series = truncated_inverse_trace(spec, layer, max_k, policy, moments)?;
    let g2 = layer.gamma * layer.gamma;
    let scale = g2 * layer.alpha / spec.m as f64;
    let bound = convergence_bound(spec.m, spec.n, layer.alpha, 0.0);
    let value = if spec.sigma2 == 0.0 {
        0.0
    } else {
        g2 - scale * series.value
    };
    Ok(VarianceReport {
        value,
        truncation_k: series.used_k,
        within_validity: spec.sigma2 < bound,
        term_magnitudes: series.terms,
        error_estimate: scale * series.error_estimate,
        sigma2_bound: bound,
    })
}
