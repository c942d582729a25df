//! Two-qubit depolarizing channel `E(ρ) = (1−p)ρ + p·I/4` used as the
//! gate-error model. The per-gate rate is fitted from mean output purities.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{mean_purity, per_gate_slope_unchecked, HaarSampler};
use crate::msgate::ms_unitary;
use crate::qcore::{c, unitary_to_chi, ChiMatrix, DensityMatrix, Mat16, Op};

/// Tolerances used to accept a χ as CPTP before composing.
pub const CPTP_EIG_FLOOR: f64 = -1e-8;
pub const CPTP_TP_TOL: f64 = 1e-6;

fn check_probability(p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) || !p.is_finite() {
        return Err(Error::Probability(p));
    }
    Ok(())
}

/// Depolarization per gate time.
///
/// Repeated gates compose one channel per gate, so after `n` gates the total
/// depolarizing probability is `1 − (1−α)ⁿ`; the linear form `α·n` is kept
/// for reporting and for continuous-time use within a gate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepolModel {
    pub alpha: f64,
    /// Gate time in seconds.
    pub t_unit: f64,
}

impl DepolModel {
    pub fn new(alpha: f64, t_unit: f64) -> Result<Self> {
        check_probability(alpha)?;
        if t_unit.is_nan() || t_unit <= 0.0 {
            return Err(Error::InvalidArgument(format!("gate time must be positive, got {t_unit}")));
        }
        Ok(Self { alpha, t_unit })
    }

    pub fn p_after_gates(&self, n: u32) -> f64 {
        1.0 - (1.0 - self.alpha).powi(n as i32)
    }

    pub fn p_linear(&self, n: u32) -> f64 {
        (self.alpha * n as f64).min(1.0)
    }

    /// Continuous-time probability `α·t/t_g`, saturating at 1.
    pub fn p_at_time(&self, t: f64) -> f64 {
        (self.alpha * t / self.t_unit).clamp(0.0, 1.0)
    }
}

/// `(1−p)ρ + p·I/4`.
pub fn depolarize(rho: &DensityMatrix, p: f64) -> Result<DensityMatrix> {
    check_probability(p)?;
    DensityMatrix::from_hermitian_part(depolarize_op(rho.matrix(), p))
}

pub(crate) fn depolarize_op(m: &Op, p: f64) -> Op {
    m.scale(1.0 - p) + Op::identity().scale(p * m.trace().re / 4.0)
}

/// Diagonal χ with `χ_{II,II} = 1 − 15p/16` and `p/16` on the other 15 entries.
pub fn depol_chi(p: f64) -> Result<ChiMatrix> {
    check_probability(p)?;
    let mut m = Mat16::from_diagonal_element(c(p / 16.0, 0.0));
    m[(0, 0)] = c(1.0 - 15.0 * p / 16.0, 0.0);
    ChiMatrix::new(m)
}

/// χ of `ρ ↦ second(first(ρ))`. Both inputs must be CPTP.
pub fn compose_chi(first: &ChiMatrix, second: &ChiMatrix) -> Result<ChiMatrix> {
    for chi in [first, second] {
        let min = chi.min_eigenvalue();
        if min < CPTP_EIG_FLOOR {
            return Err(Error::NotPositive(min));
        }
        let tp = chi.tp_residual();
        if tp > CPTP_TP_TOL {
            return Err(Error::NotTracePreserving(tp));
        }
    }
    ChiMatrix::from_superoperator(&first.superoperator().then(&second.superoperator()))
}

/// `n` MS gates, each followed by depolarization with probability `alpha`.
pub fn ms_depolarized_chi(n: u32, alpha: f64) -> Result<ChiMatrix> {
    check_probability(alpha)?;
    let gate = unitary_to_chi(&ms_unitary(1))?.superoperator().then(&depol_chi(alpha)?.superoperator());
    let mut total = ChiMatrix::identity().superoperator();
    for _ in 0..n {
        total = total.then(&gate);
    }
    ChiMatrix::from_superoperator(&total)
}

/// Result of matching the purity-vs-gates slope.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepolFit {
    pub alpha: f64,
    pub included_n: Vec<u32>,
    pub model_purities: BTreeMap<u32, f64>,
    pub data_purities: BTreeMap<u32, f64>,
    pub data_slope: f64,
    pub model_slope: f64,
}

const ALPHA_MAX: f64 = 0.5;
const ALPHA_TOL: f64 = 1e-6;
const GRID: usize = 50;

/// Finds the depolarization rate whose model mean-purity slope (over the
/// included gate counts) matches the slope of the measured purities.
///
/// The model curve is the Haar-mean purity of `(D_α ∘ U_MS)ⁿ` evaluated with
/// `sampler`; the search is golden-section over α ∈ [0, 0.5].
pub fn fit_depol_rate(
    purities: &BTreeMap<u32, f64>,
    exclude_identity: bool,
    sampler: &HaarSampler,
) -> Result<DepolFit> {
    let data: BTreeMap<u32, f64> =
        purities.iter().filter(|(&n, _)| !(exclude_identity && n == 0)).map(|(&n, &v)| (n, v)).collect();
    if data.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least two gate counts after exclusion, have {}",
            data.len()
        )));
    }
    let included: Vec<u32> = data.keys().copied().collect();
    let data_slope = per_gate_slope_unchecked(&data);

    let model_curve = |alpha: f64| -> Result<BTreeMap<u32, f64>> {
        included.iter().map(|&n| Ok((n, mean_purity(&ms_depolarized_chi(n, alpha)?, sampler)?))).collect()
    };
    let mismatch = |alpha: f64| -> Result<f64> {
        let s = per_gate_slope_unchecked(&model_curve(alpha)?);
        Ok((s - data_slope).powi(2))
    };

    // The slope is not monotone in α (purities saturate at 1/4 for strong
    // depolarization), so bracket the global minimum on a grid first.
    let step = ALPHA_MAX / GRID as f64;
    let grid: Vec<f64> = (0..=GRID).map(|k| mismatch(k as f64 * step)).collect::<Result<_>>()?;
    let best = (0..=GRID).min_by(|&a, &b| grid[a].total_cmp(&grid[b])).unwrap_or(0);
    let (mut lo, mut hi) = (best.saturating_sub(1) as f64 * step, (best + 1).min(GRID) as f64 * step);

    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let (mut f1, mut f2) = (mismatch(x1)?, mismatch(x2)?);
    while hi - lo > ALPHA_TOL {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = mismatch(x1)?;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = mismatch(x2)?;
        }
    }
    let mut alpha = 0.5 * (lo + hi);
    if grid[best] <= mismatch(alpha)? {
        alpha = best as f64 * step;
    }
    let model_purities = model_curve(alpha)?;
    let model_slope = per_gate_slope_unchecked(&model_purities);
    Ok(DepolFit { alpha, included_n: included, model_purities, data_purities: data, data_slope, model_slope })
}
