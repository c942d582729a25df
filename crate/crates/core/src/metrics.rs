//! Process comparison: mean fidelity and mean output purity over pure inputs,
//! and per-gate slopes of those quantities.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::Vector4;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::msgate::ms_unitary;
use crate::noise::{depolarize_op, DepolModel, CPTP_EIG_FLOOR, CPTP_TP_TOL};
use crate::protocol::input_labels;
use crate::qcore::{c, fidelity, purity, state_tensor, ChiMatrix, DensityMatrix, PureState, SuperOp};

pub const DEFAULT_HAAR_SAMPLES: usize = 2000;

/// Deterministic stream of Haar-random two-qubit pure states.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HaarSampler {
    pub seed: u64,
    pub n_samples: usize,
}

impl HaarSampler {
    pub fn new(seed: u64, n_samples: usize) -> Self {
        Self { seed, n_samples }
    }

    pub fn with_seed(seed: u64) -> Self {
        Self::new(seed, DEFAULT_HAAR_SAMPLES)
    }

    /// Normalized complex Gaussian vectors, which are Haar distributed.
    pub fn states(&self) -> Vec<PureState> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..self.n_samples)
            .map(|_| {
                let mut draw = || -> f64 { StandardNormal.sample(&mut rng) };
                let v = Vector4::from_fn(|_, _| c(draw(), draw()));
                PureState::normalized(v).expect("gaussian vector is nonzero")
            })
            .collect()
    }
}

fn require_cptp(chi: &ChiMatrix) -> Result<()> {
    let min = chi.min_eigenvalue();
    if min < CPTP_EIG_FLOOR {
        return Err(Error::NotPositive(min));
    }
    let tp = chi.tp_residual();
    if tp > CPTP_TP_TOL {
        return Err(Error::NotTracePreserving(tp));
    }
    Ok(())
}

// CPTP outputs can carry eigenvalues slightly below the validation floor when
// the χ itself sits at its own −1e-8 floor; fidelity and purity clamp anyway.
fn output(s: &SuperOp, rho: &DensityMatrix) -> DensityMatrix {
    let m = s.apply_op(rho.matrix());
    DensityMatrix::assume_valid((m + m.adjoint()).scale(0.5))
}

fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = pairwise_sum(values) / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= 8 {
        return values.iter().sum();
    }
    let (a, b) = values.split_at(values.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

/// The 16 tomography input states.
pub fn tomography_inputs() -> Vec<PureState> {
    input_labels().into_iter().map(|(a, b)| state_tensor(&a.state(), &b.state())).collect()
}

/// Monte-Carlo mean fidelity together with its diagnostics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FidelityEstimate {
    pub mean: f64,
    pub std_error: f64,
    /// `(d·F_e + 1)/(d + 1)` when the target is unitary.
    pub closed_form: Option<f64>,
    /// Average over the 16 tomography inputs instead of Haar samples.
    pub input_average: f64,
}

/// Pauli-basis expansion of the target unitary if `chi` is a unitary channel
/// (rank one with unit trace).
fn unitary_coefficients(chi: &ChiMatrix) -> Option<nalgebra::SVector<crate::qcore::C64, 16>> {
    let eig = chi.matrix().symmetric_eigen();
    let (k, &top) = eig.eigenvalues.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1))?;
    let rest: f64 = eig.eigenvalues.iter().enumerate().filter(|(i, _)| *i != k).map(|(_, v)| v.abs()).sum();
    if (top - 1.0).abs() > 1e-9 || rest > 1e-9 {
        return None;
    }
    Some(eig.eigenvectors.column(k).into_owned())
}

/// Entanglement fidelity of `measured` with respect to a unitary target
/// with coefficient vector `c`: `F_e = c† χ c`.
pub fn entanglement_fidelity(measured: &ChiMatrix, target: &ChiMatrix) -> Option<f64> {
    let coeffs = unitary_coefficients(target)?;
    Some((coeffs.adjoint() * measured.matrix() * coeffs)[(0, 0)].re)
}

pub fn mean_fidelity_report(
    measured: &ChiMatrix,
    target: &ChiMatrix,
    sampler: &HaarSampler,
) -> Result<FidelityEstimate> {
    require_cptp(measured)?;
    require_cptp(target)?;
    let (sm, st) = (measured.superoperator(), target.superoperator());
    let per_state = |psi: &PureState| {
        let rho = psi.projector();
        fidelity(&output(&st, &rho), &output(&sm, &rho))
    };
    let values: Vec<f64> = sampler.states().iter().map(per_state).collect();
    let (mean, std_error) = mean_and_stderr(&values);
    let inputs: Vec<f64> = tomography_inputs().iter().map(per_state).collect();
    let closed_form = entanglement_fidelity(measured, target).map(|fe| (4.0 * fe + 1.0) / 5.0);
    Ok(FidelityEstimate { mean, std_error, closed_form, input_average: mean_and_stderr(&inputs).0 })
}

/// Haar-average of `F(E_target(ρ), E_measured(ρ))` over pure inputs.
pub fn mean_fidelity(measured: &ChiMatrix, target: &ChiMatrix, sampler: &HaarSampler) -> Result<f64> {
    Ok(mean_fidelity_report(measured, target, sampler)?.mean)
}

/// Haar-average output purity `Tr[E(ρ)²]`.
pub fn mean_purity(process: &ChiMatrix, sampler: &HaarSampler) -> Result<f64> {
    require_cptp(process)?;
    let s = process.superoperator();
    let values: Vec<f64> = sampler.states().iter().map(|psi| purity(&output(&s, &psi.projector()))).collect();
    Ok(mean_and_stderr(&values).0)
}

pub(crate) fn per_gate_slope_unchecked(values: &BTreeMap<u32, f64>) -> f64 {
    let n = values.len() as f64;
    let mx = values.keys().map(|&k| k as f64).sum::<f64>() / n;
    let my = values.values().sum::<f64>() / n;
    let sxy: f64 = values.iter().map(|(&k, &v)| (k as f64 - mx) * (v - my)).sum();
    let sxx: f64 = values.keys().map(|&k| (k as f64 - mx).powi(2)).sum();
    -sxy / sxx
}

/// Least-squares decay rate per gate (positive when values decrease with n).
pub fn per_gate_slope(values: &BTreeMap<u32, f64>, exclude: &BTreeSet<u32>) -> Result<f64> {
    let kept: BTreeMap<u32, f64> = values.iter().filter(|(n, _)| !exclude.contains(n)).map(|(&n, &v)| (n, v)).collect();
    if kept.len() < 2 {
        return Err(Error::InsufficientData(format!("slope needs two points, have {}", kept.len())));
    }
    Ok(per_gate_slope_unchecked(&kept))
}

/// Haar-average fidelity of the measured outputs to `n` ideal MS gates
/// followed by the accumulated depolarization `1 − (1−α)ⁿ`.
pub fn fidelity_vs_depolarized_target(measured: &ChiMatrix, n: u32, alpha: f64, sampler: &HaarSampler) -> Result<f64> {
    require_cptp(measured)?;
    let p = DepolModel::new(alpha, 1.0)?.p_after_gates(n);
    let u = ms_unitary(n);
    let sm = measured.superoperator();
    let values: Vec<f64> = sampler
        .states()
        .iter()
        .map(|psi| {
            let ideal = psi.evolve(&u).projector();
            let target = DensityMatrix::assume_valid(depolarize_op(ideal.matrix(), p));
            fidelity(&target, &output(&sm, &psi.projector()))
        })
        .collect();
    Ok(mean_and_stderr(&values).0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{compose_chi, depol_chi};
    use crate::qcore::unitary_to_chi;

    #[test]
    fn haar_moments() {
        let s = HaarSampler::new(11, 4000);
        let states = s.states();
        let fixed = PureState::basis(0);
        let overlaps: Vec<f64> = states.iter().map(|p| p.overlap(&fixed).norm_sqr()).collect();
        let (mean, se) = mean_and_stderr(&overlaps);
        // E|⟨φ|ψ⟩|² = 1/d, Var = (d−1)/(d²(d+1)) = 3/80
        assert!((mean - 0.25).abs() < 3.0 * se, "{mean} ± {se}");
        assert!((se - (3.0f64 / 80.0 / 4000.0).sqrt()).abs() < 5e-4);
        assert_eq!(states, HaarSampler::new(11, 4000).states());
    }

    #[test]
    fn self_fidelity_is_one() {
        let ms = unitary_to_chi(&ms_unitary(1)).unwrap();
        let s = HaarSampler::new(3, 200);
        assert!((mean_fidelity(&ms, &ms, &s).unwrap() - 1.0).abs() < 1e-9);
        let noisy = compose_chi(&ms, &depol_chi(0.2).unwrap()).unwrap();
        assert!((mean_fidelity(&noisy, &noisy, &s).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn depolarized_ms_fidelity() {
        let p = 0.018;
        let ms = unitary_to_chi(&ms_unitary(1)).unwrap();
        let noisy = compose_chi(&ms, &depol_chi(p).unwrap()).unwrap();
        let report = mean_fidelity_report(&noisy, &ms, &HaarSampler::with_seed(5)).unwrap();
        // pure-state form ⟨ψ|E(ρ)|ψ⟩ = 1 − p + p/4 for every input
        assert!((report.mean - (1.0 - 0.75 * p)).abs() < 1e-10);
        assert!((report.closed_form.unwrap() - 0.9865).abs() < 1e-12);
    }

    #[test]
    fn purity_examples() {
        let s = HaarSampler::new(9, 300);
        let ms = unitary_to_chi(&ms_unitary(3)).unwrap();
        assert!((mean_purity(&ms, &s).unwrap() - 1.0).abs() < 1e-9);
        let p = 0.018;
        let closed = (1.0 - p) * (1.0 - p) + p * (1.0 - p) / 2.0 + p * p / 4.0;
        assert!((mean_purity(&depol_chi(p).unwrap(), &s).unwrap() - closed).abs() < 1e-9);
        assert!((mean_purity(&depol_chi(1.0).unwrap(), &s).unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn slope_examples() {
        let v: BTreeMap<u32, f64> = [(1, 0.985), (3, 0.955), (5, 0.925)].into_iter().collect();
        let ex: BTreeSet<u32> = [0].into_iter().collect();
        assert!((per_gate_slope(&v, &ex).unwrap() - 0.015).abs() < 1e-12);
        let flat: BTreeMap<u32, f64> = [(1, 0.9), (3, 0.9)].into_iter().collect();
        assert!(per_gate_slope(&flat, &ex).unwrap().abs() < 1e-15);
        let one: BTreeMap<u32, f64> = [(0, 0.9), (1, 0.9)].into_iter().collect();
        assert!(matches!(per_gate_slope(&one, &ex), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn depolarized_target_examples() {
        let s = HaarSampler::new(21, 300);
        let exact = crate::noise::ms_depolarized_chi(3, 0.018).unwrap();
        assert!((fidelity_vs_depolarized_target(&exact, 3, 0.018, &s).unwrap() - 1.0).abs() < 1e-6);
        let ms = unitary_to_chi(&ms_unitary(1)).unwrap();
        let f = fidelity_vs_depolarized_target(&ms, 1, 0.018, &s).unwrap();
        let noisy = compose_chi(&ms, &depol_chi(0.018).unwrap()).unwrap();
        let g = mean_fidelity(&noisy, &ms, &s).unwrap();
        assert!((f - g).abs() < 1e-10, "{f} vs {g}");
    }

    #[test]
    fn rejects_non_cptp() {
        let mut m = crate::qcore::Mat16::zeros();
        m[(0, 0)] = c(2.0, 0.0);
        let bad = ChiMatrix::new(m).unwrap();
        let s = HaarSampler::new(1, 10);
        assert!(mean_purity(&bad, &s).is_err());
        assert!(mean_fidelity(&bad, &ChiMatrix::identity(), &s).is_err());
    }
}
