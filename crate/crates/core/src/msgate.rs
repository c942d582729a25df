//! The Mølmer-Sørensen gate. The ideal propagator covers gate-time multiples;
//! the numerical spin-motion dynamics resolve the evolution in between, and the
//! parity-scan analysis turns a final state into a Bell-fidelity estimate.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Matrix3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::protocol::rotation;
use crate::qcore::{c, hermitian_eigen, kron, DensityMatrix, Op, Op2, Pauli, PureState, C64};

/// `S_y = σ_y ⊗ I + I ⊗ σ_y`.
pub fn s_y() -> Op {
    let y = Pauli::Y.matrix();
    let i = Op2::identity();
    kron(&y, &i) + kron(&i, &y)
}

/// `exp(−i(π/8)S_y²)ⁿ`, evaluated on the eigenbasis of `S_y²`.
pub fn ms_unitary(n: u32) -> Op {
    let sq = s_y() * s_y();
    let (vals, vecs) = hermitian_eigen(&sq);
    // eigenvalues are exactly 0 or 4; rounding them keeps U⁴ = I exact
    let phase = |v: f64| {
        let k = (v.round() as i64 * n as i64).rem_euclid(16);
        C64::from_polar(1.0, -PI / 8.0 * k as f64)
    };
    let d = Op::from_diagonal(&vals.map(phase));
    vecs * d * vecs.adjoint()
}

/// Physical parameters of the bichromatic gate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MSGateParams {
    /// Detuning from the motional sidebands (rad/s).
    pub epsilon: f64,
    /// Lamb-Dicke parameter.
    pub eta: f64,
    /// Carrier Rabi frequency (rad/s).
    pub omega: f64,
    /// Motional mode frequency (rad/s); enters only through the Lamb-Dicke
    /// approximation and is echoed in outputs.
    pub mode_freq: f64,
    pub n_gates: u32,
    /// Number of Fock levels kept.
    pub fock_cutoff: usize,
    #[serde(default)]
    pub initial_nbar: f64,
}

pub const DEFAULT_EPSILON: f64 = 2.0 * PI * 7.7e3;
pub const DEFAULT_ETA: f64 = 0.05;
pub const DEFAULT_MODE_FREQ: f64 = 2.0 * PI * 1.679e6;
pub const DEFAULT_FOCK_CUTOFF: usize = 20;

impl Default for MSGateParams {
    fn default() -> Self {
        Self::calibrated(DEFAULT_EPSILON, DEFAULT_ETA)
    }
}

impl MSGateParams {
    /// Parameters satisfying `ηΩ = ε/4`.
    pub fn calibrated(epsilon: f64, eta: f64) -> Self {
        Self {
            epsilon,
            eta,
            omega: epsilon / (4.0 * eta),
            mode_freq: DEFAULT_MODE_FREQ,
            n_gates: 1,
            fock_cutoff: DEFAULT_FOCK_CUTOFF,
            initial_nbar: 0.0,
        }
    }

    pub fn gate_time(&self) -> f64 {
        2.0 * PI / self.epsilon
    }

    /// Spin-motion coupling strength `g = ηΩ`.
    pub fn coupling(&self) -> f64 {
        self.eta * self.omega
    }

    pub fn is_calibrated(&self) -> bool {
        (self.coupling() - self.epsilon / 4.0).abs() <= 1e-9 * self.epsilon.abs()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.epsilon) || !positive(self.eta) || !positive(self.omega) {
            return Err(Error::InvalidArgument("epsilon, eta and omega must be positive".into()));
        }
        if self.fock_cutoff < 3 {
            return Err(Error::InvalidArgument("fock_cutoff must be at least 3".into()));
        }
        if !(self.initial_nbar.is_finite() && self.initial_nbar >= 0.0) {
            return Err(Error::InvalidArgument("initial_nbar must be non-negative".into()));
        }
        Ok(())
    }

    /// `count` evenly spaced times covering `[0, n_gates·t_g]`.
    pub fn time_grid(&self, count: usize) -> Vec<f64> {
        let end = self.n_gates.max(1) as f64 * self.gate_time();
        let last = count.max(2) - 1;
        (0..=last).map(|k| end * k as f64 / last as f64).collect()
    }
}

/// Populations of zero, one and two bright ions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopulationCurve {
    pub times: Vec<f64>,
    pub p0: Vec<f64>,
    pub p1: Vec<f64>,
    pub p2: Vec<f64>,
}

/// `(P0, P1, P2)` where `P_k` is the probability of `k` bright ions.
pub fn populations(rho: &DensityMatrix) -> (f64, f64, f64) {
    let p = |i| rho.population(i).clamp(0.0, 1.0);
    (p(3), p(1) + p(2), p(0))
}

const STEPS_PER_GATE: f64 = 2000.0;
const HALVING_TOL: f64 = 1e-7;
const EDGE_POP_TOL: f64 = 1e-8;
const THERMAL_TAIL: f64 = 1e-8;

struct Dynamics {
    g: f64,
    eps: f64,
    levels: usize,
    sy: Op,
}

impl Dynamics {
    /// `−i H(t) ψ` with `H = g S_y (a e^{iεt} + a† e^{−iεt})`.
    fn deriv(&self, t: f64, psi: &DVector<C64>, out: &mut DVector<C64>) {
        let n = self.levels;
        let up = C64::from_polar(self.g, self.eps * t);
        let down = up.conj();
        let minus_i = c(0.0, -1.0);
        for s in 0..4 {
            for k in 0..n {
                let mut acc = c(0.0, 0.0);
                for s2 in 0..4 {
                    let y = self.sy[(s, s2)];
                    if y.norm_sqr() == 0.0 {
                        continue;
                    }
                    let mut m = c(0.0, 0.0);
                    if k + 1 < n {
                        m += up * psi[s2 * n + k + 1] * ((k + 1) as f64).sqrt();
                    }
                    if k > 0 {
                        m += down * psi[s2 * n + k - 1] * (k as f64).sqrt();
                    }
                    acc += y * m;
                }
                out[s * n + k] = minus_i * acc;
            }
        }
    }

    fn rk4_step(&self, t: f64, h: f64, psi: &mut DVector<C64>, scratch: &mut [DVector<C64>; 5]) {
        let [k1, k2, k3, k4, tmp] = scratch;
        self.deriv(t, psi, k1);
        tmp.copy_from(psi);
        tmp.axpy(c(h / 2.0, 0.0), k1, c(1.0, 0.0));
        self.deriv(t + h / 2.0, tmp, k2);
        tmp.copy_from(psi);
        tmp.axpy(c(h / 2.0, 0.0), k2, c(1.0, 0.0));
        self.deriv(t + h / 2.0, tmp, k3);
        tmp.copy_from(psi);
        tmp.axpy(c(h, 0.0), k3, c(1.0, 0.0));
        self.deriv(t + h, tmp, k4);
        psi.axpy(c(h / 6.0, 0.0), k1, c(1.0, 0.0));
        psi.axpy(c(h / 3.0, 0.0), k2, c(1.0, 0.0));
        psi.axpy(c(h / 3.0, 0.0), k3, c(1.0, 0.0));
        psi.axpy(c(h / 6.0, 0.0), k4, c(1.0, 0.0));
    }

    fn edge_population(&self, psi: &DVector<C64>) -> f64 {
        let n = self.levels;
        (0..4).map(|s| psi[s * n + n - 1].norm_sqr() + psi[s * n + n - 2].norm_sqr()).sum()
    }

    fn reduced(&self, psi: &DVector<C64>) -> Op {
        let n = self.levels;
        let m = DMatrix::from_fn(4, n, |s, k| psi[s * n + k]);
        let r = &m * m.adjoint();
        Op::from_fn(|i, j| r[(i, j)])
    }

    /// Evolves `|SS⟩ ⊗ |n0⟩` and returns the reduced spin state at each time.
    fn evolve_fock(&self, n0: usize, times: &[f64], h_max: f64) -> Result<Vec<Op>> {
        let dim = 4 * self.levels;
        let mut psi = DVector::from_element(dim, c(0.0, 0.0));
        psi[n0] = c(1.0, 0.0);
        let mut scratch: [DVector<C64>; 5] = std::array::from_fn(|_| DVector::zeros(dim));
        let mut t = 0.0;
        let mut out = Vec::with_capacity(times.len());
        for &target in times {
            let span = target - t;
            let steps = (span / h_max).ceil() as usize;
            if steps > 0 {
                let h = span / steps as f64;
                for k in 0..steps {
                    self.rk4_step(t + k as f64 * h, h, &mut psi, &mut scratch);
                    let edge = self.edge_population(&psi);
                    if edge > EDGE_POP_TOL {
                        return Err(Error::CutoffInsufficient { cutoff: self.levels, population: edge });
                    }
                }
            }
            t = target;
            out.push(self.reduced(&psi));
        }
        Ok(out)
    }
}

fn thermal_weights(nbar: f64, levels: usize) -> Result<Vec<f64>> {
    if nbar == 0.0 {
        return Ok(vec![1.0]);
    }
    let ratio = nbar / (nbar + 1.0);
    let mut weights = Vec::new();
    let mut w = 1.0 / (nbar + 1.0);
    let mut total = 0.0;
    while total <= 1.0 - THERMAL_TAIL {
        if weights.len() + 2 >= levels {
            return Err(Error::CutoffInsufficient { cutoff: levels, population: 1.0 - total });
        }
        weights.push(w);
        total += w;
        w *= ratio;
    }
    Ok(weights)
}

fn spin_states_with_step(params: &MSGateParams, times: &[f64], h_max: f64) -> Result<Vec<Op>> {
    let dynamics = Dynamics { g: params.coupling(), eps: params.epsilon, levels: params.fock_cutoff, sy: s_y() };
    let weights = thermal_weights(params.initial_nbar, params.fock_cutoff)?;
    let mut acc = vec![Op::zeros(); times.len()];
    for (n0, w) in weights.iter().enumerate() {
        for (a, r) in acc.iter_mut().zip(dynamics.evolve_fock(n0, times, h_max)?) {
            *a += r.scale(*w);
        }
    }
    let total: f64 = weights.iter().sum();
    Ok(acc.into_iter().map(|m| m.unscale(total)).collect())
}

/// Reduced spin states of the numerically integrated gate dynamics, starting
/// from `|SS⟩` with a thermal (or ground-state) motional mode. The spin state
/// at time `t` is mixed towards `I/4` with probability `α·t/t_g`.
pub fn propagate_spin_states(params: &MSGateParams, times: &[f64], alpha: f64) -> Result<Vec<DensityMatrix>> {
    params.validate()?;
    if !params.is_calibrated() {
        return Err(Error::InvalidArgument("gate parameters violate eta*omega = epsilon/4".into()));
    }
    if times.iter().any(|t| !t.is_finite() || *t < 0.0) || times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidArgument("times must be finite, non-negative and sorted".into()));
    }
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(Error::InvalidArgument(format!("depolarization rate {alpha} must be non-negative")));
    }
    let tg = params.gate_time();
    let h = tg / STEPS_PER_GATE;
    let coarse = spin_states_with_step(params, times, h)?;
    let fine = spin_states_with_step(params, times, h / 2.0)?;
    let change = coarse
        .iter()
        .zip(&fine)
        .flat_map(|(a, b)| (0..4).map(move |i| (a[(i, i)].re - b[(i, i)].re).abs()))
        .fold(0.0, f64::max);
    if change > HALVING_TOL {
        return Err(Error::NonConvergentIntegration(change));
    }
    Ok(fine
        .into_iter()
        .zip(times)
        .map(|(m, &t)| {
            let p = (alpha * t / tg).min(1.0);
            let m = (m + m.adjoint()).scale(0.5);
            let m = m.scale(1.0 - p) + Op::identity().scale(p / 4.0);
            DensityMatrix::assume_valid(m.unscale(m.trace().re))
        })
        .collect())
}

pub fn propagate_populations(params: &MSGateParams, times: &[f64]) -> Result<PopulationCurve> {
    propagate_populations_depolarized(params, times, 0.0)
}

pub fn propagate_populations_depolarized(params: &MSGateParams, times: &[f64], alpha: f64) -> Result<PopulationCurve> {
    let states = propagate_spin_states(params, times, alpha)?;
    let mut curve = PopulationCurve { times: times.to_vec(), p0: Vec::new(), p1: Vec::new(), p2: Vec::new() };
    for rho in &states {
        let (p0, p1, p2) = populations(rho);
        curve.p0.push(p0);
        curve.p1.push(p1);
        curve.p2.push(p2);
    }
    Ok(curve)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParityScan {
    pub phases: Vec<f64>,
    pub parity: Vec<f64>,
    /// `|A|` of the fitted `A·sin(2φ + φ0) + B`.
    pub fitted_contrast: f64,
    pub fitted_phase: f64,
    pub offset: f64,
    pub residual_rms: f64,
}

/// Parity `P0 + P2 − P1 = ⟨Z⊗Z⟩`.
pub fn parity(rho: &DensityMatrix) -> f64 {
    let (p0, p1, p2) = populations(rho);
    p0 + p2 - p1
}

/// Global π/2 pulse about `(cos φ, sin φ, 0)` on both ions.
pub fn analysis_pulse(phi: f64) -> Op {
    let sigma = Pauli::X.matrix() * c(phi.cos(), 0.0) + Pauli::Y.matrix() * c(phi.sin(), 0.0);
    let r = rotation(&sigma, PI / 2.0);
    kron(&r, &r)
}

/// Least-squares fit of `a·sin 2φ + b·cos 2φ + B` to a parity curve.
pub fn fit_parity(phases: &[f64], parity: &[f64]) -> Result<ParityScan> {
    if phases.len() != parity.len() {
        return Err(Error::InvalidArgument("phase and parity lists differ in length".into()));
    }
    if phases.len() < 4 {
        return Err(Error::InsufficientData(format!("parity fit needs 4 phases, have {}", phases.len())));
    }
    let basis = |phi: f64| [(2.0 * phi).sin(), (2.0 * phi).cos(), 1.0];
    let mut ata = Matrix3::<f64>::zeros();
    let mut atb = nalgebra::Vector3::<f64>::zeros();
    for (&phi, &y) in phases.iter().zip(parity) {
        let f = basis(phi);
        for i in 0..3 {
            atb[i] += f[i] * y;
            for j in 0..3 {
                ata[(i, j)] += f[i] * f[j];
            }
        }
    }
    let coef = ata
        .cholesky()
        .ok_or_else(|| Error::Singular("parity phases do not determine a 2φ oscillation".into()))?
        .solve(&atb);
    let ss: f64 = phases
        .iter()
        .zip(parity)
        .map(|(&phi, &y)| {
            let f = basis(phi);
            (y - f[0] * coef[0] - f[1] * coef[1] - f[2] * coef[2]).powi(2)
        })
        .sum();
    Ok(ParityScan {
        phases: phases.to_vec(),
        parity: parity.to_vec(),
        fitted_contrast: coef[0].hypot(coef[1]),
        fitted_phase: coef[1].atan2(coef[0]),
        offset: coef[2],
        residual_rms: (ss / phases.len() as f64).sqrt(),
    })
}

pub fn parity_scan(rho: &DensityMatrix, phases: &[f64]) -> Result<ParityScan> {
    let values: Vec<f64> = phases.iter().map(|&phi| parity(&rho.evolve(&analysis_pulse(phi)))).collect();
    fit_parity(phases, &values)
}

/// Bell-state fidelity from populations and parity contrast,
/// `(P0 + P2)/2 + C/2`, clamped to [0, 1].
pub fn bell_fidelity(p0: f64, p2: f64, contrast: f64) -> f64 {
    let f = (p0 + p2) / 2.0 + contrast / 2.0;
    if !(0.0..=1.0).contains(&f) {
        log::warn!("inconsistent Bell-fidelity inputs p0={p0} p2={p2} contrast={contrast}; clamping {f}");
    }
    f.clamp(0.0, 1.0)
}

/// The ideal gate output `U_MS|SS⟩`.
pub fn bell_state() -> PureState {
    PureState::ms_bell()
}
