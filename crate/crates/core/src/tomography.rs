//! Process reconstruction from counts: linear inversion and constrained
//! maximum likelihood.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::MatrixJson;
use crate::optim::{minimize, LbfgsOptions};
use crate::protocol::{
    expectation_from_counts, input_labels, rho_from_expectations, CountsDataset, ExperimentDesign, Observable,
    ReadoutMode, StateEstimate,
};
use crate::qcore::{c, hermitian_eigen, pauli_basis, state_tensor, ChiMatrix, Eigenstate, Mat16, Op, SuperOp, C64};

pub type InputLabel = (Eigenstate, Eigenstate);

/// Floor applied to model probabilities inside logarithms.
pub const PROBABILITY_FLOOR: f64 = 1e-12;

// ---------------------------------------------------------------------------
// linear inversion

fn vectorize(m: &Op) -> nalgebra::SVector<C64, 16> {
    nalgebra::SVector::from_fn(|r, _| m[(r / 4, r % 4)])
}

/// Solves for the process from the outputs of the 16 product inputs.
/// Exact for noiseless data; Hermitian but not necessarily positive.
pub fn linear_inversion(outputs: &BTreeMap<InputLabel, Op>) -> Result<ChiMatrix> {
    let labels = input_labels();
    let mut x = Mat16::zeros();
    let mut y = Mat16::zeros();
    for (col, label) in labels.iter().enumerate() {
        let out = outputs
            .get(label)
            .ok_or_else(|| Error::InsufficientData(format!("no output state for input ({}, {})", label.0, label.1)))?;
        let input = state_tensor(&label.0.state(), &label.1.state()).projector();
        x.set_column(col, &vectorize(input.matrix()));
        y.set_column(col, &vectorize(out));
    }
    let inv = x.try_inverse().ok_or_else(|| Error::Singular("tomography inputs do not span operator space".into()))?;
    ChiMatrix::from_superoperator(&SuperOp::from_matrix(y * inv))
}

fn expectation_from_probabilities(p: &[f64; 3], mode: ReadoutMode) -> f64 {
    match mode {
        ReadoutMode::Joint => p[0] + p[2] - p[1],
        ReadoutMode::Ion1Only | ReadoutMode::Ion2Only => 2.0 * p[2] - 1.0,
    }
}

fn estimates_from_values(values: Vec<f64>, design: &ExperimentDesign) -> Result<BTreeMap<InputLabel, StateEstimate>> {
    let mut grouped: BTreeMap<InputLabel, BTreeMap<Observable, f64>> = BTreeMap::new();
    for (entry, v) in design.settings.iter().zip(values) {
        grouped.entry(entry.prep).or_default().insert(entry.obs, v);
    }
    grouped.into_iter().map(|(label, vals)| Ok((label, rho_from_expectations(&vals)?))).collect()
}

/// Linear state estimates of the 16 outputs from a counts dataset.
pub fn output_estimates_from_counts(
    data: &CountsDataset,
    design: &ExperimentDesign,
) -> Result<BTreeMap<InputLabel, StateEstimate>> {
    data.validate(design)?;
    let mut values = vec![0.0; design.settings.len()];
    for rec in &data.counts {
        values[rec.index] = expectation_from_counts(rec, design.settings[rec.index].readout)?;
    }
    estimates_from_values(values, design)
}

/// Linear state estimates from exact outcome probabilities (one triple per setting).
pub fn output_estimates_from_probabilities(
    probs: &[[f64; 3]],
    design: &ExperimentDesign,
) -> Result<BTreeMap<InputLabel, StateEstimate>> {
    check_len(probs.len(), design)?;
    let values =
        probs.iter().zip(&design.settings).map(|(p, e)| expectation_from_probabilities(p, e.readout)).collect();
    estimates_from_values(values, design)
}

fn check_len(n: usize, design: &ExperimentDesign) -> Result<()> {
    if n != design.settings.len() {
        return Err(Error::Inconsistent(format!("{n} probability triples for {} settings", design.settings.len())));
    }
    Ok(())
}

fn matrices(estimates: BTreeMap<InputLabel, StateEstimate>) -> BTreeMap<InputLabel, Op> {
    estimates.into_iter().map(|(k, v)| (k, v.matrix)).collect()
}

pub fn linear_from_counts(data: &CountsDataset, design: &ExperimentDesign) -> Result<ChiMatrix> {
    linear_inversion(&matrices(output_estimates_from_counts(data, design)?))
}

pub fn linear_from_probabilities(probs: &[[f64; 3]], design: &ExperimentDesign) -> Result<ChiMatrix> {
    linear_inversion(&matrices(output_estimates_from_probabilities(probs, design)?))
}

// ---------------------------------------------------------------------------
// physicality

/// Rescales the input side of a completely positive map so that it becomes
/// trace preserving: `E'(ρ) = E(M^{-1/2} ρ M^{-1/2})` with `M = Σ χ_ab A_b† A_a`.
pub fn tp_normalize(chi: &ChiMatrix) -> Result<ChiMatrix> {
    let (vals, vecs) = hermitian_eigen(&chi.tp_operator());
    if vals[0] <= 1e-12 {
        return Err(Error::Singular(format!("TP operator is singular (min eigenvalue {:.3e})", vals[0])));
    }
    let inv_sqrt = vecs * Op::from_diagonal(&vals.map(|v| c(1.0 / v.sqrt(), 0.0))) * vecs.adjoint();
    let basis = pauli_basis();
    // A_a M^{-1/2} = Σ_c m_ac A_c
    let m = Mat16::from_fn(|a, cc| (basis[cc] * basis[a] * inv_sqrt).trace() / 4.0);
    ChiMatrix::new(m.transpose() * chi.matrix() * m.map(|z| z.conj()))
}

/// Nearest positive semidefinite χ (eigenvalue clamping), made trace preserving.
pub fn project_physical(chi: &ChiMatrix) -> Result<ChiMatrix> {
    let eig = chi.matrix().symmetric_eigen();
    let clamped = eig.eigenvalues.map(|v| c(v.max(0.0), 0.0));
    let psd = eig.eigenvectors * Mat16::from_diagonal(&clamped) * eig.eigenvectors.adjoint();
    tp_normalize(&ChiMatrix::new((psd + psd.adjoint()).scale(0.5))?)
}

// ---------------------------------------------------------------------------
// likelihood model
//
// A Hermitian χ is stored in 256 real coordinates: χ_aa at [16a + a], and for
// a < b Re χ_ab at [16a + b], Im χ_ab at [16b + a]. The lower-triangular T of
// χ = T†T uses the same layout (T_ii real, T_ij for i > j).

const DIM: usize = 16;
const NPAR: usize = DIM * DIM;

fn to_coords(m: &Mat16) -> DVector<f64> {
    let mut h = DVector::zeros(NPAR);
    for a in 0..DIM {
        h[a * DIM + a] = m[(a, a)].re;
        for b in a + 1..DIM {
            h[a * DIM + b] = m[(a, b)].re;
            h[b * DIM + a] = m[(a, b)].im;
        }
    }
    h
}

fn t_from_params(x: &[f64]) -> Mat16 {
    let mut t = Mat16::zeros();
    for i in 0..DIM {
        t[(i, i)] = c(x[i * DIM + i], 0.0);
        for j in 0..i {
            t[(i, j)] = c(x[i * DIM + j], x[j * DIM + i]);
        }
    }
    t
}

fn params_from_t(t: &Mat16) -> Vec<f64> {
    let mut x = vec![0.0; NPAR];
    for i in 0..DIM {
        x[i * DIM + i] = t[(i, i)].re;
        for j in 0..i {
            x[i * DIM + j] = t[(i, j)].re;
            x[j * DIM + i] = t[(i, j)].im;
        }
    }
    x
}

/// Lower-triangular `T` with `T†T = χ` for positive definite χ.
fn factor(chi: &Mat16) -> Result<Mat16> {
    let rev = |m: &Mat16| Mat16::from_fn(|i, j| m[(DIM - 1 - i, DIM - 1 - j)]);
    let l = rev(chi).cholesky().ok_or_else(|| Error::Singular("starting χ is not positive definite".into()))?.l();
    Ok(rev(&l.adjoint()))
}

/// Linearized forward model `q = W h` plus the trace-preservation constraint
/// `C h = e`.
struct Model {
    w: DMatrix<f64>,
    /// Observed frequencies `n_sk / N`.
    freq: DVector<f64>,
    /// Per-setting totals `N_s / N`.
    setting_freq: Vec<f64>,
    total_shots: f64,
    trace_only: bool,
    cons: DMatrix<f64>,
    target: DVector<f64>,
}

struct Evaluation {
    objective: f64,
    constraint: DVector<f64>,
}

impl Model {
    fn new(
        freqs: &[[f64; 3]],
        setting_weights: &[f64],
        total: f64,
        design: &ExperimentDesign,
        trace_only: bool,
    ) -> Self {
        let basis = pauli_basis();
        let n = design.settings.len();
        let mut w = DMatrix::zeros(3 * n, NPAR);
        let mut freq = DVector::zeros(3 * n);
        for (s, entry) in design.settings.iter().enumerate() {
            let rho = *entry.input_state().projector().matrix();
            let effects = entry.measurement().effects();
            for (k, e) in effects.iter().enumerate() {
                let row = 3 * s + k;
                freq[row] = freqs[s][k];
                let x: Vec<Op> = (0..DIM).map(|a| e * basis[a] * rho).collect();
                // M_ab = Tr[E A_a ρ A_b†]
                let mm = |a: usize, b: usize| -> C64 {
                    let mut acc = c(0.0, 0.0);
                    for i in 0..4 {
                        for j in 0..4 {
                            acc += x[a][(i, j)] * basis[b][(i, j)].conj();
                        }
                    }
                    acc
                };
                for a in 0..DIM {
                    w[(row, a * DIM + a)] = mm(a, a).re;
                    for b in a + 1..DIM {
                        let v = mm(a, b);
                        w[(row, a * DIM + b)] = 2.0 * v.re;
                        w[(row, b * DIM + a)] = -2.0 * v.im;
                    }
                }
            }
        }
        let (cons, target) = if trace_only {
            let mut cm = DMatrix::zeros(1, NPAR);
            for a in 0..DIM {
                cm[(0, a * DIM + a)] = 1.0;
            }
            (cm, DVector::from_element(1, 1.0))
        } else {
            tp_constraint()
        };
        Self { w, freq, setting_freq: setting_weights.to_vec(), total_shots: total, trace_only, cons, target }
    }

    fn evaluate(&self, x: &[f64], lambda: &DVector<f64>, mu: f64, grad: Option<&mut [f64]>) -> Evaluation {
        let t = t_from_params(x);
        let chi = t.adjoint() * t;
        let h = to_coords(&chi);
        let q = &self.w * &h;
        let mut ll = 0.0;
        let mut resid = DVector::zeros(q.len());
        for i in 0..q.len() {
            let f = self.freq[i];
            if q[i] > PROBABILITY_FLOOR {
                ll += f * q[i].ln();
                resid[i] = f / q[i];
            } else {
                ll += f * PROBABILITY_FLOOR.ln();
            }
        }
        if self.trace_only {
            // per-setting normalization: subtract N_s log Σ_k q_sk
            for (s, &fs) in self.setting_freq.iter().enumerate() {
                let total = (q[3 * s] + q[3 * s + 1] + q[3 * s + 2]).max(PROBABILITY_FLOOR);
                ll -= fs * total.ln();
                for k in 0..3 {
                    resid[3 * s + k] -= fs / total;
                }
            }
        }
        let constraint = &self.cons * &h - &self.target;
        let objective = -ll + lambda.dot(&constraint) + 0.5 * mu * constraint.norm_squared();
        if let Some(grad) = grad {
            let mult = lambda + &constraint * mu;
            let gh = -(self.w.tr_mul(&resid)) + self.cons.tr_mul(&mult);
            // dF = Tr(dχ Q)
            let mut qm = Mat16::zeros();
            for a in 0..DIM {
                qm[(a, a)] = c(gh[a * DIM + a], 0.0);
                for b in a + 1..DIM {
                    let v = c(gh[a * DIM + b], gh[b * DIM + a]) / 2.0;
                    qm[(a, b)] = v;
                    qm[(b, a)] = v.conj();
                }
            }
            let xm = qm * t.adjoint();
            for i in 0..DIM {
                grad[i * DIM + i] = 2.0 * xm[(i, i)].re;
                for j in 0..i {
                    grad[i * DIM + j] = 2.0 * xm[(j, i)].re;
                    grad[j * DIM + i] = -2.0 * xm[(j, i)].im;
                }
            }
        }
        Evaluation { objective, constraint }
    }

    fn floored_count(&self, chi: &ChiMatrix) -> usize {
        let q = &self.w * to_coords(chi.matrix());
        q.iter().zip(self.freq.iter()).filter(|(q, f)| **q <= PROBABILITY_FLOOR && **f > 0.0).count()
    }

    fn log_likelihood_of(&self, chi: &ChiMatrix) -> f64 {
        let h = to_coords(chi.matrix());
        let q = &self.w * &h;
        let mut ll = 0.0;
        for i in 0..q.len() {
            ll += self.freq[i] * q[i].max(PROBABILITY_FLOOR).ln();
        }
        if self.trace_only {
            for (s, &fs) in self.setting_freq.iter().enumerate() {
                ll -= fs * (q[3 * s] + q[3 * s + 1] + q[3 * s + 2]).max(PROBABILITY_FLOOR).ln();
            }
        }
        ll * self.total_shots
    }
}

/// Pauli coefficients of `Σ χ_ab A_b† A_a − I` as a linear function of the
/// Hermitian coordinates.
fn tp_constraint() -> (DMatrix<f64>, DVector<f64>) {
    let basis = pauli_basis();
    let mut cm = DMatrix::zeros(DIM, NPAR);
    let coeffs = |op: &Op, cm: &mut DMatrix<f64>, col: usize| {
        for (row, p) in basis.iter().enumerate() {
            cm[(row, col)] = (p * op).trace().re / 4.0;
        }
    };
    for a in 0..DIM {
        coeffs(&Op::identity(), &mut cm, a * DIM + a);
        for b in a + 1..DIM {
            let (ba, ab) = (basis[b] * basis[a], basis[a] * basis[b]);
            coeffs(&(ba + ab), &mut cm, a * DIM + b);
            coeffs(&((ba - ab) * c(0.0, 1.0)), &mut cm, b * DIM + a);
        }
    }
    let mut target = DVector::zeros(DIM);
    target[0] = 1.0;
    (cm, target)
}

// ---------------------------------------------------------------------------
// maximum likelihood

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MleOptions {
    /// Enforce trace preservation; otherwise only the trace of χ is fixed and
    /// each setting's likelihood is normalized on its own.
    pub trace_preserving: bool,
    /// Perturbed restarts in addition to the unperturbed start.
    pub restarts: usize,
    pub seed: u64,
    pub max_iterations: usize,
    pub rel_tol: f64,
    pub tp_tol: f64,
}

impl Default for MleOptions {
    fn default() -> Self {
        Self { trace_preserving: true, restarts: 3, seed: 0, max_iterations: 5000, rel_tol: 1e-10, tp_tol: 1e-6 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TomographyResult {
    pub chi: ChiMatrix,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
    pub linear_chi: ChiMatrix,
    pub diagnostics: BTreeMap<String, f64>,
}

/// Serializable form of [`TomographyResult`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TomographyReport {
    pub design_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub options: MleOptions,
    pub chi: MatrixJson,
    pub linear_chi: MatrixJson,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
    pub diagnostics: BTreeMap<String, f64>,
}

impl TomographyResult {
    pub fn to_report(&self, design_hash: &str, seed: Option<u64>, options: MleOptions) -> TomographyReport {
        TomographyReport {
            design_hash: design_hash.to_string(),
            seed,
            options,
            chi: MatrixJson::from_chi(&self.chi),
            linear_chi: MatrixJson::from_chi(&self.linear_chi),
            log_likelihood: self.log_likelihood,
            iterations: self.iterations,
            converged: self.converged,
            diagnostics: self.diagnostics.clone(),
        }
    }
}

struct Fit {
    chi: ChiMatrix,
    log_likelihood: f64,
    tp_residual: f64,
    iterations: usize,
    outer: usize,
    converged: bool,
    monotone: bool,
    grad_norm: f64,
    mu: f64,
    floored: usize,
}

const MAX_OUTER: usize = 15;
const MU_START: f64 = 100.0;
const CONSTRAINT_TOL: f64 = 1e-7;

fn finish(model: &Model, chi: &ChiMatrix) -> Result<ChiMatrix> {
    if model.trace_only {
        ChiMatrix::new(chi.matrix().unscale(chi.trace()))
    } else {
        tp_normalize(chi)
    }
}

fn run_from(model: &Model, x0: Vec<f64>, opts: &MleOptions) -> Result<Fit> {
    let m = model.target.len();
    let mut lambda = DVector::zeros(m);
    let mut mu = MU_START;
    let mut x = x0;
    let mut iterations = 0;
    let mut monotone = true;
    let mut converged = false;
    let mut grad_norm = f64::NAN;
    let mut prev_violation = f64::INFINITY;
    let mut outer = 0;
    while outer < MAX_OUTER && iterations < opts.max_iterations {
        outer += 1;
        let lopts = LbfgsOptions {
            max_iterations: opts.max_iterations - iterations,
            rel_tol: opts.rel_tol,
            ..Default::default()
        };
        let (l, u) = (lambda.clone(), mu);
        let r = minimize(|p, g| model.evaluate(p, &l, u, Some(g)).objective, &x, &lopts);
        iterations += r.iterations;
        monotone &= r.monotone;
        grad_norm = r.grad_norm;
        x = r.x;
        let eval = model.evaluate(&x, &lambda, mu, None);
        let violation = eval.constraint.amax();
        if violation < CONSTRAINT_TOL && r.converged {
            converged = true;
            break;
        }
        lambda += &eval.constraint * mu;
        if violation > 0.25 * prev_violation {
            mu *= 10.0;
        }
        prev_violation = violation;
    }
    let t = t_from_params(&x);
    let raw = ChiMatrix::new(t.adjoint() * t)?;
    let chi = finish(model, &raw)?;
    let tp_residual = if model.trace_only { (chi.trace() - 1.0).abs() } else { chi.tp_residual() };
    let floored = model.floored_count(&chi);
    Ok(Fit {
        log_likelihood: model.log_likelihood_of(&chi),
        chi,
        tp_residual,
        iterations,
        outer,
        converged: converged && tp_residual <= opts.tp_tol,
        monotone,
        grad_norm,
        mu,
        floored,
    })
}

/// ML reconstruction from relative frequencies (one triple per setting, in
/// design order). `total_shots` scales the reported log-likelihood.
pub fn mle_from_frequencies(
    freqs: &[[f64; 3]],
    total_shots: f64,
    design: &ExperimentDesign,
    opts: &MleOptions,
) -> Result<TomographyResult> {
    check_len(freqs.len(), design)?;
    let n = freqs.len() as f64;
    let norm: Vec<[f64; 3]> = freqs.iter().map(|f| f.map(|v| v / n)).collect();
    let setting_weights: Vec<f64> = norm.iter().map(|f| f.iter().sum()).collect();
    let model = Model::new(&norm, &setting_weights, total_shots, design, !opts.trace_preserving);

    let linear = linear_from_probabilities(freqs, design)?;
    let start = project_physical(&linear)?;
    let start_ll = model.log_likelihood_of(&start);
    let mixed = start.matrix().scale(1.0 - 1e-6) + Mat16::identity().scale(1e-6 / DIM as f64);
    let x0 = params_from_t(&factor(&mixed)?);

    let scale = (x0.iter().map(|v| v * v).sum::<f64>() / NPAR as f64).sqrt();
    let mut best: Option<(usize, Fit)> = None;
    for r in 0..=opts.restarts {
        let mut x = x0.clone();
        if r > 0 {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(r as u64);
            for v in x.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v += 0.1 * scale * z;
            }
        }
        let fit = run_from(&model, x, opts)?;
        let better = match &best {
            None => true,
            Some((_, b)) => {
                fit.log_likelihood > b.log_likelihood + 1e-12
                    || ((fit.log_likelihood - b.log_likelihood).abs() <= 1e-12 && fit.tp_residual < b.tp_residual)
            }
        };
        if better {
            best = Some((r, fit));
        }
    }
    let (best_restart, fit) = best.expect("at least one start");

    let fell_back = fit.log_likelihood < start_ll - 1e-9;
    let (chi, ll) = if fell_back { (start, start_ll) } else { (fit.chi, fit.log_likelihood) };
    let diagnostics: BTreeMap<String, f64> = [
        ("gradient_norm", fit.grad_norm),
        ("tp_residual", if opts.trace_preserving { chi.tp_residual() } else { (chi.trace() - 1.0).abs() }),
        ("min_eigenvalue", chi.min_eigenvalue()),
        ("floored_evaluations", fit.floored as f64),
        ("restarts", opts.restarts as f64),
        ("best_restart", best_restart as f64),
        ("outer_iterations", fit.outer as f64),
        ("objective_monotone", if fit.monotone { 1.0 } else { 0.0 }),
        ("penalty_weight", fit.mu),
        ("start_log_likelihood", start_ll),
        ("fell_back_to_start", if fell_back { 1.0 } else { 0.0 }),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    if !fit.converged {
        log::warn!("maximum-likelihood fit did not converge within {} iterations", opts.max_iterations);
    }
    Ok(TomographyResult {
        chi,
        log_likelihood: ll,
        iterations: fit.iterations,
        converged: fit.converged,
        linear_chi: linear,
        diagnostics,
    })
}

fn frequencies(data: &CountsDataset, design: &ExperimentDesign) -> Result<Vec<[f64; 3]>> {
    data.validate(design)?;
    let mut freqs = vec![[0.0; 3]; design.settings.len()];
    for rec in &data.counts {
        let n = rec.total() as f64;
        freqs[rec.index] = rec.as_array().map(|k| k as f64 / n);
    }
    Ok(freqs)
}

/// Maximum-likelihood χ from a counts dataset.
pub fn mle_reconstruct(data: &CountsDataset, design: &ExperimentDesign, opts: &MleOptions) -> Result<TomographyResult> {
    let freqs = frequencies(data, design)?;
    mle_from_frequencies(&freqs, design.total_shots() as f64, design, opts)
}

/// Multinomial log-likelihood `Σ n_sk log q_sk` of `chi` for a dataset (model
/// probabilities floored at 1e-12).
pub fn log_likelihood(chi: &ChiMatrix, data: &CountsDataset, design: &ExperimentDesign) -> Result<f64> {
    let freqs = frequencies(data, design)?;
    let n = freqs.len() as f64;
    let norm: Vec<[f64; 3]> = freqs.iter().map(|f| f.map(|v| v / n)).collect();
    let weights: Vec<f64> = norm.iter().map(|f| f.iter().sum()).collect();
    Ok(Model::new(&norm, &weights, design.total_shots() as f64, design, false).log_likelihood_of(chi))
}
