//! Synthetic count datasets: prepared inputs pushed through a configurable
//! process and the compiled analysis pulses, then sampled shot by shot.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::MatrixJson;
use crate::msgate::{analysis_pulse, fit_parity, ms_unitary, populations, ParityScan};
use crate::noise::ms_depolarized_chi;
use crate::protocol::{
    outcome_projectors, CountsDataset, CountsRecord, ExperimentDesign, MeasurementSetting, Pulse, PulseErrors,
    SettingEntry,
};
use crate::qcore::{unitary_to_chi, ChiMatrix, DensityMatrix, PureState, SuperOp};

/// Imperfection knobs. All default to zero.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseKnobs {
    /// Depolarization probability applied after every gate.
    pub depol_per_gate: f64,
    /// Fractional error of every rotation angle (preparation and analysis).
    pub rotation_overangle: f64,
    /// Fraction of a local pulse's rotation angle that also reaches ion 1.
    pub local_addressing_error: f64,
    /// Per-ion bright/dark misclassification probability.
    pub readout_flip: f64,
    pub seed: u64,
}

impl NoiseKnobs {
    pub fn validate(&self) -> Result<()> {
        for p in [self.depol_per_gate, self.local_addressing_error, self.readout_flip] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Probability(p));
            }
        }
        if !self.rotation_overangle.is_finite() || self.rotation_overangle.abs() > 1.0 {
            return Err(Error::InvalidArgument(format!(
                "rotation_overangle {} outside [-1, 1]",
                self.rotation_overangle
            )));
        }
        Ok(())
    }

    pub fn pulse_errors(&self) -> PulseErrors {
        PulseErrors { overangle: self.rotation_overangle, crosstalk: self.local_addressing_error }
    }

    pub fn is_spam_free(&self) -> bool {
        self.rotation_overangle == 0.0 && self.local_addressing_error == 0.0 && self.readout_flip == 0.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ProcessKind {
    Identity,
    MsGates(u32),
    /// A given χ, taken to contain no gates (the per-gate depolarization knob
    /// does not apply).
    ChiSpecified(Box<ChiMatrix>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrueProcess {
    pub kind: ProcessKind,
    pub noise: NoiseKnobs,
}

impl TrueProcess {
    pub fn identity(noise: NoiseKnobs) -> Self {
        Self { kind: ProcessKind::Identity, noise }
    }

    pub fn ms(n: u32, noise: NoiseKnobs) -> Self {
        Self { kind: ProcessKind::MsGates(n), noise }
    }

    pub fn n_gates(&self) -> u32 {
        match self.kind {
            ProcessKind::MsGates(n) => n,
            _ => 0,
        }
    }
}

/// Process configuration file:
/// `{"kind": "ms", "n_gates": 5, "noise": {...}}`, `{"kind": "identity"}` or
/// `{"kind": "chi", "chi": {...}}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ProcessConfig {
    Identity {
        #[serde(default)]
        noise: NoiseKnobs,
    },
    Ms {
        n_gates: u32,
        #[serde(default)]
        noise: NoiseKnobs,
    },
    Chi {
        chi: MatrixJson,
        #[serde(default)]
        noise: NoiseKnobs,
    },
}

impl ProcessConfig {
    pub fn to_process(&self) -> Result<TrueProcess> {
        let (kind, noise) = match self {
            ProcessConfig::Identity { noise } => (ProcessKind::Identity, *noise),
            ProcessConfig::Ms { n_gates, noise } => (ProcessKind::MsGates(*n_gates), *noise),
            ProcessConfig::Chi { chi, noise } => (ProcessKind::ChiSpecified(Box::new(chi.to_chi()?)), *noise),
        };
        noise.validate()?;
        let proc = TrueProcess { kind, noise };
        if let ProcessKind::ChiSpecified(chi) = &proc.kind {
            if !chi.is_cptp(-1e-9, 1e-9) {
                return Err(Error::InvalidArgument("configured χ is not CPTP".into()));
            }
        }
        Ok(proc)
    }

    pub fn noise(&self) -> &NoiseKnobs {
        match self {
            ProcessConfig::Identity { noise } | ProcessConfig::Ms { noise, .. } | ProcessConfig::Chi { noise, .. } => {
                noise
            }
        }
    }

    pub fn noise_mut(&mut self) -> &mut NoiseKnobs {
        match self {
            ProcessConfig::Identity { noise } | ProcessConfig::Ms { noise, .. } | ProcessConfig::Chi { noise, .. } => {
                noise
            }
        }
    }
}

/// The process map itself (gates and per-gate depolarization), excluding
/// preparation and readout imperfections.
pub fn effective_chi(proc: &TrueProcess) -> Result<ChiMatrix> {
    match &proc.kind {
        ProcessKind::Identity => Ok(ChiMatrix::identity()),
        ProcessKind::MsGates(n) if proc.noise.depol_per_gate == 0.0 => unitary_to_chi(&ms_unitary(*n)),
        ProcessKind::MsGates(n) => ms_depolarized_chi(*n, proc.noise.depol_per_gate),
        ProcessKind::ChiSpecified(chi) => Ok(**chi),
    }
}

fn normalize(p: [f64; 3]) -> [f64; 3] {
    let p = p.map(|v| v.max(0.0));
    let total: f64 = p.iter().sum();
    p.map(|v| v / total)
}

/// Ideal-pulse outcome probabilities `(p0, p1, p2)` for `rho` measured with `setting`.
pub fn outcome_probabilities(rho: &DensityMatrix, setting: &MeasurementSetting) -> [f64; 3] {
    outcome_probabilities_with(rho, setting, &NoiseKnobs::default())
}

/// Outcome probabilities with knob-perturbed analysis pulses and readout.
pub fn outcome_probabilities_with(rho: &DensityMatrix, setting: &MeasurementSetting, knobs: &NoiseKnobs) -> [f64; 3] {
    let v = setting.pulses.coherent_unitary_with(&knobs.pulse_errors());
    let rotated = rho.evolve(&v);
    let proj = outcome_projectors(setting.readout, knobs.readout_flip);
    normalize(proj.map(|p| (rotated.matrix() * p).trace().re))
}

/// Input actually prepared by the (possibly imperfect) preparation pulses.
pub fn prepared_state(entry: &SettingEntry, knobs: &NoiseKnobs) -> PureState {
    PureState::basis(0).evolve(&entry.prep_pulses.coherent_unitary_with(&knobs.pulse_errors()))
}

/// Exact outcome probabilities for every setting of `design`.
pub fn setting_probabilities(proc: &TrueProcess, design: &ExperimentDesign) -> Result<Vec<[f64; 3]>> {
    proc.noise.validate()?;
    let s: SuperOp = effective_chi(proc)?.superoperator();
    Ok(design
        .settings
        .iter()
        .map(|entry| {
            let input = prepared_state(entry, &proc.noise).projector();
            let out = s.apply_op(input.matrix());
            let out = DensityMatrix::assume_valid((out + out.adjoint()).scale(0.5));
            outcome_probabilities_with(&out, &entry.measurement(), &proc.noise)
        })
        .collect())
}

/// Independent generator for one setting: the knob seed selects the key and
/// the setting index selects the ChaCha stream.
pub fn setting_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// One multinomial draw of `shots` outcomes using integer thresholds on raw
/// 64-bit outputs.
pub fn sample_counts(p: [f64; 3], shots: u64, rng: &mut impl RngCore) -> [u64; 3] {
    const SCALE: f64 = 18_446_744_073_709_551_616.0; // 2^64
    let cut = |x: f64| (x.clamp(0.0, 1.0) * SCALE) as u128;
    let t0 = cut(p[0]);
    let t1 = cut(p[0] + p[1]).max(t0);
    let mut counts = [0u64; 3];
    for _ in 0..shots {
        let u = rng.next_u64() as u128;
        let k = if u < t0 {
            0
        } else if u < t1 {
            1
        } else {
            2
        };
        counts[k] += 1;
    }
    counts
}

pub fn counts_from_probabilities(probs: &[[f64; 3]], design: &ExperimentDesign, seed: u64) -> CountsDataset {
    let counts = probs
        .iter()
        .enumerate()
        .map(|(index, &p)| {
            let [n0, n1, n2] = sample_counts(p, design.shots, &mut setting_rng(seed, index));
            CountsRecord { index, n0, n1, n2 }
        })
        .collect();
    CountsDataset { shots: design.shots, design_hash: design.hash(), seed: Some(seed), counts }
}

/// Simulates one count record per setting with the knob seed.
pub fn simulate_dataset(proc: &TrueProcess, design: &ExperimentDesign) -> Result<CountsDataset> {
    let probs = setting_probabilities(proc, design)?;
    Ok(counts_from_probabilities(&probs, design, proc.noise.seed))
}

/// Parity scan with `shots` sampled realizations per phase; phase `k` draws
/// from stream `k` of `seed`.
pub fn simulate_parity_scan(rho: &DensityMatrix, phases: &[f64], shots: u64, seed: u64) -> Result<ParityScan> {
    if shots == 0 {
        return Err(Error::InvalidArgument("parity scan needs at least one shot per phase".into()));
    }
    let parity: Vec<f64> = phases
        .iter()
        .enumerate()
        .map(|(k, &phi)| {
            let (p0, p1, p2) = populations(&rho.evolve(&analysis_pulse(phi)));
            let [n0, n1, n2] = sample_counts([p0, p1, p2], shots, &mut setting_rng(seed, k));
            (n0 as f64 + n2 as f64 - n1 as f64) / shots as f64
        })
        .collect();
    fit_parity(phases, &parity)
}

/// Average gate fidelity `(|Tr U†V|² + d)/(d(d+1))` of a knob-perturbed pulse
/// against its ideal version.
pub fn pulse_fidelity(pulse: &Pulse, knobs: &NoiseKnobs) -> Option<f64> {
    let ideal = pulse.unitary()?;
    let noisy = pulse.unitary_with(&knobs.pulse_errors())?;
    let overlap = (ideal.adjoint() * noisy).trace().norm_sqr();
    Some((overlap + 4.0) / 20.0)
}

/// Fidelity of a local π/2 pulse, which suffers both angle and addressing errors.
pub fn single_pulse_fidelity(knobs: &NoiseKnobs) -> f64 {
    pulse_fidelity(&Pulse::local(crate::protocol::Axis::PlusX), knobs).expect("local pulse is unitary")
}

/// Knobs with `local_addressing_error = ratio · rotation_overangle`, scaled so
/// that [`single_pulse_fidelity`] equals `target`.
pub fn calibrate_pulse_errors(target: f64, ratio: f64, base: NoiseKnobs) -> Result<NoiseKnobs> {
    if !(0.0..1.0).contains(&target) || !(ratio.is_finite() && ratio >= 0.0) {
        return Err(Error::InvalidArgument("target fidelity must lie in [0, 1) and ratio be non-negative".into()));
    }
    let with = |s: f64| NoiseKnobs { rotation_overangle: s, local_addressing_error: (ratio * s).min(1.0), ..base };
    let (mut lo, mut hi) = (0.0, 1.0);
    if single_pulse_fidelity(&with(hi)) > target {
        return Err(Error::InvalidArgument(format!("fidelity {target} unreachable with ratio {ratio}")));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if single_pulse_fidelity(&with(mid)) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(with(0.5 * (lo + hi)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::HaarSampler;
    use crate::noise::{compose_chi, depol_chi};
    use crate::protocol::{compile_measurement_setting, design_experiment, Observable};
    use crate::qcore::{apply_chi, max_abs, Pauli};

    fn setting(i: Pauli, j: Pauli) -> MeasurementSetting {
        compile_measurement_setting(i, j).unwrap()
    }

    #[test]
    fn probability_examples() {
        let ss = PureState::basis(0).projector();
        let bell = PureState::ms_bell().projector();
        let close = |a: [f64; 3], b: [f64; 3]| a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-12);
        assert!(close(outcome_probabilities(&ss, &setting(Pauli::Z, Pauli::Z)), [0.0, 0.0, 1.0]));
        assert!(close(outcome_probabilities(&bell, &setting(Pauli::Z, Pauli::Z)), [0.5, 0.0, 0.5]));
        assert!(close(outcome_probabilities(&bell, &setting(Pauli::X, Pauli::X)), [0.25, 0.5, 0.25]));
    }

    #[test]
    fn noiseless_effective_chi() {
        for n in 0..6 {
            let chi = effective_chi(&TrueProcess::ms(n, NoiseKnobs::default())).unwrap();
            let ideal = unitary_to_chi(&ms_unitary(n)).unwrap();
            assert!(max_abs(&(chi.matrix() - ideal.matrix())) < 1e-12);
        }
        assert_eq!(effective_chi(&TrueProcess::identity(NoiseKnobs::default())).unwrap(), ChiMatrix::identity());
    }

    #[test]
    fn depolarized_gate_matches_brute_force() {
        let p = 0.05;
        let knobs = NoiseKnobs { depol_per_gate: p, ..Default::default() };
        let chi = effective_chi(&TrueProcess::ms(1, knobs)).unwrap();
        let ms = unitary_to_chi(&ms_unitary(1)).unwrap();
        // (1−15p/16) of the ideal weight survives; the YY error term feeds back p/16 of it
        assert!((chi.get(0, 0).re - 0.5 * (1.0 - 15.0 * p / 16.0) - 0.5 * p / 16.0).abs() < 1e-12);
        for psi in HaarSampler::new(4, 50).states() {
            let rho = psi.projector();
            let ideal = apply_chi(&ms, &rho).unwrap();
            let brute = ideal.matrix().scale(1.0 - p) + crate::qcore::Op::identity().scale(p / 4.0);
            assert!(max_abs(&(apply_chi(&chi, &rho).unwrap().matrix() - brute)) < 1e-12);
        }
        let composed = compose_chi(&ms, &depol_chi(p).unwrap()).unwrap();
        assert!(max_abs(&(composed.matrix() - chi.matrix())) < 1e-12);
    }

    #[test]
    fn ms_zz_setting_has_no_single_bright_counts() {
        let design = design_experiment(400).unwrap();
        let data =
            simulate_dataset(&TrueProcess::ms(1, NoiseKnobs { seed: 3, ..Default::default() }), &design).unwrap();
        let zz = Observable(Pauli::Z, Pauli::Z);
        let entry = design
            .settings
            .iter()
            .find(|s| s.obs == zz && s.prep == (crate::qcore::Eigenstate::Z, crate::qcore::Eigenstate::Z))
            .unwrap();
        assert_eq!(data.counts[entry.index].n1, 0);
        data.validate(&design).unwrap();
    }

    #[test]
    fn sampling_is_deterministic_and_seed_sensitive() {
        let design = design_experiment(50).unwrap();
        let proc = TrueProcess::ms(1, NoiseKnobs { seed: 9, depol_per_gate: 0.02, ..Default::default() });
        let a = simulate_dataset(&proc, &design).unwrap();
        assert_eq!(a, simulate_dataset(&proc, &design).unwrap());
        let other = TrueProcess { noise: NoiseKnobs { seed: 10, ..proc.noise }, ..proc.clone() };
        assert_ne!(a.counts, simulate_dataset(&other, &design).unwrap().counts);
        // a single setting can be regenerated from its own stream
        let probs = setting_probabilities(&proc, &design).unwrap();
        let k = 117;
        let again = sample_counts(probs[k], 50, &mut setting_rng(9, k));
        assert_eq!(again, a.counts[k].as_array());
    }

    #[test]
    fn sampler_edge_probabilities() {
        let mut rng = setting_rng(1, 0);
        assert_eq!(sample_counts([1.0, 0.0, 0.0], 100, &mut rng), [100, 0, 0]);
        assert_eq!(sample_counts([0.0, 1.0, 0.0], 100, &mut rng), [0, 100, 0]);
        assert_eq!(sample_counts([0.0, 0.0, 1.0], 100, &mut rng), [0, 0, 100]);
    }

    #[test]
    fn empirical_frequencies_within_five_sigma() {
        let design = design_experiment(10_000).unwrap();
        let proc = TrueProcess::ms(1, NoiseKnobs { seed: 42, depol_per_gate: 0.018, ..Default::default() });
        let probs = setting_probabilities(&proc, &design).unwrap();
        let data = counts_from_probabilities(&probs, &design, 42);
        for (p, rec) in probs.iter().zip(&data.counts) {
            for (k, (&pk, n)) in p.iter().zip(rec.as_array()).enumerate() {
                let sigma = (pk * (1.0 - pk) / 10_000.0).sqrt().max(1e-12);
                let f = n as f64 / 10_000.0;
                assert!((f - pk).abs() < 5.0 * sigma + 1e-12, "setting {} outcome {k}", rec.index);
            }
        }
    }

    #[test]
    fn calibration_hits_target() {
        let knobs = calibrate_pulse_errors(0.99, 1.0, NoiseKnobs::default()).unwrap();
        assert!((single_pulse_fidelity(&knobs) - 0.99).abs() < 1e-12);
        assert!(knobs.rotation_overangle > 0.0 && knobs.local_addressing_error > 0.0);
        assert_eq!(single_pulse_fidelity(&NoiseKnobs::default()), 1.0);
    }

    #[test]
    fn sampled_parity_scan_of_depolarized_bell() {
        let p = 0.018;
        let bell = PureState::ms_bell().projector();
        let rho =
            DensityMatrix::new(bell.matrix().scale(1.0 - p) + crate::qcore::Op::identity().scale(p / 4.0)).unwrap();
        let phases: Vec<f64> = (0..24).map(|k| k as f64 * std::f64::consts::PI / 12.0).collect();
        let scan = simulate_parity_scan(&rho, &phases, 400, 11).unwrap();
        assert!((scan.fitted_contrast - 0.982).abs() < 0.03, "{}", scan.fitted_contrast);
        assert_eq!(scan, simulate_parity_scan(&rho, &phases, 400, 11).unwrap());
    }

    #[test]
    fn config_parsing() {
        let cfg: ProcessConfig =
            serde_json::from_str(r#"{"kind":"ms","n_gates":5,"noise":{"depol_per_gate":0.018,"seed":4}}"#).unwrap();
        let proc = cfg.to_process().unwrap();
        assert_eq!(proc.n_gates(), 5);
        assert_eq!(proc.noise.seed, 4);
        let id: ProcessConfig = serde_json::from_str(r#"{"kind":"identity"}"#).unwrap();
        assert_eq!(id.to_process().unwrap().kind, ProcessKind::Identity);
        let bad: ProcessConfig =
            serde_json::from_str(r#"{"kind":"ms","n_gates":1,"noise":{"readout_flip":2.0}}"#).unwrap();
        assert!(bad.to_process().is_err());
        assert!(serde_json::from_str::<ProcessConfig>(r#"{"kind":"ms","n_gates":1,"nosie":{}}"#).is_err());
    }
}
