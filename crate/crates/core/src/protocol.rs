//! Tomography protocol compiler.
//!
//! Every preparation and analysis is built from a small pulse set. Rotations
//! are π/2 pulses, either global (`G_α`, both ions) or local (`L_β`, ion 2
//! only). A global carrier π pulse and two shelving transfers complete the set;
//! the transfers serve single-ion readout.
//!
//! Rotation convention: a π/2 pulse about axis `α` is the unitary
//! `exp(+i(π/4)σ_α)` on each addressed ion. This keeps the sign of the
//! exponent written for `G_α` and `L_β` and halves the angle so that the pulse
//! is a true π/2 rotation. With this convention the compilations
//! `R_zx = L_{-y}`, `R_xy = G_{-y}·L_x` and `R_xz = G_{-y}·L_y` satisfy
//! `R†(σ_i⊗σ_j)R = σ_z⊗σ_z` with the axis labels exactly as written. Under
//! `exp(-i(π/4)σ_α)` every axis label would flip sign.
//!
//! A measurement of `σ_i⊗σ_j` applies `R†` to the state before the
//! fluorescence readout of `σ_z⊗σ_z`; as a time-ordered pulse list `R† =
//! L_{-β}·G_{-α}` means `G_{-α}` first, then `L_{-β}`.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::qcore::{
    c, hermitian_eigen, kron, pauli_basis, state_tensor, DensityMatrix, Eigenstate, Op, Op2, Pauli, PureState,
};

/// Equatorial rotation axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Axis {
    #[serde(rename = "+x")]
    PlusX,
    #[serde(rename = "-x")]
    MinusX,
    #[serde(rename = "+y")]
    PlusY,
    #[serde(rename = "-y")]
    MinusY,
}

impl Axis {
    pub const ALL: [Axis; 4] = [Axis::PlusX, Axis::MinusX, Axis::PlusY, Axis::MinusY];

    pub fn negate(self) -> Axis {
        match self {
            Axis::PlusX => Axis::MinusX,
            Axis::MinusX => Axis::PlusX,
            Axis::PlusY => Axis::MinusY,
            Axis::MinusY => Axis::PlusY,
        }
    }

    /// Signed Pauli generator `σ_α`.
    pub fn sigma(self) -> Op2 {
        match self {
            Axis::PlusX => Pauli::X.matrix(),
            Axis::MinusX => -Pauli::X.matrix(),
            Axis::PlusY => Pauli::Y.matrix(),
            Axis::MinusY => -Pauli::Y.matrix(),
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Axis::PlusX => "+x",
            Axis::MinusX => "-x",
            Axis::PlusY => "+y",
            Axis::MinusY => "-y",
        };
        f.write_str(s)
    }
}

/// Single-qubit rotation `exp(+i(θ/2)σ)` about a signed generator.
pub fn rotation(sigma: &Op2, theta: f64) -> Op2 {
    let (cs, sn) = ((theta / 2.0).cos(), (theta / 2.0).sin());
    Op2::identity() * c(cs, 0.0) + sigma * c(0.0, sn)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PulseKind {
    GlobalHalfPi,
    LocalHalfPi,
    TransferRF,
    TransferSideband,
    GlobalCarrierPi,
}

/// Coherent pulse imperfections. `overangle` scales every rotation angle by
/// `1 + overangle`; `crosstalk` is the fraction of a local rotation angle that
/// also reaches ion 1.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PulseErrors {
    pub overangle: f64,
    pub crosstalk: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Pulse {
    pub kind: PulseKind,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub axis: Option<Axis>,
}

impl Pulse {
    pub fn global(axis: Axis) -> Self {
        Self { kind: PulseKind::GlobalHalfPi, axis: Some(axis) }
    }

    pub fn local(axis: Axis) -> Self {
        Self { kind: PulseKind::LocalHalfPi, axis: Some(axis) }
    }

    pub fn carrier_pi() -> Self {
        Self { kind: PulseKind::GlobalCarrierPi, axis: None }
    }

    pub fn transfer_rf() -> Self {
        Self { kind: PulseKind::TransferRF, axis: None }
    }

    pub fn transfer_sideband() -> Self {
        Self { kind: PulseKind::TransferSideband, axis: None }
    }

    pub fn is_transfer(&self) -> bool {
        matches!(self.kind, PulseKind::TransferRF | PulseKind::TransferSideband)
    }

    /// Ideal two-qubit unitary; `None` for the transfer pulses, which act
    /// outside the qubit space.
    pub fn unitary(&self) -> Option<Op> {
        self.unitary_with(&PulseErrors::default())
    }

    pub fn unitary_with(&self, errors: &PulseErrors) -> Option<Op> {
        let scale = 1.0 + errors.overangle;
        let half_pi = std::f64::consts::FRAC_PI_2 * scale;
        match (self.kind, self.axis) {
            (PulseKind::GlobalHalfPi, Some(axis)) => {
                let r = rotation(&axis.sigma(), half_pi);
                Some(kron(&r, &r))
            }
            (PulseKind::LocalHalfPi, Some(axis)) => {
                let target = rotation(&axis.sigma(), half_pi);
                let leak = rotation(&axis.sigma(), half_pi * errors.crosstalk);
                Some(kron(&leak, &target))
            }
            (PulseKind::GlobalCarrierPi, _) => {
                let r = rotation(&Pauli::X.matrix(), std::f64::consts::PI * scale);
                Some(kron(&r, &r))
            }
            _ => None,
        }
    }
}

impl fmt::Display for Pulse {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.kind, self.axis) {
            (PulseKind::GlobalHalfPi, Some(a)) => write!(f, "G{a}"),
            (PulseKind::LocalHalfPi, Some(a)) => write!(f, "L{a}"),
            (PulseKind::GlobalCarrierPi, _) => f.write_str("Cpi"),
            (PulseKind::TransferRF, _) => f.write_str("T_rf"),
            (PulseKind::TransferSideband, _) => f.write_str("T_sb"),
            (k, None) => write!(f, "{k:?}"),
        }
    }
}

/// Time-ordered list of pulses.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PulseSequence(pub Vec<Pulse>);

impl PulseSequence {
    pub fn pulses(&self) -> &[Pulse] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Unitary of the coherent part: every pulse before the first transfer,
    /// composed in time order (`U = P_last ⋯ P_first`).
    pub fn coherent_unitary(&self) -> Op {
        self.coherent_unitary_with(&PulseErrors::default())
    }

    pub fn coherent_unitary_with(&self, errors: &PulseErrors) -> Op {
        let mut u = Op::identity();
        for p in self.0.iter().take_while(|p| !p.is_transfer()) {
            if let Some(m) = p.unitary_with(errors) {
                u = m * u;
            }
        }
        u
    }
}

impl fmt::Display for PulseSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("(none)");
        }
        let parts: Vec<String> = self.0.iter().map(|p| p.to_string()).collect();
        f.write_str(&parts.join(" ; "))
    }
}

/// Two-qubit Pauli observable `σ_i ⊗ σ_j`, not both identity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Observable(pub Pauli, pub Pauli);

impl Observable {
    pub fn new(first: Pauli, second: Pauli) -> Result<Self> {
        if first == Pauli::I && second == Pauli::I {
            return Err(Error::InvalidArgument("observable (0,0) carries no information".into()));
        }
        Ok(Self(first, second))
    }

    /// The 15 non-trivial observables in lexicographic (I, X, Y, Z) order.
    pub fn all() -> Vec<Observable> {
        let mut out = Vec::with_capacity(15);
        for i in Pauli::ALL {
            for j in Pauli::ALL {
                if let Ok(o) = Observable::new(i, j) {
                    out.push(o);
                }
            }
        }
        out
    }

    pub fn basis_index(self) -> usize {
        self.0.index() * 4 + self.1.index()
    }

    pub fn matrix(self) -> Op {
        pauli_basis()[self.basis_index()]
    }
}

impl fmt::Display for Observable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.0, self.1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ReadoutMode {
    Joint,
    Ion1Only,
    Ion2Only,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Ion {
    Ion1,
    Ion2,
}

/// Diagonal outcome operators `Π_0, Π_1, Π_2` (0/1/2 bright ions) in the
/// computational basis after the readout relabeling of `mode`, with each ion's
/// bright/dark indicator flipped independently with probability `flip`.
pub fn outcome_projectors(mode: ReadoutMode, flip: f64) -> [Op; 3] {
    let mut proj = [Op::zeros(); 3];
    for q in 0..4 {
        let bright1 = q >> 1 == 0;
        let bright2 = q & 1 == 0;
        let (b1, b2) = match mode {
            ReadoutMode::Joint => (bright1, bright2),
            ReadoutMode::Ion1Only => (bright1, true),
            ReadoutMode::Ion2Only => (true, bright2),
        };
        let p1 = if b1 { 1.0 - flip } else { flip };
        let p2 = if b2 { 1.0 - flip } else { flip };
        let dist = [(1.0 - p1) * (1.0 - p2), p1 * (1.0 - p2) + (1.0 - p1) * p2, p1 * p2];
        for k in 0..3 {
            proj[k][(q, q)] = c(dist[k], 0.0);
        }
    }
    proj
}

/// Analysis rotation in operator form `R = G_α · L_β`; either factor may be
/// absent. The physical sequence applies `R†` to the state.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AnalysisRotation {
    pub global: Option<Axis>,
    pub local: Option<Axis>,
}

impl AnalysisRotation {
    pub fn operator(&self) -> Op {
        let mut r = Op::identity();
        if let Some(a) = self.global {
            r *= Pulse::global(a).unitary().expect("rotation pulse");
        }
        if let Some(b) = self.local {
            r *= Pulse::local(b).unitary().expect("rotation pulse");
        }
        r
    }

    /// Time-ordered pulses implementing `R†`.
    pub fn inverse_pulses(&self) -> Vec<Pulse> {
        let mut out = Vec::new();
        if let Some(a) = self.global {
            out.push(Pulse::global(a.negate()));
        }
        if let Some(b) = self.local {
            out.push(Pulse::local(b.negate()));
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MeasurementSetting {
    pub observable: Observable,
    pub rotation: AnalysisRotation,
    pub pulses: PulseSequence,
    pub readout: ReadoutMode,
}

impl MeasurementSetting {
    /// Coherent analysis unitary applied to the state before readout (`R†`).
    pub fn analysis_unitary(&self) -> Op {
        self.pulses.coherent_unitary()
    }

    /// Effects `E_k = V† Π_k V` in the frame of the state being measured, for
    /// ideal pulses and readout.
    pub fn effects(&self) -> [Op; 3] {
        let v = self.analysis_unitary();
        outcome_projectors(self.readout, 0.0).map(|p| v.adjoint() * p * v)
    }
}

// R = G·L for the nine joint observables; the three named in the protocol
// description (zx, xy, xz) appear verbatim.
fn joint_rotation(i: Pauli, j: Pauli) -> AnalysisRotation {
    use Axis::*;
    let (global, local) = match (i, j) {
        (Pauli::X, Pauli::X) => (Some(MinusY), None),
        (Pauli::X, Pauli::Y) => (Some(MinusY), Some(PlusX)),
        (Pauli::X, Pauli::Z) => (Some(MinusY), Some(PlusY)),
        (Pauli::Y, Pauli::X) => (Some(PlusX), Some(MinusY)),
        (Pauli::Y, Pauli::Y) => (Some(PlusX), None),
        (Pauli::Y, Pauli::Z) => (Some(PlusX), Some(MinusX)),
        (Pauli::Z, Pauli::X) => (None, Some(MinusY)),
        (Pauli::Z, Pauli::Y) => (None, Some(PlusX)),
        (Pauli::Z, Pauli::Z) => (None, None),
        _ => unreachable!("joint observables have no identity factor"),
    };
    AnalysisRotation { global, local }
}

/// Compiles the analysis for `σ_i ⊗ σ_j`. Joint observables use `R = G·L`;
/// observables with one identity factor go through single-ion readout.
pub fn compile_measurement_setting(i: Pauli, j: Pauli) -> Result<MeasurementSetting> {
    let observable = Observable::new(i, j)?;
    match (i, j) {
        (_, Pauli::I) => compile_single_ion_setting(Ion::Ion1, i),
        (Pauli::I, _) => compile_single_ion_setting(Ion::Ion2, j),
        _ => {
            let rotation = joint_rotation(i, j);
            Ok(MeasurementSetting {
                observable,
                rotation,
                pulses: PulseSequence(rotation.inverse_pulses()),
                readout: ReadoutMode::Joint,
            })
        }
    }
}

/// Single-ion readout of `σ_axis` on `target`: an optional pre-rotation
/// mapping `σ_axis` to `σ_z` on the target, then the rf transfer `|S⟩→|S'⟩` on
/// both ions and the sideband transfer `|D⟩→|S⟩` on ion 2. Ion 2 is then
/// always bright and ion 1 is read from `P2`. For ion 2 an extra carrier π
/// pulse makes ion 1 bright and maps ion 2's original `|S⟩` to bright.
///
/// Ion 1 can only be rotated by global pulses; the pre-rotation for ion 2
/// uses a local pulse.
pub fn compile_single_ion_setting(target: Ion, axis: Pauli) -> Result<MeasurementSetting> {
    let rotation_axis = match axis {
        Pauli::X => Some(Axis::MinusY),
        Pauli::Y => Some(Axis::PlusX),
        Pauli::Z => None,
        Pauli::I => return Err(Error::InvalidArgument("single-ion readout needs x, y or z".into())),
    };
    let (observable, rotation, readout) = match target {
        Ion::Ion1 => {
            (Observable(axis, Pauli::I), AnalysisRotation { global: rotation_axis, local: None }, ReadoutMode::Ion1Only)
        }
        Ion::Ion2 => {
            (Observable(Pauli::I, axis), AnalysisRotation { global: None, local: rotation_axis }, ReadoutMode::Ion2Only)
        }
    };
    let mut pulses = rotation.inverse_pulses();
    pulses.push(Pulse::transfer_rf());
    pulses.push(Pulse::transfer_sideband());
    if target == Ion::Ion2 {
        pulses.push(Pulse::carrier_pi());
    }
    Ok(MeasurementSetting { observable, rotation, pulses: PulseSequence(pulses), readout })
}

/// `(n0 + n2 − n1)/N` for joint readout; `(2·n2 − N)/N` for single-ion
/// readout, where the forced-bright ion makes `n2` the count of the measured
/// ion being bright.
pub fn expectation_from_counts(rec: &CountsRecord, mode: ReadoutMode) -> Result<f64> {
    let n = rec.total();
    if n == 0 {
        return Err(Error::ZeroShots(rec.index));
    }
    let (n0, n1, n2, n) = (rec.n0 as f64, rec.n1 as f64, rec.n2 as f64, n as f64);
    Ok(match mode {
        ReadoutMode::Joint => (n0 + n2 - n1) / n,
        ReadoutMode::Ion1Only | ReadoutMode::Ion2Only => (2.0 * n2 - n) / n,
    })
}

const PREP_CANDIDATES: [Pulse; 9] = [
    Pulse { kind: PulseKind::GlobalHalfPi, axis: Some(Axis::PlusX) },
    Pulse { kind: PulseKind::GlobalHalfPi, axis: Some(Axis::MinusX) },
    Pulse { kind: PulseKind::GlobalHalfPi, axis: Some(Axis::PlusY) },
    Pulse { kind: PulseKind::GlobalHalfPi, axis: Some(Axis::MinusY) },
    Pulse { kind: PulseKind::LocalHalfPi, axis: Some(Axis::PlusX) },
    Pulse { kind: PulseKind::LocalHalfPi, axis: Some(Axis::MinusX) },
    Pulse { kind: PulseKind::LocalHalfPi, axis: Some(Axis::PlusY) },
    Pulse { kind: PulseKind::LocalHalfPi, axis: Some(Axis::MinusY) },
    Pulse { kind: PulseKind::GlobalCarrierPi, axis: None },
];

fn search_preparation(target: &PureState) -> PulseSequence {
    let start = PureState::basis(0);
    let reaches = |seq: &[Pulse]| {
        let u = PulseSequence(seq.to_vec()).coherent_unitary();
        (target.overlap(&start.evolve(&u)).norm_sqr() - 1.0).abs() < 1e-12
    };
    // shortest first, then candidate order
    let mut frontier: Vec<Vec<Pulse>> = vec![Vec::new()];
    for _ in 0..=3 {
        if let Some(seq) = frontier.iter().find(|s| reaches(s)) {
            return PulseSequence(seq.clone());
        }
        frontier = frontier
            .iter()
            .flat_map(|s| {
                PREP_CANDIDATES.iter().map(move |p| {
                    let mut next = s.clone();
                    next.push(*p);
                    next
                })
            })
            .collect();
    }
    unreachable!("every product eigenstate is reachable within three pulses")
}

/// Pulses taking `|z⟩⊗|z⟩` to `|label1⟩⊗|label2⟩` (up to a global phase).
///
/// Sequences are at most two pulses long except for `(z̄, z)`: ion 1 needs a
/// global π rotation and ion 2 must then be rotated back by π with local
/// π/2 pulses, which takes three.
pub fn compile_preparation(label1: Eigenstate, label2: Eigenstate) -> PulseSequence {
    static TABLE: OnceLock<BTreeMap<(Eigenstate, Eigenstate), PulseSequence>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = BTreeMap::new();
        for l1 in Eigenstate::ALL {
            for l2 in Eigenstate::ALL {
                let target = state_tensor(&l1.state(), &l2.state());
                t.insert((l1, l2), search_preparation(&target));
            }
        }
        t
    })[&(label1, label2)]
        .clone()
}

/// One row of the experiment design.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SettingEntry {
    pub index: usize,
    pub prep: (Eigenstate, Eigenstate),
    pub prep_pulses: PulseSequence,
    pub obs: Observable,
    pub pulses: PulseSequence,
    pub readout: ReadoutMode,
    #[serde(skip)]
    pub rotation: AnalysisRotation,
}

impl SettingEntry {
    pub fn measurement(&self) -> MeasurementSetting {
        MeasurementSetting {
            observable: self.obs,
            rotation: self.rotation,
            pulses: self.pulses.clone(),
            readout: self.readout,
        }
    }

    /// Ideal prepared input state.
    pub fn input_state(&self) -> PureState {
        state_tensor(&self.prep.0.state(), &self.prep.1.state())
    }
}

/// The full 16 × 15 tomography design.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExperimentDesign {
    pub shots: u64,
    pub settings: Vec<SettingEntry>,
}

pub const N_INPUTS: usize = 16;
pub const N_OBSERVABLES: usize = 15;
pub const N_SETTINGS: usize = N_INPUTS * N_OBSERVABLES;

/// All 16 input labels in design order (ion 1 outer, each over x, y, z, z̄).
pub fn input_labels() -> Vec<(Eigenstate, Eigenstate)> {
    Eigenstate::ALL.iter().flat_map(|&a| Eigenstate::ALL.iter().map(move |&b| (a, b))).collect()
}

/// Canonical design: inputs outer, observables inner, both lexicographic.
pub fn design_experiment(shots: u64) -> Result<ExperimentDesign> {
    if shots == 0 {
        return Err(Error::InvalidArgument("shots per setting must be at least 1".into()));
    }
    let observables = Observable::all();
    let mut settings = Vec::with_capacity(N_SETTINGS);
    for prep in input_labels() {
        let prep_pulses = compile_preparation(prep.0, prep.1);
        for obs in &observables {
            let m = compile_measurement_setting(obs.0, obs.1)?;
            settings.push(SettingEntry {
                index: settings.len(),
                prep,
                prep_pulses: prep_pulses.clone(),
                obs: m.observable,
                pulses: m.pulses,
                readout: m.readout,
                rotation: m.rotation,
            });
        }
    }
    Ok(ExperimentDesign { shots, settings })
}

impl ExperimentDesign {
    pub fn total_shots(&self) -> u64 {
        self.shots * self.settings.len() as u64
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// SHA-256 (hex) of the compact canonical serialization.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("design serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    /// Parses a design file and checks it against the canonical design for the
    /// same shot count; the setting order is normative.
    pub fn from_json(s: &str) -> Result<Self> {
        let parsed: ExperimentDesign = serde_json::from_str(s)?;
        let canonical = design_experiment(parsed.shots)?;
        let same = parsed.settings.len() == canonical.settings.len()
            && parsed.settings.iter().zip(&canonical.settings).all(|(p, c)| {
                p.index == c.index
                    && p.prep == c.prep
                    && p.prep_pulses == c.prep_pulses
                    && p.obs == c.obs
                    && p.pulses == c.pulses
                    && p.readout == c.readout
            });
        if !same {
            return Err(Error::Inconsistent("design file differs from the canonical 240-setting design".into()));
        }
        Ok(canonical)
    }
}

/// Tallies of realizations with 0, 1 and 2 bright ions for one setting.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountsRecord {
    pub index: usize,
    pub n0: u64,
    pub n1: u64,
    pub n2: u64,
}

impl CountsRecord {
    pub fn total(&self) -> u64 {
        self.n0 + self.n1 + self.n2
    }

    pub fn as_array(&self) -> [u64; 3] {
        [self.n0, self.n1, self.n2]
    }
}

/// A counts file: header plus one record per setting.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountsDataset {
    pub shots: u64,
    pub design_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub counts: Vec<CountsRecord>,
}

impl CountsDataset {
    /// Checks that the records cover every setting of `design` exactly once
    /// with the declared shot count and that the hashes agree.
    pub fn validate(&self, design: &ExperimentDesign) -> Result<()> {
        let expected = design.hash();
        if self.design_hash != expected {
            return Err(Error::HashMismatch { expected, found: self.design_hash.clone() });
        }
        if self.shots != design.shots {
            return Err(Error::Inconsistent(format!("shots {} vs design {}", self.shots, design.shots)));
        }
        if self.counts.len() != design.settings.len() {
            return Err(Error::Inconsistent(format!(
                "{} records for {} settings",
                self.counts.len(),
                design.settings.len()
            )));
        }
        let mut seen = vec![false; design.settings.len()];
        for rec in &self.counts {
            let slot = seen
                .get_mut(rec.index)
                .ok_or_else(|| Error::Inconsistent(format!("setting index {} out of range", rec.index)))?;
            if std::mem::replace(slot, true) {
                return Err(Error::Inconsistent(format!("duplicate record for setting {}", rec.index)));
            }
            if rec.total() != self.shots {
                return Err(Error::Inconsistent(format!(
                    "record {} sums to {} instead of {}",
                    rec.index,
                    rec.total(),
                    self.shots
                )));
            }
        }
        Ok(())
    }
}

/// Output of linear state tomography; may fail positivity by a small margin.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StateEstimate {
    pub matrix: Op,
    pub min_eigenvalue: f64,
}

impl StateEstimate {
    pub fn is_physical(&self) -> bool {
        self.min_eigenvalue >= crate::qcore::EIGEN_FLOOR
    }

    pub fn to_density(&self) -> Result<DensityMatrix> {
        DensityMatrix::new(self.matrix)
    }
}

/// `ρ = ¼ Σ_ij ⟨σ_i⊗σ_j⟩ σ_i⊗σ_j` with `⟨σ_0⊗σ_0⟩ = 1`.
pub fn rho_from_expectations(values: &BTreeMap<Observable, f64>) -> Result<StateEstimate> {
    let basis = pauli_basis();
    let mut m = basis[0];
    for obs in Observable::all() {
        let v = values.get(&obs).ok_or_else(|| Error::MissingObservable(obs.to_string()))?;
        m += basis[obs.basis_index()] * c(*v, 0.0);
    }
    let m = m.scale(0.25);
    let min_eigenvalue = hermitian_eigen(&m).0[0];
    Ok(StateEstimate { matrix: m, min_eigenvalue })
}

/// Exact expectation values of all 15 observables for `rho`.
pub fn expectations_of(rho: &Op) -> BTreeMap<Observable, f64> {
    Observable::all().into_iter().map(|o| (o, (rho * o.matrix()).trace().re)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qcore::max_abs;

    fn zz() -> Op {
        pauli_basis()[15]
    }

    #[test]
    fn named_joint_compilations() {
        let zx = compile_measurement_setting(Pauli::Z, Pauli::X).unwrap();
        assert_eq!(zx.rotation, AnalysisRotation { global: None, local: Some(Axis::MinusY) });
        let xy = compile_measurement_setting(Pauli::X, Pauli::Y).unwrap();
        assert_eq!(xy.rotation, AnalysisRotation { global: Some(Axis::MinusY), local: Some(Axis::PlusX) });
        let xz = compile_measurement_setting(Pauli::X, Pauli::Z).unwrap();
        assert_eq!(xz.rotation, AnalysisRotation { global: Some(Axis::MinusY), local: Some(Axis::PlusY) });
        let zz_setting = compile_measurement_setting(Pauli::Z, Pauli::Z).unwrap();
        assert!(zz_setting.pulses.is_empty());
        assert_eq!(zz_setting.readout, ReadoutMode::Joint);
    }

    #[test]
    fn joint_conjugation_identity() {
        for i in [Pauli::X, Pauli::Y, Pauli::Z] {
            for j in [Pauli::X, Pauli::Y, Pauli::Z] {
                let m = compile_measurement_setting(i, j).unwrap();
                let r = m.rotation.operator();
                let lhs = r.adjoint() * m.observable.matrix() * r;
                assert!(max_abs(&(lhs - zz())) < 1e-12, "({i},{j})");
                // the physical pulses realize R†
                assert!(max_abs(&(m.analysis_unitary() - r.adjoint())) < 1e-12);
            }
        }
    }

    #[test]
    fn single_ion_sequences() {
        let s = compile_single_ion_setting(Ion::Ion1, Pauli::Z).unwrap();
        assert_eq!(s.pulses.0, vec![Pulse::transfer_rf(), Pulse::transfer_sideband()]);
        assert_eq!(s.readout, ReadoutMode::Ion1Only);
        let s = compile_single_ion_setting(Ion::Ion2, Pauli::Z).unwrap();
        assert_eq!(s.pulses.0, vec![Pulse::transfer_rf(), Pulse::transfer_sideband(), Pulse::carrier_pi()]);
        let s = compile_single_ion_setting(Ion::Ion1, Pauli::X).unwrap();
        assert_eq!(s.pulses.0[0].kind, PulseKind::GlobalHalfPi);
        assert_eq!(&s.pulses.0[1..], &[Pulse::transfer_rf(), Pulse::transfer_sideband()]);
        // conjugation oracle restricted to the target ion
        for (ion, axis) in [(Ion::Ion1, Pauli::X), (Ion::Ion1, Pauli::Y), (Ion::Ion2, Pauli::X), (Ion::Ion2, Pauli::Y)]
        {
            let s = compile_single_ion_setting(ion, axis).unwrap();
            let r = s.rotation.operator();
            let z_target = match ion {
                Ion::Ion1 => pauli_basis()[12],
                Ion::Ion2 => pauli_basis()[3],
            };
            let lhs = r.adjoint() * s.observable.matrix() * r;
            assert!(max_abs(&(lhs - z_target)) < 1e-12);
        }
        assert!(compile_single_ion_setting(Ion::Ion1, Pauli::I).is_err());
        assert!(compile_measurement_setting(Pauli::I, Pauli::I).is_err());
    }

    #[test]
    fn preparation_examples() {
        assert!(compile_preparation(Eigenstate::Z, Eigenstate::Z).is_empty());
        let xx = compile_preparation(Eigenstate::X, Eigenstate::X);
        assert_eq!(xx.len(), 1);
        assert_eq!(xx.0[0].kind, PulseKind::GlobalHalfPi);
        // 2x2 oracle: the chosen axis maps |z⟩ to |x⟩
        let r = rotation(&xx.0[0].axis.unwrap().sigma(), std::f64::consts::FRAC_PI_2);
        let out = r * Eigenstate::Z.state().amplitudes();
        assert!((Eigenstate::X.state().amplitudes().dotc(&out).norm_sqr() - 1.0).abs() < 1e-12);
        let zy = compile_preparation(Eigenstate::Z, Eigenstate::Y);
        assert_eq!(zy.len(), 1);
        assert_eq!(zy.0[0].kind, PulseKind::LocalHalfPi);
        let r = rotation(&zy.0[0].axis.unwrap().sigma(), std::f64::consts::FRAC_PI_2);
        let out = r * Eigenstate::Z.state().amplitudes();
        assert!((Eigenstate::Y.state().amplitudes().dotc(&out).norm_sqr() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn all_preparations_reach_targets() {
        for (l1, l2) in input_labels() {
            let seq = compile_preparation(l1, l2);
            let expected_max = if (l1, l2) == (Eigenstate::ZBar, Eigenstate::Z) { 3 } else { 2 };
            assert!(seq.len() <= expected_max, "({l1},{l2}) took {}", seq.len());
            let out = PureState::basis(0).evolve(&seq.coherent_unitary());
            let target = state_tensor(&l1.state(), &l2.state());
            assert!((target.overlap(&out).norm_sqr() - 1.0).abs() < 1e-12);
        }
    }

    fn rec(n0: u64, n1: u64, n2: u64) -> CountsRecord {
        CountsRecord { index: 0, n0, n1, n2 }
    }

    #[test]
    fn expectation_examples() {
        assert_eq!(expectation_from_counts(&rec(200, 0, 200), ReadoutMode::Joint).unwrap(), 1.0);
        assert_eq!(expectation_from_counts(&rec(0, 400, 0), ReadoutMode::Joint).unwrap(), -1.0);
        assert_eq!(expectation_from_counts(&rec(100, 200, 100), ReadoutMode::Joint).unwrap(), 0.0);
        assert_eq!(expectation_from_counts(&rec(0, 100, 300), ReadoutMode::Ion1Only).unwrap(), 0.5);
        assert!(matches!(expectation_from_counts(&rec(0, 0, 0), ReadoutMode::Joint), Err(Error::ZeroShots(0))));
    }

    #[test]
    fn design_counts() {
        let d = design_experiment(400).unwrap();
        assert_eq!(d.settings.len(), 240);
        assert_eq!(d.total_shots(), 96_000);
        let joint = d.settings.iter().filter(|s| s.readout == ReadoutMode::Joint).count();
        assert_eq!(joint, 144);
        assert_eq!(d.settings.len() - joint, 96);
        let d1 = design_experiment(1).unwrap();
        assert_eq!(d1.total_shots(), 240);
        assert!(design_experiment(0).is_err());
        let mut pairs: Vec<_> = d.settings.iter().map(|s| (s.prep, s.obs)).collect();
        pairs.sort();
        pairs.dedup();
        assert_eq!(pairs.len(), 240);
    }

    #[test]
    fn design_json_round_trip_and_hash() {
        let d = design_experiment(400).unwrap();
        let json = d.to_json().unwrap();
        let back = ExperimentDesign::from_json(&json).unwrap();
        assert_eq!(back, d);
        assert_eq!(back.hash(), d.hash());
        assert_eq!(design_experiment(400).unwrap().hash(), d.hash());
        assert_ne!(design_experiment(401).unwrap().hash(), d.hash());
        let tampered = json.replacen("\"Ion1Only\"", "\"Joint\"", 1);
        assert!(ExperimentDesign::from_json(&tampered).is_err());
    }

    #[test]
    fn rho_from_expectation_examples() {
        let zeros: BTreeMap<Observable, f64> = Observable::all().into_iter().map(|o| (o, 0.0)).collect();
        let est = rho_from_expectations(&zeros).unwrap();
        assert!(max_abs(&(est.matrix - Op::identity().scale(0.25))) < 1e-15);

        // Φ+ = (|SS⟩+|DD⟩)/√2 : brute-force Pauli decomposition
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let phi_plus =
            PureState::new(nalgebra::Vector4::new(c(h, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(h, 0.0))).unwrap().projector();
        let brute = expectations_of(phi_plus.matrix());
        for (o, v) in &brute {
            let want = match (o.0, o.1) {
                (Pauli::X, Pauli::X) | (Pauli::Z, Pauli::Z) => 1.0,
                (Pauli::Y, Pauli::Y) => -1.0,
                _ => 0.0,
            };
            assert!((v - want).abs() < 1e-15, "{o}");
        }
        let mut vals = zeros.clone();
        vals.insert(Observable(Pauli::X, Pauli::X), 1.0);
        vals.insert(Observable(Pauli::Z, Pauli::Z), 1.0);
        vals.insert(Observable(Pauli::Y, Pauli::Y), -1.0);
        let est = rho_from_expectations(&vals).unwrap();
        assert!(max_abs(&(est.matrix - phi_plus.matrix())) < 1e-15);

        let bell = PureState::ms_bell().projector();
        let est = rho_from_expectations(&expectations_of(bell.matrix())).unwrap();
        assert!(max_abs(&(est.matrix - bell.matrix())) < 1e-12);

        let mut missing = zeros;
        missing.remove(&Observable(Pauli::Y, Pauli::I));
        assert!(matches!(rho_from_expectations(&missing), Err(Error::MissingObservable(_))));
    }

    #[test]
    fn outcome_projectors_partition_identity() {
        for mode in [ReadoutMode::Joint, ReadoutMode::Ion1Only, ReadoutMode::Ion2Only] {
            for flip in [0.0, 0.03] {
                let p = outcome_projectors(mode, flip);
                assert!(max_abs(&(p[0] + p[1] + p[2] - Op::identity())) < 1e-15);
            }
        }
        let p = outcome_projectors(ReadoutMode::Ion1Only, 0.0);
        assert_eq!(p[0], Op::zeros());
    }
}
