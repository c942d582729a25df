//! C interface to the `ms-qpt` toolkit.
//!
//! Objects cross the boundary as opaque handles created by `msqpt_*_new` or
//! returned through out-parameters, and released with the matching
//! `msqpt_*_free`. Every fallible call returns an [`MsqptStatus`]; on failure
//! the message is available from [`msqpt_last_error`] on the same thread.
//! Panics never unwind into C: they are reported as `MSQPT_STATUS_PANIC`.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use ms_qpt::io::MatrixJson;
use ms_qpt::metrics::{mean_fidelity, mean_purity, HaarSampler};
use ms_qpt::msgate::ms_unitary;
use ms_qpt::noise::{fit_depol_rate, ms_depolarized_chi};
use ms_qpt::protocol::{design_experiment, CountsDataset, ExperimentDesign};
use ms_qpt::qcore::{unitary_to_chi, ChiMatrix};
use ms_qpt::simulator::{simulate_dataset, NoiseKnobs, TrueProcess};
use ms_qpt::tomography::{mle_reconstruct, MleOptions, TomographyResult};
use ms_qpt::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MsqptStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// The call produced a result, but the optimizer stopped before converging.
    NotConverged = 3,
    Io = 4,
    Json = 5,
    /// A matrix failed a physicality or solvability check.
    Numerical = 6,
    Panic = 7,
}

/// Opaque measurement design.
pub struct MsqptDesign(ExperimentDesign);
/// Opaque counts dataset.
pub struct MsqptCounts(CountsDataset);
/// Opaque 16 × 16 process matrix in the Pauli basis.
pub struct MsqptChi(ChiMatrix);
/// Opaque reconstruction result.
pub struct MsqptResult(TomographyResult);

/// Imperfection settings for [`msqpt_simulate`].
#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct MsqptNoise {
    pub depol_per_gate: f64,
    pub rotation_overangle: f64,
    pub local_addressing_error: f64,
    pub readout_flip: f64,
    pub seed: u64,
}

impl From<MsqptNoise> for NoiseKnobs {
    fn from(n: MsqptNoise) -> Self {
        NoiseKnobs {
            depol_per_gate: n.depol_per_gate,
            rotation_overangle: n.rotation_overangle,
            local_addressing_error: n.local_addressing_error,
            readout_flip: n.readout_flip,
            seed: n.seed,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn status_of(e: &Error) -> MsqptStatus {
    match e {
        Error::Io(_) => MsqptStatus::Io,
        Error::Json(_) => MsqptStatus::Json,
        Error::NotHermitian(_)
        | Error::BadTrace(_)
        | Error::NotPositive(_)
        | Error::NotUnitary(_)
        | Error::NotNormalized(_)
        | Error::NotTracePreserving(_)
        | Error::Singular(_)
        | Error::CutoffInsufficient { .. } => MsqptStatus::Numerical,
        Error::NonConvergentIntegration(_) => MsqptStatus::NotConverged,
        _ => MsqptStatus::InvalidArgument,
    }
}

type FfiResult<T> = std::result::Result<T, (MsqptStatus, String)>;

fn lift<T>(r: ms_qpt::Result<T>) -> FfiResult<T> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (MsqptStatus, String) {
    (MsqptStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, converting errors and panics into a status.
fn guard(f: impl FnOnce() -> FfiResult<MsqptStatus>) -> MsqptStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(status)) => status,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            MsqptStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> FfiResult<&'a T> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> FfiResult<()> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn put_value<T>(out: *mut T, value: T) -> FfiResult<()> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = value;
    Ok(())
}

unsafe fn put_string(out: *mut *mut c_char, s: String) -> FfiResult<()> {
    let c = CString::new(s).map_err(|_| (MsqptStatus::InvalidArgument, "string contains NUL".to_string()))?;
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = c.into_raw();
    Ok(())
}

unsafe fn read_str<'a>(p: *const c_char) -> FfiResult<&'a str> {
    if p.is_null() {
        return Err(null("string"));
    }
    CStr::from_ptr(p).to_str().map_err(|_| (MsqptStatus::InvalidArgument, "string is not UTF-8".to_string()))
}

unsafe fn free_box<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Copies the calling thread's last error message into `buf` (NUL
/// terminated, truncated to `len`) and returns the full message length
/// excluding the terminator.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn msqpt_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Frees a string returned by this library.
///
/// # Safety
/// `s` must be null or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn msqpt_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Creates the canonical 240-setting design with `shots` repetitions each.
///
/// # Safety
/// `out` must be a valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn msqpt_design_new(shots: u64, out: *mut *mut MsqptDesign) -> MsqptStatus {
    guard(|| {
        put(out, MsqptDesign(lift(design_experiment(shots))?))?;
        Ok(MsqptStatus::Ok)
    })
}

/// # Safety
/// `design` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn msqpt_design_free(design: *mut MsqptDesign) {
    free_box(design)
}

/// Number of measurement settings, or 0 for a null handle.
///
/// # Safety
/// `design` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn msqpt_design_num_settings(design: *const MsqptDesign) -> usize {
    design.as_ref().map_or(0, |d| d.0.settings.len())
}

/// Writes the hex SHA-256 of the design as a new string.
///
/// # Safety
/// `design` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn msqpt_design_hash(design: *const MsqptDesign, out: *mut *mut c_char) -> MsqptStatus {
    guard(|| {
        put_string(out, deref(design, "design")?.0.hash())?;
        Ok(MsqptStatus::Ok)
    })
}

/// Samples counts for `n_gates` MS gates (0 for the identity process).
///
/// # Safety
/// `design` must be a live handle, `noise` null or valid, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn msqpt_simulate(
    design: *const MsqptDesign,
    n_gates: u32,
    noise: *const MsqptNoise,
    out: *mut *mut MsqptCounts,
) -> MsqptStatus {
    guard(|| {
        let design = &deref(design, "design")?.0;
        let knobs: NoiseKnobs = noise.as_ref().copied().unwrap_or_default().into();
        lift(knobs.validate())?;
        let proc = if n_gates == 0 { TrueProcess::identity(knobs) } else { TrueProcess::ms(n_gates, knobs) };
        put(out, MsqptCounts(lift(simulate_dataset(&proc, design))?))?;
        Ok(MsqptStatus::Ok)
    })
}

/// Parses a counts file's JSON text.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn msqpt_counts_from_json(json: *const c_char, out: *mut *mut MsqptCounts) -> MsqptStatus {
    guard(|| {
        let data: CountsDataset = lift(serde_json::from_str(read_str(json)?).map_err(Error::from))?;
        put(out, MsqptCounts(data))?;
        Ok(MsqptStatus::Ok)
    })
}

/// Serializes counts to JSON as a new string.
///
/// # Safety
/// `counts` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn msqpt_counts_to_json(counts: *const MsqptCounts, out: *mut *mut c_char) -> MsqptStatus {
    guard(|| {
        let text = lift(serde_json::to_string(&deref(counts, "counts")?.0).map_err(Error::from))?;
        put_string(out, text)?;
        Ok(MsqptStatus::Ok)
    })
}

/// # Safety
/// `counts` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn msqpt_counts_free(counts: *mut MsqptCounts) {
    free_box(counts)
}

/// Maximum-likelihood reconstruction. Returns `MSQPT_STATUS_NOT_CONVERGED`
/// with a valid `*out` when the optimizer stopped early.
///
/// # Safety
/// Handles must be live and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn msqpt_reconstruct(
    counts: *const MsqptCounts,
    design: *const MsqptDesign,
    trace_preserving: bool,
    restarts: usize,
    seed: u64,
    out: *mut *mut MsqptResult,
) -> MsqptStatus {
    guard(|| {
        let opts = MleOptions { trace_preserving, restarts, seed, ..Default::default() };
        let result = lift(mle_reconstruct(&deref(counts, "counts")?.0, &deref(design, "design")?.0, &opts))?;
        let converged = result.converged;
        put(out, MsqptResult(result))?;
        if converged {
            Ok(MsqptStatus::Ok)
        } else {
            set_error("maximum-likelihood fit did not converge");
            Ok(MsqptStatus::NotConverged)
        }
    })
}

/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn msqpt_result_free(result: *mut MsqptResult) {
    free_box(result)
}

/// Copies the reconstructed χ into a new handle.
///
/// # Safety
/// `result` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn msqpt_result_chi(result: *const MsqptResult, out: *mut *mut MsqptChi) -> MsqptStatus {
    guard(|| {
        put(out, MsqptChi(deref(result, "result")?.0.chi))?;
        Ok(MsqptStatus::Ok)
    })
}

/// # Safety
/// `result` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn msqpt_result_log_likelihood(result: *const MsqptResult, out: *mut f64) -> MsqptStatus {
    guard(|| {
        put_value(out, deref(result, "result")?.0.log_likelihood)?;
        Ok(MsqptStatus::Ok)
    })
}

/// χ of `n_gates` ideal MS gates, each followed by depolarization `alpha`.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn msqpt_chi_ms(n_gates: u32, alpha: f64, out: *mut *mut MsqptChi) -> MsqptStatus {
    guard(|| {
        let chi = if alpha == 0.0 {
            lift(unitary_to_chi(&ms_unitary(n_gates)))?
        } else {
            lift(ms_depolarized_chi(n_gates, alpha))?
        };
        put(out, MsqptChi(chi))?;
        Ok(MsqptStatus::Ok)
    })
}

/// # Safety
/// `chi` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn msqpt_chi_free(chi: *mut MsqptChi) {
    free_box(chi)
}

/// Reads element `(a, b)`, where `a = 4i + j` indexes `σ_i ⊗ σ_j` in the order I, X, Y, Z.
///
/// # Safety
/// `chi` must be a live handle; `re` and `im` valid.
#[no_mangle]
pub unsafe extern "C" fn msqpt_chi_get(
    chi: *const MsqptChi,
    a: usize,
    b: usize,
    re: *mut f64,
    im: *mut f64,
) -> MsqptStatus {
    guard(|| {
        let chi = &deref(chi, "chi")?.0;
        if a >= 16 || b >= 16 {
            return Err((MsqptStatus::InvalidArgument, format!("index ({a}, {b}) out of range")));
        }
        let v = chi.get(a, b);
        put_value(re, v.re)?;
        put_value(im, v.im)?;
        Ok(MsqptStatus::Ok)
    })
}

/// Serializes χ in the matrix JSON format as a new string.
///
/// # Safety
/// `chi` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn msqpt_chi_to_json(chi: *const MsqptChi, out: *mut *mut c_char) -> MsqptStatus {
    guard(|| {
        let json = MatrixJson::from_chi(&deref(chi, "chi")?.0);
        put_string(out, lift(serde_json::to_string(&json).map_err(Error::from))?)?;
        Ok(MsqptStatus::Ok)
    })
}

/// Parses χ from the matrix JSON format.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn msqpt_chi_from_json(json: *const c_char, out: *mut *mut MsqptChi) -> MsqptStatus {
    guard(|| {
        let m: MatrixJson = lift(serde_json::from_str(read_str(json)?).map_err(Error::from))?;
        put(out, MsqptChi(lift(m.to_chi())?))?;
        Ok(MsqptStatus::Ok)
    })
}

/// Haar-average fidelity of `measured` to `target` over `samples` states.
///
/// # Safety
/// Handles must be live and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn msqpt_mean_fidelity(
    measured: *const MsqptChi,
    target: *const MsqptChi,
    seed: u64,
    samples: usize,
    out: *mut f64,
) -> MsqptStatus {
    guard(|| {
        let sampler = HaarSampler::new(seed, samples.max(1));
        let f = lift(mean_fidelity(&deref(measured, "measured")?.0, &deref(target, "target")?.0, &sampler))?;
        put_value(out, f)?;
        Ok(MsqptStatus::Ok)
    })
}

/// Haar-average output purity of a process.
///
/// # Safety
/// `chi` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn msqpt_mean_purity(
    chi: *const MsqptChi,
    seed: u64,
    samples: usize,
    out: *mut f64,
) -> MsqptStatus {
    guard(|| {
        let sampler = HaarSampler::new(seed, samples.max(1));
        put_value(out, lift(mean_purity(&deref(chi, "chi")?.0, &sampler))?)?;
        Ok(MsqptStatus::Ok)
    })
}

/// Fits the per-gate depolarization rate to mean purities measured at the
/// gate counts `n_gates[0..len]`; a gate count of 0 is ignored.
///
/// # Safety
/// `n_gates` and `purities` must point to `len` readable values; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn msqpt_fit_depol_rate(
    n_gates: *const u32,
    purities: *const f64,
    len: usize,
    seed: u64,
    samples: usize,
    out: *mut f64,
) -> MsqptStatus {
    guard(|| {
        if n_gates.is_null() || purities.is_null() {
            return Err(null("input array"));
        }
        let ns = std::slice::from_raw_parts(n_gates, len);
        let ps = std::slice::from_raw_parts(purities, len);
        let data: BTreeMap<u32, f64> = ns.iter().copied().zip(ps.iter().copied()).collect();
        let fit = lift(fit_depol_rate(&data, true, &HaarSampler::new(seed, samples.max(1))))?;
        put_value(out, fit.alpha)?;
        Ok(MsqptStatus::Ok)
    })
}
