//! C ABI over the adjustment pipeline.
//!
//! Every fallible call returns an [`NaStatus`] whose values match the
//! `netadjust` exit codes. The message for the most recent failure on the
//! calling thread is available from [`na_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use netadjust::adjust::AdjustmentResult;
use netadjust::control::ControlDatabase;
use netadjust::pipeline::{self, AdjustReport, Inputs, PipelineConfig, PipelineError, Stage};
use netadjust::regress::{self, PointSample};

/// Result of a call. Values 2 to 6 are the pipeline stage codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NaStatus {
    Ok = 0,
    /// Null pointer, invalid UTF-8 or an out-of-range argument.
    InvalidArgument = 1,
    Compile = 2,
    Scan = 3,
    Analyze = 4,
    Adjust = 5,
    Transform = 6,
    /// A Rust panic was caught at the boundary.
    Internal = 70,
}

impl From<Stage> for NaStatus {
    fn from(s: Stage) -> Self {
        match s {
            Stage::Compile => NaStatus::Compile,
            Stage::Scan => NaStatus::Scan,
            Stage::Analyze => NaStatus::Analyze,
            Stage::Adjust => NaStatus::Adjust,
            Stage::Transform => NaStatus::Transform,
        }
    }
}

/// Opaque handle to a finished adjustment.
pub struct NaAdjustment {
    result: AdjustmentResult,
    report: AdjustReport,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let s = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(s).ok());
}

struct Failure(NaStatus, String);

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Failure(e.stage.into(), e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(NaStatus::InvalidArgument, msg.into())
}

/// Runs `f`, recording any failure or caught panic.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> NaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => NaStatus::Ok,
        Ok(Err(Failure(code, msg))) => {
            set_error(msg);
            code
        }
        Err(_) => {
            set_error("internal panic");
            NaStatus::Internal
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(invalid(format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{name} is not valid UTF-8")))
}

fn out_arg<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    // SAFETY: non-null output pointers are required to be valid for writes.
    unsafe { p.as_mut() }.ok_or_else(|| invalid(format!("{name} is null")))
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s).map_or(ptr::null_mut(), CString::into_raw)
}

fn load_inputs(fieldbook: &str, controls: &str) -> Result<Inputs, Failure> {
    let controls = ControlDatabase::from_csv(controls.as_bytes())
        .map_err(|e| Failure(NaStatus::Compile, format!("controls: {e}")))?;
    Ok(Inputs {
        fieldbook_text: fieldbook.to_owned(),
        controls,
    })
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn na_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Frees a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn na_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Runs compile, scan, analyze and adjust on in-memory inputs and writes the
/// combined JSON report to `out_json` (free with [`na_string_free`]).
///
/// # Safety
/// String arguments must be valid NUL-terminated strings; `out_json` must be
/// valid for writes.
#[no_mangle]
pub unsafe extern "C" fn na_compute_json(
    fieldbook: *const c_char,
    controls_csv: *const c_char,
    datum: *const c_char,
    out_json: *mut *mut c_char,
) -> NaStatus {
    guard(|| {
        let out = out_arg(out_json, "out_json")?;
        *out = ptr::null_mut();
        let inputs = load_inputs(str_arg(fieldbook, "fieldbook")?, str_arg(controls_csv, "controls_csv")?)?;
        let config = PipelineConfig::new("<memory>", "<memory>", str_arg(datum, "datum")?);
        let report = pipeline::compute(&inputs, &config)?;
        *out = into_c_string(pipeline::to_json(&report));
        Ok(())
    })
}

/// Adjusts the network and returns a handle in `out` (free with
/// [`na_adjustment_free`]).
///
/// # Safety
/// As for [`na_compute_json`].
#[no_mangle]
pub unsafe extern "C" fn na_adjustment_run(
    fieldbook: *const c_char,
    controls_csv: *const c_char,
    datum: *const c_char,
    out: *mut *mut NaAdjustment,
) -> NaStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let inputs = load_inputs(str_arg(fieldbook, "fieldbook")?, str_arg(controls_csv, "controls_csv")?)?;
        let datum = str_arg(datum, "datum")?;
        let config = PipelineConfig::new("<memory>", "<memory>", datum);
        let (ds, _) = pipeline::run_compile(&inputs.fieldbook_text, &config.sigma)?;
        let scan = pipeline::run_scan(&ds, &inputs.controls, datum, true)?;
        let fixed = inputs.controls.coordinates_in(datum);
        let (result, report) = pipeline::run_adjust(&ds, &scan, &fixed, &config.options(), false)?;
        *out = Box::into_raw(Box::new(NaAdjustment { result, report }));
        Ok(())
    })
}

/// # Safety
/// `h` must come from [`na_adjustment_run`] and not have been freed. Null is
/// ignored.
#[no_mangle]
pub unsafe extern "C" fn na_adjustment_free(h: *mut NaAdjustment) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

unsafe fn handle<'a>(h: *const NaAdjustment) -> Result<&'a NaAdjustment, Failure> {
    h.as_ref().ok_or_else(|| invalid("handle is null"))
}

/// Number of iterations the adjustment took, or 0 for a null handle.
///
/// # Safety
/// `h` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn na_adjustment_iterations(h: *const NaAdjustment) -> usize {
    h.as_ref().map_or(0, |a| a.result.iterations)
}

/// Number of stations (fixed and free) in the result.
///
/// # Safety
/// `h` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn na_adjustment_station_count(h: *const NaAdjustment) -> usize {
    h.as_ref().map_or(0, |a| a.result.coordinates.len())
}

/// A-posteriori variance of unit weight. Fails with `Adjust` when the
/// redundancy is zero.
///
/// # Safety
/// `h` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn na_adjustment_unit_variance(h: *const NaAdjustment, out: *mut f64) -> NaStatus {
    guard(|| {
        let a = handle(h)?;
        let out = out_arg(out, "out")?;
        *out = a
            .result
            .unit_variance
            .ok_or_else(|| Failure(NaStatus::Adjust, "zero redundancy: unit variance undefined".into()))?;
        Ok(())
    })
}

/// Adjusted coordinates of `station`. `sd_e` and `sd_n` may be null; they
/// receive NaN for fixed stations and zero-redundancy solutions.
///
/// # Safety
/// `h` must be a live handle, `station` a valid string and non-null output
/// pointers valid for writes.
#[no_mangle]
pub unsafe extern "C" fn na_adjustment_station(
    h: *const NaAdjustment,
    station: *const c_char,
    easting: *mut f64,
    northing: *mut f64,
    sd_e: *mut f64,
    sd_n: *mut f64,
) -> NaStatus {
    guard(|| {
        let a = handle(h)?;
        let id = str_arg(station, "station")?;
        let c = a
            .result
            .coordinates
            .get(id)
            .ok_or_else(|| invalid(format!("station {id} is not in the result")))?;
        *out_arg(easting, "easting")? = c.easting;
        *out_arg(northing, "northing")? = c.northing;
        let (se, sn) = a.result.std_devs(id).unwrap_or((f64::NAN, f64::NAN));
        if let Some(p) = sd_e.as_mut() {
            *p = se;
        }
        if let Some(p) = sd_n.as_mut() {
            *p = sn;
        }
        Ok(())
    })
}

/// JSON adjustment report (free with [`na_string_free`]), or null for a null
/// handle.
///
/// # Safety
/// `h` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn na_adjustment_report_json(h: *const NaAdjustment) -> *mut c_char {
    match h.as_ref() {
        Some(a) => into_c_string(pipeline::to_json(&a.report)),
        None => ptr::null_mut(),
    }
}

/// Least-squares line `y = a + b x` through `n` points. `s_yx` may be null
/// and receives NaN when `n == 2`.
///
/// # Safety
/// `xs` and `ys` must point to `n` readable values; `a` and `b` must be valid
/// for writes.
#[no_mangle]
pub unsafe extern "C" fn na_fit_simple_line(
    xs: *const f64,
    ys: *const f64,
    n: usize,
    a: *mut f64,
    b: *mut f64,
    s_yx: *mut f64,
) -> NaStatus {
    guard(|| {
        if xs.is_null() || ys.is_null() {
            return Err(invalid("sample arrays are null"));
        }
        let xs = std::slice::from_raw_parts(xs, n);
        let ys = std::slice::from_raw_parts(ys, n);
        let samples: Vec<PointSample> = xs.iter().zip(ys).map(|(&x, &y)| PointSample::new(x, y)).collect();
        let fit = regress::fit_simple_line(&samples).map_err(|e| Failure(NaStatus::Adjust, e.to_string()))?;
        *out_arg(a, "a")? = fit.intercept_a;
        *out_arg(b, "b")? = fit.gradient_b;
        if let Some(p) = s_yx.as_mut() {
            *p = fit.std_error_estimate.unwrap_or(f64::NAN);
        }
        Ok(())
    })
}
