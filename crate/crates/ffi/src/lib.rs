//! C ABI for the tfqkd toolkit.
//!
//! Every fallible function returns a [`TfqkdStatus`]; on failure the message
//! is available from [`tfqkd_last_error`] on the same thread. Handles are
//! opaque and must be released with their matching `_free` function.
//! Panics never cross the boundary; they surface as `TFQKD_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use tfqkd::analysis::{self, FiniteKeyBounds, FiniteKeyParams, Flag};
use tfqkd::comb::line_frequency;
use tfqkd::config::ExperimentConfig;
use tfqkd::harness::{run_keyrate, run_simulate, ReportRow};
use tfqkd::ledger::LedgerTable;
use tfqkd::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TfqkdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidParameter = 2,
    Domain = 3,
    Parse = 4,
    Invariant = 5,
    Io = 6,
    IndexOutOfRange = 7,
    InvalidUtf8 = 8,
    Panic = 9,
}

pub const TFQKD_FLAG_Y1_CLAMPED: u32 = 1;
pub const TFQKD_FLAG_E1PH_DENOMINATOR: u32 = 1 << 1;
pub const TFQKD_FLAG_E1PH_CLAMPED: u32 = 1 << 2;
pub const TFQKD_FLAG_RATE_CLAMPED: u32 = 1 << 3;
pub const TFQKD_FLAG_NO_WINDOWS: u32 = 1 << 4;
pub const TFQKD_FLAG_NO_Z_DETECTIONS: u32 = 1 << 5;

fn flag_bit(f: Flag) -> u32 {
    match f {
        Flag::Y1Clamped => TFQKD_FLAG_Y1_CLAMPED,
        Flag::PhaseErrorDenominator => TFQKD_FLAG_E1PH_DENOMINATOR,
        Flag::PhaseErrorClamped => TFQKD_FLAG_E1PH_CLAMPED,
        Flag::RateClamped => TFQKD_FLAG_RATE_CLAMPED,
        Flag::NoWindows => TFQKD_FLAG_NO_WINDOWS,
        Flag::NoZDetections => TFQKD_FLAG_NO_Z_DETECTIONS,
    }
}

fn flag_mask<'a>(flags: impl IntoIterator<Item = &'a Flag>) -> u32 {
    flags.into_iter().fold(0, |m, f| m | flag_bit(*f))
}

/// Finite-size security parameters.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TfqkdParams {
    pub eps_cor: f64,
    pub eps_pa: f64,
    pub eps_hat: f64,
    pub eps_pe: f64,
    pub f_ec: f64,
}

impl From<TfqkdParams> for FiniteKeyParams {
    fn from(p: TfqkdParams) -> Self {
        FiniteKeyParams {
            eps_cor: p.eps_cor,
            eps_pa: p.eps_pa,
            eps_hat: p.eps_hat,
            eps_pe: p.eps_pe,
            f_ec: p.f_ec,
        }
    }
}

impl From<FiniteKeyParams> for TfqkdParams {
    fn from(p: FiniteKeyParams) -> Self {
        TfqkdParams {
            eps_cor: p.eps_cor,
            eps_pa: p.eps_pa,
            eps_hat: p.eps_hat,
            eps_pe: p.eps_pe,
            f_ec: p.f_ec,
        }
    }
}

/// Inputs of the key-rate formula (after-pairing quantities plus n_vy + n_yv).
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TfqkdBounds {
    pub n1_before: f64,
    pub n1_after: f64,
    pub e1ph_before: f64,
    pub e1ph_after: f64,
    pub n_t: f64,
    pub e_t: f64,
    pub n_vy_plus_n_yv: f64,
}

impl From<TfqkdBounds> for FiniteKeyBounds {
    fn from(b: TfqkdBounds) -> Self {
        FiniteKeyBounds {
            n1_before: b.n1_before,
            n1_after: b.n1_after,
            e1ph_before: b.e1ph_before,
            e1ph_after: b.e1ph_after,
            n_t: b.n_t,
            e_t: b.e_t,
            n_vy_plus_n_yv: b.n_vy_plus_n_yv,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TfqkdKeyRate {
    pub r_per_pulse: f64,
    pub r_bps: f64,
    pub entropy_phase: f64,
    pub leak_ec: f64,
    pub r_tail: f64,
    pub r_unclamped: f64,
    /// Bitwise OR of `TFQKD_FLAG_*`.
    pub flags: u32,
}

/// One report row; the label is fetched separately with `tfqkd_reports_label`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TfqkdReport {
    pub channels: u32,
    pub r_per_pulse: f64,
    pub r_bps: f64,
    pub n1_before: f64,
    pub n1_after: f64,
    pub e1ph_before: f64,
    pub e1ph_after: f64,
    pub n_t: f64,
    pub e_t: f64,
    pub leak_ec: f64,
    pub r_tail: f64,
    pub z_error: f64,
    pub x_error: f64,
    pub flags: u32,
}

/// Opaque experiment configuration.
pub struct TfqkdConfig {
    inner: ExperimentConfig,
}

/// Opaque set of report rows with their labels.
pub struct TfqkdReports {
    rows: Vec<ReportRow>,
    labels: Vec<CString>,
}

impl TfqkdReports {
    fn new(rows: Vec<ReportRow>) -> Self {
        let labels = rows
            .iter()
            .map(|r| CString::new(r.channel.replace('\0', "")).expect("NUL removed"))
            .collect();
        TfqkdReports { rows, labels }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("NUL removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> TfqkdStatus {
    match e {
        Error::InvalidParameter { .. } | Error::SolitonLoss { .. } => TfqkdStatus::InvalidParameter,
        Error::Domain(_) => TfqkdStatus::Domain,
        Error::Parse { .. } | Error::Csv(_) | Error::Toml(_) => TfqkdStatus::Parse,
        Error::Invariant { .. } => TfqkdStatus::Invariant,
        Error::Io { .. } => TfqkdStatus::Io,
    }
}

enum Fail {
    Core(Error),
    Null(&'static str),
    Index(usize),
    Utf8,
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Core(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> TfqkdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            TfqkdStatus::Ok
        }
        Ok(Err(Fail::Core(e))) => {
            set_error(&e.to_string());
            status_of(&e)
        }
        Ok(Err(Fail::Null(name))) => {
            set_error(&format!("null pointer argument `{name}`"));
            TfqkdStatus::NullPointer
        }
        Ok(Err(Fail::Index(i))) => {
            set_error(&format!("index {i} out of range"));
            TfqkdStatus::IndexOutOfRange
        }
        Ok(Err(Fail::Utf8)) => {
            set_error("string argument is not valid UTF-8");
            TfqkdStatus::InvalidUtf8
        }
        Err(_) => {
            set_error("internal panic");
            TfqkdStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, name: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(name))
}

unsafe fn out<'a, T>(p: *mut T, name: &'static str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or(Fail::Null(name))
}

unsafe fn text<'a>(p: *const c_char, name: &'static str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail::Null(name));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail::Utf8)
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn tfqkd_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Default security parameters (all ε = 1e-10, f = 1.16).
#[no_mangle]
pub extern "C" fn tfqkd_params_default() -> TfqkdParams {
    FiniteKeyParams::default().into()
}

/// Binary Shannon entropy of `x` in [0, 1].
///
/// # Safety
/// `out` must be null or point to writable memory for one double.
#[no_mangle]
pub unsafe extern "C" fn tfqkd_binary_entropy(x: f64, out_value: *mut f64) -> TfqkdStatus {
    guard(|| {
        *out(out_value, "out_value")? = analysis::shannon_entropy(x)?;
        Ok(())
    })
}

/// Per-pulse tail correction for `n_total` windows and `n_vy + n_yv` detections.
///
/// # Safety
/// `params` must be null (defaults) or valid; `out_value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tfqkd_r_tail(
    n_total: f64,
    n_vy_plus_n_yv: f64,
    params: *const TfqkdParams,
    out_value: *mut f64,
) -> TfqkdStatus {
    guard(|| {
        let p = params.as_ref().map_or_else(FiniteKeyParams::default, |p| (*p).into());
        *out(out_value, "out_value")? = analysis::r_tail(n_total, n_vy_plus_n_yv, &p)?;
        Ok(())
    })
}

/// Secure key rate for the given bounds.
///
/// # Safety
/// `bounds` and `out_rate` must be valid; `params` may be null for defaults.
#[no_mangle]
pub unsafe extern "C" fn tfqkd_key_rate(
    bounds: *const TfqkdBounds,
    params: *const TfqkdParams,
    n_total: f64,
    effective_rate: f64,
    parallel_channels: u32,
    out_rate: *mut TfqkdKeyRate,
) -> TfqkdStatus {
    guard(|| {
        let b: FiniteKeyBounds = (*deref(bounds, "bounds")?).into();
        let p = params.as_ref().map_or_else(FiniteKeyParams::default, |p| (*p).into());
        let o = out(out_rate, "out_rate")?;
        let r = analysis::key_rate(&b, &p, n_total, effective_rate, parallel_channels)?;
        *o = TfqkdKeyRate {
            r_per_pulse: r.r_per_pulse,
            r_bps: r.r_bps,
            entropy_phase: r.entropy_phase,
            leak_ec: r.leak_ec,
            r_tail: r.r_tail,
            r_unclamped: r.r_unclamped,
            flags: flag_mask(&r.flags),
        };
        Ok(())
    })
}

/// Closed-form single-photon yield lower bound from per-window rates.
///
/// # Safety
/// `out_value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tfqkd_y1_lower_bound(
    mu_x: f64,
    mu_y: f64,
    s_x: f64,
    s_y: f64,
    s00: f64,
    out_value: *mut f64,
) -> TfqkdStatus {
    guard(|| {
        *out(out_value, "out_value")? = analysis::y1_lower_bound(mu_x, mu_y, s_x, s_y, s00)?;
        Ok(())
    })
}

/// Phase-error upper bound; `Domain` when the denominator is not positive.
///
/// # Safety
/// `out_value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tfqkd_e1ph_upper_bound(
    mu_x: f64,
    t_delta: f64,
    s00: f64,
    y1_lower: f64,
    out_value: *mut f64,
) -> TfqkdStatus {
    guard(|| {
        let v = analysis::e1ph_upper_bound(mu_x, t_delta, s00, y1_lower)
            .ok_or_else(|| Error::Domain("phase-error bound denominator is not positive".into()))?;
        *out(out_value, "out_value")? = v;
        Ok(())
    })
}

/// Bundled default configuration.
///
/// # Safety
/// `out_config` must be writable; the handle is released with `tfqkd_config_free`.
#[no_mangle]
pub unsafe extern "C" fn tfqkd_config_bundled(out_config: *mut *mut TfqkdConfig) -> TfqkdStatus {
    guard(|| {
        let o = out(out_config, "out_config")?;
        *o = Box::into_raw(Box::new(TfqkdConfig {
            inner: ExperimentConfig::bundled(),
        }));
        Ok(())
    })
}

/// Parse a TOML configuration.
///
/// # Safety
/// `toml_text` must be a NUL-terminated string; `out_config` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tfqkd_config_from_toml(
    toml_text: *const c_char,
    out_config: *mut *mut TfqkdConfig,
) -> TfqkdStatus {
    guard(|| {
        let o = out(out_config, "out_config")?;
        *o = ptr::null_mut();
        let cfg = ExperimentConfig::from_toml(text(toml_text, "toml_text")?)?;
        *o = Box::into_raw(Box::new(TfqkdConfig { inner: cfg }));
        Ok(())
    })
}

/// # Safety
/// `config` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tfqkd_config_free(config: *mut TfqkdConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// # Safety
/// `config` must be a valid handle.
#[no_mangle]
pub unsafe extern "C" fn tfqkd_config_set_n_windows(config: *mut TfqkdConfig, n_windows: u64) -> TfqkdStatus {
    guard(|| {
        out(config, "config")?.inner.n_windows = n_windows;
        Ok(())
    })
}

/// # Safety
/// `config` must be a valid handle.
#[no_mangle]
pub unsafe extern "C" fn tfqkd_config_set_seed(config: *mut TfqkdConfig, seed: u64) -> TfqkdStatus {
    guard(|| {
        out(config, "config")?.inner.seed = seed;
        Ok(())
    })
}

/// Number of configured wavelength channels (0 for a null handle).
///
/// # Safety
/// `config` must be null or a valid handle.
#[no_mangle]
pub unsafe extern "C" fn tfqkd_config_channel_count(config: *const TfqkdConfig) -> usize {
    config.as_ref().map_or(0, |c| c.inner.channels.len())
}

/// Optical frequency (Hz) of line `n` of comb A or B (`comb` = 0 or 1).
///
/// # Safety
/// `config` must be a valid handle and `out_hz` writable.
#[no_mangle]
pub unsafe extern "C" fn tfqkd_line_frequency(
    config: *const TfqkdConfig,
    comb: u32,
    n: i32,
    out_hz: *mut f64,
) -> TfqkdStatus {
    guard(|| {
        let c = &deref(config, "config")?.inner;
        let spec = match comb {
            0 => &c.comb_a,
            1 => &c.comb_b,
            _ => return Err(Fail::Index(comb as usize)),
        };
        *out(out_hz, "out_hz")? = line_frequency(spec, n);
        Ok(())
    })
}

/// Simulate every channel; the reports hold one row per channel plus the ensemble.
///
/// # Safety
/// `config` must be valid and `out_reports` writable.
#[no_mangle]
pub unsafe extern "C" fn tfqkd_simulate(config: *const TfqkdConfig, out_reports: *mut *mut TfqkdReports) -> TfqkdStatus {
    guard(|| {
        let o = out(out_reports, "out_reports")?;
        *o = ptr::null_mut();
        let run = run_simulate(&deref(config, "config")?.inner)?;
        *o = Box::into_raw(Box::new(TfqkdReports::new(run.reports())));
        Ok(())
    })
}

/// Key rates for every column of a ledger CSV given as text. `config` may be
/// null to use the bundled source and finite-key settings.
///
/// # Safety
/// `csv_text` must be NUL-terminated; `out_reports` writable.
#[no_mangle]
pub unsafe extern "C" fn tfqkd_keyrate_csv(
    config: *const TfqkdConfig,
    csv_text: *const c_char,
    out_reports: *mut *mut TfqkdReports,
) -> TfqkdStatus {
    guard(|| {
        let o = out(out_reports, "out_reports")?;
        *o = ptr::null_mut();
        let bundled;
        let cfg = match config.as_ref() {
            Some(c) => &c.inner,
            None => {
                bundled = ExperimentConfig::bundled();
                &bundled
            }
        };
        let table = LedgerTable::read_csv(text(csv_text, "csv_text")?.as_bytes())?;
        let rows = run_keyrate(&table, &cfg.sources, &cfg.finite_key, cfg.layout.effective_rate())?;
        *o = Box::into_raw(Box::new(TfqkdReports::new(rows)));
        Ok(())
    })
}

/// # Safety
/// `reports` must be null or a valid handle.
#[no_mangle]
pub unsafe extern "C" fn tfqkd_reports_count(reports: *const TfqkdReports) -> usize {
    reports.as_ref().map_or(0, |r| r.rows.len())
}

/// # Safety
/// `reports` must be valid and `out_report` writable.
#[no_mangle]
pub unsafe extern "C" fn tfqkd_reports_get(
    reports: *const TfqkdReports,
    index: usize,
    out_report: *mut TfqkdReport,
) -> TfqkdStatus {
    guard(|| {
        let r = deref(reports, "reports")?.rows.get(index).ok_or(Fail::Index(index))?;
        let flags = r.flag_list()?;
        *out(out_report, "out_report")? = TfqkdReport {
            channels: r.channels,
            r_per_pulse: r.r_per_pulse,
            r_bps: r.r_bps,
            n1_before: r.n1_before,
            n1_after: r.n1_after,
            e1ph_before: r.e1ph_before,
            e1ph_after: r.e1ph_after,
            n_t: r.n_t,
            e_t: r.e_t,
            leak_ec: r.leak_ec,
            r_tail: r.r_tail,
            z_error: r.z_error,
            x_error: r.x_error,
            flags: flag_mask(&flags),
        };
        Ok(())
    })
}

/// Channel label of row `index`, or null when out of range. Valid while the handle lives.
///
/// # Safety
/// `reports` must be null or a valid handle.
#[no_mangle]
pub unsafe extern "C" fn tfqkd_reports_label(reports: *const TfqkdReports, index: usize) -> *const c_char {
    reports
        .as_ref()
        .and_then(|r| r.labels.get(index))
        .map_or(ptr::null(), |s| s.as_ptr())
}

/// # Safety
/// `reports` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tfqkd_reports_free(reports: *mut TfqkdReports) {
    if !reports.is_null() {
        drop(Box::from_raw(reports));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn last_error() -> String {
        unsafe { CStr::from_ptr(tfqkd_last_error()) }.to_string_lossy().into_owned()
    }

    #[test]
    fn entropy_and_errors() {
        let mut v = 0.0;
        assert_eq!(unsafe { tfqkd_binary_entropy(0.5, &mut v) }, TfqkdStatus::Ok);
        assert_eq!(v, 1.0);
        assert_eq!(last_error(), "");
        assert_eq!(unsafe { tfqkd_binary_entropy(2.0, &mut v) }, TfqkdStatus::Domain);
        assert!(!last_error().is_empty());
        assert_eq!(unsafe { tfqkd_binary_entropy(0.5, ptr::null_mut()) }, TfqkdStatus::NullPointer);
        assert!(last_error().contains("out_value"));
    }

    #[test]
    fn flag_bits_distinct() {
        let all = [
            Flag::Y1Clamped,
            Flag::PhaseErrorDenominator,
            Flag::PhaseErrorClamped,
            Flag::RateClamped,
            Flag::NoWindows,
            Flag::NoZDetections,
        ];
        assert_eq!(flag_mask(&all).count_ones(), 6);
    }
}
