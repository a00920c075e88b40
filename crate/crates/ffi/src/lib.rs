//! C ABI over the `steering` library.
//!
//! Every fallible entry point returns a [`SteeringStatus`]; on failure the
//! message is available from [`steering_last_error_message`] on the same
//! thread until the next failing call. Objects are handed out as opaque
//! pointers and must be released with the matching `*_free` function.
//! Panics never cross the boundary: they are caught and reported as
//! `STEERING_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use libc::size_t;
use steering::bounds::StrategyTable;
use steering::conservative::{worst_case_no_message, worst_case_one_bit};
use steering::experiment::ftl_speed;
use steering::{Error, MeasurementSet};

/// Result codes; zero is success.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SteeringStatus {
    Ok = 0,
    InvalidArgument = 1,
    DegenerateGeometry = 2,
    IllPosedFit = 3,
    IllConditioned = 4,
    InsufficientData = 5,
    Parse = 6,
    Io = 7,
    NullPointer = 8,
    Panic = 9,
}

impl From<&Error> for SteeringStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::InvalidArgument(_) => SteeringStatus::InvalidArgument,
            Error::DegenerateGeometry(_) => SteeringStatus::DegenerateGeometry,
            Error::IllPosedFit(_) => SteeringStatus::IllPosedFit,
            Error::IllConditioned { .. } => SteeringStatus::IllConditioned,
            Error::InsufficientData(_) => SteeringStatus::InsufficientData,
            Error::Parse(_) | Error::Csv(_) => SteeringStatus::Parse,
            Error::Io(_) => SteeringStatus::Io,
        }
    }
}

/// Opaque set of Bob's measurement axes with angular uncertainties.
pub struct SteeringMeasurementSet {
    inner: MeasurementSet,
}

/// Opaque precomputed strategy table for one measurement set and alphabet
/// size; cheap to query at many gain parameters.
pub struct SteeringStrategyTable {
    inner: StrategyTable,
}

/// Optimal gain parameter at a given efficiency.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SteeringGainOptimum {
    pub eta: f64,
    pub r: f64,
    pub h: f64,
    /// Smallest state purity that can still violate the bound.
    pub mu_min: f64,
    pub violable: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("NULs removed");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

struct Failure(SteeringStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(SteeringStatus::from(&e), e.to_string())
    }
}

fn null_pointer(what: &str) -> Failure {
    Failure(SteeringStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, converting errors and panics to status codes.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SteeringStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SteeringStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            SteeringStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null_pointer(what))
}

unsafe fn write_out<T>(p: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if p.is_null() {
        return Err(null_pointer(what));
    }
    p.write(value);
    Ok(())
}

fn boxed_set(set: MeasurementSet) -> *mut SteeringMeasurementSet {
    Box::into_raw(Box::new(SteeringMeasurementSet { inner: set }))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn steering_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr().cast()
}

/// Message for the most recent failure on this thread, or NULL if none.
///
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn steering_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Static name of a status code, e.g. `"invalid-argument"`.
#[no_mangle]
pub extern "C" fn steering_status_name(status: SteeringStatus) -> *const c_char {
    let s: &'static str = match status {
        SteeringStatus::Ok => "ok\0",
        SteeringStatus::InvalidArgument => "invalid-argument\0",
        SteeringStatus::DegenerateGeometry => "degenerate-geometry\0",
        SteeringStatus::IllPosedFit => "ill-posed-fit\0",
        SteeringStatus::IllConditioned => "ill-conditioned\0",
        SteeringStatus::InsufficientData => "insufficient-data\0",
        SteeringStatus::Parse => "parse\0",
        SteeringStatus::Io => "io\0",
        SteeringStatus::NullPointer => "null-pointer\0",
        SteeringStatus::Panic => "panic\0",
    };
    s.as_ptr().cast()
}

/// Builds a measurement set from `n` row-major `(x, y, z)` triples.
///
/// Rows are normalized. `sigmas` may be NULL for zero uncertainty, otherwise
/// it must hold `n` angular uncertainties in radians.
///
/// # Safety
/// `axes` must point to `3 * n` doubles, `sigmas` to `n` doubles or be NULL,
/// and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn steering_measurement_set_new(
    axes: *const f64,
    n: size_t,
    sigmas: *const f64,
    out: *mut *mut SteeringMeasurementSet,
) -> SteeringStatus {
    guard(|| {
        if axes.is_null() {
            return Err(null_pointer("axes"));
        }
        if out.is_null() {
            return Err(null_pointer("out"));
        }
        let flat = slice::from_raw_parts(axes, 3 * n);
        let raw: Vec<[f64; 3]> = flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        let sig = if sigmas.is_null() { vec![0.0; n] } else { slice::from_raw_parts(sigmas, n).to_vec() };
        let set = MeasurementSet::from_raw(&raw, sig)?;
        write_out(out, boxed_set(set), "out")
    })
}

/// Builds a named preset (`octahedral`, `measured`, `worst-no-message`, `worst-one-bit`).
///
/// # Safety
/// `name` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn steering_measurement_set_preset(
    name: *const c_char,
    out: *mut *mut SteeringMeasurementSet,
) -> SteeringStatus {
    guard(|| {
        if name.is_null() {
            return Err(null_pointer("name"));
        }
        let name = CStr::from_ptr(name)
            .to_str()
            .map_err(|_| Failure(SteeringStatus::InvalidArgument, "preset name is not UTF-8".into()))?;
        let set = MeasurementSet::preset(name)?;
        write_out(out, boxed_set(set), "out")
    })
}

/// Releases a set. NULL is ignored.
///
/// # Safety
/// `set` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn steering_measurement_set_free(set: *mut SteeringMeasurementSet) {
    if !set.is_null() {
        drop(Box::from_raw(set));
    }
}

/// Number of settings, or 0 for NULL.
///
/// # Safety
/// `set` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn steering_measurement_set_len(set: *const SteeringMeasurementSet) -> size_t {
    set.as_ref().map_or(0, |s| s.inner.len())
}

/// Copies the unit axes into `out` as `3 * len` row-major doubles.
///
/// # Safety
/// `out` must have room for `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn steering_measurement_set_axes(
    set: *const SteeringMeasurementSet,
    out: *mut f64,
    capacity: size_t,
) -> SteeringStatus {
    guard(|| {
        let set = deref(set, "set")?;
        if out.is_null() {
            return Err(null_pointer("out"));
        }
        let need = 3 * set.inner.len();
        if capacity < need {
            return Err(Failure(
                SteeringStatus::InvalidArgument,
                format!("output holds {capacity} doubles, need {need}"),
            ));
        }
        let dst = slice::from_raw_parts_mut(out, need);
        for (chunk, a) in dst.chunks_exact_mut(3).zip(set.inner.axes()) {
            chunk.copy_from_slice(&a.to_array());
        }
        Ok(())
    })
}

/// Precomputes every cheating strategy for alphabet size `d`.
///
/// # Safety
/// `set` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn steering_strategy_table_build(
    set: *const SteeringMeasurementSet,
    d: size_t,
    out: *mut *mut SteeringStrategyTable,
) -> SteeringStatus {
    guard(|| {
        let set = deref(set, "set")?;
        let table = StrategyTable::build(&set.inner, d)?;
        write_out(out, Box::into_raw(Box::new(SteeringStrategyTable { inner: table })), "out")
    })
}

/// Releases a table. NULL is ignored.
///
/// # Safety
/// `table` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn steering_strategy_table_free(table: *mut SteeringStrategyTable) {
    if !table.is_null() {
        drop(Box::from_raw(table));
    }
}

/// Bound `h(r)` and the index of a maximizing strategy.
///
/// `out_strategy` may be NULL.
///
/// # Safety
/// `table` must be a live handle; `out_h` writable.
#[no_mangle]
pub unsafe extern "C" fn steering_strategy_table_bound(
    table: *const SteeringStrategyTable,
    r: f64,
    out_h: *mut f64,
    out_strategy: *mut u64,
) -> SteeringStatus {
    guard(|| {
        let t = &deref(table, "table")?.inner;
        if !(0.0..=1.0).contains(&r) {
            return Err(Failure(SteeringStatus::InvalidArgument, format!("r must lie in [0, 1], got {r}")));
        }
        let line = t.argmax(r);
        let h = line.value_at(r, t.n());
        if !out_strategy.is_null() {
            out_strategy.write(line.strategy_index);
        }
        write_out(out_h, h, "out_h")
    })
}

/// Optimal gain parameter at efficiency `eta`.
///
/// # Safety
/// `table` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn steering_strategy_table_optimal_gain(
    table: *const SteeringStrategyTable,
    eta: f64,
    out: *mut SteeringGainOptimum,
) -> SteeringStatus {
    guard(|| {
        let g = deref(table, "table")?.inner.optimal_gain(eta)?;
        write_out(out, gain(&g), "out")
    })
}

fn gain(g: &steering::bounds::GainOptimum) -> SteeringGainOptimum {
    SteeringGainOptimum { eta: g.eta, r: g.r, h: g.h, mu_min: g.mu_min, violable: g.violable() }
}

/// One-shot `h(r)` for alphabet size `d`; `out_strategy` may be NULL.
///
/// # Safety
/// `set` must be a live handle; `out_h` writable.
#[no_mangle]
pub unsafe extern "C" fn steering_bound(
    set: *const SteeringMeasurementSet,
    d: size_t,
    r: f64,
    out_h: *mut f64,
    out_strategy: *mut u64,
) -> SteeringStatus {
    guard(|| {
        let res = steering::bounds::steering_bound(&deref(set, "set")?.inner, d, r)?;
        if !out_strategy.is_null() {
            out_strategy.write(res.strategy.index());
        }
        write_out(out_h, res.h, "out_h")
    })
}

/// One-shot optimal gain for alphabet size `d` at efficiency `eta`.
///
/// # Safety
/// `set` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn steering_optimal_gain(
    set: *const SteeringMeasurementSet,
    d: size_t,
    eta: f64,
    out: *mut SteeringGainOptimum,
) -> SteeringStatus {
    guard(|| {
        let g = steering::bounds::optimal_gain(&deref(set, "set")?.inner, d, eta)?;
        write_out(out, gain(&g), "out")
    })
}

/// Largest quantum violation `1 − h(0)` for alphabet size `d`.
///
/// # Safety
/// `set` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn steering_tsirelson(
    set: *const SteeringMeasurementSet,
    d: size_t,
    out: *mut f64,
) -> SteeringStatus {
    guard(|| {
        let v = steering::bounds::tsirelson(&deref(set, "set")?.inner, d)?;
        write_out(out, v, "out")
    })
}

/// Worst-case rotation of `set` within `k_sigma` standard deviations.
///
/// `d = 1` uses the no-message construction, `d = 2` the one-bit one.
///
/// # Safety
/// `set` must be a live handle; `out` writable. The new set must be freed.
#[no_mangle]
pub unsafe extern "C" fn steering_worst_case(
    set: *const SteeringMeasurementSet,
    d: size_t,
    k_sigma: f64,
    out: *mut *mut SteeringMeasurementSet,
) -> SteeringStatus {
    guard(|| {
        let set = &deref(set, "set")?.inner;
        let res = match d {
            1 => worst_case_no_message(set, k_sigma)?,
            2 => worst_case_one_bit(set, k_sigma)?,
            _ => {
                return Err(Failure(
                    SteeringStatus::InvalidArgument,
                    format!("worst-case rotation is defined for d = 1 or 2, got {d}"),
                ))
            }
        };
        write_out(out, boxed_set(res.rotated), "out")
    })
}

/// Minimum influence speed implied by a spacelike separation, in m/s and in
/// units of `c`. Either output may be NULL.
///
/// # Safety
/// Non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn steering_ftl_speed(
    distance_m: f64,
    time_s: f64,
    out_speed: *mut f64,
    out_over_c: *mut f64,
) -> SteeringStatus {
    guard(|| {
        let b = ftl_speed(distance_m, time_s)?;
        if !out_speed.is_null() {
            out_speed.write(b.speed_m_per_s);
        }
        if !out_over_c.is_null() {
            out_over_c.write(b.speed_over_c);
        }
        Ok(())
    })
}

