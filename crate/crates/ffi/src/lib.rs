//! C ABI over `ppca_elbo`.
//!
//! Every entry point returns a [`PpcaStatus`] and writes results through out-pointers.
//! On a non-`OK` status, [`ppca_last_error_message`] describes the failure for the
//! calling thread. Matrices cross the boundary as row-major `double` buffers.
//! Objects are opaque handles released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use nalgebra::DMatrix;
use ppca_elbo::discrete::{self, DiscreteModel};
use ppca_elbo::gauss::{kl_zero_mean_gaussian, renyi_zero_mean_gaussian};
use ppca_elbo::ppca::{self, LoadingMatrix};
use ppca_elbo::selection::{select_model, SelectionReport};
use ppca_elbo::variational::{OptimizerSettings, TemperConfig};
use ppca_elbo::{Alpha, Dataset, Error, ModelPrior, PpcaParams, PriorSpec, SpdMatrix};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PpcaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    NotPositiveDefinite = 4,
    NotSymmetric = 5,
    NumericalFailure = 6,
    Parse = 7,
    Io = 8,
    Panic = 9,
}

impl From<&Error> for PpcaStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::DimensionMismatch { .. } => PpcaStatus::DimensionMismatch,
            Error::NotPositiveDefinite => PpcaStatus::NotPositiveDefinite,
            Error::NotSymmetric { .. } => PpcaStatus::NotSymmetric,
            Error::InvalidParameter(_) => PpcaStatus::InvalidArgument,
            Error::NonFiniteElbo { .. } | Error::AllFitsFailed(_) => PpcaStatus::NumericalFailure,
            Error::Parse(_) | Error::Csv(_) => PpcaStatus::Parse,
            Error::Io(_) => PpcaStatus::Io,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let msg = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

/// Failure inside a wrapper, carrying its status code.
struct Fail(PpcaStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(PpcaStatus::from(&e), e.to_string())
    }
}

type FfiResult<T> = std::result::Result<T, Fail>;

fn guard(f: impl FnOnce() -> FfiResult<()>) -> PpcaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            PpcaStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(&format!("panic: {msg}"));
            PpcaStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(PpcaStatus::NullPointer, format!("{what} is null"))
}

fn bad(msg: impl Into<String>) -> Fail {
    Fail(PpcaStatus::InvalidArgument, msg.into())
}

/// # Safety
/// `p` must be null or point to `len` readable `f64`s.
unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> FfiResult<&'a [f64]> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// # Safety
/// `p` must be null or point to `rows * cols` readable `f64`s.
unsafe fn matrix(p: *const f64, rows: usize, cols: usize, what: &str) -> FfiResult<DMatrix<f64>> {
    let len = rows.checked_mul(cols).ok_or_else(|| bad(format!("{what}: size overflow")))?;
    Ok(DMatrix::from_row_slice(rows, cols, slice(p, len, what)?))
}

/// # Safety
/// `out` must be null or valid for a write of `T`.
unsafe fn put<T>(out: *mut T, value: T) -> FfiResult<()> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    out.write(value);
    Ok(())
}

fn alpha(a: f64) -> FfiResult<Alpha> {
    Ok(Alpha::new(a)?)
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next library call on the same thread.
#[no_mangle]
pub extern "C" fn ppca_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ppca_version() -> *const c_char {
    static VERSION: &CStr = match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
        Ok(v) => v,
        Err(_) => panic!("version string contains NUL"),
    };
    VERSION.as_ptr()
}

/// Opaque `n × d` dataset.
pub struct PpcaDataset(Dataset);

/// Copies `n × d` row-major observations into a new dataset.
///
/// # Safety
/// `rows` must point to `n * d` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ppca_dataset_from_rows(
    rows: *const f64,
    n: usize,
    d: usize,
    out: *mut *mut PpcaDataset,
) -> PpcaStatus {
    guard(|| {
        let ds = Dataset::new(matrix(rows, n, d, "rows")?)?;
        put(out, Box::into_raw(Box::new(PpcaDataset(ds))))
    })
}

/// Samples `n` observations from PPCA with `d × k` row-major loadings `w`.
///
/// # Safety
/// `w` must point to `d * k` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ppca_dataset_generate(
    w: *const f64,
    d: usize,
    k: usize,
    noise_var: f64,
    n: usize,
    seed: u64,
    out: *mut *mut PpcaDataset,
) -> PpcaStatus {
    guard(|| {
        let params = PpcaParams::new(LoadingMatrix::new(matrix(w, d, k, "w")?)?, noise_var)?;
        let ds = ppca::sample_dataset(&params, n, seed)?;
        put(out, Box::into_raw(Box::new(PpcaDataset(ds))))
    })
}

/// # Safety
/// `ds` must be a live handle or null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn ppca_dataset_n(ds: *const PpcaDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.0.n())
}

/// # Safety
/// `ds` must be a live handle or null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn ppca_dataset_d(ds: *const PpcaDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.0.d())
}

/// # Safety
/// `ds` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ppca_dataset_free(ds: *mut PpcaDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Gaussian log-likelihood of the dataset under PPCA with loadings `w` (`d × k`, row-major).
///
/// # Safety
/// `ds` must be live; `w` must point to `d * k` doubles with `d` equal to the dataset's.
#[no_mangle]
pub unsafe extern "C" fn ppca_log_likelihood(
    ds: *const PpcaDataset,
    w: *const f64,
    k: usize,
    noise_var: f64,
    out: *mut f64,
) -> PpcaStatus {
    guard(|| {
        let ds = ds.as_ref().ok_or_else(|| null("dataset"))?;
        let params = PpcaParams::new(LoadingMatrix::new(matrix(w, ds.0.d(), k, "w")?)?, noise_var)?;
        put(out, ppca::log_likelihood(&ds.0, &params)?)
    })
}

/// `KL(N(0, sigma0) ‖ N(0, sigma))` for `d × d` row-major SPD matrices.
///
/// # Safety
/// Both matrices must point to `d * d` doubles.
#[no_mangle]
pub unsafe extern "C" fn ppca_kl_gaussian(sigma0: *const f64, sigma: *const f64, d: usize, out: *mut f64) -> PpcaStatus {
    guard(|| {
        let a = SpdMatrix::new(matrix(sigma0, d, d, "sigma0")?)?;
        let b = SpdMatrix::new(matrix(sigma, d, d, "sigma")?)?;
        put(out, kl_zero_mean_gaussian(&a, &b)?)
    })
}

/// Rényi divergence of order `alpha` in (0, 1) between `N(0, sigma_p)` and `N(0, sigma_r)`.
///
/// # Safety
/// Both matrices must point to `d * d` doubles.
#[no_mangle]
pub unsafe extern "C" fn ppca_renyi_gaussian(
    alpha_: f64,
    sigma_p: *const f64,
    sigma_r: *const f64,
    d: usize,
    out: *mut f64,
) -> PpcaStatus {
    guard(|| {
        let a = alpha(alpha_)?;
        let p = SpdMatrix::new(matrix(sigma_p, d, d, "sigma_p")?)?;
        let r = SpdMatrix::new(matrix(sigma_r, d, d, "sigma_r")?)?;
        put(out, renyi_zero_mean_gaussian(a, &p, &r)?)
    })
}

/// # Safety
/// `prior_mass` and `loglik` must point to `len` doubles.
unsafe fn discrete_model(prior_mass: *const f64, loglik: *const f64, len: usize) -> FfiResult<DiscreteModel> {
    let mass = slice(prior_mass, len, "prior_mass")?.to_vec();
    let ll = slice(loglik, len, "loglik")?.to_vec();
    Ok(DiscreteModel::unlabeled(mass, ll)?)
}

/// Tempered posterior `∝ prior · exp(alpha · loglik)` on a finite grid, written to `out_mass`.
///
/// # Safety
/// All three buffers must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ppca_tempered_posterior(
    prior_mass: *const f64,
    loglik: *const f64,
    len: usize,
    alpha_: f64,
    out_mass: *mut f64,
) -> PpcaStatus {
    guard(|| {
        let model = discrete_model(prior_mass, loglik, len)?;
        let post = discrete::tempered_posterior(&model, alpha(alpha_)?);
        if out_mass.is_null() {
            return Err(null("out_mass"));
        }
        ptr::copy_nonoverlapping(post.as_ptr(), out_mass, len);
        Ok(())
    })
}

/// `log Σ prior · exp(alpha · loglik)`.
///
/// # Safety
/// `prior_mass` and `loglik` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ppca_log_tempered_evidence(
    prior_mass: *const f64,
    loglik: *const f64,
    len: usize,
    alpha_: f64,
    out: *mut f64,
) -> PpcaStatus {
    guard(|| {
        let model = discrete_model(prior_mass, loglik, len)?;
        put(out, discrete::log_tempered_evidence(&model, alpha(alpha_)?))
    })
}

/// Settings for [`ppca_select`]; start from [`ppca_select_config_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct PpcaSelectConfig {
    pub k_max: usize,
    pub prior_var: f64,
    pub noise_var: f64,
    pub alpha: f64,
    pub seed: u64,
    pub mc_samples: usize,
    pub step_size: f64,
    pub iterations: usize,
    pub restarts: usize,
}

#[no_mangle]
pub extern "C" fn ppca_select_config_default() -> PpcaSelectConfig {
    let opt = OptimizerSettings::default();
    PpcaSelectConfig {
        k_max: 1,
        prior_var: 1.0,
        noise_var: 1.0,
        alpha: 0.5,
        seed: 0,
        mc_samples: 8,
        step_size: opt.step_size,
        iterations: opt.iterations,
        restarts: opt.restarts,
    }
}

/// One scored candidate rank.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PpcaRankEntry {
    pub k: usize,
    pub elbo: f64,
    pub elbo_se: f64,
    pub penalty: f64,
    pub score: f64,
}

/// Opaque outcome of rank selection.
pub struct PpcaSelectionReport(SelectionReport);

/// Penalized-ELBO selection over ranks `1..=k_max` with a uniform model prior.
///
/// # Safety
/// `ds` must be live; `cfg` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn ppca_select(
    ds: *const PpcaDataset,
    cfg: *const PpcaSelectConfig,
    out: *mut *mut PpcaSelectionReport,
) -> PpcaStatus {
    guard(|| {
        let ds = ds.as_ref().ok_or_else(|| null("dataset"))?;
        let c = *cfg.as_ref().ok_or_else(|| null("config"))?;
        let temper = TemperConfig {
            alpha: alpha(c.alpha)?,
            mc_samples: c.mc_samples,
            seed: c.seed,
            optimizer: OptimizerSettings {
                step_size: c.step_size,
                iterations: c.iterations,
                restarts: c.restarts,
                ..OptimizerSettings::default()
            },
        };
        let report = select_model(
            &ds.0,
            c.k_max,
            &PriorSpec::new(c.prior_var, c.noise_var)?,
            &ModelPrior::uniform(c.k_max)?,
            &temper,
        )?;
        put(out, Box::into_raw(Box::new(PpcaSelectionReport(report))))
    })
}

/// # Safety
/// `r` must be a live handle or null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn ppca_report_selected_k(r: *const PpcaSelectionReport) -> usize {
    r.as_ref().map_or(0, |r| r.0.selected_k)
}

/// Number of successfully scored ranks.
///
/// # Safety
/// `r` must be a live handle or null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn ppca_report_len(r: *const PpcaSelectionReport) -> usize {
    r.as_ref().map_or(0, |r| r.0.per_k.len())
}

/// # Safety
/// `r` must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ppca_report_entry(
    r: *const PpcaSelectionReport,
    index: usize,
    out: *mut PpcaRankEntry,
) -> PpcaStatus {
    guard(|| {
        let r = r.as_ref().ok_or_else(|| null("report"))?;
        let rec = r.0.per_k.get(index).ok_or_else(|| bad(format!("index {index} out of range")))?;
        put(
            out,
            PpcaRankEntry { k: rec.k, elbo: rec.elbo.value, elbo_se: rec.elbo.std_err, penalty: rec.penalty, score: rec.score },
        )
    })
}

/// # Safety
/// `r` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ppca_report_free(r: *mut PpcaSelectionReport) {
    if !r.is_null() {
        drop(Box::from_raw(r));
    }
}
