//! C ABI over `lasr`.
//!
//! Every function returns a [`LasrStatus`]. On failure the message is kept
//! per thread and read back with [`lasr_last_error`]. Handles are opaque and
//! must be released with their matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::ptr;

use lasr::pipeline::{apply_key_values, run_lasr, InputSource, KeyValues, RunConfig};
use lasr::segmentation::{optimal_threshold, MixtureModel};
use lasr::ssm::{bh_adjust, FdrConfig, FdrMode};
use lasr::{LasrError, Movie};

/// Result code of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LasrStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidInput = 2,
    Config = 3,
    Parse = 4,
    Io = 5,
    Degenerate = 6,
    Numeric = 7,
    /// A Rust panic was caught at the boundary.
    Internal = 8,
}

/// A loaded movie.
pub struct LasrMovie(Movie);

/// Settings for one full pipeline run.
pub struct LasrRunConfig(RunConfig);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &LasrError) -> LasrStatus {
    match e {
        LasrError::Parse { .. } => LasrStatus::Parse,
        LasrError::Io { .. } => LasrStatus::Io,
        LasrError::InvalidInput(_) => LasrStatus::InvalidInput,
        LasrError::Degenerate(_) => LasrStatus::Degenerate,
        LasrError::Numeric(_) => LasrStatus::Numeric,
        LasrError::Config(_) => LasrStatus::Config,
        LasrError::Stage { source, .. } => status_of(source),
    }
}

struct Fail(LasrStatus, String);

impl From<LasrError> for Fail {
    fn from(e: LasrError) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(LasrStatus::NullArgument, format!("`{what}` is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> LasrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            LasrStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            LasrStatus::Internal
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(LasrStatus::InvalidInput, format!("`{what}` is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn slice_arg<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Message for the last failed call on this thread, or null after a
/// success. Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn lasr_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn lasr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Load a LASR-text movie file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lasr_movie_load(path: *const c_char, out: *mut *mut LasrMovie) -> LasrStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let movie = lasr::frames::load_movie(path_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(LasrMovie(movie)));
        Ok(())
    })
}

/// Release a movie. Null is accepted.
///
/// # Safety
/// `movie` must come from [`lasr_movie_load`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn lasr_movie_free(movie: *mut LasrMovie) {
    if !movie.is_null() {
        drop(Box::from_raw(movie));
    }
}

/// Frame count, rows and columns.
///
/// # Safety
/// `movie` must be a live handle; the out pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn lasr_movie_shape(
    movie: *const LasrMovie,
    n_frames: *mut usize,
    rows: *mut usize,
    cols: *mut usize,
) -> LasrStatus {
    guard(|| {
        let m = &movie.as_ref().ok_or_else(|| null("movie"))?.0;
        let (r, c) = m.dims();
        *out_arg(n_frames, "n_frames")? = m.len();
        *out_arg(rows, "rows")? = r;
        *out_arg(cols, "cols")? = c;
        Ok(())
    })
}

/// Copy frame `k` row-major into `values`, which holds `len` doubles.
///
/// # Safety
/// `movie` must be a live handle and `values` writable for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn lasr_movie_frame(
    movie: *const LasrMovie,
    k: usize,
    values: *mut f64,
    len: usize,
) -> LasrStatus {
    guard(|| {
        let m = &movie.as_ref().ok_or_else(|| null("movie"))?.0;
        if k >= m.len() {
            return Err(Fail(LasrStatus::InvalidInput, format!("frame {k} out of range for {} frames", m.len())));
        }
        let src = m.frame(k).values();
        if len != src.len() {
            return Err(Fail(LasrStatus::InvalidInput, format!("buffer holds {len} values, frame has {}", src.len())));
        }
        if values.is_null() {
            return Err(null("values"));
        }
        std::slice::from_raw_parts_mut(values, len).copy_from_slice(src);
        Ok(())
    })
}

/// Benjamini-Hochberg (`by = 0`) or Benjamini-Yekutieli (`by != 0`) step-up
/// at level `q`. Writes 1/0 per p-value into `rejected` and the count into
/// `n_rejected`.
///
/// # Safety
/// `pvalues` readable and `rejected` writable for `n` elements.
#[no_mangle]
pub unsafe extern "C" fn lasr_fdr_step_up(
    pvalues: *const f64,
    n: usize,
    q: f64,
    by: i32,
    rejected: *mut u8,
    n_rejected: *mut usize,
) -> LasrStatus {
    guard(|| {
        let p = slice_arg(pvalues, n, "pvalues")?;
        let mode = if by == 0 { FdrMode::Bh } else { FdrMode::By };
        let res = bh_adjust(p, &FdrConfig { q, mode, ..FdrConfig::default() })?;
        let count = out_arg(n_rejected, "n_rejected")?;
        if n > 0 {
            if rejected.is_null() {
                return Err(null("rejected"));
            }
            let out = std::slice::from_raw_parts_mut(rejected, n);
            for (o, r) in out.iter_mut().zip(&res.rejected) {
                *o = u8::from(*r);
            }
        }
        *count = res.n_rejected;
        Ok(())
    })
}

/// Minimum-misclassification threshold between the first component and the
/// rest of an `m`-component normal mixture.
///
/// # Safety
/// The three arrays readable for `m` elements; `threshold` writable.
#[no_mangle]
pub unsafe extern "C" fn lasr_optimal_threshold(
    weights: *const f64,
    means: *const f64,
    sds: *const f64,
    m: usize,
    threshold: *mut f64,
) -> LasrStatus {
    guard(|| {
        let model = MixtureModel::new(
            slice_arg(weights, m, "weights")?.to_vec(),
            slice_arg(means, m, "means")?.to_vec(),
            slice_arg(sds, m, "sds")?.to_vec(),
        )?;
        let t = optimal_threshold(&model)?;
        *out_arg(threshold, "threshold")? = t.threshold;
        Ok(())
    })
}

/// Default run settings: the built-in phantom as input.
#[no_mangle]
pub extern "C" fn lasr_run_config_new() -> *mut LasrRunConfig {
    Box::into_raw(Box::new(LasrRunConfig(RunConfig::default())))
}

/// Release run settings. Null is accepted.
///
/// # Safety
/// `cfg` must come from [`lasr_run_config_new`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn lasr_run_config_free(cfg: *mut LasrRunConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

unsafe fn config<'a>(cfg: *mut LasrRunConfig) -> Result<&'a mut RunConfig, Fail> {
    Ok(&mut cfg.as_mut().ok_or_else(|| null("cfg"))?.0)
}

/// Apply a key = value config file on top of the current settings.
///
/// # Safety
/// `cfg` live; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn lasr_run_config_load(cfg: *mut LasrRunConfig, path: *const c_char) -> LasrStatus {
    guard(|| {
        let cfg = config(cfg)?;
        let path = path_arg(path, "path")?;
        let kv = KeyValues::load(&path)?;
        apply_key_values(cfg, &kv, path.parent().unwrap_or(Path::new(".")))?;
        Ok(())
    })
}

/// Use two session directories as input.
///
/// # Safety
/// `cfg` live; both paths NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn lasr_run_config_set_sessions(
    cfg: *mut LasrRunConfig,
    before: *const c_char,
    after: *const c_char,
) -> LasrStatus {
    guard(|| {
        let cfg = config(cfg)?;
        cfg.input = InputSource::Sessions {
            before: path_arg(before, "before")?,
            after: path_arg(after, "after")?,
        };
        Ok(())
    })
}

/// Seed for the phantom and every randomized step.
///
/// # Safety
/// `cfg` live.
#[no_mangle]
pub unsafe extern "C" fn lasr_run_config_set_seed(cfg: *mut LasrRunConfig, seed: u64) -> LasrStatus {
    guard(|| {
        config(cfg)?.set_seed(seed);
        Ok(())
    })
}

/// Output directory.
///
/// # Safety
/// `cfg` live; `dir` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn lasr_run_config_set_out_dir(cfg: *mut LasrRunConfig, dir: *const c_char) -> LasrStatus {
    guard(|| {
        config(cfg)?.out_dir = path_arg(dir, "dir")?;
        Ok(())
    })
}

/// Run the full analysis and write its outputs. `total_rejected` receives
/// the number of significant pixels over all frame pairs.
///
/// # Safety
/// `cfg` live; `total_rejected` writable.
#[no_mangle]
pub unsafe extern "C" fn lasr_run(cfg: *const LasrRunConfig, total_rejected: *mut usize) -> LasrStatus {
    guard(|| {
        let cfg = &cfg.as_ref().ok_or_else(|| null("cfg"))?.0;
        let out = out_arg(total_rejected, "total_rejected")?;
        *out = run_lasr(cfg)?.total_rejected;
        Ok(())
    })
}
