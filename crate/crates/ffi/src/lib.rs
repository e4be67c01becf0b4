//! C ABI for `scenediff`.
//!
//! Every fallible function returns an [`ScdStatus`]; on failure a message is
//! available from [`scd_last_error`] on the same thread until the next call.
//! Models are opaque heap handles created by `scd_model_*` constructors and
//! released with [`scd_model_free`]. Images cross the boundary as row-major
//! interleaved RGB `float` buffers in `[0, 1]` (`height * width * 3` values);
//! masks as `uint8_t` buffers of 0/1 (`height * width` values).

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use scenediff::evalkit::{self, Connectivity, EvalConfig, MatchMode};
use scenediff::net::{self, BackboneSpec, ChangeModel, WeightTying};
use scenediff::objective::{self, LossConfig, LossMode, PolySchedule};
use scenediff::{ChangeMask, Error, Image, ImagePair, ProbabilityMask};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    Io = 4,
    Format = 5,
    Numeric = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScdLossMode {
    Bce = 0,
    Dice = 1,
    BcePlusDice = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScdMatchMode {
    IouThreshold = 0,
    AnyOverlap = 1,
}

/// Region post-processing and matching options.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct ScdEvalOptions {
    /// 4 or 8.
    pub connectivity: u32,
    pub min_area: usize,
    /// An `ScdMatchMode` value.
    pub match_mode: u32,
    pub iou_tau: f64,
}

/// Object-level match counts.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ScdCounts {
    pub true_pos: usize,
    pub false_pos: usize,
    pub false_neg: usize,
}

/// Opaque model handle.
pub struct ScdModel {
    inner: ChangeModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(CString::new(msg).expect("no interior nul")));
}

fn status_of(err: &Error) -> ScdStatus {
    match err {
        Error::Config(_) | Error::Value(_) | Error::Placement(_) => ScdStatus::InvalidArgument,
        Error::Shape(_) => ScdStatus::ShapeMismatch,
        Error::Io { .. } | Error::Missing(_) => ScdStatus::Io,
        Error::Format { .. } | Error::Version { .. } => ScdStatus::Format,
        Error::NonFinite { .. } => ScdStatus::Numeric,
    }
}

struct Fail(ScdStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(ScdStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> ScdStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ScdStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
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
            ScdStatus::Panic
        }
    }
}

/// # Safety
/// `ptr` must be null or valid for `len` reads.
unsafe fn slice<'a, T>(ptr: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

/// # Safety
/// `ptr` must be null or valid for `len` writes.
unsafe fn slice_mut<'a, T>(ptr: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, len))
}

/// # Safety
/// `ptr` must be null or a nul-terminated string.
unsafe fn path_arg<'a>(ptr: *const c_char) -> Result<&'a Path, Fail> {
    if ptr.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| Fail(ScdStatus::InvalidArgument, "path is not valid UTF-8".into()))?;
    Ok(Path::new(s))
}

/// # Safety
/// `out` must be null or writable.
unsafe fn put<T>(out: *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    out.write(value);
    Ok(())
}

fn area(height: usize, width: usize) -> Result<usize, Fail> {
    height
        .checked_mul(width)
        .and_then(|n| n.checked_mul(3).map(|_| n))
        .ok_or_else(|| Fail(ScdStatus::InvalidArgument, "image size overflows".into()))
}

fn boxed(model: ChangeModel) -> *mut ScdModel {
    Box::into_raw(Box::new(ScdModel { inner: model }))
}

/// Message of the last failed call on this thread, or null. Owned by the
/// library; valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn scd_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn scd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates a freshly initialized model with the built-in 8-layer backbone
/// tapped after `tap_layer` (1..=8).
///
/// # Safety
/// `out` must be a valid pointer to a `ScdModel *`.
#[no_mangle]
pub unsafe extern "C" fn scd_model_new_tiny(tap_layer: u32, tied: bool, seed: u64, out: *mut *mut ScdModel) -> ScdStatus {
    guard(|| {
        let spec = BackboneSpec::tiny().with_tap(tap_layer as usize)?;
        let tying = if tied { WeightTying::Tied } else { WeightTying::Untied };
        let model = ChangeModel::new(spec, tying, seed)?;
        put(out, boxed(model))
    })
}

/// Loads a checkpoint file.
///
/// # Safety
/// `path` must be a nul-terminated string; `out` a valid pointer to a `ScdModel *`.
#[no_mangle]
pub unsafe extern "C" fn scd_model_load(path: *const c_char, out: *mut *mut ScdModel) -> ScdStatus {
    guard(|| {
        let model = net::load_checkpoint(path_arg(path)?)?;
        put(out, boxed(model))
    })
}

/// Writes a checkpoint file.
///
/// # Safety
/// `model` must come from a `scd_model_*` constructor; `path` must be a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn scd_model_save(model: *const ScdModel, path: *const c_char) -> ScdStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        net::save_checkpoint(&model.inner, path_arg(path)?)?;
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must be null or come from a `scd_model_*` constructor and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn scd_model_free(model: *mut ScdModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Sets how many encoder layers before the tap are trainable.
///
/// # Safety
/// `model` must come from a `scd_model_*` constructor.
#[no_mangle]
pub unsafe extern "C" fn scd_model_set_trainable_tail(model: *mut ScdModel, k: u32) -> ScdStatus {
    guard(|| {
        let model = model.as_mut().ok_or_else(|| null("model"))?;
        model.inner = model.inner.clone().set_trainable_tail(k as usize)?;
        Ok(())
    })
}

/// Input side lengths must be multiples of this value.
///
/// # Safety
/// `model` must come from a `scd_model_*` constructor.
#[no_mangle]
pub unsafe extern "C" fn scd_model_tap_stride(model: *const ScdModel, out: *mut u32) -> ScdStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        put(out, model.inner.tap_stride() as u32)
    })
}

/// Change probabilities for one pair, written to `out_prob` (`height * width` values).
///
/// # Safety
/// `t0` and `t1` must hold `height * width * 3` floats; `out_prob` room for `height * width` doubles.
#[no_mangle]
pub unsafe extern "C" fn scd_model_forward(
    model: *const ScdModel,
    t0: *const f32,
    t1: *const f32,
    height: usize,
    width: usize,
    out_prob: *mut f64,
) -> ScdStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let n = area(height, width)?;
        let a = Image::new(height, width, slice(t0, n * 3, "t0")?.to_vec())?;
        let b = Image::new(height, width, slice(t1, n * 3, "t1")?.to_vec())?;
        let out = slice_mut(out_prob, n, "out_prob")?;
        let prob = model.inner.forward(&ImagePair::new(a, b, "ffi")?)?;
        out.copy_from_slice(prob.data());
        Ok(())
    })
}

/// Segmentation loss of one probability map against a 0/1 target;
/// `mode` is an `ScdLossMode` value.
///
/// # Safety
/// `target` and `prob` must hold `height * width` values.
#[no_mangle]
pub unsafe extern "C" fn scd_seg_loss(
    target: *const u8,
    prob: *const f64,
    height: usize,
    width: usize,
    mode: u32,
    out: *mut f64,
) -> ScdStatus {
    guard(|| {
        let n = area(height, width)?;
        let t = ChangeMask::new(height, width, slice(target, n, "target")?.to_vec())?;
        let mode = match mode {
            m if m == ScdLossMode::Bce as u32 => LossMode::Bce,
            m if m == ScdLossMode::Dice as u32 => LossMode::Dice,
            m if m == ScdLossMode::BcePlusDice as u32 => LossMode::BcePlusDice,
            m => return Err(Fail(ScdStatus::InvalidArgument, format!("unknown loss mode {m}"))),
        };
        let config = LossConfig::default().with_mode(mode);
        let p = ProbabilityMask::new(height, width, slice(prob, n, "prob")?.to_vec(), config.clamp_eps)?;
        put(out, objective::seg_loss(&t, &p, &config)?)
    })
}

/// Poly learning rate `base_lr * (1 - iter / max_iter) ^ power`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn scd_poly_lr(base_lr: f64, power: f64, max_iter: usize, iter: usize, out: *mut f64) -> ScdStatus {
    guard(|| {
        let schedule = PolySchedule::new(base_lr, power, max_iter)?;
        put(out, objective::poly_lr(&schedule, iter)?)
    })
}

/// Precision, recall and F1 from match counts.
///
/// # Safety
/// The three output pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn scd_prf1(
    counts: ScdCounts,
    precision: *mut f64,
    recall: *mut f64,
    f1: *mut f64,
) -> ScdStatus {
    guard(|| {
        let m = evalkit::prf1(counts.true_pos, counts.false_pos, counts.false_neg);
        put(precision, m.precision)?;
        put(recall, m.recall)?;
        put(f1, m.f1)
    })
}

/// Default evaluation options: 8-connectivity, no area filter, IoU >= 0.5.
#[no_mangle]
pub extern "C" fn scd_eval_options_default() -> ScdEvalOptions {
    let d = EvalConfig::default();
    ScdEvalOptions { connectivity: 8, min_area: d.min_area, match_mode: ScdMatchMode::IouThreshold as u32, iou_tau: d.iou_tau }
}

/// Matches the regions of a predicted 0/1 mask against a ground-truth mask.
///
/// # Safety
/// `pred` and `gt` must hold `height * width` values; `options` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn scd_match_masks(
    pred: *const u8,
    gt: *const u8,
    height: usize,
    width: usize,
    options: *const ScdEvalOptions,
    out: *mut ScdCounts,
) -> ScdStatus {
    guard(|| {
        let o = options.as_ref().ok_or_else(|| null("options"))?;
        let connectivity = match o.connectivity {
            4 => Connectivity::Four,
            8 => Connectivity::Eight,
            c => return Err(Fail(ScdStatus::InvalidArgument, format!("connectivity must be 4 or 8, got {c}"))),
        };
        let config = EvalConfig {
            connectivity,
            min_area: o.min_area,
            match_mode: match o.match_mode {
                m if m == ScdMatchMode::IouThreshold as u32 => MatchMode::IouThreshold,
                m if m == ScdMatchMode::AnyOverlap as u32 => MatchMode::AnyOverlap,
                m => return Err(Fail(ScdStatus::InvalidArgument, format!("unknown match mode {m}"))),
            },
            iou_tau: o.iou_tau,
            ..EvalConfig::default()
        };
        config.validate()?;
        let n = area(height, width)?;
        let p = ChangeMask::new(height, width, slice(pred, n, "pred")?.to_vec())?;
        let g = ChangeMask::new(height, width, slice(gt, n, "gt")?.to_vec())?;
        let pr = evalkit::filter_min_area(evalkit::connected_components(&p, connectivity), config.min_area);
        let gr = evalkit::gt_regions(&g, &config);
        let r = evalkit::match_regions(&pr, &gr, &config);
        put(out, ScdCounts { true_pos: r.tp, false_pos: r.fp, false_neg: r.fn_ })
    })
}
