//! C ABI over `scalevec`.
//!
//! Every function returns an [`SvStatus`]. On failure a message is kept per
//! thread and can be read with [`sv_last_error`]. Models and folds are
//! opaque handles released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use scalevec::data::fold::{load_fold, Fold, Split};
use scalevec::data::PIXELS;
use scalevec::equivariant::se_conv_scalar;
use scalevec::model::checkpoint::{load_checkpoint, save_checkpoint};
use scalevec::model::network::argmax;
use scalevec::model::train::evaluate;
use scalevec::model::{ModelConfig, Network, Variant};
use scalevec::{Error, ScaleSpec, Tensor};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SvStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    Config = 3,
    Numeric = 4,
    Input = 5,
    Format = 6,
    Io = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SvVariant {
    Standard = 0,
    Invariant = 1,
    Equivariant = 2,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SvSplit {
    Train = 0,
    Val = 1,
    Test = 2,
}

/// Pyramid and angle-codec settings.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct SvScaleSpec {
    pub n_up: u32,
    pub n_down: u32,
    pub factor: f64,
    pub angle_range: f64,
}

/// Opaque f32 network.
pub struct SvModel {
    net: Network<f32>,
}

/// Opaque fold held in memory.
pub struct SvFold {
    fold: Fold,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).expect("no interior NUL"));
}

fn status_of(e: &Error) -> SvStatus {
    match e {
        Error::Config(_) | Error::Usage(_) => SvStatus::Config,
        Error::Numeric(_) => SvStatus::Numeric,
        Error::Input(_) => SvStatus::Input,
        Error::Parse { .. } | Error::Checksum { .. } | Error::Format(_) | Error::Json(_) => SvStatus::Format,
        Error::Io(_) => SvStatus::Io,
    }
}

struct Fail(SvStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(SvStatus::NullArgument, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SvStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            SvStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            SvStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(SvStatus::InvalidArgument, "path is not UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

fn spec_of(s: &SvScaleSpec) -> Result<ScaleSpec, Fail> {
    Ok(ScaleSpec::new(s.n_up as usize, s.n_down as usize, s.factor, s.angle_range)?)
}

fn split_of(s: SvSplit) -> Split {
    match s {
        SvSplit::Train => Split::Train,
        SvSplit::Val => Split::Val,
        SvSplit::Test => Split::Test,
    }
}

/// Message describing the last failure on this thread; empty after a
/// success. Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn sv_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// The default spec: 8 levels (3 up, 4 down), factor 1.25, 120°.
#[no_mangle]
pub extern "C" fn sv_default_scale_spec() -> SvScaleSpec {
    let d = ScaleSpec::default();
    SvScaleSpec {
        n_up: d.n_up as u32,
        n_down: d.n_down as u32,
        factor: d.factor,
        angle_range: d.angle_range,
    }
}

/// # Safety
/// `spec` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn sv_angle_of_index(spec: *const SvScaleSpec, index: u32, out: *mut f64) -> SvStatus {
    guard(|| {
        let spec = spec_of(spec.as_ref().ok_or_else(|| null("spec"))?)?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = spec.angle_of_index(index as usize)?;
        Ok(())
    })
}

/// Scale-pooled convolution of a `c×h×w` image with `o×c×k×k` filters.
/// Writes `o·h·w` values to each of `u_out`, `v_out` and `argmax_out`.
///
/// # Safety
/// Every pointer must reference at least as many elements as stated.
#[no_mangle]
pub unsafe extern "C" fn sv_se_conv_scalar(
    x: *const f64,
    c: usize,
    h: usize,
    w: usize,
    weights: *const f64,
    o: usize,
    k: usize,
    bias: *const f64,
    spec: *const SvScaleSpec,
    u_out: *mut f64,
    v_out: *mut f64,
    argmax_out: *mut u8,
) -> SvStatus {
    guard(|| {
        if x.is_null() || weights.is_null() || bias.is_null() {
            return Err(null("input"));
        }
        if u_out.is_null() || v_out.is_null() || argmax_out.is_null() {
            return Err(null("output"));
        }
        let spec = spec_of(spec.as_ref().ok_or_else(|| null("spec"))?)?;
        let xt = Tensor::new(vec![c, h, w], std::slice::from_raw_parts(x, c * h * w).to_vec())?;
        let wt = Tensor::new(vec![o, c, k, k], std::slice::from_raw_parts(weights, o * c * k * k).to_vec())?;
        let bt = Tensor::new(vec![o], std::slice::from_raw_parts(bias, o).to_vec())?;
        let out = se_conv_scalar(&xt, &wt, &bt, &spec)?;
        let n = o * h * w;
        ptr::copy_nonoverlapping(out.field.u.data().as_ptr(), u_out, n);
        ptr::copy_nonoverlapping(out.field.v.data().as_ptr(), v_out, n);
        ptr::copy_nonoverlapping(out.argmax.as_ptr(), argmax_out, n);
        Ok(())
    })
}

/// Freshly initialised network with the default architecture of `variant`.
///
/// # Safety
/// `out` must be a valid pointer; on success it receives a handle to free
/// with [`sv_model_free`].
#[no_mangle]
pub unsafe extern "C" fn sv_model_new(variant: SvVariant, seed: u64, out: *mut *mut SvModel) -> SvStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let v = match variant {
            SvVariant::Standard => Variant::Standard,
            SvVariant::Invariant => Variant::Invariant,
            SvVariant::Equivariant => Variant::Equivariant,
        };
        let net = Network::new(ModelConfig::new(v), seed)?;
        *out = Box::into_raw(Box::new(SvModel { net }));
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sv_model_load(path: *const c_char, out: *mut *mut SvModel) -> SvStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let ck = load_checkpoint::<f32>(&path_arg(path)?)?;
        *out = Box::into_raw(Box::new(SvModel { net: ck.network }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn sv_model_save(model: *const SvModel, path: *const c_char) -> SvStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        save_checkpoint(&path_arg(path)?, &m.net, &Default::default())?;
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sv_model_free(model: *mut SvModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn sv_model_param_count(model: *const SvModel, out: *mut usize) -> SvStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        *out.as_mut().ok_or_else(|| null("out"))? = m.net.param_count();
        Ok(())
    })
}

/// Classifies one 28×28 image (row-major, values in `[0, 1]`). Writes up to
/// `logits_len` logits; `class_out` and `scale_out` may be null.
///
/// # Safety
/// `image` must hold `image_len` floats and `logits` `logits_len` floats.
#[no_mangle]
pub unsafe extern "C" fn sv_model_predict(
    model: *const SvModel,
    image: *const f32,
    image_len: usize,
    logits: *mut f32,
    logits_len: usize,
    class_out: *mut u32,
    scale_out: *mut f32,
) -> SvStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if image.is_null() {
            return Err(null("image"));
        }
        if image_len != PIXELS {
            return Err(Fail(
                SvStatus::InvalidArgument,
                format!("image must have {PIXELS} pixels, got {image_len}"),
            ));
        }
        let (l, s) = m.net.predict(std::slice::from_raw_parts(image, image_len))?;
        if !logits.is_null() {
            if logits_len < l.len() {
                return Err(Fail(
                    SvStatus::BufferTooSmall,
                    format!("need room for {} logits", l.len()),
                ));
            }
            ptr::copy_nonoverlapping(l.as_ptr(), logits, l.len());
        }
        if let Some(c) = class_out.as_mut() {
            *c = argmax(&l) as u32;
        }
        if let Some(o) = scale_out.as_mut() {
            *o = s;
        }
        Ok(())
    })
}

/// # Safety
/// `path` must be NUL-terminated and `out` valid; free the handle with
/// [`sv_fold_free`].
#[no_mangle]
pub unsafe extern "C" fn sv_fold_load(path: *const c_char, out: *mut *mut SvFold) -> SvStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let fold = load_fold(&path_arg(path)?)?;
        *out = Box::into_raw(Box::new(SvFold { fold }));
        Ok(())
    })
}

/// # Safety
/// `fold` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sv_fold_free(fold: *mut SvFold) {
    if !fold.is_null() {
        drop(Box::from_raw(fold));
    }
}

/// # Safety
/// `fold` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn sv_fold_len(fold: *const SvFold, split: SvSplit, out: *mut usize) -> SvStatus {
    guard(|| {
        let f = fold.as_ref().ok_or_else(|| null("fold"))?;
        *out.as_mut().ok_or_else(|| null("out"))? = f.fold.split(split_of(split)).len();
        Ok(())
    })
}

/// Copies record `index` of `split`: 784 pixels into `image`, plus label
/// and scale.
///
/// # Safety
/// `image` must hold 784 floats; `label` and `scale` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sv_fold_record(
    fold: *const SvFold,
    split: SvSplit,
    index: usize,
    image: *mut f32,
    label: *mut u8,
    scale: *mut f32,
) -> SvStatus {
    guard(|| {
        let f = fold.as_ref().ok_or_else(|| null("fold"))?;
        let records = f.fold.split(split_of(split));
        let r = records.get(index).ok_or_else(|| {
            Fail(
                SvStatus::InvalidArgument,
                format!("record {index} out of range ({} records)", records.len()),
            )
        })?;
        if image.is_null() || label.is_null() || scale.is_null() {
            return Err(null("output"));
        }
        ptr::copy_nonoverlapping(r.image.as_ptr(), image, PIXELS);
        *label = r.label;
        *scale = r.scale;
        Ok(())
    })
}

/// Classification error (percent) and scale RMSE over the first `limit`
/// records of `split` (all when `limit` is 0).
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn sv_model_evaluate(
    model: *const SvModel,
    fold: *const SvFold,
    split: SvSplit,
    limit: usize,
    error_pct: *mut f64,
    scale_rmse: *mut f64,
) -> SvStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let f = fold.as_ref().ok_or_else(|| null("fold"))?;
        let records = f.fold.split(split_of(split));
        let n = if limit == 0 { records.len() } else { limit.min(records.len()) };
        let metrics = evaluate(&m.net, &records[..n])?;
        *error_pct.as_mut().ok_or_else(|| null("error_pct"))? = metrics.classification_error_pct;
        *scale_rmse.as_mut().ok_or_else(|| null("scale_rmse"))? = metrics.scale_rmse;
        Ok(())
    })
}
