//! C ABI for the cotnav library.
//!
//! Every fallible function returns a [`CotnavStatus`]. On failure the
//! message is stored per thread and can be read with [`cotnav_last_error`].
//! Objects cross the boundary as opaque handles that the caller frees with
//! the matching `_free` function; strings returned by the library are freed
//! with [`cotnav_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use cotnav::episodes::geodesic_distance_with;
use cotnav::error::Error;
use cotnav::eval::{compute_metrics, EpisodeResult};
use cotnav::geom::Cell;
use cotnav::policy::{adaptive_weight, predict, PolicyModel, NUM_ACTIONS};
use cotnav::sim::EpisodeStatus;
use cotnav::world::{deserialize_scene, generate_scene, serialize_scene, CategoryVocab, CooccurrencePriors, Scene};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CotnavStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    Parse = 3,
    Validation = 4,
    Unreachable = 5,
    Numeric = 6,
    Internal = 7,
}

/// Opaque scene handle.
pub struct CotnavScene(Scene);

/// Opaque trained-policy handle.
pub struct CotnavPolicy(PolicyModel);

/// One scored episode. `success` is 0 or 1.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct CotnavEpisodeInput {
    pub success: u8,
    pub shortest_path_m: f64,
    pub agent_path_m: f64,
    pub start_distance_m: f64,
    pub final_distance_m: f64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct CotnavMetrics {
    pub n: usize,
    pub sr: f64,
    pub spl: f64,
    pub soft_spl: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

struct Failure(CotnavStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Parse { .. } | Error::Json(_) => CotnavStatus::Parse,
            Error::Unreachable(_) | Error::Unsatisfiable(_) => CotnavStatus::Unreachable,
            Error::Numeric(_) | Error::Divergence(_) => CotnavStatus::Numeric,
            Error::Precondition(_) | Error::Vocabulary(_) | Error::Sizing(_) => CotnavStatus::InvalidArgument,
            _ => CotnavStatus::Validation,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(CotnavStatus::NullArgument, format!("`{what}` is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(CotnavStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CotnavStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            clear_error();
            CotnavStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            CotnavStatus::Internal
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| invalid(format!("`{what}` is not valid UTF-8")))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

fn into_c_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Failure(CotnavStatus::Internal, "string contains NUL".into()))
}

/// Message for the last failed call on this thread, or null. The pointer
/// stays valid until the next library call on the same thread.
#[no_mangle]
pub extern "C" fn cotnav_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cotnav_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `s` must be null or a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn cotnav_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Generates a scene with the built-in vocabulary and priors.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for a handle.
#[no_mangle]
pub unsafe extern "C" fn cotnav_scene_generate(seed: u64, width: u32, height: u32, rooms: u32, out: *mut *mut CotnavScene) -> CotnavStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let scene = generate_scene(
            seed,
            width as usize,
            height as usize,
            rooms as usize,
            &CategoryVocab::default(),
            &CooccurrencePriors::default(),
        )?;
        *out = Box::into_raw(Box::new(CotnavScene(scene)));
        Ok(())
    })
}

/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cotnav_scene_from_json(json: *const c_char, out: *mut *mut CotnavScene) -> CotnavStatus {
    guard(|| {
        let json = str_arg(json, "json")?;
        let out = out_arg(out, "out")?;
        let scene = deserialize_scene(json.as_bytes())?;
        *out = Box::into_raw(Box::new(CotnavScene(scene)));
        Ok(())
    })
}

/// Serializes a scene; free the result with `cotnav_string_free`.
///
/// # Safety
/// `scene` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cotnav_scene_to_json(scene: *const CotnavScene, out: *mut *mut c_char) -> CotnavStatus {
    guard(|| {
        let scene = scene.as_ref().ok_or_else(|| null("scene"))?;
        let out = out_arg(out, "out")?;
        let bytes = serialize_scene(&scene.0)?;
        *out = into_c_string(String::from_utf8(bytes).map_err(|e| invalid(e.to_string()))?)?;
        Ok(())
    })
}

/// # Safety
/// `scene` must be a live handle; `width` and `height` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cotnav_scene_size(scene: *const CotnavScene, width: *mut u32, height: *mut u32) -> CotnavStatus {
    guard(|| {
        let scene = scene.as_ref().ok_or_else(|| null("scene"))?;
        *out_arg(width, "width")? = scene.0.size.width as u32;
        *out_arg(height, "height")? = scene.0.size.height as u32;
        Ok(())
    })
}

/// Shortest 4-connected path length in meters from `(x, y)` to any floor
/// cell within `radius` hops of a `category` instance.
///
/// # Safety
/// `scene` must be a live handle, `category` a NUL-terminated string and
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cotnav_scene_geodesic_distance(
    scene: *const CotnavScene,
    x: i32,
    y: i32,
    category: *const c_char,
    radius: u32,
    out: *mut f64,
) -> CotnavStatus {
    guard(|| {
        let scene = scene.as_ref().ok_or_else(|| null("scene"))?;
        let category = str_arg(category, "category")?;
        let out = out_arg(out, "out")?;
        *out = geodesic_distance_with(&scene.0, Cell::new(x, y), category, radius)?;
        Ok(())
    })
}

/// # Safety
/// `scene` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cotnav_scene_free(scene: *mut CotnavScene) {
    if !scene.is_null() {
        drop(Box::from_raw(scene));
    }
}

/// Sigmoid sample weight for a confidence `c` in [0, 1]; `alpha` must be
/// positive.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cotnav_adaptive_weight(c: f64, alpha: f64, beta: f64, out: *mut f64) -> CotnavStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(invalid(format!("alpha must be positive, got {alpha}")));
        }
        if !(0.0..=1.0).contains(&c) {
            return Err(invalid(format!("confidence must lie in [0, 1], got {c}")));
        }
        if !beta.is_finite() {
            return Err(invalid("beta must be finite"));
        }
        *out = adaptive_weight(c, alpha, beta);
        Ok(())
    })
}

/// Success rate, SPL and SoftSPL over `n` episodes.
///
/// # Safety
/// `episodes` must point to `n` readable entries; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cotnav_metrics(episodes: *const CotnavEpisodeInput, n: usize, out: *mut CotnavMetrics) -> CotnavStatus {
    guard(|| {
        if episodes.is_null() {
            return Err(null("episodes"));
        }
        let out = out_arg(out, "out")?;
        let inputs = std::slice::from_raw_parts(episodes, n);
        let mut results = Vec::with_capacity(n);
        for (i, e) in inputs.iter().enumerate() {
            let values = [e.shortest_path_m, e.agent_path_m, e.start_distance_m, e.final_distance_m];
            if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(invalid(format!("episode {i}: distances must be finite and non-negative")));
            }
            if e.success > 1 {
                return Err(invalid(format!("episode {i}: success must be 0 or 1")));
            }
            let success = e.success == 1;
            results.push(EpisodeResult {
                episode_id: i.to_string(),
                scene_id: String::new(),
                target_category: String::new(),
                success,
                l_m: e.shortest_path_m,
                p_m: e.agent_path_m,
                steps: 0,
                final_distance_m: e.final_distance_m,
                start_distance_m: e.start_distance_m,
                outcome: if success { EpisodeStatus::Success } else { EpisodeStatus::FailureStop },
            });
        }
        let m = compute_metrics(&results)?;
        *out = CotnavMetrics {
            n: m.n,
            sr: m.sr,
            spl: m.spl,
            soft_spl: m.soft_spl,
        };
        Ok(())
    })
}

/// Loads a trained policy from its JSON artifact.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cotnav_policy_load(json: *const c_char, out: *mut *mut CotnavPolicy) -> CotnavStatus {
    guard(|| {
        let json = str_arg(json, "json")?;
        let out = out_arg(out, "out")?;
        let model = PolicyModel::from_bytes(json.as_bytes())?;
        *out = Box::into_raw(Box::new(CotnavPolicy(model)));
        Ok(())
    })
}

/// # Safety
/// `policy` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cotnav_policy_feature_dim(policy: *const CotnavPolicy, out: *mut usize) -> CotnavStatus {
    guard(|| {
        let policy = policy.as_ref().ok_or_else(|| null("policy"))?;
        *out_arg(out, "out")? = policy.0.params.dim();
        Ok(())
    })
}

/// Greedy action ordinal for a feature vector (0 forward, 1 left, 2 right,
/// 3 look up, 4 look down, 5 stop). When `probs` is non-null it receives
/// the six action probabilities.
///
/// # Safety
/// `features` must point to `len` readable values; `probs` must be null or
/// point to six writable values; `action` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cotnav_policy_predict(
    policy: *const CotnavPolicy,
    features: *const f64,
    len: usize,
    action: *mut u32,
    probs: *mut f64,
) -> CotnavStatus {
    guard(|| {
        let policy = policy.as_ref().ok_or_else(|| null("policy"))?;
        if features.is_null() {
            return Err(null("features"));
        }
        let action = out_arg(action, "action")?;
        let dim = policy.0.params.dim();
        if len != dim {
            return Err(invalid(format!("expected {dim} features, got {len}")));
        }
        let x = std::slice::from_raw_parts(features, len);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(invalid("features must be finite"));
        }
        let (a, p) = predict(&policy.0.params, x);
        *action = a.ordinal() as u32;
        if !probs.is_null() {
            std::slice::from_raw_parts_mut(probs, NUM_ACTIONS).copy_from_slice(&p);
        }
        Ok(())
    })
}

/// # Safety
/// `policy` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cotnav_policy_free(policy: *mut CotnavPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}
