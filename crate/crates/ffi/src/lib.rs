//! C ABI for the `tbsite` library.
//!
//! Models and configurations are opaque handles created and released by the
//! functions below. Every fallible call returns a [`TbStatus`]; on failure the
//! message is kept per thread and can be read with
//! [`tbsite_last_error_message`]. Output arrays are caller-allocated and their
//! length is checked.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use tbsite::contour::{ContourParams, ContourSystem};
use tbsite::model::{self};
use tbsite::spectral::{self, Occupation};
use tbsite::{Configuration, Error, SiteId, TbModel};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TbStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Numerical = 3,
    Panic = 4,
}

/// Opaque model handle.
pub struct TbsiteModel(TbModel);

/// Opaque configuration handle.
pub struct TbsiteConfig(Configuration);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(err: &Error) -> TbStatus {
    if err.is_numerical() {
        TbStatus::Numerical
    } else {
        TbStatus::InvalidArgument
    }
}

/// Runs `f`, mapping errors and panics onto status codes.
fn guard(f: impl FnOnce() -> Result<(), (TbStatus, String)>) -> TbStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            TbStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            TbStatus::Panic
        }
    }
}

fn lift(err: Error) -> (TbStatus, String) {
    (status_of(&err), err.to_string())
}

fn null() -> (TbStatus, String) {
    (TbStatus::NullPointer, "null pointer argument".into())
}

unsafe fn out_slice<'a>(out: *mut f64, len: usize, need: usize) -> Result<&'a mut [f64], (TbStatus, String)> {
    if out.is_null() {
        return Err(null());
    }
    if len < need {
        return Err((TbStatus::InvalidArgument, format!("output buffer holds {len} values, need {need}")));
    }
    Ok(std::slice::from_raw_parts_mut(out, need))
}

unsafe fn model_ref<'a>(m: *const TbsiteModel) -> Result<&'a TbModel, (TbStatus, String)> {
    m.as_ref().map(|m| &m.0).ok_or_else(null)
}

unsafe fn config_ref<'a>(c: *const TbsiteConfig) -> Result<&'a Configuration, (TbStatus, String)> {
    c.as_ref().map(|c| &c.0).ok_or_else(null)
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tbsite_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length without the NUL, or
/// 0 when there is no error.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn tbsite_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else { return 0 };
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Model with default parameters.
#[no_mangle]
pub extern "C" fn tbsite_model_new_default() -> *mut TbsiteModel {
    Box::into_raw(Box::new(TbsiteModel(TbModel::default())))
}

/// Parses a model from a JSON object such as `{"kT": 0.05}`.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tbsite_model_from_json(json: *const c_char, out: *mut *mut TbsiteModel) -> TbStatus {
    guard(|| {
        if json.is_null() || out.is_null() {
            return Err(null());
        }
        let text = CStr::from_ptr(json)
            .to_str()
            .map_err(|_| (TbStatus::InvalidArgument, "model JSON is not UTF-8".to_string()))?;
        let model: TbModel = serde_json::from_str(text).map_err(|e| (TbStatus::InvalidArgument, e.to_string()))?;
        model.validate().map_err(lift)?;
        *out = Box::into_raw(Box::new(TbsiteModel(model)));
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn tbsite_model_free(model: *mut TbsiteModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Configuration of `n` sites in `dim` dimensions from row-major positions.
/// Sites are labelled `(k, 0)` in input order.
///
/// # Safety
/// `positions` must hold `n * dim` values and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn tbsite_config_new(
    dim: usize,
    n: usize,
    positions: *const f64,
    out: *mut *mut TbsiteConfig,
) -> TbStatus {
    guard(|| {
        if positions.is_null() || out.is_null() {
            return Err(null());
        }
        let pos = std::slice::from_raw_parts(positions, n * dim).to_vec();
        let ids = (0..n as i64).map(SiteId::label).collect();
        let config = Configuration::new(dim, ids, pos).map_err(lift)?;
        *out = Box::into_raw(Box::new(TbsiteConfig(config)));
        Ok(())
    })
}

/// # Safety
/// `config` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn tbsite_config_free(config: *mut TbsiteConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Number of sites, or 0 for a null handle.
///
/// # Safety
/// `config` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tbsite_config_len(config: *const TbsiteConfig) -> usize {
    config.as_ref().map_or(0, |c| c.0.len())
}

/// Band energy `Σ_s F(ε_s)` plus pair energy.
///
/// # Safety
/// Handles must be live and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn tbsite_total_energy(model: *const TbsiteModel, config: *const TbsiteConfig, out: *mut f64) -> TbStatus {
    guard(|| {
        let (m, c) = (model_ref(model)?, config_ref(config)?);
        if out.is_null() {
            return Err(null());
        }
        *out = tbsite::defect::total_energy(m, c).map_err(lift)?;
        Ok(())
    })
}

/// Site energies (band part) of every site, by diagonalization.
///
/// # Safety
/// Handles must be live and `out` valid for `len` values.
#[no_mangle]
pub unsafe extern "C" fn tbsite_site_energies(
    model: *const TbsiteModel,
    config: *const TbsiteConfig,
    out: *mut f64,
    len: usize,
) -> TbStatus {
    guard(|| {
        let (m, c) = (model_ref(model)?, config_ref(config)?);
        let dst = out_slice(out, len, c.len())?;
        let spec = spectral::eig(&model::assemble(m, c)).map_err(lift)?;
        dst.copy_from_slice(&spectral::site_energies(&spec, &Occupation::from_model(m)));
        Ok(())
    })
}

/// Gradient of the total energy, row-major `(site, coord)`.
///
/// # Safety
/// Handles must be live and `out` valid for `len` values.
#[no_mangle]
pub unsafe extern "C" fn tbsite_total_gradient(
    model: *const TbsiteModel,
    config: *const TbsiteConfig,
    out: *mut f64,
    len: usize,
) -> TbStatus {
    guard(|| {
        let (m, c) = (model_ref(model)?, config_ref(config)?);
        let dst = out_slice(out, len, c.len() * c.dim())?;
        let spec = spectral::eig(&model::assemble(m, c)).map_err(lift)?;
        dst.copy_from_slice(&spectral::total_gradient_hf(m, c, &spec, &Occupation::from_model(m)));
        Ok(())
    })
}

fn contour_system(m: &TbModel, c: &Configuration, n_nodes: usize) -> Result<ContourSystem, (TbStatus, String)> {
    let params = ContourParams {
        n_nodes: if n_nodes == 0 { ContourParams::default().n_nodes } else { n_nodes },
        ..ContourParams::default()
    };
    ContourSystem::new(m, c, &params).map_err(lift)
}

/// Site energy of `site` by contour quadrature (`n_nodes = 0` selects the default).
///
/// # Safety
/// Handles must be live and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn tbsite_contour_site_energy(
    model: *const TbsiteModel,
    config: *const TbsiteConfig,
    site: usize,
    n_nodes: usize,
    out: *mut f64,
) -> TbStatus {
    guard(|| {
        let (m, c) = (model_ref(model)?, config_ref(config)?);
        if out.is_null() {
            return Err(null());
        }
        *out = contour_system(m, c, n_nodes)?.site_energy(site).map_err(lift)?;
        Ok(())
    })
}

/// `∂E_site/∂y(m)` for every site `m`, row-major `(m, coord)`, by contour quadrature.
///
/// # Safety
/// Handles must be live and `out` valid for `len` values.
#[no_mangle]
pub unsafe extern "C" fn tbsite_contour_site_gradient(
    model: *const TbsiteModel,
    config: *const TbsiteConfig,
    site: usize,
    n_nodes: usize,
    out: *mut f64,
    len: usize,
) -> TbStatus {
    guard(|| {
        let (m, c) = (model_ref(model)?, config_ref(config)?);
        let dst = out_slice(out, len, c.len() * c.dim())?;
        let grads = contour_system(m, c, n_nodes)?.site_gradients(m, site).map_err(lift)?;
        dst.copy_from_slice(&grads);
        Ok(())
    })
}
