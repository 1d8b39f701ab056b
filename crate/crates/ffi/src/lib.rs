//! C ABI over r3d-core.
//!
//! Every fallible function returns an [`R3dStatus`]; on failure a message is
//! available from [`r3d_last_error_message`] on the calling thread. Objects
//! are opaque handles released with their matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use r3d_core::channel_model::{polarization_gain_db, Point3, TargetCoefficients};
use r3d_core::dataset::{build_dataset, read_sample, write_sample, BuildConfig, DatasetSample};
use r3d_core::env::{generate_city, CityGenParams, OccupancyGrid};
use r3d_core::fitting::{fit_coefficients, MaskedMeasurements, Measurement};
use r3d_core::format::{ChannelKind, R3dmFile};
use r3d_core::grid::{GridDims, Voxel};
use r3d_core::metrics::{evaluate, SsimConfig};
use r3d_core::propagate2d::{predict_volume, Base2DParams, BaseMap3D};
use r3d_core::synthesis::{compose_multi, synth_single, ComposeConfig, DomainTag, RadioMap3D, Transmitter};
use r3d_core::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum R3dStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    ChecksumMismatch = 5,
    DimsMismatch = 6,
    SingularDesign = 7,
    DegenerateGeometry = 8,
    InvariantViolation = 9,
    OutOfBounds = 10,
    Panic = 99,
}

fn status_of(e: &Error) -> R3dStatus {
    match e {
        Error::Io { .. } => R3dStatus::Io,
        Error::Format(_) | Error::Json(_) => R3dStatus::Format,
        Error::ChecksumMismatch { .. } => R3dStatus::ChecksumMismatch,
        Error::DimsMismatch { .. } | Error::ShapeMismatch(_) => R3dStatus::DimsMismatch,
        Error::SingularDesign { .. } => R3dStatus::SingularDesign,
        Error::DegenerateGeometry(_) => R3dStatus::DegenerateGeometry,
        Error::InvariantViolation(_) | Error::NonBinaryValue { .. } | Error::NonFiniteValue { .. } => {
            R3dStatus::InvariantViolation
        }
        Error::OutOfBounds(_) | Error::IndexOutOfRange { .. } => R3dStatus::OutOfBounds,
        Error::InvalidParams(_)
        | Error::TooFewSamples { .. }
        | Error::EmptyInput(_)
        | Error::BadFractions(_)
        | Error::DomainMismatch(_)
        | Error::VolumeTooSmall { .. }
        | Error::NonPositivePower
        | Error::EmptyCandidates
        | Error::MissingChannel(_)
        | Error::ConstantDataset { .. }
        | Error::ZeroEnergyTruth => R3dStatus::InvalidArgument,
    }
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

struct Fail(R3dStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(R3dStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> R3dStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            R3dStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            R3dStatus::Panic
        }
    }
}

unsafe fn as_ref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(R3dStatus::InvalidArgument, format!("{what} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

fn boxed<T>(v: T) -> *mut T {
    Box::into_raw(Box::new(v))
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Message for the last failed call on this thread; empty after a success.
/// Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn r3d_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct R3dDims {
    pub width: usize,
    pub depth: usize,
    pub height: usize,
    pub resolution_m: f64,
}

impl R3dDims {
    fn to_core(self) -> Result<GridDims, Fail> {
        Ok(GridDims::new(self.width, self.depth, self.height, self.resolution_m)?)
    }

    fn from_core(d: &GridDims) -> Self {
        R3dDims {
            width: d.width,
            depth: d.depth,
            height: d.height,
            resolution_m: d.resolution_m,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct R3dCoefficients {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub e: f64,
}

impl From<R3dCoefficients> for TargetCoefficients {
    fn from(c: R3dCoefficients) -> Self {
        TargetCoefficients::new(c.a, c.b, c.c, c.e)
    }
}

/// Voxel indices and power in dB.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct R3dTransmitter {
    pub x: usize,
    pub y: usize,
    pub z: usize,
    pub power_db: f64,
}

impl From<R3dTransmitter> for Transmitter {
    fn from(t: R3dTransmitter) -> Self {
        Transmitter::new(Voxel::new(t.x, t.y, t.z), t.power_db)
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct R3dBase2DParams {
    pub a0: f64,
    pub b0: f64,
    pub wall_loss_db: f64,
    pub floor_db: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct R3dComposeConfig {
    /// Ignored unless `has_noise_floor` is nonzero.
    pub noise_floor_db: f64,
    pub has_noise_floor: u8,
    pub clamp_min_db: f64,
    pub clamp_max_db: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct R3dFitReport {
    pub phi: R3dCoefficients,
    pub residual_rmse_db: f64,
    pub condition_number: f64,
}

/// `psnr_db` is `+inf` when the volumes agree exactly.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct R3dMetrics {
    pub rmse: f64,
    pub nmse: f64,
    pub ssim: f64,
    pub psnr_db: f64,
}

pub struct R3dOccupancy(OccupancyGrid);
pub struct R3dBaseMap(BaseMap3D);
pub struct R3dRadioMap(RadioMap3D);
pub struct R3dSample(DatasetSample);

#[no_mangle]
pub extern "C" fn r3d_default_dims(width: usize, depth: usize, height: usize) -> R3dDims {
    R3dDims {
        width,
        depth,
        height,
        resolution_m: 1.0,
    }
}

#[no_mangle]
pub extern "C" fn r3d_base2d_default_params() -> R3dBase2DParams {
    let p = Base2DParams::default();
    R3dBase2DParams {
        a0: p.a0,
        b0: p.b0,
        wall_loss_db: p.wall_loss_db,
        floor_db: p.floor_db,
    }
}

#[no_mangle]
pub extern "C" fn r3d_compose_default_config() -> R3dComposeConfig {
    let c = ComposeConfig::default();
    R3dComposeConfig {
        noise_floor_db: 0.0,
        has_noise_floor: 0,
        clamp_min_db: c.clamp_min_db,
        clamp_max_db: c.clamp_max_db,
    }
}

/// Generates a procedural city with the default layout for `dims`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn r3d_city_generate(dims: R3dDims, seed: u64, out: *mut *mut R3dOccupancy) -> R3dStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let dims = dims.to_core()?;
        let grid = generate_city(dims, &CityGenParams::default_for(&dims), seed)?;
        *out = boxed(R3dOccupancy(grid));
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn r3d_occupancy_read(path: *const c_char, out: *mut *mut R3dOccupancy) -> R3dStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let path = path_arg(path, "path")?;
        let ch = R3dmFile::read(&path)?;
        let data = ch.channel(ChannelKind::Env).ok_or_else(|| Fail::from(Error::MissingChannel("env".into())))?;
        *out = boxed(R3dOccupancy(OccupancyGrid::from_f32(ch.dims, data)?));
        Ok(())
    })
}

/// # Safety
/// `grid` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn r3d_occupancy_write(grid: *const R3dOccupancy, path: *const c_char, crc_out: *mut u32) -> R3dStatus {
    guard(|| {
        let grid = as_ref(grid, "grid")?;
        let crc = grid.0.write(path_arg(path, "path")?)?;
        if let Some(c) = crc_out.as_mut() {
            *c = crc;
        }
        Ok(())
    })
}

/// # Safety
/// `grid` must come from this library; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn r3d_occupancy_dims(grid: *const R3dOccupancy, out: *mut R3dDims) -> R3dStatus {
    guard(|| {
        *out_ref(out, "out")? = R3dDims::from_core(as_ref(grid, "grid")?.0.dims());
        Ok(())
    })
}

/// Occupancy bytes (0 free, 1 occupied) in x-major order.
///
/// # Safety
/// `grid` must come from this library; `data` and `len` must be valid. The
/// returned buffer lives as long as `grid`.
#[no_mangle]
pub unsafe extern "C" fn r3d_occupancy_data(grid: *const R3dOccupancy, data: *mut *const u8, len: *mut usize) -> R3dStatus {
    guard(|| {
        let s = as_ref(grid, "grid")?.0.as_slice();
        *out_ref(data, "data")? = s.as_ptr();
        *out_ref(len, "len")? = s.len();
        Ok(())
    })
}

/// # Safety
/// `grid` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn r3d_occupancy_free(grid: *mut R3dOccupancy) {
    free(grid)
}

/// Stacked 2D base prediction for a transmitter at `(tx_x, tx_y)`. A null
/// `params` selects the defaults.
///
/// # Safety
/// `env` must come from this library; `params` may be null; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn r3d_base_predict(
    env: *const R3dOccupancy,
    tx_x: usize,
    tx_y: usize,
    power_db: f64,
    params: *const R3dBase2DParams,
    out: *mut *mut R3dBaseMap,
) -> R3dStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let env = as_ref(env, "env")?;
        let p = params.as_ref().map_or_else(Base2DParams::default, |p| Base2DParams {
            a0: p.a0,
            b0: p.b0,
            wall_loss_db: p.wall_loss_db,
            floor_db: p.floor_db,
        });
        *out = boxed(R3dBaseMap(predict_volume(&env.0, (tx_x, tx_y), power_db, &p)?));
        Ok(())
    })
}

/// # Safety
/// `base` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn r3d_base_free(base: *mut R3dBaseMap) {
    free(base)
}

/// Fits the target model to `n` measurements. `positions` holds `3 * n`
/// coordinates in meters (x, y, z per entry).
///
/// # Safety
/// `positions` and `values` must hold `3 * n` and `n` doubles; `base` must
/// come from this library; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn r3d_fit(
    positions: *const f64,
    values: *const f64,
    n: usize,
    tx_x: f64,
    tx_y: f64,
    tx_z: f64,
    base: *const R3dBaseMap,
    out: *mut R3dFitReport,
) -> R3dStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let pos = slice_arg(positions, n * 3, "positions")?;
        let vals = slice_arg(values, n, "values")?;
        let base = as_ref(base, "base")?;
        let entries = pos
            .chunks_exact(3)
            .zip(vals)
            .map(|(p, &v)| Measurement {
                u: Point3::new(p[0], p[1], p[2]),
                value_db: v,
            })
            .collect();
        let meas = MaskedMeasurements::new(Point3::new(tx_x, tx_y, tx_z), entries);
        let r = fit_coefficients(&meas, &base.0)?;
        *out = R3dFitReport {
            phi: R3dCoefficients {
                a: r.phi.a,
                b: r.phi.b,
                c: r.phi.c,
                e: r.phi.e,
            },
            residual_rmse_db: r.residual_rmse_db,
            condition_number: r.condition_number.unwrap_or(f64::NAN),
        };
        Ok(())
    })
}

/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn r3d_polarization_gain_db(d2: f64, d3: f64, out: *mut f64) -> R3dStatus {
    guard(|| {
        *out_ref(out, "out")? = polarization_gain_db(d2, d3)?;
        Ok(())
    })
}

/// Single-transmitter map in dB.
///
/// # Safety
/// `env` and `base` must come from this library; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn r3d_synth_single(
    env: *const R3dOccupancy,
    base: *const R3dBaseMap,
    tx: R3dTransmitter,
    phi: R3dCoefficients,
    null_db: f64,
    out: *mut *mut R3dRadioMap,
) -> R3dStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let map = synth_single(&as_ref(env, "env")?.0, &tx.into(), &phi.into(), &as_ref(base, "base")?.0, null_db)?;
        *out = boxed(R3dRadioMap(map));
        Ok(())
    })
}

/// Linear-power composition of `count` dB maps. A null `cfg` selects the
/// defaults.
///
/// # Safety
/// `maps` must hold `count` handles from this library; `cfg` may be null;
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn r3d_compose(
    maps: *const *const R3dRadioMap,
    count: usize,
    cfg: *const R3dComposeConfig,
    out: *mut *mut R3dRadioMap,
) -> R3dStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let handles = slice_arg(maps, count, "maps")?;
        let list = handles
            .iter()
            .map(|&h| as_ref(h, "map").map(|m| m.0.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        let cfg = cfg.as_ref().map_or_else(ComposeConfig::default, |c| ComposeConfig {
            noise_floor_db: (c.has_noise_floor != 0).then_some(c.noise_floor_db),
            clamp_min_db: c.clamp_min_db,
            clamp_max_db: c.clamp_max_db,
        });
        *out = boxed(R3dRadioMap(compose_multi(&list, &cfg)?));
        Ok(())
    })
}

/// Wraps a copy of `len` dB values as a radio map.
///
/// # Safety
/// `data` must hold `len` floats; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn r3d_radio_map_from_db(dims: R3dDims, data: *const f32, len: usize, out: *mut *mut R3dRadioMap) -> R3dStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let values = slice_arg(data, len, "data")?.to_vec();
        *out = boxed(R3dRadioMap(RadioMap3D::from_vec(dims.to_core()?, values, DomainTag::Db)?));
        Ok(())
    })
}

/// # Safety
/// `map` must come from this library; `data` and `len` must be valid. The
/// returned buffer lives as long as `map`.
#[no_mangle]
pub unsafe extern "C" fn r3d_radio_map_data(map: *const R3dRadioMap, data: *mut *const f32, len: *mut usize) -> R3dStatus {
    guard(|| {
        let s = as_ref(map, "map")?.0.as_slice();
        *out_ref(data, "data")? = s.as_ptr();
        *out_ref(len, "len")? = s.len();
        Ok(())
    })
}

/// # Safety
/// `map` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn r3d_radio_map_free(map: *mut R3dRadioMap) {
    free(map)
}

/// RMSE, NMSE, SSIM and PSNR of two normalized volumes (`R = 1`).
///
/// # Safety
/// `pred` and `truth` must each hold `width * depth * height` floats; `out`
/// must be valid.
#[no_mangle]
pub unsafe extern "C" fn r3d_metrics(
    pred: *const f32,
    truth: *const f32,
    dims: R3dDims,
    ssim_window: usize,
    out: *mut R3dMetrics,
) -> R3dStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let dims = dims.to_core()?;
        let n = dims.voxel_count();
        let p = RadioMap3D::from_vec(dims, slice_arg(pred, n, "pred")?.to_vec(), DomainTag::Normalized)?;
        let t = RadioMap3D::from_vec(dims, slice_arg(truth, n, "truth")?.to_vec(), DomainTag::Normalized)?;
        let cfg = SsimConfig {
            window: ssim_window,
            ..SsimConfig::default()
        };
        let r = evaluate(&p, &t, &cfg)?;
        *out = R3dMetrics {
            rmse: r.rmse,
            nmse: r.nmse,
            ssim: r.ssim,
            psnr_db: r.psnr_db,
        };
        Ok(())
    })
}

/// Reads and validates a dataset sample.
///
/// # Safety
/// `path` must be NUL-terminated; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn r3d_sample_read(path: *const c_char, out: *mut *mut R3dSample) -> R3dStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = boxed(R3dSample(read_sample(path_arg(path, "path")?)?));
        Ok(())
    })
}

/// # Safety
/// `sample` must come from this library; `path` must be NUL-terminated;
/// `crc_out` may be null.
#[no_mangle]
pub unsafe extern "C" fn r3d_sample_write(sample: *const R3dSample, path: *const c_char, crc_out: *mut u32) -> R3dStatus {
    guard(|| {
        let crc = write_sample(&as_ref(sample, "sample")?.0, path_arg(path, "path")?)?;
        if let Some(c) = crc_out.as_mut() {
            *c = crc;
        }
        Ok(())
    })
}

/// # Safety
/// `sample` must come from this library; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn r3d_sample_dims(sample: *const R3dSample, out: *mut R3dDims) -> R3dStatus {
    guard(|| {
        *out_ref(out, "out")? = R3dDims::from_core(&as_ref(sample, "sample")?.0.features.dims);
        Ok(())
    })
}

/// Number of feature channels (label excluded).
///
/// # Safety
/// `sample` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn r3d_sample_channel_count(sample: *const R3dSample) -> usize {
    sample.as_ref().map_or(0, |s| s.0.features.channels.len())
}

/// Feature channel `index`: its type code (as stored on disk) and values.
///
/// # Safety
/// `sample` must come from this library; the out pointers must be valid. The
/// returned buffer lives as long as `sample`.
#[no_mangle]
pub unsafe extern "C" fn r3d_sample_channel(
    sample: *const R3dSample,
    index: usize,
    kind: *mut u8,
    data: *mut *const f32,
    len: *mut usize,
) -> R3dStatus {
    guard(|| {
        let s = as_ref(sample, "sample")?;
        let chans = &s.0.features.channels;
        let c = chans.get(index).ok_or_else(|| {
            Fail::from(Error::IndexOutOfRange {
                index,
                len: chans.len(),
            })
        })?;
        *out_ref(kind, "kind")? = c.kind.code();
        *out_ref(data, "data")? = c.data.as_ptr();
        *out_ref(len, "len")? = c.data.len();
        Ok(())
    })
}

/// # Safety
/// As for [`r3d_sample_channel`].
#[no_mangle]
pub unsafe extern "C" fn r3d_sample_label(sample: *const R3dSample, data: *mut *const f32, len: *mut usize) -> R3dStatus {
    guard(|| {
        let l = as_ref(sample, "sample")?.0.label.as_slice();
        *out_ref(data, "data")? = l.as_ptr();
        *out_ref(len, "len")? = l.len();
        Ok(())
    })
}

/// # Safety
/// `sample` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn r3d_sample_free(sample: *mut R3dSample) {
    free(sample)
}

/// Code of the label channel in sample files.
#[no_mangle]
pub extern "C" fn r3d_channel_code_label() -> u8 {
    ChannelKind::Label.code()
}

/// Builds a dataset from a JSON config file. `workers = 0` uses every core.
///
/// # Safety
/// `config_path` and `out_dir` must be NUL-terminated; `sample_count` may be
/// null.
#[no_mangle]
pub unsafe extern "C" fn r3d_build_dataset(
    config_path: *const c_char,
    out_dir: *const c_char,
    workers: usize,
    sample_count: *mut usize,
) -> R3dStatus {
    guard(|| {
        let cfg = BuildConfig::load(path_arg(config_path, "config_path")?)?;
        let out = path_arg(out_dir, "out_dir")?;
        let m = build_dataset(&cfg, out, (workers > 0).then_some(workers))?;
        if let Some(c) = sample_count.as_mut() {
            *c = m.sample_count;
        }
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn panics_become_status() {
        assert_eq!(guard(|| panic!("boom")), R3dStatus::Panic);
        let msg = unsafe { CStr::from_ptr(r3d_last_error_message()) };
        assert_eq!(msg.to_str().unwrap(), "internal panic");
    }

    #[test]
    fn error_codes() {
        assert_eq!(status_of(&Error::ChecksumMismatch { stored: 1, computed: 2 }), R3dStatus::ChecksumMismatch);
        assert_eq!(status_of(&Error::SingularDesign { condition: 1e12 }), R3dStatus::SingularDesign);
        assert_eq!(status_of(&Error::EmptyCandidates), R3dStatus::InvalidArgument);
    }

    #[test]
    fn interior_nul_in_message() {
        set_error("a\0b");
        let msg = unsafe { CStr::from_ptr(r3d_last_error_message()) };
        assert_eq!(msg.to_str().unwrap(), "a b");
    }
}
