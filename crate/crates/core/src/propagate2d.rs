//! Per-height 2D base predictions.
//!
//! The analytic oracle is a log-distance pathloss law with a fixed loss per
//! occupied voxel crossed by the horizontal line of sight:
//!
//! ```text
//! value(u) = max(floor_db, P_tx + a0 + b0 * log10(max(d2, res / 2)) - wall_loss_db * walls(tx, u))
//! ```
//!
//! Walls are counted with a supercover traversal, which visits every voxel
//! the segment between the two voxel centers touches, corners included.
//! Slices can also be imported from any external 2D predictor through the
//! R3DM `base2d` channel.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel_model::Point3;
use crate::env::{Occupancy2D, OccupancyGrid};
use crate::error::{Error, Result};
use crate::format::{self, ChannelKind, R3dmFile};
use crate::grid::{GridDims, Plane, Volume, Voxel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Base2DParams {
    /// Intercept at 1 m, dB.
    pub a0: f64,
    /// Slope per decade of distance, dB (negative).
    pub b0: f64,
    /// Attenuation per occupied voxel crossed, dB.
    pub wall_loss_db: f64,
    /// Lower clamp, dB.
    pub floor_db: f64,
}

impl Default for Base2DParams {
    /// Free-space-like 2.4 GHz intercept with a 6 dB per-voxel wall loss.
    fn default() -> Self {
        Base2DParams {
            a0: -40.0,
            b0: -20.0,
            wall_loss_db: 6.0,
            floor_db: -140.0,
        }
    }
}

impl Base2DParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.a0.is_finite() && self.b0.is_finite() && self.wall_loss_db.is_finite()) {
            return Err(Error::InvalidParams("base2d parameters must be finite".into()));
        }
        if !(self.b0 < 0.0) {
            return Err(Error::InvalidParams(format!("b0 must be negative, got {}", self.b0)));
        }
        if !(self.wall_loss_db >= 0.0) {
            return Err(Error::InvalidParams(format!(
                "wall_loss_db must be >= 0, got {}",
                self.wall_loss_db
            )));
        }
        if !self.floor_db.is_finite() {
            return Err(Error::InvalidParams("floor_db must be finite".into()));
        }
        Ok(())
    }

    #[inline]
    fn value(&self, p_tx_db: f64, d2: f64, walls: u32, resolution_m: f64) -> f64 {
        let d = d2.max(0.5 * resolution_m);
        (p_tx_db + self.a0 + self.b0 * d.log10() - self.wall_loss_db * f64::from(walls))
            .max(self.floor_db)
    }
}

/// Stacked per-height prediction, in dB.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseMap3D {
    volume: Volume<f32>,
}

impl BaseMap3D {
    pub fn from_vec(dims: GridDims, data: Vec<f32>) -> Result<Self> {
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue { index });
        }
        Ok(BaseMap3D {
            volume: Volume::from_vec(dims, data)?,
        })
    }

    pub fn constant(dims: GridDims, value: f32) -> Self {
        BaseMap3D {
            volume: Volume::filled(dims, value),
        }
    }

    pub fn dims(&self) -> &GridDims {
        self.volume.dims()
    }

    pub fn as_slice(&self) -> &[f32] {
        self.volume.as_slice()
    }

    #[inline]
    pub fn get(&self, v: Voxel) -> f32 {
        self.volume.get(v)
    }

    /// Value of the voxel containing `p`.
    pub fn value_at(&self, p: &Point3) -> Result<f32> {
        Ok(self.volume.get(self.dims().locate(p)?))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<u32> {
        R3dmFile::single(*self.dims(), ChannelKind::Base2d, self.as_slice().to_vec())?.write(path)
    }
}

/// Visits the voxels a segment between two voxel centers touches, endpoints
/// excluded, in traversal order. Passing exactly through a corner visits both
/// side neighbours before the diagonal voxel.
pub fn supercover(from: (usize, usize), to: (usize, usize), mut visit: impl FnMut(usize, usize)) {
    let (mut x, mut y) = (from.0 as i64, from.1 as i64);
    let (tx, ty) = (to.0 as i64, to.1 as i64);
    let (dx, dy) = ((tx - x).abs(), (ty - y).abs());
    let (sx, sy) = ((tx - x).signum(), (ty - y).signum());
    let (mut ix, mut iy) = (0i64, 0i64);
    while ix < dx || iy < dy {
        // Next x boundary at t = (ix + 1/2) / dx, next y boundary at (iy + 1/2) / dy.
        let next_x = (2 * ix + 1) * dy;
        let next_y = (2 * iy + 1) * dx;
        if next_x < next_y {
            x += sx;
            ix += 1;
        } else if next_x > next_y {
            y += sy;
            iy += 1;
        } else {
            visit((x + sx) as usize, y as usize);
            visit(x as usize, (y + sy) as usize);
            x += sx;
            y += sy;
            ix += 1;
            iy += 1;
        }
        if (x, y) != (tx, ty) {
            visit(x as usize, y as usize);
        }
    }
}

pub fn count_wall_crossings(
    env2d: &Occupancy2D,
    from: (usize, usize),
    to: (usize, usize),
) -> Result<u32> {
    for p in [from, to] {
        if !env2d.contains(p.0, p.1) {
            return Err(Error::OutOfBounds(format!(
                "point {p:?} outside {}x{} slice",
                env2d.width(),
                env2d.depth()
            )));
        }
    }
    let mut count = 0u32;
    supercover(from, to, |x, y| count += u32::from(env2d.get(x, y) != 0));
    Ok(count)
}

fn planar_distance(a: (usize, usize), b: (usize, usize), resolution_m: f64) -> f64 {
    let dx = (a.0 as f64 - b.0 as f64) * resolution_m;
    let dy = (a.1 as f64 - b.1 as f64) * resolution_m;
    (dx * dx + dy * dy).sqrt()
}

/// Oracle prediction over one horizontal slice.
pub fn predict_slice(
    env2d: &Occupancy2D,
    tx_xy: (usize, usize),
    p_tx_db: f64,
    params: &Base2DParams,
    resolution_m: f64,
) -> Result<Plane<f32>> {
    params.validate()?;
    if !env2d.contains(tx_xy.0, tx_xy.1) {
        return Err(Error::OutOfBounds(format!("transmitter {tx_xy:?} outside slice")));
    }
    let (w, d) = (env2d.width(), env2d.depth());
    let mut out = Plane::filled(w, d, 0.0f32);
    for x in 0..w {
        for y in 0..d {
            let walls = count_wall_crossings(env2d, tx_xy, (x, y))?;
            let d2 = planar_distance(tx_xy, (x, y), resolution_m);
            out.set(x, y, params.value(p_tx_db, d2, walls, resolution_m) as f32);
        }
    }
    Ok(out)
}

/// Oracle prediction for every height at once.
///
/// Equivalent to stacking [`predict_slice`] over all `z`, but each horizontal
/// line is traversed once and the occupied voxels of every height are
/// accumulated from the contiguous z-columns.
pub fn predict_volume(
    env: &OccupancyGrid,
    tx_xy: (usize, usize),
    p_tx_db: f64,
    params: &Base2DParams,
) -> Result<BaseMap3D> {
    params.validate()?;
    let dims = *env.dims();
    if tx_xy.0 >= dims.width || tx_xy.1 >= dims.depth {
        return Err(Error::OutOfBounds(format!(
            "transmitter {tx_xy:?} outside grid {dims}"
        )));
    }
    let h = dims.height;
    let mut data = vec![0.0f32; dims.voxel_count()];
    data.par_chunks_mut(dims.depth * h)
        .enumerate()
        .for_each(|(x, plane)| {
            let mut walls = vec![0u32; h];
            for (y, column) in plane.chunks_exact_mut(h).enumerate() {
                walls.iter_mut().for_each(|w| *w = 0);
                supercover(tx_xy, (x, y), |cx, cy| {
                    for (w, &o) in walls.iter_mut().zip(env.column(cx, cy)) {
                        *w += u32::from(o);
                    }
                });
                let d2 = planar_distance(tx_xy, (x, y), dims.resolution_m);
                for (out, &w) in column.iter_mut().zip(&walls) {
                    *out = params.value(p_tx_db, d2, w, dims.resolution_m) as f32;
                }
            }
        });
    BaseMap3D::from_vec(dims, data)
}

/// Stacks H slices: `data[x][y][z] = slices[z][x][y]`.
pub fn stack_slices(slices: &[Plane<f32>], dims: GridDims) -> Result<BaseMap3D> {
    if slices.len() != dims.height {
        return Err(Error::ShapeMismatch(format!(
            "expected {} slices, got {}",
            dims.height,
            slices.len()
        )));
    }
    if let Some((z, s)) = slices
        .iter()
        .enumerate()
        .find(|(_, s)| s.width() != dims.width || s.depth() != dims.depth)
    {
        return Err(Error::ShapeMismatch(format!(
            "slice {z} is {}x{}, expected {}x{}",
            s.width(),
            s.depth(),
            dims.width,
            dims.depth
        )));
    }
    let data = Volume::from_fn(dims, |v| slices[v.z].get(v.x, v.y)).into_vec();
    BaseMap3D::from_vec(dims, data)
}

/// Loads externally produced slices from a single-channel `base2d` file.
pub fn import_slices(path: impl AsRef<Path>, dims: &GridDims) -> Result<BaseMap3D> {
    let (file_dims, data) = format::read_single(path, &[ChannelKind::Base2d], Some(dims))?;
    BaseMap3D::from_vec(file_dims, data)
}
