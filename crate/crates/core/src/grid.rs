//! Grid geometry shared by every volume in the crate.
//!
//! Axis order is fixed as (x = width, y = depth, z = height) and volumes are
//! linearized x-major: `index = (x * D + y) * H + z`. A voxel `(x, y, z)` sits
//! at the voxel-center position `((x + 0.5), (y + 0.5), (z + 0.5)) * resolution_m`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::channel_model::Point3;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridDims {
    pub width: usize,
    pub depth: usize,
    pub height: usize,
    #[serde(default = "default_resolution")]
    pub resolution_m: f64,
}

fn default_resolution() -> f64 {
    1.0
}

impl GridDims {
    pub fn new(width: usize, depth: usize, height: usize, resolution_m: f64) -> Result<Self> {
        let dims = GridDims {
            width,
            depth,
            height,
            resolution_m,
        };
        dims.validate()?;
        Ok(dims)
    }

    /// Unit-resolution grid.
    pub fn cube(width: usize, depth: usize, height: usize) -> Result<Self> {
        Self::new(width, depth, height, 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.depth == 0 || self.height == 0 {
            return Err(Error::InvalidParams(format!(
                "grid dimensions must be >= 1, got {self}"
            )));
        }
        if !(self.resolution_m.is_finite() && self.resolution_m > 0.0) {
            return Err(Error::InvalidParams(format!(
                "resolution_m must be positive, got {}",
                self.resolution_m
            )));
        }
        Ok(())
    }

    pub fn voxel_count(&self) -> usize {
        self.width * self.depth * self.height
    }

    pub fn footprint(&self) -> usize {
        self.width * self.depth
    }

    /// Same W, D and H; resolution is ignored.
    pub fn same_shape(&self, other: &GridDims) -> bool {
        self.width == other.width && self.depth == other.depth && self.height == other.height
    }

    pub fn ensure_same_shape(&self, other: &GridDims) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::DimsMismatch {
                expected: *self,
                found: *other,
            })
        }
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (x * self.depth + y) * self.height + z
    }

    #[inline]
    pub fn voxel_at(&self, index: usize) -> Voxel {
        let z = index % self.height;
        let xy = index / self.height;
        Voxel {
            x: xy / self.depth,
            y: xy % self.depth,
            z,
        }
    }

    pub fn contains(&self, v: Voxel) -> bool {
        v.x < self.width && v.y < self.depth && v.z < self.height
    }

    pub fn check_voxel(&self, v: Voxel) -> Result<()> {
        if self.contains(v) {
            Ok(())
        } else {
            Err(Error::OutOfBounds(format!("voxel {v} outside grid {self}")))
        }
    }

    pub fn center(&self, v: Voxel) -> Point3 {
        let r = self.resolution_m;
        Point3::new(
            (v.x as f64 + 0.5) * r,
            (v.y as f64 + 0.5) * r,
            (v.z as f64 + 0.5) * r,
        )
    }

    /// Voxel containing a metric position.
    pub fn locate(&self, p: &Point3) -> Result<Voxel> {
        let r = self.resolution_m;
        let to_idx = |c: f64, len: usize| -> Option<usize> {
            let f = (c / r).floor();
            (f.is_finite() && f >= 0.0 && (f as usize) < len).then_some(f as usize)
        };
        match (
            to_idx(p.x, self.width),
            to_idx(p.y, self.depth),
            to_idx(p.z, self.height),
        ) {
            (Some(x), Some(y), Some(z)) => Ok(Voxel { x, y, z }),
            _ => Err(Error::OutOfBounds(format!(
                "position ({}, {}, {}) m outside grid {self}",
                p.x, p.y, p.z
            ))),
        }
    }
}

impl fmt::Display for GridDims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.width, self.depth, self.height)
    }
}

/// Parses `WxDxH` at unit resolution.
impl FromStr for GridDims {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(['x', 'X']).collect();
        if parts.len() != 3 {
            return Err(Error::InvalidParams(format!(
                "expected dims as WxDxH, got {s:?}"
            )));
        }
        let mut vals = [0usize; 3];
        for (slot, part) in vals.iter_mut().zip(&parts) {
            *slot = part
                .trim()
                .parse()
                .map_err(|_| Error::InvalidParams(format!("bad dimension {part:?} in {s:?}")))?;
        }
        GridDims::cube(vals[0], vals[1], vals[2])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Voxel {
    pub x: usize,
    pub y: usize,
    pub z: usize,
}

impl Voxel {
    pub const fn new(x: usize, y: usize, z: usize) -> Self {
        Voxel { x, y, z }
    }
}

impl fmt::Display for Voxel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.x, self.y, self.z)
    }
}

/// Dense x-major volume.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume<T> {
    dims: GridDims,
    data: Vec<T>,
}

impl<T: Copy> Volume<T> {
    pub fn filled(dims: GridDims, value: T) -> Self {
        Volume {
            dims,
            data: vec![value; dims.voxel_count()],
        }
    }

    pub fn from_vec(dims: GridDims, data: Vec<T>) -> Result<Self> {
        if data.len() != dims.voxel_count() {
            return Err(Error::ShapeMismatch(format!(
                "volume {dims} needs {} values, got {}",
                dims.voxel_count(),
                data.len()
            )));
        }
        Ok(Volume { dims, data })
    }

    pub fn from_fn(dims: GridDims, mut f: impl FnMut(Voxel) -> T) -> Self {
        let data = (0..dims.voxel_count()).map(|i| f(dims.voxel_at(i))).collect();
        Volume { dims, data }
    }

    pub fn dims(&self) -> &GridDims {
        &self.dims
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, v: Voxel) -> T {
        self.data[self.dims.index(v.x, v.y, v.z)]
    }

    #[inline]
    pub fn set(&mut self, v: Voxel, value: T) {
        let i = self.dims.index(v.x, v.y, v.z);
        self.data[i] = value;
    }

    /// The contiguous z-column at `(x, y)`.
    #[inline]
    pub fn column(&self, x: usize, y: usize) -> &[T] {
        let start = self.dims.index(x, y, 0);
        &self.data[start..start + self.dims.height]
    }
}

/// Dense 2D array over the (x, y) footprint, linearized `x * D + y`.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane<T> {
    width: usize,
    depth: usize,
    data: Vec<T>,
}

impl<T: Copy> Plane<T> {
    pub fn filled(width: usize, depth: usize, value: T) -> Self {
        Plane {
            width,
            depth,
            data: vec![value; width * depth],
        }
    }

    pub fn from_vec(width: usize, depth: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * depth {
            return Err(Error::ShapeMismatch(format!(
                "plane {width}x{depth} needs {} values, got {}",
                width * depth,
                data.len()
            )));
        }
        Ok(Plane { width, depth, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x < self.width && y < self.depth
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[x * self.depth + y]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: T) {
        self.data[x * self.depth + y] = value;
    }
}
