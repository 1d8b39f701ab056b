//! Voxelized building environments.
//!
//! The procedural generator lays out a Manhattan grid: along each horizontal
//! axis the pattern repeats every `block_pitch_vox` voxels, the first
//! `street_width_vox` of which are street. A column `(x, y)` is street when
//! `x % pitch < street` or `y % pitch < street`; every other column belongs
//! to exactly one block. Each block independently holds a building with
//! probability `fill_probability`, occupying its whole footprint from `z = 0`
//! up to a height drawn uniformly from `building_height_range_vox`.

use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::{self, ChannelKind, R3dmFile};
use crate::grid::{GridDims, Plane, Volume, Voxel};
use crate::seed;

/// A 2D occupancy slice, 1 = occupied.
pub type Occupancy2D = Plane<u8>;

#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    voxels: Volume<u8>,
}

impl OccupancyGrid {
    pub fn empty(dims: GridDims) -> Self {
        OccupancyGrid {
            voxels: Volume::filled(dims, 0),
        }
    }

    pub fn from_vec(dims: GridDims, data: Vec<u8>) -> Result<Self> {
        if let Some((index, &v)) = data.iter().enumerate().find(|(_, &v)| v > 1) {
            return Err(Error::NonBinaryValue {
                index,
                value: f32::from(v),
            });
        }
        Ok(OccupancyGrid {
            voxels: Volume::from_vec(dims, data)?,
        })
    }

    /// Validates float occupancy values, as stored in R3DM env channels.
    pub fn from_f32(dims: GridDims, data: &[f32]) -> Result<Self> {
        let mut out = Vec::with_capacity(data.len());
        for (index, &v) in data.iter().enumerate() {
            if v == 0.0 {
                out.push(0);
            } else if v == 1.0 {
                out.push(1);
            } else {
                return Err(Error::NonBinaryValue { index, value: v });
            }
        }
        Self::from_vec(dims, out)
    }

    pub fn dims(&self) -> &GridDims {
        self.voxels.dims()
    }

    pub fn as_slice(&self) -> &[u8] {
        self.voxels.as_slice()
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.as_slice().iter().map(|&v| f32::from(v)).collect()
    }

    #[inline]
    pub fn is_occupied(&self, v: Voxel) -> bool {
        self.voxels.get(v) != 0
    }

    pub fn set(&mut self, v: Voxel, occupied: bool) {
        self.voxels.set(v, u8::from(occupied));
    }

    #[inline]
    pub fn column(&self, x: usize, y: usize) -> &[u8] {
        self.voxels.column(x, y)
    }

    pub fn occupied_count(&self) -> usize {
        self.as_slice().iter().filter(|&&v| v != 0).count()
    }

    pub fn free_voxels(&self) -> impl Iterator<Item = usize> + '_ {
        self.as_slice()
            .iter()
            .enumerate()
            .filter(|(_, &v)| v == 0)
            .map(|(i, _)| i)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<u32> {
        R3dmFile::single(*self.dims(), ChannelKind::Env, self.to_f32())?.write(path)
    }

    /// Stacks H slices back into a grid.
    pub fn from_slices(dims: GridDims, slices: &[Occupancy2D]) -> Result<Self> {
        if slices.len() != dims.height {
            return Err(Error::ShapeMismatch(format!(
                "expected {} slices, got {}",
                dims.height,
                slices.len()
            )));
        }
        let mut grid = OccupancyGrid::empty(dims);
        for (z, s) in slices.iter().enumerate() {
            if s.width() != dims.width || s.depth() != dims.depth {
                return Err(Error::ShapeMismatch(format!(
                    "slice {z} is {}x{}, expected {}x{}",
                    s.width(),
                    s.depth(),
                    dims.width,
                    dims.depth
                )));
            }
            for x in 0..dims.width {
                for y in 0..dims.depth {
                    grid.set(Voxel::new(x, y, z), s.get(x, y) != 0);
                }
            }
        }
        Ok(grid)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CityGenParams {
    pub block_pitch_vox: usize,
    pub street_width_vox: usize,
    /// Inclusive `[min, max]` building height in voxels.
    pub building_height_range_vox: [usize; 2],
    pub fill_probability: f64,
}

impl CityGenParams {
    /// Desk-scale defaults: 16-voxel blocks, 5-voxel streets, heights from a
    /// quarter of the grid height up to the full height.
    pub fn default_for(dims: &GridDims) -> Self {
        let h = dims.height;
        CityGenParams {
            block_pitch_vox: 16,
            street_width_vox: 5,
            building_height_range_vox: [h.div_ceil(4).max(1).min(h), h],
            fill_probability: 0.7,
        }
    }

    pub fn validate(&self, dims: &GridDims) -> Result<()> {
        let [lo, hi] = self.building_height_range_vox;
        let problem = if self.block_pitch_vox == 0 {
            Some("block_pitch_vox must be >= 1".to_string())
        } else if self.street_width_vox >= self.block_pitch_vox {
            Some(format!(
                "street_width_vox ({}) must be smaller than block_pitch_vox ({})",
                self.street_width_vox, self.block_pitch_vox
            ))
        } else if lo > hi || hi > dims.height {
            Some(format!(
                "building height range [{lo}, {hi}] must satisfy min <= max <= H = {}",
                dims.height
            ))
        } else if !(0.0..=1.0).contains(&self.fill_probability) {
            Some(format!(
                "fill_probability must lie in [0, 1], got {}",
                self.fill_probability
            ))
        } else {
            None
        };
        match problem {
            Some(msg) => Err(Error::InvalidParams(msg)),
            None => Ok(()),
        }
    }

    #[inline]
    pub fn is_street(&self, x: usize, y: usize) -> bool {
        x % self.block_pitch_vox < self.street_width_vox
            || y % self.block_pitch_vox < self.street_width_vox
    }
}

/// Generates a deterministic Manhattan-grid city.
pub fn generate_city(dims: GridDims, params: &CityGenParams, seed: u64) -> Result<OccupancyGrid> {
    dims.validate()?;
    params.validate(&dims)?;
    let pitch = params.block_pitch_vox;
    let blocks_x = dims.width.div_ceil(pitch);
    let blocks_y = dims.depth.div_ceil(pitch);
    let [lo, hi] = params.building_height_range_vox;

    let mut rng = seed::child_rng(seed, "city", 0);
    let mut heights = vec![0usize; blocks_x * blocks_y];
    for h in heights.iter_mut() {
        // Both draws are always consumed so the stream layout does not depend
        // on fill_probability.
        let filled = rng.random::<f64>() < params.fill_probability;
        let height = rng.random_range(lo..=hi);
        *h = if filled { height } else { 0 };
    }

    let mut grid = OccupancyGrid::empty(dims);
    for x in 0..dims.width {
        for y in 0..dims.depth {
            if params.is_street(x, y) {
                continue;
            }
            let h = heights[(x / pitch) * blocks_y + y / pitch];
            for z in 0..h.min(dims.height) {
                grid.set(Voxel::new(x, y, z), true);
            }
        }
    }
    Ok(grid)
}

/// Reads a single-channel env file and checks its dims and values.
pub fn load_occupancy(path: impl AsRef<Path>, dims: &GridDims) -> Result<OccupancyGrid> {
    let (file_dims, data) = format::read_single(path, &[ChannelKind::Env], Some(dims))?;
    OccupancyGrid::from_f32(file_dims, &data)
}

pub fn slice_at_height(grid: &OccupancyGrid, z: usize) -> Result<Occupancy2D> {
    let dims = grid.dims();
    if z >= dims.height {
        return Err(Error::IndexOutOfRange {
            index: z,
            len: dims.height,
        });
    }
    let mut out = Plane::filled(dims.width, dims.depth, 0u8);
    for x in 0..dims.width {
        for y in 0..dims.depth {
            out.set(x, y, grid.column(x, y)[z]);
        }
    }
    Ok(out)
}
