//! Synthetic radio maps: single-transmitter evaluation of the target model,
//! linear-power composition of several transmitters, and the dataset-wide
//! normalization into grayscale volumes.

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel_model::{distances, TargetCoefficients};
use crate::env::OccupancyGrid;
use crate::error::{Error, Result};
use crate::format::{self, ChannelKind, R3dmFile};
use crate::grid::{GridDims, Volume, Voxel};
use crate::propagate2d::BaseMap3D;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transmitter {
    pub voxel: Voxel,
    pub power_db: f64,
}

impl Transmitter {
    pub const fn new(voxel: Voxel, power_db: f64) -> Self {
        Transmitter { voxel, power_db }
    }

    /// Parses `x,y,z,P` with voxel indices and power in dB.
    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        let bad = || Error::InvalidParams(format!("expected x,y,z,P for a transmitter, got {s:?}"));
        if parts.len() != 4 {
            return Err(bad());
        }
        let idx = |p: &str| p.parse::<usize>().map_err(|_| bad());
        let power_db = parts[3].parse::<f64>().map_err(|_| bad())?;
        if !power_db.is_finite() {
            return Err(bad());
        }
        Ok(Transmitter::new(
            Voxel::new(idx(parts[0])?, idx(parts[1])?, idx(parts[2])?),
            power_db,
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainTag {
    Db,
    Normalized,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RadioMap3D {
    volume: Volume<f32>,
    domain: DomainTag,
}

impl RadioMap3D {
    pub fn from_vec(dims: GridDims, data: Vec<f32>, domain: DomainTag) -> Result<Self> {
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue { index });
        }
        if domain == DomainTag::Normalized {
            if let Some(index) = data.iter().position(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::InvariantViolation(format!(
                    "normalized value {} at index {index} outside [0, 1]",
                    data[index]
                )));
            }
        }
        Ok(RadioMap3D {
            volume: Volume::from_vec(dims, data)?,
            domain,
        })
    }

    pub fn filled(dims: GridDims, value: f32, domain: DomainTag) -> Result<Self> {
        Self::from_vec(dims, vec![value; dims.voxel_count()], domain)
    }

    pub fn dims(&self) -> &GridDims {
        self.volume.dims()
    }

    pub fn domain(&self) -> DomainTag {
        self.domain
    }

    pub fn as_slice(&self) -> &[f32] {
        self.volume.as_slice()
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.volume.into_vec()
    }

    pub fn get(&self, v: Voxel) -> f32 {
        self.volume.get(v)
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.as_slice()
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Writes a single label channel.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<u32> {
        R3dmFile::single(*self.dims(), ChannelKind::Label, self.as_slice().to_vec())?.write(path)
    }

    /// Reads a single label or sparse channel.
    pub fn read(path: impl AsRef<Path>, domain: DomainTag) -> Result<Self> {
        let (dims, data) =
            format::read_single(path, &[ChannelKind::Label, ChannelKind::Sparse], None)?;
        Self::from_vec(dims, data, domain)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ComposeConfig {
    pub noise_floor_db: Option<f64>,
    pub clamp_min_db: f64,
    pub clamp_max_db: f64,
}

impl Default for ComposeConfig {
    fn default() -> Self {
        ComposeConfig {
            noise_floor_db: None,
            clamp_min_db: -150.0,
            clamp_max_db: 10.0,
        }
    }
}

impl ComposeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clamp_min_db.is_finite() && self.clamp_max_db.is_finite()) {
            return Err(Error::InvalidParams("clamp bounds must be finite".into()));
        }
        if !(self.clamp_min_db < self.clamp_max_db) {
            return Err(Error::InvalidParams(format!(
                "clamp_min_db {} must be below clamp_max_db {}",
                self.clamp_min_db, self.clamp_max_db
            )));
        }
        if let Some(n) = self.noise_floor_db {
            if !n.is_finite() {
                return Err(Error::InvalidParams("noise_floor_db must be finite".into()));
            }
        }
        Ok(())
    }
}

/// Single-transmitter map: `P` at the transmitter voxel, `null_db` on the rest
/// of its vertical column, the target model everywhere else.
pub fn synth_single(
    env: &OccupancyGrid,
    tx: &Transmitter,
    phi: &TargetCoefficients,
    base: &BaseMap3D,
    null_db: f64,
) -> Result<RadioMap3D> {
    synth_single_counted(env, tx, phi, base, null_db).map(|(m, _)| m)
}

/// [`synth_single`] that also reports how many voxels were evaluated.
pub fn synth_single_counted(
    env: &OccupancyGrid,
    tx: &Transmitter,
    phi: &TargetCoefficients,
    base: &BaseMap3D,
    null_db: f64,
) -> Result<(RadioMap3D, u64)> {
    let dims = *env.dims();
    dims.ensure_same_shape(base.dims())?;
    dims.check_voxel(tx.voxel)?;
    phi.validate()?;
    let q = dims.center(tx.voxel);
    let (h, d) = (dims.height, dims.depth);
    let evals = AtomicU64::new(0);
    let mut data = vec![0.0f32; dims.voxel_count()];
    data.par_chunks_mut(d * h).enumerate().for_each(|(x, plane)| {
        let mut n = 0u64;
        for (y, column) in plane.chunks_exact_mut(h).enumerate() {
            let base_col = base_column(base, &dims, x, y);
            for (z, out) in column.iter_mut().enumerate() {
                n += 1;
                let v = Voxel::new(x, y, z);
                *out = if v == tx.voxel {
                    tx.power_db
                } else {
                    let (d2, d3) = distances(&dims.center(v), &q);
                    if d2 > 0.0 {
                        phi.evaluate(d2, d3, f64::from(base_col[z]))
                    } else {
                        null_db
                    }
                } as f32;
            }
        }
        evals.fetch_add(n, Ordering::Relaxed);
    });
    let map = RadioMap3D::from_vec(dims, data, DomainTag::Db)?;
    Ok((map, evals.into_inner()))
}

fn base_column<'a>(base: &'a BaseMap3D, dims: &GridDims, x: usize, y: usize) -> &'a [f32] {
    let start = dims.index(x, y, 0);
    &base.as_slice()[start..start + dims.height]
}

/// Sets every occupied voxel to `value`.
pub fn mask_buildings(map: &mut RadioMap3D, env: &OccupancyGrid, value: f32) -> Result<()> {
    map.dims().ensure_same_shape(env.dims())?;
    for (out, &o) in map.volume.as_mut_slice().iter_mut().zip(env.as_slice()) {
        if o != 0 {
            *out = value;
        }
    }
    Ok(())
}

/// Linear-power superposition `10 log10(sum 10^(m/10) + noise)`, clamped.
/// Inputs are summed in list order.
pub fn compose_multi(maps: &[RadioMap3D], cfg: &ComposeConfig) -> Result<RadioMap3D> {
    cfg.validate()?;
    let first = maps
        .first()
        .ok_or_else(|| Error::EmptyInput("compose needs at least one map".into()))?;
    let dims = *first.dims();
    for m in maps {
        dims.ensure_same_shape(m.dims())?;
        if m.domain != DomainTag::Db {
            return Err(Error::DomainMismatch("compose expects dB maps".into()));
        }
    }
    let noise_lin = cfg.noise_floor_db.map_or(0.0, db_to_linear);
    let data = (0..dims.voxel_count())
        .into_par_iter()
        .map(|i| {
            let mut acc = 0.0f64;
            for m in maps {
                acc += db_to_linear(f64::from(m.as_slice()[i]));
            }
            let db = 10.0 * (acc + noise_lin).log10();
            // Total underflow of every term reads as the floor.
            let db = if db.is_nan() { cfg.clamp_min_db } else { db };
            db.clamp(cfg.clamp_min_db, cfg.clamp_max_db) as f32
        })
        .collect();
    RadioMap3D::from_vec(dims, data, DomainTag::Db)
}

#[inline]
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub const MAX_QUANT_LEVELS: u32 = 65536;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub vmin_db: f64,
    pub vmax_db: f64,
    #[serde(default)]
    pub quant_levels: u32,
}

impl NormStats {
    pub fn new(vmin_db: f64, vmax_db: f64, quant_levels: u32) -> Result<Self> {
        let s = NormStats {
            vmin_db,
            vmax_db,
            quant_levels,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.vmin_db.is_finite() && self.vmax_db.is_finite()) {
            return Err(Error::InvalidParams("normalization range must be finite".into()));
        }
        if self.vmin_db == self.vmax_db {
            return Err(Error::ConstantDataset { value: self.vmin_db });
        }
        if self.vmin_db > self.vmax_db {
            return Err(Error::InvalidParams(format!(
                "normalization range [{}, {}] is inverted",
                self.vmin_db, self.vmax_db
            )));
        }
        if self.quant_levels == 1 || self.quant_levels > MAX_QUANT_LEVELS {
            return Err(Error::InvalidParams(format!(
                "quant_levels must be 0 or in [2, {MAX_QUANT_LEVELS}], got {}",
                self.quant_levels
            )));
        }
        Ok(())
    }
}

/// Streaming global min/max over dB maps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StatsAccumulator {
    min: f64,
    max: f64,
    maps: usize,
}

impl Default for StatsAccumulator {
    fn default() -> Self {
        StatsAccumulator {
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
            maps: 0,
        }
    }
}

impl StatsAccumulator {
    pub fn push(&mut self, map: &RadioMap3D) {
        let (lo, hi) = map.min_max();
        self.min = self.min.min(f64::from(lo));
        self.max = self.max.max(f64::from(hi));
        self.maps += 1;
    }

    pub fn merge(self, other: StatsAccumulator) -> StatsAccumulator {
        StatsAccumulator {
            min: self.min.min(other.min),
            max: self.max.max(other.max),
            maps: self.maps + other.maps,
        }
    }

    pub fn finish(&self, quant_levels: u32) -> Result<NormStats> {
        if self.maps == 0 {
            return Err(Error::EmptyInput("no maps to compute statistics over".into()));
        }
        NormStats::new(self.min, self.max, quant_levels)
    }
}

pub fn compute_dataset_stats<'a>(
    maps: impl IntoIterator<Item = &'a RadioMap3D>,
    quant_levels: u32,
) -> Result<NormStats> {
    let mut acc = StatsAccumulator::default();
    for m in maps {
        acc.push(m);
    }
    acc.finish(quant_levels)
}

#[inline]
pub fn normalize_value(v: f64, stats: &NormStats) -> f64 {
    let t = ((v - stats.vmin_db) / (stats.vmax_db - stats.vmin_db)).clamp(0.0, 1.0);
    if stats.quant_levels >= 2 {
        let q = f64::from(stats.quant_levels - 1);
        (t * q).round() / q
    } else {
        t
    }
}

pub fn normalize_quantize(map: &RadioMap3D, stats: &NormStats) -> Result<RadioMap3D> {
    stats.validate()?;
    if map.domain != DomainTag::Db {
        return Err(Error::DomainMismatch("map is already normalized".into()));
    }
    let data = map
        .as_slice()
        .iter()
        .map(|&v| normalize_value(f64::from(v), stats) as f32)
        .collect();
    RadioMap3D::from_vec(*map.dims(), data, DomainTag::Normalized)
}

/// Inverse of the unquantized transform.
pub fn denormalize(map: &RadioMap3D, stats: &NormStats) -> Result<RadioMap3D> {
    stats.validate()?;
    if map.domain != DomainTag::Normalized {
        return Err(Error::DomainMismatch("map is not normalized".into()));
    }
    let span = stats.vmax_db - stats.vmin_db;
    let data = map
        .as_slice()
        .iter()
        .map(|&v| (stats.vmin_db + f64::from(v) * span) as f32)
        .collect();
    RadioMap3D::from_vec(*map.dims(), data, DomainTag::Db)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel_model::eval_target;
    use crate::env::{generate_city, CityGenParams};
    use crate::propagate2d::{predict_volume, Base2DParams};
    use proptest::prelude::*;

    fn scene() -> (OccupancyGrid, Transmitter, BaseMap3D) {
        let dims = GridDims::cube(24, 20, 8).unwrap();
        let env = generate_city(dims, &CityGenParams::default_for(&dims), 11).unwrap();
        let tx = Transmitter::new(Voxel::new(2, 3, 4), 5.0);
        let base = predict_volume(&env, (2, 3), tx.power_db, &Base2DParams::default()).unwrap();
        (env, tx, base)
    }

    fn db_map(dims: GridDims, data: Vec<f32>) -> RadioMap3D {
        RadioMap3D::from_vec(dims, data, DomainTag::Db).unwrap()
    }

    #[test]
    fn synth_cases() {
        let (env, tx, base) = scene();
        let phi = TargetCoefficients::new(-3.0, -12.0, 6.0, 0.9);
        let (map, evals) = synth_single_counted(&env, &tx, &phi, &base, -150.0).unwrap();
        let dims = *env.dims();
        assert_eq!(evals, dims.voxel_count() as u64);
        assert_eq!(map.get(tx.voxel), 5.0);
        for z in [0, 1, 3, 7] {
            assert_eq!(map.get(Voxel::new(2, 3, z)), -150.0);
        }
        let q = dims.center(tx.voxel);
        for i in (0..dims.voxel_count()).step_by(7) {
            let v = dims.voxel_at(i);
            if (v.x, v.y) == (2, 3) {
                continue;
            }
            let want = eval_target(&dims.center(v), &q, &phi, &base).unwrap() as f32;
            assert_eq!(map.get(v), want, "{v}");
        }
    }

    #[test]
    fn synth_at_ten_meters() {
        let dims = GridDims::cube(16, 16, 4).unwrap();
        let env = OccupancyGrid::empty(dims);
        let base = BaseMap3D::constant(dims, -80.0);
        let tx = Transmitter::new(Voxel::new(0, 0, 0), 0.0);
        let phi = TargetCoefficients::new(-40.0, -20.0, 0.0, 0.0);
        let map = synth_single(&env, &tx, &phi, &base, -150.0).unwrap();
        // (6, 8, 0) is 10 m away.
        assert!((map.get(Voxel::new(6, 8, 0)) - -60.0).abs() < 1e-5);
    }

    #[test]
    fn synth_rejects_mismatch() {
        let (env, tx, _) = scene();
        let other = BaseMap3D::constant(GridDims::cube(4, 4, 4).unwrap(), 0.0);
        let phi = TargetCoefficients::new(0.0, 0.0, 0.0, 0.0);
        assert!(matches!(
            synth_single(&env, &tx, &phi, &other, -150.0),
            Err(Error::DimsMismatch { .. })
        ));
    }

    #[test]
    fn compose_examples() {
        let dims = GridDims::cube(3, 3, 3).unwrap();
        let cfg = ComposeConfig::default();
        let a = db_map(dims, vec![-60.0; 27]);
        let two = compose_multi(&[a.clone(), a.clone()], &cfg).unwrap();
        let oracle = 10.0 * 2e-6f64.log10();
        assert!(two.as_slice().iter().all(|&v| (f64::from(v) - oracle).abs() < 1e-4));

        let noisy = ComposeConfig {
            noise_floor_db: Some(-60.0),
            ..cfg
        };
        let one = compose_multi(std::slice::from_ref(&a), &noisy).unwrap();
        assert!(one.as_slice().iter().all(|&v| (f64::from(v) - oracle).abs() < 1e-4));

        let single = compose_multi(std::slice::from_ref(&a), &cfg).unwrap();
        assert!(single.as_slice().iter().all(|&v| (v - -60.0).abs() < 1e-4));

        let hot = db_map(dims, vec![30.0; 27]);
        let cold = db_map(dims, vec![-400.0; 27]);
        assert!(compose_multi(&[hot], &cfg).unwrap().as_slice().iter().all(|&v| v == 10.0));
        assert!(compose_multi(&[cold], &cfg).unwrap().as_slice().iter().all(|&v| v == -150.0));

        assert!(matches!(compose_multi(&[], &cfg), Err(Error::EmptyInput(_))));
        let small = db_map(GridDims::cube(2, 2, 2).unwrap(), vec![0.0; 8]);
        assert!(matches!(
            compose_multi(&[a, small], &cfg),
            Err(Error::DimsMismatch { .. })
        ));
    }

    #[test]
    fn stats_examples() {
        let dims = GridDims::cube(2, 2, 2).unwrap();
        let flat = db_map(dims, vec![-50.0; 8]);
        assert!(matches!(
            compute_dataset_stats([&flat], 0),
            Err(Error::ConstantDataset { .. })
        ));
        let mut v = vec![-70.0; 8];
        v[0] = -120.0;
        let m1 = db_map(dims, v);
        let mut v = vec![-70.0; 8];
        v[5] = -20.0;
        let m2 = db_map(dims, v);
        let s = compute_dataset_stats([&m1, &m2], 0).unwrap();
        assert_eq!((s.vmin_db, s.vmax_db), (-120.0, -20.0));

        let mut a = StatsAccumulator::default();
        a.push(&m1);
        let mut b = StatsAccumulator::default();
        b.push(&m2);
        assert_eq!(a.merge(b).finish(0).unwrap(), s);
        assert!(matches!(
            compute_dataset_stats(std::iter::empty(), 0),
            Err(Error::EmptyInput(_))
        ));
        assert!(NormStats::new(0.0, 1.0, 1).is_err());
        assert!(NormStats::new(0.0, 1.0, 65537).is_err());
    }

    #[test]
    fn normalize_examples() {
        let dims = GridDims::cube(1, 1, 4).unwrap();
        let stats = NormStats::new(-100.0, 0.0, 0).unwrap();
        let m = db_map(dims, vec![-100.0, 0.0, -50.0, 20.0]);
        let n = normalize_quantize(&m, &stats).unwrap();
        assert_eq!(n.as_slice(), &[0.0, 1.0, 0.5, 1.0]);
        assert_eq!(n.domain(), DomainTag::Normalized);

        let q = NormStats::new(-100.0, 0.0, 256).unwrap();
        let m = db_map(dims, vec![-70.0; 4]);
        let n = normalize_quantize(&m, &q).unwrap();
        assert!((f64::from(n.as_slice()[0]) - 77.0 / 255.0).abs() < 1e-7);
        assert!(matches!(
            normalize_quantize(&n, &q),
            Err(Error::DomainMismatch(_))
        ));
    }

    fn map_pair() -> impl Strategy<Value = (Vec<f32>, Vec<f32>)> {
        (
            prop::collection::vec(-140.0f32..0.0, 27),
            prop::collection::vec(-140.0f32..0.0, 27),
        )
    }

    proptest! {
        #[test]
        fn compose_dominates_inputs((a, b) in map_pair()) {
            let dims = GridDims::cube(3, 3, 3).unwrap();
            let out = compose_multi(&[db_map(dims, a.clone()), db_map(dims, b.clone())], &ComposeConfig::default()).unwrap();
            for i in 0..27 {
                prop_assert!(out.as_slice()[i] >= a[i].max(b[i]));
            }
        }

        #[test]
        fn compose_permutation_invariant((a, b) in map_pair()) {
            let dims = GridDims::cube(3, 3, 3).unwrap();
            let (ma, mb) = (db_map(dims, a), db_map(dims, b));
            let cfg = ComposeConfig::default();
            let ab = compose_multi(&[ma.clone(), mb.clone()], &cfg).unwrap();
            let ba = compose_multi(&[mb, ma], &cfg).unwrap();
            prop_assert_eq!(ab, ba);
        }

        #[test]
        fn normalize_monotone(v1 in -200.0f64..50.0, v2 in -200.0f64..50.0, q in prop::sample::select(vec![0u32, 2, 16, 256])) {
            let s = NormStats::new(-150.0, 10.0, q).unwrap();
            let (lo, hi) = if v1 <= v2 { (v1, v2) } else { (v2, v1) };
            prop_assert!(normalize_value(lo, &s) <= normalize_value(hi, &s));
        }

        #[test]
        fn normalize_round_trip(data in prop::collection::vec(-150.0f32..10.0, 8)) {
            let dims = GridDims::cube(2, 2, 2).unwrap();
            let s = NormStats::new(-150.0, 10.0, 0).unwrap();
            let m = db_map(dims, data.clone());
            let back = denormalize(&normalize_quantize(&m, &s).unwrap(), &s).unwrap();
            for (x, y) in data.iter().zip(back.as_slice()) {
                prop_assert!(f64::from((x - y).abs()) < 1e-6 * 160.0);
            }
        }
    }
}
