//! Dataset samples on disk, the build configuration and manifest, the
//! deterministic end-to-end builder, and environment-level splits.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::{index, SliceRandom};
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel_model::TargetCoefficients;
use crate::env::{generate_city, CityGenParams, OccupancyGrid};
use crate::error::{Error, Result};
use crate::fitting::{aggregate, oversample, CoefficientBounds, CoefficientSpace, FitReport};
use crate::format::{Channel, ChannelKind, R3dmFile, VERSION};
use crate::grid::{GridDims, Voxel};
use crate::propagate2d::{import_slices, predict_volume, Base2DParams, BaseMap3D};
use crate::sampling::{assemble_features, encode_heatmap, sample_sparse, ConfigTag, FeatureTensor, HeatmapConfig, SamplerConfig};
use crate::seed;
use crate::synthesis::{
    compose_multi, mask_buildings, normalize_quantize, synth_single, ComposeConfig, DomainTag, NormStats,
    RadioMap3D, StatsAccumulator, Transmitter,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMetadata {
    pub env_id: usize,
    pub txs: Vec<Transmitter>,
    pub phi: Vec<TargetCoefficients>,
    pub xi: f64,
    pub seed: u64,
}

/// Input channels plus the normalized label.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSample {
    pub features: FeatureTensor,
    pub label: RadioMap3D,
    pub metadata: Option<SampleMetadata>,
}

fn check_unit_range(kind: ChannelKind, data: &[f32]) -> Result<()> {
    if let Some(i) = data.iter().position(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::InvariantViolation(format!(
            "channel {kind:?} value {} at index {i} outside [0, 1]",
            data[i]
        )));
    }
    Ok(())
}

fn check_channel(kind: ChannelKind, data: &[f32]) -> Result<()> {
    match kind {
        ChannelKind::Env => {
            if let Some(i) = data.iter().position(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::InvariantViolation(format!(
                    "occupancy value {} at index {i} is not binary",
                    data[i]
                )));
            }
            Ok(())
        }
        ChannelKind::Base2d => Err(Error::InvariantViolation(
            "base prediction channels do not belong in a dataset sample".into(),
        )),
        other => check_unit_range(other, data),
    }
}

impl DatasetSample {
    pub fn validate(&self) -> Result<()> {
        let dims = self.features.dims;
        dims.ensure_same_shape(self.label.dims())?;
        if self.label.domain() != DomainTag::Normalized {
            return Err(Error::InvariantViolation("label must be normalized".into()));
        }
        let mut seen = BTreeSet::new();
        for c in &self.features.channels {
            if c.data.len() != dims.voxel_count() {
                return Err(Error::InvariantViolation(format!("channel {:?} has the wrong size", c.kind)));
            }
            if c.kind == ChannelKind::Label || !seen.insert(c.kind) {
                return Err(Error::InvariantViolation(format!("unexpected feature channel {:?}", c.kind)));
            }
            check_channel(c.kind, &c.data)?;
        }
        if !seen.contains(&ChannelKind::Env) {
            return Err(Error::InvariantViolation("sample has no environment channel".into()));
        }
        Ok(())
    }

    /// The sample with features restricted to one configuration.
    pub fn view(&self, tag: ConfigTag) -> Result<DatasetSample> {
        Ok(DatasetSample {
            features: self.features.view(tag)?,
            label: self.label.clone(),
            metadata: self.metadata.clone(),
        })
    }
}

/// Writes features followed by the label; returns the file CRC.
pub fn write_sample(sample: &DatasetSample, path: impl AsRef<Path>) -> Result<u32> {
    sample.validate()?;
    let dims = sample.features.dims;
    let mut file = R3dmFile::new(dims);
    for c in &sample.features.channels {
        file.push(c.kind, c.data.clone())?;
    }
    file.push(ChannelKind::Label, sample.label.as_slice().to_vec())?;
    file.write(path)
}

pub fn read_sample(path: impl AsRef<Path>) -> Result<DatasetSample> {
    let file = R3dmFile::read(path)?;
    sample_from_file(file)
}

pub fn sample_from_file(file: R3dmFile) -> Result<DatasetSample> {
    let dims = file.dims;
    let mut label = None;
    let mut heatmaps = Vec::new();
    let mut sparse = None;
    let mut env = None;
    let mut seen = BTreeSet::new();
    for Channel { kind, data } in file.channels {
        if !seen.insert(kind) {
            return Err(Error::InvariantViolation(format!("duplicate channel {kind:?}")));
        }
        check_channel(kind, &data)?;
        match kind {
            ChannelKind::Label => label = Some(data),
            ChannelKind::Env => env = Some(data),
            ChannelKind::Sparse => sparse = Some(data),
            ChannelKind::Heatmap(i) => heatmaps.push((i, data)),
            ChannelKind::Base2d => unreachable!("rejected by check_channel"),
        }
    }
    let label = label.ok_or_else(|| Error::InvariantViolation("sample has no label channel".into()))?;
    let env = env.ok_or_else(|| Error::InvariantViolation("sample has no environment channel".into()))?;
    heatmaps.sort_by_key(|(i, _)| *i);
    let config_tag = match (heatmaps.is_empty(), sparse.is_some()) {
        (false, true) => ConfigTag::SparseAndTransmitter,
        (true, true) => ConfigTag::SparseOnly,
        (false, false) => ConfigTag::TransmitterOnly,
        (true, false) => {
            return Err(Error::InvariantViolation("sample has neither sparse nor heatmap channels".into()))
        }
    };
    let mut channels: Vec<Channel> = heatmaps
        .into_iter()
        .map(|(i, data)| Channel {
            kind: ChannelKind::Heatmap(i),
            data,
        })
        .collect();
    if let Some(data) = sparse {
        channels.push(Channel {
            kind: ChannelKind::Sparse,
            data,
        });
    }
    channels.push(Channel {
        kind: ChannelKind::Env,
        data: env,
    });
    Ok(DatasetSample {
        features: FeatureTensor {
            config_tag,
            dims,
            channels,
        },
        label: RadioMap3D::from_vec(dims, label, DomainTag::Normalized)?,
        metadata: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Base2dSource {
    Params(Base2DParams),
    /// Directory of `e{env}_s{set}_t{tx}.r3dm` base maps.
    ImportDir(PathBuf),
}

impl Default for Base2dSource {
    fn default() -> Self {
        Base2dSource::Params(Base2DParams::default())
    }
}

pub fn base_map_file_name(env: usize, set: usize, tx: usize) -> String {
    format!("e{env}_s{set}_t{tx}.r3dm")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoefficientSource {
    Bounds(CoefficientBounds),
    Fits(Vec<TargetCoefficients>),
    /// Fit reports written by `r3d fit`.
    PhiFiles(Vec<PathBuf>),
}

impl Default for CoefficientSource {
    fn default() -> Self {
        CoefficientSource::Bounds(CoefficientBounds {
            a: [-5.0, 5.0],
            b: [-15.0, -5.0],
            c: [2.0, 8.0],
            e: [0.6, 1.0],
        })
    }
}

impl CoefficientSource {
    pub fn space(&self) -> Result<CoefficientSpace> {
        match self {
            CoefficientSource::Bounds(b) => CoefficientSpace::from_bounds(*b),
            CoefficientSource::Fits(f) => aggregate(f),
            CoefficientSource::PhiFiles(paths) => {
                let fits = paths
                    .iter()
                    .map(|p| {
                        let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                        Ok(serde_json::from_str::<FitReport>(&text)?.phi)
                    })
                    .collect::<Result<Vec<_>>>()?;
                aggregate(&fits)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormPolicy {
    /// Two-pass min/max over every label of the build.
    Global,
    Pinned { vmin_db: f64, vmax_db: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SplitBy {
    #[default]
    Env,
    Sample,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub fractions: [f64; 3],
    pub by: SplitBy,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            fractions: [0.6, 0.2, 0.2],
            by: SplitBy::Env,
        }
    }
}

fn default_txs_per_set() -> usize {
    2
}
fn default_xi_range() -> [f64; 2] {
    [0.01, 0.1]
}
fn default_power_range() -> [f64; 2] {
    [0.0, 10.0]
}
fn default_norm() -> NormPolicy {
    NormPolicy::Global
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildConfig {
    pub dims: GridDims,
    pub n_envs: usize,
    pub tx_sets_per_env: usize,
    pub n_target_models: usize,
    #[serde(default = "default_txs_per_set")]
    pub txs_per_set: usize,
    #[serde(default = "default_xi_range")]
    pub xi_range: [f64; 2],
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub city: Option<CityGenParams>,
    #[serde(default)]
    pub base2d: Base2dSource,
    #[serde(default)]
    pub coefficients: CoefficientSource,
    #[serde(default = "default_power_range")]
    pub tx_power_db_range: [f64; 2],
    #[serde(default = "default_norm")]
    pub norm: NormPolicy,
    #[serde(default)]
    pub quant_levels: u32,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub compose: ComposeConfig,
    #[serde(default)]
    pub heatmap: Option<HeatmapConfig>,
    #[serde(default = "default_true")]
    pub free_space_only: bool,
    #[serde(default)]
    pub per_tx_phi: bool,
    #[serde(default)]
    pub mask_buildings: bool,
}

impl BuildConfig {
    pub fn new(dims: GridDims, n_envs: usize, tx_sets_per_env: usize, n_target_models: usize, seed: u64) -> Self {
        BuildConfig {
            dims,
            n_envs,
            tx_sets_per_env,
            n_target_models,
            txs_per_set: default_txs_per_set(),
            xi_range: default_xi_range(),
            seed,
            city: None,
            base2d: Base2dSource::default(),
            coefficients: CoefficientSource::default(),
            tx_power_db_range: default_power_range(),
            norm: NormPolicy::Global,
            quant_levels: 0,
            split: SplitConfig::default(),
            compose: ComposeConfig::default(),
            heatmap: None,
            free_space_only: true,
            per_tx_phi: false,
            mask_buildings: false,
        }
    }

    /// Parses a JSON config; relative paths resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: BuildConfig = serde_json::from_str(&text)?;
        let dir = path.parent().unwrap_or_else(|| Path::new(""));
        match &mut cfg.base2d {
            Base2dSource::ImportDir(p) if p.is_relative() => *p = dir.join(&*p),
            _ => {}
        }
        if let CoefficientSource::PhiFiles(paths) = &mut cfg.coefficients {
            for p in paths.iter_mut().filter(|p| p.is_relative()) {
                *p = dir.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn sample_count(&self) -> usize {
        self.n_envs * self.tx_sets_per_env * self.n_target_models
    }

    pub fn city_params(&self) -> CityGenParams {
        self.city.unwrap_or_else(|| CityGenParams::default_for(&self.dims))
    }

    pub fn heatmap_config(&self) -> HeatmapConfig {
        self.heatmap.unwrap_or_else(|| HeatmapConfig::default_for(&self.dims))
    }

    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        for (name, v) in [
            ("n_envs", self.n_envs),
            ("tx_sets_per_env", self.tx_sets_per_env),
            ("n_target_models", self.n_target_models),
            ("txs_per_set", self.txs_per_set),
        ] {
            if v == 0 {
                return Err(Error::InvalidParams(format!("{name} must be >= 1")));
            }
        }
        if self.txs_per_set > crate::format::MAX_HEATMAPS {
            return Err(Error::InvalidParams(format!(
                "txs_per_set must be at most {}",
                crate::format::MAX_HEATMAPS
            )));
        }
        let [lo, hi] = self.xi_range;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(Error::InvalidParams(format!("xi_range [{lo}, {hi}] must lie in (0, 1]")));
        }
        let [plo, phi] = self.tx_power_db_range;
        if !(plo.is_finite() && phi.is_finite() && plo <= phi) {
            return Err(Error::InvalidParams(format!("tx_power_db_range [{plo}, {phi}] is invalid")));
        }
        self.city_params().validate(&self.dims)?;
        if let Base2dSource::Params(p) = &self.base2d {
            p.validate()?;
        }
        if let NormPolicy::Pinned { vmin_db, vmax_db } = self.norm {
            NormStats::new(vmin_db, vmax_db, self.quant_levels)?;
        } else if self.quant_levels == 1 || self.quant_levels > crate::synthesis::MAX_QUANT_LEVELS {
            return Err(Error::InvalidParams(format!("quant_levels {} is invalid", self.quant_levels)));
        }
        check_fractions(&self.split.fractions)?;
        self.compose.validate()?;
        self.heatmap_config().validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub file: String,
    pub env_id: usize,
    pub tx_set: usize,
    pub target_model: usize,
    pub phi: Vec<TargetCoefficients>,
    pub txs: Vec<Transmitter>,
    pub xi: f64,
    pub seed: u64,
    pub checksum: u32,
    pub split: Split,
}

impl SampleRecord {
    pub fn metadata(&self) -> SampleMetadata {
        SampleMetadata {
            env_id: self.env_id,
            txs: self.txs.clone(),
            phi: self.phi.clone(),
            xi: self.xi,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub fractions: [f64; 3],
    pub by: SplitBy,
    pub seed: u64,
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u16,
    pub complete: bool,
    pub dims: GridDims,
    pub resolution_m: f64,
    pub sample_count: usize,
    pub build_seed: u64,
    pub norm: Option<NormStats>,
    pub split: Option<SplitSummary>,
    pub records: Vec<SampleRecord>,
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SAMPLES_DIR: &str = "samples";

impl Manifest {
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let path = dir.as_ref().join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read(dir: impl AsRef<Path>) -> Result<Self> {
        let path = dir.as_ref().join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Loads one sample with its metadata, checking the recorded CRC.
    pub fn load_sample(&self, dir: impl AsRef<Path>, index: usize) -> Result<DatasetSample> {
        let rec = self.records.get(index).ok_or(Error::IndexOutOfRange {
            index,
            len: self.records.len(),
        })?;
        let path = dir.as_ref().join(&rec.file);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let file = R3dmFile::decode(&bytes)?;
        let stored = crate::format::crc32c(&bytes[..bytes.len() - crate::format::CRC_LEN]);
        if stored != rec.checksum {
            return Err(Error::ChecksumMismatch {
                stored: rec.checksum,
                computed: stored,
            });
        }
        let mut s = sample_from_file(file)?;
        s.metadata = Some(rec.metadata());
        Ok(s)
    }
}

fn check_fractions(f: &[f64; 3]) -> Result<()> {
    if f.iter().any(|v| !(*v >= 0.0 && *v <= 1.0)) {
        return Err(Error::BadFractions(format!("fractions {f:?} must lie in [0, 1]")));
    }
    let sum: f64 = f.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::BadFractions(format!("fractions {f:?} sum to {sum}, not 1")));
    }
    Ok(())
}

/// `(train, val, test)` unit counts: val and test floored, remainder to train.
pub fn split_counts(n: usize, fractions: &[f64; 3]) -> Result<[usize; 3]> {
    check_fractions(fractions)?;
    let floor = |f: f64| ((f * n as f64) + 1e-9).floor() as usize;
    let val = floor(fractions[1]);
    let test = floor(fractions[2]).min(n - val);
    Ok([n - val - test, val, test])
}

/// Shuffled assignment of environments (or samples) to train/val/test.
pub fn split_dataset(manifest: &Manifest, fractions: [f64; 3], by: SplitBy, seed: u64) -> Result<Manifest> {
    let unit_of = |r: &SampleRecord, i: usize| match by {
        SplitBy::Env => r.env_id,
        SplitBy::Sample => i,
    };
    let mut units: Vec<usize> = manifest
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| unit_of(r, i))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let [train, val, test] = split_counts(units.len(), &fractions)?;
    units.shuffle(&mut seed::child_rng(seed, "split", 0));
    let assign = |u: usize| {
        let pos = units.iter().position(|&v| v == u).expect("unit present");
        if pos < train {
            Split::Train
        } else if pos < train + val {
            Split::Val
        } else {
            Split::Test
        }
    };
    let mut out = manifest.clone();
    for (i, r) in out.records.iter_mut().enumerate() {
        r.split = assign(unit_of(r, i));
    }
    out.split = Some(SplitSummary {
        fractions,
        by,
        seed,
        train,
        val,
        test,
    });
    Ok(out)
}

/// Transmitter heights are drawn from `1..=H-2` (0-based) when `H >= 3`.
fn draw_tx_set(env: &OccupancyGrid, count: usize, power: [f64; 2], rng: &mut seed::Rng) -> Result<Vec<Transmitter>> {
    let dims = env.dims();
    let h = dims.height;
    let candidates: Vec<usize> = env
        .free_voxels()
        .filter(|&i| h < 3 || (1..=h - 2).contains(&(i % h)))
        .collect();
    if candidates.len() < count {
        return Err(Error::EmptyCandidates);
    }
    let mut picks = index::sample(rng, candidates.len(), count).into_vec();
    picks.sort_unstable();
    Ok(picks
        .into_iter()
        .map(|p| {
            let t: f64 = rng.random();
            Transmitter::new(dims.voxel_at(candidates[p]), power[0] + (power[1] - power[0]) * t)
        })
        .collect())
}

struct Plan {
    envs: Vec<OccupancyGrid>,
    tx_sets: Vec<Vec<Transmitter>>,
    bases: Vec<BaseMap3D>,
    phis: Vec<TargetCoefficients>,
}

impl Plan {
    fn new(cfg: &BuildConfig) -> Result<Plan> {
        let city = cfg.city_params();
        let envs = (0..cfg.n_envs)
            .into_par_iter()
            .map(|e| generate_city(cfg.dims, &city, seed::derive(cfg.seed, "env", e as u64)))
            .collect::<Result<Vec<_>>>()?;
        let sets = cfg.tx_sets_per_env;
        let tx_sets = (0..cfg.n_envs * sets)
            .map(|k| {
                let mut rng = seed::child_rng(cfg.seed, "txset", k as u64);
                draw_tx_set(&envs[k / sets], cfg.txs_per_set, cfg.tx_power_db_range, &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;
        let t = cfg.txs_per_set;
        let bases = (0..cfg.n_envs * sets * t)
            .into_par_iter()
            .map(|j| {
                let (k, i) = (j / t, j % t);
                let tx = &tx_sets[k][i];
                match &cfg.base2d {
                    Base2dSource::Params(p) => predict_volume(&envs[k / sets], (tx.voxel.x, tx.voxel.y), tx.power_db, p),
                    Base2dSource::ImportDir(dir) => {
                        import_slices(dir.join(base_map_file_name(k / sets, k % sets, i)), &cfg.dims)
                    }
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let space = cfg.coefficients.space()?;
        let per_sample = if cfg.per_tx_phi { t } else { 1 };
        let phis = oversample(&space, cfg.n_target_models * per_sample, seed::derive(cfg.seed, "phi", 0))?;
        Ok(Plan {
            envs,
            tx_sets,
            bases,
            phis,
        })
    }

    /// `(env, tx_set, target_model)` of sample `n`.
    fn coords(cfg: &BuildConfig, n: usize) -> (usize, usize, usize) {
        let l = n % cfg.n_target_models;
        let k = n / cfg.n_target_models;
        (k / cfg.tx_sets_per_env, k % cfg.tx_sets_per_env, l)
    }

    fn sample_phis(&self, cfg: &BuildConfig, l: usize) -> Vec<TargetCoefficients> {
        if cfg.per_tx_phi {
            let t = cfg.txs_per_set;
            self.phis[l * t..(l + 1) * t].to_vec()
        } else {
            vec![self.phis[l]]
        }
    }

    fn label_db(&self, cfg: &BuildConfig, n: usize) -> Result<RadioMap3D> {
        let (e, s, l) = Self::coords(cfg, n);
        let k = e * cfg.tx_sets_per_env + s;
        let phis = self.sample_phis(cfg, l);
        let maps = self.tx_sets[k]
            .iter()
            .enumerate()
            .map(|(i, tx)| {
                let phi = &phis[i.min(phis.len() - 1)];
                let base = &self.bases[k * cfg.txs_per_set + i];
                synth_single(&self.envs[e], tx, phi, base, cfg.compose.clamp_min_db)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut label = compose_multi(&maps, &cfg.compose)?;
        if cfg.mask_buildings {
            mask_buildings(&mut label, &self.envs[e], cfg.compose.clamp_min_db as f32)?;
        }
        Ok(label)
    }
}

pub fn sample_file_name(n: usize) -> String {
    format!("{SAMPLES_DIR}/{n:06}.r3dm")
}

/// Runs the build on `workers` threads (all cores when `None`).
pub fn build_dataset(cfg: &BuildConfig, out_dir: impl AsRef<Path>, workers: Option<usize>) -> Result<Manifest> {
    cfg.validate()?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        pool = pool.num_threads(w.max(1));
    }
    let pool = pool
        .build()
        .map_err(|e| Error::InvalidParams(format!("cannot start worker pool: {e}")))?;
    let out = out_dir.as_ref();
    pool.install(|| build_inner(cfg, out))
}

fn build_inner(cfg: &BuildConfig, out: &Path) -> Result<Manifest> {
    let samples_dir = out.join(SAMPLES_DIR);
    fs::create_dir_all(&samples_dir).map_err(|e| Error::io(&samples_dir, e))?;
    let mut manifest = Manifest {
        format_version: VERSION,
        complete: false,
        dims: cfg.dims,
        resolution_m: cfg.dims.resolution_m,
        sample_count: 0,
        build_seed: cfg.seed,
        norm: None,
        split: None,
        records: Vec::new(),
    };
    if let Err(e) = build_samples(cfg, out, &mut manifest) {
        manifest.sample_count = manifest.records.len();
        manifest.write(out)?;
        return Err(e);
    }
    let mut manifest = split_dataset(&manifest, cfg.split.fractions, cfg.split.by, seed::derive(cfg.seed, "split", 0))?;
    manifest.sample_count = manifest.records.len();
    manifest.complete = true;
    manifest.write(out)?;
    Ok(manifest)
}

fn build_samples(cfg: &BuildConfig, out: &Path, manifest: &mut Manifest) -> Result<()> {
    let plan = Plan::new(cfg)?;
    let count = cfg.sample_count();
    let stats = match cfg.norm {
        NormPolicy::Pinned { vmin_db, vmax_db } => NormStats::new(vmin_db, vmax_db, cfg.quant_levels)?,
        NormPolicy::Global => (0..count)
            .into_par_iter()
            .map(|n| {
                let mut acc = StatsAccumulator::default();
                acc.push(&plan.label_db(cfg, n)?);
                Ok::<_, Error>(acc)
            })
            .try_reduce(StatsAccumulator::default, |a, b| Ok(a.merge(b)))?
            .finish(cfg.quant_levels)?,
    };
    manifest.norm = Some(stats);
    let heat_cfg = cfg.heatmap_config();

    let results: Vec<Result<SampleRecord>> = (0..count)
        .into_par_iter()
        .map(|n| {
            let (e, s, l) = Plan::coords(cfg, n);
            let env = &plan.envs[e];
            let txs = &plan.tx_sets[e * cfg.tx_sets_per_env + s];
            let label = normalize_quantize(&plan.label_db(cfg, n)?, &stats)?;
            let sample_seed = seed::derive(cfg.seed, "sample", n as u64);
            let t: f64 = seed::child_rng(sample_seed, "xi", 0).random();
            let xi = (cfg.xi_range[0] + (cfg.xi_range[1] - cfg.xi_range[0]) * t).clamp(cfg.xi_range[0], cfg.xi_range[1]);
            let sampler = SamplerConfig {
                xi,
                free_space_only: cfg.free_space_only,
                seed: sample_seed,
            };
            let sparse = sample_sparse(&label, env, &sampler)?;
            let heatmaps = encode_heatmap(txs, &cfg.dims, &heat_cfg)?;
            let features = assemble_features(ConfigTag::SparseAndTransmitter, env, Some(&sparse), Some(&heatmaps))?;
            let file = sample_file_name(n);
            let sample = DatasetSample {
                features,
                label,
                metadata: None,
            };
            let checksum = write_sample(&sample, out.join(&file))?;
            Ok(SampleRecord {
                file,
                env_id: e,
                tx_set: s,
                target_model: l,
                phi: plan.sample_phis(cfg, l),
                txs: txs.clone(),
                xi,
                seed: sample_seed,
                checksum,
                split: Split::Train,
            })
        })
        .collect();
    let mut first_err = None;
    for r in results {
        match r {
            Ok(rec) => manifest.records.push(rec),
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    first_err.map_or(Ok(()), Err)
}

/// Every `(env_id, transmitter voxel)` pair used by the build.
pub fn transmitter_voxels(manifest: &Manifest) -> BTreeSet<(usize, Voxel)> {
    manifest
        .records
        .iter()
        .flat_map(|r| r.txs.iter().map(move |t| (r.env_id, t.voxel)))
        .collect()
}
