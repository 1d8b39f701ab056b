//! Model inputs: sparse measurements drawn from a label, Gaussian transmitter
//! heatmaps, and the feature tensors for the three input configurations.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::env::OccupancyGrid;
use crate::error::{Error, Result};
use crate::format::{Channel, ChannelKind};
use crate::grid::{GridDims, Volume};
use crate::seed;
use crate::synthesis::{db_to_linear, DomainTag, RadioMap3D, Transmitter};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub xi: f64,
    #[serde(default = "default_true")]
    pub free_space_only: bool,
    pub seed: u64,
}

fn default_true() -> bool {
    true
}

impl SamplerConfig {
    pub fn new(xi: f64, seed: u64) -> Self {
        SamplerConfig {
            xi,
            free_space_only: true,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.xi > 0.0 && self.xi <= 1.0) {
            return Err(Error::InvalidParams(format!(
                "sampling rate must be in (0, 1], got {}",
                self.xi
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseMap {
    pub dims: GridDims,
    pub domain: DomainTag,
    pub data: Vec<f32>,
    /// Linear voxel indices, ascending.
    pub sampled_set: Vec<usize>,
}

/// Copies `round(xi * |candidates|)` uniformly chosen label voxels, zero
/// elsewhere.
pub fn sample_sparse(label: &RadioMap3D, env: &OccupancyGrid, cfg: &SamplerConfig) -> Result<SparseMap> {
    cfg.validate()?;
    let dims = *label.dims();
    dims.ensure_same_shape(env.dims())?;
    let candidates: Vec<usize> = if cfg.free_space_only {
        env.free_voxels().collect()
    } else {
        (0..dims.voxel_count()).collect()
    };
    if candidates.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    let k = ((cfg.xi * candidates.len() as f64).round() as usize).min(candidates.len());
    let mut rng = seed::child_rng(cfg.seed, "sparse", 0);
    let mut sampled_set: Vec<usize> = index::sample(&mut rng, candidates.len(), k)
        .into_iter()
        .map(|i| candidates[i])
        .collect();
    sampled_set.sort_unstable();
    let mut data = vec![0.0f32; dims.voxel_count()];
    let src = label.as_slice();
    for &i in &sampled_set {
        data[i] = src[i];
    }
    Ok(SparseMap {
        dims,
        domain: label.domain(),
        data,
        sampled_set,
    })
}

/// Gaussian widths in voxels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeatmapConfig {
    pub sigma_z: f64,
    pub sigma_xy: f64,
}

impl HeatmapConfig {
    /// `sigma_z = 0.1 * D`, `sigma_xy = 0.05 * min(H, W)`.
    pub fn default_for(dims: &GridDims) -> Self {
        HeatmapConfig {
            sigma_z: 0.1 * dims.depth as f64,
            sigma_xy: 0.05 * dims.height.min(dims.width) as f64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_z > 0.0 && self.sigma_xy > 0.0 && self.sigma_z.is_finite() && self.sigma_xy.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "heatmap widths must be positive, got sigma_z = {}, sigma_xy = {}",
                self.sigma_z, self.sigma_xy
            )));
        }
        Ok(())
    }
}

fn gaussian_axis(n: usize, center: usize, sigma: f64) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let t = (i as f64 - center as f64) / sigma;
            (-0.5 * t * t).exp()
        })
        .collect()
}

/// One heatmap per transmitter with dB powers converted to linear scale.
pub fn encode_heatmap(txs: &[Transmitter], dims: &GridDims, cfg: &HeatmapConfig) -> Result<Vec<Volume<f32>>> {
    let linear: Vec<_> = txs.iter().map(|t| (t.voxel, db_to_linear(t.power_db))).collect();
    encode_heatmap_linear(&linear, dims, cfg)
}

/// `P_i * exp(-0.5 * (dx^2/sxy^2 + dy^2/sxy^2 + dz^2/sz^2))`, divided by the
/// maximum over all channels.
pub fn encode_heatmap_linear(
    txs: &[(crate::grid::Voxel, f64)],
    dims: &GridDims,
    cfg: &HeatmapConfig,
) -> Result<Vec<Volume<f32>>> {
    cfg.validate()?;
    if txs.is_empty() {
        return Err(Error::EmptyInput("no transmitters to encode".into()));
    }
    for (v, p) in txs {
        dims.check_voxel(*v)?;
        if !(*p > 0.0 && p.is_finite()) {
            return Err(Error::NonPositivePower);
        }
    }
    // The peak of each channel sits on its transmitter voxel.
    let peak = txs.iter().map(|(_, p)| *p).fold(0.0f64, f64::max);
    Ok(txs
        .iter()
        .map(|(v, p)| {
            let gx = gaussian_axis(dims.width, v.x, cfg.sigma_xy);
            let gy = gaussian_axis(dims.depth, v.y, cfg.sigma_xy);
            let gz = gaussian_axis(dims.height, v.z, cfg.sigma_z);
            let scale = p / peak;
            Volume::from_fn(*dims, |u| (scale * (gx[u.x] * gy[u.y]) * gz[u.z]) as f32)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ConfigTag {
    #[serde(rename = "sparse_and_tx")]
    SparseAndTransmitter,
    #[serde(rename = "sparse_only")]
    SparseOnly,
    #[serde(rename = "tx_only")]
    TransmitterOnly,
}

impl ConfigTag {
    pub const ALL: [ConfigTag; 3] = [
        ConfigTag::SparseAndTransmitter,
        ConfigTag::SparseOnly,
        ConfigTag::TransmitterOnly,
    ];

    pub fn uses_sparse(self) -> bool {
        self != ConfigTag::TransmitterOnly
    }

    pub fn uses_heatmaps(self) -> bool {
        self != ConfigTag::SparseOnly
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ConfigTag::SparseAndTransmitter => "sparse_and_tx",
            ConfigTag::SparseOnly => "sparse_only",
            ConfigTag::TransmitterOnly => "tx_only",
        }
    }
}

impl fmt::Display for ConfigTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ConfigTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ConfigTag::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::InvalidParams(format!("unknown configuration tag {s:?}")))
    }
}

/// Ordered input channels `[heatmaps..., sparse, env]`, filtered by tag.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    pub config_tag: ConfigTag,
    pub dims: GridDims,
    pub channels: Vec<Channel>,
}

impl FeatureTensor {
    /// The subset of this tensor used by `tag`.
    pub fn view(&self, tag: ConfigTag) -> Result<FeatureTensor> {
        if tag.uses_sparse() && !self.has(|k| k == ChannelKind::Sparse) {
            return Err(Error::MissingChannel("sparse".into()));
        }
        if tag.uses_heatmaps() && !self.has(|k| matches!(k, ChannelKind::Heatmap(_))) {
            return Err(Error::MissingChannel("heatmap".into()));
        }
        let channels = self
            .channels
            .iter()
            .filter(|c| match c.kind {
                ChannelKind::Heatmap(_) => tag.uses_heatmaps(),
                ChannelKind::Sparse => tag.uses_sparse(),
                _ => true,
            })
            .cloned()
            .collect();
        Ok(FeatureTensor {
            config_tag: tag,
            dims: self.dims,
            channels,
        })
    }

    fn has(&self, pred: impl Fn(ChannelKind) -> bool) -> bool {
        self.channels.iter().any(|c| pred(c.kind))
    }

    pub fn heatmap_count(&self) -> usize {
        self.channels
            .iter()
            .filter(|c| matches!(c.kind, ChannelKind::Heatmap(_)))
            .count()
    }
}

pub fn assemble_features(
    tag: ConfigTag,
    env: &OccupancyGrid,
    sparse: Option<&SparseMap>,
    heatmaps: Option<&[Volume<f32>]>,
) -> Result<FeatureTensor> {
    let dims = *env.dims();
    let mut channels = Vec::new();
    if tag.uses_heatmaps() {
        let hs = heatmaps
            .filter(|h| !h.is_empty())
            .ok_or_else(|| Error::MissingChannel("heatmap".into()))?;
        for (i, h) in hs.iter().enumerate() {
            dims.ensure_same_shape(h.dims())?;
            channels.push(Channel {
                kind: ChannelKind::heatmap(i)?,
                data: h.as_slice().to_vec(),
            });
        }
    }
    if tag.uses_sparse() {
        let s = sparse.ok_or_else(|| Error::MissingChannel("sparse".into()))?;
        dims.ensure_same_shape(&s.dims)?;
        if s.domain != DomainTag::Normalized {
            return Err(Error::DomainMismatch("sparse channel must be normalized".into()));
        }
        channels.push(Channel {
            kind: ChannelKind::Sparse,
            data: s.data.clone(),
        });
    }
    channels.push(Channel {
        kind: ChannelKind::Env,
        data: env.to_f32(),
    });
    Ok(FeatureTensor {
        config_tag: tag,
        dims,
        channels,
    })
}
