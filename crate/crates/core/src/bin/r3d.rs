use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use r3d_core::channel_model::TargetCoefficients;
use r3d_core::dataset::{build_dataset, BuildConfig};
use r3d_core::env::{generate_city, load_occupancy, CityGenParams};
use r3d_core::fitting::{fit_coefficients, FitReport, MaskedMeasurements};
use r3d_core::format::{ChannelKind, R3dmFile};
use r3d_core::grid::{GridDims, Voxel};
use r3d_core::metrics::{evaluate, SsimConfig};
use r3d_core::propagate2d::{import_slices, predict_volume, Base2DParams, BaseMap3D};
use r3d_core::sampling::{encode_heatmap, sample_sparse, HeatmapConfig, SamplerConfig};
use r3d_core::synthesis::{compose_multi, mask_buildings, synth_single, ComposeConfig, DomainTag, RadioMap3D, Transmitter};
use r3d_core::{Error, Result};

#[derive(Parser)]
#[command(name = "r3d", version, about = "Synthetic 3D radio map dataset tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a procedural city occupancy grid.
    GenEnv(GenEnvArgs),
    /// Compute or import the stacked 2D base prediction.
    Base(BaseArgs),
    /// Fit target-model coefficients to masked measurements.
    Fit(FitArgs),
    /// Synthesize a (multi-transmitter) radio map in dB.
    Synth(SynthArgs),
    /// Draw sparse measurements from a label.
    Sample(SampleArgs),
    /// Encode transmitters as Gaussian heatmaps.
    Encode(EncodeArgs),
    /// Compare a prediction against ground truth.
    Metrics(MetricsArgs),
    /// Build a full dataset from a JSON config.
    Build(BuildArgs),
}

#[derive(Args)]
struct GenEnvArgs {
    #[arg(long)]
    dims: GridDims,
    #[arg(long, default_value_t = 1.0)]
    resolution: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// JSON city parameters.
    #[arg(long)]
    params: Option<PathBuf>,
}

#[derive(Args)]
struct BaseArgs {
    #[arg(long)]
    env: PathBuf,
    /// Transmitter as x,y,z,P (voxel indices, dB).
    #[arg(long, value_parser = parse_tx, required_unless_present = "import")]
    tx: Option<Transmitter>,
    /// JSON base-model parameters.
    #[arg(long)]
    params: Option<PathBuf>,
    /// Import an externally computed base (slices file) instead.
    #[arg(long, conflicts_with_all = ["tx", "params"])]
    import: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    /// CSV with header x,y,z,rss_db; positions in meters.
    #[arg(long)]
    measurements: PathBuf,
    #[arg(long)]
    base: PathBuf,
    /// Transmitter voxel as x,y,z.
    #[arg(long, value_parser = parse_voxel)]
    tx: Voxel,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    env: PathBuf,
    #[arg(long)]
    phi: PathBuf,
    /// Transmitter as x,y,z,P; repeat for several.
    #[arg(long = "tx", value_parser = parse_tx, required = true)]
    txs: Vec<Transmitter>,
    /// Base map per transmitter, in the same order.
    #[arg(long = "base", required = true)]
    bases: Vec<PathBuf>,
    #[arg(long)]
    noise_floor_db: Option<f64>,
    #[arg(long, default_value_t = -150.0, allow_hyphen_values = true)]
    clamp_min_db: f64,
    #[arg(long, default_value_t = 10.0, allow_hyphen_values = true)]
    clamp_max_db: f64,
    #[arg(long)]
    mask_buildings: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    label: PathBuf,
    #[arg(long)]
    env: PathBuf,
    #[arg(long)]
    xi: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Sample inside buildings too.
    #[arg(long)]
    all_voxels: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EncodeArgs {
    #[arg(long = "tx", value_parser = parse_tx, required = true)]
    txs: Vec<Transmitter>,
    #[arg(long)]
    dims: GridDims,
    #[arg(long)]
    sigma_z: Option<f64>,
    #[arg(long)]
    sigma_xy: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MetricsArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    #[arg(long, default_value_t = 7)]
    ssim_window: usize,
    /// Compare dB volumes; the dynamic range is the truth's span.
    #[arg(long)]
    db: bool,
}

#[derive(Args)]
struct BuildArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    workers: Option<usize>,
}

fn parse_tx(s: &str) -> std::result::Result<Transmitter, String> {
    Transmitter::parse(s).map_err(|e| e.to_string())
}

fn parse_voxel(s: &str) -> std::result::Result<Voxel, String> {
    let parts: Vec<_> = s.split(',').map(|p| p.trim().parse::<usize>()).collect();
    match parts.as_slice() {
        [Ok(x), Ok(y), Ok(z)] => Ok(Voxel::new(*x, *y, *z)),
        _ => Err(format!("expected x,y,z voxel indices, got {s:?}")),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(serde_json::from_str(&text)?)
}

fn file_dims(path: &Path) -> Result<GridDims> {
    Ok(R3dmFile::read(path)?.dims)
}

fn report_written(path: &Path, crc: u32) {
    println!("wrote {} (crc32c {crc:08x})", path.display());
}

fn gen_env(a: GenEnvArgs) -> Result<()> {
    let dims = GridDims::new(a.dims.width, a.dims.depth, a.dims.height, a.resolution)?;
    let params = match &a.params {
        Some(p) => read_json(p)?,
        None => CityGenParams::default_for(&dims),
    };
    let grid = generate_city(dims, &params, a.seed)?;
    report_written(&a.out, grid.write(&a.out)?);
    Ok(())
}

fn base(a: BaseArgs) -> Result<()> {
    let dims = file_dims(&a.env)?;
    let env = load_occupancy(&a.env, &dims)?;
    let map = match (&a.import, a.tx) {
        (Some(p), _) => import_slices(p, &dims)?,
        (None, Some(tx)) => {
            dims.check_voxel(tx.voxel)?;
            let params = match &a.params {
                Some(p) => read_json(p)?,
                None => Base2DParams::default(),
            };
            predict_volume(&env, (tx.voxel.x, tx.voxel.y), tx.power_db, &params)?
        }
        (None, None) => unreachable!("clap requires --tx or --import"),
    };
    report_written(&a.out, map.write(&a.out)?);
    Ok(())
}

fn read_base(path: &Path) -> Result<BaseMap3D> {
    let dims = file_dims(path)?;
    import_slices(path, &dims)
}

fn fit(a: FitArgs) -> Result<()> {
    let base = read_base(&a.base)?;
    let dims = *base.dims();
    dims.check_voxel(a.tx)?;
    let meas = MaskedMeasurements::from_csv(&a.measurements, dims.center(a.tx))?;
    let report = fit_coefficients(&meas, &base)?;
    if let Some(c) = report.condition_number {
        eprintln!("design condition number {c:.3e}");
    }
    let out = FitReport {
        condition_number: None,
        ..report
    };
    let text = serde_json::to_string_pretty(&out)? + "\n";
    std::fs::write(&a.out, &text).map_err(|e| Error::Io {
        path: a.out.clone(),
        source: e,
    })?;
    print!("{text}");
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    if a.bases.len() != a.txs.len() {
        return Err(Error::InvalidParams(format!(
            "{} transmitters need {} base maps, got {}",
            a.txs.len(),
            a.txs.len(),
            a.bases.len()
        )));
    }
    let dims = file_dims(&a.env)?;
    let env = load_occupancy(&a.env, &dims)?;
    let phi: TargetCoefficients = read_json(&a.phi)?;
    let cfg = ComposeConfig {
        noise_floor_db: a.noise_floor_db,
        clamp_min_db: a.clamp_min_db,
        clamp_max_db: a.clamp_max_db,
    };
    cfg.validate()?;
    let maps = a
        .txs
        .iter()
        .zip(&a.bases)
        .map(|(tx, b)| synth_single(&env, tx, &phi, &read_base(b)?, cfg.clamp_min_db))
        .collect::<Result<Vec<_>>>()?;
    let mut out = compose_multi(&maps, &cfg)?;
    if a.mask_buildings {
        mask_buildings(&mut out, &env, cfg.clamp_min_db as f32)?;
    }
    report_written(&a.out, out.write(&a.out)?);
    Ok(())
}

fn sample(a: SampleArgs) -> Result<()> {
    let label = RadioMap3D::read(&a.label, DomainTag::Db)?;
    let env = load_occupancy(&a.env, label.dims())?;
    let cfg = SamplerConfig {
        xi: a.xi,
        free_space_only: !a.all_voxels,
        seed: a.seed,
    };
    let sparse = sample_sparse(&label, &env, &cfg)?;
    eprintln!("sampled {} voxels", sparse.sampled_set.len());
    let file = R3dmFile::single(sparse.dims, ChannelKind::Sparse, sparse.data)?;
    report_written(&a.out, file.write(&a.out)?);
    Ok(())
}

fn encode(a: EncodeArgs) -> Result<()> {
    let defaults = HeatmapConfig::default_for(&a.dims);
    let cfg = HeatmapConfig {
        sigma_z: a.sigma_z.unwrap_or(defaults.sigma_z),
        sigma_xy: a.sigma_xy.unwrap_or(defaults.sigma_xy),
    };
    let maps = encode_heatmap(&a.txs, &a.dims, &cfg)?;
    let mut file = R3dmFile::new(a.dims);
    for (i, m) in maps.into_iter().enumerate() {
        file.push(ChannelKind::heatmap(i)?, m.into_vec())?;
    }
    report_written(&a.out, file.write(&a.out)?);
    Ok(())
}

fn metrics(a: MetricsArgs) -> Result<()> {
    let domain = if a.db { DomainTag::Db } else { DomainTag::Normalized };
    let pred = RadioMap3D::read(&a.pred, domain)?;
    let truth = RadioMap3D::read(&a.truth, domain)?;
    let range = if a.db {
        let (lo, hi) = truth.min_max();
        f64::from(hi - lo)
    } else {
        1.0
    };
    let cfg = SsimConfig {
        window: a.ssim_window,
        range,
        ..SsimConfig::default()
    };
    let report = evaluate(&pred, &truth, &cfg)?;
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}

const EXIT_CONFIG: u8 = 2;
const EXIT_BUILD: u8 = 3;

fn build(a: BuildArgs) -> ExitCode {
    let cfg = BuildConfig::load(&a.config).and_then(|mut cfg| {
        if let Ok(s) = std::env::var("R3D_SEED") {
            cfg.seed = s
                .trim()
                .parse()
                .map_err(|_| Error::InvalidParams(format!("R3D_SEED={s:?} is not an unsigned integer")))?;
        }
        cfg.validate()?;
        Ok(cfg)
    });
    let cfg = match cfg {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    match build_dataset(&cfg, &a.out, a.workers) {
        Ok(m) => {
            println!("built {} samples in {}", m.sample_count, a.out.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("build error: {e}");
            ExitCode::from(EXIT_BUILD)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Build(a) => return build(a),
        Command::GenEnv(a) => gen_env(a),
        Command::Base(a) => base(a),
        Command::Fit(a) => fit(a),
        Command::Synth(a) => synth(a),
        Command::Sample(a) => sample(a),
        Command::Encode(a) => encode(a),
        Command::Metrics(a) => metrics(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
