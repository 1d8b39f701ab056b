use std::path::Path;
use std::process::{Command, Output};

use r3d_core::dataset::{BuildConfig, Manifest};
use r3d_core::fitting::FitReport;
use r3d_core::format::{ChannelKind, R3dmFile};
use r3d_core::grid::GridDims;
use r3d_core::metrics::MetricsReport;

fn r3d(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_r3d"))
        .args(args)
        .current_dir(cwd)
        .env_remove("R3D_SEED")
        .output()
        .unwrap()
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn single_map_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(&r3d(&["gen-env", "--dims", "24x24x6", "--seed", "4", "--out", "env.r3dm"], d));
    let env = R3dmFile::read(d.join("env.r3dm")).unwrap();
    assert_eq!(env.dims, GridDims::cube(24, 24, 6).unwrap());
    assert_eq!(env.channels[0].kind, ChannelKind::Env);

    ok(&r3d(&["base", "--env", "env.r3dm", "--tx", "2,2,3,5", "--out", "base0.r3dm"], d));
    ok(&r3d(&["base", "--env", "env.r3dm", "--tx", "20,21,2,0", "--out", "base1.r3dm"], d));
    ok(&r3d(&["base", "--env", "env.r3dm", "--import", "base0.r3dm", "--out", "copy.r3dm"], d));
    assert_eq!(
        std::fs::read(d.join("base0.r3dm")).unwrap(),
        std::fs::read(d.join("copy.r3dm")).unwrap()
    );

    std::fs::write(d.join("phi.json"), r#"{"a": -2.0, "b": -12.0, "c": 4.0, "e": 0.9}"#).unwrap();
    ok(&r3d(
        &[
            "synth", "--env", "env.r3dm", "--phi", "phi.json", "--tx", "2,2,3,5", "--tx", "20,21,2,0", "--base",
            "base0.r3dm", "--base", "base1.r3dm", "--out", "label.r3dm",
        ],
        d,
    ));
    let label = R3dmFile::read(d.join("label.r3dm")).unwrap();
    assert_eq!(label.channels[0].kind, ChannelKind::Label);
    assert!(label.channels[0].data.iter().all(|v| (-150.0..=10.0).contains(v)));

    let mismatched = r3d(
        &["synth", "--env", "env.r3dm", "--phi", "phi.json", "--tx", "2,2,3,5", "--tx", "20,21,2,0", "--base", "base0.r3dm", "--out", "x.r3dm"],
        d,
    );
    assert!(!mismatched.status.success());

    ok(&r3d(&["sample", "--label", "label.r3dm", "--env", "env.r3dm", "--xi", "0.05", "--seed", "3", "--out", "sparse.r3dm"], d));
    assert_eq!(R3dmFile::read(d.join("sparse.r3dm")).unwrap().channels[0].kind, ChannelKind::Sparse);

    ok(&r3d(&["encode", "--tx", "2,2,3,5", "--tx", "20,21,2,0", "--dims", "24x24x6", "--out", "heat.r3dm"], d));
    let heat = R3dmFile::read(d.join("heat.r3dm")).unwrap();
    assert_eq!(heat.channels.len(), 2);
    assert_eq!(heat.channels[1].kind, ChannelKind::Heatmap(1));

    let m = r3d(&["metrics", "--pred", "label.r3dm", "--truth", "label.r3dm", "--db"], d);
    ok(&m);
    let report: MetricsReport = serde_json::from_slice(&m.stdout).unwrap();
    assert_eq!(report.rmse, 0.0);
    assert_eq!(report.psnr_db, f64::INFINITY);
    assert!(String::from_utf8_lossy(&m.stdout).contains("\"inf\""));

    // dB labels are outside [0, 1], so the default normalized mode rejects them.
    assert!(!r3d(&["metrics", "--pred", "label.r3dm", "--truth", "label.r3dm"], d).status.success());
}

#[test]
fn fit_from_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(&r3d(&["gen-env", "--dims", "32x32x16", "--seed", "1", "--out", "env.r3dm"], d));
    ok(&r3d(&["base", "--env", "env.r3dm", "--tx", "16,16,1,20", "--out", "base.r3dm"], d));

    let base = r3d_core::propagate2d::import_slices(d.join("base.r3dm"), &GridDims::cube(32, 32, 16).unwrap()).unwrap();
    let dims = *base.dims();
    let tx = dims.center(r3d_core::grid::Voxel::new(16, 16, 1));
    let phi = r3d_core::TargetCoefficients::new(-30.0, -20.0, -5.0, 0.8);
    let mut csv = String::from("x,y,z,rss_db\n");
    for i in (0..dims.voxel_count()).step_by(37) {
        let v = dims.voxel_at(i);
        if (v.x, v.y) == (16, 16) {
            continue;
        }
        let u = dims.center(v);
        let val = r3d_core::channel_model::eval_target(&u, &tx, &phi, &base).unwrap();
        csv.push_str(&format!("{},{},{},{}\n", u.x, u.y, u.z, val));
    }
    std::fs::write(d.join("meas.csv"), csv).unwrap();
    ok(&r3d(&["fit", "--measurements", "meas.csv", "--base", "base.r3dm", "--tx", "16,16,1", "--out", "phi.json"], d));
    let text = std::fs::read_to_string(d.join("phi.json")).unwrap();
    let fit: FitReport = serde_json::from_str(&text).unwrap();
    let json: serde_json::Value = serde_json::from_str(&text).unwrap();
    let mut keys: Vec<_> = json.as_object().unwrap().keys().cloned().collect();
    keys.sort();
    assert_eq!(keys, ["a", "b", "c", "e", "residual_rmse_db"]);
    for (g, w) in fit.phi.to_array().iter().zip(phi.to_array()) {
        assert!((g - w).abs() < 1e-6 * w.abs(), "{g} vs {w}");
    }

    std::fs::write(d.join("bad.csv"), "x,y,rss\n1,2,3\n").unwrap();
    assert!(!r3d(&["fit", "--measurements", "bad.csv", "--base", "base.r3dm", "--tx", "16,16,1", "--out", "p.json"], d)
        .status
        .success());
}

fn write_cfg(d: &Path, cfg: &BuildConfig) {
    std::fs::write(d.join("build.json"), serde_json::to_string(cfg).unwrap()).unwrap();
}

#[test]
fn build_exit_codes_and_seed_override() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let cfg = BuildConfig::new(GridDims::cube(16, 16, 6).unwrap(), 2, 1, 2, 5);
    write_cfg(d, &cfg);

    ok(&r3d(&["build", "--config", "build.json", "--out", "a"], d));
    let a = Manifest::read(d.join("a")).unwrap();
    assert!(a.complete);
    assert_eq!(a.sample_count, 4);
    assert_eq!(a.build_seed, 5);

    let out = Command::new(env!("CARGO_BIN_EXE_r3d"))
        .args(["build", "--config", "build.json", "--out", "b", "--workers", "2"])
        .current_dir(d)
        .env("R3D_SEED", "77")
        .output()
        .unwrap();
    ok(&out);
    let b = Manifest::read(d.join("b")).unwrap();
    assert_eq!(b.build_seed, 77);
    assert_ne!(a.records[0].checksum, b.records[0].checksum);

    std::fs::write(d.join("broken.json"), "{ not json").unwrap();
    assert_eq!(r3d(&["build", "--config", "broken.json", "--out", "c"], d).status.code(), Some(2));

    let mut bad = cfg.clone();
    bad.split.fractions = [0.5, 0.5, 0.5];
    write_cfg(d, &bad);
    assert_eq!(r3d(&["build", "--config", "build.json", "--out", "c"], d).status.code(), Some(2));

    let mut missing = cfg.clone();
    missing.base2d = r3d_core::dataset::Base2dSource::ImportDir("nowhere".into());
    write_cfg(d, &missing);
    assert_eq!(r3d(&["build", "--config", "build.json", "--out", "e"], d).status.code(), Some(3));
    assert!(!Manifest::read(d.join("e")).unwrap().complete);
}
