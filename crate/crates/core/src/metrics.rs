//! Volumetric error metrics: RMSE, NMSE, PSNR and windowed SSIM.

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::grid::GridDims;
use crate::synthesis::RadioMap3D;

fn check_pair(pred: &RadioMap3D, truth: &RadioMap3D) -> Result<()> {
    truth.dims().ensure_same_shape(pred.dims())?;
    if pred.domain() != truth.domain() {
        return Err(Error::DomainMismatch(format!(
            "prediction is {:?}, truth is {:?}",
            pred.domain(),
            truth.domain()
        )));
    }
    Ok(())
}

fn sq_err(pred: &RadioMap3D, truth: &RadioMap3D) -> f64 {
    pred.as_slice()
        .iter()
        .zip(truth.as_slice())
        .map(|(&p, &t)| {
            let d = f64::from(p) - f64::from(t);
            d * d
        })
        .sum()
}

pub fn mse(pred: &RadioMap3D, truth: &RadioMap3D) -> Result<f64> {
    check_pair(pred, truth)?;
    Ok(sq_err(pred, truth) / pred.as_slice().len() as f64)
}

pub fn rmse(pred: &RadioMap3D, truth: &RadioMap3D) -> Result<f64> {
    mse(pred, truth).map(f64::sqrt)
}

/// `sum (p - t)^2 / sum t^2`.
pub fn nmse(pred: &RadioMap3D, truth: &RadioMap3D) -> Result<f64> {
    check_pair(pred, truth)?;
    let energy: f64 = truth.as_slice().iter().map(|&t| f64::from(t) * f64::from(t)).sum();
    if !(energy > 0.0) {
        return Err(Error::ZeroEnergyTruth);
    }
    Ok(sq_err(pred, truth) / energy)
}

/// `10 log10(R^2 / MSE)`; infinite when the volumes agree exactly.
pub fn psnr(pred: &RadioMap3D, truth: &RadioMap3D, range: f64) -> Result<f64> {
    if !(range > 0.0) {
        return Err(Error::InvalidParams(format!("dynamic range must be positive, got {range}")));
    }
    Ok(psnr_from_mse(mse(pred, truth)?, range))
}

pub fn psnr_from_mse(mse: f64, range: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (range * range / mse).log10()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsimConfig {
    pub k1: f64,
    pub k2: f64,
    pub range: f64,
    pub window: usize,
}

impl Default for SsimConfig {
    fn default() -> Self {
        SsimConfig {
            k1: 0.01,
            k2: 0.03,
            range: 1.0,
            window: 7,
        }
    }
}

impl SsimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.k1 > 0.0 && self.k2 > 0.0 && self.range > 0.0) {
            return Err(Error::InvalidParams("K1, K2 and R must be positive".into()));
        }
        if self.window < 3 || self.window % 2 == 0 {
            return Err(Error::InvalidParams(format!(
                "SSIM window must be odd and >= 3, got {}",
                self.window
            )));
        }
        Ok(())
    }

    pub fn c1(&self) -> f64 {
        (self.k1 * self.range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.range).powi(2)
    }

    /// Window extent per axis, clipped to the volume.
    pub fn window_for(&self, dims: &GridDims) -> [usize; 3] {
        [
            self.window.min(dims.width),
            self.window.min(dims.depth),
            self.window.min(dims.height),
        ]
    }
}

/// Local SSIM from window moments (population statistics).
#[inline]
pub fn local_ssim(mu_x: f64, mu_y: f64, var_x: f64, var_y: f64, cov: f64, c1: f64, c2: f64) -> f64 {
    ((2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2))
        / ((mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2))
}

/// Valid box sums of `src` (shape `n0 x n1 x n2`, last axis fastest) along
/// `axis` with window `w`.
fn box_sum(src: &[f64], shape: [usize; 3], axis: usize, w: usize) -> (Vec<f64>, [usize; 3]) {
    let mut out_shape = shape;
    out_shape[axis] = shape[axis] - w + 1;
    let [_, o1, o2] = out_shape;
    let stride = match axis {
        0 => shape[1] * shape[2],
        1 => shape[2],
        _ => 1,
    };
    let mut out = vec![0.0; out_shape.iter().product()];
    out.par_chunks_mut(o1 * o2).enumerate().for_each(|(i, plane)| {
        for j in 0..o1 {
            for k in 0..o2 {
                let start = (i * shape[1] + j) * shape[2] + k;
                plane[j * o2 + k] = (0..w).map(|t| src[start + t * stride]).sum();
            }
        }
    });
    (out, out_shape)
}

fn window_means(src: &[f64], dims: &GridDims, win: [usize; 3]) -> Vec<f64> {
    let shape = [dims.width, dims.depth, dims.height];
    let (a, s) = box_sum(src, shape, 2, win[2]);
    let (b, s) = box_sum(&a, s, 1, win[1]);
    let (c, _) = box_sum(&b, s, 0, win[0]);
    let n = (win[0] * win[1] * win[2]) as f64;
    c.into_iter().map(|v| v / n).collect()
}

/// Mean local SSIM over every window position fully inside the volume.
pub fn ssim(pred: &RadioMap3D, truth: &RadioMap3D, cfg: &SsimConfig) -> Result<f64> {
    check_pair(pred, truth)?;
    cfg.validate()?;
    let dims = *truth.dims();
    if dims.width < 3 || dims.depth < 3 || dims.height < 3 {
        return Err(Error::VolumeTooSmall { dims });
    }
    let win = cfg.window_for(&dims);
    let x: Vec<f64> = pred.as_slice().iter().map(|&v| f64::from(v)).collect();
    let y: Vec<f64> = truth.as_slice().iter().map(|&v| f64::from(v)).collect();
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a * b).collect();

    let mx = window_means(&x, &dims, win);
    let my = window_means(&y, &dims, win);
    let mxx = window_means(&xx, &dims, win);
    let myy = window_means(&yy, &dims, win);
    let mxy = window_means(&xy, &dims, win);

    let (c1, c2) = (cfg.c1(), cfg.c2());
    let total: f64 = (0..mx.len())
        .map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            let vx = (mxx[i] - ux * ux).max(0.0);
            let vy = (myy[i] - uy * uy).max(0.0);
            let cov = mxy[i] - ux * uy;
            local_ssim(ux, uy, vx, vy, cov, c1, c2)
        })
        .sum();
    Ok(total / mx.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rmse: f64,
    pub nmse: f64,
    pub ssim: f64,
    #[serde(serialize_with = "ser_psnr", deserialize_with = "de_psnr")]
    pub psnr_db: f64,
}

fn ser_psnr<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_infinite() && *v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_f64(*v)
    }
}

fn de_psnr<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }
    match Repr::deserialize(d)? {
        Repr::Num(v) => Ok(v),
        Repr::Str(s) if s == "inf" => Ok(f64::INFINITY),
        Repr::Str(s) => Err(serde::de::Error::custom(format!("invalid PSNR {s:?}"))),
    }
}

/// All four metrics with a shared dynamic range.
pub fn evaluate(pred: &RadioMap3D, truth: &RadioMap3D, cfg: &SsimConfig) -> Result<MetricsReport> {
    let m = mse(pred, truth)?;
    Ok(MetricsReport {
        rmse: m.sqrt(),
        nmse: nmse(pred, truth)?,
        ssim: ssim(pred, truth, cfg)?,
        psnr_db: psnr_from_mse(m, cfg.range),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthesis::DomainTag;
    use proptest::prelude::*;
    use rand::Rng;

    fn vol(dims: GridDims, data: Vec<f32>) -> RadioMap3D {
        RadioMap3D::from_vec(dims, data, DomainTag::Normalized).unwrap()
    }

    fn random(dims: GridDims, seed: u64) -> RadioMap3D {
        let mut rng = crate::seed::rng(seed);
        vol(dims, (0..dims.voxel_count()).map(|_| rng.random::<f32>()).collect())
    }

    /// Recomputes every window's statistics from scratch.
    fn brute_ssim(x: &RadioMap3D, y: &RadioMap3D, cfg: &SsimConfig) -> f64 {
        let d = *x.dims();
        let [wx, wy, wz] = cfg.window_for(&d);
        let (c1, c2) = (cfg.c1(), cfg.c2());
        let mut total = 0.0;
        let mut count = 0usize;
        for i in 0..=d.width - wx {
            for j in 0..=d.depth - wy {
                for k in 0..=d.height - wz {
                    let mut a = Vec::new();
                    let mut b = Vec::new();
                    for p in i..i + wx {
                        for q in j..j + wy {
                            for r in k..k + wz {
                                let idx = d.index(p, q, r);
                                a.push(f64::from(x.as_slice()[idx]));
                                b.push(f64::from(y.as_slice()[idx]));
                            }
                        }
                    }
                    let n = a.len() as f64;
                    let ma = a.iter().sum::<f64>() / n;
                    let mb = b.iter().sum::<f64>() / n;
                    let va = a.iter().map(|v| (v - ma).powi(2)).sum::<f64>() / n;
                    let vb = b.iter().map(|v| (v - mb).powi(2)).sum::<f64>() / n;
                    let cov = a.iter().zip(&b).map(|(p, q)| (p - ma) * (q - mb)).sum::<f64>() / n;
                    total += local_ssim(ma, mb, va, vb, cov, c1, c2);
                    count += 1;
                }
            }
        }
        total / count as f64
    }

    #[test]
    fn ssim_matches_brute_force() {
        let dims = GridDims::cube(16, 16, 8).unwrap();
        for seed in 0..4 {
            let x = random(dims, seed);
            let y = random(dims, seed + 100);
            for window in [3, 5, 7, 9] {
                let cfg = SsimConfig { window, ..SsimConfig::default() };
                let fast = ssim(&x, &y, &cfg).unwrap();
                let slow = brute_ssim(&x, &y, &cfg);
                assert!((fast - slow).abs() <= 1e-9, "window {window}: {fast} vs {slow}");
            }
        }
    }

    #[test]
    fn ssim_examples() {
        let dims = GridDims::cube(8, 8, 8).unwrap();
        let x = random(dims, 1);
        assert!((ssim(&x, &x, &SsimConfig::default()).unwrap() - 1.0).abs() < 1e-12);

        let a = vol(dims, vec![0.25; 512]);
        let b = vol(dims, vec![0.75; 512]);
        let v = ssim(&a, &b, &SsimConfig::default()).unwrap();
        assert!((v - 0.375_1 / 0.625_1).abs() < 1e-9, "{v}");
        assert!((v - 0.600064).abs() < 1e-6);

        let y = random(dims, 2);
        let cfg = SsimConfig::default();
        assert_eq!(ssim(&x, &y, &cfg).unwrap(), ssim(&y, &x, &cfg).unwrap());

        let thin = GridDims::cube(8, 8, 2).unwrap();
        assert!(matches!(
            ssim(&vol(thin, vec![0.0; 128]), &vol(thin, vec![0.0; 128]), &cfg),
            Err(Error::VolumeTooSmall { .. })
        ));
        assert!(ssim(&x, &y, &SsimConfig { window: 4, ..cfg }).is_err());
    }

    #[test]
    fn ssim_clips_short_axes() {
        let dims = GridDims::cube(10, 9, 4).unwrap();
        let x = random(dims, 5);
        let y = random(dims, 6);
        let cfg = SsimConfig::default();
        assert_eq!(cfg.window_for(&dims), [7, 7, 4]);
        assert!((ssim(&x, &y, &cfg).unwrap() - brute_ssim(&x, &y, &cfg)).abs() < 1e-9);
    }

    #[test]
    fn pointwise_examples() {
        let dims = GridDims::cube(2, 2, 2).unwrap();
        let t = vol(dims, vec![0.2, 0.4, 0.6, 0.8, 0.1, 0.3, 0.5, 0.7]);
        assert_eq!(rmse(&t, &t).unwrap(), 0.0);
        assert_eq!(nmse(&t, &t).unwrap(), 0.0);
        assert_eq!(psnr(&t, &t, 1.0).unwrap(), f64::INFINITY);

        let shifted = vol(dims, t.as_slice().iter().map(|v| v + 0.1).collect());
        assert!((rmse(&shifted, &t).unwrap() - 0.1).abs() < 1e-7);

        let base = vol(dims, vec![0.5; 8]);
        let half = vol(dims, vec![0.5, 0.7, 0.5, 0.7, 0.5, 0.7, 0.5, 0.7]);
        assert!((rmse(&half, &base).unwrap() - 0.02f64.sqrt()).abs() < 1e-7);

        let zero = vol(dims, vec![0.0; 8]);
        assert_eq!(nmse(&zero, &t).unwrap(), 1.0);
        assert!(matches!(nmse(&t, &zero), Err(Error::ZeroEnergyTruth)));

        let half_t = vol(dims, vec![0.25, 0.5, 0.125, 0.375, 0.5, 0.0625, 0.5, 0.25]);
        let full: Vec<f32> = half_t.as_slice().iter().map(|v| v * 2.0).collect();
        assert_eq!(nmse(&half_t, &vol(dims, full)).unwrap(), 0.25);

        assert_eq!(psnr_from_mse(0.01, 1.0), 20.0);
        assert!((psnr_from_mse(0.01, 1.0) - psnr_from_mse(0.04, 1.0) - 10.0 * 4f64.log10()).abs() < 1e-12);

        let db = RadioMap3D::from_vec(dims, vec![0.5; 8], DomainTag::Db).unwrap();
        assert!(matches!(rmse(&db, &t), Err(Error::DomainMismatch(_))));
        let other = vol(GridDims::cube(2, 2, 3).unwrap(), vec![0.0; 12]);
        assert!(matches!(rmse(&other, &t), Err(Error::DimsMismatch { .. })));
    }

    #[test]
    fn report_renders_infinite_psnr() {
        let r = MetricsReport {
            rmse: 0.0,
            nmse: 0.0,
            ssim: 1.0,
            psnr_db: f64::INFINITY,
        };
        let s = serde_json::to_string(&r).unwrap();
        assert!(s.contains("\"psnr_db\":\"inf\""), "{s}");
        assert_eq!(serde_json::from_str::<MetricsReport>(&s).unwrap(), r);
        let finite = MetricsReport { psnr_db: 20.0, ..r };
        let s = serde_json::to_string(&finite).unwrap();
        assert_eq!(serde_json::from_str::<MetricsReport>(&s).unwrap(), finite);
    }

    proptest! {
        #[test]
        fn ssim_bounded_and_symmetric(s1 in 0u64..10_000, s2 in 0u64..10_000) {
            let dims = GridDims::cube(6, 5, 4).unwrap();
            let (x, y) = (random(dims, s1), random(dims, s2));
            let cfg = SsimConfig { window: 3, ..SsimConfig::default() };
            let v = ssim(&x, &y, &cfg).unwrap();
            prop_assert!(v > -1.0 && v <= 1.0);
            prop_assert_eq!(v, ssim(&y, &x, &cfg).unwrap());
        }

        #[test]
        fn psnr_rmse_consistent(s1 in 0u64..10_000, s2 in 0u64..10_000) {
            let dims = GridDims::cube(4, 4, 4).unwrap();
            let (x, y) = (random(dims, s1), random(dims, s2));
            let r = rmse(&x, &y).unwrap();
            let p = psnr(&x, &y, 1.0).unwrap();
            prop_assert!((p - (20.0 * 1f64.log10() - 20.0 * r.log10())).abs() < 1e-9);
        }

        #[test]
        fn nmse_scale_covariance(alpha in 0.0f32..0.9, seed in 0u64..10_000) {
            let dims = GridDims::cube(3, 3, 3).unwrap();
            let t = random(dims, seed);
            let p = vol(dims, t.as_slice().iter().map(|v| v * alpha).collect());
            let got = nmse(&p, &t).unwrap();
            let want = (f64::from(alpha) - 1.0).powi(2);
            prop_assert!((got - want).abs() < 1e-5 * want, "{got} vs {want}");
        }
    }
}
