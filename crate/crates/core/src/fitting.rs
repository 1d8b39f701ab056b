//! Least-squares coefficient determination, aggregation into per-coefficient
//! bounds, and oversampling of new target models.
//!
//! Each fit minimizes `sum_u (P_meas(u) - rho(u, q; phi))^2` over the entries
//! of one masked measurement set. The design matrix has one row
//! `[1, log10 d3, log10 d2, P_base(u)]` per entry and is solved with a
//! Householder QR factorization; normal equations are never formed.

use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::channel_model::{distances, Point3, TargetCoefficients};
use crate::error::{Error, Result};
use crate::propagate2d::BaseMap3D;
use crate::seed;

/// Systems at or above this 2-norm condition number are rejected.
pub const MAX_CONDITION: f64 = 1e10;

pub const MIN_SAMPLES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub u: Point3,
    pub value_db: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskedMeasurements {
    pub tx: Point3,
    pub entries: Vec<Measurement>,
}

#[derive(Debug, Deserialize)]
struct CsvRow {
    x: f64,
    y: f64,
    z: f64,
    rss_db: f64,
}

impl MaskedMeasurements {
    pub fn new(tx: Point3, entries: Vec<Measurement>) -> Self {
        MaskedMeasurements { tx, entries }
    }

    /// Reads a `x,y,z,rss_db` CSV with positions in meters.
    pub fn from_csv(path: impl AsRef<Path>, tx: Point3) -> Result<Self> {
        let path = path.as_ref();
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        let headers = reader
            .headers()
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?
            .clone();
        if headers.iter().collect::<Vec<_>>() != ["x", "y", "z", "rss_db"] {
            return Err(Error::Format(format!(
                "{}: expected header x,y,z,rss_db, got {}",
                path.display(),
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut entries = Vec::new();
        for (line, row) in reader.deserialize::<CsvRow>().enumerate() {
            let row = row.map_err(|e| Error::Format(format!("{}: row {}: {e}", path.display(), line + 2)))?;
            entries.push(Measurement {
                u: Point3::new(row.x, row.y, row.z),
                value_db: row.rss_db,
            });
        }
        Ok(MaskedMeasurements::new(tx, entries))
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
        w.write_record(["x", "y", "z", "rss_db"])
            .map_err(|e| Error::Format(e.to_string()))?;
        for m in &self.entries {
            w.write_record(&[
                m.u.x.to_string(),
                m.u.y.to_string(),
                m.u.z.to_string(),
                m.value_db.to_string(),
            ])
            .map_err(|e| Error::Format(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    #[serde(flatten)]
    pub phi: TargetCoefficients,
    pub residual_rmse_db: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition_number: Option<f64>,
}

/// Solution of an overdetermined least-squares problem.
#[derive(Debug, Clone)]
pub struct LeastSquares<const N: usize> {
    pub x: [f64; N],
    pub residuals: Vec<f64>,
    pub condition: f64,
}

/// Minimizes `|A x - b|` with Householder QR. `rows` holds A row by row.
pub fn solve_least_squares<const N: usize>(rows: &[[f64; N]], b: &[f64]) -> Result<LeastSquares<N>> {
    let m = rows.len();
    if m < N {
        return Err(Error::TooFewSamples { needed: N, got: m });
    }
    assert_eq!(b.len(), m, "right-hand side length must match row count");

    // Column-major working copy.
    let mut a: Vec<Vec<f64>> = (0..N).map(|j| rows.iter().map(|r| r[j]).collect()).collect();
    let mut qtb = b.to_vec();
    let mut r = [[0.0f64; N]; N];

    for k in 0..N {
        let norm = a[k][k..].iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            // Column already zero below the diagonal: R[k][k] = 0, rank deficient.
            for (j, col) in a.iter().enumerate().skip(k + 1) {
                r[k][j] = col[k];
            }
            continue;
        }
        let alpha = if a[k][k] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = a[k][k..].to_vec();
        v[0] -= alpha;
        let vtv: f64 = v.iter().map(|t| t * t).sum();
        r[k][k] = alpha;
        for j in (k + 1)..N {
            let col = &mut a[j][k..];
            let s = 2.0 * v.iter().zip(col.iter()).map(|(p, q)| p * q).sum::<f64>() / vtv;
            col.iter_mut().zip(&v).for_each(|(c, p)| *c -= s * p);
            r[k][j] = col[0];
        }
        let tail = &mut qtb[k..];
        let s = 2.0 * v.iter().zip(tail.iter()).map(|(p, q)| p * q).sum::<f64>() / vtv;
        tail.iter_mut().zip(&v).for_each(|(c, p)| *c -= s * p);
    }

    let condition = condition_number(&r);
    if !(condition < MAX_CONDITION) {
        return Err(Error::SingularDesign { condition });
    }

    let mut x = [0.0f64; N];
    for i in (0..N).rev() {
        let s: f64 = ((i + 1)..N).map(|j| r[i][j] * x[j]).sum();
        x[i] = (qtb[i] - s) / r[i][i];
    }
    let residuals = rows
        .iter()
        .zip(b)
        .map(|(row, &bi)| bi - row.iter().zip(&x).map(|(p, q)| p * q).sum::<f64>())
        .collect();
    Ok(LeastSquares { x, residuals, condition })
}

/// 2-norm condition number of the triangular factor, which equals that of A.
fn condition_number<const N: usize>(r: &[[f64; N]; N]) -> f64 {
    let m = nalgebra::DMatrix::from_fn(N, N, |i, j| r[i][j]);
    let sv = m.singular_values();
    let max = sv.max();
    let min = sv.min();
    if min == 0.0 || !min.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Design row `[1, log10 d3, log10 d2, P_base(u)]` for one entry.
pub fn design_row(u: &Point3, tx: &Point3, base: &BaseMap3D) -> Result<[f64; 4]> {
    let (d2, d3) = distances(u, tx);
    if !(d2 > 0.0) {
        return Err(Error::DegenerateGeometry(format!(
            "measurement at ({}, {}, {}) shares the transmitter's vertical column",
            u.x, u.y, u.z
        )));
    }
    let p = f64::from(base.value_at(u)?);
    Ok([1.0, d3.log10(), d2.log10(), p])
}

pub fn fit_coefficients(meas: &MaskedMeasurements, base: &BaseMap3D) -> Result<FitReport> {
    let n = meas.entries.len();
    if n < MIN_SAMPLES {
        return Err(Error::TooFewSamples {
            needed: MIN_SAMPLES,
            got: n,
        });
    }
    let rows = meas
        .entries
        .iter()
        .map(|m| design_row(&m.u, &meas.tx, base))
        .collect::<Result<Vec<_>>>()?;
    let b: Vec<f64> = meas.entries.iter().map(|m| m.value_db).collect();
    if let Some(i) = b.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteValue { index: i });
    }
    let sol = solve_least_squares(&rows, &b)?;
    let rmse = (sol.residuals.iter().map(|r| r * r).sum::<f64>() / n as f64).sqrt();
    Ok(FitReport {
        phi: TargetCoefficients::from_array(sol.x),
        residual_rmse_db: rmse,
        condition_number: Some(sol.condition),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoefficientBounds {
    pub a: [f64; 2],
    pub b: [f64; 2],
    pub c: [f64; 2],
    pub e: [f64; 2],
}

impl CoefficientBounds {
    pub fn as_array(&self) -> [[f64; 2]; 4] {
        [self.a, self.b, self.c, self.e]
    }

    pub fn validate(&self) -> Result<()> {
        for (name, [lo, hi]) in ["a", "b", "c", "e"].iter().zip(self.as_array()) {
            if !(lo.is_finite() && hi.is_finite()) {
                return Err(Error::EmptyInput(format!(
                    "coefficient {name} has an unbounded interval [{lo}, {hi}]"
                )));
            }
            if lo > hi {
                return Err(Error::InvalidParams(format!(
                    "coefficient {name} interval [{lo}, {hi}] is inverted"
                )));
            }
        }
        Ok(())
    }

    pub fn contains(&self, phi: &TargetCoefficients) -> bool {
        self.as_array()
            .iter()
            .zip(phi.to_array())
            .all(|([lo, hi], v)| *lo <= v && v <= *hi)
    }
}

/// Fitted coefficient vectors plus their bounding intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSpace {
    pub fitted: Vec<TargetCoefficients>,
    pub bounds: CoefficientBounds,
}

impl CoefficientSpace {
    /// A space specified directly by its intervals.
    pub fn from_bounds(bounds: CoefficientBounds) -> Result<Self> {
        bounds.validate()?;
        Ok(CoefficientSpace {
            fitted: Vec::new(),
            bounds,
        })
    }
}

/// Componentwise min/max over the fitted vectors.
pub fn aggregate(fits: &[TargetCoefficients]) -> Result<CoefficientSpace> {
    let first = fits
        .first()
        .ok_or_else(|| Error::EmptyInput("no fitted coefficients to aggregate".into()))?;
    for f in fits {
        f.validate()?;
    }
    let mut b = first.to_array().map(|v| [v, v]);
    for f in &fits[1..] {
        for (slot, v) in b.iter_mut().zip(f.to_array()) {
            slot[0] = slot[0].min(v);
            slot[1] = slot[1].max(v);
        }
    }
    Ok(CoefficientSpace {
        fitted: fits.to_vec(),
        bounds: CoefficientBounds {
            a: b[0],
            b: b[1],
            c: b[2],
            e: b[3],
        },
    })
}

/// Draws `count` target models, each coefficient independently uniform over
/// its interval.
pub fn oversample(space: &CoefficientSpace, count: usize, seed: u64) -> Result<Vec<TargetCoefficients>> {
    space.bounds.validate()?;
    if count == 0 {
        return Err(Error::InvalidParams("oversample count must be >= 1".into()));
    }
    let mut rng = seed::child_rng(seed, "oversample", 0);
    let intervals = space.bounds.as_array();
    Ok((0..count)
        .map(|_| {
            TargetCoefficients::from_array(intervals.map(|[lo, hi]| {
                let t: f64 = rng.random();
                if lo == hi {
                    lo
                } else {
                    (lo + (hi - lo) * t).clamp(lo, hi)
                }
            }))
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{generate_city, CityGenParams};
    use crate::grid::{GridDims, Voxel};
    use crate::propagate2d::{predict_volume, Base2DParams};
    use rand::seq::index::sample;
    use rand_distr::{Distribution, Normal};

    const PHI0: TargetCoefficients = TargetCoefficients::new(-30.0, -20.0, -5.0, 0.8);

    struct Scene {
        dims: GridDims,
        base: BaseMap3D,
        free: Vec<usize>,
        tx: Point3,
    }

    fn scene() -> Scene {
        let dims = GridDims::cube(32, 32, 32).unwrap();
        let env = generate_city(dims, &CityGenParams::default_for(&dims), 3).unwrap();
        let txv = Voxel::new(18, 18, 1);
        let base = predict_volume(&env, (txv.x, txv.y), 20.0, &Base2DParams::default()).unwrap();
        let free = env
            .free_voxels()
            .filter(|&i| {
                let v = dims.voxel_at(i);
                (v.x, v.y) != (txv.x, txv.y)
            })
            .collect();
        Scene {
            dims,
            base,
            free,
            tx: dims.center(txv),
        }
    }

    fn measurements(s: &Scene, phi: &TargetCoefficients, n: usize, noise: f64, seed: u64) -> MaskedMeasurements {
        let mut rng = seed::rng(seed);
        let normal = Normal::new(0.0, noise.max(f64::MIN_POSITIVE)).unwrap();
        let picks = sample(&mut rng, s.free.len(), n);
        let entries = picks
            .iter()
            .map(|i| {
                let u = s.dims.center(s.dims.voxel_at(s.free[i]));
                let clean = crate::channel_model::eval_target(&u, &s.tx, phi, &s.base).unwrap();
                let eps = if noise > 0.0 { normal.sample(&mut rng) } else { 0.0 };
                Measurement { u, value_db: clean + eps }
            })
            .collect();
        MaskedMeasurements::new(s.tx, entries)
    }

    fn gram(rows: &[[f64; 4]]) -> nalgebra::Matrix4<f64> {
        let mut g = nalgebra::Matrix4::zeros();
        for r in rows {
            for i in 0..4 {
                for j in 0..4 {
                    g[(i, j)] += r[i] * r[j];
                }
            }
        }
        g
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn exact_recovery() {
        let s = scene();
        let m = measurements(&s, &PHI0, 50, 0.0, 1);
        let fit = fit_coefficients(&m, &s.base).unwrap();
        for (got, want) in fit.phi.to_array().iter().zip(PHI0.to_array()) {
            assert!(rel_err(*got, want) < 1e-6, "{got} vs {want}");
        }
        assert!(fit.residual_rmse_db < 1e-8);
    }

    #[test]
    fn rank_one_design_is_singular() {
        let s = scene();
        let u = s.dims.center(s.dims.voxel_at(s.free[10]));
        let entries = vec![Measurement { u, value_db: -70.0 }; 8];
        assert!(matches!(
            fit_coefficients(&MaskedMeasurements::new(s.tx, entries), &s.base),
            Err(Error::SingularDesign { .. })
        ));
    }

    #[test]
    fn input_errors() {
        let s = scene();
        let m = measurements(&s, &PHI0, 3, 0.0, 1);
        assert!(matches!(
            fit_coefficients(&m, &s.base),
            Err(Error::TooFewSamples { needed: 4, got: 3 })
        ));
        let mut m = measurements(&s, &PHI0, 10, 0.0, 1);
        m.entries[4].u = Point3::new(s.tx.x, s.tx.y, s.tx.z + 3.0);
        assert!(matches!(
            fit_coefficients(&m, &s.base),
            Err(Error::DegenerateGeometry(_))
        ));
    }

    #[test]
    fn noisy_fit_statistics() {
        let s = scene();
        let trials = 100;
        let mut rmse_ok = 0;
        let mut slope_ok = 0;
        for seed in 0..trials {
            let m = measurements(&s, &PHI0, 500, 1.0, 1000 + seed);
            let fit = fit_coefficients(&m, &s.base).unwrap();
            if (0.8..=1.2).contains(&fit.residual_rmse_db) {
                rmse_ok += 1;
            }
            if (fit.phi.b - PHI0.b).abs() < 1.0 {
                slope_ok += 1;
            }
        }
        assert_eq!(rmse_ok, trials, "residual RMSE outside [0.8, 1.2]");
        assert!(slope_ok >= 95, "only {slope_ok}/100 slopes within 1 dB/decade");
    }

    #[test]
    fn residual_orthogonal_to_columns() {
        let s = scene();
        let m = measurements(&s, &PHI0, 200, 2.0, 9);
        let rows: Vec<_> = m.entries.iter().map(|e| design_row(&e.u, &s.tx, &s.base).unwrap()).collect();
        let b: Vec<f64> = m.entries.iter().map(|e| e.value_db).collect();
        let sol = solve_least_squares(&rows, &b).unwrap();
        for j in 0..4 {
            let dot: f64 = rows.iter().zip(&sol.residuals).map(|(r, e)| r[j] * e).sum();
            let norm = rows.iter().map(|r| r[j] * r[j]).sum::<f64>().sqrt();
            assert!(dot.abs() < 1e-6 * norm, "column {j}: {dot}");
        }
    }

    #[test]
    fn qr_agrees_with_normal_equations() {
        let s = scene();
        let m = measurements(&s, &PHI0, 120, 1.5, 4);
        let rows: Vec<_> = m.entries.iter().map(|e| design_row(&e.u, &s.tx, &s.base).unwrap()).collect();
        let b: Vec<f64> = m.entries.iter().map(|e| e.value_db).collect();
        let sol = solve_least_squares(&rows, &b).unwrap();
        let g = gram(&rows);
        let mut atb = nalgebra::Vector4::zeros();
        for (r, bi) in rows.iter().zip(&b) {
            for j in 0..4 {
                atb[j] += r[j] * bi;
            }
        }
        let x = g.lu().solve(&atb).unwrap();
        for j in 0..4 {
            assert!((x[j] - sol.x[j]).abs() < 1e-6 * x[j].abs().max(1.0));
        }
    }

    #[test]
    fn permutation_invariant() {
        let s = scene();
        let m = measurements(&s, &PHI0, 80, 1.0, 5);
        let fit = fit_coefficients(&m, &s.base).unwrap();
        let mut rev = m.clone();
        rev.entries.reverse();
        let fit2 = fit_coefficients(&rev, &s.base).unwrap();
        for (p, q) in fit.phi.to_array().iter().zip(fit2.phi.to_array()) {
            assert!((p - q).abs() <= 1e-12 * p.abs().max(1.0), "{p} vs {q}");
        }
    }

    #[test]
    fn aggregate_examples() {
        let phi = TargetCoefficients::new(1.0, -2.0, 3.0, 0.5);
        let one = aggregate(&[phi]).unwrap();
        assert_eq!(one.bounds.a, [1.0, 1.0]);
        assert_eq!(one.bounds.e, [0.5, 0.5]);

        let two = aggregate(&[
            TargetCoefficients::new(0.0, -10.0, 0.0, 1.0),
            TargetCoefficients::new(2.0, -30.0, -5.0, 0.5),
        ])
        .unwrap();
        assert_eq!(two.bounds.a, [0.0, 2.0]);
        assert_eq!(two.bounds.b, [-30.0, -10.0]);
        assert_eq!(two.bounds.c, [-5.0, 0.0]);
        assert_eq!(two.bounds.e, [0.5, 1.0]);
        assert!(two.fitted.iter().all(|f| two.bounds.contains(f)));

        assert!(matches!(aggregate(&[]), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn oversample_examples() {
        let phi = TargetCoefficients::new(1.0, -2.0, 3.0, 0.5);
        let collapsed = aggregate(&[phi]).unwrap();
        assert!(oversample(&collapsed, 7, 1).unwrap().iter().all(|p| *p == phi));

        let space = aggregate(&[
            TargetCoefficients::new(0.0, -10.0, 0.0, 1.0),
            TargetCoefficients::new(2.0, -30.0, -5.0, 0.5),
        ])
        .unwrap();
        let draws = oversample(&space, 25, 3).unwrap();
        assert_eq!(draws.len(), 25);
        assert!(draws.iter().all(|p| space.bounds.contains(p)));
        assert_eq!(draws, oversample(&space, 25, 3).unwrap());
        assert_ne!(draws, oversample(&space, 25, 4).unwrap());

        let unbounded = CoefficientSpace {
            fitted: vec![],
            bounds: CoefficientBounds {
                a: [0.0, f64::INFINITY],
                ..space.bounds
            },
        };
        assert!(matches!(oversample(&unbounded, 3, 0), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn oversample_mean_converges_to_midpoint() {
        let space = aggregate(&[
            TargetCoefficients::new(-35.0, -25.0, -8.0, 0.6),
            TargetCoefficients::new(-25.0, -15.0, -2.0, 1.0),
        ])
        .unwrap();
        let n = 100_000;
        let draws = oversample(&space, n, 17).unwrap();
        for (k, [lo, hi]) in space.bounds.as_array().iter().enumerate() {
            let mean = draws.iter().map(|p| p.to_array()[k]).sum::<f64>() / n as f64;
            let mid = 0.5 * (lo + hi);
            assert!((mean - mid).abs() < 0.01 * (hi - lo), "coefficient {k}: {mean}");
        }
    }
}
