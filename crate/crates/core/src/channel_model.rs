//! The parametric target model and its geometric ingredients.
//!
//! The log-scale RSS at a receiver `u` from a transmitter `q` is modeled as
//!
//! ```text
//! rho(u, q; phi) = a + b * log10(d3) + c * log10(d2) + e * P_base(u)
//! ```
//!
//! where `d3` is the 3D distance, `d2` the distance over the X-Y plane and
//! `P_base` the 2D base prediction at `u`. The `b` and `c` terms jointly
//! represent 3D channel fading and the vertical-dipole polarization gain
//! `5 * (log10(d2) - log10(d3))`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::propagate2d::BaseMap3D;

/// A position in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Point3 { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

/// Coefficients `[a, b, c, e]` of the target model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetCoefficients {
    /// dB offset.
    pub a: f64,
    /// dB per decade of 3D distance.
    pub b: f64,
    /// dB per decade of 2D distance.
    pub c: f64,
    /// Weight on the base prediction.
    pub e: f64,
}

impl TargetCoefficients {
    pub const fn new(a: f64, b: f64, c: f64, e: f64) -> Self {
        TargetCoefficients { a, b, c, e }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.a, self.b, self.c, self.e]
    }

    pub fn from_array(v: [f64; 4]) -> Self {
        TargetCoefficients::new(v[0], v[1], v[2], v[3])
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    pub fn validate(&self) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidParams(format!(
                "target coefficients must be finite, got {self:?}"
            )))
        }
    }

    /// Evaluates the model from precomputed distances and base value.
    #[inline]
    pub fn evaluate(&self, d2: f64, d3: f64, base_db: f64) -> f64 {
        self.a + self.b * d3.log10() + self.c * d2.log10() + self.e * base_db
    }
}

/// Returns `(d2, d3)`: the distance over the X-Y plane and the 3D distance.
#[inline]
pub fn distances(u: &Point3, q: &Point3) -> (f64, f64) {
    let dx = u.x - q.x;
    let dy = u.y - q.y;
    let dz = u.z - q.z;
    let h2 = dx * dx + dy * dy;
    (h2.sqrt(), (h2 + dz * dz).sqrt())
}

/// Vertical-dipole gain approximation `5 * (log10(d2) - log10(d3))` in dB.
///
/// Zero in the horizontal plane and increasingly negative towards the
/// vertical axis, where the gain has a null.
pub fn polarization_gain_db(d2: f64, d3: f64) -> Result<f64> {
    if !(d2 > 0.0) {
        return Err(Error::DegenerateGeometry(format!(
            "polarization gain is undefined on the vertical axis (d2 = {d2})"
        )));
    }
    if !(d3 >= d2) {
        return Err(Error::DegenerateGeometry(format!(
            "3D distance {d3} is shorter than 2D distance {d2}"
        )));
    }
    Ok(5.0 * (d2.log10() - d3.log10()))
}

/// Evaluates the target model at `u` for a transmitter at `q`.
pub fn eval_target(
    u: &Point3,
    q: &Point3,
    phi: &TargetCoefficients,
    base: &BaseMap3D,
) -> Result<f64> {
    let (d2, d3) = distances(u, q);
    if !(d2 > 0.0 && d3 > 0.0) {
        return Err(Error::DegenerateGeometry(format!(
            "receiver shares the transmitter's vertical column (d2 = {d2}, d3 = {d3})"
        )));
    }
    let p = base.value_at(u)?;
    Ok(phi.evaluate(d2, d3, f64::from(p)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridDims;
    use proptest::prelude::*;

    fn zero_base() -> BaseMap3D {
        BaseMap3D::constant(GridDims::cube(32, 32, 16).unwrap(), 0.0)
    }

    #[test]
    fn pythagorean_distances() {
        let q = Point3::new(1.0, 1.0, 1.0);
        assert_eq!(distances(&Point3::new(4.0, 5.0, 13.0), &q), (5.0, 13.0));
        assert_eq!(distances(&q, &q), (0.0, 0.0));
        assert_eq!(distances(&Point3::new(1.0, 1.0, 8.0), &q), (0.0, 7.0));
    }

    #[test]
    fn polarization_values() {
        assert_eq!(polarization_gain_db(10.0, 10.0).unwrap(), 0.0);
        // 5 * log10(5 / 13), reference value from a 30-digit mpmath evaluation.
        let g = polarization_gain_db(5.0, 13.0).unwrap();
        assert!((g - -2.074866).abs() < 1e-6, "{g}");
        assert!((g - -2.0748667398540898).abs() < 1e-9, "{g}");
        assert!(matches!(
            polarization_gain_db(0.0, 3.0),
            Err(Error::DegenerateGeometry(_))
        ));
    }

    #[test]
    fn target_examples() {
        let base = zero_base();
        let q = Point3::new(0.5, 0.5, 0.5);
        let u = Point3::new(3.5, 4.5, 12.5);
        let constant = TargetCoefficients::new(-40.0, 0.0, 0.0, 0.0);
        assert_eq!(eval_target(&u, &q, &constant, &base).unwrap(), -40.0);

        let far = Point3::new(q.x + 60.0, q.y + 80.0, q.z);
        let big = BaseMap3D::constant(GridDims::cube(128, 128, 4).unwrap(), 0.0);
        let slope = TargetCoefficients::new(0.0, -20.0, 0.0, 0.0);
        let v = eval_target(&far, &q, &slope, &big).unwrap();
        assert!((v - -40.0).abs() < 1e-12);

        let pol = TargetCoefficients::new(0.0, 5.0, -5.0, 0.0);
        let v = eval_target(&u, &q, &pol, &base).unwrap();
        assert!((v - 2.0748667398540898).abs() < 1e-9, "{v}");
    }

    #[test]
    fn target_rejects_vertical_column() {
        let base = zero_base();
        let q = Point3::new(2.5, 2.5, 0.5);
        let phi = TargetCoefficients::new(1.0, 1.0, 1.0, 1.0);
        assert!(matches!(
            eval_target(&Point3::new(2.5, 2.5, 4.5), &q, &phi, &base),
            Err(Error::DegenerateGeometry(_))
        ));
        assert!(matches!(
            eval_target(&Point3::new(40.0, 2.5, 4.5), &q, &phi, &base),
            Err(Error::OutOfBounds(_))
        ));
    }

    fn coeffs() -> impl Strategy<Value = TargetCoefficients> {
        (-50.0..50.0f64, -30.0..30.0f64, -30.0..30.0f64, -2.0..2.0f64)
            .prop_map(|(a, b, c, e)| TargetCoefficients::new(a, b, c, e))
    }

    fn offset() -> impl Strategy<Value = (f64, f64, f64)> {
        (0.5..200.0f64, 0.0..200.0f64, -50.0..50.0f64)
    }

    proptest! {
        #[test]
        fn linear_in_coefficients(
            p1 in coeffs(), p2 in coeffs(),
            alpha in -3.0..3.0f64, beta in -3.0..3.0f64,
            (dx, dy, dz) in offset(), base in -120.0..0.0f64,
        ) {
            let d2 = (dx * dx + dy * dy).sqrt();
            let d3 = (d2 * d2 + dz * dz).sqrt();
            let mix = TargetCoefficients::new(
                alpha * p1.a + beta * p2.a,
                alpha * p1.b + beta * p2.b,
                alpha * p1.c + beta * p2.c,
                alpha * p1.e + beta * p2.e,
            );
            let lhs = mix.evaluate(d2, d3, base);
            let rhs = alpha * p1.evaluate(d2, d3, base) + beta * p2.evaluate(d2, d3, base);
            let scale = (alpha * p1.evaluate(d2, d3, base)).abs() + (beta * p2.evaluate(d2, d3, base)).abs() + 1.0;
            prop_assert!((lhs - rhs).abs() <= 1e-9 * scale, "{lhs} vs {rhs}");
        }

        #[test]
        fn decreasing_in_3d_distance(b in -40.0..-0.1f64, d2 in 0.5..50.0f64, z1 in 0.0..30.0f64, dz in 0.01..30.0f64) {
            let phi = TargetCoefficients::new(0.0, b, 0.0, 0.0);
            let near = (d2 * d2 + z1 * z1).sqrt();
            let far = (d2 * d2 + (z1 + dz) * (z1 + dz)).sqrt();
            prop_assert!(phi.evaluate(d2, near, 0.0) > phi.evaluate(d2, far, 0.0));
        }

        #[test]
        fn polarization_embedding((dx, dy, dz) in offset(), k in prop::sample::select(vec![1.0, 5.0, 10.0])) {
            let d2 = (dx * dx + dy * dy).sqrt();
            let d3 = (d2 * d2 + dz * dz).sqrt();
            let phi = TargetCoefficients::new(0.0, k, -k, 0.0);
            let v = phi.evaluate(d2, d3, 0.0);
            let g = polarization_gain_db(d2, d3).unwrap();
            prop_assert!((v - k * (d3 / d2).log10()).abs() < 1e-9);
            prop_assert!((v - -(k / 5.0) * g).abs() < 1e-9);
            prop_assert!(g <= 0.0);
        }
    }
}
