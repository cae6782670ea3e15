use crate::math::{Angles, Vec3};
use crate::{Error, Result};

pub const CONDITION_DIM: usize = 8;

/// `[d, x, y, z, sin(az), cos(az), sin(el), cos(el)]` of the Rx relative to
/// the Tx.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometryCondition(pub [f64; CONDITION_DIM]);

impl GeometryCondition {
    pub fn as_array(&self) -> &[f64; CONDITION_DIM] {
        &self.0
    }

    pub fn distance(&self) -> f64 {
        self.0[0]
    }

    pub fn relative_position(&self) -> Vec3 {
        Vec3::new(self.0[1], self.0[2], self.0[3])
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

pub fn condition_vector(tx_origin: Vec3, rx_origin: Vec3) -> Result<GeometryCondition> {
    let rel = rx_origin - tx_origin;
    let angles = Angles::of_direction(&rel).ok_or_else(|| {
        Error::DegenerateGeometry(alloc::format!(
            "Rx position {:?} coincides with the Tx",
            rx_origin.0
        ))
    })?;
    let (sa, ca) = libm::sincos(angles.azimuth);
    let (se, ce) = libm::sincos(angles.elevation);
    Ok(GeometryCondition([rel.norm(), rel.x(), rel.y(), rel.z(), sa, ca, se, ce]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn three_four_five() {
        let p = condition_vector(Vec3::ZERO, Vec3::new(3.0, 4.0, 0.0)).unwrap();
        let expected = [5.0, 3.0, 4.0, 0.0, 0.8, 0.6, 0.0, 1.0];
        for (a, b) in p.0.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15, "{:?}", p.0);
        }
    }

    #[test]
    fn axis_aligned() {
        let d = 7.25;
        let p = condition_vector(Vec3::new(1.0, 1.0, 1.0), Vec3::new(1.0 + d, 1.0, 1.0)).unwrap();
        assert_eq!(p.0, [d, d, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn coincident_is_degenerate() {
        let v = Vec3::new(1.0, 2.0, 3.0);
        assert!(matches!(condition_vector(v, v), Err(Error::DegenerateGeometry(_))));
    }

    proptest! {
        #[test]
        fn trig_pairs_are_unit(x in -50.0f64..50.0, y in -50.0f64..50.0, z in -50.0f64..50.0) {
            prop_assume!(x.abs() + y.abs() + z.abs() > 1e-6);
            let p = condition_vector(Vec3::ZERO, Vec3::new(x, y, z)).unwrap().0;
            prop_assert!((p[4] * p[4] + p[5] * p[5] - 1.0).abs() < 1e-12);
            prop_assert!((p[6] * p[6] + p[7] * p[7] - 1.0).abs() < 1e-12);
            prop_assert!((p[0] - (x * x + y * y + z * z).sqrt()).abs() < 1e-12 * p[0].max(1.0));
        }
    }
}
