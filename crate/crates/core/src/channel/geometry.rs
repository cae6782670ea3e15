use alloc::format;
use alloc::vec::Vec;

use crate::math::{cis, sqrt, Angles, Complex64, Vec3, PI, SPEED_OF_LIGHT};
use crate::{Error, Result};

/// Every (sub)array is a uniform linear array along this axis.
pub const ARRAY_AXIS: Vec3 = Vec3::new(0.0, 1.0, 0.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Tx,
    Rx,
}

/// Which elements a steering vector covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subarray {
    Full,
    Index(usize),
}

/// User-facing description of a widely-spaced multi-subarray Tx/Rx pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrayLayout {
    /// Hz.
    pub carrier_frequency: f64,
    pub n_tx: usize,
    pub n_rx: usize,
    pub k_tx: usize,
    pub k_rx: usize,
    /// Element pitch inside a subarray, metres.
    pub intra_spacing: f64,
    /// Pitch between subarray centres, metres.
    pub inter_spacing: f64,
    pub tx_origin: Vec3,
    pub rx_origin: Vec3,
}

impl ArrayLayout {
    /// Half-wavelength element pitch and 16-wavelength subarray pitch, Tx at
    /// the origin and Rx 1 m down the x axis.
    pub fn uniform(carrier_frequency: f64, n_tx: usize, n_rx: usize, k_tx: usize, k_rx: usize) -> Self {
        let wavelength = SPEED_OF_LIGHT / carrier_frequency;
        ArrayLayout {
            carrier_frequency,
            n_tx,
            n_rx,
            k_tx,
            k_rx,
            intra_spacing: wavelength / 2.0,
            inter_spacing: 16.0 * wavelength,
            tx_origin: Vec3::ZERO,
            rx_origin: Vec3::new(1.0, 0.0, 0.0),
        }
    }
}

/// Element and subarray-centre positions of one end of the link.
#[derive(Debug, Clone, PartialEq)]
pub struct ArraySide {
    pub origin: Vec3,
    pub n: usize,
    pub k: usize,
    pub subarray_centers: Vec<Vec3>,
    pub element_positions: Vec<Vec3>,
}

impl ArraySide {
    fn build(origin: Vec3, n: usize, k: usize, intra: f64, inter: f64) -> Self {
        let n_sub = n / k;
        let subarray_centers: Vec<Vec3> = (0..k)
            .map(|i| origin + ARRAY_AXIS.scale((i as f64 - (k as f64 - 1.0) / 2.0) * inter))
            .collect();
        let element_positions = subarray_centers
            .iter()
            .flat_map(|c| {
                (0..n_sub).map(move |m| *c + ARRAY_AXIS.scale((m as f64 - (n_sub as f64 - 1.0) / 2.0) * intra))
            })
            .collect();
        ArraySide {
            origin,
            n,
            k,
            subarray_centers,
            element_positions,
        }
    }

    pub fn n_sub(&self) -> usize {
        self.n / self.k
    }

    /// Element positions and the reference point of a (sub)array.
    pub fn span(&self, which: Subarray) -> Result<(&[Vec3], Vec3)> {
        match which {
            Subarray::Full => Ok((&self.element_positions, self.origin)),
            Subarray::Index(i) if i < self.k => {
                let n_sub = self.n_sub();
                Ok((
                    &self.element_positions[i * n_sub..(i + 1) * n_sub],
                    self.subarray_centers[i],
                ))
            }
            Subarray::Index(i) => Err(Error::IndexOutOfRange {
                what: "subarray",
                index: i,
                count: self.k,
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArrayGeometry {
    layout: ArrayLayout,
    wavelength: f64,
    tx: ArraySide,
    rx: ArraySide,
}

impl ArrayGeometry {
    pub fn new(layout: ArrayLayout) -> Result<Self> {
        validate(&layout)?;
        let wavelength = SPEED_OF_LIGHT / layout.carrier_frequency;
        let tx = ArraySide::build(
            layout.tx_origin,
            layout.n_tx,
            layout.k_tx,
            layout.intra_spacing,
            layout.inter_spacing,
        );
        let rx = ArraySide::build(
            layout.rx_origin,
            layout.n_rx,
            layout.k_rx,
            layout.intra_spacing,
            layout.inter_spacing,
        );
        Ok(ArrayGeometry {
            layout,
            wavelength,
            tx,
            rx,
        })
    }

    /// Same arrays with the receiver moved to `rx_origin`.
    pub fn with_rx_origin(&self, rx_origin: Vec3) -> Result<Self> {
        let mut layout = self.layout.clone();
        layout.rx_origin = rx_origin;
        ArrayGeometry::new(layout)
    }

    pub fn layout(&self) -> &ArrayLayout {
        &self.layout
    }

    pub fn wavelength(&self) -> f64 {
        self.wavelength
    }

    pub fn wavenumber(&self) -> f64 {
        2.0 * PI / self.wavelength
    }

    pub fn n_tx(&self) -> usize {
        self.layout.n_tx
    }
    pub fn n_rx(&self) -> usize {
        self.layout.n_rx
    }
    pub fn k_tx(&self) -> usize {
        self.layout.k_tx
    }
    pub fn k_rx(&self) -> usize {
        self.layout.k_rx
    }

    pub fn side(&self, side: Side) -> &ArraySide {
        match side {
            Side::Tx => &self.tx,
            Side::Rx => &self.rx,
        }
    }

    pub fn tx(&self) -> &ArraySide {
        &self.tx
    }

    pub fn rx(&self) -> &ArraySide {
        &self.rx
    }

    /// Extent between the outermost elements of one subarray.
    pub fn subarray_aperture(&self, side: Side) -> f64 {
        (self.side(side).n_sub() as f64 - 1.0) * self.layout.intra_spacing
    }

    /// Extent between the outermost elements of the whole array.
    pub fn full_aperture(&self, side: Side) -> f64 {
        self.subarray_aperture(side) + (self.side(side).k as f64 - 1.0) * self.layout.inter_spacing
    }
}

fn validate(l: &ArrayLayout) -> Result<()> {
    if !(l.carrier_frequency > 0.0) || !l.carrier_frequency.is_finite() {
        return Err(Error::config("carrier_frequency", "must be positive and finite"));
    }
    for (name, n, kname, k) in [("n_tx", l.n_tx, "k_tx", l.k_tx), ("n_rx", l.n_rx, "k_rx", l.k_rx)] {
        if n == 0 {
            return Err(Error::config(name, "must be at least 1"));
        }
        if k == 0 {
            return Err(Error::config(kname, "must be at least 1"));
        }
        if n % k != 0 {
            return Err(Error::config(kname, format!("{k} does not divide {name} = {n}")));
        }
    }
    if !(l.intra_spacing > 0.0) || !l.intra_spacing.is_finite() {
        return Err(Error::config("intra_spacing", "must be positive and finite"));
    }
    if !(l.inter_spacing >= l.intra_spacing) || !l.inter_spacing.is_finite() {
        return Err(Error::config(
            "inter_spacing",
            format!(
                "{} must be at least intra_spacing = {}",
                l.inter_spacing, l.intra_spacing
            ),
        ));
    }
    for (n, k) in [(l.n_tx, l.k_tx), (l.n_rx, l.k_rx)] {
        let aperture = (n / k) as f64 - 1.0;
        if k > 1 && aperture * l.intra_spacing >= l.inter_spacing {
            return Err(Error::config(
                "inter_spacing",
                format!(
                    "subarray aperture {} m must be smaller than the subarray pitch {} m",
                    aperture * l.intra_spacing,
                    l.inter_spacing
                ),
            ));
        }
    }
    if !l.tx_origin.is_finite() {
        return Err(Error::config("tx_origin", "must be finite"));
    }
    if !l.rx_origin.is_finite() {
        return Err(Error::config("rx_origin", "must be finite"));
    }
    Ok(())
}

/// Unit-norm array response: element `k` is `exp(-j 2pi/lambda <r_k, u>) / sqrt(n)`
/// with `r_k` measured from the (sub)array reference point.
pub fn steering_vector(
    geometry: &ArrayGeometry,
    side: Side,
    which: Subarray,
    angles: Angles,
) -> Result<Vec<Complex64>> {
    if !angles.is_canonical() {
        return Err(Error::invalid(format!(
            "angles ({}, {}) outside (-pi, pi] x [-pi/2, pi/2]",
            angles.azimuth, angles.elevation
        )));
    }
    let (elements, reference) = geometry.side(side).span(which)?;
    Ok(response(elements, reference, &angles.unit_vector(), geometry.wavenumber()))
}

pub(crate) fn response(elements: &[Vec3], reference: Vec3, direction: &Vec3, wavenumber: f64) -> Vec<Complex64> {
    let norm = 1.0 / sqrt(elements.len() as f64);
    elements
        .iter()
        .map(|e| cis(-wavenumber * (*e - reference).dot(direction)) * norm)
        .collect()
}

/// Near/far-field boundary `2 D^2 / lambda`.
pub fn rayleigh_distance(aperture: f64, wavelength: f64) -> Result<f64> {
    if !(aperture > 0.0) || !(wavelength > 0.0) {
        return Err(Error::invalid(format!(
            "rayleigh distance needs positive aperture and wavelength, got {aperture} and {wavelength}"
        )));
    }
    Ok(2.0 * aperture * aperture / wavelength)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear4() -> ArrayGeometry {
        // 4-element single subarray with half-wavelength pitch on both ends
        ArrayGeometry::new(ArrayLayout::uniform(300e9, 4, 4, 1, 1)).unwrap()
    }

    #[test]
    fn broadside_is_flat() {
        let g = linear4();
        // broadside = orthogonal to the y axis
        let v = steering_vector(&g, Side::Tx, Subarray::Full, Angles::new(0.0, 0.0)).unwrap();
        for z in v {
            assert!((z - Complex64::new(0.5, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn endfire_alternates_sign() {
        let g = linear4();
        let v = steering_vector(&g, Side::Rx, Subarray::Full, Angles::new(PI / 2.0, 0.0)).unwrap();
        // Offsets are measured from the array centre, so the whole vector
        // carries one common phase relative to (1/2)[1, -1, 1, -1].
        let common = v[0] / Complex64::new(0.5, 0.0);
        assert!((common.norm() - 1.0).abs() < 1e-12);
        for (k, z) in v.iter().enumerate() {
            let expected = Complex64::new(if k % 2 == 0 { 0.5 } else { -0.5 }, 0.0) * common;
            assert!((z - expected).norm() < 1e-12, "element {k}: {z}");
        }
    }

    #[test]
    fn subarray_index_is_checked() {
        let g = ArrayGeometry::new(ArrayLayout::uniform(300e9, 16, 8, 2, 2)).unwrap();
        assert!(steering_vector(&g, Side::Tx, Subarray::Index(1), Angles::default()).is_ok());
        let err = steering_vector(&g, Side::Tx, Subarray::Index(2), Angles::default()).unwrap_err();
        assert!(matches!(err, Error::IndexOutOfRange { index: 2, count: 2, .. }));
    }

    #[test]
    fn opposite_direction_conjugates() {
        let g = ArrayGeometry::new(ArrayLayout::uniform(300e9, 16, 8, 2, 2)).unwrap();
        let a = Angles::new(0.7, 0.3);
        let v = steering_vector(&g, Side::Tx, Subarray::Full, a).unwrap();
        let w = steering_vector(&g, Side::Tx, Subarray::Full, a.reversed()).unwrap();
        for (x, y) in v.iter().zip(&w) {
            assert!((x.conj() - y).norm() < 1e-12);
        }
    }

    #[test]
    fn element_layout_is_centered_on_subarrays() {
        let g = ArrayGeometry::new(ArrayLayout::uniform(300e9, 16, 8, 2, 2)).unwrap();
        let tx = g.tx();
        assert_eq!(tx.element_positions.len(), 16);
        for k in 0..2 {
            let (els, c) = tx.span(Subarray::Index(k)).unwrap();
            let mean = els.iter().fold(Vec3::ZERO, |a, e| a + *e).scale(1.0 / els.len() as f64);
            assert!(mean.distance(&c) < 1e-15);
        }
        let lambda = g.wavelength();
        assert!((g.subarray_aperture(Side::Tx) - 3.5 * lambda).abs() < 1e-15);
        assert!((g.full_aperture(Side::Tx) - 19.5 * lambda).abs() < 1e-15);
    }

    #[test]
    fn layout_validation_names_fields() {
        let mut l = ArrayLayout::uniform(300e9, 16, 8, 3, 2);
        match ArrayGeometry::new(l.clone()).unwrap_err() {
            Error::Config { field, .. } => assert_eq!(field, "k_tx"),
            e => panic!("{e}"),
        }
        l.k_tx = 2;
        l.inter_spacing = l.intra_spacing * 2.0;
        match ArrayGeometry::new(l).unwrap_err() {
            Error::Config { field, .. } => assert_eq!(field, "inter_spacing"),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn rayleigh_distance_values() {
        let d = rayleigh_distance(0.1275, 0.001).unwrap();
        assert!((d - 32.51).abs() < 0.01, "{d}");
        let d2 = rayleigh_distance(0.255, 0.001).unwrap();
        assert!((d2 / d - 4.0).abs() < 1e-12);
        let d3 = rayleigh_distance(0.1275, 0.002).unwrap();
        assert!((d3 / d - 0.5).abs() < 1e-12);
        assert!(rayleigh_distance(0.0, 1.0).is_err());
        assert!(rayleigh_distance(1.0, -1.0).is_err());
    }
}
