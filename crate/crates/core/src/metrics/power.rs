use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::channel::{ChannelMatrix, Domain};
use crate::math::{sqrt, RealMatrix};
use crate::{Error, Result};

/// Mean beamspace power and its Rx (row) / Tx (column) marginals.
#[derive(Debug, Clone, PartialEq)]
pub struct AngularPowerMap {
    /// Element-wise mean of `|H_b|^2`.
    pub mean_power: RealMatrix,
    pub tx_profile: Vec<f64>,
    pub rx_profile: Vec<f64>,
    pub sample_count: usize,
}

impl AngularPowerMap {
    pub fn total(&self) -> f64 {
        self.tx_profile.iter().sum()
    }

    /// Sums the `k_rx × k_tx` subarray blocks of a block-dictionary map so
    /// each bin is one physical angle. The same angle grid repeats in every
    /// block, so an unfolded argmax is split between near-equal duplicates.
    pub fn fold_blocks(&self, k_rx: usize, k_tx: usize) -> Result<AngularPowerMap> {
        let (rows, cols) = self.mean_power.shape();
        if k_rx == 0 || k_tx == 0 || rows % k_rx != 0 || cols % k_tx != 0 {
            return Err(Error::invalid(format!(
                "cannot fold a {rows}x{cols} map into {k_rx}x{k_tx} blocks"
            )));
        }
        let (br, bc) = (rows / k_rx, cols / k_tx);
        let mut acc = vec![0.0; br * bc];
        for r in 0..rows {
            for c in 0..cols {
                acc[(r % br) * bc + c % bc] += self.mean_power.get(r, c);
            }
        }
        let fold = |v: &[f64], n: usize| -> Vec<f64> {
            let mut out = vec![0.0; n];
            v.iter().enumerate().for_each(|(i, x)| out[i % n] += x);
            out
        };
        Ok(AngularPowerMap {
            mean_power: RealMatrix::new(br, bc, acc)?,
            tx_profile: fold(&self.tx_profile, bc),
            rx_profile: fold(&self.rx_profile, br),
            sample_count: self.sample_count,
        })
    }
}

/// Averages `|H_b|^2` over beamspace channels of equal size. Pass a single
/// channel for a per-sample map.
pub fn angular_power(samples: &[ChannelMatrix]) -> Result<AngularPowerMap> {
    let first = samples
        .first()
        .ok_or_else(|| Error::invalid("angular power needs at least one sample"))?;
    let (rows, cols) = first.matrix.shape();
    let mut acc = vec![0.0; rows * cols];
    for (i, s) in samples.iter().enumerate() {
        s.expect_domain(Domain::Beamspace).map_err(|e| e.at_sample(i))?;
        if s.matrix.shape() != (rows, cols) {
            return Err(Error::dims(
                "angular power sample",
                format!("{rows}x{cols}"),
                format!("{}x{}", s.n_rx(), s.n_tx()),
            )
            .at_sample(i));
        }
        for (a, z) in acc.iter_mut().zip(s.matrix.as_slice()) {
            *a += z.norm_sqr();
        }
    }
    let n = samples.len() as f64;
    acc.iter_mut().for_each(|v| *v /= n);
    let mut tx = vec![0.0; cols];
    let mut rx = vec![0.0; rows];
    for r in 0..rows {
        for c in 0..cols {
            let p = acc[r * cols + c];
            rx[r] += p;
            tx[c] += p;
        }
    }
    Ok(AngularPowerMap {
        mean_power: RealMatrix::new(rows, cols, acc)?,
        tx_profile: tx,
        rx_profile: rx,
        sample_count: samples.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SideComparison {
    /// Half the L1 distance between the sum-normalized profiles, in `[0, 1]`.
    pub tv_distance: f64,
    pub cosine_similarity: f64,
    pub argmax_match: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerComparison {
    pub tx: SideComparison,
    pub rx: SideComparison,
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &x)| if x > best.1 { (i, x) } else { best })
        .0
}

fn compare_side(gen: &[f64], reference: &[f64], side: &str) -> Result<SideComparison> {
    if gen.len() != reference.len() {
        return Err(Error::dims("power profile length", reference.len(), gen.len()));
    }
    let (sg, sr): (f64, f64) = (gen.iter().sum(), reference.iter().sum());
    if !(sg > 0.0) || !(sr > 0.0) {
        return Err(Error::invalid(format!("{side} power profile has zero energy")));
    }
    let tv = 0.5 * gen.iter().zip(reference).map(|(g, r)| libm::fabs(g / sg - r / sr)).sum::<f64>();
    let dot: f64 = gen.iter().zip(reference).map(|(g, r)| g * r).sum();
    let norms = sqrt(gen.iter().map(|g| g * g).sum::<f64>()) * sqrt(reference.iter().map(|r| r * r).sum::<f64>());
    Ok(SideComparison {
        tv_distance: tv.clamp(0.0, 1.0),
        cosine_similarity: dot / norms,
        argmax_match: argmax(gen) == argmax(reference),
    })
}

pub fn compare_power(gen: &AngularPowerMap, reference: &AngularPowerMap) -> Result<PowerComparison> {
    Ok(PowerComparison {
        tx: compare_side(&gen.tx_profile, &reference.tx_profile, "Tx")?,
        rx: compare_side(&gen.rx_profile, &reference.rx_profile, "Rx")?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{CMatrix, Complex64};
    use proptest::prelude::*;

    fn single_bin(r: usize, c: usize, m: f64) -> ChannelMatrix {
        let mut h = CMatrix::zeros(4, 6);
        h[(r, c)] = Complex64::new(0.0, m);
        ChannelMatrix::beamspace(h)
    }

    #[test]
    fn single_bin_profiles() {
        let map = angular_power(&[single_bin(2, 5, 3.0)]).unwrap();
        assert_eq!(map.rx_profile, vec![0.0, 0.0, 9.0, 0.0]);
        assert_eq!(map.tx_profile, vec![0.0, 0.0, 0.0, 0.0, 0.0, 9.0]);
        assert_eq!(map.sample_count, 1);
    }

    #[test]
    fn domain_and_shape_checks() {
        let spatial = ChannelMatrix::spatial(CMatrix::zeros(4, 6));
        assert!(matches!(
            angular_power(&[single_bin(0, 0, 1.0), spatial]),
            Err(Error::AtSample { index: 1, .. })
        ));
        let other = ChannelMatrix::beamspace(CMatrix::zeros(3, 6));
        assert!(angular_power(&[single_bin(0, 0, 1.0), other]).is_err());
        assert!(angular_power(&[]).is_err());
    }

    #[test]
    fn identical_and_disjoint_maps() {
        let a = angular_power(&[single_bin(1, 2, 1.0), single_bin(3, 4, 2.0)]).unwrap();
        let same = compare_power(&a, &a).unwrap();
        for s in [same.tx, same.rx] {
            assert_eq!(s.tv_distance, 0.0);
            assert!((s.cosine_similarity - 1.0).abs() < 1e-12);
            assert!(s.argmax_match);
        }
        let x = angular_power(&[single_bin(0, 0, 1.0)]).unwrap();
        let y = angular_power(&[single_bin(3, 5, 1.0)]).unwrap();
        let d = compare_power(&x, &y).unwrap();
        for s in [d.tx, d.rx] {
            assert!((s.tv_distance - 1.0).abs() < 1e-12);
            assert_eq!(s.cosine_similarity, 0.0);
            assert!(!s.argmax_match);
        }
        let zero = angular_power(&[ChannelMatrix::beamspace(CMatrix::zeros(4, 6))]).unwrap();
        assert!(matches!(compare_power(&zero, &x), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn folding_merges_duplicate_angle_bins() {
        // bin 1 of block 0 and bin 1 of block 1 are the same Tx angle
        let mut h = CMatrix::zeros(4, 6);
        h[(0, 1)] = Complex64::new(1.0, 0.0);
        h[(2, 4)] = Complex64::new(0.0, 2.0);
        h[(3, 2)] = Complex64::new(2.0, 0.0);
        let map = angular_power(&[ChannelMatrix::beamspace(h)]).unwrap();
        let f = map.fold_blocks(2, 2).unwrap();
        assert_eq!(f.mean_power.shape(), (2, 3));
        assert_eq!(f.mean_power.as_slice(), &[0.0, 5.0, 0.0, 0.0, 0.0, 4.0]);
        assert_eq!(f.tx_profile, vec![0.0, 5.0, 4.0]);
        assert_eq!(f.rx_profile, vec![5.0, 4.0]);
        assert_eq!(f.total(), map.total());
        assert!(map.fold_blocks(3, 2).is_err());
        assert!(map.fold_blocks(0, 1).is_err());
    }

    fn channel(values: &[(f64, f64)]) -> ChannelMatrix {
        ChannelMatrix::beamspace(
            CMatrix::from_vec(4, 6, values.iter().map(|&(r, i)| Complex64::new(r, i)).collect()).unwrap(),
        )
    }

    proptest! {
        #[test]
        fn profiles_share_total_and_tv_is_bounded(
            a in proptest::collection::vec((-3.0..3.0f64, -3.0..3.0f64), 24),
            b in proptest::collection::vec((-3.0..3.0f64, -3.0..3.0f64), 24),
        ) {
            let ma = angular_power(&[channel(&a)]).unwrap();
            let mb = angular_power(&[channel(&b)]).unwrap();
            let rx_total: f64 = ma.rx_profile.iter().sum();
            prop_assert!((ma.total() - rx_total).abs() <= 1e-9 * rx_total.max(1.0));
            prop_assert!(ma.tx_profile.iter().chain(&ma.rx_profile).all(|v| *v >= 0.0));
            if ma.total() > 0.0 && mb.total() > 0.0 {
                let c = compare_power(&ma, &mb).unwrap();
                prop_assert!((0.0..=1.0).contains(&c.tx.tv_distance));
                prop_assert!((0.0..=1.0).contains(&c.rx.tv_distance));
            }
        }

        #[test]
        fn row_permutation_permutes_rx_profile(
            a in proptest::collection::vec((-3.0..3.0f64, -3.0..3.0f64), 24),
            shift in 1usize..4,
        ) {
            let h = channel(&a);
            let permuted = ChannelMatrix::beamspace(CMatrix::from_fn(4, 6, |r, c| h.matrix[((r + shift) % 4, c)]));
            let p = angular_power(&[h]).unwrap();
            let q = angular_power(&[permuted]).unwrap();
            for r in 0..4 {
                prop_assert_eq!(q.rx_profile[r], p.rx_profile[(r + shift) % 4]);
            }
            for (x, y) in p.tx_profile.iter().zip(&q.tx_profile) {
                prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
            }
        }
    }
}
