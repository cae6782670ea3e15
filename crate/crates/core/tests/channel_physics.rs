//! Cross-module checks of the channel generator against brute-force oracles.

use thzgen_core::beamspace::{block_dictionary, dft_dictionary, from_beamspace, to_beamspace};
use thzgen_core::channel::{
    draw_paths, hpsm_channel, pwm_channel, rayleigh_distance, swm_channel, ArrayGeometry, ArrayLayout, ChannelMatrix,
    GscmConfig, Path, PathSet, Side,
};
use thzgen_core::math::{Angles, CMatrix, Complex64, Vec3};
use thzgen_core::metrics::{angular_power, nmse};
use thzgen_core::rng::{standard_normal, stream_rng};

use rand::Rng;

fn full_array(n_tx: usize, n_rx: usize) -> ArrayGeometry {
    let mut l = ArrayLayout::uniform(300e9, n_tx, n_rx, 1, 1);
    l.inter_spacing = 1.0;
    ArrayGeometry::new(l).unwrap()
}

fn toy_geometry() -> ArrayGeometry {
    ArrayGeometry::new(ArrayLayout::uniform(300e9, 16, 8, 2, 2)).unwrap()
}

/// Axis projection of the DFT grid direction of bin `p` out of `n`.
fn grid_projection(p: usize, n: usize) -> f64 {
    let u = 2.0 * p as f64 / n as f64;
    if u > 1.0 {
        u - 2.0
    } else {
        u
    }
}

fn nearest_bin(u_axis: f64, n: usize) -> usize {
    let p = (u_axis * n as f64 / 2.0).round() as i64;
    p.rem_euclid(n as i64) as usize
}

#[test]
fn on_grid_planar_path_occupies_one_beam_bin() {
    let (n_tx, n_rx) = (16, 8);
    let geo = full_array(n_tx, n_rx);
    let alpha = 0.7;
    for (pt, pr) in [(0, 0), (3, 5), (12, 1), (7, 2)] {
        let aod = Angles::new(grid_projection(pt, n_tx).asin(), 0.0);
        let aoa = Angles::new(grid_projection(pr, n_rx).asin(), 0.0);
        let paths = PathSet::new(vec![Path {
            gain_magnitude: alpha,
            global_phase: 0.4,
            scatterer: None,
            aod,
            aoa,
        }])
        .unwrap();
        let h = pwm_channel(&paths, &geo).unwrap();
        let hb = to_beamspace(&h, &dft_dictionary(n_rx).unwrap(), &dft_dictionary(n_tx).unwrap()).unwrap();
        // brute force over every bin
        for r in 0..n_rx {
            for c in 0..n_tx {
                let m = hb.matrix[(r, c)].norm();
                if (r, c) == (pr, pt) {
                    assert!((m - alpha).abs() < 1e-10, "bin ({r},{c}) = {m}");
                } else {
                    assert!(m < 1e-10, "leak at ({r},{c}) = {m}");
                }
            }
        }
    }
}

#[test]
fn beamspace_round_trip_random_matrices() {
    for (n_rx, n_tx, k) in [(8, 16, 2), (64, 256, 4)] {
        let rx = block_dictionary(k, n_rx / k).unwrap();
        let tx = block_dictionary(k, n_tx / k).unwrap();
        let mut rng = stream_rng(42, n_rx as u64);
        for _ in 0..100 {
            let h = ChannelMatrix::spatial(CMatrix::from_fn(n_rx, n_tx, |_, _| {
                Complex64::new(standard_normal(&mut rng), standard_normal(&mut rng))
            }));
            let hb = to_beamspace(&h, &rx, &tx).unwrap();
            let back = from_beamspace(&hb, &rx, &tx).unwrap();
            let norm = h.matrix.frobenius_norm();
            assert!(back.matrix.sub(&h.matrix).unwrap().frobenius_norm() / norm < 1e-10);
            assert!((hb.matrix.frobenius_norm() - norm).abs() < 1e-10 * norm);
        }
    }
}

#[test]
fn hpsm_beats_pwm_for_los_at_cross_field_range() {
    let layout = ArrayLayout::uniform(300e9, 64, 64, 4, 4);
    let geo = ArrayGeometry::new(layout).unwrap();
    let lambda = geo.wavelength();
    let d_sub = rayleigh_distance(geo.subarray_aperture(Side::Tx), lambda).unwrap();
    let d_full = rayleigh_distance(geo.full_aperture(Side::Tx), lambda).unwrap();
    let d = (d_sub * d_full).sqrt();
    assert!(d_sub < d && d < d_full);
    let geo = geo.with_rx_origin(Vec3::new(d * 0.9, d * 0.3, 0.05)).unwrap();
    let paths = PathSet::new(vec![Path::los(&geo).unwrap()]).unwrap();
    let swm = swm_channel(&paths, &geo).unwrap();
    let hpsm = hpsm_channel(&paths, &geo).unwrap();
    let pwm = pwm_channel(&paths.far_field(&geo).unwrap(), &geo).unwrap();
    let e_h = nmse(&hpsm.matrix, &swm.matrix).unwrap();
    let e_p = nmse(&pwm.matrix, &swm.matrix).unwrap();
    assert!(e_h < e_p, "hpsm {e_h} vs pwm {e_p}");
}

fn los_dominant() -> GscmConfig {
    GscmConfig {
        k_factor_mean_db: 60.0,
        k_factor_std_db: 0.0,
        ..GscmConfig::default()
    }
}

fn random_rx<R: Rng>(rng: &mut R) -> Vec3 {
    Vec3::new(rng.random_range(3.0..6.0), rng.random_range(-2.0..2.0), 0.0)
}

#[test]
fn strong_los_energy_sits_in_los_bins() {
    let base = toy_geometry();
    let (rx_d, tx_d) = (block_dictionary(2, 4).unwrap(), block_dictionary(2, 8).unwrap());
    let mut rng = stream_rng(3, 0);
    for _ in 0..100 {
        let geo = base.with_rx_origin(random_rx(&mut rng)).unwrap();
        let paths = draw_paths(&mut rng, &los_dominant(), &geo).unwrap();
        let los = PathSet::new(paths.paths().iter().copied().filter(Path::is_los).collect()).unwrap();
        let full = to_beamspace(&swm_channel(&paths, &geo).unwrap(), &rx_d, &tx_d).unwrap();
        let los_b = to_beamspace(&swm_channel(&los, &geo).unwrap(), &rx_d, &tx_d).unwrap();
        // smallest bin set holding 99.5% of the LoS-only energy
        let mut bins: Vec<(usize, f64)> =
            los_b.matrix.as_slice().iter().map(|z| z.norm_sqr()).enumerate().collect();
        bins.sort_by(|a, b| b.1.total_cmp(&a.1));
        let los_total: f64 = bins.iter().map(|b| b.1).sum();
        let mut acc = 0.0;
        let mut set = Vec::new();
        for (i, e) in bins {
            if acc >= 0.995 * los_total {
                break;
            }
            acc += e;
            set.push(i);
        }
        let total = full.matrix.frobenius_norm_sqr();
        let inside: f64 = set.iter().map(|&i| full.matrix.as_slice()[i].norm_sqr()).sum();
        assert!(inside / total >= 0.99, "{}", inside / total);
    }
}

#[test]
fn strong_los_argmax_matches_los_grid_bin() {
    let base = toy_geometry();
    let (rx_d, tx_d) = (block_dictionary(2, 4).unwrap(), block_dictionary(2, 8).unwrap());
    let mut rng = stream_rng(4, 0);
    for _ in 0..100 {
        let geo = base.with_rx_origin(random_rx(&mut rng)).unwrap();
        let paths = draw_paths(&mut rng, &los_dominant(), &geo).unwrap();
        let hb = to_beamspace(&swm_channel(&paths, &geo).unwrap(), &rx_d, &tx_d).unwrap();
        let map = angular_power(&[hb]).unwrap();
        let u = Angles::of_direction(&(geo.rx().origin - geo.tx().origin)).unwrap().unit_vector().y();
        let argmax = |v: &[f64]| (0..v.len()).max_by(|&a, &b| v[a].total_cmp(&v[b])).unwrap();
        // every subarray block shares one DFT grid, so compare within-block bins
        assert_eq!(argmax(&map.tx_profile) % 8, nearest_bin(u, 8), "u = {u}");
        assert_eq!(argmax(&map.rx_profile) % 4, nearest_bin(u, 4), "u = {u}");
    }
}

/// Fraction of energy in the strongest 5% of entries.
fn top_fraction(m: &CMatrix) -> f64 {
    let mut e: Vec<f64> = m.as_slice().iter().map(|z| z.norm_sqr()).collect();
    e.sort_by(|a, b| b.total_cmp(a));
    let k = (e.len() as f64 * 0.05).ceil() as usize;
    e[..k].iter().sum::<f64>() / e.iter().sum::<f64>()
}

#[test]
fn beamspace_is_sparser_than_spatial() {
    let base = toy_geometry();
    let (rx_d, tx_d) = (block_dictionary(2, 4).unwrap(), block_dictionary(2, 8).unwrap());
    let cfg = GscmConfig {
        n_clusters: 2,
        rays_per_cluster: 3,
        ..GscmConfig::default()
    };
    let mut rng = stream_rng(5, 0);
    for _ in 0..100 {
        let geo = base.with_rx_origin(random_rx(&mut rng)).unwrap();
        let h = swm_channel(&draw_paths(&mut rng, &cfg, &geo).unwrap(), &geo).unwrap();
        let hb = to_beamspace(&h, &rx_d, &tx_d).unwrap();
        assert!(top_fraction(&hb.matrix) > top_fraction(&h.matrix));
    }
}

#[test]
fn path_draws_change_with_seed() {
    let geo = toy_geometry().with_rx_origin(Vec3::new(4.0, 1.0, 0.0)).unwrap();
    let cfg = GscmConfig::default();
    let a = swm_channel(&draw_paths(&mut stream_rng(1, 0), &cfg, &geo).unwrap(), &geo).unwrap();
    let b = swm_channel(&draw_paths(&mut stream_rng(2, 0), &cfg, &geo).unwrap(), &geo).unwrap();
    assert!(a.matrix.sub(&b.matrix).unwrap().frobenius_norm() > 0.0);
}
