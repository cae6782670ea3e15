//! DFT beam dictionaries and the spatial <-> beamspace maps.
//!
//! Dictionaries are unitary (`1/sqrt(n)` normalization, negative exponent), so
//! `H_b = A_R^H H A_T` is an exact, energy-preserving change of basis and its
//! inverse is `H = A_R H_b A_T^H`. Block-diagonal dictionaries are applied
//! block by block.

use alloc::vec;
use alloc::vec::Vec;

use crate::channel::{ChannelMatrix, Domain};
use crate::math::{cis, sqrt, CMatrix, Complex64, PI};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct BeamDictionary {
    matrix: CMatrix,
    blocks: Vec<usize>,
}

impl BeamDictionary {
    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn block_sizes(&self) -> &[usize] {
        &self.blocks
    }

    pub fn size(&self) -> usize {
        self.matrix.rows()
    }

    /// `(offset, size)` of every diagonal block.
    fn block_ranges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.blocks.iter().scan(0, |off, &n| {
            let r = (*off, n);
            *off += n;
            Some(r)
        })
    }
}

/// `n x n` unitary DFT: entry `(a, b) = exp(-j 2 pi a b / n) / sqrt(n)`.
pub fn dft_dictionary(n: usize) -> Result<BeamDictionary> {
    if n == 0 {
        return Err(Error::invalid("DFT dictionary size must be at least 1"));
    }
    Ok(BeamDictionary {
        matrix: dft_matrix(n),
        blocks: vec![n],
    })
}

fn dft_matrix(n: usize) -> CMatrix {
    let norm = 1.0 / sqrt(n as f64);
    // reduce a*b mod n before scaling to keep phases exact for large n
    CMatrix::from_fn(n, n, |a, b| cis(-2.0 * PI * ((a * b) % n) as f64 / n as f64) * norm)
}

/// `blkdiag` of `k` copies of the `n_sub`-point DFT.
pub fn block_dictionary(k: usize, n_sub: usize) -> Result<BeamDictionary> {
    if k == 0 || n_sub == 0 {
        return Err(Error::invalid(alloc::format!(
            "block dictionary needs k >= 1 and n_sub >= 1, got k = {k}, n_sub = {n_sub}"
        )));
    }
    let block = dft_matrix(n_sub);
    let mut m = CMatrix::zeros(k * n_sub, k * n_sub);
    for i in 0..k {
        m.set_block(i * n_sub, i * n_sub, &block);
    }
    Ok(BeamDictionary {
        matrix: m,
        blocks: vec![n_sub; k],
    })
}

fn check_dims(h: &CMatrix, rx: &BeamDictionary, tx: &BeamDictionary) -> Result<()> {
    if h.rows() != rx.size() {
        return Err(Error::dims("Rx dictionary size", h.rows(), rx.size()));
    }
    if h.cols() != tx.size() {
        return Err(Error::dims("Tx dictionary size", h.cols(), tx.size()));
    }
    Ok(())
}

/// `left_op(A_R) * H * right_op(A_T)` evaluated block by block.
/// With `forward`, computes `A_R^H H A_T`; otherwise `A_R H A_T^H`.
fn transform(h: &CMatrix, rx: &BeamDictionary, tx: &BeamDictionary, forward: bool) -> CMatrix {
    let (rows, cols) = h.shape();
    // left multiply: each Rx block row range mixes only within itself
    let mut tmp = CMatrix::zeros(rows, cols);
    for (r0, nr) in rx.block_ranges() {
        for i in 0..nr {
            let out = &mut tmp.as_mut_slice()[(r0 + i) * cols..(r0 + i + 1) * cols];
            for k in 0..nr {
                let a = rx.matrix[(r0 + k, r0 + i)];
                let coeff = if forward { a.conj() } else { rx.matrix[(r0 + i, r0 + k)] };
                for (o, v) in out.iter_mut().zip(h.row(r0 + k)) {
                    *o += coeff * v;
                }
            }
        }
    }
    // right multiply by A_T (forward) or A_T^H (inverse)
    let mut out = CMatrix::zeros(rows, cols);
    for r in 0..rows {
        let src = tmp.row(r).to_vec();
        let dst = &mut out.as_mut_slice()[r * cols..(r + 1) * cols];
        for (c0, nc) in tx.block_ranges() {
            for j in 0..nc {
                let mut acc = Complex64::new(0.0, 0.0);
                for k in 0..nc {
                    let a = if forward {
                        tx.matrix[(c0 + k, c0 + j)]
                    } else {
                        tx.matrix[(c0 + j, c0 + k)].conj()
                    };
                    acc += src[c0 + k] * a;
                }
                dst[c0 + j] = acc;
            }
        }
    }
    out
}

/// `H_b = A_R^H H A_T`.
pub fn to_beamspace(h: &ChannelMatrix, rx: &BeamDictionary, tx: &BeamDictionary) -> Result<ChannelMatrix> {
    h.expect_domain(Domain::Spatial)?;
    check_dims(&h.matrix, rx, tx)?;
    Ok(ChannelMatrix::beamspace(transform(&h.matrix, rx, tx, true)))
}

/// `H = A_R H_b A_T^H`.
pub fn from_beamspace(hb: &ChannelMatrix, rx: &BeamDictionary, tx: &BeamDictionary) -> Result<ChannelMatrix> {
    hb.expect_domain(Domain::Beamspace)?;
    check_dims(&hb.matrix, rx, tx)?;
    Ok(ChannelMatrix::spatial(transform(&hb.matrix, rx, tx, false)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{standard_normal, stream_rng};

    fn unitarity_error(d: &BeamDictionary) -> f64 {
        let m = d.matrix();
        let g = m.adjoint().matmul(m).unwrap();
        g.max_abs_diff(&CMatrix::identity(m.rows()))
    }

    fn random(rows: usize, cols: usize, seed: u64) -> CMatrix {
        let mut rng = stream_rng(seed, 0);
        CMatrix::from_fn(rows, cols, |_, _| {
            Complex64::new(standard_normal(&mut rng), standard_normal(&mut rng))
        })
    }

    #[test]
    fn small_dfts() {
        let d1 = dft_dictionary(1).unwrap();
        assert_eq!(d1.matrix()[(0, 0)], Complex64::new(1.0, 0.0));
        let d2 = dft_dictionary(2).unwrap();
        let s = 1.0 / 2f64.sqrt();
        let expected = [s, s, s, -s];
        for (z, e) in d2.matrix().as_slice().iter().zip(expected) {
            assert!((z - Complex64::new(e, 0.0)).norm() < 1e-15);
        }
        assert!(unitarity_error(&dft_dictionary(8).unwrap()) < 1e-12);
        assert!(dft_dictionary(0).is_err());
    }

    #[test]
    fn block_dictionary_structure() {
        assert_eq!(block_dictionary(1, 8).unwrap().matrix(), dft_dictionary(8).unwrap().matrix());
        let b = block_dictionary(2, 2).unwrap();
        assert_eq!(b.size(), 4);
        assert_eq!(b.block_sizes(), &[2, 2]);
        for (r, c) in [(0, 2), (0, 3), (1, 2), (1, 3), (2, 0), (3, 1)] {
            assert_eq!(b.matrix()[(r, c)], Complex64::new(0.0, 0.0));
        }
        for (k, n) in [(1, 1), (2, 8), (4, 16), (3, 5)] {
            assert!(unitarity_error(&block_dictionary(k, n).unwrap()) < 1e-10);
        }
        assert!(block_dictionary(0, 4).is_err());
        assert!(block_dictionary(2, 0).is_err());
    }

    #[test]
    fn blockwise_transform_matches_dense_product() {
        let rx = block_dictionary(2, 4).unwrap();
        let tx = block_dictionary(2, 8).unwrap();
        let h = random(8, 16, 1);
        let dense = rx.matrix().adjoint().matmul(&h).unwrap().matmul(tx.matrix()).unwrap();
        let fast = to_beamspace(&ChannelMatrix::spatial(h), &rx, &tx).unwrap();
        assert!(fast.matrix.max_abs_diff(&dense) < 1e-12);
    }

    #[test]
    fn single_entry_is_recovered() {
        let rx = block_dictionary(2, 4).unwrap();
        let tx = block_dictionary(2, 8).unwrap();
        let mut e = CMatrix::zeros(8, 16);
        e[(5, 11)] = Complex64::new(0.3, -1.2);
        let h = from_beamspace(&ChannelMatrix::beamspace(e.clone()), &rx, &tx).unwrap();
        let back = to_beamspace(&h, &rx, &tx).unwrap();
        assert!(back.matrix.max_abs_diff(&e) < 1e-10);
    }

    #[test]
    fn round_trip_and_parseval() {
        let rx = block_dictionary(2, 4).unwrap();
        let tx = block_dictionary(2, 8).unwrap();
        for seed in 0..20 {
            let h = ChannelMatrix::spatial(random(8, 16, seed));
            let hb = to_beamspace(&h, &rx, &tx).unwrap();
            assert!((hb.matrix.frobenius_norm() - h.matrix.frobenius_norm()).abs() < 1e-10);
            let back = from_beamspace(&hb, &rx, &tx).unwrap();
            let rel = back.matrix.sub(&h.matrix).unwrap().frobenius_norm() / h.matrix.frobenius_norm();
            assert!(rel < 1e-10);
        }
        let zero = ChannelMatrix::beamspace(CMatrix::zeros(8, 16));
        assert_eq!(from_beamspace(&zero, &rx, &tx).unwrap().matrix, CMatrix::zeros(8, 16));
    }

    #[test]
    fn domain_and_dimension_errors() {
        let rx = block_dictionary(2, 4).unwrap();
        let tx = block_dictionary(2, 8).unwrap();
        let hb = ChannelMatrix::beamspace(CMatrix::zeros(8, 16));
        assert!(matches!(to_beamspace(&hb, &rx, &tx), Err(Error::WrongDomain { .. })));
        let h = ChannelMatrix::spatial(CMatrix::zeros(8, 8));
        assert!(matches!(to_beamspace(&h, &rx, &tx), Err(Error::DimensionMismatch { .. })));
    }
}
