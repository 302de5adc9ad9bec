//! Band LU factorization with partial pivoting.
//!
//! Column-major band storage in the LAPACK `gbtrf` layout: entry `(i, j)`
//! lives at `data[j * ldab + kl + ku + i - j]`, with `kl` extra superdiagonals
//! reserved for the fill produced by row interchanges.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
#[error("matrix is numerically singular at column {column} (pivot {pivot:e})")]
pub struct SingularMatrix {
    pub column: usize,
    pub pivot: f64,
}

#[derive(Debug, Clone)]
pub struct BandLu {
    n: usize,
    kl: usize,
    ku: usize,
    ldab: usize,
    data: Vec<f64>,
    piv: Vec<usize>,
}

impl BandLu {
    /// Factors the `n × n` matrix given by its nonzero entries. Bandwidths
    /// are taken from the entries; repeated coordinates are summed.
    pub fn factor(n: usize, entries: &[(usize, usize, f64)]) -> Result<Self, SingularMatrix> {
        let mut kl = 0;
        let mut ku = 0;
        for &(i, j, _) in entries {
            if i > j {
                kl = kl.max(i - j);
            } else {
                ku = ku.max(j - i);
            }
        }
        let ldab = 2 * kl + ku + 1;
        let mut lu = Self {
            n,
            kl,
            ku,
            ldab,
            data: vec![0.0; ldab * n],
            piv: vec![0; n],
        };
        let mut scale: f64 = 0.0;
        for &(i, j, v) in entries {
            let k = lu.at(i, j);
            lu.data[k] += v;
            scale = scale.max(lu.data[k].abs());
        }
        lu.factorize(scale)?;
        Ok(lu)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Lower and upper bandwidth of the original matrix.
    pub fn bandwidths(&self) -> (usize, usize) {
        (self.kl, self.ku)
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> usize {
        j * self.ldab + self.kl + self.ku + i - j
    }

    fn factorize(&mut self, scale: f64) -> Result<(), SingularMatrix> {
        let n = self.n;
        let kv = self.kl + self.ku;
        let tiny = f64::EPSILON * (n.max(1) as f64) * scale.max(f64::MIN_POSITIVE);
        let mut ju = 0;
        for j in 0..n {
            let km = self.kl.min(n - 1 - j);
            let mut p = 0;
            let mut best = self.data[self.at(j, j)].abs();
            for r in 1..=km {
                let v = self.data[self.at(j + r, j)].abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            self.piv[j] = j + p;
            if best <= tiny {
                return Err(SingularMatrix {
                    column: j,
                    pivot: self.data[self.at(j + p, j)],
                });
            }
            ju = ju.max((j + self.ku + p).min(n - 1));
            if p != 0 {
                for c in j..=ju {
                    let a = self.at(j, c);
                    let b = self.at(j + p, c);
                    self.data.swap(a, b);
                }
            }
            let inv = 1.0 / self.data[self.at(j, j)];
            let col = self.at(j, j);
            for r in 1..=km {
                self.data[col + r] *= inv;
            }
            for c in (j + 1)..=ju {
                let ajc = self.data[self.at(j, c)];
                if ajc == 0.0 {
                    continue;
                }
                let dst = self.at(j, c);
                for r in 1..=km {
                    self.data[dst + r] -= self.data[col + r] * ajc;
                }
            }
            debug_assert!(ju <= j + kv);
        }
        Ok(())
    }

    /// Overwrites `b` with the solution of `M x = b`.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        assert_eq!(b.len(), n, "right-hand side length");
        let kv = self.kl + self.ku;
        for j in 0..n {
            let p = self.piv[j];
            if p != j {
                b.swap(j, p);
            }
            let bj = b[j];
            if bj != 0.0 {
                let lm = self.kl.min(n - 1 - j);
                let col = self.at(j, j);
                for r in 1..=lm {
                    b[j + r] -= self.data[col + r] * bj;
                }
            }
        }
        for j in (0..n).rev() {
            b[j] /= self.data[self.at(j, j)];
            let bj = b[j];
            if bj != 0.0 {
                for i in j.saturating_sub(kv)..j {
                    b[i] -= self.data[self.at(i, j)] * bj;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;
    use nalgebra::{DMatrix, DVector};

    fn random_banded(n: usize, kl: usize, ku: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = Stream::labeled(seed, "band");
        DMatrix::from_fn(n, n, |i, j| {
            if (i > j && i - j <= kl) || (j >= i && j - i <= ku) {
                rng.normal()
            } else {
                0.0
            }
        })
    }

    fn entries(m: &DMatrix<f64>) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for j in 0..m.ncols() {
            for i in 0..m.nrows() {
                if m[(i, j)] != 0.0 {
                    out.push((i, j, m[(i, j)]));
                }
            }
        }
        out
    }

    #[test]
    fn matches_dense_solve() {
        for (n, kl, ku, seed) in [(1, 0, 0, 1), (5, 1, 1, 2), (30, 4, 2, 3), (40, 0, 7, 4), (25, 6, 0, 5)] {
            let m = random_banded(n, kl, ku, seed);
            let lu = BandLu::factor(n, &entries(&m)).unwrap();
            let rhs = DVector::from_vec(Stream::labeled(seed, "rhs").normals(n));
            let mut x = rhs.as_slice().to_vec();
            lu.solve_in_place(&mut x);
            let x = DVector::from_vec(x);
            assert!((&m * &x - &rhs).amax() < 1e-9 * (1.0 + x.amax()), "n={n}");
        }
    }

    #[test]
    fn needs_pivoting() {
        // zero leading pivot forces a row interchange
        let m = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 1.0]);
        let lu = BandLu::factor(3, &entries(&m)).unwrap();
        let mut x = vec![1.0, 2.0, 3.0];
        lu.solve_in_place(&mut x);
        let x = DVector::from_vec(x);
        assert!((&m * x - DVector::from_vec(vec![1.0, 2.0, 3.0])).amax() < 1e-14);
    }

    #[test]
    fn detects_singularity() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(BandLu::factor(2, &entries(&m)).is_err());
    }

    #[test]
    fn bandwidths_from_entries() {
        let m = random_banded(10, 3, 1, 9);
        assert_eq!(BandLu::factor(10, &entries(&m)).unwrap().bandwidths(), (3, 1));
    }
}
