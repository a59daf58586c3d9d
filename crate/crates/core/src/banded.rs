//! Banded matrices and LU factorization with partial pivoting.
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Square matrix with `kl` sub- and `ku` super-diagonals.
#[derive(Debug, Clone, PartialEq)]
pub struct BandMatrix {
    pub n: usize,
    pub kl: usize,
    pub ku: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        BandMatrix { n, kl, ku, data: vec![0.0; n * (kl + ku + 1)] }
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> Option<usize> {
        if i >= self.n || j >= self.n || j + self.kl < i || j > i + self.ku {
            None
        } else {
            Some(i * (self.kl + self.ku + 1) + j + self.kl - i)
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.slot(i, j).map_or(0.0, |s| self.data[s])
    }

    /// Panics if `(i, j)` lies outside the band.
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let s = self.slot(i, j).expect("entry outside band");
        self.data[s] = v;
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let s = self.slot(i, j).expect("entry outside band");
        self.data[s] += v;
    }

    pub fn clear_row(&mut self, i: usize) {
        let w = self.kl + self.ku + 1;
        self.data[i * w..(i + 1) * w].iter_mut().for_each(|v| *v = 0.0);
    }

    fn cols(&self, i: usize) -> core::ops::Range<usize> {
        i.saturating_sub(self.kl)..(i + self.ku + 1).min(self.n)
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            y[i] = self.cols(i).map(|j| self.get(i, j) * x[j]).sum();
        }
    }

    pub fn matvec_transpose(&self, x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..self.n {
            for j in self.cols(i) {
                y[j] += self.get(i, j) * x[i];
            }
        }
    }

    /// Smallest `|a_ii| − Σ_{j≠i}|a_ij|` over all rows.
    pub fn dominance_margin(&self) -> f64 {
        (0..self.n)
            .map(|i| {
                let off: f64 = self.cols(i).filter(|&j| j != i).map(|j| self.get(i, j).abs()).sum();
                self.get(i, i).abs() - off
            })
            .fold(f64::INFINITY, f64::min)
    }

    pub fn factor(&self) -> Result<BandLu> {
        BandLu::new(self)
    }
}

/// `P A = L U` in LAPACK `gbtrf` layout: `U` has `kl + ku` super-diagonals.
#[derive(Debug, Clone)]
pub struct BandLu {
    n: usize,
    kl: usize,
    width: usize,
    data: Vec<f64>,
    pivots: Vec<usize>,
}

impl BandLu {
    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        i * self.width + j + self.kl - i
    }

    fn new(a: &BandMatrix) -> Result<Self> {
        let (n, kl, ku) = (a.n, a.kl, a.ku);
        let width = 2 * kl + ku + 1;
        let mut lu = BandLu { n, kl, width, data: vec![0.0; n * width], pivots: vec![0; n] };
        for i in 0..n {
            for j in a.cols(i) {
                let s = lu.idx(i, j);
                lu.data[s] = a.get(i, j);
            }
        }
        let reach = kl + ku;
        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = lu.data[lu.idx(k, k)].abs();
            for i in k + 1..=last_row {
                let v = lu.data[lu.idx(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best == 0.0 || !best.is_finite() {
                return Err(Error::SingularMatrix { step: 0, pivot_row: k });
            }
            lu.pivots[k] = p;
            let last_col = (k + reach).min(n - 1);
            if p != k {
                for j in k..=last_col {
                    let (s, t) = (lu.idx(k, j), lu.idx(p, j));
                    lu.data.swap(s, t);
                }
            }
            let pivot = lu.data[lu.idx(k, k)];
            for i in k + 1..=last_row {
                let s = lu.idx(i, k);
                let l = lu.data[s] / pivot;
                lu.data[s] = l;
                if l != 0.0 {
                    for j in k + 1..=last_col {
                        let (t, u) = (lu.idx(i, j), lu.idx(k, j));
                        lu.data[t] -= l * lu.data[u];
                    }
                }
            }
        }
        Ok(lu)
    }

    /// Solves `A x = b` in place.
    pub fn solve(&self, b: &mut [f64]) {
        let (n, kl) = (self.n, self.kl);
        let reach = self.width - 1 - kl;
        for k in 0..n {
            b.swap(k, self.pivots[k]);
            let bk = b[k];
            for i in k + 1..=(k + kl).min(n - 1) {
                b[i] -= self.data[self.idx(i, k)] * bk;
            }
        }
        for k in (0..n).rev() {
            let mut s = b[k];
            for j in k + 1..=(k + reach).min(n - 1) {
                s -= self.data[self.idx(k, j)] * b[j];
            }
            b[k] = s / self.data[self.idx(k, k)];
        }
    }

    /// Solves `Aᵀ x = b` in place.
    pub fn solve_transpose(&self, b: &mut [f64]) {
        let (n, kl) = (self.n, self.kl);
        let reach = self.width - 1 - kl;
        for k in 0..n {
            let mut s = b[k];
            for i in k.saturating_sub(reach)..k {
                s -= self.data[self.idx(i, k)] * b[i];
            }
            b[k] = s / self.data[self.idx(k, k)];
        }
        for k in (0..n).rev() {
            let mut s = b[k];
            for i in k + 1..=(k + kl).min(n - 1) {
                s -= self.data[self.idx(i, k)] * b[i];
            }
            b[k] = s;
            b.swap(k, self.pivots[k]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for k in 0..n {
            let p = (k..n).max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs())).unwrap();
            a.swap(k, p);
            b.swap(k, p);
            for i in k + 1..n {
                let l = a[i][k] / a[k][k];
                for j in k..n {
                    a[i][j] -= l * a[k][j];
                }
                b[i] -= l * b[k];
            }
        }
        let mut x = vec![0.0; n];
        for k in (0..n).rev() {
            let s: f64 = (k + 1..n).map(|j| a[k][j] * x[j]).sum();
            x[k] = (b[k] - s) / a[k][k];
        }
        x
    }

    fn random_band(n: usize, kl: usize, ku: usize, rng: &mut ChaCha8Rng, dominant: bool) -> BandMatrix {
        let mut m = BandMatrix::zeros(n, kl, ku);
        for i in 0..n {
            for j in m.cols(i) {
                m.set(i, j, rng.gen_range(-1.0..1.0));
            }
            if dominant {
                m.add(i, i, 5.0);
            }
        }
        m
    }

    fn dense(m: &BandMatrix) -> Vec<Vec<f64>> {
        (0..m.n).map(|i| (0..m.n).map(|j| m.get(i, j)).collect()).collect()
    }

    #[test]
    fn matches_dense_elimination() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in [5, 9, 30] {
            for dominant in [true, false] {
                let m = random_band(n, 2, 2, &mut rng, dominant);
                let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let lu = m.factor().unwrap();

                let mut x = b.clone();
                lu.solve(&mut x);
                let oracle = dense_solve(dense(&m), b.clone());
                for (u, v) in x.iter().zip(&oracle) {
                    assert!((u - v).abs() <= 1e-9 * (1.0 + v.abs()), "n={n} {u} {v}");
                }

                let mut xt = b.clone();
                lu.solve_transpose(&mut xt);
                let dt = dense(&m);
                let transposed: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| dt[j][i]).collect()).collect();
                let oracle = dense_solve(transposed, b);
                for (u, v) in xt.iter().zip(&oracle) {
                    assert!((u - v).abs() <= 1e-9 * (1.0 + v.abs()), "transpose n={n} {u} {v}");
                }
            }
        }
    }

    #[test]
    fn pivoting_needed_for_zero_diagonal() {
        let mut m = BandMatrix::zeros(3, 1, 1);
        m.set(0, 1, 1.0);
        m.set(1, 0, 1.0);
        m.set(1, 2, 1.0);
        m.set(2, 1, 1.0);
        m.set(2, 2, 1.0);
        let mut x = vec![2.0, 4.0, 5.0];
        m.factor().unwrap().solve(&mut x);
        let mut y = vec![0.0; 3];
        m.matvec(&x, &mut y);
        assert!((y[0] - 2.0).abs() < 1e-14 && (y[1] - 4.0).abs() < 1e-14 && (y[2] - 5.0).abs() < 1e-14);
    }

    #[test]
    fn singular_matrix_reported() {
        let mut m = BandMatrix::zeros(4, 1, 1);
        m.set(0, 0, 1.0);
        m.set(1, 1, 1.0);
        m.set(3, 3, 1.0);
        assert!(matches!(m.factor(), Err(Error::SingularMatrix { pivot_row: 2, .. })));
    }

    #[test]
    fn transpose_product_is_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = random_band(12, 2, 2, &mut rng, false);
        let x: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (mut ax, mut aty) = (vec![0.0; 12], vec![0.0; 12]);
        m.matvec(&x, &mut ax);
        m.matvec_transpose(&y, &mut aty);
        let lhs: f64 = ax.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&aty).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-13);
    }
}
