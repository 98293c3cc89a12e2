//! Exact solvability of `A·θ ≡ 2π·q/L (mod 2π)` for integer `A`, rational
//! right-hand sides and real unknowns.
//!
//! Diagonalizing `A = U⁻¹·D·V⁻¹` with unimodular `U`, `V` turns the system into
//! `D·y = U·b + 2π·U·n`. Rows with a nonzero pivot can always be met by a real
//! `y_i`; rows past the rank need `(U·q)_i ≡ 0 (mod L)`, an integer check.

use std::f64::consts::TAU;

/// Integer matrix stored row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IntMatrix {
    pub rows: usize,
    pub cols: usize,
    data: Vec<i128>,
}

impl IntMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1);
        }
        m
    }

    pub fn from_rows(rows: &[Vec<i64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut m = Self::zeros(rows.len(), cols);
        for (i, r) in rows.iter().enumerate() {
            assert_eq!(r.len(), cols, "ragged integer matrix");
            for (j, &v) in r.iter().enumerate() {
                m.set(i, j, v as i128);
            }
        }
        m
    }

    pub fn get(&self, i: usize, j: usize) -> i128 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: i128) {
        self.data[i * self.cols + j] = v;
    }

    fn swap_rows(&mut self, a: usize, b: usize) {
        if a != b {
            for j in 0..self.cols {
                self.data.swap(a * self.cols + j, b * self.cols + j);
            }
        }
    }

    fn swap_cols(&mut self, a: usize, b: usize) {
        if a != b {
            for i in 0..self.rows {
                self.data.swap(i * self.cols + a, i * self.cols + b);
            }
        }
    }

    /// row[dst] -= f·row[src]
    fn row_axpy(&mut self, dst: usize, src: usize, f: i128) {
        for j in 0..self.cols {
            let v = self.get(dst, j) - f * self.get(src, j);
            self.set(dst, j, v);
        }
    }

    /// col[dst] -= f·col[src]
    fn col_axpy(&mut self, dst: usize, src: usize, f: i128) {
        for i in 0..self.rows {
            let v = self.get(i, dst) - f * self.get(i, src);
            self.set(i, dst, v);
        }
    }

    fn mul_vec(&self, v: &[i128]) -> Vec<i128> {
        (0..self.rows).map(|i| (0..self.cols).map(|j| self.get(i, j) * v[j]).sum()).collect()
    }
}

/// `U·A·V = D` with `D` diagonal (pivots `D[0..rank]` nonzero).
#[derive(Clone, Debug)]
pub struct Diagonalization {
    pub u: IntMatrix,
    pub v: IntMatrix,
    pub pivots: Vec<i128>,
}

pub fn diagonalize(a: &IntMatrix) -> Diagonalization {
    let mut d = a.clone();
    let mut u = IntMatrix::identity(a.rows);
    let mut v = IntMatrix::identity(a.cols);
    let mut pivots = Vec::new();
    let mut t = 0;
    while t < d.rows.min(d.cols) {
        // smallest nonzero magnitude in the trailing block
        let mut best: Option<(usize, usize)> = None;
        for i in t..d.rows {
            for j in t..d.cols {
                let x = d.get(i, j);
                if x != 0 && best.is_none_or(|(bi, bj)| x.abs() < d.get(bi, bj).abs()) {
                    best = Some((i, j));
                }
            }
        }
        let Some((pi, pj)) = best else { break };
        d.swap_rows(t, pi);
        u.swap_rows(t, pi);
        d.swap_cols(t, pj);
        v.swap_cols(t, pj);
        loop {
            let p = d.get(t, t);
            let mut clean = true;
            for i in t + 1..d.rows {
                let q = d.get(i, t).div_euclid(p);
                if q != 0 {
                    d.row_axpy(i, t, q);
                    u.row_axpy(i, t, q);
                }
                if d.get(i, t) != 0 {
                    clean = false;
                }
            }
            for j in t + 1..d.cols {
                let q = d.get(t, j).div_euclid(p);
                if q != 0 {
                    d.col_axpy(j, t, q);
                    v.col_axpy(j, t, q);
                }
                if d.get(t, j) != 0 {
                    clean = false;
                }
            }
            if clean {
                break;
            }
            // a remainder smaller than the pivot exists: move it into place
            let mut best = (t, t);
            for i in t..d.rows {
                if d.get(i, t) != 0 && d.get(i, t).abs() < d.get(best.0, best.1).abs() {
                    best = (i, t);
                }
            }
            for j in t..d.cols {
                if d.get(t, j) != 0 && d.get(t, j).abs() < d.get(best.0, best.1).abs() {
                    best = (t, j);
                }
            }
            d.swap_rows(t, best.0);
            u.swap_rows(t, best.0);
            d.swap_cols(t, best.1);
            v.swap_cols(t, best.1);
        }
        pivots.push(d.get(t, t));
        t += 1;
    }
    Diagonalization { u, v, pivots }
}

/// Real solution of `A·θ ≡ 2π·q/L (mod 2π)`, or `None` when none exists.
/// Returned angles are wrapped to `(−π, π]`.
pub fn solve_mod_2pi(a: &IntMatrix, q: &[i64], l: i64) -> Option<Vec<f64>> {
    assert_eq!(q.len(), a.rows, "right-hand side length");
    let diag = diagonalize(a);
    let uq = diag.u.mul_vec(&q.iter().map(|&x| x as i128).collect::<Vec<_>>());
    let rank = diag.pivots.len();
    if uq[rank..].iter().any(|&c| c.rem_euclid(l as i128) != 0) {
        return None;
    }
    let mut y = vec![0.0; a.cols];
    for (i, &p) in diag.pivots.iter().enumerate() {
        let c = uq[i].rem_euclid(l as i128) as f64;
        y[i] = TAU * c / (l as f64 * p as f64);
    }
    let theta = (0..a.cols)
        .map(|i| {
            let s: f64 = (0..a.cols).map(|j| diag.v.get(i, j) as f64 * y[j]).sum();
            crate::algebra::wrap_angle(s)
        })
        .collect();
    Some(theta)
}
