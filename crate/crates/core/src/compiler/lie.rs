//! Dimension of the real Lie algebra generated by Hermitian drive terms.

use crate::algebra::{CMatrix, C64};

const INDEPENDENCE_TOL: f64 = 1e-9;

/// Real coordinates of a Hermitian matrix: re and im parts of the upper triangle.
fn coords(h: &CMatrix) -> Vec<f64> {
    let n = h.nrows();
    let mut v = Vec::with_capacity(n * n);
    for i in 0..n {
        v.push(h[(i, i)].re);
        for j in i + 1..n {
            // off-diagonal entries appear twice in the trace inner product
            v.push(h[(i, j)].re * std::f64::consts::SQRT_2);
            v.push(h[(i, j)].im * std::f64::consts::SQRT_2);
        }
    }
    v
}

/// Adds `h` to the orthonormal basis if independent; returns whether it was added.
fn try_add(basis: &mut Vec<Vec<f64>>, h: &CMatrix) -> bool {
    let mut v = coords(h);
    let scale = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if scale == 0.0 {
        return false;
    }
    for _ in 0..2 {
        for b in basis.iter() {
            let p: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            for (x, y) in v.iter_mut().zip(b) {
                *x -= p * y;
            }
        }
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm <= INDEPENDENCE_TOL * scale {
        return false;
    }
    basis.push(v.into_iter().map(|x| x / norm).collect());
    true
}

/// Closes the real span of `generators` under `i[A, B]` and returns its dimension.
pub fn lie_closure_dimension(generators: &[CMatrix]) -> usize {
    let mut basis = Vec::new();
    let mut elements: Vec<CMatrix> = Vec::new();
    for g in generators {
        if try_add(&mut basis, g) {
            elements.push(g.clone());
        }
    }
    let mut frontier = 0;
    while frontier < elements.len() {
        let a = elements[frontier].clone();
        for k in 0..=frontier {
            let b = &elements[k];
            let comm = (&a * b - b * &a) * C64::i();
            if try_add(&mut basis, &comm) {
                elements.push(comm);
            }
        }
        frontier += 1;
    }
    basis.len()
}

/// `σ_x` and `σ_y` on each neighbouring pair `j ↔ j+1` of a `d`-level system.
pub fn chain_generators(d: usize) -> Vec<CMatrix> {
    let mut out = Vec::with_capacity(2 * d.saturating_sub(1));
    for j in 0..d.saturating_sub(1) {
        let mut x = CMatrix::zeros(d, d);
        x[(j, j + 1)] = C64::new(1.0, 0.0);
        x[(j + 1, j)] = C64::new(1.0, 0.0);
        let mut y = CMatrix::zeros(d, d);
        y[(j, j + 1)] = C64::new(0.0, -1.0);
        y[(j + 1, j)] = C64::new(0.0, 1.0);
        out.push(x);
        out.push(y);
    }
    out
}
