//! Cyclic two-sided Jacobi SVD for real 3x3 matrices.
//!
//! Each rotation step takes the 2x2 block on a pivot pair `(p, q)`, first
//! symmetrizes it with a left rotation and then diagonalizes the symmetric
//! block with a Jacobi rotation applied on both sides. Pivots are visited in
//! the fixed order (0,1), (0,2), (1,2) so the result is bit-reproducible.

use nalgebra::Matrix3;

const MAX_SWEEPS: usize = 64;

/// `A = U diag(sigma) V^T` with orthogonal `U`, `V`. Entries of `sigma` are
/// signed and unsorted; callers decide on ordering and sign conventions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Svd3 {
    pub u: Matrix3<f64>,
    pub sigma: [f64; 3],
    pub v: Matrix3<f64>,
}

/// Plane rotation `[[c, s], [-s, c]]` acting on indices `(p, q)`.
#[derive(Debug, Clone, Copy)]
struct Rot {
    c: f64,
    s: f64,
}

impl Rot {
    fn from_angle(theta: f64) -> Self {
        Rot { c: theta.cos(), s: theta.sin() }
    }

    /// `A <- G A` on rows p, q.
    fn apply_left(&self, a: &mut Matrix3<f64>, p: usize, q: usize) {
        for j in 0..3 {
            let (x, y) = (a[(p, j)], a[(q, j)]);
            a[(p, j)] = self.c * x + self.s * y;
            a[(q, j)] = -self.s * x + self.c * y;
        }
    }

    /// `A <- A G^T` on columns p, q.
    fn apply_right_transpose(&self, a: &mut Matrix3<f64>, p: usize, q: usize) {
        for i in 0..3 {
            let (x, y) = (a[(i, p)], a[(i, q)]);
            a[(i, p)] = self.c * x + self.s * y;
            a[(i, q)] = -self.s * x + self.c * y;
        }
    }
}

fn off_diagonal(a: &Matrix3<f64>) -> f64 {
    let mut acc = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            if i != j {
                acc += a[(i, j)] * a[(i, j)];
            }
        }
    }
    acc.sqrt()
}

pub fn svd3(a: &Matrix3<f64>) -> Svd3 {
    let mut work = *a;
    let mut u = Matrix3::identity();
    let mut v = Matrix3::identity();
    let scale = a.norm();
    if scale == 0.0 {
        return Svd3 { u, sigma: [0.0; 3], v };
    }
    let tol = f64::EPSILON * scale;

    for _ in 0..MAX_SWEEPS {
        if off_diagonal(&work) <= tol {
            break;
        }
        for &(p, q) in &[(0usize, 1usize), (0, 2), (1, 2)] {
            let (a_pp, a_pq, a_qp, a_qq) = (work[(p, p)], work[(p, q)], work[(q, p)], work[(q, q)]);
            if a_pq.abs() <= tol * 1e-3 && a_qp.abs() <= tol * 1e-3 {
                continue;
            }
            // Left rotation making the block symmetric.
            let sym = Rot::from_angle((a_qp - a_pq).atan2(a_pp + a_qq));
            let b_pp = sym.c * a_pp + sym.s * a_qp;
            let b_pq = sym.c * a_pq + sym.s * a_qq;
            let b_qq = -sym.s * a_pq + sym.c * a_qq;
            // Jacobi rotation J with J S J^T diagonal.
            let jac = Rot::from_angle(0.5 * (2.0 * b_pq).atan2(b_pp - b_qq));
            // Combined left rotation L = J * G_sym; right rotation is J^T.
            let left = Rot {
                c: jac.c * sym.c - jac.s * sym.s,
                s: jac.c * sym.s + jac.s * sym.c,
            };
            left.apply_left(&mut work, p, q);
            jac.apply_right_transpose(&mut work, p, q);
            // A = U W V^T is kept: U <- U L^T, V <- V J^T.
            left.apply_right_transpose(&mut u, p, q);
            jac.apply_right_transpose(&mut v, p, q);
            work[(p, q)] = 0.0;
            work[(q, p)] = 0.0;
        }
    }
    Svd3 { u, sigma: [work[(0, 0)], work[(1, 1)], work[(2, 2)]], v }
}
