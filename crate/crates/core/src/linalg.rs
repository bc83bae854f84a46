//! Small dense complex linear algebra: Householder QR with column
//! pivoting, least-squares solves, nullspace extraction.

use num_complex::Complex;
use num_traits::{One, Zero};

use crate::error::{Error, Result};
use crate::scalar::{re, C, Scalar};

#[derive(Debug, Clone)]
pub struct Mat<S: Scalar> {
    pub rows: usize,
    pub cols: usize,
    data: Vec<C<S>>, // row-major
}

impl<S: Scalar> Mat<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![C::<S>::zero(); rows * cols],
        }
    }

    pub fn from_rows(rows: Vec<Vec<C<S>>>) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |x| x.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c);
            data.extend(row);
        }
        Mat { rows: r, cols: c, data }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> C<S> {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: C<S>) {
        self.data[i * self.cols + j] = v;
    }

    pub fn matvec(&self, x: &[C<S>]) -> Vec<C<S>> {
        assert_eq!(x.len(), self.cols);
        (0..self.rows)
            .map(|i| {
                let mut acc = C::<S>::zero();
                for j in 0..self.cols {
                    acc = acc + self.at(i, j) * x[j];
                }
                acc
            })
            .collect()
    }

    pub fn norm_max(&self) -> S {
        self.data
            .iter()
            .map(|c| c.norm())
            .fold(S::zero(), |a, b| if b > a { b } else { a })
    }
}

/// Pivoted-QR factorization data for a matrix `A P = Q R`.
pub struct Qr<S: Scalar> {
    m: usize,
    n: usize,
    /// Householder vectors below the diagonal, R on and above.
    fac: Mat<S>,
    betas: Vec<S>,
    perm: Vec<usize>,
    pub rank: usize,
    /// |R[0,0]| and |R[rank-1, rank-1]| for conditioning diagnostics.
    pub diag_max: S,
    pub diag_min: S,
}

/// Householder QR with column pivoting. `rel_tol` decides the numerical
/// rank relative to the largest diagonal of R.
pub fn qr_pivot<S: Scalar>(a: &Mat<S>, rel_tol: S) -> Qr<S> {
    let m = a.rows;
    let n = a.cols;
    let mut fac = a.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut betas = vec![S::zero(); n.min(m)];
    let mut colnorm: Vec<S> = (0..n)
        .map(|j| {
            let mut s = S::zero();
            for i in 0..m {
                s = s + fac.at(i, j).norm_sqr();
            }
            s
        })
        .collect();
    let kmax = m.min(n);
    let mut rank = 0;
    let mut diag_max = S::zero();
    let mut diag_min = S::zero();
    for k in 0..kmax {
        // pivot: column with the largest remaining norm
        let (jbest, _) = (k..n)
            .map(|j| (j, colnorm[j]))
            .fold((k, S::neg_infinity()), |acc, x| if x.1 > acc.1 { x } else { acc });
        if jbest != k {
            perm.swap(k, jbest);
            colnorm.swap(k, jbest);
            for i in 0..m {
                let t = fac.at(i, k);
                fac.set(i, k, fac.at(i, jbest));
                fac.set(i, jbest, t);
            }
        }
        // Householder vector for column k
        let mut xnorm = S::zero();
        for i in k..m {
            xnorm = xnorm + fac.at(i, k).norm_sqr();
        }
        let xnorm = xnorm.sqrt();
        if k == 0 {
            diag_max = xnorm;
        }
        if xnorm <= rel_tol * diag_max || xnorm.is_zero() {
            break;
        }
        diag_min = xnorm;
        rank = k + 1;
        let x0 = fac.at(k, k);
        let phase = if x0.is_zero() {
            C::new(S::one(), S::zero())
        } else {
            x0 / Complex::new(x0.norm(), S::zero())
        };
        let alpha = -phase * Complex::new(xnorm, S::zero());
        // v = x - alpha e1, stored in place with v[0] implicit below
        let v0 = x0 - alpha;
        let mut vnorm = v0.norm_sqr();
        for i in k + 1..m {
            vnorm = vnorm + fac.at(i, k).norm_sqr();
        }
        if vnorm.is_zero() {
            betas[k] = S::zero();
            fac.set(k, k, alpha);
            continue;
        }
        let beta = re::<S>(2.0) / vnorm;
        betas[k] = beta;
        // apply H = I - beta v v^H to remaining columns
        for j in k + 1..n {
            let mut dot = v0.conj() * fac.at(k, j);
            for i in k + 1..m {
                dot = dot + fac.at(i, k).conj() * fac.at(i, j);
            }
            let dot = dot * Complex::new(beta, S::zero());
            let new_kj = fac.at(k, j) - dot * v0;
            fac.set(k, j, new_kj);
            for i in k + 1..m {
                let t = fac.at(i, j) - dot * fac.at(i, k);
                fac.set(i, j, t);
            }
        }
        // store alpha as R[k,k], v (scaled so v0 stays) below diagonal
        fac.set(k, k, alpha);
        // keep v: diagonal slot holds alpha, so stash v0 by rescaling the
        // subdiagonal entries by 1/v0 and folding |v0|^2 into beta
        if !v0.is_zero() {
            for i in k + 1..m {
                let t = fac.at(i, k) / v0;
                fac.set(i, k, t);
            }
            betas[k] = beta * v0.norm_sqr();
        } else {
            betas[k] = S::zero();
        }
        // update column norms
        for j in k + 1..n {
            let mut s = S::zero();
            for i in k + 1..m {
                s = s + fac.at(i, j).norm_sqr();
            }
            colnorm[j] = s;
        }
    }
    Qr {
        m,
        n,
        fac,
        betas,
        perm,
        rank,
        diag_max,
        diag_min,
    }
}

impl<S: Scalar> Qr<S> {
    /// Apply Q^H to a vector of length m.
    fn apply_qh(&self, b: &mut [C<S>]) {
        for k in 0..self.rank {
            if self.betas[k].is_zero() {
                continue;
            }
            // v = e_k + sum_{i>k} fac[i,k] e_i  (v0 folded into beta)
            let mut dot = b[k];
            for i in k + 1..self.m {
                dot = dot + self.fac.at(i, k).conj() * b[i];
            }
            let dot = dot * Complex::new(self.betas[k], S::zero());
            b[k] = b[k] - dot;
            for i in k + 1..self.m {
                b[i] = b[i] - dot * self.fac.at(i, k);
            }
        }
    }

    /// Basic least-squares solution (free variables set to zero),
    /// returning `(x, residual_norm)`.
    pub fn solve_ls(&self, b: &[C<S>]) -> (Vec<C<S>>, S) {
        assert_eq!(b.len(), self.m);
        let mut bb = b.to_vec();
        self.apply_qh(&mut bb);
        let r = self.rank;
        let mut y = vec![C::<S>::zero(); self.n];
        // back substitution on R[0..r, 0..r]
        let mut ytop = vec![C::<S>::zero(); r];
        for i in (0..r).rev() {
            let mut acc = bb[i];
            for j in i + 1..r {
                acc = acc - self.fac.at(i, j) * ytop[j];
            }
            ytop[i] = acc / self.fac.at(i, i);
        }
        for i in 0..r {
            y[self.perm[i]] = ytop[i];
        }
        let mut res = S::zero();
        for v in bb[r..].iter() {
            res = res + v.norm_sqr();
        }
        (y, res.sqrt())
    }

    /// Basis of the (numerical) nullspace of A, one vector per free column.
    pub fn nullspace(&self) -> Vec<Vec<C<S>>> {
        let r = self.rank;
        let mut out = Vec::new();
        for f in r..self.n {
            // solve R11 * y = -R12[:, f-r]
            let mut y = vec![C::<S>::zero(); r];
            for i in (0..r).rev() {
                let mut acc = -self.fac.at(i, f);
                for j in i + 1..r {
                    acc = acc - self.fac.at(i, j) * y[j];
                }
                y[i] = acc / self.fac.at(i, i);
            }
            let mut v = vec![C::<S>::zero(); self.n];
            for i in 0..r {
                v[self.perm[i]] = y[i];
            }
            v[self.perm[f]] = C::<S>::one();
            // normalize for determinism
            let nrm = v.iter().map(|c| c.norm_sqr()).fold(S::zero(), |a, b| a + b).sqrt();
            for c in v.iter_mut() {
                *c = *c / Complex::new(nrm, S::zero());
            }
            out.push(v);
        }
        out
    }

    pub fn cond_estimate(&self) -> S {
        if self.diag_min.is_zero() {
            S::infinity()
        } else {
            self.diag_max / self.diag_min
        }
    }
}

/// Solve a square system exactly-determined in the least-squares sense;
/// errors if numerically rank-deficient.
pub fn solve_square<S: Scalar>(a: &Mat<S>, b: &[C<S>], what: &str) -> Result<Vec<C<S>>> {
    assert_eq!(a.rows, a.cols);
    let qr = qr_pivot(a, re::<S>(1e-12));
    if qr.rank < a.cols {
        return Err(Error::SingularMatrix(what.to_string()));
    }
    Ok(qr.solve_ls(b).0)
}

/// Numerical rank with relative tolerance.
pub fn rank<S: Scalar>(a: &Mat<S>, rel_tol: S) -> usize {
    qr_pivot(a, rel_tol).rank
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C<f64> {
        C::new(re, im)
    }

    #[test]
    fn solve_square_roundtrip() {
        let a = Mat::from_rows(vec![
            vec![c(2.0, 1.0), c(0.0, -1.0), c(1.0, 0.0)],
            vec![c(1.0, 0.0), c(3.0, 0.0), c(0.0, 2.0)],
            vec![c(0.5, -0.5), c(1.0, 1.0), c(4.0, 0.0)],
        ]);
        let x = vec![c(1.0, -2.0), c(0.5, 0.25), c(-3.0, 1.0)];
        let b = a.matvec(&x);
        let got = solve_square(&a, &b, "test").unwrap();
        for (g, w) in got.iter().zip(&x) {
            assert!((g - w).norm() < 1e-10);
        }
    }

    #[test]
    fn least_squares_and_nullspace() {
        // 2x3 rank-2: nullspace dim 1
        let a = Mat::from_rows(vec![
            vec![c(1.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)],
            vec![c(0.0, 0.0), c(1.0, 0.0), c(1.0, 0.0)],
        ]);
        let qr = qr_pivot(&a, 1e-12);
        assert_eq!(qr.rank, 2);
        let ns = qr.nullspace();
        assert_eq!(ns.len(), 1);
        let av = a.matvec(&ns[0]);
        assert!(av.iter().all(|v| v.norm() < 1e-12));
        // inconsistent overdetermined system reports a residual
        let a2 = Mat::from_rows(vec![
            vec![c(1.0, 0.0)],
            vec![c(1.0, 0.0)],
        ]);
        let qr2 = qr_pivot(&a2, 1e-12);
        let (_, res) = qr2.solve_ls(&[c(1.0, 0.0), c(0.0, 0.0)]);
        assert!((res - 0.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn rank_detects_deficiency() {
        let a = Mat::from_rows(vec![
            vec![c(1.0, 0.0), c(2.0, 0.0)],
            vec![c(2.0, 0.0), c(4.0, 0.0)],
        ]);
        assert_eq!(rank(&a, 1e-10), 1);
    }
}
