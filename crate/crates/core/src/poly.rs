//! Dense complex polynomials in one variable, ascending coefficient order,
//! with Aberth–Ehrlich root finding.

use num_complex::Complex;
use num_traits::{One, Zero};

use crate::error::{Error, Result};
use crate::scalar::{re, C, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct Poly<S: Scalar> {
    /// `coeffs[k]` multiplies `x^k`. Normalized: no trailing exact zeros
    /// (the zero polynomial is the empty vector).
    pub coeffs: Vec<C<S>>,
}

impl<S: Scalar> Poly<S> {
    pub fn new(mut coeffs: Vec<C<S>>) -> Self {
        while coeffs.last().map_or(false, |c| c.is_zero()) {
            coeffs.pop();
        }
        Poly { coeffs }
    }

    pub fn zero() -> Self {
        Poly { coeffs: vec![] }
    }

    pub fn one() -> Self {
        Poly {
            coeffs: vec![C::<S>::one()],
        }
    }

    pub fn constant(c: C<S>) -> Self {
        Poly::new(vec![c])
    }

    /// The monomial `x`.
    pub fn x() -> Self {
        Poly {
            coeffs: vec![C::<S>::zero(), C::<S>::one()],
        }
    }

    /// Monic polynomial with the given roots.
    pub fn from_roots(roots: &[C<S>]) -> Self {
        let mut p = Poly::one();
        for &r in roots {
            p = p.mul(&Poly::new(vec![-r, C::<S>::one()]));
        }
        p
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// Degree; zero polynomial reports `None`.
    pub fn degree(&self) -> Option<usize> {
        if self.coeffs.is_empty() {
            None
        } else {
            Some(self.coeffs.len() - 1)
        }
    }

    pub fn max_coeff(&self) -> S {
        self.coeffs
            .iter()
            .map(|c| c.norm())
            .fold(S::zero(), |a, b| if b > a { b } else { a })
    }

    /// Drop trailing coefficients below `tol * max_coeff`.
    pub fn trimmed(&self, tol: S) -> Poly<S> {
        let scale = self.max_coeff();
        let mut c = self.coeffs.clone();
        while c
            .last()
            .map_or(false, |x| x.norm() <= tol * scale)
        {
            c.pop();
        }
        Poly::new(c)
    }

    pub fn eval(&self, x: C<S>) -> C<S> {
        let mut acc = C::<S>::zero();
        for &c in self.coeffs.iter().rev() {
            acc = acc * x + c;
        }
        acc
    }

    pub fn derivative(&self) -> Poly<S> {
        if self.coeffs.len() <= 1 {
            return Poly::zero();
        }
        Poly::new(
            self.coeffs[1..]
                .iter()
                .enumerate()
                .map(|(i, &c)| c * C::new(re::<S>((i + 1) as f64), S::zero()))
                .collect(),
        )
    }

    pub fn add(&self, other: &Poly<S>) -> Poly<S> {
        let n = self.coeffs.len().max(other.coeffs.len());
        let mut out = vec![C::<S>::zero(); n];
        for (i, &c) in self.coeffs.iter().enumerate() {
            out[i] = out[i] + c;
        }
        for (i, &c) in other.coeffs.iter().enumerate() {
            out[i] = out[i] + c;
        }
        Poly::new(out)
    }

    pub fn sub(&self, other: &Poly<S>) -> Poly<S> {
        self.add(&other.scale(-C::<S>::one()))
    }

    pub fn scale(&self, k: C<S>) -> Poly<S> {
        Poly::new(self.coeffs.iter().map(|&c| c * k).collect())
    }

    pub fn mul(&self, other: &Poly<S>) -> Poly<S> {
        if self.is_zero() || other.is_zero() {
            return Poly::zero();
        }
        let mut out = vec![C::<S>::zero(); self.coeffs.len() + other.coeffs.len() - 1];
        for (i, &a) in self.coeffs.iter().enumerate() {
            for (j, &b) in other.coeffs.iter().enumerate() {
                out[i + j] = out[i + j] + a * b;
            }
        }
        Poly::new(out)
    }

    /// Euclidean division `self = q * div + r`.
    pub fn divrem(&self, div: &Poly<S>) -> Result<(Poly<S>, Poly<S>)> {
        let dd = div
            .degree()
            .ok_or(Error::SingularMatrix("polynomial division by zero".into()))?;
        let lead = div.coeffs[dd];
        let mut r = self.coeffs.clone();
        if r.len() <= dd {
            return Ok((Poly::zero(), self.clone()));
        }
        let qlen = r.len() - dd;
        let mut q = vec![C::<S>::zero(); qlen];
        for k in (0..qlen).rev() {
            let c = r[k + dd] / lead;
            q[k] = c;
            for j in 0..=dd {
                r[k + j] = r[k + j] - c * div.coeffs[j];
            }
        }
        r.truncate(dd);
        Ok((Poly::new(q), Poly::new(r)))
    }

    /// Synthetic deflation by a (numerical) root.
    pub fn deflate(&self, root: C<S>) -> Poly<S> {
        let n = self.coeffs.len();
        if n <= 1 {
            return Poly::zero();
        }
        let mut out = vec![C::<S>::zero(); n - 1];
        let mut acc = C::<S>::zero();
        for k in (0..n - 1).rev() {
            acc = acc * root + self.coeffs[k + 1];
            out[k] = acc;
        }
        Poly::new(out)
    }

    /// Taylor shift: returns p(x0 + t) as a polynomial in t.
    pub fn shift(&self, x0: C<S>) -> Poly<S> {
        // Horner on (t + x0).
        let mut acc = Poly::zero();
        let lin = Poly::new(vec![x0, C::<S>::one()]);
        for &c in self.coeffs.iter().rev() {
            acc = acc.mul(&lin).add(&Poly::constant(c));
        }
        acc
    }

    /// All roots (with multiplicity, listed repeatedly) by Aberth–Ehrlich
    /// iteration followed by one Newton polish step per root.
    pub fn roots(&self) -> Result<Vec<C<S>>> {
        let mut p = self.trimmed(re::<S>(1e-300));
        let mut out: Vec<C<S>> = Vec::new();
        // roots at the origin: strip leading zero coefficients
        let scale = p.max_coeff();
        let tiny = re::<S>(1e-250);
        while !p.is_zero() && p.coeffs[0].norm() <= tiny * scale && p.coeffs.len() > 1 {
            out.push(C::<S>::zero());
            p.coeffs.remove(0);
        }
        let n = match p.degree() {
            None | Some(0) => return Ok(out),
            Some(n) => n,
        };
        let lead = p.coeffs[n];
        let monic: Vec<C<S>> = p.coeffs.iter().map(|&c| c / lead).collect();
        let dp: Vec<C<S>> = monic[1..]
            .iter()
            .enumerate()
            .map(|(i, &c)| c * C::new(re::<S>((i + 1) as f64), S::zero()))
            .collect();
        // Fujiwara bound for the initial circle: 2 * max_k |c_{n-k}|^{1/k}
        // on the monic polynomial.  Unlike the plain Cauchy bound this stays
        // O(root scale) even when low-order coefficients are huge, which
        // keeps the starting iterates out of overflow territory.
        let mut bound = S::zero();
        for (i, c) in monic[..n].iter().enumerate() {
            let k = re::<S>((n - i) as f64);
            let r = c.norm().powf(S::one() / k);
            if r > bound {
                bound = r;
            }
        }
        let radius = (re::<S>(2.0) * bound).max(re::<S>(1e-3));
        let mut z: Vec<C<S>> = (0..n)
            .map(|k| {
                let th = re::<S>(2.0 * std::f64::consts::PI * (k as f64) / (n as f64) + 0.4);
                C::new(radius * th.cos(), radius * th.sin())
            })
            .collect();
        let eval = |cs: &[C<S>], x: C<S>| {
            let mut acc = C::<S>::zero();
            for &c in cs.iter().rev() {
                acc = acc * x + c;
            }
            acc
        };
        let eps = S::epsilon();
        let tol = eps * re::<S>(64.0);
        let max_iter = 200;
        let mut converged = false;
        for _ in 0..max_iter {
            let mut max_step = S::zero();
            for i in 0..n {
                let pv = eval(&monic, z[i]);
                let dv = eval(&dp, z[i]);
                if pv.is_zero() {
                    continue;
                }
                let newton = if dv.is_zero() {
                    C::new(eps, eps)
                } else {
                    pv / dv
                };
                let mut rep = C::<S>::zero();
                for j in 0..n {
                    if j != i {
                        let d = z[i] - z[j];
                        if !d.is_zero() {
                            rep = rep + C::<S>::one() / d;
                        }
                    }
                }
                let denom = C::<S>::one() - newton * rep;
                let step = if denom.is_zero() { newton } else { newton / denom };
                z[i] = z[i] - step;
                let rel = step.norm() / (S::one() + z[i].norm());
                if rel > max_step {
                    max_step = rel;
                }
            }
            if max_step < tol {
                converged = true;
                break;
            }
        }
        // Newton polish with the original (unscaled) polynomial.
        let dpoly = self.derivative();
        for zi in z.iter_mut() {
            for _ in 0..4 {
                let dv = dpoly.eval(*zi);
                if dv.is_zero() {
                    break;
                }
                let step = self.eval(*zi) / dv;
                if step.norm() < S::one() + zi.norm() {
                    *zi = *zi - step;
                }
                if step.norm() <= eps * (S::one() + zi.norm()) {
                    break;
                }
            }
        }
        if !converged {
            // Accept if residuals are small relative to the coefficient
            // magnitudes sampled at the root.
            let res = z
                .iter()
                .map(|&zi| {
                    let mut scl = S::zero();
                    let mut pw = S::one();
                    for c in &monic {
                        scl = scl + c.norm() * pw;
                        pw = pw * zi.norm();
                    }
                    eval(&monic, zi).norm() / scl.max(S::one())
                })
                .fold(S::zero(), |a, b| if b > a { b } else { a });
            if res > re::<S>(1e-7) {
                return Err(Error::RootFinder {
                    residual: res.lossy(),
                });
            }
        }
        out.extend(z);
        Ok(out)
    }
}

/// Cluster a list of approximate roots into (representative, multiplicity)
/// pairs; points within `tol` of an existing representative are merged.
pub fn cluster_roots<S: Scalar>(roots: &[C<S>], tol: S) -> Vec<(C<S>, usize)> {
    let mut clusters: Vec<(C<S>, usize)> = Vec::new();
    for &r in roots {
        let mut merged = false;
        for (c, m) in clusters.iter_mut() {
            if (r - *c).norm() <= tol {
                // running mean keeps the representative centred
                let mm = re::<S>(*m as f64);
                *c = (*c * Complex::new(mm, S::zero()) + r)
                    / Complex::new(mm + S::one(), S::zero());
                *m += 1;
                merged = true;
                break;
            }
        }
        if !merged {
            clusters.push((r, 1));
        }
    }
    clusters
}

#[cfg(test)]
mod tests {
    use super::*;
    type P = Poly<f64>;

    fn c(re: f64, im: f64) -> C<f64> {
        C::new(re, im)
    }

    #[test]
    fn arithmetic_and_eval() {
        let p = P::new(vec![c(1.0, 0.0), c(2.0, 0.0), c(3.0, 0.0)]);
        assert_eq!(p.eval(c(2.0, 0.0)), c(17.0, 0.0));
        let d = p.derivative();
        assert_eq!(d.coeffs, vec![c(2.0, 0.0), c(6.0, 0.0)]);
        let q = p.mul(&p);
        assert_eq!(q.degree(), Some(4));
        let (quo, rem) = q.divrem(&p).unwrap();
        assert!(quo.sub(&p).max_coeff() < 1e-12);
        assert!(rem.max_coeff() < 1e-12);
    }

    #[test]
    fn shift_matches_eval() {
        let p = P::new(vec![c(1.0, 2.0), c(0.0, -1.0), c(3.0, 0.5), c(1.0, 0.0)]);
        let s = p.shift(c(1.5, -0.5));
        let t = c(0.3, 0.7);
        let lhs = s.eval(t);
        let rhs = p.eval(c(1.5, -0.5) + t);
        assert!((lhs - rhs).norm() < 1e-12);
    }

    #[test]
    fn roots_of_known_polynomial() {
        let want = [c(1.0, 0.0), c(-2.0, 1.0), c(0.5, -3.0), c(4.0, 0.0)];
        let p = P::from_roots(&want);
        let got = p.roots().unwrap();
        assert_eq!(got.len(), 4);
        for w in want {
            assert!(
                got.iter().any(|g| (*g - w).norm() < 1e-8),
                "missing root {w}"
            );
        }
    }

    #[test]
    fn roots_with_multiplicity_cluster() {
        let p = P::from_roots(&[c(2.0, 0.0), c(2.0, 0.0), c(-1.0, 0.0)]);
        let roots = p.roots().unwrap();
        let cl = cluster_roots(&roots, 1e-4);
        let double = cl.iter().find(|(r, _)| (r.re - 2.0).abs() < 1e-3).unwrap();
        assert_eq!(double.1, 2);
    }

    #[test]
    fn high_degree_wilkinson_like() {
        let want: Vec<C<f64>> = (0..=20)
            .map(|k| c(0.3 * k as f64 - 3.0, 0.1 * ((k * 7 % 5) as f64)))
            .collect();
        let p = P::from_roots(&want);
        let got = p.roots().unwrap();
        for w in &want {
            assert!(got.iter().any(|g| (*g - *w).norm() < 1e-6));
        }
    }
}
