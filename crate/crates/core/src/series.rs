//! Truncated Laurent series in a local parameter, with the arithmetic the
//! chart machinery needs: ring operations, division, composition,
//! reversion, and square roots of even-order series.
//!
//! A series stores coefficients for exponents `ord .. prec` and makes no
//! claim about anything at or beyond `prec`. Binary operations propagate
//! the tightest truncation both operands support.

use num_complex::Complex;
use num_traits::{One, Zero};

use crate::error::{Error, Result};
use crate::scalar::{re, C, Scalar};

#[derive(Debug, Clone)]
pub struct LocalSeries<S: Scalar> {
    ord: i64,
    coeffs: Vec<C<S>>,
}

impl<S: Scalar> LocalSeries<S> {
    /// Series with given lowest exponent and coefficients for
    /// `ord, ord+1, ...` in order.
    pub fn new(ord: i64, coeffs: Vec<C<S>>) -> Self {
        LocalSeries { ord, coeffs }
    }

    /// The zero series, known up to (excluding) exponent `prec`.
    pub fn zero_to(prec: i64) -> Self {
        LocalSeries { ord: prec, coeffs: Vec::new() }
    }

    pub fn constant(c: C<S>, prec: i64) -> Self {
        let mut s = LocalSeries::zero_to(0);
        s.coeffs = vec![c];
        s.extend_known(prec);
        s
    }

    /// The local parameter itself, `t`, known up to `prec`.
    pub fn param(prec: i64) -> Self {
        let mut s = LocalSeries { ord: 1, coeffs: vec![C::<S>::one()] };
        s.extend_known(prec);
        s
    }

    fn extend_known(&mut self, prec: i64) {
        while self.prec() < prec {
            self.coeffs.push(C::<S>::zero());
        }
    }

    /// Lowest stored exponent.
    pub fn ord(&self) -> i64 {
        self.ord
    }

    /// One past the highest known exponent.
    pub fn prec(&self) -> i64 {
        self.ord + self.coeffs.len() as i64
    }

    /// Coefficient of `t^k`; zero below `ord`, panics at or beyond `prec`
    /// for a nonempty series (asking there is always a bug upstream).
    pub fn coeff(&self, k: i64) -> C<S> {
        if k < self.ord {
            return C::<S>::zero();
        }
        assert!(
            k < self.prec(),
            "coefficient {} requested beyond truncation {}",
            k,
            self.prec()
        );
        self.coeffs[(k - self.ord) as usize]
    }

    pub fn max_coeff(&self) -> S {
        self.coeffs
            .iter()
            .map(|c| c.norm())
            .fold(S::zero(), |a, b| if b > a { b } else { a })
    }

    /// True if every known coefficient is below `tol` times the largest.
    pub fn is_negligible(&self, tol: S) -> bool {
        let m = self.max_coeff();
        m.is_zero() || m <= tol
    }

    /// Leading exponent and coefficient, skipping coefficients that are
    /// negligible. A coefficient counts as negligible relative to a
    /// geometrically discounted envelope of the later coefficients, so
    /// series whose coefficients grow (small radius of convergence) still
    /// get their low-order terms recognized. `None` when everything is
    /// negligible.
    pub fn lead(&self, rel_tol: S) -> Option<(i64, C<S>)> {
        self.lead_weighted(rel_tol, S::one())
    }

    /// Like [`lead`](Self::lead), but with the envelope discount adapted to
    /// a series of convergence radius about `radius` (in units of the
    /// local parameter): coefficient `k` is weighted by `radius^k`, which
    /// keeps lead detection working when a nearby singularity makes the
    /// coefficients grow geometrically.  `radius >= 1` is clamped to the
    /// plain envelope.
    pub fn lead_weighted(&self, rel_tol: S, radius: S) -> Option<(i64, C<S>)> {
        if self.coeffs.is_empty() {
            return None;
        }
        let theta = re::<S>(0.3) * radius.min(S::one()).max(re::<S>(1e-8));
        let n = self.coeffs.len();
        let mut env = vec![S::zero(); n];
        let mut run = S::zero();
        for i in (0..n).rev() {
            run = run * theta;
            let a = self.coeffs[i].norm();
            if a > run {
                run = a;
            }
            env[i] = run;
        }
        for (i, c) in self.coeffs.iter().enumerate() {
            if !env[i].is_zero() && c.norm() > rel_tol * env[i] {
                return Some((self.ord + i as i64, *c));
            }
        }
        None
    }

    /// Drop leading coefficients negligible relative to the largest, so
    /// `ord` reflects the true vanishing order.
    pub fn trimmed(&self, rel_tol: S) -> Self {
        match self.lead(rel_tol) {
            None => LocalSeries::zero_to(self.prec()),
            Some((e, _)) => {
                let skip = (e - self.ord) as usize;
                LocalSeries {
                    ord: e,
                    coeffs: self.coeffs[skip..].to_vec(),
                }
            }
        }
    }

    /// Extend the known window to `prec` by appending explicit zeros.
    /// Only valid when the series really is known there (polynomials,
    /// monomials, exact constants).
    pub fn padded(&self, prec: i64) -> Self {
        let mut s = self.clone();
        s.extend_known(prec);
        s
    }

    /// Restrict the truncation window to end at `prec`.
    pub fn truncate(&self, prec: i64) -> Self {
        if prec >= self.prec() {
            return self.clone();
        }
        let keep = (prec - self.ord).max(0) as usize;
        LocalSeries {
            ord: self.ord.min(prec),
            coeffs: self.coeffs[..keep].to_vec(),
        }
    }

    pub fn neg(&self) -> Self {
        LocalSeries {
            ord: self.ord,
            coeffs: self.coeffs.iter().map(|c| -c).collect(),
        }
    }

    pub fn scale(&self, a: C<S>) -> Self {
        LocalSeries {
            ord: self.ord,
            coeffs: self.coeffs.iter().map(|c| c * a).collect(),
        }
    }

    /// Multiply by `t^k` (shift every exponent by `k`).
    pub fn shift_exponent(&self, k: i64) -> Self {
        LocalSeries {
            ord: self.ord + k,
            coeffs: self.coeffs.clone(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        let prec = self.prec().min(other.prec());
        if self.coeffs.is_empty() {
            return other.truncate(prec);
        }
        if other.coeffs.is_empty() {
            return self.truncate(prec);
        }
        let ord = self.ord.min(other.ord);
        let mut coeffs = vec![C::<S>::zero(); (prec - ord).max(0) as usize];
        for (i, c) in coeffs.iter_mut().enumerate() {
            let k = ord + i as i64;
            let a = if k >= self.ord && k < self.prec() { self.coeff(k) } else { C::<S>::zero() };
            let b = if k >= other.ord && k < other.prec() { other.coeff(k) } else { C::<S>::zero() };
            *c = a + b;
        }
        LocalSeries { ord, coeffs }
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.neg())
    }

    pub fn mul(&self, other: &Self) -> Self {
        if self.coeffs.is_empty() || other.coeffs.is_empty() {
            // zero factor: product is zero; known up to zero-ord + other prec
            let prec = (self.prec() + other.ord).min(other.prec() + self.ord);
            return LocalSeries::zero_to(prec);
        }
        let ord = self.ord + other.ord;
        let prec = (self.prec() + other.ord).min(other.prec() + self.ord);
        let n = (prec - ord).max(0) as usize;
        let mut coeffs = vec![C::<S>::zero(); n];
        for (i, a) in self.coeffs.iter().enumerate() {
            if a.is_zero() {
                continue;
            }
            for (j, b) in other.coeffs.iter().enumerate() {
                if i + j < n {
                    coeffs[i + j] = coeffs[i + j] + a * b;
                }
            }
        }
        LocalSeries { ord, coeffs }
    }

    /// Multiplicative inverse; the leading coefficient must be
    /// non-negligible.
    pub fn invert(&self) -> Result<Self> {
        let tol = re::<S>(1e-13);
        let t = self.trimmed(tol);
        let (e, lead) = t.lead(tol).ok_or(Error::ZeroDivisor)?;
        debug_assert_eq!(e, t.ord);
        // invert the unit part u = self / (lead t^e), then shift back
        let n = t.coeffs.len();
        let mut inv = vec![C::<S>::zero(); n];
        inv[0] = C::<S>::one() / lead;
        for k in 1..n {
            let mut acc = C::<S>::zero();
            for j in 1..=k {
                acc = acc + t.coeffs[j] * inv[k - j];
            }
            inv[k] = -acc / lead;
        }
        Ok(LocalSeries { ord: -e, coeffs: inv })
    }

    pub fn div(&self, other: &Self) -> Result<Self> {
        Ok(self.mul(&other.invert()?))
    }

    /// Term-by-term derivative with respect to the local parameter.
    pub fn derivative(&self) -> Self {
        let mut coeffs = Vec::with_capacity(self.coeffs.len());
        for (i, c) in self.coeffs.iter().enumerate() {
            let k = self.ord + i as i64;
            coeffs.push(c * Complex::new(re::<S>(k as f64), S::zero()));
        }
        LocalSeries { ord: self.ord - 1, coeffs }
    }

    /// Substitute `inner` for the parameter. `inner` must vanish at the
    /// origin (`ord >= 1`); if `self` has poles, `inner` must have a
    /// non-negligible linear term.
    pub fn compose(&self, inner: &Self) -> Result<Self> {
        let tol = re::<S>(1e-13);
        let it = inner.trimmed(tol);
        if it.ord < 1 {
            return Err(Error::InvalidChart(
                "substituted series does not vanish at the origin".into(),
            ));
        }
        let q = it.ord;
        // the tail t^p of self contributes O(s^{p q}); the tail of inner
        // contributes O(self'(inner) * s^P) = O(s^{(m-1) q + P})
        let out_prec = (self.prec() * q).min((self.ord - 1) * q + it.prec());
        if self.coeffs.is_empty() {
            return Ok(LocalSeries::zero_to(out_prec));
        }
        let work_prec = out_prec - (self.ord.min(0)) * q + 1;
        // Horner on the coefficient list (exponents self.ord ..)
        let mut acc = LocalSeries::constant(*self.coeffs.last().unwrap(), work_prec);
        for c in self.coeffs.iter().rev().skip(1) {
            acc = acc.mul(&it).add(&LocalSeries::constant(*c, work_prec));
            acc = acc.truncate(work_prec);
        }
        // multiply by inner^ord (negative exponents via inversion)
        let result = if self.ord >= 0 {
            let mut p = LocalSeries::constant(C::<S>::one(), work_prec);
            for _ in 0..self.ord {
                p = p.mul(&it).truncate(work_prec + self.ord * q);
            }
            acc.mul(&p)
        } else {
            let inv = it.invert()?;
            let mut p = LocalSeries::constant(C::<S>::one(), work_prec);
            for _ in 0..(-self.ord) {
                p = p.mul(&inv);
            }
            acc.mul(&p)
        };
        Ok(result.truncate(out_prec))
    }

    /// Compositional inverse of a series with a simple zero at the origin:
    /// returns `s(w)` with `self(s(w)) = w + O(w^prec)`.
    pub fn reversion(&self) -> Result<Self> {
        let tol = re::<S>(1e-13);
        let t = self.trimmed(tol);
        let (e, c1) = t.lead(tol).ok_or(Error::NonInvertibleChange)?;
        if e != 1 {
            return Err(Error::NonInvertibleChange);
        }
        let prec = t.prec();
        let w = LocalSeries::param(prec);
        // fixed point of s -> (w - (self(s) - c1 s)) / c1, gaining one
        // correct order per sweep
        let mut s = w.scale(C::<S>::one() / c1);
        let mut tail = t.clone();
        tail.coeffs[0] = C::<S>::zero();
        let iters = (prec.max(2)) as usize;
        for _ in 0..iters {
            let ts = if tail.coeffs.iter().all(|c| c.is_zero()) {
                LocalSeries::zero_to(prec)
            } else {
                tail.compose(&s)?
            };
            s = w.sub(&ts).scale(C::<S>::one() / c1).truncate(prec);
        }
        Ok(s)
    }

    /// Square root of a series of even leading order, taking the requested
    /// branch for the leading coefficient.
    pub fn sqrt_with(&self, lead_root: C<S>) -> Result<Self> {
        let tol = re::<S>(1e-13);
        let t = self.trimmed(tol);
        let (e, lead) = t.lead(tol).ok_or(Error::ZeroDivisor)?;
        if e % 2 != 0 {
            return Err(Error::InvalidChart(
                "square root of a series of odd leading order".into(),
            ));
        }
        let check = lead_root * lead_root - lead;
        if check.norm() > re::<S>(1e-6) * lead.norm() {
            return Err(Error::InvalidChart(
                "provided branch is not a square root of the leading coefficient".into(),
            ));
        }
        // unit part u with u_0 = 1; solve v^2 = u coefficient by
        // coefficient (stable, unlike the binomial series for large
        // coefficients)
        let unit = t.shift_exponent(-e).scale(C::<S>::one() / lead);
        let n = unit.coeffs.len();
        let half = cxr::<S>(0.5);
        let mut v = vec![C::<S>::zero(); n];
        v[0] = C::<S>::one();
        for k in 1..n {
            let mut conv = C::<S>::zero();
            for i in 1..k {
                conv = conv + v[i] * v[k - i];
            }
            v[k] = (unit.coeffs[k] - conv) * half;
        }
        Ok(LocalSeries::new(0, v)
            .scale(lead_root)
            .shift_exponent(e / 2))
    }

    /// Principal-branch square root (leading coefficient root with
    /// nonnegative real part, ties by nonnegative imaginary part).
    pub fn sqrt(&self) -> Result<Self> {
        let tol = re::<S>(1e-13);
        let (_, lead) = self.trimmed(tol).lead(tol).ok_or(Error::ZeroDivisor)?;
        self.sqrt_with(crate::scalar::principal_sqrt(lead))
    }

    /// Evaluate at a numeric value of the parameter (requires `ord >= 0`
    /// or a nonzero argument).
    pub fn eval(&self, t: C<S>) -> C<S> {
        let mut acc = C::<S>::zero();
        for c in self.coeffs.iter().rev() {
            acc = acc * t + c;
        }
        let mut p = C::<S>::one();
        if self.ord >= 0 {
            for _ in 0..self.ord {
                p = p * t;
            }
        } else {
            for _ in 0..(-self.ord) {
                p = p / t;
            }
        }
        acc * p
    }
}

fn cxr<S: Scalar>(x: f64) -> C<S> {
    Complex::new(re::<S>(x), S::zero())
}
