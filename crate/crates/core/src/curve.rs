//! Odd-model hyperelliptic curves `y^2 = f(x)` with `deg f = 2g+1`, their
//! local charts, function-field elements, (quadratic) differentials, and a
//! solver for differentials with constrained pole structure.
//!
//! Denominators of function-field elements are kept in factored form
//! `c * prod (x - r_i)^{m_i}`. Expanding a coefficient-form polynomial
//! with multiple roots splits them by the square root of the rounding
//! noise, which would wreck every expansion at a pole; the factored form
//! keeps pole locations and multiplicities exact.

use num_complex::Complex;
use num_traits::{One, Zero};

use crate::error::{Error, Result};
use crate::linalg::{qr_pivot, Mat};
use crate::poly::{cluster_roots, Poly};
use crate::scalar::{principal_sqrt, re, C, Scalar};
use crate::series::LocalSeries;

/// Relative tolerance for recognizing a coefficient as structurally zero.
fn struct_tol<S: Scalar>() -> S {
    re::<S>(1e-7)
}

#[derive(Debug, Clone)]
pub struct HyperellipticCurve<S: Scalar> {
    /// Monic odd-degree polynomial with distinct roots.
    pub f: Poly<S>,
    pub genus: usize,
    branch: Vec<C<S>>,
}

/// A point of the smooth projective model.
#[derive(Debug, Clone, PartialEq)]
pub enum CurvePoint<S: Scalar> {
    /// Finite point `(x, y)` with `y^2 = f(x)`, `y != 0`.
    Finite { x: C<S>, y: C<S> },
    /// Finite branch point `(x, 0)`.
    Branch { x: C<S> },
    /// The single point over `x = infinity`.
    Infinity,
}

impl<S: Scalar> CurvePoint<S> {
    /// Image under the hyperelliptic involution `(x, y) -> (x, -y)`.
    pub fn conj(&self) -> Self {
        match self {
            CurvePoint::Finite { x, y } => CurvePoint::Finite { x: *x, y: -*y },
            other => other.clone(),
        }
    }

    pub fn x(&self) -> Option<C<S>> {
        match self {
            CurvePoint::Finite { x, .. } | CurvePoint::Branch { x } => Some(*x),
            CurvePoint::Infinity => None,
        }
    }

    pub fn y(&self) -> Option<C<S>> {
        match self {
            CurvePoint::Finite { y, .. } => Some(*y),
            CurvePoint::Branch { .. } => Some(C::<S>::zero()),
            CurvePoint::Infinity => None,
        }
    }

    /// Sheet label relative to the principal square root of `f(x)`:
    /// `+1` when `y` is the principal root, `-1` otherwise.
    pub fn sheet(&self) -> Option<i8> {
        match self {
            CurvePoint::Finite { x: _, y } => {
                let p = principal_sqrt(*y * *y);
                Some(if (*y - p).norm() <= (*y + p).norm() { 1 } else { -1 })
            }
            _ => None,
        }
    }

    /// Same point of the curve, up to numerical tolerance.
    pub fn close_to(&self, other: &Self, tol: S) -> bool {
        match (self, other) {
            (CurvePoint::Infinity, CurvePoint::Infinity) => true,
            (CurvePoint::Branch { x: a }, CurvePoint::Branch { x: b }) => (*a - *b).norm() < tol,
            (CurvePoint::Finite { x: a, y: ya }, CurvePoint::Finite { x: b, y: yb }) => {
                (*a - *b).norm() < tol * (S::one() + a.norm())
                    && (*ya - *yb).norm() < tol * (S::one() + ya.norm())
            }
            _ => false,
        }
    }
}

/// Local chart at a point: the local parameter `t` vanishes at the point,
/// and the series give `x(t)`, `y(t)` and `dx/dt`.
#[derive(Debug, Clone)]
pub struct Chart<S: Scalar> {
    pub x: LocalSeries<S>,
    pub y: LocalSeries<S>,
    pub dxdt: LocalSeries<S>,
    /// Anchor of the chart: the `x` value the parameter vanishes at
    /// (`None` for infinity).
    pub x0: Option<C<S>>,
}

impl<S: Scalar> HyperellipticCurve<S> {
    /// Validate and build a curve from a monic polynomial of odd degree
    /// `2g+1 >= 5` with distinct roots.
    pub fn new(f: Poly<S>) -> Result<Self> {
        let deg = f
            .degree()
            .ok_or_else(|| Error::InvalidCurve("zero polynomial".into()))?;
        if deg < 5 || deg % 2 == 0 {
            return Err(Error::InvalidCurve(format!(
                "degree must be odd and at least 5, got {deg}"
            )));
        }
        let lead = f.coeffs[deg];
        if (lead - C::<S>::one()).norm() > re::<S>(1e-12) {
            return Err(Error::InvalidCurve("polynomial must be monic".into()));
        }
        let mut branch = f.roots()?;
        // polish the branch points; everything downstream anchors on them
        let fp = f.derivative();
        for r in branch.iter_mut() {
            for _ in 0..3 {
                let dv = fp.eval(*r);
                if dv.is_zero() {
                    break;
                }
                *r = *r - f.eval(*r) / dv;
            }
        }
        let scale = branch
            .iter()
            .map(|r| r.norm())
            .fold(S::one(), |a, b| if b > a { b } else { a });
        for i in 0..branch.len() {
            for j in 0..i {
                if (branch[i] - branch[j]).norm() < re::<S>(1e-9) * scale {
                    return Err(Error::InvalidCurve(
                        "branch points are not distinct".into(),
                    ));
                }
            }
        }
        Ok(HyperellipticCurve {
            f,
            genus: deg / 2,
            branch,
        })
    }

    pub fn branch_points(&self) -> &[C<S>] {
        &self.branch
    }

    /// The curve polynomial in factored form.
    pub fn f_factored(&self) -> Factored<S> {
        Factored {
            scale: C::<S>::one(),
            factors: self.branch.iter().map(|r| (*r, 1)).collect(),
        }
    }

    /// Is `x` (numerically) a branch point?
    pub fn near_branch(&self, x: C<S>) -> Option<C<S>> {
        let scale = S::one() + x.norm();
        self.branch
            .iter()
            .copied()
            .find(|b| (*b - x).norm() < re::<S>(1e-8) * scale)
    }

    /// `y` on the requested sheet over `x`; sheet `+1` is the principal
    /// square root of `f(x)`.
    pub fn y_at(&self, x: C<S>, sheet: i8) -> C<S> {
        let p = principal_sqrt(self.f.eval(x));
        if sheet >= 0 {
            p
        } else {
            -p
        }
    }

    /// Build a finite point over `x` on the given sheet; errors on branch
    /// points (use [`CurvePoint::Branch`] directly).
    pub fn point(&self, x: C<S>, sheet: i8) -> Result<CurvePoint<S>> {
        if let Some(b) = self.near_branch(x) {
            return Err(Error::DegenerateInput(format!(
                "x is (numerically) the branch point {b}"
            )));
        }
        Ok(CurvePoint::Finite {
            x,
            y: self.y_at(x, sheet),
        })
    }

    /// Local chart at `p`. `prec` controls how many exponents beyond the
    /// leading ones are known.
    pub fn chart(&self, p: &CurvePoint<S>, prec: i64) -> Result<Chart<S>> {
        let tol = struct_tol::<S>();
        match p {
            CurvePoint::Finite { x: x0, y: y0 } => {
                // t = x - x0
                let xfull =
                    LocalSeries::new(0, vec![*x0, C::<S>::one()]).padded(prec.max(2));
                let shifted = self.f.shift(*x0);
                let fser = poly_to_series(&shifted, prec);
                let f0 = shifted.coeffs[0];
                if f0.norm() <= tol {
                    return Err(Error::InvalidChart(
                        "finite chart requested at a branch point".into(),
                    ));
                }
                let unit = fser.scale(C::<S>::one() / f0);
                let y = unit.sqrt_with(C::<S>::one())?.scale(*y0);
                let dxdt = LocalSeries::constant(C::<S>::one(), (prec - 1).max(1));
                Ok(Chart {
                    x: xfull,
                    y,
                    dxdt,
                    x0: Some(*x0),
                })
            }
            CurvePoint::Branch { x: x0 } => {
                if self.near_branch(*x0).is_none() {
                    return Err(Error::InvalidChart(
                        "branch chart requested away from a branch point".into(),
                    ));
                }
                // refine the root so the chart is anchored as precisely as
                // the arithmetic allows
                let mut x0 = *x0;
                let fp = self.f.derivative();
                for _ in 0..3 {
                    let dv = fp.eval(x0);
                    if dv.is_zero() {
                        break;
                    }
                    x0 = x0 - self.f.eval(x0) / dv;
                }
                // t = y; x = x0 + u(t^2) with F(u) = f(x0 + u) and
                // u = F^{-1}(t^2)
                let uprec = prec / 2 + 3;
                let mut shifted = self.f.shift(x0);
                // the residual constant is root-finder noise by definition
                shifted.coeffs[0] = C::<S>::zero();
                let fser = poly_to_series(&shifted, uprec).truncate(uprec);
                let uinv = fser.reversion()?;
                let t2 = LocalSeries::new(2, vec![C::<S>::one()]).padded((prec + 2).max(2 * uprec));
                let u = uinv.compose(&t2)?;
                let x = u.add(&LocalSeries::constant(x0, u.prec()));
                let y = LocalSeries::new(1, vec![C::<S>::one()]).padded(prec + 1);
                let dxdt = u.derivative();
                Ok(Chart {
                    x,
                    y,
                    dxdt,
                    x0: Some(x0),
                })
            }
            CurvePoint::Infinity => {
                // x = t^{-2}, y = t^{-(2g+1)} sqrt(P(t^2)) with
                // P(w) = w^{2g+1} f(1/w), w = 1/x = t^2
                let n = 2 * self.genus + 1;
                let mut pc = Vec::with_capacity(n + 1);
                for k in (0..=n).rev() {
                    pc.push(self.f.coeffs[k]);
                }
                let pw = Poly::new(pc);
                let w = LocalSeries::new(2, vec![C::<S>::one()]).padded(prec + 2 * n as i64 + 2);
                let pser = eval_poly_on_series(&pw, &w);
                let root = pser.sqrt_with(C::<S>::one())?;
                let y = root.shift_exponent(-(n as i64));
                let x = LocalSeries::new(-2, vec![C::<S>::one()]).padded(prec);
                let dxdt = LocalSeries::new(-3, vec![Complex::new(re::<S>(-2.0), S::zero())])
                    .padded(prec);
                Ok(Chart { x, y, dxdt, x0: None })
            }
        }
    }
}

/// Interpret a polynomial in the shift variable as a `LocalSeries` with the
/// given truncation window.
fn poly_to_series<S: Scalar>(p: &Poly<S>, prec: i64) -> LocalSeries<S> {
    LocalSeries::new(0, p.coeffs.clone()).padded(prec)
}

/// Magnitude scale of a polynomial evaluation at `r`: the value a random
/// same-sized polynomial would take, used to decide whether `p(r)` counts
/// as a numerical zero.
fn eval_scale<S: Scalar>(p: &Poly<S>, r: C<S>) -> S {
    let mut s = S::zero();
    let mut pw = S::one();
    for c in &p.coeffs {
        s = s + c.norm() * pw;
        pw = pw * r.norm();
    }
    s.max(S::one())
}

/// Horner evaluation of a polynomial on a Laurent series argument.
pub fn eval_poly_on_series<S: Scalar>(p: &Poly<S>, x: &LocalSeries<S>) -> LocalSeries<S> {
    let window = x.prec() - x.ord();
    let base_prec = x.prec() + x.ord().min(0) * (p.coeffs.len() as i64);
    let far = base_prec.max(x.prec()) + window;
    if p.coeffs.is_empty() {
        return LocalSeries::zero_to(far);
    }
    let mut acc = LocalSeries::constant(*p.coeffs.last().unwrap(), far);
    for c in p.coeffs.iter().rev().skip(1) {
        acc = acc.mul(x).add(&LocalSeries::constant(*c, far));
    }
    acc
}

/// A polynomial kept as `scale * prod (x - r_i)^{m_i}`, with roots and
/// multiplicities first-class.
#[derive(Debug, Clone)]
pub struct Factored<S: Scalar> {
    pub scale: C<S>,
    pub factors: Vec<(C<S>, usize)>,
}

impl<S: Scalar> Factored<S> {
    pub fn one() -> Self {
        Factored {
            scale: C::<S>::one(),
            factors: Vec::new(),
        }
    }

    pub fn constant(c: C<S>) -> Self {
        Factored {
            scale: c,
            factors: Vec::new(),
        }
    }

    pub fn linear(root: C<S>) -> Self {
        Factored {
            scale: C::<S>::one(),
            factors: vec![(root, 1)],
        }
    }

    pub fn from_roots(roots: &[C<S>]) -> Self {
        let mut f = Factored::one();
        for &r in roots {
            f.push(r, 1);
        }
        f
    }

    /// Factor a coefficient-form polynomial by root finding; intended for
    /// polynomials with well-separated root clusters.
    pub fn from_poly(p: &Poly<S>) -> Result<Self> {
        let deg = p
            .degree()
            .ok_or(Error::ZeroDivisor)?;
        let lead = p.coeffs[deg];
        let roots = p.roots()?;
        let clustered = cluster_roots(&roots, re::<S>(1e-6));
        let mut f = Factored {
            scale: lead,
            factors: Vec::new(),
        };
        for (r, m) in clustered {
            f.push_mult(r, m);
        }
        Ok(f)
    }

    fn match_tol(r: C<S>) -> S {
        re::<S>(1e-7) * (S::one() + r.norm())
    }

    pub fn push(&mut self, root: C<S>, mult: usize) {
        self.push_mult(root, mult)
    }

    fn push_mult(&mut self, root: C<S>, mult: usize) {
        let tol = Self::match_tol(root);
        for (r, m) in self.factors.iter_mut() {
            if (*r - root).norm() < tol {
                *m += mult;
                return;
            }
        }
        self.factors.push((root, mult));
    }

    pub fn degree(&self) -> usize {
        self.factors.iter().map(|(_, m)| m).sum()
    }

    pub fn is_constant(&self) -> bool {
        self.factors.is_empty()
    }

    pub fn mul(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.scale = out.scale * other.scale;
        for (r, m) in &other.factors {
            out.push_mult(*r, *m);
        }
        out
    }

    pub fn mul_scalar(&self, k: C<S>) -> Self {
        let mut out = self.clone();
        out.scale = out.scale * k;
        out
    }

    /// Coefficient-form expansion.
    pub fn poly(&self) -> Poly<S> {
        let mut p = Poly::constant(self.scale);
        for (r, m) in &self.factors {
            let lin = Poly::new(vec![-*r, C::<S>::one()]);
            for _ in 0..*m {
                p = p.mul(&lin);
            }
        }
        p
    }

    pub fn eval(&self, x: C<S>) -> C<S> {
        let mut v = self.scale;
        for (r, m) in &self.factors {
            let d = x - *r;
            for _ in 0..*m {
                v = v * d;
            }
        }
        v
    }

    /// Least common multiple as factored polynomials (monic convention on
    /// the extra part; scale taken from `self`).
    pub fn lcm(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (r, m) in &other.factors {
            let tol = Self::match_tol(*r);
            match out.factors.iter_mut().find(|(s, _)| (*s - *r).norm() < tol) {
                Some((_, mm)) => {
                    if *m > *mm {
                        *mm = *m;
                    }
                }
                None => out.factors.push((*r, *m)),
            }
        }
        out
    }

    /// `self / other` assuming `other` divides `self` factor-by-factor.
    pub fn quotient(&self, other: &Self) -> Result<Self> {
        let mut out = self.clone();
        out.scale = out.scale / other.scale;
        for (r, m) in &other.factors {
            let tol = Self::match_tol(*r);
            let slot = out
                .factors
                .iter_mut()
                .find(|(s, _)| (*s - *r).norm() < tol)
                .ok_or_else(|| {
                    Error::DegenerateInput("factored quotient is not exact".into())
                })?;
            if slot.1 < *m {
                return Err(Error::DegenerateInput(
                    "factored quotient is not exact".into(),
                ));
            }
            slot.1 -= m;
        }
        out.factors.retain(|(_, m)| *m > 0);
        Ok(out)
    }

    /// Remove one power of the factor at `root` (must exist).
    pub fn divide_out(&mut self, root: C<S>) -> bool {
        let tol = Self::match_tol(root);
        for (r, m) in self.factors.iter_mut() {
            if (*r - root).norm() < tol && *m > 0 {
                *m -= 1;
                if *m == 0 {
                    self.factors.retain(|(_, m)| *m > 0);
                }
                return true;
            }
        }
        false
    }

    /// Expansion on a chart. Factors whose root coincides with the chart
    /// anchor are snapped so the series vanishes exactly at the origin.
    pub fn expand_on(&self, chart: &Chart<S>) -> LocalSeries<S> {
        let mut acc = LocalSeries::constant(self.scale, chart.x.prec());
        for (r, m) in &self.factors {
            let anchored = chart
                .x0
                .map_or(false, |x0| (x0 - *r).norm() < Self::match_tol(*r));
            let factor = if anchored {
                // x(t) - r with the constant removed: exact vanishing
                let x0 = chart.x0.unwrap();
                chart
                    .x
                    .sub(&LocalSeries::constant(x0, chart.x.prec()))
                    .trimmed(re::<S>(1e-12))
            } else {
                chart.x.sub(&LocalSeries::constant(*r, chart.x.prec()))
            };
            for _ in 0..*m {
                acc = acc.mul(&factor);
            }
        }
        acc
    }
}

/// Function-field element `(a(x) + b(x) y) / d(x)` with a factored
/// denominator.
#[derive(Debug, Clone)]
pub struct FieldElem<S: Scalar> {
    pub a: Poly<S>,
    pub b: Poly<S>,
    pub d: Factored<S>,
}

impl<S: Scalar> FieldElem<S> {
    pub fn new(a: Poly<S>, b: Poly<S>, d: Factored<S>) -> Self {
        FieldElem { a, b, d }
    }

    pub fn zero() -> Self {
        FieldElem {
            a: Poly::zero(),
            b: Poly::zero(),
            d: Factored::one(),
        }
    }

    pub fn constant(c: C<S>) -> Self {
        FieldElem {
            a: Poly::constant(c),
            b: Poly::zero(),
            d: Factored::one(),
        }
    }

    pub fn from_x_poly(a: Poly<S>) -> Self {
        FieldElem {
            a,
            b: Poly::zero(),
            d: Factored::one(),
        }
    }

    /// `y` as a field element.
    pub fn y_elem() -> Self {
        FieldElem {
            a: Poly::zero(),
            b: Poly::one(),
            d: Factored::one(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.a.is_zero() && self.b.is_zero()
    }

    pub fn neg(&self) -> Self {
        FieldElem {
            a: self.a.scale(-C::<S>::one()),
            b: self.b.scale(-C::<S>::one()),
            d: self.d.clone(),
        }
    }

    pub fn scale(&self, k: C<S>) -> Self {
        FieldElem {
            a: self.a.scale(k),
            b: self.b.scale(k),
            d: self.d.clone(),
        }
    }

    pub fn add(&self, other: &Self, curve: &HyperellipticCurve<S>) -> Self {
        self.add_raw(other).reduced(curve)
    }

    /// Sum over the lcm denominator without the trailing reduction step.
    /// Large linear combinations with designed cancellation (least-squares
    /// recombinations) must use this: the reduction's near-vanishing test is
    /// relative to the raw numerator scale and can silently cancel pole
    /// factors the combination still carries.
    pub fn add_raw(&self, other: &Self) -> Self {
        let l = self.d.lcm(&other.d);
        let q1 = l.quotient(&self.d).expect("lcm divisible").poly();
        let q2 = l.quotient(&other.d).expect("lcm divisible").poly();
        // l = q1 * d1 = (scale-wise) ..; numerators multiply by the
        // co-factor of the own denominator
        let a = self.a.mul(&q1).add(&other.a.mul(&q2));
        let b = self.b.mul(&q1).add(&other.b.mul(&q2));
        FieldElem { a, b, d: l }
    }

    pub fn sub(&self, other: &Self, curve: &HyperellipticCurve<S>) -> Self {
        self.add(&other.neg(), curve)
    }

    pub fn mul(&self, other: &Self, curve: &HyperellipticCurve<S>) -> Self {
        // (a1 + b1 y)(a2 + b2 y) = a1 a2 + b1 b2 f + (a1 b2 + a2 b1) y
        let a = self
            .a
            .mul(&other.a)
            .add(&self.b.mul(&other.b).mul(&curve.f));
        let b = self.a.mul(&other.b).add(&other.a.mul(&self.b));
        let d = self.d.mul(&other.d);
        FieldElem { a, b, d }.reduced(curve)
    }

    pub fn invert(&self, curve: &HyperellipticCurve<S>) -> Result<Self> {
        if self.is_zero() {
            return Err(Error::ZeroDivisor);
        }
        // 1/((a + b y)/d) = d (a - b y) / (a^2 - b^2 f)
        let norm = self.a.mul(&self.a).sub(&self.b.mul(&self.b).mul(&curve.f));
        let dpoly = self.d.poly();
        let den = Factored::from_poly(&norm)?;
        Ok(FieldElem {
            a: dpoly.mul(&self.a),
            b: dpoly.mul(&self.b).scale(-C::<S>::one()),
            d: den,
        }
        .reduced(curve))
    }

    pub fn div(&self, other: &Self, curve: &HyperellipticCurve<S>) -> Result<Self> {
        Ok(self.mul(&other.invert(curve)?, curve))
    }

    /// Derivative with respect to `x`, using `dy/dx = f'/(2y)`.
    pub fn derivative(&self, curve: &HyperellipticCurve<S>) -> Self {
        let f = &curve.f;
        let fp = f.derivative();
        let ap = self.a.derivative();
        let bp = self.b.derivative();
        let dpoly = self.d.poly();
        let dp = dpoly.derivative();
        let two = Poly::constant(Complex::new(re::<S>(2.0), S::zero()));
        // d/dx[(a + b y)/d]
        //   = ((a'd - a d') 2f + (2f (b'd - b d') + b d f') y) / (2 f d^2)
        let a_num = ap.mul(&dpoly).sub(&self.a.mul(&dp)).mul(&two).mul(f);
        let b_num = two
            .mul(f)
            .mul(&bp.mul(&dpoly).sub(&self.b.mul(&dp)))
            .add(&self.b.mul(&dpoly).mul(&fp));
        let den = curve
            .f_factored()
            .mul(&self.d)
            .mul(&self.d)
            .mul_scalar(Complex::new(re::<S>(2.0), S::zero()));
        FieldElem {
            a: a_num,
            b: b_num,
            d: den,
        }
        .reduced(curve)
    }

    /// Cancel denominator factors whose root also kills both numerator
    /// polynomials, and normalize so the factored scale is 1.
    pub fn reduced(&self, _curve: &HyperellipticCurve<S>) -> Self {
        let mut a = self.a.clone();
        let mut b = self.b.clone();
        let mut d = self.d.clone();
        let tol = struct_tol::<S>();
        let roots: Vec<C<S>> = d.factors.iter().map(|(r, _)| *r).collect();
        for r in roots {
            loop {
                let present = d
                    .factors
                    .iter()
                    .any(|(s, m)| (*s - r).norm() < Factored::<S>::match_tol(r) && *m > 0);
                if !present {
                    break;
                }
                let ok_a = a.is_zero() || a.eval(r).norm() <= tol * eval_scale(&a, r);
                let ok_b = b.is_zero() || b.eval(r).norm() <= tol * eval_scale(&b, r);
                if ok_a && ok_b && !(a.is_zero() && b.is_zero()) {
                    a = a.deflate(r);
                    b = b.deflate(r);
                    d.divide_out(r);
                } else {
                    break;
                }
            }
        }
        if a.is_zero() && b.is_zero() {
            return FieldElem::zero();
        }
        // move the scale into the numerators
        if !d.scale.is_zero() {
            let inv = C::<S>::one() / d.scale;
            a = a.scale(inv);
            b = b.scale(inv);
            d.scale = C::<S>::one();
        }
        FieldElem { a, b, d }
    }

    /// Value at a finite point (must not be a pole).
    pub fn eval(&self, p: &CurvePoint<S>) -> Result<C<S>> {
        let (x, y) = match p {
            CurvePoint::Finite { x, y } => (*x, *y),
            CurvePoint::Branch { x } => (*x, C::<S>::zero()),
            CurvePoint::Infinity => {
                return Err(Error::Unsupported(
                    "direct evaluation at infinity; expand instead".into(),
                ))
            }
        };
        let dv = self.d.eval(x);
        let dscale = self
            .d
            .factors
            .iter()
            .map(|(r, m)| ((x - *r).norm() + re::<S>(1e-30)).powi(*m as i32))
            .fold(self.d.scale.norm(), |a, b| a * b);
        if dv.norm() <= re::<S>(1e-13) * dscale.max(re::<S>(1e-30)) || dv.is_zero() {
            return Err(Error::UnreducedPole(format!(
                "denominator vanishes at x = {x}"
            )));
        }
        Ok((self.a.eval(x) + self.b.eval(x) * y) / dv)
    }

    /// Convergence radius of the expansion at `p` in units of the local
    /// parameter: the distance from the centre to the nearest denominator
    /// root or branch point, ignoring singularities sitting at the centre
    /// itself (those become exact factors of the chart), clamped to 1.
    /// Used to weight lead detection for series with growing coefficients.
    pub fn series_radius(&self, curve: &HyperellipticCurve<S>, p: &CurvePoint<S>) -> S {
        let Some(x0) = p.x() else {
            return S::one();
        };
        if matches!(p, CurvePoint::Branch { .. }) {
            return S::one();
        }
        let snap = re::<S>(1e-6) * (S::one() + x0.norm());
        let mut r = S::one();
        for (root, _) in &self.d.factors {
            let d = (*root - x0).norm();
            if d > snap && d < r {
                r = d;
            }
        }
        for b in curve.branch_points() {
            let d = (*b - x0).norm();
            if d > snap && d < r {
                r = d;
            }
        }
        r
    }

    /// Laurent expansion in the local parameter at `p`, with at least
    /// `want` known exponents beyond the leading one (more may come back).
    pub fn expand_at(
        &self,
        curve: &HyperellipticCurve<S>,
        p: &CurvePoint<S>,
        want: i64,
    ) -> Result<LocalSeries<S>> {
        if self.is_zero() {
            return Ok(LocalSeries::zero_to(want));
        }
        let radius = self.series_radius(curve, p);
        let mut margin: i64 = 6;
        for _ in 0..6 {
            let prec = want + margin + 2 * self.d.degree() as i64 + 2;
            let chart = curve.chart(p, prec)?;
            let num_a = eval_poly_on_series(&self.a, &chart.x);
            let num_b = eval_poly_on_series(&self.b, &chart.x).mul(&chart.y);
            let num = num_a.add(&num_b);
            let den = self.d.expand_on(&chart);
            let s = num.div(&den)?;
            let tol = struct_tol::<S>();
            let lead_ord = s
                .lead_weighted(tol, radius)
                .map(|(e, _)| e)
                .unwrap_or(s.prec());
            if s.prec() - lead_ord >= want {
                return Ok(s);
            }
            margin *= 2;
        }
        Err(Error::TruncationTooShort(format!(
            "expansion at {:?} did not reach {} terms",
            p.x(),
            want
        )))
    }
}

/// Whether a differential is linear (`elem * dx`) or quadratic
/// (`elem * dx^2`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiffKind {
    Abelian,
    Quadratic,
}

/// A (quadratic) differential `(sum_i c_i elem_i) * dx^k` on the curve,
/// kept as a formal linear combination. Collapsing a solver-produced
/// combination into a single rational numerator loses several digits to
/// cancellation, so all evaluations and expansions are done term by term
/// and summed; the collapsed form is only used to seed root searches.
#[derive(Debug, Clone)]
pub struct Differential<S: Scalar> {
    pub terms: Vec<(C<S>, FieldElem<S>)>,
    pub kind: DiffKind,
}

impl<S: Scalar> Differential<S> {
    pub fn abelian(elem: FieldElem<S>) -> Self {
        Differential {
            terms: vec![(C::<S>::one(), elem)],
            kind: DiffKind::Abelian,
        }
    }

    pub fn quadratic(elem: FieldElem<S>) -> Self {
        Differential {
            terms: vec![(C::<S>::one(), elem)],
            kind: DiffKind::Quadratic,
        }
    }

    pub fn from_terms(kind: DiffKind, terms: Vec<(C<S>, FieldElem<S>)>) -> Self {
        let terms = terms
            .into_iter()
            .filter(|(c, e)| !c.is_zero() && !e.is_zero())
            .collect();
        Differential { terms, kind }
    }

    pub fn zero(kind: DiffKind) -> Self {
        Differential {
            terms: Vec::new(),
            kind,
        }
    }

    /// Structurally zero (no terms); a combination can still vanish
    /// identically without being structurally zero.
    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn scale(&self, k: C<S>) -> Self {
        if k.is_zero() {
            return Differential::zero(self.kind);
        }
        Differential {
            terms: self.terms.iter().map(|(c, e)| (*c * k, e.clone())).collect(),
            kind: self.kind,
        }
    }

    pub fn add(&self, other: &Self, _curve: &HyperellipticCurve<S>) -> Self {
        assert_eq!(self.kind, other.kind);
        let mut terms = self.terms.clone();
        terms.extend(other.terms.iter().cloned());
        Differential {
            terms,
            kind: self.kind,
        }
    }

    pub fn sub(&self, other: &Self, curve: &HyperellipticCurve<S>) -> Self {
        self.add(&other.scale(-C::<S>::one()), curve)
    }

    /// Fold the combination into a single rational element. Lossy for
    /// large combinations (cancellation in the shared-numerator form);
    /// use only where a global rational representation is required.
    pub fn collapse(&self) -> FieldElem<S> {
        let mut acc = FieldElem::zero();
        for (c, e) in &self.terms {
            acc = acc.add_raw(&e.scale(*c));
        }
        acc
    }

    /// Value of the underlying rational function (the `dx^k` factor is
    /// not included) at a finite point.
    pub fn eval_fn(&self, p: &CurvePoint<S>) -> Result<C<S>> {
        let mut acc = C::<S>::zero();
        for (c, e) in &self.terms {
            acc = acc + *c * e.eval(p)?;
        }
        Ok(acc)
    }

    /// Expansion of the full differential (including the `(dx/dt)^k`
    /// factor) in the local parameter at `p`.
    pub fn expand_at(
        &self,
        curve: &HyperellipticCurve<S>,
        p: &CurvePoint<S>,
        want: i64,
    ) -> Result<LocalSeries<S>> {
        let extra = match self.kind {
            DiffKind::Abelian => 3,
            DiffKind::Quadratic => 6,
        };
        if self.terms.is_empty() {
            return Ok(LocalSeries::zero_to(want));
        }
        let tol = struct_tol::<S>();
        let radius = self
            .terms
            .iter()
            .map(|(_, e)| e.series_radius(curve, p))
            .fold(S::one(), |a, b| a.min(b));
        let mut w = want + extra;
        for _ in 0..6 {
            let mut sum: Option<LocalSeries<S>> = None;
            for (c, e) in &self.terms {
                let s = e.expand_at(curve, p, w)?.scale(*c);
                sum = Some(match sum {
                    None => s,
                    Some(acc) => acc.add(&s),
                });
            }
            let es = sum.unwrap();
            let chart = curve.chart(p, es.prec() - es.ord() + extra + 2)?;
            let out = match self.kind {
                DiffKind::Abelian => es.mul(&chart.dxdt),
                DiffKind::Quadratic => es.mul(&chart.dxdt).mul(&chart.dxdt),
            };
            // the combination may cancel leading terms of the summands, so
            // verify the advertised depth against the sum's own lead
            match out.lead_weighted(tol, radius) {
                Some((lead_ord, _)) if out.prec() - lead_ord >= want => return Ok(out),
                Some(_) => {}
                // no detectable lead at maximal depth: numerically zero
                None if w >= 32 * (want + extra) => {
                    return Ok(LocalSeries::zero_to(want))
                }
                None => {}
            }
            w *= 2;
        }
        Err(Error::TruncationTooShort(format!(
            "combination expansion at {:?} did not reach {} terms",
            p.x(),
            want
        )))
    }

    /// Residue at `p` (abelian differentials only).
    pub fn residue(
        &self,
        curve: &HyperellipticCurve<S>,
        p: &CurvePoint<S>,
    ) -> Result<C<S>> {
        assert_eq!(self.kind, DiffKind::Abelian);
        let s = self.expand_at(curve, p, 4)?;
        if s.ord() > -1 {
            return Ok(C::<S>::zero());
        }
        if s.prec() <= -1 {
            return Err(Error::TruncationTooShort("residue extraction".into()));
        }
        Ok(s.coeff(-1))
    }

    /// Single Laurent coefficient of the differential at `p` in the
    /// standard local parameter.
    pub fn coeff_at(
        &self,
        curve: &HyperellipticCurve<S>,
        p: &CurvePoint<S>,
        k: i64,
    ) -> Result<C<S>> {
        let s = self.expand_at(curve, p, 6)?;
        if k < s.ord() {
            return Ok(C::<S>::zero());
        }
        if k >= s.prec() {
            return Err(Error::TruncationTooShort(format!(
                "coefficient {k} beyond precision {}",
                s.prec()
            )));
        }
        Ok(s.coeff(k))
    }

    /// Vanishing order at `p`: positive for zeros, negative for poles.
    /// Orders are measured in the local parameter of the point.
    pub fn order_at(
        &self,
        curve: &HyperellipticCurve<S>,
        p: &CurvePoint<S>,
    ) -> Result<i64> {
        let s = self.expand_at(curve, p, 6)?;
        let tol = struct_tol::<S>();
        match s.lead(tol) {
            Some((e, _)) => Ok(e),
            None => Ok(s.prec()),
        }
    }

    /// All zeros (points with positive vanishing order) of the
    /// differential, with their orders. Searches the finite roots of the
    /// numerator norm, the branch points, and infinity.
    pub fn zeros(
        &self,
        curve: &HyperellipticCurve<S>,
    ) -> Result<Vec<(CurvePoint<S>, i64)>> {
        let e = self.collapse();
        let norm = e.a.mul(&e.a).sub(&e.b.mul(&e.b).mul(&curve.f));
        let mut cands: Vec<C<S>> = Vec::new();
        if !norm.is_zero() {
            cands.extend(norm.roots()?);
        } else if !e.a.is_zero() {
            cands.extend(e.a.roots()?);
        }
        let clusters = cluster_roots(&cands, re::<S>(1e-7));
        let mut out: Vec<(CurvePoint<S>, i64)> = Vec::new();
        let mut seen_branch: Vec<C<S>> = Vec::new();
        for (x, _) in clusters {
            if let Some(b) = curve.near_branch(x) {
                if seen_branch.iter().any(|s| (*s - b).norm() < re::<S>(1e-7)) {
                    continue;
                }
                seen_branch.push(b);
                let p = CurvePoint::Branch { x: b };
                let ord = self.order_at(curve, &p)?;
                if ord > 0 {
                    out.push((p, ord));
                }
            } else {
                for sheet in [1i8, -1] {
                    // refine through accurate per-term evaluation: the
                    // collapsed-norm roots carry the collapse noise.  A
                    // candidate where Newton does not settle on a zero is
                    // spurious (e.g. a numerator root that merely cancels a
                    // denominator pole on this sheet) and is skipped.
                    let (xr, mult) = match self.polish_zero(curve, x, sheet) {
                        Ok(Some(r)) => r,
                        Ok(None) | Err(_) => continue,
                    };
                    // a split multiple root produces several candidate
                    // clusters converging to the same polished point
                    let p = curve.point(xr, sheet)?;
                    let py = match p {
                        CurvePoint::Finite { y, .. } => y,
                        _ => C::<S>::zero(),
                    };
                    // x tolerance reflects the ~sqrt(noise) stall of Newton
                    // at a multiple zero; the sheet comparison goes through
                    // the sign of y since y itself carries amplified error
                    let dup = out.iter().any(|(q, _)| match q {
                        CurvePoint::Finite { x: qx, y: qy } => {
                            (*qx - xr).norm() < re::<S>(1e-5) * (S::one() + xr.norm())
                                && (*qy - py).norm() <= (*qy + py).norm()
                        }
                        _ => false,
                    });
                    if dup {
                        continue;
                    }
                    out.push((p, mult));
                }
            }
        }
        // branch points not showing up among the norm roots
        for b in curve.branch_points() {
            if seen_branch.iter().any(|s| (*s - *b).norm() < re::<S>(1e-7)) {
                continue;
            }
            let p = CurvePoint::Branch { x: *b };
            let ord = self.order_at(curve, &p)?;
            if ord > 0 {
                out.push((p, ord));
            }
        }
        let ord_inf = self.order_at(curve, &CurvePoint::Infinity)?;
        if ord_inf > 0 {
            out.push((CurvePoint::Infinity, ord_inf));
        }
        Ok(out)
    }

    /// Newton-polish a finite zero candidate on a fixed sheet.  The
    /// derivative is taken by central differences: term-by-term analytic
    /// derivatives have squared denominators and amplify the cancellation
    /// between terms far past the noise floor, while the plain value sums
    /// accurately.  A stagnating step ratio r triggers the multiple-root
    /// acceleration `x -= m f/f'` with `m = 1/(1-r)`.
    ///
    /// Returns `Ok(Some((x, mult)))` only when the settled point passes two
    /// checks against a small circle around it: the centre value must be
    /// negligible against the circle values (rejecting candidates where the
    /// function is merely moderate amid per-term cancellation, e.g. a
    /// numerator root compensating a denominator pole on this sheet), and
    /// the winding number of the function around the circle -- which is the
    /// multiplicity by the argument principle -- must come out a clean
    /// positive integer.
    fn polish_zero(
        &self,
        curve: &HyperellipticCurve<S>,
        mut x: C<S>,
        sheet: i8,
    ) -> Result<Option<(C<S>, i64)>> {
        let value = |x: C<S>| -> Result<C<S>> {
            let p = curve.point(x, sheet)?;
            let v = self.eval_fn(&p)?;
            if v.re.is_finite() && v.im.is_finite() {
                Ok(v)
            } else {
                Err(Error::ZeroDivisor)
            }
        };
        let mut prev_step: Option<S> = None;
        let mut prev_ratio: Option<S> = None;
        for _ in 0..30 {
            let h = re::<S>(1e-6) * (S::one() + x.norm());
            let f = match value(x) {
                Ok(v) => v,
                Err(_) => return Ok(None),
            };
            let hp = C::new(h, S::zero());
            let (fp1, fm1) = match (value(x + hp), value(x - hp)) {
                (Ok(a), Ok(b)) => (a, b),
                _ => return Ok(None),
            };
            let fp = (fp1 - fm1) / (hp + hp);
            if fp.norm() < re::<S>(1e-300) {
                break;
            }
            let newton = f / fp;
            // engage the multiple-root acceleration only on a stagnation
            // ratio that repeats across two consecutive iterations; a
            // single step ratio in the window is no evidence (plain Newton
            // passes through such ratios transiently and over-boosting a
            // simple zero makes the iteration oscillate)
            let sn0 = newton.norm();
            let mut boost = S::one();
            if let (Some(ps), Some(pr)) = (prev_step, prev_ratio) {
                let r = sn0 / (ps + re::<S>(1e-300));
                if (r - pr).abs() < re::<S>(0.08)
                    && r > re::<S>(0.35)
                    && r < re::<S>(0.85)
                {
                    let m = (S::one() / (S::one() - r)).round();
                    if m >= re::<S>(2.0) && m <= re::<S>(4.0) {
                        boost = m;
                    }
                }
            }
            let step = newton * C::new(boost, S::zero());
            x = x - step;
            if let Some(ps) = prev_step {
                prev_ratio = Some(sn0 / (ps + re::<S>(1e-300)));
            }
            prev_step = Some(sn0);
            if sn0 < re::<S>(1e-13) * (S::one() + x.norm()) {
                break;
            }
        }
        let f0 = match value(x) {
            Ok(v) => v,
            Err(_) => return Ok(None),
        };
        let rho = re::<S>(1e-4) * (S::one() + x.norm());
        let nring = 24usize;
        let mut ring = S::zero();
        let mut phases: Vec<S> = Vec::with_capacity(nring + 1);
        for k in 0..=nring {
            let th = re::<S>(2.0 * std::f64::consts::PI * (k % nring) as f64 / nring as f64);
            let xp = x + C::new(rho * th.cos(), rho * th.sin());
            match value(xp) {
                Ok(v) if v.norm() > S::zero() => {
                    ring = ring.max(v.norm());
                    phases.push(v.im.atan2(v.re));
                }
                _ => return Ok(None),
            }
        }
        // sanity: the centre must be well below the circle values
        if f0.norm() > re::<S>(1e-3) * ring {
            return Ok(None);
        }
        // multiplicity by the argument principle; a non-integer winding or
        // an aliased phase step marks the circle as unreliable
        let pi = re::<S>(std::f64::consts::PI);
        let two_pi = pi + pi;
        let mut total = S::zero();
        for w in phases.windows(2) {
            let mut d = w[1] - w[0];
            while d > pi {
                d = d - two_pi;
            }
            while d < -pi {
                d = d + two_pi;
            }
            if d.abs() > re::<S>(2.0) {
                return Ok(None);
            }
            total = total + d;
        }
        let m = (total / two_pi).round();
        if (total / two_pi - m).abs() > re::<S>(0.2) || m < S::one() {
            return Ok(None);
        }
        let mult = m.to_f64().unwrap_or(1.0) as i64;
        Ok(Some((x, mult)))
    }
}

/// Basis of holomorphic differentials `x^i dx / y`, `i = 0..g`.
pub fn holomorphic_basis<S: Scalar>(curve: &HyperellipticCurve<S>) -> Vec<Differential<S>> {
    (0..curve.genus)
        .map(|i| {
            // x^i / y = x^i y / f
            let mut c = vec![C::<S>::zero(); i + 1];
            c[i] = C::<S>::one();
            Differential::abelian(FieldElem {
                a: Poly::zero(),
                b: Poly::new(c),
                d: curve.f_factored(),
            })
        })
        .collect()
}

/// Basis of holomorphic quadratic differentials
/// `x^i dx^2/y^2, i = 0..2g-2` together with `x^j dx^2/y, j = 0..g-3`;
/// `3g-3` elements in total.
pub fn quadratic_basis<S: Scalar>(curve: &HyperellipticCurve<S>) -> Vec<Differential<S>> {
    let g = curve.genus;
    let mut out = Vec::with_capacity(3 * g - 3);
    for i in 0..(2 * g - 1) {
        let mut c = vec![C::<S>::zero(); i + 1];
        c[i] = C::<S>::one();
        out.push(Differential::quadratic(FieldElem {
            a: Poly::new(c),
            b: Poly::zero(),
            d: curve.f_factored(),
        }));
    }
    for j in 0..g.saturating_sub(2) {
        let mut c = vec![C::<S>::zero(); j + 1];
        c[j] = C::<S>::one();
        out.push(Differential::quadratic(FieldElem {
            a: Poly::zero(),
            b: Poly::new(c),
            d: curve.f_factored(),
        }));
    }
    out
}

/// One linear condition on a differential: the Laurent coefficient of
/// `t^exponent` at `point` equals `rhs`.
#[derive(Debug, Clone)]
pub struct LaurentCondition<S: Scalar> {
    pub point: CurvePoint<S>,
    pub exponent: i64,
    pub rhs: C<S>,
}

/// Result of a constrained-differential solve.
pub struct DiffSolution<S: Scalar> {
    /// Particular solution (least squares; exact when consistent).
    pub particular: Differential<S>,
    /// Basis of the homogeneous solution space.
    pub nullspace: Vec<Differential<S>>,
    /// Residual of the least-squares solve.
    pub residual: S,
}

/// Solve for a differential `omega = sum c_i x^i dx^k/(y^k D) +
/// sum e_j x^j dx^k/(y^{k-1} D)` subject to Laurent-coefficient
/// conditions. `denom` is the common finite-pole denominator `D(x)` in
/// factored form; `k_inf` bounds the pole order at infinity
/// (`ord_infinity >= -k_inf`).
pub fn solve_differential<S: Scalar>(
    curve: &HyperellipticCurve<S>,
    kind: DiffKind,
    denom: &Factored<S>,
    k_inf: i64,
    conds: &[LaurentCondition<S>],
) -> Result<DiffSolution<S>> {
    let g = curve.genus as i64;
    let degd = denom.degree() as i64;
    // ord_infinity of the generators before the x^i factor (each power of
    // x lowers the order by 2)
    let (base_y, base_plain) = match kind {
        // x^i dx/(y D): 2g-2 + 2 degD; x^j dx/D: -3 + 2 degD
        DiffKind::Abelian => (2 * g - 2 + 2 * degd, -3 + 2 * degd),
        // x^i dx^2/(y^2 D): 4g-4 + 2 degD; x^j dx^2/(y D): 2g-5 + 2 degD
        DiffKind::Quadratic => (4 * g - 4 + 2 * degd, 2 * g - 5 + 2 * degd),
    };
    let imax = (base_y + k_inf).div_euclid(2);
    let jmax = (base_plain + k_inf).div_euclid(2);
    // polynomial part in the recentered variable (x - c)/s: the raw
    // monomials over the marked-point region are too ill-conditioned for
    // the least-squares solve
    let mut region: Vec<C<S>> = conds.iter().filter_map(|c| c.point.x()).collect();
    region.extend(denom.factors.iter().map(|(r, _)| *r));
    region.extend(curve.branch_points().iter().copied());
    let center = if region.is_empty() {
        C::<S>::zero()
    } else {
        let n = Complex::new(re::<S>(region.len() as f64), S::zero());
        region.iter().fold(C::<S>::zero(), |a, b| a + *b) / n
    };
    let radius = region
        .iter()
        .map(|r| (*r - center).norm())
        .fold(S::one(), |a, b| if b > a { b } else { a });
    let base = Poly::new(vec![
        -center / Complex::new(radius, S::zero()),
        Complex::new(S::one() / radius, S::zero()),
    ]);
    let top = imax.max(jmax).max(0) as usize;
    let mut xpow: Vec<Poly<S>> = Vec::with_capacity(top + 1);
    xpow.push(Poly::one());
    for i in 1..=top {
        let prev = xpow[i - 1].clone();
        xpow.push(prev.mul(&base));
    }
    let mut basis: Vec<Differential<S>> = Vec::new();
    let fd = curve.f_factored().mul(denom);
    for i in 0..=imax {
        if i < 0 {
            continue;
        }
        let xi = xpow[i as usize].clone();
        let elem = match kind {
            // x^i/(y D) = x^i y/(f D)
            DiffKind::Abelian => FieldElem {
                a: Poly::zero(),
                b: xi,
                d: fd.clone(),
            },
            // x^i/(y^2 D) = x^i/(f D)
            DiffKind::Quadratic => FieldElem {
                a: xi,
                b: Poly::zero(),
                d: fd.clone(),
            },
        };
        basis.push(Differential::from_terms(kind, vec![(Complex::new(S::one(), S::zero()), elem)]));
    }
    for j in 0..=jmax {
        if j < 0 {
            continue;
        }
        let xj = xpow[j as usize].clone();
        let elem = match kind {
            // x^j/D
            DiffKind::Abelian => FieldElem {
                a: xj,
                b: Poly::zero(),
                d: denom.clone(),
            },
            // x^j/(y D) = x^j y/(f D)
            DiffKind::Quadratic => FieldElem {
                a: Poly::zero(),
                b: xj,
                d: fd.clone(),
            },
        };
        basis.push(Differential::from_terms(kind, vec![(Complex::new(S::one(), S::zero()), elem)]));
    }
    let ncols = basis.len();
    if ncols == 0 {
        return Err(Error::DegenerateInput(
            "empty spanning set for the requested pole structure".into(),
        ));
    }
    // group conditions by point so each basis element is expanded once per
    // point with enough precision for the deepest requested exponent
    let mut rows: Vec<Vec<C<S>>> = vec![vec![C::<S>::zero(); ncols]; conds.len()];
    let rhs: Vec<C<S>> = conds.iter().map(|c| c.rhs).collect();
    let mut done = vec![false; conds.len()];
    for i in 0..conds.len() {
        if done[i] {
            continue;
        }
        let pt = conds[i].point.clone();
        let group: Vec<usize> = (i..conds.len())
            .filter(|&j| conds[j].point == pt)
            .collect();
        for &j in &group {
            done[j] = true;
        }
        let max_exp = group.iter().map(|&j| conds[j].exponent).max().unwrap();
        for (col, bdiff) in basis.iter().enumerate() {
            let s = bdiff.expand_at(curve, &pt, 1)?;
            let s = if s.prec() > max_exp {
                s
            } else {
                bdiff.expand_at(curve, &pt, max_exp - s.ord() + 4)?
            };
            for &j in &group {
                let e = conds[j].exponent;
                if e >= s.prec() {
                    return Err(Error::TruncationTooShort(format!(
                        "condition exponent {} beyond precision {}",
                        e,
                        s.prec()
                    )));
                }
                rows[j][col] = s.coeff(e);
            }
        }
    }
    // equilibrate: unit-scale rows (conditions mix pole coefficients with
    // polynomial values of very different magnitude), then columns
    let nrows = rows.len();
    let rhs0 = rhs;
    let mut rhs: Vec<C<S>> = rhs0.clone();
    let mut rowscale = vec![S::one(); nrows];
    for ((row, b), rs) in rows.iter_mut().zip(rhs.iter_mut()).zip(rowscale.iter_mut()) {
        // scale by the row entries only: a right-hand side much larger
        // than the natural coefficient scale (e.g. a unit Laurent tail
        // against generators of size 1/|D|) must not drown the row
        let m = row
            .iter()
            .map(|c| c.norm())
            .fold(S::zero(), |a, v| if v > a { v } else { a });
        if m > S::zero() {
            *rs = m;
            let inv = Complex::new(S::one() / m, S::zero());
            for c in row.iter_mut() {
                *c = *c * inv;
            }
            *b = *b * inv;
        }
    }
    let mut colscale = vec![S::one(); ncols];
    for (j, cs) in colscale.iter_mut().enumerate() {
        let mut m = S::zero();
        for row in rows.iter() {
            let v = row[j].norm();
            if v > m {
                m = v;
            }
        }
        if m > S::zero() {
            *cs = m;
        }
    }
    for row in rows.iter_mut() {
        for (c, cs) in row.iter_mut().zip(&colscale) {
            *c = *c / Complex::new(*cs, S::zero());
        }
    }
    let mat = if nrows == 0 {
        Mat::zeros(0, ncols)
    } else {
        Mat::from_rows(rows)
    };
    let scale = mat.norm_max().max(S::one());
    let qr = qr_pivot(&mat, re::<S>(1e-11));
    let (mut sol, residual) = qr.solve_ls(&rhs);
    for (x, cs) in sol.iter_mut().zip(&colscale) {
        *x = *x / Complex::new(*cs, S::zero());
    }
    if residual > re::<S>(1e-7) * scale {
        return Err(Error::InconsistentSystem {
            residual: (residual / scale).lossy(),
        });
    }
    let combine = |coeffs: &[C<S>]| -> Differential<S> {
        let terms: Vec<(C<S>, FieldElem<S>)> = coeffs
            .iter()
            .zip(&basis)
            .filter(|(c, _)| !c.is_zero())
            .flat_map(|(c, b)| b.terms.iter().map(|(bc, be)| (*c * *bc, be.clone())))
            .collect();
        Differential::from_terms(kind, terms)
    };
    let mut particular = combine(&sol);
    // iterative refinement: the equilibrated least-squares gate lets row
    // defects hide behind large row scales, so measure the true condition
    // defects by re-expanding the combination (term-by-term, so accurate
    // to near machine precision) and correct through the same QR
    for _ in 0..3 {
        let mut defect = vec![C::<S>::zero(); conds.len()];
        let mut seen = vec![false; conds.len()];
        for i in 0..conds.len() {
            if seen[i] {
                continue;
            }
            let pt = conds[i].point.clone();
            let group: Vec<usize> = (i..conds.len())
                .filter(|&j| conds[j].point == pt)
                .collect();
            for &j in &group {
                seen[j] = true;
            }
            let max_exp = group.iter().map(|&j| conds[j].exponent).max().unwrap();
            let s = particular.expand_at(curve, &pt, 4)?;
            let s = if s.prec() > max_exp {
                s
            } else {
                particular.expand_at(curve, &pt, max_exp - s.ord() + 6)?
            };
            for &j in &group {
                defect[j] = s.coeff(conds[j].exponent) - rhs0[j];
            }
        }
        let worst = defect
            .iter()
            .zip(&rhs0)
            .map(|(d, b)| d.norm() / (S::one() + b.norm()))
            .fold(S::zero(), |a, b| if b > a { b } else { a });
        if worst < re::<S>(1e-11) {
            break;
        }
        let scaled: Vec<C<S>> = defect
            .iter()
            .zip(&rowscale)
            .map(|(d, m)| *d / Complex::new(*m, S::zero()))
            .collect();
        let (delta, _) = qr.solve_ls(&scaled);
        for ((x, d), cs) in sol.iter_mut().zip(&delta).zip(&colscale) {
            *x = *x - *d / Complex::new(*cs, S::zero());
        }
        particular = combine(&sol);
    }
    let nullspace = qr
        .nullspace()
        .iter()
        .map(|v| {
            let mut w: Vec<C<S>> = v
                .iter()
                .zip(&colscale)
                .map(|(c, cs)| *c / Complex::new(*cs, S::zero()))
                .collect();
            let nrm = w
                .iter()
                .map(|c| c.norm_sqr())
                .fold(S::zero(), |a, b| a + b)
                .sqrt();
            if nrm > S::zero() {
                for c in w.iter_mut() {
                    *c = *c / Complex::new(nrm, S::zero());
                }
            }
            combine(&w)
        })
        .collect();
    Ok(DiffSolution {
        particular,
        nullspace,
        residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::cx;

    type Cv = HyperellipticCurve<f64>;

    fn genus2_curve() -> Cv {
        // y^2 = x^5 - 1 (monic, distinct roots)
        let mut c = vec![cx::<f64>(0.0, 0.0); 6];
        c[0] = cx::<f64>(-1.0, 0.0);
        c[5] = cx::<f64>(1.0, 0.0);
        Cv::new(Poly::new(c)).unwrap()
    }

    fn genus3_curve() -> Cv {
        // y^2 = x(x-1)(x-2)(x-3)(x-4)(x-5)(x-6)
        let roots: Vec<C<f64>> = (0..7).map(|k| cx::<f64>(k as f64, 0.0)).collect();
        Cv::new(Poly::from_roots(&roots)).unwrap()
    }

    #[test]
    fn chart_consistency_finite() {
        let cv = genus3_curve();
        let p = cv.point(cx::<f64>(0.7, 0.3), 1).unwrap();
        let ch = cv.chart(&p, 8).unwrap();
        // y(t)^2 == f(x(t))
        let y2 = ch.y.mul(&ch.y);
        let fx = eval_poly_on_series(&cv.f, &ch.x);
        let diff = y2.sub(&fx);
        assert!(diff.max_coeff() < 1e-8 * fx.max_coeff(), "max {}", diff.max_coeff());
    }

    #[test]
    fn chart_consistency_branch() {
        let cv = genus3_curve();
        let p = CurvePoint::Branch { x: cx::<f64>(2.0, 0.0) };
        let ch = cv.chart(&p, 10).unwrap();
        let y2 = ch.y.mul(&ch.y);
        let fx = eval_poly_on_series(&cv.f, &ch.x);
        let diff = y2.sub(&fx).truncate(y2.prec().min(fx.prec()));
        assert!(diff.max_coeff() < 1e-7 * (1.0 + fx.max_coeff()), "max {}", diff.max_coeff());
        // dx/dt consistency: derivative of x-series
        let dx = ch.x.derivative();
        let dd = dx.sub(&ch.dxdt);
        assert!(dd.max_coeff() < 1e-9 * (1.0 + dx.max_coeff()));
    }

    #[test]
    fn chart_consistency_infinity() {
        let cv = genus3_curve();
        let ch = cv.chart(&CurvePoint::Infinity, 10).unwrap();
        assert_eq!(ch.y.ord(), -7);
        let y2 = ch.y.mul(&ch.y);
        let fx = eval_poly_on_series(&cv.f, &ch.x);
        let diff = y2.sub(&fx).truncate(y2.prec().min(fx.prec()));
        assert!(diff.max_coeff() < 1e-7 * fx.max_coeff(), "max {}", diff.max_coeff());
    }

    #[test]
    fn field_arithmetic_and_derivative() {
        let cv = genus2_curve();
        let ye = FieldElem::y_elem();
        let x = cv.point(cx::<f64>(1.3, 0.4), -1).unwrap();
        let dy = ye.derivative(&cv);
        let want = cv.f.derivative().eval(x.x().unwrap())
            / (cx::<f64>(2.0, 0.0) * x.y().unwrap());
        let got = dy.eval(&x).unwrap();
        assert!((got - want).norm() < 1e-9 * (1.0 + want.norm()));
        // product rule check on x*y
        let xe = FieldElem::from_x_poly(Poly::x());
        let xy = xe.mul(&ye, &cv);
        let dxy = xy.derivative(&cv);
        let lhs = dxy.eval(&x).unwrap();
        let rhs = x.y().unwrap() + x.x().unwrap() * want;
        assert!((lhs - rhs).norm() < 1e-9 * (1.0 + rhs.norm()));
    }

    #[test]
    fn expansion_matches_eval_nearby() {
        let cv = genus3_curve();
        let p = cv.point(cx::<f64>(1.5, 0.5), 1).unwrap();
        let e = FieldElem::new(
            Poly::new(vec![cx::<f64>(1.0, 0.0), cx::<f64>(0.5, -0.2)]),
            Poly::one(),
            Factored::from_roots(&[cx::<f64>(1.732, 0.0), cx::<f64>(-1.732, 0.0)]),
        );
        let s = e.expand_at(&cv, &p, 12).unwrap();
        let dt = cx::<f64>(1e-3, 5e-4);
        let x1 = p.x().unwrap() + dt;
        // track the sheet continuously: pick y close to the series value
        let yser = cv.chart(&p, 8).unwrap().y.eval(dt);
        let q = CurvePoint::Finite { x: x1, y: yser };
        let direct = e.eval(&q).unwrap();
        let via = s.eval(dt);
        assert!((direct - via).norm() < 1e-10 * (1.0 + direct.norm()));
    }

    #[test]
    fn factored_add_cancels() {
        // 1/(x - r) + (-1)/(x - r) = 0; and simple pole arithmetic keeps
        // the denominator factored with exact multiplicity
        let cv = genus3_curve();
        let r = cx::<f64>(2.5, 1.0);
        let e1 = FieldElem::new(Poly::one(), Poly::zero(), Factored::linear(r));
        let z = e1.sub(&e1, &cv);
        assert!(z.is_zero());
        let sq = e1.mul(&e1, &cv);
        assert_eq!(sq.d.degree(), 2);
        assert_eq!(sq.d.factors.len(), 1);
        assert_eq!(sq.d.factors[0].1, 2);
    }

    #[test]
    fn holomorphic_differentials_are_holomorphic() {
        let cv = genus3_curve();
        for w in holomorphic_basis(&cv) {
            // no pole at branch points or infinity
            for b in cv.branch_points() {
                let ord = w.order_at(&cv, &CurvePoint::Branch { x: *b }).unwrap();
                assert!(ord >= 0, "pole at branch {b}");
            }
            let ord = w.order_at(&cv, &CurvePoint::Infinity).unwrap();
            assert!(ord >= 0, "pole at infinity: {ord}");
        }
        // x^2 dx/y is finite nonzero at infinity; dx/y vanishes to 2g-2=4
        let basis = holomorphic_basis(&cv);
        assert_eq!(basis[2].order_at(&cv, &CurvePoint::Infinity).unwrap(), 0);
        assert_eq!(basis[0].order_at(&cv, &CurvePoint::Infinity).unwrap(), 4);
    }

    #[test]
    fn quadratic_basis_is_regular_and_independent() {
        let cv = genus3_curve();
        let basis = quadratic_basis(&cv);
        assert_eq!(basis.len(), 6);
        for w in &basis {
            for b in cv.branch_points() {
                let ord = w.order_at(&cv, &CurvePoint::Branch { x: *b }).unwrap();
                assert!(ord >= 0, "pole at branch {b}");
            }
            let ord = w.order_at(&cv, &CurvePoint::Infinity).unwrap();
            assert!(ord >= 0, "pole at infinity: {ord}");
        }
        // evaluation at 6 generic points has full rank
        let pts: Vec<CurvePoint<f64>> = (0..6)
            .map(|k| {
                cv.point(
                    cx::<f64>(0.37 + 0.83 * k as f64, 0.41 + 0.13 * k as f64),
                    if k % 2 == 0 { 1 } else { -1 },
                )
                .unwrap()
            })
            .collect();
        let mut rows = Vec::new();
        for p in &pts {
            let mut row = Vec::new();
            for w in &basis {
                let s = w.expand_at(&cv, p, 3).unwrap();
                row.push(s.coeff(0));
            }
            rows.push(row);
        }
        let m = Mat::from_rows(rows);
        assert_eq!(crate::linalg::rank(&m, 1e-9), 6);
    }

    #[test]
    fn residue_theorem_third_kind() {
        // differential with two simple poles: residues must cancel
        let cv = genus3_curve();
        let p1 = cv.point(cx::<f64>(1.7, 0.6), 1).unwrap();
        let p2 = cv.point(cx::<f64>(4.3, -0.8), -1).unwrap();
        // (y + y0)/(2 y (x - x0)) has residue 1 at (x0, y0), 0 at the
        // conjugate
        let mk = |p: &CurvePoint<f64>| -> FieldElem<f64> {
            let x0 = p.x().unwrap();
            let y0 = p.y().unwrap();
            // (f + y0 y) / (2 f (x - x0))
            FieldElem {
                a: cv.f.scale(cx::<f64>(0.5, 0.0)),
                b: Poly::constant(y0).scale(cx::<f64>(0.5, 0.0)),
                d: cv.f_factored().mul(&Factored::linear(x0)),
            }
        };
        let w = Differential::abelian(mk(&p1).sub(&mk(&p2), &cv));
        let r1 = w.residue(&cv, &p1).unwrap();
        let r2 = w.residue(&cv, &p2).unwrap();
        let r1c = w.residue(&cv, &p1.conj()).unwrap();
        let r2c = w.residue(&cv, &p2.conj()).unwrap();
        let rinf = w.residue(&cv, &CurvePoint::Infinity).unwrap();
        assert!((r1 - cx::<f64>(1.0, 0.0)).norm() < 1e-9, "r1 = {r1}");
        assert!((r2 + cx::<f64>(1.0, 0.0)).norm() < 1e-9, "r2 = {r2}");
        let total = r1 + r2 + r1c + r2c + rinf;
        assert!(total.norm() < 1e-9, "residue sum {total}");
    }

    #[test]
    fn solver_recovers_holomorphic_space() {
        // no poles allowed anywhere: solution space is the g holomorphic
        // differentials
        let cv = genus3_curve();
        let sol = solve_differential(
            &cv,
            DiffKind::Abelian,
            &Factored::one(),
            0,
            &[],
        )
        .unwrap();
        let col = sol.particular.collapse();
        assert!(col.is_zero() || col.a.max_coeff() < 1e-12);
        assert_eq!(sol.nullspace.len(), 3);
    }

    #[test]
    fn solver_prescribed_residues() {
        let cv = genus3_curve();
        let p = cv.point(cx::<f64>(2.5, 1.1), 1).unwrap();
        let lin = Factored::linear(p.x().unwrap());
        let conds = vec![
            LaurentCondition { point: p.clone(), exponent: -1, rhs: cx::<f64>(2.0, 0.0) },
            LaurentCondition { point: p.conj(), exponent: -1, rhs: cx::<f64>(-2.0, 0.0) },
        ];
        let sol = solve_differential(&cv, DiffKind::Abelian, &lin, 0, &conds).unwrap();
        let w = &sol.particular;
        let r = w.residue(&cv, &p).unwrap();
        assert!((r - cx::<f64>(2.0, 0.0)).norm() < 1e-8, "residue {r}");
        // nullspace should again be the holomorphic differentials
        assert_eq!(sol.nullspace.len(), 3);
    }
}
