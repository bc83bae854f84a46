//! Schwarzian derivatives, coordinate transformation of projective-oper
//! potentials, and detection of apparent singularities.
//!
//! An oper is represented away from branch points by its potential in the
//! `x`-coordinate: the operator `lambda^2 d^2/dx^2 - Q(x, y)` with `Q` a
//! function-field element. Under a change of local coordinate the
//! potential transforms with the usual quadratic-differential factor plus
//! `lambda^2/2` times the Schwarzian of the change.

use num_complex::Complex;
use num_traits::Zero;

use crate::curve::{CurvePoint, Differential, FieldElem, HyperellipticCurve};
use crate::error::{Error, Result};
use crate::scalar::{re, C, Scalar};
use crate::series::LocalSeries;

/// Schwarzian derivative `{g, t} = g'''/g' - (3/2)(g''/g')^2` of a series.
pub fn schwarzian<S: Scalar>(g: &LocalSeries<S>) -> Result<LocalSeries<S>> {
    let g1 = g.derivative();
    let g2 = g1.derivative();
    let g3 = g2.derivative();
    let a = g3.div(&g1)?;
    let b = g2.div(&g1)?;
    Ok(a.sub(&b.mul(&b).scale(Complex::new(re::<S>(1.5), S::zero()))))
}

/// Pull a potential `q` (written in the coordinate `z`) back along the
/// coordinate change `z = z(t)`:
/// `q_t = q_z(z(t)) z'(t)^2 + (lambda^2/2) {z, t}`.
pub fn transform_potential<S: Scalar>(
    q_z: &LocalSeries<S>,
    z: &LocalSeries<S>,
    lambda: C<S>,
) -> Result<LocalSeries<S>> {
    let zp = z.derivative();
    let main = q_z.compose(z)?.mul(&zp).mul(&zp);
    if lambda.is_zero() {
        return Ok(main);
    }
    let half_l2 = lambda * lambda * Complex::new(re::<S>(0.5), S::zero());
    let sw = schwarzian(z)?.scale(half_l2);
    Ok(main.add(&sw))
}

/// Local type of an oper potential at a point.
#[derive(Debug, Clone, PartialEq)]
pub enum LocalType<S: Scalar> {
    /// No pole.
    Regular,
    /// Double pole with the apparent-singularity signature
    /// `q/lambda^2 = -3/(4 t^2) + nu/t + q0 + O(t)`, `nu^2 + q0 = 0`;
    /// carries the accessory datum `nu_lambda = lambda * nu`.
    Apparent { nu_lambda: C<S> },
    /// Anything else (wrong leading coefficient, broken no-log condition,
    /// or higher-order pole).
    Other,
}

/// Classify the local type of a potential expansion (`lambda != 0`).
/// `tol` is the relative tolerance on the signature coefficients.
pub fn classify_potential<S: Scalar>(
    q: &LocalSeries<S>,
    lambda: C<S>,
    tol: S,
) -> Result<LocalType<S>> {
    if lambda.is_zero() {
        return Err(Error::LambdaZero);
    }
    if q.prec() <= 0 {
        return Err(Error::TruncationTooShort(
            "potential expansion too short to classify".into(),
        ));
    }
    let l2 = lambda * lambda;
    // All decisions are scaled against the certified window t^-2 .. t^0:
    // the deeper tail of the expansion is dominated by a nearby
    // singularity (or its numerical noise) whenever one exists and must
    // not drown the singular part under a max-coefficient normalization.
    let mut wmax = l2.norm();
    for k in (-2).max(q.ord())..=0 {
        wmax = wmax.max(q.coeff(k).norm());
    }
    for k in q.ord()..(-2).min(q.prec()) {
        if q.coeff(k).norm() > tol * wmax {
            return Ok(LocalType::Other);
        }
    }
    let c2 = q.coeff(-2);
    let c1 = q.coeff(-1);
    if c2.norm() <= tol * wmax && c1.norm() <= tol * wmax {
        return Ok(LocalType::Regular);
    }
    let scale = l2.norm().max(c2.norm());
    let want_c2 = l2 * Complex::new(re::<S>(-0.75), S::zero());
    if (c2 - want_c2).norm() > tol * scale {
        return Ok(LocalType::Other);
    }
    // nu_lambda = lambda * nu with q/lambda^2 = ... + nu/t + ...
    let nu_lambda = c1 / lambda;
    // no-log condition: nu^2 + q0 = 0, i.e. nu_lambda^2 + lambda^2 q0 = 0
    let c0 = q.coeff(0);
    let lhs = nu_lambda * nu_lambda + c0;
    let cscale = (nu_lambda.norm() * nu_lambda.norm() + c0.norm()).max(l2.norm());
    if lhs.norm() > tol * cscale {
        return Ok(LocalType::Other);
    }
    Ok(LocalType::Apparent { nu_lambda })
}

/// Transport the residue parameter of an apparent singularity through a
/// chart change. `(zp, zpp)` is the 2-jet of the forward map sending the
/// source coordinate to the destination coordinate (`z(0) = 0`,
/// `z' = zp`, `z'' = zpp`):
/// `nu_dst = nu_src / z' + (3/4) z''/(z')^2`.
pub fn residue_transition<S: Scalar>(
    nu_src: C<S>,
    zp: C<S>,
    zpp: C<S>,
    lambda: C<S>,
) -> Result<(C<S>, C<S>)> {
    if zp.is_zero() {
        return Err(Error::NonInvertibleChange);
    }
    let nu_dst = nu_src / zp + Complex::new(re::<S>(0.75), S::zero()) * zpp / (zp * zp);
    Ok((nu_dst, lambda * nu_dst))
}

/// How the potential of an oper is stored. All variants yield the local
/// potential through [`OperRep::potential_at`], which also applies the
/// `lambda^2/2` Schwarzian correction of the chart.
#[derive(Debug, Clone)]
pub enum Potential<S: Scalar> {
    /// Rational function `Q(x, y)`; the chart factor `(dx/dt)^2` is
    /// applied on expansion.
    Fn(FieldElem<S>),
    /// Quadratic differential (the `dx^2` is part of the object),
    /// expanded term by term.
    Quad(Differential<S>),
    /// Connection triple `(omega0, omega_minus, omega_plus)`; the
    /// potential is `b c + g^2 + lambda g'` with `g = a - (lambda/2) c'/c`
    /// and `(a, b, c) = (omega0, omega_minus, omega_plus)/dx`, derivatives
    /// with respect to `x`.
    Conn {
        omega0: Differential<S>,
        omega_minus: Differential<S>,
        omega_plus: Differential<S>,
    },
}

/// A projective oper: potential data plus the oper scale.
#[derive(Debug, Clone)]
pub struct OperRep<S: Scalar> {
    pub potential: Potential<S>,
    pub lambda: C<S>,
}

/// One apparent singularity: its position on the curve and the accessory
/// datum `nu_lambda`, both in the standard local parameter at the point.
#[derive(Debug, Clone)]
pub struct ApparentSingularity<S: Scalar> {
    pub point: CurvePoint<S>,
    pub nu_lambda: C<S>,
}

impl<S: Scalar> OperRep<S> {
    /// Oper with a rational-function potential.
    pub fn from_fn(q: FieldElem<S>, lambda: C<S>) -> Self {
        OperRep {
            potential: Potential::Fn(q),
            lambda,
        }
    }

    /// Oper with a quadratic-differential potential.
    pub fn from_quad(q: Differential<S>, lambda: C<S>) -> Self {
        OperRep {
            potential: Potential::Quad(q),
            lambda,
        }
    }

    /// Potential in the standard local parameter at `p`, with at least
    /// `want` known exponents beyond the leading one.
    pub fn potential_at(
        &self,
        curve: &HyperellipticCurve<S>,
        p: &CurvePoint<S>,
        want: i64,
    ) -> Result<LocalSeries<S>> {
        let main = match &self.potential {
            Potential::Fn(q) => {
                let s = q.expand_at(curve, p, want + 8)?;
                let window = s.prec() - s.ord() + 8;
                let chart = curve.chart(p, window.max(10))?;
                s.mul(&chart.dxdt).mul(&chart.dxdt)
            }
            Potential::Quad(q) => q.expand_at(curve, p, want + 8)?,
            Potential::Conn {
                omega0,
                omega_minus,
                omega_plus,
            } => {
                let w = want + 10;
                let sa = omega0.expand_at(curve, p, w)?;
                let sb = omega_minus.expand_at(curve, p, w)?;
                let sc = omega_plus.expand_at(curve, p, w)?;
                let depth = [&sa, &sb, &sc]
                    .iter()
                    .map(|s| s.prec() - s.ord())
                    .max()
                    .unwrap();
                let chart = curve.chart(p, (depth + 8).max(12))?;
                let a = sa.div(&chart.dxdt)?;
                let b = sb.div(&chart.dxdt)?;
                // trim c at the accuracy of the zero finder: at an apparent
                // singularity the centre is a numerically located zero of
                // omega_plus, so its residual leading coefficient is noise
                // of order (zero-location error) * c', far above the
                // structural tolerance, and keeping it would turn the pole
                // of 1/c into a huge regular series
                let c = sc.div(&chart.dxdt)?.trimmed(re::<S>(1e-7));
                // g = a - (lambda/2) (dc/dx)/c
                let cpx = c.derivative().div(&chart.dxdt)?;
                let half_l =
                    self.lambda * Complex::new(re::<S>(0.5), S::zero());
                let g = a.sub(&cpx.div(&c)?.scale(half_l));
                let gpx = g.derivative().div(&chart.dxdt)?;
                // companion-form reduction gives the equation
                // lambda^2 psi'' = (b c + g^2 + lambda g') psi; the potential
                // convention here is lambda^2 psi'' + q psi = 0, hence the
                // overall sign flip (an apparent singularity then carries
                // q = -(3/4) lambda^2 / t^2 + ...)
                let q = b
                    .mul(&c)
                    .add(&g.mul(&g))
                    .add(&gpx.scale(self.lambda))
                    .scale(Complex::new(-S::one(), S::zero()));
                q.mul(&chart.dxdt).mul(&chart.dxdt)
            }
        };
        if self.lambda.is_zero() {
            return Ok(main);
        }
        let window = main.prec() - main.ord() + 8;
        let chart = curve.chart(p, window.max(10))?;
        let half_l2 =
            self.lambda * self.lambda * Complex::new(re::<S>(0.5), S::zero());
        let sw = schwarzian(&chart.x)?.scale(half_l2);
        Ok(main.add(&sw))
    }

    /// Classify the potential at `p`.
    pub fn classify_at(
        &self,
        curve: &HyperellipticCurve<S>,
        p: &CurvePoint<S>,
        tol: S,
    ) -> Result<LocalType<S>> {
        let q = self.potential_at(curve, p, 6)?;
        classify_potential(&q, self.lambda, tol)
    }
}

/// Sup-style distance between two opers: maximal relative coefficient
/// difference of the local potentials over the given sample points and a
/// fixed expansion window.
pub fn oper_diff<S: Scalar>(
    curve: &HyperellipticCurve<S>,
    o1: &OperRep<S>,
    o2: &OperRep<S>,
    points: &[CurvePoint<S>],
) -> Result<S> {
    let mut worst = S::zero();
    for p in points {
        let a = o1.potential_at(curve, p, 6)?;
        let b = o2.potential_at(curve, p, 6)?;
        let d = a.sub(&b);
        let scale = a.max_coeff().max(b.max_coeff()).max(S::one());
        let rel = d.max_coeff() / scale;
        if rel > worst {
            worst = rel;
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::cx;

    type LS = LocalSeries<f64>;

    fn c(re: f64, im: f64) -> C<f64> {
        Complex::new(re, im)
    }

    fn series(ord: i64, vals: &[(f64, f64)], prec: i64) -> LS {
        LS::new(ord, vals.iter().map(|&(a, b)| c(a, b)).collect()).padded(prec)
    }

    #[test]
    fn schwarzian_of_moebius_vanishes() {
        // g = (2t + 1)/(t - 3): expand the denominator inverse as a series
        let num = series(0, &[(1.0, 0.0), (2.0, 0.0)], 12);
        let den = series(0, &[(-3.0, 0.0), (1.0, 0.0)], 12);
        let g = num.div(&den).unwrap();
        let sw = schwarzian(&g).unwrap();
        assert!(sw.max_coeff() < 1e-10, "schwarzian {:e}", sw.max_coeff());
    }

    #[test]
    fn schwarzian_cocycle() {
        // {f o g, t} = ({f, z} o g) g'^2 + {g, t}
        let f = series(1, &[(1.0, 0.5), (0.3, -0.2), (0.1, 0.0), (0.05, 0.02)], 10);
        let g = series(1, &[(2.0, -1.0), (0.4, 0.1), (-0.2, 0.3), (0.0, 0.1)], 10);
        let fg = f.compose(&g).unwrap();
        let lhs = schwarzian(&fg).unwrap();
        let gp = g.derivative();
        let rhs = schwarzian(&f)
            .unwrap()
            .compose(&g)
            .unwrap()
            .mul(&gp)
            .mul(&gp)
            .add(&schwarzian(&g).unwrap());
        let d = lhs.sub(&rhs);
        let prec = d.prec().min(4);
        for k in d.ord()..prec {
            assert!(d.coeff(k).norm() < 1e-8 * (1.0 + lhs.coeff(k).norm()), "k={k}");
        }
    }

    #[test]
    fn transform_roundtrip() {
        // pulling back along z and then its inverse restores the potential
        let lambda = c(0.7, 0.2);
        let q = series(-2, &[(1.0, 0.0), (0.5, -0.3), (0.2, 0.1), (0.0, 0.4), (1.0, 0.0), (0.3, 0.0)], 6);
        let z = series(1, &[(1.5, 0.5), (0.2, -0.1), (0.3, 0.0), (0.1, 0.1), (0.0, 0.0), (0.0, 0.0)], 8);
        let w = z.reversion().unwrap();
        let qt = transform_potential(&q, &z, lambda).unwrap();
        let back = transform_potential(&qt, &w, lambda).unwrap();
        let d = back.sub(&q);
        for k in d.ord()..d.prec().min(2) {
            assert!(
                d.coeff(k).norm() < 1e-8 * (1.0 + q.coeff(k).norm()),
                "k={} diff={}",
                k,
                d.coeff(k)
            );
        }
    }

    #[test]
    fn classify_apparent_signature() {
        let lambda = c(0.3, -0.1);
        let nu = c(1.2, 0.8);
        let l2 = lambda * lambda;
        // q = lambda^2 (-3/(4t^2) + nu/t - nu^2 + 5t)
        let q = LS::new(
            -2,
            vec![
                l2 * c(-0.75, 0.0),
                l2 * nu,
                l2 * (-nu * nu),
                l2 * c(5.0, 0.0),
            ],
        )
        .padded(4);
        match classify_potential(&q, lambda, 1e-8).unwrap() {
            LocalType::Apparent { nu_lambda } => {
                assert!((nu_lambda - lambda * nu).norm() < 1e-10);
            }
            other => panic!("expected apparent, got {other:?}"),
        }
        // breaking the no-log condition must declassify it
        let bad = q.add(&LS::new(0, vec![c(0.1, 0.0)]).padded(4));
        assert_eq!(classify_potential(&bad, lambda, 1e-8).unwrap(), LocalType::Other);
        // regular series
        let reg = series(0, &[(1.0, 0.0), (2.0, 0.0)], 4);
        assert_eq!(classify_potential(&reg, lambda, 1e-8).unwrap(), LocalType::Regular);
    }

    #[test]
    fn apparent_signature_is_coordinate_covariant() {
        // transform an apparent potential and re-extract nu:
        // nu_s = c1 nu_t - (3/2) c2 / c1 for z = c1 s + c2 s^2 + ...
        let lambda = c(0.5, 0.3);
        let nu = c(-0.4, 1.1);
        let l2 = lambda * lambda;
        let q = LS::new(
            -2,
            vec![l2 * c(-0.75, 0.0), l2 * nu, l2 * (-nu * nu)],
        )
        .padded(4);
        let z = series(1, &[(1.3, -0.4), (0.2, 0.5), (0.1, 0.0), (0.0, 0.0)], 8);
        let qt = transform_potential(&q, &z, lambda).unwrap();
        let c1 = z.coeff(1);
        let c2 = z.coeff(2);
        let want = c1 * nu - c(1.5, 0.0) * c2 / c1;
        match classify_potential(&qt, lambda, 1e-6).unwrap() {
            LocalType::Apparent { nu_lambda } => {
                assert!(
                    (nu_lambda - lambda * want).norm() < 1e-8 * (1.0 + want.norm()),
                    "got {nu_lambda}, want {}",
                    lambda * want
                );
            }
            other => panic!("expected apparent after transform, got {other:?}"),
        }
    }

    #[test]
    fn residue_transition_examples() {
        let lambda = c(0.6, -0.2);
        // identity change leaves nu alone
        let (n, nl) = residue_transition(c(1.1, 0.4), c(1.0, 0.0), c(0.0, 0.0), lambda).unwrap();
        assert!((n - c(1.1, 0.4)).norm() < 1e-14);
        assert!((nl - lambda * n).norm() < 1e-14);
        // pure scaling z = a t: nu / a
        let (n, _) = residue_transition(c(2.0, 0.0), c(4.0, 0.0), c(0.0, 0.0), lambda).unwrap();
        assert!((n - c(0.5, 0.0)).norm() < 1e-14);
        // z = t + t^2 with nu_src = 0: nu_dst = (3/4) * 2 = 3/2
        let (n, _) = residue_transition(c(0.0, 0.0), c(1.0, 0.0), c(2.0, 0.0), lambda).unwrap();
        assert!((n - c(1.5, 0.0)).norm() < 1e-14);
        assert!(residue_transition(c(1.0, 0.0), c(0.0, 0.0), c(1.0, 0.0), lambda).is_err());
    }

    #[test]
    fn residue_transition_matches_classification() {
        // classify-then-transform equals transform-then-classify
        let lambda = c(0.4, 0.7);
        let nu = c(0.9, -0.3);
        let l2 = lambda * lambda;
        let q = LS::new(-2, vec![l2 * c(-0.75, 0.0), l2 * nu, l2 * (-nu * nu)]).padded(4);
        // pull q back along w (dst -> src), so the forward jet is of the
        // inverse series
        let w = series(1, &[(0.8, 0.3), (-0.2, 0.4), (0.05, 0.0), (0.0, 0.0)], 8);
        let z = w.reversion().unwrap();
        let qt = transform_potential(&q, &w, lambda).unwrap();
        let got = match classify_potential(&qt, lambda, 1e-6).unwrap() {
            LocalType::Apparent { nu_lambda } => nu_lambda,
            other => panic!("expected apparent, got {other:?}"),
        };
        let zp = z.coeff(1);
        let zpp = z.coeff(2) * c(2.0, 0.0);
        let (_, want) = residue_transition(nu, zp, zpp, lambda).unwrap();
        assert!((got - want).norm() < 1e-8 * (1.0 + want.norm()), "got {got} want {want}");
    }

    #[test]
    fn oper_potential_on_curve_transforms_at_infinity() {
        // Q = x as a potential: at infinity x = t^{-2}, dx/dt = -2 t^{-3},
        // so the Higgs part is x (dx/dt)^2 = 4 t^{-8} and the oper part
        // adds (lambda^2/2) {t^{-2}, t} = (lambda^2/2)(-3/2) t^{-2}
        let roots: Vec<C<f64>> = (0..7).map(|k| cx::<f64>(k as f64, 0.0)).collect();
        let cv = HyperellipticCurve::new(crate::poly::Poly::from_roots(&roots)).unwrap();
        let lambda = c(0.9, 0.1);
        let oper = OperRep::from_fn(FieldElem::from_x_poly(crate::poly::Poly::x()), lambda);
        let s = oper.potential_at(&cv, &CurvePoint::Infinity, 6).unwrap();
        assert_eq!(s.trimmed(1e-10).ord(), -8);
        assert!((s.coeff(-8) - c(4.0, 0.0)).norm() < 1e-12);
        let want_m2 = lambda * lambda * c(-0.75, 0.0);
        assert!((s.coeff(-2) - want_m2).norm() < 1e-10);
    }
}
