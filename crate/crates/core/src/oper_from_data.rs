//! Target-side constructions: testing whether a divisor imposes
//! independent conditions on holomorphic quadratic differentials,
//! building-block quadratic differentials with prescribed Laurent tails
//! on a reduced divisor, and assembling an oper from prescribed
//! apparent-singularity positions and residue parameters.

use num_complex::Complex;
use num_traits::{One, Zero};

use crate::curve::{
    quadratic_basis, solve_differential, CurvePoint, DiffKind, Differential, Factored,
    FieldElem, HyperellipticCurve, LaurentCondition,
};
use crate::error::{Error, Result};
use crate::linalg::{qr_pivot, Mat};
use crate::poly::Poly;
use crate::scalar::{re, C, Scalar};
use crate::schwarzian::{ApparentSingularity, OperRep};

/// Outcome of the genericity test for a divisor `u` against holomorphic
/// quadratic differentials: `Generic` when the space `Q_u` of such
/// differentials vanishing on `u` has the expected (minimal) dimension
/// `max(0, 3g-3 - deg u)`, `Special` otherwise, carrying the actual
/// dimension and a basis of `Q_u`.
#[derive(Debug, Clone)]
pub enum QGenericity<S: Scalar> {
    Generic,
    Special {
        dim: usize,
        basis: Vec<Differential<S>>,
    },
}

/// Evaluation matrix of the holomorphic quadratic differential basis on
/// the points of `u`: row `i` holds the `t^{j_i}` Laurent coefficient of
/// each basis element at `u_i`, where `j_i` counts previous occurrences
/// of the same point (derivative rows for multiple points). Rows are
/// scaled to unit max entry; the scaling is irrelevant for rank and is
/// reported back for right-hand sides.
fn eval_matrix<S: Scalar>(
    curve: &HyperellipticCurve<S>,
    basis: &[Differential<S>],
    u: &[CurvePoint<S>],
) -> Result<(Mat<S>, Vec<S>)> {
    let tol = re::<S>(1e-9);
    let mut rows: Vec<Vec<C<S>>> = Vec::with_capacity(u.len());
    let mut scales: Vec<S> = Vec::with_capacity(u.len());
    for (i, p) in u.iter().enumerate() {
        let j = u[..i].iter().filter(|q| q.close_to(p, tol)).count() as i64;
        let mut row = Vec::with_capacity(basis.len());
        for b in basis {
            let v = if j == 0 {
                b.eval_fn(p)?
            } else {
                b.expand_at(curve, p, j + 2)?.coeff(j)
            };
            row.push(v);
        }
        let mx = row
            .iter()
            .map(|v| v.norm())
            .fold(S::zero(), |a, b| a.max(b))
            .max(re::<S>(1e-300));
        for v in row.iter_mut() {
            *v = *v / Complex::new(mx, S::zero());
        }
        rows.push(row);
        scales.push(mx);
    }
    Ok((Mat::from_rows(rows), scales))
}

/// Linear combination of single-term basis differentials with the given
/// coefficients.
fn combine<S: Scalar>(basis: &[Differential<S>], coeffs: &[C<S>]) -> Differential<S> {
    let mut terms = Vec::new();
    for (b, &c) in basis.iter().zip(coeffs) {
        for (bc, e) in &b.terms {
            terms.push((c * *bc, e.clone()));
        }
    }
    Differential::from_terms(DiffKind::Quadratic, terms)
}

/// Dimension test of `Q_u`, the space of holomorphic quadratic
/// differentials vanishing on the effective divisor `u` (points listed
/// with multiplicity).
pub fn q_genericity<S: Scalar>(
    curve: &HyperellipticCurve<S>,
    u: &[CurvePoint<S>],
) -> Result<QGenericity<S>> {
    let basis = quadratic_basis(curve);
    let n = basis.len();
    let (a, _) = eval_matrix(curve, &basis, u)?;
    let qr = qr_pivot(&a, re::<S>(1e-9));
    let null = qr.nullspace();
    let actual = null.len();
    let expected = n.saturating_sub(u.len());
    if actual == expected {
        Ok(QGenericity::Generic)
    } else {
        Ok(QGenericity::Special {
            dim: actual,
            basis: null.iter().map(|v| combine(&basis, v)).collect(),
        })
    }
}

/// Check that `u` is reduced: pairwise distinct points.
fn check_reduced<S: Scalar>(u: &[CurvePoint<S>]) -> Result<()> {
    let tol = re::<S>(1e-9);
    for i in 0..u.len() {
        for j in 0..i {
            if u[i].close_to(&u[j], tol) {
                return Err(Error::DegenerateInput(format!(
                    "divisor is not reduced: points {j} and {i} coincide"
                )));
            }
        }
    }
    Ok(())
}

/// The building-block quadratic differentials attached to the `n`-th
/// point of a reduced divisor `u` of degree `3g-3`:
///
/// * `q2_n`: double pole at `u_n` with tail `t^-2 + 0*t^-1 + 0*t^0`,
/// * `q1_n`: simple pole at `u_n` with tail `t^-1 + 0*t^0`,
///
/// both vanishing at every other `u_k` and regular everywhere else
/// (hyperelliptic-conjugate poles removed by explicit conditions).
/// Unique when `u` imposes independent conditions; a degenerate system
/// reports the excess dimension.
pub fn building_blocks<S: Scalar>(
    curve: &HyperellipticCurve<S>,
    u: &[CurvePoint<S>],
    n: usize,
) -> Result<(Differential<S>, Differential<S>)> {
    check_reduced(u)?;
    for p in u {
        if !matches!(p, CurvePoint::Finite { .. }) {
            return Err(Error::Unsupported(
                "building blocks at branch points or infinity".into(),
            ));
        }
    }
    // poles only at u_n (and over its conjugate, removed below), so the
    // denominator stays degree 2 and the spanning polynomials stay small:
    // a global prod (x - x_k)^2 denominator would need degree-16
    // numerators whose expanded powers cancel catastrophically when the
    // result is evaluated far from the solve's recentering
    let xn = u[n].x().unwrap();
    let denom = Factored::linear(xn).mul(&Factored::linear(xn));
    let one = Complex::new(S::one(), S::zero());
    let zero = C::<S>::zero();
    let build = |lead: i64| -> Result<Differential<S>> {
        let mut conds: Vec<LaurentCondition<S>> = Vec::new();
        for e in -2..=0 {
            conds.push(LaurentCondition {
                point: u[n].clone(),
                exponent: e,
                rhs: if e == lead { one } else { zero },
            });
        }
        for e in -2..=-1 {
            conds.push(LaurentCondition {
                point: u[n].conj(),
                exponent: e,
                rhs: zero,
            });
        }
        for (k, p) in u.iter().enumerate() {
            if k != n {
                conds.push(LaurentCondition {
                    point: p.clone(),
                    exponent: 0,
                    rhs: zero,
                });
            }
        }
        let sol = solve_differential(curve, DiffKind::Quadratic, &denom, 0, &conds)?;
        // for deg u < 3g-3 the blocks are only defined up to Q_u; a
        // nullspace beyond that expected freedom means u is Q-special
        let expected = (3 * curve.genus - 3).saturating_sub(u.len());
        if sol.nullspace.len() > expected {
            return Err(Error::QSpecial {
                dim: sol.nullspace.len(),
            });
        }
        Ok(sol.particular)
    };
    Ok((build(-2)?, build(-1)?))
}

/// The reference-correction quadratic differential
///
/// `B = (3/16) sum_r dx^2/(x - r)^2 - (3g/8) x^(2g-1) dx^2 / f(x)`
///
/// (sum over the finite branch points `r`). In the standard chart at
/// every branch point and at infinity its tail is exactly
/// `(3/4) t^-2 + 0 t^-1 + ...` (odd coefficients vanish by parity), and
/// it is regular everywhere else. Scaled by `lambda^2` it cancels the
/// `(lambda^2/2) * Schwarzian(x(t))` term that converting a potential to
/// the standard charts introduces at those points, so a potential built
/// as "global quadratic differential + lambda^2 B" yields a projective
/// structure that is smooth at the branch points and at infinity.
pub fn reference_correction<S: Scalar>(curve: &HyperellipticCurve<S>) -> Differential<S> {
    let g = curve.genus;
    let mut terms: Vec<(C<S>, FieldElem<S>)> = Vec::new();
    let c316 = Complex::new(re::<S>(3.0 / 16.0), S::zero());
    for &r in curve.branch_points() {
        let d = Factored::linear(r).mul(&Factored::linear(r));
        terms.push((
            c316,
            FieldElem {
                a: Poly::one(),
                b: Poly::zero(),
                d,
            },
        ));
    }
    let mut mono = vec![C::<S>::zero(); 2 * g];
    mono[2 * g - 1] = C::<S>::one();
    terms.push((
        Complex::new(-re::<S>(3.0 * g as f64 / 8.0), S::zero()),
        FieldElem {
            a: Poly::new(mono),
            b: Poly::zero(),
            d: curve.f_factored(),
        },
    ));
    Differential::from_terms(DiffKind::Quadratic, terms)
}

/// Assemble an oper with apparent singularities exactly at the given
/// points and the given residue parameters (`nu_lambda` field, i.e. the
/// parameters as returned by the classifier). The potential is
///
/// `lambda^2 * ( -(3/4) sum_n q2_n + sum_n (nu_n/lambda) q1_n + q0
///   + deltaq + B )`
///
/// with `q2_n, q1_n` the building blocks, `B` the reference correction
/// (see [`reference_correction`]), and `q0` the holomorphic quadratic
/// differential solving `q0(u_n) = -(nu_n/lambda)^2 - B(u_n)`, so the
/// full tail at `u_n` is the apparent signature with its no-log
/// constraint. `deltaq` is an optional element of `Q_u` (required to
/// vanish on `u`), meaningful when `deg u < 3g-3`.
pub fn oper_from_uv<S: Scalar>(
    curve: &HyperellipticCurve<S>,
    records: &[ApparentSingularity<S>],
    lambda: C<S>,
    deltaq: Option<&Differential<S>>,
) -> Result<OperRep<S>> {
    if lambda.is_zero() {
        return Err(Error::LambdaZero);
    }
    let u: Vec<CurvePoint<S>> = records.iter().map(|r| r.point.clone()).collect();
    check_reduced(&u)?;
    let basis = quadratic_basis(curve);
    let ndim = basis.len();
    if u.len() > ndim {
        return Err(Error::DegenerateInput(format!(
            "more apparent singularities ({}) than quadratic conditions ({ndim})",
            u.len()
        )));
    }
    let bcorr = reference_correction(curve);
    let (a, scales) = eval_matrix(curve, &basis, &u)?;
    let qr = qr_pivot(&a, re::<S>(1e-9));
    let excess = qr.nullspace().len() - (ndim - u.len());
    if excess > 0 {
        return Err(Error::QSpecial {
            dim: ndim - u.len() + excess,
        });
    }
    // q0(u_n) = -nu_n^2 - B(u_n) with nu_n = nu_lambda,n / lambda
    let mut rhs: Vec<C<S>> = Vec::with_capacity(records.len());
    for (r, &s) in records.iter().zip(&scales) {
        let nu = r.nu_lambda / lambda;
        rhs.push((-nu * nu - bcorr.eval_fn(&r.point)?) / Complex::new(s, S::zero()));
    }
    let (coeffs, residual) = qr.solve_ls(&rhs);
    if residual > re::<S>(1e-7) {
        return Err(Error::InconsistentSystem {
            residual: residual.to_f64().unwrap_or(f64::NAN),
        });
    }
    let q0 = combine(&basis, &coeffs);
    if let Some(dq) = deltaq {
        // deltaq must lie in Q_u: holomorphic (guaranteed by the caller
        // passing a combination of the holomorphic basis) and vanishing
        // on u
        let scale = dq
            .terms
            .iter()
            .map(|(c, _)| c.norm())
            .fold(S::zero(), |a, b| a.max(b))
            .max(re::<S>(1e-300));
        for p in &u {
            if dq.eval_fn(p)?.norm() > re::<S>(1e-7) * scale {
                return Err(Error::DegenerateInput(
                    "deltaq does not vanish on the apparent divisor".into(),
                ));
            }
        }
    }
    let mut total = q0.add(&bcorr, curve);
    if let Some(dq) = deltaq {
        total = total.add(dq, curve);
    }
    let m34 = Complex::new(re::<S>(-0.75), S::zero());
    for (n, r) in records.iter().enumerate() {
        let (q2, q1) = building_blocks(curve, &u, n)?;
        let nu = r.nu_lambda / lambda;
        total = total.add(&q2.scale(m34), curve);
        total = total.add(&q1.scale(nu), curve);
    }
    Ok(OperRep::from_quad(total.scale(lambda * lambda), lambda))
}
