//! Moduli-chart data, Darboux coordinates, and assembly of the connection
//! forms (omega0, omega_plus, omega_minus) from coordinates by
//! prescribed-Laurent-data linear systems.
//!
//! A chart consists of the curve, the twist degree `d`, the scale
//! `lambda`, and three pairwise-disjoint groups of finite generic marked
//! points: `q` (g live points, positions are the `z` coordinates),
//! `qcheck` (g−d fixed points), and `p` (N = g−1−2d fixed points).

use num_complex::Complex;
use num_traits::{One, Zero};

use crate::curve::{
    holomorphic_basis, solve_differential, CurvePoint, DiffKind, Differential, Factored,
    HyperellipticCurve, LaurentCondition,
};
use crate::error::{Error, Result};
use crate::linalg::{qr_pivot, solve_square, Mat};
use crate::scalar::{re, C, Scalar};

/// Moment tolerance: existence of omega0 is obstructed by the residue
/// theorem unless `H = lambda d` to this accuracy.
pub fn tol_moment<S: Scalar>(lambda: C<S>, d: i64) -> S {
    let ld = (lambda * Complex::new(re::<S>(d as f64), S::zero())).norm();
    re::<S>(1e-10) * ld.max(S::one())
}

#[derive(Debug, Clone)]
pub struct ModuliChart<S: Scalar> {
    pub curve: HyperellipticCurve<S>,
    /// Twist degree, negative with `0 < -2d <= g-1`.
    pub d: i64,
    pub lambda: C<S>,
    pub q_div: Vec<CurvePoint<S>>,
    pub qcheck_div: Vec<CurvePoint<S>>,
    pub p_div: Vec<CurvePoint<S>>,
}

/// Darboux coordinates of a point of the affine bundle: extension
/// classes `x`, positions `z` of the `q` points, momenta `k`, and the
/// conjugate positions `zcheck`.
#[derive(Debug, Clone)]
pub struct DarbouxPoint<S: Scalar> {
    pub x: Vec<C<S>>,
    pub z: Vec<C<S>>,
    pub k: Vec<C<S>>,
    pub zcheck: Vec<C<S>>,
}

/// The sl2 connection-form triple over the punctured curve.
#[derive(Debug, Clone)]
pub struct ConnectionForms<S: Scalar> {
    pub omega0: Differential<S>,
    pub omega_plus: Differential<S>,
    pub omega_minus: Differential<S>,
    pub lambda: C<S>,
}

/// Diagnostics from `validate_chart`.
#[derive(Debug, Clone)]
pub struct ChartDiagnostics<S: Scalar> {
    /// Dimension of the omega_plus space (must equal N).
    pub omega_plus_dim: usize,
    /// Condition estimate of the evaluation matrix of that space at `p`.
    pub spanning_cond: S,
    /// Condition estimate of the period-evaluation matrix dA.
    pub da_cond: S,
}

impl<S: Scalar> ModuliChart<S> {
    pub fn new(
        curve: HyperellipticCurve<S>,
        d: i64,
        lambda: C<S>,
        q_div: Vec<CurvePoint<S>>,
        qcheck_div: Vec<CurvePoint<S>>,
        p_div: Vec<CurvePoint<S>>,
    ) -> Result<Self> {
        let g = curve.genus as i64;
        if d >= 0 || -2 * d > g - 1 {
            return Err(Error::DegenerateInput(format!(
                "twist degree d = {d} must be negative with -2d <= g-1"
            )));
        }
        let mc = ModuliChart {
            curve,
            d,
            lambda,
            q_div,
            qcheck_div,
            p_div,
        };
        if mc.q_div.len() != mc.curve.genus {
            return Err(Error::DegenerateInput("q divisor must have g points".into()));
        }
        if mc.qcheck_div.len() as i64 != g - d {
            return Err(Error::DegenerateInput(
                "qcheck divisor must have g-d points".into(),
            ));
        }
        if mc.p_div.len() != mc.n_ext() {
            return Err(Error::DegenerateInput(
                "p divisor must have g-1-2d points".into(),
            ));
        }
        mc.check_marked_points()?;
        Ok(mc)
    }

    /// Number of extension coordinates, `N = g-1-2d`.
    pub fn n_ext(&self) -> usize {
        (self.curve.genus as i64 - 1 - 2 * self.d) as usize
    }

    /// Number of SoV output records, `m = 2g-2-2d`.
    pub fn m_out(&self) -> usize {
        (2 * self.curve.genus as i64 - 2 - 2 * self.d) as usize
    }

    fn all_marked(&self) -> Vec<&CurvePoint<S>> {
        self.q_div
            .iter()
            .chain(self.qcheck_div.iter())
            .chain(self.p_div.iter())
            .collect()
    }

    fn check_marked_points(&self) -> Result<()> {
        let pts = self.all_marked();
        for (i, p) in pts.iter().enumerate() {
            match p {
                CurvePoint::Finite { x, .. } => {
                    if self.curve.near_branch(*x).is_some() {
                        return Err(Error::DegenerateInput(format!(
                            "marked point {i} sits at a branch point"
                        )));
                    }
                }
                _ => {
                    return Err(Error::DegenerateInput(format!(
                        "marked point {i} must be finite and generic"
                    )))
                }
            }
            for q in pts.iter().skip(i + 1) {
                if p.close_to(q, re::<S>(1e-8)) {
                    return Err(Error::DegenerateInput(format!(
                        "marked divisor has a repeated point near x = {:?}",
                        p.x()
                    )));
                }
            }
        }
        Ok(())
    }

    /// The chart with the `q` points moved to positions `z` (sheets kept).
    pub fn with_q(&self, z: &[C<S>]) -> Result<Self> {
        assert_eq!(z.len(), self.q_div.len());
        let mut out = self.clone();
        out.q_div = self
            .q_div
            .iter()
            .zip(z)
            .map(|(p, &x)| {
                let sheet = p.sheet().unwrap_or(1);
                self.curve.point(x, sheet)
            })
            .collect::<Result<Vec<_>>>()?;
        out.check_marked_points()?;
        Ok(out)
    }

    /// Darboux point whose `z` equals the chart's current q positions.
    pub fn darboux(&self, x: Vec<C<S>>, k: Vec<C<S>>, zcheck: Vec<C<S>>) -> DarbouxPoint<S> {
        DarbouxPoint {
            x,
            z: self.q_div.iter().map(|p| p.x().unwrap()).collect(),
            k,
            zcheck,
        }
    }
}

impl<S: Scalar> DarbouxPoint<S> {
    /// Moment `H = sum x_r k_r`.
    pub fn moment(&self) -> C<S> {
        self.x
            .iter()
            .zip(&self.k)
            .map(|(&x, &k)| x * k)
            .fold(C::<S>::zero(), |a, b| a + b)
    }

    /// C*-action: `x -> eps x`, `k -> k/eps`, positions fixed.
    pub fn cstar_act(&self, eps: C<S>) -> Result<Self> {
        if eps.is_zero() {
            return Err(Error::DegenerateInput("C* action with eps = 0".into()));
        }
        let inv = C::<S>::one() / eps;
        Ok(DarbouxPoint {
            x: self.x.iter().map(|&v| v * eps).collect(),
            z: self.z.clone(),
            k: self.k.iter().map(|&v| v * inv).collect(),
            zcheck: self.zcheck.clone(),
        })
    }

    /// Project onto the moment level set `H = lambda d` by a
    /// C*-compatible adjustment: for `lambda != 0` rescale `k` by
    /// `(lambda d)/H`; for `lambda = 0` subtract the excess from the
    /// momentum of the largest extension coordinate.
    pub fn projected(&self, lambda: C<S>, d: i64) -> Result<Self> {
        let h = self.moment();
        let target = lambda * Complex::new(re::<S>(d as f64), S::zero());
        let mut out = self.clone();
        if lambda.is_zero() {
            let rho = self
                .x
                .iter()
                .enumerate()
                .max_by(|a, b| {
                    a.1.norm()
                        .partial_cmp(&b.1.norm())
                        .unwrap_or(std::cmp::Ordering::Equal)
                })
                .map(|(i, _)| i)
                .ok_or_else(|| Error::DegenerateInput("empty extension vector".into()))?;
            if self.x[rho].is_zero() {
                return Err(Error::DegenerateInput(
                    "cannot project onto H = 0 with x = 0".into(),
                ));
            }
            out.k[rho] = out.k[rho] - h / self.x[rho];
        } else {
            if h.is_zero() {
                return Err(Error::DegenerateInput(
                    "cannot rescale momenta from H = 0".into(),
                ));
            }
            let factor = target / h;
            for v in out.k.iter_mut() {
                *v = *v * factor;
            }
        }
        Ok(out)
    }
}

fn cond<S: Scalar>(p: &CurvePoint<S>, e: i64, v: C<S>) -> LaurentCondition<S> {
    LaurentCondition {
        point: p.clone(),
        exponent: e,
        rhs: v,
    }
}

fn zero_c<S: Scalar>() -> C<S> {
    C::<S>::zero()
}

/// Denominator with a factor `(x - x(p))^mult` for each listed point
/// (conjugate sheets share the factor).
fn denom_from<S: Scalar>(groups: &[(&[CurvePoint<S>], usize)]) -> Factored<S> {
    let mut d = Factored::one();
    for (pts, mult) in groups {
        for p in *pts {
            d.push(p.x().unwrap(), *mult);
        }
    }
    d
}

/// Defining conditions of the omega_plus space: vanishing to order >= 2
/// at each q point and no poles on the conjugate sheet over qcheck.
fn omega_plus_conditions<S: Scalar>(mc: &ModuliChart<S>) -> Vec<LaurentCondition<S>> {
    let mut conds = Vec::new();
    for q in &mc.q_div {
        conds.push(cond(q, 0, zero_c::<S>()));
        conds.push(cond(q, 1, zero_c::<S>()));
    }
    for qc in &mc.qcheck_div {
        let s = qc.conj();
        conds.push(cond(&s, -2, zero_c::<S>()));
        conds.push(cond(&s, -1, zero_c::<S>()));
    }
    conds
}

/// Basis of the space the field `omega_plus` lives in: differentials with
/// poles of order <= 2 at the qcheck points, vanishing to order >= 2 at
/// the q points, regular elsewhere. Dimension N for a valid chart.
pub fn omega_plus_space<S: Scalar>(mc: &ModuliChart<S>) -> Result<Vec<Differential<S>>> {
    let denom = denom_from(&[(&mc.qcheck_div, 2)]);
    let sol = solve_differential(
        &mc.curve,
        DiffKind::Abelian,
        &denom,
        0,
        &omega_plus_conditions(mc),
    )?;
    Ok(sol.nullspace)
}

/// Check the chart invariants; returns conditioning diagnostics.
pub fn validate_chart<S: Scalar>(mc: &ModuliChart<S>) -> Result<ChartDiagnostics<S>> {
    mc.check_marked_points()?;
    let n = mc.n_ext();
    let space = omega_plus_space(mc)?;
    if space.len() != n {
        return Err(Error::DegenerateInput(format!(
            "omega_plus space has dimension {}, expected {n} (special line bundle)",
            space.len()
        )));
    }
    // spanning: evaluations at the p points must be invertible
    let mut rows = Vec::with_capacity(n);
    for p in &mc.p_div {
        let mut row = Vec::with_capacity(n);
        for w in &space {
            row.push(w.coeff_at(&mc.curve, p, 0)?);
        }
        rows.push(row);
    }
    let eval = Mat::from_rows(rows);
    let qr = qr_pivot(&eval, re::<S>(1e-10));
    if qr.rank < n {
        return Err(Error::DegenerateInput(
            "p divisor does not span (evaluation matrix singular)".into(),
        ));
    }
    let spanning_cond = qr.cond_estimate();
    let da = da_matrix(mc)?;
    let qr2 = qr_pivot(&da, re::<S>(1e-10));
    if qr2.rank < mc.curve.genus {
        return Err(Error::DegenerateInput(
            "q divisor is exceptional (dA singular)".into(),
        ));
    }
    Ok(ChartDiagnostics {
        omega_plus_dim: space.len(),
        spanning_cond,
        da_cond: qr2.cond_estimate(),
    })
}

/// Period-evaluation matrix `dA[i][j]` = value of the i-th holomorphic
/// differential at `q_j` in its standard chart.
pub fn da_matrix<S: Scalar>(mc: &ModuliChart<S>) -> Result<Mat<S>> {
    let basis = holomorphic_basis(&mc.curve);
    let g = mc.curve.genus;
    let mut rows = Vec::with_capacity(g);
    for w in &basis {
        let mut row = Vec::with_capacity(g);
        for q in &mc.q_div {
            row.push(w.coeff_at(&mc.curve, q, 0)?);
        }
        rows.push(row);
    }
    Ok(Mat::from_rows(rows))
}

/// The unique differential in the omega_plus space with value `k_r` at
/// each `p_r`.
pub fn build_omega_plus<S: Scalar>(mc: &ModuliChart<S>, k: &[C<S>]) -> Result<Differential<S>> {
    assert_eq!(k.len(), mc.n_ext());
    let denom = denom_from(&[(&mc.qcheck_div, 2)]);
    let mut conds = omega_plus_conditions(mc);
    for (p, &kr) in mc.p_div.iter().zip(k) {
        conds.push(cond(p, 0, kr));
    }
    let sol = solve_differential(&mc.curve, DiffKind::Abelian, &denom, 0, &conds)?;
    if !sol.nullspace.is_empty() {
        return Err(Error::DegenerateInput(format!(
            "omega_plus interpolation is underdetermined ({}-dim ambiguity)",
            sol.nullspace.len()
        )));
    }
    Ok(sol.particular)
}

/// The unique differential with simple poles at all marked points:
/// residues `lambda` at q, `-lambda` at qcheck, `-x_r k_r` at p, and 0-th
/// Laurent coefficient `-zcheck_i/2` at each `q_i`. Requires the moment
/// constraint `H = lambda d` (residue theorem).
pub fn build_omega_zero<S: Scalar>(
    mc: &ModuliChart<S>,
    pt: &DarbouxPoint<S>,
) -> Result<Differential<S>> {
    let lambda = mc.lambda;
    let h = pt.moment();
    let target = lambda * Complex::new(re::<S>(mc.d as f64), S::zero());
    let excess = (h - target).norm();
    if excess > tol_moment(lambda, mc.d) {
        return Err(Error::MomentViolation {
            excess: excess.lossy(),
        });
    }
    let denom = denom_from(&[(&mc.q_div, 1), (&mc.qcheck_div, 1), (&mc.p_div, 1)]);
    let mut conds = Vec::new();
    for (i, q) in mc.q_div.iter().enumerate() {
        conds.push(cond(q, -1, lambda));
        conds.push(cond(&q.conj(), -1, zero_c::<S>()));
        conds.push(cond(
            q,
            0,
            -pt.zcheck[i] * Complex::new(re::<S>(0.5), S::zero()),
        ));
    }
    for qc in &mc.qcheck_div {
        conds.push(cond(qc, -1, -lambda));
        conds.push(cond(&qc.conj(), -1, zero_c::<S>()));
    }
    for (r, p) in mc.p_div.iter().enumerate() {
        conds.push(cond(p, -1, -pt.x[r] * pt.k[r]));
        conds.push(cond(&p.conj(), -1, zero_c::<S>()));
    }
    let sol = solve_differential(&mc.curve, DiffKind::Abelian, &denom, 0, &conds)?;
    if !sol.nullspace.is_empty() {
        return Err(Error::DegenerateInput(
            "omega_zero system is underdetermined".into(),
        ));
    }
    Ok(sol.particular)
}

/// Particular `omega_minus` with the singular parts at each `p_r`
/// dictated by regularity of the connection there, vanishing to order 2
/// at the qcheck points, poles of order <= 2 at the q and p points; plus
/// the basis of the homogeneous ambiguity (generically empty when
/// `-2d = g-1`).
pub fn build_omega_minus<S: Scalar>(
    mc: &ModuliChart<S>,
    pt: &DarbouxPoint<S>,
    omega0: &Differential<S>,
    omega_plus: &Differential<S>,
) -> Result<(Differential<S>, Vec<Differential<S>>)> {
    let lambda = mc.lambda;
    let denom = denom_from(&[(&mc.p_div, 2), (&mc.q_div, 2)]);
    let mut conds = Vec::new();
    for (r, p) in mc.p_div.iter().enumerate() {
        let xr = pt.x[r];
        let a = omega0.expand_at(&mc.curve, p, 4)?;
        let c = omega_plus.expand_at(&mc.curve, p, 4)?;
        // singular part of 2 x_r omega0 / t + x_r^2 omega_plus / t^2
        //   - lambda x_r / t^2
        let two = Complex::new(re::<S>(2.0), S::zero());
        let tgt = a
            .shift_exponent(-1)
            .scale(two * xr)
            .add(&c.shift_exponent(-2).scale(xr * xr));
        let cm2 = tgt.coeff(-2) - lambda * xr;
        let cm1 = tgt.coeff(-1);
        conds.push(cond(p, -2, cm2));
        conds.push(cond(p, -1, cm1));
        let s = p.conj();
        conds.push(cond(&s, -2, zero_c::<S>()));
        conds.push(cond(&s, -1, zero_c::<S>()));
    }
    for q in &mc.q_div {
        let s = q.conj();
        conds.push(cond(&s, -2, zero_c::<S>()));
        conds.push(cond(&s, -1, zero_c::<S>()));
    }
    for qc in &mc.qcheck_div {
        conds.push(cond(qc, 0, zero_c::<S>()));
        conds.push(cond(qc, 1, zero_c::<S>()));
    }
    let sol = solve_differential(&mc.curve, DiffKind::Abelian, &denom, 0, &conds)?;
    Ok((sol.particular, sol.nullspace))
}

/// Assemble the full connection-form triple at a Darboux point. The
/// chart's q positions must match `pt.z` (use [`ModuliChart::with_q`]).
pub fn build_forms<S: Scalar>(
    mc: &ModuliChart<S>,
    pt: &DarbouxPoint<S>,
) -> Result<ConnectionForms<S>> {
    for (q, &z) in mc.q_div.iter().zip(&pt.z) {
        if (q.x().unwrap() - z).norm() > re::<S>(1e-12) * (S::one() + z.norm()) {
            return Err(Error::MismatchedAnchors);
        }
    }
    let omega_plus = build_omega_plus(mc, &pt.k)?;
    let omega0 = build_omega_zero(mc, pt)?;
    let (omega_minus, _ambiguity) = build_omega_minus(mc, pt, &omega0, &omega_plus)?;
    Ok(ConnectionForms {
        omega0,
        omega_plus,
        omega_minus,
        lambda: mc.lambda,
    })
}

/// Normalized third-kind differential: simple poles with residues +1 at
/// `p_plus` and -1 at `p_minus`, holomorphic elsewhere, vanishing 0-th
/// Laurent coefficient at every q point.
pub fn third_kind_normalized<S: Scalar>(
    mc: &ModuliChart<S>,
    p_plus: &CurvePoint<S>,
    p_minus: &CurvePoint<S>,
) -> Result<Differential<S>> {
    if p_plus.close_to(p_minus, re::<S>(1e-10)) {
        return Err(Error::DegenerateInput(
            "third-kind poles must be distinct".into(),
        ));
    }
    let mut denom = Factored::linear(p_plus.x().unwrap());
    denom.push(p_minus.x().unwrap(), 1);
    let mut conds = vec![
        cond(p_plus, -1, C::<S>::one()),
        cond(p_minus, -1, -C::<S>::one()),
    ];
    for s in [p_plus.conj(), p_minus.conj()] {
        if !s.close_to(p_plus, re::<S>(1e-10)) && !s.close_to(p_minus, re::<S>(1e-10)) {
            conds.push(cond(&s, -1, zero_c::<S>()));
        }
    }
    for q in &mc.q_div {
        conds.push(cond(q, 0, zero_c::<S>()));
    }
    let sol = solve_differential(&mc.curve, DiffKind::Abelian, &denom, 0, &conds)?;
    if !sol.nullspace.is_empty() {
        return Err(Error::DegenerateInput(
            "third-kind normalization is underdetermined (q exceptional)".into(),
        ));
    }
    Ok(sol.particular)
}

/// Read the Darboux data `(k, zcheck, kappa)` back off a form triple —
/// the inverse of the build operations.
pub fn darboux_from_forms<S: Scalar>(
    mc: &ModuliChart<S>,
    forms: &ConnectionForms<S>,
) -> Result<(Vec<C<S>>, Vec<C<S>>, Vec<C<S>>)> {
    let mut k = Vec::with_capacity(mc.n_ext());
    for p in &mc.p_div {
        k.push(forms.omega_plus.coeff_at(&mc.curve, p, 0)?);
    }
    let mut zcheck = Vec::with_capacity(mc.curve.genus);
    let mtwo = Complex::new(re::<S>(-2.0), S::zero());
    for q in &mc.q_div {
        zcheck.push(forms.omega0.coeff_at(&mc.curve, q, 0)? * mtwo);
    }
    let da = da_matrix(mc)?;
    let kappa = solve_square(&da, &zcheck, "dA (q exceptional)")?;
    Ok((k, zcheck, kappa))
}

/// The default desk-scale instance: genus 3, `y^2 = x(x-1)...(x-6)`,
/// `d = -1`, with fixed generic complex marked points, plus a sample
/// Darboux point on the moment level set.
pub fn default_instance<S: Scalar>(
    lambda: C<S>,
) -> Result<(ModuliChart<S>, DarbouxPoint<S>)> {
    let cx = |a: f64, b: f64| Complex::new(re::<S>(a), re::<S>(b));
    let roots: Vec<C<S>> = (0..7).map(|j| cx(j as f64, 0.0)).collect();
    let curve = HyperellipticCurve::new(crate::poly::Poly::from_roots(&roots))?;
    let mk = |c: &HyperellipticCurve<S>, x: C<S>, s: i8| c.point(x, s);
    let q = vec![
        mk(&curve, cx(0.31, 0.42), 1)?,
        mk(&curve, cx(1.77, -0.31), -1)?,
        mk(&curve, cx(3.12, 0.55), 1)?,
    ];
    let qc = vec![
        mk(&curve, cx(0.9, 1.1), 1)?,
        mk(&curve, cx(2.3, 0.9), -1)?,
        mk(&curve, cx(4.1, 1.3), 1)?,
        mk(&curve, cx(5.2, -0.8), -1)?,
    ];
    let p = vec![
        mk(&curve, cx(1.4, -1.2), 1)?,
        mk(&curve, cx(2.8, 1.4), 1)?,
        mk(&curve, cx(3.6, -1.1), -1)?,
        mk(&curve, cx(5.7, 0.9), 1)?,
    ];
    let mc = ModuliChart::new(curve, -1, lambda, q, qc, p)?;
    let x = vec![
        cx(0.8, 0.3),
        cx(-0.5, 0.7),
        cx(1.1, -0.4),
        cx(0.6, 0.9),
    ];
    let k = vec![
        cx(0.9, -0.2),
        cx(0.4, 0.6),
        cx(-0.7, 0.3),
        cx(0.5, -0.8),
    ];
    let zcheck = vec![cx(0.3, 0.5), cx(-0.6, 0.2), cx(0.8, -0.7)];
    let pt = mc.darboux(x, k, zcheck).projected(lambda, mc.d)?;
    Ok((mc, pt))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::cx;

    fn c(a: f64, b: f64) -> C<f64> {
        Complex::new(a, b)
    }

    fn instance() -> (ModuliChart<f64>, DarbouxPoint<f64>) {
        default_instance(c(1.0, 0.0)).unwrap()
    }

    #[test]
    fn default_chart_is_valid() {
        let (mc, pt) = instance();
        let diag = validate_chart(&mc).unwrap();
        assert_eq!(diag.omega_plus_dim, 4);
        assert!(diag.spanning_cond.is_finite());
        assert!(diag.da_cond.is_finite());
        assert!((pt.moment() - c(-1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn omega_plus_defining_conditions() {
        let (mc, pt) = instance();
        let w = build_omega_plus(&mc, &pt.k).unwrap();
        // interpolation values
        for (p, &kr) in mc.p_div.iter().zip(&pt.k) {
            let v = w.coeff_at(&mc.curve, p, 0).unwrap();
            assert!((v - kr).norm() < 1e-8 * (1.0 + kr.norm()), "p eval {v} vs {kr}");
        }
        // double zeros at q
        for q in &mc.q_div {
            let ord = w.order_at(&mc.curve, q).unwrap();
            assert!(ord >= 2, "order at q = {ord}");
        }
        // pole order <= 2 at qcheck, regular on the conjugate sheet
        for qc in &mc.qcheck_div {
            let ord = w.order_at(&mc.curve, qc).unwrap();
            assert!(ord >= -2, "order at qcheck = {ord}");
            let ordc = w.order_at(&mc.curve, &qc.conj()).unwrap();
            assert!(ordc >= 0, "pole on conjugate sheet: {ordc}");
        }
        // regular at infinity and at branch points
        assert!(w.order_at(&mc.curve, &CurvePoint::Infinity).unwrap() >= 0);
    }

    #[test]
    fn omega_plus_linearity_and_cardinality() {
        let (mc, _) = instance();
        let n = mc.n_ext();
        for r in 0..n {
            let mut e = vec![c(0.0, 0.0); n];
            e[r] = c(1.0, 0.0);
            let w = build_omega_plus(&mc, &e).unwrap();
            for (s, p) in mc.p_div.iter().enumerate() {
                let v = w.coeff_at(&mc.curve, p, 0).unwrap();
                let want = if s == r { 1.0 } else { 0.0 };
                assert!((v - c(want, 0.0)).norm() < 1e-8, "cardinal {r},{s}: {v}");
            }
        }
        let k1 = vec![c(1.0, 0.5), c(-0.3, 0.2), c(0.7, 0.0), c(0.1, -0.9)];
        let k2 = vec![c(0.4, -0.1), c(0.8, 0.3), c(-0.2, 0.6), c(0.0, 0.5)];
        let ks: Vec<C<f64>> = k1.iter().zip(&k2).map(|(&a, &b)| a + b).collect();
        let w1 = build_omega_plus(&mc, &k1).unwrap();
        let w2 = build_omega_plus(&mc, &k2).unwrap();
        let ws = build_omega_plus(&mc, &ks).unwrap();
        let diff = ws.sub(&w1.add(&w2, &mc.curve), &mc.curve);
        // compare at a neutral sample point
        let sample = mc.curve.point(c(0.77, 0.21), 1).unwrap();
        let v = diff.coeff_at(&mc.curve, &sample, 0).unwrap();
        assert!(v.norm() < 1e-8, "linearity defect {v}");
    }

    #[test]
    fn omega_zero_residues_and_coefficients() {
        let (mc, pt) = instance();
        let w0 = build_omega_zero(&mc, &pt).unwrap();
        let l = mc.lambda;
        let mut total = c(0.0, 0.0);
        for q in &mc.q_div {
            let r = w0.residue(&mc.curve, q).unwrap();
            assert!((r - l).norm() < 1e-9, "residue at q: {r}");
            total += r;
        }
        for qc in &mc.qcheck_div {
            let r = w0.residue(&mc.curve, qc).unwrap();
            assert!((r + l).norm() < 1e-9, "residue at qcheck: {r}");
            total += r;
        }
        for (r_idx, p) in mc.p_div.iter().enumerate() {
            let r = w0.residue(&mc.curve, p).unwrap();
            let want = -pt.x[r_idx] * pt.k[r_idx];
            assert!((r - want).norm() < 1e-9 * (1.0 + want.norm()), "residue at p: {r}");
            total += r;
        }
        assert!(total.norm() < 1e-9, "residue sum {total}");
        for (i, q) in mc.q_div.iter().enumerate() {
            let c0 = w0.coeff_at(&mc.curve, q, 0).unwrap();
            let want = -pt.zcheck[i] * c(0.5, 0.0);
            assert!((c0 - want).norm() < 1e-9 * (1.0 + want.norm()), "0th at q_{i}: {c0}");
        }
    }

    #[test]
    fn omega_zero_moment_obstruction() {
        let (mc, pt) = instance();
        let mut bad = pt.clone();
        bad.k[0] += c(1e-3, 0.0);
        match build_omega_zero(&mc, &bad) {
            Err(Error::MomentViolation { excess }) => {
                assert!(excess > 1e-6, "excess {excess}");
            }
            other => panic!("expected moment violation, got {other:?}"),
        }
    }

    #[test]
    fn omega_minus_singular_parts() {
        let (mc, pt) = instance();
        let wp = build_omega_plus(&mc, &pt.k).unwrap();
        let w0 = build_omega_zero(&mc, &pt).unwrap();
        let (wm, ambiguity) = build_omega_minus(&mc, &pt, &w0, &wp).unwrap();
        assert!(ambiguity.is_empty(), "unexpected Higgs ambiguity {}", ambiguity.len());
        let two = c(2.0, 0.0);
        for (r, p) in mc.p_div.iter().enumerate() {
            let xr = pt.x[r];
            let a = w0.expand_at(&mc.curve, p, 4).unwrap();
            let cc = wp.expand_at(&mc.curve, p, 4).unwrap();
            let tgt = a
                .shift_exponent(-1)
                .scale(two * xr)
                .add(&cc.shift_exponent(-2).scale(xr * xr));
            let got = wm.expand_at(&mc.curve, p, 4).unwrap();
            let want_m2 = tgt.coeff(-2) - mc.lambda * xr;
            assert!(
                (got.coeff(-2) - want_m2).norm() < 1e-9 * (1.0 + want_m2.norm()),
                "coeff(-2) at p_{r}: {} vs {}",
                got.coeff(-2),
                want_m2
            );
            assert!(
                (got.coeff(-1) - tgt.coeff(-1)).norm() < 1e-9 * (1.0 + tgt.coeff(-1).norm()),
                "coeff(-1) at p_{r}: {} vs {}",
                got.coeff(-1),
                tgt.coeff(-1)
            );
        }
        for qc in &mc.qcheck_div {
            assert!(wm.order_at(&mc.curve, qc).unwrap() >= 2);
        }
        // x = 0 makes all prescribed singular parts vanish
        let mut pt0 = pt.clone();
        pt0.x = vec![c(0.0, 0.0); 4];
        pt0.k = pt.k.clone();
        // moment is now 0, allowed only at lambda = 0; rebuild chart data
        let mc0 = ModuliChart { lambda: c(0.0, 0.0), ..mc.clone() };
        let w00 = build_omega_zero(&mc0, &pt0).unwrap();
        let (wm0, _) = build_omega_minus(&mc0, &pt0, &w00, &wp).unwrap();
        for p in &mc0.p_div {
            assert!(wm0.order_at(&mc0.curve, p).unwrap() >= 0, "pole at p with x = 0");
        }
    }

    #[test]
    fn third_kind_defining_properties() {
        let (mc, _) = instance();
        let a = mc.curve.point(c(0.6, -0.9), 1).unwrap();
        let b = mc.curve.point(c(4.8, 0.7), -1).unwrap();
        let w = third_kind_normalized(&mc, &a, &b).unwrap();
        assert!((w.residue(&mc.curve, &a).unwrap() - c(1.0, 0.0)).norm() < 1e-8);
        assert!((w.residue(&mc.curve, &b).unwrap() + c(1.0, 0.0)).norm() < 1e-8);
        for q in &mc.q_div {
            let c0 = w.coeff_at(&mc.curve, q, 0).unwrap();
            assert!(c0.norm() < 1e-8, "0th coeff at q: {c0}");
        }
        let wswap = third_kind_normalized(&mc, &b, &a).unwrap();
        let s = w.add(&wswap, &mc.curve);
        let sample = mc.curve.point(c(1.9, 1.4), 1).unwrap();
        assert!(s.coeff_at(&mc.curve, &sample, 0).unwrap().norm() < 1e-8);
    }

    #[test]
    fn darboux_round_trip() {
        let (mc, pt) = instance();
        let forms = build_forms(&mc, &pt).unwrap();
        let (k, zcheck, kappa) = darboux_from_forms(&mc, &forms).unwrap();
        for (got, want) in k.iter().zip(&pt.k) {
            assert!((got - want).norm() < 1e-7 * (1.0 + want.norm()), "k {got} vs {want}");
        }
        for (got, want) in zcheck.iter().zip(&pt.zcheck) {
            assert!((got - want).norm() < 1e-7 * (1.0 + want.norm()), "zcheck {got} vs {want}");
        }
        // dA * kappa = zcheck
        let da = da_matrix(&mc).unwrap();
        let back = da.matvec(&kappa);
        for (got, want) in back.iter().zip(&zcheck) {
            assert!((got - want).norm() < 1e-8 * (1.0 + want.norm()));
        }
    }

    #[test]
    fn cstar_equivariance() {
        let (mc, pt) = instance();
        let eps = c(1.7, -0.6);
        let acted = pt.cstar_act(eps).unwrap();
        assert!((acted.moment() - pt.moment()).norm() < 1e-12);
        // omega_plus scales by 1/eps
        let w = build_omega_plus(&mc, &pt.k).unwrap();
        let wa = build_omega_plus(&mc, &acted.k).unwrap();
        let sample = mc.curve.point(c(0.77, 0.21), 1).unwrap();
        let v = w.coeff_at(&mc.curve, &sample, 0).unwrap();
        let va = wa.coeff_at(&mc.curve, &sample, 0).unwrap();
        assert!((va * eps - v).norm() < 1e-9 * (1.0 + v.norm()));
        // omega_zero is invariant (residues -(eps x)(k/eps) unchanged)
        let w0 = build_omega_zero(&mc, &pt).unwrap();
        let w0a = build_omega_zero(&mc, &acted).unwrap();
        let d = w0a.sub(&w0, &mc.curve);
        assert!(d.coeff_at(&mc.curve, &sample, 0).unwrap().norm() < 1e-9);
    }

    #[test]
    fn projection_reaches_level_sets() {
        let (mc, _) = instance();
        let x = vec![c(1.0, 0.2), c(0.3, -0.4), c(-0.8, 0.5), c(0.6, 0.6)];
        let k = vec![c(0.2, 0.9), c(-0.5, 0.1), c(0.4, 0.4), c(0.7, -0.3)];
        let zc = vec![c(0.0, 0.0); 3];
        let raw = mc.darboux(x, k, zc);
        let p1 = raw.projected(c(1.0, 0.0), -1).unwrap();
        assert!((p1.moment() - c(-1.0, 0.0)).norm() < 1e-12);
        let p0 = raw.projected(c(0.0, 0.0), -1).unwrap();
        assert!(p0.moment().norm() < 1e-12);
        // invalid chart parameters rejected
        assert!(ModuliChart::new(
            mc.curve.clone(),
            1,
            c(1.0, 0.0),
            mc.q_div.clone(),
            mc.qcheck_div.clone(),
            mc.p_div.clone()
        )
        .is_err());
    }

    #[test]
    fn moved_q_points_shift_the_chart() {
        let (mc, pt) = instance();
        let mut z = pt.z.clone();
        z[0] += c(0.05, -0.03);
        let mc2 = mc.with_q(&z).unwrap();
        assert!((mc2.q_div[0].x().unwrap() - z[0]).norm() < 1e-14);
        // sheet preserved
        assert_eq!(mc2.q_div[0].sheet(), mc.q_div[0].sheet());
        validate_chart(&mc2).unwrap();
    }

    #[test]
    fn engineered_duplicate_point_rejected() {
        let (mc, _) = instance();
        let mut p2 = mc.p_div.clone();
        p2[1] = p2[0].clone();
        assert!(ModuliChart::new(
            mc.curve.clone(),
            mc.d,
            mc.lambda,
            mc.q_div.clone(),
            mc.qcheck_div.clone(),
            p2
        )
        .is_err());
    }

    #[test]
    fn omega_plus_space_matches_direct_dimension() {
        let (mc, _) = instance();
        let space = omega_plus_space(&mc).unwrap();
        assert_eq!(space.len(), 4);
        for w in &space {
            for q in &mc.q_div {
                assert!(w.order_at(&mc.curve, q).unwrap() >= 2);
            }
        }
        // placeholder use of cx to keep the helper import honest
        let _ = cx::<f64>(0.0, 0.0);
    }
}
