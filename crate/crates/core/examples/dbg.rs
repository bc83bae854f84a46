use num_complex::Complex;
use sovlab_core::conn2oper::{apparent_data, oper_from_forms};
use sovlab_core::lambda_conn::{build_forms, default_instance};
use sovlab_core::scalar::C;

fn c(re: f64, im: f64) -> C<f64> {
    Complex::new(re, im)
}

fn main() {
    let (mc, pt) = default_instance::<f64>(c(1.0, 0.0)).unwrap();
    let forms = build_forms(&mc, &pt).unwrap();
    let direct = oper_from_forms(&forms);
    let data = apparent_data(&mc, &forms).unwrap();
    let lambda = forms.lambda;
    let l2 = lambda * lambda;
    for (i, ap) in data.iter().enumerate() {
        let p = &ap.point;
        let x0 = p.x().unwrap();
        // residual of omega_plus at the record point
        let sc = forms.omega_plus.expand_at(&mc.curve, p, 2).unwrap();
        let eps = (sc.coeff(0) / sc.coeff(1)).norm();
        // contour extraction of the t^-1 and t^-2 Laurent coefficients of
        // the direct potential on a ring around the record point
        let n = 256usize;
        let rho = 0.002;
        let y0 = p.y().unwrap();
        let mut cm1 = C::<f64>::new(0.0, 0.0);
        let mut cm2 = C::<f64>::new(0.0, 0.0);
        let mut yprev = y0;
        for j in 0..n {
            let th = 2.0 * std::f64::consts::PI * (j as f64) / (n as f64);
            let z = x0 + c(rho * th.cos(), rho * th.sin());
            let pa = mc.curve.point(z, 1).unwrap();
            let pb = mc.curve.point(z, -1).unwrap();
            let pp = if (pa.y().unwrap() - yprev).norm() < (pb.y().unwrap() - yprev).norm() {
                pa
            } else {
                pb
            };
            yprev = pp.y().unwrap();
            // potential value at pp via series at pp itself (coeff 0)
            let q = direct
                .potential_at(&mc.curve, &pp, 2)
                .unwrap()
                .coeff(0);
            let e1 = c(th.cos(), th.sin());
            cm1 += q * e1 * c(rho, 0.0);
            cm2 += q * e1 * e1 * c(rho * rho, 0.0);
        }
        cm1 /= c(n as f64, 0.0);
        cm2 /= c(n as f64, 0.0);
        let nu_contour = cm1 / l2 / lambda;
        let nu_rec = ap.nu_lambda / lambda;
        println!(
            "rec {i}: x={:.12}+{:.12}i eps={:.2e} nu_rec={:?}\n   nu_ctr={:?} dnu={:.3e} cm2/l2={:?}",
            x0.re,
            x0.im,
            eps,
            nu_rec,
            nu_contour,
            (nu_rec - nu_contour).norm(),
            cm2 / l2
        );
    }
}
