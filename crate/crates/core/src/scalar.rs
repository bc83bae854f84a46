//! Scalar abstraction: the whole library is generic over the underlying
//! real floating-point type, so an extended-precision build is a drop-in
//! change of type parameter.

use std::fmt::{Debug, Display};

use num_complex::Complex;
use num_traits::Float;

/// Real scalar the library computes over. `f64` is the default build;
/// `twofloat::TwoFloat` gives a double-double extended build.
pub trait Scalar: Float + Debug + Display + Send + Sync + 'static {
    /// Lossless-enough conversion from an `f64` constant.
    fn of(x: f64) -> Self;
    /// Lossy conversion back to `f64` (reports, serialization).
    fn lossy(self) -> f64;
    /// Short name used in reports.
    fn name() -> &'static str;
}

impl Scalar for f64 {
    fn of(x: f64) -> Self {
        x
    }
    fn lossy(self) -> f64 {
        self
    }
    fn name() -> &'static str {
        "double"
    }
}

impl Scalar for f32 {
    fn of(x: f64) -> Self {
        x as f32
    }
    fn lossy(self) -> f64 {
        self as f64
    }
    fn name() -> &'static str {
        "single"
    }
}

impl Scalar for twofloat::TwoFloat {
    fn of(x: f64) -> Self {
        twofloat::TwoFloat::from(x)
    }
    fn lossy(self) -> f64 {
        self.hi()
    }
    fn name() -> &'static str {
        "extended"
    }
}

/// Complex number over a [`Scalar`].
pub type C<S> = Complex<S>;

/// Build a real scalar from an `f64` literal.
pub fn re<S: Scalar>(x: f64) -> S {
    S::of(x)
}

/// Build a complex scalar from `f64` parts.
pub fn cx<S: Scalar>(re: f64, im: f64) -> C<S> {
    Complex::new(S::of(re), S::of(im))
}

/// `Complex::norm` but spelled as a free function, handy in iterator chains.
pub fn cabs<S: Scalar>(z: C<S>) -> S {
    z.norm()
}

/// Principal square root convention used for sheet labels: the root with
/// nonnegative real part, ties broken by nonnegative imaginary part.
pub fn principal_sqrt<S: Scalar>(w: C<S>) -> C<S> {
    let r = w.sqrt();
    let zero = S::zero();
    if r.re > zero || (r.re == zero && r.im >= zero) {
        r
    } else {
        -r
    }
}
