//! Numerics for the separation-of-variables map on odd hyperelliptic
//! curves: lambda-connections in Darboux coordinates on one side,
//! projective opers with apparent singularities on the other, plus the
//! Poisson-bracket verification machinery connecting them.

pub mod conn2oper;
pub mod curve;
pub mod error;
pub mod lambda_conn;
pub mod linalg;
pub mod oper_from_data;
pub mod poly;
pub mod scalar;
pub mod schwarzian;
pub mod series;

pub use error::{Error, Result};
pub use scalar::{Scalar, C};

/// Complex double-precision scalar, the default build.
pub type C64 = num_complex::Complex<f64>;
/// Complex single-precision scalar.
pub type C32 = num_complex::Complex<f32>;
/// Complex double-double extended scalar.
pub type CExt = num_complex::Complex<twofloat::TwoFloat>;
