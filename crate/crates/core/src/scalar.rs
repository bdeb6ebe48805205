//! Scalar abstraction shared by every numeric module.
//!
//! All model, estimator and bound computations are written against [`Real`],
//! which is implemented for `f32` and `f64`. Complex arithmetic goes through
//! [`nalgebra::Complex`] so the same matrices plug into nalgebra's solvers.

use nalgebra::{Complex, RealField};

/// Real floating point scalar usable by the estimator (f32 or f64).
pub trait Real: RealField + Copy + Default {}

impl Real for f32 {}
impl Real for f64 {}

/// Complex scalar over [`Real`].
pub type Cx<T> = Complex<T>;

/// Converts an `f64` literal into `T`.
#[inline]
pub fn lit<T: Real>(x: f64) -> T {
    nalgebra::convert(x)
}

/// Converts `T` back into `f64` for reporting.
#[inline]
pub fn to_f64<T: Real>(x: T) -> f64 {
    nalgebra::try_convert(x).unwrap_or(f64::NAN)
}

/// `e^{jθ}`.
#[inline]
pub fn cis<T: Real>(theta: T) -> Cx<T> {
    let (s, c) = theta.sin_cos();
    Complex::new(c, s)
}

#[inline]
pub fn arg<T: Real>(z: Cx<T>) -> T {
    z.im.atan2(z.re)
}

#[inline]
pub fn abs<T: Real>(z: Cx<T>) -> T {
    z.re.hypot(z.im)
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle<T: Real>(theta: T) -> T {
    let pi = T::pi();
    let two_pi = T::two_pi();
    if theta > -pi && theta <= pi {
        return theta;
    }
    let mut w = theta - two_pi * ((theta + pi) / two_pi).floor();
    // floor maps the open end onto -π; fold it back to +π
    if w <= -pi {
        w += two_pi;
    }
    if w > pi {
        w -= two_pi;
    }
    w
}
