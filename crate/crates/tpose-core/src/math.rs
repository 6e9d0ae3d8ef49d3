//! Scalar math via libm so the crate builds without std.

/// Bound on exponent inputs; `exp` saturates outside [-EXP_CLAMP, EXP_CLAMP]
/// so downstream variances can never overflow or collapse to exactly zero.
pub const EXP_CLAMP: f64 = 40.0;

#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

/// `exp` with the input clamped to [-EXP_CLAMP, EXP_CLAMP].
#[inline]
pub fn exp_clamped(x: f64) -> f64 {
    libm::exp(x.clamp(-EXP_CLAMP, EXP_CLAMP))
}

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub fn tanh(x: f64) -> f64 {
    libm::tanh(x)
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-x))
}

#[inline]
pub fn atan2(y: f64, x: f64) -> f64 {
    libm::atan2(y, x)
}

#[inline]
pub fn sin(x: f64) -> f64 {
    libm::sin(x)
}

#[inline]
pub fn cos(x: f64) -> f64 {
    libm::cos(x)
}

#[inline]
pub fn floor(x: f64) -> f64 {
    libm::floor(x)
}

#[inline]
pub fn round(x: f64) -> f64 {
    libm::round(x)
}

#[inline]
pub fn hypot(x: f64, y: f64) -> f64 {
    libm::hypot(x, y)
}

#[inline]
pub fn abs(x: f64) -> f64 {
    libm::fabs(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_symmetry() {
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-15);
        assert!((sigmoid(3.0) + sigmoid(-3.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn exp_clamped_saturates() {
        assert!(exp_clamped(1000.0).is_finite());
        assert!(exp_clamped(-1000.0) > 0.0);
        assert_eq!(exp_clamped(1000.0), exp(EXP_CLAMP));
    }
}
