//! Scalar helpers shared by the whole crate.
//!
//! Everything goes through `libm` so results are identical with or without
//! `std` on every platform.

pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

pub fn sin(x: f64) -> f64 {
    libm::sin(x)
}

pub fn cos(x: f64) -> f64 {
    libm::cos(x)
}

pub fn pow(x: f64, y: f64) -> f64 {
    libm::pow(x, y)
}

pub fn floor(x: f64) -> f64 {
    libm::floor(x)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + exp(-x))
    } else {
        let e = exp(x);
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + libm::log1p(exp(-x))
    } else {
        libm::log1p(exp(x))
    }
}

/// Angular frequencies `1 / 10000^(2k/dim)` of the sinusoidal encoding,
/// one per sin/cos pair.
pub fn sinusoid_frequencies(dim: usize) -> alloc::vec::Vec<f64> {
    (0..dim / 2)
        .map(|k| 1.0 / pow(10000.0, (2 * k) as f64 / dim as f64))
        .collect()
}

/// Round half-up: `floor(x + 0.5)`.
pub fn round_half_up(x: f64) -> f64 {
    floor(x + 0.5)
}
