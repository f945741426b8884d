//! Random exponential sums and brute-force radial quadrature shared by the oracle tests.

#![allow(dead_code)]

use std::f64::consts::PI;

use conc_nls::{quad, Charge2, RadialExpSum};
use num_complex::Complex64;
use rand::Rng;

pub fn rand_c<R: Rng>(rng: &mut R) -> Complex64 {
    Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
}

pub fn rand_charge<R: Rng>(rng: &mut R) -> Charge2 {
    Charge2::new(rand_c(rng), rand_c(rng))
}

/// Between one and three terms with `Re(rate)` in `[0.3, 2]` and powers up to 2.
pub fn rand_sum<R: Rng>(rng: &mut R) -> RadialExpSum {
    let mut u = RadialExpSum::zero();
    for _ in 0..rng.gen_range(1..=3) {
        let rate = Complex64::new(rng.gen_range(0.3..2.0), rng.gen_range(-1.0..1.0));
        u.push(rand_charge(rng), rate, rng.gen_range(0..=2));
    }
    u
}

/// Real amplitudes and rates, as for the real-valued pairs entering the energy.
pub fn rand_real_sum<R: Rng>(rng: &mut R) -> RadialExpSum {
    let mut u = RadialExpSum::zero();
    for _ in 0..rng.gen_range(1..=3) {
        let amp = Charge2::real(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        u.push(amp, Complex64::new(rng.gen_range(0.3..2.0), 0.0), rng.gen_range(0..=2));
    }
    u
}

/// Smallest real part among the rates, which sets the integration length scale.
pub fn min_rate(u: &RadialExpSum) -> f64 {
    u.terms.iter().map(|t| t.rate.re).fold(f64::INFINITY, f64::min)
}

/// `4 pi int_0^inf r^2 h(r) dr` by adaptive Gauss-Legendre panels, stopping at relative accuracy
/// `rtol` or absolute accuracy `atol`, whichever comes first.
pub fn radial_tol<F: FnMut(f64) -> Complex64>(scale: f64, rtol: f64, atol: f64, mut h: F) -> Complex64 {
    quad::to_infinity(0.0, 1.0 / scale, rtol, atol, |r: f64| h(r) * (4.0 * PI * r * r))
        .expect("radial quadrature")
}

pub fn radial<F: FnMut(f64) -> Complex64>(scale: f64, h: F) -> Complex64 {
    radial_tol(scale, 1e-12, 1e-300, h)
}

/// Integral of an `h` that may cancel to zero, with the absolute tolerance tied to the integral
/// of the pointwise bound `mag`. Returns the value and that integral. The bound may have kinks
/// where a profile vanishes, so it is only integrated to a few digits.
pub fn radial_cancelling<F, G>(scale: f64, mag: G, h: F) -> (Complex64, f64)
where
    F: FnMut(f64) -> Complex64,
    G: FnMut(f64) -> f64,
{
    let mut mag = mag;
    let m = radial_tol(scale, 1e-6, 1e-300, |r| Complex64::new(mag(r), 0.0)).re;
    (radial_tol(scale, 1e-12, 1e-13 * m, h), m)
}

pub fn radial_abs<F: FnMut(f64) -> f64>(scale: f64, mut h: F) -> f64 {
    radial(scale, |r| Complex64::new(h(r), 0.0)).re
}

/// `d/dr` of the regular part by a fourth-order central difference.
pub fn d_regular(u: &RadialExpSum, r: f64) -> Charge2 {
    let h = 1e-3 * r.max(1e-2);
    let f = |x: f64| u.eval_regular(x);
    let a = f(r + h) - f(r - h);
    let b = f(r + 2.0 * h) - f(r - 2.0 * h);
    (a * (8.0 / 12.0) - b * (1.0 / 12.0)) * (1.0 / h)
}
