//! Gauss-Legendre panel quadrature used by the oracles and the branch-cut integrals.

use std::collections::HashMap;
use std::ops::{Add, Mul};
use std::sync::{Mutex, OnceLock};

use gauss_quad::GaussLegendre;
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Values that can be accumulated by a quadrature rule.
pub trait Integrand: Copy + Default + Add<Output = Self> + Mul<f64, Output = Self> {
    fn magnitude(&self) -> f64;
}

impl Integrand for f64 {
    fn magnitude(&self) -> f64 {
        self.abs()
    }
}

impl Integrand for Complex64 {
    fn magnitude(&self) -> f64 {
        self.norm()
    }
}

/// Nodes and weights of the `n`-point Gauss-Legendre rule on [-1, 1], cached per order.
pub fn legendre_rule(n: usize) -> &'static [(f64, f64)] {
    static CACHE: OnceLock<Mutex<HashMap<usize, &'static [(f64, f64)]>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("quadrature cache poisoned");
    guard.entry(n).or_insert_with(|| {
        let rule = GaussLegendre::new(n).expect("Gauss-Legendre order must be at least 2");
        Box::leak(rule.as_node_weight_pairs().to_vec().into_boxed_slice())
    })
}

/// Single `n`-point panel on [a, b].
pub fn panel<T: Integrand>(a: f64, b: f64, n: usize, mut f: impl FnMut(f64) -> T) -> T {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (b + a);
    let mut acc = T::default();
    for &(x, w) in legendre_rule(n) {
        acc = acc + f(mid + half * x) * (w * half);
    }
    acc
}

/// Composite rule over consecutive break points.
pub fn panels<T: Integrand>(edges: &[f64], n: usize, mut f: impl FnMut(f64) -> T) -> T {
    let mut acc = T::default();
    for w in edges.windows(2) {
        acc = acc + panel(w[0], w[1], n, &mut f);
    }
    acc
}

/// Adaptive bisection comparing one 16-point panel with its two halves.
pub fn adaptive<T: Integrand>(
    a: f64,
    b: f64,
    rtol: f64,
    atol: f64,
    mut f: impl FnMut(f64) -> T,
) -> Result<T> {
    let whole = panel(a, b, 16, &mut f);
    adaptive_rec(a, b, whole, rtol, atol, 0, &mut f)
}

fn adaptive_rec<T: Integrand>(
    a: f64,
    b: f64,
    whole: T,
    rtol: f64,
    atol: f64,
    depth: usize,
    f: &mut impl FnMut(f64) -> T,
) -> Result<T> {
    let m = 0.5 * (a + b);
    let left = panel(a, m, 16, &mut *f);
    let right = panel(m, b, 16, &mut *f);
    let refined = left + right;
    let diff = (refined + whole * -1.0).magnitude();
    let negligible_width = (b - a).abs() < 1e-12 * (1.0 + a.abs().max(b.abs()));
    if diff <= atol.max(rtol * refined.magnitude()) || negligible_width {
        return Ok(refined);
    }
    if depth >= 60 {
        return Err(Error::Quadrature(format!(
            "bisection depth exhausted on [{a:.6e}, {b:.6e}], local error {diff:.3e}"
        )));
    }
    let l = adaptive_rec(a, m, left, rtol, 0.5 * atol, depth + 1, f)?;
    let r = adaptive_rec(m, b, right, rtol, 0.5 * atol, depth + 1, f)?;
    Ok(l + r)
}

/// Integral over [a, inf) via geometrically growing adaptive panels.
///
/// Stops once two consecutive panels contribute less than `atol` plus `rtol` of the running sum.
pub fn to_infinity<T: Integrand>(
    a: f64,
    first_width: f64,
    rtol: f64,
    atol: f64,
    mut f: impl FnMut(f64) -> T,
) -> Result<T> {
    let mut acc = T::default();
    let mut lo = a;
    let mut width = first_width;
    let mut quiet = 0;
    for _ in 0..200 {
        let hi = lo + width;
        let part = adaptive(lo, hi, rtol, atol, &mut f)?;
        acc = acc + part;
        if part.magnitude() <= atol + rtol * acc.magnitude() {
            quiet += 1;
            if quiet >= 2 {
                return Ok(acc);
            }
        } else {
            quiet = 0;
        }
        lo = hi;
        width *= 1.6;
    }
    Err(Error::Quadrature(format!(
        "semi-infinite integral from {a} did not settle"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_exact() {
        let v = panel(0.0, 2.0, 8, |x: f64| x.powi(7));
        assert!((v - 256.0 / 8.0).abs() < 1e-12);
    }

    #[test]
    fn adaptive_gaussian_tail() {
        let v = to_infinity(0.0, 1.0, 1e-13, 1e-15, |x: f64| (-x * x).exp()).unwrap();
        assert!((v - 0.5 * std::f64::consts::PI.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn adaptive_log_singularity() {
        let v = adaptive(0.0, 1.0, 1e-12, 1e-14, |x: f64| x.ln()).unwrap();
        assert!((v + 1.0).abs() < 1e-10);
    }
}
