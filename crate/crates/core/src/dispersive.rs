//! Branch-cut quadrature for the frozen linear flow and the decay checks built on it.
//!
//! Each cut `lambda = +-i(w + kappa^2)` is parametrised by `kappa >= 0`. The jump
//! `R(lambda + 0) - R(lambda - 0)` only involves the channel whose rate is `+-i kappa`, so the
//! jump of an exponential-sum datum is a sum of at most two Green terms per node. For `t > 0`
//! the path follows the real `kappa` axis up to a split point past every stationary phase on the
//! grid and then leaves along the ray `kappa_c + u e^{+-i pi/4}`, where the integrand decays like
//! a Gaussian. The tail is therefore integrated, not truncated.

use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};
use std::ops::{Add, Mul};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Charge2, ModelParams, RadialExpSum};
use crate::quad::{self, legendre_rule, Integrand};
use crate::spectral::{
    point_interaction_kernel, resolvent_point_with_rates, resolvent_solve_at, Projector, Source,
};

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Kernel `e^{i r^2 / 4t} / (4 pi i t)^{3/2}` of the free Schrodinger group, principal branch.
pub fn free_propagator(t: f64, r: f64) -> Result<Complex64> {
    if !(t > 0.0) {
        return Err(Error::domain("t", t, "(0, inf)"));
    }
    let denom = (Complex64::new(0.0, 4.0 * PI * t).ln() * 1.5).exp();
    Ok(Complex64::from_polar(1.0, r * r / (4.0 * t)) / denom)
}

/// Radii carrying the structural weight `w(r) = 1 + 1/r`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WeightedGrid {
    pub radii: Vec<f64>,
}

impl WeightedGrid {
    pub fn logarithmic(r_min: f64, r_max: f64, n: usize) -> Result<Self> {
        if !(r_min > 0.0 && r_max > r_min) || n < 2 {
            return Err(Error::domain("r_min", r_min, format!("(0, r_max = {r_max}) with n >= 2")));
        }
        let radii = (0..n)
            .map(|k| r_min * (r_max / r_min).powf(k as f64 / (n - 1) as f64))
            .collect();
        Ok(Self { radii })
    }

    /// 400 logarithmic radii on `[1e-2, 50]`.
    pub fn standard() -> Self {
        Self::logarithmic(1e-2, 50.0, 400).expect("standard grid is valid")
    }

    pub fn weight(r: f64) -> f64 {
        1.0 + 1.0 / r
    }

    pub fn r_max(&self) -> f64 {
        self.radii[self.radii.len() - 1]
    }

    /// `sup |u| / w` over the grid.
    pub fn sup_inv_weight(&self, values: &[Charge2]) -> f64 {
        self.radii
            .iter()
            .zip(values)
            .map(|(&r, v)| v.norm() / Self::weight(r))
            .fold(0.0, f64::max)
    }

    /// Trapezoidal `int |u| w dx` over the shell covered by the grid.
    pub fn l1_weighted(&self, values: &[Charge2]) -> f64 {
        self.trapezoid(values, |r, v| v.norm() * Self::weight(r))
    }

    pub fn l2(&self, values: &[Charge2]) -> f64 {
        self.trapezoid(values, |_, v| v.norm().powi(2)).sqrt()
    }

    fn trapezoid(&self, values: &[Charge2], f: impl Fn(f64, &Charge2) -> f64) -> f64 {
        let g: Vec<f64> = self
            .radii
            .iter()
            .zip(values)
            .map(|(&r, v)| 4.0 * PI * r * r * f(r, v))
            .collect();
        self.radii
            .windows(2)
            .zip(g.windows(2))
            .map(|(r, g)| 0.5 * (r[1] - r[0]) * (g[0] + g[1]))
            .sum()
    }

    pub fn sample(&self, u: &RadialExpSum) -> Vec<Charge2> {
        self.radii.iter().map(|&r| u.eval(r)).collect()
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct BranchCutQuadrature {
    /// Where the path leaves the real cut, as a value of `|eta|`. `None` picks the smallest
    /// admissible split, `w + (r_max / t)^2`; explicit values below it are raised to it.
    pub eta_max: Option<f64>,
    /// Minimum number of Gauss-Legendre panels on each real segment.
    pub n_points: usize,
    pub order: usize,
    /// Largest accepted ratio of the final tail panel to the result.
    pub tail_tol: f64,
    /// Largest phase increment allowed inside one panel.
    pub phase_per_panel: f64,
}

impl Default for BranchCutQuadrature {
    fn default() -> Self {
        Self {
            eta_max: None,
            n_points: 64,
            order: 16,
            tail_tol: 1e-4,
            phase_per_panel: 6.0,
        }
    }
}

impl BranchCutQuadrature {
    /// Same rule with every panel halved.
    pub fn refined(&self) -> Self {
        Self {
            n_points: self.n_points * 2,
            phase_per_panel: self.phase_per_panel / 2.0,
            ..*self
        }
    }

    fn validate(&self, omega: f64) -> Result<()> {
        if self.n_points < 64 {
            return Err(Error::domain("n_points", self.n_points as f64, "[64, inf)"));
        }
        if let Some(e) = self.eta_max {
            if !(e > omega) {
                return Err(Error::domain("eta_max", e, format!("({omega}, inf)")));
            }
        }
        Ok(())
    }
}

/// Sampled result of a branch-cut integral.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Evolution {
    pub t: f64,
    pub values: Vec<Charge2>,
    /// `sup |u| / w`.
    pub sup_weighted: f64,
    /// `sup_weighted * t^{3/2}` for the plain flow, `* (1 + t)^{3/2}` for the regularized one.
    pub normalized: f64,
    /// Last tail panel relative to the result.
    pub tail_estimate: f64,
    pub nodes: usize,
}

#[derive(Clone, Copy)]
struct Node {
    cut: f64,
    kappa: Complex64,
    coef: Complex64,
    last: bool,
}

fn require_not_threshold(p: &ModelParams) -> Result<()> {
    if (p.sigma - FRAC_1_SQRT_2).abs() < 1e-12 {
        return Err(Error::Resonance(
            "sigma = 1/sqrt(2) has a threshold resonance; the decay estimate does not apply".into(),
        ));
    }
    Ok(())
}

/// `lambda(kappa)` on the cut `cut = +1` (upper) or `-1` (lower).
fn lambda_on(cut: f64, kappa: Complex64, omega: f64) -> Complex64 {
    cut * I * (omega + kappa * kappa)
}

/// Jump `R(lambda + 0) - R(lambda - 0)` applied to `src` at `lambda(kappa)`.
pub fn jump(cut: f64, kappa: Complex64, src: &Source, p: &ModelParams) -> Result<RadialExpSum> {
    let lambda = lambda_on(cut, kappa, p.omega);
    let cont = (2.0 * p.omega + kappa * kappa).sqrt();
    let (plus, minus) = if cut > 0.0 {
        ((cont, I * kappa), (cont, -I * kappa))
    } else {
        ((-I * kappa, cont), (I * kappa, cont))
    };
    let rp = resolvent_point_with_rates(lambda, plus.0, plus.1, p);
    let rm = resolvent_point_with_rates(lambda, minus.0, minus.1, p);
    let up = resolvent_solve_at(&rp, src, p)?;
    let um = resolvent_solve_at(&rm, src, p)?;
    let mut j = (up - um).compact();
    j.terms.retain(|t| t.amp.norm() > 0.0);
    Ok(j)
}

/// Panel break points on `[a, b]` with equal increments of `t k^2 + r k`.
fn phase_breaks(a: f64, b: f64, t: f64, r: f64, min_panels: usize, dphi: f64) -> Vec<f64> {
    let phi = |k: f64| t * k * k + r * k;
    let inv = |v: f64| (-r + (r * r + 4.0 * t * v).sqrt()) / (2.0 * t);
    let (pa, pb) = (phi(a), phi(b));
    let n = (((pb - pa) / dphi).ceil() as usize).max(min_panels).max(1);
    let mut out: Vec<f64> = (0..=n)
        .map(|j| inv(pa + (pb - pa) * j as f64 / n as f64))
        .collect();
    out[0] = a;
    out[n] = b;
    out
}

fn push_real(nodes: &mut Vec<Node>, cut: f64, breaks: &[f64], order: usize, factor: &dyn Fn(f64) -> Complex64) {
    let rule = legendre_rule(order);
    for w in breaks.windows(2) {
        let (mid, half) = (0.5 * (w[0] + w[1]), 0.5 * (w[1] - w[0]));
        for &(x, wt) in rule {
            let k = mid + half * x;
            nodes.push(Node {
                cut,
                kappa: Complex64::new(k, 0.0),
                coef: factor(k) * (wt * half),
                last: false,
            });
        }
    }
}

/// Nodes and weights for one cut. `mu` adds the factor `1/(lambda + mu - 0)`.
fn plan_cut(
    cut: f64,
    t: f64,
    r_max: f64,
    omega: f64,
    quad: &BranchCutQuadrature,
    mu: Option<Complex64>,
) -> Vec<Node> {
    // Pole of 1/(lambda + mu) on this cut: lambda(kappa0) = -mu.
    let pole = mu.and_then(|mu| {
        let k2 = (-mu / (cut * I)).re - omega;
        let on_axis = (mu.re).abs() <= 1e-14 * mu.norm().max(1.0);
        (on_axis && k2 > 0.0).then(|| k2.sqrt())
    });
    let mut kappa_c = (r_max / t).max(1.0);
    if let Some(e) = quad.eta_max {
        kappa_c = kappa_c.max((e - omega).sqrt());
    }
    if let Some(k0) = pole {
        kappa_c = kappa_c.max(2.0 * k0);
    }
    let factor = |k: Complex64| -> Complex64 {
        match mu {
            Some(mu) => 1.0 / (lambda_on(cut, k, omega) + mu),
            None => Complex64::new(1.0, 0.0),
        }
    };
    let mut nodes = Vec::new();
    let dphi = quad.phase_per_panel;
    match pole {
        None => {
            let b = phase_breaks(0.0, kappa_c, t, r_max, quad.n_points, dphi);
            push_real(&mut nodes, cut, &b, quad.order, &|k| factor(Complex64::new(k, 0.0)));
        }
        Some(k0) => {
            let h = 0.5 * k0;
            let share = (quad.n_points / 3).max(8);
            let b = phase_breaks(0.0, k0 - h, t, r_max, share, dphi);
            push_real(&mut nodes, cut, &b, quad.order, &|k| factor(Complex64::new(k, 0.0)));
            let b = phase_breaks(k0 + h, kappa_c, t, r_max, share, dphi);
            push_real(&mut nodes, cut, &b, quad.order, &|k| factor(Complex64::new(k, 0.0)));
            // Principal value by symmetric pairing: G(k) / (lambda + mu) = H(k) / (k - k0) with
            // H(k) = G(k) / (cut i (k + k0)).
            let hcoef = |k: f64| 1.0 / (cut * I * (k + k0));
            let span = 2.0 * t * (k0 + h) + r_max;
            let n = ((h * span / dphi).ceil() as usize).max(share);
            let rule = legendre_rule(quad.order);
            for j in 0..n {
                let (a, b) = (h * j as f64 / n as f64, h * (j + 1) as f64 / n as f64);
                let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
                for &(x, wt) in rule {
                    let s = mid + half * x;
                    let w = wt * half / s;
                    nodes.push(Node {
                        cut,
                        kappa: Complex64::new(k0 + s, 0.0),
                        coef: hcoef(k0 + s) * w,
                        last: false,
                    });
                    nodes.push(Node {
                        cut,
                        kappa: Complex64::new(k0 - s, 0.0),
                        coef: -hcoef(k0 - s) * w,
                        last: false,
                    });
                }
            }
            // The regularization moves the pole below the upper cut and above the lower one.
            nodes.push(Node {
                cut,
                kappa: Complex64::new(k0, 0.0),
                coef: -cut * I * PI * hcoef(k0),
                last: false,
            });
        }
    }
    // Rotated tail kappa = kappa_c + u e^{cut i pi/4}.
    let dir = Complex64::from_polar(1.0, cut * PI / 4.0);
    let rho = SQRT_2 * (t * kappa_c - 0.5 * r_max);
    let u_end = (-rho + (rho * rho + 4.0 * t * 40.0).sqrt()) / (2.0 * t);
    let rate = SQRT_2 * t * kappa_c + r_max + 2.0 * t * u_end;
    let n_tail = ((u_end * rate / dphi).ceil() as usize).max(8);
    let rule = legendre_rule(quad.order);
    for j in 0..n_tail {
        let (a, b) = (u_end * j as f64 / n_tail as f64, u_end * (j + 1) as f64 / n_tail as f64);
        let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
        for &(x, wt) in rule {
            let k = kappa_c + dir * (mid + half * x);
            nodes.push(Node {
                cut,
                kappa: k,
                coef: factor(k) * dir * (wt * half),
                last: j + 1 == n_tail,
            });
        }
    }
    nodes
}

fn branch_integral(
    src: &Source,
    t: f64,
    p: &ModelParams,
    grid: &WeightedGrid,
    quad: &BranchCutQuadrature,
    mu: Option<Complex64>,
) -> Result<(Vec<Charge2>, f64, usize)> {
    require_not_threshold(p)?;
    quad.validate(p.omega)?;
    if !(t > 0.0) {
        return Err(Error::domain("t", t, "(0, inf)"));
    }
    let r_max = grid.r_max();
    let mut nodes = plan_cut(1.0, t, r_max, p.omega, quad, mu);
    nodes.extend(plan_cut(-1.0, t, r_max, p.omega, quad, mu));
    let n = grid.radii.len();
    let zero = || (vec![Charge2::ZERO; n], vec![Charge2::ZERO; n]);
    let (total, last) = nodes
        .par_iter()
        .map(|node| -> Result<(Vec<Charge2>, Vec<Charge2>)> {
            let j = jump(node.cut, node.kappa, src, p)?;
            let lambda = lambda_on(node.cut, node.kappa, p.omega);
            // e^{Lt} P^c = -(1/pi) sum over cuts of int kappa e^{lambda t} J(kappa) d kappa.
            let w = node.coef * node.kappa * (lambda * t).exp() * (-1.0 / PI);
            let mut acc = zero();
            for (slot, &r) in grid.radii.iter().enumerate() {
                let v = j.eval(r) * w;
                acc.0[slot] = v;
                if node.last {
                    acc.1[slot] = v;
                }
            }
            Ok(acc)
        })
        .try_reduce(zero, |mut a, b| {
            for k in 0..n {
                a.0[k] += b.0[k];
                a.1[k] += b.1[k];
            }
            Ok(a)
        })?;
    let sup = grid.sup_inv_weight(&total);
    let tail = if sup > 0.0 {
        grid.sup_inv_weight(&last) / sup
    } else {
        0.0
    };
    if tail > quad.tail_tol {
        return Err(Error::Quadrature(format!(
            "tail panel carries {tail:.3e} of the result at t = {t}"
        )));
    }
    Ok((total, tail, nodes.len()))
}

/// `e^{L t} P^c f` sampled on the grid, the flow of `u' = L u`.
pub fn evolve_continuous(
    f: &Source,
    t: f64,
    p: &ModelParams,
    grid: &WeightedGrid,
    quad: &BranchCutQuadrature,
) -> Result<Evolution> {
    let (values, tail_estimate, nodes) = branch_integral(f, t, p, grid, quad, None)?;
    let sup = grid.sup_inv_weight(&values);
    Ok(Evolution {
        t,
        values,
        sup_weighted: sup,
        normalized: sup * t.powf(1.5),
        tail_estimate,
        nodes,
    })
}

/// `e^{L t} (L + mu - 0)^{-1} P^c f` for `mu` on the imaginary axis (typically `+-2 i xi`).
pub fn evolve_regularized(
    f: &Source,
    t: f64,
    p: &ModelParams,
    grid: &WeightedGrid,
    quad: &BranchCutQuadrature,
    mu: Complex64,
) -> Result<Evolution> {
    if mu.re != 0.0 {
        return Err(Error::domain("Re(shift)", mu.re, "{0}"));
    }
    if mu.im != 0.0 {
        let (lo, hi) = crate::spectral::band_window();
        if !(p.sigma > lo && p.sigma < hi) {
            return Err(Error::domain("sigma", p.sigma, format!("({lo}, {hi})")));
        }
    }
    let (values, tail_estimate, nodes) = branch_integral(f, t, p, grid, quad, Some(mu))?;
    let sup = grid.sup_inv_weight(&values);
    Ok(Evolution {
        t,
        values,
        sup_weighted: sup,
        normalized: sup * (1.0 + t).powf(1.5),
        tail_estimate,
        nodes,
    })
}

/// Continuous part of the datum `(0, c)` with `c = (1, 0)`, the standard point-charge test datum.
pub fn point_charge_datum(p: &ModelParams) -> Result<Source> {
    Projector::standard(p)?.pc(&Source::charge(Charge2::real(1.0, 0.0)))
}

/// `e^{L t} P^c a20 = -e^{L t} (L - 2 i xi - 0)^{-1} P^c F20`, the free evolution of the
/// quadratic correction.
pub fn evolve_a20(
    f20: Charge2,
    t: f64,
    p: &ModelParams,
    grid: &WeightedGrid,
    quad: &BranchCutQuadrature,
) -> Result<Evolution> {
    let src = Projector::standard(p)?.pc(&Source::charge(f20))?;
    let mut ev = evolve_regularized(&src, t, p, grid, quad, Complex64::new(0.0, -2.0 * p.xi()))?;
    for v in ev.values.iter_mut() {
        *v = -*v;
    }
    Ok(ev)
}

#[derive(Clone, Copy, Debug, Default)]
struct Mat2([[Complex64; 2]; 2]);

impl Add for Mat2 {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        let mut m = self.0;
        for (i, row) in m.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v += o.0[i][j];
            }
        }
        Mat2(m)
    }
}

impl Mul<f64> for Mat2 {
    type Output = Self;
    fn mul(self, s: f64) -> Self {
        Mat2(self.0.map(|row| row.map(|v| v * s)))
    }
}

impl Integrand for Mat2 {
    fn magnitude(&self) -> f64 {
        self.0.iter().flatten().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

fn matmul(a: [[Complex64; 2]; 2], b: [[Complex64; 2]; 2]) -> [[Complex64; 2]; 2] {
    let mut out = [[Complex64::new(0.0, 0.0); 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    out
}

/// `(J - cut i I)`, the factor paired with the projection onto one cut.
fn j_shift(cut: f64) -> [[Complex64; 2]; 2] {
    let one = Complex64::new(1.0, 0.0);
    [[-cut * I, one], [-one, -cut * I]]
}

/// Kernel of `Pi^{cut} (J - cut i I)` between radii `x` and `y`, from the point-interaction part
/// of the resolvent jump.
pub fn kernel_branch(cut: f64, x: f64, y: f64, p: &ModelParams) -> Result<[[Complex64; 2]; 2]> {
    kernel_branch_at(cut, x, y, p, 1)
}

/// Panel edges for the kernel integral: geometric near `kappa = 0`, where `1/D` varies on the
/// scale of the threshold crossover, then at most half an oscillation period of `e^{i kappa x}`
/// up to where `e^{-kappa min(x, y)}` drops below `e^{-40}`. `split` subdivides every panel.
fn kernel_edges(x: f64, y: f64, split: usize) -> Vec<f64> {
    let mut coarse = vec![0.0];
    let mut k = 1e-5;
    while k < 1.0 {
        coarse.push(k);
        k *= 2.0;
    }
    coarse.push(1.0);
    let end = (40.0 / x.min(y)).max(10.0);
    let step = (PI / x.max(y)).min(1.0);
    let n = ((end - 1.0) / step).ceil() as usize;
    coarse.extend((1..=n).map(|j| 1.0 + (end - 1.0) * j as f64 / n as f64));
    let mut edges = vec![0.0];
    for w in coarse.windows(2) {
        edges.extend((1..=split).map(|j| w[0] + (w[1] - w[0]) * j as f64 / split as f64));
    }
    edges
}

fn kernel_branch_at(
    cut: f64,
    x: f64,
    y: f64,
    p: &ModelParams,
    split: usize,
) -> Result<[[Complex64; 2]; 2]> {
    if !(x > 0.0 && y > 0.0) {
        return Err(Error::domain("x, y", x.min(y), "(0, inf)"));
    }
    require_not_threshold(p)?;
    let shift = j_shift(cut);
    let integrand = |k: f64| -> Mat2 {
        let kappa = Complex64::new(k, 0.0);
        let lambda = lambda_on(cut, kappa, p.omega);
        let cont = (2.0 * p.omega + k * k).sqrt();
        let cont = Complex64::new(cont, 0.0);
        let ((ap, am), (bp, bm)) = if cut > 0.0 {
            ((cont, I * kappa), (cont, -I * kappa))
        } else {
            ((-I * kappa, cont), (I * kappa, cont))
        };
        let kp = point_interaction_kernel(&resolvent_point_with_rates(lambda, ap, am, p), x, y, p);
        let km = point_interaction_kernel(&resolvent_point_with_rates(lambda, bp, bm, p), x, y, p);
        let mut d = kp;
        for i in 0..2 {
            for j in 0..2 {
                d[i][j] -= km[i][j];
            }
        }
        Mat2(matmul(d, shift)) * (-k / PI)
    };
    let m = quad::panels(&kernel_edges(x, y, split), 16, integrand);
    if m.0.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Quadrature(format!("non-finite kernel at x = {x}, y = {y}")));
    }
    Ok(m.0)
}

/// Kernel of `P^c J - i(Pi^+ - Pi^-) = Pi^+ (J - iI) + Pi^- (J + iI)`.
pub fn kernel_pcj(x: f64, y: f64, p: &ModelParams) -> Result<[[Complex64; 2]; 2]> {
    let a = kernel_branch(1.0, x, y, p)?;
    let b = kernel_branch(-1.0, x, y, p)?;
    let mut out = a;
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] += b[i][j];
        }
    }
    Ok(out)
}

/// Jump of the free convolution kernel across the cut at `kappa`, right-multiplied by
/// `(J - cut i I)`, for the separation `d = |x - y|`. Vanishes identically.
pub fn convolution_jump(cut: f64, kappa: f64, d: f64) -> [[Complex64; 2]; 2] {
    let g = |k: Complex64| (-k * d).exp() / (4.0 * PI * d);
    let kappa = Complex64::new(kappa, 0.0);
    // Channel + carries rate k_+, channel - rate k_-; only the channel with rate +-i kappa jumps.
    let (jp, jm) = if cut > 0.0 {
        (Complex64::new(0.0, 0.0), g(I * kappa) - g(-I * kappa))
    } else {
        (g(-I * kappa) - g(I * kappa), Complex64::new(0.0, 0.0))
    };
    // Free response to a unit source in component j: dir_+ w_+ g_+^j + dir_- w_- g_-^j.
    let rows = [[I, Complex64::new(-1.0, 0.0)], [-I, Complex64::new(-1.0, 0.0)]];
    let dirs = [[0.5 + 0.0 * I, -0.5 * I], [0.5 + 0.0 * I, 0.5 * I]];
    let mut m = [[Complex64::new(0.0, 0.0); 2]; 2];
    for (ch, jv) in [jp, jm].into_iter().enumerate() {
        for i in 0..2 {
            for j in 0..2 {
                m[i][j] += dirs[ch][i] * jv * rows[ch][j];
            }
        }
    }
    matmul(m, j_shift(cut))
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct KernelDecay {
    /// Fitted rate of `|K_11(s/2, s/2)|` against `s = x + y` on `[1, 6]`, where `K` is the upper
    /// branch `Pi^+ (J - iI)`. The lower branch is its mirror image and cancels the diagonal of
    /// the sum in the real component basis.
    pub rate: f64,
    pub predicted: f64,
    pub r2: f64,
    /// `max |K_11(r, r)| r^2` over `r` in `[1e-2, 0.1]`.
    pub small_scale_bound: f64,
}

pub fn kernel_decay(p: &ModelParams) -> Result<KernelDecay> {
    let s: Vec<f64> = (0..21).map(|k| 1.0 + 5.0 * k as f64 / 20.0).collect();
    let vals: Vec<f64> = s
        .par_iter()
        .map(|&s| kernel_branch(1.0, 0.5 * s, 0.5 * s, p).map(|m| (m[0][0].norm() * 0.25 * s * s).ln()))
        .collect::<Result<_>>()?;
    let (slope, _, r2) = crate::dynamics::line_fit(&s, &vals)?;
    let small: Vec<f64> = (0..8).map(|k| 1e-2 * 10f64.powf(k as f64 / 7.0)).collect();
    let bound = small
        .par_iter()
        .map(|&r| kernel_branch(1.0, r, r, p).map(|m| m[0][0].norm() * r * r))
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    Ok(KernelDecay {
        rate: -slope,
        predicted: (2.0 * p.omega).sqrt(),
        r2,
        small_scale_bound: bound,
    })
}

/// Envelope `q_f(tau) = q_inf / (1 + eps tau)` of the charge along the flow.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ChargeModel {
    pub q_inf: f64,
    pub eps: f64,
}

impl ChargeModel {
    pub fn eval(&self, tau: f64) -> f64 {
        self.q_inf / (1.0 + self.eps * tau)
    }

    /// `||r0(t)||` from the one-dimensional identity
    /// `||r0||^2 = (2 pi)^{-2} int |q_f(t + 1/u)|^2 u^{-2} sqrt(u) du`.
    pub fn r0_norm(&self, t: f64) -> Result<f64> {
        if !(self.eps > 0.0) {
            return Err(Error::domain("eps", self.eps, "(0, inf): the envelope must decay"));
        }
        if !(t >= 0.0) {
            return Err(Error::domain("t", t, "[0, inf)"));
        }
        if self.q_inf == 0.0 {
            return Ok(0.0);
        }
        // u = s^2 removes the square-root endpoint behaviour.
        let f = |s: f64| {
            if s == 0.0 {
                return 0.0;
            }
            let u = s * s;
            let q = self.eval(t + 1.0 / u);
            q * q / (u * u) * s * 2.0 * s
        };
        let knee = (self.eps / (1.0 + self.eps * t)).sqrt();
        let v = quad::adaptive(0.0, knee, 1e-12, 0.0, f)? + quad::to_infinity(knee, knee, 1e-12, 0.0, f)?;
        Ok((v / (4.0 * PI * PI)).sqrt())
    }

    /// Closed form of the same integral, `|q| (pi/2)^{1/2} eps^{-1/4} (1 + eps t)^{-3/4} / (2 pi)`.
    pub fn r0_norm_closed(&self, t: f64) -> f64 {
        self.q_inf.abs() * (0.5 * PI).sqrt() * self.eps.powf(-0.25) * (1.0 + self.eps * t).powf(-0.75)
            / (2.0 * PI)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DecayFit {
    pub times: Vec<f64>,
    pub norms: Vec<f64>,
    pub exponent: f64,
    /// Half-width of the exponent band spanned by the local slopes in the fit window.
    pub band: f64,
    pub r2: f64,
}

/// Log-log fit of `norms` against `times` over the last decade.
pub fn decay_fit(times: &[f64], norms: &[f64]) -> Result<DecayFit> {
    let t_end = times.iter().cloned().fold(f64::MIN, f64::max);
    let idx: Vec<usize> = (0..times.len()).filter(|&k| times[k] >= t_end / 10.0 * (1.0 - 1e-12)).collect();
    if idx.len() < 2 {
        return Err(Error::Fit("fewer than two samples in the last decade".into()));
    }
    let lx: Vec<f64> = idx.iter().map(|&k| times[k].ln()).collect();
    let ly: Vec<f64> = idx.iter().map(|&k| norms[k].ln()).collect();
    let (slope, _, r2) = crate::dynamics::line_fit(&lx, &ly)?;
    let mut band: f64 = 0.0;
    for w in 0..lx.len().saturating_sub(1) {
        let local = (ly[w + 1] - ly[w]) / (lx[w + 1] - lx[w]);
        band = band.max((local - slope).abs());
    }
    Ok(DecayFit {
        times: times.to_vec(),
        norms: norms.to_vec(),
        exponent: slope,
        band,
        r2,
    })
}

pub fn scattering_r0(model: &ChargeModel, times: &[f64]) -> Result<DecayFit> {
    let norms = times.iter().map(|&t| model.r0_norm(t)).collect::<Result<Vec<_>>>()?;
    decay_fit(times, &norms)
}

/// Which quadratic phase multiplies the source term.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PhaseCase {
    /// `|z_inf|^2`, frequency `w_inf`.
    Modulus,
    /// `z_inf^2`, frequency `w_inf + 2 xi_inf`.
    Square,
    /// `conj(z_inf)^2`, frequency `w_inf - 2 xi_inf`; resonant when `2 xi_inf > w_inf`.
    ConjSquare,
}

/// Asymptotic data of the modulation entering the scattering remainder.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct AsymptoticParams {
    pub omega_inf: f64,
    pub xi_inf: f64,
    pub eps_k_inf: f64,
    /// Exponent parameter of the Gaussian-type factor `1/(|x|^2 + 4 alpha tau^2)`.
    pub alpha: f64,
}

impl AsymptoticParams {
    pub fn from_model(p: &ModelParams, eps_k_inf: f64) -> Self {
        Self {
            omega_inf: p.omega,
            xi_inf: p.xi(),
            eps_k_inf,
            alpha: p.omega,
        }
    }

    pub fn frequency(&self, case: PhaseCase) -> f64 {
        match case {
            PhaseCase::Modulus => self.omega_inf,
            PhaseCase::Square => self.omega_inf + 2.0 * self.xi_inf,
            PhaseCase::ConjSquare => self.omega_inf - 2.0 * self.xi_inf,
        }
    }

    /// Resonant time `t* = |x| / (2 sqrt(2 xi - w))`, when it exists.
    pub fn resonant_time(&self, case: PhaseCase, x: f64) -> Option<f64> {
        let g = -self.frequency(case);
        (case == PhaseCase::ConjSquare && g > 0.0).then(|| x / (2.0 * g.sqrt()))
    }
}

/// `g(t*) = min(t*/2, sqrt(t*))`.
pub fn split_halfwidth(t_star: f64) -> f64 {
    (0.5 * t_star).min(t_star.sqrt())
}

/// `I_t(x) = int_t^inf e^{i(W tau - x^2/(4 tau))} sqrt(tau) / ((1 + eps k tau)(x^2 + 4 alpha tau^2)) d tau`.
pub fn oscillatory_tail(pa: &AsymptoticParams, case: PhaseCase, t: f64, x: f64) -> Result<Complex64> {
    if !(t > 0.0) {
        return Err(Error::domain("t", t, "(0, inf)"));
    }
    let w = pa.frequency(case);
    let amp = |tau: Complex64| {
        tau.sqrt() / ((1.0 + pa.eps_k_inf * tau) * (x * x + 4.0 * pa.alpha * tau * tau))
            * (I * (w * tau - x * x / (4.0 * tau))).exp()
    };
    if pa.resonant_time(case, x).is_none() {
        // Without a stationary point the integrand is analytic and decaying in the quadrant
        // Re tau > t, Im tau > 0, so the ray tau = t + i u replaces the oscillatory real axis.
        let width = 1.0 / (w.max(1e-3) + x * x / (4.0 * t * t));
        return Ok(I * quad::to_infinity(0.0, width, 1e-10, 1e-18, |u: f64| amp(Complex64::new(t, u)))?);
    }
    let f = |tau: f64| amp(Complex64::new(tau, 0.0));
    let period = if w.abs() > 1e-8 { 2.0 * PI / w.abs() } else { 1.0 };
    let (rtol, atol) = (1e-9, 1e-16);
    let mut cuts = vec![t];
    if let Some(ts) = pa.resonant_time(case, x) {
        let g = split_halfwidth(ts);
        for c in [ts - g, ts, ts + g] {
            if c > t {
                cuts.push(c);
            }
        }
    }
    let mut acc = Complex64::new(0.0, 0.0);
    for win in cuts.windows(2) {
        // Panels of a few periods keep the adaptive rule away from aliasing.
        let n = (((win[1] - win[0]) / (4.0 * period)).ceil() as usize).max(1);
        for j in 0..n {
            let a = win[0] + (win[1] - win[0]) * j as f64 / n as f64;
            let b = win[0] + (win[1] - win[0]) * (j + 1) as f64 / n as f64;
            acc += quad::adaptive(a, b, rtol, atol, f).map_err(|e| {
                Error::Quadrature(format!("{e} (stationary point near tau = {:?})", pa.resonant_time(case, x)))
            })?;
        }
    }
    // Past the stationary point the phase decreases monotonically, so the tail follows the
    // ray tau = start - i u, along which the integrand decays exponentially.
    let start = cuts[cuts.len() - 1];
    let slope = (w + x * x / (4.0 * start * start)).abs().max(1e-3);
    acc += -I * quad::to_infinity(0.0, 1.0 / slope, rtol, atol, |u: f64| amp(Complex64::new(start, -u)))?;
    Ok(acc)
}

/// `L^2(R^3)` norm of `I_t` over the grid for each time, and the decay fit.
pub fn scattering_g_decay(
    pa: &AsymptoticParams,
    case: PhaseCase,
    times: &[f64],
    grid: &WeightedGrid,
) -> Result<DecayFit> {
    let norms = times
        .par_iter()
        .map(|&t| {
            let vals = grid
                .radii
                .iter()
                .map(|&x| oscillatory_tail(pa, case, t, x).map(|v| Charge2::new(v, Complex64::new(0.0, 0.0))))
                .collect::<Result<Vec<_>>>()?;
            Ok(grid.l2(&vals))
        })
        .collect::<Result<Vec<f64>>>()?;
    decay_fit(times, &norms)
}
