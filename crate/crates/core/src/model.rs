//! Soliton family, linearization constants and the radial exponential-sum function class.
//!
//! Every object in the crate (soliton, eigenfunctions, resolvent outputs, normal-form
//! corrections) is a finite sum of terms `a r^k e^{-mu r} / (4 pi r)` with a two-component
//! complex amplitude `a`. Inner products between such sums have closed forms.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub(crate) const FOUR_PI: f64 = 4.0 * PI;

/// Threshold power where the eigenvalues `+-i xi` reach the band edge.
pub const SIGMA_THRESHOLD: f64 = FRAC_1_SQRT_2;

/// Upper end of the window where `2 xi` lies inside the continuous spectrum.
pub fn sigma_band_edge() -> f64 {
    (3f64.sqrt() + 1.0) / (2.0 * 2f64.sqrt())
}

/// Distance from the regime endpoints below which eigenfunction data are considered degenerate.
pub const ENDPOINT_GUARD: f64 = 1e-6;

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

fn factorial(n: u32) -> f64 {
    (1..=n).fold(1.0, |acc, k| acc * k as f64)
}

/// `e^z - 1` without cancellation for small `|z|`.
pub(crate) fn expm1c(z: Complex64) -> Complex64 {
    if z.norm() < 1e-4 {
        z * (1.0 + z * (0.5 + z * (1.0 / 6.0 + z / 24.0)))
    } else {
        z.exp() - 1.0
    }
}

/// Which of the two normalizations of the soliton mass derivative is used.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum DeltaConvention {
    /// `(1/2) d/dw ||Phi_w||^2`, the symplectic pairing of the two generalized kernel vectors.
    #[default]
    HalfSquaredNorm,
    /// `d/dw ||Phi_w||`, kept only for sensitivity comparisons.
    NormDerivative,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub sigma: f64,
    pub nu: f64,
    pub omega: f64,
}

impl ModelParams {
    /// Validated constructor; `sigma = 1` is accepted because model-level quantities stay finite.
    pub fn new(sigma: f64, nu: f64, omega: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma <= 1.0) {
            return Err(Error::domain("sigma", sigma, "(0, 1]"));
        }
        if !(nu > 0.0 && nu.is_finite()) {
            return Err(Error::domain("nu", nu, "(0, inf)"));
        }
        if !(omega > 0.0 && omega.is_finite()) {
            return Err(Error::domain("omega", omega, "(0, inf)"));
        }
        Ok(Self { sigma, nu, omega })
    }

    /// Same parameters at a different frequency.
    pub fn with_omega(&self, omega: f64) -> Self {
        Self { omega, ..*self }
    }

    pub fn with_nu(&self, nu: f64) -> Self {
        Self { nu, ..*self }
    }

    /// Charge of the soliton, `(sqrt(w) / (4 pi nu))^{1/(2 sigma)}`.
    pub fn q_omega(&self) -> f64 {
        (self.omega.sqrt() / (FOUR_PI * self.nu)).powf(0.5 / self.sigma)
    }

    /// `d q_w / d w`.
    pub fn dq_domega(&self) -> f64 {
        self.q_omega() / (4.0 * self.sigma * self.omega)
    }

    /// `d^2 q_w / d w^2`.
    pub fn d2q_domega2(&self) -> f64 {
        let e = 0.25 / self.sigma;
        self.q_omega() * e * (e - 1.0) / (self.omega * self.omega)
    }

    /// Modulus of the imaginary eigenvalues, `2 sigma sqrt(1 - sigma^2) w`.
    pub fn xi(&self) -> f64 {
        2.0 * self.sigma * (1.0 - self.sigma * self.sigma).max(0.0).sqrt() * self.omega
    }

    /// Boundary-condition strengths `(alpha_1, alpha_2)` of the linearized operator.
    pub fn alphas(&self) -> (f64, f64) {
        let base = self.omega.sqrt() / FOUR_PI;
        (-(2.0 * self.sigma + 1.0) * base, -base)
    }

    /// `(1/2) d/dw ||Phi_w||^2` in closed form.
    pub fn delta_mass(&self) -> f64 {
        (FOUR_PI * self.nu).powf(-1.0 / self.sigma)
            * (1.0 / (16.0 * PI))
            * (0.5 / self.sigma - 0.5)
            * self.omega.powf(0.5 / self.sigma - 1.5)
    }

    /// Mass derivative under the selected convention.
    pub fn delta(&self, conv: DeltaConvention) -> f64 {
        match conv {
            DeltaConvention::HalfSquaredNorm => self.delta_mass(),
            DeltaConvention::NormDerivative => {
                let norm = (self.q_omega().powi(2) / (8.0 * PI * self.omega.sqrt())).sqrt();
                self.delta_mass() / norm
            }
        }
    }

    /// The profile `Phi_w = q_w e^{-sqrt(w) r} / (4 pi r)` in the first component.
    pub fn soliton(&self) -> RadialExpSum {
        RadialExpSum::single(Charge2::real(self.q_omega(), 0.0), c(self.omega.sqrt()), 0)
    }

    /// `d Phi_w / d w`, which picks up an `r e^{-sqrt(w) r}` term.
    pub fn soliton_d1(&self) -> RadialExpSum {
        let s = self.omega.sqrt();
        let ds = 0.5 / s;
        let q = self.q_omega();
        let mut out = RadialExpSum::zero();
        out.push(Charge2::real(self.dq_domega(), 0.0), c(s), 0);
        out.push(Charge2::real(-q * ds, 0.0), c(s), 1);
        out
    }

    /// `d^2 Phi_w / d w^2`.
    pub fn soliton_d2(&self) -> RadialExpSum {
        let w = self.omega;
        let s = w.sqrt();
        let ds = 0.5 / s;
        let d2s = -0.25 * w.powf(-1.5);
        let q = self.q_omega();
        let dq = self.dq_domega();
        let mut out = RadialExpSum::zero();
        out.push(Charge2::real(self.d2q_domega2(), 0.0), c(s), 0);
        out.push(Charge2::real(-2.0 * dq * ds - q * d2s, 0.0), c(s), 1);
        out.push(Charge2::real(q * ds * ds, 0.0), c(s), 2);
        out
    }

    /// `sigma` strictly inside the window with a pair of imaginary eigenvalues.
    pub fn require_eigen_regime(&self) -> Result<()> {
        let s = self.sigma;
        if !(s > SIGMA_THRESHOLD && s < 1.0) {
            return Err(Error::Regime(format!(
                "sigma = {s} outside (1/sqrt(2), 1) where +-i xi are eigenvalues"
            )));
        }
        if s - SIGMA_THRESHOLD < ENDPOINT_GUARD || 1.0 - s < ENDPOINT_GUARD {
            return Err(Error::Conditioning(format!(
                "sigma = {s} within {ENDPOINT_GUARD:e} of a regime endpoint"
            )));
        }
        Ok(())
    }

    /// Eigen regime with `2 xi` strictly above the band edge `w`.
    pub fn require_band_regime(&self) -> Result<()> {
        self.require_eigen_regime()?;
        if self.sigma >= sigma_band_edge() {
            return Err(Error::Regime(format!(
                "sigma = {} not below (sqrt(3)+1)/(2 sqrt(2)); 2 xi is outside the continuous spectrum",
                self.sigma
            )));
        }
        Ok(())
    }
}

pub fn q_omega(p: &ModelParams) -> f64 {
    p.q_omega()
}

pub fn soliton(p: &ModelParams) -> RadialExpSum {
    p.soliton()
}

pub fn xi(p: &ModelParams) -> f64 {
    p.xi()
}

pub fn alphas(p: &ModelParams) -> (f64, f64) {
    p.alphas()
}

pub fn delta_mass(p: &ModelParams) -> f64 {
    p.delta_mass()
}

/// A vector in C^2 with the bilinear (unconjugated) pairing used for charges.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Charge2 {
    pub q1: Complex64,
    pub q2: Complex64,
}

impl Charge2 {
    pub const ZERO: Charge2 = Charge2 {
        q1: Complex64::new(0.0, 0.0),
        q2: Complex64::new(0.0, 0.0),
    };

    pub fn new(q1: Complex64, q2: Complex64) -> Self {
        Self { q1, q2 }
    }

    pub fn real(q1: f64, q2: f64) -> Self {
        Self::new(c(q1), c(q2))
    }

    /// `(q, p) = q1 p1 + q2 p2`.
    pub fn pair(&self, other: &Charge2) -> Complex64 {
        self.q1 * other.q1 + self.q2 * other.q2
    }

    /// `q1 conj(p1) + q2 conj(p2)`.
    pub fn hermitian(&self, other: &Charge2) -> Complex64 {
        self.q1 * other.q1.conj() + self.q2 * other.q2.conj()
    }

    pub fn conj(&self) -> Self {
        Self::new(self.q1.conj(), self.q2.conj())
    }

    /// `J q = (q2, -q1)`.
    pub fn j(&self) -> Self {
        Self::new(self.q2, -self.q1)
    }

    /// `(q1, -q2)`, the component flip relating the eigenvectors of `+-i xi`.
    pub fn flip(&self) -> Self {
        Self::new(self.q1, -self.q2)
    }

    pub fn norm(&self) -> f64 {
        (self.q1.norm_sqr() + self.q2.norm_sqr()).sqrt()
    }

    pub fn scale(&self, s: Complex64) -> Self {
        Self::new(self.q1 * s, self.q2 * s)
    }

    pub fn get(&self, i: usize) -> Complex64 {
        match i {
            0 => self.q1,
            1 => self.q2,
            _ => panic!("Charge2 index {i} out of range"),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.q1.is_finite() && self.q2.is_finite()
    }
}

impl Add for Charge2 {
    type Output = Charge2;
    fn add(self, o: Charge2) -> Charge2 {
        Charge2::new(self.q1 + o.q1, self.q2 + o.q2)
    }
}

impl AddAssign for Charge2 {
    fn add_assign(&mut self, o: Charge2) {
        self.q1 += o.q1;
        self.q2 += o.q2;
    }
}

impl Sub for Charge2 {
    type Output = Charge2;
    fn sub(self, o: Charge2) -> Charge2 {
        Charge2::new(self.q1 - o.q1, self.q2 - o.q2)
    }
}

impl Neg for Charge2 {
    type Output = Charge2;
    fn neg(self) -> Charge2 {
        Charge2::new(-self.q1, -self.q2)
    }
}

impl Mul<Complex64> for Charge2 {
    type Output = Charge2;
    fn mul(self, s: Complex64) -> Charge2 {
        self.scale(s)
    }
}

impl Mul<f64> for Charge2 {
    type Output = Charge2;
    fn mul(self, s: f64) -> Charge2 {
        self.scale(c(s))
    }
}

impl fmt::Display for Charge2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.q1, self.q2)
    }
}

/// One summand `amp r^power e^{-rate r} / (4 pi r)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub amp: Charge2,
    pub rate: Complex64,
    pub power: u32,
}

impl Term {
    /// Radial profile without the amplitude.
    pub fn profile(&self, r: f64) -> Complex64 {
        (-self.rate * r).exp() * r.powi(self.power as i32 - 1) / FOUR_PI
    }
}

/// Finite sum of radial exponential terms with two-component amplitudes.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RadialExpSum {
    pub terms: Vec<Term>,
}

/// Pieces of `r * d(phi)/dr` for the regular part: `c r^m e^{-s r}` or `c (e^{-s r} - 1)/r`.
#[derive(Clone, Copy)]
enum GradPiece {
    Poly { c: Complex64, m: u32, s: Complex64 },
    Reg { c: Complex64, s: Complex64 },
}

impl RadialExpSum {
    pub fn zero() -> Self {
        Self { terms: Vec::new() }
    }

    pub fn single(amp: Charge2, rate: Complex64, power: u32) -> Self {
        Self {
            terms: vec![Term { amp, rate, power }],
        }
    }

    /// Point-charge profile `q e^{-mu r}/(4 pi r)`.
    pub fn green(q: Charge2, rate: Complex64) -> Self {
        Self::single(q, rate, 0)
    }

    pub fn push(&mut self, amp: Charge2, rate: Complex64, power: u32) {
        self.terms.push(Term { amp, rate, power });
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Coefficient of the `1/(4 pi |x|)` singularity.
    pub fn charge(&self) -> Charge2 {
        let mut q = Charge2::ZERO;
        for t in self.terms.iter().filter(|t| t.power == 0) {
            q += t.amp;
        }
        q
    }

    /// Value at the origin of the regular part `u - q/(4 pi |x|)`.
    pub fn regular_at_origin(&self) -> Charge2 {
        let mut v = Charge2::ZERO;
        for t in &self.terms {
            match t.power {
                0 => v += t.amp * (-t.rate / FOUR_PI),
                1 => v += t.amp * (1.0 / FOUR_PI),
                _ => {}
            }
        }
        v
    }

    /// Pointwise value at radius `r > 0`.
    pub fn eval(&self, r: f64) -> Charge2 {
        let mut v = Charge2::ZERO;
        for t in &self.terms {
            v += t.amp * t.profile(r);
        }
        v
    }

    /// Pointwise value of the regular part, computed without cancellation near the origin.
    pub fn eval_regular(&self, r: f64) -> Charge2 {
        let mut v = Charge2::ZERO;
        for t in &self.terms {
            if t.power == 0 {
                let z = -t.rate * r;
                let ratio = if z.norm() < 1e-4 {
                    -t.rate * (1.0 + z * (0.5 + z / 6.0))
                } else {
                    expm1c(z) / r
                };
                v += t.amp * (ratio / FOUR_PI);
            } else {
                v += t.amp * t.profile(r);
            }
        }
        v
    }

    pub fn scale(&self, s: Complex64) -> Self {
        Self {
            terms: self
                .terms
                .iter()
                .map(|t| Term {
                    amp: t.amp * s,
                    ..*t
                })
                .collect(),
        }
    }

    /// Apply a 2x2 matrix `m` (row-major) to every amplitude.
    pub fn map_amps(&self, m: [[Complex64; 2]; 2]) -> Self {
        Self {
            terms: self
                .terms
                .iter()
                .map(|t| Term {
                    amp: Charge2::new(
                        m[0][0] * t.amp.q1 + m[0][1] * t.amp.q2,
                        m[1][0] * t.amp.q1 + m[1][1] * t.amp.q2,
                    ),
                    ..*t
                })
                .collect(),
        }
    }

    /// `J u = (u2, -u1)`.
    pub fn apply_j(&self) -> Self {
        self.map_terms(|t| Term { amp: t.amp.j(), ..t })
    }

    /// `(u1, -u2)`.
    pub fn flip(&self) -> Self {
        self.map_terms(|t| Term {
            amp: t.amp.flip(),
            ..t
        })
    }

    /// Complex conjugate of the function.
    pub fn conj(&self) -> Self {
        self.map_terms(|t| Term {
            amp: t.amp.conj(),
            rate: t.rate.conj(),
            power: t.power,
        })
    }

    fn map_terms(&self, f: impl Fn(Term) -> Term) -> Self {
        Self {
            terms: self.terms.iter().map(|&t| f(t)).collect(),
        }
    }

    /// The complex scalar `u1 + i u2` stored in the first component.
    pub fn complexify(&self) -> Self {
        self.map_terms(|t| Term {
            amp: Charge2::new(t.amp.q1 + Complex64::i() * t.amp.q2, Complex64::new(0.0, 0.0)),
            ..t
        })
    }

    /// Merge terms that share rate and power, dropping exact zeros.
    pub fn compact(&self) -> Self {
        let mut out: Vec<Term> = Vec::with_capacity(self.terms.len());
        for t in &self.terms {
            if t.amp.norm() == 0.0 {
                continue;
            }
            if let Some(o) = out.iter_mut().find(|o| {
                o.power == t.power && (o.rate - t.rate).norm() <= 1e-14 * (1.0 + t.rate.norm())
            }) {
                o.amp += t.amp;
            } else {
                out.push(*t);
            }
        }
        Self { terms: out }
    }

    /// Every term decays exponentially.
    pub fn is_square_integrable(&self) -> bool {
        self.terms.iter().all(|t| t.rate.re > 0.0)
    }

    /// Largest amplitude modulus, used as a scale for tolerances.
    pub fn amp_scale(&self) -> f64 {
        self.terms.iter().map(|t| t.amp.norm()).fold(0.0, f64::max)
    }

    /// Pointwise Laplacian on `r > 0`, computed as `(1/r)(r u)''`.
    pub fn laplacian(&self) -> Self {
        let mut out = Self::zero();
        for t in &self.terms {
            let k = t.power;
            let mu = t.rate;
            if k >= 2 {
                out.push(t.amp * ((k * (k - 1)) as f64), mu, k - 2);
            }
            if k >= 1 {
                out.push(t.amp * (mu * (-2.0 * k as f64)), mu, k - 1);
            }
            out.push(t.amp * (mu * mu), mu, k);
        }
        out.compact()
    }

    /// Derivative in `w` when every rate scales as `sqrt(w)` and amplitudes are fixed.
    pub fn d_omega_sqrt_rates(&self, omega: f64) -> Self {
        let mut out = Self::zero();
        for t in &self.terms {
            let dmu = t.rate / (2.0 * omega);
            out.push(t.amp * (-dmu), t.rate, t.power + 1);
        }
        out
    }

    fn pair_terms(
        &self,
        other: &Self,
        conjugate: bool,
        amp_pair: impl Fn(&Charge2, &Charge2) -> Complex64,
    ) -> Result<Complex64> {
        let mut acc = Complex64::new(0.0, 0.0);
        for a in &self.terms {
            for b in &other.terms {
                let w = amp_pair(&a.amp, &b.amp);
                if w == Complex64::new(0.0, 0.0) {
                    continue;
                }
                let s = if conjugate {
                    a.rate + b.rate.conj()
                } else {
                    a.rate + b.rate
                };
                if s.re <= 0.0 {
                    return Err(Error::NonIntegrable(s));
                }
                let n = a.power + b.power;
                acc += w * factorial(n) / (FOUR_PI * s.powu(n + 1));
            }
        }
        Ok(acc)
    }

    /// Hermitian pairing `int u . conj(v) dx`.
    pub fn l2_inner(&self, other: &Self) -> Result<Complex64> {
        self.pair_terms(other, true, |a, b| a.hermitian(b))
    }

    /// Bilinear pairing `int u . v dx` without conjugation.
    pub fn bilinear(&self, other: &Self) -> Result<Complex64> {
        self.pair_terms(other, false, |a, b| a.pair(b))
    }

    pub fn l2_norm_sq(&self) -> Result<f64> {
        Ok(self.l2_inner(self)?.re)
    }

    /// Bilinear symplectic pairing `int (u2 v1 - u1 v2) dx = (J u, v)`.
    pub fn omega_b(&self, other: &Self) -> Result<Complex64> {
        self.apply_j().bilinear(other)
    }

    fn grad_pieces(&self, comp: usize) -> Vec<GradPiece> {
        let mut pieces = Vec::new();
        for t in &self.terms {
            let a = t.amp.get(comp) / FOUR_PI;
            if a == Complex64::new(0.0, 0.0) {
                continue;
            }
            let mu = t.rate;
            if t.power == 0 {
                pieces.push(GradPiece::Poly {
                    c: -a * mu,
                    m: 0,
                    s: mu,
                });
                pieces.push(GradPiece::Reg { c: -a, s: mu });
            } else {
                let k = t.power;
                if k >= 2 {
                    pieces.push(GradPiece::Poly {
                        c: a * ((k - 1) as f64),
                        m: k - 1,
                        s: mu,
                    });
                }
                pieces.push(GradPiece::Poly {
                    c: -a * mu,
                    m: k,
                    s: mu,
                });
            }
        }
        pieces
    }

    /// `int |grad phi|^2 dx` for the regular part `phi = u - q G_0`, in closed form.
    pub fn gradient_norm_sq(&self) -> Result<f64> {
        if let Some(t) = self.terms.iter().find(|t| t.rate.re <= 0.0) {
            return Err(Error::NonIntegrable(t.rate));
        }
        let mut total = 0.0;
        for comp in 0..2 {
            let pieces = self.grad_pieces(comp);
            let mut acc = Complex64::new(0.0, 0.0);
            for p in &pieces {
                for q in &pieces {
                    acc += piece_pair(p, q);
                }
            }
            total += FOUR_PI * acc.re;
        }
        Ok(total)
    }

    /// `(1/2) ||grad phi||^2 - nu/(2 sigma + 2) |q|^{2 sigma + 2}` for a real-valued pair.
    pub fn energy(&self, p: &ModelParams) -> Result<f64> {
        let grad = self.gradient_norm_sq()?;
        let q = self.charge().norm();
        Ok(0.5 * grad - p.nu / (2.0 * p.sigma + 2.0) * q.powf(2.0 * p.sigma + 2.0))
    }
}

fn piece_pair(p: &GradPiece, q: &GradPiece) -> Complex64 {
    use GradPiece::*;
    match (*p, *q) {
        (Poly { c: c1, m: m1, s: s1 }, Poly { c: c2, m: m2, s: s2 }) => {
            let s = s1 + s2.conj();
            let n = m1 + m2;
            c1 * c2.conj() * factorial(n) / s.powu(n + 1)
        }
        (Poly { c: cp, m, s: sp }, Reg { c: cr, s: sr }) => cp * cr.conj() * poly_reg(m, sp, sr.conj()),
        (Reg { c: cr, s: sr }, Poly { c: cp, m, s: sp }) => {
            cr * cp.conj() * poly_reg(m, sp.conj(), sr)
        }
        (Reg { c: c1, s: s1 }, Reg { c: c2, s: s2 }) => {
            let a = s1;
            let b = s2.conj();
            c1 * c2.conj() * ((a + b) * (a + b).ln() - a * a.ln() - b * b.ln())
        }
    }
}

/// `int_0^inf r^m e^{-a r} (e^{-b r} - 1) / r dr`.
fn poly_reg(m: u32, a: Complex64, b: Complex64) -> Complex64 {
    if m == 0 {
        a.ln() - (a + b).ln()
    } else {
        factorial(m - 1) * ((a + b).powi(-(m as i32)) - a.powi(-(m as i32)))
    }
}

impl Add for RadialExpSum {
    type Output = RadialExpSum;
    fn add(mut self, o: RadialExpSum) -> RadialExpSum {
        self.terms.extend(o.terms);
        self
    }
}

impl Add<&RadialExpSum> for &RadialExpSum {
    type Output = RadialExpSum;
    fn add(self, o: &RadialExpSum) -> RadialExpSum {
        let mut terms = self.terms.clone();
        terms.extend_from_slice(&o.terms);
        RadialExpSum { terms }
    }
}

impl Sub for RadialExpSum {
    type Output = RadialExpSum;
    fn sub(self, o: RadialExpSum) -> RadialExpSum {
        self + (-o)
    }
}

impl Sub<&RadialExpSum> for &RadialExpSum {
    type Output = RadialExpSum;
    fn sub(self, o: &RadialExpSum) -> RadialExpSum {
        self + &(-o.clone())
    }
}

impl Neg for RadialExpSum {
    type Output = RadialExpSum;
    fn neg(self) -> RadialExpSum {
        self.scale(c(-1.0))
    }
}

impl Mul<Complex64> for &RadialExpSum {
    type Output = RadialExpSum;
    fn mul(self, s: Complex64) -> RadialExpSum {
        self.scale(s)
    }
}

impl Mul<f64> for &RadialExpSum {
    type Output = RadialExpSum;
    fn mul(self, s: f64) -> RadialExpSum {
        self.scale(c(s))
    }
}

/// Hermitian pairing of two exponential sums.
pub fn l2_inner(u: &RadialExpSum, v: &RadialExpSum) -> Result<Complex64> {
    u.l2_inner(v)
}

/// `Im int u~ conj(v~)` with `u~ = u1 + i u2`, for pairs with real-valued components.
pub fn symplectic_form(u: &RadialExpSum, v: &RadialExpSum) -> Result<f64> {
    Ok(u.complexify().l2_inner(&v.complexify())?.im)
}

pub fn energy(u: &RadialExpSum, p: &ModelParams) -> Result<f64> {
    u.energy(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad;

    fn p(sigma: f64, nu: f64, omega: f64) -> ModelParams {
        ModelParams::new(sigma, nu, omega).unwrap()
    }

    #[test]
    fn q_omega_examples() {
        let w: f64 = 2.3;
        assert!((p(0.37, w.sqrt() / FOUR_PI, w).q_omega() - 1.0).abs() < 1e-14);
        assert!((p(0.5, 1.0, 1.0).q_omega() - 7.957747e-2).abs() < 1e-8);
        assert!((p(1.0, 1.0 / PI, 16.0).q_omega() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn soliton_norm_and_value() {
        let m = p(0.5, 1.0, 1.0);
        let phi = m.soliton();
        let q = m.q_omega();
        assert_eq!(phi.charge(), Charge2::real(q, 0.0));
        let n2 = phi.l2_norm_sq().unwrap();
        assert!((n2 - q * q / (8.0 * PI)).abs() < 1e-15);
        let v = phi.eval(1.0).q1.re;
        assert!((v - (-1f64).exp() / (16.0 * PI * PI)).abs() < 1e-15);
    }

    #[test]
    fn xi_and_alphas() {
        assert!((p(FRAC_1_SQRT_2, 1.0, 1.7).xi() - 1.7).abs() < 1e-14);
        assert!((p(0.8, 1.0, 1.0).xi() - 0.96).abs() < 1e-14);
        assert_eq!(p(1.0, 1.0, 1.0).xi(), 0.0);
        let (a1, a2) = p(0.5, 1.0, 1.0).alphas();
        assert!((a1 + 2.0 / FOUR_PI).abs() < 1e-15 && (a2 + 1.0 / FOUR_PI).abs() < 1e-15);
        let (b1, b2) = p(0.5, 1.0, 4.0).alphas();
        assert!((b1 - 2.0 * a1).abs() < 1e-15 && (b2 - 2.0 * a2).abs() < 1e-15);
    }

    #[test]
    fn delta_matches_finite_difference() {
        let m = p(0.5, 1.0, 1.0);
        let h = 1e-4;
        let mass = |w: f64| 0.5 * m.with_omega(w).soliton().l2_norm_sq().unwrap();
        let fd = (mass(1.0 + h) - mass(1.0 - h)) / (2.0 * h);
        assert!((fd - m.delta_mass()).abs() < 1e-8 * m.delta_mass());
        assert_eq!(p(1.0, 1.0, 1.0).delta_mass(), 0.0);
    }

    #[test]
    fn soliton_derivatives_match_finite_differences() {
        let m = p(0.8, 0.7, 1.3);
        let h = 1e-5;
        let lo = m.with_omega(m.omega - h);
        let hi = m.with_omega(m.omega + h);
        for r in [0.1, 0.7, 2.5] {
            let fd1 = (hi.soliton().eval(r).q1 - lo.soliton().eval(r).q1) / (2.0 * h);
            let an1 = m.soliton_d1().eval(r).q1;
            assert!((fd1 - an1).norm() < 1e-6 * an1.norm());
            let fd2 = (hi.soliton_d1().eval(r).q1 - lo.soliton_d1().eval(r).q1) / (2.0 * h);
            let an2 = m.soliton_d2().eval(r).q1;
            assert!((fd2 - an2).norm() < 1e-6 * an2.norm().max(1e-3));
        }
    }

    #[test]
    fn symplectic_orientation() {
        let m = p(0.8, 1.0, 1.0);
        let phi = m.soliton();
        let i_phi = phi.map_amps([[c(0.0), c(0.0)], [c(1.0), c(0.0)]]);
        let val = symplectic_form(&phi, &i_phi).unwrap();
        let n2 = phi.l2_norm_sq().unwrap();
        assert!((val + n2).abs() < 1e-15);
        assert_eq!(symplectic_form(&phi, &phi).unwrap(), 0.0);
    }

    #[test]
    fn gradient_of_single_charge_term() {
        let mu = 1.7;
        let a = 0.9;
        let u = RadialExpSum::single(Charge2::real(a, 0.0), c(mu), 0);
        let g = u.gradient_norm_sq().unwrap();
        assert!((g - a * a * mu / (8.0 * PI)).abs() < 1e-14);
    }

    #[test]
    fn energy_of_soliton_matches_quadrature() {
        let m = p(0.8, 1.0, 1.0);
        let phi = m.soliton();
        let q = m.q_omega();
        let s = m.omega.sqrt();
        let dphi = |r: f64| {
            let reg = q * expm1c(c(-s * r)).re / (FOUR_PI * r);
            let ex = q * (-s * (-s * r).exp()) / (FOUR_PI * r);
            ex - reg / r
        };
        let grad = quad::to_infinity(0.0, 1.0, 1e-13, 1e-18, |r: f64| FOUR_PI * r * r * dphi(r).powi(2)).unwrap();
        let e = 0.5 * grad - m.nu / (2.0 * m.sigma + 2.0) * q.powf(2.0 * m.sigma + 2.0);
        let closed = phi.energy(&m).unwrap();
        assert!((e - closed).abs() < 1e-8 * closed.abs());
    }
}
