//! Spectrum of the linearization around the soliton.
//!
//! The linearized generator acts on pairs `u = (u1, u2)` as `L = J diag(L1, L2)` with
//! `J = [[0, 1], [-1, 0]]`; pointwise both `L1` and `L2` equal `-Delta + w`, and the two
//! components carry the point-interaction boundary conditions `phi_j(0) = alpha_j q_j`.
//! Sources may include a charge functional `c`, meaning `(S, v) = (f, v) + c . conj(q_v)`.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    sigma_band_edge, Charge2, DeltaConvention, ModelParams, RadialExpSum, FOUR_PI,
};

const I: Complex64 = Complex64::new(0.0, 1.0);

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

/// Side from which a point on the essential spectrum is approached.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    /// Off the cuts; no limit needed.
    Off,
    /// `lambda + 0`, approached from `Re lambda > 0`.
    Plus,
    /// `lambda - 0`, approached from `Re lambda < 0`.
    Minus,
}

impl Side {
    fn sign(self) -> f64 {
        match self {
            Side::Off => 0.0,
            Side::Plus => 1.0,
            Side::Minus => -1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralPoint {
    pub lambda: Complex64,
    pub side: Side,
}

impl SpectralPoint {
    pub fn new(lambda: Complex64) -> Self {
        Self {
            lambda,
            side: Side::Off,
        }
    }

    pub fn plus(lambda: Complex64) -> Self {
        Self {
            lambda,
            side: Side::Plus,
        }
    }

    pub fn minus(lambda: Complex64) -> Self {
        Self {
            lambda,
            side: Side::Minus,
        }
    }
}

/// Square root with `Re >= 0`; on the negative real axis the side tag picks `+-i sqrt(|z|)`.
fn sqrt_tagged(z: Complex64, s: f64) -> Complex64 {
    if s != 0.0 && z.re < 0.0 && z.im.abs() <= 1e-14 * z.re.abs() {
        I * s * (-z.re).sqrt()
    } else {
        z.sqrt()
    }
}

/// Decay rates of the two channels and the resolvent denominator at one spectral point.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ResolventPoint {
    pub lambda: Complex64,
    pub side: Side,
    /// Rate of the `u1 + i u2` channel, `k_+^2 = w - i lambda`.
    pub k_plus: Complex64,
    /// Rate of the `u1 - i u2` channel, `k_-^2 = w + i lambda`.
    pub k_minus: Complex64,
    /// `sqrt(-w + i lambda) = i k_+`, with positive imaginary part off the cuts.
    pub sp: Complex64,
    /// `sqrt(-w - i lambda) = i k_-`.
    pub sm: Complex64,
    pub w: Complex64,
}

/// Resolvent denominator `32 pi^2 a1 a2 - 4 i pi (a1 + a2)(sp + sm) - 2 sp sm`.
pub fn w_function(pt: SpectralPoint, p: &ModelParams) -> ResolventPoint {
    let s = pt.side.sign();
    let k_plus = sqrt_tagged(c(p.omega) - I * pt.lambda, -s);
    let k_minus = sqrt_tagged(c(p.omega) + I * pt.lambda, s);
    ResolventPoint {
        side: pt.side,
        ..resolvent_point_with_rates(pt.lambda, k_plus, k_minus, p)
    }
}

/// A right-hand side: an exponential-sum function plus a point-charge functional.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Source {
    pub f: RadialExpSum,
    pub c: Charge2,
}

impl Source {
    pub fn function(f: RadialExpSum) -> Self {
        Self { f, c: Charge2::ZERO }
    }

    pub fn charge(c: Charge2) -> Self {
        Self {
            f: RadialExpSum::zero(),
            c,
        }
    }

    pub fn scale(&self, s: Complex64) -> Self {
        Self {
            f: self.f.scale(s),
            c: self.c * s,
        }
    }

    pub fn add(&self, o: &Source) -> Self {
        Self {
            f: &self.f + &o.f,
            c: self.c + o.c,
        }
    }

    pub fn sub(&self, o: &Source) -> Self {
        self.add(&o.scale(c(-1.0)))
    }

    pub fn apply_j(&self) -> Self {
        Self {
            f: self.f.apply_j(),
            c: self.c.j(),
        }
    }

    /// Bilinear pairing `B(S, v) = B(f, v) + c . q_v`.
    pub fn bilinear(&self, v: &RadialExpSum) -> Result<Complex64> {
        Ok(self.f.bilinear(v)? + self.c.pair(&v.charge()))
    }

    /// Hermitian pairing `(S, v) = (f, v) + c . conj(q_v)`.
    pub fn inner(&self, v: &RadialExpSum) -> Result<Complex64> {
        Ok(self.f.l2_inner(v)? + self.c.hermitian(&v.charge()))
    }

    /// Symplectic pairing `omega_b(S, e) = B(J S, e)`.
    pub fn omega_b(&self, e: &RadialExpSum) -> Result<Complex64> {
        self.apply_j().bilinear(e)
    }
}

/// Boundary defects `d_j(u_j) = alpha_j q_j - phi_j(0)`; both vanish on the operator domain.
pub fn defects(u: &RadialExpSum, p: &ModelParams) -> Charge2 {
    let (a1, a2) = p.alphas();
    let q = u.charge();
    let f0 = u.regular_at_origin();
    Charge2::new(q.q1 * a1 - f0.q1, q.q2 * a2 - f0.q2)
}

/// Pointwise action of `L` on `r > 0`.
pub fn apply_l_pointwise(u: &RadialExpSum, p: &ModelParams) -> RadialExpSum {
    let l0 = (&u.scale(c(p.omega)) - &u.laplacian()).compact();
    l0.apply_j()
}

/// `(L - lambda) u` as a source: pointwise part plus the charge functional from the defects.
pub fn l_minus_lambda(u: &RadialExpSum, lambda: Complex64, p: &ModelParams) -> Source {
    let f = (&apply_l_pointwise(u, p) - &u.scale(lambda)).compact();
    let d = defects(u, p);
    Source {
        f,
        c: Charge2::new(d.q2, -d.q1),
    }
}

/// `Q_L(u, v) = (L u, v) + d2(u2) conj(q_v1) - d1(u1) conj(q_v2)` with pointwise `L u`.
pub fn quadratic_form_l(u: &RadialExpSum, v: &RadialExpSum, p: &ModelParams) -> Result<Complex64> {
    let lu = apply_l_pointwise(u, p);
    let d = defects(u, p);
    let qv = v.charge();
    Ok(lu.l2_inner(v)? + d.q2 * qv.q1.conj() - d.q1 * qv.q2.conj())
}

/// Relative tolerance below which two rates are treated as confluent.
const CONFLUENT_TOL: f64 = 1e-9;

/// `(-Delta + a^2)^{-1}` applied to `r^k e^{-b r}/(4 pi r)`, as `(coefficient, rate, power)` terms.
///
/// The result carries no charge, so it is the convolution with `e^{-a|x|}/(4 pi |x|)`.
pub fn free_inverse(a: Complex64, b: Complex64, k: u32) -> Vec<(Complex64, Complex64, u32)> {
    let k = k as usize;
    let gap = a * a - b * b;
    let scale = a.norm_sqr() + b.norm_sqr();
    let mut out = Vec::new();
    if gap.norm() <= CONFLUENT_TOL * scale {
        let mut cs = vec![Complex64::new(0.0, 0.0); k + 3];
        cs[k + 1] = 1.0 / (2.0 * (k as f64 + 1.0) * b);
        for m in (0..k).rev() {
            cs[m + 1] = (m as f64 + 2.0) * cs[m + 2] / (2.0 * b);
        }
        for (m, cm) in cs.iter().enumerate().take(k + 2).skip(1) {
            out.push((*cm, b, m as u32));
        }
    } else {
        let mut cs = vec![Complex64::new(0.0, 0.0); k + 3];
        for m in (0..=k).rev() {
            let delta = if m == k { 1.0 } else { 0.0 };
            let mf = m as f64;
            cs[m] = (delta - 2.0 * (mf + 1.0) * b * cs[m + 1]
                + (mf + 2.0) * (mf + 1.0) * cs[m + 2])
                / gap;
        }
        for (m, cm) in cs.iter().enumerate().take(k + 1) {
            out.push((*cm, b, m as u32));
        }
        out.push((-cs[0], a, 0));
    }
    out
}

/// Scalar channel solve `(-Delta + a^2) w = g` for a scalar exponential sum `g` (first component).
fn channel_solve(
    a: Complex64,
    g: &[(Complex64, Complex64, u32)],
    dir: Charge2,
    out: &mut RadialExpSum,
) {
    for &(amp, rate, power) in g {
        if amp == Complex64::new(0.0, 0.0) {
            continue;
        }
        for (coef, r, k) in free_inverse(a, rate, power) {
            out.push(dir * (amp * coef), r, k);
        }
    }
}

/// Boundary matrix `M` mapping homogeneous amplitudes `(h+, h-)` to `(d2(u2), -d1(u1))`.
fn boundary_matrix(rp: &ResolventPoint, p: &ModelParams) -> [[Complex64; 2]; 2] {
    let (a1, a2) = p.alphas();
    let kp = rp.k_plus;
    let km = rp.k_minus;
    let two_i = 2.0 * I;
    let eight_pi = 8.0 * PI;
    [
        [
            a2 / two_i + kp / (eight_pi * I),
            -a2 / two_i - km / (eight_pi * I),
        ],
        [-a1 / 2.0 - kp / eight_pi, -a1 / 2.0 - km / eight_pi],
    ]
}

/// Point-interaction part of the resolvent kernel, `R_m(x, y)[i][j]`: the response at radius `x`
/// to a unit source in component `j` spread over the sphere of radius `y`, minus the free
/// convolution part.
pub fn point_interaction_kernel(
    rp: &ResolventPoint,
    x: f64,
    y: f64,
    p: &ModelParams,
) -> [[Complex64; 2]; 2] {
    let g = |k: Complex64, r: f64| (-k * r).exp() / (4.0 * PI * r);
    let (gp, gm) = (g(rp.k_plus, y), g(rp.k_minus, y));
    let (hp, hm) = (g(rp.k_plus, x), g(rp.k_minus, x));
    let m = boundary_matrix(rp, p);
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let mut out = [[Complex64::new(0.0, 0.0); 2]; 2];
    // Channel weights of a unit source in component j, as in the free solve.
    for (j, (wp, wm)) in [(I, -I), (c(-1.0), c(-1.0))].into_iter().enumerate() {
        let u1 = 0.5 * (wp * gp + wm * gm);
        let u2 = (-0.5 * I) * (wp * gp) + (0.5 * I) * (wm * gm);
        // The free part carries no charge, so its defects are minus its values at the origin.
        let rhs = [u2, -u1];
        let h = [
            (rhs[0] * m[1][1] - m[0][1] * rhs[1]) / det,
            (m[0][0] * rhs[1] - m[1][0] * rhs[0]) / det,
        ];
        out[0][j] = 0.5 * (h[0] * hp + h[1] * hm);
        out[1][j] = -0.5 * I * h[0] * hp + 0.5 * I * h[1] * hm;
    }
    out
}

/// Homogeneous solution `(h+/2) G_{k+} (1, -i) + (h-/2) G_{k-} (1, i)`.
fn homogeneous(rp: &ResolventPoint, h: [Complex64; 2]) -> RadialExpSum {
    let mut u = RadialExpSum::zero();
    u.push(Charge2::new(h[0] / 2.0, -I * h[0] / 2.0), rp.k_plus, 0);
    u.push(Charge2::new(h[1] / 2.0, I * h[1] / 2.0), rp.k_minus, 0);
    u
}

/// Particular solution of the pointwise equation `(L - lambda) u = f` with zero charge.
fn free_part(rp: &ResolventPoint, f: &RadialExpSum) -> RadialExpSum {
    let mut gp = Vec::with_capacity(f.len());
    let mut gm = Vec::with_capacity(f.len());
    for t in &f.terms {
        gp.push((I * t.amp.q1 - t.amp.q2, t.rate, t.power));
        gm.push((-I * t.amp.q1 - t.amp.q2, t.rate, t.power));
    }
    let mut u = RadialExpSum::zero();
    // u = ((w+ + w-)/2, (w+ - w-)/(2i))
    channel_solve(rp.k_plus, &gp, Charge2::new(c(0.5), -0.5 * I), &mut u);
    channel_solve(rp.k_minus, &gm, Charge2::new(c(0.5), 0.5 * I), &mut u);
    u
}

fn singular_threshold(rp: &ResolventPoint, p: &ModelParams) -> f64 {
    1e-9 * (p.omega + (rp.k_plus * rp.k_minus).norm())
}

/// How to proceed when the tagged point is (numerically) an eigenvalue.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SingularPolicy {
    Reject,
    /// Minimal-norm solution of the dominant boundary row; valid when the source is
    /// free of the corresponding eigen-component.
    PseudoInverse,
}

/// Solve `(L - lambda) u = S` inside the exponential-sum class.
pub fn resolvent_solve(
    pt: SpectralPoint,
    src: &Source,
    p: &ModelParams,
    policy: SingularPolicy,
) -> Result<RadialExpSum> {
    let rp = w_function(pt, p);
    if rp.k_plus.re < 0.0 || rp.k_minus.re < 0.0 {
        return Err(Error::Conditioning(format!(
            "no admissible square-root branch at lambda = {}",
            pt.lambda
        )));
    }
    solve_at(&rp, src, p, policy)
}

/// Channel data for explicitly chosen rates `k_+^2 = w - i lambda`, `k_-^2 = w + i lambda`.
///
/// Rates with negative real part give the continuation of the resolvent across a cut.
pub fn resolvent_point_with_rates(
    lambda: Complex64,
    k_plus: Complex64,
    k_minus: Complex64,
    p: &ModelParams,
) -> ResolventPoint {
    let sp = I * k_plus;
    let sm = I * k_minus;
    let (a1, a2) = p.alphas();
    let w = 32.0 * PI * PI * a1 * a2 - 4.0 * I * PI * (a1 + a2) * (sp + sm) - 2.0 * sp * sm;
    ResolventPoint {
        lambda,
        side: Side::Off,
        k_plus,
        k_minus,
        sp,
        sm,
        w,
    }
}

/// Resolvent formula evaluated at prescribed channel rates, with no branch admissibility check.
pub fn resolvent_solve_at(
    rp: &ResolventPoint,
    src: &Source,
    p: &ModelParams,
) -> Result<RadialExpSum> {
    solve_at(rp, src, p, SingularPolicy::Reject)
}

fn solve_at(
    rp: &ResolventPoint,
    src: &Source,
    p: &ModelParams,
    policy: SingularPolicy,
) -> Result<RadialExpSum> {
    let pt = SpectralPoint {
        lambda: rp.lambda,
        side: rp.side,
    };
    let rp = *rp;
    let free = free_part(&rp, &src.f);
    let dfree = defects(&free, p);
    let rhs = [src.c.q1 - dfree.q2, src.c.q2 + dfree.q1];
    let m = boundary_matrix(&rp, p);
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let singular = rp.w.norm() < singular_threshold(&rp, p);
    let h = if !singular {
        [
            (rhs[0] * m[1][1] - m[0][1] * rhs[1]) / det,
            (m[0][0] * rhs[1] - m[1][0] * rhs[0]) / det,
        ]
    } else {
        match policy {
            SingularPolicy::Reject => {
                return Err(Error::SingularResolvent {
                    lambda: pt.lambda,
                    w_abs: rp.w.norm(),
                })
            }
            SingularPolicy::PseudoInverse => {
                let n0 = m[0][0].norm_sqr() + m[0][1].norm_sqr();
                let n1 = m[1][0].norm_sqr() + m[1][1].norm_sqr();
                let (row, r) = if n0 >= n1 { (0, rhs[0]) } else { (1, rhs[1]) };
                let nr = n0.max(n1);
                [m[row][0].conj() * r / nr, m[row][1].conj() * r / nr]
            }
        }
    };
    Ok((free + homogeneous(&rp, h)).compact())
}

/// `R(lambda) S`; fails at eigenvalues.
pub fn resolvent_apply(pt: SpectralPoint, src: &Source, p: &ModelParams) -> Result<RadialExpSum> {
    resolvent_solve(pt, src, p, SingularPolicy::Reject)
}

/// Which coefficient is used for the second exponential of the eigenfunction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum PsiConvention {
    /// Coefficient obtained by solving the two boundary conditions, `-(sqrt(1-s^2)+1)/s`.
    #[default]
    BoundaryCondition,
    /// The literal coefficient `-(sqrt(1-s^2)-1)/s`; fails the boundary conditions but is
    /// what the closed-form dissipation formulas are written in.
    Literal,
}

impl PsiConvention {
    pub fn coefficient(self, sigma: f64) -> f64 {
        let s = (1.0 - sigma * sigma).sqrt();
        match self {
            PsiConvention::BoundaryCondition => -(s + 1.0) / sigma,
            PsiConvention::Literal => -(s - 1.0) / sigma,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EigenPair {
    pub xi: f64,
    pub psi: RadialExpSum,
    pub kappa: Complex64,
    pub bc_residual: f64,
    pub convention: PsiConvention,
}

/// Largest boundary defect of `u`.
pub fn bc_residual(u: &RadialExpSum, p: &ModelParams) -> f64 {
    let d = defects(u, p);
    d.q1.norm().max(d.q2.norm())
}

fn psi_raw(p: &ModelParams, conv: PsiConvention) -> RadialExpSum {
    let xi = p.xi();
    let b = conv.coefficient(p.sigma);
    let k1 = c((p.omega - xi).sqrt());
    let k2 = c((p.omega + xi).sqrt());
    let mut u = RadialExpSum::zero();
    u.push(Charge2::new(c(1.0), I), k1, 0);
    u.push(Charge2::new(c(b), -I * b), k2, 0);
    u
}

/// Eigenfunction of `i xi` with unit first amplitude, under the chosen coefficient convention.
///
/// Only the boundary-condition convention is validated; the other is returned as is so that
/// its residual can be reported.
pub fn psi_with(p: &ModelParams, conv: PsiConvention) -> Result<EigenPair> {
    p.require_eigen_regime()?;
    let psi = psi_raw(p, conv);
    let kappa = psi.omega_b(&psi.flip())?;
    let bc_residual = bc_residual(&psi, p);
    if conv == PsiConvention::BoundaryCondition && bc_residual >= 1e-12 {
        return Err(Error::Conditioning(format!(
            "eigenfunction boundary residual {bc_residual:.3e} at sigma = {}",
            p.sigma
        )));
    }
    Ok(EigenPair {
        xi: p.xi(),
        psi,
        kappa,
        bc_residual,
        convention: conv,
    })
}

pub fn psi(p: &ModelParams) -> Result<EigenPair> {
    psi_with(p, PsiConvention::BoundaryCondition)
}

/// Eigenfunction of `-i xi`, the component flip `(Psi_1, -Psi_2)`.
pub fn psi_star(p: &ModelParams) -> Result<EigenPair> {
    let e = psi(p)?;
    let star = e.psi.flip();
    Ok(EigenPair {
        xi: e.xi,
        bc_residual: bc_residual(&star, p),
        kappa: star.omega_b(&e.psi)?,
        psi: star,
        convention: e.convention,
    })
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct KappaReport {
    /// `omega_b(Psi, Psi*) = -(Psi, J Psi)` from the exponential-sum pairing.
    pub direct: Complex64,
    /// The closed formula in terms of `sigma` and `w`.
    pub closed_form: Complex64,
    pub difference: f64,
}

/// Closed formula `(i/(4 pi sqrt w)) (1/sqrt(1 - 2 s S) - beta^2/sqrt(1 + 2 s S))`.
pub fn kappa_closed_form(p: &ModelParams) -> Complex64 {
    let s = p.sigma;
    let sq = (1.0 - s * s).sqrt();
    let beta = (sq - 1.0) / s;
    let val = 1.0 / (1.0 - 2.0 * s * sq).sqrt() - beta * beta / (1.0 + 2.0 * s * sq).sqrt();
    I * val / (FOUR_PI * p.omega.sqrt())
}

pub fn kappa(p: &ModelParams, conv: PsiConvention) -> Result<KappaReport> {
    let e = psi_with(p, conv)?;
    let closed_form = kappa_closed_form(p);
    Ok(KappaReport {
        direct: e.kappa,
        closed_form,
        difference: (e.kappa - closed_form).norm(),
    })
}

/// Spectral projections onto the generalized kernel, the `+-i xi` eigenspace and the rest.
#[derive(Clone, Debug)]
pub struct Projector {
    pub params: ModelParams,
    /// `(0, Phi_w)`, the kernel vector.
    pub e: RadialExpSum,
    /// `(dPhi_w/dw, 0)`, the generalized kernel vector with `L D = E`.
    pub d: RadialExpSum,
    pub delta: f64,
    pub psi: Option<RadialExpSum>,
    pub psi_star: Option<RadialExpSum>,
    pub kappa: Complex64,
    pub xi: f64,
}

/// Coefficients of a source along the discrete directions.
#[derive(Clone, Copy, Debug, Default)]
pub struct DiscreteCoeffs {
    pub e: Complex64,
    pub d: Complex64,
    pub psi: Complex64,
    pub psi_star: Complex64,
}

impl Projector {
    pub fn new(p: &ModelParams, conv: PsiConvention, dconv: DeltaConvention) -> Result<Self> {
        let phi = p.soliton();
        let e = phi.map_amps([[c(0.0), c(0.0)], [c(1.0), c(0.0)]]);
        let d = p.soliton_d1();
        let delta = p.delta(dconv);
        let (psi, psi_star, kappa, xi) = if p.require_eigen_regime().is_ok() {
            let pair = psi_with(p, conv)?;
            let star = pair.psi.flip();
            (Some(pair.psi), Some(star), pair.kappa, pair.xi)
        } else {
            (None, None, Complex64::new(0.0, 0.0), 0.0)
        };
        Ok(Self {
            params: *p,
            e,
            d,
            delta,
            psi,
            psi_star,
            kappa,
            xi,
        })
    }

    /// Default projector: boundary-condition eigenfunction and half-squared-norm mass derivative.
    pub fn standard(p: &ModelParams) -> Result<Self> {
        Self::new(p, PsiConvention::BoundaryCondition, DeltaConvention::HalfSquaredNorm)
    }

    fn require_p1(&self) -> Result<(&RadialExpSum, &RadialExpSum)> {
        match (&self.psi, &self.psi_star) {
            (Some(a), Some(b)) => Ok((a, b)),
            _ => Err(Error::Regime(format!(
                "sigma = {} has no +-i xi eigenspace",
                self.params.sigma
            ))),
        }
    }

    pub fn coefficients(&self, s: &Source) -> Result<DiscreteCoeffs> {
        let mut out = DiscreteCoeffs {
            e: s.omega_b(&self.d)? / self.delta,
            d: -s.omega_b(&self.e)? / self.delta,
            ..Default::default()
        };
        if let Ok((psi, star)) = self.require_p1() {
            out.psi = s.omega_b(star)? / self.kappa;
            out.psi_star = -s.omega_b(psi)? / self.kappa;
        }
        Ok(out)
    }

    pub fn p0(&self, s: &Source) -> Result<RadialExpSum> {
        let k = self.coefficients(s)?;
        Ok(self.e.scale(k.e) + self.d.scale(k.d))
    }

    pub fn p1(&self, s: &Source) -> Result<RadialExpSum> {
        let (psi, star) = self.require_p1()?;
        let k = self.coefficients(s)?;
        Ok(psi.scale(k.psi) + star.scale(k.psi_star))
    }

    /// Discrete part `P^0 S + P^1 S` (only `P^0` outside the eigen regime).
    pub fn pd(&self, s: &Source) -> Result<RadialExpSum> {
        let k = self.coefficients(s)?;
        let mut out = self.e.scale(k.e) + self.d.scale(k.d);
        if let Ok((psi, star)) = self.require_p1() {
            out = out + psi.scale(k.psi) + star.scale(k.psi_star);
        }
        Ok(out)
    }

    pub fn pc(&self, s: &Source) -> Result<Source> {
        let pd = self.pd(s)?;
        Ok(Source {
            f: (&s.f - &pd).compact(),
            c: s.c,
        })
    }

    pub fn pc_fn(&self, u: &RadialExpSum) -> Result<RadialExpSum> {
        Ok(self.pc(&Source::function(u.clone()))?.f)
    }

    /// `R(lambda) P^d S` from the action of `L` on the discrete directions.
    pub fn resolvent_discrete(&self, lambda: Complex64, s: &Source) -> Result<RadialExpSum> {
        let k = self.coefficients(s)?;
        if lambda.norm() == 0.0 {
            return Err(Error::SingularResolvent {
                lambda,
                w_abs: 0.0,
            });
        }
        let mut out = self.e.scale(-k.e / lambda - k.d / (lambda * lambda)) + self.d.scale(-k.d / lambda);
        if let Ok((psi, star)) = self.require_p1() {
            let xi = self.xi;
            out = out
                + psi.scale(k.psi / (I * xi - lambda))
                + star.scale(k.psi_star / (-I * xi - lambda));
        }
        Ok(out)
    }

    /// Reduced resolvent `R(lambda) P^c S`, well defined at the discrete eigenvalues.
    pub fn reduced_resolvent(&self, pt: SpectralPoint, s: &Source) -> Result<RadialExpSum> {
        let sc = self.pc(s)?;
        let u = resolvent_solve(pt, &sc, &self.params, SingularPolicy::PseudoInverse)?;
        self.pc_fn(&u)
    }
}

/// `(P^0 u, P^1 u, P^c u)` for the standard projector.
pub fn projections(
    u: &RadialExpSum,
    p: &ModelParams,
) -> Result<(RadialExpSum, RadialExpSum, RadialExpSum)> {
    p.require_eigen_regime()?;
    let proj = Projector::standard(p)?;
    let s = Source::function(u.clone());
    Ok((proj.p0(&s)?, proj.p1(&s)?, proj.pc(&s)?.f))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Branch {
    Plus,
    Minus,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GeneralizedEigenfunction {
    pub eta: f64,
    pub branch: Branch,
    pub a: Complex64,
    pub c: Complex64,
    pub d: Complex64,
    pub psi: RadialExpSum,
    pub bc_residual: f64,
}

/// Frequency where the denominator of the decaying amplitude vanishes, `sigma (sigma + 2) w`.
pub fn a_denominator_root(p: &ModelParams) -> f64 {
    p.sigma * (p.sigma + 2.0) * p.omega
}

/// Bounded solution of `L Psi = i eta Psi` on a branch of the continuous spectrum, normalized by `D = 1`.
pub fn generalized_eigenfunction(
    eta: f64,
    branch: Branch,
    p: &ModelParams,
) -> Result<GeneralizedEigenfunction> {
    match branch {
        Branch::Plus => gen_plus(eta, p),
        Branch::Minus => {
            let mut g = gen_plus(-eta, p)?;
            g.psi = g.psi.flip();
            g.eta = eta;
            g.branch = Branch::Minus;
            Ok(g)
        }
    }
}

fn gen_plus(eta: f64, p: &ModelParams) -> Result<GeneralizedEigenfunction> {
    let w = p.omega;
    let s = p.sigma;
    if eta < w {
        return Err(Error::domain("eta", eta, format!("[{w}, inf) on the upper branch")));
    }
    let sw = w.sqrt();
    let root_minus = (eta - w).sqrt();
    let root_plus = (eta + w).sqrt();
    let root_prod = (eta * eta - w * w).sqrt();
    let num = c((2.0 * s + 1.0) * w) + (s + 1.0) * sw * (I * root_minus - root_plus) - I * root_prod;
    let den = c(-(2.0 * s + 1.0) * w) + (s + 1.0) * sw * (I * root_minus + root_plus) - I * root_prod;
    if den.norm() < 1e-12 * w {
        if (s - FRAC_1_SQRT_2).abs() < 1e-9 && (eta - w).abs() < 1e-12 * w {
            return Err(Error::Resonance(format!(
                "threshold resonance at eta = w = {w} for sigma = 1/sqrt(2)"
            )));
        }
        return Err(Error::Conditioning(format!(
            "vanishing denominator of C at eta = {eta}"
        )));
    }
    let d = c(1.0);
    let cc = num / den * d;
    let a_den = root_plus - (s + 1.0) * sw;
    if a_den.abs() < 1e-10 * sw {
        return Err(Error::Conditioning(format!(
            "denominator of A vanishes at eta = sigma (sigma + 2) w = {}",
            a_denominator_root(p)
        )));
    }
    let a = c(s * sw / a_den) * (cc + d);
    let mut psi = RadialExpSum::zero();
    psi.push(Charge2::new(a, -I * a), c(root_plus), 0);
    psi.push(Charge2::new(cc, I * cc), I * root_minus, 0);
    psi.push(Charge2::new(d, I * d), -I * root_minus, 0);
    let res = bc_residual(&psi, p);
    Ok(GeneralizedEigenfunction {
        eta,
        branch: Branch::Plus,
        a,
        c: cc,
        d,
        psi,
        bc_residual: res,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpectrumCase {
    /// Only the essential spectrum and the two-fold zero eigenvalue, `sigma < 1/sqrt(2)`.
    B,
    /// Threshold resonances at `+-i w`, `sigma = 1/sqrt(2)`.
    C,
    /// Simple eigenvalues `+-i xi`, `1/sqrt(2) < sigma < 1`.
    D,
    /// Zero with algebraic multiplicity four, `sigma = 1`.
    E,
    /// Real eigenvalues `+-2 sigma sqrt(sigma^2 - 1) w`, `sigma > 1`.
    F,
}

impl SpectrumCase {
    pub fn letter(self) -> char {
        match self {
            SpectrumCase::B => 'b',
            SpectrumCase::C => 'c',
            SpectrumCase::D => 'd',
            SpectrumCase::E => 'e',
            SpectrumCase::F => 'f',
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpectrumClassification {
    pub case: SpectrumCase,
    /// Nonzero eigenvalues; zero is always present.
    pub discrete_eigenvalues: Vec<Complex64>,
    pub zero_multiplicity: u32,
    pub has_threshold_resonance: bool,
    /// The essential spectrum `{Re lambda = 0, |Im lambda| >= w}` (case a) is always present.
    pub essential_edge: f64,
}

pub fn classify_spectrum(sigma: f64, omega: f64) -> Result<SpectrumClassification> {
    if !(sigma > 0.0) {
        return Err(Error::domain("sigma", sigma, "(0, inf)"));
    }
    if !(omega > 0.0) {
        return Err(Error::domain("omega", omega, "(0, inf)"));
    }
    let tol = 1e-12;
    let zero = Complex64::new(0.0, 0.0);
    let (case, eig, mult, res) = if (sigma - FRAC_1_SQRT_2).abs() <= tol {
        (SpectrumCase::C, vec![zero], 2, true)
    } else if sigma < FRAC_1_SQRT_2 {
        (SpectrumCase::B, vec![zero], 2, false)
    } else if (sigma - 1.0).abs() <= tol {
        (SpectrumCase::E, vec![zero], 4, false)
    } else if sigma < 1.0 {
        let xi = 2.0 * sigma * (1.0 - sigma * sigma).sqrt() * omega;
        (SpectrumCase::D, vec![zero, I * xi, -I * xi], 2, false)
    } else {
        let ev = 2.0 * sigma * (sigma * sigma - 1.0).sqrt() * omega;
        (SpectrumCase::F, vec![zero, c(ev), c(-ev)], 2, false)
    };
    Ok(SpectrumClassification {
        case,
        discrete_eigenvalues: eig,
        zero_multiplicity: mult,
        has_threshold_resonance: res,
        essential_edge: omega,
    })
}

/// The constant matrix `[[0, -1], [2 sigma + 1, 0]]`.
pub fn t_matrix(sigma: f64) -> [[f64; 2]; 2] {
    [[0.0, -1.0], [2.0 * sigma + 1.0, 0.0]]
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct FgrReport {
    pub value: Complex64,
    pub magnitude: f64,
    pub eta: f64,
}

/// `J N2(q_Psi, q_Psi) . conj(q_{Psi_+(2 xi)})` with the unit-normalized generalized eigenfunction.
pub fn fgr_quantity(p: &ModelParams, conv: PsiConvention) -> Result<FgrReport> {
    p.require_band_regime()?;
    let e = psi_with(p, conv)?;
    let q = e.psi.charge();
    let src = crate::normalform::n2(&q, &q, p).j();
    let eta = 2.0 * e.xi;
    let g = generalized_eigenfunction(eta, Branch::Plus, p)?;
    let qg = g.psi.charge();
    let value = src.q1 * qg.q1.conj() + src.q2 * qg.q2.conj();
    Ok(FgrReport {
        value,
        magnitude: value.norm(),
        eta,
    })
}

/// Closed-form `A`, `C` amplitudes of `(L - (2 i xi + 0))^{-1}` applied to the charge vector `h`.
///
/// Returns the two-term sum `A G_{k+} (1, -i) + C G_{i k} (1, i)` with `k+ = sqrt(w + 2 xi)` and
/// `k = sqrt(2 xi - w)`; only meaningful while `2 xi > w`.
pub fn a20_explicit(p: &ModelParams, h: Charge2) -> Result<RadialExpSum> {
    p.require_band_regime()?;
    let s = p.sigma;
    let w = p.omega;
    let xi = p.xi();
    let sw = w.sqrt();
    let sp = (w + 2.0 * xi).sqrt();
    let sm = (2.0 * xi - w).sqrt();
    let d = 2.0 * I * (2.0 * s + 1.0) * w + c(2.0 * (s + 1.0) * sw * sm)
        - 2.0 * I * (s + 1.0) * sw * sp
        - c(2.0 * sp * sm);
    let a = -(FOUR_PI / d)
        * ((c((2.0 * s + 1.0) * sw) - I * sm) * h.q1 + (I * sw + sm) * h.q2);
    let cc = (FOUR_PI / d) * (c((2.0 * s + 1.0) * sw - sp) * h.q1 - (I * sw - I * sp) * h.q2);
    let mut u = RadialExpSum::zero();
    u.push(Charge2::new(a, -I * a), c(sp), 0);
    u.push(Charge2::new(cc, I * cc), I * sm, 0);
    Ok(u)
}

/// `sigma` window where the doubled eigenvalue lies inside the continuous spectrum.
pub fn band_window() -> (f64, f64) {
    (FRAC_1_SQRT_2, sigma_band_edge())
}
