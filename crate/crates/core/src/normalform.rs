//! Normal-form coefficients of the modulation equations.
//!
//! The fluctuation is split as `chi = z Psi + conj(z) Psi* + f` with `f` in the continuous
//! subspace. The nonlinearity only sees charges, so the quadratic and cubic parts of the
//! modulation equations are built from the Taylor forms `N2`, `N3` evaluated at
//! `q_chi = z q_Psi + conj(z) q_Psi* + q_f`. Polynomials in `(z, conj z)` are stored as [`Poly2`].
//!
//! Coefficient extraction uses the symplectic coordinates
//! `a(X) = omega_b(X, D)/Delta`, `b(X) = -omega_b(X, E)/Delta` along the generalized kernel
//! and `omega_b(X, Psi*)/kappa` along the eigenfunction.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::ops::{Add, Mul, Sub};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{sigma_band_edge, Charge2, DeltaConvention, ModelParams, RadialExpSum};
use crate::spectral::{
    kappa_closed_form, l_minus_lambda, quadratic_form_l, resolvent_apply, PsiConvention,
    Projector, Source, SpectralPoint,
};

const I: Complex64 = Complex64::new(0.0, 1.0);
const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Distance from `1/sqrt(2)` below which the coefficient pipeline refuses to run.
pub const PIPELINE_GUARD: f64 = 1e-4;

/// Symmetric bilinear Taylor form `N2(a, b) = (1/2) D^2 g(q_w)[a, b]` of `g(x) = (x . x)^sigma x`.
pub fn n2(a: &Charge2, b: &Charge2, p: &ModelParams) -> Charge2 {
    let s = p.sigma;
    let q = p.q_omega();
    let x = Charge2::real(q, 0.0);
    let xa = x.pair(a);
    let xb = x.pair(b);
    let ab = a.pair(b);
    let k1 = s * q.powf(2.0 * s - 2.0);
    let k2 = 2.0 * s * (s - 1.0) * q.powf(2.0 * s - 4.0);
    (x * ab + *b * xa + *a * xb) * k1 + x * (k2 * xa * xb)
}

/// Symmetric trilinear Taylor form `N3(a, b, c) = (1/6) D^3 g(q_w)[a, b, c]`.
pub fn n3(a: &Charge2, b: &Charge2, c: &Charge2, p: &ModelParams) -> Charge2 {
    let s = p.sigma;
    let q = p.q_omega();
    let x = Charge2::real(q, 0.0);
    let ss = q * q;
    let (xa, xb, xc) = (x.pair(a), x.pair(b), x.pair(c));
    let (ab, ac, bc) = (a.pair(b), a.pair(c), b.pair(c));
    let t1 = x * (2.0 * (s - 2.0) * ss.powf(s - 3.0) * xa * xb * xc)
        + (x * (ac * xb) + x * (xa * bc) + *c * (xa * xb)) * ss.powf(s - 2.0);
    let t2 = (x * ab + *b * xa + *a * xb) * (2.0 * (s - 1.0) * ss.powf(s - 2.0) * xc)
        + (*c * ab + *b * ac + *a * bc) * ss.powf(s - 1.0);
    (t1 * (4.0 * s * (s - 1.0)) + t2 * (2.0 * s)) * (1.0 / 6.0)
}

/// Polynomial `sum c_ij z^i conj(z)^j` of total degree at most three.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Poly2 {
    pub c: [[Complex64; 4]; 4],
}

impl Poly2 {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn monomial(i: usize, j: usize, v: Complex64) -> Self {
        let mut p = Self::zero();
        p.set(i, j, v);
        p
    }

    pub fn linear(c10: Complex64, c01: Complex64) -> Self {
        let mut p = Self::zero();
        p.set(1, 0, c10);
        p.set(0, 1, c01);
        p
    }

    pub fn quadratic(c20: Complex64, c11: Complex64, c02: Complex64) -> Self {
        let mut p = Self::zero();
        p.set(2, 0, c20);
        p.set(1, 1, c11);
        p.set(0, 2, c02);
        p
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        if i + j > 3 {
            ZERO
        } else {
            self.c[i][j]
        }
    }

    pub fn set(&mut self, i: usize, j: usize, v: Complex64) {
        assert!(i + j <= 3, "monomial degree {} exceeds three", i + j);
        self.c[i][j] = v;
    }

    pub fn scale(&self, s: Complex64) -> Self {
        let mut out = *self;
        for row in out.c.iter_mut() {
            for v in row.iter_mut() {
                *v *= s;
            }
        }
        out
    }

    /// Homogeneous part of degree `k`.
    pub fn part(&self, k: usize) -> Self {
        let mut out = Self::zero();
        for i in 0..=k.min(3) {
            out.c[i][k - i] = self.get(i, k - i);
        }
        out
    }

    pub fn dz(&self) -> Self {
        let mut out = Self::zero();
        for i in 1..4 {
            for j in 0..4 - i {
                out.c[i - 1][j] = self.c[i][j] * i as f64;
            }
        }
        out
    }

    pub fn dzbar(&self) -> Self {
        let mut out = Self::zero();
        for i in 0..4 {
            for j in 1..4 - i {
                out.c[i][j - 1] = self.c[i][j] * j as f64;
            }
        }
        out
    }

    /// The polynomial `conj(P(z, conj z))` written in `(z, conj z)`.
    pub fn conj_swap(&self) -> Self {
        let mut out = Self::zero();
        for i in 0..4 {
            for j in 0..4 - i {
                out.c[j][i] = self.c[i][j].conj();
            }
        }
        out
    }

    pub fn eval(&self, z: Complex64) -> Complex64 {
        let zb = z.conj();
        let mut acc = ZERO;
        for i in 0..4 {
            for j in 0..4 - i {
                acc += self.c[i][j] * z.powu(i as u32) * zb.powu(j as u32);
            }
        }
        acc
    }

    pub fn max_abs(&self) -> f64 {
        let mut m: f64 = 0.0;
        for i in 0..4 {
            for j in 0..4 - i {
                m = m.max(self.c[i][j].norm());
            }
        }
        m
    }
}

impl Add for Poly2 {
    type Output = Poly2;
    fn add(self, o: Poly2) -> Poly2 {
        let mut out = self;
        for i in 0..4 {
            for j in 0..4 - i {
                out.c[i][j] += o.c[i][j];
            }
        }
        out
    }
}

impl Sub for Poly2 {
    type Output = Poly2;
    fn sub(self, o: Poly2) -> Poly2 {
        self + o.scale(Complex64::new(-1.0, 0.0))
    }
}

/// Product truncated at degree three.
impl Mul for Poly2 {
    type Output = Poly2;
    fn mul(self, o: Poly2) -> Poly2 {
        let mut out = Poly2::zero();
        for i in 0..4 {
            for j in 0..4 - i {
                if self.c[i][j] == ZERO {
                    continue;
                }
                for k in 0..4 - i - j {
                    for l in 0..4 - i - j - k {
                        out.c[i + k][j + l] += self.c[i][j] * o.c[k][l];
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Conventions {
    pub psi: PsiConvention,
    pub delta: DeltaConvention,
}

impl Conventions {
    pub fn literal() -> Self {
        Self {
            psi: PsiConvention::Literal,
            delta: DeltaConvention::HalfSquaredNorm,
        }
    }
}

/// Coefficients of one modulation equation (`w` or `gamma`): polynomial part and `q_f` couplings.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ModulationBlock {
    pub poly: Poly2,
    /// Vector multiplying `z q_f` (bilinear pairing).
    pub prime10: Charge2,
    /// Vector multiplying `conj(z) q_f`.
    pub prime01: Charge2,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ZBlock {
    /// `Z_ij` for `2 <= i + j <= 3`; the cubic ones other than `Z_21` are reconstructed.
    pub poly: Poly2,
    pub prime10: Charge2,
    pub prime01: Charge2,
    /// `Z'_ij` for `i + j = 3`, from substituting the quadratic `f` profile.
    pub prime_cubic: Poly2,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct HfBlock {
    /// Charge vectors of the quadratic sources before projection.
    pub f20: Charge2,
    pub f11: Charge2,
    pub f02: Charge2,
    /// Projected charge vectors `F - 8 pi sqrt(w) (P^d F G_w, G_w)`.
    pub h20: Charge2,
    pub h11: Charge2,
    pub h02: Charge2,
    /// The closed expansion of `H_20` in terms of `sigma`, `w`, `Delta` and `kappa`.
    pub h20_explicit: Charge2,
    pub h20_explicit_gap: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ABlock {
    pub a20: RadialExpSum,
    pub a11: RadialExpSum,
    pub a02: RadialExpSum,
    /// Residuals of `(L - i xi (i - j)) a_ij + P^c S_ij = 0`.
    pub residuals: [f64; 3],
    /// Pointwise distance between `a02` and `conj(a20)`, relative to `|a20|`.
    pub conj_mismatch: f64,
}

impl ABlock {
    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().cloned().fold(0.0, f64::max)
    }
}

/// Scalar coefficients of a near-identity change of variables with the residual of its system.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CanonicalSet {
    pub poly: Poly2,
    pub residual: f64,
}

/// Function-valued coefficients that remove the `z q_f`, `conj(z) q_f` couplings.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PrimeSolutions {
    pub b10: RadialExpSum,
    pub b01: RadialExpSum,
    pub d10: RadialExpSum,
    pub d01: RadialExpSum,
    pub residual: f64,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct KReport {
    /// `K` from `iK = Z21 + Z'21 + (i/xi) Z20 Z11 - (i/xi) Z11^2 - (2i/(3 xi)) Z02^2`.
    pub k: Complex64,
    /// `K` from the composition of the changes of variables, with `|Z11|^2` and `|Z02|^2`.
    pub k_composed: Complex64,
    pub re_ik: f64,
    pub re_zprime21: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NormalFormCoeffs {
    pub params: ModelParams,
    pub conventions: Conventions,
    pub xi: f64,
    pub kappa: Complex64,
    pub delta: f64,
    pub q_psi: Charge2,
    pub omega: ModulationBlock,
    pub gamma: ModulationBlock,
    pub z: ZBlock,
    pub hf: HfBlock,
    pub a: ABlock,
    pub b: CanonicalSet,
    pub c: CanonicalSet,
    pub d: CanonicalSet,
    pub k: KReport,
    pub primes: PrimeSolutions,
}

/// Shared ingredients of every coefficient.
struct Base {
    p: ModelParams,
    proj: Projector,
    psi: RadialExpSum,
    star: RadialExpSum,
    kappa: Complex64,
    delta: f64,
    xi: f64,
    q_psi: Charge2,
    q_star: Charge2,
    q_e: Charge2,
    q_d: Charge2,
    n20: Charge2,
    n11: Charge2,
    n02: Charge2,
}

fn require_pipeline(p: &ModelParams) -> Result<()> {
    p.require_eigen_regime()?;
    if p.sigma < FRAC_1_SQRT_2 + PIPELINE_GUARD {
        return Err(Error::Conditioning(format!(
            "sigma = {} inside the guard band of width {PIPELINE_GUARD:e} above 1/sqrt(2)",
            p.sigma
        )));
    }
    Ok(())
}

impl Base {
    fn new(p: &ModelParams, conv: Conventions) -> Result<Self> {
        require_pipeline(p)?;
        let proj = Projector::new(p, conv.psi, conv.delta)?;
        let psi = proj.psi.clone().expect("eigen regime checked");
        let star = proj.psi_star.clone().expect("eigen regime checked");
        let q_psi = psi.charge();
        let q_star = star.charge();
        Ok(Self {
            p: *p,
            kappa: proj.kappa,
            delta: proj.delta,
            xi: proj.xi,
            q_e: proj.e.charge(),
            q_d: proj.d.charge(),
            n20: n2(&q_psi, &q_psi, p),
            n11: n2(&q_psi, &q_star, p),
            n02: n2(&q_star, &q_star, p),
            psi,
            star,
            q_psi,
            q_star,
            proj,
        })
    }

    fn nu(&self) -> f64 {
        self.p.nu
    }

    /// `a(X)`, `b(X)` and the `Psi` coordinate of a nonlinear charge source with `J c = nu N`.
    fn quad_poly(&self, target: &Charge2, scale: Complex64) -> Poly2 {
        Poly2::quadratic(
            self.n20.pair(target) * scale,
            self.n11.pair(target) * scale * 2.0,
            self.n02.pair(target) * scale,
        )
    }

    fn quadratic(&self) -> (Poly2, Poly2, Poly2) {
        let nu = self.nu();
        let om = self.quad_poly(&self.q_e, Complex64::new(-nu / self.delta, 0.0));
        let ga = self.quad_poly(&self.q_d, Complex64::new(nu / self.delta, 0.0));
        let z = self.quad_poly(&self.q_star, nu / self.kappa);
        (om, ga, z)
    }

    fn primes(&self) -> ([Charge2; 2], [Charge2; 2], [Charge2; 2]) {
        let nu = self.nu();
        let p = &self.p;
        let fo = -2.0 * nu / self.delta;
        let fg = 2.0 * nu / self.delta;
        let fz = 2.0 * nu / self.kappa;
        (
            [
                n2(&self.q_psi, &self.q_e, p) * fo,
                n2(&self.q_star, &self.q_e, p) * fo,
            ],
            [
                n2(&self.q_psi, &self.q_d, p) * fg,
                n2(&self.q_star, &self.q_d, p) * fg,
            ],
            [self.n11 * fz, self.n02 * fz],
        )
    }

    fn sources(&self) -> [Charge2; 3] {
        let nu = self.nu();
        [
            self.n20.j() * -nu,
            self.n11.j() * (-2.0 * nu),
            self.n02.j() * -nu,
        ]
    }

    /// `F - 8 pi sqrt(w) (P^d (F G_w), G_w)` componentwise.
    fn projected_charge(&self, f: Charge2) -> Result<Charge2> {
        let w = self.p.omega;
        let rate = Complex64::new(w.sqrt(), 0.0);
        let x = RadialExpSum::single(f, rate, 0);
        let pd = self.proj.pd(&Source::function(x))?;
        let g1 = RadialExpSum::single(Charge2::real(1.0, 0.0), rate, 0);
        let g2 = RadialExpSum::single(Charge2::real(0.0, 1.0), rate, 0);
        let corr = Charge2::new(pd.bilinear(&g1)?, pd.bilinear(&g2)?);
        Ok(f - corr * (8.0 * PI * w.sqrt()))
    }

    fn hf(&self) -> Result<HfBlock> {
        let [f20, f11, f02] = self.sources();
        let h20 = self.projected_charge(f20)?;
        let h20_explicit = h20_explicit(&self.p, f20, self.delta);
        Ok(HfBlock {
            f20,
            f11,
            f02,
            h20,
            h11: self.projected_charge(f11)?,
            h02: self.projected_charge(f02)?,
            h20_explicit,
            h20_explicit_gap: (h20 - h20_explicit).norm(),
        })
    }

    fn a_block(&self) -> Result<ABlock> {
        let srcs = self.sources();
        let lambdas = [
            I * (2.0 * self.xi),
            Complex64::new(0.0, 0.0),
            I * (-2.0 * self.xi),
        ];
        let mut sols = Vec::with_capacity(3);
        let mut residuals = [0.0; 3];
        for k in 0..3 {
            let src = Source::charge(srcs[k]);
            let pt = SpectralPoint::plus(lambdas[k]);
            let a = self.proj.reduced_resolvent(pt, &src)?.scale(Complex64::new(-1.0, 0.0));
            let pcs = self.proj.pc(&src)?;
            let back = l_minus_lambda(&a, lambdas[k], &self.p);
            let mut res = (back.c + pcs.c).norm() / srcs[k].norm().max(1e-300);
            let scale = pcs.f.amp_scale().max(srcs[k].norm());
            for r in SAMPLE_RADII {
                let v = (back.f.eval(r) + pcs.f.eval(r)).norm();
                res = res.max(v * r / scale);
            }
            residuals[k] = res;
            sols.push(a);
        }
        let a02 = sols.pop().expect("three solutions");
        let a11 = sols.pop().expect("three solutions");
        let a20 = sols.pop().expect("three solutions");
        let conj20 = a20.conj();
        let mut mismatch: f64 = 0.0;
        let mut size: f64 = 0.0;
        for r in SAMPLE_RADII {
            mismatch = mismatch.max((a02.eval(r) - conj20.eval(r)).norm() * r);
            size = size.max(a20.eval(r).norm() * r);
        }
        Ok(ABlock {
            a20,
            a11,
            a02,
            residuals,
            conj_mismatch: mismatch / size.max(1e-300),
        })
    }

    /// Cubic parts of `w'`, `gamma'` and `z'` from `N3` and the `w`-dependence of the frame.
    fn cubic(&self, om2: &Poly2, ga2: &Poly2) -> Result<(Poly2, Poly2, Poly2)> {
        let p = &self.p;
        let nu = self.nu();
        let (qa, qb) = (&self.q_psi, &self.q_star);
        let t30 = n3(qa, qa, qa, p);
        let t21 = n3(qa, qa, qb, p) * 3.0;
        let t12 = n3(qa, qb, qb, p) * 3.0;
        let t03 = n3(qb, qb, qb, p);
        let cubic_pair = |target: &Charge2, s: Complex64| {
            let mut out = Poly2::zero();
            out.set(3, 0, t30.pair(target) * s);
            out.set(2, 1, t21.pair(target) * s);
            out.set(1, 2, t12.pair(target) * s);
            out.set(0, 3, t03.pair(target) * s);
            out
        };
        let dl = self.delta;
        let e = &self.proj.e;
        let d = &self.proj.d;
        let e_prime = p
            .soliton_d1()
            .map_amps([[ZERO, ZERO], [Complex64::new(1.0, 0.0), ZERO]]);
        let d_prime = p.soliton_d2();
        let jpsi = self.psi.apply_j();
        let jstar = self.star.apply_j();
        let psi_prime = self.psi.d_omega_sqrt_rates(p.omega);
        let star_prime = psi_prime.flip();

        let b_j = Poly2::linear(-jpsi.omega_b(e)? / dl, -jstar.omega_b(e)? / dl);
        let a_j = Poly2::linear(jpsi.omega_b(d)? / dl, jstar.omega_b(d)? / dl);
        let b_dp = Poly2::linear(
            -self.psi.omega_b(&e_prime)? / dl,
            -self.star.omega_b(&e_prime)? / dl,
        );
        let a_dp = Poly2::linear(
            self.psi.omega_b(&d_prime)? / dl,
            self.star.omega_b(&d_prime)? / dl,
        );
        let om3 = cubic_pair(&self.q_e, Complex64::new(-nu / dl, 0.0))
            + *ga2 * b_j
            + *om2 * b_dp;
        let ga3 = cubic_pair(&self.q_d, Complex64::new(nu / dl, 0.0))
            + *ga2 * a_j
            + *om2 * a_dp;
        let k = self.kappa;
        let z_frame = Poly2::linear(
            psi_prime.omega_b(&self.star)? / k,
            star_prime.omega_b(&self.star)? / k,
        );
        let z_rot = Poly2::linear(jpsi.omega_b(&self.star)? / k, jstar.omega_b(&self.star)? / k);
        let z3 = cubic_pair(&self.q_star, nu / k) - *om2 * z_frame + *ga2 * z_rot;
        Ok((om3, ga3, z3))
    }

    /// Solve `(L - i mu) u = P^c S` for the swapped `q_f` coupling and map back.
    fn prime_solution(&self, v: Charge2, mu: f64) -> Result<RadialExpSum> {
        let swap = [
            [ZERO, Complex64::new(1.0, 0.0)],
            [Complex64::new(1.0, 0.0), ZERO],
        ];
        let src = Source::charge(-Charge2::new(v.q2.conj(), v.q1.conj()));
        let u = self
            .proj
            .reduced_resolvent(SpectralPoint::new(I * mu), &src)?;
        Ok(u.map_amps(swap))
    }

    /// `max |v . q_f + i mu (f, b') + Q_L(f, b')|` over continuous-subspace test functions.
    fn prime_residual(&self, v: Charge2, mu: f64, b: &RadialExpSum) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for f in self.test_functions()? {
            let qf = f.charge();
            let val = v.pair(&qf) + I * mu * f.l2_inner(b)? + quadratic_form_l(&f, b, &self.p)?;
            let scale = v.norm() * qf.norm() + f.l2_norm_sq()?.sqrt();
            worst = worst.max(val.norm() / scale.max(1e-300));
        }
        Ok(worst)
    }

    /// Deterministic elements of the continuous subspace that lie in the operator domain.
    fn test_functions(&self) -> Result<Vec<RadialExpSum>> {
        let mut out = Vec::new();
        let seeds = [
            (Complex64::new(1.0, 0.3), Complex64::new(-0.4, 0.8), 1.3, 0u32),
            (Complex64::new(0.2, -1.0), Complex64::new(0.9, 0.1), 0.8, 1),
            (Complex64::new(-0.7, 0.0), Complex64::new(0.0, 0.5), 2.1, 0),
        ];
        for (a, b, rate, pow) in seeds {
            let g = RadialExpSum::single(Charge2::new(a, b), Complex64::new(rate, 0.0), pow);
            let u = resolvent_apply(
                SpectralPoint::new(Complex64::new(0.7, 0.0)),
                &Source::function(g),
                &self.p,
            )?;
            out.push(self.proj.pc_fn(&u)?);
        }
        Ok(out)
    }
}

const SAMPLE_RADII: [f64; 5] = [0.05, 0.3, 1.0, 2.5, 6.0];

/// The explicit expansion of `H_20` written with the literal eigenfunction coefficient.
pub fn h20_explicit(p: &ModelParams, f: Charge2, delta: f64) -> Charge2 {
    let s = p.sigma;
    let w = p.omega;
    let xi = p.xi();
    let beta = ((1.0 - s * s).sqrt() - 1.0) / s;
    let kap = kappa_closed_form(p);
    let u = 1.0 / ((w - xi).sqrt() + w.sqrt());
    let v = beta / ((w + xi).sqrt() + w.sqrt());
    let t1 = (u - v) * (u - v);
    let t2 = (u + v) * (u + v);
    let shift = f.q1 * p.q_omega() / (16.0 * PI * delta * w.powf(1.5)) * (1.0 / s - 1.0);
    let corr = Charge2::new(-f.q2 * t1, f.q1 * t2) * (w.sqrt() / kap);
    Charge2::new(f.q1 - shift, f.q2) + corr
}

fn solve_canonical(
    xi: f64,
    quad: &Poly2,
    cubic: &Poly2,
    z2: &Poly2,
    resonant: &[(usize, usize)],
) -> CanonicalSet {
    // Coefficients of a scalar variable B(z) with B' + (lower terms) free of non-resonant monomials.
    let mut poly = Poly2::zero();
    for (i, j) in [(2usize, 0usize), (1, 1), (0, 2)] {
        if resonant.contains(&(i, j)) {
            continue;
        }
        let m = (i as f64) - (j as f64);
        if m != 0.0 {
            poly.set(i, j, -quad.get(i, j) / (I * xi * m));
        }
    }
    let b2 = poly.part(2);
    let x = *cubic + b2.dz() * *z2 + b2.dzbar() * z2.conj_swap();
    for (i, j) in [(3usize, 0usize), (2, 1), (1, 2), (0, 3)] {
        let m = (i as f64) - (j as f64);
        poly.set(i, j, -x.get(i, j) / (I * xi * m));
    }
    let mut residual: f64 = 0.0;
    for (i, j) in [(2usize, 0usize), (1, 1), (0, 2), (3, 0), (2, 1), (1, 2), (0, 3)] {
        if resonant.contains(&(i, j)) {
            continue;
        }
        let m = (i as f64) - (j as f64);
        let lhs = if i + j == 2 { quad.get(i, j) } else { x.get(i, j) };
        let r = lhs + I * xi * m * poly.get(i, j);
        residual = residual.max(r.norm() / lhs.norm().max(1.0));
    }
    CanonicalSet { poly, residual }
}

/// `c` coefficients of `z1 = z + C(z)` and the resonant cubic `X_21 = iK`.
fn solve_c(xi: f64, z2: &Poly2, z3: &Poly2) -> (CanonicalSet, Complex64) {
    let mut poly = Poly2::zero();
    for (i, j) in [(2usize, 0usize), (1, 1), (0, 2)] {
        let m = (i as f64) - (j as f64) - 1.0;
        poly.set(i, j, -z2.get(i, j) / (I * xi * m));
    }
    let c2 = poly.part(2);
    let x = *z3 + c2.dz() * *z2 + c2.dzbar() * z2.conj_swap();
    for (i, j) in [(3usize, 0usize), (1, 2), (0, 3)] {
        let m = (i as f64) - (j as f64) - 1.0;
        poly.set(i, j, -x.get(i, j) / (I * xi * m));
    }
    let mut residual: f64 = 0.0;
    for (i, j) in [(2usize, 0usize), (1, 1), (0, 2), (3, 0), (1, 2), (0, 3)] {
        let m = (i as f64) - (j as f64) - 1.0;
        let lhs = if i + j == 2 { z2.get(i, j) } else { x.get(i, j) };
        let r = lhs + I * xi * m * poly.get(i, j);
        residual = residual.max(r.norm() / lhs.norm().max(1.0));
    }
    (CanonicalSet { poly, residual }, x.get(2, 1))
}

impl NormalFormCoeffs {
    pub fn compute(p: &ModelParams, conv: Conventions) -> Result<Self> {
        let base = Base::new(p, conv)?;
        let (om2, ga2, z2) = base.quadratic();
        let (op, gp, zp) = base.primes();
        let hf = base.hf()?;
        let a = base.a_block()?;
        let qa20 = a.a20.charge();
        let qa11 = a.a11.charge();
        let qa02 = a.a02.charge();
        let mut zpc = Poly2::zero();
        zpc.set(3, 0, qa20.pair(&zp[0]));
        zpc.set(2, 1, qa11.pair(&zp[0]) + qa20.pair(&zp[1]));
        zpc.set(1, 2, qa02.pair(&zp[0]) + qa11.pair(&zp[1]));
        zpc.set(0, 3, qa02.pair(&zp[1]));
        let (om3, ga3, z3) = base.cubic(&om2, &ga2)?;
        let xi = base.xi;

        let b = solve_canonical(xi, &om2, &om3, &z2, &[(1, 1)]);
        let d = solve_canonical(xi, &ga2, &ga3, &z2, &[(1, 1)]);
        let (c, ik_composed) = solve_c(xi, &z2, &(z3 + zpc));
        let b_res = b.residual.max(om2.get(1, 1).norm() / om2.max_abs().max(1e-300));

        let (z20, z11, z02) = (z2.get(2, 0), z2.get(1, 1), z2.get(0, 2));
        let ik = z3.get(2, 1) + zpc.get(2, 1) + I / xi * z20 * z11
            - I / xi * z11 * z11
            - 2.0 * I / (3.0 * xi) * z02 * z02;
        let k = KReport {
            k: -I * ik,
            k_composed: -I * ik_composed,
            re_ik: ik.re,
            re_zprime21: zpc.get(2, 1).re,
        };

        let b10 = base.prime_solution(op[0], xi)?;
        let b01 = base.prime_solution(op[1], -xi)?;
        let d10 = base.prime_solution(gp[0], xi)?;
        let d01 = base.prime_solution(gp[1], -xi)?;
        let residual = base
            .prime_residual(op[0], xi, &b10)?
            .max(base.prime_residual(op[1], -xi, &b01)?)
            .max(base.prime_residual(gp[0], xi, &d10)?)
            .max(base.prime_residual(gp[1], -xi, &d01)?);

        Ok(Self {
            params: *p,
            conventions: conv,
            xi,
            kappa: base.kappa,
            delta: base.delta,
            q_psi: base.q_psi,
            omega: ModulationBlock {
                poly: om2 + om3,
                prime10: op[0],
                prime01: op[1],
            },
            gamma: ModulationBlock {
                poly: ga2 + ga3,
                prime10: gp[0],
                prime01: gp[1],
            },
            z: ZBlock {
                poly: z2 + z3,
                prime10: zp[0],
                prime01: zp[1],
                prime_cubic: zpc,
            },
            hf,
            a,
            b: CanonicalSet {
                poly: b.poly,
                residual: b_res,
            },
            c,
            d,
            k,
            primes: PrimeSolutions {
                b10,
                b01,
                d10,
                d01,
                residual,
            },
        })
    }

    pub fn standard(p: &ModelParams) -> Result<Self> {
        Self::compute(p, Conventions::default())
    }

    /// `Re(q_a11 . conj(Z'10))`, which vanishes by self-adjointness.
    pub fn a11_cancellation(&self) -> f64 {
        let q = self.a.a11.charge();
        q.hermitian(&self.z.prime10).re
    }

    /// The literal closed form `(i/(3 xi)) Z02` of the third quadratic `c` coefficient.
    pub fn c02_literal(&self) -> Complex64 {
        I / (3.0 * self.xi) * self.z.poly.get(0, 2)
    }
}

/// Quadratic and cubic `Z` coefficients plus the `q_f` couplings.
pub fn z_coeffs(p: &ModelParams, conv: Conventions) -> Result<ZBlock> {
    Ok(NormalFormCoeffs::compute(p, conv)?.z)
}

pub fn omega_gamma_coeffs(
    p: &ModelParams,
    conv: Conventions,
) -> Result<(ModulationBlock, ModulationBlock)> {
    let nf = NormalFormCoeffs::compute(p, conv)?;
    Ok((nf.omega, nf.gamma))
}

pub fn hf_coeffs(p: &ModelParams, conv: Conventions) -> Result<HfBlock> {
    Base::new(p, conv)?.hf()
}

pub fn a_coeffs(p: &ModelParams, conv: Conventions) -> Result<ABlock> {
    Base::new(p, conv)?.a_block()
}

pub fn k_coefficient(p: &ModelParams, conv: Conventions) -> Result<KReport> {
    Ok(NormalFormCoeffs::compute(p, conv)?.k)
}

pub fn c_coeffs(p: &ModelParams, conv: Conventions) -> Result<CanonicalSet> {
    Ok(NormalFormCoeffs::compute(p, conv)?.c)
}

pub fn b_coeffs(p: &ModelParams, conv: Conventions) -> Result<CanonicalSet> {
    Ok(NormalFormCoeffs::compute(p, conv)?.b)
}

pub fn d_coeffs(p: &ModelParams, conv: Conventions) -> Result<CanonicalSet> {
    Ok(NormalFormCoeffs::compute(p, conv)?.d)
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ZPrime21 {
    /// Assembled from the resolvent solutions `a_20`, `a_11` and the couplings `Z'10`, `Z'01`.
    pub assembled: Complex64,
    /// `(128 pi w^{3/2} |q_w|^{4 sigma - 2} / (i kappa |d|^2)) sigma^2 (1 - beta)^2 f(sigma)`.
    pub closed_form: f64,
    pub relative_gap: f64,
}

/// `Z'_21` only: cheaper than the whole pipeline.
pub fn zprime21_assembled(p: &ModelParams, conv: Conventions) -> Result<Complex64> {
    let base = Base::new(p, conv)?;
    let a = base.a_block()?;
    let (_, _, zp) = base.primes();
    Ok(a.a11.charge().pair(&zp[0]) + a.a20.charge().pair(&zp[1]))
}

pub fn zprime21(p: &ModelParams, conv: Conventions) -> Result<ZPrime21> {
    p.require_band_regime()?;
    let assembled = zprime21_assembled(p, conv)?;
    let closed_form = zprime21_closed_form(p)?;
    Ok(ZPrime21 {
        assembled,
        closed_form,
        relative_gap: (assembled.re - closed_form).abs() / closed_form.abs().max(1e-300),
    })
}

/// The closed-form route to `Re Z'_21` through `f(sigma)`.
pub fn zprime21_closed_form(p: &ModelParams) -> Result<f64> {
    let s = p.sigma;
    let w = p.omega;
    let xi = p.xi();
    let beta = ((1.0 - s * s).sqrt() - 1.0) / s;
    let sp = (w + 2.0 * xi).sqrt();
    let sm = (2.0 * xi - w).sqrt();
    let sw = w.sqrt();
    let d = 2.0 * I * (2.0 * s + 1.0) * w + Complex64::new(2.0 * (s + 1.0) * sw * sm, 0.0)
        - 2.0 * I * (s + 1.0) * sw * sp
        - Complex64::new(2.0 * sp * sm, 0.0);
    let kap = kappa_closed_form(p);
    let pref = 128.0 * PI * w.powf(1.5) * p.q_omega().powf(4.0 * s - 2.0) / (I * kap * d.norm_sqr());
    let v = pref * s * s * (1.0 - beta).powi(2) * f_sigma(s)?;
    Ok(v.re)
}

/// The displayed function `f(sigma)` of the dissipation lemma, evaluated literally.
pub fn f_sigma(sigma: f64) -> Result<f64> {
    let s = sigma;
    if !(s > FRAC_1_SQRT_2 && s < sigma_band_edge()) {
        return Err(Error::Domain {
            name: "sigma",
            value: s,
            allowed: "(1/sqrt(2), (sqrt(3)+1)/(2 sqrt(2)))".into(),
        });
    }
    let sq = (1.0 - s * s).sqrt();
    let root = |x: f64, what: &str| -> Result<f64> {
        if x < 0.0 {
            Err(Error::Conditioning(format!(
                "negative square-root argument {x:.3e} in {what} at sigma = {s}"
            )))
        } else {
            Ok(x.sqrt())
        }
    };
    let r1 = root(1.0 - 2.0 * s * sq, "1 - 2 s S")?;
    let r2 = root(1.0 + 2.0 * s * sq, "1 + 2 s S")?;
    let r3 = root(-1.0 + 4.0 * s * sq, "-1 + 4 s S")?;
    let r4 = root(1.0 + 4.0 * s * sq, "1 + 4 s S")?;
    let r5 = root(-1.0 + 16.0 * s * s - 16.0 * s.powi(4), "-1 + 16 s^2 - 16 s^4")?;
    let den = 1.0 / r1 - (sq - 1.0).powi(2) / (s * s * r2);
    let b1 = (1.0 / (1.0 + r1) - (sq - 1.0) / (s + s * r2)).powi(2);
    let b2 = (1.0 / (1.0 + r1) + (sq - 1.0) / (s + s * r2)).powi(2);
    let lead = 1.0 + (sq - 1.0) / s;
    let t1 = ((2.0 * (1.0 + s).powi(2) + 2.0 * s * sq) * r3 - (2.0 + 3.0 * s) * r3 * r4
        + lead * ((-1.0 - s) * r5 + (1.0 + s + 2.0 * s * sq) * r3))
        * (1.0 / (2.0 * s - 1.0) - b1 / den);
    let t2 = (1.0 + s
        + (1.0 + s - 2.0 * s * sq) * r4
        + lead * (-1.0 - 2.0 * s + (-4.0 * s - 4.0 * s * s) * sq + (1.0 + 2.0 * s + 2.0 * s * sq) * r4))
        * (1.0 - b2 / den);
    Ok(t1 + t2)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SigmaStar {
    pub sigma_hat: f64,
    /// True when every grid value was negative up to the band edge minus `tol`.
    pub all_negative: bool,
    /// First grid location where `Re Z'_21 >= 0`, refined by bisection.
    pub sign_change: Option<f64>,
    /// `(sigma, Re Z'_21)` pairs backing the claim.
    pub grid: Vec<(f64, f64)>,
}

/// Largest `sigma_hat` such that `Re Z'_21 < 0` on a refining grid of `(1/sqrt(2), sigma_hat]`.
pub fn sigma_star(omega: f64, tol: f64, conv: Conventions) -> Result<SigmaStar> {
    if !(omega > 0.0) {
        return Err(Error::domain("omega", omega, "(0, inf)"));
    }
    if !(tol > 0.0 && tol < 0.1) {
        return Err(Error::domain("tol", tol, "(0, 0.1)"));
    }
    let lo = FRAC_1_SQRT_2 + 2.0 * PIPELINE_GUARD;
    let hi = sigma_band_edge() - tol;
    let eval = |s: f64| -> Result<f64> {
        let p = ModelParams::new(s, 1.0, omega)?;
        Ok(zprime21_assembled(&p, conv)?.re)
    };
    let n = 96;
    let mut pts: Vec<f64> = (0..n)
        .map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64)
        .collect();
    // Refine near both ends where the sign is most delicate.
    for k in 1..16 {
        pts.push(lo + (pts[1] - lo) * k as f64 / 16.0);
        pts.push(pts[n - 2] + (hi - pts[n - 2]) * k as f64 / 16.0);
    }
    pts.sort_by(|a, b| a.total_cmp(b));
    let vals: Vec<Result<f64>> = pts.par_iter().map(|&s| eval(s)).collect();
    let mut grid = Vec::with_capacity(pts.len());
    for (s, v) in pts.iter().zip(vals) {
        grid.push((*s, v?));
    }
    match grid.iter().position(|&(_, v)| v >= 0.0) {
        None => Ok(SigmaStar {
            sigma_hat: hi,
            all_negative: true,
            sign_change: None,
            grid,
        }),
        Some(0) => Err(Error::SignAnomaly(format!(
            "Re Z'_21 = {:.3e} is already nonnegative at sigma = {lo}",
            grid[0].1
        ))),
        Some(k) => {
            let (mut a, mut b) = (grid[k - 1].0, grid[k].0);
            while b - a > tol * 1e-3 {
                let m = 0.5 * (a + b);
                if eval(m)? < 0.0 {
                    a = m;
                } else {
                    b = m;
                }
            }
            Ok(SigmaStar {
                sigma_hat: a,
                all_negative: false,
                sign_change: Some(b),
                grid: grid[..k].to_vec(),
            })
        }
    }
}

/// Exponent `e` in `K(w) ~ w^e` measured between two frequencies.
pub fn k_scaling_exponent(p: &ModelParams, conv: Conventions, factor: f64) -> Result<Complex64> {
    let k1 = k_coefficient(p, conv)?.k;
    let k2 = k_coefficient(&p.with_omega(p.omega * factor), conv)?.k;
    Ok(Complex64::new(
        (k2.re / k1.re).abs().ln() / factor.ln(),
        (k2.im / k1.im).abs().ln() / factor.ln(),
    ))
}

/// Predicted exponent of `K` in `w` at fixed `sigma`, `nu`.
pub fn k_scaling_prediction(sigma: f64) -> f64 {
    (2.0 * sigma - 1.0) / (2.0 * sigma)
}
