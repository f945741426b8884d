//! Reduced modulation dynamics in canonical variables.
//!
//! The truncated system keeps `w1` constant, rotates `z1` by `i xi(w) z1 + i K(w) |z1|^2 z1`
//! and accumulates `gamma1' = Gamma_11 |z|^2`. Physical variables are recovered through the
//! near-identity changes of variables inverted to first order:
//! `z = z1 - C(z1)`, `w = w1 - B(z)`, `gamma = gamma1 - D(z)`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Charge2, ModelParams, RadialExpSum};
use crate::normalform::{k_scaling_prediction, NormalFormCoeffs, Poly2};
use crate::ode::{integrate, IntegratorStats, StepControl};

const I: Complex64 = Complex64::new(0.0, 1.0);

/// How the cubic coefficient follows the frequency along the flow.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum KMode {
    /// `K(w) = K(w1) (w/w1)^{(2 sigma - 1)/(2 sigma)}`, the exact frequency scaling.
    #[default]
    Updated,
    /// `K` frozen at `w1`.
    Frozen,
}

/// Deterministic smooth perturbation of size `amplitude |z|^4` added to the `z1` and `w1` equations.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ForcingModel {
    pub amplitude: f64,
    pub seed: u64,
}

impl ForcingModel {
    fn phases(&self) -> [f64; 4] {
        // SplitMix64 stream turned into phases and frequencies.
        let mut state = self.seed;
        let mut out = [0.0; 4];
        for v in out.iter_mut() {
            state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
            let mut x = state;
            x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
            x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
            x ^= x >> 31;
            *v = (x >> 11) as f64 / (1u64 << 53) as f64;
        }
        out
    }

    fn z_term(&self, t: f64, y: f64) -> Complex64 {
        let ph = self.phases();
        let arg = 2.0 * PI * ph[0] + (0.5 + ph[1]) * t;
        self.amplitude * y * y * Complex64::new(arg.cos(), (1.3 * arg + ph[2]).sin())
    }

    fn w_term(&self, t: f64, y: f64) -> f64 {
        let ph = self.phases();
        self.amplitude * y * y * (2.0 * PI * ph[3] + 0.7 * t).sin()
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub rtol: f64,
    pub atol: f64,
    pub dt_init: f64,
    pub dt_max: f64,
    pub t_max: f64,
    pub forcing: Option<ForcingModel>,
    pub k_mode: KMode,
    /// Number of logarithmically spaced output times.
    pub n_log: usize,
    /// Length of each dense output window, in periods of `w` oscillation.
    pub dense_periods: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            rtol: 1e-9,
            atol: 1e-12,
            dt_init: 1e-2,
            dt_max: 1.0,
            t_max: 1e3,
            forcing: None,
            k_mode: KMode::Updated,
            n_log: 400,
            dense_periods: 40.0,
        }
    }
}

impl IntegratorConfig {
    fn control(&self) -> StepControl {
        StepControl {
            rtol: self.rtol,
            atol: self.atol,
            dt_init: self.dt_init,
            dt_max: self.dt_max,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.rtol > 0.0 && self.atol > 0.0) {
            return Err(Error::domain("rtol/atol", self.rtol.min(self.atol), "(0, inf)"));
        }
        if !(self.t_max > 0.0) {
            return Err(Error::domain("t_max", self.t_max, "(0, inf)"));
        }
        Ok(())
    }
}

/// Coefficients of the truncated canonical system.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReducedSystem {
    pub sigma: f64,
    /// Conserved canonical frequency `w1`.
    pub omega1: f64,
    pub k_t: Complex64,
    pub gamma11: f64,
    pub b: Poly2,
    pub c: Poly2,
    pub d: Poly2,
    pub k_mode: KMode,
}

impl ReducedSystem {
    pub fn from_coeffs(nf: &NormalFormCoeffs) -> Self {
        Self {
            sigma: nf.params.sigma,
            omega1: nf.params.omega,
            k_t: nf.k.k,
            gamma11: nf.gamma.poly.get(1, 1).re,
            b: nf.b.poly,
            c: nf.c.poly,
            d: nf.d.poly,
            k_mode: KMode::Updated,
        }
    }

    pub fn xi(&self, omega: f64) -> f64 {
        2.0 * self.sigma * (1.0 - self.sigma * self.sigma).sqrt() * omega
    }

    pub fn k(&self, omega: f64) -> Complex64 {
        match self.k_mode {
            KMode::Frozen => self.k_t,
            KMode::Updated => {
                self.k_t * (omega / self.omega1).powf(k_scaling_prediction(self.sigma))
            }
        }
    }

    pub fn z_from_z1(&self, z1: Complex64) -> Complex64 {
        z1 - self.c.eval(z1)
    }

    pub fn z1_from_z(&self, z: Complex64) -> Complex64 {
        z + self.c.eval(z)
    }

    pub fn omega_from_z(&self, z: Complex64) -> f64 {
        self.omega1 - self.b.eval(z).re
    }

    fn check_band(&self, t: f64, omega: f64) -> Result<()> {
        if !(omega > 0.5 * self.omega1 && omega < 1.5 * self.omega1) {
            return Err(Error::Domain {
                name: "omega",
                value: omega,
                allowed: format!(
                    "validity band (0.5, 1.5) x w1 = {} (left at t = {t})",
                    self.omega1
                ),
            });
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ModulationState {
    pub t: f64,
    pub omega: f64,
    pub gamma: f64,
    pub z: Complex64,
    pub z1: Complex64,
    pub y: f64,
    /// `int_0^t w ds + gamma`.
    pub theta: f64,
    /// `w - w_T + gamma'` with `w_T = w1`.
    pub rho: f64,
    /// `arg z1 - int xi(w) ds`, accumulated continuously.
    pub drift: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Trajectory {
    pub system: ReducedSystem,
    pub eps: f64,
    pub y0: f64,
    pub states: Vec<ModulationState>,
    pub stats: IntegratorStats,
    /// Pieces of the full model that the reduced flow leaves out.
    pub omitted: Vec<String>,
}

fn output_times(t_max: f64, n_log: usize, dense: Option<(f64, f64)>) -> Vec<f64> {
    let mut ts = vec![0.0];
    // Powers of ten are always sampled so majorants can be frozen there.
    let mut decade = 1e-2;
    while decade < t_max {
        ts.push(decade);
        decade *= 10.0;
    }
    let t_min = (t_max * 1e-6).min(1e-2);
    let n = n_log.max(2);
    for k in 0..n {
        let f = k as f64 / (n - 1) as f64;
        ts.push(t_min * (t_max / t_min).powf(f));
    }
    if let Some((period, periods)) = dense {
        let width = period * periods;
        let per = 20.0;
        for end in [t_max / 10.0, t_max] {
            let start = (end - width).max(0.0);
            let m = ((end - start) / period * per).ceil() as usize;
            for k in 0..=m {
                ts.push(start + (end - start) * k as f64 / m as f64);
            }
        }
    }
    ts.sort_by(|a, b| a.total_cmp(b));
    ts.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs().max(1.0));
    ts
}

/// Integrate the truncated canonical flow from the physical amplitude `z0` with `|z0| <= eps^{1/2}`.
pub fn integrate_reduced(
    sys: &ReducedSystem,
    z0: Complex64,
    eps: f64,
    cfg: &IntegratorConfig,
) -> Result<Trajectory> {
    cfg.validate()?;
    if !(eps > 0.0) {
        return Err(Error::domain("eps", eps, "(0, inf)"));
    }
    if z0.norm() > eps.sqrt() * (1.0 + 1e-12) {
        return Err(Error::domain(
            "|z0|",
            z0.norm(),
            format!("[0, eps^(1/2)] = [0, {}]", eps.sqrt()),
        ));
    }
    let mut sys = sys.clone();
    sys.k_mode = cfg.k_mode;
    let z1_0 = sys.z1_from_z(z0);
    let period = PI / sys.xi(sys.omega1);
    let times = output_times(cfg.t_max, cfg.n_log, Some((period, cfg.dense_periods)));
    let forcing = cfg.forcing;
    let mut failure: Option<Error> = None;
    let mut exit: Option<(f64, f64)> = None;
    let rhs = |t: f64, s: &[f64; 5]| -> [f64; 5] {
        let z1 = Complex64::new(s[0], s[1]);
        let z = sys.z_from_z1(z1);
        let mut omega = sys.omega_from_z(z);
        if exit.is_none() && sys.check_band(t, omega).is_err() {
            exit = Some((t, omega));
        }
        let y = z1.norm_sqr();
        if let Some(f) = forcing {
            omega += f.w_term(t, y) * t.min(1.0);
        }
        let xi = sys.xi(omega);
        let mut dz1 = I * xi * z1 + I * sys.k(omega) * y * z1;
        if let Some(f) = forcing {
            dz1 += f.z_term(t, y);
        }
        let drift = if y > 0.0 { (dz1 / z1).im - xi } else { 0.0 };
        [
            dz1.re,
            dz1.im,
            sys.gamma11 * z.norm_sqr(),
            omega,
            drift,
        ]
    };
    let mut states = Vec::with_capacity(times.len());
    let start = [z1_0.re, z1_0.im, 0.0, 0.0, 0.0];
    let stats = integrate(rhs, 0.0, start, &times, &cfg.control(), |t, s| {
        let z1 = Complex64::new(s[0], s[1]);
        let z = sys.z_from_z1(z1);
        let omega = sys.omega_from_z(z);
        if failure.is_none() {
            if let Err(e) = sys.check_band(t, omega) {
                failure = Some(e);
            }
        }
        let xi = sys.xi(omega);
        let dz = I * xi * z;
        let d_dot = (sys.d.dz().eval(z) * dz + sys.d.dzbar().eval(z) * dz.conj()).re;
        let gamma = s[2] - sys.d.eval(z).re;
        let gamma_dot = sys.gamma11 * z.norm_sqr() - d_dot;
        states.push(ModulationState {
            t,
            omega,
            gamma,
            z,
            z1,
            y: z1.norm_sqr(),
            theta: s[3] + gamma,
            rho: omega - sys.omega1 + gamma_dot,
            drift: s[4],
        });
    });
    let stats = match stats {
        Ok(s) => s,
        // A stage evaluated outside the band usually explains a non-finite step.
        Err(e) => {
            return Err(match exit.and_then(|(t, w)| sys.check_band(t, w).err()) {
                Some(band) => band,
                None => e,
            })
        }
    };
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(Trajectory {
        y0: z1_0.norm_sqr(),
        system: sys,
        eps,
        states,
        stats,
        omitted: vec![
            "remainders of the modulation equations".into(),
            "function-valued couplings b', d' in the w and gamma transforms".into(),
            "continuous-spectrum components h1 and k1".into(),
        ],
    })
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct YPoint {
    pub t: f64,
    pub y: f64,
}

/// Closed-form solution `y0 / (1 + 2 Im(K) y0 t)` of the unforced equation.
pub fn y_exact(k: Complex64, y0: f64, t: f64) -> f64 {
    y0 / (1.0 + 2.0 * k.im * y0 * t)
}

/// Integrate `y' = 2 Re(iK) y^2 + Y_R` with the optional forcing as `Y_R`.
pub fn integrate_y(k: Complex64, y0: f64, cfg: &IntegratorConfig) -> Result<(Vec<YPoint>, IntegratorStats)> {
    cfg.validate()?;
    if !(y0 >= 0.0) {
        return Err(Error::domain("y0", y0, "[0, inf)"));
    }
    let rate = 2.0 * (I * k).re;
    let forcing = cfg.forcing;
    let times = output_times(cfg.t_max, cfg.n_log, None);
    let mut out = Vec::with_capacity(times.len());
    let stats = integrate(
        |t, s: &[f64; 1]| {
            let mut d = rate * s[0] * s[0];
            if let Some(f) = forcing {
                d += f.w_term(t, s[0].abs().sqrt());
            }
            [d]
        },
        0.0,
        [y0],
        &times,
        &cfg.control(),
        |t, s| out.push(YPoint { t, y: s[0] }),
    )?;
    Ok((out, stats))
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct MajorantRecord {
    pub m0: f64,
    pub m1: f64,
    /// Needs the continuous component, which the reduced flow does not carry.
    pub m2: Option<f64>,
    pub eps: f64,
    pub t: f64,
}

/// `M0(T) = max |w_T - w| (1 + eps t)/eps`, `M1(T) = max |z| ((1 + eps t)/eps)^{1/2}` on `[0, T]`.
pub fn majorants(traj: &[ModulationState], eps: f64, t_freeze: f64) -> Result<MajorantRecord> {
    let upto: Vec<&ModulationState> = traj.iter().filter(|s| s.t <= t_freeze * (1.0 + 1e-12)).collect();
    let last = upto
        .last()
        .ok_or_else(|| Error::domain("T", t_freeze, "covered by the trajectory"))?;
    if last.t < t_freeze * (1.0 - 1e-9) {
        return Err(Error::domain("T", t_freeze, format!("[0, {}]", last.t)));
    }
    let omega_t = last.omega;
    let mut m0: f64 = 0.0;
    let mut m1: f64 = 0.0;
    for s in &upto {
        let w = (1.0 + eps * s.t) / eps;
        m0 = m0.max((omega_t - s.omega).abs() * w);
        m1 = m1.max(s.z.norm() * w.sqrt());
    }
    Ok(MajorantRecord {
        m0,
        m1,
        m2: None,
        eps,
        t: t_freeze,
    })
}

#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct FitQuality {
    /// Relative rms misfit of `1/y` against the fitted line.
    pub y_line_residual: f64,
    pub gamma_r2: f64,
    pub omega_rms: f64,
    pub drift_r2: f64,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct AsymptoticFit {
    pub omega_inf: f64,
    pub k_inf: f64,
    /// `eps k_inf` as fitted from the envelope.
    pub eps_k_inf: f64,
    /// `2 Im(K(w_inf)) y0`.
    pub eps_k_inf_predicted: f64,
    pub delta: f64,
    pub delta_predicted: f64,
    pub b1: f64,
    pub gamma_inf: f64,
    pub z_decay_exponent: f64,
    pub q1: f64,
    pub q2: f64,
    pub a1: f64,
    pub a2: f64,
    pub osc_frequency: f64,
    pub osc_frequency_predicted: f64,
    pub quality: FitQuality,
}

fn least_squares(rows: &[Vec<f64>], rhs: &[f64]) -> Result<(Vec<f64>, f64)> {
    let n = rows.len();
    let m = rows.first().map(|r| r.len()).unwrap_or(0);
    if n < m || m == 0 {
        return Err(Error::Fit(format!("{n} samples for {m} unknowns")));
    }
    let a = DMatrix::from_fn(n, m, |i, j| rows[i][j]);
    let b = DVector::from_column_slice(rhs);
    let svd = a.clone().svd(true, true);
    let x = svd
        .solve(&b, 1e-12)
        .map_err(|e| Error::Fit(format!("least squares failed: {e}")))?;
    let r = &a * &x - &b;
    let rms = (r.norm_squared() / n as f64).sqrt();
    Ok((x.iter().cloned().collect(), rms))
}

/// Slope, intercept and coefficient of determination of a straight-line fit.
pub fn line_fit(x: &[f64], y: &[f64]) -> Result<(f64, f64, f64)> {
    let rows: Vec<Vec<f64>> = x.iter().map(|&v| vec![v, 1.0]).collect();
    let (c, rms) = least_squares(&rows, y)?;
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / y.len() as f64;
    let r2 = if var > 0.0 { 1.0 - rms * rms / var } else { 1.0 };
    Ok((c[0], c[1], r2))
}

struct WindowFit {
    center: f64,
    freq: f64,
    mean: f64,
    amplitude: f64,
    phase: f64,
    rms: f64,
}

fn fit_window(ts: &[f64], vs: &[f64], guess: f64) -> Result<WindowFit> {
    let mean0 = vs.iter().sum::<f64>() / vs.len() as f64;
    let mut crossings = Vec::new();
    for k in 1..vs.len() {
        let (a, b) = (vs[k - 1] - mean0, vs[k] - mean0);
        if a == 0.0 || a * b < 0.0 {
            crossings.push(ts[k - 1] + (ts[k] - ts[k - 1]) * a / (a - b));
        }
    }
    let mut freq = guess;
    if crossings.len() >= 4 {
        let span = crossings[crossings.len() - 1] - crossings[0];
        freq = PI * (crossings.len() - 1) as f64 / span;
    }
    let center = 0.5 * (ts[0] + ts[ts.len() - 1]);
    let solve = |f: f64| -> Result<(Vec<f64>, f64)> {
        let rows: Vec<Vec<f64>> = ts
            .iter()
            .map(|&t| vec![1.0, (f * (t - center)).cos(), (f * (t - center)).sin()])
            .collect();
        least_squares(&rows, vs)
    };
    // Golden-section refinement of the frequency on the least-squares misfit.
    let (mut lo, mut hi) = (freq * 0.99, freq * 1.01);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..60 {
        let m1 = hi - g * (hi - lo);
        let m2 = lo + g * (hi - lo);
        if solve(m1)?.1 < solve(m2)?.1 {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    let freq = 0.5 * (lo + hi);
    let (c, rms) = solve(freq)?;
    Ok(WindowFit {
        center,
        freq,
        mean: c[0],
        amplitude: (c[1] * c[1] + c[2] * c[2]).sqrt(),
        phase: (-c[2]).atan2(c[1]),
        rms,
    })
}

/// Fit the large-time laws of the envelope, phase drift, `gamma` and the `w` oscillation.
pub fn fit_asymptotics(traj: &Trajectory) -> Result<AsymptoticFit> {
    let st = &traj.states;
    if st.len() < 50 {
        return Err(Error::Fit(format!("only {} samples", st.len())));
    }
    let t_end = st[st.len() - 1].t;
    // Envelope: 1/y = (1 + eps k t)/y0 is linear in t.
    let ts: Vec<f64> = st.iter().map(|s| s.t).collect();
    let inv_y: Vec<f64> = st.iter().map(|s| 1.0 / s.y).collect();
    let (slope, intercept, _) = line_fit(&ts, &inv_y)?;
    let eps_k = slope / intercept;
    if !(eps_k > 0.0) {
        return Err(Error::Fit(format!("envelope does not decay (eps k = {eps_k:.3e})")));
    }
    let y_line_residual = {
        let mut acc = 0.0;
        for (t, v) in ts.iter().zip(&inv_y) {
            acc += ((intercept + slope * t - v) / v).powi(2);
        }
        (acc / ts.len() as f64).sqrt()
    };
    let log_arg = |t: f64| (1.0 + eps_k * t).ln();
    let l_end = log_arg(t_end);
    if l_end < 2.0 * std::f64::consts::LN_10 {
        return Err(Error::Fit(format!(
            "trajectory spans {:.2} decades of 1 + eps k t; two are needed",
            l_end / std::f64::consts::LN_10
        )));
    }
    let last_decade: Vec<&ModulationState> = st
        .iter()
        .filter(|s| log_arg(s.t) >= l_end - std::f64::consts::LN_10)
        .collect();
    let lx: Vec<f64> = last_decade.iter().map(|s| log_arg(s.t)).collect();
    let lz: Vec<f64> = last_decade.iter().map(|s| s.z1.norm().ln()).collect();
    let (z_exp, _, _) = line_fit(&lx, &lz)?;
    let gs: Vec<f64> = last_decade.iter().map(|s| s.gamma).collect();
    let (b1, gamma_inf, gamma_r2) = line_fit(&lx, &gs)?;
    let two_decades: Vec<&ModulationState> = st
        .iter()
        .filter(|s| log_arg(s.t) >= l_end - 2.0 * std::f64::consts::LN_10)
        .collect();
    let dx: Vec<f64> = two_decades.iter().map(|s| log_arg(s.t)).collect();
    let dy: Vec<f64> = two_decades.iter().map(|s| s.drift).collect();
    let (drift_slope, _, drift_r2) = line_fit(&dx, &dy)?;

    // Oscillation of w in the two dense windows.
    let sys = &traj.system;
    let period = PI / sys.xi(sys.omega1);
    let width = period * 30.0;
    let mut fits = Vec::new();
    for end in [t_end / 10.0, t_end] {
        let win: Vec<&ModulationState> = st
            .iter()
            .filter(|s| s.t >= end - width && s.t <= end)
            .collect();
        if win.len() < 40 {
            return Err(Error::Fit(format!("dense window ending at {end} has {} samples", win.len())));
        }
        let wt: Vec<f64> = win.iter().map(|s| s.t).collect();
        let wv: Vec<f64> = win.iter().map(|s| s.omega).collect();
        fits.push(fit_window(&wt, &wv, 2.0 * sys.xi(sys.omega1))?);
    }
    let u = |t: f64| 1.0 / (1.0 + eps_k * t);
    let (f1, f2) = (&fits[0], &fits[1]);
    let (u1, u2) = (u(f1.center), u(f2.center));
    // mean_w = w_inf + q1 u_w, freq_w = Omega_inf + a1 eps k u_w.
    let q1 = (f1.mean - f2.mean) / (u1 - u2);
    let omega_inf = f2.mean - q1 * u2;
    let a1 = (f1.freq - f2.freq) / (eps_k * (u1 - u2));
    let osc = f2.freq - a1 * eps_k * u2;
    let q2 = 0.5 * (f1.amplitude / u1 + f2.amplitude / u2);
    let a2 = (f2.phase - osc * f2.center - a1 * log_arg(f2.center)).rem_euclid(2.0 * PI);
    let k_inf_c = sys.k(omega_inf);
    Ok(AsymptoticFit {
        omega_inf,
        k_inf: eps_k / traj.eps,
        eps_k_inf: eps_k,
        eps_k_inf_predicted: 2.0 * k_inf_c.im * traj.y0,
        delta: 2.0 * drift_slope,
        delta_predicted: k_inf_c.re / k_inf_c.im,
        b1,
        gamma_inf,
        z_decay_exponent: z_exp,
        q1,
        q2,
        a1,
        a2,
        osc_frequency: osc,
        osc_frequency_predicted: 2.0 * sys.xi(omega_inf),
        quality: FitQuality {
            y_line_residual,
            gamma_r2,
            omega_rms: f2.rms.max(f1.rms),
            drift_r2,
        },
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReconstructedField {
    pub radii: Vec<f64>,
    /// `e^{i Theta} (u1 + i u2)` at each radius.
    pub values: Vec<Complex64>,
    /// Charge of the unrotated two-component field.
    pub charge: Charge2,
    pub omitted: Vec<String>,
}

/// Samples of `e^{i Theta}(Phi_w + z Psi + conj(z) Psi* + k(z))` with `k = sum a_ij z^i conj(z)^j`.
pub fn reconstruct_u(
    state: &ModulationState,
    nf: &NormalFormCoeffs,
    radii: &[f64],
) -> Result<ReconstructedField> {
    let p = ModelParams::new(nf.params.sigma, nf.params.nu, state.omega)?;
    let pair = crate::spectral::psi_with(&p, nf.conventions.psi)?;
    let z = state.z;
    let zb = z.conj();
    let field: RadialExpSum = p.soliton()
        + pair.psi.scale(z)
        + pair.psi.flip().scale(zb)
        + nf.a.a20.scale(z * z)
        + nf.a.a11.scale(z * zb)
        + nf.a.a02.scale(zb * zb);
    let rot = Complex64::from_polar(1.0, state.theta);
    let values = radii
        .iter()
        .map(|&r| {
            let v = field.eval(r);
            rot * (v.q1 + I * v.q2)
        })
        .collect();
    Ok(ReconstructedField {
        radii: radii.to_vec(),
        values,
        charge: field.charge(),
        omitted: vec!["h1".into(), "k1".into()],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(k: Complex64) -> ReducedSystem {
        ReducedSystem {
            sigma: 0.8,
            omega1: 1.0,
            k_t: k,
            gamma11: 0.5,
            b: Poly2::zero(),
            c: Poly2::zero(),
            d: Poly2::zero(),
            k_mode: KMode::Frozen,
        }
    }

    #[test]
    fn pure_rotation_keeps_modulus() {
        let cfg = IntegratorConfig {
            t_max: 200.0,
            rtol: 1e-12,
            atol: 1e-15,
            k_mode: KMode::Frozen,
            ..Default::default()
        };
        let tr = integrate_reduced(&toy(Complex64::new(0.0, 0.0)), Complex64::new(0.05, 0.02), 0.01, &cfg).unwrap();
        let y0 = tr.y0;
        for s in &tr.states {
            assert!((s.y - y0).abs() < 1e-8 * y0);
        }
    }

    #[test]
    fn y_equation_matches_closed_form() {
        let k = Complex64::new(3.0, 1.0);
        let cfg = IntegratorConfig {
            t_max: 1e4,
            ..Default::default()
        };
        let (pts, _) = integrate_y(k, 0.01, &cfg).unwrap();
        for p in &pts {
            let e = y_exact(k, 0.01, p.t);
            assert!((p.y - e).abs() < 1e-8 * e, "{} {} {}", p.t, p.y, e);
        }
        let (zero, _) = integrate_y(k, 0.0, &cfg).unwrap();
        assert!(zero.iter().all(|p| p.y == 0.0));
    }

    #[test]
    fn stationary_majorants_vanish() {
        let cfg = IntegratorConfig {
            t_max: 10.0,
            ..Default::default()
        };
        let tr = integrate_reduced(&toy(Complex64::new(1.0, 1.0)), Complex64::new(0.0, 0.0), 0.01, &cfg).unwrap();
        let m = majorants(&tr.states, 0.01, 10.0).unwrap();
        assert_eq!(m.m0, 0.0);
        assert_eq!(m.m1, 0.0);
    }
}
