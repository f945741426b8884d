//! Command implementations behind the `conc-nls` binary.
//!
//! Every command returns plain data plus a JSON value for its [`RunSummary`]; the binary only
//! parses flags, writes files and maps errors to exit codes. Floats in CSV output use 12
//! significant digits in scientific notation.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::time::Instant;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::dispersive::{
    self, AsymptoticParams, BranchCutQuadrature, ChargeModel, DecayFit, KernelDecay, PhaseCase,
    WeightedGrid,
};
use crate::dynamics::{self, AsymptoticFit, IntegratorConfig, ReducedSystem, Trajectory};
use crate::error::{Error, Result};
use crate::model::{sigma_band_edge, ModelParams};
use crate::normalform::{self, Conventions, NormalFormCoeffs};
use crate::spectral::{self, PsiConvention};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// `x` with 12 significant digits, or `NaN`.
pub fn sci(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else {
        format!("{x:.11e}")
    }
}

/// Comma-separated table with a header row.
pub fn to_csv(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunSummary {
    pub command: String,
    pub inputs: Value,
    pub outputs: Value,
    pub wall_time_s: f64,
    pub version: String,
}

impl RunSummary {
    pub fn new(command: &str, inputs: Value, outputs: Value, started: Instant) -> Self {
        Self {
            command: command.into(),
            inputs,
            outputs,
            wall_time_s: started.elapsed().as_secs_f64(),
            version: VERSION.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanRecord {
    pub sigma: f64,
    pub omega: f64,
    pub xi: f64,
    pub im_kappa: f64,
    pub f_sigma: f64,
    pub re_zp21_literal: f64,
    pub re_zp21_bc: f64,
    #[serde(rename = "re_iK")]
    pub re_ik: f64,
    #[serde(rename = "im_K")]
    pub im_k: f64,
    pub fgr_abs: f64,
    /// Empty unless the row failed and the scan kept going.
    pub reason: String,
}

impl ScanRecord {
    pub const HEADER: [&'static str; 11] = [
        "sigma",
        "omega",
        "xi",
        "im_kappa",
        "f_sigma",
        "re_zp21_literal",
        "re_zp21_bc",
        "re_iK",
        "im_K",
        "fgr_abs",
        "reason",
    ];

    fn failed(sigma: f64, omega: f64, reason: String) -> Self {
        Self {
            sigma,
            omega,
            xi: f64::NAN,
            im_kappa: f64::NAN,
            f_sigma: f64::NAN,
            re_zp21_literal: f64::NAN,
            re_zp21_bc: f64::NAN,
            re_ik: f64::NAN,
            im_k: f64::NAN,
            fgr_abs: f64::NAN,
            reason,
        }
    }

    pub fn row(&self) -> Vec<String> {
        let mut v: Vec<String> = [
            self.sigma,
            self.omega,
            self.xi,
            self.im_kappa,
            self.f_sigma,
            self.re_zp21_literal,
            self.re_zp21_bc,
            self.re_ik,
            self.im_k,
            self.fgr_abs,
        ]
        .iter()
        .map(|&x| sci(x))
        .collect();
        // Reasons never contain commas or quotes.
        v.push(self.reason.replace([',', '"', '\n'], ";"));
        v
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ScanConfig {
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub steps: usize,
    pub omega: f64,
    pub nu: f64,
    pub psi: PsiConvention,
    pub keep_going: bool,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            sigma_min: 0.712,
            sigma_max: 0.96,
            steps: 50,
            omega: 1.0,
            nu: 1.0,
            psi: PsiConvention::BoundaryCondition,
            keep_going: false,
        }
    }
}

fn scan_row(sigma: f64, cfg: &ScanConfig) -> Result<ScanRecord> {
    let p = ModelParams::new(sigma, cfg.nu, cfg.omega)?;
    let conv = Conventions {
        psi: cfg.psi,
        ..Conventions::default()
    };
    let kappa = spectral::kappa(&p, cfg.psi)?.direct;
    let k = normalform::k_coefficient(&p, conv)?;
    let re_zp21_literal = normalform::zprime21_assembled(&p, Conventions::literal())?.re;
    let re_zp21_bc = normalform::zprime21_assembled(&p, Conventions::default())?.re;
    let fgr_abs = spectral::fgr_quantity(&p, cfg.psi)?.magnitude;
    Ok(ScanRecord {
        sigma,
        omega: cfg.omega,
        xi: p.xi(),
        im_kappa: kappa.im,
        f_sigma: normalform::f_sigma(sigma)?,
        re_zp21_literal,
        re_zp21_bc,
        re_ik: k.re_ik,
        im_k: k.k.im,
        fgr_abs,
        reason: String::new(),
    })
}

/// One record per grid point of `[sigma_min, sigma_max]`, in grid order.
pub fn scan(cfg: &ScanConfig) -> Result<Vec<ScanRecord>> {
    let (lo, hi) = (FRAC_1_SQRT_2, sigma_band_edge());
    for s in [cfg.sigma_min, cfg.sigma_max] {
        if !(s > lo && s < hi) {
            return Err(Error::domain("sigma", s, format!("({lo}, {hi})")));
        }
    }
    if cfg.sigma_max < cfg.sigma_min {
        return Err(Error::domain("sigma_max", cfg.sigma_max, format!("[{}, {hi})", cfg.sigma_min)));
    }
    if cfg.steps < 2 {
        return Err(Error::domain("steps", cfg.steps as f64, "[2, inf)"));
    }
    let grid: Vec<f64> = (0..cfg.steps)
        .map(|k| cfg.sigma_min + (cfg.sigma_max - cfg.sigma_min) * k as f64 / (cfg.steps - 1) as f64)
        .collect();
    grid.par_iter()
        .map(|&s| match scan_row(s, cfg) {
            Ok(r) => Ok(r),
            Err(e) if cfg.keep_going => Ok(ScanRecord::failed(s, cfg.omega, e.to_string())),
            Err(e) => Err(e),
        })
        .collect()
}

pub fn scan_csv(records: &[ScanRecord]) -> String {
    let rows: Vec<Vec<String>> = records.iter().map(ScanRecord::row).collect();
    to_csv(&ScanRecord::HEADER, &rows)
}

pub fn sigma_star(omega: f64, tol: f64) -> Result<Value> {
    let s = normalform::sigma_star(omega, tol, Conventions::literal())?;
    let bracket = match s.sign_change {
        Some(b) => [s.sigma_hat, b],
        None => [s.sigma_hat, sigma_band_edge()],
    };
    Ok(json!({
        "sigma_star": s.sigma_hat,
        "bracket": bracket,
        "all_negative": s.all_negative,
        "grid_evidence": s.grid,
    }))
}

pub fn spectrum(sigma: f64, omega: f64) -> Result<Value> {
    let c = spectral::classify_spectrum(sigma, omega)?;
    let eig: Vec<[f64; 2]> = c.discrete_eigenvalues.iter().map(|z| [z.re, z.im]).collect();
    Ok(json!({
        "sigma": sigma,
        "omega": omega,
        "case": c.case.letter().to_string(),
        "discrete_eigenvalues": eig,
        "zero_multiplicity": c.zero_multiplicity,
        "has_threshold_resonance": c.has_threshold_resonance,
        "essential_edge": c.essential_edge,
    }))
}

pub fn fgr(sigma: f64, omega: f64, nu: f64) -> Result<Value> {
    let p = ModelParams::new(sigma, nu, omega)?;
    let r = spectral::fgr_quantity(&p, PsiConvention::BoundaryCondition)?;
    Ok(json!({
        "sigma": sigma,
        "omega": omega,
        "re": r.value.re,
        "im": r.value.im,
        "magnitude": r.magnitude,
        "eta": r.eta,
    }))
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SimulateConfig {
    pub sigma: f64,
    pub omega0: f64,
    pub z0: Complex64,
    pub eps: f64,
    /// Defaults to `300 / (2 Im K y0)`, i.e. `1 + eps k t` spans more than two decades.
    pub t_max: Option<f64>,
    pub rtol: f64,
    pub nu: f64,
    /// Accept `|z0| > eps^{1/2}` by raising `eps` to `|z0|^2`.
    pub force: bool,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            sigma: 0.8,
            omega0: 1.0,
            z0: Complex64::new(0.1, 0.0),
            eps: 0.01,
            t_max: None,
            rtol: 1e-9,
            nu: 0.01,
            force: false,
        }
    }
}

pub struct Simulation {
    pub trajectory: Trajectory,
    pub t_max: f64,
    pub eps_used: f64,
    pub fit: Result<AsymptoticFit>,
}

pub fn simulate(cfg: &SimulateConfig) -> Result<Simulation> {
    let mut eps = cfg.eps;
    if cfg.z0.norm() > eps.sqrt() {
        if !cfg.force {
            return Err(Error::Regime(format!(
                "|z0| = {} exceeds eps^(1/2) = {}; pass --force to continue",
                cfg.z0.norm(),
                eps.sqrt()
            )));
        }
        eps = cfg.z0.norm_sqr();
    }
    let p = ModelParams::new(cfg.sigma, cfg.nu, cfg.omega0)?;
    p.require_band_regime()?;
    let nf = NormalFormCoeffs::standard(&p)?;
    let sys = ReducedSystem::from_coeffs(&nf);
    let y0 = sys.z1_from_z(cfg.z0).norm_sqr();
    let im_k = sys.k(sys.omega1).im;
    let t_max = match cfg.t_max {
        Some(t) => t,
        None => {
            if !(im_k > 0.0 && y0 > 0.0) {
                return Err(Error::Regime(format!(
                    "no dissipative time scale: Im K = {im_k:.3e}, y0 = {y0:.3e}; pass --t-max"
                )));
            }
            300.0 / (2.0 * im_k * y0)
        }
    };
    let icfg = IntegratorConfig {
        rtol: cfg.rtol,
        atol: cfg.rtol * 1e-3,
        dt_max: PI / sys.xi(sys.omega1) / 8.0,
        t_max,
        ..IntegratorConfig::default()
    };
    let trajectory = dynamics::integrate_reduced(&sys, cfg.z0, eps, &icfg)?;
    let fit = dynamics::fit_asymptotics(&trajectory);
    Ok(Simulation {
        trajectory,
        t_max,
        eps_used: eps,
        fit,
    })
}

pub fn trajectory_csv(traj: &Trajectory) -> String {
    let rows: Vec<Vec<String>> = traj
        .states
        .iter()
        .map(|s| {
            [s.t, s.omega, s.gamma, s.z.re, s.z.im, s.y, s.theta]
                .iter()
                .map(|&x| sci(x))
                .collect()
        })
        .collect();
    to_csv(&["t", "omega", "gamma", "re_z", "im_z", "y", "theta"], &rows)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DispersiveRow {
    pub t: f64,
    pub sup_weighted: f64,
    /// `t^{3/2}`-normalized plain flow.
    pub ratio_continuous: f64,
    /// `(1 + t)^{3/2}`-normalized regularized flows with shifts `+2 i xi` and `-2 i xi`.
    pub ratio_regularized_plus: f64,
    pub ratio_regularized_minus: f64,
    pub ratio_a20: f64,
    pub tail_estimate: f64,
}

impl DispersiveRow {
    pub const HEADER: [&'static str; 7] = [
        "t",
        "sup_weighted",
        "ratio_continuous",
        "ratio_regularized_plus",
        "ratio_regularized_minus",
        "ratio_a20",
        "tail_estimate",
    ];

    pub fn row(&self) -> Vec<String> {
        [
            self.t,
            self.sup_weighted,
            self.ratio_continuous,
            self.ratio_regularized_plus,
            self.ratio_regularized_minus,
            self.ratio_a20,
            self.tail_estimate,
        ]
        .iter()
        .map(|&x| sci(x))
        .collect()
    }
}

/// Ratio table for the point-charge datum. The regularized columns are `NaN` outside the band
/// window, where the shifted pole is not on the cut.
pub fn dispersive_table(sigma: f64, omega: f64, nu: f64, times: &[f64]) -> Result<Vec<DispersiveRow>> {
    let p = ModelParams::new(sigma, nu, omega)?;
    let grid = WeightedGrid::standard();
    let quad = BranchCutQuadrature::default();
    let src = dispersive::point_charge_datum(&p)?;
    let in_band = p.require_band_regime().is_ok();
    let f20 = if in_band {
        Some(NormalFormCoeffs::standard(&p)?.hf.f20)
    } else {
        None
    };
    let xi = p.xi();
    times
        .iter()
        .map(|&t| {
            let cont = dispersive::evolve_continuous(&src, t, &p, &grid, &quad)?;
            let (rp, rm, a) = match f20 {
                Some(f20) => (
                    dispersive::evolve_regularized(&src, t, &p, &grid, &quad, Complex64::new(0.0, 2.0 * xi))?
                        .normalized,
                    dispersive::evolve_regularized(&src, t, &p, &grid, &quad, Complex64::new(0.0, -2.0 * xi))?
                        .normalized,
                    dispersive::evolve_a20(f20, t, &p, &grid, &quad)?.normalized,
                ),
                None => (f64::NAN, f64::NAN, f64::NAN),
            };
            Ok(DispersiveRow {
                t,
                sup_weighted: cont.sup_weighted,
                ratio_continuous: cont.normalized,
                ratio_regularized_plus: rp,
                ratio_regularized_minus: rm,
                ratio_a20: a,
                tail_estimate: cont.tail_estimate,
            })
        })
        .collect()
}

/// `max / min` of a ratio column, ignoring `NaN`.
pub fn spread(values: impl IntoIterator<Item = f64>) -> f64 {
    let (lo, hi) = values
        .into_iter()
        .filter(|v| !v.is_nan())
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if lo > 0.0 && lo.is_finite() {
        hi / lo
    } else {
        f64::NAN
    }
}

pub fn dispersive_summary(rows: &[DispersiveRow]) -> Value {
    let col = |f: fn(&DispersiveRow) -> f64| spread(rows.iter().map(f));
    let s = [
        col(|r| r.ratio_continuous),
        col(|r| r.ratio_regularized_plus),
        col(|r| r.ratio_regularized_minus),
        col(|r| r.ratio_a20),
    ];
    json!({
        "spread_continuous": s[0],
        "spread_regularized_plus": s[1],
        "spread_regularized_minus": s[2],
        "spread_a20": s[3],
        "within_factor_3": s.iter().all(|v| v.is_nan() || *v < 3.0),
    })
}

/// Samples of the upper-branch `(1,1)` entry along `x = y`, and the fit.
pub fn kernel_check(sigma: f64, omega: f64) -> Result<(String, KernelDecay)> {
    let p = ModelParams::new(sigma, 1.0, omega)?;
    let fit = dispersive::kernel_decay(&p)?;
    let mut rows = Vec::new();
    let small = (0..8).map(|k| 2.0e-2 * 10f64.powf(k as f64 / 7.0));
    let decay = (0..21).map(|k| 1.0 + 5.0 * k as f64 / 20.0);
    for s in small.chain(decay) {
        let (x, y) = (0.5 * s, 0.5 * s);
        let k = dispersive::kernel_branch(1.0, x, y, &p)?;
        let sum = dispersive::kernel_pcj(x, y, &p)?;
        let sum_max = sum.iter().flatten().map(|v| v.norm()).fold(0.0, f64::max);
        rows.push(vec![sci(x), sci(y), sci(k[0][0].norm() * x * y), sci(sum_max * x * y)]);
    }
    Ok((to_csv(&["x", "y", "abs_k11_upper_xy", "abs_pcj_max_xy"], &rows), fit))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScatteringReport {
    pub r0: DecayFit,
    pub nonresonant_modulus: DecayFit,
    pub nonresonant_square: DecayFit,
    /// `None` when `2 xi <= w` and the conjugate-square phase has no stationary point.
    pub resonant_norms: Option<Vec<f64>>,
    pub resonant_finite: bool,
}

/// Logarithmic times from 10 to `t_max`, four per decade.
pub fn decade_times(t_max: f64) -> Vec<f64> {
    let n = ((t_max / 10.0).log10() * 4.0).round().max(1.0) as usize;
    (0..=n).map(|k| 10.0 * (t_max / 10.0).powf(k as f64 / n as f64)).collect()
}

pub fn scattering(sigma: f64, omega: f64, t_max: f64, eps: f64) -> Result<ScatteringReport> {
    if !(t_max >= 100.0) {
        return Err(Error::domain("t_max", t_max, "[100, inf)"));
    }
    let p = ModelParams::new(sigma, 1.0, omega)?;
    let times = decade_times(t_max);
    let r0 = dispersive::scattering_r0(&ChargeModel { q_inf: 1.0, eps }, &times)?;
    let pa = AsymptoticParams::from_model(&p, eps);
    // The L^2 mass of the tail sits at |x| ~ t, so the grid reaches well past t_max.
    let wide = WeightedGrid::logarithmic(1e-2, 100.0 * t_max, 400)?;
    let nonresonant_modulus = dispersive::scattering_g_decay(&pa, PhaseCase::Modulus, &times, &wide)?;
    let nonresonant_square = dispersive::scattering_g_decay(&pa, PhaseCase::Square, &times, &wide)?;
    let resonant_norms = if pa.frequency(PhaseCase::ConjSquare) < 0.0 {
        let fit = dispersive::scattering_g_decay(&pa, PhaseCase::ConjSquare, &times, &WeightedGrid::standard())?;
        Some(fit.norms)
    } else {
        None
    };
    let resonant_finite = resonant_norms
        .as_ref()
        .is_none_or(|n| n.iter().all(|v| v.is_finite()));
    Ok(ScatteringReport {
        r0,
        nonresonant_modulus,
        nonresonant_square,
        resonant_norms,
        resonant_finite,
    })
}

/// Parse a positive finite float.
pub fn parse_positive(s: &str) -> std::result::Result<f64, String> {
    let t: f64 = s.trim().parse().map_err(|_| format!("not a number: {s:?}"))?;
    if t > 0.0 && t.is_finite() {
        Ok(t)
    } else {
        Err(format!("expected a positive value, got {t}"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sci_has_twelve_digits() {
        assert_eq!(sci(1.0), "1.00000000000e0");
        assert_eq!(sci(-0.000123456789012345), "-1.23456789012e-4");
        assert_eq!(sci(f64::NAN), "NaN");
    }

    #[test]
    fn spread_ignores_nan() {
        assert_eq!(spread([2.0, f64::NAN, 4.0]), 2.0);
        assert!(spread([f64::NAN]).is_nan());
    }

    #[test]
    fn decade_times_cover_range() {
        let t = decade_times(1e3);
        assert_eq!(t.len(), 9);
        assert!((t[0] - 10.0).abs() < 1e-12 && (t[8] - 1e3).abs() < 1e-9);
    }

    #[test]
    fn parse_positive_rejects_nonpositive() {
        assert_eq!(parse_positive(" 3").unwrap(), 3.0);
        assert!(parse_positive("-2").is_err());
        assert!(parse_positive("inf").is_err());
        assert!(parse_positive("x").is_err());
    }

    #[test]
    fn scan_rejects_out_of_band() {
        let cfg = ScanConfig {
            sigma_min: 0.7,
            ..ScanConfig::default()
        };
        assert_eq!(scan(&cfg).unwrap_err().exit_code(), 3);
    }
}
