//! Dormand-Prince 5(4) integrator with PI step-size control for small real state vectors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
/// Difference between the fifth- and fourth-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

const SAFETY: f64 = 0.9;
const BETA: f64 = 0.04;
const ALPHA: f64 = 0.2 - 0.75 * BETA;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;
const MAX_STEPS: usize = 50_000_000;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct StepControl {
    pub rtol: f64,
    pub atol: f64,
    pub dt_init: f64,
    pub dt_max: f64,
}

impl Default for StepControl {
    fn default() -> Self {
        Self {
            rtol: 1e-9,
            atol: 1e-12,
            dt_init: 1e-3,
            dt_max: f64::INFINITY,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct IntegratorStats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

/// Integrate `y' = f(t, y)` from `t0`, stopping exactly at each time in `outputs` (increasing)
/// and handing the state to `observe`.
pub fn integrate<const N: usize>(
    mut f: impl FnMut(f64, &[f64; N]) -> [f64; N],
    t0: f64,
    y0: [f64; N],
    outputs: &[f64],
    ctl: &StepControl,
    mut observe: impl FnMut(f64, &[f64; N]),
) -> Result<IntegratorStats> {
    if !(ctl.rtol > 0.0 && ctl.atol > 0.0) {
        return Err(Error::domain("rtol/atol", ctl.rtol.min(ctl.atol), "(0, inf)"));
    }
    let mut stats = IntegratorStats::default();
    let mut t = t0;
    let mut y = y0;
    let mut k = [[0.0; N]; 7];
    k[0] = f(t, &y);
    stats.evaluations += 1;
    let mut h = ctl.dt_init.min(ctl.dt_max);
    let mut err_old: f64 = 1e-4;
    for &target in outputs {
        if target < t {
            return Err(Error::Integrator {
                t,
                reason: format!("output time {target} precedes current time"),
            });
        }
        while t < target {
            if stats.accepted + stats.rejected > MAX_STEPS {
                return Err(Error::Integrator {
                    t,
                    reason: "step budget exhausted".into(),
                });
            }
            let remaining = target - t;
            let last = h >= remaining;
            let step = if last { remaining } else { h };
            for s in 1..7 {
                let mut ys = y;
                for (i, yi) in ys.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for j in 0..s {
                        acc += A[s][j] * k[j][i];
                    }
                    *yi += step * acc;
                }
                k[s] = f(t + C[s] * step, &ys);
            }
            stats.evaluations += 6;
            let mut y_new = y;
            for (i, yi) in y_new.iter_mut().enumerate() {
                let mut acc = 0.0;
                for j in 0..6 {
                    acc += A[6][j] * k[j][i];
                }
                *yi += step * acc;
            }
            // k[6] was evaluated at the fifth-order solution (first-same-as-last).
            let mut err: f64 = 0.0;
            for i in 0..N {
                let mut e = 0.0;
                for j in 0..7 {
                    e += E[j] * k[j][i];
                }
                let sc = ctl.atol + ctl.rtol * y[i].abs().max(y_new[i].abs());
                err += (step * e / sc).powi(2);
            }
            err = (err / N as f64).sqrt();
            if !err.is_finite() {
                return Err(Error::Integrator {
                    t,
                    reason: "non-finite error estimate".into(),
                });
            }
            if err <= 1.0 {
                t = if last { target } else { t + step };
                y = y_new;
                k[0] = k[6];
                stats.accepted += 1;
                let fac = (SAFETY * err.max(1e-10).powf(-ALPHA) * err_old.powf(BETA))
                    .clamp(FAC_MIN, FAC_MAX);
                err_old = err.max(1e-4);
                if !last {
                    h = (step * fac).min(ctl.dt_max);
                }
            } else {
                stats.rejected += 1;
                let fac = (SAFETY * err.powf(-ALPHA)).clamp(FAC_MIN, 1.0);
                h = step * fac;
                if h < 1e-14 * t.abs().max(1.0) {
                    return Err(Error::Integrator {
                        t,
                        reason: format!("step size collapsed to {h:.3e}"),
                    });
                }
            }
        }
        observe(t, &y);
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn harmonic_oscillator() {
        let outs: Vec<f64> = (1..=10).map(|k| k as f64).collect();
        let mut last = [0.0; 2];
        integrate(
            |_, y| [y[1], -y[0]],
            0.0,
            [1.0, 0.0],
            &outs,
            &StepControl::default(),
            |_, y| last = *y,
        )
        .unwrap();
        assert!((last[0] - 10f64.cos()).abs() < 1e-8);
    }

    #[test]
    fn fifth_order_convergence() {
        // Error at fixed tolerance shrinks roughly like rtol when the tolerance is tightened.
        let run = |rtol: f64| {
            let mut end = 0.0;
            let ctl = StepControl {
                rtol,
                atol: rtol * 1e-3,
                ..Default::default()
            };
            integrate(|t, y| [-2.0 * t * y[0]], 0.0, [1.0], &[3.0], &ctl, |_, y| end = y[0])
                .unwrap();
            (end - (-9.0f64).exp()).abs()
        };
        let coarse = run(1e-6);
        let fine = run(1e-9);
        assert!(fine < coarse * 1e-2, "{coarse} {fine}");
    }
}
