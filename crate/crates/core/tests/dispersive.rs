use conc_nls::dispersive::*;
use conc_nls::normalform::NormalFormCoeffs;
use conc_nls::spectral::{apply_l_pointwise, resolvent_apply, Projector, Source, SpectralPoint};
use conc_nls::{Charge2, Error, ModelParams, RadialExpSum};
use num_complex::Complex64;

fn params(sigma: f64) -> ModelParams {
    ModelParams::new(sigma, 1.0, 1.0).unwrap()
}

/// `P^c R(1) u` for a smooth `u`, which lies in the operator domain.
fn domain_datum(p: &ModelParams) -> Source {
    let u = RadialExpSum::single(Charge2::real(1.0, 0.5), Complex64::new(2.0, 0.0), 1);
    let u = resolvent_apply(SpectralPoint::new(Complex64::new(1.0, 0.0)), &Source::function(u), p).unwrap();
    Projector::standard(p).unwrap().pc(&Source::function(u)).unwrap()
}

fn max_diff(a: &[Charge2], b: &[Charge2]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (*x - *y).norm()).fold(0.0, f64::max)
}

#[test]
fn short_time_flow_approaches_identity_at_rate_l() {
    let p = params(0.85);
    let g = domain_datum(&p);
    let grid = WeightedGrid::logarithmic(0.1, 1.0, 10).unwrap();
    let g0 = grid.sample(&g.f);
    let lg = grid.sample(&apply_l_pointwise(&g.f, &p));
    let g_scale = g0.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let lg_scale = lg.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let quad = BranchCutQuadrature::default();
    let flow = |t: f64| evolve_continuous(&g, t, &p, &grid, &quad).unwrap().values;
    let (coarse, fine) = (flow(1e-2), flow(1e-3));
    let (e2, e3) = (max_diff(&coarse, &g0) / g_scale, max_diff(&fine, &g0) / g_scale);
    println!("|e^(Lt) g - g| / |g|: {e2:.3e} at t = 1e-2, {e3:.3e} at t = 1e-3");
    assert!(e3 < 5e-3);
    assert!(e2 / e3 > 5.0 && e2 / e3 < 20.0);
    // The difference quotient points along L g, which fixes the direction of the flow.
    let quotient: Vec<Charge2> = fine.iter().zip(&g0).map(|(a, b)| (*a - *b) * 1e3).collect();
    let q_err = max_diff(&quotient, &lg) / lg_scale;
    println!("(e^(Lt) g - g)/t vs L g at t = 1e-3: {q_err:.3e}");
    assert!(q_err < 0.1);
}

#[test]
fn flow_is_linear() {
    let p = params(0.75);
    let grid = WeightedGrid::logarithmic(0.1, 10.0, 20).unwrap();
    let quad = BranchCutQuadrature::default();
    let f = point_charge_datum(&p).unwrap();
    let g = domain_datum(&p);
    let (a, b) = (Complex64::new(0.7, -0.2), Complex64::new(-1.3, 0.4));
    let combo = f.scale(a).add(&g.scale(b));
    let t = 3.0;
    let ef = evolve_continuous(&f, t, &p, &grid, &quad).unwrap().values;
    let eg = evolve_continuous(&g, t, &p, &grid, &quad).unwrap().values;
    let ec = evolve_continuous(&combo, t, &p, &grid, &quad).unwrap().values;
    let want: Vec<Charge2> = ef.iter().zip(&eg).map(|(x, y)| x.scale(a) + y.scale(b)).collect();
    let scale = want.iter().map(|v| v.norm()).fold(0.0, f64::max);
    assert!(max_diff(&ec, &want) < 1e-10 * scale);
}

#[test]
fn refined_quadrature_agrees() {
    let p = params(0.85);
    let grid = WeightedGrid::standard();
    let f = point_charge_datum(&p).unwrap();
    let quad = BranchCutQuadrature::default();
    for t in [1.0, 30.0] {
        let a = evolve_continuous(&f, t, &p, &grid, &quad).unwrap().sup_weighted;
        let b = evolve_continuous(&f, t, &p, &grid, &quad.refined()).unwrap().sup_weighted;
        assert!((a - b).abs() < 1e-6 * b, "t = {t}: {a} vs {b}");
    }
}

#[test]
fn threshold_sigma_is_rejected() {
    let p = ModelParams::new(std::f64::consts::FRAC_1_SQRT_2, 1.0, 1.0).unwrap();
    let src = Source::charge(Charge2::real(1.0, 0.0));
    let grid = WeightedGrid::logarithmic(0.1, 1.0, 4).unwrap();
    let err = evolve_continuous(&src, 1.0, &p, &grid, &BranchCutQuadrature::default()).unwrap_err();
    assert!(matches!(err, Error::Resonance(_)), "{err}");
    assert_eq!(err.exit_code(), 3);
    assert!(matches!(kernel_branch(1.0, 1.0, 1.0, &p), Err(Error::Resonance(_))));
}

#[test]
fn regularized_shifts_are_conjugate() {
    let p = params(0.85);
    let grid = WeightedGrid::logarithmic(0.1, 10.0, 20).unwrap();
    let quad = BranchCutQuadrature::default();
    let f = point_charge_datum(&p).unwrap();
    let mu = Complex64::new(0.0, 2.0 * p.xi());
    let a = evolve_regularized(&f, 10.0, &p, &grid, &quad, mu).unwrap().values;
    let b = evolve_regularized(&f, 10.0, &p, &grid, &quad, -mu).unwrap().values;
    let conj: Vec<Charge2> = b.iter().map(|v| v.conj()).collect();
    let scale = a.iter().map(|v| v.norm()).fold(0.0, f64::max);
    assert!(max_diff(&a, &conj) < 1e-10 * scale);
}

/// Past the near-threshold crossover the normalized norms settle within a factor 3.
#[test]
fn late_time_ratios_plateau() {
    let p = params(0.85);
    let grid = WeightedGrid::standard();
    let quad = BranchCutQuadrature::default();
    let src = point_charge_datum(&p).unwrap();
    let f20 = NormalFormCoeffs::standard(&p).unwrap().hf.f20;
    let mu = Complex64::new(0.0, 2.0 * p.xi());
    let (mut cont, mut reg, mut a20) = (vec![], vec![], vec![]);
    for t in [100.0, 1e3, 1e4] {
        cont.push(evolve_continuous(&src, t, &p, &grid, &quad).unwrap().normalized);
        reg.push(evolve_regularized(&src, t, &p, &grid, &quad, mu).unwrap().normalized);
        a20.push(evolve_a20(f20, t, &p, &grid, &quad).unwrap().normalized);
    }
    for (name, v) in [("continuous", &cont), ("regularized", &reg), ("a20", &a20)] {
        let s = v.iter().cloned().fold(0.0, f64::max) / v.iter().cloned().fold(f64::INFINITY, f64::min);
        println!("{name}: {v:?}, spread {s:.3}");
        assert!(s < 3.0, "{name}");
    }
}

#[test]
fn kernel_is_bounded_at_small_scales() {
    for sigma in [0.75, 0.85, 0.95] {
        let d = kernel_decay(&params(sigma)).unwrap();
        println!("sigma {sigma}: rate {:.3}, small-scale bound {:.3}", d.rate, d.small_scale_bound);
        assert!(d.small_scale_bound.is_finite() && d.small_scale_bound < 1.0);
        assert!(d.rate > 0.0);
    }
}

#[test]
fn r0_decays_like_closed_form() {
    let m = ChargeModel { q_inf: 1.0, eps: 0.1 };
    let times: Vec<f64> = (0..=8).map(|k| 1e4 * 10f64.powf(k as f64 / 8.0)).collect();
    let fit = scattering_r0(&m, &times).unwrap();
    println!("r0 exponent on [1e4, 1e5]: {:.4}", fit.exponent);
    assert!((fit.exponent + 0.75).abs() < 0.02);
}

#[test]
fn nonresonant_remainder_decays_like_inverse_time() {
    let pa = AsymptoticParams { omega_inf: 1.0, xi_inf: 0.3, eps_k_inf: 0.1, alpha: 1.0 };
    let grid = WeightedGrid::logarithmic(1e-2, 1e5, 400).unwrap();
    let times: Vec<f64> = (0..=8).map(|k| 10.0 * 10f64.powf(k as f64 / 4.0)).collect();
    for case in [PhaseCase::Modulus, PhaseCase::Square, PhaseCase::ConjSquare] {
        let fit = scattering_g_decay(&pa, case, &times, &grid).unwrap();
        println!("{case:?}: exponent {:.4}", fit.exponent);
        assert!((fit.exponent + 1.0).abs() < 0.1, "{case:?}");
    }
}

#[test]
fn resonant_remainder_is_finite_and_decreasing() {
    let pa = AsymptoticParams { omega_inf: 1.0, xi_inf: 0.96, eps_k_inf: 0.1, alpha: 1.0 };
    let times = [10.0, 100.0, 1000.0];
    let fit = scattering_g_decay(&pa, PhaseCase::ConjSquare, &times, &WeightedGrid::standard()).unwrap();
    assert!(fit.norms.iter().all(|v| v.is_finite() && *v > 0.0));
    assert!(fit.norms.windows(2).all(|w| w[1] < w[0]), "{:?}", fit.norms);
}
