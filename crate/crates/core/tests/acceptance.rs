use std::time::Instant;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rnf_core::dynamics::{action_drift_experiment, integrate, IntegratorConfig};
use rnf_core::experiment::{bracket_audit, homological_audit, log_grid, residual_scaling, QuarticNormalizer};
use rnf_core::index::{enumerate_class, ClassTag, MultiIndex, DEFAULT_ENUMERATION_CAP};
use rnf_core::poly::{beta_closed_form, chi4, extract_z6_oracle, p2m_coefficients, z2_poly, z4_formula};
use rnf_core::resonance::{verdict_for_actions, Catalog, NonResonanceParams, Verdict};
use rnf_core::stochastic::{estimate_probability_curve, find_a_star, trial_state, SamplingLaw};
use rnf_core::{Model, ModelParams};

type Outcome = Result<(bool, String), String>;

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn z6_oracle() -> Outcome {
    let t = Instant::now();
    let o = extract_z6_oracle(8).map_err(err)?;
    let secs = t.elapsed().as_secs_f64();
    let alpha = o.alpha.values().filter(|c| !c.is_zero()).count();
    let gamma = o.gamma.values().filter(|c| !c.is_zero()).count();
    let beta = o.beta.iter().filter(|(&(a, b), c)| **c != beta_closed_form(a, b)).count();
    let ok = secs <= 60.0 && alpha == 0 && gamma == 0 && beta == 0 && !o.beta.is_empty();
    Ok((ok, format!("window 8, {} beta entries, mismatches alpha={alpha} gamma={gamma} beta={beta}, {secs:.1}s", o.beta.len())))
}

fn homological_identity() -> Outcome {
    let w = 6;
    let chi = chi4(w).map_err(err)?;
    let lhs = z4_formula(w).sub(&p2m_coefficients(2, w).map_err(err)?).sub(&z2_poly(w).poisson(&chi));
    Ok((lhs.is_zero(), format!("window {w}, {} nonzero monomials in the identity", lhs.len())))
}

fn quartic_resonances() -> Outcome {
    let t = Instant::now();
    let found = enumerate_class(2, 50, ClassTag::R, true, DEFAULT_ENUMERATION_CAP).map_err(err)?;
    let secs = t.elapsed().as_secs_f64();
    Ok((found.is_empty() && secs <= 10.0, format!("{} irreducible resonant quartic indices, {secs:.2}s", found.len())))
}

fn bracket_closure() -> Outcome {
    let p = ModelParams { phi2: 0.5, ..ModelParams::cubic(3) };
    let audit = bracket_audit(200, 11, 20, &p).map_err(err)?;
    let failed: Vec<usize> = audit.iter().filter(|a| !a.passed(1e-9)).map(|a| a.pair).collect();
    let worst = audit.iter().map(|a| a.max_relative_error).fold(0.0, f64::max);
    Ok((audit.len() == 200 && failed.is_empty(), format!("200 pairs, failures {failed:?}, worst relative error {worst:.1e}")))
}

fn homological_solves() -> Outcome {
    let p = ModelParams { phi2: 0.5, ..ModelParams::cubic(3) };
    let audit = homological_audit(50, 13, 20, &p).map_err(err)?;
    let worst = audit.iter().map(|a| a.residual).fold(0.0, f64::max);
    Ok((audit.len() == 100 && worst <= 1e-10, format!("50 inputs in both modes, worst residual {worst:.1e}")))
}

fn integrator_conservation() -> Outcome {
    let law = SamplingLaw { model: Model::Nls, s: 4.0, window: 32, seed: 5 };
    let (_, z) = trial_state(&law, 0.1, 0).map_err(err)?;
    let p = ModelParams::cubic(32);
    let run = |dt: f64| {
        let cfg = IntegratorConfig { dt, t_final: 1e3, sample_every: (1.0 / dt) as usize, ..Default::default() };
        integrate(&z, &p, &cfg).map_err(err)
    };
    let (a, b) = (run(1e-2)?, run(5e-3)?);
    let mass = a.diagnostics.relative_mass_drift();
    let ratio = a.diagnostics.max_energy_error() / b.diagnostics.max_energy_error();
    Ok((mass <= 1e-11 && (3.0..=5.0).contains(&ratio), format!("mass drift {mass:.1e}, energy error ratio {ratio:.2}")))
}

fn drift_reproduction() -> Outcome {
    let eps: f64 = 0.1;
    let law = SamplingLaw { model: Model::Nls, s: 4.0, window: 64, seed: 7 };
    let mut q = NonResonanceParams::truncated(Model::Nls, eps.powf(5.0 / 12.0), eps, 2, 4.0, eps.powf(-0.5), 16);
    q.length_cap = 10;
    let cat = Catalog::for_params(&q).map_err(err)?;
    let p = ModelParams::cubic(64);
    let cfg = IntegratorConfig { dt: 1e-2, t_final: eps.powi(-3), sample_every: 100, ..Default::default() };
    let sum = action_drift_experiment(&law, &p, &q, &cat, &cfg, 50, 3.0).map_err(err)?;
    for r in sum.runs.iter().filter(|r| !r.within_envelope) {
        eprintln!("  drift run {} exceeded: max D_s {:.2e}, verdict {:?}", r.trial, r.max_drift, r.verdict);
    }
    let worst = sum.runs.iter().map(|r| r.max_drift / r.envelope).fold(0.0, f64::max);
    Ok((sum.passes() >= 45, format!("{}/50 within 3 eps^(5/2), worst ratio {worst:.2}, {} draws screened out", sum.passes(), sum.screened_out)))
}

fn survey(r: usize) -> Result<(Vec<rnf_core::stochastic::ProbabilityEstimate>, rnf_core::stochastic::LinearFit), String> {
    let eps = 0.1;
    let gammas = [0.3, 0.1, 0.03, 0.01];
    let law = SamplingLaw { model: Model::Nls, s: 4.0, window: 64, seed: 3 };
    let q = NonResonanceParams::full(Model::Nls, gammas[0], eps, r, 4.0, 16);
    let cat = Catalog::for_params(&q).map_err(err)?;
    let (est, _) = estimate_probability_curve(&law, &q, &ModelParams::cubic(64), &gammas, 2000, &cat).map_err(err)?;
    let x: Vec<f64> = est.iter().map(|e| e.gamma).collect();
    let y: Vec<f64> = est.iter().map(|e| e.failure_rate()).collect();
    Ok((est, rnf_core::stochastic::linear_fit(&x, &y)))
}

fn probability_shape() -> Outcome {
    let (est, fit) = survey(2)?;
    let monotone = est.windows(2).all(|w| w[1].ci_high >= w[0].p_hat);
    let inconclusive = est.iter().map(|e| e.inconclusive_fraction()).fold(0.0, f64::max);
    let rates: Vec<String> = est.iter().map(|e| format!("{:.4}", e.failure_rate())).collect();
    let ok = monotone && fit.slope >= 0.0 && fit.r_squared >= 0.8 && inconclusive <= 0.05;
    if let Ok((est3, fit3)) = survey(3) {
        let rates3: Vec<String> = est3.iter().map(|e| format!("{:.4}", e.failure_rate())).collect();
        eprintln!("  r=3 comparison: failure rates [{}], slope {:.3}, R^2 {:.3}", rates3.join(", "), fit3.slope, fit3.r_squared);
    }
    Ok((ok, format!("failure rates [{}], slope {:.3}, R^2 {:.3}, inconclusive {inconclusive:.3}", rates.join(", "), fit.slope, fit.r_squared)))
}

fn nlsp_scaling() -> Outcome {
    let eps: f64 = 0.1;
    let (r, s) = (3, 4.0);
    let law = SamplingLaw { model: Model::Nlsp, s, window: 64, seed: 9 };
    let base = NonResonanceParams::truncated(Model::Nlsp, eps.powf(5.0 / 12.0), eps, r, s, eps.powf(-(2.0 * r as f64 - 2.0) / s), 16);
    let cat = Catalog::for_params(&base).map_err(err)?;
    let p = ModelParams::nlsp(64);
    let verdict = |trial: u64, e: f64| -> Result<Verdict, String> {
        let (_, z) = trial_state(&law, e, trial).map_err(err)?;
        let q = NonResonanceParams { eps: e, ..base.clone() };
        Ok(verdict_for_actions(&z.actions().map_err(err)?, &q, &p, &cat))
    };
    let (mut found, mut held, mut inconclusive, mut trial) = (0, 0, 0, 0u64);
    while found < 500 && trial < 50_000 {
        if verdict(trial, eps)?.is_member() {
            found += 1;
            let later: Vec<Verdict> = [2.0, 4.0, 8.0].iter().map(|d| verdict(trial, eps / d)).collect::<Result<_, _>>()?;
            if later.iter().all(|v| v.is_member()) {
                held += 1;
            } else if later.iter().all(|v| v.is_member() || v.is_inconclusive()) {
                inconclusive += 1;
            }
        }
        trial += 1;
    }
    let ok = found == 500 && held as f64 >= 0.99 * 500.0;
    Ok((ok, format!("r={r}: {held}/{found} held at eps/2, eps/4, eps/8, {inconclusive} inconclusive, {trial} draws")))
}

fn gauge_sq(a: i64) -> BigInt {
    BigInt::from(1 + a * a)
}

fn partial_fraction_bound() -> Outcome {
    let pool = enumerate_class(3, 10, ClassTag::R, true, DEFAULT_ENUMERATION_CAP).map_err(err)?;
    let quartic = enumerate_class(2, 10, ClassTag::R, true, DEFAULT_ENUMERATION_CAP).map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut failures = Vec::new();
    for _ in 0..1000 {
        let k: &MultiIndex = &pool[rng.random_range(0..pool.len())];
        let m = k.half_len() as i64;
        let mut bound = BigRational::one() / BigRational::from_integer(BigInt::from(6 * m).pow(4 * m as u32));
        for e in k.entries() {
            bound /= BigRational::from_integer(gauge_sq(e.a));
        }
        match find_a_star(k) {
            Ok(a) => {
                let mut v = BigRational::zero();
                for e in k.entries() {
                    let t = BigRational::new(BigInt::from(e.delta), BigInt::from((a.a_star - e.a).pow(2)));
                    v += t;
                }
                if v != a.value || v.abs() < bound || k.entries().iter().any(|e| e.a == a.a_star) {
                    failures.push(k.to_string());
                }
            }
            Err(_) => failures.push(k.to_string()),
        }
    }
    Ok((failures.is_empty(), format!("1000 draws from {} sextic indices ({} quartic exist), failures {:?}", pool.len(), quartic.len(), failures)))
}

fn residual_slope() -> Outcome {
    let window = 4;
    let p = ModelParams { tail_window: window, ..ModelParams::cubic(window) };
    let sc = residual_scaling(window, &p, &log_grid(0.02, 0.1, 6), 3, 4.0, 21).map_err(err)?;
    let target = 5.0;
    Ok(((sc.fit.slope - target).abs() <= 0.15 * target, format!("slope {:.3} (target {target}), R^2 {:.4}", sc.fit.slope, sc.fit.r_squared)))
}

fn near_identity() -> Outcome {
    let window = 4;
    let s = 4.0;
    let p = ModelParams { tail_window: window, ..ModelParams::cubic(window) };
    let tau = QuarticNormalizer::new(window, &p, 40).map_err(err)?;
    let law = SamplingLaw { model: Model::Nls, s, window, seed: 23 };
    let mut worst: f64 = 0.0;
    let mut ok = true;
    for eps in [0.05f64, 0.1] {
        let q = NonResonanceParams::full(Model::Nls, eps.powf(5.0 / 12.0), eps, 2, s, window);
        let cat = Catalog::for_params(&q).map_err(err)?;
        let (mut kept, mut trial) = (0, 0u64);
        while kept < 20 && trial < 10_000 {
            let (_, z) = trial_state(&law, eps, trial).map_err(err)?;
            trial += 1;
            if !verdict_for_actions(&z.actions().map_err(err)?, &q, &p, &cat).is_member() {
                continue;
            }
            kept += 1;
            let disp = tau.apply(&z).map_err(err)?.difference(&z).norm_s(s);
            worst = worst.max(disp / eps.powf(1.5));
            ok &= disp <= eps.powf(1.5);
        }
        ok &= kept == 20;
    }
    Ok((ok, format!("20 screened samples at eps 0.05 and 0.1, worst displacement / eps^1.5 = {worst:.2e}")))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("sextic action oracle on window 8", z6_oracle),
        ("quartic homological identity on window 6", homological_identity),
        ("no irreducible quartic resonances up to 50", quartic_resonances),
        ("rational bracket closure audit", bracket_closure),
        ("homological solve residuals", homological_solves),
        ("splitting conservation and order", integrator_conservation),
        ("scaled action drift", drift_reproduction),
        ("failure probability shape in gamma", probability_shape),
        ("NLSP membership under eps scaling", nlsp_scaling),
        ("certified partial fraction bound", partial_fraction_bound),
        ("remainder vector field eps scaling", residual_slope),
        ("near-identity normalizing map", near_identity),
    ];
    let mut passed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let (ok, detail) = f().unwrap_or_else(|e| (false, format!("error: {e}")));
        passed += ok as usize;
        println!("{} {:>2} {name}: {detail} [{:.1}s]", if ok { "PASS" } else { "FAIL" }, i + 1, t.elapsed().as_secs_f64());
    }
    println!("{passed}/12 criteria passed");
}
