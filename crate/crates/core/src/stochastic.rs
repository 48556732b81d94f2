//! Random actions, initial data, Monte Carlo membership frequencies and the partial-fraction
//! lower bound.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RnfError};
use crate::index::{gauge, gauge_sq, MultiIndex};
use crate::integrable::{Model, ModelParams};
use crate::phase_space::{ActionField, FourierState};
use crate::resonance::{ratios, verdict_at, Catalog, NonResonanceParams, Verdict};

/// Normalizing constant `tanh(pi) / (2 pi)` of the initial data.
pub fn normalizing_constant() -> f64 {
    std::f64::consts::PI.tanh() / (2.0 * std::f64::consts::PI)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingLaw {
    pub model: Model,
    pub s: f64,
    pub window: i64,
    pub seed: u64,
}

impl SamplingLaw {
    /// Generator for trial `trial`: the master seed selects the key, the trial the stream.
    pub fn rng(&self, trial: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(trial);
        rng
    }

    /// Support bound `<a>^{-2s-4}` of `I_a`.
    pub fn support(&self, a: i64) -> f64 {
        gauge(a).powf(-2.0 * self.s - 4.0)
    }
}

/// NLS: `I_a^2` uniform on `(0, <a>^{-4s-8})`. NLSP: `I_a` uniform on `(0, <a>^{-2s-4})`.
pub fn sample_actions<R: Rng>(law: &SamplingLaw, rng: &mut R) -> ActionField {
    let values = (-law.window..=law.window)
        .map(|a| {
            let u: f64 = rng.random();
            match law.model {
                Model::Nls => (u * gauge(a).powf(-4.0 * law.s - 8.0)).sqrt(),
                Model::Nlsp => u * law.support(a),
            }
        })
        .collect();
    ActionField { window: law.window, values }
}

/// Uniform phases on the law window.
pub fn sample_phases<R: Rng>(window: i64, rng: &mut R) -> Vec<f64> {
    (0..2 * window + 1).map(|_| rng.random::<f64>() * std::f64::consts::TAU).collect()
}

/// `sum <a>^s |u_a|` for the function `u = sum xi_a e^{iax}`.
pub fn function_norm_s(z: &FourierState, s: f64) -> f64 {
    z.modes().zip(&z.xi).map(|(a, x)| gauge(a).powf(s) * x.norm()).sum()
}

/// `u_a = c eps sqrt(I_a) e^{i theta_a}` with `c = tanh(pi) / (2 pi)`; checks `||u||_s < eps / 2`
/// when `s` is given.
pub fn build_initial_state(field: &ActionField, eps: f64, phases: &[f64], s: Option<f64>) -> Result<FourierState> {
    if !field.is_nonnegative() {
        return Err(RnfError::Config("actions must be nonnegative".into()));
    }
    let c = normalizing_constant();
    let mut z = FourierState::zeros(field.window);
    for (i, a) in (-field.window..=field.window).enumerate() {
        let amp = c * eps * field.get(a).sqrt();
        z.set_xi(a, num_complex::Complex64::from_polar(amp, phases.get(i).copied().unwrap_or(0.0)));
    }
    if let Some(s) = s {
        let norm = function_norm_s(&z, s);
        if norm >= eps / 2.0 {
            return Err(RnfError::NormBudget { norm, budget: eps / 2.0 });
        }
    }
    Ok(z)
}

/// Wilson score interval at 95%.
pub fn wilson_interval(successes: usize, n: usize) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let z = 1.959_963_984_540_054;
    let nf = n as f64;
    let p = successes as f64 / nf;
    let denom = 1.0 + z * z / nf;
    let center = (p + z * z / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z * z / (4.0 * nf * nf)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Least-squares line `y = intercept + slope x` with its `R^2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    /// `NaN` when `y` has no variance.
    pub r_squared: f64,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> LinearFit {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { f64::NAN };
    LinearFit { slope, intercept, r_squared }
}

/// One trial of a membership survey.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: u64,
    pub seed: u64,
    pub eps: f64,
    pub gamma: f64,
    pub verdict: String,
    pub worst_margin: Option<f64>,
    pub offending_k: Option<MultiIndex>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityEstimate {
    pub gamma: f64,
    pub trials: usize,
    pub members: usize,
    pub violated: usize,
    pub inconclusive: usize,
    /// Member fraction among decided trials.
    pub p_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl ProbabilityEstimate {
    fn from_counts(gamma: f64, members: usize, violated: usize, inconclusive: usize) -> Self {
        let decided = members + violated;
        let p_hat = if decided > 0 { members as f64 / decided as f64 } else { f64::NAN };
        let (ci_low, ci_high) = wilson_interval(members, decided);
        Self { gamma, trials: decided + inconclusive, members, violated, inconclusive, p_hat, ci_low, ci_high }
    }

    pub fn failure_rate(&self) -> f64 {
        1.0 - self.p_hat
    }

    pub fn inconclusive_fraction(&self) -> f64 {
        if self.trials == 0 {
            0.0
        } else {
            self.inconclusive as f64 / self.trials as f64
        }
    }
}

/// Initial data of one trial: actions, phases and the scaled state.
pub fn trial_state(law: &SamplingLaw, eps: f64, trial: u64) -> Result<(ActionField, FourierState)> {
    let mut rng = law.rng(trial);
    let field = sample_actions(law, &mut rng);
    let phases = sample_phases(law.window, &mut rng);
    let z = build_initial_state(&field, eps, &phases, None)?;
    Ok((field, z))
}

/// Membership frequencies at every `gamma` in `gammas`, from the same draws.
pub fn estimate_probability_curve(
    law: &SamplingLaw,
    q: &NonResonanceParams,
    p: &ModelParams,
    gammas: &[f64],
    trials: usize,
    cat: &Catalog,
) -> Result<(Vec<ProbabilityEstimate>, Vec<TrialRecord>)> {
    let per_trial: Vec<Result<Vec<Verdict>>> = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let (_, z) = trial_state(law, q.eps, t)?;
            let rs = ratios(&z.actions()?, q, p, cat);
            Ok(gammas.iter().map(|&g| verdict_at(&rs, g, cat)).collect())
        })
        .collect();
    let mut counts = vec![(0usize, 0usize, 0usize); gammas.len()];
    let mut records = Vec::new();
    for (t, v) in per_trial.into_iter().enumerate() {
        for (gi, verdict) in v?.into_iter().enumerate() {
            let c = &mut counts[gi];
            let (margin, k) = match &verdict {
                Verdict::Member { worst_margin } => {
                    c.0 += 1;
                    (Some(*worst_margin), None)
                }
                Verdict::Violated(x) => {
                    c.1 += 1;
                    (Some(x.margin), Some(x.k.clone()))
                }
                Verdict::Inconclusive(x) => {
                    c.2 += 1;
                    (Some(x.margin), Some(x.k.clone()))
                }
            };
            records.push(TrialRecord {
                trial: t as u64,
                seed: law.seed,
                eps: q.eps,
                gamma: gammas[gi],
                verdict: verdict.label().into(),
                worst_margin: margin.filter(|m| m.is_finite()),
                offending_k: k,
            });
        }
    }
    let est = gammas.iter().zip(counts).map(|(&g, (m, v, i))| ProbabilityEstimate::from_counts(g, m, v, i)).collect();
    Ok((est, records))
}

/// Membership frequency at `q.gamma`.
pub fn estimate_probability(
    law: &SamplingLaw,
    q: &NonResonanceParams,
    p: &ModelParams,
    trials: usize,
    cat: &Catalog,
) -> Result<(ProbabilityEstimate, Vec<TrialRecord>)> {
    let (mut est, rec) = estimate_probability_curve(law, q, p, &[q.gamma], trials, cat)?;
    Ok((est.remove(0), rec))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum XnMode {
    Iid,
    Constant,
}

/// Per-`n` and nested frequencies of the sequence experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceReport {
    pub n_max: usize,
    pub outer_draws: usize,
    pub inner_draws: usize,
    pub nu: f64,
    /// Member frequency of `eps_n z` for each `n`, over all draws.
    pub per_n_member: Vec<f64>,
    /// Fraction of action draws whose inner frequency of `{for all n: member}` is at least `1 - nu`.
    pub outer_fraction: f64,
    /// Inner frequencies, one per action draw.
    pub inner_frequency: Vec<f64>,
    pub inconclusive: usize,
}

/// Draws actions, then `eps_n = eps0 2^{-(n + x_n)}` with `x_n` uniform on `(0, 1)`, and records
/// membership of `eps_n z` for `n <= n_max`.
#[allow(clippy::too_many_arguments)]
pub fn epsilon_sequence_experiment(
    eps0: f64,
    law: &SamplingLaw,
    q: &NonResonanceParams,
    p: &ModelParams,
    n_max: usize,
    xn_mode: XnMode,
    outer_draws: usize,
    inner_draws: usize,
    nu: f64,
    cat: &Catalog,
) -> Result<SequenceReport> {
    let c = normalizing_constant();
    let rows: Vec<Result<(Vec<usize>, usize, usize)>> = (0..outer_draws as u64)
        .into_par_iter()
        .map(|t| {
            let mut rng = law.rng(t);
            let field = sample_actions(law, &mut rng);
            let mut per_n = vec![0usize; n_max + 1];
            let mut all_member = 0usize;
            let mut inconclusive = 0usize;
            for _ in 0..inner_draws {
                let x0: f64 = rng.random();
                let mut all = true;
                for (n, slot) in per_n.iter_mut().enumerate() {
                    let x = if xn_mode == XnMode::Constant || n == 0 { x0 } else { rng.random() };
                    let eps_n = eps0 * 2f64.powf(-(n as f64 + x));
                    let scaled = ActionField { window: field.window, values: field.values.iter().map(|v| c * c * eps_n * eps_n * v).collect() };
                    let mut qn = q.clone();
                    qn.eps = eps_n;
                    match verdict_at(&ratios(&scaled, &qn, p, cat), qn.gamma, cat) {
                        Verdict::Member { .. } => *slot += 1,
                        Verdict::Violated(_) => all = false,
                        Verdict::Inconclusive(_) => {
                            inconclusive += 1;
                            all = false
                        }
                    }
                }
                all_member += all as usize;
            }
            Ok((per_n, all_member, inconclusive))
        })
        .collect();
    let mut per_n_total = vec![0usize; n_max + 1];
    let mut inner_frequency = Vec::new();
    let mut inconclusive = 0;
    for r in rows {
        let (per_n, all, inc) = r?;
        for (a, b) in per_n_total.iter_mut().zip(per_n) {
            *a += b;
        }
        inner_frequency.push(all as f64 / inner_draws.max(1) as f64);
        inconclusive += inc;
    }
    let total = (outer_draws * inner_draws).max(1) as f64;
    let outer_fraction = inner_frequency.iter().filter(|&&f| f >= 1.0 - nu).count() as f64 / outer_draws.max(1) as f64;
    Ok(SequenceReport {
        n_max,
        outer_draws,
        inner_draws,
        nu,
        per_n_member: per_n_total.iter().map(|&m| m as f64 / total).collect(),
        outer_fraction,
        inner_frequency,
        inconclusive,
    })
}

/// Certified partial-fraction lower bound.
#[derive(Clone, Debug, PartialEq)]
pub struct AStar {
    pub a_star: i64,
    /// `sum delta_alpha / (a* - a_alpha)^2`
    pub value: BigRational,
    /// `(6m)^{-4m} prod <a_alpha>^{-2}`
    pub bound: BigRational,
}

/// Maximizes `|sum delta_alpha (a - a_alpha)^{-2}|` over integers `-3m < a < 3m` not in `k`.
pub fn find_a_star(k: &MultiIndex) -> Result<AStar> {
    if k.is_empty() || !k.is_irreducible() {
        return Err(RnfError::MalformedIndex(format!("{k} is not a nonempty irreducible index")));
    }
    let m = k.half_len() as i64;
    let mut bound = BigRational::one() / BigRational::from_integer(BigInt::from(6 * m).pow(4 * m as u32));
    for e in k.entries() {
        bound /= BigRational::from_integer(BigInt::from(gauge_sq(e.a)));
    }
    let mut best: Option<(i64, BigRational)> = None;
    for a in (-3 * m + 1)..(3 * m) {
        if k.entries().iter().any(|e| e.a == a) {
            continue;
        }
        let mut v = BigRational::zero();
        for e in k.entries() {
            let d = BigInt::from((a - e.a) * (a - e.a));
            let t = BigRational::new(BigInt::one(), d);
            v = if e.delta > 0 { v + t } else { v - t };
        }
        if best.as_ref().is_none_or(|(_, b)| v.abs() > b.abs()) {
            best = Some((a, v));
        }
    }
    let (a_star, value) = best.ok_or_else(|| RnfError::Contradiction("no admissible a*".into()))?;
    if value.abs() < bound {
        return Err(RnfError::Contradiction(format!("{k}: |{value}| below bound {bound}")));
    }
    Ok(AStar { a_star, value, bound })
}

/// Value at a fixed `a` (no maximization), exact.
pub fn partial_fraction_value(k: &MultiIndex, a: i64) -> Option<BigRational> {
    if k.entries().iter().any(|e| e.a == a) {
        return None;
    }
    let mut v = BigRational::zero();
    for e in k.entries() {
        let t = BigRational::new(BigInt::one(), BigInt::from((a - e.a) * (a - e.a)));
        v = if e.delta > 0 { v + t } else { v - t };
    }
    Some(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeff::rat;

    fn sextic() -> MultiIndex {
        MultiIndex::from_sides(&[0, 1, 5], &[-1, 3, 4]).unwrap()
    }

    #[test]
    fn a_star_examples() {
        assert_eq!(partial_fraction_value(&sextic(), 2).unwrap(), rat(0, 1));
        let v6 = partial_fraction_value(&sextic(), 6).unwrap();
        let expect = rat(1, 36) + rat(1, 25) + rat(1, 1) - rat(1, 49) - rat(1, 9) - rat(1, 4);
        assert_eq!(v6, expect);
        let r = find_a_star(&sextic()).unwrap();
        assert_ne!(r.a_star, 2);
        assert!(r.value.abs() >= r.bound);
        assert!(v6.abs() >= r.bound);
    }

    #[test]
    fn initial_state_examples() {
        let z = build_initial_state(&ActionField::zeros(3), 0.1, &[0.0; 7], Some(4.0)).unwrap();
        assert_eq!(z.norm_s(1.0), 0.0);
        let mut f = ActionField::zeros(0);
        f.set(0, 1.0);
        let z = build_initial_state(&f, 0.1, &[0.0], None).unwrap();
        assert!((z.xi[0].re - normalizing_constant() * 0.1).abs() < 1e-16);
    }

    #[test]
    fn seeds_determine_streams() {
        let law = SamplingLaw { model: Model::Nls, s: 1.0, window: 4, seed: 9 };
        let a = sample_actions(&law, &mut law.rng(3));
        let b = sample_actions(&law, &mut law.rng(3));
        let c = sample_actions(&law, &mut law.rng(4));
        assert_eq!(a, b);
        assert_ne!(a, c);
        let other = SamplingLaw { seed: 10, ..law.clone() };
        assert_ne!(a, sample_actions(&other, &mut other.rng(3)));
    }

    #[test]
    fn wilson_and_fit() {
        let (lo, hi) = wilson_interval(50, 100);
        assert!(lo < 0.5 && hi > 0.5 && (0.5 - lo - (hi - 0.5)).abs() < 1e-12);
        let f = linear_fit(&[0.0, 1.0, 2.0], &[1.0, 3.0, 5.0]);
        assert!((f.slope - 2.0).abs() < 1e-12 && (f.r_squared - 1.0).abs() < 1e-12);
        assert!(linear_fit(&[0.0, 1.0], &[0.0, 0.0]).r_squared.is_nan());
    }
}
