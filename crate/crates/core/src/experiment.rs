//! Batch experiments: configuration, seeded runs, persisted records and plot tables.
//!
//! A run writes into its output directory:
//! `config.toml` (resolved configuration), `records.jsonl` (one [`ResultRecord`] per line),
//! `timing.json` (wall time) and experiment-specific tables (`diagnostics.csv`, `survey.csv`, ...).

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::dynamics::{action_drift_experiment, flow_generic, integrate, GalerkinHamiltonian, IntegratorConfig};
use crate::error::{Result, RnfError};
use crate::integrable::{Model, ModelParams};
use crate::phase_space::{fd_gradient_scaled, FourierState, Functional};
use crate::poly::{beta_closed_form, birkhoff_normal_form, chi4, extract_z6_oracle, z2_poly, z4_formula, BoundPolynomial};
use crate::rational::{
    bracket, distribute_derivatives_certificate, homological_residual, normal_form_pipeline, random_hamiltonian,
    random_nonresonant_point, solve_homological, subclass_check, Family, HomologicalMode, PipelineConfig,
    PipelineResult, RationalHamiltonian, SubclassTag, TermPool,
};
use crate::resonance::{Catalog, NonResonanceParams};
use crate::stochastic::{estimate_probability_curve, epsilon_sequence_experiment, linear_fit, trial_state, LinearFit, SamplingLaw, XnMode};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Simulate,
    Survey,
    Sequence,
    BirkhoffOracle,
    BracketAudit,
    Pipeline,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialData {
    /// Random data from the sampling law.
    Law,
    /// A single Fourier mode of amplitude `eps`.
    PlaneWave,
}

fn d_model() -> Model {
    Model::Nls
}
fn d_eps() -> f64 {
    0.1
}
fn d_r() -> usize {
    2
}
fn d_s() -> f64 {
    4.0
}
fn d_check_window() -> i64 {
    16
}
fn d_dt() -> f64 {
    1e-2
}
fn d_t_final() -> f64 {
    1.0
}
fn d_trials() -> usize {
    100
}
fn d_one() -> usize {
    1
}
fn d_mode() -> i64 {
    1
}
fn d_phi1() -> f64 {
    1.0
}
fn d_initial() -> InitialData {
    InitialData::Law
}
fn d_sample_every() -> usize {
    100
}
fn d_oversample() -> usize {
    4
}
fn d_n_max() -> usize {
    5
}
fn d_inner() -> usize {
    20
}
fn d_nu() -> f64 {
    0.1
}
fn d_xn() -> XnMode {
    XnMode::Iid
}
fn d_oracle_window() -> i64 {
    8
}
fn d_points() -> usize {
    20
}
fn d_pipeline_window() -> i64 {
    4
}
fn d_envelope() -> f64 {
    3.0
}

/// Parameters of one experiment, read from TOML.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default = "d_model")]
    pub model: Model,
    #[serde(default = "d_eps")]
    pub eps: f64,
    /// Defaults to `eps^{1/3 + 1/12}`.
    #[serde(default)]
    pub gamma: Option<f64>,
    /// Survey curve; defaults to `[gamma]`.
    #[serde(default)]
    pub gammas: Vec<f64>,
    #[serde(default = "d_r")]
    pub r: usize,
    #[serde(default = "d_s")]
    pub s: f64,
    /// Truncation `N` of the truncated set; defaults to `eps^{-(2r-2)/s}`.
    #[serde(default)]
    pub n_cut: Option<f64>,
    /// Use the full set instead of the truncated one.
    #[serde(default)]
    pub full_set: bool,
    /// Sampling window `K`; defaults to `4 * check_window`.
    #[serde(default)]
    pub window: Option<i64>,
    /// Bound on the modes of the quantified multi-indices.
    #[serde(default = "d_check_window")]
    pub check_window: i64,
    #[serde(default = "d_dt")]
    pub dt: f64,
    #[serde(default = "d_t_final")]
    pub t_final: f64,
    #[serde(default = "d_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default = "d_phi1")]
    pub phi1: f64,
    #[serde(default)]
    pub phi2: f64,

    #[serde(default = "d_initial")]
    pub initial: InitialData,
    /// Mode of the plane wave.
    #[serde(default = "d_mode")]
    pub mode: i64,
    /// Screened trajectories of `simulate` with law data; one run writes full diagnostics.
    #[serde(default = "d_one")]
    pub runs: usize,
    /// Drift envelope is `envelope_factor * eps^{5/2}`.
    #[serde(default = "d_envelope")]
    pub envelope_factor: f64,
    #[serde(default = "d_sample_every")]
    pub sample_every: usize,
    #[serde(default = "d_oversample")]
    pub grid_oversample: usize,

    #[serde(default = "d_n_max")]
    pub n_max: usize,
    #[serde(default = "d_inner")]
    pub inner_draws: usize,
    #[serde(default = "d_nu")]
    pub nu: f64,
    #[serde(default = "d_xn")]
    pub xn_mode: XnMode,

    #[serde(default = "d_oracle_window")]
    pub oracle_window: i64,
    /// Sample points per numeric comparison.
    #[serde(default = "d_points")]
    pub points: usize,
    /// Mode window of the normal-form pipeline.
    #[serde(default = "d_pipeline_window")]
    pub pipeline_window: i64,
    /// `eps` grid of the residual scaling; defaults to 6 log-spaced points on `[0.02, 0.1]`.
    #[serde(default)]
    pub eps_grid: Vec<f64>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| RnfError::Config(format!("invalid configuration: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    /// A configuration with every default for `kind`.
    pub fn defaults(kind: ExperimentKind) -> Self {
        Self::from_toml(&format!("experiment = \"{}\"", kind.name())).expect("defaults are valid")
    }

    pub fn gamma(&self) -> f64 {
        self.gamma.unwrap_or_else(|| self.eps.powf(1.0 / 3.0 + 1.0 / 12.0))
    }

    pub fn n_cut(&self) -> f64 {
        self.n_cut.unwrap_or_else(|| self.eps.powf(-(2.0 * self.r as f64 - 2.0) / self.s))
    }

    pub fn window(&self) -> i64 {
        self.window.unwrap_or(4 * self.check_window)
    }

    pub fn eps_grid(&self) -> Vec<f64> {
        if self.eps_grid.is_empty() {
            log_grid(0.02, 0.1, 6)
        } else {
            self.eps_grid.clone()
        }
    }

    pub fn model_params(&self) -> ModelParams {
        let base = match self.model {
            Model::Nls => ModelParams::cubic(self.window()),
            Model::Nlsp => ModelParams::nlsp(self.window()),
        };
        ModelParams { phi1: self.phi1, phi2: self.phi2, ..base }
    }

    pub fn nonresonance(&self) -> NonResonanceParams {
        if self.full_set {
            NonResonanceParams::full(self.model, self.gamma(), self.eps, self.r, self.s, self.check_window)
        } else {
            NonResonanceParams::truncated(self.model, self.gamma(), self.eps, self.r, self.s, self.n_cut(), self.check_window)
        }
    }

    pub fn law(&self) -> SamplingLaw {
        SamplingLaw { model: self.model, s: self.s, window: self.window(), seed: self.seed }
    }

    pub fn integrator(&self) -> IntegratorConfig {
        IntegratorConfig {
            dt: self.dt,
            t_final: self.t_final,
            sample_every: self.sample_every,
            grid_oversample: self.grid_oversample,
            s: self.s,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(RnfError::Config(m));
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return bad(format!("eps = {} must lie in (0, 1)", self.eps));
        }
        if self.gamma() <= 0.0 || self.gammas.iter().any(|&g| g <= 0.0) {
            return bad("gamma values must be positive".into());
        }
        if self.r < 2 {
            return bad(format!("r = {} must be at least 2", self.r));
        }
        if self.s <= 0.0 {
            return bad(format!("s = {} must be positive", self.s));
        }
        if self.check_window < 1 || self.window() < 1 {
            return bad("windows must be at least 1".into());
        }
        if self.n_cut() <= 0.0 {
            return bad("n_cut must be positive".into());
        }
        if !(self.nu > 0.0 && self.nu < 1.0) {
            return bad(format!("nu = {} must lie in (0, 1)", self.nu));
        }
        self.model_params().validate()?;
        self.integrator().validate()?;
        match self.experiment {
            ExperimentKind::Simulate => {
                if self.initial == InitialData::PlaneWave && self.mode.abs() > self.window() {
                    return bad(format!("plane-wave mode {} outside the window {}", self.mode, self.window()));
                }
                if self.runs == 0 {
                    return bad("runs must be at least 1".into());
                }
            }
            ExperimentKind::BirkhoffOracle => {
                if !(1..=12).contains(&self.oracle_window) {
                    return bad(format!("oracle_window = {} must lie in 1..=12", self.oracle_window));
                }
            }
            ExperimentKind::BracketAudit | ExperimentKind::Pipeline => {
                if self.model != Model::Nls {
                    return bad("the rational term algebra is built on the NLS frequencies; set model = \"NLS\"".into());
                }
                if self.experiment == ExperimentKind::Pipeline && !(1..=6).contains(&self.pipeline_window) {
                    return bad(format!("pipeline_window = {} must lie in 1..=6", self.pipeline_window));
                }
                if self.experiment == ExperimentKind::Pipeline && self.r > 4 {
                    return bad(format!("r = {} exceeds the pipeline budget of 4", self.r));
                }
                if self.eps_grid.iter().any(|&e| !(e > 0.0 && e < 1.0)) {
                    return bad("eps_grid values must lie in (0, 1)".into());
                }
            }
            ExperimentKind::Survey | ExperimentKind::Sequence => {}
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("configuration serializes");
        format!("{:x}", Sha256::digest(text.as_bytes()))
    }
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Simulate => "simulate",
            Self::Survey => "survey",
            Self::Sequence => "sequence",
            Self::BirkhoffOracle => "birkhoff-oracle",
            Self::BracketAudit => "bracket-audit",
            Self::Pipeline => "pipeline",
        }
    }
}

/// `n` points from `lo` to `hi`, equally spaced in log scale.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n).map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64)).collect()
}

/// One persisted result line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub config_hash: String,
    pub version: String,
    pub experiment: ExperimentKind,
    /// What the metrics describe, e.g. `gamma-point` or `diagnostic`.
    pub kind: String,
    pub seed: u64,
    pub index: usize,
    pub metrics: BTreeMap<String, f64>,
    #[serde(default)]
    pub verdict: Option<String>,
    #[serde(default)]
    pub detail: Option<serde_json::Value>,
}

impl ResultRecord {
    pub fn metric(&self, name: &str) -> Result<f64> {
        self.metrics
            .get(name)
            .copied()
            .ok_or_else(|| RnfError::MissingField(format!("record {} ({}) has no `{name}`", self.index, self.kind)))
    }
}

struct Recorder<'a> {
    cfg: &'a ExperimentConfig,
    hash: String,
    records: Vec<ResultRecord>,
}

impl<'a> Recorder<'a> {
    fn new(cfg: &'a ExperimentConfig) -> Self {
        Self { cfg, hash: cfg.hash(), records: vec![] }
    }

    fn push(&mut self, kind: &str, metrics: &[(&str, f64)], verdict: Option<String>, detail: Option<serde_json::Value>) {
        self.records.push(ResultRecord {
            config_hash: self.hash.clone(),
            version: env!("CARGO_PKG_VERSION").into(),
            experiment: self.cfg.experiment,
            kind: kind.into(),
            seed: self.cfg.seed,
            index: self.records.len(),
            metrics: metrics.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            verdict,
            detail,
        });
    }
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub out_dir: PathBuf,
    pub records: Vec<ResultRecord>,
    pub files: Vec<PathBuf>,
    pub wall_time_s: f64,
}

fn csv_writer(dir: &Path, name: &str, header: &str, files: &mut Vec<PathBuf>) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    let mut w = BufWriter::new(File::create(&path)?);
    writeln!(w, "{header}")?;
    files.push(path);
    Ok(w)
}

/// Runs the experiment and persists its outputs under `out_dir`.
pub fn run(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    fs::create_dir_all(out_dir)?;
    let mut files = Vec::new();
    let cfg_path = out_dir.join("config.toml");
    fs::write(&cfg_path, toml::to_string(cfg).map_err(|e| RnfError::Config(e.to_string()))?)?;
    files.push(cfg_path);

    let mut rec = Recorder::new(cfg);
    match cfg.experiment {
        ExperimentKind::Simulate => run_simulate(cfg, out_dir, &mut rec, &mut files)?,
        ExperimentKind::Survey => run_survey(cfg, out_dir, &mut rec, &mut files)?,
        ExperimentKind::Sequence => run_sequence(cfg, out_dir, &mut rec, &mut files)?,
        ExperimentKind::BirkhoffOracle => run_oracle(cfg, out_dir, &mut rec, &mut files)?,
        ExperimentKind::BracketAudit => run_bracket_audit(cfg, out_dir, &mut rec, &mut files)?,
        ExperimentKind::Pipeline => run_pipeline(cfg, out_dir, &mut rec, &mut files)?,
    }

    let rec_path = out_dir.join("records.jsonl");
    let mut w = BufWriter::new(File::create(&rec_path)?);
    for r in &rec.records {
        serde_json::to_writer(&mut w, r)?;
        writeln!(w)?;
    }
    w.flush()?;
    files.push(rec_path);
    let wall_time_s = start.elapsed().as_secs_f64();
    let timing = out_dir.join("timing.json");
    fs::write(&timing, serde_json::to_string_pretty(&json!({ "config_hash": rec.hash, "wall_time_s": wall_time_s }))?)?;
    files.push(timing);
    Ok(RunOutcome { out_dir: out_dir.to_path_buf(), records: rec.records, files, wall_time_s })
}

fn plane_wave(window: i64, mode: i64, amplitude: f64) -> FourierState {
    let mut z = FourierState::zeros(window);
    z.set_xi(mode, Complex64::new(amplitude, 0.0));
    z
}

fn run_simulate(cfg: &ExperimentConfig, dir: &Path, rec: &mut Recorder, files: &mut Vec<PathBuf>) -> Result<()> {
    let p = cfg.model_params();
    let icfg = cfg.integrator();
    if cfg.initial == InitialData::Law && cfg.runs > 1 {
        let q = cfg.nonresonance();
        let cat = Catalog::for_params(&q)?;
        let summary = action_drift_experiment(&cfg.law(), &p, &q, &cat, &icfg, cfg.runs, cfg.envelope_factor)?;
        let mut w = csv_writer(dir, "drift_runs.csv", "trial,max_D_s,envelope,within,final_torus_dist,torus_exponent,rel_mass_drift", files)?;
        for r in &summary.runs {
            writeln!(
                w,
                "{},{:e},{:e},{},{:e},{},{:e}",
                r.trial, r.max_drift, r.envelope, r.within_envelope, r.final_torus_dist, r.torus_exponent, r.relative_mass_drift
            )?;
            rec.push(
                "drift-run",
                &[
                    ("trial", r.trial as f64),
                    ("max_D_s", r.max_drift),
                    ("envelope", r.envelope),
                    ("torus_exponent", r.torus_exponent),
                    ("rel_mass_drift", r.relative_mass_drift),
                ],
                Some(if r.within_envelope { "within" } else { "exceeded" }.into()),
                Some(serde_json::to_value(&r.verdict)?),
            );
        }
        rec.push(
            "drift-summary",
            &[("passes", summary.passes() as f64), ("runs", summary.runs.len() as f64), ("screened_out", summary.screened_out as f64)],
            None,
            None,
        );
        return Ok(());
    }
    let z0 = match cfg.initial {
        InitialData::PlaneWave => plane_wave(cfg.window(), cfg.mode, cfg.eps),
        InitialData::Law => trial_state(&cfg.law(), cfg.eps, 0)?.1,
    };
    let tr = integrate(&z0, &p, &icfg)?;
    let w = BufWriter::new(File::create(dir.join("diagnostics.csv"))?);
    tr.diagnostics.write_csv(w)?;
    files.push(dir.join("diagnostics.csv"));
    let mut actions = csv_writer(dir, "actions.csv", "a,I_a_initial,I_a_final", files)?;
    for a in z0.modes() {
        writeln!(actions, "{a},{:e},{:e}", z0.xi_at(a).norm_sqr(), tr.final_state.xi_at(a).norm_sqr())?;
    }
    for d in &tr.diagnostics.samples {
        rec.push(
            "diagnostic",
            &[("t", d.t), ("mass", d.mass), ("energy", d.energy), ("D_s", d.drift), ("norm_s", d.norm_s), ("torus_dist", d.torus_dist)],
            None,
            None,
        );
    }
    Ok(())
}

fn run_survey(cfg: &ExperimentConfig, dir: &Path, rec: &mut Recorder, files: &mut Vec<PathBuf>) -> Result<()> {
    let mut w = csv_writer(dir, "survey.csv", "gamma,trials,members,violated,inconclusive,p_hat,failure_rate,ci_low,ci_high", files)?;
    if cfg.trials == 0 {
        return Ok(());
    }
    let q = cfg.nonresonance();
    let p = cfg.model_params();
    let cat = Catalog::for_params(&q)?;
    let gammas = if cfg.gammas.is_empty() { vec![cfg.gamma()] } else { cfg.gammas.clone() };
    let (est, trials) = estimate_probability_curve(&cfg.law(), &q, &p, &gammas, cfg.trials, &cat)?;
    for e in &est {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            e.gamma, e.trials, e.members, e.violated, e.inconclusive, e.p_hat, e.failure_rate(), e.ci_low, e.ci_high
        )?;
        rec.push(
            "gamma-point",
            &[
                ("gamma", e.gamma),
                ("trials", e.trials as f64),
                ("p_hat", e.p_hat),
                ("failure_rate", e.failure_rate()),
                ("ci_low", e.ci_low),
                ("ci_high", e.ci_high),
                ("inconclusive_fraction", e.inconclusive_fraction()),
            ],
            None,
            None,
        );
    }
    let path = dir.join("trials.jsonl");
    let mut tw = BufWriter::new(File::create(&path)?);
    for t in &trials {
        serde_json::to_writer(&mut tw, t)?;
        writeln!(tw)?;
    }
    files.push(path);
    Ok(())
}

fn run_sequence(cfg: &ExperimentConfig, dir: &Path, rec: &mut Recorder, files: &mut Vec<PathBuf>) -> Result<()> {
    let q = cfg.nonresonance();
    let p = cfg.model_params();
    let cat = Catalog::for_params(&q)?;
    let rep = epsilon_sequence_experiment(cfg.eps, &cfg.law(), &q, &p, cfg.n_max, cfg.xn_mode, cfg.trials, cfg.inner_draws, cfg.nu, &cat)?;
    let mut w = csv_writer(dir, "sequence.csv", "n,eps_n_nominal,member_frequency", files)?;
    for (n, f) in rep.per_n_member.iter().enumerate() {
        let eps_n = cfg.eps * 2f64.powi(-(n as i32));
        writeln!(w, "{n},{eps_n},{f}")?;
        rec.push("sequence-n", &[("n", n as f64), ("eps_n", eps_n), ("member_frequency", *f)], None, None);
    }
    rec.push(
        "sequence-summary",
        &[("outer_fraction", rep.outer_fraction), ("nu", rep.nu), ("inconclusive", rep.inconclusive as f64)],
        None,
        Some(json!({ "inner_frequency": rep.inner_frequency })),
    );
    Ok(())
}

fn run_oracle(cfg: &ExperimentConfig, dir: &Path, rec: &mut Recorder, files: &mut Vec<PathBuf>) -> Result<()> {
    let oracle = extract_z6_oracle(cfg.oracle_window)?;
    let gens = cfg.model_params().gens();
    let mut w = csv_writer(dir, "beta.csv", "a,b,beta,expected,match", files)?;
    let mut mismatches = 0;
    for (&(a, b), c) in &oracle.beta {
        let expected = beta_closed_form(a, b);
        let ok = *c == expected;
        mismatches += !ok as usize;
        writeln!(w, "{a},{b},{c},{expected},{ok}")?;
        rec.push(
            "beta",
            &[("a", a as f64), ("b", b as f64), ("beta", c.eval(&gens).re), ("expected", expected.eval(&gens).re)],
            Some(if ok { "match" } else { "mismatch" }.into()),
            Some(json!({ "beta": c.to_string(), "expected": expected.to_string() })),
        );
    }
    let nonzero_alpha = oracle.alpha.values().filter(|c| !c.is_zero()).count();
    let nonzero_gamma = oracle.gamma.values().filter(|c| !c.is_zero()).count();
    rec.push(
        "oracle-summary",
        &[
            ("window", cfg.oracle_window as f64),
            ("beta_mismatches", mismatches as f64),
            ("nonzero_alpha", nonzero_alpha as f64),
            ("nonzero_gamma", nonzero_gamma as f64),
        ],
        Some(if mismatches + nonzero_alpha + nonzero_gamma == 0 { "exact" } else { "mismatch" }.into()),
        None,
    );
    Ok(())
}

/// Outcome of one randomized bracket-closure check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BracketAuditRecord {
    pub pair: usize,
    pub left: SubclassTag,
    pub right: SubclassTag,
    pub left_terms: usize,
    pub right_terms: usize,
    pub output_terms: usize,
    pub order_ok: bool,
    pub subclass_ok: bool,
    /// The history counters produced by the bracket are themselves witnesses.
    pub stored_alpha_ok: bool,
    pub weight_ok: bool,
    pub certificate_ok: bool,
    pub max_relative_error: f64,
    pub note: Option<String>,
}

impl BracketAuditRecord {
    pub fn passed(&self, tol: f64) -> bool {
        self.order_ok && self.subclass_ok && self.weight_ok && self.certificate_ok && self.max_relative_error <= tol
    }
}

/// The subclass pairs of the closure audit: `(H*_{r,omega}, H_{r',omega})` with `r in 2..=4`,
/// `r' in 3..=4`, and `(H*_{r,Omega}, H_{4,Omega})` with `r in 2..=4`.
pub fn audit_pairs() -> Vec<(SubclassTag, SubclassTag)> {
    let t = |family, star, r| SubclassTag { family, star, r };
    let mut out = Vec::new();
    for r in 2..=4 {
        for rp in 3..=4 {
            out.push((t(Family::Omega, true, r), t(Family::Omega, false, rp)));
        }
        out.push((t(Family::BigOmega, true, r), t(Family::BigOmega, false, 4)));
    }
    out
}

/// Brackets `pairs` random pairs drawn over [`audit_pairs`] on the window-3 pool and checks order,
/// subclass, weight bound, certificate and agreement with the numeric Poisson bracket.
pub fn bracket_audit(pairs: usize, seed: u64, points: usize, p: &ModelParams) -> Result<Vec<BracketAuditRecord>> {
    let pool = TermPool::new(3, 3)?;
    let kinds = audit_pairs();
    (0..pairs)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let (lt, rt) = kinds[i % kinds.len()];
            let a = random_hamiltonian(lt, &pool, rng.random_range(1..=2), rng.random_bool(0.5), &mut rng)?;
            let b = random_hamiltonian(rt, &pool, rng.random_range(1..=2), rng.random_bool(0.5), &mut rng)?;
            let ab = bracket(&a, &b, p, 1_000_000)?;
            let expected = SubclassTag { family: rt.family, star: false, r: lt.r + rt.r - 1 };
            let order_ok = ab.terms.iter().all(|t| t.order() == expected.r);
            let (subclass_ok, stored_alpha_ok, note) = match subclass_check(&ab, expected) {
                Ok(w) => (true, w.stored_alpha_valid || expected.family == Family::Omega, None),
                Err(e) => (false, false, Some(e.to_string())),
            };
            let weight_ok = ab.weight() <= a.weight().max(b.weight());
            let certificate_ok = distribute_derivatives_certificate(&ab, 6.0 * expected.r as f64).is_ok();
            let both = a.add(&b).add(&ab);
            let (ba, bb) = (a.bind(p, None), b.bind(p, None));
            let mut max_relative_error: f64 = 0.0;
            for _ in 0..points {
                let z = random_nonresonant_point(&both, p, 0.5, &mut rng)?;
                let exact = crate::phase_space::poisson_numeric(&ba, &bb, &z)?;
                let sym = ab.evaluate(&z, p, None)?;
                max_relative_error = max_relative_error.max((sym - exact).norm() / exact.norm().max(f64::MIN_POSITIVE));
            }
            Ok(BracketAuditRecord {
                pair: i,
                left: lt,
                right: rt,
                left_terms: a.len(),
                right_terms: b.len(),
                output_terms: ab.len(),
                order_ok,
                subclass_ok,
                stored_alpha_ok,
                weight_ok,
                certificate_ok,
                max_relative_error,
                note,
            })
        })
        .collect()
}

/// Residual of one randomized homological solve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HomologicalAuditRecord {
    pub input: usize,
    pub mode: HomologicalMode,
    pub input_tag: SubclassTag,
    pub terms: usize,
    pub residual: f64,
}

/// Solves `inputs` random irreducible Hamiltonians in each mode: `H_{3,omega}` against `Z4`
/// and `H_{r,Omega}`, `r in 4..=5`, against `Z4 + Z6`.
pub fn homological_audit(inputs: usize, seed: u64, points: usize, p: &ModelParams) -> Result<Vec<HomologicalAuditRecord>> {
    let pool = TermPool::new(3, 3)?;
    let jobs: Vec<(usize, HomologicalMode)> =
        (0..inputs).flat_map(|i| [(i, HomologicalMode::Z4), (i, HomologicalMode::Z4Z6)]).collect();
    jobs.into_par_iter()
        .enumerate()
        .map(|(j, (i, mode))| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(j as u64);
            let tag = match mode {
                HomologicalMode::Z4 => SubclassTag { family: Family::Omega, star: false, r: 3 },
                HomologicalMode::Z4Z6 => SubclassTag { family: Family::BigOmega, star: false, r: 4 + (i % 2) as i64 },
            };
            let h = random_hamiltonian(tag, &pool, rng.random_range(1..=2), false, &mut rng)?;
            let chi = solve_homological(&h, mode)?;
            let pts = (0..points).map(|_| random_nonresonant_point(&chi, p, 0.5, &mut rng)).collect::<Result<Vec<_>>>()?;
            let residual = homological_residual(&h, &chi, mode, p, &pts)?;
            Ok(HomologicalAuditRecord { input: i, mode, input_tag: tag, terms: h.len(), residual })
        })
        .collect()
}

fn run_bracket_audit(cfg: &ExperimentConfig, dir: &Path, rec: &mut Recorder, files: &mut Vec<PathBuf>) -> Result<()> {
    let p = cfg.model_params();
    let audit = bracket_audit(cfg.trials, cfg.seed, cfg.points, &p)?;
    let mut w = csv_writer(
        dir,
        "bracket_audit.csv",
        "pair,left,right,output_terms,order_ok,subclass_ok,stored_alpha_ok,weight_ok,certificate_ok,max_relative_error",
        files,
    )?;
    for a in &audit {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{:e}",
            a.pair, a.left, a.right, a.output_terms, a.order_ok, a.subclass_ok, a.stored_alpha_ok, a.weight_ok, a.certificate_ok, a.max_relative_error
        )?;
        rec.push(
            "bracket-pair",
            &[("output_terms", a.output_terms as f64), ("max_relative_error", a.max_relative_error)],
            Some(if a.passed(1e-9) { "pass" } else { "fail" }.into()),
            Some(serde_json::to_value(a)?),
        );
    }
    Ok(())
}

/// `tau_4`: time-one flow of `chi_4` on the state window.
pub struct QuarticNormalizer {
    chi: BoundPolynomial,
    flow: IntegratorConfig,
}

impl QuarticNormalizer {
    pub fn new(window: i64, p: &ModelParams, steps: usize) -> Result<Self> {
        let chi = chi4(window)?.bind(&p.gens());
        Ok(Self { chi, flow: IntegratorConfig { ode_fixed_steps: Some(steps), ..Default::default() } })
    }

    pub fn apply(&self, z: &FourierState) -> Result<FourierState> {
        flow_generic(&self.chi, z, 1.0, &self.flow)
    }
}

/// `R = H o tau_4 - Z2 - Z4` for the Galerkin Hamiltonian of `p` on a fixed window.
pub struct QuarticRemainder {
    tau: QuarticNormalizer,
    full: GalerkinHamiltonian,
    z2: BoundPolynomial,
    z4: BoundPolynomial,
}

impl QuarticRemainder {
    pub fn new(window: i64, p: &ModelParams, steps: usize) -> Result<Self> {
        let gens = p.gens();
        Ok(Self {
            tau: QuarticNormalizer::new(window, p, steps)?,
            full: GalerkinHamiltonian::new(window, p, 4, 8),
            z2: z2_poly(window).bind(&gens),
            z4: z4_formula(window).bind(&gens),
        })
    }

    pub fn value(&self, z: &FourierState) -> Result<Complex64> {
        Ok(self.full.value(&self.tau.apply(z)?)? - self.z2.value(z)? - self.z4.value(z)?)
    }

    /// `||X_R(z)||_s` from central differences of `R` with steps `1e-3` times the largest coordinate.
    pub fn vector_field_norm(&self, z: &FourierState, s: f64) -> Result<f64> {
        let scale = z.xi.iter().map(|c| c.norm()).fold(0.0, f64::max);
        Ok(fd_gradient_scaled(|w| self.value(w), z, 1e-3, scale)?.vector_field(z.reality).norm_s(s))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualScaling {
    pub eps: Vec<f64>,
    /// Largest `||X_R||_s` over the directions at each `eps`.
    pub residual: Vec<f64>,
    pub fit: LinearFit,
}

/// `||X_R(eps z_j)||_s` over unit directions `z_j` and the log-log slope against `eps`.
pub fn residual_scaling(window: i64, p: &ModelParams, eps: &[f64], directions: usize, s: f64, seed: u64) -> Result<ResidualScaling> {
    let rem = QuarticRemainder::new(window, p, 40)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dirs: Vec<FourierState> = (0..directions)
        .map(|_| {
            let z = FourierState::random_real(window, 1.0, s + 1.0, &mut rng);
            let n = z.norm_s(s);
            z.scaled(1.0 / n)
        })
        .collect();
    let residual = eps
        .par_iter()
        .map(|&e| dirs.iter().map(|d| rem.vector_field_norm(&d.scaled(e), s)).try_fold(0.0f64, |m, r| r.map(|r| m.max(r))))
        .collect::<Result<Vec<f64>>>()?;
    let lx: Vec<f64> = eps.iter().map(|e| e.ln()).collect();
    let ly: Vec<f64> = residual.iter().map(|r| r.ln()).collect();
    Ok(ResidualScaling { eps: eps.to_vec(), residual, fit: linear_fit(&lx, &ly) })
}

/// The rational pipeline on the resonant Birkhoff terms of half-degree `3..=r` on `window`.
pub fn birkhoff_pipeline(window: i64, r: usize, p: &ModelParams, seed: u64, samples: &[FourierState]) -> Result<PipelineResult> {
    let bnf = birkhoff_normal_form(window, r)?;
    let mut h = RationalHamiltonian::new(window);
    for m in 3..=r {
        let part = if m == 3 { bnf.irreducible(m) } else { bnf.resonant.get(&m).cloned().unwrap_or_default() };
        h = h.add(&RationalHamiltonian::from_polynomial(&part, p, window));
    }
    let cfg = PipelineConfig { seed, ..PipelineConfig::new(r as i64) };
    let flow = IntegratorConfig { ode_fixed_steps: Some(40), ..Default::default() };
    normal_form_pipeline(&h, p, None, &cfg, samples, &flow)
}

fn run_pipeline(cfg: &ExperimentConfig, dir: &Path, rec: &mut Recorder, files: &mut Vec<PathBuf>) -> Result<()> {
    let p = ModelParams { tail_window: cfg.pipeline_window, ..cfg.model_params() };
    let sc = residual_scaling(cfg.pipeline_window, &p, &cfg.eps_grid(), 3, cfg.s, cfg.seed)?;
    let mut w = csv_writer(dir, "residual.csv", "eps,residual", files)?;
    for (e, r) in sc.eps.iter().zip(&sc.residual) {
        writeln!(w, "{e},{r:e}")?;
        rec.push("residual", &[("eps", *e), ("residual", *r)], None, None);
    }
    let target = 2.0 * 2.0 + 1.0;
    rec.push(
        "residual-fit",
        &[("slope", sc.fit.slope), ("r_squared", sc.fit.r_squared), ("target", target)],
        Some(if (sc.fit.slope - target).abs() <= 0.15 * target { "within" } else { "outside" }.into()),
        None,
    );

    let tau = QuarticNormalizer::new(cfg.pipeline_window, &p, 40)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7a7a);
    let mut tw = csv_writer(dir, "tau.csv", "eps,sample,displacement,bound", files)?;
    for &e in &[cfg.eps / 2.0, cfg.eps] {
        for j in 0..cfg.points.min(20) {
            let d = FourierState::random_real(cfg.pipeline_window, 1.0, cfg.s + 1.0, &mut rng);
            let z = d.scaled(e / d.norm_s(cfg.s));
            let disp = tau.apply(&z)?.difference(&z).norm_s(cfg.s);
            writeln!(tw, "{e},{j},{disp:e},{:e}", e.powf(1.5))?;
            rec.push("tau", &[("eps", e), ("displacement", disp), ("bound", e.powf(1.5))], None, None);
        }
    }

    if cfg.r >= 3 {
        let window = cfg.pipeline_window.min(3);
        let pr = ModelParams { tail_window: window, ..p };
        let res = birkhoff_pipeline(window, cfg.r, &pr, cfg.seed, &[])?;
        let path = dir.join("pipeline.json");
        fs::write(&path, serde_json::to_string_pretty(&res.stages)?)?;
        files.push(path);
        for st in &res.stages {
            rec.push(
                "pipeline-stage",
                &[
                    ("order", st.order as f64),
                    ("eliminated_terms", st.eliminated_terms as f64),
                    ("generator_terms", st.generator_terms as f64),
                    ("generator_weight", st.generator_weight),
                    ("homological_residual", st.homological_residual),
                ],
                Some(if st.certificate_ok { "certified" } else { "uncertified" }.into()),
                Some(serde_json::to_value(st)?),
            );
        }
    }
    Ok(())
}

/// Reads `records.jsonl`.
pub fn read_records(path: &Path) -> Result<Vec<ResultRecord>> {
    let f = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in f.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// Writes the plot tables found in `records` into `out_dir`:
/// `gamma_failure.csv` (`gamma,failure_rate,ci_low,ci_high` with the interval on the failure rate),
/// `drift.csv` (`t,D_s`) and `eps_residual.csv` (`eps,residual`).
pub fn emit_plotdata(records: &[ResultRecord], out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir)?;
    let mut files = Vec::new();
    let pick = |kind: &str| records.iter().filter(move |r| r.kind == kind).collect::<Vec<_>>();
    let tables: [(&str, &str, Vec<&ResultRecord>, &[&str]); 3] = [
        ("gamma_failure.csv", "gamma,failure_rate,ci_low,ci_high", pick("gamma-point"), &["gamma", "failure_rate", "ci_high", "ci_low"]),
        ("drift.csv", "t,D_s", pick("diagnostic"), &["t", "D_s"]),
        ("eps_residual.csv", "eps,residual", pick("residual"), &["eps", "residual"]),
    ];
    for (name, header, rows, fields) in tables {
        if rows.is_empty() {
            continue;
        }
        let mut w = csv_writer(out_dir, name, header, &mut files)?;
        for r in rows {
            let v = fields.iter().map(|f| r.metric(f)).collect::<Result<Vec<f64>>>()?;
            if name == "gamma_failure.csv" {
                writeln!(w, "{},{},{},{}", v[0], v[1], 1.0 - v[2], 1.0 - v[3])?;
            } else {
                writeln!(w, "{},{:e}", v[0], v[1])?;
            }
        }
    }
    if files.is_empty() {
        return Err(RnfError::MissingField("no records carry plottable curves".into()));
    }
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(name: &str) -> PathBuf {
        let d = std::env::temp_dir().join(format!("rnf-exp-{name}-{}", std::process::id()));
        let _ = fs::remove_dir_all(&d);
        d
    }

    #[test]
    fn defaults_follow_the_parameter_laws() {
        let c = ExperimentConfig::defaults(ExperimentKind::Survey);
        assert!((c.gamma() - 0.1f64.powf(5.0 / 12.0)).abs() < 1e-15);
        assert!((c.n_cut() - 0.1f64.powf(-0.5)).abs() < 1e-12);
        assert_eq!(c.window(), 64);
    }

    #[test]
    fn invalid_configs_are_rejected_with_messages() {
        let e = ExperimentConfig::from_toml("experiment = \"survey\"\neps = 2.0").unwrap_err();
        assert!(e.to_string().contains("eps"));
        assert!(ExperimentConfig::from_toml("experiment = \"pipeline\"\nmodel = \"NLSP\"").is_err());
        assert!(ExperimentConfig::from_toml("experiment = \"survey\"\nbogus = 1").is_err());
        assert!(ExperimentConfig::from_toml("experiment = \"dance\"").is_err());
    }

    #[test]
    fn hash_tracks_configuration() {
        let a = ExperimentConfig::defaults(ExperimentKind::Survey);
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn empty_survey_succeeds() {
        let cfg = ExperimentConfig::from_toml("experiment = \"survey\"\ntrials = 0").unwrap();
        let dir = tmp("empty");
        let out = run(&cfg, &dir).unwrap();
        assert!(out.records.is_empty());
        assert_eq!(fs::read_to_string(dir.join("records.jsonl")).unwrap(), "");
        assert_eq!(fs::read_to_string(dir.join("survey.csv")).unwrap().lines().count(), 1);
    }

    #[test]
    fn plane_wave_keeps_its_action() {
        let cfg = ExperimentConfig::from_toml(
            "experiment = \"simulate\"\ninitial = \"plane-wave\"\nwindow = 4\nt_final = 2.0\nsample_every = 20",
        )
        .unwrap();
        let dir = tmp("plane");
        run(&cfg, &dir).unwrap();
        let text = fs::read_to_string(dir.join("actions.csv")).unwrap();
        let row = text.lines().find(|l| l.starts_with("1,")).unwrap();
        let v: Vec<f64> = row.split(',').skip(1).map(|x| x.parse().unwrap()).collect();
        assert!((v[0] - v[1]).abs() < 1e-14 && (v[0] - 0.01).abs() < 1e-15);
        let recs = read_records(&dir.join("records.jsonl")).unwrap();
        assert!(recs.iter().all(|r| r.metric("D_s").unwrap() < 1e-12));
        let plots = emit_plotdata(&recs, &dir.join("plot")).unwrap();
        assert_eq!(plots.len(), 1);
    }

    #[test]
    fn plotdata_needs_fields() {
        let cfg = ExperimentConfig::defaults(ExperimentKind::Survey);
        let mut rec = Recorder::new(&cfg);
        rec.push("gamma-point", &[("gamma", 0.1)], None, None);
        let e = emit_plotdata(&rec.records, &tmp("missing")).unwrap_err();
        assert!(matches!(e, RnfError::MissingField(_)));
        assert!(emit_plotdata(&[], &tmp("none")).is_err());
    }

    #[test]
    fn small_bracket_audit_passes() {
        let p = ModelParams { phi2: 0.5, ..ModelParams::cubic(3) };
        let audit = bracket_audit(9, 11, 3, &p).unwrap();
        for a in &audit {
            assert!(a.passed(1e-9), "{a:?}");
        }
    }

    #[test]
    fn runs_are_reproducible() {
        let text = "experiment = \"survey\"\ntrials = 20\ncheck_window = 4\nr = 2\nfull_set = true\ngammas = [0.1, 0.01]";
        let cfg = ExperimentConfig::from_toml(text).unwrap();
        let a = run(&cfg, &tmp("rep-a")).unwrap();
        let b = run(&cfg, &tmp("rep-b")).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.records.len(), 2);
    }

    #[test]
    fn quartic_remainder_scales_like_eps_to_the_fifth() {
        let p = ModelParams::cubic(3);
        let sc = residual_scaling(3, &p, &log_grid(0.02, 0.1, 4), 2, 4.0, 5).unwrap();
        assert!((sc.fit.slope - 5.0).abs() < 0.5, "{sc:?}");
        let tau = QuarticNormalizer::new(3, &p, 40).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = FourierState::random_real(3, 1.0, 1.0, &mut rng);
        let z = d.scaled(0.1 / d.norm_s(4.0));
        let disp = tau.apply(&z).unwrap().difference(&z).norm_s(4.0);
        assert!(disp > 0.0 && disp < 0.1f64.powf(2.5), "{disp}");
    }
}
