//! Membership in the non-resonant sets, with tail-aware verdicts, and the stability checks
//! relating the full and truncated sets.

use serde::{Deserialize, Serialize};

use crate::error::{Result, RnfError};
use crate::index::{enumerate_class, gauge, ClassTag, MultiIndex, DEFAULT_ENUMERATION_CAP};
use crate::integrable::{ActionSums, Model, ModelParams};
use crate::phase_space::{ActionField, FourierState};

/// Which family of conditions a check uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetKind {
    Full,
    Truncated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NonResonanceParams {
    pub gamma: f64,
    pub eps: f64,
    pub r: usize,
    pub s: f64,
    /// Truncation parameter `N`.
    pub n_cut: f64,
    pub model: Model,
    /// Bound on `|a|` for the quantified multi-indices.
    pub check_window: i64,
    /// Maximal number of entries of the quantified multi-indices.
    pub length_cap: usize,
    pub kind: SetKind,
}

impl NonResonanceParams {
    /// Full set: lengths up to `2r`.
    pub fn full(model: Model, gamma: f64, eps: f64, r: usize, s: f64, check_window: i64) -> Self {
        Self { gamma, eps, r, s, n_cut: 1.0, model, check_window, length_cap: 2 * r, kind: SetKind::Full }
    }

    /// Truncated set: lengths up to `7r` (NLS) or `2r` (NLSP), and `<mu_1(k)> <= N^2`.
    pub fn truncated(model: Model, gamma: f64, eps: f64, r: usize, s: f64, n_cut: f64, check_window: i64) -> Self {
        let length_cap = if model == Model::Nls { 7 * r } else { 2 * r };
        Self { gamma, eps, r, s, n_cut, model, check_window, length_cap, kind: SetKind::Truncated }
    }

    /// `24 r` (NLS) or `16 r` (NLSP).
    pub fn alpha_r(&self) -> f64 {
        match self.model {
            Model::Nls => 24.0 * self.r as f64,
            Model::Nlsp => 16.0 * self.r as f64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.eps > 0.0 && self.n_cut >= 1.0 && self.r >= 1 && self.s >= 0.0) {
            return Err(RnfError::Config(format!("invalid non-resonance parameters {self:?}")));
        }
        Ok(())
    }
}

/// The quantity compared with its floor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Omega,
    OmegaTilde,
    OmegaBig,
    OmegaNlsp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub k: MultiIndex,
    pub condition: Condition,
    pub value: f64,
    pub floor: f64,
    pub margin: f64,
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    Member { worst_margin: f64 },
    Violated(Violation),
    Inconclusive(Violation),
}

impl Verdict {
    pub fn is_member(&self) -> bool {
        matches!(self, Verdict::Member { .. })
    }

    pub fn is_inconclusive(&self) -> bool {
        matches!(self, Verdict::Inconclusive(_))
    }

    pub fn label(&self) -> &'static str {
        match self {
            Verdict::Member { .. } => "member",
            Verdict::Violated(_) => "violated",
            Verdict::Inconclusive(_) => "inconclusive",
        }
    }
}

/// Irreducible resonant multi-indices with entries in `[-window, window]` and at most `max_len` entries.
#[derive(Clone, Debug)]
pub struct Catalog {
    pub window: i64,
    pub max_len: usize,
    pub items: Vec<CatalogItem>,
}

#[derive(Clone, Debug)]
pub struct CatalogItem {
    pub k: MultiIndex,
    /// `prod <k_alpha>^2`
    pub gauge_sq_prod: f64,
    pub mu_min: f64,
    pub mu_max: f64,
}

impl Catalog {
    pub fn new(window: i64, max_len: usize) -> Result<Self> {
        let mut items = Vec::new();
        for m in 1..=max_len / 2 {
            for k in enumerate_class(m, window, ClassTag::R, true, DEFAULT_ENUMERATION_CAP)? {
                items.push(CatalogItem {
                    gauge_sq_prod: k.gauge_sq_product(),
                    mu_min: k.mu_min().unwrap(),
                    mu_max: k.mu_max().unwrap(),
                    k,
                });
            }
        }
        Ok(Self { window, max_len, items })
    }

    pub fn for_params(q: &NonResonanceParams) -> Result<Self> {
        Self::new(q.check_window, q.length_cap)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Per-`k` data independent of `gamma`: ratio `x = |D| / B` and residual ratio `rho = residual / B`,
/// so that the condition at `gamma` reads `x > gamma`, decided only when `|x - gamma| > rho`.
#[derive(Clone, Debug)]
pub struct Ratio {
    pub item: usize,
    pub condition: Condition,
    pub value: f64,
    /// Floor per unit `gamma`.
    pub unit_floor: f64,
    pub residual: f64,
}

impl Ratio {
    pub fn x(&self) -> f64 {
        self.value.abs() / self.unit_floor
    }

    pub fn rho(&self) -> f64 {
        self.residual / self.unit_floor
    }
}

/// Bound on the neglected part of `sum_{|b| > K_t} I_b^p / (a - b)^2` from `|I|_s`.
fn tail_kernel_bound(i_s: f64, s: f64, tail: i64, a: i64, p: i32) -> f64 {
    let gap = (tail - a.abs()).max(1) as f64;
    (i_s * gauge(tail + 1).powf(-2.0 * s)).powi(p) * 2.0 / gap
}

/// `sum_{|b| > K_t} I_b` bounded via `|I|_s`.
fn tail_sum_bound(i_s: f64, s: f64, tail: i64) -> f64 {
    let t = (tail + 1) as f64;
    if s > 0.5 {
        2.0 * i_s * (t.powf(1.0 - 2.0 * s) / (2.0 * s - 1.0) + t.powf(-2.0 * s))
    } else {
        f64::INFINITY
    }
}

/// Floors per unit `gamma` of the `omega` and `Omega` conditions from `prod <k_alpha>^2` and
/// `<mu_min(k)>`; NLSP has a single floor, returned twice.
fn unit_floors(gauge_sq_prod: f64, mu_min: f64, q: &NonResonanceParams) -> (f64, f64) {
    let eps2 = q.eps * q.eps;
    let eps4 = eps2 * eps2;
    let n_pow = q.n_cut.powf(-q.alpha_r());
    let mu_s = mu_min.powf(-2.0 * q.s);
    match (q.model, q.kind) {
        (Model::Nls, SetKind::Full) => (eps2 / gauge_sq_prod * mu_s, gauge_sq_prod.powi(-3) * (eps2 * mu_s).max(eps4)),
        (Model::Nls, SetKind::Truncated) => (eps2 * n_pow * mu_s, n_pow * (eps2 * mu_s).max(eps4)),
        (Model::Nlsp, SetKind::Full) => {
            let f = eps2 / (gauge_sq_prod * gauge_sq_prod);
            (f, f)
        }
        (Model::Nlsp, SetKind::Truncated) => {
            let f = eps2 * n_pow;
            (f, f)
        }
    }
}

/// `gamma` times the floors of the `omega` and `Omega` conditions for `k`.
pub fn denominator_floors(k: &MultiIndex, q: &NonResonanceParams) -> (f64, f64) {
    let (f1, f2) = unit_floors(k.gauge_sq_product(), k.mu_min().unwrap_or(1.0), q);
    (q.gamma * f1, q.gamma * f2)
}

/// All conditions of the set evaluated on every catalog item.
pub fn ratios(field: &ActionField, q: &NonResonanceParams, p: &ModelParams, cat: &Catalog) -> Vec<Ratio> {
    let sums = ActionSums::from_field(field, p);
    let tail = sums.window;
    let i_s = field.norm_s(q.s);
    let phi1 = p.phi1.abs();
    let mut out = Vec::new();
    for (idx, it) in cat.items.iter().enumerate() {
        if it.k.len() > q.length_cap {
            continue;
        }
        if q.kind == SetKind::Truncated && it.mu_max > q.n_cut * q.n_cut {
            continue;
        }
        let len = it.k.len() as f64;
        let max_a = it.k.max_abs();
        let (f1, f2) = unit_floors(it.gauge_sq_prod, it.mu_min, q);
        match q.model {
            Model::Nls => {
                out.push(Ratio { item: idx, condition: Condition::Omega, value: sums.omega_linear(&it.k), unit_floor: f1, residual: 0.0 });
                let k1 = tail_kernel_bound(i_s, q.s, tail, max_a, 1);
                let k2 = tail_kernel_bound(i_s, q.s, tail, max_a, 2);
                match q.kind {
                    SetKind::Full => {
                        let res = 0.5 * phi1 * phi1 * len * k2;
                        out.push(Ratio { item: idx, condition: Condition::OmegaTilde, value: sums.omega_tilde(&it.k), unit_floor: f2, residual: res });
                    }
                    SetKind::Truncated => {
                        let imax = it.k.entries().iter().map(|e| sums.get(e.a).abs()).fold(0.0, f64::max);
                        let res = len
                            * (0.5 * phi1 * phi1 * (2.0 * imax * k1 + k2)
                                + 3.0 * p.phi2.abs() * imax * tail_sum_bound(i_s, q.s, tail));
                        out.push(Ratio { item: idx, condition: Condition::OmegaBig, value: sums.omega_big(&it.k), unit_floor: f2, residual: res });
                    }
                }
            }
            Model::Nlsp => {
                let f = f1;
                let res = 2.0 * phi1 * len * tail_kernel_bound(i_s, q.s, tail, max_a, 1);
                out.push(Ratio { item: idx, condition: Condition::OmegaNlsp, value: sums.omega_nlsp(&it.k), unit_floor: f, residual: res });
            }
        }
    }
    out
}

/// Verdict at a given `gamma` from precomputed ratios.
pub fn verdict_at(ratios: &[Ratio], gamma: f64, cat: &Catalog) -> Verdict {
    let mut worst_margin = f64::INFINITY;
    let mut inconclusive: Option<Violation> = None;
    let mk = |r: &Ratio| Violation {
        k: cat.items[r.item].k.clone(),
        condition: r.condition,
        value: r.value,
        floor: gamma * r.unit_floor,
        margin: r.value.abs() - gamma * r.unit_floor,
        residual: r.residual,
    };
    for r in ratios {
        let margin = r.value.abs() - gamma * r.unit_floor;
        if margin < -r.residual {
            return Verdict::Violated(mk(r));
        }
        if margin.abs() <= r.residual && inconclusive.is_none() {
            inconclusive = Some(mk(r));
        }
        worst_margin = worst_margin.min(margin);
    }
    match inconclusive {
        Some(v) => Verdict::Inconclusive(v),
        None => Verdict::Member { worst_margin },
    }
}

/// Membership from the actions alone.
pub fn verdict_for_actions(field: &ActionField, q: &NonResonanceParams, p: &ModelParams, cat: &Catalog) -> Verdict {
    verdict_at(&ratios(field, q, p, cat), q.gamma, cat)
}

fn check_kind(q: &NonResonanceParams, kind: SetKind) -> Result<()> {
    q.validate()?;
    if q.kind != kind {
        return Err(RnfError::Config(format!("expected {kind:?} parameters, got {:?}", q.kind)));
    }
    Ok(())
}

pub fn in_full_set(z: &FourierState, q: &NonResonanceParams, p: &ModelParams, cat: &Catalog) -> Result<Verdict> {
    check_kind(q, SetKind::Full)?;
    Ok(verdict_for_actions(&z.actions()?, q, p, cat))
}

pub fn in_truncated_set(z: &FourierState, q: &NonResonanceParams, p: &ModelParams, cat: &Catalog) -> Result<Verdict> {
    check_kind(q, SetKind::Truncated)?;
    Ok(verdict_for_actions(&z.actions()?, q, p, cat))
}

/// Outcome of an implication audit `premise and hypothesis => conclusion`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub premise: bool,
    pub hypothesis: bool,
    /// `None` when the conclusion was inconclusive.
    pub conclusion: Option<bool>,
    pub lhs: f64,
    pub rhs: f64,
}

impl StabilityReport {
    /// False only for a decided counterexample.
    pub fn implication_held(&self) -> bool {
        !(self.premise && self.hypothesis && self.conclusion == Some(false))
    }
}

fn decided(v: &Verdict) -> Option<bool> {
    match v {
        Verdict::Member { .. } => Some(true),
        Verdict::Violated(_) => Some(false),
        Verdict::Inconclusive(_) => None,
    }
}

/// `z` in the truncated set at `q.gamma`, `||z||_s <= 4 eps` and
/// `sup <a>^{2s} |I'_a - I_a| <= c eps^2 N^{-alpha_r} (gamma - gamma')` imply `z'` in the set at `gamma' < gamma`.
pub fn check_action_stability(
    z: &FourierState,
    z2: &FourierState,
    q: &NonResonanceParams,
    q2: &NonResonanceParams,
    c: f64,
    p: &ModelParams,
    cat: &Catalog,
) -> Result<StabilityReport> {
    let premise = in_truncated_set(z, q, p, cat)?.is_member() && z.norm_s(q.s) <= 4.0 * q.eps && q2.gamma < q.gamma;
    let (i1, i2) = (z.actions()?, z2.actions()?);
    let w = i1.window.max(i2.window);
    let lhs = (-w..=w).map(|a| gauge(a).powf(2.0 * q.s) * (i1.get(a) - i2.get(a)).abs()).fold(0.0, f64::max);
    let rhs = c * q.eps * q.eps * q.n_cut.powf(-q.alpha_r()) * (q.gamma - q2.gamma);
    let conclusion = decided(&in_truncated_set(z2, q2, p, cat)?);
    Ok(StabilityReport { premise, hypothesis: lhs <= rhs, conclusion, lhs, rhs })
}

/// As [`check_action_stability`] with `||z - z'||_s <= c eps N^{-alpha_r} (gamma - gamma')`.
pub fn check_norm_stability(
    z: &FourierState,
    z2: &FourierState,
    q: &NonResonanceParams,
    q2: &NonResonanceParams,
    c: f64,
    p: &ModelParams,
    cat: &Catalog,
) -> Result<StabilityReport> {
    let premise = in_truncated_set(z, q, p, cat)?.is_member() && z.norm_s(q.s) <= 4.0 * q.eps && q2.gamma < q.gamma;
    let lhs = z.difference(z2).norm_s(q.s);
    let rhs = c * q.eps * q.n_cut.powf(-q.alpha_r()) * (q.gamma - q2.gamma);
    let conclusion = decided(&in_truncated_set(z2, q2, p, cat)?);
    Ok(StabilityReport { premise, hypothesis: lhs <= rhs, conclusion, lhs, rhs })
}

/// `z` in the full set at `gamma`, `||z||_s <= 4 eps` and `eps^2 < c N^{-alpha_r} (gamma - gamma')`
/// imply `z` in the truncated set at `gamma'`.
pub fn check_full_to_truncated(
    z: &FourierState,
    full: &NonResonanceParams,
    trunc: &NonResonanceParams,
    c: f64,
    p: &ModelParams,
    full_cat: &Catalog,
    trunc_cat: &Catalog,
) -> Result<StabilityReport> {
    let premise = in_full_set(z, full, p, full_cat)?.is_member() && z.norm_s(full.s) <= 4.0 * full.eps && trunc.gamma < full.gamma;
    let lhs = full.eps * full.eps;
    let rhs = c * trunc.n_cut.powf(-trunc.alpha_r()) * (full.gamma - trunc.gamma);
    let conclusion = decided(&in_truncated_set(z, trunc, p, trunc_cat)?);
    Ok(StabilityReport { premise, hypothesis: lhs < rhs, conclusion, lhs, rhs })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_actions_are_resonant() {
        let p = ModelParams::cubic(12);
        let q = NonResonanceParams::full(Model::Nls, 0.01, 0.1, 3, 1.0, 3);
        let cat = Catalog::for_params(&q).unwrap();
        assert!(!cat.is_empty());
        let field = ActionField::from_fn(12, |_| 1e-3);
        match verdict_for_actions(&field, &q, &p, &cat) {
            Verdict::Violated(v) => assert_eq!(v.condition, Condition::Omega),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn quartic_full_set_is_vacuous() {
        let cat = Catalog::new(10, 4).unwrap();
        assert!(cat.is_empty());
    }

    #[test]
    fn monotone_in_gamma() {
        let p = ModelParams::cubic(12);
        let field = ActionField::from_fn(12, |a| 1e-3 / (1.0 + (a * a) as f64).powi(3) * (1.0 + 0.37 * (a as f64).sin()));
        let q = NonResonanceParams::full(Model::Nls, 0.5, 0.1, 3, 1.0, 3);
        let cat = Catalog::for_params(&q).unwrap();
        let rs = ratios(&field, &q, &p, &cat);
        let mut seen_member = false;
        for g in [1.0, 0.3, 0.1, 0.03, 0.01, 0.001] {
            let v = verdict_at(&rs, g, &cat);
            if seen_member {
                assert!(v.is_member());
            }
            seen_member |= v.is_member();
        }
    }
}
