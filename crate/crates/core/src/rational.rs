//! Rational Hamiltonians: monomials divided by products of small denominators.
//!
//! A term carries a coefficient `c`, a resonant numerator `pi` and three lists of irreducible
//! multi-indices; its value is
//! `c (-i)^{p+q} z_pi / (prod omega_k  prod Omega_k  prod Omega_h)` with `p` the length of the two
//! `k` lists and `q` the length of the `h` list. `omega_k = sum_c w_c(k) dZ4/dI_c` and
//! `Omega_k = sum_c w_c(k) d(Z4 + Z6)/dI_c`, where the sums in `Z6` run over the window of the
//! Hamiltonian.

use std::collections::{BTreeMap, HashMap};

use num_complex::Complex64;
use num_traits::Zero;
use rand::seq::IndexedRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RnfError};
use crate::index::{enumerate_class, ClassTag, MultiIndex, DEFAULT_ENUMERATION_CAP};
use crate::integrable::{ActionSums, Model, ModelParams};
use crate::phase_space::{monomial_gradient_add, monomial_value, poisson_numeric, FourierState, Functional, Gradient, I};
use crate::poly::PolynomialHamiltonian;
use crate::resonance::{denominator_floors, NonResonanceParams};

/// `(-i)^n`.
fn minus_i_pow(n: usize) -> Complex64 {
    match n % 4 {
        0 => Complex64::new(1.0, 0.0),
        1 => Complex64::new(0.0, -1.0),
        2 => Complex64::new(-1.0, 0.0),
        _ => Complex64::new(0.0, 1.0),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "TermRecord", try_from = "TermRecord")]
pub struct RationalTerm {
    /// Coefficient without the `(-i)^{p+q}` factor.
    pub coeff: Complex64,
    pub pi: MultiIndex,
    /// Divided as `omega`.
    pub k_omega: Vec<MultiIndex>,
    /// Divided as `Omega` under the `eps^2` condition.
    pub k_big: Vec<MultiIndex>,
    /// Divided as `Omega` under the `eps^4` condition.
    pub h_big: Vec<MultiIndex>,
    /// History counters `(alpha_1, ..., alpha_5)`.
    pub alpha: Option<[u32; 5]>,
}

/// Serialized term.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TermRecord {
    pub coeff: Complex64,
    pub pi: MultiIndex,
    pub k_omega: Vec<MultiIndex>,
    #[serde(rename = "k_Omega")]
    pub k_big: Vec<MultiIndex>,
    #[serde(rename = "h_Omega")]
    pub h_big: Vec<MultiIndex>,
    pub n: usize,
    #[serde(default)]
    pub alpha: Option<[u32; 5]>,
}

impl From<RationalTerm> for TermRecord {
    fn from(t: RationalTerm) -> Self {
        let n = t.k_omega.len();
        Self { coeff: t.coeff, pi: t.pi, k_omega: t.k_omega, k_big: t.k_big, h_big: t.h_big, n, alpha: t.alpha }
    }
}

impl TryFrom<TermRecord> for RationalTerm {
    type Error = String;

    fn try_from(r: TermRecord) -> std::result::Result<Self, String> {
        if r.n != r.k_omega.len() {
            return Err(format!("n = {} but {} omega divisors", r.n, r.k_omega.len()));
        }
        Ok(Self { coeff: r.coeff, pi: r.pi, k_omega: r.k_omega, k_big: r.k_big, h_big: r.h_big, alpha: r.alpha })
    }
}

/// Identity of a term up to its coefficient.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
struct TermKey {
    pi: MultiIndex,
    k_omega: Vec<MultiIndex>,
    k_big: Vec<MultiIndex>,
    h_big: Vec<MultiIndex>,
    alpha: Option<[u32; 5]>,
}

fn add_alpha(a: Option<[u32; 5]>, b: Option<[u32; 5]>, bump: &[usize]) -> Option<[u32; 5]> {
    let (a, b) = (a?, b?);
    let mut out = [0u32; 5];
    for i in 0..5 {
        out[i] = a[i] + b[i];
    }
    for &i in bump {
        out[i] += 1;
    }
    Some(out)
}

impl RationalTerm {
    /// Polynomial term `c z_pi`.
    pub fn monomial(coeff: Complex64, pi: MultiIndex) -> Self {
        Self { coeff, pi, k_omega: vec![], k_big: vec![], h_big: vec![], alpha: Some([0; 5]) }
    }

    pub fn m(&self) -> usize {
        self.pi.half_len()
    }

    pub fn n(&self) -> usize {
        self.k_omega.len()
    }

    pub fn p(&self) -> usize {
        self.k_omega.len() + self.k_big.len()
    }

    pub fn q(&self) -> usize {
        self.h_big.len()
    }

    /// `m - p - 2q`.
    pub fn order(&self) -> i64 {
        self.m() as i64 - self.p() as i64 - 2 * self.q() as i64
    }

    pub fn is_action_only(&self) -> bool {
        self.pi.irreducible_part().is_empty()
    }

    /// The `k` lists in order: `omega` divisors first.
    pub fn k_all(&self) -> impl Iterator<Item = &MultiIndex> {
        self.k_omega.iter().chain(&self.k_big)
    }

    /// Largest of `<mu_1(Irr pi)>`, `<mu_1(k)>`, `<mu_1(h)>`; zero when all are empty.
    pub fn weight(&self) -> f64 {
        let irr = self.pi.irreducible_part().mu_max().unwrap_or(0.0);
        self.k_all().chain(&self.h_big).filter_map(|k| k.mu_max()).fold(irr, f64::max)
    }

    /// The term paired with this one by the reality condition.
    pub fn conjugate(&self) -> Self {
        let conj = |v: &[MultiIndex]| v.iter().map(|k| k.conjugate()).collect();
        let mut t = Self {
            coeff: self.coeff.conj(),
            pi: self.pi.conjugate(),
            k_omega: conj(&self.k_omega),
            k_big: conj(&self.k_big),
            h_big: conj(&self.h_big),
            alpha: self.alpha,
        };
        t.canonicalize();
        t
    }

    fn canonicalize(&mut self) {
        self.k_omega.sort();
        self.k_big.sort();
        self.h_big.sort();
    }

    fn key(&self) -> TermKey {
        TermKey {
            pi: self.pi.clone(),
            k_omega: self.k_omega.clone(),
            k_big: self.k_big.clone(),
            h_big: self.h_big.clone(),
            alpha: self.alpha,
        }
    }

    fn from_key(key: TermKey, coeff: Complex64) -> Self {
        Self { coeff, pi: key.pi, k_omega: key.k_omega, k_big: key.k_big, h_big: key.h_big, alpha: key.alpha }
    }
}

/// A finite sum of rational terms living on the window `[-window, window]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RationalHamiltonian {
    pub window: i64,
    pub terms: Vec<RationalTerm>,
}

/// Which small denominator a divisor stands for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
enum DivKind {
    Omega,
    BigK,
    BigH,
}

/// Denominator values and their action derivatives at one state.
struct DenominatorTable<'a> {
    sums: ActionSums<Complex64>,
    guard: Option<&'a NonResonanceParams>,
    cache: HashMap<(bool, MultiIndex), Complex64>,
}

impl<'a> DenominatorTable<'a> {
    fn new(z: &FourierState, p: &ModelParams, guard: Option<&'a NonResonanceParams>) -> Self {
        Self { sums: ActionSums::new(z.window, z.complex_actions(), p), guard, cache: HashMap::new() }
    }

    fn value(&mut self, kind: DivKind, k: &MultiIndex) -> Result<Complex64> {
        let big = kind != DivKind::Omega;
        let v = match self.cache.get(&(big, k.clone())) {
            Some(v) => *v,
            None => {
                let v = if big { self.sums.omega_big(k) } else { self.sums.omega_general(k) };
                self.cache.insert((big, k.clone()), v);
                v
            }
        };
        if let Some(q) = self.guard {
            let (f_omega, f_big) = denominator_floors(k, q);
            let floor = if big { f_big } else { f_omega };
            if v.norm() < floor {
                return Err(RnfError::DenominatorFloor { index: k.clone(), value: v.norm(), floor });
            }
        } else if v == Complex64::zero() {
            return Err(RnfError::DenominatorFloor { index: k.clone(), value: 0.0, floor: 0.0 });
        }
        Ok(v)
    }

    /// `d/dI_a` of the denominator, for every `a` of the window.
    fn action_gradient(&self, kind: DivKind, k: &MultiIndex) -> Vec<Complex64> {
        let w = self.sums.window;
        let weights = k.weights();
        (-w..=w)
            .map(|a| {
                let mut d = self.sums.d_omega(k, a);
                if kind != DivKind::Omega {
                    for (&c, &wc) in &weights {
                        d += wc as f64 * self.sums.d2z6(c, a);
                    }
                }
                d
            })
            .collect()
    }
}

impl RationalHamiltonian {
    pub fn new(window: i64) -> Self {
        Self { window, terms: vec![] }
    }

    /// Merges equal terms, sorts divisor lists and drops zero coefficients.
    pub fn from_terms(window: i64, terms: impl IntoIterator<Item = RationalTerm>) -> Self {
        let mut map: BTreeMap<TermKey, Complex64> = BTreeMap::new();
        for mut t in terms {
            t.canonicalize();
            *map.entry(t.key()).or_insert(Complex64::zero()) += t.coeff;
        }
        let terms = map.into_iter().filter(|(_, c)| *c != Complex64::zero()).map(|(k, c)| RationalTerm::from_key(k, c)).collect();
        Self { window, terms }
    }

    /// Binds the exact coefficients of a polynomial and keeps its monomials as terms.
    pub fn from_polynomial(p: &PolynomialHamiltonian, params: &ModelParams, window: i64) -> Self {
        let b = p.bind(&params.gens());
        Self::from_terms(window, b.terms.into_iter().map(|(j, c)| RationalTerm::monomial(c, j)))
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn add(&self, other: &Self) -> Self {
        Self::from_terms(self.window, self.terms.iter().chain(&other.terms).cloned())
    }

    pub fn scale(&self, c: Complex64) -> Self {
        Self::from_terms(self.window, self.terms.iter().map(|t| RationalTerm { coeff: t.coeff * c, ..t.clone() }))
    }

    pub fn neg(&self) -> Self {
        self.scale(Complex64::new(-1.0, 0.0))
    }

    pub fn filter(&self, pred: impl Fn(&RationalTerm) -> bool) -> Self {
        Self { window: self.window, terms: self.terms.iter().filter(|t| pred(t)).cloned().collect() }
    }

    /// Action-only part and the part with nonempty irreducible numerators.
    pub fn split_action(&self) -> (Self, Self) {
        (self.filter(|t| t.is_action_only()), self.filter(|t| !t.is_action_only()))
    }

    pub fn weight(&self) -> f64 {
        self.terms.iter().filter(|t| t.coeff != Complex64::zero()).map(|t| t.weight()).fold(0.0, f64::max)
    }

    /// The order `m - p - 2q` if every term shares it.
    pub fn order(&self) -> Option<i64> {
        let mut it = self.terms.iter().map(|t| t.order());
        let first = it.next()?;
        it.all(|o| o == first).then_some(first)
    }

    pub fn orders(&self) -> Vec<i64> {
        let mut o: Vec<i64> = self.terms.iter().map(|t| t.order()).collect();
        o.sort();
        o.dedup();
        o
    }

    /// Adds the conjugate of every term and halves, giving a reality-closed Hamiltonian.
    pub fn reality_closure(&self) -> Self {
        Self::from_terms(
            self.window,
            self.terms.iter().flat_map(|t| {
                let mut a = t.clone();
                a.coeff *= 0.5;
                let mut b = t.conjugate();
                b.coeff *= 0.5;
                [a, b]
            }),
        )
    }

    /// Every term has its conjugate with the conjugate coefficient, up to `tol` relative.
    pub fn is_reality_closed(&self, tol: f64) -> bool {
        let map: HashMap<TermKey, Complex64> = self.terms.iter().map(|t| (t.key(), t.coeff)).collect();
        let scale = self.terms.iter().map(|t| t.coeff.norm()).fold(0.0, f64::max);
        self.terms.iter().all(|t| {
            let c = t.conjugate();
            let other = map.get(&c.key()).copied().unwrap_or(Complex64::zero());
            (other - c.coeff).norm() <= tol * scale.max(f64::MIN_POSITIVE)
        })
    }

    fn check_state(&self, z: &FourierState, p: &ModelParams) -> Result<()> {
        if p.model != Model::Nls {
            return Err(RnfError::Config("rational Hamiltonians are built on the NLS frequencies".into()));
        }
        if z.window != self.window {
            return Err(RnfError::Config(format!("state window {} != Hamiltonian window {}", z.window, self.window)));
        }
        Ok(())
    }

    fn term_value(t: &RationalTerm, z: &FourierState, table: &mut DenominatorTable) -> Result<(Complex64, Complex64)> {
        let mut den = Complex64::new(1.0, 0.0);
        for k in &t.k_omega {
            den *= table.value(DivKind::Omega, k)?;
        }
        for k in &t.k_big {
            den *= table.value(DivKind::BigK, k)?;
        }
        for h in &t.h_big {
            den *= table.value(DivKind::BigH, h)?;
        }
        let pref = t.coeff * minus_i_pow(t.p() + t.q()) / den;
        Ok((pref, pref * monomial_value(&t.pi, z)?))
    }

    /// Value at `z`; with a guard, refuses states where a denominator is below its floor.
    pub fn evaluate(&self, z: &FourierState, p: &ModelParams, guard: Option<&NonResonanceParams>) -> Result<Complex64> {
        self.check_state(z, p)?;
        let mut table = DenominatorTable::new(z, p, guard);
        let mut s = Complex64::zero();
        for t in &self.terms {
            s += Self::term_value(t, z, &mut table)?.1;
        }
        Ok(s)
    }

    /// Derivatives in `xi` and `eta`: numerator Leibniz terms plus
    /// `-value * sum_d (dd/dI_a) / d` times `eta_a` (resp. `xi_a`).
    pub fn gradient(&self, z: &FourierState, p: &ModelParams, guard: Option<&NonResonanceParams>) -> Result<Gradient> {
        self.check_state(z, p)?;
        let mut table = DenominatorTable::new(z, p, guard);
        let mut grad_cache: HashMap<(DivKind, MultiIndex), Vec<Complex64>> = HashMap::new();
        let mut g = Gradient::zeros(z.window);
        let n = z.len();
        for t in &self.terms {
            let (pref, value) = Self::term_value(t, z, &mut table)?;
            monomial_gradient_add(&t.pi, pref, z, &mut g)?;
            if t.p() + t.q() == 0 {
                continue;
            }
            let mut s = vec![Complex64::zero(); n];
            let divs = t
                .k_omega
                .iter()
                .map(|k| (DivKind::Omega, k))
                .chain(t.k_big.iter().map(|k| (DivKind::BigK, k)))
                .chain(t.h_big.iter().map(|k| (DivKind::BigH, k)));
            for (kind, k) in divs {
                let d = table.value(kind, k)?;
                let key_kind = if kind == DivKind::Omega { DivKind::Omega } else { DivKind::BigK };
                let dg = grad_cache.entry((key_kind, k.clone())).or_insert_with(|| table.action_gradient(kind, k));
                for i in 0..n {
                    s[i] += dg[i] / d;
                }
            }
            for i in 0..n {
                g.d_xi[i] -= value * s[i] * z.eta[i];
                g.d_eta[i] -= value * s[i] * z.xi[i];
            }
        }
        Ok(g)
    }

    /// Hamiltonian vector field `(-i dH/d eta, i dH/d xi)`.
    pub fn vector_field(&self, z: &FourierState, p: &ModelParams, guard: Option<&NonResonanceParams>) -> Result<FourierState> {
        Ok(self.gradient(z, p, guard)?.vector_field(z.reality))
    }

    pub fn bind(&self, p: &ModelParams, guard: Option<&NonResonanceParams>) -> BoundRational {
        BoundRational { h: self.clone(), params: p.clone(), guard: guard.cloned() }
    }

    /// Smallest `|omega|` or `|Omega|` among the divisors at `z`.
    pub fn min_denominator(&self, z: &FourierState, p: &ModelParams) -> Result<f64> {
        self.check_state(z, p)?;
        let sums = ActionSums::new(z.window, z.complex_actions(), p);
        let mut m = f64::INFINITY;
        for t in &self.terms {
            for k in &t.k_omega {
                m = m.min(sums.omega_general(k).norm());
            }
            for k in t.k_big.iter().chain(&t.h_big) {
                m = m.min(sums.omega_big(k).norm());
            }
        }
        Ok(m)
    }
}

/// A rational Hamiltonian with its model and optional denominator guard.
#[derive(Clone, Debug)]
pub struct BoundRational {
    pub h: RationalHamiltonian,
    pub params: ModelParams,
    pub guard: Option<NonResonanceParams>,
}

impl Functional for BoundRational {
    fn value(&self, z: &FourierState) -> Result<Complex64> {
        self.h.evaluate(z, &self.params, self.guard.as_ref())
    }

    fn gradient(&self, z: &FourierState) -> Result<Gradient> {
        self.h.gradient(z, &self.params, self.guard.as_ref())
    }
}

/// `Z4` or `Z4 + Z6` as functions of the actions on the state window.
#[derive(Clone, Debug)]
pub struct ActionHamiltonian {
    pub params: ModelParams,
    pub with_sextic: bool,
}

impl Functional for ActionHamiltonian {
    fn value(&self, z: &FourierState) -> Result<Complex64> {
        let sums = ActionSums::new(z.window, z.complex_actions(), &self.params);
        Ok(if self.with_sextic { sums.z4() + sums.z6() } else { sums.z4() })
    }

    fn gradient(&self, z: &FourierState) -> Result<Gradient> {
        let sums = ActionSums::new(z.window, z.complex_actions(), &self.params);
        let mut g = Gradient::zeros(z.window);
        for (i, a) in z.modes().enumerate() {
            let d = if self.with_sextic { sums.dz4(a) + sums.dz6(a) } else { sums.dz4(a) };
            g.d_xi[i] = d * z.eta[i];
            g.d_eta[i] = d * z.xi[i];
        }
        Ok(g)
    }
}

/// `sum_a dd/dI_a w_a(pi)` for `d = omega_k`: `phi'(2 W_k W_pi - <w_k, w_pi>)` with `W` the total weight.
fn omega_contraction(k: &MultiIndex, pi: &MultiIndex, phi1: f64) -> f64 {
    let wk = k.weights();
    let wp = pi.weights();
    let tk: i64 = wk.values().sum();
    let tp: i64 = wp.values().sum();
    let dot: i64 = wk.iter().map(|(a, w)| w * wp.get(a).copied().unwrap_or(0)).sum();
    phi1 * (2 * tk * tp - dot) as f64
}

/// Coefficients `L_b` of the linear form `sum_{a,c} w_c(k) w_a(pi) d^2 Z6/dI_c dI_a = sum_b L_b I_b`.
fn sextic_contraction(k: &MultiIndex, pi: &MultiIndex, p: &ModelParams, window: i64) -> Vec<f64> {
    let n = (2 * window + 1) as usize;
    let idx = |b: i64| (b + window) as usize;
    let p1sq = p.phi1 * p.phi1;
    let p2 = p.phi2;
    let mut l = vec![0.0; n];
    for (&c, &wc) in &k.weights() {
        for (&a, &wa) in &pi.weights() {
            let coef = (wc * wa) as f64;
            if c.abs() > window || a.abs() > window {
                continue;
            }
            if c != a {
                let d = -p1sq / ((c - a) * (c - a)) as f64 - 3.0 * p2;
                l[idx(c)] += coef * d;
                l[idx(a)] += coef * d;
                l.iter_mut().for_each(|x| *x += 6.0 * p2 * coef);
            } else {
                for b in -window..=window {
                    if b != c {
                        l[idx(b)] -= coef * p1sq / ((c - b) * (c - b)) as f64;
                    }
                }
                l.iter_mut().for_each(|x| *x += 3.0 * p2 * coef);
                l[idx(c)] -= 2.0 * p2 * coef;
            }
        }
    }
    l
}

/// Where a denominator sits in a term.
#[derive(Clone, Copy)]
enum Slot {
    Omega,
    BigK,
    BigH,
}

/// Symbolic bracket `{A, B}` expanded term by term.
///
/// Numerator contractions give `pi_A u pi_B` minus one conjugate pair. A hit on `omega_k`
/// squares it (new `omega_k` divisor). A hit on `Omega_k` squares it with a constant factor
/// (new divisor counted in the `k` list) plus a linear form `sum_b L_b I_b` (numerator gains
/// `(+b, -b)`, new divisor counted in the `h` list). Fails once more than `cap` terms are produced.
pub fn bracket(a: &RationalHamiltonian, b: &RationalHamiltonian, p: &ModelParams, cap: usize) -> Result<RationalHamiltonian> {
    if a.window != b.window {
        return Err(RnfError::Config("bracket of Hamiltonians on different windows".into()));
    }
    if p.model != Model::Nls {
        return Err(RnfError::Config("rational brackets are built on the NLS frequencies".into()));
    }
    let window = a.window;
    let pairs: Vec<(&RationalTerm, &RationalTerm)> = a.terms.iter().flat_map(|ta| b.terms.iter().map(move |tb| (ta, tb))).collect();
    let produced: Vec<Vec<RationalTerm>> = pairs.par_iter().map(|(ta, tb)| bracket_terms(ta, tb, p, window)).collect();
    let total: usize = produced.iter().map(|v| v.len()).sum();
    if total > cap {
        return Err(RnfError::ResourceBudget { projected: total as u128, cap: cap as u128 });
    }
    Ok(RationalHamiltonian::from_terms(window, produced.into_iter().flatten()))
}

fn bracket_terms(ta: &RationalTerm, tb: &RationalTerm, p: &ModelParams, window: i64) -> Vec<RationalTerm> {
    let mut out = Vec::new();
    let cc = ta.coeff * tb.coeff;
    let union = ta.pi.union(&tb.pi);
    let join = |x: &[MultiIndex], y: &[MultiIndex]| -> Vec<MultiIndex> { x.iter().chain(y).cloned().collect() };
    let base = RationalTerm {
        coeff: cc,
        pi: union.clone(),
        k_omega: join(&ta.k_omega, &tb.k_omega),
        k_big: join(&ta.k_big, &tb.k_big),
        h_big: join(&ta.h_big, &tb.h_big),
        alpha: None,
    };

    // numerator contractions
    for (x, np_a, nm_a) in ta.pi.count_table() {
        let (np_b, nm_b) = tb.pi.counts(x);
        let f = nm_a as i64 * np_b as i64 - np_a as i64 * nm_b as i64;
        if f == 0 {
            continue;
        }
        out.push(RationalTerm {
            coeff: I * f as f64 * cc,
            pi: union.remove_action(x).expect("contracted pair present"),
            alpha: add_alpha(ta.alpha, tb.alpha, &[4]),
            ..base.clone()
        });
    }

    // denominator hits: A's divisors against pi_B, B's against pi_A with the opposite sign
    let sides: [(&RationalTerm, &MultiIndex, f64); 2] = [(ta, &tb.pi, 1.0), (tb, &ta.pi, -1.0)];
    for (t, other_pi, sign) in sides {
        let divs = t
            .k_omega
            .iter()
            .map(|k| (Slot::Omega, k))
            .chain(t.k_big.iter().map(|k| (Slot::BigK, k)))
            .chain(t.h_big.iter().map(|k| (Slot::BigH, k)));
        for (slot, k) in divs {
            let kappa = omega_contraction(k, other_pi, p.phi1);
            match slot {
                Slot::Omega => {
                    if kappa != 0.0 {
                        let mut t2 = base.clone();
                        t2.coeff = sign * kappa * cc;
                        t2.k_omega.push(k.clone());
                        t2.alpha = add_alpha(ta.alpha, tb.alpha, &[1, 4]);
                        out.push(t2);
                    }
                }
                Slot::BigK | Slot::BigH => {
                    if kappa != 0.0 {
                        let mut t2 = base.clone();
                        t2.coeff = sign * kappa * cc;
                        t2.k_big.push(k.clone());
                        t2.alpha = add_alpha(ta.alpha, tb.alpha, &[2, 4]);
                        out.push(t2);
                    }
                    let l = sextic_contraction(k, other_pi, p, window);
                    for (i, lb) in l.into_iter().enumerate() {
                        if lb == 0.0 {
                            continue;
                        }
                        let bmode = i as i64 - window;
                        let mut t2 = base.clone();
                        t2.coeff = sign * lb * cc;
                        t2.pi = union.with_action(bmode);
                        t2.h_big.push(k.clone());
                        t2.alpha = add_alpha(ta.alpha, tb.alpha, &[3, 4]);
                        out.push(t2);
                    }
                }
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Family {
    /// Only `omega` divisors.
    #[serde(rename = "omega")]
    Omega,
    /// `omega` and `Omega` divisors.
    #[serde(rename = "Omega")]
    BigOmega,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubclassTag {
    pub family: Family,
    /// The class of homological solutions, with shifted caps.
    pub star: bool,
    pub r: i64,
}

impl std::fmt::Display for SubclassTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let w = match self.family {
            Family::Omega => "omega",
            Family::BigOmega => "Omega",
        };
        write!(f, "H{}_{{{},{}}}", if self.star { "*" } else { "" }, self.r, w)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "tag", rename_all = "snake_case")]
pub enum HamiltonianTag {
    Subclass(SubclassTag),
    /// Every numerator is a product of actions.
    ActionOnly,
    /// Every numerator has a nonempty irreducible part.
    Irreducible,
    Untagged,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubclassWitness {
    pub tag: SubclassTag,
    /// A valid `alpha` per term (`Omega` family).
    pub alphas: Vec<Option<[u32; 5]>>,
    /// Whether the stored history counters are themselves valid witnesses.
    pub stored_alpha_valid: bool,
}

fn alpha_fits(alpha: [u32; 5], t: &RationalTerm, tag: SubclassTag) -> bool {
    let [a1, a2, a3, a4, a5] = alpha.map(|x| x as i64);
    let (r, extra) = if tag.star { (tag.r + 2, 1) } else { (tag.r, 0) };
    t.n() as i64 == a1 + a2
        && t.p() as i64 == a1 + a2 + a3
        && t.q() as i64 == a4 + a5 + extra
        && a1 <= 2 * r - 6
        && a2 + a3 + a4 <= a5
        && a5 <= r - 4
}

fn find_alpha(t: &RationalTerm, tag: SubclassTag) -> Option<[u32; 5]> {
    let n = t.n() as u32;
    let a3 = (t.p() - t.n()) as u32;
    let q = t.q() as i64 - if tag.star { 1 } else { 0 };
    if q < 0 {
        return None;
    }
    for a2 in 0..=n {
        for a4 in 0..=q as u32 {
            let alpha = [n - a2, a2, a3, a4, q as u32 - a4];
            if alpha_fits(alpha, t, tag) {
                return Some(alpha);
            }
        }
    }
    None
}

fn check_structure(t: &RationalTerm) -> std::result::Result<(), String> {
    if !t.pi.is_resonant() && !t.pi.is_empty() {
        return Err(format!("numerator {} is not resonant", t.pi));
    }
    let m = t.m();
    for k in t.k_all().chain(&t.h_big) {
        if k.is_empty() || !k.is_irreducible() || !k.is_resonant() {
            return Err(format!("divisor {k} is not an irreducible resonant multi-index"));
        }
        if k.half_len() > m {
            return Err(format!("divisor {k} longer than the numerator half-length {m}"));
        }
    }
    Ok(())
}

fn term_in_subclass(t: &RationalTerm, tag: SubclassTag) -> std::result::Result<Option<[u32; 5]>, String> {
    check_structure(t)?;
    if t.order() != tag.r {
        return Err(format!("order {} != {}", t.order(), tag.r));
    }
    let m = t.m() as i64;
    match tag.family {
        Family::Omega => {
            let cap = if tag.star { 2 * (tag.r + 1) - 5 } else { 2 * tag.r - 6 };
            if t.q() != 0 || t.n() != t.p() || t.n() as i64 > cap {
                return Err(format!("(n, p, q) = ({}, {}, {}) outside {tag}", t.n(), t.p(), t.q()));
            }
            let rr = if tag.star { tag.r + 1 } else { tag.r };
            if rr >= 3 && m > 3 * rr - 6 {
                return Err(format!("numerator half-length {m} > {}", 3 * rr - 6));
            }
            Ok(None)
        }
        Family::BigOmega => {
            let alpha = find_alpha(t, tag).ok_or_else(|| format!("no alpha for (n, p, q) = ({}, {}, {}) in {tag}", t.n(), t.p(), t.q()))?;
            let rr = if tag.star { tag.r + 2 } else { tag.r };
            if rr >= 4 && m > 7 * rr - 22 {
                return Err(format!("numerator half-length {m} > {}", 7 * rr - 22));
            }
            Ok(Some(alpha))
        }
    }
}

/// Verifies every term against the subclass, the reality pairing and the structural conditions,
/// returning an `alpha` witness per term.
pub fn subclass_check(h: &RationalHamiltonian, tag: SubclassTag) -> Result<SubclassWitness> {
    if !h.is_reality_closed(1e-12) {
        return Err(RnfError::Subclass("terms are not closed under conjugation".into()));
    }
    let mut alphas = Vec::with_capacity(h.len());
    let mut stored_ok = true;
    for t in &h.terms {
        let a = term_in_subclass(t, tag).map_err(|e| RnfError::Subclass(format!("term {}: {e}", t.pi)))?;
        if tag.family == Family::BigOmega {
            stored_ok &= t.alpha.is_some_and(|s| alpha_fits(s, t, tag));
        }
        alphas.push(a);
    }
    Ok(SubclassWitness { tag, alphas, stored_alpha_valid: stored_ok })
}

/// The first subclass, in the order `H_omega, H*_omega, H_Omega, H*_Omega`, that holds at the
/// common order (or shifted order for the starred classes).
pub fn classify(h: &RationalHamiltonian) -> HamiltonianTag {
    if let Some(o) = h.order() {
        let candidates = [
            SubclassTag { family: Family::Omega, star: false, r: o },
            SubclassTag { family: Family::Omega, star: true, r: o },
            SubclassTag { family: Family::BigOmega, star: false, r: o },
            SubclassTag { family: Family::BigOmega, star: true, r: o },
        ];
        for tag in candidates {
            if subclass_check(h, tag).is_ok() {
                return HamiltonianTag::Subclass(tag);
            }
        }
    }
    if !h.is_empty() && h.terms.iter().all(|t| t.is_action_only()) {
        HamiltonianTag::ActionOnly
    } else if !h.is_empty() && h.terms.iter().all(|t| !t.is_action_only()) {
        HamiltonianTag::Irreducible
    } else {
        HamiltonianTag::Untagged
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TermCertificate {
    /// `iota(1..2p)`: positions in the decreasing-gauge order of `pi`, all `>= 3`.
    pub iota: Vec<usize>,
    /// `max <mu_min(k)> / <mu_iota(pi)>`.
    pub worst_derivative_ratio: f64,
    /// `max <mu_min(h)> / <mu_2(pi)>`.
    pub worst_memory_ratio: f64,
}

/// Finds, for every term, an injection of the `2p` derivative slots into positions `3..=2m` with
/// `<mu_min(k_alpha)> <= C <mu_iota(pi)>`, and checks `<mu_min(h)> <= C <mu_2(pi)>`.
///
/// Eligible positions for each `k` form a prefix of `3..=2m`, so serving the shortest prefixes
/// first with the lowest free positions is optimal.
pub fn distribute_derivatives_certificate(h: &RationalHamiltonian, c: f64) -> Result<Vec<TermCertificate>> {
    h.terms.par_iter().map(|t| term_certificate(t, c)).collect()
}

fn term_certificate(t: &RationalTerm, c: f64) -> Result<TermCertificate> {
    let len = t.pi.len();
    let mus: Vec<f64> = (1..=len).map(|j| t.pi.mu(j).unwrap()).collect();
    let ks: Vec<&MultiIndex> = t.k_all().collect();
    let mut reach: Vec<(usize, usize, f64)> = ks
        .iter()
        .enumerate()
        .map(|(alpha, k)| {
            let need = k.mu_min().unwrap_or(1.0) / c;
            let last = (3..=len).take_while(|&j| mus[j - 1] >= need).last().unwrap_or(2);
            (last, alpha, k.mu_min().unwrap_or(1.0))
        })
        .collect();
    reach.sort_by_key(|t| (t.0, t.1));
    let mut iota = vec![0usize; 2 * ks.len()];
    let mut next = 3;
    let mut worst: f64 = 0.0;
    for (last, alpha, mu_min) in reach {
        if next + 1 > last {
            return Err(RnfError::NoMatching(format!(
                "term {}: divisor {} needs two positions among 3..={last}, next free is {next}",
                t.pi, ks[alpha]
            )));
        }
        iota[2 * alpha] = next;
        iota[2 * alpha + 1] = next + 1;
        worst = worst.max(mu_min / mus[next - 1]).max(mu_min / mus[next]);
        next += 2;
    }
    let mut memory: f64 = 0.0;
    for hh in &t.h_big {
        let mu2 = t.pi.mu(2).ok_or_else(|| RnfError::NoMatching(format!("term {}: numerator too short", t.pi)))?;
        let ratio = hh.mu_min().unwrap_or(1.0) / mu2;
        if ratio > c {
            return Err(RnfError::NoMatching(format!("term {}: <mu_min({hh})>/<mu_2> = {ratio} > {c}", t.pi)));
        }
        memory = memory.max(ratio);
    }
    Ok(TermCertificate { iota, worst_derivative_ratio: worst, worst_memory_ratio: memory })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum HomologicalMode {
    /// `{Z4 + Z6, chi} = H`: divide by `Omega_{Irr pi}`, counted in the `h` list.
    Z4Z6,
    /// `{Z4, chi} = H`: divide by `omega_{Irr pi}`.
    Z4,
}

/// Solves the homological equation term by term. `{G(I), z_pi} = i (sum_a dG/dI_a w_a(pi)) z_pi`,
/// so dividing by the denominator of `Irr(pi)` and counting one more `-i` keeps the coefficient.
pub fn solve_homological(h: &RationalHamiltonian, mode: HomologicalMode) -> Result<RationalHamiltonian> {
    let mut out = Vec::with_capacity(h.len());
    for t in &h.terms {
        let irr = t.pi.irreducible_part();
        if irr.is_empty() {
            return Err(RnfError::NotSolvable(format!("action-only numerator {}", t.pi)));
        }
        let mut c = t.clone();
        match mode {
            HomologicalMode::Z4Z6 => c.h_big.push(irr),
            HomologicalMode::Z4 => {
                c.k_omega.push(irr);
                c.alpha = c.alpha.map(|mut a| {
                    a[0] += 1;
                    a
                });
            }
        }
        out.push(c);
    }
    Ok(RationalHamiltonian::from_terms(h.window, out))
}

/// `max_z |{Z, chi} - H| / max_z |H|` over the points; pointwise ratios blow up where `H` crosses zero.
pub fn homological_residual(
    h: &RationalHamiltonian,
    chi: &RationalHamiltonian,
    mode: HomologicalMode,
    p: &ModelParams,
    points: &[FourierState],
) -> Result<f64> {
    let z = ActionHamiltonian { params: p.clone(), with_sextic: mode == HomologicalMode::Z4Z6 };
    let bc = chi.bind(p, None);
    let (mut err, mut scale): (f64, f64) = (0.0, 0.0);
    for pt in points {
        let lhs = poisson_numeric(&z, &bc, pt)?;
        let rhs = h.evaluate(pt, p, None)?;
        err = err.max((lhs - rhs).norm());
        scale = scale.max(rhs.norm());
    }
    Ok(err / scale.max(f64::MIN_POSITIVE))
}

/// Irreducible resonant multi-indices of a fixed half-length used to draw random terms.
#[derive(Clone, Debug)]
pub struct TermPool {
    pub window: i64,
    pub cores: Vec<MultiIndex>,
}

impl TermPool {
    pub fn new(window: i64, half_len: usize) -> Result<Self> {
        let cores = enumerate_class(half_len, window, ClassTag::R, true, DEFAULT_ENUMERATION_CAP)?;
        if cores.is_empty() {
            return Err(RnfError::Config(format!("no irreducible resonant multi-index of half-length {half_len} in window {window}")));
        }
        Ok(Self { window, cores })
    }

    fn core_half_len(&self) -> usize {
        self.cores[0].half_len()
    }
}

/// Draws `(n, p, q, alpha)` within the caps of the subclass, each counter at most `small`.
fn draw_counts<R: Rng>(tag: SubclassTag, small: u32, rng: &mut R) -> Result<(usize, usize, usize, Option<[u32; 5]>)> {
    let capped = |cap: i64| -> Result<u32> {
        if cap < 0 {
            Err(RnfError::Config(format!("{tag} admits no terms")))
        } else {
            Ok(rng_cap(cap, small))
        }
    };
    match tag.family {
        Family::Omega => {
            let cap = if tag.star { 2 * (tag.r + 1) - 5 } else { 2 * tag.r - 6 };
            let n = rng.random_range(0..=capped(cap)?) as usize;
            Ok((n, n, 0, Some([n as u32, 0, 0, 0, 0])))
        }
        Family::BigOmega => {
            let r = if tag.star { tag.r + 2 } else { tag.r };
            let a5 = rng.random_range(0..=capped(r - 4)?.min(1));
            let a1 = rng.random_range(0..=capped(2 * r - 6)?);
            let mut rest = [0u32; 3];
            for _ in 0..a5 {
                if rng.random_bool(0.75) {
                    rest[rng.random_range(0..3)] += 1;
                }
            }
            let alpha = [a1, rest[0], rest[1], rest[2], a5];
            let n = (a1 + rest[0]) as usize;
            let p = n + rest[1] as usize;
            let q = (rest[2] + a5) as usize + tag.star as usize;
            Ok((n, p, q, Some(alpha)))
        }
    }
}

fn rng_cap(cap: i64, small: u32) -> u32 {
    (cap as u32).min(small)
}

/// A random reality-closed Hamiltonian of the subclass with `base` terms before conjugation and
/// optionally one action-only term.
pub fn random_hamiltonian<R: Rng>(tag: SubclassTag, pool: &TermPool, base: usize, with_action_term: bool, rng: &mut R) -> Result<RationalHamiltonian> {
    let w = pool.window;
    let core_m = pool.core_half_len();
    let mut terms = Vec::new();
    let draw_term = |action_only: bool, rng: &mut R| -> Result<RationalTerm> {
        let (n, p, q, alpha) = draw_counts(tag, 2, rng)?;
        let m = tag.r + p as i64 + 2 * q as i64;
        if m < 0 {
            return Err(RnfError::Config(format!("{tag} has negative numerator degree")));
        }
        let m = m as usize;
        let need_div = p + q > 0;
        if need_div && m < core_m {
            return Err(RnfError::Config(format!("{tag}: divisors of half-length {core_m} exceed numerator half-length {m}")));
        }
        let use_core = !action_only && m >= core_m;
        let mut pi = if use_core { pool.cores.choose(rng).unwrap().clone() } else { MultiIndex::empty() };
        while pi.half_len() < m {
            pi = pi.with_action(rng.random_range(-w..=w));
        }
        let mut draw = |k: usize| -> Vec<MultiIndex> { (0..k).map(|_| pool.cores.choose(rng).unwrap().clone()).collect() };
        let k_omega = draw(n);
        let k_big = draw(p - n);
        let h_big = draw(q);
        let coeff = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        Ok(RationalTerm { coeff, pi, k_omega, k_big, h_big, alpha })
    };
    for _ in 0..base {
        let t = draw_term(false, rng)?;
        terms.push(t);
    }
    if with_action_term {
        let t = draw_term(true, rng)?;
        terms.push(t);
    }
    let h = RationalHamiltonian::from_terms(w, terms.iter().flat_map(|t| [t.clone(), t.conjugate()]));
    Ok(h)
}

/// A random real state on the window with divisors of `h` bounded away from zero.
pub fn random_nonresonant_point<R: Rng>(h: &RationalHamiltonian, p: &ModelParams, amplitude: f64, rng: &mut R) -> Result<FourierState> {
    for _ in 0..1000 {
        let z = FourierState::random_real(h.window, amplitude, 0.0, rng);
        let floor = 1e-2 * p.phi1.abs() * amplitude * amplitude;
        if h.min_denominator(&z, p)? > floor {
            return Ok(z);
        }
    }
    Err(RnfError::Config("no point with denominators above the floor".into()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Normal form up to order `2r`.
    pub r: i64,
    /// Bracket term cap; overflow stops the expansion at that order with a warning.
    pub max_terms: usize,
    /// Random points for the homological residual checks.
    pub check_points: usize,
    pub point_amplitude: f64,
    pub seed: u64,
    /// Constant of the derivative-distribution certificate.
    pub certificate_c: f64,
}

impl PipelineConfig {
    pub fn new(r: i64) -> Self {
        Self { r, max_terms: 200_000, check_points: 5, point_amplitude: 0.3, seed: 0, certificate_c: 6.0 * r as f64 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub order: i64,
    pub mode: HomologicalMode,
    pub eliminated_terms: usize,
    pub normal_form_terms: usize,
    pub generator_terms: usize,
    pub generator_tag: HamiltonianTag,
    pub generator_weight: f64,
    pub input_weight: f64,
    pub certificate_ok: bool,
    pub homological_residual: f64,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineResult {
    /// Action-only parts by order.
    pub normal_form: BTreeMap<i64, RationalHamiltonian>,
    /// Generators in the order applied.
    pub generators: Vec<RationalHamiltonian>,
    pub stages: Vec<StageReport>,
    /// Irreducible terms of order at most `r` left after the last stage.
    pub remainder: RationalHamiltonian,
    /// `||tau(z) - z||_s` at the supplied samples.
    pub tau_displacement: Vec<f64>,
}

impl PipelineResult {
    pub fn warnings(&self) -> impl Iterator<Item = &String> {
        self.stages.iter().flat_map(|s| &s.warnings)
    }
}

/// `sum_{n >= 1} c_n ad_chi^n F` truncated at order `r`, with `ad_chi F = {F, chi}`.
/// Returns `None` on bracket overflow after pushing a warning.
fn lie_series(
    chi: &RationalHamiltonian,
    f: &RationalHamiltonian,
    coef: impl Fn(usize) -> f64,
    step: i64,
    r: i64,
    p: &ModelParams,
    cap: usize,
    warnings: &mut Vec<String>,
) -> Result<Option<RationalHamiltonian>> {
    let mut out = RationalHamiltonian::new(f.window);
    let mut term = f.clone();
    let mut n = 1;
    loop {
        term = term.filter(|t| t.order() + step <= r);
        if term.is_empty() {
            return Ok(Some(out));
        }
        term = match bracket(chi, &term, p, cap) {
            Ok(b) => b.neg(),
            Err(RnfError::ResourceBudget { projected, cap }) => {
                warnings.push(format!("bracket overflow: {projected} > {cap} terms, expansion truncated"));
                return Ok(None);
            }
            Err(e) => return Err(e),
        };
        out = out.add(&term.scale(Complex64::new(coef(n), 0.0)));
        n += 1;
    }
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Eliminates the irreducible terms order by order.
///
/// `h` holds every term beyond `Z2 + Z4 + Z6`. The order-3 irreducible part is solved against
/// `Z4` alone, with `Z6` then transformed like the other terms; higher orders are solved against
/// `Z4 + Z6`. At each stage the Hamiltonian is replaced by `exp(ad_chi)` of itself, using
/// `{Z, chi} = -R` for the solved part, and orders above `r` are dropped.
pub fn normal_form_pipeline(
    h: &RationalHamiltonian,
    p: &ModelParams,
    q: Option<&NonResonanceParams>,
    cfg: &PipelineConfig,
    samples: &[FourierState],
    flow_cfg: &crate::dynamics::IntegratorConfig,
) -> Result<PipelineResult> {
    use rand::SeedableRng;
    let window = h.window;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut current = h.filter(|t| t.order() <= cfg.r);
    let mut normal_form = BTreeMap::new();
    let mut generators = Vec::new();
    let mut stages = Vec::new();
    let start = current.orders().first().copied().unwrap_or(cfg.r + 1);
    for o in start..=cfg.r {
        let (act, irr) = current.filter(|t| t.order() == o).split_action();
        if !act.is_empty() {
            normal_form.insert(o, act);
        }
        if irr.is_empty() {
            continue;
        }
        let mode = if o <= 3 { HomologicalMode::Z4 } else { HomologicalMode::Z4Z6 };
        let expected = match mode {
            HomologicalMode::Z4 => SubclassTag { family: Family::Omega, star: true, r: o - 1 },
            HomologicalMode::Z4Z6 => SubclassTag { family: Family::BigOmega, star: true, r: o - 2 },
        };
        let chi = solve_homological(&irr.neg(), mode)?;
        subclass_check(&chi, expected)?;
        let input_weight = irr.weight();
        if chi.weight() != input_weight {
            return Err(RnfError::Subclass(format!("generator weight {} differs from {input_weight}", chi.weight())));
        }
        let points: Vec<FourierState> = (0..cfg.check_points)
            .map(|_| random_nonresonant_point(&chi, p, cfg.point_amplitude, &mut rng))
            .collect::<Result<_>>()?;
        let residual = homological_residual(&irr.neg(), &chi, mode, p, &points)?;
        let certificate_ok = distribute_derivatives_certificate(&chi, cfg.certificate_c).is_ok();

        let step = expected.r - 1;
        let mut warnings = Vec::new();
        let mut sources = current.clone();
        if mode == HomologicalMode::Z4 {
            let z6 = RationalHamiltonian::from_polynomial(&crate::poly::z6_formula(window), p, window);
            sources = sources.add(&z6);
        }
        let mut next = current.filter(|t| t.order() != o || t.is_action_only());
        if let Some(s) = lie_series(&chi, &sources, |n| 1.0 / factorial(n), step, cfg.r, p, cfg.max_terms, &mut warnings)? {
            next = next.add(&s);
            // ad^n_chi Z = -ad^{n-1}_chi R for the solved part
            if let Some(s) = lie_series(&chi, &irr, |n| -1.0 / factorial(n + 1), step, cfg.r, p, cfg.max_terms, &mut warnings)? {
                next = next.add(&s);
            }
        }
        stages.push(StageReport {
            order: o,
            mode,
            eliminated_terms: irr.len(),
            normal_form_terms: normal_form.get(&o).map_or(0, |h: &RationalHamiltonian| h.len()),
            generator_terms: chi.len(),
            generator_tag: HamiltonianTag::Subclass(expected),
            generator_weight: chi.weight(),
            input_weight,
            certificate_ok,
            homological_residual: residual,
            warnings,
        });
        generators.push(chi);
        current = next;
    }
    let remainder = current.filter(|t| !t.is_action_only());
    let mut tau_displacement = Vec::new();
    for z in samples {
        let mut w = z.clone();
        for chi in generators.iter().rev() {
            w = crate::dynamics::flow_generic(&chi.bind(p, q), &w, 1.0, flow_cfg)?;
        }
        tau_displacement.push(w.difference(z).norm_s(q.map_or(0.0, |q| q.s)));
    }
    Ok(PipelineResult { normal_form, generators, stages, remainder, tau_displacement })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phase_space::fd_gradient;
    use crate::poly::birkhoff_normal_form;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params() -> ModelParams {
        let mut p = ModelParams::cubic(3);
        p.phi1 = 1.3;
        p.phi2 = 0.4;
        p
    }

    fn tag(family: Family, star: bool, r: i64) -> SubclassTag {
        SubclassTag { family, star, r }
    }

    fn rel(a: Complex64, b: Complex64) -> f64 {
        (a - b).norm() / b.norm().max(1e-300)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let p = params();
        let pool = TermPool::new(3, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for t in [tag(Family::BigOmega, false, 5), tag(Family::BigOmega, true, 3), tag(Family::Omega, false, 4)] {
            let h = random_hamiltonian(t, &pool, 2, true, &mut rng).unwrap();
            let z = random_nonresonant_point(&h, &p, 0.5, &mut rng).unwrap();
            let g = h.gradient(&z, &p, None).unwrap();
            let fd = fd_gradient(|w| h.evaluate(w, &p, None), &z).unwrap();
            let scale = g.d_xi.iter().chain(&g.d_eta).map(|c| c.norm()).fold(0.0, f64::max);
            for i in 0..z.len() {
                assert!((g.d_xi[i] - fd.d_xi[i]).norm() < 1e-5 * scale, "{t}: xi {i}");
                assert!((g.d_eta[i] - fd.d_eta[i]).norm() < 1e-5 * scale, "{t}: eta {i}");
            }
        }
    }

    #[test]
    fn bracket_matches_numeric_poisson_bracket() {
        let p = params();
        let pool = TermPool::new(3, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pairs = [
            (tag(Family::Omega, true, 2), tag(Family::Omega, false, 3)),
            (tag(Family::Omega, true, 3), tag(Family::Omega, false, 4)),
            (tag(Family::BigOmega, true, 2), tag(Family::BigOmega, false, 4)),
            (tag(Family::BigOmega, true, 3), tag(Family::BigOmega, false, 5)),
        ];
        for (ta, tb) in pairs {
            let a = random_hamiltonian(ta, &pool, 1, false, &mut rng).unwrap();
            let b = random_hamiltonian(tb, &pool, 1, true, &mut rng).unwrap();
            let ab = bracket(&a, &b, &p, 1_000_000).unwrap();
            let both = a.add(&b).add(&ab);
            for _ in 0..3 {
                let z = random_nonresonant_point(&both, &p, 0.5, &mut rng).unwrap();
                let exact = poisson_numeric(&a.bind(&p, None), &b.bind(&p, None), &z).unwrap();
                let sym = ab.evaluate(&z, &p, None).unwrap();
                assert!(rel(sym, exact) < 1e-9, "{ta} x {tb}: {sym} vs {exact}");
            }
            let expected = tag(tb.family, false, ab.order().unwrap());
            assert_eq!(ab.order(), Some(ta.r + tb.r - 1));
            let w = subclass_check(&ab, expected).unwrap();
            assert!(w.stored_alpha_valid || expected.family == Family::Omega, "{ta} x {tb}");
        }
    }

    #[test]
    fn self_bracket_cancels() {
        let p = params();
        let pool = TermPool::new(3, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = random_hamiltonian(tag(Family::BigOmega, false, 4), &pool, 2, true, &mut rng).unwrap();
        let hh = bracket(&h, &h, &p, 1_000_000).unwrap();
        let scale = h.terms.iter().map(|t| t.coeff.norm()).fold(0.0, f64::max);
        assert!(hh.terms.iter().all(|t| t.coeff.norm() < 1e-12 * scale * scale));
    }

    #[test]
    fn homological_solutions_have_small_residuals() {
        let p = params();
        let pool = TermPool::new(3, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for (t, mode) in [(tag(Family::Omega, false, 3), HomologicalMode::Z4), (tag(Family::BigOmega, false, 4), HomologicalMode::Z4Z6)] {
            let h = random_hamiltonian(t, &pool, 2, false, &mut rng).unwrap();
            let chi = solve_homological(&h, mode).unwrap();
            let pts: Vec<_> = (0..4).map(|_| random_nonresonant_point(&chi, &p, 0.5, &mut rng).unwrap()).collect();
            assert!(homological_residual(&h, &chi, mode, &p, &pts).unwrap() < 1e-9);
            let star = classify(&chi);
            assert!(matches!(star, HamiltonianTag::Subclass(SubclassTag { star: true, .. })), "{star:?}");
        }
        let h = random_hamiltonian(tag(Family::Omega, false, 3), &pool, 0, true, &mut rng).unwrap();
        assert!(matches!(solve_homological(&h, HomologicalMode::Z4), Err(RnfError::NotSolvable(_))));
    }

    #[test]
    fn z4_acts_on_monomials_by_frequency() {
        let p = params();
        let pool = TermPool::new(3, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pi = pool.cores[0].with_action(1);
        let mono = RationalHamiltonian::from_terms(3, [RationalTerm::monomial(Complex64::new(1.0, 0.0), pi.clone())]);
        let z = FourierState::random_real(3, 0.4, 0.0, &mut rng);
        let z4 = ActionHamiltonian { params: p.clone(), with_sextic: false };
        let lhs = poisson_numeric(&z4, &mono.bind(&p, None), &z).unwrap();
        let sums = ActionSums::new(3, z.complex_actions(), &p);
        let rhs = I * sums.omega_general(&pi.irreducible_part()) * monomial_value(&pi, &z).unwrap();
        assert!(rel(lhs, rhs) < 1e-12);
    }

    #[test]
    fn birkhoff_sextic_remainder_and_its_first_rational_step() {
        let p = ModelParams::cubic(3);
        let bnf = birkhoff_normal_form(3, 3).unwrap();
        let k6 = RationalHamiltonian::from_polynomial(&bnf.irreducible(3), &p, 3);
        assert!(!k6.is_empty());
        assert_eq!(classify(&k6), HamiltonianTag::Subclass(tag(Family::Omega, false, 3)));
        let chi = solve_homological(&k6.neg(), HomologicalMode::Z4).unwrap();
        assert_eq!(classify(&chi), HamiltonianTag::Subclass(tag(Family::Omega, true, 2)));
        distribute_derivatives_certificate(&chi, 12.0).unwrap();
    }

    #[test]
    fn certificate_fails_when_numerator_gauges_are_too_small() {
        let pool = TermPool::new(5, 3).unwrap();
        let by = |f: fn(&MultiIndex) -> f64, max: bool| {
            let it = pool.cores.iter().cloned();
            if max {
                it.max_by(|a, b| f(a).total_cmp(&f(b))).unwrap()
            } else {
                it.min_by(|a, b| f(a).total_cmp(&f(b))).unwrap()
            }
        };
        let big = by(|k| k.mu_min().unwrap(), true);
        let small = by(|k| k.mu_max().unwrap(), false);
        let pi = small.with_action(0).with_action(0);
        let t = RationalTerm { k_omega: vec![big.clone()], ..RationalTerm::monomial(Complex64::new(1.0, 0.0), pi) };
        let h = RationalHamiltonian::from_terms(5, [t.clone(), t.conjugate()]);
        assert!(big.mu_min().unwrap() > small.mu(3).unwrap());
        assert!(matches!(distribute_derivatives_certificate(&h, 1.0), Err(RnfError::NoMatching(_))));
        let cert = distribute_derivatives_certificate(&h, 100.0).unwrap();
        assert_eq!(cert[0].iota, vec![3, 4]);
    }

    #[test]
    fn subclass_check_rejects_wrong_shapes() {
        let pool = TermPool::new(3, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let h = random_hamiltonian(tag(Family::BigOmega, false, 5), &pool, 2, false, &mut rng).unwrap();
        assert!(subclass_check(&h, tag(Family::BigOmega, false, 5)).is_ok());
        assert!(subclass_check(&h, tag(Family::BigOmega, false, 4)).is_err());
        let mut broken = h.clone();
        broken.terms.truncate(1);
        assert!(matches!(subclass_check(&broken, tag(Family::BigOmega, false, 5)), Err(RnfError::Subclass(_))));
        let mut t = h.terms[0].clone();
        t.h_big.push(pool.cores[0].clone());
        t.h_big.push(pool.cores[0].clone());
        t.h_big.push(pool.cores[0].clone());
        let h3 = RationalHamiltonian::from_terms(3, [t.clone(), t.conjugate()]);
        assert!(subclass_check(&h3, tag(Family::BigOmega, false, h3.order().unwrap())).is_err());
    }

    #[test]
    fn guard_rejects_small_denominators() {
        let p = ModelParams::cubic(3);
        let pool = TermPool::new(3, 3).unwrap();
        let k = pool.cores[0].clone();
        let t = RationalTerm { k_omega: vec![k.clone()], ..RationalTerm::monomial(Complex64::new(1.0, 0.0), k.clone()) };
        let h = RationalHamiltonian::from_terms(3, [t]);
        let z = FourierState::zeros(3);
        assert!(matches!(h.evaluate(&z, &p, None), Err(RnfError::DenominatorFloor { .. })));
    }

    #[test]
    fn terms_serialize_with_divisor_lists() {
        let pool = TermPool::new(3, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let h = random_hamiltonian(tag(Family::BigOmega, true, 3), &pool, 1, false, &mut rng).unwrap();
        let s = serde_json::to_string(&h).unwrap();
        assert!(s.contains("\"k_Omega\"") && s.contains("\"h_Omega\"") && s.contains("\"n\""));
        let back: RationalHamiltonian = serde_json::from_str(&s).unwrap();
        assert_eq!(back, h);
        assert!(h.is_reality_closed(0.0));
    }

    #[test]
    fn nlsp_parameters_are_refused() {
        let h = RationalHamiltonian::new(3);
        let z = FourierState::zeros(3);
        assert!(matches!(h.evaluate(&z, &ModelParams::nlsp(3), None), Err(RnfError::Config(_))));
    }

    fn flow_cfg() -> crate::dynamics::IntegratorConfig {
        crate::dynamics::IntegratorConfig { ode_fixed_steps: Some(40), ..Default::default() }
    }

    #[test]
    fn pipeline_is_identity_without_irreducible_terms() {
        let p = params();
        let pool = TermPool::new(3, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let h = random_hamiltonian(tag(Family::Omega, false, 4), &pool, 0, true, &mut rng).unwrap();
        let z = FourierState::random_real(3, 0.1, 0.0, &mut rng);
        let out = normal_form_pipeline(&h, &p, None, &PipelineConfig::new(4), &[z], &flow_cfg()).unwrap();
        assert!(out.generators.is_empty() && out.remainder.is_empty());
        assert_eq!(out.normal_form.get(&4), Some(&h));
        assert_eq!(out.tau_displacement, vec![0.0]);
    }

    #[test]
    fn pipeline_single_octic_step() {
        let p = params();
        let pool = TermPool::new(3, 3).unwrap();
        let mut terms = Vec::new();
        for (i, core) in pool.cores.iter().take(3).enumerate() {
            let t = RationalTerm::monomial(Complex64::new(0.3 + i as f64, 0.2), core.with_action(i as i64 - 1));
            terms.push(t.conjugate());
            terms.push(t);
        }
        terms.push(RationalTerm::monomial(Complex64::new(0.7, 0.0), MultiIndex::empty().with_action(1).with_action(2).with_action(2).with_action(0)));
        let k8 = RationalHamiltonian::from_terms(3, terms);
        let out = normal_form_pipeline(&k8, &p, None, &PipelineConfig::new(4), &[], &flow_cfg()).unwrap();
        assert_eq!(out.stages.len(), 1);
        let st = &out.stages[0];
        assert_eq!(st.generator_tag, HamiltonianTag::Subclass(tag(Family::BigOmega, true, 2)));
        assert!(st.homological_residual < 1e-10 && st.certificate_ok);
        assert!(out.normal_form[&4].terms.iter().all(|t| t.is_action_only()));
        assert!(out.remainder.is_empty());
    }

    #[test]
    fn pipeline_from_the_sextic_remainder() {
        let p = ModelParams::cubic(3);
        let bnf = birkhoff_normal_form(3, 3).unwrap();
        let k6 = RationalHamiltonian::from_polynomial(&bnf.irreducible(3), &p, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let z = FourierState::random_real(3, 0.05, 1.0, &mut rng);
        let out = normal_form_pipeline(&k6, &p, None, &PipelineConfig::new(4), &[z], &flow_cfg()).unwrap();
        let orders: Vec<(i64, HomologicalMode)> = out.stages.iter().map(|s| (s.order, s.mode)).collect();
        assert_eq!(orders, vec![(3, HomologicalMode::Z4), (4, HomologicalMode::Z4Z6)]);
        assert!(out.stages.iter().all(|s| s.homological_residual < 1e-9 && s.warnings.is_empty()));
        assert!(out.remainder.is_empty());
        assert!(out.tau_displacement[0] > 0.0 && out.tau_displacement[0] < 0.05);
    }
}
