//! Polynomial Hamiltonians with exact coefficients and the Birkhoff steps built on them.
//!
//! Each canonical multi-index carries the folded coefficient: the sum of the symmetric
//! coefficients over all orderings of its entries.

use std::collections::{BTreeMap, HashMap};

use num_complex::Complex64;
use num_rational::BigRational;
use num_traits::{One, Zero};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coeff::{crat, factorial, rat, Coeff, NGEN};
use crate::error::{Result, RnfError};
use crate::index::{enumerate_class, gauge, ClassTag, MultiIndex, DEFAULT_ENUMERATION_CAP};
use crate::phase_space::{monomial_gradient_add, monomial_value, FourierState, Functional, Gradient};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PolynomialHamiltonian {
    terms: BTreeMap<MultiIndex, Coeff>,
}

/// Serialized monomial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolyRecord {
    pub index: MultiIndex,
    pub coeff: Coeff,
}

/// Restrictions applied while expanding a bracket.
#[derive(Clone, Copy, Debug, Default)]
pub struct BracketFilter {
    /// Keep only outputs with `Delta = 0`.
    pub resonant_only: bool,
    /// Keep only outputs with every entry in `[-w, w]`.
    pub window: Option<i64>,
}

impl PolynomialHamiltonian {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&MultiIndex, &Coeff)> {
        self.terms.iter()
    }

    pub fn get(&self, j: &MultiIndex) -> Coeff {
        self.terms.get(j).cloned().unwrap_or_default()
    }

    pub fn add_term(&mut self, j: MultiIndex, c: &Coeff) {
        if c.is_zero() {
            return;
        }
        let e = self.terms.entry(j).or_default();
        *e += c;
        if e.is_zero() {
            self.terms.retain(|_, v| !v.is_zero());
        }
    }

    /// Same as [`add_term`](Self::add_term) but defers zero pruning to [`prune`](Self::prune).
    fn accumulate(&mut self, j: MultiIndex, c: &Coeff) {
        *self.terms.entry(j).or_default() += c;
    }

    fn prune(&mut self) {
        self.terms.retain(|_, v| !v.is_zero());
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (j, c) in &other.terms {
            out.accumulate(j.clone(), c);
        }
        out.prune();
        out
    }

    pub fn neg(&self) -> Self {
        Self { terms: self.terms.iter().map(|(j, c)| (j.clone(), -c)).collect() }
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.neg())
    }

    pub fn scale(&self, c: &Coeff) -> Self {
        let mut out = Self::new();
        for (j, v) in &self.terms {
            out.add_term(j.clone(), &(v * c));
        }
        out
    }

    pub fn restrict(&self, pred: impl Fn(&MultiIndex) -> bool) -> Self {
        Self { terms: self.terms.iter().filter(|(j, _)| pred(j)).map(|(j, c)| (j.clone(), c.clone())).collect() }
    }

    /// `(matching, rest)`.
    pub fn partition(&self, pred: impl Fn(&MultiIndex) -> bool) -> (Self, Self) {
        (self.restrict(&pred), self.restrict(|j| !pred(j)))
    }

    /// Half-degree `m` when every monomial has length `2m`.
    pub fn half_degree(&self) -> Option<usize> {
        let mut it = self.terms.keys().map(|j| j.half_len());
        let first = it.next()?;
        it.all(|m| m == first).then_some(first)
    }

    /// `c_{conj j} = conj(c_j)` for every monomial (generators are real).
    pub fn is_reality_paired(&self) -> bool {
        self.terms.iter().all(|(j, c)| self.get(&j.conjugate()) == c.conj())
    }

    /// Coefficients bound to numbers.
    pub fn bind(&self, gens: &[f64; NGEN]) -> BoundPolynomial {
        BoundPolynomial { terms: self.terms.iter().map(|(j, c)| (j.clone(), c.eval(gens))).collect() }
    }

    /// `sup |c_j|` over ordered index tuples, at the given generator values.
    pub fn ordered_sup_norm(&self, gens: &[f64; NGEN]) -> f64 {
        self.terms.iter().map(|(j, c)| c.eval(gens).norm() / orderings(j)).fold(0.0, f64::max)
    }

    pub fn to_records(&self) -> Vec<PolyRecord> {
        self.terms.iter().map(|(j, c)| PolyRecord { index: j.clone(), coeff: c.clone() }).collect()
    }

    pub fn from_records(records: Vec<PolyRecord>) -> Self {
        let mut out = Self::new();
        for r in records {
            out.add_term(r.index, &r.coeff);
        }
        out
    }

    /// Exact bracket `{self, other}`.
    pub fn poisson(&self, other: &Self) -> Self {
        self.poisson_filtered(other, BracketFilter::default())
    }

    pub fn poisson_filtered(&self, other: &Self, filter: BracketFilter) -> Self {
        // other's monomials by (contracted mode, Delta) so that resonant outputs are found by lookup
        let other_terms: Vec<(&MultiIndex, &Coeff)> = other.terms.iter().collect();
        let mut table: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        for (idx, (k, _)) in other_terms.iter().enumerate() {
            let key_delta = if filter.resonant_only { k.laplacian() } else { 0 };
            for (a, _, _) in k.count_table() {
                table.entry((a, key_delta)).or_default().push(idx);
            }
        }
        let outside = |j: &MultiIndex, a: i64| -> bool {
            // true when removing one `a` entry leaves j inside the window
            match filter.window {
                None => true,
                Some(w) => {
                    let out: Vec<i64> = j.entries().iter().filter(|e| e.a.abs() > w).map(|e| e.a).collect();
                    out.is_empty() || (out.len() == 1 && out[0] == a)
                }
            }
        };
        let self_terms: Vec<(&MultiIndex, &Coeff)> = self.terms.iter().collect();
        let partial: Vec<HashMap<MultiIndex, Coeff>> = self_terms
            .par_iter()
            .map(|(j, cj)| {
                let mut acc: HashMap<MultiIndex, Coeff> = HashMap::new();
                let want = if filter.resonant_only { -j.laplacian() } else { 0 };
                for (a, np_j, nm_j) in j.count_table() {
                    if !outside(j, a) {
                        continue;
                    }
                    let Some(cands) = table.get(&(a, want)) else { continue };
                    for &ki in cands {
                        let (k, ck) = other_terms[ki];
                        if !outside(k, a) {
                            continue;
                        }
                        let (np_k, nm_k) = k.counts(a);
                        let factor = nm_j as i64 * np_k as i64 - np_j as i64 * nm_k as i64;
                        if factor == 0 {
                            continue;
                        }
                        let out = j.union(k).remove_action(a).expect("contracted pair present");
                        let c = (&(*cj * ck).times_i()).scale_rat(&rat(factor, 1));
                        *acc.entry(out).or_default() += &c;
                    }
                }
                acc
            })
            .collect();
        let mut out = Self::new();
        for m in partial {
            for (j, c) in m {
                out.accumulate(j, &c);
            }
        }
        out.prune();
        out
    }
}

/// Number of distinct orderings of the entries of `j`.
pub fn orderings(j: &MultiIndex) -> f64 {
    let mut denom = 1.0;
    let mut run = 1.0;
    let e = j.entries();
    for i in 1..=e.len() {
        if i < e.len() && e[i] == e[i - 1] {
            run += 1.0;
            denom *= run;
        } else {
            run = 1.0;
        }
    }
    (1..=e.len()).map(|k| k as f64).product::<f64>() / denom
}

/// `(#orderings of a multiset of wavenumbers)`, exact.
fn side_orderings(side: &[i64]) -> BigRational {
    let mut denom = BigRational::one();
    let mut run = 1u32;
    for i in 1..=side.len() {
        if i < side.len() && side[i] == side[i - 1] {
            run += 1;
        } else {
            denom *= factorial(run);
            run = 1;
        }
    }
    factorial(side.len() as u32) / denom
}

/// Coefficients bound to numbers; evaluates on states.
#[derive(Clone, Debug)]
pub struct BoundPolynomial {
    pub terms: Vec<(MultiIndex, Complex64)>,
}

impl Functional for BoundPolynomial {
    fn value(&self, z: &FourierState) -> Result<Complex64> {
        let mut s = Complex64::zero();
        for (j, c) in &self.terms {
            s += c * monomial_value(j, z)?;
        }
        Ok(s)
    }

    fn gradient(&self, z: &FourierState) -> Result<Gradient> {
        let mut g = Gradient::zeros(z.window);
        for (j, c) in &self.terms {
            monomial_gradient_add(j, *c, z, &mut g)?;
        }
        Ok(g)
    }
}

/// `(m - 1)`-th Taylor term of the nonlinearity on `M_m`, folded over orderings.
pub fn p2m_coefficients(m: usize, window: i64) -> Result<PolynomialHamiltonian> {
    if m == 0 || m > NGEN {
        return Err(RnfError::Config(format!("exact generators cover 1 <= m <= {NGEN}, got {m}")));
    }
    let mut out = PolynomialHamiltonian::new();
    let base = BigRational::one() / factorial(m as u32);
    for j in enumerate_class(m, window, ClassTag::M, false, DEFAULT_ENUMERATION_CAP)? {
        let (p, q) = j.sides();
        let r = &base * side_orderings(&p) * side_orderings(&q);
        out.add_term(j, &Coeff::generator(m - 1, r));
    }
    Ok(out)
}

/// `sum a^2 I_a` over the window.
pub fn laplacian_part(window: i64) -> PolynomialHamiltonian {
    let mut out = PolynomialHamiltonian::new();
    for a in -window..=window {
        out.add_term(MultiIndex::action(a), &Coeff::int(a * a));
    }
    out
}

/// `Z2 = sum (a^2 + phi(0)) I_a`.
pub fn z2_poly(window: i64) -> PolynomialHamiltonian {
    let mut out = laplacian_part(window);
    for a in -window..=window {
        out.add_term(MultiIndex::action(a), &Coeff::generator(0, rat(1, 1)));
    }
    out
}

/// `Z4 = phi'(0) (sum I)^2 - phi'(0)/2 sum I^2`, built from the closed form.
pub fn z4_formula(window: i64) -> PolynomialHamiltonian {
    let mut out = PolynomialHamiltonian::new();
    for a in -window..=window {
        for b in a..=window {
            let j = MultiIndex::action(a).union(&MultiIndex::action(b));
            let r = if a == b { rat(1, 2) } else { rat(2, 1) };
            out.add_term(j, &Coeff::generator(1, r));
        }
    }
    out
}

/// `Z6` from its closed form, both the `phi'^2` kernel part and the `phi''` part.
pub fn z6_formula(window: i64) -> PolynomialHamiltonian {
    let mut out = PolynomialHamiltonian::new();
    let act = |a: i64| MultiIndex::action(a);
    let p1sq = |r: BigRational| Coeff::monomial([0, 2, 0, 0], crat(r, BigRational::zero()));
    for a in -window..=window {
        for b in -window..=window {
            if a != b {
                let j = act(a).union(&act(a)).union(&act(b));
                out.add_term(j, &p1sq(rat(-1, 2 * (a - b) * (a - b))));
            }
        }
    }
    // (phi''/6)(6 S^3 - 9 S sum I^2 + 4 sum I^3) on canonical monomials
    for a in -window..=window {
        for b in a..=window {
            for c in b..=window {
                let j = act(a).union(&act(b)).union(&act(c));
                let r = if a == b && b == c {
                    rat(6 - 9 + 4, 6)
                } else if a == b || b == c {
                    // I_x^2 I_y: 6 S^3 gives 18, -9 S sum I^2 gives -9
                    rat(18 - 9, 6)
                } else {
                    rat(36, 6)
                };
                out.add_term(j, &Coeff::generator(2, r));
            }
        }
    }
    out
}

/// Solves `{Z2, chi} = -Q` monomial by monomial; `Q` must have no resonant monomial.
pub fn solve_z2_homological(q: &PolynomialHamiltonian) -> Result<PolynomialHamiltonian> {
    let mut out = PolynomialHamiltonian::new();
    for (j, c) in q.iter() {
        let d = j.laplacian();
        if d == 0 {
            return Err(RnfError::NotSolvable(format!("resonant monomial {j}")));
        }
        out.add_term(j.clone(), &c.times_i().scale_rat(&rat(1, d)));
    }
    Ok(out)
}

/// Non-resonant part of `P4`.
pub fn q4(window: i64) -> Result<PolynomialHamiltonian> {
    Ok(p2m_coefficients(2, window)?.restrict(|j| j.laplacian() != 0))
}

/// Generator of the quartic step: `{Z2, chi4} = Z4 - P4`.
pub fn chi4(window: i64) -> Result<PolynomialHamiltonian> {
    solve_z2_homological(&q4(window)?)
}

/// Action-only and irreducible resonant parts of `1/2 {Q4, chi4}`.
#[derive(Clone, Debug)]
pub struct Z6Oracle {
    pub window: i64,
    /// Coefficient of `I_a^3`.
    pub alpha: BTreeMap<i64, Coeff>,
    /// Coefficient of `I_a^2 I_b`, `a != b`.
    pub beta: BTreeMap<(i64, i64), Coeff>,
    /// Symmetric coefficient of `I_a I_b I_c`, `a < b < c`.
    pub gamma: BTreeMap<(i64, i64, i64), Coeff>,
    pub action_part: PolynomialHamiltonian,
    pub irreducible_part: PolynomialHamiltonian,
}

/// Exact resonant part of `1/2 {Q4, chi4}` with every entry in `[-window, window]`.
///
/// Intermediate contracted modes range up to `3 window`, so both factors are built on that
/// wider window and pruned to monomials with at most one entry outside `[-window, window]`.
pub fn extract_z6_oracle(window: i64) -> Result<Z6Oracle> {
    let wide = 3 * window;
    let near = |j: &MultiIndex| j.entries().iter().filter(|e| e.a.abs() > window).count() <= 1;
    let q = q4(wide)?.restrict(near);
    let chi = solve_z2_homological(&q)?;
    let filter = BracketFilter { resonant_only: true, window: Some(window) };
    let half = Coeff::rational(rat(1, 2));
    let res = q.poisson_filtered(&chi, filter).scale(&half);
    let (action_part, irreducible_part) = res.partition(|j| j.irreducible_part().is_empty());
    let mut alpha = BTreeMap::new();
    let mut beta = BTreeMap::new();
    let mut gamma = BTreeMap::new();
    let act = |a: i64| MultiIndex::action(a);
    for a in -window..=window {
        alpha.insert(a, action_part.get(&act(a).union(&act(a)).union(&act(a))));
        for b in -window..=window {
            if a != b {
                beta.insert((a, b), action_part.get(&act(a).union(&act(a)).union(&act(b))));
            }
            for c in (b + 1)..=window {
                if a < b {
                    let g = action_part.get(&act(a).union(&act(b)).union(&act(c)));
                    gamma.insert((a, b, c), g.scale_rat(&rat(1, 6)));
                }
            }
        }
    }
    Ok(Z6Oracle { window, alpha, beta, gamma, action_part, irreducible_part })
}

/// Expected `I_a^2 I_b` coefficient `-phi'(0)^2 / (2 (a - b)^2)`.
pub fn beta_closed_form(a: i64, b: i64) -> Coeff {
    Coeff::monomial([0, 2, 0, 0], crat(rat(-1, 2 * (a - b) * (a - b)), BigRational::zero()))
}

/// Result of [`truncate_resonant`].
#[derive(Clone, Debug)]
pub struct TruncationSplit {
    pub kept: PolynomialHamiltonian,
    pub removed: PolynomialHamiltonian,
    /// Largest `<mu_1(Irr j)>` among kept monomials.
    pub kept_weight: f64,
    pub threshold: f64,
}

/// Default truncation factor `1 / (2m)`.
pub fn default_nu(m: usize) -> f64 {
    1.0 / (2.0 * m as f64)
}

/// Splits on `<mu_3(j)> <= nu N` and certifies `<mu_1(Irr j)> <= N^2` on the kept part.
pub fn truncate_resonant(k: &PolynomialHamiltonian, n: f64, nu: f64) -> Result<TruncationSplit> {
    let threshold = nu * n;
    let (kept, removed) = k.partition(|j| j.mu(3).is_none_or(|m3| m3 <= threshold));
    let mut kept_weight: f64 = 0.0;
    for (j, _) in kept.iter() {
        let w = j.irreducible_part().mu_max().unwrap_or(0.0);
        if w > n * n {
            return Err(RnfError::Certificate(format!("{j}: <mu_1(Irr)> = {w} > N^2 = {}", n * n)));
        }
        kept_weight = kept_weight.max(w);
    }
    Ok(TruncationSplit { kept, removed, kept_weight, threshold })
}

/// Resonant normal form of the Galerkin Hamiltonian `Z2 + P4 + ... + P_{2r}` on a window.
#[derive(Clone, Debug)]
pub struct BirkhoffNormalForm {
    pub window: i64,
    pub r: usize,
    /// Resonant part at half-degree `m`, for `m = 2..=r`.
    pub resonant: BTreeMap<usize, PolynomialHamiltonian>,
    /// Generator eliminating the non-resonant part at half-degree `m`.
    pub generators: BTreeMap<usize, PolynomialHamiltonian>,
}

impl BirkhoffNormalForm {
    /// Action-only part at half-degree `m`.
    pub fn actions_only(&self, m: usize) -> PolynomialHamiltonian {
        self.resonant.get(&m).map(|p| p.restrict(|j| j.irreducible_part().is_empty())).unwrap_or_default()
    }

    /// Resonant irreducible remainder at half-degree `m`.
    pub fn irreducible(&self, m: usize) -> PolynomialHamiltonian {
        self.resonant.get(&m).map(|p| p.restrict(|j| !j.irreducible_part().is_empty())).unwrap_or_default()
    }
}

/// Eliminates non-resonant monomials order by order with `Z2`, transforming the whole
/// Hamiltonian by the Lie series `F -> F + {F, chi} + {{F, chi}, chi}/2 + ...` truncated at degree `2r`.
pub fn birkhoff_normal_form(window: i64, r: usize) -> Result<BirkhoffNormalForm> {
    let mut parts: BTreeMap<usize, PolynomialHamiltonian> = BTreeMap::new();
    for m in 2..=r {
        parts.insert(m, p2m_coefficients(m, window)?);
    }
    let z2 = z2_poly(window);
    let filter = BracketFilter { resonant_only: false, window: Some(window) };
    let mut resonant = BTreeMap::new();
    let mut generators = BTreeMap::new();
    for d in 2..=r {
        let hd = parts.get(&d).cloned().unwrap_or_default();
        let (res, nonres) = hd.partition(|j| j.laplacian() == 0);
        let chi = solve_z2_homological(&nonres)?;
        let mut next = parts.clone();
        let mut sources: Vec<(usize, PolynomialHamiltonian)> = vec![(1, z2.clone())];
        sources.extend(parts.iter().map(|(m, p)| (*m, p.clone())));
        for (deg0, p) in sources {
            let mut term = p;
            let mut deg = deg0;
            let mut n = 1i64;
            loop {
                deg += d - 1;
                if deg > r || term.is_empty() {
                    break;
                }
                term = term.poisson_filtered(&chi, filter).scale(&Coeff::rational(rat(1, n)));
                let e = next.entry(deg).or_default();
                *e = e.add(&term);
                n += 1;
            }
        }
        parts = next;
        let after = parts.get(&d).cloned().unwrap_or_default();
        if after != res {
            return Err(RnfError::Contradiction(format!("non-resonant remainder at degree {}", 2 * d)));
        }
        resonant.insert(d, res);
        generators.insert(d, chi);
    }
    Ok(BirkhoffNormalForm { window, r, resonant, generators })
}

/// `sup |c''| <= 2 m n sup |c| sup |c'|` on ordered coefficients for `c'' = {P, Q}`.
pub fn bracket_bound_holds(p: &PolynomialHamiltonian, q: &PolynomialHamiltonian, out: &PolynomialHamiltonian, gens: &[f64; NGEN]) -> bool {
    let (Some(m), Some(n)) = (p.half_degree(), q.half_degree()) else { return true };
    let lhs = out.ordered_sup_norm(gens);
    let rhs = 2.0 * (m * n) as f64 * p.ordered_sup_norm(gens) * q.ordered_sup_norm(gens);
    lhs <= rhs * (1.0 + 1e-12)
}

/// `<mu_1(Irr j)>` over the monomials, 0 when all are action-only.
pub fn weight(p: &PolynomialHamiltonian) -> f64 {
    p.iter().filter_map(|(j, _)| j.irreducible_part().mu_max()).fold(0.0, f64::max)
}

/// `<a>` for convenience in reports.
pub fn gauge_of(a: i64) -> f64 {
    gauge(a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phase_space::poisson_numeric;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const GENS: [f64; NGEN] = [0.0, 1.0, 0.0, 0.0];

    #[test]
    fn p2m_examples() {
        let p2 = p2m_coefficients(1, 2).unwrap();
        assert_eq!(p2.len(), 5);
        assert_eq!(p2.get(&MultiIndex::action(1)), Coeff::generator(0, rat(1, 1)));
        let p4 = p2m_coefficients(2, 3).unwrap();
        // distinct quartet: ordered coefficient phi'/12, folded over 2 * 2 * (4!/(2!2!)) ... 24/1 orderings
        let j = MultiIndex::from_sides(&[2, 0], &[1, 1]).unwrap();
        let c = p4.get(&j).eval(&GENS).re;
        assert!((c / orderings(&j) - 1.0 / 12.0).abs() < 1e-15);
        for (j, c) in p4.iter() {
            assert!((c.eval(&GENS).re / orderings(j) - 1.0 / 12.0).abs() < 1e-15);
        }
    }

    #[test]
    fn p4_count_matches_brute_force() {
        let p4 = p2m_coefficients(2, 2).unwrap();
        let brute = enumerate_class(2, 2, ClassTag::None, false, u128::MAX)
            .unwrap()
            .into_iter()
            .filter(|j| j.classify().unwrap() >= ClassTag::M)
            .count();
        assert_eq!(p4.len(), brute);
    }

    #[test]
    fn chi4_example_coefficient() {
        let chi = chi4(3).unwrap();
        let j = MultiIndex::from_sides(&[2, 0], &[1, 1]).unwrap();
        let ordered = chi.get(&j).eval(&GENS) / orderings(&j);
        // i q / Delta with q = phi'/12, Delta = 2
        assert!((ordered - Complex64::new(0.0, 1.0 / 24.0)).norm() < 1e-15);
        assert!(chi.iter().all(|(j, _)| j.laplacian() != 0));
    }

    #[test]
    fn homological_identity_small() {
        let w = 3;
        let lhs = z4_formula(w).sub(&p2m_coefficients(2, w).unwrap()).sub(&z2_poly(w).poisson(&chi4(w).unwrap()));
        assert!(lhs.is_zero());
    }

    #[test]
    fn self_bracket_vanishes_and_bound_holds() {
        let p = p2m_coefficients(2, 2).unwrap();
        assert!(p.poisson(&p).is_zero());
        let chi = chi4(2).unwrap();
        let b = p.poisson(&chi);
        assert!(bracket_bound_holds(&p, &chi, &b, &GENS));
    }

    #[test]
    fn bracket_matches_numeric_oracle() {
        let p = p2m_coefficients(2, 2).unwrap();
        let chi = chi4(2).unwrap();
        let b = p.poisson(&chi).bind(&GENS);
        let (pb, cb) = (p.bind(&GENS), chi.bind(&GENS));
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let z = FourierState::random_real(2, 0.7, 0.0, &mut rng);
            let num = poisson_numeric(&pb, &cb, &z).unwrap();
            let sym = b.value(&z).unwrap();
            assert!((num - sym).norm() <= 1e-10 * num.norm().max(sym.norm()));
        }
    }

    #[test]
    fn z2_bracket_is_laplacian_multiple() {
        let mut m = PolynomialHamiltonian::new();
        let j = MultiIndex::from_sides(&[2, 0, 4], &[1, 1, 3]).unwrap();
        m.add_term(j.clone(), &Coeff::int(1));
        let b = z2_poly(4).poisson(&m);
        assert_eq!(b.get(&j), Coeff::int(j.laplacian()).times_i());
        assert_eq!(b.len(), 1);
    }

    #[test]
    fn truncation_examples() {
        let mut k = PolynomialHamiltonian::new();
        let j = MultiIndex::from_sides(&[0, 1, 5], &[-1, 3, 4]).unwrap();
        k.add_term(j.clone(), &Coeff::int(1));
        let split = truncate_resonant(&k, 3.0, default_nu(3)).unwrap();
        assert!(split.kept.is_empty());
        assert_eq!(split.removed.get(&j), Coeff::int(1));
        let split = truncate_resonant(&k, 1e6, default_nu(3)).unwrap();
        assert!(split.removed.is_empty());
    }

    #[test]
    fn z6_oracle_small_window() {
        let o = extract_z6_oracle(3).unwrap();
        assert!(o.alpha.values().all(|c| c.is_zero()));
        assert!(o.gamma.values().all(|c| c.is_zero()));
        for (&(a, b), c) in &o.beta {
            assert_eq!(*c, beta_closed_form(a, b), "beta({a},{b})");
        }
    }
}
