//! Signed Fourier indices, multi-indices and their resonance classes.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use itertools::Itertools;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RnfError};

/// A signed index `(delta, a)`: `delta = +1` selects `xi_a`, `delta = -1` selects `eta_a`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "(i8, i64)", try_from = "(i8, i64)")]
pub struct ModeIndex {
    pub delta: i8,
    pub a: i64,
}

impl ModeIndex {
    pub fn new(delta: i8, a: i64) -> Result<Self> {
        if delta != 1 && delta != -1 {
            return Err(RnfError::MalformedIndex(format!("sign {delta} not in {{+1,-1}}")));
        }
        Ok(Self { delta, a })
    }

    pub fn plus(a: i64) -> Self {
        Self { delta: 1, a }
    }

    pub fn minus(a: i64) -> Self {
        Self { delta: -1, a }
    }

    pub fn conjugate(self) -> Self {
        Self { delta: -self.delta, a: self.a }
    }

    /// `sqrt(1 + a^2)`.
    pub fn gauge(self) -> f64 {
        gauge(self.a)
    }
}

pub fn gauge(a: i64) -> f64 {
    (1.0 + (a as f64) * (a as f64)).sqrt()
}

/// `1 + a^2`, the squared gauge, exact.
pub fn gauge_sq(a: i64) -> i64 {
    1 + a * a
}

impl Ord for ModeIndex {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.a, self.delta).cmp(&(other.a, other.delta))
    }
}

impl PartialOrd for ModeIndex {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl From<ModeIndex> for (i8, i64) {
    fn from(j: ModeIndex) -> Self {
        (j.delta, j.a)
    }
}

impl TryFrom<(i8, i64)> for ModeIndex {
    type Error = RnfError;
    fn try_from((delta, a): (i8, i64)) -> Result<Self> {
        ModeIndex::new(delta, a)
    }
}

impl fmt::Display for ModeIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = if self.delta > 0 { '+' } else { '-' };
        if self.a < 0 {
            write!(f, "{s}({})", self.a)
        } else {
            write!(f, "{s}{}", self.a)
        }
    }
}

/// Resonance class, ordered by inclusion: `R` implies `M` implies `Z`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ClassTag {
    None,
    Z,
    M,
    R,
}

/// A multiset of signed indices stored in canonical `(a, delta)` order.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(into = "Vec<ModeIndex>", try_from = "Vec<ModeIndex>")]
pub struct MultiIndex {
    entries: Vec<ModeIndex>,
}

impl From<MultiIndex> for Vec<ModeIndex> {
    fn from(j: MultiIndex) -> Self {
        j.display_order()
    }
}

impl TryFrom<Vec<ModeIndex>> for MultiIndex {
    type Error = RnfError;
    fn try_from(v: Vec<ModeIndex>) -> Result<Self> {
        MultiIndex::new(v)
    }
}

impl MultiIndex {
    /// Builds a multi-index; rejects odd lengths.
    pub fn new(mut entries: Vec<ModeIndex>) -> Result<Self> {
        if entries.len() % 2 != 0 {
            return Err(RnfError::MalformedIndex(format!("odd length {}", entries.len())));
        }
        entries.sort_unstable();
        Ok(Self { entries })
    }

    /// Builds from `(delta, a)` pairs.
    pub fn from_pairs(pairs: &[(i8, i64)]) -> Result<Self> {
        let v = pairs.iter().map(|&(d, a)| ModeIndex::new(d, a)).collect::<Result<Vec<_>>>()?;
        Self::new(v)
    }

    /// Builds from the wavenumbers of the `+` side and the `-` side.
    pub fn from_sides(plus: &[i64], minus: &[i64]) -> Result<Self> {
        let v = plus
            .iter()
            .map(|&a| ModeIndex::plus(a))
            .chain(minus.iter().map(|&a| ModeIndex::minus(a)))
            .collect();
        Self::new(v)
    }

    /// Sorted entries without the parity check, used for sub-multisets such as irreducible parts.
    fn raw(mut entries: Vec<ModeIndex>) -> Self {
        entries.sort_unstable();
        Self { entries }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    /// `xi_a eta_a`.
    pub fn action(a: i64) -> Self {
        Self { entries: vec![ModeIndex::minus(a), ModeIndex::plus(a)] }
    }

    pub fn entries(&self) -> &[ModeIndex] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Half the length, `m` for a monomial of degree `2m`.
    pub fn half_len(&self) -> usize {
        self.entries.len() / 2
    }

    pub fn sigma_delta(&self) -> i64 {
        self.entries.iter().map(|j| j.delta as i64).sum()
    }

    pub fn momentum(&self) -> i64 {
        self.entries.iter().map(|j| j.delta as i64 * j.a).sum()
    }

    pub fn laplacian(&self) -> i64 {
        self.entries.iter().map(|j| j.delta as i64 * j.a * j.a).sum()
    }

    pub fn classify(&self) -> Result<ClassTag> {
        if self.entries.is_empty() || self.entries.len() % 2 != 0 {
            return Err(RnfError::MalformedIndex(format!("length {}", self.entries.len())));
        }
        Ok(self.class_unchecked())
    }

    fn class_unchecked(&self) -> ClassTag {
        if self.sigma_delta() != 0 {
            ClassTag::None
        } else if self.momentum() != 0 {
            ClassTag::Z
        } else if self.laplacian() != 0 {
            ClassTag::M
        } else {
            ClassTag::R
        }
    }

    pub fn is_resonant(&self) -> bool {
        self.class_unchecked() == ClassTag::R
    }

    pub fn conjugate(&self) -> Self {
        Self::raw(self.entries.iter().map(|j| j.conjugate()).collect())
    }

    /// Net count `n_+ - n_-` of every wavenumber with nonzero net count.
    pub fn weights(&self) -> BTreeMap<i64, i64> {
        let mut w = BTreeMap::new();
        for j in &self.entries {
            *w.entry(j.a).or_insert(0) += j.delta as i64;
        }
        w.retain(|_, v| *v != 0);
        w
    }

    /// `(n_+, n_-)` for wavenumber `a`.
    pub fn counts(&self, a: i64) -> (u32, u32) {
        let mut p = 0;
        let mut m = 0;
        for j in self.entries.iter().filter(|j| j.a == a) {
            if j.delta > 0 {
                p += 1
            } else {
                m += 1
            }
        }
        (p, m)
    }

    /// `(a, n_+, n_-)` per distinct wavenumber, in increasing `a`.
    pub fn count_table(&self) -> Vec<(i64, u32, u32)> {
        let mut out: Vec<(i64, u32, u32)> = Vec::new();
        for j in &self.entries {
            match out.last_mut() {
                Some(last) if last.0 == j.a => {
                    if j.delta > 0 {
                        last.1 += 1
                    } else {
                        last.2 += 1
                    }
                }
                _ => out.push((j.a, (j.delta > 0) as u32, (j.delta < 0) as u32)),
            }
        }
        out
    }

    /// The sub-multiset left after removing every conjugate pair.
    pub fn irreducible_part(&self) -> Self {
        let mut v = Vec::new();
        for (a, w) in self.weights() {
            let e = if w > 0 { ModeIndex::plus(a) } else { ModeIndex::minus(a) };
            v.extend(std::iter::repeat_n(e, w.unsigned_abs() as usize));
        }
        Self::raw(v)
    }

    pub fn is_irreducible(&self) -> bool {
        self.count_table().iter().all(|&(_, p, m)| p == 0 || m == 0)
    }

    /// Multiset union.
    pub fn union(&self, other: &Self) -> Self {
        let mut v = self.entries.clone();
        v.extend_from_slice(&other.entries);
        Self::raw(v)
    }

    /// Removes one `+a` and one `-a`; `None` if either is missing.
    pub fn remove_action(&self, a: i64) -> Option<Self> {
        let mut v = self.entries.clone();
        let p = v.iter().position(|j| *j == ModeIndex::plus(a))?;
        v.remove(p);
        let m = v.iter().position(|j| *j == ModeIndex::minus(a))?;
        v.remove(m);
        Some(Self { entries: v })
    }

    pub fn with_action(&self, a: i64) -> Self {
        self.union(&Self::action(a))
    }

    pub fn max_abs(&self) -> i64 {
        self.entries.iter().map(|j| j.a.abs()).max().unwrap_or(0)
    }

    /// Entries sorted by decreasing gauge; ties broken by `a` then `delta`, both descending.
    pub fn mu_order(&self) -> Vec<ModeIndex> {
        let mut v = self.entries.clone();
        v.sort_by(|x, y| {
            (y.a * y.a)
                .cmp(&(x.a * x.a))
                .then(y.a.cmp(&x.a))
                .then(y.delta.cmp(&x.delta))
        });
        v
    }

    /// Gauge of the `k`-th entry in the mu-order, 1-based.
    pub fn mu(&self, k: usize) -> Option<f64> {
        if k == 0 {
            return None;
        }
        self.mu_order().get(k - 1).map(|j| j.gauge())
    }

    pub fn mu_min(&self) -> Option<f64> {
        self.entries.iter().map(|j| j.a.abs()).min().map(gauge)
    }

    pub fn mu_max(&self) -> Option<f64> {
        self.entries.iter().map(|j| j.a.abs()).max().map(gauge)
    }

    /// Product of the squared gauges, `prod (1 + a^2)`.
    pub fn gauge_sq_product(&self) -> f64 {
        self.entries.iter().map(|j| gauge_sq(j.a) as f64).product()
    }

    /// Wavenumbers of the `+` and `-` sides, each sorted.
    pub fn sides(&self) -> (Vec<i64>, Vec<i64>) {
        let p = self.entries.iter().filter(|j| j.delta > 0).map(|j| j.a).collect();
        let m = self.entries.iter().filter(|j| j.delta < 0).map(|j| j.a).collect();
        (p, m)
    }

    pub fn pairs(&self) -> Vec<(i8, i64)> {
        self.display_order().into_iter().map(|j| j.into()).collect()
    }

    /// Plus side first, then minus side, each by increasing `a`.
    pub fn display_order(&self) -> Vec<ModeIndex> {
        let (mut p, m): (Vec<_>, Vec<_>) = self.entries.iter().partition(|j| j.delta > 0);
        p.extend(m);
        p
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.display_order().iter().map(|j| j.to_string()).collect();
        write!(f, "{}", parts.join(" "))
    }
}

/// Default cap on the projected enumeration work.
pub const DEFAULT_ENUMERATION_CAP: u128 = 4_000_000_000;

fn multichoose(n: u128, k: u128) -> u128 {
    // C(n + k - 1, k)
    if k == 0 {
        return 1;
    }
    if n == 0 {
        return 0;
    }
    let mut r: u128 = 1;
    for i in 0..k {
        r = r.saturating_mul(n + i) / (i + 1);
    }
    r
}

/// Upper bound on the work needed by [`enumerate_class`].
pub fn projected_count(m: usize, window: i64, class: ClassTag) -> u128 {
    let n = (2 * window + 1) as u128;
    let m = m as u128;
    match class {
        ClassTag::None => (0..=2 * m).map(|p| multichoose(n, p).saturating_mul(multichoose(n, 2 * m - p))).sum(),
        ClassTag::Z => multichoose(n, m).saturating_mul(multichoose(n, m)),
        ClassTag::M | ClassTag::R => {
            if m < 2 {
                n
            } else {
                multichoose(n, m).saturating_mul(multichoose(n, m - 2)).saturating_mul(if class == ClassTag::M { n } else { 1 })
            }
        }
    }
}

fn disjoint_sorted(p: &[i64], b: &[i64]) -> bool {
    let (mut i, mut j) = (0, 0);
    while i < p.len() && j < b.len() {
        match p[i].cmp(&b[j]) {
            Ordering::Less => i += 1,
            Ordering::Greater => j += 1,
            Ordering::Equal => return false,
        }
    }
    true
}

fn nondecreasing(window: i64, len: usize) -> impl Iterator<Item = Vec<i64>> {
    (-window..=window).combinations_with_replacement(len)
}

/// The minus sides completing a fixed plus side within the class.
fn minus_sides(plus: &[i64], window: i64, class: ClassTag) -> Vec<Vec<i64>> {
    let m = plus.len();
    let mut out = Vec::new();
    match class {
        ClassTag::None => unreachable!(),
        ClassTag::Z => out.extend(nondecreasing(window, m)),
        ClassTag::M | ClassTag::R => {
            let s_p: i64 = plus.iter().sum();
            let q_p: i64 = plus.iter().map(|a| a * a).sum();
            if m == 1 {
                let b = s_p;
                if b.abs() <= window && (class == ClassTag::M || b * b == q_p) {
                    out.push(vec![b]);
                }
                return out;
            }
            for prefix in nondecreasing(window, m - 2) {
                let lo = prefix.last().copied().unwrap_or(-window);
                let s = s_p - prefix.iter().sum::<i64>();
                let q = q_p - prefix.iter().map(|a| a * a).sum::<i64>();
                if class == ClassTag::R {
                    let d2 = 2 * q - s * s;
                    if d2 < 0 {
                        continue;
                    }
                    let d = d2.isqrt();
                    if d * d != d2 || (s - d) % 2 != 0 {
                        continue;
                    }
                    let (b1, b2) = ((s - d) / 2, (s + d) / 2);
                    if b1 >= lo && b2 <= window {
                        let mut v = prefix.clone();
                        v.push(b1);
                        v.push(b2);
                        out.push(v);
                    }
                } else {
                    let start = lo.max(s - window);
                    let end = s.div_euclid(2).min(window);
                    for b1 in start..=end {
                        let mut v = prefix.clone();
                        v.push(b1);
                        v.push(s - b1);
                        out.push(v);
                    }
                }
            }
        }
    }
    out
}

/// Every canonical multi-index of length `2m` in `class` with entries in `[-window, window]`.
///
/// `class` selects the exact class tag of the output when it is `Z`, `M` or `R`; members of
/// smaller classes are also members of larger ones, so `Z` yields all of `Z` including `M` and `R`.
pub fn enumerate_class(
    m: usize,
    window: i64,
    class: ClassTag,
    irreducible_only: bool,
    cap: u128,
) -> Result<Vec<MultiIndex>> {
    if m == 0 {
        return Err(RnfError::MalformedIndex("m must be positive".into()));
    }
    let projected = projected_count(m, window, class);
    if projected > cap {
        return Err(RnfError::ResourceBudget { projected, cap });
    }
    if class == ClassTag::None {
        let mut out = Vec::new();
        for p in 0..=2 * m {
            for plus in nondecreasing(window, p) {
                for minus in nondecreasing(window, 2 * m - p) {
                    if !irreducible_only || disjoint_sorted(&plus, &minus) {
                        out.push(MultiIndex::from_sides(&plus, &minus)?);
                    }
                }
            }
        }
        out.sort();
        return Ok(out);
    }
    let pluses: Vec<Vec<i64>> = nondecreasing(window, m).collect();
    let mut out: Vec<MultiIndex> = pluses
        .par_iter()
        .flat_map_iter(|plus| {
            minus_sides(plus, window, class)
                .into_iter()
                .filter(move |b| !irreducible_only || disjoint_sorted(plus, b))
                .map(move |b| MultiIndex::from_sides(plus, &b).expect("even length"))
        })
        .collect();
    out.sort();
    Ok(out)
}
