//! The integrable Hamiltonians `Z2`, `Z4`, `Z6` as functions of the actions, and the small
//! denominators built from their derivatives.

use num_complex::Complex64;
use num_rational::BigRational;
use num_traits::{FromPrimitive, Num};
use serde::{Deserialize, Serialize};

use crate::coeff::NGEN;
use crate::error::{Result, RnfError};
use crate::index::MultiIndex;
use crate::phase_space::ActionField;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Model {
    Nls,
    Nlsp,
}

/// Taylor data of the nonlinearity at zero plus the tail window for `b`-sums.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub phi0: f64,
    pub phi1: f64,
    pub phi2: f64,
    /// `phi'''(0), phi''''(0), ...`
    #[serde(default)]
    pub higher: Vec<f64>,
    pub model: Model,
    pub tail_window: i64,
}

impl ModelParams {
    /// Cubic NLS, `phi(x) = x`.
    pub fn cubic(tail_window: i64) -> Self {
        Self { phi0: 0.0, phi1: 1.0, phi2: 0.0, higher: vec![], model: Model::Nls, tail_window }
    }

    pub fn nlsp(tail_window: i64) -> Self {
        Self { model: Model::Nlsp, ..Self::cubic(tail_window) }
    }

    pub fn validate(&self) -> Result<()> {
        if self.phi1 == 0.0 {
            return Err(RnfError::Config("phi'(0) must be nonzero".into()));
        }
        if self.tail_window < 0 {
            return Err(RnfError::Config("tail_window must be nonnegative".into()));
        }
        Ok(())
    }

    /// `phi^{(n)}(0)`.
    pub fn taylor(&self, n: usize) -> f64 {
        match n {
            0 => self.phi0,
            1 => self.phi1,
            2 => self.phi2,
            _ => self.higher.get(n - 3).copied().unwrap_or(0.0),
        }
    }

    /// Values bound to the formal generators of exact coefficients.
    pub fn gens(&self) -> [f64; NGEN] {
        std::array::from_fn(|k| self.taylor(k))
    }
}

/// Scalars admitted by the frequency formulas: reals, complex numbers and exact rationals.
pub trait Scalar: Clone + Num + FromPrimitive + Send + Sync {}
impl Scalar for f64 {}
impl Scalar for Complex64 {}
impl Scalar for BigRational {}

fn lift<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("finite parameter")
}

fn inv_sq<T: Scalar>(d: i64) -> T {
    T::one() / T::from_i64(d * d).unwrap()
}

/// Sums over the actions needed by every frequency formula, precomputed once per action field.
///
/// Modes beyond `min(field window, tail_window)` are dropped.
#[derive(Clone, Debug)]
pub struct ActionSums<T> {
    pub window: i64,
    pub values: Vec<T>,
    pub phi1: T,
    pub phi2: T,
    /// `sum I`
    pub s1: T,
    /// `sum I^2`
    pub s2: T,
    /// `sum I^3`
    pub s3: T,
    /// `sum_{b != a} I_b / (a - b)^2`
    pub g1: Vec<T>,
    /// `sum_{b != a} I_b^2 / (a - b)^2`
    pub g2: Vec<T>,
}

impl<T: Scalar> ActionSums<T> {
    /// From values on `[-window, window]`.
    pub fn new(window: i64, values: Vec<T>, p: &ModelParams) -> Self {
        Self::with_phi(window, values, lift(p.phi1), lift(p.phi2))
    }

    pub fn with_phi(window: i64, values: Vec<T>, phi1: T, phi2: T) -> Self {
        assert_eq!(values.len(), (2 * window + 1) as usize);
        let n = values.len();
        let mut s1 = T::zero();
        let mut s2 = T::zero();
        let mut s3 = T::zero();
        for v in &values {
            let sq = v.clone() * v.clone();
            s1 = s1 + v.clone();
            s3 = s3 + sq.clone() * v.clone();
            s2 = s2 + sq;
        }
        let mut g1 = vec![T::zero(); n];
        let mut g2 = vec![T::zero(); n];
        let nonzero: Vec<usize> = (0..n).filter(|&i| !values[i].is_zero()).collect();
        for ia in 0..n {
            for &ib in &nonzero {
                if ib == ia {
                    continue;
                }
                let k: T = inv_sq(ia as i64 - ib as i64);
                g1[ia] = g1[ia].clone() + values[ib].clone() * k.clone();
                g2[ia] = g2[ia].clone() + values[ib].clone() * values[ib].clone() * k;
            }
        }
        Self { window, values, phi1, phi2, s1, s2, s3, g1, g2 }
    }

    pub fn idx(&self, a: i64) -> Option<usize> {
        (a.abs() <= self.window).then(|| (a + self.window) as usize)
    }

    pub fn get(&self, a: i64) -> T {
        self.idx(a).map_or_else(T::zero, |i| self.values[i].clone())
    }

    /// `sum_{b != a} I_b / (a - b)^2`, also for `a` outside the window.
    pub fn g1_at(&self, a: i64) -> T {
        match self.idx(a) {
            Some(i) => self.g1[i].clone(),
            None => self.kernel_sum(a, 1),
        }
    }

    pub fn g2_at(&self, a: i64) -> T {
        match self.idx(a) {
            Some(i) => self.g2[i].clone(),
            None => self.kernel_sum(a, 2),
        }
    }

    fn kernel_sum(&self, a: i64, power: u32) -> T {
        let mut s = T::zero();
        for (i, v) in self.values.iter().enumerate() {
            let b = i as i64 - self.window;
            if b != a && !v.is_zero() {
                let mut t = v.clone();
                if power == 2 {
                    t = t.clone() * v.clone();
                }
                s = s + t * inv_sq(a - b);
            }
        }
        s
    }

    pub fn z4(&self) -> T {
        self.phi1.clone() * (self.s1.clone() * self.s1.clone() - self.s2.clone() / T::from_i64(2).unwrap())
    }

    pub fn z6(&self) -> T {
        let mut kern = T::zero();
        for (v, g) in self.values.iter().zip(&self.g1) {
            kern = kern + v.clone() * v.clone() * g.clone();
        }
        let t = |n: i64| T::from_i64(n).unwrap();
        let poly = t(6) * self.s1.clone() * self.s1.clone() * self.s1.clone() - t(9) * self.s2.clone() * self.s1.clone()
            + t(4) * self.s3.clone();
        T::zero() - self.phi1.clone() * self.phi1.clone() * kern / t(2) + self.phi2.clone() * poly / t(6)
    }

    /// `dZ4/dI_c`.
    pub fn dz4(&self, c: i64) -> T {
        self.phi1.clone() * (self.s1.clone() + self.s1.clone() - self.get(c))
    }

    /// `dZ6/dI_c`.
    pub fn dz6(&self, c: i64) -> T {
        let t = |n: i64| T::from_i64(n).unwrap();
        let ic = self.get(c);
        let kern = t(2) * ic.clone() * self.g1_at(c) + self.g2_at(c);
        let s = self.s1.clone();
        let poly = t(18) * s.clone() * s.clone() - t(18) * ic.clone() * s - t(9) * self.s2.clone() + t(12) * ic.clone() * ic;
        T::zero() - self.phi1.clone() * self.phi1.clone() * kern / t(2) + self.phi2.clone() * poly / t(6)
    }

    /// `d^2 Z6 / dI_c dI_d`.
    pub fn d2z6(&self, c: i64, d: i64) -> T {
        let t = |n: i64| T::from_i64(n).unwrap();
        let p1sq = self.phi1.clone() * self.phi1.clone();
        if c == d {
            let ic = self.get(c);
            T::zero() - p1sq * self.g1_at(c) + self.phi2.clone() * (t(3) * self.s1.clone() - t(2) * ic)
        } else {
            let (ic, id) = (self.get(c), self.get(d));
            T::zero() - p1sq * (ic.clone() + id.clone()) * inv_sq(c - d)
                + self.phi2.clone() * (t(6) * self.s1.clone() - t(3) * ic - t(3) * id)
        }
    }

    /// `sum_c w_c(k) dZ4/dI_c`; equals `omega_k` on irreducible `k`.
    pub fn omega_general(&self, k: &MultiIndex) -> T {
        let mut s = T::zero();
        for (c, w) in k.weights() {
            s = s + T::from_i64(w).unwrap() * self.dz4(c);
        }
        s
    }

    /// `-phi'(0) sum delta I_a` on irreducible `k`.
    pub fn omega(&self, k: &MultiIndex) -> Result<T> {
        if !k.is_irreducible() {
            return Err(RnfError::MalformedIndex(format!("{k} is not irreducible")));
        }
        Ok(self.omega_linear(k))
    }

    /// `-phi'(0) sum delta I_a` without the irreducibility check.
    pub fn omega_linear(&self, k: &MultiIndex) -> T {
        let mut s = T::zero();
        for e in k.entries() {
            let v = self.get(e.a);
            s = if e.delta > 0 { s + v } else { s - v };
        }
        T::zero() - self.phi1.clone() * s
    }

    /// `sum_c w_c(k) d(Z4 + Z6)/dI_c`.
    pub fn omega_big(&self, k: &MultiIndex) -> T {
        let mut s = T::zero();
        for (c, w) in k.weights() {
            s = s + T::from_i64(w).unwrap() * (self.dz4(c) + self.dz6(c));
        }
        s
    }

    /// `omega_k - phi'^2/2 sum_alpha delta_alpha sum_{b not in k} I_b^2 / (a_alpha - b)^2`.
    pub fn omega_tilde(&self, k: &MultiIndex) -> T {
        let support: Vec<i64> = k.count_table().iter().map(|t| t.0).collect();
        let mut corr = T::zero();
        for e in k.entries() {
            let mut inner = self.g2_at(e.a);
            for &b in &support {
                if b != e.a {
                    let ib = self.get(b);
                    inner = inner - ib.clone() * ib * inv_sq(e.a - b);
                }
            }
            corr = if e.delta > 0 { corr + inner } else { corr - inner };
        }
        let half = T::from_f64(0.5).unwrap();
        self.omega_linear(k) - half * self.phi1.clone() * self.phi1.clone() * corr
    }

    /// `2 phi'(0) sum_alpha delta_alpha sum_{b != a_alpha} I_b / (a_alpha - b)^2`.
    pub fn omega_nlsp(&self, k: &MultiIndex) -> T {
        let mut s = T::zero();
        for e in k.entries() {
            let g = self.g1_at(e.a);
            s = if e.delta > 0 { s + g } else { s - g };
        }
        T::from_i64(2).unwrap() * self.phi1.clone() * s
    }

    /// `d omega_k / dI_a` for the general-`k` formula.
    pub fn d_omega(&self, k: &MultiIndex, a: i64) -> T {
        let w = k.weights();
        let total: i64 = w.values().sum();
        let wa = w.get(&a).copied().unwrap_or(0);
        self.phi1.clone() * T::from_i64(2 * total - wa).unwrap()
    }
}

impl ActionSums<f64> {
    pub fn from_field(field: &ActionField, p: &ModelParams) -> Self {
        let w = field.window.min(p.tail_window.max(0));
        let values = (-w..=w).map(|a| field.get(a)).collect();
        Self::new(w, values, p)
    }
}

pub fn z2_value(field: &ActionField, p: &ModelParams) -> f64 {
    (-field.window..=field.window).map(|a| ((a * a) as f64 + p.phi0) * field.get(a)).sum()
}

pub fn z4_value(field: &ActionField, p: &ModelParams) -> f64 {
    ActionSums::new(field.window, field.values.clone(), p).z4()
}

pub fn z6_value(field: &ActionField, p: &ModelParams) -> f64 {
    ActionSums::new(field.window, field.values.clone(), p).z6()
}

pub fn omega(k: &MultiIndex, field: &ActionField, p: &ModelParams) -> Result<f64> {
    ActionSums::from_field(field, p).omega(k)
}

pub fn omega_big(k: &MultiIndex, field: &ActionField, p: &ModelParams) -> f64 {
    ActionSums::from_field(field, p).omega_big(k)
}

pub fn omega_tilde(k: &MultiIndex, field: &ActionField, p: &ModelParams) -> f64 {
    ActionSums::from_field(field, p).omega_tilde(k)
}

pub fn omega_nlsp(k: &MultiIndex, field: &ActionField, p: &ModelParams) -> f64 {
    ActionSums::from_field(field, p).omega_nlsp(k)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sextic() -> MultiIndex {
        MultiIndex::from_sides(&[0, 1, 5], &[-1, 3, 4]).unwrap()
    }

    fn field(pairs: &[(i64, f64)], w: i64) -> ActionField {
        let mut f = ActionField::zeros(w);
        for &(a, v) in pairs {
            f.set(a, v);
        }
        f
    }

    #[test]
    fn z_values() {
        let mut p = ModelParams::cubic(40);
        let t = 0.3;
        let f = field(&[(0, t)], 4);
        assert!((z4_value(&f, &p) - 0.5 * t * t).abs() < 1e-15);
        p.phi2 = 2.0;
        assert!((z6_value(&f, &p) - 2.0 * t * t * t / 6.0).abs() < 1e-15);
        p.phi2 = 0.0;
        let f = field(&[(0, t), (1, t)], 4);
        assert!((z6_value(&f, &p) + t * t * t).abs() < 1e-15);
    }

    #[test]
    fn omega_examples() {
        let p = ModelParams::cubic(40);
        let f = field(&[(0, 0.4), (1, 0.3), (5, 0.1), (-1, 0.2), (3, 0.1), (4, 0.05)], 8);
        assert!((omega(&sextic(), &f, &p).unwrap() + 0.45).abs() < 1e-15);
        let flat = ActionField::from_fn(8, |_| 0.7);
        assert!(omega(&sextic(), &flat, &p).unwrap().abs() < 1e-15);
        assert!(omega(&MultiIndex::action(2), &f, &p).is_err());
        assert_eq!(omega_big(&sextic(), &ActionField::zeros(8), &p), 0.0);
    }

    #[test]
    fn omega_tilde_single_tail_action() {
        let p = ModelParams::cubic(40);
        let f = field(&[(7, 0.1)], 10);
        let expect = -0.5 * 0.01 * ([0, 1, 5].iter().map(|a: &i64| 1.0 / ((a - 7) * (a - 7)) as f64).sum::<f64>()
            - [-1, 3, 4].iter().map(|a: &i64| 1.0 / ((a - 7) * (a - 7)) as f64).sum::<f64>());
        assert!((omega_tilde(&sextic(), &f, &p) - expect).abs() < 1e-15);
    }

    #[test]
    fn dz6_matches_finite_differences() {
        let mut p = ModelParams::cubic(40);
        p.phi2 = 0.7;
        let f = ActionField::from_fn(5, |a| 0.1 / (1.0 + (a * a) as f64) + 0.01 * a as f64 * a as f64 / 30.0);
        let sums = ActionSums::new(5, f.values.clone(), &p);
        for c in -5..=5 {
            let h = 1e-5;
            let mut fp = f.clone();
            fp.set(c, f.get(c) + h);
            let mut fm = f.clone();
            fm.set(c, f.get(c) - h);
            let fd = (z6_value(&fp, &p) - z6_value(&fm, &p)) / (2.0 * h);
            assert!((fd - sums.dz6(c)).abs() <= 1e-8 * fd.abs().max(1e-3), "c={c}");
            for d in -5..=5 {
                let sp = ActionSums::new(5, fp.values.clone(), &p);
                let sm = ActionSums::new(5, fm.values.clone(), &p);
                let fd2 = (sp.dz6(d) - sm.dz6(d)) / (2.0 * h);
                assert!((fd2 - sums.d2z6(d, c)).abs() <= 1e-7 * fd2.abs().max(1e-2), "c={c} d={d}");
            }
        }
    }
}
