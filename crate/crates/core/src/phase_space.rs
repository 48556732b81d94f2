//! Truncated Fourier states, actions, weighted norms and the numeric Poisson bracket.
//!
//! Bracket convention: `{F, G} = i sum_a (dF/d eta_a dG/d xi_a - dF/d xi_a dG/d eta_a)`,
//! so that the flow of `H` is `xi' = -i dH/d eta`, `eta' = i dH/d xi`, the linear flow of
//! `sum a^2 xi_a eta_a` is `xi_a -> exp(-i a^2 t) xi_a`, and `{Z2, z_j} = i Delta_j z_j`.

use num_complex::Complex64;
use num_traits::Zero;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RnfError};
use crate::index::gauge;

pub const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Default tolerance on `|eta - conj(xi)|` for reality-flagged states.
pub const REALITY_TOL: f64 = 1e-12;

/// Coefficients `(xi_a, eta_a)` for `a` in `[-window, window]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FourierState {
    pub window: i64,
    pub xi: Vec<Complex64>,
    pub eta: Vec<Complex64>,
    pub reality: bool,
}

/// One serialized mode.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeRecord {
    pub a: i64,
    pub xi_re: f64,
    pub xi_im: f64,
    pub eta_re: f64,
    pub eta_im: f64,
}

impl FourierState {
    pub fn zeros(window: i64) -> Self {
        let n = (2 * window + 1) as usize;
        Self { window, xi: vec![Complex64::zero(); n], eta: vec![Complex64::zero(); n], reality: true }
    }

    /// Real state from the `xi` coefficients; `eta = conj(xi)`.
    pub fn from_xi(window: i64, xi: Vec<Complex64>) -> Self {
        assert_eq!(xi.len(), (2 * window + 1) as usize);
        let eta = xi.iter().map(|x| x.conj()).collect();
        Self { window, xi, eta, reality: true }
    }

    pub fn len(&self) -> usize {
        self.xi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xi.is_empty()
    }

    pub fn idx(&self, a: i64) -> Option<usize> {
        (a.abs() <= self.window).then(|| (a + self.window) as usize)
    }

    pub fn wavenumber(&self, i: usize) -> i64 {
        i as i64 - self.window
    }

    pub fn modes(&self) -> impl Iterator<Item = i64> {
        -self.window..=self.window
    }

    pub fn xi_at(&self, a: i64) -> Complex64 {
        self.idx(a).map_or(Complex64::zero(), |i| self.xi[i])
    }

    pub fn eta_at(&self, a: i64) -> Complex64 {
        self.idx(a).map_or(Complex64::zero(), |i| self.eta[i])
    }

    /// Sets `xi_a` and, for real states, `eta_a = conj(xi_a)`.
    pub fn set_xi(&mut self, a: i64, v: Complex64) {
        let i = self.idx(a).expect("mode inside window");
        self.xi[i] = v;
        if self.reality {
            self.eta[i] = v.conj();
        }
    }

    /// `sum <a>^s (|xi_a| + |eta_a|)`.
    pub fn norm_s(&self, s: f64) -> f64 {
        self.modes()
            .zip(self.xi.iter().zip(&self.eta))
            .map(|(a, (x, e))| gauge(a).powf(s) * (x.norm() + e.norm()))
            .sum()
    }

    /// `max |eta_a - conj(xi_a)|` and the worst mode.
    pub fn reality_defect(&self) -> (f64, i64) {
        let mut worst = (0.0, 0);
        for (i, (x, e)) in self.xi.iter().zip(&self.eta).enumerate() {
            let d = (e - x.conj()).norm();
            if d > worst.0 {
                worst = (d, self.wavenumber(i));
            }
        }
        worst
    }

    pub fn actions(&self) -> Result<ActionField> {
        self.actions_tol(REALITY_TOL)
    }

    /// `I_a = xi_a eta_a`, real part, with a reality check for flagged states.
    pub fn actions_tol(&self, tol: f64) -> Result<ActionField> {
        let mut values = Vec::with_capacity(self.len());
        for (i, (x, e)) in self.xi.iter().zip(&self.eta).enumerate() {
            let p = x * e;
            if self.reality && p.im.abs() > tol * (1.0 + p.re.abs()) {
                return Err(RnfError::NotReal(p.im.abs(), self.wavenumber(i)));
            }
            values.push(p.re);
        }
        Ok(ActionField { window: self.window, values })
    }

    /// Complex products `xi_a eta_a`, without reality checks.
    pub fn complex_actions(&self) -> Vec<Complex64> {
        self.xi.iter().zip(&self.eta).map(|(x, e)| x * e).collect()
    }

    /// Multiplies every `xi_a` by `exp(i theta_a)` and `eta_a` by the conjugate phase.
    pub fn rotate(&self, theta: &[f64]) -> Self {
        let mut out = self.clone();
        for i in 0..self.len() {
            let p = Complex64::from_polar(1.0, theta[i]);
            out.xi[i] *= p;
            out.eta[i] *= p.conj();
        }
        out
    }

    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.xi.iter_mut().for_each(|x| *x *= c);
        out.eta.iter_mut().for_each(|x| *x *= c);
        out
    }

    /// Copies into a window of another size, dropping or zero-padding modes.
    pub fn with_window(&self, window: i64) -> Self {
        let mut out = Self::zeros(window);
        out.reality = self.reality;
        for a in out.clone().modes() {
            if let (Some(i), Some(j)) = (out.idx(a), self.idx(a)) {
                out.xi[i] = self.xi[j];
                out.eta[i] = self.eta[j];
            }
        }
        out
    }

    /// `self - other` over the larger window, flagged real when both are.
    pub fn difference(&self, other: &Self) -> Self {
        let w = self.window.max(other.window);
        let mut out = Self::zeros(w);
        out.reality = self.reality && other.reality;
        for a in -w..=w {
            let i = out.idx(a).unwrap();
            out.xi[i] = self.xi_at(a) - other.xi_at(a);
            out.eta[i] = self.eta_at(a) - other.eta_at(a);
        }
        out
    }

    /// Flattened `(xi, eta)`.
    pub fn to_vec(&self) -> Vec<Complex64> {
        let mut v = self.xi.clone();
        v.extend_from_slice(&self.eta);
        v
    }

    pub fn from_vec(window: i64, v: &[Complex64], reality: bool) -> Self {
        let n = (2 * window + 1) as usize;
        Self { window, xi: v[..n].to_vec(), eta: v[n..2 * n].to_vec(), reality }
    }

    pub fn to_records(&self) -> Vec<ModeRecord> {
        self.modes()
            .zip(self.xi.iter().zip(&self.eta))
            .map(|(a, (x, e))| ModeRecord { a, xi_re: x.re, xi_im: x.im, eta_re: e.re, eta_im: e.im })
            .collect()
    }

    pub fn from_records(records: &[ModeRecord], reality: bool) -> Result<Self> {
        let window = records.iter().map(|r| r.a.abs()).max().unwrap_or(0);
        let mut out = Self::zeros(window);
        out.reality = reality;
        for r in records {
            let i = out.idx(r.a).unwrap();
            out.xi[i] = Complex64::new(r.xi_re, r.xi_im);
            out.eta[i] = Complex64::new(r.eta_re, r.eta_im);
        }
        if reality {
            let (d, a) = out.reality_defect();
            if d > REALITY_TOL {
                return Err(RnfError::NotReal(d, a));
            }
        }
        Ok(out)
    }

    /// Random real state with `|xi_a| <= amplitude <a>^{-decay}` and uniform phases.
    pub fn random_real<R: Rng>(window: i64, amplitude: f64, decay: f64, rng: &mut R) -> Self {
        let mut z = Self::zeros(window);
        for a in -window..=window {
            let r = amplitude * rng.random::<f64>() * gauge(a).powf(-decay);
            let th = rng.random::<f64>() * std::f64::consts::TAU;
            z.set_xi(a, Complex64::from_polar(r, th));
        }
        z
    }
}

/// Actions `I_a` on `[-window, window]`; zero outside.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionField {
    pub window: i64,
    pub values: Vec<f64>,
}

impl ActionField {
    pub fn zeros(window: i64) -> Self {
        Self { window, values: vec![0.0; (2 * window + 1) as usize] }
    }

    pub fn from_fn(window: i64, f: impl Fn(i64) -> f64) -> Self {
        Self { window, values: (-window..=window).map(f).collect() }
    }

    pub fn get(&self, a: i64) -> f64 {
        if a.abs() <= self.window {
            self.values[(a + self.window) as usize]
        } else {
            0.0
        }
    }

    pub fn set(&mut self, a: i64, v: f64) {
        let i = (a + self.window) as usize;
        self.values[i] = v;
    }

    /// `sup <a>^{2s} |I_a|`.
    pub fn norm_s(&self, s: f64) -> f64 {
        (-self.window..=self.window)
            .zip(&self.values)
            .map(|(a, v)| gauge(a).powf(2.0 * s) * v.abs())
            .fold(0.0, f64::max)
    }

    /// `sup <a>^{2s} |I_a|` over `|a| > window_in`.
    pub fn tail_norm_s(&self, s: f64, window_in: i64) -> f64 {
        (-self.window..=self.window)
            .zip(&self.values)
            .filter(|(a, _)| a.abs() > window_in)
            .map(|(a, v)| gauge(a).powf(2.0 * s) * v.abs())
            .fold(0.0, f64::max)
    }

    pub fn is_nonnegative(&self) -> bool {
        self.values.iter().all(|&v| v >= 0.0)
    }
}

/// Derivatives `dF/d xi_a`, `dF/d eta_a` on a state window.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradient {
    pub window: i64,
    pub d_xi: Vec<Complex64>,
    pub d_eta: Vec<Complex64>,
}

impl Gradient {
    pub fn zeros(window: i64) -> Self {
        let n = (2 * window + 1) as usize;
        Self { window, d_xi: vec![Complex64::zero(); n], d_eta: vec![Complex64::zero(); n] }
    }

    /// The Hamiltonian vector field `(-i dH/d eta, i dH/d xi)` as a state.
    pub fn vector_field(&self, reality: bool) -> FourierState {
        FourierState {
            window: self.window,
            xi: self.d_eta.iter().map(|d| -I * d).collect(),
            eta: self.d_xi.iter().map(|d| I * d).collect(),
            reality,
        }
    }
}

/// A functional on phase space with value and gradient.
pub trait Functional: Sync {
    fn value(&self, z: &FourierState) -> Result<Complex64>;

    fn gradient(&self, z: &FourierState) -> Result<Gradient> {
        fd_gradient(|w| self.value(w), z)
    }
}

/// Central finite differences with `h = eps^{1/3} max(1, |coordinate|)` along each real direction.
pub fn fd_gradient(f: impl Fn(&FourierState) -> Result<Complex64>, z: &FourierState) -> Result<Gradient> {
    fd_gradient_scaled(f, z, f64::EPSILON.cbrt(), 1.0)
}

/// Central finite differences with `h = h0 max(floor, |coordinate|)`.
pub fn fd_gradient_scaled(f: impl Fn(&FourierState) -> Result<Complex64>, z: &FourierState, h0: f64, floor: f64) -> Result<Gradient> {
    let mut g = Gradient::zeros(z.window);
    let mut w = z.clone();
    w.reality = false;
    for i in 0..z.len() {
        for side in 0..2 {
            let c = if side == 0 { z.xi[i] } else { z.eta[i] };
            let h = h0 * c.norm().max(floor);
            let set = |w: &mut FourierState, v: Complex64| {
                if side == 0 {
                    w.xi[i] = v
                } else {
                    w.eta[i] = v
                }
            };
            set(&mut w, c + h);
            let fp = f(&w)?;
            set(&mut w, c - h);
            let fm = f(&w)?;
            set(&mut w, c);
            let d = (fp - fm) / (2.0 * h);
            if side == 0 {
                g.d_xi[i] = d
            } else {
                g.d_eta[i] = d
            }
        }
    }
    Ok(g)
}

/// `i sum_a (dF/d eta_a dG/d xi_a - dF/d xi_a dG/d eta_a)` from two gradients on the same window.
pub fn bracket_of_gradients(gf: &Gradient, gg: &Gradient) -> Complex64 {
    let mut s = Complex64::zero();
    for i in 0..gf.d_xi.len() {
        s += gf.d_eta[i] * gg.d_xi[i] - gf.d_xi[i] * gg.d_eta[i];
    }
    I * s
}

/// Numeric Poisson bracket `{F, G}(z)`.
pub fn poisson_numeric(f: &dyn Functional, g: &dyn Functional, z: &FourierState) -> Result<Complex64> {
    Ok(bracket_of_gradients(&f.gradient(z)?, &g.gradient(z)?))
}

/// A single monomial `prod xi^{n+} eta^{n-}` given as a multi-index.
pub struct Monomial(pub crate::index::MultiIndex);

impl Functional for Monomial {
    fn value(&self, z: &FourierState) -> Result<Complex64> {
        monomial_value(&self.0, z)
    }

    fn gradient(&self, z: &FourierState) -> Result<Gradient> {
        let mut g = Gradient::zeros(z.window);
        monomial_gradient_add(&self.0, Complex64::new(1.0, 0.0), z, &mut g)?;
        Ok(g)
    }
}

/// `z_j` at the state; entries outside the window evaluate to zero.
pub fn monomial_value(j: &crate::index::MultiIndex, z: &FourierState) -> Result<Complex64> {
    let mut p = Complex64::new(1.0, 0.0);
    for e in j.entries() {
        p *= if e.delta > 0 { z.xi_at(e.a) } else { z.eta_at(e.a) };
    }
    Ok(p)
}

/// Adds `c * grad z_j` into `g`.
pub fn monomial_gradient_add(
    j: &crate::index::MultiIndex,
    c: Complex64,
    z: &FourierState,
    g: &mut Gradient,
) -> Result<()> {
    let entries = j.entries();
    let vals: Vec<Complex64> =
        entries.iter().map(|e| if e.delta > 0 { z.xi_at(e.a) } else { z.eta_at(e.a) }).collect();
    // prefix and suffix products avoid division by vanishing coordinates
    let n = vals.len();
    let mut pre = vec![Complex64::new(1.0, 0.0); n + 1];
    for k in 0..n {
        pre[k + 1] = pre[k] * vals[k];
    }
    let mut suf = Complex64::new(1.0, 0.0);
    for k in (0..n).rev() {
        let d = c * pre[k] * suf;
        if let Some(i) = z.idx(entries[k].a) {
            if entries[k].delta > 0 {
                g.d_xi[i] += d
            } else {
                g.d_eta[i] += d
            }
        }
        suf *= vals[k];
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::MultiIndex;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn norm_examples() {
        assert_eq!(FourierState::zeros(3).norm_s(2.0), 0.0);
        let mut z = FourierState::zeros(2);
        z.set_xi(0, Complex64::new(0.5, 0.0));
        assert!((z.norm_s(1.0) - 1.0).abs() < 1e-15);
        let mut z = FourierState::zeros(2);
        z.set_xi(1, Complex64::new(0.1, 0.0));
        assert!((z.norm_s(2.0) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn actions_examples() {
        let mut z = FourierState::zeros(1);
        z.set_xi(1, Complex64::new(0.3, 0.0));
        assert!((z.actions().unwrap().get(1) - 0.09).abs() < 1e-16);
        assert!(FourierState::zeros(2).actions().unwrap().values.iter().all(|&v| v == 0.0));
        let mut bad = z.clone();
        bad.eta[2] = Complex64::new(0.3, 0.1);
        assert!(matches!(bad.actions(), Err(RnfError::NotReal(..))));
    }

    #[test]
    fn monomial_gradient_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let z = FourierState::random_real(3, 0.8, 0.0, &mut rng);
        let j = MultiIndex::from_sides(&[0, 1, 1], &[-1, 3, 0]).unwrap();
        let m = Monomial(j.clone());
        let ga = m.gradient(&z).unwrap();
        let gf = fd_gradient(|w| monomial_value(&j, w), &z).unwrap();
        for i in 0..z.len() {
            assert!((ga.d_xi[i] - gf.d_xi[i]).norm() < 1e-8);
            assert!((ga.d_eta[i] - gf.d_eta[i]).norm() < 1e-8);
        }
    }

    #[test]
    fn action_brackets_vanish() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let z = FourierState::random_real(2, 1.0, 0.0, &mut rng);
        for a in -2..=2 {
            for b in -2..=2 {
                let v = poisson_numeric(&Monomial(MultiIndex::action(a)), &Monomial(MultiIndex::action(b)), &z).unwrap();
                assert!(v.norm() < 1e-15);
            }
        }
    }
}
