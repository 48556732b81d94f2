//! Exact coefficients: complex rationals times monomials in the formal generators
//! `phi(0), phi'(0), phi''(0), phi'''(0)`.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use num_bigint::BigInt;
use num_complex::{Complex, Complex64};
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

pub type CRational = Complex<BigRational>;

/// Number of formal generators.
pub const NGEN: usize = 4;

/// Exponent vector over `(phi(0), phi'(0), phi''(0), phi'''(0))`.
pub type GenExp = [u8; NGEN];

pub fn rat(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

pub fn crat(re: BigRational, im: BigRational) -> CRational {
    Complex::new(re, im)
}

/// A formal polynomial in the generators with complex rational coefficients.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Coeff(BTreeMap<GenExp, CRational>);

impl Coeff {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: CRational) -> Self {
        Self::monomial([0; NGEN], c)
    }

    pub fn rational(r: BigRational) -> Self {
        Self::constant(crat(r, BigRational::zero()))
    }

    pub fn int(n: i64) -> Self {
        Self::rational(rat(n, 1))
    }

    /// `c` times the monomial with exponents `e`.
    pub fn monomial(e: GenExp, c: CRational) -> Self {
        let mut m = BTreeMap::new();
        if !c.is_zero() {
            m.insert(e, c);
        }
        Self(m)
    }

    /// `r` times the `k`-th derivative of phi at 0.
    pub fn generator(k: usize, r: BigRational) -> Self {
        let mut e = [0; NGEN];
        e[k] = 1;
        Self::monomial(e, crat(r, BigRational::zero()))
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&GenExp, &CRational)> {
        self.0.iter()
    }

    pub fn get(&self, e: &GenExp) -> CRational {
        self.0.get(e).cloned().unwrap_or_else(CRational::zero)
    }

    pub fn scale(&self, c: &CRational) -> Self {
        if c.is_zero() {
            return Self::zero();
        }
        Self(self.0.iter().map(|(e, v)| (*e, v * c)).collect())
    }

    pub fn scale_rat(&self, r: &BigRational) -> Self {
        self.scale(&crat(r.clone(), BigRational::zero()))
    }

    /// Multiplication by `i`.
    pub fn times_i(&self) -> Self {
        Self(self.0.iter().map(|(e, v)| (*e, Complex::new(-v.im.clone(), v.re.clone()))).collect())
    }

    pub fn conj(&self) -> Self {
        Self(self.0.iter().map(|(e, v)| (*e, v.conj())).collect())
    }

    fn add_term(&mut self, e: GenExp, c: CRational) {
        use std::collections::btree_map::Entry;
        match self.0.entry(e) {
            Entry::Vacant(v) => {
                if !c.is_zero() {
                    v.insert(c);
                }
            }
            Entry::Occupied(mut o) => {
                *o.get_mut() += c;
                if o.get().is_zero() {
                    o.remove();
                }
            }
        }
    }

    /// Numeric value at the given generator values.
    pub fn eval(&self, gens: &[f64; NGEN]) -> Complex64 {
        let mut s = Complex64::zero();
        for (e, c) in &self.0 {
            let mut g = 1.0;
            for (k, &p) in e.iter().enumerate() {
                g *= gens[k].powi(p as i32);
            }
            s += Complex64::new(c.re.to_f64().unwrap_or(f64::NAN), c.im.to_f64().unwrap_or(f64::NAN)) * g;
        }
        s
    }

    /// Largest modulus bound `|re| + |im|` over generator monomials, as a float.
    pub fn max_abs(&self) -> f64 {
        self.0
            .values()
            .map(|c| (c.re.abs() + c.im.abs()).to_f64().unwrap_or(f64::INFINITY))
            .fold(0.0, f64::max)
    }
}

impl Add for &Coeff {
    type Output = Coeff;
    fn add(self, rhs: &Coeff) -> Coeff {
        let mut out = self.clone();
        out += rhs;
        out
    }
}

impl AddAssign<&Coeff> for Coeff {
    fn add_assign(&mut self, rhs: &Coeff) {
        for (e, c) in &rhs.0 {
            self.add_term(*e, c.clone());
        }
    }
}

impl Neg for &Coeff {
    type Output = Coeff;
    fn neg(self) -> Coeff {
        Coeff(self.0.iter().map(|(e, c)| (*e, -c.clone())).collect())
    }
}

impl Sub for &Coeff {
    type Output = Coeff;
    fn sub(self, rhs: &Coeff) -> Coeff {
        self + &(-rhs)
    }
}

impl Mul for &Coeff {
    type Output = Coeff;
    fn mul(self, rhs: &Coeff) -> Coeff {
        let mut out = Coeff::zero();
        for (e1, c1) in &self.0 {
            for (e2, c2) in &rhs.0 {
                let mut e = [0u8; NGEN];
                for k in 0..NGEN {
                    e[k] = e1[k] + e2[k];
                }
                out.add_term(e, c1 * c2);
            }
        }
        out
    }
}

const GEN_NAMES: [&str; NGEN] = ["phi0", "phi1", "phi2", "phi3"];

impl fmt::Display for Coeff {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return write!(f, "0");
        }
        let mut first = true;
        for (e, c) in &self.0 {
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            if c.im.is_zero() {
                write!(f, "({})", c.re)?;
            } else if c.re.is_zero() {
                write!(f, "({}i)", c.im)?;
            } else {
                write!(f, "({} + {}i)", c.re, c.im)?;
            }
            for (k, &p) in e.iter().enumerate() {
                match p {
                    0 => {}
                    1 => write!(f, "*{}", GEN_NAMES[k])?,
                    _ => write!(f, "*{}^{}", GEN_NAMES[k], p)?,
                }
            }
        }
        Ok(())
    }
}

/// Serialized form of one generator monomial: exponents, real and imaginary parts as `p/q` strings.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoeffTerm {
    pub exponents: GenExp,
    pub re: String,
    pub im: String,
}

impl Serialize for Coeff {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let v: Vec<CoeffTerm> = self
            .0
            .iter()
            .map(|(e, c)| CoeffTerm { exponents: *e, re: c.re.to_string(), im: c.im.to_string() })
            .collect();
        v.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Coeff {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Vec::<CoeffTerm>::deserialize(d)?;
        let mut out = Coeff::zero();
        for t in v {
            let re: BigRational = t.re.parse().map_err(serde::de::Error::custom)?;
            let im: BigRational = t.im.parse().map_err(serde::de::Error::custom)?;
            out.add_term(t.exponents, Complex::new(re, im));
        }
        Ok(out)
    }
}

/// `n!` as a rational.
pub fn factorial(n: u32) -> BigRational {
    let mut f = BigInt::one();
    for k in 2..=n {
        f *= k;
    }
    BigRational::from_integer(f)
}
