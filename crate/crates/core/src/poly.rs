//! Sparse multivariate polynomials with real coefficients.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jet::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Poly {
    nvars: usize,
    terms: BTreeMap<Vec<u8>, f64>,
}

impl Poly {
    pub fn zero(nvars: usize) -> Poly {
        Poly { nvars, terms: BTreeMap::new() }
    }

    pub fn constant(nvars: usize, c: f64) -> Poly {
        Poly::monomial(nvars, &vec![0; nvars], c)
    }

    pub fn var(nvars: usize, i: usize) -> Poly {
        let mut e = vec![0; nvars];
        e[i] = 1;
        Poly::monomial(nvars, &e, 1.0)
    }

    pub fn monomial(nvars: usize, e: &[u8], c: f64) -> Poly {
        assert_eq!(e.len(), nvars);
        let mut p = Poly::zero(nvars);
        if c != 0.0 {
            p.terms.insert(e.to_vec(), c);
        }
        p
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn terms(&self) -> impl Iterator<Item = (&[u8], f64)> {
        self.terms.iter().map(|(e, &c)| (e.as_slice(), c))
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn degree(&self) -> usize {
        self.terms.keys().map(|e| e.iter().map(|&k| k as usize).sum()).max().unwrap_or(0)
    }

    pub fn coeff(&self, e: &[u8]) -> f64 {
        self.terms.get(e).copied().unwrap_or(0.0)
    }

    /// Largest absolute coefficient.
    pub fn max_coeff(&self) -> f64 {
        self.terms.values().fold(0.0, |m, c| m.max(c.abs()))
    }

    fn add_term(&mut self, e: Vec<u8>, c: f64) {
        let v = self.terms.entry(e).or_insert(0.0);
        *v += c;
        if *v == 0.0 {
            self.terms.retain(|_, c| *c != 0.0);
        }
    }

    pub fn scale(&self, s: f64) -> Poly {
        let mut p = Poly::zero(self.nvars);
        if s != 0.0 {
            for (e, c) in &self.terms {
                p.terms.insert(e.clone(), c * s);
            }
        }
        p
    }

    pub fn deriv(&self, v: usize) -> Poly {
        let mut p = Poly::zero(self.nvars);
        for (e, c) in &self.terms {
            if e[v] > 0 {
                let mut d = e.clone();
                d[v] -= 1;
                p.add_term(d, c * e[v] as f64);
            }
        }
        p
    }

    /// Embeds into a polynomial ring with more variables, variable `i` going to `map[i]`.
    pub fn remap(&self, nvars: usize, map: &[usize]) -> Poly {
        let mut p = Poly::zero(nvars);
        for (e, c) in &self.terms {
            let mut d = vec![0u8; nvars];
            for (i, &k) in e.iter().enumerate() {
                d[map[i]] += k;
            }
            p.add_term(d, *c);
        }
        p
    }

    pub fn eval<S: Scalar>(&self, x: &[S]) -> S {
        assert_eq!(x.len(), self.nvars);
        let proto = &x[0];
        let mut maxe = vec![0usize; self.nvars];
        for e in self.terms.keys() {
            for (v, &k) in e.iter().enumerate() {
                maxe[v] = maxe[v].max(k as usize);
            }
        }
        let powers: Vec<Vec<S>> = (0..self.nvars)
            .map(|v| {
                let mut p = vec![proto.cst(1.0)];
                for k in 1..=maxe[v] {
                    let next = p[k - 1].clone() * x[v].clone();
                    p.push(next);
                }
                p
            })
            .collect();
        let mut acc = proto.cst(0.0);
        for (e, c) in &self.terms {
            let mut t = proto.cst(*c);
            for (v, &k) in e.iter().enumerate() {
                if k > 0 {
                    t = t * powers[v][k as usize].clone();
                }
            }
            acc = acc + t;
        }
        acc
    }

    pub fn eval_f64(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(e, c)| c * e.iter().zip(x).map(|(&k, &xi)| xi.powi(k as i32)).product::<f64>())
            .sum()
    }

    /// Probabilists' Hermite polynomial `He_k(x_v / sqrt 2)`, orthogonal for `e^{-x^2/4}`.
    pub fn hermite(nvars: usize, v: usize, k: usize) -> Poly {
        let s = Poly::var(nvars, v).scale(std::f64::consts::FRAC_1_SQRT_2);
        let mut prev = Poly::constant(nvars, 1.0);
        if k == 0 {
            return prev;
        }
        let mut cur = s.clone();
        for j in 1..k {
            let next = &(&s * &cur) - &prev.scale(j as f64);
            prev = cur;
            cur = next;
        }
        cur
    }

    /// Parses expressions like `x1^2 - 2`, `3*x1*x2 + 0.5`, `x2^3`.
    pub fn parse(src: &str, nvars: usize) -> Result<Poly> {
        let bad = |m: &str| Error::Parse(format!("polynomial `{src}`: {m}"));
        let s: String = src.chars().filter(|c| !c.is_whitespace()).collect();
        if s.is_empty() {
            return Err(bad("empty"));
        }
        let mut out = Poly::zero(nvars);
        let mut terms = Vec::new();
        let mut start = 0;
        let bytes = s.as_bytes();
        for i in 1..bytes.len() {
            if (bytes[i] == b'+' || bytes[i] == b'-') && !matches!(bytes[i - 1], b'e' | b'E' | b'^' | b'*') {
                terms.push(&s[start..i]);
                start = i;
            }
        }
        terms.push(&s[start..]);
        for term in terms {
            let (sign, body) = match term.as_bytes()[0] {
                b'-' => (-1.0, &term[1..]),
                b'+' => (1.0, &term[1..]),
                _ => (1.0, term),
            };
            let mut coef = sign;
            let mut e = vec![0u8; nvars];
            for factor in body.split('*') {
                if let Some(rest) = factor.strip_prefix('x') {
                    let (idx, pow) = match rest.split_once('^') {
                        Some((i, p)) => (i, p.parse::<u8>().map_err(|_| bad("bad exponent"))?),
                        None => (rest, 1),
                    };
                    let idx: usize = idx.parse().map_err(|_| bad("bad variable index"))?;
                    if idx == 0 || idx > nvars {
                        return Err(bad("variable index out of range"));
                    }
                    e[idx - 1] += pow;
                } else {
                    coef *= factor.parse::<f64>().map_err(|_| bad("bad factor"))?;
                }
            }
            out.add_term(e, coef);
        }
        Ok(out)
    }
}

impl<'a> Add<&'a Poly> for &'a Poly {
    type Output = Poly;
    fn add(self, o: &Poly) -> Poly {
        assert_eq!(self.nvars, o.nvars);
        let mut p = self.clone();
        for (e, c) in &o.terms {
            p.add_term(e.clone(), *c);
        }
        p
    }
}

impl<'a> Sub<&'a Poly> for &'a Poly {
    type Output = Poly;
    fn sub(self, o: &Poly) -> Poly {
        self + &o.scale(-1.0)
    }
}

impl<'a> Mul<&'a Poly> for &'a Poly {
    type Output = Poly;
    fn mul(self, o: &Poly) -> Poly {
        assert_eq!(self.nvars, o.nvars);
        let mut p = Poly::zero(self.nvars);
        for (a, ca) in &self.terms {
            for (b, cb) in &o.terms {
                let e: Vec<u8> = a.iter().zip(b).map(|(x, y)| x + y).collect();
                p.add_term(e, ca * cb);
            }
        }
        p
    }
}

impl Neg for &Poly {
    type Output = Poly;
    fn neg(self) -> Poly {
        self.scale(-1.0)
    }
}

impl fmt::Display for Poly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let mut first = true;
        for (e, c) in self.terms.iter().rev() {
            let sign = if *c < 0.0 { "-" } else if first { "" } else { "+" };
            let mut body = Vec::new();
            for (v, &k) in e.iter().enumerate() {
                match k {
                    0 => {}
                    1 => body.push(format!("x{}", v + 1)),
                    _ => body.push(format!("x{}^{}", v + 1, k)),
                }
            }
            let mag = c.abs();
            let text = if body.is_empty() {
                format!("{mag}")
            } else if mag == 1.0 {
                body.join("*")
            } else {
                format!("{mag}*{}", body.join("*"))
            };
            write!(f, "{}{}{}", if first { "" } else { " " }, sign, text)?;
            first = false;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jet::Jet;

    #[test]
    fn parse_and_eval() {
        let p = Poly::parse("x1^2 - 2", 1).unwrap();
        assert_eq!(p.eval_f64(&[3.0]), 7.0);
        let q = Poly::parse("3*x1*x2 + 0.5 - x2^2", 2).unwrap();
        assert_eq!(q.eval_f64(&[1.0, 2.0]), 6.0 + 0.5 - 4.0);
        assert!(Poly::parse("x3", 2).is_err());
    }

    #[test]
    fn hermite_low_degrees() {
        // He_2(x/sqrt2) = x^2/2 - 1
        let h = Poly::hermite(1, 0, 2);
        assert!((h.coeff(&[2]) - 0.5).abs() < 1e-15);
        assert!((h.coeff(&[0]) + 1.0).abs() < 1e-15);
    }

    #[test]
    fn jet_eval_matches_derivative() {
        let p = Poly::parse("x1^3*x2 - 4*x2^2", 2).unwrap();
        let j = p.eval(&Jet::variables(&[1.5, -0.5], 3));
        let dp = p.deriv(0);
        assert!((j.partial_idx(&[0]) - dp.eval_f64(&[1.5, -0.5])).abs() < 1e-12);
        let d2 = p.deriv(1).deriv(1);
        assert!((j.partial_idx(&[1, 1]) - d2.eval_f64(&[1.5, -0.5])).abs() < 1e-12);
    }
}
