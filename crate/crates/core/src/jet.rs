//! Truncated multivariate Taylor series ("jets") and the scalar trait that lets
//! closed-form families be evaluated either on plain `f64` or on jets.
//!
//! Monomials are stored in graded order, so truncating a jet to a lower order
//! is a prefix of its coefficient vector.

use std::collections::HashMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::{Arc, Mutex, OnceLock};

/// Highest total degree any jet may carry.
pub const MAX_ORDER: usize = 8;
/// Largest number of jet variables (exponents are packed into a `u64`).
pub const MAX_VARS: usize = 8;

pub struct Layout {
    nvars: usize,
    exps: Vec<[u8; MAX_VARS]>,
    lookup: HashMap<u64, usize>,
    deg_end: Vec<usize>,
    mul: Vec<(u32, u32, u32)>,
    mul_end: Vec<usize>,
    deriv: Vec<Vec<(u32, u32, f64)>>,
    deriv_end: Vec<Vec<usize>>,
}

fn pack(e: &[u8; MAX_VARS]) -> u64 {
    e.iter().enumerate().fold(0u64, |acc, (i, &x)| acc | ((x as u64) << (8 * i)))
}

fn push_monomials(n: usize, d: usize, var: usize, cur: &mut [u8; MAX_VARS], out: &mut Vec<[u8; MAX_VARS]>) {
    if var + 1 == n {
        cur[var] = d as u8;
        out.push(*cur);
        cur[var] = 0;
        return;
    }
    for k in (0..=d).rev() {
        cur[var] = k as u8;
        push_monomials(n, d - k, var + 1, cur, out);
    }
    cur[var] = 0;
}

impl Layout {
    fn build(nvars: usize) -> Layout {
        assert!((1..=MAX_VARS).contains(&nvars), "jet variable count {nvars} unsupported");
        let mut exps = Vec::new();
        let mut deg_end = Vec::with_capacity(MAX_ORDER + 1);
        for d in 0..=MAX_ORDER {
            let mut cur = [0u8; MAX_VARS];
            push_monomials(nvars, d, 0, &mut cur, &mut exps);
            deg_end.push(exps.len());
        }
        let degree = |e: &[u8; MAX_VARS]| e.iter().map(|&x| x as usize).sum::<usize>();
        let lookup: HashMap<u64, usize> = exps.iter().enumerate().map(|(i, e)| (pack(e), i)).collect();

        let mut mul = Vec::new();
        for (i, a) in exps.iter().enumerate() {
            let da = degree(a);
            for (j, b) in exps[..deg_end[MAX_ORDER - da]].iter().enumerate() {
                let mut s = [0u8; MAX_VARS];
                for v in 0..nvars {
                    s[v] = a[v] + b[v];
                }
                let k = lookup[&pack(&s)];
                mul.push((i as u32, j as u32, k as u32));
            }
        }
        mul.sort_by_key(|t| t.2);
        let mul_end = deg_end
            .iter()
            .map(|&end| mul.partition_point(|t| (t.2 as usize) < end))
            .collect();

        let mut deriv = Vec::with_capacity(nvars);
        let mut deriv_end = Vec::with_capacity(nvars);
        for v in 0..nvars {
            let mut list = Vec::new();
            for (src, e) in exps.iter().enumerate() {
                if e[v] > 0 {
                    let mut d = *e;
                    d[v] -= 1;
                    list.push((src as u32, lookup[&pack(&d)] as u32, e[v] as f64));
                }
            }
            let ends = deg_end.iter().map(|&end| list.partition_point(|t| (t.0 as usize) < end)).collect();
            deriv.push(list);
            deriv_end.push(ends);
        }
        Layout { nvars, exps, lookup, deg_end, mul, mul_end, deriv, deriv_end }
    }

    pub fn get(nvars: usize) -> Arc<Layout> {
        static CACHE: OnceLock<Mutex<HashMap<usize, Arc<Layout>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let mut map = cache.lock().expect("jet layout cache poisoned");
        map.entry(nvars).or_insert_with(|| Arc::new(Layout::build(nvars))).clone()
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    /// Number of coefficients of a jet of the given order.
    pub fn len(&self, order: usize) -> usize {
        self.deg_end[order]
    }

    pub fn exponents(&self, idx: usize) -> &[u8] {
        &self.exps[idx][..self.nvars]
    }

    pub fn index_of(&self, e: &[u8]) -> Option<usize> {
        let mut full = [0u8; MAX_VARS];
        full[..e.len()].copy_from_slice(e);
        self.lookup.get(&pack(&full)).copied()
    }
}

#[derive(Clone)]
pub struct Jet {
    layout: Arc<Layout>,
    order: usize,
    c: Vec<f64>,
}

impl fmt::Debug for Jet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Jet").field("order", &self.order).field("c", &self.c).finish()
    }
}

impl Jet {
    pub fn constant(layout: &Arc<Layout>, order: usize, v: f64) -> Jet {
        assert!(order <= MAX_ORDER);
        let mut c = vec![0.0; layout.len(order)];
        c[0] = v;
        Jet { layout: layout.clone(), order, c }
    }

    /// The coordinate function `x_i` expanded about `x0`.
    pub fn variable(layout: &Arc<Layout>, order: usize, i: usize, x0: f64) -> Jet {
        let mut j = Jet::constant(layout, order, x0);
        if order >= 1 {
            j.c[1 + i] = 1.0;
        }
        j
    }

    /// All coordinate jets about `x`.
    pub fn variables(x: &[f64], order: usize) -> Vec<Jet> {
        let layout = Layout::get(x.len());
        (0..x.len()).map(|i| Jet::variable(&layout, order, i, x[i])).collect()
    }

    pub fn from_coeffs(layout: &Arc<Layout>, order: usize, c: Vec<f64>) -> Jet {
        assert_eq!(c.len(), layout.len(order));
        Jet { layout: layout.clone(), order, c }
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn nvars(&self) -> usize {
        self.layout.nvars
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.c
    }

    pub fn value(&self) -> f64 {
        self.c[0]
    }

    pub fn truncate(&self, order: usize) -> Jet {
        let order = order.min(self.order);
        Jet { layout: self.layout.clone(), order, c: self.c[..self.layout.len(order)].to_vec() }
    }

    /// Taylor coefficient of the monomial with exponent vector `e`.
    pub fn coeff(&self, e: &[u8]) -> f64 {
        match self.layout.index_of(e) {
            Some(i) if i < self.c.len() => self.c[i],
            _ => 0.0,
        }
    }

    /// Partial derivative value `∂^e` at the expansion point.
    pub fn partial(&self, e: &[u8]) -> f64 {
        let fact: f64 = e.iter().map(|&k| (1..=k as u64).product::<u64>() as f64).product();
        self.coeff(e) * fact
    }

    /// Partial derivative along the listed variables (with repetition).
    pub fn partial_idx(&self, idx: &[usize]) -> f64 {
        let mut e = vec![0u8; self.nvars()];
        for &i in idx {
            e[i] += 1;
        }
        self.partial(&e)
    }

    /// The jet of `∂_v` of this function (one order lower).
    pub fn deriv(&self, v: usize) -> Jet {
        assert!(self.order >= 1, "cannot differentiate an order-0 jet");
        let ord = self.order - 1;
        let mut c = vec![0.0; self.layout.len(ord)];
        let table = &self.layout.deriv[v];
        for &(src, dst, fac) in &table[..self.layout.deriv_end[v][self.order]] {
            c[dst as usize] += fac * self.c[src as usize];
        }
        Jet { layout: self.layout.clone(), order: ord, c }
    }

    pub fn scale(&self, s: f64) -> Jet {
        Jet { layout: self.layout.clone(), order: self.order, c: self.c.iter().map(|x| x * s).collect() }
    }

    pub fn max_abs(&self) -> f64 {
        self.c.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    fn zip(&self, o: &Jet, f: impl Fn(f64, f64) -> f64) -> Jet {
        debug_assert_eq!(self.layout.nvars, o.layout.nvars);
        let order = self.order.min(o.order);
        let n = self.layout.len(order);
        let c = (0..n).map(|i| f(self.c[i], o.c[i])).collect();
        Jet { layout: self.layout.clone(), order, c }
    }

    fn product(&self, o: &Jet) -> Jet {
        let order = self.order.min(o.order);
        let mut c = vec![0.0; self.layout.len(order)];
        for &(i, j, k) in &self.layout.mul[..self.layout.mul_end[order]] {
            c[k as usize] += self.c[i as usize] * o.c[j as usize];
        }
        Jet { layout: self.layout.clone(), order, c }
    }

    /// `F(self)` given `derivs[k] = F^{(k)}(value)`.
    fn compose(&self, derivs: &[f64]) -> Jet {
        let mut t = self.clone();
        t.c[0] = 0.0;
        let r = self.order;
        let mut fact = vec![1.0; r + 1];
        for k in 1..=r {
            fact[k] = fact[k - 1] * k as f64;
        }
        let mut res = Jet::constant(&self.layout, r, derivs[r] / fact[r]);
        for k in (0..r).rev() {
            res = res.product(&t);
            res.c[0] += derivs[k] / fact[k];
        }
        res
    }

    /// Accumulates `s * o` into self (orders must agree or o be longer).
    pub fn axpy(&mut self, s: f64, o: &Jet) {
        if o.order < self.order {
            self.order = o.order;
            self.c.truncate(self.layout.len(o.order));
        }
        for (a, b) in self.c.iter_mut().zip(o.c.iter()) {
            *a += s * b;
        }
    }

    /// Accumulates `s * a * b` into self.
    pub fn add_product(&mut self, s: f64, a: &Jet, b: &Jet) {
        let order = self.order.min(a.order).min(b.order);
        if order < self.order {
            self.order = order;
            self.c.truncate(self.layout.len(order));
        }
        for &(i, j, k) in &self.layout.mul[..self.layout.mul_end[order]] {
            self.c[k as usize] += s * a.c[i as usize] * b.c[j as usize];
        }
    }
}

macro_rules! jet_binop {
    ($tr:ident, $m:ident, $body:expr) => {
        impl $tr<Jet> for Jet {
            type Output = Jet;
            fn $m(self, o: Jet) -> Jet {
                $body(&self, &o)
            }
        }
        impl<'a> $tr<&'a Jet> for &'a Jet {
            type Output = Jet;
            fn $m(self, o: &'a Jet) -> Jet {
                $body(self, o)
            }
        }
        impl<'a> $tr<&'a Jet> for Jet {
            type Output = Jet;
            fn $m(self, o: &'a Jet) -> Jet {
                $body(&self, o)
            }
        }
    };
}

jet_binop!(Add, add, |a: &Jet, b: &Jet| a.zip(b, |x, y| x + y));
jet_binop!(Sub, sub, |a: &Jet, b: &Jet| a.zip(b, |x, y| x - y));
jet_binop!(Mul, mul, |a: &Jet, b: &Jet| a.product(b));

impl Add<f64> for Jet {
    type Output = Jet;
    fn add(mut self, s: f64) -> Jet {
        self.c[0] += s;
        self
    }
}

impl Sub<f64> for Jet {
    type Output = Jet;
    fn sub(mut self, s: f64) -> Jet {
        self.c[0] -= s;
        self
    }
}

impl Mul<f64> for Jet {
    type Output = Jet;
    fn mul(mut self, s: f64) -> Jet {
        self.c.iter_mut().for_each(|x| *x *= s);
        self
    }
}

impl Neg for Jet {
    type Output = Jet;
    fn neg(mut self) -> Jet {
        self.c.iter_mut().for_each(|x| *x = -*x);
        self
    }
}

/// Arithmetic shared by `f64` and [`Jet`], so closed-form families are written once.
pub trait Scalar:
    Clone
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
{
    fn cst(&self, v: f64) -> Self;
    fn val(&self) -> f64;
    fn sin(&self) -> Self;
    fn cos(&self) -> Self;
    fn exp(&self) -> Self;
    fn ln(&self) -> Self;
    fn powf(&self, s: f64) -> Self;
    fn sqrt(&self) -> Self {
        self.powf(0.5)
    }
    fn recip(&self) -> Self {
        self.powf(-1.0)
    }
    fn div(&self, o: &Self) -> Self {
        self.clone() * o.recip()
    }
    fn square(&self) -> Self {
        self.clone() * self.clone()
    }
}

impl Scalar for f64 {
    fn cst(&self, v: f64) -> f64 {
        v
    }
    fn val(&self) -> f64 {
        *self
    }
    fn sin(&self) -> f64 {
        f64::sin(*self)
    }
    fn cos(&self) -> f64 {
        f64::cos(*self)
    }
    fn exp(&self) -> f64 {
        f64::exp(*self)
    }
    fn ln(&self) -> f64 {
        f64::ln(*self)
    }
    fn powf(&self, s: f64) -> f64 {
        f64::powf(*self, s)
    }
    fn sqrt(&self) -> f64 {
        f64::sqrt(*self)
    }
    fn recip(&self) -> f64 {
        1.0 / *self
    }
}

impl Scalar for Jet {
    fn cst(&self, v: f64) -> Jet {
        Jet::constant(&self.layout, self.order, v)
    }
    fn val(&self) -> f64 {
        self.c[0]
    }
    fn sin(&self) -> Jet {
        let (s, c) = self.c[0].sin_cos();
        let cyc = [s, c, -s, -c];
        let d: Vec<f64> = (0..=self.order).map(|k| cyc[k % 4]).collect();
        self.compose(&d)
    }
    fn cos(&self) -> Jet {
        let (s, c) = self.c[0].sin_cos();
        let cyc = [c, -s, -c, s];
        let d: Vec<f64> = (0..=self.order).map(|k| cyc[k % 4]).collect();
        self.compose(&d)
    }
    fn exp(&self) -> Jet {
        let e = self.c[0].exp();
        self.compose(&vec![e; self.order + 1])
    }
    fn ln(&self) -> Jet {
        let a = self.c[0];
        let mut d = vec![a.ln()];
        let mut coef = 1.0;
        for k in 1..=self.order {
            d.push(coef * a.powi(-(k as i32)));
            coef *= -(k as f64);
        }
        self.compose(&d)
    }
    fn powf(&self, s: f64) -> Jet {
        let a = self.c[0];
        let mut d = Vec::with_capacity(self.order + 1);
        let mut coef = 1.0;
        for k in 0..=self.order {
            d.push(coef * a.powf(s - k as f64));
            coef *= s - k as f64;
        }
        self.compose(&d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn layout_counts() {
        let l = Layout::get(3);
        assert_eq!(l.len(0), 1);
        assert_eq!(l.len(1), 4);
        assert_eq!(l.len(4), 35);
    }

    #[test]
    fn product_of_variables() {
        let v = Jet::variables(&[1.0, 2.0], 3);
        let p = v[0].clone() * v[1].clone() * v[1].clone();
        assert_relative_eq!(p.value(), 4.0);
        assert_relative_eq!(p.partial_idx(&[0]), 4.0);
        assert_relative_eq!(p.partial_idx(&[1]), 4.0);
        assert_relative_eq!(p.partial_idx(&[1, 1]), 2.0);
        assert_relative_eq!(p.partial_idx(&[0, 1, 1]), 2.0);
    }

    #[test]
    fn elementary_functions_match_derivatives() {
        let x = Jet::variables(&[0.3], 5);
        let s = x[0].sin();
        for k in 0..=5usize {
            let exact = [0.3f64.sin(), 0.3f64.cos(), -0.3f64.sin(), -0.3f64.cos()][k % 4];
            assert_relative_eq!(s.partial_idx(&vec![0; k]), exact, epsilon = 1e-13);
        }
        let r = (x[0].clone() + 1.0).recip();
        // d^k/dx^k (1+x)^{-1} = (-1)^k k! (1+x)^{-k-1}
        let mut fact = 1.0;
        for k in 0..=5usize {
            if k > 0 {
                fact *= k as f64;
            }
            let exact = (-1f64).powi(k as i32) * fact * 1.3f64.powi(-(k as i32) - 1);
            assert_relative_eq!(r.partial_idx(&vec![0; k]), exact, max_relative = 1e-12);
        }
        let e = x[0].exp().ln();
        assert_relative_eq!(e.partial_idx(&[0]), 1.0, epsilon = 1e-13);
        assert_relative_eq!(e.partial_idx(&[0, 0]), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn derivative_lowers_order() {
        let v = Jet::variables(&[0.5, -1.0], 4);
        let f = v[0].clone() * v[0].clone() * v[1].clone();
        let d = f.deriv(0);
        assert_eq!(d.order(), 3);
        assert_relative_eq!(d.value(), 2.0 * 0.5 * -1.0);
        assert_relative_eq!(d.partial_idx(&[0]), -2.0);
        assert_relative_eq!(d.partial_idx(&[0, 1]), 2.0);
    }

    #[test]
    fn mixed_orders_truncate() {
        let a = Jet::variables(&[1.0, 1.0], 4);
        let b = Jet::variables(&[1.0, 1.0], 2);
        let s = a[0].clone() + b[1].clone();
        assert_eq!(s.order(), 2);
    }
}
