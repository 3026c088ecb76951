//! Small truncated-Taylor algebras used for exact derivatives of the
//! interaction: multilinear duals for pair-weight derivatives and
//! second-order jets for field derivatives.

use std::ops::{Add, Mul, Neg, Sub};

use num_complex::Complex64;

pub(crate) trait Ring:
    Clone + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Neg<Output = Self>
{
    fn cst(c: Complex64) -> Self;
    fn exp(&self) -> Self;
    fn scale(&self, c: Complex64) -> Self;
}

impl Ring for Complex64 {
    fn cst(c: Complex64) -> Self {
        c
    }
    fn exp(&self) -> Self {
        Complex64::exp(*self)
    }
    fn scale(&self, c: Complex64) -> Self {
        self * c
    }
}

/// Elements of `C[e_1..e_k] / (e_i^2)`, stored by subset bitmask. A vector of
/// length one is a constant of any order.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Nil(pub Vec<Complex64>);

impl Nil {
    /// `value + e_gen` in the algebra with `k` generators.
    pub fn variable(value: f64, generator: usize, k: usize) -> Nil {
        let mut c = vec![Complex64::new(0.0, 0.0); 1 << k];
        c[0] = Complex64::new(value, 0.0);
        c[1 << generator] = Complex64::new(1.0, 0.0);
        Nil(c)
    }

    pub fn coeff(&self, mask: usize) -> Complex64 {
        self.0.get(mask).copied().unwrap_or(if mask == 0 {
            self.0[0]
        } else {
            Complex64::new(0.0, 0.0)
        })
    }

    fn len(&self) -> usize {
        self.0.len()
    }
}

impl Add for Nil {
    type Output = Nil;
    fn add(self, o: Nil) -> Nil {
        let (mut big, small) = if self.len() >= o.len() { (self, o) } else { (o, self) };
        for (i, v) in small.0.into_iter().enumerate() {
            big.0[i] += v;
        }
        big
    }
}

impl Neg for Nil {
    type Output = Nil;
    fn neg(self) -> Nil {
        Nil(self.0.into_iter().map(|v| -v).collect())
    }
}

impl Sub for Nil {
    type Output = Nil;
    fn sub(self, o: Nil) -> Nil {
        self + (-o)
    }
}

impl Mul for Nil {
    type Output = Nil;
    fn mul(self, o: Nil) -> Nil {
        if self.len() == 1 {
            return o.scale(self.0[0]);
        }
        if o.len() == 1 {
            return self.scale(o.0[0]);
        }
        let n = self.len().max(o.len());
        let mut out = vec![Complex64::new(0.0, 0.0); n];
        for (s, slot) in out.iter_mut().enumerate() {
            // subset convolution over s = t ∪ (s \ t)
            let mut t = s;
            loop {
                *slot += self.coeff(t) * o.coeff(s & !t);
                if t == 0 {
                    break;
                }
                t = (t - 1) & s;
            }
        }
        Nil(out)
    }
}

impl Ring for Nil {
    fn cst(c: Complex64) -> Self {
        Nil(vec![c])
    }

    fn exp(&self) -> Self {
        let e0 = self.0[0].exp();
        if self.len() == 1 {
            return Nil(vec![e0]);
        }
        let mut n = self.clone();
        n.0[0] = Complex64::new(0.0, 0.0);
        let order = self.len().trailing_zeros() as usize;
        let mut term = Nil(vec![Complex64::new(1.0, 0.0)]);
        let mut acc = Nil(vec![Complex64::new(1.0, 0.0)]);
        for j in 1..=order {
            term = (term * n.clone()).scale(Complex64::new(1.0 / j as f64, 0.0));
            acc = acc + term.clone();
        }
        acc.scale(e0)
    }

    fn scale(&self, c: Complex64) -> Self {
        Nil(self.0.iter().map(|v| v * c).collect())
    }
}

/// Second-order jet in `d` variables with coefficients in `A`. Empty
/// gradient and Hessian denote a constant.
#[derive(Debug, Clone)]
pub(crate) struct Jet<A> {
    pub val: A,
    pub grad: Vec<A>,
    pub hess: Vec<A>,
}

impl<A: Ring> Jet<A> {
    pub fn variable(val: A, index: usize, d: usize) -> Self {
        let zero = A::cst(Complex64::new(0.0, 0.0));
        let mut grad = vec![zero.clone(); d];
        grad[index] = A::cst(Complex64::new(1.0, 0.0));
        Jet {
            val,
            grad,
            hess: vec![zero; d * d],
        }
    }

    fn constant(val: A) -> Self {
        Jet {
            val,
            grad: Vec::new(),
            hess: Vec::new(),
        }
    }

    fn dim(&self) -> usize {
        self.grad.len()
    }

    pub fn d1(&self, i: usize) -> A {
        self.grad
            .get(i)
            .cloned()
            .unwrap_or_else(|| A::cst(Complex64::new(0.0, 0.0)))
    }

    pub fn d2(&self, i: usize, j: usize) -> A {
        let d = self.dim();
        if d == 0 {
            return A::cst(Complex64::new(0.0, 0.0));
        }
        self.hess[i * d + j].clone()
    }
}

impl<A: Ring> Add for Jet<A> {
    type Output = Jet<A>;
    fn add(self, o: Jet<A>) -> Jet<A> {
        if o.dim() == 0 {
            return Jet { val: self.val + o.val, ..self };
        }
        if self.dim() == 0 {
            return Jet { val: self.val + o.val, ..o };
        }
        Jet {
            val: self.val + o.val,
            grad: self.grad.into_iter().zip(o.grad).map(|(a, b)| a + b).collect(),
            hess: self.hess.into_iter().zip(o.hess).map(|(a, b)| a + b).collect(),
        }
    }
}

impl<A: Ring> Neg for Jet<A> {
    type Output = Jet<A>;
    fn neg(self) -> Jet<A> {
        Jet {
            val: -self.val,
            grad: self.grad.into_iter().map(|a| -a).collect(),
            hess: self.hess.into_iter().map(|a| -a).collect(),
        }
    }
}

impl<A: Ring> Sub for Jet<A> {
    type Output = Jet<A>;
    fn sub(self, o: Jet<A>) -> Jet<A> {
        self + (-o)
    }
}

impl<A: Ring> Mul for Jet<A> {
    type Output = Jet<A>;
    fn mul(self, o: Jet<A>) -> Jet<A> {
        let d = self.dim().max(o.dim());
        if d == 0 {
            return Jet::constant(self.val * o.val);
        }
        let mut grad = Vec::with_capacity(d);
        for i in 0..d {
            grad.push(self.d1(i) * o.val.clone() + self.val.clone() * o.d1(i));
        }
        let mut hess = Vec::with_capacity(d * d);
        for i in 0..d {
            for j in 0..d {
                hess.push(
                    self.d2(i, j) * o.val.clone()
                        + self.d1(i) * o.d1(j)
                        + self.d1(j) * o.d1(i)
                        + self.val.clone() * o.d2(i, j),
                );
            }
        }
        Jet {
            val: self.val * o.val,
            grad,
            hess,
        }
    }
}

impl<A: Ring> Ring for Jet<A> {
    fn cst(c: Complex64) -> Self {
        Jet::constant(A::cst(c))
    }

    fn exp(&self) -> Self {
        let e = self.val.exp();
        let d = self.dim();
        if d == 0 {
            return Jet::constant(e);
        }
        let grad: Vec<A> = self.grad.iter().map(|g| e.clone() * g.clone()).collect();
        let mut hess = Vec::with_capacity(d * d);
        for i in 0..d {
            for j in 0..d {
                hess.push(e.clone() * (self.hess[i * d + j].clone() + self.grad[i].clone() * self.grad[j].clone()));
            }
        }
        Jet { val: e, grad, hess }
    }

    fn scale(&self, c: Complex64) -> Self {
        Jet {
            val: self.val.scale(c),
            grad: self.grad.iter().map(|a| a.scale(c)).collect(),
            hess: self.hess.iter().map(|a| a.scale(c)).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(x: f64) -> Complex64 {
        Complex64::new(x, 0.0)
    }

    #[test]
    fn nil_exp_gives_mixed_derivatives() {
        // f(s1, s2) = exp(2 s1 s2 + s1) at (0.5, 0.3)
        let s1 = Nil::variable(0.5, 0, 2);
        let s2 = Nil::variable(0.3, 1, 2);
        let f = (s1.clone() * s2.clone()).scale(c(2.0)) + s1;
        let e = f.exp();
        let v: f64 = (2.0 * 0.5 * 0.3 + 0.5f64).exp();
        assert!((e.coeff(0).re - v).abs() < 1e-14);
        // d/ds1 = (2 s2 + 1) f, d/ds2 = 2 s1 f, d2 = (2 + (2 s2 + 1) 2 s1) f
        assert!((e.coeff(1).re - 1.6 * v).abs() < 1e-13);
        assert!((e.coeff(2).re - 1.0 * v).abs() < 1e-13);
        assert!((e.coeff(3).re - (2.0 + 1.6 * 1.0) * v).abs() < 1e-13);
    }

    #[test]
    fn jet_exp_hessian() {
        // g(x, y) = exp(x^2 y) at (0.7, -0.4)
        let x = Jet::variable(c(0.7), 0, 2);
        let y = Jet::variable(c(-0.4), 1, 2);
        let g = (x.clone() * x * y).exp();
        let (a, b) = (0.7f64, -0.4f64);
        let v = (a * a * b).exp();
        assert!((g.d1(0).re - 2.0 * a * b * v).abs() < 1e-14);
        let dxy = (2.0 * a + 2.0 * a * b * a * a) * v;
        assert!((g.d2(0, 1).re - dxy).abs() < 1e-13);
        assert!((g.d2(1, 0).re - dxy).abs() < 1e-13);
    }
}
