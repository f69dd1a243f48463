use nalgebra::{DMatrix, DVector};

use crate::expr::{powi, BinaryOp, DomainError, DomainErrorKind, Expr, ExprFunction, UnaryOp};

/// Value, gradient and Hessian of a scalar function at a point.
///
/// The Hessian is stored densely in row-major order and kept exactly
/// symmetric: every update writes the upper triangle and mirrors it.
#[derive(Debug, Clone, PartialEq)]
pub struct Jet2 {
    pub value: f64,
    pub gradient: Vec<f64>,
    hessian: Vec<f64>,
}

impl Jet2 {
    fn constant(value: f64, n: usize) -> Self {
        Jet2 {
            value,
            gradient: vec![0.0; n],
            hessian: vec![0.0; n * n],
        }
    }

    fn variable(value: f64, index: usize, n: usize) -> Self {
        let mut j = Self::constant(value, n);
        j.gradient[index] = 1.0;
        j
    }

    pub fn dim(&self) -> usize {
        self.gradient.len()
    }

    pub fn hessian_entry(&self, i: usize, j: usize) -> f64 {
        self.hessian[i * self.dim() + j]
    }

    pub fn hessian(&self) -> DMatrix<f64> {
        let n = self.dim();
        DMatrix::from_row_slice(n, n, &self.hessian)
    }

    pub fn gradient_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.gradient)
    }

    /// Chain rule for `h(self)` given `h`, `h'`, `h''` at `self.value`.
    fn chain(&self, h0: f64, h1: f64, h2: f64) -> Jet2 {
        let n = self.dim();
        let mut out = Jet2::constant(h0, n);
        for i in 0..n {
            out.gradient[i] = h1 * self.gradient[i];
        }
        for i in 0..n {
            for j in i..n {
                let v = h1 * self.hessian[i * n + j] + h2 * self.gradient[i] * self.gradient[j];
                out.hessian[i * n + j] = v;
                out.hessian[j * n + i] = v;
            }
        }
        out
    }

    fn add(&self, other: &Jet2, sign: f64) -> Jet2 {
        let n = self.dim();
        let mut out = Jet2::constant(self.value + sign * other.value, n);
        for i in 0..n {
            out.gradient[i] = self.gradient[i] + sign * other.gradient[i];
        }
        for i in 0..n {
            for j in i..n {
                let v = self.hessian[i * n + j] + sign * other.hessian[i * n + j];
                out.hessian[i * n + j] = v;
                out.hessian[j * n + i] = v;
            }
        }
        out
    }

    fn mul(&self, other: &Jet2) -> Jet2 {
        let n = self.dim();
        let (a, b) = (self, other);
        let mut out = Jet2::constant(a.value * b.value, n);
        for i in 0..n {
            out.gradient[i] = a.value * b.gradient[i] + b.value * a.gradient[i];
        }
        for i in 0..n {
            for j in i..n {
                let v = a.value * b.hessian[i * n + j]
                    + b.value * a.hessian[i * n + j]
                    + a.gradient[i] * b.gradient[j]
                    + b.gradient[i] * a.gradient[j];
                out.hessian[i * n + j] = v;
                out.hessian[j * n + i] = v;
            }
        }
        out
    }
}

impl ExprFunction {
    /// Forward-mode value, gradient and Hessian at `point`.
    pub fn jet2(&self, point: &[f64]) -> Result<Jet2, DomainError> {
        assert_eq!(point.len(), self.dim(), "point dimension mismatch");
        jet_of(self.root(), point)
    }

    pub fn gradient(&self, point: &[f64]) -> Result<DVector<f64>, DomainError> {
        Ok(self.jet2(point)?.gradient_vector())
    }

    pub fn hessian(&self, point: &[f64]) -> Result<DMatrix<f64>, DomainError> {
        Ok(self.jet2(point)?.hessian())
    }
}

fn jet_of(e: &Expr, point: &[f64]) -> Result<Jet2, DomainError> {
    let n = point.len();
    Ok(match e {
        Expr::Const(c) => Jet2::constant(*c, n),
        Expr::Var(i) => Jet2::variable(point[*i], *i, n),
        Expr::Unary(op, a) => {
            let a = jet_of(a, point)?;
            let v = a.value;
            match op {
                UnaryOp::Neg => a.chain(-v, -1.0, 0.0),
                UnaryOp::Exp => {
                    let ev = v.exp();
                    a.chain(ev, ev, ev)
                }
                UnaryOp::Ln => {
                    if v <= 0.0 {
                        return Err(DomainError::new(DomainErrorKind::LogNonPositive, e));
                    }
                    a.chain(v.ln(), 1.0 / v, -1.0 / (v * v))
                }
                UnaryOp::Sin => {
                    let (s, c) = v.sin_cos();
                    a.chain(s, c, -s)
                }
                UnaryOp::Cos => {
                    let (s, c) = v.sin_cos();
                    a.chain(c, -s, -c)
                }
                UnaryOp::Sqrt => {
                    if v < 0.0 {
                        return Err(DomainError::new(DomainErrorKind::SqrtNegative, e));
                    }
                    if v == 0.0 {
                        return Err(DomainError::new(DomainErrorKind::SqrtAtZero, e));
                    }
                    let r = v.sqrt();
                    a.chain(r, 0.5 / r, -0.25 / (r * v))
                }
            }
        }
        Expr::Binary(op, a, b) => {
            let ja = jet_of(a, point)?;
            let jb = jet_of(b, point)?;
            match op {
                BinaryOp::Add => ja.add(&jb, 1.0),
                BinaryOp::Sub => ja.add(&jb, -1.0),
                BinaryOp::Mul => ja.mul(&jb),
                BinaryOp::Div => {
                    let v = jb.value;
                    if v == 0.0 {
                        return Err(DomainError::new(DomainErrorKind::DivisionByZero, e));
                    }
                    let recip = jb.chain(1.0 / v, -1.0 / (v * v), 2.0 / (v * v * v));
                    ja.mul(&recip)
                }
            }
        }
        Expr::Pow(a, k) => {
            let ja = jet_of(a, point)?;
            let v = ja.value;
            let k = *k;
            match k {
                0 => Jet2::constant(1.0, n),
                1 => ja,
                _ => {
                    let kf = k as f64;
                    ja.chain(
                        powi(v, k),
                        kf * powi(v, k - 1),
                        kf * (kf - 1.0) * powi(v, k - 2),
                    )
                }
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse(s: &str, d: usize) -> ExprFunction {
        ExprFunction::parse(s, d).unwrap()
    }

    #[test]
    fn quadratic_jet() {
        let j = parse("x1^2 + 3*x2^2", 2).jet2(&[1.0, 1.0]).unwrap();
        assert_eq!(j.value, 4.0);
        assert_eq!(j.gradient, vec![2.0, 6.0]);
        assert_eq!(j.hessian(), DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 6.0]));
    }

    #[test]
    fn circle_square_at_zero() {
        // d²(u²) = 2 ∇u ∇uᵀ at u = 0, ∇u = (4, 0)
        let j = parse("(x1^2 + x2^2 - 4)^2", 2).jet2(&[2.0, 0.0]).unwrap();
        assert_eq!(j.value, 0.0);
        assert_eq!(j.gradient, vec![0.0, 0.0]);
        assert_eq!(j.hessian(), DMatrix::from_row_slice(2, 2, &[32.0, 0.0, 0.0, 0.0]));
    }

    #[test]
    fn sine_valley_at_origin() {
        let j = parse("(x1 - sin(x2)/2)^2", 2).jet2(&[0.0, 0.0]).unwrap();
        assert_eq!(j.value, 0.0);
        assert_eq!(j.gradient, vec![0.0, 0.0]);
        // u = x1 - sin(x2)/2, ∇u = (1, -1/2) → H = 2∇u∇uᵀ
        let h = j.hessian();
        assert!((h[(0, 0)] - 2.0).abs() < 1e-15);
        assert!((h[(0, 1)] + 1.0).abs() < 1e-15);
        assert!((h[(1, 1)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn sqrt_not_differentiable_at_zero() {
        let err = parse("sqrt(x1)", 1).jet2(&[0.0]).unwrap_err();
        assert_eq!(err.kind, DomainErrorKind::SqrtAtZero);
    }

    #[test]
    fn transcendental_derivatives() {
        let x = 0.7_f64;
        let check = |src: &str, d0: f64, d1: f64, d2: f64| {
            let j = parse(src, 1).jet2(&[x]).unwrap();
            assert!((j.value - d0).abs() < 1e-14, "{src}");
            assert!((j.gradient[0] - d1).abs() < 1e-14, "{src}");
            assert!((j.hessian_entry(0, 0) - d2).abs() < 1e-13, "{src}");
        };
        check("exp(x1)", x.exp(), x.exp(), x.exp());
        check("ln(x1)", x.ln(), 1.0 / x, -1.0 / (x * x));
        check("sin(x1)", x.sin(), x.cos(), -x.sin());
        check("cos(x1)", x.cos(), -x.sin(), -x.cos());
        check("sqrt(x1)", x.sqrt(), 0.5 / x.sqrt(), -0.25 * x.powf(-1.5));
        check("1/x1", 1.0 / x, -1.0 / (x * x), 2.0 / (x * x * x));
        check("x1^5", x.powi(5), 5.0 * x.powi(4), 20.0 * x.powi(3));
    }

    /// A random polynomial of total degree ≤ 6 in `dim` variables, kept as
    /// a monomial list so its derivatives can be written down directly.
    #[derive(Debug, Clone)]
    struct Poly {
        dim: usize,
        terms: Vec<(f64, Vec<u32>)>,
    }

    impl Poly {
        fn source(&self) -> String {
            let mut parts = Vec::new();
            for (c, exps) in &self.terms {
                let mut s = format!("{c:?}");
                for (i, e) in exps.iter().enumerate() {
                    if *e > 0 {
                        s.push_str(&format!("*x{}^{}", i + 1, e));
                    }
                }
                parts.push(s);
            }
            parts.join(" + ")
        }

        /// Symbolic differentiation oracle: monomial-wise derivatives.
        fn derivative(&self, x: &[f64], order: &[usize]) -> f64 {
            let mut total = 0.0;
            for (c, exps) in &self.terms {
                let mut e = exps.clone();
                let mut coef = *c;
                for &v in order {
                    if e[v] == 0 {
                        coef = 0.0;
                        break;
                    }
                    coef *= e[v] as f64;
                    e[v] -= 1;
                }
                if coef == 0.0 {
                    continue;
                }
                let mut term = coef;
                for (i, p) in e.iter().enumerate() {
                    term *= x[i].powi(*p as i32);
                }
                total += term;
            }
            total
        }

        fn value(&self, x: &[f64]) -> f64 {
            self.derivative(x, &[])
        }
    }

    fn poly_strategy() -> impl Strategy<Value = (Poly, Vec<f64>)> {
        (1usize..=4).prop_flat_map(|dim| {
            let term = (
                -3.0f64..3.0,
                proptest::collection::vec(0u32..=3, dim).prop_filter("degree ≤ 6", |e| {
                    e.iter().sum::<u32>() <= 6
                }),
            );
            (
                proptest::collection::vec(term, 1..6),
                proptest::collection::vec(-1.5f64..1.5, dim),
            )
                .prop_map(move |(terms, x)| (Poly { dim, terms }, x))
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn jets_match_symbolic_and_finite_differences((poly, x) in poly_strategy()) {
            let f = ExprFunction::parse(&poly.source(), poly.dim).unwrap();
            let jet = f.jet2(&x).unwrap();
            let n = poly.dim;
            let scale = 1.0 + poly.terms.iter().map(|(c, _)| c.abs()).sum::<f64>() * 20.0;
            prop_assert!((jet.value - poly.value(&x)).abs() <= 1e-12 * scale);
            let h = 1e-5;
            for i in 0..n {
                let g = poly.derivative(&x, &[i]);
                prop_assert!((jet.gradient[i] - g).abs() <= 1e-12 * scale);
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += h;
                xm[i] -= h;
                let fd = (f.eval(&xp).unwrap() - f.eval(&xm).unwrap()) / (2.0 * h);
                prop_assert!((fd - jet.gradient[i]).abs() <= 1e-6 * (1.0 + jet.gradient[i].abs()));
                for j in 0..n {
                    let hij = poly.derivative(&x, &[i, j]);
                    prop_assert!((jet.hessian_entry(i, j) - hij).abs() <= 1e-12 * scale);
                    prop_assert_eq!(jet.hessian_entry(i, j), jet.hessian_entry(j, i));
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[j] += h;
                    xm[j] -= h;
                    let gp = f.jet2(&xp).unwrap().gradient[i];
                    let gm = f.jet2(&xm).unwrap().gradient[i];
                    let fd = (gp - gm) / (2.0 * h);
                    prop_assert!((fd - hij).abs() <= 1e-6 * (1.0 + hij.abs()));
                }
            }
        }
    }
}
