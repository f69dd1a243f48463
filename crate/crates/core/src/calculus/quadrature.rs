use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// Gauss–Legendre rule mapped to `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    /// `n`-point rule, exact for polynomials of degree ≤ 2n − 1.
    pub fn gauss_legendre(n: usize) -> Self {
        assert!(n >= 1, "quadrature needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        // Roots of P_n on [-1, 1] are symmetric; solve for the upper half.
        let m = n.div_ceil(2);
        for i in 0..m {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() <= 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            // map [-1, 1] → [0, 1]
            nodes[i] = 0.5 * (1.0 - x);
            nodes[n - 1 - i] = 0.5 * (1.0 + x);
            weights[i] = 0.5 * w;
            weights[n - 1 - i] = 0.5 * w;
        }
        QuadratureRule { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate<E>(&self, mut g: impl FnMut(f64) -> Result<f64, E>) -> Result<f64, E> {
        let mut acc = 0.0;
        for (t, w) in self.nodes.iter().zip(&self.weights) {
            acc += w * g(*t)?;
        }
        Ok(acc)
    }
}

/// P_n(x) and P_n'(x) by the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let nf = n as f64;
    let dp = nf * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// `Σ wᵢ g(tᵢ)` for a symmetric-matrix-valued integrand on `[0, 1]`.
pub fn integrate_matrix<E>(
    mut g: impl FnMut(f64) -> Result<DMatrix<f64>, E>,
    rule: &QuadratureRule,
) -> Result<DMatrix<f64>, E> {
    let mut acc: Option<DMatrix<f64>> = None;
    for (t, w) in rule.nodes.iter().zip(&rule.weights) {
        let m = g(*t)? * *w;
        acc = Some(match acc {
            Some(a) => a + m,
            None => m,
        });
    }
    Ok(acc.expect("rule has at least one node"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::convert::Infallible;

    #[test]
    fn weights_sum_to_one() {
        for n in 1..=16 {
            let rule = QuadratureRule::gauss_legendre(n);
            let s: f64 = rule.weights.iter().sum();
            assert!((s - 1.0).abs() <= 1e-14, "n={n}: {s}");
            assert!(rule.nodes.iter().all(|&t| t > 0.0 && t < 1.0));
            assert!(rule.weights.iter().all(|&w| w > 0.0));
            assert!(rule.nodes.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn exact_to_degree_2n_minus_1() {
        for n in 2..=8 {
            let rule = QuadratureRule::gauss_legendre(n);
            for k in 0..=(2 * n - 1) {
                let q = rule
                    .integrate::<Infallible>(|t| Ok(t.powi(k as i32)))
                    .unwrap();
                let exact = 1.0 / (k as f64 + 1.0);
                assert!((q - exact).abs() <= 1e-14, "n={n} k={k}: {q} vs {exact}");
            }
            // one degree higher is no longer exact
            let k = 2 * n;
            let q = rule.integrate::<Infallible>(|t| Ok(t.powi(k as i32))).unwrap();
            assert!((q - 1.0 / (k as f64 + 1.0)).abs() > 1e-12);
        }
    }

    #[test]
    fn matrix_linear_weight() {
        let rule = QuadratureRule::gauss_legendre(5);
        let m = integrate_matrix::<Infallible>(|t| Ok(DMatrix::identity(3, 3) * (1.0 - t)), &rule)
            .unwrap();
        assert!((m - DMatrix::identity(3, 3) * 0.5).amax() <= 1e-15);
    }

    #[test]
    fn matrix_cubic_two_nodes() {
        let rule = QuadratureRule::gauss_legendre(2);
        let m = integrate_matrix::<Infallible>(|t| Ok(DMatrix::identity(2, 2) * t.powi(3)), &rule)
            .unwrap();
        assert!((m - DMatrix::identity(2, 2) * 0.25).amax() <= 1e-15);
    }

    #[test]
    fn matrix_degree_six_four_nodes() {
        // entries: a(t) = 3t^6 - t^2 + 1, b(t) = t^5 - 2t^3, c(t) = (1-t)^6
        // antiderivative oracle on [0,1]: a → 3/7 - 1/3 + 1, b → 1/6 - 1/2, c → 1/7
        let rule = QuadratureRule::gauss_legendre(4);
        let m = integrate_matrix::<Infallible>(
            |t| {
                let a = 3.0 * t.powi(6) - t * t + 1.0;
                let b = t.powi(5) - 2.0 * t.powi(3);
                let c = (1.0 - t).powi(6);
                Ok(DMatrix::from_row_slice(2, 2, &[a, b, b, c]))
            },
            &rule,
        )
        .unwrap();
        let exact = DMatrix::from_row_slice(
            2,
            2,
            &[
                3.0 / 7.0 - 1.0 / 3.0 + 1.0,
                1.0 / 6.0 - 0.5,
                1.0 / 6.0 - 0.5,
                1.0 / 7.0,
            ],
        );
        assert!((m.clone() - exact).amax() <= 1e-14);
        assert_eq!(m[(0, 1)], m[(1, 0)]);
    }
}
