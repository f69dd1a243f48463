//! Zero-set components, tangent spaces and adapted orthonormal frames.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::expr::{DomainError, ExprFunction};
use crate::linalg;
use crate::tolerances::Tolerances;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("chart Jacobian is rank deficient at {param:?}: smallest singular value {min_sv:e} < {threshold:e}")]
    RankDeficient {
        param: Vec<f64>,
        min_sv: f64,
        threshold: f64,
    },
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("component {component}: f = {value:e} at {point:?} exceeds tol_zero")]
    NotAZero {
        component: usize,
        point: Vec<f64>,
        value: f64,
    },
    #[error("component {component}: |grad f| = {norm:e} at {point:?} exceeds tol_grad")]
    NotCritical {
        component: usize,
        point: Vec<f64>,
        norm: f64,
    },
    #[error("components {0} and {1} are not separated")]
    ZeroSeparation(usize, usize),
    #[error("{0}")]
    Invalid(String),
}

/// Embedded parametrization `t ↦ (c₁(t), …, c_d(t))` over an axis-aligned box.
#[derive(Debug, Clone, PartialEq)]
pub struct Chart {
    coords: Vec<ExprFunction>,
    domain: Vec<(f64, f64)>,
    regularity: u32,
}

impl Chart {
    pub fn new(
        coords: Vec<ExprFunction>,
        domain: Vec<(f64, f64)>,
        regularity: u32,
    ) -> Result<Self, GeometryError> {
        let d0 = domain.len();
        if d0 == 0 {
            return Err(GeometryError::Invalid("chart domain must be non-empty".into()));
        }
        if coords.len() < d0 {
            return Err(GeometryError::Invalid(format!(
                "chart of dimension {d0} needs at least {d0} coordinates, got {}",
                coords.len()
            )));
        }
        if let Some(c) = coords.iter().find(|c| c.dim() != d0) {
            return Err(GeometryError::Invalid(format!(
                "chart coordinate `{}` has {} parameters, expected {d0}",
                c.display_with_prefix('t'),
                c.dim()
            )));
        }
        if domain.iter().any(|(lo, hi)| !(lo < hi) || !lo.is_finite() || !hi.is_finite()) {
            return Err(GeometryError::Invalid("chart domain needs finite lo < hi".into()));
        }
        if regularity == 0 {
            return Err(GeometryError::Invalid("chart regularity must be ≥ 1".into()));
        }
        Ok(Chart {
            coords,
            domain,
            regularity,
        })
    }

    /// Parse coordinates written in the parameters `t1..t_{d0}`.
    pub fn parse(coords: &[&str], domain: Vec<(f64, f64)>) -> Result<Self, GeometryError> {
        let d0 = domain.len();
        let coords = coords
            .iter()
            .map(|s| {
                ExprFunction::parse_with_prefix(s, d0, 't')
                    .map_err(|e| GeometryError::Invalid(format!("chart `{s}`: {e}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Chart::new(coords, domain, 2)
    }

    pub fn param_dim(&self) -> usize {
        self.domain.len()
    }

    pub fn ambient_dim(&self) -> usize {
        self.coords.len()
    }

    pub fn domain(&self) -> &[(f64, f64)] {
        &self.domain
    }

    pub fn regularity(&self) -> u32 {
        self.regularity
    }

    pub fn coords(&self) -> &[ExprFunction] {
        &self.coords
    }

    pub fn eval(&self, t: &[f64]) -> Result<Vec<f64>, DomainError> {
        self.coords.iter().map(|c| c.eval(t)).collect()
    }

    /// `d × d₀` Jacobian, one jet per coordinate.
    pub fn jacobian(&self, t: &[f64]) -> Result<DMatrix<f64>, DomainError> {
        let d = self.ambient_dim();
        let d0 = self.param_dim();
        let mut j = DMatrix::zeros(d, d0);
        for (row, c) in self.coords.iter().enumerate() {
            let g = c.jet2(t)?.gradient;
            for col in 0..d0 {
                j[(row, col)] = g[col];
            }
        }
        Ok(j)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ZeroComponent {
    Point(Vec<f64>),
    Chart(Chart),
}

impl ZeroComponent {
    pub fn ambient_dim(&self) -> usize {
        match self {
            ZeroComponent::Point(p) => p.len(),
            ZeroComponent::Chart(c) => c.ambient_dim(),
        }
    }

    /// Dimension d₀ of the component.
    pub fn d0(&self) -> usize {
        match self {
            ZeroComponent::Point(_) => 0,
            ZeroComponent::Chart(c) => c.param_dim(),
        }
    }

    pub fn is_point(&self) -> bool {
        matches!(self, ZeroComponent::Point(_))
    }

    pub fn point_at(&self, t: &[f64]) -> Result<Vec<f64>, DomainError> {
        match self {
            ZeroComponent::Point(p) => Ok(p.clone()),
            ZeroComponent::Chart(c) => c.eval(t),
        }
    }
}

/// Tangent space at `chart(t)` as the Jacobian image.
pub fn tangent_basis(
    comp: &ZeroComponent,
    t: &[f64],
    tol: &Tolerances,
) -> Result<DMatrix<f64>, GeometryError> {
    let chart = match comp {
        ZeroComponent::Point(p) => return Ok(DMatrix::zeros(p.len(), 0)),
        ZeroComponent::Chart(c) => c,
    };
    let jac = chart.jacobian(t)?;
    let sv = linalg::singular_values(&jac);
    let largest = sv.first().copied().unwrap_or(0.0);
    let smallest = sv.last().copied().unwrap_or(0.0);
    let threshold = tol.eps_rank(largest);
    if sv.len() < chart.param_dim() || smallest < threshold {
        return Err(GeometryError::RankDeficient {
            param: t.to_vec(),
            min_sv: smallest,
            threshold,
        });
    }
    Ok(jac)
}

/// Orthonormal frame `P = (P₁, P₂)` at `x0`: `P₁` spans the normal space,
/// `P₂` the tangent space. Frame coordinates are `x = x0 + P₁x′ + P₂y′`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdaptedFrame {
    pub x0: DVector<f64>,
    pub p1: DMatrix<f64>,
    pub p2: DMatrix<f64>,
}

impl AdaptedFrame {
    pub fn dim(&self) -> usize {
        self.x0.len()
    }

    pub fn normal_dim(&self) -> usize {
        self.p1.ncols()
    }

    pub fn tangent_dim(&self) -> usize {
        self.p2.ncols()
    }

    pub fn to_ambient(&self, xp: &DVector<f64>, yp: &DVector<f64>) -> DVector<f64> {
        &self.x0 + &self.p1 * xp + &self.p2 * yp
    }

    pub fn to_frame(&self, x: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let dx = x - &self.x0;
        (self.p1.transpose() * &dx, self.p2.transpose() * &dx)
    }

    /// Full `d × d` matrix `[P₁ P₂]`.
    pub fn matrix(&self) -> DMatrix<f64> {
        let d = self.dim();
        let k = self.normal_dim();
        let mut p = DMatrix::zeros(d, d);
        p.columns_mut(0, k).copy_from(&self.p1);
        p.columns_mut(k, d - k).copy_from(&self.p2);
        p
    }

    /// `‖PᵀP − I‖_max`.
    pub fn orthogonality_error(&self) -> f64 {
        let p = self.matrix();
        linalg::max_abs(&(p.transpose() * &p - DMatrix::identity(self.dim(), self.dim())))
    }

    /// Rotate the normal block by an orthogonal `k × k` matrix.
    pub fn rotate_normal(&self, q: &DMatrix<f64>) -> AdaptedFrame {
        let mut p1 = &self.p1 * q;
        linalg::normalize_signs(&mut p1);
        AdaptedFrame {
            x0: self.x0.clone(),
            p1,
            p2: self.p2.clone(),
        }
    }
}

pub fn adapted_frame(x0: &[f64], tangent: &DMatrix<f64>) -> AdaptedFrame {
    assert_eq!(x0.len(), tangent.nrows());
    let p2 = linalg::orthonormal_columns(tangent);
    let p1 = linalg::orthogonal_complement(&p2);
    AdaptedFrame {
        x0: DVector::from_column_slice(x0),
        p1,
        p2,
    }
}

/// Uniform left-closed grid over the parameter box mapped through the chart,
/// `⌈n^{1/d₀}⌉`-ish points per axis. Point components yield one sample.
pub fn sample_component(
    comp: &ZeroComponent,
    n: usize,
) -> Result<Vec<(Vec<f64>, Vec<f64>)>, DomainError> {
    assert!(n >= 1);
    let chart = match comp {
        ZeroComponent::Point(p) => return Ok(vec![(Vec::new(), p.clone())]),
        ZeroComponent::Chart(c) => c,
    };
    let d0 = chart.param_dim();
    let per_axis = per_axis_count(n, d0);
    let total = per_axis.pow(d0 as u32);
    let mut out = Vec::with_capacity(total);
    for flat in 0..total {
        let mut rem = flat;
        let mut t = vec![0.0; d0];
        // last axis varies fastest
        for axis in (0..d0).rev() {
            let k = rem % per_axis;
            rem /= per_axis;
            let (lo, hi) = chart.domain[axis];
            t[axis] = lo + (hi - lo) * k as f64 / per_axis as f64;
        }
        let x = chart.eval(&t)?;
        out.push((t, x));
    }
    Ok(out)
}

fn per_axis_count(n: usize, d0: usize) -> usize {
    let m = (n as f64).powf(1.0 / d0 as f64).round() as usize;
    m.max(1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZeroSetDescription {
    pub ambient_dim: usize,
    pub components: Vec<ZeroComponent>,
}

impl ZeroSetDescription {
    pub fn new(ambient_dim: usize, components: Vec<ZeroComponent>) -> Result<Self, GeometryError> {
        if components.is_empty() {
            return Err(GeometryError::Invalid("zero set needs at least one component".into()));
        }
        for (i, c) in components.iter().enumerate() {
            if c.ambient_dim() != ambient_dim {
                return Err(GeometryError::Invalid(format!(
                    "component {i} lives in dimension {}, expected {ambient_dim}",
                    c.ambient_dim()
                )));
            }
            if c.d0() > ambient_dim {
                return Err(GeometryError::Invalid(format!(
                    "component {i} has d0 = {} > d = {ambient_dim}",
                    c.d0()
                )));
            }
        }
        Ok(ZeroSetDescription {
            ambient_dim,
            components,
        })
    }

    /// All components are isolated points.
    pub fn is_discrete(&self) -> bool {
        self.components.iter().all(ZeroComponent::is_point)
    }

    /// Sampled pairwise distances; `matrix[i][j]` is the minimum distance
    /// between sample images of components `i` and `j` (∞ on the diagonal).
    pub fn separation_matrix(&self, samples: usize) -> Result<Vec<Vec<f64>>, DomainError> {
        let pts = self
            .components
            .iter()
            .map(|c| sample_component(c, samples).map(|s| s.into_iter().map(|(_, x)| x).collect::<Vec<_>>()))
            .collect::<Result<Vec<_>, _>>()?;
        let n = pts.len();
        let mut m = vec![vec![f64::INFINITY; n]; n];
        for i in 0..n {
            for j in (i + 1)..n {
                let mut best = f64::INFINITY;
                for a in &pts[i] {
                    for b in &pts[j] {
                        best = best.min(dist(a, b));
                    }
                }
                m[i][j] = best;
                m[j][i] = best;
            }
        }
        Ok(m)
    }

    /// Check that `f ≈ 0` and `∇f ≈ 0` at sampled points, charts are
    /// immersions there and components are pairwise separated.
    pub fn validate(
        &self,
        f: &ExprFunction,
        samples: usize,
        tol: &Tolerances,
    ) -> Result<(), GeometryError> {
        for (ci, comp) in self.components.iter().enumerate() {
            for (t, x) in sample_component(comp, samples)? {
                tangent_basis(comp, &t, tol)?;
                let jet = f.jet2(&x)?;
                if jet.value.abs() > tol.tol_zero {
                    return Err(GeometryError::NotAZero {
                        component: ci,
                        point: x,
                        value: jet.value,
                    });
                }
                let norm = jet.gradient_vector().norm();
                if norm > tol.tol_grad {
                    return Err(GeometryError::NotCritical {
                        component: ci,
                        point: x,
                        norm,
                    });
                }
            }
        }
        let sep = self.separation_matrix(samples)?;
        for (i, row) in sep.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if i < j && v <= 0.0 {
                    return Err(GeometryError::ZeroSeparation(i, j));
                }
            }
        }
        Ok(())
    }
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn circle() -> ZeroComponent {
        ZeroComponent::Chart(Chart::parse(&["2*cos(t1)", "2*sin(t1)"], vec![(0.0, 2.0 * PI)]).unwrap())
    }

    #[test]
    fn circle_tangent_at_zero() {
        let t = tangent_basis(&circle(), &[0.0], &Tolerances::default()).unwrap();
        assert!(t[(0, 0)].abs() < 1e-15);
        assert!((t[(1, 0)] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn line_tangent() {
        let line = ZeroComponent::Chart(Chart::parse(&["t1", "0"], vec![(-1.0, 1.0)]).unwrap());
        for t in [-0.7, 0.0, 0.4] {
            let b = tangent_basis(&line, &[t], &Tolerances::default()).unwrap();
            assert_eq!(b.as_slice(), &[1.0, 0.0]);
        }
    }

    #[test]
    fn degenerate_chart_rejected() {
        let bad = ZeroComponent::Chart(Chart::parse(&["t1^2", "0"], vec![(-1.0, 1.0)]).unwrap());
        let err = tangent_basis(&bad, &[0.0], &Tolerances::default()).unwrap_err();
        assert!(matches!(err, GeometryError::RankDeficient { .. }));
    }

    #[test]
    fn frame_for_vertical_tangent() {
        let tangent = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        let f = adapted_frame(&[2.0, 0.0], &tangent);
        assert!((f.p1[(0, 0)].abs() - 1.0).abs() < 1e-15 && f.p1[(1, 0)].abs() < 1e-15);
        assert!((f.p2[(1, 0)].abs() - 1.0).abs() < 1e-15 && f.p2[(0, 0)].abs() < 1e-15);
        assert!(f.orthogonality_error() <= 1e-12);
        // sign convention: first nonzero entry positive
        assert_eq!(f.p1[(0, 0)], 1.0);
    }

    #[test]
    fn frame_for_point_component() {
        let f = adapted_frame(&[0.0, 0.0, 0.0], &DMatrix::zeros(3, 0));
        assert_eq!(f.p1, DMatrix::identity(3, 3));
        assert_eq!(f.tangent_dim(), 0);
    }

    #[test]
    fn circle_frame_and_tangent_consistency() {
        let comp = circle();
        let tol = Tolerances::default();
        for (t, x) in sample_component(&comp, 64).unwrap() {
            let tan = tangent_basis(&comp, &t, &tol).unwrap();
            let radial = DVector::from_column_slice(&x).normalize();
            let unit = tan.column(0).normalize();
            assert!(unit.dot(&radial).abs() <= 1e-10);
            let frame = adapted_frame(&x, &tan);
            assert!(frame.orthogonality_error() <= 1e-12);
        }
        let tan = tangent_basis(&comp, &[0.0], &tol).unwrap();
        let frame = adapted_frame(&[2.0, 0.0], &tan);
        assert!((frame.p1[(0, 0)].abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sampling_grids() {
        let s = sample_component(&circle(), 4).unwrap();
        let ts: Vec<f64> = s.iter().map(|(t, _)| t[0]).collect();
        assert_eq!(ts, vec![0.0, PI / 2.0, PI, 3.0 * PI / 2.0]);
        let p = ZeroComponent::Point(vec![1.0, -1.0]);
        let s = sample_component(&p, 17).unwrap();
        assert_eq!(s, vec![(vec![], vec![1.0, -1.0])]);
        let square = ZeroComponent::Chart(
            Chart::parse(&["t1", "t2", "0"], vec![(0.0, 1.0), (0.0, 1.0)]).unwrap(),
        );
        let s = sample_component(&square, 9).unwrap();
        assert_eq!(s.len(), 9);
        assert_eq!(s[4].1, vec![1.0 / 3.0, 1.0 / 3.0, 0.0]);
    }

    #[test]
    fn separation_is_symmetric_and_positive() {
        let zs = ZeroSetDescription::new(
            2,
            vec![
                ZeroComponent::Point(vec![-2.0, 0.0]),
                ZeroComponent::Chart(
                    Chart::parse(&["1 + cos(t1)", "t1"], vec![(-4.0, 4.0)]).unwrap(),
                ),
            ],
        )
        .unwrap();
        let m = zs.separation_matrix(256).unwrap();
        assert_eq!(m[0][1], m[1][0]);
        assert!(m[0][1] > 3.0 && m[0][1] < 3.4);
    }

    #[test]
    fn validate_detects_non_zero() {
        let f = ExprFunction::parse("(x1^2 + x2^2 - 4)^2", 2).unwrap();
        let tol = Tolerances::default();
        let good = ZeroSetDescription::new(2, vec![circle()]).unwrap();
        good.validate(&f, 32, &tol).unwrap();
        let bad = ZeroSetDescription::new(2, vec![ZeroComponent::Point(vec![1.0, 0.0])]).unwrap();
        assert!(matches!(
            bad.validate(&f, 32, &tol),
            Err(GeometryError::NotAZero { .. })
        ));
        let dup = ZeroSetDescription::new(
            2,
            vec![
                ZeroComponent::Point(vec![2.0, 0.0]),
                ZeroComponent::Point(vec![2.0, 0.0]),
            ],
        )
        .unwrap();
        assert!(matches!(
            dup.validate(&f, 4, &tol),
            Err(GeometryError::ZeroSeparation(0, 1))
        ));
    }
}
