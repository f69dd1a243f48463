//! Built-in atlases and the chart-wise construction on embedded manifolds.
//!
//! A function given in ambient coordinates is pulled back to every chart,
//! decomposed there by the Euclidean pipeline, and the chart families are
//! glued with a √-normalized partition subordinate to the atlas.

use nalgebra::DMatrix;
use serde::Serialize;
use thiserror::Error;

use crate::expr::{DomainError, ExprFunction};
use crate::geometry::{self, ZeroSetDescription};
use crate::gluing::{self, transition, GlobalDecomposition, GluingError};
use crate::grid::GridSpec;
use crate::linalg;
use crate::nhc::{self, GlobalNhcReport};
use crate::tolerances::Tolerances;
use crate::verify::SumOfSquares;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ManifoldError {
    #[error("unknown atlas `{0}` (known: sphere2, circle1)")]
    UnknownAtlas(String),
    #[error("{0}")]
    Invalid(String),
    #[error("chart {chart}: {source}")]
    Gluing {
        chart: String,
        #[source]
        source: GluingError,
    },
    #[error(transparent)]
    Domain(#[from] DomainError),
}

/// One chart: pullback `u ↦ x`, its inverse and the ambient weight whose
/// support the chart must cover.
#[derive(Debug, Clone)]
pub struct AtlasChart {
    pub name: &'static str,
    pub pullback: Vec<ExprFunction>,
    inverse: fn(&[f64]) -> Vec<f64>,
    weight: fn(&[f64]) -> f64,
    /// Chart-coordinate box containing the pullback of the weight support.
    pub support_box: Vec<(f64, f64)>,
}

impl AtlasChart {
    pub fn to_ambient(&self, u: &[f64]) -> Result<Vec<f64>, DomainError> {
        self.pullback.iter().map(|c| c.eval(u)).collect()
    }

    pub fn to_chart(&self, x: &[f64]) -> Vec<f64> {
        (self.inverse)(x)
    }

    /// Unnormalized partition weight at the ambient point `x`.
    pub fn weight(&self, x: &[f64]) -> f64 {
        (self.weight)(x)
    }

    /// Jacobian of the pullback at `u` (ambient × chart).
    pub fn jacobian(&self, u: &[f64]) -> Result<DMatrix<f64>, DomainError> {
        let m = u.len();
        let mut j = DMatrix::zeros(self.pullback.len(), m);
        for (row, c) in self.pullback.iter().enumerate() {
            let g = c.gradient(u)?;
            for col in 0..m {
                j[(row, col)] = g[col];
            }
        }
        Ok(j)
    }
}

#[derive(Debug, Clone)]
pub struct Atlas {
    pub name: &'static str,
    pub ambient_dim: usize,
    pub manifold_dim: usize,
    pub charts: Vec<AtlasChart>,
}

fn parse_coords(src: &[&str], dim: usize) -> Vec<ExprFunction> {
    src.iter()
        .map(|s| ExprFunction::parse(s, dim).expect("built-in chart parses"))
        .collect()
}

fn north_inverse(x: &[f64]) -> Vec<f64> {
    vec![x[0] / (1.0 - x[2]), x[1] / (1.0 - x[2])]
}

fn south_inverse(x: &[f64]) -> Vec<f64> {
    vec![x[0] / (1.0 + x[2]), x[1] / (1.0 + x[2])]
}

// weights switch off between |x_k| = 0.2 and 0.6 on the far side
fn north_weight(x: &[f64]) -> f64 {
    transition((x[2] - 0.2) / 0.4)
}

fn south_weight(x: &[f64]) -> f64 {
    transition((-x[2] - 0.2) / 0.4)
}

fn east_inverse(x: &[f64]) -> Vec<f64> {
    vec![x[1].atan2(x[0])]
}

fn west_inverse(x: &[f64]) -> Vec<f64> {
    vec![(-x[1]).atan2(-x[0])]
}

fn east_weight(x: &[f64]) -> f64 {
    transition((-x[0] - 0.2) / 0.4)
}

fn west_weight(x: &[f64]) -> f64 {
    transition((x[0] - 0.2) / 0.4)
}

impl Atlas {
    pub fn by_name(name: &str) -> Result<Atlas, ManifoldError> {
        match name {
            "sphere2" => Ok(Atlas::sphere2()),
            "circle1" => Ok(Atlas::circle1()),
            other => Err(ManifoldError::UnknownAtlas(other.to_string())),
        }
    }

    /// Unit sphere in ℝ³ with stereographic charts from both poles.
    pub fn sphere2() -> Atlas {
        let north = parse_coords(
            &[
                "2*x1/(1 + x1^2 + x2^2)",
                "2*x2/(1 + x1^2 + x2^2)",
                "(x1^2 + x2^2 - 1)/(1 + x1^2 + x2^2)",
            ],
            2,
        );
        let south = parse_coords(
            &[
                "2*x1/(1 + x1^2 + x2^2)",
                "2*x2/(1 + x1^2 + x2^2)",
                "(1 - x1^2 - x2^2)/(1 + x1^2 + x2^2)",
            ],
            2,
        );
        Atlas {
            name: "sphere2",
            ambient_dim: 3,
            manifold_dim: 2,
            charts: vec![
                AtlasChart {
                    name: "north",
                    pullback: north,
                    inverse: north_inverse,
                    weight: north_weight,
                    support_box: vec![(-2.0, 2.0); 2],
                },
                AtlasChart {
                    name: "south",
                    pullback: south,
                    inverse: south_inverse,
                    weight: south_weight,
                    support_box: vec![(-2.0, 2.0); 2],
                },
            ],
        }
    }

    /// Unit circle in ℝ² with two angle charts centered at `(1, 0)` and `(−1, 0)`.
    pub fn circle1() -> Atlas {
        let half = (-0.6_f64).acos();
        Atlas {
            name: "circle1",
            ambient_dim: 2,
            manifold_dim: 1,
            charts: vec![
                AtlasChart {
                    name: "east",
                    pullback: parse_coords(&["cos(x1)", "sin(x1)"], 1),
                    inverse: east_inverse,
                    weight: east_weight,
                    support_box: vec![(-half, half)],
                },
                AtlasChart {
                    name: "west",
                    pullback: parse_coords(&["-cos(x1)", "-sin(x1)"], 1),
                    inverse: west_inverse,
                    weight: west_weight,
                    support_box: vec![(-half, half)],
                },
            ],
        }
    }

    pub fn chart_index(&self, name: &str) -> Option<usize> {
        self.charts.iter().position(|c| c.name == name)
    }

    /// `ψ_c = w_c/√Σw²` at the ambient point `x`.
    pub fn partition(&self, x: &[f64]) -> Vec<f64> {
        let mut w: Vec<f64> = self.charts.iter().map(|c| c.weight(x)).collect();
        let n = w.iter().map(|v| v * v).sum::<f64>().sqrt();
        w.iter_mut().for_each(|v| *v /= n);
        w
    }

    /// Deterministic, roughly uniform points on the manifold.
    pub fn samples(&self, n: usize) -> Vec<Vec<f64>> {
        match self.manifold_dim {
            1 => (0..n)
                .map(|k| {
                    let a = 2.0 * std::f64::consts::PI * (k as f64 + 0.5) / n as f64;
                    vec![a.cos(), a.sin()]
                })
                .collect(),
            _ => {
                // Fibonacci lattice
                let golden = std::f64::consts::PI * (3.0 - 5.0_f64.sqrt());
                (0..n)
                    .map(|k| {
                        let z = 1.0 - 2.0 * (k as f64 + 0.5) / n as f64;
                        let r = (1.0 - z * z).sqrt();
                        let a = golden * k as f64;
                        vec![r * a.cos(), r * a.sin(), z]
                    })
                    .collect()
            }
        }
    }

    /// `f ∘ pullback` for chart `c`, in chart variables `x1..x_m`.
    pub fn pull_back(&self, c: usize, f: &ExprFunction) -> ExprFunction {
        f.compose(&self.charts[c].pullback, self.manifold_dim)
    }
}

/// Ambient representative `J G⁻¹ H G⁻¹ Jᵀ` (`G = JᵀJ`) of a chart Hessian.
pub fn ambient_hessian(j: &DMatrix<f64>, h: &DMatrix<f64>) -> DMatrix<f64> {
    let g = j.transpose() * j;
    let ginv = g.try_inverse().expect("chart Jacobian has full column rank");
    linalg::symmetrize(&(j * &ginv * h * &ginv * j.transpose()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HessianAgreement {
    pub point: Vec<f64>,
    pub charts: (String, String),
    pub max_abs_diff: f64,
    pub tolerance: f64,
}

impl HessianAgreement {
    pub fn pass(&self) -> bool {
        self.max_abs_diff <= self.tolerance
    }
}

/// At every declared zero lying in two chart weights' supports, compare
/// the ambient forms of both chart Hessians.
pub fn overlap_hessian_agreement(
    atlas: &Atlas,
    f: &ExprFunction,
    zero_sets: &[ZeroSetDescription],
    samples: usize,
    rel_tol: f64,
) -> Result<Vec<HessianAgreement>, ManifoldError> {
    let pulled: Vec<ExprFunction> = (0..atlas.charts.len()).map(|c| atlas.pull_back(c, f)).collect();
    let mut out = Vec::new();
    for (c, zs) in zero_sets.iter().enumerate() {
        let chart = &atlas.charts[c];
        for comp in &zs.components {
            for (_, u) in geometry::sample_component(comp, samples)? {
                let x = chart.to_ambient(&u)?;
                if chart.weight(&x) == 0.0 {
                    continue;
                }
                let a = ambient_hessian(&chart.jacobian(&u)?, &pulled[c].hessian(&u)?);
                for (o, other) in atlas.charts.iter().enumerate() {
                    if o == c || other.weight(&x) == 0.0 {
                        continue;
                    }
                    let v = other.to_chart(&x);
                    let b = ambient_hessian(&other.jacobian(&v)?, &pulled[o].hessian(&v)?);
                    let scale = linalg::max_abs(&a).max(linalg::max_abs(&b));
                    out.push(HessianAgreement {
                        point: x.clone(),
                        charts: (chart.name.to_string(), other.name.to_string()),
                        max_abs_diff: linalg::max_abs(&(&a - &b)),
                        tolerance: rel_tol * (1.0 + scale),
                    });
                }
            }
        }
    }
    Ok(out)
}

/// Per-chart decomposition of the pulled-back function.
#[derive(Debug, Clone)]
pub struct ChartDecomposition {
    pub chart: usize,
    pub pulled_back: ExprFunction,
    pub zero_set: ZeroSetDescription,
    pub global: GlobalDecomposition,
}

#[derive(Debug, Clone)]
pub struct ManifoldDecomposition {
    atlas: Atlas,
    f: ExprFunction,
    charts: Vec<ChartDecomposition>,
    offsets: Vec<usize>,
    piece_count: usize,
}

/// Per-chart NHC over the pulled-back function.
pub fn check_manifold_nhc(
    atlas: &Atlas,
    f: &ExprFunction,
    zero_sets: &[ZeroSetDescription],
    samples: usize,
    tol: &Tolerances,
) -> Vec<GlobalNhcReport> {
    zero_sets
        .iter()
        .enumerate()
        .map(|(c, zs)| nhc::check_global_nhc(&atlas.pull_back(c, f), zs, samples, tol))
        .collect()
}

fn covers_box(grid: &GridSpec, bx: &[(f64, f64)]) -> bool {
    grid.dim() == bx.len()
        && grid
            .axes
            .iter()
            .zip(bx)
            .all(|(a, (lo, hi))| a.lo <= *lo && a.hi >= *hi)
}

impl ManifoldDecomposition {
    /// Decompose `f` (ambient coordinates) chart by chart over `chart_grid`,
    /// with `zero_sets[c]` the zero set in the coordinates of chart `c`.
    pub fn build(
        atlas: Atlas,
        f: &ExprFunction,
        zero_sets: Vec<ZeroSetDescription>,
        chart_grid: &GridSpec,
        tol: &Tolerances,
    ) -> Result<Self, ManifoldError> {
        if f.dim() != atlas.ambient_dim {
            return Err(ManifoldError::Invalid(format!(
                "function has {} variables, atlas {} lives in dimension {}",
                f.dim(),
                atlas.name,
                atlas.ambient_dim
            )));
        }
        if zero_sets.len() != atlas.charts.len() {
            return Err(ManifoldError::Invalid(format!(
                "atlas {} has {} charts but {} chart zero sets were given",
                atlas.name,
                atlas.charts.len(),
                zero_sets.len()
            )));
        }
        let mut charts = Vec::new();
        for (c, zs) in zero_sets.into_iter().enumerate() {
            let chart = &atlas.charts[c];
            if !covers_box(chart_grid, &chart.support_box) {
                return Err(ManifoldError::Invalid(format!(
                    "chart grid {chart_grid} must contain the {} chart box {:?}",
                    chart.name, chart.support_box
                )));
            }
            let pulled_back = atlas.pull_back(c, f);
            let global = gluing::decompose(&pulled_back, &zs, chart_grid, tol).map_err(|source| {
                ManifoldError::Gluing {
                    chart: chart.name.to_string(),
                    source,
                }
            })?;
            charts.push(ChartDecomposition {
                chart: c,
                pulled_back,
                zero_set: zs,
                global,
            });
        }
        let mut offsets = Vec::new();
        let mut piece_count = 0;
        for cd in &charts {
            offsets.push(piece_count);
            piece_count += cd.global.piece_count();
        }
        Ok(ManifoldDecomposition {
            atlas,
            f: f.clone(),
            charts,
            offsets,
            piece_count,
        })
    }

    pub fn atlas(&self) -> &Atlas {
        &self.atlas
    }

    pub fn function(&self) -> &ExprFunction {
        &self.f
    }

    pub fn charts(&self) -> &[ChartDecomposition] {
        &self.charts
    }

    pub fn piece_count(&self) -> usize {
        self.piece_count
    }

    /// First manifold piece index of chart `c`.
    pub fn offset(&self, c: usize) -> usize {
        self.offsets[c]
    }

    /// Pieces `ψ_c(x)·g_{c,k}(φ_c(x))` at a point `x` of the manifold.
    pub fn eval_pieces(&self, x: &[f64]) -> Result<Vec<f64>, ManifoldError> {
        let psi = self.atlas.partition(x);
        let mut out = vec![0.0; self.piece_count];
        for (cd, (&w, &off)) in self.charts.iter().zip(psi.iter().zip(&self.offsets)) {
            if w == 0.0 {
                continue;
            }
            let u = self.atlas.charts[cd.chart].to_chart(x);
            let vals = cd.global.eval_pieces(&u).map_err(|source| ManifoldError::Gluing {
                chart: self.atlas.charts[cd.chart].name.to_string(),
                source,
            })?;
            for (k, v) in vals.into_iter().enumerate() {
                out[off + k] = w * v;
            }
        }
        Ok(out)
    }
}

impl SumOfSquares for ManifoldDecomposition {
    fn dim(&self) -> usize {
        self.atlas.ambient_dim
    }

    fn piece_count(&self) -> usize {
        self.piece_count
    }

    fn target(&self, x: &[f64]) -> Result<f64, String> {
        self.f.eval(x).map_err(|e| e.to_string())
    }

    fn pieces(&self, x: &[f64]) -> Result<Vec<f64>, String> {
        self.eval_pieces(x).map_err(|e| e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Chart, ZeroComponent};
    use crate::verify;

    fn equator_sets() -> Vec<ZeroSetDescription> {
        (0..2)
            .map(|_| {
                let line = Chart::parse(&["t1", "0"], vec![(-2.5, 2.5)]).unwrap();
                ZeroSetDescription::new(2, vec![ZeroComponent::Chart(line)]).unwrap()
            })
            .collect()
    }

    fn f5() -> ExprFunction {
        ExprFunction::parse("x2^2", 3).unwrap()
    }

    #[test]
    fn charts_invert_each_other() {
        for atlas in [Atlas::sphere2(), Atlas::circle1()] {
            for x in atlas.samples(200) {
                let psi = atlas.partition(&x);
                assert!((psi.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);
                for (c, chart) in atlas.charts.iter().enumerate() {
                    if psi[c] == 0.0 {
                        continue;
                    }
                    let u = chart.to_chart(&x);
                    assert!(u.iter().zip(&chart.support_box).all(|(v, (lo, hi))| *v > *lo && *v < *hi));
                    let back = chart.to_ambient(&u).unwrap();
                    assert!(geometry::dist(&back, &x) < 1e-12);
                }
            }
        }
    }

    #[test]
    fn sphere_hessians_agree_on_the_equator() {
        let atlas = Atlas::sphere2();
        let checks = overlap_hessian_agreement(&atlas, &f5(), &equator_sets(), 64, 1e-8).unwrap();
        assert!(!checks.is_empty());
        for c in &checks {
            assert!(c.pass(), "{c:?}");
        }
    }

    #[test]
    fn ambient_hessian_embeds_chart_form() {
        let j = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        let h = DMatrix::from_element(1, 1, 4.0);
        let a = ambient_hessian(&j, &h);
        assert_eq!(a, DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 4.0]));
    }

    #[test]
    fn sphere_fixture_nhc_and_decomposition() {
        let atlas = Atlas::sphere2();
        let tol = Tolerances::default();
        let nhc = check_manifold_nhc(&atlas, &f5(), &equator_sets(), 32, &tol);
        assert!(nhc.iter().all(|r| r.pass));
        let grid = GridSpec::uniform(-2.0, 2.0, 41, 2);
        let md = ManifoldDecomposition::build(atlas, &f5(), equator_sets(), &grid, &tol).unwrap();
        for cd in md.charts() {
            let r = verify::residuals(&cd.global, &grid, 1e-8).unwrap();
            assert!(r.pass, "{r:?}");
        }
        let pts = md.atlas().samples(2000);
        let r = verify::residuals_at(&md, &pts, "sphere".into(), 1e-8).unwrap();
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn circle_atlas_decomposition() {
        // f = x2² on S¹ vanishes at (±1, 0): θ = 0 in both charts
        let atlas = Atlas::circle1();
        let f = ExprFunction::parse("x2^2", 2).unwrap();
        let sets: Vec<ZeroSetDescription> = (0..2)
            .map(|_| ZeroSetDescription::new(1, vec![ZeroComponent::Point(vec![0.0])]).unwrap())
            .collect();
        let grid = GridSpec::uniform(-2.3, 2.3, 201, 1);
        let md = ManifoldDecomposition::build(atlas, &f, sets, &grid, &Tolerances::default()).unwrap();
        let pts = md.atlas().samples(500);
        let r = verify::residuals_at(&md, &pts, "circle".into(), 1e-8).unwrap();
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn small_chart_grid_is_rejected() {
        let grid = GridSpec::uniform(-1.0, 1.0, 11, 2);
        assert!(matches!(
            ManifoldDecomposition::build(Atlas::sphere2(), &f5(), equator_sets(), &grid, &Tolerances::default()),
            Err(ManifoldError::Invalid(_))
        ));
    }
}
