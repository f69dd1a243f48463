//! Independent checks of a finished decomposition: grid residuals,
//! finite-difference smoothness probes and the piece-count bound.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::gluing::{random_unit, GlobalDecomposition, GluingError};
use crate::grid::GridSpec;

/// Finite-difference scales used by default.
pub const DEFAULT_SCALES: [f64; 3] = [1e-2, 1e-3, 1e-4];
/// Required contraction between successive difference-quotient changes.
pub const C_FD: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("evaluation failed at {point:?}: {message}")]
pub struct VerifyError {
    pub point: Vec<f64>,
    pub message: String,
}

/// Anything that claims `f = Σ pieces²`.
pub trait SumOfSquares: Sync {
    fn dim(&self) -> usize;
    fn piece_count(&self) -> usize;
    /// `f(x)`.
    fn target(&self, x: &[f64]) -> Result<f64, String>;
    fn pieces(&self, x: &[f64]) -> Result<Vec<f64>, String>;
}

impl SumOfSquares for GlobalDecomposition {
    fn dim(&self) -> usize {
        GlobalDecomposition::dim(self)
    }

    fn piece_count(&self) -> usize {
        GlobalDecomposition::piece_count(self)
    }

    fn target(&self, x: &[f64]) -> Result<f64, String> {
        self.function().eval(x).map_err(|e| e.to_string())
    }

    fn pieces(&self, x: &[f64]) -> Result<Vec<f64>, String> {
        self.eval_pieces(x).map_err(|e: GluingError| e.to_string())
    }
}

/// The same family with one piece replaced by zero.
pub struct WithoutPiece<'a, S: ?Sized> {
    pub inner: &'a S,
    pub index: usize,
}

impl<S: SumOfSquares + ?Sized> SumOfSquares for WithoutPiece<'_, S> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn piece_count(&self) -> usize {
        self.inner.piece_count()
    }

    fn target(&self, x: &[f64]) -> Result<f64, String> {
        self.inner.target(x)
    }

    fn pieces(&self, x: &[f64]) -> Result<Vec<f64>, String> {
        let mut p = self.inner.pieces(x)?;
        if let Some(v) = p.get_mut(self.index) {
            *v = 0.0;
        }
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualReport {
    pub grid: String,
    pub points: usize,
    pub max_abs_residual: f64,
    pub mean_abs_residual: f64,
    pub worst_point: Vec<f64>,
    pub max_abs_f: f64,
    pub tolerance: f64,
    pub piece_count: usize,
    pub locally_finite_max_active: usize,
    pub pass: bool,
}

/// Evaluate `f` and every piece at each point, in order.
pub fn values_at<S: SumOfSquares + ?Sized>(
    sos: &S,
    points: &[Vec<f64>],
) -> Result<Vec<(f64, Vec<f64>)>, VerifyError> {
    points
        .par_iter()
        .map(|x| {
            let wrap = |message: String| VerifyError {
                point: x.clone(),
                message,
            };
            let fx = sos.target(x).map_err(wrap)?;
            let pieces = sos.pieces(x).map_err(wrap)?;
            Ok((fx, pieces))
        })
        .collect()
}

pub fn grid_values<S: SumOfSquares + ?Sized>(
    sos: &S,
    grid: &GridSpec,
) -> Result<Vec<(f64, Vec<f64>)>, VerifyError> {
    values_at(sos, &grid.points())
}

/// `max |f − Σ pieces²|` over the grid, against `tol_global_rel·(1 + max|f|)`.
pub fn residuals<S: SumOfSquares + ?Sized>(
    sos: &S,
    grid: &GridSpec,
    tol_global_rel: f64,
) -> Result<ResidualReport, VerifyError> {
    residuals_at(sos, &grid.points(), grid.to_string(), tol_global_rel)
}

/// Same as [`residuals`] over an explicit point list described by `label`.
pub fn residuals_at<S: SumOfSquares + ?Sized>(
    sos: &S,
    points: &[Vec<f64>],
    label: String,
    tol_global_rel: f64,
) -> Result<ResidualReport, VerifyError> {
    let values = values_at(sos, points)?;
    let mut max_res = 0.0_f64;
    let mut sum_res = 0.0;
    let mut worst = 0;
    let mut max_f = 0.0_f64;
    let mut max_active = 0;
    for (i, (fx, pieces)) in values.iter().enumerate() {
        let s: f64 = pieces.iter().map(|v| v * v).sum();
        let r = (fx - s).abs();
        sum_res += r;
        if r > max_res {
            max_res = r;
            worst = i;
        }
        max_f = max_f.max(fx.abs());
        max_active = max_active.max(pieces.iter().filter(|v| **v != 0.0).count());
    }
    let n = values.len();
    let tolerance = tol_global_rel * (1.0 + max_f);
    Ok(ResidualReport {
        grid: label,
        points: n,
        max_abs_residual: max_res,
        mean_abs_residual: if n == 0 { 0.0 } else { sum_res / n as f64 },
        worst_point: points.get(worst).cloned().unwrap_or_default(),
        max_abs_f: max_f,
        tolerance,
        piece_count: sos.piece_count(),
        locally_finite_max_active: max_active,
        pass: max_res <= tolerance,
    })
}

/// Finite-difference behavior of one piece near the zero set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SmoothnessProbe {
    pub piece: usize,
    pub probe_points: usize,
    pub scales: Vec<f64>,
    pub max_order: usize,
    /// Largest `Δ₂ / max(Δ₁/C_fd, floor)` seen; above 1 means flagged.
    pub worst_ratio: f64,
    pub worst_point: Option<Vec<f64>>,
    pub worst_order: usize,
    pub flagged: bool,
    pub seed: u64,
}

impl SmoothnessProbe {
    pub fn verdict(&self) -> &'static str {
        if self.flagged {
            "flagged: difference quotients diverge"
        } else {
            "consistent with C^k"
        }
    }
}

/// Ball `(center, radius)`; probes are drawn within half the radius.
pub type ProbeBall = (Vec<f64>, f64);

/// Number of random probe points per ball besides its center.
pub const PROBES_PER_BALL: usize = 4;

/// Probe every output of `eval` with central differences of order
/// `1..=max_order` along random unit directions at the given decreasing
/// scales. A piece is flagged when the change between the two finest
/// estimates is not `C_FD` times smaller than the change between the two
/// coarsest, beyond a magnitude-relative floor.
pub fn smoothness_probe_fn<F>(
    eval: F,
    piece_count: usize,
    dim: usize,
    balls: &[ProbeBall],
    scales: &[f64],
    max_order: usize,
    seed: u64,
) -> Result<Vec<SmoothnessProbe>, VerifyError>
where
    F: Fn(&[f64]) -> Result<Vec<f64>, String> + Sync,
{
    assert!(scales.len() >= 3, "need three scales");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probes: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    for (c, r) in balls {
        probes.push((c.clone(), random_unit(&mut rng, dim)));
        for _ in 0..PROBES_PER_BALL {
            let u = random_unit(&mut rng, dim);
            let rho = 0.5 * r * rng.gen::<f64>().powf(1.0 / dim as f64);
            let x = c.iter().zip(&u).map(|(a, b)| a + rho * b).collect();
            probes.push((x, random_unit(&mut rng, dim)));
        }
    }

    // per probe and piece: (ratio, order)
    let rows: Vec<Vec<(f64, usize)>> = probes
        .par_iter()
        .map(|(x, u)| probe_one(&eval, x, u, piece_count, scales, max_order))
        .collect::<Result<_, _>>()?;

    let mut out: Vec<SmoothnessProbe> = (0..piece_count)
        .map(|piece| SmoothnessProbe {
            piece,
            probe_points: probes.len(),
            scales: scales.to_vec(),
            max_order,
            worst_ratio: 0.0,
            worst_point: None,
            worst_order: 0,
            flagged: false,
            seed,
        })
        .collect();
    for ((x, _), row) in probes.iter().zip(&rows) {
        for (p, &(ratio, order)) in out.iter_mut().zip(row) {
            if ratio > p.worst_ratio {
                p.worst_ratio = ratio;
                p.worst_point = Some(x.clone());
                p.worst_order = order;
            }
        }
    }
    for p in &mut out {
        p.flagged = p.worst_ratio > 1.0;
    }
    Ok(out)
}

fn probe_one<F>(
    eval: &F,
    x: &[f64],
    u: &[f64],
    piece_count: usize,
    scales: &[f64],
    max_order: usize,
) -> Result<Vec<(f64, usize)>, VerifyError>
where
    F: Fn(&[f64]) -> Result<Vec<f64>, String>,
{
    let at = |t: f64| -> Result<Vec<f64>, VerifyError> {
        let p: Vec<f64> = x.iter().zip(u).map(|(a, b)| a + t * b).collect();
        let v = eval(&p).map_err(|message| VerifyError {
            point: p.clone(),
            message,
        })?;
        if v.len() != piece_count {
            return Err(VerifyError {
                point: p,
                message: format!("expected {piece_count} pieces, got {}", v.len()),
            });
        }
        Ok(v)
    };
    let center = at(0.0)?;
    let mut plus = Vec::new();
    let mut minus = Vec::new();
    for &h in scales {
        plus.push(at(h)?);
        minus.push(at(-h)?);
    }
    let mut out = vec![(0.0, 0); piece_count];
    for (k, slot) in out.iter_mut().enumerate() {
        let magnitude = 1.0
            + center[k].abs()
            + plus.iter().chain(&minus).map(|v| v[k].abs()).fold(0.0, f64::max);
        for order in 1..=max_order.min(2) {
            let est: Vec<f64> = scales
                .iter()
                .enumerate()
                .map(|(s, &h)| {
                    if order == 1 {
                        (plus[s][k] - minus[s][k]) / (2.0 * h)
                    } else {
                        (plus[s][k] - 2.0 * center[k] + minus[s][k]) / (h * h)
                    }
                })
                .collect();
            let floor_rel = if order == 1 { 1e-6 } else { 1e-4 };
            for w in est.windows(3) {
                let d1 = (w[0] - w[1]).abs();
                let d2 = (w[1] - w[2]).abs();
                let floor = floor_rel * (magnitude + w[2].abs());
                let ratio = d2 / (d1 / C_FD).max(floor);
                if ratio > slot.0 {
                    *slot = (ratio, order);
                }
            }
        }
    }
    Ok(out)
}

/// Probe balls of a glued decomposition: every cover center with its Morse radius.
pub fn probe_balls(gd: &GlobalDecomposition) -> Vec<ProbeBall> {
    gd.families()
        .iter()
        .flat_map(|fam| fam.locals().iter().map(|ld| (ld.center().to_vec(), ld.radius())))
        .collect()
}

pub fn smoothness_probe(
    gd: &GlobalDecomposition,
    scales: &[f64],
    seed: u64,
) -> Result<Vec<SmoothnessProbe>, VerifyError> {
    smoothness_probe_fn(
        |x| gd.eval_pieces(x).map_err(|e| e.to_string()),
        gd.piece_count(),
        gd.dim(),
        &probe_balls(gd),
        scales,
        2,
        seed,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CountVerdict {
    pub piece_count: usize,
    pub dim: usize,
    pub shc: bool,
    /// `d + 1` when every component is a point.
    pub bound: Option<usize>,
    pub finite: bool,
    pub pass: bool,
}

pub fn count_check(piece_count: usize, shc: bool, dim: usize) -> CountVerdict {
    let bound = shc.then_some(dim + 1);
    CountVerdict {
        piece_count,
        dim,
        shc,
        bound,
        finite: true,
        pass: bound.is_none_or(|b| piece_count <= b),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    pub residual: ResidualReport,
    pub smoothness: Vec<SmoothnessProbe>,
    pub count: CountVerdict,
    pub pass: bool,
}

impl VerificationReport {
    pub fn new(residual: ResidualReport, smoothness: Vec<SmoothnessProbe>, count: CountVerdict) -> Self {
        let pass = residual.pass && count.pass && smoothness.iter().all(|p| !p.flagged);
        VerificationReport {
            residual,
            smoothness,
            count,
            pass,
        }
    }

    pub fn to_text(&self) -> String {
        let r = &self.residual;
        let mut s = String::new();
        let _ = writeln!(s, "residual on {} ({} points)", r.grid, r.points);
        let _ = writeln!(
            s,
            "  max |f - sum g^2| = {:.3e} at {:?} (tolerance {:.3e}), mean {:.3e}: {}",
            r.max_abs_residual,
            r.worst_point,
            r.tolerance,
            r.mean_abs_residual,
            pass_str(r.pass)
        );
        let _ = writeln!(
            s,
            "  pieces {}, at most {} nonzero at a grid point",
            r.piece_count, r.locally_finite_max_active
        );
        let c = &self.count;
        match c.bound {
            Some(b) => {
                let _ = writeln!(s, "count {} <= d+1 = {b}: {}", c.piece_count, pass_str(c.pass));
            }
            None => {
                let _ = writeln!(s, "count {} (finite): {}", c.piece_count, pass_str(c.pass));
            }
        }
        for p in &self.smoothness {
            let _ = writeln!(
                s,
                "smoothness piece {}: {} (worst ratio {:.3e}, order {}, {} probes, seed {})",
                p.piece,
                p.verdict(),
                p.worst_ratio,
                p.worst_order,
                p.probe_points,
                p.seed
            );
        }
        let _ = writeln!(s, "overall: {}", pass_str(self.pass));
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("check,item,value,tolerance,pass\n");
        let r = &self.residual;
        let _ = writeln!(
            s,
            "residual,max_abs,{:.16e},{:.16e},{}",
            r.max_abs_residual, r.tolerance, r.pass
        );
        let _ = writeln!(s, "residual,mean_abs,{:.16e},,", r.mean_abs_residual);
        let c = &self.count;
        let _ = writeln!(
            s,
            "count,pieces,{},{},{}",
            c.piece_count,
            c.bound.map(|b| b.to_string()).unwrap_or_default(),
            c.pass
        );
        for p in &self.smoothness {
            let _ = writeln!(s, "smoothness,piece_{},{:.16e},1,{}", p.piece, p.worst_ratio, !p.flagged);
        }
        s
    }
}

fn pass_str(ok: bool) -> &'static str {
    if ok {
        "pass"
    } else {
        "FAIL"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::ExprFunction;
    use crate::geometry::{Chart, ZeroComponent, ZeroSetDescription};
    use crate::gluing;
    use crate::tolerances::Tolerances;
    use std::f64::consts::PI;

    struct Explicit<F, P> {
        dim: usize,
        count: usize,
        f: F,
        p: P,
    }

    impl<F, P> SumOfSquares for Explicit<F, P>
    where
        F: Fn(&[f64]) -> f64 + Sync,
        P: Fn(&[f64]) -> Vec<f64> + Sync,
    {
        fn dim(&self) -> usize {
            self.dim
        }
        fn piece_count(&self) -> usize {
            self.count
        }
        fn target(&self, x: &[f64]) -> Result<f64, String> {
            Ok((self.f)(x))
        }
        fn pieces(&self, x: &[f64]) -> Result<Vec<f64>, String> {
            Ok((self.p)(x))
        }
    }

    fn circle_gd() -> GlobalDecomposition {
        let f = ExprFunction::parse("(x1^2 + x2^2 - 4)^2", 2).unwrap();
        let comp = ZeroComponent::Chart(Chart::parse(&["2*cos(t1)", "2*sin(t1)"], vec![(0.0, 2.0 * PI)]).unwrap());
        let zs = ZeroSetDescription::new(2, vec![comp]).unwrap();
        gluing::decompose(&f, &zs, &GridSpec::uniform(-3.0, 3.0, 31, 2), &Tolerances::default()).unwrap()
    }

    #[test]
    fn exact_square_has_tiny_residual() {
        let sos = Explicit {
            dim: 2,
            count: 1,
            f: |x: &[f64]| (x[0] * x[0] + x[1] * x[1] - 4.0).powi(2),
            p: |x: &[f64]| vec![x[0] * x[0] + x[1] * x[1] - 4.0],
        };
        let grid = GridSpec::uniform(-3.0, 3.0, 101, 2);
        let r = residuals(&sos, &grid, 1e-6).unwrap();
        assert!(r.max_abs_residual <= 1e-8);
        assert!(r.max_abs_residual >= r.mean_abs_residual && r.mean_abs_residual >= 0.0);
        assert_eq!(r.points, 101 * 101);
        assert!(r.pass);
    }

    #[test]
    fn glued_circle_residual_on_full_grid() {
        let gd = circle_gd();
        let r = residuals(&gd, &GridSpec::uniform(-3.0, 3.0, 101, 2), 1e-6).unwrap();
        assert!(r.pass, "{r:?}");
        assert!(r.max_abs_residual <= 1e-8 * (1.0 + r.max_abs_f));
    }

    #[test]
    fn removing_a_piece_is_detected() {
        let gd = circle_gd();
        let grid = GridSpec::uniform(-3.0, 3.0, 61, 2);
        for index in 0..gd.piece_count() {
            let faulty = WithoutPiece { inner: &gd, index };
            let r = residuals(&faulty, &grid, 1e-6).unwrap();
            // oracle: the largest square of the removed piece
            let removed = grid_values(&gd, &grid)
                .unwrap()
                .iter()
                .map(|(_, p)| p[index] * p[index])
                .fold(0.0, f64::max);
            assert!((r.max_abs_residual - removed).abs() <= 1e-6 * (1.0 + removed), "piece {index}");
            if index < gd.aligned_count() {
                assert!(r.max_abs_residual > 10.0 * r.tolerance, "piece {index}");
            }
        }
    }

    #[test]
    fn empty_decomposition_of_zero() {
        let sos = Explicit {
            dim: 1,
            count: 0,
            f: |_: &[f64]| 0.0,
            p: |_: &[f64]| Vec::new(),
        };
        let r = residuals(&sos, &GridSpec::uniform(-1.0, 1.0, 11, 1), 1e-6).unwrap();
        assert_eq!(r.max_abs_residual, 0.0);
        assert_eq!(r.mean_abs_residual, 0.0);
    }

    #[test]
    fn refinement_never_lowers_the_maximum() {
        let gd = circle_gd();
        let coarse = residuals(&gd, &GridSpec::uniform(-3.0, 3.0, 21, 2), 1e-6).unwrap();
        let fine = residuals(&gd, &GridSpec::uniform(-3.0, 3.0, 41, 2), 1e-6).unwrap();
        assert!(fine.max_abs_residual >= coarse.max_abs_residual);
    }

    fn circle_balls() -> Vec<ProbeBall> {
        (0..8)
            .map(|k| {
                let a = 2.0 * PI * k as f64 / 8.0;
                (vec![2.0 * a.cos(), 2.0 * a.sin()], 0.5)
            })
            .collect()
    }

    #[test]
    fn smooth_pieces_pass() {
        let probes = smoothness_probe_fn(
            |x: &[f64]| Ok(vec![x[0] * x[0] + x[1] * x[1] - 4.0, -(x[0] * x[0] + x[1] * x[1] - 4.0)]),
            2,
            2,
            &circle_balls(),
            &DEFAULT_SCALES,
            2,
            42,
        )
        .unwrap();
        assert!(probes.iter().all(|p| !p.flagged), "{probes:?}");
    }

    #[test]
    fn kink_is_flagged() {
        let probes = smoothness_probe_fn(
            |x: &[f64]| Ok(vec![x[0].abs(), x[1] * x[1]]),
            2,
            2,
            &[(vec![0.0, 0.3], 0.4)],
            &DEFAULT_SCALES,
            2,
            42,
        )
        .unwrap();
        assert!(probes[0].flagged);
        assert!(!probes[1].flagged);
    }

    #[test]
    fn root_of_square_away_from_zero() {
        let probes = smoothness_probe_fn(
            |x: &[f64]| Ok(vec![(x[0] * x[0]).sqrt()]),
            1,
            1,
            &[(vec![1.0], 0.5), (vec![-2.0], 1.0)],
            &DEFAULT_SCALES,
            2,
            42,
        )
        .unwrap();
        assert!(!probes[0].flagged);
    }

    #[test]
    fn probes_are_seeded() {
        let gd = circle_gd();
        let a = smoothness_probe(&gd, &DEFAULT_SCALES, 42).unwrap();
        let b = smoothness_probe(&gd, &DEFAULT_SCALES, 42).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|p| !p.flagged && p.seed == 42), "{a:?}");
    }

    #[test]
    fn count_verdicts() {
        assert!(count_check(3, true, 2).pass);
        assert!(count_check(17, false, 2).pass);
        assert!(!count_check(5, true, 2).pass);
    }
}
