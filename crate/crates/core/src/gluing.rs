//! Smooth bumps, √-normalized partitions of unity and the two-stage gluing
//! of local Morse pieces into one global sum of squares.

use std::collections::HashMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::expr::{DomainError, ExprFunction};
use crate::geometry::{self, dist, GeometryError, ZeroComponent, ZeroSetDescription};
use crate::grid::GridSpec;
use crate::morse::{self, LocalDecomposition, MorseError};
use crate::tolerances::Tolerances;

/// Largest number of chart samples tried when building a component cover.
pub const MAX_COVER_SAMPLES: usize = 1024;
/// Chart samples used to estimate distances between components.
pub const SEPARATION_SAMPLES: usize = 256;
/// Bump radii relative to the validated Morse radius.
pub const PLATEAU_FRACTION: f64 = 0.6;
pub const SUPPORT_FRACTION: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GluingError {
    #[error("bump needs 0 < r_plateau < r_support, got {r_plateau} and {r_support}")]
    BadBump { r_plateau: f64, r_support: f64 },
    #[error("coverage gap: max partition weight {weight:e} < {delta} at {point:?}")]
    CoverageGap {
        point: Vec<f64>,
        weight: f64,
        delta: f64,
    },
    #[error("cover gap on component {component} at {point:?}; local radii are too small for the chart sampling")]
    CoverGap { component: usize, point: Vec<f64> },
    #[error("bump support (center {center:?}, radius {r_support}) is not contained in its region of radius {region_radius}")]
    Containment {
        center: Vec<f64>,
        r_support: f64,
        region_radius: f64,
    },
    #[error("components {0} and {1} are not separated")]
    ZeroSeparation(usize, usize),
    #[error("bump supports of components {a} and {b} overlap near {point:?}")]
    OverlapViolation { a: usize, b: usize, point: Vec<f64> },
    #[error("reconstruction residual {residual:e} exceeds {bound:e} at {point:?}")]
    ResidualBreach {
        residual: f64,
        bound: f64,
        point: Vec<f64>,
    },
    #[error("star piece needs f > 0 but f = {value:e} at {point:?}")]
    StarNonPositive { point: Vec<f64>, value: f64 },
    #[error("point {point:?} is outside every partition support")]
    NotCovered { point: Vec<f64> },
    #[error("f = {value:e} at {point:?}, which no declared zero component covers")]
    UncoveredZero { point: Vec<f64>, value: f64 },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Morse(#[from] MorseError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

fn psi(s: f64) -> f64 {
    if s.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - s * s)).exp()
    }
}

/// Smooth step: 1 for `s ≤ 0`, 0 for `s ≥ 1`, strictly between otherwise.
pub fn transition(s: f64) -> f64 {
    if s <= 0.0 {
        1.0
    } else if s >= 1.0 {
        0.0
    } else {
        let a = psi(s);
        let b = psi(1.0 - s);
        a / (a + b)
    }
}

/// `s` with `transition(s) = level`, by bisection.
fn transition_inverse(level: f64) -> f64 {
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if transition(mid) > level {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Bump {
    pub center: Vec<f64>,
    pub r_plateau: f64,
    pub r_support: f64,
}

impl Bump {
    pub fn new(center: Vec<f64>, r_plateau: f64, r_support: f64) -> Result<Self, GluingError> {
        if !(r_plateau > 0.0 && r_support > r_plateau && r_support.is_finite()) {
            return Err(GluingError::BadBump {
                r_plateau,
                r_support,
            });
        }
        Ok(Bump {
            center,
            r_plateau,
            r_support,
        })
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let r = dist(x, &self.center);
        if r <= self.r_plateau {
            1.0
        } else if r >= self.r_support {
            0.0
        } else {
            transition((r - self.r_plateau) / (self.r_support - self.r_plateau))
        }
    }

    /// Radius at which the bump takes the value `level ∈ (0, 1)`.
    pub fn level_radius(&self, level: f64) -> f64 {
        self.r_plateau + transition_inverse(level) * (self.r_support - self.r_plateau)
    }
}

/// `χ̃⋆(x) = 1 − transition(f(x)/θ − 1)`: zero where `f ≤ θ`, one where `f ≥ 2θ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StarCutoff {
    pub theta: f64,
}

impl StarCutoff {
    pub fn eval(&self, fx: f64) -> f64 {
        if !self.theta.is_finite() {
            return 0.0;
        }
        1.0 - transition(fx / self.theta - 1.0)
    }
}

/// Open ball `U` that a bump support must stay inside.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverRegion {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl CoverRegion {
    pub fn contains_support(&self, b: &Bump) -> bool {
        dist(&self.center, &b.center) + b.r_support <= self.radius
    }
}

/// Bumps plus an optional star cutoff of `f`, normalized by `√Σχ̃²`.
#[derive(Debug, Clone)]
pub struct PartitionSq {
    bumps: Vec<Bump>,
    star: Option<(ExprFunction, StarCutoff)>,
}

impl PartitionSq {
    pub fn new(bumps: Vec<Bump>, star: Option<(ExprFunction, StarCutoff)>) -> Self {
        PartitionSq { bumps, star }
    }

    pub fn bumps(&self) -> &[Bump] {
        &self.bumps
    }

    pub fn star(&self) -> Option<StarCutoff> {
        self.star.as_ref().map(|(_, s)| *s)
    }

    pub fn len(&self) -> usize {
        self.bumps.len() + usize::from(self.star.is_some())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Unnormalized weights `χ̃`, star last when present.
    pub fn raw(&self, x: &[f64]) -> Result<Vec<f64>, DomainError> {
        let mut w: Vec<f64> = self.bumps.iter().map(|b| b.eval(x)).collect();
        if let Some((f, s)) = &self.star {
            w.push(s.eval(f.eval(x)?));
        }
        Ok(w)
    }

    /// Normalized weights `χᵢ = χ̃ᵢ/√φ̂`.
    pub fn chi(&self, x: &[f64]) -> Result<Vec<f64>, GluingError> {
        let mut w = self.raw(x)?;
        let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(GluingError::NotCovered { point: x.to_vec() });
        }
        w.iter_mut().for_each(|v| *v /= norm);
        Ok(w)
    }

    /// Every sample needs some `χ̃ᵢ ≥ delta`.
    pub fn check_coverage(&self, samples: &[Vec<f64>], delta: f64) -> Result<(), GluingError> {
        for x in samples {
            let weight = self.raw(x)?.into_iter().fold(0.0, f64::max);
            if weight < delta {
                return Err(GluingError::CoverageGap {
                    point: x.clone(),
                    weight,
                    delta,
                });
            }
        }
        Ok(())
    }
}

/// Partition subordinate to `cover`, checked for support containment and
/// for coverage of `samples` at level `delta`.
pub fn sqrt_partition(
    cover: Vec<(CoverRegion, Bump)>,
    samples: &[Vec<f64>],
    delta: f64,
) -> Result<PartitionSq, GluingError> {
    let mut bumps = Vec::with_capacity(cover.len());
    for (region, bump) in cover {
        if !region.contains_support(&bump) {
            return Err(GluingError::Containment {
                center: bump.center,
                r_support: bump.r_support,
                region_radius: region.radius,
            });
        }
        bumps.push(bump);
    }
    let p = PartitionSq::new(bumps, None);
    p.check_coverage(samples, delta)?;
    Ok(p)
}

/// `x ↦ χ(x)·g(x)` on the region, exactly 0 where `χ` vanishes.
#[derive(Debug, Clone)]
pub struct ExtendedByZero<G> {
    g: G,
    chi: Bump,
}

pub fn extend_by_zero<G>(g: G, chi: Bump, region: &CoverRegion) -> Result<ExtendedByZero<G>, GluingError> {
    if !region.contains_support(&chi) {
        return Err(GluingError::Containment {
            center: chi.center,
            r_support: chi.r_support,
            region_radius: region.radius,
        });
    }
    Ok(ExtendedByZero { g, chi })
}

impl<G, E> ExtendedByZero<G>
where
    G: Fn(&[f64]) -> Result<f64, E>,
{
    pub fn eval(&self, x: &[f64]) -> Result<f64, E> {
        let c = self.chi.eval(x);
        if c == 0.0 {
            Ok(0.0)
        } else {
            Ok(c * (self.g)(x)?)
        }
    }
}

/// Half the sampled distance from each component to its nearest neighbor,
/// capped at `r0`.
pub fn disjoint_neighborhoods(zs: &ZeroSetDescription, r0: f64) -> Result<Vec<f64>, GluingError> {
    let sep = zs.separation_matrix(SEPARATION_SAMPLES)?;
    let mut radii = vec![r0; sep.len()];
    for (i, row) in sep.iter().enumerate() {
        for (j, &s) in row.iter().enumerate() {
            if i == j {
                continue;
            }
            if !(s > 0.0) {
                return Err(GluingError::ZeroSeparation(i.min(j), i.max(j)));
            }
            radii[i] = radii[i].min(0.5 * s);
        }
    }
    Ok(radii)
}

/// Pieces `χⱼ·fⱼ,ₖ` of one component, `χ` normalized over this component's bumps.
#[derive(Debug, Clone)]
pub struct ComponentFamily {
    component: usize,
    d0: usize,
    params: Vec<Vec<f64>>,
    locals: Vec<LocalDecomposition>,
    bumps: Vec<Bump>,
    offsets: Vec<usize>,
    piece_count: usize,
    max_residual: f64,
}

impl ComponentFamily {
    pub fn component(&self) -> usize {
        self.component
    }

    pub fn d0(&self) -> usize {
        self.d0
    }

    pub fn params(&self) -> &[Vec<f64>] {
        &self.params
    }

    pub fn locals(&self) -> &[LocalDecomposition] {
        &self.locals
    }

    pub fn bumps(&self) -> &[Bump] {
        &self.bumps
    }

    /// `|J|·(d − d₀)`.
    pub fn piece_count(&self) -> usize {
        self.piece_count
    }

    /// First family piece index belonging to local `j`.
    pub fn offset(&self, j: usize) -> usize {
        self.offsets[j]
    }

    pub fn max_residual(&self) -> f64 {
        self.max_residual
    }

    /// Component-level pieces; errors outside every bump support.
    pub fn eval_pieces(&self, x: &[f64]) -> Result<Vec<f64>, GluingError> {
        let raw: Vec<f64> = self.bumps.iter().map(|b| b.eval(x)).collect();
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(GluingError::NotCovered { point: x.to_vec() });
        }
        let mut out = vec![0.0; self.piece_count];
        for (j, &w) in raw.iter().enumerate() {
            if w > 0.0 {
                for (k, v) in self.locals[j].eval_pieces(x)?.into_iter().enumerate() {
                    out[self.offsets[j] + k] = w / norm * v;
                }
            }
        }
        Ok(out)
    }
}

fn dense_samples(comp: &ZeroComponent, cover_size: usize) -> Result<Vec<Vec<f64>>, DomainError> {
    let n = (4 * cover_size).max(64);
    Ok(geometry::sample_component(comp, n)?
        .into_iter()
        .map(|(_, x)| x)
        .collect())
}

/// Glue local decompositions along one component with the given bumps.
pub fn glue_component(
    f: &ExprFunction,
    comp: &ZeroComponent,
    component: usize,
    params: Vec<Vec<f64>>,
    locals: Vec<LocalDecomposition>,
    bumps: Vec<Bump>,
    tol: &Tolerances,
) -> Result<ComponentFamily, GluingError> {
    if locals.is_empty() || locals.len() != bumps.len() || params.len() != locals.len() {
        return Err(GluingError::Invalid(format!(
            "component {component}: need one bump and one parameter per local decomposition"
        )));
    }
    for (ld, b) in locals.iter().zip(&bumps) {
        let region = CoverRegion {
            center: ld.center().to_vec(),
            radius: ld.radius(),
        };
        if !region.contains_support(b) {
            return Err(GluingError::Containment {
                center: b.center.clone(),
                r_support: b.r_support,
                region_radius: ld.radius(),
            });
        }
    }

    let dense = dense_samples(comp, locals.len())?;
    for x in &dense {
        let w = bumps.iter().map(|b| b.eval(x)).fold(0.0, f64::max);
        if w < tol.delta_cover {
            return Err(GluingError::CoverGap {
                component,
                point: x.clone(),
            });
        }
    }

    let mut offsets = Vec::with_capacity(locals.len());
    let mut piece_count = 0;
    for ld in &locals {
        offsets.push(piece_count);
        piece_count += ld.piece_count();
    }
    let mut family = ComponentFamily {
        component,
        d0: comp.d0(),
        params,
        locals,
        bumps,
        offsets,
        piece_count,
        max_residual: 0.0,
    };

    // residual check on the zero set and on normal offsets of it
    let mut checks = Vec::new();
    for x in &dense {
        checks.push(x.clone());
        let nearest = family
            .locals
            .iter()
            .zip(&family.bumps)
            .min_by(|a, b| {
                dist(x, a.0.center())
                    .partial_cmp(&dist(x, b.0.center()))
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
            .expect("non-empty cover");
        let p1 = &nearest.0.frame().p1;
        for col in 0..p1.ncols() {
            for frac in [-0.5, -0.25, 0.25, 0.5] {
                let step = frac * nearest.1.r_plateau;
                checks.push(x.iter().enumerate().map(|(i, v)| v + step * p1[(i, col)]).collect());
            }
        }
    }
    let results: Vec<Option<(f64, f64, Vec<f64>)>> = checks
        .par_iter()
        .map(|x| -> Result<_, GluingError> {
            let covered = family.bumps.iter().any(|b| b.eval(x) >= tol.delta_cover);
            if !covered {
                return Ok(None);
            }
            let fx = f.eval(x)?;
            let s: f64 = family.eval_pieces(x)?.iter().map(|v| v * v).sum();
            Ok(Some(((fx - s).abs(), fx.abs(), x.clone())))
        })
        .collect::<Result<_, _>>()?;
    let mut worst = (0.0, Vec::new());
    let mut max_f: f64 = 0.0;
    for (r, fa, x) in results.into_iter().flatten() {
        max_f = max_f.max(fa);
        if r > worst.0 {
            worst = (r, x);
        }
    }
    let bound = tol.tol_global(max_f);
    if worst.0 > bound {
        return Err(GluingError::ResidualBreach {
            residual: worst.0,
            bound,
            point: worst.1,
        });
    }
    family.max_residual = worst.0;
    Ok(family)
}

fn bump_for(ld: &LocalDecomposition) -> Result<Bump, GluingError> {
    Bump::new(
        ld.center().to_vec(),
        PLATEAU_FRACTION * ld.radius(),
        SUPPORT_FRACTION * ld.radius(),
    )
}

fn param_key(t: &[f64]) -> Vec<u64> {
    t.iter().map(|v| v.to_bits()).collect()
}

/// Sample the component, build a local decomposition at every sample and
/// double the sample count until the bumps cover the component.
pub fn build_component_family(
    f: &ExprFunction,
    comp: &ZeroComponent,
    component: usize,
    r_sep: f64,
    tol: &Tolerances,
    initial_samples: usize,
) -> Result<ComponentFamily, GluingError> {
    let mut cache: HashMap<Vec<u64>, LocalDecomposition> = HashMap::new();
    let mut n = initial_samples.max(1);
    loop {
        let samples = geometry::sample_component(comp, n)?;
        let missing: Vec<Vec<f64>> = samples
            .iter()
            .map(|(t, _)| t.clone())
            .filter(|t| !cache.contains_key(&param_key(t)))
            .collect();
        let built: Vec<LocalDecomposition> = missing
            .par_iter()
            .map(|t| morse::local_pieces(f, comp, t, tol, r_sep))
            .collect::<Result<_, _>>()?;
        for (t, ld) in missing.iter().zip(built) {
            cache.insert(param_key(t), ld);
        }
        let params: Vec<Vec<f64>> = samples.into_iter().map(|(t, _)| t).collect();
        let locals: Vec<LocalDecomposition> = params
            .iter()
            .map(|t| cache[&param_key(t)].clone())
            .collect();
        let bumps = locals.iter().map(bump_for).collect::<Result<Vec<_>, _>>()?;
        match glue_component(f, comp, component, params, locals, bumps, tol) {
            Err(GluingError::CoverGap { point, .. }) if !comp.is_point() && 2 * n <= MAX_COVER_SAMPLES => {
                log::debug!("component {component}: {n} samples leave a gap at {point:?}, doubling");
                n *= 2;
            }
            other => return other,
        }
    }
}

/// Support of one global piece.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PieceSupport {
    /// Union of closed balls.
    Balls { balls: Vec<SupportBall> },
    /// `{x : f(x) ≥ theta}`.
    Superlevel { theta: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SupportBall {
    pub component: usize,
    pub center: Vec<f64>,
    pub radius: f64,
}

/// The glued family `g₀, …, g_{K−1}, g⋆` with `f = Σ gᵢ²`.
#[derive(Debug, Clone)]
pub struct GlobalDecomposition {
    f: ExprFunction,
    families: Vec<ComponentFamily>,
    partition: PartitionSq,
    owners: Vec<(usize, usize)>,
    aligned: usize,
    supports: Vec<PieceSupport>,
    shc: bool,
    tol: Tolerances,
    max_overlap: usize,
    check_residual: f64,
}

/// Terms of a global evaluation before the per-component pieces are summed.
#[derive(Debug, Clone, PartialEq)]
pub struct PieceTerms {
    /// `per_family[i][k]`: piece `k` of component family `i`.
    pub per_family: Vec<Vec<f64>>,
    pub star: f64,
}

impl GlobalDecomposition {
    pub fn function(&self) -> &ExprFunction {
        &self.f
    }

    pub fn dim(&self) -> usize {
        self.f.dim()
    }

    pub fn families(&self) -> &[ComponentFamily] {
        &self.families
    }

    pub fn partition(&self) -> &PartitionSq {
        &self.partition
    }

    /// Aligned component pieces plus the star piece.
    pub fn piece_count(&self) -> usize {
        self.aligned + 1
    }

    pub fn aligned_count(&self) -> usize {
        self.aligned
    }

    pub fn supports(&self) -> &[PieceSupport] {
        &self.supports
    }

    pub fn theta_star(&self) -> f64 {
        self.partition.star().map_or(f64::INFINITY, |s| s.theta)
    }

    pub fn shc(&self) -> bool {
        self.shc
    }

    pub fn tolerances(&self) -> &Tolerances {
        &self.tol
    }

    /// Largest number of bump supports met at a check sample.
    pub fn max_overlap(&self) -> usize {
        self.max_overlap
    }

    /// Bound on the number of simultaneously nonzero pieces.
    pub fn locality_bound(&self) -> usize {
        let k = self
            .families
            .iter()
            .map(|fam| self.dim() - fam.d0())
            .max()
            .unwrap_or(0);
        self.max_overlap * k + 1
    }

    /// Residual found by the assembly check on the coarsened region grid.
    pub fn check_residual(&self) -> f64 {
        self.check_residual
    }

    pub fn eval_terms(&self, x: &[f64]) -> Result<PieceTerms, GluingError> {
        let raw = self.partition.raw(x)?;
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(GluingError::NotCovered { point: x.to_vec() });
        }
        let mut per_family: Vec<Vec<f64>> =
            self.families.iter().map(|fam| vec![0.0; fam.piece_count()]).collect();
        let nb = self.owners.len();
        for (j, &w) in raw[..nb].iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let (fi, li) = self.owners[j];
            let fam = &self.families[fi];
            let off = fam.offset(li);
            for (k, v) in fam.locals()[li].eval_pieces(x)?.into_iter().enumerate() {
                per_family[fi][off + k] = w / norm * v;
            }
        }
        let mut star = 0.0;
        let ws = raw[nb];
        if ws > 0.0 {
            let fx = self.f.eval(x)?;
            if fx <= 0.0 {
                return Err(GluingError::StarNonPositive {
                    point: x.to_vec(),
                    value: fx,
                });
            }
            star = ws / norm * fx.sqrt();
        }
        Ok(PieceTerms { per_family, star })
    }

    /// `(g₀(x), …, g_{K−1}(x), g⋆(x))`.
    pub fn eval_pieces(&self, x: &[f64]) -> Result<Vec<f64>, GluingError> {
        let terms = self.eval_terms(x)?;
        let mut out = vec![0.0; self.piece_count()];
        for fam in &terms.per_family {
            for (k, v) in fam.iter().enumerate() {
                out[k] += v;
            }
        }
        out[self.aligned] = terms.star;
        Ok(out)
    }
}

fn unit_directions(d: usize, seed: u64) -> Vec<Vec<f64>> {
    match d {
        1 => vec![vec![1.0], vec![-1.0]],
        2 => (0..64)
            .map(|k| {
                let a = 2.0 * PI * k as f64 / 64.0;
                vec![a.cos(), a.sin()]
            })
            .collect(),
        _ => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..256)
                .map(|_| random_unit(&mut rng, d))
                .collect()
        }
    }
}

/// Uniform direction on the unit sphere in `ℝ^d`.
pub fn random_unit<R: Rng>(rng: &mut R, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d)
            .map(|_| {
                // Box–Muller
                let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
                let u2: f64 = rng.gen();
                (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
            })
            .collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Assemble component families and the star piece into one decomposition
/// over the box of `region`.
pub fn glue_global(
    f: &ExprFunction,
    zs: &ZeroSetDescription,
    families: Vec<ComponentFamily>,
    region: &GridSpec,
    tol: &Tolerances,
) -> Result<GlobalDecomposition, GluingError> {
    let d = f.dim();
    if region.dim() != d {
        return Err(GluingError::Invalid(format!(
            "region has dimension {}, function has {d}",
            region.dim()
        )));
    }
    let mut bumps = Vec::new();
    let mut owners = Vec::new();
    for (fi, fam) in families.iter().enumerate() {
        for (li, b) in fam.bumps().iter().enumerate() {
            bumps.push(b.clone());
            owners.push((fi, li));
        }
    }

    for a in 0..bumps.len() {
        for b in (a + 1)..bumps.len() {
            let (fa, fb) = (owners[a].0, owners[b].0);
            if fa != fb && dist(&bumps[a].center, &bumps[b].center) <= bumps[a].r_support + bumps[b].r_support {
                return Err(GluingError::OverlapViolation {
                    a: families[fa].component(),
                    b: families[fb].component(),
                    point: bumps[a].center.clone(),
                });
            }
        }
    }

    // star threshold: half the smallest f on the δ-level shells and on
    // region samples that no bump reaches at level δ
    let delta = tol.delta_cover;
    let max_bump = |x: &[f64]| bumps.iter().map(|b| b.eval(x)).fold(0.0, f64::max);
    let mut outside: Vec<Vec<f64>> = Vec::new();
    let dirs = unit_directions(d, tol.seed);
    for b in &bumps {
        let rho = b.level_radius(delta);
        for u in &dirs {
            let x: Vec<f64> = b.center.iter().zip(u).map(|(c, v)| c + rho * v).collect();
            if region.contains(&x) && max_bump(&x) <= delta * (1.0 + 1e-9) {
                outside.push(x);
            }
        }
    }
    let region_points = region.points();
    outside.extend(region_points.iter().filter(|x| max_bump(x) < delta).cloned());
    let values: Vec<f64> = outside
        .par_iter()
        .map(|x| f.eval(x))
        .collect::<Result<_, _>>()?;
    let mut theta = f64::INFINITY;
    for (x, &v) in outside.iter().zip(&values) {
        if v <= tol.tol_zero {
            return Err(GluingError::UncoveredZero {
                point: x.clone(),
                value: v,
            });
        }
        theta = theta.min(0.5 * v);
    }
    log::info!("star threshold theta = {theta:e} from {} samples", outside.len());

    let partition = PartitionSq::new(bumps, Some((f.clone(), StarCutoff { theta })));
    partition.check_coverage(&region_points, delta)?;

    let aligned = families.iter().map(|fam| fam.piece_count()).max().unwrap_or(0);
    let mut supports: Vec<PieceSupport> = (0..aligned)
        .map(|_| PieceSupport::Balls { balls: Vec::new() })
        .collect();
    for fam in &families {
        for (li, (ld, b)) in fam.locals().iter().zip(fam.bumps()).enumerate() {
            for k in 0..ld.piece_count() {
                if let PieceSupport::Balls { balls } = &mut supports[fam.offset(li) + k] {
                    balls.push(SupportBall {
                        component: fam.component(),
                        center: b.center.clone(),
                        radius: b.r_support,
                    });
                }
            }
        }
    }
    supports.push(PieceSupport::Superlevel { theta });

    let mut gd = GlobalDecomposition {
        f: f.clone(),
        families,
        partition,
        owners,
        aligned,
        supports,
        shc: zs.is_discrete(),
        tol: *tol,
        max_overlap: 0,
        check_residual: 0.0,
    };

    let checks = region.coarsened(41).points();
    let rows: Vec<(f64, f64, usize)> = checks
        .par_iter()
        .map(|x| -> Result<_, GluingError> {
            let fx = gd.f.eval(x)?;
            let s: f64 = gd.eval_pieces(x)?.iter().map(|v| v * v).sum();
            let overlap = gd.partition.bumps().iter().filter(|b| b.eval(x) > 0.0).count();
            Ok(((fx - s).abs(), fx.abs(), overlap))
        })
        .collect::<Result<_, _>>()?;
    let max_f = rows.iter().map(|r| r.1).fold(0.0, f64::max);
    let bound = tol.tol_global(max_f);
    for (x, r) in checks.iter().zip(&rows) {
        if r.0 > bound {
            return Err(GluingError::ResidualBreach {
                residual: r.0,
                bound,
                point: x.clone(),
            });
        }
    }
    gd.check_residual = rows.iter().map(|r| r.0).fold(0.0, f64::max);
    gd.max_overlap = rows.iter().map(|r| r.2).max().unwrap_or(0);
    Ok(gd)
}

/// Number of chart samples a component cover starts from.
pub const INITIAL_COVER_SAMPLES: usize = 8;

/// Full Euclidean pipeline: neighborhoods, per-component covers, gluing.
pub fn decompose(
    f: &ExprFunction,
    zs: &ZeroSetDescription,
    region: &GridSpec,
    tol: &Tolerances,
) -> Result<GlobalDecomposition, GluingError> {
    let radii = disjoint_neighborhoods(zs, tol.r0)?;
    let families = zs
        .components
        .iter()
        .enumerate()
        .map(|(i, comp)| build_component_family(f, comp, i, radii[i], tol, INITIAL_COVER_SAMPLES))
        .collect::<Result<Vec<_>, _>>()?;
    glue_global(f, zs, families, region, tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Chart;

    fn tol() -> Tolerances {
        Tolerances::default()
    }

    fn circle_f() -> ExprFunction {
        ExprFunction::parse("(x1^2 + x2^2 - 4)^2", 2).unwrap()
    }

    fn circle() -> ZeroComponent {
        ZeroComponent::Chart(Chart::parse(&["2*cos(t1)", "2*sin(t1)"], vec![(0.0, 2.0 * PI)]).unwrap())
    }

    #[test]
    fn bump_values() {
        let b = Bump::new(vec![0.0, 0.0], 0.5, 1.0).unwrap();
        assert_eq!(b.eval(&[0.0, 0.0]), 1.0);
        assert_eq!(b.eval(&[0.5, 0.0]), 1.0);
        assert_eq!(b.eval(&[1.0, 0.0]), 0.0);
        assert_eq!(b.eval(&[0.0, 3.0]), 0.0);
        let mid = b.eval(&[0.75, 0.0]);
        assert!((mid - 0.5).abs() < 1e-15);
        let mut last = 1.0;
        for k in 0..=100 {
            let v = b.eval(&[0.5 + 0.005 * k as f64, 0.0]);
            assert!(v <= last && (0.0..=1.0).contains(&v));
            last = v;
        }
        assert!(Bump::new(vec![0.0], 1.0, 1.0).is_err());
    }

    #[test]
    fn transition_reflection_symmetry() {
        for k in 1..100 {
            let s = k as f64 / 100.0;
            assert!((transition(s) + transition(1.0 - s) - 1.0).abs() < 1e-15);
        }
        let b = Bump::new(vec![0.0], 0.6, 0.9).unwrap();
        let r = b.level_radius(0.1);
        assert!((b.eval(&[r]) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn star_cutoff_levels() {
        let s = StarCutoff { theta: 2.0 };
        assert_eq!(s.eval(1.0), 0.0);
        assert_eq!(s.eval(2.0), 0.0);
        assert_eq!(s.eval(4.0), 1.0);
        assert!(s.eval(3.0) > 0.0 && s.eval(3.0) < 1.0);
    }

    #[test]
    fn single_bump_partition_is_one() {
        let region = CoverRegion {
            center: vec![0.0],
            radius: 10.0,
        };
        let bump = Bump::new(vec![0.0], 5.0, 6.0).unwrap();
        let samples: Vec<Vec<f64>> = (0..11).map(|k| vec![-1.0 + 0.2 * k as f64]).collect();
        let p = sqrt_partition(vec![(region, bump)], &samples, 0.1).unwrap();
        for x in &samples {
            assert_eq!(p.chi(x).unwrap(), vec![1.0]);
        }
    }

    #[test]
    fn overlapping_bumps_normalize() {
        let cover = vec![
            (
                CoverRegion { center: vec![-0.5], radius: 1.0 },
                Bump::new(vec![-0.5], 0.3, 0.8).unwrap(),
            ),
            (
                CoverRegion { center: vec![0.5], radius: 1.0 },
                Bump::new(vec![0.5], 0.3, 0.8).unwrap(),
            ),
        ];
        let samples: Vec<Vec<f64>> = (0..21).map(|k| vec![-1.0 + 0.1 * k as f64]).collect();
        let p = sqrt_partition(cover, &samples, 0.1).unwrap();
        let raw = p.raw(&[0.0]).unwrap();
        assert!(raw[0] > 0.0 && raw[0] < 1.0);
        let chi = p.chi(&[0.0]).unwrap();
        let direct = raw[0] / (raw[0] * raw[0] + raw[1] * raw[1]).sqrt();
        assert!((chi[0] - direct).abs() < 1e-15);
        assert!((chi[0] * chi[0] + chi[1] * chi[1] - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn hole_between_bumps_is_reported() {
        let cover = vec![
            (
                CoverRegion { center: vec![-1.0], radius: 1.0 },
                Bump::new(vec![-1.0], 0.3, 0.5).unwrap(),
            ),
            (
                CoverRegion { center: vec![1.0], radius: 1.0 },
                Bump::new(vec![1.0], 0.3, 0.5).unwrap(),
            ),
        ];
        let samples: Vec<Vec<f64>> = (0..21).map(|k| vec![-1.0 + 0.1 * k as f64]).collect();
        match sqrt_partition(cover, &samples, 0.1) {
            Err(GluingError::CoverageGap { point, weight, .. }) => {
                assert!(point[0].abs() <= 0.5 + 1e-12 && weight < 0.1)
            }
            other => panic!("expected coverage gap, got {other:?}"),
        }
    }

    #[test]
    fn containment_violation() {
        let region = CoverRegion { center: vec![0.0], radius: 1.0 };
        let bump = Bump::new(vec![0.5], 0.3, 0.6).unwrap();
        assert!(matches!(
            sqrt_partition(vec![(region.clone(), bump.clone())], &[], 0.1),
            Err(GluingError::Containment { .. })
        ));
        let g = |_: &[f64]| -> Result<f64, DomainError> { Ok(1.0) };
        assert!(extend_by_zero(g, bump, &region).is_err());
    }

    #[test]
    fn extension_by_zero() {
        let region = CoverRegion { center: vec![0.0, 0.0], radius: 2.0 };
        let chi = Bump::new(vec![0.0, 0.0], 0.5, 1.0).unwrap();
        let one = extend_by_zero(|_: &[f64]| -> Result<f64, DomainError> { Ok(1.0) }, chi.clone(), &region).unwrap();
        for x in [[0.0, 0.0], [0.7, 0.1], [0.9, 0.0], [3.0, 3.0]] {
            assert_eq!(one.eval(&x).unwrap(), chi.eval(&x));
        }
        let g = extend_by_zero(
            |x: &[f64]| -> Result<f64, DomainError> { Ok(1.0 / (x[0] - 5.0)) },
            chi,
            &region,
        )
        .unwrap();
        assert_eq!(g.eval(&[5.0, 0.0]).unwrap(), 0.0);
        assert_eq!(g.eval(&[0.25, 0.0]).unwrap(), 1.0 / (0.25 - 5.0));
    }

    #[test]
    fn neighborhoods_of_four_points() {
        let pts = [[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]];
        let zs = ZeroSetDescription::new(
            2,
            pts.iter().map(|p| ZeroComponent::Point(p.to_vec())).collect(),
        )
        .unwrap();
        assert_eq!(disjoint_neighborhoods(&zs, 1.0).unwrap(), vec![1.0; 4]);
        assert_eq!(disjoint_neighborhoods(&zs, 0.5).unwrap(), vec![0.5; 4]);

        let single = ZeroSetDescription::new(2, vec![circle()]).unwrap();
        assert_eq!(disjoint_neighborhoods(&single, 1.0).unwrap(), vec![1.0]);

        let twins = ZeroSetDescription::new(
            2,
            vec![ZeroComponent::Point(vec![0.0, 0.0]), ZeroComponent::Point(vec![0.0, 0.0])],
        )
        .unwrap();
        assert_eq!(disjoint_neighborhoods(&twins, 1.0), Err(GluingError::ZeroSeparation(0, 1)));
    }

    fn circle_locals(n: usize) -> (Vec<Vec<f64>>, Vec<LocalDecomposition>, Vec<Bump>) {
        let f = circle_f();
        let comp = circle();
        let params: Vec<Vec<f64>> = geometry::sample_component(&comp, n)
            .unwrap()
            .into_iter()
            .map(|(t, _)| t)
            .collect();
        let locals: Vec<LocalDecomposition> = params
            .iter()
            .map(|t| morse::local_pieces(&f, &comp, t, &tol(), 1.0).unwrap())
            .collect();
        let bumps = locals.iter().map(|ld| bump_for(ld).unwrap()).collect();
        (params, locals, bumps)
    }

    #[test]
    fn circle_family_reconstructs_on_annulus() {
        let f = circle_f();
        let (params, locals, bumps) = circle_locals(8);
        let fam = glue_component(&f, &circle(), 0, params, locals, bumps, &tol()).unwrap();
        assert_eq!(fam.piece_count(), 8);
        let mut checked = 0;
        for i in 0..60 {
            for j in 0..24 {
                let a = 2.0 * PI * i as f64 / 60.0;
                let r = 1.8 + 0.4 * j as f64 / 23.0;
                let x = [r * a.cos(), r * a.sin()];
                if fam.bumps().iter().all(|b| b.eval(&x) < 0.1) {
                    continue;
                }
                let s: f64 = fam.eval_pieces(&x).unwrap().iter().map(|v| v * v).sum();
                let oracle = (x[0] * x[0] + x[1] * x[1] - 4.0).powi(2);
                assert!((s - oracle).abs() <= 1e-8, "{x:?}: {s} vs {oracle}");
                checked += 1;
            }
        }
        assert!(checked > 1000);
    }

    #[test]
    fn removed_bump_is_a_cover_gap() {
        let f = circle_f();
        let (mut params, mut locals, mut bumps) = circle_locals(8);
        params.remove(3);
        locals.remove(3);
        bumps.remove(3);
        assert!(matches!(
            glue_component(&f, &circle(), 0, params, locals, bumps, &tol()),
            Err(GluingError::CoverGap { component: 0, .. })
        ));
    }

    #[test]
    fn point_component_has_d_pieces() {
        let f = ExprFunction::parse("x1^2 + 2*x2^2 + 3*x3^2 + x1*x2", 3).unwrap();
        let comp = ZeroComponent::Point(vec![0.0, 0.0, 0.0]);
        let fam = build_component_family(&f, &comp, 0, 1.0, &tol(), 8).unwrap();
        assert_eq!(fam.locals().len(), 1);
        assert_eq!(fam.piece_count(), 3);
        assert_eq!(fam.bumps()[0].eval(&[0.1, 0.2, 0.0]), 1.0);
    }

    fn f2() -> (ExprFunction, ZeroSetDescription) {
        let f = ExprFunction::parse(
            "((x1-1)^2 + (x2-1)^2)*((x1-1)^2 + (x2+1)^2)*((x1+1)^2 + (x2-1)^2)*((x1+1)^2 + (x2+1)^2)*exp(-4 *ln(3+x1^2 + x2^2))",
            2,
        )
        .unwrap();
        let zs = ZeroSetDescription::new(
            2,
            [[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]]
                .iter()
                .map(|p| ZeroComponent::Point(p.to_vec()))
                .collect(),
        )
        .unwrap();
        (f, zs)
    }

    #[test]
    fn four_minima_glue_to_three_pieces() {
        let (f, zs) = f2();
        let region = GridSpec::uniform(-2.2, 2.2, 41, 2);
        let gd = decompose(&f, &zs, &region, &tol()).unwrap();
        assert!(gd.shc());
        assert_eq!(gd.piece_count(), 3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..2000 {
            let x = [rng.gen_range(-2.2..2.2), rng.gen_range(-2.2..2.2)];
            let terms = gd.eval_terms(&x).unwrap();
            // pieces of different components never overlap
            for a in 0..terms.per_family.len() {
                for b in (a + 1)..terms.per_family.len() {
                    for va in &terms.per_family[a] {
                        for vb in &terms.per_family[b] {
                            assert_eq!(va * vb, 0.0);
                        }
                    }
                }
            }
            let s: f64 = gd.eval_pieces(&x).unwrap().iter().map(|v| v * v).sum();
            let fx = f.eval(&x).unwrap();
            assert!((s - fx).abs() <= 1e-8 * (1.0 + fx.abs()), "{x:?}");
            let chi = gd.partition().chi(&x).unwrap();
            assert!((chi.iter().map(|c| c * c).sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn uncovered_zero_is_rejected() {
        let (f, zs) = f2();
        let partial = ZeroSetDescription::new(2, zs.components[..3].to_vec()).unwrap();
        let region = GridSpec::uniform(-2.2, 2.2, 45, 2);
        assert!(matches!(
            decompose(&f, &partial, &region, &tol()),
            Err(GluingError::UncoveredZero { .. })
        ));
    }

    #[test]
    fn supports_are_respected() {
        let f = circle_f();
        let zs = ZeroSetDescription::new(2, vec![circle()]).unwrap();
        let region = GridSpec::uniform(-3.0, 3.0, 31, 2);
        let gd = decompose(&f, &zs, &region, &tol()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..3000 {
            let x = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
            let pieces = gd.eval_pieces(&x).unwrap();
            let fx = f.eval(&x).unwrap();
            for (v, s) in pieces.iter().zip(gd.supports()) {
                let inside = match s {
                    PieceSupport::Balls { balls } => balls.iter().any(|b| dist(&x, &b.center) < b.radius),
                    PieceSupport::Superlevel { theta } => fx > *theta,
                };
                if !inside {
                    assert_eq!(*v, 0.0, "{x:?}");
                }
            }
            let active = pieces.iter().filter(|v| **v != 0.0).count();
            assert!(active <= gd.locality_bound());
        }
    }
}
