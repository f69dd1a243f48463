//! Parametrized Morse lemma around a zero and the local square pieces.
//!
//! In frame coordinates `x = x₀ + P₁x′ + P₂y′` write `g(x′, y′) = f(x)`.
//! The valley `φ(y′)` solves `∇ₓ′g(φ(y′), y′) = 0`; with
//! `B = 2∫₀¹(1−t)∇²ₓ′ₓ′g(φ + t(x′−φ), y′)dt` and `R` such that `RᵀH′R = B`,
//! the curvilinear coordinate `z = R(x′ − φ(y′))` gives
//! `g = g(φ(y′), y′) + ½ zᵀH′z`, and with `H′ = Σ λᵢuᵢuᵢᵀ` the pieces
//! `fᵢ = √(λᵢ/2) uᵢᵀz` square-sum to `f` wherever the valley value vanishes.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::calculus::{integrate_matrix, QuadratureRule};
use crate::expr::{DomainError, ExprFunction};
use crate::geometry::{self, AdaptedFrame, GeometryError, ZeroComponent};
use crate::linalg;
use crate::nhc::{self, NhcReport};
use crate::tolerances::Tolerances;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MorseError {
    #[error("normal Hessian condition fails at {:?}: {}", .0.x0, .0.verdict.as_str())]
    Nhc(Box<NhcReport>),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("Newton for the valley did not converge at y' = {yprime:?} (|grad| = {grad_norm:e} after {iterations} iterations)")]
    NewtonNonConvergence {
        yprime: Vec<f64>,
        iterations: usize,
        grad_norm: f64,
    },
    #[error("Newton Jacobian is not positive definite at y' = {yprime:?}")]
    SingularJacobian { yprime: Vec<f64> },
    #[error("B is not positive definite relative to H' (min eigenvalue {min_eig:e})")]
    NotPd { min_eig: f64 },
    #[error("validity radius collapsed below {r_min:e}: {reason}")]
    RadiusCollapse { r_min: f64, reason: String },
}

/// Newton iteration for `∇ₓ′g(x′, y′) = 0` from `start`.
pub fn solve_phi_from(
    f: &ExprFunction,
    frame: &AdaptedFrame,
    yprime: &DVector<f64>,
    start: &DVector<f64>,
    tol: &Tolerances,
) -> Result<DVector<f64>, MorseError> {
    let k = frame.normal_dim();
    if k == 0 {
        return Ok(DVector::zeros(0));
    }
    let mut x = start.clone();
    let mut last_norm = f64::INFINITY;
    for iter in 0..tol.newton_max_iter {
        let (grad, jac) = normal_grad_hess(f, frame, &x, yprime)?;
        let gn = grad.norm();
        last_norm = gn;
        let step = match jac.cholesky() {
            Some(ch) => ch.solve(&grad),
            None => {
                if gn <= tol.tol_newton {
                    return Ok(x);
                }
                return Err(MorseError::SingularJacobian {
                    yprime: yprime.iter().copied().collect(),
                });
            }
        };
        if gn <= tol.tol_newton {
            // one polishing step, kept only if it does not hurt
            let polished = &x - &step;
            let (g2, _) = normal_grad_hess(f, frame, &polished, yprime)?;
            return Ok(if g2.norm() <= gn { polished } else { x });
        }
        x -= step;
        if !x.iter().all(|v| v.is_finite()) {
            return Err(MorseError::NewtonNonConvergence {
                yprime: yprime.iter().copied().collect(),
                iterations: iter + 1,
                grad_norm: f64::NAN,
            });
        }
    }
    Err(MorseError::NewtonNonConvergence {
        yprime: yprime.iter().copied().collect(),
        iterations: tol.newton_max_iter,
        grad_norm: last_norm,
    })
}

/// `(P₁ᵀ∇f, P₁ᵀ∇²f P₁)` at `𝒜(x′, y′)`.
fn normal_grad_hess(
    f: &ExprFunction,
    frame: &AdaptedFrame,
    xprime: &DVector<f64>,
    yprime: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>), DomainError> {
    let p = frame.to_ambient(xprime, yprime);
    let jet = f.jet2(p.as_slice())?;
    let grad = frame.p1.transpose() * jet.gradient_vector();
    let hess = linalg::symmetrize(&(frame.p1.transpose() * jet.hessian() * &frame.p1));
    Ok((grad, hess))
}

/// Quadrature of `2(1−t) P₁ᵀ∇²f(𝒜(x_t, y′))P₁`, `x_t = φ + t(x′ − φ)`.
pub fn integral_b(
    f: &ExprFunction,
    frame: &AdaptedFrame,
    xprime: &DVector<f64>,
    yprime: &DVector<f64>,
    phi: &DVector<f64>,
    rule: &QuadratureRule,
) -> Result<DMatrix<f64>, DomainError> {
    let k = frame.normal_dim();
    if k == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let dir = xprime - phi;
    integrate_matrix(
        |t| {
            let xt = phi + &dir * t;
            let (_, h) = normal_grad_hess(f, frame, &xt, yprime)?;
            Ok(h * (2.0 * (1.0 - t)))
        },
        rule,
    )
}

/// `R = L⁻ᵀ (L⁻¹BL⁻ᵀ)^{1/2} Lᵀ` where `H = LLᵀ`; satisfies `RᵀHR = B`.
pub fn factor_f(
    b: &DMatrix<f64>,
    h: &DMatrix<f64>,
    tol: &Tolerances,
) -> Result<DMatrix<f64>, MorseError> {
    let l = h
        .clone()
        .cholesky()
        .ok_or(MorseError::NotPd { min_eig: f64::NAN })?
        .l();
    factor_f_with_cholesky(b, &l, tol)
}

fn factor_f_with_cholesky(
    b: &DMatrix<f64>,
    l: &DMatrix<f64>,
    tol: &Tolerances,
) -> Result<DMatrix<f64>, MorseError> {
    let n = b.nrows();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    // M₀ = L⁻¹ B L⁻ᵀ
    let y = l
        .solve_lower_triangular(b)
        .expect("Cholesky factor is invertible");
    let m0t = l
        .solve_lower_triangular(&y.transpose())
        .expect("Cholesky factor is invertible");
    let m0 = linalg::symmetrize(&m0t);
    let (vals, _) = linalg::sym_eigen_desc(&m0);
    let norm = vals.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let floor = tol.eps_pd(norm);
    let s = linalg::sqrt_spd(&m0, floor).ok_or(MorseError::NotPd {
        min_eig: vals.last().copied().unwrap_or(f64::NAN),
    })?;
    // R = L⁻ᵀ S Lᵀ  ⇔  Lᵀ R = S Lᵀ
    let rhs = s * l.transpose();
    Ok(l
        .transpose()
        .solve_upper_triangular(&rhs)
        .expect("Cholesky factor is invertible"))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralPair {
    pub lambda: f64,
    pub u: Vec<f64>,
}

/// Terms of the Morse identity at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct MorseTerms {
    pub xprime: DVector<f64>,
    pub yprime: DVector<f64>,
    pub phi: DVector<f64>,
    pub z: DVector<f64>,
    /// `g(x′, y′) = f(x)`.
    pub value: f64,
    /// `g(φ(y′), y′)`.
    pub valley_value: f64,
    /// `½ zᵀH′z`.
    pub quadratic: f64,
}

impl MorseTerms {
    pub fn residual(&self) -> f64 {
        (self.value - self.valley_value - self.quadratic).abs()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RadiusAttempt {
    pub radius: f64,
    pub accepted: bool,
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RadiusValidation {
    pub radius: f64,
    pub attempts: Vec<RadiusAttempt>,
    pub max_residual: f64,
    pub max_abs_f: f64,
    cache: Vec<(DVector<f64>, DVector<f64>)>,
}

/// One zero's neighborhood: frame, spectral data of `H′`, frozen valley
/// cache and the validated radius.
#[derive(Debug, Clone)]
pub struct LocalDecomposition {
    f: ExprFunction,
    frame: AdaptedFrame,
    hprime: DMatrix<f64>,
    chol: DMatrix<f64>,
    spectral: Vec<SpectralPair>,
    rule: QuadratureRule,
    tol: Tolerances,
    radius: f64,
    phi_cache: Vec<(DVector<f64>, DVector<f64>)>,
    attempts: Vec<RadiusAttempt>,
    max_residual: f64,
    graph_distance: Option<f64>,
}

impl LocalDecomposition {
    pub fn frame(&self) -> &AdaptedFrame {
        &self.frame
    }

    pub fn hprime(&self) -> &DMatrix<f64> {
        &self.hprime
    }

    pub fn spectral(&self) -> &[SpectralPair] {
        &self.spectral
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn center(&self) -> &[f64] {
        self.frame.x0.as_slice()
    }

    pub fn piece_count(&self) -> usize {
        self.frame.normal_dim()
    }

    pub fn rule(&self) -> &QuadratureRule {
        &self.rule
    }

    pub fn attempts(&self) -> &[RadiusAttempt] {
        &self.attempts
    }

    pub fn max_residual(&self) -> f64 {
        self.max_residual
    }

    /// Largest distance from declared zero samples near `x₀` to the valley graph.
    pub fn graph_distance(&self) -> Option<f64> {
        self.graph_distance
    }

    pub fn cached_valley(&self) -> &[(DVector<f64>, DVector<f64>)] {
        &self.phi_cache
    }

    pub fn tolerances(&self) -> &Tolerances {
        &self.tol
    }

    /// Valley point for `y′`, warm-started from the nearest frozen cache node.
    pub fn solve_phi(&self, yprime: &DVector<f64>) -> Result<DVector<f64>, MorseError> {
        let start = nearest(&self.phi_cache, yprime)
            .map(|(_, phi)| phi.clone())
            .unwrap_or_else(|| DVector::zeros(self.frame.normal_dim()));
        solve_phi_from(&self.f, &self.frame, yprime, &start, &self.tol)
    }

    pub fn b_matrix(
        &self,
        xprime: &DVector<f64>,
        yprime: &DVector<f64>,
        phi: &DVector<f64>,
    ) -> Result<DMatrix<f64>, MorseError> {
        Ok(integral_b(&self.f, &self.frame, xprime, yprime, phi, &self.rule)?)
    }

    /// `z(x′, y′) = F(B(x′, y′))·(x′ − φ(y′))` at ambient `x`.
    pub fn z_at(&self, x: &[f64]) -> Result<(DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>), MorseError> {
        let (xp, yp) = self.frame.to_frame(&DVector::from_column_slice(x));
        let phi = self.solve_phi(&yp)?;
        let z = self.z_frame(&xp, &yp, &phi)?;
        Ok((xp, yp, phi, z))
    }

    fn z_frame(
        &self,
        xp: &DVector<f64>,
        yp: &DVector<f64>,
        phi: &DVector<f64>,
    ) -> Result<DVector<f64>, MorseError> {
        if self.frame.normal_dim() == 0 {
            return Ok(DVector::zeros(0));
        }
        let b = self.b_matrix(xp, yp, phi)?;
        let r = factor_f_with_cholesky(&b, &self.chol, &self.tol)?;
        Ok(r * (xp - phi))
    }

    pub fn morse_terms(&self, x: &[f64]) -> Result<MorseTerms, MorseError> {
        let (xprime, yprime, phi, z) = self.z_at(x)?;
        let value = self.f.eval(x)?;
        let valley = self.frame.to_ambient(&phi, &yprime);
        let valley_value = self.f.eval(valley.as_slice())?;
        let quadratic = 0.5 * (z.transpose() * &self.hprime * &z)[(0, 0)];
        Ok(MorseTerms {
            xprime,
            yprime,
            phi,
            z,
            value,
            valley_value,
            quadratic,
        })
    }

    /// The `d − d₀` local pieces `√(λᵢ/2) uᵢᵀz` at ambient `x`.
    pub fn eval_pieces(&self, x: &[f64]) -> Result<Vec<f64>, MorseError> {
        let (_, _, _, z) = self.z_at(x)?;
        Ok(self.pieces_from_z(&z))
    }

    fn pieces_from_z(&self, z: &DVector<f64>) -> Vec<f64> {
        self.spectral
            .iter()
            .map(|sp| {
                let dot: f64 = sp.u.iter().zip(z.iter()).map(|(a, b)| a * b).sum();
                (sp.lambda / 2.0).sqrt() * dot
            })
            .collect()
    }

    /// Whether `x` lies in the validated ball.
    pub fn contains(&self, x: &[f64]) -> bool {
        geometry::dist(x, self.center()) < self.radius
    }
}

fn nearest<'a>(
    cache: &'a [(DVector<f64>, DVector<f64>)],
    y: &DVector<f64>,
) -> Option<&'a (DVector<f64>, DVector<f64>)> {
    let mut best: Option<(&(DVector<f64>, DVector<f64>), f64)> = None;
    for entry in cache {
        let d = (&entry.0 - y).norm_squared();
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((entry, d));
        }
    }
    best.map(|(e, _)| e)
}

/// Build the local decomposition at `comp(t0)`, validating a radius no
/// larger than `min(r0, r_cap)`.
pub fn local_pieces(
    f: &ExprFunction,
    comp: &ZeroComponent,
    t0: &[f64],
    tol: &Tolerances,
    r_cap: f64,
) -> Result<LocalDecomposition, MorseError> {
    let x0 = comp.point_at(t0)?;
    let tangent = geometry::tangent_basis(comp, t0, tol)?;
    let frame0 = geometry::adapted_frame(&x0, &tangent);
    let report = nhc::check_nhc_at(f, comp, 0, t0, &frame0, tol)?;
    if !report.passed() {
        return Err(MorseError::Nhc(Box::new(report)));
    }

    let h = f.hessian(&x0)?;
    let restricted = linalg::symmetrize(&(frame0.p1.transpose() * &h * &frame0.p1));
    let (_, rot) = linalg::sym_eigen_desc(&restricted);
    let frame = frame0.rotate_normal(&rot);
    let hprime = linalg::symmetrize(&(frame.p1.transpose() * &h * &frame.p1));
    let (lambdas, us) = linalg::sym_eigen_desc(&hprime);
    let spectral: Vec<SpectralPair> = lambdas
        .iter()
        .enumerate()
        .map(|(i, &lambda)| SpectralPair {
            lambda,
            u: us.column(i).iter().copied().collect(),
        })
        .collect();
    let chol = if frame.normal_dim() == 0 {
        DMatrix::zeros(0, 0)
    } else {
        hprime
            .clone()
            .cholesky()
            .ok_or(MorseError::NotPd {
                min_eig: lambdas.last().copied().unwrap_or(f64::NAN),
            })?
            .l()
    };

    let mut ld = LocalDecomposition {
        f: f.clone(),
        frame,
        hprime,
        chol,
        spectral,
        rule: QuadratureRule::gauss_legendre(tol.quad_nodes),
        tol: *tol,
        radius: 0.0,
        phi_cache: Vec::new(),
        attempts: Vec::new(),
        max_residual: 0.0,
        graph_distance: None,
    };
    let validation = validate_radius(&ld, r_cap)?;
    ld.radius = validation.radius;
    ld.phi_cache = validation.cache;
    ld.attempts = validation.attempts;
    ld.max_residual = validation.max_residual;
    ld.graph_distance = graph_distance(&ld, comp)?;
    Ok(ld)
}

/// Probe grid of the cube `[−r, r]^d` clipped to the ball of radius `r`.
pub fn probe_points(d: usize, r: f64) -> Vec<Vec<f64>> {
    let m: usize = match d {
        0 => return vec![Vec::new()],
        1 => 21,
        2 => 11,
        3 => 7,
        _ => 5,
    };
    let total = m.pow(d as u32);
    let mut out = Vec::new();
    for flat in 0..total {
        let mut rem = flat;
        let mut p = vec![0.0; d];
        for axis in (0..d).rev() {
            let k = rem % m;
            rem /= m;
            p[axis] = -r + 2.0 * r * k as f64 / (m - 1) as f64;
        }
        let norm = p.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm <= r * (1.0 + 1e-12) {
            out.push(p);
        }
    }
    out
}

/// Largest radius in `{r_start, r_start/2, …} ∩ [r_min, ∞)` on whose probe
/// grid the valley Newton converges, `B` stays in the cone where the factor
/// exists, the Morse identity holds to `tol_recon` and the valley value
/// vanishes to `tol_zero`.
pub fn validate_radius(ld: &LocalDecomposition, r_cap: f64) -> Result<RadiusValidation, MorseError> {
    let tol = &ld.tol;
    let mut r = tol.r0.min(r_cap);
    let mut attempts = Vec::new();
    let mut last_reason = String::from("no radius attempted");
    while r >= tol.r_min {
        match probe_radius(ld, r) {
            Ok((cache, max_residual, max_abs_f)) => {
                attempts.push(RadiusAttempt {
                    radius: r,
                    accepted: true,
                    reason: None,
                });
                return Ok(RadiusValidation {
                    radius: r,
                    attempts,
                    max_residual,
                    max_abs_f,
                    cache,
                });
            }
            Err(reason) => {
                log::debug!("radius {r} rejected at {:?}: {reason}", ld.center());
                attempts.push(RadiusAttempt {
                    radius: r,
                    accepted: false,
                    reason: Some(reason.clone()),
                });
                last_reason = reason;
            }
        }
        r /= 2.0;
    }
    Err(MorseError::RadiusCollapse {
        r_min: tol.r_min,
        reason: format!("at x0 = {:?}: {last_reason}", ld.center()),
    })
}

#[allow(clippy::type_complexity)]
fn probe_radius(
    ld: &LocalDecomposition,
    r: f64,
) -> Result<(Vec<(DVector<f64>, DVector<f64>)>, f64, f64), String> {
    let frame = &ld.frame;
    let k = frame.normal_dim();
    let d0 = frame.tangent_dim();
    let tol = &ld.tol;
    let probes = probe_points(k + d0, r);

    // valley nodes by continuation outward from y′ = 0
    let mut ys: Vec<DVector<f64>> = Vec::new();
    for p in &probes {
        let y = DVector::from_column_slice(&p[k..]);
        if !ys.iter().any(|v| v == &y) {
            ys.push(y);
        }
    }
    ys.sort_by(|a, b| a.norm().partial_cmp(&b.norm()).unwrap_or(std::cmp::Ordering::Equal));
    let mut cache: Vec<(DVector<f64>, DVector<f64>)> = Vec::with_capacity(ys.len());
    for y in ys {
        let start = nearest(&cache, &y)
            .map(|(_, phi)| phi.clone())
            .unwrap_or_else(|| DVector::zeros(k));
        let phi = solve_phi_from(&ld.f, frame, &y, &start, tol).map_err(|e| e.to_string())?;
        let valley = frame.to_ambient(&phi, &y);
        let fv = ld.f.eval(valley.as_slice()).map_err(|e| e.to_string())?;
        if fv.abs() > tol.tol_zero {
            return Err(format!("valley value {fv:e} at y' = {:?} exceeds tol_zero", y.as_slice()));
        }
        cache.push((y, phi));
    }

    let mut max_residual: f64 = 0.0;
    let mut max_abs_f: f64 = 0.0;
    for p in &probes {
        let xp = DVector::from_column_slice(&p[..k]);
        let yp = DVector::from_column_slice(&p[k..]);
        let phi = &nearest(&cache, &yp).expect("node cached").1;
        let z = ld.z_frame(&xp, &yp, phi).map_err(|e| e.to_string())?;
        let x = frame.to_ambient(&xp, &yp);
        let value = ld.f.eval(x.as_slice()).map_err(|e| e.to_string())?;
        let valley = frame.to_ambient(phi, &yp);
        let valley_value = ld.f.eval(valley.as_slice()).map_err(|e| e.to_string())?;
        let quadratic = if k == 0 {
            0.0
        } else {
            0.5 * (z.transpose() * &ld.hprime * &z)[(0, 0)]
        };
        max_residual = max_residual.max((value - valley_value - quadratic).abs());
        max_abs_f = max_abs_f.max(value.abs());
    }
    let bound = tol.tol_recon(max_abs_f);
    if max_residual > bound {
        return Err(format!(
            "Morse identity residual {max_residual:e} exceeds {bound:e}"
        ));
    }
    Ok((cache, max_residual, max_abs_f))
}

fn graph_distance(ld: &LocalDecomposition, comp: &ZeroComponent) -> Result<Option<f64>, MorseError> {
    if comp.is_point() || ld.frame.normal_dim() == 0 {
        return Ok(None);
    }
    let mut worst: Option<f64> = None;
    for (_, x) in geometry::sample_component(comp, 256)? {
        if geometry::dist(&x, ld.center()) >= 0.5 * ld.radius {
            continue;
        }
        let (xp, yp) = ld.frame.to_frame(&DVector::from_column_slice(&x));
        let phi = ld.solve_phi(&yp)?;
        let d = (xp - phi).norm();
        worst = Some(worst.map_or(d, |w: f64| w.max(d)));
    }
    Ok(worst)
}
