//! Normal and strict Hessian conditions, decided on sampled zeros.
//!
//! At a zero `x₀` on a component of dimension `d₀` the condition holds when
//! the Hessian has rank `d − d₀` (i) or, equivalently, is positive definite
//! on the normal space (ii). Both are evaluated and their agreement recorded.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::geometry::{self, AdaptedFrame, GeometryError, ZeroComponent, ZeroSetDescription};
use crate::expr::ExprFunction;
use crate::linalg;
use crate::tolerances::Tolerances;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NhcVerdict {
    Pass,
    FailRank,
    FailNormalPd,
    FailNotCritical,
    FailNotZero,
}

impl NhcVerdict {
    pub fn as_str(self) -> &'static str {
        match self {
            NhcVerdict::Pass => "pass",
            NhcVerdict::FailRank => "fail_rank",
            NhcVerdict::FailNormalPd => "fail_normal_pd",
            NhcVerdict::FailNotCritical => "fail_not_critical",
            NhcVerdict::FailNotZero => "fail_not_zero",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NhcReport {
    pub component: usize,
    pub parameter: Vec<f64>,
    pub x0: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    /// Hessian spectrum, descending.
    pub eigenvalues: Vec<f64>,
    pub eps_pd: f64,
    pub rank_estimate: usize,
    pub d0_expected: usize,
    /// Smallest eigenvalue of `P₁ᵀ H P₁`; `None` when the normal space is trivial.
    pub normal_min_eig: Option<f64>,
    /// `max ‖H v‖ / ‖H‖` over the orthonormal tangent basis.
    pub tangent_kernel_residual: f64,
    pub gap_ambiguous: bool,
    pub rank_condition: bool,
    pub normal_pd_condition: bool,
    pub verdict: NhcVerdict,
}

impl NhcReport {
    pub fn passed(&self) -> bool {
        self.verdict == NhcVerdict::Pass
    }

    /// Whether conditions (i) and (ii) gave the same answer.
    pub fn conditions_agree(&self) -> bool {
        self.rank_condition == self.normal_pd_condition
    }
}

/// Evaluate the condition at `x₀ = comp(t)` using an adapted frame built there.
pub fn check_nhc_at(
    f: &ExprFunction,
    comp: &ZeroComponent,
    component_index: usize,
    t: &[f64],
    frame: &AdaptedFrame,
    tol: &Tolerances,
) -> Result<NhcReport, GeometryError> {
    let x0: Vec<f64> = frame.x0.iter().copied().collect();
    let d = f.dim();
    let d0 = comp.d0();
    let jet = f.jet2(&x0)?;
    let h = jet.hessian();
    let (eigenvalues, _) = linalg::sym_eigen_desc(&h);
    let norm = eigenvalues.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let eps_pd = tol.eps_pd(norm);

    let rank_estimate = eigenvalues.iter().filter(|&&v| v > eps_pd).count();
    let gap_ambiguous = if rank_estimate > 0 && rank_estimate < d {
        eigenvalues[rank_estimate - 1] - eigenvalues[rank_estimate] <= 10.0 * eps_pd
    } else {
        false
    };
    let rank_condition = rank_estimate + d0 == d && !gap_ambiguous;

    let normal_min_eig = if frame.normal_dim() == 0 {
        None
    } else {
        let restricted = frame.p1.transpose() * &h * &frame.p1;
        linalg::sym_eigen_desc(&restricted).0.last().copied()
    };
    let normal_pd_condition = normal_min_eig.is_none_or(|v| v > eps_pd);

    let tangent_kernel_residual = if frame.tangent_dim() == 0 || norm == 0.0 {
        0.0
    } else {
        let hv: DMatrix<f64> = &h * &frame.p2;
        hv.column_iter().map(|c| c.norm()).fold(0.0, f64::max) / norm
    };

    let grad_norm = jet.gradient_vector().norm();
    let verdict = if jet.value.abs() > tol.tol_zero {
        NhcVerdict::FailNotZero
    } else if grad_norm > tol.tol_grad {
        NhcVerdict::FailNotCritical
    } else if !rank_condition {
        NhcVerdict::FailRank
    } else if !normal_pd_condition {
        NhcVerdict::FailNormalPd
    } else {
        NhcVerdict::Pass
    };

    Ok(NhcReport {
        component: component_index,
        parameter: t.to_vec(),
        x0,
        value: jet.value,
        grad_norm,
        eigenvalues,
        eps_pd,
        rank_estimate,
        d0_expected: d0,
        normal_min_eig,
        tangent_kernel_residual,
        gap_ambiguous,
        rank_condition,
        normal_pd_condition,
        verdict,
    })
}

/// Build the tangent space and frame at `comp(t)` and check there.
pub fn check_nhc_sample(
    f: &ExprFunction,
    comp: &ZeroComponent,
    component_index: usize,
    t: &[f64],
    tol: &Tolerances,
) -> Result<NhcReport, GeometryError> {
    let x0 = comp.point_at(t)?;
    let tangent = geometry::tangent_basis(comp, t, tol)?;
    let frame = geometry::adapted_frame(&x0, &tangent);
    check_nhc_at(f, comp, component_index, t, &frame, tol)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GlobalNhcReport {
    pub reports: Vec<NhcReport>,
    pub pass: bool,
    /// Strict condition: every component is an isolated point and passes.
    pub shc: bool,
    /// Samples where frame or jet evaluation failed outright.
    pub errors: Vec<String>,
}

impl GlobalNhcReport {
    pub fn failures(&self) -> impl Iterator<Item = &NhcReport> {
        self.reports.iter().filter(|r| !r.passed())
    }

    /// Aligned text table, one line per sample.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:>4} {:>24} {:>6} {:>4} {:>14}  {:<18} eigenvalues",
            "comp", "parameter", "rank", "d0", "normal_min", "verdict"
        );
        for r in &self.reports {
            let param = fmt_list(&r.parameter);
            let normal = r
                .normal_min_eig
                .map_or_else(|| "-".to_string(), |v| format!("{v:.6e}"));
            let _ = writeln!(
                out,
                "{:>4} {:>24} {:>6} {:>4} {:>14}  {:<18} {}",
                r.component,
                param,
                r.rank_estimate,
                r.d0_expected,
                normal,
                r.verdict.as_str(),
                fmt_list(&r.eigenvalues)
            );
        }
        for e in &self.errors {
            let _ = writeln!(out, "error: {e}");
        }
        let _ = writeln!(
            out,
            "aggregate: {} (shc: {})",
            if self.pass { "pass" } else { "fail" },
            self.shc
        );
        out
    }

    /// CSV with columns `component,parameter,eig1..eigd,rank,normal_min_eig,verdict`.
    pub fn to_csv(&self) -> String {
        let d = self.reports.first().map_or(0, |r| r.eigenvalues.len());
        let mut out = String::from("component,parameter");
        for i in 1..=d {
            let _ = write!(out, ",eig{i}");
        }
        out.push_str(",rank,normal_min_eig,verdict\n");
        for r in &self.reports {
            let param = r
                .parameter
                .iter()
                .map(|v| format!("{v:.16e}"))
                .collect::<Vec<_>>()
                .join(";");
            let _ = write!(out, "{},{}", r.component, param);
            for v in &r.eigenvalues {
                let _ = write!(out, ",{v:.16e}");
            }
            let normal = r.normal_min_eig.map_or_else(String::new, |v| format!("{v:.16e}"));
            let _ = writeln!(out, ",{},{},{}", r.rank_estimate, normal, r.verdict.as_str());
        }
        out
    }
}

fn fmt_list(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.6}")).collect();
    format!("({})", parts.join(", "))
}

/// Check every sampled point of every component.
pub fn check_global_nhc(
    f: &ExprFunction,
    zs: &ZeroSetDescription,
    samples_per_component: usize,
    tol: &Tolerances,
) -> GlobalNhcReport {
    let mut reports = Vec::new();
    let mut errors = Vec::new();
    for (ci, comp) in zs.components.iter().enumerate() {
        let samples = match geometry::sample_component(comp, samples_per_component) {
            Ok(s) => s,
            Err(e) => {
                errors.push(format!("component {ci}: {e}"));
                continue;
            }
        };
        for (t, _) in samples {
            match check_nhc_sample(f, comp, ci, &t, tol) {
                Ok(r) => reports.push(r),
                Err(e) => errors.push(format!("component {ci} at {t:?}: {e}")),
            }
        }
    }
    let pass = errors.is_empty() && !reports.is_empty() && reports.iter().all(NhcReport::passed);
    let shc = pass && zs.is_discrete();
    GlobalNhcReport {
        reports,
        pass,
        shc,
        errors,
    }
}
