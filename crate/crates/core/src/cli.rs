//! Command-line surface: `check-nhc`, `decompose`, `verify`, `eval-grid`.
//!
//! Exit codes: 0 pass, 1 mathematical failure, 2 usage or I/O error.

use std::fmt::Write as _;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use thiserror::Error;

use crate::config::{ConfigError, Problem, ProblemConfig, ProblemKind};
use crate::gluing::{self, GlobalDecomposition};
use crate::grid::GridSpec;
use crate::manifold::{self, ManifoldDecomposition};
use crate::nhc;
use crate::report::{self, Manifest};
use crate::verify::{self, SumOfSquares, VerificationReport, DEFAULT_SCALES};

#[derive(Debug, Parser)]
#[command(name = "sosdec", version, about = "Explicit sum-of-squares decompositions of non-negative functions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check the normal Hessian condition at sampled zeros.
    CheckNhc {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Also write nhc.csv into this directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build the decomposition; write manifest.json, nhc.csv and piece CSVs.
    Decompose {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Grid for the piece CSVs (defaults to the config grid).
        #[arg(long)]
        grid: Option<GridSpec>,
    },
    /// Rebuild, compare with a manifest and run residual, smoothness and count checks.
    Verify {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        grid: Option<GridSpec>,
        /// Also write verify.txt and verify.csv into this directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate every piece on a grid and write piece CSVs.
    EvalGrid {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        grid: Option<GridSpec>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("manifest {path} does not match the config: field `{field}` differs")]
    Mismatch { path: String, field: String },
    #[error("{0}")]
    Math(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Math(_) => 1,
            _ => 2,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Parse arguments, run, and return the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let stdout = io::stdout();
    let mut lock = stdout.lock();
    match run(cli.command, &mut lock) {
        Ok(pass) => i32::from(!pass),
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Run a command; `Ok(false)` means the mathematical checks failed.
pub fn run(command: Command, out: &mut dyn Write) -> Result<bool, CliError> {
    match command {
        Command::CheckNhc { config, seed, out: dir } => cmd_check_nhc(&config, seed, dir.as_deref(), out),
        Command::Decompose {
            config,
            out: dir,
            seed,
            grid,
        } => cmd_decompose(&config, &dir, seed, grid.as_ref(), out),
        Command::Verify {
            config,
            manifest,
            seed,
            grid,
            out: dir,
        } => cmd_verify(&config, &manifest, seed, grid.as_ref(), dir.as_deref(), out),
        Command::EvalGrid {
            config,
            out: dir,
            grid,
            seed,
        } => cmd_eval_grid(&config, &dir, grid.as_ref(), seed, out),
    }
}

pub fn load_problem(path: &Path, seed: Option<u64>) -> Result<Problem, CliError> {
    let cfg = ProblemConfig::load(path)?;
    let mut problem = cfg.build()?;
    if let Some(s) = seed {
        problem.tol.seed = s;
    }
    Ok(problem)
}

fn emit(out: &mut dyn Write, text: &str) -> Result<(), CliError> {
    out.write_all(text.as_bytes()).map_err(|source| CliError::Io {
        path: "<stdout>".into(),
        source,
    })
}

/// NHC stage: text report, CSV, and overall verdict.
pub fn nhc_stage(problem: &Problem) -> Result<(String, String, bool), CliError> {
    match &problem.kind {
        ProblemKind::Euclidean(zs) => {
            let r = nhc::check_global_nhc(&problem.f, zs, problem.nhc_samples, &problem.tol);
            let mut text = r.to_table();
            for e in &r.errors {
                let _ = writeln!(text, "error: {e}");
            }
            let _ = writeln!(
                text,
                "NHC {} ({} samples{})",
                if r.pass { "pass" } else { "FAIL" },
                r.reports.len(),
                if r.shc { ", strict condition holds" } else { "" }
            );
            Ok((text, r.to_csv(), r.pass))
        }
        ProblemKind::Manifold { atlas, zero_sets } => {
            let reports = manifold::check_manifold_nhc(atlas, &problem.f, zero_sets, problem.nhc_samples, &problem.tol);
            let agreement = manifold::overlap_hessian_agreement(atlas, &problem.f, zero_sets, problem.nhc_samples, 1e-8)
                .map_err(|e| CliError::Math(e.to_string()))?;
            let mut text = String::new();
            let mut csv = String::from("chart,");
            let mut pass = true;
            for (c, r) in reports.iter().enumerate() {
                let name = atlas.charts[c].name;
                let _ = writeln!(text, "chart {name}");
                text.push_str(&r.to_table());
                for e in &r.errors {
                    let _ = writeln!(text, "error: {e}");
                }
                let body = r.to_csv();
                let mut lines = body.lines();
                if c == 0 {
                    csv.push_str(lines.next().unwrap_or(""));
                    csv.push('\n');
                } else {
                    lines.next();
                }
                for l in lines {
                    let _ = writeln!(csv, "{name},{l}");
                }
                pass &= r.pass;
            }
            let worst = agreement.iter().map(|a| a.max_abs_diff).fold(0.0, f64::max);
            let agree = agreement.iter().all(|a| a.pass());
            let _ = writeln!(
                text,
                "overlap Hessian agreement: {} comparisons, max difference {worst:.3e}: {}",
                agreement.len(),
                if agree { "pass" } else { "FAIL" }
            );
            pass &= agree;
            let _ = writeln!(text, "NHC {}", if pass { "pass" } else { "FAIL" });
            Ok((text, csv, pass))
        }
    }
}

/// A finished decomposition of either kind.
pub enum Built {
    Euclidean(Box<GlobalDecomposition>),
    Manifold(Box<ManifoldDecomposition>),
}

impl Built {
    pub fn sos(&self) -> &dyn SumOfSquares {
        match self {
            Built::Euclidean(gd) => gd.as_ref(),
            Built::Manifold(md) => md.as_ref(),
        }
    }

    pub fn manifest(&self, problem: &Problem) -> Manifest {
        match self {
            Built::Euclidean(gd) => report::euclidean_manifest(problem, gd),
            Built::Manifold(md) => report::manifold_manifest(problem, md),
        }
    }

    /// Grid points, or as many atlas samples as the grid has points.
    pub fn eval_points(&self, grid: &GridSpec) -> Vec<Vec<f64>> {
        match self {
            Built::Euclidean(_) => grid.points(),
            Built::Manifold(md) => md.atlas().samples(grid.len()),
        }
    }
}

pub fn build(problem: &Problem) -> Result<Built, CliError> {
    match &problem.kind {
        ProblemKind::Euclidean(zs) => gluing::decompose(&problem.f, zs, &problem.grid, &problem.tol)
            .map(|gd| Built::Euclidean(Box::new(gd)))
            .map_err(|e| CliError::Math(e.to_string())),
        ProblemKind::Manifold { atlas, zero_sets } => ManifoldDecomposition::build(
            atlas.clone(),
            &problem.f,
            zero_sets.clone(),
            &problem.grid,
            &problem.tol,
        )
        .map(|md| Built::Manifold(Box::new(md)))
        .map_err(|e| CliError::Math(e.to_string())),
    }
}

fn write_pieces(built: &Built, grid: &GridSpec, dir: &Path) -> Result<usize, CliError> {
    let points = built.eval_points(grid);
    let values = verify::values_at(built.sos(), &points).map_err(|e| CliError::Math(e.to_string()))?;
    let pieces: Vec<Vec<f64>> = values.into_iter().map(|(_, p)| p).collect();
    let n = built.sos().piece_count();
    report::write_piece_csvs(dir, &points, &pieces, n).map_err(io_err(dir))?;
    Ok(points.len())
}

pub fn cmd_check_nhc(
    config: &Path,
    seed: Option<u64>,
    dir: Option<&Path>,
    out: &mut dyn Write,
) -> Result<bool, CliError> {
    let problem = load_problem(config, seed)?;
    let (text, csv, pass) = nhc_stage(&problem)?;
    emit(out, &text)?;
    if let Some(d) = dir {
        let p = d.join("nhc.csv");
        report::write_text(&p, &csv).map_err(io_err(&p))?;
    }
    Ok(pass)
}

pub fn cmd_decompose(
    config: &Path,
    dir: &Path,
    seed: Option<u64>,
    grid: Option<&GridSpec>,
    out: &mut dyn Write,
) -> Result<bool, CliError> {
    let problem = load_problem(config, seed)?;
    let (text, csv, pass) = nhc_stage(&problem)?;
    let nhc_path = dir.join("nhc.csv");
    report::write_text(&nhc_path, &csv).map_err(io_err(&nhc_path))?;
    if !pass {
        emit(out, &text)?;
        return Err(CliError::Math("normal Hessian condition fails; no decomposition built".into()));
    }
    let built = build(&problem)?;
    let manifest = built.manifest(&problem);
    let mpath = dir.join("manifest.json");
    report::write_text(&mpath, &manifest.to_json()).map_err(io_err(&mpath))?;
    let points = write_pieces(&built, grid.unwrap_or(&problem.grid), dir)?;
    let mut summary = String::new();
    let _ = writeln!(
        summary,
        "{}: {} pieces ({}), manifest {}",
        problem.name,
        manifest.piece_count,
        manifest.mode,
        mpath.display()
    );
    for c in &manifest.charts {
        let label = c.chart.as_deref().map(|n| format!("chart {n}: ")).unwrap_or_default();
        let covers: Vec<String> = c.components.iter().map(|k| k.cover.len().to_string()).collect();
        let _ = writeln!(
            summary,
            "  {label}{} aligned + 1 star, cover sizes [{}], check residual {:.3e}",
            c.aligned_count,
            covers.join(", "),
            c.check_residual
        );
    }
    let _ = writeln!(summary, "  piece CSVs on {points} points in {}", dir.join("pieces").display());
    emit(out, &summary)?;
    Ok(true)
}

pub fn cmd_verify(
    config: &Path,
    manifest_path: &Path,
    seed: Option<u64>,
    grid: Option<&GridSpec>,
    dir: Option<&Path>,
    out: &mut dyn Write,
) -> Result<bool, CliError> {
    let problem = load_problem(config, seed)?;
    let text = std::fs::read_to_string(manifest_path).map_err(io_err(manifest_path))?;
    let stored = Manifest::from_json(&text).map_err(|e| CliError::Io {
        path: manifest_path.display().to_string(),
        source: io::Error::new(io::ErrorKind::InvalidData, e),
    })?;
    let mismatch = |field: &str| CliError::Mismatch {
        path: manifest_path.display().to_string(),
        field: field.to_string(),
    };
    if stored.function != problem.f.to_string() {
        return Err(mismatch("function"));
    }
    let built = build(&problem)?;
    let rebuilt = built.manifest(&problem);
    if let Some(field) = rebuilt.first_difference(&stored) {
        return Err(mismatch(field));
    }

    let grid = grid.unwrap_or(&problem.grid);
    let tol = &problem.tol;
    let mut reports: Vec<(String, VerificationReport)> = Vec::new();
    let mut extra = String::new();
    let mut pass = true;
    let to_math = |e: verify::VerifyError| CliError::Math(e.to_string());
    match &built {
        Built::Euclidean(gd) => {
            let residual = verify::residuals(gd.as_ref(), grid, tol.tol_global_rel).map_err(to_math)?;
            let smooth = verify::smoothness_probe(gd, &DEFAULT_SCALES, tol.seed).map_err(to_math)?;
            let count = verify::count_check(gd.piece_count(), gd.shc(), gd.dim());
            reports.push(("euclidean".into(), VerificationReport::new(residual, smooth, count)));
        }
        Built::Manifold(md) => {
            let points = md.atlas().samples(grid.len());
            let label = format!("{} samples on {}", points.len(), md.atlas().name);
            let residual = verify::residuals_at(md.as_ref(), &points, label, tol.tol_global_rel).map_err(to_math)?;
            let ok = residual.pass;
            let _ = writeln!(
                extra,
                "manifold residual on {}: max {:.3e} (tolerance {:.3e}): {}",
                residual.grid,
                residual.max_abs_residual,
                residual.tolerance,
                if ok { "pass" } else { "FAIL" }
            );
            pass &= ok;
            for cd in md.charts() {
                let name = md.atlas().charts[cd.chart].name;
                let r = verify::residuals(&cd.global, grid, tol.tol_global_rel).map_err(to_math)?;
                let smooth = verify::smoothness_probe(&cd.global, &DEFAULT_SCALES, tol.seed).map_err(to_math)?;
                let count = verify::count_check(cd.global.piece_count(), cd.global.shc(), cd.global.dim());
                reports.push((format!("chart {name}"), VerificationReport::new(r, smooth, count)));
            }
            if let ProblemKind::Manifold { atlas, zero_sets } = &problem.kind {
                let agreement =
                    manifold::overlap_hessian_agreement(atlas, &problem.f, zero_sets, problem.nhc_samples, 1e-8)
                        .map_err(|e| CliError::Math(e.to_string()))?;
                let ok = agreement.iter().all(|a| a.pass());
                let _ = writeln!(
                    extra,
                    "overlap Hessian agreement ({} comparisons): {}",
                    agreement.len(),
                    if ok { "pass" } else { "FAIL" }
                );
                pass &= ok;
            }
        }
    }

    let mut text_out = String::new();
    let mut csv = String::new();
    for (i, (label, r)) in reports.iter().enumerate() {
        let _ = writeln!(text_out, "== {label}");
        text_out.push_str(&r.to_text());
        let body = r.to_csv();
        let mut lines = body.lines();
        let head = lines.next().unwrap_or("");
        if i == 0 {
            let _ = writeln!(csv, "scope,{head}");
        }
        for l in lines {
            let _ = writeln!(csv, "{label},{l}");
        }
        pass &= r.pass;
    }
    text_out.push_str(&extra);
    let _ = writeln!(text_out, "verify: {}", if pass { "pass" } else { "FAIL" });
    emit(out, &text_out)?;
    if let Some(d) = dir {
        for (name, body) in [("verify.txt", &text_out), ("verify.csv", &csv)] {
            let p = d.join(name);
            report::write_text(&p, body).map_err(io_err(&p))?;
        }
    }
    Ok(pass)
}

pub fn cmd_eval_grid(
    config: &Path,
    dir: &Path,
    grid: Option<&GridSpec>,
    seed: Option<u64>,
    out: &mut dyn Write,
) -> Result<bool, CliError> {
    let problem = load_problem(config, seed)?;
    let built = build(&problem)?;
    let grid = grid.unwrap_or(&problem.grid);
    let n = write_pieces(&built, grid, dir)?;
    emit(
        out,
        &format!(
            "{} pieces on {n} points written to {}\n",
            built.sos().piece_count(),
            dir.join("pieces").display()
        ),
    )?;
    Ok(true)
}
