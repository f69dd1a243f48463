//! Manifest JSON and CSV exports.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::Problem;
use crate::gluing::{GlobalDecomposition, PieceSupport};
use crate::manifold::ManifoldDecomposition;
use crate::tolerances::Tolerances;

pub const MANIFEST_FORMAT: &str = "sosdec-manifest/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub name: String,
    pub function: String,
    pub dim: usize,
    pub mode: String,
    pub seed: u64,
    pub tolerances: Tolerances,
    pub grid: String,
    pub piece_count: usize,
    pub charts: Vec<ChartManifest>,
}

/// One Euclidean decomposition; in manifold mode one per chart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChartManifest {
    pub chart: Option<String>,
    /// Index of this chart's first piece in the full piece list.
    pub piece_offset: usize,
    pub function: String,
    pub piece_count: usize,
    pub aligned_count: usize,
    pub shc: bool,
    pub theta_star: Option<f64>,
    pub max_overlap: usize,
    pub locality_bound: usize,
    pub check_residual: f64,
    pub components: Vec<ComponentManifest>,
    pub pieces: Vec<PieceManifest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentManifest {
    pub index: usize,
    pub d0: usize,
    pub piece_count: usize,
    pub max_residual: f64,
    pub cover: Vec<CoverEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoverEntry {
    pub param: Vec<f64>,
    pub center: Vec<f64>,
    pub radius: f64,
    pub r_plateau: f64,
    pub r_support: f64,
    pub eigenvalues: Vec<f64>,
    pub radius_attempts: usize,
    pub morse_residual: f64,
    pub graph_distance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PieceManifest {
    pub index: usize,
    pub support: SupportManifest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SupportManifest {
    Balls { balls: Vec<BallManifest> },
    Superlevel { theta: Option<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BallManifest {
    pub component: usize,
    pub center: Vec<f64>,
    pub radius: f64,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

pub fn chart_manifest(gd: &GlobalDecomposition, chart: Option<String>, piece_offset: usize) -> ChartManifest {
    let components = gd
        .families()
        .iter()
        .map(|fam| ComponentManifest {
            index: fam.component(),
            d0: fam.d0(),
            piece_count: fam.piece_count(),
            max_residual: fam.max_residual(),
            cover: fam
                .locals()
                .iter()
                .zip(fam.bumps())
                .zip(fam.params())
                .map(|((ld, b), t)| CoverEntry {
                    param: t.clone(),
                    center: ld.center().to_vec(),
                    radius: ld.radius(),
                    r_plateau: b.r_plateau,
                    r_support: b.r_support,
                    eigenvalues: ld.spectral().iter().map(|s| s.lambda).collect(),
                    radius_attempts: ld.attempts().len(),
                    morse_residual: ld.max_residual(),
                    graph_distance: ld.graph_distance(),
                })
                .collect(),
        })
        .collect();
    let pieces = gd
        .supports()
        .iter()
        .enumerate()
        .map(|(index, s)| PieceManifest {
            index: piece_offset + index,
            support: match s {
                PieceSupport::Balls { balls } => SupportManifest::Balls {
                    balls: balls
                        .iter()
                        .map(|b| BallManifest {
                            component: b.component,
                            center: b.center.clone(),
                            radius: b.radius,
                        })
                        .collect(),
                },
                PieceSupport::Superlevel { theta } => SupportManifest::Superlevel { theta: finite(*theta) },
            },
        })
        .collect();
    ChartManifest {
        chart,
        piece_offset,
        function: gd.function().to_string(),
        piece_count: gd.piece_count(),
        aligned_count: gd.aligned_count(),
        shc: gd.shc(),
        theta_star: finite(gd.theta_star()),
        max_overlap: gd.max_overlap(),
        locality_bound: gd.locality_bound(),
        check_residual: gd.check_residual(),
        components,
        pieces,
    }
}

fn header(problem: &Problem, mode: String, piece_count: usize, charts: Vec<ChartManifest>) -> Manifest {
    Manifest {
        format: MANIFEST_FORMAT.to_string(),
        name: problem.name.clone(),
        function: problem.f.to_string(),
        dim: problem.f.dim(),
        mode,
        seed: problem.tol.seed,
        tolerances: problem.tol,
        grid: problem.grid.to_string(),
        piece_count,
        charts,
    }
}

pub fn euclidean_manifest(problem: &Problem, gd: &GlobalDecomposition) -> Manifest {
    header(
        problem,
        "euclidean".to_string(),
        gd.piece_count(),
        vec![chart_manifest(gd, None, 0)],
    )
}

pub fn manifold_manifest(problem: &Problem, md: &ManifoldDecomposition) -> Manifest {
    let charts = md
        .charts()
        .iter()
        .map(|cd| {
            chart_manifest(
                &cd.global,
                Some(md.atlas().charts[cd.chart].name.to_string()),
                md.offset(cd.chart),
            )
        })
        .collect();
    header(
        problem,
        format!("manifold:{}", md.atlas().name),
        md.piece_count(),
        charts,
    )
}

impl Manifest {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// First differing top-level field against `other`, if any.
    pub fn first_difference(&self, other: &Manifest) -> Option<&'static str> {
        let checks: [(&'static str, bool); 10] = [
            ("format", self.format == other.format),
            ("function", self.function == other.function),
            ("dim", self.dim == other.dim),
            ("mode", self.mode == other.mode),
            ("seed", self.seed == other.seed),
            ("tolerances", self.tolerances == other.tolerances),
            ("name", self.name == other.name),
            ("grid", self.grid == other.grid),
            ("piece_count", self.piece_count == other.piece_count),
            ("charts", self.charts == other.charts),
        ];
        checks.iter().find(|(_, same)| !same).map(|(name, _)| *name)
    }
}

/// Header `x1,…,x_d,piece,value`.
fn csv_header(dim: usize) -> String {
    let mut h: Vec<String> = (1..=dim).map(|i| format!("x{i}")).collect();
    h.push("piece".into());
    h.push("value".into());
    h.join(",")
}

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Write `pieces/piece_NNN.csv` under `dir`, one file per piece.
pub fn write_piece_csvs(
    dir: &Path,
    points: &[Vec<f64>],
    values: &[Vec<f64>],
    piece_count: usize,
) -> io::Result<()> {
    let sub = dir.join("pieces");
    fs::create_dir_all(&sub)?;
    let dim = points.first().map_or(0, Vec::len);
    for k in 0..piece_count {
        let mut w = BufWriter::new(File::create(sub.join(format!("piece_{k:03}.csv")))?);
        writeln!(w, "{}", csv_header(dim))?;
        for (x, v) in points.iter().zip(values) {
            for c in x {
                write!(w, "{},", fmt_f64(*c))?;
            }
            writeln!(w, "{k},{}", fmt_f64(v[k]))?;
        }
        w.flush()?;
    }
    Ok(())
}

pub fn write_text(path: &Path, text: &str) -> io::Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(path, text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let pts = vec![vec![0.0, 1.5], vec![-1.0, 0.1]];
        let vals = vec![vec![1.0, 0.0], vec![1.0 / 3.0, -2.0]];
        write_piece_csvs(dir.path(), &pts, &vals, 2).unwrap();
        let text = fs::read_to_string(dir.path().join("pieces/piece_001.csv")).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "x1,x2,piece,value");
        assert_eq!(lines[1], "0.0000000000000000e0,1.5000000000000000e0,1,0.0000000000000000e0");
        assert_eq!(lines[2].split(',').count(), 4);
        let third: f64 = fs::read_to_string(dir.path().join("pieces/piece_000.csv"))
            .unwrap()
            .lines()
            .nth(2)
            .unwrap()
            .rsplit(',')
            .next()
            .unwrap()
            .parse()
            .unwrap();
        assert_eq!(third, 1.0 / 3.0);
    }
}
