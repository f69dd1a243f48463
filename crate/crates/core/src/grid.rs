//! Axis-aligned evaluation grids, written `x1:lo:hi:n,x2:lo:hi:n,...`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl Axis {
    pub fn value(&self, k: usize) -> f64 {
        if self.n == 1 {
            self.lo
        } else {
            self.lo + (self.hi - self.lo) * k as f64 / (self.n - 1) as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub axes: Vec<Axis>,
}

impl GridSpec {
    pub fn new(axes: Vec<Axis>) -> Self {
        GridSpec { axes }
    }

    /// Same box and resolution `n` along every axis.
    pub fn uniform(lo: f64, hi: f64, n: usize, dim: usize) -> Self {
        GridSpec {
            axes: vec![Axis { lo, hi, n }; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.n).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Point with flat index `idx`; the first axis varies slowest.
    pub fn point(&self, idx: usize) -> Vec<f64> {
        let mut rem = idx;
        let mut p = vec![0.0; self.dim()];
        for (axis, a) in self.axes.iter().enumerate().rev() {
            p[axis] = a.value(rem % a.n);
            rem /= a.n;
        }
        p
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.point(i)).collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && self
                .axes
                .iter()
                .zip(x)
                .all(|(a, v)| *v >= a.lo.min(a.hi) && *v <= a.hi.max(a.lo))
    }

    /// Same box with at most `max_per_axis` points along each axis.
    pub fn coarsened(&self, max_per_axis: usize) -> GridSpec {
        GridSpec {
            axes: self
                .axes
                .iter()
                .map(|a| Axis {
                    n: a.n.min(max_per_axis),
                    ..*a
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid grid spec `{spec}`: {reason}")]
pub struct GridParseError {
    pub spec: String,
    pub reason: String,
}

impl FromStr for GridSpec {
    type Err = GridParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = |reason: String| GridParseError {
            spec: s.to_string(),
            reason,
        };
        let mut axes = Vec::new();
        for (i, part) in s.split(',').enumerate() {
            let fields: Vec<&str> = part.trim().split(':').collect();
            if fields.len() != 4 {
                return Err(err(format!("axis `{part}` must be name:lo:hi:n")));
            }
            let expected = format!("x{}", i + 1);
            if fields[0].trim() != expected {
                return Err(err(format!("axis {} must be named `{expected}`", i + 1)));
            }
            let lo: f64 = fields[1]
                .trim()
                .parse()
                .map_err(|_| err(format!("bad lower bound `{}`", fields[1])))?;
            let hi: f64 = fields[2]
                .trim()
                .parse()
                .map_err(|_| err(format!("bad upper bound `{}`", fields[2])))?;
            let n: usize = fields[3]
                .trim()
                .parse()
                .map_err(|_| err(format!("bad count `{}`", fields[3])))?;
            if n == 0 || !lo.is_finite() || !hi.is_finite() || lo > hi {
                return Err(err(format!("axis `{part}` needs lo ≤ hi and n ≥ 1")));
            }
            axes.push(Axis { lo, hi, n });
        }
        Ok(GridSpec { axes })
    }
}

impl fmt::Display for GridSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, a) in self.axes.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "x{}:{:?}:{:?}:{}", i + 1, a.lo, a.hi, a.n)?;
        }
        Ok(())
    }
}

impl Serialize for GridSpec {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for GridSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
