//! Benchmark response surfaces used as in-control ground truth.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::domain::{Domain, Point};
use crate::error::{invalid, Error, Result};

fn expect_dim(x: &Point, d: usize) -> Result<&[f64]> {
    if x.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: x.dim(),
        });
    }
    Ok(x.coords())
}

pub fn branin(x: &Point) -> Result<f64> {
    let v = expect_dim(x, 2)?;
    let (x1, x2) = (v[0], v[1]);
    let b = 5.1 / (4.0 * PI * PI);
    let c = 5.0 / PI;
    let s = 1.0 / (8.0 * PI);
    Ok((x2 - b * x1 * x1 + c * x1 - 6.0).powi(2) + 10.0 * (1.0 - s) * x1.cos() + 10.0)
}

pub fn ishigami(x: &Point) -> Result<f64> {
    let v = expect_dim(x, 3)?;
    let s1 = v[0].sin();
    Ok(s1 + 7.0 * v[1].sin().powi(2) + 0.1 * v[2].powi(4) * s1)
}

pub fn friedman(x: &Point) -> Result<f64> {
    let v = expect_dim(x, 5)?;
    Ok(10.0 * (PI * v[0] * v[1]).sin() + 20.0 * (v[2] - 0.5).powi(2) + 10.0 * v[3] + 5.0 * v[4])
}

pub fn linkletter(x: &Point) -> Result<f64> {
    let v = expect_dim(x, 8)?;
    Ok(v.iter()
        .enumerate()
        .map(|(n, xn)| 0.2 / f64::powi(2.0, n as i32) * xn)
        .sum())
}

/// Gaussian observation noise attached to a response surface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchmarkFunction {
    Branin,
    Ishigami,
    Friedman,
    Linkletter,
}

impl BenchmarkFunction {
    pub const ALL: [BenchmarkFunction; 4] = [
        BenchmarkFunction::Branin,
        BenchmarkFunction::Ishigami,
        BenchmarkFunction::Friedman,
        BenchmarkFunction::Linkletter,
    ];

    pub fn dim(self) -> usize {
        match self {
            BenchmarkFunction::Branin => 2,
            BenchmarkFunction::Ishigami => 3,
            BenchmarkFunction::Friedman => 5,
            BenchmarkFunction::Linkletter => 8,
        }
    }

    pub fn eval(self, x: &Point) -> Result<f64> {
        match self {
            BenchmarkFunction::Branin => branin(x),
            BenchmarkFunction::Ishigami => ishigami(x),
            BenchmarkFunction::Friedman => friedman(x),
            BenchmarkFunction::Linkletter => linkletter(x),
        }
    }

    /// Published noise standard deviation.
    pub fn noise(self) -> NoiseSpec {
        let sigma = match self {
            BenchmarkFunction::Branin => 11.32,
            BenchmarkFunction::Ishigami => 0.187,
            BenchmarkFunction::Friedman => 0.05,
            BenchmarkFunction::Linkletter => 1.0,
        };
        NoiseSpec { sigma }
    }

    /// Conventional input domain for the function.
    pub fn domain(self) -> Domain {
        match self {
            BenchmarkFunction::Branin => Domain::new(vec![-5.0, 0.0], vec![10.0, 15.0]).unwrap(),
            BenchmarkFunction::Ishigami => Domain::new(vec![-PI; 3], vec![PI; 3]).unwrap(),
            BenchmarkFunction::Friedman => Domain::unit(5),
            BenchmarkFunction::Linkletter => Domain::unit(8),
        }
    }

    /// Exploration bins per axis used in the simulation study.
    pub fn default_bins(self) -> usize {
        match self {
            BenchmarkFunction::Branin => 20,
            BenchmarkFunction::Ishigami => 10,
            BenchmarkFunction::Friedman => 6,
            BenchmarkFunction::Linkletter => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BenchmarkFunction::Branin => "branin",
            BenchmarkFunction::Ishigami => "ishigami",
            BenchmarkFunction::Friedman => "friedman",
            BenchmarkFunction::Linkletter => "linkletter",
        }
    }
}

impl fmt::Display for BenchmarkFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BenchmarkFunction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "branin" => Ok(BenchmarkFunction::Branin),
            "ishigami" => Ok(BenchmarkFunction::Ishigami),
            "friedman" => Ok(BenchmarkFunction::Friedman),
            "linkletter" => Ok(BenchmarkFunction::Linkletter),
            other => Err(invalid(format!("unknown benchmark function '{other}'"))),
        }
    }
}
