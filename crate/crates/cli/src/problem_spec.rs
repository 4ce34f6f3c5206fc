//! Problem specifications of the form `kind:key=value,key=value`.
//!
//! - `quadratic:d=5,kappa=100[,rot=42]`: Hessian spectrum log-spaced in
//!   `[1, kappa]`, rotated by a seeded orthogonal matrix (`rot=none` keeps
//!   the axes); minimizer at the origin with `f* = 0`.
//! - `logreg:path=data.csv[,reg=0.1]` or `logreg:n=200,d=5[,seed=0,reg=0.1]`:
//!   regularized logistic regression on a CSV dataset or synthetic data.
//! - `csv:path=data.csv[,reg=0.1]`: alias for `logreg:path=…`.
//! - `logsumexp:n=20,d=5[,seed=0,temp=1,reg=0.1]`.

use std::collections::BTreeMap;
use std::path::PathBuf;

use mines::problems::{load_csv_dataset, log_spaced_spectrum, make_logreg, make_logsumexp, make_quadratic};
use mines::{Problem, QuadraticSpec, RngStream};
use nalgebra::DMatrix;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq)]
pub enum ProblemSpec {
    Quadratic { d: usize, kappa: f64, rotation: Option<u64> },
    LogregFile { path: PathBuf, reg: f64 },
    LogregSynthetic { n: usize, d: usize, seed: u64, reg: f64 },
    Logsumexp { n: usize, d: usize, seed: u64, temp: f64, reg: f64 },
}

struct Params<'a> {
    spec: &'a str,
    map: BTreeMap<&'a str, &'a str>,
}

impl<'a> Params<'a> {
    fn parse(spec: &'a str, body: &'a str, allowed: &[&str]) -> CliResult<Self> {
        let mut map = BTreeMap::new();
        for item in body.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (key, value) = item
                .split_once('=')
                .ok_or_else(|| CliError::config(format!("problem: expected key=value, got `{item}` in `{spec}`")))?;
            let key = key.trim();
            if !allowed.contains(&key) {
                return Err(CliError::config(format!(
                    "problem: unknown parameter `{key}` in `{spec}` (allowed: {})",
                    allowed.join(", ")
                )));
            }
            if map.insert(key, value.trim()).is_some() {
                return Err(CliError::config(format!("problem: duplicate parameter `{key}`")));
            }
        }
        Ok(Self { spec, map })
    }

    fn get<T: std::str::FromStr>(&self, key: &str, default: Option<T>) -> CliResult<T> {
        match self.map.get(key) {
            Some(raw) => raw
                .parse()
                .map_err(|_| CliError::config(format!("problem: bad value `{raw}` for `{key}` in `{}`", self.spec))),
            None => default.ok_or_else(|| CliError::config(format!("problem: missing `{key}` in `{}`", self.spec))),
        }
    }

    fn has(&self, key: &str) -> bool {
        self.map.contains_key(key)
    }
}

impl std::str::FromStr for ProblemSpec {
    type Err = CliError;

    fn from_str(spec: &str) -> CliResult<Self> {
        let (kind, body) = spec.split_once(':').unwrap_or((spec, ""));
        let parsed = match kind.trim() {
            "quadratic" => {
                let p = Params::parse(spec, body, &["d", "kappa", "rot"])?;
                let rotation = match p.map.get("rot") {
                    Some(&"none") => None,
                    _ => Some(p.get("rot", Some(0))?),
                };
                Self::Quadratic {
                    d: p.get("d", None)?,
                    kappa: p.get("kappa", Some(10.0))?,
                    rotation,
                }
            }
            "logreg" | "csv" => {
                let p = Params::parse(spec, body, &["path", "n", "d", "seed", "reg"])?;
                let reg = p.get("reg", Some(0.1))?;
                if p.has("path") || kind == "csv" {
                    Self::LogregFile { path: p.get("path", None)?, reg }
                } else {
                    Self::LogregSynthetic {
                        n: p.get("n", Some(200))?,
                        d: p.get("d", None)?,
                        seed: p.get("seed", Some(0))?,
                        reg,
                    }
                }
            }
            "logsumexp" => {
                let p = Params::parse(spec, body, &["n", "d", "seed", "temp", "reg"])?;
                Self::Logsumexp {
                    n: p.get("n", Some(20))?,
                    d: p.get("d", None)?,
                    seed: p.get("seed", Some(0))?,
                    temp: p.get("temp", Some(1.0))?,
                    reg: p.get("reg", Some(0.1))?,
                }
            }
            other => {
                return Err(CliError::config(format!(
                    "problem: unknown kind `{other}` (expected quadratic, logreg, csv or logsumexp)"
                )))
            }
        };
        match parsed {
            Self::Quadratic { d: 0, .. }
            | Self::LogregSynthetic { d: 0, .. }
            | Self::Logsumexp { d: 0, .. } => Err(CliError::config("problem: d must be at least 1")),
            Self::Quadratic { kappa, .. } if !(kappa >= 1.0) => {
                Err(CliError::config("problem: kappa must be at least 1"))
            }
            p => Ok(p),
        }
    }
}

fn gaussian_matrix(rows: usize, cols: usize, rng: &mut RngStream) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.standard_normal())
}

impl ProblemSpec {
    pub fn build(&self) -> CliResult<Problem<f64>> {
        let problem = match self {
            Self::Quadratic { d, kappa, rotation } => {
                make_quadratic(&QuadraticSpec::new(log_spaced_spectrum(1.0, *kappa, *d), *rotation))?
            }
            Self::LogregFile { path, reg } => {
                let (x, y) = load_csv_dataset::<f64>(path)?;
                make_logreg(&x, &y, *reg)?
            }
            Self::LogregSynthetic { n, d, seed, reg } => {
                let mut rng = RngStream::new(*seed, 0);
                let x = gaussian_matrix(*n, *d, &mut rng);
                let w: nalgebra::DVector<f64> = rng.standard_normal_vector(*d);
                let y: Vec<f64> = (0..*n)
                    .map(|i| {
                        let margin = x.row(i).transpose().dot(&w) + 0.5 * rng.standard_normal();
                        if margin >= 0.0 { 1.0 } else { -1.0 }
                    })
                    .collect();
                make_logreg(&x, &y, *reg)?
            }
            Self::Logsumexp { n, d, seed, temp, reg } => {
                let mut rng = RngStream::new(*seed, 0);
                make_logsumexp(&gaussian_matrix(*n, *d, &mut rng), *temp, *reg)?
            }
        };
        Ok(problem)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_quadratic() {
        let p: ProblemSpec = "quadratic:d=5,kappa=100".parse().unwrap();
        assert_eq!(p, ProblemSpec::Quadratic { d: 5, kappa: 100.0, rotation: Some(0) });
        let p: ProblemSpec = "quadratic:d=2,rot=none".parse().unwrap();
        assert_eq!(p, ProblemSpec::Quadratic { d: 2, kappa: 10.0, rotation: None });
        let problem = "quadratic:d=3,kappa=50,rot=4".parse::<ProblemSpec>().unwrap().build().unwrap();
        let h = problem.quadratic_hessian().unwrap();
        assert!((h.max_eigenvalue() - 50.0).abs() < 1e-9);
        assert!((h.min_eigenvalue() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_specs() {
        for bad in ["cubic:d=3", "quadratic:kappa=3", "quadratic:d=3,foo=1", "quadratic:d=x", "quadratic:d=0", "csv:reg=1"] {
            assert!(matches!(bad.parse::<ProblemSpec>(), Err(CliError::Config(_))), "{bad}");
        }
    }

    #[test]
    fn synthetic_problems_are_seeded() {
        let spec: ProblemSpec = "logreg:n=50,d=3,seed=2".parse().unwrap();
        let (a, b) = (spec.build().unwrap(), spec.build().unwrap());
        let x = nalgebra::DVector::from_element(3, 0.3);
        assert_eq!(a.measure(&x), b.measure(&x));
        assert!(a.oracle().is_some());
        let spec: ProblemSpec = "logsumexp:d=4".parse().unwrap();
        assert_eq!(spec.build().unwrap().dim(), 4);
    }
}
