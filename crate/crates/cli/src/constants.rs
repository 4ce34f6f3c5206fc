//! `constants`: the theory constants for a parameter set.

use clap::Args;
use mines::analysis::{compute_constants, ConstantWarning};
use mines::{MinesConfig, SmoothnessSpec, SpectralBand, TheoryConstants};
use serde::Serialize;

use crate::error::{CliError, CliResult};
use crate::output;

#[derive(Debug, Args)]
pub struct ConstantsArgs {
    /// Smoothness constant L.
    #[arg(long = "L", alias = "l")]
    pub l: Option<f64>,
    /// Strong-convexity constant.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Hessian Lipschitz constant.
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub b: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub zeta: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    /// Horizon K.
    #[arg(long = "K", alias = "k")]
    pub k: Option<usize>,
    /// Initial gap f(μ₁) − f*; needed for C₂ and C when γ > 0.
    #[arg(long)]
    pub f_gap: Option<f64>,
    /// ‖Σ₁⁻¹ − Π(∇²f(μ*))‖_F.
    #[arg(long, default_value_t = 0.0)]
    pub sigma1_err: f64,
}

fn require<T: Copy>(name: &str, v: Option<T>) -> CliResult<T> {
    v.ok_or_else(|| CliError::config(format!("missing required parameter --{name}")))
}

fn require_positive(name: &str, v: Option<f64>) -> CliResult<f64> {
    let v = require(name, v)?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(CliError::config(format!("--{name} must be positive, got {v}")))
    }
}

#[derive(Debug, Serialize)]
pub struct ConstantsReport {
    pub constants: TheoryConstants<f64>,
    pub warnings: Vec<ConstantWarning>,
}

pub fn compute(args: &ConstantsArgs) -> CliResult<ConstantsReport> {
    let l = require_positive("L", args.l)?;
    let sigma = require_positive("sigma", args.sigma)?;
    let gamma = require("gamma", args.gamma)?;
    if !(gamma >= 0.0) {
        return Err(CliError::config("--gamma must be non-negative"));
    }
    let d = require("d", args.d)?;
    let b = require("b", args.b)?;
    let alpha = require_positive("alpha", args.alpha)?;
    let tau = require_positive("tau", args.tau)?;
    let zeta = require_positive("zeta", args.zeta)?;
    let delta = require_positive("delta", args.delta)?;
    let k = require("K", args.k)?;
    if d == 0 || b == 0 || k == 0 {
        return Err(CliError::config("--d, --b and --K must be at least 1"));
    }
    let spec = SmoothnessSpec::new(l, sigma, gamma)?;
    let mut config = MinesConfig::defaults(d, Some(&spec));
    config.batch = b;
    config.alpha = alpha;
    config.band = SpectralBand::new(tau, zeta)?;
    config.delta = delta;
    config.validate()?;
    let (constants, warnings) = compute_constants(&spec, &config, d, k, args.f_gap, args.sigma1_err);
    Ok(ConstantsReport { constants, warnings })
}

fn fmt_value(v: Option<f64>) -> String {
    match v {
        None => "unavailable".into(),
        Some(x) if x == 0.0 => "0".into(),
        Some(x) if (1e-3..1e6).contains(&x.abs()) => format!("{x:.6}"),
        Some(x) => format!("{x:.6e}"),
    }
}

pub fn table(c: &TheoryConstants<f64>) -> String {
    let rows: [(&str, Option<f64>); 14] = [
        ("c1", Some(c.c1)),
        ("c2", Some(c.c2)),
        ("c3", Some(c.c3)),
        ("delta_alpha_1", Some(c.delta_alpha_1)),
        ("delta_alpha_2", Some(c.delta_alpha_2)),
        ("C1", Some(c.big_c1)),
        ("C2", c.big_c2),
        ("C3", Some(c.big_c3)),
        ("C4", Some(c.big_c4)),
        ("C", c.big_c),
        ("alpha_max", c.alpha_max),
        ("mu_gap_bound", Some(c.mu_gap_bound)),
        ("mu_dist_bound", Some(c.mu_dist_bound)),
        ("sigma_dist_bound", Some(c.sigma_dist_bound)),
    ];
    rows.iter()
        .map(|(name, v)| format!("{name:<18}{:>24}\n", fmt_value(*v)))
        .collect()
}

fn describe(w: ConstantWarning) -> &'static str {
    match w {
        ConstantWarning::C2NotPositive => "c2 <= 0: batch too small, descent bounds carry no guarantee",
        ConstantWarning::AlphaAboveMax => "alpha exceeds alpha_max of the covariance bound",
        ConstantWarning::GapUnavailable => "initial gap unknown: C2 and C unavailable (pass --f-gap)",
    }
}

pub fn cmd_constants(args: &ConstantsArgs) -> CliResult<()> {
    let report = compute(args)?;
    output::say(&table(&report.constants));
    for w in &report.warnings {
        output::say(&format!("warning: {w:?}: {}\n", describe(*w)));
    }
    output::say(&(serde_json::to_string_pretty(&report).expect("constants serialize") + "\n"));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args() -> ConstantsArgs {
        ConstantsArgs {
            l: Some(10.0),
            sigma: Some(1.0),
            gamma: Some(0.0),
            d: Some(4),
            b: Some(4),
            alpha: Some(1e-3),
            tau: Some(0.5),
            zeta: Some(20.0),
            delta: Some(0.05),
            k: Some(1000),
            f_gap: None,
            sigma1_err: 0.0,
        }
    }

    #[test]
    fn reference_values() {
        let r = compute(&args()).unwrap();
        assert!((r.constants.c1 - 45.10).abs() < 1e-2, "{}", r.constants.c1);
        assert_eq!(r.constants.delta_alpha_1, 0.0);
        assert_eq!(r.constants.delta_alpha_2, 0.0);
        let t = table(&r.constants);
        assert!(t.contains("45.10"));
        assert!(t.lines().any(|l| l.starts_with("delta_alpha_1") && l.trim_end().ends_with(" 0")));
    }

    #[test]
    fn small_batch_warns() {
        let r = compute(&ConstantsArgs { b: Some(1), ..args() }).unwrap();
        assert!(r.warnings.contains(&ConstantWarning::C2NotPositive));
    }

    #[test]
    fn missing_parameter_is_named() {
        let err = compute(&ConstantsArgs { zeta: None, ..args() }).unwrap_err();
        assert!(matches!(err, CliError::Config(m) if m.contains("zeta")));
    }
}
