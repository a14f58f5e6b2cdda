//! Command-line surface and its translation into run configuration.

use std::path::PathBuf;

use anyhow::{bail, Result};
use apfopf::verify::RelativeFlags;
use apfopf::{IpmOptions, KernelParam, PreRotation, RunOptions, Tolerances};
use clap::{Parser, ValueEnum};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    Ac,
    Apf,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PreRotationArg {
    Dcpf,
    Dcopf,
    None,
}

impl From<PreRotationArg> for PreRotation {
    fn from(p: PreRotationArg) -> Self {
        match p {
            PreRotationArg::Dcpf => PreRotation::DcPf,
            PreRotationArg::Dcopf => PreRotation::DcOpf,
            PreRotationArg::None => PreRotation::None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AngleUnit {
    Deg,
    Rad,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RelativeClass {
    Balance,
    Voltage,
    Pg,
    Qg,
    Angle,
    Flow,
}

/// Solve AC and all-pass fractional OPF models on MATPOWER cases, audit the
/// all-pass solution under exact AC physics and compare the two.
///
/// Exit status: 0 when every requested solve is optimal and, with
/// `--model both`, every all-pass audit passes; 2 usage; 3 parse; 4 model;
/// 5 kernel; 6 assembly; 7 solve; 8 audit; 9 I/O.
#[derive(Debug, Parser)]
#[command(name = "apfopf", version)]
pub struct Cli {
    /// MATPOWER case file; repeat for several cases.
    #[arg(long = "case", value_name = "PATH")]
    pub cases: Vec<PathBuf>,

    /// Models to solve; `both` also audits and compares.
    #[arg(long, value_enum, default_value_t = ModelArg::Both)]
    pub model: ModelArg,

    /// Source of the reference angles for the all-pass rotation and the
    /// starting point.
    #[arg(long, value_enum, default_value_t = PreRotationArg::Dcpf)]
    pub prerotation: PreRotationArg,

    /// All-pass kernel parameter.
    #[arg(long, default_value_t = KernelParam::DEFAULT_A, conflicts_with = "a_params", allow_negative_numbers = true)]
    pub a: f64,

    /// Kernel parameter list; only a single entry is supported.
    #[arg(long, value_delimiter = ',', value_name = "A,...")]
    pub a_params: Option<Vec<f64>>,

    /// Reduce the rating of the first 90% of rated branches (in case order)
    /// by this percentage.
    #[arg(long, default_value_t = 0.0, value_name = "PERCENT", allow_negative_numbers = true)]
    pub rate_scale_m: f64,

    /// Bus balance audit tolerance (p.u.).
    #[arg(long)]
    pub balance_tol: Option<f64>,
    /// Bound audit tolerance (p.u., rad).
    #[arg(long)]
    pub bound_tol: Option<f64>,
    /// Activity tolerance for binding constraints.
    #[arg(long)]
    pub binding_tol: Option<f64>,
    /// Audit classes measured relative to their limit.
    #[arg(long, value_enum, value_delimiter = ',')]
    pub relative: Vec<RelativeClass>,

    /// Initial barrier parameter.
    #[arg(long)]
    pub mu0: Option<f64>,
    /// Barrier reduction factor in (0, 1).
    #[arg(long)]
    pub sigma: Option<f64>,
    /// KKT tolerance of the interior-point solver.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Iteration limit of the interior-point solver.
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Fraction-to-boundary factor.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Smallest Hessian shift tried by inertia correction.
    #[arg(long)]
    pub reg_min: Option<f64>,
    /// Largest Hessian shift before the solve gives up.
    #[arg(long)]
    pub reg_max: Option<f64>,
    /// Relative relaxation of variable bounds during the solve.
    #[arg(long)]
    pub bound_relax: Option<f64>,

    /// JSON report covering all cases.
    #[arg(long, value_name = "PATH")]
    pub json: Option<PathBuf>,
    /// One CSV summary row per case and model.
    #[arg(long, value_name = "PATH")]
    pub csv: Option<PathBuf>,
    /// Per-iteration solver logs as JSON.
    #[arg(long, value_name = "PATH")]
    pub trace_json: Option<PathBuf>,

    /// Write exact and all-pass kernel samples as CSV to this path.
    #[arg(long, value_name = "PATH")]
    pub emit_kernel_samples: Option<PathBuf>,
    /// Sample range as MIN,MAX in `--delta-unit`.
    #[arg(long, value_parser = parse_range, default_value = "-180,180", allow_hyphen_values = true)]
    pub delta_range: (f64, f64),
    /// Unit of `--delta-range` and `--shift`; the CSV always reports degrees.
    #[arg(long, value_enum, default_value_t = AngleUnit::Deg)]
    pub delta_unit: AngleUnit,
    /// Number of evenly spaced samples, endpoints included.
    #[arg(long, default_value_t = 721)]
    pub points: usize,
    /// Evaluate the all-pass pair at δ minus this shift (in `--delta-unit`).
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub shift: f64,

    /// Cases solved concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Suppress the text report on stdout.
    #[arg(long, short)]
    pub quiet: bool,
}

impl Cli {
    /// The single kernel parameter.
    pub fn kernel_a(&self) -> Result<f64> {
        match &self.a_params {
            None => Ok(self.a),
            Some(v) if v.len() == 1 => Ok(v[0]),
            Some(v) => bail!(
                "--a-params has {} entries; only a single all-pass parameter is supported (multi-stage kernels are not implemented)",
                v.len()
            ),
        }
    }

    pub fn run_options(&self) -> Result<RunOptions> {
        let mut ipm = IpmOptions::default();
        let set = |slot: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *slot = v;
            }
        };
        set(&mut ipm.mu0, self.mu0);
        set(&mut ipm.sigma, self.sigma);
        set(&mut ipm.tol, self.tol);
        set(&mut ipm.tau, self.tau);
        set(&mut ipm.reg_min, self.reg_min);
        set(&mut ipm.reg_max, self.reg_max);
        set(&mut ipm.bound_relax, self.bound_relax);
        if let Some(n) = self.max_iter {
            ipm.max_iter = n;
        }
        let mut tolerances = Tolerances::default();
        set(&mut tolerances.balance_tol, self.balance_tol);
        set(&mut tolerances.bound_tol, self.bound_tol);
        set(&mut tolerances.binding_tol, self.binding_tol);
        ipm.activity_tol = tolerances.binding_tol;
        let mut rel = RelativeFlags::default();
        for c in &self.relative {
            match c {
                RelativeClass::Balance => rel.balance = true,
                RelativeClass::Voltage => rel.voltage = true,
                RelativeClass::Pg => rel.pg = true,
                RelativeClass::Qg => rel.qg = true,
                RelativeClass::Angle => rel.angle = true,
                RelativeClass::Flow => rel.flow = true,
            }
        }
        tolerances.relative = rel;
        let opts = RunOptions {
            prerotation: self.prerotation.into(),
            a: self.kernel_a()?,
            rate_scale_m: self.rate_scale_m,
            ipm,
            tolerances,
        };
        opts.validate()?;
        Ok(opts)
    }

    /// Sample range in degrees.
    pub fn delta_range_deg(&self) -> (f64, f64, f64) {
        let conv = |v: f64| match self.delta_unit {
            AngleUnit::Deg => v,
            AngleUnit::Rad => v.to_degrees(),
        };
        (conv(self.delta_range.0), conv(self.delta_range.1), conv(self.shift))
    }
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(',').ok_or_else(|| format!("expected MIN,MAX, got `{s}`"))?;
    let num = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("`{v}`: {e}"));
    Ok((num(lo)?, num(hi)?))
}
