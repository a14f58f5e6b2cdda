mod args;
mod run;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::process::ExitCode;

use anyhow::{Context, Result};
use apfopf::kernels::kernel_samples;
use apfopf::{KernelParam, RunOptions};
use clap::Parser;
use serde::Serialize;

use args::{Cli, ModelArg};
use run::{run_all, CaseReport, Category, Failure, TraceReport, SCHEMA_VERSION};

#[derive(Serialize)]
struct Units {
    power: &'static str,
    voltage: &'static str,
    angle: &'static str,
    objective: &'static str,
    time: &'static str,
}

const UNITS: Units = Units {
    power: "p.u. on the case MVA base",
    voltage: "p.u.",
    angle: "rad",
    objective: "$/h",
    time: "s",
};

#[derive(Serialize)]
struct Report<'a> {
    schema_version: u32,
    units: Units,
    model: &'a str,
    options: &'a RunOptions,
    success: bool,
    cases: Vec<&'a CaseReport>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn emit_samples(cli: &Cli, path: &Path, a: f64) -> Result<(), Failure> {
    let (lo, hi, shift) = cli.delta_range_deg();
    let p = KernelParam::new(a).map_err(Failure::from)?;
    let samples = kernel_samples(lo, hi, cli.points, p, shift).map_err(Failure::from)?;
    let io = |e: &dyn std::fmt::Display| Failure {
        category: Category::Io,
        message: format!("{}: {e}", path.display()),
    };
    let mut w = csv::Writer::from_path(path).map_err(|e| io(&e))?;
    for s in &samples {
        w.serialize(s).map_err(|e| io(&e))?;
    }
    w.flush().map_err(|e| io(&e))
}

/// Structured failure on stderr, then the category's exit code.
fn fail(f: Failure) -> ExitCode {
    eprintln!("{}", serde_json::json!({ "error": f }));
    ExitCode::from(f.category.exit_code())
}

fn io_failure(e: anyhow::Error) -> Failure {
    Failure {
        category: Category::Io,
        message: format!("{e:#}"),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let usage = |msg: String| {
        fail(Failure {
            category: Category::Usage,
            message: msg,
        })
    };
    let opts = match cli.run_options() {
        Ok(o) => o,
        Err(e) => return usage(format!("{e:#}")),
    };
    if cli.cases.is_empty() && cli.emit_kernel_samples.is_none() {
        return usage("nothing to do: pass --case and/or --emit-kernel-samples".into());
    }
    if let Some(path) = &cli.emit_kernel_samples {
        if let Err(f) = emit_samples(&cli, path, opts.a) {
            return fail(f);
        }
    }
    if cli.cases.is_empty() {
        return ExitCode::SUCCESS;
    }

    let outcomes = run_all(&cli.cases, cli.model, &opts, cli.jobs, cli.trace_json.is_some());
    let failure = outcomes.iter().find_map(|o| o.failure(cli.model).map(|c| (c, &o.report)));
    if !cli.quiet {
        let mut out = std::io::stdout().lock();
        for o in &outcomes {
            let _ = writeln!(out, "{}", run::render(o));
        }
    }
    let model = match cli.model {
        ModelArg::Ac => "ac",
        ModelArg::Apf => "apf",
        ModelArg::Both => "both",
    };
    let written = (|| -> Result<()> {
        if let Some(path) = &cli.json {
            let report = Report {
                schema_version: SCHEMA_VERSION,
                units: UNITS,
                model,
                options: &opts,
                success: failure.is_none(),
                cases: outcomes.iter().map(|o| &o.report).collect(),
            };
            write_json(path, &report)?;
        }
        if let Some(path) = &cli.csv {
            let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
            for row in run::summary_rows(&outcomes) {
                w.serialize(row)?;
            }
            w.flush()?;
        }
        if let Some(path) = &cli.trace_json {
            let traces: Vec<&TraceReport> = outcomes.iter().flat_map(|o| &o.traces).collect();
            write_json(path, &traces)?;
        }
        Ok(())
    })();
    if let Err(e) = written {
        return fail(io_failure(e));
    }
    match failure {
        None => ExitCode::SUCCESS,
        Some((category, report)) => {
            let message = match &report.failure {
                Some(f) => format!("{}: {}", report.case, f.message),
                None if category == Category::Audit => {
                    format!("{}: all-pass solution fails the exact AC audit", report.case)
                }
                None => format!("{}: a requested solve did not reach OPTIMAL", report.case),
            };
            fail(Failure { category, message })
        }
    }
}
