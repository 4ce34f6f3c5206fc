//! `run` and `compare`: replicated optimizer runs and their exports.

use std::fs;
use std::path::Path;

use mines::{run, AlgoChoice, RngStream, RunOptions, RunOutcome};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::Resolved;
use crate::error::{CliError, CliResult};
use crate::output::{self, RunSummary};

fn prepare_dir(settings: &Resolved) -> CliResult<()> {
    let dir = &settings.output_dir;
    fs::create_dir_all(dir).map_err(|e| CliError::config(format!("output_dir {}: {e}", dir.display())))?;
    output::write_text(&dir.join("config.resolved.json"), &(settings.to_json() + "\n"))
}

fn pool(jobs: Option<usize>) -> CliResult<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))
}

/// One replicate of `algo`; the RNG stream id is the replicate index.
/// With `budget_only`, the query budget alone bounds the run.
fn run_one(
    settings: &Resolved,
    algo: AlgoChoice,
    replicate: usize,
    options: RunOptions,
    budget_only: bool,
) -> CliResult<RunOutcome<f64>> {
    let problem = settings.build_problem()?;
    let mut config = settings.config_for(algo)?;
    if budget_only {
        config.max_iters = usize::MAX;
    }
    let mut rng = RngStream::new(settings.seed, replicate as u64);
    Ok(run(algo, &problem, &config, &settings.mu0(), &mut rng, options)?)
}

fn trace_file(dir: &Path, algo: Option<AlgoChoice>, replicate: usize) -> (String, std::path::PathBuf) {
    let name = match algo {
        Some(a) => format!("trace_{a}_r{replicate}.csv"),
        None => format!("trace_r{replicate}.csv"),
    };
    let path = dir.join(&name);
    (name, path)
}

fn first_error(outcomes: &[RunOutcome<f64>]) -> Option<CliError> {
    outcomes
        .iter()
        .enumerate()
        .find_map(|(r, o)| o.error.as_ref().map(|e| CliError::Runtime(format!("replicate {r}: {e}"))))
}

/// Runs the replicates of one algorithm, writes `trace_r<i>.csv` per
/// replicate, `summary.json` and optionally `plot.gp`.
pub fn cmd_run(settings: &Resolved) -> CliResult<()> {
    let algo = settings.algo.unwrap_or(AlgoChoice::Mines);
    prepare_dir(settings)?;
    let options = RunOptions {
        stride: settings.trace_stride,
        query_budget: settings.query_budget,
    };
    let dir = &settings.output_dir;
    let results: Vec<CliResult<RunOutcome<f64>>> = pool(settings.jobs)?.install(|| {
        (0..settings.replicates)
            .into_par_iter()
            .map(|r| {
                let outcome = run_one(settings, algo, r, options, false)?;
                let (_, path) = trace_file(dir, None, r);
                output::write_text(&path, &output::trace_csv(&outcome.trace, settings.timing))?;
                Ok(outcome)
            })
            .collect()
    });
    let outcomes = results.into_iter().collect::<CliResult<Vec<_>>>()?;

    let traces: Vec<_> = outcomes.iter().map(|o| &o.trace).collect();
    let errors = outcomes.iter().map(|o| o.error.as_ref().map(|e| e.to_string())).collect();
    let summary = RunSummary::new(algo.label(), &traces, errors);
    output::write_json(&dir.join("summary.json"), &summary)?;
    if settings.plot {
        let files: Vec<String> = (0..settings.replicates).map(|r| trace_file(dir, None, r).0).collect();
        let column = if summary.final_f_gap_mean.is_some() { 4 } else { 3 };
        let label = if column == 4 { "f - f*" } else { "f" };
        output::write_text(&dir.join("plot.gp"), &output::gnuplot_script(&files, column, label))?;
    }
    if let Some(err) = first_error(&outcomes) {
        return Err(err);
    }
    output::say(&format!(
        "{algo}: {} replicate(s), final f_gap mean {}, total queries {}, output in {}\n",
        settings.replicates,
        summary.final_f_gap_mean.map_or("NA".into(), output::fmt_float),
        summary.total_queries,
        dir.display()
    ));
    Ok(())
}

#[derive(Debug, Serialize)]
struct CompareSummary {
    query_budget: u64,
    algos: Vec<AlgoSummary>,
}

#[derive(Debug, Serialize)]
struct AlgoSummary {
    #[serde(flatten)]
    summary: RunSummary,
    final_f_gap_median: Option<f64>,
}

/// Runs every listed algorithm to the same query budget and writes the
/// long-format `compare.csv` plus per-run traces and `summary.json`.
pub fn cmd_compare(settings: &Resolved) -> CliResult<()> {
    let algos = settings.algos.clone().unwrap_or_default();
    if algos.len() < 2 {
        return Err(CliError::config("algos: compare needs at least two algorithms"));
    }
    if let Some(dup) = algos.iter().enumerate().find(|(i, a)| algos[..*i].contains(a)) {
        return Err(CliError::config(format!("algos: `{}` listed twice", dup.1)));
    }
    let budget = settings
        .query_budget
        .unwrap_or(settings.iters as u64 * AlgoChoice::Mines.queries_per_iter(settings.batch));
    prepare_dir(settings)?;
    let options = RunOptions {
        stride: settings.trace_stride,
        query_budget: Some(budget),
    };
    let dir = &settings.output_dir;
    let jobs: Vec<(AlgoChoice, usize)> = algos
        .iter()
        .flat_map(|&a| (0..settings.replicates).map(move |r| (a, r)))
        .collect();
    let results: Vec<CliResult<RunOutcome<f64>>> = pool(settings.jobs)?.install(|| {
        jobs.par_iter()
            .map(|&(algo, r)| {
                let outcome = run_one(settings, algo, r, options, true)?;
                let (_, path) = trace_file(dir, Some(algo), r);
                output::write_text(&path, &output::trace_csv(&outcome.trace, settings.timing))?;
                Ok(outcome)
            })
            .collect()
    });
    let outcomes = results.into_iter().collect::<CliResult<Vec<_>>>()?;

    let csv = output::compare_csv(
        jobs.iter()
            .zip(&outcomes)
            .map(|(&(algo, r), o)| (algo.label(), r, &o.trace)),
    );
    output::write_text(&dir.join("compare.csv"), &csv)?;
    let mut summaries = Vec::new();
    for (i, algo) in algos.iter().enumerate() {
        let chunk = &outcomes[i * settings.replicates..(i + 1) * settings.replicates];
        let traces: Vec<_> = chunk.iter().map(|o| &o.trace).collect();
        let errors = chunk.iter().map(|o| o.error.as_ref().map(|e| e.to_string())).collect();
        let summary = RunSummary::new(algo.label(), &traces, errors);
        let gaps: Vec<f64> = traces.iter().filter_map(|t| t.last().and_then(|r| r.f_gap)).collect();
        summaries.push(AlgoSummary { summary, final_f_gap_median: output::median(&gaps) });
    }
    output::write_json(&dir.join("summary.json"), &CompareSummary { query_budget: budget, algos: summaries })?;
    if settings.plot {
        let files: Vec<String> = jobs.iter().map(|&(a, r)| trace_file(dir, Some(a), r).0).collect();
        output::write_text(&dir.join("plot.gp"), &output::gnuplot_script(&files, 4, "f - f*"))?;
    }
    if let Some(err) = first_error(&outcomes) {
        return Err(err);
    }
    output::say(&format!("compared {} algorithms at {budget} queries, output in {}\n", algos.len(), dir.display()));
    Ok(())
}
