use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use permlearn::tasks::generate_instance;
use permlearn::train::{train_instance, write_trace_csv, Mode, TrainedResult};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{Cell, ExperimentConfig};

#[derive(Clone, Debug)]
struct Job {
    cell: Cell,
    mode: Mode,
    seed: u64,
}

impl Job {
    fn trace_name(&self) -> String {
        format!(
            "{}_h0-{}_bmax-{}_seed-{}.csv",
            self.mode.name(),
            self.cell.h0,
            self.cell.b_max,
            self.seed
        )
    }
}

#[derive(Debug, Serialize)]
struct RunRecord {
    mode: Mode,
    h0: f64,
    b_max: f64,
    seed: u64,
    trace: Option<String>,
    error: Option<String>,
    kendall_tau: Option<f64>,
    final_loss: Option<f64>,
}

#[derive(Debug, Serialize)]
struct SummaryRow {
    task: &'static str,
    n: usize,
    mode: &'static str,
    h0: f64,
    b_max: f64,
    runs: usize,
    failed: usize,
    tau_mean: Option<f64>,
    tau_std: Option<f64>,
    final_loss_mean: Option<f64>,
    final_loss_std: Option<f64>,
    tour_length_mean: Option<f64>,
    tour_length_std: Option<f64>,
    gap_mean: Option<f64>,
    gap_std: Option<f64>,
    delta_tau_mean: Option<f64>,
    delta_tau_std: Option<f64>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    version: &'static str,
    config: &'a ExperimentConfig,
    threads: usize,
    started_unix: u64,
    wall_clock_seconds: f64,
    runs: Vec<RunRecord>,
}

pub struct RunOutcome {
    pub runs: usize,
    pub failed: usize,
    pub out_dir: PathBuf,
}

/// Mean and population standard deviation; `None` when `xs` is empty.
pub fn mean_std(xs: &[f64]) -> (Option<f64>, Option<f64>) {
    if xs.is_empty() {
        return (None, None);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (Some(mean), Some(var.sqrt()))
}

fn run_job(config: &ExperimentConfig, job: &Job, traces: &Path) -> Result<TrainedResult, String> {
    let inst = generate_instance(&config.task.spec, config.task.anchors, job.seed).map_err(|e| e.to_string())?;
    let cfg = config.train_for(job.cell, job.seed);
    let result = train_instance(&inst, &cfg, job.mode).map_err(|e| e.to_string())?;
    let write = || -> std::io::Result<()> {
        let mut out = BufWriter::new(fs::File::create(traces.join(job.trace_name()))?);
        write_trace_csv(&result.trace, &mut out)?;
        out.flush()
    };
    write().map_err(|e| format!("writing trace: {e}"))?;
    Ok(result)
}

/// Run the full cell × mode × seed grid on a pool of `threads` workers
/// (0 picks the logical core count).
pub fn run(config: &ExperimentConfig, out_dir: &Path, threads: usize) -> Result<RunOutcome> {
    let started = Instant::now();
    let started_unix = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let traces = out_dir.join("traces");
    fs::create_dir_all(&traces).with_context(|| format!("creating {}", traces.display()))?;

    let cells = config.cells();
    let mut jobs = Vec::new();
    for &cell in &cells {
        for &mode in &config.modes {
            for &seed in &config.seeds {
                jobs.push(Job { cell, mode, seed });
            }
        }
    }

    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build()?;
    let results: Vec<Result<TrainedResult, String>> =
        pool.install(|| jobs.par_iter().map(|job| run_job(config, job, &traces)).collect());

    let mut summary = csv::Writer::from_path(out_dir.join("summary.csv"))?;
    let per_cell = config.seeds.len();
    for (chunk, outcomes) in jobs.chunks(per_cell).zip(results.chunks(per_cell)) {
        let ok: Vec<&TrainedResult> = outcomes.iter().filter_map(|r| r.as_ref().ok()).collect();
        let collect =
            |f: &dyn Fn(&TrainedResult) -> Option<f64>| mean_std(&ok.iter().filter_map(|r| f(r)).collect::<Vec<_>>());
        let (tau_mean, tau_std) = collect(&|r| Some(r.metrics.kendall_tau));
        let (final_loss_mean, final_loss_std) = collect(&|r| Some(r.final_loss));
        let (tour_length_mean, tour_length_std) = collect(&|r| r.metrics.tour_length);
        let (gap_mean, gap_std) = collect(&|r| r.metrics.gap);
        let (delta_tau_mean, delta_tau_std) = collect(&|r| r.metrics.delta_tau);
        let job = &chunk[0];
        summary.serialize(SummaryRow {
            task: config.task.spec.kind().name(),
            n: config.task.spec.n(),
            mode: job.mode.name(),
            h0: job.cell.h0,
            b_max: job.cell.b_max,
            runs: outcomes.len(),
            failed: outcomes.len() - ok.len(),
            tau_mean,
            tau_std,
            final_loss_mean,
            final_loss_std,
            tour_length_mean,
            tour_length_std,
            gap_mean,
            gap_std,
            delta_tau_mean,
            delta_tau_std,
        })?;
    }
    summary.flush()?;

    let runs: Vec<RunRecord> = jobs
        .iter()
        .zip(&results)
        .map(|(job, r)| RunRecord {
            mode: job.mode,
            h0: job.cell.h0,
            b_max: job.cell.b_max,
            seed: job.seed,
            trace: r.as_ref().ok().map(|_| format!("traces/{}", job.trace_name())),
            error: r.as_ref().err().cloned(),
            kendall_tau: r.as_ref().ok().map(|r| r.metrics.kendall_tau),
            final_loss: r.as_ref().ok().map(|r| r.final_loss),
        })
        .collect();
    let failed = runs.iter().filter(|r| r.error.is_some()).count();
    let manifest = Manifest {
        version: permlearn::VERSION,
        config,
        threads: pool.current_num_threads(),
        started_unix,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        runs,
    };
    let mut out = BufWriter::new(fs::File::create(out_dir.join("manifest.json"))?);
    serde_json::to_writer_pretty(&mut out, &manifest)?;
    writeln!(out)?;
    out.flush()?;

    Ok(RunOutcome {
        runs: jobs.len(),
        failed,
        out_dir: out_dir.to_owned(),
    })
}
