//! The five batch commands. Each takes a resolved config and an output
//! directory and returns a report the caller can print or inspect.

use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use crate::control_loop::{run_controller, ClosedLoopTrace, ControllerKind, EventKind};
use crate::error::{Error, Result};
use crate::estimator::{bootstrap_band_with, write_band_csv, ConfidenceBand};
use crate::harness::config::{Experiment, ExperimentConfig};
use crate::harness::io::{ensure_dir, write_bytes, write_csv_with, write_json, Manifest};
use crate::harness::selftest::{self, SuiteResult};
use crate::harness::svg::{Band, LineChart, Series};
use crate::plant::{fmt_real, Dataset};

fn write_resolved_config(cfg: &ExperimentConfig, out: &Path, manifest: &mut Manifest) -> Result<()> {
    let path = out.join("config.json");
    write_json(&path, cfg)?;
    manifest.record(out, &path);
    Ok(())
}

fn manifest_for(command: &str, cfg: &ExperimentConfig) -> Manifest {
    Manifest::new(command, cfg.version, cfg.seeds.clone(), cfg.dataset.seed)
}

#[derive(Debug, Clone)]
pub struct GenerateReport {
    pub dataset_path: PathBuf,
    pub records: usize,
}

/// Collects the offline dataset and writes it with a manifest.
pub fn generate_data(cfg: &ExperimentConfig, out: &Path) -> Result<GenerateReport> {
    let exp = Experiment::new(cfg.clone())?;
    ensure_dir(out)?;
    let mut manifest = manifest_for("generate-data", cfg);
    let dataset_path = out.join("dataset.csv");
    write_csv_with(&dataset_path, |buf| exp.dataset.write_csv(buf))?;
    manifest.record(out, &dataset_path);
    write_resolved_config(cfg, out, &mut manifest)?;
    manifest.write(out)?;
    Ok(GenerateReport {
        dataset_path,
        records: exp.dataset.len(),
    })
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Dataset::read_csv(file)
}

#[derive(Debug, Clone)]
pub struct EstimateReport {
    pub bands: Vec<ConfidenceBand>,
    pub truth: Vec<DVector<f64>>,
    pub csv_path: PathBuf,
    pub svg_path: PathBuf,
}

impl EstimateReport {
    pub fn max_width(&self) -> f64 {
        self.bands.iter().map(|b| b.width().amax()).fold(0.0, f64::max)
    }

    /// Largest distance from the true drift to the band, 0 when inside.
    pub fn max_truth_excess(&self) -> f64 {
        self.bands
            .iter()
            .zip(&self.truth)
            .map(|(b, f)| {
                (0..f.len())
                    .map(|i| (b.lower[i] - f[i]).max(f[i] - b.upper[i]).max(0.0))
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    }
}

/// Point estimate and bootstrap band over the configured query grid,
/// against the true drift. Uses `dataset` when given, otherwise collects one.
pub fn estimate(cfg: &ExperimentConfig, dataset: Option<&Path>, out: &Path) -> Result<EstimateReport> {
    let exp = match dataset {
        Some(p) => Experiment::with_dataset(cfg.clone(), load_dataset(p)?)?,
        None => Experiment::new(cfg.clone())?,
    };
    if exp.system.state_dim() != 1 {
        return Err(Error::usage("estimate reports a scalar state only"));
    }
    ensure_dir(out)?;
    let mut manifest = manifest_for("estimate", cfg);
    let queries = cfg.query_points();
    let bands: Vec<ConfidenceBand> = queries
        .iter()
        .map(|q| bootstrap_band_with(&exp.training, q, &cfg.kernel, cfg.alpha, &exp.resamples))
        .collect::<Result<_>>()?;
    let truth: Vec<DVector<f64>> = queries.iter().map(|q| exp.system.dynamics.eval(q)).collect();

    let csv_path = out.join("estimate.csv");
    let f = |q: &DVector<f64>| exp.system.dynamics.eval(q);
    write_csv_with(&csv_path, |buf| write_band_csv(buf, &bands, Some(&f)))?;
    manifest.record(out, &csv_path);

    let xs: Vec<f64> = queries.iter().map(|q| q[0]).collect();
    let line = |vals: Vec<f64>| xs.iter().copied().zip(vals).collect::<Vec<_>>();
    let mut chart = LineChart::new("True and estimated dynamics", "x", "f(x)");
    chart.series.push(Series::new("true f", line(truth.iter().map(|v| v[0]).collect()), 7));
    chart.series.push(Series::new("estimate", line(bands.iter().map(|b| b.estimate[0]).collect()), 0));
    chart
        .series
        .push(Series::new("band", line(bands.iter().map(|b| b.lower[0]).collect()), 0).dashed());
    chart.series.push(
        Series::new("band", line(bands.iter().map(|b| b.upper[0]).collect()), 0)
            .dashed()
            .hidden_from_legend(),
    );
    let svg_path = out.join("estimate.svg");
    write_bytes(&svg_path, chart.render().as_bytes())?;
    manifest.record(out, &svg_path);
    write_resolved_config(cfg, out, &mut manifest)?;
    manifest.write(out)?;
    Ok(EstimateReport {
        bands,
        truth,
        csv_path,
        svg_path,
    })
}

/// Aggregates of one controller over all seeds.
#[derive(Debug, Clone, Serialize)]
pub struct SummaryRow {
    pub controller: String,
    pub runs: usize,
    pub successes: usize,
    pub success_rate: f64,
    /// Mean cumulative cost over every run.
    pub mean_cost: f64,
    /// Mean steps to goal over successful runs, `None` without successes.
    pub mean_steps_to_goal: Option<f64>,
    pub fallback_events: usize,
    pub safety_fallback_events: usize,
    pub shortened_horizon_events: usize,
    pub mean_final_state: Vec<f64>,
}

pub fn summarize(kind: ControllerKind, traces: &[&ClosedLoopTrace]) -> SummaryRow {
    let runs = traces.len();
    let successes = traces.iter().filter(|t| t.reached_goal).count();
    let mean_cost = traces.iter().map(|t| t.cumulative_cost).sum::<f64>() / runs.max(1) as f64;
    let steps: Vec<f64> = traces.iter().filter_map(|t| t.steps_to_goal).map(|s| s as f64).collect();
    let count = |k: EventKind| traces.iter().map(|t| t.count_events(k)).sum();
    let n = traces.first().map_or(0, |t| t.final_state().len());
    let mean_final_state = (0..n)
        .map(|i| traces.iter().map(|t| t.final_state()[i]).sum::<f64>() / runs as f64)
        .collect();
    SummaryRow {
        controller: kind.label(),
        runs,
        successes,
        success_rate: successes as f64 / runs.max(1) as f64,
        mean_cost,
        mean_steps_to_goal: (!steps.is_empty()).then(|| steps.iter().sum::<f64>() / steps.len() as f64),
        fallback_events: count(EventKind::Fallback),
        safety_fallback_events: count(EventKind::SafetyFallback),
        shortened_horizon_events: count(EventKind::ShortenedHorizon),
        mean_final_state,
    }
}

pub fn write_summary_csv(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    write_csv_with(path, |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record([
            "controller",
            "runs",
            "successes",
            "success_rate",
            "mean_cost",
            "mean_steps_to_goal",
            "fallback_events",
            "safety_fallback_events",
            "shortened_horizon_events",
            "mean_final_state",
        ])?;
        for r in rows {
            w.write_record([
                r.controller.clone(),
                r.runs.to_string(),
                r.successes.to_string(),
                fmt_real(r.success_rate),
                fmt_real(r.mean_cost),
                r.mean_steps_to_goal.map(fmt_real).unwrap_or_default(),
                r.fallback_events.to_string(),
                r.safety_fallback_events.to_string(),
                r.shortened_horizon_events.to_string(),
                r.mean_final_state.iter().map(|v| fmt_real(*v)).collect::<Vec<_>>().join(" "),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    })
}

/// Text table of the summary rows.
pub fn format_summary(rows: &[SummaryRow]) -> String {
    let mut s = format!(
        "{:<16} {:>8} {:>10} {:>10} {:>9} {:>9}\n",
        "controller", "success", "mean_cost", "mean_steps", "fallback", "final_x"
    );
    for r in rows {
        s.push_str(&format!(
            "{:<16} {:>5}/{:<2} {:>10.2} {:>10} {:>9} {:>9.3}\n",
            r.controller,
            r.successes,
            r.runs,
            r.mean_cost,
            r.mean_steps_to_goal.map_or("-".to_string(), |v| format!("{v:.2}")),
            r.fallback_events + r.safety_fallback_events,
            r.mean_final_state.first().copied().unwrap_or(f64::NAN),
        ));
    }
    s
}

/// Every (controller, seed) run, in controller-major order. A failing run
/// aborts with its controller and seed in the message.
pub fn run_matrix(exp: &Experiment, controllers: &[ControllerKind], seeds: &[u64]) -> Result<Vec<ClosedLoopTrace>> {
    let jobs: Vec<(ControllerKind, u64)> = controllers
        .iter()
        .flat_map(|c| seeds.iter().map(move |s| (*c, *s)))
        .collect();
    jobs.par_iter()
        .map(|(kind, seed)| {
            run_controller(*kind, exp.scenario(), *seed).map_err(|e| {
                let msg = format!("controller {} seed {seed}: {e}", kind.label());
                match e {
                    Error::Io { path, source } => Error::Io {
                        path: format!("{path} ({msg})"),
                        source,
                    },
                    Error::Property(_) => Error::Property(msg),
                    _ => Error::Internal(msg),
                }
            })
        })
        .collect()
}

/// Per-run companion of a trace CSV.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub controller: ControllerKind,
    pub seed: u64,
    pub config_version: u32,
    pub dataset_seed: u64,
    pub reached_goal: bool,
    pub steps_to_goal: Option<usize>,
    pub cumulative_cost: f64,
    pub final_state: Vec<f64>,
    pub events: Vec<(usize, String)>,
}

impl RunManifest {
    pub fn of(cfg: &ExperimentConfig, tr: &ClosedLoopTrace) -> Self {
        Self {
            controller: tr.controller,
            seed: tr.seed,
            config_version: cfg.version,
            dataset_seed: cfg.dataset.seed,
            reached_goal: tr.reached_goal,
            steps_to_goal: tr.steps_to_goal,
            cumulative_cost: tr.cumulative_cost,
            final_state: tr.final_state().iter().copied().collect(),
            events: tr.events.iter().map(|e| (e.t, e.kind.as_str().to_string())).collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CompareReport {
    pub traces: Vec<ClosedLoopTrace>,
    pub summary: Vec<SummaryRow>,
    pub trace_paths: Vec<PathBuf>,
}

impl CompareReport {
    pub fn row(&self, label: &str) -> Option<&SummaryRow> {
        self.summary.iter().find(|r| r.controller == label)
    }

    pub fn traces_of(&self, kind: ControllerKind) -> Vec<&ClosedLoopTrace> {
        self.traces.iter().filter(|t| t.controller == kind).collect()
    }
}

pub fn trace_file_name(kind: ControllerKind, seed: u64) -> String {
    format!("{}_seed{seed}.csv", kind.label())
}

fn closed_loop_chart(cfg: &ExperimentConfig, report: &CompareReport, controllers: &[ControllerKind]) -> LineChart {
    let mut chart = LineChart::new("Closed-loop trajectories", "t", "x_t");
    for (ci, kind) in controllers.iter().enumerate() {
        for (j, tr) in report.traces_of(*kind).into_iter().enumerate() {
            let pts = tr.states.iter().enumerate().map(|(t, x)| (t as f64, x[0])).collect();
            let s = Series::new(kind.label(), pts, ci);
            chart.series.push(if j == 0 { s } else { s.hidden_from_legend() });
        }
    }
    let goal = &cfg.task.goal_set;
    chart.bands.push(Band {
        label: "goal set".into(),
        lower: goal.lower()[0],
        upper: goal.upper()[0],
    });
    chart
}

fn plan_chart(cfg: &ExperimentConfig, report: &CompareReport, controllers: &[ControllerKind]) -> LineChart {
    let step = cfg.plan_snapshot_step;
    let seed = cfg.seeds[0];
    let mut chart = LineChart::new(format!("Open-loop plans at t={step}, seed {seed}"), "t", "x");
    for (ci, kind) in controllers.iter().enumerate() {
        let Some(tr) = report.traces.iter().find(|t| t.controller == *kind && t.seed == seed) else {
            continue;
        };
        let pts = tr.states.iter().enumerate().map(|(t, x)| (t as f64, x[0])).collect();
        chart.series.push(Series::new(format!("{} closed loop", kind.label()), pts, ci));
        if let Some(Some(plan)) = tr.open_loop_plans.get(step) {
            let pts = plan.iter().enumerate().map(|(k, x)| ((step + k) as f64, x[0])).collect();
            chart
                .series
                .push(Series::new(format!("{} plan", kind.label()), pts, ci).dashed());
        }
    }
    let goal = &cfg.task.goal_set;
    chart.bands.push(Band {
        label: "goal set".into(),
        lower: goal.lower()[0],
        upper: goal.upper()[0],
    });
    chart
}

fn compare_with(cfg: &ExperimentConfig, controllers: &[ControllerKind], out: &Path, command: &str) -> Result<CompareReport> {
    let exp = Experiment::new(cfg.clone())?;
    if controllers.is_empty() {
        return Err(Error::usage("no controllers to run"));
    }
    let traces = run_matrix(&exp, controllers, &cfg.seeds)?;
    ensure_dir(out)?;
    let mut manifest = manifest_for(command, cfg);

    let trace_dir = out.join("traces");
    let paths: Vec<PathBuf> = traces
        .par_iter()
        .map(|tr| {
            let path = trace_dir.join(trace_file_name(tr.controller, tr.seed));
            write_csv_with(&path, |buf| tr.write_csv(buf))?;
            write_json(&path.with_extension("json"), &RunManifest::of(cfg, tr))?;
            Ok(path)
        })
        .collect::<Result<_>>()?;
    for p in &paths {
        manifest.record(out, p);
        manifest.record(out, &p.with_extension("json"));
    }

    let summary = controllers
        .iter()
        .map(|k| {
            let runs: Vec<&ClosedLoopTrace> = traces.iter().filter(|t| t.controller == *k).collect();
            summarize(*k, &runs)
        })
        .collect();
    let report = CompareReport {
        traces,
        summary,
        trace_paths: paths,
    };
    let summary_path = out.join("summary.csv");
    write_summary_csv(&summary_path, &report.summary)?;
    manifest.record(out, &summary_path);

    if exp.system.state_dim() == 1 {
        let p = out.join("closed_loop.svg");
        write_bytes(&p, closed_loop_chart(cfg, &report, controllers).render().as_bytes())?;
        manifest.record(out, &p);
        let p = out.join(format!("plans_t{}.svg", cfg.plan_snapshot_step));
        write_bytes(&p, plan_chart(cfg, &report, controllers).render().as_bytes())?;
        manifest.record(out, &p);
    }
    write_resolved_config(cfg, out, &mut manifest)?;
    manifest.write(out)?;
    Ok(report)
}

/// Runs the configured controllers over every seed with paired noise.
pub fn compare(cfg: &ExperimentConfig, out: &Path) -> Result<CompareReport> {
    compare_with(cfg, &cfg.controllers, out, "compare")
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub compare: CompareReport,
    /// Mean cost of the smallest tolerance divided by the proposed mean cost.
    pub cost_ratio: Option<f64>,
}

/// The proposed controller next to the naive controller at every configured
/// tolerance.
pub fn sweep_naive(cfg: &ExperimentConfig, out: &Path) -> Result<SweepReport> {
    let mut controllers = vec![ControllerKind::Proposed];
    for tol in &cfg.naive_tolerances {
        controllers.push(ControllerKind::naive(*tol)?);
    }
    let compare = compare_with(cfg, &controllers, out, "sweep-naive")?;
    let smallest = cfg
        .naive_tolerances
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let cost_ratio = ControllerKind::naive(smallest).ok().and_then(|k| {
        let naive = compare.row(&k.label())?;
        let proposed = compare.row(&ControllerKind::Proposed.label())?;
        Some(naive.mean_cost / proposed.mean_cost)
    });
    Ok(SweepReport { compare, cost_ratio })
}

#[derive(Debug, Clone)]
pub struct SelftestReport {
    pub suites: Vec<SuiteResult>,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.suites.iter().all(SuiteResult::passed)
    }

    /// `Err(Property)` listing the failed suites.
    pub fn into_result(self) -> Result<Self> {
        if self.passed() {
            return Ok(self);
        }
        let failed: Vec<&str> = self
            .suites
            .iter()
            .filter(|s| !s.passed())
            .map(|s| s.name.as_str())
            .collect();
        Err(Error::Property(format!("self-test suites failed: {}", failed.join(", "))))
    }
}

pub fn selftest(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<SelftestReport> {
    let exp = Experiment::new(cfg.clone())?;
    let seed = cfg.seeds[0];
    let suites = selftest::run_all(&exp, seed)?;
    if let Some(out) = out {
        ensure_dir(out)?;
        let mut manifest = manifest_for("selftest", cfg);
        let p = out.join("selftest.json");
        write_json(&p, &suites)?;
        manifest.record(out, &p);
        manifest.write(out)?;
    }
    Ok(SelftestReport { suites })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.dataset.count = 80;
        cfg.bootstrap_replicates = 50;
        cfg.seeds = vec![0];
        cfg.estimate_grid.count = 9;
        cfg
    }

    #[test]
    fn generate_is_byte_stable() {
        let cfg = small();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ra = generate_data(&cfg, a.path()).unwrap();
        let rb = generate_data(&cfg, b.path()).unwrap();
        assert_eq!(ra.records, 80);
        assert_eq!(std::fs::read(ra.dataset_path).unwrap(), std::fs::read(rb.dataset_path).unwrap());
        assert!(a.path().join("manifest.json").exists());
    }

    #[test]
    fn estimate_from_written_dataset() {
        let cfg = small();
        let dir = tempfile::tempdir().unwrap();
        let g = generate_data(&cfg, dir.path()).unwrap();
        let r = estimate(&cfg, Some(&g.dataset_path), &dir.path().join("est")).unwrap();
        assert_eq!(r.bands.len(), 9);
        let text = std::fs::read_to_string(&r.csv_path).unwrap();
        assert!(text.starts_with("x_0,f_true_0,f_hat_0,lower_0,upper_0"));
        assert!(r.svg_path.exists());
    }

    #[test]
    fn summary_counts() {
        let cfg = small();
        let exp = Experiment::new(cfg).unwrap();
        let traces = run_matrix(&exp, &[ControllerKind::Linear], &[0, 1]).unwrap();
        let refs: Vec<&ClosedLoopTrace> = traces.iter().collect();
        let row = summarize(ControllerKind::Linear, &refs);
        assert_eq!(row.runs, 2);
        let mean = (traces[0].cumulative_cost + traces[1].cumulative_cost) / 2.0;
        assert!((row.mean_cost - mean).abs() < 1e-12);
    }
}
