//! Versioned JSON experiment configuration and the objects built from it.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::control_loop::{ControllerKind, ControllerSettings, Scenario};
use crate::error::{Error, Result};
use crate::estimator::{KernelSpec, Resamples, TrainingSet};
use crate::linearizer::GridSpec;
use crate::mpc::CostWeights;
use crate::plant::{collect_dataset, Dataset, DatasetPlan, Dynamics, NoiseSpec, TaskSpec, TrueSystem};
use crate::set_algebra::BoxSet;

pub const CONFIG_VERSION: u32 = 1;

/// Plant drift: the built-in cube root or an affine test system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SystemSpec {
    Cuberoot {
        dim: usize,
    },
    /// `f(x) = offset + matrix x`, matrix given row by row.
    Affine {
        offset: Vec<f64>,
        matrix: Vec<Vec<f64>>,
    },
}

/// Row-major dense matrix.
pub type Rows = Vec<Vec<f64>>;

fn rows_to_matrix(rows: &Rows, what: &str) -> Result<DMatrix<f64>> {
    let nr = rows.len();
    let nc = rows.first().map(Vec::len).unwrap_or(0);
    if nr == 0 || nc == 0 || rows.iter().any(|r| r.len() != nc) {
        return Err(Error::usage(format!("{what} must be a non-empty rectangular matrix")));
    }
    Ok(DMatrix::from_fn(nr, nc, |i, j| rows[i][j]))
}

fn scalar_rows(v: f64) -> Rows {
    vec![vec![v]]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSpec {
    pub state: Rows,
    pub input: Rows,
    pub terminal: Rows,
}

/// Query grid of the estimation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryGrid {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub version: u32,
    pub system: SystemSpec,
    pub input_matrix: Rows,
    pub noise: NoiseSpec,
    pub task: TaskSpec,
    pub dataset: DatasetPlan,
    pub kernel: KernelSpec,
    pub grid: GridSpec,
    pub alpha: f64,
    pub bootstrap_replicates: usize,
    pub bootstrap_seed: u64,
    pub center_estimation_band: bool,
    pub shorten_initial_horizon: bool,
    pub weights: WeightSpec,
    pub seeds: Vec<u64>,
    pub controllers: Vec<ControllerKind>,
    pub naive_tolerances: Vec<f64>,
    pub estimate_grid: QueryGrid,
    /// Time step whose open-loop plans are plotted.
    pub plan_snapshot_step: usize,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    /// The cube-root experiment.
    fn default() -> Self {
        let b1 = |c: f64, r: f64| BoxSet::from_slices(&[c], &[r]).expect("valid box");
        Self {
            version: CONFIG_VERSION,
            system: SystemSpec::Cuberoot { dim: 1 },
            input_matrix: scalar_rows(1.0),
            noise: NoiseSpec {
                mu: vec![0.0],
                sigma: vec![0.2],
                tau: vec![0.05],
                seed: 0,
            },
            task: TaskSpec {
                x_start: vec![4.0],
                x_goal: vec![-1.0],
                u_goal: vec![0.0],
                goal_set: b1(-1.0, 0.1),
                state_constraints: b1(1.25, 3.25),
                input_constraints: b1(0.0, 2.0),
                duration: 8,
                initial_horizon: 6,
            },
            dataset: DatasetPlan {
                count: 200,
                state_box: b1(1.25, 3.25),
                input_box: b1(0.0, 2.0),
                noisy: false,
                seed: 2024,
            },
            kernel: KernelSpec::new(0.8, 3, 1e-8),
            grid: GridSpec::new(0.01, 0.01, 50),
            alpha: 0.05,
            bootstrap_replicates: 200,
            bootstrap_seed: 7,
            center_estimation_band: true,
            shorten_initial_horizon: true,
            weights: WeightSpec {
                state: scalar_rows(1.0),
                input: scalar_rows(100.0),
                terminal: scalar_rows(1.0),
            },
            seeds: (0..10).collect(),
            controllers: vec![
                ControllerKind::Proposed,
                ControllerKind::Linear,
                ControllerKind::Unconstrained,
            ],
            naive_tolerances: (1..=10).map(|i| i as f64 / 10.0).collect(),
            estimate_grid: QueryGrid {
                lower: -2.0,
                upper: 4.0,
                count: 61,
            },
            plan_snapshot_step: 4,
            output_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text)
            .map_err(|e| Error::usage(format!("invalid config {}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::usage(format!(
                "config version {} is not supported (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        let sys = self.true_system()?;
        let n = sys.state_dim();
        self.task.validate()?;
        if self.task.x_start.len() != n || self.task.u_goal.len() != sys.input_dim() {
            return Err(Error::usage("task dimensions do not match the system"));
        }
        if self.dataset.count == 0 {
            return Err(Error::usage("dataset count must be positive"));
        }
        self.kernel.validate(n)?;
        self.grid.validate()?;
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::usage("alpha must lie in (0, 1)"));
        }
        if self.bootstrap_replicates < 50 {
            return Err(Error::usage("bootstrap_replicates must be at least 50"));
        }
        self.cost_weights()?;
        if self.seeds.is_empty() {
            return Err(Error::usage("at least one seed is required"));
        }
        for c in &self.controllers {
            if let ControllerKind::Naive { tol } = c {
                ControllerKind::naive(*tol)?;
            }
        }
        for tol in &self.naive_tolerances {
            ControllerKind::naive(*tol)?;
        }
        if self.estimate_grid.count < 2 || !(self.estimate_grid.upper > self.estimate_grid.lower) {
            return Err(Error::usage("estimate grid needs two or more points on a proper interval"));
        }
        Ok(())
    }

    pub fn true_system(&self) -> Result<TrueSystem> {
        let dynamics = match &self.system {
            SystemSpec::Cuberoot { dim } => Dynamics::CubeRoot { dim: *dim },
            SystemSpec::Affine { offset, matrix } => Dynamics::Affine {
                offset: DVector::from_column_slice(offset),
                matrix: rows_to_matrix(matrix, "system matrix")?,
            },
        };
        let b = rows_to_matrix(&self.input_matrix, "input matrix")?;
        TrueSystem::new(dynamics, b, self.noise.clone())
    }

    pub fn cost_weights(&self) -> Result<CostWeights> {
        CostWeights::new(
            rows_to_matrix(&self.weights.state, "state weight")?,
            rows_to_matrix(&self.weights.input, "input weight")?,
            rows_to_matrix(&self.weights.terminal, "terminal weight")?,
        )
    }

    pub fn controller_settings(&self) -> Result<ControllerSettings> {
        Ok(ControllerSettings {
            kernel: self.kernel,
            grid: self.grid,
            alpha: self.alpha,
            center_estimation_band: self.center_estimation_band,
            weights: self.cost_weights()?,
            shorten_initial_horizon: self.shorten_initial_horizon,
        })
    }

    /// Replaces the run seeds and the dataset seed.
    pub fn override_seed(&mut self, seed: u64) {
        self.seeds = vec![seed];
        self.dataset.seed = seed;
    }

    pub fn query_points(&self) -> Vec<DVector<f64>> {
        let g = &self.estimate_grid;
        (0..g.count)
            .map(|i| {
                let x = g.lower + (g.upper - g.lower) * i as f64 / (g.count - 1) as f64;
                DVector::from_element(1, x)
            })
            .collect()
    }
}

/// Plant, data and settings materialized from a config.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub system: TrueSystem,
    pub dataset: Dataset,
    pub training: TrainingSet,
    pub resamples: Resamples,
    pub settings: ControllerSettings,
}

impl Experiment {
    /// Collects the dataset from the plan.
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let system = config.true_system()?;
        let dataset = collect_dataset(&system, &config.dataset)?;
        Self::with_dataset(config, dataset)
    }

    pub fn with_dataset(config: ExperimentConfig, dataset: Dataset) -> Result<Self> {
        config.validate()?;
        let system = config.true_system()?;
        if dataset.is_empty() {
            return Err(Error::usage("dataset is empty"));
        }
        if dataset.state_dim() != system.state_dim() || dataset.input_dim() != system.input_dim() {
            return Err(Error::usage("dataset dimensions do not match the system"));
        }
        if dataset.len() < config.kernel.min_support {
            return Err(Error::usage(format!(
                "dataset has {} records, fewer than the kernel's min_support {}",
                dataset.len(),
                config.kernel.min_support
            )));
        }
        let training = TrainingSet::from_dataset(&dataset, &system.input_matrix)?;
        let resamples = Resamples::draw(training.len(), config.bootstrap_replicates, config.bootstrap_seed);
        let settings = config.controller_settings()?;
        Ok(Self {
            config,
            system,
            dataset,
            training,
            resamples,
            settings,
        })
    }

    pub fn scenario(&self) -> Scenario<'_> {
        Scenario {
            task: &self.config.task,
            system: &self.system,
            training: &self.training,
            resamples: &self.resamples,
            settings: &self.settings,
        }
    }
}
