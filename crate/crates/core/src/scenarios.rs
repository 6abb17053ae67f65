//! End-to-end learning scenarios: tasks x cells, cross validation per
//! working set, and the test-phase combination of task outputs.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{Config, GridChoice, McType};
use crate::dataio::{compute_scaling, make_folds, Dataset, FoldMethod, Scaling};
use crate::error::{Error, Result};
use crate::modelselect::{
    adaptive_cross_validate, build_default_grid, build_libsvm_grid, cross_validate, finalize, select_best,
    ClassCounts, CvCounters, CvOptions, Grid, SelectedModel, ValidationMetric,
};
use crate::parallel;
use crate::solver::{LossKind, LossSpec};
use crate::workingsets::{
    create_tasks, distinct_labels, overlap_partition, random_chunks, recursive_partition, route_test_point,
    voronoi_partition, CellPartition, PartitionMethod, Route, Task, TaskKind,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    McAva,
    McOva,
    LeastSquares,
    Quantile,
    Expectile,
    WeightedBinary,
    Npl,
    Binary,
}

impl ScenarioKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::McAva => "mc_ava",
            Self::McOva => "mc_ova",
            Self::LeastSquares => "ls",
            Self::Quantile => "quantile",
            Self::Expectile => "expectile",
            Self::WeightedBinary => "weighted_binary",
            Self::Npl => "npl",
            Self::Binary => "binary",
        }
    }

    pub fn is_classification(&self) -> bool {
        matches!(
            self,
            Self::McAva | Self::McOva | Self::WeightedBinary | Self::Npl | Self::Binary
        )
    }

    /// Resolves a scenario name; `mc` picks the decomposition from `mc_type`.
    pub fn parse(name: &str, mc_type: McType) -> Result<Self> {
        Ok(match name.trim().to_ascii_lowercase().as_str() {
            "mc" => match mc_type {
                McType::Ava => Self::McAva,
                McType::Ova => Self::McOva,
            },
            "mc_ava" | "ava" => Self::McAva,
            "mc_ova" | "ova" => Self::McOva,
            "ls" | "least_squares" => Self::LeastSquares,
            "qt" | "quantile" => Self::Quantile,
            "ex" | "expectile" => Self::Expectile,
            "weighted" | "weighted_binary" => Self::WeightedBinary,
            "npl" => Self::Npl,
            "binary" | "bc" => Self::Binary,
            other => return Err(Error::Scenario(format!("unknown scenario `{other}`"))),
        })
    }
}

pub const DEFAULT_LEVELS: [f64; 5] = [0.05, 0.1, 0.5, 0.9, 0.95];

/// `2^-4, ..., 2^4`.
pub fn default_weights() -> Vec<f64> {
    (-4..=4).map(|e| 2f64.powi(e)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    pub levels: Vec<f64>,
    pub weights: Vec<f64>,
    pub npl_class: Option<f64>,
    pub npl_alpha: f64,
    /// Overrides the default classification loss.
    pub solver: Option<LossKind>,
}

impl ScenarioSpec {
    pub fn new(kind: ScenarioKind) -> Self {
        Self {
            kind,
            levels: DEFAULT_LEVELS.to_vec(),
            weights: default_weights(),
            npl_class: None,
            npl_alpha: 0.05,
            solver: None,
        }
    }

    pub fn from_config(kind: ScenarioKind, config: &Config) -> Self {
        let mut s = Self::new(kind);
        if let Some(l) = &config.levels {
            s.levels = l.clone();
        }
        if let Some(w) = &config.weights {
            s.weights = w.clone();
        }
        s.npl_class = config.npl_class;
        s.npl_alpha = config.npl_alpha;
        s.solver = config.solver;
        s
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == ScenarioKind::Npl && !(self.npl_alpha > 0.0 && self.npl_alpha < 1.0) {
            return Err(Error::Scenario(format!("npl_alpha must lie in (0, 1), got {}", self.npl_alpha)));
        }
        if matches!(self.kind, ScenarioKind::Npl | ScenarioKind::WeightedBinary) && self.weights.is_empty() {
            return Err(Error::Scenario("weights must be nonempty".into()));
        }
        Ok(())
    }
}

/// Model of one (task, cell) working set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellModel {
    /// Used when the working set is too small for cross validation or has one class.
    Constant { value: f64 },
    Kernel(SelectedModel),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobSummary {
    pub task: usize,
    pub cell: usize,
    pub size: usize,
    pub gamma: Option<f64>,
    pub lambda: Option<f64>,
    pub validation_loss: Option<f64>,
    pub converged: bool,
    pub evaluated_points: usize,
    pub counts: ClassCounts,
    pub counters: CvCounters,
    /// `(gamma, lambda, mean validation loss)` per evaluated grid point, kept for display level 2.
    #[serde(skip)]
    pub grid_trace: Vec<(f64, f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NplStats {
    pub false_alarm_rate: f64,
    pub detection_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NplChoice {
    pub index: usize,
    pub weight: f64,
    pub stats: NplStats,
    pub constraint_violated: bool,
}

/// Among weights with false-alarm rate at most `alpha` the one with the best
/// detection rate; otherwise the one with the smallest false-alarm rate, flagged.
pub fn npl_select(stats: &[NplStats], weights: &[f64], alpha: f64) -> Result<NplChoice> {
    if stats.is_empty() || stats.len() != weights.len() {
        return Err(Error::Selection("npl selection needs one statistic per weight".into()));
    }
    let feasible: Vec<usize> = (0..stats.len()).filter(|&i| stats[i].false_alarm_rate <= alpha).collect();
    let pick = |candidates: &[usize], better: &dyn Fn(&NplStats, &NplStats) -> bool| {
        let mut best = candidates[0];
        for &i in &candidates[1..] {
            if better(&stats[i], &stats[best]) {
                best = i;
            }
        }
        best
    };
    let (index, violated) = if feasible.is_empty() {
        let all: Vec<usize> = (0..stats.len()).collect();
        let i = pick(&all, &|a, b| {
            a.false_alarm_rate < b.false_alarm_rate
                || (a.false_alarm_rate == b.false_alarm_rate && a.detection_rate > b.detection_rate)
        });
        (i, true)
    } else {
        let i = pick(&feasible, &|a, b| {
            a.detection_rate > b.detection_rate
                || (a.detection_rate == b.detection_rate && a.false_alarm_rate < b.false_alarm_rate)
        });
        (i, false)
    };
    Ok(NplChoice {
        index,
        weight: weights[index],
        stats: stats[index],
        constraint_violated: violated,
    })
}

pub const MODEL_FORMAT: &str = "cellsvm-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub format: String,
    pub version: u32,
    pub scenario: ScenarioSpec,
    pub config: Config,
    pub dim: usize,
    pub scaling: Scaling,
    /// Sorted class labels (classification only).
    pub classes: Vec<f64>,
    pub partition: CellPartition,
    pub tasks: Vec<Task>,
    /// Scaled training points referenced by some model, row-major.
    pub support: Vec<f64>,
    /// `models[task][cell]`; kernel models index into `support`.
    pub models: Vec<Vec<CellModel>>,
    pub summary: Vec<JobSummary>,
    pub npl: Option<NplChoice>,
}

impl TrainedModel {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text).map_err(|e| Error::Model(e.to_string()))?;
        if m.format != MODEL_FORMAT {
            return Err(Error::Model(format!("not a model file (format `{}`)", m.format)));
        }
        if m.version != MODEL_VERSION {
            return Err(Error::Model(format!("unsupported model version {}", m.version)));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Number of (task, cell) working sets that went through cross validation.
    pub fn cv_runs(&self) -> usize {
        self.models
            .iter()
            .flatten()
            .filter(|m| matches!(m, CellModel::Kernel(_)))
            .count()
    }

    pub fn kernel_model_count(&self) -> usize {
        self.models
            .iter()
            .flatten()
            .map(|m| match m {
                CellModel::Kernel(s) => s.models.len(),
                CellModel::Constant { .. } => 0,
            })
            .sum()
    }

    /// Output column names of [`predict`].
    pub fn columns(&self) -> Vec<String> {
        match self.scenario.kind {
            ScenarioKind::Binary | ScenarioKind::McAva | ScenarioKind::McOva | ScenarioKind::Npl => vec!["label".into()],
            ScenarioKind::LeastSquares => vec!["value".into()],
            ScenarioKind::Quantile | ScenarioKind::Expectile => {
                self.scenario.levels.iter().map(|t| format!("tau={t}")).collect()
            }
            ScenarioKind::WeightedBinary => self.scenario.weights.iter().map(|w| format!("w={w}")).collect(),
        }
    }
}

fn validate_labels(spec: &ScenarioSpec, data: &Dataset) -> Result<()> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if spec.kind.is_classification() {
        if let Some(y) = data.labels().iter().find(|y| y.fract() != 0.0) {
            return Err(Error::Scenario(format!(
                "classification needs integer labels, found {y}"
            )));
        }
    }
    Ok(())
}

fn mix_seed(seed: u64, salt: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ salt.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn build_partition(config: &Config, data: &Dataset) -> Result<CellPartition> {
    let seed = mix_seed(config.seed, 0x5eed);
    let size = config.cell_size;
    match config.partition {
        PartitionMethod::None => Ok(CellPartition::single(data.len())),
        PartitionMethod::RandomChunk => random_chunks(data.len(), size, seed),
        PartitionMethod::VoronoiDisjoint => voronoi_partition(data, size, seed),
        PartitionMethod::VoronoiOverlap => overlap_partition(data, size, config.overlap_factor, seed),
        PartitionMethod::Recursive => recursive_partition(data, size, seed),
    }
}

fn grid_for(config: &Config, n_fold: usize, dim: usize) -> Result<Grid> {
    let base = match config.grid_choice {
        GridChoice::Default(size) => build_default_grid(n_fold, dim, size)?,
        GridChoice::Libsvm => build_libsvm_grid(n_fold)?,
    };
    match (&config.gammas, &config.lambdas) {
        (None, None) => Ok(base),
        (g, l) => Grid::custom(
            g.clone().unwrap_or(base.gammas),
            l.clone().unwrap_or(base.lambdas),
        ),
    }
}

/// Constant prediction for a working set that cannot be cross validated.
fn constant_value(task: &Task, y: &[f64]) -> f64 {
    if y.is_empty() {
        return 0.0;
    }
    if task.is_classification() {
        let pos = y.iter().filter(|&&v| v > 0.0).count();
        return if 2 * pos > y.len() { 1.0 } else { -1.0 };
    }
    match task.loss.kind {
        LossKind::Pinball => {
            let mut s = y.to_vec();
            s.sort_by(f64::total_cmp);
            let pos = ((task.loss.weight * s.len() as f64).ceil() as usize).clamp(1, s.len());
            s[pos - 1]
        }
        LossKind::Expectile => expectile_of(y, task.loss.weight),
        _ => y.iter().sum::<f64>() / y.len() as f64,
    }
}

/// Sample expectile by bisection on the first-order condition.
fn expectile_of(y: &[f64], tau: f64) -> f64 {
    let lo0 = y.iter().copied().fold(f64::INFINITY, f64::min);
    let hi0 = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (mut lo, mut hi) = (lo0, hi0);
    for _ in 0..200 {
        let m = 0.5 * (lo + hi);
        let g: f64 = y
            .iter()
            .map(|&v| if v >= m { tau * (v - m) } else { (1.0 - tau) * (v - m) })
            .sum();
        if g > 0.0 {
            lo = m;
        } else {
            hi = m;
        }
    }
    0.5 * (lo + hi)
}

struct JobOutput {
    model: CellModel,
    summary: JobSummary,
}

fn train_job(
    task: &Task,
    cell: usize,
    members: &[usize],
    data: &Dataset,
    config: &Config,
    classification: bool,
    workers: usize,
) -> Result<JobOutput> {
    let (idx, y) = task.working_set(data.labels(), members);
    let k = config.folds;
    let mut summary = JobSummary {
        task: task.id,
        cell,
        size: idx.len(),
        gamma: None,
        lambda: None,
        validation_loss: None,
        converged: true,
        evaluated_points: 0,
        counts: ClassCounts::default(),
        counters: CvCounters::default(),
        grid_trace: Vec::new(),
    };
    // Single-class sets are still cross validated; the solution just has one sign.
    if idx.len() < k.max(2) {
        return Ok(JobOutput {
            model: CellModel::Constant {
                value: constant_value(task, &y),
            },
            summary,
        });
    }
    let working = data.subset(&idx)?.with_labels(y)?;
    let original: Vec<f64> = idx.iter().map(|&i| data.labels()[i]).collect();
    let method = config.fold_method.unwrap_or(if classification {
        FoldMethod::Stratified
    } else {
        FoldMethod::Random
    });
    // Folds depend on the cell only, so tasks sharing a working set share folds.
    let folds = make_folds(&original, k, method, mix_seed(config.seed, cell as u64))?;
    let n_fold = (0..k).map(|f| working.len() - folds.fold_sizes()[f]).min().unwrap_or(0);
    let grid = grid_for(config, n_fold.max(2), working.dim())?;
    let options = CvOptions {
        family: config.kernel,
        tolerance: config.cv_tolerance,
        max_iterations: config.max_iterations,
        warm_start: true,
        workers,
        ..CvOptions::default()
    };
    let metric = ValidationMetric::default_for(&task.loss);
    let adaptive = config.adaptivity_control > 0 && grid.n_gammas() >= 4 && grid.n_lambdas() >= 4;
    let table = if adaptive {
        adaptive_cross_validate(&working, &task.loss, &grid, &folds, metric, &options, config.adaptivity_control)?
    } else {
        cross_validate(&working, &task.loss, &grid, &folds, metric, &options)?
    };
    let (g, l) = select_best(&table, &grid)?;
    let mut final_options = options;
    final_options.tolerance = config.final_tolerance;
    let mut selected = finalize(&working, &task.loss, &grid, (g, l), config.selection, &table, &folds, &final_options)?;
    // Coefficients refer to the full training set from here on.
    for m in &mut selected.models {
        m.train_indices = m.train_indices.iter().map(|&i| idx[i]).collect();
    }
    let entry = table.get(g, l).expect("selected point is evaluated");
    summary.gamma = Some(grid.gammas[g]);
    summary.lambda = Some(grid.lambdas[l]);
    summary.validation_loss = Some(entry.mean_loss);
    summary.converged = entry.all_converged() && selected.models.iter().all(|m| m.result.converged);
    summary.evaluated_points = table.evaluated_count();
    summary.counts = entry.counts;
    summary.counters = table.counters;
    if config.display >= 2 {
        for gi in 0..grid.n_gammas() {
            for li in 0..grid.n_lambdas() {
                if let Some(e) = table.get(gi, li) {
                    summary.grid_trace.push((grid.gammas[gi], grid.lambdas[li], e.mean_loss));
                }
            }
        }
    }
    Ok(JobOutput {
        model: CellModel::Kernel(selected),
        summary,
    })
}

/// Training phase: scaling, partition, tasks, and one cross validation per (task, cell).
pub fn train(spec: &ScenarioSpec, data: &Dataset, config: &Config) -> Result<TrainedModel> {
    spec.validate()?;
    validate_labels(spec, data)?;
    if config.folds < 2 {
        return Err(Error::Argument(format!("folds must be at least 2, got {}", config.folds)));
    }
    let tasks = create_tasks(spec, data.labels())?;
    let scaling = compute_scaling(data);
    let scaled = scaling.apply(data)?;
    let partition = build_partition(config, &scaled)?;
    let classification = spec.kind.is_classification();
    let classes = if classification { distinct_labels(data.labels()) } else { Vec::new() };
    let jobs: Vec<(usize, usize)> = (0..tasks.len())
        .flat_map(|t| (0..partition.len()).map(move |c| (t, c)))
        .collect();
    let workers = parallel::resolve_workers(config.threads);
    let outer = workers.min(jobs.len()).max(1);
    let inner = (workers / outer).max(1);
    let outputs = parallel::map_indexed(outer, jobs.len(), |j| {
        let (t, c) = jobs[j];
        train_job(&tasks[t], c, &partition.cells[c], &scaled, config, classification, inner)
    });
    let mut models: Vec<Vec<CellModel>> = vec![Vec::with_capacity(partition.len()); tasks.len()];
    let mut summary = Vec::with_capacity(jobs.len());
    for (j, out) in outputs.into_iter().enumerate() {
        let out = out?;
        models[jobs[j].0].push(out.model);
        summary.push(out.summary);
    }
    let support = compact_support(&scaled, &mut models);
    let npl = if spec.kind == ScenarioKind::Npl {
        let stats: Vec<NplStats> = (0..tasks.len())
            .map(|t| {
                let mut pooled = ClassCounts::default();
                summary.iter().filter(|s| s.task == t).for_each(|s| pooled.add(&s.counts));
                NplStats {
                    false_alarm_rate: pooled.false_alarm_rate(),
                    detection_rate: pooled.detection_rate(),
                }
            })
            .collect();
        Some(npl_select(&stats, &spec.weights, spec.npl_alpha)?)
    } else {
        None
    };
    Ok(TrainedModel {
        format: MODEL_FORMAT.into(),
        version: MODEL_VERSION,
        scenario: spec.clone(),
        config: config.clone(),
        dim: data.dim(),
        scaling,
        classes,
        partition,
        tasks,
        support,
        models,
        summary,
        npl,
    })
}

/// Keeps only training points with a nonzero coefficient and re-indexes the models.
fn compact_support(scaled: &Dataset, models: &mut [Vec<CellModel>]) -> Vec<f64> {
    let mut slot = vec![usize::MAX; scaled.len()];
    let mut order = Vec::new();
    for m in models.iter_mut().flatten() {
        let CellModel::Kernel(sel) = m else { continue };
        for fm in &mut sel.models {
            let mut idx = Vec::new();
            let mut beta = Vec::new();
            for (&i, &b) in fm.train_indices.iter().zip(&fm.result.beta) {
                if b == 0.0 {
                    continue;
                }
                if slot[i] == usize::MAX {
                    slot[i] = order.len();
                    order.push(i);
                }
                idx.push(slot[i]);
                beta.push(b);
            }
            fm.train_indices = idx;
            fm.result.beta = beta;
        }
    }
    let mut support = Vec::with_capacity(order.len() * scaled.dim());
    for &i in &order {
        support.extend_from_slice(scaled.sample(i));
    }
    support
}

#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub columns: Vec<String>,
    /// One row per test point.
    pub rows: Vec<Vec<f64>>,
}

/// Decision values `[task][point]` on unscaled test features; hinge outputs are clipped to `[-1, 1]`.
pub fn decision_values(model: &TrainedModel, test: &Dataset, workers: usize) -> Result<Vec<Vec<f64>>> {
    if test.dim() != model.dim {
        return Err(Error::DimensionMismatch {
            expected: model.dim,
            found: test.dim(),
        });
    }
    let scaled = model.scaling.apply(test)?;
    let n = scaled.len();
    let support_rows = model.support.len() / model.dim.max(1);
    let support = Dataset::new(model.support.clone(), vec![0.0; support_rows], model.dim)
        .or_else(|_| Dataset::new(Vec::new(), Vec::new(), model.dim))?;
    let routes: Vec<Route> = (0..n).map(|i| route_test_point(&model.partition, scaled.sample(i))).collect();
    let cells = model.partition.len();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); cells];
    let mut all = false;
    for (i, r) in routes.iter().enumerate() {
        match r {
            Route::Cell(c) => members[*c].push(i),
            Route::All => all = true,
        }
    }
    if all {
        members.iter_mut().for_each(|m| *m = (0..n).collect());
    }
    let workers = parallel::resolve_workers(workers);
    let mut out = vec![vec![0.0; n]; model.tasks.len()];
    for (t, task) in model.tasks.iter().enumerate() {
        let clip = task.loss.kind == LossKind::Hinge;
        for c in 0..cells {
            if members[c].is_empty() {
                continue;
            }
            let values = match &model.models[t][c] {
                CellModel::Constant { value } => vec![*value; members[c].len()],
                CellModel::Kernel(sel) => {
                    let pts = scaled.subset(&members[c])?;
                    sel.decision_values(&support, &pts, workers)?
                }
            };
            for (&i, v) in members[c].iter().zip(values) {
                let v = if clip { v.clamp(-1.0, 1.0) } else { v };
                if all {
                    out[t][i] += v / cells as f64;
                } else {
                    out[t][i] = v;
                }
            }
        }
    }
    Ok(out)
}

fn label_of(task: &Task, value: f64) -> f64 {
    if value > 0.0 {
        task.positive.expect("classification task")
    } else {
        task.negative.expect("binary task")
    }
}

/// Test phase: decision values combined per scenario.
pub fn predict(model: &TrainedModel, test: &Dataset, workers: usize) -> Result<Predictions> {
    let dv = decision_values(model, test, workers)?;
    let n = test.len();
    let tasks = &model.tasks;
    let rows = match model.scenario.kind {
        ScenarioKind::Binary => (0..n).map(|i| vec![label_of(&tasks[0], dv[0][i])]).collect(),
        ScenarioKind::Npl => {
            let w = model.npl.map_or(0, |c| c.index);
            (0..n).map(|i| vec![label_of(&tasks[w], dv[w][i])]).collect()
        }
        ScenarioKind::WeightedBinary => (0..n)
            .map(|i| tasks.iter().enumerate().map(|(t, task)| label_of(task, dv[t][i])).collect())
            .collect(),
        ScenarioKind::McOva => (0..n)
            .map(|i| {
                let mut best = 0;
                for t in 1..tasks.len() {
                    if dv[t][i] > dv[best][i] {
                        best = t;
                    }
                }
                vec![tasks[best].positive.expect("ova task")]
            })
            .collect(),
        ScenarioKind::McAva => {
            let classes = &model.classes;
            let pos = |c: f64| classes.iter().position(|&x| x == c).expect("known class");
            (0..n)
                .map(|i| {
                    let mut votes = vec![0usize; classes.len()];
                    let mut sums = vec![0.0; classes.len()];
                    for (t, task) in tasks.iter().enumerate() {
                        let v = dv[t][i];
                        let (p, q) = (pos(task.positive.unwrap()), pos(task.negative.unwrap()));
                        if v > 0.0 {
                            votes[p] += 1;
                        } else {
                            votes[q] += 1;
                        }
                        sums[p] += v;
                        sums[q] -= v;
                    }
                    let mut best = 0;
                    for c in 1..classes.len() {
                        if votes[c] > votes[best] || (votes[c] == votes[best] && sums[c] > sums[best]) {
                            best = c;
                        }
                    }
                    vec![classes[best]]
                })
                .collect()
        }
        ScenarioKind::LeastSquares | ScenarioKind::Quantile | ScenarioKind::Expectile => {
            (0..n).map(|i| (0..tasks.len()).map(|t| dv[t][i]).collect()).collect()
        }
    };
    Ok(Predictions {
        columns: model.columns(),
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub values: Vec<(String, f64)>,
}

impl Metrics {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.values.iter().find(|(k, _)| k == name).map(|(_, v)| *v)
    }
}

/// Scores predictions against true labels.
pub fn evaluate(predictions: &Predictions, labels: &[f64], model: &TrainedModel) -> Result<Metrics> {
    if predictions.rows.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: predictions.rows.len(),
            found: labels.len(),
        });
    }
    let n = labels.len().max(1) as f64;
    let column = |c: usize| predictions.rows.iter().map(move |r| r[c]);
    let spec = &model.scenario;
    let mut values = Vec::new();
    match spec.kind {
        ScenarioKind::Binary | ScenarioKind::McAva | ScenarioKind::McOva => {
            let wrong = column(0).zip(labels).filter(|(p, y)| p != *y).count();
            values.push(("error".to_string(), wrong as f64 / n));
        }
        ScenarioKind::WeightedBinary => {
            for (c, w) in spec.weights.iter().enumerate() {
                let wrong = column(c).zip(labels).filter(|(p, y)| p != *y).count();
                values.push((format!("error(w={w})"), wrong as f64 / n));
            }
        }
        ScenarioKind::Npl => {
            let normal = model.tasks[0].negative.expect("npl task");
            let (mut neg, mut alarms, mut pos, mut hits) = (0usize, 0usize, 0usize, 0usize);
            for (p, &y) in column(0).zip(labels) {
                if y == normal {
                    neg += 1;
                    alarms += usize::from(p != normal);
                } else {
                    pos += 1;
                    hits += usize::from(p != normal);
                }
            }
            let rate = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
            values.push(("false_alarm_rate".into(), rate(alarms, neg)));
            values.push(("detection_rate".into(), rate(hits, pos)));
        }
        ScenarioKind::LeastSquares => {
            let mse = column(0).zip(labels).map(|(p, y)| (y - p) * (y - p)).sum::<f64>() / n;
            values.push(("mse".into(), mse));
        }
        ScenarioKind::Quantile | ScenarioKind::Expectile => {
            for (c, &tau) in spec.levels.iter().enumerate() {
                let (loss, name) = if spec.kind == ScenarioKind::Quantile {
                    (LossSpec::pinball(tau), "pinball")
                } else {
                    (LossSpec::expectile(tau), "expectile")
                };
                let v = column(c).zip(labels).map(|(p, &y)| loss.eval(y, p)).sum::<f64>() / n;
                values.push((format!("{name}(tau={tau})"), v));
            }
        }
    }
    Ok(Metrics { values })
}

/// Chosen parameters of every (task, cell), one line each.
pub fn describe(model: &TrainedModel) -> Vec<String> {
    model
        .summary
        .iter()
        .map(|s| {
            let task = &model.tasks[s.task];
            let name = match task.kind {
                TaskKind::Binary => "binary".to_string(),
                TaskKind::Ova { class } => format!("ova {class}"),
                TaskKind::Ava { negative, positive } => format!("ava {negative}-{positive}"),
                TaskKind::Weighted { weight } => format!("weight {weight}"),
                TaskKind::LeastSquares => "ls".to_string(),
                TaskKind::Quantile { tau } => format!("quantile {tau}"),
                TaskKind::Expectile { tau } => format!("expectile {tau}"),
            };
            match (s.gamma, s.lambda, s.validation_loss) {
                (Some(g), Some(l), Some(v)) => format!(
                    "task {} ({name}) cell {} n={} gamma={g:.6} lambda={l:.3e} val_loss={v:.6}{}",
                    s.task,
                    s.cell,
                    s.size,
                    if s.converged { "" } else { " (not converged)" }
                ),
                _ => format!("task {} ({name}) cell {} n={} constant model", s.task, s.cell, s.size),
            }
        })
        .collect()
}
