//! Hyper-parameter grids, k-fold cross validation with kernel reuse and
//! lambda-path warm starts, and selection of the final model.

use std::collections::BTreeSet;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::dataio::{Dataset, FoldAssignment};
use crate::error::{Error, Result};
use crate::kernel::{self, dataset_token, CacheKey, KernelCache, KernelFamily, KernelMatrix, KernelSpec};
use crate::parallel;
use crate::solver::{self, LossKind, LossSpec, SolverProblem, SolverResult, StopRule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridSource {
    Libsvm,
    Default10x10,
    Grid15,
    Grid20,
    Custom,
}

/// Candidate bandwidths and regularization values, both strictly descending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub gammas: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub weights: Option<Vec<f64>>,
    pub source: GridSource,
    /// libsvm-convention values behind `gammas` and `lambdas`, for display.
    pub libsvm_g: Option<Vec<f64>>,
    pub libsvm_cost: Option<Vec<f64>>,
}

fn geometric(hi: f64, lo: f64, size: usize) -> Vec<f64> {
    if size == 1 {
        return vec![hi];
    }
    let ratio = (lo / hi).powf(1.0 / (size - 1) as f64);
    (0..size)
        .map(|i| if i + 1 == size { lo } else { hi * ratio.powi(i as i32) })
        .collect()
}

fn check_descending(name: &str, v: &[f64]) -> Result<()> {
    if v.is_empty() {
        return Err(Error::Argument(format!("{name} list is empty")));
    }
    if v.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
        return Err(Error::Argument(format!("{name} values must be positive")));
    }
    if v.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Argument(format!("{name} values must be strictly descending")));
    }
    Ok(())
}

impl Grid {
    /// Sorts the given values descending; duplicates are rejected.
    pub fn custom(mut gammas: Vec<f64>, mut lambdas: Vec<f64>) -> Result<Self> {
        gammas.sort_by(|a, b| b.total_cmp(a));
        lambdas.sort_by(|a, b| b.total_cmp(a));
        check_descending("gamma", &gammas)?;
        check_descending("lambda", &lambdas)?;
        Ok(Self {
            gammas,
            lambdas,
            weights: None,
            source: GridSource::Custom,
            libsvm_g: None,
            libsvm_cost: None,
        })
    }

    pub fn len(&self) -> usize {
        self.gammas.len() * self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_gammas(&self) -> usize {
        self.gammas.len()
    }

    pub fn n_lambdas(&self) -> usize {
        self.lambdas.len()
    }
}

/// Geometric grid whose endpoints scale with the fold size and the dimension.
pub fn build_default_grid(n_fold: usize, dim: usize, size: usize) -> Result<Grid> {
    let source = match size {
        10 => GridSource::Default10x10,
        15 => GridSource::Grid15,
        20 => GridSource::Grid20,
        _ => return Err(Error::Argument(format!("grid size must be 10, 15 or 20, got {size}"))),
    };
    if n_fold < 2 || dim < 1 {
        return Err(Error::Argument(format!(
            "default grid needs n_fold >= 2 and dim >= 1, got {n_fold} and {dim}"
        )));
    }
    let root = (dim as f64).sqrt();
    let gamma_max = 5.0 * root;
    let gamma_min = 0.2 * root * (n_fold as f64).powf(-1.0 / dim as f64);
    let lambda_max = 0.1;
    let lambda_min = 0.001 / n_fold as f64;
    Ok(Grid {
        gammas: geometric(gamma_max, gamma_min, size),
        lambdas: geometric(lambda_max, lambda_min, size),
        weights: None,
        source,
        libsvm_g: None,
        libsvm_cost: None,
    })
}

pub const LIBSVM_G_EXPONENTS: [i32; 10] = [3, 1, -1, -3, -5, -7, -9, -11, -13, -15];
pub const LIBSVM_COST_EXPONENTS: [i32; 11] = [-5, -3, -1, 1, 3, 5, 7, 9, 11, 13, 15];

/// The 10 x 11 grid of libsvm's `grid.py`, converted to bandwidths and lambdas.
pub fn build_libsvm_grid(n_fold: usize) -> Result<Grid> {
    if n_fold < 2 {
        return Err(Error::Argument(format!("libsvm grid needs n_fold >= 2, got {n_fold}")));
    }
    // g descending means bandwidth ascending; store the bandwidths descending.
    let mut g: Vec<f64> = LIBSVM_G_EXPONENTS.iter().map(|&e| 2f64.powi(e)).collect();
    g.reverse();
    let gammas = g.iter().map(|&v| KernelSpec::gamma_from_libsvm(v)).collect();
    // Cost ascending gives lambda descending.
    let cost: Vec<f64> = LIBSVM_COST_EXPONENTS.iter().map(|&e| 2f64.powi(e)).collect();
    let lambdas = cost.iter().map(|&c| 1.0 / (2.0 * c * n_fold as f64)).collect();
    Ok(Grid {
        gammas,
        lambdas,
        weights: None,
        source: GridSource::Libsvm,
        libsvm_g: Some(g),
        libsvm_cost: Some(cost),
    })
}

/// Loss used on the held-out fold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationMetric {
    /// Fraction of misclassified samples, predicting +1 iff the decision value is positive.
    Classification,
    /// Misclassification cost `w` on positives and 1 on negatives, averaged over samples.
    WeightedClassification { positive_weight: f64 },
    Loss(LossSpec),
}

impl ValidationMetric {
    pub fn default_for(loss: &LossSpec) -> Self {
        match loss.kind {
            LossKind::Hinge if loss.weight == 1.0 => Self::Classification,
            LossKind::Hinge => Self::WeightedClassification {
                positive_weight: loss.weight,
            },
            _ => Self::Loss(*loss),
        }
    }

    pub(crate) fn sample_loss(&self, y: f64, t: f64) -> f64 {
        let predicted_positive = t > 0.0;
        match self {
            Self::Classification => {
                if predicted_positive != (y > 0.0) {
                    1.0
                } else {
                    0.0
                }
            }
            Self::WeightedClassification { positive_weight } => match (y > 0.0, predicted_positive) {
                (true, false) => *positive_weight,
                (false, true) => 1.0,
                _ => 0.0,
            },
            Self::Loss(l) => l.eval(y, t),
        }
    }
}

/// Decision outcomes pooled over folds, with -1 as the negative (normal) class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub positives: usize,
    pub negatives: usize,
    pub detections: usize,
    pub false_alarms: usize,
}

impl ClassCounts {
    pub fn add(&mut self, other: &ClassCounts) {
        self.positives += other.positives;
        self.negatives += other.negatives;
        self.detections += other.detections;
        self.false_alarms += other.false_alarms;
    }

    pub fn false_alarm_rate(&self) -> f64 {
        if self.negatives == 0 {
            0.0
        } else {
            self.false_alarms as f64 / self.negatives as f64
        }
    }

    pub fn detection_rate(&self) -> f64 {
        if self.positives == 0 {
            0.0
        } else {
            self.detections as f64 / self.positives as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridEntry {
    pub mean_loss: f64,
    pub fold_losses: Vec<f64>,
    pub iterations: Vec<u64>,
    pub converged: Vec<bool>,
    pub counts: ClassCounts,
}

impl GridEntry {
    pub fn all_converged(&self) -> bool {
        self.converged.iter().all(|&c| c)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CvCounters {
    pub gram_computations: usize,
    pub cross_computations: usize,
    pub cache_hits: usize,
    pub solves: usize,
}

impl CvCounters {
    pub fn add(&mut self, other: &CvCounters) {
        self.gram_computations += other.gram_computations;
        self.cross_computations += other.cross_computations;
        self.cache_hits += other.cache_hits;
        self.solves += other.solves;
    }
}

/// Validation results for every `(gamma, lambda)` grid point; unevaluated points are `None`.
#[derive(Debug, Clone)]
pub struct ValidationTable {
    pub n_gammas: usize,
    pub n_lambdas: usize,
    pub k: usize,
    pub entries: Vec<Option<GridEntry>>,
    pub counters: CvCounters,
    /// Fold solutions, indexed `[fold][gamma * n_lambdas + lambda]`.
    fold_results: Vec<Vec<Option<SolverResult>>>,
}

impl ValidationTable {
    /// A table from precomputed entries (index `g * n_lambdas + l`), without fold solutions.
    pub fn from_entries(n_gammas: usize, n_lambdas: usize, k: usize, entries: Vec<Option<GridEntry>>) -> Result<Self> {
        if entries.len() != n_gammas * n_lambdas {
            return Err(Error::DimensionMismatch {
                expected: n_gammas * n_lambdas,
                found: entries.len(),
            });
        }
        Ok(Self {
            n_gammas,
            n_lambdas,
            k,
            fold_results: vec![vec![None; entries.len()]; k],
            entries,
            counters: CvCounters::default(),
        })
    }

    fn empty(grid: &Grid, k: usize) -> Self {
        let size = grid.len();
        Self {
            n_gammas: grid.n_gammas(),
            n_lambdas: grid.n_lambdas(),
            k,
            entries: vec![None; size],
            counters: CvCounters::default(),
            fold_results: vec![vec![None; size]; k],
        }
    }

    #[inline]
    fn index(&self, g: usize, l: usize) -> usize {
        g * self.n_lambdas + l
    }

    pub fn get(&self, g: usize, l: usize) -> Option<&GridEntry> {
        self.entries[self.index(g, l)].as_ref()
    }

    pub fn is_evaluated(&self, g: usize, l: usize) -> bool {
        self.get(g, l).is_some()
    }

    pub fn evaluated_count(&self) -> usize {
        self.entries.iter().filter(|e| e.is_some()).count()
    }

    /// The fold solution at a grid point, when it was evaluated.
    pub fn fold_result(&self, fold: usize, g: usize, l: usize) -> Option<&SolverResult> {
        self.fold_results[fold][self.index(g, l)].as_ref()
    }

    /// Drops stored fold solutions to release memory.
    pub fn discard_fold_results(&mut self) {
        for f in &mut self.fold_results {
            f.iter_mut().for_each(|r| *r = None);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CvOptions {
    pub family: KernelFamily,
    pub tolerance: f64,
    pub max_iterations: Option<u64>,
    pub warm_start: bool,
    pub workers: usize,
    pub stop_rule: StopRule,
}

impl Default for CvOptions {
    fn default() -> Self {
        Self {
            family: KernelFamily::GaussianRbf,
            tolerance: solver::CV_TOLERANCE,
            max_iterations: None,
            warm_start: true,
            workers: 1,
            stop_rule: StopRule::Clipped,
        }
    }
}

/// Input shared by the evaluation helpers.
struct CvContext<'a> {
    data: &'a Dataset,
    loss: LossSpec,
    grid: &'a Grid,
    folds: &'a FoldAssignment,
    metric: ValidationMetric,
    options: CvOptions,
}

struct UnitOutput {
    fold: usize,
    gamma: usize,
    results: Vec<(usize, SolverResult, f64, ClassCounts)>,
    counters: CvCounters,
}

fn fold_split(folds: &FoldAssignment, fold: usize) -> (Vec<usize>, Vec<usize>) {
    (folds.training_indices(fold), folds.validation_indices(fold))
}

fn cross_token(val: &[usize], train: &[usize]) -> u64 {
    let mut joined = Vec::with_capacity(val.len() + train.len() + 1);
    joined.extend_from_slice(val);
    joined.push(usize::MAX);
    joined.extend_from_slice(train);
    dataset_token(&joined)
}

fn lookup_or_compute<F>(
    cache: Option<&Mutex<KernelCache>>,
    key: CacheKey,
    counters: &mut CvCounters,
    compute: F,
) -> Result<Arc<KernelMatrix>>
where
    F: FnOnce() -> Result<KernelMatrix>,
{
    if let Some(c) = cache {
        if let Some(m) = c.lock().expect("cache lock").lookup(&key) {
            counters.cache_hits += 1;
            return Ok(m);
        }
    }
    let m = Arc::new(compute()?);
    if let Some(c) = cache {
        c.lock().expect("cache lock").insert(key, Arc::clone(&m));
    }
    Ok(m)
}

/// One (fold, gamma) unit: Gram and validation kernels, then the lambda path.
fn run_unit(
    ctx: &CvContext<'_>,
    fold: usize,
    gamma: usize,
    lambdas: &[usize],
    prior: &[(usize, Vec<f64>)],
    cache: Option<&Mutex<KernelCache>>,
    inner_workers: usize,
) -> Result<UnitOutput> {
    let spec = KernelSpec::new(ctx.options.family, ctx.grid.gammas[gamma])?;
    let (train_idx, val_idx) = fold_split(ctx.folds, fold);
    let train = ctx.data.subset(&train_idx)?;
    let val = ctx.data.subset(&val_idx)?;
    let mut counters = CvCounters::default();
    let gram = lookup_or_compute(cache, CacheKey::new(&spec, dataset_token(&train_idx)), &mut counters, || {
        Ok(kernel::gram_matrix(&spec, &train, inner_workers))
    })?;
    if counters.cache_hits == 0 {
        counters.gram_computations += 1;
    }
    let hits_before = counters.cache_hits;
    let cross = lookup_or_compute(cache, CacheKey::new(&spec, cross_token(&val_idx, &train_idx)), &mut counters, || {
        kernel::cross_matrix(&spec, &val, &train, inner_workers)
    })?;
    if counters.cache_hits == hits_before {
        counters.cross_computations += 1;
    }
    let labels = train.labels();
    let mut results = Vec::with_capacity(lambdas.len());
    let mut previous: Option<(f64, Vec<f64>)> = None;
    let mut wanted = lambdas.iter().copied().peekable();
    let mut known = prior.iter().peekable();
    let mut fold_predictions = vec![0.0; val.len()];
    // Walk lambda indices ascending (values descending), using known solutions as warm starts.
    loop {
        let next_wanted = wanted.peek().copied();
        let next_known = known.peek().map(|(l, _)| *l);
        let l = match (next_wanted, next_known) {
            (None, _) => break,
            (Some(w), Some(k)) if k < w => {
                let (lk, beta) = known.next().expect("peeked");
                previous = Some((ctx.grid.lambdas[*lk], beta.clone()));
                continue;
            }
            (Some(w), _) => {
                wanted.next();
                w
            }
        };
        let lambda = ctx.grid.lambdas[l];
        let mut problem = SolverProblem::new(&gram, labels, lambda, ctx.loss);
        problem.tolerance = ctx.options.tolerance;
        problem.max_iterations = ctx.options.max_iterations;
        problem.stop_rule = ctx.options.stop_rule;
        if ctx.options.warm_start {
            if let Some((prev_lambda, beta)) = &previous {
                problem.init = Some(solver::warm_start_transform(beta, *prev_lambda, lambda, &ctx.loss));
            }
        }
        let mut result = solver::solve(&problem)?;
        result.trace.clear();
        counters.solves += 1;
        cross.mul_vec(&result.beta, &mut fold_predictions);
        let (loss, counts) = evaluate_predictions(&ctx.loss, &ctx.metric, val.labels(), &fold_predictions);
        previous = Some((lambda, result.beta.clone()));
        results.push((l, result, loss, counts));
    }
    Ok(UnitOutput {
        fold,
        gamma,
        results,
        counters,
    })
}

/// Mean validation loss (hinge predictions clipped to `[-1, 1]`) and decision counts.
pub(crate) fn evaluate_predictions(
    loss: &LossSpec,
    metric: &ValidationMetric,
    labels: &[f64],
    predictions: &[f64],
) -> (f64, ClassCounts) {
    let mut total = 0.0;
    let mut counts = ClassCounts::default();
    for (&y, &p) in labels.iter().zip(predictions) {
        let t = if loss.kind == LossKind::Hinge { p.clamp(-1.0, 1.0) } else { p };
        total += metric.sample_loss(y, t);
        if y > 0.0 {
            counts.positives += 1;
            if t > 0.0 {
                counts.detections += 1;
            }
        } else {
            counts.negatives += 1;
            if t > 0.0 {
                counts.false_alarms += 1;
            }
        }
    }
    let mean = if labels.is_empty() { 0.0 } else { total / labels.len() as f64 };
    (mean, counts)
}

/// Evaluates the masked grid points, filling `table`.
fn evaluate_points(
    ctx: &CvContext<'_>,
    table: &mut ValidationTable,
    mask: &[bool],
    cache: Option<&Mutex<KernelCache>>,
) -> Result<()> {
    let k = ctx.folds.k;
    let nl = table.n_lambdas;
    let mut units: Vec<(usize, usize, Vec<usize>, Vec<(usize, Vec<f64>)>)> = Vec::new();
    for fold in 0..k {
        for g in 0..table.n_gammas {
            let lambdas: Vec<usize> = (0..nl).filter(|&l| mask[g * nl + l]).collect();
            if lambdas.is_empty() {
                continue;
            }
            let prior = (0..nl)
                .filter_map(|l| {
                    table.fold_results[fold][g * nl + l]
                        .as_ref()
                        .map(|r| (l, r.beta.clone()))
                })
                .collect();
            units.push((fold, g, lambdas, prior));
        }
    }
    if units.is_empty() {
        return Ok(());
    }
    let workers = ctx.options.workers.max(1);
    let inner_workers = (workers / units.len()).max(1);
    let outputs = parallel::map_indexed(workers.min(units.len()), units.len(), |u| {
        let (fold, g, lambdas, prior) = &units[u];
        run_unit(ctx, *fold, *g, lambdas, prior, cache, inner_workers)
    });
    let mut pending: Vec<Vec<Option<(f64, ClassCounts, u64, bool)>>> = vec![vec![None; k]; table.entries.len()];
    for out in outputs {
        let out = out?;
        table.counters.add(&out.counters);
        for (l, result, loss, counts) in out.results {
            let idx = out.gamma * nl + l;
            pending[idx][out.fold] = Some((loss, counts, result.iterations, result.converged));
            table.fold_results[out.fold][idx] = Some(result);
        }
    }
    for (idx, per_fold) in pending.into_iter().enumerate() {
        if !mask[idx] {
            continue;
        }
        let mut entry = GridEntry {
            mean_loss: 0.0,
            fold_losses: Vec::with_capacity(k),
            iterations: Vec::with_capacity(k),
            converged: Vec::with_capacity(k),
            counts: ClassCounts::default(),
        };
        for v in per_fold {
            let (loss, counts, iters, conv) = v.ok_or_else(|| Error::Selection("missing fold result".into()))?;
            entry.fold_losses.push(loss);
            entry.iterations.push(iters);
            entry.converged.push(conv);
            entry.counts.add(&counts);
        }
        entry.mean_loss = entry.fold_losses.iter().sum::<f64>() / k as f64;
        table.entries[idx] = Some(entry);
    }
    Ok(())
}

fn check_inputs(data: &Dataset, grid: &Grid, folds: &FoldAssignment) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Argument("empty hyper-parameter grid".into()));
    }
    if folds.fold_of.len() != data.len() {
        return Err(Error::DimensionMismatch {
            expected: data.len(),
            found: folds.fold_of.len(),
        });
    }
    if folds.fold_sizes().iter().any(|&s| s == 0 || s == data.len()) {
        return Err(Error::Argument("every fold must hold out a proper, non-empty subset".into()));
    }
    Ok(())
}

/// Full-grid k-fold cross validation.
pub fn cross_validate(
    data: &Dataset,
    loss: &LossSpec,
    grid: &Grid,
    folds: &FoldAssignment,
    metric: ValidationMetric,
    options: &CvOptions,
) -> Result<ValidationTable> {
    check_inputs(data, grid, folds)?;
    let ctx = CvContext {
        data,
        loss: *loss,
        grid,
        folds,
        metric,
        options: *options,
    };
    let mut table = ValidationTable::empty(grid, folds.k);
    let mask = vec![true; grid.len()];
    evaluate_points(&ctx, &mut table, &mask, None)?;
    Ok(table)
}

/// Grid points within 5% of the best mean validation loss trigger refinement.
pub const ADAPTIVE_BAND: f64 = 0.05;

/// Coarse-to-fine schedule over an `n_gammas x n_lambdas` grid: every 2nd
/// (level 1) or 3rd (level 2) point first, then the unevaluated neighbors of
/// points within [`ADAPTIVE_BAND`] of the best loss until none remain, so the
/// best point's neighborhood always ends up evaluated.
///
/// `evaluate` receives a mask of points to evaluate next (index `g * n_lambdas + l`)
/// and returns the losses of all points evaluated so far.
pub fn adaptive_search<F>(n_gammas: usize, n_lambdas: usize, control_level: u8, mut evaluate: F) -> Result<()>
where
    F: FnMut(&[bool]) -> Result<Vec<Option<f64>>>,
{
    let stride = match control_level {
        1 => 2,
        2 => 3,
        _ => return Err(Error::Argument(format!("adaptivity level must be 1 or 2, got {control_level}"))),
    };
    let (ng, nl) = (n_gammas, n_lambdas);
    if ng < 4 || nl < 4 {
        return Err(Error::Argument("adaptive search needs at least a 4 x 4 grid".into()));
    }
    let mut mask = vec![false; ng * nl];
    for g in (0..ng).step_by(stride) {
        for l in (0..nl).step_by(stride) {
            mask[g * nl + l] = true;
        }
    }
    loop {
        let losses = evaluate(&mask)?;
        let best = losses.iter().flatten().copied().fold(f64::INFINITY, f64::min);
        let band = best + ADAPTIVE_BAND * best.abs();
        let mut next: BTreeSet<usize> = BTreeSet::new();
        for g in 0..ng {
            for l in 0..nl {
                match losses[g * nl + l] {
                    Some(v) if v <= band => {}
                    _ => continue,
                }
                for dg in -1i64..=1 {
                    for dl in -1i64..=1 {
                        let (gg, ll) = (g as i64 + dg, l as i64 + dl);
                        if gg < 0 || ll < 0 || gg >= ng as i64 || ll >= nl as i64 {
                            continue;
                        }
                        let idx = gg as usize * nl + ll as usize;
                        if losses[idx].is_none() {
                            next.insert(idx);
                        }
                    }
                }
            }
        }
        if next.is_empty() {
            return Ok(());
        }
        mask.iter_mut().for_each(|m| *m = false);
        for idx in next {
            mask[idx] = true;
        }
    }
}

/// Cross validation on the points chosen by [`adaptive_search`].
pub fn adaptive_cross_validate(
    data: &Dataset,
    loss: &LossSpec,
    grid: &Grid,
    folds: &FoldAssignment,
    metric: ValidationMetric,
    options: &CvOptions,
    control_level: u8,
) -> Result<ValidationTable> {
    check_inputs(data, grid, folds)?;
    let ctx = CvContext {
        data,
        loss: *loss,
        grid,
        folds,
        metric,
        options: *options,
    };
    let mut table = ValidationTable::empty(grid, folds.k);
    // Keep one Gram and one validation kernel per (fold, gamma) when memory allows.
    let n_fold = data.len() - data.len() / folds.k;
    let bytes = (n_fold * data.len()).max(1) * std::mem::size_of::<f64>();
    let budget = 512usize << 20;
    let capacity = (budget / bytes).clamp(2 * folds.k, 2 * folds.k * grid.n_gammas());
    let cache = Mutex::new(KernelCache::new(capacity));
    adaptive_search(grid.n_gammas(), grid.n_lambdas(), control_level, |mask| {
        evaluate_points(&ctx, &mut table, mask, Some(&cache))?;
        Ok(table.entries.iter().map(|e| e.as_ref().map(|e| e.mean_loss)).collect())
    })?;
    Ok(table)
}

/// The evaluated grid point with minimal mean validation loss. Ties prefer
/// converged points, then larger lambda, then larger gamma.
pub fn select_best(table: &ValidationTable, grid: &Grid) -> Result<(usize, usize)> {
    if grid.n_gammas() != table.n_gammas || grid.n_lambdas() != table.n_lambdas {
        return Err(Error::DimensionMismatch {
            expected: table.entries.len(),
            found: grid.len(),
        });
    }
    let mut best: Option<(usize, usize, &GridEntry)> = None;
    for g in 0..table.n_gammas {
        for l in 0..table.n_lambdas {
            let Some(e) = table.get(g, l) else { continue };
            if !e.mean_loss.is_finite() {
                continue;
            }
            let better = match best {
                None => true,
                Some((bg, bl, be)) => {
                    if e.mean_loss != be.mean_loss {
                        e.mean_loss < be.mean_loss
                    } else if e.all_converged() != be.all_converged() {
                        e.all_converged()
                    } else if grid.lambdas[l] != grid.lambdas[bl] {
                        grid.lambdas[l] > grid.lambdas[bl]
                    } else {
                        grid.gammas[g] > grid.gammas[bg]
                    }
                }
            };
            if better {
                best = Some((g, l, e));
            }
        }
    }
    best.map(|(g, l, _)| (g, l))
        .ok_or_else(|| Error::Selection("no usable grid point was evaluated".into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    #[default]
    RetrainSingle,
    KeepFoldModels,
}

impl std::str::FromStr for SelectionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "retrain_single" | "single" | "0" => Ok(Self::RetrainSingle),
            "keep_fold_models" | "folds" | "1" => Ok(Self::KeepFoldModels),
            _ => Err(Error::Argument(format!("unknown selection mode '{s}'"))),
        }
    }
}

/// One expansion over a subset of the working set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldModel {
    pub train_indices: Vec<usize>,
    pub result: SolverResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedModel {
    pub kernel: KernelSpec,
    pub lambda: f64,
    pub loss: LossSpec,
    pub mode: SelectionMode,
    pub models: Vec<FoldModel>,
    pub validation_loss: f64,
}

/// Builds the final model at grid point `(g, l)`. A retrain uses `options.tolerance`,
/// normally [`solver::FINAL_TOLERANCE`].
pub fn finalize(
    data: &Dataset,
    loss: &LossSpec,
    grid: &Grid,
    point: (usize, usize),
    mode: SelectionMode,
    table: &ValidationTable,
    folds: &FoldAssignment,
    options: &CvOptions,
) -> Result<SelectedModel> {
    let (g, l) = point;
    let entry = table
        .get(g, l)
        .ok_or_else(|| Error::Selection("chosen grid point was not evaluated".into()))?;
    let kernel = KernelSpec::new(options.family, grid.gammas[g])?;
    let lambda = grid.lambdas[l];
    let models = match mode {
        SelectionMode::RetrainSingle => {
            let gram = kernel::gram_matrix(&kernel, data, options.workers.max(1));
            let mut problem = SolverProblem::new(&gram, data.labels(), lambda, *loss);
            problem.tolerance = options.tolerance;
            problem.max_iterations = options.max_iterations;
            problem.stop_rule = options.stop_rule;
            let mut result = solver::solve(&problem)?;
            result.trace.clear();
            vec![FoldModel {
                train_indices: (0..data.len()).collect(),
                result,
            }]
        }
        SelectionMode::KeepFoldModels => (0..folds.k)
            .map(|f| {
                let result = table
                    .fold_result(f, g, l)
                    .cloned()
                    .ok_or_else(|| Error::Selection("fold solution was not retained".into()))?;
                Ok(FoldModel {
                    train_indices: folds.training_indices(f),
                    result,
                })
            })
            .collect::<Result<Vec<_>>>()?,
    };
    Ok(SelectedModel {
        kernel,
        lambda,
        loss: *loss,
        mode,
        models,
        validation_loss: entry.mean_loss,
    })
}

/// `sum_i beta_i k(x_i, x)` for every row of `test`, skipping zero coefficients.
pub fn kernel_expansion(
    spec: &KernelSpec,
    train: &Dataset,
    indices: &[usize],
    beta: &[f64],
    test: &Dataset,
    workers: usize,
) -> Result<Vec<f64>> {
    if train.dim() != test.dim() {
        return Err(Error::DimensionMismatch {
            expected: train.dim(),
            found: test.dim(),
        });
    }
    if indices.len() != beta.len() {
        return Err(Error::DimensionMismatch {
            expected: indices.len(),
            found: beta.len(),
        });
    }
    let support: Vec<(usize, f64)> = indices
        .iter()
        .zip(beta)
        .filter(|(_, b)| **b != 0.0)
        .map(|(i, b)| (*i, *b))
        .collect();
    let mut out = vec![0.0; test.len()];
    if support.is_empty() || test.is_empty() {
        return Ok(out);
    }
    let norms: Vec<f64> = support.iter().map(|(i, _)| kernel::dot(train.sample(*i), train.sample(*i))).collect();
    parallel::fill_rows(workers.max(1), &mut out, 1, |t, slot| {
        let x = test.sample(t);
        let xn = kernel::dot(x, x);
        let mut s = 0.0;
        for (j, (i, b)) in support.iter().enumerate() {
            let sq = kernel::sq_dist_expanded(x, xn, train.sample(*i), norms[j]);
            s += b * spec.from_sq_dist(sq);
        }
        slot[0] = s;
    });
    Ok(out)
}

impl SelectedModel {
    /// Decision values on `test`; fold models are averaged, each clipped first for hinge.
    pub fn decision_values(&self, train: &Dataset, test: &Dataset, workers: usize) -> Result<Vec<f64>> {
        let mut acc = vec![0.0; test.len()];
        if self.models.is_empty() {
            return Ok(acc);
        }
        let clip = self.loss.kind == LossKind::Hinge && self.mode == SelectionMode::KeepFoldModels;
        for m in &self.models {
            let v = kernel_expansion(&self.kernel, train, &m.train_indices, &m.result.beta, test, workers)?;
            for (a, x) in acc.iter_mut().zip(v) {
                *a += if clip { x.clamp(-1.0, 1.0) } else { x };
            }
        }
        let k = self.models.len() as f64;
        acc.iter_mut().for_each(|a| *a /= k);
        Ok(acc)
    }
}
