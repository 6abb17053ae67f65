//! Tasks (label transformations per scenario) and cells (data partitions).

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::{Dataset, OrdF64};
use crate::error::{Error, Result};
use crate::scenarios::{ScenarioKind, ScenarioSpec};
use crate::solver::{LossKind, LossSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum TaskKind {
    Binary,
    Ova { class: f64 },
    Ava { negative: f64, positive: f64 },
    Weighted { weight: f64 },
    LeastSquares,
    Quantile { tau: f64 },
    Expectile { tau: f64 },
}

/// One solver sub-problem.
///
/// Classification tasks map `positive` to +1 and everything else they keep
/// to -1; `negative` is `None` when the rest is pooled (one-vs-all).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub id: usize,
    pub kind: TaskKind,
    pub loss: LossSpec,
    /// Classes kept by the task; `None` keeps every sample.
    pub keep_classes: Option<Vec<f64>>,
    pub positive: Option<f64>,
    pub negative: Option<f64>,
}

impl Task {
    pub fn is_classification(&self) -> bool {
        self.positive.is_some()
    }

    pub fn keeps(&self, label: f64) -> bool {
        self.keep_classes.as_ref().is_none_or(|c| c.contains(&label))
    }

    /// Solver label of an original label.
    pub fn map_label(&self, label: f64) -> f64 {
        match self.positive {
            Some(p) if label == p => 1.0,
            Some(_) => -1.0,
            None => label,
        }
    }

    /// Original label of a solver label, when the map is invertible.
    pub fn unmap_label(&self, solver_label: f64) -> Option<f64> {
        match (self.positive, self.negative) {
            (None, _) => Some(solver_label),
            (Some(p), _) if solver_label > 0.0 => Some(p),
            (Some(_), Some(n)) => Some(n),
            (Some(_), None) => None,
        }
    }

    /// Indices (ascending) of `candidates` the task keeps, with their solver labels.
    pub fn working_set(&self, labels: &[f64], candidates: &[usize]) -> (Vec<usize>, Vec<f64>) {
        let idx: Vec<usize> = candidates.iter().copied().filter(|&i| self.keeps(labels[i])).collect();
        let mapped = idx.iter().map(|&i| self.map_label(labels[i])).collect();
        (idx, mapped)
    }
}

/// Sorted distinct labels.
pub fn distinct_labels(labels: &[f64]) -> Vec<f64> {
    let mut v: Vec<OrdF64> = labels.iter().map(|&l| OrdF64(l)).collect();
    v.sort();
    v.dedup();
    v.into_iter().map(|o| o.0).collect()
}

fn classification_loss(spec: &ScenarioSpec, default: LossKind, weight: f64) -> LossSpec {
    match spec.solver.unwrap_or(default) {
        LossKind::LeastSquares => LossSpec::least_squares(),
        _ => LossSpec::hinge(weight),
    }
}

pub fn create_tasks(spec: &ScenarioSpec, labels: &[f64]) -> Result<Vec<Task>> {
    let classes = distinct_labels(labels);
    let classification = spec.kind.is_classification();
    if classification && classes.len() < 2 {
        return Err(Error::Scenario(format!(
            "classification needs at least two classes, found {}",
            classes.len()
        )));
    }
    let binary_classes = || -> Result<(f64, f64)> {
        if classes.len() != 2 {
            return Err(Error::Scenario(format!(
                "{} needs exactly two classes, found {}",
                spec.kind.name(),
                classes.len()
            )));
        }
        Ok((classes[0], classes[1]))
    };
    let mut tasks = Vec::new();
    let mut push = |kind, loss, keep: Option<Vec<f64>>, positive, negative| {
        tasks.push(Task {
            id: tasks.len(),
            kind,
            loss,
            keep_classes: keep,
            positive,
            negative,
        })
    };
    match spec.kind {
        ScenarioKind::Binary => {
            let (lo, hi) = binary_classes()?;
            push(TaskKind::Binary, classification_loss(spec, LossKind::Hinge, 1.0), None, Some(hi), Some(lo));
        }
        ScenarioKind::McOva => {
            for &c in &classes {
                push(TaskKind::Ova { class: c }, classification_loss(spec, LossKind::LeastSquares, 1.0), None, Some(c), None);
            }
        }
        ScenarioKind::McAva => {
            for (a, &c1) in classes.iter().enumerate() {
                for &c2 in &classes[a + 1..] {
                    push(
                        TaskKind::Ava { negative: c1, positive: c2 },
                        classification_loss(spec, LossKind::Hinge, 1.0),
                        Some(vec![c1, c2]),
                        Some(c2),
                        Some(c1),
                    );
                }
            }
        }
        ScenarioKind::WeightedBinary | ScenarioKind::Npl => {
            let (lo, hi) = binary_classes()?;
            let (pos, neg) = if spec.kind == ScenarioKind::Npl {
                let normal = spec
                    .npl_class
                    .ok_or_else(|| Error::Scenario("npl needs npl_class".into()))?;
                if normal == lo {
                    (hi, lo)
                } else if normal == hi {
                    (lo, hi)
                } else {
                    return Err(Error::Scenario(format!("npl_class {normal} is not a label of the data")));
                }
            } else {
                (hi, lo)
            };
            if spec.weights.is_empty() {
                return Err(Error::Scenario("weighted classification needs a nonempty weight list".into()));
            }
            for &w in &spec.weights {
                let loss = LossSpec::hinge(w);
                loss.validate()?;
                push(TaskKind::Weighted { weight: w }, loss, None, Some(pos), Some(neg));
            }
        }
        ScenarioKind::LeastSquares => push(TaskKind::LeastSquares, LossSpec::least_squares(), None, None, None),
        ScenarioKind::Quantile | ScenarioKind::Expectile => {
            if spec.levels.is_empty() {
                return Err(Error::Scenario("quantile/expectile regression needs levels".into()));
            }
            for &tau in &spec.levels {
                let (kind, loss) = if spec.kind == ScenarioKind::Quantile {
                    (TaskKind::Quantile { tau }, LossSpec::pinball(tau))
                } else {
                    (TaskKind::Expectile { tau }, LossSpec::expectile(tau))
                };
                loss.validate()?;
                push(kind, loss, None, None, None);
            }
        }
    }
    Ok(tasks)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionMethod {
    None,
    RandomChunk,
    VoronoiDisjoint,
    VoronoiOverlap,
    Recursive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SplitNode {
    Leaf(usize),
    Split {
        a: Vec<f64>,
        b: Vec<f64>,
        left: Box<SplitNode>,
        right: Box<SplitNode>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellPartition {
    pub method: PartitionMethod,
    pub max_cell_size: usize,
    /// Training members of each cell, ascending.
    pub cells: Vec<Vec<usize>>,
    /// Disjoint (core) cell of every training index.
    pub cell_of: Vec<usize>,
    pub centers: Vec<Vec<f64>>,
    pub radii: Vec<f64>,
    pub overlap_factor: f64,
    pub tree: Option<SplitNode>,
}

/// Where a test point is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Route {
    Cell(usize),
    /// Every cell predicts and the results are averaged.
    All,
}

impl CellPartition {
    pub fn single(n: usize) -> Self {
        Self {
            method: PartitionMethod::None,
            max_cell_size: n,
            cells: vec![(0..n).collect()],
            cell_of: vec![0; n],
            centers: Vec::new(),
            radii: Vec::new(),
            overlap_factor: 1.0,
            tree: None,
        }
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    fn from_assignment(method: PartitionMethod, max_cell_size: usize, cell_of: Vec<usize>, count: usize) -> Self {
        let mut cells = vec![Vec::new(); count];
        for (i, &c) in cell_of.iter().enumerate() {
            cells[c].push(i);
        }
        Self {
            method,
            max_cell_size,
            cells,
            cell_of,
            centers: Vec::new(),
            radii: Vec::new(),
            overlap_factor: 1.0,
            tree: None,
        }
    }
}

fn check_cell_size(size: usize) -> Result<()> {
    if size < 2 {
        return Err(Error::Argument(format!("cell size must be at least 2, got {size}")));
    }
    Ok(())
}

/// Random permutation split into `ceil(n / max_cell_size)` chunks whose sizes differ by at most one.
pub fn random_chunks(n: usize, max_cell_size: usize, seed: u64) -> Result<CellPartition> {
    check_cell_size(max_cell_size)?;
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let m = n.div_ceil(max_cell_size);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (n / m, n % m);
    let mut cell_of = vec![0; n];
    let mut pos = 0;
    for c in 0..m {
        let size = base + usize::from(c < extra);
        for &i in &perm[pos..pos + size] {
            cell_of[i] = c;
        }
        pos += size;
    }
    Ok(CellPartition::from_assignment(PartitionMethod::RandomChunk, max_cell_size, cell_of, m))
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest center, lowest index on ties.
pub fn nearest_center(centers: &[Vec<f64>], x: &[f64]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, center) in centers.iter().enumerate() {
        let d = sq_dist(center, x);
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    best
}

/// Farthest-first traversal from a seeded random start; cells are the Voronoi
/// regions of the chosen centers (empty regions from duplicate centers are dropped).
pub fn voronoi_partition(data: &Dataset, target_cell_size: usize, seed: u64) -> Result<CellPartition> {
    check_cell_size(target_cell_size)?;
    let n = data.len();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let m = n.div_ceil(target_cell_size);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = rng.gen_range(0..n);
    let mut chosen = vec![start];
    let mut dist: Vec<f64> = (0..n).map(|i| sq_dist(data.sample(i), data.sample(start))).collect();
    while chosen.len() < m {
        let mut far = 0;
        for i in 1..n {
            if dist[i] > dist[far] {
                far = i;
            }
        }
        chosen.push(far);
        let c = data.sample(far);
        for (i, d) in dist.iter_mut().enumerate() {
            *d = d.min(sq_dist(data.sample(i), c));
        }
    }
    let all_centers: Vec<Vec<f64>> = chosen.iter().map(|&i| data.sample(i).to_vec()).collect();
    let raw: Vec<usize> = (0..n).map(|i| nearest_center(&all_centers, data.sample(i))).collect();
    let mut used = vec![false; all_centers.len()];
    raw.iter().for_each(|&c| used[c] = true);
    let mut remap = vec![usize::MAX; all_centers.len()];
    let mut centers = Vec::new();
    for (c, center) in all_centers.into_iter().enumerate() {
        if used[c] {
            remap[c] = centers.len();
            centers.push(center);
        }
    }
    let cell_of: Vec<usize> = raw.iter().map(|&c| remap[c]).collect();
    let mut p = CellPartition::from_assignment(PartitionMethod::VoronoiDisjoint, target_cell_size, cell_of, centers.len());
    p.radii = p
        .cells
        .iter()
        .zip(&centers)
        .map(|(members, c)| {
            members
                .iter()
                .map(|&i| sq_dist(data.sample(i), c))
                .fold(0.0, f64::max)
                .sqrt()
        })
        .collect();
    p.centers = centers;
    Ok(p)
}

pub const DEFAULT_OVERLAP_FACTOR: f64 = 1.5;

/// Voronoi cells enlarged to every point within `overlap_factor` times the core radius.
pub fn overlap_partition(data: &Dataset, target_cell_size: usize, overlap_factor: f64, seed: u64) -> Result<CellPartition> {
    if !(overlap_factor >= 1.0 && overlap_factor.is_finite()) {
        return Err(Error::Argument(format!("overlap factor must be at least 1, got {overlap_factor}")));
    }
    let mut p = voronoi_partition(data, target_cell_size, seed)?;
    for (c, center) in p.centers.iter().enumerate() {
        let r = overlap_factor * p.radii[c];
        let r2 = r * r;
        p.cells[c] = (0..data.len())
            .filter(|&i| p.cell_of[i] == c || sq_dist(data.sample(i), center) <= r2)
            .collect();
    }
    p.method = PartitionMethod::VoronoiOverlap;
    p.overlap_factor = overlap_factor;
    Ok(p)
}

/// Repeated two-center splits until every cell has at most `max_cell_size` points.
///
/// A cell whose points all coincide is cut into consecutive chunks of
/// `max_cell_size` points (the last one smaller).
pub fn recursive_partition(data: &Dataset, max_cell_size: usize, seed: u64) -> Result<CellPartition> {
    check_cell_size(max_cell_size)?;
    let n = data.len();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cells: Vec<Vec<usize>> = Vec::new();
    let all: Vec<usize> = (0..n).collect();
    let tree = split_recursive(data, all, max_cell_size, &mut rng, &mut cells);
    let mut cell_of = vec![0; n];
    for (c, members) in cells.iter().enumerate() {
        for &i in members {
            cell_of[i] = c;
        }
    }
    let mut p = CellPartition::from_assignment(PartitionMethod::Recursive, max_cell_size, cell_of, cells.len());
    p.tree = Some(tree);
    Ok(p)
}

fn farthest(data: &Dataset, members: &[usize], from: &[f64]) -> (usize, f64) {
    let mut best = members[0];
    let mut best_d = -1.0;
    for &i in members {
        let d = sq_dist(data.sample(i), from);
        if d > best_d {
            best_d = d;
            best = i;
        }
    }
    (best, best_d)
}

fn split_recursive(
    data: &Dataset,
    members: Vec<usize>,
    max: usize,
    rng: &mut ChaCha8Rng,
    cells: &mut Vec<Vec<usize>>,
) -> SplitNode {
    if members.len() <= max {
        cells.push(members);
        return SplitNode::Leaf(cells.len() - 1);
    }
    let p = members[rng.gen_range(0..members.len())];
    let (a, _) = farthest(data, &members, data.sample(p));
    let (b, dab) = farthest(data, &members, data.sample(a));
    if dab == 0.0 {
        // Identical points: the first chunk takes test points.
        let first = cells.len();
        for chunk in members.chunks(max) {
            cells.push(chunk.to_vec());
        }
        return SplitNode::Leaf(first);
    }
    let (ca, cb) = (data.sample(a).to_vec(), data.sample(b).to_vec());
    let (left, right): (Vec<usize>, Vec<usize>) = members
        .iter()
        .partition(|&&i| sq_dist(data.sample(i), &ca) <= sq_dist(data.sample(i), &cb));
    let left = split_recursive(data, left, max, rng, cells);
    let right = split_recursive(data, right, max, rng, cells);
    SplitNode::Split {
        a: ca,
        b: cb,
        left: Box::new(left),
        right: Box::new(right),
    }
}

/// Cell responsible for a test point; random chunks form an ensemble.
pub fn route_test_point(partition: &CellPartition, x: &[f64]) -> Route {
    match partition.method {
        PartitionMethod::None => Route::Cell(0),
        PartitionMethod::RandomChunk => Route::All,
        PartitionMethod::VoronoiDisjoint | PartitionMethod::VoronoiOverlap => {
            Route::Cell(nearest_center(&partition.centers, x))
        }
        PartitionMethod::Recursive => {
            let mut node = partition.tree.as_ref().expect("recursive partition has a split tree");
            loop {
                match node {
                    SplitNode::Leaf(c) => return Route::Cell(*c),
                    SplitNode::Split { a, b, left, right } => {
                        node = if sq_dist(x, a) <= sq_dist(x, b) { left } else { right };
                    }
                }
            }
        }
    }
}
