mod common;

use cellsvm::dataio::{make_folds, Dataset, FoldMethod};
use cellsvm::kernel::KernelSpec;
use cellsvm::modelselect::{
    adaptive_cross_validate, adaptive_search, build_default_grid, cross_validate, finalize, select_best, ClassCounts,
    CvOptions, FoldModel, Grid, GridEntry, SelectedModel, SelectionMode, ValidationMetric, ValidationTable,
};
use cellsvm::solver::{solve, LossSpec, SolverProblem};
use common::*;
use proptest::prelude::*;

fn two_blobs(seed: u64, n: usize) -> Dataset {
    let mut r = rng(seed);
    let base = uniform_data(&mut r, n, 2);
    let y = signs(&mut r, n);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let x = base.sample(i);
            vec![0.2 * x[0] + if y[i] > 0.0 { 0.6 } else { 0.2 }, 0.5 * x[1]]
        })
        .collect();
    Dataset::from_rows(&rows, y).unwrap()
}

fn entry(loss: f64, converged: bool) -> GridEntry {
    GridEntry {
        mean_loss: loss,
        fold_losses: vec![loss],
        iterations: vec![1],
        converged: vec![converged],
        counts: ClassCounts::default(),
    }
}

/// Drives `adaptive_search` on a synthetic surface; returns the evaluated mask.
fn run_adaptive(ng: usize, nl: usize, level: u8, surface: impl Fn(usize, usize) -> f64) -> Vec<Option<f64>> {
    let mut losses = vec![None; ng * nl];
    adaptive_search(ng, nl, level, |mask| {
        for (i, m) in mask.iter().enumerate() {
            if *m {
                assert!(losses[i].is_none(), "point {i} evaluated twice");
                losses[i] = Some(surface(i / nl, i % nl));
            }
        }
        Ok(losses.clone())
    })
    .unwrap();
    losses
}

#[test]
fn cv_counting_contract() {
    let data = two_blobs(1, 60);
    let folds = make_folds(data.labels(), 3, FoldMethod::Stratified, 1).unwrap();
    let grid = build_default_grid(40, 2, 10).unwrap();
    let t = cross_validate(&data, &LossSpec::hinge(1.0), &grid, &folds, ValidationMetric::Classification, &CvOptions::default()).unwrap();
    assert_eq!(t.evaluated_count(), 100);
    assert_eq!(t.counters.solves, 300);
    assert_eq!(t.counters.gram_computations, 30);
    assert_eq!(t.counters.cross_computations, 30);
    for f in 0..3 {
        assert!(t.fold_result(f, 9, 9).is_some());
    }
}

#[test]
fn adaptive_level_one_skips_points() {
    let data = two_blobs(2, 80);
    let folds = make_folds(data.labels(), 4, FoldMethod::Stratified, 2).unwrap();
    let grid = build_default_grid(60, 2, 10).unwrap();
    let options = CvOptions::default();
    let t = adaptive_cross_validate(&data, &LossSpec::hinge(1.0), &grid, &folds, ValidationMetric::Classification, &options, 1).unwrap();
    assert!(t.evaluated_count() >= 25 && t.evaluated_count() < 100, "{}", t.evaluated_count());
    assert_eq!(t.counters.solves, 4 * t.evaluated_count());
    assert!(t.counters.gram_computations <= 4 * 10);
    let (g, l) = select_best(&t, &grid).unwrap();
    assert!(t.is_evaluated(g, l));
    assert!(adaptive_cross_validate(&data, &LossSpec::hinge(1.0), &grid, &folds, ValidationMetric::Classification, &options, 3).is_err());
}

#[test]
fn adaptive_search_examples() {
    let flat = run_adaptive(10, 10, 1, |_, _| 1.0);
    assert!(flat.iter().all(|v| v.is_some()));

    // best coarse point in a corner: its whole neighborhood gets evaluated
    let corner = run_adaptive(10, 10, 2, |g, l| if (g, l) == (9, 9) { 0.0 } else { 1.0 + (g + l) as f64 });
    for g in 8..10 {
        for l in 8..10 {
            assert!(corner[g * 10 + l].is_some());
        }
    }
    assert!(corner.iter().filter(|v| v.is_some()).count() < 100);

    let err = adaptive_search(3, 10, 1, |_| unreachable!()).unwrap_err();
    assert!(err.to_string().contains("4 x 4"));
}

#[test]
fn keep_fold_models_returns_one_model_per_fold() {
    let data = two_blobs(3, 40);
    let folds = make_folds(data.labels(), 5, FoldMethod::Stratified, 3).unwrap();
    let grid = Grid::custom(vec![2.0, 1.0], vec![1e-2, 1e-3]).unwrap();
    let options = CvOptions::default();
    let loss = LossSpec::hinge(1.0);
    let t = cross_validate(&data, &loss, &grid, &folds, ValidationMetric::Classification, &options).unwrap();
    let best = select_best(&t, &grid).unwrap();
    let m = finalize(&data, &loss, &grid, best, SelectionMode::KeepFoldModels, &t, &folds, &options).unwrap();
    assert_eq!(m.models.len(), 5);
    for (f, fm) in m.models.iter().enumerate() {
        assert_eq!(fm.train_indices, folds.training_indices(f));
    }
    let v = m.decision_values(&data, &data, 1).unwrap();
    assert!(v.iter().all(|x| x.abs() <= 1.0));
}

#[test]
fn retrain_single_matches_direct_least_squares() {
    let mut r = rng(4);
    let data = uniform_data(&mut r, 50, 2);
    let y: Vec<f64> = data.samples().map(|x| (3.0 * x[0]).sin() + x[1]).collect();
    let data = data.with_labels(y.clone()).unwrap();
    let folds = make_folds(&y, 5, FoldMethod::Random, 4).unwrap();
    let grid = Grid::custom(vec![1.0, 0.5], vec![1e-2, 1e-4]).unwrap();
    let loss = LossSpec::least_squares();
    let mut options = CvOptions::default();
    let t = cross_validate(&data, &loss, &grid, &folds, ValidationMetric::default_for(&loss), &options).unwrap();
    let best = select_best(&t, &grid).unwrap();
    // the gap is quadratic in the coefficient error, so coefficient agreement needs a tiny gap
    options.tolerance = 1e-20;
    let m = finalize(&data, &loss, &grid, best, SelectionMode::RetrainSingle, &t, &folds, &options).unwrap();
    assert_eq!(m.models.len(), 1);
    let k = gram(grid.gammas[best.0], &data);
    let direct = ls_direct(&k, &y, grid.lambdas[best.1]);
    let diff = m.models[0].result.beta.iter().zip(&direct).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let scale = direct.iter().map(|b| b.abs()).fold(0.0, f64::max);
    assert!(diff <= 1e-6 * (1.0 + scale), "diff {diff}");
}

#[test]
fn identical_fold_models_average_to_one() {
    let mut r = rng(5);
    let data = uniform_data(&mut r, 20, 2);
    let y = signs(&mut r, 20);
    let data = data.with_labels(y.clone()).unwrap();
    let kernel = KernelSpec::gaussian(0.5).unwrap();
    let k = gram(0.5, &data);
    let result = solve(&SolverProblem::new(&k, &y, 1e-2, LossSpec::least_squares())).unwrap();
    let fm = FoldModel { train_indices: (0..20).collect(), result };
    let model = |mode, copies| SelectedModel {
        kernel,
        lambda: 1e-2,
        loss: LossSpec::least_squares(),
        mode,
        models: vec![fm.clone(); copies],
        validation_loss: 0.0,
    };
    let single = model(SelectionMode::RetrainSingle, 1).decision_values(&data, &data, 1).unwrap();
    let triple = model(SelectionMode::KeepFoldModels, 3).decision_values(&data, &data, 1).unwrap();
    for (a, b) in single.iter().zip(&triple) {
        assert!((a - b).abs() <= 1e-12);
    }
}

#[test]
fn selection_needs_a_usable_point() {
    let grid = Grid::custom(vec![1.0, 0.5], vec![1e-2, 1e-3]).unwrap();
    let t = ValidationTable::from_entries(2, 2, 1, vec![None, Some(entry(f64::NAN, true)), None, None]).unwrap();
    assert!(select_best(&t, &grid).is_err());
    assert!(ValidationTable::from_entries(2, 2, 1, vec![None]).is_err());
    let wrong = Grid::custom(vec![1.0], vec![1e-2, 1e-3]).unwrap();
    assert!(select_best(&t, &wrong).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn adaptive_finds_the_minimum_of_a_separable_bowl(
        ng in 4usize..21, nl in 4usize..21, level in 1u8..3,
        cg in 0.0f64..1.0, cl in 0.0f64..1.0, ag in 0.1f64..10.0, al in 0.1f64..10.0, offset in 0.5f64..5.0,
    ) {
        let (g0, l0) = (cg * (ng - 1) as f64, cl * (nl - 1) as f64);
        let surface = |g: usize, l: usize| offset + ag * (g as f64 - g0).powi(2) + al * (l as f64 - l0).powi(2);
        let got = run_adaptive(ng, nl, level, surface);
        let brute = (0..ng * nl).map(|i| surface(i / nl, i % nl)).fold(f64::INFINITY, f64::min);
        let found = got.iter().flatten().copied().fold(f64::INFINITY, f64::min);
        prop_assert_eq!(found, brute);
    }

    #[test]
    fn select_best_matches_oracle_order(
        ng in 1usize..6, nl in 1usize..6,
        cells in prop::collection::vec((0u8..4, any::<bool>(), 0u8..10), 25),
    ) {
        let gammas: Vec<f64> = (0..ng).map(|g| 2f64.powi(-(g as i32))).collect();
        let lambdas: Vec<f64> = (0..nl).map(|l| 10f64.powi(-(l as i32))).collect();
        let grid = Grid::custom(gammas.clone(), lambdas.clone()).unwrap();
        let entries: Vec<Option<GridEntry>> = (0..ng * nl)
            .map(|i| {
                let (loss, conv, kind) = cells[i];
                match kind {
                    0 => None,
                    1 => Some(entry(f64::INFINITY, conv)),
                    _ => Some(entry(loss as f64 * 0.25, conv)),
                }
            })
            .collect();
        let table = ValidationTable::from_entries(ng, nl, 1, entries.clone()).unwrap();
        let mut usable: Vec<(usize, usize, f64, bool)> = (0..ng * nl)
            .filter_map(|i| entries[i].as_ref().filter(|e| e.mean_loss.is_finite()).map(|e| (i / nl, i % nl, e.mean_loss, e.converged[0])))
            .collect();
        usable.sort_by(|a, b| {
            a.2.partial_cmp(&b.2).unwrap()
                .then(b.3.cmp(&a.3))
                .then(lambdas[b.1].partial_cmp(&lambdas[a.1]).unwrap())
                .then(gammas[b.0].partial_cmp(&gammas[a.0]).unwrap())
        });
        match usable.first() {
            None => prop_assert!(select_best(&table, &grid).is_err()),
            Some(&(g, l, _, _)) => prop_assert_eq!(select_best(&table, &grid).unwrap(), (g, l)),
        }
    }
}
