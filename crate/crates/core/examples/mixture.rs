//! Trains a binary hinge SVM on the banana mixture and reports test error
//! next to the Monte Carlo Bayes error.

use std::time::Instant;

use cellsvm::config::Config;
use cellsvm::scenarios::{evaluate, predict, train, ScenarioKind, ScenarioSpec};
use cellsvm::synthetic::Mixture;

fn main() -> cellsvm::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let n: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let mixture = Mixture::banana();
    let train_data = mixture.sample(n, 1)?;
    let test_data = mixture.sample(10_000, 2)?;
    let bayes = mixture.bayes_error(200_000, 3)?;
    let config = Config::default();
    let spec = ScenarioSpec::new(ScenarioKind::Binary);
    let start = Instant::now();
    let model = train(&spec, &train_data, &config)?;
    let trained = start.elapsed();
    let preds = predict(&model, &test_data, 1)?;
    let metrics = evaluate(&preds, test_data.labels(), &model)?;
    for line in cellsvm::scenarios::describe(&model) {
        println!("{line}");
    }
    println!(
        "n={n} train={:.2}s total={:.2}s error={:.4} bayes={bayes:.4}",
        trained.as_secs_f64(),
        start.elapsed().as_secs_f64(),
        metrics.get("error").unwrap_or(f64::NAN)
    );
    Ok(())
}
