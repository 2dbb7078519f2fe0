#![allow(dead_code)]

use std::collections::HashMap;
use std::path::PathBuf;

use adaptive_replay::harness::RunConfig;
use adaptive_replay::memory::MemoryStore;
use adaptive_replay::model::{Activation, Example, Head, ModelParams, Target};
use rand::Rng;
use rand_distr::StandardNormal;

pub fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

pub fn load_config(name: &str, output_dir: &std::path::Path) -> RunConfig {
    let mut cfg = RunConfig::load(&config_path(name)).expect("shipped config loads");
    cfg.output_dir = output_dir.to_path_buf();
    cfg
}

/// Random architecture with every parameter (biases included) uniform in [-1, 1].
pub fn random_model<R: Rng>(rng: &mut R) -> ModelParams {
    let head = if rng.random_bool(0.5) {
        Head::Regression
    } else {
        Head::Classification
    };
    let activation = if rng.random_bool(0.5) {
        Activation::Tanh
    } else {
        Activation::Relu
    };
    let mut sizes = vec![rng.random_range(1..=5)];
    for _ in 0..rng.random_range(0..=2) {
        sizes.push(rng.random_range(1..=6));
    }
    sizes.push(match head {
        Head::Regression => rng.random_range(1..=3),
        Head::Classification => rng.random_range(2..=4),
    });
    let model = ModelParams::init(&sizes, activation, head, rng).unwrap();
    let flat: Vec<f64> = (0..model.num_params())
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    model.with_flat(&flat).unwrap()
}

pub fn random_example<R: Rng>(model: &ModelParams, id: u64, rng: &mut R) -> Example {
    let features = (0..model.input_dim())
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    let target = match model.head() {
        Head::Regression => Target::Regression(
            (0..model.output_dim())
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect(),
        ),
        Head::Classification => Target::Class(rng.random_range(0..model.output_dim())),
    };
    Example {
        id,
        task_id: 0,
        features,
        target,
    }
}

pub fn random_batch<R: Rng>(model: &ModelParams, n: usize, rng: &mut R) -> Vec<Example> {
    (0..n as u64)
        .map(|i| random_example(model, i, rng))
        .collect()
}

/// Weighted mean loss recomputed example by example from forward passes only.
pub fn objective(model: &ModelParams, batch: &[Example], weights: Option<&[f64]>) -> f64 {
    let sum: f64 = batch
        .iter()
        .enumerate()
        .map(|(i, ex)| weights.map_or(1.0, |w| w[i]) * model.per_example_loss(ex).unwrap())
        .sum();
    sum / batch.len() as f64
}

pub const FD_STEP: f64 = 1e-5;

/// Central differences of `f` around `params`.
pub fn finite_differences(params: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = params.to_vec();
    (0..p.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + FD_STEP;
            let up = f(&p);
            p[i] = orig - FD_STEP;
            let down = f(&p);
            p[i] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

/// Relative error with the denominator floored at 1e-6, so components that are
/// both essentially zero are compared absolutely.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| relative_error(*a, *n))
        .fold(0.0, f64::max)
}

/// Store of `sizes.len()` clusters with ids assigned from 0. Each example's
/// forgetting is `means[c] + sigma * N(0, 1)`, fixed once drawn.
pub fn scored_store<R: Rng>(
    sizes: &[usize],
    means: &[f64],
    sigma: f64,
    rng: &mut R,
) -> (MemoryStore, HashMap<u64, f64>) {
    let mut store = MemoryStore::new();
    let mut scores = HashMap::new();
    let mut id = 0u64;
    for (c, &n) in sizes.iter().enumerate() {
        let mut task = Vec::with_capacity(n);
        for _ in 0..n {
            scores.insert(id, means[c] + sigma * rng.sample::<f64, _>(StandardNormal));
            task.push(Example {
                id,
                task_id: c,
                features: vec![0.0],
                target: Target::Regression(vec![0.0]),
            });
            id += 1;
        }
        store.add_task(task).unwrap();
    }
    (store, scores)
}

/// Regret by exhaustive ranking, kept independent of the library routine.
pub fn brute_force_regret(scores: &HashMap<u64, f64>, buffer_ids: &[u64]) -> f64 {
    let mut distinct = buffer_ids.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    let mut all: Vec<f64> = scores.values().copied().collect();
    all.sort_by(|a, b| b.total_cmp(a));
    let best: f64 = all[..distinct.len()].iter().sum();
    let chosen: f64 = distinct.iter().map(|id| scores[id]).sum();
    best - chosen
}
