//! Training loop for every compared strategy over a task sequence.
//!
//! Task 0 plays the role of pre-training: every strategy starts from the
//! same model fitted on it, and that phase is not billed. Each later task is
//! trained with a fixed number of iterations of `batch_size` examples; replay
//! strategies swap part of every new-task batch for stored examples instead
//! of appending them, so the gradient budget per iteration never changes.

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bandit::{BanditState, ReplayBuffer, DEFAULT_BETA, DEFAULT_TEMPERATURE};
use crate::data::{validate_sequence, TaskDataset};
use crate::error::{Error, Result};
use crate::forgetting::{mean_cluster_forgetting, BaselineSnapshot, LiveForgetting};
use crate::ledger::{CostLedger, FORWARD_PASS_COST, TRAIN_PASS_COST};
use crate::memory::MemoryStore;
use crate::metrics::{self, ExperimentResult, RESULT_SCHEMA_VERSION};
use crate::model::{Activation, Example, ModelParams};

/// Batch losses above this abort the run.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    /// Joint iid re-training on every task seen so far.
    Oracle,
    /// The pre-trained model, never updated.
    Base,
    /// Fine-tuning on new data only.
    Naive,
    /// Replay drawn uniformly from all stored examples.
    StandardRehearsal,
    /// Bandit-selected replay.
    Adaptive,
    /// Bandit-selected replay with iterations cut to naive fine-tuning's budget.
    AdaptiveZeroCost,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 6] = [
        StrategyKind::Oracle,
        StrategyKind::Base,
        StrategyKind::Naive,
        StrategyKind::StandardRehearsal,
        StrategyKind::Adaptive,
        StrategyKind::AdaptiveZeroCost,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Oracle => "oracle",
            StrategyKind::Base => "base",
            StrategyKind::Naive => "naive",
            StrategyKind::StandardRehearsal => "standard_rehearsal",
            StrategyKind::Adaptive => "adaptive",
            StrategyKind::AdaptiveZeroCost => "adaptive_zero_cost",
        }
    }

    pub fn is_adaptive(self) -> bool {
        matches!(
            self,
            StrategyKind::Adaptive | StrategyKind::AdaptiveZeroCost
        )
    }

    pub fn replays(self) -> bool {
        self.is_adaptive() || self == StrategyKind::StandardRehearsal
    }
}

impl std::fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::config(format!("unknown strategy {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Hidden layer widths; empty means a linear model.
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: vec![32],
            activation: Activation::Tanh,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub strategy: StrategyKind,
    pub lr: f64,
    pub batch_size: usize,
    /// Share of each batch replaced by replay, `|M| / B`.
    pub replay_fraction: f64,
    pub temperature: f64,
    pub beta: f64,
    pub probes_per_cluster: usize,
    /// Probe the clusters every this many iterations.
    pub probe_every: usize,
    pub iterations_per_task: usize,
    /// Loss weight applied to replayed examples.
    pub replay_weight: f64,
    pub iid_task_balanced: bool,
    /// Unbilled iterations on task 0 before the sequence starts.
    pub pretrain_iterations: usize,
    pub model: ModelConfig,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            strategy: StrategyKind::Adaptive,
            lr: 0.05,
            batch_size: 128,
            replay_fraction: 0.5,
            temperature: DEFAULT_TEMPERATURE,
            beta: DEFAULT_BETA,
            probes_per_cluster: 2,
            probe_every: 1,
            iterations_per_task: 200,
            replay_weight: 1.0,
            iid_task_balanced: false,
            pretrain_iterations: 200,
            model: ModelConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// `|M| = round(replay_fraction * B)`.
    pub fn replay_size(&self) -> usize {
        (self.replay_fraction * self.batch_size as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!(
                "lr must be positive, got {}",
                self.lr
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if !(0.0..1.0).contains(&self.replay_fraction) {
            return Err(Error::config(format!(
                "replay_fraction must be in [0, 1), got {}",
                self.replay_fraction
            )));
        }
        if self.replay_fraction > 0.0 {
            if self.batch_size < 2 {
                return Err(Error::config("batch_size must be >= 2 when replaying"));
            }
            if self.strategy.replays() && self.replay_size() == 0 {
                return Err(Error::config("replay_fraction * batch_size rounds to 0"));
            }
        }
        if self.replay_size() > self.batch_size {
            return Err(Error::config("replay buffer larger than the batch"));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::config("temperature must be positive"));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::config("beta must be in (0, 1]"));
        }
        if self.probe_every == 0 {
            return Err(Error::config("probe_every must be >= 1"));
        }
        if self.iterations_per_task == 0 {
            return Err(Error::config("iterations_per_task must be >= 1"));
        }
        if !(self.replay_weight >= 0.0 && self.replay_weight.is_finite()) {
            return Err(Error::config("replay_weight must be >= 0"));
        }
        if self.model.hidden.contains(&0) {
            return Err(Error::config("hidden layer widths must be positive"));
        }
        Ok(())
    }
}

/// Per-task diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub task_id: usize,
    pub iterations: usize,
    pub ledger: CostLedger,
    /// Test loss on every task after training this one.
    pub test_losses: Vec<f64>,
    /// Bandit means at the end of the task (adaptive strategies only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub final_means: Vec<f64>,
    /// Number of replayed examples drawn from each cluster.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub replay_histogram: Vec<u64>,
}

/// A batch after replay replacement. `is_replay[i]` marks stored examples.
#[derive(Debug, Clone, PartialEq)]
pub struct ComposedBatch {
    pub examples: Vec<Example>,
    pub is_replay: Vec<bool>,
}

/// Keeps `B - |M|` uniformly chosen new examples, adds the whole replay
/// buffer and shuffles. An empty buffer returns `new_batch` untouched.
pub fn compose_batch(
    new_batch: Vec<Example>,
    replay: ReplayBuffer,
    rng: &mut ChaCha8Rng,
) -> Result<ComposedBatch> {
    let b = new_batch.len();
    let m = replay.len();
    if m > b {
        return Err(Error::config(format!(
            "replay buffer of {m} exceeds batch size {b}"
        )));
    }
    if m == 0 {
        return Ok(ComposedBatch {
            is_replay: vec![false; b],
            examples: new_batch,
        });
    }
    let mut keep: Vec<usize> = index::sample(rng, b, b - m).into_vec();
    keep.sort_unstable();
    let mut tagged: Vec<(Example, bool)> = Vec::with_capacity(b);
    let mut slots = new_batch.into_iter().map(Some).collect::<Vec<_>>();
    for i in keep {
        tagged.push((slots[i].take().expect("indices are distinct"), false));
    }
    tagged.extend(replay.examples.into_iter().map(|e| (e, true)));
    tagged.shuffle(rng);
    let (examples, is_replay) = tagged.into_iter().unzip();
    Ok(ComposedBatch {
        examples,
        is_replay,
    })
}

/// Iteration count for a task with `num_clusters` stored clusters.
///
/// Only [`StrategyKind::AdaptiveZeroCost`] is affected: it gets the largest
/// count whose predicted passes (3 per trained example, 1 per probe) fit in
/// naive fine-tuning's budget for `iterations_per_task` iterations.
pub fn effective_iterations(config: &TrainConfig, num_clusters: usize) -> usize {
    let n = config.iterations_per_task;
    if config.strategy != StrategyKind::AdaptiveZeroCost {
        return n;
    }
    let probe_round = (num_clusters * config.probes_per_cluster) as u64 * FORWARD_PASS_COST;
    if probe_round == 0 || config.replay_size() == 0 {
        return n;
    }
    let step = TRAIN_PASS_COST * config.batch_size as u64;
    let budget = n as u64 * step;
    let every = config.probe_every as u64;
    let predicted = |iters: u64| iters * step + probe_round * iters.div_ceil(every);
    // continuous estimate, then step down to the exact bound
    let mut best =
        (budget as f64 / (step as f64 + probe_round as f64 / every as f64)).ceil() as u64;
    best = best.min(n as u64);
    while best > 0 && predicted(best) > budget {
        best -= 1;
    }
    while best < n as u64 && predicted(best + 1) <= budget {
        best += 1;
    }
    best as usize
}

pub(crate) mod streams {
    pub const INIT: u64 = 1;
    pub const ORDER: u64 = 2;
    pub const SELECT: u64 = 3;
    pub const COMPOSE: u64 = 4;
    pub const PRETRAIN: u64 = 5;
    pub const PROBE: u64 = 6;
}

/// Independent ChaCha stream per (purpose, task).
pub(crate) fn stream_rng(seed: u64, purpose: u64, task: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((purpose << 32) | task as u64);
    rng
}

/// Epoch-wise shuffled pass over `len` items, reshuffling when exhausted.
struct EpochSampler {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl EpochSampler {
    fn new(len: usize, mut rng: ChaCha8Rng) -> Self {
        let mut order: Vec<usize> = (0..len).collect();
        order.shuffle(&mut rng);
        Self { order, pos: 0, rng }
    }

    fn next_batch(&mut self, b: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(b);
        while out.len() < b {
            if self.pos == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

fn sgd_iteration(
    model: &mut ModelParams,
    batch: &ComposedBatch,
    config: &TrainConfig,
    iteration: usize,
    ledger: Option<&mut CostLedger>,
) -> Result<f64> {
    let weights: Vec<f64> = batch
        .is_replay
        .iter()
        .map(|r| if *r { config.replay_weight } else { 1.0 })
        .collect();
    let diverged = |loss: f64| Error::Divergence {
        iteration,
        strategy: config.strategy.to_string(),
        loss,
    };
    let (loss, grads) = match model.backward_weighted(&batch.examples, Some(&weights)) {
        Ok(v) => v,
        Err(Error::Numeric { .. }) => return Err(diverged(f64::NAN)),
        Err(e) => return Err(e),
    };
    if !loss.is_finite() || loss > DIVERGENCE_LIMIT {
        return Err(diverged(loss));
    }
    if let Some(l) = ledger {
        l.charge_training(batch.examples.len() as u64);
    }
    model.apply_sgd(&grads, config.lr)?;
    Ok(loss)
}

/// Trains on one new task. `store` holds every earlier task and `snapshot`
/// the model as it was when this task began.
pub fn train_task(
    mut model: ModelParams,
    store: &MemoryStore,
    snapshot: &mut BaselineSnapshot,
    task: &TaskDataset,
    config: &TrainConfig,
    ledger: &mut CostLedger,
) -> Result<(ModelParams, TaskReport)> {
    let start = *ledger;
    let k = store.num_clusters();
    let mut report = TaskReport {
        task_id: task.task_id,
        iterations: 0,
        ledger: CostLedger::new(),
        test_losses: Vec::new(),
        final_means: Vec::new(),
        replay_histogram: Vec::new(),
    };
    if config.strategy == StrategyKind::Base {
        return Ok((model, report));
    }
    if config.strategy == StrategyKind::Oracle {
        return Err(Error::usage(
            "the oracle re-trains from scratch; use run_sequence",
        ));
    }

    let b = config.batch_size;
    let m = if config.strategy.replays() {
        config.replay_size()
    } else {
        0
    };
    if m > 0 && k == 0 {
        return Err(Error::usage(
            "replay strategies need at least one stored task",
        ));
    }
    let iterations = effective_iterations(config, k);
    let probes = config.probes_per_cluster;
    let zero_cost_budget = (config.strategy == StrategyKind::AdaptiveZeroCost)
        .then(|| config.iterations_per_task as u64 * TRAIN_PASS_COST * b as u64);

    let mut order = EpochSampler::new(
        task.train.len(),
        stream_rng(config.seed, streams::ORDER, task.task_id),
    );
    let mut select_rng = stream_rng(config.seed, streams::SELECT, task.task_id);
    // probes draw from their own stream so the selection cost does not depend
    // on how many replay examples are drawn afterwards
    let mut probe_rng = stream_rng(config.seed, streams::PROBE, task.task_id);
    let mut compose_rng = stream_rng(config.seed, streams::COMPOSE, task.task_id);
    let mut bandit = if config.strategy.is_adaptive() && m > 0 {
        Some(BanditState::new(k, config.beta, config.temperature)?)
    } else {
        None
    };
    if m > 0 {
        report.replay_histogram = vec![0; k];
    }

    for j in 0..iterations {
        let probe_now = bandit.is_some() && probes > 0 && j % config.probe_every == 0;
        if let Some(budget) = zero_cost_budget {
            // worst case: every probe also misses the baseline cache
            let worst = TRAIN_PASS_COST * b as u64
                + if probe_now {
                    2 * (k * probes) as u64 * FORWARD_PASS_COST
                } else {
                    0
                };
            if ledger.since(&start).total() + worst > budget {
                break;
            }
        }

        let new_batch: Vec<Example> = order
            .next_batch(b)
            .into_iter()
            .map(|i| task.train[i].clone())
            .collect();

        let replay = match (&mut bandit, config.strategy) {
            (_, _) if m == 0 => ReplayBuffer::default(),
            (Some(bandit), _) => {
                if probe_now {
                    let mut source = LiveForgetting {
                        model: &model,
                        snapshot: &mut *snapshot,
                        ledger: &mut *ledger,
                    };
                    let mut means = Vec::with_capacity(k);
                    for cluster in store.clusters() {
                        means.push(mean_cluster_forgetting(
                            &mut source,
                            cluster,
                            probes,
                            &mut probe_rng,
                        )?);
                    }
                    bandit.update_means(&means)?;
                }
                bandit.sample_replay_buffer(store, m, &mut select_rng)?
            }
            (None, StrategyKind::StandardRehearsal) => {
                let picked = store.sample_iid_past(m, config.iid_task_balanced, &mut select_rng)?;
                ReplayBuffer {
                    source_clusters: picked.iter().map(|e| e.task_id).collect(),
                    examples: picked.into_iter().cloned().collect(),
                }
            }
            _ => ReplayBuffer::default(),
        };
        for c in &replay.source_clusters {
            report.replay_histogram[*c] += 1;
        }

        let batch = compose_batch(new_batch, replay, &mut compose_rng)?;
        sgd_iteration(&mut model, &batch, config, j, Some(&mut *ledger))?;
        report.iterations += 1;
    }

    if let Some(bandit) = &bandit {
        report.final_means = bandit.means().to_vec();
    }
    report.ledger = ledger.since(&start);
    Ok((model, report))
}

/// Iid training on the union of `tasks`' training sets.
fn train_joint(
    mut model: ModelParams,
    tasks: &[TaskDataset],
    iterations: usize,
    config: &TrainConfig,
    rng: ChaCha8Rng,
    mut ledger: Option<&mut CostLedger>,
) -> Result<ModelParams> {
    let pool: Vec<&Example> = tasks.iter().flat_map(|t| t.train.iter()).collect();
    let mut order = EpochSampler::new(pool.len(), rng);
    for j in 0..iterations {
        let examples: Vec<Example> = order
            .next_batch(config.batch_size)
            .into_iter()
            .map(|i| pool[i].clone())
            .collect();
        let batch = ComposedBatch {
            is_replay: vec![false; examples.len()],
            examples,
        };
        sgd_iteration(&mut model, &batch, config, j, ledger.as_deref_mut())?;
    }
    Ok(model)
}

/// Mean test loss of `model` on every task.
pub fn evaluate(model: &ModelParams, tasks: &[TaskDataset]) -> Result<Vec<f64>> {
    tasks
        .iter()
        .map(|t| {
            let mut sum = 0.0;
            for ex in &t.test {
                sum += model.per_example_loss(ex)?;
            }
            Ok(sum / t.test.len() as f64)
        })
        .collect()
}

/// Model after unbilled training on task 0, shared by every strategy for a seed.
pub fn pretrained_model(tasks: &[TaskDataset], config: &TrainConfig) -> Result<ModelParams> {
    let schema = validate_sequence(tasks)?;
    let mut sizes = vec![schema.feature_dim];
    sizes.extend(&config.model.hidden);
    sizes.push(schema.output_dim());
    let mut init_rng = stream_rng(config.seed, streams::INIT, 0);
    let model = ModelParams::init(&sizes, config.model.activation, schema.head, &mut init_rng)?;
    let pre = TrainConfig {
        strategy: StrategyKind::Naive,
        ..config.clone()
    };
    train_joint(
        model,
        &tasks[..1],
        config.pretrain_iterations,
        &pre,
        stream_rng(config.seed, streams::PRETRAIN, 0),
        None,
    )
}

/// Runs one strategy over the whole sequence.
pub fn run_sequence(tasks: &[TaskDataset], config: &TrainConfig) -> Result<ExperimentResult> {
    config.validate()?;
    if tasks.len() < 2 {
        return Err(Error::config("a task sequence needs at least 2 tasks"));
    }
    let pretrained = pretrained_model(tasks, config)?;
    run_from_pretrained(tasks, config, &pretrained)
}

/// As [`run_sequence`], reusing an already pre-trained model.
pub fn run_from_pretrained(
    tasks: &[TaskDataset],
    config: &TrainConfig,
    pretrained: &ModelParams,
) -> Result<ExperimentResult> {
    config.validate()?;
    validate_sequence(tasks)?;
    if tasks.len() < 2 {
        return Err(Error::config("a task sequence needs at least 2 tasks"));
    }
    let first_row = evaluate(pretrained, tasks)?;
    let mut loss_matrix = vec![first_row.clone()];
    let mut ledger = CostLedger::new();
    let mut reports = Vec::with_capacity(tasks.len() - 1);

    match config.strategy {
        StrategyKind::Base => {
            for t in 1..tasks.len() {
                loss_matrix.push(first_row.clone());
                reports.push(TaskReport {
                    task_id: t,
                    iterations: 0,
                    ledger: CostLedger::new(),
                    test_losses: first_row.clone(),
                    final_means: Vec::new(),
                    replay_histogram: Vec::new(),
                });
            }
        }
        StrategyKind::Oracle => {
            for t in 1..tasks.len() {
                let before = ledger;
                // same per-example budget per task as the sequential learners
                let iterations = config.iterations_per_task * (t + 1);
                let model = train_joint(
                    pretrained.clone(),
                    &tasks[..=t],
                    iterations,
                    config,
                    stream_rng(config.seed, streams::ORDER, t),
                    Some(&mut ledger),
                )?;
                let row = evaluate(&model, tasks)?;
                reports.push(TaskReport {
                    task_id: t,
                    iterations,
                    ledger: ledger.since(&before),
                    test_losses: row.clone(),
                    final_means: Vec::new(),
                    replay_histogram: Vec::new(),
                });
                loss_matrix.push(row);
            }
        }
        _ => {
            let mut store = MemoryStore::new();
            let mut model = pretrained.clone();
            for t in 1..tasks.len() {
                store.add_task(tasks[t - 1].train.clone())?;
                let mut snapshot = BaselineSnapshot::at_task_boundary(&model);
                let (next, mut report) =
                    train_task(model, &store, &mut snapshot, &tasks[t], config, &mut ledger)?;
                model = next;
                let row = evaluate(&model, tasks)?;
                report.test_losses = row.clone();
                reports.push(report);
                loss_matrix.push(row);
            }
        }
    }

    let final_loss_raw = metrics::final_loss_raw(&loss_matrix)?;
    let forgetting = metrics::forgetting_raw(&loss_matrix)?;
    Ok(ExperimentResult {
        schema_version: RESULT_SCHEMA_VERSION,
        strategy: config.strategy,
        seed: config.seed,
        loss_matrix,
        ledger,
        final_loss_raw,
        forgetting_raw: forgetting.value,
        task_reports: reports,
        normalized: None,
    })
}
