//! Non-stationary K-armed bandit over memory clusters.
//!
//! Each arm is a past-task cluster and its reward is forgetting. Means are
//! tracked with an exponential moving average and turned into a
//! Boltzmann (tempered softmax) distribution from which replay clusters are
//! drawn.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forgetting::ForgettingSource;
use crate::memory::MemoryStore;
use crate::model::Example;

pub const DEFAULT_TEMPERATURE: f64 = 0.1;
pub const DEFAULT_BETA: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BanditState {
    mu: Vec<f64>,
    beta: f64,
    temperature: f64,
    iteration: u64,
}

impl BanditState {
    /// `k` arms with zero means.
    pub fn new(k: usize, beta: f64, temperature: f64) -> Result<Self> {
        if k == 0 {
            return Err(Error::config("bandit needs at least one arm"));
        }
        validate_beta(beta)?;
        validate_temperature(temperature)?;
        Ok(Self {
            mu: vec![0.0; k],
            beta,
            temperature,
            iteration: 0,
        })
    }

    pub fn num_arms(&self) -> usize {
        self.mu.len()
    }

    pub fn means(&self) -> &[f64] {
        &self.mu
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    /// `mu_i <- beta * probe_i + (1 - beta) * mu_i` for every arm.
    pub fn update_means(&mut self, probe_means: &[f64]) -> Result<()> {
        if probe_means.len() != self.mu.len() {
            return Err(Error::usage(format!(
                "{} probe means for {} arms",
                probe_means.len(),
                self.mu.len()
            )));
        }
        if let Some(v) = probe_means.iter().find(|v| !v.is_finite()) {
            return Err(Error::usage(format!("non-finite probe mean {v}")));
        }
        for (m, f) in self.mu.iter_mut().zip(probe_means) {
            *m = self.beta * f + (1.0 - self.beta) * *m;
        }
        self.iteration += 1;
        Ok(())
    }

    /// `p_i = exp(mu_i / t) / Z`, evaluated with the max subtracted first.
    pub fn boltzmann_distribution(&self) -> Vec<f64> {
        tempered_softmax(&self.mu, self.temperature)
    }

    /// Draws `m` clusters from [`BanditState::boltzmann_distribution`] and one uniform
    /// example from each.
    pub fn sample_replay_buffer<R: Rng + ?Sized>(
        &self,
        store: &MemoryStore,
        m: usize,
        rng: &mut R,
    ) -> Result<ReplayBuffer> {
        if store.num_clusters() != self.mu.len() {
            return Err(Error::usage(format!(
                "bandit has {} arms but memory holds {} clusters",
                self.mu.len(),
                store.num_clusters()
            )));
        }
        let probs = self.boltzmann_distribution();
        sample_buffer_from(&probs, store, m, rng)
    }
}

fn validate_beta(beta: f64) -> Result<()> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::config(format!("beta must be in (0, 1], got {beta}")));
    }
    Ok(())
}

fn validate_temperature(t: f64) -> Result<()> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::config(format!(
            "temperature must be positive, got {t}"
        )));
    }
    Ok(())
}

/// Numerically stable tempered softmax.
pub fn tempered_softmax(scores: &[f64], temperature: f64) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores
        .iter()
        .map(|s| ((s - max) / temperature).exp())
        .collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Replay examples chosen for one training iteration.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReplayBuffer {
    pub examples: Vec<Example>,
    pub source_clusters: Vec<usize>,
}

impl ReplayBuffer {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

/// Buffer of `m` examples whose clusters are drawn from `probs`.
pub fn sample_buffer_from<R: Rng + ?Sized>(
    probs: &[f64],
    store: &MemoryStore,
    m: usize,
    rng: &mut R,
) -> Result<ReplayBuffer> {
    if m == 0 {
        return Err(Error::usage("replay buffer size must be at least 1"));
    }
    if store.is_empty() {
        return Err(Error::usage(
            "cannot fill a replay buffer from an empty store",
        ));
    }
    if probs.len() != store.num_clusters() {
        return Err(Error::usage(
            "distribution length does not match cluster count",
        ));
    }
    let mut buffer = ReplayBuffer {
        examples: Vec::with_capacity(m),
        source_clusters: Vec::with_capacity(m),
    };
    if probs.len() == 1 {
        let c = &store.clusters()[0];
        for ex in c.sample(m, rng)? {
            buffer.examples.push(ex.clone());
            buffer.source_clusters.push(c.id());
        }
        return Ok(buffer);
    }
    let picker = WeightedIndex::new(probs)
        .map_err(|e| Error::Internal(format!("invalid cluster distribution: {e}")))?;
    for _ in 0..m {
        let c = &store.clusters()[picker.sample(rng)];
        buffer.examples.push(c.sample_one(rng).clone());
        buffer.source_clusters.push(c.id());
    }
    Ok(buffer)
}

/// Regret of `buffer` against the most-forgotten stored examples.
///
/// Scores every stored example, so this is a test-scale diagnostic. The
/// buffer is compared as a set: with `k` distinct examples in the buffer,
/// the reference is the `k` stored examples with the highest forgetting
/// (ties broken by lower example id). The result is never negative.
pub fn regret_diagnostic<S: ForgettingSource + ?Sized>(
    source: &mut S,
    store: &MemoryStore,
    buffer: &ReplayBuffer,
) -> Result<f64> {
    let mut scored = Vec::with_capacity(store.len());
    for ex in store.iter() {
        scored.push((source.forgetting(ex)?, ex.id));
    }
    // descending forgetting, ties by ascending id
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));

    let mut chosen: Vec<u64> = buffer.examples.iter().map(|e| e.id).collect();
    chosen.sort_unstable();
    chosen.dedup();
    if chosen.len() > scored.len() {
        return Err(Error::usage("replay buffer larger than the memory store"));
    }
    let selected: Vec<f64> = scored
        .iter()
        .filter(|s| chosen.binary_search(&s.1).is_ok())
        .map(|s| s.0)
        .collect();
    if selected.len() != chosen.len() {
        return Err(Error::usage(
            "replay buffer holds examples that are not in memory",
        ));
    }
    // Both sums run over descending sequences and the i-th best stored value
    // dominates the i-th selected one, so rounding cannot flip the sign.
    let best: f64 = scored[..chosen.len()].iter().map(|s| s.0).sum();
    Ok(best - selected.iter().sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Target;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn store(sizes: &[usize]) -> MemoryStore {
        let mut s = MemoryStore::new();
        let mut id = 0;
        for (t, n) in sizes.iter().enumerate() {
            let task = (0..*n)
                .map(|_| {
                    id += 1;
                    Example {
                        id: id - 1,
                        task_id: t,
                        features: vec![0.0],
                        target: Target::Regression(vec![0.0]),
                    }
                })
                .collect();
            s.add_task(task).unwrap();
        }
        s
    }

    #[test]
    fn init_and_ranges() {
        let b = BanditState::new(3, 0.01, 0.1).unwrap();
        assert_eq!(b.means(), &[0.0, 0.0, 0.0]);
        assert_eq!(b.iteration(), 0);
        assert!(BanditState::new(3, 0.0, 0.1).is_err());
        assert!(BanditState::new(3, 1.5, 0.1).is_err());
        assert!(BanditState::new(3, 0.5, 0.0).is_err());
        assert!(BanditState::new(0, 0.5, 0.1).is_err());
        let one = BanditState::new(1, 1.0, 0.1).unwrap();
        assert_eq!(one.boltzmann_distribution(), vec![1.0]);
    }

    #[test]
    fn moving_average_examples() {
        let mut b = BanditState::new(1, 0.01, 0.1).unwrap();
        b.update_means(&[1.0]).unwrap();
        assert!((b.means()[0] - 0.01).abs() < 1e-15);
        let mut b = BanditState::new(2, 1.0, 0.1).unwrap();
        b.update_means(&[3.0, -2.0]).unwrap();
        assert_eq!(b.means(), &[3.0, -2.0]);
        assert_eq!(b.iteration(), 1);
        assert!(matches!(b.update_means(&[1.0]), Err(Error::Usage(_))));
        assert!(b.update_means(&[f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn moving_average_closed_form() {
        for beta in [0.01, 0.1, 0.5] {
            let mut b = BanditState::new(1, beta, 0.1).unwrap();
            let c = 0.8;
            for j in 1..=200 {
                b.update_means(&[c]).unwrap();
                let expected = c * (1.0 - (1.0 - beta).powi(j));
                assert!((b.means()[0] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn softmax_examples() {
        let p = tempered_softmax(&[0.4, 0.4, 0.4, 0.4], 0.1);
        assert!(p.iter().all(|v| (v - 0.25).abs() < 1e-15));
        let t = 0.1;
        let p = tempered_softmax(&[0.0, t * 3f64.ln()], t);
        assert!((p[0] - 0.25).abs() < 1e-12 && (p[1] - 0.75).abs() < 1e-12);
        let p = tempered_softmax(&[5.0, 1.0, 1.0], 0.01);
        assert!(p[0] > 0.999);
        assert!(p.iter().all(|v| *v > 0.0));
    }

    #[test]
    fn softmax_handles_huge_scores() {
        let p = tempered_softmax(&[1e6, 1e6 - 1.0, -1e6], 0.1);
        assert!(p.iter().all(|v| v.is_finite()));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_cluster_buffer() {
        let s = store(&[5]);
        let b = BanditState::new(1, 0.01, 0.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let buf = b.sample_replay_buffer(&s, 7, &mut rng).unwrap();
        assert_eq!(buf.len(), 7);
        assert!(buf.source_clusters.iter().all(|c| *c == 0));
    }

    #[test]
    fn buffer_k_mismatch() {
        let s = store(&[5, 5]);
        let b = BanditState::new(3, 0.01, 0.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            b.sample_replay_buffer(&s, 2, &mut rng),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn buffer_examples_belong_to_their_cluster() {
        let s = store(&[4, 6, 3]);
        let mut b = BanditState::new(3, 0.5, 0.3).unwrap();
        b.update_means(&[0.1, 0.5, 0.2]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let buf = b.sample_replay_buffer(&s, 50, &mut rng).unwrap();
        for (ex, c) in buf.examples.iter().zip(&buf.source_clusters) {
            assert_eq!(ex.task_id, *c);
        }
    }

    #[test]
    fn uniform_means_split_evenly() {
        let s = store(&[20, 20]);
        let b = BanditState::new(2, 0.01, 0.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let draws = 100_000;
        let mut hits = 0usize;
        for _ in 0..draws {
            hits += b
                .sample_replay_buffer(&s, 1, &mut rng)
                .unwrap()
                .source_clusters[0];
        }
        let sigma = (draws as f64 * 0.25).sqrt();
        assert!((hits as f64 - 0.5 * draws as f64).abs() < 3.0 * sigma);
    }

    fn table_source(values: Vec<f64>) -> impl FnMut(&Example) -> Result<f64> {
        move |e: &Example| Ok(values[e.id as usize])
    }

    fn buffer_of(s: &MemoryStore, ids: &[u64]) -> ReplayBuffer {
        let all: Vec<&Example> = s.iter().collect();
        ReplayBuffer {
            examples: ids.iter().map(|i| all[*i as usize].clone()).collect(),
            source_clusters: ids.iter().map(|i| all[*i as usize].task_id).collect(),
        }
    }

    #[test]
    fn regret_examples() {
        let s = store(&[3, 3]);
        let f = vec![0.5, -0.1, 0.9, 0.2, 0.9, 0.0];
        let mut src = table_source(f.clone());
        // top-2 by forgetting: ids 2 and 4 (0.9 each)
        assert_eq!(
            regret_diagnostic(&mut src, &s, &buffer_of(&s, &[2, 4])).unwrap(),
            0.0
        );
        // bottom-2: ids 1 and 5
        let r = regret_diagnostic(&mut src, &s, &buffer_of(&s, &[1, 5])).unwrap();
        let mut sorted = f.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let expected = (sorted[0] + sorted[1]) - (sorted[4] + sorted[5]);
        assert!((r - expected).abs() < 1e-15);
        // whole store
        assert_eq!(
            regret_diagnostic(&mut src, &s, &buffer_of(&s, &[0, 1, 2, 3, 4, 5])).unwrap(),
            0.0
        );
    }
}
