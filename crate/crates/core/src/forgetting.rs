//! Forgetting relative to the parameters frozen at the last task boundary.
//!
//! `F(x; θ) = L(x; θ) - L(x; θ_prev)`, positive when the loss on `x` went up.
//! Baseline losses are computed lazily and cached per example id, so only
//! probed examples ever pay for a baseline forward pass.

use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::ledger::CostLedger;
use crate::memory::Cluster;
use crate::model::{Example, Gradients, ModelParams};

/// Frozen copy of the previous task's final parameters plus cached baseline losses.
#[derive(Debug, Clone)]
pub struct BaselineSnapshot {
    frozen: ModelParams,
    cache: HashMap<u64, f64>,
}

impl BaselineSnapshot {
    /// Deep-copies `model`; the cache starts empty.
    pub fn at_task_boundary(model: &ModelParams) -> Self {
        Self {
            frozen: model.clone(),
            cache: HashMap::new(),
        }
    }

    pub fn frozen_params(&self) -> &ModelParams {
        &self.frozen
    }

    pub fn cached(&self, example_id: u64) -> Option<f64> {
        self.cache.get(&example_id).copied()
    }

    pub fn cache_len(&self) -> usize {
        self.cache.len()
    }

    /// `L(x; θ_prev)`, computed on first access. A miss costs one forward pass
    /// charged to `ledger`'s selecting counter.
    pub fn baseline_loss(
        &mut self,
        example: &Example,
        ledger: Option<&mut CostLedger>,
    ) -> Result<f64> {
        if let Some(v) = self.cache.get(&example.id) {
            return Ok(*v);
        }
        let v = self.frozen.per_example_loss(example)?;
        if let Some(l) = ledger {
            l.charge_selecting(1);
        }
        self.cache.insert(example.id, v);
        Ok(v)
    }

    pub fn forgetting(
        &mut self,
        model: &ModelParams,
        example: &Example,
        mut ledger: Option<&mut CostLedger>,
    ) -> Result<f64> {
        let current = model.per_example_loss(example)?;
        if let Some(l) = ledger.as_deref_mut() {
            l.charge_selecting(1);
        }
        let baseline = self.baseline_loss(example, ledger)?;
        let f = current - baseline;
        if !f.is_finite() {
            return Err(Error::Numeric {
                example_id: example.id,
                detail: format!("forgetting evaluated to {f}"),
            });
        }
        Ok(f)
    }

    /// Mean forgetting over `batch` and its gradient. The baseline term is
    /// constant in the parameters, so the gradient is the loss gradient.
    pub fn forgetting_with_grad(
        &mut self,
        model: &ModelParams,
        batch: &[Example],
    ) -> Result<(f64, Gradients)> {
        let (mean_loss, grads) = model.backward(batch)?;
        let mut baseline = 0.0;
        for ex in batch {
            baseline += self.baseline_loss(ex, None)?;
        }
        Ok((mean_loss - baseline / batch.len() as f64, grads))
    }
}

/// Anything that can score an example's forgetting.
pub trait ForgettingSource {
    fn forgetting(&mut self, example: &Example) -> Result<f64>;
}

impl<F> ForgettingSource for F
where
    F: FnMut(&Example) -> Result<f64>,
{
    fn forgetting(&mut self, example: &Example) -> Result<f64> {
        self(example)
    }
}

/// Forgetting of a live model against a snapshot, billing every forward pass
/// to the selecting counter.
pub struct LiveForgetting<'a> {
    pub model: &'a ModelParams,
    pub snapshot: &'a mut BaselineSnapshot,
    pub ledger: &'a mut CostLedger,
}

impl ForgettingSource for LiveForgetting<'_> {
    fn forgetting(&mut self, example: &Example) -> Result<f64> {
        self.snapshot
            .forgetting(self.model, example, Some(&mut *self.ledger))
    }
}

/// Average forgetting over `n_probe` uniform draws (with replacement) from `cluster`.
pub fn mean_cluster_forgetting<S, R>(
    source: &mut S,
    cluster: &Cluster,
    n_probe: usize,
    rng: &mut R,
) -> Result<f64>
where
    S: ForgettingSource + ?Sized,
    R: Rng + ?Sized,
{
    let probes = cluster.sample(n_probe, rng)?;
    let mut sum = 0.0;
    for ex in &probes {
        sum += source.forgetting(ex)?;
    }
    Ok(sum / n_probe as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::MemoryStore;
    use crate::model::{Activation, Head, Target};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model(seed: u64) -> ModelParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ModelParams::init(&[3, 5, 1], Activation::Tanh, Head::Regression, &mut rng).unwrap()
    }

    fn ex(id: u64, task_id: usize) -> Example {
        Example {
            id,
            task_id,
            features: vec![0.1 * id as f64, -0.3, 0.7],
            target: Target::Regression(vec![0.5]),
        }
    }

    #[test]
    fn snapshot_is_a_deep_copy() {
        let mut live = model(1);
        let snap = BaselineSnapshot::at_task_boundary(&live);
        let before = snap.frozen_params().clone();
        let (_, g) = live.backward(&[ex(0, 0)]).unwrap();
        live.apply_sgd(&g, 0.5).unwrap();
        assert_eq!(snap.frozen_params(), &before);
        assert_ne!(snap.frozen_params(), &live);
    }

    #[test]
    fn forgetting_is_zero_at_snapshot() {
        let m = model(2);
        let mut a = BaselineSnapshot::at_task_boundary(&m);
        let mut b = BaselineSnapshot::at_task_boundary(&m);
        for id in 0..20 {
            let e = ex(id, 0);
            assert_eq!(a.forgetting(&m, &e, None).unwrap(), 0.0);
            assert_eq!(
                a.baseline_loss(&e, None).unwrap(),
                b.baseline_loss(&e, None).unwrap()
            );
        }
    }

    #[test]
    fn forgetting_sign_follows_loss_change() {
        let target_model = model(3);
        let e = ex(4, 0);
        let mut snap = BaselineSnapshot::at_task_boundary(&target_model);
        let base = snap.baseline_loss(&e, None).unwrap();
        let other = model(4);
        let f = snap.forgetting(&other, &e, None).unwrap();
        assert_eq!(f, other.per_example_loss(&e).unwrap() - base);
    }

    fn bias_model(b: f64) -> ModelParams {
        use crate::model::{DenseMatrix, Layer};
        let layer = Layer::new(DenseMatrix::zeros(1, 3), vec![b]).unwrap();
        ModelParams::new(vec![layer], Activation::Tanh, Head::Regression).unwrap()
    }

    #[test]
    fn arithmetic_examples() {
        // target 0.5, zero weights: loss = (b - 0.5)^2
        let e = ex(0, 0);
        let with_loss = |l: f64| bias_model(0.5 + l.sqrt());
        let mut snap = BaselineSnapshot::at_task_boundary(&with_loss(0.3));
        let f = snap.forgetting(&with_loss(0.5), &e, None).unwrap();
        assert!((f - 0.2).abs() < 1e-12);

        let mut snap = BaselineSnapshot::at_task_boundary(&with_loss(0.4));
        let f = snap.forgetting(&with_loss(0.1), &e, None).unwrap();
        assert!((f + 0.3).abs() < 1e-12);
    }

    #[test]
    fn cache_is_charged_once() {
        let m = model(5);
        let mut snap = BaselineSnapshot::at_task_boundary(&m);
        let mut ledger = CostLedger::new();
        let e = ex(9, 0);
        snap.forgetting(&m, &e, Some(&mut ledger)).unwrap();
        assert_eq!(ledger.selecting_passes, 2);
        snap.forgetting(&m, &e, Some(&mut ledger)).unwrap();
        assert_eq!(ledger.selecting_passes, 3);
        assert_eq!(snap.cache_len(), 1);
    }

    #[test]
    fn constant_cluster_mean() {
        let mut store = MemoryStore::new();
        store.add_task((0..6).map(|i| ex(i, 0)).collect()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut src = |_: &Example| Ok(0.7);
        for n in [1, 3, 17] {
            let v =
                mean_cluster_forgetting(&mut src, store.cluster(0).unwrap(), n, &mut rng).unwrap();
            assert!((v - 0.7).abs() < 1e-12);
        }
        assert!(mean_cluster_forgetting(&mut src, store.cluster(0).unwrap(), 0, &mut rng).is_err());
    }

    #[test]
    fn singleton_cluster_mean_is_its_forgetting() {
        let mut store = MemoryStore::new();
        store.add_task(vec![ex(0, 0)]).unwrap();
        let m = model(6);
        let mut snap = BaselineSnapshot::at_task_boundary(&model(7));
        let expected = snap.clone().forgetting(&m, &ex(0, 0), None).unwrap();
        let mut ledger = CostLedger::new();
        let mut src = LiveForgetting {
            model: &m,
            snapshot: &mut snap,
            ledger: &mut ledger,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = mean_cluster_forgetting(&mut src, store.cluster(0).unwrap(), 1, &mut rng).unwrap();
        assert_eq!(v, expected);
        assert_eq!(ledger.selecting_passes, 2);
    }

    #[test]
    fn two_point_cluster_monte_carlo() {
        let mut store = MemoryStore::new();
        store.add_task(vec![ex(0, 0), ex(1, 0)]).unwrap();
        let mut src = |e: &Example| Ok(e.id as f64);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 10_000;
        let v = mean_cluster_forgetting(&mut src, store.cluster(0).unwrap(), n, &mut rng).unwrap();
        // Bernoulli(0.5): sigma of the mean = 0.5 / sqrt(n)
        assert!((v - 0.5).abs() < 3.0 * 0.5 / (n as f64).sqrt());
    }
}
