//! Full-memory store of past task data, one cluster per task.

use std::collections::HashSet;

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::Example;

#[derive(Debug, Clone)]
pub struct Cluster {
    id: usize,
    examples: Vec<Example>,
}

impl Cluster {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// `n` uniform draws with replacement.
    pub fn sample<'a, R: Rng + ?Sized>(
        &'a self,
        n: usize,
        rng: &mut R,
    ) -> Result<Vec<&'a Example>> {
        if n == 0 {
            return Err(Error::usage("sample size must be at least 1"));
        }
        if self.examples.is_empty() {
            return Err(Error::Internal(format!("cluster {} is empty", self.id)));
        }
        Ok((0..n)
            .map(|_| &self.examples[rng.random_range(0..self.examples.len())])
            .collect())
    }

    pub(crate) fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> &Example {
        &self.examples[rng.random_range(0..self.examples.len())]
    }
}

/// Every past example, grouped so that cluster `i` holds exactly task `i`.
#[derive(Debug, Clone, Default)]
pub struct MemoryStore {
    clusters: Vec<Cluster>,
    ids: HashSet<u64>,
    total: usize,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn clusters(&self) -> &[Cluster] {
        &self.clusters
    }

    pub fn cluster(&self, id: usize) -> Option<&Cluster> {
        self.clusters.get(id)
    }

    /// Number of clusters K.
    pub fn num_clusters(&self) -> usize {
        self.clusters.len()
    }

    /// Total number of stored examples.
    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = &Example> {
        self.clusters.iter().flat_map(|c| c.examples.iter())
    }

    /// Appends a cluster holding all of `task_data`. The task id must equal the
    /// next cluster index so ids stay dense.
    pub fn add_task(&mut self, task_data: Vec<Example>) -> Result<()> {
        let Some(first) = task_data.first() else {
            return Err(Error::usage("cannot add an empty task to memory"));
        };
        let task_id = first.task_id;
        if task_id < self.clusters.len() {
            return Err(Error::usage(format!("task {task_id} is already stored")));
        }
        if task_id != self.clusters.len() {
            return Err(Error::usage(format!(
                "task {task_id} added out of order; expected task {}",
                self.clusters.len()
            )));
        }
        if let Some(ex) = task_data.iter().find(|e| e.task_id != task_id) {
            return Err(Error::usage(format!(
                "example {} has task {} inside task {task_id}",
                ex.id, ex.task_id
            )));
        }
        let mut fresh = HashSet::with_capacity(task_data.len());
        for ex in &task_data {
            if self.ids.contains(&ex.id) || !fresh.insert(ex.id) {
                return Err(Error::usage(format!("duplicate example id {}", ex.id)));
            }
        }
        self.ids.extend(fresh);
        self.total += task_data.len();
        self.clusters.push(Cluster {
            id: task_id,
            examples: task_data,
        });
        Ok(())
    }

    /// `n` draws with replacement from the union of all clusters.
    ///
    /// With `task_balanced = false` every stored example is equally likely;
    /// with `true` a cluster is picked uniformly first, then an example in it.
    pub fn sample_iid_past<'a, R: Rng + ?Sized>(
        &'a self,
        n: usize,
        task_balanced: bool,
        rng: &mut R,
    ) -> Result<Vec<&'a Example>> {
        if n == 0 {
            return Err(Error::usage("sample size must be at least 1"));
        }
        if self.is_empty() {
            return Err(Error::usage("cannot sample from an empty memory store"));
        }
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            if task_balanced {
                let c = &self.clusters[rng.random_range(0..self.clusters.len())];
                out.push(c.sample_one(rng));
            } else {
                let mut idx = rng.random_range(0..self.total);
                for c in &self.clusters {
                    if idx < c.len() {
                        out.push(&c.examples[idx]);
                        break;
                    }
                    idx -= c.len();
                }
            }
        }
        Ok(out)
    }
}
