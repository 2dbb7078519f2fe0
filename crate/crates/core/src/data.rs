//! Task sequences: synthetic generators and CSV/manifest ingestion.
//!
//! Example ids are assigned sequentially across the whole sequence: task 0
//! train rows, task 0 test rows, task 1 train rows, and so on. Generated and
//! loaded datasets follow the same scheme, so a save/load round trip is exact.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Example, Head, Target};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schema {
    pub feature_dim: usize,
    pub head: Head,
    /// Regression output width; ignored for classification.
    #[serde(default = "one")]
    pub target_dim: usize,
    #[serde(default)]
    pub num_classes: Option<usize>,
}

fn one() -> usize {
    1
}

impl Schema {
    pub fn output_dim(&self) -> usize {
        match self.head {
            Head::Regression => self.target_dim,
            Head::Classification => self.num_classes.unwrap_or(0),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 {
            return Err(Error::config("feature_dim must be positive"));
        }
        match self.head {
            Head::Regression if self.target_dim == 0 => {
                Err(Error::config("target_dim must be positive"))
            }
            Head::Classification if self.num_classes.unwrap_or(0) < 2 => Err(Error::config(
                "classification schema needs num_classes >= 2",
            )),
            _ => Ok(()),
        }
    }

    fn check_example(&self, ex: &Example) -> std::result::Result<(), String> {
        if ex.features.len() != self.feature_dim {
            return Err(format!(
                "example {} has {} features, schema says {}",
                ex.id,
                ex.features.len(),
                self.feature_dim
            ));
        }
        match (&ex.target, self.head) {
            (Target::Regression(t), Head::Regression) if t.len() == self.target_dim => Ok(()),
            (Target::Class(c), Head::Classification) if Some(*c) < self.num_classes => Ok(()),
            _ => Err(format!("example {} target does not match schema", ex.id)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskDataset {
    pub task_id: usize,
    pub train: Vec<Example>,
    pub test: Vec<Example>,
    pub schema: Schema,
}

/// Checks the invariants every task sequence must satisfy before training.
pub fn validate_sequence(tasks: &[TaskDataset]) -> Result<Schema> {
    let Some(first) = tasks.first() else {
        return Err(Error::config("task sequence is empty"));
    };
    let schema = first.schema;
    schema.validate()?;
    let mut seen = std::collections::HashSet::new();
    for (i, t) in tasks.iter().enumerate() {
        if t.task_id != i {
            return Err(Error::config(format!(
                "task ids must be dense from 0; found {} at position {i}",
                t.task_id
            )));
        }
        if t.schema != schema {
            return Err(Error::config(format!(
                "task {i} schema differs from task 0"
            )));
        }
        if t.train.is_empty() || t.test.is_empty() {
            return Err(Error::config(format!(
                "task {i} needs non-empty train and test sets"
            )));
        }
        for ex in t.train.iter().chain(&t.test) {
            if ex.task_id != i {
                return Err(Error::config(format!(
                    "example {} tagged with task {} inside task {i}",
                    ex.id, ex.task_id
                )));
            }
            schema.check_example(ex).map_err(Error::Config)?;
            if !seen.insert(ex.id) {
                return Err(Error::config(format!("duplicate example id {}", ex.id)));
            }
        }
    }
    Ok(schema)
}

/// Rotated linear regression tasks.
///
/// Inputs are standard normal. Task `t` uses the ground-truth direction
/// rotated by `t * rotation_degrees_per_task` inside a fixed random plane,
/// `y = w_t . x + noise`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RotatedRegressionSpec {
    pub num_tasks: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub dim: usize,
    pub rotation_degrees_per_task: f64,
    pub noise_sigma: f64,
}

pub fn gen_rotated_regression(spec: &RotatedRegressionSpec, seed: u64) -> Result<Vec<TaskDataset>> {
    if spec.dim < 2 {
        return Err(Error::config("rotated regression needs dim >= 2"));
    }
    if spec.num_tasks < 2 || spec.n_train == 0 || spec.n_test == 0 {
        return Err(Error::config(
            "rotated regression needs >= 2 tasks and non-empty splits",
        ));
    }
    if !(spec.noise_sigma >= 0.0 && spec.noise_sigma.is_finite())
        || !spec.rotation_degrees_per_task.is_finite()
    {
        return Err(Error::config(
            "noise_sigma and rotation must be finite, noise >= 0",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (u, v) = random_plane(spec.dim, &mut rng);
    let schema = Schema {
        feature_dim: spec.dim,
        head: Head::Regression,
        target_dim: 1,
        num_classes: None,
    };
    let mut next_id = 0u64;
    let mut tasks = Vec::with_capacity(spec.num_tasks);
    for t in 0..spec.num_tasks {
        let angle = (t as f64 * spec.rotation_degrees_per_task).to_radians();
        let w: Vec<f64> = u
            .iter()
            .zip(&v)
            .map(|(a, b)| angle.cos() * a + angle.sin() * b)
            .collect();
        let mut draw = |n: usize, rng: &mut ChaCha8Rng| -> Vec<Example> {
            (0..n)
                .map(|_| {
                    let x: Vec<f64> = (0..spec.dim).map(|_| rng.sample(StandardNormal)).collect();
                    let noise: f64 = rng.sample(StandardNormal);
                    let y = dot(&w, &x) + spec.noise_sigma * noise;
                    next_id += 1;
                    Example {
                        id: next_id - 1,
                        task_id: t,
                        features: x,
                        target: Target::Regression(vec![y]),
                    }
                })
                .collect()
        };
        let train = draw(spec.n_train, &mut rng);
        let test = draw(spec.n_test, &mut rng);
        tasks.push(TaskDataset {
            task_id: t,
            train,
            test,
            schema,
        });
    }
    Ok(tasks)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Orthonormal pair from Gram-Schmidt on two Gaussian vectors.
fn random_plane(dim: usize, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    loop {
        let a: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let b: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let na = dot(&a, &a).sqrt();
        if na < 1e-6 {
            continue;
        }
        let u: Vec<f64> = a.iter().map(|x| x / na).collect();
        let proj = dot(&u, &b);
        let r: Vec<f64> = b.iter().zip(&u).map(|(x, y)| x - proj * y).collect();
        let nr = dot(&r, &r).sqrt();
        if nr < 1e-6 {
            continue;
        }
        return (u, r.iter().map(|x| x / nr).collect());
    }
}

/// Gaussian-blob classification with a per-task feature permutation.
///
/// Class `c` is centred at `separation / sqrt(2)` along axis `c`, so class
/// centres sit `separation` apart with unit-variance noise. Task 0 is
/// unpermuted; later tasks shuffle feature columns with a seeded permutation
/// unless `permute` is false.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PermutedClassificationSpec {
    pub num_tasks: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub dim: usize,
    pub num_classes: usize,
    #[serde(default = "default_separation")]
    pub separation: f64,
    #[serde(default = "yes")]
    pub permute: bool,
}

fn default_separation() -> f64 {
    6.0
}

fn yes() -> bool {
    true
}

pub fn gen_permuted_classification(
    spec: &PermutedClassificationSpec,
    seed: u64,
) -> Result<Vec<TaskDataset>> {
    if spec.num_classes < 2 {
        return Err(Error::config("num_classes must be >= 2"));
    }
    if spec.num_classes > spec.dim {
        return Err(Error::config("num_classes cannot exceed dim"));
    }
    if spec.num_tasks < 2 || spec.n_train == 0 || spec.n_test == 0 {
        return Err(Error::config(
            "classification sequence needs >= 2 tasks and non-empty splits",
        ));
    }
    if !(spec.separation > 0.0 && spec.separation.is_finite()) {
        return Err(Error::config("separation must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offset = spec.separation / 2f64.sqrt();
    let schema = Schema {
        feature_dim: spec.dim,
        head: Head::Classification,
        target_dim: 1,
        num_classes: Some(spec.num_classes),
    };
    let mut next_id = 0u64;
    let mut tasks = Vec::with_capacity(spec.num_tasks);
    for t in 0..spec.num_tasks {
        let mut perm: Vec<usize> = (0..spec.dim).collect();
        if spec.permute && t > 0 {
            perm.shuffle(&mut rng);
        }
        let mut draw = |n: usize, rng: &mut ChaCha8Rng| -> Vec<Example> {
            (0..n)
                .map(|_| {
                    let class = rng.random_range(0..spec.num_classes);
                    let raw: Vec<f64> = (0..spec.dim)
                        .map(|d| {
                            let z: f64 = rng.sample(StandardNormal);
                            z + if d == class { offset } else { 0.0 }
                        })
                        .collect();
                    next_id += 1;
                    Example {
                        id: next_id - 1,
                        task_id: t,
                        features: perm.iter().map(|&p| raw[p]).collect(),
                        target: Target::Class(class),
                    }
                })
                .collect()
        };
        let train = draw(spec.n_train, &mut rng);
        let test = draw(spec.n_test, &mut rng);
        tasks.push(TaskDataset {
            task_id: t,
            train,
            test,
            schema,
        });
    }
    Ok(tasks)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub task_id: usize,
    pub train_path: PathBuf,
    pub test_path: PathBuf,
}

/// Index of per-task CSV files. Relative paths resolve against the
/// manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskManifest {
    pub schema: Schema,
    pub tasks: Vec<ManifestEntry>,
}

fn csv_header(schema: &Schema) -> Vec<String> {
    let mut h: Vec<String> = (0..schema.feature_dim).map(|i| format!("x{i}")).collect();
    match schema.head {
        Head::Regression => h.extend((0..schema.target_dim).map(|i| format!("y{i}"))),
        Head::Classification => h.push("label".to_string()),
    }
    h
}

fn write_csv(path: &Path, schema: &Schema, rows: &[Example]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    w.write_record(csv_header(schema))
        .map_err(|e| csv_io(path, e))?;
    for ex in rows {
        let mut rec: Vec<String> = ex.features.iter().map(|v| v.to_string()).collect();
        match &ex.target {
            Target::Regression(t) => rec.extend(t.iter().map(|v| v.to_string())),
            Target::Class(c) => rec.push(c.to_string()),
        }
        w.write_record(&rec).map_err(|e| csv_io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::load(path, line, e.to_string())
}

/// Writes `tasks` as `task{t}_train.csv` / `task{t}_test.csv` plus
/// `manifest.json` into `dir`. Returns the manifest path.
pub fn save_sequence(tasks: &[TaskDataset], dir: &Path) -> Result<PathBuf> {
    let schema = validate_sequence(tasks)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(tasks.len());
    for t in tasks {
        let train = PathBuf::from(format!("task{}_train.csv", t.task_id));
        let test = PathBuf::from(format!("task{}_test.csv", t.task_id));
        write_csv(&dir.join(&train), &schema, &t.train)?;
        write_csv(&dir.join(&test), &schema, &t.test)?;
        entries.push(ManifestEntry {
            task_id: t.task_id,
            train_path: train,
            test_path: test,
        });
    }
    let manifest = TaskManifest {
        schema,
        tasks: entries,
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn read_csv(
    path: &Path,
    schema: &Schema,
    task_id: usize,
    next_id: &mut u64,
) -> Result<Vec<Example>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => Error::load(path, 0, format!("cannot open: {e}")),
            _ => csv_io(path, e),
        })?;
    let expected = csv_header(schema);
    let header = r.headers().map_err(|e| csv_io(path, e))?.clone();
    if header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(Error::load(
            path,
            1,
            format!(
                "header {:?} does not match schema columns {:?}",
                header.iter().collect::<Vec<_>>(),
                expected
            ),
        ));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_io(path, e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != expected.len() {
            return Err(Error::load(
                path,
                line,
                format!("expected {} fields, found {}", expected.len(), rec.len()),
            ));
        }
        let mut values = Vec::with_capacity(rec.len());
        for (col, field) in rec.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::load(
                    path,
                    line,
                    format!("column {} is not a number: {field:?}", expected[col]),
                )
            })?;
            if !v.is_finite() {
                return Err(Error::load(
                    path,
                    line,
                    format!("column {} is not finite", expected[col]),
                ));
            }
            values.push(v);
        }
        let features = values[..schema.feature_dim].to_vec();
        let target = match schema.head {
            Head::Regression => Target::Regression(values[schema.feature_dim..].to_vec()),
            Head::Classification => {
                let raw = values[schema.feature_dim];
                let k = schema.num_classes.unwrap_or(0);
                if raw.fract() != 0.0 || raw < 0.0 || raw as usize >= k {
                    return Err(Error::load(
                        path,
                        line,
                        format!("label {raw} outside 0..{k}"),
                    ));
                }
                Target::Class(raw as usize)
            }
        };
        out.push(Example {
            id: *next_id,
            task_id,
            features,
            target,
        });
        *next_id += 1;
    }
    if out.is_empty() {
        return Err(Error::load(path, 1, "file has no data rows"));
    }
    Ok(out)
}

/// Loads every task listed in the manifest at `path`.
pub fn load_manifest(path: &Path) -> Result<Vec<TaskDataset>> {
    let text =
        fs::read_to_string(path).map_err(|e| Error::load(path, 0, format!("cannot open: {e}")))?;
    let manifest: TaskManifest =
        serde_json::from_str(&text).map_err(|e| Error::load(path, e.line(), e.to_string()))?;
    manifest
        .schema
        .validate()
        .map_err(|e| Error::load(path, 0, e.to_string()))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut next_id = 0u64;
    let mut tasks = Vec::with_capacity(manifest.tasks.len());
    for (i, entry) in manifest.tasks.iter().enumerate() {
        if entry.task_id != i {
            return Err(Error::load(
                path,
                0,
                format!(
                    "task ids must be dense from 0; entry {i} has task_id {}",
                    entry.task_id
                ),
            ));
        }
        let train = read_csv(
            &base.join(&entry.train_path),
            &manifest.schema,
            i,
            &mut next_id,
        )?;
        let test = read_csv(
            &base.join(&entry.test_path),
            &manifest.schema,
            i,
            &mut next_id,
        )?;
        tasks.push(TaskDataset {
            task_id: i,
            train,
            test,
            schema: manifest.schema,
        });
    }
    validate_sequence(&tasks)?;
    Ok(tasks)
}
