//! The benchmark task registry and dataset file layout.
//!
//! Datasets are looked up below a data directory:
//!
//! ```text
//! <data>/mnist/{train,t10k}-{images-idx3,labels-idx1}-ubyte[.gz]
//! <data>/fashion-mnist/{train,t10k}-{images-idx3,labels-idx1}-ubyte[.gz]
//! <data>/cifar-10-batches-bin/{data_batch_1..5,test_batch}.bin
//! ```

use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::datasets::{load_cifar10, load_idx, DatasetError, LabeledDataset, Split};
use crate::optimizee::{Activation, MlpFamily, MlpSpec, QuadraticFamily, TaskFamily};

/// Dimension of the quadratic task family.
pub const QUADRATIC_DIM: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetKind {
    Mnist,
    FashionMnist,
    Cifar10,
}

impl DatasetKind {
    pub fn dir_name(self) -> &'static str {
        match self {
            DatasetKind::Mnist => "mnist",
            DatasetKind::FashionMnist => "fashion-mnist",
            DatasetKind::Cifar10 => "cifar-10-batches-bin",
        }
    }

    /// Files read for a split, relative to the data directory.
    pub fn files(self, split: Split) -> Vec<PathBuf> {
        let dir = PathBuf::from(self.dir_name());
        match self {
            DatasetKind::Mnist | DatasetKind::FashionMnist => {
                let prefix = match split {
                    Split::Train => "train",
                    Split::Test => "t10k",
                };
                vec![
                    dir.join(format!("{prefix}-images-idx3-ubyte")),
                    dir.join(format!("{prefix}-labels-idx1-ubyte")),
                ]
            }
            DatasetKind::Cifar10 => match split {
                Split::Train => (1..=5).map(|i| dir.join(format!("data_batch_{i}.bin"))).collect(),
                Split::Test => vec![dir.join("test_batch.bin")],
            },
        }
    }
}

/// What a registered task optimizes.
#[derive(Clone, Debug, PartialEq)]
pub enum TaskKind {
    Quadratic { dim: usize },
    Mlp { dataset: DatasetKind, spec: MlpSpec },
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskSpec {
    pub name: &'static str,
    pub kind: TaskKind,
}

fn mlp(name: &'static str, dataset: DatasetKind, layers: &[usize], activation: Activation, batch: usize) -> TaskSpec {
    TaskSpec {
        name,
        kind: TaskKind::Mlp {
            dataset,
            spec: MlpSpec::new(layers.to_vec(), activation, batch),
        },
    }
}

/// All benchmark tasks.
pub fn registry() -> Vec<TaskSpec> {
    use Activation::{Relu, Sigmoid};
    use DatasetKind::{Cifar10, FashionMnist, Mnist};
    vec![
        mlp("mnist-1l", Mnist, &[784, 20, 10], Sigmoid, 128),
        mlp("mnist-2l", Mnist, &[784, 20, 20, 10], Sigmoid, 128),
        mlp("mnist-batch", Mnist, &[784, 20, 10], Sigmoid, 16),
        mlp("mnist-relu", Mnist, &[784, 20, 10], Relu, 128),
        mlp("fashion-1l", FashionMnist, &[784, 20, 10], Sigmoid, 128),
        mlp("cifar10-1l", Cifar10, &[3072, 20, 10], Sigmoid, 128),
        mlp("mnist-train", Mnist, &[784, 8, 10], Sigmoid, 128),
        TaskSpec {
            name: "quadratic",
            kind: TaskKind::Quadratic { dim: QUADRATIC_DIM },
        },
    ]
}

pub fn task_names() -> Vec<&'static str> {
    registry().into_iter().map(|t| t.name).collect()
}

pub fn find_task(name: &str) -> Option<TaskSpec> {
    registry().into_iter().find(|t| t.name == name)
}

/// Prefers `path`, falling back to `path.gz`. Returns the gzip name when
/// neither exists so error messages point at the expected download.
fn resolve(data_dir: &Path, relative: &Path) -> PathBuf {
    let plain = data_dir.join(relative);
    if plain.exists() {
        return plain;
    }
    let mut gz = plain.clone().into_os_string();
    gz.push(".gz");
    PathBuf::from(gz)
}

/// Loads one split of a dataset from the standard layout.
pub fn load_dataset(kind: DatasetKind, data_dir: &Path, split: Split) -> Result<LabeledDataset, DatasetError> {
    let files = kind.files(split);
    match kind {
        DatasetKind::Mnist | DatasetKind::FashionMnist => {
            load_idx(&resolve(data_dir, &files[0]), &resolve(data_dir, &files[1]))
        }
        DatasetKind::Cifar10 => {
            let paths: Vec<PathBuf> = files.iter().map(|f| data_dir.join(f)).collect();
            let refs: Vec<&Path> = paths.iter().map(|p| p.as_path()).collect();
            load_cifar10(&refs)
        }
    }
}

/// Builds the task family for `spec`. `train_limit` keeps only the first
/// examples of the training split.
pub fn build_family(
    spec: &TaskSpec,
    data_dir: &Path,
    train_limit: Option<usize>,
) -> Result<Box<dyn TaskFamily>, DatasetError> {
    match &spec.kind {
        TaskKind::Quadratic { dim } => Ok(Box::new(QuadraticFamily::new(*dim))),
        TaskKind::Mlp { dataset, spec: mlp } => {
            let mut train = load_dataset(*dataset, data_dir, Split::Train)?;
            if let Some(limit) = train_limit {
                train = train.truncated(limit);
            }
            let test = load_dataset(*dataset, data_dir, Split::Test)?;
            for d in [&train, &test] {
                if d.is_empty() || d.feature_width() != mlp.layer_sizes[0] {
                    return Err(DatasetError::Consistency(format!(
                        "{} expects {} non-empty features per example, dataset has {} examples of width {}",
                        spec.name,
                        mlp.layer_sizes[0],
                        d.len(),
                        d.feature_width()
                    )));
                }
            }
            Ok(Box::new(MlpFamily::new(spec.name, mlp.clone(), Arc::new(train), Arc::new(test))))
        }
    }
}
