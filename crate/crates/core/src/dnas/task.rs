use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::{Error, Result};

/// Feature rows (`n x d`, row-major) and their class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSplit {
    pub x: Vec<f64>,
    pub y: Vec<usize>,
}

impl TaskSplit {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Features and labels (as reals) of the rows in `idx`.
    pub(crate) fn gather(&self, idx: &[usize], d: usize) -> (Vec<f64>, Vec<f64>) {
        let mut x = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            x.extend_from_slice(&self.x[i * d..(i + 1) * d]);
        }
        (x, idx.iter().map(|&i| self.y[i] as f64).collect())
    }
}

/// A small classification problem standing in for the search and
/// evaluation datasets.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskData {
    pub input_dim: usize,
    pub num_classes: usize,
    pub train: TaskSplit,
    pub val: TaskSplit,
    pub test: TaskSplit,
}

impl TaskData {
    /// The same features with every label replaced by class 0.
    pub fn with_constant_labels(&self) -> Self {
        let flat = |s: &TaskSplit| TaskSplit {
            x: s.x.clone(),
            y: vec![0; s.len()],
        };
        Self {
            train: flat(&self.train),
            val: flat(&self.val),
            test: flat(&self.test),
            ..self.clone()
        }
    }
}

/// `C` isotropic Gaussian clusters centred at `e_j / sqrt(2)`, so every
/// pair of centres is one unit apart. Labels cycle through the classes
/// before shuffling, which balances them to within one sample; the shuffled
/// rows are split 60/20/20 into train, validation and test.
pub fn gen_task_data(seed: u64, n: usize, d: usize, c: usize, noise: f64) -> Result<TaskData> {
    if c < 2 || n < c {
        return Err(Error::InvalidConfig(format!(
            "need at least 2 classes and n >= C, got n={n}, C={c}"
        )));
    }
    if c > d {
        return Err(Error::InvalidConfig(format!(
            "{c} unit-spaced centres need d >= C, got d={d}"
        )));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "noise must be a non-negative std, got {noise}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<usize> = (0..n).map(|i| i % c).collect();
    labels.shuffle(&mut rng);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let centre = std::f64::consts::FRAC_1_SQRT_2;
    let mut x = Vec::with_capacity(n * d);
    for &y in &labels {
        for j in 0..d {
            let mean = if j == y { centre } else { 0.0 };
            x.push(mean + noise * normal.sample(&mut rng));
        }
    }
    let n_train = n * 3 / 5;
    let n_val = n / 5;
    let split = |a: usize, b: usize| TaskSplit {
        x: x[a * d..b * d].to_vec(),
        y: labels[a..b].to_vec(),
    };
    Ok(TaskData {
        input_dim: d,
        num_classes: c,
        train: split(0, n_train),
        val: split(n_train, n_train + n_val),
        test: split(n_train + n_val, n),
    })
}
