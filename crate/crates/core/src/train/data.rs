use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::matrix::Matrix;
use crate::rng::Rng;

/// Fraction of the training pool carved off for validation.
pub const VALIDATION_FRACTION: f64 = 0.4;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::Shape {
                op: "dataset",
                left: features.shape(),
                right: (labels.len(), 1),
            });
        }
        if labels.iter().any(|&y| y >= classes) {
            return Err(Error::InvalidArgument("label outside [0, classes)"));
        }
        Ok(Self {
            features,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
        }
    }

    /// Concatenation of `self` and `other`.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        Dataset::new(
            self.features.vstack(&other.features)?,
            labels,
            self.classes.max(other.classes),
        )
    }
}

/// Disjoint train / validation / test partitions.
#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

impl Splits {
    /// Randomly moves `floor(0.4 n)` of `pool` into validation.
    pub fn carve_validation(pool: &Dataset, test: Dataset, rng: &mut Rng) -> Splits {
        let n = pool.len();
        let n_val = (n as f64 * VALIDATION_FRACTION) as usize;
        let perm = rng.permutation(n);
        let (val_idx, train_idx) = perm.split_at(n_val);
        let mut val_idx = val_idx.to_vec();
        let mut train_idx = train_idx.to_vec();
        val_idx.sort_unstable();
        train_idx.sort_unstable();
        Splits {
            train: pool.subset(&train_idx),
            val: pool.subset(&val_idx),
            test,
        }
    }

    /// Training and validation merged, for final runs without model selection.
    pub fn full_train(&self) -> Dataset {
        self.train.concat(&self.val).expect("splits share a width")
    }
}

/// Gaussian-mixture benchmark: `modes_per_class` means per class in the
/// informative coordinates plus pure-noise nuisance coordinates.
///
/// With a single mode and shared isotropic spread the optimal classifier is
/// linear, so every network has enough capacity; several modes per class make
/// the boundary nonlinear and give wider models something to gain.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub seed: u64,
    /// Size of the pool that is split 60:40 into train and validation.
    pub n_train: usize,
    pub n_test: usize,
    pub informative_dims: usize,
    pub nuisance_dims: usize,
    pub classes: usize,
    pub modes_per_class: usize,
    /// Distance of every mode mean from the origin.
    pub separation: f64,
    /// Standard deviation around a mode mean.
    pub spread: f64,
}

impl SyntheticSpec {
    /// The standard desk-scale benchmark: 4 classes of 3 modes each, 20 inputs of which 6 are nuisance.
    pub fn standard(seed: u64) -> Self {
        Self {
            seed,
            n_train: 2000,
            n_test: 1000,
            informative_dims: 14,
            nuisance_dims: 6,
            classes: 4,
            modes_per_class: 3,
            separation: 4.0,
            spread: 1.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.informative_dims + self.nuisance_dims
    }
}

fn class_means(spec: &SyntheticSpec, rng: &mut Rng) -> Matrix {
    let modes = spec.classes * spec.modes_per_class;
    let mut means = rng.gaussian(modes, spec.informative_dims, 0.0, 1.0);
    for c in 0..modes {
        let row = means.row_mut(c);
        let n = math::sqrt(row.iter().map(|x| x * x).sum::<f64>()).max(f64::MIN_POSITIVE);
        row.iter_mut().for_each(|x| *x *= spec.separation / n);
    }
    means
}

fn sample(spec: &SyntheticSpec, means: &Matrix, n: usize, rng: &mut Rng) -> Dataset {
    let mut labels: Vec<usize> = (0..n).map(|i| i % spec.classes).collect();
    rng.shuffle(&mut labels);
    let d = spec.dim();
    let mut x = Matrix::zeros(n, d);
    for (i, &y) in labels.iter().enumerate() {
        let m = y * spec.modes_per_class + rng.below(spec.modes_per_class as u64) as usize;
        let row = x.row_mut(i);
        for k in 0..spec.informative_dims {
            row[k] = means[(m, k)] + spec.spread * rng.normal();
        }
        for v in &mut row[spec.informative_dims..] {
            *v = rng.normal();
        }
    }
    Dataset {
        features: x,
        labels,
        classes: spec.classes,
    }
}

pub fn make_synthetic(spec: &SyntheticSpec) -> Result<Splits> {
    if spec.classes < 2 || spec.modes_per_class == 0 || spec.informative_dims == 0 || spec.n_train < 2 {
        return Err(Error::InvalidArgument(
            "synthetic data needs 2+ classes, 1+ informative dim and 2+ samples",
        ));
    }
    if !(spec.separation >= 0.0) || !(spec.spread >= 0.0) {
        return Err(Error::InvalidArgument("separation and spread must be nonnegative"));
    }
    let root = Rng::new(spec.seed);
    let means = class_means(spec, &mut root.derive("means"));
    let pool = sample(spec, &means, spec.n_train, &mut root.derive("train"));
    let test = sample(spec, &means, spec.n_test, &mut root.derive("test"));
    Ok(Splits::carve_validation(&pool, test, &mut root.derive("split")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_sixty_forty_and_disjoint() {
        let mut spec = SyntheticSpec::standard(1);
        spec.n_train = 1001;
        let s = make_synthetic(&spec).unwrap();
        assert_eq!(s.val.len(), 400);
        assert_eq!(s.train.len(), 601);
        assert_eq!(s.test.len(), 1000);
        spec.n_train = 1000;
        let s = make_synthetic(&spec).unwrap();
        assert_eq!((s.train.len(), s.val.len()), (600, 400));
        // rows are continuous draws, so any shared row would mean overlap
        for i in 0..s.val.len() {
            for j in 0..s.train.len() {
                assert_ne!(s.val.features.row(i), s.train.features.row(j));
            }
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let spec = SyntheticSpec::standard(9);
        assert_eq!(make_synthetic(&spec).unwrap(), make_synthetic(&spec).unwrap());
        let other = SyntheticSpec::standard(10);
        assert_ne!(make_synthetic(&spec).unwrap(), make_synthetic(&other).unwrap());
    }

    #[test]
    fn zero_spread_collapses_modes_to_points() {
        let mut spec = SyntheticSpec::standard(2);
        spec.spread = 0.0;
        spec.nuisance_dims = 0;
        let s = make_synthetic(&spec).unwrap();
        for y in 0..spec.classes {
            let mut points: Vec<&[f64]> = (0..s.train.len())
                .filter(|&i| s.train.labels[i] == y)
                .map(|i| s.train.features.row(i))
                .collect();
            points.sort_by(|a, b| a.partial_cmp(b).unwrap());
            points.dedup();
            assert_eq!(points.len(), spec.modes_per_class);
        }
    }

    #[test]
    fn labels_are_balanced_and_in_range() {
        let spec = SyntheticSpec::standard(3);
        let s = make_synthetic(&spec).unwrap();
        let mut counts = [0usize; 4];
        for &y in s.test.labels.iter() {
            counts[y] += 1;
        }
        assert_eq!(counts, [250; 4]);
        assert_eq!(s.train.dim(), 20);
    }

    #[test]
    fn dataset_validates_labels() {
        assert!(Dataset::new(Matrix::zeros(2, 1), alloc::vec![0, 2], 2).is_err());
        assert!(Dataset::new(Matrix::zeros(2, 1), alloc::vec![0], 2).is_err());
    }
}
