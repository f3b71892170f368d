//! Labelled feature datasets: synthetic Gaussian blobs and the CSV format.
//!
//! CSV layout: a header `label,x0,x1,...`, then one record per line with the
//! integer label followed by `input_dim` features. UTF-8, LF line endings.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::Sample;
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    input_dim: usize,
    num_classes: usize,
    features: Vec<f64>,
    labels: Vec<usize>,
}

impl Dataset {
    pub fn new(input_dim: usize, num_classes: usize, features: Vec<f64>, labels: Vec<usize>) -> Result<Self> {
        if input_dim == 0 || num_classes < 2 {
            return Err(Error::InvalidArgument(format!(
                "dataset needs input_dim >= 1 and >= 2 classes, got {input_dim} and {num_classes}"
            )));
        }
        if features.len() != labels.len() * input_dim {
            return Err(Error::DimensionMismatch {
                expected: labels.len() * input_dim,
                got: features.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(Self {
            input_dim,
            num_classes,
            features,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self, index: usize) -> &[f64] {
        &self.features[index * self.input_dim..(index + 1) * self.input_dim]
    }

    pub fn sample(&self, index: usize) -> Sample<'_> {
        (self.features(index), self.labels[index])
    }

    pub fn samples(&self, indices: &[usize]) -> Vec<Sample<'_>> {
        indices.iter().map(|&i| self.sample(i)).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = Sample<'_>> {
        (0..self.len()).map(move |i| self.sample(i))
    }

    /// Same features, labels replaced by `f(label)`.
    pub fn map_labels(&self, f: impl Fn(usize) -> usize) -> Result<Self> {
        Self::new(
            self.input_dim,
            self.num_classes,
            self.features.clone(),
            self.labels.iter().map(|&l| f(l)).collect(),
        )
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut writer = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_path(path)?;
        let mut header = vec!["label".to_string()];
        header.extend((0..self.input_dim).map(|i| format!("x{i}")));
        writer.write_record(&header)?;
        for (x, label) in self.iter() {
            let mut row = vec![label.to_string()];
            row.extend(x.iter().map(|v| v.to_string()));
            writer.write_record(&row)?;
        }
        writer.flush()?;
        Ok(())
    }

    /// Reads a dataset CSV. `num_classes` defaults to `max label + 1` (at least 2).
    pub fn read_csv(path: &Path, num_classes: Option<usize>) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let width = reader.headers()?.len();
        if width < 2 {
            return Err(Error::Config(format!(
                "{}: need a label column and at least one feature column",
                path.display()
            )));
        }
        let input_dim = width - 1;
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for (line, record) in reader.records().enumerate() {
            let record = record?;
            let bad = |what: &str| Error::Config(format!("{}: record {}: {what}", path.display(), line + 1));
            let label: usize = record[0].trim().parse().map_err(|_| bad("label is not a nonnegative integer"))?;
            labels.push(label);
            for field in record.iter().skip(1) {
                let v: f64 = field.trim().parse().map_err(|_| bad("feature is not a number"))?;
                if !v.is_finite() {
                    return Err(bad("feature is not finite"));
                }
                features.push(v);
            }
        }
        let classes = num_classes.unwrap_or_else(|| labels.iter().max().map_or(2, |m| (m + 1).max(2)));
        Self::new(input_dim, classes, features, labels)
    }
}

/// Synthetic classification task: `num_classes` unit-variance Gaussian blobs
/// whose means sit at distance `separation` from the origin along mutually
/// orthogonal random directions (when `num_classes <= input_dim`).
///
/// Returns `(train, dev)` with a 90/10 split. Deterministic in `seed`.
pub fn gaussian_blobs(
    num_records: usize,
    input_dim: usize,
    num_classes: usize,
    separation: f64,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    if num_records < 10 {
        return Err(Error::InvalidArgument(format!(
            "need at least 10 records, got {num_records}"
        )));
    }
    if input_dim == 0 || num_classes < 2 {
        return Err(Error::InvalidArgument(format!(
            "need input_dim >= 1 and >= 2 classes, got {input_dim} and {num_classes}"
        )));
    }
    if !(separation >= 0.0 && separation.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "separation must be finite and >= 0, got {separation}"
        )));
    }
    let mut rng = rng::stream(seed, &[rng::tags::DATA]);
    let mut directions: Vec<Vec<f64>> = Vec::with_capacity(num_classes);
    for _ in 0..num_classes {
        let mut v: Vec<f64> = (0..input_dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        if directions.len() < input_dim {
            for u in &directions {
                let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(u).for_each(|(a, b)| *a -= dot * b);
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        v.iter_mut().for_each(|a| *a /= norm);
        directions.push(v);
    }

    let mut features = Vec::with_capacity(num_records * input_dim);
    let mut labels = Vec::with_capacity(num_records);
    for _ in 0..num_records {
        let label = rng.random_range(0..num_classes);
        for u in &directions[label] {
            let z: f64 = StandardNormal.sample(&mut rng);
            features.push(separation * u + z);
        }
        labels.push(label);
    }

    let train_len = num_records - num_records / 10;
    let dev_features = features.split_off(train_len * input_dim);
    let dev_labels = labels.split_off(train_len);
    Ok((
        Dataset::new(input_dim, num_classes, features, labels)?,
        Dataset::new(input_dim, num_classes, dev_features, dev_labels)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blobs_are_deterministic_and_split() {
        let (train, dev) = gaussian_blobs(2000, 20, 2, 3.0, 1).unwrap();
        assert_eq!(train.len(), 1800);
        assert_eq!(dev.len(), 200);
        assert_eq!(gaussian_blobs(2000, 20, 2, 3.0, 1).unwrap().0, train);
        assert_ne!(gaussian_blobs(2000, 20, 2, 3.0, 2).unwrap().0, train);
        assert!(gaussian_blobs(9, 20, 2, 3.0, 1).is_err());
        assert!(gaussian_blobs(100, 0, 2, 3.0, 1).is_err());
        assert!(gaussian_blobs(100, 3, 1, 3.0, 1).is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let (train, _) = gaussian_blobs(50, 4, 3, 2.0, 7).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.csv");
        train.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("label,x0,x1,x2,x3\n"));
        assert!(!text.contains('\r'));
        let back = Dataset::read_csv(&path, Some(3)).unwrap();
        assert_eq!(back, train);
    }

    #[test]
    fn csv_rejects_bad_records() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "label,x0,x1\n0,1.0,2.0\n1,abc,2.0\n").unwrap();
        assert!(matches!(Dataset::read_csv(&path, None), Err(Error::Config(_))));
        std::fs::write(&path, "label,x0,x1\n0,1.0,2.0\n1,2.0\n").unwrap();
        assert!(Dataset::read_csv(&path, None).is_err());
        std::fs::write(&path, "label,x0\n0,1.0\n3,2.0\n").unwrap();
        assert!(Dataset::read_csv(&path, Some(2)).is_err());
    }
}
