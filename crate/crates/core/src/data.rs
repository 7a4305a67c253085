//! Synthetic datasets and forget/retain/test splits.
//!
//! Dataset files use a flat little-endian layout:
//!
//! ```text
//! N  u32 | d  u32 | K  u32
//! features  f64 x (N * d), row-major
//! labels    u32 x N
//! ```

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Half-width of the cube blob centers are drawn from.
pub const BLOB_CENTER_RANGE: f64 = 4.0;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    features: Array2<f64>,
    labels: Vec<usize>,
    classes: usize,
    pub provenance: String,
}

impl LabeledSet {
    pub fn new(
        features: Array2<f64>,
        labels: Vec<usize>,
        classes: usize,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        if features.nrows() == 0 {
            return Err(Error::Empty("labeled set"));
        }
        if features.nrows() != labels.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} feature rows but {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        if let Some(&label) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        if let Some((index, &value)) = features.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { index, value });
        }
        Ok(Self {
            features: features.as_standard_layout().into_owned(),
            labels,
            classes,
            provenance: provenance.into(),
        })
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize], provenance: impl Into<String>) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::Data(format!(
                "index {bad} out of range for {} rows",
                self.len()
            )));
        }
        let features = self.features.select(ndarray::Axis(0), indices);
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Self::new(features, labels, self.classes, provenance)
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        for v in [self.len(), self.dim(), self.classes] {
            out.write_all(&(v as u32).to_le_bytes())?;
        }
        for &x in self.features.iter() {
            out.write_all(&x.to_le_bytes())?;
        }
        for &y in &self.labels {
            out.write_all(&(y as u32).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut input: R, provenance: impl Into<String>) -> Result<Self> {
        let mut u = [0u8; 4];
        let mut header = [0usize; 3];
        for h in &mut header {
            input.read_exact(&mut u)?;
            *h = u32::from_le_bytes(u) as usize;
        }
        let [n, d, k] = header;
        if n == 0 || d == 0 || k < 2 {
            return Err(Error::Format(format!(
                "bad dataset header N={n} d={d} K={k}"
            )));
        }
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes)?;
        let expected = n * d * 8 + n * 4;
        if bytes.len() != expected {
            return Err(Error::Format(format!(
                "dataset body has {} bytes, header implies {expected}",
                bytes.len()
            )));
        }
        let (feat, lab) = bytes.split_at(n * d * 8);
        let features = feat
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let labels = lab
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")) as usize)
            .collect();
        let features = Array2::from_shape_vec((n, d), features).expect("sized above");
        Self::new(features, labels, k, provenance)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        crate::io::write_atomic(path.as_ref(), &buf)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path)?;
        Self::read_from(bytes.as_slice(), path.display().to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Blobs,
    Moons,
    Rings,
}

impl std::str::FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "blobs" => Ok(Self::Blobs),
            "moons" => Ok(Self::Moons),
            "rings" => Ok(Self::Rings),
            other => Err(Error::Config(format!(
                "unknown dataset kind {other:?} (expected blobs, moons or rings)"
            ))),
        }
    }
}

impl std::fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Blobs => "blobs",
            Self::Moons => "moons",
            Self::Rings => "rings",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub kind: DatasetKind,
    pub classes: usize,
    pub samples: usize,
    /// Standard deviation of the isotropic Gaussian noise.
    pub noise: f64,
    /// Feature dimension. Moons and rings live in the first two
    /// coordinates; any further coordinates are pure noise.
    pub dim: usize,
    pub seed: u64,
}

/// Balanced synthetic classification data, deterministic in `spec.seed`.
///
/// Class counts differ by at most one; rows are shuffled.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<LabeledSet> {
    let SyntheticSpec {
        kind,
        classes,
        samples,
        noise,
        dim,
        seed,
    } = *spec;
    if classes < 2 {
        return Err(Error::Config("need at least 2 classes".into()));
    }
    if samples < classes {
        return Err(Error::Config(format!(
            "{samples} samples cannot cover {classes} classes"
        )));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::Config(format!("noise must be >= 0, got {noise}")));
    }
    match kind {
        DatasetKind::Moons if classes != 2 => {
            return Err(Error::Config("moons requires exactly 2 classes".into()))
        }
        DatasetKind::Moons | DatasetKind::Rings if dim < 2 => {
            return Err(Error::Config(format!("{kind} needs dim >= 2")))
        }
        _ if dim == 0 => return Err(Error::Config("dim must be positive".into())),
        _ => {}
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gauss = Normal::new(0.0, 1.0).expect("unit normal");
    let centers: Vec<Vec<f64>> = match kind {
        DatasetKind::Blobs => (0..classes)
            .map(|_| {
                (0..dim)
                    .map(|_| rng.gen_range(-BLOB_CENTER_RANGE..BLOB_CENTER_RANGE))
                    .collect()
            })
            .collect(),
        _ => Vec::new(),
    };

    let mut labels: Vec<usize> = (0..samples).map(|i| i % classes).collect();
    labels.shuffle(&mut rng);
    let mut features = Array2::<f64>::zeros((samples, dim));
    for (i, &y) in labels.iter().enumerate() {
        let mut row = features.row_mut(i);
        match kind {
            DatasetKind::Blobs => {
                for (j, c) in centers[y].iter().enumerate() {
                    row[j] = *c;
                }
            }
            DatasetKind::Moons => {
                let t = rng.gen_range(0.0..std::f64::consts::PI);
                let (x0, x1) = if y == 0 {
                    (t.cos(), t.sin())
                } else {
                    (1.0 - t.cos(), 0.5 - t.sin())
                };
                row[0] = x0;
                row[1] = x1;
            }
            DatasetKind::Rings => {
                let t = rng.gen_range(0.0..std::f64::consts::TAU);
                let r = 1.0 + y as f64;
                row[0] = r * t.cos();
                row[1] = r * t.sin();
            }
        }
        for v in row.iter_mut() {
            *v += noise * gauss.sample(&mut rng);
        }
    }
    LabeledSet::new(features, labels, classes, format!("{kind}(seed={seed})"))
}

/// Disjoint train/test partition of `data`.
pub fn train_test_split(
    data: &LabeledSet,
    test_fraction: f64,
    seed: u64,
) -> Result<(LabeledSet, LabeledSet)> {
    let n_test = split_size(data.len(), test_fraction, "test")?;
    let (test_idx, train_idx) = seeded_partition(data.len(), n_test, seed);
    Ok((
        data.subset(&train_idx, format!("{}/train", data.provenance))?,
        data.subset(&test_idx, format!("{}/test", data.provenance))?,
    ))
}

/// `round_half_even(fraction * n)`, rejected when it leaves either side empty.
fn split_size(n: usize, fraction: f64, what: &str) -> Result<usize> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!(
            "{what} ratio must lie in (0, 1), got {fraction}"
        )));
    }
    let m = (fraction * n as f64).round_ties_even() as usize;
    if m == 0 || m >= n {
        return Err(Error::Config(format!(
            "{what} ratio {fraction} on {n} samples leaves an empty side"
        )));
    }
    Ok(m)
}

/// Seeded shuffle of `0..n`; the first `m` indices and the rest, each sorted.
fn seeded_partition(n: usize, m: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut first = perm[..m].to_vec();
    let mut rest = perm[m..].to_vec();
    first.sort_unstable();
    rest.sort_unstable();
    (first, rest)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scenario", rename_all = "snake_case")]
pub enum Scenario {
    Random { ratio: f64 },
    Classwise { class: usize },
}

/// Forget/retain partition of a training set, plus the held-out test set.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: LabeledSet,
    pub forget: LabeledSet,
    pub retain: LabeledSet,
    pub test: LabeledSet,
    /// Row indices into `train`.
    pub forget_indices: Vec<usize>,
    pub retain_indices: Vec<usize>,
    pub scenario: Scenario,
}

impl Split {
    fn build(
        train: &LabeledSet,
        test: &LabeledSet,
        forget_indices: Vec<usize>,
        retain_indices: Vec<usize>,
        scenario: Scenario,
    ) -> Result<Self> {
        if test.dim() != train.dim() || test.classes() != train.classes() {
            return Err(Error::Data(
                "test set does not match the training set layout".into(),
            ));
        }
        Ok(Self {
            forget: train.subset(&forget_indices, format!("{}/forget", train.provenance))?,
            retain: train.subset(&retain_indices, format!("{}/retain", train.provenance))?,
            train: train.clone(),
            test: test.clone(),
            forget_indices,
            retain_indices,
            scenario,
        })
    }
}

/// Random forgetting: `round_half_even(ratio * N)` training rows chosen by seeded shuffle.
pub fn split_random(train: &LabeledSet, test: &LabeledSet, ratio: f64, seed: u64) -> Result<Split> {
    let m = split_size(train.len(), ratio, "forget")?;
    let (forget, retain) = seeded_partition(train.len(), m, seed);
    Split::build(train, test, forget, retain, Scenario::Random { ratio })
}

/// Class-wise forgetting: every training row of `class` is forgotten.
pub fn split_classwise(train: &LabeledSet, test: &LabeledSet, class: usize) -> Result<Split> {
    let (forget, retain): (Vec<usize>, Vec<usize>) =
        (0..train.len()).partition(|&i| train.labels()[i] == class);
    if forget.is_empty() {
        return Err(Error::Data(format!(
            "class {class} does not occur in the training set"
        )));
    }
    if retain.is_empty() {
        return Err(Error::Data(
            "forgetting this class would leave nothing to retain".into(),
        ));
    }
    Split::build(train, test, forget, retain, Scenario::Classwise { class })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(kind: DatasetKind, classes: usize, samples: usize, noise: f64) -> SyntheticSpec {
        SyntheticSpec {
            kind,
            classes,
            samples,
            noise,
            dim: 2,
            seed: 7,
        }
    }

    #[test]
    fn blobs_are_balanced() {
        let d = gen_synthetic(&spec(DatasetKind::Blobs, 4, 400, 0.5)).unwrap();
        assert_eq!(d.class_counts(), vec![100; 4]);
        let odd = gen_synthetic(&spec(DatasetKind::Rings, 3, 100, 0.1)).unwrap();
        assert!(odd.class_counts().iter().all(|&c| c.abs_diff(100 / 3) <= 1));
    }

    #[test]
    fn generation_is_deterministic() {
        for kind in [DatasetKind::Blobs, DatasetKind::Moons, DatasetKind::Rings] {
            let a = gen_synthetic(&spec(kind, 2, 50, 0.2)).unwrap();
            let b = gen_synthetic(&spec(kind, 2, 50, 0.2)).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn noiseless_blobs_collapse_onto_centers() {
        let d = gen_synthetic(&spec(DatasetKind::Blobs, 3, 30, 0.0)).unwrap();
        for k in 0..3 {
            let rows: Vec<_> = (0..d.len()).filter(|&i| d.labels()[i] == k).collect();
            let first = d.features().row(rows[0]).to_owned();
            assert!(rows.iter().all(|&i| d.features().row(i) == first));
        }
    }

    #[test]
    fn unsupported_combinations_are_rejected() {
        assert!(gen_synthetic(&spec(DatasetKind::Moons, 3, 30, 0.1)).is_err());
        assert!(gen_synthetic(&spec(DatasetKind::Blobs, 1, 30, 0.1)).is_err());
        assert!(gen_synthetic(&spec(DatasetKind::Blobs, 5, 4, 0.1)).is_err());
        assert!(gen_synthetic(&SyntheticSpec {
            dim: 1,
            ..spec(DatasetKind::Rings, 2, 30, 0.1)
        })
        .is_err());
    }

    fn toy(n: usize, classes: usize) -> LabeledSet {
        let features = Array2::from_shape_fn((n, 2), |(i, j)| (i * 2 + j) as f64);
        LabeledSet::new(
            features,
            (0..n).map(|i| i % classes).collect(),
            classes,
            "toy",
        )
        .unwrap()
    }

    #[test]
    fn random_split_sizes() {
        let train = toy(100, 2);
        let test = toy(10, 2);
        let s = split_random(&train, &test, 0.1, 1).unwrap();
        assert_eq!((s.forget.len(), s.retain.len()), (10, 90));
        // 0.5 * 101 = 50.5 rounds to even -> 50
        let s = split_random(&toy(101, 2), &test, 0.5, 1).unwrap();
        assert_eq!((s.forget.len(), s.retain.len()), (50, 51));
        assert!(split_random(&toy(4, 2), &test, 0.1, 1).is_err());
        assert!(split_random(&train, &test, 1.0, 1).is_err());
    }

    #[test]
    fn classwise_split() {
        let train = toy(400, 4);
        let s = split_classwise(&train, &toy(8, 4), 2).unwrap();
        assert_eq!(s.forget.len(), 100);
        assert!(s.forget.labels().iter().all(|&y| y == 2));
        assert!(s.retain.labels().iter().all(|&y| y != 2));
        assert!(split_classwise(&toy(10, 4), &toy(8, 4), 5).is_err());
    }

    #[test]
    fn splits_partition_the_training_indices() {
        let train = toy(57, 3);
        let test = toy(9, 3);
        for s in [
            split_random(&train, &test, 0.3, 11).unwrap(),
            split_classwise(&train, &test, 1).unwrap(),
        ] {
            let mut seen = vec![0u8; train.len()];
            for &i in s.forget_indices.iter().chain(&s.retain_indices) {
                seen[i] += 1;
            }
            assert!(seen.iter().all(|&c| c == 1));
            for (row, &i) in s.forget_indices.iter().enumerate() {
                assert_eq!(s.forget.features().row(row), train.features().row(i));
            }
        }
    }

    #[test]
    fn train_test_split_is_disjoint() {
        let data = gen_synthetic(&spec(DatasetKind::Blobs, 4, 200, 1.0)).unwrap();
        let (train, test) = train_test_split(&data, 0.25, 3).unwrap();
        assert_eq!((train.len(), test.len()), (150, 50));
        let (train2, _) = train_test_split(&data, 0.25, 3).unwrap();
        assert_eq!(train, train2);
    }

    #[test]
    fn file_round_trip_and_layout() {
        let d = toy(3, 2);
        let mut buf = Vec::new();
        d.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..12], &[3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0]);
        assert_eq!(&buf[12..20], &0.0f64.to_le_bytes());
        assert_eq!(&buf[20..28], &1.0f64.to_le_bytes());
        assert_eq!(&buf[buf.len() - 4..], &0u32.to_le_bytes());
        assert_eq!(buf.len(), 12 + 3 * 2 * 8 + 3 * 4);
        let back = LabeledSet::read_from(buf.as_slice(), "toy").unwrap();
        assert_eq!(back, d);
        assert!(LabeledSet::read_from(&buf[..buf.len() - 1], "x").is_err());
    }
}
