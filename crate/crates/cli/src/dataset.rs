//! Labeled datasets: synthetic Gaussian mixtures and the CIFAR-10 binary
//! format, plus the on-disk dataset container.
//!
//! Container layout, little-endian: magic `NMDS`, version u32, n u32,
//! d u32, label_count u32, then n*d f64 features, then n u16 labels.

use std::fmt;
use std::fs;
use std::io::{self, Read};
use std::path::Path;

use nomore_core::noise::MixtureSpec;
use nomore_core::Rng;

const MAGIC: &[u8; 4] = b"NMDS";
const VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct Dataset {
    /// n rows of d features, row-major.
    pub features: Vec<f64>,
    pub labels: Vec<u16>,
    pub n: usize,
    pub dim: usize,
    pub num_classes: usize,
}

#[derive(Debug)]
pub enum DatasetError {
    Io(io::Error),
    /// Malformed file contents; `offset` is the byte position at fault.
    Format { message: String, offset: u64 },
    InvalidArgument(String),
}

impl fmt::Display for DatasetError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Io(e) => write!(f, "dataset io: {e}"),
            Self::Format { message, offset } => {
                write!(f, "dataset format error at byte {offset}: {message}")
            }
            Self::InvalidArgument(m) => write!(f, "dataset: {m}"),
        }
    }
}

impl std::error::Error for DatasetError {}

impl From<io::Error> for DatasetError {
    fn from(e: io::Error) -> Self {
        DatasetError::Io(e)
    }
}

impl Dataset {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    /// Gather rows into a batch tensor of the given shape (the shape's
    /// element count per row must equal `dim`).
    pub fn gather(&self, indices: &[usize], row_shape: &[usize]) -> nomore_core::Tensor {
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(row_shape);
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        nomore_core::Tensor::new(shape, data).expect("row shape matches dim")
    }

    pub fn labels_for(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.labels[i] as usize).collect()
    }

    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        let mut buf: Vec<u8> = Vec::with_capacity(20 + self.features.len() * 8 + self.n * 2);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.n as u32).to_le_bytes());
        buf.extend_from_slice(&(self.dim as u32).to_le_bytes());
        buf.extend_from_slice(&(self.num_classes as u32).to_le_bytes());
        for &v in &self.features {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for &l in &self.labels {
            buf.extend_from_slice(&l.to_le_bytes());
        }
        fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Dataset, DatasetError> {
        let bytes = fs::read(path)?;
        let mut r = bytes.as_slice();
        let mut quad = [0u8; 4];
        let fail = |message: &str, offset: u64| DatasetError::Format {
            message: message.to_string(),
            offset,
        };
        r.read_exact(&mut quad).map_err(|_| fail("truncated magic", 0))?;
        if &quad != MAGIC {
            return Err(fail("bad magic", 0));
        }
        r.read_exact(&mut quad).map_err(|_| fail("truncated version", 4))?;
        if u32::from_le_bytes(quad) != VERSION {
            return Err(fail("unsupported version", 4));
        }
        r.read_exact(&mut quad).map_err(|_| fail("truncated count", 8))?;
        let n = u32::from_le_bytes(quad) as usize;
        r.read_exact(&mut quad).map_err(|_| fail("truncated dim", 12))?;
        let dim = u32::from_le_bytes(quad) as usize;
        r.read_exact(&mut quad).map_err(|_| fail("truncated label count", 16))?;
        let num_classes = u32::from_le_bytes(quad) as usize;
        let expect = 20 + n * dim * 8 + n * 2;
        if bytes.len() != expect {
            return Err(fail(
                &format!("expected {expect} bytes, found {}", bytes.len()),
                bytes.len().min(expect) as u64,
            ));
        }
        let mut features = Vec::with_capacity(n * dim);
        let mut f64buf = [0u8; 8];
        for _ in 0..n * dim {
            r.read_exact(&mut f64buf).expect("length checked");
            features.push(f64::from_le_bytes(f64buf));
        }
        let mut labels = Vec::with_capacity(n);
        let mut u16buf = [0u8; 2];
        for i in 0..n {
            r.read_exact(&mut u16buf).expect("length checked");
            let l = u16::from_le_bytes(u16buf);
            if l as usize >= num_classes {
                return Err(fail(
                    &format!("label {l} >= {num_classes}"),
                    (20 + n * dim * 8 + i * 2) as u64,
                ));
            }
            labels.push(l);
        }
        Ok(Dataset { features, labels, n, dim, num_classes })
    }
}

/// Equidistant class means in orthogonal directions: pairwise distance
/// `separation * sigma`, shared isotropic `sigma`.
pub fn simplex_mixture(
    classes: usize,
    dim: usize,
    separation: f64,
    sigma: f64,
) -> Result<MixtureSpec, DatasetError> {
    if classes == 0 || dim < classes {
        return Err(DatasetError::InvalidArgument(format!(
            "need dim >= classes >= 1, got classes={classes}, dim={dim}"
        )));
    }
    let scale = separation * sigma / 2f64.sqrt();
    let mut means = Vec::with_capacity(classes);
    for c in 0..classes {
        let mut m = vec![0.0; dim];
        m[c] = scale;
        means.push(m);
    }
    let stds = vec![vec![sigma; dim]; classes];
    let probs = vec![1.0 / classes as f64; classes];
    MixtureSpec::new(means, stds, probs)
        .map_err(|e| DatasetError::InvalidArgument(e.to_string()))
}

/// Two-lobe (antipodal) classes: class y is the union of Gaussians at
/// +s e_y and -s e_y with s = separation * sigma / 2. No linear map
/// separates these, so a classifier has to use its residual blocks; the
/// training tasks use this construction to keep the blocks load-bearing.
pub fn antipodal_mixture(
    classes: usize,
    dim: usize,
    separation: f64,
    sigma: f64,
) -> Result<MixtureSpec, DatasetError> {
    if classes == 0 || dim < classes {
        return Err(DatasetError::InvalidArgument(format!(
            "need dim >= classes >= 1, got classes={classes}, dim={dim}"
        )));
    }
    let scale = separation * sigma / 2.0;
    let mut means = Vec::with_capacity(2 * classes);
    for c in 0..classes {
        for sign in [1.0, -1.0] {
            let mut m = vec![0.0; dim];
            m[c] = sign * scale;
            means.push(m);
        }
    }
    let stds = vec![vec![sigma; dim]; 2 * classes];
    let probs = vec![1.0 / (2 * classes) as f64; 2 * classes];
    MixtureSpec::new(means, stds, probs)
        .map_err(|e| DatasetError::InvalidArgument(e.to_string()))
}

/// Generate from the antipodal mixture and fold the two lobes of each
/// class onto one label.
pub fn gen_antipodal_dataset(
    classes: usize,
    dim: usize,
    separation: f64,
    sigma: f64,
    n_train: usize,
    n_test: usize,
    rng: &Rng,
) -> Result<(Dataset, Dataset), DatasetError> {
    let spec = antipodal_mixture(classes, dim, separation, sigma)?;
    let (mut train, mut test) = gen_mixture_dataset(&spec, n_train, n_test, rng)?;
    for ds in [&mut train, &mut test] {
        for l in ds.labels.iter_mut() {
            *l /= 2;
        }
        ds.num_classes = classes;
    }
    Ok((train, test))
}

/// Labeled draws from the mixture, classes chosen by their sampling
/// probabilities. Train and test come from disjoint substreams of `rng`.
pub fn gen_mixture_dataset(
    spec: &MixtureSpec,
    n_train: usize,
    n_test: usize,
    rng: &Rng,
) -> Result<(Dataset, Dataset), DatasetError> {
    if n_train == 0 || n_test == 0 {
        return Err(DatasetError::InvalidArgument("counts must be >= 1".into()));
    }
    let gen = |count: usize, rng: &mut Rng| {
        let mut features = Vec::with_capacity(count * spec.dim);
        let mut labels = Vec::with_capacity(count);
        for _ in 0..count {
            let y = spec.sample_class(rng);
            features.extend(spec.sample_from(y, rng));
            labels.push(y as u16);
        }
        Dataset { features, labels, n: count, dim: spec.dim, num_classes: spec.n_classes() }
    };
    let train = gen(n_train, &mut rng.derive(0x7A1));
    let test = gen(n_test, &mut rng.derive(0x7E5));
    Ok((train, test))
}

// ── CIFAR-10 binary format ────────────────────────────────────────────────────

pub const CIFAR_RECORD: usize = 3073;
pub const CIFAR_MEAN: [f64; 3] = [0.4914, 0.4822, 0.4465];
pub const CIFAR_STD: [f64; 3] = [0.2470, 0.2435, 0.2616];

/// Read CIFAR-10 binary records (1 label byte + 3072 pixel bytes per
/// record, R/G/B planes of 32x32 row-major) from a file or a directory of
/// `*.bin` files. Pixels are scaled to [0,1] and normalized per channel;
/// a balanced subset of `subset` images per class is selected
/// deterministically from `seed`.
pub fn load_cifar10_binary(
    path: &Path,
    subset: usize,
    seed: u64,
) -> Result<Dataset, DatasetError> {
    let mut files = Vec::new();
    if path.is_dir() {
        for entry in fs::read_dir(path)? {
            let p = entry?.path();
            if p.extension().is_some_and(|e| e == "bin") {
                files.push(p);
            }
        }
        files.sort();
        if files.is_empty() {
            return Err(DatasetError::InvalidArgument(format!(
                "no .bin files under {}",
                path.display()
            )));
        }
    } else {
        files.push(path.to_path_buf());
    }

    let mut features = Vec::new();
    let mut labels: Vec<u16> = Vec::new();
    for file in &files {
        let bytes = fs::read(file)?;
        if bytes.len() % CIFAR_RECORD != 0 {
            let offset = (bytes.len() / CIFAR_RECORD * CIFAR_RECORD) as u64;
            return Err(DatasetError::Format {
                message: format!(
                    "{}: {} bytes is not a whole number of {CIFAR_RECORD}-byte records",
                    file.display(),
                    bytes.len()
                ),
                offset,
            });
        }
        for (rec, chunk) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
            let label = chunk[0];
            if label > 9 {
                return Err(DatasetError::Format {
                    message: format!("{}: label byte {label} out of range 0-9", file.display()),
                    offset: (rec * CIFAR_RECORD) as u64,
                });
            }
            labels.push(label as u16);
            for (i, &b) in chunk[1..].iter().enumerate() {
                let channel = i / 1024;
                let v = b as f64 / 255.0;
                features.push((v - CIFAR_MEAN[channel]) / CIFAR_STD[channel]);
            }
        }
    }

    // Balanced deterministic subset.
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); 10];
    for (i, &l) in labels.iter().enumerate() {
        per_class[l as usize].push(i);
    }
    let mut rng = Rng::new(seed).derive(0xC1FA);
    let mut chosen = Vec::with_capacity(subset * 10);
    for (class, indices) in per_class.iter_mut().enumerate() {
        if indices.len() < subset {
            return Err(DatasetError::InvalidArgument(format!(
                "class {class} has {} images, need {subset}",
                indices.len()
            )));
        }
        rng.shuffle(indices);
        chosen.extend(indices[..subset].iter().copied());
    }
    rng.shuffle(&mut chosen);

    let dim = 3072;
    let mut out_features = Vec::with_capacity(chosen.len() * dim);
    let mut out_labels = Vec::with_capacity(chosen.len());
    for &i in &chosen {
        out_features.extend_from_slice(&features[i * dim..(i + 1) * dim]);
        out_labels.push(labels[i]);
    }
    Ok(Dataset {
        features: out_features,
        labels: out_labels,
        n: chosen.len(),
        dim,
        num_classes: 10,
    })
}

/// Undo the normalization back to pixel bytes (test support).
pub fn cifar_denormalize(value: f64, channel: usize) -> f64 {
    (value * CIFAR_STD[channel] + CIFAR_MEAN[channel]) * 255.0
}

/// Majority-vote-free nearest-centroid classifier used as a separability
/// oracle for generated mixtures.
pub fn nearest_centroid_accuracy(train: &Dataset, test: &Dataset) -> f64 {
    let k = train.num_classes;
    let d = train.dim;
    let mut centroids = vec![vec![0.0; d]; k];
    let mut counts = vec![0usize; k];
    for i in 0..train.n {
        let y = train.labels[i] as usize;
        counts[y] += 1;
        for (c, v) in centroids[y].iter_mut().zip(train.row(i)) {
            *c += v;
        }
    }
    for (c, &n) in centroids.iter_mut().zip(&counts) {
        if n > 0 {
            for v in c.iter_mut() {
                *v /= n as f64;
            }
        }
    }
    let mut correct = 0usize;
    for i in 0..test.n {
        let row = test.row(i);
        let best = centroids
            .iter()
            .enumerate()
            .map(|(y, c)| {
                (y, row.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
            })
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .unwrap()
            .0;
        if best == test.labels[i] as usize {
            correct += 1;
        }
    }
    correct as f64 / test.n as f64
}
