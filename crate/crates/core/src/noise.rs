//! Batch-normalization noise from a fixed sample's point of view.
//!
//! Fix one sample, draw B-1 companions from a Gaussian mixture, subtract
//! the batch mean, and what remains is a deterministic shrinkage
//! `(B-1)/B * x` minus a batch-dependent perturbation
//! `delta = (1/B) * sum of companions`. Under the mixture prior delta is
//! Gaussian with an inter-distribution mean `(1/B) sum mu^{y_j}` set by
//! which classes the companions came from, and an intra-distribution
//! variance `(1/B^2) sum sigma^{(y_j)2}`. The simulator draws delta
//! empirically under several batch-composition constraints; the closed
//! forms live next to it so the two can be compared.

use std::fmt;

use crate::rng::Rng;
use crate::stats::{pca, StatsError};

pub type NoiseResult<T> = Result<T, NoiseError>;

#[derive(Clone, Debug, PartialEq)]
pub enum NoiseError {
    InvalidArgument { op: &'static str, message: String },
    Stats(StatsError),
}

impl fmt::Display for NoiseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::InvalidArgument { op, message } => write!(f, "{op}: {message}"),
            Self::Stats(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for NoiseError {}

impl From<StatsError> for NoiseError {
    fn from(e: StatsError) -> Self {
        NoiseError::Stats(e)
    }
}

fn invalid(op: &'static str, message: impl Into<String>) -> NoiseError {
    NoiseError::InvalidArgument { op, message: message.into() }
}

// ── Mixture prior ─────────────────────────────────────────────────────────────

/// Gaussian mixture: per-class means, per-class standard deviations, and
/// sampling probabilities.
#[derive(Clone, Debug)]
pub struct MixtureSpec {
    pub dim: usize,
    pub means: Vec<Vec<f64>>,
    pub stds: Vec<Vec<f64>>,
    pub probs: Vec<f64>,
}

impl MixtureSpec {
    pub fn new(means: Vec<Vec<f64>>, stds: Vec<Vec<f64>>, probs: Vec<f64>) -> NoiseResult<Self> {
        if means.is_empty() || means.len() != stds.len() || means.len() != probs.len() {
            return Err(invalid(
                "mixture",
                format!(
                    "means/stds/probs lengths disagree: {}/{}/{}",
                    means.len(),
                    stds.len(),
                    probs.len()
                ),
            ));
        }
        let dim = means[0].len();
        if dim == 0 {
            return Err(invalid("mixture", "dimension must be >= 1"));
        }
        if means.iter().any(|m| m.len() != dim) || stds.iter().any(|s| s.len() != dim) {
            return Err(invalid("mixture", "ragged mean/std vectors"));
        }
        if stds.iter().flatten().any(|&s| !(s > 0.0)) {
            return Err(invalid("mixture", "standard deviations must be positive"));
        }
        if probs.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(invalid("mixture", "probabilities must lie in [0,1]"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(invalid("mixture", format!("probabilities sum to {total}")));
        }
        Ok(MixtureSpec { dim, means, stds, probs })
    }

    /// Single isotropic component.
    pub fn single(mean: f64, std: f64, dim: usize) -> NoiseResult<Self> {
        MixtureSpec::new(vec![vec![mean; dim]], vec![vec![std; dim]], vec![1.0])
    }

    pub fn n_classes(&self) -> usize {
        self.means.len()
    }

    pub fn sample_class(&self, rng: &mut Rng) -> usize {
        rng.categorical(&self.probs)
    }

    pub fn sample_from(&self, class: usize, rng: &mut Rng) -> Vec<f64> {
        (0..self.dim)
            .map(|d| self.means[class][d] + self.stds[class][d] * rng.normal())
            .collect()
    }
}

/// Class-count vector of one sampled batch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BatchComposition {
    pub counts: Vec<usize>,
    pub batch_size: usize,
}

impl BatchComposition {
    pub fn new(counts: Vec<usize>, batch_size: usize) -> NoiseResult<Self> {
        let total: usize = counts.iter().sum();
        if total != batch_size {
            return Err(invalid(
                "composition",
                format!("counts sum to {total}, batch size is {batch_size}"),
            ));
        }
        Ok(BatchComposition { counts, batch_size })
    }

    pub fn from_counts(counts: Vec<usize>) -> Self {
        let batch_size = counts.iter().sum();
        BatchComposition { counts, batch_size }
    }

    /// Order-independent content hash for report rows.
    pub fn content_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for &c in &self.counts {
            for byte in (c as u64).to_le_bytes() {
                h ^= byte as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }
}

#[derive(Clone, Debug)]
pub enum ClassConstraint {
    /// Companion classes drawn from the mixture probabilities.
    Free,
    /// All B-1 companions from one class.
    AllFromClass(usize),
    /// Companion counts pinned to a full-batch composition (which
    /// includes the fixed sample itself).
    FixedComposition(BatchComposition),
}

/// One simulated BN application to the fixed sample.
#[derive(Clone, Debug)]
pub struct NoiseSample {
    pub fixed_class: usize,
    /// delta = (1/B) * sum of companions, so that
    /// embedding = (B-1)/B * x_fixed - delta.
    pub delta: Vec<f64>,
    pub scaled_self: Vec<f64>,
    /// Realized full-batch composition (fixed sample included).
    pub composition: BatchComposition,
}

impl NoiseSample {
    /// The post-BN embedding of the fixed sample.
    pub fn embedding(&self) -> Vec<f64> {
        self.scaled_self.iter().zip(&self.delta).map(|(s, d)| s - d).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnVariant {
    /// Mean subtraction only (the denominator dropped).
    MeanOnly,
    /// Keep the 1/sqrt(batch variance) denominator.
    Full,
}

fn companion_classes(
    spec: &MixtureSpec,
    fixed_class: usize,
    batch: usize,
    constraint: &ClassConstraint,
    rng: &mut Rng,
) -> NoiseResult<Vec<usize>> {
    let op = "simulate_bn_sample";
    match constraint {
        ClassConstraint::Free => {
            Ok((0..batch - 1).map(|_| spec.sample_class(rng)).collect())
        }
        ClassConstraint::AllFromClass(y) => {
            if *y >= spec.n_classes() {
                return Err(invalid(op, format!("class {y} out of range")));
            }
            if spec.probs[*y] == 0.0 {
                return Err(invalid(op, format!("class {y} has probability 0")));
            }
            Ok(vec![*y; batch - 1])
        }
        ClassConstraint::FixedComposition(comp) => {
            if comp.counts.len() != spec.n_classes() {
                return Err(invalid(op, "composition length != class count"));
            }
            if comp.batch_size != batch {
                return Err(invalid(
                    op,
                    format!("composition batch {} != B {batch}", comp.batch_size),
                ));
            }
            if comp.counts[fixed_class] == 0 {
                return Err(invalid(
                    op,
                    "composition leaves no slot for the fixed sample's class",
                ));
            }
            let mut classes = Vec::with_capacity(batch - 1);
            for (y, &count) in comp.counts.iter().enumerate() {
                let companions = if y == fixed_class { count - 1 } else { count };
                if companions > 0 && spec.probs[y] == 0.0 {
                    return Err(invalid(op, format!("class {y} has probability 0")));
                }
                classes.extend(std::iter::repeat(y).take(companions));
            }
            Ok(classes)
        }
    }
}

/// Repeatedly batch the fixed sample with freshly drawn companions, apply
/// BN across the batch, and record the induced noise.
pub fn simulate_bn_sample_with(
    variant: BnVariant,
    x_fixed: &[f64],
    fixed_class: usize,
    spec: &MixtureSpec,
    batch: usize,
    constraint: &ClassConstraint,
    rng: &mut Rng,
    reps: usize,
) -> NoiseResult<Vec<NoiseSample>> {
    let op = "simulate_bn_sample";
    if batch < 2 {
        return Err(invalid(op, format!("batch size {batch} < 2")));
    }
    if x_fixed.len() != spec.dim {
        return Err(invalid(
            op,
            format!("fixed sample has dim {}, mixture has {}", x_fixed.len(), spec.dim),
        ));
    }
    if fixed_class >= spec.n_classes() {
        return Err(invalid(op, format!("fixed class {fixed_class} out of range")));
    }
    let d = spec.dim;
    let scale = (batch as f64 - 1.0) / batch as f64;
    let scaled_self: Vec<f64> = x_fixed.iter().map(|v| scale * v).collect();
    let mut out = Vec::with_capacity(reps);
    for rep in 0..reps {
        let mut rep_rng = rng.derive(rep as u64);
        let classes = companion_classes(spec, fixed_class, batch, constraint, &mut rep_rng)?;
        let mut counts = vec![0usize; spec.n_classes()];
        counts[fixed_class] += 1;
        let mut sum = vec![0.0; d];
        let mut sumsq = vec![0.0; d];
        for &y in &classes {
            counts[y] += 1;
            let xj = spec.sample_from(y, &mut rep_rng);
            for k in 0..d {
                sum[k] += xj[k];
                sumsq[k] += xj[k] * xj[k];
            }
        }
        let delta = match variant {
            BnVariant::MeanOnly => sum.iter().map(|s| s / batch as f64).collect::<Vec<f64>>(),
            BnVariant::Full => {
                // Embedding with the denominator kept, re-expressed as a
                // delta against the same (B-1)/B * x shrinkage so the two
                // variants are directly comparable.
                let bf = batch as f64;
                (0..d)
                    .map(|k| {
                        let mean = (sum[k] + x_fixed[k]) / bf;
                        let ex2 = (sumsq[k] + x_fixed[k] * x_fixed[k]) / bf;
                        let var = (ex2 - mean * mean).max(1e-300);
                        let xhat = (x_fixed[k] - mean) / var.sqrt();
                        scaled_self[k] - xhat
                    })
                    .collect()
            }
        };
        out.push(NoiseSample {
            fixed_class,
            delta,
            scaled_self: scaled_self.clone(),
            composition: BatchComposition::from_counts(counts),
        });
    }
    Ok(out)
}

/// Mean-subtraction BN simulation (the default analysis form).
#[allow(clippy::too_many_arguments)]
pub fn simulate_bn_sample(
    x_fixed: &[f64],
    fixed_class: usize,
    spec: &MixtureSpec,
    batch: usize,
    constraint: &ClassConstraint,
    rng: &mut Rng,
    reps: usize,
) -> NoiseResult<Vec<NoiseSample>> {
    simulate_bn_sample_with(BnVariant::MeanOnly, x_fixed, fixed_class, spec, batch, constraint, rng, reps)
}

/// Exact delta moments for a known full-batch composition, excluding one
/// sample of `exclude_class` (the fixed one):
/// mean_d  = (1/B)   sum over companions of mu^{y_j}[d]
/// var_d   = (1/B^2) sum over companions of sigma^{y_j}[d]^2
pub fn closed_form_noise(
    spec: &MixtureSpec,
    composition: &BatchComposition,
    exclude_class: usize,
) -> NoiseResult<(Vec<f64>, Vec<f64>)> {
    let op = "closed_form_noise";
    if composition.counts.len() != spec.n_classes() {
        return Err(invalid(op, "composition length != class count"));
    }
    if exclude_class >= spec.n_classes() || composition.counts[exclude_class] == 0 {
        return Err(invalid(op, format!("no sample of class {exclude_class} to exclude")));
    }
    let b = composition.batch_size as f64;
    let mut mean = vec![0.0; spec.dim];
    let mut var = vec![0.0; spec.dim];
    for (y, &count) in composition.counts.iter().enumerate() {
        let m = if y == exclude_class { count - 1 } else { count } as f64;
        if m == 0.0 {
            continue;
        }
        for d in 0..spec.dim {
            mean[d] += m * spec.means[y][d] / b;
            var[d] += m * spec.stds[y][d] * spec.stds[y][d] / (b * b);
        }
    }
    Ok((mean, var))
}

/// Exact multinomial probability of a class-count vector.
pub fn composition_probability(
    spec: &MixtureSpec,
    composition: &BatchComposition,
) -> NoiseResult<f64> {
    let op = "composition_probability";
    if composition.counts.len() != spec.n_classes() {
        return Err(invalid(op, "composition length != class count"));
    }
    let total: usize = composition.counts.iter().sum();
    if total != composition.batch_size {
        return Err(invalid(
            op,
            format!("counts sum to {total}, batch size is {}", composition.batch_size),
        ));
    }
    let mut ln_p = crate::stats::ln_gamma(composition.batch_size as f64 + 1.0);
    for (y, &m) in composition.counts.iter().enumerate() {
        ln_p -= crate::stats::ln_gamma(m as f64 + 1.0);
        if m > 0 {
            if spec.probs[y] == 0.0 {
                return Ok(0.0);
            }
            ln_p += m as f64 * spec.probs[y].ln();
        }
    }
    Ok(ln_p.exp())
}

fn require_shared_composition(op: &'static str, samples: &[NoiseSample]) -> NoiseResult<()> {
    if samples.len() < 2 {
        return Err(invalid(op, format!("need at least 2 samples, got {}", samples.len())));
    }
    let first = &samples[0].composition;
    if samples.iter().any(|s| &s.composition != first) {
        return Err(invalid(op, "samples do not share a fixed composition"));
    }
    Ok(())
}

/// All pairwise embedding differences over distinct reps. With the batch
/// composition fixed, the inter-distribution mean cancels and what is
/// left is zero-centered intra-distribution noise with per-dimension
/// variance (2B-2)/B^2 * sigma^2.
pub fn extract_intra_noise(samples: &[NoiseSample]) -> NoiseResult<Vec<Vec<f64>>> {
    require_shared_composition("extract_intra_noise", samples)?;
    let emb: Vec<Vec<f64>> = samples.iter().map(|s| s.embedding()).collect();
    let mut out = Vec::with_capacity(emb.len() * (emb.len() - 1) / 2);
    for a in 0..emb.len() {
        for b in a + 1..emb.len() {
            out.push(emb[a].iter().zip(&emb[b]).map(|(x, y)| x - y).collect());
        }
    }
    Ok(out)
}

/// Differences of disjoint rep pairs: (0,1), (2,3), ... Unlike the full
/// pairwise set these are mutually independent, which a one-sample test
/// of their mean requires.
pub fn disjoint_intra_noise(samples: &[NoiseSample]) -> NoiseResult<Vec<Vec<f64>>> {
    require_shared_composition("disjoint_intra_noise", samples)?;
    let mut out = Vec::with_capacity(samples.len() / 2);
    let mut i = 0;
    while i + 1 < samples.len() {
        let a = samples[i].embedding();
        let b = samples[i + 1].embedding();
        out.push(a.iter().zip(&b).map(|(x, y)| x - y).collect());
        i += 2;
    }
    Ok(out)
}

/// How separable the batch's companion class is from the embedding shift.
#[derive(Clone, Debug)]
pub struct DecompositionReport {
    /// Weighted squared distance of class centroids from the pooled
    /// centroid, in the PCA projection.
    pub between_scatter: f64,
    /// Mean squared distance of projections from their own class centroid.
    pub within_scatter: f64,
    pub scatter_ratio: f64,
    /// Held-out nearest-centroid accuracy of "which class were the
    /// companions from", judged on raw embeddings.
    pub centroid_accuracy: f64,
    pub classes: usize,
    pub samples_per_class: Vec<usize>,
    /// PCA hit a degenerate (clamped) eigenvalue.
    pub degenerate: bool,
}

/// PCA scatter decomposition plus nearest-centroid identification of the
/// companion class, with an even/odd split per class for train/test.
pub fn decompose_noise(
    samples_per_class: &[(usize, Vec<NoiseSample>)],
) -> NoiseResult<DecompositionReport> {
    let op = "decompose_noise";
    if samples_per_class.len() < 2 {
        return Err(invalid(op, "need at least 2 classes"));
    }
    if samples_per_class.iter().any(|(_, s)| s.len() < 10) {
        return Err(invalid(op, "need at least 10 samples per class"));
    }
    let d = samples_per_class[0].1[0].delta.len();
    let pooled: Vec<Vec<f64>> = samples_per_class
        .iter()
        .flat_map(|(_, s)| s.iter().map(|n| n.embedding()))
        .collect();
    let k = d.min(2);
    let pca_result = pca(&pooled, k)?;

    // Scatter in projection space.
    let mut per_class_proj: Vec<Vec<Vec<f64>>> = Vec::new();
    for (_, samples) in samples_per_class {
        per_class_proj.push(samples.iter().map(|s| pca_result.project(&s.embedding())).collect());
    }
    let total: usize = per_class_proj.iter().map(|c| c.len()).sum();
    let mut overall = vec![0.0; k];
    for class in &per_class_proj {
        for p in class {
            for i in 0..k {
                overall[i] += p[i];
            }
        }
    }
    for v in &mut overall {
        *v /= total as f64;
    }
    let mut between = 0.0;
    let mut within = 0.0;
    for class in &per_class_proj {
        let mut centroid = vec![0.0; k];
        for p in class {
            for i in 0..k {
                centroid[i] += p[i];
            }
        }
        for v in &mut centroid {
            *v /= class.len() as f64;
        }
        let w = class.len() as f64 / total as f64;
        between += w
            * centroid.iter().zip(&overall).map(|(c, o)| (c - o) * (c - o)).sum::<f64>();
        within += w
            * class
                .iter()
                .map(|p| p.iter().zip(&centroid).map(|(a, c)| (a - c) * (a - c)).sum::<f64>())
                .sum::<f64>()
            / class.len() as f64;
    }

    // Nearest-centroid identification on raw embeddings, even/odd split.
    let mut centroids: Vec<Vec<f64>> = Vec::new();
    for (_, samples) in samples_per_class {
        let train: Vec<Vec<f64>> =
            samples.iter().step_by(2).map(|s| s.embedding()).collect();
        let mut c = vec![0.0; d];
        for t in &train {
            for i in 0..d {
                c[i] += t[i];
            }
        }
        for v in &mut c {
            *v /= train.len() as f64;
        }
        centroids.push(c);
    }
    let mut correct = 0usize;
    let mut tested = 0usize;
    for (ci, (_, samples)) in samples_per_class.iter().enumerate() {
        for s in samples.iter().skip(1).step_by(2) {
            let emb = s.embedding();
            let best = centroids
                .iter()
                .enumerate()
                .map(|(j, c)| {
                    let dist: f64 =
                        emb.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
                    (j, dist)
                })
                .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
                .unwrap()
                .0;
            if best == ci {
                correct += 1;
            }
            tested += 1;
        }
    }

    Ok(DecompositionReport {
        between_scatter: between,
        within_scatter: within,
        scatter_ratio: if within > 0.0 { between / within } else { f64::INFINITY },
        centroid_accuracy: correct as f64 / tested as f64,
        classes: samples_per_class.len(),
        samples_per_class: samples_per_class.iter().map(|(_, s)| s.len()).collect(),
        degenerate: pca_result.degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn std_normal(dim: usize) -> MixtureSpec {
        MixtureSpec::single(0.0, 1.0, dim).unwrap()
    }

    fn moments(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
        let d = rows[0].len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            for i in 0..d {
                mean[i] += r[i] / n;
            }
        }
        let mut var = vec![0.0; d];
        for r in rows {
            for i in 0..d {
                var[i] += (r[i] - mean[i]) * (r[i] - mean[i]) / n;
            }
        }
        (mean, var)
    }

    #[test]
    fn noise_law_single_distribution() {
        // Var(delta) = (B-1)/B^2 per dimension.
        let spec = std_normal(4);
        let mut rng = Rng::new(21);
        let x = vec![0.0; 4];
        let samples =
            simulate_bn_sample(&x, 0, &spec, 128, &ClassConstraint::Free, &mut rng, 10_000)
                .unwrap();
        let deltas: Vec<Vec<f64>> = samples.iter().map(|s| s.delta.clone()).collect();
        let (mean, var) = moments(&deltas);
        let expect: f64 = 127.0 / (128.0 * 128.0);
        let se = (expect / 10_000.0).sqrt();
        for d in 0..4 {
            assert!(mean[d].abs() < 4.0 * se, "mean[{d}] = {}", mean[d]);
            assert!((var[d] - expect).abs() / expect < 0.05, "var[{d}] = {}", var[d]);
        }
    }

    #[test]
    fn noise_law_tiny_batch() {
        // B = 2: Var(delta) = 1/4.
        let spec = std_normal(2);
        let mut rng = Rng::new(22);
        let samples = simulate_bn_sample(
            &[0.0, 0.0],
            0,
            &spec,
            2,
            &ClassConstraint::Free,
            &mut rng,
            20_000,
        )
        .unwrap();
        let deltas: Vec<Vec<f64>> = samples.iter().map(|s| s.delta.clone()).collect();
        let (_, var) = moments(&deltas);
        for v in var {
            assert!((v - 0.25).abs() / 0.25 < 0.05, "var {v}");
        }
    }

    #[test]
    fn all_from_class_special_case() {
        // Companions all from mu = 3: E[delta] = (B-1)/B * 3 = 2.25 at B = 4.
        let spec = MixtureSpec::new(
            vec![vec![0.0; 3], vec![3.0; 3]],
            vec![vec![1.0; 3], vec![1.0; 3]],
            vec![0.5, 0.5],
        )
        .unwrap();
        let mut rng = Rng::new(23);
        let reps = 20_000;
        let samples = simulate_bn_sample(
            &[0.0; 3],
            0,
            &spec,
            4,
            &ClassConstraint::AllFromClass(1),
            &mut rng,
            reps,
        )
        .unwrap();
        let deltas: Vec<Vec<f64>> = samples.iter().map(|s| s.delta.clone()).collect();
        let (mean, var) = moments(&deltas);
        // Var(delta) = (B-1)/B^2 sigma^2 = 3/16.
        let se = (3.0 / 16.0 / reps as f64).sqrt();
        for d in 0..3 {
            assert!((mean[d] - 2.25).abs() < 3.0 * se, "mean[{d}] = {}", mean[d]);
            assert!((var[d] - 3.0 / 16.0).abs() / (3.0 / 16.0) < 0.1);
        }
    }

    #[test]
    fn closed_form_reduces_to_iid_law() {
        let spec = std_normal(2);
        let comp = BatchComposition::from_counts(vec![128]);
        let (mean, var) = closed_form_noise(&spec, &comp, 0).unwrap();
        assert_eq!(mean, vec![0.0, 0.0]);
        for v in var {
            assert!((v - 127.0 / 16384.0).abs() < 1e-15);
        }
    }

    #[test]
    fn closed_form_two_class_signed_sum() {
        // mu = -1 and +1, companions (63, 64): mean = (-63 + 64)/128 = 1/128.
        let spec = MixtureSpec::new(
            vec![vec![-1.0], vec![1.0]],
            vec![vec![1.0], vec![1.0]],
            vec![0.5, 0.5],
        )
        .unwrap();
        let comp = BatchComposition::from_counts(vec![64, 64]);
        let (mean, _) = closed_form_noise(&spec, &comp, 0).unwrap();
        assert!((mean[0] - 1.0 / 128.0).abs() < 1e-15, "mean {}", mean[0]);
    }

    #[test]
    fn closed_form_single_companion() {
        // B = 2, one companion with mu = 5, sigma = 2: mean 2.5, variance 1.
        let spec = MixtureSpec::new(
            vec![vec![0.0], vec![5.0]],
            vec![vec![1.0], vec![2.0]],
            vec![0.5, 0.5],
        )
        .unwrap();
        let comp = BatchComposition::new(vec![1, 1], 2).unwrap();
        let (mean, var) = closed_form_noise(&spec, &comp, 0).unwrap();
        assert_eq!(mean[0], 2.5);
        assert_eq!(var[0], 1.0);
    }

    #[test]
    fn multinomial_probabilities() {
        let half = MixtureSpec::new(
            vec![vec![0.0], vec![1.0]],
            vec![vec![1.0], vec![1.0]],
            vec![0.5, 0.5],
        )
        .unwrap();
        let p = composition_probability(&half, &BatchComposition::new(vec![1, 1], 2).unwrap())
            .unwrap();
        assert!((p - 0.5).abs() < 1e-14);

        // Deterministic class: all mass in one composition.
        let sure = MixtureSpec::new(
            vec![vec![0.0], vec![1.0]],
            vec![vec![1.0], vec![1.0]],
            vec![1.0, 0.0],
        )
        .unwrap();
        let p = composition_probability(&sure, &BatchComposition::new(vec![7, 0], 7).unwrap())
            .unwrap();
        assert!((p - 1.0).abs() < 1e-12);

        // Enumeration oracle: n = 3, p = (0.2, 0.3, 0.5), B = 4,
        // counts (1,1,2). Brute force over all 3^4 ordered draws.
        let spec = MixtureSpec::new(
            vec![vec![0.0], vec![1.0], vec![2.0]],
            vec![vec![1.0]; 3],
            vec![0.2, 0.3, 0.5],
        )
        .unwrap();
        let mut brute = 0.0;
        for a in 0..3 {
            for b in 0..3 {
                for c in 0..3 {
                    for d in 0..3 {
                        let mut counts = [0usize; 3];
                        for y in [a, b, c, d] {
                            counts[y] += 1;
                        }
                        if counts == [1, 1, 2] {
                            brute += spec.probs[a] * spec.probs[b] * spec.probs[c] * spec.probs[d];
                        }
                    }
                }
            }
        }
        assert!((brute - 0.18).abs() < 1e-12, "oracle {brute}");
        let p = composition_probability(&spec, &BatchComposition::new(vec![1, 1, 2], 4).unwrap())
            .unwrap();
        assert!((p - brute).abs() < 1e-12, "{p} vs {brute}");

        // Counts not summing to B.
        assert!(BatchComposition::new(vec![1, 1, 1], 4).is_err());
    }

    #[test]
    fn intra_noise_pair_count_and_identical_reps() {
        let spec = std_normal(3);
        let mut rng = Rng::new(24);
        let comp = BatchComposition::from_counts(vec![16]);
        let samples = simulate_bn_sample(
            &[0.0; 3],
            0,
            &spec,
            16,
            &ClassConstraint::FixedComposition(comp),
            &mut rng,
            40,
        )
        .unwrap();
        let diffs = extract_intra_noise(&samples).unwrap();
        assert_eq!(diffs.len(), 780); // C(40, 2)

        // Duplicated reps difference to exactly zero.
        let dup: Vec<NoiseSample> = vec![samples[0].clone(), samples[0].clone(), samples[0].clone()];
        let zero_diffs = extract_intra_noise(&dup).unwrap();
        assert!(zero_diffs.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn intra_noise_variance_law() {
        // Per-dim variance of differences: (2B-2)/B^2 at sigma = 1.
        let spec = std_normal(4);
        let mut rng = Rng::new(25);
        let b = 128;
        let comp = BatchComposition::from_counts(vec![b]);
        let samples = simulate_bn_sample(
            &[0.0; 4],
            0,
            &spec,
            b,
            &ClassConstraint::FixedComposition(comp),
            &mut rng,
            200,
        )
        .unwrap();
        let diffs = extract_intra_noise(&samples).unwrap();
        let (_, var) = moments(&diffs);
        let expect = 254.0 / 16384.0;
        for v in var {
            assert!((v - expect).abs() / expect < 0.10, "var {v} vs {expect}");
        }
    }

    #[test]
    fn mixed_compositions_are_rejected() {
        let spec = MixtureSpec::new(
            vec![vec![0.0], vec![1.0]],
            vec![vec![1.0], vec![1.0]],
            vec![0.5, 0.5],
        )
        .unwrap();
        let mut rng = Rng::new(26);
        // Free sampling at B = 8 yields varying compositions almost surely.
        let samples = simulate_bn_sample(
            &[0.0],
            0,
            &spec,
            8,
            &ClassConstraint::Free,
            &mut rng,
            30,
        )
        .unwrap();
        assert!(extract_intra_noise(&samples).is_err());
    }

    #[test]
    fn infeasible_constraint_errors() {
        let spec = MixtureSpec::new(
            vec![vec![0.0], vec![1.0]],
            vec![vec![1.0], vec![1.0]],
            vec![1.0, 0.0],
        )
        .unwrap();
        let mut rng = Rng::new(27);
        assert!(simulate_bn_sample(
            &[0.0],
            0,
            &spec,
            4,
            &ClassConstraint::AllFromClass(1),
            &mut rng,
            5
        )
        .is_err());
        assert!(simulate_bn_sample(&[0.0], 0, &spec, 1, &ClassConstraint::Free, &mut rng, 5)
            .is_err());
    }

    #[test]
    fn variance_strictly_decreases_with_batch_size() {
        let spec = std_normal(1);
        let mut last = f64::INFINITY;
        for b in [2usize, 4, 8, 16, 32, 64, 128] {
            let comp = BatchComposition::from_counts(vec![b]);
            let (_, var) = closed_form_noise(&spec, &comp, 0).unwrap();
            assert!(var[0] < last, "Var at B={b} did not decrease");
            last = var[0];
        }
    }

    #[test]
    fn full_bn_variant_close_to_mean_only_at_large_batch() {
        // With unit-variance data the dropped denominator is ~1, so the
        // full-BN delta law lands near the closed form; the residual gap
        // is measured, not assumed.
        let spec = std_normal(4);
        let x = vec![0.0; 4];
        let expect = 127.0 / 16384.0;
        let mut rng = Rng::new(28);
        let full = simulate_bn_sample_with(
            BnVariant::Full,
            &x,
            0,
            &spec,
            128,
            &ClassConstraint::Free,
            &mut rng,
            10_000,
        )
        .unwrap();
        let deltas: Vec<Vec<f64>> = full.iter().map(|s| s.delta.clone()).collect();
        let (_, var) = moments(&deltas);
        for v in var {
            assert!((v - expect).abs() / expect < 0.15, "full-BN var {v} vs {expect}");
        }
    }

    #[test]
    fn decomposition_separates_well_spread_classes() {
        let sep = 10.0;
        let spec = MixtureSpec::new(
            vec![vec![0.0; 6], vec![sep; 6]],
            vec![vec![1.0; 6], vec![1.0; 6]],
            vec![0.5, 0.5],
        )
        .unwrap();
        let rng = Rng::new(29);
        let x = vec![0.0; 6];
        let mut per_class = Vec::new();
        for y in 0..2 {
            let s = simulate_bn_sample(
                &x,
                0,
                &spec,
                32,
                &ClassConstraint::AllFromClass(y),
                &mut rng.derive(y as u64),
                60,
            )
            .unwrap();
            per_class.push((y, s));
        }
        let report = decompose_noise(&per_class).unwrap();
        assert!(report.centroid_accuracy > 0.95, "accuracy {}", report.centroid_accuracy);
        assert!(report.scatter_ratio > 10.0, "ratio {}", report.scatter_ratio);
    }

    #[test]
    fn decomposition_identical_classes_is_chance() {
        let spec = MixtureSpec::new(
            vec![vec![0.0; 4], vec![0.0; 4]],
            vec![vec![1.0; 4], vec![1.0; 4]],
            vec![0.5, 0.5],
        )
        .unwrap();
        let rng = Rng::new(30);
        let x = vec![0.0; 4];
        let mut per_class = Vec::new();
        for y in 0..2 {
            let s = simulate_bn_sample(
                &x,
                0,
                &spec,
                32,
                &ClassConstraint::AllFromClass(y),
                &mut rng.derive(y as u64),
                100,
            )
            .unwrap();
            per_class.push((y, s));
        }
        let report = decompose_noise(&per_class).unwrap();
        // No inter-distribution signal: near-zero separation, near-chance id.
        assert!(report.scatter_ratio < 0.5, "ratio {}", report.scatter_ratio);
        assert!(
            (report.centroid_accuracy - 0.5).abs() < 0.2,
            "accuracy {}",
            report.centroid_accuracy
        );
    }

    #[test]
    fn scatter_ratio_monotone_in_spread() {
        let mut last = 0.0;
        for (i, sep) in [1.0f64, 3.0, 9.0].into_iter().enumerate() {
            let spec = MixtureSpec::new(
                vec![vec![0.0; 4], vec![sep; 4]],
                vec![vec![1.0; 4], vec![1.0; 4]],
                vec![0.5, 0.5],
            )
            .unwrap();
            let rng = Rng::new(31 + i as u64);
            let x = vec![0.0; 4];
            let mut per_class = Vec::new();
            for y in 0..2 {
                let s = simulate_bn_sample(
                    &x,
                    0,
                    &spec,
                    32,
                    &ClassConstraint::AllFromClass(y),
                    &mut rng.derive(y as u64),
                    80,
                )
                .unwrap();
                per_class.push((y, s));
            }
            let report = decompose_noise(&per_class).unwrap();
            assert!(
                report.scatter_ratio > last,
                "ratio {} did not grow past {last} at spread {sep}",
                report.scatter_ratio
            );
            last = report.scatter_ratio;
        }
    }
}
