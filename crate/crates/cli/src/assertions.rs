//! Hypothesis-test drivers for the three batch-noise assertions.
//!
//! 1. Intra-distribution extraction: with the batch composition fixed,
//!    differences of repeated embeddings are zero-centered; a one-sample
//!    Hotelling test on independent (disjoint) difference pairs accepts
//!    the zero mean, and the all-pairs difference variance matches
//!    (2B-2)/B^2 sigma^2.
//! 2. Inter-distribution detection: with companions drawn from the fixed
//!    sample's own class the embedding mean is zero (test accepts); with
//!    companions from any other class it is shifted by
//!    (B-1)/B (mu_self - mu_other) (test rejects).
//! 3. Decomposition: the companion class is identifiable from the
//!    embedding; between-class scatter dominates within-class scatter.

use nomore_core::noise::{
    decompose_noise, disjoint_intra_noise, extract_intra_noise, simulate_bn_sample,
    ClassConstraint, DecompositionReport, MixtureSpec, NoiseError,
};
use nomore_core::stats::hotelling_one_sample;
use nomore_core::Rng;

use crate::config::ExperimentConfig;
use crate::dataset::simplex_mixture;

#[derive(Clone, Debug)]
pub struct Assertion1Run {
    pub seed: u64,
    pub p_value: f64,
    /// Pooled per-dim empirical variance of all pairwise differences.
    pub diff_variance: f64,
    pub expected_variance: f64,
    pub pairs: usize,
}

#[derive(Clone, Debug)]
pub struct Assertion2Row {
    pub companion_class: usize,
    pub is_self: bool,
    pub p_value: f64,
    pub significant_05: bool,
    pub significant_01: bool,
}

#[derive(Clone, Debug)]
pub struct AssertionsReport {
    pub a1_runs: Vec<Assertion1Run>,
    pub a1_pass_rate: f64,
    pub a2_table: Vec<Assertion2Row>,
    /// Empty-table note when the mixture has a single class.
    pub a2_note: Option<String>,
    pub a3: Option<DecompositionReport>,
    pub batch: usize,
    pub reps: usize,
    pub dim: usize,
}

pub fn mixture_for(cfg: &ExperimentConfig) -> Result<MixtureSpec, NoiseError> {
    simplex_mixture(cfg.classes, cfg.noise_dim.max(cfg.classes), cfg.separation, cfg.sigma)
        .map_err(|e| NoiseError::InvalidArgument { op: "assertions", message: e.to_string() })
}

/// Assertion 1 on one seed: K reps at a fixed composition, Hotelling on
/// disjoint difference pairs (independent by construction; overlapping
/// pairs share reps and would miscalibrate the test), variance on all
/// C(K,2) pairs.
pub fn assertion1_run(
    spec: &MixtureSpec,
    fixed_class: usize,
    batch: usize,
    reps: usize,
    seed: u64,
) -> Result<Assertion1Run, NoiseError> {
    let x_fixed = spec.means[fixed_class].clone();
    let composition = nomore_core::noise::BatchComposition::from_counts({
        // Spread the batch as evenly as the class count allows, keeping
        // one slot for the fixed sample's class.
        let n = spec.n_classes();
        let mut counts = vec![batch / n; n];
        let mut rem = batch - counts.iter().sum::<usize>();
        let mut i = 0;
        while rem > 0 {
            counts[i] += 1;
            rem -= 1;
            i += 1;
        }
        if counts[fixed_class] == 0 {
            counts[fixed_class] = 1;
            let donor = counts.iter().position(|&c| c > 1).expect("batch >= 2");
            counts[donor] -= 1;
        }
        counts
    });
    let mut rng = Rng::new(seed).derive(0xA551);
    let samples = simulate_bn_sample(
        &x_fixed,
        fixed_class,
        spec,
        batch,
        &ClassConstraint::FixedComposition(composition),
        &mut rng,
        reps,
    )?;
    let disjoint = disjoint_intra_noise(&samples)?;
    let zero = vec![0.0; spec.dim];
    let test = hotelling_one_sample(&disjoint, &zero, false)?;

    let all_pairs = extract_intra_noise(&samples)?;
    let n = all_pairs.len() as f64;
    let mut mean = vec![0.0; spec.dim];
    for row in &all_pairs {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v / n;
        }
    }
    let mut var = 0.0;
    for row in &all_pairs {
        for (m, v) in mean.iter().zip(row) {
            var += (v - m) * (v - m);
        }
    }
    var /= n * spec.dim as f64;
    // sigma is shared across classes here, so the law needs no mixture sum.
    let sigma2 = spec.stds[0][0] * spec.stds[0][0];
    let expected = (2.0 * batch as f64 - 2.0) / (batch as f64 * batch as f64) * sigma2;
    Ok(Assertion1Run {
        seed,
        p_value: test.p_value,
        diff_variance: var,
        expected_variance: expected,
        pairs: all_pairs.len(),
    })
}

/// Assertion 2: the fixed sample sits at its class mean; companions come
/// from one class at a time. Each row is a one-sample Hotelling test of
/// the embeddings against zero.
pub fn assertion2_table(
    spec: &MixtureSpec,
    fixed_class: usize,
    batch: usize,
    reps: usize,
    seed: u64,
) -> Result<Vec<Assertion2Row>, NoiseError> {
    let x_fixed = spec.means[fixed_class].clone();
    let zero = vec![0.0; spec.dim];
    let mut rows = Vec::new();
    for y in 0..spec.n_classes() {
        let mut rng = Rng::new(seed).derive(0xA552).derive(y as u64);
        let samples = simulate_bn_sample(
            &x_fixed,
            fixed_class,
            spec,
            batch,
            &ClassConstraint::AllFromClass(y),
            &mut rng,
            reps,
        )?;
        let embeddings: Vec<Vec<f64>> = samples.iter().map(|s| s.embedding()).collect();
        let test = hotelling_one_sample(&embeddings, &zero, false)?;
        rows.push(Assertion2Row {
            companion_class: y,
            is_self: y == fixed_class,
            p_value: test.p_value,
            significant_05: test.significant_05,
            significant_01: test.significant_01,
        });
    }
    Ok(rows)
}

pub fn assertion3_decomposition(
    spec: &MixtureSpec,
    fixed_class: usize,
    batch: usize,
    reps_per_class: usize,
    seed: u64,
) -> Result<DecompositionReport, NoiseError> {
    let x_fixed = spec.means[fixed_class].clone();
    let mut per_class = Vec::new();
    for y in 0..spec.n_classes() {
        let mut rng = Rng::new(seed).derive(0xA553).derive(y as u64);
        let samples = simulate_bn_sample(
            &x_fixed,
            fixed_class,
            spec,
            batch,
            &ClassConstraint::AllFromClass(y),
            &mut rng,
            reps_per_class,
        )?;
        per_class.push((y, samples));
    }
    decompose_noise(&per_class)
}

pub fn run_assertions(cfg: &ExperimentConfig) -> Result<AssertionsReport, NoiseError> {
    let spec = mixture_for(cfg)?;
    let batch = cfg.noise_batch;
    let fixed_class = 0usize;
    let a1_reps = 200.min(cfg.noise_reps);

    let mut a1_runs = Vec::with_capacity(cfg.assertion_runs);
    for run in 0..cfg.assertion_runs {
        a1_runs.push(assertion1_run(
            &spec,
            fixed_class,
            batch,
            a1_reps,
            cfg.seed.wrapping_add(run as u64),
        )?);
    }
    let a1_pass_rate =
        a1_runs.iter().filter(|r| r.p_value > 0.05).count() as f64 / a1_runs.len() as f64;

    let a2_reps = 200.min(cfg.noise_reps);
    let a2_table = assertion2_table(&spec, fixed_class, batch, a2_reps, cfg.seed)?;
    let a2_note =
        (spec.n_classes() < 2).then(|| "no cross-class pairs (single-class mixture)".to_string());

    let a3 = if spec.n_classes() >= 2 {
        Some(assertion3_decomposition(&spec, fixed_class, batch, 60, cfg.seed)?)
    } else {
        None
    };

    Ok(AssertionsReport {
        a1_runs,
        a1_pass_rate,
        a2_table,
        a2_note,
        a3,
        batch,
        reps: a1_reps,
        dim: spec.dim,
    })
}
