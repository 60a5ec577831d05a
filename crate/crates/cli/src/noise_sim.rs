//! Noise-law simulation: empirical delta moments against closed forms.

use nomore_core::noise::{
    closed_form_noise, simulate_bn_sample, BatchComposition, ClassConstraint, MixtureSpec,
    NoiseError, NoiseSample,
};
use nomore_core::Rng;

use crate::config::ExperimentConfig;

#[derive(Clone, Debug)]
pub struct NoiseSimReport {
    pub batch: usize,
    pub reps: usize,
    pub dim: usize,
    pub empirical_mean: Vec<f64>,
    pub empirical_var: Vec<f64>,
    pub closed_mean: Vec<f64>,
    pub closed_var: Vec<f64>,
    /// Worst per-dimension relative error of the variance.
    pub max_var_rel_error: f64,
    /// Worst per-dimension |mean| in standard errors.
    pub max_mean_se: f64,
    pub samples: Vec<NoiseSample>,
}

pub fn run_noise_sim(cfg: &ExperimentConfig) -> Result<NoiseSimReport, NoiseError> {
    let spec = MixtureSpec::single(0.0, cfg.sigma, cfg.noise_dim)?;
    let b = cfg.noise_batch;
    let reps = cfg.noise_reps;
    let x_fixed = vec![0.0; cfg.noise_dim];
    let mut rng = Rng::new(cfg.seed).derive(0x5111);
    let samples =
        simulate_bn_sample(&x_fixed, 0, &spec, b, &ClassConstraint::Free, &mut rng, reps)?;

    let d = cfg.noise_dim;
    let n = reps as f64;
    let mut mean = vec![0.0; d];
    for s in &samples {
        for (m, v) in mean.iter_mut().zip(&s.delta) {
            *m += v / n;
        }
    }
    let mut var = vec![0.0; d];
    for s in &samples {
        for k in 0..d {
            var[k] += (s.delta[k] - mean[k]) * (s.delta[k] - mean[k]) / n;
        }
    }
    let composition = BatchComposition::from_counts(vec![b]);
    let (closed_mean, closed_var) = closed_form_noise(&spec, &composition, 0)?;

    let mut max_var_rel_error = 0.0f64;
    let mut max_mean_se = 0.0f64;
    for k in 0..d {
        max_var_rel_error =
            max_var_rel_error.max((var[k] - closed_var[k]).abs() / closed_var[k]);
        let se = (closed_var[k] / n).sqrt();
        max_mean_se = max_mean_se.max((mean[k] - closed_mean[k]).abs() / se);
    }
    Ok(NoiseSimReport {
        batch: b,
        reps,
        dim: d,
        empirical_mean: mean,
        empirical_var: var,
        closed_mean,
        closed_var,
        max_var_rel_error,
        max_mean_se,
        samples,
    })
}
