//! Depth-wise activation-variance probe for residual chains at init.
//!
//! Feeds i.i.d. N(0,1) inputs through a stack of untrained residual
//! blocks and records the pooled activation variance after every skip
//! addition. Without any wrapper the variance roughly doubles per block;
//! with a normalizer on the branch each block adds about one unit; with a
//! zero-initialized multiplier the chain is the identity and the profile
//! is flat.
//!
//! The probe bodies are relu - linear - relu - linear with Kaiming
//! weights: each (relu, linear) pair maps second moment m to m/2 and back
//! to m, so the branch preserves its input variance and the unnormalized
//! doubling law is visible rather than buried in initialization gain.

use std::fmt;

use crate::norm::{Mode, NormKind, NormalizerSpec};
use crate::rng::Rng;
use crate::tensor::{kaiming_init, Tape, TensorError, TensorId, TensorResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProbeWrapper {
    Unnormalized,
    Normalized,
    SkipInit,
    NoMore,
}

impl ProbeWrapper {
    pub fn name(&self) -> &'static str {
        match self {
            ProbeWrapper::Unnormalized => "unnormalized",
            ProbeWrapper::Normalized => "normalized",
            ProbeWrapper::SkipInit => "skipinit",
            ProbeWrapper::NoMore => "nomore",
        }
    }
}

impl fmt::Display for ProbeWrapper {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug)]
pub struct DepthProbeConfig {
    pub depth: usize,
    pub width: usize,
    pub batch: usize,
    pub trials: usize,
    pub wrapper: ProbeWrapper,
    pub rng_seed: u64,
}

impl Default for DepthProbeConfig {
    fn default() -> Self {
        DepthProbeConfig {
            depth: 8,
            width: 128,
            batch: 256,
            trials: 32,
            wrapper: ProbeWrapper::Unnormalized,
            rng_seed: 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GrowthLabel {
    Exponential,
    Linear,
}

#[derive(Clone, Copy, Debug)]
pub struct GrowthSummary {
    /// Base of the exponential fit var_l = a * base^l (log-linear regression).
    pub exp_base: f64,
    /// Slope of the linear fit var_l = c + slope * l (least squares).
    pub lin_slope: f64,
    /// Whichever fit leaves the smaller residual in the original space.
    pub label: GrowthLabel,
}

#[derive(Clone, Debug)]
pub struct VarianceProfile {
    /// (block index l, mean pooled variance of x^l across trials);
    /// l = 0 is the input, so the list has depth + 1 entries.
    pub per_block_variance: Vec<(usize, f64)>,
    /// Trial-to-trial standard deviation of the pooled variance per l.
    pub var_std: Vec<f64>,
    /// Mean of per-feature variances per l (diagnostic).
    pub feature_var: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub wrapper: ProbeWrapper,
    pub fit: GrowthSummary,
}

fn pooled_variance(data: &[f64]) -> f64 {
    let n = data.len() as f64;
    let mean = data.iter().sum::<f64>() / n;
    data.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}

fn per_feature_variance_mean(data: &[f64], batch: usize, width: usize) -> f64 {
    let mut acc = 0.0;
    for f in 0..width {
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for b in 0..batch {
            let v = data[b * width + f];
            sum += v;
            sumsq += v * v;
        }
        let mean = sum / batch as f64;
        acc += sumsq / batch as f64 - mean * mean;
    }
    acc / width as f64
}

/// One trial: run the chain once, returning (pooled var, feature var)
/// per block level 0..=depth.
fn probe_trial(cfg: &DepthProbeConfig, trial: usize) -> TensorResult<Vec<(f64, f64)>> {
    let mut rng = Rng::new(cfg.rng_seed).derive(trial as u64);
    let mut tape = Tape::new();
    let x0 = tape.leaf_from(
        vec![cfg.batch, cfg.width],
        rng.normal_vec(cfg.batch * cfg.width),
        false,
    )?;
    let zero_bias = tape.leaf_from(vec![cfg.width], vec![0.0; cfg.width], false)?;
    let mut levels = Vec::with_capacity(cfg.depth + 1);
    let record = |tape: &Tape, id: TensorId| {
        let d = tape.data(id);
        (pooled_variance(d), per_feature_variance_mean(d, cfg.batch, cfg.width))
    };
    levels.push(record(&tape, x0));
    let mut x = x0;
    for _ in 0..cfg.depth {
        let w1 = kaiming_init(&mut rng, cfg.width, vec![cfg.width, cfg.width])?;
        let w2 = kaiming_init(&mut rng, cfg.width, vec![cfg.width, cfg.width])?;
        let w1 = tape.leaf(w1);
        let w2 = tape.leaf(w2);
        // Branch: relu - linear - relu - linear.
        let mut f = tape.relu(x);
        f = tape.linear(f, w1, zero_bias)?;
        f = tape.relu(f);
        f = tape.linear(f, w2, zero_bias)?;
        let y = match cfg.wrapper {
            ProbeWrapper::Unnormalized => tape.add(x, f)?,
            ProbeWrapper::Normalized => {
                let mut spec = NormalizerSpec::new(&mut tape, NormKind::Batch, cfg.width, 1e-12, 0.1)?;
                spec.mode = Mode::Train;
                let normed = spec.forward(&mut tape, f)?;
                tape.add(x, normed)?
            }
            ProbeWrapper::SkipInit | ProbeWrapper::NoMore => {
                let alpha = tape.leaf_from(vec![], vec![0.0], false)?;
                let mut scaled = tape.scalar_mul(f, alpha)?;
                if cfg.wrapper == ProbeWrapper::NoMore {
                    let beta = tape.leaf_from(vec![], vec![0.0], false)?;
                    scaled = tape.scalar_add(scaled, beta)?;
                }
                tape.add(x, scaled)?
            }
        };
        levels.push(record(&tape, y));
        x = y;
    }
    Ok(levels)
}

/// Run the probe: `trials` independent chains, statistics per depth.
pub fn probe_variance(cfg: &DepthProbeConfig) -> TensorResult<VarianceProfile> {
    if cfg.depth == 0 || cfg.trials == 0 || cfg.width == 0 || cfg.batch == 0 {
        return Err(TensorError::InvalidArgument {
            op: "probe_variance",
            message: "depth, width, batch, and trials must all be >= 1".into(),
        });
    }
    let threads = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let threads = threads.min(cfg.trials);
    let mut results: Vec<Option<TensorResult<Vec<(f64, f64)>>>> = (0..cfg.trials).map(|_| None).collect();
    std::thread::scope(|scope| {
        for (chunk_idx, chunk) in results.chunks_mut(cfg.trials.div_ceil(threads)).enumerate() {
            let base = chunk_idx * cfg.trials.div_ceil(threads);
            scope.spawn(move || {
                for (off, slot) in chunk.iter_mut().enumerate() {
                    *slot = Some(probe_trial(cfg, base + off));
                }
            });
        }
    });
    let mut per_trial = Vec::with_capacity(cfg.trials);
    for r in results {
        per_trial.push(r.expect("trial scheduled")?);
    }
    let levels = cfg.depth + 1;
    let mut per_block_variance = Vec::with_capacity(levels);
    let mut var_std = Vec::with_capacity(levels);
    let mut feature_var = Vec::with_capacity(levels);
    for l in 0..levels {
        let vals: Vec<f64> = per_trial.iter().map(|t| t[l].0).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let std = (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / vals.len() as f64)
            .sqrt();
        per_block_variance.push((l, mean));
        var_std.push(std);
        feature_var.push(per_trial.iter().map(|t| t[l].1).sum::<f64>() / cfg.trials as f64);
    }
    let fit = fit_growth(&per_block_variance)?;
    Ok(VarianceProfile {
        per_block_variance,
        var_std,
        feature_var,
        trials: cfg.trials,
        seed: cfg.rng_seed,
        wrapper: cfg.wrapper,
        fit,
    })
}

/// Fit both growth models to a variance profile and label the better one
/// by residual comparison in the original space.
pub fn fit_growth(per_block_variance: &[(usize, f64)]) -> TensorResult<GrowthSummary> {
    if per_block_variance.len() < 3 {
        return Err(TensorError::InvalidArgument {
            op: "fit_growth",
            message: format!("need at least 3 points, got {}", per_block_variance.len()),
        });
    }
    if per_block_variance.iter().any(|&(_, v)| !(v > 0.0)) {
        return Err(TensorError::InvalidArgument {
            op: "fit_growth",
            message: "variances must be positive for the log-linear fit".into(),
        });
    }
    let n = per_block_variance.len() as f64;
    let xs: Vec<f64> = per_block_variance.iter().map(|&(l, _)| l as f64).collect();
    let ys: Vec<f64> = per_block_variance.iter().map(|&(_, v)| v).collect();
    let lsq = |xs: &[f64], ys: &[f64]| -> (f64, f64) {
        let sx = xs.iter().sum::<f64>();
        let sy = ys.iter().sum::<f64>();
        let sxx = xs.iter().map(|v| v * v).sum::<f64>();
        let sxy = xs.iter().zip(ys).map(|(a, b)| a * b).sum::<f64>();
        let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        let intercept = (sy - slope * sx) / n;
        (intercept, slope)
    };
    let logs: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let (log_a, log_b) = lsq(&xs, &logs);
    let exp_base = log_b.exp();
    let (lin_c, lin_slope) = lsq(&xs, &ys);
    let sse_exp: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(&x, &y)| {
            let p = (log_a + log_b * x).exp();
            (y - p) * (y - p)
        })
        .sum();
    let sse_lin: f64 =
        xs.iter().zip(&ys).map(|(&x, &y)| (y - lin_c - lin_slope * x) * (y - lin_c - lin_slope * x)).sum();
    let label = if sse_exp < sse_lin { GrowthLabel::Exponential } else { GrowthLabel::Linear };
    Ok(GrowthSummary { exp_base, lin_slope, label })
}
