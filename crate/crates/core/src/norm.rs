//! Batch, layer, and instance normalization with train/eval semantics.
//!
//! All three standardize `(x - mean) / sqrt(var + eps)` and apply a
//! per-channel affine transform; they differ only in which axes the
//! statistics pool over. Batch norm pools each channel over batch and
//! spatial axes and keeps running (global) statistics for eval mode;
//! layer and instance norm use per-sample (adaptive) statistics and
//! behave identically in both modes.

use crate::grad_check::{check_gradients, GradCheckReport};
use crate::rng::Rng;
use crate::tensor::{NormCtx, Op, Tape, Tensor, TensorError, TensorId, TensorResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormKind {
    Batch,
    Layer,
    Instance,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// How statistics pool over a `[batch, channels, spatial...]` tensor.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Grouping {
    pub kind: NormKind,
    pub batch: usize,
    pub channels: usize,
    pub spatial: usize,
}

impl Grouping {
    pub fn group_count(&self) -> usize {
        match self.kind {
            NormKind::Batch => self.channels,
            NormKind::Layer => self.batch,
            NormKind::Instance => self.batch * self.channels,
        }
    }

    pub fn group_size(&self) -> usize {
        match self.kind {
            NormKind::Batch => self.batch * self.spatial,
            NormKind::Layer => self.channels * self.spatial,
            NormKind::Instance => self.spatial,
        }
    }

    #[inline]
    pub fn group_of(&self, flat: usize) -> usize {
        let cs = self.channels * self.spatial;
        match self.kind {
            NormKind::Batch => (flat % cs) / self.spatial,
            NormKind::Layer => flat / cs,
            NormKind::Instance => flat / self.spatial,
        }
    }

    #[inline]
    pub fn channel_of(&self, flat: usize) -> usize {
        (flat % (self.channels * self.spatial)) / self.spatial
    }
}

/// A normalization layer: statistics axes, epsilon, trainable affine, and
/// (for batch norm) running statistics with their update momentum.
#[derive(Debug)]
pub struct NormalizerSpec {
    pub kind: NormKind,
    pub num_features: usize,
    pub eps: f64,
    pub affine_scale: TensorId,
    pub affine_bias: TensorId,
    pub momentum: f64,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub mode: Mode,
}

pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_MOMENTUM: f64 = 0.1;

impl NormalizerSpec {
    /// Scale initialized to ones, bias to zeros, running stats to (0, 1).
    pub fn new(
        tape: &mut Tape,
        kind: NormKind,
        num_features: usize,
        eps: f64,
        momentum: f64,
    ) -> TensorResult<Self> {
        if num_features == 0 {
            return Err(TensorError::InvalidArgument {
                op: "normalizer",
                message: "num_features must be >= 1".into(),
            });
        }
        if !(eps >= 0.0 && eps.is_finite()) {
            return Err(TensorError::InvalidArgument {
                op: "normalizer",
                message: format!("eps {eps} must be finite and >= 0"),
            });
        }
        if !(momentum > 0.0 && momentum <= 1.0) {
            return Err(TensorError::InvalidArgument {
                op: "normalizer",
                message: format!("momentum {momentum} outside (0, 1]"),
            });
        }
        let affine_scale = tape.leaf_from(vec![num_features], vec![1.0; num_features], true)?;
        let affine_bias = tape.leaf_from(vec![num_features], vec![0.0; num_features], true)?;
        Ok(NormalizerSpec {
            kind,
            num_features,
            eps,
            affine_scale,
            affine_bias,
            momentum,
            running_mean: vec![0.0; num_features],
            running_var: vec![1.0; num_features],
            mode: Mode::Train,
        })
    }

    pub fn forward(&mut self, tape: &mut Tape, x: TensorId) -> TensorResult<TensorId> {
        match self.kind {
            NormKind::Batch => bn_forward(tape, x, self),
            NormKind::Layer => ln_forward(tape, x, self),
            NormKind::Instance => in_forward(tape, x, self),
        }
    }
}

fn split_shape(op: &'static str, shape: &[usize]) -> TensorResult<(usize, usize, usize)> {
    if shape.len() < 2 {
        return Err(TensorError::InvalidArgument {
            op,
            message: format!("expected at least 2-D input, got {shape:?}"),
        });
    }
    let spatial: usize = shape[2..].iter().product();
    Ok((shape[0], shape[1], spatial))
}

fn check_features(op: &'static str, channels: usize, spec: &NormalizerSpec) -> TensorResult<()> {
    if channels != spec.num_features {
        return Err(TensorError::InvalidArgument {
            op,
            message: format!("channel axis {channels} != num_features {}", spec.num_features),
        });
    }
    Ok(())
}

fn group_moments(x: &[f64], grouping: Grouping) -> (Vec<f64>, Vec<f64>) {
    let g = grouping.group_count();
    let n = grouping.group_size() as f64;
    let mut sum = vec![0.0; g];
    let mut sumsq = vec![0.0; g];
    for (i, &v) in x.iter().enumerate() {
        let gi = grouping.group_of(i);
        sum[gi] += v;
        sumsq[gi] += v * v;
    }
    let mut mean = sum;
    let mut var = sumsq;
    for i in 0..g {
        mean[i] /= n;
        var[i] = (var[i] / n - mean[i] * mean[i]).max(0.0); // biased (1/N)
    }
    (mean, var)
}

fn normalize_affine(
    tape: &mut Tape,
    x: TensorId,
    spec: &NormalizerSpec,
    grouping: Grouping,
    mean: Vec<f64>,
    invstd: Vec<f64>,
    stats_from_input: bool,
) -> TensorId {
    let xv = tape.data(x);
    let scale = tape.data(spec.affine_scale);
    let bias = tape.data(spec.affine_bias);
    let mut out = vec![0.0; xv.len()];
    for (i, &v) in xv.iter().enumerate() {
        let g = grouping.group_of(i);
        let c = grouping.channel_of(i);
        out[i] = scale[c] * (v - mean[g]) * invstd[g] + bias[c];
    }
    let shape = tape.shape(x).to_vec();
    tape.push(
        Tensor { shape, data: out, requires_grad: false, grad: None },
        Op::Norm(NormCtx {
            x,
            scale: spec.affine_scale,
            bias: spec.affine_bias,
            grouping,
            mean,
            invstd,
            stats_from_input,
        }),
    )
}

/// Batch normalization. Train mode standardizes with per-channel batch
/// statistics (biased variance) and folds them into the running averages
/// as `running <- (1 - momentum) * running + momentum * batch_stat`, with
/// the unbiased correction applied to the variance it stores. Eval mode
/// standardizes with the running statistics and is deterministic.
pub fn bn_forward(tape: &mut Tape, x: TensorId, spec: &mut NormalizerSpec) -> TensorResult<TensorId> {
    let (batch, channels, spatial) = split_shape("bn_forward", tape.shape(x))?;
    check_features("bn_forward", channels, spec)?;
    let grouping = Grouping { kind: NormKind::Batch, batch, channels, spatial };
    match spec.mode {
        Mode::Train => {
            if batch < 2 {
                return Err(TensorError::InvalidArgument {
                    op: "bn_forward",
                    message: format!("batch statistics undefined for batch size {batch}"),
                });
            }
            let (mean, var) = group_moments(tape.data(x), grouping);
            let n = grouping.group_size() as f64;
            let m = spec.momentum;
            for c in 0..channels {
                spec.running_mean[c] = (1.0 - m) * spec.running_mean[c] + m * mean[c];
                let unbiased = var[c] * n / (n - 1.0);
                spec.running_var[c] = (1.0 - m) * spec.running_var[c] + m * unbiased;
            }
            let invstd: Vec<f64> = var.iter().map(|&v| 1.0 / (v + spec.eps).sqrt()).collect();
            Ok(normalize_affine(tape, x, spec, grouping, mean, invstd, true))
        }
        Mode::Eval => {
            let mean = spec.running_mean.clone();
            let invstd: Vec<f64> =
                spec.running_var.iter().map(|&v| 1.0 / (v + spec.eps).sqrt()).collect();
            Ok(normalize_affine(tape, x, spec, grouping, mean, invstd, false))
        }
    }
}

/// Layer normalization: per-sample statistics over every non-batch axis.
/// Adaptive statistics make it mode-independent; batch size 1 is fine.
pub fn ln_forward(tape: &mut Tape, x: TensorId, spec: &mut NormalizerSpec) -> TensorResult<TensorId> {
    let (batch, channels, spatial) = split_shape("ln_forward", tape.shape(x))?;
    check_features("ln_forward", channels, spec)?;
    let grouping = Grouping { kind: NormKind::Layer, batch, channels, spatial };
    let (mean, var) = group_moments(tape.data(x), grouping);
    let invstd: Vec<f64> = var.iter().map(|&v| 1.0 / (v + spec.eps).sqrt()).collect();
    Ok(normalize_affine(tape, x, spec, grouping, mean, invstd, true))
}

/// Instance normalization: statistics per (sample, channel) over the
/// spatial axes of a 4-D input. Mode-independent.
pub fn in_forward(tape: &mut Tape, x: TensorId, spec: &mut NormalizerSpec) -> TensorResult<TensorId> {
    let shape = tape.shape(x).to_vec();
    if shape.len() != 4 {
        return Err(TensorError::InvalidArgument {
            op: "in_forward",
            message: format!("expected 4-D input, got {shape:?}"),
        });
    }
    let (batch, channels, spatial) = (shape[0], shape[1], shape[2] * shape[3]);
    check_features("in_forward", channels, spec)?;
    let grouping = Grouping { kind: NormKind::Instance, batch, channels, spatial };
    let (mean, var) = group_moments(tape.data(x), grouping);
    let invstd: Vec<f64> = var.iter().map(|&v| 1.0 / (v + spec.eps).sqrt()).collect();
    Ok(normalize_affine(tape, x, spec, grouping, mean, invstd, true))
}

pub(crate) fn norm_backward(tape: &Tape, ctx: &NormCtx, g: &[f64], adj: &mut Vec<Option<Vec<f64>>>) {
    let grouping = ctx.grouping;
    let xv = tape.data(ctx.x).to_vec();
    let scale = tape.data(ctx.scale).to_vec();
    let n_elem = xv.len();
    let xhat =
        |i: usize| (xv[i] - ctx.mean[grouping.group_of(i)]) * ctx.invstd[grouping.group_of(i)];

    // Affine gradients are identical in every mode.
    {
        let gs = Tape::accumulate_pub(adj, ctx.scale, scale.len());
        for i in 0..n_elem {
            gs[grouping.channel_of(i)] += g[i] * xhat(i);
        }
    }
    {
        let gb = Tape::accumulate_pub(adj, ctx.bias, scale.len());
        for i in 0..n_elem {
            gb[grouping.channel_of(i)] += g[i];
        }
    }

    let gx = Tape::accumulate_pub(adj, ctx.x, n_elem);
    if ctx.stats_from_input {
        // Standardization statistics depend on x: include their terms.
        let groups = grouping.group_count();
        let n = grouping.group_size() as f64;
        let mut sum_dxhat = vec![0.0; groups];
        let mut sum_dxhat_xhat = vec![0.0; groups];
        for i in 0..n_elem {
            let dxhat = g[i] * scale[grouping.channel_of(i)];
            let gi = grouping.group_of(i);
            sum_dxhat[gi] += dxhat;
            sum_dxhat_xhat[gi] += dxhat * xhat(i);
        }
        for i in 0..n_elem {
            let gi = grouping.group_of(i);
            let dxhat = g[i] * scale[grouping.channel_of(i)];
            gx[i] += ctx.invstd[gi]
                * (dxhat - sum_dxhat[gi] / n - xhat(i) * sum_dxhat_xhat[gi] / n);
        }
    } else {
        // Eval-mode batch norm: constants, plain chain rule.
        for i in 0..n_elem {
            gx[i] +=
                g[i] * scale[grouping.channel_of(i)] * ctx.invstd[grouping.group_of(i)];
        }
    }
}

/// Finite-difference audit of one normalizer's tape gradients on random
/// instances; gradients of the input and both affine parameters are all
/// compared against central differences.
pub fn norm_backward_check(
    kind: NormKind,
    mode: Mode,
    rng: &mut Rng,
    cases: usize,
) -> TensorResult<GradCheckReport> {
    let mut worst = GradCheckReport { max_rel_error: 0.0, cases: 0, tolerance: 1e-4, pass: true };
    for _ in 0..cases {
        let (shape, features) = match kind {
            NormKind::Instance => (vec![3, 2, 4, 4], 2),
            _ => (vec![4, 3], 3),
        };
        let numel: usize = shape.iter().product();
        let x = Tensor::new(shape.clone(), rng.normal_vec(numel))?.with_grad();
        let scale =
            Tensor::new(vec![features], (0..features).map(|_| 0.5 + rng.next_f64()).collect())?
                .with_grad();
        let bias = Tensor::new(vec![features], rng.normal_vec(features))?.with_grad();
        let report = check_gradients(
            |tape, ids| {
                let mut spec = NormalizerSpec::new(tape, kind, features, DEFAULT_EPS, 0.1)?;
                spec.mode = mode;
                tape.get_mut(spec.affine_scale).data = tape.data(ids[1]).to_vec();
                tape.get_mut(spec.affine_bias).data = tape.data(ids[2]).to_vec();
                // Route gradcheck's perturbed copies into the normalizer's slots.
                spec.affine_scale = ids[1];
                spec.affine_bias = ids[2];
                let y = spec.forward(tape, ids[0])?;
                let sq = tape.mul(y, y)?;
                Ok(tape.sum(sq))
            },
            &[x, scale, bias],
            1e-6,
            1e-4,
        )?;
        worst.max_rel_error = worst.max_rel_error.max(report.max_rel_error);
        worst.cases += 1;
        worst.pass &= report.pass;
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec_on(tape: &mut Tape, kind: NormKind, features: usize, eps: f64) -> NormalizerSpec {
        NormalizerSpec::new(tape, kind, features, eps, 0.1).unwrap()
    }

    #[test]
    fn bn_two_point_symmetry() {
        let mut tape = Tape::new();
        let mut spec = spec_on(&mut tape, NormKind::Batch, 1, 0.0);
        let x = tape.leaf_from(vec![2, 1], vec![1.0, 3.0], false).unwrap();
        let y = bn_forward(&mut tape, x, &mut spec).unwrap();
        assert_eq!(tape.data(y), &[-1.0, 1.0]);
    }

    #[test]
    fn bn_constant_batch_collapses_to_bias() {
        let mut tape = Tape::new();
        let mut spec = spec_on(&mut tape, NormKind::Batch, 2, 1e-5);
        let x = tape.leaf_from(vec![3, 2], vec![4.0, -1.0, 4.0, -1.0, 4.0, -1.0], false).unwrap();
        let y = bn_forward(&mut tape, x, &mut spec).unwrap();
        assert!(tape.data(y).iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn bn_train_standardizes_per_channel() {
        let mut tape = Tape::new();
        let mut rng = Rng::new(11);
        let mut spec = spec_on(&mut tape, NormKind::Batch, 4, 0.0);
        let x = tape.leaf_from(vec![8, 4, 5, 5], rng.normal_vec(8 * 4 * 25), false).unwrap();
        let y = bn_forward(&mut tape, x, &mut spec).unwrap();
        // Recompute channel moments of the output directly.
        let out = tape.data(y);
        for c in 0..4 {
            let vals: Vec<f64> = (0..8 * 4 * 25)
                .filter(|i| (i % (4 * 25)) / 25 == c)
                .map(|i| out[i])
                .collect();
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-6, "channel {c} mean {mean}");
            assert!((var - 1.0).abs() < 1e-6, "channel {c} var {var}");
        }
    }

    #[test]
    fn bn_rejects_singleton_batch_in_train() {
        let mut tape = Tape::new();
        let mut spec = spec_on(&mut tape, NormKind::Batch, 2, 1e-5);
        let x = tape.leaf_from(vec![1, 2], vec![1.0, 2.0], false).unwrap();
        assert!(bn_forward(&mut tape, x, &mut spec).is_err());
        spec.mode = Mode::Eval;
        assert!(bn_forward(&mut tape, x, &mut spec).is_ok());
    }

    #[test]
    fn bn_rejects_channel_mismatch() {
        let mut tape = Tape::new();
        let mut spec = spec_on(&mut tape, NormKind::Batch, 3, 1e-5);
        let x = tape.leaf_from(vec![2, 2], vec![0.0; 4], false).unwrap();
        assert!(bn_forward(&mut tape, x, &mut spec).is_err());
    }

    #[test]
    fn bn_train_eval_discrepancy_and_running_stats() {
        let mut tape = Tape::new();
        let mut rng = Rng::new(5);
        let mut spec = spec_on(&mut tape, NormKind::Batch, 3, 1e-5);
        let data = rng.normal_vec(12).iter().map(|v| 2.0 * v + 1.0).collect::<Vec<_>>();
        let x = tape.leaf_from(vec![4, 3], data, false).unwrap();
        let y_train = bn_forward(&mut tape, x, &mut spec).unwrap();
        spec.mode = Mode::Eval;
        let y_eval = bn_forward(&mut tape, x, &mut spec).unwrap();
        // Early in running-stat accumulation the two modes must disagree.
        assert_ne!(tape.data(y_train), tape.data(y_eval));
        assert!(spec.running_var.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn ln_row_standardization_and_mode_invariance() {
        let mut tape = Tape::new();
        let mut spec = spec_on(&mut tape, NormKind::Layer, 2, 0.0);
        let x = tape.leaf_from(vec![1, 2], vec![2.0, 4.0], false).unwrap();
        let y = ln_forward(&mut tape, x, &mut spec).unwrap();
        assert_eq!(tape.data(y), &[-1.0, 1.0]);
        spec.mode = Mode::Eval;
        let y_eval = ln_forward(&mut tape, x, &mut spec).unwrap();
        assert_eq!(tape.data(y), tape.data(y_eval));
    }

    #[test]
    fn in_per_instance_channels() {
        let mut tape = Tape::new();
        let mut spec = spec_on(&mut tape, NormKind::Instance, 1, 0.0);
        let x = tape.leaf_from(vec![1, 1, 2, 2], vec![1.0, 3.0, 1.0, 3.0], false).unwrap();
        let y = in_forward(&mut tape, x, &mut spec).unwrap();
        assert_eq!(tape.data(y), &[-1.0, 1.0, -1.0, 1.0]);

        // Spatially constant channel maps to zeros.
        let xc = tape.leaf_from(vec![1, 1, 2, 2], vec![7.0; 4], false).unwrap();
        let mut spec_eps = spec_on(&mut tape, NormKind::Instance, 1, 1e-5);
        let yc = in_forward(&mut tape, xc, &mut spec_eps).unwrap();
        assert!(tape.data(yc).iter().all(|&v| v == 0.0));

        // Non-4-D input is rejected.
        let bad = tape.leaf_from(vec![2, 1], vec![0.0; 2], false).unwrap();
        assert!(in_forward(&mut tape, bad, &mut spec).is_err());
    }

    #[test]
    fn in_unit_variance_after_normalization() {
        let mut tape = Tape::new();
        let mut rng = Rng::new(23);
        let mut spec = spec_on(&mut tape, NormKind::Instance, 3, 0.0);
        let x = tape.leaf_from(vec![2, 3, 6, 6], rng.normal_vec(2 * 3 * 36), false).unwrap();
        let y = in_forward(&mut tape, x, &mut spec).unwrap();
        let out = tape.data(y);
        for bc in 0..6 {
            let vals = &out[bc * 36..(bc + 1) * 36];
            let mean = vals.iter().sum::<f64>() / 36.0;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 36.0;
            assert!((var - 1.0).abs() < 1e-6, "instance {bc} var {var}");
        }
    }

    #[test]
    fn bn_permutation_equivariance() {
        let mut tape = Tape::new();
        let mut rng = Rng::new(31);
        let data = rng.normal_vec(6 * 3);
        let mut spec = spec_on(&mut tape, NormKind::Batch, 3, 1e-5);
        let x = tape.leaf_from(vec![6, 3], data.clone(), false).unwrap();
        let y = bn_forward(&mut tape, x, &mut spec).unwrap();
        let out = tape.data(y).to_vec();

        let perm = [3usize, 0, 5, 1, 4, 2];
        let permuted: Vec<f64> =
            perm.iter().flat_map(|&r| data[r * 3..(r + 1) * 3].to_vec()).collect();
        let mut spec2 = spec_on(&mut tape, NormKind::Batch, 3, 1e-5);
        let x2 = tape.leaf_from(vec![6, 3], permuted, false).unwrap();
        let y2 = bn_forward(&mut tape, x2, &mut spec2).unwrap();
        let out2 = tape.data(y2);
        // Equivariant up to summation-order roundoff in the batch moments.
        for (new_row, &old_row) in perm.iter().enumerate() {
            for c in 0..3 {
                let a = out2[new_row * 3 + c];
                let b = out[old_row * 3 + c];
                assert!((a - b).abs() < 1e-12, "({new_row},{c}): {a} vs {b}");
            }
        }
    }

    #[test]
    fn zero_scale_blocks_input_gradient() {
        let mut tape = Tape::new();
        let mut spec = spec_on(&mut tape, NormKind::Batch, 2, 1e-5);
        tape.get_mut(spec.affine_scale).data = vec![0.0, 0.0];
        let x = tape.leaf_from(vec![3, 2], vec![1.0, -2.0, 0.5, 2.0, -1.0, 3.0], true).unwrap();
        let y = bn_forward(&mut tape, x, &mut spec).unwrap();
        let sq = tape.mul(y, y).unwrap();
        let loss = tape.sum(sq);
        tape.backward(loss).unwrap();
        assert!(tape.grad(x).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_check_all_kinds() {
        let mut rng = Rng::new(77);
        for kind in [NormKind::Batch, NormKind::Layer, NormKind::Instance] {
            let report = norm_backward_check(kind, Mode::Train, &mut rng, 3).unwrap();
            assert!(report.pass, "{kind:?}: max rel error {}", report.max_rel_error);
        }
        let report = norm_backward_check(NormKind::Batch, Mode::Eval, &mut rng, 3).unwrap();
        assert!(report.pass, "eval BN: max rel error {}", report.max_rel_error);
    }
}
