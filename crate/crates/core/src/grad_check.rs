//! Central finite-difference gradient auditing.
//!
//! The checker rebuilds the forward pass from scratch for every probe, so
//! it shares no code path with the tape's backward sweep.

use crate::tensor::{Tape, Tensor, TensorId, TensorResult};

#[derive(Clone, Copy, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub cases: usize,
    pub tolerance: f64,
    pub pass: bool,
}

/// Error measure: |a - b| relative to the gradient magnitude, floored at
/// 1e-2 so coordinates whose true gradient is (near) zero are compared
/// absolutely rather than amplified.
pub fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-2)
}

fn run_forward<F>(build: &F, inputs: &[Tensor], grads: bool) -> TensorResult<(Tape, Vec<TensorId>, TensorId)>
where
    F: Fn(&mut Tape, &[TensorId]) -> TensorResult<TensorId>,
{
    let mut tape = Tape::new();
    let ids: Vec<TensorId> = inputs
        .iter()
        .map(|t| {
            let mut t = t.clone();
            t.requires_grad = grads;
            t.grad = None;
            tape.leaf(t)
        })
        .collect();
    let out = build(&mut tape, &ids)?;
    Ok((tape, ids, out))
}

/// Compare tape gradients of a scalar-valued computation against central
/// differences `(f(x+h) - f(x-h)) / 2h` for every element of every input.
pub fn check_gradients<F>(
    build: F,
    inputs: &[Tensor],
    h: f64,
    tolerance: f64,
) -> TensorResult<GradCheckReport>
where
    F: Fn(&mut Tape, &[TensorId]) -> TensorResult<TensorId>,
{
    let (mut tape, ids, out) = run_forward(&build, inputs, true)?;
    tape.backward(out)?;
    let tape_grads: Vec<Vec<f64>> = ids
        .iter()
        .map(|&id| tape.grad(id).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; tape.get(id).numel()]))
        .collect();

    let mut max_rel_error = 0.0f64;
    let mut cases = 0usize;
    let mut probe = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        for j in 0..input.numel() {
            probe[i].data[j] = input.data[j] + h;
            let (tape_p, _, out_p) = run_forward(&build, &probe, false)?;
            let f_plus = tape_p.data(out_p)[0];
            probe[i].data[j] = input.data[j] - h;
            let (tape_m, _, out_m) = run_forward(&build, &probe, false)?;
            let f_minus = tape_m.data(out_m)[0];
            probe[i].data[j] = input.data[j];
            let fd = (f_plus - f_minus) / (2.0 * h);
            max_rel_error = max_rel_error.max(rel_error(tape_grads[i][j], fd));
            cases += 1;
        }
    }
    Ok(GradCheckReport { max_rel_error, cases, tolerance, pass: max_rel_error < tolerance })
}
