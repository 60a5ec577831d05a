//! SGD with classical momentum and L2 weight decay.

use crate::tensor::{Tape, TensorError, TensorId, TensorResult};

#[derive(Clone, Copy, Debug)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl SgdConfig {
    pub fn new(learning_rate: f64, momentum: f64, weight_decay: f64) -> TensorResult<Self> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(TensorError::InvalidArgument {
                op: "sgd",
                message: format!("learning_rate {learning_rate} must be positive"),
            });
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(TensorError::InvalidArgument {
                op: "sgd",
                message: format!("momentum {momentum} outside [0, 1)"),
            });
        }
        if weight_decay < 0.0 {
            return Err(TensorError::InvalidArgument {
                op: "sgd",
                message: format!("weight_decay {weight_decay} must be non-negative"),
            });
        }
        Ok(SgdConfig { learning_rate, momentum, weight_decay })
    }
}

pub struct SgdOptimizer {
    cfg: SgdConfig,
    params: Vec<TensorId>,
    velocity: Vec<Vec<f64>>,
}

impl SgdOptimizer {
    pub fn new(cfg: SgdConfig, tape: &Tape, params: Vec<TensorId>) -> Self {
        let velocity = params.iter().map(|&p| vec![0.0; tape.get(p).numel()]).collect();
        SgdOptimizer { cfg, params, velocity }
    }

    pub fn params(&self) -> &[TensorId] {
        &self.params
    }

    /// v <- momentum * v + grad + weight_decay * param
    /// param <- param - lr * v
    pub fn step(&mut self, tape: &mut Tape) -> TensorResult<()> {
        for (i, &p) in self.params.iter().enumerate() {
            if tape.grad(p).is_none() {
                return Err(TensorError::MissingGrad { index: i });
            }
        }
        for (i, &p) in self.params.iter().enumerate() {
            let grad = tape.grad(p).unwrap().to_vec();
            let node = tape.get_mut(p);
            let v = &mut self.velocity[i];
            for j in 0..grad.len() {
                v[j] = self.cfg.momentum * v[j]
                    + grad[j]
                    + self.cfg.weight_decay * node.data[j];
                node.data[j] -= self.cfg.learning_rate * v[j];
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(value: f64) -> (Tape, TensorId) {
        let mut tape = Tape::new();
        let p = tape.leaf_from(vec![], vec![value], true).unwrap();
        (tape, p)
    }

    #[test]
    fn plain_step() {
        let (mut tape, p) = one_param(1.0);
        tape.get_mut(p).grad = Some(vec![2.0]);
        let mut opt = SgdOptimizer::new(SgdConfig::new(0.1, 0.0, 0.0).unwrap(), &tape, vec![p]);
        opt.step(&mut tape).unwrap();
        assert!((tape.data(p)[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn momentum_unrolled_two_steps() {
        // v1 = 1, p1 = -1; v2 = 0.9 + 1 = 1.9, p2 = -1 - 1.9 = -2.9
        let (mut tape, p) = one_param(0.0);
        let mut opt = SgdOptimizer::new(SgdConfig::new(1.0, 0.9, 0.0).unwrap(), &tape, vec![p]);
        for _ in 0..2 {
            tape.get_mut(p).grad = Some(vec![1.0]);
            opt.step(&mut tape).unwrap();
        }
        assert!((tape.data(p)[0] + 2.9).abs() < 1e-15);
    }

    #[test]
    fn zero_grad_without_decay_keeps_param() {
        let (mut tape, p) = one_param(3.5);
        tape.get_mut(p).grad = Some(vec![0.0]);
        let mut opt = SgdOptimizer::new(SgdConfig::new(0.5, 0.9, 0.0).unwrap(), &tape, vec![p]);
        opt.step(&mut tape).unwrap();
        assert_eq!(tape.data(p)[0], 3.5);
    }

    #[test]
    fn missing_grad_is_an_error() {
        let (mut tape, p) = one_param(1.0);
        let mut opt = SgdOptimizer::new(SgdConfig::new(0.1, 0.0, 0.0).unwrap(), &tape, vec![p]);
        assert!(matches!(opt.step(&mut tape), Err(TensorError::MissingGrad { index: 0 })));
    }

    #[test]
    fn config_validation() {
        assert!(SgdConfig::new(0.0, 0.0, 0.0).is_err());
        assert!(SgdConfig::new(0.1, 1.0, 0.0).is_err());
        assert!(SgdConfig::new(0.1, 0.5, -0.1).is_err());
    }
}
