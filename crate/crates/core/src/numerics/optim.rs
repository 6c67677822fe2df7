use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer state over one flat parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    step: u64,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, learning_rate: f64, param_count: usize) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be positive, got {learning_rate}"
            )));
        }
        let moments = match kind {
            OptimizerKind::Sgd => 0,
            OptimizerKind::Adam { .. } => param_count,
        };
        Ok(Self {
            kind,
            learning_rate,
            first_moment: vec![0.0; moments],
            second_moment: vec![0.0; moments],
            step: 0,
        })
    }

    pub fn sgd(learning_rate: f64, param_count: usize) -> Result<Self> {
        Self::new(OptimizerKind::Sgd, learning_rate, param_count)
    }

    pub fn adam(learning_rate: f64, param_count: usize) -> Result<Self> {
        Self::new(OptimizerKind::adam(), learning_rate, param_count)
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update in place.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(shape_err(format!(
                "{} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("gradient component {i}")));
        }
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    *p -= self.learning_rate * g;
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                if self.first_moment.len() != params.len() {
                    return Err(shape_err("moment buffers do not match parameters"));
                }
                self.step += 1;
                let t = self.step as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for i in 0..params.len() {
                    let g = grads[i];
                    let m = beta1 * self.first_moment[i] + (1.0 - beta1) * g;
                    let v = beta2 * self.second_moment[i] + (1.0 - beta2) * g * g;
                    self.first_moment[i] = m;
                    self.second_moment[i] = v;
                    params[i] -= self.learning_rate * (m / c1) / ((v / c2).sqrt() + eps);
                }
                return Ok(());
            }
        }
        self.step += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_unit_step() {
        let mut opt = OptimizerState::sgd(1.0, 1).unwrap();
        let mut p = [0.0];
        opt.step(&mut p, &[1.0]).unwrap();
        assert_eq!(p, [-1.0]);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        for mut opt in [
            OptimizerState::sgd(0.1, 3).unwrap(),
            OptimizerState::adam(0.1, 3).unwrap(),
        ] {
            let mut p = [1.0, -2.0, 3.0];
            opt.step(&mut p, &[0.0; 3]).unwrap();
            assert_eq!(p, [1.0, -2.0, 3.0]);
        }
    }

    #[test]
    fn adam_first_step_has_learning_rate_magnitude() {
        // m̂ = g, v̂ = g², so the step is lr * g / (|g| + eps)
        for g in [1e-3, 1.0, 1e3] {
            let mut opt = OptimizerState::adam(1e-3, 1).unwrap();
            let mut p = [0.0];
            opt.step(&mut p, &[g]).unwrap();
            assert!((p[0].abs() - 1e-3).abs() < 1e-8, "g = {g}: {}", p[0]);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut opt = OptimizerState::adam(1e-3, 2).unwrap();
        let mut p = [0.0, 0.0];
        assert!(matches!(opt.step(&mut p, &[f64::NAN, 0.0]), Err(Error::NonFinite(_))));
        assert!(opt.step(&mut p, &[0.0]).is_err());
        assert!(OptimizerState::sgd(0.0, 1).is_err());
        assert_eq!(opt.steps_taken(), 0);
    }
}
