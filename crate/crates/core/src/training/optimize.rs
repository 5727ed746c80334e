use super::TrainingError;
use crate::autodiff::{Tape, Tensor};
use crate::model::{Model, ModelError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Ascend,
    Descend,
}

impl Direction {
    fn sign(self) -> f64 {
        match self {
            Direction::Ascend => 1.0,
            Direction::Descend => -1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LatentPath {
    pub z: Tensor,
    /// Prediction before any step, then after each accepted step.
    pub predictions: Vec<f64>,
    pub rejected_steps: usize,
}

impl LatentPath {
    pub fn initial(&self) -> f64 {
        self.predictions[0]
    }

    pub fn last(&self) -> f64 {
        *self.predictions.last().unwrap()
    }
}

/// Largest tolerated move against the requested direction per step.
pub const MONOTONE_TOLERANCE: f64 = 1e-6;
const MAX_HALVINGS: usize = 30;

/// Value and gradient of `O(mean z)` with respect to `z`.
pub fn property_gradient(model: &Model, z: &Tensor) -> Result<(f64, Tensor), ModelError> {
    let mut tape = Tape::new();
    let zv = tape.input(z.clone());
    let p = model.property_node(&mut tape, zv)?;
    let value = tape.value(p).item();
    let grads = tape.backward(p)?;
    let g = grads.get(zv).cloned().unwrap_or_else(|| Tensor::zeros(z.shape()));
    Ok((value, g))
}

/// Gradient steps `z ← z ± step·∇O`. A step that would move the prediction
/// the wrong way by more than [`MONOTONE_TOLERANCE`] is retried at half
/// size; after repeated failures it is skipped and counted as rejected.
pub fn optimize_latent(
    model: &Model,
    z: &Tensor,
    direction: Direction,
    steps: usize,
    step_size: f64,
) -> Result<LatentPath, TrainingError> {
    let sign = direction.sign();
    let mut z = z.clone();
    let (mut current, mut grad) = property_gradient(model, &z)?;
    let mut predictions = vec![current];
    let mut rejected = 0;
    for _ in 0..steps {
        let mut size = step_size;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let mut cand = z.clone();
            for (x, g) in cand.data_mut().iter_mut().zip(grad.data()) {
                *x += sign * size * g;
            }
            let (value, g) = property_gradient(model, &cand)?;
            if sign * (value - current) >= -MONOTONE_TOLERANCE {
                accepted = Some((cand, value, g));
                break;
            }
            size *= 0.5;
        }
        match accepted {
            Some((cand, value, g)) => {
                z = cand;
                current = value;
                grad = g;
                predictions.push(value);
            }
            None => rejected += 1,
        }
    }
    Ok(LatentPath {
        z,
        predictions,
        rejected_steps: rejected,
    })
}
