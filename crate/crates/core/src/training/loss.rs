use rand::Rng;

use super::{TeacherTrajectory, TrainingError};
use crate::autodiff::{squared_error, Tape, Tensor, Var};
use crate::chemgraph::MolecularGraph;
use crate::decoder::DecodeMode;
use crate::encoder::reparameterize;
use crate::model::Model;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    /// Weight of the KL term.
    pub latent: f64,
    /// Weight of the property regression term.
    pub opt: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { latent: 0.3, opt: 10.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub recon: f64,
    pub latent: f64,
    pub opt: f64,
    pub total: f64,
    pub lambda_latent: f64,
    pub lambda_opt: f64,
}

impl LossBreakdown {
    pub fn combine(recon: f64, latent: f64, opt: f64, weights: LossWeights) -> Self {
        Self {
            recon,
            latent,
            opt,
            total: recon + weights.latent * latent + weights.opt * opt,
            lambda_latent: weights.latent,
            lambda_opt: weights.opt,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LossNodes {
    pub total: Var,
    pub breakdown: LossBreakdown,
}

/// Builds the full training objective for one molecule on `tape`.
///
/// The property term is skipped when its weight is zero; with a positive
/// weight a target value is required.
pub fn compute_loss<R: Rng + ?Sized>(
    model: &Model,
    tape: &mut Tape,
    g: &MolecularGraph,
    property: Option<f64>,
    trajectory: &TeacherTrajectory,
    weights: LossWeights,
    rng: &mut R,
) -> Result<LossNodes, TrainingError> {
    let enc = model.encode(tape, g)?;
    let z = reparameterize(tape, &enc, rng)?;
    let mode = DecodeMode::Teacher {
        types: &trajectory.types,
        plan: &trajectory.plan,
    };
    let out = model.decoder.decode(
        tape,
        &model.params,
        &model.vocab,
        z,
        &trajectory.alpha0,
        mode,
        rng,
        false,
    )?;
    let recon = out.loss.expect("teacher decoding yields a loss");
    let latent = tape.gaussian_kl(enc.mu, enc.log_var)?;
    let recon_v = tape.value(recon).item();
    let latent_v = tape.value(latent).item();
    let weighted_latent = tape.scale(latent, weights.latent);
    let mut total = tape.add(recon, weighted_latent)?;
    let mut opt_v = 0.0;
    if weights.opt != 0.0 {
        let y = property.ok_or(TrainingError::MissingProperty)?;
        let pred = model.property_node(tape, z)?;
        let opt = squared_error(tape, pred, &Tensor::scalar(y))?;
        opt_v = tape.value(opt).item();
        let weighted = tape.scale(opt, weights.opt);
        total = tape.add(total, weighted)?;
    }
    Ok(LossNodes {
        total,
        breakdown: LossBreakdown::combine(recon_v, latent_v, opt_v, weights),
    })
}
