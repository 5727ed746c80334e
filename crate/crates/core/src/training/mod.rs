//! Teacher trajectories, the training objective, the minibatch loop and
//! gradient-based search in latent space.

mod loss;
mod optimize;
mod trainer;
mod trajectory;

use thiserror::Error;

use crate::model::ModelError;

pub use loss::{compute_loss, LossBreakdown, LossNodes, LossWeights};
pub use optimize::{optimize_latent, property_gradient, Direction, LatentPath, MONOTONE_TOLERANCE};
pub use trainer::{
    evaluate_loss, examples_from_dataset, proxy_property, train, EpochStats, TrainConfig, TrainingExample,
};
pub use trajectory::{build_trajectory, TeacherTrajectory};

#[derive(Debug, Error)]
pub enum TrainingError {
    #[error("graph has no atoms")]
    EmptyGraph,
    #[error("graph is not connected")]
    Disconnected,
    #[error("property value required when the property weight is positive")]
    MissingProperty,
    #[error("training set is empty")]
    EmptyDataset,
    #[error("configuration: {0}")]
    Config(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl From<crate::autodiff::AutodiffError> for TrainingError {
    fn from(e: crate::autodiff::AutodiffError) -> Self {
        TrainingError::Model(e.into())
    }
}
