use std::fmt;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::{build_trajectory, compute_loss, LossBreakdown, LossWeights, TrainingError};
use crate::autodiff::{Adam, AdamConfig, ParamId, Tape, Tensor};
use crate::chemgraph::MolecularGraph;
use crate::dataset::Dataset;
use crate::model::Model;
use crate::util::stream_rng;

#[derive(Debug, Clone)]
pub struct TrainingExample {
    pub graph: MolecularGraph,
    pub property: Option<f64>,
}

/// Heavy-atom count over the largest count in the set, in `[0, 1]`.
pub fn proxy_property(g: &MolecularGraph, max_atoms: usize) -> f64 {
    g.heavy_atom_count() as f64 / max_atoms.max(1) as f64
}

/// Training examples from a dataset. When the property weight is positive
/// and some record lacks a property, every example gets the proxy instead.
/// Returns whether the proxy was used.
pub fn examples_from_dataset(data: &Dataset, weights: LossWeights) -> (Vec<TrainingExample>, bool) {
    let complete = data.records.iter().all(|r| r.property.is_some());
    let use_proxy = weights.opt != 0.0 && !complete;
    let max_atoms = data.graphs().map(MolecularGraph::heavy_atom_count).max().unwrap_or(1);
    let examples = data
        .records
        .iter()
        .map(|r| TrainingExample {
            graph: r.graph.clone(),
            property: if use_proxy {
                Some(proxy_property(&r.graph, max_atoms))
            } else {
                r.property
            },
        })
        .collect();
    (examples, use_proxy)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub weights: LossWeights,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Rescales the batch gradient to this global norm when exceeded.
    pub max_grad_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            weights: LossWeights::default(),
            adam: AdamConfig::default(),
            seed: 0,
            max_grad_norm: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean over the epoch's molecules.
    pub loss: LossBreakdown,
}

impl fmt::Display for EpochStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch={} recon={:.6} latent={:.6} opt={:.6} total={:.6}",
            self.epoch, self.loss.recon, self.loss.latent, self.loss.opt, self.loss.total
        )
    }
}

type MoleculeResult = Result<(LossBreakdown, Vec<(ParamId, Tensor)>), TrainingError>;

fn molecule_step(model: &Model, ex: &TrainingExample, weights: LossWeights, seed: u64, stream: u64) -> MoleculeResult {
    let mut rng = stream_rng(seed, stream);
    let traj = build_trajectory(&ex.graph, model.nu(), &mut rng)?;
    let mut tape = Tape::new();
    let nodes = compute_loss(model, &mut tape, &ex.graph, ex.property, &traj, weights, &mut rng)?;
    let grads = tape.backward(nodes.total).map_err(crate::model::ModelError::from)?;
    Ok((nodes.breakdown, grads.param_grads()))
}

fn mean(parts: &[LossBreakdown], weights: LossWeights) -> LossBreakdown {
    let n = parts.len().max(1) as f64;
    let sum = |f: fn(&LossBreakdown) -> f64| parts.iter().map(f).sum::<f64>() / n;
    LossBreakdown::combine(sum(|b| b.recon), sum(|b| b.latent), sum(|b| b.opt), weights)
}

/// Mean loss over `examples` with trajectories and noise drawn from `seed`;
/// parameters are untouched.
pub fn evaluate_loss(
    model: &Model,
    examples: &[TrainingExample],
    weights: LossWeights,
    seed: u64,
) -> Result<LossBreakdown, TrainingError> {
    let parts: Vec<LossBreakdown> = examples
        .par_iter()
        .enumerate()
        .map(|(i, ex)| -> Result<LossBreakdown, TrainingError> {
            let mut rng = stream_rng(seed, i as u64);
            let traj = build_trajectory(&ex.graph, model.nu(), &mut rng)?;
            let mut tape = Tape::new();
            Ok(compute_loss(model, &mut tape, &ex.graph, ex.property, &traj, weights, &mut rng)?.breakdown)
        })
        .collect::<Result<_, _>>()?;
    Ok(mean(&parts, weights))
}

/// Shuffled minibatch Adam training with one fresh trajectory per molecule
/// per epoch. Molecules in a batch run in parallel; their gradients are
/// summed in batch order, so results do not depend on the thread count.
/// `on_epoch` runs after every epoch (checkpointing, logging).
pub fn train<F>(
    model: &mut Model,
    examples: &[TrainingExample],
    cfg: &TrainConfig,
    mut on_epoch: F,
) -> Result<Vec<EpochStats>, TrainingError>
where
    F: FnMut(&Model, &EpochStats) -> Result<(), TrainingError>,
{
    if examples.is_empty() {
        return Err(TrainingError::EmptyDataset);
    }
    if cfg.batch_size == 0 {
        return Err(TrainingError::Config("batch size must be positive".into()));
    }
    let mut adam = Adam::new(cfg.adam, &model.params);
    let mut history = Vec::with_capacity(cfg.epochs);
    let n = examples.len() as u64;
    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..examples.len()).collect();
        order.shuffle(&mut stream_rng(cfg.seed, 0x5eed_0000 + epoch as u64));
        let mut parts = Vec::with_capacity(examples.len());
        for batch in order.chunks(cfg.batch_size) {
            let model_ref: &Model = model;
            let results: Vec<MoleculeResult> = batch
                .par_iter()
                .map(|&i| molecule_step(model_ref, &examples[i], cfg.weights, cfg.seed, epoch as u64 * n + i as u64))
                .collect();
            model.params.zero_grads();
            for r in results {
                let (b, grads) = r?;
                parts.push(b);
                for (id, g) in grads {
                    model.params.accumulate_grad(id, &g);
                }
            }
            model.params.scale_grads(1.0 / batch.len() as f64);
            if let Some(limit) = cfg.max_grad_norm {
                let norm = model
                    .params
                    .iter()
                    .flat_map(|(_, p)| p.grad().data().iter().map(|g| g * g))
                    .sum::<f64>()
                    .sqrt();
                if norm > limit {
                    model.params.scale_grads(limit / norm);
                }
            }
            adam.step(&mut model.params);
        }
        let stats = EpochStats {
            epoch,
            loss: mean(&parts, cfg.weights),
        };
        log::info!("{stats}");
        on_epoch(model, &stats)?;
        history.push(stats);
    }
    model.params.zero_grads();
    Ok(history)
}
