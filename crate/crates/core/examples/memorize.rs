//! Trains on the first molecules of a corpus and reports reconstruction.
//!
//! cargo run --release -p ccgvae --example memorize -- data/toy_qm9.smi 50 300

use std::time::Instant;

use ccgvae::autodiff::AdamConfig;
use ccgvae::dataset::Dataset;
use ccgvae::model::{Model, ModelConfig};
use ccgvae::training::{evaluate_loss, examples_from_dataset, train, LossWeights, TrainConfig};
use ccgvae::util::stream_rng;
use ccgvae::{AtomVocabulary, HistogramDistribution};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let path = args.get(1).map(String::as_str).unwrap_or("data/toy_qm9.smi");
    let n: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(50);
    let epochs: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(300);
    let lr: f64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(3e-3);
    let batch: usize = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(10);
    let dim: usize = args.get(6).and_then(|s| s.parse().ok()).unwrap_or(16);
    let edge: usize = args.get(7).and_then(|s| s.parse().ok()).unwrap_or(64);
    let steps: usize = args.get(8).and_then(|s| s.parse().ok()).unwrap_or(3);
    let vocab = AtomVocabulary::qm9();
    let data = Dataset::load(path, &vocab).unwrap();
    let data = data.subset(&(0..n).collect::<Vec<_>>());
    let hist = HistogramDistribution::from_corpus(data.graphs(), vocab.max_valence()).unwrap();
    let cfg = ModelConfig {
        latent_dim: dim,
        hidden_dim: dim,
        encoder_steps: steps,
        decoder_steps: steps,
        edge_hidden: edge,
        property_hidden: 32,
    };
    let mut model = Model::new(cfg, vocab, hist, 1).unwrap();
    let latent: f64 = args.get(10).and_then(|s| s.parse().ok()).unwrap_or(0.3);
    let weights = LossWeights {
        latent,
        ..LossWeights::default()
    };
    let (examples, _) = examples_from_dataset(&data, weights);
    let before = evaluate_loss(&model, &examples, weights, 99).unwrap();
    println!("initial {:?}", before);
    let tc = TrainConfig {
        epochs,
        batch_size: batch,
        weights,
        adam: AdamConfig { lr, ..AdamConfig::default() },
        seed: 5,
        max_grad_norm: None,
    };
    let t0 = Instant::now();
    train(&mut model, &examples, &tc, |_, s| {
        if s.epoch % 10 == 0 {
            println!("{s} ({:.0}s)", t0.elapsed().as_secs_f64());
        }
        Ok(())
    })
    .unwrap();
    let after = evaluate_loss(&model, &examples, weights, 99).unwrap();
    println!("final {:?} drop {:.3}", after, 1.0 - after.total / before.total);
    let mut ok = 0;
    let mut total = 0;
    for (i, r) in data.records.iter().enumerate() {
        let mut rng = stream_rng(7, i as u64);
        for _ in 0..20 {
            let d = model.reconstruct(&r.graph, &mut rng).unwrap();
            total += 1;
            if d.graph().canonical_form() == r.graph.canonical_form() {
                ok += 1;
            }
        }
    }
    if let Some(out) = args.get(9) {
        model.save(out).unwrap();
    }
    println!("reconstruction {:.1}% ({:.0}s)", 100.0 * ok as f64 / total as f64, t0.elapsed().as_secs_f64());
}
