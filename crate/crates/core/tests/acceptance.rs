//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

mod common;

use std::collections::{BTreeMap, HashSet};
use std::path::PathBuf;
use std::time::Instant;

use ccgvae::autodiff::AdamConfig;
use ccgvae::chemgraph::BondOrder;
use ccgvae::dataset::Dataset;
use ccgvae::decoder::{edge_mask, DecodeMode};
use ccgvae::encoder::sample_prior;
use ccgvae::metrics::{is_valid_molecule, reconstruction_rate, ReconstructionProtocol, SuccessCriterion};
use ccgvae::model::{Model, ModelConfig};
use ccgvae::training::{
    build_trajectory, evaluate_loss, examples_from_dataset, optimize_latent, train, Direction, LossWeights,
    TrainConfig, MONOTONE_TOLERANCE,
};
use ccgvae::util::stream_rng;
use ccgvae::{parse_smiles, write_smiles, AtomVocabulary, HistogramDistribution, MolecularGraph, ValenceHistogram};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use common::gradcheck;
use common::{FD_TOLERANCE, FD_TRIALS};

const GENERATIONS: usize = 10_000;
const MEMORIZE_SET: usize = 50;
const MEMORIZE_EPOCHS: usize = 300;
const MEMORIZE_RECON: f64 = 50.0;
const MEMORIZE_DROP: f64 = 0.90;
const TEACHER_DRAWS: u64 = 3;
const PERMUTATIONS: u64 = 100;
const SAMPLING_DRAWS: usize = 100_000;
const CHI2_P: f64 = 0.001;
const OPT_STARTS: u64 = 100;
const OPT_STEPS: usize = 50;
const OPT_STEP_SIZE: f64 = 0.05;
const MASK_MAX_ATOMS: usize = 4;

/// Desk-scale architecture used wherever a trained or random model is needed.
fn toy_config() -> ModelConfig {
    ModelConfig {
        latent_dim: 32,
        hidden_dim: 32,
        encoder_steps: 4,
        decoder_steps: 4,
        edge_hidden: 128,
        property_hidden: 32,
    }
}

fn toy_training() -> TrainConfig {
    TrainConfig {
        epochs: MEMORIZE_EPOCHS,
        batch_size: 10,
        // A light prior term lets 50 molecules be memorised within the epoch budget.
        weights: LossWeights {
            latent: 0.1,
            ..LossWeights::default()
        },
        adam: AdamConfig {
            lr: 3e-3,
            ..AdamConfig::default()
        },
        seed: 5,
        max_grad_norm: None,
    }
}

fn data_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

fn toy_corpus() -> Dataset {
    let data = Dataset::load(data_path("toy_qm9.smi"), &AtomVocabulary::qm9()).expect("toy corpus present");
    assert!(data.failures.is_empty(), "toy corpus has unparsable lines: {:?}", data.failures);
    data
}

#[derive(Clone)]
struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

struct Memorized {
    model: Model,
    outcome: Outcome,
}

fn memorize(corpus: &Dataset) -> Memorized {
    let t0 = Instant::now();
    let subset = corpus.subset(&(0..MEMORIZE_SET).collect::<Vec<_>>());
    let vocab = AtomVocabulary::qm9();
    let hist = HistogramDistribution::from_corpus(subset.graphs(), vocab.max_valence()).unwrap();
    let mut model = Model::new(toy_config(), vocab, hist, 1).unwrap();
    let tc = toy_training();
    let (examples, _) = examples_from_dataset(&subset, tc.weights);
    let before = evaluate_loss(&model, &examples, tc.weights, 99).unwrap();
    train(&mut model, &examples, &tc, |_, _| Ok(())).unwrap();
    let after = evaluate_loss(&model, &examples, tc.weights, 99).unwrap();
    let drop = 1.0 - after.total / before.total;
    let graphs: Vec<_> = subset.graphs().cloned().collect();
    let protocol = ReconstructionProtocol {
        encodings: 20,
        molecule_cap: MEMORIZE_SET,
        seed: 7,
    };
    let rec = reconstruction_rate(&model, &graphs, protocol, SuccessCriterion::Canonical);
    let pass = rec.rate() >= MEMORIZE_RECON && drop >= MEMORIZE_DROP && rec.errors == 0;
    let detail = format!(
        "reconstruction {:.1}% (need >= {MEMORIZE_RECON}%), loss {:.3} -> {:.3} drop {:.1}% (need >= {:.0}%), {} epochs, {:.0}s",
        rec.rate(),
        before.total,
        after.total,
        100.0 * drop,
        100.0 * MEMORIZE_DROP,
        MEMORIZE_EPOCHS,
        t0.elapsed().as_secs_f64()
    );
    Memorized {
        model,
        outcome: outcome(pass, detail),
    }
}

#[derive(Default)]
struct GenerationAudit {
    samples: usize,
    invalid: usize,
    errors: usize,
    fallback_samples: usize,
    checked_steps: usize,
    violations: usize,
}

fn audit_generation(model: &Model, seed: u64) -> GenerationAudit {
    let per: Vec<GenerationAudit> = (0..GENERATIONS)
        .into_par_iter()
        .map(|i| {
            let mut a = GenerationAudit {
                samples: 1,
                ..Default::default()
            };
            match model.generate(&mut stream_rng(seed, i as u64), false) {
                Err(_) => a.errors = 1,
                Ok(d) => {
                    if !is_valid_molecule(d.graph()) {
                        a.invalid = 1;
                    }
                    a.fallback_samples = (d.fallback_count() > 0) as usize;
                    let mut before = 0;
                    for step in &d.output.typing.steps {
                        if step.fallbacks == before {
                            a.checked_steps += 1;
                            if !step.used.is_compatible_with(&step.target).unwrap_or(false) {
                                a.violations += 1;
                            }
                        }
                        before = step.fallbacks;
                    }
                }
            }
            a
        })
        .collect();
    per.into_iter().fold(GenerationAudit::default(), |mut acc, a| {
        acc.samples += a.samples;
        acc.invalid += a.invalid;
        acc.errors += a.errors;
        acc.fallback_samples += a.fallback_samples;
        acc.checked_steps += a.checked_steps;
        acc.violations += a.violations;
        acc
    })
}

fn validity(random: &GenerationAudit, trained: &GenerationAudit) -> Outcome {
    let pass = [random, trained].iter().all(|a| a.invalid == 0 && a.errors == 0);
    outcome(
        pass,
        format!(
            "random model {}/{} valid, trained model {}/{} valid",
            random.samples - random.invalid - random.errors,
            random.samples,
            trained.samples - trained.invalid - trained.errors,
            trained.samples
        ),
    )
}

fn conditioning(random: &GenerationAudit, trained: &GenerationAudit) -> Outcome {
    let violations = random.violations + trained.violations;
    let steps = random.checked_steps + trained.checked_steps;
    outcome(
        violations == 0 && steps > 0,
        format!(
            "{violations} violations over {steps} fallback-free typing steps; fallback rate random {:.2}% trained {:.2}%",
            100.0 * random.fallback_samples as f64 / random.samples as f64,
            100.0 * trained.fallback_samples as f64 / trained.samples as f64
        ),
    )
}

/// Brute-force admissibility: distinct, unbonded, and both bond-order sums
/// stay within valence.
fn oracle_allows(g: &MolecularGraph, vocab: &AtomVocabulary, v: usize, u: usize, order: u8) -> bool {
    if u == v || g.bond_between(v, u).is_some() {
        return false;
    }
    let fits = |a: usize| g.bond_order_sum(a) + order as u32 <= vocab.valence(g.atoms()[a].kind) as u32;
    fits(v) && fits(u)
}

fn mask_exactness() -> Outcome {
    let vocab = AtomVocabulary::qm9();
    let kinds = vocab.len();
    let mut graphs = 0usize;
    let mut checks = 0usize;
    let mut disagreements = 0usize;
    for n in 1..=MASK_MAX_ATOMS {
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect();
        for typing in 0..kinds.pow(n as u32) {
            let types: Vec<usize> = (0..n).map(|i| typing / kinds.pow(i as u32) % kinds).collect();
            'bonds: for code in 0..4usize.pow(pairs.len() as u32) {
                let mut g = MolecularGraph::new();
                for &k in &types {
                    g.add_atom(&vocab, k);
                }
                for (p, &(a, b)) in pairs.iter().enumerate() {
                    let order = code / 4usize.pow(p as u32) % 4;
                    // Over-valent assignments are refused here and skipped.
                    if order > 0 && g.add_bond(a, b, BondOrder::from_order(order as u8).unwrap()).is_err() {
                        continue 'bonds;
                    }
                }
                graphs += 1;
                for v in 0..n {
                    let mask = edge_mask(&g, v);
                    let mut any = false;
                    for u in 0..n {
                        for order in BondOrder::ALL {
                            let want = oracle_allows(&g, &vocab, v, u, order.order());
                            any |= want;
                            checks += 1;
                            disagreements += (mask.allows(u, order) != want) as usize;
                        }
                    }
                    let stop_want = !(any && g.bonds().is_empty());
                    checks += 1;
                    disagreements += (mask.stop != stop_want) as usize;
                }
            }
        }
    }
    outcome(
        disagreements == 0,
        format!("{disagreements} disagreements over {checks} decisions in {graphs} partial graphs"),
    )
}

fn gradients() -> Outcome {
    let t0 = Instant::now();
    let mut worst = 0.0f64;
    let mut failing = Vec::new();
    let cases = gradcheck::primitives().into_iter().chain(gradcheck::composites());
    let mut count = 0;
    for (name, case) in cases {
        count += 1;
        let err = (0..FD_TRIALS).map(case).fold(0.0, f64::max);
        worst = worst.max(err);
        if !(err <= FD_TOLERANCE) {
            failing.push(format!("{name} {err:.2e}"));
        }
    }
    outcome(
        failing.is_empty(),
        format!(
            "{count} cases x {FD_TRIALS} trials, worst relative error {worst:.2e} (tolerance {FD_TOLERANCE:.0e}), {:.1}s{}",
            t0.elapsed().as_secs_f64(),
            if failing.is_empty() { String::new() } else { format!(", failing: {failing:?}") }
        ),
    )
}

fn teacher_identity(corpus: &Dataset) -> Outcome {
    let vocab = AtomVocabulary::qm9();
    let hist = HistogramDistribution::from_corpus(corpus.graphs(), vocab.max_valence()).unwrap();
    let mut mismatches = 0;
    let mut runs = 0;
    for draw in 0..TEACHER_DRAWS {
        let mut model = Model::new(toy_config(), vocab.clone(), hist.clone(), 1000 + draw).unwrap();
        gradcheck::randomize(&mut model.params, 0.3 + draw as f64, draw);
        let bad: usize = corpus
            .records
            .par_iter()
            .enumerate()
            .map(|(i, r)| {
                let g = &r.graph;
                let mut rng = stream_rng(draw, i as u64);
                let traj = build_trajectory(g, model.nu(), &mut rng).unwrap();
                let z = sample_prior(g.len(), model.config.latent_dim, &mut rng);
                let mut tape = ccgvae::autodiff::Tape::new();
                let zv = tape.constant(z);
                let mode = DecodeMode::Teacher {
                    types: &traj.types,
                    plan: &traj.plan,
                };
                let out = model
                    .decoder
                    .decode(&mut tape, &model.params, &model.vocab, zv, &traj.alpha0, mode, &mut rng, false);
                match out {
                    Ok(o) => {
                        let same_raw = o.raw.atoms().iter().map(|a| a.kind).eq(g.atoms().iter().map(|a| a.kind))
                            && o.raw.bond_set() == g.bond_set();
                        !(same_raw && o.graph.same_labelled_graph(g)) as usize
                    }
                    Err(_) => 1,
                }
            })
            .sum();
        mismatches += bad;
        runs += corpus.len();
    }
    outcome(
        mismatches == 0,
        format!("{mismatches} mismatches over {runs} teacher-forced decodes ({} molecules x {TEACHER_DRAWS} parameter draws)", corpus.len()),
    )
}

fn histogram_fidelity() -> Outcome {
    let vocab = AtomVocabulary::qm9();
    let nu = vocab.max_valence();
    let methane = parse_smiles("C", &vocab).unwrap();
    let ethanol = parse_smiles("CCO", &vocab).unwrap();
    let mut lines = Vec::new();
    let mut pass = true;
    for with_h in [false, true] {
        let a = methane.valence_histogram(nu, with_h);
        let b = ethanol.valence_histogram(nu, with_h);
        let forward = a.is_compatible_with(&b).unwrap();
        let reverse = b.is_compatible_with(&a).unwrap();
        pass &= forward && !reverse;
        lines.push(format!(
            "{}: methane {a} vs ethanol {b} forward={forward} reverse={reverse}",
            if with_h { "with H" } else { "heavy" }
        ));
    }
    outcome(pass, lines.join("; "))
}

fn smiles_round_trip(corpus: &Dataset) -> Outcome {
    let t0 = Instant::now();
    let vocab = AtomVocabulary::qm9();
    let failures: usize = corpus
        .records
        .par_iter()
        .enumerate()
        .map(|(i, r)| {
            let g = &r.graph;
            let written = write_smiles(g, &vocab).unwrap();
            let again = parse_smiles(&written, &vocab).unwrap();
            let mut bad = (again.canonical_form() != g.canonical_form()) as usize;
            let mut rng = stream_rng(42, i as u64);
            let mut strings = HashSet::new();
            for _ in 0..PERMUTATIONS {
                let mut perm: Vec<usize> = (0..g.len()).collect();
                perm.shuffle(&mut rng);
                strings.insert(write_smiles(&g.permuted(&perm), &vocab).unwrap());
            }
            bad += (strings.len() != 1 || !strings.contains(&written)) as usize;
            bad
        })
        .sum();
    outcome(
        failures == 0,
        format!(
            "{failures} failures over {} molecules x {PERMUTATIONS} permutations, {:.1}s",
            corpus.len(),
            t0.elapsed().as_secs_f64()
        ),
    )
}

/// Pearson χ² with bins of expected count below five pooled.
fn chi_square_p(observed: &[u64], weights: &[f64]) -> f64 {
    let total: u64 = observed.iter().sum();
    let wsum: f64 = weights.iter().sum();
    let mut bins: Vec<(f64, f64)> = Vec::new();
    let mut pool = (0.0, 0.0);
    for (&o, &w) in observed.iter().zip(weights) {
        let e = total as f64 * w / wsum;
        if e < 5.0 {
            pool.0 += o as f64;
            pool.1 += e;
        } else {
            bins.push((o as f64, e));
        }
    }
    if pool.1 > 0.0 {
        bins.push(pool);
    }
    let stat: f64 = bins.iter().map(|(o, e)| (o - e).powi(2) / e).sum();
    let dof = (bins.len() - 1).max(1) as f64;
    1.0 - ChiSquared::new(dof).unwrap().cdf(stat)
}

fn sampling_statistics(corpus: &Dataset) -> Outcome {
    let vocab = AtomVocabulary::qm9();
    let dist = HistogramDistribution::from_corpus(corpus.graphs(), vocab.max_valence()).unwrap();
    let index: BTreeMap<&ValenceHistogram, usize> = dist.entries().iter().enumerate().map(|(i, (h, _))| (h, i)).collect();
    let weights: Vec<f64> = dist.entries().iter().map(|(_, w)| *w as f64).collect();

    let mut rng = stream_rng(9, 0);
    let mut counts = vec![0u64; dist.len()];
    for _ in 0..SAMPLING_DRAWS {
        let (h, m) = dist.sample_initial(&mut rng);
        assert_eq!(m, h.total() as usize);
        counts[index[&h]] += 1;
    }
    let p_initial = chi_square_p(&counts, &weights);

    // One nitrogen and one oxygen placed, at least eight atoms required.
    let used = ValenceHistogram::from_counts(vec![0, 1, 1, 0]);
    let min_atoms = 8;
    let restricted: Vec<f64> = dist
        .entries()
        .iter()
        .map(|(h, w)| {
            if h.total() as usize >= min_atoms && used.is_compatible_with(h).unwrap() {
                *w as f64
            } else {
                0.0
            }
        })
        .collect();
    let support: Vec<usize> = (0..dist.len()).filter(|&i| restricted[i] > 0.0).collect();
    let mut counts = vec![0u64; dist.len()];
    let mut outside = 0;
    let mut fallbacks = 0;
    for _ in 0..SAMPLING_DRAWS {
        let d = dist.sample_compatible(&used, min_atoms, &mut rng).unwrap();
        fallbacks += d.fallback as usize;
        let i = index[&d.histogram];
        if restricted[i] == 0.0 {
            outside += 1;
        }
        counts[i] += 1;
    }
    let sub_counts: Vec<u64> = support.iter().map(|&i| counts[i]).collect();
    let sub_weights: Vec<f64> = support.iter().map(|&i| restricted[i]).collect();
    let p_compatible = chi_square_p(&sub_counts, &sub_weights);
    outcome(
        p_initial > CHI2_P && p_compatible > CHI2_P && outside == 0 && fallbacks == 0 && support.len() > 1,
        format!(
            "sample_initial p={p_initial:.3} over {} histograms; sample_compatible p={p_compatible:.3} over {} eligible, {outside} outside support (need p > {CHI2_P})",
            dist.len(),
            support.len()
        ),
    )
}

fn latent_monotonicity(model: &Model) -> Outcome {
    let mut worst_drop = 0.0f64;
    let mut rejected = 0;
    let mut gain = 0.0;
    for s in 0..OPT_STARTS {
        let mut rng = stream_rng(77, s);
        let (_, m) = model.histograms.sample_initial(&mut rng);
        let z = sample_prior(m, model.config.latent_dim, &mut rng);
        let path = optimize_latent(model, &z, Direction::Ascend, OPT_STEPS, OPT_STEP_SIZE).unwrap();
        for &p in &path.predictions {
            worst_drop = worst_drop.max(path.initial() - p);
        }
        rejected += path.rejected_steps;
        gain += path.last() - path.initial();
    }
    outcome(
        worst_drop <= MONOTONE_TOLERANCE,
        format!(
            "worst drop below start {worst_drop:.2e} (tolerance {MONOTONE_TOLERANCE:.0e}) over {OPT_STARTS} starts x {OPT_STEPS} steps; mean gain {:.4}, {rejected} rejected steps",
            gain / OPT_STARTS as f64
        ),
    )
}

fn main() {
    let t0 = Instant::now();
    let corpus = toy_corpus();
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut report = |n: usize, name: &'static str, check: &dyn Fn() -> Outcome| {
        let o = std::panic::catch_unwind(std::panic::AssertUnwindSafe(check))
            .unwrap_or_else(|_| outcome(false, "panicked".into()));
        println!("criterion {n:>2} {:<28} {}  {}", name, if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((n, name, o));
    };

    let memorized = memorize(&corpus);
    let random_model = Model::new(toy_config(), AtomVocabulary::qm9(), memorized.model.histograms.clone(), 2024).unwrap();
    let random = audit_generation(&random_model, 1);
    let trained = audit_generation(&memorized.model, 2);

    report(1, "validity", &|| validity(&random, &trained));
    report(2, "histogram conditioning", &|| conditioning(&random, &trained));
    report(3, "mask exactness", &mask_exactness);
    report(4, "gradient correctness", &gradients);
    report(5, "teacher-forcing identity", &|| teacher_identity(&corpus));
    report(6, "toy memorization", &|| memorized.outcome.clone());
    report(7, "histogram definitions", &histogram_fidelity);
    report(8, "SMILES round trip", &|| smiles_round_trip(&corpus));
    report(9, "sampling statistics", &|| sampling_statistics(&corpus));
    report(10, "latent optimization", &|| latent_monotonicity(&memorized.model));

    let failed: Vec<_> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!(
        "acceptance: {}/{} passed in {:.0}s",
        results.len() - failed.len(),
        results.len(),
        t0.elapsed().as_secs_f64()
    );
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
