//! Histogram-conditioned atom typing.
//!
//! Atoms are typed one at a time. At step `t` the difference histogram
//! `α^d_t = α_{t−1} − α^u_{t−1}` says which valences are still owed; a type is
//! admissible only if its valence has a positive entry there. The network
//! sees the atom's latent point together with both histograms scaled by `m`.

use rand::Rng;

use crate::autodiff::{Linear, ParamId, ParamStore, Tape, Tensor, Var};
use crate::chemgraph::AtomVocabulary;
use crate::histogram::{HistogramDistribution, ValenceHistogram};
use crate::model::ModelError;
use crate::util::sample_weighted;

/// How the next reference histogram and the atom types are obtained.
#[derive(Debug, Clone, Copy)]
pub enum TypingMode<'a> {
    /// Ground-truth types are consumed; the reference histogram stays fixed.
    Teacher(&'a [usize]),
    /// Types are sampled; the reference histogram stays fixed.
    Reconstruct,
    /// Types are sampled; the reference histogram is redrawn after each atom.
    Generate(&'a HistogramDistribution),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TypingStep {
    /// 1-based step index.
    pub t: usize,
    /// `α_{t−1}`
    pub target_before: ValenceHistogram,
    /// `α^u_{t−1}`
    pub used_before: ValenceHistogram,
    /// `α^d_t`
    pub diff: ValenceHistogram,
    pub kind: usize,
    /// `α^u_t`
    pub used: ValenceHistogram,
    /// `α_t`
    pub target: ValenceHistogram,
    /// Fallbacks so far, including this step.
    pub fallbacks: usize,
}

#[derive(Debug, Clone)]
pub struct TypingOutcome {
    pub types: Vec<usize>,
    pub steps: Vec<TypingStep>,
    pub fallback_count: usize,
    /// Summed type cross-entropy (teacher mode only).
    pub loss: Option<Var>,
}

impl TypingOutcome {
    pub fn final_target(&self) -> Option<&ValenceHistogram> {
        self.steps.last().map(|s| &s.target)
    }
}

/// The `K` and `F` networks.
#[derive(Debug, Clone)]
pub struct TypingNet {
    /// `[z_t, α^d/m, α^u/m] → e_t`, followed by tanh.
    pub k: Linear,
    /// `[z_t, e_t] → type logits`.
    pub f: Linear,
    pub nu: usize,
    pub latent_dim: usize,
}

/// Type mask: allowed iff `diff[valence(type)] > 0`.
pub fn type_mask(vocab: &AtomVocabulary, diff: &ValenceHistogram) -> Vec<bool> {
    (0..vocab.len())
        .map(|k| diff.get(vocab.valence(k) as usize) > 0)
        .collect()
}

impl TypingNet {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        latent_dim: usize,
        hidden_dim: usize,
        vocab_size: usize,
        nu: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            k: Linear::new(store, "typing.k", latent_dim + 2 * nu, hidden_dim, true, rng),
            f: Linear::new(store, "typing.f", latent_dim + hidden_dim, vocab_size, true, rng),
            nu,
            latent_dim,
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = self.k.params();
        p.extend(self.f.params());
        p
    }

    /// `R_t = [z_t, tanh(K[z_t, α^d/m, α^u/m])]`
    pub fn representation(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        z_t: Var,
        diff: &ValenceHistogram,
        used: &ValenceHistogram,
        m: usize,
    ) -> Result<Var, ModelError> {
        let scale = 1.0 / m.max(1) as f64;
        let hist: Vec<f64> = diff
            .counts()
            .iter()
            .chain(used.counts())
            .map(|&c| c as f64 * scale)
            .collect();
        let hist = tape.constant(Tensor::row(hist));
        let x = tape.concat_cols(&[z_t, hist])?;
        let e = self.k.forward(tape, store, x)?;
        let e = tape.tanh(e);
        Ok(tape.concat_cols(&[z_t, e])?)
    }

    pub fn logits(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        z_t: Var,
        diff: &ValenceHistogram,
        used: &ValenceHistogram,
        m: usize,
    ) -> Result<Var, ModelError> {
        let r = self.representation(tape, store, z_t, diff, used, m)?;
        Ok(self.f.forward(tape, store, r)?)
    }

    /// Types every row of `z` in order, starting from reference `alpha0`.
    pub fn assign<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        vocab: &AtomVocabulary,
        z: Var,
        alpha0: &ValenceHistogram,
        mode: TypingMode<'_>,
        rng: &mut R,
    ) -> Result<TypingOutcome, ModelError> {
        let m = tape.value(z).rows();
        if alpha0.nu() != self.nu {
            return Err(ModelError::Shape(format!(
                "reference histogram has nu={} but the model expects {}",
                alpha0.nu(),
                self.nu
            )));
        }
        if let TypingMode::Teacher(types) = mode {
            if types.len() != m {
                return Err(ModelError::Teacher(format!(
                    "{} teacher types for {m} latent rows",
                    types.len()
                )));
            }
        }
        let mut target = alpha0.clone();
        let mut used = ValenceHistogram::zeros(self.nu);
        let mut fallbacks = 0usize;
        let mut types = Vec::with_capacity(m);
        let mut steps = Vec::with_capacity(m);
        let mut loss: Option<Var> = None;

        for t in 0..m {
            // After a fallback the target may not dominate `used`.
            let diff = target.saturating_subtract(&used)?;
            let mut mask = type_mask(vocab, &diff);
            if !mask.iter().any(|&b| b) {
                fallbacks += 1;
                mask = vec![true; vocab.len()];
            }
            let z_t = tape.select_rows(z, &[t])?;
            let logits = self.logits(tape, store, z_t, &diff, &used, m)?;
            let probs = tape.masked_softmax(logits, &mask)?;
            let kind = match mode {
                TypingMode::Teacher(teacher) => {
                    let kind = teacher[t];
                    if kind >= vocab.len() || !mask[kind] {
                        return Err(ModelError::Teacher(format!(
                            "teacher type {kind} at step {} is masked by difference histogram {diff}",
                            t + 1
                        )));
                    }
                    let ce = tape.cross_entropy(probs, kind)?;
                    loss = Some(match loss {
                        Some(l) => tape.add(l, ce)?,
                        None => ce,
                    });
                    kind
                }
                _ => sample_weighted(tape.value(probs).data(), rng).ok_or(ModelError::Shape(
                    "type distribution has no mass".into(),
                ))?,
            };
            let used_before = used.clone();
            let target_before = target.clone();
            used = used.with_valence(vocab.valence(kind) as usize)?;
            if let TypingMode::Generate(dist) = mode {
                let draw = dist.sample_compatible(&used, m, rng)?;
                if draw.fallback {
                    fallbacks += 1;
                }
                target = draw.histogram;
            }
            types.push(kind);
            steps.push(TypingStep {
                t: t + 1,
                target_before,
                used_before,
                diff,
                kind,
                used: used.clone(),
                target: target.clone(),
                fallbacks,
            });
        }
        Ok(TypingOutcome {
            types,
            steps,
            fallback_count: fallbacks,
            loss,
        })
    }
}
