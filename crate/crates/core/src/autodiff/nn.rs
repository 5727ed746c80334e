//! Layers assembled from tape primitives.

use rand::Rng;

use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use super::AutodiffError;

/// `x W + b` on row-major batches.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub inputs: usize,
    pub outputs: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        inputs: usize,
        outputs: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let weight = store.add_glorot(format!("{name}.weight"), inputs, outputs, rng);
        let bias = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(&[1, outputs])));
        Self {
            weight,
            bias,
            inputs,
            outputs,
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var, AutodiffError> {
        let w = tape.param(store, self.weight);
        let y = tape.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = tape.param(store, b);
                tape.add_row(y, b)
            }
            None => Ok(y),
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        std::iter::once(self.weight).chain(self.bias).collect()
    }
}

/// One hidden ReLU layer followed by a linear output layer.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub hidden: Linear,
    pub output: Linear,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        inputs: usize,
        hidden: usize,
        outputs: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            hidden: Linear::new(store, &format!("{name}.hidden"), inputs, hidden, true, rng),
            output: Linear::new(store, &format!("{name}.output"), hidden, outputs, true, rng),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var, AutodiffError> {
        let h = self.hidden.forward(tape, store, x)?;
        let h = tape.relu(h);
        self.output.forward(tape, store, h)
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = self.hidden.params();
        p.extend(self.output.params());
        p
    }
}

/// Gated recurrent unit over a batch of rows:
///
/// ```text
/// z  = σ(x Wz + h Uz + bz)
/// r  = σ(x Wr + h Ur + br)
/// h̃  = tanh(x Wh + (r ⊙ h) Uh + bh)
/// h' = (1 − z) ⊙ h + z ⊙ h̃
/// ```
#[derive(Debug, Clone)]
pub struct GruCell {
    pub update_x: Linear,
    pub update_h: Linear,
    pub reset_x: Linear,
    pub reset_h: Linear,
    pub cand_x: Linear,
    pub cand_h: Linear,
    pub state_dim: usize,
    pub input_dim: usize,
}

impl GruCell {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input_dim: usize,
        state_dim: usize,
        rng: &mut R,
    ) -> Self {
        let mut lin = |part: &str, inputs: usize, bias: bool| {
            Linear::new(store, &format!("{name}.{part}"), inputs, state_dim, bias, rng)
        };
        Self {
            update_x: lin("update_x", input_dim, true),
            update_h: lin("update_h", state_dim, false),
            reset_x: lin("reset_x", input_dim, true),
            reset_h: lin("reset_h", state_dim, false),
            cand_x: lin("cand_x", input_dim, true),
            cand_h: lin("cand_h", state_dim, false),
            state_dim,
            input_dim,
        }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        state: Var,
        input: Var,
    ) -> Result<Var, AutodiffError> {
        let (s, i) = (tape.value(state), tape.value(input));
        if s.cols() != self.state_dim || i.cols() != self.input_dim || s.rows() != i.rows() {
            return Err(AutodiffError::ShapeMismatch {
                op: "gru",
                left: s.shape().to_vec(),
                right: i.shape().to_vec(),
            });
        }
        let zx = self.update_x.forward(tape, store, input)?;
        let zh = self.update_h.forward(tape, store, state)?;
        let z = tape.add(zx, zh)?;
        let z = tape.sigmoid(z);

        let rx = self.reset_x.forward(tape, store, input)?;
        let rh = self.reset_h.forward(tape, store, state)?;
        let r = tape.add(rx, rh)?;
        let r = tape.sigmoid(r);

        let gated = tape.mul(r, state)?;
        let cx = self.cand_x.forward(tape, store, input)?;
        let ch = self.cand_h.forward(tape, store, gated)?;
        let c = tape.add(cx, ch)?;
        let candidate = tape.tanh(c);

        // h + z ⊙ (h̃ − h)
        let delta = tape.sub(candidate, state)?;
        let step = tape.mul(z, delta)?;
        tape.add(state, step)
    }

    pub fn params(&self) -> Vec<ParamId> {
        [
            &self.update_x,
            &self.update_h,
            &self.reset_x,
            &self.reset_h,
            &self.cand_x,
            &self.cand_h,
        ]
        .iter()
        .flat_map(|l| l.params())
        .collect()
    }
}

/// `(prediction − target)²` summed over elements.
pub fn squared_error(tape: &mut Tape, prediction: Var, target: &Tensor) -> Result<Var, AutodiffError> {
    let t = tape.constant(target.clone());
    let d = tape.sub(prediction, t)?;
    let sq = tape.mul(d, d)?;
    Ok(tape.sum(sq))
}
