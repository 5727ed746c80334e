//! Finite-difference cases shared by the gradient tests and the acceptance run.

use ccgvae::autodiff::{squared_error, GruCell, Linear, Mlp, ParamStore, Tape, Tensor, Var};
use ccgvae::decoder::DecodeMode;
use ccgvae::model::{Model, ModelConfig};
use ccgvae::training::{build_trajectory, compute_loss, LossWeights};
use ccgvae::util::stream_rng;
use ccgvae::{parse_smiles, AtomVocabulary, HistogramDistribution, MolecularGraph, ValenceHistogram};
use rand::Rng;

use super::{all, gradient_error, project, random_tensor, sampled, H_KINKED, H_SMOOTH};

pub type Case = fn(u64) -> f64;

/// Molecules covering single, double and triple bonds and a ring.
pub const PROBES: [&str; 3] = ["C#CC(=O)N", "C1=CC(O)CN1", "OC(F)C#N"];

pub fn probe(seed: u64) -> MolecularGraph {
    parse_smiles(PROBES[seed as usize % PROBES.len()], &AtomVocabulary::qm9()).unwrap()
}

pub fn randomize(store: &mut ParamStore, scale: f64, seed: u64) {
    let mut rng = stream_rng(seed, 3);
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let shape = store.value(id).shape().to_vec();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-scale..scale)).collect();
        store.set_value(id, Tensor::new(shape, data).unwrap()).unwrap();
    }
}

pub fn tiny_model(seed: u64) -> Model {
    let vocab = AtomVocabulary::qm9();
    let graphs: Vec<_> = PROBES.iter().map(|s| parse_smiles(s, &vocab).unwrap()).collect();
    let hist = HistogramDistribution::from_corpus(graphs.iter(), vocab.max_valence()).unwrap();
    let cfg = ModelConfig {
        latent_dim: 4,
        hidden_dim: 3,
        encoder_steps: 2,
        decoder_steps: 2,
        edge_hidden: 6,
        property_hidden: 5,
    };
    let mut m = Model::new(cfg, vocab, hist, seed).unwrap();
    randomize(&mut m.params, 0.5, seed);
    m
}

fn unary(seed: u64, h: f64, positive: bool, op: fn(&mut Tape, Var) -> Var) -> f64 {
    let mut x = random_tensor(3, 4, 2.0, seed);
    if positive {
        x = x.map(|v| v.abs() + 0.2);
    }
    gradient_error(&mut ParamStore::new(), &[], &[x], h, |t, _, v| {
        let y = op(t, v[0]);
        project(t, y, seed)
    })
}

fn binary(seed: u64, op: fn(&mut Tape, Var, Var) -> Var) -> f64 {
    let a = random_tensor(3, 4, 1.0, seed);
    let b = random_tensor(3, 4, 1.0, seed + 100);
    gradient_error(&mut ParamStore::new(), &[], &[a, b], H_SMOOTH, |t, _, v| {
        let y = op(t, v[0], v[1]);
        project(t, y, seed)
    })
}

pub fn matmul(seed: u64) -> f64 {
    let a = random_tensor(3, 4, 1.0, seed);
    let b = random_tensor(4, 2, 1.0, seed + 1);
    gradient_error(&mut ParamStore::new(), &[], &[a, b], H_SMOOTH, |t, _, v| {
        let y = t.matmul(v[0], v[1]).unwrap();
        project(t, y, seed)
    })
}

pub fn add(seed: u64) -> f64 {
    binary(seed, |t, a, b| t.add(a, b).unwrap())
}

pub fn sub(seed: u64) -> f64 {
    binary(seed, |t, a, b| t.sub(a, b).unwrap())
}

pub fn mul(seed: u64) -> f64 {
    binary(seed, |t, a, b| t.mul(a, b).unwrap())
}

pub fn add_row(seed: u64) -> f64 {
    let a = random_tensor(3, 4, 1.0, seed);
    let b = random_tensor(1, 4, 1.0, seed + 1);
    gradient_error(&mut ParamStore::new(), &[], &[a, b], H_SMOOTH, |t, _, v| {
        let y = t.add_row(v[0], v[1]).unwrap();
        project(t, y, seed)
    })
}

pub fn scale(seed: u64) -> f64 {
    unary(seed, H_SMOOTH, false, |t, x| t.scale(x, -1.7))
}

pub fn concat_cols(seed: u64) -> f64 {
    let a = random_tensor(3, 2, 1.0, seed);
    let b = random_tensor(3, 3, 1.0, seed + 1);
    gradient_error(&mut ParamStore::new(), &[], &[a, b], H_SMOOTH, |t, _, v| {
        let y = t.concat_cols(&[v[0], v[1], v[0]]).unwrap();
        project(t, y, seed)
    })
}

pub fn concat_rows(seed: u64) -> f64 {
    let a = random_tensor(2, 3, 1.0, seed);
    let b = random_tensor(1, 3, 1.0, seed + 1);
    gradient_error(&mut ParamStore::new(), &[], &[a, b], H_SMOOTH, |t, _, v| {
        let y = t.concat_rows(&[v[1], v[0], v[1]]).unwrap();
        project(t, y, seed)
    })
}

pub fn slice_cols(seed: u64) -> f64 {
    unary(seed, H_SMOOTH, false, |t, x| t.slice_cols(x, 1, 2).unwrap())
}

pub fn reshape(seed: u64) -> f64 {
    unary(seed, H_SMOOTH, false, |t, x| t.reshape(x, &[2, 6]).unwrap())
}

pub fn select_rows(seed: u64) -> f64 {
    unary(seed, H_SMOOTH, false, |t, x| t.select_rows(x, &[2, 0, 2, 1, 2]).unwrap())
}

pub fn repeat_rows(seed: u64) -> f64 {
    unary(seed, H_SMOOTH, false, |t, x| {
        let r = t.select_rows(x, &[1]).unwrap();
        t.repeat_rows(r, 4).unwrap()
    })
}

pub fn mean_rows(seed: u64) -> f64 {
    unary(seed, H_SMOOTH, false, |t, x| t.mean_rows(x).unwrap())
}

pub fn sum(seed: u64) -> f64 {
    unary(seed, H_SMOOTH, false, |t, x| {
        let sq = t.mul(x, x).unwrap();
        t.sum(sq)
    })
}

pub fn sigmoid(seed: u64) -> f64 {
    unary(seed, H_SMOOTH, false, |t, x| t.sigmoid(x))
}

pub fn tanh(seed: u64) -> f64 {
    unary(seed, H_SMOOTH, false, |t, x| t.tanh(x))
}

pub fn relu(seed: u64) -> f64 {
    unary(seed, H_KINKED, false, |t, x| t.relu(x))
}

pub fn exp(seed: u64) -> f64 {
    unary(seed, H_SMOOTH, false, |t, x| t.exp(x))
}

pub fn log(seed: u64) -> f64 {
    unary(seed, H_SMOOTH, true, |t, x| t.log(x))
}

fn softmax_mask(seed: u64) -> Vec<bool> {
    let mut rng = stream_rng(seed, 21);
    let mut mask: Vec<bool> = (0..12).map(|_| rng.random_bool(0.7)).collect();
    for r in 0..3 {
        mask[r * 4 + r] = true;
    }
    mask
}

pub fn masked_softmax(seed: u64) -> f64 {
    let x = random_tensor(3, 4, 2.0, seed);
    let mask = softmax_mask(seed);
    gradient_error(&mut ParamStore::new(), &[], &[x], H_SMOOTH, |t, _, v| {
        let y = t.masked_softmax(v[0], &mask).unwrap();
        project(t, y, seed)
    })
}

pub fn cross_entropy(seed: u64) -> f64 {
    let x = random_tensor(1, 5, 2.0, seed);
    let mask = [true, false, true, true, true];
    let target = [0, 2, 3, 4][seed as usize % 4];
    gradient_error(&mut ParamStore::new(), &[], &[x], H_SMOOTH, |t, _, v| {
        let p = t.masked_softmax(v[0], &mask).unwrap();
        t.cross_entropy(p, target).unwrap()
    })
}

pub fn gaussian_kl(seed: u64) -> f64 {
    let mu = random_tensor(3, 4, 1.0, seed);
    let lv = random_tensor(3, 4, 1.0, seed + 1);
    gradient_error(&mut ParamStore::new(), &[], &[mu, lv], H_SMOOTH, |t, _, v| {
        t.gaussian_kl(v[0], v[1]).unwrap()
    })
}

pub fn neighbor_sum(seed: u64) -> f64 {
    let x = random_tensor(4, 3, 1.0, seed);
    let nb = vec![vec![1, 2], vec![0], vec![0, 3], vec![]];
    gradient_error(&mut ParamStore::new(), &[], &[x], H_SMOOTH, |t, _, v| {
        let y = t.neighbor_sum(v[0], &nb).unwrap();
        project(t, y, seed)
    })
}

pub fn squared_error_loss(seed: u64) -> f64 {
    let x = random_tensor(2, 3, 1.0, seed);
    let target = random_tensor(2, 3, 1.0, seed + 5);
    gradient_error(&mut ParamStore::new(), &[], &[x], H_SMOOTH, |t, _, v| {
        squared_error(t, v[0], &target).unwrap()
    })
}

fn histograms(seed: u64) -> (ValenceHistogram, ValenceHistogram) {
    let mut rng = stream_rng(seed, 31);
    let mut c = || (0..4).map(|_| rng.random_range(0..4)).collect::<Vec<u32>>();
    (ValenceHistogram::from_counts(c()), ValenceHistogram::from_counts(c()))
}

/// `K`: the histogram-conditioned typing embedding.
pub fn typing_k(seed: u64) -> f64 {
    let mut m = tiny_model(seed);
    let net = m.decoder.typing.clone();
    let z = random_tensor(1, 4, 1.0, seed);
    let (diff, used) = histograms(seed);
    gradient_error(&mut m.params, &all(net.k.params()), &[z], H_SMOOTH, |t, s, v| {
        let r = net.representation(t, s, v[0], &diff, &used, 7).unwrap();
        project(t, r, seed)
    })
}

/// `F`: type logits.
pub fn typing_f(seed: u64) -> f64 {
    let mut m = tiny_model(seed);
    let net = m.decoder.typing.clone();
    let z = random_tensor(1, 4, 1.0, seed);
    let (diff, used) = histograms(seed);
    gradient_error(&mut m.params, &all(net.params()), &[z], H_SMOOTH, |t, s, v| {
        let l = net.logits(t, s, v[0], &diff, &used, 7).unwrap();
        let mask = vec![true; 4];
        let p = t.masked_softmax(l, &mask).unwrap();
        t.cross_entropy(p, seed as usize % 4).unwrap()
    })
}

fn mlp_case(seed: u64, outputs: usize) -> f64 {
    let mut store = ParamStore::new();
    let mut rng = stream_rng(seed, 1);
    let mlp = Mlp::new(&mut store, "mlp", 39, 6, outputs, &mut rng);
    randomize(&mut store, 0.5, seed);
    let x = random_tensor(3, 39, 1.0, seed);
    gradient_error(&mut store, &all(mlp.params()), &[x], H_KINKED, |t, s, v| {
        let y = mlp.forward(t, s, v[0]).unwrap();
        project(t, y, seed)
    })
}

/// `C`: edge existence scores.
pub fn existence_mlp(seed: u64) -> f64 {
    mlp_case(seed, 1)
}

/// `L`: bond-order logits.
pub fn bond_type_mlp(seed: u64) -> f64 {
    mlp_case(seed, 3)
}

fn typed_neighbors(g: &MolecularGraph) -> [Vec<Vec<usize>>; 3] {
    let mut lists: [Vec<Vec<usize>>; 3] = std::array::from_fn(|_| vec![Vec::new(); g.len()]);
    for b in g.bonds() {
        lists[b.order.index()][b.a].push(b.b);
        lists[b.order.index()][b.b].push(b.a);
    }
    lists
}

/// `E_l` for each bond order: per-type transform then neighbour sum.
pub fn edge_messages(seed: u64) -> f64 {
    let g = probe(0);
    let nb = typed_neighbors(&g);
    let mut store = ParamStore::new();
    let mut rng = stream_rng(seed, 2);
    let e: Vec<Linear> = (0..3)
        .map(|l| Linear::new(&mut store, &format!("e{l}"), 3, 3, false, &mut rng))
        .collect();
    let x = random_tensor(g.len(), 3, 1.0, seed);
    let ids: Vec<_> = e.iter().flat_map(Linear::params).collect();
    gradient_error(&mut store, &all(ids), &[x], H_SMOOTH, |t, s, v| {
        let mut total: Option<Var> = None;
        for (l, lin) in e.iter().enumerate() {
            let p = lin.forward(t, s, v[0]).unwrap();
            let y = t.neighbor_sum(p, &nb[l]).unwrap();
            total = Some(match total {
                Some(acc) => t.add(acc, y).unwrap(),
                None => y,
            });
        }
        project(t, total.unwrap(), seed)
    })
}

pub fn gru(seed: u64) -> f64 {
    let mut store = ParamStore::new();
    let mut rng = stream_rng(seed, 4);
    let cell = GruCell::new(&mut store, "gru", 5, 3, &mut rng);
    randomize(&mut store, 0.7, seed);
    let h = random_tensor(2, 3, 1.0, seed);
    let x = random_tensor(2, 5, 1.0, seed + 1);
    gradient_error(&mut store, &all(cell.params()), &[h, x], H_SMOOTH, |t, s, v| {
        let y = cell.forward(t, s, v[0], v[1]).unwrap();
        project(t, y, seed)
    })
}

/// Encoder propagation plus the `μ` and `log σ²` heads.
pub fn encoder_heads(seed: u64) -> f64 {
    let mut m = tiny_model(seed);
    let enc = m.encoder.clone();
    let g = probe(seed);
    gradient_error(&mut m.params, &all(enc.params()), &[], H_SMOOTH, |t, s, _| {
        let e = enc.encode(t, s, &g).unwrap();
        let a = project(t, e.mu, seed);
        let b = project(t, e.log_var, seed + 9);
        t.add(a, b).unwrap()
    })
}

/// `O`: property regressor on the mean latent row.
pub fn property(seed: u64) -> f64 {
    let mut m = tiny_model(seed);
    let ids = m.property.params();
    let z = random_tensor(3, 4, 1.0, seed);
    let prop = m.property.clone();
    gradient_error(&mut m.params, &all(ids), &[z], H_KINKED, |t, s, v| {
        let mean = t.mean_rows(v[0]).unwrap();
        let y = prop.forward(t, s, mean).unwrap();
        t.mul(y, y).unwrap()
    })
}

/// Teacher-forced decoder cross-entropy with respect to `z` and all decoder
/// parameters, which exercises scoring, masking and the rerun propagation.
pub fn teacher_decoder(seed: u64) -> f64 {
    let mut m = tiny_model(seed);
    let g = probe(seed);
    let traj = build_trajectory(&g, m.nu(), &mut stream_rng(seed, 5)).unwrap();
    let z = random_tensor(g.len(), 4, 1.0, seed);
    let dec = m.decoder.clone();
    let vocab = m.vocab.clone();
    let ids = sampled(&m.params, dec.params(), 4, seed);
    gradient_error(&mut m.params, &ids, &[z], H_KINKED, |t, s, v| {
        let mode = DecodeMode::Teacher {
            types: &traj.types,
            plan: &traj.plan,
        };
        let mut rng = stream_rng(seed, 6);
        let out = dec.decode(t, s, &vocab, v[0], &traj.alpha0, mode, &mut rng, false).unwrap();
        out.loss.unwrap()
    })
}

/// Whole training objective with the reparameterisation noise held fixed.
pub fn training_loss(seed: u64) -> f64 {
    let model = tiny_model(seed);
    let g = probe(seed);
    let traj = build_trajectory(&g, model.nu(), &mut stream_rng(seed, 5)).unwrap();
    let ids = sampled(&model.params, model.params.ids().collect::<Vec<_>>(), 2, seed);
    let mut store = model.params.clone();
    let weights = LossWeights::default();
    gradient_error(&mut store, &ids, &[], H_KINKED, |t, s, _| {
        let mut local = model.clone();
        local.params = s.clone();
        let mut rng = stream_rng(seed, 8);
        compute_loss(&local, t, &g, Some(0.4), &traj, weights, &mut rng).unwrap().total
    })
}

pub fn primitives() -> Vec<(&'static str, Case)> {
    vec![
        ("matmul", matmul),
        ("add", add),
        ("sub", sub),
        ("mul", mul),
        ("add_row", add_row),
        ("scale", scale),
        ("concat_cols", concat_cols),
        ("concat_rows", concat_rows),
        ("slice_cols", slice_cols),
        ("reshape", reshape),
        ("select_rows", select_rows),
        ("repeat_rows", repeat_rows),
        ("mean_rows", mean_rows),
        ("sum", sum),
        ("sigmoid", sigmoid),
        ("tanh", tanh),
        ("relu", relu),
        ("exp", exp),
        ("log", log),
        ("masked_softmax", masked_softmax),
        ("cross_entropy", cross_entropy),
        ("gaussian_kl", gaussian_kl),
        ("neighbor_sum", neighbor_sum),
        ("squared_error", squared_error_loss),
    ]
}

pub fn composites() -> Vec<(&'static str, Case)> {
    vec![
        ("typing K", typing_k),
        ("typing F", typing_f),
        ("existence C", existence_mlp),
        ("bond type L", bond_type_mlp),
        ("edge messages E_l", edge_messages),
        ("GRU", gru),
        ("encoder heads", encoder_heads),
        ("property O", property),
        ("teacher decoder", teacher_decoder),
        ("training loss", training_loss),
    ]
}
