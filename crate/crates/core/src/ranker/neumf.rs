//! Neural matrix factorization: a GMF path (elementwise product of one
//! embedding pair) and an MLP path (ReLU tower over the concatenation of a
//! second pair), joined by a linear output.
//!
//! Trained pointwise: each triple contributes `−ln σ(s_ui) − ln σ(−s_uj)`.

use rand::Rng;

use crate::adam::{Adam, Moments, RowGrads};
use crate::embedding::DenseEmbeddingMatrix;
use crate::error::{Error, Result};
use crate::math::{neg_log_sigmoid, sigmoid, softplus, squared_norm};
use crate::sampling::TripletBatch;

use super::check_batch;

/// Fully connected layer, `weights` is `outputs × inputs` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn glorot<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        Dense {
            inputs,
            outputs,
            weights: (0..inputs * outputs).map(|_| rng.random_range(-limit..=limit)).collect(),
            bias: vec![0.0; outputs],
        }
    }

    #[inline]
    fn row(&self, o: usize) -> &[f64] {
        &self.weights[o * self.inputs..(o + 1) * self.inputs]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NeuMf {
    pub gmf_user: DenseEmbeddingMatrix,
    pub gmf_item: DenseEmbeddingMatrix,
    pub mlp_user: DenseEmbeddingMatrix,
    pub mlp_item: DenseEmbeddingMatrix,
    pub layers: Vec<Dense>,
    /// Weights over `[GMF product ; last MLP layer]`.
    pub output: Vec<f64>,
}

/// Activations of one forward pass. `h[0]` is the MLP input, `h[l]` the
/// output of layer `l`; `z[l]` is the pre-activation of layer `l + 1`.
#[derive(Clone, Debug, Default)]
pub(crate) struct Trace {
    z: Vec<Vec<f64>>,
    h: Vec<Vec<f64>>,
    gmf: Vec<f64>,
    user_part: Vec<f64>,
}

impl NeuMf {
    pub fn new<R: Rng>(num_users: usize, num_items: usize, k: usize, arch: &[usize], init_scale: f64, rng: &mut R) -> Result<Self> {
        if arch.is_empty() || arch.contains(&0) || k == 0 {
            return Err(Error::Config("the MLP needs at least one non-empty layer and k > 0".into()));
        }
        let gmf_user = DenseEmbeddingMatrix::uniform(num_users, k, init_scale, rng);
        let gmf_item = DenseEmbeddingMatrix::uniform(num_items, k, init_scale, rng);
        let mlp_user = DenseEmbeddingMatrix::uniform(num_users, k, init_scale, rng);
        let mlp_item = DenseEmbeddingMatrix::uniform(num_items, k, init_scale, rng);
        let mut layers = Vec::with_capacity(arch.len());
        let mut width = 2 * k;
        for &out in arch {
            layers.push(Dense::glorot(width, out, rng));
            width = out;
        }
        let out_len = k + width;
        let limit = (6.0 / (out_len + 1) as f64).sqrt();
        let output = (0..out_len).map(|_| rng.random_range(-limit..=limit)).collect();
        let model = NeuMf {
            gmf_user,
            gmf_item,
            mlp_user,
            mlp_item,
            layers,
            output,
        };
        model.check_shapes()?;
        Ok(model)
    }

    pub fn k(&self) -> usize {
        self.gmf_user.dim()
    }

    pub fn num_users(&self) -> usize {
        self.gmf_user.rows()
    }

    pub fn num_items(&self) -> usize {
        self.gmf_item.rows()
    }

    pub fn check_shapes(&self) -> Result<()> {
        let k = self.k();
        let mut ok = self.gmf_item.dim() == k
            && self.mlp_user.dim() == k
            && self.mlp_item.dim() == k
            && self.mlp_user.rows() == self.gmf_user.rows()
            && self.mlp_item.rows() == self.gmf_item.rows()
            && !self.layers.is_empty();
        let mut width = 2 * k;
        for l in &self.layers {
            ok &= l.inputs == width && l.weights.len() == l.inputs * l.outputs && l.bias.len() == l.outputs;
            width = l.outputs;
        }
        ok &= self.output.len() == k + width;
        if ok {
            Ok(())
        } else {
            Err(Error::Config("inconsistent NeuMF parameter shapes".into()))
        }
    }

    pub(crate) fn trace(&self) -> Trace {
        let mut t = Trace {
            h: vec![vec![0.0; 2 * self.k()]],
            gmf: vec![0.0; self.k()],
            user_part: vec![0.0; self.layers[0].outputs],
            ..Trace::default()
        };
        for l in &self.layers {
            t.z.push(vec![0.0; l.outputs]);
            t.h.push(vec![0.0; l.outputs]);
        }
        t
    }

    /// Bias plus the user half of the first layer; shared by every item.
    pub(crate) fn prepare_user(&self, u: usize, t: &mut Trace) {
        let k = self.k();
        let first = &self.layers[0];
        let p = self.mlp_user.row(u);
        for o in 0..first.outputs {
            let w = &first.row(o)[..k];
            t.user_part[o] = first.bias[o] + w.iter().zip(p).map(|(a, b)| a * b).sum::<f64>();
        }
        t.h[0][..k].copy_from_slice(p);
    }

    /// Score of `(u, i)`; [`Self::prepare_user`] must have run for `u`.
    pub(crate) fn forward(&self, u: usize, i: usize, t: &mut Trace) -> f64 {
        let k = self.k();
        let (pg, qg) = (self.gmf_user.row(u), self.gmf_item.row(i));
        for z in 0..k {
            t.gmf[z] = pg[z] * qg[z];
        }
        let q = self.mlp_item.row(i);
        t.h[0][k..].copy_from_slice(q);
        let first = &self.layers[0];
        for o in 0..first.outputs {
            let w = &first.row(o)[k..];
            t.z[0][o] = t.user_part[o] + w.iter().zip(q).map(|(a, b)| a * b).sum::<f64>();
        }
        relu(&t.z[0], &mut t.h[1]);
        for (l, layer) in self.layers.iter().enumerate().skip(1) {
            let (before, after) = t.h.split_at_mut(l + 1);
            let input = &before[l];
            for o in 0..layer.outputs {
                t.z[l][o] = layer.bias[o] + layer.row(o).iter().zip(input).map(|(a, b)| a * b).sum::<f64>();
            }
            relu(&t.z[l], &mut after[0]);
        }
        let last = &t.h[self.layers.len()];
        let (wg, wm) = self.output.split_at(k);
        let gmf: f64 = wg.iter().zip(&t.gmf).map(|(a, b)| a * b).sum();
        let mlp: f64 = wm.iter().zip(last).map(|(a, b)| a * b).sum();
        gmf + mlp
    }

    pub fn score(&self, u: usize, i: usize) -> f64 {
        let mut t = self.trace();
        self.prepare_user(u, &mut t);
        self.forward(u, i, &mut t)
    }

    pub(crate) fn ensure_finite(&self) -> Result<()> {
        self.gmf_user.ensure_finite("gmf user embedding")?;
        self.gmf_item.ensure_finite("gmf item embedding")?;
        self.mlp_user.ensure_finite("mlp user embedding")?;
        self.mlp_item.ensure_finite("mlp item embedding")?;
        let dense = self
            .layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias))
            .chain(&self.output);
        if dense.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite NeuMF layer weight".into()));
        }
        Ok(())
    }
}

fn relu(z: &[f64], h: &mut [f64]) {
    for (o, &v) in h.iter_mut().zip(z) {
        *o = v.max(0.0);
    }
}

/// Gradients of [`neumf_loss`], shaped like the model.
#[derive(Clone, Debug)]
pub struct NeuMfGrads {
    pub gmf_user: RowGrads,
    pub gmf_item: RowGrads,
    pub mlp_user: RowGrads,
    pub mlp_item: RowGrads,
    /// Per layer: (weights, bias).
    pub layers: Vec<(Vec<f64>, Vec<f64>)>,
    pub output: Vec<f64>,
}

impl NeuMfGrads {
    pub fn zeros(model: &NeuMf) -> Self {
        NeuMfGrads {
            gmf_user: RowGrads::for_matrix(&model.gmf_user),
            gmf_item: RowGrads::for_matrix(&model.gmf_item),
            mlp_user: RowGrads::for_matrix(&model.mlp_user),
            mlp_item: RowGrads::for_matrix(&model.mlp_item),
            layers: model
                .layers
                .iter()
                .map(|l| (vec![0.0; l.weights.len()], vec![0.0; l.bias.len()]))
                .collect(),
            output: vec![0.0; model.output.len()],
        }
    }

    fn clear(&mut self) {
        self.gmf_user.clear();
        self.gmf_item.clear();
        self.mlp_user.clear();
        self.mlp_item.clear();
        for (w, b) in &mut self.layers {
            w.fill(0.0);
            b.fill(0.0);
        }
        self.output.fill(0.0);
    }
}

#[derive(Clone, Debug)]
pub struct NeuMfLoss {
    pub loss: f64,
    pub grads: NeuMfGrads,
}

/// Back-propagates `ds = ∂loss/∂s` of the pair held in `t`.
fn backward(model: &NeuMf, u: usize, i: usize, ds: f64, t: &Trace, g: &mut NeuMfGrads, dh: &mut Vec<f64>, scratch: &mut Vec<f64>) {
    let k = model.k();
    let depth = model.layers.len();
    let (wg, wm) = model.output.split_at(k);
    for z in 0..k {
        g.output[z] += ds * t.gmf[z];
    }
    for (z, h) in t.h[depth].iter().enumerate() {
        g.output[k + z] += ds * h;
    }
    let (pg, qg) = (model.gmf_user.row(u), model.gmf_item.row(i));
    let gpu = g.gmf_user.row_mut(u);
    for z in 0..k {
        gpu[z] += ds * wg[z] * qg[z];
    }
    let gqi = g.gmf_item.row_mut(i);
    for z in 0..k {
        gqi[z] += ds * wg[z] * pg[z];
    }

    dh.clear();
    dh.extend(wm.iter().map(|w| ds * w));
    for l in (0..depth).rev() {
        let layer = &model.layers[l];
        let input = &t.h[l];
        let (gw, gb) = &mut g.layers[l];
        scratch.clear();
        scratch.resize(layer.inputs, 0.0);
        for o in 0..layer.outputs {
            if t.z[l][o] <= 0.0 {
                continue;
            }
            let dz = dh[o];
            gb[o] += dz;
            let gw_row = &mut gw[o * layer.inputs..(o + 1) * layer.inputs];
            for (a, x) in gw_row.iter_mut().zip(input) {
                *a += dz * x;
            }
            for (s, w) in scratch.iter_mut().zip(layer.row(o)) {
                *s += w * dz;
            }
        }
        std::mem::swap(dh, scratch);
    }
    let gpm = g.mlp_user.row_mut(u);
    for z in 0..k {
        gpm[z] += dh[z];
    }
    let gqm = g.mlp_item.row_mut(i);
    for z in 0..k {
        gqm[z] += dh[k + z];
    }
}

fn add_reg(row_grad: &mut [f64], row: &[f64], lambda: f64) -> f64 {
    for (g, x) in row_grad.iter_mut().zip(row) {
        *g += 2.0 * lambda * x;
    }
    lambda * squared_norm(row)
}

fn accumulate(model: &NeuMf, batch: &TripletBatch, lambda: f64, g: &mut NeuMfGrads, t: &mut Trace) -> Result<f64> {
    check_batch(batch, model.num_users(), model.num_items())?;
    let (mut dh, mut scratch) = (Vec::new(), Vec::new());
    let mut loss = 0.0;
    for tr in &batch.triples {
        let (u, i, j) = (tr.user as usize, tr.pos as usize, tr.neg as usize);
        model.prepare_user(u, t);
        let s_pos = model.forward(u, i, t);
        loss += neg_log_sigmoid(s_pos);
        backward(model, u, i, -sigmoid(-s_pos), t, g, &mut dh, &mut scratch);
        let s_neg = model.forward(u, j, t);
        loss += softplus(s_neg);
        backward(model, u, j, sigmoid(s_neg), t, g, &mut dh, &mut scratch);
        if lambda > 0.0 {
            loss += add_reg(g.gmf_user.row_mut(u), model.gmf_user.row(u), lambda);
            loss += add_reg(g.mlp_user.row_mut(u), model.mlp_user.row(u), lambda);
            for item in [i, j] {
                loss += add_reg(g.gmf_item.row_mut(item), model.gmf_item.row(item), lambda);
                loss += add_reg(g.mlp_item.row_mut(item), model.mlp_item.row(item), lambda);
            }
        }
    }
    Ok(loss)
}

/// Pointwise cross-entropy of every triple's positive and negative pair plus
/// row-wise ℓ2 on the touched embeddings, with gradients.
pub fn neumf_loss(model: &NeuMf, batch: &TripletBatch, lambda: f64) -> Result<NeuMfLoss> {
    model.check_shapes()?;
    let mut grads = NeuMfGrads::zeros(model);
    let mut t = model.trace();
    let loss = accumulate(model, batch, lambda, &mut grads, &mut t)?;
    Ok(NeuMfLoss { loss, grads })
}

pub(crate) struct NeuMfTrainer {
    pub model: NeuMf,
    lambda: f64,
    adam: Adam,
    grads: NeuMfGrads,
    trace: Trace,
    emb_moments: [Moments; 4],
    layer_moments: Vec<(Moments, Moments)>,
    output_moments: Moments,
}

impl NeuMfTrainer {
    pub(crate) fn new(model: NeuMf, lambda: f64, lr: f64) -> Self {
        NeuMfTrainer {
            grads: NeuMfGrads::zeros(&model),
            trace: model.trace(),
            emb_moments: [
                Moments::for_matrix(&model.gmf_user),
                Moments::for_matrix(&model.gmf_item),
                Moments::for_matrix(&model.mlp_user),
                Moments::for_matrix(&model.mlp_item),
            ],
            layer_moments: model
                .layers
                .iter()
                .map(|l| (Moments::new(l.weights.len()), Moments::new(l.bias.len())))
                .collect(),
            output_moments: Moments::new(model.output.len()),
            model,
            lambda,
            adam: Adam::new(lr),
        }
    }

    pub(crate) fn step(&mut self, batch: &TripletBatch, step: u64) -> Result<f64> {
        self.grads.clear();
        let loss = accumulate(&self.model, batch, self.lambda, &mut self.grads, &mut self.trace)?;
        let (m, g, a) = (&mut self.model, &self.grads, &self.adam);
        let [mu, mi, nu, ni] = &mut self.emb_moments;
        a.update_rows(&mut m.gmf_user, &g.gmf_user, mu, step);
        a.update_rows(&mut m.gmf_item, &g.gmf_item, mi, step);
        a.update_rows(&mut m.mlp_user, &g.mlp_user, nu, step);
        a.update_rows(&mut m.mlp_item, &g.mlp_item, ni, step);
        for ((layer, (gw, gb)), (mw, mb)) in m.layers.iter_mut().zip(&g.layers).zip(&mut self.layer_moments) {
            a.update(&mut layer.weights, gw, mw, 0, step);
            a.update(&mut layer.bias, gb, mb, 0, step);
        }
        a.update(&mut m.output, &g.output, &mut self.output_moments, 0, step);
        Ok(loss)
    }
}
