//! Denoising score-matching training with condition dropout, plus the Adam
//! optimizer and Monte Carlo loss evaluation.
//!
//! Training is a pure function of `(config, domain, schedule, initial
//! parameters)`: each epoch draws everything from the stream
//! `"train/{epoch}"` in a fixed per-item order (concept, datum, timestep,
//! noise, dropout decision), so identical configs produce identical
//! checkpoints byte for byte.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::denoiser::{forward_graph, BlockConditionalDenoiser};
use crate::domains::{GlyphDomain, GmmDomain};
use crate::embedding::{EmbeddingTable, NULL_CONCEPT};
use crate::error::{Error, Result};
use crate::rng::{derive_stream, RngStream};
use crate::sampler::Denoiser;
use crate::schedule::NoiseSchedule;
use crate::tensor::{Gradients, Precision, PrimitiveKind, Tape, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub batches_per_epoch: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Probability of replacing all three conditioning entries by the null
    /// embedding (trains the unconditional branch for guidance).
    pub p_uncond: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn glyph_default() -> TrainConfig {
        TrainConfig {
            epochs: 30,
            batch_size: 64,
            batches_per_epoch: 100,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            p_uncond: 0.1,
            seed: 7,
        }
    }

    pub fn gmm_default() -> TrainConfig {
        TrainConfig {
            epochs: 10,
            batch_size: 64,
            batches_per_epoch: 25,
            ..TrainConfig::glyph_default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.batches_per_epoch == 0 {
            return Err(Error::Config(
                "epochs, batch_size and batches_per_epoch must be positive".into(),
            ));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be >= 0, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.p_uncond) {
            return Err(Error::Config(format!(
                "p_uncond must lie in [0, 1), got {}",
                self.p_uncond
            )));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if self.epsilon <= 0.0 {
            return Err(Error::Config("adam epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// Adam moments for the full parameter list (embedding table first, then the
/// 32 network tensors in canonical order). Persisted in checkpoints so runs
/// resume bit-exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(table: &EmbeddingTable, net: &BlockConditionalDenoiser) -> AdamState {
        let mut m = vec![Tensor::zeros(table.rows().shape().to_vec(), Precision::F32)];
        m.extend(
            net.params()
                .iter()
                .map(|p| Tensor::zeros(p.shape().to_vec(), Precision::F32)),
        );
        AdamState { step: 0, m: m.clone(), v: m }
    }
}

/// One biased-moment Adam update with bias correction.
pub fn adam_step(
    param: &mut Tensor,
    grad: &Tensor,
    m: &mut Tensor,
    v: &mut Tensor,
    step: u64,
    config: &TrainConfig,
) {
    let (b1, b2) = (config.beta1, config.beta2);
    let c1 = 1.0 - b1.powi(step as i32);
    let c2 = 1.0 - b2.powi(step as i32);
    let lr = config.learning_rate;
    let eps = config.epsilon;
    let precision = param.precision();
    let gd = grad.data().to_vec();
    let pd = param.data_mut();
    let md = m.data_mut();
    let vd = v.data_mut();
    for ((p, g), (mv, vv)) in pd.iter_mut().zip(&gd).zip(md.iter_mut().zip(vd.iter_mut())) {
        let mn = b1 * *mv + (1.0 - b1) * g;
        let vn = b2 * *vv + (1.0 - b2) * g * g;
        *mv = precision.store(mn);
        *vv = precision.store(vn);
        let m_hat = *mv / c1;
        let v_hat = *vv / c2;
        *p = precision.store(*p - lr * m_hat / (v_hat.sqrt() + eps));
    }
}

/// The two trainable worlds. Glyph pixels are rescaled from [0,1] to [-1,1]
/// here so the diffusion clamp box is symmetric; evaluation undoes it.
#[derive(Clone, Copy, Debug)]
pub enum TrainDomain<'a> {
    Gmm(&'a GmmDomain),
    Glyph(&'a GlyphDomain),
}

impl<'a> TrainDomain<'a> {
    pub fn concepts(&self) -> Vec<String> {
        match self {
            TrainDomain::Gmm(d) => d.concepts().iter().map(|s| s.to_string()).collect(),
            TrainDomain::Glyph(d) => d.concepts().iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn data_dim(&self) -> usize {
        match self {
            TrainDomain::Gmm(_) => 2,
            TrainDomain::Glyph(_) => 256,
        }
    }

    /// One clean training datum in diffusion coordinates.
    pub fn datum(&self, concept: &str, stream: &mut RngStream) -> Result<Vec<f64>> {
        match self {
            TrainDomain::Gmm(d) => {
                let p = d.sample_point(concept, stream)?;
                Ok(vec![p[0], p[1]])
            }
            TrainDomain::Glyph(d) => {
                let img = d.render(concept, stream)?;
                Ok(img.data().iter().map(|&v| 2.0 * v - 1.0).collect())
            }
        }
    }
}

/// Per-epoch mean training losses.
pub struct TrainOutcome {
    pub loss_curve: Vec<f64>,
}

struct Batch {
    x_t: Tensor,
    eps: Tensor,
    one_hot: Tensor,
    time_feat: Tensor,
}

fn draw_batch(
    domain: &TrainDomain,
    table: &EmbeddingTable,
    net: &BlockConditionalDenoiser,
    schedule: &NoiseSchedule,
    config: &TrainConfig,
    stream: &mut RngStream,
    batch_size: usize,
) -> Result<Batch> {
    let concepts = domain.concepts();
    let dim = domain.data_dim();
    let vocab_len = table.vocab().len();
    let mut x_t = Vec::with_capacity(batch_size * dim);
    let mut eps = Vec::with_capacity(batch_size * dim);
    let mut one_hot = vec![0.0f64; batch_size * vocab_len];
    let mut ts = Vec::with_capacity(batch_size);

    for b in 0..batch_size {
        let concept = &concepts[stream.next_below(concepts.len() as u64) as usize];
        let x0 = domain.datum(concept, stream)?;
        let t = stream.next_below(schedule.t_train() as u64) as usize;
        let ab = schedule.alpha_bar(t);
        let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
        for &v in &x0 {
            let e = stream.next_gaussian();
            x_t.push(sa * v + sn * e);
            eps.push(e);
        }
        let dropped = stream.next_uniform() < config.p_uncond;
        let row = if dropped {
            table.vocab().index_of(NULL_CONCEPT)?
        } else {
            table.vocab().index_of(concept)?
        };
        one_hot[b * vocab_len + row] = 1.0;
        ts.push(t);
    }

    let mut time_feat = Vec::with_capacity(batch_size * net.dims().time);
    for &t in &ts {
        time_feat.extend(crate::denoiser::time_embed(t, net.dims().time)?);
    }
    Ok(Batch {
        x_t: Tensor::from_vec(vec![batch_size, dim], x_t, Precision::F32)?,
        eps: Tensor::from_vec(vec![batch_size, dim], eps, Precision::F32)?,
        one_hot: Tensor::from_vec(vec![batch_size, vocab_len], one_hot, Precision::F32)?,
        time_feat: Tensor::from_vec(
            vec![batch_size, net.dims().time],
            time_feat,
            Precision::F32,
        )?,
    })
}

/// Forward + backward for one batch; gradients come back with the table at
/// index 0 followed by the 32 network tensors. The embedding lookup is a
/// one-hot matmul, so only the rows actually used this batch receive
/// nonzero gradient.
fn batch_gradients(
    net: &BlockConditionalDenoiser,
    table: &EmbeddingTable,
    batch: &Batch,
) -> Result<(f64, Gradients)> {
    let mut tape = Tape::new();
    let table_id = tape.param(table.rows().clone());
    let net_ids = net.register_params(&mut tape);
    let x = tape.leaf(batch.x_t.clone());
    let one_hot = tape.leaf(batch.one_hot.clone());
    let time_feat = tape.leaf(batch.time_feat.clone());
    let emb = tape.apply(PrimitiveKind::MatMul, &[one_hot, table_id])?;
    let cond = tape.apply(PrimitiveKind::ConcatLast, &[emb, time_feat])?;
    let out = forward_graph(&mut tape, &net_ids, x, cond, cond, cond)?;
    let target = tape.leaf(batch.eps.clone());
    let loss = tape.apply(PrimitiveKind::Mse, &[out, target])?;
    let value = tape.value(loss).item()?;
    let grads = tape.backward(loss)?;
    Ok((value, grads))
}

fn apply_adam(
    table: &mut EmbeddingTable,
    net: &mut BlockConditionalDenoiser,
    grads: &Gradients,
    state: &mut AdamState,
    config: &TrainConfig,
) {
    state.step += 1;
    let step = state.step;
    adam_step(
        table.rows_mut(),
        grads.get(0),
        &mut state.m[0],
        &mut state.v[0],
        step,
        config,
    );
    for (i, p) in net.params_mut().iter_mut().enumerate() {
        adam_step(
            Arc::make_mut(p),
            grads.get(i + 1),
            &mut state.m[i + 1],
            &mut state.v[i + 1],
            step,
            config,
        );
    }
}

/// Runs epsilon-prediction training, mutating the network and table in
/// place. Aborts with diagnostics if an epoch mean loss turns non-finite.
pub fn train(
    domain: &TrainDomain,
    net: &mut BlockConditionalDenoiser,
    table: &mut EmbeddingTable,
    schedule: &NoiseSchedule,
    config: &TrainConfig,
    state: &mut AdamState,
) -> Result<TrainOutcome> {
    config.validate()?;
    if net.dims().input != domain.data_dim() {
        return Err(Error::Config(format!(
            "network input width {} does not match domain dim {}",
            net.dims().input,
            domain.data_dim()
        )));
    }
    for concept in domain.concepts() {
        table.vocab().index_of(&concept)?;
    }

    let mut loss_curve = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut stream = derive_stream(config.seed, &format!("train/{epoch}"))?;
        let mut epoch_loss = 0.0;
        for _ in 0..config.batches_per_epoch {
            let batch = draw_batch(
                domain,
                table,
                net,
                schedule,
                config,
                &mut stream,
                config.batch_size,
            )?;
            let (loss, grads) = batch_gradients(net, table, &batch)?;
            epoch_loss += loss;
            apply_adam(table, net, &grads, state, config);
        }
        let mean = epoch_loss / config.batches_per_epoch as f64;
        if !mean.is_finite() {
            return Err(Error::Numeric(format!(
                "training diverged: epoch {epoch} mean loss is {mean}"
            )));
        }
        loss_curve.push(mean);
    }
    Ok(TrainOutcome { loss_curve })
}

/// Monte Carlo epsilon-MSE over fresh (datum, t, noise) triples; no
/// parameter mutation. Works for any denoiser, including the analytic
/// oracle (whose loss lower-bounds every trained network).
pub fn loss_eval<D: Denoiser + ?Sized>(
    denoiser: &D,
    table: &EmbeddingTable,
    domain: &TrainDomain,
    schedule: &NoiseSchedule,
    n: usize,
    stream: &mut RngStream,
) -> Result<f64> {
    if n == 0 {
        return Err(Error::Contract("loss_eval requires n >= 1".into()));
    }
    let concepts = domain.concepts();
    let dim = domain.data_dim();
    let mut total = 0.0;
    for _ in 0..n {
        let concept = &concepts[stream.next_below(concepts.len() as u64) as usize];
        let x0 = domain.datum(concept, stream)?;
        let t = stream.next_below(schedule.t_train() as u64) as usize;
        let ab = schedule.alpha_bar(t);
        let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
        let mut x_t = Vec::with_capacity(dim);
        let mut eps = Vec::with_capacity(dim);
        for &v in &x0 {
            let e = stream.next_gaussian();
            x_t.push(sa * v + sn * e);
            eps.push(e);
        }
        let x_t = Tensor::from_vec(vec![dim], x_t, Precision::F32)?;
        let e = table.encode(concept)?;
        let pred = denoiser.predict_eps(&x_t, t, &crate::sampler::BlockCond::uniform(&e))?;
        let se: f64 = pred
            .data()
            .iter()
            .zip(&eps)
            .map(|(&p, &t)| (p - t) * (p - t))
            .sum();
        total += se / dim as f64;
    }
    Ok(total / n as f64)
}
