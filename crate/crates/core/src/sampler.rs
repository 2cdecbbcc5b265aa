//! Reverse-process samplers and the generation pipeline.
//!
//! `generate` realizes the seeded generation contract: the output is a pure
//! function of (seed, sample id, sampler config, blend schedule, denoiser).
//! Initial latents come from the stream `"init-latent/{sample_id}"`,
//! ancestral noise from `"ddpm-noise/{sample_id}"`; denoiser evaluations
//! consume no randomness, so replay equality is bit-exact and the
//! deterministic DDIM path draws nothing after the init.

use crate::blend::{BlendSchedule, Block};
use crate::domains::{Conditioning, GmmDomain};
use crate::embedding::{ConceptVocab, Embedding, EmbeddingTable};
use crate::error::{Error, Result};
use crate::rng::{derive_stream, RngStream};
use crate::schedule::{timestep_grid, NoiseSchedule, SamplerConfig, SamplerKind};
use crate::tensor::{Precision, Tensor};

/// Per-block conditioning embeddings for one denoiser evaluation.
#[derive(Clone, Copy, Debug)]
pub struct BlockCond<'a> {
    pub enc: &'a Embedding,
    pub mid: &'a Embedding,
    pub dec: &'a Embedding,
}

impl<'a> BlockCond<'a> {
    pub fn uniform(e: &'a Embedding) -> BlockCond<'a> {
        BlockCond { enc: e, mid: e, dec: e }
    }
}

/// Anything that predicts the injected noise for a sample at a timestep.
pub trait Denoiser {
    /// Width of the flat data vector this denoiser operates on.
    fn data_dim(&self) -> usize;

    /// Noise prediction; must not consume any randomness.
    fn predict_eps(&self, x_t: &Tensor, t: usize, cond: &BlockCond) -> Result<Tensor>;
}

/// Closed-form forward jump `x_t = sqrt(ab)*x0 + sqrt(1-ab)*eps`.
/// Returns both the noised sample and the injected noise.
pub fn forward_diffuse(
    x0: &Tensor,
    t: usize,
    schedule: &NoiseSchedule,
    stream: &mut RngStream,
) -> Result<(Tensor, Tensor)> {
    if t >= schedule.t_train() {
        return Err(Error::Contract(format!(
            "timestep {t} outside training range 0..{}",
            schedule.t_train()
        )));
    }
    let ab = schedule.alpha_bar(t);
    let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
    let eps = stream.gaussian_tensor(x0.shape(), x0.precision())?;
    let eps_data = eps.data().to_vec();
    let mut x_t = x0.clone();
    x_t.update(|i, v| sa * v + sn * eps_data[i]);
    Ok((x_t, eps))
}

/// Classifier-free guidance extrapolation
/// `eps_u + scale * (eps_c - eps_u)`.
///
/// `scale == 1` returns the conditional prediction verbatim and `scale == 0`
/// the unconditional one, so the reduction identities hold bit-exactly.
pub fn cfg_combine(eps_uncond: &Tensor, eps_cond: &Tensor, scale: f64) -> Result<Tensor> {
    if eps_uncond.shape() != eps_cond.shape() {
        return Err(Error::Shape {
            op: "cfg_combine",
            detail: format!("{:?} vs {:?}", eps_uncond.shape(), eps_cond.shape()),
        });
    }
    if scale == 1.0 {
        return Ok(eps_cond.clone());
    }
    if scale == 0.0 {
        return Ok(eps_uncond.clone());
    }
    let cd = eps_cond.data().to_vec();
    let mut out = eps_uncond.clone();
    out.update(|i, u| u + scale * (cd[i] - u));
    Ok(out)
}

/// One reverse transition from `t` to `t_prev`; `t_prev = None` marks the
/// final output emission, which returns the clamped clean-sample estimate
/// with no added noise (both samplers).
///
/// DDPM uses the coarse-grid posterior with effective alpha
/// `ab_t / ab_prev`; DDIM uses the deterministic update plus `eta`-scaled
/// noise. A step with zero variance consumes no stream draws.
pub fn reverse_step(
    x_t: &Tensor,
    eps_hat: &Tensor,
    t: usize,
    t_prev: Option<usize>,
    schedule: &NoiseSchedule,
    config: &SamplerConfig,
    stream: &mut RngStream,
) -> Result<Tensor> {
    if let Some(tp) = t_prev {
        if tp >= t {
            return Err(Error::Contract(format!(
                "reverse_step needs t_prev < t, got {tp} >= {t}"
            )));
        }
    }
    if x_t.shape() != eps_hat.shape() {
        return Err(Error::Shape {
            op: "reverse_step",
            detail: format!("{:?} vs {:?}", x_t.shape(), eps_hat.shape()),
        });
    }
    let ab_t = schedule.alpha_bar(t);
    let ab_p = t_prev.map_or(1.0, |tp| schedule.alpha_bar(tp));
    let (lo, hi) = config.clamp;

    // Predicted clean sample, clipped to the data box.
    let eps_data = eps_hat.data().to_vec();
    let (sa, sn) = (ab_t.sqrt(), (1.0 - ab_t).sqrt());
    let mut x0_hat = x_t.clone();
    x0_hat.update(|i, v| ((v - sn * eps_data[i]) / sa).clamp(lo, hi));

    match config.kind {
        SamplerKind::Ddpm => {
            let alpha_eff = ab_t / ab_p;
            let c0 = ab_p.sqrt() * (1.0 - alpha_eff) / (1.0 - ab_t);
            let c1 = alpha_eff.sqrt() * (1.0 - ab_p) / (1.0 - ab_t);
            let var = (1.0 - ab_p) / (1.0 - ab_t) * (1.0 - alpha_eff);
            let xt_data = x_t.data().to_vec();
            let mut out = x0_hat;
            out.update(|i, v| c0 * v + c1 * xt_data[i]);
            if var > 0.0 {
                let sd = var.sqrt();
                let z = stream.gaussian_tensor(x_t.shape(), x_t.precision())?;
                let zd = z.data().to_vec();
                out.update(|i, v| v + sd * zd[i]);
            }
            Ok(out)
        }
        SamplerKind::Ddim => {
            let sigma = if ab_p < 1.0 {
                config.eta
                    * ((1.0 - ab_p) / (1.0 - ab_t)).sqrt()
                    * (1.0 - ab_t / ab_p).sqrt()
            } else {
                0.0
            };
            let dir_coeff = (1.0 - ab_p - sigma * sigma).max(0.0).sqrt();
            let sap = ab_p.sqrt();
            let mut out = x0_hat;
            out.update(|i, v| sap * v + dir_coeff * eps_data[i]);
            if sigma > 0.0 {
                let z = stream.gaussian_tensor(x_t.shape(), x_t.precision())?;
                let zd = z.data().to_vec();
                out.update(|i, v| v + sigma * zd[i]);
            }
            Ok(out)
        }
    }
}

/// Runs the full reverse pipeline for one sample under a blend schedule.
///
/// At guidance scale 1 the unconditional branch is skipped entirely; it
/// would be combined away exactly and denoiser calls draw no randomness, so
/// the output is identical either way.
pub fn generate<D: Denoiser + ?Sized>(
    denoiser: &D,
    blend: &BlendSchedule,
    null_embedding: &Embedding,
    schedule: &NoiseSchedule,
    config: &SamplerConfig,
    seed: u64,
    sample_id: u64,
) -> Result<Tensor> {
    config.validate(schedule)?;
    if blend.n_steps() != config.n_steps {
        return Err(Error::Config(format!(
            "blend schedule built for {} steps, sampler runs {}",
            blend.n_steps(),
            config.n_steps
        )));
    }
    let grid = timestep_grid(schedule.t_train(), config.n_steps)?;
    let mut init = derive_stream(seed, &format!("init-latent/{sample_id}"))?;
    let mut noise = derive_stream(seed, &format!("ddpm-noise/{sample_id}"))?;
    let mut x = init.gaussian_tensor(&[denoiser.data_dim()], Precision::F32)?;

    let uncond = BlockCond::uniform(null_embedding);
    for (i, &t) in grid.iter().enumerate() {
        let cond = BlockCond {
            enc: blend.embedding_at(i, Block::Encoder),
            mid: blend.embedding_at(i, Block::Bottleneck),
            dec: blend.embedding_at(i, Block::Decoder),
        };
        let eps_cond = denoiser.predict_eps(&x, t, &cond)?;
        let eps = if config.guidance_scale == 1.0 {
            eps_cond
        } else {
            let eps_uncond = denoiser.predict_eps(&x, t, &uncond)?;
            cfg_combine(&eps_uncond, &eps_cond, config.guidance_scale)?
        };
        x = reverse_step(&x, &eps, t, grid.get(i + 1).copied(), schedule, config, &mut noise)?;
    }
    Ok(x)
}

/// The exact conditional denoiser for the Gaussian-mixture domain.
///
/// Concepts use a fixed orthonormal embedding basis (the one-hot table), so
/// a queried embedding decomposes exactly into per-concept weights: pure
/// rows recover the concept-restricted posterior, the zero null row the
/// unconditional one, and blends a weighted mixture across concepts.
/// Per-block conditioning is averaged with equal thirds — the closed-form
/// score has no block structure to exploit.
pub struct GmmOracleDenoiser {
    domain: GmmDomain,
    schedule: NoiseSchedule,
    table: EmbeddingTable,
}

impl GmmOracleDenoiser {
    pub fn new(domain: GmmDomain, schedule: NoiseSchedule) -> Result<GmmOracleDenoiser> {
        let vocab = ConceptVocab::new(&domain.concepts())?;
        let table = EmbeddingTable::one_hot(vocab);
        Ok(GmmOracleDenoiser { domain, schedule, table })
    }

    pub fn domain(&self) -> &GmmDomain {
        &self.domain
    }

    /// The orthonormal table experiments should draw embeddings from.
    pub fn table(&self) -> &EmbeddingTable {
        &self.table
    }

    /// Decomposes averaged block conditioning into nonnegative normalized
    /// concept weights; an all-zero query (the null embedding) yields the
    /// unconditional prior.
    fn weighted_prior(&self, cond: &BlockCond) -> Result<Vec<(f64, usize)>> {
        let d = self.table.dim();
        for e in [cond.enc, cond.mid, cond.dec] {
            if e.dim() != d {
                return Err(Error::Shape {
                    op: "oracle_conditioning",
                    detail: format!("embedding dim {} vs table dim {d}", e.dim()),
                });
            }
        }
        let concepts = self.domain.concepts();
        let mut weights = Vec::with_capacity(concepts.len());
        let mut total = 0.0;
        for k in 0..concepts.len() {
            let coeff = (cond.enc.values()[k] + cond.mid.values()[k] + cond.dec.values()[k]) / 3.0;
            let w = coeff.max(0.0);
            weights.push(w);
            total += w;
        }
        if total <= 1e-12 {
            return self.domain.restricted_prior(Conditioning::All);
        }
        let mut prior = Vec::new();
        for (k, concept) in concepts.iter().enumerate() {
            if weights[k] == 0.0 {
                continue;
            }
            for (w, idx) in self.domain.restricted_prior(Conditioning::Concept(concept))? {
                prior.push((weights[k] / total * w, idx));
            }
        }
        Ok(prior)
    }
}

impl Denoiser for GmmOracleDenoiser {
    fn data_dim(&self) -> usize {
        2
    }

    fn predict_eps(&self, x_t: &Tensor, t: usize, cond: &BlockCond) -> Result<Tensor> {
        if x_t.len() != 2 {
            return Err(Error::Shape {
                op: "oracle_predict_eps",
                detail: format!("expected a 2-vector, got {:?}", x_t.shape()),
            });
        }
        let ab = self.schedule.alpha_bar(t);
        let prior = self.weighted_prior(cond)?;
        let x = [x_t.data()[0], x_t.data()[1]];
        let x0 = self.domain.posterior_mean_weighted(&prior, x, ab);
        let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
        Tensor::from_vec(
            vec![2],
            vec![(x[0] - sa * x0[0]) / sn, (x[1] - sa * x0[1]) / sn],
            x_t.precision(),
        )
    }
}
