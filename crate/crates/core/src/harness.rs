//! Config-driven experiment execution: resolves the model (analytic oracle,
//! fresh training, or a checkpoint), runs the declared jobs, writes their
//! outputs into per-job directories and assembles the run manifest.

use std::path::{Path, PathBuf};

use crate::checkpoint::Checkpoint;
use crate::config::{DomainKind, ExperimentConfig, JobKind, RenderKind};
use crate::denoiser::{init_params, BlockConditionalDenoiser, NetDims};
use crate::domains::{GlyphDomain, GmmDomain};
use crate::embedding::{ConceptVocab, EmbeddingTable};
use crate::error::{Error, Result};
use crate::eval::{blend_profile, sweep, sweep_csv, EvalDomain};
use crate::manifest::{sha256_hex, JobManifest, NoiseEcho, OutputDigest, RunManifest};
use crate::output::{csv_table, format_float, render_ppm, render_svg_scatter};
use crate::rng::derive_stream;
use crate::sampler::GmmOracleDenoiser;
use crate::schedule::{linear_schedule, NoiseSchedule};
use crate::tensor::Tensor;
use crate::train::{loss_eval, train, AdamState, TrainConfig, TrainDomain};
use crate::MethodSpec;

/// How many per-sample images a blend job renders (per seed) before
/// stopping; full sample data always lands in the CSV.
const MAX_RENDERED_IMAGES: u64 = 8;

struct OutputWriter {
    root: PathBuf,
    digests: Vec<OutputDigest>,
}

impl OutputWriter {
    fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&path, bytes)?;
        self.digests.push(OutputDigest { path: rel.to_owned(), sha256: sha256_hex(bytes) });
        Ok(())
    }

    fn take_digests(&mut self) -> Vec<OutputDigest> {
        std::mem::take(&mut self.digests)
    }
}

enum ActiveModel {
    Oracle(Box<GmmOracleDenoiser>),
    Trained { net: BlockConditionalDenoiser, table: EmbeddingTable },
}

fn fresh_model(cfg: &ExperimentConfig, concepts: &[String]) -> Result<(BlockConditionalDenoiser, EmbeddingTable)> {
    let train_cfg = cfg.train.clone().unwrap_or_else(|| match cfg.domain {
        DomainKind::Gmm => TrainConfig::gmm_default(),
        DomainKind::Glyph => TrainConfig::glyph_default(),
    });
    let vocab = ConceptVocab::new(concepts)?;
    let mut embed_stream = derive_stream(train_cfg.seed, "init-embed")?;
    let table = EmbeddingTable::init(vocab, cfg.embedding_dim, &mut embed_stream)?;
    let dims = match cfg.domain {
        DomainKind::Gmm => NetDims::gmm_default(cfg.embedding_dim),
        DomainKind::Glyph => NetDims::glyph_default(cfg.embedding_dim),
    };
    let mut net_stream = derive_stream(train_cfg.seed, "init-net")?;
    let net = init_params(dims, &mut net_stream)?;
    Ok((net, table))
}

/// Executes a parsed experiment config. `config_text` is hashed into the
/// manifest; all outputs land under `out_dir`.
pub fn run_experiment(config_text: &str, out_dir: &Path) -> Result<RunManifest> {
    let cfg = ExperimentConfig::parse(config_text)?;
    let schedule = linear_schedule(cfg.noise.t_train, cfg.noise.beta_min, cfg.noise.beta_max)?;
    cfg.sampler.validate(&schedule)?;

    let gmm_domain = GmmDomain::default_world();
    let glyph_domain = GlyphDomain::default();
    let concepts: Vec<String> = match cfg.domain {
        DomainKind::Gmm => gmm_domain.concepts().iter().map(|s| s.to_string()).collect(),
        DomainKind::Glyph => glyph_domain.concepts().iter().map(|s| s.to_string()).collect(),
    };

    // Model resolution: explicit checkpoint wins, then the oracle for the
    // mixture domain; the glyph domain without a checkpoint needs a train
    // job before any generation job.
    let mut model_id = "oracle".to_owned();
    let mut model = match (&cfg.checkpoint, cfg.domain) {
        (Some(path), _) => {
            let bytes = std::fs::read(path)?;
            model_id = sha256_hex(&bytes);
            let ck = Checkpoint::from_bytes(&bytes)?;
            let (net, table) = ck.into_model()?;
            ActiveModel::Trained { net, table }
        }
        (None, DomainKind::Gmm) => ActiveModel::Oracle(Box::new(GmmOracleDenoiser::new(
            gmm_domain.clone(),
            schedule.clone(),
        )?)),
        (None, DomainKind::Glyph) => {
            if !cfg.jobs.iter().any(|j| matches!(j.kind, JobKind::Train)) {
                return Err(Error::Config(
                    "glyph experiments need a [checkpoint] or a train job before generation".into(),
                ));
            }
            // placeholder; replaced by the train job before first use
            let (net, table) = fresh_model(&cfg, &concepts)?;
            ActiveModel::Trained { net, table }
        }
    };

    let mut writer = OutputWriter { root: out_dir.to_path_buf(), digests: Vec::new() };
    let mut jobs_manifest = Vec::new();

    for job in &cfg.jobs {
        let mut method_meta = None;
        match &job.kind {
            JobKind::Train => {
                let train_cfg = cfg.train.clone().unwrap_or_else(|| match cfg.domain {
                    DomainKind::Gmm => TrainConfig::gmm_default(),
                    DomainKind::Glyph => TrainConfig::glyph_default(),
                });
                let (mut net, mut table) = fresh_model(&cfg, &concepts)?;
                let mut state = AdamState::new(&table, &net);
                let domain = match cfg.domain {
                    DomainKind::Gmm => TrainDomain::Gmm(&gmm_domain),
                    DomainKind::Glyph => TrainDomain::Glyph(&glyph_domain),
                };
                let outcome = train(&domain, &mut net, &mut table, &schedule, &train_cfg, &mut state)?;
                let rows: Vec<Vec<String>> = outcome
                    .loss_curve
                    .iter()
                    .enumerate()
                    .map(|(e, l)| vec![e.to_string(), format_float(*l)])
                    .collect();
                writer.write(
                    &format!("{}/loss_curve.csv", job.name),
                    csv_table(&["epoch", "mean_loss"], &rows).as_bytes(),
                )?;
                let ck = Checkpoint::new(&net, &table, &state, &train_cfg);
                let bytes = ck.to_bytes();
                model_id = sha256_hex(&bytes);
                writer.write(&format!("{}/model.ckpt", job.name), &bytes)?;
                model = ActiveModel::Trained { net, table };
            }
            JobKind::Sample { concept, n_samples, render } => {
                let method = MethodSpec::Single { concept: concept.clone() };
                method_meta = Some(method.clone());
                run_generation_job(
                    &model, &cfg, &method, *n_samples, render, &gmm_domain, &glyph_domain,
                    &schedule, &job.name, u64::MAX, &mut writer,
                )?;
            }
            JobKind::Blend { method, n_samples, render } => {
                method_meta = Some(method.clone());
                run_generation_job(
                    &model, &cfg, method, *n_samples, render, &gmm_domain, &glyph_domain,
                    &schedule, &job.name, MAX_RENDERED_IMAGES, &mut writer,
                )?;
            }
            JobKind::Sweep { kind, pair, grid, n_samples } => {
                let domain = match cfg.domain {
                    DomainKind::Gmm => EvalDomain::Gmm(&gmm_domain),
                    DomainKind::Glyph => EvalDomain::Glyph(&glyph_domain),
                };
                let rows = match &model {
                    ActiveModel::Oracle(o) => sweep(
                        o.as_ref(), o.table(), *kind, (&pair.0, &pair.1), grid, &domain,
                        &schedule, &cfg.sampler, *n_samples, &cfg.seeds,
                    )?,
                    ActiveModel::Trained { net, table } => sweep(
                        net, table, *kind, (&pair.0, &pair.1), grid, &domain, &schedule,
                        &cfg.sampler, *n_samples, &cfg.seeds,
                    )?,
                };
                writer.write(&format!("{}/sweep.csv", job.name), sweep_csv(&rows).as_bytes())?;
            }
            JobKind::Eval { n_samples } => {
                let domain = match cfg.domain {
                    DomainKind::Gmm => EvalDomain::Gmm(&gmm_domain),
                    DomainKind::Glyph => EvalDomain::Glyph(&glyph_domain),
                };
                let mut rows = Vec::new();
                for concept in &concepts {
                    let method = MethodSpec::Single { concept: concept.clone() };
                    let profile = match &model {
                        ActiveModel::Oracle(o) => {
                            blend_profile(
                                o.as_ref(), o.table(), &method, &domain, &schedule,
                                &cfg.sampler, *n_samples, &cfg.seeds,
                            )?
                            .0
                        }
                        ActiveModel::Trained { net, table } => {
                            blend_profile(
                                net, table, &method, &domain, &schedule, &cfg.sampler,
                                *n_samples, &cfg.seeds,
                            )?
                            .0
                        }
                    };
                    let accuracy = profile.fraction_nearest_p1();
                    let mean_margin: f64 = profile.records.iter().map(|r| r.margin).sum::<f64>()
                        / profile.records.len() as f64;
                    rows.push(vec![
                        concept.clone(),
                        format_float(accuracy),
                        format_float(mean_margin),
                    ]);
                }
                // held-out denoising loss under the same model
                let train_domain = match cfg.domain {
                    DomainKind::Gmm => TrainDomain::Gmm(&gmm_domain),
                    DomainKind::Glyph => TrainDomain::Glyph(&glyph_domain),
                };
                let mut stream = derive_stream(cfg.seeds[0], "eval-loss")?;
                let loss = match &model {
                    ActiveModel::Oracle(o) => loss_eval(
                        o.as_ref(), o.table(), &train_domain, &schedule, *n_samples, &mut stream,
                    )?,
                    ActiveModel::Trained { net, table } => {
                        loss_eval(net, table, &train_domain, &schedule, *n_samples, &mut stream)?
                    }
                };
                writer.write(
                    &format!("{}/accuracy.csv", job.name),
                    csv_table(&["concept", "fraction_nearest", "mean_margin"], &rows).as_bytes(),
                )?;
                writer.write(
                    &format!("{}/loss.csv", job.name),
                    csv_table(&["n_samples", "mean_eps_mse"], &[vec![
                        n_samples.to_string(),
                        format_float(loss),
                    ]])
                    .as_bytes(),
                )?;
            }
        }
        jobs_manifest.push(JobManifest {
            name: job.name.clone(),
            kind: match &job.kind {
                JobKind::Train => "train",
                JobKind::Sample { .. } => "sample",
                JobKind::Blend { .. } => "blend",
                JobKind::Sweep { .. } => "sweep",
                JobKind::Eval { .. } => "eval",
            }
            .to_owned(),
            method: method_meta,
            outputs: writer.take_digests(),
        });
    }

    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_owned(),
        config_sha256: sha256_hex(config_text.as_bytes()),
        seeds: cfg.seeds.clone(),
        domain: match cfg.domain {
            DomainKind::Gmm => "gmm",
            DomainKind::Glyph => "glyph",
        }
        .to_owned(),
        noise: NoiseEcho {
            t_train: cfg.noise.t_train,
            beta_min: cfg.noise.beta_min,
            beta_max: cfg.noise.beta_max,
        },
        sampler: cfg.sampler,
        model: model_id,
        jobs: jobs_manifest,
    };
    let json = manifest.to_json()?;
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("run_manifest.json"), json)?;
    Ok(manifest)
}

#[allow(clippy::too_many_arguments)]
fn run_generation_job(
    model: &ActiveModel,
    cfg: &ExperimentConfig,
    method: &MethodSpec,
    n_samples: usize,
    render: &RenderKind,
    gmm_domain: &GmmDomain,
    glyph_domain: &GlyphDomain,
    schedule: &NoiseSchedule,
    job_name: &str,
    max_images: u64,
    writer: &mut OutputWriter,
) -> Result<()> {
    let domain = match cfg.domain {
        DomainKind::Gmm => EvalDomain::Gmm(gmm_domain),
        DomainKind::Glyph => EvalDomain::Glyph(glyph_domain),
    };
    let (profile, samples) = match model {
        ActiveModel::Oracle(o) => blend_profile(
            o.as_ref(), o.table(), method, &domain, schedule, &cfg.sampler, n_samples, &cfg.seeds,
        )?,
        ActiveModel::Trained { net, table } => blend_profile(
            net, table, method, &domain, schedule, &cfg.sampler, n_samples, &cfg.seeds,
        )?,
    };
    writer.write(
        &format!("{job_name}/per_sample.csv"),
        profile.per_sample_csv().as_bytes(),
    )?;
    writer.write(
        &format!("{job_name}/summary.csv"),
        profile.summary_csv().as_bytes(),
    )?;

    match render {
        RenderKind::None => {}
        RenderKind::Svg => {
            let points: Vec<[f64; 2]> = samples
                .iter()
                .map(|s| [s.data()[0], s.data()[1]])
                .collect();
            let labels: Vec<String> = profile.records.iter().map(|r| r.nearest.clone()).collect();
            let concepts: Vec<String> = match cfg.domain {
                DomainKind::Gmm => gmm_domain.concepts().iter().map(|s| s.to_string()).collect(),
                DomainKind::Glyph => glyph_domain.concepts().iter().map(|s| s.to_string()).collect(),
            };
            let svg = render_svg_scatter(&points, &labels, &concepts)?;
            writer.write(&format!("{job_name}/samples.svg"), svg.as_bytes())?;
        }
        RenderKind::Ppm => {
            for (record, sample) in profile.records.iter().zip(&samples) {
                if record.sample_id >= max_images {
                    continue;
                }
                let img: Tensor = domain.to_domain_coords(sample)?;
                let ppm = render_ppm(&img)?;
                writer.write(
                    &format!("{job_name}/sample_{}_{:03}.ppm", record.seed, record.sample_id),
                    &ppm,
                )?;
            }
        }
    }
    Ok(())
}
