//! INI-style experiment configuration: `[section]` headers, `key = value`
//! pairs, `#` comments, UTF-8. Parsing is strict — unknown sections or keys
//! are configuration errors that list the offenders, so a typo cannot
//! silently change an experiment.

use std::collections::BTreeMap;

use crate::blend::{MethodSpec, UnetVariant};
use crate::error::{Error, Result};
use crate::eval::SweepKind;
use crate::schedule::{SamplerConfig, SamplerKind};
use crate::train::TrainConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct IniSection {
    pub name: String,
    pub entries: Vec<(String, String)>,
}

/// Raw syntactic parse; key semantics are applied by `ExperimentConfig`.
pub fn parse_ini(text: &str) -> Result<Vec<IniSection>> {
    let mut sections: Vec<IniSection> = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| Error::Config(format!("line {}: unterminated section header", ln + 1)))?
                .trim();
            if name.is_empty() {
                return Err(Error::Config(format!("line {}: empty section name", ln + 1)));
            }
            sections.push(IniSection { name: name.to_owned(), entries: Vec::new() });
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected 'key = value'", ln + 1)))?;
        let section = sections
            .last_mut()
            .ok_or_else(|| Error::Config(format!("line {}: key outside any [section]", ln + 1)))?;
        // strip trailing comments on value lines
        let value = match value.split_once('#') {
            Some((v, _)) => v,
            None => value,
        };
        section
            .entries
            .push((key.trim().to_owned(), value.trim().to_owned()));
    }
    Ok(sections)
}

/// Typed key-value access with unknown-key tracking.
struct SectionReader<'a> {
    section: &'a IniSection,
    known: Vec<&'static str>,
}

impl<'a> SectionReader<'a> {
    fn new(section: &'a IniSection) -> SectionReader<'a> {
        SectionReader { section, known: Vec::new() }
    }

    fn get(&mut self, key: &'static str) -> Option<&'a str> {
        self.known.push(key);
        self.section
            .entries
            .iter()
            .rev()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &'static str) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v.parse::<T>().map(Some).map_err(|_| {
                Error::Config(format!(
                    "[{}] {key}: cannot parse {v:?}",
                    self.section.name
                ))
            }),
        }
    }

    fn require<T: std::str::FromStr>(&mut self, key: &'static str) -> Result<T> {
        self.parse(key)?.ok_or_else(|| {
            Error::Config(format!("[{}] missing required key {key}", self.section.name))
        })
    }

    fn finish(self, unknown: &mut Vec<String>) {
        for (k, _) in &self.section.entries {
            if !self.known.contains(&k.as_str()) {
                unknown.push(format!("[{}] {k}", self.section.name));
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DomainKind {
    Gmm,
    Glyph,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSpec {
    pub t_train: usize,
    pub beta_min: f64,
    pub beta_max: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec { t_train: 1000, beta_min: 1e-4, beta_max: 0.02 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum RenderKind {
    Svg,
    Ppm,
    None,
}

#[derive(Clone, Debug, PartialEq)]
pub enum JobKind {
    /// Train on the configured domain; writes checkpoint + loss curve.
    Train,
    /// Single-prompt sampling with rendered outputs.
    Sample { concept: String, n_samples: usize, render: RenderKind },
    /// One blend profile (per-sample records + aggregates, optional render).
    Blend { method: MethodSpec, n_samples: usize, render: RenderKind },
    /// Parameter sweep to a CSV table.
    Sweep { kind: SweepKind, pair: (String, String), grid: Vec<f64>, n_samples: usize },
    /// Per-concept single-prompt accuracy report.
    Eval { n_samples: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct JobSpec {
    pub name: String,
    pub kind: JobKind,
}

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub seeds: Vec<u64>,
    pub domain: DomainKind,
    pub noise: NoiseSpec,
    pub sampler: SamplerConfig,
    pub embedding_dim: usize,
    pub train: Option<TrainConfig>,
    pub checkpoint: Option<String>,
    pub jobs: Vec<JobSpec>,
}

fn parse_seed_list(v: &str) -> Result<Vec<u64>> {
    let seeds: Result<Vec<u64>> = v
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<u64>()
                .map_err(|_| Error::Config(format!("bad seed {s:?}")))
        })
        .collect();
    let seeds = seeds?;
    if seeds.is_empty() {
        return Err(Error::Config("seed list is empty".into()));
    }
    Ok(seeds)
}

/// `a..b` (inclusive) or a comma list of numbers.
fn parse_grid(v: &str) -> Result<Vec<f64>> {
    if let Some((a, b)) = v.split_once("..") {
        let lo: i64 = a.trim().parse().map_err(|_| Error::Config(format!("bad grid start {a:?}")))?;
        let hi: i64 = b.trim().parse().map_err(|_| Error::Config(format!("bad grid end {b:?}")))?;
        if hi < lo {
            return Err(Error::Config(format!("grid range {v:?} is empty")));
        }
        return Ok((lo..=hi).map(|x| x as f64).collect());
    }
    v.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("bad grid value {s:?}")))
        })
        .collect()
}

fn parse_pair(v: &str) -> Result<(String, String)> {
    let mut parts = v.split(',').map(str::trim);
    match (parts.next(), parts.next(), parts.next()) {
        (Some(a), Some(b), None) if !a.is_empty() && !b.is_empty() => {
            Ok((a.to_owned(), b.to_owned()))
        }
        _ => Err(Error::Config(format!("pair must be 'p1,p2', got {v:?}"))),
    }
}

pub fn parse_method(
    kind: &str,
    pair: Option<(String, String)>,
    concept: Option<String>,
    w: Option<f64>,
    switch_step: Option<usize>,
    pattern: Option<String>,
    ratio_k: Option<usize>,
    variant: Option<String>,
    n_steps: usize,
) -> Result<MethodSpec> {
    let need_pair = |pair: Option<(String, String)>| {
        pair.ok_or_else(|| Error::Config(format!("method {kind} requires pair = p1,p2")))
    };
    match kind {
        "single" => {
            let concept =
                concept.ok_or_else(|| Error::Config("method single requires concept".into()))?;
            Ok(MethodSpec::Single { concept })
        }
        "textual" => {
            let (p1, p2) = need_pair(pair)?;
            Ok(MethodSpec::Textual { p1, p2, w: w.unwrap_or(0.5) })
        }
        "switch" => {
            let (p1, p2) = need_pair(pair)?;
            let switch_step = switch_step
                .ok_or_else(|| Error::Config("method switch requires switch_step".into()))?;
            Ok(MethodSpec::Switch { p1, p2, switch_step })
        }
        "alternate" => {
            let (p1, p2) = need_pair(pair)?;
            let pattern = match (pattern, ratio_k) {
                (Some(_), Some(_)) => {
                    return Err(Error::Config(
                        "alternate takes either pattern or ratio_k, not both".into(),
                    ))
                }
                (Some(p), None) => {
                    let bits: Result<Vec<bool>> = p
                        .chars()
                        .map(|c| match c {
                            '1' | 'T' => Ok(true),
                            '0' | 'F' => Ok(false),
                            other => Err(Error::Config(format!(
                                "pattern characters must be 0/1/T/F, got {other:?}"
                            ))),
                        })
                        .collect();
                    bits?
                }
                (None, Some(k)) => crate::blend::balanced_pattern(k, n_steps),
                (None, None) => (0..n_steps).map(|i| i % 2 == 0).collect(),
            };
            Ok(MethodSpec::Alternate { p1, p2, pattern })
        }
        "unet" => {
            let (p1, p2) = need_pair(pair)?;
            let variant = match variant.as_deref() {
                None | Some("enc2_dec1") => UnetVariant::Enc2Dec1,
                Some("enc1_dec2") => UnetVariant::Enc1Dec2,
                Some(other) => {
                    return Err(Error::Config(format!("unknown unet variant {other:?}")))
                }
            };
            Ok(MethodSpec::Unet { p1, p2, variant })
        }
        other => Err(Error::Config(format!("unknown method {other:?}"))),
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<ExperimentConfig> {
        let sections = parse_ini(text)?;
        let mut unknown_sections = Vec::new();
        let mut unknown_keys = Vec::new();

        let mut by_name: BTreeMap<&str, &IniSection> = BTreeMap::new();
        let mut jobs_sections: Vec<&IniSection> = Vec::new();
        for s in &sections {
            if let Some(job) = s.name.strip_prefix("job:") {
                if job.trim().is_empty() {
                    return Err(Error::Config("job section needs a name: [job:NAME]".into()));
                }
                jobs_sections.push(s);
            } else if ["run", "domain", "noise", "sampler", "embedding", "train", "checkpoint"]
                .contains(&s.name.as_str())
            {
                if by_name.insert(s.name.as_str(), s).is_some() {
                    return Err(Error::Config(format!("duplicate section [{}]", s.name)));
                }
            } else {
                unknown_sections.push(format!("[{}]", s.name));
            }
        }
        if !unknown_sections.is_empty() {
            return Err(Error::Config(format!(
                "unknown sections: {}",
                unknown_sections.join(", ")
            )));
        }

        let domain_section = by_name
            .get("domain")
            .ok_or_else(|| Error::Config("missing [domain] section".into()))?;
        let mut r = SectionReader::new(domain_section);
        let domain = match r.require::<String>("kind")?.as_str() {
            "gmm" => DomainKind::Gmm,
            "glyph" => DomainKind::Glyph,
            other => return Err(Error::Config(format!("unknown domain kind {other:?}"))),
        };
        r.finish(&mut unknown_keys);

        let mut seeds = vec![42u64];
        if let Some(s) = by_name.get("run") {
            let mut r = SectionReader::new(s);
            if let Some(v) = r.get("seeds") {
                seeds = parse_seed_list(v)?;
            }
            r.finish(&mut unknown_keys);
        }

        let mut noise = NoiseSpec::default();
        if let Some(s) = by_name.get("noise") {
            let mut r = SectionReader::new(s);
            if let Some(v) = r.parse("t_train")? {
                noise.t_train = v;
            }
            if let Some(v) = r.parse("beta_min")? {
                noise.beta_min = v;
            }
            if let Some(v) = r.parse("beta_max")? {
                noise.beta_max = v;
            }
            r.finish(&mut unknown_keys);
        }

        let mut sampler = match domain {
            DomainKind::Gmm => SamplerConfig::gmm_default(),
            DomainKind::Glyph => SamplerConfig::glyph_default(),
        };
        if let Some(s) = by_name.get("sampler") {
            let mut r = SectionReader::new(s);
            if let Some(v) = r.parse("n_steps")? {
                sampler.n_steps = v;
            }
            if let Some(v) = r.get("kind") {
                sampler.kind = match v {
                    "ddpm" => SamplerKind::Ddpm,
                    "ddim" => SamplerKind::Ddim,
                    other => return Err(Error::Config(format!("unknown sampler kind {other:?}"))),
                };
            }
            if let Some(v) = r.parse("eta")? {
                sampler.eta = v;
            }
            if let Some(v) = r.parse("guidance_scale")? {
                sampler.guidance_scale = v;
            }
            if let Some(v) = r.parse("clamp_min")? {
                sampler.clamp.0 = v;
            }
            if let Some(v) = r.parse("clamp_max")? {
                sampler.clamp.1 = v;
            }
            r.finish(&mut unknown_keys);
        }

        let mut embedding_dim = 16usize;
        if let Some(s) = by_name.get("embedding") {
            let mut r = SectionReader::new(s);
            if let Some(v) = r.parse("dim")? {
                embedding_dim = v;
            }
            r.finish(&mut unknown_keys);
        }

        let mut train = None;
        if let Some(s) = by_name.get("train") {
            let mut r = SectionReader::new(s);
            let mut cfg = match domain {
                DomainKind::Gmm => TrainConfig::gmm_default(),
                DomainKind::Glyph => TrainConfig::glyph_default(),
            };
            if let Some(v) = r.parse("epochs")? {
                cfg.epochs = v;
            }
            if let Some(v) = r.parse("batch_size")? {
                cfg.batch_size = v;
            }
            if let Some(v) = r.parse("batches_per_epoch")? {
                cfg.batches_per_epoch = v;
            }
            if let Some(v) = r.parse("learning_rate")? {
                cfg.learning_rate = v;
            }
            if let Some(v) = r.parse("beta1")? {
                cfg.beta1 = v;
            }
            if let Some(v) = r.parse("beta2")? {
                cfg.beta2 = v;
            }
            if let Some(v) = r.parse("epsilon")? {
                cfg.epsilon = v;
            }
            if let Some(v) = r.parse("p_uncond")? {
                cfg.p_uncond = v;
            }
            if let Some(v) = r.parse("seed")? {
                cfg.seed = v;
            }
            cfg.validate()?;
            train = Some(cfg);
            r.finish(&mut unknown_keys);
        }

        let mut checkpoint = None;
        if let Some(s) = by_name.get("checkpoint") {
            let mut r = SectionReader::new(s);
            checkpoint = Some(r.require::<String>("path")?);
            r.finish(&mut unknown_keys);
        }

        let mut jobs = Vec::new();
        for s in jobs_sections {
            let name = s.name.strip_prefix("job:").unwrap().trim().to_owned();
            let mut r = SectionReader::new(s);
            let kind_str: String = r.require("kind")?;
            let kind = match kind_str.as_str() {
                "train" => JobKind::Train,
                "sample" => {
                    let concept: String = r.require("concept")?;
                    let n_samples = r.parse("n_samples")?.unwrap_or(4);
                    let render = parse_render(r.get("render"), domain)?;
                    JobKind::Sample { concept, n_samples, render }
                }
                "blend" => {
                    let method_kind: String = r.require("method")?;
                    let pair = r.get("pair").map(parse_pair).transpose()?;
                    let concept = r.parse::<String>("concept")?;
                    let w = r.parse::<f64>("w")?;
                    let switch_step = r.parse::<usize>("switch_step")?;
                    let pattern = r.parse::<String>("pattern")?;
                    let ratio_k = r.parse::<usize>("ratio_k")?;
                    let variant = r.parse::<String>("variant")?;
                    let n_samples = r.parse("n_samples")?.unwrap_or(100);
                    let render = parse_render(r.get("render"), domain)?;
                    let method = parse_method(
                        &method_kind, pair, concept, w, switch_step, pattern, ratio_k, variant,
                        sampler.n_steps,
                    )?;
                    JobKind::Blend { method, n_samples, render }
                }
                "sweep" => {
                    let sweep_kind = match r.require::<String>("sweep")?.as_str() {
                        "switch_step" => SweepKind::SwitchStep,
                        "alternate_ratio" => SweepKind::AlternateRatio,
                        "textual_w" => SweepKind::TextualWeight,
                        other => {
                            return Err(Error::Config(format!("unknown sweep kind {other:?}")))
                        }
                    };
                    let pair = parse_pair(r.get("pair").ok_or_else(|| {
                        Error::Config(format!("[job:{name}] sweep requires pair"))
                    })?)?;
                    let grid = parse_grid(r.get("grid").ok_or_else(|| {
                        Error::Config(format!("[job:{name}] sweep requires grid"))
                    })?)?;
                    let n_samples = r.parse("n_samples")?.unwrap_or(1000);
                    JobKind::Sweep { kind: sweep_kind, pair, grid, n_samples }
                }
                "eval" => {
                    let n_samples = r.parse("n_samples")?.unwrap_or(400);
                    JobKind::Eval { n_samples }
                }
                other => return Err(Error::Config(format!("unknown job kind {other:?}"))),
            };
            r.finish(&mut unknown_keys);
            jobs.push(JobSpec { name, kind });
        }

        if !unknown_keys.is_empty() {
            return Err(Error::Config(format!(
                "unknown keys: {}",
                unknown_keys.join(", ")
            )));
        }
        Ok(ExperimentConfig {
            seeds,
            domain,
            noise,
            sampler,
            embedding_dim,
            train,
            checkpoint,
            jobs,
        })
    }
}

fn parse_render(v: Option<&str>, domain: DomainKind) -> Result<RenderKind> {
    match v {
        None => Ok(match domain {
            DomainKind::Gmm => RenderKind::Svg,
            DomainKind::Glyph => RenderKind::Ppm,
        }),
        Some("svg") => Ok(RenderKind::Svg),
        Some("ppm") => Ok(RenderKind::Ppm),
        Some("none") => Ok(RenderKind::None),
        Some(other) => Err(Error::Config(format!("unknown render kind {other:?}"))),
    }
}
