//! Quantitative blend evaluation: per-sample classification and affinity
//! records, aggregated profiles, and parameter sweeps.
//!
//! Samples are classified against ground truth rather than a learned
//! evaluator, so the metric cannot share failure modes with the model under
//! test: the mixture domain uses exact log-likelihood and distance to
//! component means, the glyph domain pixel distance to the base bitmaps.
//!
//! Profile files are canonical: affinity and fraction columns are keyed by
//! concept id in sorted order, and method metadata lives in the run
//! manifest, not the data files. A method that is symmetric under prompt
//! swap therefore produces byte-identical profile files either way.

use rayon::prelude::*;

use crate::blend::{BlendSchedule, MethodSpec};
use crate::domains::{GlyphDomain, GmmDomain, GLYPH_SIZE};
use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::output::format_float;
use crate::sampler::{generate, Denoiser};
use crate::schedule::{NoiseSchedule, SamplerConfig};
use crate::tensor::Tensor;

/// The world generated samples are scored against.
#[derive(Clone, Copy, Debug)]
pub enum EvalDomain<'a> {
    Gmm(&'a GmmDomain),
    Glyph(&'a GlyphDomain),
}

impl<'a> EvalDomain<'a> {
    /// Converts a raw generation output (diffusion coordinates) into domain
    /// coordinates: identity for the plane, [-1,1] -> [0,1] for images.
    pub fn to_domain_coords(&self, sample: &Tensor) -> Result<Tensor> {
        match self {
            EvalDomain::Gmm(_) => Ok(sample.clone()),
            EvalDomain::Glyph(_) => {
                if sample.len() != GLYPH_SIZE * GLYPH_SIZE {
                    return Err(Error::Shape {
                        op: "to_domain_coords",
                        detail: format!("expected 256 pixels, got {:?}", sample.shape()),
                    });
                }
                Ok(sample
                    .reshaped(vec![GLYPH_SIZE, GLYPH_SIZE])?
                    .map(|v| ((v + 1.0) / 2.0).clamp(0.0, 1.0)))
            }
        }
    }

    /// Nearest concept and margin for a raw generation output.
    pub fn classify(&self, sample: &Tensor) -> Result<(String, f64)> {
        match self {
            EvalDomain::Gmm(d) => {
                let x = [sample.data()[0], sample.data()[1]];
                Ok(d.nearest_concept(x))
            }
            EvalDomain::Glyph(d) => d.centroid_classify(&self.to_domain_coords(sample)?),
        }
    }

    /// Per-sample affinity toward one concept: log-likelihood (mixture) or
    /// negative distance to the concept's base bitmap (glyph).
    pub fn affinity(&self, sample: &Tensor, concept: &str) -> Result<f64> {
        match self {
            EvalDomain::Gmm(d) => d.concept_loglik(concept, [sample.data()[0], sample.data()[1]]),
            EvalDomain::Glyph(d) => {
                let img = self.to_domain_coords(sample)?;
                let base = d.base_bitmap(concept)?;
                let dist: f64 = img
                    .data()
                    .iter()
                    .zip(base.data())
                    .map(|(&a, &b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                Ok(-dist)
            }
        }
    }
}

/// Mean affinity of a sample set toward one concept.
pub fn concept_affinity(samples: &[Tensor], domain: &EvalDomain, concept: &str) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Contract("concept_affinity requires samples".into()));
    }
    let mut total = 0.0;
    for s in samples {
        total += domain.affinity(s, concept)?;
    }
    Ok(total / samples.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleRecord {
    pub seed: u64,
    pub sample_id: u64,
    pub nearest: String,
    pub margin: f64,
    /// Affinities toward the pair concepts, keyed in sorted-concept order.
    pub affinities: Vec<(String, f64)>,
}

#[derive(Clone, Debug)]
pub struct BlendProfile {
    pub method: MethodSpec,
    pub n_samples: usize,
    pub records: Vec<SampleRecord>,
    /// Fraction of samples nearest each pair concept (sorted order).
    pub fraction_nearest: Vec<(String, f64)>,
    /// Mean affinity toward each pair concept (sorted order).
    pub mean_affinity: Vec<(String, f64)>,
}

impl BlendProfile {
    pub fn fraction_for(&self, concept: &str) -> Option<f64> {
        self.fraction_nearest
            .iter()
            .find(|(c, _)| c == concept)
            .map(|&(_, f)| f)
    }

    /// Fraction nearest the first prompt of the pair as given.
    pub fn fraction_nearest_p1(&self) -> f64 {
        let (p1, _) = self.method.pair();
        self.fraction_for(p1).unwrap_or(0.0)
    }

    /// Canonical per-sample CSV (no method metadata; see module docs).
    pub fn per_sample_csv(&self) -> String {
        let concepts: Vec<&str> = self.mean_affinity.iter().map(|(c, _)| c.as_str()).collect();
        let mut header =
            vec!["seed".to_owned(), "sample_id".to_owned(), "nearest".to_owned(), "margin".to_owned()];
        header.extend(concepts.iter().map(|c| format!("affinity_{c}")));
        let mut out = header.join(",");
        out.push('\n');
        for r in &self.records {
            let mut row = vec![
                r.seed.to_string(),
                r.sample_id.to_string(),
                r.nearest.clone(),
                format_float(r.margin),
            ];
            row.extend(r.affinities.iter().map(|(_, a)| format_float(*a)));
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    /// Canonical aggregate CSV, one row per pair concept in sorted order.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("concept,fraction_nearest,mean_affinity\n");
        for ((c, f), (_, a)) in self.fraction_nearest.iter().zip(&self.mean_affinity) {
            out.push_str(&format!("{c},{},{}\n", format_float(*f), format_float(*a)));
        }
        out
    }
}

fn sorted_pair(method: &MethodSpec) -> Vec<String> {
    let (p1, p2) = method.pair();
    let mut v = vec![p1.to_owned()];
    if p2 != p1 {
        v.push(p2.to_owned());
    }
    v.sort();
    v
}

/// Generates `seeds x n_samples` samples under a method and scores them.
/// Raw outputs come back alongside the profile so callers can render them
/// without regenerating.
pub fn blend_profile<D: Denoiser + Sync + ?Sized>(
    denoiser: &D,
    table: &EmbeddingTable,
    method: &MethodSpec,
    domain: &EvalDomain,
    schedule: &NoiseSchedule,
    config: &SamplerConfig,
    n_samples: usize,
    seeds: &[u64],
) -> Result<(BlendProfile, Vec<Tensor>)> {
    if n_samples == 0 || seeds.is_empty() {
        return Err(Error::Config(
            "blend_profile needs n_samples >= 1 and at least one seed".into(),
        ));
    }
    let blend = BlendSchedule::from_method(method, table, config.n_steps)?;
    let null = table.null_embedding();
    let pair = sorted_pair(method);

    let jobs: Vec<(u64, u64)> = seeds
        .iter()
        .flat_map(|&s| (0..n_samples as u64).map(move |i| (s, i)))
        .collect();
    let results: Result<Vec<(SampleRecord, Tensor)>> = jobs
        .par_iter()
        .map(|&(seed, sample_id)| {
            let x = generate(denoiser, &blend, &null, schedule, config, seed, sample_id)?;
            let (nearest, margin) = domain.classify(&x)?;
            let mut affinities = Vec::with_capacity(pair.len());
            for c in &pair {
                affinities.push((c.clone(), domain.affinity(&x, c)?));
            }
            Ok((SampleRecord { seed, sample_id, nearest, margin, affinities }, x))
        })
        .collect();
    let (records, samples): (Vec<SampleRecord>, Vec<Tensor>) = results?.into_iter().unzip();

    let total = records.len() as f64;
    let fraction_nearest = pair
        .iter()
        .map(|c| {
            let n = records.iter().filter(|r| &r.nearest == c).count();
            (c.clone(), n as f64 / total)
        })
        .collect();
    let mean_affinity = pair
        .iter()
        .enumerate()
        .map(|(ci, c)| {
            let sum: f64 = records.iter().map(|r| r.affinities[ci].1).sum();
            (c.clone(), sum / total)
        })
        .collect();

    Ok((
        BlendProfile {
            method: method.clone(),
            n_samples,
            records,
            fraction_nearest,
            mean_affinity,
        },
        samples,
    ))
}

/// Which parameter a sweep walks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepKind {
    /// switch_step in 0..=n_steps
    SwitchStep,
    /// number of steps showing p1, via the balanced pattern
    AlternateRatio,
    /// textual blend weight in [0,1]
    TextualWeight,
}

impl SweepKind {
    pub fn method_for(&self, pair: (&str, &str), value: f64, n_steps: usize) -> MethodSpec {
        let (p1, p2) = (pair.0.to_owned(), pair.1.to_owned());
        match self {
            SweepKind::SwitchStep => MethodSpec::Switch { p1, p2, switch_step: value as usize },
            SweepKind::AlternateRatio => MethodSpec::Alternate {
                p1,
                p2,
                pattern: crate::blend::balanced_pattern(value as usize, n_steps),
            },
            SweepKind::TextualWeight => MethodSpec::Textual { p1, p2, w: value },
        }
    }
}

#[derive(Clone, Debug)]
pub struct SweepRow {
    pub value: f64,
    pub fraction_nearest: Vec<(String, f64)>,
    pub mean_affinity: Vec<(String, f64)>,
}

/// Runs one profile per grid value; rows come back in grid order.
#[allow(clippy::too_many_arguments)]
pub fn sweep<D: Denoiser + Sync + ?Sized>(
    denoiser: &D,
    table: &EmbeddingTable,
    kind: SweepKind,
    pair: (&str, &str),
    grid: &[f64],
    domain: &EvalDomain,
    schedule: &NoiseSchedule,
    config: &SamplerConfig,
    n_samples: usize,
    seeds: &[u64],
) -> Result<Vec<SweepRow>> {
    if grid.is_empty() {
        return Err(Error::Config("sweep grid must be nonempty".into()));
    }
    let mut rows = Vec::with_capacity(grid.len());
    for &value in grid {
        let method = kind.method_for(pair, value, config.n_steps);
        let (profile, _) =
            blend_profile(denoiser, table, &method, domain, schedule, config, n_samples, seeds)?;
        rows.push(SweepRow {
            value,
            fraction_nearest: profile.fraction_nearest,
            mean_affinity: profile.mean_affinity,
        });
    }
    Ok(rows)
}

/// CSV for a sweep: `value` column plus per-concept fraction and affinity
/// columns in sorted-concept order.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("value");
    if let Some(first) = rows.first() {
        for (c, _) in &first.fraction_nearest {
            out.push_str(&format!(",fraction_nearest_{c}"));
        }
        for (c, _) in &first.mean_affinity {
            out.push_str(&format!(",mean_affinity_{c}"));
        }
    }
    out.push('\n');
    for row in rows {
        out.push_str(&format_float(row.value));
        for (_, f) in &row.fraction_nearest {
            out.push(',');
            out.push_str(&format_float(*f));
        }
        for (_, a) in &row.mean_affinity {
            out.push(',');
            out.push_str(&format_float(*a));
        }
        out.push('\n');
    }
    out
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman_rho(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        cov += (a - mx) * (b - my);
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
    }
    if vx == 0.0 || vy == 0.0 {
        return 0.0;
    }
    cov / (vx * vy).sqrt()
}

fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite values"));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}
