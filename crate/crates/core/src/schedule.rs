//! Forward-process noise schedule and inference-time step grid.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Training-time diffusion schedule: betas, alphas and their running product.
#[derive(Clone, Debug)]
pub struct NoiseSchedule {
    t_train: usize,
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

/// Linear beta interpolation inclusive of both endpoints; the cumulative
/// products are formed in f64.
pub fn linear_schedule(t_train: usize, beta_min: f64, beta_max: f64) -> Result<NoiseSchedule> {
    if t_train == 0 {
        return Err(Error::Config("t_train must be positive".into()));
    }
    if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
        return Err(Error::Config(format!(
            "beta bounds must satisfy 0 < beta_min <= beta_max < 1, got [{beta_min}, {beta_max}]"
        )));
    }
    let betas: Vec<f64> = if t_train == 1 {
        vec![beta_min]
    } else {
        (0..t_train)
            .map(|t| beta_min + (beta_max - beta_min) * t as f64 / (t_train - 1) as f64)
            .collect()
    };
    let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bars = Vec::with_capacity(t_train);
    let mut prod = 1.0f64;
    for &a in &alphas {
        prod *= a;
        alpha_bars.push(prod);
    }
    Ok(NoiseSchedule { t_train, betas, alphas, alpha_bars })
}

impl NoiseSchedule {
    pub fn t_train(&self) -> usize {
        self.t_train
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }
}

/// Descending inference grid `t_i = round((T-1) * (1 - i/(n-1)))`.
///
/// Starts at `T-1`, ends at 0, strictly decreasing for `n <= T`.
pub fn timestep_grid(t_train: usize, n_steps: usize) -> Result<Vec<usize>> {
    if n_steps < 2 {
        return Err(Error::Config(format!(
            "timestep grid needs at least 2 steps, got {n_steps}"
        )));
    }
    if n_steps > t_train {
        return Err(Error::Config(format!(
            "n_steps {n_steps} exceeds t_train {t_train}"
        )));
    }
    let top = (t_train - 1) as f64;
    let grid: Vec<usize> = (0..n_steps)
        .map(|i| (top * (1.0 - i as f64 / (n_steps - 1) as f64)).round() as usize)
        .collect();
    debug_assert!(grid.windows(2).all(|w| w[0] > w[1]));
    Ok(grid)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    Ddpm,
    Ddim,
}

/// Inference-time sampler settings.
///
/// `clamp` is the data box the predicted clean sample is clipped to; it
/// bounds guidance overshoot at high scales.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub n_steps: usize,
    pub kind: SamplerKind,
    pub eta: f64,
    pub guidance_scale: f64,
    pub clamp: (f64, f64),
}

impl SamplerConfig {
    /// Oracle-domain defaults: 25 deterministic steps, guidance off (the
    /// analytic denoiser is exact; guidance would distort it).
    pub fn gmm_default() -> SamplerConfig {
        SamplerConfig {
            n_steps: 25,
            kind: SamplerKind::Ddim,
            eta: 0.0,
            guidance_scale: 1.0,
            clamp: (-10.0, 10.0),
        }
    }

    /// Trained-model defaults: 25 ancestral steps at guidance 7.5. The
    /// clamp box leaves headroom beyond the [-1,1] data range; clipping
    /// tighter visibly distorts high-guidance trajectories.
    pub fn glyph_default() -> SamplerConfig {
        SamplerConfig {
            n_steps: 25,
            kind: SamplerKind::Ddpm,
            eta: 0.0,
            guidance_scale: 7.5,
            clamp: (-2.0, 2.0),
        }
    }

    pub fn validate(&self, schedule: &NoiseSchedule) -> Result<()> {
        if self.n_steps < 2 || self.n_steps > schedule.t_train() {
            return Err(Error::Config(format!(
                "n_steps must lie in [2, {}], got {}",
                schedule.t_train(),
                self.n_steps
            )));
        }
        if self.guidance_scale < 0.0 {
            return Err(Error::Config(format!(
                "guidance_scale must be >= 0, got {}",
                self.guidance_scale
            )));
        }
        if self.eta < 0.0 {
            return Err(Error::Config(format!("eta must be >= 0, got {}", self.eta)));
        }
        if !(self.clamp.0 < self.clamp.1) {
            return Err(Error::Config(format!(
                "clamp box is empty: [{}, {}]",
                self.clamp.0, self.clamp.1
            )));
        }
        Ok(())
    }
}
