//! Fast in-binary verification: exercises the analytic oracle identities and
//! the bit-exact pipeline invariants, printing one line per check.

use conceptblend::blend::BlendSchedule;
use conceptblend::domains::{Conditioning, GlyphDomain, GmmDomain};
use conceptblend::sampler::{generate, reverse_step, BlockCond, Denoiser, GmmOracleDenoiser};
use conceptblend::schedule::{linear_schedule, timestep_grid, NoiseSchedule, SamplerConfig};
use conceptblend::tensor::tensor_to_bytes;
use conceptblend::{derive_stream, Error, Precision, Tensor, UnetVariant};

type Check = (&'static str, fn() -> Result<(), String>);

fn world() -> (GmmOracleDenoiser, NoiseSchedule, GmmDomain) {
    let schedule = linear_schedule(1000, 1e-4, 0.02).expect("valid schedule");
    let domain = GmmDomain::default_world();
    let oracle = GmmOracleDenoiser::new(domain.clone(), schedule.clone()).expect("oracle");
    (oracle, schedule, domain)
}

fn stream_replay() -> Result<(), String> {
    let mut a = derive_stream(42, "selftest").map_err(|e| e.to_string())?;
    let mut b = derive_stream(42, "selftest").map_err(|e| e.to_string())?;
    for i in 0..256 {
        let (x, y) = (a.next_gaussian(), b.next_gaussian());
        if x.to_bits() != y.to_bits() {
            return Err(format!("draw {i} diverged: {x} vs {y}"));
        }
    }
    Ok(())
}

fn schedule_terminal_alpha_bar() -> Result<(), String> {
    let s = linear_schedule(1000, 1e-4, 0.02).map_err(|e| e.to_string())?;
    let expected = 4.035829765375676e-5;
    let rel = (s.alpha_bar(999) - expected).abs() / expected;
    if rel > 1e-7 {
        return Err(format!("alpha_bar(999) = {}, rel err {rel}", s.alpha_bar(999)));
    }
    Ok(())
}

fn eps_reconstruction_identity() -> Result<(), String> {
    let (_, _, domain) = world();
    let mut stream = derive_stream(7, "selftest-eps").map_err(|e| e.to_string())?;
    for _ in 0..50 {
        let x_t = [5.0 * stream.next_gaussian(), 5.0 * stream.next_gaussian()];
        let ab = 0.02 + 0.96 * stream.next_uniform();
        let x0 = domain
            .analytic_x0_expectation(Conditioning::All, x_t, ab)
            .map_err(|e| e.to_string())?;
        let eps = domain
            .analytic_eps(Conditioning::All, x_t, ab)
            .map_err(|e| e.to_string())?;
        for d in 0..2 {
            let recon = ab.sqrt() * x0[d] + (1.0 - ab).sqrt() * eps[d];
            if (recon - x_t[d]).abs() > 1e-6 {
                return Err(format!("reconstruction off by {}", (recon - x_t[d]).abs()));
            }
        }
    }
    Ok(())
}

/// log p_t of the diffused mixture, written independently of the oracle path
/// (direct sum over components).
fn diffused_logpdf(domain: &GmmDomain, x: [f64; 2], ab: f64) -> f64 {
    let sqrt_ab = ab.sqrt();
    let w = 1.0 / domain.components().len() as f64;
    let mut total = 0.0f64;
    for c in domain.components() {
        let var = ab * c.variance + 1.0 - ab;
        let dx = x[0] - sqrt_ab * c.mean[0];
        let dy = x[1] - sqrt_ab * c.mean[1];
        total += w / (2.0 * std::f64::consts::PI * var) * (-(dx * dx + dy * dy) / (2.0 * var)).exp();
    }
    total.ln()
}

fn score_identity() -> Result<(), String> {
    // eps_hat = -sqrt(1-ab) * grad log p_t, gradient by central differences
    let (_, _, domain) = world();
    let mut stream = derive_stream(8, "selftest-score").map_err(|e| e.to_string())?;
    let h = 1e-5;
    for _ in 0..20 {
        let x = [4.0 * stream.next_gaussian(), 4.0 * stream.next_gaussian()];
        let ab = 0.05 + 0.9 * stream.next_uniform();
        let eps = domain
            .analytic_eps(Conditioning::All, x, ab)
            .map_err(|e| e.to_string())?;
        for d in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[d] += h;
            xm[d] -= h;
            let score = (diffused_logpdf(&domain, xp, ab) - diffused_logpdf(&domain, xm, ab)) / (2.0 * h);
            let expected = -(1.0 - ab).sqrt() * score;
            let rel = (eps[d] - expected).abs() / (eps[d].abs() + expected.abs()).max(1e-8);
            if rel > 1e-3 {
                return Err(format!("score identity off: rel {rel} at ab={ab}"));
            }
        }
    }
    Ok(())
}

fn generation_replay() -> Result<(), String> {
    let (oracle, schedule, _) = world();
    let config = SamplerConfig::gmm_default();
    let a = oracle.table().encode("A").map_err(|e| e.to_string())?;
    let null = oracle.table().null_embedding();
    let blend = BlendSchedule::single("A", &a, config.n_steps);
    let x1 = generate(&oracle, &blend, &null, &schedule, &config, 42, 0).map_err(|e| e.to_string())?;
    let x2 = generate(&oracle, &blend, &null, &schedule, &config, 42, 0).map_err(|e| e.to_string())?;
    if tensor_to_bytes(&x1) != tensor_to_bytes(&x2) {
        return Err("replay diverged".into());
    }
    Ok(())
}

fn reduction_suite() -> Result<(), String> {
    let (oracle, schedule, _) = world();
    let config = SamplerConfig::gmm_default();
    let table = oracle.table();
    let a = table.encode("A").map_err(|e| e.to_string())?;
    let null = table.null_embedding();
    let n = config.n_steps;
    let baseline = BlendSchedule::single("A", &a, n);

    let reductions: Vec<(&str, BlendSchedule)> = vec![
        ("textual w=1", BlendSchedule::textual("A", &a, "B", &table.encode("B").unwrap(), 1.0, n).unwrap()),
        ("textual p1=p2", BlendSchedule::textual("A", &a, "A", &a, 0.5, n).unwrap()),
        ("switch s=n", BlendSchedule::switch("A", &a, "B", &table.encode("B").unwrap(), n, n).unwrap()),
        ("alternate all-p1", BlendSchedule::alternate("A", &a, "B", &table.encode("B").unwrap(), Some(vec![true; n]), n).unwrap()),
        ("unet p1=p2", BlendSchedule::unet("A", &a, "A", &a, UnetVariant::Enc2Dec1, n)),
    ];
    for (name, schedule_blend) in &reductions {
        for sample_id in 0..2u64 {
            let x = generate(&oracle, schedule_blend, &null, &schedule, &config, 42, sample_id)
                .map_err(|e| e.to_string())?;
            let y = generate(&oracle, &baseline, &null, &schedule, &config, 42, sample_id)
                .map_err(|e| e.to_string())?;
            if tensor_to_bytes(&x) != tensor_to_bytes(&y) {
                return Err(format!("{name} does not reduce to the baseline"));
            }
        }
    }
    Ok(())
}

fn guidance_scale_one_matches_conditional_only() -> Result<(), String> {
    let (oracle, schedule, _) = world();
    let config = SamplerConfig::gmm_default();
    let a = oracle.table().encode("A").map_err(|e| e.to_string())?;
    let null = oracle.table().null_embedding();
    let blend = BlendSchedule::single("A", &a, config.n_steps);
    let full = generate(&oracle, &blend, &null, &schedule, &config, 3, 5).map_err(|e| e.to_string())?;

    // hand-rolled pipeline that never touches the unconditional branch
    let grid = timestep_grid(schedule.t_train(), config.n_steps).map_err(|e| e.to_string())?;
    let mut init = derive_stream(3, "init-latent/5").map_err(|e| e.to_string())?;
    let mut noise = derive_stream(3, "ddpm-noise/5").map_err(|e| e.to_string())?;
    let mut x = init
        .gaussian_tensor(&[2], Precision::F32)
        .map_err(|e| e.to_string())?;
    for (i, &t) in grid.iter().enumerate() {
        let eps = oracle
            .predict_eps(&x, t, &BlockCond::uniform(&a))
            .map_err(|e| e.to_string())?;
        x = reverse_step(&x, &eps, t, grid.get(i + 1).copied(), &schedule, &config, &mut noise)
            .map_err(|e| e.to_string())?;
    }
    if tensor_to_bytes(&full) != tensor_to_bytes(&x) {
        return Err("guidance 1 pipeline differs from conditional-only".into());
    }
    Ok(())
}

fn textual_swap_symmetry() -> Result<(), String> {
    let (oracle, schedule, _) = world();
    let config = SamplerConfig::gmm_default();
    let table = oracle.table();
    let (a, b) = (table.encode("A").unwrap(), table.encode("B").unwrap());
    let null = table.null_embedding();
    let ab = BlendSchedule::textual("A", &a, "B", &b, 0.5, config.n_steps).unwrap();
    let ba = BlendSchedule::textual("B", &b, "A", &a, 0.5, config.n_steps).unwrap();
    for seed in [1u64, 2, 3] {
        let x = generate(&oracle, &ab, &null, &schedule, &config, seed, 0).map_err(|e| e.to_string())?;
        let y = generate(&oracle, &ba, &null, &schedule, &config, seed, 0).map_err(|e| e.to_string())?;
        if tensor_to_bytes(&x) != tensor_to_bytes(&y) {
            return Err(format!("swap changed textual output at seed {seed}"));
        }
    }
    Ok(())
}

fn glyph_domain_checks() -> Result<(), String> {
    let d = GlyphDomain::default();
    let mut s1 = derive_stream(5, "selftest-glyph").map_err(|e| e.to_string())?;
    let mut s2 = derive_stream(5, "selftest-glyph").map_err(|e| e.to_string())?;
    let i1 = d.render("triangle", &mut s1).map_err(|e| e.to_string())?;
    let i2 = d.render("triangle", &mut s2).map_err(|e| e.to_string())?;
    if i1 != i2 {
        return Err("glyph render is not deterministic".into());
    }
    if !i1.data().iter().all(|&v| (0.0..=1.0).contains(&v)) {
        return Err("glyph pixels escape [0,1]".into());
    }
    for concept in ["circle", "cross", "square", "triangle"] {
        let base = d.base_bitmap(concept).map_err(|e| e.to_string())?;
        let (found, margin) = d.centroid_classify(&base).map_err(|e| e.to_string())?;
        if found != concept || margin <= 0.2 {
            return Err(format!("{concept} classified as {found} (margin {margin})"));
        }
    }
    Ok(())
}

fn tensor_io_roundtrip() -> Result<(), String> {
    let mut s = derive_stream(11, "selftest-io").map_err(|e| e.to_string())?;
    let t = s
        .gaussian_tensor(&[4, 7], Precision::F32)
        .map_err(|e| e.to_string())?;
    let bytes = tensor_to_bytes(&t);
    let (back, used) = conceptblend::tensor::tensor_from_bytes(&bytes).map_err(|e| e.to_string())?;
    if used != bytes.len() || back != t {
        return Err("tensor byte round-trip failed".into());
    }
    let _ = Tensor::zeros(vec![2, 2], Precision::F32);
    Ok(())
}

pub fn run() -> Result<(), Error> {
    let checks: Vec<Check> = vec![
        ("stream replay is bit-exact", stream_replay),
        ("linear schedule terminal alpha-bar", schedule_terminal_alpha_bar),
        ("oracle reconstruction identity", eps_reconstruction_identity),
        ("oracle matches numeric score", score_identity),
        ("generation replay is bit-exact", generation_replay),
        ("reduction suite collapses to baseline", reduction_suite),
        ("guidance 1 equals conditional-only", guidance_scale_one_matches_conditional_only),
        ("textual w=0.5 swap symmetry", textual_swap_symmetry),
        ("glyph domain determinism and classification", glyph_domain_checks),
        ("tensor byte format round-trip", tensor_io_roundtrip),
    ];
    let mut failures = 0usize;
    for (name, check) in checks {
        match check() {
            Ok(()) => println!("[ok]   {name}"),
            Err(detail) => {
                failures += 1;
                println!("[FAIL] {name}: {detail}");
            }
        }
    }
    if failures > 0 {
        Err(Error::Numeric(format!("{failures} selftest check(s) failed")))
    } else {
        println!("all selftest checks passed");
        Ok(())
    }
}
