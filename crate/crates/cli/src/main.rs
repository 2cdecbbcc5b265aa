//! Command-line front end. Subcommands either execute an experiment config
//! directly (`run`) or synthesize a single-job config from flags (`train`,
//! `sample`, `blend`, `sweep`, `eval`), so every invocation goes through the
//! same manifest-writing harness. Exit codes: 0 success, 1 validation
//! error, 2 numeric or I/O error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use conceptblend::checkpoint::Checkpoint;
use conceptblend::harness::run_experiment;
use conceptblend::rank::{aggregate_rankings, parse_ballots_csv, rank_table_csv};

mod selftest;

#[derive(Parser)]
#[command(name = "conceptblend", version, about = "Concept blending with a desk-scale conditional diffusion engine", disable_help_subcommand = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Output directory for data files and the run manifest.
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Base seed for sample streams.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Concept world: gmm (analytic oracle) or glyph (trained model).
    #[arg(long)]
    domain: Option<String>,
    /// Checkpoint to generate with (implies the trained model path).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Execute an experiment config end to end.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Train a model and write checkpoint + loss curve.
    Train {
        /// Optional full experiment config; flags below are ignored if set.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "glyph")]
        domain: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Single-prompt generation.
    Sample {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        concept: String,
        #[arg(long, default_value_t = 4)]
        n: usize,
    },
    /// Generate and score one blend configuration.
    Blend {
        #[command(flatten)]
        common: CommonArgs,
        /// textual | switch | alternate | unet | single
        #[arg(long)]
        method: String,
        /// Concept pair "p1,p2".
        #[arg(long)]
        pair: Option<String>,
        /// Concept for method=single.
        #[arg(long)]
        concept: Option<String>,
        #[arg(long)]
        w: Option<f64>,
        #[arg(long)]
        switch_step: Option<usize>,
        /// Alternate pattern like 1010... (1 = first prompt).
        #[arg(long)]
        pattern: Option<String>,
        /// Alternate ratio: number of steps showing the first prompt.
        #[arg(long)]
        ratio_k: Option<usize>,
        /// unet variant: enc2_dec1 | enc1_dec2
        #[arg(long)]
        variant: Option<String>,
        #[arg(long, default_value_t = 100)]
        n: usize,
        /// svg | ppm | none
        #[arg(long)]
        render: Option<String>,
    },
    /// Sweep a blend parameter and tabulate the results.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        /// switch_step | alternate_ratio | textual_w
        #[arg(long)]
        sweep: String,
        #[arg(long)]
        pair: String,
        /// "a..b" inclusive or comma-separated values.
        #[arg(long)]
        grid: String,
        #[arg(long, default_value_t = 1000)]
        n: usize,
    },
    /// Per-concept accuracy and held-out loss of the active model.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value_t = 400)]
        n: usize,
    },
    /// Aggregate survey-style rank ballots into mean/mode tables.
    Rank {
        #[arg(long)]
        ballots: PathBuf,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Run the oracle and invariant checks.
    Selftest,
}

fn resolve_domain(common: &CommonArgs) -> Result<String, conceptblend::Error> {
    if let Some(d) = &common.domain {
        return Ok(d.clone());
    }
    if let Some(path) = &common.checkpoint {
        // infer the world from the data width persisted in the checkpoint
        let ck = Checkpoint::load(path)?;
        return Ok(if ck.dims.input == 256 { "glyph" } else { "gmm" }.to_owned());
    }
    Ok("gmm".to_owned())
}

fn common_sections(common: &CommonArgs, domain: &str) -> Result<String, conceptblend::Error> {
    let mut cfg = format!("[run]\nseeds = {}\n\n[domain]\nkind = {domain}\n", common.seed);
    if let Some(path) = &common.checkpoint {
        let canonical = path.to_string_lossy();
        cfg.push_str(&format!("\n[checkpoint]\npath = {canonical}\n"));
    }
    Ok(cfg)
}

fn push_opt<T: std::fmt::Display>(cfg: &mut String, key: &str, v: &Option<T>) {
    if let Some(v) = v {
        cfg.push_str(&format!("{key} = {v}\n"));
    }
}

fn execute(cli: Cli) -> Result<(), conceptblend::Error> {
    match cli.command {
        Command::Run { config, out_dir } => {
            let text = std::fs::read_to_string(&config)?;
            let manifest = run_experiment(&text, &out_dir)?;
            println!(
                "run complete: {} job(s), manifest at {}",
                manifest.jobs.len(),
                out_dir.join("run_manifest.json").display()
            );
            Ok(())
        }
        Command::Train { config, domain, seed, epochs, out_dir } => {
            let text = match config {
                Some(path) => std::fs::read_to_string(&path)?,
                None => {
                    let mut cfg = format!("[domain]\nkind = {domain}\n\n[train]\n");
                    push_opt(&mut cfg, "seed", &seed);
                    push_opt(&mut cfg, "epochs", &epochs);
                    cfg.push_str("\n[job:train]\nkind = train\n");
                    cfg
                }
            };
            let manifest = run_experiment(&text, &out_dir)?;
            println!(
                "training complete, model {} at {}",
                manifest.model,
                out_dir.display()
            );
            Ok(())
        }
        Command::Sample { common, concept, n } => {
            let domain = resolve_domain(&common)?;
            let mut cfg = common_sections(&common, &domain)?;
            cfg.push_str(&format!(
                "\n[job:sample]\nkind = sample\nconcept = {concept}\nn_samples = {n}\n"
            ));
            run_experiment(&cfg, &common.out_dir)?;
            println!("wrote samples to {}", common.out_dir.join("sample").display());
            Ok(())
        }
        Command::Blend {
            common, method, pair, concept, w, switch_step, pattern, ratio_k, variant, n, render,
        } => {
            let domain = resolve_domain(&common)?;
            let mut cfg = common_sections(&common, &domain)?;
            cfg.push_str(&format!("\n[job:blend]\nkind = blend\nmethod = {method}\n"));
            push_opt(&mut cfg, "pair", &pair);
            push_opt(&mut cfg, "concept", &concept);
            push_opt(&mut cfg, "w", &w);
            push_opt(&mut cfg, "switch_step", &switch_step);
            push_opt(&mut cfg, "pattern", &pattern);
            push_opt(&mut cfg, "ratio_k", &ratio_k);
            push_opt(&mut cfg, "variant", &variant);
            push_opt(&mut cfg, "render", &render);
            cfg.push_str(&format!("n_samples = {n}\n"));
            let manifest = run_experiment(&cfg, &common.out_dir)?;
            let outputs = &manifest.jobs[0].outputs;
            println!("blend profile written: {} file(s)", outputs.len());
            Ok(())
        }
        Command::Sweep { common, sweep, pair, grid, n } => {
            let domain = resolve_domain(&common)?;
            let mut cfg = common_sections(&common, &domain)?;
            cfg.push_str(&format!(
                "\n[job:sweep]\nkind = sweep\nsweep = {sweep}\npair = {pair}\ngrid = {grid}\nn_samples = {n}\n"
            ));
            run_experiment(&cfg, &common.out_dir)?;
            println!("sweep written to {}", common.out_dir.join("sweep/sweep.csv").display());
            Ok(())
        }
        Command::Eval { common, n } => {
            let domain = resolve_domain(&common)?;
            let mut cfg = common_sections(&common, &domain)?;
            cfg.push_str(&format!("\n[job:eval]\nkind = eval\nn_samples = {n}\n"));
            run_experiment(&cfg, &common.out_dir)?;
            println!("evaluation written to {}", common.out_dir.join("eval").display());
            Ok(())
        }
        Command::Rank { ballots, out_dir } => {
            let text = std::fs::read_to_string(&ballots)?;
            let groups = parse_ballots_csv(&text)?;
            let mut summaries = Vec::new();
            for g in groups {
                let summary = aggregate_rankings(&g.ballots)?;
                summaries.push((g.label, summary));
            }
            let csv = rank_table_csv(&summaries)?;
            std::fs::create_dir_all(&out_dir)?;
            let path = out_dir.join("rank_summary.csv");
            std::fs::write(&path, &csv)?;
            print!("{csv}");
            println!("# written to {}", path.display());
            Ok(())
        }
        Command::Selftest => selftest::run(),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
