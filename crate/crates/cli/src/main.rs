//! forgemix: synthesize mixed forgery images with region/type prompts,
//! inspect them, and evaluate the contrastive losses and prompt matcher.

use std::fs;
use std::io::BufReader;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use forgemix_core::losses::{
    self, gradient_check, load_image_features, load_labels, load_text_features, match_feature,
    MatchLabel, MatchMode,
};
use forgemix_core::pipeline::{lint_manifest, run, PipelineConfig};
use forgemix_core::preview::preview;
use forgemix_core::prompting::{coarse_prompt, fine_prompt, CoarseLabel};

const EXIT_FATAL: u8 = 1;
const EXIT_CHECK_FAILED: u8 = 2;

#[derive(Parser)]
#[command(name = "forgemix", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the dataset synthesis pipeline over a config file.
    Generate {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's global seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the config's worker count.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Render real | fake | mask | mixed montages for manifest samples.
    Preview {
        #[arg(long)]
        manifest: PathBuf,
        /// Comma-separated sample ids (manifest stems).
        #[arg(long, value_delimiter = ',', required = true)]
        ids: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check every manifest record against its invariants.
    Lint {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Evaluate the coarse, fine, and total losses on embedding files.
    Losses {
        /// Coarse visual embeddings (JSONL, one vector per sample).
        #[arg(long)]
        coarse: PathBuf,
        /// Coarse labels (JSONL, {"label": 0|1} per line).
        #[arg(long)]
        labels: PathBuf,
        /// Coarse prompt embeddings (JSONL, prompt_index 0 = real, 1 = fake).
        #[arg(long = "coarse-text")]
        coarse_text: Option<PathBuf>,
        /// Fine visual embeddings (JSONL).
        #[arg(long = "fine-image")]
        fine_image: PathBuf,
        /// Fine prompt embeddings (JSONL), row-aligned with --fine-image.
        #[arg(long = "fine-text")]
        fine_text: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        phi: f64,
        #[arg(long, default_value_t = 1.0)]
        tau: f64,
    },
    /// Match image features against precomputed prompt features.
    Match {
        #[arg(long = "image-features")]
        image_features: PathBuf,
        /// Prompt features aligned with the 22-entry vocabulary order.
        #[arg(long = "text-features")]
        text_features: PathBuf,
        #[arg(long, value_enum)]
        mode: Mode,
    },
    /// Compare analytic loss gradients against central finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 6)]
        n: usize,
        #[arg(long, default_value_t = 16)]
        d: usize,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Coarse,
    Fine,
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::from(EXIT_FATAL)
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode, String> {
    match cli.command {
        Command::Generate {
            config,
            seed,
            workers,
        } => {
            let mut cfg = PipelineConfig::load(&config).map_err(|e| e.to_string())?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            if let Some(workers) = workers {
                cfg.workers = workers;
            }
            let report = run(&cfg).map_err(|e| e.to_string())?;
            println!(
                "{}",
                serde_json::to_string_pretty(&report).map_err(|e| e.to_string())?
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Preview { manifest, ids, out } => {
            preview(&manifest, &ids, &out).map_err(|e| e.to_string())?;
            eprintln!("wrote {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Lint { manifest } => {
            let file = fs::File::open(&manifest).map_err(|e| e.to_string())?;
            let issues = lint_manifest(BufReader::new(file)).map_err(|e| e.to_string())?;
            if issues.is_empty() {
                println!("manifest ok");
                Ok(ExitCode::SUCCESS)
            } else {
                for issue in &issues {
                    println!("line {}: {}", issue.line, issue.message);
                }
                Ok(ExitCode::from(EXIT_CHECK_FAILED))
            }
        }
        Command::Losses {
            coarse,
            labels,
            coarse_text,
            fine_image,
            fine_text,
            phi,
            tau,
        } => {
            let open = |p: &PathBuf| {
                fs::File::open(p)
                    .map(BufReader::new)
                    .map_err(|e| format!("{}: {e}", p.display()))
            };
            let (_, coarse_visual) = load_image_features(open(&coarse)?).map_err(|e| e.to_string())?;
            let labels = load_labels(open(&labels)?).map_err(|e| e.to_string())?;
            let coarse_prompts = match &coarse_text {
                Some(path) => load_text_features(open(path)?).map_err(|e| e.to_string())?,
                // without explicit prompt features, fall back to fixed
                // orthogonal anchors (rows e0 and e1)
                None => {
                    let d = coarse_visual.dim();
                    if d < 2 {
                        return Err("default coarse prompt anchors need dim >= 2".into());
                    }
                    let mut v = vec![0.0; 2 * d];
                    v[0] = 1.0;
                    v[d + 1] = 1.0;
                    losses::EmbeddingBatch::new(2, d, v).map_err(|e| e.to_string())?
                }
            };
            let (_, fine_visual) = load_image_features(open(&fine_image)?).map_err(|e| e.to_string())?;
            let (_, fine_prompts) = load_image_features(open(&fine_text)?).map_err(|e| e.to_string())?;
            let cfg = losses::C2FConfig {
                phi,
                tau,
                ..Default::default()
            };
            cfg.validate()?;
            let report = losses::total_loss(
                &coarse_visual,
                &coarse_prompts,
                &labels,
                &fine_visual,
                &fine_prompts,
                &cfg,
            )
            .map_err(|e| e.to_string())?;
            println!(
                "{}",
                serde_json::json!({
                    "coarse": report.coarse,
                    "fine": report.fine,
                    "total": report.total,
                    "phi": phi,
                    "tau": tau,
                })
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Match {
            image_features,
            text_features,
            mode,
        } => {
            let open = |p: &PathBuf| {
                fs::File::open(p)
                    .map(BufReader::new)
                    .map_err(|e| format!("{}: {e}", p.display()))
            };
            let (ids, images) = load_image_features(open(&image_features)?).map_err(|e| e.to_string())?;
            let prompts = load_text_features(open(&text_features)?).map_err(|e| e.to_string())?;
            let mode = match mode {
                Mode::Coarse => MatchMode::Coarse,
                Mode::Fine => MatchMode::Fine,
            };
            for (i, id) in ids.iter().enumerate() {
                let outcome =
                    match_feature(images.row(i), &prompts, mode).map_err(|e| e.to_string())?;
                let line = match outcome.label {
                    MatchLabel::Coarse(label) => serde_json::json!({
                        "id": id,
                        "label": if label == CoarseLabel::Real { "real" } else { "fake" },
                        "similarity": outcome.similarity,
                        "prompt": coarse_prompt(label).text,
                    }),
                    MatchLabel::Fine(region, ftype) => serde_json::json!({
                        "id": id,
                        "region": region.as_str(),
                        "type": ftype.as_phrase(),
                        "similarity": outcome.similarity,
                        "prompt": fine_prompt(region, ftype).text,
                    }),
                };
                println!("{line}");
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Gradcheck { n, d, trials, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let report = gradient_check(n, d, trials, &mut rng).map_err(|e| e.to_string())?;
            println!(
                "{}",
                serde_json::json!({
                    "trials": report.trials,
                    "max_relative_error": report.max_relative_error,
                    "threshold": report.threshold,
                    "pass": report.passed(),
                })
            );
            if report.passed() {
                Ok(ExitCode::SUCCESS)
            } else {
                Ok(ExitCode::from(EXIT_CHECK_FAILED))
            }
        }
    }
}
