use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use ffpnet::data::{synth_hyper, synth_seg, SynthHyperParams, SynthSegParams};
use ffpnet::run::{self, EvalOptions, RunConfig, Split};
use ffpnet::verify::run_suite;
use ffpnet::Error;
use serde_json::json;

#[derive(Parser)]
#[command(name = "ffpnet", version, about = "Feature fusion pyramid networks for remote sensing imagery")]
struct Cli {
    /// Run config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SynthKind {
    Hyper,
    Seg,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Test,
    Train,
    All,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset plus a ready-to-use run config.
    Synth {
        #[arg(long, value_enum)]
        kind: SynthKind,
        #[arg(long)]
        height: Option<usize>,
        #[arg(long)]
        width: Option<usize>,
        /// Spectral bands (hyper only).
        #[arg(long)]
        bands: Option<usize>,
        #[arg(long)]
        classes: Option<usize>,
        /// Gaussian noise σ (hyper only).
        #[arg(long)]
        noise: Option<f64>,
        /// Rectangle count (seg only).
        #[arg(long)]
        rectangles: Option<usize>,
    },
    /// Train from --config and write a checkpoint to --out.
    Train {
        #[arg(long)]
        epochs: Option<usize>,
        /// Use full-width networks instead of the desk-scale widths.
        #[arg(long)]
        full_width: bool,
    },
    /// Evaluate a checkpoint on its dataset (or the one in --config).
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Boundary erosion radius.
        #[arg(long)]
        erode: Option<usize>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        /// Classify labeled pixels only instead of the whole image.
        #[arg(long)]
        labeled_only: bool,
    },
    /// Predict a class map for an FFPT band stack or a P6 image.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
    },
    /// Finite-difference gradient checks over ops, modules and networks.
    Gradcheck {
        /// Restrict to named checks or kinds (ops, modules, networks).
        #[arg(long)]
        only: Vec<String>,
    },
}

/// 1 verification failure, 2 configuration or data error, 3 numerical abort.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Oracle(_) => 1,
        Error::NonFinite(_) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).format_timestamp(None).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn write_file(path: &Path, text: &str) -> ffpnet::Result<()> {
    fs::write(path, text).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

fn dispatch(cli: Cli) -> ffpnet::Result<ExitCode> {
    let seed = cli.seed.unwrap_or(run::DEFAULT_SEED);
    match cli.command {
        Command::Synth { kind, height, width, bands, classes, noise, rectangles } => {
            let out = cli.out.unwrap_or_else(|| PathBuf::from("synth"));
            let (header, mut files, config) = match kind {
                SynthKind::Hyper => {
                    let d = SynthHyperParams::default();
                    let p = SynthHyperParams {
                        height: height.unwrap_or(d.height),
                        width: width.unwrap_or(d.width),
                        bands: bands.unwrap_or(d.bands),
                        classes: classes.unwrap_or(d.classes),
                        noise: noise.unwrap_or(d.noise),
                    };
                    let header = format!(
                        "# synthetic hypercube: height {} width {} bands {} classes {} noise {} seed {seed}",
                        p.height, p.width, p.bands, p.classes, p.noise
                    );
                    let config = json!({
                        "task": "classify",
                        "data": {"bands": "bands.ffpt", "labels": "labels.ffpt", "classes": "classes.txt", "palette": "palette.txt"},
                    });
                    (header, synth_hyper(&p, seed, &out)?.files, config)
                }
                SynthKind::Seg => {
                    let d = SynthSegParams::default();
                    let p = SynthSegParams {
                        height: height.unwrap_or(d.height),
                        width: width.unwrap_or(d.width),
                        classes: classes.unwrap_or(d.classes),
                        rectangles: rectangles.unwrap_or(d.rectangles),
                        noise: d.noise,
                    };
                    let header = format!(
                        "# synthetic segmentation pair: height {} width {} classes {} rectangles {} seed {seed}",
                        p.height, p.width, p.classes, p.rectangles
                    );
                    let config = json!({
                        "task": "segment",
                        "data": {"images": [{"image": "image.ppm", "labels": "labels.ppm"}], "palette": "palette.txt", "classes": "classes.txt"},
                    });
                    (header, synth_seg(&p, seed, &out)?.files, config)
                }
            };
            let config_path = out.join("run.json");
            write_file(&config_path, &(serde_json::to_string_pretty(&config)? + "\n"))?;
            files.push(config_path);
            println!("{header}");
            for f in files {
                println!("{}", f.display());
            }
        }
        Command::Train { epochs, full_width } => {
            let path = cli.config.ok_or_else(|| Error::Usage("train needs --config".into()))?;
            let mut cfg = RunConfig::load(&path)?;
            cfg.seed = cli.seed.or(cfg.seed);
            cfg.out = cli.out.or(cfg.out);
            cfg.epochs = epochs.or(cfg.epochs);
            cfg.full_width |= full_width;
            let outcome = run::train(cfg)?;
            println!("checkpoint: {}", outcome.checkpoint.display());
            if let Some(m) = outcome.report.get("test_metrics").filter(|m| !m.is_null()) {
                println!("oa {} aa {} kappa {} mean_f1 {} miou {}", m["oa"], m["aa"], m["kappa"], m["mean_f1"], m["miou"]);
            }
        }
        Command::Eval { checkpoint, erode, split, labeled_only } => {
            let data = cli.config.as_deref().map(RunConfig::load).transpose()?.map(|c| c.data);
            let split = match split {
                SplitArg::Test => Split::Test,
                SplitArg::Train => Split::Train,
                SplitArg::All => Split::All,
            };
            let opts = EvalOptions { out: cli.out, data, erode, split, labeled_only };
            let outcome = run::evaluate(&checkpoint, &opts)?;
            let m = &outcome.metrics;
            println!("evaluated {} pixels", outcome.evaluated);
            println!("oa {} aa {} kappa {} mean_f1 {} miou {}", m.oa, m.aa, m.kappa, m.mean_f1, m.miou);
            for f in outcome.files {
                println!("{}", f.display());
            }
        }
        Command::Predict { checkpoint, input } => {
            let out = cli.out.unwrap_or_else(|| checkpoint.join("predict"));
            for f in run::predict(&checkpoint, &input, &out)? {
                println!("{}", f.display());
            }
        }
        Command::Gradcheck { only } => {
            let results = run_suite(seed, &only)?;
            println!("{:<8} {:<24} {:>12} {:>9}  {:<6} worst", "kind", "check", "max_rel_err", "tol", "status");
            for r in &results {
                let status = if r.passed() { "pass" } else { "FAIL" };
                println!("{:<8} {:<24} {:>12.3e} {:>9.0e}  {:<6} {}", r.kind.label(), r.name, r.max_rel_error, r.tolerance, status, r.worst);
            }
            let worst = results.iter().filter(|r| !r.passed()).max_by(|a, b| (a.max_rel_error / a.tolerance).total_cmp(&(b.max_rel_error / b.tolerance)));
            if let Some(w) = worst {
                return Err(Error::Oracle(format!("{} exceeds {:.0e} with {:.3e} at {}", w.name, w.tolerance, w.max_rel_error, w.worst)));
            }
            println!("all {} checks passed", results.len());
        }
    }
    Ok(ExitCode::SUCCESS)
}
