use std::collections::BTreeSet;
use std::fs;
use std::io::{self, BufReader};
use std::net::TcpListener;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use nrsed::events::tsv::{parse_detection_tsv, parse_durations_tsv, parse_strong_tsv_with};
use nrsed::experiment::{run, validate_config, ExperimentConfig};
use nrsed::metrics::{linspace, psds, PsdsParams};
use nrsed::model::backend::serve;
use nrsed::model::{serve_models, LassModelHandle, SedModelHandle};
use nrsed::par::Execution;
use nrsed::pipeline::Variant;
use nrsed::synth::fixture::fixture_prototypes;
use nrsed::synth::{Prototypes, SceneSetManifest};

#[derive(Parser)]
#[command(name = "nrsed", version, about = "Noise-robust sound event detection experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment grid and write reports.
    Run {
        /// Experiment config (JSON). Defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated systems, e.g. `#1,#7`.
        #[arg(long, value_delimiter = ',')]
        variants: Option<Vec<String>>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads (default: all logical cores).
        #[arg(long)]
        workers: Option<usize>,
        /// Disable data-parallel execution.
        #[arg(long)]
        sequential: bool,
    },
    /// Check a config file and list every problem with its field path.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// PSDS of external detections against strong labels.
    Score {
        /// Detections with a `threshold` or `score` column.
        #[arg(long)]
        dets: PathBuf,
        /// Strong reference labels.
        #[arg(long)]
        refs: PathBuf,
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
        scenario: u8,
        /// `filename\tduration` table; otherwise durations come from the last offset.
        #[arg(long)]
        durations: Option<PathBuf>,
        /// Operating points swept over a `score` column.
        #[arg(long, default_value_t = 50)]
        thresholds: usize,
    },
    /// Render a scene manifest to WAV files and label tables.
    Synth {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "synth-out")]
        out: PathBuf,
        /// Class prototypes (JSON); the fixture world when omitted.
        #[arg(long)]
        prototypes: Option<PathBuf>,
    },
    /// Serve model files over the NDJSON backend protocol.
    #[command(hide = true)]
    ServeBackend {
        #[arg(long)]
        sed: Option<PathBuf>,
        #[arg(long)]
        lass: Option<PathBuf>,
        /// Listen on `host:port` instead of stdin/stdout.
        #[arg(long)]
        listen: Option<String>,
        #[arg(long, default_value_t = 64)]
        n_mels: usize,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse().command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cmd: Command) -> Result<ExitCode> {
    match cmd {
        Command::Run { config, variants, seed, out, workers, sequential } => {
            let mut cfg = match &config {
                Some(p) => ExperimentConfig::load(p)?,
                None => ExperimentConfig::default(),
            };
            if let Some(v) = variants {
                cfg.variants = v.iter().map(|s| s.parse::<Variant>()).collect::<Result<_, _>>()?;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            if workers.is_some() {
                cfg.workers = workers;
            }
            if sequential {
                cfg.execution = Execution::Sequential;
            }
            let outcome = run(&cfg)?;
            print!("{}", fs::read_to_string(outcome.output_dir.join("report.tsv"))?);
            eprintln!("noise selector: {}; outputs in {}", outcome.selector, outcome.output_dir.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Validate { config } => {
            let diags = validate_config(&config).with_context(|| format!("reading {}", config.display()))?;
            if diags.is_empty() {
                println!("{}: ok", config.display());
                return Ok(ExitCode::SUCCESS);
            }
            for d in &diags {
                println!("{d}");
            }
            Ok(ExitCode::FAILURE)
        }
        Command::Score { dets, refs, scenario, durations, thresholds } => {
            let durs = match &durations {
                Some(p) => parse_durations_tsv(&fs::read_to_string(p)?)?,
                None => Default::default(),
            };
            let refs = parse_strong_tsv_with(&fs::read_to_string(&refs)?, &|f| durs.get(f).copied(), 0.0)?;
            let clips: Vec<(String, f64)> = refs.iter().map(|t| (t.clip_id.clone(), t.clip_duration)).collect();
            let sweep = parse_detection_tsv(&fs::read_to_string(&dets)?, &clips, &linspace(0.01, 0.99, thresholds))?;
            let classes: Vec<String> = refs
                .iter()
                .chain(sweep.iter().flat_map(|(_, s)| s))
                .flat_map(|t| t.events.iter().map(|e| e.class_name.clone()))
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            let params = if scenario == 1 { PsdsParams::scenario1() } else { PsdsParams::scenario2() };
            let r = psds(&sweep, &refs, &classes, &params, Execution::default())?;
            println!("{:.6}", r.value);
            Ok(ExitCode::SUCCESS)
        }
        Command::Synth { manifest, out, prototypes } => {
            let m = SceneSetManifest::load(&manifest).with_context(|| format!("loading {}", manifest.display()))?;
            let protos: Prototypes = match &prototypes {
                Some(p) => serde_json::from_str(&fs::read_to_string(p)?)?,
                None => fixture_prototypes(),
            };
            m.emit(&protos, &out, Execution::default())?;
            println!("{} scenes written to {}", m.scenes.len(), out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::ServeBackend { sed, lass, listen, n_mels } => {
            let sed = sed.map(SedModelHandle::load).transpose()?;
            let lass = lass.map(LassModelHandle::load).transpose()?;
            if sed.is_none() && lass.is_none() {
                bail!("serve-backend needs --sed and/or --lass");
            }
            match listen {
                None => serve(io::stdin().lock(), io::stdout().lock(), serve_models(sed.as_ref(), lass.as_ref(), n_mels))?,
                Some(addr) => {
                    let listener = TcpListener::bind(&addr).with_context(|| format!("binding {addr}"))?;
                    eprintln!("listening on {}", listener.local_addr()?);
                    std::thread::scope(|s| -> Result<()> {
                        for conn in listener.incoming() {
                            let conn = conn?;
                            let (sed, lass) = (sed.as_ref(), lass.as_ref());
                            s.spawn(move || {
                                let reader = match conn.try_clone() {
                                    Ok(c) => BufReader::new(c),
                                    Err(e) => return log::warn!("connection: {e}"),
                                };
                                if let Err(e) = serve(reader, conn, serve_models(sed, lass, n_mels)) {
                                    log::warn!("connection closed: {e}");
                                }
                            });
                        }
                        Ok(())
                    })?;
                }
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}
