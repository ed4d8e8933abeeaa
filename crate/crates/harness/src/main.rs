use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use ctcattn::decode::{read_transcripts, write_transcripts};
use ctcattn::{checkpoint, greedy_decode, ErrorTally, Mode, Transcript};
use ctcattn_harness::ablate::{ablate, format_table};
use ctcattn_harness::gradcheck::{grad_check, GradCheckConfig, GRAD_TOLERANCE};
use ctcattn_harness::synth::{load_charset, load_split, save_splits};
use ctcattn_harness::train::{evaluate, train, write_metrics};
use ctcattn_harness::{build_task, fresh_model, RunConfig};

#[derive(Parser)]
#[command(name = "ctcattn", version, about = "CTC with attention on a synthetic labeling task")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Training seed.
    #[arg(long)]
    seed: Option<u64>,
    /// vanilla, tc, ca, ha, lm or coma.
    #[arg(long)]
    mode: Option<Mode>,
    /// Attention half-window.
    #[arg(long)]
    tau: Option<usize>,
}

impl RunArgs {
    fn load(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
            None => RunConfig::default(),
        };
        cfg.apply_overrides(self.seed, self.mode, self.tau);
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic train/dev/test splits into a directory.
    GenData {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and save the best-dev checkpoint.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Directory written by gen-data; generated in memory when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Per-epoch metrics as TSV.
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Greedy-decode one split with a saved model, writing "id text" lines.
    Decode {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Output file; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Corpus WER and CER of a hypothesis transcript file against a reference.
    Score {
        reference: PathBuf,
        hypothesis: PathBuf,
    },
    /// Train every model variant with identical seeds and budget.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        /// Training seeds; results are averaged.
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        seeds: Vec<u64>,
        /// Variants to train; all six when omitted.
        #[arg(long, value_delimiter = ',')]
        modes: Vec<Mode>,
    },
    /// Finite-difference check of all parameter gradients.
    GradCheck {
        /// Single variant; all six when omitted.
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn open_out(path: Option<&Path>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn read_transcript_file(path: &Path) -> anyhow::Result<Vec<(String, Transcript)>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(read_transcripts(BufReader::new(f))?)
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::GenData { run, out } => {
            let cfg = run.load()?;
            let task = build_task(&cfg)?;
            save_splits(&out, task.charset(), &task.splits)?;
            println!(
                "wrote {} / {} / {} utterances to {}",
                task.splits.train.len(),
                task.splits.dev.len(),
                task.splits.test.len(),
                out.display()
            );
        }
        Command::Train {
            run,
            data,
            checkpoint,
            metrics,
        } => {
            let mut cfg = run.load()?;
            if checkpoint.is_some() {
                cfg.train.checkpoint = checkpoint;
            }
            let (cs, train_set, dev_set, test_set) = match &data {
                Some(dir) => (
                    load_charset(dir)?,
                    load_split(dir, "train")?,
                    load_split(dir, "dev")?,
                    load_split(dir, "test")?,
                ),
                None => {
                    let task = build_task(&cfg)?;
                    (task.spec.vocab, task.splits.train, task.splits.dev, task.splits.test)
                }
            };
            let Some(dim) = train_set.first().map(|u| u.features.dim()) else {
                bail!("training split is empty");
            };
            let model = fresh_model(&cfg, dim, &cs)?;
            let report = train(model, &train_set, &dev_set, &cs, &cfg.train)?;
            if let Some(p) = &metrics {
                let mut w = open_out(Some(p))?;
                write_metrics(&mut w, &report.metrics)?;
                w.flush()?;
            }
            let test = evaluate(&report.best_model, &test_set, &cs)?;
            println!(
                "{}: best dev epoch {} (CER {:.2}%, WER {:.2}%), test CER {:.2}%, WER {:.2}%",
                cfg.model.mode,
                report.best_epoch,
                100.0 * report.best_dev.cer,
                100.0 * report.best_dev.wer,
                100.0 * test.cer,
                100.0 * test.wer
            );
        }
        Command::Decode {
            checkpoint,
            data,
            split,
            out,
        } => {
            let model = checkpoint::load(&checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
            let cs = load_charset(&data)?;
            let utts = load_split(&data, &split)?;
            let mut items = Vec::with_capacity(utts.len());
            for u in &utts {
                items.push((u.id.clone(), greedy_decode(&model.lattice(&u.features)?, &cs)?));
            }
            let mut w = open_out(out.as_deref())?;
            write_transcripts(&mut w, &items)?;
            w.flush()?;
        }
        Command::Score { reference, hypothesis } => {
            let refs = read_transcript_file(&reference)?;
            let hyps: std::collections::HashMap<String, Transcript> =
                read_transcript_file(&hypothesis)?.into_iter().collect();
            let (mut chars, mut words) = (ErrorTally::default(), ErrorTally::default());
            for (id, r) in &refs {
                let h = hyps.get(id).map(Transcript::text).unwrap_or_default();
                chars.add_chars(&r.text(), &h);
                words.add_words(&r.text(), &h);
            }
            println!("WER {:.2}%  CER {:.2}%", 100.0 * words.rate()?, 100.0 * chars.rate()?);
        }
        Command::Ablate { run, seeds, modes } => {
            let cfg = run.load()?;
            let modes = if modes.is_empty() { Mode::LADDER.to_vec() } else { modes };
            let task = build_task(&cfg)?;
            let rows = ablate(&cfg, &task, &modes, &seeds)?;
            print!("{}", format_table(&rows));
        }
        Command::GradCheck { mode, seed } => {
            let modes = mode.map_or(Mode::LADDER.to_vec(), |m| vec![m]);
            let mut ok = true;
            for m in modes {
                let report = grad_check(&GradCheckConfig::desk(m), seed)?;
                for g in &report.groups {
                    log::debug!("{m} {}: {} values, max rel err {:.3e}", g.name, g.values, g.max_rel_err);
                }
                let verdict = if report.passed() { "ok" } else { "FAIL" };
                println!("{m:<8} max rel err {:.3e} (tolerance {GRAD_TOLERANCE:.0e}) {verdict}", report.max_rel_err());
                ok &= report.passed();
            }
            return Ok(ok);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
