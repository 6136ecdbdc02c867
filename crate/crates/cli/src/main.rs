use anyhow::{bail, Result};
use clap::{Parser, Subcommand};
use labelnoise_cli::commands::{
    cmd_corrupt, cmd_eval, cmd_inspect_noise, cmd_make_synthetic, cmd_probe, cmd_train,
    NoiseCliSpec,
};
use labelnoise_cli::config::{parse_config_file, NoiseSpecKind};
use labelnoise_core::text::SyntheticSpec;
use labelnoise_core::train::FeatureKind;
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "labelnoise",
    about = "Train text classifiers that stay accurate under label noise",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Inject class-conditional label noise into a 2-column TSV.
    Corrupt {
        /// Input file, one "label<TAB>text" line per example.
        #[arg(long = "in")]
        input: PathBuf,
        /// Output 3-column TSV; the transition matrix lands next to it.
        #[arg(long)]
        out: PathBuf,
        /// uniform | random | custom
        #[arg(long)]
        kind: String,
        /// Overall flip parameter for uniform/random noise.
        #[arg(long)]
        p: Option<f64>,
        /// Expected class count (checked against the file).
        #[arg(long)]
        k: Option<usize>,
        /// CSV matrix for custom noise.
        #[arg(long)]
        matrix: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a variant from a config file and write run artifacts.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the config's repeat count.
        #[arg(long)]
        repeats: Option<usize>,
        /// Override the config's master seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Clean-test accuracy of a checkpoint (noise layer ignored).
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        test: PathBuf,
    },
    /// Report ‖Ψ‖_F, Ψ, its softmax response, and the correlation with a
    /// true matrix when given.
    InspectNoise {
        #[arg(long)]
        checkpoint: PathBuf,
        /// True transition matrix CSV to correlate against.
        #[arg(long)]
        matrix: Option<PathBuf>,
    },
    /// Linear probes over frozen features of two checkpoints.
    Probe {
        #[arg(long)]
        checkpoint_a: PathBuf,
        #[arg(long)]
        checkpoint_b: PathBuf,
        /// 3-column corrupted training TSV.
        #[arg(long)]
        train: PathBuf,
        /// 2-column clean test TSV.
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// pooled | logits
        #[arg(long, default_value = "pooled")]
        features: String,
        #[arg(long, default_value_t = 1.0)]
        c: f64,
        #[arg(long, default_value_t = 50)]
        epochs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Generate the synthetic benchmark corpus as train/dev/test TSVs.
    MakeSynthetic {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        k: usize,
        /// Training-set size; dev/test default to an eighth each.
        #[arg(long)]
        n: usize,
        #[arg(long)]
        n_dev: Option<usize>,
        #[arg(long)]
        n_test: Option<usize>,
        #[arg(long)]
        sentence_len: Option<usize>,
        #[arg(long)]
        vocab_size: Option<usize>,
        #[arg(long)]
        signal_tokens_per_class: Option<usize>,
        #[arg(long)]
        filler_rate: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn parse_kind(s: &str) -> Result<NoiseSpecKind> {
    match s {
        "uniform" => Ok(NoiseSpecKind::Uniform),
        "random" => Ok(NoiseSpecKind::Random),
        "custom" => Ok(NoiseSpecKind::Custom),
        other => bail!("--kind {:?} is not uniform|random|custom", other),
    }
}

fn run() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Corrupt {
            input,
            out,
            kind,
            p,
            k,
            matrix,
            seed,
        } => {
            let spec = NoiseCliSpec {
                kind: parse_kind(&kind)?,
                p,
                k,
                matrix,
            };
            let report = cmd_corrupt(&input, &spec, seed, &out)?;
            println!(
                "corrupted {} examples, flip fraction {:.4} -> {} (matrix {})",
                report.examples,
                report.flip_fraction,
                report.out.display(),
                report.phi_csv.display()
            );
        }
        Cmd::Train {
            config,
            out,
            repeats,
            seed,
        } => {
            let mut cfg = parse_config_file(&config)?;
            if let Some(r) = repeats {
                if r == 0 {
                    bail!("--repeats must be at least 1");
                }
                cfg.repeats = r;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let artifacts = cmd_train(&cfg, &out)?;
            for (i, run) in artifacts.runs.iter().enumerate() {
                println!(
                    "run {}: test_acc {:.4} (best epoch {:?}) -> {}",
                    i,
                    run.test_acc,
                    run.record.best_epoch,
                    run.dir.display()
                );
            }
            println!(
                "mean test_acc {:.4} ± {:.4} over {} run(s)",
                artifacts.summary.mean_test_acc,
                artifacts.summary.std_test_acc,
                artifacts.summary.repeats
            );
        }
        Cmd::Eval { checkpoint, test } => {
            let report = cmd_eval(&checkpoint, &test)?;
            println!("{}", serde_json::to_string(&report)?);
        }
        Cmd::InspectNoise { checkpoint, matrix } => {
            let report = cmd_inspect_noise(&checkpoint, matrix.as_deref())?;
            println!("psi_fro: {}", report.psi_fro);
            println!("psi:");
            print!("{}", report.psi_csv);
            println!("response:");
            print!("{}", report.response_csv);
            if let Some(r) = report.pearson_with_true {
                println!("pearson: {}", r);
            }
        }
        Cmd::Probe {
            checkpoint_a,
            checkpoint_b,
            train,
            test,
            out,
            features,
            c,
            epochs,
            seed,
        } => {
            let kind = match features.as_str() {
                "pooled" => FeatureKind::Pooled,
                "logits" => FeatureKind::Logits,
                other => bail!("--features {:?} is not pooled|logits", other),
            };
            let report = cmd_probe(
                &checkpoint_a,
                &checkpoint_b,
                &train,
                &test,
                kind,
                c,
                epochs,
                seed,
                &out,
            )?;
            print!("{}", report.to_csv());
        }
        Cmd::MakeSynthetic {
            out,
            k,
            n,
            n_dev,
            n_test,
            sentence_len,
            vocab_size,
            signal_tokens_per_class,
            filler_rate,
            seed,
        } => {
            let mut spec = SyntheticSpec::with_train_size(k, n);
            if let Some(v) = n_dev {
                spec.n_dev = v;
            }
            if let Some(v) = n_test {
                spec.n_test = v;
            }
            if let Some(v) = sentence_len {
                spec.sentence_len = v;
            }
            if let Some(v) = vocab_size {
                spec.vocab_size = v;
            }
            if let Some(v) = signal_tokens_per_class {
                spec.signal_tokens_per_class = v;
            }
            if let Some(v) = filler_rate {
                spec.filler_rate = v;
            }
            let paths = cmd_make_synthetic(&spec, seed, &out)?;
            println!(
                "wrote {}, {}, {}",
                paths.train.display(),
                paths.dev.display(),
                paths.test.display()
            );
        }
    }
    Ok(())
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {:#}", e);
        std::process::exit(1);
    }
}
