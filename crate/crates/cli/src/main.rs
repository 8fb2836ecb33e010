//! `mcseg`: train, classify, segment, evaluate, sweep, phantom and
//! export-slices.
//!
//! Exit codes: 0 success, 2 input error, 3 numerical failure.

mod commands;
mod config;
mod slices;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{ApplyArgs, EvaluateArgs, ExportArgs, PhantomArgs, SweepArgs, SweepKind, TrainArgs};
use config::CommonArgs;
use slices::Axis;

#[derive(Parser, Debug)]
#[command(name = "mcseg", version, about = "Multi-contrast volume segmentation")]
struct Cli {
    #[command(flatten)]
    common: CommonArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit standardization and a classifier on a labeled template.
    Train {
        #[arg(long)]
        template: Option<PathBuf>,
        #[arg(long = "template-labels", alias = "labels")]
        template_labels: Option<PathBuf>,
        #[arg(long)]
        mask: Option<PathBuf>,
    },
    /// Posterior field and its winner-takes-all labels.
    Classify {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        mask: Option<PathBuf>,
    },
    /// Classification followed by convex segmentation.
    Segment {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        mask: Option<PathBuf>,
        /// Labels used as prior when --w is given.
        #[arg(long)]
        prior: Option<PathBuf>,
        /// Also write the posterior field.
        #[arg(long = "save-posterior")]
        save_posterior: bool,
    },
    /// Confusion matrix and error metrics of a labeling.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long)]
        mask: Option<PathBuf>,
    },
    /// Parameter sweep; writes one CSV row per sweep point.
    Sweep {
        #[arg(value_enum)]
        kind: SweepKind,
        #[arg(long)]
        template: Option<PathBuf>,
        #[arg(long = "template-labels")]
        template_labels: Option<PathBuf>,
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long)]
        mask: Option<PathBuf>,
        /// Prior labels for the w sweep (default: template labels).
        #[arg(long)]
        prior: Option<PathBuf>,
        /// Subject volume and labels for the w sweep; repeatable.
        #[arg(long = "subject", num_args = 2, value_names = ["VOLUME", "LABELS"], action = clap::ArgAction::Append)]
        subjects: Vec<PathBuf>,
        /// Comma-separated lambda or w values.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
    },
    /// Synthetic template, test realization and deformed subjects.
    Phantom {
        #[arg(long)]
        canonical: bool,
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        subjects: usize,
        /// Also write an independent noise realization as `test`.
        #[arg(long = "with-test")]
        with_test: bool,
    },
    /// Slices as PGM (intensity volumes) or PPM (label volumes).
    ExportSlices {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "z")]
        axis: Axis,
        /// Comma-separated slice indices.
        #[arg(long, value_delimiter = ',', required = true)]
        indices: Vec<usize>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Train { .. } => "train",
            Command::Classify { .. } => "classify",
            Command::Segment { .. } => "segment",
            Command::Evaluate { .. } => "evaluate",
            Command::Sweep { .. } => "sweep",
            Command::Phantom { .. } => "phantom",
            Command::ExportSlices { .. } => "export-slices",
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let r = config::resolve(&cli.common)?;
    match cli.command {
        Command::Train {
            template,
            template_labels,
            mask,
        } => commands::train(
            &r,
            &TrainArgs {
                template,
                template_labels,
                mask,
            },
        ),
        Command::Classify { model, input, mask } => commands::classify(
            &r,
            &ApplyArgs {
                model,
                input,
                mask,
                prior: None,
                save_posterior: true,
            },
        ),
        Command::Segment {
            model,
            input,
            mask,
            prior,
            save_posterior,
        } => commands::segment(
            &r,
            &ApplyArgs {
                model,
                input,
                mask,
                prior,
                save_posterior,
            },
        ),
        Command::Evaluate {
            pred,
            reference,
            mask,
        } => commands::evaluate(
            &r,
            &EvaluateArgs {
                pred,
                reference,
                mask,
            },
        ),
        Command::Sweep {
            kind,
            template,
            template_labels,
            input,
            reference,
            mask,
            prior,
            subjects,
            values,
        } => commands::sweep(
            &r,
            &SweepArgs {
                kind,
                template,
                template_labels,
                input,
                reference,
                mask,
                prior,
                subjects,
                values,
            },
        ),
        Command::Phantom {
            canonical,
            spec,
            subjects,
            with_test,
        } => commands::phantom(
            &r,
            cli.common.seed,
            &PhantomArgs {
                canonical,
                spec,
                subjects,
                with_test,
            },
        ),
        Command::ExportSlices {
            input,
            axis,
            indices,
        } => commands::export_slices(
            &r,
            &ExportArgs {
                input,
                axis,
                indices,
            },
        ),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let name = cli.command.name();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let numerical = err.chain().any(|e| {
                e.downcast_ref::<mcseg::Error>()
                    .is_some_and(|e| e.is_numerical())
            });
            let (code, kind) = if numerical {
                (3, "numerical")
            } else {
                (2, "input")
            };
            eprintln!("error: {err}");
            eprintln!("  command: {name}");
            eprintln!("  kind: {kind}");
            for cause in err.chain().skip(1) {
                eprintln!("  caused by: {cause}");
            }
            ExitCode::from(code)
        }
    }
}
