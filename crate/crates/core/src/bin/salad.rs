use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use salad_core::negative::prompt::InstructionId;
use salad_core::pipeline::commands::Outcome;
use salad_core::pipeline::{Format, Pipeline, PipelineError, RunConfig};

#[derive(Parser)]
#[command(name = "salad", version, about = "Structure-aware counterfactual augmentation and contrastive training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score POS tags by ablation and split them into causal and non-causal sets.
    DiscoverTags {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        threshold: Option<f64>,
        /// Fit a cross-entropy-only oracle when no checkpoint is configured.
        #[arg(long)]
        train_oracle: bool,
    },
    /// Generate masked positives for every seed and epoch.
    GenPos {
        #[command(flatten)]
        common: Common,
    },
    /// Generate counterfactual negatives.
    GenNeg {
        #[command(flatten)]
        common: Common,
        /// One instruction or several: `4`, `I2`, `1,3`, `1..4`.
        #[arg(long, value_parser = parse_instructions)]
        instruction: Option<Instructions>,
    },
    /// Train one encoder per seed.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Evaluate trained checkpoints on the configured test splits.
    Eval {
        #[command(flatten)]
        common: Common,
    },
    /// Diversity, overlap and embedding similarity of generated negatives.
    CadQuality {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_instructions)]
        instruction: Option<Instructions>,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long, short)]
    config: PathBuf,
    /// Overrides `output_dir` from the config.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Fail instead of warning when upstream artifacts are stale.
    #[arg(long)]
    strict: bool,
    #[arg(long, value_enum, default_value_t = OutFormat::Table)]
    format: OutFormat,
}

#[derive(Clone, Copy, ValueEnum)]
enum OutFormat {
    Json,
    Table,
}

#[derive(Clone, Debug, PartialEq)]
struct Instructions(Vec<InstructionId>);

fn parse_instructions(s: &str) -> Result<Instructions, String> {
    if let Some((a, b)) = s.split_once("..") {
        let (a, b): (InstructionId, InstructionId) = (a.parse()?, b.parse()?);
        let ids: Vec<_> = InstructionId::ALL
            .into_iter()
            .filter(|i| (a.number()..=b.number()).contains(&i.number()))
            .collect();
        return if ids.is_empty() { Err(format!("empty range {s:?}")) } else { Ok(Instructions(ids)) };
    }
    s.split(',').map(str::parse).collect::<Result<_, _>>().map(Instructions)
}

fn setup(common: &Common) -> Result<(Pipeline, Format), PipelineError> {
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(dir) = &common.output_dir {
        cfg.output_dir = dir.clone();
    }
    let format = match common.format {
        OutFormat::Json => Format::Json,
        OutFormat::Table => Format::Table,
    };
    Ok((Pipeline::new(cfg, common.strict), format))
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let (outcomes, pipeline, format) = match cli.command {
        Command::DiscoverTags {
            common,
            threshold,
            train_oracle,
        } => {
            let (mut p, f) = setup(&common)?;
            if let Some(t) = threshold {
                p.cfg.tags.threshold = t;
            }
            let out = p.discover_tags(train_oracle)?;
            (vec![out], p, f)
        }
        Command::GenPos { common } => {
            let (mut p, f) = setup(&common)?;
            let out = p.gen_pos()?;
            (vec![out], p, f)
        }
        Command::GenNeg { common, instruction } => {
            let (mut p, f) = setup(&common)?;
            let ids = instruction.map(|i| i.0).unwrap_or_else(|| vec![p.cfg.negative.instruction]);
            let outs = ids.into_iter().map(|i| p.gen_neg(i)).collect::<Result<Vec<_>, _>>()?;
            (outs, p, f)
        }
        Command::Train { common, lambda } => {
            let (mut p, f) = setup(&common)?;
            if let Some(l) = lambda {
                p.cfg.loss.lambda = l;
                p.cfg.validate()?;
            }
            let out = p.train()?;
            (vec![out], p, f)
        }
        Command::Eval { common } => {
            let (mut p, f) = setup(&common)?;
            let out = p.eval()?;
            (vec![out], p, f)
        }
        Command::CadQuality { common, instruction } => {
            let (mut p, f) = setup(&common)?;
            let ids = instruction.map(|i| i.0).unwrap_or_else(|| vec![p.cfg.negative.instruction]);
            let outs = ids.into_iter().map(|i| p.cad_quality(i)).collect::<Result<Vec<_>, _>>()?;
            (outs, p, f)
        }
    };
    for w in pipeline.warnings() {
        eprintln!("warning: {w}");
    }
    print_outcomes(&outcomes, format);
    Ok(())
}

fn print_outcomes(outcomes: &[Outcome], format: Format) {
    for o in outcomes {
        print!("{}", o.render(format));
        if format == Format::Table {
            println!("wrote {}", o.dir.display());
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
