//! `avtse`: simulate data, pre-train the lip extractor, train, evaluate and
//! extract.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use avtse::lipnet::TargetKind;
use avtse::masks::PhaseSource;
use avtse::mixsim::Split;
use avtse::train::OracleMask;

use avtse_cli::commands::{self, ModelArgs, SimulateArgs};
use avtse_cli::config::{ModelKind, Preset, RunConfig};
use avtse_cli::exit::{CliError, CliResult};

#[derive(Parser, Debug)]
#[command(name = "avtse", version, about = "Audio-visual target speaker extraction")]
struct Cli {
    /// Root for relative data paths [env: AVTSE_DATA_DIR, default: .]
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesise a talking-face corpus and render a mixture manifest.
    Simulate(SimulateCmd),
    /// Train a separator on one or more manifests.
    Train(TrainCmd),
    /// Pre-train the lip embedding extractor.
    TrainLipnet(LipCmd),
    /// Score a trained separator on a manifest.
    Evaluate(EvalCmd),
    /// Write the separated target of every mixture.
    Extract(ExtractCmd),
    /// Score oracle time-frequency masks on a manifest.
    Oracle(OracleCmd),
}

#[derive(Args, Debug)]
struct SimulateCmd {
    /// Output root [default: the data root]
    #[arg(long)]
    out: Option<PathBuf>,
    /// Existing corpus index to mix instead of synthesising one.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    spk: usize,
    #[arg(long, default_value_t = 100)]
    count: usize,
    #[arg(long, num_args = 2, value_names = ["LO", "HI"], allow_negative_numbers = true, default_values_t = [-5.0, 5.0])]
    snr: Vec<f64>,
    /// Synthetic talkers to generate.
    #[arg(long, default_value_t = 20)]
    utterances: usize,
    /// Seconds per synthetic utterance.
    #[arg(long, default_value_t = 2.0)]
    duration: f64,
    #[arg(long, default_value = "train")]
    split: Split,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct TrainCmd {
    /// YAML, TOML or JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, num_args = 1..)]
    manifests: Vec<PathBuf>,
    #[arg(long)]
    validation: Option<PathBuf>,
    #[arg(long)]
    lipnet: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    model: Option<ModelKind>,
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TargetsArg {
    Word,
    #[value(name = "ci_phone")]
    CiPhone,
    #[value(name = "cd_phone")]
    CdPhone,
}

#[derive(Args, Debug)]
struct LipCmd {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "word")]
    targets: TargetsArg,
    /// Label file; without it a synthetic two-viseme corpus is used.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Directory of `<clip id>.avf` files [default: next to the labels]
    #[arg(long)]
    clip_dir: Option<PathBuf>,
    #[arg(long)]
    word_classes: Option<usize>,
    /// Synthetic clips.
    #[arg(long, default_value_t = 200)]
    clips: usize,
    /// Frames per synthetic clip.
    #[arg(long, default_value_t = 6)]
    frames: usize,
    #[arg(long, default_value_t = 5)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PhaseArg {
    Mix,
    Oracle,
}

impl From<PhaseArg> for PhaseSource {
    fn from(p: PhaseArg) -> Self {
        match p {
            PhaseArg::Mix => PhaseSource::Mix,
            PhaseArg::Oracle => PhaseSource::Oracle,
        }
    }
}

#[derive(Args, Debug)]
struct ModelInputs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    lipnet: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Phase for frequency-domain models.
    #[arg(long, value_enum, default_value = "mix")]
    phase: PhaseArg,
    /// Accepted for uniformity; inference is deterministic.
    #[arg(long)]
    seed: Option<u64>,
}

impl ModelInputs {
    fn as_args(&self) -> ModelArgs<'_> {
        ModelArgs {
            checkpoint: &self.checkpoint,
            lipnet: &self.lipnet,
            manifest: &self.manifest,
            phase: self.phase.into(),
        }
    }
}

#[derive(Args, Debug)]
struct EvalCmd {
    #[command(flatten)]
    inputs: ModelInputs,
    /// Report path; `.json` and `.txt` are written.
    #[arg(long, default_value = "report")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ExtractCmd {
    #[command(flatten)]
    inputs: ModelInputs,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MaskArg {
    Psm,
    Irm,
}

#[derive(Args, Debug)]
struct OracleCmd {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_enum, default_value = "psm")]
    mask: MaskArg,
    #[arg(long, value_enum, default_value = "mix")]
    phase: PhaseArg,
    #[arg(long, default_value = "oracle")]
    out: PathBuf,
    /// Accepted for uniformity; oracle masks are deterministic.
    #[arg(long)]
    seed: Option<u64>,
}

fn run_config(cmd: &TrainCmd) -> CliResult<RunConfig> {
    let mut cfg = match &cmd.config {
        Some(path) if !path.exists() => {
            return Err(CliError::config(format!("config {} not found", path.display())));
        }
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if !cmd.manifests.is_empty() {
        cfg.manifests = cmd.manifests.clone();
    }
    if let Some(v) = &cmd.validation {
        cfg.validation = Some(v.clone());
    }
    if let Some(p) = &cmd.lipnet {
        cfg.lipnet = Some(p.clone());
    }
    if let Some(p) = &cmd.out {
        cfg.output = Some(p.clone());
    }
    if let Some(m) = cmd.model {
        cfg.model = m;
    }
    if let Some(p) = cmd.preset {
        cfg.preset = p;
    }
    if let Some(e) = cmd.epochs {
        cfg.train.max_epochs = e;
    }
    if let Some(lr) = cmd.lr {
        cfg.train.lr = lr;
    }
    if let Some(b) = cmd.batch_size {
        cfg.train.batch_size = b;
    }
    if let Some(s) = cmd.seed {
        cfg.seed = Some(s);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn data_root(flag: Option<&Path>, config: Option<&Path>) -> PathBuf {
    flag.or(config)
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os("AVTSE_DATA_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

fn run(cli: Cli) -> CliResult<()> {
    let flag_root = cli.data_dir.as_deref();
    match cli.command {
        Command::Simulate(c) => {
            let root = data_root(flag_root, None);
            let args = SimulateArgs {
                out: c.out.map(|o| commands::resolve(&root, &o)).unwrap_or(root),
                corpus: c.corpus,
                utterances: c.utterances,
                duration: c.duration,
                speakers: c.spk,
                count: c.count,
                snr: (c.snr[0], c.snr[1]),
                split: c.split,
                seed: c.seed,
            };
            commands::simulate(&args).map(|_| ())
        }
        Command::Train(c) => {
            let cfg = run_config(&c)?;
            let root = data_root(flag_root, cfg.data_dir.as_deref());
            commands::train_model(&cfg, &root)
        }
        Command::TrainLipnet(c) => {
            let root = data_root(flag_root, None);
            let args = commands::LipArgs {
                out: c.out,
                targets: match c.targets {
                    TargetsArg::Word => TargetKind::Word,
                    TargetsArg::CiPhone => TargetKind::CiPhone,
                    TargetsArg::CdPhone => TargetKind::CdPhone,
                },
                labels: c.labels,
                clip_dir: c.clip_dir,
                word_classes: c.word_classes,
                clips: c.clips,
                frames: c.frames,
                epochs: c.epochs,
                seed: c.seed,
            };
            commands::train_lipnet(&args, &root)
        }
        Command::Evaluate(c) => {
            let root = data_root(flag_root, None);
            let report = commands::evaluate_model(&c.inputs.as_args(), &c.out, &root)?;
            if report.incomplete {
                eprintln!("warning: {} records could not be scored", report.errors.len());
            }
            Ok(())
        }
        Command::Extract(c) => {
            let root = data_root(flag_root, None);
            commands::extract(&c.inputs.as_args(), &c.out, &root).map(|_| ())
        }
        Command::Oracle(c) => {
            let root = data_root(flag_root, None);
            let mask = match c.mask {
                MaskArg::Psm => OracleMask::Psm,
                MaskArg::Irm => OracleMask::Irm,
            };
            commands::oracle(&c.manifest, mask, c.phase.into(), &c.out, &root).map(|_| ())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code() as u8)
        }
    }
}
