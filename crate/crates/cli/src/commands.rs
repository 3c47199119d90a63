//! Subcommand implementations.

use std::fs;
use std::path::{Path, PathBuf};

use avtse::avtasnet::AvTasNet;
use avtse::favsnet::FavsNet;
use avtse::lipnet::{
    label_viseme_clips, parse_label_file, preprocess_frames, synth_viseme_corpus, train_extractor, ClassifierHead,
    ClipLabels, FrameNorm, LabeledClip, LipNet, LipNetConfig, LipTrainConfig, TargetInventory, TargetKind,
};
use avtse::masks::PhaseSource;
use avtse::mixsim::{
    build_manifest, load_corpus, load_mixture, read_avf, render_manifest, synth_av_corpus, write_corpus, Manifest,
    MixtureExample, Split,
};
use avtse::nn::Checkpoint;
use avtse::signal::wav::write_wav;
use avtse::train::{
    evaluate, history_csv, make_chunks, prepare_records, train, AvTasNetExtractor, EvalReport, Extractor,
    FavsExtractor, OracleExtractor, OracleMask, PreparedRecord, Trainable,
};

use crate::config::{ModelKind, RunConfig};
use crate::exit::{CliError, CliResult};

/// Resolves `path` against the data root unless it is absolute or exists.
pub fn resolve(root: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() || path.exists() || root == Path::new(".") {
        path.to_path_buf()
    } else {
        root.join(path)
    }
}

fn write_output(path: &Path, bytes: impl AsRef<[u8]>) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::config(format!("cannot create {}: {e}", dir.display())))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::config(format!("cannot write {}: {e}", path.display())))
}

fn read_checkpoint(path: &Path, what: &str) -> CliResult<Checkpoint> {
    if !path.exists() {
        return Err(CliError::missing(format!(
            "{what} checkpoint {} not found",
            path.display()
        )));
    }
    Ok(Checkpoint::read(path)?)
}

/// Reads a manifest together with the directory its record paths are
/// relative to.
fn read_manifest(path: &Path) -> CliResult<(Manifest, PathBuf)> {
    if !path.exists() {
        return Err(CliError::missing(format!("manifest {} not found", path.display())));
    }
    let split = infer_split(path);
    let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    Ok((Manifest::read(path, split)?, base))
}

fn infer_split(path: &Path) -> Split {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
    ["train", "validation", "test"]
        .iter()
        .find(|s| name.starts_with(*s))
        .and_then(|s| s.parse().ok())
        .unwrap_or(Split::Test)
}

fn load_lipnet(path: &Path) -> CliResult<(LipNet<f32>, FrameNorm)> {
    Ok(LipNet::from_checkpoint(&read_checkpoint(path, "lip extractor")?)?)
}

pub struct SimulateArgs {
    pub out: PathBuf,
    pub corpus: Option<PathBuf>,
    pub utterances: usize,
    pub duration: f64,
    pub speakers: usize,
    pub count: usize,
    pub snr: (f64, f64),
    pub split: Split,
    pub seed: u64,
}

/// Synthesises (or reuses) a corpus, then samples and renders a manifest.
/// Returns the manifest path.
pub fn simulate(args: &SimulateArgs) -> CliResult<PathBuf> {
    fs::create_dir_all(&args.out)
        .map_err(|e| CliError::config(format!("cannot create {}: {e}", args.out.display())))?;
    let corpus = match &args.corpus {
        Some(index) => {
            let path = resolve(&args.out, index);
            if !path.exists() {
                return Err(CliError::missing(format!("corpus index {} not found", path.display())));
            }
            load_corpus(&path)?
        }
        None => {
            let utts = synth_av_corpus(args.utterances, args.duration, args.seed)?;
            write_corpus(&utts, &args.out).map_err(|e| match e {
                avtse::Error::MissingFile(p) => CliError::config(format!("cannot write under {}", p.display())),
                other => other.into(),
            })?
        }
    };
    let manifest = build_manifest(&corpus, args.speakers, args.count, args.snr, args.seed, args.split)
        .map_err(|e| CliError::config(e.to_string()))?;
    render_manifest(&manifest, &corpus, &args.out)?;
    let path = args.out.join(format!("{}_{}spk.jsonl", args.split, args.speakers));
    write_output(&path, manifest.to_jsonl())?;
    println!(
        "{} utterances, {} {}-speaker mixtures -> {}",
        corpus.len(),
        manifest.len(),
        args.speakers,
        path.display()
    );
    Ok(path)
}

pub struct LipArgs {
    pub out: PathBuf,
    pub targets: TargetKind,
    pub labels: Option<PathBuf>,
    pub clip_dir: Option<PathBuf>,
    pub word_classes: Option<usize>,
    pub clips: usize,
    pub frames: usize,
    pub epochs: usize,
    pub seed: u64,
}

fn labelled_clips(args: &LipArgs, root: &Path) -> CliResult<(Vec<LabeledClip>, FrameNorm, TargetInventory)> {
    match &args.labels {
        None => {
            let clips = synth_viseme_corpus(args.clips, args.frames, args.seed)?;
            let norm = FrameNorm::fit(clips.iter().map(|c| &c.frames))?;
            let inventory = TargetInventory::for_kind(args.targets, args.word_classes.unwrap_or(2))?;
            let labelled = label_viseme_clips(&clips, &norm, inventory.is_frame_level())?;
            Ok((labelled, norm, inventory))
        }
        Some(label_path) => {
            let label_path = resolve(root, label_path);
            if !label_path.exists() {
                return Err(CliError::missing(format!(
                    "label file {} not found",
                    label_path.display()
                )));
            }
            let text = fs::read_to_string(&label_path)
                .map_err(|e| CliError::config(format!("cannot read {}: {e}", label_path.display())))?;
            let entries = parse_label_file(&text)?;
            let dir = args
                .clip_dir
                .as_ref()
                .map(|d| resolve(root, d))
                .unwrap_or_else(|| label_path.parent().unwrap_or(Path::new(".")).to_path_buf());
            let raw = entries
                .iter()
                .map(|(id, _)| read_avf(dir.join(format!("{id}.avf"))))
                .collect::<avtse::Result<Vec<_>>>()?;
            let norm = FrameNorm::fit(raw.iter())?;
            let top = entries
                .iter()
                .map(|(_, l)| match l {
                    ClipLabels::Utterance(c) => *c,
                    ClipLabels::PerFrame { labels, .. } => labels.iter().copied().max().unwrap_or(0),
                })
                .max()
                .unwrap_or(0);
            let inventory = TargetInventory::for_kind(args.targets, args.word_classes.unwrap_or((top + 1).max(2)))?;
            let clips = raw
                .iter()
                .zip(entries)
                .map(|(frames, (_, labels))| {
                    Ok(LabeledClip {
                        frames: preprocess_frames(frames, &norm)?,
                        labels,
                    })
                })
                .collect::<avtse::Result<Vec<_>>>()?;
            Ok((clips, norm, inventory))
        }
    }
}

/// Pre-trains the lip extractor with a classification head and keeps only
/// the extractor.
pub fn train_lipnet(args: &LipArgs, root: &Path) -> CliResult<()> {
    let (clips, norm, inventory) = labelled_clips(args, root)?;
    let net = LipNet::<f32>::new(LipNetConfig::desk(), args.seed)?;
    let head = ClassifierHead::new(inventory, args.seed.wrapping_add(1));
    println!(
        "pre-training on {} clips, {:?} targets, head width {}",
        clips.len(),
        inventory.kind,
        head.output_width()
    );
    let cfg = LipTrainConfig {
        epochs: args.epochs,
        seed: args.seed,
        ..LipTrainConfig::default()
    };
    let report = train_extractor(&net, &head, &clips, &cfg)?;
    for (i, loss) in report.epoch_losses.iter().enumerate() {
        println!("epoch {} loss {loss:.4}", i + 1);
    }
    write_output(&args.out, net.checkpoint(&norm, Some(&inventory)).encode())
}

fn load_examples(manifest: &Manifest, base: &Path) -> CliResult<Vec<MixtureExample>> {
    manifest
        .records
        .iter()
        .map(|r| load_mixture(r, base).map_err(CliError::from))
        .collect()
}

fn history_path(out: &Path) -> PathBuf {
    out.with_extension("history.csv")
}

/// Trains the configured model on one or more manifests.
pub fn train_model(cfg: &RunConfig, root: &Path) -> CliResult<()> {
    if cfg.manifests.is_empty() {
        return Err(CliError::config("no training manifests given"));
    }
    let lip_path = cfg
        .lipnet
        .as_ref()
        .ok_or_else(|| CliError::config("a lip extractor checkpoint is required"))?;
    let (lipnet, norm) = load_lipnet(&resolve(root, lip_path))?;
    let out = cfg
        .output
        .clone()
        .ok_or_else(|| CliError::config("an output checkpoint path is required"))?;
    let seed = cfg.seed.unwrap_or(cfg.train.seed);
    let tcfg = avtse::train::TrainConfig {
        seed,
        ..cfg.train.clone()
    };

    let mut train_records: Vec<PreparedRecord> = Vec::new();
    for m in &cfg.manifests {
        let (manifest, base) = read_manifest(&resolve(root, m))?;
        println!(
            "{}: {} records, {} speakers",
            m.display(),
            manifest.len(),
            manifest.num_speakers
        );
        train_records.extend(prepare_records(load_examples(&manifest, &base)?, &lipnet, &norm)?);
    }
    let val_records = match &cfg.validation {
        Some(v) => {
            let (manifest, base) = read_manifest(&resolve(root, v))?;
            prepare_records(load_examples(&manifest, &base)?, &lipnet, &norm)?
        }
        None => {
            println!("no validation manifest; validating on the training records");
            train_records.clone()
        }
    };
    let train_chunks = make_chunks(&train_records, &tcfg.chunk)?;
    let val_chunks = make_chunks(&val_records, &tcfg.chunk)?;
    let meta = serde_json::json!({
        "lipnet_arch": lipnet.checkpoint(&norm, None).header.arch_hash,
        "manifests": cfg.manifests,
        "seed": seed,
    });
    let model: Box<dyn Trainable> = match cfg.model {
        ModelKind::Avtasnet => Box::new(AvTasNet::<f32>::new(cfg.avtasnet()?, seed)?),
        ModelKind::Favsnet => Box::new(FavsNet::<f32>::new(cfg.favsnet()?, seed)?),
    };
    println!(
        "{} parameters, {} training / {} validation chunks",
        model.params().num_parameters(),
        train_chunks.len(),
        val_chunks.len()
    );
    let outcome = train(model.as_ref(), &train_chunks, &val_chunks, &tcfg, meta)?;
    for r in &outcome.history {
        println!(
            "epoch {:>3} train {:>9.4} val {:>9.4} lr {:.2e}",
            r.epoch, r.train_loss, r.val_loss, r.lr
        );
    }
    println!(
        "best epoch {} (val {:.4}){}",
        outcome.best_epoch,
        outcome.best_val_loss,
        if outcome.stopped_early { ", stopped early" } else { "" }
    );
    write_output(&out, outcome.checkpoint.encode())?;
    write_output(&history_path(&out), history_csv(&outcome.history))
}

/// A trained separator of either kind.
pub enum LoadedModel {
    Time(AvTasNet<f32>),
    Freq(FavsNet<f32>),
}

pub fn load_model(path: &Path) -> CliResult<LoadedModel> {
    let ckpt = read_checkpoint(path, "model")?;
    match ckpt.header.kind.as_str() {
        avtse::avtasnet::CHECKPOINT_KIND => Ok(LoadedModel::Time(AvTasNet::from_checkpoint(&ckpt)?)),
        avtse::favsnet::CHECKPOINT_KIND => Ok(LoadedModel::Freq(FavsNet::from_checkpoint(&ckpt)?)),
        other => Err(CliError::config(format!(
            "{} holds a {other:?} checkpoint",
            path.display()
        ))),
    }
}

pub struct ModelArgs<'a> {
    pub checkpoint: &'a Path,
    pub lipnet: &'a Path,
    pub manifest: &'a Path,
    pub phase: PhaseSource,
}

fn with_extractor<T>(
    args: &ModelArgs<'_>,
    root: &Path,
    f: impl FnOnce(&dyn Extractor, &Manifest, &Path) -> CliResult<T>,
) -> CliResult<T> {
    let model = load_model(&resolve(root, args.checkpoint))?;
    let (lipnet, norm) = load_lipnet(&resolve(root, args.lipnet))?;
    let (manifest, base) = read_manifest(&resolve(root, args.manifest))?;
    match &model {
        LoadedModel::Time(m) => f(
            &AvTasNetExtractor {
                model: m,
                lipnet: &lipnet,
                norm,
            },
            &manifest,
            &base,
        ),
        LoadedModel::Freq(m) => f(
            &FavsExtractor {
                model: m,
                lipnet: &lipnet,
                norm,
                phase: args.phase,
            },
            &manifest,
            &base,
        ),
    }
}

fn write_report(report: &EvalReport, out: &Path) -> CliResult<()> {
    write_output(&out.with_extension("json"), report.to_json())?;
    write_output(&out.with_extension("txt"), report.to_table())?;
    print!("{}", report.to_table());
    if report.per_utterance.is_empty() && !report.errors.is_empty() {
        return Err(CliError::missing(format!(
            "no record could be scored: {}",
            report.errors[0].message
        )));
    }
    Ok(())
}

pub fn evaluate_model(args: &ModelArgs<'_>, out: &Path, root: &Path) -> CliResult<EvalReport> {
    let report = with_extractor(args, root, |x, m, base| Ok(evaluate(x, m, base)))?;
    write_report(&report, out)?;
    Ok(report)
}

/// Writes `<mixture_id>.target.wav` for every record.
pub fn extract(args: &ModelArgs<'_>, out: &Path, root: &Path) -> CliResult<usize> {
    with_extractor(args, root, |x, manifest, base| {
        fs::create_dir_all(out).map_err(|e| CliError::config(format!("cannot create {}: {e}", out.display())))?;
        for rec in &manifest.records {
            let example = load_mixture(rec, base)?;
            let est = x.extract(&example)?;
            let path = out.join(format!("{}.target.wav", rec.mixture_id));
            write_wav(&path, &est).map_err(|e| CliError::config(e.to_string()))?;
        }
        println!("{} estimates -> {}", manifest.len(), out.display());
        Ok(manifest.len())
    })
}

pub fn oracle(manifest: &Path, mask: OracleMask, phase: PhaseSource, out: &Path, root: &Path) -> CliResult<EvalReport> {
    let (manifest, base) = read_manifest(&resolve(root, manifest))?;
    let report = evaluate(&OracleExtractor { mask, phase }, &manifest, &base);
    write_report(&report, out)?;
    Ok(report)
}
