use std::fmt;
use std::path::{Path, PathBuf};

use fogadapt::config::PipelineConfig;
use fogadapt::entropy::{entropy_stats, self_entropy_map};
use fogadapt::fog::{apply_fog, beta_for_visibility, FogParams};
use fogadapt::formats;
use fogadapt::fusion::{ScaleSet, Segmenter};
use fogadapt::net::ToySegNet;
use fogadapt::pseudolabel::{
    compute_spatial_priors, generate_pseudo_labels, score_volume, select_round, summarize, SelectionRound,
    SpatialPrior,
};
use fogadapt::synth::{self, Domain, CLASS_NAMES, NUM_CLASSES};
use fogadapt::tensor::{LabelMap, ProbVolume, IGNORE};
use fogadapt::train::{self, AdaptOptions, Labeled};
use fogadapt::Error;
use rayon::prelude::*;

use crate::io::{self, load_images, load_labeled, load_probs, parse_indices, parse_list, write_text};
use crate::viz;
use crate::{
    AdaptArgs, Cli, Command, DomainArg, EntropyMapArgs, EvalArgs, FogSimArgs, GenerateArgs, PseudoLabelArgs,
    ReportArgs, ScaleArgs, TrainArgs,
};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(Error),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage: {m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| usage(format!("cannot configure thread pool: {e}")))?;
    }
    let config = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    match cli.command {
        Command::Generate(a) => generate(a, config),
        Command::FogSim(a) => fog_sim(a, config),
        Command::EntropyMap(a) => entropy_map(a),
        Command::PseudoLabel(a) => pseudo_label(a, config),
        Command::Train(a) => train_cmd(a, config),
        Command::Adapt(a) => adapt_cmd(a, config),
        Command::Eval(a) => eval(a),
        Command::Report(a) => report(a),
    }
}

fn generate(a: GenerateArgs, config: PipelineConfig) -> Result<()> {
    let mut spec = config.scene;
    spec.domain = match a.domain {
        DomainArg::Source => Domain::Source,
        DomainArg::Target => Domain::Target,
    };
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    if let Some(r) = &a.fog_beta_range {
        let v = parse_list(r, "--fog-beta-range")?;
        let [lo, hi] = v[..] else {
            return Err(usage("--fog-beta-range takes two values \"lo,hi\""));
        };
        spec.fog_beta_range = [lo, hi];
    }
    let m = synth::generate_dataset(&spec, a.n, &a.out)?;
    println!("wrote {} scenes to {}", m.count, a.out.display());
    Ok(())
}

fn fog_sim(a: FogSimArgs, config: PipelineConfig) -> Result<()> {
    let beta = match (a.beta, a.visibility) {
        (Some(b), None) => b,
        (None, Some(v)) => beta_for_visibility(v)?,
        _ => return Err(usage("exactly one of --beta and --visibility is required")),
    };
    let atmo = match &a.atmo {
        Some(s) => {
            let v = parse_list(s, "--atmo")?;
            let [r, g, b] = v[..] else {
                return Err(usage("--atmo takes three values \"r,g,b\""));
            };
            [r, g, b]
        }
        None => config.fog.atmo_light,
    };
    let img = formats::read_rgb_png(&a.input)?;
    let depth = formats::read_fdep(&a.depth)?;
    let fogged = apply_fog(&img, &depth, &FogParams::new(beta, atmo)?)?;
    formats::write_rgb_png(&a.out, &fogged)?;
    Ok(())
}

fn check_classes(net: &ToySegNet, classes: usize) -> Result<()> {
    if net.classes() != classes {
        return Err(Error::Format(format!(
            "checkpoint predicts {} classes but the data has {classes}",
            net.classes()
        ))
        .into());
    }
    Ok(())
}

fn entropy_map(a: EntropyMapArgs) -> Result<()> {
    let (names, probs): (Vec<String>, Vec<ProbVolume>) = match (&a.model, &a.probs_dir, &a.input) {
        (Some(model), None, Some(input)) => {
            let net = formats::read_checkpoint(model)?;
            let (names, images) = if input.is_dir() {
                load_images(input)?
            } else {
                (vec![io::stem(input)], vec![formats::read_rgb_png(input)?])
            };
            let probs = images.par_iter().map(|img| net.predict(img)).collect::<fogadapt::Result<Vec<_>>>()?;
            (names, probs)
        }
        (None, Some(dir), None) => load_probs(dir)?,
        _ => return Err(usage("give either --model with --in, or --probs-dir")),
    };
    let maps = probs.iter().map(self_entropy_map).collect::<fogadapt::Result<Vec<_>>>()?;
    let single = maps.len() == 1 && a.out_map.extension().is_some_and(|e| e == "png");
    for (name, map) in names.iter().zip(&maps) {
        let path = if single { a.out_map.clone() } else { a.out_map.join(format!("{name}.png")) };
        let bytes = formats::encode_gray_png(map.height(), map.width(), &viz::entropy_gray(map))?;
        formats::write_bytes(&path, &bytes)?;
    }
    write_text(&a.out_stats, &entropy_stats(&maps, None)?.to_csv())?;
    Ok(())
}

fn spatial_priors(source_dir: Option<&Path>, config: &PipelineConfig, classes: usize) -> Result<SpatialPrior> {
    let dir = source_dir
        .or(config.source_dir.as_deref())
        .ok_or_else(|| usage("spatial priors need a source dataset (--source-dir)"))?;
    let source = synth::load_dataset(dir)?;
    let (h, w) = (config.scene.height, config.scene.width);
    Ok(compute_spatial_priors(&source.labels, classes, h, w, config.prior_sigma)?)
}

fn write_pseudo_labels(dir: &Path, names: &[String], round: &SelectionRound) -> Result<()> {
    names.par_iter().zip(&round.labels).try_for_each(|(name, pl)| -> fogadapt::Result<()> {
        formats::write_label_png(&dir.join("label").join(format!("{name}.png")), pl.labels())?;
        let rho: Vec<u8> = pl.rho().iter().map(|&r| if r { 255 } else { 0 }).collect();
        let (h, w) = (pl.labels().height(), pl.labels().width());
        formats::write_bytes(&dir.join("rho").join(format!("{name}.png")), &formats::encode_gray_png(h, w, &rho)?)
    })?;
    let names: Vec<&str> = CLASS_NAMES.to_vec();
    let classes = round.coverage.candidates.len();
    let labels: Vec<&str> = (0..classes).map(|k| names.get(k).copied().unwrap_or("?")).collect();
    write_text(&dir.join("coverage.csv"), &round.coverage.to_csv(&labels))?;
    Ok(())
}

/// Writes pseudo-label IoU when ground truth for the target set is available.
fn write_quality(dir: &Path, target_dir: Option<&Path>, round: &SelectionRound, classes: usize) -> Result<()> {
    let Some(tdir) = target_dir else { return Ok(()) };
    if !tdir.join(synth::MANIFEST).is_file() {
        return Ok(());
    }
    let ds = synth::load_dataset(tdir)?;
    let cm = train::pseudo_label_confusion(round, &ds.labels, classes)?;
    if cm.total() > 0 {
        write_text(&dir.join("quality.csv"), &cm.iou(&[])?.to_csv(&CLASS_NAMES))?;
    }
    Ok(())
}

fn scale_factors(a: &ScaleArgs, config: &PipelineConfig) -> Result<Vec<f64>> {
    if let Some(s) = &a.scales {
        return Ok(parse_list(s, "--scales")?);
    }
    let set = ScaleSet::new(
        a.s_upper.unwrap_or(config.scales.s_upper),
        a.s_lower.unwrap_or(config.scales.s_lower),
    )?;
    Ok(set.factors().to_vec())
}

fn pseudo_label(a: PseudoLabelArgs, config: PipelineConfig) -> Result<()> {
    let portion = a.portion.unwrap_or(config.train.schedule.initial_portion);
    let factors = scale_factors(&a.scales, &config)?;
    let (names, round) = match (&a.model, &a.probs_dir) {
        (Some(model), None) => {
            let target = a.target_dir.as_deref().ok_or_else(|| usage("--model needs --target-dir"))?;
            let net = formats::read_checkpoint(model)?;
            let (names, images) = load_images(target)?;
            let priors = if a.spatial_priors { Some(spatial_priors(a.source_dir.as_deref(), &config, net.classes())?) } else { None };
            let round = generate_pseudo_labels(&net, &images, &factors, portion, priors.as_ref())?;
            (names, round)
        }
        (None, Some(dir)) => {
            let (names, probs) = load_probs(dir)?;
            let classes = probs[0].classes();
            if probs.iter().any(|p| p.classes() != classes) {
                return Err(Error::Format("probability volumes disagree on class count".into()).into());
            }
            let priors = if a.spatial_priors { Some(spatial_priors(a.source_dir.as_deref(), &config, classes)?) } else { None };
            let summaries = probs
                .into_par_iter()
                .map(|p| Ok(summarize(&score_volume(p, priors.as_ref())?)))
                .collect::<fogadapt::Result<Vec<_>>>()?;
            (names, select_round(&summaries, classes, portion)?)
        }
        _ => return Err(usage("give either --model with --target-dir, or --probs-dir")),
    };
    write_pseudo_labels(&a.out_dir, &names, &round)?;
    write_quality(&a.out_dir, a.target_dir.as_deref(), &round, round.coverage.candidates.len())?;
    Ok(())
}

fn train_cmd(a: TrainArgs, config: PipelineConfig) -> Result<()> {
    let mut cfg = config.train.clone();
    if let Some(lr) = a.lr {
        cfg.learning_rate = lr;
    }
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    let epochs = a.epochs.unwrap_or(cfg.pretrain_epochs);
    let source_dir = a.source_dir.or(config.source_dir.clone()).ok_or_else(|| usage("--source-dir is required"))?;
    let translated = a.translated_source_dir.or(config.translated_source_dir.clone());
    let src = load_labeled(&source_dir, translated.as_deref())?;
    let net = ToySegNet::init(cfg.seed, NUM_CLASSES)?;
    let out = train::train_source(&net, Labeled::new(&src.images, &src.labels)?, &cfg, epochs)?;
    formats::write_checkpoint(&a.out, &out.net)?;
    if let Some(path) = &a.losses {
        write_text(path, &train::losses_csv(&out.losses))?;
    }
    Ok(())
}

fn adapt_cmd(a: AdaptArgs, config: PipelineConfig) -> Result<()> {
    let mut cfg = config.train.clone();
    if let Some(r) = a.rounds {
        cfg.schedule.rounds = r;
    }
    if let Some(l) = a.lambda_se {
        cfg.lambda_se = l;
    }
    if let Some(lr) = a.lr {
        cfg.learning_rate = lr;
    }
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    let model = a.model.or(config.checkpoint.clone()).ok_or_else(|| usage("--model is required"))?;
    let source_dir = a.source_dir.or(config.source_dir.clone()).ok_or_else(|| usage("--source-dir is required"))?;
    let target_dir = a.target_dir.or(config.target_dir.clone()).ok_or_else(|| usage("--target-dir is required"))?;
    let out_dir = a.out_dir.or(config.out_dir.clone()).ok_or_else(|| usage("--out-dir is required"))?;
    let translated = a.translated_source_dir.or(config.translated_source_dir.clone());
    let factors = scale_factors(&a.scales, &config)?;

    let net = formats::read_checkpoint(&model)?;
    check_classes(&net, NUM_CLASSES)?;
    let src = load_labeled(&source_dir, translated.as_deref())?;
    let (names, target) = load_images(&target_dir)?;
    let priors = if a.spatial_priors || config.spatial_priors {
        let (h, w) = (config.scene.height, config.scene.width);
        Some(compute_spatial_priors(&src.labels, NUM_CLASSES, h, w, config.prior_sigma)?)
    } else {
        None
    };
    let out = train::adapt(
        &net,
        Labeled::new(&src.images, &src.labels)?,
        &target,
        &cfg,
        &AdaptOptions { factors, priors },
    )?;
    for (r, (round, ckpt)) in out.rounds.iter().zip(&out.checkpoints).enumerate() {
        let dir = out_dir.join(format!("round_{r}"));
        write_pseudo_labels(&dir.join("pseudo"), &names, round)?;
        write_quality(&dir.join("pseudo"), Some(&target_dir), round, NUM_CLASSES)?;
        formats::write_checkpoint(&dir.join("model.fseg"), ckpt)?;
    }
    write_text(&out_dir.join("losses.csv"), &train::losses_csv(&out.losses))?;
    formats::write_checkpoint(&out_dir.join("final.fseg"), &out.net)?;
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let frequent = parse_indices(&a.frequent)?;
    let net = formats::read_checkpoint(&a.model)?;
    let ds = synth::load_dataset(&a.data_dir)?;
    if let Some(&k) = frequent.iter().find(|&&k| k >= net.classes()) {
        return Err(usage(format!("frequent class {k} is out of range")));
    }
    for (i, l) in ds.labels.iter().enumerate() {
        if let Some(&v) = l.data().iter().find(|&&v| v != IGNORE && v as usize >= net.classes()) {
            return Err(Error::Format(format!(
                "label {v} in entry {i} exceeds the checkpoint's {} classes",
                net.classes()
            ))
            .into());
        }
    }
    let cm = train::evaluate(&net, Labeled::new(&ds.images, &ds.labels)?)?;
    let report = cm.iou(&frequent)?;
    write_text(&a.out, &report.to_csv(&CLASS_NAMES))?;
    println!("mIoU {:.4}", report.miou);
    Ok(())
}

/// Column-wise merge of two-column CSVs keyed by their first field.
fn merge_csvs(paths: &[PathBuf]) -> Result<String> {
    let mut keys: Vec<String> = Vec::new();
    let mut columns: Vec<Vec<(String, String)>> = Vec::new();
    for path in paths {
        let text = String::from_utf8(formats::read_bytes(path)?)
            .map_err(|_| Error::Format(format!("{}: not UTF-8", path.display())))?;
        let mut rows = Vec::new();
        for (n, line) in text.lines().enumerate().skip(1) {
            let Some((k, v)) = line.split_once(',') else {
                return Err(Error::Format(format!("{}:{}: expected key,value", path.display(), n + 1)).into());
            };
            if !keys.iter().any(|x| x == k) {
                keys.push(k.to_string());
            }
            rows.push((k.to_string(), v.to_string()));
        }
        columns.push(rows);
    }
    let mut out = String::from("key");
    for p in paths {
        out.push(',');
        out.push_str(&io::stem(p));
    }
    out.push('\n');
    for k in &keys {
        out.push_str(k);
        for col in &columns {
            out.push(',');
            if let Some((_, v)) = col.iter().find(|(ck, _)| ck == k) {
                out.push_str(v);
            }
        }
        out.push('\n');
    }
    Ok(out)
}

fn report(a: ReportArgs) -> Result<()> {
    if a.model.is_none() && a.csvs.is_empty() {
        return Err(usage("nothing to report: give --model/--data-dir and/or --csv"));
    }
    if let (Some(model), Some(data_dir)) = (&a.model, &a.data_dir) {
        let net = formats::read_checkpoint(model)?;
        let ds = synth::load_dataset(data_dir)?;
        let n = a.count.min(ds.len());
        (0..n).into_par_iter().try_for_each(|i| -> Result<()> {
            let p = net.predict(&ds.images[i])?;
            let pred: LabelMap = p.argmax();
            let h = self_entropy_map(&p)?;
            let panel = viz::panel(&ds.images[i], &ds.labels[i], &pred, &h)?;
            let name = io::stem(Path::new(&ds.manifest.images[i]));
            formats::write_rgb_png(&a.out_dir.join(format!("panel_{name}.png")), &panel)?;
            Ok(())
        })?;
    }
    if !a.csvs.is_empty() {
        write_text(&a.out_dir.join("summary.csv"), &merge_csvs(&a.csvs)?)?;
    }
    Ok(())
}
