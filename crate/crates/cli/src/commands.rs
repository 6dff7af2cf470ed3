use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, ValueEnum};
use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use vesselclip::contrastive::{ContrastiveConfig, DenominatorMode, ImagingSet, Modality, PairedData, Pretrainer, TowerConfig};
use vesselclip::encoders::Checkpoint;
use vesselclip::numcore::{Parameterized, Tape};
use vesselclip::synthdata::{gen_cohort, write_cohort, LabelWeights, SynthConfig};
use vesselclip::tasks::{
    auroc, finetune as run_finetune, predict, roc_points, Classifier, Cohort, DirImages, EvalReport, FinetuneConfig, Init, Method, SplitConfig, SplitRole,
    TaskData,
};
use vesselclip::vesselgraph::{self, serialize, BinaryMask, ExtractConfig, GraphFeatures};

use crate::config;

/// Tower sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Reduced widths that train on one core.
    Light,
    /// Published widths with the desk-scale CNN.
    Published,
    /// Published widths with a ResNet50 image encoder.
    Resnet50,
}

impl Preset {
    fn towers(self, modality: Modality, tab_dim: usize) -> TowerConfig {
        match self {
            Preset::Light => TowerConfig::light(modality, tab_dim),
            Preset::Published => TowerConfig::published(modality, tab_dim),
            Preset::Resnet50 => TowerConfig::resnet50(modality, tab_dim),
        }
    }
}

fn write_resolved<S: Serialize>(dir: &Path, name: &str, args: &S) -> Result<()> {
    fs::create_dir_all(dir)?;
    let path = dir.join(format!("{name}.cfg"));
    fs::write(&path, config::render(args)).with_context(|| format!("writing {}", path.display()))
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10_000)]
    pub n: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.1)]
    pub prevalence: f64,
    #[arg(long, default_value_t = 0.05)]
    pub missing_rate: f64,
    /// Gaussian blur of the probability maps, in pixels.
    #[arg(long, default_value_t = 1.5)]
    pub blur_sigma: f64,
    #[arg(long, default_value_t = 1.5)]
    pub weight_tortuosity: f64,
    #[arg(long, default_value_t = 1.5)]
    pub weight_branching: f64,
    #[arg(long, default_value_t = 1.0)]
    pub weight_risk: f64,
    #[arg(long, default_value_t = 0.3)]
    pub label_noise: f64,
    #[arg(long, default_value_t = 0.2)]
    pub test_frac: f64,
    #[arg(long, default_value_t = 0.2)]
    pub val_frac: f64,
    #[arg(long, default_value_t = 3.0)]
    pub prune_threshold: f64,
    #[arg(long, default_value_t = 5)]
    pub curve_stride: usize,
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        n: a.n,
        prevalence: a.prevalence,
        missing_rate: a.missing_rate,
        blur_sigma: a.blur_sigma,
        weights: LabelWeights { tortuosity: a.weight_tortuosity, branching: a.weight_branching, risk: a.weight_risk, noise: a.label_noise },
        split: SplitConfig { test_frac: a.test_frac, val_frac: a.val_frac, ..Default::default() },
        ..Default::default()
    };
    let start = Instant::now();
    let cohort = gen_cohort(&cfg, a.seed)?;
    let manifest = write_cohort(&cohort, &a.out, &ExtractConfig { prune_threshold: a.prune_threshold, curve_stride: a.curve_stride })?;
    write_resolved(&a.out, "synth", &a)?;
    info!("wrote {} subjects to {} ({:.1} s), prevalence {:.4}", manifest.n, a.out.display(), start.elapsed().as_secs_f64(), manifest.prevalence);
    Ok(())
}

#[derive(Debug, Args, Serialize)]
pub struct ExtractArgs {
    /// Directory of binary masks (PGM or PNG).
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Directory for the graph JSON files, one per mask.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 3.0)]
    pub prune_threshold: f64,
    #[arg(long, default_value_t = 5)]
    pub curve_stride: usize,
}

pub fn extract_graph_cmd(a: &ExtractArgs) -> Result<usize> {
    let mut masks: Vec<PathBuf> = fs::read_dir(&a.input)
        .with_context(|| format!("reading {}", a.input.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("pgm" | "png")))
        .collect();
    masks.sort();
    if masks.is_empty() {
        bail!("no .pgm or .png masks in {}", a.input.display());
    }
    fs::create_dir_all(&a.out)?;
    let cfg = ExtractConfig { prune_threshold: a.prune_threshold, curve_stride: a.curve_stride };
    masks.par_iter().try_for_each(|path| -> Result<()> {
        let mask = BinaryMask::read(path)?;
        let graph = vesselgraph::extract_graph(&mask, &cfg).with_context(|| path.display().to_string())?;
        let stem = path.file_stem().and_then(|s| s.to_str()).ok_or_else(|| anyhow!("bad file name {}", path.display()))?;
        fs::write(a.out.join(format!("{stem}.json")), serialize(&graph))?;
        Ok(())
    })?;
    Ok(masks.len())
}

pub fn extract_graph(a: ExtractArgs) -> Result<()> {
    let n = extract_graph_cmd(&a)?;
    write_resolved(&a.out, "extract-graph", &a)?;
    info!("extracted {n} graphs into {}", a.out.display());
    Ok(())
}

fn load_cohort(dir: &Path) -> Result<Cohort> {
    Cohort::load(dir).with_context(|| format!("loading cohort {}", dir.display()))
}

/// Imaging of one modality, kept alive while an [`ImagingSet`] borrows it.
enum Imaging {
    Graphs(Vec<GraphFeatures>),
    Images(Modality, DirImages),
}

impl Imaging {
    fn load(cohort: &Cohort, modality: Modality) -> Result<Self> {
        Ok(match modality {
            Modality::Graph => Imaging::Graphs(cohort.graphs()?),
            m => Imaging::Images(m, cohort.images(m)?),
        })
    }

    fn set(&self) -> ImagingSet<'_> {
        match self {
            Imaging::Graphs(g) => ImagingSet::Graphs(g),
            Imaging::Images(m, d) => ImagingSet::Images(*m, d),
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct PretrainArgs {
    /// Cohort directory written by `synth`.
    #[arg(long)]
    pub cohort: PathBuf,
    #[arg(long)]
    pub modality: Modality,
    /// Output directory for the checkpoint and training log.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Preset::Light)]
    pub preset: Preset,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.1)]
    pub temperature: f64,
    #[arg(long, default_value_t = 0.5)]
    pub lambda: f64,
    /// Denominator of the contrastive loss (as-written | standard).
    #[arg(long, default_value = "as-written")]
    pub mode: DenominatorMode,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub no_augment: bool,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

pub fn pretrain(a: PretrainArgs) -> Result<()> {
    let cohort = load_cohort(&a.cohort)?;
    let imaging = Imaging::load(&cohort, a.modality)?;
    let data = PairedData::new(imaging.set(), &cohort.tabular, cohort.tab_dim, cohort.fit_rows())?;
    fs::create_dir_all(&a.out)?;
    write_resolved(&a.out, "pretrain", &a)?;
    let ck_path = a.out.join("towers.ckpt");
    let mut trainer = match &a.resume {
        Some(path) => Pretrainer::<f64>::resume(&Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?, data)?,
        None => {
            let cfg = ContrastiveConfig {
                temperature: a.temperature,
                lambda: a.lambda,
                batch_size: a.batch_size,
                mode: a.mode,
                epochs: a.epochs,
                lr: a.lr,
                seed: a.seed,
                augment: !a.no_augment,
                ..Default::default()
            };
            Pretrainer::<f64>::new(cfg, a.preset.towers(a.modality, cohort.tab_dim), data)?
        }
    };
    let log_path = a.out.join("train_log.jsonl");
    let mut log = if a.resume.is_some() { fs::read_to_string(&log_path).unwrap_or_default() } else { String::new() };
    while !trainer.is_done() {
        let entry = trainer.run_epoch()?;
        info!("pretrain epoch {}: mean loss {:.4}, {:.1} s", entry.epoch, entry.mean_loss, entry.wall_seconds);
        log.push_str(&serde_json::to_string(&entry)?);
        log.push('\n');
        fs::write(&log_path, &log)?;
        trainer.checkpoint().save(&ck_path)?;
    }
    trainer.checkpoint().save(&ck_path)?;
    info!("saved {}", ck_path.display());
    Ok(())
}

#[derive(Debug, Args, Serialize)]
pub struct FinetuneArgs {
    #[arg(long)]
    pub cohort: PathBuf,
    /// tabular-nn | multimodal-nn | cl-raw | cl-prob | cl-graph
    #[arg(long)]
    pub method: Method,
    /// Towers from `pretrain` (required for cl-* unless --from-scratch).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Train cl-* towers from random initialisation.
    #[arg(long)]
    pub from_scratch: bool,
    /// Tower sizes for randomly initialised encoders.
    #[arg(long, value_enum, default_value_t = Preset::Light)]
    pub preset: Preset,
    /// Image input of multimodal-nn.
    #[arg(long, default_value = "raw")]
    pub image_modality: Modality,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 10)]
    pub patience: usize,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.1)]
    pub encoder_lr_scale: f64,
    #[arg(long)]
    pub freeze_encoders: bool,
    #[arg(long)]
    pub use_projections: bool,
    #[arg(long)]
    pub permute_labels: bool,
    #[arg(long)]
    pub no_augment: bool,
    /// Hidden width of tabular-nn and embedding width of multimodal-nn.
    #[arg(long, default_value_t = 256)]
    pub width: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Sampled negatives per positive in the fine-tuning subset.
    #[arg(long, default_value_t = 1.0)]
    pub neg_ratio: f64,
    /// Cap on the fine-tuning subset size.
    #[arg(long)]
    pub max_labels: Option<usize>,
}

impl FinetuneArgs {
    fn config(&self) -> FinetuneConfig {
        FinetuneConfig {
            method: self.method,
            epochs: self.epochs,
            patience: self.patience,
            batch_size: self.batch_size,
            lr: self.lr,
            encoder_lr_scale: self.encoder_lr_scale,
            freeze_encoders: self.freeze_encoders,
            from_scratch: self.from_scratch,
            use_projections: self.use_projections,
            permute_labels: self.permute_labels,
            augment: !self.no_augment,
            baseline_width: self.width,
            seed: self.seed,
            split: SplitConfig { neg_ratio: self.neg_ratio, max_labels: self.max_labels, ..Default::default() },
        }
    }

    fn image_modality(&self) -> Option<Modality> {
        match self.method {
            Method::TabularNn => None,
            Method::MultimodalNn => Some(self.image_modality),
            m => m.contrastive_modality(),
        }
    }
}

pub fn finetune(a: FinetuneArgs) -> Result<()> {
    let cfg = a.config();
    let cohort = load_cohort(&a.cohort)?;
    let split = cohort.split(&cfg.split, cfg.seed)?;
    let modality = a.image_modality();
    let imaging = modality.map(|m| Imaging::load(&cohort, m)).transpose()?;
    let data = TaskData { labels: &cohort.labels, tabular: &cohort.tabular, tab_dim: cohort.tab_dim, imaging: imaging.as_ref().map(Imaging::set) };
    let ck = a.checkpoint.as_deref().map(|p| Checkpoint::load(p).with_context(|| format!("loading {}", p.display()))).transpose()?;
    let init = match (&ck, a.method) {
        (Some(_), Method::TabularNn | Method::MultimodalNn) => bail!("{} trains from scratch and takes no checkpoint", a.method),
        (Some(ck), _) => Init::Pretrained(ck),
        (None, _) => Init::Fresh(a.preset.towers(modality.unwrap_or(Modality::Graph), cohort.tab_dim)),
    };
    fs::create_dir_all(&a.out)?;
    write_resolved(&a.out, "finetune", &a)?;
    let (model, report) = run_finetune::<f64>(&cfg, init, &data, &split)?;
    model.store(serde_json::json!({ "config": cfg, "report": report })).save(&a.out.join("model.ckpt"))?;
    report.write_json(&a.out.join("report.json"))?;
    report.write_roc_csv(&a.out.join("roc.csv"))?;
    info!("{}: test AUROC {:.4} ({} positive, {} negative)", a.method, report.auroc, report.n_pos, report.n_neg);
    Ok(())
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub cohort: PathBuf,
    /// `model.ckpt` written by `finetune`.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Image input of a multimodal-nn model.
    #[arg(long, default_value = "raw")]
    pub image_modality: Modality,
}

pub fn evaluate(a: EvaluateArgs) -> Result<()> {
    let ck = Checkpoint::load(&a.model).with_context(|| format!("loading {}", a.model.display()))?;
    let model = Classifier::<f64>::restore(&ck)?;
    let stored: EvalReport = serde_json::from_value(ck.header["finetune"]["report"].clone()).context("model header lacks the fine-tuning report")?;
    let cohort = load_cohort(&a.cohort)?;
    let imaging = model.config.modality.map(|m| Imaging::load(&cohort, m)).transpose()?;
    let data = TaskData { labels: &cohort.labels, tabular: &cohort.tabular, tab_dim: cohort.tab_dim, imaging: imaging.as_ref().map(Imaging::set) };
    let test: Vec<usize> = (0..cohort.len()).filter(|&i| cohort.roles[i] == SplitRole::Test).collect();
    let scores = predict(&model, &data, &test)?;
    let labels: Vec<bool> = test.iter().map(|&i| cohort.labels[i]).collect();
    let n_pos = labels.iter().filter(|&&l| l).count();
    let report = EvalReport {
        auroc: auroc(&scores, &labels)?,
        n_pos,
        n_neg: labels.len() - n_pos,
        roc: roc_points(&scores, &labels)?.into_iter().map(|(f, t)| [f, t]).collect(),
        ..stored
    };
    fs::create_dir_all(&a.out)?;
    write_resolved(&a.out, "evaluate", &a)?;
    report.write_json(&a.out.join("report.json"))?;
    report.write_roc_csv(&a.out.join("roc.csv"))?;
    println!("{}\t{:.4}", report.method, report.auroc);
    Ok(())
}

#[derive(Debug, Args, Serialize)]
pub struct CountArgs {
    /// Sizes of the raw/prob image pipeline.
    #[arg(long, value_enum, default_value_t = Preset::Resnet50)]
    pub image_preset: Preset,
    /// Sizes of the graph pipeline.
    #[arg(long, value_enum, default_value_t = Preset::Published)]
    pub graph_preset: Preset,
    /// Encoded tabular width (default: the cohort's, else the synthetic schema's).
    #[arg(long)]
    pub tab_dim: Option<usize>,
    /// Cohort used to time a few batches per pipeline.
    #[arg(long)]
    pub cohort: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    pub time_batches: usize,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    /// Also write the table as CSV here.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

fn synthetic_tab_dim() -> usize {
    let fields = vesselclip::synthdata::cohort_fields().into_iter().map(|f| f.field).collect();
    vesselclip::dataprep::TabularSchema::new(fields).column_names().len()
}

/// Seconds per epoch extrapolated from `k` timed batches.
fn time_pretrain(towers: &TowerConfig, cohort: &Cohort, imaging: &Imaging, batch: usize, k: usize) -> Result<f64> {
    let rows = cohort.fit_rows();
    let n = rows.len();
    let data = PairedData::new(imaging.set(), &cohort.tabular, cohort.tab_dim, rows)?;
    let cfg = ContrastiveConfig { batch_size: batch, epochs: 1, ..Default::default() };
    let mut p = Pretrainer::<f64>::new(cfg, towers.clone(), data)?;
    let start = Instant::now();
    for _ in 0..k {
        p.step()?;
    }
    Ok(start.elapsed().as_secs_f64() / k as f64 * (n / batch) as f64)
}

fn time_finetune(model: &mut Classifier<f64>, cohort: &Cohort, imaging: &Imaging, batch: usize, k: usize) -> Result<f64> {
    let split = cohort.split(&SplitConfig::default(), 0)?;
    let n = split.balanced.len();
    let data = PairedData::new(imaging.set(), &cohort.tabular, cohort.tab_dim, split.balanced.clone())?;
    let start = Instant::now();
    for chunk in split.balanced.chunks(batch).take(k) {
        let img = data.imaging_batch::<f64>(chunk, None)?;
        let tab = data.tabular_batch::<f64>(chunk)?;
        let mut tape = Tape::new();
        let logits = model.logits(&mut tape, Some(&img), &tab)?;
        let targets: Vec<usize> = chunk.iter().map(|&i| cohort.labels[i] as usize).collect();
        let loss = tape.cross_entropy(logits, &targets)?;
        tape.backward(loss)?;
        tape.write_grads(model.params_mut())?;
    }
    Ok(start.elapsed().as_secs_f64() / k as f64 * n.div_ceil(batch) as f64)
}

fn fmt_count(n: usize) -> String {
    format!("{:.2} M", n as f64 / 1e6)
}

pub fn count_params(a: CountArgs) -> Result<()> {
    let cohort = a.cohort.as_deref().map(load_cohort).transpose()?;
    let tab_dim = a.tab_dim.or(cohort.as_ref().map(|c| c.tab_dim)).unwrap_or_else(synthetic_tab_dim);
    let rows = [("CL-raw/prob", a.image_preset.towers(Modality::Raw, tab_dim)), ("CL-graph", a.graph_preset.towers(Modality::Graph, tab_dim))];
    let mut table = Vec::new();
    for (name, towers) in rows {
        let method = if towers.modality == Modality::Graph { Method::ClGraph } else { Method::ClRaw };
        let cfg = FinetuneConfig { method, from_scratch: true, ..Default::default() };
        let mut model = Classifier::<f64>::build(&cfg, &Init::Fresh(towers.clone()), tab_dim, &mut ChaCha8Rng::seed_from_u64(0))?;
        let finetune_params = model.params().iter().map(|p| p.len()).sum::<usize>();
        let (pre_s, fine_s) = match &cohort {
            Some(c) if a.time_batches > 0 => {
                let imaging = Imaging::load(c, towers.modality)?;
                (
                    Some(time_pretrain(&towers, c, &imaging, a.batch_size, a.time_batches)?),
                    Some(time_finetune(&mut model, c, &imaging, a.batch_size, a.time_batches)?),
                )
            }
            _ => (None, None),
        };
        table.push((name, towers.num_params(), pre_s, finetune_params, fine_s));
    }
    let secs = |s: Option<f64>| s.map_or_else(|| "-".to_string(), |s| format!("{s:.1} s"));
    let mut text = format!("{:<12}  {:>14}  {:>10}  {:>14}  {:>10}\n", "", "Pretraining", "Per epoch", "Fine-tuning", "Per epoch");
    let mut csv = String::from("pipeline,pretrain_params,pretrain_epoch_s,finetune_params,finetune_epoch_s\n");
    for (name, pp, ps, fp, fs_) in &table {
        let _ = writeln!(text, "{name:<12}  {:>14}  {:>10}  {:>14}  {:>10}", fmt_count(*pp), secs(*ps), fmt_count(*fp), secs(*fs_));
        let opt = |s: &Option<f64>| s.map_or(String::new(), |s| format!("{s:.3}"));
        let _ = writeln!(csv, "{name},{pp},{},{fp},{}", opt(ps), opt(fs_));
    }
    print!("{text}");
    if let Some(path) = &a.csv {
        fs::write(path, csv)?;
        write_resolved(path.parent().unwrap_or(Path::new(".")), "count-params", &a)?;
    }
    Ok(())
}

#[derive(Debug, Args, Serialize)]
pub struct ReportArgs {
    /// Report files or directories searched recursively for `report.json`.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Also write the table as CSV here.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

fn collect_reports(path: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    if path.is_file() {
        out.push(path.to_path_buf());
    } else if path.is_dir() {
        let mut entries: Vec<PathBuf> = fs::read_dir(path)?.filter_map(|e| e.ok().map(|e| e.path())).collect();
        entries.sort();
        for p in entries {
            if p.is_dir() {
                collect_reports(&p, out)?;
            } else if p.file_name().is_some_and(|n| n == "report.json") {
                out.push(p);
            }
        }
    } else {
        bail!("{} does not exist", path.display());
    }
    Ok(())
}

/// Table rows in method order; scratch and permuted runs get their own rows.
pub fn report_table(reports: &[EvalReport]) -> (String, String) {
    let mut groups: BTreeMap<(Method, bool, bool), Vec<f64>> = BTreeMap::new();
    let mut seen = std::collections::HashSet::new();
    // `evaluate` reproduces a fine-tuning report; count each run once
    for r in reports.iter().filter(|r| seen.insert((r.config_hash.clone(), r.seed))) {
        let scratch = r.method.is_contrastive() && !r.pretrained;
        groups.entry((r.method, scratch, r.permuted)).or_default().push(r.auroc);
    }
    let mut text = format!("{:<36}  {:>4}  {:>8}  {:>8}\n", "Method", "runs", "AUROC", "sd");
    let mut csv = String::from("method,variant,runs,auroc_mean,auroc_sd\n");
    for ((method, scratch, permuted), v) in groups {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let sd = if v.len() > 1 { (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
        let variant = match (scratch, permuted) {
            (false, false) => "",
            (true, false) => "scratch",
            (false, true) => "permuted",
            (true, true) => "scratch+permuted",
        };
        let label = if variant.is_empty() { method.title().to_string() } else { format!("{} ({variant})", method.title()) };
        let _ = writeln!(text, "{label:<36}  {:>4}  {:>7.2}%  {:>7.2}%", v.len(), 100.0 * mean, 100.0 * sd);
        let _ = writeln!(csv, "{},{variant},{},{mean:.6},{sd:.6}", method.name(), v.len());
    }
    (text, csv)
}

pub fn report(a: ReportArgs) -> Result<()> {
    let mut paths = Vec::new();
    for p in &a.inputs {
        collect_reports(p, &mut paths)?;
    }
    if paths.is_empty() {
        bail!("no report.json found");
    }
    let reports = paths
        .iter()
        .map(|p| -> Result<EvalReport> { serde_json::from_slice(&fs::read(p)?).with_context(|| format!("parsing {}", p.display())) })
        .collect::<Result<Vec<_>>>()?;
    let (text, csv) = report_table(&reports);
    print!("{text}");
    if let Some(path) = &a.csv {
        fs::write(path, csv)?;
        write_resolved(path.parent().unwrap_or(Path::new(".")), "report", &a)?;
    }
    Ok(())
}
