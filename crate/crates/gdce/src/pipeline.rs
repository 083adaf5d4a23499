//! The end-to-end steps behind each subcommand. Every step writes only into
//! its output directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use gdce_core::curve::CurveCoefficients;
use gdce_core::image::{Normalization, Plane, UnitImage};
use gdce_core::metrics::MetricsReport;
use gdce_core::models::{Discriminator, Gdce};
use gdce_core::synth::{self, ShiftProfile, REFERENCE_SCANNER, SHIFTED_SCANNER};
use gdce_core::train::{self, AblationGrid, Dataset, EpochLog, Objective, ReferencePool, TrainState};
use gdce_core::{PerceptualExtractor, Tensor};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, CLASSIFIER_STATE, GDCE_STATE};
use crate::config::RunConfig;
use crate::error::{DataError, Result as DataResult};
use crate::io;
use crate::manifest::{DatasetManifest, Entry, LoadedSet};

pub const MANIFEST: &str = "manifest.json";
pub const DISCRIMINATOR: &str = "discriminator.ckpt";
pub const GDCE: &str = "gdce.ckpt";
pub const PERCEPTUAL: &str = "perceptual.ckpt";
pub const ALPHA_LOG: &str = "alphas.tsv";

/// Any failure of a pipeline step, kept typed so the CLI can pick an exit code.
#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Core(#[from] gdce_core::Error),
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error("{0}")]
    Usage(String),
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scanner {
    Reference,
    Shifted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Generator draw for each (scanner, split) so no two sets share images.
pub fn domain_tag(scanner: Scanner, split: Split) -> u64 {
    match (scanner, split) {
        (Scanner::Reference, Split::Train) => 0,
        (Scanner::Shifted, Split::Train) => 1,
        (Scanner::Reference, Split::Test) => 2,
        (Scanner::Shifted, Split::Test) => 3,
    }
}

/// Create `dir`, refusing a non-empty one unless `force`.
pub fn prepare_out_dir(dir: &Path, force: bool) -> DataResult<()> {
    if dir.exists() {
        let mut it = fs::read_dir(dir).map_err(|e| DataError::io(dir, e))?;
        if it.next().is_some() && !force {
            return Err(DataError::NotEmpty(dir.to_owned()));
        }
    }
    fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e))
}

fn write(path: &Path, text: impl AsRef<[u8]>) -> DataResult<()> {
    fs::write(path, text).map_err(|e| DataError::io(path, e))
}

fn dump_config(cfg: &RunConfig, dir: &Path) -> DataResult<()> {
    cfg.dump(dir).map_err(|e| DataError::io(&dir.join("config.toml"), e))
}

fn write_profile(profile: &ShiftProfile, dir: &Path) -> DataResult<()> {
    write(&dir.join("profile.json"), serde_json::to_string_pretty(profile).expect("profile serializes"))
}

fn file_name(classes: &[String], label: usize, i: usize) -> PathBuf {
    PathBuf::from(format!("{}_{i:05}.pgm", classes[label]))
}

/// Generate one synthetic set. Shifted sets go through the configured profile.
pub fn gen_data(cfg: &RunConfig, scanner: Scanner, split: Split, out: &Path, force: bool) -> Result<DatasetManifest> {
    prepare_out_dir(out, force)?;
    let spec = cfg.synth_spec(split == Split::Test);
    let samples = synth::generate(&spec, domain_tag(scanner, split))?;
    let class_names = synth::class_names(spec.classes);
    let mut entries = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let (raw, id) = match scanner {
            Scanner::Reference => (s.image.quantize(16)?, REFERENCE_SCANNER),
            Scanner::Shifted => (synth::apply_shift(&s.image, &cfg.shift)?, SHIFTED_SCANNER),
        };
        let path = file_name(&class_names, s.label, i);
        io::save_raw(&raw.with_scanner(id).with_label(s.label), &out.join(&path))?;
        entries.push(Entry { path, label: s.label, scanner: id.into(), fold: s.fold, window: None });
    }
    let manifest = DatasetManifest { class_names, entries };
    manifest.save(&out.join(MANIFEST))?;
    if scanner == Scanner::Shifted {
        write_profile(&cfg.shift, out)?;
    }
    dump_config(cfg, out)?;
    Ok(manifest)
}

/// Push every image of a manifest through `profile`.
pub fn shift_dataset(manifest: &Path, profile: &ShiftProfile, out: &Path, force: bool) -> Result<DatasetManifest> {
    profile.validate()?;
    let set = LoadedSet::load(manifest)?;
    prepare_out_dir(out, force)?;
    let mut entries = Vec::with_capacity(set.images.len());
    for (img, e) in set.images.iter().zip(&set.manifest.entries) {
        let unit = img.normalize_bit_depth();
        let raw = synth::apply_shift(&unit, profile).map_err(|err| DataError::Image(e.path.clone(), err))?;
        let path = PathBuf::from(e.path.file_name().unwrap_or(e.path.as_os_str()));
        io::save_raw(&raw.with_scanner(SHIFTED_SCANNER).with_label(e.label), &out.join(&path))?;
        entries.push(Entry { path, scanner: SHIFTED_SCANNER.into(), window: None, ..e.clone() });
    }
    let shifted = DatasetManifest { class_names: set.manifest.class_names.clone(), entries };
    shifted.save(&out.join(MANIFEST))?;
    write_profile(profile, out)?;
    Ok(shifted)
}

/// Resume and early-stop controls shared by both training commands.
#[derive(Debug, Clone, Copy, Default)]
pub struct TrainOptions {
    pub resume: bool,
    pub force: bool,
    /// Stop once this many epochs are complete, leaving a resumable state.
    pub stop_after_epoch: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub epochs_completed: usize,
    pub complete: bool,
    pub best_epoch: Option<usize>,
    pub best_worst_group: Option<f64>,
    /// Final checkpoint and its SHA-256, once training is complete.
    pub checkpoint: Option<PathBuf>,
    pub sha256: Option<String>,
}

fn check_size(set: &LoadedSet, cfg: &RunConfig) -> Result<()> {
    let size = set.image_size()?;
    if size != cfg.data.image_size {
        return Err(PipelineError::Usage(format!(
            "{}: images are {size}x{size} but the configuration expects {}",
            set.dir.display(),
            cfg.data.image_size
        )));
    }
    Ok(())
}

fn state_path(out: &Path, role: &str) -> PathBuf {
    out.join(format!("{role}.ckpt"))
}

fn write_log(path: &Path, log: &[EpochLog]) -> DataResult<()> {
    let text: String = log.iter().map(|l| serde_json::to_string(l).expect("log serializes") + "\n").collect();
    write(path, text)
}

fn split(set: &LoadedSet, norm: Normalization, val_fold: usize, drop: &[usize]) -> Result<(Dataset, Dataset)> {
    let keep = |e: &Entry, val: bool| !drop.contains(&e.label) && (e.fold == val_fold) == val;
    let train = set.dataset(norm, |e| keep(e, false))?;
    let val = set.dataset(norm, |e| keep(e, true))?;
    Ok((train, val))
}

/// Shared epoch loop: load or create the state, run epochs, persist after each.
fn run_epochs<M: Clone>(
    out: &Path,
    role: &str,
    log_name: &str,
    epochs: usize,
    opts: TrainOptions,
    seed: u64,
    fresh: impl FnOnce() -> Result<TrainState<M>>,
    load: impl Fn(gdce_core::Network) -> gdce_core::Result<M>,
    net: impl Fn(&M) -> &gdce_core::Network + Copy,
    mut epoch: impl FnMut(&mut TrainState<M>) -> Result<()>,
) -> Result<TrainState<M>> {
    let sp = state_path(out, role);
    let mut state = if opts.resume && sp.exists() {
        let s = checkpoint::load_state(&sp, role, load)?;
        log::info!("resuming {role} after epoch {}", s.epoch);
        s
    } else {
        fresh()?
    };
    while state.epoch < epochs {
        if opts.stop_after_epoch.is_some_and(|k| state.epoch >= k) {
            break;
        }
        epoch(&mut state)?;
        checkpoint::save_state(&sp, role, &state, seed, net)?;
        write_log(&out.join(log_name), &state.log)?;
    }
    Ok(state)
}

fn outcome<M>(state: &TrainState<M>, epochs: usize, ckpt: Option<PathBuf>) -> Result<TrainOutcome> {
    let sha256 = ckpt.as_deref().map(checkpoint::sha256_file).transpose()?;
    Ok(TrainOutcome {
        epochs_completed: state.epoch,
        complete: state.epoch >= epochs,
        best_epoch: state.best.as_ref().map(|b| b.epoch),
        best_worst_group: state.best.as_ref().map(|b| b.worst_group),
        checkpoint: ckpt,
        sha256,
    })
}

fn begin(out: &Path, opts: TrainOptions, cfg: &RunConfig) -> Result<()> {
    prepare_out_dir(out, opts.force || opts.resume)?;
    dump_config(cfg, out)?;
    Ok(())
}

/// Train the task classifier on a reference manifest; writes the frozen
/// best-epoch model to `discriminator.ckpt`.
pub fn train_clf(cfg: &RunConfig, manifest: &Path, out: &Path, opts: TrainOptions) -> Result<TrainOutcome> {
    let set = LoadedSet::load(manifest)?;
    check_size(&set, cfg)?;
    begin(out, opts, cfg)?;
    let stage = &cfg.classifier;
    let (train_set, val) = split(&set, cfg.normalization()?, stage.val_fold, &stage.drop_classes)?;
    if train_set.distinct_labels() < 2 {
        return Err(gdce_core::Error::SingleClass.into());
    }
    let tc = stage.train_config(cfg.seed);
    let classes = set.manifest.classes();
    let state = run_epochs(
        out,
        CLASSIFIER_STATE,
        "classifier_log.jsonl",
        tc.epochs,
        opts,
        cfg.seed,
        || Ok(train::classifier_state(Discriminator::new(classes, cfg.data.image_size, cfg.seed)?, &tc)?),
        |n| Discriminator::from_network(n, false),
        |d: &Discriminator| d.network(),
        |s| {
            train::classifier_epoch(s, &tc, &train_set, &val)?;
            Ok(())
        },
    )?;
    let ckpt = if state.epoch >= tc.epochs {
        let mut best = state.best_model().clone();
        best.freeze();
        let p = out.join(DISCRIMINATOR);
        checkpoint::save_discriminator(&p, &best, cfg.seed)?;
        Some(p)
    } else {
        None
    };
    outcome(&state, tc.epochs, ckpt)
}

/// Inputs of enhancer training.
#[derive(Debug, Clone)]
pub struct GdceInputs {
    /// Shifted-domain training manifest.
    pub shifted: PathBuf,
    /// Reference-domain manifest providing the perceptual references.
    pub reference: PathBuf,
    pub discriminator: PathBuf,
}

pub fn require_discriminator(path: &Path) -> Result<Discriminator> {
    if !path.exists() {
        return Err(DataError::Missing {
            what: "discriminator checkpoint",
            path: path.to_owned(),
            hint: "run train-clf first",
        }
        .into());
    }
    let d = checkpoint::load_discriminator(path)?;
    d.require_frozen()?;
    Ok(d)
}

fn reference_pool(path: &Path, norm: Normalization, cfg: &RunConfig) -> Result<ReferencePool> {
    let set = LoadedSet::load(path)?;
    check_size(&set, cfg)?;
    Ok(ReferencePool::new(set.planes(norm)?)?)
}

fn unit_norm(cfg: &RunConfig) -> Result<Normalization> {
    let norm = cfg.normalization()?;
    if !norm.is_unit_range() {
        return Err(PipelineError::Usage(format!(
            "the enhancer needs unit-range inputs; normalization `{}` is unbounded",
            norm.name()
        )));
    }
    Ok(norm)
}

/// Train the enhancer against a frozen discriminator; writes the best epoch
/// to `gdce.ckpt`.
pub fn train_gdce(cfg: &RunConfig, inputs: &GdceInputs, out: &Path, opts: TrainOptions) -> Result<TrainOutcome> {
    let disc = require_discriminator(&inputs.discriminator)?;
    let norm = unit_norm(cfg)?;
    let set = LoadedSet::load(&inputs.shifted)?;
    check_size(&set, cfg)?;
    let refs = reference_pool(&inputs.reference, norm, cfg)?;
    begin(out, opts, cfg)?;
    let stage = &cfg.gdce;
    let (train_set, val) = split(&set, norm, stage.val_fold, &stage.drop_classes)?;
    let extractor = PerceptualExtractor::new(cfg.perceptual.tap, cfg.data.image_size, cfg.perceptual.seed)?;
    checkpoint::save_perceptual(&out.join(PERCEPTUAL), &extractor, cfg.perceptual.seed)?;
    let objective = Objective { disc: &disc, extractor: &extractor, reduction: cfg.perceptual.reduction };
    let tc = stage.train_config(cfg.seed);
    let before = disc.checksum();
    let state = run_epochs(
        out,
        GDCE_STATE,
        "gdce_log.jsonl",
        tc.epochs,
        opts,
        cfg.seed,
        || Ok(train::gdce_state(Gdce::new(&cfg.model, cfg.seed)?, &tc)?),
        Gdce::from_network,
        |g: &Gdce| g.network(),
        |s| {
            train::gdce_epoch(s, &tc, &objective, &train_set, &refs, &val)?;
            Ok(())
        },
    )?;
    assert_eq!(before, disc.checksum(), "discriminator changed during enhancer training");
    let ckpt = if state.epoch >= tc.epochs {
        let p = out.join(GDCE);
        checkpoint::save_gdce(&p, state.best_model(), cfg.seed)?;
        Some(p)
    } else {
        None
    };
    outcome(&state, tc.epochs, ckpt)
}

/// Class probabilities of `disc` on a dataset, optionally after enhancement.
pub fn score(disc: &Discriminator, gdce: Option<&Gdce>, data: &Dataset) -> gdce_core::Result<MetricsReport> {
    train::evaluate(data, disc.classes(), |x: &Tensor<f32>| match gdce {
        Some(g) => disc.probabilities(&g.enhance_batch(x)?.0),
        None => disc.probabilities(x),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub manifest: PathBuf,
    pub normalization: String,
    pub enhanced: bool,
    pub class_names: Vec<String>,
    /// Classes with no samples in the manifest.
    pub absent_groups: Vec<String>,
    pub auc_scheme: String,
    pub tie_break: String,
    pub metrics: MetricsReport,
}

impl EvalReport {
    pub fn render(&self) -> String {
        let m = &self.metrics;
        let mut s = String::new();
        let _ = writeln!(s, "manifest      {}", self.manifest.display());
        let _ = writeln!(s, "normalization {}{}", self.normalization, if self.enhanced { " + gdce" } else { "" });
        let _ = writeln!(s, "samples       {}", m.n_samples);
        let _ = writeln!(s, "accuracy      {:.4}", m.accuracy);
        let _ = writeln!(s, "worst group   {:.4}", m.worst_group_accuracy);
        let _ = writeln!(s, "roc-auc       {:.4} ({})", m.roc_auc.macro_auc, self.auc_scheme);
        let _ = writeln!(s, "\nclass  n      acc     prec    recall  auc");
        for (c, name) in self.class_names.iter().enumerate() {
            let n: u64 = m.confusion.row(c).iter().sum();
            let opt = |v: Option<f64>| v.map_or("absent".to_string(), |v| format!("{v:.4}"));
            let pr = &m.precision_recall[c];
            let _ = writeln!(
                s,
                "{name:<6} {n:<6} {:<7} {:<7} {:<7} {}",
                opt(m.per_class_accuracy[c]),
                if pr.precision_defined { format!("{:.4}", pr.precision) } else { "undef".into() },
                if pr.recall_defined { format!("{:.4}", pr.recall) } else { "undef".into() },
                opt(m.roc_auc.per_class[c]),
            );
        }
        let _ = writeln!(s, "\nconfusion (row %, rows = truth)");
        let _ = writeln!(s, "       {}", self.class_names.iter().map(|n| format!("{n:>5}")).collect::<String>());
        for (name, row) in self.class_names.iter().zip(m.confusion.row_percentages()) {
            let _ = writeln!(s, "{name:<6} {}", row.iter().map(|v| format!("{v:>5}")).collect::<String>());
        }
        s
    }
}

/// Evaluate a discriminator, optionally behind an enhancer, on every entry of a manifest.
pub fn eval(cfg: &RunConfig, disc: &Path, gdce: Option<&Path>, manifest: &Path) -> Result<EvalReport> {
    let d = checkpoint::load_discriminator(disc)?;
    let g = gdce.map(checkpoint::load_gdce).transpose()?;
    let norm = if g.is_some() { unit_norm(cfg)? } else { cfg.normalization()? };
    let set = LoadedSet::load(manifest)?;
    if set.manifest.classes() != d.classes() {
        return Err(PipelineError::Usage(format!(
            "manifest has {} classes, discriminator {}",
            set.manifest.classes(),
            d.classes()
        )));
    }
    let data = set.dataset(norm, |_| true)?;
    let metrics = score(&d, g.as_ref(), &data)?;
    let absent_groups = metrics
        .per_class_accuracy
        .iter()
        .zip(&set.manifest.class_names)
        .filter(|(a, _)| a.is_none())
        .map(|(_, n)| n.clone())
        .collect();
    Ok(EvalReport {
        manifest: manifest.to_owned(),
        normalization: norm.name().into(),
        enhanced: g.is_some(),
        class_names: set.manifest.class_names.clone(),
        absent_groups,
        auc_scheme: "macro one-vs-rest".into(),
        tie_break: "lowest class index".into(),
        metrics,
    })
}

pub fn write_report(report: &EvalReport, out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| DataError::io(out, e))?;
    write(&out.join("report.json"), serde_json::to_string_pretty(report).expect("report serializes"))?;
    write(&out.join("report.txt"), report.render())?;
    Ok(())
}

fn unit_image(norm: Normalization, path: &Path) -> Result<(UnitImage, u8)> {
    let raw = io::load_image(path)?;
    let Plane { width, height, data } = norm.apply(&raw).map_err(|e| DataError::Image(path.to_owned(), e))?;
    let img = UnitImage::new(width, height, data).map_err(|e| DataError::Image(path.to_owned(), e))?;
    Ok((img, raw.bit_depth()))
}

pub fn out_name(path: &Path) -> PathBuf {
    let stem = path.file_stem().unwrap_or_default().to_string_lossy();
    let ext = path.extension().map_or("pgm".into(), |e| e.to_string_lossy());
    PathBuf::from(format!("{stem}.{ext}"))
}

/// One `apply` log line: file name then the coefficients.
pub fn alpha_line(name: &Path, alphas: &[f32]) -> String {
    let values: Vec<String> = alphas.iter().map(|a| a.to_string()).collect();
    format!("{}\t{}\n", name.display(), values.join(" "))
}

pub fn parse_alpha_log(path: &Path) -> DataResult<Vec<(PathBuf, Vec<f32>)>> {
    let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let bad = || DataError::Malformed(path.to_owned(), format!("bad line `{l}`"));
            let (name, values) = l.split_once('\t').ok_or_else(bad)?;
            let alphas = values.split_whitespace().map(|v| v.parse().map_err(|_| bad())).collect::<DataResult<_>>()?;
            Ok((PathBuf::from(name), alphas))
        })
        .collect()
}

/// Enhance images with a trained model; returns the per-image coefficients,
/// also logged to `alphas.tsv`.
pub fn apply(
    gdce_path: &Path,
    images: &[PathBuf],
    norm: Normalization,
    out: &Path,
    force: bool,
) -> Result<Vec<Vec<f32>>> {
    let g = checkpoint::load_gdce(gdce_path)?;
    prepare_out_dir(out, force)?;
    let mut log = String::new();
    let mut all = Vec::with_capacity(images.len());
    for path in images {
        let (img, bits) = unit_image(norm, path)?;
        let (enhanced, coeffs) = g.enhance(&img).map_err(|e| DataError::Image(path.clone(), e))?;
        let name = out_name(path);
        io::save_image(&enhanced, &out.join(&name), bits)?;
        log.push_str(&alpha_line(&name, coeffs.alphas()));
        all.push(coeffs.alphas().to_vec());
    }
    write(&out.join(ALPHA_LOG), log)?;
    Ok(all)
}

/// Apply explicit coefficients to images without any network: one
/// `(image, alphas)` pair per output.
pub fn curve(jobs: &[(PathBuf, Vec<f32>)], norm: Normalization, out: &Path, force: bool) -> Result<()> {
    prepare_out_dir(out, force)?;
    for (path, alphas) in jobs {
        let coeffs = CurveCoefficients::new(alphas.clone())?;
        let (img, bits) = unit_image(norm, path)?;
        io::save_image(&coeffs.apply(&img), &out.join(out_name(path)), bits)?;
    }
    Ok(())
}

/// Inputs of the ablation grid: enhancer training inputs plus a test manifest.
#[derive(Debug, Clone)]
pub struct AblationInputs {
    pub gdce: GdceInputs,
    pub test: PathBuf,
}

/// Train one enhancer per (layers, iterations) cell; report validation and
/// test worst-group accuracy of each cell's best epoch.
pub fn ablate(cfg: &RunConfig, inputs: &AblationInputs, out: &Path, force: bool) -> Result<AblationGrid> {
    let disc = require_discriminator(&inputs.gdce.discriminator)?;
    let norm = unit_norm(cfg)?;
    let set = LoadedSet::load(&inputs.gdce.shifted)?;
    check_size(&set, cfg)?;
    let refs = reference_pool(&inputs.gdce.reference, norm, cfg)?;
    let test_set = LoadedSet::load(&inputs.test)?;
    check_size(&test_set, cfg)?;
    prepare_out_dir(out, force)?;
    dump_config(cfg, out)?;
    let stage = &cfg.gdce;
    let (train_set, val) = split(&set, norm, stage.val_fold, &stage.drop_classes)?;
    let test = test_set.dataset(norm, |_| true)?;
    let extractor = PerceptualExtractor::new(cfg.perceptual.tap, cfg.data.image_size, cfg.perceptual.seed)?;
    let objective = Objective { disc: &disc, extractor: &extractor, reduction: cfg.perceptual.reduction };
    let ab = &cfg.ablation;
    let mut models = Vec::new();
    let grid = train::ablation_grid(&ab.layers, &ab.iterations, cfg.seed, |layers, iterations, seed| {
        let model_cfg = gdce_core::GdceConfig { layers, iterations, ..cfg.model };
        let tc = train::TrainConfig { epochs: ab.epochs, ..stage.train_config(seed) };
        let (best, log) = train::train_gdce(Gdce::new(&model_cfg, seed)?, &tc, &objective, &train_set, &refs, &val)?;
        let v = log.iter().map(|l| l.worst_group).fold(f64::NEG_INFINITY, f64::max);
        let t = score(&disc, Some(&best), &test)?.worst_group_accuracy;
        log::info!("ablation L={layers} N={iterations}: validation {v:.3}, test {t:.3}");
        models.push((format!("gdce_L{layers}_N{iterations}.ckpt"), best, seed));
        Ok((v, t))
    })?;
    for (name, g, seed) in &models {
        checkpoint::save_gdce(&out.join(name), g, *seed)?;
    }
    write(&out.join("grid.json"), serde_json::to_string_pretty(&grid).expect("grid serializes"))?;
    write(&out.join("grid_validation.txt"), grid.render(&grid.validation))?;
    write(&out.join("grid_test.txt"), grid.render(&grid.test))?;
    Ok(grid)
}
