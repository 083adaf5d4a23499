//! The composite enhancer loss, the classifier and enhancer training loops,
//! cross-validation and the layers x iterations ablation grid.
//!
//! Training state lives in [`TrainState`] and every epoch draws its shuffle
//! and reference samples from a stream derived from `(seed, epoch)`, so a run
//! stopped after any epoch and resumed from its state ends bit-identical to an
//! uninterrupted one.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::curve::CurveCoefficients;
use crate::error::{Error, Result};
use crate::image::Plane;
use crate::metrics::MetricsReport;
use crate::models::{Discriminator, Gdce, PerceptualExtractor};
use crate::nn::{softmax_cross_entropy_batch, Adam, AdamConfig, Gradients, Scalar, Tensor};
use crate::rng;

const TAG_CLASSIFIER: u64 = 11;
const TAG_GDCE: u64 = 12;

/// Images scored per inference call during evaluation.
const EVAL_BATCH: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Reduction {
    /// Mean over every feature element of the batch.
    #[default]
    Mean,
    /// Sum over feature elements, mean over the batch.
    Sum,
}

/// Loss values of one step or the mean over an epoch.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LossTerms {
    pub ce: f64,
    pub perceptual: f64,
    pub total: f64,
}

impl LossTerms {
    pub fn new(ce: f64, perceptual: f64) -> Self {
        Self { ce, perceptual, total: ce + perceptual }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { lr: 1e-4, batch_size: 12, epochs: 50, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) || self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::InvalidConfig(format!(
                "lr, batch size and epochs must be positive (lr {}, batch {}, epochs {})",
                self.lr, self.batch_size, self.epochs
            )));
        }
        Ok(())
    }
}

/// Equally sized single-channel images with class labels.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub images: Vec<Plane>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn new(images: Vec<Plane>, labels: Vec<usize>) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::LengthMismatch(images.len(), labels.len()));
        }
        if let Some(first) = images.first() {
            if images.iter().any(|p| (p.width, p.height) != (first.width, first.height)) {
                return Err(Error::Shape("dataset mixes image sizes".into()));
            }
        }
        Ok(Self { images, labels })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            images: idx.iter().map(|&i| self.images[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn batch<T: Scalar>(&self, idx: &[usize]) -> Result<(Tensor<T>, Vec<usize>)> {
        let x = Tensor::from_planes(idx.iter().map(|&i| &self.images[i]))?;
        Ok((x, idx.iter().map(|&i| self.labels[i]).collect()))
    }

    /// Number of distinct labels present.
    pub fn distinct_labels(&self) -> usize {
        let mut seen: Vec<usize> = self.labels.clone();
        seen.sort_unstable();
        seen.dedup();
        seen.len()
    }
}

/// Images from the reference scanner available as perceptual targets.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferencePool {
    images: Vec<Plane>,
}

impl ReferencePool {
    pub fn new(images: Vec<Plane>) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::EmptyReferencePool);
        }
        Ok(Self { images })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// One uniformly drawn reference per batch item.
    pub fn sample<T: Scalar, R: Rng>(&self, rng: &mut R, n: usize) -> Result<Tensor<T>> {
        let picks: Vec<&Plane> = (0..n).map(|_| &self.images[rng.gen_range(0..self.images.len())]).collect();
        Tensor::from_planes(picks)
    }
}

/// Composite loss on one batch: cross-entropy of the frozen discriminator on
/// the enhanced images plus the L1 distance between perceptual features of
/// the enhanced images and the references. Parameter gradients go into
/// `grads` (enhancer only) when given.
pub fn gdce_loss<T: Scalar>(
    gdce: &Gdce<T>,
    disc: &Discriminator<T>,
    extractor: &PerceptualExtractor<T>,
    x: &Tensor<T>,
    labels: &[usize],
    refs: &Tensor<T>,
    reduction: Reduction,
    grads: Option<&mut Gradients<T>>,
) -> Result<LossTerms> {
    disc.require_frozen()?;
    if refs.shape() != x.shape() {
        return Err(Error::Shape(format!("references {:?} vs batch {:?}", refs.shape(), x.shape())));
    }
    let n = x.batch();
    let (trace, coeffs, y) = gdce.trace(x)?;

    let dtrace = disc.network().trace(&y)?;
    let (ce, g_logits) = softmax_cross_entropy_batch(dtrace.output(), labels)?;
    let mut gy = disc.network().backward_trace(&dtrace, &g_logits, None)?;

    let vtrace = extractor.trace(&y)?;
    let fr = extractor.features(refs)?;
    let fy = vtrace.output();
    let scale = match reduction {
        Reduction::Mean => T::one() / T::of(fy.data().len() as f64),
        Reduction::Sum => T::one() / T::of(n as f64),
    };
    let mut l1 = T::zero();
    let mut gf = Tensor::zeros(fy.shape());
    for ((g, &a), &b) in gf.data_mut().iter_mut().zip(fy.data()).zip(fr.data()) {
        let d = a - b;
        l1 += d.abs();
        *g = if d > T::zero() {
            scale
        } else if d < T::zero() {
            -scale
        } else {
            T::zero()
        };
    }
    let perceptual = l1 * scale;
    let gp = extractor.backward(&vtrace, &gf)?;
    for (a, &b) in gy.data_mut().iter_mut().zip(gp.data()) {
        *a += b;
    }

    let terms = LossTerms::new(ce.as_f64(), perceptual.as_f64());
    if !terms.total.is_finite() {
        return Err(Error::NonFinite("loss"));
    }
    if let Some(grads) = grads {
        let mut galpha = Tensor::zeros(trace.output().shape());
        for i in 0..n {
            let ga = coeffs[i].backprop(x.item(i), gy.item(i))?;
            galpha.item_mut(i).copy_from_slice(&ga);
        }
        gdce.network().backward_trace(&trace, &galpha, Some(grads))?;
    }
    Ok(terms)
}

/// Validation record of one epoch.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: LossTerms,
    pub per_group: Vec<Option<f64>>,
    pub worst_group: f64,
}

/// The best model seen so far by validation worst-group accuracy.
#[derive(Debug, Clone, PartialEq)]
pub struct Best<M> {
    pub epoch: usize,
    pub worst_group: f64,
    pub model: M,
}

/// Everything needed to continue a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState<M> {
    pub model: M,
    pub adam: Adam<f32>,
    /// Epochs completed.
    pub epoch: usize,
    pub best: Option<Best<M>>,
    pub log: Vec<EpochLog>,
}

impl<M: Clone> TrainState<M> {
    fn record(&mut self, log: EpochLog) {
        let better = self.best.as_ref().map_or(true, |b| log.worst_group > b.worst_group);
        if better {
            self.best = Some(Best { epoch: log.epoch, worst_group: log.worst_group, model: self.model.clone() });
        }
        self.epoch += 1;
        self.log.push(log);
    }

    /// The best model, or the current one when no epoch has run.
    pub fn best_model(&self) -> &M {
        self.best.as_ref().map_or(&self.model, |b| &b.model)
    }
}

fn shuffled(n: usize, seed: u64, tags: &[u64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed, tags));
    idx
}

/// Score a dataset with a probability function in fixed-size chunks.
pub fn evaluate<F>(data: &Dataset, classes: usize, mut probs: F) -> Result<MetricsReport>
where
    F: FnMut(&Tensor<f32>) -> Result<Vec<Vec<f64>>>,
{
    if data.is_empty() {
        return Err(Error::Empty);
    }
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut rows = Vec::with_capacity(data.len());
    for chunk in idx.chunks(EVAL_BATCH) {
        let (x, _) = data.batch(chunk)?;
        rows.extend(probs(&x)?);
    }
    MetricsReport::from_probabilities(&rows, &data.labels, classes)
}

/// Fresh classifier training state.
pub fn classifier_state(model: Discriminator, config: &TrainConfig) -> Result<TrainState<Discriminator>> {
    config.validate()?;
    if model.is_frozen() {
        return Err(Error::Frozen);
    }
    let adam = Adam::new(AdamConfig::with_lr(config.lr), &model.network().params());
    Ok(TrainState { model, adam, epoch: 0, best: None, log: Vec::new() })
}

/// One epoch of cross-entropy training followed by validation.
pub fn classifier_epoch<'s>(
    state: &'s mut TrainState<Discriminator>,
    config: &TrainConfig,
    train: &Dataset,
    val: &Dataset,
) -> Result<&'s EpochLog> {
    if train.distinct_labels() < 2 {
        return Err(Error::SingleClass);
    }
    let classes = state.model.classes();
    let epoch = state.epoch;
    let order = shuffled(train.len(), config.seed, &[TAG_CLASSIFIER, epoch as u64]);
    let mut sum = 0.0;
    let mut steps = 0;
    for (step, chunk) in order.chunks(config.batch_size).enumerate() {
        let (x, labels) = train.batch::<f32>(chunk)?;
        let net = state.model.network_mut()?;
        let trace = net.trace(&x)?;
        let (loss, g) = softmax_cross_entropy_batch(trace.output(), &labels)?;
        if !loss.is_finite() {
            return Err(Error::Diverged { epoch, step });
        }
        let mut grads = net.zero_gradients();
        net.backward_trace(&trace, &g, Some(&mut grads))?;
        state.adam.update(net.params_mut(), &grads)?;
        sum += f64::from(loss);
        steps += 1;
    }
    let report = evaluate(val, classes, |x| state.model.probabilities(x))?;
    let log = EpochLog {
        epoch,
        loss: LossTerms::new(sum / steps as f64, 0.0),
        per_group: report.per_class_accuracy,
        worst_group: report.worst_group_accuracy,
    };
    log::info!("classifier epoch {epoch}: loss {:.4}, worst-group {:.3}", log.loss.ce, log.worst_group);
    state.record(log);
    Ok(state.log.last().expect("just pushed"))
}

/// Train a classifier for `config.epochs` epochs and return the best epoch's
/// model, frozen.
pub fn train_discriminator(
    model: Discriminator,
    config: &TrainConfig,
    train: &Dataset,
    val: &Dataset,
) -> Result<(Discriminator, Vec<EpochLog>)> {
    let mut state = classifier_state(model, config)?;
    while state.epoch < config.epochs {
        classifier_epoch(&mut state, config, train, val)?;
    }
    let mut best = state.best_model().clone();
    best.freeze();
    Ok((best, state.log))
}

/// The frozen networks the enhancer is trained against.
#[derive(Debug, Clone, Copy)]
pub struct Objective<'a> {
    pub disc: &'a Discriminator,
    pub extractor: &'a PerceptualExtractor,
    pub reduction: Reduction,
}

impl Objective<'_> {
    /// Class probabilities of the discriminator on enhanced images.
    pub fn enhanced_probabilities(&self, gdce: &Gdce, x: &Tensor<f32>) -> Result<Vec<Vec<f64>>> {
        let (y, _) = gdce.enhance_batch(x)?;
        self.disc.probabilities(&y)
    }
}

pub fn gdce_state(model: Gdce, config: &TrainConfig) -> Result<TrainState<Gdce>> {
    config.validate()?;
    let adam = Adam::new(AdamConfig::with_lr(config.lr), &model.network().params());
    Ok(TrainState { model, adam, epoch: 0, best: None, log: Vec::new() })
}

/// One epoch of enhancer training on the composite loss, then validation of
/// the frozen discriminator on enhanced validation images.
pub fn gdce_epoch<'s>(
    state: &'s mut TrainState<Gdce>,
    config: &TrainConfig,
    objective: &Objective<'_>,
    train: &Dataset,
    refs: &ReferencePool,
    val: &Dataset,
) -> Result<&'s EpochLog> {
    objective.disc.require_frozen()?;
    if train.is_empty() {
        return Err(Error::Empty);
    }
    let epoch = state.epoch;
    let order = shuffled(train.len(), config.seed, &[TAG_GDCE, epoch as u64]);
    let mut ce = 0.0;
    let mut perceptual = 0.0;
    let mut steps = 0;
    for (step, chunk) in order.chunks(config.batch_size).enumerate() {
        let (x, labels) = train.batch::<f32>(chunk)?;
        let mut rng = rng::stream(config.seed, &[TAG_GDCE, epoch as u64, step as u64]);
        let r = refs.sample(&mut rng, chunk.len())?;
        let mut grads = state.model.network().zero_gradients();
        let terms = match gdce_loss(
            &state.model,
            objective.disc,
            objective.extractor,
            &x,
            &labels,
            &r,
            objective.reduction,
            Some(&mut grads),
        ) {
            Err(Error::NonFinite(_)) => return Err(Error::Diverged { epoch, step }),
            other => other?,
        };
        state.adam.update(state.model.network_mut().params_mut(), &grads)?;
        ce += terms.ce;
        perceptual += terms.perceptual;
        steps += 1;
    }
    let classes = objective.disc.classes();
    let report = evaluate(val, classes, |x| objective.enhanced_probabilities(&state.model, x))?;
    let log = EpochLog {
        epoch,
        loss: LossTerms::new(ce / steps as f64, perceptual / steps as f64),
        per_group: report.per_class_accuracy,
        worst_group: report.worst_group_accuracy,
    };
    log::info!(
        "gdce epoch {epoch}: ce {:.4}, perceptual {:.4}, worst-group {:.3}",
        log.loss.ce,
        log.loss.perceptual,
        log.worst_group
    );
    state.record(log);
    Ok(state.log.last().expect("just pushed"))
}

/// Full enhancer training run; returns the best model and the epoch log.
pub fn train_gdce(
    model: Gdce,
    config: &TrainConfig,
    objective: &Objective<'_>,
    train: &Dataset,
    refs: &ReferencePool,
    val: &Dataset,
) -> Result<(Gdce, Vec<EpochLog>)> {
    let mut state = gdce_state(model, config)?;
    while state.epoch < config.epochs {
        gdce_epoch(&mut state, config, objective, train, refs, val)?;
    }
    Ok((state.best_model().clone(), state.log))
}

/// Per-fold and averaged reports.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CrossValReport {
    pub folds: Vec<MetricsReport>,
    pub mean_accuracy: f64,
    pub mean_worst_group: f64,
    pub mean_auc: f64,
}

/// Rotate through `k` folds: `run(fold, train_idx, test_idx)` trains on the
/// other folds and reports on the held-out one.
pub fn crossval_run<F>(folds: &[usize], k: usize, mut run: F) -> Result<CrossValReport>
where
    F: FnMut(usize, &[usize], &[usize]) -> Result<MetricsReport>,
{
    if k < 2 {
        return Err(Error::InvalidConfig(format!("cross-validation needs at least 2 folds, got {k}")));
    }
    if let Some(&f) = folds.iter().find(|&&f| f >= k) {
        return Err(Error::InvalidConfig(format!("fold id {f} outside 0..{k}")));
    }
    if let Some(fold) = (0..k).find(|f| !folds.contains(f)) {
        return Err(Error::EmptyFold(fold));
    }
    let mut reports = Vec::with_capacity(k);
    for fold in 0..k {
        let (test, train): (Vec<usize>, Vec<usize>) = (0..folds.len()).partition(|&i| folds[i] == fold);
        if test.is_empty() || train.is_empty() {
            return Err(Error::EmptyFold(fold));
        }
        reports.push(run(fold, &train, &test)?);
    }
    let mean = |f: fn(&MetricsReport) -> f64| reports.iter().map(f).sum::<f64>() / k as f64;
    Ok(CrossValReport {
        mean_accuracy: mean(|r| r.accuracy),
        mean_worst_group: mean(|r| r.worst_group_accuracy),
        mean_auc: mean(|r| r.roc_auc.macro_auc),
        folds: reports,
    })
}

/// Validation and test worst-group accuracy per (layers, iterations) cell.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AblationGrid {
    pub layers: Vec<usize>,
    pub iterations: Vec<usize>,
    /// `[layer][iteration]`.
    pub validation: Vec<Vec<f64>>,
    pub test: Vec<Vec<f64>>,
}

/// Seed of one grid cell; independent of execution order.
pub fn cell_seed(seed: u64, layers: usize, iterations: usize) -> u64 {
    rng::derive(seed, &[layers as u64, iterations as u64])
}

/// Run `cell(layers, iterations, seed) -> (validation, test)` for every cell.
pub fn ablation_grid<F>(layers: &[usize], iterations: &[usize], seed: u64, mut cell: F) -> Result<AblationGrid>
where
    F: FnMut(usize, usize, u64) -> Result<(f64, f64)>,
{
    if layers.is_empty() || iterations.is_empty() {
        return Err(Error::InvalidConfig("ablation axes must not be empty".into()));
    }
    let mut validation = vec![vec![0.0; iterations.len()]; layers.len()];
    let mut test = validation.clone();
    for (i, &l) in layers.iter().enumerate() {
        for (j, &n) in iterations.iter().enumerate() {
            let (v, t) = cell(l, n, cell_seed(seed, l, n))?;
            validation[i][j] = v;
            test[i][j] = t;
        }
    }
    Ok(AblationGrid { layers: layers.to_vec(), iterations: iterations.to_vec(), validation, test })
}

impl AblationGrid {
    /// Plain-text heat-map: rows are layer counts, columns iteration counts.
    pub fn render(&self, values: &[Vec<f64>]) -> String {
        let mut s = String::from("L\\N");
        for n in &self.iterations {
            let _ = write!(s, "\t{n}");
        }
        s.push('\n');
        for (l, row) in self.layers.iter().zip(values) {
            let _ = write!(s, "{l}");
            for v in row {
                let _ = write!(s, "\t{v:.3}");
            }
            s.push('\n');
        }
        s
    }
}

/// Coefficients of every image in a dataset, in order.
pub fn predict_all(gdce: &Gdce, data: &Dataset) -> Result<Vec<CurveCoefficients<f32>>> {
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut out = Vec::with_capacity(data.len());
    for chunk in idx.chunks(EVAL_BATCH) {
        let (x, _) = data.batch(chunk)?;
        out.extend(gdce.predict(&x)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{GdceConfig, PERCEPTUAL_SEED};

    fn tiny_data(n: usize, seed: u64) -> Dataset {
        let mut rng = rng::stream(seed, &[]);
        let images = (0..n).map(|_| Plane::new(8, 8, (0..64).map(|_| rng.gen::<f32>()).collect()).unwrap()).collect();
        Dataset::new(images, (0..n).map(|i| i % 2).collect()).unwrap()
    }

    fn cfg() -> GdceConfig {
        GdceConfig { image_size: 8, layers: 1, conv_channels: 2, hidden: [4, 4], iterations: 3 }
    }

    #[test]
    fn perceptual_vanishes_when_reference_is_the_output() {
        let mut g = Gdce::<f64>::new(&cfg(), 1).unwrap();
        g.zero_head();
        let mut d = Discriminator::<f64>::with_channels(2, 8, &[2], 1).unwrap();
        d.freeze();
        let v = PerceptualExtractor::<f64>::new(2, 8, PERCEPTUAL_SEED).unwrap();
        let (x, labels) = tiny_data(3, 2).batch::<f64>(&[0, 1, 2]).unwrap();
        let terms = gdce_loss(&g, &d, &v, &x, &labels, &x, Reduction::Mean, None).unwrap();
        assert_eq!(terms.perceptual, 0.0);
        assert_eq!(terms.total, terms.ce + terms.perceptual);
    }

    #[test]
    fn unfrozen_discriminator_is_a_hard_error() {
        let g = Gdce::<f64>::new(&cfg(), 1).unwrap();
        let d = Discriminator::<f64>::with_channels(2, 8, &[2], 1).unwrap();
        let v = PerceptualExtractor::<f64>::new(2, 8, 1).unwrap();
        let (x, labels) = tiny_data(2, 2).batch::<f64>(&[0, 1]).unwrap();
        assert_eq!(gdce_loss(&g, &d, &v, &x, &labels, &x, Reduction::Mean, None).unwrap_err(), Error::NotFrozen);
    }

    #[test]
    fn empty_reference_pool_is_rejected() {
        assert_eq!(ReferencePool::new(Vec::new()).unwrap_err(), Error::EmptyReferencePool);
    }

    #[test]
    fn gdce_training_leaves_frozen_nets_untouched_and_resumes_exactly() {
        let train = tiny_data(10, 3);
        let val = tiny_data(4, 4);
        let refs = ReferencePool::new(tiny_data(5, 5).images).unwrap();
        let mut d = Discriminator::with_channels(2, 8, &[2], 1).unwrap();
        d.freeze();
        let v = PerceptualExtractor::new(2, 8, PERCEPTUAL_SEED).unwrap();
        let (dsum, vsum) = (d.checksum(), v.checksum());
        let obj = Objective { disc: &d, extractor: &v, reduction: Reduction::Mean };
        let config = TrainConfig { lr: 1e-3, batch_size: 4, epochs: 3, seed: 9 };
        let g = Gdce::new(&cfg(), 1).unwrap();

        let (full, log) = train_gdce(g.clone(), &config, &obj, &train, &refs, &val).unwrap();
        assert_eq!((d.checksum(), v.checksum()), (dsum, vsum));
        assert_eq!(log.len(), 3);
        assert!(log.iter().all(|l| l.loss.total == l.loss.ce + l.loss.perceptual));

        let mut state = gdce_state(g, &config).unwrap();
        gdce_epoch(&mut state, &config, &obj, &train, &refs, &val).unwrap();
        let mut resumed = state.clone();
        while resumed.epoch < config.epochs {
            gdce_epoch(&mut resumed, &config, &obj, &train, &refs, &val).unwrap();
        }
        assert_eq!(resumed.log, log);
        assert_eq!(resumed.best_model(), &full);
    }

    #[test]
    fn classifier_rejects_single_class() {
        let mut train = tiny_data(4, 1);
        train.labels = vec![0; 4];
        let mut state =
            classifier_state(Discriminator::with_channels(2, 8, &[2], 1).unwrap(), &TrainConfig::default()).unwrap();
        assert_eq!(
            classifier_epoch(&mut state, &TrainConfig::default(), &train, &train).unwrap_err(),
            Error::SingleClass
        );
    }

    #[test]
    fn crossval_needs_two_folds() {
        let r = crossval_run(&[0, 0, 0], 1, |_, _, _| unreachable!());
        assert!(matches!(r, Err(Error::InvalidConfig(_))));
        let r = crossval_run(&[0, 0, 2], 3, |_, _, _| unreachable!());
        assert_eq!(r.unwrap_err(), Error::EmptyFold(1));
    }

    #[test]
    fn crossval_means_match_folds() {
        let folds = [0, 1, 2, 0, 1, 2];
        let labels = [0, 1, 0, 1, 0, 1];
        let r = crossval_run(&folds, 3, |fold, _, test| {
            let probs: Vec<Vec<f64>> =
                test.iter().map(|&i| if (i + fold) % 2 == 0 { vec![0.9, 0.1] } else { vec![0.2, 0.8] }).collect();
            let l: Vec<usize> = test.iter().map(|&i| labels[i]).collect();
            MetricsReport::from_probabilities(&probs, &l, 2)
        })
        .unwrap();
        let direct = r.folds.iter().map(|f| f.accuracy).sum::<f64>() / 3.0;
        assert!((r.mean_accuracy - direct).abs() < 1e-12);
    }

    #[test]
    fn grid_cells_are_order_independent() {
        let run = |l: &[usize], n: &[usize]| {
            ablation_grid(l, n, 7, |_, _, s| Ok(((s % 1000) as f64, (s % 777) as f64))).unwrap()
        };
        let a = run(&[2, 12], &[4, 8]);
        let b = run(&[12, 2], &[8, 4]);
        assert_eq!(a.validation[0][0], b.validation[1][1]);
        assert_eq!(a.test[1][0], b.test[0][1]);
        assert_eq!(a.render(&a.validation).lines().count(), 3);
    }
}
