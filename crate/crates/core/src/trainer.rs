//! Strategy dispatch, the Adam training loop with early stopping, test-term
//! evaluation and the strategy matrix.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::cohort::{AttributeVocab, CohortDataset, SplitSpec};
use crate::encoding::{encode_with, EncodedSequence, FeatureMode};
use crate::grade::{GradeLabel, LetterScale};
use crate::losses::{
    adversarial_loss, combined_loss, fit_group_weights, label_weights, masked_ce, sample_weights,
    target_categories, LabelWeightMode, LabelWeightScheme, SampleWeightMode, SampleWeightScheme,
    WeightNormalization,
};
use crate::optim::{Adam, AdamConfig, EarlyStopping};
use crate::seqnet::{
    backward_into, check_finite, forward_sequence, AdversaryMode, ForwardMode, GradeDistribution, ModelDims, ModelParams,
    OutputGrads, OutputScope, ParamGrads, DEFAULT_HIDDEN,
};
use crate::{Error, Result};

/// Adversarial strength used when none is given.
pub const DEFAULT_ALPHA: f64 = 0.1;

/// The mitigation strategies.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StrategyId {
    Default,
    GradeLabelWeighted,
    /// Trained only on one group's students.
    Alone(String),
    GradRateWgh,
    EqualWgh,
    RaceFeature,
    Multi,
    Adversarial,
    InferRmv,
}

impl StrategyId {
    /// Accepted spellings, for error messages.
    pub const VALID: &'static str = "default, grade_label_weighted, alone:<group>, grad_rate_wgh, equal_wgh, \
                                     race_feature, multi, adversarial, infer_rmv";

    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        Ok(match s {
            "default" => StrategyId::Default,
            "grade_label_weighted" => StrategyId::GradeLabelWeighted,
            "grad_rate_wgh" => StrategyId::GradRateWgh,
            "equal_wgh" => StrategyId::EqualWgh,
            "race_feature" => StrategyId::RaceFeature,
            "multi" => StrategyId::Multi,
            "adversarial" => StrategyId::Adversarial,
            "infer_rmv" => StrategyId::InferRmv,
            _ => match s.strip_prefix("alone:") {
                Some(g) if !g.trim().is_empty() => StrategyId::Alone(g.trim().to_string()),
                _ => {
                    return Err(Error::Config(format!(
                        "unknown strategy '{s}'; valid ids: {}",
                        Self::VALID
                    )))
                }
            },
        })
    }
}

impl fmt::Display for StrategyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StrategyId::Default => f.write_str("default"),
            StrategyId::GradeLabelWeighted => f.write_str("grade_label_weighted"),
            StrategyId::Alone(g) => write!(f, "alone:{g}"),
            StrategyId::GradRateWgh => f.write_str("grad_rate_wgh"),
            StrategyId::EqualWgh => f.write_str("equal_wgh"),
            StrategyId::RaceFeature => f.write_str("race_feature"),
            StrategyId::Multi => f.write_str("multi"),
            StrategyId::Adversarial => f.write_str("adversarial"),
            StrategyId::InferRmv => f.write_str("infer_rmv"),
        }
    }
}

impl Serialize for StrategyId {
    fn serialize<S: Serializer>(&self, s: S) -> core::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for StrategyId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> core::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        StrategyId::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// Fully resolved settings of one strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategyConfig {
    pub id: StrategyId,
    pub label_weighting: LabelWeightScheme,
    pub sample_weighting: SampleWeightScheme,
    pub feature_mode: FeatureMode,
    pub alpha: f64,
    #[serde(default)]
    pub adversary: AdversaryMode,
    pub inference_mode: ForwardMode,
}

/// Inputs that a strategy id leaves open.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StrategyParams {
    /// Used by `adversarial`; other strategies train with zero.
    pub alpha: f64,
    pub adversary: AdversaryMode,
    pub label_normalization: WeightNormalization,
    /// Per-group graduation rates for `grad_rate_wgh`.
    pub graduation_rates: Vec<f64>,
    /// Per-group proportions for `equal_wgh`; measured on the training
    /// enrollments when absent.
    pub group_proportions: Option<Vec<f64>>,
    /// Attributes fed to `infer_rmv` during training.
    pub infer_rmv_features: FeatureMode,
}

impl Default for StrategyParams {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            adversary: AdversaryMode::Reversal,
            label_normalization: WeightNormalization::MeanOne,
            graduation_rates: Vec::new(),
            group_proportions: None,
            infer_rmv_features: FeatureMode::Race,
        }
    }
}

impl StrategyConfig {
    /// Fills in the settings fixed by `id`. Grade-label weighting is on for
    /// `grade_label_weighted` and, when `label_weighting_everywhere` is set,
    /// for every other strategy too.
    pub fn resolve(id: StrategyId, params: &StrategyParams, label_weighting_everywhere: bool) -> Result<Self> {
        let sigma_on = label_weighting_everywhere || id == StrategyId::GradeLabelWeighted;
        let label_weighting = if sigma_on {
            LabelWeightScheme {
                mode: LabelWeightMode::MinibatchInverse,
                normalization: params.label_normalization,
            }
        } else {
            LabelWeightScheme::default()
        };
        let mut sample_weighting = SampleWeightScheme::default();
        let mut feature_mode = FeatureMode::None;
        let mut alpha = 0.0;
        let mut inference_mode = ForwardMode::InferFull;
        match &id {
            StrategyId::GradRateWgh => {
                sample_weighting.mode = SampleWeightMode::GradRate;
                sample_weighting.graduation_rates = params.graduation_rates.clone();
            }
            StrategyId::EqualWgh => {
                sample_weighting.mode = SampleWeightMode::Equal;
                sample_weighting.group_proportions = params.group_proportions.clone();
            }
            StrategyId::RaceFeature => feature_mode = FeatureMode::Race,
            StrategyId::Multi => feature_mode = FeatureMode::Multi,
            StrategyId::Adversarial => {
                if !(params.alpha > 0.0 && params.alpha.is_finite()) {
                    return Err(Error::Config(format!(
                        "adversarial strategy needs a positive alpha, got {}",
                        params.alpha
                    )));
                }
                alpha = params.alpha;
            }
            StrategyId::InferRmv => {
                if params.infer_rmv_features == FeatureMode::None {
                    return Err(Error::Config("infer_rmv needs attribute features during training".into()));
                }
                feature_mode = params.infer_rmv_features;
                inference_mode = ForwardMode::InferRmv;
            }
            StrategyId::Default | StrategyId::GradeLabelWeighted | StrategyId::Alone(_) => {}
        }
        Ok(Self {
            id,
            label_weighting,
            sample_weighting,
            feature_mode,
            alpha,
            adversary: params.adversary,
            inference_mode,
        })
    }

    pub fn validate(&self, num_groups: usize) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config("alpha must be finite and non-negative".into()));
        }
        if self.inference_mode == ForwardMode::Train {
            return Err(Error::Config("inference mode must be infer_full or infer_rmv".into()));
        }
        self.sample_weighting.validate(num_groups)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub seed: u64,
    /// Students per minibatch.
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub apply_label_weighting_everywhere: bool,
    pub hidden: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            batch_size: 32,
            optimizer: AdamConfig::default(),
            max_epochs: 50,
            patience: 5,
            apply_label_weighting_everywhere: true,
            hidden: DEFAULT_HIDDEN,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let o = &self.optimizer;
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 || self.hidden == 0 {
            return Err(Error::Config(
                "batch_size, max_epochs, patience and hidden must be positive".into(),
            ));
        }
        if !(o.learning_rate > 0.0 && o.epsilon > 0.0) || !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2)
        {
            return Err(Error::Config("invalid Adam hyperparameters".into()));
        }
        Ok(())
    }
}

/// Trained parameters plus what is needed to encode new data identically.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub letter_scale: LetterScale,
    pub group_list: Vec<String>,
    pub catalog: Vec<String>,
    pub vocab: AttributeVocab,
    pub strategy: StrategyConfig,
    pub seed: u64,
    /// Epoch of the returned parameters, 0-based.
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

impl Checkpoint {
    /// Errors unless `dataset` uses the same catalog, groups and letters.
    pub fn check_compatible(&self, dataset: &CohortDataset) -> Result<()> {
        if self.catalog != dataset.catalog {
            return Err(Error::Dimension {
                context: "course catalog",
                expected: self.catalog.len(),
                found: dataset.catalog.len(),
            });
        }
        if self.group_list != dataset.group_list {
            return Err(Error::Dimension {
                context: "group list",
                expected: self.group_list.len(),
                found: dataset.group_list.len(),
            });
        }
        if self.letter_scale != dataset.letter_scale {
            return Err(Error::Dimension {
                context: "letter scale",
                expected: self.letter_scale.len(),
                found: dataset.letter_scale.len(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean weighted grade loss per target over the epoch's minibatches.
    pub train_loss: f64,
    /// Unweighted masked cross-entropy per validation target.
    pub val_loss: f64,
}

/// Encoded sequences of every student under `mode`, in dataset order.
pub fn encode_all(
    dataset: &CohortDataset,
    vocab: &AttributeVocab,
    mode: FeatureMode,
) -> Result<Vec<EncodedSequence>> {
    dataset
        .students
        .iter()
        .map(|s| encode_with(s, dataset.num_courses(), dataset.group_list.len(), vocab, mode))
        .collect()
}

fn scale_grads(g: &mut OutputGrads, k: f64) {
    for v in g.grade.iter_mut().chain(g.race.iter_mut()) {
        for x in v.iter_mut() {
            *x *= k;
        }
    }
}

/// A training run driven one epoch at a time.
#[derive(Debug, Clone)]
pub struct Trainer {
    strategy: StrategyConfig,
    config: TrainConfig,
    params: ModelParams,
    adam: Adam,
    train: Vec<EncodedSequence>,
    val: Vec<EncodedSequence>,
    group_weights: Vec<Option<f64>>,
    num_letters: usize,
    epoch: usize,
}

impl Trainer {
    pub fn new(dataset: &CohortDataset, split: &SplitSpec, strategy: &StrategyConfig, config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let groups = dataset.group_list.len();
        strategy.validate(groups)?;
        let all = encode_all(dataset, &dataset.vocab, strategy.feature_mode)?;
        let alone = match &strategy.id {
            StrategyId::Alone(g) => Some(
                dataset
                    .group_list
                    .iter()
                    .position(|x| x == g)
                    .ok_or_else(|| Error::Config(format!("unknown group '{g}' for alone strategy")))?,
            ),
            _ => None,
        };
        let in_scope = |s: &EncodedSequence| alone.is_none_or(|g| s.race_index == g);
        let train: Vec<EncodedSequence> = all
            .iter()
            .filter(|s| in_scope(s))
            .filter_map(|s| s.restrict_targets(|t| split.is_train(t)))
            .collect();
        if train.is_empty() {
            return Err(match &strategy.id {
                StrategyId::Alone(g) => Error::Precondition(format!("group '{g}' has no training enrollments")),
                _ => Error::Precondition("no training targets".into()),
            });
        }
        let mut val: Vec<EncodedSequence> = all
            .iter()
            .filter(|s| in_scope(s))
            .filter_map(|s| s.restrict_targets(|t| split.is_val(t)))
            .collect();
        if val.is_empty() && alone.is_some() {
            val = all.iter().filter_map(|s| s.restrict_targets(|t| split.is_val(t))).collect();
        }
        if val.is_empty() {
            return Err(Error::Precondition("no validation targets".into()));
        }

        let mut counts = vec![0usize; groups];
        for s in &train {
            counts[s.race_index] += s.num_targets();
        }
        let group_weights = fit_group_weights(&strategy.sample_weighting, &counts)?;

        let dims = ModelDims {
            num_courses: dataset.num_courses(),
            num_letters: dataset.letter_scale.len(),
            attr_width: strategy.feature_mode.width(groups, &dataset.vocab),
            hidden: config.hidden,
            race_classes: groups,
        };
        let params = ModelParams::init(dims, config.seed)?;
        let adam = Adam::new(config.optimizer, &params.dims);
        Ok(Self {
            strategy: strategy.clone(),
            config: config.clone(),
            params,
            adam,
            train,
            val,
            group_weights,
            num_letters: dataset.letter_scale.len(),
            epoch: 0,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn epochs_run(&self) -> usize {
        self.epoch
    }

    pub fn group_weights(&self) -> &[Option<f64>] {
        &self.group_weights
    }

    pub fn train_sequences(&self) -> &[EncodedSequence] {
        &self.train
    }

    /// Gradient of one minibatch objective at the current parameters.
    pub fn batch_gradient(&self, batch: &[&EncodedSequence]) -> Result<(f64, ParamGrads)> {
        let m = self.num_letters;
        let labels: Vec<usize> = batch.iter().flat_map(|s| target_categories(s, m)).collect();
        let sigma = label_weights(&labels, &self.strategy.label_weighting);
        let races: Vec<usize> = batch.iter().map(|s| s.race_index).collect();
        let lambda = sample_weights(&races, &self.group_weights)?;
        let targets = labels.len().max(1) as f64;
        let students = batch.len().max(1) as f64;
        let mut total = ParamGrads::zeros(&self.params.dims);
        let mut loss = 0.0;
        let mut offset = 0;
        for (seq, &lam) in batch.iter().zip(&lambda) {
            let tr = forward_sequence(&self.params, seq, ForwardMode::Train, OutputScope::Targets)?;
            let k = seq.num_targets();
            let (l, mut g) = combined_loss(&tr, seq, m, &sigma[offset..offset + k], lam)?;
            offset += k;
            loss += l;
            scale_grads(&mut g, 1.0 / targets);
            let (_, mut r) = adversarial_loss(&tr, tr.len());
            scale_grads(&mut r, 1.0 / students);
            let g = g.add(&r);
            backward_into(&self.params, &tr, &g, self.strategy.alpha, self.strategy.adversary, &mut total)?;
        }
        check_finite(&total)?;
        Ok((loss / targets, total))
    }

    /// One pass over the training set; returns the mean minibatch loss.
    pub fn run_epoch(&mut self) -> Result<f64> {
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(self.epoch as u64);
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut batches = 0usize;
        for (b, chunk) in order.chunks(self.config.batch_size).enumerate() {
            let batch: Vec<&EncodedSequence> = chunk.iter().map(|&i| &self.train[i]).collect();
            let (loss, grads) = match self.batch_gradient(&batch) {
                Err(Error::NonFiniteGradient(_)) => {
                    return Err(Error::Diverged {
                        epoch: self.epoch,
                        batch: b,
                        loss: f64::NAN,
                    })
                }
                r => r?,
            };
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch: self.epoch,
                    batch: b,
                    loss,
                });
            }
            self.adam.update(&mut self.params.tensors, &grads);
            sum += loss;
            batches += 1;
        }
        self.epoch += 1;
        Ok(sum / batches as f64)
    }

    /// Unweighted masked cross-entropy per validation target.
    pub fn validation_loss(&self) -> Result<f64> {
        let mut loss = 0.0;
        let mut n = 0usize;
        for seq in &self.val {
            let tr = forward_sequence(&self.params, seq, ForwardMode::Train, OutputScope::Targets)?;
            loss += masked_ce(&tr, seq, self.num_letters)?.0;
            n += seq.num_targets();
        }
        Ok(loss / n as f64)
    }
}

/// Trains one strategy and returns the best-validation checkpoint with the
/// per-epoch history.
pub fn train(
    dataset: &CohortDataset,
    split: &SplitSpec,
    strategy: &StrategyConfig,
    config: &TrainConfig,
) -> Result<(Checkpoint, Vec<EpochRecord>)> {
    let mut trainer = Trainer::new(dataset, split, strategy, config)?;
    let mut stop = EarlyStopping::new(config.patience);
    let mut best = trainer.params.clone();
    let mut history = Vec::new();
    for epoch in 0..config.max_epochs {
        let train_loss = trainer.run_epoch()?;
        let val_loss = trainer.validation_loss()?;
        if !val_loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                batch: 0,
                loss: val_loss,
            });
        }
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        if stop.observe(epoch, val_loss) {
            best = trainer.params.clone();
        }
        if stop.should_stop() {
            break;
        }
    }
    let (best_epoch, best_val_loss) = stop.best().expect("at least one epoch ran");
    Ok((
        Checkpoint {
            params: best,
            letter_scale: dataset.letter_scale.clone(),
            group_list: dataset.group_list.clone(),
            catalog: dataset.catalog.clone(),
            vocab: dataset.vocab.clone(),
            strategy: strategy.clone(),
            seed: config.seed,
            best_epoch,
            best_val_loss,
        },
        history,
    ))
}

/// Prediction for one test-term enrollment.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub student_id: String,
    pub course_id: String,
    pub race_index: usize,
    pub truth: GradeLabel,
    pub distribution: GradeDistribution,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    pub records: Vec<PredictionRecord>,
    pub group_list: Vec<String>,
    pub letter_scale: LetterScale,
}

/// Predicts every test-term enrollment of students with at least one earlier
/// term. Students first seen in the test term have no history to predict
/// from and are skipped.
pub fn evaluate(checkpoint: &Checkpoint, dataset: &CohortDataset, split: &SplitSpec, mode: ForwardMode) -> Result<PredictionSet> {
    checkpoint.check_compatible(dataset)?;
    let params = &checkpoint.params;
    let feature_mode = checkpoint.strategy.feature_mode;
    let expected = feature_mode.width(dataset.group_list.len(), &checkpoint.vocab);
    if expected != params.dims.attr_width {
        return Err(Error::Dimension {
            context: "attribute width",
            expected: params.dims.attr_width,
            found: expected,
        });
    }
    let m = params.dims.num_letters;
    let mut records = Vec::new();
    for student in &dataset.students {
        let seq = encode_with(
            student,
            dataset.num_courses(),
            dataset.group_list.len(),
            &checkpoint.vocab,
            feature_mode,
        )?;
        let Some(seq) = seq.restrict_targets(|t| split.is_test(t)) else {
            continue;
        };
        let tr = forward_sequence(params, &seq, mode, OutputScope::Targets)?;
        for (step, cache) in seq.steps.iter().zip(&tr.steps) {
            for &(course, truth) in &step.targets {
                let out = cache
                    .grade
                    .iter()
                    .find(|o| o.course == course)
                    .ok_or_else(|| Error::Internal(format!("missing output for course {course}")))?;
                records.push(PredictionRecord {
                    student_id: seq.student_id.clone(),
                    course_id: dataset.catalog[course as usize].clone(),
                    race_index: seq.race_index,
                    truth,
                    distribution: GradeDistribution::from_probs(&out.probs, m),
                });
            }
        }
    }
    Ok(PredictionSet {
        records,
        group_list: dataset.group_list.clone(),
        letter_scale: dataset.letter_scale.clone(),
    })
}

/// Outcome of one strategy in a matrix run.
#[derive(Debug, Clone)]
pub struct MatrixEntry {
    pub strategy: StrategyConfig,
    pub result: Result<(Checkpoint, Vec<EpochRecord>, PredictionSet)>,
}

/// Trains and evaluates each strategy on the same split and base seed. A
/// failing strategy records its error without stopping the others.
pub fn run_matrix(
    dataset: &CohortDataset,
    split: &SplitSpec,
    strategies: &[StrategyConfig],
    config: &TrainConfig,
) -> Vec<MatrixEntry> {
    strategies
        .iter()
        .map(|s| MatrixEntry {
            strategy: s.clone(),
            result: train(dataset, split, s, config).and_then(|(ckpt, hist)| {
                let preds = evaluate(&ckpt, dataset, split, s.inference_mode)?;
                Ok((ckpt, hist, preds))
            }),
        })
        .collect()
}
