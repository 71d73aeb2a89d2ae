//! Masked two-block cross-entropy, grade-label weights (sigma), sample
//! weights (lambda) and the adversarial race loss.
//!
//! Every function returns the loss together with logit gradients laid out
//! for [`crate::seqnet::backward`].

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::encoding::EncodedSequence;

use crate::seqnet::{ForwardTrace, OutputGrads};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelWeightMode {
    #[default]
    Off,
    /// Inverse frequency of each grade token within the minibatch.
    MinibatchInverse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightNormalization {
    /// Weights sum to one over the minibatch.
    SumOne,
    /// Weights average to one over the minibatch.
    #[default]
    MeanOne,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelWeightScheme {
    #[serde(default)]
    pub mode: LabelWeightMode,
    #[serde(default)]
    pub normalization: WeightNormalization,
}

impl LabelWeightScheme {
    pub fn minibatch_inverse() -> Self {
        Self {
            mode: LabelWeightMode::MinibatchInverse,
            normalization: WeightNormalization::MeanOne,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleWeightMode {
    #[default]
    Off,
    /// `1 / r` for group enrollment proportion `r`.
    Equal,
    /// `1 - d` for group graduation rate `d`.
    GradRate,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleWeightScheme {
    #[serde(default)]
    pub mode: SampleWeightMode,
    /// Group enrollment proportions for `equal`; measured on the training
    /// enrollments when absent.
    #[serde(default)]
    pub group_proportions: Option<Vec<f64>>,
    /// Per-group graduation rates for `grad_rate`.
    #[serde(default)]
    pub graduation_rates: Vec<f64>,
}

impl SampleWeightScheme {
    pub fn validate(&self, num_groups: usize) -> Result<()> {
        match self.mode {
            SampleWeightMode::Off => Ok(()),
            SampleWeightMode::Equal => match &self.group_proportions {
                None => Ok(()),
                Some(r) => {
                    if r.len() != num_groups {
                        return Err(Error::Config(alloc::format!(
                            "group_proportions has {} entries for {num_groups} groups",
                            r.len()
                        )));
                    }
                    if r.iter().any(|&x| !(x > 0.0)) {
                        return Err(Error::Config("group proportions must be positive".into()));
                    }
                    if (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                        return Err(Error::Config("group proportions must sum to 1".into()));
                    }
                    Ok(())
                }
            },
            SampleWeightMode::GradRate => {
                let d = &self.graduation_rates;
                if d.len() != num_groups {
                    return Err(Error::Config(alloc::format!(
                        "graduation_rates has {} entries for {num_groups} groups",
                        d.len()
                    )));
                }
                if d.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
                    return Err(Error::Config("graduation rates must lie in [0, 1]".into()));
                }
                Ok(())
            }
        }
    }
}

/// Un-normalized per-group weights: `1 / r`, `1 - d`, or ones. Groups with
/// no proportion (zero enrollments, `equal` without configured `r`) get
/// `None`.
pub fn raw_group_weights(scheme: &SampleWeightScheme, group_counts: &[usize]) -> Result<Vec<Option<f64>>> {
    scheme.validate(group_counts.len())?;
    Ok(match scheme.mode {
        SampleWeightMode::Off => vec![Some(1.0); group_counts.len()],
        SampleWeightMode::Equal => {
            let total: usize = group_counts.iter().sum();
            let r: Vec<f64> = match &scheme.group_proportions {
                Some(r) => r.clone(),
                None => group_counts
                    .iter()
                    .map(|&c| if total == 0 { 0.0 } else { c as f64 / total as f64 })
                    .collect(),
            };
            r.iter().map(|&x| (x > 0.0).then(|| 1.0 / x)).collect()
        }
        SampleWeightMode::GradRate => scheme.graduation_rates.iter().map(|&d| Some(1.0 - d)).collect(),
    })
}

/// Per-group lambda, normalized so the mean weight over the training
/// enrollments (`group_counts[g]` enrollments in group `g`) is one.
pub fn fit_group_weights(scheme: &SampleWeightScheme, group_counts: &[usize]) -> Result<Vec<Option<f64>>> {
    let raw = raw_group_weights(scheme, group_counts)?;
    if scheme.mode == SampleWeightMode::Off {
        return Ok(raw);
    }
    let total: usize = group_counts.iter().sum();
    let mut mass = 0.0;
    for (w, &c) in raw.iter().zip(group_counts) {
        if c > 0 {
            match w {
                Some(w) => mass += w * c as f64,
                None => {
                    return Err(Error::Config(
                        "a group with training enrollments has zero proportion".into(),
                    ))
                }
            }
        }
    }
    if !(mass > 0.0) {
        return Err(Error::Config("sample weights have zero total mass".into()));
    }
    let k = total as f64 / mass;
    Ok(raw.into_iter().map(|w| w.map(|w| w * k)).collect())
}

/// Per-student lambda for the races in a batch.
pub fn sample_weights(batch_races: &[usize], group_weights: &[Option<f64>]) -> Result<Vec<f64>> {
    batch_races
        .iter()
        .map(|&r| match group_weights.get(r) {
            Some(Some(w)) => Ok(*w),
            _ => Err(Error::Config(alloc::format!(
                "race group {r} has no sample weight (zero proportion)"
            ))),
        })
        .collect()
}

/// Sigma for each graded enrollment of a minibatch, given its grade
/// category (`0..m+2`).
pub fn label_weights(labels: &[usize], scheme: &LabelWeightScheme) -> Vec<f64> {
    let n = labels.len();
    if scheme.mode == LabelWeightMode::Off || n == 0 {
        return vec![1.0; n];
    }
    let width = labels.iter().max().map_or(0, |&m| m + 1);
    let mut counts = vec![0usize; width];
    for &l in labels {
        counts[l] += 1;
    }
    let inv: Vec<f64> = labels
        .iter()
        .map(|&l| 1.0 / (counts[l] as f64 / n as f64))
        .collect();
    let total: f64 = inv.iter().sum();
    match scheme.normalization {
        WeightNormalization::SumOne => inv.iter().map(|&x| x / total).collect(),
        WeightNormalization::MeanOne => inv.iter().map(|&x| x / total * n as f64).collect(),
    }
}

/// Grade categories of every target in `seq`, in step-then-target order.
pub fn target_categories(seq: &EncodedSequence, num_letters: usize) -> impl Iterator<Item = usize> + '_ {
    seq.steps
        .iter()
        .flat_map(move |s| s.targets.iter().map(move |&(_, g)| g.category(num_letters)))
}

fn position_of(trace: &ForwardTrace, step: usize, course: u32) -> Result<usize> {
    trace.steps[step]
        .grade
        .iter()
        .position(|o| o.course == course)
        .ok_or_else(|| Error::Internal(alloc::format!("no output for course {course} at step {step}")))
}

fn weighted_ce(
    trace: &ForwardTrace,
    seq: &EncodedSequence,
    num_letters: usize,
    weight: impl Fn(usize) -> f64,
) -> Result<(f64, OutputGrads)> {
    if trace.len() < seq.steps.len() {
        return Err(Error::Dimension {
            context: "trace length",
            expected: seq.steps.len(),
            found: trace.len(),
        });
    }
    let m = num_letters;
    let bw = m + 2;
    let mut grads = OutputGrads::zeros(trace.len());
    let mut loss = 0.0;
    let mut e = 0;
    for (t, step) in seq.steps.iter().enumerate() {
        if step.targets.is_empty() {
            continue;
        }
        let outs = &trace.steps[t].grade;
        let mut g = vec![0.0; outs.len() * bw];
        for &(course, label) in &step.targets {
            let cat = label.category(m);
            if cat >= bw {
                return Err(Error::Validation("target label outside the course block".into()));
            }
            let o = position_of(trace, t, course)?;
            let w = weight(e);
            e += 1;
            let out = &outs[o];
            loss += w * -out.log_probs[cat];
            let block = if cat < m { 0..m } else { m..bw };
            for l in block {
                let y = if l == cat { 1.0 } else { 0.0 };
                g[o * bw + l] = w * (out.probs[l] - y);
            }
        }
        grads.grade[t] = g;
    }
    Ok((loss, grads))
}

/// Unweighted masked cross-entropy summed over every graded target.
pub fn masked_ce(trace: &ForwardTrace, seq: &EncodedSequence, num_letters: usize) -> Result<(f64, OutputGrads)> {
    if trace.len() < seq.steps.len() {
        return Err(Error::Dimension {
            context: "trace length",
            expected: seq.steps.len(),
            found: trace.len(),
        });
    }
    let m = num_letters;
    let bw = m + 2;
    let mut grads = OutputGrads::zeros(trace.len());
    let mut loss = 0.0;
    for (t, step) in seq.steps.iter().enumerate() {
        if step.targets.is_empty() {
            continue;
        }
        let outs = &trace.steps[t].grade;
        let mut g = vec![0.0; outs.len() * bw];
        for &(course, label) in &step.targets {
            let cat = label.category(m);
            if cat >= bw {
                return Err(Error::Validation("target label outside the course block".into()));
            }
            let o = position_of(trace, t, course)?;
            let out = &outs[o];
            loss += -out.log_probs[cat];
            let block = if cat < m { 0..m } else { m..bw };
            for l in block {
                let y = if l == cat { 1.0 } else { 0.0 };
                g[o * bw + l] = out.probs[l] - y;
            }
        }
        grads.grade[t] = g;
    }
    Ok((loss, grads))
}

/// Masked cross-entropy with each target scaled by `lambda * sigma[e]`,
/// `sigma` listed in step-then-target order.
pub fn combined_loss(
    trace: &ForwardTrace,
    seq: &EncodedSequence,
    num_letters: usize,
    sigma: &[f64],
    lambda: f64,
) -> Result<(f64, OutputGrads)> {
    let n = seq.num_targets();
    if sigma.len() != n {
        return Err(Error::Dimension {
            context: "label weights",
            expected: n,
            found: sigma.len(),
        });
    }
    if !(lambda >= 0.0) || sigma.iter().any(|&s| !(s >= 0.0)) {
        return Err(Error::Validation("loss weights must be non-negative".into()));
    }
    weighted_ce(trace, seq, num_letters, |e| lambda * sigma[e])
}

/// Race cross-entropy averaged over the first `valid_steps` steps.
pub fn adversarial_loss(trace: &ForwardTrace, valid_steps: usize) -> (f64, OutputGrads) {
    let v = valid_steps.min(trace.len());
    let mut grads = OutputGrads::zeros(trace.len());
    if v == 0 {
        return (0.0, grads);
    }
    let inv = 1.0 / v as f64;
    let mut loss = 0.0;
    for (t, s) in trace.steps[..v].iter().enumerate() {
        loss += -s.race_log_probs[trace.race_index];
        grads.race[t] = s
            .race_probs
            .iter()
            .enumerate()
            .map(|(c, &p)| inv * (p - if c == trace.race_index { 1.0 } else { 0.0 }))
            .collect();
    }
    (loss * inv, grads)
}
