//! Binary outcomes at a grade cutoff, per-group confusion rates, range / STD
//! fairness summaries, and demographic-parity / equal-opportunity /
//! equalized-odds gaps.
//!
//! Rates are kept as exact count ratios; floating point appears only on
//! conversion.

use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;
use serde::{Deserialize, Serialize};

use crate::cohort::DECLINE_TO_STATE;
use crate::grade::{Cutoff, GradeLabel};
use crate::math::sqrt;
use crate::trainer::PredictionSet;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BinaryOutcome {
    pub predicted_positive: bool,
    pub actual_positive: bool,
    pub group: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BinarizeOptions {
    #[serde(default)]
    pub cutoff: Cutoff,
    /// Count Pass as positive and No-Pass as negative instead of dropping
    /// Pass/No-Pass enrollments.
    #[serde(default)]
    pub pass_as_positive: bool,
}

/// Binarizes every prediction: positive iff the argmax letter (or the true
/// letter) clears the cutoff.
pub fn binarize(set: &PredictionSet, options: BinarizeOptions) -> Vec<BinaryOutcome> {
    let scale = &set.letter_scale;
    set.records
        .iter()
        .filter_map(|r| {
            let predicted_letter = scale.is_positive(r.distribution.argmax_letter(), options.cutoff);
            match r.truth {
                GradeLabel::Letter(i) => Some(BinaryOutcome {
                    predicted_positive: predicted_letter,
                    actual_positive: scale.is_positive(i as usize, options.cutoff),
                    group: r.race_index,
                }),
                g if options.pass_as_positive => Some(BinaryOutcome {
                    predicted_positive: r.distribution.pass_no_pass[0] >= r.distribution.pass_no_pass[1],
                    actual_positive: g == GradeLabel::Pass,
                    group: r.race_index,
                }),
                _ => None,
            }
        })
        .collect()
}

/// An exact non-negative fraction of counts.
#[derive(Debug, Clone, Copy, Eq, Serialize, Deserialize)]
pub struct Ratio {
    pub num: u64,
    pub den: u64,
}

impl Ratio {
    pub fn new(num: u64, den: u64) -> Option<Self> {
        (den > 0).then_some(Self { num, den })
    }

    pub fn to_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// `self - other` for `self >= other`.
    pub fn gap(self, other: Ratio) -> Gap {
        let a = self.num as u128 * other.den as u128;
        let b = other.num as u128 * self.den as u128;
        Gap {
            num: a.saturating_sub(b),
            den: self.den as u128 * other.den as u128,
        }
    }
}

impl PartialEq for Ratio {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl PartialOrd for Ratio {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Ratio {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.num as u128 * other.den as u128).cmp(&(other.num as u128 * self.den as u128))
    }
}

/// Exact difference between two ratios.
#[derive(Debug, Clone, Copy, Eq, Serialize, Deserialize)]
pub struct Gap {
    pub num: u128,
    pub den: u128,
}

impl Gap {
    pub fn to_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl PartialEq for Gap {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl PartialOrd for Gap {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Gap {
    fn cmp(&self, other: &Self) -> Ordering {
        // cross products of very large counts can overflow u128
        match (
            self.num.checked_mul(other.den),
            other.num.checked_mul(self.den),
        ) {
            (Some(a), Some(b)) => a.cmp(&b),
            _ => self.to_f64().total_cmp(&other.to_f64()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fn_: u64,
    pub tn: u64,
    pub fp: u64,
}

impl Confusion {
    pub fn add(&mut self, o: &BinaryOutcome) {
        match (o.actual_positive, o.predicted_positive) {
            (true, true) => self.tp += 1,
            (true, false) => self.fn_ += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fp += 1,
        }
    }

    pub fn support(&self) -> u64 {
        self.tp + self.fn_ + self.tn + self.fp
    }

    pub fn tpr(&self) -> Option<Ratio> {
        Ratio::new(self.tp, self.tp + self.fn_)
    }

    pub fn fnr(&self) -> Option<Ratio> {
        Ratio::new(self.fn_, self.tp + self.fn_)
    }

    pub fn tnr(&self) -> Option<Ratio> {
        Ratio::new(self.tn, self.tn + self.fp)
    }

    pub fn fpr(&self) -> Option<Ratio> {
        Ratio::new(self.fp, self.tn + self.fp)
    }

    pub fn accuracy(&self) -> Option<Ratio> {
        Ratio::new(self.tp + self.tn, self.support())
    }

    /// `P(predicted positive)`.
    pub fn positive_rate(&self) -> Option<Ratio> {
        Ratio::new(self.tp + self.fp, self.support())
    }
}

/// Metrics summarized across groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Tpr,
    Tnr,
    Accuracy,
    Fnr,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Tpr, Metric::Tnr, Metric::Accuracy, Metric::Fnr];
    /// The three metrics reported per strategy.
    pub const REPORTED: [Metric; 3] = [Metric::Tpr, Metric::Tnr, Metric::Accuracy];

    pub fn of(self, c: &Confusion) -> Option<Ratio> {
        match self {
            Metric::Tpr => c.tpr(),
            Metric::Tnr => c.tnr(),
            Metric::Accuracy => c.accuracy(),
            Metric::Fnr => c.fnr(),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Metric::Tpr => "TPR",
            Metric::Tnr => "TNR",
            Metric::Accuracy => "Accuracy",
            Metric::Fnr => "FNR",
        }
    }
}

/// Range and sample standard deviation of a metric across groups.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Spread {
    pub count: usize,
    pub range: Option<f64>,
    /// `n - 1` denominator; undefined below two values.
    pub std: Option<f64>,
}

pub fn spread(values: &[f64]) -> Spread {
    let n = values.len();
    if n == 0 {
        return Spread::default();
    }
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let std = (n >= 2).then(|| {
        let mean = values.iter().sum::<f64>() / n as f64;
        let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
        sqrt(ss / (n - 1) as f64)
    });
    Spread {
        count: n,
        range: Some(max - min),
        std,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRow {
    pub group: String,
    pub confusion: Confusion,
    /// Whether this group enters range / STD.
    pub included: bool,
}

impl GroupRow {
    pub fn rate(&self, metric: Metric) -> Option<f64> {
        metric.of(&self.confusion).map(Ratio::to_f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Flag {
    pub group: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub groups: Vec<GroupRow>,
    pub overall: GroupRow,
    /// One entry per [`Metric::ALL`], in order.
    pub spreads: Vec<(Metric, Spread)>,
    pub flags: Vec<Flag>,
}

impl GroupReport {
    pub fn spread(&self, metric: Metric) -> Spread {
        self.spreads
            .iter()
            .find(|(m, _)| *m == metric)
            .map(|(_, s)| *s)
            .unwrap_or_default()
    }

    pub fn row(&self, group: &str) -> Option<&GroupRow> {
        self.groups.iter().find(|g| g.group == group)
    }
}

/// Default inclusion: every group except Decline-to-State.
pub fn default_included(group_list: &[String]) -> Vec<bool> {
    group_list.iter().map(|g| g != DECLINE_TO_STATE).collect()
}

/// Per-group confusion counts and their cross-group spread. Groups with zero
/// support, or an undefined rate for a metric, are flagged and left out of
/// that metric's spread.
pub fn group_report(outcomes: &[BinaryOutcome], group_list: &[String], included: &[bool]) -> Result<GroupReport> {
    if outcomes.is_empty() {
        return Err(Error::Precondition("group report needs at least one outcome".into()));
    }
    if included.len() != group_list.len() {
        return Err(Error::Dimension {
            context: "included groups",
            expected: group_list.len(),
            found: included.len(),
        });
    }
    let mut counts = alloc::vec![Confusion::default(); group_list.len()];
    let mut overall = Confusion::default();
    for o in outcomes {
        let c = counts.get_mut(o.group).ok_or(Error::Dimension {
            context: "outcome group",
            expected: group_list.len(),
            found: o.group,
        })?;
        c.add(o);
        overall.add(o);
    }
    let groups: Vec<GroupRow> = group_list
        .iter()
        .zip(&counts)
        .zip(included)
        .map(|((g, c), &inc)| GroupRow {
            group: g.clone(),
            confusion: *c,
            included: inc,
        })
        .collect();
    let mut flags = Vec::new();
    for g in groups.iter().filter(|g| g.included) {
        if g.confusion.support() == 0 {
            flags.push(Flag {
                group: g.group.clone(),
                reason: "zero support".into(),
            });
            continue;
        }
        if g.confusion.tpr().is_none() {
            flags.push(Flag {
                group: g.group.clone(),
                reason: "no actual positives: TPR and FNR undefined".into(),
            });
        }
        if g.confusion.tnr().is_none() {
            flags.push(Flag {
                group: g.group.clone(),
                reason: "no actual negatives: TNR undefined".into(),
            });
        }
    }
    let spreads = Metric::ALL
        .iter()
        .map(|&m| {
            let vals: Vec<f64> = groups
                .iter()
                .filter(|g| g.included)
                .filter_map(|g| g.rate(m))
                .collect();
            (m, spread(&vals))
        })
        .collect();
    Ok(GroupReport {
        groups,
        overall: GroupRow {
            group: "Overall".into(),
            confusion: overall,
            included: false,
        },
        spreads,
        flags,
    })
}

/// Max-minus-min of one rate over the groups where it is defined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateGap {
    pub gap: Gap,
    pub max_group: usize,
    pub min_group: usize,
}

impl RateGap {
    pub fn to_f64(&self) -> f64 {
        self.gap.to_f64()
    }
}

fn rate_gap(counts: &[(usize, Confusion)], rate: impl Fn(&Confusion) -> Option<Ratio>) -> Option<RateGap> {
    let defined: Vec<(usize, Ratio)> = counts.iter().filter_map(|(g, c)| rate(c).map(|r| (*g, r))).collect();
    if defined.len() < 2 {
        return None;
    }
    let (max_group, max) = *defined.iter().max_by(|a, b| a.1.cmp(&b.1)).unwrap();
    let (min_group, min) = *defined.iter().min_by(|a, b| a.1.cmp(&b.1)).unwrap();
    Some(RateGap {
        gap: max.gap(min),
        max_group,
        min_group,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessCriteria {
    pub demographic_parity_gap: RateGap,
    pub equal_opportunity_gap: Option<RateGap>,
    pub fpr_gap: Option<RateGap>,
    /// Larger of the TPR and FPR gaps.
    pub equalized_odds_gap: Option<Gap>,
    /// `(group, reason)` for groups left out of a gap.
    pub excluded: Vec<(usize, String)>,
}

/// Demographic parity, equal opportunity and equalized odds gaps over the
/// groups present in `outcomes`.
pub fn fairness_criteria(outcomes: &[BinaryOutcome]) -> Result<FairnessCriteria> {
    let mut by_group: alloc::collections::BTreeMap<usize, Confusion> = Default::default();
    for o in outcomes {
        by_group.entry(o.group).or_default().add(o);
    }
    let counts: Vec<(usize, Confusion)> = by_group.into_iter().collect();
    if counts.len() < 2 {
        return Err(Error::Precondition(
            "fairness criteria need at least two groups with outcomes".into(),
        ));
    }
    let mut excluded = Vec::new();
    for (g, c) in &counts {
        if c.tpr().is_none() {
            excluded.push((*g, "no actual positives: excluded from TPR gap".into()));
        }
        if c.fpr().is_none() {
            excluded.push((*g, "no actual negatives: excluded from FPR gap".into()));
        }
    }
    let parity = rate_gap(&counts, Confusion::positive_rate).expect("two groups with support");
    let tpr = rate_gap(&counts, Confusion::tpr);
    let fpr = rate_gap(&counts, Confusion::fpr);
    let odds = match (tpr, fpr) {
        (Some(a), Some(b)) => Some(a.gap.max(b.gap)),
        (Some(a), None) => Some(a.gap),
        (None, Some(b)) => Some(b.gap),
        (None, None) => None,
    };
    Ok(FairnessCriteria {
        demographic_parity_gap: parity,
        equal_opportunity_gap: tpr,
        fpr_gap: fpr,
        equalized_odds_gap: odds,
        excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grade::LetterScale;
    use crate::seqnet::GradeDistribution;
    use crate::trainer::PredictionRecord;
    use alloc::string::ToString;
    use alloc::vec;

    fn outcomes(group: usize, tp: usize, fn_: usize, tn: usize, fp: usize) -> Vec<BinaryOutcome> {
        let mk = |a, p| BinaryOutcome {
            predicted_positive: p,
            actual_positive: a,
            group,
        };
        let mut v = Vec::new();
        v.extend((0..tp).map(|_| mk(true, true)));
        v.extend((0..fn_).map(|_| mk(true, false)));
        v.extend((0..tn).map(|_| mk(false, false)));
        v.extend((0..fp).map(|_| mk(false, true)));
        v
    }

    fn record(pred_letter: usize, truth: GradeLabel) -> PredictionRecord {
        let mut letters = vec![0.01; 13];
        letters[pred_letter] = 0.5;
        PredictionRecord {
            student_id: "s".into(),
            course_id: "c".into(),
            race_index: 0,
            truth,
            distribution: GradeDistribution {
                letters,
                pass_no_pass: [0.7, 0.3],
            },
        }
    }

    fn set(records: Vec<PredictionRecord>) -> PredictionSet {
        PredictionSet {
            records,
            group_list: vec!["G".to_string()],
            letter_scale: LetterScale::default(),
        }
    }

    #[test]
    fn binarize_examples() {
        let s = set(vec![record(2, GradeLabel::Letter(3)), record(0, GradeLabel::Pass)]);
        let out = binarize(&s, BinarizeOptions::default());
        assert_eq!(out.len(), 1);
        assert!(out[0].predicted_positive && !out[0].actual_positive);

        let s = set(vec![record(5, GradeLabel::Letter(4))]);
        let b = binarize(
            &s,
            BinarizeOptions {
                cutoff: Cutoff::BOrBetter,
                pass_as_positive: false,
            },
        );
        assert!(b[0].predicted_positive && b[0].actual_positive);

        let s = set(vec![record(0, GradeLabel::Pass)]);
        let p = binarize(
            &s,
            BinarizeOptions {
                cutoff: Cutoff::ACategory,
                pass_as_positive: true,
            },
        );
        assert!(p[0].predicted_positive && p[0].actual_positive);
    }

    #[test]
    fn single_group_confusion_arithmetic() {
        let o = outcomes(0, 8, 2, 6, 4);
        let r = group_report(&o, &["G".to_string()], &[true]).unwrap();
        let g = &r.groups[0];
        assert_eq!(g.rate(Metric::Tpr), Some(0.8));
        assert_eq!(g.rate(Metric::Tnr), Some(0.6));
        assert_eq!(g.rate(Metric::Accuracy), Some(0.7));
        assert_eq!(g.confusion.fnr(), Ratio::new(2, 10));
        let s = r.spread(Metric::Tpr);
        assert_eq!(s.range, Some(0.0));
        assert_eq!(s.std, None);
    }

    #[test]
    fn reported_rows_spread() {
        let tpr = [80.10, 79.67, 78.16, 70.31, 72.46, 78.34, 72.58];
        let s = spread(&tpr);
        assert!((s.range.unwrap() - 9.79).abs() <= 0.01);
        assert!((s.std.unwrap() - 4.02).abs() <= 0.01);
        let acc = [76.80, 77.31, 75.86, 75.83, 76.37, 77.33, 76.35];
        let s = spread(&acc);
        assert!((s.range.unwrap() - 1.50).abs() <= 0.01);
        assert!((s.std.unwrap() - 0.62).abs() <= 0.01);
    }

    #[test]
    fn empty_outcomes_are_rejected() {
        assert!(group_report(&[], &["G".to_string()], &[true]).is_err());
    }

    #[test]
    fn zero_support_group_is_flagged() {
        let o = outcomes(0, 3, 1, 2, 2);
        let groups = ["A".to_string(), "B".to_string()];
        let r = group_report(&o, &groups, &[true, true]).unwrap();
        assert_eq!(r.flags.len(), 1);
        assert_eq!(r.flags[0].group, "B");
        assert_eq!(r.spread(Metric::Tpr).count, 1);
    }

    #[test]
    fn criteria_examples() {
        let mut o = outcomes(0, 3, 0, 2, 0);
        o.extend(outcomes(1, 2, 1, 1, 1));
        // P(Y'=1): 3/5 and 3/5
        let c = fairness_criteria(&o).unwrap();
        assert_eq!(c.demographic_parity_gap.to_f64(), 0.0);

        let mut o = outcomes(0, 8, 2, 7, 3);
        o.extend(outcomes(1, 7, 3, 7, 3));
        let c = fairness_criteria(&o).unwrap();
        assert!((c.equal_opportunity_gap.unwrap().to_f64() - 0.1).abs() < 1e-15);
        assert_eq!(c.fpr_gap.unwrap().to_f64(), 0.0);
        assert!((c.equalized_odds_gap.unwrap().to_f64() - 0.1).abs() < 1e-15);
        assert!(fairness_criteria(&outcomes(0, 1, 1, 1, 1)).is_err());
    }

    proptest::proptest! {
        #[test]
        fn report_is_permutation_invariant(
            raw in proptest::collection::vec((0usize..3, proptest::bool::ANY, proptest::bool::ANY), 1..300),
            seed in 0u64..1000,
        ) {
            let o: Vec<BinaryOutcome> = raw.iter().map(|&(g, a, p)| BinaryOutcome { group: g, actual_positive: a, predicted_positive: p }).collect();
            let mut shuffled = o.clone();
            // deterministic Fisher-Yates with an LCG
            let mut x = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
            for i in (1..shuffled.len()).rev() {
                x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                shuffled.swap(i, (x >> 33) as usize % (i + 1));
            }
            let groups = ["a".to_string(), "b".to_string(), "c".to_string()];
            let r1 = group_report(&o, &groups, &[true; 3]).unwrap();
            let r2 = group_report(&shuffled, &groups, &[true; 3]).unwrap();
            proptest::prop_assert_eq!(&r1, &r2);
            let c = r1.overall.confusion;
            proptest::prop_assert_eq!(c.support() as usize, o.len());
        }
    }
}
