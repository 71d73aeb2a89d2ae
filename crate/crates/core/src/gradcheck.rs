//! Central finite-difference check of the analytic gradients.
//!
//! The numerical side only evaluates forward passes and loss values; it never
//! touches [`backward`]. Each parameter block is checked against the
//! objective it actually descends: under gradient reversal the trunk follows
//! `grade - alpha * race`, the grade head follows `grade` and the race head
//! follows `race`.

use alloc::vec::Vec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::encoding::{EncodedSequence, EncodedStep};
use crate::grade::GradeLabel;
use crate::losses::{adversarial_loss, combined_loss, masked_ce};
use crate::seqnet::{
    backward_into, forward_sequence, AdversaryMode, ForwardMode, ModelDims, ModelParams, OutputScope, ParamGrads,
    TENSOR_NAMES,
};
use crate::Result;

/// Which objective is differentiated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossVariant {
    /// Plain masked cross-entropy.
    Masked,
    /// Cross-entropy with random per-enrollment sigma and per-student lambda.
    Weighted,
    /// Weighted cross-entropy plus the race head under gradient reversal.
    Adversarial { alpha: f64 },
    /// Weighted cross-entropy minus `alpha` times the race loss for every
    /// parameter, race head included.
    Joint { alpha: f64 },
}

impl LossVariant {
    pub fn name(&self) -> alloc::string::String {
        match self {
            LossVariant::Masked => "masked".into(),
            LossVariant::Weighted => "weighted".into(),
            LossVariant::Adversarial { alpha } => alloc::format!("adversarial(alpha={alpha})"),
            LossVariant::Joint { alpha } => alloc::format!("joint(alpha={alpha})"),
        }
    }

    /// The variants exercised by default.
    pub fn standard() -> Vec<LossVariant> {
        alloc::vec![
            LossVariant::Masked,
            LossVariant::Weighted,
            LossVariant::Adversarial { alpha: 0.1 },
            LossVariant::Adversarial { alpha: 1.0 },
            LossVariant::Joint { alpha: 0.5 },
        ]
    }

    fn alpha(&self) -> f64 {
        match *self {
            LossVariant::Adversarial { alpha } | LossVariant::Joint { alpha } => alpha,
            _ => 0.0,
        }
    }

    fn adversary(&self) -> AdversaryMode {
        match self {
            LossVariant::Joint { .. } => AdversaryMode::Joint,
            _ => AdversaryMode::Reversal,
        }
    }

    /// `(grade coefficient, race coefficient)` of the objective followed by
    /// parameter block `block` (index into [`TENSOR_NAMES`]).
    fn objective(&self, block: usize) -> (f64, f64) {
        let trunk = block < 3;
        let race_head = block >= 5;
        match *self {
            LossVariant::Masked | LossVariant::Weighted => (1.0, 0.0),
            LossVariant::Adversarial { alpha } => {
                if race_head {
                    (0.0, 1.0)
                } else if trunk {
                    (1.0, -alpha)
                } else {
                    (1.0, 0.0)
                }
            }
            LossVariant::Joint { alpha } => (1.0, -alpha),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    pub num_courses: usize,
    pub num_letters: usize,
    pub hidden: usize,
    pub race_classes: usize,
    pub num_sequences: usize,
    pub seed: u64,
    /// Finite-difference step.
    pub step: f64,
    /// Denominator floor for the relative error.
    pub floor: f64,
    /// Negative control: perturbs one analytic entry before comparing.
    pub corrupt: bool,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            num_courses: 3,
            num_letters: 4,
            hidden: 5,
            race_classes: 3,
            num_sequences: 3,
            seed: 0,
            step: 1e-5,
            floor: 1e-6,
            corrupt: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub variant: alloc::string::String,
    pub seed: u64,
    pub num_params: usize,
    pub max_rel_error: f64,
    pub worst_block: &'static str,
    pub worst_offset: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error <= tolerance
    }
}

/// Random sequences and weights for a check.
#[derive(Debug, Clone)]
pub struct Fixture {
    pub params: ModelParams,
    pub sequences: Vec<EncodedSequence>,
    pub sigma: Vec<Vec<f64>>,
    pub lambda: Vec<f64>,
}

pub fn fixture(config: &GradCheckConfig) -> Result<Fixture> {
    let dims = ModelDims {
        num_courses: config.num_courses,
        num_letters: config.num_letters,
        attr_width: config.race_classes,
        hidden: config.hidden,
        race_classes: config.race_classes,
    };
    let mut params = ModelParams::init(dims, config.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9_7f4a_7c15);
    for block in params.tensors.blocks_mut() {
        for x in block.iter_mut() {
            *x = rng.random_range(-0.5..0.5);
        }
    }
    let n = config.num_courses as u32;
    let bw = config.num_letters + 2;
    let random_term = |rng: &mut ChaCha8Rng| -> Vec<(u32, GradeLabel)> {
        let mut v = Vec::new();
        for c in 0..n {
            if rng.random_bool(0.6) {
                let cat = rng.random_range(0..bw);
                v.push((c, GradeLabel::from_category(cat, config.num_letters).unwrap()));
            }
        }
        if v.is_empty() {
            let cat = rng.random_range(0..bw);
            v.push((rng.random_range(0..n), GradeLabel::from_category(cat, config.num_letters).unwrap()));
        }
        v
    };
    let mut sequences = Vec::new();
    for s in 0..config.num_sequences {
        let len = 2 + s % 3;
        let race = rng.random_range(0..config.race_classes);
        let mut grades = random_term(&mut rng);
        let mut steps = Vec::new();
        for t in 0..len as u32 {
            // one masked gap step per sequence after the first
            let targets = if s > 0 && t == 1 { Vec::new() } else { random_term(&mut rng) };
            steps.push(EncodedStep {
                input_term: t,
                target_term: t + 1,
                grades: core::mem::take(&mut grades),
                next_courses: targets.iter().map(|x| x.0).collect(),
                targets: targets.clone(),
            });
            grades = targets;
        }
        sequences.push(EncodedSequence {
            student_id: alloc::format!("g{s}"),
            race_index: race,
            attrs: alloc::vec![race as u32],
            steps,
        });
    }
    let sigma = sequences
        .iter()
        .map(|s| (0..s.num_targets()).map(|_| rng.random_range(0.25..2.0)).collect())
        .collect();
    let lambda = sequences.iter().map(|_| rng.random_range(0.25..2.0)).collect();
    Ok(Fixture {
        params,
        sequences,
        sigma,
        lambda,
    })
}

fn losses(fx: &Fixture, params: &ModelParams, variant: LossVariant) -> Result<(f64, f64)> {
    let m = params.dims.num_letters;
    let mut grade = 0.0;
    let mut race = 0.0;
    for (i, seq) in fx.sequences.iter().enumerate() {
        let tr = forward_sequence(params, seq, ForwardMode::Train, OutputScope::Targets)?;
        grade += match variant {
            LossVariant::Masked => masked_ce(&tr, seq, m)?.0,
            _ => combined_loss(&tr, seq, m, &fx.sigma[i], fx.lambda[i])?.0,
        };
        race += adversarial_loss(&tr, tr.len()).0;
    }
    Ok((grade, race))
}

/// Analytic gradient for a fixture.
pub fn analytic(fx: &Fixture, variant: LossVariant) -> Result<ParamGrads> {
    let params = &fx.params;
    let m = params.dims.num_letters;
    let mut total = ParamGrads::zeros(&params.dims);
    let with_race = matches!(variant, LossVariant::Adversarial { .. } | LossVariant::Joint { .. });
    for (i, seq) in fx.sequences.iter().enumerate() {
        let tr = forward_sequence(params, seq, ForwardMode::Train, OutputScope::Targets)?;
        let (_, mut g) = match variant {
            LossVariant::Masked => masked_ce(&tr, seq, m)?,
            _ => combined_loss(&tr, seq, m, &fx.sigma[i], fx.lambda[i])?,
        };
        if with_race {
            let (_, r) = adversarial_loss(&tr, tr.len());
            g = g.add(&r);
        }
        backward_into(params, &tr, &g, variant.alpha(), variant.adversary(), &mut total)?;
    }
    Ok(total)
}

/// Compares analytic and central-difference gradients over every parameter.
pub fn check(config: &GradCheckConfig, variant: LossVariant) -> Result<GradCheckReport> {
    let fx = fixture(config)?;
    let mut analytic = analytic(&fx, variant)?;
    if config.corrupt {
        let g = &mut analytic.tensors.w_hidden[0];
        *g = *g * 1.01 + 1e-3;
    }
    let mut params = fx.params.clone();
    let mut worst = (0.0f64, 0usize, 0usize);
    let total = params.num_params();
    for flat in 0..total {
        let (block, offset) = params.tensors.locate(flat).expect("index within parameters");
        let (wg, wr) = variant.objective(block);
        let orig = params.tensors.get(block, offset);
        params.tensors.set(block, offset, orig + config.step);
        let (gp, rp) = losses(&fx, &params, variant)?;
        params.tensors.set(block, offset, orig - config.step);
        let (gm, rm) = losses(&fx, &params, variant)?;
        params.tensors.set(block, offset, orig);
        let numeric = (wg * (gp - gm) + wr * (rp - rm)) / (2.0 * config.step);
        let a = analytic.tensors.get(block, offset);
        let denom = a.abs().max(numeric.abs()).max(config.floor);
        let rel = (a - numeric).abs() / denom;
        if rel > worst.0 || rel.is_nan() {
            worst = (rel, block, offset);
        }
    }
    Ok(GradCheckReport {
        variant: variant.name(),
        seed: config.seed,
        num_params: total,
        max_rel_error: worst.0,
        worst_block: TENSOR_NAMES[worst.1],
        worst_offset: worst.2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_variant_passes_on_small_net() {
        for seed in 0..3 {
            let cfg = GradCheckConfig { seed, ..GradCheckConfig::default() };
            for v in LossVariant::standard() {
                let r = check(&cfg, v).unwrap();
                assert!(r.passes(1e-4), "{r:?}");
            }
        }
    }

    #[test]
    fn corrupted_gradient_fails() {
        let cfg = GradCheckConfig { corrupt: true, ..GradCheckConfig::default() };
        let r = check(&cfg, LossVariant::Masked).unwrap();
        assert!(!r.passes(1e-4));
    }

    #[test]
    fn minimal_dims_pass() {
        let cfg = GradCheckConfig {
            num_courses: 1,
            num_letters: 2,
            ..GradCheckConfig::default()
        };
        for v in LossVariant::standard() {
            assert!(check(&cfg, v).unwrap().passes(1e-4));
        }
    }
}
