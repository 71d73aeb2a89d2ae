//! Single-layer LSTM with a per-course grade head and an adversarial race
//! head.
//!
//! Gate pre-activations are `z = W_x x_t + W_h h_{t-1} + b`, stacked as
//! `[input, forget, cell, output]` blocks of `hidden` rows each. Every course
//! owns `m + 2` output rows; the first `m` are a softmax over letters, the
//! last two a softmax over Pass / No-Pass. The race head reads every valid
//! hidden state. Its gradient reaches the trunk through a reversal scaler of
//! `-alpha`.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoding::{EncodedSequence, Layout, PaddedBatch};
use crate::math::{axpy, dot, sigmoid, softmax_with_log, sqrt, tanh};
use crate::{Error, Result};

/// Default hidden width.
pub const DEFAULT_HIDDEN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub num_courses: usize,
    pub num_letters: usize,
    pub attr_width: usize,
    pub hidden: usize,
    pub race_classes: usize,
}

impl ModelDims {
    pub fn layout(&self) -> Layout {
        Layout {
            num_courses: self.num_courses,
            num_letters: self.num_letters,
            attr_width: self.attr_width,
        }
    }

    pub fn block_width(&self) -> usize {
        self.num_letters + 2
    }

    pub fn input_size(&self) -> usize {
        self.layout().input_width()
    }

    pub fn grade_output_size(&self) -> usize {
        self.block_width() * self.num_courses
    }

    /// Offset of the attribute slice inside `x_t`.
    pub fn attr_offset(&self) -> usize {
        self.grade_output_size() + self.num_courses
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("num_courses", self.num_courses),
            ("num_letters", self.num_letters),
            ("hidden", self.hidden),
            ("race_classes", self.race_classes),
        ] {
            if v == 0 {
                return Err(Error::Precondition(alloc::format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    /// Row-major shapes of the tensors, in [`TENSOR_NAMES`] order.
    pub fn shapes(&self) -> [[usize; 2]; 7] {
        let g = 4 * self.hidden;
        [
            [self.input_size(), g],
            [self.hidden, g],
            [1, g],
            [self.grade_output_size(), self.hidden],
            [1, self.grade_output_size()],
            [self.race_classes, self.hidden],
            [1, self.race_classes],
        ]
    }
}

/// Tensor names in storage order.
pub const TENSOR_NAMES: [&str; 7] = [
    "lstm.w_input",
    "lstm.w_hidden",
    "lstm.bias",
    "grade.weight",
    "grade.bias",
    "race.weight",
    "race.bias",
];

/// The seven parameter blocks. Used for both weights and their gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensors {
    pub w_input: Vec<f64>,
    pub w_hidden: Vec<f64>,
    pub bias: Vec<f64>,
    pub grade_w: Vec<f64>,
    pub grade_b: Vec<f64>,
    pub race_w: Vec<f64>,
    pub race_b: Vec<f64>,
}

impl Tensors {
    pub fn zeros(dims: &ModelDims) -> Self {
        let s = dims.shapes();
        let z = |i: usize| vec![0.0; s[i][0] * s[i][1]];
        Self {
            w_input: z(0),
            w_hidden: z(1),
            bias: z(2),
            grade_w: z(3),
            grade_b: z(4),
            race_w: z(5),
            race_b: z(6),
        }
    }

    pub fn blocks(&self) -> [&[f64]; 7] {
        [
            &self.w_input,
            &self.w_hidden,
            &self.bias,
            &self.grade_w,
            &self.grade_b,
            &self.race_w,
            &self.race_b,
        ]
    }

    pub fn blocks_mut(&mut self) -> [&mut Vec<f64>; 7] {
        [
            &mut self.w_input,
            &mut self.w_hidden,
            &mut self.bias,
            &mut self.grade_w,
            &mut self.grade_b,
            &mut self.race_w,
            &mut self.race_b,
        ]
    }

    pub fn len(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn add_assign(&mut self, other: &Tensors) {
        for (a, b) in self.blocks_mut().into_iter().zip(other.blocks()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, k: f64) {
        for a in self.blocks_mut() {
            for x in a.iter_mut() {
                *x *= k;
            }
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.blocks().into_iter().flat_map(|b| b.iter().copied())
    }

    /// Flat index → (block, offset).
    pub fn locate(&self, mut index: usize) -> Option<(usize, usize)> {
        for (b, block) in self.blocks().iter().enumerate() {
            if index < block.len() {
                return Some((b, index));
            }
            index -= block.len();
        }
        None
    }

    pub fn get(&self, block: usize, offset: usize) -> f64 {
        self.blocks()[block][offset]
    }

    pub fn set(&mut self, block: usize, offset: usize, value: f64) {
        self.blocks_mut()[block][offset] = value;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub dims: ModelDims,
    pub tensors: Tensors,
}

/// Gradients with the same layout as [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub tensors: Tensors,
}

impl ParamGrads {
    pub fn zeros(dims: &ModelDims) -> Self {
        Self {
            tensors: Tensors::zeros(dims),
        }
    }

    pub fn add_assign(&mut self, other: &ParamGrads) {
        self.tensors.add_assign(&other.tensors);
    }
}

impl ModelParams {
    /// Glorot-uniform weights, zero biases, forget-gate bias 1.
    pub fn init(dims: ModelDims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = Tensors::zeros(&dims);
        let h = dims.hidden;
        let gate_limit = sqrt(6.0 / (dims.input_size() + h + 4 * h) as f64);
        let grade_limit = sqrt(6.0 / (h + dims.grade_output_size()) as f64);
        let race_limit = sqrt(6.0 / (h + dims.race_classes) as f64);
        let mut fill = |v: &mut [f64], lim: f64| {
            for x in v.iter_mut() {
                *x = rng.random_range(-lim..lim);
            }
        };
        fill(&mut t.w_input, gate_limit);
        fill(&mut t.w_hidden, gate_limit);
        fill(&mut t.grade_w, grade_limit);
        fill(&mut t.race_w, race_limit);
        for b in &mut t.bias[h..2 * h] {
            *b = 1.0;
        }
        Ok(Self { dims, tensors: t })
    }

    /// Wraps raw tensors after checking shapes and finiteness.
    pub fn from_tensors(dims: ModelDims, blocks: Vec<Vec<f64>>) -> Result<Self> {
        dims.validate()?;
        if blocks.len() != 7 {
            return Err(Error::Dimension {
                context: "tensor count",
                expected: 7,
                found: blocks.len(),
            });
        }
        let mut t = Tensors::zeros(&dims);
        for ((dst, src), (name, shape)) in t
            .blocks_mut()
            .into_iter()
            .zip(blocks)
            .zip(TENSOR_NAMES.iter().zip(dims.shapes()))
        {
            if src.len() != shape[0] * shape[1] {
                return Err(Error::Dimension {
                    context: name,
                    expected: shape[0] * shape[1],
                    found: src.len(),
                });
            }
            if src.iter().any(|x| !x.is_finite()) {
                return Err(Error::Validation(alloc::format!("non-finite entry in {name}")));
            }
            *dst = src;
        }
        Ok(Self { dims, tensors: t })
    }

    pub fn num_params(&self) -> usize {
        self.tensors.len()
    }
}

/// How attributes are presented to the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForwardMode {
    #[default]
    Train,
    InferFull,
    /// Attribute slice zeroed.
    InferRmv,
}

/// Which course outputs to compute at each step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputScope {
    /// Courses with a graded target (the loss mask).
    Targets,
    /// Courses in `c_{t+1}`.
    NextCourses,
    All,
}

/// How the race head's gradient is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdversaryMode {
    /// Head minimizes race cross-entropy; the trunk receives the head's
    /// gradient scaled by `-alpha`.
    #[default]
    Reversal,
    /// One objective `grade_loss - alpha * race_loss` for every parameter.
    Joint,
}

/// Softmax outputs for one course.
#[derive(Debug, Clone, PartialEq)]
pub struct CourseOutput {
    pub course: u32,
    /// `m + 2` probabilities: letters, then Pass / No-Pass.
    pub probs: Vec<f64>,
    pub log_probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepCache {
    pub active: Vec<u32>,
    pub input_gate: Vec<f64>,
    pub forget_gate: Vec<f64>,
    pub cell_gate: Vec<f64>,
    pub output_gate: Vec<f64>,
    pub cell: Vec<f64>,
    pub tanh_cell: Vec<f64>,
    pub hidden: Vec<f64>,
    pub grade: Vec<CourseOutput>,
    pub race_probs: Vec<f64>,
    pub race_log_probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub steps: Vec<StepCache>,
    pub race_index: usize,
}

impl ForwardTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Output-side gradients fed to [`backward`]. Per step, `grade` is either
/// empty (all zero) or `outputs × (m + 2)` logit gradients aligned with the
/// trace's `grade` list; `race` is either empty or one entry per class.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OutputGrads {
    pub grade: Vec<Vec<f64>>,
    pub race: Vec<Vec<f64>>,
}

impl OutputGrads {
    pub fn zeros(len: usize) -> Self {
        Self {
            grade: vec![Vec::new(); len],
            race: vec![Vec::new(); len],
        }
    }

    /// Elementwise sum, shapes permitting.
    pub fn add(mut self, other: &OutputGrads) -> Self {
        let merge = |a: &mut Vec<Vec<f64>>, b: &Vec<Vec<f64>>| {
            for (x, y) in a.iter_mut().zip(b) {
                if x.is_empty() {
                    x.clone_from(y);
                } else if !y.is_empty() {
                    for (p, q) in x.iter_mut().zip(y) {
                        *p += q;
                    }
                }
            }
        };
        merge(&mut self.grade, &other.grade);
        merge(&mut self.race, &other.race);
        self
    }
}

fn check_sequence(dims: &ModelDims, seq: &EncodedSequence) -> Result<()> {
    if seq.race_index >= dims.race_classes {
        return Err(Error::Dimension {
            context: "race index",
            expected: dims.race_classes,
            found: seq.race_index,
        });
    }
    if let Some(&a) = seq.attrs.iter().find(|&&a| a as usize >= dims.attr_width) {
        return Err(Error::Dimension {
            context: "attribute slot",
            expected: dims.attr_width,
            found: a as usize,
        });
    }
    for s in &seq.steps {
        let bad_course = s
            .grades
            .iter()
            .chain(&s.targets)
            .map(|&(c, _)| c)
            .chain(s.next_courses.iter().copied())
            .find(|&c| c as usize >= dims.num_courses);
        if let Some(c) = bad_course {
            return Err(Error::Dimension {
                context: "course index",
                expected: dims.num_courses,
                found: c as usize,
            });
        }
        let bad_label = s
            .grades
            .iter()
            .chain(&s.targets)
            .map(|&(_, g)| g.category(dims.num_letters))
            .find(|&g| g >= dims.block_width());
        if let Some(g) = bad_label {
            return Err(Error::Dimension {
                context: "grade label",
                expected: dims.block_width(),
                found: g,
            });
        }
    }
    Ok(())
}

/// Runs the network over one sequence.
pub fn forward_sequence(
    params: &ModelParams,
    seq: &EncodedSequence,
    mode: ForwardMode,
    scope: OutputScope,
) -> Result<ForwardTrace> {
    let dims = &params.dims;
    check_sequence(dims, seq)?;
    let t = &params.tensors;
    let h = dims.hidden;
    let g4 = 4 * h;
    let bw = dims.block_width();
    let m = dims.num_letters;
    let n_grade = dims.grade_output_size();
    let attr_off = dims.attr_offset();

    let mut h_prev = vec![0.0; h];
    let mut c_prev = vec![0.0; h];
    let mut steps = Vec::with_capacity(seq.steps.len());
    for step in &seq.steps {
        let mut active: Vec<u32> = step
            .grades
            .iter()
            .map(|&(c, g)| (c as usize * bw + g.category(m)) as u32)
            .chain(step.next_courses.iter().map(|&c| (n_grade + c as usize) as u32))
            .collect();
        if mode != ForwardMode::InferRmv {
            active.extend(seq.attrs.iter().map(|&a| (attr_off + a as usize) as u32));
        }

        let mut z = t.bias.clone();
        for &j in &active {
            let j = j as usize;
            axpy(1.0, &t.w_input[j * g4..(j + 1) * g4], &mut z);
        }
        for (k, &hk) in h_prev.iter().enumerate() {
            if hk != 0.0 {
                axpy(hk, &t.w_hidden[k * g4..(k + 1) * g4], &mut z);
            }
        }
        let ig: Vec<f64> = z[..h].iter().map(|&v| sigmoid(v)).collect();
        let fg: Vec<f64> = z[h..2 * h].iter().map(|&v| sigmoid(v)).collect();
        let cg: Vec<f64> = z[2 * h..3 * h].iter().map(|&v| tanh(v)).collect();
        let og: Vec<f64> = z[3 * h..].iter().map(|&v| sigmoid(v)).collect();
        let cell: Vec<f64> = (0..h).map(|k| fg[k] * c_prev[k] + ig[k] * cg[k]).collect();
        let tanh_cell: Vec<f64> = cell.iter().map(|&v| tanh(v)).collect();
        let hidden: Vec<f64> = (0..h).map(|k| og[k] * tanh_cell[k]).collect();

        let courses: Vec<u32> = match scope {
            OutputScope::Targets => step.targets.iter().map(|&(c, _)| c).collect(),
            OutputScope::NextCourses => step.next_courses.clone(),
            OutputScope::All => (0..dims.num_courses as u32).collect(),
        };
        let grade = courses
            .into_iter()
            .map(|c| {
                let base = c as usize * bw;
                let mut probs: Vec<f64> = (0..bw)
                    .map(|l| {
                        let r = base + l;
                        dot(&t.grade_w[r * h..(r + 1) * h], &hidden) + t.grade_b[r]
                    })
                    .collect();
                let mut log_probs = vec![0.0; bw];
                let (pl, pp) = probs.split_at_mut(m);
                let (ll, lp) = log_probs.split_at_mut(m);
                softmax_with_log(pl, ll);
                softmax_with_log(pp, lp);
                CourseOutput {
                    course: c,
                    probs,
                    log_probs,
                }
            })
            .collect();

        let mut race_probs: Vec<f64> = (0..dims.race_classes)
            .map(|r| dot(&t.race_w[r * h..(r + 1) * h], &hidden) + t.race_b[r])
            .collect();
        let mut race_log_probs = vec![0.0; dims.race_classes];
        softmax_with_log(&mut race_probs, &mut race_log_probs);

        h_prev.clone_from(&hidden);
        c_prev.clone_from(&cell);
        steps.push(StepCache {
            active,
            input_gate: ig,
            forget_gate: fg,
            cell_gate: cg,
            output_gate: og,
            cell,
            tanh_cell,
            hidden,
            grade,
            race_probs,
            race_log_probs,
        });
    }
    Ok(ForwardTrace {
        steps,
        race_index: seq.race_index,
    })
}

/// Runs every row of a padded batch over its valid steps, computing outputs
/// for the target courses. Padding can neither influence earlier steps nor
/// carry a target, so it is skipped.
pub fn forward(params: &ModelParams, batch: &PaddedBatch, mode: ForwardMode) -> Result<Vec<ForwardTrace>> {
    batch
        .unpadded()
        .map(|row| forward_sequence(params, &row, mode, OutputScope::Targets))
        .collect()
}

/// Exact gradients for one sequence.
///
/// Grade-head and trunk gradients follow `grads.grade`. The race head's own
/// gradient follows `grads.race` (scaled by `-alpha` under
/// [`AdversaryMode::Joint`]); the trunk receives `-alpha` times the
/// race-head gradient with respect to the hidden state.
pub fn backward(
    params: &ModelParams,
    trace: &ForwardTrace,
    grads: &OutputGrads,
    alpha: f64,
    adversary: AdversaryMode,
) -> Result<ParamGrads> {
    let mut out = ParamGrads::zeros(&params.dims);
    backward_into(params, trace, grads, alpha, adversary, &mut out)?;
    check_finite(&out)?;
    Ok(out)
}

/// As [`backward`], accumulating into `out` without the finiteness check;
/// callers run [`check_finite`] once on the accumulated sum.
pub fn backward_into(
    params: &ModelParams,
    trace: &ForwardTrace,
    grads: &OutputGrads,
    alpha: f64,
    adversary: AdversaryMode,
    out: &mut ParamGrads,
) -> Result<()> {
    if !(alpha >= 0.0) {
        return Err(Error::Precondition("alpha must be non-negative".into()));
    }
    let len = trace.len();
    if grads.grade.len() != len || grads.race.len() != len {
        return Err(Error::Dimension {
            context: "output gradients",
            expected: len,
            found: grads.grade.len().min(grads.race.len()),
        });
    }
    let dims = &params.dims;
    let t = &params.tensors;
    let g = &mut out.tensors;
    let h = dims.hidden;
    let g4 = 4 * h;
    let bw = dims.block_width();
    let head_scale = match adversary {
        AdversaryMode::Reversal => 1.0,
        AdversaryMode::Joint => -alpha,
    };

    let zeros = vec![0.0; h];
    let mut dh_next = vec![0.0; h];
    let mut dc_next = vec![0.0; h];
    let mut dz = vec![0.0; g4];
    for step in (0..len).rev() {
        let cache = &trace.steps[step];
        let hidden = &cache.hidden;
        let mut dh = dh_next.clone();

        let gg = &grads.grade[step];
        if !gg.is_empty() {
            if gg.len() != cache.grade.len() * bw {
                return Err(Error::Dimension {
                    context: "grade output gradient",
                    expected: cache.grade.len() * bw,
                    found: gg.len(),
                });
            }
            for (o, co) in cache.grade.iter().enumerate() {
                let base = co.course as usize * bw;
                for l in 0..bw {
                    let d = gg[o * bw + l];
                    if d == 0.0 {
                        continue;
                    }
                    let r = base + l;
                    axpy(d, hidden, &mut g.grade_w[r * h..(r + 1) * h]);
                    g.grade_b[r] += d;
                    axpy(d, &t.grade_w[r * h..(r + 1) * h], &mut dh);
                }
            }
        }

        let rg = &grads.race[step];
        if !rg.is_empty() {
            if rg.len() != dims.race_classes {
                return Err(Error::Dimension {
                    context: "race output gradient",
                    expected: dims.race_classes,
                    found: rg.len(),
                });
            }
            for (r, &d) in rg.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let hd = head_scale * d;
                axpy(hd, hidden, &mut g.race_w[r * h..(r + 1) * h]);
                g.race_b[r] += hd;
                if alpha != 0.0 {
                    axpy(-alpha * d, &t.race_w[r * h..(r + 1) * h], &mut dh);
                }
            }
        }

        let c_prev = if step > 0 { &trace.steps[step - 1].cell } else { &zeros };
        let h_prev = if step > 0 { &trace.steps[step - 1].hidden } else { &zeros };
        for k in 0..h {
            let (i, f, cg, o) = (
                cache.input_gate[k],
                cache.forget_gate[k],
                cache.cell_gate[k],
                cache.output_gate[k],
            );
            let tc = cache.tanh_cell[k];
            let d_o = dh[k] * tc;
            let dc = dc_next[k] + dh[k] * o * (1.0 - tc * tc);
            dz[k] = dc * cg * i * (1.0 - i);
            dz[h + k] = dc * c_prev[k] * f * (1.0 - f);
            dz[2 * h + k] = dc * i * (1.0 - cg * cg);
            dz[3 * h + k] = d_o * o * (1.0 - o);
            dc_next[k] = dc * f;
        }
        for &j in &cache.active {
            let j = j as usize;
            axpy(1.0, &dz, &mut g.w_input[j * g4..(j + 1) * g4]);
        }
        axpy(1.0, &dz, &mut g.bias);
        for k in 0..h {
            let hk = h_prev[k];
            let row = k * g4..(k + 1) * g4;
            if hk != 0.0 {
                axpy(hk, &dz, &mut g.w_hidden[row.clone()]);
            }
            dh_next[k] = dot(&t.w_hidden[row], &dz);
        }
    }

    Ok(())
}

/// Errors with the first parameter block holding a non-finite gradient.
pub fn check_finite(grads: &ParamGrads) -> Result<()> {
    for (name, block) in TENSOR_NAMES.iter().zip(grads.tensors.blocks()) {
        if block.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteGradient(name));
        }
    }
    Ok(())
}

/// Predicted distribution for one course.
#[derive(Debug, Clone, PartialEq)]
pub struct GradeDistribution {
    pub letters: Vec<f64>,
    pub pass_no_pass: [f64; 2],
}

impl GradeDistribution {
    pub fn from_probs(probs: &[f64], m: usize) -> Self {
        Self {
            letters: probs[..m].to_vec(),
            pass_no_pass: [probs[m], probs[m + 1]],
        }
    }

    /// Most probable letter; ties resolve to the better grade.
    pub fn argmax_letter(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.letters.iter().enumerate() {
            if p > self.letters[best] {
                best = i;
            }
        }
        best
    }
}

/// Distributions for `courses` in the term predicted by the last step of
/// `history`. The last step's `c_{t+1}` is replaced by `courses`.
pub fn predict_term(
    params: &ModelParams,
    history: &EncodedSequence,
    courses: &[u32],
    mode: ForwardMode,
) -> Result<BTreeMap<u32, GradeDistribution>> {
    if courses.is_empty() {
        return Ok(BTreeMap::new());
    }
    if let Some(&c) = courses.iter().find(|&&c| c as usize >= params.dims.num_courses) {
        return Err(Error::UnknownCourse(alloc::format!("index {c}")));
    }
    let mut seq = history.clone();
    let last = seq
        .steps
        .last_mut()
        .ok_or_else(|| Error::Precondition("history has no steps".into()))?;
    last.next_courses = courses.to_vec();
    last.targets.clear();
    let trace = forward_sequence(params, &seq, mode, OutputScope::NextCourses)?;
    let m = params.dims.num_letters;
    Ok(trace.steps.last().map_or_else(BTreeMap::new, |s| {
        s.grade
            .iter()
            .map(|o| (o.course, GradeDistribution::from_probs(&o.probs, m)))
            .collect()
    }))
}
