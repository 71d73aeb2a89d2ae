//! Multi-hot step encoding of student histories.
//!
//! A step that predicts term `t + 1` carries the grades of term `t`
//! (`g_t`, one block of `m + 2` slots per course), the course enrollments of
//! term `t + 1` (`c_{t+1}`), the student's static attribute vector `f`, and
//! the graded targets of term `t + 1`. Storage is sparse; the `*_dense`
//! accessors expose the dense vectors the network consumes.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::cohort::{AttributeVocab, CohortDataset, Student};
use crate::grade::GradeLabel;
use crate::{Error, Result};

/// Which static attributes are appended to every input step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    #[default]
    None,
    Race,
    Multi,
}

impl FeatureMode {
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureMode::None => "none",
            FeatureMode::Race => "race",
            FeatureMode::Multi => "multi",
        }
    }

    /// Width of `f` for a given group count and vocabulary.
    pub fn width(self, num_groups: usize, vocab: &AttributeVocab) -> usize {
        match self {
            FeatureMode::None => 0,
            FeatureMode::Race => num_groups,
            FeatureMode::Multi => num_groups + vocab.width(),
        }
    }
}

/// Sizes needed to lay out dense step vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub num_courses: usize,
    pub num_letters: usize,
    pub attr_width: usize,
}

impl Layout {
    pub fn block_width(&self) -> usize {
        self.num_letters + 2
    }

    pub fn grade_width(&self) -> usize {
        self.block_width() * self.num_courses
    }

    /// Full input width: `(m + 2) n + n + |f|`.
    pub fn input_width(&self) -> usize {
        self.grade_width() + self.num_courses + self.attr_width
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EncodedStep {
    /// Term whose grades form `g_t`.
    pub input_term: u32,
    /// Term being predicted.
    pub target_term: u32,
    /// Nonzero slots of `g_t` as `(course, label)`.
    pub grades: Vec<(u32, GradeLabel)>,
    /// Nonzero slots of `c_{t+1}`.
    pub next_courses: Vec<u32>,
    /// Graded targets; their courses are the mask.
    pub targets: Vec<(u32, GradeLabel)>,
}

impl EncodedStep {
    /// A padding step: no inputs, no targets.
    pub fn empty(term: u32) -> Self {
        Self {
            input_term: term,
            target_term: term + 1,
            ..Self::default()
        }
    }

    pub fn grade_vec_dense(&self, layout: &Layout) -> Vec<f64> {
        let mut v = vec![0.0; layout.grade_width()];
        for &(c, g) in &self.grades {
            v[c as usize * layout.block_width() + g.category(layout.num_letters)] = 1.0;
        }
        v
    }

    pub fn course_vec_dense(&self, layout: &Layout) -> Vec<f64> {
        let mut v = vec![0.0; layout.num_courses];
        for &c in &self.next_courses {
            v[c as usize] = 1.0;
        }
        v
    }

    pub fn target_vec_dense(&self, layout: &Layout) -> Vec<f64> {
        let mut v = vec![0.0; layout.grade_width()];
        for &(c, g) in &self.targets {
            v[c as usize * layout.block_width() + g.category(layout.num_letters)] = 1.0;
        }
        v
    }

    pub fn mask_dense(&self, layout: &Layout) -> Vec<f64> {
        let mut v = vec![0.0; layout.num_courses];
        for &(c, _) in &self.targets {
            v[c as usize] = 1.0;
        }
        v
    }

    pub fn has_targets(&self) -> bool {
        !self.targets.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedSequence {
    pub student_id: String,
    pub race_index: usize,
    /// Nonzero slots of the attribute vector `f`.
    pub attrs: Vec<u32>,
    pub steps: Vec<EncodedStep>,
}

impl EncodedSequence {
    pub fn attr_vec_dense(&self, layout: &Layout) -> Vec<f64> {
        let mut v = vec![0.0; layout.attr_width];
        for &a in &self.attrs {
            v[a as usize] = 1.0;
        }
        v
    }

    /// Dense input `x_t = g_t ++ c_{t+1} ++ f` for one step.
    pub fn input_dense(&self, step: usize, layout: &Layout) -> Vec<f64> {
        let s = &self.steps[step];
        let mut x = s.grade_vec_dense(layout);
        x.extend(s.course_vec_dense(layout));
        x.extend(self.attr_vec_dense(layout));
        x
    }

    pub fn num_targets(&self) -> usize {
        self.steps.iter().map(|s| s.targets.len()).sum()
    }

    /// Keeps targets only on steps whose predicted term satisfies `keep`, and
    /// drops steps after the last remaining target. Returns `None` when no
    /// target survives.
    pub fn restrict_targets(&self, keep: impl Fn(u32) -> bool) -> Option<EncodedSequence> {
        let mut out = self.clone();
        for s in &mut out.steps {
            if !keep(s.target_term) {
                s.targets.clear();
            }
        }
        let last = out.steps.iter().rposition(EncodedStep::has_targets)?;
        out.steps.truncate(last + 1);
        Some(out)
    }

    /// Truncates to the steps predicting terms up to and including `term`.
    pub fn history_until(&self, term: u32) -> EncodedSequence {
        let mut out = self.clone();
        out.steps.retain(|s| s.target_term <= term);
        out
    }
}

/// Attribute slots for one student under `mode`, in the fixed order
/// race ++ gender ++ income ++ entry status ++ majors.
pub fn attribute_slots(
    student: &Student,
    num_groups: usize,
    vocab: &AttributeVocab,
    mode: FeatureMode,
) -> Vec<u32> {
    let mut out = Vec::new();
    if mode == FeatureMode::None {
        return out;
    }
    out.push(student.race_index as u32);
    if mode == FeatureMode::Race {
        return out;
    }
    let d = &student.demographics;
    let mut offset = num_groups;
    let push_one = |list: &[String], value: &str, out: &mut Vec<u32>, offset: &mut usize| {
        if let Some(i) = list.iter().position(|v| v == value) {
            out.push((*offset + i) as u32);
        }
        *offset += list.len();
    };
    push_one(&vocab.genders, &d.gender, &mut out, &mut offset);
    push_one(&vocab.income_brackets, &d.income_bracket, &mut out, &mut offset);
    push_one(&vocab.entry_statuses, &d.entry_status, &mut out, &mut offset);
    let mut majors: Vec<u32> = d
        .majors
        .iter()
        .filter_map(|m| vocab.majors.iter().position(|v| v == m))
        .map(|i| (offset + i) as u32)
        .collect();
    majors.sort_unstable();
    majors.dedup();
    out.extend(majors);
    out
}

/// Encodes one student's full history.
///
/// Steps cover every term from the first enrolled term up to the one before
/// the last enrolled term; empty semesters yield all-zero grades and no
/// targets. A student with a single enrolled term gets one input-only step.
pub fn encode_student(
    student: &Student,
    dataset: &CohortDataset,
    mode: FeatureMode,
) -> Result<EncodedSequence> {
    encode_with(student, dataset.num_courses(), dataset.group_list.len(), &dataset.vocab, mode)
}

pub(crate) fn encode_with(
    student: &Student,
    num_courses: usize,
    num_groups: usize,
    vocab: &AttributeVocab,
    mode: FeatureMode,
) -> Result<EncodedSequence> {
    let first = student
        .terms
        .first()
        .ok_or_else(|| Error::Internal(alloc::format!("student '{}' has no terms", student.id())))?;
    for t in &student.terms {
        if let Some(&(c, _)) = t.courses.iter().find(|(c, _)| *c as usize >= num_courses) {
            return Err(Error::Internal(alloc::format!(
                "course index {c} outside catalog of {num_courses}"
            )));
        }
    }
    let last_term = student.terms.last().map(|t| t.term).unwrap_or(first.term);
    let at = |term: u32| student.terms.iter().find(|t| t.term == term);
    let end = last_term.max(first.term + 1);
    let steps = (first.term..end)
        .map(|t| {
            let grades = at(t).map(|r| r.courses.clone()).unwrap_or_default();
            let targets = at(t + 1).map(|r| r.courses.clone()).unwrap_or_default();
            EncodedStep {
                input_term: t,
                target_term: t + 1,
                grades,
                next_courses: targets.iter().map(|&(c, _)| c).collect(),
                targets,
            }
        })
        .collect();
    Ok(EncodedSequence {
        student_id: student.id().into(),
        race_index: student.race_index,
        attrs: attribute_slots(student, num_groups, vocab, mode),
        steps,
    })
}

/// Sequences padded to a common length with a per-row count of valid steps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PaddedBatch {
    pub rows: Vec<EncodedSequence>,
    pub valid_len: Vec<usize>,
    pub padded_len: usize,
}

impl PaddedBatch {
    pub fn is_valid(&self, row: usize, step: usize) -> bool {
        step < self.valid_len[row]
    }

    /// Rows with padding stripped.
    pub fn unpadded(&self) -> impl Iterator<Item = EncodedSequence> + '_ {
        self.rows.iter().zip(&self.valid_len).map(|(r, &n)| {
            let mut r = r.clone();
            r.steps.truncate(n);
            r
        })
    }
}

/// Chunks `sequences` in order into batches of at most `max_batch` rows,
/// each padded with empty steps to its longest row.
pub fn batch(sequences: &[EncodedSequence], max_batch: usize) -> Result<Vec<PaddedBatch>> {
    if max_batch == 0 {
        return Err(Error::Precondition("max_batch must be at least 1".into()));
    }
    Ok(sequences
        .chunks(max_batch)
        .map(|chunk| {
            let padded_len = chunk.iter().map(|s| s.steps.len()).max().unwrap_or(0);
            let valid_len = chunk.iter().map(|s| s.steps.len()).collect();
            let rows = chunk
                .iter()
                .map(|s| {
                    let mut s = s.clone();
                    let mut next = s.steps.last().map(|st| st.target_term).unwrap_or(0);
                    while s.steps.len() < padded_len {
                        s.steps.push(EncodedStep::empty(next));
                        next += 1;
                    }
                    s
                })
                .collect();
            PaddedBatch {
                rows,
                valid_len,
                padded_len,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{build_dataset, DatasetSchema, Enrollment, StudentDemographics};
    use alloc::format;
    use alloc::string::ToString;

    fn dataset(rows: &[(&str, u32, &str, &str)], n_pad: usize) -> CohortDataset {
        let scale = crate::grade::LetterScale::default();
        let mut e: Vec<Enrollment> = rows
            .iter()
            .enumerate()
            .map(|(i, (s, t, c, g))| Enrollment::from_fields(s, &t.to_string(), c, g, i + 2, &scale).unwrap())
            .collect();
        // filler student so the catalog has c0..c{n_pad-1}
        for i in 0..n_pad {
            e.insert(i, Enrollment::from_fields("pad", "0", &format!("c{i}"), "F", 0, &scale).unwrap());
        }
        let mut ids: Vec<&str> = e.iter().map(|x| x.student_id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        let demo: Vec<StudentDemographics> = ids
            .iter()
            .map(|id| StudentDemographics {
                student_id: id.to_string(),
                race: "International".into(),
                gender: "M".into(),
                income_bracket: "low".into(),
                entry_status: "transfer".into(),
                majors: alloc::vec!["Math".into(), "CS".into()],
            })
            .collect();
        build_dataset(&e, &demo, 0, &DatasetSchema::default()).unwrap()
    }

    #[test]
    fn single_step_example() {
        let ds = dataset(&[("s1", 0, "c3", "A"), ("s1", 1, "c7", "P")], 10);
        let s = ds.students.iter().find(|s| s.id() == "s1").unwrap();
        let seq = encode_student(s, &ds, FeatureMode::None).unwrap();
        let layout = Layout { num_courses: 10, num_letters: 13, attr_width: 0 };
        assert_eq!(seq.steps.len(), 1);
        let g = seq.steps[0].grade_vec_dense(&layout);
        assert_eq!(g.len(), 150);
        assert_eq!(g.iter().sum::<f64>(), 1.0);
        assert_eq!(g[3 * 15 + 1], 1.0);
        let c = seq.steps[0].course_vec_dense(&layout);
        assert_eq!(c.iter().sum::<f64>(), 1.0);
        assert_eq!(c[7], 1.0);
        let tgt = seq.steps[0].target_vec_dense(&layout);
        assert_eq!(tgt[7 * 15 + 13], 1.0);
        assert_eq!(tgt.iter().sum::<f64>(), 1.0);
        let mask = seq.steps[0].mask_dense(&layout);
        let mut e7 = vec![0.0; 10];
        e7[7] = 1.0;
        assert_eq!(mask, e7);
        assert!(seq.attr_vec_dense(&layout).is_empty());
    }

    #[test]
    fn race_feature_is_one_hot() {
        let ds = dataset(&[("s1", 0, "c3", "A"), ("s1", 1, "c7", "P")], 10);
        let s = ds.students.iter().find(|s| s.id() == "s1").unwrap();
        let seq = encode_student(s, &ds, FeatureMode::Race).unwrap();
        let layout = Layout { num_courses: 10, num_letters: 13, attr_width: 8 };
        let mut e2 = vec![0.0; 8];
        e2[2] = 1.0;
        assert_eq!(seq.attr_vec_dense(&layout), e2);
    }

    #[test]
    fn multi_feature_order() {
        let ds = dataset(&[("s1", 0, "c3", "A"), ("s1", 1, "c7", "P")], 10);
        let s = ds.students.iter().find(|s| s.id() == "s1").unwrap();
        let seq = encode_student(s, &ds, FeatureMode::Multi).unwrap();
        // groups 8 | gender [M] | income [low] | entry [transfer] | majors [CS, Math]
        assert_eq!(seq.attrs, [2, 8, 9, 10, 11, 12]);
        assert_eq!(FeatureMode::Multi.width(8, &ds.vocab), 13);
    }

    #[test]
    fn gap_semester_is_masked() {
        let ds = dataset(&[("s1", 0, "c1", "B"), ("s1", 2, "c2", "A")], 3);
        let s = ds.students.iter().find(|s| s.id() == "s1").unwrap();
        let seq = encode_student(s, &ds, FeatureMode::None).unwrap();
        assert_eq!(seq.steps.len(), 2);
        assert_eq!(seq.steps[0].target_term, 1);
        assert!(seq.steps[0].targets.is_empty());
        assert!(seq.steps[1].grades.is_empty());
        assert_eq!(seq.steps[1].targets.len(), 1);
    }

    #[test]
    fn single_semester_is_input_only() {
        let ds = dataset(&[("s1", 4, "c1", "B")], 2);
        let s = ds.students.iter().find(|s| s.id() == "s1").unwrap();
        let seq = encode_student(s, &ds, FeatureMode::None).unwrap();
        assert_eq!(seq.steps.len(), 1);
        assert_eq!(seq.num_targets(), 0);
        assert_eq!(seq.restrict_targets(|_| true), None);
    }

    fn seq_of_len(n: usize) -> EncodedSequence {
        EncodedSequence {
            student_id: format!("s{n}"),
            race_index: 0,
            attrs: Vec::new(),
            steps: (0..n as u32)
                .map(|t| EncodedStep {
                    input_term: t,
                    target_term: t + 1,
                    grades: alloc::vec![(0, GradeLabel::Pass)],
                    next_courses: alloc::vec![0],
                    targets: alloc::vec![(0, GradeLabel::Pass)],
                })
                .collect(),
        }
    }

    #[test]
    fn batch_padding_arithmetic() {
        let seqs = [seq_of_len(2), seq_of_len(2), seq_of_len(5)];
        let b = batch(&seqs, 2).unwrap();
        assert_eq!(b.len(), 2);
        assert_eq!((b[0].rows.len(), b[0].padded_len), (2, 2));
        assert_eq!((b[1].rows.len(), b[1].padded_len), (1, 5));
        let single = batch(&seqs[2..], 4).unwrap();
        assert_eq!(single[0].rows, [seqs[2].clone()]);
        assert!(batch(&[], 3).unwrap().is_empty());
        assert!(batch(&seqs, 0).is_err());
    }

    #[test]
    fn padding_steps_carry_nothing() {
        let seqs = [seq_of_len(1), seq_of_len(4)];
        let b = batch(&seqs, 2).unwrap();
        let row = &b[0].rows[0];
        assert_eq!(row.steps.len(), 4);
        for s in &row.steps[1..] {
            assert!(s.grades.is_empty() && s.next_courses.is_empty() && s.targets.is_empty());
        }
        assert!(!b[0].is_valid(0, 1));
        let back: Vec<_> = b[0].unpadded().collect();
        assert_eq!(back, seqs);
    }

    proptest::proptest! {
        #[test]
        fn batching_preserves_sequences(lens in proptest::collection::vec(1usize..6, 0..12), mb in 1usize..5) {
            let seqs: Vec<_> = lens.iter().map(|&n| seq_of_len(n)).collect();
            let out: Vec<_> = batch(&seqs, mb).unwrap().iter().flat_map(|b| b.unpadded().collect::<Vec<_>>()).collect();
            proptest::prop_assert_eq!(out, seqs);
        }
    }
}
