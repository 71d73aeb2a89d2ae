//! Enrollment and demographic records, dataset assembly and the
//! chronological train / validation / test split.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::grade::{GradeLabel, LetterScale};
use crate::{Error, Result};

/// Race categories in reporting order. The last entry is retained for
/// training but excluded from group-fairness summaries by default.
pub const DEFAULT_GROUPS: [&str; 8] = [
    "White",
    "Asian",
    "International",
    "Chicano/Latino",
    "African American",
    "Native American",
    "Pacific Islander",
    "Decline-to-State",
];

/// Group excluded from fairness tables unless explicitly included.
pub const DECLINE_TO_STATE: &str = "Decline-to-State";

pub fn default_group_list() -> Vec<String> {
    DEFAULT_GROUPS.iter().map(|g| g.to_string()).collect()
}

/// Courses with fewer total enrollments than this are dropped.
pub const DEFAULT_MIN_COURSE_ENROLLMENTS: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Enrollment {
    pub student_id: String,
    pub term: u32,
    pub course_id: String,
    pub grade: GradeLabel,
}

impl Enrollment {
    /// Builds one record from raw CSV fields. `line` is the 1-based line
    /// number in the source file, used in error messages.
    pub fn from_fields(
        student_id: &str,
        term: &str,
        course_id: &str,
        grade: &str,
        line: usize,
        scale: &LetterScale,
    ) -> Result<Self> {
        let term = term.trim().parse::<u32>().map_err(|_| Error::Parse {
            line,
            message: format!("invalid term '{}'", term.trim()),
        })?;
        let student_id = student_id.trim();
        let course_id = course_id.trim();
        if student_id.is_empty() || course_id.is_empty() {
            return Err(Error::Parse {
                line,
                message: "empty student_id or course_id".into(),
            });
        }
        let grade = scale.parse(grade).ok_or_else(|| Error::UnknownGrade {
            token: grade.trim().to_string(),
            line,
        })?;
        Ok(Self {
            student_id: student_id.to_string(),
            term,
            course_id: course_id.to_string(),
            grade,
        })
    }
}

/// Rejects repeated `(student_id, term, course_id)` keys.
pub fn check_unique(enrollments: &[Enrollment]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for (i, e) in enrollments.iter().enumerate() {
        if !seen.insert((e.student_id.as_str(), e.term, e.course_id.as_str())) {
            return Err(Error::Validation(format!(
                "duplicate enrollment ({}, {}, {}) at record {}",
                e.student_id,
                e.term,
                e.course_id,
                i + 1
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudentDemographics {
    pub student_id: String,
    pub race: String,
    pub gender: String,
    pub income_bracket: String,
    pub entry_status: String,
    pub majors: Vec<String>,
}

/// Grades a student received in one term, as `(catalog index, grade)`
/// sorted by catalog index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TermRecord {
    pub term: u32,
    pub courses: Vec<(u32, GradeLabel)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Student {
    pub demographics: StudentDemographics,
    pub race_index: usize,
    /// Enrolled terms in ascending order; terms without enrollments are absent.
    pub terms: Vec<TermRecord>,
}

impl Student {
    pub fn id(&self) -> &str {
        &self.demographics.student_id
    }
}

/// One retained enrollment in ingestion order, with indices resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnrollmentRow {
    pub student: u32,
    pub term: u32,
    pub course: u32,
    pub grade: GradeLabel,
}

/// Sorted vocabularies of the non-race attributes, fixing the layout of the
/// `multi` feature vector.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeVocab {
    pub genders: Vec<String>,
    pub income_brackets: Vec<String>,
    pub entry_statuses: Vec<String>,
    pub majors: Vec<String>,
}

impl AttributeVocab {
    fn from_students<'a>(demo: impl Iterator<Item = &'a StudentDemographics>) -> Self {
        let mut g = BTreeSet::new();
        let mut inc = BTreeSet::new();
        let mut ent = BTreeSet::new();
        let mut maj = BTreeSet::new();
        for d in demo {
            g.insert(d.gender.clone());
            inc.insert(d.income_bracket.clone());
            ent.insert(d.entry_status.clone());
            maj.extend(d.majors.iter().cloned());
        }
        Self {
            genders: g.into_iter().collect(),
            income_brackets: inc.into_iter().collect(),
            entry_statuses: ent.into_iter().collect(),
            majors: maj.into_iter().collect(),
        }
    }

    pub fn width(&self) -> usize {
        self.genders.len() + self.income_brackets.len() + self.entry_statuses.len() + self.majors.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CohortDataset {
    pub catalog: Vec<String>,
    pub students: Vec<Student>,
    pub term_count: u32,
    pub group_list: Vec<String>,
    pub letter_scale: LetterScale,
    pub vocab: AttributeVocab,
    /// Retained enrollments in ingestion order.
    pub rows: Vec<EnrollmentRow>,
}

/// Settings shared by ingestion and generation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSchema {
    pub group_list: Vec<String>,
    pub letter_scale: LetterScale,
}

impl Default for DatasetSchema {
    fn default() -> Self {
        Self {
            group_list: default_group_list(),
            letter_scale: LetterScale::default(),
        }
    }
}

/// Assembles a dataset, dropping courses with fewer than
/// `min_course_enrollments` total enrollments.
///
/// The catalog and the student list are ordered by first appearance in
/// `enrollments`. Demographics for students without retained enrollments are
/// ignored.
pub fn build_dataset(
    enrollments: &[Enrollment],
    demographics: &[StudentDemographics],
    min_course_enrollments: usize,
    schema: &DatasetSchema,
) -> Result<CohortDataset> {
    if enrollments.is_empty() {
        return Err(Error::EmptyDataset);
    }
    check_unique(enrollments)?;
    if schema.group_list.is_empty() {
        return Err(Error::Config("group list must not be empty".into()));
    }
    let m = schema.letter_scale.len();
    for e in enrollments {
        if let GradeLabel::Letter(i) = e.grade {
            if i as usize >= m {
                return Err(Error::Validation(format!(
                    "letter index {i} outside scale of {m}"
                )));
            }
        }
    }

    let mut demo_by_id: BTreeMap<&str, &StudentDemographics> = BTreeMap::new();
    for d in demographics {
        if demo_by_id.insert(d.student_id.as_str(), d).is_some() {
            return Err(Error::Validation(format!(
                "duplicate demographics record for '{}'",
                d.student_id
            )));
        }
    }
    for e in enrollments {
        if !demo_by_id.contains_key(e.student_id.as_str()) {
            return Err(Error::Validation(format!(
                "student '{}' has enrollments but no demographics record",
                e.student_id
            )));
        }
    }

    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for e in enrollments {
        *counts.entry(e.course_id.as_str()).or_default() += 1;
    }
    let kept: Vec<&Enrollment> = enrollments
        .iter()
        .filter(|e| counts[e.course_id.as_str()] >= min_course_enrollments)
        .collect();
    if kept.is_empty() {
        return Err(Error::EmptyDataset);
    }

    let mut catalog = Vec::new();
    let mut course_index: BTreeMap<&str, u32> = BTreeMap::new();
    let mut student_order: Vec<&str> = Vec::new();
    let mut student_index: BTreeMap<&str, u32> = BTreeMap::new();
    let mut rows = Vec::with_capacity(kept.len());
    let mut max_term = 0;
    for e in &kept {
        let c = *course_index.entry(e.course_id.as_str()).or_insert_with(|| {
            catalog.push(e.course_id.clone());
            (catalog.len() - 1) as u32
        });
        let s = *student_index.entry(e.student_id.as_str()).or_insert_with(|| {
            student_order.push(e.student_id.as_str());
            (student_order.len() - 1) as u32
        });
        max_term = max_term.max(e.term);
        rows.push(EnrollmentRow {
            student: s,
            term: e.term,
            course: c,
            grade: e.grade,
        });
    }

    let mut per_student: Vec<BTreeMap<u32, Vec<(u32, GradeLabel)>>> =
        alloc::vec![BTreeMap::new(); student_order.len()];
    for r in &rows {
        per_student[r.student as usize]
            .entry(r.term)
            .or_default()
            .push((r.course, r.grade));
    }

    let mut students = Vec::with_capacity(student_order.len());
    for (id, terms) in student_order.iter().zip(per_student) {
        let demo = demo_by_id[id];
        let race_index = schema
            .group_list
            .iter()
            .position(|g| *g == demo.race)
            .ok_or_else(|| {
                Error::Validation(format!(
                    "student '{}' has race '{}' outside the group list",
                    demo.student_id, demo.race
                ))
            })?;
        let terms = terms
            .into_iter()
            .map(|(term, mut courses)| {
                courses.sort_unstable_by_key(|c| c.0);
                TermRecord { term, courses }
            })
            .collect();
        students.push(Student {
            demographics: demo.clone(),
            race_index,
            terms,
        });
    }

    let vocab = AttributeVocab::from_students(students.iter().map(|s| &s.demographics));
    Ok(CohortDataset {
        catalog,
        students,
        term_count: max_term + 1,
        group_list: schema.group_list.clone(),
        letter_scale: schema.letter_scale.clone(),
        vocab,
        rows,
    })
}

impl CohortDataset {
    pub fn num_courses(&self) -> usize {
        self.catalog.len()
    }

    pub fn course_index(&self, course_id: &str) -> Option<usize> {
        self.catalog.iter().position(|c| c == course_id)
    }

    pub fn num_enrollments(&self) -> usize {
        self.rows.len()
    }

    /// Enrollments in ingestion order, ids restored.
    pub fn enrollments(&self) -> impl Iterator<Item = Enrollment> + '_ {
        self.rows.iter().map(|r| Enrollment {
            student_id: self.students[r.student as usize].id().to_string(),
            term: r.term,
            course_id: self.catalog[r.course as usize].clone(),
            grade: r.grade,
        })
    }

    pub fn demographics(&self) -> impl Iterator<Item = &StudentDemographics> + '_ {
        self.students.iter().map(|s| &s.demographics)
    }

    pub fn schema(&self) -> DatasetSchema {
        DatasetSchema {
            group_list: self.group_list.clone(),
            letter_scale: self.letter_scale.clone(),
        }
    }
}

/// Disjoint term sets, chronologically ordered.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_terms: Vec<u32>,
    pub val_terms: Vec<u32>,
    pub test_terms: Vec<u32>,
}

impl SplitSpec {
    pub fn last_train_term(&self) -> u32 {
        *self.train_terms.last().expect("train terms are non-empty")
    }

    pub fn is_train(&self, term: u32) -> bool {
        self.train_terms.binary_search(&term).is_ok()
    }

    pub fn is_val(&self, term: u32) -> bool {
        self.val_terms.binary_search(&term).is_ok()
    }

    pub fn is_test(&self, term: u32) -> bool {
        self.test_terms.binary_search(&term).is_ok()
    }
}

/// Default 13:1:1 split ratios.
pub const DEFAULT_SPLIT_RATIOS: (u32, u32, u32) = (13, 1, 1);

/// Assigns trailing terms to test and validation. Each of val and test gets
/// `floor(term_count * share)` terms, at least one; train keeps the rest.
pub fn chronological_split(dataset: &CohortDataset, ratios: (u32, u32, u32)) -> Result<SplitSpec> {
    split_terms(dataset.term_count, ratios)
}

pub fn split_terms(term_count: u32, ratios: (u32, u32, u32)) -> Result<SplitSpec> {
    if term_count < 3 {
        return Err(Error::Precondition(format!(
            "chronological split needs at least 3 terms, found {term_count}"
        )));
    }
    let (tr, va, te) = ratios;
    let total = tr + va + te;
    if tr == 0 || va == 0 || te == 0 {
        return Err(Error::Config("split ratios must all be positive".into()));
    }
    let share = |r: u32| ((term_count as u64 * r as u64) / total as u64).max(1) as u32;
    let n_test = share(te);
    let n_val = share(va);
    if n_test + n_val >= term_count {
        return Err(Error::Precondition(format!(
            "split ratios leave no training terms for {term_count} terms"
        )));
    }
    let n_train = term_count - n_val - n_test;
    Ok(SplitSpec {
        train_terms: (0..n_train).collect(),
        val_terms: (n_train..n_train + n_val).collect(),
        test_terms: (n_train + n_val..term_count).collect(),
    })
}
