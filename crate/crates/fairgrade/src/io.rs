//! CSV files for enrollments and demographics.
//!
//! `enrollments.csv`: `student_id,term,course_id,grade`
//! `demographics.csv`: `student_id,race,gender,income_bracket,entry_status,majors`
//! with majors separated by `;`.

use std::fs;
use std::path::{Path, PathBuf};

use fairgrade_core::cohort::{build_dataset, CohortDataset, DatasetSchema, Enrollment, StudentDemographics};
use fairgrade_core::grade::LetterScale;

use crate::error::{Error, Result};

pub const ENROLLMENTS_FILE: &str = "enrollments.csv";
pub const DEMOGRAPHICS_FILE: &str = "demographics.csv";

const ENROLLMENT_HEADER: [&str; 4] = ["student_id", "term", "course_id", "grade"];
const DEMOGRAPHIC_HEADER: [&str; 6] = ["student_id", "race", "gender", "income_bracket", "entry_status", "majors"];

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    Error::Csv {
        path: path.to_path_buf(),
        line,
        message: e.to_string(),
    }
}

fn reader(path: &Path, header: &[&str]) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let found = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    if found.iter().ne(header.iter().copied()) {
        return Err(Error::Csv {
            path: path.to_path_buf(),
            line: 1,
            message: format!("expected header '{}', found '{}'", header.join(","), found.iter().collect::<Vec<_>>().join(",")),
        });
    }
    Ok(rdr)
}

pub fn read_enrollments(path: &Path, scale: &LetterScale) -> Result<Vec<Enrollment>> {
    let mut rdr = reader(path, &ENROLLMENT_HEADER)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let e = Enrollment::from_fields(&rec[0], &rec[1], &rec[2], &rec[3], line as usize, scale).map_err(|e| {
            Error::Csv {
                path: path.to_path_buf(),
                line,
                message: e.to_string(),
            }
        })?;
        out.push(e);
    }
    Ok(out)
}

pub fn read_demographics(path: &Path) -> Result<Vec<StudentDemographics>> {
    let mut rdr = reader(path, &DEMOGRAPHIC_HEADER)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec[0].is_empty() || rec[1].is_empty() {
            return Err(Error::Csv {
                path: path.to_path_buf(),
                line,
                message: "student_id and race must not be empty".into(),
            });
        }
        let mut majors: Vec<String> = rec[5]
            .split(';')
            .map(str::trim)
            .filter(|m| !m.is_empty())
            .map(String::from)
            .collect();
        majors.sort();
        majors.dedup();
        out.push(StudentDemographics {
            student_id: rec[0].to_string(),
            race: rec[1].to_string(),
            gender: rec[2].to_string(),
            income_bracket: rec[3].to_string(),
            entry_status: rec[4].to_string(),
            majors,
        });
    }
    Ok(out)
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn flush(path: &Path, mut w: csv::Writer<fs::File>) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_enrollments<'a>(path: &Path, scale: &LetterScale, rows: impl IntoIterator<Item = &'a Enrollment>) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(ENROLLMENT_HEADER).map_err(|e| csv_error(path, e))?;
    for e in rows {
        w.write_record([
            e.student_id.as_str(),
            &e.term.to_string(),
            &e.course_id,
            scale.token(e.grade),
        ])
        .map_err(|e| csv_error(path, e))?;
    }
    flush(path, w)
}

pub fn write_demographics<'a>(path: &Path, rows: impl IntoIterator<Item = &'a StudentDemographics>) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(DEMOGRAPHIC_HEADER).map_err(|e| csv_error(path, e))?;
    for d in rows {
        w.write_record([
            d.student_id.as_str(),
            &d.race,
            &d.gender,
            &d.income_bracket,
            &d.entry_status,
            &d.majors.join(";"),
        ])
        .map_err(|e| csv_error(path, e))?;
    }
    flush(path, w)
}

/// Writes `enrollments.csv` and `demographics.csv` into `dir`, creating it.
pub fn write_dataset(dir: &Path, dataset: &CohortDataset) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let enrollments: Vec<Enrollment> = dataset.enrollments().collect();
    write_enrollments(&dir.join(ENROLLMENTS_FILE), &dataset.letter_scale, &enrollments)?;
    write_demographics(&dir.join(DEMOGRAPHICS_FILE), dataset.demographics())
}

/// Locations of the two input files.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataPaths {
    pub enrollments: PathBuf,
    pub demographics: PathBuf,
}

impl DataPaths {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            enrollments: dir.join(ENROLLMENTS_FILE),
            demographics: dir.join(DEMOGRAPHICS_FILE),
        }
    }
}

pub fn load_dataset(paths: &DataPaths, min_course_enrollments: usize, schema: &DatasetSchema) -> Result<CohortDataset> {
    let enrollments = read_enrollments(&paths.enrollments, &schema.letter_scale)?;
    let demographics = read_demographics(&paths.demographics)?;
    Ok(build_dataset(&enrollments, &demographics, min_course_enrollments, schema)?)
}
