use std::fs;

use fairgrade::checkpoint;
use fairgrade::io::{load_dataset, read_enrollments, write_dataset, DataPaths, ENROLLMENTS_FILE};
use fairgrade::Error;
use fairgrade_core::cohort::{build_dataset, split_terms, DatasetSchema, Enrollment};
use fairgrade_core::grade::{GradeLabel, LetterScale};
use fairgrade_core::synth::{generate, SynthConfig};
use fairgrade_core::trainer::{train, StrategyConfig, StrategyId, StrategyParams, TrainConfig};
use proptest::prelude::*;

fn small() -> SynthConfig {
    SynthConfig {
        num_students: 120,
        num_courses: 15,
        num_terms: 6,
        ..SynthConfig::default()
    }
}

fn sorted(mut v: Vec<Enrollment>) -> Vec<Enrollment> {
    v.sort_by(|a, b| (&a.student_id, a.term, &a.course_id).cmp(&(&b.student_id, b.term, &b.course_id)));
    v
}

#[test]
fn csv_round_trip_keeps_every_record() {
    let d = generate(&small()).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    write_dataset(tmp.path(), &d).unwrap();
    let back = load_dataset(&DataPaths::in_dir(tmp.path()), 1, &d.schema()).unwrap();
    assert_eq!(sorted(back.enrollments().collect()), sorted(d.enrollments().collect()));
    let mut a: Vec<_> = d.demographics().cloned().collect();
    let mut b: Vec<_> = back.demographics().cloned().collect();
    a.sort_by(|x, y| x.student_id.cmp(&y.student_id));
    b.sort_by(|x, y| x.student_id.cmp(&y.student_id));
    assert_eq!(a, b);

    let again = tmp.path().join("again");
    write_dataset(&again, &back).unwrap();
    assert_eq!(
        fs::read(tmp.path().join(ENROLLMENTS_FILE)).unwrap(),
        fs::read(again.join(ENROLLMENTS_FILE)).unwrap()
    );
}

#[test]
fn bad_rows_report_their_line() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path().join("e.csv");
    fs::write(&p, "student_id,term,course_id,grade\ns1,0,C1,A\ns1,1,C2,Q\n").unwrap();
    match read_enrollments(&p, &LetterScale::default()) {
        Err(Error::Csv { line, message, .. }) => {
            assert_eq!(line, 3);
            assert!(message.contains('Q'), "{message}");
        }
        other => panic!("{other:?}"),
    }
    fs::write(&p, "student,term,course_id,grade\n").unwrap();
    assert!(matches!(read_enrollments(&p, &LetterScale::default()), Err(Error::Csv { line: 1, .. })));
}

#[test]
fn missing_file_is_io_error() {
    let e = read_enrollments(std::path::Path::new("/nonexistent/e.csv"), &LetterScale::default()).unwrap_err();
    assert!(matches!(e, Error::Io { .. }));
    assert_eq!(e.exit_code(), 2);
}

fn trained() -> fairgrade_core::trainer::Checkpoint {
    let cfg = small();
    let d = generate(&cfg).unwrap();
    let split = split_terms(d.term_count, (13, 1, 1)).unwrap();
    let params = StrategyParams {
        graduation_rates: cfg.graduation_rates(),
        ..StrategyParams::default()
    };
    let s = StrategyConfig::resolve(StrategyId::Adversarial, &params, true).unwrap();
    let tc = TrainConfig {
        hidden: 6,
        max_epochs: 2,
        ..TrainConfig::default()
    };
    train(&d, &split, &s, &tc).unwrap().0
}

#[test]
fn checkpoint_round_trip() {
    let ck = trained();
    let tmp = tempfile::tempdir().unwrap();
    checkpoint::save(tmp.path(), &ck).unwrap();
    let back = checkpoint::load(tmp.path()).unwrap();
    assert_eq!(back.params, ck.params);
    assert_eq!(back.strategy, ck.strategy);
    assert_eq!(back.catalog, ck.catalog);
    assert_eq!(back.vocab, ck.vocab);
    assert_eq!(back.best_epoch, ck.best_epoch);
    assert_eq!(back.best_val_loss.to_bits(), ck.best_val_loss.to_bits());
}

#[test]
fn truncated_tensors_are_rejected() {
    let ck = trained();
    let tmp = tempfile::tempdir().unwrap();
    checkpoint::save(tmp.path(), &ck).unwrap();
    let p = tmp.path().join(checkpoint::TENSORS_FILE);
    let mut bytes = fs::read(&p).unwrap();
    bytes.truncate(bytes.len() - 8);
    fs::write(&p, bytes).unwrap();
    assert!(matches!(checkpoint::load(tmp.path()), Err(Error::Manifest { .. })));
}

#[test]
fn manifest_shape_mismatch_is_rejected() {
    let ck = trained();
    let tmp = tempfile::tempdir().unwrap();
    checkpoint::save(tmp.path(), &ck).unwrap();
    let p = tmp.path().join(checkpoint::MANIFEST_FILE);
    let mut m: serde_json::Value = serde_json::from_str(&fs::read_to_string(&p).unwrap()).unwrap();
    m["tensors"][0]["shape"][0] = serde_json::json!(999);
    fs::write(&p, m.to_string()).unwrap();
    let e = checkpoint::load(tmp.path()).unwrap_err();
    assert!(e.to_string().contains("tensor list"), "{e}");
}

fn enrollment(s: usize, t: u32, c: usize) -> Enrollment {
    Enrollment {
        student_id: format!("s{s}"),
        term: t,
        course_id: format!("C{c}"),
        grade: GradeLabel::Letter(0),
    }
}

proptest! {
    #[test]
    fn raising_the_threshold_never_adds_a_course(
        rows in proptest::collection::btree_set((0usize..12, 0u32..4, 0usize..8), 1..120),
        k in 1usize..6,
        extra in 0usize..5,
    ) {
        let e: Vec<Enrollment> = rows.iter().map(|&(s, t, c)| enrollment(s, t, c)).collect();
        let schema = DatasetSchema::default();
        let demo: Vec<_> = (0..12)
            .map(|s| fairgrade_core::cohort::StudentDemographics {
                student_id: format!("s{s}"),
                race: schema.group_list[s % 8].clone(),
                gender: "F".into(),
                income_bracket: "low".into(),
                entry_status: "freshman".into(),
                majors: vec!["Math".into()],
            })
            .collect();
        let lo = build_dataset(&e, &demo, k, &schema);
        let hi = build_dataset(&e, &demo, k + extra, &schema);
        if let Ok(hi) = hi {
            let lo = lo.expect("a lower threshold keeps at least the same courses");
            prop_assert!(hi.catalog.iter().all(|c| lo.catalog.contains(c)));
        }
    }
}
