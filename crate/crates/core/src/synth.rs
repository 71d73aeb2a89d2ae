//! Seeded synthetic cohorts with configurable group shares, per-group grade
//! distributions and group-dependent course preferences.
//!
//! Grades come from a latent score `z = rho * ability + tau * difficulty +
//! sqrt(1 - rho^2 - tau^2) * noise`. Within each group, enrollments are ranked
//! by `z` and cut at the configured shares, so the realized per-group
//! A-category, B-or-better and Pass shares match the configuration up to
//! rounding while grades still track student ability across terms.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::cohort::{build_dataset, CohortDataset, DatasetSchema, Enrollment, StudentDemographics, DECLINE_TO_STATE};
use crate::grade::{GradeLabel, LetterScale};
use crate::math::{ln, sqrt};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupSpec {
    pub name: String,
    /// Share of students (and, in expectation, of enrollments).
    pub proportion: f64,
    /// P(A category | letter grade).
    pub a_share: f64,
    /// P(B- or better | letter grade); at least `a_share`.
    pub b_or_better_share: f64,
    /// P(letter grade) as opposed to Pass/No-Pass.
    pub letter_share: f64,
    /// P(Pass | Pass/No-Pass).
    pub pass_share: f64,
    /// Historic graduation rate, used by grad-rate sample weighting.
    pub graduation_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CourseLoad {
    pub courses: usize,
    pub probability: f64,
}

/// A named categorical attribute value with its sampling probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Category {
    pub value: String,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub seed: u64,
    pub num_students: usize,
    pub num_courses: usize,
    pub num_terms: u32,
    pub courses_per_term: Vec<CourseLoad>,
    pub groups: Vec<GroupSpec>,
    pub letter_scale: LetterScale,
    /// Token weights inside the A category, best first.
    pub a_token_weights: Vec<f64>,
    /// Token weights for B-or-better grades outside the A category.
    pub b_token_weights: Vec<f64>,
    /// Token weights for the remaining letters.
    pub below_token_weights: Vec<f64>,
    /// Strength of group-specific course preferences; 0 makes course choice
    /// independent of group.
    pub affinity_skew: f64,
    /// Loading of the per-student ability on the latent grade score.
    pub ability_weight: f64,
    /// Loading of the per-course difficulty on the latent grade score.
    pub difficulty_weight: f64,
    /// Course popularity decays as `rank^-popularity_exponent`.
    pub popularity_exponent: f64,
    /// Earliest start term, relative to term 0; negative values model
    /// students already enrolled when observation begins.
    pub earliest_start: i64,
    pub min_stay: u32,
    pub max_stay: u32,
    pub skip_probability: f64,
    pub genders: Vec<Category>,
    pub income_brackets: Vec<Category>,
    pub entry_statuses: Vec<Category>,
    pub majors: Vec<String>,
    /// Probability of a second major.
    pub double_major_probability: f64,
}

fn cats(items: &[(&str, f64)]) -> Vec<Category> {
    items
        .iter()
        .map(|(v, p)| Category {
            value: v.to_string(),
            probability: *p,
        })
        .collect()
}

/// Default group table. Shares of the first three groups plus the fourth
/// through seventh plus Decline-to-State are 77.42 / 17.03 / 5.55 percent;
/// the overall A-category share of letter grades is 56.12 percent.
pub fn default_groups() -> Vec<GroupSpec> {
    let rows: [(&str, f64, f64, f64, f64, f64); 8] = [
        ("White", 0.27, 0.584, 0.88, 0.925, 0.92),
        ("Asian", 0.35, 0.584, 0.88, 0.925, 0.93),
        ("International", 0.1542, 0.584, 0.88, 0.925, 0.88),
        ("Chicano/Latino", 0.11, 0.45, 0.78, 0.875, 0.83),
        ("African American", 0.035, 0.45, 0.78, 0.875, 0.79),
        ("Native American", 0.0153, 0.45, 0.78, 0.875, 0.75),
        ("Pacific Islander", 0.01, 0.45, 0.78, 0.875, 0.77),
        (DECLINE_TO_STATE, 0.0555, 0.584, 0.88, 0.925, 0.88),
    ];
    rows.iter()
        .map(|&(name, proportion, a, b, pass, grad)| GroupSpec {
            name: name.to_string(),
            proportion,
            a_share: a,
            b_or_better_share: b,
            letter_share: 0.85,
            pass_share: pass,
            graduation_rate: grad,
        })
        .collect()
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            num_students: 5000,
            num_courses: 100,
            num_terms: 12,
            courses_per_term: [(2, 0.1), (3, 0.2), (4, 0.4), (5, 0.2), (6, 0.1)]
                .iter()
                .map(|&(courses, probability)| CourseLoad { courses, probability })
                .collect(),
            groups: default_groups(),
            letter_scale: LetterScale::default(),
            a_token_weights: vec![0.15, 0.55, 0.30],
            b_token_weights: vec![0.35, 0.40, 0.25],
            below_token_weights: vec![0.25, 0.20, 0.15, 0.10, 0.08, 0.07, 0.15],
            affinity_skew: 0.5,
            ability_weight: 0.7,
            difficulty_weight: 0.3,
            popularity_exponent: 0.5,
            earliest_start: -3,
            min_stay: 4,
            max_stay: 10,
            skip_probability: 0.05,
            genders: cats(&[("Female", 0.5), ("Male", 0.48), ("Nonbinary", 0.02)]),
            income_brackets: cats(&[("low", 0.3), ("mid", 0.45), ("high", 0.25)]),
            entry_statuses: cats(&[("freshman", 0.75), ("transfer", 0.25)]),
            majors: ["Biology", "Business", "Computer Science", "Economics", "Engineering", "Humanities"]
                .iter()
                .map(|m| m.to_string())
                .collect(),
            double_major_probability: 0.15,
        }
    }
}

fn check_prob(name: &str, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Config(format!("{name} must lie in [0, 1], got {p}")));
    }
    Ok(())
}

fn check_distribution(name: &str, probs: impl Iterator<Item = f64>) -> Result<()> {
    let mut total = 0.0;
    let mut n = 0;
    for p in probs {
        check_prob(name, p)?;
        total += p;
        n += 1;
    }
    if n == 0 || (total - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("{name} must sum to 1, got {total}")));
    }
    Ok(())
}

/// Letter indices of the A, B-or-better and remaining categories.
fn letter_categories(scale: &LetterScale) -> [Vec<usize>; 3] {
    let mut out = [Vec::new(), Vec::new(), Vec::new()];
    for i in 0..scale.len() {
        let k = if scale.is_a_category(i) {
            0
        } else if scale.is_b_or_better(i) {
            1
        } else {
            2
        };
        out[k].push(i);
    }
    out
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_students == 0 || self.num_courses == 0 || self.num_terms == 0 {
            return Err(Error::Config("num_students, num_courses and num_terms must be positive".into()));
        }
        if self.groups.is_empty() {
            return Err(Error::Config("at least one group is required".into()));
        }
        check_distribution("group proportions", self.groups.iter().map(|g| g.proportion))?;
        for (i, g) in self.groups.iter().enumerate() {
            if self.groups[..i].iter().any(|o| o.name == g.name) {
                return Err(Error::Config(format!("duplicate group '{}'", g.name)));
            }
            for (field, p) in [
                ("a_share", g.a_share),
                ("b_or_better_share", g.b_or_better_share),
                ("letter_share", g.letter_share),
                ("pass_share", g.pass_share),
                ("graduation_rate", g.graduation_rate),
            ] {
                check_prob(&format!("{}.{field}", g.name), p)?;
            }
            if g.b_or_better_share < g.a_share {
                return Err(Error::Config(format!(
                    "{}: b_or_better_share must be at least a_share",
                    g.name
                )));
            }
        }
        check_distribution("courses_per_term", self.courses_per_term.iter().map(|c| c.probability))?;
        if self.courses_per_term.iter().any(|c| c.courses == 0) {
            return Err(Error::Config("courses_per_term entries must be positive".into()));
        }
        let cats = letter_categories(&self.letter_scale);
        for (name, w, c) in [
            ("a_token_weights", &self.a_token_weights, &cats[0]),
            ("b_token_weights", &self.b_token_weights, &cats[1]),
            ("below_token_weights", &self.below_token_weights, &cats[2]),
        ] {
            if w.len() != c.len() {
                return Err(Error::Config(format!(
                    "{name} has {} entries but the letter scale has {} such grades",
                    w.len(),
                    c.len()
                )));
            }
            if w.iter().any(|x| !x.is_finite() || *x < 0.0) || (!w.is_empty() && w.iter().sum::<f64>() <= 0.0) {
                return Err(Error::Config(format!("{name} must be non-negative with a positive sum")));
            }
        }
        if cats[0].is_empty() && self.groups.iter().any(|g| g.a_share > 0.0) {
            return Err(Error::Config("letter scale has no A-category grade".into()));
        }
        let rho = self.ability_weight;
        let tau = self.difficulty_weight;
        if rho < 0.0 || tau < 0.0 || rho * rho + tau * tau > 1.0 {
            return Err(Error::Config(
                "ability_weight and difficulty_weight must be non-negative with squares summing to at most 1".into(),
            ));
        }
        if !(self.affinity_skew.is_finite() && self.affinity_skew >= 0.0) {
            return Err(Error::Config("affinity_skew must be non-negative".into()));
        }
        if !(self.popularity_exponent.is_finite() && self.popularity_exponent >= 0.0) {
            return Err(Error::Config("popularity_exponent must be non-negative".into()));
        }
        if self.min_stay == 0 || self.max_stay < self.min_stay {
            return Err(Error::Config("need 1 <= min_stay <= max_stay".into()));
        }
        if self.earliest_start < 1 - self.min_stay as i64 {
            return Err(Error::Config(
                "earliest_start must leave every student at least one observed term".into(),
            ));
        }
        check_prob("skip_probability", self.skip_probability)?;
        check_prob("double_major_probability", self.double_major_probability)?;
        for (name, c) in [
            ("genders", &self.genders),
            ("income_brackets", &self.income_brackets),
            ("entry_statuses", &self.entry_statuses),
        ] {
            check_distribution(name, c.iter().map(|x| x.probability))?;
        }
        if self.majors.is_empty() {
            return Err(Error::Config("majors must not be empty".into()));
        }
        Ok(())
    }

    pub fn group_names(&self) -> Vec<String> {
        self.groups.iter().map(|g| g.name.clone()).collect()
    }

    pub fn graduation_rates(&self) -> Vec<f64> {
        self.groups.iter().map(|g| g.graduation_rate).collect()
    }

    pub fn proportions(&self) -> Vec<f64> {
        self.groups.iter().map(|g| g.proportion).collect()
    }
}

/// Splits `total` items into integer counts proportional to `weights` by the
/// largest-remainder rule; ties go to the earlier index.
fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    if sum <= 0.0 {
        return vec![0; weights.len()];
    }
    let exact: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|x| *x as usize).collect();
    let mut rest = total - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - counts[a] as f64;
        let rb = exact[b] - counts[b] as f64;
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if rest == 0 {
            break;
        }
        if weights[i] > 0.0 {
            counts[i] += 1;
            rest -= 1;
        }
    }
    counts
}

fn round_share(n: usize, share: f64) -> usize {
    libm::round(n as f64 * share) as usize
}

fn pick<'a>(rng: &mut ChaCha8Rng, cats: &'a [Category]) -> &'a str {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for c in cats {
        acc += c.probability;
        if u < acc {
            return &c.value;
        }
    }
    &cats[cats.len() - 1].value
}

struct Draft {
    student: usize,
    term: u32,
    course: usize,
    z: f64,
}

/// Generates a cohort. Identical configurations give identical datasets.
pub fn generate(config: &SynthConfig) -> Result<CohortDataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let g_count = config.groups.len();
    let n = config.num_courses;

    // exact group quotas, shuffled over students
    let quotas = apportion(config.num_students, &config.proportions());
    let mut race: Vec<usize> = quotas
        .iter()
        .enumerate()
        .flat_map(|(g, &k)| core::iter::repeat_n(g, k))
        .collect();
    race.shuffle(&mut rng);

    let popularity: Vec<f64> = (0..n)
        .map(|c| libm::pow((c + 1) as f64, -config.popularity_exponent))
        .collect();
    let pop_sum: f64 = popularity.iter().sum();
    let mut difficulty: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let centre: f64 = difficulty.iter().zip(&popularity).map(|(d, p)| d * p).sum::<f64>() / pop_sum;
    for d in &mut difficulty {
        *d -= centre;
    }
    // log-weights of course choice per group
    let log_affinity: Vec<Vec<f64>> = (0..g_count)
        .map(|_| {
            (0..n)
                .map(|c| {
                    let eta: f64 = rng.sample(StandardNormal);
                    ln(popularity[c]) + config.affinity_skew * eta
                })
                .collect()
        })
        .collect();

    let rho = config.ability_weight;
    let tau = config.difficulty_weight;
    let noise = sqrt((1.0 - rho * rho - tau * tau).max(0.0));
    let loads: Vec<f64> = config.courses_per_term.iter().map(|c| c.probability).collect();

    let width = config.num_students.to_string().len().max(5);
    let student_ids: Vec<String> = (0..config.num_students).map(|i| format!("s{:0width$}", i + 1)).collect();
    let course_width = n.to_string().len().max(3);
    let course_ids: Vec<String> = (0..n).map(|c| format!("C{:0course_width$}", c + 1)).collect();

    let mut drafts: Vec<Draft> = Vec::new();
    let mut demographics = Vec::with_capacity(config.num_students);
    let mut taken = vec![false; n];
    let mut keys: Vec<(f64, usize)> = Vec::with_capacity(n);
    for (s, &g) in race.iter().enumerate() {
        let ability: f64 = rng.sample(StandardNormal);
        let start = rng.random_range(config.earliest_start..config.num_terms as i64);
        let stay = rng.random_range(config.min_stay..=config.max_stay) as i64;
        let first = start.max(0) as u32;
        let end = (start + stay).min(config.num_terms as i64) as u32;
        taken.iter_mut().for_each(|t| *t = false);
        let before = drafts.len();
        for term in first..end {
            let last_chance = term + 1 == end && drafts.len() == before;
            if !last_chance && rng.random_bool(config.skip_probability) {
                continue;
            }
            let mut u: f64 = rng.random();
            let mut k = config.courses_per_term[config.courses_per_term.len() - 1].courses;
            for (load, p) in config.courses_per_term.iter().zip(&loads) {
                if u < *p {
                    k = load.courses;
                    break;
                }
                u -= p;
            }
            // weighted sampling without replacement via exponential keys
            keys.clear();
            for c in 0..n {
                let e: f64 = rng.random::<f64>();
                if !taken[c] {
                    keys.push((ln(-ln(1.0 - e)) - log_affinity[g][c], c));
                }
            }
            keys.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut chosen: Vec<usize> = keys.iter().take(k).map(|x| x.1).collect();
            chosen.sort_unstable();
            for c in chosen {
                taken[c] = true;
                let eps: f64 = rng.sample(StandardNormal);
                drafts.push(Draft {
                    student: s,
                    term,
                    course: c,
                    z: rho * ability + tau * difficulty[c] + noise * eps,
                });
            }
        }
        let mut majors = vec![config.majors[rng.random_range(0..config.majors.len())].clone()];
        if config.majors.len() > 1 && rng.random_bool(config.double_major_probability) {
            loop {
                let m = &config.majors[rng.random_range(0..config.majors.len())];
                if *m != majors[0] {
                    majors.push(m.clone());
                    break;
                }
            }
            majors.sort();
        }
        demographics.push(StudentDemographics {
            student_id: student_ids[s].clone(),
            race: config.groups[g].name.clone(),
            gender: pick(&mut rng, &config.genders).to_string(),
            income_bracket: pick(&mut rng, &config.income_brackets).to_string(),
            entry_status: pick(&mut rng, &config.entry_statuses).to_string(),
            majors,
        });
    }

    let grades = assign_grades(config, &race, &drafts, &mut rng);
    let enrollments: Vec<Enrollment> = drafts
        .iter()
        .zip(grades)
        .map(|(d, grade)| Enrollment {
            student_id: student_ids[d.student].clone(),
            term: d.term,
            course_id: course_ids[d.course].clone(),
            grade,
        })
        .collect();
    let schema = DatasetSchema {
        group_list: config.group_names(),
        letter_scale: config.letter_scale.clone(),
    };
    build_dataset(&enrollments, &demographics, 1, &schema)
}

/// Rank-quota grade assignment within each group.
fn assign_grades(config: &SynthConfig, race: &[usize], drafts: &[Draft], rng: &mut ChaCha8Rng) -> Vec<GradeLabel> {
    let cats = letter_categories(&config.letter_scale);
    let token_weights = [&config.a_token_weights, &config.b_token_weights, &config.below_token_weights];
    let mut out = vec![GradeLabel::NoPass; drafts.len()];
    for (g, grp) in config.groups.iter().enumerate() {
        let mut idx: Vec<usize> = (0..drafts.len()).filter(|&i| race[drafts[i].student] == g).collect();
        idx.shuffle(rng);
        let letters = round_share(idx.len(), grp.letter_share);
        let (letter_idx, pnp_idx) = idx.split_at_mut(letters);
        let by_z = |a: &usize, b: &usize| drafts[*b].z.total_cmp(&drafts[*a].z).then(a.cmp(b));

        pnp_idx.sort_by(by_z);
        let passes = round_share(pnp_idx.len(), grp.pass_share);
        for (r, &i) in pnp_idx.iter().enumerate() {
            out[i] = if r < passes { GradeLabel::Pass } else { GradeLabel::NoPass };
        }

        letter_idx.sort_by(by_z);
        let total = letter_idx.len();
        let a = round_share(total, grp.a_share);
        let b = round_share(total, grp.b_or_better_share).max(a);
        let bounds = [0, a, b, total];
        for k in 0..3 {
            let slice = &letter_idx[bounds[k]..bounds[k + 1]];
            if slice.is_empty() {
                continue;
            }
            let tokens = &cats[k];
            if tokens.is_empty() {
                // no letters in this category on the scale; fall back to the
                // nearest populated one
                let fallback = cats.iter().find(|c| !c.is_empty()).expect("scale is non-empty");
                for &i in slice {
                    out[i] = GradeLabel::Letter(fallback[0] as u8);
                }
                continue;
            }
            let counts = apportion(slice.len(), token_weights[k]);
            let mut pos = 0;
            for (t, &c) in tokens.iter().zip(&counts) {
                for &i in &slice[pos..pos + c] {
                    out[i] = GradeLabel::Letter(*t as u8);
                }
                pos += c;
            }
        }
    }
    out
}

/// One line of a statistics check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatCheck {
    pub name: String,
    pub target: f64,
    /// `None` when the statistic is undefined on this dataset.
    pub observed: Option<f64>,
    pub pass: bool,
}

fn stat(name: String, target: f64, observed: Option<f64>, tolerance: f64) -> StatCheck {
    let pass = observed.is_some_and(|o| (o - target).abs() <= tolerance);
    StatCheck {
        name,
        target,
        observed,
        pass,
    }
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Compares enrollment-level group shares, per-group A-category, B-or-better
/// and Pass shares, and the overall A-category share against `config`.
pub fn verify_statistics(dataset: &CohortDataset, config: &SynthConfig, tolerance: f64) -> Vec<StatCheck> {
    let g_count = config.groups.len();
    let mut enrolled = vec![0usize; g_count];
    let mut letters = vec![0usize; g_count];
    let mut a = vec![0usize; g_count];
    let mut b = vec![0usize; g_count];
    let mut pnp = vec![0usize; g_count];
    let mut pass = vec![0usize; g_count];
    let scale = &dataset.letter_scale;
    for st in &dataset.students {
        let Some(g) = config.groups.iter().position(|x| x.name == st.demographics.race) else {
            continue;
        };
        for t in &st.terms {
            for &(_, grade) in &t.courses {
                enrolled[g] += 1;
                match grade {
                    GradeLabel::Letter(i) => {
                        letters[g] += 1;
                        a[g] += scale.is_a_category(i as usize) as usize;
                        b[g] += scale.is_b_or_better(i as usize) as usize;
                    }
                    GradeLabel::Pass => {
                        pnp[g] += 1;
                        pass[g] += 1;
                    }
                    GradeLabel::NoPass => pnp[g] += 1,
                }
            }
        }
    }
    let total: usize = enrolled.iter().sum();
    let mut out = Vec::new();
    for (g, grp) in config.groups.iter().enumerate() {
        out.push(stat(format!("share[{}]", grp.name), grp.proportion, ratio(enrolled[g], total), tolerance));
    }
    for (g, grp) in config.groups.iter().enumerate() {
        out.push(stat(format!("a_share[{}]", grp.name), grp.a_share, ratio(a[g], letters[g]), tolerance));
        out.push(stat(
            format!("b_or_better_share[{}]", grp.name),
            grp.b_or_better_share,
            ratio(b[g], letters[g]),
            tolerance,
        ));
        out.push(stat(format!("pass_share[{}]", grp.name), grp.pass_share, ratio(pass[g], pnp[g]), tolerance));
    }
    let letter_mass: f64 = config.groups.iter().map(|g| g.proportion * g.letter_share).sum();
    let target_a = if letter_mass > 0.0 {
        config
            .groups
            .iter()
            .map(|g| g.proportion * g.letter_share * g.a_share)
            .sum::<f64>()
            / letter_mass
    } else {
        0.0
    };
    out.push(stat(
        "a_share[overall]".into(),
        target_a,
        ratio(a.iter().sum(), letters.iter().sum()),
        tolerance,
    ));
    out
}

/// Share of all enrollments held by students of the named groups.
pub fn enrollment_share(dataset: &CohortDataset, groups: &[&str]) -> Option<f64> {
    let mut hit = 0usize;
    let mut total = 0usize;
    for st in &dataset.students {
        let k: usize = st.terms.iter().map(|t| t.courses.len()).sum();
        total += k;
        if groups.contains(&st.demographics.race.as_str()) {
            hit += k;
        }
    }
    ratio(hit, total)
}

/// Share of letter grades in the A category.
pub fn a_category_share(dataset: &CohortDataset) -> Option<f64> {
    let mut a = 0usize;
    let mut letters = 0usize;
    for row in &dataset.rows {
        if let GradeLabel::Letter(i) = row.grade {
            letters += 1;
            a += dataset.letter_scale.is_a_category(i as usize) as usize;
        }
    }
    ratio(a, letters)
}
