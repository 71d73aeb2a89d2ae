//! Grade tokens and the configurable letter scale.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Token used for a passing grade on a Pass/No-Pass enrollment.
pub const PASS_TOKEN: &str = "P";
/// Token used for a failing grade on a Pass/No-Pass enrollment.
pub const NO_PASS_TOKEN: &str = "NP";

/// One enrollment's outcome. Letter grades index into a [`LetterScale`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum GradeLabel {
    Letter(u8),
    Pass,
    NoPass,
}

impl GradeLabel {
    /// Position of the label inside a course block of width `m + 2`:
    /// letters first, then Pass, then No-Pass.
    pub fn category(self, m: usize) -> usize {
        match self {
            GradeLabel::Letter(i) => i as usize,
            GradeLabel::Pass => m,
            GradeLabel::NoPass => m + 1,
        }
    }

    pub fn from_category(category: usize, m: usize) -> Option<Self> {
        match category {
            c if c < m => Some(GradeLabel::Letter(c as u8)),
            c if c == m => Some(GradeLabel::Pass),
            c if c == m + 1 => Some(GradeLabel::NoPass),
            _ => None,
        }
    }

    pub fn is_letter(self) -> bool {
        matches!(self, GradeLabel::Letter(_))
    }
}

/// Which letter grades count as a positive outcome when binarizing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Cutoff {
    /// A+, A and A-.
    #[default]
    #[serde(rename = "A")]
    ACategory,
    /// Not lower than B-.
    #[serde(rename = "B")]
    BOrBetter,
}

/// Ordered letter tokens, best first. `m` is the number of tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LetterScale {
    tokens: Vec<String>,
}

impl Default for LetterScale {
    fn default() -> Self {
        Self {
            tokens: [
                "A+", "A", "A-", "B+", "B", "B-", "C+", "C", "C-", "D+", "D", "D-", "F",
            ]
            .iter()
            .map(|t| t.to_string())
            .collect(),
        }
    }
}

fn normalize(token: &str) -> String {
    token.trim().replace('\u{2212}', "-")
}

impl LetterScale {
    pub fn new<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let tokens: Vec<String> = tokens.into_iter().map(|t| normalize(t.as_ref())).collect();
        if tokens.is_empty() {
            return Err(Error::Config("letter scale must not be empty".into()));
        }
        if tokens.len() > u8::MAX as usize {
            return Err(Error::Config("letter scale is too long".into()));
        }
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t == PASS_TOKEN || t == NO_PASS_TOKEN {
                return Err(Error::Config(alloc::format!("invalid letter token '{t}'")));
            }
            if tokens[..i].contains(t) {
                return Err(Error::Config(alloc::format!("duplicate letter token '{t}'")));
            }
        }
        Ok(Self { tokens })
    }

    /// Number of letter grades (`m`).
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Width of one course block: letters plus Pass and No-Pass.
    pub fn block_width(&self) -> usize {
        self.tokens.len() + 2
    }

    pub fn parse(&self, token: &str) -> Option<GradeLabel> {
        let token = normalize(token);
        match token.as_str() {
            PASS_TOKEN => Some(GradeLabel::Pass),
            NO_PASS_TOKEN => Some(GradeLabel::NoPass),
            t => self
                .tokens
                .iter()
                .position(|x| x == t)
                .map(|i| GradeLabel::Letter(i as u8)),
        }
    }

    pub fn token(&self, label: GradeLabel) -> &str {
        match label {
            GradeLabel::Letter(i) => &self.tokens[i as usize],
            GradeLabel::Pass => PASS_TOKEN,
            GradeLabel::NoPass => NO_PASS_TOKEN,
        }
    }

    /// True iff the letter at `index` is in the A category (token starts with `A`).
    pub fn is_a_category(&self, index: usize) -> bool {
        self.tokens.get(index).is_some_and(|t| t.starts_with('A'))
    }

    /// True iff the letter at `index` is not lower than B-.
    pub fn is_b_or_better(&self, index: usize) -> bool {
        self.tokens
            .get(index)
            .is_some_and(|t| t.starts_with('A') || t.starts_with('B'))
    }

    pub fn is_positive(&self, index: usize, cutoff: Cutoff) -> bool {
        match cutoff {
            Cutoff::ACategory => self.is_a_category(index),
            Cutoff::BOrBetter => self.is_b_or_better(index),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_scale_has_thirteen_letters() {
        let s = LetterScale::default();
        assert_eq!(s.len(), 13);
        assert_eq!(s.block_width(), 15);
        let a: Vec<_> = (0..13).filter(|&i| s.is_a_category(i)).collect();
        assert_eq!(a, [0, 1, 2]);
        let b: Vec<_> = (0..13).filter(|&i| s.is_b_or_better(i)).collect();
        assert_eq!(b, [0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn parses_ascii_and_unicode_minus() {
        let s = LetterScale::default();
        assert_eq!(s.parse("A-"), Some(GradeLabel::Letter(2)));
        assert_eq!(s.parse("A\u{2212}"), Some(GradeLabel::Letter(2)));
        assert_eq!(s.parse("P"), Some(GradeLabel::Pass));
        assert_eq!(s.parse("NP"), Some(GradeLabel::NoPass));
        assert_eq!(s.parse("Q"), None);
    }

    #[test]
    fn categories_round_trip() {
        let m = 13;
        for c in 0..m + 2 {
            let g = GradeLabel::from_category(c, m).unwrap();
            assert_eq!(g.category(m), c);
        }
        assert_eq!(GradeLabel::from_category(m + 2, m), None);
    }

    #[test]
    fn rejects_bad_scales() {
        assert!(LetterScale::new(Vec::<String>::new()).is_err());
        assert!(LetterScale::new(["A", "A"]).is_err());
        assert!(LetterScale::new(["A", "P"]).is_err());
    }
}
