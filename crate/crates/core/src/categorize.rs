//! Permission-set categorization.
//!
//! A rule's score is the fraction of its tokens the app matches (rule
//! coverage). Scores are exact rationals so ties are real ties; the ranking
//! key is `(score desc, matched desc, rule size desc, name asc)`, which makes
//! the winner independent of rule order.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::catalog::{CategoryRuleSet, TokenKind};
use crate::manifest::ManifestInfo;

pub const UNCATEGORIZED: &str = "Uncategorized";

/// An exact fraction in `[0, 1]`, written `n/d` (or `n` when `d = 1`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Score(Ratio<u32>);

impl Score {
    pub const ZERO: Score = Score(Ratio::new_raw(0, 1));
    pub const ONE: Score = Score(Ratio::new_raw(1, 1));

    pub fn new(numer: u32, denom: u32) -> Self {
        Score(Ratio::new(numer, denom))
    }

    pub fn numer(&self) -> u32 {
        *self.0.numer()
    }

    pub fn denom(&self) -> u32 {
        *self.0.denom()
    }

    pub fn to_f64(self) -> f64 {
        self.numer() as f64 / self.denom() as f64
    }
}

impl Default for Score {
    fn default() -> Self {
        Score::ZERO
    }
}

impl fmt::Display for Score {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid score {0:?}: expected a fraction like 1/2 or a decimal like 0.6 within [0, 1]")]
pub struct ScoreParseError(pub String);

impl FromStr for Score {
    type Err = ScoreParseError;

    /// Accepts `n/d`, integers, and finite decimals (`0.6` is exactly 3/5).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ScoreParseError(s.to_owned());
        let t = s.trim();
        let ratio = if let Some((n, d)) = t.split_once('/') {
            let n: u32 = n.trim().parse().map_err(|_| err())?;
            let d: u32 = d.trim().parse().map_err(|_| err())?;
            if d == 0 {
                return Err(err());
            }
            Ratio::new(n, d)
        } else {
            let (int, frac) = t.split_once('.').unwrap_or((t, ""));
            if (int.is_empty() && frac.is_empty())
                || !int.chars().chain(frac.chars()).all(|c| c.is_ascii_digit())
                || frac.len() > 9
            {
                return Err(err());
            }
            let denom = 10u32.pow(frac.len() as u32);
            let int: u32 = if int.is_empty() {
                0
            } else {
                int.parse().map_err(|_| err())?
            };
            let frac: u32 = if frac.is_empty() {
                0
            } else {
                frac.parse().map_err(|_| err())?
            };
            let numer = int
                .checked_mul(denom)
                .and_then(|v| v.checked_add(frac))
                .ok_or_else(err)?;
            Ratio::new(numer, denom)
        };
        if ratio > Ratio::from_integer(1) {
            return Err(err());
        }
        Ok(Score(ratio))
    }
}

impl Serialize for Score {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Score {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryScore {
    pub name: String,
    pub score: Score,
    pub matched_tokens: BTreeSet<String>,
    pub token_count: usize,
}

impl CategoryScore {
    /// Ranking order: best first.
    pub fn rank_cmp(&self, other: &Self) -> Ordering {
        other
            .score
            .cmp(&self.score)
            .then_with(|| other.matched_tokens.len().cmp(&self.matched_tokens.len()))
            .then_with(|| other.token_count.cmp(&self.token_count))
            .then_with(|| self.name.cmp(&other.name))
    }
}

/// Scores the manifest against every rule, best first.
pub fn score_categories(manifest: &ManifestInfo, rules: &CategoryRuleSet) -> Vec<CategoryScore> {
    let evidence = manifest.evidence();
    let mut scores: Vec<CategoryScore> = rules
        .rules
        .iter()
        .map(|rule| {
            let matched_tokens: BTreeSet<String> = rule
                .tokens
                .iter()
                .filter(|t| match t.kind {
                    TokenKind::PermissionGroup => rules
                        .group_map
                        .get(&t.value)
                        .is_some_and(|members| members.iter().any(|m| evidence.contains(m.as_str()))),
                    TokenKind::Permission | TokenKind::IntentAction => evidence.contains(t.value.as_str()),
                })
                .map(|t| t.value.clone())
                .collect();
            let token_count = rule.tokens.len();
            CategoryScore {
                name: rule.name.clone(),
                score: Score::new(matched_tokens.len() as u32, token_count as u32),
                matched_tokens,
                token_count,
            }
        })
        .collect();
    scores.sort_by(CategoryScore::rank_cmp);
    scores
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub assigned: String,
    pub score: Score,
    pub declared: Option<String>,
    pub declared_agreement: Option<bool>,
    pub ranking: Vec<CategoryScore>,
}

impl Assignment {
    pub fn is_uncategorized(&self) -> bool {
        self.assigned == UNCATEGORIZED
    }
}

/// The declared category names no rule; the assignment fell back to the
/// rule-based winner.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("declared category {0:?} matches no category rule; using rule-based assignment")]
pub struct UnknownDeclaredCategory(pub String);

pub const DEFAULT_MIN_SCORE: Score = Score(Ratio::new_raw(1, 2));

/// Picks the category. A declared (store) category that names a known rule
/// overrides the rule-based winner and is cross-checked against it.
pub fn assign_category(
    scores: &[CategoryScore],
    declared: Option<&str>,
    min_score: Score,
    rules: &CategoryRuleSet,
) -> (Assignment, Option<UnknownDeclaredCategory>) {
    let (winner, winner_score) = match scores.first() {
        Some(top) if top.score >= min_score => (top.name.clone(), top.score),
        Some(top) => (UNCATEGORIZED.to_owned(), top.score),
        None => (UNCATEGORIZED.to_owned(), Score::ZERO),
    };

    let mut warning = None;
    let (assigned, score, agreement) = match declared {
        Some(d) if rules.rule(d).is_some() => {
            let score = scores.iter().find(|s| s.name == d).map_or(Score::ZERO, |s| s.score);
            (d.to_owned(), score, Some(d == winner))
        }
        Some(d) => {
            warning = Some(UnknownDeclaredCategory(d.to_owned()));
            (winner, winner_score, None)
        }
        None => (winner, winner_score, None),
    };

    (
        Assignment {
            assigned,
            score,
            declared: declared.map(str::to_owned),
            declared_agreement: agreement,
            ranking: scores.to_vec(),
        },
        warning,
    )
}
