//! Graded relevance judgments.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};

/// Three-level relevance annotation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RelevanceGrade {
    Irrelevant,
    Substitute,
    Exact,
}

impl RelevanceGrade {
    /// Training label: 1, 0.5 or 0.
    pub fn value(self) -> f64 {
        match self {
            RelevanceGrade::Exact => 1.0,
            RelevanceGrade::Substitute => 0.5,
            RelevanceGrade::Irrelevant => 0.0,
        }
    }

    pub fn from_value(v: f64) -> Result<Self> {
        if v == 1.0 {
            Ok(RelevanceGrade::Exact)
        } else if v == 0.5 {
            Ok(RelevanceGrade::Substitute)
        } else if v == 0.0 {
            Ok(RelevanceGrade::Irrelevant)
        } else {
            Err(Error::invalid(format!("grade {v} is not one of 1, 0.5, 0")))
        }
    }

    /// Maps a qrels grade `0 | 1 | 2`.
    pub fn from_trec(g: u8) -> Result<Self> {
        match g {
            2 => Ok(RelevanceGrade::Exact),
            1 => Ok(RelevanceGrade::Substitute),
            0 => Ok(RelevanceGrade::Irrelevant),
            _ => Err(Error::invalid(format!("qrels grade {g} is not in 0..=2"))),
        }
    }

    pub fn to_trec(self) -> u8 {
        match self {
            RelevanceGrade::Exact => 2,
            RelevanceGrade::Substitute => 1,
            RelevanceGrade::Irrelevant => 0,
        }
    }

    /// Binary view used for every metric: only exact matches count.
    #[inline]
    pub fn is_positive(self) -> bool {
        self == RelevanceGrade::Exact
    }
}

impl fmt::Display for RelevanceGrade {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JudgedPair {
    pub query_id: String,
    pub candidate_id: String,
    pub grade: RelevanceGrade,
}

impl JudgedPair {
    pub fn new(
        query_id: impl Into<String>,
        candidate_id: impl Into<String>,
        grade: RelevanceGrade,
    ) -> Self {
        Self {
            query_id: query_id.into(),
            candidate_id: candidate_id.into(),
            grade,
        }
    }
}

/// Judgments indexed by query, then candidate. Unjudged pairs read as irrelevant.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Qrels {
    by_query: BTreeMap<String, BTreeMap<String, RelevanceGrade>>,
}

impl Qrels {
    /// Builds the index, rejecting a repeated `(query, candidate)` pair.
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = &'a JudgedPair>) -> Result<Self> {
        let mut by_query: BTreeMap<String, BTreeMap<String, RelevanceGrade>> = BTreeMap::new();
        for p in pairs {
            let prev = by_query
                .entry(p.query_id.clone())
                .or_default()
                .insert(p.candidate_id.clone(), p.grade);
            if prev.is_some() {
                return Err(Error::DuplicateId(format!(
                    "{}/{}",
                    p.query_id, p.candidate_id
                )));
            }
        }
        Ok(Self { by_query })
    }

    pub fn grade(&self, query_id: &str, candidate_id: &str) -> RelevanceGrade {
        self.by_query
            .get(query_id)
            .and_then(|m| m.get(candidate_id))
            .copied()
            .unwrap_or(RelevanceGrade::Irrelevant)
    }

    pub fn judgments(&self, query_id: &str) -> Option<&BTreeMap<String, RelevanceGrade>> {
        self.by_query.get(query_id)
    }

    pub fn positive_count(&self, query_id: &str) -> usize {
        self.judgments(query_id)
            .map(|m| m.values().filter(|g| g.is_positive()).count())
            .unwrap_or(0)
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.by_query.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.by_query.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.by_query.is_empty()
    }

    pub fn pairs(&self) -> impl Iterator<Item = JudgedPair> + '_ {
        self.by_query.iter().flat_map(|(q, m)| {
            m.iter()
                .map(move |(c, &g)| JudgedPair::new(q.clone(), c.clone(), g))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grade_maps() {
        assert_eq!(RelevanceGrade::from_trec(2).unwrap().value(), 1.0);
        assert_eq!(RelevanceGrade::from_trec(1).unwrap().value(), 0.5);
        assert_eq!(RelevanceGrade::from_trec(0).unwrap().value(), 0.0);
        assert!(RelevanceGrade::from_trec(3).is_err());
        assert!(RelevanceGrade::from_value(0.25).is_err());
        assert!(!RelevanceGrade::Substitute.is_positive());
    }

    #[test]
    fn duplicate_pair_rejected() {
        let pairs = vec![
            JudgedPair::new("q1", "d1", RelevanceGrade::Exact),
            JudgedPair::new("q1", "d1", RelevanceGrade::Irrelevant),
        ];
        assert!(matches!(Qrels::from_pairs(&pairs), Err(Error::DuplicateId(_))));
    }

    #[test]
    fn unjudged_reads_irrelevant() {
        let pairs = vec![JudgedPair::new("q1", "d1", RelevanceGrade::Exact)];
        let q = Qrels::from_pairs(&pairs).unwrap();
        assert_eq!(q.grade("q1", "d2"), RelevanceGrade::Irrelevant);
        assert_eq!(q.positive_count("q1"), 1);
        assert_eq!(q.positive_count("q9"), 0);
    }
}
