//! TREC-style qrels and run files.
//!
//! Qrels lines: `qid 0 docid grade` with grade `0 | 1 | 2`.
//! Run lines: `qid Q0 docid rank score tag`.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::index::SearchResult;
use crate::judgment::{JudgedPair, RelevanceGrade};

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

pub fn parse_qrels_line(line: &str, lineno: usize) -> Result<JudgedPair> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != 4 {
        return Err(parse_err(lineno, format!("expected 4 fields, found {}", fields.len())));
    }
    let grade: u8 = fields[3]
        .parse()
        .map_err(|_| parse_err(lineno, format!("grade {:?} is not an integer", fields[3])))?;
    let grade = RelevanceGrade::from_trec(grade).map_err(|e| parse_err(lineno, e.to_string()))?;
    Ok(JudgedPair::new(fields[0], fields[2], grade))
}

/// Reads qrels, skipping blank lines.
pub fn read_qrels<R: BufRead>(r: R) -> Result<Vec<JudgedPair>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_qrels_line(&line, i + 1)?);
    }
    Ok(out)
}

pub fn write_qrels<W: Write>(mut w: W, pairs: &[JudgedPair]) -> Result<()> {
    for p in pairs {
        writeln!(w, "{} 0 {} {}", p.query_id, p.candidate_id, p.grade.to_trec())?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunEntry {
    pub candidate_id: String,
    pub rank: usize,
    pub score: f64,
}

/// Writes ranked lists. The score column is the logit when present, else the cosine.
pub fn write_run<W: Write>(mut w: W, results: &[SearchResult], tag: &str) -> Result<()> {
    for r in results {
        for (i, h) in r.hits.iter().enumerate() {
            let score = h.logit.unwrap_or(h.cosine);
            writeln!(w, "{} Q0 {} {} {} {}", r.query_id, h.candidate_id, i + 1, score, tag)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a run file into per-query lists ordered by rank.
pub fn read_run<R: BufRead>(r: R) -> Result<BTreeMap<String, Vec<RunEntry>>> {
    let mut out: BTreeMap<String, Vec<RunEntry>> = BTreeMap::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 6 {
            return Err(parse_err(lineno, format!("expected 6 fields, found {}", f.len())));
        }
        let rank = f[3]
            .parse()
            .map_err(|_| parse_err(lineno, format!("rank {:?} is not an integer", f[3])))?;
        let score = f[4]
            .parse()
            .map_err(|_| parse_err(lineno, format!("score {:?} is not a number", f[4])))?;
        out.entry(f[0].to_string()).or_default().push(RunEntry {
            candidate_id: f[2].to_string(),
            rank,
            score,
        });
    }
    for list in out.values_mut() {
        list.sort_by_key(|e| e.rank);
    }
    Ok(out)
}
