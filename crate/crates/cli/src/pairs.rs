//! Tab-separated pair and score files.
//!
//! Pair file: `id \t sentence1_id \t sentence2_id \t gold [\t subset]`.
//! Score file: `id \t subset \t score \t gold`.

use std::io::{BufRead, Write};

use bove::scoring::{EntailmentLabel, Gold, ScoredPair};

use crate::config::ScoreMode;
use crate::CliError;

/// Subset name for pair lines without a fifth column.
pub const DEFAULT_SUBSET: &str = "all";

#[derive(Debug, Clone, PartialEq)]
pub struct PairLine {
    pub id: String,
    pub first: String,
    pub second: String,
    pub gold: Gold,
    pub subset: String,
}

fn parse_gold(field: &str, mode: ScoreMode, line: usize) -> Result<Gold, CliError> {
    match mode {
        ScoreMode::Sts => field
            .parse::<f64>()
            .ok()
            .filter(|g| g.is_finite())
            .map(Gold::Similarity)
            .ok_or_else(|| CliError::Data(format!("line {line}: gold {field:?} is not a number"))),
        ScoreMode::Snli => field
            .parse::<EntailmentLabel>()
            .map(Gold::Entailment)
            .map_err(|e| CliError::Data(format!("line {line}: {e}"))),
    }
}

fn format_gold(gold: &Gold) -> String {
    match gold {
        Gold::Similarity(g) => g.to_string(),
        Gold::Entailment(label) => label.to_string(),
    }
}

fn lines<R: BufRead>(reader: R) -> impl Iterator<Item = (usize, std::io::Result<String>)> {
    reader.lines().enumerate().map(|(i, l)| (i + 1, l))
}

pub fn read_pairs<R: BufRead>(reader: R, mode: ScoreMode) -> Result<Vec<PairLine>, CliError> {
    let mut pairs = Vec::new();
    for (lineno, line) in lines(reader) {
        let line = line.map_err(|e| CliError::Data(e.to_string()))?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if !(4..=5).contains(&fields.len()) {
            return Err(CliError::Data(format!("pair line {lineno}: expected 4 or 5 tab-separated columns")));
        }
        pairs.push(PairLine {
            id: fields[0].to_string(),
            first: fields[1].to_string(),
            second: fields[2].to_string(),
            gold: parse_gold(fields[3], mode, lineno)?,
            subset: fields.get(4).map_or(DEFAULT_SUBSET, |s| s).to_string(),
        });
    }
    Ok(pairs)
}

pub fn write_scores<W: Write>(mut out: W, scored: &[ScoredPair]) -> std::io::Result<()> {
    for p in scored {
        writeln!(out, "{}\t{}\t{}\t{}", p.id, p.subset, p.score, format_gold(&p.gold))?;
    }
    Ok(())
}

pub fn read_scores<R: BufRead>(reader: R, mode: ScoreMode) -> Result<Vec<ScoredPair>, CliError> {
    let mut scored = Vec::new();
    for (lineno, line) in lines(reader) {
        let line = line.map_err(|e| CliError::Data(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(CliError::Data(format!("score line {lineno}: expected 4 tab-separated columns")));
        }
        let score = fields[2]
            .parse::<f64>()
            .map_err(|_| CliError::Data(format!("score line {lineno}: bad score {:?}", fields[2])))?;
        scored.push(ScoredPair {
            id: fields[0].to_string(),
            subset: fields[1].to_string(),
            score,
            gold: parse_gold(fields[3], mode, lineno)?,
        });
    }
    Ok(scored)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_lines_with_and_without_subset() {
        let text = "p1\ta\tb\t3.5\tnews\np2\tb\tc\t1\n\n";
        let pairs = read_pairs(text.as_bytes(), ScoreMode::Sts).unwrap();
        assert_eq!(pairs[0].subset, "news");
        assert_eq!(pairs[1].subset, DEFAULT_SUBSET);
        assert_eq!(pairs[1].gold, Gold::Similarity(1.0));
    }

    #[test]
    fn gold_must_fit_the_mode() {
        assert!(read_pairs("p\ta\tb\tentailment".as_bytes(), ScoreMode::Sts).is_err());
        assert!(read_pairs("p\ta\tb\t2.0".as_bytes(), ScoreMode::Snli).is_err());
        assert!(read_pairs("p\ta\tb".as_bytes(), ScoreMode::Sts).is_err());
    }

    #[test]
    fn scores_round_trip() {
        let scored = vec![
            ScoredPair {
                id: "x".into(),
                subset: "s".into(),
                score: 0.1 + 0.2,
                gold: Gold::Entailment(EntailmentLabel::Neutral),
            },
            ScoredPair {
                id: "y".into(),
                subset: "s".into(),
                score: -1.0,
                gold: Gold::Entailment(EntailmentLabel::Entailment),
            },
        ];
        let mut buf = Vec::new();
        write_scores(&mut buf, &scored).unwrap();
        assert_eq!(read_scores(buf.as_slice(), ScoreMode::Snli).unwrap(), scored);
    }
}
