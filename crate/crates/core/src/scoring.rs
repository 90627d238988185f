//! Alignment scores between bags of vectors and the evaluation metrics used
//! on them.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{BoveError, Result};
use crate::model::TokenEmbeddings;

/// Cosine similarity; 0 when either vector has zero norm.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(BoveError::Dimension(format!("cosine of {}-vector and {}-vector", u.len(), v.len())));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Ok(0.0);
    }
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

/// How well `premise` entails `hypothesis`: every hypothesis vector is
/// aligned to its best premise vector by cosine, and the alignment scores
/// are averaged over the hypothesis.
pub fn score_entailment(premise: &TokenEmbeddings, hypothesis: &TokenEmbeddings) -> Result<f64> {
    if premise.is_empty() || hypothesis.is_empty() {
        return Err(BoveError::Invalid("alignment score needs two non-empty bags".into()));
    }
    if premise.rank() != hypothesis.rank() {
        return Err(BoveError::Dimension(format!("bags of size {} and {}", premise.rank(), hypothesis.rank())));
    }
    let prem: Vec<Vec<f64>> = (0..premise.len()).map(|i| premise.row(i)).collect();
    let mut total = 0.0;
    for j in 0..hypothesis.len() {
        let h = hypothesis.row(j);
        let mut best = f64::NEG_INFINITY;
        for p in &prem {
            best = best.max(cosine(p, &h)?);
        }
        total += best;
    }
    Ok(total / hypothesis.len() as f64)
}

/// Harmonic mean of the two directional entailment scores. Clamped to 0
/// when either direction is non-positive.
pub fn score_similarity(a: &TokenEmbeddings, b: &TokenEmbeddings) -> Result<f64> {
    let ab = score_entailment(a, b)?;
    let ba = score_entailment(b, a)?;
    Ok(harmonic_mean(ab, ba))
}

pub fn harmonic_mean(a: f64, b: f64) -> f64 {
    if a <= 0.0 || b <= 0.0 {
        return 0.0;
    }
    2.0 * a * b / (a + b)
}

/// Sample Pearson correlation.
pub fn pearson(gold: &[f64], pred: &[f64]) -> Result<f64> {
    if gold.len() != pred.len() {
        return Err(BoveError::Dimension(format!("{} gold values, {} predictions", gold.len(), pred.len())));
    }
    if gold.len() < 2 {
        return Err(BoveError::Invalid("Pearson correlation needs at least two pairs".into()));
    }
    let n = gold.len() as f64;
    let mg = gold.iter().sum::<f64>() / n;
    let mp = pred.iter().sum::<f64>() / n;
    let (mut cov, mut vg, mut vp) = (0.0, 0.0, 0.0);
    for (g, p) in gold.iter().zip(pred) {
        let (dg, dp) = (g - mg, p - mp);
        cov += dg * dp;
        vg += dg * dg;
        vp += dp * dp;
    }
    if vg == 0.0 || vp == 0.0 {
        return Err(BoveError::Invalid("Pearson correlation is undefined for zero variance".into()));
    }
    Ok((cov / (vg.sqrt() * vp.sqrt())).clamp(-1.0, 1.0))
}

/// Average precision of a ranking given as relevance labels, best first.
pub fn average_precision(ranked: &[bool]) -> Result<f64> {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, &rel) in ranked.iter().enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    if hits == 0 {
        return Err(BoveError::Invalid("average precision needs at least one positive".into()));
    }
    Ok(sum / hits as f64)
}

/// Ranks `(score, label)` pairs by descending score; equal scores keep input
/// order.
pub fn rank_by_score(scored: &[(f64, bool)]) -> Vec<bool> {
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| scored[b].0.total_cmp(&scored[a].0));
    order.into_iter().map(|i| scored[i].1).collect()
}

/// Three-way entailment label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntailmentLabel {
    Entailment,
    Neutral,
    Contradiction,
}

impl EntailmentLabel {
    pub fn is_positive(self) -> bool {
        self == EntailmentLabel::Entailment
    }
}

impl fmt::Display for EntailmentLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EntailmentLabel::Entailment => "entailment",
            EntailmentLabel::Neutral => "neutral",
            EntailmentLabel::Contradiction => "contradiction",
        })
    }
}

impl FromStr for EntailmentLabel {
    type Err = BoveError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "entailment" => Ok(EntailmentLabel::Entailment),
            "neutral" => Ok(EntailmentLabel::Neutral),
            "contradiction" => Ok(EntailmentLabel::Contradiction),
            other => Err(BoveError::Invalid(format!("unknown entailment label {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Gold {
    Similarity(f64),
    Entailment(EntailmentLabel),
}

/// A scored sentence pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPair {
    pub id: String,
    pub subset: String,
    pub score: f64,
    pub gold: Gold,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Pearson,
    AveragePrecision,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Pearson => "pearson",
            Metric::AveragePrecision => "ap",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubsetResult {
    pub subset: String,
    pub value: f64,
    pub n: usize,
}

/// Per-subset metric values and their unweighted mean.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    pub metric: Metric,
    pub subsets: Vec<SubsetResult>,
    pub mean: f64,
}

impl EvaluationReport {
    fn from_subsets(metric: Metric, subsets: Vec<SubsetResult>) -> Self {
        let mean = subsets.iter().map(|s| s.value).sum::<f64>() / subsets.len() as f64;
        EvaluationReport { metric, subsets, mean }
    }

    /// `subset=… metric=… value=… n=…` lines, then the `mean` line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut total = 0;
        for s in &self.subsets {
            out.push_str(&format!("subset={} metric={} value={} n={}\n", s.subset, self.metric, s.value, s.n));
            total += s.n;
        }
        out.push_str(&format!("subset=mean metric={} value={} n={}\n", self.metric, self.mean, total));
        out
    }
}

fn group_by_subset(pairs: &[ScoredPair]) -> BTreeMap<&str, Vec<&ScoredPair>> {
    let mut groups: BTreeMap<&str, Vec<&ScoredPair>> = BTreeMap::new();
    for p in pairs {
        groups.entry(p.subset.as_str()).or_default().push(p);
    }
    groups
}

/// Pearson correlation per subset and its unweighted mean.
pub fn evaluate_sts(pairs: &[ScoredPair]) -> Result<EvaluationReport> {
    if pairs.is_empty() {
        return Err(BoveError::Invalid("no pairs to evaluate".into()));
    }
    let mut subsets = Vec::new();
    for (name, group) in group_by_subset(pairs) {
        let mut gold = Vec::with_capacity(group.len());
        for p in &group {
            match p.gold {
                Gold::Similarity(g) => gold.push(g),
                Gold::Entailment(_) => {
                    return Err(BoveError::Invalid(format!("pair {} has an entailment label in STS mode", p.id)))
                }
            }
        }
        let pred: Vec<f64> = group.iter().map(|p| p.score).collect();
        let value = pearson(&gold, &pred)?;
        subsets.push(SubsetResult { subset: name.to_string(), value, n: group.len() });
    }
    Ok(EvaluationReport::from_subsets(Metric::Pearson, subsets))
}

/// Average precision of the score ranking per subset, with entailment as
/// the positive class and neutral/contradiction merged as negatives.
pub fn evaluate_snli(pairs: &[ScoredPair]) -> Result<EvaluationReport> {
    if pairs.is_empty() {
        return Err(BoveError::Invalid("no pairs to evaluate".into()));
    }
    let mut subsets = Vec::new();
    for (name, group) in group_by_subset(pairs) {
        let mut scored = Vec::with_capacity(group.len());
        for p in &group {
            match p.gold {
                Gold::Entailment(label) => scored.push((p.score, label.is_positive())),
                Gold::Similarity(_) => {
                    return Err(BoveError::Invalid(format!("pair {} has a numeric gold score in SNLI mode", p.id)))
                }
            }
        }
        let value = average_precision(&rank_by_score(&scored))?;
        subsets.push(SubsetResult { subset: name.to_string(), value, n: group.len() });
    }
    Ok(EvaluationReport::from_subsets(Metric::AveragePrecision, subsets))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn bag(rows: &[&[f64]]) -> TokenEmbeddings {
        let r = rows[0].len();
        TokenEmbeddings(DMatrix::from_row_iterator(rows.len(), r, rows.iter().flat_map(|x| x.iter().copied())))
    }

    #[test]
    fn cosine_cases() {
        assert!((cosine(&[0.3, -2.0], &[0.3, -2.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!(cosine(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn entailment_cases() {
        let a = bag(&[&[1.0, 2.0], &[-0.5, 0.1]]);
        assert!((score_entailment(&a, &a).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(score_entailment(&bag(&[&[1.0, 0.0]]), &bag(&[&[0.0, 1.0]])).unwrap(), 0.0);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let got = score_entailment(&bag(&[&[1.0, 0.0], &[0.0, 1.0]]), &bag(&[&[s, s]])).unwrap();
        assert!((got - s).abs() < 1e-15);
        let empty = TokenEmbeddings(DMatrix::zeros(0, 2));
        assert!(score_entailment(&a, &empty).is_err());
        assert!(score_entailment(&empty, &a).is_err());
    }

    #[test]
    fn similarity_cases() {
        let a = bag(&[&[1.0, 2.0], &[-0.5, 0.1]]);
        assert!((score_similarity(&a, &a).unwrap() - 1.0).abs() < 1e-15);
        assert!((harmonic_mean(0.4, 0.4) - 0.4).abs() < 1e-15);
        assert_eq!(harmonic_mean(-0.1, 0.9), 0.0);
    }

    #[test]
    fn pearson_cases() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
        assert!((pearson(&[0.0, 1.0, 1.0], &[0.0, 0.0, 1.0]).unwrap() - 0.5).abs() < 1e-12);
        assert!(pearson(&[1.0, 1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn ap_cases() {
        assert_eq!(average_precision(&[true, true, false]).unwrap(), 1.0);
        assert!((average_precision(&[true, false, true]).unwrap() - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        assert_eq!(average_precision(&[true]).unwrap(), 1.0);
        assert!(average_precision(&[false, false]).is_err());
    }

    #[test]
    fn ties_keep_input_order() {
        assert_eq!(rank_by_score(&[(0.5, false), (0.5, true), (0.9, false)]), vec![false, false, true]);
    }

    fn snli(id: &str, score: f64, label: EntailmentLabel) -> ScoredPair {
        ScoredPair { id: id.into(), subset: "test".into(), score, gold: Gold::Entailment(label) }
    }

    fn sts(subset: &str, score: f64, gold: f64) -> ScoredPair {
        ScoredPair { id: format!("{subset}-{gold}"), subset: subset.into(), score, gold: Gold::Similarity(gold) }
    }

    #[test]
    fn snli_cases() {
        use EntailmentLabel::*;
        let all_pos = [snli("a", 0.3, Entailment), snli("b", 0.7, Entailment)];
        assert_eq!(evaluate_snli(&all_pos).unwrap().mean, 1.0);
        assert_eq!(evaluate_snli(&[snli("a", 0.9, Entailment), snli("b", 0.1, Neutral)]).unwrap().mean, 1.0);
        assert_eq!(evaluate_snli(&[snli("a", 0.9, Neutral), snli("b", 0.1, Entailment)]).unwrap().mean, 0.5);
        assert!(evaluate_snli(&[snli("a", 0.9, Neutral), snli("b", 0.1, Contradiction)]).is_err());
    }

    #[test]
    fn sts_cases() {
        let one = [sts("x", 1.0, 2.0), sts("x", 2.0, 3.0), sts("x", 5.0, 4.0)];
        let r = evaluate_sts(&one).unwrap();
        assert_eq!(r.mean, r.subsets[0].value);

        let exact: Vec<_> = [0.0, 1.5, 3.0, 5.0].iter().map(|&g| sts("y", g, g)).collect();
        assert!((evaluate_sts(&exact).unwrap().mean - 1.0).abs() < 1e-15);

        // Pearson 0.5 and 1.0 subsets average to 0.75.
        let mut two = vec![sts("a", 0.0, 0.0), sts("a", 0.0, 1.0), sts("a", 1.0, 1.0)];
        two.extend(exact);
        let r = evaluate_sts(&two).unwrap();
        assert!((r.mean - 0.75).abs() < 1e-12);
        assert!(r.to_text().contains("subset=a metric=pearson value="));
        assert!(r.to_text().ends_with("n=7\n"));
    }

    fn arb_bag(max_rows: usize) -> impl Strategy<Value = TokenEmbeddings> {
        (1..=max_rows).prop_flat_map(|n| {
            proptest::collection::vec(-5.0f64..5.0, n * 3)
                .prop_map(move |v| TokenEmbeddings(DMatrix::from_row_slice(n, 3, &v)))
        })
    }

    proptest! {
        #[test]
        fn entailment_is_row_permutation_invariant(a in arb_bag(5), b in arb_bag(5), rot in 0usize..5) {
            let s = score_entailment(&a, &b).unwrap();
            let n = a.len();
            let rotated = TokenEmbeddings(DMatrix::from_fn(n, 3, |i, j| a.0[((i + rot) % n, j)]));
            let s2 = score_entailment(&rotated, &b).unwrap();
            prop_assert!((s - s2).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&s));
        }

        #[test]
        fn extra_premise_row_never_hurts(a in arb_bag(4), b in arb_bag(4), extra in proptest::collection::vec(-5.0f64..5.0, 3)) {
            let mut rows = a.0.clone().insert_row(a.len(), 0.0);
            for j in 0..3 { rows[(a.len(), j)] = extra[j]; }
            prop_assert!(score_entailment(&TokenEmbeddings(rows), &b).unwrap() >= score_entailment(&a, &b).unwrap());
        }

        #[test]
        fn similarity_is_bit_symmetric(a in arb_bag(4), b in arb_bag(4)) {
            prop_assert_eq!(score_similarity(&a, &b).unwrap().to_bits(), score_similarity(&b, &a).unwrap().to_bits());
        }

        #[test]
        fn pearson_affine_invariance(
            xs in proptest::collection::vec(-10.0f64..10.0, 3..20),
            scale in 0.1f64..10.0, shift in -5.0f64..5.0,
        ) {
            let ys: Vec<f64> = xs.iter().enumerate().map(|(i, x)| x * x + i as f64).collect();
            if let Ok(base) = pearson(&xs, &ys) {
                let moved: Vec<f64> = ys.iter().map(|y| scale * y + shift).collect();
                prop_assert!((pearson(&xs, &moved).unwrap() - base).abs() < 1e-12);
            }
        }

        #[test]
        fn ap_invariant_under_monotone_transform(
            scored in proptest::collection::vec((-3.0f64..3.0, any::<bool>()), 1..30),
        ) {
            if scored.iter().any(|s| s.1) {
                let base = average_precision(&rank_by_score(&scored)).unwrap();
                let moved: Vec<_> = scored.iter().map(|&(s, l)| (s.exp() * 2.0 + 1.0, l)).collect();
                prop_assert_eq!(average_precision(&rank_by_score(&moved)).unwrap(), base);
            }
        }
    }
}
