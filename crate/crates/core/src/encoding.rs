//! Sparse coordinate encoding of sentence graphs and the reconstruction loss.
//!
//! `W_s` is a `c×n` property matrix and `X_s` a `d×n×n` relation tensor.
//! Encoded graphs hold indicator cells (value 1); synthetic data may store
//! arbitrary real values. Unlisted cells are zero.

use std::collections::HashSet;
use std::io::{BufRead, Write};

use nalgebra::DMatrix;

use crate::corpus::SentenceGraph;
use crate::error::{BoveError, Result};
use crate::model::Hyperparams;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropertyEntry {
    pub predicate: usize,
    pub token: usize,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelationEntry {
    pub relation: usize,
    pub head: usize,
    pub dependent: usize,
    pub value: f64,
}

/// Coordinate-form `W_s` (`c×n`).
#[derive(Debug, Clone, PartialEq)]
pub struct SparsePropertyMatrix {
    c: usize,
    n: usize,
    entries: Vec<PropertyEntry>,
}

impl SparsePropertyMatrix {
    pub fn new(c: usize, n: usize, entries: Vec<PropertyEntry>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(entries.len());
        for e in &entries {
            if e.predicate >= c || e.token >= n {
                return Err(BoveError::Invalid(format!("W cell ({}, {}) outside {c}×{n}", e.predicate, e.token)));
            }
            if !e.value.is_finite() {
                return Err(BoveError::Invalid("non-finite W cell".into()));
            }
            if !seen.insert((e.predicate, e.token)) {
                return Err(BoveError::Invalid(format!("duplicate W cell ({}, {})", e.predicate, e.token)));
            }
        }
        Ok(SparsePropertyMatrix { c, n, entries })
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let entries = (0..m.nrows())
            .flat_map(|p| (0..m.ncols()).map(move |t| (p, t)))
            .filter(|&(p, t)| m[(p, t)] != 0.0)
            .map(|(p, t)| PropertyEntry { predicate: p, token: t, value: m[(p, t)] })
            .collect();
        SparsePropertyMatrix { c: m.nrows(), n: m.ncols(), entries }
    }

    pub fn num_predicates(&self) -> usize {
        self.c
    }

    pub fn num_tokens(&self) -> usize {
        self.n
    }

    pub fn entries(&self) -> &[PropertyEntry] {
        &self.entries
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.c, self.n);
        for e in &self.entries {
            m[(e.predicate, e.token)] = e.value;
        }
        m
    }

    /// Reorders tokens: token `t` moves to position `perm[t]`.
    pub fn permute_tokens(&self, perm: &[usize]) -> Self {
        let entries = self.entries.iter().map(|e| PropertyEntry { token: perm[e.token], ..*e }).collect();
        SparsePropertyMatrix { entries, ..*self }
    }
}

/// Coordinate-form `X_s` (`d×n×n`).
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRelationTensor {
    d: usize,
    n: usize,
    entries: Vec<RelationEntry>,
}

impl SparseRelationTensor {
    pub fn new(d: usize, n: usize, entries: Vec<RelationEntry>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(entries.len());
        for e in &entries {
            if e.relation >= d || e.head >= n || e.dependent >= n {
                return Err(BoveError::Invalid(format!(
                    "X cell ({}, {}, {}) outside {d}×{n}×{n}",
                    e.relation, e.head, e.dependent
                )));
            }
            if !e.value.is_finite() {
                return Err(BoveError::Invalid("non-finite X cell".into()));
            }
            if !seen.insert((e.relation, e.head, e.dependent)) {
                return Err(BoveError::Invalid(format!(
                    "duplicate X cell ({}, {}, {})",
                    e.relation, e.head, e.dependent
                )));
            }
        }
        Ok(SparseRelationTensor { d, n, entries })
    }

    pub fn from_dense(slices: &[DMatrix<f64>], n: usize) -> Self {
        let mut entries = Vec::new();
        for (k, s) in slices.iter().enumerate() {
            for h in 0..n {
                for t in 0..n {
                    if s[(h, t)] != 0.0 {
                        entries.push(RelationEntry { relation: k, head: h, dependent: t, value: s[(h, t)] });
                    }
                }
            }
        }
        SparseRelationTensor { d: slices.len(), n, entries }
    }

    pub fn num_relations(&self) -> usize {
        self.d
    }

    pub fn num_tokens(&self) -> usize {
        self.n
    }

    pub fn entries(&self) -> &[RelationEntry] {
        &self.entries
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    /// One dense `n×n` matrix per relation.
    pub fn to_dense(&self) -> Vec<DMatrix<f64>> {
        let mut slices = vec![DMatrix::zeros(self.n, self.n); self.d];
        for e in &self.entries {
            slices[e.relation][(e.head, e.dependent)] = e.value;
        }
        slices
    }

    pub fn permute_tokens(&self, perm: &[usize]) -> Self {
        let entries = self
            .entries
            .iter()
            .map(|e| RelationEntry { head: perm[e.head], dependent: perm[e.dependent], ..*e })
            .collect();
        SparseRelationTensor { entries, ..*self }
    }
}

/// The pair `(W_s, X_s)` for one sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceTensors {
    pub w: SparsePropertyMatrix,
    pub x: SparseRelationTensor,
}

impl SentenceTensors {
    pub fn new(w: SparsePropertyMatrix, x: SparseRelationTensor) -> Result<Self> {
        if w.n != x.n {
            return Err(BoveError::Dimension(format!("W has {} tokens but X has {}", w.n, x.n)));
        }
        Ok(SentenceTensors { w, x })
    }

    pub fn num_tokens(&self) -> usize {
        self.w.n
    }

    pub fn permute_tokens(&self, perm: &[usize]) -> Self {
        SentenceTensors { w: self.w.permute_tokens(perm), x: self.x.permute_tokens(perm) }
    }

    /// Coordinate dump: `W pred tok` / `X rel head dep` lines, with a trailing
    /// value only for cells that are not exactly 1.
    pub fn write_coordinates<W: Write>(&self, mut out: W) -> Result<()> {
        for e in &self.w.entries {
            if e.value == 1.0 {
                writeln!(out, "W {} {}", e.predicate, e.token)?;
            } else {
                writeln!(out, "W {} {} {}", e.predicate, e.token, e.value)?;
            }
        }
        for e in &self.x.entries {
            if e.value == 1.0 {
                writeln!(out, "X {} {} {}", e.relation, e.head, e.dependent)?;
            } else {
                writeln!(out, "X {} {} {} {}", e.relation, e.head, e.dependent, e.value)?;
            }
        }
        Ok(())
    }
}

/// Indicator encoding of a graph: two `W` cells per token, one `X` cell per triple.
pub fn encode(graph: &SentenceGraph) -> Result<SentenceTensors> {
    graph.validate()?;
    let n = graph.len();
    let mut w = Vec::with_capacity(2 * n);
    for (t, preds) in graph.tokens.iter().enumerate() {
        w.push(PropertyEntry { predicate: preds.word, token: t, value: 1.0 });
        if preds.pos != preds.word {
            w.push(PropertyEntry { predicate: preds.pos, token: t, value: 1.0 });
        }
    }
    let x = graph
        .relations
        .iter()
        .map(|r| RelationEntry { relation: r.relation, head: r.head, dependent: r.dependent, value: 1.0 })
        .collect();
    SentenceTensors::new(
        SparsePropertyMatrix::new(graph.num_predicates, n, w)?,
        SparseRelationTensor::new(graph.num_relations, n, x)?,
    )
}

/// Separate data-fit terms of the objective for one sentence.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DataFit {
    /// `‖W − P·Eᵀ‖²` over all cells.
    pub properties: f64,
    /// `‖X − E·R·Eᵀ‖²` over all cells, unweighted.
    pub relations: f64,
}

impl DataFit {
    pub fn weighted(&self, alpha: f64) -> f64 {
        self.properties + alpha * self.relations
    }
}

pub(crate) fn check_dims(t: &SentenceTensors, p: &DMatrix<f64>, r: &[DMatrix<f64>], e: &DMatrix<f64>) -> Result<()> {
    let rank = p.ncols();
    let n = t.num_tokens();
    if p.nrows() != t.w.c {
        return Err(BoveError::Dimension(format!("P has {} rows, W has {} predicates", p.nrows(), t.w.c)));
    }
    if r.len() != t.x.d {
        return Err(BoveError::Dimension(format!("R has {} slices, X has {} relations", r.len(), t.x.d)));
    }
    if r.iter().any(|s| s.shape() != (rank, rank)) {
        return Err(BoveError::Dimension(format!("R slices must be {rank}×{rank}")));
    }
    if e.shape() != (n, rank) {
        return Err(BoveError::Dimension(format!("E is {:?}, expected {n}×{rank}", e.shape())));
    }
    Ok(())
}

/// Data-fit terms computed from the sparse storage. `ptp` is `PᵀP`, which
/// callers evaluating many sentences compute once.
pub(crate) fn data_fit_with_gram(
    t: &SentenceTensors,
    p: &DMatrix<f64>,
    ptp: &DMatrix<f64>,
    r: &[DMatrix<f64>],
    e: &DMatrix<f64>,
) -> DataFit {
    let n = t.num_tokens();
    let c = t.w.c;

    // Property term: stored cells exactly, unstored cells via ‖P·e_t‖² minus stored predictions.
    let mut per_token_stored = vec![0usize; n];
    let mut stored_pred_sq = vec![0.0; n];
    let mut properties = 0.0;
    for cell in &t.w.entries {
        let pred = p.row(cell.predicate).dot(&e.row(cell.token));
        properties += (cell.value - pred) * (cell.value - pred);
        per_token_stored[cell.token] += 1;
        stored_pred_sq[cell.token] += pred * pred;
    }
    for tok in 0..n {
        if per_token_stored[tok] == c {
            continue;
        }
        let et = e.row(tok);
        let total = (et * ptp).dot(&et);
        properties += (total - stored_pred_sq[tok]).max(0.0);
    }

    let mut relations = 0.0;
    if !r.is_empty() && n > 0 {
        let mut dense = t.x.to_dense();
        for (k, slice) in r.iter().enumerate() {
            let pred = e * slice * e.transpose();
            dense[k] -= pred;
            relations += dense[k].iter().map(|v| v * v).sum::<f64>();
        }
    }
    DataFit { properties, relations }
}

/// Eq.-3-style objective for one sentence: `‖W − P·Eᵀ‖² + α‖X − E·R·Eᵀ‖²`
/// over all cells, plus `λ_P‖P‖² + λ_R‖R‖² + λ_E‖E‖²` when
/// `include_regularizers` is set.
pub fn reconstruction_loss(
    t: &SentenceTensors,
    p: &DMatrix<f64>,
    r: &[DMatrix<f64>],
    e: &DMatrix<f64>,
    hyper: &Hyperparams,
    include_regularizers: bool,
) -> Result<f64> {
    check_dims(t, p, r, e)?;
    let ptp = p.transpose() * p;
    let fit = data_fit_with_gram(t, p, &ptp, r, e).weighted(hyper.alpha);
    if !include_regularizers {
        return Ok(fit);
    }
    let reg = hyper.lambda_p * p.norm_squared()
        + hyper.lambda_r * r.iter().map(|s| s.norm_squared()).sum::<f64>()
        + hyper.lambda_e * e.norm_squared();
    Ok(fit + reg)
}

/// A corpus of encoded sentences sharing `c` and `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorCorpus {
    pub num_predicates: usize,
    pub num_relations: usize,
    pub ids: Vec<String>,
    pub sentences: Vec<SentenceTensors>,
}

impl TensorCorpus {
    /// Text form: `dims c d`, then per sentence a `sentence id n` line
    /// followed by its coordinate dump and a blank line.
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "dims {} {}", self.num_predicates, self.num_relations)?;
        for (id, s) in self.ids.iter().zip(&self.sentences) {
            writeln!(out, "sentence {} {}", id, s.num_tokens())?;
            s.write_coordinates(&mut out)?;
            writeln!(out)?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(reader: R) -> Result<Self> {
        let mut dims: Option<(usize, usize)> = None;
        let mut ids = Vec::new();
        let mut sentences = Vec::new();
        let mut pending: Option<(usize, Vec<PropertyEntry>, Vec<RelationEntry>)> = None;
        let mut pending_line = 0;

        let flush = |pending: &mut Option<(usize, Vec<PropertyEntry>, Vec<RelationEntry>)>,
                     sentences: &mut Vec<SentenceTensors>,
                     dims: (usize, usize),
                     line: usize|
         -> Result<()> {
            if let Some((n, w, x)) = pending.take() {
                let wrap = |e: BoveError| BoveError::Parse { line, message: e.to_string() };
                let w = SparsePropertyMatrix::new(dims.0, n, w).map_err(wrap)?;
                let x = SparseRelationTensor::new(dims.1, n, x).map_err(wrap)?;
                sentences.push(SentenceTensors { w, x });
            }
            Ok(())
        };

        for (lineno, line) in reader.lines().enumerate() {
            let lineno = lineno + 1;
            let line = line?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() || fields[0].starts_with('#') {
                continue;
            }
            let bad = |message: String| BoveError::Parse { line: lineno, message };
            let num = |s: &str| s.parse::<usize>().map_err(|_| bad(format!("bad integer {s:?}")));
            let val = |fields: &[&str], at: usize| -> Result<f64> {
                match fields.get(at) {
                    None => Ok(1.0),
                    Some(s) => s.parse::<f64>().map_err(|_| bad(format!("bad value {s:?}"))),
                }
            };
            match fields[0] {
                "dims" if fields.len() == 3 => dims = Some((num(fields[1])?, num(fields[2])?)),
                "sentence" if fields.len() == 3 => {
                    let d = dims.ok_or_else(|| bad("sentence before dims".into()))?;
                    flush(&mut pending, &mut sentences, d, pending_line)?;
                    ids.push(fields[1].to_string());
                    pending = Some((num(fields[2])?, Vec::new(), Vec::new()));
                    pending_line = lineno;
                }
                "W" if fields.len() == 3 || fields.len() == 4 => {
                    let cur = pending.as_mut().ok_or_else(|| bad("cell before sentence".into()))?;
                    cur.1.push(PropertyEntry {
                        predicate: num(fields[1])?,
                        token: num(fields[2])?,
                        value: val(&fields, 3)?,
                    });
                }
                "X" if fields.len() == 4 || fields.len() == 5 => {
                    let cur = pending.as_mut().ok_or_else(|| bad("cell before sentence".into()))?;
                    cur.2.push(RelationEntry {
                        relation: num(fields[1])?,
                        head: num(fields[2])?,
                        dependent: num(fields[3])?,
                        value: val(&fields, 4)?,
                    });
                }
                _ => return Err(bad(format!("unrecognized line {line:?}"))),
            }
        }
        let (num_predicates, num_relations) =
            dims.ok_or(BoveError::Truncated("tensor corpus lacks a dims line".into()))?;
        flush(&mut pending, &mut sentences, (num_predicates, num_relations), pending_line)?;
        Ok(TensorCorpus { num_predicates, num_relations, ids, sentences })
    }
}
