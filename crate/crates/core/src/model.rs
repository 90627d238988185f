//! Learned type embeddings, per-sentence token embeddings, hyperparameters,
//! and their on-disk formats.

use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::io::{BufRead, Read, Write};
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Namespace, Vocabulary};
use crate::error::{BoveError, Result};

/// Regularizer applied to the relation matrices after each ALS update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RRegularizer {
    /// Ridge term inside the closed-form solve only.
    #[default]
    L2,
    /// Entrywise soft-thresholding by `lambda_r`.
    L1,
    /// Singular-value soft-thresholding of each slice by `lambda_r`.
    Nuclear,
}

impl fmt::Display for RRegularizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RRegularizer::L2 => "l2",
            RRegularizer::L1 => "l1",
            RRegularizer::Nuclear => "nuclear",
        })
    }
}

impl FromStr for RRegularizer {
    type Err = BoveError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l2" => Ok(RRegularizer::L2),
            "l1" => Ok(RRegularizer::L1),
            "nuclear" => Ok(RRegularizer::Nuclear),
            other => Err(BoveError::Invalid(format!("unknown regularizer {other:?}"))),
        }
    }
}

/// How `inference_iters` is counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IterationCounting {
    /// Every least-squares solve counts as one iteration.
    #[default]
    RawSolves,
    /// After the first solve, each two-solve averaged step counts as one.
    AveragedPairs,
}

impl fmt::Display for IterationCounting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            IterationCounting::RawSolves => "raw",
            IterationCounting::AveragedPairs => "pairs",
        })
    }
}

impl FromStr for IterationCounting {
    type Err = BoveError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(IterationCounting::RawSolves),
            "pairs" => Ok(IterationCounting::AveragedPairs),
            other => Err(BoveError::Invalid(format!("unknown iteration counting {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparams {
    /// Embedding size.
    pub r: usize,
    /// Weight of the relation reconstruction term.
    pub alpha: f64,
    pub lambda_p: f64,
    pub lambda_r: f64,
    pub lambda_e: f64,
    pub r_regularizer: RRegularizer,
    pub inference_iters: usize,
    pub iteration_counting: IterationCounting,
    /// Training stops once a round improves the objective by at most this fraction.
    pub rel_improvement_stop: f64,
    /// Rounds between resets of all token embeddings to zero; 0 disables.
    pub e_reinit_period: usize,
    /// Averaged E steps run right after a reset.
    pub e_reinit_burst: usize,
    pub max_rounds: usize,
    /// Largest `r` the ALS relation update accepts.
    pub r_cap: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            r: 50,
            alpha: 1.0,
            lambda_p: 0.1,
            lambda_r: 0.1,
            lambda_e: 0.1,
            r_regularizer: RRegularizer::L2,
            inference_iters: 30,
            iteration_counting: IterationCounting::RawSolves,
            rel_improvement_stop: 0.001,
            e_reinit_period: 10,
            e_reinit_burst: 5,
            max_rounds: 200,
            r_cap: 100,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(BoveError::Invalid(m.to_string()));
        if self.r == 0 {
            return bad("r must be at least 1");
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be a finite non-negative number");
        }
        for (name, v) in [("lambda_p", self.lambda_p), ("lambda_r", self.lambda_r), ("lambda_e", self.lambda_e)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(BoveError::Invalid(format!("{name} must be a finite non-negative number")));
            }
        }
        if self.inference_iters == 0 {
            return bad("inference_iters must be at least 1");
        }
        if self.rel_improvement_stop.is_nan() || self.rel_improvement_stop < 0.0 {
            return bad("rel_improvement_stop must be non-negative");
        }
        Ok(())
    }

    /// Serializes as `key=value` lines. Floats use the shortest text that
    /// parses back to the same bits.
    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            s.push_str(k);
            s.push('=');
            s.push_str(&v);
            s.push('\n');
        };
        put("r", self.r.to_string());
        put("alpha", self.alpha.to_string());
        put("lambda_p", self.lambda_p.to_string());
        put("lambda_r", self.lambda_r.to_string());
        put("lambda_e", self.lambda_e.to_string());
        put("r_regularizer", self.r_regularizer.to_string());
        put("inference_iters", self.inference_iters.to_string());
        put("iteration_counting", self.iteration_counting.to_string());
        put("rel_improvement_stop", self.rel_improvement_stop.to_string());
        put("e_reinit_period", self.e_reinit_period.to_string());
        put("e_reinit_burst", self.e_reinit_burst.to_string());
        put("max_rounds", self.max_rounds.to_string());
        put("r_cap", self.r_cap.to_string());
        s
    }

    /// Applies one `key=value` setting. Unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
            value.trim().parse().map_err(|_| BoveError::Invalid(format!("bad value {value:?} for {key}")))
        }
        match key {
            "r" => self.r = num(key, value)?,
            "alpha" => self.alpha = num(key, value)?,
            "lambda_p" => self.lambda_p = num(key, value)?,
            "lambda_r" => self.lambda_r = num(key, value)?,
            "lambda_e" => self.lambda_e = num(key, value)?,
            "r_regularizer" => self.r_regularizer = value.trim().parse()?,
            "inference_iters" => self.inference_iters = num(key, value)?,
            "iteration_counting" => self.iteration_counting = value.trim().parse()?,
            "rel_improvement_stop" => self.rel_improvement_stop = num(key, value)?,
            "e_reinit_period" => self.e_reinit_period = num(key, value)?,
            "e_reinit_burst" => self.e_reinit_burst = num(key, value)?,
            "max_rounds" => self.max_rounds = num(key, value)?,
            "r_cap" => self.r_cap = num(key, value)?,
            other => return Err(BoveError::Invalid(format!("unknown hyperparameter {other:?}"))),
        }
        Ok(())
    }

    pub fn from_key_values(text: &str) -> Result<Self> {
        let mut h = Hyperparams::default();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) =
                line.split_once('=').ok_or_else(|| BoveError::Format(format!("bad hyperparameter line {line:?}")))?;
            h.set(k.trim(), v)?;
        }
        Ok(h)
    }
}

/// Type embeddings: a vector per predicate and a matrix per relation.
#[derive(Debug, Clone, PartialEq)]
pub struct TypeEmbeddings {
    /// `c×r`, row `i` embeds predicate `i`.
    pub p: DMatrix<f64>,
    /// `d` slices of `r×r`.
    pub r: Vec<DMatrix<f64>>,
    /// Rows of `p` that no trainer may modify.
    pub frozen: Vec<bool>,
}

impl TypeEmbeddings {
    /// Random `P` (uniform in `±0.5/r`), zero `R`, nothing frozen.
    pub fn init(c: usize, d: usize, rank: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 0.5 / rank as f64;
        let mut p = DMatrix::zeros(c, rank);
        for i in 0..c {
            for j in 0..rank {
                p[(i, j)] = rng.random_range(-scale..=scale);
            }
        }
        TypeEmbeddings { p, r: vec![DMatrix::zeros(rank, rank); d], frozen: vec![false; c] }
    }

    pub fn num_predicates(&self) -> usize {
        self.p.nrows()
    }

    pub fn num_relations(&self) -> usize {
        self.r.len()
    }

    pub fn rank(&self) -> usize {
        self.p.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let rank = self.rank();
        if self.frozen.len() != self.p.nrows() {
            return Err(BoveError::Dimension("frozen mask length differs from P rows".into()));
        }
        if self.r.iter().any(|s| s.shape() != (rank, rank)) {
            return Err(BoveError::Dimension(format!("relation slices must be {rank}×{rank}")));
        }
        Ok(())
    }

    /// Hash of the bit patterns of every frozen row.
    pub fn frozen_fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for (i, &f) in self.frozen.iter().enumerate() {
            if f {
                i.hash(&mut h);
                for v in self.p.row(i).iter() {
                    v.to_bits().hash(&mut h);
                }
            }
        }
        h.finish()
    }
}

pub fn init_for_training(vocab: &Vocabulary, hyper: &Hyperparams, seed: u64) -> TypeEmbeddings {
    TypeEmbeddings::init(vocab.num_predicates(), vocab.num_relations(), hyper.r, seed)
}

/// Overwrites and freezes `P` rows of word predicates found in a text
/// word-vector file (`count dim` header, then `word f1 … fdim`). Returns the
/// number of rows frozen.
pub fn load_pretrained<R: BufRead>(model: &mut TypeEmbeddings, reader: R, vocab: &Vocabulary) -> Result<usize> {
    let rank = model.rank();
    if vocab.num_predicates() != model.num_predicates() {
        return Err(BoveError::Dimension("vocabulary and model disagree on c".into()));
    }
    let mut lines = reader.lines();
    let header = lines.next().ok_or(BoveError::Truncated("empty word-vector file".into()))??;
    let mut parts = header.split_whitespace();
    let (_, dim) = match (parts.next(), parts.next(), parts.next()) {
        (Some(a), Some(b), None) => {
            let a: usize = a.parse().map_err(|_| BoveError::Parse { line: 1, message: "bad header".into() })?;
            let b: usize = b.parse().map_err(|_| BoveError::Parse { line: 1, message: "bad header".into() })?;
            (a, b)
        }
        _ => return Err(BoveError::Parse { line: 1, message: "expected \"<count> <dim>\" header".into() }),
    };
    if dim != rank {
        return Err(BoveError::Dimension(format!("word vectors have dimension {dim}, model has r={rank}")));
    }
    let mut frozen = 0;
    for (i, line) in lines.enumerate() {
        let line = line?;
        let mut fields = line.split_whitespace();
        let Some(word) = fields.next() else { continue };
        let Some(id) = vocab.predicate_id(Namespace::Word, word) else { continue };
        let values: Vec<f64> = fields
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| BoveError::Parse { line: i + 2, message: format!("bad float in vector for {word:?}") })?;
        if values.len() != dim {
            return Err(BoveError::Parse {
                line: i + 2,
                message: format!("expected {dim} values, found {}", values.len()),
            });
        }
        for (j, v) in values.into_iter().enumerate() {
            model.p[(id, j)] = v;
        }
        if !model.frozen[id] {
            model.frozen[id] = true;
            frozen += 1;
        }
    }
    Ok(frozen)
}

/// Per-sentence token embeddings `E_s` (`n×r`); its rows are the bag.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenEmbeddings(pub DMatrix<f64>);

impl TokenEmbeddings {
    pub fn zeros(n: usize, rank: usize) -> Self {
        TokenEmbeddings(DMatrix::zeros(n, rank))
    }

    pub fn len(&self) -> usize {
        self.0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.nrows() == 0
    }

    pub fn rank(&self) -> usize {
        self.0.ncols()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.0.row(i).iter().copied().collect()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }
}

const MODEL_MAGIC: &[u8; 4] = b"BOVE";
const MODEL_VERSION: u32 = 1;
const BAGS_MAGIC: &[u8; 4] = b"BOVB";
const BAGS_VERSION: u32 = 1;

/// Binary model file:
///
/// ```text
/// "BOVE" | version u32 | c u64 | d u64 | r u64 | frozen mask (ceil(c/8) bytes, LSB first)
/// | P (c·r f64) | R (d·r·r f64) | hyper block length u64 | hyper block (UTF-8 key=value)
/// | CRC32 of every byte after the version
/// ```
///
/// All integers and floats little-endian; matrices row-major.
pub fn save_model<W: Write>(mut out: W, model: &TypeEmbeddings, hyper: &Hyperparams) -> Result<()> {
    model.validate()?;
    let (c, d, rank) = (model.num_predicates(), model.num_relations(), model.rank());
    let mut payload = Vec::with_capacity(24 + c.div_ceil(8) + 8 * (c * rank + d * rank * rank));
    payload.extend_from_slice(&(c as u64).to_le_bytes());
    payload.extend_from_slice(&(d as u64).to_le_bytes());
    payload.extend_from_slice(&(rank as u64).to_le_bytes());
    let mut mask = vec![0u8; c.div_ceil(8)];
    for (i, &f) in model.frozen.iter().enumerate() {
        if f {
            mask[i / 8] |= 1 << (i % 8);
        }
    }
    payload.extend_from_slice(&mask);
    for i in 0..c {
        for j in 0..rank {
            payload.extend_from_slice(&model.p[(i, j)].to_le_bytes());
        }
    }
    for slice in &model.r {
        for i in 0..rank {
            for j in 0..rank {
                payload.extend_from_slice(&slice[(i, j)].to_le_bytes());
            }
        }
    }
    let block = hyper.to_key_values();
    payload.extend_from_slice(&(block.len() as u64).to_le_bytes());
    payload.extend_from_slice(block.as_bytes());

    out.write_all(MODEL_MAGIC)?;
    out.write_all(&MODEL_VERSION.to_le_bytes())?;
    out.write_all(&payload)?;
    out.write_all(&crc32fast::hash(&payload).to_le_bytes())?;
    Ok(())
}

struct ByteCursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteCursor<'a> {
    fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < len {
            return Err(BoveError::Truncated(format!("file ends inside {what}")));
        }
        let s = &self.buf[self.pos..self.pos + len];
        self.pos += len;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn usize(&mut self, what: &str) -> Result<usize> {
        usize::try_from(self.u64(what)?).map_err(|_| BoveError::Format(format!("{what} too large")))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn string_u32(&mut self, what: &str) -> Result<String> {
        let len = self.u32(what)? as usize;
        String::from_utf8(self.take(len, what)?.to_vec()).map_err(|_| BoveError::Format(format!("{what} is not UTF-8")))
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

fn check_header(bytes: &[u8], magic: &[u8; 4], version: u32) -> Result<()> {
    if bytes.len() < 4 {
        if magic.starts_with(bytes) {
            return Err(BoveError::Truncated("file ends inside the magic bytes".into()));
        }
        return Err(BoveError::Format("bad magic bytes".into()));
    }
    if &bytes[..4] != magic {
        return Err(BoveError::Format("bad magic bytes".into()));
    }
    if bytes.len() < 8 {
        return Err(BoveError::Truncated("file ends inside the version".into()));
    }
    let found = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if found != version {
        return Err(BoveError::Version(found));
    }
    Ok(())
}

pub fn load_model<R: Read>(mut input: R) -> Result<(TypeEmbeddings, Hyperparams)> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    check_header(&bytes, MODEL_MAGIC, MODEL_VERSION)?;
    let body = &bytes[8..];
    let mut cur = ByteCursor { buf: body, pos: 0 };
    let c = cur.usize("header")?;
    let d = cur.usize("header")?;
    let rank = cur.usize("header")?;
    let floats = c
        .checked_mul(rank)
        .and_then(|pr| d.checked_mul(rank)?.checked_mul(rank)?.checked_add(pr))
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| BoveError::Format("dimensions overflow".into()))?;
    let mask_len = c.div_ceil(8);
    if cur.remaining() < mask_len.saturating_add(floats) {
        return Err(BoveError::Truncated("file ends inside the parameter block".into()));
    }
    let mask = cur.take(mask_len, "frozen mask")?.to_vec();
    let mut p = DMatrix::zeros(c, rank);
    for i in 0..c {
        for j in 0..rank {
            p[(i, j)] = cur.f64("P")?;
        }
    }
    let mut r = Vec::with_capacity(d);
    for _ in 0..d {
        let mut s = DMatrix::zeros(rank, rank);
        for i in 0..rank {
            for j in 0..rank {
                s[(i, j)] = cur.f64("R")?;
            }
        }
        r.push(s);
    }
    let block_len = cur.usize("hyperparameter block")?;
    let block = cur.take(block_len, "hyperparameter block")?;
    let payload_end = cur.pos;
    let stored = cur.u32("checksum")?;
    if cur.remaining() != 0 {
        return Err(BoveError::Format(format!("{} trailing bytes after checksum", cur.remaining())));
    }
    let computed = crc32fast::hash(&body[..payload_end]);
    if stored != computed {
        return Err(BoveError::Checksum { stored, computed });
    }
    let block =
        std::str::from_utf8(block).map_err(|_| BoveError::Format("hyperparameter block is not UTF-8".into()))?;
    let hyper = Hyperparams::from_key_values(block)?;
    let frozen = (0..c).map(|i| mask[i / 8] & (1 << (i % 8)) != 0).collect();
    Ok((TypeEmbeddings { p, r, frozen }, hyper))
}

/// One entry of an embedding-bag file.
#[derive(Debug, Clone, PartialEq)]
pub enum BagRecord {
    Bag {
        id: String,
        embeddings: TokenEmbeddings,
    },
    /// A sentence whose inference failed.
    Error {
        id: String,
        message: String,
    },
}

impl BagRecord {
    pub fn id(&self) -> &str {
        match self {
            BagRecord::Bag { id, .. } | BagRecord::Error { id, .. } => id,
        }
    }
}

/// Binary bag file:
///
/// ```text
/// "BOVB" | version u32 | count u64 | records…
/// record = kind u8 (0 bag, 1 error) | id (u32 length + UTF-8)
///        | bag: n u64 | r u64 | n·r f64 row-major
///        | error: message (u32 length + UTF-8)
/// ```
pub fn write_bags<W: Write>(mut out: W, records: &[BagRecord]) -> Result<()> {
    let put_str = |out: &mut W, s: &str| -> Result<()> {
        out.write_all(&(s.len() as u32).to_le_bytes())?;
        out.write_all(s.as_bytes())?;
        Ok(())
    };
    out.write_all(BAGS_MAGIC)?;
    out.write_all(&BAGS_VERSION.to_le_bytes())?;
    out.write_all(&(records.len() as u64).to_le_bytes())?;
    for rec in records {
        match rec {
            BagRecord::Bag { id, embeddings } => {
                out.write_all(&[0])?;
                put_str(&mut out, id)?;
                let m = embeddings.matrix();
                out.write_all(&(m.nrows() as u64).to_le_bytes())?;
                out.write_all(&(m.ncols() as u64).to_le_bytes())?;
                for i in 0..m.nrows() {
                    for j in 0..m.ncols() {
                        out.write_all(&m[(i, j)].to_le_bytes())?;
                    }
                }
            }
            BagRecord::Error { id, message } => {
                out.write_all(&[1])?;
                put_str(&mut out, id)?;
                put_str(&mut out, message)?;
            }
        }
    }
    Ok(())
}

pub fn read_bags<R: Read>(mut input: R) -> Result<Vec<BagRecord>> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    check_header(&bytes, BAGS_MAGIC, BAGS_VERSION)?;
    let mut cur = ByteCursor { buf: &bytes[8..], pos: 0 };
    let count = cur.usize("record count")?;
    let mut records = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let kind = cur.u8("record kind")?;
        let id = cur.string_u32("sentence id")?;
        match kind {
            0 => {
                let n = cur.usize("bag shape")?;
                let rank = cur.usize("bag shape")?;
                if cur.remaining() / 8 < n.saturating_mul(rank) {
                    return Err(BoveError::Truncated(format!("bag {id:?} is cut short")));
                }
                let mut m = DMatrix::zeros(n, rank);
                for i in 0..n {
                    for j in 0..rank {
                        m[(i, j)] = cur.f64("bag")?;
                    }
                }
                records.push(BagRecord::Bag { id, embeddings: TokenEmbeddings(m) });
            }
            1 => {
                let message = cur.string_u32("error message")?;
                records.push(BagRecord::Error { id, message });
            }
            other => return Err(BoveError::Format(format!("unknown record kind {other}"))),
        }
    }
    if cur.remaining() != 0 {
        return Err(BoveError::Format("trailing bytes after last record".into()));
    }
    Ok(records)
}

/// Bags keyed by sentence id; error records are skipped.
pub fn bags_by_id(records: Vec<BagRecord>) -> HashMap<String, TokenEmbeddings> {
    records
        .into_iter()
        .filter_map(|r| match r {
            BagRecord::Bag { id, embeddings } => Some((id, embeddings)),
            BagRecord::Error { .. } => None,
        })
        .collect()
}
