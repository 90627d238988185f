//! Synthetic corpora generated from known type and token embeddings.
//!
//! Ground-truth entries are drawn from `Normal(0, r^(-1/4))`, which gives the
//! property products `P*·E*ᵀ` unit variance.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::encoding::{
    PropertyEntry, RelationEntry, SentenceTensors, SparsePropertyMatrix, SparseRelationTensor, TensorCorpus,
};
use crate::error::{BoveError, Result};
use crate::model::TypeEmbeddings;

/// How tensor cells are emitted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SynthMode {
    /// Real-valued products, every cell stored.
    Exact,
    /// Indicator of `product > threshold`; only ones are stored.
    Discrete { threshold: f64 },
}

impl fmt::Display for SynthMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SynthMode::Exact => f.write_str("exact"),
            SynthMode::Discrete { .. } => f.write_str("discrete"),
        }
    }
}

impl FromStr for SynthMode {
    type Err = BoveError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "exact" => Ok(SynthMode::Exact),
            "discrete" => Ok(SynthMode::Discrete { threshold: 0.5 }),
            other => Err(BoveError::Invalid(format!("unknown synth mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub num_sentences: usize,
    /// Tokens per sentence.
    pub tokens: usize,
    pub r: usize,
    pub c: usize,
    pub d: usize,
    pub mode: SynthMode,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { num_sentences: 10, tokens: 6, r: 6, c: 12, d: 3, mode: SynthMode::Exact, seed: 0 }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.r == 0 || self.tokens == 0 || self.c == 0 {
            return Err(BoveError::Invalid("synthetic r, tokens and c must be positive".into()));
        }
        if let SynthMode::Discrete { threshold } = self.mode {
            if !threshold.is_finite() {
                return Err(BoveError::Invalid("discrete threshold must be finite".into()));
            }
        }
        Ok(())
    }
}

/// A generated corpus with the parameters that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub truth: TypeEmbeddings,
    /// `E*_s` per sentence.
    pub token_embeddings: Vec<DMatrix<f64>>,
    pub corpus: TensorCorpus,
}

fn gaussian(rows: usize, cols: usize, normal: &Normal<f64>, rng: &mut impl Rng) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = normal.sample(rng);
        }
    }
    m
}

fn entry_distribution(r: usize) -> Normal<f64> {
    Normal::new(0.0, (r as f64).powf(-0.25)).expect("positive standard deviation")
}

/// Samples `P*` and `R*`.
pub fn ground_truth(c: usize, d: usize, r: usize, rng: &mut impl Rng) -> TypeEmbeddings {
    let normal = entry_distribution(r);
    let p = gaussian(c, r, &normal, rng);
    let slices = (0..d).map(|_| gaussian(r, r, &normal, rng)).collect();
    TypeEmbeddings { p, r: slices, frozen: vec![false; c] }
}

/// Samples an `n×r` token embedding matrix.
pub fn token_embeddings(n: usize, r: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    gaussian(n, r, &entry_distribution(r), rng)
}

/// Tensors of a sentence with embeddings `e` under `truth`.
pub fn emit_sentence(truth: &TypeEmbeddings, e: &DMatrix<f64>, mode: SynthMode) -> SentenceTensors {
    let n = e.nrows();
    let w = &truth.p * e.transpose();
    let keep = |v: f64| -> Option<f64> {
        match mode {
            SynthMode::Exact => Some(v),
            SynthMode::Discrete { threshold } => (v > threshold).then_some(1.0),
        }
    };
    let mut w_cells = Vec::new();
    for p in 0..w.nrows() {
        for t in 0..n {
            if let Some(value) = keep(w[(p, t)]) {
                w_cells.push(PropertyEntry { predicate: p, token: t, value });
            }
        }
    }
    let mut x_cells = Vec::new();
    for (k, slice) in truth.r.iter().enumerate() {
        let x = e * slice * e.transpose();
        for h in 0..n {
            for dd in 0..n {
                if let Some(value) = keep(x[(h, dd)]) {
                    x_cells.push(RelationEntry { relation: k, head: h, dependent: dd, value });
                }
            }
        }
    }
    let c = truth.num_predicates();
    let d = truth.num_relations();
    SentenceTensors::new(
        SparsePropertyMatrix::new(c, n, w_cells).expect("cells in range"),
        SparseRelationTensor::new(d, n, x_cells).expect("cells in range"),
    )
    .expect("matching token counts")
}

pub fn generate(config: &SynthConfig) -> Result<SyntheticCorpus> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let truth = ground_truth(config.c, config.d, config.r, &mut rng);
    Ok(generate_with(&truth, config.num_sentences, config.tokens, config.mode, &mut rng))
}

/// More sentences from an existing ground truth.
pub fn generate_with(
    truth: &TypeEmbeddings,
    num_sentences: usize,
    tokens: usize,
    mode: SynthMode,
    rng: &mut impl Rng,
) -> SyntheticCorpus {
    let r = truth.rank();
    let token_embeddings: Vec<DMatrix<f64>> = (0..num_sentences).map(|_| token_embeddings(tokens, r, rng)).collect();
    let sentences = token_embeddings.iter().map(|e| emit_sentence(truth, e, mode)).collect();
    SyntheticCorpus {
        truth: truth.clone(),
        token_embeddings,
        corpus: TensorCorpus {
            num_predicates: truth.num_predicates(),
            num_relations: truth.num_relations(),
            ids: (0..num_sentences).map(|i| format!("syn{i}")).collect(),
            sentences,
        },
    }
}

/// A sentence pair of the paraphrase benchmark.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkPair {
    pub first: SentenceTensors,
    pub second: SentenceTensors,
    pub paraphrase: bool,
}

/// Paraphrase pairs emit both sentences from one `E*` (the second with its
/// tokens shuffled and Gaussian noise of std `noise` added to `E*`);
/// mismatched pairs use independent `E*`. Positives come first.
pub fn paraphrase_benchmark(
    truth: &TypeEmbeddings,
    positives: usize,
    negatives: usize,
    tokens: usize,
    noise: f64,
    rng: &mut impl Rng,
) -> Result<Vec<BenchmarkPair>> {
    let jitter = Normal::new(0.0, noise).map_err(|_| BoveError::Invalid("noise must be non-negative".into()))?;
    let r = truth.rank();
    let mut pairs = Vec::with_capacity(positives + negatives);
    for _ in 0..positives {
        let e = token_embeddings(tokens, r, rng);
        let mut perm: Vec<usize> = (0..tokens).collect();
        perm.shuffle(rng);
        let shuffled = DMatrix::from_fn(tokens, r, |i, j| e[(perm[i], j)] + jitter.sample(rng));
        pairs.push(BenchmarkPair {
            first: emit_sentence(truth, &e, SynthMode::Exact),
            second: emit_sentence(truth, &shuffled, SynthMode::Exact),
            paraphrase: true,
        });
    }
    for _ in 0..negatives {
        let a = token_embeddings(tokens, r, rng);
        let b = token_embeddings(tokens, r, rng);
        pairs.push(BenchmarkPair {
            first: emit_sentence(truth, &a, SynthMode::Exact),
            second: emit_sentence(truth, &b, SynthMode::Exact),
            paraphrase: false,
        });
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::reconstruction_loss;
    use crate::model::Hyperparams;

    #[test]
    fn exact_mode_is_reconstructed_by_the_truth() {
        let syn = generate(&SynthConfig::default()).unwrap();
        let hyper = Hyperparams { r: 6, ..Default::default() };
        for (t, e) in syn.corpus.sentences.iter().zip(&syn.token_embeddings) {
            assert_eq!(t.w.nnz(), 12 * 6);
            assert_eq!(t.x.nnz(), 3 * 36);
            let loss = reconstruction_loss(t, &syn.truth.p, &syn.truth.r, e, &hyper, false).unwrap();
            assert!(loss < 1e-20, "{loss}");
        }
    }

    #[test]
    fn same_seed_same_output() {
        let config = SynthConfig { seed: 42, ..Default::default() };
        assert_eq!(generate(&config).unwrap(), generate(&config).unwrap());
        assert_ne!(generate(&config).unwrap(), generate(&SynthConfig { seed: 43, ..config }).unwrap());
    }

    #[test]
    fn discrete_mode_emits_indicators() {
        let config = SynthConfig { mode: SynthMode::Discrete { threshold: 0.5 }, ..Default::default() };
        let syn = generate(&config).unwrap();
        let mut ones = 0;
        for (t, e) in syn.corpus.sentences.iter().zip(&syn.token_embeddings) {
            assert!(t.w.entries().iter().all(|c| c.value == 1.0));
            assert!(t.x.entries().iter().all(|c| c.value == 1.0));
            let w = &syn.truth.p * e.transpose();
            assert_eq!(t.w.nnz(), w.iter().filter(|&&v| v > 0.5).count());
            ones += t.w.nnz();
        }
        assert!(ones > 0);
    }

    #[test]
    fn benchmark_layout() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let truth = ground_truth(8, 2, 4, &mut rng);
        let pairs = paraphrase_benchmark(&truth, 3, 2, 5, 0.0, &mut rng).unwrap();
        assert_eq!(pairs.iter().filter(|p| p.paraphrase).count(), 3);
        assert!(pairs[..3].iter().all(|p| p.paraphrase));
        // Without noise, the second sentence is a token permutation of the first.
        let first = pairs[0].first.w.to_dense();
        let second = pairs[0].second.w.to_dense();
        let mut a: Vec<f64> = first.iter().copied().collect();
        let mut b: Vec<f64> = second.iter().copied().collect();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
