//! Mini-batch stochastic gradient training with Adagrad step sizes and
//! negative sampling of zero tensor cells.
//!
//! For every stored (positive) cell of `W_s` and `X_s` in a batch, `k` cells
//! holding zero are drawn uniformly from the same tensor of the same
//! sentence. The sampled loss is the squared error over positives and
//! negatives (relation cells weighted by `α`) plus L2 terms. Each batch
//! sentence contributes `λ_E‖E_s‖²`. A `P` row (or `R` slice) with stored
//! cells in `m` sentences of the corpus contributes `λ_P‖P_p‖²/m` for each
//! batch sentence that stores it, so one epoch's regularizer terms add up
//! to the full regularizer of the objective.

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::{DMatrix, RowDVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::als::{relative_improvement, RoundLog};
use crate::encoding::{check_dims, SentenceTensors};
use crate::error::{BoveError, Result};
use crate::model::{Hyperparams, TypeEmbeddings};

#[derive(Debug, Clone, PartialEq)]
pub struct SgdConfig {
    /// Sentences per step.
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Negative cells drawn per positive cell.
    pub negatives_per_positive: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Added to the root of the accumulated squared gradient.
    pub adapt_eps: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            batch_size: 16,
            learning_rate: 0.05,
            negatives_per_positive: 5,
            epochs: 10,
            seed: 0,
            adapt_eps: 1e-8,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(BoveError::Invalid("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(BoveError::Invalid("learning_rate must be positive".into()));
        }
        if self.negatives_per_positive == 0 {
            return Err(BoveError::Invalid("negatives_per_positive must be at least 1".into()));
        }
        if !(self.adapt_eps > 0.0 && self.adapt_eps.is_finite()) {
            return Err(BoveError::Invalid("adapt_eps must be positive".into()));
        }
        Ok(())
    }

    pub fn to_key_values(&self) -> String {
        format!(
            "batch_size={}\nlearning_rate={}\nnegatives_per_positive={}\nepochs={}\nseed={}\nadapt_eps={}\n",
            self.batch_size, self.learning_rate, self.negatives_per_positive, self.epochs, self.seed, self.adapt_eps
        )
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value.trim().parse().map_err(|_| BoveError::Invalid(format!("bad value {value:?} for {key}")))
        }
        match key {
            "batch_size" => self.batch_size = num(key, value)?,
            "learning_rate" => self.learning_rate = num(key, value)?,
            "negatives_per_positive" => self.negatives_per_positive = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "adapt_eps" => self.adapt_eps = num(key, value)?,
            other => return Err(BoveError::Invalid(format!("unknown sgd key {other:?}"))),
        }
        Ok(())
    }
}

/// Sampled zero cells of one sentence.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Negatives {
    /// `(predicate, token)` cells of `W_s`.
    pub w: Vec<(usize, usize)>,
    /// `(relation, head, dependent)` cells of `X_s`.
    pub x: Vec<(usize, usize, usize)>,
}

/// Draws `k` uniform zero cells, with replacement, for each positive cell.
///
/// `positives` are the sorted linear indices of the nonzero cells among
/// `total` cells.
fn draw_zero_cells(positives: &[usize], total: usize, count: usize, rng: &mut impl Rng) -> Vec<usize> {
    let zeros = total - positives.len();
    if zeros == 0 || count == 0 {
        return Vec::new();
    }
    if zeros * 4 >= total {
        (0..count)
            .map(|_| loop {
                let cell = rng.random_range(0..total);
                if positives.binary_search(&cell).is_err() {
                    break cell;
                }
            })
            .collect()
    } else {
        let free: Vec<usize> = (0..total).filter(|c| positives.binary_search(c).is_err()).collect();
        (0..count).map(|_| free[rng.random_range(0..free.len())]).collect()
    }
}

pub fn sample_negatives(t: &SentenceTensors, k: usize, rng: &mut impl Rng) -> Negatives {
    let n = t.num_tokens();
    let mut w_pos: Vec<usize> =
        t.w.entries().iter().filter(|c| c.value != 0.0).map(|c| c.predicate * n + c.token).collect();
    w_pos.sort_unstable();
    w_pos.dedup();
    let mut x_pos: Vec<usize> =
        t.x.entries().iter().filter(|c| c.value != 0.0).map(|c| (c.relation * n + c.head) * n + c.dependent).collect();
    x_pos.sort_unstable();
    x_pos.dedup();

    let w = draw_zero_cells(&w_pos, t.w.num_predicates() * n, k * w_pos.len(), rng)
        .into_iter()
        .map(|c| (c / n, c % n))
        .collect();
    let x = draw_zero_cells(&x_pos, t.x.num_relations() * n * n, k * x_pos.len(), rng)
        .into_iter()
        .map(|c| (c / (n * n), (c / n) % n, c % n))
        .collect();
    Negatives { w, x }
}

/// Per-occurrence regularizer weights: `1/m` for a `P` row or `R` slice
/// stored in `m` sentences, 0 for parameters no sentence stores.
#[derive(Debug, Clone, PartialEq)]
pub struct RegularizerWeights {
    pub p: Vec<f64>,
    pub r: Vec<f64>,
}

impl RegularizerWeights {
    pub fn from_corpus(corpus: &[SentenceTensors], c: usize, d: usize) -> Self {
        let mut p = vec![0usize; c];
        let mut r = vec![0usize; d];
        for t in corpus {
            for id in stored_predicates(t) {
                if id < c {
                    p[id] += 1;
                }
            }
            for id in stored_relations(t) {
                if id < d {
                    r[id] += 1;
                }
            }
        }
        let inv = |m: usize| if m == 0 { 0.0 } else { 1.0 / m as f64 };
        RegularizerWeights { p: p.into_iter().map(inv).collect(), r: r.into_iter().map(inv).collect() }
    }
}

fn stored_predicates(t: &SentenceTensors) -> Vec<usize> {
    let mut ids: Vec<usize> = t.w.entries().iter().filter(|c| c.value != 0.0).map(|c| c.predicate).collect();
    ids.sort_unstable();
    ids.dedup();
    ids
}

fn stored_relations(t: &SentenceTensors) -> Vec<usize> {
    let mut ids: Vec<usize> = t.x.entries().iter().filter(|c| c.value != 0.0).map(|c| c.relation).collect();
    ids.sort_unstable();
    ids.dedup();
    ids
}

/// One sentence of a batch: its tensors, current token embeddings and drawn negatives.
#[derive(Debug, Clone, Copy)]
pub struct BatchItem<'a> {
    pub tensors: &'a SentenceTensors,
    pub e: &'a DMatrix<f64>,
    pub negatives: &'a Negatives,
}

/// Gradient of the sampled batch loss. Parameters absent from the maps have
/// zero gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub p: BTreeMap<usize, RowDVector<f64>>,
    pub r: BTreeMap<usize, DMatrix<f64>>,
    /// One matrix per batch item.
    pub e: Vec<DMatrix<f64>>,
}

impl Gradients {
    fn all_finite(&self) -> bool {
        self.p.values().all(|g| g.iter().all(|v| v.is_finite()))
            && self.r.values().all(|g| g.iter().all(|v| v.is_finite()))
            && self.e.iter().all(|g| g.iter().all(|v| v.is_finite()))
    }
}

/// Sampled batch loss and its gradient.
pub fn sampled_loss_and_gradients(
    batch: &[BatchItem<'_>],
    model: &TypeEmbeddings,
    weights: &RegularizerWeights,
    hyper: &Hyperparams,
) -> Result<(f64, Gradients)> {
    if weights.p.len() != model.num_predicates() || weights.r.len() != model.num_relations() {
        return Err(BoveError::Dimension("regularizer weights do not match the model".into()));
    }
    let rank = model.rank();
    let alpha = hyper.alpha;
    let mut loss = 0.0;
    let mut gp: BTreeMap<usize, RowDVector<f64>> = BTreeMap::new();
    let mut gr: BTreeMap<usize, DMatrix<f64>> = BTreeMap::new();
    let mut ge = Vec::with_capacity(batch.len());
    let mut reg_p: BTreeMap<usize, f64> = BTreeMap::new();
    let mut reg_r: BTreeMap<usize, f64> = BTreeMap::new();

    for item in batch {
        check_dims(item.tensors, &model.p, &model.r, item.e)?;
        let e = item.e;
        let n = item.tensors.num_tokens();
        let c = model.num_predicates();
        let d = model.num_relations();
        for &(p, t) in &item.negatives.w {
            if p >= c || t >= n {
                return Err(BoveError::Dimension(format!("negative W cell ({p}, {t}) out of range")));
            }
        }
        for &(k, h, dd) in &item.negatives.x {
            if k >= d || h >= n || dd >= n {
                return Err(BoveError::Dimension(format!("negative X cell ({k}, {h}, {dd}) out of range")));
            }
        }

        for p in stored_predicates(item.tensors) {
            *reg_p.entry(p).or_default() += weights.p[p];
        }
        for k in stored_relations(item.tensors) {
            *reg_r.entry(k).or_default() += weights.r[k];
        }

        let mut g_e = DMatrix::zeros(n, rank);
        let w_cells = item
            .tensors
            .w
            .entries()
            .iter()
            .map(|c| (c.predicate, c.token, c.value))
            .chain(item.negatives.w.iter().map(|&(p, t)| (p, t, 0.0)));
        for (p, t, target) in w_cells {
            let prow = model.p.row(p);
            let erow = e.row(t);
            let res = prow.dot(&erow) - target;
            loss += res * res;
            *gp.entry(p).or_insert_with(|| RowDVector::zeros(rank)) += erow * (2.0 * res);
            let mut g_t = g_e.row_mut(t);
            g_t += prow * (2.0 * res);
        }

        let x_cells = item
            .tensors
            .x
            .entries()
            .iter()
            .map(|c| (c.relation, c.head, c.dependent, c.value))
            .chain(item.negatives.x.iter().map(|&(k, h, dd)| (k, h, dd, 0.0)));
        for (k, h, dd, target) in x_cells {
            let slice = &model.r[k];
            let eh = e.row(h);
            let ed = e.row(dd);
            let eh_r = eh * slice;
            let res = eh_r.dot(&ed) - target;
            loss += alpha * res * res;
            let s = 2.0 * alpha * res;
            gr.entry(k).or_insert_with(|| DMatrix::zeros(rank, rank)).ger(s, &eh.transpose(), &ed.transpose(), 1.0);
            let ed_rt = ed * slice.transpose();
            let mut g_h = g_e.row_mut(h);
            g_h += ed_rt * s;
            let mut g_d = g_e.row_mut(dd);
            g_d += eh_r * s;
        }

        loss += hyper.lambda_e * e.norm_squared();
        g_e += e * (2.0 * hyper.lambda_e);
        ge.push(g_e);
    }

    for (p, w) in reg_p {
        let lambda = hyper.lambda_p * w;
        let row = model.p.row(p);
        loss += lambda * row.norm_squared();
        *gp.entry(p).or_insert_with(|| RowDVector::zeros(rank)) += row * (2.0 * lambda);
    }
    for (k, w) in reg_r {
        let lambda = hyper.lambda_r * w;
        loss += lambda * model.r[k].norm_squared();
        *gr.entry(k).or_insert_with(|| DMatrix::zeros(rank, rank)) += &model.r[k] * (2.0 * lambda);
    }
    Ok((loss, Gradients { p: gp, r: gr, e: ge }))
}

/// Accumulated squared gradients, one per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdagradState {
    pub p: DMatrix<f64>,
    pub r: Vec<DMatrix<f64>>,
    pub e: Vec<DMatrix<f64>>,
}

impl AdagradState {
    pub fn new(model: &TypeEmbeddings, es: &[DMatrix<f64>]) -> Self {
        AdagradState {
            p: DMatrix::zeros(model.p.nrows(), model.p.ncols()),
            r: model.r.iter().map(|s| DMatrix::zeros(s.nrows(), s.ncols())).collect(),
            e: es.iter().map(|e| DMatrix::zeros(e.nrows(), e.ncols())).collect(),
        }
    }
}

fn adagrad<'a>(
    params: impl Iterator<Item = &'a mut f64>,
    acc: impl Iterator<Item = &'a mut f64>,
    grads: impl Iterator<Item = &'a f64>,
    config: &SgdConfig,
) {
    for ((theta, g2), &g) in params.zip(acc).zip(grads) {
        *g2 += g * g;
        *theta -= config.learning_rate * g / (g2.sqrt() + config.adapt_eps);
    }
}

/// One Adagrad step on the sentences `batch` (indices into `corpus` and
/// `es`). Returns the sampled loss before the update. Frozen `P` rows are
/// never written.
#[allow(clippy::too_many_arguments)]
pub fn sgd_step(
    corpus: &[SentenceTensors],
    batch: &[usize],
    model: &mut TypeEmbeddings,
    es: &mut [DMatrix<f64>],
    state: &mut AdagradState,
    weights: &RegularizerWeights,
    hyper: &Hyperparams,
    config: &SgdConfig,
    rng: &mut impl Rng,
) -> Result<f64> {
    let negatives: Vec<Negatives> =
        batch.iter().map(|&s| sample_negatives(&corpus[s], config.negatives_per_positive, rng)).collect();
    let items: Vec<BatchItem<'_>> = batch
        .iter()
        .zip(&negatives)
        .map(|(&s, neg)| BatchItem { tensors: &corpus[s], e: &es[s], negatives: neg })
        .collect();
    let (loss, grads) = sampled_loss_and_gradients(&items, model, weights, hyper)?;
    if !loss.is_finite() || !grads.all_finite() {
        return Err(BoveError::Divergence { round: 0 });
    }

    for (&p, g) in &grads.p {
        if model.frozen[p] {
            continue;
        }
        let cols = model.p.ncols();
        for j in 0..cols {
            let g = g[j];
            let acc = &mut state.p[(p, j)];
            *acc += g * g;
            model.p[(p, j)] -= config.learning_rate * g / (acc.sqrt() + config.adapt_eps);
        }
    }
    for (&k, g) in &grads.r {
        adagrad(model.r[k].iter_mut(), state.r[k].iter_mut(), g.iter(), config);
    }
    for (&s, g) in batch.iter().zip(&grads.e) {
        adagrad(es[s].iter_mut(), state.e[s].iter_mut(), g.iter(), config);
    }
    Ok(loss)
}

#[derive(Debug, Clone)]
pub struct SgdRun {
    pub model: TypeEmbeddings,
    pub token_embeddings: Vec<DMatrix<f64>>,
    /// One entry per epoch; `objective` is the summed sampled loss.
    pub trace: Vec<RoundLog>,
}

/// `als` log line with `sampled=true` appended.
pub fn sgd_log_line(entry: &RoundLog) -> String {
    format!("{} sampled=true", entry.log_line())
}

pub fn train_sgd(
    corpus: &[SentenceTensors],
    model: TypeEmbeddings,
    hyper: &Hyperparams,
    config: &SgdConfig,
) -> Result<SgdRun> {
    train_sgd_with_log(corpus, model, hyper, config, |_| {})
}

/// Runs `config.epochs` passes over a seeded shuffle of the corpus, starting
/// from zero token embeddings.
pub fn train_sgd_with_log(
    corpus: &[SentenceTensors],
    mut model: TypeEmbeddings,
    hyper: &Hyperparams,
    config: &SgdConfig,
    mut log: impl FnMut(&RoundLog),
) -> Result<SgdRun> {
    hyper.validate()?;
    config.validate()?;
    model.validate()?;
    let rank = model.rank();
    if rank != hyper.r {
        return Err(BoveError::Dimension(format!("model has r={rank}, hyperparameters say r={}", hyper.r)));
    }
    let mut es: Vec<DMatrix<f64>> = corpus.iter().map(|t| DMatrix::zeros(t.num_tokens(), rank)).collect();
    for (t, e) in corpus.iter().zip(&es) {
        check_dims(t, &model.p, &model.r, e)?;
    }
    let mut state = AdagradState::new(&model, &es);
    let weights = RegularizerWeights::from_corpus(corpus, model.num_predicates(), model.num_relations());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut trace: Vec<RoundLog> = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let mut objective = 0.0;
        for batch in order.chunks(config.batch_size) {
            objective += sgd_step(corpus, batch, &mut model, &mut es, &mut state, &weights, hyper, config, &mut rng)
                .map_err(|e| match e {
                    BoveError::Divergence { .. } => BoveError::Divergence { round: epoch },
                    other => other,
                })?;
        }
        let previous = trace.last().map_or(objective, |l| l.objective);
        let entry = RoundLog {
            round: epoch,
            objective,
            data_fit: objective,
            rel_improvement: relative_improvement(previous, objective),
            seconds: start.elapsed().as_secs_f64(),
            reinit: false,
        };
        log(&entry);
        trace.push(entry);
    }
    Ok(SgdRun { model, token_embeddings: es, trace })
}
