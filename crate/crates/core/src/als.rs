//! Alternating least squares training of the type embeddings.
//!
//! Each round runs one averaged E step per sentence, then solves `P` and `R`
//! in closed form from Gram sums accumulated over the corpus. The
//! concatenated corpus-wide design matrices are never materialized:
//!
//! * `P`-block: `EᵀE = Σ_s E_sᵀE_s`, `WE = Σ_s W_s·E_s`.
//! * `R`-block: `(E_s⊗E_s)ᵀ(E_s⊗E_s) = G_s⊗G_s` with `G_s = E_sᵀE_s`, and row
//!   `k` of `X′ᵀE′` is `Σ_s vec_row(E_sᵀ·X_sk·E_s)`.

use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::encoding::{check_dims, data_fit_with_gram, DataFit, SentenceTensors};
use crate::error::{BoveError, Result};
use crate::linalg::{add_ridge, gram_row_order_invariant, kron, soft_threshold, solve_right_spd, unvec_row};
use crate::model::{Hyperparams, RRegularizer, TypeEmbeddings};

/// Streaming normal-equation sums for the `P` and `R` updates.
#[derive(Debug, Clone, PartialEq)]
pub struct GramAccumulators {
    /// `r×r`: `Σ_s E_sᵀE_s`.
    pub ete: DMatrix<f64>,
    /// `c×r`: `Σ_s W_s·E_s`. Empty when properties are skipped.
    pub we: DMatrix<f64>,
    /// `r²×r²`: `Σ_s (E_s⊗E_s)ᵀ(E_s⊗E_s)`. Empty when relations are skipped.
    pub ktk: DMatrix<f64>,
    /// `d×r²`: `Σ_s X′_s·(E_s⊗E_s)`.
    pub xk: DMatrix<f64>,
}

impl GramAccumulators {
    pub fn new(c: usize, d: usize, rank: usize) -> Self {
        GramAccumulators {
            ete: DMatrix::zeros(rank, rank),
            we: DMatrix::zeros(c, rank),
            ktk: DMatrix::zeros(rank * rank, rank * rank),
            xk: DMatrix::zeros(d, rank * rank),
        }
    }

    pub fn accumulate(&mut self, t: &SentenceTensors, e: &DMatrix<f64>) {
        let rank = e.ncols();
        let g = e.transpose() * e;
        self.ete += &g;
        if self.we.nrows() > 0 {
            for cell in t.w.entries() {
                let mut row = self.we.row_mut(cell.predicate);
                row += e.row(cell.token) * cell.value;
            }
        }
        if self.xk.nrows() > 0 {
            self.ktk += kron(&g, &g);
            for cell in t.x.entries() {
                let eh = e.row(cell.head);
                let ed = e.row(cell.dependent);
                let mut row = self.xk.row_mut(cell.relation);
                for a in 0..rank {
                    let s = cell.value * eh[a];
                    for b in 0..rank {
                        row[a * rank + b] += s * ed[b];
                    }
                }
            }
        }
    }

    pub fn from_corpus(corpus: &[SentenceTensors], es: &[DMatrix<f64>], c: usize, d: usize, rank: usize) -> Self {
        let mut acc = GramAccumulators::new(c, d, rank);
        for (t, e) in corpus.iter().zip(es) {
            acc.accumulate(t, e);
        }
        acc
    }
}

fn check_corpus(corpus: &[SentenceTensors], es: &[DMatrix<f64>], model: &TypeEmbeddings) -> Result<()> {
    if corpus.len() != es.len() {
        return Err(BoveError::Dimension(format!("{} sentences but {} embedding matrices", corpus.len(), es.len())));
    }
    for (t, e) in corpus.iter().zip(es) {
        check_dims(t, &model.p, &model.r, e)?;
    }
    Ok(())
}

/// Closed-form `P` update from accumulated sums. Frozen rows keep their
/// values; every other row is the exact ridge least-squares solution.
pub fn update_p_from_gram(acc: &GramAccumulators, lambda_p: f64, model: &mut TypeEmbeddings) -> Result<()> {
    if model.frozen.iter().all(|&f| f) {
        return Ok(());
    }
    let mut a = acc.ete.clone();
    add_ridge(&mut a, lambda_p);
    let solved = solve_right_spd(a, &acc.we, "P update")?;
    for (i, &frozen) in model.frozen.iter().enumerate() {
        if !frozen {
            model.p.set_row(i, &solved.row(i));
        }
    }
    Ok(())
}

/// `P = W·E·(EᵀE + λ_P I)⁻¹` over the corpus, with frozen rows held fixed.
pub fn update_p(
    corpus: &[SentenceTensors],
    es: &[DMatrix<f64>],
    lambda_p: f64,
    model: &mut TypeEmbeddings,
) -> Result<()> {
    check_corpus(corpus, es, model)?;
    let mut acc = GramAccumulators::new(model.num_predicates(), 0, model.rank());
    for (t, e) in corpus.iter().zip(es) {
        acc.accumulate(t, e);
    }
    update_p_from_gram(&acc, lambda_p, model)
}

/// Closed-form `R` update: minimizes `α·Σ_s‖X_s − E_s·R·E_sᵀ‖² + λ_R‖R‖²`.
pub fn update_r_from_gram(acc: &GramAccumulators, lambda_r: f64, alpha: f64, model: &mut TypeEmbeddings) -> Result<()> {
    let rank = model.rank();
    let d = model.num_relations();
    if d == 0 {
        return Ok(());
    }
    let mut a = &acc.ktk * alpha;
    add_ridge(&mut a, lambda_r);
    let rhs = &acc.xk * alpha;
    let solved = solve_right_spd(a, &rhs, "R update")?;
    for (k, slice) in model.r.iter_mut().enumerate() {
        let row: Vec<f64> = solved.row(k).iter().copied().collect();
        *slice = unvec_row(&row, rank, rank);
    }
    Ok(())
}

pub fn check_rank_cap(hyper: &Hyperparams, rank: usize) -> Result<()> {
    if rank > hyper.r_cap {
        return Err(BoveError::RankCap { r: rank, cap: hyper.r_cap });
    }
    Ok(())
}

pub fn update_r(
    corpus: &[SentenceTensors],
    es: &[DMatrix<f64>],
    hyper: &Hyperparams,
    model: &mut TypeEmbeddings,
) -> Result<()> {
    check_rank_cap(hyper, model.rank())?;
    check_corpus(corpus, es, model)?;
    let acc = GramAccumulators::from_corpus(corpus, es, 0, model.num_relations(), model.rank());
    update_r_from_gram(&acc, hyper.lambda_r, hyper.alpha, model)
}

/// Singular-value soft-thresholding of every relation slice.
pub fn regularize_r_nuclear(r: &mut [DMatrix<f64>], tau: f64) {
    for slice in r.iter_mut() {
        let mut svd = slice.clone().svd(true, true);
        for s in svd.singular_values.iter_mut() {
            *s = (*s - tau).max(0.0);
        }
        *slice = svd.recompose().expect("U and Vᵀ were computed");
    }
}

/// Entrywise soft-thresholding of every relation slice.
pub fn regularize_r_l1(r: &mut [DMatrix<f64>], tau: f64) {
    for slice in r.iter_mut() {
        slice.apply(|v| *v = soft_threshold(*v, tau));
    }
}

/// Per-sentence E solver with `P` and `R` held fixed. Caches `PᵀP`.
pub struct ESolver<'a> {
    model: &'a TypeEmbeddings,
    ptp: DMatrix<f64>,
    alpha: f64,
    lambda_e: f64,
}

impl<'a> ESolver<'a> {
    pub fn new(model: &'a TypeEmbeddings, alpha: f64, lambda_e: f64) -> Self {
        let ptp = model.p.transpose() * &model.p;
        ESolver { model, ptp, alpha, lambda_e }
    }

    pub fn model(&self) -> &TypeEmbeddings {
        self.model
    }

    pub fn ptp(&self) -> &DMatrix<f64> {
        &self.ptp
    }

    /// One least-squares solve: `E_new = Y·Fᵀ·(F·Fᵀ + λ_E I)⁻¹` with
    /// `Y = [W_sᵀ | α·X_s blocks | α·X_sᵀ blocks]` and
    /// `F = [Pᵀ | α·R_k·E_prevᵀ blocks | α·R_kᵀ·E_prevᵀ blocks]`.
    pub fn update(&self, t: &SentenceTensors, e_prev: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_dims(t, &self.model.p, &self.model.r, e_prev)?;
        let n = t.num_tokens();
        let rank = self.model.rank();
        if n == 0 {
            return Ok(DMatrix::zeros(0, rank));
        }
        let a2 = self.alpha * self.alpha;

        let mut fft = self.ptp.clone();
        let mut yft = DMatrix::zeros(n, rank);
        for cell in t.w.entries() {
            let mut row = yft.row_mut(cell.token);
            row += self.model.p.row(cell.predicate) * cell.value;
        }

        if a2 != 0.0 && !self.model.r.is_empty() {
            let g = gram_row_order_invariant(e_prev);
            for slice in &self.model.r {
                let rg = slice * &g;
                fft += (&rg * slice.transpose() + slice.transpose() * &g * slice) * a2;
            }
            for cell in t.x.entries() {
                let slice = &self.model.r[cell.relation];
                // Row h of X_k·E_prev·R_kᵀ and row d of X_kᵀ·E_prev·R_k.
                let to_head = e_prev.row(cell.dependent) * slice.transpose();
                let to_dep = e_prev.row(cell.head) * slice;
                let mut head = yft.row_mut(cell.head);
                head += to_head * (a2 * cell.value);
                let mut dep = yft.row_mut(cell.dependent);
                dep += to_dep * (a2 * cell.value);
            }
        }
        add_ridge(&mut fft, self.lambda_e);
        solve_right_spd(fft, &yft, "E update")
    }

    /// Two consecutive solves from `e`, averaged.
    pub fn averaged_step(&self, t: &SentenceTensors, e: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let first = self.update(t, e)?;
        let second = self.update(t, &first)?;
        Ok((first + second) * 0.5)
    }
}

pub fn update_e_sentence(
    t: &SentenceTensors,
    model: &TypeEmbeddings,
    e_prev: &DMatrix<f64>,
    alpha: f64,
    lambda_e: f64,
) -> Result<DMatrix<f64>> {
    ESolver::new(model, alpha, lambda_e).update(t, e_prev)
}

pub fn averaged_e_step(
    t: &SentenceTensors,
    model: &TypeEmbeddings,
    e_current: &DMatrix<f64>,
    hyper: &Hyperparams,
) -> Result<DMatrix<f64>> {
    ESolver::new(model, hyper.alpha, hyper.lambda_e).averaged_step(t, e_current)
}

/// Full objective over a corpus, with and without regularizers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    pub total: f64,
    /// Weighted data fit `Σ_s ‖W_s − P·E_sᵀ‖² + α‖X_s − E_s·R·E_sᵀ‖²`.
    pub data_fit: f64,
}

pub fn corpus_objective(
    corpus: &[SentenceTensors],
    model: &TypeEmbeddings,
    es: &[DMatrix<f64>],
    hyper: &Hyperparams,
) -> Result<Objective> {
    check_corpus(corpus, es, model)?;
    let ptp = model.p.transpose() * &model.p;
    let fits: Vec<DataFit> =
        corpus.par_iter().zip(es.par_iter()).map(|(t, e)| data_fit_with_gram(t, &model.p, &ptp, &model.r, e)).collect();
    let data_fit: f64 = fits.iter().map(|f| f.weighted(hyper.alpha)).sum();
    let reg = hyper.lambda_p * model.p.norm_squared()
        + hyper.lambda_r * model.r.iter().map(|s| s.norm_squared()).sum::<f64>()
        + hyper.lambda_e * es.iter().map(|e| e.norm_squared()).sum::<f64>();
    Ok(Objective { total: data_fit + reg, data_fit })
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundLog {
    pub round: usize,
    pub objective: f64,
    pub data_fit: f64,
    pub rel_improvement: f64,
    pub seconds: f64,
    /// Token embeddings were reset to zero this round.
    pub reinit: bool,
}

impl RoundLog {
    pub fn log_line(&self) -> String {
        format!(
            "round={} objective={} rel_improvement={} seconds={}",
            self.round, self.objective, self.rel_improvement, self.seconds
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// Relative improvement fell to the stopping threshold.
    Converged,
    MaxRounds,
}

#[derive(Debug, Clone)]
pub struct AlsRun {
    pub model: TypeEmbeddings,
    /// Entry 0 is the initial objective; entry `k` follows round `k`.
    pub trace: Vec<RoundLog>,
    pub stop: StopReason,
    pub token_embeddings: Vec<DMatrix<f64>>,
}

/// Relative improvement from `previous` to `current`; 0 when `previous` is 0.
pub fn relative_improvement(previous: f64, current: f64) -> f64 {
    if previous > 0.0 {
        (previous - current) / previous
    } else {
        0.0
    }
}

/// The stopping rule: a round that improves by at most `threshold` ends training.
pub fn should_stop(rel_improvement: f64, threshold: f64) -> bool {
    rel_improvement <= threshold
}

pub fn train(corpus: &[SentenceTensors], model: TypeEmbeddings, hyper: &Hyperparams) -> Result<AlsRun> {
    train_with_log(corpus, model, hyper, |_| {})
}

/// Runs ALS rounds until the stopping rule fires or `max_rounds` is reached.
/// Rounds that reset the token embeddings are exempt from the stopping rule.
pub fn train_with_log(
    corpus: &[SentenceTensors],
    mut model: TypeEmbeddings,
    hyper: &Hyperparams,
    mut log: impl FnMut(&RoundLog),
) -> Result<AlsRun> {
    hyper.validate()?;
    model.validate()?;
    let rank = model.rank();
    check_rank_cap(hyper, rank)?;
    if rank != hyper.r {
        return Err(BoveError::Dimension(format!("model has r={rank}, hyperparameters say r={}", hyper.r)));
    }
    let zeros = |corpus: &[SentenceTensors]| -> Vec<DMatrix<f64>> {
        corpus.iter().map(|t| DMatrix::zeros(t.num_tokens(), rank)).collect()
    };
    let mut es = zeros(corpus);
    let (c, d) = (model.num_predicates(), model.num_relations());

    let start = Instant::now();
    let initial = corpus_objective(corpus, &model, &es, hyper)?;
    let first = RoundLog {
        round: 0,
        objective: initial.total,
        data_fit: initial.data_fit,
        rel_improvement: 0.0,
        seconds: start.elapsed().as_secs_f64(),
        reinit: false,
    };
    log(&first);
    let mut trace = vec![first];
    let mut stop = StopReason::MaxRounds;

    for round in 1..=hyper.max_rounds {
        let round_start = Instant::now();
        let reinit = hyper.e_reinit_period > 0 && round % hyper.e_reinit_period == 0;
        {
            let solver = ESolver::new(&model, hyper.alpha, hyper.lambda_e);
            let steps = if reinit {
                es = zeros(corpus);
                hyper.e_reinit_burst.max(1)
            } else {
                1
            };
            for _ in 0..steps {
                es = corpus
                    .par_iter()
                    .zip(es.par_iter())
                    .map(|(t, e)| solver.averaged_step(t, e))
                    .collect::<Result<Vec<_>>>()?;
            }
        }

        let acc = GramAccumulators::from_corpus(corpus, &es, c, d, rank);
        update_p_from_gram(&acc, hyper.lambda_p, &mut model)?;
        update_r_from_gram(&acc, hyper.lambda_r, hyper.alpha, &mut model)?;
        match hyper.r_regularizer {
            RRegularizer::L2 => {}
            RRegularizer::L1 => regularize_r_l1(&mut model.r, hyper.lambda_r),
            RRegularizer::Nuclear => regularize_r_nuclear(&mut model.r, hyper.lambda_r),
        }

        let obj = corpus_objective(corpus, &model, &es, hyper)?;
        if !obj.total.is_finite() {
            return Err(BoveError::Divergence { round });
        }
        let previous = trace.last().map(|l| l.objective).unwrap_or(obj.total);
        let entry = RoundLog {
            round,
            objective: obj.total,
            data_fit: obj.data_fit,
            rel_improvement: relative_improvement(previous, obj.total),
            seconds: round_start.elapsed().as_secs_f64(),
            reinit,
        };
        log(&entry);
        trace.push(entry);
        if !reinit && should_stop(entry.rel_improvement, hyper.rel_improvement_stop) {
            stop = StopReason::Converged;
            break;
        }
    }
    Ok(AlsRun { model, trace, stop, token_embeddings: es })
}
