//! Token-embedding inference for unseen sentences with frozen type embeddings.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::als::ESolver;
use crate::encoding::SentenceTensors;
use crate::error::{BoveError, Result};
use crate::model::{Hyperparams, IterationCounting, TokenEmbeddings, TypeEmbeddings};

/// Runs inference and returns the embedding after every raw solve, first
/// solve included. `trace.last()` is the result of [`infer_bove`].
pub fn infer_trace(solver: &ESolver<'_>, t: &SentenceTensors, hyper: &Hyperparams) -> Result<Vec<DMatrix<f64>>> {
    let rank = solver.model().rank();
    let first = solver.update(t, &DMatrix::zeros(t.num_tokens(), rank))?;
    let mut trace = vec![first];
    match hyper.iteration_counting {
        IterationCounting::RawSolves => {
            for _ in 1..hyper.inference_iters {
                let avg = trace.last().unwrap();
                let next = solver.update(t, avg)?;
                trace.push((avg + next) * 0.5);
            }
        }
        IterationCounting::AveragedPairs => {
            for _ in 1..hyper.inference_iters {
                let step = solver.averaged_step(t, trace.last().unwrap())?;
                trace.push(step);
            }
        }
    }
    Ok(trace)
}

/// Infers `E_s` from zero: the first solve sees only the properties, every
/// later solve is averaged with the running estimate. `P` and `R` are read
/// only.
pub fn infer_bove(t: &SentenceTensors, model: &TypeEmbeddings, hyper: &Hyperparams) -> Result<TokenEmbeddings> {
    let solver = ESolver::new(model, hyper.alpha, hyper.lambda_e);
    infer_with(&solver, t, hyper)
}

/// [`infer_bove`] with a prepared solver, for callers handling many sentences.
pub fn infer_with(solver: &ESolver<'_>, t: &SentenceTensors, hyper: &Hyperparams) -> Result<TokenEmbeddings> {
    if t.num_tokens() == 0 {
        return Err(BoveError::Invalid("cannot infer embeddings for an empty sentence".into()));
    }
    let mut trace = infer_trace(solver, t, hyper)?;
    Ok(TokenEmbeddings(trace.pop().expect("at least one solve")))
}

/// Failure for one sentence of a corpus.
#[derive(Debug)]
pub struct SentenceFailure {
    pub index: usize,
    pub id: String,
    pub error: BoveError,
}

/// Infers every sentence independently, preserving input order.
///
/// With `fail_fast` the first failure (in input order) is returned as an
/// error; otherwise failed sentences come back as `Err` entries.
pub fn infer_corpus(
    ids: &[String],
    sentences: &[SentenceTensors],
    model: &TypeEmbeddings,
    hyper: &Hyperparams,
    fail_fast: bool,
) -> std::result::Result<Vec<std::result::Result<TokenEmbeddings, SentenceFailure>>, SentenceFailure> {
    let solver = ESolver::new(model, hyper.alpha, hyper.lambda_e);
    let results: Vec<_> = sentences
        .par_iter()
        .enumerate()
        .map(|(index, t)| {
            infer_with(&solver, t, hyper).map_err(|error| SentenceFailure {
                index,
                id: ids.get(index).cloned().unwrap_or_else(|| index.to_string()),
                error,
            })
        })
        .collect();
    if fail_fast {
        if let Some(pos) = results.iter().position(|r| r.is_err()) {
            let failure = results.into_iter().nth(pos).unwrap().unwrap_err();
            return Err(failure);
        }
    }
    Ok(results)
}
