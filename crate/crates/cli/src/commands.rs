use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use bove::als::{self, ESolver};
use bove::corpus::{build_vocabulary, read_conll, to_sentence_graph, Vocabulary};
use bove::encoding::{encode as encode_graph, SentenceTensors, TensorCorpus};
use bove::inference::infer_with;
use bove::model::{
    init_for_training, load_model, load_pretrained, read_bags, save_model, write_bags, BagRecord, Hyperparams,
    TokenEmbeddings, TypeEmbeddings,
};
use bove::scoring::{evaluate_snli, evaluate_sts, score_entailment, score_similarity, EvaluationReport, ScoredPair};
use bove::sgd::{sgd_log_line, train_sgd_with_log};
use bove::synth::generate;
use rayon::prelude::*;

use crate::config::{PipelineConfig, ScoreMode, Stage, Trainer};
use crate::pairs::{read_pairs, read_scores, write_scores};
use crate::CliError;

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path).map(BufReader::new).map_err(|e| CliError::Data(format!("cannot open {}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::Data(format!("cannot create {}: {e}", path.display())))
}

fn finish(mut out: BufWriter<File>, path: &Path) -> Result<(), CliError> {
    out.flush().map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

/// Wraps a library error with the file it came from.
fn in_file(path: &Path) -> impl Fn(bove::BoveError) -> CliError + '_ {
    move |e| match CliError::from(e) {
        CliError::Data(m) => CliError::Data(format!("{}: {m}", path.display())),
        other => other,
    }
}

fn read_corpus(config: &PipelineConfig) -> Result<Vec<Vec<bove::corpus::RawToken>>, CliError> {
    let path = config.input("corpus")?;
    read_conll(open(path)?, &config.columns).map_err(in_file(path))
}

fn read_vocab(config: &PipelineConfig) -> Result<Vocabulary, CliError> {
    let path = config.input("vocab")?;
    Vocabulary::read_from(open(path)?, config.rules.clone()).map_err(in_file(path))
}

fn read_tensors(config: &PipelineConfig) -> Result<TensorCorpus, CliError> {
    let path = config.input("tensors")?;
    TensorCorpus::read_from(open(path)?).map_err(in_file(path))
}

pub fn build_vocab(config: &PipelineConfig) -> Result<(), CliError> {
    let corpus = read_corpus(config)?;
    let out_path = config.required("vocab")?;
    let vocab = build_vocabulary(&corpus, &config.rules)?;
    let mut out = create(out_path)?;
    vocab.write_to(&mut out)?;
    finish(out, out_path)?;
    eprintln!("vocabulary: c={} d={} from {} sentences", vocab.num_predicates(), vocab.num_relations(), corpus.len());
    Ok(())
}

fn encode_sentence(tokens: &[bove::corpus::RawToken], vocab: &Vocabulary) -> bove::Result<SentenceTensors> {
    encode_graph(&to_sentence_graph(tokens, vocab)?)
}

pub fn encode(config: &PipelineConfig) -> Result<(), CliError> {
    let corpus = read_corpus(config)?;
    let vocab = read_vocab(config)?;
    let out_path = config.required("tensors")?;
    let sentences = corpus
        .iter()
        .enumerate()
        .map(|(i, s)| encode_sentence(s, &vocab).map_err(|e| CliError::Data(format!("sentence {i}: {e}"))))
        .collect::<Result<Vec<_>, _>>()?;
    let tensors = TensorCorpus {
        num_predicates: vocab.num_predicates(),
        num_relations: vocab.num_relations(),
        ids: (0..sentences.len()).map(|i| i.to_string()).collect(),
        sentences,
    };
    let mut out = create(out_path)?;
    tensors.write_to(&mut out)?;
    finish(out, out_path)?;
    eprintln!("encoded {} sentences", tensors.sentences.len());
    Ok(())
}

pub fn train(config: &PipelineConfig) -> Result<(), CliError> {
    let corpus = read_tensors(config)?;
    let hyper = config.hyper()?;
    if config.trainer == Trainer::Als {
        als::check_rank_cap(&hyper, hyper.r)?;
    }
    let model_path = config.required("model")?;
    let mut model =
        TypeEmbeddings::init(corpus.num_predicates, corpus.num_relations, hyper.r, config.stage_seed(Stage::Init));
    if let Some(pretrained) = config.path("pretrained") {
        let pretrained = config.input("pretrained").map(|_| pretrained)?;
        let vocab = read_vocab(config)?;
        if vocab.num_predicates() != corpus.num_predicates || vocab.num_relations() != corpus.num_relations {
            return Err(CliError::Data(format!(
                "vocabulary (c={}, d={}) does not match the encoded corpus (c={}, d={})",
                vocab.num_predicates(),
                vocab.num_relations(),
                corpus.num_predicates,
                corpus.num_relations
            )));
        }
        model = init_for_training(&vocab, &hyper, config.stage_seed(Stage::Init));
        let frozen = load_pretrained(&mut model, open(pretrained)?, &vocab).map_err(in_file(pretrained))?;
        eprintln!("froze {frozen} pretrained word vectors");
    }

    let mut log = match config.path("log") {
        Some(p) => Some((create(p)?, p)),
        None => None,
    };
    let mut log_error = None;
    let mut write_line = |line: String| {
        if let Some((out, _)) = log.as_mut() {
            if let Err(e) = writeln!(out, "{line}") {
                log_error.get_or_insert(e);
            }
        }
    };
    let (model, final_objective) = match config.trainer {
        Trainer::Als => {
            let run = als::train_with_log(&corpus.sentences, model, &hyper, |l| write_line(l.log_line()))?;
            eprintln!("als: {} rounds, stop={:?}", run.trace.len() - 1, run.stop);
            (run.model, run.trace.last().map(|l| l.objective))
        }
        Trainer::Sgd => {
            let mut sgd = config.sgd.clone();
            sgd.seed = config.stage_seed(Stage::Sgd);
            let run = train_sgd_with_log(&corpus.sentences, model, &hyper, &sgd, |l| write_line(sgd_log_line(l)))?;
            let objective = als::corpus_objective(&corpus.sentences, &run.model, &run.token_embeddings, &hyper)?;
            eprintln!("sgd: {} epochs", sgd.epochs);
            (run.model, Some(objective.total))
        }
    };
    if let Some(e) = log_error {
        return Err(CliError::Data(format!("cannot write training log: {e}")));
    }
    if let Some((out, p)) = log {
        finish(out, p)?;
    }
    let mut out = create(model_path)?;
    save_model(&mut out, &model, &hyper)?;
    finish(out, model_path)?;
    if let Some(obj) = final_objective {
        eprintln!("final objective {obj}");
    }
    Ok(())
}

/// An encoded sentence, or why encoding failed.
type Encoded = Result<SentenceTensors, String>;

/// Sentences to infer, each already encoded or carrying its encoding error.
fn inference_inputs(config: &PipelineConfig, model: &TypeEmbeddings) -> Result<Vec<(String, Encoded)>, CliError> {
    let mismatch = |what: &str, c: usize, d: usize| {
        CliError::Data(format!(
            "vocabulary mismatch: {what} has c={c}, d={d} but the model has c={}, d={}",
            model.num_predicates(),
            model.num_relations()
        ))
    };
    if config.path("corpus").is_some() {
        let corpus = read_corpus(config)?;
        let vocab = read_vocab(config)?;
        if vocab.num_predicates() != model.num_predicates() || vocab.num_relations() != model.num_relations() {
            return Err(mismatch("the vocabulary", vocab.num_predicates(), vocab.num_relations()));
        }
        Ok(corpus
            .iter()
            .enumerate()
            .map(|(i, s)| (i.to_string(), encode_sentence(s, &vocab).map_err(|e| e.to_string())))
            .collect())
    } else {
        let tensors = read_tensors(config)?;
        if tensors.num_predicates != model.num_predicates() || tensors.num_relations != model.num_relations() {
            return Err(mismatch("the encoded corpus", tensors.num_predicates, tensors.num_relations));
        }
        Ok(tensors.ids.into_iter().zip(tensors.sentences.into_iter().map(Ok)).collect())
    }
}

pub fn infer(config: &PipelineConfig) -> Result<(), CliError> {
    let model_path = config.input("model")?;
    let (model, stored) = load_model(open(model_path)?).map_err(in_file(model_path))?;
    let hyper = config.hyper_over(stored)?;
    let out_path = config.required("bags")?;
    let inputs = inference_inputs(config, &model)?;

    let solver = ESolver::new(&model, hyper.alpha, hyper.lambda_e);
    let records: Vec<BagRecord> = inputs
        .par_iter()
        .map(|(id, t)| {
            let result = t
                .as_ref()
                .map_err(Clone::clone)
                .and_then(|t| infer_with(&solver, t, &hyper).map_err(|e| e.to_string()));
            match result {
                Ok(embeddings) => BagRecord::Bag { id: id.clone(), embeddings },
                Err(message) => BagRecord::Error { id: id.clone(), message },
            }
        })
        .collect();
    let failures: Vec<&BagRecord> = records.iter().filter(|r| matches!(r, BagRecord::Error { .. })).collect();
    if config.fail_fast {
        if let Some(BagRecord::Error { id, message }) = failures.first() {
            return Err(CliError::Data(format!("sentence {id}: {message}")));
        }
    }
    let mut out = create(out_path)?;
    write_bags(&mut out, &records)?;
    finish(out, out_path)?;
    eprintln!("inferred {} bags, {} failed", records.len() - failures.len(), failures.len());
    Ok(())
}

fn evaluate(mode: ScoreMode, scored: &[ScoredPair]) -> Result<EvaluationReport, CliError> {
    match mode {
        ScoreMode::Sts => evaluate_sts(scored),
        ScoreMode::Snli => evaluate_snli(scored),
    }
    .map_err(|e| CliError::Data(format!("evaluation failed: {e}")))
}

fn emit_report(config: &PipelineConfig, report: &EvaluationReport) -> Result<(), CliError> {
    let text = report.to_text();
    if let Some(path) = config.path("report") {
        let mut out = create(path)?;
        out.write_all(text.as_bytes()).map_err(|e| CliError::Data(e.to_string()))?;
        finish(out, path)?;
    }
    print!("{text}");
    Ok(())
}

pub fn score(config: &PipelineConfig) -> Result<(), CliError> {
    let bags_path = config.input("bags")?;
    let pairs_path = config.input("pairs")?;
    let mut bags: HashMap<String, Result<TokenEmbeddings, String>> = HashMap::new();
    for record in read_bags(open(bags_path)?).map_err(in_file(bags_path))? {
        match record {
            BagRecord::Bag { id, embeddings } => bags.insert(id, Ok(embeddings)),
            BagRecord::Error { id, message } => bags.insert(id, Err(message)),
        };
    }
    let pairs = read_pairs(open(pairs_path)?, config.score_mode)?;
    let lookup = |pair: &str, id: &str| -> Result<&TokenEmbeddings, CliError> {
        match bags.get(id) {
            Some(Ok(bag)) => Ok(bag),
            Some(Err(message)) => Err(CliError::Data(format!("pair {pair}: sentence {id} has no bag ({message})"))),
            None => Err(CliError::Data(format!("pair {pair}: sentence id {id} not found in {}", bags_path.display()))),
        }
    };
    let mut scored = Vec::with_capacity(pairs.len());
    for pair in &pairs {
        let a = lookup(&pair.id, &pair.first)?;
        let b = lookup(&pair.id, &pair.second)?;
        let score = match config.score_mode {
            ScoreMode::Sts => score_similarity(a, b),
            ScoreMode::Snli => score_entailment(a, b),
        }
        .map_err(|e| CliError::Data(format!("pair {}: {e}", pair.id)))?;
        scored.push(ScoredPair { id: pair.id.clone(), subset: pair.subset.clone(), score, gold: pair.gold.clone() });
    }
    if let Some(path) = config.path("scores") {
        let mut out = create(path)?;
        write_scores(&mut out, &scored).map_err(|e| CliError::Data(e.to_string()))?;
        finish(out, path)?;
    }
    emit_report(config, &evaluate(config.score_mode, &scored)?)
}

pub fn eval(config: &PipelineConfig) -> Result<(), CliError> {
    let path = config.input("scores")?;
    let scored = read_scores(open(path)?, config.score_mode)?;
    emit_report(config, &evaluate(config.score_mode, &scored)?)
}

pub fn synth(config: &PipelineConfig) -> Result<(), CliError> {
    let mut synth = config.synth.clone();
    synth.seed = config.stage_seed(Stage::Synth);
    synth.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let out_path = config.required("tensors")?;
    let syn = generate(&synth)?;
    let mut out = create(out_path)?;
    syn.corpus.write_to(&mut out)?;
    finish(out, out_path)?;
    if let Some(path) = config.path("truth") {
        let hyper = Hyperparams { r: synth.r, ..config.hyper()? };
        let mut out = create(path)?;
        save_model(&mut out, &syn.truth, &hyper)?;
        finish(out, path)?;
    }
    if let Some(path) = config.path("truth_bags") {
        let records: Vec<BagRecord> = syn
            .corpus
            .ids
            .iter()
            .zip(&syn.token_embeddings)
            .map(|(id, e)| BagRecord::Bag { id: id.clone(), embeddings: TokenEmbeddings(e.clone()) })
            .collect();
        let mut out = create(path)?;
        write_bags(&mut out, &records)?;
        finish(out, path)?;
    }
    eprintln!("synthesized {} sentences ({})", synth.num_sentences, synth.mode);
    Ok(())
}
