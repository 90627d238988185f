//! CoNLL ingestion, label normalization and vocabulary construction.
//!
//! Words and PoS tags are both unary predicates and share one id space; their
//! keys carry a namespace prefix (`w:` / `p:`) so a word and a tag spelled the
//! same never collide. Relations (dependency labels plus the adjacency
//! relation) have their own id space.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::io::{BufRead, Write};

use crate::error::{BoveError, Result};

pub const NUMBER_LABEL: &str = "NB";
pub const PUNCT_LABEL: &str = "PUNCT";
pub const UNKNOWN_PREFIX: &str = "UNKNOWN_";
pub const UNKNOWN_POSTAG: &str = "UNKNOWN_POSTAG";
pub const UNKNOWN_RELATION: &str = "UNKNOWN_RELATION";
/// Adjacency relation linking token `i` to token `i + 1`.
pub const ADJ_LABEL: &str = "ADJ";

/// One row of a CoNLL file, before normalization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawToken {
    /// 1-based position in the sentence.
    pub index: usize,
    pub form: String,
    pub pos: String,
    /// 1-based head position, 0 for the root.
    pub head: usize,
    pub deprel: String,
}

impl RawToken {
    pub fn new(index: usize, form: &str, pos: &str, head: usize, deprel: &str) -> Self {
        RawToken { index, form: form.to_string(), pos: pos.to_string(), head, deprel: deprel.to_string() }
    }
}

/// 0-based column positions of the fields we read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConllColumns {
    pub id: usize,
    pub form: usize,
    pub pos: usize,
    pub head: usize,
    pub deprel: usize,
}

impl ConllColumns {
    /// CoNLL 2009 layout (ID FORM LEMMA PLEMMA POS PPOS FEAT PFEAT HEAD PHEAD DEPREL ...).
    pub const CONLL2009: ConllColumns = ConllColumns { id: 0, form: 1, pos: 4, head: 8, deprel: 10 };
    /// CoNLL-X (2006) layout (ID FORM LEMMA CPOSTAG POSTAG FEATS HEAD DEPREL ...).
    pub const CONLL2006: ConllColumns = ConllColumns { id: 0, form: 1, pos: 4, head: 6, deprel: 7 };

    fn min_columns(&self) -> usize {
        [self.id, self.form, self.pos, self.head, self.deprel].into_iter().max().unwrap_or(0) + 1
    }
}

impl Default for ConllColumns {
    fn default() -> Self {
        Self::CONLL2009
    }
}

/// Reads tab-separated dependency parses, one token per line, sentences
/// separated by blank lines. Lines starting with `#` are comments.
pub fn read_conll<R: BufRead>(reader: R, columns: &ConllColumns) -> Result<Vec<Vec<RawToken>>> {
    let mut sentences = Vec::new();
    let mut current: Vec<RawToken> = Vec::new();
    let mut lines_of_current: Vec<usize> = Vec::new();
    let need = columns.min_columns();

    let mut finish = |tokens: &mut Vec<RawToken>, lines: &mut Vec<usize>| -> Result<()> {
        if tokens.is_empty() {
            return Ok(());
        }
        let n = tokens.len();
        for (tok, &line) in tokens.iter().zip(lines.iter()) {
            if tok.head > n {
                return Err(BoveError::Parse {
                    line,
                    message: format!("head {} out of range for a {}-token sentence", tok.head, n),
                });
            }
        }
        sentences.push(std::mem::take(tokens));
        lines.clear();
        Ok(())
    };

    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line?;
        let trimmed = line.trim_end_matches(['\r', '\n']);
        if trimmed.trim().is_empty() {
            finish(&mut current, &mut lines_of_current)?;
            continue;
        }
        if trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split('\t').collect();
        if fields.len() < need {
            return Err(BoveError::Parse {
                line: lineno,
                message: format!("expected at least {need} tab-separated columns, found {}", fields.len()),
            });
        }
        let parse_num = |what: &str, s: &str| -> Result<usize> {
            s.trim()
                .parse::<usize>()
                .map_err(|_| BoveError::Parse { line: lineno, message: format!("non-numeric {what} {s:?}") })
        };
        let index = parse_num("token id", fields[columns.id])?;
        let head = parse_num("head", fields[columns.head])?;
        if index != current.len() + 1 {
            return Err(BoveError::Parse {
                line: lineno,
                message: format!("token id {index} out of sequence (expected {})", current.len() + 1),
            });
        }
        if head == index {
            return Err(BoveError::Parse { line: lineno, message: format!("token {index} is its own head") });
        }
        current.push(RawToken {
            index,
            form: fields[columns.form].to_string(),
            pos: fields[columns.pos].to_string(),
            head,
            deprel: fields[columns.deprel].to_string(),
        });
        lines_of_current.push(lineno);
    }
    finish(&mut current, &mut lines_of_current)?;
    Ok(sentences)
}

/// Minimum frequencies for a label to survive normalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Thresholds {
    pub word: u64,
    pub pos: u64,
    pub relation: u64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds { word: 2, pos: 2, relation: 1000 }
    }
}

/// Decides which PoS tags mark punctuation.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum PunctuationTags {
    /// Tags made only of non-alphanumeric characters (`,`, `.`, `` ` ``, `-LRB-` is not).
    #[default]
    NonAlphanumeric,
    Explicit(BTreeSet<String>),
}

impl PunctuationTags {
    pub fn is_punctuation(&self, pos: &str) -> bool {
        match self {
            PunctuationTags::NonAlphanumeric => !pos.is_empty() && pos.chars().all(|ch| !ch.is_alphanumeric()),
            PunctuationTags::Explicit(set) => set.contains(pos),
        }
    }
}

/// Optional sign, then digits mixed with `,` / `.` separators, at least one digit.
pub fn is_number(form: &str) -> bool {
    let body = form.strip_prefix(['+', '-']).unwrap_or(form);
    !body.is_empty()
        && body.chars().all(|ch| ch.is_ascii_digit() || ch == ',' || ch == '.')
        && body.chars().any(|ch| ch.is_ascii_digit())
}

/// Raw label frequencies collected over a training corpus.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LabelCounts {
    pub words: HashMap<String, u64>,
    pub pos: HashMap<String, u64>,
    pub relations: HashMap<String, u64>,
}

impl LabelCounts {
    /// Counts raw forms (numbers and punctuation excluded), tags and
    /// dependency labels of non-root tokens.
    pub fn collect(corpus: &[Vec<RawToken>], punct: &PunctuationTags) -> Self {
        let mut counts = LabelCounts::default();
        for tok in corpus.iter().flatten() {
            *counts.pos.entry(tok.pos.clone()).or_default() += 1;
            if !is_number(&tok.form) && !punct.is_punctuation(&tok.pos) {
                *counts.words.entry(tok.form.clone()).or_default() += 1;
            }
            if tok.head != 0 {
                *counts.relations.entry(tok.deprel.clone()).or_default() += 1;
            }
        }
        counts
    }
}

/// Everything needed to normalize labels against training counts.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NormalizationRules {
    pub thresholds: Thresholds,
    pub punctuation: PunctuationTags,
}

/// Normalized `(word_label, pos_label)` of a token.
pub fn normalize_token(form: &str, pos: &str, counts: &LabelCounts, rules: &NormalizationRules) -> (String, String) {
    let pos_label = if counts.pos.get(pos).copied().unwrap_or(0) >= rules.thresholds.pos {
        pos.to_string()
    } else {
        UNKNOWN_POSTAG.to_string()
    };
    let word_label = if is_number(form) {
        NUMBER_LABEL.to_string()
    } else if rules.punctuation.is_punctuation(pos) {
        PUNCT_LABEL.to_string()
    } else if counts.words.get(form).copied().unwrap_or(0) >= rules.thresholds.word {
        form.to_string()
    } else {
        format!("{UNKNOWN_PREFIX}{pos_label}")
    };
    (word_label, pos_label)
}

pub fn normalize_relation(deprel: &str, counts: &LabelCounts, rules: &NormalizationRules) -> String {
    if counts.relations.get(deprel).copied().unwrap_or(0) >= rules.thresholds.relation {
        deprel.to_string()
    } else {
        UNKNOWN_RELATION.to_string()
    }
}

/// Label namespaces in the persisted vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Namespace {
    Word,
    Pos,
    Relation,
}

impl Namespace {
    pub fn tag(self) -> &'static str {
        match self {
            Namespace::Word => "w",
            Namespace::Pos => "p",
            Namespace::Relation => "r",
        }
    }

    fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "w" => Some(Namespace::Word),
            "p" => Some(Namespace::Pos),
            "r" => Some(Namespace::Relation),
            _ => None,
        }
    }
}

impl fmt::Display for Namespace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VocabEntry {
    pub namespace: Namespace,
    pub label: String,
    pub count: u64,
}

impl VocabEntry {
    fn key(&self) -> String {
        format!("{}:{}", self.namespace.tag(), self.label)
    }
}

/// Dense id assignment for predicates (`[0, c)`) and relations (`[0, d)`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    predicates: Vec<VocabEntry>,
    relations: Vec<VocabEntry>,
    predicate_ids: HashMap<String, usize>,
    relation_ids: HashMap<String, usize>,
    pub rules: NormalizationRules,
}

fn sort_entries(entries: &mut [VocabEntry]) {
    entries.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.key().cmp(&b.key())));
}

/// The generic word predicate used when no `UNKNOWN_<POS>` variant exists.
pub fn generic_unknown_word() -> String {
    format!("{UNKNOWN_PREFIX}{UNKNOWN_POSTAG}")
}

/// Builds a vocabulary from a training corpus. Ids are assigned by
/// descending normalized frequency, ties broken lexicographically on the
/// namespaced key.
pub fn build_vocabulary(corpus: &[Vec<RawToken>], rules: &NormalizationRules) -> Result<Vocabulary> {
    if corpus.iter().all(|s| s.is_empty()) {
        return Err(BoveError::EmptyCorpus);
    }
    let raw = LabelCounts::collect(corpus, &rules.punctuation);

    let mut preds: HashMap<(Namespace, String), u64> = HashMap::new();
    let mut rels: HashMap<String, u64> = HashMap::new();
    for sentence in corpus {
        for tok in sentence {
            let (w, p) = normalize_token(&tok.form, &tok.pos, &raw, rules);
            *preds.entry((Namespace::Word, w)).or_default() += 1;
            *preds.entry((Namespace::Pos, p)).or_default() += 1;
            if tok.head != 0 {
                *rels.entry(normalize_relation(&tok.deprel, &raw, rules)).or_default() += 1;
            }
        }
        *rels.entry(ADJ_LABEL.to_string()).or_default() += sentence.len().saturating_sub(1) as u64;
    }
    for special in [NUMBER_LABEL.to_string(), PUNCT_LABEL.to_string(), generic_unknown_word()] {
        preds.entry((Namespace::Word, special)).or_default();
    }
    preds.entry((Namespace::Pos, UNKNOWN_POSTAG.to_string())).or_default();
    rels.entry(UNKNOWN_RELATION.to_string()).or_default();
    rels.entry(ADJ_LABEL.to_string()).or_default();

    let mut predicates: Vec<VocabEntry> =
        preds.into_iter().map(|((namespace, label), count)| VocabEntry { namespace, label, count }).collect();
    let mut relations: Vec<VocabEntry> =
        rels.into_iter().map(|(label, count)| VocabEntry { namespace: Namespace::Relation, label, count }).collect();
    sort_entries(&mut predicates);
    sort_entries(&mut relations);
    Ok(Vocabulary::from_entries(predicates, relations, rules.clone()))
}

impl Vocabulary {
    fn from_entries(predicates: Vec<VocabEntry>, relations: Vec<VocabEntry>, rules: NormalizationRules) -> Self {
        let predicate_ids = predicates.iter().enumerate().map(|(i, e)| (e.key(), i)).collect();
        let relation_ids = relations.iter().enumerate().map(|(i, e)| (e.label.clone(), i)).collect();
        Vocabulary { predicates, relations, predicate_ids, relation_ids, rules }
    }

    /// Number of unary predicates `c`.
    pub fn num_predicates(&self) -> usize {
        self.predicates.len()
    }

    /// Number of binary relations `d`.
    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn predicate(&self, id: usize) -> &VocabEntry {
        &self.predicates[id]
    }

    pub fn relation(&self, id: usize) -> &VocabEntry {
        &self.relations[id]
    }

    pub fn predicates(&self) -> &[VocabEntry] {
        &self.predicates
    }

    pub fn relations(&self) -> &[VocabEntry] {
        &self.relations
    }

    pub fn predicate_id(&self, namespace: Namespace, label: &str) -> Option<usize> {
        self.predicate_ids.get(&format!("{}:{}", namespace.tag(), label)).copied()
    }

    pub fn relation_id(&self, label: &str) -> Option<usize> {
        self.relation_ids.get(label).copied()
    }

    /// Maps a raw token to `(word_id, pos_id)`, falling back to unknown
    /// predicates for labels outside the vocabulary.
    pub fn lookup_token(&self, form: &str, pos: &str) -> Result<(usize, usize)> {
        let pos_label = if self.predicate_id(Namespace::Pos, pos).is_some() { pos } else { UNKNOWN_POSTAG };
        let pos_id = self.predicate_id(Namespace::Pos, pos_label).ok_or_else(|| {
            BoveError::VocabularyMismatch(format!("no predicate for tag {pos:?} and no {UNKNOWN_POSTAG}"))
        })?;
        let word_label = if is_number(form) {
            NUMBER_LABEL.to_string()
        } else if self.rules.punctuation.is_punctuation(pos) {
            PUNCT_LABEL.to_string()
        } else if self.predicate_id(Namespace::Word, form).is_some() {
            form.to_string()
        } else {
            let variant = format!("{UNKNOWN_PREFIX}{pos_label}");
            if self.predicate_id(Namespace::Word, &variant).is_some() {
                variant
            } else {
                generic_unknown_word()
            }
        };
        let word_id = self.predicate_id(Namespace::Word, &word_label).ok_or_else(|| {
            BoveError::VocabularyMismatch(format!("no predicate for word {form:?} (normalized {word_label:?})"))
        })?;
        Ok((word_id, pos_id))
    }

    pub fn lookup_relation(&self, deprel: &str) -> Result<usize> {
        self.relation_id(deprel)
            .or_else(|| self.relation_id(UNKNOWN_RELATION))
            .ok_or_else(|| BoveError::VocabularyMismatch(format!("no relation for {deprel:?}")))
    }

    /// Writes `namespace \t label \t id \t count` lines, predicates first.
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        for (id, e) in self.predicates.iter().enumerate() {
            writeln!(out, "{}\t{}\t{}\t{}", e.namespace, e.label, id, e.count)?;
        }
        for (id, e) in self.relations.iter().enumerate() {
            writeln!(out, "{}\t{}\t{}\t{}", e.namespace, e.label, id, e.count)?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(reader: R, rules: NormalizationRules) -> Result<Self> {
        let mut predicates: Vec<Option<VocabEntry>> = Vec::new();
        let mut relations: Vec<Option<VocabEntry>> = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let bad = |message: String| BoveError::Parse { line: lineno + 1, message };
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(bad(format!("expected 4 columns, found {}", fields.len())));
            }
            let namespace =
                Namespace::from_tag(fields[0]).ok_or_else(|| bad(format!("unknown namespace {:?}", fields[0])))?;
            let id: usize = fields[2].parse().map_err(|_| bad(format!("bad id {:?}", fields[2])))?;
            let count: u64 = fields[3].parse().map_err(|_| bad(format!("bad count {:?}", fields[3])))?;
            let table = if namespace == Namespace::Relation { &mut relations } else { &mut predicates };
            if table.len() <= id {
                table.resize(id + 1, None);
            }
            if table[id].is_some() {
                return Err(bad(format!("duplicate id {id}")));
            }
            table[id] = Some(VocabEntry { namespace, label: fields[1].to_string(), count });
        }
        let densify = |table: Vec<Option<VocabEntry>>, what: &str| -> Result<Vec<VocabEntry>> {
            table
                .into_iter()
                .enumerate()
                .map(|(i, e)| e.ok_or_else(|| BoveError::VocabularyMismatch(format!("{what} id {i} missing"))))
                .collect()
        };
        let vocab = Vocabulary::from_entries(densify(predicates, "predicate")?, densify(relations, "relation")?, rules);
        if vocab.predicate_ids.len() != vocab.predicates.len() || vocab.relation_ids.len() != vocab.relations.len() {
            return Err(BoveError::VocabularyMismatch("duplicate labels".into()));
        }
        Ok(vocab)
    }
}

/// Unary predicates attached to one token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TokenPredicates {
    pub word: usize,
    pub pos: usize,
}

/// A labeled directed edge `head → dependent`, 0-based token indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RelationTriple {
    pub relation: usize,
    pub head: usize,
    pub dependent: usize,
}

/// A sentence as predicate-labeled tokens and relation triples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentenceGraph {
    pub num_predicates: usize,
    pub num_relations: usize,
    pub tokens: Vec<TokenPredicates>,
    pub relations: Vec<RelationTriple>,
}

impl SentenceGraph {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Checks id ranges and duplicate triples.
    pub fn validate(&self) -> Result<()> {
        let n = self.tokens.len();
        for t in &self.tokens {
            if t.word >= self.num_predicates || t.pos >= self.num_predicates {
                return Err(BoveError::Invalid(format!("predicate id out of range (c={})", self.num_predicates)));
            }
        }
        let mut seen = std::collections::HashSet::new();
        for rel in &self.relations {
            if rel.relation >= self.num_relations || rel.head >= n || rel.dependent >= n {
                return Err(BoveError::Invalid(format!("relation triple {rel:?} out of range")));
            }
            if !seen.insert(*rel) {
                return Err(BoveError::Invalid(format!("duplicate relation triple {rel:?}")));
            }
        }
        Ok(())
    }
}

/// Encodes a parsed sentence as a graph over vocabulary ids. Dependencies
/// come first in token order, followed by the `n − 1` adjacency edges.
pub fn to_sentence_graph(tokens: &[RawToken], vocab: &Vocabulary) -> Result<SentenceGraph> {
    let n = tokens.len();
    let mut preds = Vec::with_capacity(n);
    for tok in tokens {
        let (word, pos) = vocab.lookup_token(&tok.form, &tok.pos)?;
        preds.push(TokenPredicates { word, pos });
    }
    let mut relations = Vec::with_capacity(2 * n);
    let mut seen = std::collections::HashSet::new();
    let mut push = |triple: RelationTriple| {
        if seen.insert(triple) {
            relations.push(triple);
        }
    };
    for (i, tok) in tokens.iter().enumerate() {
        if tok.head == 0 {
            continue;
        }
        if tok.head > n {
            return Err(BoveError::Invalid(format!(
                "token {} has head {} beyond sentence length {n}",
                i + 1,
                tok.head
            )));
        }
        push(RelationTriple { relation: vocab.lookup_relation(&tok.deprel)?, head: tok.head - 1, dependent: i });
    }
    let adj = vocab
        .relation_id(ADJ_LABEL)
        .ok_or_else(|| BoveError::VocabularyMismatch("vocabulary lacks the adjacency relation".into()))?;
    for i in 1..n {
        push(RelationTriple { relation: adj, head: i - 1, dependent: i });
    }
    Ok(SentenceGraph {
        num_predicates: vocab.num_predicates(),
        num_relations: vocab.num_relations(),
        tokens: preds,
        relations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashMap;
    use std::io::Cursor;

    fn counts(words: &[(&str, u64)], pos: &[(&str, u64)], rels: &[(&str, u64)]) -> LabelCounts {
        let map = |xs: &[(&str, u64)]| xs.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        LabelCounts { words: map(words), pos: map(pos), relations: map(rels) }
    }

    #[test]
    fn numbers_become_nb() {
        let c = counts(&[], &[("CD", 100)], &[]);
        let (w, p) = normalize_token("3.14", "CD", &c, &NormalizationRules::default());
        assert_eq!(w, "NB");
        assert_eq!(p, "CD");
        assert!(is_number("1,000"));
        assert!(is_number("-2"));
        assert!(!is_number("-"));
        assert!(!is_number("3rd"));
    }

    #[test]
    fn hapax_becomes_unknown_pos() {
        let c = counts(&[("zyzzyva", 1)], &[("NN", 5000)], &[]);
        let (w, _) = normalize_token("zyzzyva", "NN", &c, &NormalizationRules::default());
        assert_eq!(w, "UNKNOWN_NN");
    }

    #[test]
    fn frequent_labels_pass_through() {
        let c = counts(&[("bank", 50)], &[("NN", 5000)], &[]);
        assert_eq!(
            normalize_token("bank", "NN", &c, &NormalizationRules::default()),
            ("bank".to_string(), "NN".to_string())
        );
    }

    #[test]
    fn rare_tag_becomes_unknown_postag() {
        let c = counts(&[("bank", 50)], &[("XX", 1)], &[]);
        let (w, p) = normalize_token("bank", "XX", &c, &NormalizationRules::default());
        assert_eq!(w, "bank");
        assert_eq!(p, UNKNOWN_POSTAG);
    }

    #[test]
    fn punctuation_by_tag() {
        let c = counts(&[], &[(",", 10)], &[]);
        let (w, p) = normalize_token(",", ",", &c, &NormalizationRules::default());
        assert_eq!(w, "PUNCT");
        assert_eq!(p, ",");
        assert!(!PunctuationTags::NonAlphanumeric.is_punctuation("-LRB-"));
        let explicit = PunctuationTags::Explicit(["-LRB-".to_string()].into_iter().collect());
        assert!(explicit.is_punctuation("-LRB-"));
    }

    #[test]
    fn relation_thresholds() {
        let c = counts(&[], &[], &[("SBJ", 30000), ("GAP-LOC", 500)]);
        let rules = NormalizationRules::default();
        assert_eq!(normalize_relation("SBJ", &c, &rules), "SBJ");
        assert_eq!(normalize_relation("GAP-LOC", &c, &rules), UNKNOWN_RELATION);
        assert_eq!(normalize_relation("", &c, &rules), UNKNOWN_RELATION);
    }

    fn conll_line(id: usize, form: &str, pos: &str, head: usize, rel: &str) -> String {
        format!("{id}\t{form}\t_\t_\t{pos}\t_\t_\t_\t{head}\t_\t{rel}\t_")
    }

    #[test]
    fn reads_two_sentences() {
        let text = [
            conll_line(1, "Dogs", "NNS", 2, "SBJ"),
            conll_line(2, "bark", "VBP", 0, "ROOT"),
            String::new(),
            conll_line(1, "Hi", "UH", 0, "ROOT"),
            String::new(),
        ]
        .join("\n");
        let s = read_conll(Cursor::new(text), &ConllColumns::default()).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0][0], RawToken::new(1, "Dogs", "NNS", 2, "SBJ"));
        assert_eq!(s[1].len(), 1);
    }

    #[test]
    fn empty_stream() {
        let s = read_conll(Cursor::new(""), &ConllColumns::default()).unwrap();
        assert!(s.is_empty());
    }

    #[test]
    fn head_out_of_range_names_line() {
        let text = [
            conll_line(1, "a", "DT", 2, "NMOD"),
            conll_line(2, "b", "NN", 7, "SBJ"),
            conll_line(3, "c", "VB", 0, "ROOT"),
        ]
        .join("\n");
        match read_conll(Cursor::new(text), &ConllColumns::default()) {
            Err(BoveError::Parse { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains("out of range"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_lines() {
        let cols = ConllColumns::default();
        let short = "1\tfoo\tbar";
        assert!(matches!(read_conll(Cursor::new(short), &cols), Err(BoveError::Parse { line: 1, .. })));
        let text = conll_line(1, "a", "DT", 0, "ROOT").replace("\t0\t", "\tx\t");
        assert!(matches!(read_conll(Cursor::new(text), &cols), Err(BoveError::Parse { line: 1, .. })));
    }

    #[test]
    fn conll2006_layout() {
        let text = "1\tDogs\tdog\tN\tNNS\t_\t2\tSBJ\n2\tbark\tbark\tV\tVBP\t_\t0\tROOT\n";
        let s = read_conll(Cursor::new(text), &ConllColumns::CONLL2006).unwrap();
        assert_eq!(s[0][0], RawToken::new(1, "Dogs", "NNS", 2, "SBJ"));
    }

    fn small_corpus() -> Vec<Vec<RawToken>> {
        vec![
            vec![RawToken::new(1, "dogs", "NNS", 2, "SBJ"), RawToken::new(2, "bark", "VBP", 0, "ROOT")],
            vec![
                RawToken::new(1, "dogs", "NNS", 2, "SBJ"),
                RawToken::new(2, "bark", "VBP", 0, "ROOT"),
                RawToken::new(3, "loudly", "RB", 2, "ADV"),
            ],
        ]
    }

    #[test]
    fn vocabulary_contains_specials() {
        let rules =
            NormalizationRules { thresholds: Thresholds { word: 2, pos: 1, relation: 1 }, ..Default::default() };
        let v = build_vocabulary(&small_corpus(), &rules).unwrap();
        assert!(v.relation_id(ADJ_LABEL).is_some());
        assert!(v.relation_id(UNKNOWN_RELATION).is_some());
        assert!(v.predicate_id(Namespace::Word, "UNKNOWN_RB").is_some());
        assert!(v.predicate_id(Namespace::Word, "dogs").is_some());
        assert!(v.predicate_id(Namespace::Word, "loudly").is_none());
        assert!(v.predicate_id(Namespace::Pos, UNKNOWN_POSTAG).is_some());
        assert!(v.predicate_id(Namespace::Word, &generic_unknown_word()).is_some());
    }

    #[test]
    fn rare_tag_hapax_uses_generic_unknown() {
        let v = build_vocabulary(&small_corpus(), &NormalizationRules::default()).unwrap();
        assert!(v.predicate_id(Namespace::Pos, "RB").is_none());
        assert!(v.predicate_id(Namespace::Word, "UNKNOWN_RB").is_none());
        let generic = v.predicate_id(Namespace::Word, &generic_unknown_word()).unwrap();
        assert_eq!(v.predicate(generic).count, 1);
    }

    #[test]
    fn threshold_inactive_corpus() {
        let corpus = vec![
            vec![RawToken::new(1, "a", "X", 0, "ROOT"), RawToken::new(2, "b", "Y", 1, "D")],
            vec![RawToken::new(1, "a", "X", 0, "ROOT"), RawToken::new(2, "b", "Y", 1, "D")],
        ];
        let v = build_vocabulary(&corpus, &NormalizationRules::default()).unwrap();
        let unknown_variants = v
            .predicates()
            .iter()
            .filter(|e| e.namespace == Namespace::Word && e.label.starts_with(UNKNOWN_PREFIX) && e.count > 0)
            .count();
        assert_eq!(unknown_variants, 0);
        let produced = v.predicates().iter().filter(|e| e.count > 0).count();
        assert_eq!(produced, 2 + 2);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert!(matches!(build_vocabulary(&[], &NormalizationRules::default()), Err(BoveError::EmptyCorpus)));
    }

    #[test]
    fn vocabulary_round_trips_through_text() {
        let v = build_vocabulary(&small_corpus(), &NormalizationRules::default()).unwrap();
        let mut buf = Vec::new();
        v.write_to(&mut buf).unwrap();
        let back = Vocabulary::read_from(Cursor::new(&buf), NormalizationRules::default()).unwrap();
        assert_eq!(back, v);
    }

    #[test]
    fn graph_examples() {
        let rules =
            NormalizationRules { thresholds: Thresholds { word: 1, pos: 1, relation: 1 }, ..Default::default() };
        let v = build_vocabulary(&small_corpus(), &rules).unwrap();
        let one = to_sentence_graph(&[RawToken::new(1, "bark", "VBP", 0, "ROOT")], &v).unwrap();
        assert!(one.relations.is_empty());

        let two = to_sentence_graph(
            &[RawToken::new(1, "bark", "VBP", 0, "ROOT"), RawToken::new(2, "dogs", "NNS", 1, "SBJ")],
            &v,
        )
        .unwrap();
        let sbj = v.relation_id("SBJ").unwrap();
        let adj = v.relation_id(ADJ_LABEL).unwrap();
        let got: BTreeSet<_> = two.relations.iter().copied().collect();
        let want: BTreeSet<_> = [
            RelationTriple { relation: sbj, head: 0, dependent: 1 },
            RelationTriple { relation: adj, head: 0, dependent: 1 },
        ]
        .into_iter()
        .collect();
        assert_eq!(got, want);

        let three = to_sentence_graph(&small_corpus()[1], &v).unwrap();
        assert_eq!(three.relations.iter().filter(|r| r.relation == adj).count(), 2);
    }

    #[test]
    fn unseen_words_fall_back() {
        let v = build_vocabulary(&small_corpus(), &NormalizationRules::default()).unwrap();
        let g = to_sentence_graph(
            &[RawToken::new(1, "cats", "NNS", 0, "ROOT"), RawToken::new(2, "purr", "ZZ", 1, "WEIRD")],
            &v,
        )
        .unwrap();
        let unk_nns = v.predicate_id(Namespace::Word, "UNKNOWN_NNS");
        // NNS is frequent but no NNS hapax existed in training, so the generic fallback applies.
        assert!(unk_nns.is_none());
        assert_eq!(g.tokens[0].word, v.predicate_id(Namespace::Word, &generic_unknown_word()).unwrap());
        assert_eq!(g.tokens[1].pos, v.predicate_id(Namespace::Pos, UNKNOWN_POSTAG).unwrap());
        assert!(g.relations.iter().any(|r| r.relation == v.relation_id(UNKNOWN_RELATION).unwrap()));
    }

    const FORMS: &[&str] = &["the", "cat", "sat", "on", "mat", "42", ",", "dog", "ran"];
    const TAGS: &[&str] = &["DT", "NN", "VBD", "IN", "CD", ",", "NNS"];
    const RELS: &[&str] = &["NMOD", "SBJ", "OBJ", "PMOD", "P"];

    fn arb_sentence() -> impl Strategy<Value = Vec<RawToken>> {
        (1usize..7).prop_flat_map(|n| {
            proptest::collection::vec((0..FORMS.len(), 0..TAGS.len(), 0..=n, 0..RELS.len()), n).prop_map(move |rows| {
                rows.into_iter()
                    .enumerate()
                    .map(|(i, (f, t, h, r))| {
                        let head = if h == i + 1 { 0 } else { h };
                        RawToken::new(i + 1, FORMS[f], TAGS[t], head, RELS[r])
                    })
                    .collect()
            })
        })
    }

    fn arb_corpus() -> impl Strategy<Value = Vec<Vec<RawToken>>> {
        proptest::collection::vec(arb_sentence(), 1..8)
    }

    proptest! {
        #[test]
        fn graphs_stay_in_range(corpus in arb_corpus(), word in 1u64..4, rel in 1u64..5) {
            let rules = NormalizationRules { thresholds: Thresholds { word, pos: 2, relation: rel }, ..Default::default() };
            let v = build_vocabulary(&corpus, &rules).unwrap();
            for s in &corpus {
                let g = to_sentence_graph(s, &v).unwrap();
                g.validate().unwrap();
                let adj = v.relation_id(ADJ_LABEL).unwrap();
                prop_assert_eq!(g.relations.iter().filter(|r| r.relation == adj).count(), s.len() - 1);
            }
        }

        #[test]
        fn vocabulary_is_deterministic(corpus in arb_corpus()) {
            let rules = NormalizationRules::default();
            let a = build_vocabulary(&corpus, &rules).unwrap();
            let b = build_vocabulary(&corpus, &rules).unwrap();
            let mut ta = Vec::new();
            let mut tb = Vec::new();
            a.write_to(&mut ta).unwrap();
            b.write_to(&mut tb).unwrap();
            prop_assert_eq!(ta, tb);
        }

        #[test]
        fn raising_word_threshold_never_grows_c(corpus in arb_corpus(), t in 1u64..5) {
            // A form seen under several tags splits into several UNKNOWN_<POS>
            // predicates once it falls below the threshold, so the bound on c
            // needs one tag per form. Known word predicates shrink regardless.
            let single_tag = {
                let mut tags: HashMap<&str, &str> = HashMap::new();
                corpus.iter().flatten().all(|tok| *tags.entry(tok.form.as_str()).or_insert(tok.pos.as_str()) == tok.pos)
            };
            let at = |word| {
                let rules = NormalizationRules { thresholds: Thresholds { word, ..Default::default() }, ..Default::default() };
                let v = build_vocabulary(&corpus, &rules).unwrap();
                let known = v.predicates().iter().filter(|p| p.namespace == Namespace::Word && !p.label.starts_with(UNKNOWN_PREFIX)).count();
                (v.num_predicates(), known)
            };
            let (lo, hi) = (at(t), at(t + 1));
            prop_assert!(hi.1 <= lo.1);
            if single_tag {
                prop_assert!(hi.0 <= lo.0);
            }
        }
    }
}
