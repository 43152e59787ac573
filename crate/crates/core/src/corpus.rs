//! Corpus, vocabulary and count structures shared by every trainer.
//!
//! On disk a corpus is UTF-8 JSON Lines, one document per line:
//!
//! ```text
//! {"id": "doc-1", "sentences": [{"features": {"vb": ["said"], "ent_type": ["PER-ORG"]}}]}
//! ```
//!
//! Repeated values in a list encode counts above one. Vocabulary ids are
//! assigned in first-occurrence order, visiting feature types in registry
//! order within each sentence.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::ser::SerializeMap;
use serde::{Deserialize, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::error::CorpusError;
use crate::numerics;

/// The fixed registry of feature types.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Adj,
    Adv,
    EntLeft,
    EntRight,
    Nn,
    Oth,
    Pp,
    Vb,
    PosSeq,
    EntType,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 10] = [
        FeatureKind::Adj,
        FeatureKind::Adv,
        FeatureKind::EntLeft,
        FeatureKind::EntRight,
        FeatureKind::Nn,
        FeatureKind::Oth,
        FeatureKind::Pp,
        FeatureKind::Vb,
        FeatureKind::PosSeq,
        FeatureKind::EntType,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::Adj => "adj",
            FeatureKind::Adv => "adv",
            FeatureKind::EntLeft => "ent_left",
            FeatureKind::EntRight => "ent_right",
            FeatureKind::Nn => "nn",
            FeatureKind::Oth => "oth",
            FeatureKind::Pp => "pp",
            FeatureKind::Vb => "vb",
            FeatureKind::PosSeq => "pos_seq",
            FeatureKind::EntType => "ent_type",
        }
    }

    pub fn from_name(name: &str) -> Option<FeatureKind> {
        FeatureKind::ALL.into_iter().find(|k| k.name() == name)
    }

    /// Left and right entity strings draw from one shared vocabulary.
    pub fn table_name(self) -> &'static str {
        match self {
            FeatureKind::EntLeft | FeatureKind::EntRight => "ent",
            other => other.name(),
        }
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// The active subset of the registry, always kept in registry order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FeatureSet {
    kinds: Vec<FeatureKind>,
}

impl FeatureSet {
    pub fn new(kinds: impl IntoIterator<Item = FeatureKind>) -> Result<Self, CorpusError> {
        let mut kinds: Vec<_> = kinds.into_iter().collect();
        kinds.sort();
        kinds.dedup();
        if kinds.is_empty() {
            return Err(CorpusError::EmptyFeatureSet);
        }
        Ok(FeatureSet { kinds })
    }

    /// Every registered type.
    pub fn all() -> Self {
        FeatureSet {
            kinds: FeatureKind::ALL.to_vec(),
        }
    }

    /// The larger subset used in the experiments (everything except `nn`).
    pub fn full() -> Self {
        FeatureSet {
            kinds: FeatureKind::ALL
                .into_iter()
                .filter(|k| *k != FeatureKind::Nn)
                .collect(),
        }
    }

    /// `full` without the entity surface strings.
    pub fn no_entities() -> Self {
        FeatureSet {
            kinds: FeatureSet::full()
                .kinds
                .into_iter()
                .filter(|k| !matches!(k, FeatureKind::EntLeft | FeatureKind::EntRight))
                .collect(),
        }
    }

    /// Accepts `all`, `full`, `no_entities`, or a comma-separated list of type names.
    pub fn parse(text: &str) -> Result<Self, CorpusError> {
        match text.trim() {
            "all" => Ok(FeatureSet::all()),
            "full" => Ok(FeatureSet::full()),
            "no_entities" => Ok(FeatureSet::no_entities()),
            list => {
                let kinds = list
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| {
                        FeatureKind::from_name(s)
                            .ok_or_else(|| CorpusError::UnknownFeatureName(s.to_string()))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                FeatureSet::new(kinds)
            }
        }
    }

    pub fn kinds(&self) -> &[FeatureKind] {
        &self.kinds
    }

    pub fn len(&self) -> usize {
        self.kinds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kinds.is_empty()
    }

    pub fn index_of(&self, kind: FeatureKind) -> Option<usize> {
        self.kinds.iter().position(|k| *k == kind)
    }

    pub fn names(&self) -> Vec<String> {
        self.kinds.iter().map(|k| k.name().to_string()).collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
struct StringTable {
    strings: Vec<String>,
    ids: HashMap<String, u32>,
}

impl StringTable {
    fn intern(&mut self, s: &str) -> u32 {
        if let Some(&id) = self.ids.get(s) {
            return id;
        }
        let id = self.strings.len() as u32;
        self.strings.push(s.to_string());
        self.ids.insert(s.to_string(), id);
        id
    }
}

/// Per-feature-type bijection between value strings and dense ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    features: FeatureSet,
    table_names: Vec<&'static str>,
    tables: Vec<StringTable>,
    /// feature type index -> table index
    table_of: Vec<usize>,
}

/// Serialized vocabulary: the active types plus each string table in id order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabularyRecord {
    pub feature_types: Vec<String>,
    pub tables: Vec<TableRecord>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableRecord {
    pub name: String,
    pub strings: Vec<String>,
}

impl Vocabulary {
    pub fn new(features: FeatureSet) -> Self {
        let mut table_names: Vec<&'static str> = Vec::new();
        let mut table_of = Vec::with_capacity(features.len());
        for kind in features.kinds() {
            let name = kind.table_name();
            let idx = match table_names.iter().position(|t| *t == name) {
                Some(i) => i,
                None => {
                    table_names.push(name);
                    table_names.len() - 1
                }
            };
            table_of.push(idx);
        }
        let tables = vec![StringTable::default(); table_names.len()];
        Vocabulary {
            features,
            table_names,
            tables,
            table_of,
        }
    }

    pub fn features(&self) -> &FeatureSet {
        &self.features
    }

    /// F, the number of active feature types.
    pub fn num_types(&self) -> usize {
        self.features.len()
    }

    /// W_f
    pub fn size(&self, f: usize) -> usize {
        self.tables[self.table_of[f]].strings.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        (0..self.num_types()).map(|f| self.size(f)).collect()
    }

    pub fn id(&self, f: usize, value: &str) -> Option<u32> {
        self.tables[self.table_of[f]].ids.get(value).copied()
    }

    pub fn intern(&mut self, f: usize, value: &str) -> u32 {
        let t = self.table_of[f];
        self.tables[t].intern(value)
    }

    pub fn decode(&self, f: usize, id: u32) -> Option<&str> {
        self.tables[self.table_of[f]]
            .strings
            .get(id as usize)
            .map(String::as_str)
    }

    pub fn to_record(&self) -> VocabularyRecord {
        VocabularyRecord {
            feature_types: self.features.names(),
            tables: self
                .table_names
                .iter()
                .zip(&self.tables)
                .map(|(name, t)| TableRecord {
                    name: name.to_string(),
                    strings: t.strings.clone(),
                })
                .collect(),
        }
    }

    pub fn from_record(record: &VocabularyRecord) -> Result<Self, CorpusError> {
        let kinds = record
            .feature_types
            .iter()
            .map(|s| {
                FeatureKind::from_name(s).ok_or_else(|| CorpusError::UnknownFeatureName(s.clone()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut vocab = Vocabulary::new(FeatureSet::new(kinds)?);
        if vocab.table_names.len() != record.tables.len() {
            return Err(CorpusError::VocabularyMismatch(format!(
                "expected {} tables, found {}",
                vocab.table_names.len(),
                record.tables.len()
            )));
        }
        for (i, table) in record.tables.iter().enumerate() {
            if table.name != vocab.table_names[i] {
                return Err(CorpusError::VocabularyMismatch(format!(
                    "table {i} is {:?}, expected {:?}",
                    table.name, vocab.table_names[i]
                )));
            }
            for s in &table.strings {
                vocab.tables[i].intern(s);
            }
            if vocab.tables[i].strings.len() != table.strings.len() {
                return Err(CorpusError::VocabularyMismatch(format!(
                    "table {:?} has duplicate strings",
                    table.name
                )));
            }
        }
        Ok(vocab)
    }

    /// Hex SHA-256 of the serialized record; identifies the id space a model refers to.
    pub fn content_hash(&self) -> String {
        let bytes = serde_json::to_vec(&self.to_record()).expect("vocabulary record serializes");
        Sha256::digest(&bytes)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// Sparse per-type counts for one sentence.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Sentence {
    /// `counts[f]` holds `(value id, count)` pairs sorted by id; counts ≥ 1.
    counts: Vec<Vec<(u32, u32)>>,
}

impl Sentence {
    /// Builds a sentence from per-type lists of value ids (repeats allowed).
    pub fn from_ids(per_type: Vec<Vec<u32>>) -> Self {
        let counts = per_type
            .into_iter()
            .map(|mut ids| {
                ids.sort_unstable();
                let mut out: Vec<(u32, u32)> = Vec::new();
                for id in ids {
                    match out.last_mut() {
                        Some((last, n)) if *last == id => *n += 1,
                        _ => out.push((id, 1)),
                    }
                }
                out
            })
            .collect();
        Sentence { counts }
    }

    pub fn num_types(&self) -> usize {
        self.counts.len()
    }

    /// `(value id, count)` pairs of type `f`.
    pub fn features(&self, f: usize) -> &[(u32, u32)] {
        &self.counts[f]
    }

    /// Iterates `(f, v, count)` over every stored entry.
    pub fn entries(&self) -> impl Iterator<Item = (usize, u32, u32)> + '_ {
        self.counts
            .iter()
            .enumerate()
            .flat_map(|(f, list)| list.iter().map(move |&(v, n)| (f, v, n)))
    }

    /// N_{dif}
    pub fn type_tokens(&self, f: usize) -> u64 {
        self.counts[f].iter().map(|&(_, n)| n as u64).sum()
    }

    pub fn token_count(&self) -> u64 {
        (0..self.counts.len()).map(|f| self.type_tokens(f)).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.iter().all(Vec::is_empty)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Document {
    pub id: String,
    pub sentences: Vec<Sentence>,
}

impl Document {
    pub fn token_count(&self) -> u64 {
        self.sentences.iter().map(Sentence::token_count).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub documents: Vec<Document>,
    pub vocab: Arc<Vocabulary>,
}

/// What was dropped while mapping a corpus onto a frozen vocabulary.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct OovReport {
    pub dropped_tokens: u64,
    /// Sentences left with no features at all after dropping.
    pub emptied_sentences: usize,
}

/// One line of the corpus file.
#[derive(Clone, Debug, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawDocument {
    pub id: String,
    pub sentences: Vec<RawSentence>,
}

#[derive(Clone, Debug, PartialEq, Eq, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawSentence {
    pub features: BTreeMap<String, Vec<String>>,
}

enum VocabMode {
    Grow(Vocabulary),
    Frozen(Arc<Vocabulary>),
}

impl VocabMode {
    fn vocab(&self) -> &Vocabulary {
        match self {
            VocabMode::Grow(v) => v,
            VocabMode::Frozen(v) => v,
        }
    }
}

struct Encoder {
    mode: VocabMode,
    oov: OovReport,
}

impl Encoder {
    fn encode(&mut self, line: usize, raw: &RawDocument) -> Result<Document, CorpusError> {
        if raw.sentences.is_empty() {
            return Err(CorpusError::EmptyDocument {
                line,
                id: raw.id.clone(),
            });
        }
        let features = self.mode.vocab().features().clone();
        let mut sentences = Vec::with_capacity(raw.sentences.len());
        for s in &raw.sentences {
            for name in s.features.keys() {
                if FeatureKind::from_name(name).is_none() {
                    return Err(CorpusError::UnknownFeatureType {
                        line,
                        name: name.clone(),
                    });
                }
            }
            let mut per_type = vec![Vec::new(); features.len()];
            let mut had_tokens = false;
            for (f, kind) in features.kinds().iter().enumerate() {
                let Some(values) = s.features.get(kind.name()) else {
                    continue;
                };
                for value in values {
                    had_tokens = true;
                    match &mut self.mode {
                        VocabMode::Grow(vocab) => per_type[f].push(vocab.intern(f, value)),
                        VocabMode::Frozen(vocab) => match vocab.id(f, value) {
                            Some(id) => per_type[f].push(id),
                            None => self.oov.dropped_tokens += 1,
                        },
                    }
                }
            }
            let sentence = Sentence::from_ids(per_type);
            if had_tokens && sentence.is_empty() {
                self.oov.emptied_sentences += 1;
            }
            sentences.push(sentence);
        }
        Ok(Document {
            id: raw.id.clone(),
            sentences,
        })
    }

    fn finish(self, documents: Vec<Document>) -> Result<(Corpus, OovReport), CorpusError> {
        if documents.is_empty() {
            return Err(CorpusError::EmptyCorpus);
        }
        let vocab = match self.mode {
            VocabMode::Grow(v) => Arc::new(v),
            VocabMode::Frozen(v) => v,
        };
        Ok((Corpus { documents, vocab }, self.oov))
    }
}

fn read_documents<R: BufRead>(
    reader: R,
    mut encoder: Encoder,
) -> Result<(Corpus, OovReport), CorpusError> {
    let mut documents = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| CorpusError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawDocument = serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        documents.push(encoder.encode(line_no, &raw)?);
    }
    encoder.finish(documents)
}

/// Parses a corpus, growing a fresh vocabulary over the active feature types.
pub fn parse_corpus<R: BufRead>(reader: R, features: &FeatureSet) -> Result<Corpus, CorpusError> {
    let encoder = Encoder {
        mode: VocabMode::Grow(Vocabulary::new(features.clone())),
        oov: OovReport::default(),
    };
    read_documents(reader, encoder).map(|(c, _)| c)
}

/// Parses a corpus against a frozen vocabulary; unseen values are dropped.
pub fn parse_corpus_frozen<R: BufRead>(
    reader: R,
    vocab: &Arc<Vocabulary>,
) -> Result<(Corpus, OovReport), CorpusError> {
    let encoder = Encoder {
        mode: VocabMode::Frozen(Arc::clone(vocab)),
        oov: OovReport::default(),
    };
    read_documents(reader, encoder)
}

fn open(path: &Path) -> Result<BufReader<File>, CorpusError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })
}

/// Loads a corpus file. With `freeze_vocab` the vocabulary is not extended
/// and out-of-vocabulary values are dropped.
pub fn load_corpus(
    path: &Path,
    features: &FeatureSet,
    freeze_vocab: Option<&Arc<Vocabulary>>,
) -> Result<(Corpus, OovReport), CorpusError> {
    let reader = open(path)?;
    match freeze_vocab {
        Some(vocab) => parse_corpus_frozen(reader, vocab),
        None => parse_corpus(reader, features).map(|c| (c, OovReport::default())),
    }
}

struct CanonicalFeatures<'a> {
    sentence: &'a Sentence,
    vocab: &'a Vocabulary,
}

impl Serialize for CanonicalFeatures<'_> {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let kinds = self.vocab.features().kinds();
        let present = (0..kinds.len()).filter(|&f| !self.sentence.features(f).is_empty());
        let mut map = serializer.serialize_map(None)?;
        for f in present {
            let mut values = Vec::new();
            for &(v, n) in self.sentence.features(f) {
                let s = self.vocab.decode(f, v).expect("id within vocabulary");
                values.extend(std::iter::repeat_n(s, n as usize));
            }
            map.serialize_entry(kinds[f].name(), &values)?;
        }
        map.end()
    }
}

#[derive(Serialize)]
struct CanonicalSentence<'a> {
    features: CanonicalFeatures<'a>,
}

#[derive(Serialize)]
struct CanonicalDocument<'a> {
    id: &'a str,
    sentences: Vec<CanonicalSentence<'a>>,
}

/// Writes the canonical form: types in registry order, values in id order.
pub fn write_corpus<W: Write>(corpus: &Corpus, mut out: W) -> std::io::Result<()> {
    for doc in &corpus.documents {
        let canonical = CanonicalDocument {
            id: &doc.id,
            sentences: doc
                .sentences
                .iter()
                .map(|s| CanonicalSentence {
                    features: CanonicalFeatures {
                        sentence: s,
                        vocab: &corpus.vocab,
                    },
                })
                .collect(),
        };
        serde_json::to_writer(&mut out, &canonical)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TypeStats {
    pub name: String,
    pub vocab_size: usize,
    pub tokens: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CorpusStats {
    pub documents: usize,
    pub sentences: usize,
    pub total_tokens: u64,
    pub types: Vec<TypeStats>,
}

pub fn corpus_stats(corpus: &Corpus) -> CorpusStats {
    let vocab = &corpus.vocab;
    let mut tokens = vec![0u64; vocab.num_types()];
    let mut sentences = 0;
    for doc in &corpus.documents {
        sentences += doc.sentences.len();
        for s in &doc.sentences {
            for (f, t) in tokens.iter_mut().enumerate() {
                *t += s.type_tokens(f);
            }
        }
    }
    CorpusStats {
        documents: corpus.documents.len(),
        sentences,
        total_tokens: tokens.iter().sum(),
        types: vocab
            .features()
            .kinds()
            .iter()
            .enumerate()
            .map(|(f, k)| TypeStats {
                name: k.name().to_string(),
                vocab_size: vocab.size(f),
                tokens: tokens[f],
            })
            .collect(),
    }
}

impl Corpus {
    pub fn num_documents(&self) -> usize {
        self.documents.len()
    }

    pub fn num_types(&self) -> usize {
        self.vocab.num_types()
    }

    pub fn total_tokens(&self) -> u64 {
        self.documents.iter().map(Document::token_count).sum()
    }

    fn to_raw(&self, doc: &Document) -> RawDocument {
        let kinds = self.vocab.features().kinds();
        RawDocument {
            id: doc.id.clone(),
            sentences: doc
                .sentences
                .iter()
                .map(|s| {
                    let mut features = BTreeMap::new();
                    for (f, kind) in kinds.iter().enumerate() {
                        let values: Vec<String> = s
                            .features(f)
                            .iter()
                            .flat_map(|&(v, n)| {
                                let value = self.vocab.decode(f, v).expect("id within vocabulary");
                                std::iter::repeat_n(value.to_string(), n as usize)
                            })
                            .collect();
                        if !values.is_empty() {
                            features.insert(kind.name().to_string(), values);
                        }
                    }
                    RawSentence { features }
                })
                .collect(),
        }
    }

    /// Re-encodes documents with a fresh first-occurrence vocabulary.
    fn reencode(&self, docs: &[&Document]) -> Corpus {
        let mut encoder = Encoder {
            mode: VocabMode::Grow(Vocabulary::new(self.vocab.features().clone())),
            oov: OovReport::default(),
        };
        let documents = docs
            .iter()
            .map(|d| {
                encoder
                    .encode(0, &self.to_raw(d))
                    .expect("documents already validated")
            })
            .collect();
        encoder.finish(documents).expect("non-empty").0
    }

    fn reencode_frozen(&self, docs: &[&Document], vocab: &Arc<Vocabulary>) -> (Corpus, OovReport) {
        let mut encoder = Encoder {
            mode: VocabMode::Frozen(Arc::clone(vocab)),
            oov: OovReport::default(),
        };
        let documents = docs
            .iter()
            .map(|d| {
                encoder
                    .encode(0, &self.to_raw(d))
                    .expect("documents already validated")
            })
            .collect();
        encoder.finish(documents).expect("non-empty")
    }

    /// Maps this corpus onto another vocabulary over the same feature types.
    pub fn refreeze(&self, vocab: &Arc<Vocabulary>) -> Result<(Corpus, OovReport), CorpusError> {
        if vocab.features() != self.vocab.features() {
            return Err(CorpusError::VocabularyMismatch(
                "feature types differ".to_string(),
            ));
        }
        let docs: Vec<&Document> = self.documents.iter().collect();
        Ok(self.reencode_frozen(&docs, vocab))
    }
}

/// A train/eval partition by document.
#[derive(Clone, Debug)]
pub struct Split {
    pub train: Corpus,
    pub eval: Corpus,
    /// Out-of-vocabulary drops when freezing `eval` to the training vocabulary.
    pub eval_oov: OovReport,
}

/// Partitions documents into train and eval sets.
///
/// `round(D · eval_fraction)` documents go to eval. Both sides keep the
/// original document order. The training side gets a fresh vocabulary and the
/// eval side is frozen to it.
pub fn split_corpus(corpus: &Corpus, eval_fraction: f64, seed: u64) -> Result<Split, CorpusError> {
    if !(eval_fraction > 0.0 && eval_fraction < 1.0) {
        return Err(CorpusError::InvalidFraction(eval_fraction));
    }
    let d = corpus.documents.len();
    let n_eval = (d as f64 * eval_fraction).round() as usize;
    if n_eval == 0 || n_eval >= d {
        return Err(CorpusError::DegenerateSplit {
            docs: d,
            fraction: eval_fraction,
        });
    }
    let mut order: Vec<usize> = (0..d).collect();
    order.shuffle(&mut numerics::root_rng(seed));
    let mut is_eval = vec![false; d];
    for &i in &order[..n_eval] {
        is_eval[i] = true;
    }
    let train_docs: Vec<&Document> = (0..d)
        .filter(|&i| !is_eval[i])
        .map(|i| &corpus.documents[i])
        .collect();
    let eval_docs: Vec<&Document> = (0..d)
        .filter(|&i| is_eval[i])
        .map(|i| &corpus.documents[i])
        .collect();
    let train = corpus.reencode(&train_docs);
    let (eval, eval_oov) = corpus.reencode_frozen(&eval_docs, &train.vocab);
    Ok(Split {
        train,
        eval,
        eval_oov,
    })
}
