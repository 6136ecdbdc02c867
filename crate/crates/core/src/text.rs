//! Text ingestion: TSV loading, tokenization, vocabulary, encoding to fixed
//! length, embedding initialization, and the synthetic benchmark corpus.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::Rng;
use rand::Rng as _;
use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Frozen token→index map. Index 0 is PAD, 1 is UNK; unseen tokens map to UNK.
#[derive(Debug, Clone)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Builds a deterministic vocabulary: tokens sorted by frequency
    /// descending, ties broken lexicographically; tokens seen fewer than
    /// `min_count` times are excluded (and will encode as UNK).
    pub fn build<'a>(corpus: impl IntoIterator<Item = &'a str>, min_count: usize) -> Result<Vocab> {
        let mut counts: HashMap<String, usize> = HashMap::new();
        let mut any = false;
        for text in corpus {
            any = true;
            for tok in tokenize(text) {
                *counts.entry(tok).or_insert(0) += 1;
            }
        }
        if !any {
            return Err(Error::EmptyInput("vocabulary corpus".into()));
        }
        let mut by_freq: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(_, c)| *c >= min_count.max(1))
            .collect();
        by_freq.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

        let mut tokens = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
        tokens.extend(by_freq.into_iter().map(|(t, _)| t));
        Ok(Vocab::from_tokens(tokens))
    }

    /// Rebuilds a vocabulary from its ordered token list (checkpoint load).
    pub fn from_tokens(tokens: Vec<String>) -> Vocab {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocab { tokens, index }
    }

    pub fn lookup(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Lowercase, split on whitespace, strip leading/trailing non-alphanumeric
/// characters from each token; tokens that strip to nothing are dropped.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|t| {
            t.to_lowercase()
                .trim_matches(|c: char| !c.is_alphanumeric())
                .to_string()
        })
        .filter(|t| !t.is_empty())
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSentence {
    /// Exactly `t_fixed` indices, PAD-padded on the right.
    pub tokens: Vec<usize>,
    pub label: usize,
    pub noisy_label: Option<usize>,
}

impl EncodedSentence {
    /// The label the training loss sees.
    pub fn training_label(&self) -> Option<usize> {
        self.noisy_label
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Dev => write!(f, "dev"),
            Split::Test => write!(f, "test"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LabeledDataset {
    pub sentences: Vec<EncodedSentence>,
    pub k: usize,
    pub split: Split,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn has_noisy_labels(&self) -> bool {
        !self.sentences.is_empty() && self.sentences.iter().all(|s| s.noisy_label.is_some())
    }
}

/// Token indices for one text, truncated or right-padded to `t_fixed`.
pub fn encode(text: &str, vocab: &Vocab, t_fixed: usize) -> Result<Vec<usize>> {
    if t_fixed == 0 {
        return Err(Error::InvalidArg("t_fixed must be at least 1".into()));
    }
    let mut ids: Vec<usize> = tokenize(text)
        .iter()
        .take(t_fixed)
        .map(|t| vocab.lookup(t))
        .collect();
    ids.resize(t_fixed, PAD);
    Ok(ids)
}

/// One raw line of a dataset file.
#[derive(Debug, Clone, PartialEq)]
pub struct RawExample {
    pub label: String,
    pub noisy_label: Option<String>,
    pub text: String,
}

/// Dense label-name ↔ index map, assigned in first-seen order.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMap {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl LabelMap {
    pub fn from_examples(examples: &[RawExample]) -> LabelMap {
        let mut map = LabelMap {
            names: Vec::new(),
            index: HashMap::new(),
        };
        for ex in examples {
            map.intern(&ex.label);
            if let Some(n) = &ex.noisy_label {
                map.intern(n);
            }
        }
        map
    }

    pub fn from_names(names: Vec<String>) -> LabelMap {
        let index = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
        LabelMap { names, index }
    }

    fn intern(&mut self, name: &str) {
        if !self.index.contains_key(name) {
            self.index.insert(name.to_string(), self.names.len());
            self.names.push(name.to_string());
        }
    }

    pub fn get(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.names[idx]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

/// Reads a 2-column (`label<TAB>text`) or 3-column
/// (`clean<TAB>noisy<TAB>text`) TSV. Column count must be consistent.
pub fn load_tsv(path: &Path) -> Result<Vec<RawExample>> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut examples = Vec::new();
    let mut columns: Option<usize> = None;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let parse_err = |msg: &str| Error::Parse {
            path: path.display().to_string(),
            line: lineno,
            msg: msg.to_string(),
        };
        if fields.len() != 2 && fields.len() != 3 {
            return Err(parse_err(&format!(
                "expected 2 or 3 tab-separated fields, found {}",
                fields.len()
            )));
        }
        match columns {
            None => columns = Some(fields.len()),
            Some(c) if c != fields.len() => {
                return Err(parse_err(&format!(
                    "inconsistent column count: {} after {}",
                    fields.len(),
                    c
                )));
            }
            _ => {}
        }
        if fields[0].is_empty() {
            return Err(parse_err("empty label"));
        }
        let ex = if fields.len() == 2 {
            RawExample {
                label: fields[0].to_string(),
                noisy_label: None,
                text: fields[1].to_string(),
            }
        } else {
            if fields[1].is_empty() {
                return Err(parse_err("empty noisy label"));
            }
            RawExample {
                label: fields[0].to_string(),
                noisy_label: Some(fields[1].to_string()),
                text: fields[2].to_string(),
            }
        };
        examples.push(ex);
    }
    if examples.is_empty() {
        return Err(Error::EmptyInput(format!("{}", path.display())));
    }
    Ok(examples)
}

/// Writes examples back out; 3 columns when noisy labels are present.
pub fn write_tsv(path: &Path, examples: &[RawExample]) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    for ex in examples {
        match &ex.noisy_label {
            Some(noisy) => writeln!(w, "{}\t{}\t{}", ex.label, noisy, ex.text)?,
            None => writeln!(w, "{}\t{}", ex.label, ex.text)?,
        }
    }
    w.flush()?;
    Ok(())
}

/// Encodes raw examples against a shared vocabulary and label map.
/// Test splits must not carry noisy labels.
pub fn encode_dataset(
    examples: &[RawExample],
    labels: &LabelMap,
    vocab: &Vocab,
    t_fixed: usize,
    split: Split,
) -> Result<LabeledDataset> {
    let mut sentences = Vec::with_capacity(examples.len());
    for ex in examples {
        let label = labels.get(&ex.label).ok_or_else(|| {
            Error::InvalidArg(format!("label {:?} not in the label set", ex.label))
        })?;
        let noisy_label = match &ex.noisy_label {
            Some(n) => {
                if split == Split::Test {
                    return Err(Error::InvalidArg(
                        "test split must not carry noisy labels".into(),
                    ));
                }
                Some(labels.get(n).ok_or_else(|| {
                    Error::InvalidArg(format!("noisy label {:?} not in the label set", n))
                })?)
            }
            None => None,
        };
        sentences.push(EncodedSentence {
            tokens: encode(&ex.text, vocab, t_fixed)?,
            label,
            noisy_label,
        });
    }
    Ok(LabeledDataset {
        sentences,
        k: labels.len(),
        split,
    })
}

/// The `frac` quantile of tokenized lengths (used for the default t_fixed).
pub fn length_percentile(examples: &[RawExample], frac: f64) -> usize {
    let mut lengths: Vec<usize> = examples.iter().map(|e| tokenize(&e.text).len()).collect();
    lengths.sort_unstable();
    if lengths.is_empty() {
        return 1;
    }
    let pos = ((frac * lengths.len() as f64).ceil() as usize).clamp(1, lengths.len());
    lengths[pos - 1].max(1)
}

/// Embedding table: PAD row zero, every other row Uniform(−0.25, 0.25),
/// then rows for tokens found in the pretrained file copied exactly.
pub fn init_embeddings(
    vocab: &Vocab,
    d: usize,
    pretrained: Option<&Path>,
    rng: &mut Rng,
) -> Result<Matrix> {
    if d == 0 {
        return Err(Error::InvalidArg("embedding dimension must be positive".into()));
    }
    let mut table = Matrix::zeros(vocab.len(), d);
    for i in 1..vocab.len() {
        let row = table.row_mut(i);
        for v in row.iter_mut() {
            *v = rng.gen_range(-0.25..0.25);
        }
    }
    if let Some(path) = pretrained {
        apply_pretrained(&mut table, vocab, d, path)?;
        // PAD stays zero regardless of file contents.
        for v in table.row_mut(PAD).iter_mut() {
            *v = 0.0;
        }
    }
    Ok(table)
}

/// Text-format embeddings: one token per line followed by d floats, with an
/// optional "count dim" header auto-detected and skipped.
fn apply_pretrained(table: &mut Matrix, vocab: &Vocab, d: usize, path: &Path) -> Result<()> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if lineno == 1 && fields.len() == 2 {
            let header = fields[0].parse::<usize>().is_ok() && fields[1].parse::<usize>().is_ok();
            if header {
                continue;
            }
        }
        if fields.len() != d + 1 {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: lineno,
                msg: format!(
                    "pretrained vector has {} dims, embedding table has {}",
                    fields.len().saturating_sub(1),
                    d
                ),
            });
        }
        let token = fields[0];
        let idx = vocab.lookup(token);
        if idx == UNK && token != UNK_TOKEN {
            continue;
        }
        for (j, f) in fields[1..].iter().enumerate() {
            let v: f64 = f.parse().map_err(|_| Error::Parse {
                path: path.display().to_string(),
                line: lineno,
                msg: format!("bad float {:?}", f),
            })?;
            table.set(idx, j, v);
        }
    }
    Ok(())
}

/// Parameters of the synthetic benchmark corpus. Every sentence carries a
/// few class-indicative tokens; the rest are fillers shared across classes,
/// so class is decidable from the indicative tokens alone.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub k: usize,
    pub n_train: usize,
    pub n_dev: usize,
    pub n_test: usize,
    pub sentence_len: usize,
    pub vocab_size: usize,
    pub signal_tokens_per_class: usize,
    pub filler_rate: f64,
}

impl SyntheticSpec {
    pub fn with_train_size(k: usize, n_train: usize) -> SyntheticSpec {
        SyntheticSpec {
            k,
            n_train,
            n_dev: (n_train / 8).max(1),
            n_test: (n_train / 8).max(1),
            sentence_len: 20,
            vocab_size: 6000,
            signal_tokens_per_class: 5,
            filler_rate: 0.9,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub train: Vec<RawExample>,
    pub dev: Vec<RawExample>,
    pub test: Vec<RawExample>,
    pub label_names: Vec<String>,
}

/// Generates disjoint train/dev/test splits with balanced labels,
/// deterministic under the given rng.
pub fn make_synthetic_corpus(spec: &SyntheticSpec, rng: &mut Rng) -> Result<SyntheticCorpus> {
    if spec.k < 2 {
        return Err(Error::InvalidArg("synthetic corpus needs k >= 2".into()));
    }
    if spec.sentence_len == 0 || spec.n_train == 0 {
        return Err(Error::InvalidArg("synthetic corpus needs n and T >= 1".into()));
    }
    if !(0.0..=1.0).contains(&spec.filler_rate) {
        return Err(Error::InvalidArg("filler_rate outside [0, 1]".into()));
    }
    let n_signal_tokens = spec.k * spec.signal_tokens_per_class;
    if spec.vocab_size <= n_signal_tokens {
        return Err(Error::InvalidArg(format!(
            "infeasible sizes: vocab_size {} must exceed {} signal tokens",
            spec.vocab_size, n_signal_tokens
        )));
    }
    let n_fillers = spec.vocab_size - n_signal_tokens;
    let signal_positions =
        ((spec.sentence_len as f64) * (1.0 - spec.filler_rate)).round() as usize;
    let signal_positions = signal_positions.clamp(1, spec.sentence_len);

    let label_names: Vec<String> = (0..spec.k).map(|c| format!("c{}", c)).collect();
    let mut seen: HashSet<String> = HashSet::new();
    let mut make_split = |n: usize, rng: &mut Rng| -> Result<Vec<RawExample>> {
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let class = i % spec.k;
            let mut text = String::new();
            let mut ok = false;
            for _attempt in 0..100 {
                text = sample_sentence(spec, class, signal_positions, n_fillers, rng);
                if seen.insert(text.clone()) {
                    ok = true;
                    break;
                }
            }
            if !ok {
                return Err(Error::InvalidArg(
                    "infeasible sizes: cannot draw distinct sentences".into(),
                ));
            }
            out.push(RawExample {
                label: label_names[class].clone(),
                noisy_label: None,
                text,
            });
        }
        Ok(out)
    };

    let train = make_split(spec.n_train, rng)?;
    let dev = make_split(spec.n_dev, rng)?;
    let test = make_split(spec.n_test, rng)?;
    Ok(SyntheticCorpus {
        train,
        dev,
        test,
        label_names,
    })
}

fn sample_sentence(
    spec: &SyntheticSpec,
    class: usize,
    signal_positions: usize,
    n_fillers: usize,
    rng: &mut Rng,
) -> String {
    let t = spec.sentence_len;
    // Which positions carry class-indicative tokens.
    let mut positions: Vec<usize> = (0..t).collect();
    for i in 0..signal_positions.min(t) {
        let j = rng.gen_range(i..t);
        positions.swap(i, j);
    }
    let mut is_signal = vec![false; t];
    for &p in positions.iter().take(signal_positions) {
        is_signal[p] = true;
    }
    let mut words = Vec::with_capacity(t);
    for flag in is_signal {
        if flag {
            let j = rng.gen_range(0..spec.signal_tokens_per_class);
            words.push(format!("sig{}x{}", class, j));
        } else {
            let f = rng.gen_range(0..n_fillers);
            words.push(format!("fill{}", f));
        }
    }
    words.join(" ")
}
