//! Synthetic parallel corpora, vocabularies, and length-bucketed batches.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const RESERVED: [&str; 4] = ["<pad>", "<s>", "</s>", "<unk>"];

const NUMBER_WORDS: [&str; 10] = [
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Copy,
    Reverse,
    Digits2Words,
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "copy" => Ok(Task::Copy),
            "reverse" => Ok(Task::Reverse),
            "digits2words" => Ok(Task::Digits2Words),
            other => Err(Error::Setting(format!("unknown task `{other}`"))),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Copy => "copy",
            Task::Reverse => "reverse",
            Task::Digits2Words => "digits2words",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pair {
    pub source: Vec<String>,
    pub target: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ParallelCorpus {
    pub task: Option<Task>,
    pub pairs: Vec<Pair>,
}

/// Name of the `i`-th synthetic symbol: `a`..`z`, then `t26`, `t27`, ...
pub fn symbol(i: usize) -> String {
    if i < 26 {
        char::from(b'a' + i as u8).to_string()
    } else {
        format!("t{i}")
    }
}

/// Target side of `task` for a given source.
pub fn task_target(task: Task, source: &[String]) -> Result<Vec<String>> {
    match task {
        Task::Copy => Ok(source.to_vec()),
        Task::Reverse => Ok(source.iter().rev().cloned().collect()),
        Task::Digits2Words => source
            .iter()
            .map(|tok| {
                tok.parse::<usize>()
                    .ok()
                    .filter(|&d| d < 10 && tok.len() == 1)
                    .map(|d| NUMBER_WORDS[d].to_string())
                    .ok_or_else(|| Error::Data(format!("`{tok}` is not a digit")))
            })
            .collect(),
    }
}

/// `size` random pairs with source lengths drawn uniformly from `lengths`.
/// Digit tasks draw from the first `min(vocab_size, 10)` digits.
pub fn gen_task_corpus<R: Rng + ?Sized>(
    task: Task,
    size: usize,
    lengths: (usize, usize),
    vocab_size: usize,
    rng: &mut R,
) -> Result<ParallelCorpus> {
    let (lo, hi) = lengths;
    if lo == 0 || lo > hi {
        return Err(Error::Setting(format!("invalid length range {lo}..={hi}")));
    }
    if vocab_size == 0 {
        return Err(Error::Setting("vocab_size must be positive".into()));
    }
    let alphabet: Vec<String> = match task {
        Task::Digits2Words => (0..vocab_size.min(10)).map(|d| d.to_string()).collect(),
        _ => (0..vocab_size).map(symbol).collect(),
    };
    let pairs = (0..size)
        .map(|_| {
            let len = rng.random_range(lo..=hi);
            let source: Vec<String> = (0..len)
                .map(|_| alphabet[rng.random_range(0..alphabet.len())].clone())
                .collect();
            let target = task_target(task, &source)?;
            Ok(Pair { source, target })
        })
        .collect::<Result<_>>()?;
    Ok(ParallelCorpus {
        task: Some(task),
        pairs,
    })
}

/// Token to id mapping with four reserved ids.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl TryFrom<Vec<String>> for Vocabulary {
    type Error = Error;

    /// From the full id-ordered token list, reserved tokens included.
    fn try_from(tokens: Vec<String>) -> Result<Self> {
        let mut v = Vocabulary {
            tokens,
            index: HashMap::new(),
        };
        v.reindex()?;
        Ok(v)
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

impl Vocabulary {
    pub fn from_tokens(words: Vec<String>) -> Result<Self> {
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        tokens.extend(words);
        Self::try_from(tokens)
    }

    fn reindex(&mut self) -> Result<()> {
        for (i, r) in RESERVED.iter().enumerate() {
            if self.tokens.get(i).map(String::as_str) != Some(*r) {
                return Err(Error::Data(format!("vocabulary id {i} must be `{r}`")));
            }
        }
        self.index.clear();
        for (i, t) in self.tokens.iter().enumerate() {
            if self.index.insert(t.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate vocabulary token `{t}`")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens.get(id).map(String::as_str).unwrap_or(RESERVED[UNK])
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode<S: AsRef<str>>(&self, words: &[S]) -> Vec<usize> {
        words.iter().map(|w| self.id(w.as_ref())).collect()
    }

    /// Tokens for `ids`, stopping at the first EOS and dropping PAD/BOS.
    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .take_while(|&&i| i != EOS)
            .filter(|&&i| i != PAD && i != BOS)
            .map(|&i| self.token(i).to_string())
            .collect()
    }
}

/// The `cap` most frequent tokens, ties broken lexicographically.
pub fn build_vocab<'a, I>(sentences: I, cap: usize) -> Vocabulary
where
    I: IntoIterator<Item = &'a [String]>,
{
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for sentence in sentences {
        for tok in sentence {
            if !RESERVED.contains(&tok.as_str()) {
                *counts.entry(tok.as_str()).or_default() += 1;
            }
        }
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    let words = ranked.into_iter().take(cap).map(|(t, _)| t.to_string()).collect();
    Vocabulary::from_tokens(words).expect("reserved tokens are excluded")
}

/// Source and target vocabularies of a corpus.
pub fn build_vocabs(corpus: &ParallelCorpus, cap: usize) -> (Vocabulary, Vocabulary) {
    (
        build_vocab(corpus.pairs.iter().map(|p| p.source.as_slice()), cap),
        build_vocab(corpus.pairs.iter().map(|p| p.target.as_slice()), cap),
    )
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdPair {
    pub source: Vec<usize>,
    pub target: Vec<usize>,
}

pub fn encode_corpus(corpus: &ParallelCorpus, src: &Vocabulary, tgt: &Vocabulary) -> Vec<IdPair> {
    corpus
        .pairs
        .iter()
        .map(|p| IdPair {
            source: src.encode(&p.source),
            target: tgt.encode(&p.target),
        })
        .collect()
}

/// Drops pairs with either side longer than `max_len`.
pub fn filter_long(pairs: &[IdPair], max_len: usize) -> Vec<IdPair> {
    pairs
        .iter()
        .filter(|p| p.source.len() <= max_len && p.target.len() <= max_len)
        .cloned()
        .collect()
}

/// Rows padded with PAD to the longest row; masks are 1 on real tokens.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub source: Vec<Vec<usize>>,
    pub target: Vec<Vec<usize>>,
    pub source_mask: Vec<Vec<u8>>,
    pub target_mask: Vec<Vec<u8>>,
}

fn pad_rows(rows: &[&[usize]]) -> (Vec<Vec<usize>>, Vec<Vec<u8>>) {
    let width = rows.iter().map(|r| r.len()).max().unwrap_or(0);
    rows.iter()
        .map(|r| {
            let mut ids = r.to_vec();
            ids.resize(width, PAD);
            let mut mask = vec![1u8; r.len()];
            mask.resize(width, 0);
            (ids, mask)
        })
        .unzip()
}

impl Batch {
    pub fn new(pairs: &[&IdPair]) -> Self {
        let src: Vec<&[usize]> = pairs.iter().map(|p| p.source.as_slice()).collect();
        let tgt: Vec<&[usize]> = pairs.iter().map(|p| p.target.as_slice()).collect();
        let (source, source_mask) = pad_rows(&src);
        let (target, target_mask) = pad_rows(&tgt);
        Batch {
            source,
            target,
            source_mask,
            target_mask,
        }
    }

    pub fn len(&self) -> usize {
        self.source.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source.is_empty()
    }

    /// Real target tokens in the batch.
    pub fn target_tokens(&self) -> usize {
        self.target_mask.iter().flatten().map(|&m| m as usize).sum()
    }

    /// The unpadded pairs, recovered through the masks.
    pub fn rows(&self) -> Vec<IdPair> {
        let strip =
            |ids: &[usize], mask: &[u8]| ids.iter().zip(mask).filter(|(_, &m)| m == 1).map(|(&i, _)| i).collect();
        (0..self.len())
            .map(|i| IdPair {
                source: strip(&self.source[i], &self.source_mask[i]),
                target: strip(&self.target[i], &self.target_mask[i]),
            })
            .collect()
    }
}

/// Shuffles, groups pairs of similar source length into batches, then
/// shuffles the batch order.
pub fn batch_by_length<R: Rng + ?Sized>(pairs: &[IdPair], batch_size: usize, rng: &mut R) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::Setting("batch_size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.shuffle(rng);
    order.sort_by_key(|&i| pairs[i].source.len());
    let mut batches: Vec<Batch> = order
        .chunks(batch_size)
        .map(|chunk| {
            let rows: Vec<&IdPair> = chunk.iter().map(|&i| &pairs[i]).collect();
            Batch::new(&rows)
        })
        .collect();
    batches.shuffle(rng);
    Ok(batches)
}

/// Reads `source<TAB>target` lines; blank lines are skipped.
pub fn read_tsv(path: &Path) -> Result<ParallelCorpus> {
    let file = std::fs::File::open(path)?;
    let mut pairs = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (src, tgt) = line
            .split_once('\t')
            .ok_or_else(|| Error::Data(format!("{}:{}: missing TAB", path.display(), i + 1)))?;
        let source: Vec<String> = src.split_whitespace().map(String::from).collect();
        let target: Vec<String> = tgt.split_whitespace().map(String::from).collect();
        if source.is_empty() || target.is_empty() {
            return Err(Error::Data(format!("{}:{}: empty side", path.display(), i + 1)));
        }
        pairs.push(Pair { source, target });
    }
    Ok(ParallelCorpus { task: None, pairs })
}

pub fn write_tsv(path: &Path, corpus: &ParallelCorpus) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for p in &corpus.pairs {
        writeln!(out, "{}\t{}", p.source.join(" "), p.target.join(" "))?;
    }
    out.flush()?;
    Ok(())
}
