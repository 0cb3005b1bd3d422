//! Greedy and beam decoding over any step-wise scorer, and corpus BLEU.

use std::cmp::Ordering;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::data::{BOS, EOS};
use crate::error::{Error, Result};

/// A left-to-right model producing next-token log-probabilities.
pub trait StepScorer {
    type State: Clone;

    fn start(&mut self, source: &[usize]) -> Result<Self::State>;

    /// Log-probabilities over the target vocabulary after `prev`, and the
    /// state that results from consuming it.
    fn step(&mut self, state: &Self::State, prev: usize) -> Result<(Vec<f64>, Self::State)>;
}

/// Index of the largest value; the smallest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Argmax token per step until EOS or `max_len` tokens. EOS is not included.
pub fn greedy_decode<S: StepScorer>(scorer: &mut S, source: &[usize], max_len: usize) -> Result<Vec<usize>> {
    if max_len == 0 {
        return Err(Error::Setting("max_len must be at least 1".into()));
    }
    let mut state = scorer.start(source)?;
    let mut prev = BOS;
    let mut out = Vec::new();
    while out.len() < max_len {
        let (logp, next) = scorer.step(&state, prev)?;
        let tok = argmax(&logp);
        if tok == EOS {
            break;
        }
        out.push(tok);
        state = next;
        prev = tok;
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    /// Emitted tokens, EOS excluded.
    pub tokens: Vec<usize>,
    /// Sum of token log-probabilities, EOS included when finished.
    pub log_prob: f64,
    pub finished: bool,
}

impl Hypothesis {
    /// Scored positions: the tokens plus the EOS if finished.
    pub fn scored_len(&self) -> usize {
        self.tokens.len() + usize::from(self.finished)
    }

    pub fn mean_log_prob(&self) -> f64 {
        self.log_prob / self.scored_len().max(1) as f64
    }
}

struct Live<T> {
    hyp: Hypothesis,
    state: T,
}

/// Beam search. Each step expands every live hypothesis by every token and
/// keeps the best `beam_width - finished` by total log-probability (ties to
/// earlier parents, then smaller ids). Stops once `beam_width` hypotheses
/// finished or after `max_len` tokens; returns the best by mean log-prob
/// per scored token.
pub fn beam_decode<S: StepScorer>(
    scorer: &mut S,
    source: &[usize],
    beam_width: usize,
    max_len: usize,
) -> Result<Hypothesis> {
    if beam_width == 0 {
        return Err(Error::Setting("beam width must be at least 1".into()));
    }
    if max_len == 0 {
        return Err(Error::Setting("max_len must be at least 1".into()));
    }
    let start = scorer.start(source)?;
    let mut live = vec![Live {
        hyp: Hypothesis {
            tokens: Vec::new(),
            log_prob: 0.0,
            finished: false,
        },
        state: start,
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();

    for _ in 0..max_len {
        let mut cands: Vec<(f64, usize, usize)> = Vec::new();
        let mut expanded = Vec::with_capacity(live.len());
        for (pi, l) in live.iter().enumerate() {
            let prev = l.hyp.tokens.last().copied().unwrap_or(BOS);
            let (logp, next) = scorer.step(&l.state, prev)?;
            for (tok, lp) in logp.iter().enumerate() {
                cands.push((l.hyp.log_prob + lp, pi, tok));
            }
            expanded.push(next);
        }
        cands.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap_or(Ordering::Equal)
                .then(a.1.cmp(&b.1))
                .then(a.2.cmp(&b.2))
        });
        let keep = beam_width - finished.len();
        let mut next_live = Vec::with_capacity(keep);
        for &(score, pi, tok) in cands.iter().take(keep) {
            let mut tokens = live[pi].hyp.tokens.clone();
            if tok == EOS {
                finished.push(Hypothesis {
                    tokens,
                    log_prob: score,
                    finished: true,
                });
            } else {
                tokens.push(tok);
                next_live.push(Live {
                    hyp: Hypothesis {
                        tokens,
                        log_prob: score,
                        finished: false,
                    },
                    state: expanded[pi].clone(),
                });
            }
        }
        live = next_live;
        if finished.len() >= beam_width || live.is_empty() {
            break;
        }
    }
    let pool = finished.into_iter().chain(live.into_iter().map(|l| l.hyp));
    let mut best: Option<Hypothesis> = None;
    for h in pool {
        if best.as_ref().is_none_or(|b| h.mean_log_prob() > b.mean_log_prob()) {
            best = Some(h);
        }
    }
    best.ok_or_else(|| Error::Eval("beam search produced no hypothesis".into()))
}

/// Decodes with the greedy path when `beam_width == 1`.
pub fn decode<S: StepScorer>(
    scorer: &mut S,
    source: &[usize],
    beam_width: usize,
    max_len: usize,
) -> Result<Vec<usize>> {
    if beam_width == 1 {
        greedy_decode(scorer, source, max_len)
    } else {
        Ok(beam_decode(scorer, source, beam_width, max_len)?.tokens)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lengths {
    pub candidate: usize,
    pub reference: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BleuReport {
    pub bleu: f64,
    pub precisions: Vec<f64>,
    pub bp: f64,
    pub lengths: Lengths,
    /// Clipped n-gram matches per order.
    pub matches: Vec<usize>,
    /// Candidate n-grams per order.
    pub totals: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BleuOptions {
    pub max_n: usize,
    /// Zero match counts at orders above 1 become `1 / (total + 1)`.
    pub smoothing: bool,
}

impl Default for BleuOptions {
    fn default() -> Self {
        BleuOptions {
            max_n: 4,
            smoothing: true,
        }
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus-level case-insensitive BLEU. `references[i]` lists every
/// reference for `candidates[i]`; the brevity penalty uses the reference
/// length closest to each candidate (shorter on ties).
pub fn bleu<S: AsRef<str>>(candidates: &[Vec<S>], references: &[Vec<Vec<S>>], opts: BleuOptions) -> Result<BleuReport> {
    if candidates.is_empty() {
        return Err(Error::Eval("no candidate sentences".into()));
    }
    if candidates.len() != references.len() {
        return Err(Error::Eval(format!(
            "{} candidates but {} reference sets",
            candidates.len(),
            references.len()
        )));
    }
    if opts.max_n == 0 {
        return Err(Error::Eval("max_n must be at least 1".into()));
    }
    let fold = |s: &[S]| -> Vec<String> { s.iter().map(|t| t.as_ref().to_lowercase()).collect() };
    let mut matches = vec![0usize; opts.max_n];
    let mut totals = vec![0usize; opts.max_n];
    let (mut c_len, mut r_len) = (0usize, 0usize);
    for (cand, refs) in candidates.iter().zip(references) {
        if refs.is_empty() {
            return Err(Error::Eval("candidate without references".into()));
        }
        let cand = fold(cand);
        let refs: Vec<Vec<String>> = refs.iter().map(|r| fold(r)).collect();
        c_len += cand.len();
        r_len += refs
            .iter()
            .map(|r| r.len())
            .min_by_key(|&l| (l.abs_diff(cand.len()), l))
            .expect("nonempty");
        for n in 1..=opts.max_n {
            let counts = ngram_counts(&cand, n);
            let mut max_ref: HashMap<&[String], usize> = HashMap::new();
            for r in &refs {
                for (g, c) in ngram_counts(r, n) {
                    let e = max_ref.entry(g).or_insert(0);
                    *e = (*e).max(c);
                }
            }
            for (g, c) in counts {
                matches[n - 1] += c.min(max_ref.get(g).copied().unwrap_or(0));
                totals[n - 1] += c;
            }
        }
    }
    let precisions: Vec<f64> = (0..opts.max_n)
        .map(|i| {
            if matches[i] == 0 && i > 0 && opts.smoothing {
                1.0 / (totals[i] + 1) as f64
            } else if totals[i] == 0 {
                0.0
            } else {
                matches[i] as f64 / totals[i] as f64
            }
        })
        .collect();
    let bp = if c_len == 0 {
        0.0
    } else if c_len < r_len {
        (1.0 - r_len as f64 / c_len as f64).exp()
    } else {
        1.0
    };
    let bleu = if precisions.contains(&0.0) {
        0.0
    } else {
        bp * (precisions.iter().map(|p| p.ln()).sum::<f64>() / opts.max_n as f64).exp()
    };
    Ok(BleuReport {
        bleu,
        precisions,
        bp,
        lengths: Lengths {
            candidate: c_len,
            reference: r_len,
        },
        matches,
        totals,
    })
}

/// Fraction of candidates identical to their first reference.
pub fn exact_match_rate<T: PartialEq>(candidates: &[Vec<T>], references: &[Vec<T>]) -> f64 {
    if candidates.is_empty() {
        return 0.0;
    }
    let hits = candidates.iter().zip(references).filter(|(c, r)| c == r).count();
    hits as f64 / candidates.len() as f64
}
