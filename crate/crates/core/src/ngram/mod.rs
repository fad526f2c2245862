//! Backoff n-gram language models.
//!
//! Models are trained with interpolated modified Kneser-Ney smoothing and
//! stored the way an ARPA file stores them: for every retained n-gram a
//! log10 probability and, below the top order, a log10 backoff weight.
//! Queries use the standard backoff recursion.

mod arpa;
mod train;
mod vocab;

use rustc_hash::FxHashMap as HashMap;
use smallvec::SmallVec;
use thiserror::Error;

pub use self::train::{discounts_from_counts_of_counts, train, train_weighted, CountTable};
pub use self::vocab::{Vocabulary, WordId, BOS, BOS_ID, EOS, EOS_ID, UNK, UNK_ID};

/// log10 value used for events with zero probability (ARPA convention).
pub const LOG10_ZERO: f64 = -99.0;

#[derive(Debug, Error)]
pub enum NgramError {
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("model order must be at least 1")]
    InvalidOrder,
    #[error("expected {order} cutoffs, got {got}")]
    CutoffMismatch { order: usize, got: usize },
    #[error("operation needs a model of order >= {needed}, got {order}")]
    OrderTooLow { needed: usize, order: usize },
    #[error("ARPA line {line}: {msg}")]
    Arpa { line: usize, msg: String },
    #[error("ARPA header declares {declared} {order}-grams but body has {found}")]
    CountMismatch {
        order: usize,
        declared: usize,
        found: usize,
    },
    #[error("context [{context}] has total probability {sum}")]
    Unnormalized { context: String, sum: f64 },
}

/// Stored values of one n-gram, both log10.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Entry {
    pub log_prob: f64,
    pub backoff: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NGramModel {
    order: usize,
    vocab: Vocabulary,
    /// `tables[k - 1]` holds the k-grams, keyed by their full id sequence.
    tables: Vec<HashMap<Vec<WordId>, Entry>>,
    cutoffs: Vec<u32>,
}

impl NGramModel {
    pub(crate) fn from_parts(
        order: usize,
        vocab: Vocabulary,
        tables: Vec<HashMap<Vec<WordId>, Entry>>,
        cutoffs: Vec<u32>,
    ) -> Self {
        debug_assert_eq!(tables.len(), order);
        NGramModel {
            order,
            vocab,
            tables,
            cutoffs,
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn cutoffs(&self) -> &[u32] {
        &self.cutoffs
    }

    /// Number of stored n-grams of order `k` (1-based).
    pub fn num_ngrams(&self, k: usize) -> usize {
        self.tables.get(k.wrapping_sub(1)).map_or(0, HashMap::len)
    }

    pub fn total_ngrams(&self) -> usize {
        self.tables.iter().map(HashMap::len).sum()
    }

    pub fn entry(&self, ngram: &[WordId]) -> Option<&Entry> {
        if ngram.is_empty() || ngram.len() > self.order {
            return None;
        }
        self.tables[ngram.len() - 1].get(ngram)
    }

    /// Stored n-grams of order `k`, sorted by id sequence.
    pub fn entries(&self, k: usize) -> Vec<(&[WordId], &Entry)> {
        let mut out: Vec<_> = self.tables[k - 1]
            .iter()
            .map(|(key, e)| (key.as_slice(), e))
            .collect();
        out.sort_by(|a, b| a.0.cmp(b.0));
        out
    }

    /// Backoff-evaluated log10 P(word | history) over ids.
    ///
    /// Only the last `order - 1` history tokens are used.
    pub fn logprob_ids(&self, word: WordId, history: &[WordId]) -> f64 {
        let hist = &history[history.len().saturating_sub(self.order - 1)..];
        // every queried n-gram is a suffix of history + word
        let mut full: SmallVec<[WordId; 8]> = SmallVec::from_slice(hist);
        full.push(word);
        let mut backoff = 0.0;
        for start in 0..=hist.len() {
            let ctx = &hist[start..];
            if let Some(e) = self.tables[ctx.len()].get(&full[start..]) {
                return e.log_prob + backoff;
            }
            if !ctx.is_empty() {
                if let Some(e) = self.tables[ctx.len() - 1].get(ctx) {
                    backoff += e.backoff;
                }
            }
        }
        LOG10_ZERO
    }

    /// Backoff-evaluated log10 P(word | history); unknown tokens map to `<unk>`.
    pub fn logprob<S: AsRef<str>>(&self, word: &str, history: &[S]) -> f64 {
        let hist: Vec<WordId> = history
            .iter()
            .map(|t| self.vocab.id_or_unk(t.as_ref()))
            .collect();
        self.logprob_ids(self.vocab.id_or_unk(word), &hist)
    }

    /// Probability (not log) of `word` after `history`.
    pub fn prob_ids(&self, word: WordId, history: &[WordId]) -> f64 {
        10f64.powf(self.logprob_ids(word, history))
    }

    /// Longest suffix of `history` (at most `order - 1` tokens) that is a
    /// stored n-gram. Queries depend on the history only through this suffix.
    pub fn state_of(&self, history: &[WordId]) -> Vec<WordId> {
        let max = self.order - 1;
        let hist = &history[history.len().saturating_sub(max)..];
        for start in 0..hist.len() {
            let s = &hist[start..];
            if self.tables[s.len() - 1].contains_key(s) {
                return s.to_vec();
            }
        }
        Vec::new()
    }

    /// State reached from `state` after reading `word`.
    pub fn next_state(&self, state: &[WordId], word: WordId) -> Vec<WordId> {
        let mut h: SmallVec<[WordId; 8]> = SmallVec::from_slice(state);
        h.push(word);
        self.state_of(&h)
    }

    /// All histories for which the model defines a conditional distribution:
    /// the empty context plus every stored n-gram below the top order.
    pub fn contexts(&self) -> Vec<Vec<WordId>> {
        let mut out = vec![Vec::new()];
        for k in 1..self.order {
            out.extend(self.entries(k).into_iter().map(|(key, _)| key.to_vec()));
        }
        out
    }

    /// Σ_w P(w | context) over every predictable vocabulary entry.
    pub fn context_mass(&self, context: &[WordId]) -> f64 {
        self.vocab
            .predictable()
            .map(|w| self.prob_ids(w, context))
            .sum()
    }

    /// Checks that every context distributes total mass 1 within `tol`.
    pub fn check_normalization(&self, tol: f64) -> Result<(), NgramError> {
        for ctx in self.contexts() {
            let sum = self.context_mass(&ctx);
            if (sum - 1.0).abs() > tol {
                return Err(NgramError::Unnormalized {
                    context: self.render(&ctx),
                    sum,
                });
            }
        }
        Ok(())
    }

    /// Total mass of every context, computed from the stored entries alone:
    /// mass(h) = Σ_stored P(w|h) + b(h) · (mass(h') − Σ_stored P(w|h'))
    /// where h' drops the oldest token of h. Agrees with `context_mass`
    /// without a sweep over the vocabulary.
    pub fn context_masses(&self) -> HashMap<Vec<WordId>, f64> {
        // per context: (Σ P(w|h), Σ P(w|h')) over its stored continuations
        let mut stored: HashMap<&[WordId], (f64, f64)> = HashMap::default();
        for k in 1..self.order {
            for (key, e) in &self.tables[k] {
                let (h, w) = key.split_at(k);
                if w[0] == BOS_ID {
                    continue;
                }
                let s = stored.entry(h).or_insert((0.0, 0.0));
                s.0 += 10f64.powf(e.log_prob);
                s.1 += self.prob_ids(w[0], &h[1..]);
            }
        }
        let mut mass = HashMap::default();
        let uni: f64 = self.tables[0]
            .iter()
            .filter(|(k, _)| k[0] != BOS_ID)
            .map(|(_, e)| 10f64.powf(e.log_prob))
            .sum();
        mass.insert(Vec::new(), uni);
        for k in 1..self.order {
            for (h, e) in &self.tables[k - 1] {
                let (p, q) = stored.get(h.as_slice()).copied().unwrap_or((0.0, 0.0));
                let lower = mass.get(&h[1..]).copied().unwrap_or(1.0);
                mass.insert(h.clone(), p + 10f64.powf(e.backoff) * (lower - q));
            }
        }
        mass
    }

    /// Sparse counterpart of `check_normalization`.
    pub fn check_normalization_sparse(&self, tol: f64) -> Result<(), NgramError> {
        let mut masses: Vec<_> = self.context_masses().into_iter().collect();
        masses.sort_by(|a, b| a.0.cmp(&b.0));
        for (ctx, sum) in masses {
            if (sum - 1.0).abs() > tol {
                return Err(NgramError::Unnormalized {
                    context: self.render(&ctx),
                    sum,
                });
            }
        }
        Ok(())
    }

    pub fn render(&self, ids: &[WordId]) -> String {
        ids.iter()
            .map(|&i| self.vocab.symbol(i).unwrap_or("?"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Order-2 model made of this model's unigrams and bigrams, with the
    /// unigram backoff weights recomputed so every context stays normalized.
    pub fn make_bigram_subset(&self) -> Result<NGramModel, NgramError> {
        if self.order < 2 {
            return Err(NgramError::OrderTooLow {
                needed: 2,
                order: self.order,
            });
        }
        let mut unigrams = self.tables[0].clone();
        let bigrams: HashMap<Vec<WordId>, Entry> = self.tables[1]
            .iter()
            .map(|(k, e)| {
                (
                    k.clone(),
                    Entry {
                        log_prob: e.log_prob,
                        backoff: 0.0,
                    },
                )
            })
            .collect();

        // Per context: (Σ P(w|h), Σ P(w)) over the stored bigrams (h, w).
        let mut sums: HashMap<WordId, (f64, f64)> = HashMap::default();
        for (key, e) in &bigrams {
            let lower = unigrams
                .get(&key[1..])
                .map_or(0.0, |u| 10f64.powf(u.log_prob));
            let s = sums.entry(key[0]).or_insert((0.0, 0.0));
            s.0 += 10f64.powf(e.log_prob);
            s.1 += lower;
        }
        for (key, e) in unigrams.iter_mut() {
            let (num, den) = match sums.get(&key[0]) {
                Some(&(p, q)) => (1.0 - p, 1.0 - q),
                None => (1.0, 1.0),
            };
            if num <= 0.0 || den <= 1e-300 {
                continue;
            }
            let bo = (num / den).log10();
            if (bo - e.backoff).abs() > 1e-9 {
                e.backoff = bo;
            }
        }
        let cutoffs = self.cutoffs.iter().take(2).copied().collect();
        Ok(NGramModel::from_parts(
            2,
            self.vocab.clone(),
            vec![unigrams, bigrams],
            cutoffs,
        ))
    }
}
