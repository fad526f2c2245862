use rustc_hash::FxHashMap as HashMap;

use super::{Entry, NGramModel, NgramError, Vocabulary, WordId, BOS_ID, EOS_ID, LOG10_ZERO, UNK_ID};

/// Smallest probability `<unk>` may receive.
const UNK_FLOOR: f64 = 1e-7;

/// Discounts used when counts-of-counts cannot support the estimate
/// (tiny corpora, missing count classes).
const FALLBACK_DISCOUNTS: [f64; 3] = [0.5, 1.0, 1.5];

/// Raw n-gram counts of a padded corpus, plus the Kneser-Ney adjusted counts
/// derived from them.
#[derive(Debug, Clone)]
pub struct CountTable {
    order: usize,
    raw: Vec<HashMap<Vec<WordId>, u64>>,
}

impl CountTable {
    pub fn new(order: usize) -> Self {
        CountTable {
            order,
            raw: vec![HashMap::default(); order],
        }
    }

    /// Adds one sentence (without `<s>`/`</s>`), counted `weight` times.
    pub fn add_sentence(&mut self, ids: &[WordId], weight: u64) {
        let mut padded = Vec::with_capacity(ids.len() + 2);
        padded.push(BOS_ID);
        padded.extend_from_slice(ids);
        padded.push(EOS_ID);
        for k in 1..=self.order {
            for win in padded.windows(k) {
                *self.raw[k - 1].entry(win.to_vec()).or_insert(0) += weight;
            }
        }
    }

    pub fn raw(&self, k: usize) -> &HashMap<Vec<WordId>, u64> {
        &self.raw[k - 1]
    }

    /// Counts used for estimation at order `k`: raw counts at the top order
    /// and for n-grams starting with `<s>`, continuation counts N1+(• g)
    /// otherwise.
    pub fn adjusted(&self, k: usize) -> HashMap<Vec<WordId>, u64> {
        if k == self.order {
            return self.raw[k - 1].clone();
        }
        let mut cont: HashMap<Vec<WordId>, u64> = HashMap::default();
        for key in self.raw[k].keys() {
            *cont.entry(key[1..].to_vec()).or_insert(0) += 1;
        }
        self.raw[k - 1]
            .iter()
            .map(|(g, &c)| {
                let a = if g[0] == BOS_ID {
                    c
                } else {
                    cont.get(g).copied().unwrap_or(0)
                };
                (g.clone(), a)
            })
            .collect()
    }
}

/// Modified Kneser-Ney discounts (D1, D2, D3+) from counts-of-counts
/// n1..n4. Falls back to fixed values when any class is empty or an estimate
/// leaves its valid range.
pub fn discounts_from_counts_of_counts(n: [u64; 4]) -> [f64; 3] {
    if n.iter().any(|&c| c == 0) {
        return FALLBACK_DISCOUNTS;
    }
    let [n1, n2, n3, n4] = n.map(|c| c as f64);
    let y = n1 / (n1 + 2.0 * n2);
    let d = [
        1.0 - 2.0 * y * n2 / n1,
        2.0 - 3.0 * y * n3 / n2,
        3.0 - 4.0 * y * n4 / n3,
    ];
    if d.iter()
        .enumerate()
        .all(|(i, &di)| di > 0.0 && di < (i + 1) as f64)
    {
        d
    } else {
        FALLBACK_DISCOUNTS
    }
}

fn discount(d: &[f64; 3], count: u64) -> f64 {
    match count {
        0 => 0.0,
        1 => d[0],
        2 => d[1],
        _ => d[2],
    }
}

fn counts_of_counts<'a>(counts: impl Iterator<Item = &'a u64>) -> [u64; 4] {
    let mut n = [0u64; 4];
    for &c in counts {
        if (1..=4).contains(&c) {
            n[c as usize - 1] += 1;
        }
    }
    n
}

/// Trains an interpolated modified Kneser-Ney model, one count per sentence.
pub fn train<S: AsRef<str>>(
    corpus: &[Vec<S>],
    order: usize,
    cutoffs: &[u32],
) -> Result<NGramModel, NgramError> {
    train_impl(corpus.iter().map(|s| (s.as_slice(), 1)), order, cutoffs)
}

/// Like [`train`], with an occurrence count attached to each sentence.
pub fn train_weighted<S: AsRef<str>>(
    corpus: &[(Vec<S>, u64)],
    order: usize,
    cutoffs: &[u32],
) -> Result<NGramModel, NgramError> {
    train_impl(corpus.iter().map(|(s, w)| (s.as_slice(), *w)), order, cutoffs)
}

fn train_impl<'a, S, I>(corpus: I, order: usize, cutoffs: &[u32]) -> Result<NGramModel, NgramError>
where
    S: AsRef<str> + 'a,
    I: Iterator<Item = (&'a [S], u64)> + Clone,
{
    if order == 0 {
        return Err(NgramError::InvalidOrder);
    }
    if cutoffs.len() != order {
        return Err(NgramError::CutoffMismatch {
            order,
            got: cutoffs.len(),
        });
    }
    if corpus.clone().next().is_none() {
        return Err(NgramError::EmptyCorpus);
    }

    // Unigram cutoff: words seen at most cutoffs[0] times become <unk>.
    let mut word_counts: HashMap<&str, u64> = HashMap::default();
    let mut first_seen: Vec<&str> = Vec::new();
    for (sent, w) in corpus.clone() {
        for tok in sent {
            let t = tok.as_ref();
            let e = word_counts.entry(t).or_insert_with(|| {
                first_seen.push(t);
                0
            });
            *e += w;
        }
    }
    let mut vocab = Vocabulary::new();
    for t in &first_seen {
        if word_counts[t] > u64::from(cutoffs[0]) {
            vocab.insert(t);
        }
    }

    let mut counts = CountTable::new(order);
    let mut ids = Vec::new();
    for (sent, w) in corpus {
        ids.clear();
        ids.extend(sent.iter().map(|t| vocab.id_or_unk(t.as_ref())));
        counts.add_sentence(&ids, w);
    }

    let tables = estimate(&vocab, &counts, cutoffs);
    Ok(NGramModel::from_parts(order, vocab, tables, cutoffs.to_vec()))
}

fn estimate(
    vocab: &Vocabulary,
    counts: &CountTable,
    cutoffs: &[u32],
) -> Vec<HashMap<Vec<WordId>, Entry>> {
    let order = counts.order;
    let mut model = NGramModel::from_parts(
        order,
        vocab.clone(),
        vec![HashMap::default(); order],
        cutoffs.to_vec(),
    );

    // Unigrams: interpolate with the uniform distribution over predictable
    // tokens. <unk> only receives uniform mass unless words were mapped to it.
    let adjusted = counts.adjusted(1);
    let predictable: Vec<WordId> = vocab.predictable().collect();
    let d = discounts_from_counts_of_counts(counts_of_counts(
        adjusted
            .iter()
            .filter(|(g, _)| g[0] != BOS_ID)
            .map(|(_, c)| c),
    ));
    let a = |w: WordId| adjusted.get(&vec![w]).copied().unwrap_or(0);
    let total: u64 = predictable.iter().map(|&w| a(w)).sum();
    let total = total as f64;
    let gamma: f64 = predictable.iter().map(|&w| discount(&d, a(w))).sum::<f64>() / total;
    let uniform = 1.0 / predictable.len() as f64;
    let mut probs: Vec<(WordId, f64)> = predictable
        .iter()
        .map(|&w| {
            let c = a(w);
            (w, (c as f64 - discount(&d, c)) / total + gamma * uniform)
        })
        .collect();
    let unk = probs.iter().position(|&(w, _)| w == UNK_ID).unwrap();
    if probs[unk].1 < UNK_FLOOR {
        let scale = (1.0 - UNK_FLOOR) / (1.0 - probs[unk].1);
        for (w, p) in probs.iter_mut() {
            *p = if *w == UNK_ID { UNK_FLOOR } else { *p * scale };
        }
    }
    let unigrams = &mut model.tables[0];
    for (w, p) in probs {
        unigrams.insert(
            vec![w],
            Entry {
                log_prob: p.log10(),
                backoff: 0.0,
            },
        );
    }
    unigrams.insert(
        vec![BOS_ID],
        Entry {
            log_prob: LOG10_ZERO,
            backoff: 0.0,
        },
    );

    for k in 2..=order {
        let adjusted = counts.adjusted(k);
        let raw = counts.raw(k);
        let d = discounts_from_counts_of_counts(counts_of_counts(adjusted.values()));
        let cutoff = u64::from(cutoffs[k - 1]);

        // context -> (S(h), mass released to the lower order, retained n-grams)
        let mut by_context: HashMap<&[WordId], (u64, f64, Vec<(&Vec<WordId>, u64)>)> =
            HashMap::default();
        let mut keys: Vec<&Vec<WordId>> = adjusted.keys().collect();
        keys.sort();
        for g in keys {
            let c = adjusted[g];
            let ctx = &g[..k - 1];
            let keep = raw[g] > cutoff
                && model.tables[k - 2].contains_key(ctx)
                && model.tables[k - 2].contains_key(&g[1..]);
            let slot = by_context.entry(ctx).or_insert((0, 0.0, Vec::new()));
            slot.0 += c;
            if keep {
                slot.1 += discount(&d, c);
                slot.2.push((g, c));
            } else {
                slot.1 += c as f64;
            }
        }

        let mut contexts: Vec<_> = by_context.into_iter().collect();
        contexts.sort_by(|a, b| a.0.cmp(b.0));
        let mut new_entries = Vec::new();
        let mut backoffs = Vec::new();
        for (ctx, (s, released, kept)) in contexts {
            if !model.tables[k - 2].contains_key(ctx) {
                continue;
            }
            let s = s as f64;
            let gamma = released / s;
            for (g, c) in kept {
                let lower = model.prob_ids(g[k - 1], &g[1..k - 1]);
                let p = (c as f64 - discount(&d, c)) / s + gamma * lower;
                new_entries.push((
                    g.clone(),
                    Entry {
                        log_prob: p.log10(),
                        backoff: 0.0,
                    },
                ));
            }
            backoffs.push((ctx.to_vec(), gamma.log10()));
        }
        for (ctx, bo) in backoffs {
            model.tables[k - 2].get_mut(&ctx).unwrap().backoff = bo;
        }
        model.tables[k - 1].extend(new_entries);
    }
    model.tables
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> NGramModel {
        let corpus: Vec<Vec<&str>> = vec![vec!["a", "b"], vec!["a", "c"]];
        train(&corpus, 2, &[0, 0]).unwrap()
    }

    // Hand-computed interpolated modified KN for {"a b", "a c"}, order 2.
    // Counts-of-counts are incomplete at both orders, so the fallback
    // discounts D1=0.5, D2=1.0, D3+=1.5 apply.
    //
    // Unigram continuation counts: a=1 b=1 c=1 </s>=2 <unk>=0, total 5.
    // gamma = (3*0.5 + 1.0)/5 = 0.5; uniform share = 0.5/5 = 0.1 over
    // {<unk>, </s>, a, b, c}.
    //   P(a)=P(b)=P(c) = 0.5/5 + 0.1 = 0.2, P(</s>) = 1/5 + 0.1 = 0.3,
    //   P(<unk>) = 0.1
    // Bigrams (raw counts): <s> a=2, a b=1, a c=1, b </s>=1, c </s>=1.
    //   context a:   S=2, gamma=(0.5+0.5)/2=0.5, P(b|a)=0.5/2+0.5*0.2=0.35
    //   context <s>: S=2, gamma=1.0/2=0.5,       P(a|<s>)=1/2+0.5*0.2=0.6
    //   context b:   S=1, gamma=0.5,             P(</s>|b)=0.5+0.5*0.3=0.65
    #[test]
    fn matches_hand_computed_kneser_ney() {
        let m = toy();
        let p = |w: &str, h: &[&str]| 10f64.powf(m.logprob(w, h));
        let none: [&str; 0] = [];
        for (w, h, expect) in [
            ("a", &none[..], 0.2),
            ("b", &none[..], 0.2),
            ("</s>", &none[..], 0.3),
            ("<unk>", &none[..], 0.1),
            ("b", &["a"][..], 0.35),
            ("c", &["a"][..], 0.35),
            ("a", &["<s>"][..], 0.6),
            ("</s>", &["b"][..], 0.65),
            // backed off: gamma(a) * P(a) = 0.5 * 0.2
            ("a", &["a"][..], 0.1),
        ] {
            assert!((p(w, h) - expect).abs() < 1e-12, "P({w}|{h:?})");
        }
        let a = m.vocab().get("a").unwrap();
        assert!((m.entry(&[a]).unwrap().backoff - 0.5f64.log10()).abs() < 1e-12);
    }

    #[test]
    fn symmetric_counts_give_equal_probabilities() {
        let m = toy();
        assert_eq!(m.logprob("b", &["a"]), m.logprob("c", &["a"]));
    }

    #[test]
    fn every_context_is_normalized() {
        let m = toy();
        m.check_normalization(1e-6).unwrap();
        for ctx in m.contexts() {
            assert!((m.context_mass(&ctx) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn discounts_follow_counts_of_counts() {
        let d = discounts_from_counts_of_counts([100, 40, 20, 10]);
        let y = 100.0 / 180.0;
        assert!((d[0] - (1.0 - 2.0 * y * 0.4)).abs() < 1e-12);
        assert!((d[1] - (2.0 - 3.0 * y * 0.5)).abs() < 1e-12);
        assert!((d[2] - (3.0 - 4.0 * y * 0.5)).abs() < 1e-12);
        assert_eq!(discounts_from_counts_of_counts([3, 1, 0, 0]), FALLBACK_DISCOUNTS);
    }

    #[test]
    fn errors() {
        let empty: Vec<Vec<&str>> = vec![];
        assert!(matches!(train(&empty, 2, &[0, 0]), Err(NgramError::EmptyCorpus)));
        let c = vec![vec!["a"]];
        assert!(matches!(
            train(&c, 3, &[0, 0]),
            Err(NgramError::CutoffMismatch { order: 3, got: 2 })
        ));
        assert!(matches!(train(&c, 0, &[]), Err(NgramError::InvalidOrder)));
    }

    #[test]
    fn unigram_cutoff_truncates_vocabulary() {
        let corpus = vec![vec!["a", "b"], vec!["a", "c"], vec!["a"]];
        let m = train(&corpus, 2, &[1, 0]).unwrap();
        assert!(m.vocab().contains("a"));
        assert!(!m.vocab().contains("b"));
        assert!(!m.vocab().contains("c"));
        // b and c now both count as <unk>, which gets real mass
        let none: [&str; 0] = [];
        assert!(m.logprob("<unk>", &none) > UNK_FLOOR.log10());
        assert_eq!(m.logprob("b", &["a"]), m.logprob("<unk>", &["a"]));
        m.check_normalization(1e-6).unwrap();
    }

    #[test]
    fn pruned_ngrams_fall_below_cutoff() {
        let corpus: Vec<Vec<&str>> = vec![
            vec!["x", "y"],
            vec!["x", "y"],
            vec!["x", "y"],
            vec!["x", "z"],
        ];
        let m = train(&corpus, 2, &[0, 1]).unwrap();
        let x = m.vocab().get("x").unwrap();
        let y = m.vocab().get("y").unwrap();
        let z = m.vocab().get("z").unwrap();
        assert!(m.entry(&[x, y]).is_some());
        assert!(m.entry(&[x, z]).is_none());
        m.check_normalization(1e-9).unwrap();
    }

    #[test]
    fn weighted_equals_repeated() {
        let rep: Vec<Vec<&str>> = vec![vec!["a", "b"], vec!["a", "b"], vec!["c"]];
        let w = vec![(vec!["a", "b"], 2u64), (vec!["c"], 1)];
        let m1 = train(&rep, 3, &[0, 0, 0]).unwrap();
        let m2 = train_weighted(&w, 3, &[0, 0, 0]).unwrap();
        assert_eq!(m1, m2);
    }
}
