//! Decoding graph construction.
//!
//! The static part is the lexicon composed with a bigram grammar. On top of
//! it, [`DifferenceGrammar`] is composed on the fly: each word arc cancels the
//! bigram score already paid in the static part and adds the cost of a linear
//! interpolation between the baseline model and a regional model.

use std::collections::{BTreeMap, VecDeque};
use std::f64::consts::LN_10;
use std::fmt::Write as _;
use std::sync::Arc;

use rustc_hash::FxHashMap as HashMap;
use thiserror::Error;

use crate::ngram::{NGramModel, NgramError, Vocabulary, WordId, BOS_ID, EOS_ID, UNK_ID};
use crate::wfst::{
    compose_static, Label, LazyComposition, LazyFst, StateId, SymbolTable, Transition, Weight,
    Wfst, WfstError, EPSILON,
};

/// Tolerance used when checking that a model is normalized before it is
/// turned into a transducer.
pub const NORMALIZATION_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("lexicon is empty")]
    EmptyLexicon,
    #[error("word '{0}' has an empty pronunciation")]
    EmptyPronunciation(String),
    #[error("lexicon line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("interpolation weight {0} is outside [0, 1]")]
    InvalidLambda(f64),
    #[error("grammar expansion exceeded {0} states")]
    TooManyStates(usize),
    #[error(transparent)]
    Ngram(#[from] NgramError),
    #[error(transparent)]
    Wfst(#[from] WfstError),
}

/// Word pronunciations as sequences of acoustic units.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Lexicon {
    entries: Vec<(String, Vec<Vec<String>>)>,
    index: HashMap<String, usize>,
}

impl Lexicon {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a pronunciation; repeated pronunciations of a word are ignored.
    pub fn add<S: AsRef<str>>(&mut self, word: &str, units: &[S]) -> Result<(), GraphError> {
        if units.is_empty() {
            return Err(GraphError::EmptyPronunciation(word.to_string()));
        }
        let pron: Vec<String> = units.iter().map(|u| u.as_ref().to_string()).collect();
        let i = match self.index.get(word) {
            Some(&i) => i,
            None => {
                self.index.insert(word.to_string(), self.entries.len());
                self.entries.push((word.to_string(), Vec::new()));
                self.entries.len() - 1
            }
        };
        if !self.entries[i].1.contains(&pron) {
            self.entries[i].1.push(pron);
        }
        Ok(())
    }

    /// Parses `word<TAB>unit unit ...` lines; a word may appear on several lines.
    pub fn from_text(text: &str) -> Result<Self, GraphError> {
        let mut lex = Lexicon::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (word, units) = line.split_once('\t').ok_or(GraphError::Parse {
                line: i + 1,
                msg: "expected word<TAB>units".into(),
            })?;
            let units: Vec<&str> = units.split_whitespace().collect();
            lex.add(word, &units)?;
        }
        Ok(lex)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (word, prons) in &self.entries {
            for p in prons {
                let _ = writeln!(out, "{word}\t{}", p.join(" "));
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    /// Words in insertion order.
    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(w, _)| w.as_str())
    }

    pub fn pronunciations(&self, word: &str) -> &[Vec<String>] {
        self.index
            .get(word)
            .map_or(&[][..], |&i| self.entries[i].1.as_slice())
    }

    /// Word output table, in insertion order.
    pub fn word_symbols(&self) -> SymbolTable {
        SymbolTable::from_symbols(self.words())
    }

    /// Unit input table, sorted.
    pub fn unit_symbols(&self) -> SymbolTable {
        let mut units: Vec<&str> = self
            .entries
            .iter()
            .flat_map(|(_, ps)| ps.iter().flatten().map(String::as_str))
            .collect();
        units.sort_unstable();
        units.dedup();
        SymbolTable::from_symbols(units)
    }

    /// Sets of two or more words sharing a unit sequence, each sorted, in
    /// order of their unit sequence.
    pub fn homophone_groups(&self) -> Vec<Vec<String>> {
        let mut by_units: BTreeMap<&[String], Vec<String>> = BTreeMap::new();
        for (word, prons) in &self.entries {
            for p in prons {
                by_units.entry(p.as_slice()).or_default().push(word.clone());
            }
        }
        by_units
            .into_values()
            .filter(|g| g.len() > 1)
            .map(|mut g| {
                g.sort();
                g
            })
            .collect()
    }
}

/// Lexicon transducer from unit strings to words.
///
/// State 0 is both start and the only final state. Each pronunciation is a
/// chain leaving and re-entering state 0; the word is emitted on its first
/// arc. All arcs cost 0, so homophones are parallel paths of equal cost.
pub fn build_lexicon_fst(lex: &Lexicon) -> Result<Wfst, GraphError> {
    if lex.is_empty() {
        return Err(GraphError::EmptyLexicon);
    }
    let units = Arc::new(lex.unit_symbols());
    let words = Arc::new(lex.word_symbols());
    let mut fst = Wfst::new(units.clone(), words.clone());
    fst.set_final(0, Weight::ONE);
    for (word, prons) in &lex.entries {
        let w = words.get(word).expect("word table built from lexicon");
        for pron in prons {
            let mut src = 0;
            for (i, u) in pron.iter().enumerate() {
                let u = units.get(u).expect("unit table built from lexicon");
                let dst = if i + 1 == pron.len() { 0 } else { fst.add_state() };
                let out = if i == 0 { w } else { EPSILON };
                fst.add_arc(src, Transition::new(u, out, 0.0, dst));
                src = dst;
            }
        }
    }
    fst.sort_by_input();
    Ok(fst)
}

fn cost_of(log10_prob: f64) -> f64 {
    -log10_prob * LN_10
}

/// Per-label model ids; labels whose symbol is not in the model map to `<unk>`.
fn label_map(words: &SymbolTable, vocab: &Vocabulary) -> Vec<WordId> {
    let mut map = vec![UNK_ID; words.len()];
    for (label, sym) in words.iter() {
        map[label as usize] = vocab.id_or_unk(sym);
    }
    map
}

/// Backoff grammar as a transducer over `words` (input = output).
///
/// One state per stored context, the empty context being the unigram state.
/// Word arcs cost −ln P(w|h) and lead to the state of the extended history;
/// each non-empty context has an epsilon arc costing −ln b(h) to its backoff
/// context. Final weights are the exact backoff-evaluated −ln P(</s>|h).
/// Labels absent from the model vocabulary are scored as `<unk>`.
pub fn ngram_to_fst(model: &NGramModel, words: &Arc<SymbolTable>) -> Result<Wfst, GraphError> {
    model.check_normalization_sparse(NORMALIZATION_TOL)?;
    let to_model = label_map(words, model.vocab());
    let mut labels_of: HashMap<WordId, Vec<Label>> = HashMap::default();
    for (label, _) in words.iter() {
        labels_of.entry(to_model[label as usize]).or_default().push(label);
    }

    let mut fst = Wfst::new(words.clone(), words.clone());
    let mut ids: HashMap<Vec<WordId>, StateId> = HashMap::default();
    ids.insert(Vec::new(), 0);
    let contexts: Vec<Vec<WordId>> = model
        .contexts()
        .into_iter()
        .filter(|h| h.last() != Some(&EOS_ID))
        .collect();
    for h in &contexts {
        if !h.is_empty() {
            ids.insert(h.clone(), fst.add_state());
        }
    }
    let state_of = |ids: &HashMap<Vec<WordId>, StateId>, h: Vec<WordId>| -> StateId {
        // every stored context is a state; a history ending in </s> has no
        // continuation and falls back to its longest usable suffix
        let mut h = h;
        loop {
            if let Some(&s) = ids.get(&h) {
                return s;
            }
            h.remove(0);
        }
    };

    let mut continuations: HashMap<&[WordId], Vec<(WordId, f64)>> = HashMap::default();
    for k in 2..=model.order() {
        for (key, e) in model.entries(k) {
            let (h, w) = key.split_at(k - 1);
            continuations.entry(h).or_default().push((w[0], e.log_prob));
        }
    }
    let unigrams: Vec<(WordId, f64)> = model
        .entries(1)
        .into_iter()
        .map(|(k, e)| (k[0], e.log_prob))
        .collect();

    for h in &contexts {
        let src = ids[h];
        let eos = model.logprob_ids(EOS_ID, h);
        fst.set_final(src, Weight(cost_of(eos)));
        if let Some(e) = (!h.is_empty()).then(|| model.entry(h)).flatten() {
            let dst = state_of(&ids, h[1..].to_vec());
            fst.add_arc(src, Transition::new(EPSILON, EPSILON, cost_of(e.backoff), dst));
        }
        let arcs = if h.is_empty() {
            &unigrams[..]
        } else {
            continuations.get(h.as_slice()).map_or(&[][..], Vec::as_slice)
        };
        for &(w, lp) in arcs {
            if w == BOS_ID || w == EOS_ID {
                continue;
            }
            let Some(labels) = labels_of.get(&w) else {
                continue;
            };
            let dst = state_of(&ids, model.next_state(h, w));
            for &l in labels {
                fst.add_arc(src, Transition::new(l, l, cost_of(lp), dst));
            }
        }
    }
    fst.set_start(state_of(&ids, model.state_of(&[BOS_ID])));
    fst.sort_by_input();
    Ok(fst)
}

/// Static part of the first-pass graph: lexicon ∘ bigram grammar.
pub fn build_static_part(lexicon: &Wfst, g_bi: &Wfst) -> Result<Wfst, GraphError> {
    let mut s = compose_static(lexicon, g_bi)?;
    s.sort_by_input();
    Ok(s)
}

/// History of both component models, each reduced to its longest stored suffix.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LmState {
    pub base: Vec<WordId>,
    pub geo: Vec<WordId>,
}

/// Linear interpolation λ·P_b + (1−λ)·P_l of two backoff models, evaluated
/// per query. Word labels come from a shared word table and are mapped to
/// each model's own ids.
#[derive(Debug, Clone)]
pub struct VirtualGrammar {
    base: Arc<NGramModel>,
    geo: Arc<NGramModel>,
    lambda: f64,
    words: Arc<SymbolTable>,
    to_base: Vec<WordId>,
    to_geo: Vec<WordId>,
}

impl VirtualGrammar {
    pub fn new(
        base: Arc<NGramModel>,
        geo: Arc<NGramModel>,
        lambda: f64,
        words: Arc<SymbolTable>,
    ) -> Result<Self, GraphError> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(GraphError::InvalidLambda(lambda));
        }
        let to_base = label_map(&words, base.vocab());
        let to_geo = label_map(&words, geo.vocab());
        Ok(VirtualGrammar {
            base,
            geo,
            lambda,
            words,
            to_base,
            to_geo,
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn words(&self) -> &Arc<SymbolTable> {
        &self.words
    }

    pub fn base(&self) -> &Arc<NGramModel> {
        &self.base
    }

    pub fn geo(&self) -> &Arc<NGramModel> {
        &self.geo
    }

    // A model with zero weight is never queried, so its state stays empty
    // and the result cannot depend on it.
    fn uses_base(&self) -> bool {
        self.lambda > 0.0
    }

    fn uses_geo(&self) -> bool {
        self.lambda < 1.0
    }

    pub fn start(&self) -> LmState {
        LmState {
            base: if self.uses_base() {
                self.base.state_of(&[BOS_ID])
            } else {
                Vec::new()
            },
            geo: if self.uses_geo() {
                self.geo.state_of(&[BOS_ID])
            } else {
                Vec::new()
            },
        }
    }

    fn mix(&self, lp_base: f64, lp_geo: f64) -> f64 {
        if self.lambda == 1.0 {
            cost_of(lp_base)
        } else if self.lambda == 0.0 {
            cost_of(lp_geo)
        } else {
            let p = self.lambda * 10f64.powf(lp_base) + (1.0 - self.lambda) * 10f64.powf(lp_geo);
            -p.ln()
        }
    }

    fn query(&self, st: &LmState, w_base: WordId, w_geo: WordId) -> f64 {
        let lb = if self.uses_base() {
            self.base.logprob_ids(w_base, &st.base)
        } else {
            0.0
        };
        let lg = if self.uses_geo() {
            self.geo.logprob_ids(w_geo, &st.geo)
        } else {
            0.0
        };
        self.mix(lb, lg)
    }

    /// −ln(λ·P_b(w|h) + (1−λ)·P_l(w|h)).
    pub fn cost(&self, st: &LmState, label: Label) -> f64 {
        self.query(st, self.to_base[label as usize], self.to_geo[label as usize])
    }

    /// Interpolated cost of ending the sentence.
    pub fn final_cost(&self, st: &LmState) -> f64 {
        self.query(st, EOS_ID, EOS_ID)
    }

    pub fn next(&self, st: &LmState, label: Label) -> LmState {
        LmState {
            base: if self.uses_base() {
                self.base.next_state(&st.base, self.to_base[label as usize])
            } else {
                Vec::new()
            },
            geo: if self.uses_geo() {
                self.geo.next_state(&st.geo, self.to_geo[label as usize])
            } else {
                Vec::new()
            },
        }
    }

    /// Cost of every word of the sentence followed by the end-of-sentence cost.
    pub fn word_costs(&self, labels: &[Label]) -> Vec<f64> {
        let mut st = self.start();
        let mut out = Vec::with_capacity(labels.len() + 1);
        for &l in labels {
            out.push(self.cost(&st, l));
            st = self.next(&st, l);
        }
        out.push(self.final_cost(&st));
        out
    }

    pub fn sentence_cost(&self, labels: &[Label]) -> f64 {
        self.word_costs(labels).iter().sum()
    }
}

/// Expands the interpolated grammar into an epsilon-free transducer by
/// breadth-first search over reachable states. Intended for small models.
pub fn interpolated_fst(vg: &VirtualGrammar, max_states: usize) -> Result<Wfst, GraphError> {
    let words = vg.words().clone();
    let mut fst = Wfst::new(words.clone(), words.clone());
    let mut ids: HashMap<LmState, StateId> = HashMap::default();
    let start = vg.start();
    ids.insert(start.clone(), 0);
    let mut queue = VecDeque::from([(start, 0)]);
    while let Some((st, s)) = queue.pop_front() {
        fst.set_final(s, Weight(vg.final_cost(&st)));
        for (label, _) in words.iter() {
            let next = vg.next(&st, label);
            let d = match ids.get(&next) {
                Some(&d) => d,
                None => {
                    if ids.len() >= max_states {
                        return Err(GraphError::TooManyStates(max_states));
                    }
                    let d = fst.add_state();
                    ids.insert(next.clone(), d);
                    queue.push_back((next, d));
                    d
                }
            };
            fst.add_arc(s, Transition::new(label, label, vg.cost(&st, label), d));
        }
    }
    Ok(fst)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct DiffState {
    bigram: WordId,
    lm: LmState,
}

/// The on-the-fly factor F of the first-pass graph. Input and output are
/// words; a word arc costs ln P_bi(w|h) − ln(λ·P_b + (1−λ)·P_l), so that
/// composed with the static bigram grammar the path carries exactly the
/// interpolated cost. Arcs are generated and memoized per query.
pub struct DifferenceGrammar {
    vg: Arc<VirtualGrammar>,
    bigram: Arc<NGramModel>,
    to_bigram: Vec<WordId>,
    states: Vec<DiffState>,
    index: HashMap<DiffState, StateId>,
    full: Vec<Option<Vec<Transition>>>,
    single: HashMap<(StateId, Label), Transition>,
}

impl DifferenceGrammar {
    /// `bigram` must be the model the static grammar was built from.
    pub fn new(vg: Arc<VirtualGrammar>, bigram: Arc<NGramModel>) -> Self {
        let to_bigram = label_map(vg.words(), bigram.vocab());
        let start = DiffState {
            bigram: BOS_ID,
            lm: vg.start(),
        };
        DifferenceGrammar {
            vg,
            bigram,
            to_bigram,
            states: vec![start.clone()],
            index: [(start, 0)].into_iter().collect(),
            full: vec![None],
            single: HashMap::default(),
        }
    }

    pub fn grammar(&self) -> &Arc<VirtualGrammar> {
        &self.vg
    }

    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    fn intern(&mut self, st: DiffState) -> StateId {
        if let Some(&s) = self.index.get(&st) {
            return s;
        }
        let s = self.states.len() as StateId;
        self.states.push(st.clone());
        self.index.insert(st, s);
        self.full.push(None);
        s
    }

    fn arc(&mut self, s: StateId, label: Label) -> Transition {
        if let Some(&a) = self.single.get(&(s, label)) {
            return a;
        }
        let st = &self.states[s as usize];
        let w = self.to_bigram[label as usize];
        let cancel = -cost_of(self.bigram.logprob_ids(w, &[st.bigram]));
        let cost = cancel + self.vg.cost(&st.lm, label);
        let next = DiffState {
            bigram: w,
            lm: self.vg.next(&st.lm, label),
        };
        let next = self.intern(next);
        let a = Transition::new(label, label, cost, next);
        self.single.insert((s, label), a);
        a
    }
}

impl LazyFst for DifferenceGrammar {
    fn start(&mut self) -> StateId {
        0
    }

    fn final_weight(&mut self, s: StateId) -> Weight {
        let st = &self.states[s as usize];
        let cancel = -cost_of(self.bigram.logprob_ids(EOS_ID, &[st.bigram]));
        Weight(cancel + self.vg.final_cost(&st.lm))
    }

    fn arcs(&mut self, s: StateId) -> &[Transition] {
        if self.full[s as usize].is_none() {
            let n = self.vg.words().len() as Label;
            let arcs = (1..n).map(|l| self.arc(s, l)).collect();
            self.full[s as usize] = Some(arcs);
        }
        self.full[s as usize].as_deref().unwrap()
    }

    fn input_symbols(&self) -> &Arc<SymbolTable> {
        self.vg.words()
    }

    fn output_symbols(&self) -> &Arc<SymbolTable> {
        self.vg.words()
    }

    fn arcs_with_input(&mut self, s: StateId, label: Label) -> Vec<Transition> {
        if label == EPSILON {
            Vec::new()
        } else {
            vec![self.arc(s, label)]
        }
    }
}

/// First-pass search graph: (lexicon ∘ bigram grammar) ∘ F, the right factor
/// composed on demand.
pub type FirstPassGraph<'a> = LazyComposition<&'a Wfst, DifferenceGrammar>;

pub fn assemble_first_pass<S: LazyFst>(
    static_part: S,
    f: DifferenceGrammar,
) -> Result<LazyComposition<S, DifferenceGrammar>, GraphError> {
    Ok(LazyComposition::new(static_part, f)?)
}
