//! First-pass search: time-synchronous token passing over a (lazily
//! composed) unit-to-word graph, producing an n-best list of distinct word
//! sequences with acoustic and language model costs kept apart.

use std::cmp::Ordering;
use std::collections::VecDeque;
use std::fmt::Write as _;
use std::sync::Arc;

use rustc_hash::{FxHashMap as HashMap, FxHashSet as HashSet};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::wfst::{Label, LazyFst, StateId, SymbolTable, EPSILON};

#[derive(Debug, Error, PartialEq)]
pub enum DecodeError {
    #[error("emission sequence has no frames")]
    EmptyEmissions,
    #[error("beam must be positive, got {0}")]
    InvalidBeam(f64),
    #[error("n-best size must be at least 1")]
    ZeroNbest,
    #[error("no token survived frame {frame}")]
    EmptyBeam { frame: usize },
    #[error("no token reached a final state")]
    NoFinalState,
    #[error("graph input symbols differ from the emission unit inventory")]
    UnitMismatch,
    #[error("frame {frame}: {msg}")]
    InvalidFrame { frame: usize, msg: String },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

fn parse_err(line: usize, msg: impl Into<String>) -> DecodeError {
    DecodeError::Parse {
        line: line + 1,
        msg: msg.into(),
    }
}

/// Per-frame natural-log posteriors over a unit inventory. Column `j` of a
/// frame belongs to unit label `j + 1` (label 0 is epsilon).
#[derive(Debug, Clone, PartialEq)]
pub struct EmissionSequence {
    units: Arc<SymbolTable>,
    frames: Vec<Vec<f64>>,
}

impl EmissionSequence {
    pub fn new(units: Arc<SymbolTable>, frames: Vec<Vec<f64>>) -> Result<Self, DecodeError> {
        let n = units.len() - 1;
        for (t, f) in frames.iter().enumerate() {
            let bad = |msg: String| DecodeError::InvalidFrame { frame: t, msg };
            if f.len() != n {
                return Err(bad(format!("expected {n} posteriors, got {}", f.len())));
            }
            if f.iter().any(|v| v.is_nan() || *v > 0.0) {
                return Err(bad("log posteriors must be <= 0".into()));
            }
            let sum: f64 = f.iter().map(|v| v.exp()).sum();
            if (sum - 1.0).abs() > 1e-6 {
                return Err(bad(format!("posteriors sum to {sum}")));
            }
        }
        Ok(EmissionSequence { units, frames })
    }

    pub fn units(&self) -> &Arc<SymbolTable> {
        &self.units
    }

    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn num_units(&self) -> usize {
        self.units.len() - 1
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.frames[t]
    }

    /// −ln posterior of `unit` at frame `t`.
    pub fn cost(&self, t: usize, unit: Label) -> f64 {
        -self.frames[t][unit as usize - 1]
    }

    /// Acoustic cost of reading `units`, one per frame.
    pub fn path_cost(&self, units: &[Label]) -> f64 {
        units.iter().enumerate().map(|(t, &u)| self.cost(t, u)).sum()
    }

    /// Header `frames<TAB>T<TAB>units<TAB>U`, then the unit symbols on one
    /// line, then one tab-separated row of log posteriors per frame.
    pub fn to_text(&self) -> String {
        let mut out = format!("frames\t{}\tunits\t{}\n", self.num_frames(), self.num_units());
        let names: Vec<&str> = self.units.iter().map(|(_, s)| s).collect();
        out.push_str(&names.join("\t"));
        out.push('\n');
        for f in &self.frames {
            let row: Vec<String> = f.iter().map(|v| v.to_string()).collect();
            out.push_str(&row.join("\t"));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str, units: Arc<SymbolTable>) -> Result<Self, DecodeError> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| parse_err(0, "missing header"))?;
        let h: Vec<&str> = header.split('\t').collect();
        let (t, u) = match h.as_slice() {
            ["frames", t, "units", u] => (
                t.parse::<usize>().map_err(|_| parse_err(0, "bad frame count"))?,
                u.parse::<usize>().map_err(|_| parse_err(0, "bad unit count"))?,
            ),
            _ => return Err(parse_err(0, "expected frames<TAB>T<TAB>units<TAB>U")),
        };
        let (_, names) = lines.next().ok_or_else(|| parse_err(1, "missing unit line"))?;
        let names: Vec<&str> = if u == 0 { Vec::new() } else { names.split('\t').collect() };
        let expected: Vec<&str> = units.iter().map(|(_, s)| s).collect();
        if names != expected {
            return Err(DecodeError::UnitMismatch);
        }
        let mut frames = Vec::with_capacity(t);
        for (i, line) in lines {
            if line.is_empty() {
                continue;
            }
            let row: Result<Vec<f64>, _> = line.split('\t').map(str::parse).collect();
            frames.push(row.map_err(|_| parse_err(i, "bad posterior"))?);
        }
        if frames.len() != t {
            return Err(parse_err(0, format!("header declares {t} frames, found {}", frames.len())));
        }
        EmissionSequence::new(units, frames)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    /// Tokens costlier than the frame's best by more than this are dropped.
    pub beam: f64,
    pub nbest: usize,
    pub lm_scale: f64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            beam: 10.0,
            nbest: 20,
            lm_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub words: Vec<String>,
    /// acoustic + lm_scale · lm
    pub total: f64,
    pub acoustic: f64,
    pub lm: f64,
    /// First-pass cost of each word followed by the end-of-sentence cost,
    /// when known. Sums to `lm` up to rounding.
    pub word_lm_costs: Vec<f64>,
}

impl Hypothesis {
    /// Concatenated characters of all words.
    pub fn characters(&self) -> String {
        self.words.concat()
    }
}

/// (acoustic cost, language model cost).
pub fn score_breakdown(h: &Hypothesis) -> (f64, f64) {
    (h.acoustic, h.lm)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NBestList {
    pub utt_id: String,
    pub province: Option<u32>,
    pub hyps: Vec<Hypothesis>,
}

fn fmt_costs(v: &[f64]) -> String {
    if v.is_empty() {
        "-".into()
    } else {
        v.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
    }
}

impl NBestList {
    /// One line per hypothesis:
    /// `utt_id  province  rank  total  acoustic  lm  word_costs  words`,
    /// tab-separated; word costs are comma-separated, words space-separated.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let prov = self.province.map_or("-".to_string(), |p| p.to_string());
        for (r, h) in self.hyps.iter().enumerate() {
            let _ = writeln!(
                out,
                "{}\t{prov}\t{}\t{}\t{}\t{}\t{}\t{}",
                self.utt_id,
                r + 1,
                h.total,
                h.acoustic,
                h.lm,
                fmt_costs(&h.word_lm_costs),
                h.words.join(" ")
            );
        }
        out
    }

    /// Parses consecutive lists; lines of one utterance must be contiguous
    /// and ranked 1, 2, ...
    pub fn parse_many(text: &str) -> Result<Vec<NBestList>, DecodeError> {
        let mut out: Vec<NBestList> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 8 {
                return Err(parse_err(i, "expected 8 tab-separated fields"));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| parse_err(i, format!("bad number '{s}'")));
            let province = match f[1] {
                "-" => None,
                p => Some(p.parse().map_err(|_| parse_err(i, "bad province"))?),
            };
            let rank: usize = f[2].parse().map_err(|_| parse_err(i, "bad rank"))?;
            let word_lm_costs = match f[6] {
                "-" => Vec::new(),
                s => s.split(',').map(num).collect::<Result<_, _>>()?,
            };
            let hyp = Hypothesis {
                words: f[7].split_whitespace().map(String::from).collect(),
                total: num(f[3])?,
                acoustic: num(f[4])?,
                lm: num(f[5])?,
                word_lm_costs,
            };
            match out.last_mut() {
                Some(l) if l.utt_id == f[0] => {
                    if rank != l.hyps.len() + 1 {
                        return Err(parse_err(i, "ranks must be consecutive"));
                    }
                    l.hyps.push(hyp);
                }
                _ => {
                    if rank != 1 {
                        return Err(parse_err(i, "a list must start at rank 1"));
                    }
                    if out.iter().any(|l| l.utt_id == f[0]) {
                        return Err(parse_err(i, format!("utterance '{}' is not contiguous", f[0])));
                    }
                    out.push(NBestList {
                        utt_id: f[0].to_string(),
                        province,
                        hyps: vec![hyp],
                    });
                }
            }
        }
        Ok(out)
    }
}

/// Interned word sequences. Id 0 is the empty sequence; every other id is
/// a (parent, word) pair, so equal sequences share one id.
#[derive(Default)]
struct Histories {
    nodes: Vec<(u32, Label)>,
    index: HashMap<(u32, Label), u32>,
}

impl Histories {
    fn new() -> Self {
        Histories {
            nodes: vec![(0, EPSILON)],
            index: HashMap::default(),
        }
    }

    fn push(&mut self, parent: u32, word: Label) -> u32 {
        let next = self.nodes.len() as u32;
        *self.index.entry((parent, word)).or_insert_with(|| {
            self.nodes.push((parent, word));
            next
        })
    }

    fn words(&self, mut id: u32) -> Vec<Label> {
        let mut out = Vec::new();
        while id != 0 {
            let (p, w) = self.nodes[id as usize];
            out.push(w);
            id = p;
        }
        out.reverse();
        out
    }

    fn cmp(&self, a: u32, b: u32) -> Ordering {
        if a == b {
            Ordering::Equal
        } else {
            self.words(a).cmp(&self.words(b))
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Token {
    total: f64,
    ac: f64,
    lm: f64,
    hist: u32,
}

impl Token {
    fn cmp_key(&self, other: &Token, h: &Histories) -> Ordering {
        self.total
            .total_cmp(&other.total)
            .then_with(|| h.cmp(self.hist, other.hist))
    }
}

/// Inserts into a sorted list holding at most `n` distinct word sequences.
/// Returns whether the list changed.
fn insert(list: &mut Vec<Token>, tok: Token, n: usize, h: &Histories) -> bool {
    if let Some(i) = list.iter().position(|t| t.hist == tok.hist) {
        if tok.cmp_key(&list[i], h) != Ordering::Less {
            return false;
        }
        list.remove(i);
    } else if list.len() >= n && tok.cmp_key(list.last().unwrap(), h) != Ordering::Less {
        return false;
    }
    let at = list.partition_point(|t| t.cmp_key(&tok, h) == Ordering::Less);
    list.insert(at, tok);
    list.truncate(n);
    true
}

type Active = HashMap<StateId, Vec<Token>>;

fn extend(tok: &Token, ac: f64, weight: f64, olabel: Label, scale: f64, h: &mut Histories) -> Token {
    let ac = tok.ac + ac;
    let lm = tok.lm + weight;
    let hist = if olabel != EPSILON {
        h.push(tok.hist, olabel)
    } else {
        tok.hist
    };
    Token {
        total: ac + scale * lm,
        ac,
        lm,
        hist,
    }
}

/// Follows input-epsilon arcs until no state list changes.
fn closure<G: LazyFst>(graph: &mut G, active: &mut Active, cfg: &DecodeConfig, h: &mut Histories) {
    let mut keys: Vec<StateId> = active.keys().copied().collect();
    keys.sort_unstable();
    let mut queue: VecDeque<StateId> = keys.into();
    let mut queued: HashSet<StateId> = queue.iter().copied().collect();
    while let Some(s) = queue.pop_front() {
        queued.remove(&s);
        let arcs = graph.arcs_with_input(s, EPSILON);
        if arcs.is_empty() {
            continue;
        }
        let toks = active[&s].clone();
        for a in arcs {
            for tok in &toks {
                let t = extend(tok, 0.0, a.weight.0, a.olabel, cfg.lm_scale, h);
                if insert(active.entry(a.next).or_default(), t, cfg.nbest, h) && queued.insert(a.next) {
                    queue.push_back(a.next);
                }
            }
        }
    }
}

fn prune(active: &mut Active, beam: f64) {
    let best = active
        .values()
        .filter_map(|l| l.first())
        .map(|t| t.total)
        .fold(f64::INFINITY, f64::min);
    let limit = best + beam;
    active.retain(|_, l| {
        l.retain(|t| t.total <= limit);
        !l.is_empty()
    });
}

/// Beam search over `graph` (input: units, output: words), one unit per
/// frame, returning up to `cfg.nbest` distinct word sequences ranked by
/// (total cost, word labels).
///
/// Each state keeps the best `nbest` distinct word sequences reaching it, so
/// with an infinite beam the result is exact. With a finite beam, tokens
/// further than `beam` from the frame's best are dropped, and a unit is not
/// expanded from a state whose best token cannot come within the beam even
/// before any language model cost is added.
pub fn decode<G: LazyFst>(
    graph: &mut G,
    emissions: &EmissionSequence,
    cfg: &DecodeConfig,
) -> Result<Vec<Hypothesis>, DecodeError> {
    if emissions.num_frames() == 0 {
        return Err(DecodeError::EmptyEmissions);
    }
    if cfg.beam.is_nan() || cfg.beam <= 0.0 {
        return Err(DecodeError::InvalidBeam(cfg.beam));
    }
    if cfg.nbest == 0 {
        return Err(DecodeError::ZeroNbest);
    }
    if graph.input_symbols().as_ref() != emissions.units().as_ref() {
        return Err(DecodeError::UnitMismatch);
    }
    let units = emissions.num_units() as Label;
    let start = graph.start();
    let mut hist = Histories::new();
    let mut active: Active = HashMap::default();
    active.insert(
        start,
        vec![Token {
            total: 0.0,
            ac: 0.0,
            lm: 0.0,
            hist: 0,
        }],
    );

    for t in 0..emissions.num_frames() {
        closure(graph, &mut active, cfg, &mut hist);
        prune(&mut active, cfg.beam);
        let mut order: Vec<(f64, StateId)> = active.iter().map(|(&s, l)| (l[0].total, s)).collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut next: Active = HashMap::default();
        let mut best = f64::INFINITY;
        for (state_best, s) in order {
            for u in 1..=units {
                let c = emissions.cost(t, u);
                if state_best + c > best + cfg.beam {
                    continue;
                }
                let arcs = graph.arcs_with_input(s, u);
                let toks = &active[&s];
                for a in arcs {
                    for tok in toks {
                        let total = tok.ac + c + cfg.lm_scale * (tok.lm + a.weight.0);
                        if total > best + cfg.beam {
                            continue;
                        }
                        let nt = extend(tok, c, a.weight.0, a.olabel, cfg.lm_scale, &mut hist);
                        best = best.min(nt.total);
                        insert(next.entry(a.next).or_default(), nt, cfg.nbest, &hist);
                    }
                }
            }
        }
        if next.is_empty() {
            return Err(DecodeError::EmptyBeam { frame: t });
        }
        active = next;
    }
    closure(graph, &mut active, cfg, &mut hist);

    let mut finals: Vec<Token> = Vec::new();
    let mut states: Vec<StateId> = active.keys().copied().collect();
    states.sort_unstable();
    for s in states {
        let fw = graph.final_weight(s);
        if fw.is_zero() {
            continue;
        }
        for tok in &active[&s] {
            finals.push(extend(tok, 0.0, fw.0, EPSILON, cfg.lm_scale, &mut hist));
        }
    }
    if finals.is_empty() {
        return Err(DecodeError::NoFinalState);
    }
    finals.sort_by(|a, b| a.cmp_key(b, &hist));
    let mut seen = HashSet::default();
    finals.retain(|t| seen.insert(t.hist));
    finals.truncate(cfg.nbest);

    let words = graph.output_symbols().clone();
    Ok(finals
        .into_iter()
        .map(|t| Hypothesis {
            words: hist
                .words(t.hist)
                .iter()
                .map(|&l| words.symbol(l).unwrap_or("?").to_string())
                .collect(),
            total: t.total,
            acoustic: t.ac,
            lm: t.lm,
            word_lm_costs: Vec::new(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wfst::{Transition, Weight, Wfst};

    fn units() -> Arc<SymbolTable> {
        Arc::new(SymbolTable::from_symbols(["a", "b", "c"]))
    }

    fn frames(units: &Arc<SymbolTable>, peaks: &[&str], sharp: f64) -> EmissionSequence {
        let n = units.len() - 1;
        let frames = peaks
            .iter()
            .map(|p| {
                let k = units.get(p).unwrap() as usize - 1;
                let raw: Vec<f64> = (0..n).map(|j| if j == k { sharp } else { 1.0 }).collect();
                let z: f64 = raw.iter().sum();
                raw.iter().map(|v| (v / z).ln()).collect()
            })
            .collect();
        EmissionSequence::new(units.clone(), frames).unwrap()
    }

    /// Two words over units a/b: "x" = a b, "y" = a c.
    fn toy_graph(u: &Arc<SymbolTable>) -> Wfst {
        let w = Arc::new(SymbolTable::from_symbols(["x", "y"]));
        let mut g = Wfst::new(u.clone(), w);
        let s1 = g.add_state();
        let s2 = g.add_state();
        let f = g.add_state();
        g.add_arc(0, Transition::new(1, 1, 0.5, s1));
        g.add_arc(0, Transition::new(1, 2, 0.7, s2));
        g.add_arc(s1, Transition::new(2, 0, 0.0, f));
        g.add_arc(s2, Transition::new(3, 0, 0.0, f));
        g.set_final(f, Weight(0.1));
        g
    }

    #[test]
    fn single_path_is_found() {
        let u = units();
        let mut g = toy_graph(&u);
        let em = frames(&u, &["a", "c"], 50.0);
        let hyps = decode(&mut g, &em, &DecodeConfig::default()).unwrap();
        assert_eq!(hyps[0].words, vec!["y"]);
        assert_eq!(hyps.len(), 2);
        for h in &hyps {
            assert_eq!(h.total, h.acoustic + h.lm);
        }
        let (ac, lm) = score_breakdown(&hyps[0]);
        assert!((lm - 0.8).abs() < 1e-12);
        assert!((ac - em.path_cost(&[1, 3])).abs() < 1e-12);
    }

    #[test]
    fn lm_scale_weights_only_the_lm() {
        let u = units();
        let mut g = toy_graph(&u);
        let em = frames(&u, &["a", "b"], 2.0);
        let cfg = DecodeConfig {
            lm_scale: 3.0,
            ..Default::default()
        };
        for h in decode(&mut g, &em, &cfg).unwrap() {
            assert_eq!(h.total, h.acoustic + 3.0 * h.lm);
        }
    }

    #[test]
    fn argument_errors() {
        let u = units();
        let mut g = toy_graph(&u);
        let em = frames(&u, &["a", "b"], 2.0);
        let bad = |beam, nbest| DecodeConfig {
            beam,
            nbest,
            lm_scale: 1.0,
        };
        assert_eq!(decode(&mut g, &em, &bad(0.0, 1)), Err(DecodeError::InvalidBeam(0.0)));
        assert_eq!(decode(&mut g, &em, &bad(1.0, 0)), Err(DecodeError::ZeroNbest));
        let empty = EmissionSequence::new(u.clone(), vec![]).unwrap();
        assert_eq!(decode(&mut g, &empty, &bad(1.0, 1)), Err(DecodeError::EmptyEmissions));
        let other = Arc::new(SymbolTable::from_symbols(["a", "b", "z"]));
        let em2 = frames(&other, &["a"], 2.0);
        assert_eq!(decode(&mut g, &em2, &bad(1.0, 1)), Err(DecodeError::UnitMismatch));
    }

    #[test]
    fn running_out_of_arcs_reports_the_frame() {
        let u = units();
        let mut g = toy_graph(&u);
        let em = frames(&u, &["a", "b", "b"], 2.0);
        assert_eq!(
            decode(&mut g, &em, &DecodeConfig::default()),
            Err(DecodeError::EmptyBeam { frame: 2 })
        );
    }

    #[test]
    fn emission_validation_and_round_trip() {
        let u = units();
        let em = frames(&u, &["b", "a", "c"], 7.0);
        let back = EmissionSequence::from_text(&em.to_text(), u.clone()).unwrap();
        assert_eq!(back, em);
        assert!(EmissionSequence::new(u.clone(), vec![vec![-1.0, -1.0, -1.0]]).is_err());
        assert!(EmissionSequence::new(u.clone(), vec![vec![0.0, 0.0]]).is_err());
        let other = Arc::new(SymbolTable::from_symbols(["q", "b", "c"]));
        assert_eq!(
            EmissionSequence::from_text(&em.to_text(), other),
            Err(DecodeError::UnitMismatch)
        );
    }

    #[test]
    fn nbest_text_round_trip() {
        let list = NBestList {
            utt_id: "u1".into(),
            province: Some(19),
            hyps: vec![
                Hypothesis {
                    words: vec!["北京".into(), "大学".into()],
                    total: 3.25,
                    acoustic: 1.0,
                    lm: 2.25,
                    word_lm_costs: vec![1.0, 1.0, 0.25],
                },
                Hypothesis {
                    words: vec![],
                    total: 0.1 + 0.2,
                    acoustic: 0.0,
                    lm: 0.1 + 0.2,
                    word_lm_costs: vec![],
                },
            ],
        };
        let mut text = list.to_text();
        let other = NBestList {
            utt_id: "u2".into(),
            province: None,
            hyps: vec![list.hyps[0].clone()],
        };
        text.push_str(&other.to_text());
        assert_eq!(NBestList::parse_many(&text).unwrap(), vec![list.clone(), other.clone()]);
        let shuffled = format!("{}{}{}", other.to_text(), list.to_text(), other.to_text());
        assert!(NBestList::parse_many(&shuffled).is_err());
    }

    #[test]
    fn insert_keeps_distinct_sorted_sequences() {
        let mut h = Histories::new();
        let mut tok = |total: f64, words: &[Label]| Token {
            total,
            ac: 0.0,
            lm: total,
            hist: words.iter().fold(0, |p, &w| h.push(p, w)),
        };
        let toks = [tok(2.0, &[1]), tok(1.0, &[2]), tok(3.0, &[1]), tok(0.5, &[1]), tok(4.0, &[3])];
        let mut l = Vec::new();
        let inserted: Vec<bool> = toks.iter().map(|&t| insert(&mut l, t, 2, &h)).collect();
        assert_eq!(inserted, [true, true, false, true, false]);
        let got: Vec<_> = l.iter().map(|t| (t.total, h.words(t.hist))).collect();
        assert_eq!(got, vec![(0.5, vec![1]), (1.0, vec![2])]);
    }

    #[test]
    fn equal_costs_break_ties_by_word_sequence() {
        let mut h = Histories::new();
        let two = h.push(0, 2);
        let a = h.push(two, 1);
        let b = h.push(0, 2);
        let c = h.push(0, 1);
        assert_eq!(h.push(0, 2), b);
        assert_eq!(h.cmp(a, b), Ordering::Greater);
        assert_eq!(h.cmp(c, b), Ordering::Less);
        assert_eq!(h.words(a), vec![2, 1]);
    }
}
