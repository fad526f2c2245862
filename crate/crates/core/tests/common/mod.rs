#![allow(dead_code)]

use std::collections::HashMap;
use std::sync::Arc;

use geoasr::decoder::EmissionSequence;
use geoasr::graph::{self, Lexicon};
use geoasr::ngram::{train, NGramModel};
use geoasr::wfst::{Label, StateId, SymbolTable, Transition, Weight, Wfst, EPSILON};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Backoff evaluation read straight from ARPA text.
pub struct NaiveArpa {
    order: usize,
    table: HashMap<Vec<String>, (f64, f64)>,
}

impl NaiveArpa {
    pub fn parse(text: &str) -> NaiveArpa {
        let mut table = HashMap::new();
        let mut order = 0;
        let mut current = 0;
        for line in text.lines() {
            let line = line.trim();
            if let Some(rest) = line.strip_prefix('\\').and_then(|l| l.strip_suffix("-grams:")) {
                current = rest.parse().unwrap();
                order = order.max(current);
                continue;
            }
            if current == 0 || line.is_empty() || line.starts_with('\\') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let lp: f64 = fields[0].parse().unwrap();
            let words: Vec<String> = fields[1..=current].iter().map(|s| s.to_string()).collect();
            let bo = fields.get(current + 1).map_or(0.0, |b| b.parse().unwrap());
            table.insert(words, (lp, bo));
        }
        NaiveArpa { order, table }
    }

    pub fn logprob(&self, word: &str, history: &[&str]) -> f64 {
        let h = &history[history.len().saturating_sub(self.order - 1)..];
        self.backoff(word, h)
    }

    fn backoff(&self, word: &str, h: &[&str]) -> f64 {
        let mut key: Vec<String> = h.iter().map(|s| s.to_string()).collect();
        key.push(word.to_string());
        if let Some(&(lp, _)) = self.table.get(&key) {
            return lp;
        }
        if h.is_empty() {
            return -99.0;
        }
        key.pop();
        let bo = self.table.get(&key).map_or(0.0, |e| e.1);
        bo + self.backoff(word, &h[1..])
    }
}

/// Grid for oracle inputs: sums of a few hundred multiples of 2^-24 below
/// 2^10 are exact in f64, so the order of additions cannot matter.
pub const GRID: f64 = 1.0 / (1u64 << 24) as f64;

pub fn on_grid(v: f64) -> f64 {
    (v / GRID).round() * GRID
}

/// Random log-softmax frames, each value rounded to the grid.
pub fn random_emissions(rng: &mut ChaCha8Rng, units: &Arc<SymbolTable>, frames: usize, scale: f64) -> EmissionSequence {
    let n = units.len() - 1;
    let rows = (0..frames)
        .map(|_| {
            let raw: Vec<f64> = (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
            let m = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z = raw.iter().map(|v| (v - m).exp()).sum::<f64>().ln() + m;
            raw.iter().map(|v| on_grid(v - z)).collect()
        })
        .collect();
    EmissionSequence::new(units.clone(), rows).unwrap()
}

/// Frames peaked on the units of `transcript`.
pub fn peaked_emissions(units: &Arc<SymbolTable>, transcript: &[&str], sharp: f64) -> EmissionSequence {
    let n = units.len() - 1;
    let rows = transcript
        .iter()
        .map(|u| {
            let k = units.get(u).unwrap() as usize - 1;
            let raw: Vec<f64> = (0..n).map(|j| if j == k { sharp } else { 1.0 }).collect();
            let z: f64 = raw.iter().sum();
            raw.iter().map(|v| (v / z).ln()).collect()
        })
        .collect();
    EmissionSequence::new(units.clone(), rows).unwrap()
}

/// Best cost of every output sequence readable with exactly one unit per
/// frame, sorted by (cost, labels). Costs are summed in path order: acoustic
/// and graph costs separately, then added, with lm scale 1.
pub fn exhaustive_search(g: &Wfst, em: &EmissionSequence) -> (Vec<(f64, Vec<Label>)>, usize) {
    let mut best: HashMap<Vec<Label>, f64> = HashMap::new();
    let mut paths = 0;
    let mut out = Vec::new();
    walk(g, em, g.start(), 0, 0.0, 0.0, &mut out, &mut best, &mut paths);
    let mut list: Vec<(f64, Vec<Label>)> = best.into_iter().map(|(w, c)| (c, w)).collect();
    list.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
    (list, paths)
}

#[allow(clippy::too_many_arguments)]
fn walk(
    g: &Wfst,
    em: &EmissionSequence,
    s: StateId,
    t: usize,
    ac: f64,
    lm: f64,
    out: &mut Vec<Label>,
    best: &mut HashMap<Vec<Label>, f64>,
    paths: &mut usize,
) {
    if t == em.num_frames() && g.is_final(s) {
        *paths += 1;
        let total = ac + (lm + g.final_weight(s).0);
        let e = best.entry(out.clone()).or_insert(f64::INFINITY);
        if total < *e {
            *e = total;
        }
    }
    for a in g.arcs(s) {
        let (t2, ac2) = if a.ilabel == EPSILON {
            (t, ac)
        } else if t < em.num_frames() {
            (t + 1, ac + em.cost(t, a.ilabel))
        } else {
            continue;
        };
        if a.olabel != EPSILON {
            out.push(a.olabel);
        }
        walk(g, em, a.next, t2, ac2, lm + a.weight.0, out, best, paths);
        if a.olabel != EPSILON {
            out.pop();
        }
    }
}

/// Random graph whose epsilon-input arcs only move forward, so every path
/// reads a unit within `states` steps. Costs lie on the grid.
pub fn random_graph(rng: &mut ChaCha8Rng, units: &Arc<SymbolTable>, words: &Arc<SymbolTable>, states: usize, arcs: usize) -> Wfst {
    let mut g = Wfst::new(units.clone(), words.clone());
    for _ in 1..states {
        g.add_state();
    }
    for _ in 0..arcs {
        let src = rng.gen_range(0..states) as StateId;
        let eps = rng.gen_bool(0.2) && (src as usize) + 1 < states;
        let (ilabel, next) = if eps {
            (EPSILON, rng.gen_range(src as usize + 1..states) as StateId)
        } else {
            (
                rng.gen_range(1..units.len()) as Label,
                rng.gen_range(0..states) as StateId,
            )
        };
        let olabel = if rng.gen_bool(0.6) {
            rng.gen_range(1..words.len()) as Label
        } else {
            EPSILON
        };
        let w = on_grid(rng.gen::<f64>() * 3.0);
        g.add_arc(src, Transition::new(ilabel, olabel, w, next));
    }
    for s in 0..states {
        if rng.gen_bool(0.4) {
            g.set_final(s as StateId, Weight(on_grid(rng.gen::<f64>())));
        }
    }
    g
}

/// Small recognition setup: a lexicon over a handful of units, a 5-gram
/// baseline over random sentences and a regional model over a skewed subset.
pub struct ToySetup {
    pub lexicon: Lexicon,
    pub words: Arc<SymbolTable>,
    pub units: Arc<SymbolTable>,
    pub base: Arc<NGramModel>,
    pub geo: Arc<NGramModel>,
    pub bigram: Arc<NGramModel>,
    pub lexicon_fst: Wfst,
    pub static_part: Wfst,
}

pub fn toy_setup(rng: &mut ChaCha8Rng, vocab: usize, sentences: usize) -> ToySetup {
    let unit_names: Vec<String> = (0..8).map(|i| format!("u{i}")).collect();
    let mut lexicon = Lexicon::new();
    let names: Vec<String> = (0..vocab).map(|i| format!("w{i:02}")).collect();
    for w in &names {
        let len = rng.gen_range(1..=3);
        let pron: Vec<&str> = (0..len).map(|_| unit_names[rng.gen_range(0..8)].as_str()).collect();
        lexicon.add(w, &pron).unwrap();
    }
    let draw = |rng: &mut ChaCha8Rng, skew: usize| -> Vec<String> {
        let len = rng.gen_range(1..=5);
        (0..len)
            .map(|_| {
                let r = rng.gen_range(0..vocab);
                names[(r * skew.max(1)) % vocab].clone()
            })
            .collect()
    };
    let base_corpus: Vec<Vec<String>> = (0..sentences).map(|_| draw(rng, 1)).collect();
    let mut geo_corpus: Vec<Vec<String>> = (0..sentences / 3).map(|_| draw(rng, 3)).collect();
    geo_corpus.extend(base_corpus.iter().take(sentences / 10).cloned());
    let base = Arc::new(train(&base_corpus, 5, &[0, 0, 0, 1, 1]).unwrap());
    let geo = Arc::new(train(&geo_corpus, 3, &[0, 0, 0]).unwrap());
    let bigram = Arc::new(base.make_bigram_subset().unwrap());
    let words = Arc::new(lexicon.word_symbols());
    let units = Arc::new(lexicon.unit_symbols());
    let lexicon_fst = graph::build_lexicon_fst(&lexicon).unwrap();
    let g_bi = graph::ngram_to_fst(&bigram, &words).unwrap();
    let static_part = graph::build_static_part(&lexicon_fst, &g_bi).unwrap();
    ToySetup {
        lexicon,
        words,
        units,
        base,
        geo,
        bigram,
        lexicon_fst,
        static_part,
    }
}

impl ToySetup {
    /// Unit transcript of a word sequence, first pronunciation of each word.
    pub fn transcript(&self, words: &[&str]) -> Vec<String> {
        words
            .iter()
            .flat_map(|w| self.lexicon.pronunciations(w)[0].clone())
            .collect()
    }

    pub fn random_sentence(&self, rng: &mut ChaCha8Rng, max_len: usize) -> Vec<String> {
        let all: Vec<&str> = self.lexicon.words().collect();
        let len = rng.gen_range(1..=max_len);
        (0..len).map(|_| all[rng.gen_range(0..all.len())].to_string()).collect()
    }
}

/// Largest relative disagreement between back-propagated and central
/// finite-difference gradients, per parameter group. Relative errors are
/// taken against max(|analytic|, |numeric|, floor).
pub fn gradient_check(model: &geoasr::geoam_toy::ToyGeoAm, batch: &geoasr::geoam_toy::ToyBatch, eps: f64, floor: f64) -> Vec<(String, f64)> {
    let (_, grad) = model.gradient(batch).unwrap();
    let mut probe = model.clone();
    geoasr::geoam_toy::group_names()
        .into_iter()
        .map(|g| {
            let mut worst: f64 = 0.0;
            for i in 0..model.num_params(&g).unwrap() {
                let v = model.param(&g, i).unwrap();
                probe.set_param(&g, i, v + eps).unwrap();
                let up = probe.loss(batch).unwrap();
                probe.set_param(&g, i, v - eps).unwrap();
                let down = probe.loss(batch).unwrap();
                probe.set_param(&g, i, v).unwrap();
                let numeric = (up - down) / (2.0 * eps);
                let analytic = grad.param(&g, i).unwrap();
                let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor);
                worst = worst.max(rel);
            }
            (g, worst)
        })
        .collect()
}
