//! Synthetic data: POI corpora with long-tailed frequencies and injected
//! homophones, and simulated acoustic unit posteriors with region-specific
//! confusions.
//!
//! Units are toy syllables and every character is pronounced as exactly one
//! unit, so a word's pronunciation is the unit sequence of its characters.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::str::FromStr;
use std::sync::Arc;

use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decoder::EmissionSequence;
use crate::geoam_toy::ToyBatch;
use crate::georegistry::{DialectRegion, ProvinceId, ProvinceTable, NUM_REGIONS};
use crate::graph::Lexicon;
use crate::wfst::{Label, SymbolTable};

#[derive(Debug, Error, PartialEq)]
pub enum AmsimError {
    #[error("homophone rate {0} is outside [0, 1]")]
    InvalidRate(f64),
    #[error("tail exponent {0} must be positive")]
    InvalidExponent(f64),
    #[error("temperature {0} must be positive")]
    InvalidTemperature(f64),
    #[error("invalid corpus config: {0}")]
    InvalidConfig(String),
    #[error("unknown unit '{0}'")]
    UnknownUnit(String),
    #[error("province {0} is not in the province table")]
    UnknownProvince(u32),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

const INITIALS: [&str; 12] = ["b", "p", "m", "f", "d", "t", "n", "l", "g", "k", "h", "zh"];
const FINALS: [&str; 5] = ["a", "i", "u", "an", "ong"];
const CHARS_PER_UNIT: usize = 6;

/// The 60 toy syllables.
pub fn unit_inventory() -> Vec<String> {
    INITIALS
        .iter()
        .flat_map(|i| FINALS.iter().map(move |f| format!("{i}{f}")))
        .collect()
}

/// The k-th character pronounced as syllable `unit`.
fn character(unit: usize, k: usize) -> char {
    let idx = (unit * CHARS_PER_UNIT + k) as u32;
    char::from_u32(0x4E00 + idx * 53).expect("inside the CJK block")
}

/// Unit pronounced by `c`, if `c` is one of the generated characters.
pub fn unit_of_char(c: char) -> Option<String> {
    let off = (c as u32).checked_sub(0x4E00)?;
    if off % 53 != 0 {
        return None;
    }
    let unit = (off / 53) as usize / CHARS_PER_UNIT;
    unit_inventory().get(unit).cloned()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AccentLevel {
    None,
    Slight,
    Medium,
    Serious,
}

impl AccentLevel {
    pub const ALL: [AccentLevel; 4] = [
        AccentLevel::None,
        AccentLevel::Slight,
        AccentLevel::Medium,
        AccentLevel::Serious,
    ];

    /// Probability mass moved off the diagonal of each confusion row.
    pub fn off_diagonal_mass(self) -> f64 {
        match self {
            AccentLevel::None => 0.0,
            AccentLevel::Slight => 0.08,
            AccentLevel::Medium => 0.16,
            AccentLevel::Serious => 0.3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AccentLevel::None => "none",
            AccentLevel::Slight => "slight",
            AccentLevel::Medium => "medium",
            AccentLevel::Serious => "serious",
        }
    }
}

impl FromStr for AccentLevel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AccentLevel::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| format!("unknown accent level '{s}'"))
    }
}

/// Split of the off-diagonal mass over each unit's confusable neighbours.
const NEIGHBOUR_SHARES: [f64; 3] = [0.5, 0.3, 0.2];

/// Row-stochastic unit confusion matrices, one per dialect region. Each
/// region confuses every unit with three region-specific neighbours; the
/// accent level sets how much mass leaves the diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionModel {
    num_units: usize,
    level: AccentLevel,
    neighbours: Vec<Vec<[usize; 3]>>,
}

impl ConfusionModel {
    /// Neighbour sets depend only on `seed` and the region, never on the
    /// level, so levels differ only in mass.
    pub fn new(num_units: usize, level: AccentLevel, seed: u64) -> Self {
        let neighbours = (0..NUM_REGIONS as u64)
            .map(|r| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (r + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
                (0..num_units)
                    .map(|i| {
                        let others: Vec<usize> = (0..num_units).filter(|&j| j != i).collect();
                        let pick: Vec<usize> = others
                            .choose_multiple(&mut rng, 3.min(others.len()))
                            .copied()
                            .collect();
                        let mut n = [i; 3];
                        n[..pick.len()].copy_from_slice(&pick);
                        n
                    })
                    .collect()
            })
            .collect();
        ConfusionModel {
            num_units,
            level,
            neighbours,
        }
    }

    pub fn level(&self) -> AccentLevel {
        self.level
    }

    pub fn num_units(&self) -> usize {
        self.num_units
    }

    /// Confusion row of unit index `unit` (0-based) in `region`.
    pub fn row(&self, region: DialectRegion, unit: usize) -> Vec<f64> {
        let m = self.level.off_diagonal_mass();
        let mut row = vec![0.0; self.num_units];
        row[unit] = 1.0 - m;
        for (&j, share) in self.neighbours[region.index()][unit].iter().zip(NEIGHBOUR_SHARES) {
            row[j] += m * share;
        }
        row
    }
}

/// Shape of the simulated posteriors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmissionNoise {
    /// Posteriors are sharpened (< 1) or flattened (> 1) by this temperature.
    pub temperature: f64,
    /// Standard deviation of the Gaussian perturbation of log scores.
    pub sigma: f64,
    /// Added to every confusion probability before taking logs.
    pub floor: f64,
}

impl Default for EmissionNoise {
    fn default() -> Self {
        EmissionNoise {
            temperature: 1.0,
            sigma: 2.0,
            floor: 1e-3,
        }
    }
}

/// One frame per transcript unit. The frame's log scores are
/// ln(row + floor) + σ·z for the true unit's confusion row and standard
/// normal z, divided by the temperature and renormalized.
pub fn synthesize_emissions<S: AsRef<str>>(
    transcript: &[S],
    units: &Arc<SymbolTable>,
    confusion: &ConfusionModel,
    region: DialectRegion,
    noise: &EmissionNoise,
    seed: u64,
) -> Result<EmissionSequence, AmsimError> {
    if !(noise.temperature > 0.0) {
        return Err(AmsimError::InvalidTemperature(noise.temperature));
    }
    let n = units.len() - 1;
    assert_eq!(n, confusion.num_units(), "confusion model built for another inventory");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut frames = Vec::with_capacity(transcript.len());
    for u in transcript {
        let label = units
            .get(u.as_ref())
            .filter(|&l| l != 0)
            .ok_or_else(|| AmsimError::UnknownUnit(u.as_ref().to_string()))?;
        let row = confusion.row(region, label as usize - 1);
        let scores: Vec<f64> = row
            .iter()
            .map(|p| {
                let z: f64 = rng.sample(StandardNormal);
                ((p + noise.floor).ln() + noise.sigma * z) / noise.temperature
            })
            .collect();
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
        frames.push(scores.iter().map(|s| (s - lse).min(0.0)).collect());
    }
    Ok(EmissionSequence::new(units.clone(), frames).expect("frames are normalized"))
}

/// Deterministic per-utterance seed.
pub fn utterance_seed(seed: u64, utt_id: &str) -> u64 {
    // FNV-1a
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed;
    for b in utt_id.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Province ids of the default benchmark: one province per dialect region.
pub const BENCHMARK_PROVINCES: [u32; 10] = [11, 23, 15, 6, 19, 27, 17, 13, 1, 9];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub provinces: Vec<u32>,
    /// Distinct POI names per province.
    pub sizes: Vec<usize>,
    /// Probability that a local word gets a homophone twin in another province.
    pub homophone_rate: f64,
    /// Rank-frequency exponent s in f(r) ∝ r^(−s).
    pub tail_exponent: f64,
    /// Frequency of the top name, as a multiple of the province size.
    pub frequency_scale: f64,
    pub seed: u64,
    pub local_words: usize,
    pub shared_words: usize,
    pub categories: usize,
    pub test_per_province: usize,
    pub dev_per_province: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            provinces: BENCHMARK_PROVINCES.to_vec(),
            sizes: vec![300, 400, 500, 600, 700, 800, 1000, 1200, 1500, 2000],
            homophone_rate: 0.1,
            tail_exponent: 1.0,
            frequency_scale: 4.0,
            seed: 7,
            local_words: 40,
            shared_words: 30,
            categories: 16,
            test_per_province: 200,
            dev_per_province: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoiEntry {
    pub province: ProvinceId,
    pub words: Vec<String>,
    pub frequency: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestUtterance {
    pub id: String,
    pub province: ProvinceId,
    pub lat: f64,
    pub lon: f64,
    pub words: Vec<String>,
}

impl TestUtterance {
    pub fn reference(&self) -> String {
        self.words.concat()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub lexicon: Lexicon,
    pub entries: Vec<PoiEntry>,
    pub dev: Vec<TestUtterance>,
    pub test: Vec<TestUtterance>,
    /// Words sharing a unit sequence, each group sorted.
    pub homophone_groups: Vec<Vec<String>>,
}

impl SyntheticCorpus {
    pub fn provinces(&self) -> Vec<ProvinceId> {
        let mut p: Vec<ProvinceId> = self.entries.iter().map(|e| e.province).collect();
        p.sort();
        p.dedup();
        p
    }

    pub fn entries_of(&self, p: ProvinceId) -> impl Iterator<Item = &PoiEntry> {
        self.entries.iter().filter(move |e| e.province == p)
    }

    pub fn homophone_words(&self) -> HashSet<&str> {
        self.homophone_groups
            .iter()
            .flatten()
            .map(String::as_str)
            .collect()
    }
}

struct WordMaker {
    used_units: HashSet<Vec<usize>>,
    used_text: HashSet<String>,
}

impl WordMaker {
    fn make(&mut self, rng: &mut ChaCha8Rng, len: usize) -> (String, Vec<usize>) {
        loop {
            let units: Vec<usize> = (0..len).map(|_| rng.gen_range(0..INITIALS.len() * FINALS.len())).collect();
            let text: String = units
                .iter()
                .map(|&u| character(u, rng.gen_range(0..CHARS_PER_UNIT)))
                .collect();
            if !self.used_units.contains(&units) && !self.used_text.contains(&text) {
                self.used_units.insert(units.clone());
                self.used_text.insert(text.clone());
                return (text, units);
            }
        }
    }

    /// Same units, different characters at every position.
    fn twin(&mut self, rng: &mut ChaCha8Rng, text: &str, units: &[usize]) -> String {
        loop {
            let t: String = text
                .chars()
                .zip(units)
                .map(|(c, &u)| loop {
                    let d = character(u, rng.gen_range(0..CHARS_PER_UNIT));
                    if d != c {
                        break d;
                    }
                })
                .collect();
            if self.used_text.insert(t.clone()) {
                return t;
            }
        }
    }
}

/// Least-squares slope of log frequency against log rank, frequencies
/// sorted in decreasing order.
pub fn rank_frequency_slope(freqs: &[u64]) -> f64 {
    let mut f: Vec<u64> = freqs.to_vec();
    f.sort_unstable_by(|a, b| b.cmp(a));
    let pts: Vec<(f64, f64)> = f
        .iter()
        .enumerate()
        .map(|(r, &v)| (((r + 1) as f64).ln(), (v as f64).ln()))
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

fn validate(cfg: &CorpusConfig, table: &ProvinceTable) -> Result<(), AmsimError> {
    if !(0.0..=1.0).contains(&cfg.homophone_rate) {
        return Err(AmsimError::InvalidRate(cfg.homophone_rate));
    }
    if !(cfg.tail_exponent > 0.0 && cfg.tail_exponent.is_finite()) {
        return Err(AmsimError::InvalidExponent(cfg.tail_exponent));
    }
    let invalid = |m: &str| Err(AmsimError::InvalidConfig(m.to_string()));
    if cfg.provinces.is_empty() || cfg.provinces.len() != cfg.sizes.len() {
        return invalid("provinces and sizes must be non-empty and of equal length");
    }
    if cfg.sizes.iter().any(|&s| s == 0) {
        return invalid("sizes must be at least 1");
    }
    if cfg.local_words == 0 || cfg.categories == 0 {
        return invalid("local_words and categories must be at least 1");
    }
    if !(cfg.frequency_scale >= 1.0) {
        return invalid("frequency_scale must be at least 1");
    }
    let mut seen = HashSet::new();
    for &p in &cfg.provinces {
        if table.get(ProvinceId(p)).is_none() {
            return Err(AmsimError::UnknownProvince(p));
        }
        if !seen.insert(p) {
            return invalid("duplicate province");
        }
    }
    let capacity = cfg.local_words * (cfg.shared_words + 1) * cfg.categories;
    if let Some(&s) = cfg.sizes.iter().find(|&&s| s as f64 > 0.7 * capacity as f64) {
        return Err(AmsimError::InvalidConfig(format!(
            "size {s} is too close to the {capacity} distinct names the word lists allow"
        )));
    }
    Ok(())
}

/// Generates the corpus, lexicon and dev/test utterances, reproducibly from
/// `cfg.seed`.
///
/// Each province has its own local words; core words and category words
/// are shared. A POI name is local word, optional core word, category.
/// With probability `homophone_rate` a local word gets a twin written with
/// different characters but pronounced identically, which becomes a local
/// word of another province. Names are ranked at random and the name of
/// rank r gets frequency round(scale · size · r^(−s)), at least 1.
/// Utterances are drawn per province with probability ∝ frequency^0.5.
pub fn generate_corpus(cfg: &CorpusConfig, table: &ProvinceTable) -> Result<SyntheticCorpus, AmsimError> {
    validate(cfg, table)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let inventory = unit_inventory();
    let mut maker = WordMaker {
        used_units: HashSet::new(),
        used_text: HashSet::new(),
    };
    let mut lexicon = Lexicon::new();
    let add = |lex: &mut Lexicon, text: &str, units: &[usize]| {
        let u: Vec<&str> = units.iter().map(|&i| inventory[i].as_str()).collect();
        lex.add(text, &u).expect("non-empty pronunciation");
    };

    let categories: Vec<String> = (0..cfg.categories)
        .map(|i| {
            let (t, u) = maker.make(&mut rng, if i % 4 == 0 { 1 } else { 2 });
            add(&mut lexicon, &t, &u);
            t
        })
        .collect();
    let shared: Vec<String> = (0..cfg.shared_words)
        .map(|_| {
            let (t, u) = maker.make(&mut rng, 2);
            add(&mut lexicon, &t, &u);
            t
        })
        .collect();
    let mut local: Vec<Vec<String>> = Vec::new();
    let mut local_units: Vec<Vec<Vec<usize>>> = Vec::new();
    for _ in &cfg.provinces {
        let mut words = Vec::new();
        let mut units = Vec::new();
        for _ in 0..cfg.local_words {
            let len = rng.gen_range(2..=3);
            let (t, u) = maker.make(&mut rng, len);
            add(&mut lexicon, &t, &u);
            words.push(t);
            units.push(u);
        }
        local.push(words);
        local_units.push(units);
    }
    let np = cfg.provinces.len();
    if np > 1 {
        for p in 0..np {
            for i in 0..cfg.local_words {
                if !rng.gen_bool(cfg.homophone_rate) {
                    continue;
                }
                let q = (p + rng.gen_range(1..np)) % np;
                let text = local[p][i].clone();
                let units = local_units[p][i].clone();
                let twin = maker.twin(&mut rng, &text, &units);
                add(&mut lexicon, &twin, &units);
                local[q].push(twin);
            }
        }
    }

    let mut entries = Vec::new();
    let mut by_province: Vec<Vec<(Vec<String>, u64)>> = Vec::new();
    for (pi, (&pid, &size)) in cfg.provinces.iter().zip(&cfg.sizes).enumerate() {
        let mut names: Vec<Vec<String>> = Vec::with_capacity(size);
        let mut seen = HashSet::new();
        while names.len() < size {
            let mut name = vec![local[pi].choose(&mut rng).unwrap().clone()];
            if !shared.is_empty() && rng.gen_bool(0.5) {
                name.push(shared.choose(&mut rng).unwrap().clone());
            }
            name.push(categories.choose(&mut rng).unwrap().clone());
            if seen.insert(name.clone()) {
                names.push(name);
            }
        }
        let top = cfg.frequency_scale * size as f64;
        let list: Vec<(Vec<String>, u64)> = names
            .into_iter()
            .enumerate()
            .map(|(r, n)| {
                let f = (top * ((r + 1) as f64).powf(-cfg.tail_exponent)).round().max(1.0);
                (n, f as u64)
            })
            .collect();
        for (words, frequency) in &list {
            entries.push(PoiEntry {
                province: ProvinceId(pid),
                words: words.clone(),
                frequency: *frequency,
            });
        }
        by_province.push(list);
    }

    let sample = |split: &str, per: usize, rng: &mut ChaCha8Rng| -> Vec<TestUtterance> {
        let mut out = Vec::new();
        for (pi, &pid) in cfg.provinces.iter().enumerate() {
            let list = &by_province[pi];
            let weights: Vec<f64> = list.iter().map(|(_, f)| (*f as f64).sqrt()).collect();
            let dist = WeightedIndex::new(&weights).expect("positive weights");
            let (clat, clon) = table.interior_point(ProvinceId(pid)).expect("validated province");
            for i in 0..per {
                let words = list[dist.sample(rng)].0.clone();
                let (mut lat, mut lon) = (clat + rng.gen_range(-0.2..0.2), clon + rng.gen_range(-0.2..0.2));
                if table.resolve(lat, lon).province != ProvinceId(pid) {
                    (lat, lon) = (clat, clon);
                }
                out.push(TestUtterance {
                    id: format!("{split}-{pid:02}-{i:04}"),
                    province: ProvinceId(pid),
                    lat,
                    lon,
                    words,
                });
            }
        }
        out
    };
    let dev = sample("dev", cfg.dev_per_province, &mut rng);
    let test = sample("test", cfg.test_per_province, &mut rng);
    let homophone_groups = lexicon.homophone_groups();
    Ok(SyntheticCorpus {
        lexicon,
        entries,
        dev,
        test,
        homophone_groups,
    })
}

fn parse_err(line: usize, msg: impl Into<String>) -> AmsimError {
    AmsimError::Parse {
        line: line + 1,
        msg: msg.into(),
    }
}

/// `province<TAB>poi_name<TAB>frequency`, words of the name separated by spaces.
pub fn corpus_to_text(entries: &[PoiEntry]) -> String {
    let mut out = String::new();
    for e in entries {
        let _ = writeln!(out, "{}\t{}\t{}", e.province, e.words.join(" "), e.frequency);
    }
    out
}

pub fn parse_corpus(text: &str) -> Result<Vec<PoiEntry>, AmsimError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 3 {
            return Err(parse_err(i, "expected province<TAB>poi_name<TAB>frequency"));
        }
        let province = f[0].parse().map_err(|_| parse_err(i, "bad province id"))?;
        let frequency = f[2].parse().map_err(|_| parse_err(i, "bad frequency"))?;
        let words: Vec<String> = f[1].split_whitespace().map(String::from).collect();
        if words.is_empty() {
            return Err(parse_err(i, "empty POI name"));
        }
        out.push(PoiEntry {
            province: ProvinceId(province),
            words,
            frequency,
        });
    }
    Ok(out)
}

/// `utt_id<TAB>province<TAB>lat<TAB>lon<TAB>reference`, reference words
/// separated by spaces.
pub fn manifest_to_text(utts: &[TestUtterance]) -> String {
    let mut out = String::new();
    for u in utts {
        let _ = writeln!(out, "{}\t{}\t{}\t{}\t{}", u.id, u.province, u.lat, u.lon, u.words.join(" "));
    }
    out
}

pub fn parse_manifest(text: &str) -> Result<Vec<TestUtterance>, AmsimError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 5 {
            return Err(parse_err(i, "expected utt_id<TAB>province<TAB>lat<TAB>lon<TAB>reference"));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| parse_err(i, format!("bad coordinate '{s}'")));
        out.push(TestUtterance {
            id: f[0].to_string(),
            province: ProvinceId(f[1].parse().map_err(|_| parse_err(i, "bad province id"))?),
            lat: num(f[2])?,
            lon: num(f[3])?,
            words: f[4].split_whitespace().map(String::from).collect(),
        });
    }
    Ok(out)
}

/// Unit sequence of a word sequence under its first pronunciations.
pub fn transcript_units(lexicon: &Lexicon, words: &[String]) -> Option<Vec<String>> {
    let mut out = Vec::new();
    for w in words {
        out.extend(lexicon.pronunciations(w).first()?.iter().cloned());
    }
    Some(out)
}

/// Number of distinct POI names per province.
pub fn names_per_province(entries: &[PoiEntry]) -> BTreeMap<ProvinceId, usize> {
    let mut m = BTreeMap::new();
    for e in entries {
        *m.entry(e.province).or_insert(0) += 1;
    }
    m
}

/// Units used by `lexicon`, as a symbol table, with a confusion model over them.
pub fn confusion_for(lexicon: &Lexicon, level: AccentLevel, seed: u64) -> (Arc<SymbolTable>, ConfusionModel) {
    let units = Arc::new(lexicon.unit_symbols());
    let conf = ConfusionModel::new(units.len() - 1, level, seed);
    (units, conf)
}

/// Labels of a unit transcript.
pub fn unit_labels<S: AsRef<str>>(units: &SymbolTable, transcript: &[S]) -> Result<Vec<Label>, AmsimError> {
    transcript
        .iter()
        .map(|u| {
            units
                .get(u.as_ref())
                .ok_or_else(|| AmsimError::UnknownUnit(u.as_ref().to_string()))
        })
        .collect()
}

/// Map from each word to the index of its homophone group.
pub fn homophone_index(groups: &[Vec<String>]) -> HashMap<String, usize> {
    groups
        .iter()
        .enumerate()
        .flat_map(|(i, g)| g.iter().map(move |w| (w.clone(), i)))
        .collect()
}

/// Frame classification task for the toy acoustic model. Every unit has a
/// prototype feature vector; each dialect region shifts every prototype by
/// its own accent offset, and samples add isotropic Gaussian noise.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyTask {
    prototypes: Vec<Vec<f64>>,
    shifts: Vec<Vec<Vec<f64>>>,
    noise: f64,
}

impl ToyTask {
    pub fn new(dim: usize, units: usize, accent: f64, noise: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut gauss = |scale: f64, n: usize| -> Vec<f64> {
            (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
        };
        let prototypes = (0..units).map(|_| gauss(1.0, dim)).collect();
        let shifts = (0..NUM_REGIONS)
            .map(|_| (0..units).map(|_| gauss(accent, dim)).collect())
            .collect();
        ToyTask {
            prototypes,
            shifts,
            noise,
        }
    }

    pub fn dim(&self) -> usize {
        self.prototypes[0].len()
    }

    pub fn units(&self) -> usize {
        self.prototypes.len()
    }

    /// `per_region` samples for each region in `regions`, labels uniform.
    pub fn sample(&self, regions: &[DialectRegion], per_region: usize, seed: u64) -> ToyBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut features, mut labels, mut regs) = (Vec::new(), Vec::new(), Vec::new());
        for &r in regions {
            for _ in 0..per_region {
                let u = rng.gen_range(0..self.units());
                let x = self.prototypes[u]
                    .iter()
                    .zip(&self.shifts[r.index()][u])
                    .map(|(p, s)| p + s + self.noise * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                features.push(x);
                labels.push(u);
                regs.push(r);
            }
        }
        ToyBatch::new(features, labels, regs).expect("consistent by construction")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(rate: f64, seed: u64) -> CorpusConfig {
        CorpusConfig {
            provinces: vec![11, 19, 1],
            sizes: vec![200, 150, 100],
            homophone_rate: rate,
            seed,
            test_per_province: 10,
            dev_per_province: 2,
            ..Default::default()
        }
    }

    #[test]
    fn inventory_and_characters() {
        let inv = unit_inventory();
        assert_eq!(inv.len(), 60);
        let distinct: HashSet<_> = inv.iter().collect();
        assert_eq!(distinct.len(), 60);
        for u in 0..60 {
            for k in 0..CHARS_PER_UNIT {
                assert_eq!(unit_of_char(character(u, k)).as_deref(), Some(inv[u].as_str()));
            }
        }
        assert_eq!(unit_of_char('a'), None);
    }

    #[test]
    fn confusion_rows_are_stochastic_and_ordered() {
        let mut last = -1.0;
        for level in AccentLevel::ALL {
            let c = ConfusionModel::new(20, level, 3);
            let mut off = 0.0;
            for r in 1..=10 {
                for u in 0..20 {
                    let row = c.row(DialectRegion(r), u);
                    assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                    off += 1.0 - row[u];
                    if level == AccentLevel::None {
                        assert_eq!(row[u], 1.0);
                    }
                }
            }
            assert!(off >= last);
            last = off;
        }
        assert_eq!("medium".parse::<AccentLevel>(), Ok(AccentLevel::Medium));
        assert!("loud".parse::<AccentLevel>().is_err());
    }

    #[test]
    fn emissions_are_reproducible_and_sharpen_with_temperature() {
        let units = Arc::new(SymbolTable::from_symbols(["ba", "bi", "bu", "da"]));
        let conf = ConfusionModel::new(4, AccentLevel::Serious, 1);
        let noise = EmissionNoise::default();
        let t = ["ba", "da", "bu"];
        let a = synthesize_emissions(&t, &units, &conf, DialectRegion(2), &noise, 5).unwrap();
        let b = synthesize_emissions(&t, &units, &conf, DialectRegion(2), &noise, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.num_frames(), 3);
        let cold = EmissionNoise {
            temperature: 0.01,
            ..noise
        };
        let clean = ConfusionModel::new(4, AccentLevel::None, 1);
        let e = synthesize_emissions(&t, &units, &clean, DialectRegion(2), &cold, 5).unwrap();
        for (i, u) in t.iter().enumerate() {
            assert!(e.cost(i, units.get(u).unwrap()) < 1e-9);
        }
        assert_eq!(
            synthesize_emissions(&["zz"], &units, &conf, DialectRegion(1), &noise, 0),
            Err(AmsimError::UnknownUnit("zz".into()))
        );
        let hot = EmissionNoise {
            temperature: 0.0,
            ..noise
        };
        assert!(synthesize_emissions(&t, &units, &conf, DialectRegion(1), &hot, 0).is_err());
    }

    #[test]
    fn corpus_is_reproducible() {
        let table = ProvinceTable::builtin();
        let a = generate_corpus(&small(0.1, 4), &table).unwrap();
        let b = generate_corpus(&small(0.1, 4), &table).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, generate_corpus(&small(0.1, 5), &table).unwrap());
        assert_eq!(names_per_province(&a.entries).values().copied().collect::<Vec<_>>(), vec![100, 200, 150]);
    }

    #[test]
    fn homophone_bookkeeping() {
        let table = ProvinceTable::builtin();
        let none = generate_corpus(&small(0.0, 4), &table).unwrap();
        assert!(none.homophone_groups.is_empty());
        let mut seen = HashSet::new();
        for w in none.lexicon.words() {
            assert!(seen.insert(none.lexicon.pronunciations(w)[0].clone()));
        }
        let some = generate_corpus(&small(0.5, 4), &table).unwrap();
        assert!(!some.homophone_groups.is_empty());
        for g in &some.homophone_groups {
            let p = some.lexicon.pronunciations(&g[0]);
            for w in g {
                assert_eq!(some.lexicon.pronunciations(w), p);
                // every character agrees with the unit it is pronounced as
                let from_chars: Vec<String> = w.chars().map(|c| unit_of_char(c).unwrap()).collect();
                assert_eq!(&from_chars, &p[0]);
            }
        }
    }

    #[test]
    fn utterances_resolve_to_their_province() {
        let table = ProvinceTable::builtin();
        let c = generate_corpus(&small(0.1, 9), &table).unwrap();
        assert_eq!(c.test.len(), 30);
        assert_eq!(c.dev.len(), 6);
        for u in c.test.iter().chain(&c.dev) {
            assert_eq!(table.resolve(u.lat, u.lon).province, u.province);
            assert!(c.entries_of(u.province).any(|e| e.words == u.words));
            assert!(transcript_units(&c.lexicon, &u.words).is_some());
        }
    }

    #[test]
    fn text_formats_round_trip() {
        let table = ProvinceTable::builtin();
        let c = generate_corpus(&small(0.1, 2), &table).unwrap();
        assert_eq!(parse_corpus(&corpus_to_text(&c.entries)).unwrap(), c.entries);
        assert_eq!(parse_manifest(&manifest_to_text(&c.test)).unwrap(), c.test);
        assert!(parse_corpus("1\tx\n").is_err());
        assert!(parse_manifest("a\t1\tx\t2\tw\n").is_err());
    }

    #[test]
    fn invalid_configs() {
        let table = ProvinceTable::builtin();
        let mut c = small(1.5, 1);
        assert_eq!(generate_corpus(&c, &table), Err(AmsimError::InvalidRate(1.5)));
        c = small(0.1, 1);
        c.tail_exponent = 0.0;
        assert_eq!(generate_corpus(&c, &table), Err(AmsimError::InvalidExponent(0.0)));
        c = small(0.1, 1);
        c.provinces[0] = 99;
        assert_eq!(generate_corpus(&c, &table), Err(AmsimError::UnknownProvince(99)));
        c = small(0.1, 1);
        c.sizes[0] = 0;
        assert!(generate_corpus(&c, &table).is_err());
    }

    #[test]
    fn toy_task_is_reproducible_and_regional() {
        let t = ToyTask::new(8, 5, 0.5, 0.1, 2);
        let regions = [DialectRegion(1), DialectRegion(9)];
        let b = t.sample(&regions, 7, 4);
        assert_eq!(b.len(), 14);
        assert_eq!(b, t.sample(&regions, 7, 4));
        assert_eq!(b.filter_region(DialectRegion(9)).len(), 7);
        assert!(b.features.iter().all(|f| f.len() == 8));
        assert_ne!(t.shifts[0], t.shifts[8]);
    }

    #[test]
    fn slope_of_an_exact_power_law() {
        let f: Vec<u64> = (1..=1000u64).map(|r| (1e6 / r as f64).round() as u64).collect();
        assert!((rank_frequency_slope(&f) + 1.0).abs() < 1e-3);
    }
}
