//! End-to-end recognition on synthetic data: language model training per
//! scope, the static graph, geo-selected first-pass decoding, n-best
//! rescoring and CER evaluation.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::amsim::{
    self, AccentLevel, AmsimError, ConfusionModel, CorpusConfig, EmissionNoise, PoiEntry, TestUtterance,
};
use crate::decoder::{self, DecodeConfig, DecodeError, EmissionSequence, Hypothesis, NBestList};
use crate::evalkit::{self, CerReport, EditCounts};
use crate::georegistry::{GeoError, GeoLmStore, LmLevel, ProvinceId, ProvinceTable};
use crate::graph::{self, DifferenceGrammar, GraphError, Lexicon, VirtualGrammar};
use crate::ngram::{train_weighted, NGramModel, NgramError};
use crate::rescore::{self, InterpolationConfig, RescoreError, RescoredHypothesis};
use crate::wfst::{LazyComposition, SymbolTable, Wfst};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Ngram(#[from] NgramError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Rescore(#[from] RescoreError),
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error(transparent)]
    Amsim(#[from] AmsimError),
    #[error("province {0} has no POI names in the corpus")]
    EmptyScope(ProvinceId),
    #[error("word '{0}' is not in the lexicon")]
    UnknownWord(String),
    #[error("static graph symbols do not match the lexicon")]
    GraphMismatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LmConfig {
    pub word_order: usize,
    pub char_order: usize,
    /// Cutoffs of the baseline models trained on all provinces.
    pub baseline_cutoffs: Vec<u32>,
    /// Cutoffs of the per-province models.
    pub geo_cutoffs: Vec<u32>,
    /// Cutoffs of the rescoring character model trained on all provinces.
    pub rescorer_cutoffs: Vec<u32>,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig {
            word_order: 5,
            char_order: 5,
            baseline_cutoffs: vec![0, 3, 5, 10, 15],
            geo_cutoffs: vec![0, 2, 2, 2, 2],
            rescorer_cutoffs: vec![0, 2, 2, 2, 2],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcousticConfig {
    pub accent: AccentLevel,
    pub noise: EmissionNoise,
    pub seed: u64,
}

impl Default for AcousticConfig {
    fn default() -> Self {
        AcousticConfig {
            accent: AccentLevel::Slight,
            noise: EmissionNoise::default(),
            seed: 11,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub corpus: CorpusConfig,
    pub lm: LmConfig,
    pub acoustic: AcousticConfig,
    pub decode: DecodeConfig,
    pub interpolation: InterpolationConfig,
}

impl PipelineConfig {
    /// Range checks that do not need any data.
    pub fn validate(&self) -> Result<(), PipelineError> {
        self.interpolation.validate()?;
        if !(self.decode.beam > 0.0) {
            return Err(DecodeError::InvalidBeam(self.decode.beam).into());
        }
        if self.decode.nbest == 0 {
            return Err(DecodeError::ZeroNbest.into());
        }
        if !(self.acoustic.noise.temperature > 0.0) {
            return Err(AmsimError::InvalidTemperature(self.acoustic.noise.temperature).into());
        }
        Ok(())
    }
}

/// What a model is trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    Baseline,
    Province(ProvinceId),
}

/// Word sequences of the entries in `scope`, weighted by frequency.
pub fn word_corpus(entries: &[PoiEntry], scope: Scope) -> Vec<(Vec<String>, u64)> {
    entries
        .iter()
        .filter(|e| scope == Scope::Baseline || scope == Scope::Province(e.province))
        .map(|e| (e.words.clone(), e.frequency))
        .collect()
}

/// Character sequences of the entries in `scope`, weighted by frequency.
pub fn char_corpus(entries: &[PoiEntry], scope: Scope) -> Vec<(Vec<String>, u64)> {
    word_corpus(entries, scope)
        .into_iter()
        .map(|(w, f)| (rescore::split_chars(&w), f))
        .collect()
}

/// Word and character models of one scope. Baseline scope uses the
/// baseline cutoffs, a province scope the geo cutoffs.
pub fn train_scope(entries: &[PoiEntry], scope: Scope, cfg: &LmConfig) -> Result<(NGramModel, NGramModel), PipelineError> {
    let cutoffs = match scope {
        Scope::Baseline => &cfg.baseline_cutoffs,
        Scope::Province(_) => &cfg.geo_cutoffs,
    };
    let words = word_corpus(entries, scope);
    if words.is_empty() {
        if let Scope::Province(p) = scope {
            return Err(PipelineError::EmptyScope(p));
        }
    }
    let w = train_weighted(&words, cfg.word_order, cutoffs)?;
    let c = train_weighted(&char_corpus(entries, scope), cfg.char_order, cutoffs)?;
    Ok((w, c))
}

/// Character model used as the pluggable second-pass rescorer.
pub fn train_rescorer(entries: &[PoiEntry], cfg: &LmConfig) -> Result<NGramModel, PipelineError> {
    Ok(train_weighted(
        &char_corpus(entries, Scope::Baseline),
        cfg.char_order,
        &cfg.rescorer_cutoffs,
    )?)
}

/// Every language model of the system.
pub struct LanguageModels {
    pub base_word: Arc<NGramModel>,
    pub base_char: Arc<NGramModel>,
    pub rescorer: Arc<NGramModel>,
    pub geo: GeoLmStore,
}

impl LanguageModels {
    pub fn train(entries: &[PoiEntry], cfg: &LmConfig) -> Result<Self, PipelineError> {
        let (bw, bc) = train_scope(entries, Scope::Baseline, cfg)?;
        let mut geo = GeoLmStore::new();
        let mut provinces: Vec<ProvinceId> = entries.iter().map(|e| e.province).collect();
        provinces.sort();
        provinces.dedup();
        for p in provinces {
            let (w, c) = train_scope(entries, Scope::Province(p), cfg)?;
            geo.insert(p, Arc::new(w), Arc::new(c));
        }
        Ok(LanguageModels {
            base_word: Arc::new(bw),
            base_char: Arc::new(bc),
            rescorer: Arc::new(train_rescorer(entries, cfg)?),
            geo,
        })
    }
}

/// First-pass output of one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct FirstPass {
    pub province: ProvinceId,
    /// Whether a province model took part (false: baseline only).
    pub geo_used: bool,
    pub hyps: Vec<Hypothesis>,
}

type CachedGraph = LazyComposition<Arc<Wfst>, DifferenceGrammar>;

/// A lazily expanded first-pass graph kept for reuse by later utterances
/// decoded with the same grammar.
struct GraphSlot {
    vg: Arc<VirtualGrammar>,
    graph: Mutex<CachedGraph>,
}

/// The static graph and the models needed to decode and rescore.
pub struct Recognizer {
    pub lexicon: Lexicon,
    pub words: Arc<SymbolTable>,
    pub units: Arc<SymbolTable>,
    pub bigram: Arc<NGramModel>,
    pub static_part: Arc<Wfst>,
    pub lms: LanguageModels,
    pub table: ProvinceTable,
    graphs: Mutex<HashMap<(Option<ProvinceId>, u64), Arc<GraphSlot>>>,
}

impl Recognizer {
    pub fn new(lexicon: Lexicon, lms: LanguageModels, table: ProvinceTable) -> Result<Self, PipelineError> {
        let words = Arc::new(lexicon.word_symbols());
        let bigram = lms.base_word.make_bigram_subset()?;
        let l = graph::build_lexicon_fst(&lexicon)?;
        let g_bi = graph::ngram_to_fst(&bigram, &words)?;
        let static_part = graph::build_static_part(&l, &g_bi)?;
        Self::with_static_part(lexicon, lms, table, static_part)
    }

    /// Like [`Recognizer::new`] with a static part built earlier from the
    /// same lexicon and baseline model.
    pub fn with_static_part(
        lexicon: Lexicon,
        lms: LanguageModels,
        table: ProvinceTable,
        mut static_part: Wfst,
    ) -> Result<Self, PipelineError> {
        let words = Arc::new(lexicon.word_symbols());
        let units = Arc::new(lexicon.unit_symbols());
        if static_part.input_symbols().as_ref() != units.as_ref()
            || static_part.output_symbols().as_ref() != words.as_ref()
        {
            return Err(PipelineError::GraphMismatch);
        }
        static_part.sort_by_input();
        let bigram = Arc::new(lms.base_word.make_bigram_subset()?);
        Ok(Recognizer {
            lexicon,
            words,
            units,
            bigram,
            static_part: Arc::new(static_part),
            lms,
            table,
            graphs: Mutex::new(HashMap::new()),
        })
    }

    /// Province whose model takes part in decoding at `lambda`, if any.
    /// Utterances with the same key share one expanded graph.
    pub fn graph_key(&self, province: ProvinceId, lambda: f64) -> Option<ProvinceId> {
        (lambda < 1.0 && self.lms.geo.contains(province)).then_some(province)
    }

    /// Interpolated grammar for a province; λ = 1 or a province without a
    /// model gives the baseline alone.
    pub fn grammar(&self, province: ProvinceId, lambda: f64) -> Result<(VirtualGrammar, bool), PipelineError> {
        let use_geo = self.graph_key(province, lambda).is_some();
        let geo = if use_geo {
            self.lms.geo.select_geo_lm(province, LmLevel::Word)?
        } else {
            self.lms.base_word.clone()
        };
        let lambda = if use_geo { lambda } else { 1.0 };
        let vg = VirtualGrammar::new(self.lms.base_word.clone(), geo, lambda, self.words.clone())?;
        Ok((vg, use_geo))
    }

    fn graph_for(&self, province: ProvinceId, lambda: f64) -> Result<(Arc<GraphSlot>, bool), PipelineError> {
        let key = match self.graph_key(province, lambda) {
            Some(p) => (Some(p), lambda.to_bits()),
            None => (None, 1f64.to_bits()),
        };
        let use_geo = key.0.is_some();
        let mut graphs = self.graphs.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(slot) = graphs.get(&key) {
            return Ok((slot.clone(), use_geo));
        }
        let (vg, _) = self.grammar(province, lambda)?;
        let vg = Arc::new(vg);
        let f = DifferenceGrammar::new(vg.clone(), self.bigram.clone());
        let graph = graph::assemble_first_pass(self.static_part.clone(), f)?;
        let slot = Arc::new(GraphSlot {
            vg,
            graph: Mutex::new(graph),
        });
        graphs.insert(key, slot.clone());
        Ok((slot, use_geo))
    }

    /// Drops the expanded first-pass graphs.
    pub fn clear_graphs(&self) {
        self.graphs.lock().unwrap_or_else(|e| e.into_inner()).clear();
    }

    /// Resolves the location, selects the province model and decodes.
    ///
    /// The lazily expanded graph of each (province, λ) pair is kept and
    /// reused by later calls; expansion is a pure function of the models,
    /// so reuse only saves work.
    pub fn first_pass(
        &self,
        emissions: &EmissionSequence,
        lat: f64,
        lon: f64,
        lambda: f64,
        cfg: &DecodeConfig,
    ) -> Result<FirstPass, PipelineError> {
        let province = self.table.resolve(lat, lon).province;
        let (slot, geo_used) = self.graph_for(province, lambda)?;
        let mut hyps = {
            let mut g = slot.graph.lock().unwrap_or_else(|e| e.into_inner());
            decoder::decode(&mut *g, emissions, cfg)?
        };
        for h in &mut hyps {
            let labels = h
                .words
                .iter()
                .map(|w| self.words.get(w).ok_or_else(|| PipelineError::UnknownWord(w.clone())))
                .collect::<Result<Vec<_>, _>>()?;
            h.word_lm_costs = slot.vg.word_costs(&labels);
        }
        Ok(FirstPass {
            province,
            geo_used,
            hyps,
        })
    }

    /// Second pass with the province's character model when one exists.
    pub fn rescore(
        &self,
        list: &NBestList,
        cfg: &InterpolationConfig,
        lm_scale: f64,
    ) -> Result<Vec<RescoredHypothesis>, PipelineError> {
        rescore_list(&self.lms, list, cfg, lm_scale)
    }

    /// Simulated posteriors of an utterance spoken with the accent of its
    /// province's dialect region.
    pub fn simulate(
        &self,
        utt: &TestUtterance,
        confusion: &ConfusionModel,
        acoustic: &AcousticConfig,
    ) -> Result<EmissionSequence, PipelineError> {
        let transcript = amsim::transcript_units(&self.lexicon, &utt.words)
            .ok_or_else(|| PipelineError::UnknownWord(utt.words.join(" ")))?;
        let region = self
            .table
            .region_of(utt.province)
            .ok_or(GeoError::Unregistered(utt.province))?;
        Ok(amsim::synthesize_emissions(
            &transcript,
            &self.units,
            confusion,
            region,
            &acoustic.noise,
            amsim::utterance_seed(acoustic.seed, &utt.id),
        )?)
    }

    pub fn confusion(&self, acoustic: &AcousticConfig) -> ConfusionModel {
        ConfusionModel::new(self.units.len() - 1, acoustic.accent, acoustic.seed)
    }
}

/// Rescores a list with the character model of its province, or with the
/// baseline character model when the province has none.
pub fn rescore_list(
    lms: &LanguageModels,
    list: &NBestList,
    cfg: &InterpolationConfig,
    lm_scale: f64,
) -> Result<Vec<RescoredHypothesis>, PipelineError> {
    let geo = match list.province.map(ProvinceId) {
        Some(p) if lms.geo.contains(p) => lms.geo.select_geo_lm(p, LmLevel::Character)?,
        _ => lms.base_char.clone(),
    };
    let r = rescore::default_rescorer(lms.rescorer.clone());
    Ok(rescore::rescore_nbest(list, &lms.base_char, &geo, &r, cfg, lm_scale)?)
}

/// Builds corpus, models and graph from a configuration.
pub fn build_system(
    cfg: &PipelineConfig,
    table: ProvinceTable,
) -> Result<(amsim::SyntheticCorpus, Recognizer), PipelineError> {
    cfg.validate()?;
    let corpus = amsim::generate_corpus(&cfg.corpus, &table)?;
    let lms = LanguageModels::train(&corpus.entries, &cfg.lm)?;
    let rec = Recognizer::new(corpus.lexicon.clone(), lms, table)?;
    Ok((corpus, rec))
}

/// Correct and total occurrences of homophone-group words in references.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct HomophoneTally {
    pub correct: usize,
    pub total: usize,
}

impl HomophoneTally {
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }
}

/// Counts each reference word that has a homophone as correct when the
/// hypothesis contains that exact word.
pub fn homophone_hits(reference: &[String], hypothesis: &[String], homophones: &dyn Fn(&str) -> bool) -> HomophoneTally {
    let mut t = HomophoneTally::default();
    for w in reference.iter().filter(|w| homophones(w)) {
        t.total += 1;
        if hypothesis.contains(w) {
            t.correct += 1;
        }
    }
    t
}

/// Evaluation of one system over a test set.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Scores {
    pub cer: CerReport,
    pub homophones: BTreeMap<ProvinceId, HomophoneTally>,
    /// Utterances that produced no hypothesis.
    pub failures: usize,
}

impl Scores {
    /// Adds one utterance; `None` counts every reference character deleted.
    pub fn add(
        &mut self,
        utt: &TestUtterance,
        best: Option<&[String]>,
        homophones: &dyn Fn(&str) -> bool,
    ) {
        let reference = utt.reference();
        let hyp = best.map(|w| w.concat()).unwrap_or_default();
        let counts = if reference.is_empty() {
            EditCounts::default()
        } else {
            evalkit::cer(&reference, &hyp).expect("non-empty reference")
        };
        self.cer.add(&[format!("province{}", utt.province)], counts);
        let t = homophone_hits(&utt.words, best.unwrap_or(&[]), homophones);
        let e = self.homophones.entry(utt.province).or_default();
        e.correct += t.correct;
        e.total += t.total;
        if best.is_none() {
            self.failures += 1;
        }
    }

    pub fn cer_percent(&self) -> f64 {
        100.0 * self.cer.total().cer()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> PipelineConfig {
        PipelineConfig {
            corpus: CorpusConfig {
                provinces: vec![11, 19, 1],
                sizes: vec![120, 100, 80],
                local_words: 12,
                shared_words: 6,
                categories: 6,
                test_per_province: 4,
                dev_per_province: 1,
                homophone_rate: 0.3,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn scopes_use_their_cutoffs() {
        let cfg = small_config();
        let corpus = amsim::generate_corpus(&cfg.corpus, &ProvinceTable::builtin()).unwrap();
        let (b, _) = train_scope(&corpus.entries, Scope::Baseline, &cfg.lm).unwrap();
        let (g, _) = train_scope(&corpus.entries, Scope::Province(ProvinceId(11)), &cfg.lm).unwrap();
        assert_eq!(b.cutoffs(), &[0, 3, 5, 10, 15]);
        assert_eq!(g.cutoffs(), &[0, 2, 2, 2, 2]);
        assert!(matches!(
            train_scope(&corpus.entries, Scope::Province(ProvinceId(30)), &cfg.lm),
            Err(PipelineError::EmptyScope(ProvinceId(30)))
        ));
    }

    #[test]
    fn clean_speech_is_recognized() {
        let mut cfg = small_config();
        cfg.acoustic.accent = AccentLevel::None;
        cfg.acoustic.noise.sigma = 0.0;
        let (corpus, rec) = build_system(&cfg, ProvinceTable::builtin()).unwrap();
        let conf = rec.confusion(&cfg.acoustic);
        for utt in &corpus.test {
            let em = rec.simulate(utt, &conf, &cfg.acoustic).unwrap();
            let fp = rec.first_pass(&em, utt.lat, utt.lon, 0.5, &cfg.decode).unwrap();
            assert_eq!(fp.province, utt.province);
            assert!(fp.geo_used);
            let best = &fp.hyps[0];
            // every unit is observed exactly, so the transcript is a homophone
            // rendering of the reference
            assert_eq!(
                amsim::transcript_units(&rec.lexicon, &best.words),
                amsim::transcript_units(&rec.lexicon, &utt.words)
            );
            let lm: f64 = best.word_lm_costs.iter().sum();
            assert!((lm - best.lm).abs() < 1e-6);
        }
    }

    #[test]
    fn lambda_one_ignores_the_province() {
        let cfg = small_config();
        let (corpus, rec) = build_system(&cfg, ProvinceTable::builtin()).unwrap();
        let conf = rec.confusion(&cfg.acoustic);
        let utt = &corpus.test[0];
        let em = rec.simulate(utt, &conf, &cfg.acoustic).unwrap();
        let a = rec.first_pass(&em, utt.lat, utt.lon, 1.0, &cfg.decode).unwrap();
        let (lat, lon) = rec.table.interior_point(ProvinceId(30)).unwrap();
        let b = rec.first_pass(&em, lat, lon, 1.0, &cfg.decode).unwrap();
        assert!(!a.geo_used && !b.geo_used);
        assert_eq!(a.hyps, b.hyps);
    }

    #[test]
    fn homophone_tally() {
        let r: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let h: Vec<String> = ["a", "x", "c"].iter().map(|s| s.to_string()).collect();
        let t = homophone_hits(&r, &h, &|w| w != "c");
        assert_eq!(t, HomophoneTally { correct: 1, total: 2 });
        assert_eq!(t.accuracy(), 0.5);
    }
}
