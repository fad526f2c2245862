//! Second-pass character-level rescoring of first-pass n-best lists.
//!
//! A second-pass character probability mixes the baseline character model,
//! a pluggable rescorer and the regional character model. It is combined
//! with the first-pass word probability character by character: each word's
//! first-pass probability sits on its first character, continuation
//! characters carry probability 1, and the end of sentence is one more
//! position at the end.

use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decoder::{Hypothesis, NBestList};
use crate::ngram::{NGramModel, WordId, BOS_ID, EOS_ID};

#[derive(Debug, Error, PartialEq)]
pub enum RescoreError {
    #[error("invalid interpolation config: {0}")]
    InvalidConfig(String),
    #[error("expected {expected} second-pass probabilities, got {got}")]
    TokenMismatch { expected: usize, got: usize },
    #[error("hypothesis has {words} words but {costs} first-pass costs")]
    MissingFirstPass { words: usize, costs: usize },
}

/// Interpolation weights of both passes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InterpolationConfig {
    /// Baseline weight in the first pass; 1 − λ goes to the regional model.
    pub lambda: f64,
    /// Baseline character model weight in the second pass.
    pub alpha: f64,
    /// Rescorer weight in the second pass; 1 − α − β goes to the regional
    /// character model.
    pub beta: f64,
    /// First-pass weight in the final combination.
    pub gamma: f64,
}

impl Default for InterpolationConfig {
    fn default() -> Self {
        InterpolationConfig {
            lambda: 0.5,
            alpha: 0.4,
            beta: 0.3,
            gamma: 0.5,
        }
    }
}

impl InterpolationConfig {
    pub fn validate(&self) -> Result<(), RescoreError> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(RescoreError::InvalidConfig(format!("{name} = {v} is outside [0, 1]")))
            }
        };
        unit("lambda", self.lambda)?;
        unit("alpha", self.alpha)?;
        unit("beta", self.beta)?;
        unit("gamma", self.gamma)?;
        if self.alpha + self.beta > 1.0 + 1e-12 {
            return Err(RescoreError::InvalidConfig(format!(
                "alpha + beta = {} exceeds 1",
                self.alpha + self.beta
            )));
        }
        Ok(())
    }

    /// Weight of the regional character model.
    pub fn geo_weight(&self) -> f64 {
        (1.0 - self.alpha - self.beta).max(0.0)
    }
}

/// Character-level probability provider used in the second pass.
///
/// Scores a whole hypothesis at once so implementations can batch.
pub trait Rescorer: Send + Sync {
    /// P(c_i | c_1 .. c_{i-1}) for every character, followed by the
    /// probability of ending after the last one. Values lie in (0, 1].
    fn score(&self, chars: &[&str]) -> Vec<f64>;
}

fn model_probs(model: &NGramModel, chars: &[&str]) -> Vec<f64> {
    let mut hist: Vec<WordId> = vec![BOS_ID];
    let mut out = Vec::with_capacity(chars.len() + 1);
    for c in chars {
        let id = model.vocab().id_or_unk(c);
        out.push(model.prob_ids(id, &hist));
        hist.push(id);
    }
    out.push(model.prob_ids(EOS_ID, &hist));
    out
}

/// Rescorer backed by a character n-gram model.
#[derive(Debug, Clone)]
pub struct NgramRescorer {
    model: Arc<NGramModel>,
}

impl Rescorer for NgramRescorer {
    fn score(&self, chars: &[&str]) -> Vec<f64> {
        model_probs(&self.model, chars)
    }
}

pub fn default_rescorer(model: Arc<NGramModel>) -> NgramRescorer {
    NgramRescorer { model }
}

/// Every position gets probability 1 / size.
#[derive(Debug, Clone, Copy)]
pub struct UniformRescorer {
    pub size: usize,
}

impl Rescorer for UniformRescorer {
    fn score(&self, chars: &[&str]) -> Vec<f64> {
        vec![1.0 / self.size as f64; chars.len() + 1]
    }
}

/// α·P_b + β·P_r + (1−α−β)·P_l at every position of `chars` and at the end.
pub fn second_pass_probs(
    chars: &[&str],
    base: &NGramModel,
    geo: &NGramModel,
    rescorer: &dyn Rescorer,
    cfg: &InterpolationConfig,
) -> Result<Vec<f64>, RescoreError> {
    cfg.validate()?;
    let pb = model_probs(base, chars);
    let pl = model_probs(geo, chars);
    let pr = rescorer.score(chars);
    if pr.len() != pb.len() {
        return Err(RescoreError::TokenMismatch {
            expected: pb.len(),
            got: pr.len(),
        });
    }
    let g = cfg.geo_weight();
    Ok((0..pb.len())
        .map(|i| cfg.alpha * pb[i] + cfg.beta * pr[i] + g * pl[i])
        .collect())
}

/// Second-pass probability of `ch` after `history`.
pub fn second_pass_prob(
    ch: &str,
    history: &[&str],
    base: &NGramModel,
    geo: &NGramModel,
    rescorer: &dyn Rescorer,
    cfg: &InterpolationConfig,
) -> Result<f64, RescoreError> {
    let mut chars = history.to_vec();
    chars.push(ch);
    Ok(second_pass_probs(&chars, base, geo, rescorer, cfg)?[history.len()])
}

/// Characters of a word sequence, one per Unicode scalar value.
pub fn split_chars(words: &[String]) -> Vec<String> {
    words
        .iter()
        .flat_map(|w| w.chars().map(String::from))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RescoredHypothesis {
    pub hyp: Hypothesis,
    /// 1-based rank in the first pass.
    pub first_rank: usize,
    /// Σ −ln P1 over character positions.
    pub first_pass_cost: f64,
    /// Σ −ln P2 over character positions.
    pub second_pass_cost: f64,
    /// Σ −ln(γ·P1 + (1−γ)·P2).
    pub combined_lm: f64,
    /// acoustic + lm_scale · combined_lm
    pub total: f64,
}

/// Per-character first-pass probabilities: each word's probability on its
/// first character, 1 on continuation characters, then end of sentence.
pub fn first_pass_char_probs(h: &Hypothesis) -> Result<Vec<f64>, RescoreError> {
    if h.word_lm_costs.len() != h.words.len() + 1 {
        return Err(RescoreError::MissingFirstPass {
            words: h.words.len(),
            costs: h.word_lm_costs.len(),
        });
    }
    let mut out = Vec::new();
    for (w, c) in h.words.iter().zip(&h.word_lm_costs) {
        out.push((-c).exp());
        out.extend(std::iter::repeat(1.0).take(w.chars().count().saturating_sub(1)));
    }
    out.push((-h.word_lm_costs[h.words.len()]).exp());
    Ok(out)
}

/// Combines both passes for one hypothesis. With γ = 1 the first-pass
/// score is kept as is.
pub fn combine_passes(
    h: &Hypothesis,
    first_rank: usize,
    p2: &[f64],
    cfg: &InterpolationConfig,
    lm_scale: f64,
) -> Result<RescoredHypothesis, RescoreError> {
    cfg.validate()?;
    let p1 = first_pass_char_probs(h)?;
    if p2.len() != p1.len() {
        return Err(RescoreError::TokenMismatch {
            expected: p1.len(),
            got: p2.len(),
        });
    }
    let first_pass_cost = h.word_lm_costs.iter().sum();
    let second_pass_cost = p2.iter().map(|p| -p.ln()).sum();
    let (combined_lm, total) = if cfg.gamma == 1.0 {
        (h.lm, h.total)
    } else {
        let g = cfg.gamma;
        let c: f64 = p1
            .iter()
            .zip(p2)
            .map(|(a, b)| -(g * a + (1.0 - g) * b).ln())
            .sum();
        (c, h.acoustic + lm_scale * c)
    };
    Ok(RescoredHypothesis {
        hyp: h.clone(),
        first_rank,
        first_pass_cost,
        second_pass_cost,
        combined_lm,
        total,
    })
}

/// Rescores and re-ranks a list by (combined total, first-pass rank).
pub fn rescore_nbest(
    list: &NBestList,
    base: &NGramModel,
    geo: &NGramModel,
    rescorer: &dyn Rescorer,
    cfg: &InterpolationConfig,
    lm_scale: f64,
) -> Result<Vec<RescoredHypothesis>, RescoreError> {
    let mut out = Vec::with_capacity(list.hyps.len());
    for (i, h) in list.hyps.iter().enumerate() {
        let chars = split_chars(&h.words);
        let refs: Vec<&str> = chars.iter().map(String::as_str).collect();
        let p2 = second_pass_probs(&refs, base, geo, rescorer, cfg)?;
        out.push(combine_passes(h, i + 1, &p2, cfg, lm_scale)?);
    }
    out.sort_by(|a, b| a.total.total_cmp(&b.total).then(a.first_rank.cmp(&b.first_rank)));
    Ok(out)
}

/// One line per hypothesis: `utt_id  province  rank  first_rank  rank_delta
/// total  combined_lm  first_pass  second_pass  acoustic  words`, where
/// rank_delta = first_rank − rank.
pub fn rescored_to_text(utt_id: &str, province: Option<u32>, hyps: &[RescoredHypothesis]) -> String {
    let mut out = String::new();
    let prov = province.map_or("-".to_string(), |p| p.to_string());
    for (i, r) in hyps.iter().enumerate() {
        let rank = i + 1;
        let _ = writeln!(
            out,
            "{utt_id}\t{prov}\t{rank}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.first_rank,
            r.first_rank as i64 - rank as i64,
            r.total,
            r.combined_lm,
            r.first_pass_cost,
            r.second_pass_cost,
            r.hyp.acoustic,
            r.hyp.words.join(" ")
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ngram::train;

    struct Fixed(Vec<f64>);

    impl Rescorer for Fixed {
        fn score(&self, chars: &[&str]) -> Vec<f64> {
            self.0.iter().copied().cycle().take(chars.len() + 1).collect()
        }
    }

    fn char_model(lines: &[&str]) -> NGramModel {
        let c: Vec<Vec<String>> = lines
            .iter()
            .map(|l| l.chars().map(String::from).collect())
            .collect();
        train(&c, 3, &[0, 0, 0]).unwrap()
    }

    fn cfg(alpha: f64, beta: f64, gamma: f64) -> InterpolationConfig {
        InterpolationConfig {
            lambda: 0.5,
            alpha,
            beta,
            gamma,
        }
    }

    #[test]
    fn config_validation() {
        assert!(InterpolationConfig::default().validate().is_ok());
        assert!(cfg(0.7, 0.4, 0.5).validate().is_err());
        assert!(cfg(-0.1, 0.4, 0.5).validate().is_err());
        assert!(cfg(0.4, 0.4, 1.1).validate().is_err());
        assert!(cfg(0.57, 0.43, 0.5).validate().is_ok());
        let bad = InterpolationConfig {
            lambda: f64::NAN,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    fn unigram(px: f64, peos: f64) -> NGramModel {
        let text = format!(
            "\\data\\\nngram 1=4\n\n\\1-grams:\n{}\t<unk>\n-99\t<s>\n{}\t</s>\n{}\tx\n\n\\end\\\n",
            (1.0 - px - peos).log10(),
            peos.log10(),
            px.log10()
        );
        NGramModel::from_arpa(&text).unwrap()
    }

    #[test]
    fn hand_mixed_second_pass_probability() {
        let base = unigram(0.2, 0.7);
        let geo = unigram(0.5, 0.4);
        let p = second_pass_prob("x", &[], &base, &geo, &Fixed(vec![0.1]), &cfg(0.5, 0.3, 0.5)).unwrap();
        assert!((p - 0.23).abs() < 1e-12);
        assert_eq!(
            second_pass_prob("x", &[], &base, &geo, &Fixed(vec![0.1]), &cfg(0.8, 0.3, 0.5)),
            Err(RescoreError::InvalidConfig("alpha + beta = 1.1 exceeds 1".into()))
        );
    }

    #[test]
    fn second_pass_boundaries() {
        let base = char_model(&["北京大学", "北大", "京大"]);
        let geo = char_model(&["大学路", "北路"]);
        let resc = default_rescorer(Arc::new(char_model(&["学大", "北京"])));
        let chars = ["北", "大", "路"];
        let pb = model_probs(&base, &chars);
        let got = second_pass_probs(&chars, &base, &geo, &resc, &cfg(1.0, 0.0, 0.5)).unwrap();
        assert_eq!(got, pb);
        // identical components give back the component
        let same = default_rescorer(Arc::new(base.clone()));
        for c in [cfg(0.2, 0.3, 0.5), cfg(0.0, 0.0, 0.5), cfg(0.5, 0.5, 0.5)] {
            let got = second_pass_probs(&chars, &base, &base, &same, &c).unwrap();
            for (g, p) in got.iter().zip(&pb) {
                assert!((g - p).abs() < 1e-15);
            }
        }
        // convex combination bounds
        let pl = model_probs(&geo, &chars);
        let pr = resc.score(&chars);
        let got = second_pass_probs(&chars, &base, &geo, &resc, &cfg(0.3, 0.3, 0.5)).unwrap();
        for i in 0..got.len() {
            let lo = pb[i].min(pl[i]).min(pr[i]);
            let hi = pb[i].max(pl[i]).max(pr[i]);
            assert!(lo - 1e-15 <= got[i] && got[i] <= hi + 1e-15);
        }
        let single = second_pass_prob("大", &["北"], &base, &geo, &resc, &cfg(0.3, 0.3, 0.5)).unwrap();
        assert_eq!(single, got[1]);
    }

    #[test]
    fn adapter_matches_model_queries() {
        let m = Arc::new(char_model(&["北京大学", "北大"]));
        let r = default_rescorer(m.clone());
        let p = r.score(&["北", "京"]);
        assert_eq!(p[1], 10f64.powf(m.logprob("京", &["<s>", "北"])));
        assert_eq!(p[2], 10f64.powf(m.logprob("</s>", &["<s>", "北", "京"])));
    }

    fn hyp(words: &[&str], ac: f64, costs: &[f64]) -> Hypothesis {
        let lm: f64 = costs.iter().sum();
        Hypothesis {
            words: words.iter().map(|w| w.to_string()).collect(),
            total: ac + lm,
            acoustic: ac,
            lm,
            word_lm_costs: costs.to_vec(),
        }
    }

    #[test]
    fn first_pass_costs_survive_character_expansion() {
        let h = hyp(&["北京", "大学路"], 1.0, &[2.0, 3.0, 0.5]);
        let p1 = first_pass_char_probs(&h).unwrap();
        assert_eq!(p1.len(), 6);
        let cost: f64 = p1.iter().map(|p| -p.ln()).sum();
        assert!((cost - h.lm).abs() < 1e-9);
        let bad = hyp(&["北京"], 1.0, &[2.0]);
        assert_eq!(
            first_pass_char_probs(&bad),
            Err(RescoreError::MissingFirstPass { words: 1, costs: 1 })
        );
    }

    #[test]
    fn hand_computed_reranking() {
        // three single-character hypotheses, p2 given per hypothesis
        // h1: ac 1.0, P1 = (0.5, 0.5)  P2 = (0.1, 0.5)
        // h2: ac 1.2, P1 = (0.4, 0.5)  P2 = (0.6, 0.5)
        // h3: ac 1.0, P1 = (0.3, 0.5)  P2 = (0.2, 0.5)
        // γ = 0.5: combined = (0.30, 0.5), (0.50, 0.5), (0.25, 0.5)
        // totals: 1 + ln(1/0.3) + ln 2 = 2.8971, 1.2 + ln 2 + ln 2 = 2.5863,
        //         1 + ln 4 + ln 2 = 3.0794 -> order h2, h1, h3
        let hs = [
            hyp(&["a"], 1.0, &[-(0.5f64).ln(), -(0.5f64).ln()]),
            hyp(&["b"], 1.2, &[-(0.4f64).ln(), -(0.5f64).ln()]),
            hyp(&["c"], 1.0, &[-(0.3f64).ln(), -(0.5f64).ln()]),
        ];
        let p2 = [[0.1, 0.5], [0.6, 0.5], [0.2, 0.5]];
        let c = cfg(0.4, 0.3, 0.5);
        let mut r: Vec<_> = hs
            .iter()
            .zip(&p2)
            .enumerate()
            .map(|(i, (h, p))| combine_passes(h, i + 1, p, &c, 1.0).unwrap())
            .collect();
        assert!((r[0].total - (1.0 + (1.0 / 0.3f64).ln() + 2f64.ln())).abs() < 1e-12);
        r.sort_by(|a, b| a.total.total_cmp(&b.total));
        let order: Vec<usize> = r.iter().map(|x| x.first_rank).collect();
        assert_eq!(order, vec![2, 1, 3]);
        assert!(matches!(
            combine_passes(&hs[0], 1, &[0.5], &c, 1.0),
            Err(RescoreError::TokenMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn gamma_one_keeps_first_pass_order() {
        let base = char_model(&["ab", "ba", "abc"]);
        let geo = char_model(&["cc", "cb"]);
        let list = NBestList {
            utt_id: "u".into(),
            province: None,
            hyps: vec![
                hyp(&["c", "b"], 2.0, &[0.3, 0.3, 0.3]),
                hyp(&["a", "b"], 2.0, &[0.4, 0.3, 0.3]),
                hyp(&["ab"], 2.1, &[0.5, 0.5]),
            ],
        };
        let r = rescore_nbest(&list, &base, &geo, &UniformRescorer { size: 5 }, &cfg(0.4, 0.3, 1.0), 1.0).unwrap();
        let order: Vec<usize> = r.iter().map(|x| x.first_rank).collect();
        assert_eq!(order, vec![1, 2, 3]);
        assert_eq!(r[0].total, list.hyps[0].total);
        // γ = 0 ranks by the second pass alone; the base model prefers "ab"
        let r = rescore_nbest(&list, &base, &geo, &UniformRescorer { size: 5 }, &cfg(1.0, 0.0, 0.0), 1.0).unwrap();
        assert_eq!(r[0].hyp.words, vec!["a", "b"]);
    }

    #[test]
    fn rescorer_is_irrelevant_at_zero_weight() {
        let base = char_model(&["ab", "ba", "abc"]);
        let geo = char_model(&["cc", "cb"]);
        let list = NBestList {
            utt_id: "u".into(),
            province: None,
            hyps: vec![hyp(&["c", "b"], 2.0, &[0.3, 0.3, 0.3]), hyp(&["ab"], 2.1, &[0.5, 0.5])],
        };
        let c = cfg(0.6, 0.0, 0.5);
        let a = rescore_nbest(&list, &base, &geo, &UniformRescorer { size: 5 }, &c, 1.0).unwrap();
        let resc = default_rescorer(Arc::new(char_model(&["ca"])));
        let b = rescore_nbest(&list, &base, &geo, &resc, &c, 1.0).unwrap();
        assert_eq!(a, b);
        // with β > 0 the rescorer enters per the mixing formula
        let c = cfg(0.4, 0.3, 0.5);
        let a = rescore_nbest(&list, &base, &geo, &UniformRescorer { size: 5 }, &c, 1.0).unwrap();
        let b = rescore_nbest(&list, &base, &geo, &resc, &c, 1.0).unwrap();
        assert_ne!(a[0].second_pass_cost, b[0].second_pass_cost);
        let chars = ["c", "b"];
        let pb = model_probs(&base, &chars);
        let pl = model_probs(&geo, &chars);
        let pr = resc.score(&chars);
        let want: f64 = (0..3).map(|i| -(0.4 * pb[i] + 0.3 * pr[i] + 0.3 * pl[i]).ln()).sum();
        let got = b.iter().find(|r| r.first_rank == 1).unwrap().second_pass_cost;
        assert!((got - want).abs() < 1e-12);
    }
}
