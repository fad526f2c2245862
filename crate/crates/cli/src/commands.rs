use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use geoasr::amsim::{self, TestUtterance};
use geoasr::decoder::{EmissionSequence, NBestList};
use geoasr::evalkit::{self, CerReport, EditCounts};
use geoasr::georegistry::{GeoLmStore, ProvinceId, ProvinceTable};
use geoasr::graph::{self, Lexicon};
use geoasr::ngram::NGramModel;
use geoasr::pipeline::{self, LanguageModels, Recognizer, Scope};
use geoasr::rescore;
use geoasr::wfst::{SymbolTable, Wfst};
use rayon::prelude::*;

use crate::config::Config;
use crate::Grouping;

const POI: &str = "corpus/poi.tsv";
const LEXICON: &str = "corpus/lexicon.txt";
const TEST: &str = "corpus/test.tsv";
const DEV: &str = "corpus/dev.tsv";
const HOMOPHONES: &str = "corpus/homophones.txt";
const BASE_WORD: &str = "lm/base.word.arpa";
const BASE_CHAR: &str = "lm/base.char.arpa";
const RESCORER: &str = "lm/rescorer.char.arpa";
const GEO_MANIFEST: &str = "lm/geo.manifest";
const STATIC_FST: &str = "graph/static.fst";
const UNIT_SYMS: &str = "graph/units.syms";
const WORD_SYMS: &str = "graph/words.syms";

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn artifact(cfg: &Config, rel: &str) -> PathBuf {
    cfg.paths.workdir.join(rel)
}

fn load_arpa(path: &Path) -> Result<NGramModel> {
    NGramModel::from_arpa(&read(path)?).with_context(|| format!("parsing {}", path.display()))
}

fn pool(cfg: &Config) -> Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new().num_threads(cfg.run.workers).build()?)
}

pub fn gen_corpus(cfg: &Config) -> Result<()> {
    let table = cfg.provinces()?;
    let corpus = amsim::generate_corpus(&cfg.corpus, &table)?;
    write(&artifact(cfg, POI), &amsim::corpus_to_text(&corpus.entries))?;
    write(&artifact(cfg, LEXICON), &corpus.lexicon.to_text())?;
    write(&artifact(cfg, TEST), &amsim::manifest_to_text(&corpus.test))?;
    write(&artifact(cfg, DEV), &amsim::manifest_to_text(&corpus.dev))?;
    let groups: String = corpus
        .homophone_groups
        .iter()
        .map(|g| format!("{}\n", g.join(" ")))
        .collect();
    write(&artifact(cfg, HOMOPHONES), &groups)?;
    eprintln!(
        "{} POI names in {} provinces, {} lexicon words, {} test and {} dev utterances, {} homophone groups",
        corpus.entries.len(),
        corpus.provinces().len(),
        corpus.lexicon.len(),
        corpus.test.len(),
        corpus.dev.len(),
        corpus.homophone_groups.len()
    );
    Ok(())
}

fn geo_paths(id: ProvinceId) -> (String, String) {
    (format!("p{}.word.arpa", id.0), format!("p{}.char.arpa", id.0))
}

/// Rewrites the province manifest from the model files present.
fn write_geo_manifest(cfg: &Config, table: &ProvinceTable) -> Result<usize> {
    let dir = artifact(cfg, "lm");
    let mut lines = String::new();
    let mut n = 0;
    for p in table.provinces() {
        let (w, c) = geo_paths(p.id);
        if dir.join(&w).is_file() && dir.join(&c).is_file() {
            lines.push_str(&format!("{}\t{w}\t{c}\n", p.id.0));
            n += 1;
        }
    }
    write(&artifact(cfg, GEO_MANIFEST), &lines)?;
    Ok(n)
}

fn cutoffs(c: &[u32]) -> String {
    c.iter().map(u32::to_string).collect::<Vec<_>>().join("-")
}

pub fn train_lm(cfg: &Config, scope: &str) -> Result<()> {
    let table = cfg.provinces()?;
    let target = match scope {
        "baseline" | "all" => None,
        id => {
            let id: u32 = id
                .parse()
                .map_err(|_| anyhow!("scope must be 'baseline', 'all' or a province id, got '{id}'"))?;
            if table.get(ProvinceId(id)).is_none() {
                bail!("unknown province id {id}");
            }
            Some(ProvinceId(id))
        }
    };
    let entries = amsim::parse_corpus(&read(&artifact(cfg, POI))?)?;
    let lm = &cfg.lm;
    let train_province = |p: ProvinceId| -> Result<()> {
        let (w, c) = pipeline::train_scope(&entries, Scope::Province(p), lm)?;
        let (wp, cp) = geo_paths(p);
        write(&artifact(cfg, "lm").join(wp), &w.to_arpa())?;
        write(&artifact(cfg, "lm").join(cp), &c.to_arpa())?;
        eprintln!(
            "province {}: {} word / {} character n-grams, cutoffs {}",
            p,
            w.total_ngrams(),
            c.total_ngrams(),
            cutoffs(&lm.geo_cutoffs)
        );
        Ok(())
    };
    match target {
        Some(p) => train_province(p)?,
        None => {
            let (w, c) = pipeline::train_scope(&entries, Scope::Baseline, lm)?;
            let r = pipeline::train_rescorer(&entries, lm)?;
            write(&artifact(cfg, BASE_WORD), &w.to_arpa())?;
            write(&artifact(cfg, BASE_CHAR), &c.to_arpa())?;
            write(&artifact(cfg, RESCORER), &r.to_arpa())?;
            eprintln!(
                "baseline: {} word / {} character n-grams, cutoffs {}",
                w.total_ngrams(),
                c.total_ngrams(),
                cutoffs(&lm.baseline_cutoffs)
            );
            if scope == "all" {
                let mut provinces: Vec<ProvinceId> = entries.iter().map(|e| e.province).collect();
                provinces.sort();
                provinces.dedup();
                for p in provinces {
                    train_province(p)?;
                }
            }
        }
    }
    let n = write_geo_manifest(cfg, &table)?;
    eprintln!("{n} province models registered");
    Ok(())
}

pub fn build_graph(cfg: &Config) -> Result<()> {
    let lexicon = Lexicon::from_text(&read(&artifact(cfg, LEXICON))?)?;
    let base = load_arpa(&artifact(cfg, BASE_WORD))?;
    let bigram = base.make_bigram_subset()?;
    let words = Arc::new(lexicon.word_symbols());
    let l = graph::build_lexicon_fst(&lexicon)?;
    let g_bi = graph::ngram_to_fst(&bigram, &words)?;
    let s = graph::build_static_part(&l, &g_bi)?;
    write(&artifact(cfg, UNIT_SYMS), &lexicon.unit_symbols().to_text())?;
    write(&artifact(cfg, WORD_SYMS), &words.to_text())?;
    write(&artifact(cfg, STATIC_FST), &s.to_text())?;
    eprintln!("static graph: {} states, {} arcs", s.num_states(), s.num_arcs());
    Ok(())
}

fn load_models(cfg: &Config) -> Result<LanguageModels> {
    let manifest = artifact(cfg, GEO_MANIFEST);
    let geo = if manifest.is_file() {
        GeoLmStore::from_manifest(&manifest)?
    } else {
        GeoLmStore::new()
    };
    Ok(LanguageModels {
        base_word: Arc::new(load_arpa(&artifact(cfg, BASE_WORD))?),
        base_char: Arc::new(load_arpa(&artifact(cfg, BASE_CHAR))?),
        rescorer: Arc::new(load_arpa(&artifact(cfg, RESCORER))?),
        geo,
    })
}

fn load_recognizer(cfg: &Config) -> Result<Recognizer> {
    let lexicon = Lexicon::from_text(&read(&artifact(cfg, LEXICON))?)?;
    let units = Arc::new(SymbolTable::from_text(&read(&artifact(cfg, UNIT_SYMS))?)?);
    let words = Arc::new(SymbolTable::from_text(&read(&artifact(cfg, WORD_SYMS))?)?);
    let s = Wfst::from_text(&read(&artifact(cfg, STATIC_FST))?, units, words)?;
    let rec = Recognizer::with_static_part(lexicon, load_models(cfg)?, cfg.provinces()?, s)
        .context("the static graph is stale; rerun build-graph")?;
    Ok(rec)
}

fn default_nbest(cfg: &Config, lambda: f64) -> PathBuf {
    artifact(cfg, &format!("decode/nbest.lambda{lambda}.txt"))
}

pub fn decode(
    cfg: &Config,
    manifest: Option<PathBuf>,
    emissions: Option<PathBuf>,
    lambda: Option<f64>,
    out: Option<PathBuf>,
) -> Result<()> {
    let lambda = lambda.unwrap_or(cfg.interpolation.lambda);
    if !(0.0..=1.0).contains(&lambda) {
        bail!("lambda = {lambda} is outside [0, 1]");
    }
    let manifest = manifest.unwrap_or_else(|| artifact(cfg, TEST));
    let out = out.unwrap_or_else(|| default_nbest(cfg, lambda));
    let utts = amsim::parse_manifest(&read(&manifest)?)?;
    let rec = load_recognizer(cfg)?;
    let confusion = rec.confusion(&cfg.acoustic);

    // Utterances sharing a graph are decoded in manifest order by one worker,
    // so the output does not depend on the number of workers.
    let mut groups: BTreeMap<Option<ProvinceId>, Vec<usize>> = BTreeMap::new();
    for (i, u) in utts.iter().enumerate() {
        let p = rec.table.resolve(u.lat, u.lon).province;
        groups.entry(rec.graph_key(p, lambda)).or_default().push(i);
    }
    let groups: Vec<Vec<usize>> = groups.into_values().collect();
    let one = |u: &TestUtterance| -> Result<NBestList> {
        let em = match &emissions {
            Some(dir) => {
                let path = dir.join(format!("{}.post", u.id));
                EmissionSequence::from_text(&read(&path)?, rec.units.clone())?
            }
            None => rec.simulate(u, &confusion, &cfg.acoustic)?,
        };
        let fp = rec.first_pass(&em, u.lat, u.lon, lambda, &cfg.decode)?;
        Ok(NBestList {
            utt_id: u.id.clone(),
            province: Some(fp.province.0),
            hyps: fp.hyps,
        })
    };
    let mut results: Vec<(usize, Result<NBestList>)> = pool(cfg)?.install(|| {
        groups
            .par_iter()
            .flat_map_iter(|g| g.iter().map(|&i| (i, one(&utts[i]))).collect::<Vec<_>>())
            .collect()
    });
    results.sort_by_key(|r| r.0);

    let mut text = String::new();
    let mut failures = String::new();
    let mut failed = 0;
    for (i, r) in results {
        match r {
            Ok(list) => text.push_str(&list.to_text()),
            Err(e) => {
                failed += 1;
                failures.push_str(&format!("{}\t{e:#}\n", utts[i].id));
            }
        }
    }
    write(&out, &text)?;
    let fail_path = PathBuf::from(format!("{}.failures", out.display()));
    write(&fail_path, &failures)?;
    eprintln!(
        "decoded {} of {} utterances at lambda {lambda} into {}",
        utts.len() - failed,
        utts.len(),
        out.display()
    );
    if failed > 0 {
        eprintln!("{failed} utterances failed; see {}", fail_path.display());
    }
    Ok(())
}

pub fn rescore(cfg: &Config, nbest: &Path, out: Option<PathBuf>) -> Result<()> {
    let lists = NBestList::parse_many(&read(nbest)?).with_context(|| format!("parsing {}", nbest.display()))?;
    let lms = load_models(cfg)?;
    let out = out.unwrap_or_else(|| nbest.with_extension("rescored.txt"));
    let texts: Vec<Result<String>> = pool(cfg)?.install(|| {
        lists
            .par_iter()
            .map(|l| {
                let r = pipeline::rescore_list(&lms, l, &cfg.interpolation, cfg.decode.lm_scale)
                    .with_context(|| format!("rescoring {}", l.utt_id))?;
                Ok(rescore::rescored_to_text(&l.utt_id, l.province, &r))
            })
            .collect()
    });
    let text = texts.into_iter().collect::<Result<String>>()?;
    write(&out, &text)?;
    eprintln!("rescored {} lists into {}", lists.len(), out.display());
    Ok(())
}

/// Top-ranked word sequence per utterance from an n-best or rescored file,
/// in file order.
fn top_hypotheses(path: &Path) -> Result<Vec<(String, Vec<String>)>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in read(path)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 8 && f.len() != 11 {
            bail!("{}:{}: not an n-best or rescored line", path.display(), i + 1);
        }
        if f[2] == "1" {
            if !seen.insert(f[0].to_string()) {
                bail!("{}:{}: utterance {} ranked first twice", path.display(), i + 1, f[0]);
            }
            let words = f[f.len() - 1].split_whitespace().map(String::from).collect();
            out.push((f[0].to_string(), words));
        }
    }
    Ok(out)
}

fn offenders(ids: &[&str]) -> String {
    let shown: Vec<&str> = ids.iter().take(10).copied().collect();
    let more = ids.len().saturating_sub(shown.len());
    if more > 0 {
        format!("{} and {more} more", shown.join(", "))
    } else {
        shown.join(", ")
    }
}

fn report(
    cfg: &Config,
    table: &ProvinceTable,
    refs: &[TestUtterance],
    hyps: &Path,
    group: Grouping,
    allow_missing: bool,
) -> Result<CerReport> {
    let top = top_hypotheses(hyps)?;
    let known: HashSet<&str> = refs.iter().map(|u| u.id.as_str()).collect();
    let unknown: Vec<&str> = top.iter().map(|(id, _)| id.as_str()).filter(|id| !known.contains(id)).collect();
    if !unknown.is_empty() {
        bail!("{} has utterances missing from the references: {}", hyps.display(), offenders(&unknown));
    }
    let by_id: HashMap<&str, &[String]> = top.iter().map(|(id, w)| (id.as_str(), w.as_slice())).collect();
    let missing: Vec<&str> = refs.iter().map(|u| u.id.as_str()).filter(|id| !by_id.contains_key(id)).collect();
    if !missing.is_empty() && !allow_missing {
        bail!("{} has no hypothesis for: {}", hyps.display(), offenders(&missing));
    }
    let mut rep = CerReport::new();
    for u in refs {
        let reference = u.reference();
        if reference.is_empty() {
            continue;
        }
        let hyp = by_id.get(u.id.as_str()).map(|w| w.concat()).unwrap_or_default();
        let counts: EditCounts = evalkit::cer(&reference, &hyp)?;
        let name = match group {
            Grouping::Province => format!("province{}", u.province),
            Grouping::Region => match table.region_of(u.province) {
                Some(r) => format!("region{r}"),
                None => "region?".to_string(),
            },
            Grouping::Accent => format!("accent-{}", cfg.acoustic.accent.name()),
        };
        rep.add(&[name], counts);
    }
    Ok(rep)
}

pub fn eval(
    cfg: &Config,
    refs: Option<PathBuf>,
    hyps: &Path,
    baseline: Option<&Path>,
    group: Grouping,
    allow_missing: bool,
    out: Option<PathBuf>,
) -> Result<()> {
    let refs_path = refs.unwrap_or_else(|| artifact(cfg, TEST));
    let refs = amsim::parse_manifest(&read(&refs_path)?)?;
    let table = cfg.provinces()?;
    let rep = report(cfg, &table, &refs, hyps, group, allow_missing)?;
    let base = baseline
        .map(|b| report(cfg, &table, &refs, b, group, allow_missing))
        .transpose()?;
    let text = rep.to_table(base.as_ref());
    print!("{text}");
    if let Some(out) = out {
        write(&out, &text)?;
    }
    Ok(())
}
