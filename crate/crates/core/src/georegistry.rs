//! Province lookup and the per-province language model store.
//!
//! The built-in table has 34 provinces with simplified polygons, each mapped
//! to one of 10 dialect regions. Points outside every polygon resolve to a
//! designated fallback province.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use thiserror::Error;

use crate::ngram::{NGramModel, NgramError};

pub const NUM_PROVINCES: usize = 34;
pub const NUM_REGIONS: u8 = 10;

const BUILTIN_TABLE: &str = include_str!("../data/provinces.tsv");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ProvinceId(pub u32);

impl fmt::Display for ProvinceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Dialect region, 1..=10.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DialectRegion(pub u8);

impl DialectRegion {
    /// Zero-based index, for one-hot encodings and head selection.
    pub fn index(self) -> usize {
        usize::from(self.0) - 1
    }
}

impl fmt::Display for DialectRegion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Error)]
pub enum GeoError {
    #[error("province table line {line}: {msg}")]
    Table { line: usize, msg: String },
    #[error("province table is inconsistent: {0}")]
    Invalid(String),
    #[error("province {0} is not registered")]
    Unregistered(ProvinceId),
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("failed to load model {path}: {source}")]
    Model { path: PathBuf, source: NgramError },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Province {
    pub id: ProvinceId,
    pub name: String,
    pub region: DialectRegion,
    /// (lat, lon) vertices, implicitly closed.
    pub polygon: Vec<(f64, f64)>,
    bbox: (f64, f64, f64, f64),
}

impl Province {
    pub fn new(id: ProvinceId, name: &str, region: DialectRegion, polygon: Vec<(f64, f64)>) -> Self {
        let mut bbox = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for &(lat, lon) in &polygon {
            bbox.0 = bbox.0.min(lat);
            bbox.1 = bbox.1.min(lon);
            bbox.2 = bbox.2.max(lat);
            bbox.3 = bbox.3.max(lon);
        }
        Province {
            id,
            name: name.to_string(),
            region,
            polygon,
            bbox,
        }
    }

    /// Winding-number containment test.
    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        let (lat0, lon0, lat1, lon1) = self.bbox;
        if lat < lat0 || lat > lat1 || lon < lon0 || lon > lon1 {
            return false;
        }
        winding_number(&self.polygon, lat, lon) != 0
    }
}

// x = lon, y = lat
fn winding_number(poly: &[(f64, f64)], lat: f64, lon: f64) -> i32 {
    let mut wn = 0;
    let n = poly.len();
    for i in 0..n {
        let (y0, x0) = poly[i];
        let (y1, x1) = poly[(i + 1) % n];
        let side = (x1 - x0) * (lat - y0) - (lon - x0) * (y1 - y0);
        if y0 <= lat {
            if y1 > lat && side > 0.0 {
                wn += 1;
            }
        } else if y1 <= lat && side < 0.0 {
            wn -= 1;
        }
    }
    wn
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Resolution {
    pub province: ProvinceId,
    pub region: DialectRegion,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProvinceTable {
    provinces: Vec<Province>,
    fallback: ProvinceId,
}

impl ProvinceTable {
    pub fn builtin() -> Self {
        Self::parse(BUILTIN_TABLE).expect("built-in province table is valid")
    }

    /// Parses `fallback<TAB>id` and `id<TAB>name<TAB>region<TAB>lat lon;lat lon;...`
    /// records. `#` starts a comment line.
    pub fn parse(text: &str) -> Result<Self, GeoError> {
        let err = |line: usize, msg: &str| GeoError::Table {
            line: line + 1,
            msg: msg.to_string(),
        };
        let mut provinces = Vec::new();
        let mut fallback = None;
        for (i, line) in text.lines().enumerate() {
            let t = line.trim_end();
            if t.trim().is_empty() || t.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = t.split('\t').collect();
            if f[0] == "fallback" {
                let id = f
                    .get(1)
                    .and_then(|s| s.trim().parse().ok())
                    .ok_or_else(|| err(i, "bad fallback id"))?;
                fallback = Some(ProvinceId(id));
                continue;
            }
            if f.len() != 4 {
                return Err(err(i, "expected id, name, region, polygon"));
            }
            let id: u32 = f[0].trim().parse().map_err(|_| err(i, "bad province id"))?;
            let region: u8 = f[2].trim().parse().map_err(|_| err(i, "bad region"))?;
            let mut polygon = Vec::new();
            for v in f[3].split(';') {
                let mut it = v.split_whitespace().map(str::parse::<f64>);
                match (it.next(), it.next(), it.next()) {
                    (Some(Ok(lat)), Some(Ok(lon)), None) => polygon.push((lat, lon)),
                    _ => return Err(err(i, "bad polygon vertex")),
                }
            }
            if polygon.len() < 3 {
                return Err(err(i, "polygon needs at least 3 vertices"));
            }
            provinces.push(Province::new(
                ProvinceId(id),
                f[1].trim(),
                DialectRegion(region),
                polygon,
            ));
        }
        let fallback = fallback.ok_or_else(|| GeoError::Invalid("no fallback province".into()))?;
        let table = ProvinceTable {
            provinces,
            fallback,
        };
        table.validate()?;
        Ok(table)
    }

    fn validate(&self) -> Result<(), GeoError> {
        if self.provinces.len() != NUM_PROVINCES {
            return Err(GeoError::Invalid(format!(
                "expected {NUM_PROVINCES} provinces, found {}",
                self.provinces.len()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        let mut regions = [false; NUM_REGIONS as usize];
        for p in &self.provinces {
            if !seen.insert(p.id) {
                return Err(GeoError::Invalid(format!("duplicate province id {}", p.id)));
            }
            if !(1..=NUM_REGIONS).contains(&p.region.0) {
                return Err(GeoError::Invalid(format!(
                    "province {} has region {} outside 1..={NUM_REGIONS}",
                    p.id, p.region
                )));
            }
            regions[p.region.index()] = true;
        }
        if let Some(r) = regions.iter().position(|&x| !x) {
            return Err(GeoError::Invalid(format!("no province in region {}", r + 1)));
        }
        if !seen.contains(&self.fallback) {
            return Err(GeoError::Invalid("fallback province is not in the table".into()));
        }
        Ok(())
    }

    pub fn provinces(&self) -> &[Province] {
        &self.provinces
    }

    pub fn get(&self, id: ProvinceId) -> Option<&Province> {
        self.provinces.iter().find(|p| p.id == id)
    }

    pub fn by_name(&self, name: &str) -> Option<&Province> {
        self.provinces
            .iter()
            .find(|p| p.name.eq_ignore_ascii_case(name))
    }

    pub fn fallback(&self) -> ProvinceId {
        self.fallback
    }

    pub fn region_of(&self, id: ProvinceId) -> Option<DialectRegion> {
        self.get(id).map(|p| p.region)
    }

    /// Province containing the point (first match in table order), or the
    /// fallback province. Non-finite coordinates resolve to the fallback.
    pub fn resolve(&self, lat: f64, lon: f64) -> Resolution {
        let hit = if lat.is_finite() && lon.is_finite() {
            self.provinces.iter().find(|p| p.contains(lat, lon))
        } else {
            None
        };
        let p = hit.unwrap_or_else(|| self.get(self.fallback).expect("validated fallback"));
        Resolution {
            province: p.id,
            region: p.region,
        }
    }

    /// A point strictly inside the province polygon (vertex centroid for the
    /// convex cells of the built-in table, otherwise a nudged vertex average).
    pub fn interior_point(&self, id: ProvinceId) -> Option<(f64, f64)> {
        let p = self.get(id)?;
        let n = p.polygon.len() as f64;
        let c = p
            .polygon
            .iter()
            .fold((0.0, 0.0), |acc, v| (acc.0 + v.0 / n, acc.1 + v.1 / n));
        if p.contains(c.0, c.1) {
            return Some(c);
        }
        p.polygon.iter().find_map(|&v| {
            let q = (v.0 + 0.05 * (c.0 - v.0), v.1 + 0.05 * (c.1 - v.1));
            p.contains(q.0, q.1).then_some(q)
        })
    }
}

/// Language model granularity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LmLevel {
    Word,
    Character,
}

#[derive(Default)]
struct Slot {
    path: Option<PathBuf>,
    model: Mutex<Option<Arc<NGramModel>>>,
}

impl Slot {
    fn get(&self, loads: &AtomicUsize) -> Result<Arc<NGramModel>, GeoError> {
        let mut guard = self.model.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(m) = guard.as_ref() {
            return Ok(m.clone());
        }
        let path = self.path.as_ref().expect("unloaded slot has a path");
        let text = std::fs::read_to_string(path).map_err(|source| GeoError::Io {
            path: path.clone(),
            source,
        })?;
        let model = NGramModel::from_arpa(&text).map_err(|source| GeoError::Model {
            path: path.clone(),
            source,
        })?;
        loads.fetch_add(1, Ordering::SeqCst);
        let m = Arc::new(model);
        *guard = Some(m.clone());
        Ok(m)
    }
}

/// Per-province word- and character-level models, loaded on first request
/// and kept resident afterwards.
#[derive(Default)]
pub struct GeoLmStore {
    slots: BTreeMap<ProvinceId, (Slot, Slot)>,
    loads: AtomicUsize,
}

impl GeoLmStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Reads a manifest of `province_id<TAB>word_arpa<TAB>char_arpa` lines.
    /// Relative paths are resolved against the manifest's directory.
    pub fn from_manifest(path: &Path) -> Result<Self, GeoError> {
        let text = std::fs::read_to_string(path).map_err(|source| GeoError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut store = GeoLmStore::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            let bad = || GeoError::Table {
                line: i + 1,
                msg: "expected province_id<TAB>word_arpa<TAB>char_arpa".into(),
            };
            if f.len() != 3 {
                return Err(bad());
            }
            let id: u32 = f[0].trim().parse().map_err(|_| bad())?;
            store.register_files(ProvinceId(id), base.join(f[1]), base.join(f[2]));
        }
        Ok(store)
    }

    pub fn register_files(&mut self, id: ProvinceId, word: PathBuf, character: PathBuf) {
        let slot = |p| Slot {
            path: Some(p),
            model: Mutex::new(None),
        };
        self.slots.insert(id, (slot(word), slot(character)));
    }

    /// Registers already-loaded models.
    pub fn insert(&mut self, id: ProvinceId, word: Arc<NGramModel>, character: Arc<NGramModel>) {
        let slot = |m| Slot {
            path: None,
            model: Mutex::new(Some(m)),
        };
        self.slots.insert(id, (slot(word), slot(character)));
    }

    pub fn contains(&self, id: ProvinceId) -> bool {
        self.slots.contains_key(&id)
    }

    pub fn provinces(&self) -> impl Iterator<Item = ProvinceId> + '_ {
        self.slots.keys().copied()
    }

    /// Number of model files read so far.
    pub fn loads(&self) -> usize {
        self.loads.load(Ordering::SeqCst)
    }

    pub fn select_geo_lm(&self, id: ProvinceId, level: LmLevel) -> Result<Arc<NGramModel>, GeoError> {
        let (w, c) = self.slots.get(&id).ok_or(GeoError::Unregistered(id))?;
        match level {
            LmLevel::Word => w.get(&self.loads),
            LmLevel::Character => c.get(&self.loads),
        }
    }
}
