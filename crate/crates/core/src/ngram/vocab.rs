use rustc_hash::FxHashMap as HashMap;

/// Dense token id inside one [`Vocabulary`].
pub type WordId = u32;

pub const UNK: &str = "<unk>";
pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";

pub const UNK_ID: WordId = 0;
pub const BOS_ID: WordId = 1;
pub const EOS_ID: WordId = 2;

/// Bijective token table. The three reserved tokens always occupy ids 0..3.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    symbols: Vec<String>,
    ids: HashMap<String, WordId>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocabulary {
    pub fn new() -> Self {
        let mut v = Vocabulary {
            symbols: Vec::new(),
            ids: HashMap::default(),
        };
        for t in [UNK, BOS, EOS] {
            v.insert(t);
        }
        v
    }

    /// Returns the id of `token`, adding it if absent.
    pub fn insert(&mut self, token: &str) -> WordId {
        if let Some(&id) = self.ids.get(token) {
            return id;
        }
        let id = self.symbols.len() as WordId;
        self.symbols.push(token.to_string());
        self.ids.insert(token.to_string(), id);
        id
    }

    pub fn get(&self, token: &str) -> Option<WordId> {
        self.ids.get(token).copied()
    }

    /// Id of `token`, or the unknown id when it is not in the table.
    pub fn id_or_unk(&self, token: &str) -> WordId {
        self.get(token).unwrap_or(UNK_ID)
    }

    pub fn symbol(&self, id: WordId) -> Option<&str> {
        self.symbols.get(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.ids.contains_key(token)
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    /// Ids that can be predicted by a model: everything except `<s>`.
    pub fn predictable(&self) -> impl Iterator<Item = WordId> + '_ {
        (0..self.symbols.len() as WordId).filter(|&id| id != BOS_ID)
    }

    pub fn is_reserved(id: WordId) -> bool {
        id <= EOS_ID
    }
}
