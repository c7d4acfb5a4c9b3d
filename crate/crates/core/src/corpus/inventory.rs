use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::CorpusError;

/// Default 62-symbol phoneme inventory.
///
/// Five plain vowels, five long vowels, five devoiced vowels, the moraic
/// nasal and geminate, plain and palatalized consonants, and three silence
/// symbols. Override it with an inventory file when the corpus uses a
/// different phone set.
pub const DEFAULT_PHONEMES: [&str; 62] = [
    "a", "i", "u", "e", "o", "a:", "i:", "u:", "e:", "o:", "A", "I", "U", "E", "O", "N", "Q", "k",
    "g", "s", "sh", "z", "j", "t", "ts", "ch", "d", "n", "h", "f", "b", "p", "m", "y", "r", "w",
    "v", "ky", "gy", "ny", "hy", "by", "py", "my", "ry", "ty", "dy", "ng", "ngy", "kw", "gw", "fy",
    "vy", "tw", "dw", "sy", "zy", "tsy", "hw", "sil", "pau", "sp",
];

/// Default mora-core symbols: vowels, long vowels, geminate and moraic nasal.
/// Devoiced vowels are deliberately left out; add them through an inventory
/// file if the corpus treats them as mora carriers.
pub const DEFAULT_MORA_CORE: [&str; 12] = [
    "a", "i", "u", "e", "o", "a:", "i:", "u:", "e:", "o:", "Q", "N",
];

/// A closed phoneme inventory with its mora-core subset.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Inventory {
    symbols: Vec<String>,
    index: HashMap<String, usize>,
    mora_core: HashSet<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InventoryFile {
    symbols: Vec<String>,
    mora_core: Vec<String>,
}

impl Default for Inventory {
    fn default() -> Self {
        Inventory::new(DEFAULT_PHONEMES, DEFAULT_MORA_CORE).expect("default inventory is valid")
    }
}

impl Inventory {
    pub fn new<S, C>(symbols: S, mora_core: C) -> Result<Self, CorpusError>
    where
        S: IntoIterator,
        S::Item: Into<String>,
        C: IntoIterator,
        C::Item: Into<String>,
    {
        let symbols: Vec<String> = symbols.into_iter().map(Into::into).collect();
        let mut index = HashMap::with_capacity(symbols.len());
        for (i, s) in symbols.iter().enumerate() {
            if s.is_empty() || s.chars().any(char::is_whitespace) {
                return Err(CorpusError::InvalidInventory(format!(
                    "phoneme symbol {s:?} is empty or contains whitespace"
                )));
            }
            if index.insert(s.clone(), i).is_some() {
                return Err(CorpusError::InvalidInventory(format!(
                    "duplicate phoneme symbol {s:?}"
                )));
            }
        }
        let mut core = HashSet::new();
        for c in mora_core {
            let c: String = c.into();
            if !index.contains_key(&c) {
                return Err(CorpusError::InvalidInventory(format!(
                    "mora-core symbol {c:?} is not in the inventory"
                )));
            }
            core.insert(c);
        }
        Ok(Inventory {
            symbols,
            index,
            mora_core: core,
        })
    }

    /// Loads `{"symbols": [...], "mora_core": [...]}` from a JSON file.
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let file: InventoryFile = serde_json::from_str(&text)
            .map_err(|e| CorpusError::InvalidInventory(format!("{}: {e}", path.display())))?;
        Inventory::new(file.symbols, file.mora_core)
    }

    pub fn to_json(&self) -> String {
        let mut core: Vec<String> = self.mora_core.iter().cloned().collect();
        core.sort_by_key(|c| self.index[c]);
        serde_json::to_string_pretty(&InventoryFile {
            symbols: self.symbols.clone(),
            mora_core: core,
        })
        .expect("inventory serializes")
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn index_of(&self, symbol: &str) -> Result<usize, CorpusError> {
        self.index
            .get(symbol)
            .copied()
            .ok_or_else(|| CorpusError::UnknownSymbol {
                line: None,
                symbol: symbol.to_owned(),
            })
    }

    pub fn contains(&self, symbol: &str) -> bool {
        self.index.contains_key(symbol)
    }

    /// Whether `symbol` carries a mora label. Errors for symbols outside the
    /// inventory.
    pub fn is_mora_core(&self, symbol: &str) -> Result<bool, CorpusError> {
        self.index_of(symbol)?;
        Ok(self.mora_core.contains(symbol))
    }
}

/// Free-function form of [`Inventory::is_mora_core`].
pub fn is_mora_core(symbol: &str, inventory: &Inventory) -> Result<bool, CorpusError> {
    inventory.is_mora_core(symbol)
}
