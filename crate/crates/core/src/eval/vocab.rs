use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::align::{cosine, embed_texts, EmbeddingProvider, EmbeddingVector, TextItem};
use crate::error::{Error, Result};
use crate::llm::{chat, ChatClient, ChatConfig, ChatMessage};

/// Category assigned when an answer cannot be mapped.
pub const UNKNOWN: &str = "unknown";

const ARTICLES: [&str; 3] = ["a", "an", "the"];

fn is_terminal_punct(c: char) -> bool {
    matches!(c, '.' | ',' | ';' | ':' | '!' | '?' | '"' | '\'' | '`' | ')' | ']')
}

/// Lowercases, turns hyphens into spaces, drops terminal punctuation and
/// leading articles, and collapses whitespace.
pub fn normalize_label(s: &str) -> String {
    let lowered = s.to_lowercase().replace('-', " ");
    let trimmed = lowered.trim_end_matches(|c: char| c.is_whitespace() || is_terminal_punct(c));
    let mut words: &[&str] = &trimmed.split_whitespace().collect::<Vec<_>>();
    while words.len() > 1 && ARTICLES.contains(&words[0]) {
        words = &words[1..];
    }
    words.join(" ")
}

/// On-disk vocabulary: `{"categories": [...], "synonyms": {alias: canonical}}`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VocabularyDocument {
    pub categories: Vec<String>,
    #[serde(default)]
    pub synonyms: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    categories: Vec<String>,
    /// normalized canonical name -> index
    canonical: HashMap<String, usize>,
    /// normalized alias -> index
    synonyms: BTreeMap<String, usize>,
}

impl Vocabulary {
    pub fn new(categories: Vec<String>, synonyms: &BTreeMap<String, String>) -> Result<Self> {
        if categories.is_empty() {
            return Err(Error::Vocabulary("vocabulary has no categories".into()));
        }
        let mut canonical = HashMap::new();
        for (i, c) in categories.iter().enumerate() {
            let key = normalize_label(c);
            if key.is_empty() {
                return Err(Error::Vocabulary(format!("category {i} is blank")));
            }
            if key == UNKNOWN {
                return Err(Error::Vocabulary("\"unknown\" is reserved".into()));
            }
            if canonical.insert(key, i).is_some() {
                return Err(Error::Vocabulary(format!("duplicate category {c:?}")));
            }
        }
        let mut syn = BTreeMap::new();
        for (alias, target) in synonyms {
            let idx = *canonical.get(&normalize_label(target)).ok_or_else(|| {
                Error::Vocabulary(format!("synonym {alias:?} maps to unknown category {target:?}"))
            })?;
            let key = normalize_label(alias);
            if key.is_empty() {
                return Err(Error::Vocabulary(format!("blank synonym for {target:?}")));
            }
            if let Some(&other) = canonical.get(&key) {
                if other != idx {
                    return Err(Error::Vocabulary(format!(
                        "synonym {alias:?} collides with category {:?}",
                        categories[other]
                    )));
                }
                continue;
            }
            syn.insert(key, idx);
        }
        Ok(Vocabulary {
            categories: categories.into_iter().map(|c| c.trim().to_string()).collect(),
            canonical,
            synonyms: syn,
        })
    }

    pub fn from_document(doc: &VocabularyDocument) -> Result<Self> {
        Vocabulary::new(doc.categories.clone(), &doc.synonyms)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let doc: VocabularyDocument = serde_json::from_str(&text)
            .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
        Vocabulary::from_document(&doc)
    }

    pub fn categories(&self) -> &[String] {
        &self.categories
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    /// The canonical spelling of `name`, if it names a category.
    pub fn canonical(&self, name: &str) -> Option<&str> {
        self.canonical
            .get(&normalize_label(name))
            .map(|&i| self.categories[i].as_str())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.canonical(name).is_some()
    }

    fn exact(&self, normalized: &str) -> Option<usize> {
        self.canonical.get(normalized).copied()
    }

    fn synonym(&self, normalized: &str) -> Option<usize> {
        self.synonyms.get(normalized).copied()
    }

    /// Categories named (by canonical or synonym) as whole words inside the
    /// answer. A key nested inside a longer matching key is ignored, so
    /// "storage tank" does not also count as "tank".
    fn contained(&self, normalized: &str) -> Option<usize> {
        let padded = format!(" {normalized} ");
        let hits: Vec<(&str, usize)> = self
            .canonical
            .iter()
            .chain(self.synonyms.iter())
            .filter(|(k, _)| padded.contains(&format!(" {k} ")))
            .map(|(k, &i)| (k.as_str(), i))
            .collect();
        let kept: HashSet<usize> = hits
            .iter()
            .filter(|(k, _)| {
                !hits
                    .iter()
                    .any(|(o, _)| o.len() > k.len() && format!(" {o} ").contains(&format!(" {k} ")))
            })
            .map(|&(_, i)| i)
            .collect();
        if kept.len() == 1 {
            kept.into_iter().next()
        } else {
            None
        }
    }
}

/// Nearest category name by text-embedding cosine, used when the string
/// rules find nothing.
pub struct EmbeddingFallback<'a> {
    provider: &'a dyn EmbeddingProvider,
    names: Vec<(String, EmbeddingVector)>,
    floor: f64,
}

pub const DEFAULT_FALLBACK_FLOOR: f64 = 0.85;

impl<'a> EmbeddingFallback<'a> {
    /// Embeds every category name once. Text ids are `category:<name>`.
    pub fn new(provider: &'a dyn EmbeddingProvider, v: &Vocabulary, floor: f64) -> Result<Self> {
        let ids: Vec<String> = v.categories().iter().map(|c| format!("category:{c}")).collect();
        let items: Vec<TextItem<'_>> = ids
            .iter()
            .zip(v.categories())
            .map(|(id, text)| TextItem { id, text })
            .collect();
        let vecs = embed_texts(provider, &items)?;
        Ok(EmbeddingFallback {
            provider,
            names: v.categories().iter().cloned().zip(vecs).collect(),
            floor,
        })
    }

    /// Text ids for answers are `answer:<normalized answer>`.
    pub fn nearest(&self, normalized: &str) -> Result<Option<String>> {
        let id = format!("answer:{normalized}");
        let q = embed_texts(self.provider, &[TextItem { id: &id, text: normalized }])?
            .pop()
            .expect("one vector per text");
        let mut best: Option<(f64, &str)> = None;
        for (name, v) in &self.names {
            let c = cosine(&q, v)?;
            if best.is_none_or(|(b, _)| c > b) {
                best = Some((c, name));
            }
        }
        Ok(best
            .filter(|(c, _)| *c >= self.floor)
            .map(|(_, n)| n.to_string()))
    }
}

/// Re-projects a free-form answer onto the vocabulary: exact match, then
/// synonym, then unique containment, then the optional embedding fallback,
/// else [`UNKNOWN`].
pub fn map_answer(raw: &str, v: &Vocabulary, fallback: Option<&EmbeddingFallback<'_>>) -> Result<String> {
    let n = normalize_label(raw);
    if n.is_empty() {
        return Ok(UNKNOWN.into());
    }
    if let Some(i) = v.exact(&n).or_else(|| v.synonym(&n)).or_else(|| v.contained(&n)) {
        return Ok(v.categories[i].clone());
    }
    if let Some(f) = fallback {
        if let Some(name) = f.nearest(&n)? {
            return Ok(name);
        }
    }
    Ok(UNKNOWN.into())
}

/// Swap-set file: `{"set_id": "texts-1", "aliases": {canonical: alias}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwapSetDocument {
    pub set_id: String,
    pub aliases: BTreeMap<String, String>,
}

/// A textually different name for every category, in vocabulary order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SwapSet {
    pub set_id: String,
    /// (canonical, alias)
    pub pairs: Vec<(String, String)>,
}

impl SwapSet {
    pub fn alias_vocab(&self) -> Vec<&str> {
        self.pairs.iter().map(|(_, a)| a.as_str()).collect()
    }

    /// A vocabulary whose categories are the aliases.
    pub fn alias_vocabulary(&self) -> Result<Vocabulary> {
        Vocabulary::new(
            self.pairs.iter().map(|(_, a)| a.clone()).collect(),
            &BTreeMap::new(),
        )
    }

    pub fn to_alias(&self, canonical: &str) -> Option<&str> {
        let key = normalize_label(canonical);
        self.pairs
            .iter()
            .find(|(c, _)| normalize_label(c) == key)
            .map(|(_, a)| a.as_str())
    }

    /// Maps an alias back to its canonical name; [`UNKNOWN`] stays unknown.
    pub fn to_canonical(&self, alias: &str) -> Option<&str> {
        if alias == UNKNOWN {
            return Some(UNKNOWN);
        }
        let key = normalize_label(alias);
        self.pairs
            .iter()
            .find(|(_, a)| normalize_label(a) == key)
            .map(|(c, _)| c.as_str())
    }

    pub fn to_document(&self) -> SwapSetDocument {
        SwapSetDocument {
            set_id: self.set_id.clone(),
            aliases: self.pairs.iter().cloned().collect(),
        }
    }
}

pub enum SwapSource<'a> {
    File(&'a Path),
    Document(SwapSetDocument),
    /// Ask a chat model for one alias per category.
    Chat {
        set_id: String,
        client: &'a dyn ChatClient,
        cfg: &'a ChatConfig,
    },
}

/// The alias-request prompt. Replies are expected as `canonical => alias`
/// lines.
pub fn swap_prompt(v: &Vocabulary) -> String {
    let mut p = String::from(
        "For each category name below, give one noun or short noun phrase with the same meaning \
         that is spelled differently. Reply with one line per category in the form \
         `category => replacement` and nothing else.\n\n",
    );
    for c in v.categories() {
        p.push_str(c);
        p.push('\n');
    }
    p
}

fn parse_alias_reply(reply: &str) -> BTreeMap<String, String> {
    reply
        .lines()
        .filter_map(|l| {
            let l = l.trim().trim_start_matches(['-', '*', ' ']);
            let (c, a) = l.split_once("=>").or_else(|| l.split_once("->"))?;
            let (c, a) = (c.trim().trim_matches('`'), a.trim().trim_matches('`'));
            (!c.is_empty() && !a.is_empty()).then(|| (c.to_string(), a.to_string()))
        })
        .collect()
}

/// Builds and validates a swap set: exactly one alias per category, each
/// textually different from its canonical name, and no two alike.
pub fn build_swap_vocab(v: &Vocabulary, source: SwapSource<'_>) -> Result<SwapSet> {
    let doc = match source {
        SwapSource::File(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&text)
                .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?
        }
        SwapSource::Document(doc) => doc,
        SwapSource::Chat {
            set_id,
            client,
            cfg,
        } => {
            let reply = chat(client, &[ChatMessage::user(swap_prompt(v))], cfg)?;
            SwapSetDocument {
                set_id,
                aliases: parse_alias_reply(&reply),
            }
        }
    };
    if doc.set_id.trim().is_empty() {
        return Err(Error::SwapSet("blank set_id".into()));
    }
    if doc.aliases.len() != v.len() {
        return Err(Error::SwapSet(format!(
            "{}: {} aliases for {} categories",
            doc.set_id,
            doc.aliases.len(),
            v.len()
        )));
    }
    let mut by_canonical: HashMap<String, String> = HashMap::new();
    for (c, a) in &doc.aliases {
        let canonical = v
            .canonical(c)
            .ok_or_else(|| Error::SwapSet(format!("{}: {c:?} is not a category", doc.set_id)))?;
        if normalize_label(a) == normalize_label(canonical) {
            return Err(Error::SwapSet(format!(
                "{}: alias {a:?} is not textually different from {canonical:?}",
                doc.set_id
            )));
        }
        if by_canonical.insert(canonical.to_string(), a.trim().to_string()).is_some() {
            return Err(Error::SwapSet(format!("{}: {c:?} given twice", doc.set_id)));
        }
    }
    let mut seen = HashSet::new();
    for a in by_canonical.values() {
        let key = normalize_label(a);
        if key.is_empty() || key == UNKNOWN {
            return Err(Error::SwapSet(format!("{}: invalid alias {a:?}", doc.set_id)));
        }
        if !seen.insert(key) {
            return Err(Error::SwapSet(format!("{}: duplicate alias {a:?}", doc.set_id)));
        }
    }
    let pairs = v
        .categories()
        .iter()
        .map(|c| (c.clone(), by_canonical[c.as_str()].clone()))
        .collect();
    Ok(SwapSet {
        set_id: doc.set_id,
        pairs,
    })
}
