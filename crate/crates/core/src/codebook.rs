//! Snippet vocabulary: attribute-classed phrases that the text encoder
//! projects and crops are soft-aligned against.
//!
//! On disk a codebook is a JSON document:
//!
//! ```json
//! {"snippets": [{"id": "optional", "text": "Rectangular shape", "class": "shape", "domain": "remote_sensing"}]}
//! ```
//!
//! Missing ids are derived from a hash of class and text, so they are stable
//! across runs and machines.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::SceneKind;
use crate::llm::{chat, ChatClient, ChatConfig, ChatMessage};

macro_rules! string_enum {
    ($(#[$m:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$m])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(rename_all = "snake_case")]
        pub enum $name { $($variant),+ }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self { $($name::$variant => $text),+ }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = String;

            fn from_str(s: &str) -> std::result::Result<Self, String> {
                match s { $($text => Ok($name::$variant),)+ other => Err(other.to_string()) }
            }
        }
    };
}

string_enum!(
    /// Kind of evidence a snippet carries.
    AttributeClass {
        Appearance => "appearance",
        Shape => "shape",
        Relational => "relational",
        Spatial => "spatial",
        Semantic => "semantic",
        Functional => "functional",
        HighLevelCategory => "high_level_category",
        CommonCategory => "common_category",
        ComponentAttribute => "component_attribute",
        SceneDescription => "scene_description",
        ContextualClue => "contextual_clue",
    }
);

string_enum!(
    SceneDomain {
        Natural => "natural",
        RemoteSensing => "remote_sensing",
        Both => "both",
    }
);

impl SceneDomain {
    pub fn admits(self, scene: SceneKind) -> bool {
        matches!(
            (self, scene),
            (SceneDomain::Both, _)
                | (SceneDomain::Natural, SceneKind::Natural)
                | (SceneDomain::RemoteSensing, SceneKind::RemoteSensing)
        )
    }
}

impl From<SceneKind> for SceneDomain {
    fn from(k: SceneKind) -> Self {
        match k {
            SceneKind::Natural => SceneDomain::Natural,
            SceneKind::RemoteSensing => SceneDomain::RemoteSensing,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Snippet {
    pub snippet_id: String,
    pub text: String,
    pub attribute_class: AttributeClass,
    pub scene_domain: SceneDomain,
}

pub fn normalize_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Stable id from class and whitespace-normalized text.
pub fn snippet_id(text: &str, class: AttributeClass) -> String {
    let mut h = Sha256::new();
    h.update(class.as_str().as_bytes());
    h.update([0x1f]);
    h.update(normalize_whitespace(text).as_bytes());
    let digest = h.finalize();
    let hex: String = digest[..6].iter().map(|b| format!("{b:02x}")).collect();
    format!("s{hex}")
}

impl Snippet {
    pub fn new(text: &str, attribute_class: AttributeClass, scene_domain: SceneDomain) -> Self {
        let text = normalize_whitespace(text);
        Snippet {
            snippet_id: snippet_id(&text, attribute_class),
            text,
            attribute_class,
            scene_domain,
        }
    }
}

/// Raw file record; class and domain are kept as strings so that validation
/// can name unknown tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnippetRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub text: String,
    pub class: String,
    pub domain: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodebookDocument {
    pub snippets: Vec<SnippetRecord>,
}

impl CodebookDocument {
    pub fn parse(text: &str, location: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::parse(location, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub index: usize,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "snippet #{}: {}", self.index, self.message)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn validate(doc: &CodebookDocument) -> ValidationReport {
    let mut violations = Vec::new();
    let mut ids = HashSet::new();
    let mut pairs = HashSet::new();
    for (index, rec) in doc.snippets.iter().enumerate() {
        let mut push = |message: String| violations.push(Violation { index, message });
        let text = normalize_whitespace(&rec.text);
        if text.is_empty() {
            push("blank text".into());
        }
        let class = AttributeClass::from_str(&rec.class);
        if let Err(tok) = &class {
            push(format!("unknown attribute class {tok:?}"));
        }
        if let Err(tok) = SceneDomain::from_str(&rec.domain) {
            push(format!("unknown scene domain {tok:?}"));
        }
        if let Some(id) = &rec.id {
            if id.trim().is_empty() {
                push("blank id".into());
            } else if !ids.insert(id.clone()) {
                push(format!("duplicate id {id:?}"));
            }
        }
        if let Ok(class) = class {
            if !text.is_empty() && !pairs.insert((text.clone(), class, rec.domain.clone())) {
                push(format!("duplicate text {text:?} in class {class}"));
            }
        }
    }
    ValidationReport { violations }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Codebook {
    snippets: Vec<Snippet>,
    domain: SceneKind,
}

impl Codebook {
    pub fn new(snippets: Vec<Snippet>, domain: SceneKind) -> Result<Self> {
        if snippets.is_empty() {
            return Err(Error::Codebook(format!("no snippets for domain {domain}")));
        }
        let mut ids = HashSet::new();
        let mut pairs = HashSet::new();
        for s in &snippets {
            if s.text.trim().is_empty() {
                return Err(Error::Codebook(format!("snippet {} has blank text", s.snippet_id)));
            }
            if !ids.insert(s.snippet_id.as_str()) {
                return Err(Error::Codebook(format!("duplicate snippet id {}", s.snippet_id)));
            }
            if !pairs.insert((s.text.as_str(), s.attribute_class)) {
                return Err(Error::Codebook(format!(
                    "duplicate text {:?} in class {}",
                    s.text, s.attribute_class
                )));
            }
        }
        Ok(Codebook { snippets, domain })
    }

    /// Validates the document, then keeps the snippets admitted for `domain`.
    pub fn from_document(doc: &CodebookDocument, domain: SceneKind) -> Result<Self> {
        let report = validate(doc);
        if let Some(v) = report.violations.first() {
            return Err(Error::Codebook(format!(
                "{v} ({} violation(s) total)",
                report.violations.len()
            )));
        }
        let snippets = doc
            .snippets
            .iter()
            .filter_map(|rec| {
                // validated above
                let class = AttributeClass::from_str(&rec.class).ok()?;
                let scene_domain = SceneDomain::from_str(&rec.domain).ok()?;
                if !scene_domain.admits(domain) {
                    return None;
                }
                let mut s = Snippet::new(&rec.text, class, scene_domain);
                if let Some(id) = &rec.id {
                    s.snippet_id = id.clone();
                }
                Some(s)
            })
            .collect();
        Codebook::new(snippets, domain)
    }

    /// The bundled codebook built from the published example snippets plus
    /// category names for both scene kinds.
    pub fn starter(domain: SceneKind) -> Self {
        let doc = CodebookDocument::parse(STARTER_CODEBOOK, "starter_codebook.json")
            .expect("bundled codebook parses");
        Codebook::from_document(&doc, domain).expect("bundled codebook is valid")
    }

    pub fn snippets(&self) -> &[Snippet] {
        &self.snippets
    }

    pub fn domain(&self) -> SceneKind {
        self.domain
    }

    pub fn len(&self) -> usize {
        self.snippets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snippets.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Snippet> {
        self.snippets.iter().find(|s| s.snippet_id == id)
    }

    pub fn index(&self) -> HashMap<&str, &Snippet> {
        self.snippets
            .iter()
            .map(|s| (s.snippet_id.as_str(), s))
            .collect()
    }

    pub fn to_document(&self) -> CodebookDocument {
        CodebookDocument {
            snippets: self
                .snippets
                .iter()
                .map(|s| SnippetRecord {
                    id: Some(s.snippet_id.clone()),
                    text: s.text.clone(),
                    class: s.attribute_class.to_string(),
                    domain: s.scene_domain.to_string(),
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("codebook serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    /// Replaces snippet texts, keeping ids, classes and order. Texts not in
    /// `renames` are unchanged.
    pub fn with_texts(&self, renames: &HashMap<String, String>) -> Result<Self> {
        let snippets = self
            .snippets
            .iter()
            .map(|s| match renames.get(&s.text) {
                Some(t) => Snippet {
                    text: normalize_whitespace(t),
                    ..s.clone()
                },
                None => s.clone(),
            })
            .collect();
        Codebook::new(snippets, self.domain)
    }
}

pub const STARTER_CODEBOOK: &str = include_str!("../resources/starter_codebook.json");

pub fn load_codebook(path: &Path, domain: SceneKind) -> Result<Codebook> {
    Codebook::from_document(&CodebookDocument::read(path)?, domain)
}

const SNIPPET_PROMPTS: &str = include_str!("../resources/snippet_prompts.toml");

#[derive(Deserialize)]
struct PromptFile {
    prompts: HashMap<String, String>,
}

/// Generation prompt for one attribute class.
pub fn generation_prompt(class: AttributeClass, domain: SceneDomain, n: usize) -> String {
    let file: PromptFile = toml::from_str(SNIPPET_PROMPTS).expect("bundled prompts parse");
    let template = file
        .prompts
        .get(class.as_str())
        .expect("bundled prompts cover every class");
    let scene = match domain {
        SceneDomain::Natural => "natural everyday photographs",
        SceneDomain::RemoteSensing => "overhead remote sensing imagery",
        SceneDomain::Both => "natural photographs and overhead remote sensing imagery",
    };
    template
        .replace("{n}", &n.to_string())
        .replace("{scene}", scene)
}

fn clean_line(line: &str) -> String {
    let s = line.trim();
    let s = s.trim_start_matches(['-', '*', '•']).trim_start();
    let digits = s.chars().take_while(|c| c.is_ascii_digit()).count();
    let s = if digits > 0 {
        let rest = &s[digits..];
        rest.strip_prefix('.')
            .or_else(|| rest.strip_prefix(')'))
            .map(str::trim_start)
            .unwrap_or(s)
    } else {
        s
    };
    normalize_whitespace(s.trim_matches(|c| c == '"' || c == '\''))
}

/// Asks the model for up to `n` new phrases of one class, one per line.
pub fn generate_snippets(
    client: &dyn ChatClient,
    cfg: &ChatConfig,
    class: AttributeClass,
    domain: SceneDomain,
    n: usize,
) -> Result<Vec<Snippet>> {
    if n == 0 {
        return Err(Error::Config("snippet count must be at least 1".into()));
    }
    let prompt = generation_prompt(class, domain, n);
    let reply = chat(client, &[ChatMessage::user(prompt)], cfg)?;
    let mut seen = HashSet::new();
    let snippets: Vec<Snippet> = reply
        .lines()
        .map(clean_line)
        .filter(|l| !l.is_empty())
        .filter(|l| seen.insert(l.clone()))
        .take(n)
        .map(|l| Snippet::new(&l, class, domain))
        .collect();
    if snippets.is_empty() {
        log::warn!("snippet generation for {class}/{domain} returned no phrases");
    }
    Ok(snippets)
}
