//! Prompt files and template rendering.
//!
//! A prompt file lives at `<root>/<category>/<benchmark_key>.json` and maps
//! template names to template objects. A template object either has a single
//! `template` string or the four few-shot keys `template_prefix`,
//! `few_shot_example_template`, `few_shot_separator` and `template_suffix`.
//! Arrays under keys named `default_few_shot_examples_<benchmark>` hold
//! curated shots.
//!
//! Placeholders are written `{name}`; `{{` and `}}` produce literal braces.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::de::{self, Deserializer, MapAccess, Visitor};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::canonical::sha256_hex;

pub const DEFAULT_EXAMPLES_PREFIX: &str = "default_few_shot_examples_";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PromptError {
    #[error("prompt file for category {category:?}, benchmark {benchmark_key:?} not found at {path}")]
    FileMissing { category: String, benchmark_key: String, path: PathBuf },
    #[error("failed to read prompt file {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("prompt file {path} is not valid JSON: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("duplicate key {0:?} in prompt file")]
    DuplicateKey(String),
    #[error("template {template:?}: {message}")]
    Malformed { template: String, message: String },
    #[error("missing value for placeholder {0:?}")]
    MissingPlaceholder(String),
    #[error("template {name:?} not found in prompt file")]
    UnknownTemplate { name: String },
    #[error("template {name:?} is a {actual} template, expected {expected}")]
    WrongKind { name: String, expected: &'static str, actual: &'static str },
    #[error("few-shot rendering needs at least one shot")]
    NoShots,
    #[error("requested {requested} shots but only {available} are available")]
    NotEnoughShots { requested: usize, available: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Literal(String),
    Placeholder(String),
}

/// Template text split into literal runs and placeholders.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedTemplate {
    source: String,
    segments: Vec<Segment>,
}

fn valid_identifier(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

impl ParsedTemplate {
    pub fn parse(source: &str) -> Result<Self, String> {
        let mut segments = Vec::new();
        let mut literal = String::new();
        let mut chars = source.char_indices().peekable();
        while let Some((pos, c)) = chars.next() {
            match c {
                '{' if matches!(chars.peek(), Some((_, '{'))) => {
                    chars.next();
                    literal.push('{');
                }
                '}' if matches!(chars.peek(), Some((_, '}'))) => {
                    chars.next();
                    literal.push('}');
                }
                '{' => {
                    let mut name = String::new();
                    let mut closed = false;
                    for (_, c) in chars.by_ref() {
                        if c == '}' {
                            closed = true;
                            break;
                        }
                        if c == '{' {
                            return Err(format!("nested '{{' in placeholder starting at byte {pos}"));
                        }
                        name.push(c);
                    }
                    if !closed {
                        return Err(format!("unbalanced '{{' at byte {pos}"));
                    }
                    if !valid_identifier(&name) {
                        return Err(format!("invalid placeholder name {name:?} at byte {pos}"));
                    }
                    if !literal.is_empty() {
                        segments.push(Segment::Literal(std::mem::take(&mut literal)));
                    }
                    segments.push(Segment::Placeholder(name));
                }
                '}' => return Err(format!("unbalanced '}}' at byte {pos}")),
                c => literal.push(c),
            }
        }
        if !literal.is_empty() {
            segments.push(Segment::Literal(literal));
        }
        Ok(Self { source: source.to_owned(), segments })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Placeholder names in order of first appearance.
    pub fn placeholders(&self) -> Vec<&str> {
        let mut seen = HashSet::new();
        self.segments
            .iter()
            .filter_map(|s| match s {
                Segment::Placeholder(name) if seen.insert(name.as_str()) => Some(name.as_str()),
                _ => None,
            })
            .collect()
    }

    /// Substitutes every placeholder. Extra entries in `fields` are ignored.
    pub fn render<F: FieldSource + ?Sized>(&self, fields: &F) -> Result<String, PromptError> {
        let mut out = String::with_capacity(self.source.len());
        for segment in &self.segments {
            match segment {
                Segment::Literal(text) => out.push_str(text),
                Segment::Placeholder(name) => match fields.field(name) {
                    Some(value) => out.push_str(value),
                    None => return Err(PromptError::MissingPlaceholder(name.clone())),
                },
            }
        }
        Ok(out)
    }
}

/// Anything that can supply placeholder values by name.
pub trait FieldSource {
    fn field(&self, name: &str) -> Option<&str>;
}

impl FieldSource for BTreeMap<String, String> {
    fn field(&self, name: &str) -> Option<&str> {
        self.get(name).map(String::as_str)
    }
}

impl FieldSource for IndexMap<String, String> {
    fn field(&self, name: &str) -> Option<&str> {
        self.get(name).map(String::as_str)
    }
}

impl FieldSource for std::collections::HashMap<String, String> {
    fn field(&self, name: &str) -> Option<&str> {
        self.get(name).map(String::as_str)
    }
}

impl FieldSource for [(&str, &str)] {
    fn field(&self, name: &str) -> Option<&str> {
        self.iter().find(|(k, _)| *k == name).map(|(_, v)| *v)
    }
}

impl<const N: usize> FieldSource for [(&str, &str); N] {
    fn field(&self, name: &str) -> Option<&str> {
        self.as_slice().field(name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TemplateBody {
    Single(ParsedTemplate),
    FewShot {
        prefix: ParsedTemplate,
        example: ParsedTemplate,
        separator: String,
        suffix: ParsedTemplate,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub name: String,
    pub description: String,
    pub body: TemplateBody,
}

/// Field values of one curated shot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FewShotExample {
    pub fields: BTreeMap<String, String>,
}

impl FieldSource for FewShotExample {
    fn field(&self, name: &str) -> Option<&str> {
        self.fields.get(name).map(String::as_str)
    }
}

impl PromptTemplate {
    pub fn kind(&self) -> &'static str {
        match self.body {
            TemplateBody::Single(_) => "single",
            TemplateBody::FewShot { .. } => "few_shot_composite",
        }
    }

    fn from_json(name: &str, value: &Value) -> Result<Self, PromptError> {
        let malformed = |message: String| PromptError::Malformed { template: name.to_owned(), message };
        let obj = value
            .as_object()
            .ok_or_else(|| malformed("template entry must be a JSON object".into()))?;
        let get = |key: &str| -> Result<Option<String>, PromptError> {
            match obj.get(key) {
                None => Ok(None),
                Some(Value::String(s)) => Ok(Some(s.clone())),
                Some(_) => Err(malformed(format!("{key:?} must be a string"))),
            }
        };
        const KNOWN: &[&str] = &[
            "template",
            "template_prefix",
            "few_shot_example_template",
            "few_shot_separator",
            "template_suffix",
            "description",
        ];
        if let Some(extra) = obj.keys().find(|k| !KNOWN.contains(&k.as_str())) {
            return Err(malformed(format!("unknown key {extra:?}")));
        }
        let parse = |text: &str| ParsedTemplate::parse(text).map_err(malformed);
        let description = get("description")?.unwrap_or_default();
        let template = get("template")?;
        let composite = (
            get("template_prefix")?,
            get("few_shot_example_template")?,
            get("few_shot_separator")?,
            get("template_suffix")?,
        );
        let body = match (template, composite) {
            (Some(text), (None, None, None, None)) => {
                if text.is_empty() {
                    return Err(malformed("\"template\" must not be empty".into()));
                }
                TemplateBody::Single(parse(&text)?)
            }
            (None, (Some(prefix), Some(example), Some(separator), Some(suffix))) => TemplateBody::FewShot {
                prefix: parse(&prefix)?,
                example: parse(&example)?,
                separator,
                suffix: parse(&suffix)?,
            },
            (Some(_), _) => return Err(malformed("mixes \"template\" with few-shot keys".into())),
            (None, _) => {
                return Err(malformed(
                    "needs either \"template\" or all of template_prefix, few_shot_example_template, \
                     few_shot_separator and template_suffix"
                        .into(),
                ))
            }
        };
        Ok(Self { name: name.to_owned(), description, body })
    }
}

/// Renders a single-string template.
pub fn render_zero_shot<F: FieldSource + ?Sized>(
    template: &PromptTemplate,
    fields: &F,
) -> Result<String, PromptError> {
    match &template.body {
        TemplateBody::Single(t) => t.render(fields),
        TemplateBody::FewShot { .. } => Err(PromptError::WrongKind {
            name: template.name.clone(),
            expected: "single",
            actual: template.kind(),
        }),
    }
}

/// Renders `prefix + shot_1 + sep + ... + shot_n + sep + suffix`. The prefix
/// is rendered with the query fields as well.
pub fn render_few_shot<F: FieldSource + ?Sized>(
    template: &PromptTemplate,
    shots: &[FewShotExample],
    query_fields: &F,
) -> Result<String, PromptError> {
    let TemplateBody::FewShot { prefix, example, separator, suffix } = &template.body else {
        return Err(PromptError::WrongKind {
            name: template.name.clone(),
            expected: "few_shot_composite",
            actual: template.kind(),
        });
    };
    if shots.is_empty() {
        return Err(PromptError::NoShots);
    }
    let mut out = prefix.render(query_fields)?;
    for (i, shot) in shots.iter().enumerate() {
        if i > 0 {
            out.push_str(separator);
        }
        out.push_str(&example.render(shot)?);
    }
    out.push_str(separator);
    out.push_str(&suffix.render(query_fields)?);
    Ok(out)
}

/// The first `n` curated shots. `seed` is accepted for alternative sampling
/// strategies and has no effect on the curated order.
pub fn select_shots(
    pool: &[FewShotExample],
    n: usize,
    _seed: u64,
) -> Result<Vec<FewShotExample>, PromptError> {
    if n > pool.len() {
        return Err(PromptError::NotEnoughShots { requested: n, available: pool.len() });
    }
    Ok(pool[..n].to_vec())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptFile {
    pub category: String,
    pub benchmark_key: String,
    pub templates: IndexMap<String, PromptTemplate>,
    pub default_examples: IndexMap<String, Vec<FewShotExample>>,
    /// SHA-256 of the raw file bytes.
    pub fingerprint: String,
}

/// Top-level object with duplicate keys reported instead of overwritten.
struct OrderedEntries(Vec<(String, Value)>);

impl<'de> Deserialize<'de> for OrderedEntries {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct EntriesVisitor;
        impl<'de> Visitor<'de> for EntriesVisitor {
            type Value = OrderedEntries;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a JSON object")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Self::Value, A::Error> {
                let mut entries: Vec<(String, Value)> = Vec::new();
                while let Some((key, value)) = map.next_entry::<String, Value>()? {
                    if entries.iter().any(|(k, _)| *k == key) {
                        return Err(de::Error::custom(format!("duplicate key {key:?}")));
                    }
                    entries.push((key, value));
                }
                Ok(OrderedEntries(entries))
            }
        }
        deserializer.deserialize_map(EntriesVisitor)
    }
}

impl PromptFile {
    pub fn parse(category: &str, benchmark_key: &str, bytes: &[u8], path: &Path) -> Result<Self, PromptError> {
        let entries: OrderedEntries = serde_json::from_slice(bytes).map_err(|e| {
            let message = e.to_string();
            match message.strip_prefix("duplicate key \"") {
                Some(rest) => PromptError::DuplicateKey(rest.split('"').next().unwrap_or_default().to_owned()),
                None => PromptError::Parse { path: path.to_owned(), message },
            }
        })?;
        let mut templates = IndexMap::new();
        let mut default_examples = IndexMap::new();
        for (key, value) in entries.0 {
            if value.is_array() {
                let examples: Vec<FewShotExample> =
                    serde_json::from_value(value).map_err(|e| PromptError::Malformed {
                        template: key.clone(),
                        message: format!("shot list must be objects of strings: {e}"),
                    })?;
                default_examples.insert(key, examples);
            } else {
                let template = PromptTemplate::from_json(&key, &value)?;
                templates.insert(key, template);
            }
        }
        Ok(Self {
            category: category.to_owned(),
            benchmark_key: benchmark_key.to_owned(),
            templates,
            default_examples,
            fingerprint: sha256_hex(bytes),
        })
    }

    pub fn template(&self, name: &str) -> Result<&PromptTemplate, PromptError> {
        self.templates
            .get(name)
            .ok_or_else(|| PromptError::UnknownTemplate { name: name.to_owned() })
    }

    /// The curated shot list for this benchmark: the list named after the
    /// benchmark key, or the only list when there is exactly one.
    pub fn shot_pool(&self) -> &[FewShotExample] {
        let key = format!("{DEFAULT_EXAMPLES_PREFIX}{}", self.benchmark_key);
        if let Some(list) = self.default_examples.get(&key) {
            return list;
        }
        if self.default_examples.len() == 1 {
            return &self.default_examples[0];
        }
        &[]
    }
}

/// Loads prompt files from `<root>/<category>/<benchmark_key>.json`,
/// optionally falling back to the files shipped with the library.
#[derive(Debug, Clone)]
pub struct PromptStore {
    root: Option<PathBuf>,
    embedded: bool,
}

impl PromptStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: Some(root.into()), embedded: false }
    }

    /// Only the shipped prompt files.
    pub fn embedded() -> Self {
        Self { root: None, embedded: true }
    }

    /// Files under the root win; missing ones come from the shipped set.
    pub fn with_embedded_fallback(mut self) -> Self {
        self.embedded = true;
        self
    }

    pub fn root(&self) -> Option<&Path> {
        self.root.as_deref()
    }

    pub fn path_for(&self, category: &str, benchmark_key: &str) -> PathBuf {
        let file = Path::new(category).join(format!("{benchmark_key}.json"));
        match &self.root {
            Some(root) => root.join(file),
            None => Path::new("<builtin>").join(file),
        }
    }

    pub fn load_prompt_file(&self, category: &str, benchmark_key: &str) -> Result<PromptFile, PromptError> {
        let path = self.path_for(category, benchmark_key);
        let missing = || PromptError::FileMissing {
            category: category.to_owned(),
            benchmark_key: benchmark_key.to_owned(),
            path: path.clone(),
        };
        if self.root.is_some() {
            match std::fs::read(&path) {
                Ok(bytes) => return PromptFile::parse(category, benchmark_key, &bytes, &path),
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
                Err(e) => return Err(PromptError::Io { path: path.clone(), message: e.to_string() }),
            }
        }
        if self.embedded {
            if let Some(text) = crate::registry::builtin::builtin_prompt(category, benchmark_key) {
                return PromptFile::parse(category, benchmark_key, text.as_bytes(), &path);
            }
        }
        Err(missing())
    }
}
