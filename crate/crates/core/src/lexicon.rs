//! Sensitive-attribute word lists, span detection, and counterfactual
//! context construction.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CafieError, Result};
use crate::text::{normalize, pieces};

/// The starter lexicon (gender, race, religion, profession) shipped with the crate.
pub const STARTER_LEXICON_JSON: &str = include_str!("../data/lexicon.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Group {
    pub name: String,
    pub tokens: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Attribute {
    pub name: String,
    pub groups: Vec<Group>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub pair_map: BTreeMap<String, BTreeMap<String, String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LexiconFile {
    attributes: Vec<Attribute>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Entry {
    attribute: usize,
    group: usize,
}

/// Attributes -> groups -> sensitive surface strings, with a phrase index
/// for matching. Immutable after construction.
#[derive(Debug, Clone)]
pub struct AttributeLexicon {
    attributes: Vec<Attribute>,
    /// normalized phrase -> first entry in attribute declaration order
    index: HashMap<String, Entry>,
    /// per attribute: normalized surface -> (group -> replacement)
    pairs: Vec<HashMap<String, HashMap<String, String>>>,
    max_phrase_pieces: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SensitiveSpan {
    pub attribute: String,
    pub group: String,
    pub surface: String,
    pub char_start: usize,
    pub char_end: usize,
    pub normalized: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Substitution {
    pub span: SensitiveSpan,
    pub replacement: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Counterfactual {
    pub text: String,
    pub attribute: String,
    pub target_group: String,
    pub substitutions: Vec<Substitution>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CounterfactualSet {
    pub source_text: String,
    pub counterfactuals: Vec<Counterfactual>,
}

impl CounterfactualSet {
    pub fn len(&self) -> usize {
        self.counterfactuals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counterfactuals.is_empty()
    }

    pub fn truncate(&mut self, max: usize) {
        self.counterfactuals.truncate(max);
    }
}

impl AttributeLexicon {
    pub fn from_json(json: &str) -> Result<Self> {
        let file: LexiconFile = serde_json::from_str(json).map_err(|e| {
            CafieError::parse(
                format!("line {}, column {}", e.line(), e.column()),
                e.to_string(),
            )
        })?;
        Self::new(file.attributes)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = crate::error::read_text(path)?;
        Self::from_json(&text).map_err(|e| match e {
            CafieError::Parse { location, message } => CafieError::Parse {
                location: format!("{}: {location}", path.display()),
                message,
            },
            other => other,
        })
    }

    pub fn starter() -> Self {
        Self::from_json(STARTER_LEXICON_JSON).expect("shipped lexicon is valid")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&LexiconFile {
            attributes: self.attributes.clone(),
        })
        .expect("lexicon serializes")
    }

    pub fn new(attributes: Vec<Attribute>) -> Result<Self> {
        let mut attr_names = HashSet::new();
        let mut index: HashMap<String, Entry> = HashMap::new();
        let mut pairs = Vec::with_capacity(attributes.len());
        let mut max_phrase_pieces = 1;

        for (ai, attr) in attributes.iter().enumerate() {
            if attr.name.trim().is_empty() {
                return Err(CafieError::Validation(format!(
                    "attribute #{ai} has an empty name"
                )));
            }
            if !attr_names.insert(attr.name.as_str()) {
                return Err(CafieError::Validation(format!(
                    "duplicate attribute `{}`",
                    attr.name
                )));
            }
            if attr.groups.len() < 2 {
                return Err(CafieError::Validation(format!(
                    "attribute `{}` needs at least two groups to form counterfactuals",
                    attr.name
                )));
            }
            let mut group_names = HashSet::new();
            // normalized surface -> group index, within this attribute
            let mut owner: HashMap<String, usize> = HashMap::new();
            for (gi, group) in attr.groups.iter().enumerate() {
                if !group_names.insert(group.name.as_str()) {
                    return Err(CafieError::Validation(format!(
                        "duplicate group `{}` in attribute `{}`",
                        group.name, attr.name
                    )));
                }
                if group.tokens.is_empty() {
                    return Err(CafieError::Validation(format!(
                        "group `{}/{}` has no tokens",
                        attr.name, group.name
                    )));
                }
                for token in &group.tokens {
                    let norm = normalize(token);
                    if norm.is_empty() {
                        return Err(CafieError::Validation(format!(
                            "group `{}/{}` has a token with no word characters: `{token}`",
                            attr.name, group.name
                        )));
                    }
                    if let Some(prev) = owner.insert(norm.clone(), gi) {
                        let prev_group = &attr.groups[prev].name;
                        return Err(CafieError::Validation(format!(
                            "token `{token}` appears in groups `{prev_group}` and `{}` of attribute `{}`",
                            group.name, attr.name
                        )));
                    }
                    max_phrase_pieces = max_phrase_pieces.max(norm.split(' ').count());
                    index.entry(norm).or_insert(Entry {
                        attribute: ai,
                        group: gi,
                    });
                }
            }

            let mut attr_pairs = HashMap::new();
            for (surface, targets) in &attr.pair_map {
                let norm = normalize(surface);
                let Some(&source_group) = owner.get(&norm) else {
                    return Err(CafieError::Validation(format!(
                        "pair_map key `{surface}` is not a token of attribute `{}`",
                        attr.name
                    )));
                };
                let mut mapped = HashMap::new();
                for (group, replacement) in targets {
                    let Some(gi) = attr.groups.iter().position(|g| &g.name == group) else {
                        return Err(CafieError::Validation(format!(
                            "pair_map `{surface}` targets unknown group `{group}` in attribute `{}`",
                            attr.name
                        )));
                    };
                    if gi == source_group {
                        return Err(CafieError::Validation(format!(
                            "pair_map `{surface}` maps into its own group `{group}`"
                        )));
                    }
                    if owner.get(&normalize(replacement)) != Some(&gi) {
                        return Err(CafieError::Validation(format!(
                            "pair_map `{surface}` -> `{replacement}` is not a token of group `{}/{group}`",
                            attr.name
                        )));
                    }
                    mapped.insert(group.clone(), replacement.clone());
                }
                attr_pairs.insert(norm, mapped);
            }
            pairs.push(attr_pairs);
        }

        Ok(Self {
            attributes,
            index,
            pairs,
            max_phrase_pieces,
        })
    }

    pub fn attributes(&self) -> &[Attribute] {
        &self.attributes
    }

    pub fn attribute(&self, name: &str) -> Option<&Attribute> {
        self.attributes.iter().find(|a| a.name == name)
    }

    /// Restricts the lexicon to the named attributes (declaration order kept).
    pub fn select(&self, names: &[&str]) -> Result<Self> {
        for n in names {
            if self.attribute(n).is_none() {
                return Err(CafieError::Validation(format!("unknown attribute `{n}`")));
            }
        }
        Self::new(
            self.attributes
                .iter()
                .filter(|a| names.contains(&a.name.as_str()))
                .cloned()
                .collect(),
        )
    }

    /// All case-insensitive whole-word matches, leftmost-longest, non-overlapping.
    /// A surface listed under several attributes resolves to the first declared.
    pub fn detect(&self, text: &str) -> Vec<SensitiveSpan> {
        let ps: Vec<_> = pieces(text).collect();
        let mut spans = Vec::new();
        let mut i = 0;
        while i < ps.len() {
            let longest = self.max_phrase_pieces.min(ps.len() - i);
            let mut matched = None;
            for len in (1..=longest).rev() {
                let start = ps[i].start;
                let end = ps[i + len - 1].end;
                let phrase = ps[i..i + len]
                    .iter()
                    .map(|p| p.text.to_lowercase())
                    .collect::<Vec<_>>()
                    .join(" ");
                if let Some(entry) = self.index.get(&phrase) {
                    matched = Some((len, start, end, phrase, *entry));
                    break;
                }
            }
            match matched {
                Some((len, start, end, normalized, entry)) => {
                    let attr = &self.attributes[entry.attribute];
                    spans.push(SensitiveSpan {
                        attribute: attr.name.clone(),
                        group: attr.groups[entry.group].name.clone(),
                        surface: text[start..end].to_string(),
                        char_start: start,
                        char_end: end,
                        normalized,
                    });
                    i += len;
                }
                None => i += 1,
            }
        }
        spans
    }

    /// One counterfactual per (attribute present, other group), in declaration
    /// order. Each replaces every span of its attribute that does not already
    /// belong to the target group.
    pub fn build_counterfactuals(
        &self,
        text: &str,
        spans: &[SensitiveSpan],
        max_per_attribute: usize,
    ) -> Result<CounterfactualSet> {
        let mut counterfactuals = Vec::new();
        for (ai, attr) in self.attributes.iter().enumerate() {
            let attr_spans: Vec<&SensitiveSpan> =
                spans.iter().filter(|s| s.attribute == attr.name).collect();
            if attr_spans.is_empty() {
                continue;
            }
            let present: HashSet<&str> = attr_spans.iter().map(|s| s.group.as_str()).collect();
            let single_group = present.len() == 1;
            let targets = attr
                .groups
                .iter()
                .filter(|g| !(single_group && present.contains(g.name.as_str())))
                .take(max_per_attribute);
            for target in targets {
                let mut subs = Vec::new();
                for span in attr_spans.iter().filter(|s| s.group != target.name) {
                    let replacement = match self.pairs[ai].get(&span.normalized) {
                        Some(map) => match map.get(&target.name) {
                            Some(r) => r.clone(),
                            None => target.tokens[0].clone(),
                        },
                        None => target.tokens[0].clone(),
                    };
                    if !attr.groups.iter().any(|g| g.name == target.name) {
                        return Err(CafieError::Substitution(format!(
                            "group `{}` missing from attribute `{}`",
                            target.name, attr.name
                        )));
                    }
                    subs.push(Substitution {
                        span: (*span).clone(),
                        replacement: match_casing(&span.surface, &replacement),
                    });
                }
                counterfactuals.push(Counterfactual {
                    text: apply_substitutions(text, &subs)?,
                    attribute: attr.name.clone(),
                    target_group: target.name.clone(),
                    substitutions: subs,
                });
            }
        }
        Ok(CounterfactualSet {
            source_text: text.to_string(),
            counterfactuals,
        })
    }

    /// Convenience: detect then build with no per-attribute cap.
    pub fn counterfactuals_of(&self, text: &str) -> Result<CounterfactualSet> {
        let spans = self.detect(text);
        self.build_counterfactuals(text, &spans, usize::MAX)
    }
}

/// Applies substitutions (sorted, non-overlapping) to `text`.
pub fn apply_substitutions(text: &str, subs: &[Substitution]) -> Result<String> {
    let mut out = String::with_capacity(text.len());
    let mut cursor = 0;
    for sub in subs {
        let s = &sub.span;
        if s.char_start < cursor
            || s.char_end > text.len()
            || text.get(s.char_start..s.char_end) != Some(s.surface.as_str())
        {
            return Err(CafieError::Substitution(format!(
                "span `{}` at {}..{} does not match the source text",
                s.surface, s.char_start, s.char_end
            )));
        }
        out.push_str(&text[cursor..s.char_start]);
        out.push_str(&sub.replacement);
        cursor = s.char_end;
    }
    out.push_str(&text[cursor..]);
    Ok(out)
}

/// Copies the casing pattern of `surface` (lower, Title, UPPER) onto `replacement`.
fn match_casing(surface: &str, replacement: &str) -> String {
    let letters: Vec<char> = surface.chars().filter(|c| c.is_alphabetic()).collect();
    let all_upper = letters.len() > 1 && letters.iter().all(|c| c.is_uppercase());
    if all_upper {
        return replacement.to_uppercase();
    }
    let starts_upper = surface.chars().next().is_some_and(char::is_uppercase);
    if starts_upper {
        let mut chars = replacement.chars();
        return match chars.next() {
            Some(first) => first.to_uppercase().chain(chars).collect(),
            None => String::new(),
        };
    }
    replacement.to_string()
}
