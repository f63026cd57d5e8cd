//! Prompt templates and their rendering.
//!
//! Templates are UTF-8 text files with `{placeholder}` slots. The built-in
//! defaults live under `prompts/` in this crate and can be replaced per
//! deployment through the `prompts.*_path` config keys. Each template starts
//! with a task tag line; the system part is everything up to the first
//! `---` line and the user part everything after it.

use std::fs;
use std::path::Path;

use thiserror::Error;

/// Task tags carried in system prompts. Backends that need to know what kind
/// of answer is expected (the mock) dispatch on these.
pub const TAG_SUMMARIZE: &str = "[task:summarize]";
pub const TAG_IMPORTANCE: &str = "[task:importance]";
pub const TAG_CONDENSE: &str = "[task:condense]";
pub const TAG_PREDICT: &str = "[task:predict]";

/// Marks where case material begins in a user prompt. Everything before it
/// is instructions or exemplars.
pub const INPUT_MARKER: &str = "<<input>>";

const SECTION_BREAK: &str = "\n---\n";

const DEFAULT_SUMMARIZE: &str = include_str!("../prompts/summarize.txt");
const DEFAULT_IMPORTANCE: &str = include_str!("../prompts/importance.txt");
const DEFAULT_CONDENSE: &str = include_str!("../prompts/condense.txt");
const DEFAULT_ZERO_SHOT: &str = include_str!("../prompts/zero_shot.txt");
const DEFAULT_FEW_SHOT: &str = include_str!("../prompts/few_shot.txt");

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("cannot read prompt template {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("prompt template {name} has no `---` line separating system and user parts")]
    NoSectionBreak { name: String },
    #[error("prompt template {name} lacks required task tag {tag}")]
    MissingTag { name: String, tag: &'static str },
}

/// A template split into system and user parts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    pub system: String,
    pub user: String,
}

impl Template {
    pub fn parse(name: &str, raw: &str, tag: &'static str) -> Result<Self, PromptError> {
        let raw = raw.replace("\r\n", "\n");
        let (system, user) = raw
            .split_once(SECTION_BREAK)
            .ok_or_else(|| PromptError::NoSectionBreak { name: name.to_string() })?;
        if !system.contains(tag) {
            return Err(PromptError::MissingTag {
                name: name.to_string(),
                tag,
            });
        }
        Ok(Self {
            system: system.trim_end().to_string(),
            user: user.trim_end().to_string(),
        })
    }

    /// Substitutes `{key}` slots. Unknown braces are left alone so templates
    /// may contain literal structured-output examples.
    pub fn render(&self, vars: &[(&str, &str)]) -> (String, String) {
        (fill(&self.system, vars), fill(&self.user, vars))
    }
}

fn fill(template: &str, vars: &[(&str, &str)]) -> String {
    // Single pass so substituted values are never re-scanned for slots.
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    'outer: while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open..];
        for (key, value) in vars {
            let slot_len = key.len() + 2;
            if after.len() >= slot_len && after.as_bytes()[slot_len - 1] == b'}' && &after[1..slot_len - 1] == *key {
                out.push_str(value);
                rest = &after[slot_len..];
                continue 'outer;
            }
        }
        out.push('{');
        rest = &after[1..];
    }
    out.push_str(rest);
    out
}

/// The full set of templates used by a run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    pub summarize: Template,
    pub importance: Template,
    pub condense: Template,
    pub zero_shot: Template,
    pub few_shot: Template,
}

impl Default for PromptSet {
    fn default() -> Self {
        let parse = |name, raw, tag| Template::parse(name, raw, tag).expect("built-in template");
        Self {
            summarize: parse("summarize", DEFAULT_SUMMARIZE, TAG_SUMMARIZE),
            importance: parse("importance", DEFAULT_IMPORTANCE, TAG_IMPORTANCE),
            condense: parse("condense", DEFAULT_CONDENSE, TAG_CONDENSE),
            zero_shot: parse("zero_shot", DEFAULT_ZERO_SHOT, TAG_PREDICT),
            few_shot: parse("few_shot", DEFAULT_FEW_SHOT, TAG_PREDICT),
        }
    }
}

/// Optional template overrides, one path per template.
#[derive(Debug, Clone, Default)]
pub struct PromptPaths<'a> {
    pub summarize: Option<&'a Path>,
    pub importance: Option<&'a Path>,
    pub condense: Option<&'a Path>,
    pub zero_shot: Option<&'a Path>,
    pub few_shot: Option<&'a Path>,
}

impl PromptSet {
    pub fn load(paths: &PromptPaths<'_>) -> Result<Self, PromptError> {
        let mut set = Self::default();
        let slots: [(&str, Option<&Path>, &mut Template, &'static str); 5] = [
            ("summarize", paths.summarize, &mut set.summarize, TAG_SUMMARIZE),
            ("importance", paths.importance, &mut set.importance, TAG_IMPORTANCE),
            ("condense", paths.condense, &mut set.condense, TAG_CONDENSE),
            ("zero_shot", paths.zero_shot, &mut set.zero_shot, TAG_PREDICT),
            ("few_shot", paths.few_shot, &mut set.few_shot, TAG_PREDICT),
        ];
        for (name, path, slot, tag) in slots {
            if let Some(path) = path {
                let raw = fs::read_to_string(path).map_err(|source| PromptError::Io {
                    path: path.display().to_string(),
                    source,
                })?;
                *slot = Template::parse(name, &raw, tag)?;
            }
        }
        Ok(set)
    }
}
