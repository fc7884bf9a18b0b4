//! Query extraction and personalized prompt construction.
//!
//! Templates come from a TOML file keyed by task (see `templates.toml` for the
//! shipped defaults). Each retrieved document is rendered through the task's
//! per-entry template, the entries are joined, and the result is combined with
//! the task input by the task's aggregation rule.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::corpus::{Instance, ProfileDocument, TaskKind};
use crate::error::{Error, Result};
use crate::retrieval::ScoredList;
use crate::textmodel::words;

pub const DEFAULT_TEMPLATES: &str = include_str!("templates.toml");

/// Entries per prompt for final evaluation.
pub const EVAL_ENTRIES: usize = 4;
/// Entries per prompt when scoring one document for reward or distillation.
pub const REWARD_ENTRIES: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// entries, connective, input
    #[default]
    Prepend,
    /// entries spliced in right after the first quoted title in the input
    InjectAfterTitle,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptTemplate {
    pub ppep: String,
    #[serde(default = "default_connective")]
    pub connective: String,
    #[serde(default)]
    pub aggregation: Aggregation,
    #[serde(default)]
    pub query_markers: Vec<String>,
    #[serde(default)]
    pub query_quoted_after: Option<String>,
}

fn default_connective() -> String {
    ". ".to_string()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TemplateFile {
    joiner: String,
    token_cap: usize,
    tasks: BTreeMap<String, PromptTemplate>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Templates {
    pub joiner: String,
    /// Maximum prompt length in tokens; trailing entries are dropped to fit.
    pub token_cap: usize,
    tasks: BTreeMap<TaskKind, PromptTemplate>,
}

impl Default for Templates {
    fn default() -> Self {
        Templates::from_toml_str(DEFAULT_TEMPLATES).expect("shipped templates parse")
    }
}

impl Templates {
    /// Process-wide copy of the shipped templates.
    pub fn shipped() -> &'static Templates {
        static SHIPPED: OnceLock<Templates> = OnceLock::new();
        SHIPPED.get_or_init(Templates::default)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: TemplateFile =
            toml::from_str(text).map_err(|e| Error::Config(format!("template file: {e}")))?;
        let mut tasks = BTreeMap::new();
        for (key, t) in file.tasks {
            let task: TaskKind = key.parse()?;
            placeholders(&t.ppep).map_err(|m| Error::Config(format!("template `{key}`: {m}")))?;
            tasks.insert(task, t);
        }
        Ok(Templates {
            joiner: file.joiner,
            token_cap: file.token_cap,
            tasks,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn template(&self, task: TaskKind) -> Result<&PromptTemplate> {
        self.tasks
            .get(&task)
            .ok_or_else(|| Error::Config(format!("no prompt template for task {task}")))
    }

    /// The user-specific part of an input, used as the retrieval query.
    pub fn make_query(&self, task: TaskKind, input: &str) -> String {
        let Ok(t) = self.template(task) else {
            return after_final_colon(input);
        };
        if let Some(anchor) = &t.query_quoted_after {
            if let Some((open, close)) = quoted_after(input, anchor) {
                return input[open + 1..close].to_string();
            }
        }
        for marker in &t.query_markers {
            if let Some(i) = input.find(marker.as_str()) {
                return input[i + marker.len()..].trim().to_string();
            }
        }
        after_final_colon(input)
    }

    /// Per-entry rendering followed by ` date: <date>.` when the document has a date.
    pub fn render_document(&self, doc: &ProfileDocument, task: TaskKind) -> Result<String> {
        let t = self.template(task)?;
        let mut out = String::new();
        let mut rest = t.ppep.as_str();
        while let Some(open) = rest.find('{') {
            out.push_str(&rest[..open]);
            let close = open + rest[open..].find('}').expect("validated at load");
            let name = &rest[open + 1..close];
            let value = doc.field(name).ok_or_else(|| Error::MissingField {
                doc_id: doc.doc_id.clone(),
                field: name.to_string(),
            })?;
            out.push_str(value);
            rest = &rest[close + 1..];
        }
        out.push_str(rest);
        if let Some(date) = doc.date() {
            out.push_str(" date: ");
            out.push_str(date);
            out.push('.');
        }
        Ok(out)
    }

    /// Rendered entries and input, before aggregation and length capping.
    pub fn prompt_parts(&self, instance: &Instance, docs: &[&ProfileDocument]) -> Result<PromptParts> {
        let t = self.template(instance.task)?;
        let entries = docs
            .iter()
            .map(|d| self.render_document(d, instance.task))
            .collect::<Result<Vec<_>>>()?;
        Ok(PromptParts {
            entries,
            input: instance.input_text.clone(),
            joiner: self.joiner.clone(),
            connective: t.connective.clone(),
            aggregation: t.aggregation,
        })
    }

    /// Prompt for `instance` augmented with the documents of `retrieved`, in rank order.
    pub fn build_prompt(&self, instance: &Instance, retrieved: &ScoredList) -> Result<String> {
        let docs = retrieved
            .doc_ids()
            .map(|id| instance.doc(id))
            .collect::<Result<Vec<_>>>()?;
        let mut parts = self.prompt_parts(instance, &docs)?;
        parts.fit(self.token_cap);
        Ok(parts.render())
    }

    pub fn build_prompt_from_docs(&self, instance: &Instance, docs: &[&ProfileDocument]) -> Result<String> {
        let mut parts = self.prompt_parts(instance, docs)?;
        parts.fit(self.token_cap);
        Ok(parts.render())
    }
}

/// A prompt before aggregation, so callers can drop entries to meet a length cap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptParts {
    pub entries: Vec<String>,
    pub input: String,
    pub joiner: String,
    pub connective: String,
    pub aggregation: Aggregation,
}

impl PromptParts {
    pub fn render(&self) -> String {
        if self.entries.is_empty() {
            return self.input.clone();
        }
        let joined = self.entries.join(&self.joiner);
        if self.aggregation == Aggregation::InjectAfterTitle {
            if let Some((_, close)) = quoted_after(&self.input, "title") {
                return format!(
                    "{}{}{}{}",
                    &self.input[..=close],
                    self.joiner,
                    joined,
                    &self.input[close + 1..]
                );
            }
        }
        // A dated entry already ends its sentence.
        let connective = match self.connective.strip_prefix('.') {
            Some(rest) if joined.ends_with('.') => rest,
            _ => self.connective.as_str(),
        };
        format!("{joined}{connective}{}", self.input)
    }

    pub fn token_len(&self) -> usize {
        words(&self.render()).len()
    }

    /// Drops whole entries from the tail until the rendered prompt has at most
    /// `cap` tokens (or no entries remain).
    pub fn fit(&mut self, cap: usize) {
        while !self.entries.is_empty() && self.token_len() > cap {
            self.entries.pop();
        }
    }
}

pub fn make_query(instance: &Instance) -> String {
    Templates::shipped().make_query(instance.task, &instance.input_text)
}

pub fn render_document(doc: &ProfileDocument, task: TaskKind) -> Result<String> {
    Templates::shipped().render_document(doc, task)
}

pub fn build_prompt(instance: &Instance, retrieved: &ScoredList) -> Result<String> {
    Templates::shipped().build_prompt(instance, retrieved)
}

fn after_final_colon(input: &str) -> String {
    match input.rfind(':') {
        Some(i) if !input[i + 1..].trim().is_empty() => input[i + 1..].trim().to_string(),
        _ => input.to_string(),
    }
}

/// Byte offsets of the quote characters around the first quoted span after `anchor`.
fn quoted_after(input: &str, anchor: &str) -> Option<(usize, usize)> {
    let a = input.find(anchor)?;
    let open = a + input[a..].find('"')?;
    let close = open + 1 + input[open + 1..].find('"')?;
    Some((open, close))
}

fn placeholders(ppep: &str) -> std::result::Result<Vec<String>, String> {
    let mut names = Vec::new();
    let mut rest = ppep;
    while let Some(open) = rest.find('{') {
        let close = rest[open..]
            .find('}')
            .map(|c| open + c)
            .ok_or("unclosed `{`")?;
        let name = &rest[open + 1..close];
        if name.is_empty() || name.contains('{') {
            return Err("malformed placeholder".into());
        }
        names.push(name.to_string());
        rest = &rest[close + 1..];
    }
    Ok(names)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::UserProfile;
    use crate::retrieval::{RetrieverId, ScoredList};
    use std::sync::Arc;

    fn doc(id: &str, fields: &[(&str, &str)]) -> ProfileDocument {
        ProfileDocument::new(
            id,
            fields.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        )
    }

    fn instance(task: TaskKind, input: &str, docs: Vec<ProfileDocument>) -> Instance {
        Instance {
            instance_id: "i0".into(),
            profile: Arc::new(UserProfile {
                user_id: "u0".into(),
                docs,
            }),
            input_text: input.into(),
            target: "y".into(),
            task,
            planted: None,
        }
    }

    fn list(ids: &[&str]) -> ScoredList {
        let n = ids.len();
        ScoredList::from_ranked(
            RetrieverId::Bm25,
            ids.iter().enumerate().map(|(i, d)| (d.to_string(), (n - i) as f64)).collect(),
        )
    }

    #[test]
    fn query_rules() {
        let t = Templates::shipped();
        assert_eq!(t.make_query(TaskKind::Synthetic, "classify: m17 q-a"), "m17 q-a");
        assert_eq!(t.make_query(TaskKind::Synthetic, "no boilerplate"), "no boilerplate");
        assert_eq!(
            t.make_query(
                TaskKind::ScholarlyTitle,
                "Generate a title for the following abstract of a paper: We study X: a case."
            ),
            "We study X: a case."
        );
        assert_eq!(
            t.make_query(TaskKind::ScholarlyTitle, "Generate a title for the following abstract: <A>"),
            "<A>"
        );
        let lamp1 = "For an author who has written the paper with the title \"Deep Nets\", which reference is related? [1]: \"A\" [2]: \"B\"";
        assert_eq!(t.make_query(TaskKind::CitationIdent, lamp1), "Deep Nets");
    }

    #[test]
    fn render_examples() {
        let t = Templates::shipped();
        let d = doc("d1", &[("title", "T"), ("abstract", "A"), ("date", "D")]);
        assert_eq!(
            t.render_document(&d, TaskKind::ScholarlyTitle).unwrap(),
            "\"T\" is the title for \"A\" date: D."
        );
        let d = doc("d2", &[("title", "T"), ("abstract", "A")]);
        assert_eq!(
            t.render_document(&d, TaskKind::ScholarlyTitle).unwrap(),
            "\"T\" is the title for \"A\""
        );
        let d = doc("d3", &[("description", "X"), ("tag", "Y")]);
        assert_eq!(
            t.render_document(&d, TaskKind::MovieTag).unwrap(),
            "the tag for the movie: \"X\" is \"Y\""
        );
        let d = doc("d4", &[("title", "T")]);
        match t.render_document(&d, TaskKind::ScholarlyTitle) {
            Err(Error::MissingField { doc_id, field }) => {
                assert_eq!(doc_id, "d4");
                assert_eq!(field, "abstract");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn aggregation_rules() {
        let t = Templates::shipped();
        let inst = instance(
            TaskKind::ScholarlyTitle,
            "Generate a title for the following abstract of a paper: Z",
            vec![
                doc("a", &[("title", "T1"), ("abstract", "A1")]),
                doc("b", &[("title", "T2"), ("abstract", "A2")]),
            ],
        );
        assert_eq!(t.build_prompt(&inst, &list(&[])).unwrap(), inst.input_text);
        assert_eq!(
            t.build_prompt(&inst, &list(&["b", "a"])).unwrap(),
            "\"T2\" is the title for \"A2\", and \"T1\" is the title for \"A1\". Following the given patterns Generate a title for the following abstract of a paper: Z"
        );

        let syn = instance(TaskKind::Synthetic, "classify: m1 t2 t3", vec![doc("x", &[("text", "m1 p4 f0 f1")])]);
        assert_eq!(t.build_prompt(&syn, &list(&["x"])).unwrap(), "m1 p4 f0 f1. classify: m1 t2 t3");

        let tw = instance(
            TaskKind::TweetParaphrase,
            "Paraphrase the following tweet without any explanation before or after it: hi",
            vec![doc("x", &[("text", "yo")])],
        );
        assert_eq!(
            t.build_prompt(&tw, &list(&["x"])).unwrap(),
            "\"yo\" are written by a person. Following the given patterns Paraphrase the following tweet without any explanation before or after it: hi"
        );

        let cit = instance(
            TaskKind::CitationIdent,
            "For an author who has written the paper with the title \"P\", which reference is related?",
            vec![doc("x", &[("title", "Q")]), doc("y", &[("title", "R")])],
        );
        assert_eq!(
            t.build_prompt(&cit, &list(&["x", "y"])).unwrap(),
            "For an author who has written the paper with the title \"P\", and \"Q\", and \"R\", which reference is related?"
        );
    }

    #[test]
    fn unknown_doc_is_error() {
        let inst = instance(TaskKind::Synthetic, "classify: m1", vec![doc("x", &[("text", "a")])]);
        assert!(matches!(
            build_prompt(&inst, &list(&["zz"])),
            Err(Error::UnknownDocument { .. })
        ));
    }

    #[test]
    fn token_cap_drops_whole_tail_entries() {
        let mut t = Templates::default();
        t.token_cap = 12;
        let docs = (0..4)
            .map(|i| doc(&format!("d{i}"), &[("text", "w1 w2 w3 w4")]))
            .collect();
        let inst = instance(TaskKind::Synthetic, "classify: m1 t1", docs);
        // input is 3 tokens, each entry 4 tokens: two entries fit in 12
        let p = t.build_prompt(&inst, &list(&["d0", "d1", "d2", "d3"])).unwrap();
        assert_eq!(p, "w1 w2 w3 w4, and w1 w2 w3 w4. classify: m1 t1");
        assert!(words(&p).len() <= 12);
    }

    #[test]
    fn custom_template_file() {
        let text = "joiner = \" | \"\ntoken_cap = 100\n[tasks.synthetic]\nppep = \"<{text}>\"\nconnective = \" :: \"\n";
        let t = Templates::from_toml_str(text).unwrap();
        let inst = instance(TaskKind::Synthetic, "q", vec![doc("a", &[("text", "x")]), doc("b", &[("text", "y")])]);
        assert_eq!(t.build_prompt(&inst, &list(&["a", "b"])).unwrap(), "<x> | <y> :: q");
        assert!(Templates::from_toml_str("joiner = \"\"\ntoken_cap = 1\n[tasks.synthetic]\nppep = \"{oops\"\n").is_err());
        assert!(Templates::from_toml_str("joiner = \"\"\ntoken_cap = 1\n[tasks.nope]\nppep = \"x\"\n").is_err());
    }
}
