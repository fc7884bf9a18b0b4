//! Ingestion of the LaMP file layout.
//!
//! Questions file: a JSON array of `{"id", "input", "profile": [{"id", "date", ...}]}`.
//! Outputs file: `{"task", "golds": [{"id", "output"}]}`. All profile fields are strings.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{Dataset, Instance, ProfileDocument, TaskKind, UserProfile};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldRecord {
    pub id: String,
    pub output: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputsFile {
    pub task: String,
    pub golds: Vec<GoldRecord>,
}

fn read_json(path: &Path) -> Result<Value> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&raw).map_err(|e| Error::Schema {
        record: path.display().to_string(),
        message: e.to_string(),
    })
}

fn schema(record: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Schema {
        record: record.into(),
        message: message.into(),
    }
}

fn string_field(obj: &Map<String, Value>, key: &str, record: &str) -> Result<String> {
    match obj.get(key) {
        Some(Value::String(s)) => Ok(s.clone()),
        Some(_) => Err(schema(record, format!("field `{key}` is not a string"))),
        None => Err(schema(record, format!("missing field `{key}`"))),
    }
}

fn parse_profile_entry(value: &Value, record: &str) -> Result<ProfileDocument> {
    let obj = value
        .as_object()
        .ok_or_else(|| schema(record, "profile entry is not an object"))?;
    let doc_id = string_field(obj, "id", record)?;
    let mut fields = BTreeMap::new();
    for (k, v) in obj {
        if k == "id" {
            continue;
        }
        match v {
            Value::String(s) => {
                fields.insert(k.clone(), s.clone());
            }
            _ => {
                return Err(schema(
                    format!("{record}, doc {doc_id}"),
                    format!("field `{k}` is not a string"),
                ))
            }
        }
    }
    Ok(ProfileDocument::new(doc_id, fields))
}

struct QuestionRecord {
    id: String,
    input: String,
    docs: Vec<ProfileDocument>,
}

fn parse_questions(value: &Value) -> Result<Vec<QuestionRecord>> {
    let records = value
        .as_array()
        .ok_or_else(|| schema("questions", "top level is not an array"))?;
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(records.len());
    for (idx, rec) in records.iter().enumerate() {
        let name = format!("questions[{idx}]");
        let obj = rec
            .as_object()
            .ok_or_else(|| schema(&name, "record is not an object"))?;
        let id = string_field(obj, "id", &name)?;
        let name = format!("question {id}");
        if !seen.insert(id.clone()) {
            return Err(schema(&name, "duplicate question id"));
        }
        let input = string_field(obj, "input", &name)?;
        if input.is_empty() {
            return Err(schema(&name, "empty input"));
        }
        let profile = obj
            .get("profile")
            .and_then(Value::as_array)
            .ok_or_else(|| schema(&name, "missing or non-array `profile`"))?;
        let mut doc_ids = BTreeSet::new();
        let mut docs = Vec::with_capacity(profile.len());
        for (j, entry) in profile.iter().enumerate() {
            let doc = parse_profile_entry(entry, &format!("{name}, profile[{j}]"))?;
            if !doc_ids.insert(doc.doc_id.clone()) {
                return Err(schema(&name, format!("duplicate profile doc id {}", doc.doc_id)));
            }
            docs.push(doc);
        }
        out.push(QuestionRecord { id, input, docs });
    }
    Ok(out)
}

fn parse_outputs(value: Value) -> Result<OutputsFile> {
    serde_json::from_value(value).map_err(|e| schema("outputs", e.to_string()))
}

/// Loads a questions/outputs file pair into a [`Dataset`].
///
/// Instances whose profile is empty are skipped with a warning and counted in
/// [`Dataset::skipped_empty_profiles`].
pub fn load_dataset(questions_path: &Path, outputs_path: &Path, task: TaskKind) -> Result<Dataset> {
    let questions = parse_questions(&read_json(questions_path)?)?;
    let outputs = parse_outputs(read_json(outputs_path)?)?;

    let mut golds: HashMap<&str, &str> = HashMap::new();
    for g in &outputs.golds {
        if golds.insert(&g.id, &g.output).is_some() {
            return Err(schema(format!("gold {}", g.id), "duplicate gold id"));
        }
    }
    let question_ids: BTreeSet<&str> = questions.iter().map(|q| q.id.as_str()).collect();
    let missing_gold: Vec<String> = questions
        .iter()
        .filter(|q| !golds.contains_key(q.id.as_str()))
        .map(|q| q.id.clone())
        .collect();
    let missing_question: Vec<String> = outputs
        .golds
        .iter()
        .filter(|g| !question_ids.contains(g.id.as_str()))
        .map(|g| g.id.clone())
        .collect();
    if !missing_gold.is_empty() || !missing_question.is_empty() {
        return Err(Error::IdMismatch {
            missing_gold,
            missing_question,
        });
    }

    let mut instances = Vec::with_capacity(questions.len());
    let mut skipped = 0;
    for q in questions {
        let target = golds[q.id.as_str()].to_string();
        if target.is_empty() {
            return Err(schema(format!("gold {}", q.id), "empty output"));
        }
        if q.docs.is_empty() {
            log::warn!("skipping question {}: empty profile", q.id);
            skipped += 1;
            continue;
        }
        instances.push(Instance {
            instance_id: q.id.clone(),
            profile: Arc::new(UserProfile {
                user_id: q.id,
                docs: q.docs,
            }),
            input_text: q.input,
            target,
            task,
            planted: None,
        });
    }
    Ok(Dataset {
        task,
        instances,
        skipped_empty_profiles: skipped,
    })
}

/// Serializes instances back into the questions-file layout.
pub fn questions_to_json(instances: &[Instance]) -> Value {
    Value::Array(
        instances
            .iter()
            .map(|inst| {
                let profile: Vec<Value> = inst
                    .profile
                    .docs
                    .iter()
                    .map(|d| {
                        let mut obj = Map::new();
                        obj.insert("id".into(), Value::String(d.doc_id.clone()));
                        for (k, v) in &d.fields {
                            obj.insert(k.clone(), Value::String(v.clone()));
                        }
                        Value::Object(obj)
                    })
                    .collect();
                let mut obj = Map::new();
                obj.insert("id".into(), Value::String(inst.instance_id.clone()));
                obj.insert("input".into(), Value::String(inst.input_text.clone()));
                obj.insert("profile".into(), Value::Array(profile));
                Value::Object(obj)
            })
            .collect(),
    )
}

pub fn golds_to_json(task: TaskKind, instances: &[Instance]) -> Value {
    let file = OutputsFile {
        task: task.to_string(),
        golds: instances
            .iter()
            .map(|i| GoldRecord {
                id: i.instance_id.clone(),
                output: i.target.clone(),
            })
            .collect(),
    };
    serde_json::to_value(file).expect("outputs file serializes")
}

/// Writes a dataset as a questions/outputs pair.
pub fn write_dataset(dataset: &Dataset, questions_path: &Path, outputs_path: &Path) -> Result<()> {
    let q = serde_json::to_string_pretty(&questions_to_json(&dataset.instances))
        .expect("json serializes");
    fs::write(questions_path, q).map_err(|e| Error::io(questions_path, e))?;
    let o = serde_json::to_string_pretty(&golds_to_json(dataset.task, &dataset.instances))
        .expect("json serializes");
    fs::write(outputs_path, o).map_err(|e| Error::io(outputs_path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn write_pair(dir: &Path, questions: &Value, outputs: &Value) -> (std::path::PathBuf, std::path::PathBuf) {
        let q = dir.join("questions.json");
        let o = dir.join("outputs.json");
        fs::write(&q, questions.to_string()).unwrap();
        fs::write(&o, outputs.to_string()).unwrap();
        (q, o)
    }

    fn sample_questions() -> Value {
        json!([
            {"id": "q1", "input": "Generate a title for the following abstract: deep nets", "profile": [
                {"id": "p1", "title": "A", "abstract": "aa", "date": "2019-03-04"},
                {"id": "p2", "title": "B", "abstract": "bb", "date": "2020-01-01"}
            ]},
            {"id": "q2", "input": "Generate a title for the following abstract: trees", "profile": [
                {"id": "p3", "title": "C", "abstract": "cc"}
            ]},
            {"id": "q3", "input": "Generate a title for the following abstract: graphs", "profile": [
                {"id": "p4", "title": "D", "abstract": "dd", "date": "bogus"}
            ]}
        ])
    }

    fn sample_outputs() -> Value {
        json!({"task": "LaMP_5", "golds": [
            {"id": "q1", "output": "Deep"}, {"id": "q2", "output": "Trees"}, {"id": "q3", "output": "Graphs"}
        ]})
    }

    #[test]
    fn well_formed_pair_loads() {
        let dir = tempfile::tempdir().unwrap();
        let (q, o) = write_pair(dir.path(), &sample_questions(), &sample_outputs());
        let ds = load_dataset(&q, &o, TaskKind::ScholarlyTitle).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.instances[0].target, "Deep");
        assert_eq!(ds.instances[0].profile.docs[0].timestamp, 1_551_657_600);
        assert_eq!(ds.instances[1].profile.docs[0].timestamp, 0);
        assert_eq!(ds.instances[2].profile.docs[0].timestamp, 0);
    }

    #[test]
    fn missing_gold_is_listed() {
        let dir = tempfile::tempdir().unwrap();
        let mut questions = sample_questions();
        questions.as_array_mut().unwrap().push(json!({"id": "q7", "input": "x: y", "profile": []}));
        let (q, o) = write_pair(dir.path(), &questions, &sample_outputs());
        let err = load_dataset(&q, &o, TaskKind::ScholarlyTitle).unwrap_err();
        match &err {
            Error::IdMismatch { missing_gold, .. } => assert_eq!(missing_gold, &vec!["q7".to_string()]),
            other => panic!("unexpected {other:?}"),
        }
        assert!(err.to_string().contains("q7"));
    }

    #[test]
    fn schema_violation_names_record() {
        let dir = tempfile::tempdir().unwrap();
        let questions = json!([{"id": "q1", "input": "x", "profile": [{"id": "p1", "score": 5}]}]);
        let outputs = json!({"task": "LaMP_3", "golds": [{"id": "q1", "output": "5"}]});
        let (q, o) = write_pair(dir.path(), &questions, &outputs);
        let err = load_dataset(&q, &o, TaskKind::ProductRating).unwrap_err().to_string();
        assert!(err.contains("question q1"), "{err}");
        assert!(err.contains("score"), "{err}");
    }

    #[test]
    fn empty_profiles_are_skipped_and_counted() {
        let dir = tempfile::tempdir().unwrap();
        let questions = json!([
            {"id": "q1", "input": "x", "profile": []},
            {"id": "q2", "input": "y", "profile": [{"id": "p", "text": "t"}]}
        ]);
        let outputs = json!({"task": "LaMP_7", "golds": [{"id": "q1", "output": "a"}, {"id": "q2", "output": "b"}]});
        let (q, o) = write_pair(dir.path(), &questions, &outputs);
        let ds = load_dataset(&q, &o, TaskKind::TweetParaphrase).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.skipped_empty_profiles, 1);
    }

    #[test]
    fn reserialization_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let (q, o) = write_pair(dir.path(), &sample_questions(), &sample_outputs());
        let ds = load_dataset(&q, &o, TaskKind::ScholarlyTitle).unwrap();
        assert_eq!(questions_to_json(&ds.instances), sample_questions());
        let golds = golds_to_json(ds.task, &ds.instances);
        assert_eq!(golds["golds"], sample_outputs()["golds"]);
    }
}
