//! Corpus ingestion: pair files, answer files, unique-pair construction,
//! and seeded per-category sampling.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::core::ComparisonTask;
use crate::seeding;

/// One model's answer to one question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerRecord {
    pub question_id: String,
    pub category: String,
    pub question: String,
    pub model_name: String,
    pub answer: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    /// JSONL of ready-made comparison tasks.
    PairsJsonl,
    /// JSONL of per-model answers; pairs are built here.
    AnswersJsonl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub source_kind: SourceKind,
    pub path: PathBuf,
    #[serde(default = "default_per_category")]
    pub per_category: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_per_category() -> usize {
    60
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.per_category == 0 {
            return Err(DatasetError::InvalidSpec(
                "per_category must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    MalformedLine {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}: duplicate task id `{id}`")]
    DuplicateId {
        path: PathBuf,
        line: usize,
        id: String,
    },
    #[error("{path}:{line}: duplicate answer for ({question_id}, {model_name})")]
    DuplicateAnswer {
        path: PathBuf,
        line: usize,
        question_id: String,
        model_name: String,
    },
    #[error("category `{category}` has {have} tasks, need {need}")]
    UndersizedCategory {
        category: String,
        have: usize,
        need: usize,
    },
    #[error("invalid dataset spec: {0}")]
    InvalidSpec(String),
}

fn parse_jsonl<T, F>(path: &Path, mut on_record: F) -> Result<(), DatasetError>
where
    T: serde::de::DeserializeOwned,
    F: FnMut(usize, T) -> Result<(), DatasetError>,
{
    let contents = fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    for (idx, line) in contents.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: T =
            serde_json::from_str(line).map_err(|e| DatasetError::MalformedLine {
                path: path.to_path_buf(),
                line: line_no,
                message: e.to_string(),
            })?;
        on_record(line_no, record)?;
    }
    Ok(())
}

/// Loads comparison tasks from a JSONL file, in file order. Unknown fields
/// are ignored; schema violations name the offending line.
pub fn load_pairs(path: &Path) -> Result<Vec<ComparisonTask>, DatasetError> {
    let mut tasks = Vec::new();
    let mut seen = HashSet::new();
    parse_jsonl::<ComparisonTask, _>(path, |line, task| {
        task.validate().map_err(|e| DatasetError::MalformedLine {
            path: path.to_path_buf(),
            line,
            message: e.to_string(),
        })?;
        if !seen.insert(task.id.clone()) {
            return Err(DatasetError::DuplicateId {
                path: path.to_path_buf(),
                line,
                id: task.id.clone(),
            });
        }
        tasks.push(task);
        Ok(())
    })?;
    Ok(tasks)
}

/// Loads per-model answer records from a JSONL file, in file order.
pub fn load_answers(path: &Path) -> Result<Vec<AnswerRecord>, DatasetError> {
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    parse_jsonl::<AnswerRecord, _>(path, |line, record| {
        let key = (record.question_id.clone(), record.model_name.clone());
        if !seen.insert(key) {
            return Err(DatasetError::DuplicateAnswer {
                path: path.to_path_buf(),
                line,
                question_id: record.question_id,
                model_name: record.model_name,
            });
        }
        records.push(record);
        Ok(())
    })?;
    Ok(records)
}

/// Builds every unique unordered response pair per question. Within a pair,
/// solution X is the lexicographically smaller model name, so the second
/// slot is stable for the injectors that target it. Questions keep their
/// first-appearance order; a question with fewer than two answers
/// contributes nothing.
pub fn build_unique_pairs(records: &[AnswerRecord]) -> Vec<ComparisonTask> {
    let mut order: Vec<&str> = Vec::new();
    let mut by_question: std::collections::HashMap<&str, Vec<&AnswerRecord>> =
        std::collections::HashMap::new();
    for record in records {
        let entry = by_question.entry(&record.question_id).or_default();
        if entry.is_empty() {
            order.push(&record.question_id);
        }
        entry.push(record);
    }

    let mut tasks = Vec::new();
    for qid in order {
        let mut answers = by_question.remove(qid).expect("grouped above");
        answers.sort_by(|a, b| a.model_name.cmp(&b.model_name));
        for i in 0..answers.len() {
            for j in (i + 1)..answers.len() {
                let (x, y) = (answers[i], answers[j]);
                tasks.push(ComparisonTask {
                    id: format!("{qid}|{}|{}", x.model_name, y.model_name),
                    category: x.category.clone(),
                    question: x.question.clone(),
                    solution_x: x.answer.clone(),
                    solution_y: y.answer.clone(),
                    gold: None,
                    verbose_y: None,
                });
            }
        }
    }
    tasks
}

/// Draws `per_category` tasks per category without replacement, using a
/// category-keyed stream of the given seed. Output order: categories in
/// first-appearance order, tasks in draw order. Pure function of
/// (input order, seed).
pub fn sample_per_category(
    tasks: &[ComparisonTask],
    per_category: usize,
    seed: u64,
) -> Result<Vec<ComparisonTask>, DatasetError> {
    if per_category == 0 {
        return Err(DatasetError::InvalidSpec(
            "per_category must be at least 1".into(),
        ));
    }

    let mut order: Vec<&str> = Vec::new();
    let mut groups: std::collections::HashMap<&str, Vec<&ComparisonTask>> =
        std::collections::HashMap::new();
    for task in tasks {
        let entry = groups.entry(&task.category).or_default();
        if entry.is_empty() {
            order.push(&task.category);
        }
        entry.push(task);
    }

    let mut sampled = Vec::with_capacity(order.len() * per_category);
    for category in order {
        let group = &groups[category];
        if group.len() < per_category {
            return Err(DatasetError::UndersizedCategory {
                category: category.to_string(),
                have: group.len(),
                need: per_category,
            });
        }
        let mut rng = seeding::rng_for("sample-category", seed, category);
        for idx in seeding::sample_indices(group.len(), per_category, &mut rng) {
            sampled.push(group[idx].clone());
        }
    }
    Ok(sampled)
}

/// Loads a dataset per its spec: pair files pass through, answer files are
/// expanded to unique pairs. Sampling is a separate step.
pub fn load_dataset(spec: &DatasetSpec) -> Result<Vec<ComparisonTask>, DatasetError> {
    spec.validate()?;
    match spec.source_kind {
        SourceKind::PairsJsonl => load_pairs(&spec.path),
        SourceKind::AnswersJsonl => Ok(build_unique_pairs(&load_answers(&spec.path)?)),
    }
}
