//! Append-only run manifest: one JSON record per line, ordered by a monotone
//! sequence number. Every metric and report is recomputable from the
//! manifest alone; a footer record marks clean completion so partial runs
//! remain salvageable.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::agents::prompts::MetaMode;
use crate::agents::{AgentId, CallRecord};
use crate::core::{
    canonicalize, BiasKind, CanonicalVerdict, ComparisonTask, Presentation, SolutionId,
};
use crate::orchestrate::Transcript;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "framework", rename_all = "snake_case")]
pub enum FrameworkKey {
    Single {
        judge: AgentId,
    },
    Debate {
        judge: AgentId,
        critic: AgentId,
        rounds: u32,
    },
    Meta {
        meta: AgentId,
        pool: Vec<AgentId>,
        mode: MetaMode,
    },
}

impl FrameworkKey {
    /// Stable human-readable label used in reports and grouping.
    pub fn descriptor(&self) -> String {
        match self {
            FrameworkKey::Single { judge } => format!("single judge={judge}"),
            FrameworkKey::Debate { judge, critic, rounds } => {
                format!("debate judge={judge} critic={critic} rounds={rounds}")
            }
            FrameworkKey::Meta { meta, pool, mode } => format!(
                "meta-{} meta={meta} pool={}",
                mode.label(),
                pool.join("+")
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EpisodeKey {
    pub task_id: String,
    pub bias: BiasKind,
    #[serde(flatten)]
    pub framework: FrameworkKey,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundVerdict {
    pub round: u32,
    pub verdict: CanonicalVerdict,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolVerdict {
    pub agent: AgentId,
    pub verdict: CanonicalVerdict,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionRecord {
    pub shuffled_position: Option<usize>,
    pub pool_index: Option<usize>,
    pub agent: Option<AgentId>,
}

/// Outcome summary of one episode, in solution-identity space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    #[serde(flatten)]
    pub key: EpisodeKey,
    pub category: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<SolutionId>,
    /// Judge verdict per round (single and debate episodes).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub round_verdicts: Vec<RoundVerdict>,
    /// Pool member verdicts (meta episodes), in pre-shuffle pool order.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pool_verdicts: Vec<PoolVerdict>,
    pub final_verdict: CanonicalVerdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shuffle: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selection: Option<SelectionRecord>,
    pub invalid_turns: u32,
}

impl EpisodeRecord {
    /// Summarizes a finished transcript, mapping every verdict through the
    /// presentation's permutation into canonical space.
    pub fn from_transcript(
        key: EpisodeKey,
        task: &ComparisonTask,
        p: &Presentation,
        transcript: &Transcript,
    ) -> EpisodeRecord {
        let mut round_verdicts = Vec::new();
        let mut pool_verdicts = Vec::new();
        match &key.framework {
            FrameworkKey::Meta { pool: members, .. } => {
                for (member, (_, judgment)) in
                    members.iter().zip(transcript.judgment_turns())
                {
                    pool_verdicts.push(PoolVerdict {
                        agent: member.clone(),
                        verdict: canonicalize(judgment.verdict, p),
                    });
                }
            }
            _ => {
                for (round, verdict) in transcript.judge_round_verdicts() {
                    round_verdicts
                        .push(RoundVerdict { round, verdict: canonicalize(verdict, p) });
                }
            }
        }
        let invalid_turns = transcript
            .judgment_turns()
            .filter(|(_, j)| j.verdict == crate::core::Verdict::Invalid)
            .count() as u32
            + transcript
                .selection()
                .map_or(0, |s| u32::from(s.shuffled_position.is_none()));
        let selection = transcript.selection().map(|s| SelectionRecord {
            shuffled_position: s.shuffled_position,
            pool_index: s.pool_index,
            agent: s.agent.clone(),
        });
        EpisodeRecord {
            key,
            category: task.category.clone(),
            gold: task.gold,
            round_verdicts,
            pool_verdicts,
            final_verdict: canonicalize(transcript.final_verdict(), p),
            shuffle: transcript.shuffle.clone(),
            selection,
            invalid_turns,
        }
    }

    pub fn verdict_at_round(&self, round: u32) -> Option<CanonicalVerdict> {
        self.round_verdicts
            .iter()
            .find(|r| r.round == round)
            .map(|r| r.verdict)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub run_id: String,
    pub created_ms: u64,
    pub command: String,
    pub seed: u64,
    pub sampler: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_fingerprint: Option<String>,
    /// Full config snapshot; enough to re-launch an identical run.
    pub config: serde_json::Value,
    /// The request (framework, biases, task source) this run executed.
    pub request: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Footer {
    pub completed: bool,
    pub n_episodes: u64,
    pub ts_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum RecordBody {
    Header(Header),
    Call(CallRecord),
    Episode(EpisodeRecord),
    Footer(Footer),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub seq: u64,
    #[serde(flatten)]
    pub body: RecordBody,
}

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed manifest record: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

/// Deterministic run id: a digest of everything that defines the run.
pub fn run_id(command: &str, config: &serde_json::Value, request: &serde_json::Value) -> String {
    let mut hasher = Sha256::new();
    hasher.update(command.as_bytes());
    hasher.update(config.to_string().as_bytes());
    hasher.update(request.to_string().as_bytes());
    hex::encode(&hasher.finalize()[..8])
}

/// SHA-256 of a file's bytes, for dataset fingerprints.
pub fn file_fingerprint(path: &Path) -> Result<String, ManifestError> {
    let bytes = std::fs::read(path).map_err(|source| ManifestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub struct ManifestWriter {
    out: BufWriter<File>,
    path: PathBuf,
    next_seq: u64,
}

impl ManifestWriter {
    pub fn create(path: &Path) -> Result<ManifestWriter, ManifestError> {
        let file = File::create(path).map_err(|source| ManifestError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(ManifestWriter {
            out: BufWriter::new(file),
            path: path.to_path_buf(),
            next_seq: 0,
        })
    }

    pub fn append(&mut self, body: RecordBody) -> Result<u64, ManifestError> {
        let seq = self.next_seq;
        let record = ManifestRecord { seq, body };
        let io_err = |source| ManifestError::Io { path: self.path.clone(), source };
        let line = serde_json::to_string(&record)
            .expect("manifest records are serializable");
        writeln!(self.out, "{line}").map_err(io_err)?;
        self.out.flush().map_err(io_err)?;
        self.next_seq += 1;
        Ok(seq)
    }
}

#[derive(Debug, Default)]
pub struct Manifest {
    pub header: Option<Header>,
    pub calls: Vec<CallRecord>,
    pub episodes: Vec<EpisodeRecord>,
    pub footer: Option<Footer>,
}

pub fn read_manifest(path: &Path) -> Result<Manifest, ManifestError> {
    let file = File::open(path).map_err(|source| ManifestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut manifest = Manifest::default();
    let mut expected_seq = 0u64;
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| ManifestError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ManifestRecord =
            serde_json::from_str(&line).map_err(|e| ManifestError::Malformed {
                path: path.to_path_buf(),
                line: line_no,
                message: e.to_string(),
            })?;
        if record.seq != expected_seq {
            return Err(ManifestError::Malformed {
                path: path.to_path_buf(),
                line: line_no,
                message: format!("sequence gap: expected {expected_seq}, got {}", record.seq),
            });
        }
        expected_seq += 1;
        match record.body {
            RecordBody::Header(h) => manifest.header = Some(h),
            RecordBody::Call(c) => manifest.calls.push(c),
            RecordBody::Episode(e) => manifest.episodes.push(e),
            RecordBody::Footer(f) => manifest.footer = Some(f),
        }
    }
    Ok(manifest)
}

/// Reads and concatenates episodes/calls from several manifests.
pub fn read_manifests(paths: &[PathBuf]) -> Result<Vec<Manifest>, ManifestError> {
    paths.iter().map(|p| read_manifest(p)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn episode(task: &str, bias: BiasKind) -> EpisodeRecord {
        EpisodeRecord {
            key: EpisodeKey {
                task_id: task.into(),
                bias,
                framework: FrameworkKey::Single { judge: "j".into() },
            },
            category: "math".into(),
            gold: None,
            round_verdicts: vec![RoundVerdict { round: 0, verdict: CanonicalVerdict::X }],
            pool_verdicts: vec![],
            final_verdict: CanonicalVerdict::X,
            shuffle: None,
            selection: None,
            invalid_turns: 0,
        }
    }

    #[test]
    fn writer_reader_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.jsonl");
        let mut writer = ManifestWriter::create(&path).unwrap();
        writer
            .append(RecordBody::Header(Header {
                run_id: "abc".into(),
                created_ms: 1,
                command: "run single".into(),
                seed: 7,
                sampler: "s".into(),
                dataset_fingerprint: None,
                config: serde_json::json!({}),
                request: serde_json::json!({}),
            }))
            .unwrap();
        writer.append(RecordBody::Episode(episode("t1", BiasKind::None))).unwrap();
        writer
            .append(RecordBody::Footer(Footer { completed: true, n_episodes: 1, ts_ms: 2 }))
            .unwrap();

        let manifest = read_manifest(&path).unwrap();
        assert_eq!(manifest.header.unwrap().run_id, "abc");
        assert_eq!(manifest.episodes.len(), 1);
        assert_eq!(manifest.episodes[0].key.task_id, "t1");
        assert!(manifest.footer.unwrap().completed);
    }

    #[test]
    fn sequence_gaps_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(
            &path,
            "{\"seq\":0,\"type\":\"footer\",\"completed\":true,\"n_episodes\":0,\"ts_ms\":0}\n\
             {\"seq\":2,\"type\":\"footer\",\"completed\":true,\"n_episodes\":0,\"ts_ms\":0}\n",
        )
        .unwrap();
        assert!(matches!(
            read_manifest(&path),
            Err(ManifestError::Malformed { line: 2, .. })
        ));
    }

    #[test]
    fn run_id_is_deterministic_and_input_sensitive() {
        let config = serde_json::json!({"seed": 1});
        let request = serde_json::json!({"framework": "single"});
        let a = run_id("run", &config, &request);
        let b = run_id("run", &config, &request);
        assert_eq!(a, b);
        let c = run_id("run", &serde_json::json!({"seed": 2}), &request);
        assert_ne!(a, c);
    }

    #[test]
    fn framework_descriptors_are_stable() {
        let meta = FrameworkKey::Meta {
            meta: "m".into(),
            pool: vec!["a".into(), "b".into()],
            mode: MetaMode::Select,
        };
        assert_eq!(meta.descriptor(), "meta-select meta=m pool=a+b");
        let debate = FrameworkKey::Debate {
            judge: "j".into(),
            critic: "c".into(),
            rounds: 3,
        };
        assert_eq!(debate.descriptor(), "debate judge=j critic=c rounds=3");
    }
}
