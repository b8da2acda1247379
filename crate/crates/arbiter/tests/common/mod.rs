//! Shared fixtures for the integration suites.

#![allow(dead_code)]

use std::io::Write;
use std::path::{Path, PathBuf};

use arbiter::agents::{AgentSpec, Reply, ScriptRule};
use arbiter::core::ComparisonTask;

pub fn task(id: &str, category: &str, question: &str, x: &str, y: &str) -> ComparisonTask {
    ComparisonTask {
        id: id.into(),
        category: category.into(),
        question: question.into(),
        solution_x: x.into(),
        solution_y: y.into(),
        gold: None,
        verbose_y: None,
    }
}

pub fn write_tasks(path: &Path, tasks: &[ComparisonTask]) {
    let mut f = std::fs::File::create(path).unwrap();
    for task in tasks {
        writeln!(f, "{}", serde_json::to_string(task).unwrap()).unwrap();
    }
}

/// Judge that always prefers the slot containing `marker`: its canonical
/// verdict is a pure function of task content.
pub fn content_judge(id: &str, marker: &str) -> AgentSpec {
    AgentSpec::scripted(
        id,
        vec![ScriptRule::always(Reply::PreferContaining {
            marker: marker.into(),
            preferred: 9.0,
            other: 4.0,
        })],
    )
}

/// Synthetic answer corpus: `categories` x `questions` questions, one answer
/// per model. Even-numbered models write in a recognizable "thorough" style
/// so content-keyed scripted judges have a signal to key on.
pub fn write_answer_corpus(
    dir: &Path,
    categories: usize,
    questions: usize,
    models: usize,
) -> PathBuf {
    let path = dir.join("answers.jsonl");
    let mut f = std::fs::File::create(&path).unwrap();
    for c in 0..categories {
        for q in 0..questions {
            for m in 0..models {
                let style = if m % 2 == 0 { " It covers the thorough case." } else { "" };
                let record = serde_json::json!({
                    "question_id": format!("c{c}q{q}"),
                    "category": format!("cat{c}"),
                    "question": format!("Question {q} of category {c}?"),
                    "model_name": format!("gen{m:02}"),
                    "answer": format!("Reply {m:02} to question {q} in category {c}.{style}"),
                });
                writeln!(f, "{record}").unwrap();
            }
        }
    }
    path
}

/// Scripted pipeline config: a content-keyed judge that is swayed by the
/// bandwagon statement, ties under the reasoning instruction, and leans to
/// slot 2 under verbosity; a contrarian critic; two pool judges; a meta
/// agent that selects referee 2 or concludes 6-8; and a doubling rewriter.
pub const PIPELINE_CONFIG: &str = r#"
seed = 5
workers = 4
rewriter = "rw"

[[agents]]
id = "j"
backend = "scripted"
model_name = "scripted-j"
[[agents.script]]
prompt_contains = "Most people believe"
reply = { kind = "scores", score1 = 4.0, score2 = 9.0 }
[[agents.script]]
bias = "cot"
reply = { kind = "scores", score1 = 7.0, score2 = 7.0 }
[[agents.script]]
bias = "verbosity"
reply = { kind = "scores", score1 = 5.0, score2 = 8.0 }
[[agents.script]]
role = "judge"
round = 3
bias = "position"
reply = { kind = "scores", score1 = 5.0, score2 = 9.0 }
[[agents.script]]
reply = { kind = "prefer_containing", marker = "thorough", preferred = 8.0, other = 5.0 }

[[agents]]
id = "c"
backend = "scripted"
model_name = "scripted-c"
[[agents.script]]
reply = { kind = "prefer_containing", marker = "thorough", preferred = 3.0, other = 9.0 }

[[agents]]
id = "b"
backend = "scripted"
model_name = "scripted-b"
[[agents.script]]
reply = { kind = "prefer_containing", marker = "thorough", preferred = 9.0, other = 4.0 }

[[agents]]
id = "x"
backend = "scripted"
model_name = "scripted-x"
[[agents.script]]
prompt_contains = "Most people believe"
reply = { kind = "scores", score1 = 2.0, score2 = 9.0 }
[[agents.script]]
reply = { kind = "scores", score1 = 6.0, score2 = 5.0 }

[[agents]]
id = "m"
backend = "scripted"
model_name = "scripted-m"
[[agents.script]]
role = "meta"
prompt_contains = "Best judgment"
reply = { kind = "select", index = 2 }
[[agents.script]]
role = "meta"
reply = { kind = "scores", score1 = 6.0, score2 = 8.0 }
[[agents.script]]
prompt_contains = "Most people believe"
reply = { kind = "scores", score1 = 3.0, score2 = 8.0 }
[[agents.script]]
reply = { kind = "prefer_containing", marker = "thorough", preferred = 8.0, other = 6.0 }

[[agents]]
id = "rw"
backend = "scripted"
model_name = "scripted-rw"
[[agents.script]]
reply = { kind = "repeat_target", times = 2 }
"#;

fn run_cli(args: &[&str]) {
    let mut argv = vec!["arbiter"];
    argv.extend_from_slice(args);
    let code = arbiter::cli::run(argv.clone());
    assert_eq!(code, 0, "command failed: {argv:?}");
}

/// sample -> inject -> debate + single + four meta runs -> score, stats,
/// report. Returns the directory holding the CSV/Markdown outputs.
pub fn run_full_pipeline(dir: &Path) -> PathBuf {
    let answers = write_answer_corpus(dir, 8, 2, 12);
    let config_path = dir.join("config.toml");
    std::fs::write(&config_path, PIPELINE_CONFIG).unwrap();
    let config = config_path.to_str().unwrap();

    let tasks = dir.join("tasks.jsonl");
    run_cli(&[
        "sample",
        "--input", answers.to_str().unwrap(),
        "--kind", "answers",
        "--per-category", "5",
        "--seed", "11",
        "--output", tasks.to_str().unwrap(),
    ]);

    let presentations = dir.join("presentations.jsonl");
    let tasks_verbose = dir.join("tasks_verbose.jsonl");
    run_cli(&[
        "inject",
        "--config", config,
        "--tasks", tasks.to_str().unwrap(),
        "--output", presentations.to_str().unwrap(),
        "--save-tasks", tasks_verbose.to_str().unwrap(),
    ]);
    let tasks = tasks_verbose.to_str().unwrap();

    let debate = dir.join("debate.jsonl");
    run_cli(&[
        "run", "debate",
        "--config", config,
        "--tasks", tasks,
        "--judge", "j",
        "--critic", "c",
        "--rounds", "3",
        "--manifest", debate.to_str().unwrap(),
    ]);

    let single = dir.join("single.jsonl");
    run_cli(&[
        "run", "single",
        "--config", config,
        "--tasks", tasks,
        "--judge", "m",
        "--manifest", single.to_str().unwrap(),
    ]);

    let mut manifests = vec![debate, single];
    for (pool, mode) in [("j,b", "select"), ("j,b", "conclude"), ("j,b,x", "select"), ("j,b,x", "conclude")] {
        let manifest = dir.join(format!("meta_{}_{mode}.jsonl", pool.matches(',').count() + 1));
        run_cli(&[
            "run", "meta",
            "--config", config,
            "--tasks", tasks,
            "--meta", "m",
            "--pool", pool,
            "--mode", mode,
            "--manifest", manifest.to_str().unwrap(),
        ]);
        manifests.push(manifest);
    }

    let out_dir = dir.join("out");
    let mut score_args = vec!["score"];
    for manifest in &manifests {
        score_args.extend_from_slice(&["--manifest", manifest.to_str().unwrap()]);
    }
    score_args.extend_from_slice(&["--out-dir", out_dir.to_str().unwrap()]);
    run_cli(&score_args);

    let mut stats_args = vec!["stats"];
    for manifest in &manifests {
        stats_args.extend_from_slice(&["--manifest", manifest.to_str().unwrap()]);
    }
    stats_args.extend_from_slice(&["--out-dir", out_dir.to_str().unwrap()]);
    run_cli(&stats_args);

    let mut report_args = vec!["report"];
    for manifest in &manifests {
        report_args.extend_from_slice(&["--manifest", manifest.to_str().unwrap()]);
    }
    report_args.extend_from_slice(&["--config", config, "--out-dir", out_dir.to_str().unwrap()]);
    run_cli(&report_args);

    out_dir
}
