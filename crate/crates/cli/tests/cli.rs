use std::path::Path;
use std::process::{Command, Output};

use surpsel_core::eval::MetricsReport;
use surpsel_core::pipeline::RunConfig;
use surpsel_core::selection::{Mode, SpanSelection};
use surpsel_core::synth::{write_smoke_corpus, SmokePaths, SmokeSpec};

fn surpsel(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_surpsel"))
        .args(args)
        .env_remove("SURPSEL_JOBS")
        .output()
        .unwrap()
}

fn corpus(dir: &Path, token_scores: bool) -> SmokePaths {
    let spec = SmokeSpec {
        speakers: 6,
        token_scores,
        ..SmokeSpec::default()
    };
    write_smoke_corpus(dir, &spec).unwrap()
}

fn path_args(p: &SmokePaths, out: &Path) -> Vec<String> {
    let mut args = vec![
        "--audio-dir".to_string(),
        p.audio_dir.display().to_string(),
        "--alignments".into(),
        p.alignments.display().to_string(),
        "--counts-file".into(),
        p.counts_file.display().to_string(),
        "--embeddings-dir".into(),
        p.embeddings_dir.as_ref().unwrap().display().to_string(),
        "--out-dir".into(),
        out.display().to_string(),
    ];
    if let Some(t) = &p.token_scores {
        args.extend(["--token-scores".into(), t.display().to_string()]);
    }
    args
}

fn run_with(args: &[String], extra: &[&str]) -> Output {
    let mut all: Vec<&str> = args.iter().map(String::as_str).collect();
    all.extend_from_slice(extra);
    surpsel(&all)
}

#[test]
fn help_lists_every_config_key_with_default() {
    let out = surpsel(&["--help"]);
    assert!(out.status.success());
    let help = String::from_utf8(out.stdout).unwrap();
    // One entry per option: the flag line plus its indented description.
    let mut entries: Vec<String> = Vec::new();
    for line in help.lines() {
        if line.trim_start().starts_with('-') || entries.is_empty() {
            entries.push(line.to_string());
        } else {
            entries.last_mut().unwrap().push_str(line);
        }
    }
    let toml = RunConfig::default().to_toml();
    let keys: Vec<&str> = toml
        .lines()
        .filter(|l| !l.starts_with('[') && l.contains('='))
        .map(|l| l.split('=').next().unwrap().trim())
        .collect();
    assert!(keys.len() >= 20, "{keys:?}");
    for key in keys.iter().copied().chain(["audio_dir", "alignments", "token_scores", "counts_file", "embeddings_dir", "fold_seed"]) {
        let flag = match key {
            "modes" => "--mode".to_string(),
            "n_values" => "--n".to_string(),
            k => format!("--{}", k.replace('_', "-")),
        };
        let entry = entries
            .iter()
            .find(|e| e.trim_start().starts_with(&format!("{flag} ")))
            .unwrap_or_else(|| panic!("{flag} missing from --help"));
        let optional_path = matches!(key, "audio_dir" | "alignments" | "token_scores" | "counts_file" | "embeddings_dir");
        assert!(optional_path || entry.contains("[default:"), "{flag} has no default: {entry}");
    }
}

#[test]
fn baseline_mode_runs_only_full_utterance_cells() {
    let dir = tempfile::tempdir().unwrap();
    let p = corpus(dir.path(), true);
    let out_dir = dir.path().join("out");
    let args = path_args(&p, &out_dir);
    let out = run_with(&args, &["--mode", "baseline", "--folds", "2", "--epochs", "2", "--hidden", "8", "run"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: MetricsReport =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("report/report.json")).unwrap()).unwrap();
    assert_eq!(report.cells.len(), 2);
    assert!(report.cells.iter().all(|c| c.key.mode == Mode::FullUtterance && c.key.n.is_none()));

    // `report` re-renders the same tables.
    let before = std::fs::read_to_string(out_dir.join("report/cells.csv")).unwrap();
    let out = run_with(&args, &["report"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(std::fs::read_to_string(out_dir.join("report/cells.csv")).unwrap(), before);
}

#[test]
fn single_n_grid() {
    let dir = tempfile::tempdir().unwrap();
    let p = corpus(dir.path(), true);
    let out_dir = dir.path().join("out");
    let out = run_with(&path_args(&p, &out_dir), &["--n", "1", "select"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(out_dir.join("selections.jsonl")).unwrap();
    let sels: Vec<SpanSelection> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert!(!sels.is_empty());
    for s in sels.iter().filter(|s| s.mode != Mode::FullUtterance) {
        assert_eq!(s.n, 1);
        assert_eq!(s.spans.len(), 1);
    }
    assert!(sels.iter().any(|s| s.mode == Mode::IndependentN));
}

#[test]
fn missing_token_scores_name_the_exporter() {
    let dir = tempfile::tempdir().unwrap();
    let p = corpus(dir.path(), false);
    let out = run_with(&path_args(&p, &dir.path().join("out")), &["select"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("surpsel-export token-scores"), "{err}");

    // Unigram-only grids do not need them.
    let out = run_with(&path_args(&p, &dir.path().join("out")), &["--criteria", "unigram_sr", "select"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn single_cell_commands_reject_a_grid() {
    let dir = tempfile::tempdir().unwrap();
    let p = corpus(dir.path(), true);
    let out = run_with(&path_args(&p, &dir.path().join("out")), &["pool"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("one cell"));
}
