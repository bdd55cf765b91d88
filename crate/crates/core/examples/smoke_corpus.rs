//! Writes the synthetic smoke corpus plus a matching `smoke.toml`.
//!
//! `cargo run --example smoke_corpus -- <dir> [speakers]`

use std::path::PathBuf;

use surpsel_core::pipeline::{ModelSettings, PathsConfig, RunConfig};
use surpsel_core::synth::{write_smoke_corpus, SmokeSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "smoke".into()));
    let speakers = args.next().map(|s| s.parse()).transpose()?.unwrap_or(24);
    let spec = SmokeSpec {
        speakers,
        ..SmokeSpec::default()
    };
    let paths = write_smoke_corpus(&dir, &spec)?;
    let rel = |p: &std::path::Path| p.strip_prefix(&dir).unwrap_or(p).to_path_buf();
    let config = RunConfig {
        paths: PathsConfig {
            audio_dir: Some(rel(&paths.audio_dir)),
            alignments: Some(rel(&paths.alignments)),
            token_scores: paths.token_scores.as_deref().map(rel),
            counts_file: Some(rel(&paths.counts_file)),
            embeddings_dir: paths.embeddings_dir.as_deref().map(rel),
            out_dir: "out".into(),
        },
        model: ModelSettings {
            epochs: 10,
            ..ModelSettings::default()
        },
        ..RunConfig::default()
    };
    std::fs::write(dir.join("smoke.toml"), config.to_toml())?;
    println!("{} utterances under {}", paths.utterances, dir.display());
    Ok(())
}
