//! Replays the checked-in fuzz corpus through the parsers; none may panic.

use std::fs;
use std::path::{Path, PathBuf};

use estsel::config::{RunConfig, SimulateConfig, VerifyConfig};
use estsel::data::{read_csv, Schema};
use estsel::grid::GridEvaluation;

fn seeds(target: &str) -> Vec<(PathBuf, Vec<u8>)> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .map(|p| {
            let bytes = fs::read(&p).unwrap();
            (p, bytes)
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "empty corpus for {target}");
    out
}

#[test]
fn csv_ingest_corpus() {
    let mut schema = Schema::new("z", "y", &["a", "b", "g"]);
    schema.categorical = vec!["g".into()];
    let parsed: Vec<bool> = seeds("csv_ingest").iter().map(|(_, b)| read_csv(b.as_slice(), &schema).is_ok()).collect();
    assert!(parsed.iter().any(|&ok| ok));
    assert!(parsed.iter().any(|&ok| !ok));
}

#[test]
fn grid_csv_corpus() {
    for (p, b) in seeds("grid_csv") {
        let name = p.file_name().unwrap().to_string_lossy().to_string();
        let r = GridEvaluation::read_csv(b.as_slice());
        assert_eq!(r.is_ok(), name == "small.csv", "{name}");
    }
}

#[test]
fn config_corpora() {
    let text = |b: &[u8]| String::from_utf8(b.to_vec()).unwrap();
    let run: Vec<bool> = seeds("run_config").iter().map(|(_, b)| RunConfig::from_toml(&text(b)).is_ok()).collect();
    assert_eq!(run.iter().filter(|&&ok| ok).count(), 2);
    for (p, b) in seeds("simulate_config") {
        let ok = SimulateConfig::from_toml(&text(&b)).is_ok();
        assert_eq!(ok, !p.ends_with("zero_replicates.toml"), "{}", p.display());
    }
    for (p, b) in seeds("verify_config") {
        assert!(VerifyConfig::from_toml(&text(&b)).is_ok(), "{}", p.display());
    }
}
