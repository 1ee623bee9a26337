#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mixlaw::{ArtifactModel, ExpDomainLaw, LawArtifact, MixingLawModel, Predictor, Provenance};

pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join("golden")
}

pub fn golden(name: &str) -> PathBuf {
    golden_dir().join(name)
}

/// Compares `actual` with a golden file; `UPDATE_GOLDEN=1` rewrites it instead.
pub fn check_golden(name: &str, actual: &str) {
    let path = golden(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, actual).unwrap();
        return;
    }
    let expected = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert_eq!(actual, expected, "golden file {name} differs");
}

pub fn mixlaw(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mixlaw")).args(args).env("RUST_LOG", "info").output().expect("binary runs")
}

pub fn stdout(output: &Output) -> String {
    assert!(
        output.status.success(),
        "command failed: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    String::from_utf8(output.stdout.clone()).unwrap()
}

/// Category of the JSON error a failed command printed.
pub fn error_category(output: &Output) -> String {
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    let line = stderr.lines().rev().find(|l| l.starts_with("{\"error\"")).expect("json error line");
    let value: serde_json::Value = serde_json::from_str(line).unwrap();
    value["error"]["category"].as_str().unwrap().to_string()
}

/// Explicit two-domain-validation model whose laws generated `runs.csv` at step 2000.
pub fn golden_model() -> MixingLawModel {
    let web = ExpDomainLaw::new(1.8, 0.9, vec![-1.2, 0.3, -0.4]).unwrap();
    let code = ExpDomainLaw::new(0.9, 0.7, vec![0.5, -1.6, 0.2]).unwrap();
    MixingLawModel::explicit(
        vec![web.into(), code.into()],
        vec!["web".into(), "code".into()],
        vec![0.6, 0.4],
        vec!["web".into(), "code".into(), "books".into()],
    )
    .unwrap()
}

pub fn golden_artifact() -> LawArtifact {
    LawArtifact::new(
        ArtifactModel::Predictor(Predictor::Mixing(golden_model())),
        Provenance { command: "hand-written".into(), tool_version: "0.1.0".into(), ..Default::default() },
    )
}
