//! Bundled test programs with fixed inputs and pinned outputs.
//!
//! A corpus directory holds `name.ir` plus `name.json` manifests of the form
//! `{ir, entry, inputs: [[...]], expected: [[...]]}`. An expected vector is
//! the printed integers followed by the return value, if any.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::interp::{run, ExecutionResult, Status};
use crate::ir::{parse_module, IrModule};

/// Step budget for an unobfuscated corpus run.
pub const CORPUS_FUEL: u64 = 1_000_000;

/// Minimum number of input vectors per entry.
pub const MIN_INPUTS: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub ir: String,
    pub entry: String,
    pub inputs: Vec<Vec<i64>>,
    pub expected: Vec<Vec<i64>>,
}

#[derive(Debug, Clone)]
pub struct CorpusEntry {
    /// Manifest file stem.
    pub name: String,
    pub ir_path: PathBuf,
    pub text: String,
    pub module: IrModule,
    pub manifest: Manifest,
}

impl CorpusEntry {
    pub fn ir_file(&self) -> String {
        self.manifest.ir.clone()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CorpusDiagnostic {
    pub file: String,
    pub message: String,
}

/// Flatten an execution into the manifest's expected-vector form. Traps and
/// fuel exhaustion have no such form.
pub fn observed(r: &ExecutionResult) -> Option<Vec<i64>> {
    match r.status {
        Status::Returned(v) => {
            let mut out = r.output.clone();
            out.extend(v);
            Some(out)
        }
        _ => None,
    }
}

/// The corpus shipped with this crate.
pub fn bundled_corpus_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("corpus")
}

fn check_entry(dir: &Path, manifest_path: &Path) -> Result<CorpusEntry, String> {
    let raw = fs::read_to_string(manifest_path).map_err(|e| format!("cannot read manifest: {e}"))?;
    let manifest: Manifest = serde_json::from_str(&raw).map_err(|e| format!("malformed manifest: {e}"))?;
    if manifest.inputs.len() < MIN_INPUTS {
        return Err(format!("{} input vectors, need at least {MIN_INPUTS}", manifest.inputs.len()));
    }
    if manifest.inputs.len() != manifest.expected.len() {
        return Err(format!("{} inputs but {} expected vectors", manifest.inputs.len(), manifest.expected.len()));
    }
    let ir_path = dir.join(&manifest.ir);
    let text = fs::read_to_string(&ir_path).map_err(|e| format!("cannot read {}: {e}", manifest.ir))?;
    let module = parse_module(&text).map_err(|e| format!("{}: {e}", manifest.ir))?;
    for (args, want) in manifest.inputs.iter().zip(&manifest.expected) {
        let r = run(&module, &manifest.entry, args, CORPUS_FUEL).map_err(|e| format!("input {args:?}: {e}"))?;
        match observed(&r) {
            None => return Err(format!("input {args:?}: {:?} within {CORPUS_FUEL} steps", r.status)),
            Some(got) if &got != want => {
                return Err(format!("input {args:?}: expected {want:?}, got {got:?}"));
            }
            Some(_) => {}
        }
    }
    let name = manifest_path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
    Ok(CorpusEntry { name, ir_path, text, module, manifest })
}

/// Load every manifest in `dir` (sorted by file name). Entries that fail to
/// parse, validate, terminate or reproduce their pinned outputs are reported
/// instead of returned.
pub fn load_corpus(dir: &Path) -> std::io::Result<(Vec<CorpusEntry>, Vec<CorpusDiagnostic>)> {
    let mut manifests: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    manifests.sort();
    let mut entries = Vec::new();
    let mut diagnostics = Vec::new();
    for path in manifests {
        match check_entry(dir, &path) {
            Ok(e) => entries.push(e),
            Err(message) => diagnostics.push(CorpusDiagnostic {
                file: path.file_name().and_then(|s| s.to_str()).unwrap_or_default().to_string(),
                message,
            }),
        }
    }
    Ok((entries, diagnostics))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, ir: &str, manifest: &str) {
        fs::write(dir.join(format!("{name}.ir")), ir).unwrap();
        fs::write(dir.join(format!("{name}.json")), manifest).unwrap();
    }

    #[test]
    fn empty_directory() {
        let dir = tempfile::tempdir().unwrap();
        let (entries, diags) = load_corpus(dir.path()).unwrap();
        assert!(entries.is_empty() && diags.is_empty());
    }

    #[test]
    fn fuel_exhaustion_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        write(
            dir.path(),
            "spin",
            "func @spin(%x: int) -> int { entry: br entry }",
            r#"{"ir": "spin.ir", "entry": "spin", "inputs": [[1], [2], [3]], "expected": [[1], [2], [3]]}"#,
        );
        let (entries, diags) = load_corpus(dir.path()).unwrap();
        assert!(entries.is_empty());
        assert_eq!(diags.len(), 1);
        assert!(diags[0].message.contains("FuelExhausted"), "{}", diags[0].message);
    }

    #[test]
    fn bad_manifests_are_isolated() {
        let dir = tempfile::tempdir().unwrap();
        let ok_ir = "func @id(%x: int) -> int { entry: ret %x }";
        write(dir.path(), "a_ok", ok_ir, r#"{"ir": "a_ok.ir", "entry": "id", "inputs": [[1], [2], [3]], "expected": [[1], [2], [3]]}"#);
        write(dir.path(), "b_wrong", ok_ir, r#"{"ir": "b_wrong.ir", "entry": "id", "inputs": [[1], [2], [3]], "expected": [[1], [2], [4]]}"#);
        write(dir.path(), "c_few", ok_ir, r#"{"ir": "c_few.ir", "entry": "id", "inputs": [[1]], "expected": [[1]]}"#);
        write(dir.path(), "d_syntax", "func @", r#"{"ir": "d_syntax.ir", "entry": "id", "inputs": [[1], [2], [3]], "expected": [[1], [2], [3]]}"#);
        fs::write(dir.path().join("e_json.json"), "{not json").unwrap();
        let (entries, diags) = load_corpus(dir.path()).unwrap();
        assert_eq!(entries.len(), 1);
        assert_eq!(entries[0].name, "a_ok");
        let files: Vec<&str> = diags.iter().map(|d| d.file.as_str()).collect();
        assert_eq!(files, ["b_wrong.json", "c_few.json", "d_syntax.json", "e_json.json"]);
    }
}
