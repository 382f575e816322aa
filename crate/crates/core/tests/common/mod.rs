#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use embspec::seqio::{
    write_sequence_file, DocumentMeta, EmbeddingSequence, Language, Layer, Manifest, ManifestEntry,
    Source,
};

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_embspec")
}

pub fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().expect("spawn embspec")
}

pub fn run_ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "embspec {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn synth(dir: &Path, n: usize, dims: usize, alpha: f64, docs: usize, seed: u64, layer: u32) -> PathBuf {
    run_ok(&[
        "synth",
        "--n", &n.to_string(),
        "--dims", &dims.to_string(),
        "--alpha", &alpha.to_string(),
        "--docs", &docs.to_string(),
        "--seed", &seed.to_string(),
        "--layer", &layer.to_string(),
        "--out-dir", dir.to_str().unwrap(),
    ]);
    dir.join("manifest.jsonl")
}

pub fn meta(doc_id: &str, layer: Layer) -> DocumentMeta {
    DocumentMeta {
        doc_id: doc_id.into(),
        language: Language::En,
        source: Source::Human,
        model_id: "test-model".into(),
        layer,
        tokenizer_id: "test-tok".into(),
    }
}

/// Writes each sequence as an ESEQ file in `dir` and a manifest listing them in order.
pub fn write_corpus(dir: &Path, docs: &[(DocumentMeta, EmbeddingSequence)]) -> PathBuf {
    std::fs::create_dir_all(dir).unwrap();
    let mut entries = Vec::new();
    for (meta, seq) in docs {
        let path = dir.join(format!("{}.eseq", meta.doc_id));
        write_sequence_file(seq, &path).unwrap();
        entries.push(ManifestEntry { path, meta: meta.clone() });
    }
    let manifest_path = dir.join("manifest.jsonl");
    Manifest::new(entries)
        .unwrap()
        .write(std::fs::File::create(&manifest_path).unwrap())
        .unwrap();
    manifest_path
}

/// Concatenates manifests, rewriting relative paths to absolute ones.
pub fn merge_manifests(out: &Path, parts: &[PathBuf]) -> PathBuf {
    let mut entries = Vec::new();
    for p in parts {
        entries.extend(embspec::seqio::load_manifest(p).unwrap().entries);
    }
    Manifest::new(entries).unwrap().write(std::fs::File::create(out).unwrap()).unwrap();
    out.to_path_buf()
}

pub fn read_csv(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_path(path).unwrap();
    r.records().map(|rec| rec.unwrap().iter().map(str::to_string).collect()).collect()
}

/// Column `name` of the first data row of a headed CSV.
pub fn field(rows: &[Vec<String>], row: usize, name: &str) -> String {
    let col = rows[0].iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"));
    rows[row + 1][col].clone()
}

pub fn field_f64(rows: &[Vec<String>], row: usize, name: &str) -> f64 {
    field(rows, row, name).parse().unwrap()
}
