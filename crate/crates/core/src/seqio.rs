//! Embedding-sequence files (ESEQ v1) and JSONL corpus manifests.
//!
//! ESEQ v1 layout, all integers little-endian:
//!
//! ```text
//! 0..4    magic "ESEQ"
//! 4..6    version u16 = 1
//! 6       dtype u8 = 1 (binary32, little-endian)
//! 7       reserved u8 = 0
//! 8..12   token count T, u32
//! 12..16  dimension d, u32
//! 16..    T*d f32 values, token-major
//! ```
//!
//! Per-document metadata is kept out of the binary file, in a manifest with
//! one JSON object per line. Manifest order is the reduction order for every
//! corpus-level aggregate.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use serde::de::{self, Deserializer};
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"ESEQ";
pub const VERSION: u16 = 1;
pub const DTYPE_F32: u8 = 1;
pub const HEADER_LEN: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Language {
    Cn,
    En,
    De,
    Jp,
    Other(String),
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Language::Cn => f.write_str("CN"),
            Language::En => f.write_str("EN"),
            Language::De => f.write_str("DE"),
            Language::Jp => f.write_str("JP"),
            Language::Other(tag) => write!(f, "other:{tag}"),
        }
    }
}

impl std::str::FromStr for Language {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "CN" => Ok(Language::Cn),
            "EN" => Ok(Language::En),
            "DE" => Ok(Language::De),
            "JP" => Ok(Language::Jp),
            _ => match s.strip_prefix("other:") {
                Some(tag) if !tag.is_empty() => Ok(Language::Other(tag.to_string())),
                _ => Err(format!("unknown language {s:?} (expected CN|EN|DE|JP|other:<tag>)")),
            },
        }
    }
}

impl Serialize for Language {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Language {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Human,
    Ai,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Human => "human",
            Source::Ai => "ai",
        })
    }
}

/// Hidden-state layer index, or the static-embedding control.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Layer {
    Index(u32),
    Static,
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Layer::Index(i) => write!(f, "{i}"),
            Layer::Static => f.write_str("static"),
        }
    }
}

impl Serialize for Layer {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Layer::Index(i) => s.serialize_u32(*i),
            Layer::Static => s.serialize_str("static"),
        }
    }
}

impl<'de> Deserialize<'de> for Layer {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(u32),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(i) => Ok(Layer::Index(i)),
            Raw::Str(s) if s == "static" => Ok(Layer::Static),
            Raw::Str(s) => Err(de::Error::custom(format!(
                "layer must be a non-negative integer or \"static\", got {s:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentMeta {
    pub doc_id: String,
    pub language: Language,
    pub source: Source,
    pub model_id: String,
    /// `Layer::Static` exactly when the vectors come from a position-independent lookup table.
    pub layer: Layer,
    pub tokenizer_id: String,
}

/// One document's token trajectory, `token_count` rows of `dim` values.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSequence {
    token_count: usize,
    dim: usize,
    values: Vec<f32>,
}

impl EmbeddingSequence {
    pub fn new(token_count: usize, dim: usize, values: Vec<f32>) -> Result<Self> {
        if token_count < 2 {
            return Err(Error::Validation(format!(
                "token_count must be at least 2, got {token_count}"
            )));
        }
        if dim == 0 {
            return Err(Error::Validation("dim must be positive".into()));
        }
        let expected = token_count.checked_mul(dim).ok_or_else(|| {
            Error::Validation(format!("shape {token_count}x{dim} overflows"))
        })?;
        if values.len() != expected {
            return Err(Error::Validation(format!(
                "expected {expected} values for {token_count}x{dim}, got {}",
                values.len()
            )));
        }
        check_finite(&values)?;
        Ok(Self { token_count, dim, values })
    }

    pub fn token_count(&self) -> usize {
        self.token_count
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Row-major (token-major) values.
    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn row(&self, t: usize) -> &[f32] {
        &self.values[t * self.dim..(t + 1) * self.dim]
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    /// Values widened to f64, same layout.
    pub fn to_f64(&self) -> Vec<f64> {
        self.values.iter().map(|&v| v as f64).collect()
    }
}

fn check_finite(values: &[f32]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::Validation(format!(
            "non-finite value {} at flat index {i}",
            values[i]
        ))),
        None => Ok(()),
    }
}

pub fn write_sequence<W: Write>(seq: &EmbeddingSequence, mut sink: W) -> Result<()> {
    // Constructors already reject non-finite values; recheck so nothing partial is emitted.
    check_finite(&seq.values)?;
    let t = u32::try_from(seq.token_count)
        .map_err(|_| Error::Validation("token_count exceeds u32".into()))?;
    let d = u32::try_from(seq.dim).map_err(|_| Error::Validation("dim exceeds u32".into()))?;

    let mut buf = Vec::with_capacity(HEADER_LEN + seq.values.len() * 4);
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.push(DTYPE_F32);
    buf.push(0);
    buf.extend_from_slice(&t.to_le_bytes());
    buf.extend_from_slice(&d.to_le_bytes());
    for v in &seq.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    sink.write_all(&buf)?;
    sink.flush()?;
    Ok(())
}

pub fn read_sequence<R: Read>(mut source: R) -> Result<EmbeddingSequence> {
    let mut header = Vec::with_capacity(HEADER_LEN);
    (&mut source).take(HEADER_LEN as u64).read_to_end(&mut header)?;
    if header.len() >= 4 && header[..4] != MAGIC {
        return Err(Error::Format(format!("bad magic {:02x?}", &header[..4])));
    }
    if header.len() < HEADER_LEN {
        return Err(Error::Corruption(format!(
            "truncated header: {} of {HEADER_LEN} bytes",
            header.len()
        )));
    }
    let version = u16::from_le_bytes([header[4], header[5]]);
    if version != VERSION {
        return Err(Error::Version(format!("ESEQ version {version}")));
    }
    if header[6] != DTYPE_F32 {
        return Err(Error::Version(format!("dtype code {}", header[6])));
    }
    if header[7] != 0 {
        return Err(Error::Format(format!("reserved byte is {}, expected 0", header[7])));
    }
    let t = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(header[12..16].try_into().unwrap()) as usize;
    if t < 2 {
        return Err(Error::Validation(format!("token_count must be at least 2, got {t}")));
    }
    if d == 0 {
        return Err(Error::Validation("dim must be positive".into()));
    }
    let payload_len = (t as u64) * (d as u64) * 4;

    // Read through `take` so a lying header cannot force a huge allocation up front.
    let mut payload = Vec::new();
    (&mut source).take(payload_len).read_to_end(&mut payload)?;
    if (payload.len() as u64) < payload_len {
        return Err(Error::Corruption(format!(
            "payload truncated: header claims {t}x{d} ({payload_len} bytes), found {}",
            payload.len()
        )));
    }
    let mut extra = [0u8; 1];
    if source.read(&mut extra)? != 0 {
        return Err(Error::Corruption(format!(
            "trailing bytes after {payload_len}-byte payload"
        )));
    }

    let values: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    EmbeddingSequence::new(t, d, values)
}

pub fn read_sequence_file(path: &Path) -> Result<EmbeddingSequence> {
    read_sequence(BufReader::new(File::open(path)?))
}

pub fn write_sequence_file(seq: &EmbeddingSequence, path: &Path) -> Result<()> {
    write_sequence(seq, std::io::BufWriter::new(File::create(path)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    /// Resolved path: relative paths in the file are taken against the manifest's directory.
    pub path: PathBuf,
    pub meta: DocumentMeta,
}

#[derive(Serialize, Deserialize)]
struct ManifestLine {
    path: String,
    #[serde(flatten)]
    meta: DocumentMeta,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &entries {
            if e.meta.doc_id.is_empty() {
                return Err(Error::Validation("empty doc_id".into()));
            }
            if !seen.insert(e.meta.doc_id.as_str()) {
                return Err(Error::Validation(format!("duplicate doc_id {:?}", e.meta.doc_id)));
            }
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, ManifestEntry> {
        self.entries.iter()
    }

    /// Parses JSONL; blank lines are ignored, line numbers are 1-based.
    pub fn parse<R: BufRead>(reader: R, base_dir: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        let mut seen = HashSet::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: ManifestLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            if parsed.meta.doc_id.is_empty() {
                return Err(Error::Parse { line: i + 1, message: "empty doc_id".into() });
            }
            if !seen.insert(parsed.meta.doc_id.clone()) {
                return Err(Error::Validation(format!(
                    "duplicate doc_id {:?} at line {}",
                    parsed.meta.doc_id,
                    i + 1
                )));
            }
            let raw = PathBuf::from(&parsed.path);
            let path = if raw.is_absolute() { raw } else { base_dir.join(raw) };
            entries.push(ManifestEntry { path, meta: parsed.meta });
        }
        Ok(Self { entries })
    }

    /// Writes one JSON object per entry. Paths are written as stored.
    pub fn write<W: Write>(&self, mut sink: W) -> Result<()> {
        for e in &self.entries {
            let line = ManifestLine {
                path: e.path.to_string_lossy().into_owned(),
                meta: e.meta.clone(),
            };
            serde_json::to_writer(&mut sink, &line).map_err(std::io::Error::from)?;
            sink.write_all(b"\n")?;
        }
        sink.flush()?;
        Ok(())
    }
}

pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let file = File::open(path)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    Manifest::parse(BufReader::new(file), base)
}
