//! Command-line runs: analyze, shuffle-check, heatmap, layers, synth.
//!
//! Every artifact is computed in memory first and written afterwards; if a
//! write fails, files already written by the run are removed.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fitting::{
    document_alpha_spread, fit_power_law, layer_sweep, per_dimension_stats, FitWindow,
};
use crate::seqio::{
    load_manifest, write_sequence_file, DocumentMeta, Language, Layer, Manifest, ManifestEntry,
    Source,
};
use crate::signal::{synth_power_law, ShuffleSpec, ALPHA_RANGE, MIN_SIGNAL_LEN};
use crate::spectral::{corpus_spectrum_of, rectangle_integral, CorpusOptions, Normalization};

#[derive(Debug, Parser)]
#[command(name = "embspec", version, about = "Spectral scaling of embedding-step signals")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Corpus spectra and power-law fits per group.
    Analyze(RunArgs),
    /// `analyze` with each document's token order shuffled (requires --seed).
    ShuffleCheck(RunArgs),
    /// Per-dimension normalized spectra, one row per dimension.
    Heatmap(RunArgs),
    /// Fitted exponent for every numeric layer, per group.
    Layers(RunArgs),
    /// Write a synthetic power-law corpus as ESEQ files plus a manifest.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum GroupKey {
    Language,
    Source,
    #[value(name = "model_id")]
    ModelId,
    Layer,
}

impl GroupKey {
    fn name(self) -> &'static str {
        match self {
            GroupKey::Language => "language",
            GroupKey::Source => "source",
            GroupKey::ModelId => "model_id",
            GroupKey::Layer => "layer",
        }
    }

    fn value(self, meta: &DocumentMeta) -> String {
        match self {
            GroupKey::Language => meta.language.to_string(),
            GroupKey::Source => meta.source.to_string(),
            GroupKey::ModelId => meta.model_id.clone(),
            GroupKey::Layer => meta.layer.to_string(),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(long, required_unless_present = "config")]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Re-run from a `run.json` written by an earlier run.
    #[arg(long, conflicts_with_all = ["manifest", "fit_lo", "fit_hi", "norm", "group_by", "shuffle", "seed", "skip_bad"])]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0.02)]
    pub fit_lo: f64,
    #[arg(long, default_value_t = 0.2)]
    pub fit_hi: f64,
    #[arg(long, value_enum, default_value_t = Normalization::Corpus)]
    pub norm: Normalization,
    #[arg(long, value_enum, value_delimiter = ',')]
    pub group_by: Vec<GroupKey>,
    #[arg(long)]
    pub shuffle: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for per-document transforms; 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
    #[arg(long)]
    pub skip_bad: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// Step-signal length; files hold n + 1 tokens.
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub dims: usize,
    #[arg(long, allow_negative_numbers = true)]
    pub alpha: f64,
    #[arg(long)]
    pub docs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0)]
    pub layer: u32,
    #[arg(long)]
    pub out_dir: PathBuf,
}

/// Fully resolved run settings; serialized as `run.json`.
///
/// Worker count and output directory are left out: neither changes results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: String,
    pub manifest: PathBuf,
    pub group_by: Vec<GroupKey>,
    pub fit_lo: f64,
    pub fit_hi: f64,
    pub norm: Normalization,
    pub shuffle: bool,
    pub seed: Option<u64>,
    pub skip_bad: bool,
    #[serde(skip)]
    pub workers: usize,
}

impl RunConfig {
    pub fn from_args(command: &str, args: &RunArgs) -> Result<Self> {
        let mut cfg = match &args.config {
            Some(path) => {
                let text = fs::read_to_string(path)?;
                serde_json::from_str::<RunConfig>(&text)
                    .map_err(|e| Error::Usage(format!("{}: {e}", path.display())))?
            }
            None => RunConfig {
                command: command.to_string(),
                manifest: args.manifest.clone().expect("clap requires --manifest without --config"),
                group_by: args.group_by.clone(),
                fit_lo: args.fit_lo,
                fit_hi: args.fit_hi,
                norm: args.norm,
                shuffle: args.shuffle,
                seed: args.seed,
                skip_bad: args.skip_bad,
                workers: 0,
            },
        };
        cfg.command = command.to_string();
        cfg.workers = args.workers;
        if command == "shuffle-check" {
            cfg.shuffle = true;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        FitWindow::new(self.fit_lo, self.fit_hi)?;
        if self.shuffle && self.seed.is_none() {
            return Err(Error::Usage("--shuffle requires --seed".into()));
        }
        let mut seen = Vec::new();
        for k in &self.group_by {
            if seen.contains(k) {
                return Err(Error::Usage(format!("--group-by repeats {}", k.name())));
            }
            seen.push(*k);
        }
        Ok(())
    }

    pub fn window(&self) -> FitWindow {
        FitWindow { lo: self.fit_lo, hi: self.fit_hi }
    }

    pub fn corpus_options(&self) -> CorpusOptions {
        CorpusOptions {
            mode: self.norm,
            shuffle: if self.shuffle { self.seed.map(|seed| ShuffleSpec { seed }) } else { None },
            workers: self.workers,
            skip_bad: self.skip_bad,
        }
    }

    fn run_json(&self) -> Result<Vec<u8>> {
        let mut out = serde_json::to_vec_pretty(self).map_err(std::io::Error::from)?;
        out.push(b'\n');
        Ok(out)
    }
}

struct Group<'a> {
    label: String,
    file_stem: String,
    entries: Vec<&'a ManifestEntry>,
}

fn file_stem(values: &[String]) -> String {
    if values.is_empty() {
        return "all".into();
    }
    values
        .join("_")
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect()
}

/// Partitions entries by the given keys, in order of first appearance.
fn group_entries<'a>(manifest: &'a Manifest, keys: &[GroupKey]) -> Result<Vec<Group<'a>>> {
    let mut groups: Vec<(Vec<String>, Group<'a>)> = Vec::new();
    for entry in manifest.iter() {
        let values: Vec<String> = keys.iter().map(|k| k.value(&entry.meta)).collect();
        match groups.iter_mut().find(|(v, _)| *v == values) {
            Some((_, g)) => g.entries.push(entry),
            None => {
                let label = if keys.is_empty() {
                    "all".to_string()
                } else {
                    keys.iter()
                        .zip(&values)
                        .map(|(k, v)| format!("{}={v}", k.name()))
                        .collect::<Vec<_>>()
                        .join(";")
                };
                let stem = file_stem(&values);
                if groups.iter().any(|(_, g)| g.file_stem == stem) {
                    return Err(Error::Usage(format!(
                        "groups {label:?} and another group share the file name {stem:?}"
                    )));
                }
                groups.push((values, Group { label, file_stem: stem, entries: vec![entry] }));
            }
        }
    }
    Ok(groups.into_iter().map(|(_, g)| g).collect())
}

fn load_nonempty(cfg: &RunConfig) -> Result<Manifest> {
    let manifest = load_manifest(&cfg.manifest)?;
    if manifest.is_empty() {
        return Err(Error::EmptyGroup(format!("no documents in {}", cfg.manifest.display())));
    }
    Ok(manifest)
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let to_io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(header).map_err(to_io)?;
    for row in rows {
        w.write_record(&row).map_err(to_io)?;
    }
    w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
}

// `Display` for f64 is the shortest string that parses back to the same value.
fn num(v: f64) -> String {
    format!("{v}")
}

/// Writes all artifacts or none of them.
fn emit(out_dir: &Path, artifacts: Vec<(String, Vec<u8>)>) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    for (name, bytes) in artifacts {
        let path = out_dir.join(&name);
        let result = fs::File::create(&path).and_then(|mut f| {
            f.write_all(&bytes)?;
            f.sync_all()
        });
        if let Err(e) = result {
            let _ = fs::remove_file(&path);
            for p in &written {
                let _ = fs::remove_file(p);
            }
            return Err(e.into());
        }
        written.push(path);
    }
    Ok(written)
}

fn warn_skipped(label: &str, skipped: &[crate::spectral::SkippedDoc]) {
    for s in skipped {
        eprintln!("warning: group {label}: skipped {}: {}", s.doc_id, s.reason);
    }
}

pub fn cmd_analyze(cfg: &RunConfig, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let manifest = load_nonempty(cfg)?;
    let window = cfg.window();
    let opts = cfg.corpus_options();
    let mut artifacts = Vec::new();
    let mut fit_rows = Vec::new();
    for group in group_entries(&manifest, &cfg.group_by)? {
        let corpus = corpus_spectrum_of(&group.label, &group.entries, &opts)?;
        warn_skipped(&group.label, &corpus.skipped);
        let spec = &corpus.normalized;
        let fit = fit_power_law(&spec.bins, &spec.e_mean, window)?;
        let dims = per_dimension_stats(&corpus.per_dimension, window)?;
        let (doc_std, _) = document_alpha_spread(&spec.bins, &corpus.doc_spectra, window);

        let rows = (0..spec.bins.len())
            .map(|k| vec![num(spec.bins[k]), num(spec.e_mean[k]), num(spec.e_std[k])]);
        artifacts.push((
            format!("spectra_{}.csv", group.file_stem),
            csv_bytes(&["f_norm", "e_mean", "e_std"], rows)?,
        ));
        fit_rows.push(vec![
            group.label.clone(),
            num(fit.alpha),
            num(fit.stderr_alpha),
            num(fit.r2),
            fit.n_bins.to_string(),
            num(dims.alpha_mean),
            num(dims.alpha_std),
            num(dims.frac_within_10pct),
            dims.excluded_dims.to_string(),
            spec.doc_count.to_string(),
            num(doc_std),
            corpus.skipped.len().to_string(),
            fit.degenerate.to_string(),
        ]);
    }
    artifacts.push((
        "fits.csv".into(),
        csv_bytes(
            &[
                "group",
                "alpha",
                "stderr",
                "r2",
                "n_bins",
                "alpha_dim_mean",
                "alpha_dim_std",
                "frac_within_10pct",
                "excluded_dims",
                "doc_count",
                "alpha_doc_std",
                "skipped_docs",
                "degenerate",
            ],
            fit_rows,
        )?,
    ));
    artifacts.push(("run.json".into(), cfg.run_json()?));
    emit(out_dir, artifacts)
}

pub fn cmd_heatmap(cfg: &RunConfig, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let manifest = load_nonempty(cfg)?;
    let opts = cfg.corpus_options();
    let mut artifacts = Vec::new();
    for group in group_entries(&manifest, &cfg.group_by)? {
        let corpus = corpus_spectrum_of(&group.label, &group.entries, &opts)?;
        warn_skipped(&group.label, &corpus.skipped);
        let spec = &corpus.per_dimension;
        let mut header = vec!["dim".to_string()];
        header.extend(spec.bins().iter().map(|&f| num(f)));
        let rows = (0..spec.dim()).map(|j| {
            let col = spec.column(j);
            let integral = rectangle_integral(&col);
            // An all-zero dimension has no normalization; it is emitted as zeros.
            let scale = if integral > 0.0 { 1.0 / integral } else { 0.0 };
            let mut row = vec![j.to_string()];
            row.extend(col.iter().map(|v| num(v * scale)));
            row
        });
        let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
        artifacts.push((format!("heatmap_{}.csv", group.file_stem), csv_bytes(&header_refs, rows)?));
    }
    artifacts.push(("run.json".into(), cfg.run_json()?));
    emit(out_dir, artifacts)
}

pub fn cmd_layers(cfg: &RunConfig, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let manifest = load_nonempty(cfg)?;
    let keys: Vec<GroupKey> = cfg.group_by.iter().copied().filter(|k| *k != GroupKey::Layer).collect();
    let opts = cfg.corpus_options();
    let mut artifacts = Vec::new();
    for group in group_entries(&manifest, &keys)? {
        let ids: std::collections::HashSet<&str> =
            group.entries.iter().map(|e| e.meta.doc_id.as_str()).collect();
        let sweep = layer_sweep(&manifest, |m| ids.contains(m.doc_id.as_str()), cfg.window(), &opts)
            .map_err(|e| match e {
                Error::Usage(msg) => Error::Usage(format!("group {}: {msg}", group.label)),
                e => e,
            })?;
        for w in &sweep.warnings {
            eprintln!("warning: group {}: {w}", group.label);
        }
        let rows = sweep.points.iter().map(|p| {
            vec![p.layer.to_string(), num(p.fit.alpha), num(p.fit.stderr_alpha), num(p.fit.r2)]
        });
        artifacts.push((
            format!("layers_{}.csv", group.file_stem),
            csv_bytes(&["layer", "alpha", "stderr", "r2"], rows)?,
        ));
    }
    artifacts.push(("run.json".into(), cfg.run_json()?));
    emit(out_dir, artifacts)
}

/// Per-document seed derived from the corpus seed.
pub fn document_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

pub fn cmd_synth(args: &SynthArgs) -> Result<Vec<PathBuf>> {
    if args.n < MIN_SIGNAL_LEN {
        return Err(Error::Usage(format!("--n must be at least {MIN_SIGNAL_LEN}")));
    }
    if args.dims == 0 || args.docs == 0 {
        return Err(Error::Usage("--dims and --docs must be positive".into()));
    }
    if !(ALPHA_RANGE.0..=ALPHA_RANGE.1).contains(&args.alpha) {
        return Err(Error::Usage(format!(
            "--alpha must lie in [{}, {}]",
            ALPHA_RANGE.0, ALPHA_RANGE.1
        )));
    }
    fs::create_dir_all(&args.out_dir)?;
    let mut entries = Vec::with_capacity(args.docs);
    let mut written = Vec::with_capacity(args.docs + 1);
    for i in 0..args.docs {
        let steps = synth_power_law(args.n, args.dims, args.alpha, document_seed(args.seed, i))?;
        let name = format!("synth_l{}_{i:05}.eseq", args.layer);
        let path = args.out_dir.join(&name);
        write_sequence_file(&steps.cumulative_trajectory()?, &path)?;
        written.push(path);
        entries.push(ManifestEntry {
            path: PathBuf::from(name),
            meta: DocumentMeta {
                doc_id: format!("synth-l{}-{i:05}", args.layer),
                language: Language::Other("synthetic".into()),
                source: Source::Ai,
                model_id: format!("synthetic-alpha{}", args.alpha),
                layer: Layer::Index(args.layer),
                tokenizer_id: "none".into(),
            },
        });
    }
    let manifest_path = args.out_dir.join("manifest.jsonl");
    Manifest::new(entries)?.write(std::io::BufWriter::new(fs::File::create(&manifest_path)?))?;
    written.push(manifest_path);
    Ok(written)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(args) => {
            let written = cmd_synth(&args)?;
            eprintln!("wrote {} files to {}", written.len(), args.out_dir.display());
            Ok(())
        }
        Command::Analyze(args) => cmd_analyze(&RunConfig::from_args("analyze", &args)?, &args.out_dir).map(drop),
        Command::ShuffleCheck(args) => {
            cmd_analyze(&RunConfig::from_args("shuffle-check", &args)?, &args.out_dir).map(drop)
        }
        Command::Heatmap(args) => cmd_heatmap(&RunConfig::from_args("heatmap", &args)?, &args.out_dir).map(drop),
        Command::Layers(args) => cmd_layers(&RunConfig::from_args("layers", &args)?, &args.out_dir).map(drop),
    }
}
