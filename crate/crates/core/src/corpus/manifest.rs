use std::collections::HashSet;
use std::path::{Path, PathBuf};

use crate::corpus::{read_wav, write_wav, SynthCorpus};
use crate::dsp::AudioClip;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestRecord {
    /// Resolved audio path (relative entries are taken from the manifest's directory).
    pub path: PathBuf,
    pub label: usize,
    pub subset: Option<String>,
}

/// Audio files with labels; clips are read on demand.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Manifest {
    pub records: Vec<ManifestRecord>,
    pub class_names: Vec<String>,
}

impl Manifest {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.label).collect()
    }

    pub fn load_clip(&self, i: usize) -> Result<AudioClip> {
        read_wav(&self.records[i].path)
    }

    /// Record indices whose subset tag equals `subset`.
    pub fn subset_indices(&self, subset: &str) -> Vec<usize> {
        self.records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.subset.as_deref() == Some(subset))
            .map(|(i, _)| i)
            .collect()
    }
}

/// Parses a `path,label,subset` CSV (subset optional) and checks that every
/// referenced file exists. Rows are numbered from 1 after the header.
pub fn load_manifest(path: &Path, class_names: &[String]) -> Result<Manifest> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let base = path.parent().unwrap_or(Path::new(""));
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::MalformedRow {
            row: 0,
            reason: e.to_string(),
        })?;
    let header = reader.headers().map_err(|e| Error::MalformedRow {
        row: 0,
        reason: e.to_string(),
    })?;
    let fields: Vec<&str> = header.iter().collect();
    if !(fields == ["path", "label"] || fields == ["path", "label", "subset"]) && !fields.is_empty()
    {
        return Err(Error::MalformedRow {
            row: 0,
            reason: format!(
                "header must be path,label,subset; found {}",
                fields.join(",")
            ),
        });
    }
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (k, rec) in reader.records().enumerate() {
        let row = k + 1;
        let rec = rec.map_err(|e| Error::MalformedRow {
            row,
            reason: e.to_string(),
        })?;
        if rec.len() < 2 || rec.len() > 3 {
            return Err(Error::MalformedRow {
                row,
                reason: format!("expected 2 or 3 fields, found {}", rec.len()),
            });
        }
        let rel = &rec[0];
        if rel.is_empty() {
            return Err(Error::MalformedRow {
                row,
                reason: "empty path".into(),
            });
        }
        let label = class_names
            .iter()
            .position(|c| c == &rec[1])
            .ok_or_else(|| Error::UnknownLabel {
                row,
                label: rec[1].to_string(),
            })?;
        let full = base.join(rel);
        if !seen.insert(full.clone()) {
            return Err(Error::MalformedRow {
                row,
                reason: format!("duplicate path {rel}"),
            });
        }
        if !full.exists() {
            return Err(Error::MissingFile(full));
        }
        let subset = rec.get(2).filter(|s| !s.is_empty()).map(str::to_string);
        records.push(ManifestRecord {
            path: full,
            label,
            subset,
        });
    }
    Ok(Manifest {
        records,
        class_names: class_names.to_vec(),
    })
}

/// Writes a manifest CSV with paths relative to its directory where possible.
pub fn write_manifest(path: &Path, manifest: &Manifest) -> Result<()> {
    let base = path.parent().unwrap_or(Path::new(""));
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(e.into()))?;
    let io = |e: csv::Error| Error::Io(e.into());
    w.write_record(["path", "label", "subset"]).map_err(io)?;
    for r in &manifest.records {
        let rel = r.path.strip_prefix(base).unwrap_or(&r.path);
        w.write_record([
            rel.to_string_lossy().as_ref(),
            manifest.class_names[r.label].as_str(),
            r.subset.as_deref().unwrap_or(""),
        ])
        .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes every clip as `clip_NNNNN.wav` under `dir` plus `dir/manifest.csv`.
pub fn export_corpus(
    dir: &Path,
    corpus: &SynthCorpus,
    subsets: &[Option<String>],
) -> Result<Manifest> {
    if subsets.len() != corpus.clips.len() {
        return Err(Error::shape("one subset tag per clip required"));
    }
    std::fs::create_dir_all(dir)?;
    let mut records = Vec::with_capacity(corpus.clips.len());
    for (i, (clip, &label)) in corpus.clips.iter().zip(&corpus.labels).enumerate() {
        let path = dir.join(format!("clip_{i:05}.wav"));
        write_wav(&path, clip)?;
        records.push(ManifestRecord {
            path,
            label,
            subset: subsets[i].clone(),
        });
    }
    let manifest = Manifest {
        records,
        class_names: corpus.class_names.clone(),
    };
    write_manifest(&dir.join("manifest.csv"), &manifest)?;
    Ok(manifest)
}
