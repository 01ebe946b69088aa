//! Line-delimited JSON dataset manifests with SPFT feature files.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::SynthError;
use crate::corpus::{read_features, write_features, ParseMode, SegmentedSentence, Utterance};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    /// Path of the SPFT file, relative to the manifest's directory unless
    /// absolute.
    pub feature_file: String,
    pub source: String,
    pub target: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lang: Option<String>,
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestRecord>, SynthError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| SynthError::Manifest {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn manifest_to_string(records: &[ManifestRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("serializable record"));
        out.push('\n');
    }
    out
}

/// Writes `dir/manifest.jsonl` and one `dir/features/{id}.spft` per
/// utterance. Returns the manifest path.
pub fn write_dataset(dir: &Path, utts: &[Utterance]) -> Result<PathBuf, SynthError> {
    let feat_dir = dir.join("features");
    std::fs::create_dir_all(&feat_dir)?;
    let mut records = Vec::with_capacity(utts.len());
    for u in utts {
        let rel = format!("features/{}.spft", sanitize(&u.id));
        std::fs::write(dir.join(&rel), write_features(&u.features))?;
        records.push(ManifestRecord {
            id: u.id.clone(),
            feature_file: rel,
            source: u.source_text.to_string(),
            target: u.target.to_string(),
            lang: Some(u.target_language.clone()),
        });
    }
    let path = dir.join("manifest.jsonl");
    std::fs::write(&path, manifest_to_string(&records))?;
    Ok(path)
}

fn sanitize(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect()
}

/// Loads every record of a manifest with its features. Records without a
/// language get `default_lang`.
pub fn read_dataset(manifest: &Path, default_lang: &str) -> Result<Vec<Utterance>, SynthError> {
    let text = std::fs::read_to_string(manifest)?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let records = parse_manifest(&text)?;
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        let fpath = Path::new(&r.feature_file);
        let fpath = if fpath.is_absolute() { fpath.to_path_buf() } else { base.join(fpath) };
        let features = read_features(&std::fs::read(&fpath)?).map_err(|e| SynthError::Feature(r.id.clone(), e))?;
        let target = SegmentedSentence::parse(&r.target, ParseMode::Strict)
            .map_err(|_| SynthError::MalformedTarget(r.id.clone()))?;
        let source_text = SegmentedSentence::parse(&r.source, ParseMode::Lenient)
            .map_err(|e| SynthError::Feature(r.id.clone(), e))?
            .strip_breaks();
        out.push(Utterance {
            id: r.id,
            features: Arc::new(features),
            source_text,
            target,
            target_language: r.lang.unwrap_or_else(|| default_lang.to_string()),
        });
    }
    crate::corpus::validate_utterances(&out)?;
    Ok(out)
}
