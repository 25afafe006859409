//! Dataset manifest: UTF-8, one tab-separated record per line with
//! `sample_id, path, modality, categories, body_part, region_status,
//! lesions`. Header lines are prefixed with `#` and declare the region
//! vocabulary and the recall cutoffs used for evaluation. Empty optional
//! fields are written as `-`.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::data::sample::{LabelSet, Lesion, Modality, RegionStatus};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct ManifestRecord {
    pub sample_id: String,
    pub path: PathBuf,
    pub modality: Modality,
    pub labels: LabelSet,
}

#[derive(Debug, Clone, Default)]
pub struct Manifest {
    pub region_vocab: BTreeSet<String>,
    pub ks: Vec<usize>,
    pub records: Vec<ManifestRecord>,
}

impl Manifest {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Distinct modalities in record order of the enum, optionally
    /// restricted to those the pretraining sampler may emit.
    pub fn modalities(&self, trainable_only: bool) -> Vec<Modality> {
        Modality::ALL
            .into_iter()
            .filter(|m| !trainable_only || m.trainable())
            .filter(|m| self.records.iter().any(|r| r.modality == *m))
            .collect()
    }

    /// Indices of records with the given modality.
    pub fn indices_of(&self, modality: Modality) -> Vec<usize> {
        self.records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.modality == modality)
            .map(|(i, _)| i)
            .collect()
    }
}

fn none_marker(s: &str) -> Option<&str> {
    if s.is_empty() || s == "-" {
        None
    } else {
        Some(s)
    }
}

fn parse_categories(field: &str) -> BTreeSet<String> {
    match none_marker(field) {
        None => BTreeSet::new(),
        Some(s) => s
            .split(',')
            .map(|c| c.trim().to_string())
            .filter(|c| !c.is_empty())
            .collect(),
    }
}

fn parse_region_status(field: &str, line: usize) -> Result<Vec<(String, RegionStatus)>> {
    let mut out = Vec::new();
    if let Some(s) = none_marker(field) {
        for item in s.split(';').filter(|i| !i.is_empty()) {
            let (region, status) = item
                .split_once('=')
                .ok_or_else(|| Error::manifest(line, format!("bad region status `{item}`")))?;
            let status: RegionStatus = status
                .parse()
                .map_err(|e| Error::manifest(line, format!("{e}")))?;
            out.push((region.to_string(), status));
        }
    }
    Ok(out)
}

fn parse_lesions(field: &str, line: usize) -> Result<Vec<Lesion>> {
    let mut out = Vec::new();
    if let Some(s) = none_marker(field) {
        for item in s.split(';').filter(|i| !i.is_empty()) {
            let parts: Vec<&str> = item.split(':').collect();
            if parts.len() != 3 {
                return Err(Error::manifest(line, format!("bad lesion entry `{item}`")));
            }
            let size_mm: u32 = parts[1]
                .parse()
                .map_err(|_| Error::manifest(line, format!("bad lesion size `{}`", parts[1])))?;
            if size_mm == 0 {
                return Err(Error::manifest(line, "lesion size must be positive".to_string()));
            }
            out.push(Lesion {
                region: parts[0].to_string(),
                size_mm,
                descriptor: parts[2].to_string(),
            });
        }
    }
    Ok(out)
}

pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path)?;
    parse_manifest(&text)
}

pub fn parse_manifest(text: &str) -> Result<Manifest> {
    let mut manifest = Manifest::default();
    let mut seen_ids = BTreeSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        if let Some(header) = line.strip_prefix('#') {
            let header = header.trim();
            if let Some(vocab) = header.strip_prefix("region_vocab:") {
                manifest.region_vocab = vocab
                    .split(',')
                    .map(|r| r.trim().to_string())
                    .filter(|r| !r.is_empty())
                    .collect();
            } else if let Some(ks) = header.strip_prefix("ks:") {
                manifest.ks = ks
                    .split(',')
                    .map(|k| {
                        k.trim()
                            .parse::<usize>()
                            .map_err(|_| Error::manifest(line_no, format!("bad K value `{k}`")))
                    })
                    .collect::<Result<Vec<usize>>>()?;
            }
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 7 {
            return Err(Error::manifest(
                line_no,
                format!("expected 7 tab-separated fields, got {}", fields.len()),
            ));
        }
        let sample_id = fields[0].to_string();
        if sample_id.is_empty() {
            return Err(Error::manifest(line_no, "empty sample_id".to_string()));
        }
        if !seen_ids.insert(sample_id.clone()) {
            return Err(Error::manifest(
                line_no,
                format!("duplicate sample_id `{sample_id}`"),
            ));
        }
        let modality: Modality = fields[2]
            .parse()
            .map_err(|e| Error::manifest(line_no, format!("{e}")))?;
        let mut labels = LabelSet {
            categories: parse_categories(fields[3]),
            body_part: none_marker(fields[4]).map(|s| s.to_string()),
            ..Default::default()
        };
        for (region, status) in parse_region_status(fields[5], line_no)? {
            if !manifest.region_vocab.is_empty() && !manifest.region_vocab.contains(&region) {
                return Err(Error::manifest(
                    line_no,
                    format!("region `{region}` not in declared vocabulary"),
                ));
            }
            labels.region_status.insert(region, status);
        }
        for lesion in parse_lesions(fields[6], line_no)? {
            if !manifest.region_vocab.is_empty() && !manifest.region_vocab.contains(&lesion.region)
            {
                return Err(Error::manifest(
                    line_no,
                    format!("lesion region `{}` not in declared vocabulary", lesion.region),
                ));
            }
            labels.lesions.insert(lesion);
        }
        manifest.records.push(ManifestRecord {
            sample_id,
            path: PathBuf::from(fields[1]),
            modality,
            labels,
        });
    }
    Ok(manifest)
}

fn format_labels(labels: &LabelSet) -> (String, String, String, String) {
    let categories = if labels.categories.is_empty() {
        "-".to_string()
    } else {
        labels
            .categories
            .iter()
            .cloned()
            .collect::<Vec<_>>()
            .join(",")
    };
    let body_part = labels.body_part.clone().unwrap_or_else(|| "-".to_string());
    let region_status = if labels.region_status.is_empty() {
        "-".to_string()
    } else {
        labels
            .region_status
            .iter()
            .map(|(r, s)| format!("{r}={s}"))
            .collect::<Vec<_>>()
            .join(";")
    };
    let lesions = if labels.lesions.is_empty() {
        "-".to_string()
    } else {
        labels
            .lesions
            .iter()
            .map(|l| format!("{}:{}:{}", l.region, l.size_mm, l.descriptor))
            .collect::<Vec<_>>()
            .join(";")
    };
    (categories, body_part, region_status, lesions)
}

pub fn render_manifest(manifest: &Manifest) -> String {
    let mut out = String::new();
    if !manifest.region_vocab.is_empty() {
        let vocab: Vec<&str> = manifest.region_vocab.iter().map(|s| s.as_str()).collect();
        let _ = writeln!(out, "# region_vocab: {}", vocab.join(","));
    }
    if !manifest.ks.is_empty() {
        let ks: Vec<String> = manifest.ks.iter().map(|k| k.to_string()).collect();
        let _ = writeln!(out, "# ks: {}", ks.join(","));
    }
    for rec in &manifest.records {
        let (categories, body_part, region_status, lesions) = format_labels(&rec.labels);
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            rec.sample_id,
            rec.path.display(),
            rec.modality,
            categories,
            body_part,
            region_status,
            lesions
        );
    }
    out
}

pub fn write_manifest(path: &Path, manifest: &Manifest) -> Result<()> {
    fs::write(path, render_manifest(manifest))?;
    Ok(())
}
