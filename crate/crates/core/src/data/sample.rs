use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use ndarray::Array4;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Imaging acquisition family. MRI is accepted by preprocessing and
/// retrieval but is never emitted by the pretraining sampler.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    XRay,
    Ultrasound,
    Endoscopy,
    Ct,
    Mri,
}

impl Modality {
    pub const ALL: [Modality; 5] = [
        Modality::XRay,
        Modality::Ultrasound,
        Modality::Endoscopy,
        Modality::Ct,
        Modality::Mri,
    ];

    pub fn tag(&self) -> &'static str {
        match self {
            Modality::XRay => "xray",
            Modality::Ultrasound => "ultrasound",
            Modality::Endoscopy => "endoscopy",
            Modality::Ct => "ct",
            Modality::Mri => "mri",
        }
    }

    /// Canonical slice count after preprocessing.
    pub fn slice_count(&self) -> usize {
        match self {
            Modality::XRay | Modality::Ultrasound | Modality::Mri => 4,
            Modality::Endoscopy => 16,
            Modality::Ct => 64,
        }
    }

    /// True for modalities the pretraining sampler may emit.
    pub fn trainable(&self) -> bool {
        !matches!(self, Modality::Mri)
    }

    /// True for static 2D grayscale sources (replicated along the slice axis).
    pub fn is_2d(&self) -> bool {
        matches!(self, Modality::XRay | Modality::Ultrasound | Modality::Mri)
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "xray" | "x-ray" => Ok(Modality::XRay),
            "ultrasound" | "us" => Ok(Modality::Ultrasound),
            "endoscopy" => Ok(Modality::Endoscopy),
            "ct" => Ok(Modality::Ct),
            "mri" => Ok(Modality::Mri),
            _ => Err(Error::invalid(format!("unknown modality tag: {s}"))),
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// Regional abnormality status.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegionStatus {
    Normal,
    Abnormal,
}

impl FromStr for RegionStatus {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normal" => Ok(RegionStatus::Normal),
            "abnormal" => Ok(RegionStatus::Abnormal),
            other => Err(Error::invalid(format!("unknown region status: {other}"))),
        }
    }
}

impl fmt::Display for RegionStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RegionStatus::Normal => "normal",
            RegionStatus::Abnormal => "abnormal",
        })
    }
}

/// One lesion annotation: anatomical region, size in millimetres and a
/// free-text descriptor.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Lesion {
    pub region: String,
    pub size_mm: u32,
    pub descriptor: String,
}

/// Label bundle attached to one sample. Ordered collections keep every
/// serialization deterministic.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LabelSet {
    pub categories: BTreeSet<String>,
    pub body_part: Option<String>,
    pub region_status: BTreeMap<String, RegionStatus>,
    pub lesions: BTreeSet<Lesion>,
}

impl LabelSet {
    pub fn with_categories<I, S>(categories: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        LabelSet {
            categories: categories.into_iter().map(Into::into).collect(),
            ..Default::default()
        }
    }
}

/// A preprocessed sample: rank-4 data in [0,1] with shape C=3, H=W=256
/// and a modality-dependent slice count, plus identity and labels.
#[derive(Debug, Clone)]
pub struct Sample4D {
    pub data: Array4<f64>,
    pub modality: Modality,
    pub sample_id: String,
    pub labels: LabelSet,
}

impl Sample4D {
    pub fn shape(&self) -> (usize, usize, usize, usize) {
        let d = self.data.dim();
        (d.0, d.1, d.2, d.3)
    }

    /// Checks the preprocessing contract: 3 channels, values in [0,1],
    /// slice count matching the modality.
    pub fn validate(&self) -> Result<()> {
        let (c, _h, _w, s) = self.shape();
        if c != 3 {
            return Err(Error::shape(format!("expected 3 channels, got {c}")));
        }
        if s != self.modality.slice_count() {
            return Err(Error::shape(format!(
                "modality {} expects {} slices, got {s}",
                self.modality,
                self.modality.slice_count()
            )));
        }
        if self.data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("sample values outside [0,1]".to_string()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modality_roundtrip_tags() {
        for m in Modality::ALL {
            assert_eq!(m.tag().parse::<Modality>().unwrap(), m);
        }
    }

    #[test]
    fn unknown_modality_rejected() {
        assert!("PET".parse::<Modality>().is_err());
    }

    #[test]
    fn mri_is_not_trainable() {
        assert!(!Modality::Mri.trainable());
        assert!(Modality::Ct.trainable());
    }

    #[test]
    fn slice_counts_follow_modality() {
        assert_eq!(Modality::XRay.slice_count(), 4);
        assert_eq!(Modality::Endoscopy.slice_count(), 16);
        assert_eq!(Modality::Ct.slice_count(), 64);
        assert_eq!(Modality::Mri.slice_count(), 4);
    }
}
