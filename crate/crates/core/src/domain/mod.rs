//! Shared vocabulary: modalities, datasets, synthesis routes, slices and
//! understanding instances, plus the deterministic RNG every module draws from.

mod image;
mod rng;

pub use image::{Image2D, ImageError};
pub use rng::{fnv1a64, stream, RngStream};

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

/// Largest option count an instance may carry (answer letters are `A`..=`Z`).
pub const MAX_OPTIONS: usize = 26;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Modality {
    #[serde(rename = "CT")]
    Ct,
    #[serde(rename = "CBCT")]
    Cbct,
    #[serde(rename = "PET")]
    Pet,
    /// MRI with the sequence left unspecified (SynthRAD routes).
    #[serde(rename = "MR")]
    Mr,
    #[serde(rename = "MR_T1")]
    MrT1,
    #[serde(rename = "MR_T1CE")]
    MrT1ce,
    #[serde(rename = "MR_T2")]
    MrT2,
    #[serde(rename = "MR_FLAIR")]
    MrFlair,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CoarseModality {
    #[serde(rename = "CT")]
    Ct,
    #[serde(rename = "CBCT")]
    Cbct,
    #[serde(rename = "PET")]
    Pet,
    #[serde(rename = "MRI")]
    Mri,
}

impl Modality {
    pub const ALL: [Modality; 8] = [
        Modality::Ct,
        Modality::Cbct,
        Modality::Pet,
        Modality::Mr,
        Modality::MrT1,
        Modality::MrT1ce,
        Modality::MrT2,
        Modality::MrFlair,
    ];

    pub fn coarse(self) -> CoarseModality {
        match self {
            Modality::Ct => CoarseModality::Ct,
            Modality::Cbct => CoarseModality::Cbct,
            Modality::Pet => CoarseModality::Pet,
            Modality::Mr | Modality::MrT1 | Modality::MrT1ce | Modality::MrT2 | Modality::MrFlair => {
                CoarseModality::Mri
            }
        }
    }

    /// Position in [`Modality::ALL`]; used for one-hot encodings.
    pub fn index(self) -> usize {
        self as usize
    }

    /// Lowercase token used inside route ids.
    pub fn short(self) -> &'static str {
        match self {
            Modality::Ct => "ct",
            Modality::Cbct => "cbct",
            Modality::Pet => "pet",
            Modality::Mr => "mr",
            Modality::MrT1 => "t1",
            Modality::MrT1ce => "t1ce",
            Modality::MrT2 => "t2",
            Modality::MrFlair => "flair",
        }
    }

    /// Human-facing name used in prompts and MI option labels.
    pub fn display_name(self) -> &'static str {
        match self {
            Modality::Ct => "CT",
            Modality::Cbct => "CBCT",
            Modality::Pet => "PET",
            Modality::Mr => "MRI",
            Modality::MrT1 => "MRI T1",
            Modality::MrT1ce => "MRI T1CE",
            Modality::MrT2 => "MRI T2",
            Modality::MrFlair => "MRI FLAIR",
        }
    }

    pub fn is_mr(self) -> bool {
        self.coarse() == CoarseModality::Mri
    }

    pub fn from_short(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.short() == s)
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.display_name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DatasetTag {
    #[serde(rename = "SYNTHRAD_BRAIN")]
    SynthradBrain,
    #[serde(rename = "SYNTHRAD_PELVIS")]
    SynthradPelvis,
    #[serde(rename = "AUTOPET")]
    Autopet,
    #[serde(rename = "BRATS")]
    Brats,
}

impl DatasetTag {
    pub const ALL: [DatasetTag; 4] = [
        DatasetTag::SynthradBrain,
        DatasetTag::SynthradPelvis,
        DatasetTag::Autopet,
        DatasetTag::Brats,
    ];

    pub fn id(self) -> &'static str {
        match self {
            DatasetTag::SynthradBrain => "synthrad_brain",
            DatasetTag::SynthradPelvis => "synthrad_pelvis",
            DatasetTag::Autopet => "autopet",
            DatasetTag::Brats => "brats",
        }
    }

    pub fn from_id(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|d| d.id() == s)
    }

    /// Modalities the dataset is allowed to carry.
    pub fn modalities(self) -> &'static [Modality] {
        match self {
            DatasetTag::SynthradBrain | DatasetTag::SynthradPelvis => {
                &[Modality::Ct, Modality::Cbct, Modality::Mr]
            }
            DatasetTag::Autopet => &[Modality::Ct, Modality::Pet],
            DatasetTag::Brats => &[Modality::MrT1, Modality::MrT1ce, Modality::MrT2, Modality::MrFlair],
        }
    }

    /// Whether modality labels for this dataset distinguish MR sequences.
    pub fn fine_grained(self) -> bool {
        self == DatasetTag::Brats
    }

    pub fn region(self) -> &'static str {
        match self {
            DatasetTag::SynthradBrain | DatasetTag::Brats => "brain",
            DatasetTag::SynthradPelvis => "pelvic",
            DatasetTag::Autopet => "whole-body",
        }
    }

    pub fn allows(self, m: Modality) -> bool {
        self.modalities().contains(&m)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RouteError {
    #[error("unknown route id `{0}`")]
    Unknown(String),
    #[error("route source and target are both {0:?}")]
    SameModality(Modality),
    #[error("dataset {dataset:?} does not carry modality {modality:?}")]
    ForeignModality { dataset: DatasetTag, modality: Modality },
}

/// A directed synthesis task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Route {
    pub dataset: DatasetTag,
    pub src: Modality,
    pub tgt: Modality,
}

impl Route {
    pub fn new(dataset: DatasetTag, src: Modality, tgt: Modality) -> Result<Self, RouteError> {
        if src == tgt {
            return Err(RouteError::SameModality(src));
        }
        for m in [src, tgt] {
            if !dataset.allows(m) {
                return Err(RouteError::ForeignModality { dataset, modality: m });
            }
        }
        Ok(Self { dataset, src, tgt })
    }

    /// `dataset/src_to_tgt`, e.g. `brats/t2_to_t1ce`.
    pub fn route_id(&self) -> String {
        format!("{}/{}_to_{}", self.dataset.id(), self.src.short(), self.tgt.short())
    }

    pub fn reversed(&self) -> Route {
        Route { dataset: self.dataset, src: self.tgt, tgt: self.src }
    }

    /// Position in [`route_catalog`].
    pub fn catalog_index(&self) -> usize {
        route_catalog()
            .iter()
            .position(|r| r == self)
            .expect("routes are only constructed from catalog members")
    }
}

impl fmt::Display for Route {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.route_id())
    }
}

impl FromStr for Route {
    type Err = RouteError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let unknown = || RouteError::Unknown(s.to_owned());
        let (ds, pair) = s.split_once('/').ok_or_else(unknown)?;
        let (src, tgt) = pair.split_once("_to_").ok_or_else(unknown)?;
        let dataset = DatasetTag::from_id(ds).ok_or_else(unknown)?;
        let src = Modality::from_short(src).ok_or_else(unknown)?;
        let tgt = Modality::from_short(tgt).ok_or_else(unknown)?;
        let route = Route::new(dataset, src, tgt).map_err(|_| unknown())?;
        if !route_catalog().contains(&route) {
            return Err(unknown());
        }
        Ok(route)
    }
}

impl Serialize for Route {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.route_id())
    }
}

impl<'de> Deserialize<'de> for Route {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// The 22 directed routes, ordered by dataset, then source, then target.
pub fn route_catalog() -> &'static [Route] {
    static CATALOG: std::sync::OnceLock<Vec<Route>> = std::sync::OnceLock::new();
    CATALOG.get_or_init(|| {
        let mut routes = Vec::with_capacity(22);
        for dataset in DatasetTag::ALL {
            let mods: &[Modality] = match dataset {
                // SynthRAD pairs everything against CT; CBCT and MR are never paired directly.
                DatasetTag::SynthradBrain | DatasetTag::SynthradPelvis => {
                    for m in [Modality::Cbct, Modality::Mr] {
                        routes.push(Route { dataset, src: m, tgt: Modality::Ct });
                        routes.push(Route { dataset, src: Modality::Ct, tgt: m });
                    }
                    continue;
                }
                other => other.modalities(),
            };
            for &src in mods {
                for &tgt in mods {
                    if src != tgt {
                        routes.push(Route { dataset, src, tgt });
                    }
                }
            }
        }
        routes.sort();
        routes
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Task {
    #[serde(rename = "CTS")]
    Cts,
    #[serde(rename = "MI")]
    Mi,
    #[serde(rename = "TIA")]
    Tia,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Cts, Task::Mi, Task::Tia];

    pub fn id(self) -> &'static str {
        match self {
            Task::Cts => "cts",
            Task::Mi => "mi",
            Task::Tia => "tia",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Cts => "CTS",
            Task::Mi => "MI",
            Task::Tia => "TIA",
        })
    }
}

/// `volume_id#k`, the reference format used in instance files.
pub fn slice_ref(volume_id: &str, k: usize) -> String {
    format!("{volume_id}#{k}")
}

pub fn parse_slice_ref(s: &str) -> Option<(&str, usize)> {
    let (vol, k) = s.rsplit_once('#')?;
    Some((vol, k.parse().ok()?))
}

pub fn option_letter(index: usize) -> Option<char> {
    (index < MAX_OPTIONS).then(|| (b'A' + index as u8) as char)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceMeta {
    pub route_id: Option<String>,
    pub volume_id: String,
    pub slice_index: usize,
    pub k_window: Option<usize>,
    pub distractor_route_ids: Option<Vec<String>>,
    pub template_version: u32,
}

/// One forged multiple-choice question.
///
/// Field order is the on-disk key order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnderstandingInstance {
    pub instance_id: String,
    pub task: Task,
    pub prompt: String,
    pub image_refs: Vec<String>,
    pub options: Vec<String>,
    pub answer_index: usize,
    pub answer_letter: String,
    pub meta: InstanceMeta,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum InstanceError {
    #[error("{0}: needs at least 2 options, has {1}")]
    TooFewOptions(String, usize),
    #[error("{0}: {1} options exceed the A-Z letter range")]
    TooManyOptions(String, usize),
    #[error("{0}: answer index {1} out of range")]
    AnswerOutOfRange(String, usize),
    #[error("{0}: answer letter `{1}` does not match index {2}")]
    LetterMismatch(String, String, usize),
}

impl UnderstandingInstance {
    pub fn validate(&self) -> Result<(), InstanceError> {
        let id = || self.instance_id.clone();
        let n = self.options.len();
        if n < 2 {
            return Err(InstanceError::TooFewOptions(id(), n));
        }
        if n > MAX_OPTIONS {
            return Err(InstanceError::TooManyOptions(id(), n));
        }
        if self.answer_index >= n {
            return Err(InstanceError::AnswerOutOfRange(id(), self.answer_index));
        }
        let expected = option_letter(self.answer_index).map(String::from).unwrap_or_default();
        if self.answer_letter != expected {
            return Err(InstanceError::LetterMismatch(id(), self.answer_letter.clone(), self.answer_index));
        }
        Ok(())
    }

    pub fn answer(&self) -> &str {
        &self.options[self.answer_index]
    }
}
