//! Paired volumes on disk: PGM slices plus a JSON corpus manifest.
//!
//! Manifest schema (version 1); slice paths are relative to the manifest's
//! directory:
//!
//! ```json
//! { "schema_version": 1,
//!   "volumes": [{ "volume_id": "p0_ct", "dataset": "SYNTHRAD_BRAIN", "modality": "CT",
//!                 "width": 32, "height": 32, "intensity_window": [0.0, 1.0],
//!                 "slices": ["p0_ct/000.pgm"] }],
//!   "pairs": [{ "pair_id": "p0_ct_to_cbct", "route_id": "synthrad_brain/ct_to_cbct",
//!               "src_volume_id": "p0_ct", "tgt_volume_id": "p0_cbct" }] }
//! ```

mod pgm;

pub use pgm::{encode_pgm, parse_pgm, quantize, write_pgm, PgmDepth, PgmError};

use crate::domain::{DatasetTag, Image2D, Modality, Route};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("schema error at {pointer}: {message}")]
    Schema { pointer: String, message: String },
    #[error("constraint violated: {0}")]
    Constraint(String),
    #[error("slice index {k} out of range for volume {volume_id} ({len} slices)")]
    IndexOutOfRange { volume_id: String, k: usize, len: usize },
    #[error("{path}: {source}")]
    Pgm { path: PathBuf, source: PgmError },
    #[error("{path}: decoded {got:?} but manifest declares {expected:?}")]
    ShapeMismatch { path: PathBuf, expected: (usize, usize), got: (usize, usize) },
}

impl IngestError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        IngestError::Io { path: path.to_owned(), source }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolumeRef {
    pub volume_id: String,
    pub dataset: DatasetTag,
    pub modality: Modality,
    pub width: usize,
    pub height: usize,
    #[serde(default = "identity_window")]
    pub intensity_window: [f64; 2],
    #[serde(rename = "slices")]
    pub slice_paths: Vec<PathBuf>,
}

fn identity_window() -> [f64; 2] {
    [0.0, 1.0]
}

impl VolumeRef {
    pub fn len(&self) -> usize {
        self.slice_paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slice_paths.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairEntry {
    pub pair_id: String,
    pub route_id: String,
    pub src_volume_id: String,
    pub tgt_volume_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusManifest {
    pub schema_version: u32,
    pub volumes: Vec<VolumeRef>,
    pub pairs: Vec<PairEntry>,
    /// Directory slice paths resolve against. Not serialized.
    #[serde(skip)]
    pub root: PathBuf,
}

/// A resolved, validated pair.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumePair {
    pub pair_id: String,
    pub route: Route,
    pub src: VolumeRef,
    pub tgt: VolumeRef,
}

impl VolumePair {
    pub fn n_slices(&self) -> usize {
        self.src.len()
    }
}

impl CorpusManifest {
    pub fn volume(&self, volume_id: &str) -> Option<&VolumeRef> {
        self.volumes.iter().find(|v| v.volume_id == volume_id)
    }

    /// Checks every manifest invariant.
    pub fn validate(&self) -> Result<(), IngestError> {
        let bad = |m: String| Err(IngestError::Constraint(m));
        if self.schema_version != SCHEMA_VERSION {
            return Err(IngestError::Schema {
                pointer: "/schema_version".into(),
                message: format!("unsupported schema version {}", self.schema_version),
            });
        }
        let mut ids = BTreeSet::new();
        for (i, v) in self.volumes.iter().enumerate() {
            if !ids.insert(v.volume_id.as_str()) {
                return bad(format!("duplicate volume_id `{}`", v.volume_id));
            }
            if v.slice_paths.is_empty() {
                return bad(format!("volume `{}` has no slices", v.volume_id));
            }
            if v.width == 0 || v.height == 0 {
                return bad(format!("volume `{}` has a zero dimension", v.volume_id));
            }
            let [lo, hi] = v.intensity_window;
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(IngestError::Schema {
                    pointer: format!("/volumes/{i}/intensity_window"),
                    message: format!("window [{lo}, {hi}] must satisfy lo < hi"),
                });
            }
            if !v.dataset.allows(v.modality) {
                return bad(format!("volume `{}`: {:?} does not carry {:?}", v.volume_id, v.dataset, v.modality));
            }
        }
        let mut pair_ids = BTreeSet::new();
        for p in &self.pairs {
            if !pair_ids.insert(p.pair_id.as_str()) {
                return bad(format!("duplicate pair_id `{}`", p.pair_id));
            }
            self.resolve_pair(p)?;
        }
        Ok(())
    }

    fn resolve_pair(&self, p: &PairEntry) -> Result<VolumePair, IngestError> {
        let bad = |m: String| IngestError::Constraint(format!("pair `{}`: {m}", p.pair_id));
        let route: Route = p.route_id.parse().map_err(|e| bad(format!("{e}")))?;
        let src = self.volume(&p.src_volume_id).ok_or_else(|| bad(format!("missing volume `{}`", p.src_volume_id)))?;
        let tgt = self.volume(&p.tgt_volume_id).ok_or_else(|| bad(format!("missing volume `{}`", p.tgt_volume_id)))?;
        if src.len() != tgt.len() {
            return Err(bad(format!("slice counts differ ({} vs {})", src.len(), tgt.len())));
        }
        if (src.width, src.height) != (tgt.width, tgt.height) {
            return Err(bad("source and target dimensions differ".into()));
        }
        if src.modality != route.src || tgt.modality != route.tgt {
            return Err(bad(format!(
                "volumes are {:?}->{:?} but route is {}",
                src.modality, tgt.modality, p.route_id
            )));
        }
        if src.dataset != route.dataset || tgt.dataset != route.dataset {
            return Err(bad("volume dataset differs from route dataset".into()));
        }
        Ok(VolumePair { pair_id: p.pair_id.clone(), route, src: src.clone(), tgt: tgt.clone() })
    }

    /// All pairs, resolved, in manifest order.
    pub fn volume_pairs(&self) -> Result<Vec<VolumePair>, IngestError> {
        self.pairs.iter().map(|p| self.resolve_pair(p)).collect()
    }

    pub fn pairs_by_route(&self) -> Result<BTreeMap<Route, Vec<VolumePair>>, IngestError> {
        let mut out: BTreeMap<Route, Vec<VolumePair>> = BTreeMap::new();
        for p in self.volume_pairs()? {
            out.entry(p.route).or_default().push(p);
        }
        Ok(out)
    }

    pub fn slice_path(&self, vref: &VolumeRef, k: usize) -> PathBuf {
        self.root.join(&vref.slice_paths[k])
    }

    /// Loads slice `k` of `vref` with the volume's intensity window applied.
    pub fn load_slice(&self, vref: &VolumeRef, k: usize) -> Result<Image2D, IngestError> {
        load_slice(&self.root, vref, k)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }
}

pub fn parse_manifest(text: &str, root: impl Into<PathBuf>) -> Result<CorpusManifest, IngestError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let mut manifest: CorpusManifest = serde_path_to_error::deserialize(de).map_err(|e| {
        let pointer = json_pointer(e.path());
        IngestError::Schema { pointer, message: e.into_inner().to_string() }
    })?;
    manifest.root = root.into();
    manifest.validate()?;
    Ok(manifest)
}

pub fn load_manifest(path: &Path) -> Result<CorpusManifest, IngestError> {
    let text = std::fs::read_to_string(path).map_err(|e| IngestError::io(path, e))?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_manifest(&text, root)
}

fn json_pointer(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        out.push('/');
        match seg {
            Segment::Seq { index } => out.push_str(&index.to_string()),
            Segment::Map { key } => out.push_str(&key.replace('~', "~0").replace('/', "~1")),
            Segment::Enum { variant } => out.push_str(variant),
            Segment::Unknown => out.push('?'),
        }
    }
    if out.is_empty() {
        out.push('/');
    }
    out
}

/// Applies `clamp((v - lo) / (hi - lo), 0, 1)` to every pixel.
pub fn apply_window(img: &Image2D, window: [f64; 2]) -> Image2D {
    let [lo, hi] = window;
    if lo == 0.0 && hi == 1.0 {
        return img.clone();
    }
    let span = hi - lo;
    let data = img.data().iter().map(|&v| ((v - lo) / span).clamp(0.0, 1.0)).collect();
    Image2D::new(img.width(), img.height(), data).expect("clamped window output")
}

pub fn load_slice(root: &Path, vref: &VolumeRef, k: usize) -> Result<Image2D, IngestError> {
    if k >= vref.len() {
        return Err(IngestError::IndexOutOfRange { volume_id: vref.volume_id.clone(), k, len: vref.len() });
    }
    let path = root.join(&vref.slice_paths[k]);
    let bytes = std::fs::read(&path).map_err(|e| IngestError::io(&path, e))?;
    let img = parse_pgm(&bytes).map_err(|source| IngestError::Pgm { path: path.clone(), source })?;
    if img.dims() != (vref.width, vref.height) {
        return Err(IngestError::ShapeMismatch { path, expected: (vref.width, vref.height), got: img.dims() });
    }
    Ok(apply_window(&img, vref.intensity_window))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn volume(id: &str, ds: &str, m: &str, n: usize) -> serde_json::Value {
        let slices: Vec<String> = (0..n).map(|k| format!("{id}/{k:03}.pgm")).collect();
        serde_json::json!({
            "volume_id": id, "dataset": ds, "modality": m, "width": 32, "height": 32,
            "intensity_window": [0.0, 1.0], "slices": slices
        })
    }

    fn manifest(vols: Vec<serde_json::Value>, pairs: serde_json::Value) -> String {
        serde_json::json!({ "schema_version": 1, "volumes": vols, "pairs": pairs }).to_string()
    }

    #[test]
    fn valid_single_pair() {
        let text = manifest(
            vec![volume("a", "SYNTHRAD_BRAIN", "CT", 3), volume("b", "SYNTHRAD_BRAIN", "CBCT", 3)],
            serde_json::json!([{ "pair_id": "p", "route_id": "synthrad_brain/ct_to_cbct",
                                 "src_volume_id": "a", "tgt_volume_id": "b" }]),
        );
        let m = parse_manifest(&text, "/tmp").unwrap();
        let pairs = m.volume_pairs().unwrap();
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].n_slices(), 3);
    }

    #[test]
    fn dangling_volume_reference() {
        let text = manifest(
            vec![volume("a", "SYNTHRAD_BRAIN", "CT", 3)],
            serde_json::json!([{ "pair_id": "p", "route_id": "synthrad_brain/ct_to_cbct",
                                 "src_volume_id": "a", "tgt_volume_id": "zzz" }]),
        );
        assert!(matches!(parse_manifest(&text, "/tmp"), Err(IngestError::Constraint(_))));
    }

    #[test]
    fn misaligned_slice_counts() {
        let text = manifest(
            vec![volume("a", "SYNTHRAD_BRAIN", "CT", 3), volume("b", "SYNTHRAD_BRAIN", "CBCT", 4)],
            serde_json::json!([{ "pair_id": "p", "route_id": "synthrad_brain/ct_to_cbct",
                                 "src_volume_id": "a", "tgt_volume_id": "b" }]),
        );
        let err = parse_manifest(&text, "/tmp").unwrap_err();
        assert!(matches!(&err, IngestError::Constraint(m) if m.contains("slice counts")), "{err}");
    }

    #[test]
    fn modality_route_mismatch() {
        let text = manifest(
            vec![volume("a", "SYNTHRAD_BRAIN", "CT", 3), volume("b", "SYNTHRAD_BRAIN", "MR", 3)],
            serde_json::json!([{ "pair_id": "p", "route_id": "synthrad_brain/ct_to_cbct",
                                 "src_volume_id": "a", "tgt_volume_id": "b" }]),
        );
        assert!(matches!(parse_manifest(&text, "/tmp"), Err(IngestError::Constraint(_))));
    }

    #[test]
    fn schema_error_carries_pointer() {
        let mut v = volume("a", "SYNTHRAD_BRAIN", "CT", 3);
        v["width"] = serde_json::json!("wide");
        let text = manifest(vec![v], serde_json::json!([]));
        match parse_manifest(&text, "/tmp") {
            Err(IngestError::Schema { pointer, .. }) => assert_eq!(pointer, "/volumes/0/width"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_keys_rejected() {
        let mut v = volume("a", "SYNTHRAD_BRAIN", "CT", 3);
        v["colour"] = serde_json::json!(1);
        let text = manifest(vec![v], serde_json::json!([]));
        assert!(matches!(parse_manifest(&text, "/tmp"), Err(IngestError::Schema { .. })));
    }

    #[test]
    fn inverted_window_rejected() {
        let mut v = volume("a", "SYNTHRAD_BRAIN", "CT", 3);
        v["intensity_window"] = serde_json::json!([0.8, 0.2]);
        let text = manifest(vec![v], serde_json::json!([]));
        assert!(matches!(parse_manifest(&text, "/tmp"), Err(IngestError::Schema { .. })));
    }

    fn px(v: f64) -> Image2D {
        Image2D::filled(1, 1, v).unwrap()
    }

    #[test]
    fn windowing() {
        assert_eq!(apply_window(&px(0.5), [0.0, 1.0]).data(), &[0.5]);
        assert_eq!(apply_window(&px(0.5), [0.25, 0.75]).data(), &[0.5]);
        assert_eq!(apply_window(&px(1.0), [0.25, 0.75]).data(), &[1.0]);
        assert_eq!(apply_window(&px(0.1), [0.25, 0.75]).data(), &[0.0]);
    }

    #[test]
    fn load_slice_from_disk_with_window() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(dir.path().join("v")).unwrap();
        let img = Image2D::new(2, 1, vec![0.5, 1.0]).unwrap();
        write_pgm(&dir.path().join("v/0.pgm"), &img, PgmDepth::Sixteen).unwrap();
        let vref = VolumeRef {
            volume_id: "v".into(),
            dataset: DatasetTag::Autopet,
            modality: Modality::Pet,
            width: 2,
            height: 1,
            intensity_window: [0.25, 0.75],
            slice_paths: vec!["v/0.pgm".into()],
        };
        let out = load_slice(dir.path(), &vref, 0).unwrap();
        assert!((out.data()[0] - 0.5).abs() < 1e-4);
        assert_eq!(out.data()[1], 1.0);
        assert!(matches!(load_slice(dir.path(), &vref, 1), Err(IngestError::IndexOutOfRange { .. })));
    }
}
