//! Synthetic paired-modality corpus.
//!
//! Each patient is a stack of content fields: a soft body mask whose shape
//! depends on the dataset's anatomical region, plus Gaussian blobs whose
//! centers random-walk from slice to slice. Every modality of the patient
//! renders the same content through its own intensity curve, bias field and
//! noise, so paired slices differ only in appearance.

use super::SynergyError;
use crate::domain::{stream, DatasetTag, Image2D, Modality, Route, RngStream};
use crate::ingest::{CorpusManifest, PairEntry, PgmDepth, VolumeRef};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyModality {
    pub gamma: f64,
    pub bias_amplitude: f64,
    /// Orientation of the cosine bias field, in degrees.
    pub bias_angle: f64,
    pub noise_sigma: f64,
    /// Render tissue as `1 - tissue` inside the body.
    pub invert: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyCorpusConfig {
    pub seed: u64,
    /// Number of patients; each is rendered in every modality of its dataset.
    pub n_volumes: usize,
    pub slices_per_volume: usize,
    pub width: usize,
    pub height: usize,
    pub n_blobs: usize,
    /// Blob-center displacement per slice, in pixels.
    pub drift_step: f64,
    /// Blob width range at 32x32, in pixels (scaled with the slice size).
    pub blob_sigma: [f64; 2],
    /// Blob peak range added to the background.
    pub blob_amplitude: [f64; 2],
    /// Background tissue level range.
    pub background: [f64; 2],
    pub datasets: Vec<DatasetTag>,
    pub modalities: BTreeMap<Modality, ToyModality>,
}

fn m(gamma: f64, bias_amplitude: f64, bias_angle: f64, noise_sigma: f64, invert: bool) -> ToyModality {
    ToyModality { gamma, bias_amplitude, bias_angle, noise_sigma, invert }
}

impl Default for ToyCorpusConfig {
    fn default() -> Self {
        let modalities = [
            (Modality::Ct, m(1.0, 0.05, 0.0, 0.02, false)),
            // Same curve as CT with a stronger bias field and more noise.
            (Modality::Cbct, m(1.0, 0.30, 0.0, 0.07, false)),
            (Modality::Pet, m(3.0, 0.10, 90.0, 0.05, false)),
            (Modality::Mr, m(0.4, 0.15, 45.0, 0.03, false)),
            (Modality::MrT1, m(0.55, 0.10, 30.0, 0.03, false)),
            (Modality::MrT1ce, m(1.4, 0.10, 30.0, 0.03, false)),
            (Modality::MrT2, m(0.75, 0.10, 120.0, 0.03, false)),
            (Modality::MrFlair, m(2.0, 0.15, 150.0, 0.03, false)),
        ]
        .into_iter()
        .collect();
        Self {
            seed: 0,
            n_volumes: 64,
            slices_per_volume: 32,
            width: 32,
            height: 32,
            n_blobs: 4,
            drift_step: 2.5,
            blob_sigma: [1.0, 1.5],
            blob_amplitude: [0.25, 0.55],
            background: [0.2, 0.3],
            datasets: vec![DatasetTag::SynthradBrain, DatasetTag::SynthradPelvis, DatasetTag::Autopet, DatasetTag::Brats],
            modalities,
        }
    }
}

impl ToyCorpusConfig {
    pub fn validate(&self) -> Result<(), SynergyError> {
        let bad = |m: String| Err(SynergyError::Config(m));
        if self.slices_per_volume < 2 {
            return bad("slices_per_volume must be >= 2".into());
        }
        if self.width == 0 || self.width % 16 != 0 || self.height == 0 || self.height % 16 != 0 {
            return bad(format!("slice size {}x{} must be a positive multiple of 16", self.width, self.height));
        }
        if self.datasets.is_empty() {
            return bad("datasets must not be empty".into());
        }
        if self.n_volumes < self.datasets.len() {
            return bad(format!("n_volumes {} gives some dataset no patient", self.n_volumes));
        }
        if !(self.drift_step >= 0.0) {
            return bad("drift_step must be >= 0".into());
        }
        let ordered = |r: [f64; 2]| r[0].is_finite() && r[1].is_finite() && r[0] <= r[1];
        if !ordered(self.blob_sigma) || !(self.blob_sigma[0] > 0.0) {
            return bad("blob_sigma must be an ordered positive range".into());
        }
        if !ordered(self.blob_amplitude) || !ordered(self.background) {
            return bad("blob_amplitude and background must be ordered ranges".into());
        }
        for d in &self.datasets {
            for md in d.modalities() {
                let Some(p) = self.modalities.get(md) else {
                    return bad(format!("no rendering parameters for {md:?} (dataset {})", d.id()));
                };
                if !(p.gamma > 0.0) || !(p.noise_sigma >= 0.0) || !(p.bias_amplitude >= 0.0) || p.bias_amplitude >= 1.0 {
                    return bad(format!("rendering parameters for {md:?} out of range"));
                }
            }
        }
        Ok(())
    }

    /// CTS with window `k` needs `S >= 2k + 2`.
    pub fn check_window(&self, k: usize) -> Result<(), SynergyError> {
        if self.slices_per_volume < 2 * k + 2 {
            return Err(SynergyError::Config(format!(
                "k_window {k} needs at least {} slices per volume, corpus has {}",
                2 * k + 2,
                self.slices_per_volume
            )));
        }
        Ok(())
    }

    pub fn patient_dataset(&self, p: usize) -> DatasetTag {
        self.datasets[p % self.datasets.len()]
    }
}

pub fn patient_id(p: usize) -> String {
    format!("p{p:03}")
}

pub fn volume_id(p: usize, m: Modality) -> String {
    format!("{}_{}", patient_id(p), m.short())
}

/// Body radii as fractions of (width, height).
fn region_radii(d: DatasetTag) -> (f64, f64) {
    match d {
        DatasetTag::SynthradBrain => (0.34, 0.42),
        DatasetTag::SynthradPelvis => (0.46, 0.28),
        DatasetTag::Autopet => (0.24, 0.45),
        DatasetTag::Brats => (0.40, 0.40),
    }
}

#[derive(Debug, Clone)]
struct Blob {
    x: f64,
    y: f64,
    sigma: f64,
    amp: f64,
}

/// Shared anatomy of one patient: per-slice body mask and tissue values.
#[derive(Debug, Clone)]
pub struct PatientContent {
    pub width: usize,
    pub height: usize,
    pub mask: Vec<f64>,
    pub tissue: Vec<Vec<f64>>,
}

fn uniform(rng: &mut RngStream, r: [f64; 2]) -> f64 {
    r[0] + (r[1] - r[0]) * rng.next_f64()
}

pub fn patient_content(cfg: &ToyCorpusConfig, p: usize) -> PatientContent {
    let (w, h) = (cfg.width, cfg.height);
    let scale = w.min(h) as f64 / 32.0;
    let mut rng = stream(cfg.seed, &["toy", "patient", &patient_id(p)]);
    let (fx, fy) = region_radii(cfg.patient_dataset(p));
    let rx = fx * w as f64 * (0.95 + 0.1 * rng.next_f64());
    let ry = fy * h as f64 * (0.95 + 0.1 * rng.next_f64());
    let (cx, cy) = (w as f64 / 2.0 - 0.5, h as f64 / 2.0 - 0.5);
    let inside = |x: f64, y: f64| ((x - cx) / rx).powi(2) + ((y - cy) / ry).powi(2);

    let mut mask = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let r = inside(x as f64, y as f64).sqrt();
            // Soft edge about one pixel wide.
            mask.push(1.0 / (1.0 + ((r - 1.0) * rx.min(ry) * 1.5).exp()));
        }
    }

    let mut blobs: Vec<Blob> = (0..cfg.n_blobs)
        .map(|_| {
            let a = 2.0 * PI * rng.next_f64();
            let r = 0.6 * rng.next_f64().sqrt();
            Blob {
                x: cx + r * rx * a.cos(),
                y: cy + r * ry * a.sin(),
                sigma: scale * uniform(&mut rng, cfg.blob_sigma),
                amp: uniform(&mut rng, cfg.blob_amplitude),
            }
        })
        .collect();
    let base = uniform(&mut rng, cfg.background);

    let mut tissue = Vec::with_capacity(cfg.slices_per_volume);
    for _ in 0..cfg.slices_per_volume {
        let mut t = vec![base; w * h];
        for b in &blobs {
            let inv = 1.0 / (2.0 * b.sigma * b.sigma);
            for y in 0..h {
                let dy2 = (y as f64 - b.y).powi(2);
                for x in 0..w {
                    t[y * w + x] += b.amp * (-((x as f64 - b.x).powi(2) + dy2) * inv).exp();
                }
            }
        }
        t.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        tissue.push(t);
        for b in &mut blobs {
            let a = 2.0 * PI * rng.next_f64();
            let (nx, ny) = (b.x + cfg.drift_step * scale * a.cos(), b.y + cfg.drift_step * scale * a.sin());
            // Reflect steps that would leave the inner body region.
            if inside(nx, ny) <= 0.7 * 0.7 {
                b.x = nx;
                b.y = ny;
            } else {
                b.x -= cfg.drift_step * scale * a.cos();
                b.y -= cfg.drift_step * scale * a.sin();
            }
        }
    }
    PatientContent { width: w, height: h, mask, tissue }
}

/// Renders slice `k` of `content` in modality `md`.
pub fn render_slice(content: &PatientContent, k: usize, md: &ToyModality, noise: &mut RngStream) -> Image2D {
    let (w, h) = (content.width, content.height);
    let theta = md.bias_angle.to_radians();
    let data = (0..w * h)
        .map(|i| {
            let (x, y) = ((i % w) as f64, (i / w) as f64);
            let t = content.tissue[k][i];
            let base = if md.invert { 1.0 - t } else { t };
            let bias = 1.0 + md.bias_amplitude * (2.0 * PI * (x * theta.cos() + y * theta.sin()) / w as f64).cos();
            let n = if md.noise_sigma > 0.0 { md.noise_sigma * noise.next_normal() } else { 0.0 };
            content.mask[i] * base.powf(md.gamma) * bias + n
        })
        .collect();
    Image2D::from_clamped(w, h, data).expect("finite samples")
}

/// One rendered volume of the toy corpus.
#[derive(Debug, Clone)]
pub struct ToyVolume {
    pub patient: usize,
    pub dataset: DatasetTag,
    pub modality: Modality,
    pub volume_id: String,
    pub slices: Vec<Image2D>,
}

/// Renders every volume in memory, ordered by (patient, modality).
pub fn render_toy_volumes(cfg: &ToyCorpusConfig) -> Result<Vec<ToyVolume>, SynergyError> {
    cfg.validate()?;
    let jobs: Vec<(usize, Modality)> = (0..cfg.n_volumes)
        .flat_map(|p| cfg.patient_dataset(p).modalities().iter().map(move |&md| (p, md)))
        .collect();
    let contents: Vec<PatientContent> = (0..cfg.n_volumes).into_par_iter().map(|p| patient_content(cfg, p)).collect();
    Ok(jobs
        .par_iter()
        .map(|&(p, md)| {
            let params = &cfg.modalities[&md];
            let vid = volume_id(p, md);
            let slices = (0..cfg.slices_per_volume)
                .map(|k| {
                    let mut noise = stream(cfg.seed, &["toy", "noise", vid.as_str(), &k.to_string()]);
                    render_slice(&contents[p], k, params, &mut noise)
                })
                .collect();
            ToyVolume { patient: p, dataset: cfg.patient_dataset(p), modality: md, volume_id: vid, slices }
        })
        .collect())
}

/// Manifest for the toy corpus, with slice paths `volumes/<volume_id>/<k>.pgm`.
pub fn toy_manifest(cfg: &ToyCorpusConfig, root: &Path) -> CorpusManifest {
    let mut volumes = Vec::new();
    let mut pairs = Vec::new();
    for p in 0..cfg.n_volumes {
        let d = cfg.patient_dataset(p);
        for &md in d.modalities() {
            let vid = volume_id(p, md);
            volumes.push(VolumeRef {
                volume_id: vid.clone(),
                dataset: d,
                modality: md,
                width: cfg.width,
                height: cfg.height,
                intensity_window: [0.0, 1.0],
                slice_paths: (0..cfg.slices_per_volume).map(|k| format!("volumes/{vid}/{k:03}.pgm").into()).collect(),
            });
        }
        for r in crate::domain::route_catalog().iter().filter(|r| r.dataset == d) {
            pairs.push(PairEntry {
                pair_id: pair_id(p, r),
                route_id: r.route_id(),
                src_volume_id: volume_id(p, r.src),
                tgt_volume_id: volume_id(p, r.tgt),
            });
        }
    }
    CorpusManifest { schema_version: 1, volumes, pairs, root: root.to_path_buf() }
}

pub fn pair_id(p: usize, r: &Route) -> String {
    format!("{}_{}_to_{}", patient_id(p), r.src.short(), r.tgt.short())
}

/// Writes 16-bit PGM slices and `manifest.json` under `out`.
pub fn gen_toy_corpus(cfg: &ToyCorpusConfig, out: &Path) -> Result<CorpusManifest, SynergyError> {
    let volumes = render_toy_volumes(cfg)?;
    let manifest = toy_manifest(cfg, out);
    volumes.par_iter().try_for_each(|v| -> Result<(), SynergyError> {
        let dir = out.join("volumes").join(&v.volume_id);
        std::fs::create_dir_all(&dir)?;
        for (k, img) in v.slices.iter().enumerate() {
            crate::ingest::write_pgm(&dir.join(format!("{k:03}.pgm")), img, PgmDepth::Sixteen)?;
        }
        Ok(())
    })?;
    manifest.validate()?;
    std::fs::write(out.join("manifest.json"), manifest.to_json_pretty() + "\n")?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::mae;

    fn small() -> ToyCorpusConfig {
        ToyCorpusConfig { n_volumes: 4, slices_per_volume: 12, ..ToyCorpusConfig::default() }
    }

    #[test]
    fn default_config_is_valid() {
        ToyCorpusConfig::default().validate().unwrap();
        assert!(ToyCorpusConfig { width: 24, ..small() }.validate().is_err());
        assert!(ToyCorpusConfig { n_volumes: 2, ..small() }.validate().is_err());
    }

    #[test]
    fn degenerate_modalities_give_identical_pairs() {
        let mut cfg = small();
        let same = m(1.0, 0.1, 0.0, 0.0, false);
        for v in cfg.modalities.values_mut() {
            *v = same;
        }
        let vols = render_toy_volumes(&cfg).unwrap();
        let a = vols.iter().find(|v| v.volume_id == "p000_ct").unwrap();
        let b = vols.iter().find(|v| v.volume_id == "p000_cbct").unwrap();
        assert_eq!(a.slices, b.slices);
    }

    #[test]
    fn neighbouring_slices_are_closer() {
        let cfg = ToyCorpusConfig { n_volumes: 4, ..ToyCorpusConfig::default() };
        let vols = render_toy_volumes(&cfg).unwrap();
        let (mut near, mut far) = (0.0, 0.0);
        for v in &vols {
            for k in 0..cfg.slices_per_volume - 8 {
                let n = mae(&v.slices[k], &v.slices[k + 1]).unwrap();
                assert!(n > 0.0);
                near += n;
                far += mae(&v.slices[k], &v.slices[k + 8]).unwrap();
            }
        }
        assert!(near < far, "{near} vs {far}");
    }

    #[test]
    fn manifest_covers_catalog() {
        let cfg = ToyCorpusConfig { n_volumes: 4, ..ToyCorpusConfig::default() };
        let man = toy_manifest(&cfg, Path::new("."));
        man.validate().unwrap();
        assert_eq!(man.pairs.len(), 22);
        assert_eq!(man.volumes.len(), 3 + 3 + 2 + 4);
    }

    #[test]
    fn files_are_deterministic() {
        let cfg = ToyCorpusConfig { slices_per_volume: 4, ..small() };
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        gen_toy_corpus(&cfg, a.path()).unwrap();
        gen_toy_corpus(&cfg, b.path()).unwrap();
        let read = |d: &Path, rel: &str| std::fs::read(d.join(rel)).unwrap();
        for rel in ["manifest.json", "volumes/p003_t2/002.pgm", "volumes/p002_pet/000.pgm"] {
            assert_eq!(read(a.path(), rel), read(b.path(), rel), "{rel}");
        }
        let man = crate::ingest::load_manifest(&a.path().join("manifest.json")).unwrap();
        let v = man.volume("p001_ct").unwrap();
        man.load_slice(v, 3).unwrap();
    }
}
