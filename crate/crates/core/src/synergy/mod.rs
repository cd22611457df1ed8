//! Desk-scale two-stage training: a shared slice encoder learns the three
//! understanding tasks (Stage I), then conditions a flow-matching velocity
//! network that synthesizes target-modality latents (Stage II).
//!
//! The latent of a slice is its 8x8 box average; decoding is a clamp and a
//! bilinear upsample.

mod ablation;
mod stage1;
mod stage2;
pub mod toy;

pub use ablation::{
    k_sensitivity, run_ablation, AblationCell, AblationReport, KSensitivityReport, KSensitivityRow, Schedule,
    ScheduleSummary, SeedSummary,
};
pub use stage1::{
    evaluate_gau, resolve_instances, stage1_batch_loss, train_stage1, GauAccuracy, Stage1Item, Stage1Outcome,
};
pub use stage2::{
    evaluate_synthesis, stage2_batch_loss, stage2_validation_batch, synthesize, synthesize_latent, train_stage2,
    Stage2Outcome, Stage2Sample, SynthesisEval,
};
pub use toy::{gen_toy_corpus, render_toy_volumes, toy_manifest, ToyCorpusConfig, ToyModality, ToyVolume};

use crate::domain::{route_catalog, stream, Image2D, Modality, Route};
use crate::flowcore::{FlowError, SampleMethod};
use crate::forge::{ForgeError, InstanceCounts};
use crate::ingest::{CorpusManifest, IngestError};
use crate::metrics::{MetricsError, SsimParams};
use crate::prompts::PromptError;
use crate::toynet::{AdamConfig, AdamState, ForwardCache, Grads, MlpNet, NetError};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

pub const INPUT_SIDE: usize = 16;
pub const INPUT_DIM: usize = INPUT_SIDE * INPUT_SIDE;
pub const LATENT_SIDE: usize = 8;
pub const LATENT_DIM: usize = LATENT_SIDE * LATENT_SIDE;
pub const EMBED_DIM: usize = 64;
pub const N_MODALITIES: usize = Modality::ALL.len();
pub const N_ROUTES: usize = 22;
const TIME_FEATURES: usize = 3;
pub const VNET_IN: usize = LATENT_DIM + EMBED_DIM + N_ROUTES + TIME_FEATURES;

#[derive(Debug, Error)]
pub enum SynergyError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error(transparent)]
    Forge(#[from] ForgeError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl SynergyError {
    pub fn is_non_finite(&self) -> bool {
        matches!(self, SynergyError::Flow(FlowError::NonFinite { .. }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Stage1Config {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Cosine-annealed from `lr` down to this value over the epochs.
    pub lr_min: f64,
    /// Held-out forge counts used for accuracy reporting.
    pub eval_instances_per_pair: InstanceCounts,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Self { epochs: 30, batch_size: 32, lr: 2e-3, lr_min: 5e-5, eval_instances_per_pair: InstanceCounts { cts: 8, mi: 8, tia: 8 } }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Stage2Config {
    pub epochs: usize,
    /// Training samples drawn per route and epoch (route-balanced batches).
    pub samples_per_route: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Cosine-annealed from `lr` down to this value over the epochs.
    pub lr_min: f64,
    pub freeze_encoder: bool,
    /// Replace the conditioning vector with zeros (diagnostic).
    pub zero_cond: bool,
}

impl Default for Stage2Config {
    fn default() -> Self {
        Self {
            epochs: 20,
            samples_per_route: 64,
            batch_size: 32,
            lr: 1e-3,
            lr_min: 5e-5,
            freeze_encoder: false,
            zero_cond: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub steps: usize,
    pub t_end: f64,
    pub method: SampleMethod,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { steps: 50, t_end: 1e-3, method: SampleMethod::Euler }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Every `slice_stride`-th slice of each held-out pair is synthesized.
    pub slice_stride: usize,
    pub ssim: SsimParams,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { slice_stride: 4, ssim: SsimParams::toy() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub encoder_hidden: usize,
    pub vnet_hidden: usize,
    /// Every `holdout_every`-th patient of each dataset is held out.
    pub holdout_every: usize,
    pub stage1: Stage1Config,
    pub stage2: Stage2Config,
    pub sampler: SamplerConfig,
    pub eval: EvalConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            encoder_hidden: 128,
            vnet_hidden: 128,
            holdout_every: 3,
            stage1: Stage1Config::default(),
            stage2: Stage2Config::default(),
            sampler: SamplerConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), SynergyError> {
        let bad = |m: &str| Err(SynergyError::Config(m.to_owned()));
        if self.encoder_hidden == 0 || self.vnet_hidden == 0 {
            return bad("hidden sizes must be positive");
        }
        if self.holdout_every < 2 {
            return bad("holdout_every must be >= 2");
        }
        if self.stage1.batch_size == 0 || self.stage2.batch_size == 0 {
            return bad("batch sizes must be positive");
        }
        if !(self.stage1.lr > 0.0) || !(self.stage2.lr > 0.0) {
            return bad("learning rates must be positive");
        }
        if !(self.stage1.lr_min > 0.0 && self.stage1.lr_min <= self.stage1.lr)
            || !(self.stage2.lr_min > 0.0 && self.stage2.lr_min <= self.stage2.lr)
        {
            return bad("lr_min must be in (0, lr]");
        }
        if self.sampler.steps == 0 || !(self.sampler.t_end > 0.0 && self.sampler.t_end < 1.0) {
            return bad("sampler needs steps >= 1 and 0 < t_end < 1");
        }
        if self.eval.slice_stride == 0 {
            return bad("eval.slice_stride must be positive");
        }
        self.eval.ssim.validate()?;
        Ok(())
    }
}

/// Encoder input: 16x16 box average mapped to [-1, 1].
pub fn encoder_input(img: &Image2D) -> Vec<f64> {
    img.box_downsample(img.width() / INPUT_SIDE).data().iter().map(|v| 2.0 * v - 1.0).collect()
}

pub fn latent_of(img: &Image2D) -> Vec<f64> {
    img.box_downsample(img.width() / LATENT_SIDE).into_data()
}

/// Clamps a latent to [0, 1] and upsamples it to `side x side`.
pub fn decode_latent(z: &[f64], side: usize) -> Image2D {
    Image2D::from_clamped(LATENT_SIDE, LATENT_SIDE, z.to_vec()).expect("finite latent").bilinear_resize(side, side)
}

fn check_slice_dims(w: usize, h: usize) -> Result<(), SynergyError> {
    if w != h || w == 0 || w % INPUT_SIDE != 0 {
        return Err(SynergyError::Config(format!("slices must be square with side a multiple of {INPUT_SIDE}, got {w}x{h}")));
    }
    Ok(())
}

/// All slices of a corpus, pre-reduced to encoder inputs and latents.
#[derive(Debug, Clone)]
pub struct SliceBank {
    offsets: BTreeMap<String, (usize, usize)>,
    inputs: Vec<Vec<f64>>,
    latents: Vec<Vec<f64>>,
    side: usize,
}

impl SliceBank {
    pub fn from_volumes<'a>(volumes: impl IntoIterator<Item = (&'a str, &'a [Image2D])>) -> Result<Self, SynergyError> {
        let mut bank = Self { offsets: BTreeMap::new(), inputs: Vec::new(), latents: Vec::new(), side: 0 };
        for (vid, slices) in volumes {
            for img in slices {
                check_slice_dims(img.width(), img.height())?;
                if bank.side != 0 && bank.side != img.width() {
                    return Err(SynergyError::Data(format!("volume {vid} has side {}, corpus uses {}", img.width(), bank.side)));
                }
                bank.side = img.width();
            }
            bank.offsets.insert(vid.to_owned(), (bank.inputs.len(), slices.len()));
            bank.inputs.extend(slices.iter().map(encoder_input));
            bank.latents.extend(slices.iter().map(latent_of));
        }
        Ok(bank)
    }

    pub fn from_manifest(m: &CorpusManifest) -> Result<Self, SynergyError> {
        let loaded: Vec<(String, Vec<Image2D>)> = m
            .volumes
            .par_iter()
            .map(|v| Ok((v.volume_id.clone(), (0..v.len()).map(|k| m.load_slice(v, k)).collect::<Result<Vec<_>, _>>()?)))
            .collect::<Result<_, IngestError>>()?;
        Self::from_volumes(loaded.iter().map(|(id, s)| (id.as_str(), s.as_slice())))
    }

    pub fn id(&self, volume_id: &str, k: usize) -> Option<usize> {
        let &(off, n) = self.offsets.get(volume_id)?;
        (k < n).then_some(off + k)
    }

    pub fn resolve(&self, slice_ref: &str) -> Result<usize, SynergyError> {
        crate::domain::parse_slice_ref(slice_ref)
            .and_then(|(v, k)| self.id(v, k))
            .ok_or_else(|| SynergyError::Data(format!("unresolvable slice ref {slice_ref}")))
    }

    pub fn input(&self, id: usize) -> &[f64] {
        &self.inputs[id]
    }

    pub fn latent(&self, id: usize) -> &[f64] {
        &self.latents[id]
    }

    pub fn side(&self) -> usize {
        self.side
    }
}

/// A manifest with its slices in memory and a patient-level train/held-out split.
#[derive(Debug, Clone)]
pub struct SynergyCorpus {
    pub manifest: CorpusManifest,
    pub bank: SliceBank,
    pub train: CorpusManifest,
    pub held_out: CorpusManifest,
}

impl SynergyCorpus {
    pub fn new(manifest: CorpusManifest, bank: SliceBank, holdout_every: usize) -> Result<Self, SynergyError> {
        manifest.validate()?;
        let (train, held_out) = split_by_patient(&manifest, holdout_every)?;
        Ok(Self { manifest, bank, train, held_out })
    }

    pub fn load(manifest: CorpusManifest, holdout_every: usize) -> Result<Self, SynergyError> {
        let bank = SliceBank::from_manifest(&manifest)?;
        Self::new(manifest, bank, holdout_every)
    }

    /// Renders the toy corpus in memory (no files).
    pub fn from_toy(cfg: &ToyCorpusConfig, holdout_every: usize) -> Result<Self, SynergyError> {
        let vols = render_toy_volumes(cfg)?;
        let bank = SliceBank::from_volumes(vols.iter().map(|v| (v.volume_id.as_str(), v.slices.as_slice())))?;
        Self::new(toy_manifest(cfg, Path::new(".")), bank, holdout_every)
    }

    pub fn slices_per_volume(&self) -> usize {
        self.manifest.volumes.iter().map(|v| v.len()).min().unwrap_or(0)
    }

    /// Per-dimension latent statistics of the training split.
    pub fn latent_norm(&self) -> LatentNorm {
        let ids: Vec<usize> =
            self.train.volumes.iter().flat_map(|v| (0..v.len()).filter_map(|k| self.bank.id(&v.volume_id, k))).collect();
        LatentNorm::fit(ids.iter().map(|&i| self.bank.latent(i)))
    }
}

/// Lower bound on a per-dimension latent scale.
pub const LATENT_SCALE_FLOOR: f64 = 0.02;

/// Affine map between slice latents and the space the flow is trained in:
/// `(x - mean) / scale` per dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatentNorm {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl LatentNorm {
    pub fn identity() -> Self {
        Self { mean: vec![0.0; LATENT_DIM], scale: vec![1.0; LATENT_DIM] }
    }

    /// Mean and standard deviation per dimension, the latter floored at
    /// [`LATENT_SCALE_FLOOR`]. No latents gives the identity.
    pub fn fit<'a>(latents: impl IntoIterator<Item = &'a [f64]>) -> Self {
        let mut n = 0usize;
        let mut sum = vec![0.0; LATENT_DIM];
        let mut sq = vec![0.0; LATENT_DIM];
        for z in latents {
            n += 1;
            for (d, v) in z.iter().enumerate() {
                sum[d] += v;
                sq[d] += v * v;
            }
        }
        if n == 0 {
            return Self::identity();
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let scale = sq.iter().zip(&mean).map(|(q, m)| (q / n as f64 - m * m).max(0.0).sqrt().max(LATENT_SCALE_FLOOR)).collect();
        Self { mean, scale }
    }

    pub fn forward(&self, z: &[f64]) -> Vec<f64> {
        z.iter().zip(self.mean.iter().zip(&self.scale)).map(|(v, (m, s))| (v - m) / s).collect()
    }

    pub fn inverse(&self, z: &[f64]) -> Vec<f64> {
        z.iter().zip(self.mean.iter().zip(&self.scale)).map(|(v, (m, s))| v * s + m).collect()
    }

    fn validate(&self) -> Result<(), SynergyError> {
        if self.mean.len() != LATENT_DIM || self.scale.len() != LATENT_DIM {
            return Err(SynergyError::Data(format!("latent norm must have {LATENT_DIM} entries")));
        }
        if !self.mean.iter().all(|v| v.is_finite()) || !self.scale.iter().all(|s| s.is_finite() && *s > 0.0) {
            return Err(SynergyError::Data("latent norm needs finite means and positive scales".into()));
        }
        Ok(())
    }
}

/// Patients are the connected components of the pair graph. Within each
/// dataset, components are ordered by their smallest volume id and every
/// `holdout_every`-th one is held out.
pub fn split_by_patient(m: &CorpusManifest, holdout_every: usize) -> Result<(CorpusManifest, CorpusManifest), SynergyError> {
    if holdout_every < 2 {
        return Err(SynergyError::Config("holdout_every must be >= 2".into()));
    }
    let index: BTreeMap<&str, usize> = m.volumes.iter().enumerate().map(|(i, v)| (v.volume_id.as_str(), i)).collect();
    let mut parent: Vec<usize> = (0..m.volumes.len()).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for pair in &m.pairs {
        let (a, b) = (index[pair.src_volume_id.as_str()], index[pair.tgt_volume_id.as_str()]);
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        parent[ra.max(rb)] = ra.min(rb);
    }
    let mut components: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..m.volumes.len() {
        let r = find(&mut parent, i);
        components.entry(r).or_default().push(i);
    }
    let mut by_dataset: BTreeMap<_, Vec<(String, Vec<usize>)>> = BTreeMap::new();
    for members in components.into_values() {
        let first = members.iter().map(|&i| m.volumes[i].volume_id.clone()).min().expect("non-empty component");
        by_dataset.entry(m.volumes[members[0]].dataset).or_default().push((first, members));
    }
    let mut held = vec![false; m.volumes.len()];
    for comps in by_dataset.values_mut() {
        comps.sort();
        for (n, (_, members)) in comps.iter().enumerate() {
            if n % holdout_every == holdout_every - 1 {
                members.iter().for_each(|&i| held[i] = true);
            }
        }
    }
    let part = |want: bool| CorpusManifest {
        schema_version: m.schema_version,
        volumes: m.volumes.iter().zip(&held).filter(|(_, h)| **h == want).map(|(v, _)| v.clone()).collect(),
        pairs: m.pairs.iter().filter(|p| held[index[p.src_volume_id.as_str()]] == want).cloned().collect(),
        root: m.root.clone(),
    };
    Ok((part(false), part(true)))
}

pub(crate) const ENC: usize = 0;
pub(crate) const CTS: usize = 1;
pub(crate) const MI: usize = 2;
pub(crate) const TIA: usize = 3;
pub(crate) const VNET: usize = 4;
const LATENT_NORM_FILE: &str = "latent_norm.json";
const NET_NAMES: [&str; 5] = ["encoder", "cts_proj", "mi_head", "tia_head", "vnet"];

/// Shared encoder, the three understanding heads, and the velocity network.
#[derive(Debug, Clone, PartialEq)]
pub struct SynergyModel {
    pub nets: [MlpNet; 5],
    /// Set from the training split when Stage II starts; identity before.
    pub latent_norm: LatentNorm,
}

impl SynergyModel {
    pub fn new(cfg: &TrainConfig, seed: u64) -> Self {
        let mk = |name: &str, dims: &[usize]| MlpNet::new(dims, &mut stream(seed, &["model", name]));
        Self {
            nets: [
                mk(NET_NAMES[ENC], &[INPUT_DIM, cfg.encoder_hidden, EMBED_DIM]),
                mk(NET_NAMES[CTS], &[EMBED_DIM + N_MODALITIES, EMBED_DIM]),
                mk(NET_NAMES[MI], &[EMBED_DIM, N_MODALITIES]),
                mk(NET_NAMES[TIA], &[2 * EMBED_DIM, N_ROUTES]),
                mk(NET_NAMES[VNET], &[VNET_IN, cfg.vnet_hidden, cfg.vnet_hidden, LATENT_DIM]),
            ],
            latent_norm: LatentNorm::identity(),
        }
    }

    pub fn encoder(&self) -> &MlpNet {
        &self.nets[ENC]
    }

    pub fn vnet(&self) -> &MlpNet {
        &self.nets[VNET]
    }

    pub fn vnet_mut(&mut self) -> &mut MlpNet {
        &mut self.nets[VNET]
    }

    /// The shared embedding: encoder output rescaled to unit RMS.
    pub fn embed(&self, input: &[f64]) -> Result<Vec<f64>, SynergyError> {
        Ok(encode(self, input)?.e)
    }

    pub fn params(&self) -> Vec<f64> {
        self.nets.iter().flat_map(|n| n.params()).collect()
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<(), SynergyError> {
        let mut at = 0;
        for n in &mut self.nets {
            let k = n.n_params();
            n.set_params(p.get(at..at + k).ok_or_else(|| SynergyError::Data("parameter vector too short".into()))?)?;
            at += k;
        }
        if at != p.len() {
            return Err(SynergyError::Data("parameter vector too long".into()));
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<(), SynergyError> {
        std::fs::create_dir_all(dir)?;
        for (n, name) in self.nets.iter().zip(NET_NAMES) {
            n.save(dir, name)?;
        }
        let json = serde_json::to_string_pretty(&self.latent_norm).expect("latent norm serializes");
        std::fs::write(dir.join(LATENT_NORM_FILE), json + "\n")?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, SynergyError> {
        let load = |i: usize| MlpNet::load(dir, NET_NAMES[i]);
        let nets = [load(ENC)?, load(CTS)?, load(MI)?, load(TIA)?, load(VNET)?];
        if nets[ENC].input_dim() != INPUT_DIM || nets[VNET].output_dim() != LATENT_DIM || nets[VNET].input_dim() != VNET_IN {
            return Err(SynergyError::Data("checkpoint topology does not match the synergy model".into()));
        }
        let path = dir.join(LATENT_NORM_FILE);
        let latent_norm: LatentNorm = serde_json::from_str(&std::fs::read_to_string(&path)?)
            .map_err(|e| SynergyError::Data(format!("{}: {e}", path.display())))?;
        latent_norm.validate()?;
        Ok(Self { nets, latent_norm })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynergyGrads {
    pub nets: [Grads; 5],
}

impl SynergyGrads {
    pub fn zeros_like(m: &SynergyModel) -> Self {
        Self { nets: std::array::from_fn(|i| Grads::zeros_like(&m.nets[i])) }
    }

    pub fn zero(&mut self) {
        self.nets.iter_mut().for_each(Grads::zero);
    }

    pub fn flat(&self) -> Vec<f64> {
        self.nets.iter().flat_map(|g| g.flat()).collect()
    }
}

#[derive(Debug, Clone)]
pub(crate) struct SynergyAdam {
    states: [AdamState; 5],
}

impl SynergyAdam {
    pub(crate) fn new(m: &SynergyModel, lr: f64) -> Self {
        let cfg = AdamConfig { lr, ..AdamConfig::default() };
        Self { states: std::array::from_fn(|i| AdamState::new(&m.nets[i], cfg)) }
    }

    pub(crate) fn set_lr(&mut self, lr: f64) {
        self.states.iter_mut().for_each(|s| s.cfg.lr = lr);
    }

    pub(crate) fn step(&mut self, m: &mut SynergyModel, g: &SynergyGrads, which: &[usize]) -> Result<(), SynergyError> {
        for &i in which {
            self.states[i].step(&mut m.nets[i], &g.nets[i])?;
        }
        Ok(())
    }
}

const NORM_FLOOR: f64 = 1e-12;

/// Encoder forward pass plus the unit-RMS rescaling of its output.
pub(crate) struct Embedding {
    pub(crate) cache: ForwardCache,
    pub(crate) e: Vec<f64>,
    norm: f64,
}

pub(crate) fn encode(model: &SynergyModel, input: &[f64]) -> Result<Embedding, SynergyError> {
    let cache = model.nets[ENC].forward(input)?;
    let raw = cache.output();
    let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt().max(NORM_FLOOR);
    let s = (EMBED_DIM as f64).sqrt() / norm;
    let e = raw.iter().map(|v| v * s).collect();
    Ok(Embedding { cache, e, norm })
}

/// Backpropagates `d_e` through the rescaling and the encoder.
pub(crate) fn encode_backward(model: &SynergyModel, emb: &Embedding, d_e: &[f64], grads: &mut SynergyGrads) -> Result<(), SynergyError> {
    let scale = (EMBED_DIM as f64).sqrt();
    let along: f64 = d_e.iter().zip(&emb.e).map(|(d, e)| d * e).sum::<f64>() / EMBED_DIM as f64;
    let d_raw: Vec<f64> = d_e.iter().zip(&emb.e).map(|(d, e)| scale * (d - along * e) / emb.norm).collect();
    model.nets[ENC].backward(&emb.cache, &d_raw, &mut grads.nets[ENC])?;
    Ok(())
}

/// Learning rate for `epoch` of `epochs` on a half-cosine from `lr` to `lr_min`.
pub(crate) fn cosine_lr(lr: f64, lr_min: f64, epoch: usize, epochs: usize) -> f64 {
    if epochs <= 1 {
        return lr;
    }
    let f = epoch as f64 / (epochs - 1) as f64;
    lr_min + 0.5 * (lr - lr_min) * (1.0 + (std::f64::consts::PI * f).cos())
}

pub(crate) fn modality_onehot(md: Modality) -> [f64; N_MODALITIES] {
    let mut v = [0.0; N_MODALITIES];
    v[md.index()] = 1.0;
    v
}

pub(crate) fn route_onehot(r: &Route) -> [f64; N_ROUTES] {
    let mut v = [0.0; N_ROUTES];
    v[r.catalog_index()] = 1.0;
    v
}

/// Pairs grouped by route, in catalog order.
pub(crate) fn pairs_by_route(m: &CorpusManifest) -> Result<Vec<(Route, Vec<crate::ingest::VolumePair>)>, SynergyError> {
    let grouped = m.pairs_by_route()?;
    Ok(route_catalog().iter().filter_map(|r| grouped.get(r).map(|p| (*r, p.clone()))).collect())
}
