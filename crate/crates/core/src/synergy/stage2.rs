//! Stage II: conditional flow matching in the 8x8 latent space.

use super::{
    decode_latent, encode, encode_backward, encoder_input, Embedding, pairs_by_route, route_onehot, SliceBank, SynergyAdam, SynergyCorpus, SynergyError,
    SynergyGrads, SynergyModel, TrainConfig, EMBED_DIM, ENC, LATENT_DIM, VNET, VNET_IN,
};
use crate::domain::{stream, Image2D, RngStream, Route};
use crate::flowcore::{fm_loss, sample, FlowError, Tensor};
use crate::ingest::CorpusManifest;
use crate::metrics::{mae, psnr, ssim, RouteMetricsReport, SliceMetrics};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

/// One flow-matching training example.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage2Sample {
    /// Bank id of the source slice.
    pub src: usize,
    /// Bank id of the target slice (its latent is `z0`).
    pub tgt: usize,
    pub route: Route,
    pub z1: Vec<f64>,
    pub t: f64,
}

fn vnet_input(z_t: &[f64], cond: &[f64], route: &Route, t: f64) -> Vec<f64> {
    let mut x = Vec::with_capacity(VNET_IN);
    x.extend_from_slice(z_t);
    x.extend_from_slice(cond);
    x.extend(route_onehot(route));
    x.extend([t, (TAU * t).sin(), (TAU * t).cos()]);
    x
}

fn condition(model: &SynergyModel, input: &[f64], zero_cond: bool) -> Result<Option<Embedding>, SynergyError> {
    Ok(if zero_cond { None } else { Some(encode(model, input)?) })
}

/// Mean of the per-sample `fm_loss` over the batch. When `grads` is given,
/// gradients flow into the velocity net and, unless `zero_cond`, the encoder.
pub fn stage2_batch_loss(
    model: &SynergyModel,
    bank: &SliceBank,
    batch: &[Stage2Sample],
    zero_cond: bool,
    mut grads: Option<&mut SynergyGrads>,
) -> Result<f64, SynergyError> {
    if batch.is_empty() {
        return Err(SynergyError::Data("empty stage II batch".into()));
    }
    let zeros = [0.0; EMBED_DIM];
    let mut total = 0.0;
    for s in batch {
        let z0 = Tensor::vector(model.latent_norm.forward(bank.latent(s.tgt)));
        let z1 = Tensor::vector(s.z1.clone());
        let z_t = crate::flowcore::interpolate(&z0, &z1, s.t)?;
        let enc = condition(model, bank.input(s.src), zero_cond)?;
        let cond = enc.as_ref().map_or(&zeros[..], |c| c.e.as_slice());
        let cache = model.nets[VNET].forward(&vnet_input(z_t.data(), cond, &s.route, s.t))?;
        let v = Tensor::vector(cache.output().to_vec());
        total += fm_loss(&v, &z0, &z1)? / batch.len() as f64;
        if let Some(g) = grads.as_deref_mut() {
            let scale = 2.0 / (LATENT_DIM * batch.len()) as f64;
            let d_out: Vec<f64> =
                v.data().iter().zip(z0.data().iter().zip(&s.z1)).map(|(vi, (a, b))| scale * (vi - (b - a))).collect();
            let d_in = model.nets[VNET].backward(&cache, &d_out, &mut g.nets[VNET])?;
            if let Some(c) = &enc {
                encode_backward(model, c, &d_in[LATENT_DIM..LATENT_DIM + EMBED_DIM], g)?;
            }
        }
    }
    Ok(total)
}

/// `per_route` samples for every route present in `m`, drawn from `rng` in
/// catalog order.
fn draw_samples(m: &CorpusManifest, bank: &SliceBank, per_route: usize, rng: &mut RngStream) -> Result<Vec<Stage2Sample>, SynergyError> {
    let mut out = Vec::new();
    for (route, pairs) in pairs_by_route(m)? {
        for _ in 0..per_route {
            let pair = &pairs[rng.below(pairs.len())];
            let k = rng.below(pair.n_slices());
            let id = |vid: &str| bank.id(vid, k).ok_or_else(|| SynergyError::Data(format!("slice {vid}#{k} not in bank")));
            let (src, tgt) = (id(&pair.src.volume_id)?, id(&pair.tgt.volume_id)?);
            let z1 = rng.normals(LATENT_DIM);
            let t = rng.next_f64_open_closed();
            out.push(Stage2Sample { src, tgt, route, z1, t });
        }
    }
    Ok(out)
}

/// Fixed route-balanced batch from the held-out split.
pub fn stage2_validation_batch(corpus: &SynergyCorpus, cfg: &TrainConfig) -> Result<Vec<Stage2Sample>, SynergyError> {
    let per_route = (cfg.stage2.samples_per_route / 4).max(1);
    draw_samples(&corpus.held_out, &corpus.bank, per_route, &mut stream(cfg.seed, &["stage2", "validation"]))
}

#[derive(Debug, Clone)]
pub struct Stage2Outcome {
    pub model: SynergyModel,
    /// Mean batch loss per epoch.
    pub curve: Vec<f64>,
    /// Validation loss before training, then after each epoch.
    pub val_curve: Vec<f64>,
}

impl Stage2Outcome {
    pub fn initial_val_loss(&self) -> f64 {
        self.val_curve[0]
    }

    pub fn final_val_loss(&self) -> f64 {
        *self.val_curve.last().expect("validation curve is never empty")
    }
}

pub fn train_stage2(corpus: &SynergyCorpus, mut model: SynergyModel, cfg: &TrainConfig) -> Result<Stage2Outcome, SynergyError> {
    cfg.validate()?;
    model.latent_norm = corpus.latent_norm();
    let s2 = &cfg.stage2;
    if pairs_by_route(&corpus.train)?.is_empty() {
        return Err(SynergyError::Data("training split has no pairs".into()));
    }
    let val = stage2_validation_batch(corpus, cfg)?;
    let mut val_curve = vec![stage2_batch_loss(&model, &corpus.bank, &val, s2.zero_cond, None)?];
    let trained: &[usize] = if s2.freeze_encoder || s2.zero_cond { &[VNET] } else { &[VNET, ENC] };
    let mut adam = SynergyAdam::new(&model, s2.lr);
    let mut grads = SynergyGrads::zeros_like(&model);
    let mut curve = Vec::with_capacity(s2.epochs);
    for epoch in 0..s2.epochs {
        adam.set_lr(super::cosine_lr(s2.lr, s2.lr_min, epoch, s2.epochs));
        let mut rng = stream(cfg.seed, &["stage2", "epoch", &epoch.to_string()]);
        let mut samples = draw_samples(&corpus.train, &corpus.bank, s2.samples_per_route, &mut rng)?;
        rng.shuffle(&mut samples);
        let mut sum = 0.0;
        let mut batches = 0;
        for batch in samples.chunks(s2.batch_size) {
            grads.zero();
            sum += stage2_batch_loss(&model, &corpus.bank, batch, s2.zero_cond, Some(&mut grads))?;
            batches += 1;
            adam.step(&mut model, &grads, trained)?;
        }
        let mean = sum / batches as f64;
        if !mean.is_finite() {
            return Err(FlowError::NonFinite { step: epoch }.into());
        }
        curve.push(mean);
        val_curve.push(stage2_batch_loss(&model, &corpus.bank, &val, s2.zero_cond, None)?);
    }
    Ok(Stage2Outcome { model, curve, val_curve })
}

/// Integrates the learned field from `z_start` (at t = 1) down to
/// `cfg.sampler.t_end`; the result is not clamped.
pub fn synthesize_latent(
    model: &SynergyModel,
    src_input: &[f64],
    route: &Route,
    z_start: &[f64],
    cfg: &TrainConfig,
    zero_cond: bool,
) -> Result<Vec<f64>, SynergyError> {
    let cond = if zero_cond { vec![0.0; EMBED_DIM] } else { model.embed(src_input)? };
    let vnet = model.vnet();
    let v_fn = |z: &Tensor, t: f64| {
        vnet.predict(&vnet_input(z.data(), &cond, route, t)).map(Tensor::vector).map_err(|e| FlowError::Tensor(e.to_string()))
    };
    let sp = &cfg.sampler;
    Ok(sample(v_fn, &Tensor::vector(z_start.to_vec()), sp.steps, sp.t_end, sp.method)?.into_data()).map(|z| model.latent_norm.inverse(&z))
}

/// Synthesizes a target-modality slice for `src` with the start noise drawn
/// from `(seed, "synthesize", route)`. The output has the size of `src`.
pub fn synthesize(model: &SynergyModel, src: &Image2D, route: &Route, cfg: &TrainConfig, seed: u64) -> Result<Image2D, SynergyError> {
    super::check_slice_dims(src.width(), src.height())?;
    let z_start = stream(seed, &["synthesize", &route.route_id()]).normals(LATENT_DIM);
    let z = synthesize_latent(model, &encoder_input(src), route, &z_start, cfg, false)?;
    Ok(decode_latent(&z, src.width()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisEval {
    /// One report per held-out route, in catalog order.
    pub routes: Vec<RouteMetricsReport>,
    /// All evaluated slices pooled (`route_id` is "all").
    pub overall: RouteMetricsReport,
}

/// Synthesizes every `cfg.eval.slice_stride`-th slice of each held-out pair
/// and compares against the target latent: SSIM after upsampling both to the
/// slice size, MAE and PSNR on the 8x8 latents.
pub fn evaluate_synthesis(
    model: &SynergyModel,
    corpus: &SynergyCorpus,
    cfg: &TrainConfig,
    zero_cond: bool,
) -> Result<SynthesisEval, SynergyError> {
    let side = corpus.bank.side();
    let mut jobs = Vec::new();
    for (route, pairs) in pairs_by_route(&corpus.held_out)? {
        for pair in &pairs {
            for k in (0..pair.n_slices()).step_by(cfg.eval.slice_stride) {
                jobs.push((route, pair.pair_id.clone(), pair.src.volume_id.clone(), pair.tgt.volume_id.clone(), k));
            }
        }
    }
    if jobs.is_empty() {
        return Err(SynergyError::Data("held-out split has no pairs to evaluate".into()));
    }
    let bank = &corpus.bank;
    let per_slice: Vec<(Route, SliceMetrics)> = jobs
        .par_iter()
        .map(|(route, pair_id, src_vid, tgt_vid, k)| {
            let missing = || SynergyError::Data(format!("{pair_id}: slice {k} not in bank"));
            let (src, tgt) = (bank.id(src_vid, *k).ok_or_else(missing)?, bank.id(tgt_vid, *k).ok_or_else(missing)?);
            let z_start = stream(cfg.seed, &["eval", pair_id, &k.to_string()]).normals(LATENT_DIM);
            let z = synthesize_latent(model, bank.input(src), route, &z_start, cfg, zero_cond)?;
            let pred = Image2D::from_clamped(super::LATENT_SIDE, super::LATENT_SIDE, z).map_err(|e| SynergyError::Data(e.to_string()))?;
            let gt = Image2D::new(super::LATENT_SIDE, super::LATENT_SIDE, bank.latent(tgt).to_vec())
                .map_err(|e| SynergyError::Data(e.to_string()))?;
            let m = SliceMetrics {
                ssim: ssim(&pred.bilinear_resize(side, side), &gt.bilinear_resize(side, side), &cfg.eval.ssim)?,
                psnr: psnr(&pred, &gt)?,
                mae: mae(&pred, &gt)?,
            };
            Ok((*route, m))
        })
        .collect::<Result<_, SynergyError>>()?;
    let mut routes = Vec::new();
    let mut at = 0;
    while at < per_slice.len() {
        let route = per_slice[at].0;
        let end = at + per_slice[at..].iter().take_while(|(r, _)| *r == route).count();
        let ms: Vec<SliceMetrics> = per_slice[at..end].iter().map(|(_, m)| *m).collect();
        routes.push(RouteMetricsReport::from_slices(&route.route_id(), &ms));
        at = end;
    }
    let all: Vec<SliceMetrics> = per_slice.iter().map(|(_, m)| *m).collect();
    Ok(SynthesisEval { routes, overall: RouteMetricsReport::from_slices("all", &all) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synergy::ToyCorpusConfig;

    fn tiny() -> (SynergyCorpus, TrainConfig) {
        let toy = ToyCorpusConfig { n_volumes: 8, slices_per_volume: 6, ..ToyCorpusConfig::default() };
        let cfg = TrainConfig { encoder_hidden: 8, vnet_hidden: 8, holdout_every: 2, ..TrainConfig::default() };
        (SynergyCorpus::from_toy(&toy, 2).unwrap(), cfg)
    }

    #[test]
    fn draws_are_route_balanced_and_t_positive() {
        let (corpus, _) = tiny();
        let s = draw_samples(&corpus.train, &corpus.bank, 5, &mut stream(1, &["t"])).unwrap();
        assert_eq!(s.len(), 5 * pairs_by_route(&corpus.train).unwrap().len());
        assert!(s.iter().all(|x| x.t > 0.0 && x.t <= 1.0 && x.z1.len() == LATENT_DIM));
    }

    #[test]
    fn zero_field_keeps_start_point() {
        let (corpus, cfg) = tiny();
        let mut model = SynergyModel::new(&cfg, 1);
        let n = model.vnet().n_params();
        model.vnet_mut().set_params(&vec![0.0; n]).unwrap();
        let z0: Vec<f64> = (0..LATENT_DIM).map(|i| i as f64 / 100.0).collect();
        let route = pairs_by_route(&corpus.train).unwrap()[0].0;
        let z = synthesize_latent(&model, corpus.bank.input(0), &route, &z0, &cfg, false).unwrap();
        assert_eq!(z, z0);
    }

    #[test]
    fn synthesize_is_seeded() {
        let (corpus, cfg) = tiny();
        let model = SynergyModel::new(&cfg, 2);
        let src = decode_latent(corpus.bank.latent(0), 32);
        let route = pairs_by_route(&corpus.train).unwrap()[0].0;
        let a = synthesize(&model, &src, &route, &cfg, 9).unwrap();
        assert_eq!(a, synthesize(&model, &src, &route, &cfg, 9).unwrap());
        assert_ne!(a, synthesize(&model, &src, &route, &cfg, 10).unwrap());
        assert_eq!(a.dims(), src.dims());
    }

    #[test]
    fn odd_slices_rejected() {
        let (_, cfg) = tiny();
        let model = SynergyModel::new(&cfg, 2);
        let src = Image2D::new(24, 32, vec![0.5; 24 * 32]).unwrap();
        let route = crate::domain::route_catalog()[0];
        assert!(matches!(synthesize(&model, &src, &route, &cfg, 0), Err(SynergyError::Config(_))));
    }
}
