//! Stage I: joint CTS + MI + TIA training of the shared encoder.
//!
//! Each task is a softmax over the instance's own options. CTS scores
//! candidates by the dot product of a query (source embedding plus requested
//! target modality, linearly projected) with each candidate's embedding; MI
//! and TIA read linear heads restricted to the offered labels.

use super::{
    encode, encode_backward, modality_onehot, Embedding, SliceBank, SynergyAdam, SynergyCorpus, SynergyError, SynergyGrads,
    SynergyModel, TrainConfig, CTS, EMBED_DIM, ENC, MI, N_MODALITIES, N_ROUTES, TIA,
};
use crate::domain::{stream, Modality, Route, Task, UnderstandingInstance};
use crate::forge::{forge_corpus, ForgeConfig};
use crate::ingest::CorpusManifest;
use crate::prompts::RouteDescriptionPools;
use crate::toynet::{softmax_xent, ForwardCache};

use serde::{Deserialize, Serialize};

/// A forged instance resolved against a [`SliceBank`].
#[derive(Debug, Clone, PartialEq)]
pub struct Stage1Item {
    pub task: Task,
    /// CTS: source then candidates; MI: the slice; TIA: source and target.
    pub refs: Vec<usize>,
    pub answer: usize,
    /// MI: modality index per option; TIA: route catalog index per option.
    pub labels: Vec<usize>,
    pub tgt_modality: Option<Modality>,
}

pub fn resolve_instances(
    instances: &[UnderstandingInstance],
    bank: &SliceBank,
    pools: &RouteDescriptionPools,
) -> Result<Vec<Stage1Item>, SynergyError> {
    instances
        .iter()
        .map(|inst| {
            let refs = inst.image_refs.iter().map(|r| bank.resolve(r)).collect::<Result<Vec<_>, _>>()?;
            let unknown = |what: &str| SynergyError::Data(format!("{}: unknown {what}", inst.instance_id));
            let (labels, tgt_modality) = match inst.task {
                Task::Cts => {
                    let route: Route = inst.meta.route_id.as_deref().ok_or_else(|| unknown("route"))?.parse().map_err(|_| unknown("route"))?;
                    (Vec::new(), Some(route.tgt))
                }
                Task::Mi => {
                    let labels = inst
                        .options
                        .iter()
                        .map(|o| Modality::ALL.iter().find(|m| m.display_name() == o).map(|m| m.index()).ok_or_else(|| unknown("modality label")))
                        .collect::<Result<_, _>>()?;
                    (labels, None)
                }
                Task::Tia => {
                    let labels = inst
                        .options
                        .iter()
                        .map(|o| pools.route_of(o).map(|r| r.catalog_index()).ok_or_else(|| unknown("route description")))
                        .collect::<Result<_, _>>()?;
                    (labels, None)
                }
            };
            Ok(Stage1Item { task: inst.task, refs, answer: inst.answer_index, labels, tgt_modality })
        })
        .collect()
}

fn cts_scale() -> f64 {
    1.0 / (EMBED_DIM as f64).sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Option logits for one item plus whatever the backward pass needs.
struct ItemForward {
    enc: Vec<Embedding>,
    head: ForwardCache,
    logits: Vec<f64>,
}

fn forward_item(model: &SynergyModel, bank: &SliceBank, item: &Stage1Item) -> Result<ItemForward, SynergyError> {
    let enc = item.refs.iter().map(|&id| encode(model, bank.input(id))).collect::<Result<Vec<_>, _>>()?;
    let emb = |i: usize| enc[i].e.as_slice();
    let (head, logits) = match item.task {
        Task::Cts => {
            let mut q_in = emb(0).to_vec();
            q_in.extend(modality_onehot(item.tgt_modality.expect("CTS items carry a target modality")));
            let head = model.nets[CTS].forward(&q_in)?;
            let logits = (1..enc.len()).map(|j| cts_scale() * dot(head.output(), emb(j))).collect();
            (head, logits)
        }
        Task::Mi => {
            let head = model.nets[MI].forward(emb(0))?;
            let logits = item.labels.iter().map(|&l| head.output()[l]).collect();
            (head, logits)
        }
        Task::Tia => {
            let mut cat = emb(0).to_vec();
            cat.extend_from_slice(emb(1));
            let head = model.nets[TIA].forward(&cat)?;
            let logits = item.labels.iter().map(|&l| head.output()[l]).collect();
            (head, logits)
        }
    };
    Ok(ItemForward { enc, head, logits })
}

fn backward_item(
    model: &SynergyModel,
    item: &Stage1Item,
    f: &ItemForward,
    d_logits: &[f64],
    grads: &mut SynergyGrads,
) -> Result<(), SynergyError> {
    let mut d_emb = vec![vec![0.0; EMBED_DIM]; f.enc.len()];
    match item.task {
        Task::Cts => {
            let q = f.head.output();
            let mut dq = vec![0.0; EMBED_DIM];
            for (j, &dl) in d_logits.iter().enumerate() {
                let e = &f.enc[j + 1].e;
                for i in 0..EMBED_DIM {
                    dq[i] += dl * cts_scale() * e[i];
                    d_emb[j + 1][i] += dl * cts_scale() * q[i];
                }
            }
            let d_in = model.nets[CTS].backward(&f.head, &dq, &mut grads.nets[CTS])?;
            d_emb[0].iter_mut().zip(&d_in[..EMBED_DIM]).for_each(|(a, b)| *a += b);
        }
        Task::Mi => {
            let mut d_out = vec![0.0; N_MODALITIES];
            for (&l, &dl) in item.labels.iter().zip(d_logits) {
                d_out[l] += dl;
            }
            let d_in = model.nets[MI].backward(&f.head, &d_out, &mut grads.nets[MI])?;
            d_emb[0].iter_mut().zip(&d_in).for_each(|(a, b)| *a += b);
        }
        Task::Tia => {
            let mut d_out = vec![0.0; N_ROUTES];
            for (&l, &dl) in item.labels.iter().zip(d_logits) {
                d_out[l] += dl;
            }
            let d_in = model.nets[TIA].backward(&f.head, &d_out, &mut grads.nets[TIA])?;
            d_emb[0].iter_mut().zip(&d_in[..EMBED_DIM]).for_each(|(a, b)| *a += b);
            d_emb[1].iter_mut().zip(&d_in[EMBED_DIM..]).for_each(|(a, b)| *a += b);
        }
    }
    for (emb, d) in f.enc.iter().zip(&d_emb) {
        encode_backward(model, emb, d, grads)?;
    }
    Ok(())
}

/// `L_CTS + L_MI + L_TIA` over a batch, each term the mean cross-entropy of
/// that task's items (absent tasks contribute 0). Gradients are accumulated
/// into `grads` when given.
pub fn stage1_batch_loss(
    model: &SynergyModel,
    bank: &SliceBank,
    items: &[&Stage1Item],
    mut grads: Option<&mut SynergyGrads>,
) -> Result<f64, SynergyError> {
    let count = |t: Task| items.iter().filter(|i| i.task == t).count();
    let counts = [count(Task::Cts), count(Task::Mi), count(Task::Tia)];
    let weight = |t: Task| 1.0 / counts[Task::ALL.iter().position(|x| *x == t).unwrap()] as f64;
    let mut total = 0.0;
    for item in items {
        let f = forward_item(model, bank, item)?;
        let (loss, mut d) = softmax_xent(&f.logits, item.answer)?;
        let w = weight(item.task);
        total += w * loss;
        if let Some(g) = grads.as_deref_mut() {
            d.iter_mut().for_each(|v| *v *= w);
            backward_item(model, item, &f, &d, g)?;
        }
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct GauAccuracy {
    pub cts: f64,
    pub mi: f64,
    pub tia: f64,
    pub n_cts: usize,
    pub n_mi: usize,
    pub n_tia: usize,
}

impl GauAccuracy {
    pub fn get(&self, t: Task) -> f64 {
        match t {
            Task::Cts => self.cts,
            Task::Mi => self.mi,
            Task::Tia => self.tia,
        }
    }
}

/// Arg-max accuracy per task (first maximum wins ties).
pub fn evaluate_gau(model: &SynergyModel, bank: &SliceBank, items: &[Stage1Item]) -> Result<GauAccuracy, SynergyError> {
    let mut hits = [0usize; 3];
    let mut n = [0usize; 3];
    for item in items {
        let f = forward_item(model, bank, item)?;
        let best = f.logits.iter().enumerate().fold(0, |b, (i, v)| if *v > f.logits[b] { i } else { b });
        let t = Task::ALL.iter().position(|x| *x == item.task).unwrap();
        n[t] += 1;
        hits[t] += usize::from(best == item.answer);
    }
    let acc = |t: usize| if n[t] == 0 { 0.0 } else { hits[t] as f64 / n[t] as f64 };
    Ok(GauAccuracy { cts: acc(0), mi: acc(1), tia: acc(2), n_cts: n[0], n_mi: n[1], n_tia: n[2] })
}

pub(crate) fn forge_items(
    manifest: &CorpusManifest,
    bank: &SliceBank,
    pools: &RouteDescriptionPools,
    cfg: &ForgeConfig,
) -> Result<Vec<Stage1Item>, SynergyError> {
    let forged = forge_corpus(manifest, pools, cfg)?;
    let all: Vec<UnderstandingInstance> = forged.all().cloned().collect();
    resolve_instances(&all, bank, pools)
}

/// Held-out items for accuracy reporting.
pub(crate) fn held_out_items(corpus: &SynergyCorpus, forge_cfg: &ForgeConfig, cfg: &TrainConfig) -> Result<Vec<Stage1Item>, SynergyError> {
    let eval_cfg = ForgeConfig { instances_per_pair: cfg.stage1.eval_instances_per_pair, ..forge_cfg.clone() };
    forge_items(&corpus.held_out, &corpus.bank, &RouteDescriptionPools::default(), &eval_cfg)
}

#[derive(Debug, Clone)]
pub struct Stage1Outcome {
    pub model: SynergyModel,
    /// Mean batch loss per epoch.
    pub curve: Vec<f64>,
    pub held_out: GauAccuracy,
}

/// Forges training instances from the training split and fits the encoder
/// and the three heads for `cfg.stage1.epochs` epochs.
pub fn train_stage1(
    corpus: &SynergyCorpus,
    forge_cfg: &ForgeConfig,
    mut model: SynergyModel,
    cfg: &TrainConfig,
) -> Result<Stage1Outcome, SynergyError> {
    cfg.validate()?;
    let pools = RouteDescriptionPools::default();
    let items = forge_items(&corpus.train, &corpus.bank, &pools, forge_cfg)?;
    if items.is_empty() {
        return Err(SynergyError::Data("training split forged no instances".into()));
    }
    let mut adam = SynergyAdam::new(&model, cfg.stage1.lr);
    let mut grads = SynergyGrads::zeros_like(&model);
    let mut order: Vec<usize> = (0..items.len()).collect();
    let mut curve = Vec::with_capacity(cfg.stage1.epochs);
    for epoch in 0..cfg.stage1.epochs {
        adam.set_lr(super::cosine_lr(cfg.stage1.lr, cfg.stage1.lr_min, epoch, cfg.stage1.epochs));
        stream(cfg.seed, &["stage1", "epoch", &epoch.to_string()]).shuffle(&mut order);
        let mut sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.stage1.batch_size) {
            let batch: Vec<&Stage1Item> = chunk.iter().map(|&i| &items[i]).collect();
            grads.zero();
            sum += stage1_batch_loss(&model, &corpus.bank, &batch, Some(&mut grads))?;
            batches += 1;
            adam.step(&mut model, &grads, &[ENC, CTS, MI, TIA])?;
        }
        let mean = sum / batches as f64;
        if !mean.is_finite() {
            return Err(crate::flowcore::FlowError::NonFinite { step: epoch }.into());
        }
        curve.push(mean);
    }
    let held_out = evaluate_gau(&model, &corpus.bank, &held_out_items(corpus, forge_cfg, cfg)?)?;
    Ok(Stage1Outcome { model, curve, held_out })
}
