//! Builds the three generation-aligned understanding tasks from paired volumes.
//!
//! - CTS: given a source slice and a requested target modality, pick the paired
//!   target slice among hard negatives drawn from neighbouring target slices.
//! - MI: name the modality of a single slice, with confusable distractors.
//! - TIA: pick the description of the observed route among descriptions of
//!   other routes, always including the swapped direction when it exists.
//!
//! Every instance is produced by an independent work unit with its own
//! derived [`RngStream`]; outputs are sorted by `instance_id`, so the result
//! does not depend on thread count or iteration order.

use crate::domain::{
    option_letter, slice_ref, DatasetTag, InstanceMeta, Modality, RngStream, Route, Task,
    UnderstandingInstance, MAX_OPTIONS,
};
use crate::ingest::{CorpusManifest, IngestError, VolumePair, VolumeRef};
use crate::prompts::{self, RouteDescriptionPools, TEMPLATE_VERSION};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ForgeError {
    #[error("pair {pair_id}, anchor {k}: window holds {available} candidates, need {needed}")]
    WindowTooSmall { pair_id: String, k: usize, available: usize, needed: usize },
    #[error("corpus has no volumes")]
    NoVolumes,
    #[error("cannot draw enough distractors: {0}")]
    DistractorExhausted(String),
    #[error("no description pool for route {0}")]
    PoolMissing(String),
    #[error("invalid forge config: {0}")]
    Config(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad instance line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BalanceBy {
    Route,
    Dataset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceCounts {
    pub cts: usize,
    pub mi: usize,
    pub tia: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForgeConfig {
    pub seed: u64,
    /// Half-width of the CTS hard-negative window.
    pub k_window: usize,
    pub cts_options: usize,
    pub tia_options: usize,
    pub mi_options: usize,
    pub mi_confusable_weight: f64,
    /// CTS/TIA counts are per pair, MI per volume, before balancing.
    pub instances_per_pair: InstanceCounts,
    pub balance_by: BalanceBy,
}

impl Default for ForgeConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            k_window: 5,
            cts_options: 4,
            tia_options: 4,
            mi_options: 4,
            mi_confusable_weight: 0.5,
            instances_per_pair: InstanceCounts { cts: 32, mi: 16, tia: 8 },
            balance_by: BalanceBy::Route,
        }
    }
}

impl ForgeConfig {
    pub fn validate(&self) -> Result<(), ForgeError> {
        let bad = |m: &str| Err(ForgeError::Config(m.to_owned()));
        if self.k_window < 1 {
            return bad("k_window must be >= 1");
        }
        for (name, n) in [("cts_options", self.cts_options), ("tia_options", self.tia_options), ("mi_options", self.mi_options)] {
            if !(2..=MAX_OPTIONS).contains(&n) {
                return Err(ForgeError::Config(format!("{name} must be in 2..={MAX_OPTIONS}, got {n}")));
            }
        }
        if !(0.0..=1.0).contains(&self.mi_confusable_weight) {
            return bad("mi_confusable_weight must be in [0, 1]");
        }
        Ok(())
    }

    /// Root stream for all forging work units.
    pub fn root_stream(&self) -> RngStream {
        RngStream::new(self.seed, &["forge"])
    }
}

fn instance_id(task: Task, owner: &str, k: usize, seq: usize) -> String {
    format!("{}/{owner}/{k:05}/{seq:04}", task.id())
}

fn lettered(answer_index: usize) -> String {
    option_letter(answer_index).expect("option count validated").to_string()
}

/// Target-slice indices eligible as hard negatives for anchor `k`:
/// `{k + d : 1 <= |d| <= K} ∩ [0, S)`, ascending.
pub fn cts_window(k: usize, k_window: usize, n_slices: usize) -> Vec<usize> {
    let lo = k.saturating_sub(k_window);
    let hi = (k + k_window).min(n_slices.saturating_sub(1));
    (lo..=hi).filter(|&j| j != k).collect()
}

/// Anchors whose clipped window can supply `cts_options - 1` negatives.
pub fn cts_feasible_anchors(n_slices: usize, cfg: &ForgeConfig) -> Vec<usize> {
    (0..n_slices).filter(|&k| cts_window(k, cfg.k_window, n_slices).len() + 1 >= cfg.cts_options).collect()
}

/// Draws `count` anchors from `candidates`, cycling through fresh
/// permutations so no anchor repeats before all have been used.
fn draw_anchors(candidates: &[usize], count: usize, rng: &mut RngStream) -> Vec<usize> {
    let mut out = Vec::with_capacity(count);
    let mut perm = Vec::new();
    for i in 0..count {
        if i % candidates.len() == 0 {
            perm = candidates.to_vec();
            rng.shuffle(&mut perm);
        }
        out.push(perm[i % candidates.len()]);
    }
    out
}

/// One CTS instance for anchor slice `k` of `pair`.
pub fn forge_cts_anchor(
    pair: &VolumePair,
    k: usize,
    seq: usize,
    cfg: &ForgeConfig,
    root: &RngStream,
) -> Result<UnderstandingInstance, ForgeError> {
    let s = pair.n_slices();
    let window = if k < s { cts_window(k, cfg.k_window, s) } else { Vec::new() };
    let needed = cfg.cts_options - 1;
    if window.len() < needed {
        return Err(ForgeError::WindowTooSmall { pair_id: pair.pair_id.clone(), k, available: window.len(), needed });
    }
    let mut rng = root.derive(&["cts", pair.pair_id.as_str(), &k.to_string(), &seq.to_string()]);
    let mut picks = vec![k];
    picks.extend(rng.sample_without_replacement(&window, needed));
    rng.shuffle(&mut picks);
    let answer_index = picks.iter().position(|&j| j == k).expect("positive present");
    let options: Vec<String> = picks.iter().map(|&j| slice_ref(&pair.tgt.volume_id, j)).collect();
    let mut image_refs = vec![slice_ref(&pair.src.volume_id, k)];
    image_refs.extend(options.iter().cloned());
    Ok(UnderstandingInstance {
        instance_id: instance_id(Task::Cts, &pair.pair_id, k, seq),
        task: Task::Cts,
        prompt: prompts::cts_stem(&pair.route),
        image_refs,
        options,
        answer_index,
        answer_letter: lettered(answer_index),
        meta: InstanceMeta {
            route_id: Some(pair.route.route_id()),
            volume_id: pair.src.volume_id.clone(),
            slice_index: k,
            k_window: Some(cfg.k_window),
            distractor_route_ids: None,
            template_version: TEMPLATE_VERSION,
        },
    })
}

fn forge_cts_n(pair: &VolumePair, count: usize, cfg: &ForgeConfig, root: &RngStream) -> Result<Vec<UnderstandingInstance>, ForgeError> {
    let anchors = cts_anchor_plan(pair, count, cfg, root)?;
    anchors.into_iter().enumerate().map(|(seq, k)| forge_cts_anchor(pair, k, seq, cfg, root)).collect()
}

fn cts_anchor_plan(pair: &VolumePair, count: usize, cfg: &ForgeConfig, root: &RngStream) -> Result<Vec<usize>, ForgeError> {
    if count == 0 {
        return Ok(Vec::new());
    }
    let s = pair.n_slices();
    let feasible = cts_feasible_anchors(s, cfg);
    if feasible.is_empty() {
        // Report the anchor with the widest window; every other anchor is no better.
        let k = s / 2;
        return Err(ForgeError::WindowTooSmall {
            pair_id: pair.pair_id.clone(),
            k,
            available: cts_window(k, cfg.k_window, s).len(),
            needed: cfg.cts_options - 1,
        });
    }
    let mut rng = root.derive(&["cts-anchors", pair.pair_id.as_str()]);
    Ok(draw_anchors(&feasible, count, &mut rng))
}

/// `instances_per_pair.cts` CTS instances for one pair (no cross-pair balancing).
pub fn forge_cts(pair: &VolumePair, cfg: &ForgeConfig, rng: &RngStream) -> Result<Vec<UnderstandingInstance>, ForgeError> {
    cfg.validate()?;
    forge_cts_n(pair, cfg.instances_per_pair.cts, cfg, rng)
}

/// MI option label for a volume: sequence-level names for datasets that
/// distinguish MR sequences, coarse names otherwise.
pub fn mi_label(vref: &VolumeRef) -> &'static str {
    vref.modality.display_name()
}

fn confusable(a: Modality, b: Modality) -> bool {
    use Modality::*;
    match (a, b) {
        (Ct, Cbct) | (Cbct, Ct) => true,
        _ => a != b && a.is_mr() && b.is_mr() && a != Mr && b != Mr,
    }
}

/// Labels available to MI questions, split by granularity.
#[derive(Debug, Clone)]
struct MiUniverse {
    fine: Vec<Modality>,
    coarse: Vec<Modality>,
}

impl MiUniverse {
    fn of(manifest: &CorpusManifest) -> Self {
        let mut fine = std::collections::BTreeSet::new();
        let mut coarse = std::collections::BTreeSet::new();
        for v in &manifest.volumes {
            if v.dataset.fine_grained() {
                fine.insert(v.modality);
            } else {
                coarse.insert(v.modality);
            }
        }
        Self { fine: fine.into_iter().collect(), coarse: coarse.into_iter().collect() }
    }

    fn for_dataset(&self, d: DatasetTag) -> &[Modality] {
        if d.fine_grained() {
            &self.fine
        } else {
            &self.coarse
        }
    }
}

fn forge_mi_slice(
    vref: &VolumeRef,
    k: usize,
    seq: usize,
    universe: &MiUniverse,
    cfg: &ForgeConfig,
    root: &RngStream,
) -> Result<UnderstandingInstance, ForgeError> {
    let labels = universe.for_dataset(vref.dataset);
    if labels.len() < 2 {
        return Err(ForgeError::DistractorExhausted(format!(
            "volume {} is the only {} modality in the corpus",
            vref.volume_id,
            if vref.dataset.fine_grained() { "sequence-level" } else { "coarse" }
        )));
    }
    let n_opts = cfg.mi_options.min(labels.len());
    let truth = vref.modality;
    let mut rng = root.derive(&["mi", vref.volume_id.as_str(), &k.to_string(), &seq.to_string()]);
    let mut remaining: Vec<Modality> = labels.iter().copied().filter(|&m| m != truth).collect();
    let mut picks = vec![truth];
    for _ in 1..n_opts {
        let conf: Vec<usize> = (0..remaining.len()).filter(|&i| confusable(truth, remaining[i])).collect();
        let use_conf = rng.next_f64() < cfg.mi_confusable_weight && !conf.is_empty();
        let idx = if use_conf { conf[rng.below(conf.len())] } else { rng.below(remaining.len()) };
        picks.push(remaining.remove(idx));
    }
    rng.shuffle(&mut picks);
    let answer_index = picks.iter().position(|&m| m == truth).expect("truth present");
    Ok(UnderstandingInstance {
        instance_id: instance_id(Task::Mi, &vref.volume_id, k, seq),
        task: Task::Mi,
        prompt: prompts::mi_stem(),
        image_refs: vec![slice_ref(&vref.volume_id, k)],
        options: picks.iter().map(|m| m.display_name().to_owned()).collect(),
        answer_index,
        answer_letter: lettered(answer_index),
        meta: InstanceMeta {
            route_id: None,
            volume_id: vref.volume_id.clone(),
            slice_index: k,
            k_window: None,
            distractor_route_ids: None,
            template_version: TEMPLATE_VERSION,
        },
    })
}

fn mi_units(manifest: &CorpusManifest, cfg: &ForgeConfig, root: &RngStream) -> Vec<(usize, usize, usize)> {
    let quotas = mi_quotas(manifest, cfg);
    let mut units = Vec::new();
    for (vi, v) in manifest.volumes.iter().enumerate() {
        let q = quotas[vi];
        if q == 0 {
            continue;
        }
        let all: Vec<usize> = (0..v.len()).collect();
        let mut rng = root.derive(&["mi-slices", v.volume_id.as_str()]);
        for (seq, k) in draw_anchors(&all, q, &mut rng).into_iter().enumerate() {
            units.push((vi, k, seq));
        }
    }
    units
}

/// MI instances for every volume of the corpus.
pub fn forge_mi(manifest: &CorpusManifest, cfg: &ForgeConfig, rng: &RngStream) -> Result<Vec<UnderstandingInstance>, ForgeError> {
    cfg.validate()?;
    if manifest.volumes.is_empty() {
        return Err(ForgeError::NoVolumes);
    }
    let universe = MiUniverse::of(manifest);
    let units = mi_units(manifest, cfg, rng);
    let mut out: Vec<UnderstandingInstance> = units
        .par_iter()
        .map(|&(vi, k, seq)| forge_mi_slice(&manifest.volumes[vi], k, seq, &universe, cfg, rng))
        .collect::<Result<_, _>>()?;
    sort_instances(&mut out);
    Ok(out)
}

fn forge_tia_anchor(
    pair: &VolumePair,
    k: usize,
    seq: usize,
    pools: &RouteDescriptionPools,
    cfg: &ForgeConfig,
    root: &RngStream,
) -> Result<UnderstandingInstance, ForgeError> {
    let route = pair.route;
    let own = pools.get(&route).ok_or_else(|| ForgeError::PoolMissing(route.route_id()))?;
    let reversed = route.reversed();
    let swapped_pool = pools.get(&reversed);
    let others: Vec<Route> = pools.routes().copied().filter(|r| *r != route && *r != reversed).collect();
    let needed = cfg.tia_options - 1;
    let from_swap = usize::from(swapped_pool.is_some());
    if from_swap + others.len() < needed {
        return Err(ForgeError::DistractorExhausted(format!(
            "route {} needs {needed} distractor routes, pools offer {}",
            route.route_id(),
            from_swap + others.len()
        )));
    }
    let mut rng = root.derive(&["tia", pair.pair_id.as_str(), &k.to_string(), &seq.to_string()]);
    let positive = own[rng.below(own.len())].clone();
    let mut picks: Vec<(Route, String)> = vec![(route, positive)];
    if let Some(pool) = swapped_pool {
        picks.push((reversed, pool[rng.below(pool.len())].clone()));
    }
    for r in rng.sample_without_replacement(&others, needed - from_swap) {
        let pool = pools.get(&r).expect("route listed by pools");
        picks.push((r, pool[rng.below(pool.len())].clone()));
    }
    rng.shuffle(&mut picks);
    let answer_index = picks.iter().position(|(r, _)| *r == route).expect("positive present");
    let distractors = picks.iter().filter(|(r, _)| *r != route).map(|(r, _)| r.route_id()).collect();
    Ok(UnderstandingInstance {
        instance_id: instance_id(Task::Tia, &pair.pair_id, k, seq),
        task: Task::Tia,
        prompt: prompts::tia_stem(),
        image_refs: vec![slice_ref(&pair.src.volume_id, k), slice_ref(&pair.tgt.volume_id, k)],
        options: picks.into_iter().map(|(_, d)| d).collect(),
        answer_index,
        answer_letter: lettered(answer_index),
        meta: InstanceMeta {
            route_id: Some(route.route_id()),
            volume_id: pair.src.volume_id.clone(),
            slice_index: k,
            k_window: None,
            distractor_route_ids: Some(distractors),
            template_version: TEMPLATE_VERSION,
        },
    })
}

fn tia_anchor_plan(pair: &VolumePair, count: usize, root: &RngStream) -> Vec<usize> {
    if count == 0 {
        return Vec::new();
    }
    let all: Vec<usize> = (0..pair.n_slices()).collect();
    let mut rng = root.derive(&["tia-anchors", pair.pair_id.as_str()]);
    draw_anchors(&all, count, &mut rng)
}

/// `instances_per_pair.tia` TIA instances for each pair (no balancing).
pub fn forge_tia(
    pairs: &[VolumePair],
    pools: &RouteDescriptionPools,
    cfg: &ForgeConfig,
    rng: &RngStream,
) -> Result<Vec<UnderstandingInstance>, ForgeError> {
    cfg.validate()?;
    let units: Vec<(usize, usize, usize)> = pairs
        .iter()
        .enumerate()
        .flat_map(|(pi, p)| {
            tia_anchor_plan(p, cfg.instances_per_pair.tia, rng).into_iter().enumerate().map(move |(seq, k)| (pi, k, seq))
        })
        .collect();
    let mut out: Vec<UnderstandingInstance> = units
        .par_iter()
        .map(|&(pi, k, seq)| forge_tia_anchor(&pairs[pi], k, seq, pools, cfg, rng))
        .collect::<Result<_, _>>()?;
    sort_instances(&mut out);
    Ok(out)
}

/// Splits `total` over `n` slots so counts differ by at most one; earlier
/// slots get the remainder.
fn spread(total: usize, n: usize) -> Vec<usize> {
    (0..n).map(|i| total / n + usize::from(i < total % n)).collect()
}

/// Per-pair quotas (indexed like `pairs`) for a per-pair base count.
fn pair_quotas(pairs: &[VolumePair], per_pair: usize, balance: BalanceBy) -> Vec<usize> {
    let mut quotas = vec![0; pairs.len()];
    if pairs.is_empty() || per_pair == 0 {
        return quotas;
    }
    let mut by_route: BTreeMap<Route, Vec<usize>> = BTreeMap::new();
    for (i, p) in pairs.iter().enumerate() {
        by_route.entry(p.route).or_default().push(i);
    }
    for idxs in by_route.values_mut() {
        idxs.sort_by(|&a, &b| pairs[a].pair_id.cmp(&pairs[b].pair_id));
    }
    let route_quota: BTreeMap<Route, usize> = match balance {
        BalanceBy::Route => {
            let q = per_pair * pairs.len().div_ceil(by_route.len());
            by_route.keys().map(|r| (*r, q)).collect()
        }
        BalanceBy::Dataset => {
            let mut by_ds: BTreeMap<DatasetTag, Vec<Route>> = BTreeMap::new();
            for r in by_route.keys() {
                by_ds.entry(r.dataset).or_default().push(*r);
            }
            let q = per_pair * pairs.len().div_ceil(by_ds.len());
            by_ds
                .values()
                .flat_map(|routes| routes.iter().copied().zip(spread(q, routes.len())))
                .collect()
        }
    };
    for (route, idxs) in &by_route {
        for (&i, n) in idxs.iter().zip(spread(route_quota[route], idxs.len())) {
            quotas[i] = n;
        }
    }
    quotas
}

fn mi_quotas(manifest: &CorpusManifest, cfg: &ForgeConfig) -> Vec<usize> {
    let per = cfg.instances_per_pair.mi;
    let vols = &manifest.volumes;
    let mut quotas = vec![0; vols.len()];
    if vols.is_empty() || per == 0 {
        return quotas;
    }
    let mut groups: BTreeMap<(DatasetTag, Option<Modality>), Vec<usize>> = BTreeMap::new();
    for (i, v) in vols.iter().enumerate() {
        let key = match cfg.balance_by {
            BalanceBy::Route => (v.dataset, Some(v.modality)),
            BalanceBy::Dataset => (v.dataset, None),
        };
        groups.entry(key).or_default().push(i);
    }
    let q = per * vols.len().div_ceil(groups.len());
    for idxs in groups.values_mut() {
        idxs.sort_by(|&a, &b| vols[a].volume_id.cmp(&vols[b].volume_id));
        for (&i, n) in idxs.iter().zip(spread(q, idxs.len())) {
            quotas[i] = n;
        }
    }
    quotas
}

fn sort_instances(v: &mut [UnderstandingInstance]) {
    v.sort_by(|a, b| a.instance_id.cmp(&b.instance_id));
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ForgedCorpus {
    pub cts: Vec<UnderstandingInstance>,
    pub mi: Vec<UnderstandingInstance>,
    pub tia: Vec<UnderstandingInstance>,
}

impl ForgedCorpus {
    pub fn task(&self, task: Task) -> &[UnderstandingInstance] {
        match task {
            Task::Cts => &self.cts,
            Task::Mi => &self.mi,
            Task::Tia => &self.tia,
        }
    }

    pub fn len(&self) -> usize {
        self.cts.len() + self.mi.len() + self.tia.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn all(&self) -> impl Iterator<Item = &UnderstandingInstance> {
        self.cts.iter().chain(&self.mi).chain(&self.tia)
    }

    /// Counts per task and per route (`"-"` for instances without a route).
    pub fn summary(&self) -> ForgeSummary {
        let mut s = ForgeSummary::default();
        for inst in self.all() {
            *s.per_task.entry(inst.task.to_string()).or_default() += 1;
            let route = inst.meta.route_id.clone().unwrap_or_else(|| "-".into());
            *s.per_task_route.entry(inst.task.to_string()).or_default().entry(route).or_default() += 1;
        }
        s.total = self.len();
        s
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ForgeSummary {
    pub total: usize,
    pub per_task: BTreeMap<String, usize>,
    pub per_task_route: BTreeMap<String, BTreeMap<String, usize>>,
}

/// Forges all three tasks over a manifest with balanced quotas. Runs on the
/// ambient rayon pool; the result is identical for any pool size.
pub fn forge_corpus(
    manifest: &CorpusManifest,
    pools: &RouteDescriptionPools,
    cfg: &ForgeConfig,
) -> Result<ForgedCorpus, ForgeError> {
    cfg.validate()?;
    if manifest.volumes.is_empty() {
        return Err(ForgeError::NoVolumes);
    }
    let root = cfg.root_stream();
    let pairs = manifest.volume_pairs()?;

    let cts_q = pair_quotas(&pairs, cfg.instances_per_pair.cts, cfg.balance_by);
    let mut cts_units = Vec::new();
    for (pi, p) in pairs.iter().enumerate() {
        for (seq, k) in cts_anchor_plan(p, cts_q[pi], cfg, &root)?.into_iter().enumerate() {
            cts_units.push((pi, k, seq));
        }
    }
    let mut cts: Vec<UnderstandingInstance> = cts_units
        .par_iter()
        .map(|&(pi, k, seq)| forge_cts_anchor(&pairs[pi], k, seq, cfg, &root))
        .collect::<Result<_, _>>()?;
    sort_instances(&mut cts);

    let mi = if cfg.instances_per_pair.mi > 0 { forge_mi(manifest, cfg, &root)? } else { Vec::new() };

    let tia_q = pair_quotas(&pairs, cfg.instances_per_pair.tia, cfg.balance_by);
    let tia_units: Vec<(usize, usize, usize)> = pairs
        .iter()
        .enumerate()
        .flat_map(|(pi, p)| tia_anchor_plan(p, tia_q[pi], &root).into_iter().enumerate().map(move |(seq, k)| (pi, k, seq)))
        .collect();
    let mut tia: Vec<UnderstandingInstance> = tia_units
        .par_iter()
        .map(|&(pi, k, seq)| forge_tia_anchor(&pairs[pi], k, seq, pools, cfg, &root))
        .collect::<Result<_, _>>()?;
    sort_instances(&mut tia);

    Ok(ForgedCorpus { cts, mi, tia })
}

/// Serializes one instance to its canonical JSON line (no newline).
pub fn instance_to_line(inst: &UnderstandingInstance) -> String {
    serde_json::to_string(inst).expect("instances serialize")
}

/// Writes instances sorted by `instance_id`, one JSON object per line, each
/// terminated by `\n`. Returns the number written.
pub fn emit_jsonl(instances: &[UnderstandingInstance], path: &Path) -> Result<usize, ForgeError> {
    let mut sorted: Vec<&UnderstandingInstance> = instances.iter().collect();
    sorted.sort_by(|a, b| a.instance_id.cmp(&b.instance_id));
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for inst in &sorted {
        w.write_all(instance_to_line(inst).as_bytes())?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(sorted.len())
}

pub fn read_jsonl(path: &Path) -> Result<Vec<UnderstandingInstance>, ForgeError> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in f.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| ForgeError::Parse { line: i + 1, source })?);
    }
    Ok(out)
}
