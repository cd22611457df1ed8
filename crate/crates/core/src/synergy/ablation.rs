//! Training-schedule ablation and the CTS window sweep.

use super::stage1::{evaluate_gau, held_out_items, train_stage1, GauAccuracy};
use super::stage2::{evaluate_synthesis, stage2_batch_loss, stage2_validation_batch, train_stage2, SynthesisEval};
use super::{SynergyCorpus, SynergyError, SynergyModel, TrainConfig};
use crate::forge::ForgeConfig;
use crate::metrics::Psnr;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// No training at all.
    Baseline,
    /// Flow matching from a fresh encoder.
    Stage2Only,
    /// Understanding-trained encoder with an untrained velocity net.
    Stage1Only,
    /// Understanding training, then flow matching with the same budget as `Stage2Only`.
    #[serde(rename = "stage1_plus_2")]
    Stage1Plus2,
}

impl Schedule {
    pub const ALL: [Schedule; 4] = [Schedule::Baseline, Schedule::Stage2Only, Schedule::Stage1Only, Schedule::Stage1Plus2];

    pub fn id(self) -> &'static str {
        match self {
            Schedule::Baseline => "baseline",
            Schedule::Stage2Only => "stage2_only",
            Schedule::Stage1Only => "stage1_only",
            Schedule::Stage1Plus2 => "stage1_plus_2",
        }
    }

    pub fn note(self) -> Option<&'static str> {
        match self {
            Schedule::Stage1Only => Some("velocity net untrained; no pretrained generator exists at this scale"),
            _ => None,
        }
    }

    fn needs_stage1(self) -> bool {
        matches!(self, Schedule::Stage1Only | Schedule::Stage1Plus2)
    }
}

impl std::str::FromStr for Schedule {
    type Err = SynergyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Schedule::ALL.into_iter().find(|x| x.id() == s).ok_or_else(|| SynergyError::Config(format!("unknown schedule {s:?}")))
    }
}

/// One schedule x seed x route result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub schedule: Schedule,
    pub seed: u64,
    pub route_id: String,
    pub n: usize,
    /// SSIM x 100.
    pub ssim: f64,
    pub psnr: Psnr,
    pub mae: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub schedule: Schedule,
    pub seed: u64,
    pub ssim: f64,
    pub psnr: Psnr,
    pub mae: f64,
    pub gau: GauAccuracy,
    /// Held-out flow-matching loss of the final model.
    pub val_fm_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteMeans {
    pub route_id: String,
    pub ssim: f64,
    pub psnr: Psnr,
    pub mae: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSummary {
    pub schedule: Schedule,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    /// Means over seeds.
    pub ssim: f64,
    pub psnr: Psnr,
    pub mae: f64,
    pub gau: GauAccuracy,
    pub routes: Vec<RouteMeans>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub seeds: Vec<u64>,
    pub schedules: Vec<Schedule>,
    pub summary: Vec<ScheduleSummary>,
    pub per_seed: Vec<SeedSummary>,
    pub cells: Vec<AblationCell>,
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

/// Mean in dB; any identical-image entry makes the mean identical too.
fn mean_psnr(xs: impl IntoIterator<Item = Psnr>) -> Psnr {
    let db: Option<Vec<f64>> = xs.into_iter().map(Psnr::db).collect();
    db.map_or(Psnr::Identical, |v| Psnr::Db(mean(v)))
}

fn mean_gau<'a>(xs: impl IntoIterator<Item = &'a GauAccuracy>) -> GauAccuracy {
    let xs: Vec<_> = xs.into_iter().collect();
    GauAccuracy {
        cts: mean(xs.iter().map(|g| g.cts)),
        mi: mean(xs.iter().map(|g| g.mi)),
        tia: mean(xs.iter().map(|g| g.tia)),
        n_cts: xs.iter().map(|g| g.n_cts).sum(),
        n_mi: xs.iter().map(|g| g.n_mi).sum(),
        n_tia: xs.iter().map(|g| g.n_tia).sum(),
    }
}

impl AblationReport {
    pub fn schedule(&self, s: Schedule) -> Option<&ScheduleSummary> {
        self.summary.iter().find(|x| x.schedule == s)
    }

    pub fn seed_summary(&self, s: Schedule, seed: u64) -> Option<&SeedSummary> {
        self.per_seed.iter().find(|x| x.schedule == s && x.seed == seed)
    }

    /// Table layout: one row per schedule and metric, one column per route,
    /// then the mean. SSIM is x100, MAE on the 0-255 scale.
    pub fn to_csv(&self) -> String {
        let routes: Vec<&str> = self.summary.first().map(|s| s.routes.iter().map(|r| r.route_id.as_str()).collect()).unwrap_or_default();
        let mut out = String::from("schedule,metric");
        for r in &routes {
            let _ = write!(out, ",{r}");
        }
        out.push_str(",mean\n");
        let psnr_str = |p: Psnr| p.db().map_or("inf".to_owned(), |d| format!("{d:.2}"));
        for s in &self.summary {
            let rows: [(&str, Vec<String>, String); 3] = [
                ("ssim", s.routes.iter().map(|r| format!("{:.2}", r.ssim)).collect(), format!("{:.2}", s.ssim)),
                ("psnr", s.routes.iter().map(|r| psnr_str(r.psnr)).collect(), psnr_str(s.psnr)),
                ("mae", s.routes.iter().map(|r| format!("{:.2}", r.mae)).collect(), format!("{:.2}", s.mae)),
            ];
            for (metric, vals, m) in rows {
                let _ = writeln!(out, "{},{metric},{},{m}", s.schedule.id(), vals.join(","));
            }
        }
        out
    }
}

struct SeedRun {
    summaries: Vec<SeedSummary>,
    cells: Vec<AblationCell>,
}

fn record(schedule: Schedule, seed: u64, eval: &SynthesisEval, gau: GauAccuracy, val_fm_loss: f64, run: &mut SeedRun) {
    for r in &eval.routes {
        run.cells.push(AblationCell {
            schedule,
            seed,
            route_id: r.route_id.clone(),
            n: r.n,
            ssim: r.ssim.mean,
            psnr: r.psnr.mean,
            mae: r.mae.mean,
        });
    }
    let o = &eval.overall;
    run.summaries.push(SeedSummary { schedule, seed, ssim: o.ssim.mean, psnr: o.psnr.mean, mae: o.mae.mean, gau, val_fm_loss });
}

fn run_seed(
    corpus: &SynergyCorpus,
    forge_cfg: &ForgeConfig,
    base: &TrainConfig,
    schedules: &[Schedule],
    seed: u64,
) -> Result<SeedRun, SynergyError> {
    let cfg = TrainConfig { seed, ..*base };
    let fresh = SynergyModel::new(&cfg, seed);
    let gau_items = held_out_items(corpus, forge_cfg, &cfg)?;
    let val = stage2_validation_batch(corpus, &cfg)?;
    let mut run = SeedRun { summaries: Vec::new(), cells: Vec::new() };
    let stage1 = if schedules.iter().any(|s| s.needs_stage1()) { Some(train_stage1(corpus, forge_cfg, fresh.clone(), &cfg)?) } else { None };
    for &schedule in schedules {
        let model = match schedule {
            Schedule::Baseline => fresh.clone(),
            Schedule::Stage1Only => stage1.as_ref().expect("stage I ran").model.clone(),
            Schedule::Stage2Only => train_stage2(corpus, fresh.clone(), &cfg)?.model,
            Schedule::Stage1Plus2 => train_stage2(corpus, stage1.as_ref().expect("stage I ran").model.clone(), &cfg)?.model,
        };
        let eval = evaluate_synthesis(&model, corpus, &cfg, false)?;
        let gau = evaluate_gau(&model, &corpus.bank, &gau_items)?;
        let val_loss = stage2_batch_loss(&model, &corpus.bank, &val, false, None)?;
        record(schedule, seed, &eval, gau, val_loss, &mut run);
    }
    Ok(run)
}

/// Runs every schedule for every seed (seeds in parallel). All schedules of
/// a seed share the initial weights and the held-out split.
pub fn run_ablation(
    corpus: &SynergyCorpus,
    forge_cfg: &ForgeConfig,
    cfg: &TrainConfig,
    schedules: &[Schedule],
    seeds: &[u64],
) -> Result<AblationReport, SynergyError> {
    let mut uniq = schedules.to_vec();
    uniq.sort();
    uniq.dedup();
    if uniq.len() != schedules.len() || schedules.len() < 2 {
        return Err(SynergyError::Config("need at least 2 distinct schedules".into()));
    }
    let mut seed_set = seeds.to_vec();
    seed_set.sort();
    seed_set.dedup();
    if seed_set.len() != seeds.len() || seeds.len() < 3 {
        return Err(SynergyError::Config("need at least 3 distinct seeds".into()));
    }
    cfg.validate()?;
    forge_cfg.validate()?;
    let runs: Vec<SeedRun> = seeds.par_iter().map(|&s| run_seed(corpus, forge_cfg, cfg, schedules, s)).collect::<Result<_, _>>()?;
    let per_seed: Vec<SeedSummary> = runs.iter().flat_map(|r| r.summaries.iter().cloned()).collect();
    let cells: Vec<AblationCell> = runs.into_iter().flat_map(|r| r.cells).collect();
    let summary = schedules
        .iter()
        .map(|&schedule| {
            let seeds_of: Vec<&SeedSummary> = per_seed.iter().filter(|s| s.schedule == schedule).collect();
            let mut by_route: BTreeMap<usize, (String, Vec<&AblationCell>)> = BTreeMap::new();
            let order: Vec<&str> = cells.iter().filter(|c| c.schedule == schedule && c.seed == seeds[0]).map(|c| c.route_id.as_str()).collect();
            for c in cells.iter().filter(|c| c.schedule == schedule) {
                let at = order.iter().position(|r| *r == c.route_id).unwrap_or(order.len());
                by_route.entry(at).or_insert_with(|| (c.route_id.clone(), Vec::new())).1.push(c);
            }
            let routes = by_route
                .into_values()
                .map(|(route_id, cs)| RouteMeans {
                    route_id,
                    ssim: mean(cs.iter().map(|c| c.ssim)),
                    psnr: mean_psnr(cs.iter().map(|c| c.psnr)),
                    mae: mean(cs.iter().map(|c| c.mae)),
                })
                .collect();
            ScheduleSummary {
                schedule,
                note: schedule.note().map(str::to_owned),
                ssim: mean(seeds_of.iter().map(|s| s.ssim)),
                psnr: mean_psnr(seeds_of.iter().map(|s| s.psnr)),
                mae: mean(seeds_of.iter().map(|s| s.mae)),
                gau: mean_gau(seeds_of.iter().map(|s| &s.gau)),
                routes,
            }
        })
        .collect();
    Ok(AblationReport { seeds: seeds.to_vec(), schedules: schedules.to_vec(), summary, per_seed, cells })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSensitivityRow {
    pub k: usize,
    pub gau: GauAccuracy,
    /// Stage I + II synthesis on the held-out split.
    pub ssim: f64,
    pub psnr: Psnr,
    pub mae: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSensitivityReport {
    pub seed: u64,
    pub rows: Vec<KSensitivityRow>,
    /// Full-scale reference point, recorded for context only.
    pub full_scale_reference: FullScaleReference,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FullScaleReference {
    pub k: usize,
    pub ssim: f64,
}

impl Default for FullScaleReference {
    fn default() -> Self {
        Self { k: 5, ssim: 74.91 }
    }
}

impl KSensitivityReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,cts_acc,mi_acc,tia_acc,ssim,psnr,mae\n");
        for r in &self.rows {
            let psnr = r.psnr.db().map_or("inf".to_owned(), |d| format!("{d:.2}"));
            let _ = writeln!(out, "{},{:.4},{:.4},{:.4},{:.2},{psnr},{:.2}", r.k, r.gau.cts, r.gau.mi, r.gau.tia, r.ssim, r.mae);
        }
        out
    }
}

/// Reruns CTS forging, Stage I and Stage I + II for each window size.
/// Every `k` is checked against the corpus before any training starts.
pub fn k_sensitivity(
    corpus: &SynergyCorpus,
    forge_cfg: &ForgeConfig,
    cfg: &TrainConfig,
    ks: &[usize],
) -> Result<KSensitivityReport, SynergyError> {
    if ks.is_empty() {
        return Err(SynergyError::Config("empty K grid".into()));
    }
    let s = corpus.slices_per_volume();
    for &k in ks {
        if k == 0 || s < 2 * k + 2 {
            return Err(SynergyError::Config(format!("K = {k} needs at least {} slices per volume, corpus has {s}", 2 * k + 2)));
        }
        ForgeConfig { k_window: k, ..forge_cfg.clone() }.validate()?;
    }
    cfg.validate()?;
    let rows = ks
        .par_iter()
        .map(|&k| {
            let fc = ForgeConfig { k_window: k, ..forge_cfg.clone() };
            let s1 = train_stage1(corpus, &fc, SynergyModel::new(cfg, cfg.seed), cfg)?;
            let model = train_stage2(corpus, s1.model, cfg)?.model;
            let eval = evaluate_synthesis(&model, corpus, cfg, false)?;
            Ok(KSensitivityRow { k, gau: s1.held_out, ssim: eval.overall.ssim.mean, psnr: eval.overall.psnr.mean, mae: eval.overall.mae.mean })
        })
        .collect::<Result<_, SynergyError>>()?;
    Ok(KSensitivityReport { seed: cfg.seed, rows, full_scale_reference: FullScaleReference::default() })
}
