use crate::config::CliConfig;
use crate::error::CliError;
use crate::provenance::{write_json, Provenance};
use medsyn_core::domain::Route;
use medsyn_core::forge::{emit_jsonl, forge_corpus, read_jsonl};
use medsyn_core::ingest::{encode_pgm, load_manifest, parse_pgm, CorpusManifest, PgmDepth};
use medsyn_core::metrics::{evaluate_route, RouteMetricsReport};
use medsyn_core::prompts::RouteDescriptionPools;
use medsyn_core::scoring::{read_predictions, score_answers};
use medsyn_core::synergy::{
    evaluate_synthesis, gen_toy_corpus, k_sensitivity, run_ablation, synthesize, train_stage1, train_stage2, Schedule,
    SynergyCorpus, SynergyModel,
};
use medsyn_core::domain::Image2D;
use serde::Serialize;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

const MANIFEST_FILE: &str = "manifest.json";

fn create_dir(out: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(out).map_err(|e| CliError::data(format!("{}: {e}", out.display())))
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

/// A CSV file whose first line is a `#` comment carrying the compact provenance.
fn write_csv(path: &Path, prov: &Provenance, body: &str) -> Result<(), CliError> {
    std::fs::write(path, format!("# {}\n{body}", prov.compact())).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

fn manifest_path(corpus: &Path) -> PathBuf {
    if corpus.is_dir() {
        corpus.join(MANIFEST_FILE)
    } else {
        corpus.to_owned()
    }
}

fn load_corpus(cfg: &CliConfig, corpus: &Path, prov: &mut Provenance) -> Result<SynergyCorpus, CliError> {
    let root = if corpus.is_dir() { corpus } else { corpus.parent().unwrap_or(Path::new(".")) };
    prov.input("corpus", root)?;
    let manifest = load_manifest(&manifest_path(corpus))?;
    Ok(SynergyCorpus::load(manifest, cfg.train.holdout_every)?)
}

fn parse_list<T: std::str::FromStr>(raw: &str, what: &str) -> Result<Vec<T>, CliError> {
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| CliError::usage(format!("bad {what} {s:?}"))))
        .collect()
}

pub fn forge(cfg: &CliConfig, manifest: &Path, pools: Option<&Path>, out: &Path) -> Result<(), CliError> {
    let mut prov = Provenance::new("forge", cfg);
    prov.input("manifest", manifest)?;
    let m = load_manifest(manifest)?;
    let pools = match pools {
        Some(p) => {
            prov.input("pools", p)?;
            RouteDescriptionPools::from_json(&read_text(p)?)?
        }
        None => {
            let d = RouteDescriptionPools::default();
            prov.input_value("pools", &d.to_json());
            d
        }
    };
    let forged = forge_corpus(&m, &pools, &cfg.forge)?;
    create_dir(out)?;
    emit_jsonl(&forged.cts, &out.join("cts.jsonl"))?;
    emit_jsonl(&forged.mi, &out.join("mi.jsonl"))?;
    emit_jsonl(&forged.tia, &out.join("tia.jsonl"))?;
    write_json(&out.join("forge_summary.json"), &prov.embed(&forged.summary())?)?;
    prov.write_sidecar(out)
}

pub fn score(cfg: &CliConfig, instances: &[PathBuf], predictions: &Path, out: &Path) -> Result<(), CliError> {
    let mut prov = Provenance::new("score", cfg);
    let mut all = Vec::new();
    for (i, p) in instances.iter().enumerate() {
        prov.input(&format!("instances[{i}]"), p)?;
        all.extend(read_jsonl(p)?);
    }
    prov.input("predictions", predictions)?;
    let report = score_answers(&all, &read_predictions(predictions)?)?;
    create_dir(out)?;
    write_json(&out.join("score.json"), &prov.embed(&report)?)
}

/// Relative paths of all `.pgm` files under `dir`, sorted.
fn pgm_files(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    if !dir.is_dir() {
        return Err(CliError::data(format!("{} is not a directory", dir.display())));
    }
    let mut out = Vec::new();
    for entry in walkdir::WalkDir::new(dir) {
        let entry = entry.map_err(|e| CliError::data(e.to_string()))?;
        if entry.file_type().is_file() && entry.path().extension().is_some_and(|x| x == "pgm") {
            out.push(entry.path().strip_prefix(dir).expect("walk stays under root").to_owned());
        }
    }
    out.sort();
    Ok(out)
}

fn read_pgm(path: &Path) -> Result<Image2D, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    parse_pgm(&bytes).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

#[derive(Serialize)]
struct EvalReport {
    routes: Vec<RouteMetricsReport>,
    overall: RouteMetricsReport,
}

/// Wide table: one column per route, rows SSIM x 100, PSNR (dB) and MAE.
fn eval_csv(reports: &[&RouteMetricsReport]) -> String {
    let mut s = String::from("metric");
    for r in reports {
        let _ = write!(s, ",{}", r.route_id);
    }
    s.push('\n');
    let rows: [(&str, fn(&RouteMetricsReport) -> String); 3] = [
        ("ssim", |r| format!("{:.2}", r.ssim.mean)),
        ("psnr", |r| r.psnr.mean.db().map_or("inf".to_owned(), |d| format!("{d:.2}"))),
        ("mae", |r| format!("{:.2}", r.mae.mean)),
    ];
    for (name, f) in rows {
        s.push_str(name);
        for r in reports {
            let _ = write!(s, ",{}", f(r));
        }
        s.push('\n');
    }
    s
}

/// Slices are matched by relative path. With a manifest, the first path
/// component names the pair and slices are grouped by that pair's route.
pub fn eval(cfg: &CliConfig, pred: &Path, gt: &Path, manifest: Option<&Path>, out: &Path) -> Result<(), CliError> {
    let mut prov = Provenance::new("eval", cfg);
    prov.input("pred", pred)?;
    prov.input("gt", gt)?;
    let routes_of: Option<BTreeMap<String, String>> = match manifest {
        Some(m) => {
            prov.input("manifest", m)?;
            let text = read_text(m)?;
            let parsed: CorpusManifest = serde_json::from_str(&text).map_err(|e| CliError::data(format!("{}: {e}", m.display())))?;
            Some(parsed.pairs.into_iter().map(|p| (p.pair_id, p.route_id)).collect())
        }
        None => None,
    };
    let files = pgm_files(gt)?;
    if files.is_empty() {
        return Err(CliError::data(format!("no .pgm files under {}", gt.display())));
    }
    let pred_files = pgm_files(pred)?;
    if let Some(extra) = pred_files.iter().find(|f| files.binary_search(f).is_err()) {
        return Err(CliError::data(format!("{} has no ground truth", extra.display())));
    }
    let mut groups: BTreeMap<String, (Vec<Image2D>, Vec<Image2D>)> = BTreeMap::new();
    let mut all = (Vec::new(), Vec::new());
    for rel in &files {
        let g = read_pgm(&gt.join(rel))?;
        let p = read_pgm(&pred.join(rel)).map_err(|e| CliError::data(format!("missing prediction: {e}")))?;
        if let Some(map) = &routes_of {
            let pair = rel.components().next().map(|c| c.as_os_str().to_string_lossy().into_owned()).unwrap_or_default();
            let route = map.get(&pair).ok_or_else(|| CliError::data(format!("{}: {pair:?} is not a pair in the manifest", rel.display())))?;
            let slot = groups.entry(route.clone()).or_default();
            slot.0.push(p.clone());
            slot.1.push(g.clone());
        }
        all.0.push(p);
        all.1.push(g);
    }
    let routes = groups
        .iter()
        .map(|(route, (p, g))| evaluate_route(route, p, g, &cfg.ssim))
        .collect::<Result<Vec<_>, _>>()?;
    let overall = evaluate_route("all", &all.0, &all.1, &cfg.ssim)?;
    let report = EvalReport { routes, overall };
    create_dir(out)?;
    write_json(&out.join("eval.json"), &prov.embed(&report)?)?;
    let cols: Vec<&RouteMetricsReport> = report.routes.iter().chain([&report.overall]).collect();
    write_csv(&out.join("eval.csv"), &prov, &eval_csv(&cols))
}

pub fn toygen(cfg: &CliConfig, out: &Path) -> Result<(), CliError> {
    let prov = Provenance::new("toygen", cfg);
    create_dir(out)?;
    gen_toy_corpus(&cfg.toy, out)?;
    prov.write_sidecar(out)
}

#[derive(Serialize)]
struct TrainReport {
    stage: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    stage1_held_out: Option<medsyn_core::synergy::GauAccuracy>,
    #[serde(skip_serializing_if = "Option::is_none")]
    synthesis: Option<medsyn_core::synergy::SynthesisEval>,
}

pub fn train(cfg: &CliConfig, stage: &str, corpus: &Path, init: Option<&Path>, out: &Path) -> Result<(), CliError> {
    let mut prov = Provenance::new(&format!("train --stage {stage}"), cfg);
    let corpus = load_corpus(cfg, corpus, &mut prov)?;
    let mut model = match init {
        Some(p) => {
            prov.input("init", p)?;
            SynergyModel::load(p)?
        }
        None => SynergyModel::new(&cfg.train, cfg.train.seed),
    };
    let mut curves = String::from("stage,epoch,train_loss,val_loss\n");
    let mut report = TrainReport { stage: stage.to_owned(), stage1_held_out: None, synthesis: None };
    if stage == "1" || stage == "both" {
        let s1 = train_stage1(&corpus, &cfg.forge, model, &cfg.train)?;
        for (e, l) in s1.curve.iter().enumerate() {
            let _ = writeln!(curves, "1,{},{l:.9},", e + 1);
        }
        report.stage1_held_out = Some(s1.held_out);
        model = s1.model;
    }
    if stage == "2" || stage == "both" {
        let s2 = train_stage2(&corpus, model, &cfg.train)?;
        let _ = writeln!(curves, "2,0,,{:.9}", s2.val_curve[0]);
        for (e, l) in s2.curve.iter().enumerate() {
            let _ = writeln!(curves, "2,{},{l:.9},{:.9}", e + 1, s2.val_curve[e + 1]);
        }
        model = s2.model;
        report.synthesis = Some(evaluate_synthesis(&model, &corpus, &cfg.train, false)?);
    }
    create_dir(out)?;
    model.save(out)?;
    write_csv(&out.join("curves.csv"), &prov, &curves)?;
    write_json(&out.join("train_report.json"), &prov.embed(&report)?)?;
    prov.write_sidecar(out)
}

pub fn sample(cfg: &CliConfig, ckpt: &Path, src: &Path, route: &str, seed: Option<u64>, out: &Path) -> Result<(), CliError> {
    let route: Route = route.parse().map_err(|e| CliError::usage(format!("{e}")))?;
    let seed = seed.unwrap_or(cfg.train.seed);
    let mut prov = Provenance::new("sample", cfg);
    prov.input("ckpt", ckpt)?;
    prov.input("src", src)?;
    prov.input_value("route", &route.route_id());
    prov.input_value("seed", &seed.to_string());
    let model = SynergyModel::load(ckpt)?;
    let img = synthesize(&model, &read_pgm(src)?, &route, &cfg.train, seed)?;
    let pgm = encode_pgm(&img, PgmDepth::Sixteen);
    let mut bytes = b"P5\n".to_vec();
    bytes.extend_from_slice(format!("# {}\n", prov.compact()).as_bytes());
    bytes.extend_from_slice(&pgm[3..]);
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    std::fs::write(out, bytes).map_err(|e| CliError::data(format!("{}: {e}", out.display())))
}

pub fn ablate(cfg: &CliConfig, corpus: &Path, seeds: &str, schedules: &str, out: &Path) -> Result<(), CliError> {
    let seeds: Vec<u64> = parse_list(seeds, "seed")?;
    let schedules: Vec<Schedule> = parse_list(schedules, "schedule")?;
    let mut prov = Provenance::new("ablate", cfg);
    prov.input_value("seeds", &format!("{seeds:?}"));
    prov.input_value("schedules", &format!("{:?}", schedules.iter().map(|s| s.id()).collect::<Vec<_>>()));
    let corpus = load_corpus(cfg, corpus, &mut prov)?;
    let report = run_ablation(&corpus, &cfg.forge, &cfg.train, &schedules, &seeds)?;
    create_dir(out)?;
    write_json(&out.join("report.json"), &prov.embed(&report)?)?;
    write_csv(&out.join("report.csv"), &prov, &report.to_csv())
}

pub fn ksweep(cfg: &CliConfig, corpus: &Path, ks: &str, out: &Path) -> Result<(), CliError> {
    let ks: Vec<usize> = parse_list(ks, "K")?;
    let mut prov = Provenance::new("ksweep", cfg);
    prov.input_value("k", &format!("{ks:?}"));
    let corpus = load_corpus(cfg, corpus, &mut prov)?;
    let report = k_sensitivity(&corpus, &cfg.forge, &cfg.train, &ks)?;
    create_dir(out)?;
    write_json(&out.join("ksweep.json"), &prov.embed(&report)?)?;
    write_csv(&out.join("ksweep.csv"), &prov, &report.to_csv())
}
