use medsyn_core::domain::{parse_slice_ref, Task};
use medsyn_core::forge::{emit_jsonl, forge_corpus, instance_to_line, read_jsonl, ForgeConfig, ForgedCorpus, InstanceCounts};
use medsyn_core::ingest::CorpusManifest;
use medsyn_core::prompts::{render_question, RouteDescriptionPools};
use medsyn_core::scoring::score_answers;
use medsyn_core::synergy::{toy_manifest, ToyCorpusConfig};
use std::collections::BTreeMap;
use std::path::Path;

fn manifest(n_volumes: usize) -> CorpusManifest {
    toy_manifest(&ToyCorpusConfig { n_volumes, ..ToyCorpusConfig::default() }, Path::new("/toy"))
}

fn big_forge() -> (CorpusManifest, ForgedCorpus) {
    let m = manifest(32);
    let cfg = ForgeConfig { seed: 11, instances_per_pair: InstanceCounts { cts: 40, mi: 40, tia: 40 }, ..ForgeConfig::default() };
    let f = forge_corpus(&m, &RouteDescriptionPools::default(), &cfg).unwrap();
    (m, f)
}

#[test]
fn large_forge_satisfies_construction_rules() {
    let (m, f) = big_forge();
    assert!(f.len() >= 10_000, "only {} instances", f.len());
    let pools = RouteDescriptionPools::default();
    let pairs: BTreeMap<String, _> = m.volume_pairs().unwrap().into_iter().map(|p| (p.tgt.volume_id.clone(), p)).collect();

    for inst in &f.cts {
        inst.validate().unwrap();
        let k = inst.meta.slice_index;
        let window = inst.meta.k_window.unwrap();
        let refs: Vec<(&str, usize)> = inst.options.iter().map(|o| parse_slice_ref(o).unwrap()).collect();
        let tgt = refs[0].0;
        assert!(pairs.contains_key(tgt));
        assert!(refs.iter().all(|(v, _)| *v == tgt));
        assert_eq!(refs.iter().filter(|(_, j)| *j == k).count(), 1, "{}", inst.instance_id);
        assert_eq!(refs[inst.answer_index].1, k);
        for (_, j) in &refs {
            let d = j.abs_diff(k);
            assert!(d == 0 || (1..=window).contains(&d), "{}: delta {d}", inst.instance_id);
        }
    }

    let mut swapped = 0;
    for inst in &f.tia {
        inst.validate().unwrap();
        let route: medsyn_core::domain::Route = inst.meta.route_id.as_deref().unwrap().parse().unwrap();
        assert_eq!(pools.route_of(inst.answer()), Some(route));
        if pools.get(&route.reversed()).is_some() {
            assert!(inst.options.iter().any(|o| pools.route_of(o) == Some(route.reversed())), "{}", inst.instance_id);
            swapped += 1;
        }
    }
    assert!(swapped > 0);

    for inst in &f.mi {
        inst.validate().unwrap();
        assert_eq!(inst.image_refs.len(), 1);
    }

    let mut counts = [0usize; 4];
    let four: Vec<_> = f.all().filter(|i| i.options.len() == 4).collect();
    for inst in &four {
        counts[inst.answer_index] += 1;
    }
    for c in counts {
        let freq = c as f64 / four.len() as f64;
        assert!((freq - 0.25).abs() <= 0.03, "letter frequency {freq}");
    }
}

fn bytes(f: &ForgedCorpus) -> String {
    f.all().map(|i| instance_to_line(i) + "\n").collect()
}

#[test]
fn forge_bytes_independent_of_thread_count() {
    let m = manifest(12);
    let cfg = ForgeConfig { seed: 5, ..ForgeConfig::default() };
    let pools = RouteDescriptionPools::default();
    let run = |n: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap();
        pool.install(|| bytes(&forge_corpus(&m, &pools, &cfg).unwrap()))
    };
    let one = run(1);
    assert_eq!(one, run(8));
    assert_eq!(one, run(1));
}

#[test]
fn jsonl_roundtrip_and_scoring() {
    let m = manifest(8);
    let f = forge_corpus(&m, &RouteDescriptionPools::default(), &ForgeConfig::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let all: Vec<_> = f.all().cloned().collect();
    let path = dir.path().join("all.jsonl");
    assert_eq!(emit_jsonl(&all, &path).unwrap(), all.len());
    let mut back = read_jsonl(&path).unwrap();
    let mut sorted = all.clone();
    sorted.sort_by(|a, b| a.instance_id.cmp(&b.instance_id));
    back.sort_by(|a, b| a.instance_id.cmp(&b.instance_id));
    assert_eq!(back, sorted);

    let perfect: BTreeMap<String, String> = all.iter().map(|i| (i.instance_id.clone(), i.answer_letter.to_lowercase())).collect();
    let report = score_answers(&all, &perfect).unwrap();
    assert_eq!(report.average_accuracy, 1.0);
    assert_eq!(report.missing, 0);
    for t in [Task::Cts, Task::Mi, Task::Tia] {
        assert_eq!(report.tasks[&t].n, f.task(t).len());
    }
}

#[test]
fn questions_render_with_lettered_options() {
    let m = manifest(8);
    let f = forge_corpus(&m, &RouteDescriptionPools::default(), &ForgeConfig::default()).unwrap();
    for inst in f.all().take(200) {
        let q = render_question(inst);
        for i in 0..inst.options.len() {
            let letter = medsyn_core::domain::option_letter(i).unwrap();
            assert!(q.contains(&format!("\n{letter}. ")), "{q}");
        }
        assert_eq!(q, render_question(inst));
    }
}
