//! Text surfaces: per-route description pools for TIA, long-form synthesis
//! prompts for Stage-II conditioning, and the multiple-choice question layout.

use crate::domain::{route_catalog, Modality, Route, RouteError, Task, UnderstandingInstance};
use std::collections::BTreeMap;
use thiserror::Error;

/// Bumped whenever question or description wording changes.
pub const TEMPLATE_VERSION: u32 = 1;

pub const MIN_POOL_SIZE: usize = 3;

#[derive(Debug, Error)]
pub enum PromptError {
    #[error(transparent)]
    UnknownRoute(#[from] RouteError),
    #[error("invalid pools JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("pool for {route_id} has {len} descriptions, need at least {MIN_POOL_SIZE}")]
    PoolTooSmall { route_id: String, len: usize },
    #[error("pool for {route_id} repeats a description")]
    DuplicateDescription { route_id: String },
}

// Synthesis prompts shipped with their routes as published.
const CT_TO_CBCT_PELVIS: &str = "Convert a non-contrast pelvic CT slice to a CBCT-like appearance. Keep anatomy, voxel grid, field-of-view, slice position, and lesion morphology strictly unchanged (1:1 mapping). Modify only photometric/texture properties. CBCT appearance constraints (ONLY IF VISIBLE): • Lower soft-tissue contrast vs diagnostic CT; HU compression acceptable. • Add realistic, moderate CBCT texture: granular noise, mild cone-beam streaks/flare, slight ring artifacts; must not hide organ boundaries. • Gentle scatter shading/cupping permissible; avoid strong vignetting or truncation that alters anatomy. Preserve stones/hardware geometry and position. No hallucinated anatomy or warping.";
const PET_TO_CT: &str = "Convert an PET whole-body slice to a non-contrast diagnostic CT appearance. Keep anatomy, voxel grid, field-of-view, slice position, and lesion morphology strictly unchanged (1:1 mapping). Modify ONLY contrast to emulate CT attenuation. CT constraints (ONLY IF VISIBLE): • Cortical/trabecular bone → bright to very bright; air spaces → near-black. • Soft-tissue HU ordering: fat < water (mid-gray) < muscle/solid organs < bone. • Remove PET blur/halo appearance; produce realistic diagnostic CT noise/edge sharpness. No iodinated-contrast patterns or invented anatomy; preserve exact geometry.";
const CT_TO_MR_BRAIN: &str = "Convert a non-contrast brain CT slice to a non-contrast structural MRI (T1-like) appearance. Keep anatomy, voxel grid, field-of-view, slice position and lesion morphology strictly unchanged (1:1 mapping). Modify ONLY soft-tissue signal relationships to emulate MRI. MRI (T1-like) constraints (ONLY IF VISIBLE): • Cortical bone and air → near-black. • White matter slightly brighter than gray matter. • Ventricles/sulci → CSF dark with sharp boundaries. • Remove CT-specific streaks/beam hardening cues. No gadolinium enhancement patterns, no invented anatomy; preserve exact geometry and realistic MRI-like texture.";
const T2_TO_T1CE: &str = "Generate a post-contrast MRI FLAIR (T1-weighted Contrast-Enhanced Magnetic Resonance Imaging) depiction from the MRI FLAIR (Fluid-Attenuated Inversion Recovery (FLAIR) Magnetic Resonance Imaging) slice while rigorously preserving anatomy. Remove FLAIR-specific CSF suppression characteristics, enforce T1-like baseline (dark CSF), and add anatomically plausible enhancement (vessels, dura, genuinely enhancing tumor regions) without altering lesion size or shape. No artificial structures; maintain resolution and field-of-view.";
const T2_TO_T1: &str = "Render a faithful MRI T1 (T1-weighted Magnetic Resonance Imaging) version from the MRI T2 (T2-weighted Magnetic Resonance Imaging) slice by changing contrast only. In MRI T1, CSF should be dark; white matter typically brighter than gray matter; no contrast-agent signatures should appear. Exact geometry, field-of-view, and lesion morphology must be preserved; avoid hallucinations.";
const T1_TO_T2: &str = "Convert this MRI T1 (T1-weighted Magnetic Resonance Imaging) slice into a fluid-sensitive MRI T2 (T2-weighted Magnetic Resonance Imaging) depiction. Preserve geometry exactly; alter only signal relationships so CSF/free fluid becomes bright, vasogenic edema and many lesions trend hyperintense, and—on MRI T2—white matter appears darker than gray matter (contrast direction reversed from T1). Exclude any contrast-agent effects; no structure may be added, removed, or reshaped.";

fn published_prompt(route_id: &str) -> Option<&'static str> {
    Some(match route_id {
        "synthrad_pelvis/ct_to_cbct" => CT_TO_CBCT_PELVIS,
        "autopet/pet_to_ct" => PET_TO_CT,
        "synthrad_brain/ct_to_mr" => CT_TO_MR_BRAIN,
        "brats/t2_to_t1ce" => T2_TO_T1CE,
        "brats/t2_to_t1" => T2_TO_T1,
        "brats/t1_to_t2" => T1_TO_T2,
        _ => return None,
    })
}

/// What the target modality looks like, used by generated text.
fn target_appearance(m: Modality) -> &'static str {
    match m {
        Modality::Ct => "bright bone, near-black air and soft tissue ordered by attenuation",
        Modality::Cbct => "compressed soft-tissue contrast with granular cone-beam noise and mild streaks",
        Modality::Pet => "a blurred tracer-uptake map with low anatomical detail",
        Modality::Mr => "MRI soft-tissue signal with dark cortical bone and air",
        Modality::MrT1 => "dark CSF and white matter brighter than gray matter",
        Modality::MrT1ce => "a T1 baseline with enhancing vessels, dura and enhancing lesions",
        Modality::MrT2 => "bright CSF and fluid with white matter darker than gray matter",
        Modality::MrFlair => "T2-like contrast with suppressed CSF and bright edema",
    }
}

fn generated_prompt(route: &Route) -> String {
    let region = route.dataset.region();
    format!(
        "Convert a {region} {src} slice to a {tgt} appearance. Keep anatomy, voxel grid, field-of-view, \
         slice position, and lesion morphology strictly unchanged (1:1 mapping). Modify only contrast \
         and texture so the result shows {look}. No hallucinated anatomy or warping.",
        src = route.src.display_name(),
        tgt = route.tgt.display_name(),
        look = target_appearance(route.tgt),
    )
}

fn generated_pool(route: &Route) -> Vec<String> {
    let region = route.dataset.region();
    let (src, tgt) = (route.src.display_name(), route.tgt.display_name());
    vec![
        format!("{src} to {tgt} ({region}): produce {}; anatomy and lesions stay fixed.", target_appearance(route.tgt)),
        format!("Re-render the {region} {src} slice with {tgt} contrast, keeping every structure in place."),
        format!("Change only the {region} appearance from {src} to {tgt}; geometry, slice position and lesion shape are preserved."),
    ]
}

/// Long-form synthesis prompt for a catalog route.
pub fn render_synthesis_prompt(route: &Route) -> Result<String, PromptError> {
    if !route_catalog().contains(route) {
        return Err(RouteError::Unknown(route.route_id()).into());
    }
    let id = route.route_id();
    Ok(published_prompt(&id).map(str::to_owned).unwrap_or_else(|| generated_prompt(route)))
}

/// Concise per-route descriptions used as TIA options.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RouteDescriptionPools {
    pools: BTreeMap<Route, Vec<String>>,
}

impl Default for RouteDescriptionPools {
    fn default() -> Self {
        let pools = route_catalog().iter().map(|r| (*r, generated_pool(r))).collect();
        Self { pools }
    }
}

impl RouteDescriptionPools {
    pub fn from_map(map: BTreeMap<String, Vec<String>>) -> Result<Self, PromptError> {
        let mut pools = BTreeMap::new();
        for (route_id, descs) in map {
            let route: Route = route_id.parse()?;
            if descs.len() < MIN_POOL_SIZE {
                return Err(PromptError::PoolTooSmall { route_id, len: descs.len() });
            }
            let mut seen = std::collections::BTreeSet::new();
            if !descs.iter().all(|d| seen.insert(d)) {
                return Err(PromptError::DuplicateDescription { route_id });
            }
            pools.insert(route, descs);
        }
        Ok(Self { pools })
    }

    /// Parses `{ "route_id": ["description", ...], ... }`.
    pub fn from_json(text: &str) -> Result<Self, PromptError> {
        Self::from_map(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        let map: BTreeMap<String, &Vec<String>> = self.pools.iter().map(|(r, d)| (r.route_id(), d)).collect();
        serde_json::to_string_pretty(&map).expect("pools serialize")
    }

    pub fn get(&self, route: &Route) -> Option<&[String]> {
        self.pools.get(route).map(Vec::as_slice)
    }

    pub fn routes(&self) -> impl Iterator<Item = &Route> {
        self.pools.keys()
    }

    pub fn len(&self) -> usize {
        self.pools.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pools.is_empty()
    }

    /// The route whose pool contains `description`, if any.
    pub fn route_of(&self, description: &str) -> Option<Route> {
        self.pools.iter().find(|(_, d)| d.iter().any(|x| x == description)).map(|(r, _)| *r)
    }
}

/// Question stem for a CTS instance.
pub fn cts_stem(route: &Route) -> String {
    format!(
        "The first image is a {region} {src} slice. Which candidate is the {tgt} slice acquired at the same \
         anatomical position of the same patient?",
        region = route.dataset.region(),
        src = route.src.display_name(),
        tgt = route.tgt.display_name(),
    )
}

pub fn mi_stem() -> String {
    "What is the imaging modality of this slice?".to_owned()
}

pub fn tia_stem() -> String {
    "The first image is a source slice and the second image is the paired target slice of the same \
     anatomy. Which description matches the transformation from the first image to the second?"
        .to_owned()
}

fn preamble(task: Task) -> &'static str {
    match task {
        Task::Cts => "Task: conditional target selection.",
        Task::Mi => "Task: modality identification.",
        Task::Tia => "Task: transformation instruction alignment.",
    }
}

/// Full question text: preamble, image placeholders, stem, lettered options,
/// answer instruction.
pub fn render_question(inst: &UnderstandingInstance) -> String {
    let mut out = String::new();
    out.push_str(preamble(inst.task));
    out.push('\n');
    // Shown images, in image_refs order. CTS candidates follow the source
    // image, so their placeholders are referenced from the option lines.
    let shown = match inst.task {
        Task::Cts => 1,
        _ => inst.image_refs.len(),
    };
    for i in 0..shown {
        out.push_str(&format!("<image_{}>\n", i + 1));
    }
    out.push_str(&inst.prompt);
    out.push('\n');
    for (i, opt) in inst.options.iter().enumerate() {
        let letter = crate::domain::option_letter(i).unwrap_or('?');
        match inst.task {
            Task::Cts => {
                let pos = inst.image_refs.iter().position(|r| r == opt).map(|p| p + 1).unwrap_or(i + 2);
                out.push_str(&format!("{letter}. <image_{pos}>\n"));
            }
            _ => out.push_str(&format!("{letter}. {opt}\n")),
        }
    }
    out.push_str("Answer with the letter of the correct option only.");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::InstanceMeta;

    fn route(id: &str) -> Route {
        id.parse().unwrap()
    }

    #[test]
    fn published_prompts_are_used() {
        let p = render_synthesis_prompt(&route("synthrad_pelvis/ct_to_cbct")).unwrap();
        assert!(p.starts_with("Convert a non-contrast pelvic CT slice"));
        let p = render_synthesis_prompt(&route("brats/t1_to_t2")).unwrap();
        assert!(p.starts_with("Convert this MRI T1"));
        let published = route_catalog().iter().filter(|r| published_prompt(&r.route_id()).is_some()).count();
        assert_eq!(published, 6);
    }

    #[test]
    fn generated_prompt_structure() {
        let p = render_synthesis_prompt(&route("brats/flair_to_t2")).unwrap();
        assert!(p.contains("MRI FLAIR") && p.contains("MRI T2"));
        assert!(p.contains("strictly unchanged"));
        assert!(p.contains("No hallucinated anatomy"));
    }

    #[test]
    fn every_route_has_prompt_and_pool() {
        let pools = RouteDescriptionPools::default();
        let mut all = std::collections::BTreeSet::new();
        for r in route_catalog() {
            assert!(!render_synthesis_prompt(r).unwrap().is_empty());
            let pool = pools.get(r).unwrap();
            assert!(pool.len() >= MIN_POOL_SIZE);
            for d in pool {
                assert!(all.insert(d.clone()), "description shared across routes: {d}");
            }
        }
    }

    #[test]
    fn pools_json_roundtrip_and_validation() {
        let pools = RouteDescriptionPools::default();
        assert_eq!(RouteDescriptionPools::from_json(&pools.to_json()).unwrap(), pools);
        assert!(matches!(
            RouteDescriptionPools::from_json(r#"{"brats/t1_to_t2": ["a", "b"]}"#),
            Err(PromptError::PoolTooSmall { .. })
        ));
        assert!(matches!(
            RouteDescriptionPools::from_json(r#"{"brats/t1_to_t2": ["a", "b", "a"]}"#),
            Err(PromptError::DuplicateDescription { .. })
        ));
        assert!(matches!(
            RouteDescriptionPools::from_json(r#"{"brats/t1_to_ct": ["a", "b", "c"]}"#),
            Err(PromptError::UnknownRoute(_))
        ));
    }

    fn cts_instance() -> UnderstandingInstance {
        let r = route("synthrad_brain/ct_to_cbct");
        let opts: Vec<String> = ["v#3", "v#5", "v#4", "v#6"].iter().map(|s| s.to_string()).collect();
        let mut refs = vec!["s#4".to_string()];
        refs.extend(opts.iter().cloned());
        UnderstandingInstance {
            instance_id: "cts/x/00004/0000".into(),
            task: Task::Cts,
            prompt: cts_stem(&r),
            image_refs: refs,
            options: opts,
            answer_index: 2,
            answer_letter: "C".into(),
            meta: InstanceMeta {
                route_id: Some(r.route_id()),
                volume_id: "s".into(),
                slice_index: 4,
                k_window: Some(5),
                distractor_route_ids: None,
                template_version: TEMPLATE_VERSION,
            },
        }
    }

    #[test]
    fn cts_question_layout() {
        let q = render_question(&cts_instance());
        for l in ["A. <image_2>", "B. <image_3>", "C. <image_4>", "D. <image_5>"] {
            assert!(q.contains(l), "{q}");
        }
        assert!(!q.contains("E. "));
        assert!(q.contains("CBCT slice"));
        assert_eq!(q, render_question(&cts_instance()));
    }

    #[test]
    fn mi_question_has_one_placeholder() {
        let mut inst = cts_instance();
        inst.task = Task::Mi;
        inst.prompt = mi_stem();
        inst.image_refs = vec!["s#4".into()];
        inst.options = vec!["CT".into(), "CBCT".into()];
        inst.answer_index = 0;
        inst.answer_letter = "A".into();
        let q = render_question(&inst);
        assert_eq!(q.matches("<image_").count(), 1);
        assert!(!q.contains("<image_2>"));
        assert!(q.contains("A. CT\nB. CBCT\n"));
    }

    #[test]
    fn option_order_changes_text() {
        let a = cts_instance();
        let mut b = cts_instance();
        b.options.swap(0, 1);
        assert_ne!(render_question(&a), render_question(&b));
    }
}
