use super::cameras::PlacedView;
use super::manifest::{Role, Scene, SceneInstance};

/// Minimum share of a view's pixels an instance must exceed to be named.
pub const PROMPT_THRESHOLD: f64 = 0.01;

/// Which prompt template a view uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PromptContext {
    /// Whole-room sampling: holistic prompt plus the visible furniture.
    Global,
    RoomFrame,
    Furniture {
        instance: u32,
    },
}

/// Share of all pixels covered by each instance, in manifest order.
pub fn instance_pixel_fractions(scene: &Scene, face_id: &[i32]) -> Vec<(u32, f64)> {
    let total = face_id.len().max(1) as f64;
    let mut counts = std::collections::BTreeMap::<u32, usize>::new();
    for &f in face_id {
        if f >= 0 {
            *counts.entry(scene.mesh.face_instance(f as usize)).or_default() += 1;
        }
    }
    scene
        .instances
        .iter()
        .map(|i| (i.id, counts.get(&i.id).copied().unwrap_or(0) as f64 / total))
        .collect()
}

/// Holistic prompt extended with `with A, B and C` for the furniture whose
/// pixel fraction strictly exceeds `threshold`. Repeated labels appear once.
pub fn stage1_prompt(scene: &Scene, fractions: &[(u32, f64)], threshold: f64) -> String {
    let mut labels: Vec<&str> = Vec::new();
    for inst in scene.furniture() {
        let frac = fractions.iter().find(|(id, _)| *id == inst.id).map_or(0.0, |(_, f)| *f);
        if frac > threshold && !labels.contains(&inst.label.as_str()) {
            labels.push(&inst.label);
        }
    }
    let base = scene.prompt.trim_end_matches('.');
    match labels.split_last() {
        None => base.to_string(),
        Some((only, [])) => format!("{base} with {only}"),
        Some((last, rest)) => format!("{base} with {} and {last}", rest.join(", ")),
    }
}

pub fn room_frame_prompt(scene: &Scene) -> String {
    format!("{}, without furniture", scene.prompt.trim_end_matches('.'))
}

/// The word(s) preceding `style` in the holistic prompt, e.g. `Chinese` from
/// `A Chinese style bedroom`.
pub fn derive_style(prompt: &str) -> Option<String> {
    let words: Vec<&str> = prompt.split_whitespace().collect();
    let pos = words.iter().position(|w| {
        w.trim_matches(|c: char| !c.is_alphanumeric())
            .eq_ignore_ascii_case("style")
    })?;
    let style = words[..pos]
        .iter()
        .rev()
        .take_while(|w| !matches!(w.to_ascii_lowercase().as_str(), "a" | "an" | "the"))
        .collect::<Vec<_>>();
    if style.is_empty() {
        return None;
    }
    Some(style.into_iter().rev().copied().collect::<Vec<_>>().join(" "))
}

/// Azimuth of a view relative to an instance's front, wrapped to `[-180, 180)`.
pub fn relative_azimuth(view_azimuth_deg: f64, front_deg: f64) -> f64 {
    (view_azimuth_deg - front_deg + 180.0).rem_euclid(360.0) - 180.0
}

/// Direction word for a view at relative azimuth `az` and elevation `el` (degrees).
pub fn dir_label(az: f64, el: f64) -> &'static str {
    if el > 60.0 {
        return "top-down";
    }
    let a = relative_azimuth(az, 0.0);
    // Bins are half-open on the positive side, mirrored for negative azimuths.
    let within = |lo: f64, hi: f64| (lo..hi).contains(&a) || (-hi..-lo).contains(&a);
    if (-22.5..22.5).contains(&a) {
        "front"
    } else if within(22.5, 67.5) {
        "front side"
    } else if within(67.5, 112.5) {
        "side"
    } else {
        "rear"
    }
}

pub fn furniture_prompt(style: Option<&str>, label: &str, dir: &str) -> String {
    match style {
        Some(s) if !s.is_empty() => format!("A {s}-style {label}, {dir} view"),
        _ => format!("A {label}, {dir} view"),
    }
}

fn scene_style(scene: &Scene) -> Option<String> {
    scene.style.clone().or_else(|| derive_style(&scene.prompt))
}

/// Prompt for one view. `face_id` is the view's rasterized face buffer and is
/// only consulted in the global context.
pub fn build_view_prompt(scene: &Scene, ctx: PromptContext, view: &PlacedView, face_id: &[i32]) -> String {
    match ctx {
        PromptContext::Global => {
            let fractions = instance_pixel_fractions(scene, face_id);
            stage1_prompt(scene, &fractions, PROMPT_THRESHOLD)
        }
        PromptContext::RoomFrame => room_frame_prompt(scene),
        PromptContext::Furniture { instance } => {
            let inst: Option<&SceneInstance> = scene.instance(instance).filter(|i| i.role == Role::Furniture);
            let (label, front) = inst.map_or(("object", 0.0), |i| (i.label.as_str(), i.front_deg));
            let dir = dir_label(relative_azimuth(view.azimuth_deg, front), view.elevation_deg);
            furniture_prompt(scene_style(scene).as_deref(), label, dir)
        }
    }
}
