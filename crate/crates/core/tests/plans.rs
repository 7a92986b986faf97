mod common;

use common::*;
use texsync_core::denoise::CfgSchedule;
use texsync_core::mvis::{MergePolicy, StagePlan};
use texsync_core::scene::toy::ToyRoomSpec;
use texsync_core::scene::{
    derive_style, dir_label, furniture_prompt, place_cameras, stage1_prompt, CameraPolicy, PROMPT_THRESHOLD,
};

#[test]
fn merge_exponent_and_guidance_ramp_linearly() {
    let steps = schedule().inference_steps();
    let merge = MergePolicy::default();
    let cfg = CfgSchedule::default();
    assert_eq!(merge.exponent(0, steps), 1.0);
    assert_eq!(merge.exponent(steps - 1, steps), 6.0);
    assert_eq!(cfg.scale(0, steps), 10.0);
    assert_eq!(cfg.scale(steps - 1, steps), 7.0);
    let mid = merge.exponent(24, steps);
    assert!((mid - (1.0 + 5.0 * 24.0 / 49.0)).abs() < 1e-12);
}

#[test]
fn stage_lengths_follow_the_boundaries() {
    let s = schedule();
    assert_eq!(StagePlan::mvis().stage_lengths(&s), [6, 20, 10, 14]);
    assert_eq!(StagePlan::mvrs().stage_lengths(&s), [11, 15, 10, 14]);
    // A timestep exactly on a boundary belongs to the earlier stage.
    assert_eq!(StagePlan::mvis().stage_of(900, 1000), 0);
    assert_eq!(StagePlan::mvis().stage_of(899, 1000), 1);
    assert_eq!(StagePlan::mvis().stage_of(299, 1000), 3);
}

#[test]
fn step_kinds_alternate_inside_the_third_stage() {
    let s = schedule();
    let kinds = StagePlan::mvis().steps(&s).unwrap();
    assert!(kinds[..6].iter().all(|k| !k.project));
    assert!(kinds[6..26].iter().all(|k| k.project));
    let third: Vec<bool> = kinds[26..36].iter().map(|k| k.project).collect();
    assert_eq!(third, [true, false, true, false, true, false, true, false, true, false]);
    assert!(kinds[36..].iter().all(|k| !k.project));
    assert!(kinds.iter().all(|k| !k.repaint));

    let repaint = StagePlan::mvrs().steps(&s).unwrap();
    assert!(repaint[..26].iter().all(|k| k.repaint));
    assert!(repaint[26..].iter().all(|k| !k.repaint));
}

#[test]
fn invalid_stage_bounds_are_rejected() {
    let mut plan = StagePlan::mvis();
    plan.bounds = [0.5, 0.9, 0.3];
    assert!(plan.validate().is_err());
    plan.bounds = [1.0, 0.5, 0.3];
    assert!(plan.validate().is_err());
}

#[test]
fn camera_presets_place_the_expected_rigs() {
    let scene = ToyRoomSpec::default().scene().unwrap();
    let room = scene.room_bounds();
    let global = place_cameras(&CameraPolicy::global(), &room).unwrap();
    let e = room.extent();
    assert_eq!(global.len(), 6);
    assert!((global.distance - 0.5 * e.x.min(e.z)).abs() < 1e-12);
    assert!(global
        .views
        .iter()
        .all(|v| v.elevation_deg == 0.0 && v.camera.fov_degrees == 60.0));

    let frame = place_cameras(&CameraPolicy::room_frame(), &room).unwrap();
    assert_eq!(frame.len(), 12);
    assert!(frame.views.iter().all(|v| v.camera.fov_degrees == 80.0));

    for inst in scene.furniture() {
        let rig = place_cameras(&CameraPolicy::furniture(), &inst.bounds).unwrap();
        assert_eq!(rig.len(), 9);
        assert!((rig.distance - 0.95 * inst.bounds.diagonal()).abs() < 1e-12);
        let elevations: Vec<f64> = rig.views.iter().map(|v| v.elevation_deg).collect();
        assert_eq!(elevations, [0.0, 30.0, 0.0, 30.0, 0.0, 30.0, 0.0, 30.0, 0.0]);
        for v in &rig.views {
            let d = (texsync_core::geometry::Point::from(v.camera.position) - rig.center).norm();
            assert!((d - rig.distance).abs() < 1e-9);
        }
    }
}

#[test]
fn bad_camera_policies_are_rejected() {
    let room = ToyRoomSpec::default().scene().unwrap().room_bounds();
    let mut p = CameraPolicy::global();
    p.count = 0;
    assert!(place_cameras(&p, &room).is_err());
    let mut p = CameraPolicy::global();
    p.elevations_deg = vec![90.0];
    assert!(place_cameras(&p, &room).is_err());
    let mut p = CameraPolicy::global();
    p.fov_deg = 180.0;
    assert!(place_cameras(&p, &room).is_err());
}

#[test]
fn global_prompt_names_furniture_above_the_threshold_only() {
    let scene = ToyRoomSpec::default().scene().unwrap();
    let base = scene.prompt.trim_end_matches('.').to_string();
    assert_eq!(stage1_prompt(&scene, &[], PROMPT_THRESHOLD), base);
    assert_eq!(
        stage1_prompt(&scene, &[(1, 0.0101), (2, 0.01), (3, 0.5)], PROMPT_THRESHOLD),
        format!("{base} with single bed and chair")
    );
    let all = stage1_prompt(&scene, &[(1, 0.2), (2, 0.2), (3, 0.2)], PROMPT_THRESHOLD);
    assert_eq!(all, format!("{base} with single bed, wardrobe and chair"));
}

#[test]
fn furniture_prompts_carry_style_and_direction() {
    assert_eq!(derive_style("A Chinese style bedroom").as_deref(), Some("Chinese"));
    assert_eq!(derive_style("A bedroom"), None);
    assert_eq!(
        furniture_prompt(Some("Chinese"), "chair", "front"),
        "A Chinese-style chair, front view"
    );
    assert_eq!(furniture_prompt(None, "chair", "rear"), "A chair, rear view");
    assert_eq!(dir_label(0.0, 0.0), "front");
    assert_eq!(dir_label(22.5, 0.0), "front side");
    assert_eq!(dir_label(-40.0, 30.0), "front side");
    assert_eq!(dir_label(90.0, 0.0), "side");
    assert_eq!(dir_label(180.0, 0.0), "rear");
    assert_eq!(dir_label(0.0, 75.0), "top-down");
}
