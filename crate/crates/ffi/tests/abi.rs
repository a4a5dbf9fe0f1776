use std::ffi::{CStr, CString};
use std::ptr;

use cotnav_ffi::*;

fn last_error() -> String {
    let p = cotnav_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn scene_roundtrip_through_json() {
    unsafe {
        let mut scene = ptr::null_mut();
        assert_eq!(cotnav_scene_generate(7, 16, 16, 4, &mut scene), CotnavStatus::Ok);
        assert!(cotnav_last_error().is_null());
        let (mut w, mut h) = (0, 0);
        assert_eq!(cotnav_scene_size(scene, &mut w, &mut h), CotnavStatus::Ok);
        assert_eq!((w, h), (16, 16));

        let mut json = ptr::null_mut();
        assert_eq!(cotnav_scene_to_json(scene, &mut json), CotnavStatus::Ok);
        let mut again = ptr::null_mut();
        assert_eq!(cotnav_scene_from_json(json, &mut again), CotnavStatus::Ok);
        let mut json2 = ptr::null_mut();
        assert_eq!(cotnav_scene_to_json(again, &mut json2), CotnavStatus::Ok);
        assert_eq!(CStr::from_ptr(json), CStr::from_ptr(json2));

        cotnav_string_free(json);
        cotnav_string_free(json2);
        cotnav_scene_free(scene);
        cotnav_scene_free(again);
        cotnav_scene_free(ptr::null_mut());
    }
}

#[test]
fn bad_inputs_set_status_and_message() {
    unsafe {
        let mut scene = ptr::null_mut();
        assert_eq!(cotnav_scene_generate(1, 4, 4, 2, &mut scene), CotnavStatus::InvalidArgument);
        assert!(scene.is_null());
        assert!(!last_error().is_empty());

        let bad = CString::new("{not json").unwrap();
        assert_eq!(cotnav_scene_from_json(bad.as_ptr(), &mut scene), CotnavStatus::Parse);
        assert!(last_error().contains("line"));

        assert_eq!(cotnav_scene_from_json(ptr::null(), &mut scene), CotnavStatus::NullArgument);
        assert!(last_error().contains("json"));
        assert_eq!(cotnav_scene_generate(1, 16, 16, 4, ptr::null_mut()), CotnavStatus::NullArgument);

        let mut w = 0.0;
        assert_eq!(cotnav_adaptive_weight(0.5, -1.0, 0.5, &mut w), CotnavStatus::InvalidArgument);
        assert!(last_error().contains("alpha"));
        assert_eq!(cotnav_adaptive_weight(1.5, 1.0, 0.5, &mut w), CotnavStatus::InvalidArgument);
        // A success clears the message.
        assert_eq!(cotnav_adaptive_weight(0.5, 10.0, 0.5, &mut w), CotnavStatus::Ok);
        assert!(cotnav_last_error().is_null());
        assert_eq!(w, 0.5);
    }
}

#[test]
fn geodesic_distance_and_unknown_category() {
    unsafe {
        let mut scene = ptr::null_mut();
        assert_eq!(cotnav_scene_generate(3, 16, 16, 4, &mut scene), CotnavStatus::Ok);
        let mut json = ptr::null_mut();
        cotnav_scene_to_json(scene, &mut json);
        let parsed: serde_json::Value = serde_json::from_str(CStr::from_ptr(json).to_str().unwrap()).unwrap();
        cotnav_string_free(json);
        let obj = &parsed["scene"]["objects"][0];
        let cat = CString::new(obj["category"].as_str().unwrap()).unwrap();
        let (x, y) = (obj["cell"][0].as_i64().unwrap() as i32, obj["cell"][1].as_i64().unwrap() as i32);
        // Objects sit on floor cells, so the distance from the instance's own
        // cell is zero.
        let mut d = -1.0;
        assert_eq!(cotnav_scene_geodesic_distance(scene, x, y, cat.as_ptr(), 1, &mut d), CotnavStatus::Ok);
        assert_eq!(d, 0.0);
        let piano = CString::new("piano").unwrap();
        assert_eq!(
            cotnav_scene_geodesic_distance(scene, x, y, piano.as_ptr(), 1, &mut d),
            CotnavStatus::Unreachable
        );
        cotnav_scene_free(scene);
    }
}

#[test]
fn metrics_over_the_boundary() {
    let eps = [
        CotnavEpisodeInput { success: 1, shortest_path_m: 2.0, agent_path_m: 4.0, start_distance_m: 2.0, final_distance_m: 0.0 },
        CotnavEpisodeInput { success: 0, shortest_path_m: 3.0, agent_path_m: 3.0, start_distance_m: 3.0, final_distance_m: 1.5 },
    ];
    let mut m = CotnavMetrics::default();
    unsafe {
        assert_eq!(cotnav_metrics(eps.as_ptr(), eps.len(), &mut m), CotnavStatus::Ok);
        assert_eq!(m.n, 2);
        assert_eq!(m.sr, 0.5);
        assert!((m.spl - 0.25).abs() < 1e-12);
        assert!((m.soft_spl - 0.5).abs() < 1e-12);
        assert_eq!(cotnav_metrics(eps.as_ptr(), 0, &mut m), CotnavStatus::InvalidArgument);
        let bad = [CotnavEpisodeInput { agent_path_m: -1.0, ..eps[0] }];
        assert_eq!(cotnav_metrics(bad.as_ptr(), 1, &mut m), CotnavStatus::InvalidArgument);
    }
}

#[test]
fn policy_load_and_predict() {
    use cotnav::policy::{FeatureSet, PolicyModel, PolicyParams, TrainConfig};
    use cotnav::world::CategoryVocab;
    let vocab = CategoryVocab::default();
    let dim = FeatureSet::Cot.dim_for(vocab.len());
    let mut params = PolicyParams::zeros(dim);
    params.bias[5] = 3.0;
    let model = PolicyModel::new(FeatureSet::Cot, &vocab, TrainConfig::default(), params, None);
    let json = CString::new(model.to_bytes().unwrap()).unwrap();
    unsafe {
        let mut policy = ptr::null_mut();
        assert_eq!(cotnav_policy_load(json.as_ptr(), &mut policy), CotnavStatus::Ok);
        let mut n = 0;
        assert_eq!(cotnav_policy_feature_dim(policy, &mut n), CotnavStatus::Ok);
        assert_eq!(n, dim);
        let x = vec![0.0; dim];
        let (mut action, mut probs) = (99u32, [0.0; 6]);
        assert_eq!(cotnav_policy_predict(policy, x.as_ptr(), dim, &mut action, probs.as_mut_ptr()), CotnavStatus::Ok);
        assert_eq!(action, 5);
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(cotnav_policy_predict(policy, x.as_ptr(), dim, &mut action, ptr::null_mut()), CotnavStatus::Ok);
        assert_eq!(cotnav_policy_predict(policy, x.as_ptr(), dim - 1, &mut action, ptr::null_mut()), CotnavStatus::InvalidArgument);
        assert!(last_error().contains("features"));
        cotnav_policy_free(policy);

        let wrong = CString::new(r#"{"kind":"scene"}"#).unwrap();
        assert_ne!(cotnav_policy_load(wrong.as_ptr(), &mut policy), CotnavStatus::Ok);
    }
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/cotnav.h")).unwrap();
    for name in [
        "cotnav_last_error",
        "cotnav_version",
        "cotnav_string_free",
        "cotnav_scene_generate",
        "cotnav_scene_from_json",
        "cotnav_scene_to_json",
        "cotnav_scene_size",
        "cotnav_scene_geodesic_distance",
        "cotnav_scene_free",
        "cotnav_adaptive_weight",
        "cotnav_metrics",
        "cotnav_policy_load",
        "cotnav_policy_feature_dim",
        "cotnav_policy_predict",
        "cotnav_policy_free",
        "typedef struct CotnavScene CotnavScene",
        "typedef struct CotnavPolicy CotnavPolicy",
        "COTNAV_STATUS_OK = 0",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
    let v = unsafe { CStr::from_ptr(cotnav_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}
