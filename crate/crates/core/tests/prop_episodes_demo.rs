mod common;

use std::sync::Arc;

use cotnav::demo::{filter_demos, replay, scripted_demo, validate_trajectory};
use cotnav::episodes::{geodesic_distance_with, make_splits, SplitMode};
use cotnav::hcot::{AnnotatorConfig, Reasoner};
use cotnav::nav::Known;
use cotnav::sim::{Action, EpisodeStatus, SimConfig};
use cotnav::world::CellKind;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn geodesic_matches_oracle_and_is_zero_only_inside_radius(seed in 0u64..10_000, pick in any::<prop::sample::Index>(), cat in any::<prop::sample::Index>(), radius in 0u32..3) {
        let scene = common::scene(seed);
        let floor: Vec<_> = scene.floor_cells().collect();
        let from = floor[pick.index(floor.len())];
        let cats: Vec<String> = scene.categories().into_iter().collect();
        let category = &cats[cat.index(cats.len())];
        let d = geodesic_distance_with(&scene, from, category, radius).unwrap();
        let hops = common::oracle_geodesic_hops(&scene, from, category, radius).unwrap();
        prop_assert_eq!(d, f64::from(hops) * scene.cell_size_m);
        let within = scene
            .instances_of(category)
            .any(|o| common::bfs(&scene, o.cell).get(&from).is_some_and(|&h| h <= radius));
        prop_assert_eq!(d == 0.0, within);
    }

    #[test]
    fn splits_are_disjoint(n in 2usize..30, seed in any::<u64>(), object_gen in any::<bool>()) {
        let ids: Vec<String> = (0..n).map(|i| format!("scene-{i:03}")).collect();
        let v = common::vocab();
        let mode = if object_gen { SplitMode::ObjectGen } else { SplitMode::SceneGen };
        let s = cotnav::episodes::make_splits_by_id(&ids, &v, mode, seed).unwrap();
        prop_assert!(s.seen_categories.iter().all(|c| !s.unseen_categories.contains(c)));
        let mut all: Vec<String> = s.seen_categories.iter().chain(&s.unseen_categories).cloned().collect();
        all.sort();
        let mut expect = v.object_categories.clone();
        expect.sort();
        prop_assert_eq!(all, expect);
        if object_gen {
            prop_assert_eq!(s.unseen_categories.len(), 5);
        } else {
            prop_assert!(s.train_scenes.iter().all(|t| !s.test_scenes.contains(t)));
            prop_assert_eq!(s.train_scenes.len() + s.test_scenes.len(), n);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn scripted_demos_are_consistent(seed in 0u64..10_000, ep in 0usize..3, demo_seed in any::<u64>()) {
        let scene = common::scene(seed);
        let episode = &common::episodes(&scene, 3, seed)[ep];
        let config = SimConfig::default();
        let t = scripted_demo(scene.clone(), episode, demo_seed, config).unwrap();
        let last = *t.actions().last().unwrap();
        prop_assert_eq!(last == Action::Stop, matches!(t.outcome, EpisodeStatus::Success | EpisodeStatus::FailureStop));
        if t.outcome == EpisodeStatus::Success {
            prop_assert!(t.path_length_m >= episode.geodesic_l_m);
        }
        let again = replay(scene.clone(), episode, &t.actions(), t.demo_source, config).unwrap();
        prop_assert_eq!(&again, &t);
        validate_trajectory(scene.clone(), &t, config).unwrap();

        let (kept, _) = filter_demos(vec![t.clone()]);
        for k in &kept {
            prop_assert!(k.final_observation.sees_category(&episode.target_category));
            let stop = k.final_observation.pose.position;
            let g = geodesic_distance_with(&scene, stop, &episode.target_category, config.success_radius_cells).unwrap();
            prop_assert_eq!(g, 0.0);
        }

        let mut r = Reasoner::new(common::priors(), AnnotatorConfig::default(), &episode.episode_id);
        let mut explored_before = 0;
        let mut known_before = 0;
        for s in &t.steps {
            r.reason(&s.observation).unwrap();
            let m = r.memory();
            prop_assert!(m.explored.len() >= explored_before && m.known.len() >= known_before);
            explored_before = m.explored.len();
            known_before = m.known.len();
            for (c, k) in &m.known {
                let truth = if scene.size.contains(*c) { scene.cells[scene.size.index(*c)] } else { CellKind::Wall };
                prop_assert_eq!(*k == Known::Floor, truth == CellKind::Floor);
            }
        }
    }
}

#[test]
fn splits_from_scenes_match_splits_from_ids() {
    let scenes: Vec<_> = (0..6).map(|s| Arc::unwrap_or_clone(common::scene(s))).collect();
    let ids: Vec<String> = scenes.iter().map(|s| s.id.clone()).collect();
    let v = common::vocab();
    assert_eq!(
        make_splits(&scenes, &v, SplitMode::SceneGen, 3).unwrap(),
        cotnav::episodes::make_splits_by_id(&ids, &v, SplitMode::SceneGen, 3).unwrap()
    );
}
