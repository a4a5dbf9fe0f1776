//! Demonstration trajectories: the scripted frontier searcher, replay
//! validation, and outcome filtering.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::artifact::{self, FORMAT_VERSION};
use crate::episodes::Episode;
use crate::error::{Error, Result};
use crate::geom::Cell;
use crate::nav::{explore_step, target_step, MapMemory, TargetStep, TurnBias};
use crate::sim::{self, Action, EpisodeStatus, Observation, SimConfig};
use crate::world::Scene;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DemoSource {
    Scripted,
    Human,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    /// Observation the action was chosen from.
    pub observation: Observation,
    pub action: Action,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub episode: Episode,
    pub steps: Vec<TrajectoryStep>,
    /// Observation returned by the last action.
    pub final_observation: Observation,
    pub outcome: EpisodeStatus,
    pub path_length_m: f64,
    pub demo_source: DemoSource,
}

impl Trajectory {
    pub fn actions(&self) -> Vec<Action> {
        self.steps.iter().map(|s| s.action).collect()
    }

    pub fn episode_id(&self) -> &str {
        &self.episode.episode_id
    }

    /// Cells occupied along the trajectory, start and end included.
    pub fn cells_visited(&self) -> Vec<Cell> {
        let mut cells: Vec<Cell> = self.steps.iter().map(|s| s.observation.pose.position).collect();
        cells.push(self.final_observation.pose.position);
        cells.dedup();
        cells
    }
}

/// Scripted searcher. Explores frontiers until the target has been sighted,
/// then walks known cells to it and stops once it is visible within the
/// success radius. It never consults the true shortest path.
pub fn scripted_demo(scene: Arc<Scene>, episode: &Episode, seed: u64, config: SimConfig) -> Result<Trajectory> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let default_bias = if rng.gen_bool(0.5) { TurnBias::Left } else { TurnBias::Right };
    let radius = config.success_radius_cells;
    let mut state = sim::reset(scene, episode, config)?;
    let mut obs = state.observe();
    let mut memory = MapMemory::new();
    let mut steps: Vec<TrajectoryStep> = Vec::new();
    loop {
        let bias = TurnBias::after(steps.last().map(|s| s.action), default_bias);
        let detections: Vec<(String, Cell)> = obs.visible_objects.iter().map(|o| (o.category.clone(), o.cell)).collect();
        memory.update(&obs.pose, &obs.seen_floor, &obs.seen_walls, &detections, radius);
        let visible_targets: Vec<Cell> = obs
            .visible_objects
            .iter()
            .filter(|o| o.category == episode.target_category)
            .map(|o| o.cell)
            .collect();
        let action = match target_step(&memory, &obs.pose, &episode.target_category, &visible_targets, radius, bias) {
            TargetStep::Stop => Action::Stop,
            TargetStep::Approach(a) => a,
            TargetStep::Unknown => explore_step(&memory, &obs.pose, bias).unwrap_or(Action::Stop),
        };
        let (next, next_obs) = sim::step(&state, action)?;
        steps.push(TrajectoryStep {
            observation: obs,
            action,
        });
        state = next;
        obs = next_obs;
        if state.status.is_terminal() {
            break;
        }
    }
    Ok(Trajectory {
        episode: episode.clone(),
        steps,
        final_observation: obs,
        outcome: state.status,
        path_length_m: state.path_length_m,
        demo_source: DemoSource::Scripted,
    })
}

/// Re-executes `actions` from the episode start, regenerating every
/// observation.
pub fn replay(scene: Arc<Scene>, episode: &Episode, actions: &[Action], source: DemoSource, config: SimConfig) -> Result<Trajectory> {
    if actions.is_empty() {
        return Err(Error::Precondition("replay needs at least one action".into()));
    }
    let mut state = sim::reset(scene, episode, config)?;
    let mut obs = state.observe();
    let mut steps = Vec::with_capacity(actions.len());
    for (i, &action) in actions.iter().enumerate() {
        if state.status.is_terminal() {
            return Err(Error::IllegalTransition(format!(
                "action {i} ({action}) follows the end of episode {}",
                episode.episode_id
            )));
        }
        let (next, next_obs) = sim::step(&state, action)?;
        steps.push(TrajectoryStep {
            observation: obs,
            action,
        });
        state = next;
        obs = next_obs;
    }
    Ok(Trajectory {
        episode: episode.clone(),
        steps,
        final_observation: obs,
        outcome: state.status,
        path_length_m: state.path_length_m,
        demo_source: source,
    })
}

/// Replays a stored trajectory and checks it reproduces exactly.
pub fn validate_trajectory(scene: Arc<Scene>, trajectory: &Trajectory, config: SimConfig) -> Result<()> {
    let replayed = replay(scene, &trajectory.episode, &trajectory.actions(), trajectory.demo_source, config)?;
    if replayed != *trajectory {
        let step = replayed
            .steps
            .iter()
            .zip(&trajectory.steps)
            .position(|(a, b)| a != b)
            .map(|i| format!("step {i}"))
            .unwrap_or_else(|| "final state".into());
        return Err(Error::Validation(format!(
            "trajectory {} diverges from replay at {step}",
            trajectory.episode_id()
        )));
    }
    let ends_with_stop = trajectory.steps.last().map(|s| s.action) == Some(Action::Stop);
    let stop_outcome = matches!(trajectory.outcome, EpisodeStatus::Success | EpisodeStatus::FailureStop);
    if ends_with_stop != stop_outcome {
        return Err(Error::Validation(format!(
            "trajectory {} ends with {:?} but outcome {:?}",
            trajectory.episode_id(),
            trajectory.steps.last().map(|s| s.action),
            trajectory.outcome
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterReport {
    pub kept: usize,
    pub removed_failure_stop: usize,
    pub removed_timeout: usize,
    pub removed_too_long: usize,
    pub removed_running: usize,
}

/// Keeps successful trajectories of at most 500 steps.
pub fn filter_demos(trajectories: Vec<Trajectory>) -> (Vec<Trajectory>, FilterReport) {
    let mut report = FilterReport::default();
    let mut kept = Vec::new();
    for t in trajectories {
        match t.outcome {
            _ if t.steps.len() > sim::MAX_STEPS as usize => report.removed_too_long += 1,
            EpisodeStatus::Success => {
                report.kept += 1;
                kept.push(t);
            }
            EpisodeStatus::FailureStop => report.removed_failure_stop += 1,
            EpisodeStatus::FailureTimeout => report.removed_timeout += 1,
            EpisodeStatus::Running => report.removed_running += 1,
        }
    }
    (kept, report)
}

#[derive(Serialize, Deserialize)]
struct TrajectoryHeader {
    format_version: u32,
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    manifest_hash: Option<String>,
    episode: Episode,
    outcome: EpisodeStatus,
    path_length_m: f64,
    demo_source: DemoSource,
    step_count: usize,
    final_observation: Observation,
}

#[derive(Serialize, Deserialize)]
struct StepLine {
    step_index: usize,
    observation: Observation,
    action: Action,
}

/// Header line with episode metadata, then one line per step. Scripted and
/// human demonstrations share this layout.
pub fn trajectory_to_jsonl(t: &Trajectory, manifest_hash: Option<&str>) -> Result<Vec<u8>> {
    let header = TrajectoryHeader {
        format_version: FORMAT_VERSION,
        kind: "trajectory".into(),
        manifest_hash: manifest_hash.map(str::to_string),
        episode: t.episode.clone(),
        outcome: t.outcome,
        path_length_m: t.path_length_m,
        demo_source: t.demo_source,
        step_count: t.steps.len(),
        final_observation: t.final_observation.clone(),
    };
    let lines: Vec<StepLine> = t
        .steps
        .iter()
        .enumerate()
        .map(|(i, s)| StepLine {
            step_index: i,
            observation: s.observation.clone(),
            action: s.action,
        })
        .collect();
    artifact::to_jsonl(&header, &lines)
}

pub fn trajectory_from_jsonl(text: &str) -> Result<Trajectory> {
    let (h, lines): (TrajectoryHeader, Vec<StepLine>) = artifact::from_jsonl(text)?;
    if h.kind != "trajectory" || h.format_version != FORMAT_VERSION {
        return Err(Error::Validation(format!("not a v{FORMAT_VERSION} trajectory file")));
    }
    if lines.len() != h.step_count {
        return Err(Error::Validation(format!(
            "trajectory {} declares {} steps but has {}",
            h.episode.episode_id,
            h.step_count,
            lines.len()
        )));
    }
    for (i, l) in lines.iter().enumerate() {
        if l.step_index != i {
            return Err(Error::Validation(format!("step line {i} carries index {}", l.step_index)));
        }
    }
    Ok(Trajectory {
        episode: h.episode,
        steps: lines
            .into_iter()
            .map(|l| TrajectoryStep {
                observation: l.observation,
                action: l.action,
            })
            .collect(),
        final_observation: h.final_observation,
        outcome: h.outcome,
        path_length_m: h.path_length_m,
        demo_source: h.demo_source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::episodes::sample_episodes;
    use crate::sim::AgentPose;
    use crate::world::{CellKind, RoomType};

    fn room8() -> Arc<Scene> {
        let rows = ["########", "#......#", "#......#", "#......#", "#......#", "#......#", "#......#", "########"];
        Arc::new(Scene::from_ascii("room8", &rows, RoomType::Bedroom, &[("bed", Cell::new(5, 5)), ("chair", Cell::new(2, 2))]).unwrap())
    }

    fn ep(scene: &Scene, pos: Cell, heading: u8, target: &str) -> Episode {
        let l = crate::episodes::geodesic_distance(scene, pos, target).unwrap();
        Episode {
            episode_id: "demo-0".into(),
            scene_id: scene.id.clone(),
            start_pose: AgentPose::new(pos, heading),
            target_category: target.into(),
            geodesic_l_m: l,
        }
    }

    #[test]
    fn single_room_success_within_30_steps() {
        let scene = room8();
        let e = ep(&scene, Cell::new(1, 1), 9, "bed");
        let t = scripted_demo(scene.clone(), &e, 0, SimConfig::default()).unwrap();
        assert_eq!(t.outcome, EpisodeStatus::Success);
        assert!(t.steps.len() <= 30, "{} steps", t.steps.len());
        assert!(t.path_length_m >= e.geodesic_l_m);
        assert!(t.final_observation.sees_category("bed"));
        validate_trajectory(scene, &t, SimConfig::default()).unwrap();
    }

    #[test]
    fn sealed_target_times_out() {
        let rows = ["########", "#...#..#", "#...#..#", "#...#..#", "########"];
        let mut s = Scene::from_ascii("sealed", &["########", "#......#", "#......#", "#......#", "########"], RoomType::Bedroom, &[("bed", Cell::new(6, 2))]).unwrap();
        for (y, row) in rows.iter().enumerate() {
            for (x, ch) in row.chars().enumerate() {
                let i = s.size.index(Cell::new(x as i32, y as i32));
                s.cells[i] = if ch == '#' { CellKind::Wall } else { CellKind::Floor };
            }
        }
        let scene = Arc::new(s);
        let e = Episode {
            episode_id: "sealed-0".into(),
            scene_id: scene.id.clone(),
            start_pose: AgentPose::new(Cell::new(1, 1), 0),
            target_category: "bed".into(),
            geodesic_l_m: f64::INFINITY,
        };
        let t = scripted_demo(scene, &e, 0, SimConfig::default()).unwrap();
        // The searcher exhausts the reachable area and gives up with a
        // stop; the episode fails either way.
        assert!(matches!(t.outcome, EpisodeStatus::FailureTimeout | EpisodeStatus::FailureStop));
        let (kept, report) = filter_demos(vec![t]);
        assert!(kept.is_empty());
        assert_eq!(report.kept, 0);
    }

    #[test]
    fn deterministic_and_replayable() {
        let scene = room8();
        let e = ep(&scene, Cell::new(6, 1), 6, "chair");
        let a = scripted_demo(scene.clone(), &e, 11, SimConfig::default()).unwrap();
        let b = scripted_demo(scene.clone(), &e, 11, SimConfig::default()).unwrap();
        assert_eq!(a, b);
        let r = replay(scene.clone(), &e, &a.actions(), DemoSource::Scripted, SimConfig::default()).unwrap();
        assert_eq!(r, a);
    }

    #[test]
    fn replay_errors() {
        let scene = room8();
        let e = ep(&scene, Cell::new(1, 1), 0, "bed");
        assert!(matches!(
            replay(scene.clone(), &e, &[], DemoSource::Human, SimConfig::default()),
            Err(Error::Precondition(_))
        ));
        assert!(matches!(
            replay(scene, &e, &[Action::Stop, Action::TurnLeft], DemoSource::Human, SimConfig::default()),
            Err(Error::IllegalTransition(_))
        ));
    }

    #[test]
    fn filter_counts_match_successes() {
        let scene = room8();
        let eps = sample_episodes(&scene, &["bed".into(), "chair".into()], 20, 5).unwrap();
        let mut demos = Vec::new();
        for (i, e) in eps.iter().enumerate() {
            let mut t = scripted_demo(scene.clone(), e, i as u64, SimConfig::default()).unwrap();
            if i % 3 == 0 {
                t.outcome = EpisodeStatus::FailureTimeout;
            }
            demos.push(t);
        }
        let successes = demos.iter().filter(|t| t.outcome == EpisodeStatus::Success).count();
        let (kept, report) = filter_demos(demos);
        assert_eq!(kept.len(), successes);
        assert_eq!(report.kept + report.removed_timeout + report.removed_failure_stop, 20);
    }

    #[test]
    fn jsonl_round_trip() {
        let scene = room8();
        let e = ep(&scene, Cell::new(1, 6), 0, "bed");
        let t = scripted_demo(scene, &e, 2, SimConfig::default()).unwrap();
        let bytes = trajectory_to_jsonl(&t, Some("h")).unwrap();
        let text = String::from_utf8(bytes).unwrap();
        assert_eq!(text.lines().count(), t.steps.len() + 1);
        assert_eq!(trajectory_from_jsonl(&text).unwrap(), t);
    }
}
