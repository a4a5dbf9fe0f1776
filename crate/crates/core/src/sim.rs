//! Episode semantics: agent pose, the six-action space, field-of-view
//! visibility, the step cap and success determination.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::episodes::Episode;
use crate::error::{Error, Result};
use crate::geom::{angle_diff, bresenham, Cardinal, Cell};
use crate::world::{CellKind, RoomType, Scene};

pub const HEADINGS: u8 = 12;
pub const HEADING_STEP_DEG: f64 = 30.0;
pub const HALF_FOV_DEG: f64 = 39.5;
pub const MAX_STEPS: u32 = 500;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    MoveForward = 0,
    TurnLeft = 1,
    TurnRight = 2,
    LookUp = 3,
    LookDown = 4,
    Stop = 5,
}

impl Action {
    pub const COUNT: usize = 6;
    pub const ALL: [Action; 6] = [
        Action::MoveForward,
        Action::TurnLeft,
        Action::TurnRight,
        Action::LookUp,
        Action::LookDown,
        Action::Stop,
    ];

    pub fn ordinal(self) -> usize {
        self as usize
    }

    pub fn from_ordinal(i: usize) -> Option<Action> {
        Action::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::MoveForward => "move_forward",
            Action::TurnLeft => "turn_left",
            Action::TurnRight => "turn_right",
            Action::LookUp => "look_up",
            Action::LookDown => "look_down",
            Action::Stop => "stop",
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Action {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Action::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Validation(format!("unknown action `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AgentPose {
    pub position: Cell,
    /// Index into 12 headings, clockwise from north in 30 degree steps.
    pub heading: u8,
    /// -1 (down 30 degrees), 0, or +1 (up 30 degrees).
    pub pitch: i8,
}

impl AgentPose {
    pub fn new(position: Cell, heading: u8) -> Self {
        AgentPose {
            position,
            heading,
            pitch: 0,
        }
    }

    pub fn heading_deg(&self) -> f64 {
        f64::from(self.heading) * HEADING_STEP_DEG
    }

    /// Lattice direction a forward move takes: headings within 45 degrees of
    /// a cardinal axis move along it.
    pub fn forward_direction(&self) -> Cardinal {
        match self.heading % HEADINGS {
            11 | 0 | 1 => Cardinal::North,
            2..=4 => Cardinal::East,
            5..=7 => Cardinal::South,
            _ => Cardinal::West,
        }
    }

    pub fn turned(self, right: bool) -> AgentPose {
        let heading = if right {
            (self.heading + 1) % HEADINGS
        } else {
            (self.heading + HEADINGS - 1) % HEADINGS
        };
        AgentPose { heading, ..self }
    }

    pub fn is_valid(&self) -> bool {
        self.heading < HEADINGS && (-1..=1).contains(&self.pitch)
    }

    /// Inclusive distance band, in cells, visible at this pitch.
    pub fn range_band(&self) -> (f64, f64) {
        match self.pitch {
            -1 => (0.0, 4.0),
            1 => (5.0, 10.0),
            _ => (1.0, 8.0),
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct SimConfig {
    pub success_radius_cells: u32,
    pub max_steps: u32,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            success_radius_cells: 1,
            max_steps: MAX_STEPS,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeStatus {
    Running,
    Success,
    FailureStop,
    FailureTimeout,
}

impl EpisodeStatus {
    pub fn is_terminal(self) -> bool {
        self != EpisodeStatus::Running
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VisibleObject {
    pub instance_id: u32,
    pub category: String,
    pub cell: Cell,
    /// Signed bearing relative to the heading; positive is to the right.
    pub bearing_deg: f64,
    pub distance_cells: f64,
}

/// What the agent perceives from one pose.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub step_index: u32,
    pub pose: AgentPose,
    pub target_category: String,
    pub visible_objects: Vec<VisibleObject>,
    /// Floor cells in the current view footprint (line of sight, in band).
    pub seen_floor: Vec<Cell>,
    /// Wall cells bounding the current view footprint.
    pub seen_walls: Vec<Cell>,
    /// Ground-truth room type. Kept for inspection; policies never read it.
    pub current_room_type_hidden: RoomType,
}

impl Observation {
    pub fn sees_category(&self, category: &str) -> bool {
        self.visible_objects.iter().any(|o| o.category == category)
    }
}

#[derive(Clone, Debug)]
pub struct EpisodeState {
    pub scene: Arc<Scene>,
    pub episode_id: String,
    pub target_category: String,
    pub pose: AgentPose,
    pub steps_taken: u32,
    pub status: EpisodeStatus,
    /// Non-colliding forward moves so far.
    pub forward_moves: u32,
    pub path_length_m: f64,
    pub config: SimConfig,
}

impl PartialEq for EpisodeState {
    fn eq(&self, o: &Self) -> bool {
        Arc::ptr_eq(&self.scene, &o.scene)
            && self.episode_id == o.episode_id
            && self.target_category == o.target_category
            && self.pose == o.pose
            && self.steps_taken == o.steps_taken
            && self.status == o.status
            && self.forward_moves == o.forward_moves
            && self.path_length_m == o.path_length_m
            && self.config == o.config
    }
}

fn line_clear(scene: &Scene, from: Cell, to: Cell) -> bool {
    let line = bresenham(from, to);
    if line.len() <= 2 {
        return true;
    }
    line[1..line.len() - 1].iter().all(|&c| scene.is_floor(c))
}

fn in_view(pose: &AgentPose, target: Cell) -> Option<f64> {
    let d = pose.position.euclidean(target);
    let (lo, hi) = pose.range_band();
    if d < lo || d > hi {
        return None;
    }
    if d > 0.0 {
        let off = angle_diff(pose.heading_deg(), pose.position.compass_to(target));
        if off.abs() > HALF_FOV_DEG {
            return None;
        }
    }
    Some(d)
}

/// Field-of-view visibility of a cell: within 39.5 degrees of the heading,
/// inside the pitch-dependent range band, and with no wall cell on the
/// Bresenham line between agent and cell.
pub fn visible(scene: &Scene, pose: &AgentPose, object_position: Cell) -> bool {
    in_view(pose, object_position).is_some() && scene.is_floor(object_position) && line_clear(scene, pose.position, object_position)
}

/// Builds the observation for a pose.
pub fn observe(scene: &Scene, pose: &AgentPose, target_category: &str, step_index: u32) -> Observation {
    let mut visible_objects = Vec::new();
    for o in &scene.objects {
        if visible(scene, pose, o.cell) {
            let bearing = if o.cell == pose.position {
                0.0
            } else {
                angle_diff(pose.heading_deg(), pose.position.compass_to(o.cell))
            };
            visible_objects.push(VisibleObject {
                instance_id: o.instance_id,
                category: o.category.clone(),
                cell: o.cell,
                bearing_deg: bearing,
                distance_cells: pose.position.euclidean(o.cell),
            });
        }
    }
    let (_, hi) = pose.range_band();
    let reach = hi.ceil() as i32;
    let mut seen_floor = vec![pose.position];
    let mut seen_walls = Vec::new();
    for y in (pose.position.y - reach)..=(pose.position.y + reach) {
        for x in (pose.position.x - reach)..=(pose.position.x + reach) {
            let c = Cell::new(x, y);
            if c == pose.position || !scene.size.contains(c) {
                continue;
            }
            if in_view(pose, c).is_none() || !line_clear(scene, pose.position, c) {
                continue;
            }
            match scene.cells[scene.size.index(c)] {
                CellKind::Floor => seen_floor.push(c),
                CellKind::Wall => seen_walls.push(c),
            }
        }
    }
    Observation {
        step_index,
        pose: *pose,
        target_category: target_category.to_string(),
        visible_objects,
        seen_floor,
        seen_walls,
        current_room_type_hidden: scene.room_type_at(pose.position),
    }
}

/// Hop distance from `from` to the nearest instance of `category`, over floor.
pub fn hops_to_category(scene: &Scene, from: Cell, category: &str) -> Option<u32> {
    let sources: Vec<Cell> = scene.instances_of(category).map(|o| o.cell).collect();
    if sources.is_empty() {
        return None;
    }
    scene.hop_field(&sources)[scene.size.index(from)]
}

pub fn reset(scene: Arc<Scene>, episode: &Episode, config: SimConfig) -> Result<EpisodeState> {
    if episode.scene_id != scene.id {
        return Err(Error::InvalidEpisode(format!(
            "episode {} references scene {}, not {}",
            episode.episode_id, episode.scene_id, scene.id
        )));
    }
    if !scene.is_floor(episode.start_pose.position) {
        return Err(Error::InvalidEpisode(format!(
            "episode {} starts on a non-floor cell {:?}",
            episode.episode_id, episode.start_pose.position
        )));
    }
    if !episode.start_pose.is_valid() {
        return Err(Error::InvalidEpisode(format!("episode {} has an invalid start pose", episode.episode_id)));
    }
    Ok(EpisodeState {
        scene,
        episode_id: episode.episode_id.clone(),
        target_category: episode.target_category.clone(),
        pose: episode.start_pose,
        steps_taken: 0,
        status: EpisodeStatus::Running,
        forward_moves: 0,
        path_length_m: 0.0,
        config,
    })
}

impl EpisodeState {
    pub fn observe(&self) -> Observation {
        observe(&self.scene, &self.pose, &self.target_category, self.steps_taken)
    }

    /// Geodesic distance to the target in meters (0 inside the success radius).
    pub fn distance_to_target_m(&self) -> Result<f64> {
        crate::episodes::geodesic_distance_with(&self.scene, self.pose.position, &self.target_category, self.config.success_radius_cells)
    }
}

/// Advances one action. Collisions consume a step without moving; `stop`
/// ends the episode with success iff the target is visible and within the
/// success radius.
pub fn step(state: &EpisodeState, action: Action) -> Result<(EpisodeState, Observation)> {
    if state.status.is_terminal() {
        return Err(Error::IllegalTransition(format!(
            "episode {} already ended with {:?}",
            state.episode_id, state.status
        )));
    }
    let mut next = state.clone();
    next.steps_taken += 1;
    match action {
        Action::MoveForward => {
            let dest = next.pose.forward_direction().step(next.pose.position);
            if next.scene.is_floor(dest) {
                next.pose.position = dest;
                next.forward_moves += 1;
                next.path_length_m = f64::from(next.forward_moves) * next.scene.cell_size_m;
            }
        }
        Action::TurnLeft => next.pose = next.pose.turned(false),
        Action::TurnRight => next.pose = next.pose.turned(true),
        Action::LookUp => next.pose.pitch = (next.pose.pitch + 1).min(1),
        Action::LookDown => next.pose.pitch = (next.pose.pitch - 1).max(-1),
        Action::Stop => {}
    }
    let obs = next.observe();
    if action == Action::Stop {
        let seen = obs.sees_category(&next.target_category);
        let close = hops_to_category(&next.scene, next.pose.position, &next.target_category)
            .is_some_and(|h| h <= next.config.success_radius_cells);
        next.status = if seen && close {
            EpisodeStatus::Success
        } else {
            EpisodeStatus::FailureStop
        };
    } else if next.steps_taken >= next.config.max_steps {
        next.status = EpisodeStatus::FailureTimeout;
    }
    Ok((next, obs))
}
