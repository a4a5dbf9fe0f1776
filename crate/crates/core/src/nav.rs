//! Egocentric map memory and the navigation primitives built on it.
//!
//! Everything here works from accumulated observations only; nothing reads
//! the scene's ground truth. Both the scripted demonstrator and the H-CoT
//! planner drive the agent through these functions.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::geom::{angle_diff, Cardinal, Cell};
use crate::sim::{Action, AgentPose, HALF_FOV_DEG};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Known {
    Floor,
    Wall,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Sighting {
    pub category: String,
    pub cell: Cell,
}

/// What the agent has learned about the scene so far. Cells absent from
/// `known` are unknown.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MapMemory {
    pub known: BTreeMap<Cell, Known>,
    /// Cells the agent has stood on.
    pub explored: BTreeSet<Cell>,
    pub sightings: BTreeSet<Sighting>,
    /// Object cells the agent has already been next to.
    pub searched: BTreeSet<Cell>,
    /// Subgoal the planner has committed to searching around.
    pub search_goal: Option<Sighting>,
}

impl MapMemory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_floor(&self, c: Cell) -> bool {
        self.known.get(&c) == Some(&Known::Floor)
    }

    pub fn is_unknown(&self, c: Cell) -> bool {
        !self.known.contains_key(&c)
    }

    /// Folds one view into memory. Sightings inside the view footprint that
    /// are no longer detected are forgotten; the agent's own cell is exempt
    /// since objects underfoot are outside every pitch band but one.
    pub fn update(&mut self, pose: &AgentPose, seen_floor: &[Cell], seen_walls: &[Cell], detections: &[(String, Cell)], radius: u32) {
        for &c in seen_floor {
            self.known.insert(c, Known::Floor);
        }
        for &c in seen_walls {
            self.known.entry(c).or_insert(Known::Wall);
        }
        self.known.insert(pose.position, Known::Floor);
        self.explored.insert(pose.position);

        let in_view: BTreeSet<Cell> = seen_floor.iter().copied().filter(|&c| c != pose.position).collect();
        self.sightings.retain(|s| {
            !in_view.contains(&s.cell) || detections.iter().any(|(cat, cell)| *cat == s.category && *cell == s.cell)
        });
        for (category, cell) in detections {
            self.sightings.insert(Sighting {
                category: category.clone(),
                cell: *cell,
            });
        }
        let here = self.hops_from(&[pose.position]);
        for s in &self.sightings {
            if here.get(&s.cell).is_some_and(|&d| d <= radius) {
                self.searched.insert(s.cell);
            }
        }
        if let Some(g) = &self.search_goal {
            if self.searched.contains(&g.cell) || !self.sightings.contains(g) {
                self.search_goal = None;
            }
        }
    }

    pub fn sightings_of<'a>(&'a self, category: &'a str) -> impl Iterator<Item = Cell> + 'a {
        self.sightings.iter().filter(move |s| s.category == category).map(|s| s.cell)
    }

    /// BFS hop counts over known floor from `sources`.
    pub fn hops_from(&self, sources: &[Cell]) -> HashMap<Cell, u32> {
        let mut dist = HashMap::new();
        let mut q = VecDeque::new();
        for &s in sources {
            if let std::collections::hash_map::Entry::Vacant(e) = dist.entry(s) {
                e.insert(0);
                q.push_back(s);
            }
        }
        while let Some(c) = q.pop_front() {
            let d = dist[&c];
            for n in c.neighbors4() {
                if self.is_floor(n) && !dist.contains_key(&n) {
                    dist.insert(n, d + 1);
                    q.push_back(n);
                }
            }
        }
        dist
    }

    /// Known floor cells with an unknown 4-neighbour.
    pub fn frontiers(&self) -> Vec<Cell> {
        self.known
            .iter()
            .filter(|(c, k)| **k == Known::Floor && c.neighbors4().iter().any(|n| self.is_unknown(*n)))
            .map(|(c, _)| *c)
            .collect()
    }

    /// Known floor cells from which an instance at one of `objects` is
    /// between 1 and `radius` hops away.
    pub fn approach_cells(&self, objects: &[Cell], radius: u32) -> Vec<Cell> {
        let field = self.hops_from(objects);
        let mut cells: Vec<Cell> = field
            .into_iter()
            .filter(|&(c, d)| d >= 1 && d <= radius && self.is_floor(c))
            .map(|(c, _)| c)
            .collect();
        cells.sort_by_key(|c| (c.y, c.x));
        cells
    }
}

/// Which way to rotate when a target is directly behind.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TurnBias {
    Left,
    Right,
}

impl TurnBias {
    /// Keeps turning the way the previous action turned; otherwise
    /// `default`.
    pub fn after(previous: Option<Action>, default: TurnBias) -> TurnBias {
        match previous {
            Some(Action::TurnLeft) => TurnBias::Left,
            Some(Action::TurnRight) => TurnBias::Right,
            _ => default,
        }
    }
}

fn turn_towards(pose: &AgentPose, compass_deg: f64, bias: TurnBias) -> Action {
    let d = angle_diff(pose.heading_deg(), compass_deg);
    if d > 0.0 && d < 180.0 {
        Action::TurnRight
    } else if d < 0.0 {
        Action::TurnLeft
    } else {
        match bias {
            TurnBias::Left => Action::TurnLeft,
            TurnBias::Right => Action::TurnRight,
        }
    }
}

/// Rotation needed before `pose` faces `target` within the field of view,
/// or `None` when it already does.
pub fn face(pose: &AgentPose, target: Cell, bias: TurnBias) -> Option<Action> {
    if target == pose.position {
        return None;
    }
    let bearing = pose.position.compass_to(target);
    if angle_diff(pose.heading_deg(), bearing).abs() <= HALF_FOV_DEG {
        None
    } else {
        Some(turn_towards(pose, bearing, bias))
    }
}

/// First action of a shortest known-floor path to any cell in `goals`:
/// rotate until the forward axis matches the path's first move, then move.
/// `None` if already at a goal or no goal is reachable.
pub fn step_toward(memory: &MapMemory, pose: &AgentPose, goals: &[Cell], bias: TurnBias) -> Option<Action> {
    if goals.contains(&pose.position) {
        return None;
    }
    let field = memory.hops_from(goals);
    let here = *field.get(&pose.position)?;
    let forward = pose.forward_direction();
    // Keep the current axis on ties, otherwise clockwise from north.
    let order = std::iter::once(forward).chain(Cardinal::ALL.into_iter().filter(|d| *d != forward));
    let dir = order
        .into_iter()
        .find(|d| field.get(&d.step(pose.position)).is_some_and(|&n| n + 1 == here))?;
    if dir == forward {
        Some(Action::MoveForward)
    } else {
        Some(turn_towards(pose, dir.degrees(), bias))
    }
}

/// Frontier exploration: on a frontier cell, rotate to uncover its unknown
/// neighbour; otherwise head for the nearest frontier (lowest row-major
/// index on ties). `None` once no frontier is reachable.
pub fn explore_step(memory: &MapMemory, pose: &AgentPose, bias: TurnBias) -> Option<Action> {
    let here = pose.position;
    let unknown: Vec<Cardinal> = Cardinal::ALL.into_iter().filter(|d| memory.is_unknown(d.step(here))).collect();
    if !unknown.is_empty() {
        let best = unknown
            .iter()
            .min_by(|a, b| {
                let da = angle_diff(pose.heading_deg(), a.degrees()).abs();
                let db = angle_diff(pose.heading_deg(), b.degrees()).abs();
                da.total_cmp(&db)
            })
            .copied()
            .expect("non-empty");
        return Some(turn_towards(pose, best.degrees(), bias));
    }
    let dist = memory.hops_from(&[here]);
    let target = memory
        .frontiers()
        .into_iter()
        .filter_map(|f| dist.get(&f).map(|d| (*d, f.y, f.x, f)))
        .min()
        .map(|(_, _, _, f)| f)?;
    step_toward(memory, pose, &[target], bias)
}

/// Outcome of target-directed navigation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TargetStep {
    /// Target visible and within the success radius.
    Stop,
    /// Moving or turning toward a known target instance.
    Approach(Action),
    /// No known, reachable target instance.
    Unknown,
}

/// Goal-directed step toward remembered target instances. `visible_targets`
/// are the instance cells detected in the current view.
pub fn target_step(memory: &MapMemory, pose: &AgentPose, target: &str, visible_targets: &[Cell], radius: u32, bias: TurnBias) -> TargetStep {
    let here = memory.hops_from(&[pose.position]);
    let close_visible = visible_targets.iter().any(|c| here.get(c).is_some_and(|&d| d <= radius));
    if close_visible {
        return TargetStep::Stop;
    }
    let instances: Vec<Cell> = memory.sightings_of(target).collect();
    if instances.is_empty() {
        return TargetStep::Unknown;
    }
    let goals = memory.approach_cells(&instances, radius);
    if goals.contains(&pose.position) {
        if pose.pitch != 0 {
            return TargetStep::Approach(if pose.pitch > 0 { Action::LookDown } else { Action::LookUp });
        }
        let nearest = instances
            .iter()
            .copied()
            .filter(|c| here.get(c).is_some_and(|&d| d <= radius))
            .min_by_key(|c| (here[c], c.y, c.x));
        if let Some(obj) = nearest {
            if let Some(turn) = face(pose, obj, bias) {
                return TargetStep::Approach(turn);
            }
        }
        // Facing a remembered instance that is not detected any more.
        return TargetStep::Unknown;
    }
    match step_toward(memory, pose, &goals, bias) {
        Some(a) => TargetStep::Approach(a),
        None => TargetStep::Unknown,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn open_memory(w: i32, h: i32) -> MapMemory {
        let mut m = MapMemory::new();
        for y in 0..h {
            for x in 0..w {
                m.known.insert(Cell::new(x, y), Known::Floor);
            }
        }
        m
    }

    #[test]
    fn step_toward_rotates_then_moves() {
        let m = open_memory(5, 5);
        let pose = AgentPose::new(Cell::new(0, 2), 0); // facing north
        assert_eq!(step_toward(&m, &pose, &[Cell::new(4, 2)], TurnBias::Left), Some(Action::TurnRight));
        let east = AgentPose::new(Cell::new(0, 2), 3);
        assert_eq!(step_toward(&m, &east, &[Cell::new(4, 2)], TurnBias::Left), Some(Action::MoveForward));
        assert_eq!(step_toward(&m, &east, &[Cell::new(0, 2)], TurnBias::Left), None);
        // Directly behind: bias decides.
        let west = AgentPose::new(Cell::new(2, 2), 9);
        assert_eq!(step_toward(&m, &west, &[Cell::new(4, 2)], TurnBias::Right), Some(Action::TurnRight));
        assert_eq!(step_toward(&m, &west, &[Cell::new(4, 2)], TurnBias::Left), Some(Action::TurnLeft));
    }

    #[test]
    fn frontier_detection() {
        let mut m = MapMemory::new();
        m.known.insert(Cell::new(0, 0), Known::Floor);
        m.known.insert(Cell::new(1, 0), Known::Floor);
        m.known.insert(Cell::new(0, -1), Known::Wall);
        assert_eq!(m.frontiers(), vec![Cell::new(0, 0), Cell::new(1, 0)]);
        let pose = AgentPose::new(Cell::new(0, 0), 0);
        // West/south unknown; west needs 90 degrees left, south 180.
        assert_eq!(explore_step(&m, &pose, TurnBias::Right), Some(Action::TurnLeft));
    }

    #[test]
    fn sightings_forgotten_when_not_redetected() {
        let mut m = MapMemory::new();
        let pose = AgentPose::new(Cell::new(0, 0), 3);
        m.update(&pose, &[Cell::new(0, 0), Cell::new(2, 0)], &[], &[("bed".into(), Cell::new(2, 0))], 1);
        assert_eq!(m.sightings_of("bed").count(), 1);
        m.update(&pose, &[Cell::new(0, 0), Cell::new(2, 0)], &[], &[], 1);
        assert_eq!(m.sightings_of("bed").count(), 0);
    }

    #[test]
    fn target_step_stops_when_close_and_visible() {
        let mut m = open_memory(4, 1);
        m.sightings.insert(Sighting {
            category: "bed".into(),
            cell: Cell::new(3, 0),
        });
        let pose = AgentPose::new(Cell::new(2, 0), 3);
        assert_eq!(target_step(&m, &pose, "bed", &[Cell::new(3, 0)], 1, TurnBias::Left), TargetStep::Stop);
        let far = AgentPose::new(Cell::new(0, 0), 3);
        assert_eq!(
            target_step(&m, &far, "bed", &[Cell::new(3, 0)], 1, TurnBias::Left),
            TargetStep::Approach(Action::MoveForward)
        );
        let back = AgentPose::new(Cell::new(2, 0), 9);
        assert_eq!(target_step(&m, &back, "bed", &[], 1, TurnBias::Left), TargetStep::Approach(Action::TurnLeft));
        assert_eq!(target_step(&m, &back, "sofa", &[], 1, TurnBias::Left), TargetStep::Unknown);
    }
}
