//! The reasoning operations behind each H-CoT round.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Cell;
use crate::nav::{explore_step, step_toward, target_step, MapMemory, Sighting, TargetStep, TurnBias};
use crate::sim::{Action, AgentPose, Observation};
use crate::world::{CategoryVocab, CooccurrencePriors, RoomType};

/// Added to every prior before taking logs so zero priors stay finite.
pub const PRIOR_EPSILON: f64 = 1e-6;

/// Published suggestion-phrase table: every action round answer is one of
/// these phrases and maps to exactly one action.
pub const ACTION_PHRASES: [(&str, Action); 6] = [
    ("move forward", Action::MoveForward),
    ("turn left", Action::TurnLeft),
    ("turn right", Action::TurnRight),
    ("look up", Action::LookUp),
    ("look down", Action::LookDown),
    ("stop", Action::Stop),
];

pub fn action_phrase(action: Action) -> &'static str {
    ACTION_PHRASES.iter().find(|(_, a)| *a == action).map(|(p, _)| *p).expect("every action has a phrase")
}

pub fn phrase_action(phrase: &str) -> Option<Action> {
    ACTION_PHRASES.iter().find(|(p, _)| *p == phrase).map(|(_, a)| *a)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectedObject {
    pub category: String,
    /// Cell the detection refers to; `None` when a chat model lists an
    /// object that matches nothing in view.
    pub cell: Option<Cell>,
    pub bearing_deg: f64,
    pub distance_cells: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub objects: Vec<DetectedObject>,
    pub confidence: f64,
    pub text: String,
}

fn side_phrase(bearing: f64) -> &'static str {
    if bearing.abs() <= 10.0 {
        "straight ahead"
    } else if bearing < 0.0 {
        "to the left"
    } else {
        "to the right"
    }
}

/// Templated layout sentence for a list of detections.
pub fn layout_sentence(objects: &[DetectedObject]) -> String {
    if objects.is_empty() {
        return "I see no salient objects.".into();
    }
    let parts: Vec<String> = objects
        .iter()
        .map(|o| {
            format!(
                "a {} {} about {:.1} cells away",
                o.category.replace('_', " "),
                side_phrase(o.bearing_deg),
                o.distance_cells
            )
        })
        .collect();
    format!("I see {}.", parts.join(", "))
}

/// Matched objects over the larger of the two list lengths; omissions and
/// hallucinations both lower it. Two empty lists agree perfectly.
pub fn detection_confidence(truth: &[(String, Option<Cell>)], listed: &[(String, Option<Cell>)]) -> f64 {
    let denom = truth.len().max(listed.len());
    if denom == 0 {
        return 1.0;
    }
    let mut remaining: Vec<&(String, Option<Cell>)> = truth.iter().collect();
    let mut matched = 0usize;
    for l in listed {
        let hit = remaining
            .iter()
            .position(|t| t.0 == l.0 && (l.1.is_none() || t.1 == l.1));
        if let Some(i) = hit {
            remaining.swap_remove(i);
            matched += 1;
        }
    }
    matched as f64 / denom as f64
}

/// Annotation-time perception noise: each visible object is independently
/// dropped or relabelled (equal odds) with probability `p_noise`.
pub fn inject_noise<R: Rng>(objects: Vec<DetectedObject>, p_noise: f64, vocab: &CategoryVocab, rng: &mut R) -> Vec<DetectedObject> {
    let mut out = Vec::with_capacity(objects.len());
    for mut o in objects {
        if rng.gen::<f64>() >= p_noise {
            out.push(o);
            continue;
        }
        if rng.gen_bool(0.5) {
            continue;
        }
        let others: Vec<&String> = vocab.object_categories.iter().filter(|c| **c != o.category).collect();
        if let Some(c) = others.choose(rng) {
            o.category = (*c).clone();
        }
        out.push(o);
    }
    out
}

/// Rule backend perception: the observation's visible objects, optionally
/// corrupted by `noise`.
pub fn detect_subgoals_rule<R: Rng>(observation: &Observation, noise: Option<(f64, &CategoryVocab, &mut R)>) -> Detection {
    let truth: Vec<DetectedObject> = observation
        .visible_objects
        .iter()
        .map(|o| DetectedObject {
            category: o.category.clone(),
            cell: Some(o.cell),
            bearing_deg: o.bearing_deg,
            distance_cells: o.distance_cells,
        })
        .collect();
    let objects = match noise {
        Some((p, vocab, rng)) if p > 0.0 => inject_noise(truth.clone(), p, vocab, rng),
        _ => truth.clone(),
    };
    let key = |v: &[DetectedObject]| v.iter().map(|o| (o.category.clone(), o.cell)).collect::<Vec<_>>();
    let confidence = detection_confidence(&key(&truth), &key(&objects));
    let text = layout_sentence(&objects);
    Detection {
        objects,
        confidence,
        text,
    }
}

/// Room type best explained by the subgoals under the object-room prior.
/// Scores are summed log-priors over the concrete room types; the returned
/// confidence is the softmax mass of the winner. Ties go to the earlier room
/// type.
pub fn infer_room<S: AsRef<str>>(subgoals: &[S], priors: &CooccurrencePriors) -> Result<(RoomType, f64)> {
    if subgoals.is_empty() {
        return Ok((RoomType::Unknown, 0.0));
    }
    let rooms = &RoomType::ALL[..RoomType::COUNT - 1];
    let mut names: Vec<&str> = subgoals.iter().map(AsRef::as_ref).collect();
    names.sort_unstable();
    let mut scores = vec![0.0f64; rooms.len()];
    for s in names {
        for (k, &r) in rooms.iter().enumerate() {
            scores[k] += (priors.room_prior(s, r)? + PRIOR_EPSILON).ln();
        }
    }
    let mut best = 0;
    for k in 1..scores.len() {
        if scores[k] > scores[best] {
            best = k;
        }
    }
    let z: f64 = scores.iter().map(|s| (s - scores[best]).exp()).sum();
    Ok((rooms[best], 1.0 / z))
}

/// Relevance of each distinct subgoal category to the target.
pub fn associate_objects<S: AsRef<str>>(subgoals: &[S], target: &str, priors: &CooccurrencePriors) -> Result<BTreeMap<String, f64>> {
    priors.index_of(target)?;
    let mut out = BTreeMap::new();
    for s in subgoals {
        let s = s.as_ref();
        out.insert(s.to_string(), priors.proximity(s, target)?);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    /// Minimum object-room prior for the inferred room to count as a
    /// plausible place for the target.
    pub plausibility_threshold: f64,
    /// Minimum relevance for a subgoal to be worth searching around.
    pub relevance_gate: f64,
    pub success_radius_cells: u32,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            plausibility_threshold: 0.3,
            relevance_gate: 0.5,
            success_radius_cells: 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuggestionKind {
    Stop,
    Approach,
    SearchNear,
    ExploreAnotherRoom,
    TargetAbsent,
    /// Free-text suggestion from a chat model.
    Freeform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Suggestion {
    pub kind: SuggestionKind,
    pub text: String,
    pub action: Action,
    /// Subgoal being searched around, for `SearchNear`.
    pub focus: Option<Sighting>,
}

/// How the planner breaks 180 degree ties when not already turning.
pub const PLANNER_BIAS: TurnBias = TurnBias::Left;

/// Planning rounds: decides between stopping, approaching the target,
/// searching around a relevant subgoal, and exploring elsewhere.
/// `memory` must already include the current detections.
#[allow(clippy::too_many_arguments)]
pub fn plan_suggestion(
    inferred_room: RoomType,
    relevance: &BTreeMap<String, f64>,
    pose: &AgentPose,
    target: &str,
    detected: &[DetectedObject],
    memory: &MapMemory,
    priors: &CooccurrencePriors,
    config: &PlannerConfig,
    bias: TurnBias,
) -> Result<Suggestion> {
    let target_name = target.replace('_', " ");
    let visible_targets: Vec<Cell> = detected.iter().filter(|o| o.category == target).filter_map(|o| o.cell).collect();
    match target_step(memory, pose, target, &visible_targets, config.success_radius_cells, bias) {
        TargetStep::Stop => {
            return Ok(Suggestion {
                kind: SuggestionKind::Stop,
                text: "stop here".into(),
                action: Action::Stop,
                focus: None,
            })
        }
        TargetStep::Approach(action) => {
            return Ok(Suggestion {
                kind: SuggestionKind::Approach,
                text: format!("approach the {target_name}"),
                action,
                focus: None,
            })
        }
        TargetStep::Unknown => {}
    }

    let plausibility = priors.room_prior(target, inferred_room)?;
    let gate_open = plausibility >= config.plausibility_threshold && relevance.values().any(|&r| r >= config.relevance_gate);
    let committed = memory.search_goal.as_ref().and_then(|g| {
        let goals = memory.approach_cells(&[g.cell], config.success_radius_cells);
        step_toward(memory, pose, &goals, bias).map(|a| (g.clone(), a))
    });
    let search = match committed {
        Some(c) => Some(c),
        None if gate_open => search_near(memory, pose, target, priors, config, bias)?,
        None => None,
    };
    if let Some((sighting, action)) = search {
        return Ok(Suggestion {
            kind: SuggestionKind::SearchNear,
            text: format!("search near the {}", sighting.category.replace('_', " ")),
            action,
            focus: Some(sighting),
        });
    }
    Ok(match explore_step(memory, pose, bias) {
        Some(action) => Suggestion {
            kind: SuggestionKind::ExploreAnotherRoom,
            text: "explore another room".into(),
            action,
            focus: None,
        },
        None => Suggestion {
            kind: SuggestionKind::TargetAbsent,
            text: "target likely absent".into(),
            action: Action::Stop,
            focus: None,
        },
    })
}

/// First step toward the most relevant remembered subgoal the agent has not
/// been next to yet.
fn search_near(memory: &MapMemory, pose: &AgentPose, target: &str, priors: &CooccurrencePriors, config: &PlannerConfig, bias: TurnBias) -> Result<Option<(Sighting, Action)>> {
    let mut candidates = Vec::new();
    for s in &memory.sightings {
        if s.category == target || memory.searched.contains(&s.cell) {
            continue;
        }
        let r = priors.proximity(&s.category, target)?;
        if r >= config.relevance_gate {
            candidates.push((r, s));
        }
    }
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.1.cell.y, a.1.cell.x).cmp(&(b.1.cell.y, b.1.cell.x))));
    for (_, s) in candidates {
        let goals = memory.approach_cells(&[s.cell], config.success_radius_cells);
        if let Some(a) = step_toward(memory, pose, &goals, bias) {
            return Ok(Some((s.clone(), a)));
        }
    }
    Ok(None)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceWeights {
    pub detection: f64,
    pub alignment: f64,
}

impl Default for ConfidenceWeights {
    fn default() -> Self {
        Self {
            detection: 0.5,
            alignment: 0.5,
        }
    }
}

impl ConfidenceWeights {
    pub fn validate(&self) -> Result<()> {
        let ok = self.detection >= 0.0 && self.alignment >= 0.0 && (self.detection + self.alignment - 1.0).abs() < 1e-12;
        if !ok {
            return Err(Error::Config(format!(
                "confidence weights {} and {} must be non-negative and sum to 1",
                self.detection, self.alignment
            )));
        }
        Ok(())
    }
}

/// 1 for identical actions, 0.5 for two turns or two looks, else 0.
pub fn alignment(suggested: Action, label: Action) -> f64 {
    use Action::*;
    if suggested == label {
        1.0
    } else if matches!((suggested, label), (TurnLeft, TurnRight) | (TurnRight, TurnLeft) | (LookUp, LookDown) | (LookDown, LookUp)) {
        0.5
    } else {
        0.0
    }
}

/// Closed-loop confidence c for one step; returns (c, alignment).
pub fn score_confidence(suggested: Action, label: Action, detection_confidence: f64, weights: &ConfidenceWeights) -> Result<(f64, f64)> {
    if !(0.0..=1.0).contains(&detection_confidence) {
        return Err(Error::Precondition(format!("detection confidence {detection_confidence} outside [0, 1]")));
    }
    let a = alignment(suggested, label);
    Ok(((weights.detection * detection_confidence + weights.alignment * a).clamp(0.0, 1.0), a))
}
