//! Hierarchical chain-of-thought annotation.
//!
//! Every trajectory step becomes a [`QARecord`]: three perception rounds
//! (subgoal detection, room inference, object association) followed by three
//! planning rounds (plausibility, suggestion, action), plus the closed-loop
//! confidence that compares the suggested action with the demonstrated one.
//! The rule backend derives everything from the observation and the shipped
//! priors; the chat backend asks a chat-completions model for the subgoals
//! and the action.

pub mod chat;
pub mod reason;

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::artifact::{self, sha256_hex, Header};
use crate::demo::Trajectory;
use crate::error::{Error, Result};
use crate::geom::Cell;
use crate::nav::{MapMemory, TurnBias};
use crate::sim::{Action, Observation};
use crate::world::{CategoryVocab, CooccurrencePriors, RoomType};

pub use chat::{ChatComplete, ChatConfig, ChatMessage, ChatRequest, HttpChatClient};
pub use reason::{
    action_phrase, alignment, associate_objects, detect_subgoals_rule, detection_confidence, infer_room, phrase_action, plan_suggestion, score_confidence,
    ConfidenceWeights, DetectedObject, Detection, PlannerConfig, Suggestion, SuggestionKind, ACTION_PHRASES,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoundKind {
    SubgoalDetection,
    RoomInference,
    ObjectAssociation,
    Plausibility,
    Suggestion,
    Action,
}

impl RoundKind {
    pub const ORDER: [RoundKind; 6] = [
        RoundKind::SubgoalDetection,
        RoundKind::RoomInference,
        RoundKind::ObjectAssociation,
        RoundKind::Plausibility,
        RoundKind::Suggestion,
        RoundKind::Action,
    ];

    pub fn is_perception(self) -> bool {
        self <= RoundKind::ObjectAssociation
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Round {
    pub kind: RoundKind,
    pub question: String,
    pub answer: String,
    pub structured_payload: serde_json::Value,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferredRoom {
    pub room_type: RoomType,
    pub confidence: f64,
}

/// Everything the reasoning rounds conclude for one step, independent of
/// the demonstrated action.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepReasoning {
    pub episode_id: String,
    pub step_index: usize,
    pub target_category: String,
    pub pitch: i8,
    pub previous_action: Option<Action>,
    pub subgoals: Vec<DetectedObject>,
    pub detection_confidence: f64,
    pub inferred_room: InferredRoom,
    pub relevance_scores: BTreeMap<String, f64>,
    /// Object-room prior of the target in the inferred room.
    pub plausibility: f64,
    pub suggestion_kind: SuggestionKind,
    pub suggestion_text: String,
    pub suggested_action: Action,
}

impl StepReasoning {
    pub fn max_relevance(&self) -> f64 {
        self.relevance_scores.values().copied().fold(0.0, f64::max)
    }

    pub fn subgoal_categories(&self) -> Vec<String> {
        self.subgoals.iter().map(|o| o.category.clone()).collect()
    }

    /// The six rounds, in their fixed order.
    pub fn rounds(&self) -> Vec<Round> {
        let target = self.target_category.replace('_', " ");
        let room = self.inferred_room.room_type.phrase();
        let names: Vec<String> = self.subgoals.iter().map(|o| o.category.replace('_', " ")).collect();
        let detection = reason::layout_sentence(&self.subgoals);
        let room_answer = if names.is_empty() {
            "There is not enough evidence to tell which room this is.".to_string()
        } else {
            format!(
                "The {} suggest a {} (confidence {:.2}).",
                names.join(" and "),
                room,
                self.inferred_room.confidence
            )
        };
        let assoc_answer = if self.relevance_scores.is_empty() {
            format!("No visible object tells us where the {target} is.")
        } else {
            let parts: Vec<String> = self
                .relevance_scores
                .iter()
                .map(|(c, r)| format!("{} {:.2}", c.replace('_', " "), r))
                .collect();
            format!("Relevance to the {target}: {}.", parts.join(", "))
        };
        let plausible = self.plausibility >= PlannerConfig::default().plausibility_threshold;
        let plaus_answer = format!(
            "{} a {} is {} place to find a {target} (prior {:.2}).",
            if plausible { "Yes," } else { "No," },
            room,
            if plausible { "a plausible" } else { "an unlikely" },
            self.plausibility
        );
        let subgoal_payload: Vec<_> = self
            .subgoals
            .iter()
            .map(|o| json!({"category": o.category, "bearing_deg": o.bearing_deg, "distance_cells": o.distance_cells}))
            .collect();
        vec![
            Round {
                kind: RoundKind::SubgoalDetection,
                question: "Which salient objects are in view, and how are they arranged?".into(),
                answer: detection,
                structured_payload: json!({"objects": subgoal_payload, "detection_confidence": self.detection_confidence}),
            },
            Round {
                kind: RoundKind::RoomInference,
                question: "What type of room do these objects suggest?".into(),
                answer: room_answer,
                structured_payload: json!({"room_type": self.inferred_room.room_type, "confidence": self.inferred_room.confidence}),
            },
            Round {
                kind: RoundKind::ObjectAssociation,
                question: format!("How likely is each object to be near a {target}?"),
                answer: assoc_answer,
                structured_payload: json!({"relevance": self.relevance_scores}),
            },
            Round {
                kind: RoundKind::Plausibility,
                question: format!("Is this room a plausible place to find a {target}?"),
                answer: plaus_answer,
                structured_payload: json!({"plausibility": self.plausibility, "plausible": plausible}),
            },
            Round {
                kind: RoundKind::Suggestion,
                question: "What should the agent do next?".into(),
                answer: self.suggestion_text.clone(),
                structured_payload: json!({"kind": self.suggestion_kind}),
            },
            Round {
                kind: RoundKind::Action,
                question: "Which control action carries out that suggestion?".into(),
                answer: action_phrase(self.suggested_action).into(),
                structured_payload: json!({"action": self.suggested_action}),
            },
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QARecord {
    #[serde(flatten)]
    pub reasoning: StepReasoning,
    pub rounds: Vec<Round>,
    pub label_action: Action,
    pub confidence: f64,
    pub alignment_score: f64,
}

impl QARecord {
    pub fn new(reasoning: StepReasoning, label_action: Action, weights: &ConfidenceWeights) -> Result<Self> {
        let (confidence, alignment_score) = score_confidence(reasoning.suggested_action, label_action, reasoning.detection_confidence, weights)?;
        Ok(Self {
            rounds: reasoning.rounds(),
            reasoning,
            label_action,
            confidence,
            alignment_score,
        })
    }

    pub fn episode_id(&self) -> &str {
        &self.reasoning.episode_id
    }

    pub fn step_index(&self) -> usize {
        self.reasoning.step_index
    }

    pub fn suggested_action(&self) -> Action {
        self.reasoning.suggested_action
    }

    pub fn validate(&self) -> Result<()> {
        let kinds: Vec<RoundKind> = self.rounds.iter().map(|r| r.kind).collect();
        let at = || format!("record {}#{}", self.episode_id(), self.step_index());
        if kinds != RoundKind::ORDER {
            return Err(Error::Validation(format!("{}: rounds out of order: {kinds:?}", at())));
        }
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Validation(format!("{}: {name} = {v} outside [0, 1]", at())))
            }
        };
        unit("confidence", self.confidence)?;
        unit("detection_confidence", self.reasoning.detection_confidence)?;
        unit("alignment_score", self.alignment_score)?;
        unit("room confidence", self.reasoning.inferred_room.confidence)?;
        for (c, r) in &self.reasoning.relevance_scores {
            unit(&format!("relevance[{c}]"), *r)?;
        }
        let action_round = &self.rounds[5];
        if phrase_action(&action_round.answer) != Some(self.suggested_action()) {
            return Err(Error::Validation(format!(
                "{}: action answer `{}` does not map to {}",
                at(),
                action_round.answer,
                self.suggested_action()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotatorConfig {
    pub planner: PlannerConfig,
    pub weights: ConfidenceWeights,
    /// Probability of dropping or relabelling each visible object.
    pub p_noise: f64,
    pub noise_seed: u64,
}

impl Default for AnnotatorConfig {
    fn default() -> Self {
        Self {
            planner: PlannerConfig::default(),
            weights: ConfidenceWeights::default(),
            p_noise: 0.0,
            noise_seed: 0,
        }
    }
}

impl AnnotatorConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if !(0.0..=1.0).contains(&self.p_noise) {
            return Err(Error::Config(format!("p_noise {} outside [0, 1]", self.p_noise)));
        }
        Ok(())
    }
}

/// Stateful rule-backend reasoning over one episode. The same machinery
/// annotates demonstrations offline and feeds policies online.
#[derive(Clone, Debug)]
pub struct Reasoner {
    priors: Arc<CooccurrencePriors>,
    vocab: CategoryVocab,
    config: AnnotatorConfig,
    episode_id: String,
    memory: MapMemory,
    previous_action: Option<Action>,
}

impl Reasoner {
    pub fn new(priors: Arc<CooccurrencePriors>, config: AnnotatorConfig, episode_id: &str) -> Self {
        Self {
            vocab: priors.vocab(),
            priors,
            config,
            episode_id: episode_id.to_string(),
            memory: MapMemory::new(),
            previous_action: None,
        }
    }

    pub fn memory(&self) -> &MapMemory {
        &self.memory
    }

    fn noise_rng(&self, step: usize) -> ChaCha8Rng {
        let digest = sha256_hex(format!("{}:{}:{}", self.config.noise_seed, self.episode_id, step).as_bytes());
        let seed = u64::from_str_radix(&digest[..16], 16).expect("hex digest");
        ChaCha8Rng::seed_from_u64(seed)
    }

    /// Runs all reasoning rounds for `observation`.
    pub fn reason(&mut self, observation: &Observation) -> Result<StepReasoning> {
        let step = observation.step_index as usize;
        let mut rng = self.noise_rng(step);
        let noise = (self.config.p_noise > 0.0).then_some((self.config.p_noise, &self.vocab, &mut rng));
        let detection = detect_subgoals_rule(observation, noise);
        let detections: Vec<(String, Cell)> = detection.objects.iter().filter_map(|o| o.cell.map(|c| (o.category.clone(), c))).collect();
        self.memory.update(
            &observation.pose,
            &observation.seen_floor,
            &observation.seen_walls,
            &detections,
            self.config.planner.success_radius_cells,
        );
        let categories: Vec<String> = detection.objects.iter().map(|o| o.category.clone()).collect();
        let (room, room_conf) = infer_room(&categories, &self.priors)?;
        let relevance = associate_objects(&categories, &observation.target_category, &self.priors)?;
        let plausibility = self.priors.room_prior(&observation.target_category, room)?;
        let suggestion = plan_suggestion(
            room,
            &relevance,
            &observation.pose,
            &observation.target_category,
            &detection.objects,
            &self.memory,
            &self.priors,
            &self.config.planner,
            TurnBias::after(self.previous_action, reason::PLANNER_BIAS),
        )?;
        self.memory.search_goal = suggestion.focus.clone();
        Ok(StepReasoning {
            episode_id: self.episode_id.clone(),
            step_index: step,
            target_category: observation.target_category.clone(),
            pitch: observation.pose.pitch,
            previous_action: self.previous_action,
            subgoals: detection.objects,
            detection_confidence: detection.confidence,
            inferred_room: InferredRoom {
                room_type: room,
                confidence: room_conf,
            },
            relevance_scores: relevance,
            plausibility,
            suggestion_kind: suggestion.kind,
            suggestion_text: suggestion.text,
            suggested_action: suggestion.action,
        })
    }

    /// Records the action actually executed after the last observation.
    pub fn record_action(&mut self, action: Action) {
        self.previous_action = Some(action);
    }
}

/// Which model answers the rounds.
#[derive(Clone)]
pub enum AnnotatorBackend {
    RuleBased,
    ChatService { client: Arc<dyn ChatComplete>, model: String, temperature: f64, max_in_flight: usize },
}

impl std::fmt::Debug for AnnotatorBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AnnotatorBackend::RuleBased => f.write_str("RuleBased"),
            AnnotatorBackend::ChatService { model, max_in_flight, .. } => {
                write!(f, "ChatService({model}, {max_in_flight} in flight)")
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct Annotator {
    pub priors: Arc<CooccurrencePriors>,
    pub config: AnnotatorConfig,
    pub backend: AnnotatorBackend,
}

impl Annotator {
    pub fn rule_based(priors: Arc<CooccurrencePriors>, config: AnnotatorConfig) -> Self {
        Self {
            priors,
            config,
            backend: AnnotatorBackend::RuleBased,
        }
    }

    /// One record per trajectory step, in step order.
    pub fn annotate_trajectory(&self, trajectory: &Trajectory) -> Result<Vec<QARecord>> {
        self.config.validate()?;
        match &self.backend {
            AnnotatorBackend::RuleBased => self.annotate_rule(trajectory),
            AnnotatorBackend::ChatService {
                client,
                model,
                temperature,
                max_in_flight,
            } => self.annotate_chat(trajectory, client.as_ref(), model, *temperature, *max_in_flight),
        }
    }

    fn annotate_rule(&self, trajectory: &Trajectory) -> Result<Vec<QARecord>> {
        let mut reasoner = Reasoner::new(self.priors.clone(), self.config, trajectory.episode_id());
        let mut out = Vec::with_capacity(trajectory.steps.len());
        for step in &trajectory.steps {
            let reasoning = reasoner.reason(&step.observation)?;
            out.push(QARecord::new(reasoning, step.action, &self.config.weights)?);
            reasoner.record_action(step.action);
        }
        Ok(out)
    }

    fn annotate_chat(&self, trajectory: &Trajectory, client: &dyn ChatComplete, model: &str, temperature: f64, max_in_flight: usize) -> Result<Vec<QARecord>> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(max_in_flight.max(1))
            .build()
            .map_err(|e| Error::Config(e.to_string()))?;
        let answers: Vec<Result<(String, chat::ChatAnswer)>> = pool.install(|| {
            trajectory
                .steps
                .par_iter()
                .enumerate()
                .map(|(i, step)| {
                    let request = ChatRequest {
                        model: model.to_string(),
                        messages: chat::build_messages(&step.observation),
                        temperature,
                    };
                    let raw = client.complete(&request).map_err(|e| Error::Annotation {
                        step: i,
                        message: e.to_string(),
                        raw: String::new(),
                    })?;
                    let parsed = chat::parse_answer(&raw, i)?;
                    Ok((raw, parsed))
                })
                .collect()
        });
        let mut out = Vec::with_capacity(answers.len());
        let mut previous_action = None;
        for (step, answer) in trajectory.steps.iter().zip(answers) {
            let (_, answer) = answer?;
            let reasoning = self.chat_reasoning(trajectory.episode_id(), &step.observation, &answer, previous_action)?;
            out.push(QARecord::new(reasoning, step.action, &self.config.weights)?);
            previous_action = Some(step.action);
        }
        Ok(out)
    }

    fn chat_reasoning(&self, episode_id: &str, obs: &Observation, answer: &chat::ChatAnswer, previous_action: Option<Action>) -> Result<StepReasoning> {
        let step = obs.step_index as usize;
        let mut unmatched: Vec<&crate::sim::VisibleObject> = obs.visible_objects.iter().collect();
        let mut subgoals = Vec::new();
        for category in &answer.objects {
            if !self.priors.vocab().contains(category) {
                return Err(Error::Annotation {
                    step,
                    message: format!("model listed unknown category `{category}`"),
                    raw: answer.objects.join(", "),
                });
            }
            let hit = unmatched.iter().position(|o| o.category == *category).map(|i| unmatched.swap_remove(i));
            subgoals.push(match hit {
                Some(o) => DetectedObject {
                    category: category.clone(),
                    cell: Some(o.cell),
                    bearing_deg: o.bearing_deg,
                    distance_cells: o.distance_cells,
                },
                None => DetectedObject {
                    category: category.clone(),
                    cell: None,
                    bearing_deg: 0.0,
                    distance_cells: 0.0,
                },
            });
        }
        let truth: Vec<(String, Option<Cell>)> = obs.visible_objects.iter().map(|o| (o.category.clone(), Some(o.cell))).collect();
        let listed: Vec<(String, Option<Cell>)> = subgoals.iter().map(|o| (o.category.clone(), o.cell)).collect();
        let categories: Vec<String> = answer.objects.clone();
        let (room, room_conf) = infer_room(&categories, &self.priors)?;
        let relevance = associate_objects(&categories, &obs.target_category, &self.priors)?;
        let plausibility = self.priors.room_prior(&obs.target_category, room)?;
        Ok(StepReasoning {
            episode_id: episode_id.to_string(),
            step_index: step,
            target_category: obs.target_category.clone(),
            pitch: obs.pose.pitch,
            previous_action,
            detection_confidence: detection_confidence(&truth, &listed),
            subgoals,
            inferred_room: InferredRoom {
                room_type: room,
                confidence: room_conf,
            },
            relevance_scores: relevance,
            plausibility,
            suggestion_kind: SuggestionKind::Freeform,
            suggestion_text: answer.suggestion.clone().unwrap_or_else(|| action_phrase(answer.action).to_string()),
            suggested_action: answer.action,
        })
    }
}

/// Rule-backend annotation of a single trajectory.
pub fn annotate_trajectory(trajectory: &Trajectory, priors: Arc<CooccurrencePriors>, config: AnnotatorConfig) -> Result<Vec<QARecord>> {
    Annotator::rule_based(priors, config).annotate_trajectory(trajectory)
}

pub const QA_KIND: &str = "qa_dataset";

pub fn qa_to_jsonl(records: &[QARecord], manifest_hash: Option<&str>) -> Result<Vec<u8>> {
    artifact::to_jsonl(&Header::new(QA_KIND, manifest_hash), records)
}

pub fn qa_from_jsonl(text: &str) -> Result<Vec<QARecord>> {
    let (header, records): (Header, Vec<QARecord>) = artifact::from_jsonl(text)?;
    header.expect(QA_KIND)?;
    for r in &records {
        r.validate()?;
    }
    Ok(records)
}
