//! Running policies in the simulator and scoring them with SR, SPL and
//! SoftSPL.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::episodes::{sample_episodes_with, Episode, SplitConfig, SplitMode};
use crate::error::{Error, Result};
use crate::geom::Cell;
use crate::hcot::{AnnotatorConfig, QARecord, Reasoner};
use crate::policy::{featurize, predict, train, FeatureSet, LossMode, PolicyModel, TrainConfig};
use crate::sim::{self, Action, EpisodeStatus, Observation, SimConfig};
use crate::world::{CategoryVocab, CooccurrencePriors, Scene};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub episode_id: String,
    pub scene_id: String,
    pub target_category: String,
    pub success: bool,
    pub l_m: f64,
    pub p_m: f64,
    pub steps: u32,
    pub final_distance_m: f64,
    pub start_distance_m: f64,
    pub outcome: EpisodeStatus,
}

impl EpisodeResult {
    fn efficiency(&self) -> f64 {
        let denom = self.l_m.max(self.p_m);
        if denom > 0.0 {
            self.l_m / denom
        } else {
            1.0
        }
    }

    /// S_i * l_i / max(l_i, p_i).
    pub fn spl_term(&self) -> f64 {
        if self.success {
            self.efficiency()
        } else {
            0.0
        }
    }

    /// Clipped progress times path efficiency.
    pub fn soft_spl_term(&self) -> f64 {
        let progress = if self.start_distance_m > 0.0 {
            (1.0 - self.final_distance_m / self.start_distance_m).max(0.0)
        } else {
            1.0
        };
        progress * self.efficiency()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n: usize,
    pub sr: f64,
    pub spl: f64,
    pub soft_spl: f64,
}

/// Order-independent mean: terms are summed in sorted order.
fn stable_mean(mut terms: Vec<f64>) -> f64 {
    let n = terms.len() as f64;
    terms.sort_by(f64::total_cmp);
    terms.into_iter().sum::<f64>() / n
}

pub fn compute_metrics(results: &[EpisodeResult]) -> Result<Metrics> {
    if results.is_empty() {
        return Err(Error::Precondition("no episode results to score".into()));
    }
    for r in results {
        if r.success && r.p_m <= 0.0 && r.l_m > 0.0 {
            return Err(Error::Validation(format!("episode {} succeeded with zero path length", r.episode_id)));
        }
        if r.final_distance_m < 0.0 || r.l_m < 0.0 || r.p_m < 0.0 {
            return Err(Error::Validation(format!("episode {} has a negative distance", r.episode_id)));
        }
    }
    Ok(Metrics {
        n: results.len(),
        sr: stable_mean(results.iter().map(|r| if r.success { 1.0 } else { 0.0 }).collect()),
        spl: stable_mean(results.iter().map(EpisodeResult::spl_term).collect()),
        soft_spl: stable_mean(results.iter().map(EpisodeResult::soft_spl_term).collect()),
    })
}

/// Something that picks actions from observations.
pub trait Controller {
    fn reset(&mut self, episode: &Episode);
    fn act(&mut self, observation: &Observation) -> Result<Action>;
}

/// Greedy linear policy fed by the live rule-backend reasoning.
pub struct PolicyController {
    model: Arc<PolicyModel>,
    vocab: CategoryVocab,
    priors: Arc<CooccurrencePriors>,
    annotator: AnnotatorConfig,
    reasoner: Option<Reasoner>,
}

impl PolicyController {
    pub fn new(model: Arc<PolicyModel>, priors: Arc<CooccurrencePriors>) -> Result<Self> {
        let vocab = priors.vocab();
        model.check_vocab(&vocab)?;
        Ok(Self {
            model,
            vocab,
            priors,
            annotator: AnnotatorConfig::default(),
            reasoner: None,
        })
    }
}

impl Controller for PolicyController {
    fn reset(&mut self, episode: &Episode) {
        self.reasoner = Some(Reasoner::new(self.priors.clone(), self.annotator, &episode.episode_id));
    }

    fn act(&mut self, observation: &Observation) -> Result<Action> {
        let reasoner = self.reasoner.as_mut().ok_or_else(|| Error::Precondition("controller used before reset".into()))?;
        let reasoning = reasoner.reason(observation)?;
        let x = crate::policy::featurize_reasoning(&reasoning, &self.vocab, self.model.feature_set)?;
        let (action, _) = predict(&self.model.params, &x);
        reasoner.record_action(action);
        Ok(action)
    }
}

/// Executes the rule planner's suggestion directly.
pub struct PlannerController {
    priors: Arc<CooccurrencePriors>,
    reasoner: Option<Reasoner>,
}

impl PlannerController {
    pub fn new(priors: Arc<CooccurrencePriors>) -> Self {
        Self { priors, reasoner: None }
    }
}

impl Controller for PlannerController {
    fn reset(&mut self, episode: &Episode) {
        self.reasoner = Some(Reasoner::new(self.priors.clone(), AnnotatorConfig::default(), &episode.episode_id));
    }

    fn act(&mut self, observation: &Observation) -> Result<Action> {
        let reasoner = self.reasoner.as_mut().ok_or_else(|| Error::Precondition("controller used before reset".into()))?;
        let action = reasoner.reason(observation)?.suggested_action;
        reasoner.record_action(action);
        Ok(action)
    }
}

/// Uniformly random actions, reseeded per episode from the episode id.
pub struct RandomController {
    seed: u64,
    rng: ChaCha8Rng,
}

impl RandomController {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Controller for RandomController {
    fn reset(&mut self, episode: &Episode) {
        let digest = crate::artifact::sha256_hex(format!("{}:{}", self.seed, episode.episode_id).as_bytes());
        self.rng = ChaCha8Rng::seed_from_u64(u64::from_str_radix(&digest[..16], 16).expect("hex digest"));
    }

    fn act(&mut self, _: &Observation) -> Result<Action> {
        Ok(Action::ALL[self.rng.gen_range(0..Action::ALL.len())])
    }
}

/// Replays a fixed action list, then stops.
pub struct ReplayController {
    actions: Vec<Action>,
    next: usize,
}

impl ReplayController {
    pub fn new(actions: Vec<Action>) -> Self {
        Self { actions, next: 0 }
    }
}

impl Controller for ReplayController {
    fn reset(&mut self, _: &Episode) {
        self.next = 0;
    }

    fn act(&mut self, _: &Observation) -> Result<Action> {
        let a = self.actions.get(self.next).copied().unwrap_or(Action::Stop);
        self.next += 1;
        Ok(a)
    }
}

/// Cells visited plus one shortest path, for plotting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub episode_id: String,
    pub actions: Vec<Action>,
    pub cells_visited: Vec<Cell>,
    pub shortest_path: Vec<Cell>,
}

/// A shortest hop path from `from` into the success region of `category`.
pub fn shortest_path(scene: &Scene, from: Cell, category: &str, radius: u32) -> Vec<Cell> {
    let instances: Vec<Cell> = scene.instances_of(category).map(|o| o.cell).collect();
    let to_object = scene.hop_field(&instances);
    let goals: Vec<Cell> = scene
        .floor_cells()
        .filter(|&c| to_object[scene.size.index(c)].is_some_and(|d| d <= radius))
        .collect();
    let field = scene.hop_field(&goals);
    let Some(mut d) = field[scene.size.index(from)] else {
        return Vec::new();
    };
    let mut path = vec![from];
    let mut here = from;
    while d > 0 {
        let next = here
            .neighbors4()
            .into_iter()
            .find(|&n| scene.size.contains(n) && field[scene.size.index(n)] == Some(d - 1))
            .expect("BFS field has a descending neighbour");
        path.push(next);
        here = next;
        d -= 1;
    }
    path
}

pub fn run_episode(controller: &mut dyn Controller, scene: Arc<Scene>, episode: &Episode, config: SimConfig) -> Result<(EpisodeResult, EpisodeTrace)> {
    controller.reset(episode);
    let mut state = sim::reset(scene.clone(), episode, config)?;
    let start_distance_m = state.distance_to_target_m()?;
    let mut obs = state.observe();
    let mut actions = Vec::new();
    let mut cells = vec![state.pose.position];
    while !state.status.is_terminal() {
        let action = controller.act(&obs)?;
        let (next, next_obs) = sim::step(&state, action)?;
        actions.push(action);
        if next.pose.position != state.pose.position {
            cells.push(next.pose.position);
        }
        state = next;
        obs = next_obs;
    }
    let result = EpisodeResult {
        episode_id: episode.episode_id.clone(),
        scene_id: episode.scene_id.clone(),
        target_category: episode.target_category.clone(),
        success: state.status == EpisodeStatus::Success,
        l_m: episode.geodesic_l_m,
        p_m: state.path_length_m,
        steps: state.steps_taken,
        final_distance_m: state.distance_to_target_m()?,
        start_distance_m,
        outcome: state.status,
    };
    let trace = EpisodeTrace {
        episode_id: episode.episode_id.clone(),
        actions,
        cells_visited: cells,
        shortest_path: shortest_path(&scene, episode.start_pose.position, &episode.target_category, config.success_radius_cells),
    };
    Ok((result, trace))
}

/// Evaluation episodes for a split: test scenes only, eval categories only.
/// Scenes without any eval category are skipped.
pub fn split_episodes(split: &SplitConfig, scenes: &BTreeMap<String, Arc<Scene>>, episodes_per_scene: usize, seed: u64, radius: u32) -> Result<Vec<Episode>> {
    let mut out = Vec::new();
    for (i, id) in split.test_scenes.iter().enumerate() {
        let scene = scenes.get(id).ok_or_else(|| Error::Validation(format!("split names unknown scene `{id}`")))?;
        let present: Vec<String> = split.eval_categories().iter().filter(|c| scene.has_category(c)).cloned().collect();
        if present.is_empty() {
            continue;
        }
        let scene_seed = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i as u64);
        match sample_episodes_with(scene, &present, episodes_per_scene, scene_seed, radius) {
            Ok(eps) => out.extend(eps),
            Err(Error::Unsatisfiable(msg)) => log::warn!("skipping scene {id}: {msg}"),
            Err(e) => return Err(e),
        }
    }
    check_split_episodes(split, &out)?;
    if out.is_empty() {
        return Err(Error::Unsatisfiable("split yields no evaluation episodes".into()));
    }
    Ok(out)
}

/// Fails on any episode from a train-only scene or a training category.
pub fn check_split_episodes(split: &SplitConfig, episodes: &[Episode]) -> Result<()> {
    for e in episodes {
        if !split.eval_categories().contains(&e.target_category) {
            return Err(Error::Validation(format!("episode {} targets non-eval category {}", e.episode_id, e.target_category)));
        }
        if !split.test_scenes.contains(&e.scene_id) {
            return Err(Error::Validation(format!("episode {} uses non-test scene {}", e.episode_id, e.scene_id)));
        }
        if split.mode == SplitMode::SceneGen && split.train_scenes.contains(&e.scene_id) {
            return Err(Error::Validation(format!("episode {} uses training scene {}", e.episode_id, e.scene_id)));
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metrics: Metrics,
    pub results: Vec<EpisodeResult>,
    pub traces: Vec<EpisodeTrace>,
}

/// Runs one controller per episode in parallel; output keeps episode order.
pub fn evaluate_episodes<F>(make_controller: F, scenes: &BTreeMap<String, Arc<Scene>>, episodes: &[Episode], config: SimConfig) -> Result<EvalReport>
where
    F: Fn() -> Result<Box<dyn Controller>> + Sync,
{
    let runs: Vec<Result<(EpisodeResult, EpisodeTrace)>> = episodes
        .par_iter()
        .map(|e| {
            let scene = scenes.get(&e.scene_id).ok_or_else(|| Error::Validation(format!("unknown scene `{}`", e.scene_id)))?;
            let mut c = make_controller()?;
            run_episode(c.as_mut(), scene.clone(), e, config)
        })
        .collect();
    let mut results = Vec::with_capacity(runs.len());
    let mut traces = Vec::with_capacity(runs.len());
    for r in runs {
        let (res, tr) = r?;
        results.push(res);
        traces.push(tr);
    }
    Ok(EvalReport {
        metrics: compute_metrics(&results)?,
        results,
        traces,
    })
}

pub fn evaluate_split(
    model: Arc<PolicyModel>,
    priors: Arc<CooccurrencePriors>,
    split: &SplitConfig,
    scenes: &BTreeMap<String, Arc<Scene>>,
    episodes_per_scene: usize,
    seed: u64,
    config: SimConfig,
) -> Result<EvalReport> {
    let episodes = split_episodes(split, scenes, episodes_per_scene, seed, config.success_radius_cells)?;
    PolicyController::new(model.clone(), priors.clone())?;
    evaluate_episodes(
        || Ok(Box::new(PolicyController::new(model.clone(), priors.clone())?) as Box<dyn Controller>),
        scenes,
        &episodes,
        config,
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variant {
    pub label: &'static str,
    pub feature_set: FeatureSet,
    pub loss_mode: LossMode,
}

pub const ABLATION_LADDER: [Variant; 4] = [
    Variant {
        label: "Pure Text",
        feature_set: FeatureSet::PureText,
        loss_mode: LossMode::Ce,
    },
    Variant {
        label: "Standard CoT",
        feature_set: FeatureSet::Cot,
        loss_mode: LossMode::Ce,
    },
    Variant {
        label: "H-CoT",
        feature_set: FeatureSet::Hcot,
        loss_mode: LossMode::Ce,
    },
    Variant {
        label: "H-CoT + Closed-Loop",
        feature_set: FeatureSet::Hcot,
        loss_mode: LossMode::Adaptive,
    },
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub feature_set: FeatureSet,
    pub loss_mode: LossMode,
    pub metrics: Metrics,
}

/// Trains `feature_set` / `loss_mode` on `records` and wraps the result.
pub fn train_model(records: &[QARecord], vocab: &CategoryVocab, feature_set: FeatureSet, config: TrainConfig, manifest_hash: Option<&str>) -> Result<PolicyModel> {
    let data = records.iter().map(|r| featurize(r, vocab, feature_set)).collect::<Result<Vec<_>>>()?;
    let (params, _) = train(&data, &config)?;
    Ok(PolicyModel::new(feature_set, vocab, config, params, manifest_hash))
}

/// Trains the four ladder variants on identical data and seeds and
/// evaluates each on the same episodes.
pub fn run_ablation(
    records: &[QARecord],
    priors: Arc<CooccurrencePriors>,
    scenes: &BTreeMap<String, Arc<Scene>>,
    episodes: &[Episode],
    train_config: TrainConfig,
    sim_config: SimConfig,
) -> Result<Vec<AblationRow>> {
    let vocab = priors.vocab();
    let mut rows = Vec::with_capacity(ABLATION_LADDER.len());
    for v in ABLATION_LADDER {
        let cfg = TrainConfig {
            loss_mode: v.loss_mode,
            ..train_config
        };
        let model = Arc::new(train_model(records, &vocab, v.feature_set, cfg, None)?);
        let report = evaluate_episodes(
            || Ok(Box::new(PolicyController::new(model.clone(), priors.clone())?) as Box<dyn Controller>),
            scenes,
            episodes,
            sim_config,
        )?;
        rows.push(AblationRow {
            variant: v.label.to_string(),
            feature_set: v.feature_set,
            loss_mode: v.loss_mode,
            metrics: report.metrics,
        });
    }
    Ok(rows)
}

/// Plain-text table with percentages.
pub fn render_ablation(rows: &[AblationRow]) -> String {
    let mut s = format!("{:<22} {:>7} {:>7} {:>9}\n", "Variant", "SR", "SPL", "SoftSPL");
    for r in rows {
        s.push_str(&format!(
            "{:<22} {:>6.1}% {:>6.1}% {:>8.1}%\n",
            r.variant,
            100.0 * r.metrics.sr,
            100.0 * r.metrics.spl,
            100.0 * r.metrics.soft_spl
        ));
    }
    s
}
