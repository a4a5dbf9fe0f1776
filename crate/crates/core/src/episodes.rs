//! Episode sampling, geodesic distances and generalization splits.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::artifact::{self, Header};
use crate::error::{Error, Result};
use crate::geom::Cell;
use crate::sim::{AgentPose, HEADINGS};
use crate::world::{CategoryVocab, Scene, UNSEEN_CATEGORIES};

pub const DEFAULT_SUCCESS_RADIUS: u32 = 1;
const MAX_START_ATTEMPTS: usize = 10_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub episode_id: String,
    pub scene_id: String,
    pub start_pose: AgentPose,
    pub target_category: String,
    /// Shortest path in meters to the nearest success-eligible cell.
    pub geodesic_l_m: f64,
}

/// Geodesic distance with the default success radius of one cell.
pub fn geodesic_distance(scene: &Scene, from: Cell, target_category: &str) -> Result<f64> {
    geodesic_distance_with(scene, from, target_category, DEFAULT_SUCCESS_RADIUS)
}

/// `cell_size_m` times the minimum 4-connected hop count from `from` to any
/// floor cell within `radius` hops of an instance of `target_category`.
pub fn geodesic_distance_with(scene: &Scene, from: Cell, target_category: &str, radius: u32) -> Result<f64> {
    if !scene.is_floor(from) {
        return Err(Error::Precondition(format!("{from:?} is not a floor cell")));
    }
    let instances: Vec<Cell> = scene.instances_of(target_category).map(|o| o.cell).collect();
    if instances.is_empty() {
        return Err(Error::Unsatisfiable(format!(
            "no `{target_category}` in scene {}",
            scene.id
        )));
    }
    let to_instance = scene.hop_field(&instances);
    let goals: Vec<Cell> = scene
        .floor_cells()
        .filter(|&c| to_instance[scene.size.index(c)].is_some_and(|d| d <= radius))
        .collect();
    let from_start = scene.hop_field(&[from]);
    goals
        .iter()
        .filter_map(|&g| from_start[scene.size.index(g)])
        .min()
        .map(|hops| f64::from(hops) * scene.cell_size_m)
        .ok_or_else(|| Error::Unreachable(format!("`{target_category}` from {from:?} in scene {}", scene.id)))
}

/// Samples `count` episodes with uniform floor starts and headings. Starts
/// already inside the success radius, or cut off from the target, are
/// resampled.
pub fn sample_episodes(scene: &Scene, categories: &[String], count: usize, seed: u64) -> Result<Vec<Episode>> {
    sample_episodes_with(scene, categories, count, seed, DEFAULT_SUCCESS_RADIUS)
}

pub fn sample_episodes_with(scene: &Scene, categories: &[String], count: usize, seed: u64, radius: u32) -> Result<Vec<Episode>> {
    if count == 0 || categories.is_empty() {
        return Err(Error::Precondition("need at least one episode and one category".into()));
    }
    for c in categories {
        if !scene.has_category(c) {
            return Err(Error::Unsatisfiable(format!("no `{c}` in scene {}", scene.id)));
        }
    }
    let floor: Vec<Cell> = scene.floor_cells().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let target = &categories[rng.gen_range(0..categories.len())];
        let mut accepted = None;
        for _ in 0..MAX_START_ATTEMPTS {
            let start = floor[rng.gen_range(0..floor.len())];
            let heading = rng.gen_range(0..HEADINGS);
            match geodesic_distance_with(scene, start, target, radius) {
                Ok(l) if l > 0.0 => {
                    accepted = Some((AgentPose::new(start, heading), l));
                    break;
                }
                Ok(_) | Err(Error::Unreachable(_)) => continue,
                Err(e) => return Err(e),
            }
        }
        let (start_pose, geodesic_l_m) = accepted.ok_or_else(|| {
            Error::Unsatisfiable(format!("no valid start for `{target}` in scene {}", scene.id))
        })?;
        out.push(Episode {
            episode_id: format!("{}-s{seed}-{i:04}", scene.id),
            scene_id: scene.id.clone(),
            start_pose,
            target_category: target.clone(),
            geodesic_l_m,
        });
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    ObjectGen,
    SceneGen,
}

impl std::str::FromStr for SplitMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "object_gen" => Ok(SplitMode::ObjectGen),
            "scene_gen" => Ok(SplitMode::SceneGen),
            _ => Err(Error::Validation(format!("unknown split mode `{s}`"))),
        }
    }
}

/// Train/test partition of categories and scenes.
///
/// Object generalization holds out categories and shares scenes; scene
/// generalization holds out scenes and shares every category.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub format_version: u32,
    pub mode: SplitMode,
    pub seen_categories: Vec<String>,
    pub unseen_categories: Vec<String>,
    pub train_scenes: Vec<String>,
    pub test_scenes: Vec<String>,
}

impl SplitConfig {
    pub fn validate(&self, vocab: &CategoryVocab) -> Result<()> {
        let seen: BTreeSet<&String> = self.seen_categories.iter().collect();
        let unseen: BTreeSet<&String> = self.unseen_categories.iter().collect();
        if seen.intersection(&unseen).next().is_some() {
            return Err(Error::Validation("seen and unseen categories overlap".into()));
        }
        let all: BTreeSet<&String> = seen.union(&unseen).copied().collect();
        let vocab_set: BTreeSet<&String> = vocab.object_categories.iter().collect();
        if all != vocab_set {
            return Err(Error::Validation("seen and unseen categories must cover the vocabulary".into()));
        }
        let train: BTreeSet<&String> = self.train_scenes.iter().collect();
        let test: BTreeSet<&String> = self.test_scenes.iter().collect();
        match self.mode {
            SplitMode::SceneGen => {
                if train.intersection(&test).next().is_some() {
                    return Err(Error::Validation("train and test scenes overlap".into()));
                }
                if !unseen.is_empty() {
                    return Err(Error::Validation("scene_gen shares all categories".into()));
                }
            }
            SplitMode::ObjectGen => {
                if train != test {
                    return Err(Error::Validation("object_gen shares all scenes".into()));
                }
            }
        }
        if train.is_empty() || test.is_empty() {
            return Err(Error::Validation("empty scene split".into()));
        }
        Ok(())
    }

    /// Categories eligible as evaluation targets.
    pub fn eval_categories(&self) -> &[String] {
        match self.mode {
            SplitMode::ObjectGen => &self.unseen_categories,
            SplitMode::SceneGen => &self.seen_categories,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut b = serde_json::to_vec_pretty(self)?;
        b.push(b'\n');
        Ok(b)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        serde_json::from_slice(bytes).map_err(|e| Error::parse(e.line(), e.column(), e.to_string()))
    }
}

pub fn make_splits(scenes: &[Scene], vocab: &CategoryVocab, mode: SplitMode, seed: u64) -> Result<SplitConfig> {
    let ids: Vec<String> = scenes.iter().map(|s| s.id.clone()).collect();
    make_splits_by_id(&ids, vocab, mode, seed)
}

pub fn make_splits_by_id(scene_ids: &[String], vocab: &CategoryVocab, mode: SplitMode, seed: u64) -> Result<SplitConfig> {
    if vocab.len() != 21 {
        return Err(Error::Precondition(format!("expected 21 categories, vocabulary has {}", vocab.len())));
    }
    let split = match mode {
        SplitMode::ObjectGen => {
            if scene_ids.is_empty() {
                return Err(Error::Precondition("object_gen needs at least one scene".into()));
            }
            for u in UNSEEN_CATEGORIES {
                vocab.index_of(u)?;
            }
            let (unseen, seen): (Vec<String>, Vec<String>) = vocab
                .object_categories
                .iter()
                .cloned()
                .partition(|c| UNSEEN_CATEGORIES.contains(&c.as_str()));
            SplitConfig {
                format_version: artifact::FORMAT_VERSION,
                mode,
                seen_categories: seen,
                unseen_categories: unseen,
                train_scenes: scene_ids.to_vec(),
                test_scenes: scene_ids.to_vec(),
            }
        }
        SplitMode::SceneGen => {
            if scene_ids.len() < 2 {
                return Err(Error::Precondition("scene_gen needs at least 2 scenes".into()));
            }
            let mut shuffled = scene_ids.to_vec();
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let n_test = ((scene_ids.len() as f64 * 0.2).round() as usize).clamp(1, scene_ids.len() - 1);
            let mut test = shuffled.split_off(scene_ids.len() - n_test);
            let mut train = shuffled;
            train.sort();
            test.sort();
            SplitConfig {
                format_version: artifact::FORMAT_VERSION,
                mode,
                seen_categories: vocab.object_categories.clone(),
                unseen_categories: Vec::new(),
                train_scenes: train,
                test_scenes: test,
            }
        }
    };
    split.validate(vocab)?;
    Ok(split)
}

pub fn episodes_to_jsonl(episodes: &[Episode], manifest_hash: Option<&str>) -> Result<Vec<u8>> {
    artifact::to_jsonl(&Header::new("episodes", manifest_hash), episodes)
}

pub fn episodes_from_jsonl(text: &str) -> Result<Vec<Episode>> {
    let (header, eps): (Header, Vec<Episode>) = artifact::from_jsonl(text)?;
    header.expect("episodes")?;
    Ok(eps)
}
