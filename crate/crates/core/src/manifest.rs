//! Experiment manifests: one TOML file holding every knob of a pipeline
//! run. Each artifact records the hash of the effective manifest that
//! produced it.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::artifact::sha256_hex;
use crate::episodes::SplitMode;
use crate::error::{Error, Result};
use crate::hcot::{AnnotatorConfig, ConfidenceWeights, PlannerConfig};
use crate::policy::{FeatureSet, LossMode, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Manifest {
    pub tool_version: String,
    /// Master seed; stage seeds are derived from it unless set explicitly.
    pub seed: u64,
    pub paths: Paths,
    pub world: WorldSection,
    pub episodes: EpisodeSection,
    pub annotate: AnnotateSection,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub serve: ServeSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub out_dir: PathBuf,
    /// Optional co-occurrence priors file; the shipped table otherwise.
    pub priors: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldSection {
    pub scene_count: usize,
    pub width: usize,
    pub height: usize,
    pub rooms: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeSection {
    pub split: SplitMode,
    pub train_per_scene: usize,
    pub success_radius_cells: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Rule,
    Chat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnotateSection {
    pub backend: BackendKind,
    pub p_noise: f64,
    pub plausibility_threshold: f64,
    pub relevance_gate: f64,
    pub detection_weight: f64,
    pub alignment_weight: f64,
    pub max_in_flight: usize,
    pub chat_timeout_s: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub features: FeatureSet,
    pub loss: LossMode,
    pub alpha: f64,
    pub beta: f64,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub episodes_per_scene: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeSection {
    pub host: String,
    pub port: u16,
}

impl Default for Manifest {
    fn default() -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: 0,
            paths: Paths::default(),
            world: WorldSection::default(),
            episodes: EpisodeSection::default(),
            annotate: AnnotateSection::default(),
            train: TrainSection::default(),
            eval: EvalSection::default(),
            serve: ServeSection::default(),
        }
    }
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("run"),
            priors: None,
        }
    }
}

impl Default for WorldSection {
    fn default() -> Self {
        Self {
            scene_count: 10,
            width: 16,
            height: 16,
            rooms: 4,
        }
    }
}

impl Default for EpisodeSection {
    fn default() -> Self {
        Self {
            split: SplitMode::SceneGen,
            train_per_scene: 20,
            success_radius_cells: 1,
        }
    }
}

impl Default for AnnotateSection {
    fn default() -> Self {
        let p = PlannerConfig::default();
        let w = ConfidenceWeights::default();
        Self {
            backend: BackendKind::Rule,
            p_noise: 0.0,
            plausibility_threshold: p.plausibility_threshold,
            relevance_gate: p.relevance_gate,
            detection_weight: w.detection,
            alignment_weight: w.alignment,
            max_in_flight: 4,
            chat_timeout_s: 30,
        }
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            features: FeatureSet::Hcot,
            loss: t.loss_mode,
            alpha: t.alpha,
            beta: t.beta,
            learning_rate: t.learning_rate,
            momentum: t.momentum,
            batch_size: t.batch_size,
            epochs: t.epochs,
        }
    }
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { episodes_per_scene: 25 }
    }
}

impl Default for ServeSection {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".into(),
            port: 8080,
        }
    }
}

impl Manifest {
    pub fn parse(text: &str) -> Result<Self> {
        let m: Manifest = toml::from_str(text).map_err(|e| {
            let (line, column) = e
                .span()
                .map(|s| {
                    let before = &text[..s.start.min(text.len())];
                    (before.matches('\n').count() + 1, before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1)
                })
                .unwrap_or((1, 1));
            Error::Parse {
                line,
                column,
                message: e.message().to_string(),
            }
        })?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Canonical text of the effective manifest.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Identity of the experiment: the effective manifest minus the output
    /// directory, so the same run in another place hashes the same.
    pub fn hash(&self) -> Result<String> {
        let mut m = self.clone();
        m.paths.out_dir = PathBuf::new();
        Ok(sha256_hex(m.to_toml()?.as_bytes()))
    }

    /// Seed for a named stage: derived from the master seed so stages stay
    /// independent.
    pub fn stage_seed(&self, stage: &str) -> u64 {
        let digest = sha256_hex(format!("{}:{stage}", self.seed).as_bytes());
        u64::from_str_radix(&digest[..16], 16).expect("hex digest")
    }

    pub fn annotator_config(&self) -> AnnotatorConfig {
        AnnotatorConfig {
            planner: PlannerConfig {
                plausibility_threshold: self.annotate.plausibility_threshold,
                relevance_gate: self.annotate.relevance_gate,
                success_radius_cells: self.episodes.success_radius_cells,
            },
            weights: ConfidenceWeights {
                detection: self.annotate.detection_weight,
                alignment: self.annotate.alignment_weight,
            },
            p_noise: self.annotate.p_noise,
            noise_seed: self.stage_seed("annotate"),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            loss_mode: self.train.loss,
            alpha: self.train.alpha,
            beta: self.train.beta,
            learning_rate: self.train.learning_rate,
            momentum: self.train.momentum,
            batch_size: self.train.batch_size,
            epochs: self.train.epochs,
            seed: self.stage_seed("train"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train_config().validate()?;
        self.annotator_config().validate()?;
        if self.world.scene_count == 0 {
            return Err(Error::Validation("world.scene_count must be positive".into()));
        }
        if self.episodes.train_per_scene == 0 || self.eval.episodes_per_scene == 0 {
            return Err(Error::Validation("episode counts must be positive".into()));
        }
        if self.annotate.max_in_flight == 0 {
            return Err(Error::Validation("annotate.max_in_flight must be positive".into()));
        }
        Ok(())
    }

    pub fn out(&self, rel: &str) -> PathBuf {
        self.paths.out_dir.join(rel)
    }
}
