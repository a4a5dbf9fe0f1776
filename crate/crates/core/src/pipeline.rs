//! File-based pipeline stages driven by a [`Manifest`]. Each stage reads
//! the previous stage's artifacts from the output directory and writes its
//! own, stamped with the manifest hash.
//!
//! Layout under `paths.out_dir`:
//!
//! ```text
//! manifest.toml            effective manifest
//! scenes/<id>.json
//! splits.json
//! episodes/{train,eval}.jsonl
//! demos/scripted/<episode>.jsonl, demos/human/<episode>.jsonl, demos/report.json
//! qa/qa.jsonl
//! models/policy.json, models/train_log.jsonl
//! reports/eval_*.jsonl|json, reports/ablation.{txt,jsonl}
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artifact::{self, write_file, Header};
use crate::demo::{filter_demos, scripted_demo, trajectory_from_jsonl, trajectory_to_jsonl, validate_trajectory, FilterReport, Trajectory};
use crate::episodes::{episodes_from_jsonl, episodes_to_jsonl, make_splits_by_id, sample_episodes_with, Episode, SplitConfig, SplitMode};
use crate::error::{Error, Result};
use crate::eval::{check_split_episodes, evaluate_episodes, render_ablation, run_ablation, AblationRow, Controller, EvalReport, Metrics, PolicyController, RandomController};
use crate::hcot::{qa_from_jsonl, qa_to_jsonl, Annotator, AnnotatorBackend, ChatConfig, HttpChatClient, QARecord};
use crate::manifest::{BackendKind, Manifest};
use crate::policy::{epoch_log_to_jsonl, featurize, train, PolicyModel};
use crate::sim::SimConfig;
use crate::world::{deserialize_scene, generate_scene, load_priors, serialize_scene_with, CooccurrencePriors, Scene};

type SceneMap = BTreeMap<String, Arc<Scene>>;

pub struct Run {
    pub manifest: Manifest,
    pub hash: String,
    pub priors: Arc<CooccurrencePriors>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Summary<T> {
    format_version: u32,
    kind: String,
    manifest_hash: String,
    #[serde(flatten)]
    body: T,
}

fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(value)?;
    v.push(b'\n');
    Ok(v)
}

fn jsonl_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    if !dir.exists() {
        return Ok(out);
    }
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d)? {
            let p = entry?.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|e| e == "jsonl") {
                out.push(p);
            }
        }
    }
    out.sort();
    Ok(out)
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

impl Run {
    pub fn new(manifest: Manifest) -> Result<Self> {
        manifest.validate()?;
        let priors = match &manifest.paths.priors {
            Some(p) => load_priors(p)?,
            None => CooccurrencePriors::default(),
        };
        priors.check_vocab(&priors.vocab())?;
        Ok(Self {
            hash: manifest.hash()?,
            manifest,
            priors: Arc::new(priors),
        })
    }

    fn h(&self) -> Option<&str> {
        Some(&self.hash)
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.manifest.out(rel)
    }

    fn sim_config(&self) -> SimConfig {
        SimConfig {
            success_radius_cells: self.manifest.episodes.success_radius_cells,
            ..SimConfig::default()
        }
    }

    fn write_manifest(&self) -> Result<()> {
        write_file(&self.path("manifest.toml"), self.manifest.to_toml()?.as_bytes())
    }

    pub fn gen_scenes(&self) -> Result<Vec<Scene>> {
        self.write_manifest()?;
        let w = &self.manifest.world;
        let vocab = self.priors.vocab();
        let base = self.manifest.seed.wrapping_mul(1000);
        let scenes: Vec<Scene> = (0..w.scene_count as u64)
            .into_par_iter()
            .map(|i| generate_scene(base.wrapping_add(i), w.width, w.height, w.rooms, &vocab, &self.priors))
            .collect::<Result<_>>()?;
        for s in &scenes {
            write_file(&self.path(&format!("scenes/{}.json", s.id)), &serialize_scene_with(s, self.h())?)?;
        }
        Ok(scenes)
    }

    pub fn load_scenes(&self) -> Result<BTreeMap<String, Arc<Scene>>> {
        let dir = self.path("scenes");
        if !dir.exists() {
            return Err(Error::Validation(format!("{} does not exist; run gen-scenes first", dir.display())));
        }
        let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        paths.retain(|p| p.extension().is_some_and(|e| e == "json"));
        paths.sort();
        let mut out = BTreeMap::new();
        for p in paths {
            let scene = deserialize_scene(&std::fs::read(&p)?).map_err(|e| Error::Validation(format!("{}: {e}", p.display())))?;
            out.insert(scene.id.clone(), Arc::new(scene));
        }
        if out.is_empty() {
            return Err(Error::Validation(format!("no scenes in {}", dir.display())));
        }
        Ok(out)
    }

    /// Writes the split plus training and evaluation episodes.
    pub fn gen_episodes(&self) -> Result<(SplitConfig, Vec<Episode>, Vec<Episode>)> {
        self.write_manifest()?;
        let scenes = self.load_scenes()?;
        let ids: Vec<String> = scenes.keys().cloned().collect();
        let vocab = self.priors.vocab();
        let split = make_splits_by_id(&ids, &vocab, self.manifest.episodes.split, self.manifest.stage_seed("split"))?;
        let radius = self.manifest.episodes.success_radius_cells;
        let base = self.manifest.seed.wrapping_mul(1000);
        let mut train_eps = Vec::new();
        for (i, id) in split.train_scenes.iter().enumerate() {
            let scene = &scenes[id];
            let cats: Vec<String> = split.seen_categories.iter().filter(|c| scene.has_category(c)).cloned().collect();
            if cats.is_empty() {
                continue;
            }
            train_eps.extend(sample_episodes_with(scene, &cats, self.manifest.episodes.train_per_scene, base.wrapping_add(i as u64), radius)?);
        }
        if train_eps.is_empty() {
            return Err(Error::Unsatisfiable("no training episodes could be sampled".into()));
        }
        let eval_eps = crate::eval::split_episodes(&split, &scenes, self.manifest.eval.episodes_per_scene, base.wrapping_add(500), radius)?;
        write_file(&self.path("splits.json"), &split.to_bytes()?)?;
        write_file(&self.path("episodes/train.jsonl"), &episodes_to_jsonl(&train_eps, self.h())?)?;
        write_file(&self.path("episodes/eval.jsonl"), &episodes_to_jsonl(&eval_eps, self.h())?)?;
        Ok((split, train_eps, eval_eps))
    }

    pub fn load_split(&self) -> Result<SplitConfig> {
        let split = SplitConfig::from_bytes(&std::fs::read(self.path("splits.json"))?)?;
        split.validate(&self.priors.vocab())?;
        Ok(split)
    }

    pub fn load_episodes(&self, which: &str) -> Result<Vec<Episode>> {
        episodes_from_jsonl(&read_text(&self.path(&format!("episodes/{which}.jsonl")))?)
    }

    /// Scripted demonstrations for every training episode; only successful
    /// ones are kept on disk.
    pub fn run_demos(&self) -> Result<FilterReport> {
        self.write_manifest()?;
        let scenes = self.load_scenes()?;
        let episodes = self.load_episodes("train")?;
        let base = self.manifest.stage_seed("demo");
        let config = self.sim_config();
        let demos: Vec<Trajectory> = episodes
            .par_iter()
            .enumerate()
            .map(|(i, e)| {
                let scene = scenes.get(&e.scene_id).ok_or_else(|| Error::Validation(format!("unknown scene {}", e.scene_id)))?;
                scripted_demo(scene.clone(), e, base.wrapping_add(i as u64), config)
            })
            .collect::<Result<_>>()?;
        let (kept, report) = filter_demos(demos);
        let dir = self.path("demos/scripted");
        if dir.exists() {
            std::fs::remove_dir_all(&dir)?;
        }
        for t in &kept {
            write_file(&dir.join(format!("{}.jsonl", t.episode_id())), &trajectory_to_jsonl(t, self.h())?)?;
        }
        let summary = Summary {
            format_version: artifact::FORMAT_VERSION,
            kind: "demo_report".into(),
            manifest_hash: self.hash.clone(),
            body: report.clone(),
        };
        write_file(&self.path("demos/report.json"), &json_bytes(&summary)?)?;
        Ok(report)
    }

    /// Every stored demonstration, scripted and human, in path order.
    pub fn load_demos(&self) -> Result<Vec<Trajectory>> {
        jsonl_files(&self.path("demos"))?
            .iter()
            .map(|p| trajectory_from_jsonl(&read_text(p)?).map_err(|e| Error::Validation(format!("{}: {e}", p.display()))))
            .collect()
    }

    pub fn annotator(&self) -> Result<Annotator> {
        let config = self.manifest.annotator_config();
        let backend = match self.manifest.annotate.backend {
            BackendKind::Rule => AnnotatorBackend::RuleBased,
            BackendKind::Chat => {
                let mut chat = ChatConfig::from_env()?;
                chat.timeout = Duration::from_secs(self.manifest.annotate.chat_timeout_s);
                let model = chat.model.clone();
                let temperature = chat.temperature;
                AnnotatorBackend::ChatService {
                    client: Arc::new(HttpChatClient::new(chat)?),
                    model,
                    temperature,
                    max_in_flight: self.manifest.annotate.max_in_flight,
                }
            }
        };
        Ok(Annotator {
            priors: self.priors.clone(),
            config,
            backend,
        })
    }

    pub fn annotate(&self) -> Result<Vec<QARecord>> {
        self.write_manifest()?;
        let scenes = self.load_scenes()?;
        let demos = self.load_demos()?;
        if demos.is_empty() {
            return Err(Error::Validation("no demonstrations to annotate; run demo first".into()));
        }
        for t in &demos {
            let scene = scenes.get(&t.episode.scene_id).ok_or_else(|| Error::Validation(format!("unknown scene {}", t.episode.scene_id)))?;
            validate_trajectory(scene.clone(), t, self.sim_config())?;
        }
        let annotator = self.annotator()?;
        let per_demo: Vec<Vec<QARecord>> = match annotator.backend {
            AnnotatorBackend::RuleBased => demos.par_iter().map(|t| annotator.annotate_trajectory(t)).collect::<Result<_>>()?,
            AnnotatorBackend::ChatService { .. } => demos.iter().map(|t| annotator.annotate_trajectory(t)).collect::<Result<_>>()?,
        };
        let records: Vec<QARecord> = per_demo.into_iter().flatten().collect();
        write_file(&self.path("qa/qa.jsonl"), &qa_to_jsonl(&records, self.h())?)?;
        Ok(records)
    }

    pub fn load_qa(&self) -> Result<Vec<QARecord>> {
        qa_from_jsonl(&read_text(&self.path("qa/qa.jsonl"))?)
    }

    pub fn train(&self) -> Result<PolicyModel> {
        self.write_manifest()?;
        let records = self.load_qa()?;
        let vocab = self.priors.vocab();
        let data = records
            .iter()
            .map(|r| featurize(r, &vocab, self.manifest.train.features))
            .collect::<Result<Vec<_>>>()?;
        let config = self.manifest.train_config();
        let (params, log) = train(&data, &config)?;
        let model = PolicyModel::new(self.manifest.train.features, &vocab, config, params, self.h());
        write_file(&self.path("models/policy.json"), &model.to_bytes()?)?;
        write_file(&self.path("models/train_log.jsonl"), &epoch_log_to_jsonl(&log, self.h())?)?;
        Ok(model)
    }

    pub fn load_model(&self) -> Result<PolicyModel> {
        let m = PolicyModel::from_bytes(&std::fs::read(self.path("models/policy.json"))?)?;
        m.check_vocab(&self.priors.vocab())?;
        Ok(m)
    }

    fn eval_inputs(&self, mode: Option<SplitMode>) -> Result<(SceneMap, Vec<Episode>)> {
        let split = self.load_split()?;
        if let Some(m) = mode {
            if m != split.mode {
                return Err(Error::Validation(format!(
                    "requested split {m:?} but the episodes were generated for {:?}",
                    split.mode
                )));
            }
        }
        let episodes = self.load_episodes("eval")?;
        check_split_episodes(&split, &episodes)?;
        Ok((self.load_scenes()?, episodes))
    }

    pub fn eval(&self, mode: Option<SplitMode>) -> Result<EvalReport> {
        self.write_manifest()?;
        let (scenes, episodes) = self.eval_inputs(mode)?;
        let model = Arc::new(self.load_model()?);
        let priors = self.priors.clone();
        let report = evaluate_episodes(
            || Ok(Box::new(PolicyController::new(model.clone(), priors.clone())?) as Box<dyn Controller>),
            &scenes,
            &episodes,
            self.sim_config(),
        )?;
        let random = evaluate_episodes(
            || Ok(Box::new(RandomController::new(self.manifest.stage_seed("random"))) as Box<dyn Controller>),
            &scenes,
            &episodes,
            self.sim_config(),
        )?;
        write_file(
            &self.path("reports/eval_results.jsonl"),
            &artifact::to_jsonl(&Header::new("eval_results", self.h()), &report.results)?,
        )?;
        write_file(
            &self.path("reports/eval_traces.jsonl"),
            &artifact::to_jsonl(&Header::new("eval_traces", self.h()), &report.traces)?,
        )?;
        #[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
        struct EvalSummary {
            split: SplitMode,
            policy: Metrics,
            random_baseline: Metrics,
        }
        let summary = Summary {
            format_version: artifact::FORMAT_VERSION,
            kind: "eval_summary".into(),
            manifest_hash: self.hash.clone(),
            body: EvalSummary {
                split: self.load_split()?.mode,
                policy: report.metrics,
                random_baseline: random.metrics,
            },
        };
        write_file(&self.path("reports/eval_summary.json"), &json_bytes(&summary)?)?;
        Ok(report)
    }

    pub fn ablate(&self) -> Result<Vec<AblationRow>> {
        self.write_manifest()?;
        let (scenes, episodes) = self.eval_inputs(None)?;
        let records = self.load_qa()?;
        let rows = run_ablation(&records, self.priors.clone(), &scenes, &episodes, self.manifest.train_config(), self.sim_config())?;
        write_file(&self.path("reports/ablation.txt"), render_ablation(&rows).as_bytes())?;
        write_file(
            &self.path("reports/ablation.jsonl"),
            &artifact::to_jsonl(&Header::new("ablation", self.h()), &rows)?,
        )?;
        Ok(rows)
    }

    /// Checks every artifact present: scenes, split, episodes, demos (by
    /// replay), QA schema and the model file.
    pub fn validate(&self) -> Result<Vec<String>> {
        let mut checked = Vec::new();
        let vocab = self.priors.vocab();
        let scenes = self.load_scenes()?;
        checked.push(format!("{} scenes", scenes.len()));
        if self.path("splits.json").exists() {
            let split = self.load_split()?;
            for id in split.train_scenes.iter().chain(&split.test_scenes) {
                if !scenes.contains_key(id) {
                    return Err(Error::Validation(format!("split names unknown scene {id}")));
                }
            }
            let eval_eps = self.load_episodes("eval")?;
            check_split_episodes(&split, &eval_eps)?;
            let train_eps = self.load_episodes("train")?;
            for e in &train_eps {
                if !split.train_scenes.contains(&e.scene_id) || !split.seen_categories.contains(&e.target_category) {
                    return Err(Error::Validation(format!("training episode {} leaks held-out data", e.episode_id)));
                }
            }
            checked.push(format!("split with {} train / {} eval episodes", train_eps.len(), eval_eps.len()));
        }
        let demos = self.load_demos()?;
        for t in &demos {
            let scene = scenes.get(&t.episode.scene_id).ok_or_else(|| Error::Validation(format!("unknown scene {}", t.episode.scene_id)))?;
            validate_trajectory(scene.clone(), t, self.sim_config()).map_err(|e| Error::Validation(format!("{}: {e}", t.episode_id())))?;
        }
        if !demos.is_empty() {
            checked.push(format!("{} demonstrations replayed", demos.len()));
        }
        if self.path("qa/qa.jsonl").exists() {
            let qa = self.load_qa()?;
            for r in &qa {
                featurize(r, &vocab, crate::policy::FeatureSet::Hcot)?;
            }
            checked.push(format!("{} QA records", qa.len()));
        }
        if self.path("models/policy.json").exists() {
            self.load_model()?;
            checked.push("policy model".into());
        }
        Ok(checked)
    }
}
