//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

mod common;

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use cotnav::demo::scripted_demo;
use cotnav::episodes::{geodesic_distance_with, Episode, SplitMode};
use cotnav::eval::{
    compute_metrics, evaluate_episodes, train_model, Controller, EpisodeResult, Metrics, PlannerController, PolicyController,
    RandomController,
};
use cotnav::geom::Cell;
use cotnav::hcot::{Annotator, AnnotatorBackend, QARecord};
use cotnav::manifest::Manifest;
use cotnav::pipeline::Run;
use cotnav::policy::{adaptive_weight, loss, FeatureSet, LossMode, PolicyParams, TrainConfig, TrainingExample, NUM_ACTIONS};
use cotnav::sim::{EpisodeStatus, SimConfig};
use cotnav::world::{generate_scene, Scene, UNSEEN_CATEGORIES};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(name: &str, budget: Duration, f: impl FnOnce() -> Outcome) -> bool {
    let t0 = Instant::now();
    let out = std::panic::catch_unwind(std::panic::AssertUnwindSafe(f)).unwrap_or_else(|e| Outcome {
        pass: false,
        detail: format!(
            "panicked: {}",
            e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default()
        ),
    });
    let took = t0.elapsed();
    let in_time = took <= budget;
    let pass = out.pass && in_time;
    println!(
        "{} {name}: {}; {:.1}s of {}s budget{}",
        if pass { "PASS" } else { "FAIL" },
        out.detail,
        took.as_secs_f64(),
        budget.as_secs(),
        if in_time { "" } else { " (over budget)" }
    );
    pass
}

fn result(success: bool, l: f64, p: f64) -> EpisodeResult {
    EpisodeResult {
        episode_id: String::new(),
        scene_id: String::new(),
        target_category: String::new(),
        success,
        l_m: l,
        p_m: p,
        steps: 0,
        final_distance_m: if success { 0.0 } else { l },
        start_distance_m: l,
        outcome: if success { EpisodeStatus::Success } else { EpisodeStatus::FailureStop },
    }
}

fn metric_exactness() -> Outcome {
    let tol = 1e-12;
    let one = compute_metrics(&[result(true, 2.0, 4.0)]).unwrap();
    let optimal = compute_metrics(&[result(true, 1.0, 1.0), result(true, 3.25, 3.25), result(true, 0.5, 0.5)]).unwrap();
    let fail = compute_metrics(&[result(false, 1.0, 2.0), result(false, 2.0, 0.0)]).unwrap();
    let pass = (one.spl - 0.5).abs() <= tol
        && (one.sr - 1.0).abs() <= tol
        && (optimal.sr - 1.0).abs() <= tol
        && (optimal.spl - 1.0).abs() <= tol
        && fail.sr.abs() <= tol
        && fail.spl.abs() <= tol;
    Outcome {
        pass,
        detail: format!(
            "single SPL {}, all-optimal SR/SPL {}/{}, all-fail SR/SPL {}/{}",
            one.spl, optimal.sr, optimal.spl, fail.sr, fail.spl
        ),
    }
}

fn spl_below_sr() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut violations = 0;
    for _ in 0..1000 {
        let n = rng.gen_range(1..50);
        let rs: Vec<EpisodeResult> = (0..n)
            .map(|_| {
                let l = rng.gen_range(1..60) as f64 * 0.25;
                let p = rng.gen_range(0..200) as f64 * 0.25;
                let success = rng.gen_bool(0.5);
                result(success, l, if success { p.max(l) } else { p })
            })
            .collect();
        let m = compute_metrics(&rs).unwrap();
        if m.spl > m.sr {
            violations += 1;
        }
    }
    Outcome {
        pass: violations == 0,
        detail: format!("{violations} violations over 1000 random result sets"),
    }
}

fn adaptive_algebra() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut center_ok, mut worst_sym) = (true, 0.0f64);
    for _ in 0..100 {
        let alpha = rng.gen_range(0.1..50.0);
        let beta = rng.gen_range(0.0..=1.0);
        let delta = rng.gen_range(0.0..1.0);
        center_ok &= adaptive_weight(beta, alpha, beta) == 0.5;
        let s = adaptive_weight(beta + delta, alpha, beta) + adaptive_weight(beta - delta, alpha, beta);
        worst_sym = worst_sym.max((s - 1.0).abs());
    }
    let mut cs: Vec<f64> = (0..1000).map(|_| rng.gen_range(0.0..=1.0)).collect();
    cs.sort_by(f64::total_cmp);
    cs.dedup();
    let ws: Vec<f64> = cs.iter().map(|&c| adaptive_weight(c, 10.0, 0.5)).collect();
    let monotone = ws.windows(2).all(|w| w[0] < w[1]);
    Outcome {
        pass: center_ok && worst_sym <= 1e-12 && monotone,
        detail: format!(
            "w(beta)=0.5 exactly: {center_ok}; max |w(b+d)+w(b-d)-1| = {worst_sym:.1e}; strictly increasing over {} points: {monotone}",
            cs.len()
        ),
    }
}

fn gradient_fidelity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let h = 1e-5;
    let mut worst = 0.0f64;
    let instances = 120;
    for _ in 0..instances {
        let dim = rng.gen_range(3..40);
        let params = PolicyParams {
            weights: (0..NUM_ACTIONS).map(|_| (0..dim).map(|_| rng.gen_range(-1.5..1.5)).collect()).collect(),
            bias: (0..NUM_ACTIONS).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        };
        let ex = TrainingExample {
            features: (0..dim).map(|_| if rng.gen_bool(0.3) { 0.0 } else { rng.gen_range(-2.0..2.0) }).collect(),
            label: rng.gen_range(0..NUM_ACTIONS),
            confidence: rng.gen_range(0.0..=1.0),
        };
        let (alpha, beta) = (rng.gen_range(1.0..20.0), rng.gen_range(0.0..=1.0));
        for mode in [LossMode::Ce, LossMode::Adaptive] {
            let (_, grad) = loss(&params, &ex, mode, alpha, beta).unwrap();
            for k in 0..NUM_ACTIONS {
                for j in 0..=dim {
                    let eval = |d: f64| {
                        let mut p = params.clone();
                        if j == dim {
                            p.bias[k] += d;
                        } else {
                            p.weights[k][j] += d;
                        }
                        loss(&p, &ex, mode, alpha, beta).unwrap().0
                    };
                    let numeric = (eval(h) - eval(-h)) / (2.0 * h);
                    let analytic = if j == dim { grad.bias[k] } else { grad.weights[k][j] };
                    let scale = numeric.abs().max(analytic.abs());
                    // Components below 1e-5 are compared absolutely.
                    let err = (numeric - analytic).abs() / scale.max(1e-5);
                    worst = worst.max(err);
                }
            }
        }
    }
    Outcome {
        pass: worst <= 1e-4,
        detail: format!("{instances} instances x 2 loss modes, max relative error {worst:.2e}"),
    }
}

/// Unit-weight Dijkstra over floor cells from several sources.
fn dijkstra(scene: &Scene, sources: &[Cell]) -> HashMap<Cell, u64> {
    let mut dist = HashMap::new();
    let mut heap: BinaryHeap<Reverse<(u64, i32, i32)>> = sources.iter().map(|c| Reverse((0, c.x, c.y))).collect();
    while let Some(Reverse((d, x, y))) = heap.pop() {
        let c = Cell::new(x, y);
        if dist.contains_key(&c) {
            continue;
        }
        dist.insert(c, d);
        for (dx, dy) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
            let n = Cell::new(x + dx, y + dy);
            if scene.is_floor(n) && !dist.contains_key(&n) {
                heap.push(Reverse((d + 1, n.x, n.y)));
            }
        }
    }
    dist
}

fn geodesic_oracle() -> Outcome {
    let (v, p) = (common::vocab(), common::priors());
    let config = SimConfig::default();
    let radius = config.success_radius_cells;
    let (mut queries, mut mismatches) = (0, 0);
    let (mut successes, mut bound_violations) = (0, 0);
    for seed in 0..60u64 {
        let scene = Arc::new(generate_scene(10_000 + seed, 16, 16, 4, &v, &p).unwrap());
        let floor: Vec<Cell> = scene.floor_cells().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for category in scene.categories() {
            let instances: Vec<Cell> = scene.instances_of(&category).map(|o| o.cell).collect();
            let near = dijkstra(&scene, &instances);
            let goals: Vec<Cell> = near.iter().filter(|(_, &d)| d <= u64::from(radius)).map(|(c, _)| *c).collect();
            let to_goal = dijkstra(&scene, &goals);
            for _ in 0..5 {
                let from = floor[rng.gen_range(0..floor.len())];
                let expect = to_goal[&from] as f64 * scene.cell_size_m;
                queries += 1;
                if geodesic_distance_with(&scene, from, &category, radius).unwrap() != expect {
                    mismatches += 1;
                }
            }
        }
        let episodes = common::episodes(&scene, 3, seed);
        let scripted: Vec<EpisodeResult> = episodes
            .iter()
            .map(|e| {
                let t = scripted_demo(scene.clone(), e, seed, config).unwrap();
                result(t.outcome == EpisodeStatus::Success, e.geodesic_l_m, t.path_length_m)
            })
            .collect();
        let scenes = BTreeMap::from([(scene.id.clone(), scene.clone())]);
        let planner = evaluate_episodes(
            || Ok(Box::new(PlannerController::new(p.clone())) as Box<dyn Controller>),
            &scenes,
            &episodes,
            config,
        )
        .unwrap();
        for r in scripted.iter().chain(&planner.results).filter(|r| r.success) {
            successes += 1;
            if r.p_m < r.l_m {
                bound_violations += 1;
            }
        }
    }
    Outcome {
        pass: mismatches == 0 && bound_violations == 0 && successes > 0,
        detail: format!(
            "{mismatches}/{queries} BFS-vs-Dijkstra mismatches on 60 scenes; p<l in {bound_violations}/{successes} successful trajectories"
        ),
    }
}

fn demonstrator_competence() -> Outcome {
    let config = SimConfig::default();
    let mut wins = 0;
    let n = 50;
    for i in 0..n as u64 {
        let scene = common::scene(20_000 + i);
        let e = &common::episodes(&scene, 1, i)[0];
        let t = scripted_demo(scene, e, i, config).unwrap();
        if t.outcome == EpisodeStatus::Success {
            wins += 1;
        }
    }
    let sr = wins as f64 / n as f64;
    Outcome {
        pass: sr >= 0.9,
        detail: format!("scripted SR {sr:.2} over {n} episodes (need >= 0.90)"),
    }
}

/// Pipeline run through demonstrations and annotation, shared by the
/// learning criteria.
struct Prepared {
    run: Run,
    scenes: BTreeMap<String, Arc<Scene>>,
    eval: Vec<Episode>,
    _dir: tempfile::TempDir,
}

fn prepare(split: SplitMode, seed: u64, train_per_scene: usize, eval_per_scene: usize) -> Prepared {
    let dir = tempfile::tempdir().unwrap();
    let mut m = Manifest { seed, ..Manifest::default() };
    m.paths.out_dir = dir.path().to_path_buf();
    m.world.scene_count = 10;
    m.episodes.split = split;
    m.episodes.train_per_scene = train_per_scene;
    m.eval.episodes_per_scene = eval_per_scene;
    let run = Run::new(m).unwrap();
    run.gen_scenes().unwrap();
    let (_, _, eval) = run.gen_episodes().unwrap();
    run.run_demos().unwrap();
    run.annotate().unwrap();
    Prepared {
        scenes: run.load_scenes().unwrap(),
        run,
        eval,
        _dir: dir,
    }
}

impl Prepared {
    fn policy(&self, records: &[QARecord], fs: FeatureSet, loss_mode: LossMode, seed: u64) -> Metrics {
        let config = TrainConfig {
            loss_mode,
            seed,
            ..self.run.manifest.train_config()
        };
        let model = Arc::new(train_model(records, &self.run.priors.vocab(), fs, config, None).unwrap());
        let priors = self.run.priors.clone();
        evaluate_episodes(
            || Ok(Box::new(PolicyController::new(model.clone(), priors.clone())?) as Box<dyn Controller>),
            &self.scenes,
            &self.eval,
            SimConfig::default(),
        )
        .unwrap()
        .metrics
    }

    fn random(&self, seed: u64) -> Metrics {
        evaluate_episodes(
            || Ok(Box::new(RandomController::new(seed)) as Box<dyn Controller>),
            &self.scenes,
            &self.eval,
            SimConfig::default(),
        )
        .unwrap()
        .metrics
    }
}

fn end_to_end(p: &Prepared) -> Outcome {
    let split = p.run.load_split().unwrap();
    let records = p.run.load_qa().unwrap();
    let hcot = p.policy(&records, FeatureSet::Hcot, LossMode::Ce, 0);
    let pure = p.policy(&records, FeatureSet::PureText, LossMode::Ce, 0);
    let random = p.random(7);
    let held_out = p.eval.iter().all(|e| split.test_scenes.contains(&e.scene_id) && !split.train_scenes.contains(&e.scene_id));
    let enough = records.len() >= 2000 && split.train_scenes.len() == 8 && split.test_scenes.len() == 2;
    Outcome {
        pass: enough && held_out && hcot.sr >= 2.0 * random.sr && hcot.sr >= pure.sr,
        detail: format!(
            "{} steps from {} train scenes, {} episodes on {} held-out scenes; SR hcot {:.3} (SPL {:.3}) vs random {:.3} vs pure_text {:.3}",
            records.len(),
            split.train_scenes.len(),
            p.eval.len(),
            split.test_scenes.len(),
            hcot.sr,
            hcot.spl,
            random.sr,
            pure.sr
        ),
    }
}

fn closed_loop(p: &Prepared) -> Outcome {
    let demos = p.run.load_demos().unwrap();
    let (mut ce, mut ad) = (Vec::new(), Vec::new());
    for seed in 0..5u64 {
        let mut config = p.run.manifest.annotator_config();
        config.p_noise = 0.3;
        config.noise_seed = seed;
        let annotator = Annotator {
            priors: p.run.priors.clone(),
            config,
            backend: AnnotatorBackend::RuleBased,
        };
        let records: Vec<QARecord> = demos.iter().flat_map(|t| annotator.annotate_trajectory(t).unwrap()).collect();
        ce.push(p.policy(&records, FeatureSet::Hcot, LossMode::Ce, seed).sr);
        ad.push(p.policy(&records, FeatureSet::Hcot, LossMode::Adaptive, seed).sr);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (mc, ma) = (mean(&ce), mean(&ad));
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.2}")).collect::<Vec<_>>().join(" ");
    Outcome {
        pass: ma >= mc,
        detail: format!("p_noise 0.3, 5 seeds: mean SR adaptive {ma:.3} [{}] vs ce {mc:.3} [{}]", fmt(&ad), fmt(&ce)),
    }
}

fn zero_shot() -> Outcome {
    let p = prepare(SplitMode::ObjectGen, 11, 16, 10);
    let split = p.run.load_split().unwrap();
    let train = p.run.load_episodes("train").unwrap();
    let records = p.run.load_qa().unwrap();
    let seen_only = train.iter().all(|e| split.seen_categories.contains(&e.target_category))
        && records.iter().all(|r| split.seen_categories.contains(&r.reasoning.target_category));
    let unseen_only = p.eval.iter().all(|e| UNSEEN_CATEGORIES.contains(&e.target_category.as_str()));
    let trained = p.policy(&records, FeatureSet::Hcot, LossMode::Ce, 0);
    let random = p.random(7);
    Outcome {
        pass: seen_only && unseen_only && split.seen_categories.len() == 16 && trained.sr >= 2.0 * random.sr,
        detail: format!(
            "train targets seen-only: {seen_only}; {} eval episodes unseen-only: {unseen_only}; SR trained {:.3} vs random {:.3}",
            p.eval.len(),
            trained.sr,
            random.sr
        ),
    }
}

fn files(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn pipeline_once(manifest_text: &str, out: &Path) {
    let mut m = Manifest::parse(manifest_text).unwrap();
    m.paths.out_dir = out.to_path_buf();
    let run = Run::new(m).unwrap();
    run.gen_scenes().unwrap();
    run.gen_episodes().unwrap();
    run.run_demos().unwrap();
    run.annotate().unwrap();
    run.train().unwrap();
    run.eval(None).unwrap();
    run.ablate().unwrap();
}

fn determinism() -> Outcome {
    let manifest = "seed = 5\n[world]\nscene_count = 6\n[episodes]\ntrain_per_scene = 10\n[annotate]\np_noise = 0.2\n[eval]\nepisodes_per_scene = 10\n[train]\nloss = \"adaptive\"\nepochs = 10\n";
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let t0 = Instant::now();
    pipeline_once(manifest, &out);
    let first = t0.elapsed();
    let fa = files(&out);
    std::fs::remove_dir_all(&out).unwrap();
    let t1 = Instant::now();
    pipeline_once(manifest, &out);
    let second = t1.elapsed();
    let fb = files(&out);
    let differing: std::collections::BTreeSet<String> = fa
        .keys()
        .chain(fb.keys())
        .filter(|k| fa.get(*k) != fb.get(*k))
        .map(|k| k.display().to_string())
        .collect();
    let key = ["qa/qa.jsonl", "models/policy.json", "reports/eval_summary.json", "reports/ablation.jsonl"];
    let has_key = key.iter().all(|k| fa.contains_key(Path::new(k)));
    Outcome {
        pass: differing.is_empty() && has_key && second <= first * 2,
        detail: format!(
            "{} artifacts compared, {} differ{}; rerun {:.1}s vs first run {:.1}s",
            fa.len(),
            differing.len(),
            if differing.is_empty() { String::new() } else { format!(" ({})", differing.iter().cloned().collect::<Vec<_>>().join(", ")) },
            second.as_secs_f64(),
            first.as_secs_f64()
        ),
    }
}

fn main() {
    // Accept and ignore libtest flags so `cargo test -- <args>` still works.
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let wanted = |name: &str| filter.is_empty() || filter.iter().any(|f| name.contains(f.as_str()));
    let secs = Duration::from_secs;
    let mut results = Vec::new();

    println!("acceptance criteria");
    if wanted("metric exactness") {
        results.push(check("metric exactness", secs(1), metric_exactness));
    }
    if wanted("spl <= sr") {
        results.push(check("spl <= sr", secs(5), spl_below_sr));
    }
    if wanted("adaptive-loss algebra") {
        results.push(check("adaptive-loss algebra", secs(1), adaptive_algebra));
    }
    if wanted("gradient fidelity") {
        results.push(check("gradient fidelity", secs(10), gradient_fidelity));
    }
    if wanted("geodesic oracle") {
        results.push(check("geodesic oracle", secs(30), geodesic_oracle));
    }
    if wanted("demonstrator competence") {
        results.push(check("demonstrator competence", secs(60), demonstrator_competence));
    }
    let learning = ["end-to-end learning signal", "closed-loop benefit under noise"];
    if learning.iter().any(|n| wanted(n)) {
        let t0 = Instant::now();
        let prepared = prepare(SplitMode::SceneGen, 3, 20, 50);
        let setup = t0.elapsed();
        println!("  (shared scene_gen setup: {:.1}s, counted in both budgets)", setup.as_secs_f64());
        if wanted(learning[0]) {
            results.push(check(learning[0], secs(600).saturating_sub(setup), || end_to_end(&prepared)));
        }
        if wanted(learning[1]) {
            results.push(check(learning[1], secs(1800).saturating_sub(setup), || closed_loop(&prepared)));
        }
    }
    if wanted("zero-shot object protocol") {
        results.push(check("zero-shot object protocol", secs(900), zero_shot));
    }
    if wanted("determinism") {
        results.push(check("determinism", secs(1800), determinism));
    }
    let failed = results.iter().filter(|p| !**p).count();
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
