use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cotnav::manifest::{BackendKind, Manifest};
use cotnav::pipeline::Run;
use cotnav::serve::{self, ServiceConfig};
use cotnav::sim::SimConfig;

#[derive(Parser)]
#[command(name = "cotnav", version, about = "Object-goal navigation with hierarchical chain-of-thought supervision")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment manifest (TOML). Defaults to the one recorded in the
    /// output directory by an earlier stage, then to built-in defaults.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    /// Master seed, overriding the manifest.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, overriding the manifest.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate procedural scenes.
    GenScenes {
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        width: Option<usize>,
        #[arg(long)]
        height: Option<usize>,
        #[arg(long)]
        rooms: Option<usize>,
    },
    /// Split scenes and categories, then sample training and evaluation episodes.
    GenEpisodes {
        #[arg(long, value_parser = ["object_gen", "scene_gen"])]
        split: Option<String>,
        #[arg(long)]
        per_scene: Option<usize>,
        #[arg(long)]
        eval_per_scene: Option<usize>,
    },
    /// Record scripted demonstrations for the training episodes.
    Demo,
    /// Turn demonstrations into H-CoT QA records.
    Annotate {
        #[arg(long, value_parser = ["rule", "chat"])]
        backend: Option<String>,
        /// Probability of dropping or relabelling each visible object.
        #[arg(long, allow_negative_numbers = true)]
        noise: Option<f64>,
    },
    /// Train the policy on the QA records.
    Train {
        #[arg(long, value_parser = ["ce", "adaptive"])]
        loss: Option<String>,
        #[arg(long, allow_negative_numbers = true)]
        alpha: Option<f64>,
        #[arg(long, allow_negative_numbers = true)]
        beta: Option<f64>,
        #[arg(long, value_parser = ["pure_text", "cot", "hcot"])]
        features: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long, allow_negative_numbers = true)]
        lr: Option<f64>,
    },
    /// Evaluate the trained policy on the held-out episodes.
    Eval {
        #[arg(long, value_parser = ["object_gen", "scene_gen"])]
        split: Option<String>,
    },
    /// Train and evaluate the four-variant ablation ladder.
    Ablate,
    /// Run the teleoperation service.
    Serve {
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        host: Option<String>,
    },
    /// Replay demonstrations and check every artifact's schema.
    Validate,
}

fn load_manifest(common: &Common) -> anyhow::Result<Manifest> {
    let previous = common
        .out
        .clone()
        .unwrap_or_else(|| Manifest::default().paths.out_dir)
        .join("manifest.toml");
    let source = common.manifest.clone().or_else(|| previous.is_file().then_some(previous));
    let mut m = match &source {
        Some(p) => Manifest::load(p).map_err(|e| anyhow::anyhow!("{}: {e}", p.display()))?,
        None => Manifest::default(),
    };
    if let Some(s) = common.seed {
        m.seed = s;
    }
    if let Some(o) = &common.out {
        m.paths.out_dir = o.clone();
    }
    Ok(m)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut m = load_manifest(&cli.common)?;
    match &cli.command {
        Command::GenScenes { count, width, height, rooms } => {
            m.world.scene_count = count.unwrap_or(m.world.scene_count);
            m.world.width = width.unwrap_or(m.world.width);
            m.world.height = height.unwrap_or(m.world.height);
            m.world.rooms = rooms.unwrap_or(m.world.rooms);
        }
        Command::GenEpisodes {
            split,
            per_scene,
            eval_per_scene,
        } => {
            if let Some(s) = split {
                m.episodes.split = s.parse()?;
            }
            m.episodes.train_per_scene = per_scene.unwrap_or(m.episodes.train_per_scene);
            m.eval.episodes_per_scene = eval_per_scene.unwrap_or(m.eval.episodes_per_scene);
        }
        Command::Annotate { backend, noise } => {
            if let Some(b) = backend {
                m.annotate.backend = if b == "chat" { BackendKind::Chat } else { BackendKind::Rule };
            }
            m.annotate.p_noise = noise.unwrap_or(m.annotate.p_noise);
        }
        Command::Train {
            loss,
            alpha,
            beta,
            features,
            epochs,
            lr,
        } => {
            if let Some(l) = loss {
                m.train.loss = l.parse()?;
            }
            if let Some(f) = features {
                m.train.features = f.parse()?;
            }
            m.train.alpha = alpha.unwrap_or(m.train.alpha);
            m.train.beta = beta.unwrap_or(m.train.beta);
            m.train.epochs = epochs.unwrap_or(m.train.epochs);
            m.train.learning_rate = lr.unwrap_or(m.train.learning_rate);
        }
        Command::Serve { port, host } => {
            m.serve.port = port.unwrap_or(m.serve.port);
            if let Some(h) = host {
                m.serve.host = h.clone();
            }
        }
        Command::Eval { .. } | Command::Demo | Command::Ablate | Command::Validate => {}
    }
    let run = Run::new(m)?;
    match cli.command {
        Command::GenScenes { .. } => {
            let scenes = run.gen_scenes()?;
            println!("wrote {} scenes to {}", scenes.len(), run.path("scenes").display());
        }
        Command::GenEpisodes { .. } => {
            let (split, train, eval) = run.gen_episodes()?;
            println!(
                "{:?} split: {} train scenes, {} test scenes; {} train / {} eval episodes",
                split.mode,
                split.train_scenes.len(),
                split.test_scenes.len(),
                train.len(),
                eval.len()
            );
        }
        Command::Demo => {
            let r = run.run_demos()?;
            println!(
                "kept {} demonstrations (removed: {} wrong stops, {} timeouts)",
                r.kept, r.removed_failure_stop, r.removed_timeout
            );
        }
        Command::Annotate { .. } => {
            let records = run.annotate()?;
            let mean_c = records.iter().map(|r| r.confidence).sum::<f64>() / records.len() as f64;
            println!("wrote {} QA records (mean confidence {mean_c:.3})", records.len());
        }
        Command::Train { .. } => {
            let model = run.train()?;
            println!("trained {} policy ({} loss) -> {}", model.feature_set, model.config.loss_mode, run.path("models/policy.json").display());
        }
        Command::Eval { split } => {
            let mode = split.map(|s| s.parse()).transpose()?;
            let r = run.eval(mode)?;
            println!(
                "N={} SR={:.3} SPL={:.3} SoftSPL={:.3}",
                r.metrics.n, r.metrics.sr, r.metrics.spl, r.metrics.soft_spl
            );
        }
        Command::Ablate => {
            let rows = run.ablate()?;
            print!("{}", cotnav::eval::render_ablation(&rows));
        }
        Command::Serve { .. } => {
            let config = ServiceConfig {
                scenes: run.load_scenes()?,
                episodes: run.load_episodes("train")?,
                demo_dir: run.path("demos"),
                manifest_hash: Some(run.hash.clone()),
                sim: SimConfig {
                    success_radius_cells: run.manifest.episodes.success_radius_cells,
                    ..SimConfig::default()
                },
            };
            let addr = format!("{}:{}", run.manifest.serve.host, run.manifest.serve.port);
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async {
                let listener = tokio::net::TcpListener::bind(&addr).await?;
                println!("teleop service listening on http://{}", listener.local_addr()?);
                serve::serve(listener, config).await?;
                anyhow::Ok(())
            })?;
        }
        Command::Validate => {
            for line in run.validate()? {
                println!("ok: {line}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
