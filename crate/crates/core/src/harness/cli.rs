use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::agent::{run_episode, FeatureCache, Mode, RolloutOptions};
use crate::eqagen::{Dataset, Split};
use crate::gridhouse::{generate_house, topdown, write_ppm};
use crate::trainer::{train_stage, Corpus, Models, Stage, StageIo};

use super::{
    dump_mental_rollout, dump_topdown, evaluate, grad_check_suite, latent_trace, load_checkpoint,
    save_checkpoint, write_frames, HarnessError, Result, RunConfig,
};

#[derive(Debug, Parser)]
#[command(
    name = "mind",
    about = "Embodied question answering with mental imagery"
)]
pub struct Cli {
    /// JSON run configuration; omitted keys take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate one house; writes house.json and a top-down house.ppm.
    GenWorld {
        #[arg(long)]
        rooms: Option<usize>,
        #[arg(long)]
        size: Option<usize>,
    },
    /// Generate houses, vocabulary, splits and episodes under <out>/dataset.
    GenDataset,
    /// Train one stage; writes <stage>.ckpt and metrics.jsonl.
    Train {
        stage: Stage,
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint holding the earlier stages.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Greedy evaluation per spawn tier; writes eval.json and trajectories.jsonl.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Top-down map with the expert path and, given a checkpoint, the agent's.
    DumpTopdown {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        episode: usize,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 8)]
        scale: usize,
    },
    /// Real frame plus decoded imagined frames at one planner step.
    DumpImagery {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        episode: usize,
        #[arg(long, default_value_t = 0)]
        step: usize,
        #[arg(long, default_value_t = 5)]
        horizon: usize,
    },
    /// Finite-difference checks of every loss.
    GradCheck,
}

/// Parses `args` (program name first) and runs the command. Usage errors
/// return 2, failures 1 after one JSON line on stderr.
pub fn cli_main<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!(
                "{}",
                serde_json::json!({"error": e.kind(), "message": e.to_string()})
            );
            1
        }
    }
}

fn resolve(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn models_from(cfg: &RunConfig, ds: &Dataset, ckpt: Option<&Path>) -> Result<Models> {
    let mut m = cfg.build_models(&ds.vocab)?;
    if let Some(p) = ckpt {
        for w in load_checkpoint(&mut m, &cfg.hash(), p)? {
            eprintln!("warning: {w}");
        }
    }
    Ok(m)
}

fn episode_of(ds: &Dataset, id: usize) -> Result<&crate::eqagen::Episode> {
    ds.episodes
        .iter()
        .find(|e| e.id == id)
        .ok_or_else(|| HarnessError::Input(format!("no episode {id}")))
}

fn run(cli: Cli) -> Result<()> {
    let cfg = resolve(&cli)?;
    let out = &cli.out;
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("config.json"), cfg.to_json())?;
    let hash = cfg.hash();
    match &cli.command {
        Command::GenWorld { rooms, size } => {
            let h = generate_house(
                cfg.seed,
                rooms.unwrap_or(cfg.dataset.rooms),
                size.unwrap_or(cfg.dataset.grid_size),
            )?;
            std::fs::write(out.join("house.json"), h.to_json())?;
            write_ppm(out.join("house.ppm"), &topdown(&h, 8))?;
            print!("{}", h.ascii());
        }
        Command::GenDataset => {
            let ds = Dataset::generate(&cfg.dataset, cfg.seed)?;
            ds.save(out.join("dataset"))?;
            println!(
                "{} houses, {} episodes, {} words, {} answers",
                ds.houses.len(),
                ds.episodes.len(),
                ds.vocab.words.len(),
                ds.vocab.answers.len()
            );
        }
        Command::Train {
            stage,
            data,
            checkpoint,
        } => {
            let ds = Dataset::load(data)?;
            let corpus = Corpus::from_dataset(&ds)?;
            let mut models = models_from(&cfg, &ds, checkpoint.as_deref())?;
            let io = StageIo::to_dir(out, hash.clone());
            let report = train_stage(
                *stage,
                &mut models,
                &corpus,
                &cfg.train,
                &cfg.render,
                &cfg.rewards,
                cfg.seed,
                &io,
            )?;
            save_checkpoint(&models, &hash, out.join(format!("{stage}.ckpt")))?;
            if let Some(last) = report.metrics.last() {
                println!(
                    "{}",
                    serde_json::to_string(last).expect("metrics serialize")
                );
            }
        }
        Command::Eval { checkpoint, data } => {
            let ds = Dataset::load(data)?;
            let models = models_from(&cfg, &ds, Some(checkpoint))?;
            let mut eps: Vec<_> = ds.split(cfg.eval.split).into_iter().cloned().collect();
            if eps.is_empty() {
                eps = ds.split(Split::Val).into_iter().cloned().collect();
            }
            if let Some(n) = cfg.eval.max_episodes {
                eps.truncate(n);
            }
            let houses = ds.houses.iter().map(|h| (h.id, h.clone())).collect();
            let (report, trajs) = evaluate(
                &models,
                &houses,
                &eps,
                &cfg.eval.tiers,
                &cfg.render,
                &cfg.rewards,
                &hash,
                cfg.seed,
            )?;
            std::fs::write(out.join("eval.json"), report.to_json())?;
            let mut f =
                std::io::BufWriter::new(std::fs::File::create(out.join("trajectories.jsonl"))?);
            for t in &trajs {
                writeln!(
                    f,
                    "{}",
                    serde_json::to_string(t).expect("trajectory serializes")
                )?;
            }
            f.flush()?;
            println!("{}", report.to_json());
        }
        Command::DumpTopdown {
            data,
            episode,
            checkpoint,
            scale,
        } => {
            let ds = Dataset::load(data)?;
            let e = episode_of(&ds, *episode)?;
            let h = ds
                .house(e.house_id)
                .ok_or_else(|| HarnessError::Input("episode house missing".into()))?;
            let mut paths = vec![e.expert_poses(h)];
            if let Some(ck) = checkpoint {
                let models = models_from(&cfg, &ds, Some(ck))?;
                let corpus =
                    Corpus::new(vec![h.clone()], ds.vocab.clone(), vec![e.clone()], vec![])?;
                let tr = run_episode(
                    &models.agent,
                    &models.mind,
                    &mut FeatureCache::new(cfg.render),
                    corpus.env(e, e.spawn)?,
                    &Mode::Greedy,
                    &RolloutOptions::default(),
                    &mut ChaCha8Rng::seed_from_u64(cfg.seed),
                )?;
                paths.push(tr.poses());
            }
            let f = dump_topdown(h, &paths, *scale)?;
            write_ppm(out.join(format!("topdown_{episode}.ppm")), &f)?;
        }
        Command::DumpImagery {
            checkpoint,
            data,
            episode,
            step,
            horizon,
        } => {
            let ds = Dataset::load(data)?;
            let e = episode_of(&ds, *episode)?;
            let h = ds
                .house(e.house_id)
                .ok_or_else(|| HarnessError::Input("episode house missing".into()))?;
            let models = models_from(&cfg, &ds, Some(checkpoint))?;
            let corpus = Corpus::new(vec![h.clone()], ds.vocab.clone(), vec![e.clone()], vec![])?;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let tr = run_episode(
                &models.agent,
                &models.mind,
                &mut FeatureCache::new(cfg.render),
                corpus.env(e, e.spawn)?,
                &Mode::DemoForced(e.actions.clone()),
                &RolloutOptions::default(),
                &mut rng,
            )?;
            let (frames, latents) =
                dump_mental_rollout(&models.mind, h, &tr, *step, *horizon, &cfg.render, &mut rng)?;
            let dir = out.join(format!("imagery_{episode}"));
            write_frames(&dir, "frame", &frames)?;
            std::fs::write(dir.join("latents.json"), latent_trace(&latents))?;
        }
        Command::GradCheck => {
            let entries = grad_check_suite(cfg.seed)?;
            let mut ok = true;
            for e in &entries {
                println!("{}", serde_json::to_string(e).expect("entry serializes"));
                ok &= e.passed;
            }
            if !ok {
                return Err(HarnessError::Input("gradient check failed".into()));
            }
        }
    }
    Ok(())
}
