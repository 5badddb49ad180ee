//! Command-line front end.
//!
//! Every command except `dp-budget` reads a run configuration (defaults when
//! `--config` is absent), writes its resolved form to
//! `<output_dir>/config.toml`, and reads and writes files under
//! `<output_dir>` unless a path flag says otherwise:
//!
//! | command      | reads                                    | writes |
//! |--------------|------------------------------------------|--------|
//! | `synth-data` |                                          | `train.traj`, `heldout.traj` |
//! | `train`      | `train.traj`                             | `policy.params`, `history.jsonl`, `checkpoints/`, `discriminators/` |
//! | `generate`   | `policy.params`                          | `synthetic.traj` |
//! | `evaluate`   | `heldout.traj`, `synthetic.traj`         | `metrics.txt`, `hist_*.tsv` |
//! | `attack`     | `train.traj`, `heldout.traj`, `synthetic.traj`, `discriminators/` | `attack.txt` |

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::seq::SliceRandom;
use rand::RngCore;

use fedtraj_core::aggregation::budget_for;
use fedtraj_core::attacks::{membership_inference, uniqueness_test, PrivateRewardOracle};
use fedtraj_core::discriminator::{LabeledTrajectory, PairScorer, PersonalDiscriminator};
use fedtraj_core::evaluation::evaluate;
use fedtraj_core::federated::Federation;
use fedtraj_core::policy::PolicyNet;
use fedtraj_core::seed::{stream, Purpose};
use fedtraj_core::synth::{generate_from_policy, synth_ground_truth};
use fedtraj_core::{ClientDataset, UserId};

use crate::checkpoint::{load_params, save_params};
use crate::config::RunConfig;
use crate::error::{self, Result};
use crate::history::format_history;
use crate::report::{format_attack_report, format_budget, format_metric_report, write_metric_report};
use crate::trajfile::{flatten, load_trajectories, save_trajectories};

#[derive(Debug, Parser)]
#[command(name = "fedtraj", version, about = "Federated, differentially private mobility trajectory generation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Run configuration (TOML); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate ground-truth training and held-out trajectory files.
    SynthData {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Run federated training.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Client trajectories [default: <output_dir>/train.traj].
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Sample synthetic trajectories from a policy checkpoint.
    Generate {
        #[command(flatten)]
        run: RunArgs,
        /// [default: <output_dir>/policy.params]
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Synthetic users [default: data.num_users].
        #[arg(long)]
        users: Option<usize>,
        /// One-day trajectories per user [default: data.days].
        #[arg(long)]
        days: Option<usize>,
    },
    /// Compare real and synthetic trajectories on all metrics.
    Evaluate {
        #[command(flatten)]
        run: RunArgs,
        /// [default: <output_dir>/heldout.traj]
        #[arg(long)]
        real: Option<PathBuf>,
        /// [default: <output_dir>/synthetic.traj]
        #[arg(long)]
        synthetic: Option<PathBuf>,
    },
    /// Membership inference against the private reward, plus uniqueness.
    Attack {
        #[command(flatten)]
        run: RunArgs,
        /// Training trajectories [default: <output_dir>/train.traj].
        #[arg(long)]
        members: Option<PathBuf>,
        /// Trajectories never trained on [default: <output_dir>/heldout.traj].
        #[arg(long)]
        non_members: Option<PathBuf>,
        /// [default: <output_dir>/synthetic.traj]
        #[arg(long)]
        synthetic: Option<PathBuf>,
    },
    /// Print the Laplace scales for a privacy budget.
    DpBudget {
        #[arg(long)]
        epsilon: f64,
        #[arg(long)]
        users: usize,
        /// Budget split for the compensated mechanism (> 1).
        #[arg(long)]
        kappa: Option<f64>,
    },
}

impl RunArgs {
    /// Loads, overrides, validates and records the configuration.
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(dir) = &self.output_dir {
            cfg.output_dir = dir.clone();
        }
        cfg.validate()?;
        cfg.save(&cfg.output_dir.join("config.toml"))?;
        Ok(cfg)
    }
}

fn or_default(path: &Option<PathBuf>, cfg: &RunConfig, name: &str) -> PathBuf {
    path.clone().unwrap_or_else(|| cfg.output_dir.join(name))
}

fn load(path: &Path, cfg: &RunConfig) -> Result<Vec<ClientDataset>> {
    load_trajectories(path, &cfg.grid()?, cfg.env.slots_per_day)
}

fn discriminator_path(dir: &Path, user: UserId) -> PathBuf {
    dir.join("discriminators").join(format!("user_{}.params", user.0))
}

fn synth_data(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let env = cfg.env()?;
    let spd = cfg.env.slots_per_day;
    let behavior = cfg.behavior()?;
    let d = &cfg.data;
    let mut rng = stream(cfg.seed, Purpose::Data, 0, 0);
    let train = synth_ground_truth(d.num_users, d.days, &env, &behavior, spd, 0, &mut rng)?;
    let path = cfg.output_dir.join("train.traj");
    save_trajectories(&path, flatten(&train).iter())?;
    let _ = writeln!(out, "wrote {} users to {}", train.len(), path.display());
    if d.held_out_users > 0 {
        let mut rng = stream(cfg.seed, Purpose::Data, 1, 0);
        let first = d.num_users as u32;
        let held = synth_ground_truth(d.held_out_users, d.days, &env, &behavior, spd, first, &mut rng)?;
        let path = cfg.output_dir.join("heldout.traj");
        save_trajectories(&path, flatten(&held).iter())?;
        let _ = writeln!(out, "wrote {} users to {}", held.len(), path.display());
    }
    Ok(())
}

fn train(cfg: &RunConfig, data: &Path, out: &mut dyn Write) -> Result<()> {
    let datasets = load(data, cfg)?;
    let rounds = cfg.rounds(datasets.len())?;
    let mut fed = Federation::new(&rounds, cfg.net(), cfg.env()?, cfg.features()?, datasets)?;
    let dir = &cfg.output_dir;
    let mut history = Vec::with_capacity(rounds.num_rounds);
    for _ in 0..rounds.num_rounds {
        history.push(fed.run_round(&rounds)?);
        let done = fed.rounds_done() as usize;
        if rounds.checkpoint_every > 0 && done % rounds.checkpoint_every == 0 {
            let path = dir.join(format!("checkpoints/round_{done:04}.params"));
            save_params(&path, fed.policy().params())?;
        }
    }
    error::write(&dir.join("history.jsonl"), &format_history(&history))?;
    for c in fed.clients() {
        save_params(&discriminator_path(dir, c.user()), c.discriminator().params())?;
    }
    save_params(&dir.join("policy.params"), fed.policy().params())?;
    if let Some(last) = history.last() {
        let _ = writeln!(
            out,
            "trained {} rounds with {} clients; last mean score {:.4}, mean reward {:.4}",
            history.len(),
            last.participants,
            last.mean_score,
            last.mean_reward
        );
    }
    Ok(())
}

fn generate(
    cfg: &RunConfig,
    checkpoint: &Path,
    users: usize,
    days: usize,
    out: &mut dyn Write,
) -> Result<()> {
    let policy = PolicyNet::from_params(cfg.net(), cfg.features()?, &load_params(checkpoint)?)?;
    let mut rng = stream(cfg.seed, Purpose::Evaluation, 0, 0);
    let spd = cfg.env.slots_per_day;
    let episode = cfg.training.episode_len;
    let trajs = generate_from_policy(&policy, &cfg.env()?, users, days, episode, spd, 0, &mut rng)?;
    let path = cfg.output_dir.join("synthetic.traj");
    save_trajectories(&path, trajs.iter())?;
    let _ = writeln!(out, "wrote {} trajectories to {}", trajs.len(), path.display());
    Ok(())
}

fn evaluate_cmd(cfg: &RunConfig, real: &Path, synthetic: &Path, out: &mut dyn Write) -> Result<()> {
    let real = flatten(&load(real, cfg)?);
    let synthetic = flatten(&load(synthetic, cfg)?);
    let report = evaluate(&real, &synthetic, &cfg.grid()?, &cfg.eval())?;
    write_metric_report(&cfg.output_dir, &report)?;
    let _ = out.write_all(format_metric_report(&report).as_bytes());
    Ok(())
}

fn labeled(datasets: &[ClientDataset]) -> Vec<LabeledTrajectory> {
    datasets
        .iter()
        .flat_map(|d| d.trajectories().iter().map(|t| LabeledTrajectory::new(t.points().to_vec(), d.home())))
        .filter(|t| t.num_pairs() > 0)
        .collect()
}

fn attack(
    cfg: &RunConfig,
    members: &Path,
    non_members: &Path,
    synthetic: &Path,
    out: &mut dyn Write,
) -> Result<()> {
    let member_data = load(members, cfg)?;
    let (net, ctx) = (cfg.net(), cfg.features()?);
    let discs = member_data
        .iter()
        .map(|d| {
            let saved = load_params(&discriminator_path(&cfg.output_dir, d.user()))?;
            Ok(PersonalDiscriminator::from_params(d.user(), net, ctx, cfg.training.disc_lr, &saved)?)
        })
        .collect::<Result<Vec<_>>>()?;
    let scorers: Vec<&dyn PairScorer> = discs.iter().map(|d| d as &dyn PairScorer).collect();
    let budget = cfg.budget(scorers.len())?;
    let oracle_seed = stream(cfg.seed, Purpose::Noise, 1, 0).next_u64();
    let oracle = PrivateRewardOracle::new(scorers, cfg.privacy.beta, budget, oracle_seed)?;

    let mut pos = labeled(&member_data);
    let mut neg = labeled(&load(non_members, cfg)?);
    let mut rng = stream(cfg.seed, Purpose::Folds, 1, 0);
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let n = cfg.attack.max_per_class.min(pos.len()).min(neg.len());
    pos.truncate(n);
    neg.truncate(n);
    let mia = membership_inference(&pos, &neg, &oracle, cfg.seed)?;

    let synthetic = flatten(&load(synthetic, cfg)?);
    let uniqueness = uniqueness_test(&flatten(&member_data), &synthetic)?;
    let text = format_attack_report(&mia, &uniqueness, &budget, cfg.privacy.beta, n);
    error::write(&cfg.output_dir.join("attack.txt"), &text)?;
    let _ = out.write_all(text.as_bytes());
    Ok(())
}

fn execute(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::SynthData { run } => synth_data(&run.resolve()?, out),
        Command::Train { run, data } => {
            let cfg = run.resolve()?;
            train(&cfg, &or_default(&data, &cfg, "train.traj"), out)
        }
        Command::Generate { run, checkpoint, users, days } => {
            let cfg = run.resolve()?;
            let checkpoint = or_default(&checkpoint, &cfg, "policy.params");
            let users = users.unwrap_or(cfg.data.num_users);
            let days = days.unwrap_or(cfg.data.days);
            generate(&cfg, &checkpoint, users, days, out)
        }
        Command::Evaluate { run, real, synthetic } => {
            let cfg = run.resolve()?;
            let real = or_default(&real, &cfg, "heldout.traj");
            let synthetic = or_default(&synthetic, &cfg, "synthetic.traj");
            evaluate_cmd(&cfg, &real, &synthetic, out)
        }
        Command::Attack { run, members, non_members, synthetic } => {
            let cfg = run.resolve()?;
            let members = or_default(&members, &cfg, "train.traj");
            let non_members = or_default(&non_members, &cfg, "heldout.traj");
            let synthetic = or_default(&synthetic, &cfg, "synthetic.traj");
            attack(&cfg, &members, &non_members, &synthetic, out)
        }
        Command::DpBudget { epsilon, users, kappa } => {
            let budget = budget_for(epsilon, users, kappa)?;
            let _ = out.write_all(format_budget(&budget).as_bytes());
            Ok(())
        }
    }
}

/// Parses `args` (program name first) and runs the command. Returns the
/// process exit status: 0 on success, 2 on a usage error, 1 otherwise.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            let code = e.exit_code();
            if code == 0 {
                let _ = out.write_all(text.as_bytes());
            } else {
                let _ = err.write_all(text.as_bytes());
            }
            return code;
        }
    };
    match execute(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            1
        }
    }
}
