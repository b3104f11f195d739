use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use cliquepart::bench::{self, GapKind, GapReport, Method, ReferenceMode};
use cliquepart::exact::{self, DEFAULT_EXACT_CAP};
use cliquepart::instance::{load_instance, save_instance, DEFAULT_THRESHOLD};
use cliquepart::neural::Checkpoint;
use cliquepart::policy::{best_of_random, rollout_logged, GreedyPolicy, Rollout};
use cliquepart::ppo::{self, TrainConfig};
use cliquepart::{EnvKind, Instance, InstanceSpec, Partition};
use serde_json::json;

#[derive(Parser)]
#[command(name = "cliquepart", version, about = "Diameter-bounded clique partitioning: generators, exact solver, baselines and a PPO-trained agent")]
struct Cli {
    /// Seed for generators and stochastic policies; for `train`, overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Separation threshold D; overrides the value stored in an instance file.
    #[arg(long, global = true)]
    threshold: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random instance and write it as JSON.
    Generate {
        #[arg(long, value_enum)]
        env: Env,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve an instance exactly with the subset DP.
    SolveExact {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long, default_value_t = DEFAULT_EXACT_CAP)]
        cap: usize,
        /// Write the optimal partition as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the random or greedy baseline on an instance.
    SolveHeuristic {
        #[arg(long, value_enum)]
        policy: Heuristic,
        #[arg(long)]
        instance: PathBuf,
        /// Random rollouts to run; the best one is reported.
        #[arg(long, default_value_t = 1)]
        episodes: usize,
        /// Per-step episode log as JSON lines.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Final partition as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the agent with PPO.
    Train {
        /// TOML config; defaults are used for missing keys.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        /// Checkpoint written by an earlier run of the same config.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Run methods on a generated suite and report gap statistics.
    Evaluate(EvaluateArgs),
    /// Replay the four-site walkthrough and check every step.
    VerifyFig1,
    /// Re-export a report CSV as CSV plus text table.
    Export {
        #[arg(long)]
        report: PathBuf,
        /// The report's gaps are regret against the best known solution.
        #[arg(long)]
        regret: bool,
        /// Output path stem; `.csv` and `.txt` are appended.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long, value_enum, default_value_t = Env::Cities)]
    env: Env,
    #[arg(long, default_value_t = 18)]
    n: usize,
    #[arg(long, default_value_t = 128)]
    count: usize,
    #[arg(long, value_enum, default_value_t = Reference::Exact)]
    reference: Reference,
    /// Baselines to include.
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = vec![Baseline::Random, Baseline::Greedy])]
    methods: Vec<Baseline>,
    /// Rollouts per instance for the random baseline.
    #[arg(long, default_value_t = 1)]
    random_episodes: usize,
    /// Trained checkpoints to include; labelled by file stem.
    #[arg(long)]
    checkpoint: Vec<PathBuf>,
    /// Output path stem for the report `.csv` and `.txt`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Env {
    Cities,
    General,
}

impl From<Env> for EnvKind {
    fn from(e: Env) -> Self {
        match e {
            Env::Cities => EnvKind::Cities,
            Env::General => EnvKind::General,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Heuristic {
    Random,
    Greedy,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Baseline {
    Random,
    Greedy,
    Exact,
}

#[derive(Clone, Copy, ValueEnum)]
enum Reference {
    Exact,
    BestKnown,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let seed = cli.seed.unwrap_or(0);
    match cli.command {
        Command::Generate { env, n, out } => {
            let spec = InstanceSpec {
                env: env.into(),
                n,
                threshold: cli.threshold.unwrap_or(DEFAULT_THRESHOLD),
                seed_base: seed,
            };
            let inst = spec.generate(0)?;
            save_instance(&inst, &out)?;
            println!("wrote {} ({} sites, {} near pairs)", out.display(), n, cliquepart::near_pairs(&inst).len());
        }
        Command::SolveExact { instance, cap, out } => {
            let inst = read_instance(&instance, cli.threshold)?;
            let start = Instant::now();
            let sol = exact::solve_exact_dp_with_cap(&inst, cap)?;
            let elapsed = start.elapsed();
            println!("objective {}", sol.objective);
            println!("clusters {}", format_clusters(&sol.partition));
            println!("time {:.3}s", elapsed.as_secs_f64());
            if let Some(path) = out {
                write_partition(&path, &sol.partition, sol.objective)?;
            }
        }
        Command::SolveHeuristic {
            policy,
            instance,
            episodes,
            log,
            out,
        } => {
            let inst = Arc::new(read_instance(&instance, cli.threshold)?);
            let result = match policy {
                Heuristic::Random => best_of_random(inst, episodes, seed)?,
                Heuristic::Greedy => rollout_logged(inst, &GreedyPolicy, seed)?,
            };
            let partition = result.final_state.current_partition();
            println!("objective {}", result.objective);
            println!("clusters {}", format_clusters(&partition));
            if let Some(path) = log {
                write_log(&path, &result)?;
            }
            if let Some(path) = out {
                write_partition(&path, &partition, result.objective)?;
            }
        }
        Command::Train { config, out_dir, resume } => {
            let mut cfg = match config {
                Some(path) => TrainConfig::load(&path)?,
                None => TrainConfig::default(),
            };
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            let ck = resume.map(|p| Checkpoint::load(&p)).transpose()?;
            fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
            fs::write(out_dir.join("config.toml"), cfg.to_toml())?;
            let start = Instant::now();
            let outcome = ppo::train(&cfg, &out_dir, ck.as_ref())?;
            if let Some(last) = outcome.metrics.last() {
                println!(
                    "batch {} mean objective {:.3} mean gap {} entropy {:.4}",
                    last.batch,
                    last.mean_objective,
                    last.mean_gap.map_or("n/a".into(), |g| format!("{:.4}%", 100.0 * g)),
                    last.entropy
                );
            }
            println!("trained {} batches in {:.1}s", outcome.metrics.len(), start.elapsed().as_secs_f64());
        }
        Command::Evaluate(args) => {
            let report = evaluate(&args, seed, cli.threshold)?;
            print!("{}", report.table());
            if let Some(out) = args.out {
                bench::export_tables(&report, &out)?;
            }
        }
        Command::VerifyFig1 => {
            let start = Instant::now();
            let report = bench::verify_figure1();
            println!("{report}");
            println!("time {:.3}s", start.elapsed().as_secs_f64());
            if let Some(fail) = report.first_failure() {
                bail!("walkthrough failed at '{}'", fail.name);
            }
        }
        Command::Export { report, regret, out } => {
            let text = fs::read_to_string(&report).with_context(|| format!("reading {}", report.display()))?;
            let kind = if regret {
                GapKind::RegretVsBestKnown
            } else {
                GapKind::OptimalityGap
            };
            let parsed = GapReport::from_csv(&text, kind)?;
            bench::export_tables(&parsed, &out)?;
            print!("{}", parsed.table());
        }
    }
    Ok(())
}

fn read_instance(path: &Path, threshold: Option<f64>) -> Result<Instance> {
    let inst = load_instance(path)?;
    Ok(match threshold {
        Some(d) => inst.with_threshold(d)?,
        None => inst,
    })
}

fn format_clusters(p: &Partition) -> String {
    let parts: Vec<String> = p
        .clusters()
        .iter()
        .map(|c| format!("{{{}}}", c.iter().map(usize::to_string).collect::<Vec<_>>().join(",")))
        .collect();
    parts.join(" ")
}

fn write_partition(path: &Path, p: &Partition, objective: f64) -> Result<()> {
    let value = json!({
        "objective": objective,
        "assignment": p.canonical().assignment,
        "clusters": p.clusters(),
    });
    fs::write(path, serde_json::to_string_pretty(&value)?).with_context(|| format!("writing {}", path.display()))
}

fn write_log(path: &Path, rollout: &Rollout) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    for rec in &rollout.log {
        writeln!(w, "{}", serde_json::to_string(rec)?)?;
    }
    w.flush()?;
    Ok(())
}

fn evaluate(args: &EvaluateArgs, seed: u64, threshold: Option<f64>) -> Result<GapReport> {
    let mut methods = Vec::new();
    for b in &args.methods {
        methods.push(match b {
            Baseline::Random => Method::Random {
                episodes: args.random_episodes,
            },
            Baseline::Greedy => Method::Greedy,
            Baseline::Exact => Method::Exact { cap: DEFAULT_EXACT_CAP },
        });
    }
    for path in &args.checkpoint {
        let model = Checkpoint::load(path)?.to_model()?;
        let label = path.file_stem().map_or("policy".into(), |s| s.to_string_lossy().into_owned());
        methods.push(Method::Policy {
            label,
            model: Arc::new(model),
        });
    }
    if methods.is_empty() {
        bail!("no methods to evaluate");
    }
    let spec = InstanceSpec {
        env: args.env.into(),
        n: args.n,
        threshold: threshold.unwrap_or(DEFAULT_THRESHOLD),
        seed_base: seed,
    };
    let reference = match args.reference {
        Reference::Exact => ReferenceMode::ExactDp,
        Reference::BestKnown => ReferenceMode::BestKnown,
    };
    Ok(bench::run_generated_suite(&methods, &spec, args.count, reference)?)
}
