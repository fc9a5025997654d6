use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use popmachine::experiment::{self, aggregate_csv, aggregate_dir, build_rm, run_experiment, ExperimentConfig, RmKind, StartReduce};
use popmachine::{
    enumerate_pops, greedy_trajectory, linearisations, parse_domain, parse_map, render, rm_to_dot, train, CraftWorld,
    Hyperparams, PlanSet, PlanningTask, TrainMode,
};

#[derive(Parser)]
#[command(name = "popmachine", version, about = "Plan enumeration, reward machine synthesis and CraftWorld training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Enumerate every partial-order plan of a task.
    Plan {
        #[command(flatten)]
        task: TaskArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build a reward machine from the plan set or from one plan.
    Synth {
        #[command(flatten)]
        task: TaskArgs,
        /// mprm, pop:<i> or seq:<i>
        #[arg(long)]
        kind: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        dot: Option<PathBuf>,
    },
    /// Inspect a map.
    Env {
        #[arg(long)]
        map: PathBuf,
        /// Print the grid, with the agent as `@`.
        #[arg(long)]
        render: bool,
        /// Agent position as x,y; defaults to the first evaluation start.
        #[arg(long, value_parser = parse_coord)]
        at: Option<(usize, usize)>,
    },
    /// Train one agent and write its evaluation log.
    Train(TrainArgs),
    #[command(subcommand)]
    Experiment(ExperimentCommand),
}

#[derive(Args)]
struct TaskArgs {
    #[arg(long)]
    domain: PathBuf,
    #[arg(long)]
    task: String,
    #[arg(long, default_value_t = 1)]
    max_repeats: usize,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    task: TaskArgs,
    #[arg(long)]
    map: PathBuf,
    /// mprm, pop:<i> or seq:<i>
    #[arg(long)]
    rm: String,
    /// qrm or product-q
    #[arg(long, default_value = "qrm")]
    mode: String,
    #[arg(long, default_value_t = 500_000)]
    steps: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.95)]
    alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    #[arg(long, default_value_t = 0.1)]
    epsilon: f64,
    #[arg(long, default_value_t = 1000)]
    episode_cap: u64,
    #[arg(long, default_value_t = 10_000)]
    eval_every: u64,
    #[arg(long)]
    out: PathBuf,
    /// Greedy rollout of the trained agent, as `t,x,y,rm_state_id` rows.
    #[arg(long)]
    dump_trajectory: Option<PathBuf>,
    /// Which evaluation start the dumped rollout begins from.
    #[arg(long, default_value_t = 0)]
    trajectory_start: usize,
}

#[derive(Subcommand)]
enum ExperimentCommand {
    /// Train every (map, reward machine, seed) cell of a config.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads; defaults to POPMACHINE_WORKERS or the core count.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Recompute percentile curves from a directory of run logs.
    Aggregate {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Reduce::Mean)]
        reduce: Reduce,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Reduce {
    Mean,
    Sum,
}

fn parse_coord(s: &str) -> Result<(usize, usize), String> {
    let (x, y) = s.split_once(',').ok_or("expected x,y")?;
    let n = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
    Ok((n(x)?, n(y)?))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_task(args: &TaskArgs) -> Result<(PlanningTask, PlanSet)> {
    let file = parse_domain(&read(&args.domain)?).with_context(|| args.domain.display().to_string())?;
    let task = file
        .task(&args.task)
        .cloned()
        .ok_or_else(|| anyhow!("no task `{}` in {}", args.task, args.domain.display()))?;
    let plans = enumerate_pops(&task, args.max_repeats)?;
    Ok((task, plans))
}

fn parse_kind(s: &str) -> Result<RmKind> {
    RmKind::parse(s).ok_or_else(|| anyhow!("unknown reward machine kind `{s}`; use mprm, pop:<i> or seq:<i>"))
}

fn format_plans(task: &PlanningTask, plans: &PlanSet) -> String {
    let name = |p: &[popmachine::ActionId]| -> String {
        p.iter().map(|&a| task.domain.action(a).name.as_str()).collect::<Vec<_>>().join(" ")
    };
    let mut out = format!("# {} partial-order plans for task {}\n", plans.len(), task.name);
    for (i, p) in plans.iter().enumerate() {
        out.push_str(&format!("\npop {i}\n{}\n", p.display(&task.domain)));
        for l in linearisations(p).expect("enumerated plans are consistent") {
            out.push_str(&format!("  linearisation: {}\n", name(&l)));
        }
    }
    let seqs = plans.sequential_plans();
    out.push_str(&format!("\n# {} sequential plans\n", seqs.len()));
    for (j, s) in seqs.iter().enumerate() {
        out.push_str(&format!("seq {j}: {}\n", name(s)));
    }
    out
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Plan { task, out } => {
            let (task, plans) = load_task(&task)?;
            let text = format_plans(&task, &plans);
            match out {
                Some(p) => write(&p, &text)?,
                None => print!("{text}"),
            }
        }
        Command::Synth { task, kind, out, dot } => {
            let (task, plans) = load_task(&task)?;
            let rm = build_rm(&task, &plans, parse_kind(&kind)?)?;
            write(&out, &rm.to_text())?;
            if let Some(dot) = dot {
                write(&dot, &rm_to_dot(&rm))?;
            }
            log::info!("{kind}: {} states", rm.num_states());
        }
        Command::Env { map, render: show, at } => {
            let grid = parse_map(&read(&map)?).with_context(|| map.display().to_string())?;
            let agent = match at {
                Some(c) if !grid.is_free(c) => bail!("{c:?} is outside the map or on a wall"),
                Some(c) => c,
                None => grid.eval_starts()[0],
            };
            if show {
                print!("{}", render(&grid, Some(agent)));
            }
            println!(
                "{}x{} cells, {} free, evaluation starts: {}",
                grid.width(),
                grid.height(),
                grid.free_cells().len(),
                grid.eval_starts().iter().map(|(x, y)| format!("({x},{y})")).collect::<Vec<_>>().join(" ")
            );
        }
        Command::Train(args) => {
            let (task, plans) = load_task(&args.task)?;
            let rm = build_rm(&task, &plans, parse_kind(&args.rm)?)?;
            let mode = TrainMode::parse(&args.mode).ok_or_else(|| anyhow!("unknown mode `{}`", args.mode))?;
            let grid = parse_map(&read(&args.map)?).with_context(|| args.map.display().to_string())?;
            let world = CraftWorld::new(Arc::new(grid), task.domain.clone());
            let hp = Hyperparams {
                alpha: args.alpha,
                gamma: args.gamma,
                epsilon: args.epsilon,
                episode_cap: args.episode_cap,
                total_steps: args.steps,
                eval_every: args.eval_every,
                seed: args.seed,
            };
            let (q, log) = train(&world, &rm, &hp, mode)?;
            write(&args.out, &log.to_csv())?;
            if let Some(path) = args.dump_trajectory {
                let starts = world.map().eval_starts();
                let start = *starts
                    .get(args.trajectory_start)
                    .ok_or_else(|| anyhow!("the map has {} evaluation starts", starts.len()))?;
                let traj = greedy_trajectory(&q, start, hp.episode_cap)?;
                log::info!("rollout from {start:?}: return {}, goal reached: {}", traj.ret, traj.reached_goal);
                let text = traj.to_csv();
                write(&path, &text)?;
            }
        }
        Command::Experiment(ExperimentCommand::Run { config, out, workers }) => {
            let cfg = ExperimentConfig::load(&config)?;
            let workers = workers.unwrap_or_else(experiment::worker_count);
            let report = run_experiment(&cfg, &out, workers)?;
            println!("{} runs written to {}", report.runs.len(), out.join("runs").display());
            for p in &report.aggregates {
                println!("{}", p.display());
            }
        }
        Command::Experiment(ExperimentCommand::Aggregate { input, out, reduce }) => {
            let reduce = match reduce {
                Reduce::Mean => StartReduce::Mean,
                Reduce::Sum => StartReduce::Sum,
            };
            let rows = aggregate_dir(&input, reduce)?;
            write(&out, &aggregate_csv(&rows))?;
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
