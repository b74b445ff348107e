//! The `sit` command line.
//!
//! Every command writes CSV (or text) files into `--out` (default `.`), each
//! starting with `#`-prefixed metadata lines that pin the scenario, seed and
//! overrides needed to reproduce it. Exit codes: 0 success, 2 usage,
//! 3 invalid configuration, 4 runtime failure.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::api::{run_api, ApiConfig, WeightVector};
use crate::error::{Error, Result};
use crate::eval::{evaluate_policy, histogram_on_set, sweep_costs, EvaluationSet, EvaluationSettings};
use crate::exact::{
    build_finite_mdp, policy_improvement, policy_iteration, sup_distance, value_iteration, DiscretizationGrid,
    TabularPolicy, DEFAULT_PAIR_CAP,
};
use crate::mdp::AttackModel;
use crate::policy::{baseline_handles, Policy, PolicyHandle};
use crate::scenario::{load_scenario, ScenarioConfig};
use crate::seed::{child_rng, tags};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;
pub const EXIT_RUNTIME: i32 = 4;

/// Cost points swept when `--costs` is not given.
pub const DEFAULT_COSTS: [f64; 7] = [0.06, 0.125, 0.25, 0.5, 0.75, 1.0, 2.0];
/// Value-iteration accuracy used by `solve-exact`.
const VI_TOLERANCE: f64 = 1e-10;
/// PI/VI agreement `solve-exact` insists on.
const AGREEMENT: f64 = 1e-8;

#[derive(Debug, Parser)]
#[command(name = "sit", version, about = "Stealthy congestion-attack simulator and solvers")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    #[command(flatten)]
    global: GlobalArgs,
}

#[derive(Debug, Args, Clone)]
struct GlobalArgs {
    /// Scenario file, or one of system1, system2, system3.
    #[arg(long, global = true, default_value = "system1")]
    scenario: String,
    /// Root seed (defaults to the scenario's).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// API iterations.
    #[arg(long, global = true, default_value_t = 100)]
    iterations: usize,
    /// Override the cost coefficient C_T.
    #[arg(long, global = true)]
    cost: Option<f64>,
    /// Override the jam success probability.
    #[arg(long = "success-rate", global = true)]
    success_rate: Option<f64>,
    /// Steps per trajectory (training and evaluation).
    #[arg(long, global = true, default_value_t = 100)]
    horizon: usize,
    /// Trajectories per start state (training and evaluation).
    #[arg(long, global = true, default_value_t = 50)]
    trajectories: usize,
}

#[derive(Debug, Args, Clone)]
struct PolicyArgs {
    /// no-attack, random, dosJ@F, myopic, api or tabular.
    #[arg(long, default_value = "api")]
    policy: String,
    /// Weight file for `--policy api`; trains from scratch when absent.
    #[arg(long)]
    weights: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Discretize the scenario and solve it by policy and value iteration.
    SolveExact {
        /// Also write the sparse transition listing.
        #[arg(long)]
        listing: bool,
    },
    /// Run approximate policy iteration; writes weights.txt and history.csv.
    TrainApi,
    /// Score one policy on the held-out states.
    Evaluate(PolicyArgs),
    /// Score every baseline and API across attack costs.
    Sweep {
        /// Comma-separated cost coefficients.
        #[arg(long, value_delimiter = ',')]
        costs: Vec<f64>,
    },
    /// Action frequencies of one policy on the held-out states.
    Histogram(PolicyArgs),
    /// One trajectory from the scenario's initial state.
    Trace(PolicyArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::SolveExact { .. } => "solve-exact",
            Command::TrainApi => "train-api",
            Command::Evaluate(_) => "evaluate",
            Command::Sweep { .. } => "sweep",
            Command::Histogram(_) => "histogram",
            Command::Trace(_) => "trace",
        }
    }
}

/// Parses `argv` (including the program name) and runs the command.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let config = match load_scenario(&cli.global.scenario).and_then(|c| apply_overrides(c, &cli.global)) {
        Ok(config) => config,
        Err(e) => {
            eprintln!("error [scenario={}]: {e}", cli.global.scenario);
            return EXIT_CONFIG;
        }
    };
    let ctx = Context { config, global: cli.global.clone(), command: cli.command.name() };
    match ctx.execute(&cli.command) {
        Ok(summary) => {
            if !summary.is_empty() {
                println!("{summary}");
            }
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error [scenario={} seed={}]: {e}", ctx.config.name, ctx.config.seed);
            match e {
                Error::Config { .. } | Error::Parse(_) => EXIT_CONFIG,
                _ => EXIT_RUNTIME,
            }
        }
    }
}

fn apply_overrides(mut config: ScenarioConfig, global: &GlobalArgs) -> Result<ScenarioConfig> {
    if let Some(c) = global.cost {
        config = config.with_cost(c);
    }
    if let Some(p) = global.success_rate {
        config = config.with_success_probability(p);
    }
    if let Some(s) = global.seed {
        config = config.with_seed(s);
    }
    config.validate()?;
    Ok(config)
}

struct Context {
    config: ScenarioConfig,
    global: GlobalArgs,
    command: &'static str,
}

impl Context {
    fn seed(&self) -> u64 {
        self.config.seed
    }

    fn settings(&self) -> EvaluationSettings {
        EvaluationSettings {
            horizon: self.global.horizon,
            trajectories: self.global.trajectories,
            ..EvaluationSettings::default()
        }
    }

    fn api_config(&self) -> ApiConfig {
        ApiConfig {
            iterations: self.global.iterations,
            trajectories_per_state: self.global.trajectories,
            horizon: self.global.horizon,
            evaluation: self.settings(),
            ..ApiConfig::default()
        }
    }

    fn header(&self, extra: &[(&str, String)]) -> String {
        let g = &self.global;
        let opt = |v: Option<f64>| v.map_or("none".to_string(), |x| x.to_string());
        let mut out = String::new();
        let mut line = |k: &str, v: &str| {
            let _ = writeln!(out, "# {k}={v}");
        };
        line("tool", &format!("sit {}", env!("CARGO_PKG_VERSION")));
        line("command", self.command);
        line("scenario", &self.config.name);
        line("scenario_source", &g.scenario);
        line("seed", &self.seed().to_string());
        line("cost_override", &opt(g.cost));
        line("success_rate_override", &opt(g.success_rate));
        line("cost", &self.config.reward.cost_coefficient.to_string());
        line("success_probability", &self.config.success_probability.to_string());
        line("iterations", &g.iterations.to_string());
        line("horizon", &g.horizon.to_string());
        line("trajectories", &g.trajectories.to_string());
        line("eval_states", &self.settings().states.to_string());
        for (k, v) in extra {
            line(k, v);
        }
        out
    }

    fn write(&self, name: &str, body: &str, extra: &[(&str, String)]) -> Result<PathBuf> {
        fs::create_dir_all(&self.global.out)?;
        let path = self.global.out.join(name);
        fs::write(&path, format!("{}{body}", self.header(extra)))?;
        Ok(path)
    }

    fn execute(&self, command: &Command) -> Result<String> {
        let model = self.config.model()?;
        match command {
            Command::SolveExact { listing } => self.solve_exact(&model, *listing),
            Command::TrainApi => self.train_api(&model),
            Command::Evaluate(p) => self.evaluate(&model, p),
            Command::Sweep { costs } => self.sweep(&model, costs),
            Command::Histogram(p) => self.histogram(&model, p),
            Command::Trace(p) => self.trace(&model, p),
        }
    }

    fn solve_exact(&self, model: &AttackModel, listing: bool) -> Result<String> {
        let grid = DiscretizationGrid::default();
        let mdp = build_finite_mdp(model, &grid, DEFAULT_PAIR_CAP)?;
        let pi = policy_iteration(&mdp, &vec![0; mdp.num_states()]);
        let vi = value_iteration(&mdp, VI_TOLERANCE);
        let gap = sup_distance(&pi.values, &vi.values);
        let pi_policy = policy_improvement(&mdp, &pi.values);
        let vi_policy = policy_improvement(&mdp, &vi.values);
        let agree = pi_policy == vi_policy;

        let mut body = String::from("state,q1,q2,alpha1,value_pi,value_vi,action_pi,action_vi\n");
        for (s, state) in mdp.states.iter().enumerate() {
            let _ = writeln!(
                body,
                "{s},{},{},{},{},{},{},{}",
                state.queues[0],
                state.queues[1],
                state.admission[0],
                pi.values[s],
                vi.values[s],
                mdp.actions[pi_policy[s]],
                mdp.actions[vi_policy[s]]
            );
        }
        let extra = [
            (
                "grid",
                format!(
                    "queue_step={} queue_max={} admission_step={}",
                    grid.queue_step, grid.queue_max, grid.admission_step
                ),
            ),
            ("states", mdp.num_states().to_string()),
            ("pi_iterations", pi.iterations.to_string()),
            ("vi_sweeps", vi.sweeps.to_string()),
            ("pi_vi_sup_norm", gap.to_string()),
            ("policies_agree", agree.to_string()),
        ];
        let path = self.write("exact.csv", &body, &extra)?;
        if listing {
            let mut text = Vec::new();
            mdp.write_listing(&mut text)?;
            self.write("exact_mdp.txt", &String::from_utf8_lossy(&text), &extra)?;
        }
        if gap > AGREEMENT || !agree {
            return Err(Error::Check(format!(
                "policy and value iteration disagree: sup-norm {gap}, policies agree: {agree}"
            )));
        }
        Ok(format!(
            "states={} pi_iterations={} vi_sweeps={} pi_vi_sup_norm={gap:e} policies_agree={agree} -> {}",
            mdp.num_states(),
            pi.iterations,
            vi.sweeps,
            path.display()
        ))
    }

    fn train(&self, model: &AttackModel) -> Result<crate::api::ApiRun> {
        run_api(model, &self.api_config(), self.seed())
    }

    fn train_api(&self, model: &AttackModel) -> Result<String> {
        let run = self.train(model)?;
        let extra = [
            ("best_iteration", run.best_iteration.to_string()),
            ("best_reward", run.best_reward().to_string()),
            ("best_stderr", run.best_report.stderr.to_string()),
        ];
        let weights_path = self.write("weights.txt", &format!("{}\n", run.best_weights), &extra)?;
        let mut body = String::from("iteration,eval_reward,best_reward\n");
        for h in &run.history {
            let _ = writeln!(body, "{},{},{}", h.iteration, h.report.mean_reward, h.best_reward);
        }
        self.write("history.csv", &body, &extra)?;
        Ok(format!(
            "best_reward={} at iteration {} -> {}",
            run.best_reward(),
            run.best_iteration,
            weights_path.display()
        ))
    }

    fn resolve_policy(&self, model: &AttackModel, args: &PolicyArgs) -> Result<Box<dyn Policy>> {
        match args.policy.as_str() {
            "api" => {
                let weights = match &args.weights {
                    Some(path) => read_weights(path)?,
                    None => self.train(model)?.best_weights,
                };
                PolicyHandle::ApiGreedy(weights).build(model)
            }
            "tabular" => {
                let grid = DiscretizationGrid::default();
                let mdp = build_finite_mdp(model, &grid, DEFAULT_PAIR_CAP)?;
                let pi = policy_iteration(&mdp, &vec![0; mdp.num_states()]);
                PolicyHandle::Tabular(TabularPolicy { grid, actions: pi.policy }).build(model)
            }
            other => other.parse::<PolicyHandle>()?.build(model),
        }
    }

    fn evaluate(&self, model: &AttackModel, args: &PolicyArgs) -> Result<String> {
        let policy = self.resolve_policy(model, args)?;
        let set = EvaluationSet::held_out(model, self.seed(), &self.settings());
        let r = evaluate_policy(&policy, model, &set)?;
        let body = format!(
            "scenario,cost,policy,mean_reward,stderr,trajectories,horizon,seed\n{},{},{},{},{},{},{},{}\n",
            r.scenario,
            model.reward.cost_coefficient,
            r.policy,
            r.mean_reward,
            r.stderr,
            r.trajectories,
            r.horizon,
            self.seed()
        );
        let path = self.write("evaluation.csv", &body, &[])?;
        Ok(format!("{} mean_reward={} stderr={} -> {}", r.policy, r.mean_reward, r.stderr, path.display()))
    }

    fn sweep(&self, model: &AttackModel, costs: &[f64]) -> Result<String> {
        let costs = if costs.is_empty() { DEFAULT_COSTS.to_vec() } else { costs.to_vec() };
        let handles = baseline_handles(model);
        let rows =
            sweep_costs(&self.config, &costs, &handles, &self.settings(), Some(&self.api_config()), self.seed())?;
        let mut body = String::from("scenario,cost,policy,mean_reward,stderr,seed\n");
        for r in &rows {
            let _ = writeln!(
                body,
                "{},{},{},{},{},{}",
                self.config.name,
                r.cost,
                r.policy,
                r.mean_reward,
                r.stderr,
                self.seed()
            );
        }
        let path = self.write("sweep.csv", &body, &[])?;
        Ok(format!("{} rows -> {}", rows.len(), path.display()))
    }

    fn histogram(&self, model: &AttackModel, args: &PolicyArgs) -> Result<String> {
        let policy = self.resolve_policy(model, args)?;
        let set = EvaluationSet::held_out(model, self.seed(), &self.settings());
        let hist = histogram_on_set(&policy, model, &set)?;
        let mut body = String::from("scenario,cost,policy,action,frequency\n");
        for f in &hist {
            let _ = writeln!(
                body,
                "{},{},{},{},{}",
                self.config.name,
                model.reward.cost_coefficient,
                policy.name(),
                f.action,
                f.frequency
            );
        }
        let path = self.write("histogram.csv", &body, &[])?;
        Ok(format!("{} actions -> {}", hist.len(), path.display()))
    }

    fn trace(&self, model: &AttackModel, args: &PolicyArgs) -> Result<String> {
        let policy = self.resolve_policy(model, args)?;
        let start = self.config.start_state(model)?;
        let n = model.segments();
        let mut body = String::from("step");
        for prefix in ["queue", "advertised", "true"] {
            for i in 1..=n {
                let _ = write!(body, ",{prefix}{i}");
            }
        }
        body.push_str(",action,reward\n");
        let mut env = child_rng(self.seed(), tags::ENVIRONMENT, &[0]);
        let mut prng = child_rng(self.seed(), tags::POLICY, &[0]);
        let mut step = 0;
        let total =
            crate::api::simulate(model, &policy, &start, self.global.horizon, &mut env, &mut prng, |s, a, _, g| {
                let truth = model.network.true_ratios(&s.queues);
                let _ = write!(body, "{step}");
                for v in s.queues.iter().chain(&s.admission).chain(&truth) {
                    let _ = write!(body, ",{v}");
                }
                let _ = writeln!(body, ",{},{g}", model.actions[a]);
                step += 1;
            });
        let path = self.write("trace.csv", &body, &[("discounted_return", total.to_string())])?;
        Ok(format!("discounted_return={total} -> {}", path.display()))
    }
}

fn read_weights(path: &Path) -> Result<WeightVector> {
    fs::read_to_string(path)?.parse()
}
