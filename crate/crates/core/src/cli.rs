//! Command-line interface. Every command is a pure function of its input
//! files, flags and `--seed`, so reruns produce byte-identical outputs.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::encoder::EncoderWeights;
use crate::error::{Error, Result};
use crate::event_model::{ObservationWindow, UserRecord};
use crate::io::{self, AnyModel, FitSettings, OptimizeSettings, WindowSource};
use crate::likelihood::{fit_mle, per_user_log_likelihood};
use crate::policy::PolicyParams;
use crate::reinforce::{expected_utility_seeded, optimize_policy, UtilitySpec};
use crate::simulator::{sample_dataset, SimConfig};
use crate::tabular::synth;

#[derive(Debug, Parser)]
#[command(name = "mtpp", version, about = "Marked temporal point processes with action policies")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit an encoder model by maximum likelihood.
    Fit {
        #[arg(long)]
        data: PathBuf,
        /// `t0,t_max` or a windows JSONL file [default: <data>.windows.jsonl]
        #[arg(long)]
        window: Option<String>,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Held-out event log, windowed like --data.
        #[arg(long)]
        heldout: Option<PathBuf>,
        /// Training curve [default: <out>.curve.csv]
        #[arg(long)]
        curve: Option<PathBuf>,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print total and per-user log-likelihood.
    Loglik {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// `t0,t_max` or a windows JSONL file [default: <data>.windows.jsonl]
        #[arg(long)]
        window: Option<String>,
        /// Also write the per-user values as `user,log_likelihood` CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate event logs from a model under a policy.
    Simulate {
        #[arg(long)]
        model: PathBuf,
        /// [default: uniform policy]
        #[arg(long)]
        policy: Option<PathBuf>,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        t0: f64,
        #[arg(long)]
        tmax: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Optimize a policy by score-function gradient ascent.
    OptimizePolicy {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        utility: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Starting policy [default: uniform policy]
        #[arg(long)]
        init: Option<PathBuf>,
        /// Optimization trace [default: <out>.trace.csv]
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Monte-Carlo estimate of expected utility.
    EvalUtility {
        #[arg(long)]
        model: PathBuf,
        /// [default: uniform policy]
        #[arg(long)]
        policy: Option<PathBuf>,
        #[arg(long)]
        utility: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        t0: f64,
        #[arg(long)]
        tmax: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Generate data from a tabular model with exact log-likelihoods.
    Synth {
        #[arg(long)]
        tabular: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
        /// [default: uniform policy]
        #[arg(long)]
        policy: Option<PathBuf>,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        t0: f64,
        #[arg(long)]
        tmax: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Per-user log-likelihoods [default: <out>.loglik.csv]
        #[arg(long)]
        loglik: Option<PathBuf>,
    },
}

fn window_source(data: &Path, window: Option<&str>) -> Result<WindowSource> {
    match window {
        Some(w) => WindowSource::parse(w),
        None => {
            let p = io::windows_path(data);
            if !p.exists() {
                return Err(Error::InvalidConfig(format!("no --window given and {} does not exist", p.display())));
            }
            Ok(WindowSource::PerUser(p))
        }
    }
}

fn policy_for(path: Option<&Path>, model: &AnyModel) -> Result<PolicyParams> {
    let policy = match path {
        Some(p) => io::load_policy(p)?,
        None => return Ok(PolicyParams::uniform(*model.schema())),
    };
    if policy.schema != *model.schema() {
        return Err(Error::ShapeMismatch(format!(
            "policy schema {:?} does not match model schema {:?}",
            policy.schema,
            model.schema()
        )));
    }
    Ok(policy)
}

/// Runs `$body` with `$m` bound to the concrete model inside an [`AnyModel`].
macro_rules! with_model {
    ($any:expr, $m:ident => $body:expr) => {
        match $any {
            AnyModel::Encoder($m) => $body,
            AnyModel::Tabular($m) => $body,
        }
    };
}

/// Executes one command, returning what it prints on stdout.
pub fn execute(command: Command) -> Result<String> {
    match command {
        Command::Fit { data, window, config, out, heldout, curve, seed } => {
            let mut settings = FitSettings::load(&config)?;
            if let Some(s) = seed {
                settings.fit.seed = s;
            }
            let schema = settings.schema();
            let source = window_source(&data, window.as_deref())?;
            let train = io::load_dataset(&data, &schema, &source)?;
            let held = match &heldout {
                Some(h) => io::load_dataset(h, &schema, &window_source(h, window.as_deref())?)?,
                None => Vec::new(),
            };
            let (weights, report): (EncoderWeights, _) =
                fit_mle(&train, &held, settings.encoder_config(), &settings.fit)?;
            io::save_model(&out, &AnyModel::Encoder(weights))?;
            fs::write(curve.unwrap_or_else(|| io::sidecar_path(&out, "curve.csv")), report.to_csv())?;
            let last = report.epochs.last();
            Ok(format!(
                "epochs\t{}\ntrain_ll\t{}\n",
                report.epochs.len(),
                last.map_or(String::from("-"), |e| e.train_ll.to_string())
            ))
        }
        Command::Loglik { data, model, window, out } => {
            let model = io::load_model(&model)?;
            let records = io::load_dataset(&data, model.schema(), &window_source(&data, window.as_deref())?)?;
            let values = with_model!(&model, m => per_user_log_likelihood(&records, m))?;
            if let Some(o) = out {
                fs::write(o, io::log_likelihood_csv(&records, &values))?;
            }
            let mut text = format!("total\t{}\n", values.iter().sum::<f64>());
            for (r, v) in records.iter().zip(&values) {
                text.push_str(&format!("{}\t{v}\n", r.user_id));
            }
            Ok(text)
        }
        Command::Simulate { model, policy, n, t0, tmax, seed, out } => {
            let model = io::load_model(&model)?;
            let policy = policy_for(policy.as_deref(), &model)?;
            let cfg = SimConfig { t0, t_max: tmax, users: n, seed };
            let records = with_model!(&model, m => sample_dataset(m, &policy, &cfg))?;
            io::write_dataset(&out, &records)?;
            Ok(format!("users\t{}\nevents\t{}\n", records.len(), records.iter().map(UserRecord::len).sum::<usize>()))
        }
        Command::OptimizePolicy { model, utility, config, out, init, trace, seed } => {
            let model = io::load_model(&model)?;
            let spec = load_utility_for(&utility, &model)?;
            let mut settings = OptimizeSettings::load(&config)?;
            if let Some(s) = seed {
                settings.optimize.seed = s;
            }
            let xi0 = policy_for(init.as_deref(), &model)?;
            let window = settings.window()?;
            let (xi, tr) = with_model!(&model, m => optimize_policy(m, &xi0, window, &spec, &settings.optimize))?;
            io::save_policy(&out, &xi)?;
            fs::write(trace.unwrap_or_else(|| io::sidecar_path(&out, "trace.csv")), tr.to_csv())?;
            let last = tr.points.last().expect("at least one iteration");
            Ok(format!("iterations\t{}\nmean_utility\t{} ± {}\n", tr.points.len(), last.mean_utility, last.se))
        }
        Command::EvalUtility { model, policy, utility, n, t0, tmax, seed } => {
            let model = io::load_model(&model)?;
            let policy = policy_for(policy.as_deref(), &model)?;
            let spec = load_utility_for(&utility, &model)?;
            let window = ObservationWindow::new(t0, tmax)?;
            let (mean, se) = with_model!(&model, m => expected_utility_seeded(m, &policy, window, &spec, n, seed))?;
            Ok(format!("{mean} ± {se}\n"))
        }
        Command::Synth { tabular, n, out, policy, t0, tmax, seed, loglik } => {
            let tab = io::load_tabular(&tabular)?;
            let any = AnyModel::Tabular(tab.clone());
            let policy = policy_for(policy.as_deref(), &any)?;
            let generated = synth(&tab, &policy, &SimConfig { t0, t_max: tmax, users: n, seed })?;
            let (records, values): (Vec<UserRecord>, Vec<f64>) =
                generated.into_iter().map(|s| (s.record, s.log_likelihood)).unzip();
            io::write_dataset(&out, &records)?;
            fs::write(
                loglik.unwrap_or_else(|| io::sidecar_path(&out, "loglik.csv")),
                io::log_likelihood_csv(&records, &values),
            )?;
            Ok(format!("users\t{}\nevents\t{}\n", records.len(), records.iter().map(UserRecord::len).sum::<usize>()))
        }
    }
}

fn load_utility_for(path: &Path, model: &AnyModel) -> Result<UtilitySpec> {
    let spec = io::load_utility(path)?;
    let s = model.schema();
    if spec.type_rewards.len() != s.num_types as usize || spec.action_costs.len() != s.num_actions as usize {
        return Err(Error::ShapeMismatch(format!(
            "utility has {} rewards and {} costs, model has {} types and {} actions",
            spec.type_rewards.len(),
            spec.action_costs.len(),
            s.num_types,
            s.num_actions
        )));
    }
    Ok(spec)
}

/// Parses `args` and runs the command. Returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(text) => {
            print!("{text}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
