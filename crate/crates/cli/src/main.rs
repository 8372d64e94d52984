use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use shocktrace::experiments::commands::{self, EnsembleSet, RunDir};
use shocktrace::experiments::{ExperimentConfig, Scale};
use shocktrace::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "shocktrace", version, about = "Shock-trace prediction with reduced Burgers models")]
struct Cli {
    /// TOML experiment configuration; without it a preset is used.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[arg(long, global = true, value_enum, default_value_t = ScaleArg::Desk)]
    scale: ScaleArg,

    /// Forcing strength for the preset.
    #[arg(long, global = true, default_value_t = 1.0)]
    sigma: f64,

    /// Overrides the master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Run directory.
    #[arg(long, global = true, env = "SHOCKTRACE_OUT")]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ScaleArg {
    Desk,
    Paper,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SetArg {
    Threshold,
    Training,
    Both,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Full-model ensembles for thresholds and training.
    Generate {
        #[arg(long, value_enum, default_value_t = SetArg::Both)]
        set: SetArg,
    },
    /// Shock thresholds for K, 2K and N modes plus CFL/energy diagnostics.
    Threshold,
    /// Fit NAR parameters on the training ensemble.
    Train {
        /// Lag order.
        #[arg(long)]
        lags: Option<usize>,
    },
    /// Noise-free prediction runs.
    Predict {
        /// Parameter file (default: the run's params/nar.json).
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        realizations: Option<usize>,
    },
    /// Ensemble filtering followed by free prediction.
    Assimilate {
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        realizations: Option<usize>,
    },
    /// Box-plot summaries of rate tables.
    Report {
        /// Rate tables (default: the run's predict and assimilate tables).
        files: Vec<PathBuf>,
    },
}

fn resolve_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => {
            let scale = match cli.scale {
                ScaleArg::Desk => Scale::Desk,
                ScaleArg::Paper => Scale::Paper,
            };
            ExperimentConfig::preset(cli.sigma, scale)
        }
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    match &cli.command {
        Command::Train { lags: Some(l) } => cfg.training.lags = *l,
        Command::Predict {
            realizations: Some(n), ..
        } => cfg.prediction.realizations = *n,
        Command::Assimilate {
            realizations: Some(n), ..
        } => cfg.assimilation.realizations = *n,
        _ => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = resolve_config(&cli)?;
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("runs"));
    std::fs::create_dir_all(&out)?;
    let dir = RunDir::new(&out);
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(Error::Config("--jobs must be positive".into()));
        }
        pool = pool.num_threads(j);
    }
    let pool = pool.build().map_err(|e| Error::Config(e.to_string()))?;
    log::info!("config hash {} seed {} -> {}", cfg.hash(), cfg.seed, out.display());

    pool.install(|| match &cli.command {
        Command::Generate { set } => {
            std::fs::write(out.join("config.toml"), cfg.to_toml()?)?;
            let set = match set {
                SetArg::Threshold => EnsembleSet::Threshold,
                SetArg::Training => EnsembleSet::Training,
                SetArg::Both => EnsembleSet::Both,
            };
            let files = commands::cmd_generate(&cfg, &dir, set)?;
            println!("wrote {} trajectory files", files.len());
            Ok(())
        }
        Command::Threshold => {
            let (thr, diag) = commands::cmd_threshold(&cfg, &dir)?;
            for t in &thr {
                println!("tau_{} = {:.4} (dbar {:.4}, eta {:.4})", t.kmodes, t.tau, t.dbar, t.eta);
            }
            println!(
                "mean CFL {:.4}, unresolved energy {:.2}% (std {:.2}, max {:.2})",
                diag.cfl_mean, diag.energy_mean, diag.energy_std, diag.energy_max
            );
            Ok(())
        }
        Command::Train { .. } => {
            let o = commands::cmd_train(&cfg, &dir)?;
            println!("cv   {:?}", o.params.cv.iter().map(|r| r[0]).collect::<Vec<_>>());
            println!("cR+1 {:?}", o.params.folded_cr());
            if let Some(s) = &o.selection {
                println!("held-out selection prefers p = {}", s.chosen_p);
            }
            Ok(())
        }
        Command::Predict { params, .. } => {
            let o = commands::cmd_predict(&cfg, &dir, params.as_deref())?;
            println!("{} rate rows", o.rows.len());
            Ok(())
        }
        Command::Assimilate { params, .. } => {
            let o = commands::cmd_assimilate(&cfg, &dir, params.as_deref())?;
            println!("{} rate rows", o.rows.len());
            Ok(())
        }
        Command::Report { files } => {
            let r = commands::cmd_report(&cfg, &dir, files)?;
            for (k, s) in &r.groups {
                println!("{k}: median {:.4} [{:.4}, {:.4}] n={}", s.median, s.q1, s.q3, s.count);
            }
            Ok(())
        }
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
