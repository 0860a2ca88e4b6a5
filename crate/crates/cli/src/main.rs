use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sidflow_cli::commands;
use sidflow_cli::config::{RunConfig, KEYS};
use sidflow_core::eval::MetricReport;
use sidflow_core::io::fmt_g9;
use sidflow_core::Result;

#[derive(Parser)]
#[command(name = "sidflow", version, about = "Diffusion parameterization toolkit and few-step score distillation on Gaussian mixtures")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the `seed` key.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Overrides the `io.out` key.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Overrides one configuration key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Tabulate and plot π(t) for every density/weight pair of the schedule grid.
    Schedules,
    /// Convert one prediction between parameterizations.
    Convert {
        #[arg(long)]
        from: String,
        #[arg(long)]
        to: String,
        /// Comma-separated corrupted point.
        #[arg(long = "x-t", allow_hyphen_values = true)]
        x_t: String,
        #[arg(long)]
        t: f64,
        /// Comma-separated prediction value.
        #[arg(long, allow_hyphen_values = true)]
        value: String,
    },
    /// Train a student network on the analytic teacher.
    Pretrain,
    /// Distill the teacher into a few-step generator.
    Distill {
        /// Restrict generator-loss timesteps to `lo,hi`.
        #[arg(long = "t-range", value_name = "LO,HI")]
        t_range: Option<String>,
        /// Enable the adversarial term.
        #[arg(long)]
        adversarial: bool,
        /// Real rows for the adversarial term: `teacher` or a sample CSV.
        #[arg(long = "real-data", value_name = "SOURCE")]
        real_data: Option<String>,
    },
    /// Compare two sample CSVs.
    Eval { a: PathBuf, b: PathBuf },
    /// Dump teacher samples.
    Sample {
        #[arg(long, default_value_t = 4096)]
        n: usize,
        #[arg(long)]
        class: Option<usize>,
    },
    /// Distill once per configured t range and tabulate the results.
    AblateT,
    /// List every configuration key with its default.
    Keys,
}

fn resolve(g: &Global) -> Result<RunConfig> {
    let mut c = match &g.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for s in &g.set {
        c.assign(s)?;
    }
    if let Some(seed) = g.seed {
        c.set("seed", &seed.to_string())?;
    }
    if let Some(out) = &g.out {
        c.set("io.out", &out.to_string_lossy())?;
    }
    Ok(c)
}

fn run(cli: Cli) -> Result<()> {
    let mut config = resolve(&cli.global)?;
    match cli.command {
        Command::Schedules => {
            println!("{}", commands::schedules(&config)?.display());
        }
        Command::Convert { from, to, x_t, t, value } => {
            let v = commands::convert(&config, &from, &to, &x_t, t, &value)?;
            println!("{}", v.iter().map(|&x| fmt_g9(x)).collect::<Vec<_>>().join(","));
        }
        Command::Pretrain => {
            println!("{}", commands::pretrain(&config)?.display());
        }
        Command::Distill { t_range, adversarial, real_data } => {
            if let Some(r) = t_range {
                let (lo, hi) = r
                    .split_once(',')
                    .ok_or_else(|| sidflow_core::Error::Config(format!("--t-range `{r}` is not lo,hi")))?;
                config.set("law.t_lo", lo.trim())?;
                config.set("law.t_hi", hi.trim())?;
            }
            if adversarial {
                config.set("distill.adversarial", "true")?;
            }
            if let Some(r) = real_data {
                config.set("distill.real_data", &r)?;
            }
            let s = commands::distill(&config)?;
            println!("energy_distance = {}", fmt_g9(s.energy_distance));
            println!("threshold = {}", fmt_g9(s.threshold));
            for (c, p) in &s.purity {
                println!("purity.{c} = {}", fmt_g9(*p));
            }
            println!("{}", s.manifest.display());
        }
        Command::Eval { a, b } => {
            let r = commands::eval(&config, &a, &b)?;
            println!("{}\n{}", MetricReport::CSV_HEADER, r.csv_row());
        }
        Command::Sample { n, class } => {
            println!("{}", commands::sample(&config, n, class)?.display());
        }
        Command::AblateT => {
            let (manifest, rows) = commands::ablate_t(&config)?;
            println!("range,energy_distance,sliced_w2");
            for r in rows {
                println!("{},{},{}", r.label, fmt_g9(r.energy_distance), fmt_g9(r.sliced_w2));
            }
            println!("{}", manifest.display());
        }
        Command::Keys => {
            for k in KEYS {
                println!("{} = {}  # {}", k.name, k.default, k.doc);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("sidflow: {e}");
            ExitCode::from(sidflow_cli::exit_code(&e))
        }
    }
}
