//! `ncfilter`: run scenario configs or built-in presets.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ncfilter_core::scenario::{
    compare_oracle, deterministic_table, ensemble_table, load, output_dir, print_config, write_artifacts, Format,
    ScenarioConfig, Sidecar, Table, PRESETS,
};
use ncfilter_core::trajectory::threads_from_env;

#[derive(Parser)]
#[command(name = "ncfilter", version, about = "Filtering and master equations for systems driven by non-classical light")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Master-equation excitation, input flux and count probability.
    Run {
        /// Config file or preset name.
        config: String,
        #[command(flatten)]
        common: Common,
    },
    /// Ensemble of counting or homodyne trajectories on top of `run`.
    Trajectories {
        config: String,
        /// Number of trajectories.
        #[arg(long = "M")]
        m: Option<usize>,
        /// Master seed.
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        common: Common,
    },
    /// Compare the reduced equations with the extended system-plus-ancilla model.
    Verify {
        config: String,
        /// Multiply every drive amplitude seen by the reduced side (negative control).
        #[arg(long, default_value_t = 1.0, hide = true)]
        corrupt: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Print a config (or preset) in canonical form.
    Show {
        config: String,
        #[command(flatten)]
        common: Common,
    },
    /// List the built-in presets.
    Presets,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Time step.
    #[arg(long)]
    dt: Option<f64>,
    /// Horizon.
    #[arg(long = "T")]
    horizon: Option<f64>,
    /// Output directory (default ./out).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

impl Common {
    fn load(&self, spec: &str) -> Result<ScenarioConfig, String> {
        let mut cfg = load(spec).map_err(|e| e.to_string())?;
        if let Some(dt) = self.dt {
            cfg.grid.dt = dt;
        }
        if let Some(t) = self.horizon {
            cfg.grid.horizon = Some(t);
        }
        if let Some(f) = self.format {
            cfg.output.format = match f {
                FormatArg::Csv => Format::Csv,
                FormatArg::Json => Format::Json,
            };
        }
        cfg.build().map_err(|e| e.to_string())?;
        Ok(cfg)
    }

    fn write(&self, cfg: &ScenarioConfig, stem: &str, table: &Table, seed: Option<u64>) -> Result<(), String> {
        let dir = output_dir(cfg, self.out.as_deref());
        let side = Sidecar::new(cfg, seed).map_err(|e| e.to_string())?;
        let art = write_artifacts(&dir, stem, cfg.output.format, table, &side)
            .map_err(|e| format!("cannot write to {}: {e}", dir.display()))?;
        println!("wrote {}", art.data.display());
        println!("wrote {}", art.sidecar.display());
        Ok(())
    }
}

fn report_final(table: &Table) {
    for name in ["P_exc", "P_atleast_one_count", "P_exc_mean", "P_atleast_one_count_mean"] {
        if let Some(col) = table.column(name) {
            println!("final {name} = {:.6}", col.last().copied().unwrap_or(f64::NAN));
        }
    }
}

fn execute(cli: Cli) -> Result<ExitCode, String> {
    match cli.command {
        Command::Run { config, common } => {
            let cfg = common.load(&config)?;
            let sc = cfg.build().map_err(|e| e.to_string())?;
            let table = deterministic_table(&sc).map_err(|e| e.to_string())?;
            common.write(&cfg, &cfg.stem(), &table, None)?;
            report_final(&table);
        }
        Command::Trajectories { config, m, seed, common } => {
            let mut cfg = common.load(&config)?;
            if let Some(m) = m {
                cfg.ensemble.trajectories = m;
            }
            if let Some(s) = seed {
                cfg.ensemble.master_seed = s;
            }
            let sc = cfg.build().map_err(|e| e.to_string())?;
            let (table, stats) = ensemble_table(&sc, threads_from_env()).map_err(|e| e.to_string())?;
            common.write(&cfg, &format!("{}-trajectories", cfg.stem()), &table, Some(cfg.ensemble.master_seed))?;
            println!("{} trajectories, seed {}", stats.trajectories, stats.master_seed);
            report_final(&table);
            if stats.diagnostics.coarse_steps > 0 {
                eprintln!("warning: {} steps had k·dt above 0.1; consider a smaller dt", stats.diagnostics.coarse_steps);
            }
        }
        Command::Verify { config, corrupt, common } => {
            let cfg = common.load(&config)?;
            let report = compare_oracle(&cfg, corrupt).map_err(|e| e.to_string())?;
            for line in report.lines() {
                println!("{line}");
            }
            if !report.passed() {
                println!("verify: FAIL");
                return Ok(ExitCode::from(1));
            }
            println!("verify: ok");
        }
        Command::Show { config, common } => {
            let cfg = common.load(&config)?;
            println!("{}", print_config(&cfg));
        }
        Command::Presets => {
            for p in PRESETS {
                println!("{p}");
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
