//! Experiment runner: phantom generation, forward solves, data synthesis,
//! reconstruction by any of the five methods, compatibility diagnostics,
//! and convergence / noise-stability sweeps.

use clap::{Args, Parser, Subcommand};
use pdt_core::experiment::{
    convergence_study, emit_gnuplot, prepare, run_diagnose, run_experiment, stability_sweep,
    ExperimentConfig, Method,
};
use pdt_core::forward::solve_conductivity;
use pdt_core::phantom::{IlluminationSet, Phantom};
use pdt_core::{io, Grid};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "pdt",
    about = "Synthesize interior power-density data and reconstruct conductivity",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags mirroring the JSON configuration keys; a config file, when given,
/// provides the base values and explicit flags are ignored except --out.
#[derive(Args, Clone)]
struct RunArgs {
    /// JSON experiment configuration (unknown keys are rejected)
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "constant")]
    phantom: String,
    #[arg(long, default_value_t = 64)]
    grid: usize,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    /// ode_s | ode_r | elliptic | theta2d | algebraic2d
    #[arg(long, default_value = "elliptic")]
    method: String,
    /// default | axes
    #[arg(long, default_value = "default")]
    illuminations: String,
    /// force forward solves even when closed-form solutions exist
    #[arg(long)]
    numeric_data: bool,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long = "elliptic.tol", default_value_t = 1e-10)]
    elliptic_tol: f64,
    /// default 20 * nx
    #[arg(long = "elliptic.max_iter")]
    elliptic_max_iter: Option<usize>,
    #[arg(long, default_value_t = 1e-8)]
    degeneracy_floor: f64,
    /// gram_schmidt | inv_sqrt
    #[arg(long, default_value = "gram_schmidt")]
    t_method: String,
    /// output directory for field files, manifests and CSV rows
    #[arg(long, short)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn to_config(&self) -> Result<ExperimentConfig, pdt_core::Error> {
        let mut cfg = if let Some(path) = &self.config {
            ExperimentConfig::from_json(&std::fs::read_to_string(path)?)?
        } else {
            let mut cfg = ExperimentConfig::new(
                &self.phantom,
                self.grid,
                self.alpha,
                Method::parse(&self.method)?,
            );
            cfg.illuminations = self.illuminations.clone();
            cfg.analytic_data = !self.numeric_data;
            cfg.seed = self.seed;
            cfg.elliptic.tol = self.elliptic_tol;
            cfg.elliptic.max_iter = self.elliptic_max_iter;
            cfg.degeneracy_floor = self.degeneracy_floor;
            cfg.t_method = self.t_method.clone();
            cfg
        };
        if self.out.is_some() {
            cfg.output_dir = self.out.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Sample a phantom's conductivity onto a grid and write its fields
    Phantom {
        #[arg(long, default_value = "constant")]
        name: String,
        #[arg(long, default_value_t = 64)]
        grid: usize,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Solve the conductivity equation for each illumination
    Forward {
        #[command(flatten)]
        args: RunArgs,
    },
    /// Build the measurement bundle H and write it as a directory
    Synthesize {
        #[command(flatten)]
        args: RunArgs,
    },
    /// Run a full reconstruction and report error metrics
    Reconstruct {
        #[command(flatten)]
        args: RunArgs,
    },
    /// Evaluate the compatibility residuals as a range test
    Diagnose {
        #[command(flatten)]
        args: RunArgs,
        /// also run at this grid and report convergence orders
        #[arg(long)]
        refined_grid: Option<usize>,
        /// corrupt H_11 multiplicatively with this amplitude first
        #[arg(long)]
        corrupt: Option<f64>,
    },
    /// Reconstruction errors across a list of grids with observed orders
    Converge {
        #[command(flatten)]
        args: RunArgs,
        #[arg(long, value_delimiter = ',', default_value = "32,64,128")]
        grids: Vec<usize>,
        /// write a gnuplot script next to the CSV
        #[arg(long)]
        emit_gnuplot: bool,
    },
    /// Noise-stability sweep over perturbation levels
    Stability {
        #[command(flatten)]
        args: RunArgs,
        #[arg(long, value_delimiter = ',', default_value = "1e-4,1e-3,1e-2")]
        levels: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "0.0")]
        seed_errors: Vec<f64>,
        #[arg(long, default_value_t = 0.05)]
        smooth_radius: f64,
        #[arg(long)]
        emit_gnuplot: bool,
    },
}

fn run(cli: Cli) -> Result<(), (String, pdt_core::Error)> {
    let stage = |s: &str| s.to_string();
    match cli.command {
        Command::Phantom { name, grid, out } => {
            let grid = Grid::new(grid, grid).map_err(|e| (stage("phantom"), e))?;
            let phantom = Phantom::by_name(&name, grid).map_err(|e| (stage("phantom"), e))?;
            io::write_scalar(&out, "sigma", &phantom.sigma).map_err(|e| (stage("phantom"), e))?;
            io::write_scalar(&out, "log_sigma", &phantom.log_sigma())
                .map_err(|e| (stage("phantom"), e))?;
            io::write_scalar_csv(&out.join("sigma.csv"), &phantom.sigma, "sigma")
                .map_err(|e| (stage("phantom"), e))?;
            println!("wrote phantom '{name}' fields to {}", out.display());
            Ok(())
        }
        Command::Forward { args } => {
            let cfg = args.to_config().map_err(|e| (stage("config"), e))?;
            let grid = Grid::new(cfg.grid, cfg.grid).map_err(|e| (stage("forward"), e))?;
            let phantom =
                Phantom::by_name(&cfg.phantom, grid).map_err(|e| (stage("forward"), e))?;
            let illums = match cfg.illuminations.as_str() {
                "axes" => IlluminationSet::axes(grid),
                _ => IlluminationSet::default_for(&phantom),
            };
            let out = cfg.output_dir.clone().ok_or_else(|| {
                (
                    stage("forward"),
                    pdt_core::Error::Config("--out required".into()),
                )
            })?;
            for (i, g) in illums.fields.iter().enumerate() {
                let u = solve_conductivity(&phantom, g, cfg.elliptic.tol)
                    .map_err(|e| (stage("forward"), e))?;
                io::write_scalar(&out, &format!("u{}", i + 1), &u)
                    .map_err(|e| (stage("forward"), e))?;
            }
            println!(
                "wrote {} solutions to {}",
                illums.fields.len(),
                out.display()
            );
            Ok(())
        }
        Command::Synthesize { args } => {
            let cfg = args.to_config().map_err(|e| (stage("config"), e))?;
            let (_, _, bundle, _) = prepare(&cfg).map_err(|e| (stage("synthesize"), e))?;
            let out = cfg.output_dir.clone().ok_or_else(|| {
                (
                    stage("synthesize"),
                    pdt_core::Error::Config("--out required".into()),
                )
            })?;
            bundle.save(&out).map_err(|e| (stage("synthesize"), e))?;
            println!(
                "wrote bundle (phantom {}, alpha {}, {}^2, min det {:.3e}) to {}",
                bundle.phantom_name,
                bundle.alpha,
                bundle.grid.nx,
                bundle.c0_measured * bundle.c0_measured,
                out.display()
            );
            Ok(())
        }
        Command::Reconstruct { args } => {
            let cfg = args.to_config().map_err(|e| (stage("config"), e))?;
            let out = run_experiment(&cfg).map_err(|e| (stage("reconstruct"), e))?;
            println!(
                "{}",
                serde_json::to_string_pretty(&out.report)
                    .map_err(|e| (stage("reconstruct"), pdt_core::Error::Json(e)))?
            );
            Ok(())
        }
        Command::Diagnose {
            args,
            refined_grid,
            corrupt,
        } => {
            let cfg = args.to_config().map_err(|e| (stage("config"), e))?;
            let report =
                run_diagnose(&cfg, refined_grid, corrupt).map_err(|e| (stage("diagnose"), e))?;
            println!(
                "{}",
                serde_json::to_string_pretty(&report)
                    .map_err(|e| (stage("diagnose"), pdt_core::Error::Json(e)))?
            );
            Ok(())
        }
        Command::Converge {
            args,
            grids,
            emit_gnuplot: gnuplot,
        } => {
            let cfg = args.to_config().map_err(|e| (stage("config"), e))?;
            let rows = convergence_study(&cfg, &grids).map_err(|e| (stage("converge"), e))?;
            println!("grid,h,err_logsigma_linf,order,quality");
            for r in &rows {
                println!(
                    "{},{:e},{:e},{},{}",
                    r.grid,
                    r.h,
                    r.err_logsigma_linf,
                    r.order.map_or(String::new(), |o| format!("{o:.3}")),
                    r.quality
                );
            }
            if gnuplot {
                if let Some(dir) = &cfg.output_dir {
                    let gp = emit_gnuplot(&dir.join("convergence.csv"), "h", "err_logsigma_linf")
                        .map_err(|e| (stage("converge"), e))?;
                    println!("wrote {}", gp.display());
                }
            }
            Ok(())
        }
        Command::Stability {
            args,
            levels,
            seed_errors,
            smooth_radius,
            emit_gnuplot: gnuplot,
        } => {
            let mut cfg = args.to_config().map_err(|e| (stage("config"), e))?;
            cfg.noise.levels = levels;
            cfg.noise.seed_errors = seed_errors;
            cfg.noise.smooth_radius = smooth_radius;
            let rows = stability_sweep(&cfg).map_err(|e| (stage("stability"), e))?;
            println!("level,seed_error,measured_distance,ratio_w1inf,ratio_h1");
            for r in &rows {
                println!(
                    "{:e},{:e},{:e},{:e},{:e}",
                    r.level, r.seed_error, r.measured_distance, r.ratio_w1inf, r.ratio_h1
                );
            }
            if gnuplot {
                if let Some(dir) = &cfg.output_dir {
                    let gp = emit_gnuplot(&dir.join("stability.csv"), "level", "ratio_w1inf")
                        .map_err(|e| (stage("stability"), e))?;
                    println!("wrote {}", gp.display());
                }
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err((stage, err)) => {
            eprintln!("error in stage '{stage}': {err}");
            ExitCode::FAILURE
        }
    }
}
