mod report;

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use gtf_core::gtf::{gtf_ate, ExecOptions, GtfConfig};
use gtf_core::noise::{perturb_image_set, NoiseSpec};
use gtf_core::oracle::{
    entropy_reduction, sample_perturbation, synthetic_trajectory, ErrorScale, LinearProblem, MockPipeline,
    MockPipelineSpec,
};
use gtf_core::runner::{run_pipeline, Params, Pipeline, PipelineAdapter};
use gtf_core::sim3::ate;
use gtf_core::trajectory::{Trajectory, DEFAULT_MAX_TIME_OFFSET};
use gtf_core::tuner::{noise_ablation, sweep, Spacing, SweepDocument, SweepGrid, NOISE_UNITS};
use gtf_core::GrayImage;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "gtf", version, about = "Ground-truth-free trajectory evaluation and tuning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sim(3)-aligned ATE of an estimate against a reference trajectory.
    Ate {
        estimate: PathBuf,
        reference: PathBuf,
        #[arg(long, default_value_t = DEFAULT_MAX_TIME_OFFSET)]
        max_time_offset: f64,
    },
    /// Writes a Gaussian-noise-augmented copy of an image directory.
    Noise {
        input: PathBuf,
        output: PathBuf,
        #[arg(long)]
        delta_sigma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0)]
        run_index: u64,
        /// Saturate instead of clamping explicitly (8-bit output either way).
        #[arg(long)]
        no_clamp: bool,
    },
    /// Runs an adapter once and prints the run record.
    Run {
        adapter: PathBuf,
        images: PathBuf,
        #[arg(long = "param", value_parser = parse_param)]
        params: Vec<(String, f64)>,
        #[arg(long, default_value_t = 0)]
        run_index: u64,
    },
    /// GTF ATE of one parameter assignment.
    Gtf {
        adapter: PathBuf,
        images: PathBuf,
        #[arg(long = "param", value_parser = parse_param)]
        params: Vec<(String, f64)>,
        #[command(flatten)]
        gtf: GtfArgs,
        /// Result document path; stdout when absent.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// One-dimensional sweep scored by GTF ATE.
    Sweep(SweepArgs),
    /// Sweep repeated for several input noise levels.
    Ablation {
        #[command(flatten)]
        sweep: SweepArgs,
        /// Noise levels, strictly increasing.
        #[arg(long, value_delimiter = ',', required = true)]
        delta_sigmas: Vec<f64>,
    },
    /// Regenerates tables, plots and correlations from a stored sweep document.
    Report {
        document: PathBuf,
        /// Directory for regenerated `results.csv` and `sweep.svg`.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Multiplier applied to ATE values in the improvement table.
        #[arg(long, default_value_t = 1.0)]
        unit_scale: f64,
    },
    /// Linear-Gaussian sensitivity oracle.
    #[command(subcommand)]
    Oracle(OracleCommand),
    /// Executable form of the mock pipeline, for use inside adapters.
    #[command(hide = true)]
    MockPipeline {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        param: f64,
        #[arg(long, default_value_t = 0)]
        run_index: u64,
    },
}

#[derive(Subcommand)]
enum OracleCommand {
    /// Entropy reduction E(p, q) between two problem files.
    Entropy { p: PathBuf, q: PathBuf },
    /// Monte Carlo covariance of the clean/perturbed estimate difference.
    Sample {
        problem: PathBuf,
        #[arg(long)]
        delta_sigma2: f64,
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Writes a mock pipeline config, a matching adapter, ground truth and
    /// placeholder images into a directory.
    Mock(MockArgs),
}

#[derive(Args, Clone)]
struct GtfArgs {
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long, default_value_t = 3)]
    k_delta: usize,
    #[arg(long)]
    delta_sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    parallelism: usize,
    #[arg(long, default_value_t = DEFAULT_MAX_TIME_OFFSET)]
    max_time_offset: f64,
    /// Keep materialised noisy image sets under this directory.
    #[arg(long)]
    work_dir: Option<PathBuf>,
}

impl GtfArgs {
    fn config(&self) -> Result<GtfConfig> {
        let mut cfg = GtfConfig::new(self.k, self.k_delta, NoiseSpec::new(self.delta_sigma, self.seed)?);
        cfg.max_time_offset = self.max_time_offset;
        cfg.validate()?;
        Ok(cfg)
    }

    fn exec(&self) -> ExecOptions {
        ExecOptions {
            parallelism: self.parallelism,
            keep_noisy_images: self.work_dir.is_some(),
            work_dir: self.work_dir.clone(),
        }
    }
}

#[derive(Copy, Clone, ValueEnum)]
enum SpacingArg {
    Linear,
    Log,
}

#[derive(Args, Clone)]
struct SweepArgs {
    adapter: PathBuf,
    images: PathBuf,
    /// Name of the swept parameter.
    #[arg(long)]
    param_name: String,
    /// Explicit grid values (otherwise --min/--max/--count).
    #[arg(long, value_delimiter = ',', conflicts_with_all = ["min", "max", "count"])]
    values: Vec<f64>,
    #[arg(long)]
    min: Option<f64>,
    #[arg(long)]
    max: Option<f64>,
    #[arg(long)]
    count: Option<usize>,
    #[arg(long, value_enum, default_value = "linear")]
    spacing: SpacingArg,
    #[arg(long)]
    nominal: f64,
    /// Parameters held fixed during the sweep.
    #[arg(long = "fixed", value_parser = parse_param)]
    fixed: Vec<(String, f64)>,
    #[command(flatten)]
    gtf: GtfArgs,
    #[arg(long)]
    ground_truth: Option<PathBuf>,
    /// CSV with columns `value,metric`, one row per grid value.
    #[arg(long)]
    external_metric: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct MockArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value = "v")]
    param_name: String,
    #[arg(long, default_value_t = 100)]
    poses: usize,
    #[arg(long, default_value_t = 4)]
    images: usize,
    /// Constant per-pose error; overrides the quadratic curve.
    #[arg(long)]
    constant: Option<f64>,
    #[arg(long, default_value_t = 0.01)]
    minimum: f64,
    #[arg(long, default_value_t = 1.0)]
    optimum: f64,
    #[arg(long, default_value_t = 0.01)]
    curvature: f64,
    /// Measure distance to the optimum in log space.
    #[arg(long)]
    log_domain: bool,
    /// Metres of pose error per grey level of input noise.
    #[arg(long, default_value_t = 0.002)]
    gain: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 60.0)]
    timeout: f64,
}

fn parse_param(s: &str) -> Result<(String, f64), String> {
    let (name, value) = s.split_once('=').ok_or_else(|| format!("expected NAME=VALUE, got '{s}'"))?;
    let value: f64 = value.parse().map_err(|_| format!("'{value}' is not a number"))?;
    if name.is_empty() {
        return Err("parameter name is empty".into());
    }
    Ok((name.to_string(), value))
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

/// Adapter file: an external pipeline described in TOML, or a mock pipeline
/// config in JSON (run in-process).
fn load_pipeline(path: &Path) -> Result<Box<dyn Pipeline>> {
    if path.extension().is_some_and(|e| e == "json") {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mock: MockPipeline = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        Ok(Box::new(mock))
    } else {
        Ok(Box::new(PipelineAdapter::load(path)?))
    }
}

fn grid(args: &SweepArgs) -> Result<SweepGrid> {
    let spacing = match args.spacing {
        SpacingArg::Linear => Spacing::Linear,
        SpacingArg::Log => Spacing::Log,
    };
    let grid = if !args.values.is_empty() {
        SweepGrid::from_values(&args.param_name, args.values.clone(), spacing, args.nominal)?
    } else {
        match (args.min, args.max, args.count) {
            (Some(min), Some(max), Some(count)) => {
                SweepGrid::spaced(&args.param_name, min, max, count, spacing, args.nominal)?
            }
            _ => bail!("give either --values or all of --min, --max and --count"),
        }
    };
    Ok(grid)
}

fn run_sweep(args: &SweepArgs) -> Result<()> {
    let pipeline = load_pipeline(&args.adapter)?;
    let grid = grid(args)?;
    let cfg = args.gtf.config()?;
    let ground_truth = args.ground_truth.as_deref().map(Trajectory::read).transpose()?;
    let fixed: Params = args.fixed.iter().cloned().collect();
    let mut points = sweep(
        pipeline.as_ref(),
        &grid,
        &fixed,
        &args.images,
        &cfg,
        ground_truth.as_ref(),
        &args.gtf.exec(),
    )?;
    if let Some(path) = &args.external_metric {
        report::attach_external_metric(&mut points, path)?;
    }
    let doc = SweepDocument {
        grid,
        config: cfg,
        noise_units: NOISE_UNITS.into(),
        points,
    };
    fs::create_dir_all(&args.out_dir)?;
    write_json(&args.out_dir.join("sweep.json"), &doc)?;
    report::write_outputs(&doc, &args.out_dir)?;
    print!("{}", report::summary(&doc, 1.0));
    Ok(())
}

fn run_ablation(args: &SweepArgs, delta_sigmas: &[f64]) -> Result<()> {
    let pipeline = load_pipeline(&args.adapter)?;
    let grid = grid(args)?;
    let cfg = args.gtf.config()?;
    let ground_truth = args.ground_truth.as_deref().map(Trajectory::read).transpose()?;
    let fixed: Params = args.fixed.iter().cloned().collect();
    let curves = noise_ablation(
        pipeline.as_ref(),
        &grid,
        &fixed,
        &args.images,
        &cfg,
        delta_sigmas,
        ground_truth.as_ref(),
        &args.gtf.exec(),
    )?;
    fs::create_dir_all(&args.out_dir)?;
    write_json(&args.out_dir.join("ablation.json"), &curves)?;
    report::write_ablation(&grid, &curves, &args.out_dir)?;
    for curve in &curves {
        let best = curve.optimum.map(|i| curve.points[i].value);
        println!(
            "delta_sigma {}: optimum {}, coefficient of variation {}",
            curve.delta_sigma,
            best.map_or("-".into(), |v| v.to_string()),
            curve.coefficient_of_variation.map_or("-".into(), |c| format!("{c:.4}"))
        );
    }
    Ok(())
}

fn write_mock(args: &MockArgs) -> Result<()> {
    fs::create_dir_all(&args.out_dir)?;
    let out_dir = fs::canonicalize(&args.out_dir)?;
    let error_scale = match args.constant {
        Some(value) => ErrorScale::Constant { value },
        None => ErrorScale::Quadratic {
            minimum: args.minimum,
            optimum: args.optimum,
            curvature: args.curvature,
            log_domain: args.log_domain,
        },
    };
    let truth = synthetic_trajectory(args.poses);
    let mock = MockPipeline::new(
        MockPipelineSpec {
            true_trajectory: truth.clone(),
            error_scale,
            input_noise_gain: args.gain,
            seed: args.seed,
        },
        &args.param_name,
    );
    let config = out_dir.join("mock.json");
    write_json(&config, &mock)?;
    truth.write(&out_dir.join("ground_truth.txt"))?;
    let images = out_dir.join("images");
    fs::create_dir_all(&images)?;
    for i in 0..args.images {
        GrayImage::filled(16, 16, 128).save(&images.join(format!("frame_{i:04}.png")))?;
    }
    let exe = std::env::current_exe()?;
    let adapter = PipelineAdapter::new(
        format!(
            "{} mock-pipeline --config {} --images {{images}} --output {{output}} --param {{param:{}}} --run-index {{run_index}}",
            exe.display(),
            config.display(),
            args.param_name
        ),
        args.timeout,
    );
    fs::write(out_dir.join("adapter.toml"), adapter.to_toml())?;
    println!("wrote {}", out_dir.display());
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Ate {
            estimate,
            reference,
            max_time_offset,
        } => {
            let result = ate(&Trajectory::read(&estimate)?, &Trajectory::read(&reference)?, max_time_offset)?;
            print_json(&result)
        }
        Command::Noise {
            input,
            output,
            delta_sigma,
            seed,
            run_index,
            no_clamp,
        } => {
            let mut spec = NoiseSpec::new(delta_sigma, seed)?;
            spec.clamp = !no_clamp;
            let count = perturb_image_set(&input, &output, &spec, run_index)?;
            println!("{count} images written to {}", output.display());
            Ok(())
        }
        Command::Run {
            adapter,
            images,
            params,
            run_index,
        } => {
            let adapter = PipelineAdapter::load(&adapter)?;
            let record = run_pipeline(&adapter, &params.into_iter().collect(), &images, run_index)?;
            print_json(&record)
        }
        Command::Gtf {
            adapter,
            images,
            params,
            gtf,
            output,
        } => {
            let pipeline = load_pipeline(&adapter)?;
            let result = gtf_ate(pipeline.as_ref(), &params.into_iter().collect(), &images, &gtf.config()?, &gtf.exec())?;
            match output {
                Some(path) => {
                    write_json(&path, &result)?;
                    println!("gtf_ate {} over {} pairs", result.gtf_ate, result.valid_pair_count);
                    Ok(())
                }
                None => print_json(&result),
            }
        }
        Command::Sweep(args) => run_sweep(&args),
        Command::Ablation { sweep, delta_sigmas } => run_ablation(&sweep, &delta_sigmas),
        Command::Report {
            document,
            out_dir,
            unit_scale,
        } => {
            let text = fs::read_to_string(&document).with_context(|| format!("reading {}", document.display()))?;
            let doc: SweepDocument = serde_json::from_str(&text)?;
            if let Some(dir) = out_dir {
                fs::create_dir_all(&dir)?;
                report::write_outputs(&doc, &dir)?;
            }
            print!("{}", report::summary(&doc, unit_scale));
            Ok(())
        }
        Command::Oracle(OracleCommand::Entropy { p, q }) => {
            print_json(&entropy_reduction(&LinearProblem::load(&p)?, &LinearProblem::load(&q)?)?)
        }
        Command::Oracle(OracleCommand::Sample {
            problem,
            delta_sigma2,
            trials,
            seed,
        }) => {
            let p = LinearProblem::load(&problem)?;
            let study = sample_perturbation(&p, delta_sigma2, trials, seed)?;
            print_json(&report::SampleReport::new(&study, trials))
        }
        Command::Oracle(OracleCommand::Mock(args)) => write_mock(&args),
        Command::MockPipeline {
            config,
            images,
            output,
            param,
            run_index,
        } => {
            let text = fs::read_to_string(&config).with_context(|| format!("reading {}", config.display()))?;
            let mock: MockPipeline = serde_json::from_str(&text)?;
            mock.trajectory_for(param, &images, run_index)?.write(&output)?;
            Ok(())
        }
    }
}
