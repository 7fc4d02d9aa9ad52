//! `twinmpm` command-line front end.

mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::mpsc::sync_channel;
use std::time::{Duration, Instant};

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;
use twinmpm::diff::{gradient_check, GradOptions, FD_STEP};
use twinmpm::identify::{identify_cmaes_with, identify_offline_with, online_loop_with, Termination};
use twinmpm::io::{load_scene, read_frames, synth_generate, trajectory_frames, write_frames, FrameReader, LoadedScene, ObsFormat};
use twinmpm::kernel::{rollout, ExecMode, RolloutOptions};
use twinmpm::loss::OfflineObjective;
use twinmpm::{Error, MaterialParams};

use report::{theta_json, Report};

#[derive(Parser, Debug)]
#[command(name = "twinmpm", version, about = "Differentiable MPM simulation and material identification")]
struct Cli {
    /// Serial reference execution; outputs are bit-identical across runs and
    /// reports omit wall-clock times.
    #[arg(long, global = true)]
    deterministic: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Method {
    Grad,
    Cmaes,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Binary,
    Text,
}

impl From<Format> for ObsFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Binary => ObsFormat::Binary,
            Format::Text => ObsFormat::Text,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the scene forward and export particle positions per frame.
    Simulate {
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override material parameters, e.g. `E=1e5,y=inf`.
        #[arg(long)]
        theta: Option<String>,
        #[arg(long, value_enum, default_value = "binary")]
        format: Format,
    },
    /// Identify material parameters from an observation file.
    Identify {
        scene: PathBuf,
        obs: PathBuf,
        #[arg(long, value_enum, default_value = "grad")]
        method: Method,
        /// NDJSON run report.
        #[arg(long)]
        out: PathBuf,
    },
    /// Replay an observation stream through the online twin.
    Online {
        scene: PathBuf,
        stream: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Disable online correction (ablation baseline).
        #[arg(long)]
        no_optimize: bool,
        /// Delay between replayed frames.
        #[arg(long, default_value_t = 0)]
        frame_interval_ms: u64,
    },
    /// Compare adjoint gradients with central finite differences.
    Gradcheck {
        scene: PathBuf,
        obs: PathBuf,
        #[arg(long, default_value_t = 1e-3)]
        tol: f64,
        /// Finite-difference step in normalized parameter space.
        #[arg(long, default_value_t = FD_STEP)]
        step: f64,
    },
    /// Generate synthetic observations from a ground-truth rollout.
    Synth {
        scene: PathBuf,
        /// Ground-truth parameters, e.g. `E=1e5,nu=0.3,rho=1000,y=inf`.
        #[arg(long)]
        theta: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "binary")]
        format: Format,
    },
}

/// Failure carrying the process exit status.
struct Failure {
    code: u8,
    diagnostic: serde_json::Value,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let (code, kind, key) = match &e {
            Error::Validation { key, .. } => (1, "validation", Some(key.clone())),
            Error::Format(_) => (1, "format", None),
            Error::Io(_) => (1, "io", None),
            Error::Domain(_) => (2, "domain", None),
            Error::Numerical { .. } => (2, "numerical", None),
        };
        let mut d = json!({"error": kind, "message": e.to_string()});
        if let Some(k) = key {
            d["key"] = json!(k);
        }
        if let Error::Numerical { step, particle, .. } = &e {
            d["step"] = json!(step);
            d["particle"] = json!(particle);
        }
        Failure { code, diagnostic: d }
    }
}

type CliResult = std::result::Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", f.diagnostic);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: &Cli) -> CliResult {
    configure_threads()?;
    let mode = if cli.deterministic {
        ExecMode::Reference
    } else {
        ExecMode::Parallel
    };
    let clock = (!cli.deterministic).then(Instant::now);
    match &cli.command {
        Command::Simulate {
            scene,
            out,
            theta,
            format,
        } => simulate(scene, out, theta.as_deref(), (*format).into(), mode),
        Command::Identify { scene, obs, method, out } => identify(scene, obs, *method, out, mode, clock),
        Command::Online {
            scene,
            stream,
            out,
            no_optimize,
            frame_interval_ms,
        } => online(scene, stream, out, *no_optimize, *frame_interval_ms, mode, clock),
        Command::Gradcheck { scene, obs, tol, step } => gradcheck(scene, obs, *tol, *step, mode),
        Command::Synth {
            scene,
            theta,
            seed,
            out,
            format,
        } => synth(scene, theta, *seed, out, (*format).into(), mode),
    }
}

/// Honors `MPM_THREADS` for the worker pool size.
fn configure_threads() -> CliResult {
    if let Ok(v) = std::env::var("MPM_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::validation("MPM_THREADS", format!("`{v}` is not a positive integer")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::validation("MPM_THREADS", e.to_string()))?;
    }
    Ok(())
}

fn load(path: &Path, mode: ExecMode) -> Result<LoadedScene, Failure> {
    let mut s = load_scene(path)?;
    s.optim.mode = mode;
    Ok(s)
}

/// Applies `key=value` overrides (`E`, `nu`, `rho`, `y`) to `base`.
fn parse_theta(spec: &str, base: MaterialParams) -> Result<MaterialParams, Error> {
    let mut t = base;
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| Error::validation("--theta", format!("`{part}` is not key=value")))?;
        let v: f64 = match v.trim() {
            "inf" | "+inf" => f64::INFINITY,
            s => s
                .parse()
                .map_err(|_| Error::validation(format!("--theta.{k}"), format!("`{s}` is not a number")))?,
        };
        match k.trim() {
            "E" => t.youngs_modulus = v,
            "nu" => t.poissons_ratio = v,
            "rho" => t.density = v,
            "y" => t.yield_stress = v,
            other => return Err(Error::validation(format!("--theta.{other}"), "unknown parameter (use E, nu, rho, y)")),
        }
    }
    t.validate()?;
    Ok(t)
}

fn simulate(scene: &Path, out: &Path, theta: Option<&str>, format: ObsFormat, mode: ExecMode) -> CliResult {
    let loaded = load(scene, mode)?;
    let mut scene = loaded.scene;
    if let Some(spec) = theta {
        scene = scene.with_params(parse_theta(spec, scene.params)?);
    }
    let opts = RolloutOptions {
        mode,
        ..Default::default()
    };
    let (traj, _) = rollout(&scene, scene.total_steps(), &opts)?;
    let frames = trajectory_frames(&scene, &traj);
    write_frames(out, &frames, format)?;
    println!(
        "{}",
        json!({"frames": frames.len(), "particles": scene.particles.len(), "out": out.display().to_string()})
    );
    Ok(())
}

fn synth(scene: &Path, theta: &str, seed: u64, out: &Path, format: ObsFormat, mode: ExecMode) -> CliResult {
    let loaded = load(scene, mode)?;
    let truth = parse_theta(theta, loaded.scene.params)?;
    let frames = synth_generate(
        &loaded.scene,
        &truth,
        &loaded.synth,
        &loaded.cameras,
        loaded.splat_radius_px,
        seed,
        mode,
    )?;
    write_frames(out, &frames, format)?;
    println!(
        "{}",
        json!({"frames": frames.len(), "theta": theta_json(&truth), "seed": seed, "out": out.display().to_string()})
    );
    Ok(())
}

fn identify(scene: &Path, obs: &Path, method: Method, out: &Path, mode: ExecMode, clock: Option<Instant>) -> CliResult {
    let loaded = load(scene, mode)?;
    let frames = read_frames(obs)?;
    let mut report = Report::create(out, clock)?;
    let method_name = match method {
        Method::Grad => "grad",
        Method::Cmaes => "cmaes",
    };
    let mut on_iterate = |it: &twinmpm::identify::Iterate| {
        report.line(json!({
            "record": "iteration",
            "method": method_name,
            "iteration": it.iteration,
            "theta": theta_json(&it.theta),
            "loss": report::loss_json(&it.loss),
            "step_size": it.step_size,
        }));
    };
    let result = match method {
        Method::Grad => identify_offline_with(&loaded.scene, &frames, &loaded.optim, &mut on_iterate),
        Method::Cmaes => identify_cmaes_with(&loaded.scene, &frames, &loaded.optim, &mut on_iterate),
    }?;
    let termination = match &result.termination {
        Termination::Completed => json!("completed"),
        Termination::Aborted(msg) => json!({"aborted": msg}),
    };
    let summary = json!({
        "record": "result",
        "method": method_name,
        "theta": theta_json(&result.theta),
        "best_loss": result.best_loss,
        "best_iteration": result.best_iteration,
        "iterations": result.history.len().saturating_sub(1),
        "termination": termination,
    });
    report.line(summary.clone());
    report.finish()?;
    println!("{summary}");
    match result.termination {
        Termination::Completed => Ok(()),
        Termination::Aborted(msg) => Err(Failure {
            code: 2,
            diagnostic: json!({"error": "numerical", "message": format!("optimization aborted: {msg}")}),
        }),
    }
}

#[allow(clippy::too_many_arguments)]
fn online(
    scene: &Path,
    stream: &Path,
    out: &Path,
    no_optimize: bool,
    frame_interval_ms: u64,
    mode: ExecMode,
    clock: Option<Instant>,
) -> CliResult {
    let loaded = load(scene, mode)?;
    let mut ocfg = loaded.online.clone();
    if no_optimize {
        ocfg.enabled = false;
    }
    let reader = FrameReader::open(stream)?;
    let (tx, rx) = sync_channel(8);
    let interval = Duration::from_millis(frame_interval_ms);
    let feeder = std::thread::spawn(move || {
        for frame in reader {
            let stop = frame.is_err();
            if tx.send(frame).is_err() || stop {
                break;
            }
            if !interval.is_zero() {
                std::thread::sleep(interval);
            }
        }
    });
    let mut report = Report::create(out, clock)?;
    let result = online_loop_with(&loaded.scene, rx, &loaded.optim, &ocfg, &mut |r| {
        report.line(json!({
            "record": "frame",
            "frame": r.frame,
            "dist": r.dist,
            "mask": r.mask,
            "gap": r.gap,
            "mean_speed": r.mean_speed,
            "gated": r.gated,
            "corrected": r.corrected,
            "theta": theta_json(&r.theta),
            "note": r.note,
        }));
    });
    // the channel closes when the loop drops its receiver
    let _ = feeder.join();
    let result = result?;
    let quarter = result.records.last().map_or(0, |r| r.frame - r.frame / 4);
    let (dist, mask) = result.mean_losses_from(quarter);
    let summary = json!({
        "record": "result",
        "optimize": ocfg.enabled,
        "frames": result.records.len(),
        "corrections": result.theta_history.len(),
        "theta": theta_json(&result.records.last().map_or(loaded.scene.params, |r| r.theta)),
        "final_quarter_from": quarter,
        "final_quarter_mean_dist": report::finite_or_null(dist),
        "final_quarter_mean_mask": report::finite_or_null(mask),
    });
    report.line(summary.clone());
    report.finish()?;
    println!("{summary}");
    Ok(())
}

fn gradcheck(scene: &Path, obs: &Path, tol: f64, step: f64, mode: ExecMode) -> CliResult {
    let loaded = load(scene, mode)?;
    let frames = read_frames(obs)?;
    let scene = &loaded.scene;
    if frames.len() != scene.frames {
        return Err(Error::validation(
            "frames",
            format!("observation has {} frames, scene simulates {}", frames.len(), scene.frames),
        )
        .into());
    }
    let frozen = loaded.optim.effective_frozen(&scene.params)?;
    let objective = OfflineObjective {
        frames: &frames,
        weights: scene.weights,
        substeps_per_frame: scene.substeps_per_frame,
    };
    let opts = GradOptions {
        mode,
        checkpoint_stride: loaded.optim.checkpoint_stride,
        frozen,
    };
    let check = gradient_check(scene, &objective, &opts, step)?;
    println!("loss {:.12e}", check.loss);
    println!("{:<6} {:>7} {:>22} {:>22} {:>12}", "param", "frozen", "adjoint", "finite_diff", "rel_error");
    for r in &check.rows {
        let fd = r.finite_difference.map_or("unavailable".to_string(), |v| format!("{v:.12e}"));
        let re = r.relative_error.map_or("-".to_string(), |v| format!("{v:.3e}"));
        println!(
            "{:<6} {:>7} {:>22.12e} {:>22} {:>12}",
            r.name,
            if r.frozen { "yes" } else { "no" },
            r.adjoint,
            fd,
            re
        );
    }
    let max = check.max_relative_error();
    let pass = check.passes(tol);
    if check.near_kink {
        println!("note: a particle came within the kink band of the yield surface; comparison skipped");
    }
    println!("max_relative_error {max:.3e} tol {tol:e} {}", if pass { "PASS" } else { "FAIL" });
    if pass {
        Ok(())
    } else {
        Err(Failure {
            code: 3,
            diagnostic: json!({"error": "gradcheck", "message": format!("max relative error {max:e} exceeds {tol:e}"), "max_relative_error": report::finite_or_null(max)}),
        })
    }
}
