use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use forcegrasp_core::equilibrium::analyze;
use forcegrasp_core::gradcheck::{check_pose_gradients, check_stability_gradient, GradCheckConfig};
use forcegrasp_core::io::{read_contacts, read_json, read_scene, to_json, trace_csv, write_atomic, write_json};
use forcegrasp_core::keypoints::extract_keypoints;
use forcegrasp_core::optimize::{fit_keypoints, initialize_pose, run_pipeline, LossContext, LossWeights};
use forcegrasp_core::report::{run_batch, standard_suite, BatchScene};
use forcegrasp_core::synth::{generate_contacts, generate_scene, SceneSpec};
use forcegrasp_core::{Config, ContactStyle, GraspError, HandPose, Shape};

#[derive(Parser)]
#[command(
    name = "forcegrasp",
    version,
    about = "Force-aware grasp stability analysis and pose optimization"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// JSON config file; missing keys keep their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for synthetic scenes, contacts and random checks.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Gravity vector as x,y,z (m/s²).
    #[arg(long, global = true, allow_hyphen_values = true)]
    gravity: Option<String>,
    /// Friction coefficient.
    #[arg(long, global = true)]
    mu: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Stability energy, optimal friction and loss of a contact state.
    Analyze {
        /// Object file (or scene spec).
        #[arg(long)]
        scene: PathBuf,
        /// Contact state with one entry per object point.
        #[arg(long)]
        contacts: PathBuf,
        /// Output file; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Stability-optimal contact keypoints of a contact state.
    Keypoints {
        /// Object file (or scene spec).
        #[arg(long)]
        scene: PathBuf,
        /// Contact state with one entry per object point.
        #[arg(long)]
        contacts: PathBuf,
        /// Output file; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Runs registration, keypoint fitting and full optimization.
    Optimize {
        /// Object file (or scene spec).
        #[arg(long)]
        scene: PathBuf,
        /// Target contact state.
        #[arg(long)]
        contacts: PathBuf,
        /// Receives pose.json, keypoints.json, trace.csv and report.json.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Generates a synthetic object and contact state.
    Synth {
        /// sphere, box, cylinder or plate.
        #[arg(long, default_value = "sphere")]
        shape: String,
        /// Shape dimensions in meters: radius | sx,sy,sz | radius,height.
        #[arg(long, default_value = "0.05")]
        dims: String,
        /// Surface sample count.
        #[arg(long, default_value_t = 2048)]
        samples: usize,
        /// tripod, pinch, wrap or random.
        #[arg(long, default_value = "tripod")]
        style: String,
        /// Where to write the object.
        #[arg(long)]
        scene_out: PathBuf,
        /// Where to write the contact state.
        #[arg(long)]
        contacts_out: Option<PathBuf>,
    },
    /// One-hot bin encodings of forces read from a JSON number or array.
    EncodeForce(ForceArgs),
    /// Soft-argmax decoding of a JSON vector or array of vectors.
    DecodeForce(ForceArgs),
    /// Compares analytic gradients with central finite differences.
    Gradcheck {
        /// Object file or scene spec; defaults to a 5 cm sphere.
        #[arg(long)]
        scene: Option<PathBuf>,
        /// Contact state for the pose checks; generated (tripod) when absent.
        #[arg(long)]
        contacts: Option<PathBuf>,
        /// Accepted points per check.
        #[arg(long, default_value_t = 100)]
        points: usize,
    },
    /// Full pipeline over many scenes with a CSV summary.
    Batch {
        /// JSON list of {shape, sample_count, style}.
        #[arg(long, conflicts_with = "suite")]
        scenes: Option<PathBuf>,
        /// Use the built-in suite of this many scenes.
        #[arg(long)]
        suite: Option<usize>,
        /// Samples per scene for the built-in suite.
        #[arg(long, default_value_t = 1024)]
        samples: usize,
        /// Receives report.csv, curve.csv and timing.csv.
        #[arg(long)]
        out_dir: PathBuf,
    },
}

#[derive(Args)]
struct ForceArgs {
    /// JSON file; `-` reads standard input.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Inline JSON value instead of a file.
    #[arg(long, conflicts_with = "input", allow_hyphen_values = true)]
    value: Option<String>,
    /// JSON array of forces used to fit the log-force mean and spread.
    #[arg(long)]
    fit: Option<PathBuf>,
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Grasp(GraspError),
}

impl From<GraspError> for Failure {
    fn from(e: GraspError) -> Self {
        Failure::Grasp(e)
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Grasp(e.into())
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(Failure::Usage(msg.into()))
}

fn load_config(g: &Global) -> CliResult<Config> {
    let mut config = match &g.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(mu) = g.mu {
        config.mu = mu;
    }
    if let Some(text) = &g.gravity {
        let parts: Vec<f64> = text
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .or_else(|_| usage(format!("--gravity expects x,y,z, got '{text}'")))?;
        let [x, y, z] = parts[..] else {
            return usage(format!("--gravity expects three components, got '{text}'"));
        };
        config.gravity = [x, y, z];
    }
    if let Some(seed) = g.seed {
        config.optimizer.seed = seed;
    }
    config.validate()?;
    Ok(config)
}

fn emit(out: Option<&Path>, value: &impl serde::Serialize) -> CliResult<()> {
    match out {
        Some(p) => write_json(p, value)?,
        None => print!("{}", to_json(value)?),
    }
    Ok(())
}

fn parse_shape(kind: &str, dims: &str) -> CliResult<Shape> {
    let d: Vec<f64> = dims
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .or_else(|_| usage(format!("--dims expects comma-separated numbers, got '{dims}'")))?;
    let shape = match (kind, &d[..]) {
        ("sphere", [r]) => Shape::Sphere { radius: *r },
        ("box", [x, y, z]) => Shape::Box { size: [*x, *y, *z] },
        ("plate", [x, y, z]) => Shape::Plate { size: [*x, *y, *z] },
        ("cylinder", [r, h]) => Shape::Cylinder { radius: *r, height: *h },
        ("sphere" | "box" | "plate" | "cylinder", _) => {
            return usage(format!("wrong number of dimensions for {kind}: '{dims}'"))
        }
        _ => return usage(format!("unknown shape '{kind}'")),
    };
    Ok(shape)
}

fn read_force_input(args: &ForceArgs) -> CliResult<Value> {
    let text = match (&args.input, &args.value) {
        (_, Some(v)) => v.clone(),
        (Some(p), None) if p.as_os_str() == "-" => {
            std::io::read_to_string(std::io::stdin()).map_err(GraspError::from)?
        }
        (Some(p), None) => std::fs::read_to_string(p).map_err(GraspError::from)?,
        (None, None) => return usage("give --input or --value"),
    };
    Ok(serde_json::from_str(&text)?)
}

fn binning_config(config: &Config, args: &ForceArgs) -> CliResult<forcegrasp_core::force_codec::BinningConfig> {
    let mut binning = config.binning;
    if let Some(p) = &args.fit {
        let forces: Vec<f64> = read_json(p)?;
        binning.fit_log_stats(&forces)?;
    }
    Ok(binning)
}

fn encode_force(config: &Config, args: &ForceArgs) -> CliResult<()> {
    let cfg = binning_config(config, args)?;
    let binning = cfg.build()?;
    let input = read_force_input(args)?;
    let out = match input {
        Value::Array(items) => {
            let forces: Vec<f64> = serde_json::from_value(Value::Array(items))?;
            let rows = forces
                .iter()
                .map(|&f| binning.encode(f))
                .collect::<Result<Vec<_>, _>>()?;
            json!(rows)
        }
        other => {
            let f: f64 = serde_json::from_value(other)?;
            json!(binning.encode(f)?)
        }
    };
    emit(args.out.as_deref(), &out)
}

fn decode_force(config: &Config, args: &ForceArgs) -> CliResult<()> {
    let cfg = binning_config(config, args)?;
    let binning = cfg.build()?;
    let input = read_force_input(args)?;
    let nested = matches!(&input, Value::Array(items) if items.first().is_some_and(Value::is_array));
    let out = if nested {
        let rows: Vec<Vec<f64>> = serde_json::from_value(input)?;
        let forces = rows
            .iter()
            .map(|v| binning.decode(v, cfg.temperature))
            .collect::<Result<Vec<_>, _>>()?;
        json!(forces)
    } else {
        let v: Vec<f64> = serde_json::from_value(input)?;
        json!(binning.decode(&v, cfg.temperature)?)
    };
    emit(args.out.as_deref(), &out)
}

fn optimize(config: &Config, scene: &Path, contacts: &Path, out_dir: &Path) -> CliResult<()> {
    let object = read_scene(scene)?;
    let state = read_contacts(contacts, &object)?;
    let g = config.gravity();
    let keypoints = extract_keypoints(&object, &state, &config.keypoints, config.mu, &g)?;
    let result = run_pipeline(
        &config.hand_model(),
        &object,
        &state,
        keypoints,
        &config.contact,
        &config.optimizer,
        config.mu,
        &g,
        &config.evaluate,
    )?;
    std::fs::create_dir_all(out_dir).map_err(GraspError::from)?;
    write_json(&out_dir.join("pose.json"), &result.pose)?;
    write_json(&out_dir.join("keypoints.json"), &result.keypoints)?;
    write_atomic(&out_dir.join("trace.csv"), trace_csv(&result.trace).as_bytes())?;
    let report = json!({
        "stage1": result.report_stage1,
        "final": result.report,
        "registration_residual": result.registration.residual,
        "registration_degenerate": result.registration.degenerate,
        "diagnostic": result.trace.diagnostic,
    });
    write_json(&out_dir.join("report.json"), &report)?;
    println!(
        "residual {:.6e} -> {:.6e}, contacts {}, max penetration {:.3} mm",
        result.report_stage1.residual,
        result.report.residual,
        result.report.contact_count,
        result.report.max_penetration * 1e3
    );
    if let Some(d) = &result.trace.diagnostic {
        return Err(GraspError::NonFinite(d.clone()).into());
    }
    if !result.report.converged {
        return Err(GraspError::NonFinite("force-existence solver did not converge".into()).into());
    }
    Ok(())
}

fn gradcheck(config: &Config, scene: Option<&Path>, contacts: Option<&Path>, points: usize) -> CliResult<()> {
    let seed = config.optimizer.seed;
    let g = config.gravity();
    let object = match scene {
        Some(p) => read_scene(p)?,
        None => generate_scene(&SceneSpec {
            shape: Shape::Sphere { radius: 0.05 },
            sample_count: 384,
            seed,
        })?,
    };
    let state = match contacts {
        Some(p) => read_contacts(p, &object)?,
        None => generate_contacts(&object, ContactStyle::Tripod, seed, config.mu, &g, &config.contact_gen)?,
    };
    let check = GradCheckConfig {
        points,
        seed,
        ..Default::default()
    };
    let mut reports = vec![check_stability_gradient(&object, config.mu, &g, &check)?];
    let model = config.hand_model();
    let keypoints = extract_keypoints(&object, &state, &config.keypoints, config.mu, &g)?;
    let (stage1, _) = initialize_pose(&model, &HandPose::mean(), &keypoints)?;
    let (base, _) = fit_keypoints(&model, &stage1, &keypoints, &config.optimizer)?;
    let ctx = LossContext {
        model: &model,
        keypoints: Some(&keypoints),
        object: Some(&object),
        contact_target: Some(state.likelihood()),
        contact_params: config.contact,
    };
    reports.extend(check_pose_gradients(
        &base,
        &ctx,
        &LossWeights::from_config(&config.optimizer),
        &check,
    ));
    let pass = reports.iter().all(|r| r.ok(points));
    emit(None, &json!({ "pass": pass, "checks": reports }))?;
    if pass {
        Ok(())
    } else {
        Err(GraspError::NonFinite("gradient check failed".into()).into())
    }
}

fn batch(
    config: &Config,
    scenes: Option<&Path>,
    suite: Option<usize>,
    samples: usize,
    out_dir: &Path,
) -> CliResult<()> {
    let list: Vec<BatchScene> = match (scenes, suite) {
        (Some(p), _) => read_json(p)?,
        (None, Some(n)) => standard_suite(n, samples),
        (None, None) => return usage("give --scenes or --suite"),
    };
    let report = run_batch(&list, config, config.optimizer.seed)?;
    std::fs::create_dir_all(out_dir).map_err(GraspError::from)?;
    write_atomic(&out_dir.join("report.csv"), report.to_csv().as_bytes())?;
    write_atomic(&out_dir.join("curve.csv"), report.curve_csv().as_bytes())?;
    write_atomic(&out_dir.join("timing.csv"), report.timing_csv().as_bytes())?;
    let show = |x: Option<f64>| x.map_or_else(|| "n/a".to_string(), |v| format!("{v:.6e}"));
    println!(
        "{} scenes, {} failed; mean residual stage I {}, final {}, keypoint-free {}",
        report.rows.len(),
        report.failures(),
        show(report.mean_residual_stage1()),
        show(report.mean_residual()),
        show(report.mean_residual_baseline())
    );
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    let config = load_config(&cli.global)?;
    let g = config.gravity();
    match cli.command {
        Command::Analyze { scene, contacts, out } => {
            let object = read_scene(&scene)?;
            let state = read_contacts(&contacts, &object)?;
            let a = analyze(&object, &state, config.mu, &g)?;
            emit(out.as_deref(), &a)?;
            if !a.converged {
                return Err(GraspError::NonFinite("stability solver did not converge".into()).into());
            }
        }
        Command::Keypoints { scene, contacts, out } => {
            let object = read_scene(&scene)?;
            let state = read_contacts(&contacts, &object)?;
            let kp = extract_keypoints(&object, &state, &config.keypoints, config.mu, &g)?;
            emit(out.as_deref(), &kp)?;
        }
        Command::Optimize {
            scene,
            contacts,
            out_dir,
        } => optimize(&config, &scene, &contacts, &out_dir)?,
        Command::Synth {
            shape,
            dims,
            samples,
            style,
            scene_out,
            contacts_out,
        } => {
            let shape = parse_shape(&shape, &dims)?;
            let style: ContactStyle = style.parse().or_else(|e: GraspError| usage(e.to_string()))?;
            let seed = config.optimizer.seed;
            let object = generate_scene(&SceneSpec {
                shape,
                sample_count: samples,
                seed,
            })?;
            write_json(&scene_out, &object)?;
            if let Some(p) = contacts_out {
                let state = generate_contacts(&object, style, seed, config.mu, &g, &config.contact_gen)?;
                write_json(&p, &state)?;
            }
        }
        Command::EncodeForce(args) => encode_force(&config, &args)?,
        Command::DecodeForce(args) => decode_force(&config, &args)?,
        Command::Gradcheck {
            scene,
            contacts,
            points,
        } => gradcheck(&config, scene.as_deref(), contacts.as_deref(), points)?,
        Command::Batch {
            scenes,
            suite,
            samples,
            out_dir,
        } => batch(&config, scenes.as_deref(), suite, samples, &out_dir)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Grasp(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
