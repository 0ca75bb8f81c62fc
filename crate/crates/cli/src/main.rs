use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use crowdcast::baselines::{
    bench_preprocess, constant_velocity_predict, linear_regression_predict, time_per_sequence, PreprocessMode, TimingStats,
};
use crowdcast::config::{parse_config, ModelConfig, TrainConfig};
use crowdcast::dataio::{
    load_ego_poses, load_trajectories, make_windows, observation_windows, save_trajectories, to_global, SceneWindow,
    TrajectoryDataset,
};
use crowdcast::evalm::{reports_to_csv, reports_to_table, Selection};
use crowdcast::gauss::{write_distribution_rows, DISTRIBUTION_CSV_HEADER};
use crowdcast::ndnum::{Checkpoint, Tape};
use crowdcast::seqnet::{model_forward, ModelParams};
use crowdcast::synth::{generate_scene_with, ForceConfig, Template, DEFAULT_FRAMES};
use crowdcast::trainer::{evaluate, evaluate_deterministic, train_with, DEFAULT_SAMPLES, LOG_CSV_HEADER};

/// Pedestrian trajectory prediction: synthesise data, train, evaluate, predict, benchmark.
#[derive(Parser, Debug)]
#[command(name = "crowdcast", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic crowd scenes with a social-force simulator.
    Gen(GenArgs),
    /// Train a model and write checkpoints plus a per-epoch log.
    Train(TrainArgs),
    /// Best-of-N evaluation against the linear and constant-velocity baselines.
    Eval(EvalArgs),
    /// Per-step Gaussian parameters for every observation window of a file.
    Predict(PredictArgs),
    /// Time interaction pre-processing: pairwise offsets vs. graph construction.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
struct SeedArg {
    /// Random seed; falls back to CROWDCAST_SEED, then 0.
    #[arg(long, env = "CROWDCAST_SEED", default_value_t = 0)]
    seed: u64,
}

/// How trajectory files are read.
#[derive(Args, Debug)]
struct IngestArgs {
    /// Trajectory file, or a directory whose `*.txt` files are all loaded.
    #[arg(long)]
    data: PathBuf,
    /// Keep every k-th frame (use 4 for 10 Hz sources).
    #[arg(long, default_value_t = 1)]
    downsample: usize,
    /// Ego-vehicle pose file; converts a single sensor-frame trajectory file to world coordinates.
    #[arg(long)]
    ego_poses: Option<PathBuf>,
    /// Step between consecutive window start frames.
    #[arg(long, default_value_t = 1)]
    stride: usize,
}

#[derive(Args, Debug)]
struct GenArgs {
    /// Scene template(s), comma separated; scenes cycle through them.
    #[arg(long, value_delimiter = ',', default_value = "crossing")]
    template: Vec<Template>,
    /// Pedestrians per scene.
    #[arg(long, default_value_t = 6)]
    n: usize,
    /// Number of scenes.
    #[arg(long, default_value_t = 10)]
    scenes: u64,
    /// Frames per scene at 2.5 Hz.
    #[arg(long, default_value_t = DEFAULT_FRAMES)]
    frames: usize,
    #[command(flatten)]
    seed: SeedArg,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    ingest: IngestArgs,
    /// Plain-text `key = value` configuration; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Per-epoch multiplicative learning-rate decay (1 keeps it constant).
    #[arg(long)]
    lr_decay: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    val_fraction: Option<f64>,
    /// Write `epoch_NNNN.ckpt` every this many epochs (0 disables).
    #[arg(long)]
    checkpoint_interval: Option<usize>,
    /// Global gradient-norm clip (0 disables).
    #[arg(long)]
    grad_clip: Option<f64>,
    /// Observation length.
    #[arg(long)]
    t_obs: Option<usize>,
    /// Prediction horizon.
    #[arg(long)]
    horizon: Option<usize>,
    /// Seed; overrides the config file. Falls back to CROWDCAST_SEED.
    #[arg(long, env = "CROWDCAST_SEED")]
    seed: Option<u64>,
    /// Directory for checkpoints and the training log.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    ingest: IngestArgs,
    /// Samples drawn per window; the closest one is scored.
    #[arg(long, default_value_t = DEFAULT_SAMPLES)]
    n_samples: usize,
    /// Pick the best sample separately for ADE and for FDE.
    #[arg(long)]
    select_per_metric: bool,
    /// Also write the report as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[command(flatten)]
    seed: SeedArg,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Trajectory file to predict from.
    #[arg(long)]
    input: PathBuf,
    /// Expected prediction horizon; must match the checkpoint.
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long, default_value_t = 1)]
    stride: usize,
    #[arg(long, default_value_t = 1)]
    downsample: usize,
    #[arg(long)]
    ego_poses: Option<PathBuf>,
    /// Output CSV (standard output if omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// graph, direct, or both.
    #[arg(long, default_value = "both")]
    mode: String,
    #[arg(long, default_value_t = 50)]
    n_peds: usize,
    /// Timed passes over all sequences.
    #[arg(long, default_value_t = 20)]
    repeats: usize,
    /// Number of synthetic sequences.
    #[arg(long, default_value_t = 20)]
    sequences: usize,
    /// Frames per sequence.
    #[arg(long, default_value_t = 20)]
    seq_len: usize,
    #[command(flatten)]
    seed: SeedArg,
    /// Output CSV (standard output if omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

/// A failure caused by the invocation or its inputs, as opposed to a bug.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct UserError(String);

fn user(msg: impl Into<String>) -> anyhow::Error {
    UserError(msg.into()).into()
}

fn is_user_error(err: &anyhow::Error) -> bool {
    use crowdcast::Error as E;
    err.chain().any(|cause| {
        cause.is::<UserError>()
            || cause.is::<std::io::Error>()
            || cause.is::<crowdcast::dataio::DataError>()
            || cause.is::<crowdcast::config::ConfigError>()
            || matches!(cause.downcast_ref::<E>(), Some(E::Data(_) | E::Config(_) | E::Input(_) | E::Mismatch(_) | E::Io { .. }))
    })
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
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            if is_user_error(&err) {
                ExitCode::from(1)
            } else {
                eprintln!("this is an internal error; please report it with the command line above");
                ExitCode::from(2)
            }
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Gen(a) => gen(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Predict(a) => predict(a),
        Command::Bench(a) => bench(a),
    }
}

/// Echo the effective settings to standard error, one `key = value` per line.
fn print_config(title: &str, body: &str) {
    eprintln!("# {title}");
    for line in body.lines() {
        eprintln!("{line}");
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))
}

fn gen(a: GenArgs) -> Result<()> {
    if a.template.is_empty() {
        return Err(user("at least one --template is required"));
    }
    let templates: Vec<String> = a.template.iter().map(|t| t.to_string()).collect();
    print_config(
        "gen",
        &format!(
            "template = {}\nn = {}\nscenes = {}\nframes = {}\nseed = {}\nout = {}\n",
            templates.join(","),
            a.n,
            a.scenes,
            a.frames,
            a.seed.seed,
            a.out.display()
        ),
    );
    fs::create_dir_all(&a.out).with_context(|| format!("cannot create {}", a.out.display()))?;
    let force = ForceConfig::default();
    let mut manifest = String::from("file,template,n_peds,seed,frames\n");
    for i in 0..a.scenes {
        let template = a.template[(i % a.template.len() as u64) as usize];
        let seed = a.seed.seed.wrapping_add(i);
        let scene = generate_scene_with(template, a.n, seed, &force, a.frames)?;
        let file = format!("{template}-{seed}.txt");
        save_trajectories(&scene, &a.out.join(&file))?;
        writeln!(manifest, "{file},{template},{},{seed},{}", a.n, a.frames)?;
    }
    write_file(&a.out.join("manifest.csv"), manifest)?;
    eprintln!("wrote {} scenes to {}", a.scenes, a.out.display());
    Ok(())
}

/// Load one file or every `*.txt` in a directory, sorted by name.
fn load_datasets(ingest: &IngestArgs) -> Result<Vec<TrajectoryDataset>> {
    let path = &ingest.data;
    let files = if path.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(path)
            .with_context(|| format!("cannot list {}", path.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "txt"))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(user(format!("{} contains no .txt trajectory files", path.display())));
        }
        if ingest.ego_poses.is_some() {
            return Err(user("--ego-poses needs --data to be a single trajectory file"));
        }
        files
    } else {
        vec![path.clone()]
    };
    files.iter().map(|f| load_one(f, ingest.downsample, ingest.ego_poses.as_deref())).collect()
}

fn load_one(file: &Path, downsample: usize, ego: Option<&Path>) -> Result<TrajectoryDataset> {
    let mut ds = load_trajectories(file).with_context(|| format!("reading {}", file.display()))?;
    if let Some(ego) = ego {
        let poses = load_ego_poses(ego).with_context(|| format!("reading {}", ego.display()))?;
        ds = to_global(&ds, &poses).with_context(|| format!("converting {} to world coordinates", file.display()))?;
    }
    if downsample != 1 {
        ds = ds.downsample(downsample)?;
    }
    Ok(ds)
}

fn windows_of(datasets: &[TrajectoryDataset], t_obs: usize, t_pred: usize, stride: usize) -> Result<Vec<SceneWindow>> {
    let mut out = Vec::new();
    for ds in datasets {
        out.extend(make_windows(ds, t_obs, t_pred, stride)?);
    }
    if out.is_empty() {
        return Err(user(format!("no window of {t_obs}+{t_pred} frames with a fully visible pedestrian in the input")));
    }
    Ok(out)
}

fn ingest_summary(i: &IngestArgs) -> String {
    let ego = i.ego_poses.as_ref().map_or("none".to_string(), |p| p.display().to_string());
    format!("data = {}\ndownsample = {}\nego_poses = {ego}\nstride = {}\n", i.data.display(), i.downsample, i.stride)
}

fn train(a: TrainArgs) -> Result<()> {
    let (mut model, mut cfg) = match &a.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
            parse_config(&text).with_context(|| format!("in {}", path.display()))?
        }
        None => (ModelConfig::default(), TrainConfig::default()),
    };
    macro_rules! apply {
        ($target:expr, $($flag:ident),*) => {$(if let Some(v) = a.$flag { $target.$flag = v; })*};
    }
    apply!(cfg, epochs, lr, lr_decay, batch_size, val_fraction, checkpoint_interval, grad_clip, seed);
    apply!(model, t_obs);
    if let Some(h) = a.horizon {
        model.t_pred = h;
    }
    cfg.window_stride = a.ingest.stride;
    model.validate()?;
    cfg.validate()?;
    print_config("train", &format!("{}out = {}\n{model}{cfg}", ingest_summary(&a.ingest), a.out.display()));

    let datasets = load_datasets(&a.ingest)?;
    let windows = windows_of(&datasets, model.t_obs, model.t_pred, cfg.window_stride)?;
    eprintln!("{} windows from {} file(s)", windows.len(), datasets.len());
    fs::create_dir_all(&a.out).with_context(|| format!("cannot create {}", a.out.display()))?;

    let mut log = format!("{LOG_CSV_HEADER}\n");
    let log_path = a.out.join("train_log.csv");
    let interval = cfg.checkpoint_interval;
    let result = train_with(windows, &model, &cfg, |entry, params| {
        eprintln!("{}", entry.csv_row());
        log.push_str(&entry.csv_row());
        log.push('\n');
        if interval > 0 && entry.epoch > 0 && entry.epoch % interval == 0 {
            params.to_checkpoint().save(&a.out.join(format!("epoch_{:04}.ckpt", entry.epoch)))?;
        }
        Ok(())
    });
    write_file(&log_path, &log)?;
    let outcome = match result {
        Ok(o) => o,
        Err(crowdcast::Error::Diverged { epoch, reason, last_good }) => {
            let path = a.out.join("diverged.ckpt");
            last_good.to_checkpoint().save(&path)?;
            return Err(user(format!(
                "training diverged in epoch {epoch} ({reason}); parameters before the failing step saved to {}; try a lower --lr or --grad-clip",
                path.display()
            )));
        }
        Err(e) => return Err(e.into()),
    };
    outcome.best.to_checkpoint().save(&a.out.join("best.ckpt"))?;
    outcome.last.to_checkpoint().save(&a.out.join("last.ckpt"))?;
    eprintln!("best epoch {}; wrote best.ckpt, last.ckpt, train_log.csv to {}", outcome.best_epoch, a.out.display());
    Ok(())
}

fn load_model(path: &Path) -> Result<ModelParams> {
    let ck = Checkpoint::load(path).map_err(|e| user(format!("cannot load checkpoint {}: {e}", path.display())))?;
    ModelParams::from_checkpoint(ck).map_err(|e| user(format!("checkpoint {} is inconsistent: {e}", path.display())))
}

fn eval(a: EvalArgs) -> Result<()> {
    if a.n_samples == 0 {
        return Err(user("--n-samples must be at least 1"));
    }
    let params = load_model(&a.checkpoint)?;
    let selection = if a.select_per_metric { Selection::PerMetric } else { Selection::ByAde };
    print_config(
        "eval",
        &format!(
            "checkpoint = {}\n{}n_samples = {}\nselection = {selection:?}\nseed = {}\n{}",
            a.checkpoint.display(),
            ingest_summary(&a.ingest),
            a.n_samples,
            a.seed.seed,
            params.config
        ),
    );
    let datasets = load_datasets(&a.ingest)?;
    let windows = windows_of(&datasets, params.config.t_obs, params.config.t_pred, a.ingest.stride)?;
    let reports = vec![
        evaluate(&params, &windows, a.n_samples, a.seed.seed, selection)?,
        evaluate_deterministic("linear", &windows, linear_regression_predict)?,
        evaluate_deterministic("const-vel", &windows, constant_velocity_predict)?,
    ];
    print!("{}", reports_to_table(&reports));
    if let Some(csv) = &a.csv {
        write_file(csv, reports_to_csv(&reports))?;
    }
    Ok(())
}

fn predict(a: PredictArgs) -> Result<()> {
    let params = load_model(&a.checkpoint)?;
    if let Some(h) = a.horizon {
        if h != params.config.t_pred {
            return Err(user(format!(
                "--horizon {h} does not match the checkpoint's horizon {}; train with --horizon {h}",
                params.config.t_pred
            )));
        }
    }
    print_config(
        "predict",
        &format!(
            "checkpoint = {}\ninput = {}\nstride = {}\ndownsample = {}\n{}",
            a.checkpoint.display(),
            a.input.display(),
            a.stride,
            a.downsample,
            params.config
        ),
    );
    let ds = load_one(&a.input, a.downsample, a.ego_poses.as_deref())?;
    let scenes = observation_windows(&ds, params.config.t_obs, a.stride)?;
    if scenes.is_empty() {
        return Err(user(format!("{} has no {} consecutive frames with a fully observed pedestrian", a.input.display(), params.config.t_obs)));
    }
    let mut out = format!("{DISTRIBUTION_CSV_HEADER}\n");
    for (i, scene) in scenes.iter().enumerate() {
        let dist = params.predict(&scene.observation)?;
        write_distribution_rows(&mut out, i, &scene.track_ids, &dist);
    }
    match &a.out {
        Some(path) => write_file(path, out),
        None => {
            print!("{out}");
            Ok(())
        }
    }
}

const BENCH_CSV_HEADER: &str =
    "mode,n_peds,seq_len,sequences,preprocess_median_ms,preprocess_p10_ms,preprocess_p90_ms,inference_median_ms,total_median_ms";

fn bench(a: BenchArgs) -> Result<()> {
    let modes = match a.mode.as_str() {
        "both" => vec![PreprocessMode::Graph, PreprocessMode::Direct],
        m => vec![m.parse::<PreprocessMode>().map_err(|e| user(format!("--mode: {e}")))?],
    };
    if a.n_peds == 0 || a.sequences == 0 {
        return Err(user("--n-peds and --sequences must be positive"));
    }
    let model = ModelConfig::default();
    if a.seq_len < model.t_obs {
        return Err(user(format!("--seq-len must be at least {}", model.t_obs)));
    }
    print_config(
        "bench",
        &format!(
            "mode = {}\nn_peds = {}\nseq_len = {}\nsequences = {}\nrepeats = {}\nseed = {}\nthreads = 1\n",
            a.mode, a.n_peds, a.seq_len, a.sequences, a.repeats, a.seed.seed
        ),
    );
    let sequences = bench_sequences(a.n_peds, a.seq_len, a.sequences, a.seed.seed)?;
    let params = ModelParams::init(&model, a.seed.seed)?;
    let mut csv = format!("{BENCH_CSV_HEADER}\n");
    let mut medians = Vec::new();
    for mode in modes {
        let pre = bench_preprocess(&sequences, mode, a.repeats)?;
        // Only the direct path feeds this model; the graph path stands for a
        // different network whose inference is not reimplemented here.
        let inference = match mode {
            PreprocessMode::Direct => Some(time_inference(&params, &sequences, a.repeats)?),
            PreprocessMode::Graph => None,
        };
        let inf_cell = inference.map_or("NA".to_string(), |t| format!("{:.6}", t.median_ms));
        let total_cell = inference.map_or("NA".to_string(), |t| format!("{:.6}", t.median_ms + pre.median_ms));
        writeln!(
            csv,
            "{mode},{},{},{},{:.6},{:.6},{:.6},{inf_cell},{total_cell}",
            a.n_peds, a.seq_len, a.sequences, pre.median_ms, pre.p10_ms, pre.p90_ms
        )?;
        medians.push((mode, pre.median_ms));
    }
    if let [(_, graph), (_, direct)] = medians[..] {
        eprintln!(
            "pre-processing speed-up graph/direct: {:.1}x (reference figure 54.8x was measured on different hardware and code; only the direction is expected to carry over)",
            graph / direct
        );
    }
    match &a.out {
        Some(path) => write_file(path, csv),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

/// Dense-crowd scenes cut into `[seq_len, n, 2]` position tensors.
fn bench_sequences(n: usize, seq_len: usize, count: usize, seed: u64) -> Result<Vec<crowdcast::ndnum::Tensor>> {
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let scene = generate_scene_with(Template::DenseCrowd, n, seed.wrapping_add(i as u64), &ForceConfig::default(), seq_len.max(20))?;
        let windows = make_windows(&scene, 2, seq_len - 2, seq_len)?;
        let w = windows.into_iter().find(|w| w.n_peds() == n);
        let Some(w) = w else { bail!("synthetic scene {i} lost pedestrians") };
        let mut positions = w.observed().data().to_vec();
        positions.extend_from_slice(w.future().data());
        out.push(crowdcast::ndnum::Tensor::new(vec![seq_len, n, 2], positions)?);
    }
    Ok(out)
}

fn time_inference(params: &ModelParams, sequences: &[crowdcast::ndnum::Tensor], repeats: usize) -> Result<TimingStats> {
    let t_obs = params.config.t_obs;
    let observations = sequences
        .iter()
        .map(|s| {
            let n = s.shape()[1];
            let obs = crowdcast::ndnum::Tensor::new(vec![t_obs, n, 2], s.data()[..t_obs * n * 2].to_vec())?;
            Ok(crowdcast::dataio::Observation::from_positions(obs)?)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(time_per_sequence(&observations, repeats, |obs| {
        let raw = model_forward(&Tape::new(), obs, &params.config, &params.tensors);
        std::hint::black_box(raw.ok());
    })?)
}
