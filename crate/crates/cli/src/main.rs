use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use tactile_core::ablation::{ablation, cells_to_csv, AblationSetup};
use tactile_core::actions::{apply_gesture, RobotActionState};
use tactile_core::baselines::{self, knn_classify, load_flat, mlp_classify, mlp_train, MlpConfig};
use tactile_core::bench::{bench, LoadProfile, MIN_ITERATIONS};
use tactile_core::dataset::{
    label_dataset, load_samples, load_windows, synth_to_dir, write_samples_idx, Dataset, SynthRequest,
};
use tactile_core::egnn::{self, EgnnConfig, EgnnModel, Pooling, DEFAULT_LENGTH_UNIT};
use tactile_core::graph::{build_graph, GraphParams, DEFAULT_K, DEFAULT_THETA_ACT};
use tactile_core::nn::{accuracy, TrainConfig};
use tactile_core::segment::SegmentParams;
use tactile_core::skin::{presets, Skin, SkinConfig};
use tactile_core::stream::{run_pipeline, write_frame_message, StreamParams};
use tactile_core::synth::{ParamRanges, PoseSampler, SynthConfig};

#[derive(Parser)]
#[command(name = "tactile", version, about = "Tactile gesture recognition on a simulated robot skin")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Skin configuration files.
    #[command(subcommand)]
    Skin(SkinCmd),
    /// Synthetic datasets.
    #[command(subcommand)]
    Dataset(DatasetCmd),
    /// Train the graph classifier; prints `epoch,train_acc,val_acc,loss`.
    Train(TrainArgs),
    /// Accuracy of a classifier on a labeled dataset.
    Eval(EvalArgs),
    /// Neighbour-count × pooling grid; prints `k,pooling,val_acc,test_acc`.
    Ablate(AblateArgs),
    /// Time the recognition step; prints `stage,mean_ms,p50_ms,p99_ms`.
    Bench(BenchArgs),
    /// Run the streaming recognizer on a frame stream and drive the robot state.
    Demo(DemoArgs),
    /// Graph debugging.
    #[command(subcommand)]
    Graph(GraphCmd),
}

#[derive(Subcommand)]
enum SkinCmd {
    /// Report every invariant violation of a configuration file.
    Validate { config: PathBuf },
    /// Write a built-in skin as a configuration file.
    Export {
        #[arg(value_enum)]
        preset: Preset,
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Ur5Like,
    FoldDemo,
}

#[derive(Subcommand)]
enum DatasetCmd {
    /// Synthesize recordings into a directory.
    Synth(SynthArgs),
    /// Segment every recording and write `samples.idx`.
    Label(LabelArgs),
    /// Write recordings as a frame-message stream for `demo`.
    Stream {
        dir: PathBuf,
        out: PathBuf,
        /// Recording ids, in order; all recordings when omitted.
        #[arg(long, value_delimiter = ',')]
        ids: Vec<usize>,
    },
}

#[derive(Args)]
struct SynthArgs {
    out: PathBuf,
    /// Skin configuration; the built-in 2112-taxel arm when omitted.
    #[arg(long)]
    skin: Option<PathBuf>,
    /// Recordings per class: poke,double_pat,grab,stroke.
    #[arg(long, value_delimiter = ',', default_value = "145,145,145,146")]
    counts: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 50.0)]
    sample_rate: f64,
    #[arg(long, default_value_t = 0.01)]
    noise_sigma: f64,
}

#[derive(Args)]
struct LabelArgs {
    dir: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    theta_label: f64,
    /// Seconds.
    #[arg(long, default_value_t = 0.4)]
    gap_min: f64,
    /// Seconds.
    #[arg(long, default_value_t = 0.06)]
    len_min: f64,
    /// Window length in frames.
    #[arg(long, default_value_t = 100)]
    window: usize,
}

#[derive(Args, Clone)]
struct GraphFlags {
    /// Dynamic neighbours per node.
    #[arg(long, default_value_t = DEFAULT_K)]
    k: usize,
    #[arg(long, default_value_t = DEFAULT_THETA_ACT)]
    theta_act: f64,
    /// Keep every stride-th frame of the window.
    #[arg(long, default_value_t = 5)]
    stride: usize,
}

impl GraphFlags {
    fn params(&self) -> GraphParams {
        GraphParams {
            theta_act: self.theta_act,
            k: self.k,
        }
    }
}

#[derive(Args, Clone)]
struct ModelFlags {
    #[arg(long, default_value_t = 32)]
    hidden: usize,
    #[arg(long, default_value_t = 3)]
    layers: usize,
    #[arg(long, default_value = "max")]
    pooling: Pooling,
}

impl ModelFlags {
    fn config(&self) -> EgnnConfig {
        EgnnConfig {
            hidden: self.hidden,
            layers: self.layers,
            pooling: self.pooling,
            length_unit: DEFAULT_LENGTH_UNIT,
        }
    }
}

#[derive(Args, Clone)]
struct OptimFlags {
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 3e-3)]
    lr: f64,
    #[arg(long, default_value_t = 16)]
    batch: usize,
    #[arg(long, default_value_t = 1e-5)]
    l2: f64,
    #[arg(long, default_value_t = 0.15)]
    val_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Keep the step size fixed instead of cosine annealing.
    #[arg(long)]
    constant_lr: bool,
}

impl OptimFlags {
    fn config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.lr,
            batch_size: self.batch,
            epochs: self.epochs,
            seed: self.seed,
            l2: self.l2,
            val_fraction: self.val_fraction,
            cosine_decay: !self.constant_lr,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Labeled dataset directory.
    dataset: PathBuf,
    /// Checkpoint output path.
    #[arg(long, short)]
    out: PathBuf,
    /// Write the metrics CSV here instead of stdout.
    #[arg(long)]
    metrics: Option<PathBuf>,
    #[command(flatten)]
    graph: GraphFlags,
    #[command(flatten)]
    model: ModelFlags,
    #[command(flatten)]
    optim: OptimFlags,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum ModelKind {
    Egnn,
    Knn,
    Mlp,
}

#[derive(Args)]
struct EvalArgs {
    /// Labeled dataset to evaluate on.
    dataset: PathBuf,
    #[arg(long, value_enum, default_value = "egnn")]
    model: ModelKind,
    /// Graph model checkpoint (egnn).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Labeled training dataset (knn, mlp).
    #[arg(long)]
    train: Option<PathBuf>,
    /// Neighbours voting in the knn baseline.
    #[arg(long, default_value_t = baselines::DEFAULT_K_NN)]
    k_nn: usize,
    #[arg(long, value_delimiter = ',', default_value = "256,64")]
    mlp_hidden: Vec<usize>,
    #[command(flatten)]
    graph: GraphFlags,
    #[command(flatten)]
    optim: OptimFlags,
}

#[derive(Args)]
struct AblateArgs {
    /// Labeled training dataset.
    dataset: PathBuf,
    /// Labeled test dataset.
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "4,8,16,32")]
    ks: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "max,mean")]
    poolings: Vec<Pooling>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_THETA_ACT)]
    theta_act: f64,
    #[arg(long, default_value_t = 5)]
    stride: usize,
    #[arg(long, default_value_t = 32)]
    hidden: usize,
    #[arg(long, default_value_t = 3)]
    layers: usize,
    #[command(flatten)]
    optim: OptimFlags,
}

#[derive(Args, Clone)]
struct StreamFlags {
    #[arg(long, default_value_t = 100)]
    window: usize,
    /// Idle frames that close a gesture.
    #[arg(long, default_value_t = 20)]
    gap_min_frames: usize,
    /// Shortest activity run that counts, in frames.
    #[arg(long, default_value_t = 3)]
    len_min_frames: usize,
}

#[derive(Args)]
struct BenchArgs {
    checkpoint: PathBuf,
    #[arg(long)]
    skin: Option<PathBuf>,
    #[arg(long, default_value_t = 0.05)]
    active_fraction: f64,
    #[arg(long, default_value_t = MIN_ITERATIONS)]
    iterations: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    graph: GraphFlags,
    #[command(flatten)]
    stream: StreamFlags,
}

#[derive(Args)]
struct DemoArgs {
    checkpoint: PathBuf,
    /// Frame stream file, or a Unix socket path with `--socket`.
    source: PathBuf,
    #[arg(long)]
    socket: bool,
    #[arg(long)]
    skin: Option<PathBuf>,
    #[command(flatten)]
    graph: GraphFlags,
    #[command(flatten)]
    stream: StreamFlags,
}

#[derive(Subcommand)]
enum GraphCmd {
    /// Print the node table and edge list of one frame.
    Dump {
        dataset: PathBuf,
        #[arg(long)]
        recording: usize,
        #[arg(long)]
        frame: usize,
        #[arg(long, default_value_t = DEFAULT_K)]
        k: usize,
        #[arg(long, default_value_t = DEFAULT_THETA_ACT)]
        theta_act: f64,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::FAILURE;
    }
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("TAXEL_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .with_context(|| format!("TAXEL_THREADS={v} is not a positive integer"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cmd: Command) -> Result<ExitCode> {
    match cmd {
        Command::Skin(SkinCmd::Validate { config }) => skin_validate(&config),
        Command::Skin(SkinCmd::Export { preset, out }) => {
            let cfg = match preset {
                Preset::Ur5Like => presets::ur5_like(),
                Preset::FoldDemo => presets::fold_demo(),
            };
            cfg.save(&out)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Dataset(DatasetCmd::Synth(a)) => dataset_synth(a),
        Command::Dataset(DatasetCmd::Label(a)) => dataset_label(a),
        Command::Dataset(DatasetCmd::Stream { dir, out, ids }) => dataset_stream(&dir, &out, ids),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Ablate(a) => ablate(a),
        Command::Bench(a) => run_bench(a),
        Command::Demo(a) => demo(a),
        Command::Graph(GraphCmd::Dump {
            dataset,
            recording,
            frame,
            k,
            theta_act,
        }) => {
            let ds = Dataset::open(&dataset)?;
            let rec = ds.recording(recording)?;
            let f = rec
                .frames
                .get(frame)
                .with_context(|| format!("recording {recording} has {} frames", rec.frames.len()))?;
            let g = build_graph(&ds.skin, f, &GraphParams { theta_act, k })?;
            let mut out = io::stdout().lock();
            g.dump(&mut out)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn skin_validate(path: &Path) -> Result<ExitCode> {
    let cfg = SkinConfig::load(path).with_context(|| format!("reading {}", path.display()))?;
    let violations = cfg.validate();
    if violations.is_empty() {
        println!(
            "ok: {} taxels, {} patches, {} joints, hash {}",
            cfg.taxels.len(),
            cfg.patches.len(),
            cfg.chain.joint_count(),
            cfg.content_hash()
        );
        return Ok(ExitCode::SUCCESS);
    }
    for v in &violations {
        println!("{v}");
    }
    eprintln!("{} violation(s)", violations.len());
    Ok(ExitCode::FAILURE)
}

fn load_skin(path: Option<&Path>) -> Result<Skin> {
    let cfg = match path {
        Some(p) => SkinConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
        None => presets::ur5_like(),
    };
    Ok(Skin::new(cfg)?)
}

fn dataset_synth(a: SynthArgs) -> Result<ExitCode> {
    let counts: [usize; 4] = a
        .counts
        .as_slice()
        .try_into()
        .context("--counts takes exactly four values")?;
    let skin = load_skin(a.skin.as_deref())?;
    let synth = SynthConfig {
        sample_rate: a.sample_rate,
        noise_sigma: a.noise_sigma,
        ..SynthConfig::default()
    };
    if !(synth.sample_rate > 0.0 && synth.noise_sigma >= 0.0) {
        bail!("sample rate must be positive and noise non-negative");
    }
    let ranges = if a.skin.is_none() {
        presets::ur5_like_joint_ranges()
    } else {
        vec![(-std::f64::consts::PI, std::f64::consts::PI); skin.joint_count()]
    };
    let req = SynthRequest {
        counts,
        seed: a.seed,
        sampler: PoseSampler::new(ranges),
        synth,
        ranges: ParamRanges::default(),
    };
    let m = synth_to_dir(&skin, &req, &a.out)?;
    let failed = m.recordings.iter().filter(|e| e.file.is_none()).count();
    eprintln!(
        "wrote {} recordings to {} ({failed} infeasible)",
        m.recordings.len() - failed,
        a.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn dataset_label(a: LabelArgs) -> Result<ExitCode> {
    let ds = Dataset::open(&a.dir)?;
    let params = SegmentParams {
        theta_label: a.theta_label,
        gap_min: a.gap_min,
        len_min: a.len_min,
    };
    if a.window == 0 || a.gap_min < 0.0 || a.len_min < 0.0 {
        bail!("window must be positive and durations non-negative");
    }
    let samples = label_dataset(&ds, &params, a.window)?;
    let mut w = BufWriter::new(File::create(ds.samples_path())?);
    write_samples_idx(&mut w, &samples)?;
    w.flush()?;
    eprintln!("{} samples", samples.len());
    Ok(ExitCode::SUCCESS)
}

fn dataset_stream(dir: &Path, out: &Path, ids: Vec<usize>) -> Result<ExitCode> {
    let ds = Dataset::open(dir)?;
    let ids = if ids.is_empty() { ds.recording_ids() } else { ids };
    let mut w = BufWriter::new(File::create(out)?);
    let mut n = 0;
    for id in ids {
        for f in ds.recording(id)?.frames {
            write_frame_message(&mut w, &f.pressure, &f.q)?;
            n += 1;
        }
    }
    w.flush()?;
    eprintln!("{n} frames");
    Ok(ExitCode::SUCCESS)
}

fn open_labeled(dir: &Path) -> Result<(Dataset, Vec<tactile_core::dataset::SampleRecord>)> {
    let ds = Dataset::open(dir)?;
    let samples = load_samples(&ds)
        .with_context(|| format!("{} has no samples.idx; run `dataset label` first", dir.display()))?;
    Ok((ds, samples))
}

fn write_output(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text)?,
        None => io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn train(a: TrainArgs) -> Result<ExitCode> {
    let cfg = a.optim.config();
    cfg.validate()?;
    if a.graph.stride == 0 {
        bail!("--stride must be positive");
    }
    let (ds, samples) = open_labeled(&a.dataset)?;
    let model_cfg = a.model.config();
    let windows = load_windows(&ds, &samples, &a.graph.params(), a.graph.stride, model_cfg.length_unit)?;
    let (model, history) = egnn::train(model_cfg, ds.skin.hash(), &windows, &cfg, |m| {
        log::info!(
            "epoch {} train_acc {:.4} val_acc {:.4} loss {:.5}",
            m.epoch,
            m.train_acc,
            m.val_acc,
            m.loss
        )
    })?;
    if let Some(reason) = &history.halted {
        log::warn!("training halted ({reason}); keeping the last finite parameters");
    }
    model.save(&a.out)?;
    write_output(a.metrics.as_deref(), &history.to_csv())?;
    Ok(ExitCode::SUCCESS)
}

fn eval(a: EvalArgs) -> Result<ExitCode> {
    let (ds, samples) = open_labeled(&a.dataset)?;
    let stride = a.graph.stride;
    if stride == 0 {
        bail!("--stride must be positive");
    }
    let (name, correct) = match a.model {
        ModelKind::Egnn => {
            let path = a.checkpoint.as_ref().context("--checkpoint is required for egnn")?;
            let model = EgnnModel::load(path)?;
            check_hash(&model, &ds.skin)?;
            let set = load_windows(&ds, &samples, &a.graph.params(), stride, model.config.length_unit)?;
            let refs: Vec<_> = set.iter().map(|(w, c)| (w, *c)).collect();
            ("egnn", (accuracy(&model, &refs) * refs.len() as f64).round() as usize)
        }
        ModelKind::Knn | ModelKind::Mlp => {
            let train_dir = a.train.as_ref().context("--train is required for baselines")?;
            let (tds, tsamples) = open_labeled(train_dir)?;
            let train = load_flat(&tds, &tsamples, stride)?;
            let test = load_flat(&ds, &samples, stride)?;
            if a.model == ModelKind::Knn {
                let mut c = 0;
                for (x, y) in &test {
                    c += usize::from(knn_classify(&train, x, a.k_nn)? == *y);
                }
                ("knn", c)
            } else {
                let hidden: [usize; 2] = a
                    .mlp_hidden
                    .as_slice()
                    .try_into()
                    .context("--mlp-hidden takes two values")?;
                let cfg = a.optim.config();
                cfg.validate()?;
                let (m, _) = mlp_train(&train, &MlpConfig { hidden }, &cfg, |_| {})?;
                let c = test.iter().filter(|(x, y)| mlp_classify(&m, x).0 == *y).count();
                ("mlp", c)
            }
        }
    };
    let n = samples.len();
    println!("model,samples,correct,accuracy");
    println!("{name},{n},{correct},{:.6}", correct as f64 / n.max(1) as f64);
    Ok(ExitCode::SUCCESS)
}

fn ablate(a: AblateArgs) -> Result<ExitCode> {
    let cfg = a.optim.config();
    cfg.validate()?;
    if a.stride == 0 || a.ks.contains(&0) {
        bail!("--stride and every k must be positive");
    }
    let (ds, samples) = open_labeled(&a.dataset)?;
    let test = a.test.as_deref().map(open_labeled).transpose()?;
    let setup = AblationSetup {
        train: (&ds, &samples),
        test: test.as_ref().map(|(d, s)| (d, s.as_slice())),
        model: EgnnConfig {
            hidden: a.hidden,
            layers: a.layers,
            ..EgnnConfig::default()
        },
        train_cfg: cfg,
        theta_act: a.theta_act,
        stride: a.stride,
    };
    let cells = ablation(&setup, &a.ks, &a.poolings);
    for c in &cells {
        if let Some(e) = &c.error {
            eprintln!("k={} pooling={}: {e}", c.k, c.pooling);
        }
    }
    write_output(a.out.as_deref(), &cells_to_csv(&cells))?;
    Ok(ExitCode::SUCCESS)
}

fn check_hash(model: &EgnnModel, skin: &Skin) -> Result<()> {
    if !model.skin_hash.is_empty() && model.skin_hash != skin.hash() {
        bail!(
            "checkpoint was trained on skin {} but the skin in use is {}",
            model.skin_hash,
            skin.hash()
        );
    }
    Ok(())
}

fn stream_params(g: &GraphFlags, s: &StreamFlags) -> Result<StreamParams> {
    if g.stride == 0 || s.window == 0 {
        bail!("--stride and --window must be positive");
    }
    Ok(StreamParams {
        graph: g.params(),
        window: s.window,
        stride: g.stride,
        gap_min_frames: s.gap_min_frames,
        len_min_frames: s.len_min_frames,
    })
}

fn run_bench(a: BenchArgs) -> Result<ExitCode> {
    let model = EgnnModel::load(&a.checkpoint)?;
    let skin = load_skin(a.skin.as_deref())?;
    check_hash(&model, &skin)?;
    let params = stream_params(&a.graph, &a.stream)?;
    let profile = LoadProfile {
        active_fraction: a.active_fraction,
        seed: a.seed,
        ..LoadProfile::default()
    };
    let report = bench(&model, &skin, &profile, &params, a.iterations)?;
    print!("{}", report.to_csv());
    eprintln!(
        "# {} iterations, {:.1} nodes/frame, {}",
        report.iterations, report.mean_nodes, report.machine
    );
    Ok(ExitCode::SUCCESS)
}

fn demo(a: DemoArgs) -> Result<ExitCode> {
    let model = EgnnModel::load(&a.checkpoint)?;
    let skin = load_skin(a.skin.as_deref())?;
    check_hash(&model, &skin)?;
    let params = stream_params(&a.graph, &a.stream)?;
    let mut state = RobotActionState::default();
    println!("frame,class,confidence,running,gripper_closed,waypoint_index");
    let on_event = |e: &tactile_core::stream::GestureEvent| {
        state = apply_gesture(state, e.class);
        println!(
            "{},{},{:.4},{},{},{}",
            e.emitted_at, e.class, e.confidence, state.running, state.gripper_closed, state.waypoint_index
        );
    };
    let frames = if a.socket {
        socket_source(&a.source, &model, &skin, &params, on_event)?
    } else {
        let r = BufReader::new(File::open(&a.source).with_context(|| format!("opening {}", a.source.display()))?);
        run_pipeline(&model, &skin, &params, r, on_event)?
    };
    eprintln!("{frames} frames");
    Ok(ExitCode::SUCCESS)
}

#[cfg(unix)]
fn socket_source(
    path: &Path,
    model: &EgnnModel,
    skin: &Skin,
    params: &StreamParams,
    on_event: impl FnMut(&tactile_core::stream::GestureEvent),
) -> Result<usize> {
    let s = std::os::unix::net::UnixStream::connect(path)
        .with_context(|| format!("connecting to {}", path.display()))?;
    Ok(run_pipeline(model, skin, params, BufReader::new(s), on_event)?)
}

#[cfg(not(unix))]
fn socket_source(
    _: &Path,
    _: &EgnnModel,
    _: &Skin,
    _: &StreamParams,
    _: impl FnMut(&tactile_core::stream::GestureEvent),
) -> Result<usize> {
    bail!("local sockets are only supported on Unix")
}
