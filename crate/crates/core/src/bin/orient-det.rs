use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use orient_det::anchors::{bar_stats, generate_anchors, AnchorConfig, BatchStats};
use orient_det::evaluation::{orientation_deviation, pr_curve, recall_iou_curve, summarize, Detection, GroundTruth};
use orient_det::io::{group_by_frame, read_jsonl, write_jsonl, FrameDetection, FrameTruth};
use orient_det::losses::HyperParams;
use orient_det::model::{log_csv, train, DetectConfig, ToyModel, TrainConfig};
use orient_det::pipeline::{
    detect_scenes, ground_truths, image_id, run_grad_check, sweep_top_n, sweep_weights, GradCheckSetup,
};
use orient_det::pooling::ScoreMapStack;
use orient_det::synth::{gen_detections, gen_scenes, gen_sequence, Motion, Scene, SceneSpec};
use orient_det::tracking::{detect_by_tracking, run_tracker, TrackOutput, TrackerConfig};
use orient_det::{Error, Result};

/// Tolerance the gradcheck subcommand enforces.
const GRAD_TOLERANCE: f64 = 1e-4;

#[derive(Parser)]
#[command(
    name = "orient-det",
    version,
    about = "Oriented-box detection toolkit on synthetic data"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate synthetic scenes or sequences.
    #[command(subcommand)]
    Synth(SynthCmd),
    /// Batch-averaged anchor statistics and anchor generation.
    #[command(subcommand)]
    Anchors(AnchorsCmd),
    /// Train the toy two-stage head on synthetic scenes.
    Train(TrainArgs),
    /// Run a trained model over scenes and write detections.
    Detect(DetectArgs),
    /// Score detections against ground truth.
    Eval(EvalArgs),
    /// Track per-frame detections.
    Track(TrackArgs),
    /// Proposal-cap and loss-weight sweeps.
    #[command(subcommand)]
    Sweep(SweepCmd),
    /// Compare analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct SpecArgs {
    /// Scene spec as JSON; missing fields take defaults.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Overrides the spec seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl SpecArgs {
    fn load(&self) -> Result<SceneSpec> {
        let mut spec: SceneSpec = match &self.spec {
            Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
            None => SceneSpec::default(),
        };
        if let Some(s) = self.seed {
            spec.seed = s;
        }
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Subcommand)]
enum SynthCmd {
    /// Independent scenes: gts.jsonl, dets.jsonl, spec.json and maps/<id>.f32.
    Scene {
        #[command(flatten)]
        spec: SpecArgs,
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// One moving-object sequence: gts.jsonl and dets.jsonl with a frame field.
    Seq {
        #[command(flatten)]
        spec: SpecArgs,
        #[arg(long, default_value_t = 100)]
        frames: usize,
        /// Speed range in pixels per frame.
        #[arg(long, num_args = 2, default_values_t = [0.5, 2.0])]
        speed: Vec<f64>,
        /// Spin range in degrees per frame.
        #[arg(long, num_args = 2, default_values_t = [0.0, 1.0])]
        spin: Vec<f64>,
        #[arg(long)]
        stationary: bool,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum AnchorsCmd {
    /// Print the batch-mean width, height and box count.
    Stats {
        #[arg(long)]
        gt: PathBuf,
    },
    /// Write the anchor set as JSON lines.
    Gen {
        /// Ground truth to size the anchors from.
        #[arg(long, conflicts_with_all = ["w", "h"])]
        gt: Option<PathBuf>,
        #[arg(long, requires = "h")]
        w: Option<f64>,
        #[arg(long, requires = "w")]
        h: Option<f64>,
        #[arg(long, default_value_t = 32)]
        grid_w: usize,
        #[arg(long, default_value_t = 32)]
        grid_h: usize,
        #[arg(long, default_value_t = 4.0)]
        stride: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct HpArgs {
    /// Hyper-parameters as `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    lambda2: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Any hyper-parameter as key=value; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl HpArgs {
    /// Defaults, then the config file, then flags.
    fn load(&self) -> Result<HyperParams> {
        let mut hp = HyperParams::default();
        if let Some(p) = &self.config {
            hp.apply_config_text(&std::fs::read_to_string(p)?)?;
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected key=value, got {kv:?}")))?;
            hp.set(k.trim(), v.trim())?;
        }
        if let Some(v) = self.lr {
            hp.lr = v;
        }
        if let Some(v) = self.lambda1 {
            hp.lambda1 = v;
        }
        if let Some(v) = self.lambda2 {
            hp.lambda2 = v;
        }
        if let Some(v) = self.eta {
            hp.eta = v;
        }
        if let Some(v) = self.batch_size {
            hp.batch_size = v;
        }
        hp.validate()?;
        Ok(hp)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    hp: HpArgs,
    #[command(flatten)]
    spec: SpecArgs,
    #[arg(long, default_value_t = 5000)]
    steps: usize,
    #[arg(long, default_value_t = 256)]
    train_scenes: usize,
    #[arg(long, default_value_t = 10)]
    log_every: usize,
    /// Model file (JSON).
    #[arg(long)]
    out: PathBuf,
    /// Training log (CSV).
    #[arg(long)]
    log: Option<PathBuf>,
}

impl TrainArgs {
    fn config(&self) -> Result<TrainConfig> {
        let spec = self.spec.load()?;
        Ok(TrainConfig {
            hp: self.hp.load()?,
            steps: self.steps,
            seed: spec.seed,
            spec,
            train_scenes: self.train_scenes,
            log_every: self.log_every,
            ..Default::default()
        })
    }
}

#[derive(Args)]
struct CapArgs {
    #[arg(long, default_value_t = 2000)]
    rpn_top_n: usize,
    #[arg(long, default_value_t = 300)]
    rdn_top_n: usize,
    #[arg(long, default_value_t = 0.05)]
    score_threshold: f64,
    #[arg(long, default_value_t = 0.7)]
    rpn_nms: f64,
    #[arg(long, default_value_t = 0.3)]
    final_nms: f64,
    #[arg(long, default_value_t = 2)]
    refine_passes: usize,
}

impl CapArgs {
    fn config(&self) -> Result<DetectConfig> {
        let c = DetectConfig {
            rpn_top_n: self.rpn_top_n,
            rpn_nms: self.rpn_nms,
            rdn_top_n: self.rdn_top_n,
            score_threshold: self.score_threshold,
            final_nms: self.final_nms,
            refine_passes: self.refine_passes,
        };
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args)]
struct SceneSource {
    /// Directory written by `synth scene`.
    #[arg(long, conflicts_with = "count")]
    scenes: Option<PathBuf>,
    /// Otherwise generate this many scenes.
    #[arg(long, default_value_t = 100)]
    count: usize,
    #[command(flatten)]
    spec: SpecArgs,
}

impl SceneSource {
    fn load(&self) -> Result<Vec<Scene>> {
        match &self.scenes {
            Some(dir) => load_scene_dir(dir),
            None => gen_scenes(&self.spec.load()?, self.count),
        }
    }
}

#[derive(Args)]
struct DetectArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    source: SceneSource,
    #[command(flatten)]
    caps: CapArgs,
    #[arg(long)]
    out: PathBuf,
    /// Also write the scenes' ground truth.
    #[arg(long)]
    gts_out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    dets: PathBuf,
    #[arg(long)]
    gts: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    iou: f64,
    /// Detections below this score are ignored for precision and recall.
    #[arg(long, default_value_t = 0.05)]
    score_cutoff: f64,
    /// Summary JSON; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    pr_csv: Option<PathBuf>,
    #[arg(long)]
    recall_iou_csv: Option<PathBuf>,
    /// Orientation-deviation histogram (JSON).
    #[arg(long)]
    angle_hist: Option<PathBuf>,
    #[arg(long, default_value_t = 10.0)]
    bin_width: f64,
}

#[derive(Args)]
struct TrackArgs {
    /// Detections with a frame field.
    #[arg(long)]
    dets: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Ground truth with a frame field; prints a raw versus tracked report.
    #[arg(long)]
    gts: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    max_age: u32,
    #[arg(long, default_value_t = 2)]
    min_hits: u32,
    #[arg(long, default_value_t = 0.3)]
    iou_gate: f64,
    #[arg(long, default_value_t = 0.5)]
    iou: f64,
    #[arg(long, default_value_t = 0.5)]
    score_cutoff: f64,
}

#[derive(Subcommand)]
enum SweepCmd {
    /// Recall and precision per detection-stage proposal cap.
    TopN {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = [50, 100, 300, 500])]
        caps: Vec<usize>,
        #[command(flatten)]
        source: SceneSource,
        #[command(flatten)]
        detect: CapArgs,
        #[arg(long, default_value_t = 0.5)]
        iou: f64,
        #[arg(long, default_value_t = 0.05)]
        score_cutoff: f64,
        /// CSV; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Trains one model per (eta, lambda1, lambda2) combination.
    Weights {
        #[arg(long, value_delimiter = ',', default_values_t = [1.0])]
        etas: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = [10.0])]
        lambda1s: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = [1.0])]
        lambda2s: Vec<f64>,
        #[command(flatten)]
        train: TrainSweepArgs,
        #[arg(long, default_value_t = 100)]
        count: usize,
        /// Seed of the held-out scenes.
        #[arg(long, default_value_t = 1_000_003)]
        eval_seed: u64,
        #[arg(long, default_value_t = 0.5)]
        iou: f64,
        #[arg(long, default_value_t = 0.05)]
        score_cutoff: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct TrainSweepArgs {
    #[command(flatten)]
    hp: HpArgs,
    #[command(flatten)]
    spec: SpecArgs,
    #[arg(long, default_value_t = 5000)]
    steps: usize,
    #[arg(long, default_value_t = 256)]
    train_scenes: usize,
}

#[derive(Args)]
struct GradcheckArgs {
    #[command(flatten)]
    hp: HpArgs,
    #[arg(long, default_value_t = 100)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Numeric(_) => 3,
        _ => 2,
    }
}

fn run(cmd: Cmd) -> Result<ExitCode> {
    match cmd {
        Cmd::Synth(c) => synth(c)?,
        Cmd::Anchors(c) => anchors(c)?,
        Cmd::Train(a) => {
            let cfg = a.config()?;
            let (model, log) = train(&cfg, |r| {
                eprintln!(
                    "iter {:6}  L1 {:.5}  L2 {:.4}  joint {:.4}  lr {}",
                    r.iteration, r.l1, r.l2, r.joint, r.lr
                )
            })?;
            if !model.is_finite() {
                return Err(Error::Numeric("trained parameters are not finite".into()));
            }
            model.save(&a.out)?;
            if let Some(p) = &a.log {
                std::fs::write(p, log_csv(&log))?;
            }
        }
        Cmd::Detect(a) => {
            let model = ToyModel::load(&a.model)?;
            let scenes = a.source.load()?;
            let dets = detect_scenes(&model, &scenes, &a.caps.config()?)?;
            write_jsonl(&a.out, &dets)?;
            if let Some(p) = &a.gts_out {
                write_jsonl(p, &ground_truths(&scenes))?;
            }
        }
        Cmd::Eval(a) => eval(a)?,
        Cmd::Track(a) => track(a)?,
        Cmd::Sweep(c) => sweep(c)?,
        Cmd::Gradcheck(a) => {
            let setup = GradCheckSetup {
                samples: a.samples,
                seed: a.seed,
                ..Default::default()
            };
            let r = run_grad_check(&setup, &a.hp.load()?)?;
            println!("{}", serde_json::to_string(&r)?);
            if !(r.max_rel_error < GRAD_TOLERANCE) {
                eprintln!("max relative error {:.3e} exceeds {GRAD_TOLERANCE:e}", r.max_rel_error);
                return Ok(ExitCode::from(3));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn map_path(dir: &Path, i: usize) -> PathBuf {
    dir.join("maps").join(format!("{}.f32", image_id(i)))
}

fn synth(c: SynthCmd) -> Result<()> {
    match c {
        SynthCmd::Scene { spec, count, out } => {
            let spec = spec.load()?;
            let scenes = gen_scenes(&spec, count)?;
            std::fs::create_dir_all(out.join("maps"))?;
            let mut rng = spec.rng();
            let mut dets = Vec::new();
            for (i, s) in scenes.iter().enumerate() {
                s.features.save(&map_path(&out, i))?;
                dets.extend(gen_detections(&image_id(i), &s.gts, &spec, &mut rng)?);
            }
            write_jsonl(&out.join("gts.jsonl"), &ground_truths(&scenes))?;
            write_jsonl(&out.join("dets.jsonl"), &dets)?;
            std::fs::write(out.join("spec.json"), serde_json::to_string_pretty(&spec)?)?;
        }
        SynthCmd::Seq {
            spec,
            frames,
            speed,
            spin,
            stationary,
            out,
        } => {
            let spec = spec.load()?;
            let motion = if stationary {
                Motion::Stationary
            } else {
                Motion::ConstantVelocity {
                    speed: (speed[0], speed[1]),
                    spin: (spin[0], spin[1]),
                }
            };
            let seq = gen_sequence(&spec, frames, &motion)?;
            std::fs::create_dir_all(&out)?;
            let gts: Vec<FrameTruth> = seq
                .iter()
                .flat_map(|f| {
                    f.gts.iter().map(move |g| FrameTruth {
                        frame: f.frame,
                        gt: GroundTruth::new(format!("f{}", f.frame), *g),
                    })
                })
                .collect();
            let dets: Vec<FrameDetection> = seq
                .iter()
                .flat_map(|f| {
                    f.detections.iter().map(move |d| FrameDetection {
                        frame: f.frame,
                        det: d.clone(),
                    })
                })
                .collect();
            write_jsonl(&out.join("gts.jsonl"), &gts)?;
            write_jsonl(&out.join("dets.jsonl"), &dets)?;
            std::fs::write(out.join("spec.json"), serde_json::to_string_pretty(&spec)?)?;
        }
    }
    Ok(())
}

/// Ground truth grouped per image, in first-appearance order.
fn gt_batch(path: &Path) -> Result<Vec<Vec<orient_det::geometry::RotatedBox>>> {
    let gts: Vec<GroundTruth> = read_jsonl(path)?;
    let mut ids: Vec<String> = Vec::new();
    let mut batch: Vec<Vec<_>> = Vec::new();
    for g in gts {
        match ids.iter().position(|i| *i == g.image_id) {
            Some(k) => batch[k].push(g.rbox),
            None => {
                ids.push(g.image_id);
                batch.push(vec![g.rbox]);
            }
        }
    }
    Ok(batch)
}

fn anchors(c: AnchorsCmd) -> Result<()> {
    match c {
        AnchorsCmd::Stats { gt } => {
            let s = bar_stats(&gt_batch(&gt)?)?;
            println!("w_hat {}  h_hat {}  count {}", s.w_hat, s.h_hat, s.n_boxes);
        }
        AnchorsCmd::Gen {
            gt,
            w,
            h,
            grid_w,
            grid_h,
            stride,
            out,
        } => {
            let stats = match (gt, w, h) {
                (Some(p), _, _) => bar_stats(&gt_batch(&p)?)?,
                (None, Some(w), Some(h)) => BatchStats {
                    w_hat: w,
                    h_hat: h,
                    n_boxes: 0,
                },
                _ => return Err(Error::Config("anchors gen needs --gt or --w and --h".into())),
            };
            let cfg = AnchorConfig {
                grid_w,
                grid_h,
                feature_stride: stride,
                ..Default::default()
            };
            write_jsonl(&out, &generate_anchors(&cfg, &stats)?.anchors)?;
        }
    }
    Ok(())
}

fn load_scene_dir(dir: &Path) -> Result<Vec<Scene>> {
    let gts: Vec<GroundTruth> = read_jsonl(&dir.join("gts.jsonl"))?;
    let mut scenes = Vec::new();
    while map_path(dir, scenes.len()).exists() {
        let i = scenes.len();
        let id = image_id(i);
        scenes.push(Scene {
            gts: gts.iter().filter(|g| g.image_id == id).map(|g| g.rbox).collect(),
            features: ScoreMapStack::load(&map_path(dir, i))?,
        });
    }
    if scenes.is_empty() {
        return Err(Error::Parse(format!(
            "no score maps under {}",
            dir.join("maps").display()
        )));
    }
    Ok(scenes)
}

fn write_or_print(path: &Option<PathBuf>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let dets: Vec<Detection> = read_jsonl(&a.dets)?;
    let gts: Vec<GroundTruth> = read_jsonl(&a.gts)?;
    if !(a.bin_width > 0.0 && (180.0 / a.bin_width).fract() == 0.0) {
        return Err(Error::Config("bin width must divide 180".into()));
    }
    let s = summarize(&dets, &gts, a.iou, a.score_cutoff);
    write_or_print(&a.out, &(serde_json::to_string_pretty(&s)? + "\n"))?;
    if let Some(p) = &a.pr_csv {
        std::fs::write(p, pr_curve(&dets, &gts, a.iou).to_csv("recall", "precision"))?;
    }
    if let Some(p) = &a.recall_iou_csv {
        let grid: Vec<f64> = (1..=9).map(|k| k as f64 / 10.0).collect();
        std::fs::write(
            p,
            recall_iou_curve(&dets, &gts, &grid, a.score_cutoff).to_csv("iou", "recall"),
        )?;
    }
    if let Some(p) = &a.angle_hist {
        let h = orientation_deviation(&dets, &gts, a.iou, a.bin_width);
        std::fs::write(p, serde_json::to_string_pretty(&h)?)?;
    }
    Ok(())
}

fn track(a: TrackArgs) -> Result<()> {
    let frames = group_by_frame(read_jsonl(&a.dets)?);
    let cfg = TrackerConfig {
        max_age: a.max_age,
        min_hits: a.min_hits,
        iou_gate: a.iou_gate,
        ..Default::default()
    };
    let outputs = run_tracker(&cfg, frames.iter().map(|(f, d)| (*f, d.as_slice())))?;
    let tracks: Vec<&TrackOutput> = outputs
        .iter()
        .flat_map(|o| o.tracks.iter().chain(&o.recovered))
        .collect();
    write_jsonl(&a.out, &tracks)?;
    if let Some(p) = &a.gts {
        let gts: Vec<GroundTruth> = read_jsonl::<FrameTruth>(p)?.into_iter().map(|t| t.gt).collect();
        let raw: Vec<Detection> = frames.iter().flat_map(|(_, d)| d.iter().cloned()).collect();
        let aug: Vec<Detection> = detect_by_tracking(&outputs)
            .into_iter()
            .flatten()
            .map(|(d, _)| d)
            .collect();
        let report = serde_json::json!({
            "raw": summarize(&raw, &gts, a.iou, a.score_cutoff),
            "by_tracking": summarize(&aug, &gts, a.iou, a.score_cutoff),
            "recovered": aug.len() - raw.len(),
        });
        println!("{}", serde_json::to_string_pretty(&report)?);
    }
    Ok(())
}

fn sweep(c: SweepCmd) -> Result<()> {
    match c {
        SweepCmd::TopN {
            model,
            caps,
            source,
            detect,
            iou,
            score_cutoff,
            out,
        } => {
            if caps.contains(&0) {
                return Err(Error::Config("caps must be >= 1".into()));
            }
            let model = ToyModel::load(&model)?;
            let scenes = source.load()?;
            let rows = sweep_top_n(&model, &scenes, &caps, &detect.config()?, iou, score_cutoff)?;
            let mut csv = String::from("rdn_top_n,recall,precision,ap,tp,fp,fn\n");
            for r in rows {
                let s = &r.summary;
                csv.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    r.rdn_top_n, s.recall, s.precision, s.ap, s.counts.tp, s.counts.fp, s.counts.fn_
                ));
            }
            write_or_print(&out, &csv)?;
        }
        SweepCmd::Weights {
            etas,
            lambda1s,
            lambda2s,
            train,
            count,
            eval_seed,
            iou,
            score_cutoff,
            out,
        } => {
            let spec = train.spec.load()?;
            let base = TrainConfig {
                hp: train.hp.load()?,
                steps: train.steps,
                seed: spec.seed,
                spec: spec.clone(),
                train_scenes: train.train_scenes,
                log_every: train.steps.max(1),
                ..Default::default()
            };
            let mut grid = Vec::new();
            for &e in &etas {
                for &l1 in &lambda1s {
                    for &l2 in &lambda2s {
                        grid.push((e, l1, l2));
                    }
                }
            }
            let held_out = gen_scenes(
                &SceneSpec {
                    seed: eval_seed,
                    ..spec
                },
                count,
            )?;
            let rows = sweep_weights(&base, &grid, &held_out, &DetectConfig::default(), iou, score_cutoff)?;
            let mut csv = String::from("eta,lambda1,lambda2,recall,precision,ap\n");
            for r in rows {
                let s = &r.summary;
                csv.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    r.eta, r.lambda1, r.lambda2, s.recall, s.precision, s.ap
                ));
            }
            write_or_print(&out, &csv)?;
        }
    }
    Ok(())
}
