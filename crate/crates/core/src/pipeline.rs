//! Scene-level drivers shared by the command line, the examples and the
//! acceptance checks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::anchors::{AnchorConfig, AnchorSet};
use crate::error::Result;
use crate::evaluation::{summarize, Detection, EvalSummary, GroundTruth};
use crate::losses::HyperParams;
use crate::model::{
    detect_from_proposals, grad_check, prepare_training, propose, train, DetectConfig, GradCheckReport, Proposal,
    SceneBatch, SceneData, ToyModel, TrainConfig,
};
use crate::synth::{Frame, Scene, SceneSpec};
use crate::tracking::{detect_by_tracking, run_tracker, FrameOutput, TrackerConfig};

pub fn image_id(i: usize) -> String {
    format!("s{i}")
}

pub fn ground_truths(scenes: &[Scene]) -> Vec<GroundTruth> {
    scenes
        .iter()
        .enumerate()
        .flat_map(|(i, s)| s.gts.iter().map(move |g| GroundTruth::new(image_id(i), *g)))
        .collect()
}

/// Proposals of every scene, uncapped past `rpn_top_n`.
pub fn propose_scenes(model: &ToyModel, scenes: &[Scene], cfg: &DetectConfig) -> Result<Vec<Vec<Proposal>>> {
    let anchors = model.anchors()?;
    scenes
        .iter()
        .map(|s| propose(model, &anchors, &s.features, cfg))
        .collect()
}

/// Detection stage over precomputed proposals.
pub fn detect_with_proposals(
    model: &ToyModel,
    scenes: &[Scene],
    proposals: &[Vec<Proposal>],
    cfg: &DetectConfig,
) -> Result<Vec<Detection>> {
    let mut out = Vec::new();
    for (i, (s, p)) in scenes.iter().zip(proposals).enumerate() {
        out.extend(detect_from_proposals(model, &s.features, p, &image_id(i), cfg)?);
    }
    Ok(out)
}

pub fn detect_scenes(model: &ToyModel, scenes: &[Scene], cfg: &DetectConfig) -> Result<Vec<Detection>> {
    let props = propose_scenes(model, scenes, cfg)?;
    detect_with_proposals(model, scenes, &props, cfg)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TopNRow {
    pub rdn_top_n: usize,
    #[serde(flatten)]
    pub summary: EvalSummary,
}

/// Recall and precision as the detection-stage proposal cap varies. The
/// proposal stage runs once, so each cap sees a prefix of the same ranking.
pub fn sweep_top_n(
    model: &ToyModel,
    scenes: &[Scene],
    caps: &[usize],
    cfg: &DetectConfig,
    iou_threshold: f64,
    score_cutoff: f64,
) -> Result<Vec<TopNRow>> {
    let props = propose_scenes(model, scenes, cfg)?;
    let gts = ground_truths(scenes);
    caps.iter()
        .map(|&n| {
            let c = DetectConfig {
                rdn_top_n: n,
                ..cfg.clone()
            };
            let dets = detect_with_proposals(model, scenes, &props, &c)?;
            Ok(TopNRow {
                rdn_top_n: n,
                summary: summarize(&dets, &gts, iou_threshold, score_cutoff),
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WeightRow {
    pub eta: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    #[serde(flatten)]
    pub summary: EvalSummary,
}

/// Trains one model per `(eta, lambda1, lambda2)` triple and evaluates it.
pub fn sweep_weights(
    base: &TrainConfig,
    grid: &[(f64, f64, f64)],
    scenes: &[Scene],
    cfg: &DetectConfig,
    iou_threshold: f64,
    score_cutoff: f64,
) -> Result<Vec<WeightRow>> {
    let gts = ground_truths(scenes);
    grid.iter()
        .map(|&(eta, lambda1, lambda2)| {
            let tc = TrainConfig {
                hp: HyperParams {
                    eta,
                    lambda1,
                    lambda2,
                    ..base.hp.clone()
                },
                ..base.clone()
            };
            let (model, _) = train(&tc, |_| {})?;
            let dets = detect_scenes(&model, scenes, cfg)?;
            Ok(WeightRow {
                eta,
                lambda1,
                lambda2,
                summary: summarize(&dets, &gts, iou_threshold, score_cutoff),
            })
        })
        .collect()
}

/// A small randomly initialized model and sampled batches for checking the
/// analytic gradient against finite differences.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GradCheckSetup {
    pub spec: SceneSpec,
    pub scenes: usize,
    /// Large enough that the class terms are not saturated or flat.
    pub init_std: f64,
    pub anchors_per_scene: usize,
    pub rois_per_scene: usize,
    pub samples: usize,
    pub seed: u64,
}

impl Default for GradCheckSetup {
    fn default() -> Self {
        Self {
            spec: SceneSpec {
                image_w: 64,
                image_h: 64,
                max_objects: 2,
                ..Default::default()
            },
            scenes: 2,
            init_std: 0.3,
            anchors_per_scene: 64,
            rois_per_scene: 16,
            samples: 100,
            seed: 0,
        }
    }
}

/// Model, anchors, per-scene data and generator state behind
/// [`run_grad_check`], for checks on chosen parameters.
pub fn grad_check_data(
    setup: &GradCheckSetup,
    hp: &HyperParams,
) -> Result<(ToyModel, AnchorSet, Vec<SceneData>, ChaCha8Rng)> {
    let cfg = TrainConfig {
        hp: hp.clone(),
        spec: SceneSpec {
            seed: setup.seed,
            ..setup.spec.clone()
        },
        train_scenes: setup.scenes,
        seed: setup.seed,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(setup.seed);
    let (anchors, stats, data) = prepare_training(&cfg, &mut rng)?;
    let ac = AnchorConfig {
        grid_w: anchors.grid_w,
        grid_h: anchors.grid_h,
        feature_stride: cfg.spec.stride as f64,
        ..cfg.anchor_config.clone()
    };
    let model = ToyModel::init(ac, stats, setup.init_std, &mut rng);
    Ok((model, anchors, data, rng))
}

pub fn run_grad_check(setup: &GradCheckSetup, hp: &HyperParams) -> Result<GradCheckReport> {
    let (model, anchors, data, mut rng) = grad_check_data(setup, hp)?;
    let batches = data
        .iter()
        .map(|d| d.sample(&anchors, setup.anchors_per_scene, setup.rois_per_scene, &mut rng))
        .collect::<Result<Vec<SceneBatch>>>()?;
    grad_check(&model, &batches, hp, setup.samples, &mut rng)
}

/// Raw detections against detections plus recovered track boxes.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrackingReport {
    pub raw: EvalSummary,
    pub by_tracking: EvalSummary,
    pub recovered: usize,
}

pub fn frame_ground_truths(frames: &[Frame]) -> Vec<GroundTruth> {
    frames
        .iter()
        .flat_map(|f| f.gts.iter().map(move |g| GroundTruth::new(format!("f{}", f.frame), *g)))
        .collect()
}

/// Tracks a synthetic sequence and scores both detection sets against its
/// ground truth.
pub fn tracking_report(
    frames: &[Frame],
    cfg: &TrackerConfig,
    iou_threshold: f64,
    score_cutoff: f64,
) -> Result<(Vec<FrameOutput>, TrackingReport)> {
    let outputs = run_tracker(cfg, frames.iter().map(|f| (f.frame, f.detections.as_slice())))?;
    let gts = frame_ground_truths(frames);
    let raw: Vec<Detection> = frames.iter().flat_map(|f| f.detections.iter().cloned()).collect();
    let mut recovered = 0;
    let mut aug = Vec::new();
    for (fo, dets) in outputs.iter().zip(detect_by_tracking(&outputs)) {
        for (mut d, rec) in dets {
            if rec {
                recovered += 1;
                d.image_id = format!("f{}", fo.frame);
            }
            aug.push(d);
        }
    }
    let report = TrackingReport {
        raw: summarize(&raw, &gts, iou_threshold, score_cutoff),
        by_tracking: summarize(&aug, &gts, iou_threshold, score_cutoff),
        recovered,
    };
    Ok((outputs, report))
}
