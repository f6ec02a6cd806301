//! Synthetic scenes, noisy detections and moving-object sequences.
//!
//! All randomness comes from `ChaCha8Rng` seeded with [`SceneSpec::seed`], so
//! output is identical across runs and platforms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::Detection;
use crate::geometry::{aabb, iou_rotated, Point, RotatedBox};
use crate::pooling::ScoreMapStack;

/// Feature channels painted by [`gen_scene`]: box coverage and a boundary
/// response.
pub const FEATURE_CHANNELS: usize = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectionNoise {
    /// Center jitter, pixels.
    pub center_sigma: f64,
    /// Side-length jitter, pixels.
    pub size_sigma: f64,
    pub angle_sigma_deg: f64,
    pub drop_rate: f64,
    /// Expected clutter boxes per ground-truth box.
    pub clutter_rate: f64,
    /// True detections score `1 - score_jitter * U(0, 1)`.
    pub score_jitter: f64,
}

impl Default for DetectionNoise {
    fn default() -> Self {
        Self {
            center_sigma: 1.0,
            size_sigma: 0.5,
            angle_sigma_deg: 5.0,
            drop_rate: 0.1,
            clutter_rate: 0.1,
            score_jitter: 0.3,
        }
    }
}

impl DetectionNoise {
    pub fn none() -> Self {
        Self {
            center_sigma: 0.0,
            size_sigma: 0.0,
            angle_sigma_deg: 0.0,
            drop_rate: 0.0,
            clutter_rate: 0.0,
            score_jitter: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub image_w: usize,
    pub image_h: usize,
    /// Image pixels per feature cell.
    pub stride: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Short side range, pixels.
    pub w_range: (f64, f64),
    /// Long side range, pixels.
    pub h_range: (f64, f64),
    /// Long-axis angle range, degrees.
    pub angle_range: (f64, f64),
    /// Standard deviation of the Gaussian noise added to the feature grid.
    pub feature_noise: f64,
    /// Maximum rotated overlap between placed objects.
    pub max_overlap: f64,
    pub noise: DetectionNoise,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            image_w: 128,
            image_h: 128,
            stride: 4,
            min_objects: 1,
            max_objects: 5,
            w_range: (12.0, 20.0),
            h_range: (24.0, 40.0),
            angle_range: (-90.0, 90.0),
            feature_noise: 0.1,
            max_overlap: 0.1,
            noise: DetectionNoise::default(),
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.image_w == 0 || self.image_h == 0 || self.stride == 0 {
            return bad("image size and stride must be positive");
        }
        if !self.image_w.is_multiple_of(self.stride) || !self.image_h.is_multiple_of(self.stride) {
            return bad("image size must be a multiple of the stride");
        }
        if self.min_objects > self.max_objects {
            return bad("min_objects exceeds max_objects");
        }
        let range_ok = |r: (f64, f64)| r.0 > 0.0 && r.0 <= r.1 && r.1.is_finite();
        if !range_ok(self.w_range) || !range_ok(self.h_range) {
            return bad("size ranges must be positive and ordered");
        }
        if !(self.angle_range.0 <= self.angle_range.1) {
            return bad("angle range must be ordered");
        }
        if self.feature_noise < 0.0 || self.max_overlap < 0.0 {
            return bad("noise and overlap must be non-negative");
        }
        let n = &self.noise;
        if [n.center_sigma, n.size_sigma, n.angle_sigma_deg, n.score_jitter]
            .iter()
            .any(|v| *v < 0.0)
        {
            return bad("noise magnitudes must be non-negative");
        }
        if !(0.0..=1.0).contains(&n.drop_rate) || !(0.0..=1.0).contains(&n.clutter_rate) {
            return bad("rates must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&n.score_jitter) {
            return bad("score_jitter must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn grid_w(&self) -> usize {
        self.image_w / self.stride
    }

    pub fn grid_h(&self) -> usize {
        self.image_h / self.stride
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub gts: Vec<RotatedBox>,
    /// `FEATURE_CHANNELS x grid_h x grid_w` feature grid.
    pub features: ScoreMapStack,
}

const PLACEMENT_ATTEMPTS: usize = 1000;

fn uniform<R: Rng + ?Sized>(rng: &mut R, r: (f64, f64)) -> f64 {
    if r.0 == r.1 {
        r.0
    } else {
        rng.random_range(r.0..r.1)
    }
}

fn inside_image(b: &RotatedBox, spec: &SceneSpec) -> bool {
    let a = aabb(b);
    a.xmin >= 0.0 && a.ymin >= 0.0 && a.xmax <= spec.image_w as f64 && a.ymax <= spec.image_h as f64
}

fn sample_box<R: Rng + ?Sized>(rng: &mut R, spec: &SceneSpec) -> Result<RotatedBox> {
    let w = uniform(rng, spec.w_range);
    let h = uniform(rng, spec.h_range);
    let theta = uniform(rng, spec.angle_range);
    let cx = rng.random_range(0.0..spec.image_w as f64);
    let cy = rng.random_range(0.0..spec.image_h as f64);
    RotatedBox::new(cx, cy, w.min(h), w.max(h), theta)
}

/// Draws non-overlapping boxes fully inside the image.
pub fn place_boxes<R: Rng + ?Sized>(rng: &mut R, spec: &SceneSpec) -> Result<Vec<RotatedBox>> {
    let count = rng.random_range(spec.min_objects..=spec.max_objects);
    let mut gts: Vec<RotatedBox> = Vec::with_capacity(count);
    let mut attempts = 0;
    while gts.len() < count {
        attempts += 1;
        if attempts > PLACEMENT_ATTEMPTS {
            return Err(Error::Placement(PLACEMENT_ATTEMPTS));
        }
        let b = sample_box(rng, spec)?;
        if inside_image(&b, spec) && gts.iter().all(|g| iou_rotated(g, &b) < spec.max_overlap) {
            gts.push(b);
        }
    }
    Ok(gts)
}

/// Fraction of each feature cell covered by any box, from 4x4 sub-samples per
/// image pixel block.
fn coverage(gts: &[RotatedBox], spec: &SceneSpec) -> Vec<f64> {
    const SUB: usize = 4;
    let (gw, gh) = (spec.grid_w(), spec.grid_h());
    let s = spec.stride as f64;
    let mut cov = vec![0.0; gw * gh];
    let frames: Vec<(Point, Point, f64, f64)> = gts
        .iter()
        .map(|b| {
            let d = b.long_axis();
            (b.center(), d, b.h / 2.0, b.w / 2.0)
        })
        .collect();
    for row in 0..gh {
        for col in 0..gw {
            let mut hit = 0usize;
            for sy in 0..SUB {
                for sx in 0..SUB {
                    let p = Point::new(
                        (col as f64 + (sx as f64 + 0.5) / SUB as f64) * s,
                        (row as f64 + (sy as f64 + 0.5) / SUB as f64) * s,
                    );
                    let inside = frames.iter().any(|&(c, d, hh, hw)| {
                        let r = p - c;
                        r.dot(d).abs() <= hh && r.cross(d).abs() <= hw
                    });
                    hit += inside as usize;
                }
            }
            cov[row * gw + col] = hit as f64 / (SUB * SUB) as f64;
        }
    }
    cov
}

/// Paints the two-channel feature grid for a set of boxes.
pub fn paint_features<R: Rng + ?Sized>(gts: &[RotatedBox], spec: &SceneSpec, rng: &mut R) -> ScoreMapStack {
    let (gw, gh) = (spec.grid_w(), spec.grid_h());
    let cov = coverage(gts, spec);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut features = ScoreMapStack::zeros(gw, gh, FEATURE_CHANNELS);
    let n = gw * gh;
    for (i, &c) in cov.iter().enumerate() {
        features.values[i] = c;
        features.values[n + i] = 4.0 * c * (1.0 - c);
    }
    if spec.feature_noise > 0.0 {
        for v in features.values.iter_mut() {
            *v += spec.feature_noise * normal.sample(rng);
        }
    }
    features
}

/// Generates one scene from `spec.seed`.
pub fn gen_scene(spec: &SceneSpec) -> Result<Scene> {
    gen_scene_with(spec, &mut spec.rng())
}

pub fn gen_scene_with<R: Rng + ?Sized>(spec: &SceneSpec, rng: &mut R) -> Result<Scene> {
    spec.validate()?;
    let gts = place_boxes(rng, spec)?;
    let features = paint_features(&gts, spec, rng);
    Ok(Scene { gts, features })
}

/// Generates `count` scenes from one seeded stream.
pub fn gen_scenes(spec: &SceneSpec, count: usize) -> Result<Vec<Scene>> {
    let mut rng = spec.rng();
    (0..count).map(|_| gen_scene_with(spec, &mut rng)).collect()
}

fn perturb<R: Rng + ?Sized>(b: &RotatedBox, noise: &DetectionNoise, rng: &mut R) -> Result<RotatedBox> {
    let g = |rng: &mut R, s: f64| {
        if s > 0.0 {
            Normal::new(0.0, s).expect("finite sigma").sample(rng)
        } else {
            0.0
        }
    };
    let cx = b.cx + g(rng, noise.center_sigma);
    let cy = b.cy + g(rng, noise.center_sigma);
    let w = (b.w + g(rng, noise.size_sigma)).max(0.5);
    let h = (b.h + g(rng, noise.size_sigma)).max(0.5);
    let theta = b.theta + g(rng, noise.angle_sigma_deg);
    RotatedBox::new(cx, cy, w, h, theta)
}

/// Perturbs, drops and clutters ground truth into scored detections for one
/// image.
pub fn gen_detections<R: Rng + ?Sized>(
    image_id: &str,
    gts: &[RotatedBox],
    spec: &SceneSpec,
    rng: &mut R,
) -> Result<Vec<Detection>> {
    spec.validate()?;
    let noise = &spec.noise;
    let mut dets = Vec::new();
    for gt in gts {
        // draw every variate so the stream does not depend on the drop outcome
        let dropped = rng.random::<f64>() < noise.drop_rate;
        let b = perturb(gt, noise, rng)?;
        let score = 1.0 - noise.score_jitter * rng.random::<f64>();
        if !dropped {
            dets.push(Detection::new(image_id, b, score));
        }
    }
    for _ in 0..gts.len().max(1) {
        if rng.random::<f64>() < noise.clutter_rate {
            let b = sample_box(rng, spec)?;
            let score = 0.4 * rng.random::<f64>();
            dets.push(Detection::new(image_id, b, score));
        }
    }
    Ok(dets)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Motion {
    Stationary,
    /// Per-object velocity drawn uniformly with speed in `speed` (pixels per
    /// frame) and spin in `spin` (degrees per frame).
    ConstantVelocity {
        speed: (f64, f64),
        spin: (f64, f64),
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub frame: i64,
    pub gts: Vec<RotatedBox>,
    pub detections: Vec<Detection>,
}

/// Moves the objects of one scene with constant velocity, reflecting off the
/// image border, and emits noisy detections per frame.
pub fn gen_sequence(spec: &SceneSpec, frames: usize, motion: &Motion) -> Result<Vec<Frame>> {
    spec.validate()?;
    let mut rng = spec.rng();
    let mut objects = place_boxes(&mut rng, spec)?;
    let mut vel: Vec<(f64, f64, f64)> = objects
        .iter()
        .map(|_| match motion {
            Motion::Stationary => (0.0, 0.0, 0.0),
            Motion::ConstantVelocity { speed, spin } => {
                let s = uniform(&mut rng, *speed);
                let dir = rng.random_range(0.0..std::f64::consts::TAU);
                let mut w = uniform(&mut rng, *spin);
                if rng.random::<bool>() {
                    w = -w;
                }
                (s * dir.cos(), s * dir.sin(), w)
            }
        })
        .collect();
    let mut out = Vec::with_capacity(frames);
    for f in 0..frames {
        if f > 0 {
            for (b, v) in objects.iter_mut().zip(vel.iter_mut()) {
                step_object(b, v, spec)?;
            }
        }
        let detections = gen_detections(&format!("f{f}"), &objects, spec, &mut rng)?;
        out.push(Frame {
            frame: f as i64,
            gts: objects.clone(),
            detections,
        });
    }
    Ok(out)
}

fn step_object(b: &mut RotatedBox, v: &mut (f64, f64, f64), spec: &SceneSpec) -> Result<()> {
    let mut next = RotatedBox::new(b.cx + v.0, b.cy + v.1, b.w, b.h, b.theta + v.2)?;
    let a = aabb(&next);
    let mut bounced = false;
    if a.xmin < 0.0 || a.xmax > spec.image_w as f64 {
        v.0 = -v.0;
        bounced = true;
    }
    if a.ymin < 0.0 || a.ymax > spec.image_h as f64 {
        v.1 = -v.1;
        bounced = true;
    }
    if bounced {
        next = RotatedBox::new(b.cx + v.0, b.cy + v.1, b.w, b.h, b.theta + v.2)?;
        if !inside_image(&next, spec) {
            // spin pushed the corners out: stop spinning
            v.2 = 0.0;
            next = RotatedBox::new(b.cx + v.0, b.cy + v.1, b.w, b.h, b.theta)?;
        }
    }
    *b = next;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec_one() -> SceneSpec {
        SceneSpec {
            min_objects: 1,
            max_objects: 1,
            feature_noise: 0.0,
            seed: 7,
            ..Default::default()
        }
    }

    #[test]
    fn single_clean_object() {
        let s = gen_scene(&spec_one()).unwrap();
        assert_eq!(s.gts.len(), 1);
        let g = s.gts[0];
        // a cell whose center is deep inside the box is fully covered
        let stride = 4.0;
        let mut interior = 0;
        for v in 0..32 {
            for u in 0..32 {
                let p = Point::new((u as f64 + 0.5) * stride, (v as f64 + 0.5) * stride);
                let r = p - g.center();
                let d = g.long_axis();
                if r.dot(d).abs() <= g.h / 2.0 - 3.0 && r.cross(d).abs() <= g.w / 2.0 - 3.0 {
                    interior += 1;
                    assert_eq!(s.features.get(0, u, v), 1.0);
                    assert_eq!(s.features.get(1, u, v), 0.0);
                }
            }
        }
        assert!(interior > 0);
        assert!(s.features.channel(0).iter().all(|&c| (0.0..=1.0).contains(&c)));
    }

    #[test]
    fn deterministic_under_seed() {
        let spec = SceneSpec {
            seed: 42,
            ..Default::default()
        };
        assert_eq!(gen_scene(&spec).unwrap(), gen_scene(&spec).unwrap());
        let other = SceneSpec {
            seed: 43,
            ..Default::default()
        };
        assert_ne!(gen_scene(&spec).unwrap().gts, gen_scene(&other).unwrap().gts);
    }

    #[test]
    fn boxes_are_canonical_inside_and_separated() {
        let spec = SceneSpec {
            seed: 3,
            ..Default::default()
        };
        for scene in gen_scenes(&spec, 50).unwrap() {
            assert!((1..=5).contains(&scene.gts.len()));
            for (i, a) in scene.gts.iter().enumerate() {
                assert!(a.w <= a.h && a.theta > -90.0 && a.theta <= 90.0);
                assert!(inside_image(a, &spec));
                for b in &scene.gts[i + 1..] {
                    assert!(iou_rotated(a, b) < 0.1);
                }
            }
        }
    }

    #[test]
    fn clean_detections_equal_ground_truth() {
        let spec = SceneSpec {
            noise: DetectionNoise::none(),
            ..spec_one()
        };
        let s = gen_scene(&spec).unwrap();
        let dets = gen_detections("a", &s.gts, &spec, &mut spec.rng()).unwrap();
        assert_eq!(dets.len(), 1);
        assert_eq!(dets[0].rbox, s.gts[0]);
        assert_eq!(dets[0].score, 1.0);
    }

    #[test]
    fn full_drop_leaves_clutter_only() {
        let noise = DetectionNoise {
            drop_rate: 1.0,
            clutter_rate: 1.0,
            ..DetectionNoise::default()
        };
        let spec = SceneSpec {
            noise,
            seed: 5,
            ..Default::default()
        };
        let s = gen_scene(&spec).unwrap();
        let dets = gen_detections("a", &s.gts, &spec, &mut spec.rng()).unwrap();
        assert_eq!(dets.len(), s.gts.len());
        assert!(dets.iter().all(|d| d.score < 0.4));
    }

    #[test]
    fn impossible_placement_errors() {
        let spec = SceneSpec {
            min_objects: 50,
            max_objects: 50,
            w_range: (30.0, 30.0),
            h_range: (60.0, 60.0),
            ..Default::default()
        };
        assert!(matches!(gen_scene(&spec), Err(Error::Placement(_))));
    }

    #[test]
    fn stationary_sequence_repeats() {
        let spec = SceneSpec {
            noise: DetectionNoise::none(),
            seed: 9,
            ..Default::default()
        };
        let seq = gen_sequence(&spec, 5, &Motion::Stationary).unwrap();
        for f in &seq[1..] {
            assert_eq!(f.gts, seq[0].gts);
        }
    }

    #[test]
    fn linear_motion_moves_on_a_line() {
        let spec = SceneSpec {
            min_objects: 1,
            max_objects: 1,
            noise: DetectionNoise::none(),
            seed: 11,
            ..Default::default()
        };
        let motion = Motion::ConstantVelocity {
            speed: (0.5, 0.5),
            spin: (0.0, 0.0),
        };
        let seq = gen_sequence(&spec, 6, &motion).unwrap();
        let c: Vec<Point> = seq.iter().map(|f| f.gts[0].center()).collect();
        let d = c[1] - c[0];
        assert!((d.norm() - 0.5).abs() < 1e-9);
        for k in 1..c.len() {
            let step = c[k] - c[k - 1];
            // either the same step or reflected in one axis at the border
            assert!((step.norm() - 0.5).abs() < 1e-9);
            assert!((step.x.abs() - d.x.abs()).abs() < 1e-9);
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        let spec = SceneSpec {
            image_w: 130,
            ..Default::default()
        };
        assert!(spec.validate().is_err());
        let spec = SceneSpec {
            noise: DetectionNoise {
                drop_rate: 1.5,
                ..Default::default()
            },
            ..Default::default()
        };
        assert!(spec.validate().is_err());
    }
}
