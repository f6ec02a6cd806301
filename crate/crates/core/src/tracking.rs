//! SORT-style tracking of oriented boxes.
//!
//! Each track runs a Kalman filter over `(cx, cy, w, h, theta, v_cx, v_cy,
//! v_theta)`: center and angle move with constant velocity, the side lengths
//! follow a random walk. Detections are assigned to predicted boxes by an
//! optimal assignment on `1 - iou_rotated`, and pairs below the overlap gate
//! are rejected. Angle innovations use the shortest axial distance.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::Detection;
use crate::geometry::{iou_rotated, wrap_axial_deg, RotatedBox};

type State = SVector<f64, 8>;
type Cov = SMatrix<f64, 8, 8>;
type Meas = SVector<f64, 5>;
type MeasCov = SMatrix<f64, 5, 5>;
type Obs = SMatrix<f64, 5, 8>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    pub max_age: u32,
    pub min_hits: u32,
    pub iou_gate: f64,
    /// Measurement standard deviations: center (px), size (px), angle (deg).
    pub meas_pos_std: f64,
    pub meas_size_std: f64,
    pub meas_angle_std: f64,
    /// Process noise standard deviations per frame.
    pub proc_pos_std: f64,
    pub proc_vel_std: f64,
    pub proc_size_std: f64,
    pub proc_angle_std: f64,
    pub proc_spin_std: f64,
    /// Initial velocity uncertainty.
    pub init_vel_std: f64,
    pub init_spin_std: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            max_age: 3,
            min_hits: 2,
            iou_gate: 0.3,
            meas_pos_std: 1.0,
            meas_size_std: 1.0,
            meas_angle_std: 3.0,
            proc_pos_std: 0.3,
            proc_vel_std: 0.1,
            proc_size_std: 0.1,
            proc_angle_std: 0.3,
            proc_spin_std: 0.1,
            init_vel_std: 5.0,
            init_spin_std: 2.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrackStatus {
    Tentative,
    Confirmed,
    Dead,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Track {
    pub id: u64,
    pub state: State,
    pub cov: Cov,
    pub age: u32,
    pub hits: u32,
    pub time_since_update: u32,
    pub status: TrackStatus,
    /// Score of the last detection assigned to this track.
    pub last_score: f64,
}

fn measurement(b: &RotatedBox) -> Meas {
    Meas::new(b.cx, b.cy, b.w, b.h, b.theta)
}

fn observation() -> Obs {
    let mut h = Obs::zeros();
    for i in 0..5 {
        h[(i, i)] = 1.0;
    }
    h
}

fn transition() -> Cov {
    let mut f = Cov::identity();
    f[(0, 5)] = 1.0;
    f[(1, 6)] = 1.0;
    f[(4, 7)] = 1.0;
    f
}

fn process_noise(cfg: &TrackerConfig) -> Cov {
    let d = [
        cfg.proc_pos_std,
        cfg.proc_pos_std,
        cfg.proc_size_std,
        cfg.proc_size_std,
        cfg.proc_angle_std,
        cfg.proc_vel_std,
        cfg.proc_vel_std,
        cfg.proc_spin_std,
    ];
    Cov::from_diagonal(&SVector::from_iterator(d.iter().map(|s| s * s)))
}

fn measurement_noise(cfg: &TrackerConfig) -> MeasCov {
    let d = [
        cfg.meas_pos_std,
        cfg.meas_pos_std,
        cfg.meas_size_std,
        cfg.meas_size_std,
        cfg.meas_angle_std,
    ];
    MeasCov::from_diagonal(&SVector::from_iterator(d.iter().map(|s| s * s)))
}

impl Track {
    fn new(id: u64, det: &Detection, cfg: &TrackerConfig) -> Self {
        let z = measurement(&det.rbox);
        let mut state = State::zeros();
        state.fixed_rows_mut::<5>(0).copy_from(&z);
        let mut cov = Cov::zeros();
        cov.fixed_view_mut::<5, 5>(0, 0).copy_from(&measurement_noise(cfg));
        cov[(5, 5)] = cfg.init_vel_std.powi(2);
        cov[(6, 6)] = cfg.init_vel_std.powi(2);
        cov[(7, 7)] = cfg.init_spin_std.powi(2);
        let status = if cfg.min_hits <= 1 {
            TrackStatus::Confirmed
        } else {
            TrackStatus::Tentative
        };
        Track {
            id,
            state,
            cov,
            age: 0,
            hits: 1,
            time_since_update: 0,
            status,
            last_score: det.score,
        }
    }

    /// Current state as a canonical box.
    pub fn rbox(&self) -> RotatedBox {
        let s = &self.state;
        RotatedBox::new(s[0], s[1], s[2].abs().max(1e-6), s[3].abs().max(1e-6), s[4]).expect("finite track state")
    }

    pub fn velocity(&self) -> (f64, f64, f64) {
        (self.state[5], self.state[6], self.state[7])
    }

    /// Constant-velocity propagation; returns the predicted box.
    pub fn predict(&mut self, cfg: &TrackerConfig) -> RotatedBox {
        let f = transition();
        self.state = f * self.state;
        self.state[4] = wrap_axial_deg(self.state[4]);
        self.cov = f * self.cov * f.transpose() + process_noise(cfg);
        self.cov = (self.cov + self.cov.transpose()) * 0.5;
        self.age += 1;
        self.time_since_update += 1;
        self.rbox()
    }

    pub fn update(&mut self, det: &Detection, cfg: &TrackerConfig) {
        let h = observation();
        let mut y = measurement(&det.rbox) - h * self.state;
        y[4] = wrap_axial_deg(y[4]);
        let s = h * self.cov * h.transpose() + measurement_noise(cfg);
        let s_inv = s
            .try_inverse()
            .unwrap_or_else(|| s.pseudo_inverse(1e-15).expect("svd of innovation covariance"));
        let k = self.cov * h.transpose() * s_inv;
        self.state += k * y;
        self.state[4] = wrap_axial_deg(self.state[4]);
        // Joseph form keeps the covariance symmetric positive semi-definite
        let ikh = Cov::identity() - k * h;
        self.cov = ikh * self.cov * ikh.transpose() + k * measurement_noise(cfg) * k.transpose();
        self.cov = (self.cov + self.cov.transpose()) * 0.5;
        self.hits += 1;
        self.time_since_update = 0;
        self.last_score = det.score;
        if self.status == TrackStatus::Tentative && self.hits >= cfg.min_hits {
            self.status = TrackStatus::Confirmed;
        }
    }
}

/// Optimal assignment minimizing total cost over a rectangular matrix
/// (`cost[r][c]`). Returns `assignment[r] = Some(c)` for every row matched to
/// a real column.
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<Option<usize>> {
    let rows = cost.len();
    if rows == 0 {
        return Vec::new();
    }
    let cols = cost[0].len();
    let n = rows.max(cols);
    let big = cost.iter().flatten().fold(0.0f64, |m, &c| m.max(c.abs())) + 1.0;
    let at = |r: usize, c: usize| -> f64 {
        if r < rows && c < cols {
            cost[r][c]
        } else {
            big
        }
    };
    // potentials and matching, 1-based with sentinel column 0
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = at(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![None; rows];
    for j in 1..=n {
        let i = p[j];
        if i >= 1 && i <= rows && j <= cols {
            out[i - 1] = Some(j - 1);
        }
    }
    out
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Association {
    /// `(track index, detection index)`.
    pub matches: Vec<(usize, usize)>,
    pub unmatched_tracks: Vec<usize>,
    pub unmatched_detections: Vec<usize>,
}

/// Optimal assignment on `1 - iou_rotated`, dropping pairs below `iou_gate`.
pub fn associate(predicted: &[RotatedBox], detections: &[RotatedBox], iou_gate: f64) -> Association {
    let mut out = Association::default();
    if predicted.is_empty() || detections.is_empty() {
        out.unmatched_tracks = (0..predicted.len()).collect();
        out.unmatched_detections = (0..detections.len()).collect();
        return out;
    }
    let iou: Vec<Vec<f64>> = predicted
        .iter()
        .map(|t| detections.iter().map(|d| iou_rotated(t, d)).collect())
        .collect();
    let cost: Vec<Vec<f64>> = iou.iter().map(|r| r.iter().map(|v| 1.0 - v).collect()).collect();
    let assignment = hungarian(&cost);
    let mut det_used = vec![false; detections.len()];
    for (t, a) in assignment.iter().enumerate() {
        match a {
            Some(d) if iou[t][*d] >= iou_gate => {
                out.matches.push((t, *d));
                det_used[*d] = true;
            }
            _ => out.unmatched_tracks.push(t),
        }
    }
    out.unmatched_detections = (0..detections.len()).filter(|&d| !det_used[d]).collect();
    out
}

/// One tracked box emitted for a frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackOutput {
    pub frame: i64,
    pub track_id: u64,
    #[serde(flatten)]
    pub rbox: RotatedBox,
    /// Kalman prediction standing in for a missed detection.
    pub recovered: bool,
    #[serde(skip)]
    pub score: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FrameOutput {
    pub frame: i64,
    /// Confirmed tracks updated by a detection this frame.
    pub tracks: Vec<TrackOutput>,
    /// Confirmed tracks that missed a detection this frame.
    pub recovered: Vec<TrackOutput>,
    /// Input detections of this frame, unchanged.
    pub detections: Vec<Detection>,
}

#[derive(Clone, Debug)]
pub struct Tracker {
    pub config: TrackerConfig,
    pub tracks: Vec<Track>,
    next_id: u64,
    last_frame: Option<i64>,
}

impl Tracker {
    pub fn new(config: TrackerConfig) -> Self {
        Self {
            config,
            tracks: Vec::new(),
            next_id: 1,
            last_frame: None,
        }
    }

    /// Predict, associate, update, spawn and retire for one frame.
    pub fn step(&mut self, frame: i64, detections: &[Detection]) -> Result<FrameOutput> {
        let gap = match self.last_frame {
            Some(last) if frame <= last => return Err(Error::Sequencing { last, got: frame }),
            Some(last) => frame - last,
            None => 1,
        };
        self.last_frame = Some(frame);
        let cfg = self.config.clone();

        let mut predicted = Vec::with_capacity(self.tracks.len());
        for t in &mut self.tracks {
            let mut b = t.rbox();
            for _ in 0..gap {
                b = t.predict(&cfg);
            }
            predicted.push(b);
        }
        let det_boxes: Vec<RotatedBox> = detections.iter().map(|d| d.rbox).collect();
        let assoc = associate(&predicted, &det_boxes, cfg.iou_gate);

        for &(t, d) in &assoc.matches {
            self.tracks[t].update(&detections[d], &cfg);
        }
        let mut out = FrameOutput {
            frame,
            detections: detections.to_vec(),
            ..Default::default()
        };
        for t in &mut self.tracks {
            if t.time_since_update > cfg.max_age {
                t.status = TrackStatus::Dead;
            }
            if t.status != TrackStatus::Confirmed {
                continue;
            }
            let o = TrackOutput {
                frame,
                track_id: t.id,
                rbox: t.rbox(),
                recovered: t.time_since_update > 0,
                score: t.last_score,
            };
            if o.recovered {
                out.recovered.push(o);
            } else {
                out.tracks.push(o);
            }
        }
        self.tracks.retain(|t| t.status != TrackStatus::Dead);
        for &d in &assoc.unmatched_detections {
            let t = Track::new(self.next_id, &detections[d], &cfg);
            self.next_id += 1;
            if t.status == TrackStatus::Confirmed {
                out.tracks.push(TrackOutput {
                    frame,
                    track_id: t.id,
                    rbox: t.rbox(),
                    recovered: false,
                    score: t.last_score,
                });
            }
            self.tracks.push(t);
        }
        Ok(out)
    }
}

/// Runs a fresh tracker over `(frame, detections)` pairs in order.
pub fn run_tracker<'a, I>(config: &TrackerConfig, frames: I) -> Result<Vec<FrameOutput>>
where
    I: IntoIterator<Item = (i64, &'a [Detection])>,
{
    let mut tracker = Tracker::new(config.clone());
    frames.into_iter().map(|(f, dets)| tracker.step(f, dets)).collect()
}

/// Frame detections plus recovered track predictions, which inherit the
/// track's last detection score.
pub fn detect_by_tracking(outputs: &[FrameOutput]) -> Vec<Vec<(Detection, bool)>> {
    outputs
        .iter()
        .map(|fo| {
            let image_id = fo
                .detections
                .first()
                .map(|d| d.image_id.clone())
                .unwrap_or_else(|| format!("f{}", fo.frame));
            fo.detections
                .iter()
                .cloned()
                .map(|d| (d, false))
                .chain(
                    fo.recovered
                        .iter()
                        .map(|r| (Detection::new(image_id.clone(), r.rbox, r.score), true)),
                )
                .collect()
        })
        .collect()
}
