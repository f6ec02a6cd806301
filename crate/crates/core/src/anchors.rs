//! Batch-averaged rotatable anchors.
//!
//! Anchor sizes come from the mean ground-truth width and height of a training
//! mini-batch, scaled by each factor in [`AnchorConfig::scales`] and laid out
//! at every angle in [`AnchorConfig::angles`] over each feature cell.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::RotatedBox;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnchorConfig {
    /// Long-axis angles in degrees.
    pub angles: Vec<f64>,
    /// Scale factors applied to the batch-mean size.
    pub scales: Vec<f64>,
    /// Image pixels per feature cell.
    pub feature_stride: f64,
    pub grid_w: usize,
    pub grid_h: usize,
}

impl Default for AnchorConfig {
    fn default() -> Self {
        Self {
            angles: vec![-45.0, 0.0, 45.0, 90.0],
            scales: vec![0.5, 1.0, 2.0],
            feature_stride: 4.0,
            grid_w: 32,
            grid_h: 32,
        }
    }
}

impl AnchorConfig {
    pub fn anchors_per_cell(&self) -> usize {
        self.angles.len() * self.scales.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.feature_stride > 0.0) {
            return Err(Error::Config("feature_stride must be positive".into()));
        }
        if self.grid_w == 0 || self.grid_h == 0 {
            return Err(Error::Config("grid dimensions must be >= 1".into()));
        }
        if self.angles.is_empty() || self.scales.is_empty() {
            return Err(Error::Config("need at least one angle and one scale".into()));
        }
        if self.scales.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::Config("scales must be positive".into()));
        }
        if self.angles.iter().any(|a| !a.is_finite()) {
            return Err(Error::Config("angles must be finite".into()));
        }
        Ok(())
    }
}

/// Mean ground-truth size over a mini-batch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchStats {
    pub w_hat: f64,
    pub h_hat: f64,
    pub n_boxes: usize,
}

/// Averages `(w, h)` over every box of every image, each box weighted equally.
pub fn bar_stats<B: AsRef<[RotatedBox]>>(batch: &[B]) -> Result<BatchStats> {
    let mut n = 0usize;
    let (mut sw, mut sh) = (0.0, 0.0);
    for image in batch {
        for b in image.as_ref() {
            sw += b.w;
            sh += b.h;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::NoGroundTruth);
    }
    Ok(BatchStats {
        w_hat: sw / n as f64,
        h_hat: sh / n as f64,
        n_boxes: n,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    #[serde(flatten)]
    pub rbox: RotatedBox,
    /// Row-major feature cell index.
    pub cell: usize,
    pub angle_idx: usize,
    pub scale_idx: usize,
    /// Regression normalizers: the scaled batch-mean width and height.
    pub kw: f64,
    pub kh: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnchorSet {
    pub anchors: Vec<Anchor>,
    pub grid_w: usize,
    pub grid_h: usize,
    pub per_cell: usize,
}

impl AnchorSet {
    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn boxes(&self) -> impl Iterator<Item = &RotatedBox> {
        self.anchors.iter().map(|a| &a.rbox)
    }

    /// Position of an anchor within its cell's template bank.
    pub fn template_of(&self, idx: usize) -> usize {
        idx % self.per_cell
    }
}

/// Lays one anchor per `(angle, scale)` template over every feature cell.
///
/// Anchors are ordered by cell (row-major), then angle, then scale, so anchor
/// `n * per_cell + k` is template `k` at cell `n`.
pub fn generate_anchors(cfg: &AnchorConfig, stats: &BatchStats) -> Result<AnchorSet> {
    cfg.validate()?;
    if !(stats.w_hat > 0.0 && stats.h_hat > 0.0) {
        return Err(Error::Config("batch statistics must be positive".into()));
    }
    // the template angle always names the long axis
    let short = stats.w_hat.min(stats.h_hat);
    let long = stats.w_hat.max(stats.h_hat);
    let per_cell = cfg.anchors_per_cell();
    let mut anchors = Vec::with_capacity(cfg.grid_w * cfg.grid_h * per_cell);
    for row in 0..cfg.grid_h {
        for col in 0..cfg.grid_w {
            let cx = (col as f64 + 0.5) * cfg.feature_stride;
            let cy = (row as f64 + 0.5) * cfg.feature_stride;
            for (ai, &angle) in cfg.angles.iter().enumerate() {
                for (si, &kappa) in cfg.scales.iter().enumerate() {
                    let rbox = RotatedBox::new(cx, cy, kappa * short, kappa * long, angle)?;
                    anchors.push(Anchor {
                        rbox,
                        cell: row * cfg.grid_w + col,
                        angle_idx: ai,
                        scale_idx: si,
                        kw: kappa * stats.w_hat,
                        kh: kappa * stats.h_hat,
                    });
                }
            }
        }
    }
    Ok(AnchorSet {
        anchors,
        grid_w: cfg.grid_w,
        grid_h: cfg.grid_h,
        per_cell,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rb(w: f64, h: f64) -> RotatedBox {
        RotatedBox::new(0.0, 0.0, w, h, 90.0).unwrap()
    }

    #[test]
    fn stats_examples() {
        let s = bar_stats(&[vec![rb(2.0, 4.0)]]).unwrap();
        assert_eq!((s.w_hat, s.h_hat, s.n_boxes), (2.0, 4.0, 1));
        let s = bar_stats(&[vec![rb(2.0, 4.0)], vec![rb(4.0, 8.0)]]).unwrap();
        assert_eq!((s.w_hat, s.h_hat), (3.0, 6.0));
    }

    #[test]
    fn stats_weight_boxes_not_images() {
        let s = bar_stats(&[vec![rb(1.0, 1.0), rb(1.0, 1.0), rb(1.0, 1.0)], vec![rb(5.0, 5.0)]]).unwrap();
        assert_eq!(s.w_hat, 2.0);
    }

    #[test]
    fn stats_empty_batch() {
        let empty: Vec<Vec<RotatedBox>> = vec![vec![], vec![]];
        assert!(matches!(bar_stats(&empty), Err(Error::NoGroundTruth)));
    }

    #[test]
    fn default_grid_count() {
        let stats = BatchStats {
            w_hat: 10.0,
            h_hat: 20.0,
            n_boxes: 1,
        };
        let set = generate_anchors(&AnchorConfig::default(), &stats).unwrap();
        assert_eq!(set.len(), 32 * 32 * 12);
    }

    #[test]
    fn single_anchor_at_cell_center() {
        let cfg = AnchorConfig {
            angles: vec![0.0],
            scales: vec![1.0],
            feature_stride: 8.0,
            grid_w: 1,
            grid_h: 1,
        };
        let stats = BatchStats {
            w_hat: 3.0,
            h_hat: 6.0,
            n_boxes: 1,
        };
        let set = generate_anchors(&cfg, &stats).unwrap();
        assert_eq!(set.len(), 1);
        let a = set.anchors[0].rbox;
        assert_eq!((a.cx, a.cy, a.w, a.h, a.theta), (4.0, 4.0, 3.0, 6.0, 0.0));
    }

    #[test]
    fn scale_two_quadruples_area() {
        let stats = BatchStats {
            w_hat: 3.0,
            h_hat: 7.0,
            n_boxes: 1,
        };
        let set = generate_anchors(&AnchorConfig::default(), &stats).unwrap();
        for cell in set.anchors.chunks(set.per_cell) {
            for pair in cell.chunks(3) {
                assert!((pair[2].rbox.area() - 4.0 * pair[1].rbox.area()).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn skewed_stats_keep_canonical_form() {
        let stats = BatchStats {
            w_hat: 9.0,
            h_hat: 4.0,
            n_boxes: 1,
        };
        let set = generate_anchors(&AnchorConfig::default(), &stats).unwrap();
        for a in &set.anchors {
            assert!(a.rbox.w <= a.rbox.h);
            assert!(a.rbox.theta > -90.0 && a.rbox.theta <= 90.0);
        }
    }

    #[test]
    fn rejects_bad_config() {
        let stats = BatchStats {
            w_hat: 1.0,
            h_hat: 1.0,
            n_boxes: 1,
        };
        let cfg = AnchorConfig {
            feature_stride: 0.0,
            ..Default::default()
        };
        assert!(generate_anchors(&cfg, &stats).is_err());
        let cfg = AnchorConfig {
            grid_w: 0,
            ..Default::default()
        };
        assert!(generate_anchors(&cfg, &stats).is_err());
    }
}
