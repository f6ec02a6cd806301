//! Rotatable position-sensitive pooling.
//!
//! An oriented region of interest is split into a `k x k` grid of bins in its
//! own frame: `i` runs across the short side (width), `j` along the long side
//! (height). Bin `(i, j)` of group `g` reads channel `k*k*g + k*(j-1) + (i-1)`
//! of the score-map stack and averages it over the integer feature pixels whose
//! centers fall in the bin.
//!
//! Local coordinates `(du, dv)` relate to map coordinates `(u, v)` through
//!
//! ```text
//! [u, v] = R(phi) [du, dv] + [u0, v0],   phi = theta* - 90
//! ```
//!
//! where `(u0, v0)` is the corner the bin grid starts from and `theta*` the
//! box angle. Membership is decided with the exact inverse of that map and the
//! half-open ranges `(i-1) w/3 <= du < i w/3`, `(j-1) h/3 <= dv < j h/3`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::boxcodec::RegressTarget;
use crate::error::{Error, Result};
use crate::geometry::{aabb, Point, RotatedBox};

/// Bins per side.
pub const K: usize = 3;
/// Regression dimensions pooled from the regression stack.
pub const REG_DIMS: usize = 8;

/// Channel-major stack of score maps; values are stored row-major per channel.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMapStack {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub values: Vec<f64>,
}

impl ScoreMapStack {
    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self {
            width,
            height,
            channels,
            values: vec![0.0; width * height * channels],
        }
    }

    /// Builds a stack by evaluating `f(channel, u, v)` at every pixel.
    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut s = Self::zeros(width, height, channels);
        for c in 0..channels {
            for v in 0..height {
                for u in 0..width {
                    s.values[(c * height + v) * width + u] = f(c, u, v);
                }
            }
        }
        s
    }

    pub fn plane_len(&self) -> usize {
        self.width * self.height
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.plane_len();
        &self.values[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, u: usize, v: usize) -> f64 {
        self.values[(c * self.height + v) * self.width + u]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Writes the stack as little-endian `f32` values plus a JSON sidecar at
    /// `<path>.json`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for v in &self.values {
            w.write_all(&(*v as f32).to_le_bytes())?;
        }
        w.flush()?;
        let meta = MapMeta {
            w: self.width,
            h: self.height,
            channels: self.channels,
            layout: LAYOUT.to_string(),
        };
        std::fs::write(sidecar_path(path), serde_json::to_string(&meta)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let meta: MapMeta = serde_json::from_str(&std::fs::read_to_string(sidecar_path(path))?)?;
        if meta.layout != LAYOUT {
            return Err(Error::Parse(format!("unsupported layout {:?}", meta.layout)));
        }
        let n = meta.w * meta.h * meta.channels;
        let mut bytes = Vec::with_capacity(n * 4);
        BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
        if bytes.len() != n * 4 {
            return Err(Error::ShapeMismatch(format!(
                "expected {} bytes, found {}",
                n * 4,
                bytes.len()
            )));
        }
        let values = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        Ok(Self {
            width: meta.w,
            height: meta.h,
            channels: meta.channels,
            values,
        })
    }
}

const LAYOUT: &str = "kps-v1";

#[derive(Debug, Serialize, Deserialize)]
struct MapMeta {
    w: usize,
    h: usize,
    channels: usize,
    layout: String,
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

/// Channel of bin `(i, j)` (1-based) for group `g`.
pub fn channel_index(k: usize, i: usize, j: usize, g: usize) -> usize {
    k * k * g + k * (j - 1) + (i - 1)
}

/// Derotation angle for a region whose long axis lies at `theta_star`:
/// `theta* - 90` on `(-90, 0]`, `90 - theta*` on `(0, 90]`.
pub fn pool_angle(theta_star: f64) -> Result<f64> {
    if !(theta_star > -90.0 && theta_star <= 90.0) {
        return Err(Error::AngleDomain(theta_star));
    }
    Ok(if theta_star <= 0.0 {
        theta_star - 90.0
    } else {
        90.0 - theta_star
    })
}

/// Rotation from the bin frame to the map frame, in degrees. It carries the
/// local `dv` axis onto the region's long axis for every `theta*`; it agrees
/// with [`pool_angle`] on `(-90, 0]` and at 90.
pub fn frame_angle(theta_star: f64) -> f64 {
    theta_star - 90.0
}

/// Maps an image-space box onto a feature grid with the given stride, whose
/// pixel `(u, v)` covers image area `[u s, (u+1) s) x [v s, (v+1) s)`.
pub fn to_feature_frame(b: &RotatedBox, stride: f64) -> RotatedBox {
    RotatedBox {
        cx: b.cx / stride - 0.5,
        cy: b.cy / stride - 0.5,
        w: b.w / stride,
        h: b.h / stride,
        theta: b.theta,
    }
}

/// Inverse of [`to_feature_frame`].
pub fn to_image_frame(b: &RotatedBox, stride: f64) -> RotatedBox {
    RotatedBox {
        cx: (b.cx + 0.5) * stride,
        cy: (b.cy + 0.5) * stride,
        w: b.w * stride,
        h: b.h * stride,
        theta: b.theta,
    }
}

/// How one bin reads a channel.
#[derive(Clone, Debug, PartialEq)]
pub enum BinSamples {
    /// Plain mean over these pixel indices (row-major).
    Mean(Vec<usize>),
    /// No pixel center fell in the bin: bilinear sample at the bin center.
    Bilinear([(usize, f64); 4]),
}

impl BinSamples {
    pub fn read(&self, plane: &[f64]) -> f64 {
        match self {
            BinSamples::Mean(px) => px.iter().map(|&p| plane[p]).sum::<f64>() / px.len() as f64,
            BinSamples::Bilinear(taps) => taps.iter().map(|&(p, w)| w * plane[p]).sum(),
        }
    }

    /// Calls `f(pixel, weight)` for every contributing pixel.
    pub fn for_each_weight(&self, mut f: impl FnMut(usize, f64)) {
        match self {
            BinSamples::Mean(px) => {
                let w = 1.0 / px.len() as f64;
                px.iter().for_each(|&p| f(p, w));
            }
            BinSamples::Bilinear(taps) => taps.iter().for_each(|&(p, w)| f(p, w)),
        }
    }

    pub fn is_fallback(&self) -> bool {
        matches!(self, BinSamples::Bilinear(_))
    }
}

/// Pixel membership of every bin of one region on a `width x height` grid.
/// Bin index is `k*(j-1) + (i-1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RoiSampling {
    pub k: usize,
    pub bins: Vec<BinSamples>,
}

impl RoiSampling {
    pub fn new(width: usize, height: usize, rroi: &RotatedBox, k: usize) -> Result<Self> {
        assert!(k >= 1, "k must be positive");
        if !rroi.is_finite() || width == 0 || height == 0 {
            return Err(Error::OutOfBounds);
        }
        let bb = aabb(rroi);
        let (wf, hf) = (width as f64, height as f64);
        if bb.xmax < -0.5 || bb.ymax < -0.5 || bb.xmin > wf - 0.5 || bb.ymin > hf - 0.5 {
            return Err(Error::OutOfBounds);
        }
        let phi = frame_angle(rroi.theta).to_radians();
        let origin = rroi.center() - Point::new(rroi.w / 2.0, rroi.h / 2.0).rotate(phi);
        let (s, c) = phi.sin_cos();
        let bw = rroi.w / k as f64;
        let bh = rroi.h / k as f64;
        let edges_u: Vec<f64> = (0..=k).map(|i| i as f64 * bw).collect();
        let edges_v: Vec<f64> = (0..=k).map(|j| j as f64 * bh).collect();

        let u_lo = bb.xmin.ceil().max(0.0) as usize;
        let v_lo = bb.ymin.ceil().max(0.0) as usize;
        let u_hi = (bb.xmax.floor().min(wf - 1.0)).max(-1.0);
        let v_hi = (bb.ymax.floor().min(hf - 1.0)).max(-1.0);

        let mut members: Vec<Vec<usize>> = vec![Vec::new(); k * k];
        if u_hi >= 0.0 && v_hi >= 0.0 {
            let (u_hi, v_hi) = (u_hi as usize, v_hi as usize);
            for v in v_lo..=v_hi {
                for u in u_lo..=u_hi {
                    let du_g = u as f64 - origin.x;
                    let dv_g = v as f64 - origin.y;
                    let du = c * du_g + s * dv_g;
                    let dv = -s * du_g + c * dv_g;
                    if let (Some(i), Some(j)) = (bin_of(du, &edges_u), bin_of(dv, &edges_v)) {
                        members[j * k + i].push(v * width + u);
                    }
                }
            }
        }

        let bins = members
            .into_iter()
            .enumerate()
            .map(|(b, px)| {
                if px.is_empty() {
                    let (i, j) = (b % k, b / k);
                    let local = Point::new((i as f64 + 0.5) * bw, (j as f64 + 0.5) * bh);
                    let p = origin + local.rotate(phi);
                    BinSamples::Bilinear(bilinear_taps(width, height, p))
                } else {
                    BinSamples::Mean(px)
                }
            })
            .collect();
        Ok(Self { k, bins })
    }

    pub fn has_fallback(&self) -> bool {
        self.bins.iter().any(BinSamples::is_fallback)
    }
}

fn bin_of(x: f64, edges: &[f64]) -> Option<usize> {
    let last = edges.len() - 1;
    if !(x >= edges[0] && x < edges[last]) {
        return None;
    }
    (0..last).find(|&b| x < edges[b + 1])
}

fn bilinear_taps(width: usize, height: usize, p: Point) -> [(usize, f64); 4] {
    let x = p.x.clamp(0.0, (width - 1) as f64);
    let y = p.y.clamp(0.0, (height - 1) as f64);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    [
        (y0 * width + x0, (1.0 - fx) * (1.0 - fy)),
        (y0 * width + x1, fx * (1.0 - fy)),
        (y1 * width + x0, (1.0 - fx) * fy),
        (y1 * width + x1, fx * fy),
    ]
}

/// Pooled values `r[g][bin]` for `groups` channel groups.
#[derive(Clone, Debug, PartialEq)]
pub struct PooledBins {
    pub k: usize,
    pub groups: usize,
    pub values: Vec<f64>,
}

impl PooledBins {
    /// Value of bin `(i, j)` (1-based) in group `g`.
    pub fn get(&self, i: usize, j: usize, g: usize) -> f64 {
        self.values[channel_index(self.k, i, j, g)]
    }

    pub fn group(&self, g: usize) -> &[f64] {
        let n = self.k * self.k;
        &self.values[g * n..(g + 1) * n]
    }
}

/// Pools every group of `maps` over a precomputed sampling.
pub fn pool_with(maps: &ScoreMapStack, sampling: &RoiSampling) -> PooledBins {
    let k = sampling.k;
    let kk = k * k;
    assert_eq!(maps.channels % kk, 0, "channel count must be a multiple of k*k");
    let groups = maps.channels / kk;
    let mut values = Vec::with_capacity(maps.channels);
    for g in 0..groups {
        for (b, bin) in sampling.bins.iter().enumerate() {
            values.push(bin.read(maps.channel(g * kk + b)));
        }
    }
    PooledBins { k, groups, values }
}

/// Position-sensitive pooling of `rroi` (in map coordinates) with `k = 3`.
pub fn rps_pool(maps: &ScoreMapStack, rroi: &RotatedBox) -> Result<PooledBins> {
    if !maps.channels.is_multiple_of(K * K) {
        return Err(Error::ShapeMismatch(format!(
            "{} channels is not a multiple of {}",
            maps.channels,
            K * K
        )));
    }
    let sampling = RoiSampling::new(maps.width, maps.height, rroi, K)?;
    Ok(pool_with(maps, &sampling))
}

/// Per-group sum over bins.
pub fn vote(bins: &PooledBins) -> Vec<f64> {
    (0..bins.groups).map(|g| bins.group(g).iter().sum()).collect()
}

/// Max-shifted softmax.
pub fn softmax_scores(r: &[f64]) -> Vec<f64> {
    let m = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = r.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

/// Pools the 72-channel regression stack and averages the bins of each of the
/// eight dimensions.
pub fn pool_regression(maps: &ScoreMapStack, rroi: &RotatedBox) -> Result<RegressTarget> {
    if maps.channels != K * K * REG_DIMS {
        return Err(Error::ShapeMismatch(format!(
            "regression stack needs {} channels, got {}",
            K * K * REG_DIMS,
            maps.channels
        )));
    }
    let bins = rps_pool(maps, rroi)?;
    Ok(average_vote(&bins))
}

/// Mean over the bins of each group, as an 8-d target.
pub fn average_vote(bins: &PooledBins) -> RegressTarget {
    let kk = (bins.k * bins.k) as f64;
    let v: [f64; REG_DIMS] = std::array::from_fn(|d| bins.group(d).iter().sum::<f64>() / kk);
    RegressTarget::from_array(v)
}
