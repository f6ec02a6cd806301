//! Fixed feature stem between the synthetic grid and the learned heads.
//!
//! The heads are 1x1 linear maps, so everything they can see about a region
//! comes from per-cell values. The stem adds smoothed coverage at three scales
//! and image-frame coverage gradients, which give each pooled bin a direction
//! in the same frame as the vertex offsets. Nothing here is learned.

use crate::error::{Error, Result};
use crate::pooling::ScoreMapStack;
use crate::synth::FEATURE_CHANNELS;

/// Smoothing scales, feature cells.
pub const STEM_SIGMAS: [f64; 3] = [1.0, 2.0, 3.0];

/// Raw channels, one smoothed coverage per scale, one gradient pair per
/// scale, and the coarse gradient split into inside and outside parts.
pub const STEM_CHANNELS: usize = FEATURE_CHANNELS + 3 * STEM_SIGMAS.len() + 4;

fn kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as i64;
    let k: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian blur, zero outside the grid.
pub fn blur(plane: &[f64], width: usize, height: usize, sigma: f64) -> Vec<f64> {
    let k = kernel(sigma);
    let r = (k.len() / 2) as i64;
    let mut tmp = vec![0.0; plane.len()];
    for v in 0..height {
        for u in 0..width {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let x = u as i64 + i as i64 - r;
                if (0..width as i64).contains(&x) {
                    acc += kv * plane[v * width + x as usize];
                }
            }
            tmp[v * width + u] = acc;
        }
    }
    let mut out = vec![0.0; plane.len()];
    for v in 0..height {
        for u in 0..width {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let y = v as i64 + i as i64 - r;
                if (0..height as i64).contains(&y) {
                    acc += kv * tmp[y as usize * width + u];
                }
            }
            out[v * width + u] = acc;
        }
    }
    out
}

/// Central differences, one-sided at the border.
pub fn gradient(plane: &[f64], width: usize, height: usize) -> (Vec<f64>, Vec<f64>) {
    let at = |u: usize, v: usize| plane[v * width + u];
    let mut gx = vec![0.0; plane.len()];
    let mut gy = vec![0.0; plane.len()];
    for v in 0..height {
        for u in 0..width {
            let (l, r) = (u.saturating_sub(1), (u + 1).min(width - 1));
            let (d, t) = (v.saturating_sub(1), (v + 1).min(height - 1));
            if r > l {
                gx[v * width + u] = (at(r, v) - at(l, v)) / (r - l) as f64;
            }
            if t > d {
                gy[v * width + u] = (at(u, t) - at(u, d)) / (t - d) as f64;
            }
        }
    }
    (gx, gy)
}

pub fn stem(features: &ScoreMapStack) -> Result<ScoreMapStack> {
    if features.channels != FEATURE_CHANNELS {
        return Err(Error::ShapeMismatch(format!(
            "stem expects {FEATURE_CHANNELS} channels, got {}",
            features.channels
        )));
    }
    let (w, h) = (features.width, features.height);
    let coverage = features.channel(0);
    let mut planes: Vec<Vec<f64>> = (0..FEATURE_CHANNELS).map(|c| features.channel(c).to_vec()).collect();
    let smooth: Vec<Vec<f64>> = STEM_SIGMAS.iter().map(|&s| blur(coverage, w, h, s)).collect();
    planes.extend(smooth.iter().cloned());
    let grads: Vec<(Vec<f64>, Vec<f64>)> = smooth.iter().map(|p| gradient(p, w, h)).collect();
    for (gx, gy) in &grads {
        planes.push(gx.clone());
        planes.push(gy.clone());
    }
    let inside = &smooth[0];
    let (gx, gy) = grads.last().expect("at least one scale");
    for g in [gx, gy] {
        planes.push(g.iter().zip(inside).map(|(g, c)| g * c).collect());
        planes.push(g.iter().zip(inside).map(|(g, c)| g * (1.0 - c)).collect());
    }
    debug_assert_eq!(planes.len(), STEM_CHANNELS);
    let mut out = ScoreMapStack::zeros(w, h, STEM_CHANNELS);
    let n = out.plane_len();
    for (c, p) in planes.iter().enumerate() {
        out.values[c * n..(c + 1) * n].copy_from_slice(p);
    }
    Ok(out)
}
