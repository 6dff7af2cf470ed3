use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::LatentSubject;
use crate::vesselgraph::{draw, BinaryMask};

/// Ground truth returned alongside a rendered tree.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeStats {
    /// Number of traced branch segments (the root path counts as one).
    pub branches: usize,
    /// Mean arc/chord ratio over branches.
    pub mean_tortuosity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeConfig {
    pub size: usize,
    /// Walk step in pixels.
    pub step: f64,
    pub max_generation: usize,
    /// Arc length of the root path.
    pub root_length: f64,
    /// Child length relative to its parent.
    pub length_decay: f64,
    pub radius_decay: f64,
    /// Heading oscillation amplitude (radians) at tortuosity 1.
    pub max_wiggle: f64,
    /// Per-step branching probability at branch intensity 1.
    pub max_branch_rate: f64,
    /// Walkers stop this many pixels from the border.
    pub margin: f64,
}

impl Default for TreeConfig {
    fn default() -> Self {
        TreeConfig {
            size: 128,
            step: 2.0,
            max_generation: 3,
            root_length: 150.0,
            length_decay: 0.6,
            radius_decay: 0.75,
            max_wiggle: 0.9,
            max_branch_rate: 0.08,
            margin: 3.0,
        }
    }
}

struct Walker {
    pos: (f64, f64),
    heading: f64,
    radius: f64,
    generation: usize,
    length: f64,
}

/// Recursive branching walk from a border root. Headings oscillate around
/// a base direction with amplitude set by tortuosity; children split off
/// with probability set by branch intensity; stroke radius follows calibre
/// and shrinks per generation.
pub fn gen_vessel_tree<R: Rng + ?Sized>(latent: &LatentSubject, cfg: &TreeConfig, rng: &mut R) -> (BinaryMask, TreeStats) {
    let size = cfg.size as f64;
    let mut mask = BinaryMask::empty(cfg.size, cfg.size).expect("positive size");
    let jitter = Normal::new(0.0, 0.03).expect("valid sd");

    let side = rng.random_range(0..4);
    let along = rng.random_range(0.3..0.7) * size;
    let m = cfg.margin + 0.5;
    let (start, inward) = match side {
        0 => ((along, m), PI / 2.0),
        1 => ((size - 1.0 - m, along), PI),
        2 => ((along, size - 1.0 - m), -PI / 2.0),
        _ => ((m, along), 0.0),
    };
    let mut stack = vec![Walker {
        pos: start,
        heading: inward + rng.random_range(-0.4..0.4),
        radius: 0.8 + 1.7 * latent.caliber,
        generation: 0,
        length: cfg.root_length,
    }];
    let amp = cfg.max_wiggle * latent.tortuosity;
    let lo = cfg.margin;
    let hi = size - 1.0 - cfg.margin;
    let mut ratios = Vec::new();

    while let Some(w) = stack.pop() {
        let phase = rng.random_range(0.0..2.0 * PI);
        let wavelength = rng.random_range(18.0..30.0);
        let mut pos = w.pos;
        let mut s = 0.0;
        while s < w.length {
            let h = w.heading + amp * (2.0 * PI * s / wavelength + phase).sin() + jitter.sample(rng);
            let next = (pos.0 + cfg.step * h.cos(), pos.1 + cfg.step * h.sin());
            if next.0 < lo || next.0 > hi || next.1 < lo || next.1 > hi {
                break;
            }
            draw::thick_segment(&mut mask, pos, next, w.radius);
            s += cfg.step;
            pos = next;
            let room = s > 8.0 && s < w.length - 8.0;
            if w.generation < cfg.max_generation && room && rng.random_bool((latent.branching * cfg.max_branch_rate).clamp(0.0, 1.0)) {
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                stack.push(Walker {
                    pos,
                    heading: h + sign * rng.random_range(0.5..1.0),
                    radius: (w.radius * cfg.radius_decay).max(0.6),
                    generation: w.generation + 1,
                    length: w.length * cfg.length_decay,
                });
            }
        }
        let chord = ((pos.0 - w.pos.0).powi(2) + (pos.1 - w.pos.1).powi(2)).sqrt();
        if s > 0.0 && chord > 0.0 {
            ratios.push(s / chord);
        }
    }
    let mean_tortuosity = if ratios.is_empty() { 1.0 } else { ratios.iter().sum::<f64>() / ratios.len() as f64 };
    (mask, TreeStats { branches: ratios.len(), mean_tortuosity })
}

/// Separable Gaussian blur of a mask, kernel truncated at 3σ, edges
/// clamped; values clamped to [0, 1].
pub fn blur_mask(mask: &BinaryMask, sigma: f64) -> Vec<f64> {
    let (w, h) = (mask.width(), mask.height());
    let src: Vec<f64> = mask.bits().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    if sigma <= 0.0 {
        return src;
    }
    let r = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-r..=r).map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    let clampi = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = k.iter().enumerate().map(|(i, kv)| kv * src[y * w + clampi(x as isize + i as isize - r, w)]).sum();
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let v: f64 = k.iter().enumerate().map(|(i, kv)| kv * tmp[clampi(y as isize + i as isize - r, h) * w + x]).sum();
            out[y * w + x] = v.clamp(0.0, 1.0);
        }
    }
    out
}
