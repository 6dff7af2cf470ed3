//! Rasterisers for phantoms and synthetic vessels.

use super::mask::{BinaryMask, Pixel};

/// Sets the 8-connected Bresenham line from `a` to `b`.
pub fn line(m: &mut BinaryMask, a: (isize, isize), b: (isize, isize)) {
    let (mut x, mut y) = a;
    let dx = (b.0 - a.0).abs();
    let dy = -(b.1 - a.1).abs();
    let sx = if a.0 < b.0 { 1 } else { -1 };
    let sy = if a.1 < b.1 { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        set_i(m, x, y);
        if (x, y) == b {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

fn set_i(m: &mut BinaryMask, x: isize, y: isize) {
    if x >= 0 && y >= 0 && (x as usize) < m.width() && (y as usize) < m.height() {
        m.set(Pixel::new(x as usize, y as usize), true);
    }
}

/// Sets every pixel whose centre lies within `radius` of the segment `a–b`.
pub fn thick_segment(m: &mut BinaryMask, a: (f64, f64), b: (f64, f64), radius: f64) {
    let x0 = (a.0.min(b.0) - radius).floor().max(0.0) as usize;
    let y0 = (a.1.min(b.1) - radius).floor().max(0.0) as usize;
    let x1 = ((a.0.max(b.0) + radius).ceil().max(0.0) as usize).min(m.width().saturating_sub(1));
    let y1 = ((a.1.max(b.1) + radius).ceil().max(0.0) as usize).min(m.height().saturating_sub(1));
    let (vx, vy) = (b.0 - a.0, b.1 - a.1);
    let len2 = vx * vx + vy * vy;
    for y in y0..=y1 {
        for x in x0..=x1 {
            let (px, py) = (x as f64 - a.0, y as f64 - a.1);
            let t = if len2 > 0.0 { ((px * vx + py * vy) / len2).clamp(0.0, 1.0) } else { 0.0 };
            let (dx, dy) = (px - t * vx, py - t * vy);
            if dx * dx + dy * dy <= radius * radius {
                m.set(Pixel::new(x, y), true);
            }
        }
    }
}

/// Sets the rasterised arc of the circle centred at `c`, angles in radians,
/// as a single 8-connected chain.
pub fn arc(m: &mut BinaryMask, c: (f64, f64), r: f64, from: f64, to: f64) {
    let steps = ((to - from).abs() * r * 4.0).ceil().max(1.0) as usize;
    let mut prev: Option<(isize, isize)> = None;
    for k in 0..=steps {
        let t = from + (to - from) * k as f64 / steps as f64;
        let p = ((c.0 + r * t.cos()).round() as isize, (c.1 + r * t.sin()).round() as isize);
        if let Some(q) = prev {
            if q != p {
                line(m, q, p);
            }
        } else {
            set_i(m, p.0, p.1);
        }
        prev = Some(p);
    }
}

/// Straight spokes of length `len` leaving `centre` at evenly spaced angles.
pub fn star(m: &mut BinaryMask, centre: (isize, isize), k: usize, len: f64, phase: f64) {
    for i in 0..k {
        let t = phase + std::f64::consts::TAU * i as f64 / k as f64;
        let end = ((centre.0 as f64 + len * t.cos()).round() as isize, (centre.1 as f64 + len * t.sin()).round() as isize);
        line(m, centre, end);
    }
}
