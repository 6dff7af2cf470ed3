//! Exact Euclidean distance transform (lower envelope of parabolas, one
//! pass per axis).

use super::mask::BinaryMask;

// Stand-in for an unreachable squared distance; large but exact under
// addition of pixel-scale squares.
const INF: f64 = 1e12;

/// 1-D squared distance transform of the sampled function `f`.
fn dt_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let mut k = 0;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..f.len() {
        let mut s;
        loop {
            let p = v[k];
            s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2 * (q - p)) as f64;
            if s <= z[k] {
                k -= 1;
            } else {
                break;
            }
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Distance from every pixel to the nearest background pixel centre.
/// Pixels outside the image count as background, so the result is
/// unchanged by padding. Background pixels get 0.
pub fn distance_transform(mask: &BinaryMask) -> Vec<f64> {
    // one background ring on every side
    let w = mask.width() + 2;
    let h = mask.height() + 2;
    let mut g = vec![0.0; w * h];
    for p in mask.pixels() {
        g[(p.y + 1) * w + p.x + 1] = INF;
    }
    let n = w.max(h);
    let (mut f, mut out) = (vec![0.0; n], vec![0.0; n]);
    let (mut v, mut z) = (vec![0usize; n], vec![0.0; n + 1]);
    for x in 0..w {
        for y in 0..h {
            f[y] = g[y * w + x];
        }
        dt_1d(&f[..h], &mut out[..h], &mut v, &mut z);
        for y in 0..h {
            g[y * w + x] = out[y];
        }
    }
    for y in 0..h {
        f[..w].copy_from_slice(&g[y * w..(y + 1) * w]);
        dt_1d(&f[..w], &mut out[..w], &mut v, &mut z);
        g[y * w..(y + 1) * w].copy_from_slice(&out[..w]);
    }
    let mut d = Vec::with_capacity(mask.width() * mask.height());
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            d.push(g[(y + 1) * w + x + 1].sqrt());
        }
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn brute(mask: &BinaryMask) -> Vec<f64> {
        let (w, h) = (mask.width() as isize, mask.height() as isize);
        let mut out = Vec::new();
        for y in 0..h {
            for x in 0..w {
                if !mask.get_i(x, y) {
                    out.push(0.0);
                    continue;
                }
                let mut best = f64::INFINITY;
                for j in -1..=h {
                    for i in -1..=w {
                        if !mask.get_i(i, j) {
                            best = best.min((((i - x) * (i - x) + (j - y) * (j - y)) as f64).sqrt());
                        }
                    }
                }
                out.push(best);
            }
        }
        out
    }

    #[test]
    fn matches_brute_force_on_random_masks() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let (w, h) = (rng.random_range(1..20), rng.random_range(1..20));
            let p = rng.random_range(0.3..0.95);
            let bits = (0..w * h).map(|_| rng.random_bool(p)).collect();
            let m = BinaryMask::new(w, h, bits).unwrap();
            let fast = distance_transform(&m);
            let slow = brute(&m);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-9, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn bar_centre_depth() {
        let rows: Vec<String> = (0..9).map(|y| if (2..7).contains(&y) { "#".repeat(30) } else { ".".repeat(30) }).collect();
        let rows: Vec<&str> = rows.iter().map(|s| s.as_str()).collect();
        let m = BinaryMask::from_ascii(&rows).unwrap();
        let d = distance_transform(&m);
        assert_eq!(d[4 * 30 + 15], 3.0);
        assert_eq!(d[2 * 30 + 15], 1.0);
    }
}
