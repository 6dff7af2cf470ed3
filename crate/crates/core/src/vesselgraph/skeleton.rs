//! Zhang–Suen thinning with simple-point guarded deletion.

use super::mask::{BinaryMask, Pixel, RING};

/// A one-pixel-wide centreline image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Skeleton(BinaryMask);

impl Skeleton {
    /// Wraps an existing mask without thinning it; extraction verifies
    /// thinness itself.
    pub fn from_mask_unchecked(mask: BinaryMask) -> Self {
        Skeleton(mask)
    }

    pub fn mask(&self) -> &BinaryMask {
        &self.0
    }

    pub fn into_mask(self) -> BinaryMask {
        self.0
    }

    pub fn is_thin(&self) -> bool {
        !self.0.has_2x2_block()
    }
}

/// The 3×3 neighbourhood of `p` as bits in [`RING`] order.
fn ring_bits(m: &BinaryMask, p: Pixel) -> [bool; 8] {
    let mut out = [false; 8];
    for (k, &(dx, dy)) in RING.iter().enumerate() {
        out[k] = m.get_i(p.x as isize + dx, p.y as isize + dy);
    }
    out
}

/// Number of 0→1 transitions around the ring.
fn transitions(r: &[bool; 8]) -> usize {
    (0..8).filter(|&k| !r[k] && r[(k + 1) % 8]).count()
}

/// Whether deleting `p` preserves topology: exactly one 8-connected
/// foreground component and one 4-connected background component touch it.
pub(crate) fn is_simple(r: &[bool; 8]) -> bool {
    // Ring indices: 0 N, 1 NE, 2 E, 3 SE, 4 S, 5 SW, 6 W, 7 NW.
    // Foreground: ring cells are 8-adjacent to ring neighbours at distance
    // one; 4-neighbours (even index) are also adjacent at distance two.
    let fg_adj = |a: usize, b: usize| {
        let d = (a + 8 - b) % 8;
        d == 1 || d == 7 || (a.is_multiple_of(2) && b.is_multiple_of(2) && (d == 2 || d == 6))
    };
    let count_components = |present: &dyn Fn(usize) -> bool, adj: &dyn Fn(usize, usize) -> bool, seeds: &[usize]| {
        let mut seen = [false; 8];
        let mut n = 0;
        for &s in seeds {
            if !present(s) || seen[s] {
                continue;
            }
            n += 1;
            let mut stack = vec![s];
            seen[s] = true;
            while let Some(a) = stack.pop() {
                for b in 0..8 {
                    if !seen[b] && present(b) && adj(a, b) {
                        seen[b] = true;
                        stack.push(b);
                    }
                }
            }
        }
        n
    };
    let all: Vec<usize> = (0..8).collect();
    let fg = count_components(&|k| r[k], &fg_adj, &all);
    // Background 4-components among the 8-ring that are 4-adjacent to p
    // (seeded from even indices); ring cells are 4-adjacent only when
    // consecutive.
    let bg_adj = |a: usize, b: usize| {
        let d = (a + 8 - b) % 8;
        d == 1 || d == 7
    };
    let bg = count_components(&|k| !r[k], &bg_adj, &[0, 2, 4, 6]);
    fg == 1 && bg == 1
}

fn zs_candidate(r: &[bool; 8], first: bool) -> bool {
    let b = r.iter().filter(|&&x| x).count();
    if !(2..=6).contains(&b) || transitions(r) != 1 {
        return false;
    }
    let (n, e, s, w) = (r[0], r[2], r[4], r[6]);
    if first {
        !(n && e && s) && !(e && s && w)
    } else {
        !(n && e && w) && !(n && s && w)
    }
}

/// Deletes `cands` one by one in raster order, skipping any pixel whose
/// removal would change topology given the deletions already made. Without
/// the guard, parallel deletion erases two-pixel-thick strokes entirely.
fn guarded_delete(m: &mut BinaryMask, cands: &[Pixel]) -> usize {
    let mut removed = 0;
    for &p in cands {
        if is_simple(&ring_bits(m, p)) {
            m.set(p, false);
            removed += 1;
        }
    }
    removed
}

/// Removes staircase corners left by Zhang–Suen: simple pixels with two
/// perpendicular 4-neighbours set.
fn remove_corners(m: &mut BinaryMask) -> usize {
    let pixels: Vec<Pixel> = m.pixels().collect();
    let mut removed = 0;
    for p in pixels {
        let r = ring_bits(m, p);
        let b = r.iter().filter(|&&x| x).count();
        let corner = (r[0] && r[2]) || (r[2] && r[4]) || (r[4] && r[6]) || (r[6] && r[0]);
        if b >= 2 && corner && is_simple(&r) {
            m.set(p, false);
            removed += 1;
        }
    }
    removed
}

/// Thins `mask` to a 1-pixel-wide, topology-equivalent centreline.
pub fn skeletonize(mask: &BinaryMask) -> Skeleton {
    let mut m = mask.clone();
    loop {
        let mut changed = 0;
        loop {
            let mut pass = 0;
            for first in [true, false] {
                let cands: Vec<Pixel> = m.pixels().filter(|&p| zs_candidate(&ring_bits(&m, p), first)).collect();
                pass += guarded_delete(&mut m, &cands);
            }
            changed += pass;
            if pass == 0 {
                break;
            }
        }
        changed += remove_corners(&mut m);
        if changed == 0 {
            break;
        }
    }
    break_blocks(&mut m, mask);
    Skeleton(m)
}

fn block_at(m: &BinaryMask, x: isize, y: isize) -> bool {
    m.get_i(x, y) && m.get_i(x + 1, y) && m.get_i(x, y + 1) && m.get_i(x + 1, y + 1)
}

fn block_near(m: &BinaryMask, p: Pixel) -> bool {
    let (x, y) = (p.x as isize, p.y as isize);
    (-2..=1).any(|dy| (-2..=1).any(|dx| block_at(m, x + dx, y + dy)))
}

/// Foreground around the removed pixel stays one 8-connected piece.
fn locally_connected(r: &[bool; 8]) -> bool {
    let present: Vec<usize> = (0..8).filter(|&k| r[k]).collect();
    if present.is_empty() {
        return false;
    }
    let adj = |a: usize, b: usize| {
        let d = (a + 8 - b) % 8;
        d == 1 || d == 7 || (a.is_multiple_of(2) && b.is_multiple_of(2) && (d == 2 || d == 6))
    };
    let mut seen = [false; 8];
    let mut stack = vec![present[0]];
    seen[present[0]] = true;
    while let Some(a) = stack.pop() {
        for &b in &present {
            if !seen[b] && adj(a, b) {
                seen[b] = true;
                stack.push(b);
            }
        }
    }
    present.iter().all(|&k| seen[k])
}

/// Tries, in order: deleting a simple block pixel; re-routing one arm
/// through a neighbouring mask pixel so that a block pixel becomes simple;
/// deleting a block pixel whose removal keeps the foreground connected but
/// opens a pixel-sized hole.
fn break_block(m: &mut BinaryMask, mask: &BinaryMask, x: usize, y: usize) {
    let quad = [(x, y), (x + 1, y), (x, y + 1), (x + 1, y + 1)].map(|(x, y)| Pixel::new(x, y));
    for a in quad {
        if is_simple(&ring_bits(m, a)) {
            m.set(a, false);
            return;
        }
    }
    for a in quad {
        for q in mask.neighbors(a).collect::<Vec<_>>() {
            if m.get(q) || !is_simple(&ring_bits(m, q)) {
                continue;
            }
            m.set(q, true);
            if is_simple(&ring_bits(m, a)) {
                m.set(a, false);
                if !block_near(m, a) && !block_near(m, q) {
                    return;
                }
                m.set(a, true);
            }
            m.set(q, false);
        }
    }
    for a in quad {
        if locally_connected(&ring_bits(m, a)) {
            m.set(a, false);
            return;
        }
    }
    // last resort: any block pixel whose removal keeps the component count
    let count = m.components().1;
    for a in quad {
        m.set(a, false);
        if m.components().1 == count {
            return;
        }
        m.set(a, true);
    }
    m.set(quad[0], false);
}

/// Crossing centrelines can leave 2×2 blocks in which no pixel is simple;
/// see [`break_block`].
fn break_blocks(m: &mut BinaryMask, mask: &BinaryMask) {
    let (w, h) = (m.width(), m.height());
    for y in 0..h.saturating_sub(1) {
        for x in 0..w.saturating_sub(1) {
            if block_at(m, x as isize, y as isize) {
                break_block(m, mask, x, y);
            }
        }
    }
}
