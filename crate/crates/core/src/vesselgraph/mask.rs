use std::path::Path;

use crate::error::{Error, Result};

/// Pixel coordinate: `x` is the column, `y` the row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Pixel {
    pub x: usize,
    pub y: usize,
}

impl Pixel {
    pub fn new(x: usize, y: usize) -> Self {
        Pixel { x, y }
    }

    pub fn dist(self, other: Pixel) -> f64 {
        let dx = self.x as f64 - other.x as f64;
        let dy = self.y as f64 - other.y as f64;
        (dx * dx + dy * dy).sqrt()
    }

    pub fn is_adjacent(self, other: Pixel) -> bool {
        self != other && self.x.abs_diff(other.x) <= 1 && self.y.abs_diff(other.y) <= 1
    }
}

/// Offsets of the 8-neighbourhood in clockwise order starting north.
pub(crate) const RING: [(isize, isize); 8] = [(0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1)];

/// Row-major boolean image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!("mask dimensions must be positive, got {width}×{height}")));
        }
        if bits.len() != width * height {
            return Err(Error::invalid(format!("{} bits for a {width}×{height} mask", bits.len())));
        }
        Ok(BinaryMask { width, height, bits })
    }

    pub fn empty(width: usize, height: usize) -> Result<Self> {
        Self::new(width, height, vec![false; width * height])
    }

    /// Thresholds 8-bit intensities: `> 127` is vessel.
    pub fn from_gray(width: usize, height: usize, gray: &[u8]) -> Result<Self> {
        Self::new(width, height, gray.iter().map(|&g| g > 127).collect())
    }

    /// Builds a mask from ASCII art: `#` or `1` is set, anything else clear.
    pub fn from_ascii(rows: &[&str]) -> Result<Self> {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.len());
        let mut bits = Vec::with_capacity(width * height);
        for r in rows {
            if r.len() != width {
                return Err(Error::invalid("ragged ascii mask"));
            }
            bits.extend(r.bytes().map(|b| b == b'#' || b == b'1'));
        }
        Self::new(width, height, bits)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn get(&self, p: Pixel) -> bool {
        p.x < self.width && p.y < self.height && self.bits[p.y * self.width + p.x]
    }

    /// Out-of-bounds coordinates read as background.
    pub fn get_i(&self, x: isize, y: isize) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height && self.bits[y as usize * self.width + x as usize]
    }

    pub fn set(&mut self, p: Pixel, on: bool) {
        let w = self.width;
        self.bits[p.y * w + p.x] = on;
    }

    pub fn pixels(&self) -> impl Iterator<Item = Pixel> + '_ {
        let w = self.width;
        self.bits.iter().enumerate().filter(|(_, &b)| b).map(move |(i, _)| Pixel::new(i % w, i / w))
    }

    /// Set 8-neighbours of `p`, in [`RING`] order.
    pub fn neighbors(&self, p: Pixel) -> impl Iterator<Item = Pixel> + '_ {
        RING.iter().filter_map(move |&(dx, dy)| {
            let x = p.x as isize + dx;
            let y = p.y as isize + dy;
            self.get_i(x, y).then(|| Pixel::new(x as usize, y as usize))
        })
    }

    pub fn neighbor_count(&self, p: Pixel) -> usize {
        self.neighbors(p).count()
    }

    /// Adds background margins.
    pub fn pad(&self, left: usize, top: usize, right: usize, bottom: usize) -> BinaryMask {
        let w = self.width + left + right;
        let h = self.height + top + bottom;
        let mut out = BinaryMask { width: w, height: h, bits: vec![false; w * h] };
        for p in self.pixels() {
            out.set(Pixel::new(p.x + left, p.y + top), true);
        }
        out
    }

    /// Labels of 8-connected components (`usize::MAX` for background) and
    /// the component count. Labels follow raster order of first pixel.
    pub fn components(&self) -> (Vec<usize>, usize) {
        let mut label = vec![usize::MAX; self.bits.len()];
        let mut next = 0;
        let mut stack = Vec::new();
        for start in 0..self.bits.len() {
            if !self.bits[start] || label[start] != usize::MAX {
                continue;
            }
            label[start] = next;
            stack.push(start);
            while let Some(i) = stack.pop() {
                let p = Pixel::new(i % self.width, i / self.width);
                for q in self.neighbors(p) {
                    let j = q.y * self.width + q.x;
                    if label[j] == usize::MAX {
                        label[j] = next;
                        stack.push(j);
                    }
                }
            }
            next += 1;
        }
        (label, next)
    }

    /// True when some 2×2 window is fully set.
    pub fn has_2x2_block(&self) -> bool {
        (0..self.height.saturating_sub(1)).any(|y| {
            (0..self.width - 1).any(|x| {
                let i = y * self.width + x;
                self.bits[i] && self.bits[i + 1] && self.bits[i + self.width] && self.bits[i + self.width + 1]
            })
        })
    }

    pub fn to_gray(&self) -> Vec<u8> {
        self.bits.iter().map(|&b| if b { 255 } else { 0 }).collect()
    }

    /// Reads a PGM or PNG; intensities above 127 are vessel.
    pub fn read(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
        let g = img.to_luma8();
        Self::from_gray(g.width() as usize, g.height() as usize, g.as_raw())
    }

    /// Writes binary PGM (P5, maxval 255).
    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        write_pgm(path, self.width, self.height, &self.to_gray())
    }

    pub fn write_png(&self, path: &Path) -> Result<()> {
        image::save_buffer(path, &self.to_gray(), self.width as u32, self.height as u32, image::ExtendedColorType::L8)
            .map_err(|e| Error::Image(format!("{}: {e}", path.display())))
    }
}

/// Writes an 8-bit grayscale P5 PGM.
pub fn write_pgm(path: &Path, width: usize, height: usize, gray: &[u8]) -> Result<()> {
    let mut buf = format!("P5\n{width} {height}\n255\n").into_bytes();
    buf.extend_from_slice(gray);
    std::fs::write(path, buf)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_dimensions() {
        assert!(BinaryMask::new(0, 3, vec![]).is_err());
        assert!(BinaryMask::new(2, 2, vec![true; 3]).is_err());
    }

    #[test]
    fn pgm_round_trip() {
        let m = BinaryMask::from_ascii(&["#..", ".#.", "..#", "##."]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.pgm");
        m.write_pgm(&path).unwrap();
        assert_eq!(BinaryMask::read(&path).unwrap(), m);
        let png = dir.path().join("m.png");
        m.write_png(&png).unwrap();
        assert_eq!(BinaryMask::read(&png).unwrap(), m);
    }

    #[test]
    fn components_use_8_connectivity() {
        let m = BinaryMask::from_ascii(&["#...", ".#..", "...#"]).unwrap();
        assert_eq!(m.components().1, 2);
    }
}
