//! Row-major binary raster used for road masks, visibility and skeletons.

use std::collections::VecDeque;

use crate::Cell;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BitMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

/// 8-neighborhood offsets, clockwise from north.
pub const NEIGHBORS8: [(i64, i64); 8] = [
    (0, -1),
    (1, -1),
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
    (-1, 0),
    (-1, -1),
];

impl BitMask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![true; width * height],
        }
    }

    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Self {
        assert_eq!(bits.len(), width * height, "bit count must equal width*height");
        Self { width, height, bits }
    }

    /// Parses rows of `#`/`1` (set) and `.`/`0` (clear); handy for fixtures.
    pub fn from_ascii(rows: &[&str]) -> Self {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.len());
        let mut bits = Vec::with_capacity(width * height);
        for r in rows {
            assert_eq!(r.len(), width, "ragged fixture rows");
            bits.extend(r.chars().map(|c| c == '#' || c == '1'));
        }
        Self { width, height, bits }
    }

    pub fn to_ascii(&self) -> String {
        let mut s = String::with_capacity((self.width + 1) * self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                s.push(if self.get(x, y) { '#' } else { '.' });
            }
            s.push('\n');
        }
        s
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

    pub fn same_shape(&self, other: &BitMask) -> bool {
        self.width == other.width && self.height == other.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    /// Out-of-bounds reads are `false` (zero padding).
    #[inline]
    pub fn get_i(&self, x: i64, y: i64) -> bool {
        x >= 0
            && y >= 0
            && (x as usize) < self.width
            && (y as usize) < self.height
            && self.bits[y as usize * self.width + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|b| *b)
    }

    pub fn iter_set(&self) -> impl Iterator<Item = Cell> + '_ {
        let w = self.width;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, b)| **b)
            .map(move |(i, _)| (i % w, i / w))
    }

    pub fn is_subset_of(&self, other: &BitMask) -> bool {
        self.same_shape(other) && self.bits.iter().zip(&other.bits).all(|(a, b)| !*a || *b)
    }

    pub fn union(&self, other: &BitMask) -> BitMask {
        assert!(self.same_shape(other));
        BitMask::from_bits(
            self.width,
            self.height,
            self.bits.iter().zip(&other.bits).map(|(a, b)| *a || *b).collect(),
        )
    }

    /// Number of set 8-neighbors of a cell.
    pub fn neighbor_count(&self, x: usize, y: usize) -> usize {
        NEIGHBORS8
            .iter()
            .filter(|(dx, dy)| self.get_i(x as i64 + dx, y as i64 + dy))
            .count()
    }

    /// True if some 2x2 window is entirely set.
    pub fn has_2x2_block(&self) -> bool {
        (0..self.height.saturating_sub(1)).any(|y| {
            (0..self.width.saturating_sub(1)).any(|x| {
                self.get(x, y) && self.get(x + 1, y) && self.get(x, y + 1) && self.get(x + 1, y + 1)
            })
        })
    }

    /// 8-connected component labels (0 = background, components numbered from 1
    /// in row-major order of their first cell) and the component count.
    pub fn components8(&self) -> (Vec<u32>, u32) {
        let mut labels = vec![0u32; self.bits.len()];
        let mut next = 0u32;
        let mut queue = VecDeque::new();
        for start in 0..self.bits.len() {
            if !self.bits[start] || labels[start] != 0 {
                continue;
            }
            next += 1;
            labels[start] = next;
            queue.push_back(start);
            while let Some(i) = queue.pop_front() {
                let (x, y) = ((i % self.width) as i64, (i / self.width) as i64);
                for (dx, dy) in NEIGHBORS8 {
                    let (nx, ny) = (x + dx, y + dy);
                    if self.get_i(nx, ny) {
                        let j = ny as usize * self.width + nx as usize;
                        if labels[j] == 0 {
                            labels[j] = next;
                            queue.push_back(j);
                        }
                    }
                }
            }
        }
        (labels, next)
    }

    /// The 8-connected component containing `seed` (empty if `seed` is clear).
    pub fn component_of(&self, seed: Cell) -> BitMask {
        let mut out = BitMask::new(self.width, self.height);
        if !self.get(seed.0, seed.1) {
            return out;
        }
        let mut queue = VecDeque::from([seed]);
        out.set(seed.0, seed.1, true);
        while let Some((x, y)) = queue.pop_front() {
            for (dx, dy) in NEIGHBORS8 {
                let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                if self.get_i(nx, ny) && !out.get(nx as usize, ny as usize) {
                    out.set(nx as usize, ny as usize, true);
                    queue.push_back((nx as usize, ny as usize));
                }
            }
        }
        out
    }

    /// Binary dilation by a `side x side` square (side odd).
    pub fn dilate_square(&self, side: usize) -> BitMask {
        self.sliding(side, false)
    }

    /// Binary erosion by a `side x side` square (side odd); outside is clear.
    pub fn erode_square(&self, side: usize) -> BitMask {
        self.sliding(side, true)
    }

    // Separable running-count filter. For dilation a cell is set when any cell
    // in the window is set; for erosion when all of them are (out-of-bounds
    // counts as clear in both cases).
    fn sliding(&self, side: usize, erode: bool) -> BitMask {
        debug_assert!(side % 2 == 1);
        let r = (side / 2) as i64;
        let (w, h) = (self.width as i64, self.height as i64);
        let need = |count: usize| if erode { count == side } else { count > 0 };

        let mut horiz = vec![false; self.bits.len()];
        for y in 0..h {
            let row = &self.bits[(y * w) as usize..((y + 1) * w) as usize];
            let mut count = (0..=r.min(w - 1)).filter(|&x| row[x as usize]).count();
            for x in 0..w {
                horiz[(y * w + x) as usize] = need(count);
                let leaving = x - r;
                let entering = x + r + 1;
                if leaving >= 0 && row[leaving as usize] {
                    count -= 1;
                }
                if entering < w && row[entering as usize] {
                    count += 1;
                }
            }
        }
        let mut out = vec![false; self.bits.len()];
        for x in 0..w {
            let at = |y: i64| horiz[(y * w + x) as usize];
            let mut count = (0..=r.min(h - 1)).filter(|&y| at(y)).count();
            for y in 0..h {
                out[(y * w + x) as usize] = need(count);
                let leaving = y - r;
                let entering = y + r + 1;
                if leaving >= 0 && at(leaving) {
                    count -= 1;
                }
                if entering < h && at(entering) {
                    count += 1;
                }
            }
        }
        BitMask::from_bits(self.width, self.height, out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn naive(mask: &BitMask, side: usize, erode: bool) -> BitMask {
        let r = (side / 2) as i64;
        let mut out = BitMask::new(mask.width(), mask.height());
        for y in 0..mask.height() {
            for x in 0..mask.width() {
                let mut any = false;
                let mut all = true;
                for dy in -r..=r {
                    for dx in -r..=r {
                        let v = mask.get_i(x as i64 + dx, y as i64 + dy);
                        any |= v;
                        all &= v;
                    }
                }
                out.set(x, y, if erode { all } else { any });
            }
        }
        out
    }

    proptest! {
        #[test]
        fn separable_morphology_matches_window_scan(
            w in 1usize..14, h in 1usize..14, side in prop::sample::select(vec![1usize, 3, 5, 7]),
            seed in proptest::collection::vec(any::<bool>(), 196)
        ) {
            let m = BitMask::from_bits(w, h, seed[..w * h].to_vec());
            prop_assert_eq!(m.dilate_square(side), naive(&m, side, false));
            prop_assert_eq!(m.erode_square(side), naive(&m, side, true));
        }
    }

    #[test]
    fn components_and_blocks() {
        let m = BitMask::from_ascii(&["##..#", "##..#", ".....", "#...."]);
        assert_eq!(m.components8().1, 3);
        assert!(m.has_2x2_block());
        assert_eq!(m.component_of((0, 0)).count(), 4);
        assert_eq!(m.component_of((2, 2)).count(), 0);
        let diag = BitMask::from_ascii(&["#..", ".#.", "..#"]);
        assert_eq!(diag.components8().1, 1);
        assert!(!diag.has_2x2_block());
        assert_eq!(diag.neighbor_count(1, 1), 2);
    }
}
