//! Hadamard mask bases and measurement orderings.
//!
//! Measurement masks are rows of a Sylvester Hadamard matrix reshaped
//! row-major onto the pixel grid, entries in {-1, +1}. Rows are mutually
//! orthogonal, and the first row gives the all-ones mask.
//!
//! Two orderings decide which masks are measured first when only a fraction
//! of the basis is acquired:
//!
//! * cake-cutting sorts masks globally by how few connected blocks they
//!   contain (coarsest structure first);
//! * russian-dolls groups masks by the lowest-order Hadamard library they
//!   can be reduced to by collapsing constant 2x2 blocks, then block-sorts
//!   within each group.
//!
//! Both are deterministic: ties always fall back to the natural row index.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;

use crate::error::{Error, Result};

/// A single ±1 measurement mask on a `width x height` grid, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Mask {
    width: usize,
    height: usize,
    values: Vec<i8>,
}

impl Mask {
    pub fn new(width: usize, height: usize, values: Vec<i8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidParameter("mask must be nonempty".into()));
        }
        if values.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: width * height,
                got: values.len(),
                context: "mask buffer length",
            });
        }
        if values.iter().any(|v| *v != 1 && *v != -1) {
            return Err(Error::InvalidParameter(
                "mask entries must be +1 or -1".into(),
            ));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[i8] {
        &self.values
    }

    pub fn value(&self, row: usize, col: usize) -> i8 {
        self.values[row * self.width + col]
    }

    pub fn is_all_ones(&self) -> bool {
        self.values.iter().all(|v| *v == 1)
    }

    /// Collapses constant 2x2 blocks into single cells, halving both
    /// dimensions. `None` when a block is mixed or a dimension is odd or
    /// would vanish.
    fn reduce_2x2(&self) -> Option<Mask> {
        if self.width % 2 != 0 || self.height % 2 != 0 || self.width < 2 || self.height < 2 {
            return None;
        }
        let (w2, h2) = (self.width / 2, self.height / 2);
        let mut values = Vec::with_capacity(w2 * h2);
        for r in 0..h2 {
            for c in 0..w2 {
                let v = self.value(2 * r, 2 * c);
                if self.value(2 * r, 2 * c + 1) != v
                    || self.value(2 * r + 1, 2 * c) != v
                    || self.value(2 * r + 1, 2 * c + 1) != v
                {
                    return None;
                }
                values.push(v);
            }
        }
        Some(Mask {
            width: w2,
            height: h2,
            values,
        })
    }
}

/// Sylvester Hadamard matrix of order `n` (a power of two), entries ±1.
pub fn hadamard_matrix(n: usize) -> Result<Vec<Vec<i8>>> {
    if n == 0 || !n.is_power_of_two() {
        return Err(Error::NotPowerOfTwo(n));
    }
    let mut rows: Vec<Vec<i8>> = vec![vec![1]];
    let mut size = 1;
    while size < n {
        let mut next: Vec<Vec<i8>> = Vec::with_capacity(size * 2);
        for row in &rows {
            let mut doubled = row.clone();
            doubled.extend_from_slice(row);
            next.push(doubled);
        }
        for row in &rows {
            let mut doubled = row.clone();
            doubled.extend(row.iter().map(|v| -v));
            next.push(doubled);
        }
        rows = next;
        size *= 2;
    }
    Ok(rows)
}

/// Reshapes one Hadamard row into a `width x height` mask, row-major.
pub fn reshape_row(row: &[i8], width: usize, height: usize) -> Result<Mask> {
    Mask::new(width, height, row.to_vec())
}

/// Number of 4-connected constant-sign regions in a mask.
pub fn count_blocks(mask: &Mask) -> usize {
    // Union-find over the grid; the BFS the tests use is an independent path.
    let n = mask.values.len();
    let mut parent: Vec<usize> = (0..n).collect();

    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }

    let (w, h) = (mask.width, mask.height);
    for r in 0..h {
        for c in 0..w {
            let idx = r * w + c;
            if c + 1 < w && mask.values[idx] == mask.values[idx + 1] {
                let (a, b) = (find(&mut parent, idx), find(&mut parent, idx + 1));
                parent[a] = b;
            }
            if r + 1 < h && mask.values[idx] == mask.values[idx + w] {
                let (a, b) = (find(&mut parent, idx), find(&mut parent, idx + w));
                parent[a] = b;
            }
        }
    }
    (0..n).filter(|&i| find(&mut parent, i) == i).count()
}

/// Which measurement ordering a mask set carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskOrdering {
    Natural,
    CakeCutting,
    RussianDolls,
}

impl MaskOrdering {
    pub fn as_str(&self) -> &'static str {
        match self {
            MaskOrdering::Natural => "natural",
            MaskOrdering::CakeCutting => "cake_cutting",
            MaskOrdering::RussianDolls => "russian_dolls",
        }
    }
}

impl std::str::FromStr for MaskOrdering {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "natural" => Ok(MaskOrdering::Natural),
            "cake_cutting" => Ok(MaskOrdering::CakeCutting),
            "russian_dolls" => Ok(MaskOrdering::RussianDolls),
            other => Err(Error::InvalidParameter(format!(
                "unknown mask ordering '{other}' (expected natural, cake_cutting or russian_dolls)"
            ))),
        }
    }
}

impl std::fmt::Display for MaskOrdering {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A complete Hadamard mask basis for one grid, in a definite measurement
/// order. Position `p` holds the mask of natural (Hadamard) row
/// `natural_rows[p]` together with its block count.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSet {
    width: usize,
    height: usize,
    ordering: MaskOrdering,
    masks: Vec<Mask>,
    natural_rows: Vec<usize>,
    block_counts: Vec<usize>,
    position_of_row: Vec<usize>,
}

impl MaskSet {
    /// Builds the natural-order basis for a grid whose pixel count is a
    /// power of two.
    pub fn from_grid(width: usize, height: usize) -> Result<Self> {
        let n = width
            .checked_mul(height)
            .ok_or_else(|| Error::InvalidParameter("grid size overflow".into()))?;
        if n == 0 || !n.is_power_of_two() {
            return Err(Error::NotPowerOfTwo(n));
        }
        let rows = hadamard_matrix(n)?;
        let masks: Vec<Mask> = rows
            .iter()
            .map(|row| reshape_row(row, width, height))
            .collect::<Result<_>>()?;
        // Counting blocks is per-mask independent; the parallel map keeps
        // natural order, so the result is identical at any thread count.
        let block_counts: Vec<usize> = masks.par_iter().map(count_blocks).collect();
        Ok(Self {
            width,
            height,
            ordering: MaskOrdering::Natural,
            natural_rows: (0..n).collect(),
            position_of_row: (0..n).collect(),
            masks,
            block_counts,
        })
    }

    /// Rebuilds a set from previously exported parts. `natural_rows` must be
    /// a permutation of `0..masks.len()`.
    pub fn from_parts(
        width: usize,
        height: usize,
        ordering: MaskOrdering,
        masks: Vec<Mask>,
        natural_rows: Vec<usize>,
    ) -> Result<Self> {
        let n = masks.len();
        if natural_rows.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: natural_rows.len(),
                context: "permutation length vs mask count",
            });
        }
        if masks
            .iter()
            .any(|m| m.width() != width || m.height() != height)
        {
            return Err(Error::InvalidParameter(
                "all masks must match the grid dimensions".into(),
            ));
        }
        let position_of_row = invert_permutation(&natural_rows)?;
        let block_counts: Vec<usize> = masks.par_iter().map(count_blocks).collect();
        Ok(Self {
            width,
            height,
            ordering,
            masks,
            natural_rows,
            block_counts,
            position_of_row,
        })
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn ordering(&self) -> MaskOrdering {
        self.ordering
    }

    /// Mask at measurement position `p`.
    pub fn mask(&self, position: usize) -> &Mask {
        &self.masks[position]
    }

    /// Natural Hadamard row index of the mask at position `p`.
    pub fn natural_row(&self, position: usize) -> usize {
        self.natural_rows[position]
    }

    /// Block count of the mask at position `p`.
    pub fn block_count(&self, position: usize) -> usize {
        self.block_counts[position]
    }

    pub fn natural_rows(&self) -> &[usize] {
        &self.natural_rows
    }

    /// Mask for a given natural row index, wherever it sits in the order.
    pub fn mask_by_natural_row(&self, row: usize) -> Result<&Mask> {
        let pos = *self
            .position_of_row
            .get(row)
            .ok_or_else(|| Error::InvalidParameter(format!("natural row {row} out of range")))?;
        Ok(&self.masks[pos])
    }

    /// The same basis reordered. The receiver must be in natural order so
    /// the permutation semantics stay unambiguous.
    pub fn with_ordering(&self, ordering: MaskOrdering) -> Result<MaskSet> {
        if self.ordering != MaskOrdering::Natural {
            return Err(Error::InvalidParameter(
                "reordering starts from a natural-order mask set".into(),
            ));
        }
        let perm = match ordering {
            MaskOrdering::Natural => (0..self.len()).collect(),
            MaskOrdering::CakeCutting => order_cake_cutting(self)?,
            MaskOrdering::RussianDolls => order_russian_dolls(self)?,
        };
        let masks = perm.iter().map(|&r| self.masks[r].clone()).collect();
        let block_counts = perm.iter().map(|&r| self.block_counts[r]).collect();
        let position_of_row = invert_permutation(&perm)?;
        Ok(MaskSet {
            width: self.width,
            height: self.height,
            ordering,
            masks,
            natural_rows: perm,
            block_counts,
            position_of_row,
        })
    }
}

fn invert_permutation(perm: &[usize]) -> Result<Vec<usize>> {
    let n = perm.len();
    let mut inv = vec![usize::MAX; n];
    for (pos, &row) in perm.iter().enumerate() {
        if row >= n || inv[row] != usize::MAX {
            return Err(Error::InvalidParameter(
                "natural rows must form a permutation".into(),
            ));
        }
        inv[row] = pos;
    }
    Ok(inv)
}

fn require_natural(masks: &MaskSet) -> Result<()> {
    if masks.ordering != MaskOrdering::Natural {
        return Err(Error::InvalidParameter(
            "ordering is defined on the natural-order mask set".into(),
        ));
    }
    Ok(())
}

/// Cake-cutting ordering: natural row indices sorted ascending by block
/// count, ties broken by the natural index itself.
pub fn order_cake_cutting(masks: &MaskSet) -> Result<Vec<usize>> {
    require_natural(masks)?;
    let mut idx: Vec<usize> = (0..masks.len()).collect();
    idx.sort_by_key(|&i| (masks.block_counts[i], i));
    Ok(idx)
}

/// Russian-dolls ordering with every achievable library level. See
/// [`order_russian_dolls_limited`].
pub fn order_russian_dolls(masks: &MaskSet) -> Result<Vec<usize>> {
    order_russian_dolls_limited(masks, usize::MAX)
}

/// Russian-dolls ordering.
///
/// A mask is identified with the library one level down when collapsing its
/// constant 2x2 blocks yields a member of the Hadamard basis for the halved
/// grid; the test is applied recursively, up to `max_levels` times. Masks are
/// grouped by the deepest level they reach (deepest first, unidentified
/// last) and each group is sorted ascending by block count with natural-index
/// ties, exactly as in cake-cutting. With `max_levels = 0` every mask lands
/// in one group and the result degenerates to the cake-cutting order.
pub fn order_russian_dolls_limited(masks: &MaskSet, max_levels: usize) -> Result<Vec<usize>> {
    require_natural(masks)?;
    let levels = identification_levels(masks, max_levels);
    let mut idx: Vec<usize> = (0..masks.len()).collect();
    // Deeper identification = lower-order library = earlier group.
    idx.sort_by_key(|&i| (std::cmp::Reverse(levels[i]), masks.block_counts[i], i));
    Ok(idx)
}

/// For each mask, how many 2x2-collapse steps stay inside the corresponding
/// lower-order Hadamard libraries.
fn identification_levels(masks: &MaskSet, max_levels: usize) -> Vec<usize> {
    // Libraries for successive halvings, as hash sets of reshaped rows.
    let mut libraries: Vec<HashSet<Mask>> = Vec::new();
    let (mut w, mut h) = (masks.width, masks.height);
    while libraries.len() < max_levels
        && w % 2 == 0
        && h % 2 == 0
        && w / 2 >= 1
        && h / 2 >= 1
    {
        w /= 2;
        h /= 2;
        let rows = hadamard_matrix(w * h).expect("halved grid stays a power of two");
        let lib: HashSet<Mask> = rows
            .iter()
            .map(|row| reshape_row(row, w, h).expect("library mask dimensions"))
            .collect();
        libraries.push(lib);
    }

    masks
        .masks
        .par_iter()
        .map(|mask| {
            let mut level = 0;
            let mut current = mask.clone();
            for lib in &libraries {
                match current.reduce_2x2() {
                    Some(reduced) if lib.contains(&reduced) => {
                        level += 1;
                        current = reduced;
                    }
                    _ => break,
                }
            }
            level
        })
        .collect()
}

/// One mask per line, row-major ±1, comma separated. Order is the set's
/// measurement order; pair with [`write_permutation`] to keep row identities.
pub fn write_masks_csv(masks: &MaskSet) -> String {
    let mut out = String::new();
    for mask in &masks.masks {
        let line: Vec<String> = mask.values().iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

/// Parses masks written by [`write_masks_csv`] for a known grid shape.
pub fn read_masks_csv(text: &str, width: usize, height: usize) -> Result<Vec<Mask>> {
    let mut masks = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let values: Vec<i8> = line
            .split(',')
            .map(|tok| match tok.trim() {
                "1" => Ok(1),
                "-1" => Ok(-1),
                other => Err(Error::Parse(format!(
                    "line {}: mask entry '{other}' is not ±1",
                    lineno + 1
                ))),
            })
            .collect::<Result<_>>()?;
        masks.push(Mask::new(width, height, values)?);
    }
    Ok(masks)
}

/// Plain-text permutation file: one natural row index per line.
pub fn write_permutation(perm: &[usize]) -> String {
    let mut out = String::new();
    for p in perm {
        out.push_str(&p.to_string());
        out.push('\n');
    }
    out
}

pub fn read_permutation(text: &str) -> Result<Vec<usize>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.trim()
                .parse::<usize>()
                .map_err(|_| Error::Parse(format!("bad permutation entry '{l}'")))
        })
        .collect()
}
