//! Two-cluster k-means on stat maps and the RoI masks built from them.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::stats::{StatKind, StatMap};

pub const DEFAULT_MAX_ITERS: usize = 10;

/// How the two centroids are seeded before Lloyd iterations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum KMeansInit {
    /// Centroids of the threshold cut with the least within-cluster sum of
    /// squares, found exactly by scanning the sorted values.
    #[default]
    OptimalCut,
    /// Centroids at (min, max).
    Extremes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KMeansOptions {
    pub max_iters: usize,
    pub init: KMeansInit,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        Self {
            max_iters: DEFAULT_MAX_ITERS,
            init: KMeansInit::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    /// 0 for the low cluster, 1 for the high one.
    pub labels: Vec<u8>,
    /// Ascending: `centroids[0] < centroids[1]`.
    pub centroids: [f64; 2],
    pub iterations_run: usize,
}

impl KMeansResult {
    pub fn within_ss(&self, values: &[f64]) -> f64 {
        values
            .iter()
            .zip(&self.labels)
            .map(|(v, &l)| (v - self.centroids[l as usize]).powi(2))
            .sum()
    }

    pub fn count(&self, label: u8) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }
}

pub fn kmeans2(values: &[f64], max_iters: usize) -> Result<KMeansResult> {
    kmeans2_with(
        values,
        KMeansOptions {
            max_iters,
            ..Default::default()
        },
    )
}

/// One-dimensional Lloyd iterations with k = 2. Stops when an assignment
/// pass changes no label or after `max_iters` passes. Equidistant values go
/// to the low cluster.
pub fn kmeans2_with(values: &[f64], opts: KMeansOptions) -> Result<KMeansResult> {
    if values.len() < 2 {
        return Err(Error::Size(format!(
            "k-means needs at least 2 values, got {}",
            values.len()
        )));
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::DegenerateInput(format!("non-finite value {v}")));
    }
    let (min, max) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if min == max {
        return Err(Error::DegenerateInput(format!("all values equal {min}")));
    }
    if opts.max_iters == 0 {
        return Err(Error::Size("k-means needs at least one iteration".into()));
    }

    let (mut labels, mut centroids) = match opts.init {
        KMeansInit::Extremes => (None, [min, max]),
        KMeansInit::OptimalCut => {
            let t = optimal_threshold(values);
            let labels: Vec<u8> = values.iter().map(|&v| u8::from(v > t)).collect();
            let c = cluster_means(values, &labels)?;
            (Some(labels), c)
        }
    };

    let mut iterations_run = 0;
    for _ in 0..opts.max_iters {
        iterations_run += 1;
        let next: Vec<u8> = values
            .iter()
            .map(|&v| u8::from((v - centroids[1]).abs() < (v - centroids[0]).abs()))
            .collect();
        let changed = labels.as_ref() != Some(&next);
        centroids = cluster_means(values, &next)?;
        labels = Some(next);
        if !changed {
            break;
        }
    }
    let labels = labels.expect("at least one pass ran");
    if !(centroids[0] < centroids[1]) {
        // Lloyd on a line keeps clusters as ordered intervals, so this only
        // triggers on numerically coincident centroids.
        return Err(Error::DegenerateInput(format!(
            "centroids collapsed to {} and {}",
            centroids[0], centroids[1]
        )));
    }
    Ok(KMeansResult {
        labels,
        centroids,
        iterations_run,
    })
}

fn cluster_means(values: &[f64], labels: &[u8]) -> Result<[f64; 2]> {
    let mut sum = [0.0; 2];
    let mut n = [0usize; 2];
    for (&v, &l) in values.iter().zip(labels) {
        sum[l as usize] += v;
        n[l as usize] += 1;
    }
    if n[0] == 0 || n[1] == 0 {
        return Err(Error::DegenerateInput("a cluster became empty".into()));
    }
    Ok([sum[0] / n[0] as f64, sum[1] / n[1] as f64])
}

/// Largest value of the low side of the best two-way threshold cut. Only
/// cuts between distinct values are considered; ties in cost go to the
/// lowest cut.
fn optimal_threshold(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    // Centering keeps the prefix sums well conditioned.
    let mean = sorted.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = sorted.iter().map(|v| v - mean).collect();
    let total: f64 = centered.iter().sum();
    let total_sq: f64 = centered.iter().map(|v| v * v).sum();

    let mut best = (f64::INFINITY, sorted[0]);
    let (mut s, mut sq) = (0.0, 0.0);
    for i in 1..n {
        s += centered[i - 1];
        sq += centered[i - 1] * centered[i - 1];
        if sorted[i - 1] == sorted[i] {
            continue;
        }
        let (nl, nr) = (i as f64, (n - i) as f64);
        let cost = (sq - s * s / nl) + ((total_sq - sq) - (total - s).powi(2) / nr);
        if cost < best.0 {
            best = (cost, sorted[i - 1]);
        }
    }
    best.1
}

/// Selected scan cells. `cells` is only ever true where `occupied` is.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoiMask {
    pub cells: Array2<bool>,
    pub occupied: Array2<bool>,
}

impl RoiMask {
    pub fn new(cells: Array2<bool>, occupied: Array2<bool>) -> Result<Self> {
        if cells.dim() != occupied.dim() {
            return Err(Error::Geometry(format!(
                "mask {:?} and occupancy {:?} differ in shape",
                cells.dim(),
                occupied.dim()
            )));
        }
        let cells = ndarray::Zip::from(&cells)
            .and(&occupied)
            .map_collect(|&c, &o| c && o);
        Ok(Self { cells, occupied })
    }

    /// All occupied cells selected.
    pub fn all(occupied: Array2<bool>) -> Self {
        Self {
            cells: occupied.clone(),
            occupied,
        }
    }

    pub fn dim(&self) -> (usize, usize) {
        self.cells.dim()
    }

    /// 1-based lookup; out-of-grid cells are unselected.
    pub fn is_selected(&self, row: usize, col: usize) -> bool {
        match (row.checked_sub(1), col.checked_sub(1)) {
            (Some(r), Some(c)) => self.cells.get([r, c]).copied().unwrap_or(false),
            _ => false,
        }
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|c| **c).count()
    }

    pub fn occupied_count(&self) -> usize {
        self.occupied.iter().filter(|c| **c).count()
    }

    pub fn is_subset_of(&self, other: &RoiMask) -> bool {
        self.cells
            .iter()
            .zip(other.cells.iter())
            .all(|(&a, &b)| !a || b)
    }
}

fn cluster_mask(m: &StatMap, opts: KMeansOptions, keep: u8) -> Result<RoiMask> {
    let values = m.occupied_values();
    let km = kmeans2_with(&values, opts)?;
    let mut cells = Array2::from_elem(m.dim(), false);
    let occupied_cells = m
        .occupied
        .indexed_iter()
        .filter(|(_, &o)| o)
        .map(|(idx, _)| idx);
    for (idx, &label) in occupied_cells.zip(&km.labels) {
        cells[idx] = label == keep;
    }
    RoiMask::new(cells, m.occupied.clone())
}

fn expect_kind(m: &StatMap, kind: StatKind) -> Result<()> {
    if m.kind != kind {
        return Err(Error::Data(format!(
            "expected a {} map, got {}",
            kind.name(),
            m.kind.name()
        )));
    }
    Ok(())
}

/// Low-transmission cluster of an absorption map.
pub fn select_absorption_roi(m: &StatMap, opts: KMeansOptions) -> Result<RoiMask> {
    expect_kind(m, StatKind::Absorption)?;
    cluster_mask(m, opts, 0)
}

/// High-deflection cluster of a center-of-mass magnitude map.
pub fn select_scatter_roi(m: &StatMap, opts: KMeansOptions) -> Result<RoiMask> {
    expect_kind(m, StatKind::ComMagnitude)?;
    cluster_mask(m, opts, 1)
}

fn check_same_grid(a: &RoiMask, b: &RoiMask) -> Result<()> {
    if a.dim() != b.dim() || a.occupied != b.occupied {
        return Err(Error::Geometry(format!(
            "masks cover different grids: {:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

pub fn union_roi(a: &RoiMask, b: &RoiMask) -> Result<RoiMask> {
    check_same_grid(a, b)?;
    let cells = ndarray::Zip::from(&a.cells)
        .and(&b.cells)
        .map_collect(|&x, &y| x || y);
    Ok(RoiMask {
        cells,
        occupied: a.occupied.clone(),
    })
}

pub fn intersect_roi(a: &RoiMask, b: &RoiMask) -> Result<RoiMask> {
    check_same_grid(a, b)?;
    let cells = ndarray::Zip::from(&a.cells)
        .and(&b.cells)
        .map_collect(|&x, &y| x && y);
    Ok(RoiMask {
        cells,
        occupied: a.occupied.clone(),
    })
}

/// Grow (`border > 0`) or shrink (`border < 0`) the selection by a square
/// structuring element of Chebyshev radius `|border|`.
pub fn adjust_border(m: &RoiMask, border: i64) -> Result<RoiMask> {
    adjust_border_xy(m, border, border)
}

/// Anisotropic variant: `border_rows` applies along the scan rows' axis
/// (y), `border_cols` along columns (x). Both must share a sign or be zero.
///
/// Dilation is clipped to occupied cells. Erosion treats out-of-grid and
/// unselected cells alike.
pub fn adjust_border_xy(m: &RoiMask, border_rows: i64, border_cols: i64) -> Result<RoiMask> {
    let (rows, cols) = m.dim();
    let limit = rows.max(cols) as i64;
    for b in [border_rows, border_cols] {
        if b.abs() > limit {
            return Err(Error::Size(format!(
                "border {b} exceeds grid extent {limit}"
            )));
        }
    }
    if border_rows.signum() * border_cols.signum() < 0 {
        return Err(Error::Domain(
            "row and column borders must not have opposite signs".into(),
        ));
    }
    if border_rows == 0 && border_cols == 0 {
        return Ok(m.clone());
    }
    let grow = border_rows > 0 || border_cols > 0;
    let (br, bc) = (
        border_rows.unsigned_abs() as usize,
        border_cols.unsigned_abs() as usize,
    );

    let along_cols = sweep(&m.cells, bc, grow, Axis2::Cols);
    let cells = sweep(&along_cols, br, grow, Axis2::Rows);
    let out = RoiMask::new(cells, m.occupied.clone())?;
    if !grow && out.count() == 0 {
        return Err(Error::EmptySelection(format!(
            "eroding by ({border_rows}, {border_cols}) removes every cell"
        )));
    }
    Ok(out)
}

#[derive(Clone, Copy)]
enum Axis2 {
    Rows,
    Cols,
}

/// 1-D running-window OR (grow) or AND (shrink) of half-width `radius`.
fn sweep(src: &Array2<bool>, radius: usize, grow: bool, axis: Axis2) -> Array2<bool> {
    if radius == 0 {
        return src.clone();
    }
    let (rows, cols) = src.dim();
    let (lines, len) = match axis {
        Axis2::Cols => (rows, cols),
        Axis2::Rows => (cols, rows),
    };
    let at = |line: usize, i: usize| match axis {
        Axis2::Cols => [line, i],
        Axis2::Rows => [i, line],
    };
    let mut out = Array2::from_elem((rows, cols), false);
    let mut prefix = vec![0usize; len + 1];
    for line in 0..lines {
        for i in 0..len {
            prefix[i + 1] = prefix[i] + usize::from(src[at(line, i)]);
        }
        for i in 0..len {
            let lo = i as isize - radius as isize;
            let hi = i + radius;
            let count = prefix[hi.min(len - 1) + 1] - prefix[lo.max(0) as usize];
            out[at(line, i)] = if grow {
                count > 0
            } else {
                lo >= 0 && hi < len && count == 2 * radius + 1
            };
        }
    }
    out
}

/// Selected over occupied cells.
pub fn roi_fraction(m: &RoiMask) -> f64 {
    let occupied = m.occupied_count();
    if occupied == 0 {
        return 0.0;
    }
    m.count() as f64 / occupied as f64
}
