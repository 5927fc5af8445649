//! Per-frame absorption and center-of-mass statistics and the scan-grid maps
//! built from them.
//!
//! Center-of-mass coordinates are 1-based: `Ox` runs over the first detector
//! axis (rows, 1..=N) and `Oy` over the second (columns, 1..=M).

use ndarray::Array2;
use rayon::prelude::*;

use crate::dataset::{DiffractionPattern, ScanDataset, ScanPosition};
use crate::error::{Error, Result};

pub fn total_intensity(p: &DiffractionPattern) -> f64 {
    p.values().iter().map(|&v| v as f64).sum()
}

/// Intensity-weighted mean detector coordinate (Ox, Oy).
pub fn center_of_mass(p: &DiffractionPattern) -> Result<(f64, f64)> {
    frame_moments(p).com()
}

/// Zeroth and first moments of one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameMoments {
    pub total: f64,
    pub row_moment: f64,
    pub col_moment: f64,
}

impl FrameMoments {
    pub fn com(&self) -> Result<(f64, f64)> {
        if !(self.total > 0.0) {
            return Err(Error::UndefinedCom);
        }
        Ok((self.row_moment / self.total, self.col_moment / self.total))
    }
}

pub fn frame_moments(p: &DiffractionPattern) -> FrameMoments {
    let mut total = 0.0;
    let mut row_moment = 0.0;
    let mut col_moment = 0.0;
    for (r, row) in p.values().outer_iter().enumerate() {
        let mut row_sum = 0.0;
        for (c, &v) in row.iter().enumerate() {
            let v = v as f64;
            row_sum += v;
            col_moment += (c + 1) as f64 * v;
        }
        total += row_sum;
        row_moment += (r + 1) as f64 * row_sum;
    }
    FrameMoments {
        total,
        row_moment,
        col_moment,
    }
}

/// Moments for every frame, computed in parallel and collected in index order.
pub fn dataset_moments(patterns: &[DiffractionPattern]) -> Vec<FrameMoments> {
    patterns.par_iter().map(frame_moments).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoMTable {
    pub raw: Vec<[f64; 2]>,
    /// Z-scores; NaN on dead rows.
    pub standardized: Vec<[f64; 2]>,
    pub mean: [f64; 2],
    pub sigma: [f64; 2],
    /// False for frames with zero total intensity.
    pub live: Vec<bool>,
}

impl CoMTable {
    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }
}

/// Z-score each column of `raw` with the sample standard deviation.
pub fn standardize(raw: &[[f64; 2]]) -> Result<CoMTable> {
    let rows: Vec<Option<[f64; 2]>> = raw.iter().map(|r| Some(*r)).collect();
    standardize_live(&rows)
}

/// Like [`standardize`], but `None` rows (dead frames) are excluded from the
/// statistics and carry NaN.
pub fn standardize_live(rows: &[Option<[f64; 2]>]) -> Result<CoMTable> {
    let live_rows: Vec<[f64; 2]> = rows.iter().flatten().copied().collect();
    let k = live_rows.len();
    if k < 2 {
        return Err(Error::Size(format!(
            "standardization needs at least 2 live frames, got {k}"
        )));
    }
    let mut mean = [0.0; 2];
    let mut sigma = [0.0; 2];
    for axis in 0..2 {
        let m = live_rows.iter().map(|r| r[axis]).sum::<f64>() / k as f64;
        let ss: f64 = live_rows.iter().map(|r| (r[axis] - m).powi(2)).sum();
        let s = (ss / (k - 1) as f64).sqrt();
        if !(s > 0.0) {
            return Err(Error::DegenerateAxis(if axis == 0 { "x" } else { "y" }));
        }
        mean[axis] = m;
        sigma[axis] = s;
    }
    let standardized = rows
        .iter()
        .map(|r| match r {
            Some(v) => [(v[0] - mean[0]) / sigma[0], (v[1] - mean[1]) / sigma[1]],
            None => [f64::NAN; 2],
        })
        .collect();
    Ok(CoMTable {
        raw: rows.iter().map(|r| r.unwrap_or([f64::NAN; 2])).collect(),
        standardized,
        mean,
        sigma,
        live: rows.iter().map(|r| r.is_some()).collect(),
    })
}

/// Length of each standardized row; dead rows give 0.
pub fn com_magnitude(t: &CoMTable) -> Vec<f64> {
    t.standardized
        .iter()
        .zip(&t.live)
        .map(|(s, &live)| if live { s[0].hypot(s[1]) } else { 0.0 })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StatKind {
    Absorption,
    ComMagnitude,
}

impl StatKind {
    pub fn name(self) -> &'static str {
        match self {
            StatKind::Absorption => "absorption",
            StatKind::ComMagnitude => "com_magnitude",
        }
    }
}

/// A scalar field over the scan grid. Unoccupied cells hold NaN and are
/// ignored by every operation.
#[derive(Debug, Clone, PartialEq)]
pub struct StatMap {
    pub values: Array2<f64>,
    pub occupied: Array2<bool>,
    pub kind: StatKind,
}

impl StatMap {
    pub fn dim(&self) -> (usize, usize) {
        self.values.dim()
    }

    /// Occupied values in row-major order.
    pub fn occupied_values(&self) -> Vec<f64> {
        self.values
            .iter()
            .zip(self.occupied.iter())
            .filter(|(_, &o)| o)
            .map(|(&v, _)| v)
            .collect()
    }

    /// Value at 1-based (row, col), if occupied.
    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        let idx = [row.checked_sub(1)?, col.checked_sub(1)?];
        match self.occupied.get(idx) {
            Some(true) => Some(self.values[idx]),
            _ => None,
        }
    }

    /// Mark 1-based cells as unoccupied.
    pub fn exclude(&mut self, cells: impl IntoIterator<Item = (usize, usize)>) {
        for (r, c) in cells {
            if let Some(o) = self.occupied.get_mut([r - 1, c - 1]) {
                *o = false;
                self.values[[r - 1, c - 1]] = f64::NAN;
            }
        }
    }

    /// Apply `f` to every occupied value.
    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> StatMap {
        let mut out = self.clone();
        for (v, &o) in out.values.iter_mut().zip(self.occupied.iter()) {
            if o {
                *v = f(*v);
            }
        }
        out
    }
}

pub fn build_stat_map(
    values: &[f64],
    positions: &[ScanPosition],
    grid: (usize, usize),
    kind: StatKind,
) -> Result<StatMap> {
    if values.len() != positions.len() {
        return Err(Error::Size(format!(
            "{} values for {} positions",
            values.len(),
            positions.len()
        )));
    }
    let mut map = StatMap {
        values: Array2::from_elem(grid, f64::NAN),
        occupied: Array2::from_elem(grid, false),
        kind,
    };
    for (&v, p) in values.iter().zip(positions) {
        let (r, c) = (p.row as usize, p.col as usize);
        if r == 0 || c == 0 || r > grid.0 || c > grid.1 {
            return Err(Error::Geometry(format!(
                "position {} at ({r}, {c}) outside {}x{} grid",
                p.index, grid.0, grid.1
            )));
        }
        if map.occupied[[r - 1, c - 1]] {
            return Err(Error::Geometry(format!("duplicate scan cell ({r}, {c})")));
        }
        map.occupied[[r - 1, c - 1]] = true;
        map.values[[r - 1, c - 1]] = v;
    }
    Ok(map)
}

/// 3×3 mean over occupied, in-bounds neighbors (including the cell itself).
pub fn mean_filter_3x3(m: &StatMap) -> StatMap {
    let (rows, cols) = m.dim();
    let mut out = m.clone();
    for r in 0..rows {
        for c in 0..cols {
            if !m.occupied[[r, c]] {
                continue;
            }
            let mut sum = 0.0;
            let mut count = 0usize;
            for rr in r.saturating_sub(1)..=(r + 1).min(rows - 1) {
                for cc in c.saturating_sub(1)..=(c + 1).min(cols - 1) {
                    if m.occupied[[rr, cc]] {
                        sum += m.values[[rr, cc]];
                        count += 1;
                    }
                }
            }
            out.values[[r, c]] = sum / count as f64;
        }
    }
    out
}

pub fn log_transform(m: &StatMap, epsilon: f64) -> Result<StatMap> {
    if !(epsilon > 0.0) {
        return Err(Error::Domain(format!(
            "log epsilon must be positive, got {epsilon}"
        )));
    }
    if let Some(v) = m
        .occupied_values()
        .into_iter()
        .find(|v| !(v + epsilon > 0.0))
    {
        return Err(Error::Domain(format!("cannot take log of {v} + {epsilon}")));
    }
    Ok(m.map_values(|v| (v + epsilon).ln()))
}

/// 1e-12 of the largest occupied value, or the smallest normal float when
/// that is not positive.
pub fn default_log_epsilon(m: &StatMap) -> f64 {
    let max = m
        .occupied_values()
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max);
    let eps = 1e-12 * max;
    if eps > 0.0 && eps.is_finite() {
        eps
    } else {
        f64::MIN_POSITIVE
    }
}

/// Options for turning raw per-frame statistics into clustering inputs.
///
/// By default the maps are mean-filtered and clustered on a linear scale;
/// `log_scale` clusters `ln(v + ε)` instead, which changes the split because
/// k-means is not invariant under nonlinear transforms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapOptions {
    pub mean_filter: bool,
    pub log_scale: bool,
}

impl Default for MapOptions {
    fn default() -> Self {
        Self {
            mean_filter: true,
            log_scale: false,
        }
    }
}

/// Everything the selection stage needs from a dataset.
#[derive(Debug, Clone)]
pub struct ScanStats {
    pub totals: Vec<f64>,
    pub com: CoMTable,
    pub magnitude: Vec<f64>,
    /// Raw maps on the scan grid, dead frames unoccupied.
    pub absorption_raw: StatMap,
    pub magnitude_raw: StatMap,
    /// Filtered and (optionally) log-scaled maps.
    pub absorption: StatMap,
    pub com_magnitude: StatMap,
}

impl ScanStats {
    pub fn dead_count(&self) -> usize {
        self.com.live.iter().filter(|l| !**l).count()
    }
}

pub fn scan_stats(ds: &ScanDataset, opts: MapOptions) -> Result<ScanStats> {
    scan_stats_from_moments(
        &dataset_moments(ds.patterns()),
        ds.positions(),
        ds.grid(),
        opts,
    )
}

/// Raw maps → optional 3×3 mean filter → optional log.
pub fn scan_stats_from_moments(
    moments: &[FrameMoments],
    positions: &[ScanPosition],
    grid: (usize, usize),
    opts: MapOptions,
) -> Result<ScanStats> {
    let totals: Vec<f64> = moments.iter().map(|m| m.total).collect();
    let rows: Vec<Option<[f64; 2]>> = moments
        .iter()
        .map(|m| m.com().ok().map(|(x, y)| [x, y]))
        .collect();
    let com = standardize_live(&rows)?;
    let magnitude = com_magnitude(&com);
    let dead: Vec<(usize, usize)> = positions
        .iter()
        .zip(&com.live)
        .filter(|(_, live)| !**live)
        .map(|(p, _)| (p.row as usize, p.col as usize))
        .collect();

    let mut absorption_raw = build_stat_map(&totals, positions, grid, StatKind::Absorption)?;
    let mut magnitude_raw = build_stat_map(&magnitude, positions, grid, StatKind::ComMagnitude)?;
    absorption_raw.exclude(dead.iter().copied());
    magnitude_raw.exclude(dead.iter().copied());

    let prepare = |m: &StatMap| -> Result<StatMap> {
        let m = if opts.mean_filter {
            mean_filter_3x3(m)
        } else {
            m.clone()
        };
        if opts.log_scale {
            log_transform(&m, default_log_epsilon(&m))
        } else {
            Ok(m)
        }
    };
    let absorption = prepare(&absorption_raw)?;
    let com_magnitude = prepare(&magnitude_raw)?;
    Ok(ScanStats {
        totals,
        com,
        magnitude,
        absorption_raw,
        magnitude_raw,
        absorption,
        com_magnitude,
    })
}
