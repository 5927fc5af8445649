//! End-to-end runs: simulate or load → stats → clustering → selection →
//! optional reconstruction, with per-stage timing.

use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::clustering::{
    adjust_border_xy, intersect_roi, roi_fraction, select_absorption_roi, select_scatter_roi,
    union_roi, KMeansInit, KMeansOptions, RoiMask,
};
use crate::dataset::{
    filter_dataset, load_dataset, save_dataset, write_grid, write_selection, ScanDataset,
    ScanPosition,
};
use crate::error::{Error, Result};
use crate::recon::{
    compare_phase, epie_reconstruct, modulus_image, phase_image, Crop, ReconImage, ReconOptions,
};
use crate::render::{write_grid_png, write_map_png, write_mask_png};
use crate::simulator::{
    circular_probe, shepp_logan_with, simulate_scan, Phantom, PhantomParams, PoissonNoise, Raster,
    ScanConfig,
};
use crate::stats::{scan_stats, MapOptions, StatKind, StatMap};

pub const STAGES: [&str; 5] = [
    "input",
    "stats",
    "clustering",
    "selection",
    "reconstruction",
];

/// Marker written into the output directory when a run aborts.
pub const INVALID_MARKER: &str = "INVALID";

/// Every knob of a run. Each field has a default, so an empty config file is
/// a complete configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub stack: Option<PathBuf>,
    pub positions: Option<PathBuf>,
    pub out: PathBuf,

    pub phantom_size: usize,
    pub probe_diameter: usize,
    pub frame_size: usize,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub step_px: usize,
    pub absorption: f64,
    pub phase: f64,
    /// Mean free-space photon count per frame; 0 disables noise.
    pub photons: f64,
    pub pixel_size_um: f64,

    pub mean_filter: bool,
    pub log_scale: bool,
    pub kmeans_iters: usize,
    pub kmeans_init: KMeansInit,
    pub border: i64,
    /// Anisotropic overrides of `border` along scan rows (y) and columns (x).
    pub border_y: Option<i64>,
    pub border_x: Option<i64>,

    pub reconstruct: bool,
    pub recon_iterations: usize,
    pub object_step: f64,
    pub ssim_crop: Option<Crop>,

    pub seed: u64,
    pub threads: Option<usize>,
    pub png: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            stack: None,
            positions: None,
            out: PathBuf::from("ptyroi-out"),
            phantom_size: 256,
            probe_diameter: 16,
            frame_size: 16,
            grid_rows: 40,
            grid_cols: 40,
            step_px: 6,
            absorption: crate::simulator::DEFAULT_ABSORPTION,
            phase: crate::simulator::DEFAULT_PHASE,
            photons: 0.0,
            pixel_size_um: 1.0,
            mean_filter: true,
            log_scale: false,
            kmeans_iters: crate::clustering::DEFAULT_MAX_ITERS,
            kmeans_init: KMeansInit::OptimalCut,
            border: 0,
            border_y: None,
            border_x: None,
            reconstruct: false,
            recon_iterations: 200,
            object_step: 1.0,
            ssim_crop: None,
            seed: 0,
            threads: None,
            png: true,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("{key} = {value:?}: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!(
            "{key} = {value:?}: expected a boolean"
        ))),
    }
}

pub fn parse_crop(value: &str) -> Result<Crop> {
    let parts: Vec<usize> = value
        .split(',')
        .map(|p| parse("crop", p.trim()))
        .collect::<Result<_>>()?;
    match parts.as_slice() {
        [top, left, rows, cols] => Ok(Crop {
            top: *top,
            left: *left,
            rows: *rows,
            cols: *cols,
        }),
        _ => Err(Error::Config(format!(
            "crop {value:?}: expected top,left,rows,cols"
        ))),
    }
}

impl PipelineConfig {
    /// Set one field from its config-file spelling.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "stack" => self.stack = Some(PathBuf::from(v)),
            "positions" => self.positions = Some(PathBuf::from(v)),
            "out" => self.out = PathBuf::from(v),
            "phantom_size" => self.phantom_size = parse(key, v)?,
            "probe_diameter" => self.probe_diameter = parse(key, v)?,
            "frame_size" => self.frame_size = parse(key, v)?,
            "grid_rows" => self.grid_rows = parse(key, v)?,
            "grid_cols" => self.grid_cols = parse(key, v)?,
            "step_px" => self.step_px = parse(key, v)?,
            "absorption" | "alpha" => self.absorption = parse(key, v)?,
            "phase" | "phi" => self.phase = parse(key, v)?,
            "photons" => self.photons = parse(key, v)?,
            "pixel_size_um" => self.pixel_size_um = parse(key, v)?,
            "mean_filter" => self.mean_filter = parse_bool(key, v)?,
            "log" => self.log_scale = parse_bool(key, v)?,
            "kmeans_iters" => self.kmeans_iters = parse(key, v)?,
            "kmeans_init" => {
                self.kmeans_init = match v {
                    "optimal" | "optimal_cut" => KMeansInit::OptimalCut,
                    "extremes" | "minmax" => KMeansInit::Extremes,
                    _ => return Err(Error::Config(format!("kmeans_init = {v:?}"))),
                }
            }
            "border" => self.border = parse(key, v)?,
            "border_y" => self.border_y = Some(parse(key, v)?),
            "border_x" => self.border_x = Some(parse(key, v)?),
            "reconstruct" => self.reconstruct = parse_bool(key, v)?,
            "recon_iterations" => self.recon_iterations = parse(key, v)?,
            "object_step" => self.object_step = parse(key, v)?,
            "ssim_crop" => self.ssim_crop = Some(parse_crop(v)?),
            "seed" => self.seed = parse(key, v)?,
            "threads" => self.threads = Some(parse(key, v)?),
            "png" => self.png = parse_bool(key, v)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Parse `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            self.set(key, value)?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    pub fn map_options(&self) -> MapOptions {
        MapOptions {
            mean_filter: self.mean_filter,
            log_scale: self.log_scale,
        }
    }

    pub fn kmeans_options(&self) -> KMeansOptions {
        KMeansOptions {
            max_iters: self.kmeans_iters,
            init: self.kmeans_init,
        }
    }

    pub fn borders(&self) -> (i64, i64) {
        (
            self.border_y.unwrap_or(self.border),
            self.border_x.unwrap_or(self.border),
        )
    }

    pub fn phantom_params(&self) -> PhantomParams {
        PhantomParams {
            absorption: self.absorption,
            phase: self.phase,
        }
    }

    pub fn noise_seed(&self) -> u64 {
        self.seed
    }

    /// Frame-order seed for reconstruction, derived from the root seed.
    pub fn recon_seed(&self) -> u64 {
        self.seed ^ 0x9E37_79B9_7F4A_7C15
    }

    pub fn scan_config(&self) -> Result<ScanConfig> {
        Ok(ScanConfig {
            raster: Raster::centered(
                self.phantom_size,
                self.frame_size,
                self.grid_rows,
                self.grid_cols,
                self.step_px,
            )?,
            pixel_size_um: self.pixel_size_um,
            noise: (self.photons > 0.0).then_some(PoissonNoise {
                photons: self.photons,
                seed: self.noise_seed(),
            }),
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct StageTiming {
    pub name: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TimingReport {
    pub stages: Vec<StageTiming>,
    pub total_seconds: f64,
    pub frames_in: usize,
    pub frames_out: usize,
}

impl TimingReport {
    pub fn stage(&self, name: &str) -> Option<f64> {
        self.stages
            .iter()
            .find(|s| s.name == name)
            .map(|s| s.seconds)
    }

    /// Stats, clustering and selection.
    pub fn preprocessing_seconds(&self) -> f64 {
        ["stats", "clustering", "selection"]
            .iter()
            .filter_map(|s| self.stage(s))
            .sum()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RoiSummary {
    pub absorption_count: usize,
    pub scatter_count: usize,
    pub overlap_count: usize,
    pub union_count: usize,
    pub border_rows: i64,
    pub border_cols: i64,
    pub selected_count: usize,
    pub occupied_count: usize,
    pub fraction: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ReconSummary {
    pub iterations: usize,
    pub full_final_error: f64,
    pub filtered_final_error: f64,
    pub crop: [usize; 4],
    pub ssim: f64,
}

#[derive(Debug, Clone)]
pub struct PipelineReport {
    pub timing: TimingReport,
    pub selection: Selection,
    pub recon: Option<ReconSummary>,
}

/// Clusters, their union and the border-adjusted selection.
#[derive(Debug, Clone)]
pub struct Selection {
    pub absorption: RoiMask,
    pub scatter: RoiMask,
    pub union: RoiMask,
    pub adjusted: RoiMask,
    pub summary: RoiSummary,
}

pub fn cluster_maps(
    absorption: &StatMap,
    magnitude: &StatMap,
    opts: KMeansOptions,
) -> Result<(RoiMask, RoiMask, RoiMask)> {
    let a = select_absorption_roi(absorption, opts)?;
    let b = select_scatter_roi(magnitude, opts)?;
    let u = union_roi(&a, &b)?;
    Ok((a, b, u))
}

pub fn select_roi(
    absorption: &StatMap,
    magnitude: &StatMap,
    opts: KMeansOptions,
    (border_rows, border_cols): (i64, i64),
) -> Result<Selection> {
    let (a, b, u) = cluster_maps(absorption, magnitude, opts)?;
    Selection::from_clusters(a, b, u, (border_rows, border_cols))
}

impl Selection {
    pub fn from_clusters(
        absorption: RoiMask,
        scatter: RoiMask,
        union: RoiMask,
        (border_rows, border_cols): (i64, i64),
    ) -> Result<Self> {
        let adjusted = adjust_border_xy(&union, border_rows, border_cols)?;
        let summary = RoiSummary {
            absorption_count: absorption.count(),
            scatter_count: scatter.count(),
            overlap_count: intersect_roi(&absorption, &scatter)?.count(),
            union_count: union.count(),
            border_rows,
            border_cols,
            selected_count: adjusted.count(),
            occupied_count: adjusted.occupied_count(),
            fraction: roi_fraction(&adjusted),
        };
        Ok(Self {
            absorption,
            scatter,
            union,
            adjusted,
            summary,
        })
    }
}

/// A stage error, tagged with the stage it came from.
#[derive(Debug)]
pub struct StageError {
    pub stage: &'static str,
    pub source: Error,
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stage `{}` failed: {}", self.stage, self.source)
    }
}

impl std::error::Error for StageError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.source)
    }
}

struct Clock {
    stages: Vec<StageTiming>,
    started: Instant,
}

impl Clock {
    fn run<T>(
        &mut self,
        stage: &'static str,
        f: impl FnOnce() -> Result<T>,
    ) -> Result<T, StageError> {
        let t = Instant::now();
        let out = f().map_err(|source| StageError { stage, source });
        self.stages.push(StageTiming {
            name: stage.to_string(),
            seconds: t.elapsed().as_secs_f64(),
        });
        out
    }
}

/// Run every stage, writing artifacts into `cfg.out`. On failure an
/// `INVALID` marker naming the stage and cause is left in the directory.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineReport, StageError> {
    let out = cfg.out.clone();
    let marker = out.join(INVALID_MARKER);
    let result = fs::create_dir_all(&out)
        .map_err(|e| StageError {
            stage: "input",
            source: Error::io(&out, e),
        })
        .and_then(|_| {
            let _ = fs::remove_file(&marker);
            run_stages(cfg, &out)
        });
    if let Err(e) = &result {
        let _ = fs::write(&marker, format!("{e}\n"));
    }
    result
}

fn run_stages(cfg: &PipelineConfig, out: &Path) -> Result<PipelineReport, StageError> {
    let mut clock = Clock {
        stages: Vec::new(),
        started: Instant::now(),
    };

    let (ds, phantom) = clock.run("input", || load_or_simulate(cfg, out))?;

    let stats = clock.run("stats", || {
        let stats = scan_stats(&ds, cfg.map_options())?;
        write_stat_csv(
            &out.join("absorption.csv"),
            ds.positions(),
            &stats.absorption,
        )?;
        write_stat_csv(
            &out.join("com_magnitude.csv"),
            ds.positions(),
            &stats.com_magnitude,
        )?;
        if cfg.png {
            write_map_png(&out.join("absorption.png"), &stats.absorption_raw)?;
            write_map_png(&out.join("com_magnitude.png"), &stats.magnitude_raw)?;
        }
        Ok(stats)
    })?;

    let clusters = clock.run("clustering", || {
        cluster_maps(
            &stats.absorption,
            &stats.com_magnitude,
            cfg.kmeans_options(),
        )
    })?;

    let (selection, filtered) = clock.run("selection", || {
        let (a, b, u) = clusters;
        let selection = Selection::from_clusters(a, b, u, cfg.borders())?;
        let filtered = filter_dataset(&ds, &selection.adjusted)?;
        write_mask_csv(
            &out.join("roi_mask.csv"),
            ds.positions(),
            &selection.adjusted,
        )?;
        write_json(&out.join("roi_summary.json"), &selection.summary)?;
        write_selection(&out.join("selection.csv"), &filtered)?;
        save_dataset(
            &filtered,
            &out.join("filtered.ptys"),
            &out.join("filtered_positions.csv"),
        )?;
        if cfg.png {
            write_mask_png(&out.join("roi_mask.png"), &selection.adjusted)?;
        }
        Ok((selection, filtered))
    })?;

    let recon = if cfg.reconstruct {
        Some(clock.run("reconstruction", || {
            reconstruct_and_compare(cfg, &ds, &filtered, phantom.as_ref(), out)
        })?)
    } else {
        clock.run("reconstruction", || Ok(()))?;
        None
    };

    let timing = TimingReport {
        total_seconds: clock.started.elapsed().as_secs_f64(),
        stages: clock.stages,
        frames_in: ds.len(),
        frames_out: filtered.len(),
    };
    write_json(&out.join("timing.json"), &timing).map_err(|source| StageError {
        stage: "reconstruction",
        source,
    })?;
    Ok(PipelineReport {
        timing,
        selection,
        recon,
    })
}

fn load_or_simulate(cfg: &PipelineConfig, out: &Path) -> Result<(ScanDataset, Option<Phantom>)> {
    match (&cfg.stack, &cfg.positions) {
        (Some(stack), Some(positions)) => Ok((load_dataset(stack, positions)?, None)),
        (None, None) => {
            let phantom = shepp_logan_with(cfg.phantom_size, cfg.phantom_params())?;
            let probe = circular_probe(cfg.frame_size, cfg.probe_diameter)?;
            let ds = simulate_scan(&phantom, &probe, &cfg.scan_config()?)?;
            save_dataset(&ds, &out.join("scan.ptys"), &out.join("positions.csv"))?;
            Ok((ds, Some(phantom)))
        }
        _ => Err(Error::Config(
            "set both `stack` and `positions`, or neither to simulate".into(),
        )),
    }
}

fn reconstruct_and_compare(
    cfg: &PipelineConfig,
    full: &ScanDataset,
    filtered: &ScanDataset,
    phantom: Option<&Phantom>,
    out: &Path,
) -> Result<ReconSummary> {
    let (n, m) = full.frame_dim();
    if n != m {
        return Err(Error::Geometry(format!(
            "reconstruction needs square frames, got {n}x{m}"
        )));
    }
    let probe = circular_probe(n, cfg.probe_diameter)?;
    let mut opts = ReconOptions {
        iterations: cfg.recon_iterations,
        object_step: cfg.object_step,
        seed: cfg.recon_seed(),
        pixel_pitch: cfg.pixel_size_um,
        object_shape: phantom.map(|p| (p.size(), p.size())),
    };
    let full_rec = epie_reconstruct(full, &probe, &opts)?;
    opts.object_shape = Some(full_rec.object.dim());
    let filtered_rec = epie_reconstruct(filtered, &probe, &opts)?;
    write_recon(out, "full", &full_rec)?;
    write_recon(out, "filtered", &filtered_rec)?;

    let crop = match (cfg.ssim_crop, phantom) {
        (Some(c), _) => c,
        (None, Some(p)) => {
            Crop::bounding_box(&p.support).unwrap_or(Crop::full(full_rec.object.dim()))
        }
        (None, None) => Crop::full(full_rec.object.dim()),
    };
    let score = compare_phase(&full_rec, &filtered_rec, crop)?;
    let summary = ReconSummary {
        iterations: cfg.recon_iterations,
        full_final_error: full_rec.error_trace.last().copied().unwrap_or(f64::NAN),
        filtered_final_error: filtered_rec.error_trace.last().copied().unwrap_or(f64::NAN),
        crop: [crop.top, crop.left, crop.rows, crop.cols],
        ssim: score,
    };
    write_json(&out.join("recon_summary.json"), &summary)?;
    Ok(summary)
}

/// Phase and modulus as grid files and PNGs, plus the misfit trace.
pub fn write_recon(out: &Path, prefix: &str, rec: &ReconImage) -> Result<()> {
    let phase = phase_image(rec);
    let modulus = modulus_image(rec);
    write_grid(&out.join(format!("{prefix}_phase.ptys")), &phase)?;
    write_grid(&out.join(format!("{prefix}_modulus.ptys")), &modulus)?;
    write_grid_png(&out.join(format!("{prefix}_phase.png")), &phase)?;
    write_grid_png(&out.join(format!("{prefix}_modulus.png")), &modulus)?;
    let path = out.join(format!("{prefix}_error_trace.csv"));
    let mut w = create(&path)?;
    writeln!(w, "iteration,misfit").map_err(|e| Error::io(&path, e))?;
    for (i, e) in rec.error_trace.iter().enumerate() {
        writeln!(w, "{},{e}", i + 1).map_err(|e| Error::io(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).map_err(|e| Error::io(path, e))?,
    ))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Format(format!("serializing {}: {e}", path.display())))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// `index,row,col,value` for every frame. Dead frames (absent from the map)
/// are written as `-inf` in the absorption table and `0` in the magnitude table.
pub fn write_stat_csv(path: &Path, positions: &[ScanPosition], map: &StatMap) -> Result<()> {
    let missing = match map.kind {
        StatKind::Absorption => f64::NEG_INFINITY,
        StatKind::ComMagnitude => 0.0,
    };
    let mut w = create(path)?;
    writeln!(w, "index,row,col,value").map_err(|e| Error::io(path, e))?;
    for p in positions {
        let v = map.get(p.row as usize, p.col as usize).unwrap_or(missing);
        writeln!(w, "{},{},{},{v}", p.index, p.row, p.col).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Deserialize)]
struct StatRow {
    index: u32,
    row: u32,
    col: u32,
    value: f64,
}

/// Rows of a stat CSV as positions (no physical coordinates) and values.
pub fn read_stat_csv(path: &Path) -> Result<(Vec<ScanPosition>, Vec<f64>)> {
    let mut rdr = csv::Reader::from_path(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let mut positions = Vec::new();
    let mut values = Vec::new();
    for rec in rdr.deserialize() {
        let row: StatRow = rec.map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        positions.push(ScanPosition {
            index: row.index,
            row: row.row,
            col: row.col,
            x_um: 0.0,
            y_um: 0.0,
        });
        values.push(row.value);
    }
    if positions.is_empty() {
        return Err(Error::Format(format!("{} has no rows", path.display())));
    }
    Ok((positions, values))
}

/// Build both maps from stat CSVs. Rows with a non-finite value in either
/// file are dead frames and stay unoccupied.
pub fn maps_from_csv(
    absorption: &Path,
    magnitude: &Path,
) -> Result<(Vec<ScanPosition>, StatMap, StatMap)> {
    let (pos_a, val_a) = read_stat_csv(absorption)?;
    let (pos_b, val_b) = read_stat_csv(magnitude)?;
    let key = |p: &ScanPosition| (p.index, p.row, p.col);
    if pos_a.len() != pos_b.len() || pos_a.iter().zip(&pos_b).any(|(a, b)| key(a) != key(b)) {
        return Err(Error::Format(
            "absorption and magnitude tables list different frames".into(),
        ));
    }
    let grid = (
        pos_a.iter().map(|p| p.row as usize).max().unwrap_or(0),
        pos_a.iter().map(|p| p.col as usize).max().unwrap_or(0),
    );
    let mut a = crate::stats::build_stat_map(&val_a, &pos_a, grid, StatKind::Absorption)?;
    let mut b = crate::stats::build_stat_map(&val_b, &pos_b, grid, StatKind::ComMagnitude)?;
    let dead: Vec<(usize, usize)> = pos_a
        .iter()
        .zip(val_a.iter().zip(&val_b))
        .filter(|(_, (x, y))| !x.is_finite() || !y.is_finite())
        .map(|(p, _)| (p.row as usize, p.col as usize))
        .collect();
    a.exclude(dead.iter().copied());
    b.exclude(dead);
    Ok((pos_a, a, b))
}

/// `index,row,col,selected` for every frame.
pub fn write_mask_csv(path: &Path, positions: &[ScanPosition], mask: &RoiMask) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "index,row,col,selected").map_err(|e| Error::io(path, e))?;
    for p in positions {
        let s = u8::from(mask.is_selected(p.row as usize, p.col as usize));
        writeln!(w, "{},{},{},{s}", p.index, p.row, p.col).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Deserialize)]
struct MaskRow {
    #[allow(dead_code)]
    index: u32,
    row: u32,
    col: u32,
    selected: u8,
}

/// Rebuild a mask over `ds`'s grid from a mask CSV.
pub fn read_mask_csv(path: &Path, ds: &ScanDataset) -> Result<RoiMask> {
    let (rows, cols) = ds.grid();
    let mut occupied = Array2::from_elem((rows, cols), false);
    for p in ds.positions() {
        occupied[[p.row as usize - 1, p.col as usize - 1]] = true;
    }
    let mut cells = Array2::from_elem((rows, cols), false);
    let mut rdr = csv::Reader::from_path(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    for rec in rdr.deserialize() {
        let row: MaskRow = rec.map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        let (r, c) = (row.row as usize, row.col as usize);
        if r == 0 || c == 0 || r > rows || c > cols {
            return Err(Error::Geometry(format!(
                "mask cell ({r}, {c}) outside the {rows}x{cols} scan grid"
            )));
        }
        cells[[r - 1, c - 1]] = row.selected != 0;
    }
    RoiMask::new(cells, occupied)
}
