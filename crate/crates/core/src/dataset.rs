//! Diffraction-pattern stacks, scan positions and their on-disk formats.
//!
//! A stack file is little-endian: the magic `PTYS`, then five `u32` fields
//! (version = 1, K, N, M, dtype = 0 for float32), then K·N·M `f32` values,
//! frame-major and row-major within a frame. Positions live in a CSV with
//! header `index,row,col,x_um,y_um`.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::RoiMask;
use crate::error::{Error, Result};

pub const STACK_MAGIC: &[u8; 4] = b"PTYS";
pub const STACK_VERSION: u32 = 1;
pub const DTYPE_F32: u32 = 0;
pub const HEADER_LEN: u64 = 24;

const POSITIONS_HEADER: [&str; 5] = ["index", "row", "col", "x_um", "y_um"];

/// One detector frame of nonnegative, finite intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffractionPattern {
    values: Array2<f32>,
}

impl DiffractionPattern {
    pub fn new(values: Array2<f32>) -> Result<Self> {
        let (n, m) = values.dim();
        if n == 0 || m == 0 {
            return Err(Error::Size(format!(
                "pattern must be at least 1x1, got {n}x{m}"
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::Data(format!(
                "pattern intensities must be finite and nonnegative, found {v}"
            )));
        }
        Ok(Self { values })
    }

    pub fn zeros(n: usize, m: usize) -> Self {
        Self {
            values: Array2::zeros((n.max(1), m.max(1))),
        }
    }

    pub fn values(&self) -> ArrayView2<'_, f32> {
        self.values.view()
    }

    pub fn into_values(self) -> Array2<f32> {
        self.values
    }

    /// (N, M): detector rows and columns.
    pub fn dim(&self) -> (usize, usize) {
        self.values.dim()
    }
}

/// Where frame `index` was acquired. `row`/`col` are 1-based scan-grid
/// indices; `x_um`/`y_um` are physical metadata.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanPosition {
    pub index: u32,
    pub row: u32,
    pub col: u32,
    pub x_um: f64,
    pub y_um: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanDataset {
    patterns: Vec<DiffractionPattern>,
    positions: Vec<ScanPosition>,
    grid_rows: usize,
    grid_cols: usize,
    step_size: f64,
}

impl ScanDataset {
    pub fn new(
        patterns: Vec<DiffractionPattern>,
        positions: Vec<ScanPosition>,
        grid_rows: usize,
        grid_cols: usize,
        step_size: f64,
    ) -> Result<Self> {
        if patterns.is_empty() {
            return Err(Error::Size("a dataset needs at least one pattern".into()));
        }
        if patterns.len() != positions.len() {
            return Err(Error::Size(format!(
                "{} patterns but {} positions",
                patterns.len(),
                positions.len()
            )));
        }
        let shape = patterns[0].dim();
        if let Some(p) = patterns.iter().find(|p| p.dim() != shape) {
            return Err(Error::Geometry(format!(
                "non-uniform frame shape: {:?} vs {:?}",
                p.dim(),
                shape
            )));
        }
        validate_positions(&positions, grid_rows, grid_cols)?;
        Ok(Self {
            patterns,
            positions,
            grid_rows,
            grid_cols,
            step_size,
        })
    }

    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }

    pub fn patterns(&self) -> &[DiffractionPattern] {
        &self.patterns
    }

    pub fn positions(&self) -> &[ScanPosition] {
        &self.positions
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.grid_rows, self.grid_cols)
    }

    pub fn step_size(&self) -> f64 {
        self.step_size
    }

    /// Detector frame shape (N, M).
    pub fn frame_dim(&self) -> (usize, usize) {
        self.patterns[0].dim()
    }
}

fn validate_positions(
    positions: &[ScanPosition],
    grid_rows: usize,
    grid_cols: usize,
) -> Result<()> {
    let mut indices = HashSet::with_capacity(positions.len());
    let mut cells = HashSet::with_capacity(positions.len());
    for p in positions {
        if p.index == 0 {
            return Err(Error::Geometry("position indices are 1-based".into()));
        }
        if p.row == 0 || p.col == 0 || p.row as usize > grid_rows || p.col as usize > grid_cols {
            return Err(Error::Geometry(format!(
                "position {} at ({}, {}) lies outside the {}x{} scan grid",
                p.index, p.row, p.col, grid_rows, grid_cols
            )));
        }
        if !indices.insert(p.index) {
            return Err(Error::Geometry(format!(
                "duplicate position index {}",
                p.index
            )));
        }
        if !cells.insert((p.row, p.col)) {
            return Err(Error::Geometry(format!(
                "duplicate scan cell ({}, {})",
                p.row, p.col
            )));
        }
    }
    Ok(())
}

/// Payload size in bytes for a K×N×M float32 stack, or `None` on overflow.
pub fn stack_payload_len(k: u32, n: u32, m: u32) -> Option<u64> {
    (k as u64)
        .checked_mul(n as u64)?
        .checked_mul(m as u64)?
        .checked_mul(4)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StackHeader {
    pub k: u32,
    pub n: u32,
    pub m: u32,
}

impl StackHeader {
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN as usize {
            return Err(Error::Format(format!(
                "stack header needs {HEADER_LEN} bytes, found {}",
                bytes.len()
            )));
        }
        if &bytes[0..4] != STACK_MAGIC {
            return Err(Error::Format("bad magic, expected PTYS".into()));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
        let (version, k, n, m, dtype) = (word(0), word(1), word(2), word(3), word(4));
        if version != STACK_VERSION {
            return Err(Error::Format(format!(
                "unsupported stack version {version}"
            )));
        }
        if dtype != DTYPE_F32 {
            return Err(Error::Format(format!("unsupported dtype {dtype}")));
        }
        if k == 0 || n == 0 || m == 0 {
            return Err(Error::Format(format!("empty stack dimensions {k}x{n}x{m}")));
        }
        Ok(Self { k, n, m })
    }

    pub fn to_bytes(self) -> [u8; HEADER_LEN as usize] {
        let mut out = [0u8; HEADER_LEN as usize];
        out[0..4].copy_from_slice(STACK_MAGIC);
        for (i, w) in [STACK_VERSION, self.k, self.n, self.m, DTYPE_F32]
            .iter()
            .enumerate()
        {
            out[4 + 4 * i..8 + 4 * i].copy_from_slice(&w.to_le_bytes());
        }
        out
    }

    pub fn payload_len(self) -> Result<u64> {
        stack_payload_len(self.k, self.n, self.m)
            .ok_or_else(|| Error::Format("stack dimensions overflow".into()))
    }
}

/// Read a stack file into frames. Frames are decoded in parallel; the result
/// does not depend on scheduling.
pub fn read_stack(path: &Path) -> Result<Vec<Array2<f32>>> {
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let file_len = file.metadata().map_err(|e| Error::io(path, e))?.len();
    let mut head = [0u8; HEADER_LEN as usize];
    let got = read_up_to(&mut file, &mut head).map_err(|e| Error::io(path, e))?;
    let header = StackHeader::parse(&head[..got])?;
    let expected = header.payload_len()?;
    let actual = file_len - HEADER_LEN;
    if expected != actual {
        return Err(Error::Truncated { expected, actual });
    }
    let mut payload = vec![0u8; expected as usize];
    file.read_exact(&mut payload)
        .map_err(|e| Error::io(path, e))?;

    let (n, m) = (header.n as usize, header.m as usize);
    let frame_bytes = n * m * 4;
    Ok(payload
        .par_chunks_exact(frame_bytes)
        .map(|chunk| {
            let values: Vec<f32> = chunk
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            Array2::from_shape_vec((n, m), values).expect("frame size checked against header")
        })
        .collect())
}

fn read_up_to(file: &mut File, buf: &mut [u8]) -> std::io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match file.read(&mut buf[filled..])? {
            0 => break,
            n => filled += n,
        }
    }
    Ok(filled)
}

pub fn write_stack<'a, I>(path: &Path, frames: I, n: usize, m: usize) -> Result<()>
where
    I: ExactSizeIterator<Item = ArrayView2<'a, f32>>,
{
    let to_u32 = |v: usize, what: &str| {
        u32::try_from(v).map_err(|_| Error::Size(format!("{what} = {v} exceeds u32")))
    };
    let header = StackHeader {
        k: to_u32(frames.len(), "K")?,
        n: to_u32(n, "N")?,
        m: to_u32(m, "M")?,
    };
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&header.to_bytes())
        .map_err(|e| Error::io(path, e))?;
    for frame in frames {
        if frame.dim() != (n, m) {
            return Err(Error::Geometry(format!(
                "frame shape {:?} differs from header {n}x{m}",
                frame.dim()
            )));
        }
        for v in frame.iter() {
            w.write_all(&v.to_le_bytes())
                .map_err(|e| Error::io(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Read positions. Indices must be strictly ascending and 1-based; they need
/// not be contiguous, so filtered datasets keep their original indices.
pub fn read_positions(path: &Path) -> Result<Vec<ScanPosition>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let headers = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    if headers.iter().ne(POSITIONS_HEADER.iter().copied()) {
        return Err(Error::Format(format!(
            "positions header must be `{}`, found `{}`",
            POSITIONS_HEADER.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out: Vec<ScanPosition> = Vec::new();
    for rec in rdr.deserialize() {
        let pos: ScanPosition = rec.map_err(|e| csv_error(path, e))?;
        if let Some(prev) = out.last() {
            if pos.index <= prev.index {
                return Err(Error::Format(format!(
                    "position indices must ascend: {} follows {}",
                    pos.index, prev.index
                )));
            }
        }
        out.push(pos);
    }
    Ok(out)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        }
    } else {
        Error::Format(format!("{}: {e}", path.display()))
    }
}

pub fn write_positions(path: &Path, positions: &[ScanPosition]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    if positions.is_empty() {
        w.write_record(POSITIONS_HEADER)
            .map_err(|e| csv_error(path, e))?;
    }
    for p in positions {
        w.serialize(p).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_dataset(stack_path: &Path, positions_path: &Path) -> Result<ScanDataset> {
    let frames = read_stack(stack_path)?;
    let positions = read_positions(positions_path)?;
    if positions.len() != frames.len() {
        return Err(Error::Format(format!(
            "stack holds {} frames but positions file lists {}",
            frames.len(),
            positions.len()
        )));
    }
    let patterns = frames
        .into_iter()
        .enumerate()
        .map(|(i, v)| {
            DiffractionPattern::new(v).map_err(|e| match e {
                Error::Data(msg) => Error::Data(format!("frame {}: {msg}", positions[i].index)),
                other => other,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let grid_rows = positions.iter().map(|p| p.row as usize).max().unwrap_or(0);
    let grid_cols = positions.iter().map(|p| p.col as usize).max().unwrap_or(0);
    let step = infer_step(&positions);
    ScanDataset::new(patterns, positions, grid_rows, grid_cols, step)
}

/// Physical step from the first pair of positions one grid column apart in
/// the same row (falling back to rows). Metadata only.
fn infer_step(positions: &[ScanPosition]) -> f64 {
    let first = match positions.first() {
        Some(p) => p,
        None => return 0.0,
    };
    for p in &positions[1..] {
        if p.row == first.row && p.col != first.col {
            return (p.x_um - first.x_um).abs() / (p.col as f64 - first.col as f64).abs();
        }
    }
    for p in &positions[1..] {
        if p.col == first.col && p.row != first.row {
            return (p.y_um - first.y_um).abs() / (p.row as f64 - first.row as f64).abs();
        }
    }
    0.0
}

pub fn save_dataset(ds: &ScanDataset, stack_path: &Path, positions_path: &Path) -> Result<()> {
    let (n, m) = ds.frame_dim();
    write_stack(stack_path, ds.patterns.iter().map(|p| p.values()), n, m)?;
    write_positions(positions_path, &ds.positions)
}

/// Write a real grid as a single-frame float32 stack.
pub fn write_grid(path: &Path, grid: &Array2<f64>) -> Result<()> {
    let (n, m) = grid.dim();
    let values = grid.mapv(|v| v as f32);
    write_stack(path, std::iter::once(values.view()), n, m)
}

/// Read a single-frame stack written by [`write_grid`].
pub fn read_grid(path: &Path) -> Result<Array2<f64>> {
    let mut frames = read_stack(path)?;
    if frames.len() != 1 {
        return Err(Error::Format(format!(
            "{} holds {} frames, a grid file holds exactly one",
            path.display(),
            frames.len()
        )));
    }
    Ok(frames.pop().unwrap().mapv(|v| v as f64))
}

/// Keep the frames whose scan cell is selected by `mask`, in original order.
pub fn filter_dataset(ds: &ScanDataset, mask: &RoiMask) -> Result<ScanDataset> {
    if mask.dim() != ds.grid() {
        return Err(Error::Geometry(format!(
            "mask grid {:?} differs from dataset grid {:?}",
            mask.dim(),
            ds.grid()
        )));
    }
    let (patterns, positions): (Vec<_>, Vec<_>) = ds
        .patterns
        .iter()
        .zip(&ds.positions)
        .filter(|(_, pos)| mask.is_selected(pos.row as usize, pos.col as usize))
        .map(|(pat, pos)| (pat.clone(), *pos))
        .unzip();
    if patterns.is_empty() {
        return Err(Error::EmptySelection(
            "mask selects no acquired frame".into(),
        ));
    }
    ScanDataset::new(
        patterns,
        positions,
        ds.grid_rows,
        ds.grid_cols,
        ds.step_size,
    )
}

/// Write retained frame indices as a one-column CSV with header `index`.
pub fn write_selection(path: &Path, ds: &ScanDataset) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "index").map_err(|e| Error::io(path, e))?;
    for p in &ds.positions {
        writeln!(w, "{}", p.index).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
