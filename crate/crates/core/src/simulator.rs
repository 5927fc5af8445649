//! Ground-truth scans: a Shepp-Logan phantom raster scanned by a uniform disk
//! probe, recorded as far-field intensities.

use ndarray::Array2;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;

use crate::dataset::{DiffractionPattern, ScanDataset, ScanPosition};
use crate::error::{Error, Result};
use crate::fft::{fftshift, Fft2};

pub const DEFAULT_ABSORPTION: f64 = 0.3;
pub const DEFAULT_PHASE: f64 = 0.5;

/// Shepp-Logan ellipses on [-1, 1]²: center (x, y), semi-axes (a, b),
/// rotation in degrees, additive density.
pub const SHEPP_LOGAN_ELLIPSES: [[f64; 6]; 10] = [
    [0.0, 0.0, 0.69, 0.92, 0.0, 2.0],
    [0.0, -0.0184, 0.6624, 0.874, 0.0, -0.98],
    [0.22, 0.0, 0.11, 0.31, -18.0, -0.02],
    [-0.22, 0.0, 0.16, 0.41, 18.0, -0.02],
    [0.0, 0.35, 0.21, 0.25, 0.0, 0.01],
    [0.0, 0.1, 0.046, 0.046, 0.0, 0.01],
    [0.0, -0.1, 0.046, 0.046, 0.0, 0.01],
    [-0.08, -0.605, 0.046, 0.023, 0.0, 0.01],
    [0.0, -0.606, 0.023, 0.023, 0.0, 0.01],
    [0.06, -0.605, 0.023, 0.046, 0.0, 0.01],
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhantomParams {
    /// α: amplitude drop at unit density.
    pub absorption: f64,
    /// φ: phase shift in radians at unit density.
    pub phase: f64,
}

impl Default for PhantomParams {
    fn default() -> Self {
        Self {
            absorption: DEFAULT_ABSORPTION,
            phase: DEFAULT_PHASE,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Phantom {
    /// Density map scaled to [0, 1].
    pub density: Array2<f64>,
    pub transmission: Array2<Complex64>,
    pub support: Array2<bool>,
    pub params: PhantomParams,
}

impl Phantom {
    pub fn size(&self) -> usize {
        self.transmission.nrows()
    }

    /// Programmed phase map φ·density.
    pub fn phase_map(&self) -> Array2<f64> {
        self.density.mapv(|d| self.params.phase * d)
    }

    /// An n×n object of unit transmission everywhere.
    pub fn free_space(n: usize) -> Self {
        Self {
            density: Array2::zeros((n, n)),
            transmission: Array2::from_elem((n, n), Complex64::new(1.0, 0.0)),
            support: Array2::from_elem((n, n), false),
            params: PhantomParams::default(),
        }
    }
}

pub fn shepp_logan(n: usize) -> Result<Phantom> {
    shepp_logan_with(n, PhantomParams::default())
}

/// Rasterize the ten-ellipse phantom at pixel centers, scale the density to
/// [0, 1] and embed it as `exp(iφ·d)·(1 − α·d)`.
pub fn shepp_logan_with(n: usize, params: PhantomParams) -> Result<Phantom> {
    if n < 16 {
        return Err(Error::Size(format!("phantom needs n >= 16, got {n}")));
    }
    if !(0.0..=1.0).contains(&params.absorption) {
        return Err(Error::Domain(format!(
            "absorption strength must lie in [0, 1], got {}",
            params.absorption
        )));
    }
    let mut density = Array2::<f64>::zeros((n, n));
    let mut support = Array2::from_elem((n, n), false);
    let nf = n as f64;
    for ((r, c), d) in density.indexed_iter_mut() {
        let x = (2.0 * c as f64 + 1.0 - nf) / nf;
        let y = (nf - 2.0 * r as f64 - 1.0) / nf;
        for e in &SHEPP_LOGAN_ELLIPSES {
            if inside_ellipse(x, y, e) {
                *d += e[5];
                support[[r, c]] = true;
            }
        }
    }
    let max = density.iter().cloned().fold(0.0f64, f64::max);
    if max > 0.0 {
        density.mapv_inplace(|d| d / max);
    }
    let transmission =
        density.mapv(|d| Complex64::from_polar(1.0 - params.absorption * d, params.phase * d));
    Ok(Phantom {
        density,
        transmission,
        support,
        params,
    })
}

fn inside_ellipse(x: f64, y: f64, e: &[f64; 6]) -> bool {
    let (sin, cos) = e[4].to_radians().sin_cos();
    let (dx, dy) = (x - e[0], y - e[1]);
    let u = dx * cos + dy * sin;
    let v = -dx * sin + dy * cos;
    (u / e[2]).powi(2) + (v / e[3]).powi(2) <= 1.0
}

#[derive(Debug, Clone)]
pub struct Probe {
    pub amplitude: Array2<Complex64>,
    pub diameter_px: usize,
}

impl Probe {
    pub fn size(&self) -> usize {
        self.amplitude.nrows()
    }

    pub fn power(&self) -> f64 {
        self.amplitude.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn max_intensity(&self) -> f64 {
        self.amplitude
            .iter()
            .map(|a| a.norm_sqr())
            .fold(0.0, f64::max)
    }
}

/// Unit-amplitude disk centered in a p×p window. A pixel belongs to the disk
/// when its center lies within `diameter_px / 2` of the window center.
pub fn circular_probe(p: usize, diameter_px: usize) -> Result<Probe> {
    if diameter_px == 0 || diameter_px > p {
        return Err(Error::Size(format!(
            "probe diameter must lie in [1, {p}], got {diameter_px}"
        )));
    }
    let center = p as f64 / 2.0;
    let r2 = (diameter_px as f64 / 2.0).powi(2);
    let amplitude = Array2::from_shape_fn((p, p), |(r, c)| {
        let dy = r as f64 + 0.5 - center;
        let dx = c as f64 + 0.5 - center;
        if dx * dx + dy * dy <= r2 {
            Complex64::new(1.0, 0.0)
        } else {
            Complex64::new(0.0, 0.0)
        }
    });
    let probe = Probe {
        amplitude,
        diameter_px,
    };
    if probe.power() == 0.0 {
        return Err(Error::Size(format!(
            "a {diameter_px}-px disk covers no pixel center of a {p}-px window"
        )));
    }
    Ok(probe)
}

/// `|fftshift(FFT2(probe ⊙ patch))|²` for the window whose top-left pixel is
/// `top_left` (row, col).
pub fn forward_diffraction(
    obj: &Phantom,
    probe: &Probe,
    top_left: (usize, usize),
) -> Result<DiffractionPattern> {
    let mut fft = Fft2::new(probe.size(), probe.size());
    forward_with(&mut fft, obj, probe, top_left).map(|v| {
        DiffractionPattern::new(v.mapv(|x| x as f32)).expect("squared moduli are nonnegative")
    })
}

fn forward_with(
    fft: &mut Fft2,
    obj: &Phantom,
    probe: &Probe,
    (top, left): (usize, usize),
) -> Result<Array2<f64>> {
    let p = probe.size();
    let n = obj.size();
    if top + p > n || left + p > n {
        return Err(Error::Geometry(format!(
            "{p}-px window at ({top}, {left}) leaves the {n}-px object"
        )));
    }
    let mut buf: Vec<Complex64> = Vec::with_capacity(p * p);
    for r in 0..p {
        for c in 0..p {
            buf.push(probe.amplitude[[r, c]] * obj.transmission[[top + r, left + c]]);
        }
    }
    fft.forward(&mut buf);
    let intensity: Vec<f64> = buf.iter().map(|v| v.norm_sqr()).collect();
    let mut centered = vec![0.0; p * p];
    fftshift(&intensity, p, p, &mut centered);
    Ok(Array2::from_shape_vec((p, p), centered).expect("p*p buffer"))
}

/// A rectangular raster of probe windows on the object.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Raster {
    pub rows: usize,
    pub cols: usize,
    pub step_px: usize,
    /// Top-left pixel of the window at scan cell (1, 1).
    pub origin: (usize, usize),
}

impl Raster {
    /// A raster centered on an n-px object for p-px windows.
    pub fn centered(n: usize, p: usize, rows: usize, cols: usize, step_px: usize) -> Result<Self> {
        let extent = |k: usize| k.saturating_sub(1) * step_px + p;
        let (er, ec) = (extent(rows), extent(cols));
        if rows == 0 || cols == 0 {
            return Err(Error::Size(
                "raster needs at least one row and column".into(),
            ));
        }
        if er > n || ec > n {
            return Err(Error::Geometry(format!(
                "{rows}x{cols} raster with step {step_px} and {p}-px windows spans {er}x{ec} px, object is {n} px"
            )));
        }
        Ok(Self {
            rows,
            cols,
            step_px,
            origin: ((n - er) / 2, (n - ec) / 2),
        })
    }

    /// Window top-left for 1-based scan cell (row, col).
    pub fn top_left(&self, row: usize, col: usize) -> (usize, usize) {
        (
            self.origin.0 + (row - 1) * self.step_px,
            self.origin.1 + (col - 1) * self.step_px,
        )
    }

    /// 1-based (row, col) of 1-based raster index k.
    pub fn cell(&self, k: usize) -> (usize, usize) {
        ((k - 1) / self.cols + 1, (k - 1) % self.cols + 1)
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoissonNoise {
    /// Expected photon count of a free-space frame.
    pub photons: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanConfig {
    pub raster: Raster,
    /// Object pixel size; physical coordinates are window top-left × this.
    pub pixel_size_um: f64,
    pub noise: Option<PoissonNoise>,
}

/// Raster scan in row-major order. Frames are simulated in parallel; noise
/// for frame k is drawn from its own stream seeded with `seed ^ k`.
pub fn simulate_scan(obj: &Phantom, probe: &Probe, cfg: &ScanConfig) -> Result<ScanDataset> {
    let raster = cfg.raster;
    let p = probe.size();
    let n = obj.size();
    let (last_top, last_left) = raster.top_left(raster.rows, raster.cols);
    if last_top + p > n || last_left + p > n {
        return Err(Error::Geometry(format!(
            "raster reaches pixel ({}, {}) beyond the {n}-px object",
            last_top + p,
            last_left + p
        )));
    }
    let free_space_total = (p * p) as f64 * probe.power();
    let patterns = (1..=raster.len())
        .into_par_iter()
        .map_init(
            || Fft2::new(p, p),
            |fft, k| {
                let (row, col) = raster.cell(k);
                let mut intensity = forward_with(fft, obj, probe, raster.top_left(row, col))?;
                if let Some(noise) = cfg.noise {
                    apply_poisson(&mut intensity, noise, k as u64, free_space_total)?;
                }
                DiffractionPattern::new(intensity.mapv(|x| x as f32))
            },
        )
        .collect::<Result<Vec<_>>>()?;
    let positions = (1..=raster.len())
        .map(|k| {
            let (row, col) = raster.cell(k);
            let (top, left) = raster.top_left(row, col);
            ScanPosition {
                index: k as u32,
                row: row as u32,
                col: col as u32,
                x_um: left as f64 * cfg.pixel_size_um,
                y_um: top as f64 * cfg.pixel_size_um,
            }
        })
        .collect();
    ScanDataset::new(
        patterns,
        positions,
        raster.rows,
        raster.cols,
        raster.step_px as f64 * cfg.pixel_size_um,
    )
}

fn apply_poisson(
    intensity: &mut Array2<f64>,
    noise: PoissonNoise,
    k: u64,
    free_space_total: f64,
) -> Result<()> {
    if !(noise.photons > 0.0) {
        return Err(Error::Domain(format!(
            "photon count must be positive, got {}",
            noise.photons
        )));
    }
    let scale = noise.photons / free_space_total;
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed ^ k);
    for v in intensity.iter_mut() {
        let lambda = *v * scale;
        *v = if lambda > 0.0 {
            Poisson::new(lambda)
                .map_err(|e| Error::Domain(format!("poisson rate {lambda}: {e}")))?
                .sample(&mut rng)
        } else {
            0.0
        };
    }
    Ok(())
}
