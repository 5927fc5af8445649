//! Known-probe ePIE reconstruction and SSIM scoring, used to check that a
//! reduced dataset still reconstructs the object region.

use ndarray::{s, Array2, ArrayView2};
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::ScanDataset;
use crate::error::{Error, Result};
use crate::fft::{ifftshift, Fft2};
use crate::simulator::Probe;

#[derive(Debug, Clone)]
pub struct ReconImage {
    pub object: Array2<Complex64>,
    pub pixel_pitch: f64,
    pub iterations: usize,
    /// Mean squared modulus misfit per iteration.
    pub error_trace: Vec<f64>,
    /// Σ|probe|² over every frame's window; zero where no frame reached.
    pub illumination: Array2<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReconOptions {
    pub iterations: usize,
    pub object_step: f64,
    pub seed: u64,
    /// Object pixel size in the units of the positions' physical coordinates.
    pub pixel_pitch: f64,
    /// Object grid shape; defaults to the smallest grid holding every window.
    pub object_shape: Option<(usize, usize)>,
}

impl Default for ReconOptions {
    fn default() -> Self {
        Self {
            iterations: 200,
            object_step: 1.0,
            seed: 0,
            pixel_pitch: 1.0,
            object_shape: None,
        }
    }
}

/// Window top-left pixels from the positions' physical coordinates.
pub fn frame_offsets(ds: &ScanDataset, pixel_pitch: f64) -> Result<Vec<(usize, usize)>> {
    if !(pixel_pitch > 0.0) {
        return Err(Error::Domain(format!(
            "pixel pitch must be positive, got {pixel_pitch}"
        )));
    }
    ds.positions()
        .iter()
        .map(|p| {
            let top = (p.y_um / pixel_pitch).round();
            let left = (p.x_um / pixel_pitch).round();
            if top < 0.0 || left < 0.0 || !top.is_finite() || !left.is_finite() {
                return Err(Error::Geometry(format!(
                    "position {} maps to negative pixel offset ({top}, {left})",
                    p.index
                )));
            }
            Ok((top as usize, left as usize))
        })
        .collect()
}

pub fn epie_reconstruct(
    ds: &ScanDataset,
    probe: &Probe,
    opts: &ReconOptions,
) -> Result<ReconImage> {
    if ds.is_empty() {
        return Err(Error::Size(
            "cannot reconstruct from an empty dataset".into(),
        ));
    }
    let p = probe.size();
    if ds.frame_dim() != (p, p) {
        return Err(Error::Geometry(format!(
            "frames are {:?} but the probe is {p}x{p}",
            ds.frame_dim()
        )));
    }
    let offsets = frame_offsets(ds, opts.pixel_pitch)?;
    let needed = offsets
        .iter()
        .fold((0, 0), |(r, c), &(t, l)| (r.max(t + p), c.max(l + p)));
    let shape = match opts.object_shape {
        Some(shape) if shape.0 >= needed.0 && shape.1 >= needed.1 => shape,
        Some(shape) => {
            return Err(Error::Geometry(format!(
                "object grid {shape:?} cannot hold windows reaching {needed:?}"
            )))
        }
        None => needed,
    };

    // Measured moduli, moved to FFT order once.
    let moduli: Vec<Vec<f64>> = ds
        .patterns()
        .iter()
        .map(|pat| {
            let centered: Vec<f64> = pat.values().iter().map(|&v| (v as f64).sqrt()).collect();
            let mut unshifted = vec![0.0; p * p];
            ifftshift(&centered, p, p, &mut unshifted);
            unshifted
        })
        .collect();

    let probe_px: Vec<Complex64> = probe.amplitude.iter().copied().collect();
    let probe_conj: Vec<Complex64> = probe_px.iter().map(|v| v.conj()).collect();
    let norm = opts.object_step / probe.max_intensity();
    let inv_n = 1.0 / (p * p) as f64;

    let mut illumination = Array2::<f64>::zeros(shape);
    for &(top, left) in &offsets {
        let mut patch = illumination.slice_mut(s![top..top + p, left..left + p]);
        for (acc, pr) in patch.iter_mut().zip(&probe_px) {
            *acc += pr.norm_sqr();
        }
    }

    let mut object = Array2::from_elem(shape, Complex64::new(1.0, 0.0));
    let mut fft = Fft2::new(p, p);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut order: Vec<usize> = (0..ds.len()).collect();
    let mut exit = vec![Complex64::default(); p * p];
    let mut wave = vec![Complex64::default(); p * p];
    let mut error_trace = Vec::with_capacity(opts.iterations);

    for _ in 0..opts.iterations {
        order.shuffle(&mut rng);
        let mut misfit = 0.0;
        for &k in &order {
            let (top, left) = offsets[k];
            let mut patch = object.slice_mut(s![top..top + p, left..left + p]);
            for ((e, o), pr) in exit.iter_mut().zip(patch.iter()).zip(&probe_px) {
                *e = pr * o;
            }
            wave.copy_from_slice(&exit);
            fft.forward(&mut wave);
            for (w, &m) in wave.iter_mut().zip(&moduli[k]) {
                let amp = w.norm();
                misfit += (amp - m).powi(2);
                *w = if amp > 0.0 {
                    *w * (m / amp)
                } else {
                    Complex64::new(m, 0.0)
                };
            }
            fft.inverse(&mut wave);
            for (((o, w), e), pc) in patch.iter_mut().zip(&wave).zip(&exit).zip(&probe_conj) {
                *o += norm * pc * (w * inv_n - e);
            }
        }
        error_trace.push(misfit / (ds.len() * p * p) as f64);
    }

    Ok(ReconImage {
        object,
        pixel_pitch: opts.pixel_pitch,
        iterations: opts.iterations,
        error_trace,
        illumination,
    })
}

/// Rectangular region of an object grid, inclusive of `top`/`left`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Crop {
    pub top: usize,
    pub left: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Crop {
    pub fn full(shape: (usize, usize)) -> Self {
        Self {
            top: 0,
            left: 0,
            rows: shape.0,
            cols: shape.1,
        }
    }

    /// Bounding box of the true cells, or `None` if there are none.
    pub fn bounding_box(mask: &Array2<bool>) -> Option<Self> {
        let mut bbox: Option<(usize, usize, usize, usize)> = None;
        for ((r, c), _) in mask.indexed_iter().filter(|(_, &m)| m) {
            bbox = Some(match bbox {
                None => (r, c, r, c),
                Some((r0, c0, r1, c1)) => (r0.min(r), c0.min(c), r1.max(r), c1.max(c)),
            });
        }
        bbox.map(|(r0, c0, r1, c1)| Self {
            top: r0,
            left: c0,
            rows: r1 - r0 + 1,
            cols: c1 - c0 + 1,
        })
    }

    pub fn check(&self, shape: (usize, usize)) -> Result<()> {
        if self.rows == 0
            || self.cols == 0
            || self.top + self.rows > shape.0
            || self.left + self.cols > shape.1
        {
            return Err(Error::Geometry(format!(
                "crop {self:?} does not fit a {shape:?} grid"
            )));
        }
        Ok(())
    }

    pub fn view<'a, T>(&self, a: &'a Array2<T>) -> ArrayView2<'a, T> {
        a.slice(s![
            self.top..self.top + self.rows,
            self.left..self.left + self.cols
        ])
    }
}

/// Constant phase that best maps `reference` onto `candidate` over the
/// pixels the candidate's frames illuminated within `crop`.
pub fn global_phase_offset(
    reference: &ReconImage,
    candidate: &ReconImage,
    crop: Crop,
) -> Result<f64> {
    if reference.object.dim() != candidate.object.dim() {
        return Err(Error::Geometry(format!(
            "reconstructions differ in shape: {:?} vs {:?}",
            reference.object.dim(),
            candidate.object.dim()
        )));
    }
    crop.check(candidate.object.dim())?;
    let mut acc = Complex64::new(0.0, 0.0);
    for ((r, c), lit) in crop
        .view(&reference.object)
        .iter()
        .zip(crop.view(&candidate.object).iter())
        .zip(crop.view(&candidate.illumination).iter())
    {
        if *lit > 0.0 {
            acc += r.conj() * c;
        }
    }
    Ok(if acc.norm() > 0.0 { acc.arg() } else { 0.0 })
}

/// SSIM between the phase images of two reconstructions over `crop`, after
/// removing the candidate's global phase offset. Intensity data cannot fix
/// the absolute phase, so without this step two equally good
/// reconstructions can differ by a constant.
pub fn compare_phase(reference: &ReconImage, candidate: &ReconImage, crop: Crop) -> Result<f64> {
    let offset = global_phase_offset(reference, candidate, crop)?;
    let rotation = Complex64::from_polar(1.0, -offset);
    let aligned = ReconImage {
        object: candidate.object.mapv(|v| v * rotation),
        ..candidate.clone()
    };
    let ref_phase = phase_image(reference);
    let cand_phase = phase_image(&aligned);
    ssim(crop.view(&ref_phase), crop.view(&cand_phase))
}

/// Argument of each object pixel in (−π, π].
pub fn phase_image(r: &ReconImage) -> Array2<f64> {
    r.object.mapv(|v| {
        let a = v.arg();
        if a == -std::f64::consts::PI {
            std::f64::consts::PI
        } else {
            a
        }
    })
}

pub fn modulus_image(r: &ReconImage) -> Array2<f64> {
    r.object.mapv(|v| v.norm())
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Normalized 11-tap Gaussian, σ = 1.5.
pub fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut taps = [0.0; SSIM_WINDOW];
    for (i, t) in taps.iter_mut().enumerate() {
        let x = i as f64 - half;
        *t = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

/// Mean SSIM over all fully contained 11×11 windows. The dynamic range is
/// taken jointly over both images; two identical constant images score 1.
pub fn ssim(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Geometry(format!(
            "SSIM inputs differ in shape: {:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    let (rows, cols) = a.dim();
    if rows < SSIM_WINDOW || cols < SSIM_WINDOW {
        return Err(Error::Size(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {rows}x{cols}"
        )));
    }
    let (lo, hi) = a
        .iter()
        .chain(b.iter())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let range = hi - lo;
    if range == 0.0 {
        return Ok(1.0);
    }
    let c1 = (SSIM_K1 * range).powi(2);
    let c2 = (SSIM_K2 * range).powi(2);

    let taps = gaussian_taps();
    let blur = |img: &Array2<f64>| separable_valid(img, &taps);
    let a = a.to_owned();
    let b = b.to_owned();
    let mu_a = blur(&a);
    let mu_b = blur(&b);
    let e_aa = blur(&(&a * &a));
    let e_bb = blur(&(&b * &b));
    let e_ab = blur(&(&a * &b));

    let mut total = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a.as_slice().unwrap()[i], mu_b.as_slice().unwrap()[i]);
        let var_a = e_aa.as_slice().unwrap()[i] - ma * ma;
        let var_b = e_bb.as_slice().unwrap()[i] - mb * mb;
        let cov = e_ab.as_slice().unwrap()[i] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
            / ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
    }
    Ok(total / mu_a.len() as f64)
}

/// Correlate with `taps` along columns then rows, keeping only outputs whose
/// window lies fully inside the image.
fn separable_valid(img: &Array2<f64>, taps: &[f64]) -> Array2<f64> {
    let w = taps.len();
    let (rows, cols) = img.dim();
    let out_cols = cols - w + 1;
    let out_rows = rows - w + 1;
    let mut horiz = Array2::<f64>::zeros((rows, out_cols));
    for r in 0..rows {
        for c in 0..out_cols {
            horiz[[r, c]] = (0..w).map(|k| taps[k] * img[[r, c + k]]).sum();
        }
    }
    let mut out = Array2::<f64>::zeros((out_rows, out_cols));
    for r in 0..out_rows {
        for c in 0..out_cols {
            out[[r, c]] = (0..w).map(|k| taps[k] * horiz[[r + k, c]]).sum();
        }
    }
    out
}
