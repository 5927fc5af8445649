//! Independent reference implementations shared by the test targets.
#![allow(dead_code)]

use ndarray::Array2;

use ptyroi::dataset::DiffractionPattern;

/// Windowed SSIM with the full 2-D Gaussian weight evaluated per window.
pub fn ssim_direct(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let sigma: f64 = 1.5;
    let mut w = [[0.0f64; 11]; 11];
    let mut total = 0.0;
    for (i, row) in w.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (x, y) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(x * x + y * y) / (2.0 * sigma * sigma)).exp();
            total += *v;
        }
    }
    let lo = a
        .iter()
        .chain(b.iter())
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let hi = a
        .iter()
        .chain(b.iter())
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let l = hi - lo;
    let (c1, c2) = ((0.01 * l).powi(2), (0.03 * l).powi(2));
    let (rows, cols) = a.dim();
    let mut sum = 0.0;
    let mut count = 0;
    for r0 in 0..=rows - 11 {
        for c0 in 0..=cols - 11 {
            let (mut ma, mut mb) = (0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let wt = w[i][j] / total;
                    ma += wt * a[[r0 + i, c0 + j]];
                    mb += wt * b[[r0 + i, c0 + j]];
                }
            }
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let wt = w[i][j] / total;
                    let (da, db) = (a[[r0 + i, c0 + j]] - ma, b[[r0 + i, c0 + j]] - mb);
                    va += wt * da * da;
                    vb += wt * db * db;
                    cov += wt * da * db;
                }
            }
            sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    sum / count as f64
}

/// Straight double loop over 1-based detector coordinates.
pub fn brute_com(p: &DiffractionPattern) -> (f64, f64, f64) {
    let v = p.values();
    let (mut t, mut sx, mut sy) = (0.0, 0.0, 0.0);
    for i in 0..v.nrows() {
        for j in 0..v.ncols() {
            let w = v[[i, j]] as f64;
            t += w;
            sx += (i + 1) as f64 * w;
            sy += (j + 1) as f64 * w;
        }
    }
    (t, sx / t, sy / t)
}

pub fn two_pass(col: &[f64]) -> (f64, f64) {
    let k = col.len() as f64;
    let mean = col.iter().sum::<f64>() / k;
    let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (k - 1.0);
    (mean, var.sqrt())
}

pub fn sse(values: &[f64], labels: impl Fn(usize) -> bool) -> Option<f64> {
    let mut groups = [Vec::new(), Vec::new()];
    for (i, &v) in values.iter().enumerate() {
        groups[usize::from(labels(i))].push(v);
    }
    if groups.iter().any(|g| g.is_empty()) {
        return None;
    }
    Some(
        groups
            .iter()
            .map(|g| {
                let m = g.iter().sum::<f64>() / g.len() as f64;
                g.iter().map(|v| (v - m).powi(2)).sum::<f64>()
            })
            .sum(),
    )
}

/// Best two-way split over every labelling.
pub fn brute_force_sse(values: &[f64]) -> f64 {
    let n = values.len();
    (1..(1u32 << n) - 1)
        .filter_map(|bits| sse(values, |i| bits >> i & 1 == 1))
        .fold(f64::INFINITY, f64::min)
}
