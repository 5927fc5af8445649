//! Acceptance gate: every criterion runs at its stated tolerance and prints
//! one PASS/FAIL line. The process exits non-zero if any criterion fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use ptyroi::clustering::{
    intersect_roi, kmeans2, select_absorption_roi, select_scatter_roi, union_roi, KMeansOptions,
    RoiMask,
};
use ptyroi::dataset::{filter_dataset, DiffractionPattern, ScanDataset, ScanPosition};
use ptyroi::pipeline::{cluster_maps, select_roi, PipelineConfig, Selection};
use ptyroi::recon::{compare_phase, epie_reconstruct, ssim, Crop, ReconImage, ReconOptions};
use ptyroi::simulator::{circular_probe, shepp_logan_with, simulate_scan, Phantom, Probe};
use ptyroi::stats::{
    center_of_mass, scan_stats, standardize, total_intensity, MapOptions, ScanStats, StatKind,
    StatMap,
};

mod common;
use common::{brute_com, brute_force_sse, ssim_direct};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

/// The reference simulation: 256-px phantom, 16-px disk probe in 16-px
/// frames, 40×40 raster with a 6-px step, noiseless.
struct Reference {
    phantom: Phantom,
    probe: Probe,
    ds: ScanDataset,
    stats: ScanStats,
    /// Probe window overlaps phantom support, per scan cell.
    overlap: Array2<bool>,
}

impl Reference {
    fn build() -> Self {
        let cfg = PipelineConfig::default();
        let phantom = shepp_logan_with(cfg.phantom_size, cfg.phantom_params()).unwrap();
        let probe = circular_probe(cfg.frame_size, cfg.probe_diameter).unwrap();
        let scan_cfg = cfg.scan_config().unwrap();
        let ds = simulate_scan(&phantom, &probe, &scan_cfg).unwrap();
        let stats = scan_stats(&ds, cfg.map_options()).unwrap();
        let raster = scan_cfg.raster;
        let p = probe.size();
        let overlap = Array2::from_shape_fn((raster.rows, raster.cols), |(r, c)| {
            let (top, left) = raster.top_left(r + 1, c + 1);
            (0..p).any(|i| {
                (0..p).any(|j| {
                    probe.amplitude[[i, j]].norm() > 0.0 && phantom.support[[top + i, left + j]]
                })
            })
        });
        Self {
            phantom,
            probe,
            ds,
            stats,
            overlap,
        }
    }
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let patterns: Vec<DiffractionPattern> = (0..1000)
        .map(|_| {
            DiffractionPattern::new(Array2::from_shape_fn((16, 16), |_| {
                rng.random::<f32>() * 1e4
            }))
            .unwrap()
        })
        .collect();
    let start = Instant::now();
    let ours: Vec<(f64, (f64, f64))> = patterns
        .iter()
        .map(|p| (total_intensity(p), center_of_mass(p).unwrap()))
        .collect();
    let elapsed = start.elapsed();
    let mut worst: f64 = 0.0;
    for (p, (t, (ox, oy))) in patterns.iter().zip(&ours) {
        let (bt, bx, by) = brute_com(p);
        worst = worst
            .max((t - bt).abs() / bt)
            .max((ox - bx).abs() / bx)
            .max((oy - by).abs() / by);
    }
    outcome(
        worst <= 1e-12 && elapsed < Duration::from_secs(1),
        format!("max rel err {worst:.2e}, {:.3} s", elapsed.as_secs_f64()),
    )
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let (mut worst_mean, mut worst_sd): (f64, f64) = (0.0, 0.0);
    for trial in 0..500 {
        let k = if trial < 50 {
            2 + trial
        } else {
            rng.random_range(2..5000)
        };
        let (sx, sy) = (rng.random_range(1e-3..1e3), rng.random_range(1e-3..1e3));
        let (mx, my) = (rng.random_range(-1e3..1e3), rng.random_range(-1e3..1e3));
        let raw: Vec<[f64; 2]> = (0..k)
            .map(|_| [mx + sx * rng.random::<f64>(), my + sy * rng.random::<f64>()])
            .collect();
        let t = standardize(&raw).unwrap();
        for axis in 0..2 {
            let col: Vec<f64> = t.standardized.iter().map(|r| r[axis]).collect();
            let n = col.len() as f64;
            let mean = col.iter().sum::<f64>() / n;
            let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            worst_mean = worst_mean.max(mean.abs());
            worst_sd = worst_sd.max((sd - 1.0).abs());
        }
    }
    outcome(
        worst_mean < 1e-9 && worst_sd < 1e-9,
        format!("max |mean| {worst_mean:.2e}, max |sd-1| {worst_sd:.2e}"),
    )
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let (mut trials, mut mismatches, mut nondeterministic) = (0, 0, 0);
    while trials < 200 {
        let n = rng.random_range(2..=12);
        let values: Vec<f64> = (0..n)
            .map(|_| {
                if rng.random::<bool>() {
                    rng.random_range(0..6) as f64
                } else {
                    rng.random::<f64>() * 10.0
                }
            })
            .collect();
        if values.iter().all(|v| *v == values[0]) {
            continue;
        }
        trials += 1;
        let a = kmeans2(&values, 10).unwrap();
        let b = kmeans2(&values, 10).unwrap();
        if a.labels != b.labels || a.centroids.map(f64::to_bits) != b.centroids.map(f64::to_bits) {
            nondeterministic += 1;
        }
        let best = brute_force_sse(&values);
        if (a.within_ss(&values) - best).abs() > 1e-9 * best.max(1.0) {
            mismatches += 1;
        }
    }
    outcome(
        mismatches == 0 && nondeterministic == 0,
        format!("{trials} inputs, {mismatches} suboptimal, {nondeterministic} non-deterministic"),
    )
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let opts = KMeansOptions::default();
    let mut failures = 0;
    for _ in 0..50 {
        let (rows, cols) = (rng.random_range(3..30), rng.random_range(3..30));
        let mut occupied = Array2::from_shape_fn((rows, cols), |_| rng.random::<f64>() < 0.9);
        occupied[[0, 0]] = true;
        occupied[[rows - 1, cols - 1]] = true;
        let values = Array2::from_shape_fn((rows, cols), |_| rng.random::<f64>().powi(2));
        let map = |kind| StatMap {
            values: ndarray::Zip::from(&values)
                .and(&occupied)
                .map_collect(|&v, &o| if o { v } else { f64::NAN }),
            occupied: occupied.clone(),
            kind,
        };
        let (a, b) = (rng.random_range(1e-3..1e3), rng.random_range(-1e3..1e3));
        let abs = map(StatKind::Absorption);
        let mag = map(StatKind::ComMagnitude);
        let flat: Vec<f64> = abs.occupied_values();
        let moved_flat: Vec<f64> = flat.iter().map(|v| a * v + b).collect();
        let labels_same =
            kmeans2(&flat, 10).unwrap().labels == kmeans2(&moved_flat, 10).unwrap().labels;
        let masks_same = select_absorption_roi(&abs, opts).unwrap()
            == select_absorption_roi(&abs.map_values(|v| a * v + b), opts).unwrap()
            && select_scatter_roi(&mag, opts).unwrap()
                == select_scatter_roi(&mag.map_values(|v| a * v + b), opts).unwrap();
        if !(labels_same && masks_same) {
            failures += 1;
        }
    }
    outcome(failures == 0, format!("50 trials, {failures} changed"))
}

/// Overlap cells with at least one non-overlap 8-neighbour inside the grid.
fn boundary_band(overlap: &Array2<bool>) -> Array2<bool> {
    let (rows, cols) = overlap.dim();
    Array2::from_shape_fn((rows, cols), |(r, c)| {
        overlap[[r, c]]
            && (-1i64..=1).any(|dr| {
                (-1i64..=1).any(|dc| {
                    let (rr, cc) = (r as i64 + dr, c as i64 + dc);
                    rr >= 0
                        && cc >= 0
                        && rr < rows as i64
                        && cc < cols as i64
                        && !overlap[[rr as usize, cc as usize]]
                })
            })
    })
}

fn criterion_5(reference: &Reference, build_time: Duration) -> Outcome {
    let start = Instant::now();
    let band = boundary_band(&reference.overlap);
    let magnitude = &reference.stats.magnitude_raw;
    let (mut edge, mut edge_n, mut outside, mut outside_n) = (0.0, 0, 0.0, 0);
    for ((idx, &in_band), &over) in band.indexed_iter().zip(reference.overlap.iter()) {
        let v = magnitude.get(idx.0 + 1, idx.1 + 1).unwrap();
        if in_band {
            edge += v;
            edge_n += 1;
        } else if !over {
            outside += v;
            outside_n += 1;
        }
    }
    let ratio = (edge / edge_n as f64) / (outside / outside_n as f64);
    let elapsed = build_time + start.elapsed();
    outcome(
        ratio >= 2.0 && elapsed < Duration::from_secs(60),
        format!(
            "boundary/background magnitude ratio {ratio:.2} ({edge_n} band cells, {outside_n} background cells), {:.2} s",
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_6(reference: &Reference) -> (Outcome, Selection) {
    let cfg = PipelineConfig::default();
    let sel = select_roi(
        &reference.stats.absorption,
        &reference.stats.com_magnitude,
        cfg.kmeans_options(),
        (0, 0),
    )
    .unwrap();
    let support_cells = reference.overlap.iter().filter(|o| **o).count();
    let covered = reference
        .overlap
        .iter()
        .zip(sel.union.cells.iter())
        .filter(|(o, u)| **o && **u)
        .count();
    let recall = covered as f64 / support_cells as f64;
    let fraction = sel.summary.fraction;
    (
        outcome(
            recall >= 0.9 && fraction <= 0.7,
            format!(
                "recall {recall:.4} ({covered}/{support_cells}), retained {fraction:.4} ({}/{})",
                sel.summary.selected_count, sel.summary.occupied_count
            ),
        ),
        sel,
    )
}

fn recon_options(reference: &Reference) -> ReconOptions {
    let cfg = PipelineConfig::default();
    let n = reference.phantom.size();
    ReconOptions {
        iterations: 200,
        object_step: cfg.object_step,
        seed: cfg.recon_seed(),
        pixel_pitch: cfg.pixel_size_um,
        object_shape: Some((n, n)),
    }
}

fn criterion_7(reference: &Reference, union: &RoiMask) -> (Outcome, ReconImage) {
    let start = Instant::now();
    let opts = recon_options(reference);
    let full = epie_reconstruct(&reference.ds, &reference.probe, &opts).unwrap();
    let crop = Crop::bounding_box(&reference.phantom.support).unwrap();
    let borders = [-3i64, -1, 0, 1, 3];
    let mut scores = Vec::new();
    for &b in &borders {
        let mask = ptyroi::clustering::adjust_border(union, b).unwrap();
        let subset = filter_dataset(&reference.ds, &mask).unwrap();
        let rec = epie_reconstruct(&subset, &reference.probe, &opts).unwrap();
        scores.push(compare_phase(&full, &rec, crop).unwrap());
    }
    let monotone = scores.windows(2).all(|w| w[1] >= w[0] - 0.02);
    let at_zero = scores[2];
    let elapsed = start.elapsed();
    let listing: Vec<String> = borders
        .iter()
        .zip(&scores)
        .map(|(b, s)| format!("{b:+}:{s:.4}"))
        .collect();
    (
        outcome(
            monotone && at_zero >= 0.90 && elapsed < Duration::from_secs(15 * 60),
            format!("SSIM {}, {:.1} s", listing.join(" "), elapsed.as_secs_f64()),
        ),
        full,
    )
}

fn min_time(runs: usize, mut f: impl FnMut()) -> f64 {
    (0..runs)
        .map(|_| {
            let t = Instant::now();
            f();
            t.elapsed().as_secs_f64()
        })
        .fold(f64::INFINITY, f64::min)
}

fn criterion_8(reference: &Reference, union: &RoiMask) -> Outcome {
    let opts = recon_options(reference);
    let subset = filter_dataset(&reference.ds, union).unwrap();
    let fraction = subset.len() as f64 / reference.ds.len() as f64;
    let full = min_time(3, || {
        epie_reconstruct(&reference.ds, &reference.probe, &opts).unwrap();
    });
    let part = min_time(3, || {
        epie_reconstruct(&subset, &reference.probe, &opts).unwrap();
    });
    let ratio = part / (fraction * full);
    outcome(
        (0.7..=1.3).contains(&ratio),
        format!("RoI {part:.2} s vs {fraction:.3} x full {full:.2} s, ratio {ratio:.3}"),
    )
}

/// 16,000 synthetic 128×128 frames on a 125×128 raster: a bright central
/// beam whose transmission drops and whose centre shifts inside a disk of
/// "sample" in the middle of the field.
fn synthetic_large() -> ScanDataset {
    let (rows, cols, n) = (125usize, 128usize, 128usize);
    let beam = Array2::from_shape_fn((n, n), |(r, c)| {
        let (dr, dc) = (r as f64 - 64.0, c as f64 - 64.0);
        (-(dr * dr + dc * dc) / 200.0).exp() as f32 * 1000.0 + 1.0
    });
    let patterns: Vec<DiffractionPattern> = (0..rows * cols)
        .into_par_iter()
        .map(|k| {
            let (r, c) = ((k / cols) as f64, (k % cols) as f64);
            let d = ((r - 62.0).powi(2) + (c - 64.0).powi(2)).sqrt() / 40.0;
            let inside = d < 1.0;
            let t = if inside { 0.6 + 0.2 * d } else { 1.0 } as f32;
            let tilt = if (d - 1.0).abs() < 0.08 { 0.02 } else { 0.0 } as f32;
            let mut rng = ChaCha8Rng::seed_from_u64(k as u64);
            let values = Array2::from_shape_fn((n, n), |(i, j)| {
                let ramp = 1.0 + tilt * (i as f32 - 64.0) / 64.0;
                beam[[i, j]] * t * ramp + rng.random::<f32>()
            });
            DiffractionPattern::new(values).unwrap()
        })
        .collect();
    let positions = (0..rows * cols)
        .map(|k| ScanPosition {
            index: k as u32 + 1,
            row: (k / cols) as u32 + 1,
            col: (k % cols) as u32 + 1,
            x_um: (k % cols) as f64 * 0.05,
            y_um: (k / cols) as f64 * 0.05,
        })
        .collect();
    ScanDataset::new(patterns, positions, rows, cols, 0.05).unwrap()
}

fn criterion_9(ds: &ScanDataset) -> (Outcome, Selection) {
    let cfg = PipelineConfig::default();
    let start = Instant::now();
    let stats = scan_stats(ds, cfg.map_options()).unwrap();
    let t_stats = start.elapsed();
    let (a, b, u) = cluster_maps(
        &stats.absorption,
        &stats.com_magnitude,
        cfg.kmeans_options(),
    )
    .unwrap();
    let t_cluster = start.elapsed() - t_stats;
    let sel = Selection::from_clusters(a, b, u, cfg.borders()).unwrap();
    let kept = filter_dataset(ds, &sel.adjusted).unwrap();
    let total = start.elapsed();
    let t_select = total - t_stats - t_cluster;
    (
        outcome(
            total <= Duration::from_secs(30),
            format!(
                "K={} {}x{}: stats {:.2} s, clustering {:.2} s, selection {:.2} s, total {:.2} s on {} thread(s); kept {}",
                ds.len(),
                ds.frame_dim().0,
                ds.frame_dim().1,
                t_stats.as_secs_f64(),
                t_cluster.as_secs_f64(),
                t_select.as_secs_f64(),
                total.as_secs_f64(),
                rayon::current_num_threads(),
                kept.len()
            ),
        ),
        sel,
    )
}

fn criterion_10(selections: &[(&str, &Selection)]) -> Outcome {
    let mut bad = Vec::new();
    for (name, sel) in selections {
        let s = &sel.summary;
        let inter = intersect_roi(&sel.absorption, &sel.scatter)
            .unwrap()
            .count();
        let union = union_roi(&sel.absorption, &sel.scatter).unwrap().count();
        let consistent = s.union_count == s.absorption_count + s.scatter_count - s.overlap_count
            && inter == s.overlap_count
            && union == s.union_count;
        if !consistent {
            bad.push(*name);
        }
    }
    let listing: Vec<String> = selections
        .iter()
        .map(|(name, sel)| {
            let s = &sel.summary;
            format!(
                "{name}: {}+{}-{}={}",
                s.absorption_count, s.scatter_count, s.overlap_count, s.union_count
            )
        })
        .collect();
    outcome(bad.is_empty(), listing.join("; "))
}

fn criterion_11() -> Outcome {
    let a = Array2::from_shape_fn((16, 16), |(r, c)| ((r * 5 + c * 11) % 13) as f64 / 12.0);
    let b = Array2::from_shape_fn((16, 16), |(r, c)| {
        (r as f64 / 15.0) * 0.6 + ((c as f64 * 0.9).sin() * 0.4)
    });
    let c = Array2::from_shape_fn((16, 16), |(r, c)| (r as f64 - c as f64) * 0.1);
    let mut worst: f64 = 0.0;
    let mut identity = true;
    let mut symmetric = true;
    for (x, y) in [(&a, &b), (&a, &c), (&b, &c)] {
        let s = ssim(x.view(), y.view()).unwrap();
        worst = worst.max((s - ssim_direct(x, y)).abs());
        symmetric &= s == ssim(y.view(), x.view()).unwrap();
        identity &= ssim(x.view(), x.view()).unwrap() == 1.0;
    }
    outcome(
        identity && symmetric && worst < 1e-9,
        format!("identity {identity}, symmetry {symmetric}, oracle max diff {worst:.2e}"),
    )
}

fn report(results: &mut Vec<(usize, bool)>, id: usize, title: &str, o: Outcome) {
    println!(
        "[{}] criterion {id:>2}: {title} | {}",
        if o.pass { "PASS" } else { "FAIL" },
        o.detail
    );
    results.push((id, o.pass));
}

fn main() -> ExitCode {
    let mut results = Vec::new();
    report(
        &mut results,
        1,
        "CoM and total vs brute-force oracle",
        criterion_1(),
    );
    report(
        &mut results,
        2,
        "standardized columns have zero mean, unit sd",
        criterion_2(),
    );
    report(
        &mut results,
        3,
        "k-means matches brute-force optimal split",
        criterion_3(),
    );
    report(
        &mut results,
        4,
        "affine invariance of labels and masks",
        criterion_4(),
    );

    let t = Instant::now();
    let reference = Reference::build();
    let build_time = t.elapsed();
    report(
        &mut results,
        5,
        "CoM magnitude highlights support boundary",
        criterion_5(&reference, build_time),
    );
    let (c6, reference_sel) = criterion_6(&reference);
    report(&mut results, 6, "RoI recall and frame reduction", c6);
    let (c7, _) = criterion_7(&reference, &reference_sel.union);
    report(&mut results, 7, "phase SSIM rises with border", c7);
    report(
        &mut results,
        8,
        "RoI reconstruction time tracks retained fraction",
        criterion_8(&reference, &reference_sel.union),
    );

    let large = synthetic_large();
    let (c9, large_sel) = criterion_9(&large);
    report(
        &mut results,
        9,
        "preprocessing of 16,000 128x128 frames",
        c9,
    );
    drop(large);

    let log_sel = {
        let stats = scan_stats(
            &reference.ds,
            MapOptions {
                mean_filter: true,
                log_scale: true,
            },
        )
        .unwrap();
        select_roi(
            &stats.absorption,
            &stats.com_magnitude,
            KMeansOptions::default(),
            (1, 1),
        )
        .unwrap()
    };
    let raw_sel = select_roi(
        &reference.stats.absorption_raw,
        &reference.stats.magnitude_raw,
        KMeansOptions::default(),
        (-1, -1),
    )
    .unwrap();
    report(
        &mut results,
        10,
        "|A u B| = |A| + |B| - |A n B|",
        criterion_10(&[
            ("reference", &reference_sel),
            ("log maps", &log_sel),
            ("unfiltered", &raw_sel),
            ("synthetic", &large_sel),
        ]),
    );
    report(
        &mut results,
        11,
        "SSIM identity, symmetry, direct oracle",
        criterion_11(),
    );

    let failed: Vec<usize> = results
        .iter()
        .filter(|(_, p)| !p)
        .map(|(id, _)| *id)
        .collect();
    println!(
        "acceptance: {} of {} criteria passed",
        results.len() - failed.len(),
        results.len()
    );
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failed: {failed:?}");
        ExitCode::FAILURE
    }
}
