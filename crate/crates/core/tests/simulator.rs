use ndarray::Array2;
use num_complex::Complex64;

use ptyroi::simulator::{
    circular_probe, forward_diffraction, shepp_logan, shepp_logan_with, simulate_scan, Phantom,
    PhantomParams, PoissonNoise, Probe, Raster, ScanConfig, SHEPP_LOGAN_ELLIPSES,
};
use ptyroi::stats::{center_of_mass, total_intensity};

/// Ellipse membership through the expanded quadratic form
/// A·dx² + B·dx·dy + C·dy² ≤ 1.
fn in_ellipse_quadratic(x: f64, y: f64, e: &[f64; 6]) -> bool {
    let t = e[4] * std::f64::consts::PI / 180.0;
    let (a2, b2) = (e[2] * e[2], e[3] * e[3]);
    let (s, c) = (t.sin(), t.cos());
    let qa = c * c / a2 + s * s / b2;
    let qb = 2.0 * s * c * (1.0 / a2 - 1.0 / b2);
    let qc = s * s / a2 + c * c / b2;
    let (dx, dy) = (x - e[0], y - e[1]);
    qa * dx * dx + qb * dx * dy + qc * dy * dy <= 1.0 + 1e-12
}

fn oracle_density(n: usize) -> Array2<f64> {
    let nf = n as f64;
    let raw = Array2::from_shape_fn((n, n), |(r, c)| {
        let x = -1.0 + (c as f64 + 0.5) * 2.0 / nf;
        let y = 1.0 - (r as f64 + 0.5) * 2.0 / nf;
        SHEPP_LOGAN_ELLIPSES
            .iter()
            .filter(|e| in_ellipse_quadratic(x, y, e))
            .map(|e| e[5])
            .sum::<f64>()
    });
    let max = raw.iter().cloned().fold(f64::MIN, f64::max);
    raw / max
}

#[test]
fn disk_probe_matches_integer_pixel_count() {
    for p in [4usize, 7, 16, 21, 32] {
        for d in 1..=p {
            let probe = match circular_probe(p, d) {
                Ok(probe) => probe,
                Err(_) => {
                    assert!(
                        d < 2,
                        "only tiny disks may miss every pixel center, got d={d}"
                    );
                    continue;
                }
            };
            let (pi, di) = (p as i64, d as i64);
            for ((r, c), v) in probe.amplitude.indexed_iter() {
                let (ri, ci) = (r as i64, c as i64);
                let inside = (2 * ri + 1 - pi).pow(2) + (2 * ci + 1 - pi).pow(2) <= di * di;
                assert_eq!(v.norm() == 1.0, inside, "p={p} d={d} ({r},{c})");
                assert!(v.norm() == 0.0 || v.norm() == 1.0);
            }
        }
    }
}

#[test]
fn phantom_matches_ellipse_table() {
    for n in [64usize, 256] {
        let ph = shepp_logan(n).unwrap();
        let oracle = oracle_density(n);
        for (a, b) in ph.density.iter().zip(oracle.iter()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        assert!(ph.density.iter().all(|&d| (0.0..=1.0).contains(&d)));
        for ((d, t), s) in ph.density.iter().zip(&ph.transmission).zip(&ph.support) {
            let expected = Complex64::from_polar(1.0 - 0.3 * d, 0.5 * d);
            assert!((t - expected).norm() < 1e-15);
            assert_eq!(*s, *d != 0.0);
        }
    }
}

#[test]
fn left_right_asymmetry_is_confined_to_asymmetric_ellipses() {
    let n = 128;
    let ph = shepp_logan(n).unwrap();
    let nf = n as f64;
    let asymmetric = [2usize, 3, 7, 9];
    let mut mismatches = 0;
    for r in 0..n {
        for c in 0..n {
            let mirrored = ph.density[[r, n - 1 - c]];
            if (ph.density[[r, c]] - mirrored).abs() < 1e-12 {
                continue;
            }
            mismatches += 1;
            let x = (2.0 * c as f64 + 1.0 - nf) / nf;
            let y = (nf - 2.0 * r as f64 - 1.0) / nf;
            let near = asymmetric.iter().any(|&i| {
                let e = &SHEPP_LOGAN_ELLIPSES[i];
                in_ellipse_quadratic(x, y, e) || in_ellipse_quadratic(-x, y, e)
            });
            assert!(
                near,
                "mismatch at ({r},{c}) outside the asymmetric ellipses"
            );
        }
    }
    assert!(mismatches > 0);
}

#[test]
fn diffraction_conserves_energy() {
    let ph = shepp_logan(128).unwrap();
    let probe = circular_probe(32, 20).unwrap();
    for top_left in [(0, 0), (40, 50), (96, 96), (60, 10)] {
        let pat = forward_diffraction(&ph, &probe, top_left).unwrap();
        let mut exit = 0.0;
        for r in 0..32 {
            for c in 0..32 {
                let v = probe.amplitude[[r, c]] * ph.transmission[[top_left.0 + r, top_left.1 + c]];
                exit += v.norm_sqr();
            }
        }
        let total = total_intensity(&pat);
        let expected = 32.0 * 32.0 * exit;
        assert!(
            (total - expected).abs() / expected < 1e-5,
            "{total} vs {expected}"
        );
    }
}

#[test]
fn phase_ramp_shifts_center_of_mass() {
    let p = 32;
    let flat = Probe {
        amplitude: Array2::from_elem((p, p), Complex64::new(1.0, 0.0)),
        diameter_px: p,
    };
    for (kr, kc) in [(0i64, 2i64), (3, 0), (-2, 5)] {
        let mut obj = Phantom::free_space(p);
        obj.transmission = Array2::from_shape_fn((p, p), |(r, c)| {
            let arg =
                2.0 * std::f64::consts::PI * (kr * r as i64 + kc * c as i64) as f64 / p as f64;
            Complex64::from_polar(1.0, arg)
        });
        let pat = forward_diffraction(&obj, &flat, (0, 0)).unwrap();
        let (ox, oy) = center_of_mass(&pat).unwrap();
        let centre = (p / 2 + 1) as f64;
        assert!((ox - (centre + kr as f64)).abs() < 1e-4, "{ox}");
        assert!((oy - (centre + kc as f64)).abs() < 1e-4, "{oy}");
    }

    let disk = circular_probe(p, 24).unwrap();
    let mut obj = Phantom::free_space(p);
    let base = center_of_mass(&forward_diffraction(&obj, &disk, (0, 0)).unwrap()).unwrap();
    obj.transmission = Array2::from_shape_fn((p, p), |(_, c)| {
        Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * c as f64 / p as f64)
    });
    let ramped = center_of_mass(&forward_diffraction(&obj, &disk, (0, 0)).unwrap()).unwrap();
    assert!((ramped.0 - base.0).abs() < 1e-6);
    assert!(ramped.1 - base.1 > 0.5);
}

#[test]
fn windows_off_support_are_brightest() {
    let n = 256;
    let ph = shepp_logan(n).unwrap();
    let probe = circular_probe(16, 16).unwrap();
    let raster = Raster::centered(n, 16, 40, 40, 6).unwrap();
    let cfg = ScanConfig {
        raster,
        pixel_size_um: 0.5,
        noise: None,
    };
    let ds = simulate_scan(&ph, &probe, &cfg).unwrap();
    assert_eq!(ds.len(), 1600);
    let free = 256.0 * probe.power();
    let (mut outside, mut inside) = (0, 0);
    for (pat, pos) in ds.patterns().iter().zip(ds.positions()) {
        let (top, left) = raster.top_left(pos.row as usize, pos.col as usize);
        assert_eq!(pos.x_um, left as f64 * 0.5);
        assert_eq!(pos.y_um, top as f64 * 0.5);
        let overlaps = (0..16).any(|r| {
            (0..16).any(|c| probe.amplitude[[r, c]].norm() > 0.0 && ph.support[[top + r, left + c]])
        });
        let t = total_intensity(pat);
        if overlaps {
            inside += 1;
            assert!(t < free * (1.0 - 1e-6), "frame {} should absorb", pos.index);
        } else {
            outside += 1;
            assert!((t - free).abs() / free < 1e-5);
        }
    }
    assert!(inside > 0 && outside > 0);
}

#[test]
fn noise_is_seeded_and_photon_scaled() {
    let ph = shepp_logan_with(64, PhantomParams::default()).unwrap();
    let probe = circular_probe(16, 12).unwrap();
    let raster = Raster::centered(64, 16, 5, 5, 8).unwrap();
    let run = |seed| {
        simulate_scan(
            &ph,
            &probe,
            &ScanConfig {
                raster,
                pixel_size_um: 1.0,
                noise: Some(PoissonNoise { photons: 1e4, seed }),
            },
        )
        .unwrap()
    };
    let a = run(9);
    assert_eq!(a, run(9));
    assert_ne!(a, run(10));
    for pat in a.patterns() {
        assert!(pat.values().iter().all(|v| v.fract() == 0.0));
        assert!(total_intensity(pat) < 1e4 * 1.1);
    }

    let empty = simulate_scan(
        &Phantom::free_space(64),
        &probe,
        &ScanConfig {
            raster,
            pixel_size_um: 1.0,
            noise: Some(PoissonNoise {
                photons: 1e4,
                seed: 9,
            }),
        },
    )
    .unwrap();
    let mean = empty.patterns().iter().map(total_intensity).sum::<f64>() / empty.len() as f64;
    // 25 frames of Poisson(1e4) totals: standard error 20.
    assert!((mean - 1e4).abs() < 100.0, "{mean}");
}
