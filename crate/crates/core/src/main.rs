use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ptyroi::dataset::{
    filter_dataset, load_dataset, read_grid, save_dataset, write_grid, write_selection,
};
use ptyroi::pipeline::{
    maps_from_csv, parse_crop, read_mask_csv, run_pipeline, select_roi, write_json, write_mask_csv,
    write_recon, write_stat_csv, PipelineConfig,
};
use ptyroi::recon::{epie_reconstruct, ssim, Crop, ReconOptions};
use ptyroi::render::{write_map_png, write_mask_png};
use ptyroi::simulator::{circular_probe, shepp_logan_with, simulate_scan};
use ptyroi::stats::scan_stats;
use ptyroi::{Error, Result};

#[derive(Parser, Debug)]
#[command(
    name = "ptyroi",
    version,
    about = "Region-of-interest triage for ptychography scans"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand. They override values from `--config`.
#[derive(Args, Debug, Default)]
struct Common {
    /// key = value configuration file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Root seed for noise and reconstruction order
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker thread cap
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Signed border in scan steps (positive dilates, negative erodes)
    #[arg(long, global = true, allow_hyphen_values = true)]
    border: Option<i64>,
    /// Border override along scan rows
    #[arg(long, global = true, allow_hyphen_values = true)]
    border_y: Option<i64>,
    /// Border override along scan columns
    #[arg(long, global = true, allow_hyphen_values = true)]
    border_x: Option<i64>,
    /// Cluster on linear maps (default)
    #[arg(long, global = true, conflicts_with = "log")]
    no_log: bool,
    /// Cluster on log-scaled maps
    #[arg(long, global = true)]
    log: bool,
    /// Skip the 3x3 mean filter
    #[arg(long, global = true)]
    no_filter: bool,
    /// Lloyd iteration cap for two-cluster k-means
    #[arg(long, global = true)]
    kmeans_iters: Option<usize>,
    /// k-means seeding: optimal or extremes
    #[arg(long, global = true)]
    kmeans_init: Option<String>,
    /// Skip PNG previews
    #[arg(long, global = true)]
    no_png: bool,
    /// Extra key=value override, repeatable
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args, Debug)]
struct DatasetArgs {
    /// PTYS diffraction stack
    #[arg(long)]
    stack: PathBuf,
    /// Positions CSV
    #[arg(long)]
    positions: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a raster scan of a Shepp-Logan phantom
    Simulate {
        #[arg(long)]
        phantom_size: Option<usize>,
        #[arg(long)]
        probe_diameter: Option<usize>,
        #[arg(long)]
        frame_size: Option<usize>,
        #[arg(long)]
        grid_rows: Option<usize>,
        #[arg(long)]
        grid_cols: Option<usize>,
        #[arg(long)]
        step_px: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        phi: Option<f64>,
        /// Mean free-space photons per frame; 0 is noiseless
        #[arg(long)]
        photons: Option<f64>,
        #[arg(long)]
        pixel_size_um: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Absorption and CoM-magnitude maps for a dataset
    Stats {
        #[command(flatten)]
        data: DatasetArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Cluster the stat maps into a region-of-interest mask
    Select {
        #[arg(long)]
        absorption: PathBuf,
        #[arg(long)]
        magnitude: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Keep the frames selected by a mask
    Filter {
        #[command(flatten)]
        data: DatasetArgs,
        /// roi_mask.csv from `select`
        #[arg(long)]
        mask: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// ePIE reconstruction with a known disk probe
    Reconstruct {
        #[command(flatten)]
        data: DatasetArgs,
        #[arg(long)]
        probe_diameter: Option<usize>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        pixel_size_um: Option<f64>,
        /// Object grid size as rows,cols
        #[arg(long)]
        object_shape: Option<String>,
        /// Output file prefix
        #[arg(long, default_value = "recon")]
        prefix: String,
        #[command(flatten)]
        common: Common,
    },
    /// SSIM between two grid files
    Ssim {
        reference: PathBuf,
        candidate: PathBuf,
        /// top,left,rows,cols
        #[arg(long)]
        crop: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Full run driven by a config file
    Pipeline {
        #[arg(long)]
        stack: Option<PathBuf>,
        #[arg(long)]
        positions: Option<PathBuf>,
        /// Reconstruct full and filtered datasets and compare them
        #[arg(long)]
        reconstruct: bool,
        #[command(flatten)]
        common: Common,
    },
}

fn set_opt<T: ToString>(cfg: &mut PipelineConfig, key: &str, v: &Option<T>) -> Result<()> {
    match v {
        Some(v) => cfg.set(key, &v.to_string()),
        None => Ok(()),
    }
}

impl Common {
    fn config(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::from_file(p)?,
            None => PipelineConfig::default(),
        };
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set {kv:?}: expected KEY=VALUE")))?;
            cfg.set(k, v)?;
        }
        if let Some(out) = &self.out {
            cfg.out = out.clone();
        }
        set_opt(&mut cfg, "seed", &self.seed)?;
        set_opt(&mut cfg, "threads", &self.threads)?;
        set_opt(&mut cfg, "border", &self.border)?;
        set_opt(&mut cfg, "border_y", &self.border_y)?;
        set_opt(&mut cfg, "border_x", &self.border_x)?;
        set_opt(&mut cfg, "kmeans_iters", &self.kmeans_iters)?;
        set_opt(&mut cfg, "kmeans_init", &self.kmeans_init)?;
        if self.log {
            cfg.log_scale = true;
        }
        if self.no_log {
            cfg.log_scale = false;
        }
        if self.no_filter {
            cfg.mean_filter = false;
        }
        if self.no_png {
            cfg.png = false;
        }
        if let Some(n) = cfg.threads {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build_global()
                .map_err(|e| Error::Config(format!("threads: {e}")))?;
        }
        Ok(cfg)
    }
}

fn out_dir(cfg: &PipelineConfig) -> Result<&Path> {
    fs::create_dir_all(&cfg.out)
        .map_err(|e| Error::Data(format!("creating {}: {e}", cfg.out.display())))?;
    Ok(&cfg.out)
}

fn parse_shape(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::Config(format!("object shape {s:?}: expected rows,cols"));
    let (r, c) = s.split_once(',').ok_or_else(bad)?;
    Ok((
        r.trim().parse().map_err(|_| bad())?,
        c.trim().parse().map_err(|_| bad())?,
    ))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate {
            phantom_size,
            probe_diameter,
            frame_size,
            grid_rows,
            grid_cols,
            step_px,
            alpha,
            phi,
            photons,
            pixel_size_um,
            common,
        } => {
            let mut cfg = common.config()?;
            set_opt(&mut cfg, "phantom_size", &phantom_size)?;
            set_opt(&mut cfg, "probe_diameter", &probe_diameter)?;
            set_opt(&mut cfg, "frame_size", &frame_size)?;
            set_opt(&mut cfg, "grid_rows", &grid_rows)?;
            set_opt(&mut cfg, "grid_cols", &grid_cols)?;
            set_opt(&mut cfg, "step_px", &step_px)?;
            set_opt(&mut cfg, "absorption", &alpha)?;
            set_opt(&mut cfg, "phase", &phi)?;
            set_opt(&mut cfg, "photons", &photons)?;
            set_opt(&mut cfg, "pixel_size_um", &pixel_size_um)?;
            let out = out_dir(&cfg)?;
            let phantom = shepp_logan_with(cfg.phantom_size, cfg.phantom_params())?;
            let probe = circular_probe(cfg.frame_size, cfg.probe_diameter)?;
            let ds = simulate_scan(&phantom, &probe, &cfg.scan_config()?)?;
            save_dataset(&ds, &out.join("scan.ptys"), &out.join("positions.csv"))?;
            write_grid(&out.join("phantom_phase.ptys"), &phantom.phase_map())?;
            write_grid(&out.join("phantom_density.ptys"), &phantom.density)?;
            println!("{} frames written to {}", ds.len(), out.display());
        }
        Command::Stats { data, common } => {
            let cfg = common.config()?;
            let out = out_dir(&cfg)?;
            let ds = load_dataset(&data.stack, &data.positions)?;
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
            println!("{} frames, {} dead", ds.len(), stats.dead_count());
        }
        Command::Select {
            absorption,
            magnitude,
            common,
        } => {
            let cfg = common.config()?;
            let out = out_dir(&cfg)?;
            let (positions, a, b) = maps_from_csv(&absorption, &magnitude)?;
            let sel = select_roi(&a, &b, cfg.kmeans_options(), cfg.borders())?;
            write_mask_csv(&out.join("roi_mask.csv"), &positions, &sel.adjusted)?;
            write_json(&out.join("roi_summary.json"), &sel.summary)?;
            if cfg.png {
                write_mask_png(&out.join("roi_mask.png"), &sel.adjusted)?;
            }
            let s = &sel.summary;
            println!(
                "absorption {} scatter {} overlap {} union {} selected {} of {} ({:.4})",
                s.absorption_count,
                s.scatter_count,
                s.overlap_count,
                s.union_count,
                s.selected_count,
                s.occupied_count,
                s.fraction
            );
        }
        Command::Filter { data, mask, common } => {
            let cfg = common.config()?;
            let out = out_dir(&cfg)?;
            let ds = load_dataset(&data.stack, &data.positions)?;
            let mask = read_mask_csv(&mask, &ds)?;
            let filtered = filter_dataset(&ds, &mask)?;
            save_dataset(
                &filtered,
                &out.join("filtered.ptys"),
                &out.join("filtered_positions.csv"),
            )?;
            write_selection(&out.join("selection.csv"), &filtered)?;
            println!("kept {} of {} frames", filtered.len(), ds.len());
        }
        Command::Reconstruct {
            data,
            probe_diameter,
            iterations,
            pixel_size_um,
            object_shape,
            prefix,
            common,
        } => {
            let mut cfg = common.config()?;
            set_opt(&mut cfg, "probe_diameter", &probe_diameter)?;
            set_opt(&mut cfg, "recon_iterations", &iterations)?;
            set_opt(&mut cfg, "pixel_size_um", &pixel_size_um)?;
            let out = out_dir(&cfg)?;
            let ds = load_dataset(&data.stack, &data.positions)?;
            let (n, m) = ds.frame_dim();
            if n != m {
                return Err(Error::Geometry(format!(
                    "reconstruction needs square frames, got {n}x{m}"
                )));
            }
            let probe = circular_probe(n, cfg.probe_diameter)?;
            let opts = ReconOptions {
                iterations: cfg.recon_iterations,
                object_step: cfg.object_step,
                seed: cfg.recon_seed(),
                pixel_pitch: cfg.pixel_size_um,
                object_shape: object_shape.as_deref().map(parse_shape).transpose()?,
            };
            let rec = epie_reconstruct(&ds, &probe, &opts)?;
            write_recon(out, &prefix, &rec)?;
            println!(
                "final misfit {:e} after {} iterations",
                rec.error_trace.last().copied().unwrap_or(f64::NAN),
                rec.iterations
            );
        }
        Command::Ssim {
            reference,
            candidate,
            crop,
            common,
        } => {
            common.config()?;
            let a = read_grid(&reference)?;
            let b = read_grid(&candidate)?;
            if a.dim() != b.dim() {
                return Err(Error::Size(format!(
                    "grid shapes differ: {:?} vs {:?}",
                    a.dim(),
                    b.dim()
                )));
            }
            let crop = match crop {
                Some(c) => parse_crop(&c)?,
                None => Crop::full(a.dim()),
            };
            crop.check(a.dim())?;
            println!("{:.6}", ssim(crop.view(&a), crop.view(&b))?);
        }
        Command::Pipeline {
            stack,
            positions,
            reconstruct,
            common,
        } => {
            let mut cfg = common.config()?;
            if let Some(s) = stack {
                cfg.stack = Some(s);
            }
            if let Some(p) = positions {
                cfg.positions = Some(p);
            }
            if reconstruct {
                cfg.reconstruct = true;
            }
            let report = run_pipeline(&cfg).map_err(|e| {
                eprintln!("stage `{}` failed", e.stage);
                e.source
            })?;
            for s in &report.timing.stages {
                println!("{:<15} {:>10.3} s", s.name, s.seconds);
            }
            println!(
                "frames {} -> {} ({:.4})",
                report.timing.frames_in,
                report.timing.frames_out,
                report.selection.summary.fraction
            );
            if let Some(r) = &report.recon {
                println!("phase ssim {:.6}", r.ssim);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
