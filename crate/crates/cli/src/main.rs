//! Single binary exposing the pipeline: synth -> fit -> segment -> eval,
//! plus bench and render.
//!
//! Exit codes: 0 success, 2 input or validation failure, 3 fit ran out of
//! epochs without converging (outputs are still written).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use hsiseg_core::bench::{format_table, run_bench, BenchConfig};
use hsiseg_core::cube::{
    class_table_path, load_class_table, load_cube, load_label_raster, regions_from_raster,
    render_pseudocolor, save_cube, save_label_raster, standardize, LabelRaster,
};
use hsiseg_core::metrics::{match_segments, write_csv};
use hsiseg_core::model::{load_model, save_model, Pixels};
use hsiseg_core::segment::{
    assign_clusters_with_mode, boundaries, connected_components, merge_small_segments, ClusterMap,
    PredictMode, SegmentMap,
};
use hsiseg_core::synth::{sample_scene, SceneSpec};
use hsiseg_core::train::{fit_with_options, prune_model, FitConfig};

const DEFAULT_SEED: u64 = 42;
const EXIT_VALIDATION: i32 = 2;
const EXIT_NO_CONVERGENCE: i32 = 3;

#[derive(Parser)]
#[command(
    name = "hsiseg",
    version,
    about = "Hyperspectral image clustering, segmentation and evaluation"
)]
struct Cli {
    /// Directory for output artifacts and the run manifest
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,

    /// Seed for all randomness; defaults to 42, never the wall clock
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker thread cap (0 = library default); results are independent of it
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene with ground truth and true labels
    Synth {
        /// Scene spec JSON path, or "default" for the built-in scene
        #[arg(long, default_value = "default")]
        spec: String,
        /// Number of components in the built-in scene
        #[arg(long, default_value_t = 3)]
        true_k: usize,
    },
    /// Standardize a cube and fit the mixture model
    Fit {
        /// Cube header file
        cube: PathBuf,
        #[arg(long, default_value_t = 5)]
        max_k: usize,
        #[arg(long, default_value_t = 500)]
        max_epochs: usize,
        /// Pixels per gradient step; 0 = full batch
        #[arg(long, default_value_t = 0)]
        batch_size: usize,
        #[arg(long, default_value_t = 0.05)]
        learning_rate: f64,
        #[arg(long, default_value_t = 0.5)]
        lr_decay: f64,
        #[arg(long, default_value_t = 1e-6)]
        rel_tol: f64,
        #[arg(long, default_value_t = 10)]
        patience: usize,
        /// Minimum mixing weight for a component to stay in the model
        #[arg(long, default_value_t = 1e-2)]
        prune_threshold: f64,
    },
    /// Assign clusters, extract segments and draw the boundary overlay
    Segment {
        /// Model JSON written by `fit`
        model: PathBuf,
        /// Cube header file (raw reflectance; standardized with the model's stats)
        cube: PathBuf,
        /// Merge segments smaller than this many pixels into their largest neighbor
        #[arg(long, default_value_t = 0)]
        min_segment: usize,
        /// Use the pi-weighted posterior mode instead of the plain density argmax
        #[arg(long)]
        weighted: bool,
    },
    /// Score a segment raster against a ground-truth raster
    Eval {
        /// Segment label raster header
        segments: PathBuf,
        /// Ground-truth label raster header (class table sidecar required)
        gt: PathBuf,
    },
    /// Compare mixture inference time against k-means fit+predict
    Bench {
        /// Cube header file
        cube: PathBuf,
        /// Pre-trained model JSON; fitted on the fly when absent
        #[arg(long)]
        model: Option<PathBuf>,
        /// k for the k-means baseline (and max_k for an on-the-fly fit)
        #[arg(long, default_value_t = 5)]
        k: usize,
        /// Runs per timing measurement; the median is reported
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        #[arg(long, default_value_t = 50)]
        kmeans_max_iters: usize,
        /// Epoch budget for the on-the-fly mixture fit
        #[arg(long, default_value_t = 100)]
        fit_epochs: usize,
        /// Dataset label in the report; defaults to the cube file stem
        #[arg(long)]
        dataset_name: Option<String>,
    },
    /// Render a pseudocolor PNG from three wavelengths
    Render {
        /// Cube header file
        cube: PathBuf,
        #[arg(long, default_value_t = 670.0)]
        red: f64,
        #[arg(long, default_value_t = 540.0)]
        green: f64,
        #[arg(long, default_value_t = 470.0)]
        blue: f64,
    },
}

/// 0 = quiet, 1 = info, 2 = debug; from HSISEG_LOG.
fn verbosity() -> u8 {
    match std::env::var("HSISEG_LOG").as_deref() {
        Ok("quiet") | Ok("0") => 0,
        Ok("debug") | Ok("2") => 2,
        _ => 1,
    }
}

fn info(msg: &str) {
    if verbosity() >= 1 {
        eprintln!("{msg}");
    }
}

#[derive(serde::Serialize)]
struct RunManifest {
    subcommand: String,
    tool_version: String,
    seed: u64,
    threads: usize,
    inputs: Vec<String>,
    outputs: Vec<String>,
    config: serde_json::Value,
    wall_time_s: f64,
}

struct ManifestBuilder {
    subcommand: &'static str,
    seed: u64,
    threads: usize,
    inputs: Vec<String>,
    outputs: Vec<String>,
    config: serde_json::Value,
    started: Instant,
}

impl ManifestBuilder {
    fn new(subcommand: &'static str, seed: u64, threads: usize) -> Self {
        Self {
            subcommand,
            seed,
            threads,
            inputs: Vec::new(),
            outputs: Vec::new(),
            config: serde_json::Value::Null,
            started: Instant::now(),
        }
    }

    fn input(&mut self, path: &Path) {
        self.inputs.push(path.display().to_string());
    }

    fn output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    fn write(self, out_dir: &Path) -> Result<()> {
        let manifest = RunManifest {
            subcommand: self.subcommand.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: self.seed,
            threads: self.threads,
            inputs: self.inputs,
            outputs: self.outputs,
            config: self.config,
            wall_time_s: self.started.elapsed().as_secs_f64(),
        };
        let path = out_dir.join(format!("{}_manifest.json", self.subcommand));
        std::fs::write(&path, serde_json::to_string_pretty(&manifest)?)
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }
}

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => std::process::exit(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            std::process::exit(EXIT_VALIDATION);
        }
    }
}

fn run(cli: Cli) -> Result<i32> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .context("building the thread pool")?;
    }
    std::fs::create_dir_all(&cli.out)
        .with_context(|| format!("creating output directory {}", cli.out.display()))?;
    let seed = cli.seed.unwrap_or(DEFAULT_SEED);
    let out = cli.out.clone();
    match cli.command {
        Command::Synth { spec, true_k } => {
            cmd_synth(&out, seed, cli.seed, &spec, true_k, cli.threads)
        }
        Command::Fit {
            cube,
            max_k,
            max_epochs,
            batch_size,
            learning_rate,
            lr_decay,
            rel_tol,
            patience,
            prune_threshold,
        } => {
            let config = FitConfig {
                max_k,
                max_epochs,
                batch_size,
                learning_rate,
                lr_decay,
                rel_tol,
                patience,
                prune_threshold,
                seed,
            };
            cmd_fit(&out, &cube, config, cli.threads)
        }
        Command::Segment {
            model,
            cube,
            min_segment,
            weighted,
        } => cmd_segment(
            &out,
            &model,
            &cube,
            min_segment,
            weighted,
            seed,
            cli.threads,
        ),
        Command::Eval { segments, gt } => cmd_eval(&out, &segments, &gt, seed, cli.threads),
        Command::Bench {
            cube,
            model,
            k,
            repeats,
            kmeans_max_iters,
            fit_epochs,
            dataset_name,
        } => cmd_bench(
            &out,
            &cube,
            model.as_deref(),
            BenchArgs {
                k,
                repeats,
                kmeans_max_iters,
                fit_epochs,
                dataset_name,
            },
            seed,
            cli.threads,
        ),
        Command::Render {
            cube,
            red,
            green,
            blue,
        } => cmd_render(&out, &cube, red, green, blue, seed, cli.threads),
    }
}

fn cmd_synth(
    out: &Path,
    seed: u64,
    seed_flag: Option<u64>,
    spec_arg: &str,
    true_k: usize,
    threads: usize,
) -> Result<i32> {
    let spec = if spec_arg == "default" {
        SceneSpec::default_scene(true_k, seed)
    } else {
        let text = std::fs::read_to_string(spec_arg)
            .with_context(|| format!("reading scene spec {spec_arg}"))?;
        let mut spec: SceneSpec =
            serde_json::from_str(&text).with_context(|| format!("parsing {spec_arg}"))?;
        // An explicit --seed overrides the spec file's noise seed.
        if let Some(s) = seed_flag {
            spec.noise_seed = s;
        }
        spec
    };
    let mut manifest = ManifestBuilder::new("synth", spec.noise_seed, threads);
    manifest.config = serde_json::to_value(&spec)?;

    let (cube, gt, labels) = sample_scene(&spec)?;

    let scene_path = out.join("scene.hdr");
    save_cube(&cube, &scene_path)?;
    manifest.output(&scene_path);

    // Ground truth: one label value per component; disjoint rectangles of
    // the same component become separate regions again on load.
    let gt_raster = LabelRaster {
        height: cube.height(),
        width: cube.width(),
        labels: labels.iter().map(|&l| l as i16).collect(),
    };
    let classes: BTreeMap<i16, String> = (1..=spec.true_k as i16)
        .map(|c| (c, format!("class-{c}")))
        .collect();
    let gt_path = out.join("gt.hdr");
    save_label_raster(&gt_raster, &gt_path, Some(&classes))?;
    manifest.output(&gt_path);

    let truth_path = out.join("truth.hdr");
    save_label_raster(&gt_raster, &truth_path, Some(&classes))?;
    manifest.output(&truth_path);

    info(&format!(
        "synth: {}x{}x{} cube, {} ground-truth regions",
        cube.height(),
        cube.width(),
        cube.bands(),
        gt.regions.len()
    ));
    manifest.write(out)?;
    Ok(0)
}

fn cmd_fit(out: &Path, cube_path: &Path, config: FitConfig, threads: usize) -> Result<i32> {
    let mut manifest = ManifestBuilder::new("fit", config.seed, threads);
    manifest.input(cube_path);
    manifest.config = serde_json::to_value(&config)?;

    let cube = load_cube(cube_path)?;
    let (std_cube, stats) = standardize(&cube)?;
    let pixels = Pixels::from_cube(&std_cube);
    info(&format!(
        "fit: {} valid pixels x {} bands, max_k {}",
        pixels.len(),
        pixels.dim(),
        config.max_k
    ));

    let debug = verbosity() >= 2;
    let mut progress = move |epoch: usize, loss: f64, eff: usize| {
        if debug {
            eprintln!("epoch={epoch} loss={loss} effective_k={eff}");
        }
    };
    let report = fit_with_options(&pixels, &config, 1.0, Some(&mut progress))?;

    let pruned = prune_model(&report.final_params, config.prune_threshold)?;
    let model_path = out.join("model.json");
    save_model(&model_path, &pruned, &stats)?;
    manifest.output(&model_path);

    let report_path = out.join("fit_report.json");
    std::fs::write(&report_path, serde_json::to_string_pretty(&report)?)
        .with_context(|| format!("writing {}", report_path.display()))?;
    manifest.output(&report_path);

    info(&format!(
        "fit: effective_k={} epochs={} converged={} final loss={:.3}",
        report.effective_k,
        report.epochs_run,
        report.converged,
        report.loss_trace.last().copied().unwrap_or(f64::NAN)
    ));
    manifest.write(out)?;
    Ok(if report.converged {
        0
    } else {
        EXIT_NO_CONVERGENCE
    })
}

/// Label raster plus sidecar for a cluster or segment map.
fn save_map_raster(
    path: &Path,
    height: usize,
    width: usize,
    values: impl Iterator<Item = u32>,
    classes: &BTreeMap<i16, String>,
) -> Result<()> {
    let labels: Vec<i16> = values
        .map(|v| {
            i16::try_from(v).map_err(|_| {
                anyhow::anyhow!("label value {v} exceeds the 16-bit signed raster range")
            })
        })
        .collect::<Result<_>>()?;
    let raster = LabelRaster {
        height,
        width,
        labels,
    };
    save_label_raster(&raster, path, Some(classes))?;
    Ok(())
}

fn cmd_segment(
    out: &Path,
    model_path: &Path,
    cube_path: &Path,
    min_segment: usize,
    weighted: bool,
    seed: u64,
    threads: usize,
) -> Result<i32> {
    let mut manifest = ManifestBuilder::new("segment", seed, threads);
    manifest.input(model_path);
    manifest.input(cube_path);
    manifest.config = serde_json::json!({
        "min_segment": min_segment,
        "weighted": weighted,
    });

    let (theta, stats) = load_model(model_path)?;
    let cube = load_cube(cube_path)?;
    if cube.bands() != theta.d {
        bail!(
            "cube {} has {} bands but model {} expects {}",
            cube_path.display(),
            cube.bands(),
            model_path.display(),
            theta.d
        );
    }
    let std_cube = stats.apply(&cube);
    let mode = if weighted {
        PredictMode::Weighted
    } else {
        PredictMode::MaxLikelihood
    };
    let cmap = assign_clusters_with_mode(&theta, &std_cube, mode)?;
    let mut smap = connected_components(&cmap);
    if min_segment > 0 {
        smap = merge_small_segments(&smap, min_segment);
    }

    let cluster_classes: BTreeMap<i16, String> = (1..=theta.k as i16)
        .map(|j| (j, format!("cluster-{j}")))
        .collect();
    let clusters_path = out.join("clusters.hdr");
    save_map_raster(
        &clusters_path,
        cmap.height,
        cmap.width,
        cmap.labels.iter().copied(),
        &cluster_classes,
    )?;
    manifest.output(&clusters_path);

    let segment_classes: BTreeMap<i16, String> = smap
        .segments
        .iter()
        .map(|s| (s.id as i16, format!("cluster-{}", s.cluster_id)))
        .collect();
    let segments_path = out.join("segments.hdr");
    save_map_raster(
        &segments_path,
        smap.height,
        smap.width,
        smap.segment_ids.iter().copied(),
        &segment_classes,
    )?;
    manifest.output(&segments_path);

    // Boundary overlay on the pseudocolor rendering; boundary pixels are
    // painted yellow. The stock wavelengths are clamped into the cube's
    // spectral range so narrow-band cubes still render.
    let ws = cube.wavelengths();
    let clamp = |nm: f64| nm.clamp(ws[0], ws[ws.len() - 1]);
    let mut overlay = render_pseudocolor(&cube, clamp(670.0), clamp(540.0), clamp(470.0))?;
    let mask = boundaries(&smap);
    for r in 0..smap.height {
        for c in 0..smap.width {
            if mask[r * smap.width + c] {
                overlay.put_pixel(c as u32, r as u32, image::Rgb([255, 255, 0]));
            }
        }
    }
    let overlay_path = out.join("boundaries.png");
    overlay
        .save(&overlay_path)
        .with_context(|| format!("writing {}", overlay_path.display()))?;
    manifest.output(&overlay_path);

    info(&format!(
        "segment: {} clusters -> {} segments (min_segment {})",
        theta.k,
        smap.segments.len(),
        min_segment
    ));
    manifest.write(out)?;
    Ok(0)
}

fn cmd_eval(
    out: &Path,
    segments_path: &Path,
    gt_path: &Path,
    seed: u64,
    threads: usize,
) -> Result<i32> {
    let mut manifest = ManifestBuilder::new("eval", seed, threads);
    manifest.input(segments_path);
    manifest.input(gt_path);

    let seg_raster = load_label_raster(segments_path)?;
    // Connected components over the raster: a proper segment raster is
    // unchanged by this, and a cluster raster decomposes into segments.
    let smap: SegmentMap = connected_components(&ClusterMap {
        height: seg_raster.height,
        width: seg_raster.width,
        labels: seg_raster.labels.iter().map(|&l| l as u32).collect(),
    });

    let gt_raster = load_label_raster(gt_path)?;
    let sidecar = class_table_path(gt_path);
    let classes = load_class_table(&sidecar)?;
    let gt = regions_from_raster(&gt_raster, &classes, &sidecar)?;
    if gt.regions.is_empty() {
        bail!(
            "no regions: ground truth {} has no labeled pixels",
            gt_path.display()
        );
    }

    let report = match_segments(&gt, &smap)?;

    let json_path = out.join("eval.json");
    std::fs::write(&json_path, serde_json::to_string_pretty(&report)?)
        .with_context(|| format!("writing {}", json_path.display()))?;
    manifest.output(&json_path);

    let csv_path = out.join("eval.csv");
    let mut csv_bytes = Vec::new();
    write_csv(&report, &mut csv_bytes)?;
    std::fs::write(&csv_path, csv_bytes)
        .with_context(|| format!("writing {}", csv_path.display()))?;
    manifest.output(&csv_path);

    println!(
        "mean OS={:.6} US={:.6} ED={:.6}",
        report.overall.os_mean, report.overall.us_mean, report.overall.ed_mean
    );
    manifest.write(out)?;
    Ok(0)
}

struct BenchArgs {
    k: usize,
    repeats: usize,
    kmeans_max_iters: usize,
    fit_epochs: usize,
    dataset_name: Option<String>,
}

fn cmd_bench(
    out: &Path,
    cube_path: &Path,
    model_path: Option<&Path>,
    args: BenchArgs,
    seed: u64,
    threads: usize,
) -> Result<i32> {
    let mut manifest = ManifestBuilder::new("bench", seed, threads);
    manifest.input(cube_path);

    let dataset_name = args.dataset_name.unwrap_or_else(|| {
        cube_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "scene".to_string())
    });
    let cube = load_cube(cube_path)?;

    // Pixels are extracted and the model prepared before any clock starts.
    let (theta, pixels) = match model_path {
        Some(path) => {
            manifest.input(path);
            let (theta, stats) = load_model(path)?;
            if cube.bands() != theta.d {
                bail!(
                    "cube has {} bands but model expects {}",
                    cube.bands(),
                    theta.d
                );
            }
            (theta, Pixels::from_cube(&stats.apply(&cube)))
        }
        None => {
            let (std_cube, stats) = standardize(&cube)?;
            let pixels = Pixels::from_cube(&std_cube);
            info(&format!(
                "bench: fitting a model ({} epochs) first",
                args.fit_epochs
            ));
            let config = FitConfig {
                max_k: args.k,
                max_epochs: args.fit_epochs,
                seed,
                ..FitConfig::default()
            };
            let report = fit_with_options(&pixels, &config, 1.0, None)?;
            let pruned = prune_model(&report.final_params, config.prune_threshold)?;
            let model_out = out.join("bench_model.json");
            save_model(&model_out, &pruned, &stats)?;
            manifest.output(&model_out);
            (pruned, pixels)
        }
    };
    if pixels.len() < args.k {
        bail!(
            "{} valid pixels cannot seed {} clusters",
            pixels.len(),
            args.k
        );
    }

    let config = BenchConfig {
        dataset_name,
        kmeans_k: args.k,
        kmeans_max_iters: args.kmeans_max_iters,
        kmeans_tol: 1e-6,
        seed,
        repeats: args.repeats,
    };
    manifest.config = serde_json::to_value(&config)?;
    let result = run_bench(&pixels, &theta, &config)?;

    print!("{}", format_table(&result));
    let json_path = out.join("bench.json");
    std::fs::write(&json_path, serde_json::to_string_pretty(&result)?)
        .with_context(|| format!("writing {}", json_path.display()))?;
    manifest.output(&json_path);
    manifest.write(out)?;
    Ok(0)
}

fn cmd_render(
    out: &Path,
    cube_path: &Path,
    red: f64,
    green: f64,
    blue: f64,
    seed: u64,
    threads: usize,
) -> Result<i32> {
    let mut manifest = ManifestBuilder::new("render", seed, threads);
    manifest.input(cube_path);
    manifest.config = serde_json::json!({ "red_nm": red, "green_nm": green, "blue_nm": blue });

    let cube = load_cube(cube_path)?;
    let img = render_pseudocolor(&cube, red, green, blue)?;
    let png_path = out.join("render.png");
    img.save(&png_path)
        .with_context(|| format!("writing {}", png_path.display()))?;
    manifest.output(&png_path);

    info(&format!(
        "render: {}x{} PNG from {red}/{green}/{blue} nm",
        cube.width(),
        cube.height()
    ));
    manifest.write(out)?;
    Ok(0)
}
