use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use facedet_core::anchors::{self, LevelRole};
use facedet_core::augment;
use facedet_core::config::{self, RunConfig};
use facedet_core::eval::{self, GroundTruthImage, Subset};
use facedet_core::io;
use facedet_core::loss::gradcheck::{self, CheckOp};
use facedet_core::postprocess::{self, Detection, ScaleRun};
use facedet_core::synthetic::{self, SceneSpec, Simulator};
use facedet_core::{Error, Result};

#[derive(Parser)]
#[command(name = "facedet", version, about = "Anchor, loss, augmentation and evaluation tools for a two-step face detector")]
struct Cli {
    /// JSON run configuration; defaults apply to anything left out.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Print the effective configuration with provenance notes and exit.
    #[arg(long, global = true)]
    explain: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Dump the anchor lattice.
    Anchors {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-anchor labels for both assignment steps.
    Assign {
        #[arg(long)]
        gt: PathBuf,
        /// Image to assign; required when the file holds several.
        #[arg(long)]
        image: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare analytic loss gradients with finite differences.
    GradCheck {
        #[arg(long, value_enum)]
        op: OpArg,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Emit data-anchor-sampling plans as JSON lines.
    SamplePlan {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        image: Option<String>,
        /// Source image size, `WxH`.
        #[arg(long, value_parser = parse_size)]
        image_size: (f64, f64),
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fuse detection files produced at several test scales.
    MergeScales {
        /// `FILE:SCALE` or `FILE:SCALE:flip`.
        #[arg(long, num_args = 1.., required = true, value_parser = parse_run)]
        runs: Vec<RunArg>,
        /// Original image size, `WxH`.
        #[arg(long, value_parser = parse_size)]
        image_size: (f64, f64),
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the synthetic scorer end to end over a ground-truth file.
    Simulate {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long)]
        regression_quality: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write loss and assignment statistics as JSON.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Average precision on the easy, medium and hard subsets.
    Eval {
        #[arg(long)]
        det: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Directory for per-subset precision/recall TSV files.
        #[arg(long)]
        curves: Option<PathBuf>,
    },
    /// Generate a random synthetic ground-truth scene.
    MakeScene {
        #[arg(long, default_value_t = 50)]
        n: usize,
        #[arg(long, value_enum, default_value_t = SceneKind::Graded)]
        kind: SceneKind,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum OpArg {
    Focal,
    Iou,
}

#[derive(Clone, Copy, ValueEnum)]
enum SceneKind {
    /// Easy, medium and hard faces.
    Graded,
    /// Hard faces of side 6 to 10 px.
    Tiny,
}

#[derive(Clone)]
struct RunArg {
    path: PathBuf,
    scale: f64,
    flip: bool,
}

fn parse_size(s: &str) -> std::result::Result<(f64, f64), String> {
    let (w, h) = s.split_once('x').ok_or_else(|| format!("expected WxH, got `{s}`"))?;
    let parse = |v: &str| -> std::result::Result<f64, String> {
        let x: f64 = v.parse().map_err(|_| format!("bad dimension `{v}`"))?;
        if x > 0.0 && x.is_finite() {
            Ok(x)
        } else {
            Err(format!("dimension must be positive, got `{v}`"))
        }
    };
    Ok((parse(w)?, parse(h)?))
}

fn parse_run(s: &str) -> std::result::Result<RunArg, String> {
    let (rest, flip) = match s.strip_suffix(":flip") {
        Some(r) => (r, true),
        None => (s, false),
    };
    let (path, scale) = rest.rsplit_once(':').ok_or_else(|| format!("expected FILE:SCALE[:flip], got `{s}`"))?;
    let scale: f64 = scale.parse().map_err(|_| format!("bad scale `{scale}`"))?;
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(format!("scale must be positive, got {scale}"));
    }
    Ok(RunArg {
        path: PathBuf::from(path),
        scale,
        flip,
    })
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => io::write_atomic(p, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn pick_image<'a>(gts: &'a [GroundTruthImage], id: Option<&str>) -> Result<&'a GroundTruthImage> {
    match id {
        Some(id) => gts
            .iter()
            .find(|g| g.image_id == id)
            .ok_or_else(|| Error::UnknownImages(vec![id.to_string()])),
        None if gts.len() == 1 => Ok(&gts[0]),
        None => Err(Error::Config(format!(
            "the ground-truth file holds {} images; choose one with --image",
            gts.len()
        ))),
    }
}

/// Exit status for a failed check, as opposed to an error.
struct CheckFailed;

fn run(cli: Cli) -> Result<std::result::Result<(), CheckFailed>> {
    let cfg = match &cli.config {
        Some(p) => config::load_config(p)?,
        None => RunConfig::default(),
    };
    if cli.explain {
        print!("{}", cfg.explain()?);
        return Ok(Ok(()));
    }
    match cli.command {
        Command::Anchors { out } => {
            let lattice = anchors::build_lattice(&cfg.pyramid)?;
            let mut buf = Vec::new();
            lattice.dump(&mut buf)?;
            match out {
                Some(p) => io::write_atomic(&p, &buf)?,
                None => std::io::Write::write_all(&mut std::io::stdout(), &buf)?,
            }
        }
        Command::Assign { gt, image, out } => {
            let gts = io::read_ground_truth(&gt)?;
            let img = pick_image(&gts, image.as_deref())?;
            let lattice = anchors::build_lattice(&cfg.pyramid)?;
            let scores = synthetic::score_anchors(&lattice, &img.boxes, &cfg.maxout, &cfg.scorer)?;
            let mut refined = Vec::with_capacity(lattice.len());
            for i in 0..lattice.len() {
                let a = &lattice.anchors()[i];
                refined.push(match lattice.role_of(i) {
                    LevelRole::Regression => anchors::refine_one(a, lattice.stride_of(i), &scores.step1_deltas[i])?,
                    LevelRole::Classification => *a,
                });
            }
            let (a1, a2) = anchors::two_step_assign(&lattice, &img.boxes, &refined, cfg.step1, cfg.step2)?;
            let mut text = String::from("anchor_idx\tstep1\tstep2\tgt_idx\tiou\n");
            for i in 0..lattice.len() {
                let (g, v) = match a2.best[i] {
                    Some((g, v)) => (g as i64, v),
                    None => (-1, 0.0),
                };
                let _ = writeln!(text, "{i}\t{}\t{}\t{g}\t{v:.6}", a1.labels[i].as_str(), a2.labels[i].as_str());
            }
            emit(out.as_deref(), &text)?;
            eprintln!(
                "step1: {} pos {} neg {} ign; step2: {} pos {} neg {} ign",
                a1.num_positive(),
                a1.num_negative(),
                a1.num_ignored(),
                a2.num_positive(),
                a2.num_negative(),
                a2.num_ignored()
            );
        }
        Command::GradCheck { op, n, seed, out } => {
            let op = match op {
                OpArg::Focal => CheckOp::Focal,
                OpArg::Iou => CheckOp::Iou,
            };
            let points = gradcheck::run(op, n, seed, Default::default())?;
            let mut text = String::new();
            for p in &points {
                let _ = writeln!(text, "{p}");
            }
            emit(out.as_deref(), &text)?;
            let failed = points.iter().filter(|p| !p.passed()).count();
            let worst = points.iter().map(|p| p.rel_err).fold(0.0, f64::max);
            eprintln!("{}: {} points, {failed} failed, max rel err {worst:.3e}", op.name(), points.len());
            if failed > 0 {
                return Ok(Err(CheckFailed));
            }
        }
        Command::SamplePlan { gt, image, image_size, n, seed, out } => {
            let gts = io::read_ground_truth(&gt)?;
            let img = pick_image(&gts, image.as_deref())?;
            if img.boxes.is_empty() {
                return Err(Error::Config(format!("image `{}` has no faces to sample", img.image_id)));
            }
            let set = cfg.anchor_scale_set()?;
            let seed = seed.unwrap_or(cfg.seed);
            let mut text = String::new();
            let mut hist: BTreeMap<usize, usize> = BTreeMap::new();
            for i in 0..n {
                let plan_seed = seed.wrapping_add(i as u64);
                let mut rng = ChaCha8Rng::seed_from_u64(plan_seed);
                let face = img.boxes[rand::Rng::random_range(&mut rng, 0..img.boxes.len())];
                let mut plan = augment::data_anchor_sample(&face, &img.boxes, image_size, &set, cfg.augmentation.train_size, &mut rng)?;
                plan.seed = Some(plan_seed);
                text.push_str(&plan.to_json_line()?);
                text.push('\n');
                *hist.entry(plan.target_index).or_default() += 1;
            }
            emit(out.as_deref(), &text)?;
            eprintln!("resized face side by target anchor scale:");
            for (k, count) in hist {
                eprintln!("  {:>8.2} px  {count}", set.scales()[k]);
            }
        }
        Command::MergeScales { runs, image_size, out } => {
            let mut per_image: BTreeMap<String, Vec<ScaleRun>> = BTreeMap::new();
            let mut loaded = Vec::with_capacity(runs.len());
            for r in &runs {
                loaded.push((r, io::read_detections(&r.path)?));
            }
            for (r, dets) in loaded {
                for (id, list) in dets {
                    per_image.entry(id).or_default().push(ScaleRun {
                        scale_factor: r.scale,
                        flipped: r.flip,
                        detections: list,
                    });
                }
            }
            let params = cfg.postprocess.merge_params();
            let mut merged: BTreeMap<String, Vec<Detection>> = BTreeMap::new();
            for (id, list) in per_image {
                merged.insert(id, postprocess::merge_scales(&list, image_size, &params)?);
            }
            emit(out.as_deref(), &io::format_detections(&merged))?;
        }
        Command::Simulate { gt, noise, regression_quality, seed, out, summary } => {
            let gts = io::read_ground_truth(&gt)?;
            let mut scorer = cfg.scorer;
            if let Some(x) = noise {
                scorer.noise_sigma = x;
            }
            if let Some(q) = regression_quality {
                scorer.regression_quality = q;
            }
            scorer.seed = seed.unwrap_or(cfg.seed);
            let sim = Simulator::new(
                &cfg.pyramid,
                &cfg.postprocess.passes(),
                cfg.detector_params(),
                cfg.postprocess.merge_params(),
                scorer,
            )?;
            let result = sim.run(&gts)?;
            emit(out.as_deref(), &io::format_detections(&result.detections))?;
            let s = serde_json::to_string_pretty(&result.summary())? + "\n";
            match summary {
                Some(p) => io::write_atomic(&p, s.as_bytes())?,
                None => eprint!("{s}"),
            }
        }
        Command::Eval { det, gt, out, curves } => {
            let gts = io::read_ground_truth(&gt)?;
            let dets = io::read_detections(&det)?;
            let report = eval::evaluate(&dets, &gts, cfg.eval.match_iou)?;
            let text = serde_json::to_string_pretty(&report.summary_json())? + "\n";
            emit(out.as_deref(), &text)?;
            if let Some(dir) = curves {
                std::fs::create_dir_all(&dir)?;
                for subset in Subset::ALL {
                    let mut tsv = String::from("threshold\trecall\tprecision\n");
                    for p in &report.curve(subset).points {
                        let _ = writeln!(tsv, "{:.6}\t{:.6}\t{:.6}", p.threshold, p.recall, p.precision);
                    }
                    io::write_atomic(&dir.join(format!("{}.tsv", subset.name())), tsv.as_bytes())?;
                }
            }
        }
        Command::MakeScene { n, kind, seed, out } => {
            let spec = match kind {
                SceneKind::Graded => SceneSpec::graded(),
                SceneKind::Tiny => SceneSpec::tiny(6.0, 10.0),
            };
            let scene = synthetic::generate_scene(n, cfg.pyramid.input_size, &spec, seed.unwrap_or(cfg.seed))?;
            emit(out.as_deref(), &io::format_ground_truth(&scene))?;
        }
    }
    Ok(Ok(()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(CheckFailed)) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { 2 } else { 1 })
        }
    }
}
