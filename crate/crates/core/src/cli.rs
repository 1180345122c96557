//! Command-line front end: synth, occlude, pretrain, refine, eval, ablate
//! and plot.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use image::{Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::io::pseq::{read_pseq, read_pseq_document, write_pseq_document, FrameEncoding, PseqDocument};
use crate::io::RunConfig;
use crate::metrics::{evaluate, EvalOptions, EvalReport};
use crate::model::{checkpoint, MotionPrior};
use crate::occlusion::occlude;
use crate::pretrain::{generate_synthetic_motion_with, run_pretraining_with, SynthOptions};
use crate::refine::{ttt_refine, LossWeights, TttConfig};
use crate::skeleton::{PoseSequence, SkeletonTopology};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "MOTION_REFINE_OUT";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "motion-refine", version, about = "Refine noisy, gappy 3D pose sequences with a learned motion prior")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random choice; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (default: config paths.out_dir, then $MOTION_REFINE_OUT, then ".").
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Topology preset name or topology file.
    #[arg(long, global = true)]
    topology: Option<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic motions as PSEQ files.
    Synth {
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        fps: Option<f64>,
        /// Write frames as a packed binary block.
        #[arg(long)]
        binary: bool,
    },
    /// Simulate occlusions on ground-truth sequences.
    Occlude {
        #[arg(long = "input", required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        span: Option<f64>,
        #[arg(long)]
        period: Option<f64>,
        #[arg(long)]
        coverage: Option<f64>,
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long)]
        dropout: Option<f64>,
    },
    /// Pretrain a motion prior on clean sequences.
    Pretrain {
        /// PSEQ files or directories of them; synthetic data when omitted.
        #[arg(long = "data")]
        data: Vec<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Test-time refinement of noisy sequences.
    Refine {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long = "input", required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Loss weight overrides, e.g. "lim=200,vel=20".
        #[arg(long)]
        weights: Option<String>,
    },
    /// Compare a prediction with ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[command(flatten)]
        opts: EvalFlags,
        /// Also write the report as JSON and as a CSV row under --out.
        #[arg(long)]
        save: bool,
    },
    /// Prior only, then cumulatively enable mpjp, vel, lim and nmpjp.
    Ablate {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Noisy sequences, paired in order with --gt.
        #[arg(long = "input", required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long = "gt", required = true)]
        gts: Vec<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        weights: Option<String>,
    },
    /// Per-coordinate error against ground truth over time, as PNG and CSV.
    Plot {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, default_value = "error")]
        name: String,
    },
}

#[derive(Debug, Args)]
struct EvalFlags {
    #[arg(long)]
    root_relative: bool,
    #[arg(long)]
    pa_sequence: bool,
    #[arg(long)]
    accel_per_second: bool,
}

struct Context {
    cfg: RunConfig,
    out: PathBuf,
    topology: SkeletonTopology,
}

impl Context {
    fn new(g: &Global) -> Result<Self> {
        let mut cfg = match &g.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = g.seed {
            cfg = cfg.with_seed(seed);
        }
        if let Some(t) = &g.topology {
            cfg.topology = t.clone();
        }
        let out = g
            .out
            .clone()
            .or_else(|| cfg.paths.out_dir.clone())
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("."));
        fs::create_dir_all(&out)?;
        let topology = SkeletonTopology::resolve(&cfg.topology)?;
        Ok(Self { cfg, out, topology })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn log(&self, line: &str) -> Result<()> {
        let secs = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        let mut f = fs::OpenOptions::new().create(true).append(true).open(self.path("run.log"))?;
        writeln!(f, "{secs} {line}")?;
        Ok(())
    }

    fn checkpoint(&self, flag: &Option<PathBuf>) -> Result<MotionPrior> {
        let path = flag
            .clone()
            .or_else(|| self.cfg.paths.checkpoint.clone())
            .ok_or_else(|| Error::Config("no checkpoint given (use --checkpoint or paths.checkpoint)".into()))?;
        checkpoint::load(&path)
    }

    fn weights(&self, flag: &Option<String>) -> Result<LossWeights> {
        match flag {
            Some(spec) => self.cfg.weights.with_overrides(spec),
            None => Ok(self.cfg.weights),
        }
    }

    fn ttt(&self, epochs: Option<usize>) -> TttConfig {
        let mut t = self.cfg.ttt.clone();
        if let Some(e) = epochs {
            t.epochs = e;
        }
        t
    }
}

fn stem(path: &Path) -> String {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let name = name.strip_suffix(".pseq").unwrap_or(&name);
    let name = name.strip_suffix(".occ").or_else(|| name.strip_suffix(".gt")).unwrap_or(name);
    name.to_string()
}

fn write_doc(seq: &PoseSequence, path: &Path, binary: bool) -> Result<()> {
    let doc = PseqDocument {
        sequence: seq.clone(),
        extra: Default::default(),
    };
    let enc = if binary { FrameEncoding::Binary } else { FrameEncoding::Text };
    write_pseq_document(&doc, path, enc)
}

fn collect_pseq(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|e| e.extension().is_some_and(|x| x == "pseq"))
                .collect();
            found.sort();
            out.extend(found);
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}

fn cmd_synth(ctx: &Context, count: Option<usize>, frames: Option<usize>, fps: Option<f64>, binary: bool) -> Result<()> {
    let s = &ctx.cfg.synth;
    let opts = SynthOptions {
        fps: fps.unwrap_or(s.fps),
        ..SynthOptions::default()
    };
    let seqs = generate_synthetic_motion_with(
        count.unwrap_or(s.count),
        frames.unwrap_or(s.frames),
        &ctx.topology,
        ctx.cfg.synth_seed(),
        &opts,
    )?;
    for (i, seq) in seqs.iter().enumerate() {
        write_doc(seq, &ctx.path(&format!("synth_{i:04}.pseq")), binary)?;
    }
    println!("wrote {} sequences to {}", seqs.len(), ctx.out.display());
    Ok(())
}

fn cmd_occlude(ctx: &Context, inputs: &[PathBuf], overrides: [Option<f64>; 5]) -> Result<()> {
    let mut spec = ctx.cfg.occlusion;
    let [span, period, coverage, noise, dropout] = overrides;
    spec.span_seconds = span.unwrap_or(spec.span_seconds);
    spec.period_seconds = period.unwrap_or(spec.period_seconds);
    spec.coverage = coverage.unwrap_or(spec.coverage);
    spec.survivor_noise_sigma = noise.unwrap_or(spec.survivor_noise_sigma);
    spec.per_joint_dropout = dropout.unwrap_or(spec.per_joint_dropout);
    spec.validate()?;
    for (i, input) in collect_pseq(inputs)?.iter().enumerate() {
        let gt = read_pseq(input)?;
        let item = crate::occlusion::OcclusionSpec {
            seed: spec.seed.wrapping_add(i as u64),
            ..spec
        };
        let occ = occlude(&gt, &item)?;
        let name = stem(input);
        write_doc(&gt, &ctx.path(&format!("{name}.gt.pseq")), false)?;
        write_doc(&occ, &ctx.path(&format!("{name}.occ.pseq")), false)?;
        fs::write(ctx.path(&format!("{name}.occlusion.toml")), toml::to_string(&item).expect("spec serializes"))?;
        println!("{name}: {} of {} frames valid", occ.valid_count(), occ.num_frames());
    }
    Ok(())
}

fn cmd_pretrain(ctx: &Context, data: &[PathBuf], epochs: Option<usize>) -> Result<()> {
    let cfg = &ctx.cfg;
    let dataset = if data.is_empty() {
        let opts = SynthOptions {
            fps: cfg.synth.fps,
            ..SynthOptions::default()
        };
        generate_synthetic_motion_with(cfg.synth.count, cfg.synth.frames, &ctx.topology, cfg.synth_seed(), &opts)?
    } else {
        collect_pseq(data)?.iter().map(|p| read_pseq(p)).collect::<Result<Vec<_>>>()?
    };
    let mut pc = cfg.pretrain.clone();
    if let Some(e) = epochs {
        pc.epochs = e;
    }
    let joints = dataset.first().ok_or(Error::EmptyDataset)?.num_joints();
    let model = MotionPrior::new(cfg.model.clone(), joints, pc.seed)?;
    let mut history = String::from("epoch\ttotal\tl3d\tlvel\n");
    let every = pc.checkpoint_every;
    let (model, _) = run_pretraining_with(model, &dataset, &pc, &cfg.mask, &cfg.noise, |e, m| {
        history.push_str(&format!("{}\t{}\t{}\t{}\n", e.epoch, e.total, e.l3d, e.lvel));
        if every > 0 && (e.epoch + 1) % every == 0 {
            checkpoint::save(m, &ctx.path(&format!("prior_epoch{:04}.ckpt", e.epoch + 1)))?;
        }
        Ok(())
    })?;
    let path = cfg.paths.checkpoint.clone().unwrap_or_else(|| ctx.path("prior.ckpt"));
    checkpoint::save(&model, &path)?;
    fs::write(ctx.path("pretrain_history.tsv"), history)?;
    println!("saved {}", path.display());
    Ok(())
}

fn ttt_history(r: &crate::refine::Refinement) -> String {
    let mut s = String::from("epoch\ttotal\tlim\tmpjp\tnmpjp\tvel\n");
    for e in &r.history {
        s.push_str(&format!("{}\t{}\t{}\t{}\t{}\t{}\n", e.epoch, e.total, e.lim, e.mpjp, e.nmpjp, e.vel));
    }
    s
}

fn cmd_refine(ctx: &Context, ckpt: &Option<PathBuf>, inputs: &[PathBuf], epochs: Option<usize>, weights: &Option<String>) -> Result<()> {
    let model = ctx.checkpoint(ckpt)?;
    let w = ctx.weights(weights)?;
    let ttt = ctx.ttt(epochs);
    for input in collect_pseq(inputs)? {
        let doc = read_pseq_document(&input)?;
        let r = ttt_refine(&doc.sequence, &model, &ttt, &w)?;
        let name = stem(&input);
        let out = PseqDocument {
            sequence: r.refined.clone(),
            extra: doc.extra,
        };
        write_pseq_document(&out, &ctx.path(&format!("{name}.refined.pseq")), FrameEncoding::Text)?;
        fs::write(ctx.path(&format!("{name}.ttt_history.tsv")), ttt_history(&r))?;
        println!("{name}: refined {} frames", r.refined.num_frames());
    }
    Ok(())
}

fn cmd_eval(ctx: &Context, pred: &Path, gt: &Path, flags: &EvalFlags, save: bool) -> Result<EvalReport> {
    let opts = EvalOptions {
        root_relative: flags.root_relative || ctx.cfg.eval.root_relative,
        pa_sequence_level: flags.pa_sequence || ctx.cfg.eval.pa_sequence_level,
        accel_per_second: flags.accel_per_second || ctx.cfg.eval.accel_per_second,
    };
    let report = evaluate(&read_pseq(pred)?, &read_pseq(gt)?, &opts)?;
    let json = report.to_json();
    println!("{json}");
    if save {
        let name = stem(pred);
        fs::write(ctx.path(&format!("{name}.eval.json")), format!("{json}\n"))?;
        fs::write(
            ctx.path(&format!("{name}.eval.csv")),
            format!("{}\n{}\n", EvalReport::CSV_HEADER, report.csv_row()),
        )?;
    }
    Ok(report)
}

/// Cumulative loss configurations, in table order.
pub fn ablation_rows(full: &LossWeights) -> Vec<(&'static str, Option<LossWeights>)> {
    let mpjp = LossWeights {
        mpjp: full.mpjp,
        ..LossWeights::ZERO
    };
    let vel = LossWeights { vel: full.vel, ..mpjp };
    let lim = LossWeights { lim: full.lim, ..vel };
    let nmpjp = LossWeights { nmpjp: full.nmpjp, ..lim };
    vec![
        ("prior", None),
        ("+mpjp", Some(mpjp)),
        ("+vel", Some(vel)),
        ("+lim", Some(lim)),
        ("+nmpjp", Some(nmpjp)),
    ]
}

fn cmd_ablate(
    ctx: &Context,
    ckpt: &Option<PathBuf>,
    inputs: &[PathBuf],
    gts: &[PathBuf],
    epochs: Option<usize>,
    weights: &Option<String>,
) -> Result<()> {
    if inputs.len() != gts.len() {
        return Err(Error::Config(format!("{} inputs but {} ground truths", inputs.len(), gts.len())));
    }
    let model = ctx.checkpoint(ckpt)?;
    let full = ctx.weights(weights)?;
    let pairs = inputs
        .iter()
        .zip(gts)
        .map(|(i, g)| Ok((read_pseq(i)?, read_pseq(g)?)))
        .collect::<Result<Vec<_>>>()?;
    let mut csv = String::from("row,lim,mpjp,nmpjp,vel,mpjpe_mm,pa_mpjpe_mm,accel_mm\n");
    for (name, w) in ablation_rows(&full) {
        let mut ttt = ctx.ttt(epochs);
        let w = w.unwrap_or(LossWeights::ZERO);
        if name == "prior" {
            ttt.epochs = 0;
        }
        let mut sums = [0.0; 3];
        for (noisy, gt) in &pairs {
            let r = ttt_refine(noisy, &model, &ttt, &w)?;
            let rep = evaluate(&r.refined, gt, &ctx.cfg.eval)?;
            sums[0] += rep.mpjpe_mm;
            sums[1] += rep.pa_mpjpe_mm;
            sums[2] += rep.accel_mm.unwrap_or(f64::NAN);
        }
        let n = pairs.len() as f64;
        let line = format!(
            "{name},{},{},{},{},{},{},{}",
            w.lim,
            w.mpjp,
            w.nmpjp,
            w.vel,
            sums[0] / n,
            sums[1] / n,
            sums[2] / n
        );
        println!("{line}");
        csv.push_str(&line);
        csv.push('\n');
    }
    fs::write(ctx.path("ablation.csv"), csv)?;
    Ok(())
}

fn draw_line(img: &mut RgbImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), color: Rgb<u8>) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, color);
        }
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

fn cmd_plot(ctx: &Context, pred: &Path, gt: &Path, name: &str) -> Result<()> {
    let p = read_pseq(pred)?;
    let g = read_pseq(gt)?;
    if p.frames().dim() != g.frames().dim() {
        return Err(Error::Shape(format!("{:?} vs {:?}", p.frames().dim(), g.frames().dim())));
    }
    let (t, j, _) = p.frames().dim();
    // Mean absolute error per frame and axis, in mm; NaN for invalid ground truth.
    let curves: Vec<[f64; 3]> = (0..t)
        .map(|ti| {
            [0, 1, 2].map(|d| {
                if !g.valid()[ti] {
                    return f64::NAN;
                }
                1000.0 * (0..j).map(|k| (p.frames()[[ti, k, d]] - g.frames()[[ti, k, d]]).abs()).sum::<f64>() / j as f64
            })
        })
        .collect();
    let mut csv = String::from("frame,x_mm,y_mm,z_mm\n");
    for (ti, c) in curves.iter().enumerate() {
        let cell = |v: f64| if v.is_finite() { v.to_string() } else { String::new() };
        csv.push_str(&format!("{ti},{},{},{}\n", cell(c[0]), cell(c[1]), cell(c[2])));
    }
    fs::write(ctx.path(&format!("{name}.csv")), csv)?;

    let (w, h, m) = (800u32, 400u32, 40i64);
    let mut img = RgbImage::from_pixel(w, h, Rgb([255, 255, 255]));
    let axis = Rgb([0, 0, 0]);
    draw_line(&mut img, (m, m), (m, h as i64 - m), axis);
    draw_line(&mut img, (m, h as i64 - m), (w as i64 - m, h as i64 - m), axis);
    let top = curves.iter().flatten().copied().filter(|v| v.is_finite()).fold(1e-9, f64::max);
    let colors = [Rgb([220, 40, 40]), Rgb([40, 160, 40]), Rgb([40, 40, 220])];
    let px = |ti: usize| m + ((w as i64 - 2 * m) as f64 * ti as f64 / (t.max(2) - 1) as f64).round() as i64;
    let py = |v: f64| (h as i64 - m) - ((h as i64 - 2 * m) as f64 * v / top).round() as i64;
    for (d, color) in colors.iter().enumerate() {
        for ti in 1..t {
            let (a, b) = (curves[ti - 1][d], curves[ti][d]);
            if a.is_finite() && b.is_finite() {
                draw_line(&mut img, (px(ti - 1), py(a)), (px(ti), py(b)), *color);
            }
        }
    }
    img.save(ctx.path(&format!("{name}.png")))
        .map_err(|e| Error::Format(format!("could not write plot: {e}")))?;
    println!("wrote {name}.png and {name}.csv (peak {top:.1} mm)");
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    let ctx = Context::new(&cli.global)?;
    ctx.log(&format!("start {:?}", cli.command))?;
    match &cli.command {
        Command::Synth { count, frames, fps, binary } => cmd_synth(&ctx, *count, *frames, *fps, *binary)?,
        Command::Occlude {
            inputs,
            span,
            period,
            coverage,
            noise,
            dropout,
        } => cmd_occlude(&ctx, inputs, [*span, *period, *coverage, *noise, *dropout])?,
        Command::Pretrain { data, epochs } => cmd_pretrain(&ctx, data, *epochs)?,
        Command::Refine {
            checkpoint,
            inputs,
            epochs,
            weights,
        } => cmd_refine(&ctx, checkpoint, inputs, *epochs, weights)?,
        Command::Eval { pred, gt, opts, save } => {
            cmd_eval(&ctx, pred, gt, opts, *save)?;
        }
        Command::Ablate {
            checkpoint,
            inputs,
            gts,
            epochs,
            weights,
        } => cmd_ablate(&ctx, checkpoint, inputs, gts, *epochs, weights)?,
        Command::Plot { pred, gt, name } => cmd_plot(&ctx, pred, gt, name)?,
    }
    ctx.log("done")?;
    Ok(())
}

/// Parses `args` (program name first) and runs the command. Returns the
/// process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    match dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ablation_rows_enable_losses_cumulatively() {
        let rows = ablation_rows(&LossWeights::default());
        let names: Vec<_> = rows.iter().map(|r| r.0).collect();
        assert_eq!(names, ["prior", "+mpjp", "+vel", "+lim", "+nmpjp"]);
        assert!(rows[0].1.is_none());
        let last = rows[4].1.unwrap();
        assert_eq!(last, LossWeights::default());
        let vel = rows[2].1.unwrap();
        assert_eq!((vel.mpjp, vel.vel, vel.lim, vel.nmpjp), (1.0, 20.0, 0.0, 0.0));
    }

    #[test]
    fn stems_drop_pair_suffixes() {
        assert_eq!(stem(Path::new("/a/walk.occ.pseq")), "walk");
        assert_eq!(stem(Path::new("walk.gt.pseq")), "walk");
        assert_eq!(stem(Path::new("walk.pseq")), "walk");
    }

    #[test]
    fn usage_errors_exit_with_one() {
        assert_eq!(run(["motion-refine", "nonsense"]), EXIT_USAGE);
        assert_eq!(run(["motion-refine", "eval", "--pred", "x.pseq"]), EXIT_USAGE);
    }

    #[test]
    fn bresenham_hits_both_ends() {
        let mut img = RgbImage::new(10, 10);
        let c = Rgb([1, 2, 3]);
        draw_line(&mut img, (1, 8), (8, 2), c);
        assert_eq!(*img.get_pixel(1, 8), c);
        assert_eq!(*img.get_pixel(8, 2), c);
    }
}
