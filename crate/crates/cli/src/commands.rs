use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::Args;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use skyscan::augment::{build_datasets, synthetic_real_frames, Label, LabeledFrame};
use skyscan::eval::{aggregate, classify, IouMode};
use skyscan::io::{
    read_jsonl, read_kernel, read_mesh, read_points, read_sparse, write_jsonl, write_points,
    Config, DetectionRecord, FrameWindower, LabelRecord,
};
use skyscan::lidar_sim::{directivity_analysis, simulate_frame, Bvh, Pose2D, TriangleMesh};
use skyscan::spconv::{
    run_backbone, scatter_conv, sparse_scatter_conv, submanifold_scatter_conv, BackboneWeights,
    ConvSpec, Engine, ExecMode, KernelTensor, PseudoImage, SparseFeatureMap,
};
use skyscan::tracker::Tracker;
use skyscan::{Box3D, LidarPoint, ScanFrame, Vec3};

pub fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<Config> {
    let mut cfg = match path {
        Some(p) => Config::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => Config::default(),
    };
    if let Some(s) = seed {
        cfg.scan.seed = s;
        cfg.sim.noise_seed = s;
        cfg.augment.seed = s;
        cfg.encoder.seed = s;
    }
    Ok(cfg)
}

/// The seed for tools without a configuration section of their own.
fn base_seed(cfg: &Config) -> u64 {
    cfg.encoder.seed
}

/// Writes to standard output, reporting a closed pipe as an error rather
/// than panicking.
fn emit(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    out.write_all(text.as_bytes())
        .and_then(|_| out.flush())
        .context("writing to standard output")
}

pub fn print_config(cfg: &Config) -> Result<()> {
    emit(&cfg.to_toml_string()?)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).with_context(|| format!("opening {}", path.display()))?,
    ))
}

fn load_bvh(mesh: Option<&Path>) -> Result<Bvh> {
    let mesh = match mesh {
        Some(p) => read_mesh(p)?,
        None => TriangleMesh::quadcopter(),
    };
    Ok(Bvh::build(mesh)?)
}

/// Accepts `100ms`, `0.2s`, `5000us`; a bare number is milliseconds.
fn parse_duration_us(s: &str) -> Result<f64, String> {
    let s = s.trim();
    let (num, scale) = if let Some(v) = s.strip_suffix("us") {
        (v, 1.0)
    } else if let Some(v) = s.strip_suffix("ms") {
        (v, 1e3)
    } else if let Some(v) = s.strip_suffix('s') {
        (v, 1e6)
    } else {
        (s, 1e3)
    };
    let v: f64 = num
        .trim()
        .parse()
        .map_err(|e| format!("invalid duration '{s}': {e}"))?;
    if !(v.is_finite() && v > 0.0) {
        return Err(format!("duration must be positive, got '{s}'"));
    }
    Ok(v * scale)
}

/// Window index of a frame produced on a grid anchored at zero.
fn frame_key(frame: &ScanFrame) -> u64 {
    (frame.start_us / frame.window_us).round() as u64
}

fn read_frames(path: &Path, window_us: f64) -> Result<BTreeMap<u64, ScanFrame>> {
    let stream = read_points(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = BTreeMap::new();
    for f in FrameWindower::with_origin(stream, window_us, 0.0)? {
        let f = f.with_context(|| format!("windowing {}", path.display()))?;
        out.insert(frame_key(&f), f);
    }
    Ok(out)
}

fn read_records(path: &Path) -> Result<Vec<DetectionRecord>> {
    read_jsonl(open(path)?).with_context(|| format!("reading {}", path.display()))
}

fn group(records: &[DetectionRecord]) -> Result<BTreeMap<u64, Vec<Box3D>>> {
    Ok(skyscan::io::group_by_frame(records)?)
}

/// Initial state of one simulated drone: `x,y,z[,vx,vy,vz[,yaw]]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DroneSpec {
    pub position: Vec3,
    pub velocity: Vec3,
    pub yaw: f64,
}

impl FromStr for DroneSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let v: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>().map_err(|e| format!("'{p}': {e}")))
            .collect::<Result<_, _>>()?;
        if !matches!(v.len(), 3 | 6 | 7) {
            return Err(format!("expected 3, 6 or 7 comma-separated numbers, got {}", v.len()));
        }
        let at = |i: usize| v.get(i).copied().unwrap_or(0.0);
        Ok(Self {
            position: Vec3::new(v[0], v[1], v[2]),
            velocity: Vec3::new(at(3), at(4), at(5)),
            yaw: at(6),
        })
    }
}

#[derive(Args)]
pub struct SimulateArgs {
    /// Drone mesh (.off or .stl); a built-in quadcopter when omitted.
    #[arg(long)]
    mesh: Option<PathBuf>,
    /// Drone start state `x,y,z[,vx,vy,vz[,yaw]]` in meters, m/s and radians. Repeatable.
    #[arg(long = "drone", default_value = "20,0,0")]
    drones: Vec<DroneSpec>,
    /// Number of frames to simulate.
    #[arg(long, default_value_t = 10)]
    frames: usize,
    /// Point output; `.las` for LAS, anything else for columnar text.
    #[arg(long)]
    out: PathBuf,
    /// Ground-truth boxes as JSON lines, one per accepted drone and frame.
    #[arg(long)]
    labels: PathBuf,
}

/// Drones are simulated independently and do not occlude each other.
pub fn simulate(cfg: &Config, a: &SimulateArgs) -> Result<()> {
    let bvh = load_bvh(a.mesh.as_deref())?;
    let w = cfg.frames.window_us;
    let mut points: Vec<LidarPoint> = Vec::new();
    let mut labels = Vec::new();
    for i in 0..a.frames {
        let start = i as f64 * w;
        for (j, d) in a.drones.iter().enumerate() {
            let pose = Pose2D::new(d.yaw, d.position + d.velocity * (start * 1e-6));
            let mut opts = cfg.sim.clone();
            opts.noise_seed = opts.noise_seed.wrapping_add((i * a.drones.len() + j) as u64);
            let sf = simulate_frame(&cfg.scan, &bvh, &pose, start, w, &opts)?;
            if sf.accepted {
                points.extend(sf.frame.points);
                let mut r = DetectionRecord::from_box(i as u64, &sf.label);
                r.class = Some(cfg.augment.class.clone());
                labels.push(r);
            }
        }
    }
    points.sort_by(|p, q| p.t_us.total_cmp(&q.t_us));
    write_points(&a.out, &points)?;
    let mut lw = create(&a.labels)?;
    write_jsonl(&mut lw, &labels)?;
    lw.flush()?;
    eprintln!(
        "simulated {} frames: {} points, {} labels",
        a.frames,
        points.len(),
        labels.len()
    );
    Ok(())
}

#[derive(Args)]
pub struct DirectivityArgs {
    /// Drone mesh (.off or .stl); the built-in quadcopter when omitted.
    #[arg(long)]
    mesh: Option<PathBuf>,
    /// Minimum returns for a voxel to be reported.
    #[arg(long)]
    threshold: Option<usize>,
    /// Scan window, e.g. `100ms` or `0.2s`.
    #[arg(long, value_parser = parse_duration_us)]
    window: Option<f64>,
    /// CSV output; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn directivity(cfg: &Config, a: &DirectivityArgs) -> Result<()> {
    let bvh = load_bvh(a.mesh.as_deref())?;
    let d = &cfg.directivity;
    let grid = directivity_analysis(
        &cfg.scan,
        &bvh,
        &d.region,
        a.window.unwrap_or(d.window_us),
        a.threshold.unwrap_or(d.threshold),
    )?;
    let csv = grid.to_csv();
    match &a.out {
        Some(p) => {
            let mut w = create(p)?;
            w.write_all(csv.as_bytes())?;
            w.flush()?;
        }
        None => emit(&csv)?,
    }
    eprintln!(
        "{} of {} voxels in view reach {} returns",
        grid.included().count(),
        grid.cells.len(),
        grid.threshold
    );
    Ok(())
}

#[derive(Args)]
pub struct AugmentArgs {
    /// Drone mesh (.off or .stl); the built-in quadcopter when omitted.
    #[arg(long)]
    mesh: Option<PathBuf>,
    /// Recorded frames to draw backgrounds and drones from. Without it a
    /// simulated stand-in of `frames.source_frames` frames is generated.
    #[arg(long, requires = "labels")]
    points: Option<PathBuf>,
    /// Ground-truth boxes for `--points` as JSON lines.
    #[arg(long, requires = "points")]
    labels: Option<PathBuf>,
    /// Overrides `augment.instances`.
    #[arg(long)]
    instances: Option<usize>,
    /// Overrides `augment.pool_size`.
    #[arg(long)]
    pool_size: Option<usize>,
    /// Overrides `frames.source_frames` for the simulated stand-in.
    #[arg(long)]
    source_frames: Option<usize>,
    /// Receives `sim/`, `euc/` and `manifest.jsonl`.
    #[arg(long)]
    out_dir: PathBuf,
}

fn write_dataset(dir: &Path, frames: &[LabeledFrame]) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut records = Vec::with_capacity(frames.len());
    for (i, f) in frames.iter().enumerate() {
        write_points(&dir.join(format!("{i:06}.txt")), &f.frame.points)?;
        records.push(LabelRecord {
            frame: i as u64,
            start_us: f.frame.start_us,
            window_us: f.frame.window_us,
            labels: f.labels.clone(),
        });
    }
    let mut w = create(&dir.join("labels.jsonl"))?;
    write_jsonl(&mut w, &records)?;
    w.flush()?;
    Ok(())
}

pub fn augment(cfg: &Config, a: &AugmentArgs) -> Result<()> {
    let bvh = load_bvh(a.mesh.as_deref())?;
    let mut plan = cfg.augment.clone();
    plan.instances = a.instances.unwrap_or(plan.instances);
    plan.pool_size = a.pool_size.unwrap_or(plan.pool_size);
    let w = cfg.frames.window_us;
    let real = match (&a.points, &a.labels) {
        (Some(p), Some(l)) => {
            let mut by_frame = group(&read_records(l)?)?;
            read_frames(p, w)?
                .into_iter()
                .map(|(k, frame)| LabeledFrame {
                    frame,
                    labels: by_frame
                        .remove(&k)
                        .unwrap_or_default()
                        .into_iter()
                        .map(|bbox| Label {
                            bbox,
                            class: plan.class.clone(),
                        })
                        .collect(),
                })
                .collect()
        }
        _ => synthetic_real_frames(
            a.source_frames.unwrap_or(cfg.frames.source_frames),
            w,
            &cfg.scan,
            &bvh,
            plan.seed,
        )?,
    };
    let ds = build_datasets(&plan, &real, &cfg.scan, &bvh)?;
    write_dataset(&a.out_dir.join("sim"), &ds.sim)?;
    write_dataset(&a.out_dir.join("euc"), &ds.euc)?;
    let mut mw = create(&a.out_dir.join("manifest.jsonl"))?;
    write_jsonl(&mut mw, &ds.manifest)?;
    mw.flush()?;
    eprintln!(
        "{} source frames -> {} simulated and {} rigid-copy frames",
        real.len(),
        ds.sim.len(),
        ds.euc.len()
    );
    Ok(())
}

#[derive(Args)]
pub struct BenchConvArgs {
    /// Sparse feature map fixture; a random map of `--sites` sites otherwise.
    #[arg(long)]
    fixture: Option<PathBuf>,
    /// Kernel fixture; random weights otherwise.
    #[arg(long)]
    kernel: Option<PathBuf>,
    #[arg(long, default_value_t = 504)]
    height: usize,
    #[arg(long, default_value_t = 504)]
    width: usize,
    #[arg(long, default_value_t = 5124)]
    sites: usize,
    /// Input channels `C`.
    #[arg(long, default_value_t = 64)]
    channels: usize,
    /// Output channels `F`.
    #[arg(long, default_value_t = 64)]
    features: usize,
    #[arg(short, long, default_value_t = 3)]
    k: usize,
    /// Worker threads; 1 runs the sequential path.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Also run the full backbone with every engine.
    #[arg(long)]
    backbone: bool,
    /// Side of the square pseudo-image used with `--backbone`.
    #[arg(long, default_value_t = 64)]
    backbone_size: usize,
    /// Report output; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, u128) {
    let t = Instant::now();
    let v = f();
    (v, t.elapsed().as_nanos())
}

pub fn bench_conv(cfg: &Config, a: &BenchConvArgs) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed(cfg));
    let input = match &a.fixture {
        Some(p) => read_sparse(open(p)?).with_context(|| format!("reading {}", p.display()))?,
        None => SparseFeatureMap::random(a.height, a.width, a.channels, a.sites, &mut rng)?,
    };
    let kernel = match &a.kernel {
        Some(p) => read_kernel(open(p)?).with_context(|| format!("reading {}", p.display()))?,
        None => {
            let scale = (3.0 / (a.k * a.k * input.channels()) as f32).sqrt();
            KernelTensor::random(a.k, input.channels(), a.features, scale, &mut rng)?
        }
    };
    let exec = if a.workers <= 1 {
        ExecMode::Sequential
    } else {
        ExecMode::Parallel { workers: a.workers }
    };
    let spec = ConvSpec::standard(1);
    let dense_in = input.to_dense();
    let (dense, dense_ns) = timed(|| scatter_conv(&dense_in, &kernel, spec, exec));
    let dense = dense?;
    let (sparse, sparse_ns) = timed(|| sparse_scatter_conv(&input, &kernel, spec, exec));
    let sparse = sparse?;
    let (sub, sub_ns) = timed(|| submanifold_scatter_conv(&input, &kernel, exec));
    let sub = sub?;

    let mut r = String::new();
    use std::fmt::Write as _;
    let _ = writeln!(r, "fixture.height={}", input.height());
    let _ = writeln!(r, "fixture.width={}", input.width());
    let _ = writeln!(r, "fixture.channels={}", input.channels());
    let _ = writeln!(r, "fixture.features={}", kernel.out_channels());
    let _ = writeln!(r, "fixture.k={}", kernel.k());
    let _ = writeln!(r, "fixture.sites={}", input.len());
    let _ = writeln!(r, "fixture.density={:.6}", input.density());
    let _ = writeln!(r, "dense.macs={}", dense.macs);
    let _ = writeln!(r, "dense.nanos={dense_ns}");
    let _ = writeln!(r, "sparse.macs={}", sparse.macs);
    let _ = writeln!(r, "sparse.nanos={sparse_ns}");
    let _ = writeln!(r, "submanifold.macs={}", sub.macs);
    let _ = writeln!(r, "submanifold.nanos={sub_ns}");
    let _ = writeln!(r, "submanifold.sites={}", sub.map.len());
    let ratio = if dense.macs == 0 {
        0.0
    } else {
        sparse.macs as f64 / dense.macs as f64
    };
    let _ = writeln!(r, "mac_ratio={ratio:.6}");
    let _ = writeln!(r, "speedup={:.3}", dense_ns as f64 / sparse_ns.max(1) as f64);
    let _ = writeln!(r, "max_abs_diff={:e}", dense.map.max_abs_diff(&sparse.map));

    if a.backbone {
        let bspec = &cfg.backbone;
        let weights = BackboneWeights::random(bspec, base_seed(cfg))?;
        let n = a.backbone_size;
        let sites = ((input.density() * (n * n) as f64).round() as usize).clamp(1, n * n);
        let img = PseudoImage::from_features(
            SparseFeatureMap::random(n, n, bspec.in_channels, sites, &mut rng)?.to_dense(),
        );
        let mut reference = None;
        for engine in Engine::ALL {
            let (out, report) = run_backbone(&img, bspec, &weights, engine, exec)?;
            let _ = writeln!(r);
            r.push_str(&report.to_kv_string());
            match engine {
                Engine::Dense => reference = Some(out),
                Engine::Sparse => {
                    if let Some(d) = &reference {
                        let _ = writeln!(r, "max_abs_diff_vs_dense={:e}", d.max_abs_diff(&out));
                    }
                }
                _ => {}
            }
        }
    }

    match &a.out {
        Some(p) => {
            let mut w = create(p)?;
            w.write_all(r.as_bytes())?;
            w.flush()?;
        }
        None => emit(&r)?,
    }
    Ok(())
}

#[derive(Args)]
pub struct DetectEvalArgs {
    /// Detections as JSON lines.
    #[arg(long)]
    detections: PathBuf,
    /// Ground truth as JSON lines.
    #[arg(long)]
    gts: PathBuf,
    /// Overrides `eval.iou_threshold`.
    #[arg(long)]
    iou: Option<f64>,
    /// Overrides `eval.mode`.
    #[arg(long, value_parser = ["3d", "bev"])]
    mode: Option<String>,
    /// Detections scoring below this are discarded; unscored ones are kept.
    #[arg(long)]
    min_score: Option<f64>,
    /// Also write the metrics as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

pub fn detect_eval(cfg: &Config, a: &DetectEvalArgs) -> Result<()> {
    let thr = a.iou.unwrap_or(cfg.eval.iou_threshold);
    if !(0.0..=1.0).contains(&thr) {
        bail!("IoU threshold must lie in [0, 1], got {thr}");
    }
    let mode = match a.mode.as_deref() {
        Some("bev") => IouMode::Bev,
        Some(_) => IouMode::ThreeD,
        None => cfg.eval.mode,
    };
    let mut dets = read_records(&a.detections)?;
    if let Some(min) = a.min_score {
        dets.retain(|d| d.score.is_none_or(|s| s >= min));
    }
    let dets = group(&dets)?;
    let gts = group(&read_records(&a.gts)?)?;
    let keys: BTreeSet<u64> = dets.keys().chain(gts.keys()).copied().collect();
    let empty = Vec::new();
    let counts = keys
        .iter()
        .map(|k| {
            let d = dets.get(k).unwrap_or(&empty);
            let g = gts.get(k).unwrap_or(&empty);
            classify(d, g, thr, mode).map(|m| m.counts)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let outcome = aggregate(&counts)?;
    emit(&outcome.to_text())?;
    if let Some(p) = &a.json {
        let mut w = create(p)?;
        serde_json::to_writer_pretty(&mut w, &outcome)?;
        writeln!(w)?;
        w.flush()?;
    }
    Ok(())
}

#[derive(Args)]
pub struct TrackArgs {
    /// Recorded or simulated point stream.
    #[arg(long)]
    points: PathBuf,
    /// Detections as JSON lines, keyed by window index.
    #[arg(long)]
    detections: PathBuf,
    /// Track log output (JSON lines).
    #[arg(long)]
    tracks: PathBuf,
    /// Separation alert output (JSON lines).
    #[arg(long)]
    alerts: PathBuf,
    /// Overrides `tracker.separation`, meters.
    #[arg(long)]
    separation: Option<f64>,
    /// Overrides `tracker.gate`, meters.
    #[arg(long)]
    gate: Option<f64>,
}

/// Windows are anchored at time zero so that window `k` lines up with
/// detection records of frame `k`; windows without points or detections in
/// between are replayed as empty frames.
pub fn track(cfg: &Config, a: &TrackArgs) -> Result<()> {
    let mut tc = cfg.tracker.clone();
    tc.separation = a.separation.unwrap_or(tc.separation);
    tc.gate = a.gate.unwrap_or(tc.gate);
    let w = cfg.frames.window_us;
    let frames = read_frames(&a.points, w)?;
    let dets = group(&read_records(&a.detections)?)?;
    let keys: BTreeSet<u64> = frames.keys().chain(dets.keys()).copied().collect();
    let mut tracker = Tracker::new(tc);
    let mut records = Vec::new();
    let mut alerts = Vec::new();
    let mut first_alert = None;
    let empty = Vec::new();
    if let (Some(&lo), Some(&hi)) = (keys.first(), keys.last()) {
        for k in lo..=hi {
            let frame = frames
                .get(&k)
                .cloned()
                .unwrap_or_else(|| ScanFrame::empty(k as f64 * w, w));
            let out = tracker.step(&frame, dets.get(&k).unwrap_or(&empty))?;
            if !out.alerts.is_empty() && first_alert.is_none() {
                first_alert = Some(k);
            }
            records.extend(out.records);
            alerts.extend(out.alerts);
        }
    }
    let mut tw = create(&a.tracks)?;
    write_jsonl(&mut tw, &records)?;
    tw.flush()?;
    let mut aw = create(&a.alerts)?;
    write_jsonl(&mut aw, &alerts)?;
    aw.flush()?;
    match first_alert {
        Some(k) => eprintln!("{} track rows, {} alerts, first at frame {k}", records.len(), alerts.len()),
        None => eprintln!("{} track rows, no alerts", records.len()),
    }
    Ok(())
}
