use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use posetrack_core::linker::{track_many, Algorithm, LinkerConfig};
use posetrack_core::metrics::{evaluate_set, EvalReport};
use posetrack_core::model::{filter_detections, Role, VideoSequence};
use posetrack_core::oracles::{apply_oracle, OracleMode};
use posetrack_core::similarity::{CriterionKind, ExternalScores, SimilarityCriterion};
use posetrack_core::synth::{generate_suite, Layout, Motion, ScenarioConfig};
use posetrack_core::tube::{generate_anchors, AnchorGrid};
use posetrack_core::Execution;
use serde::Serialize;
use serde_json::json;

use crate::io::{load_inputs, pair_by_video, write_json, write_outputs, write_text, RunManifest};
use crate::{
    AlgoArg, AnchorArgs, BenchArgs, CostArg, EvalArgs, LayoutArg, LinkArgs, MotionArg, OracleArg, OracleArgs,
    SweepArgs, SynthArgs, TrackArgs,
};

pub fn configure_threads(threads: Option<usize>) -> Result<()> {
    let Some(n) = threads else { return Ok(()) };
    if n == 0 {
        bail!("thread count must be at least 1");
    }
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring the thread pool")?;
    #[cfg(not(feature = "parallel"))]
    log::warn!("built without the parallel feature; ignoring thread count {n}");
    Ok(())
}

fn algorithm(a: AlgoArg) -> Algorithm {
    match a {
        AlgoArg::Hungarian => Algorithm::Hungarian,
        AlgoArg::Greedy => Algorithm::Greedy,
        AlgoArg::Random => Algorithm::Random,
    }
}

fn criterion(cost: CostArg, link: &LinkArgs, external: Option<&Arc<ExternalScores>>) -> Result<SimilarityCriterion> {
    Ok(match cost {
        CostArg::Iou => SimilarityCriterion::new(CriterionKind::BboxIou),
        CostArg::Pckh => SimilarityCriterion::new(CriterionKind::PosePckh),
        CostArg::Feat => SimilarityCriterion::new(CriterionKind::FeatureCosine),
        CostArg::Combined => SimilarityCriterion::combined([link.weights[0], link.weights[1], link.weights[2]]),
        CostArg::External => {
            let scores = external.context("--cost external needs --scores PATH")?;
            SimilarityCriterion {
                kind: CriterionKind::External,
                external: Some(Arc::clone(scores)),
                ..Default::default()
            }
        }
    })
}

fn load_external(link: &LinkArgs) -> Result<Option<Arc<ExternalScores>>> {
    link.scores.as_ref().map(|p| ExternalScores::load(p).map(Arc::new)).transpose().map_err(Into::into)
}

fn linker_config(
    link: &LinkArgs,
    cost: CostArg,
    algo: AlgoArg,
    lookback: usize,
    external: Option<&Arc<ExternalScores>>,
    exec: Execution,
) -> Result<LinkerConfig> {
    let cfg = LinkerConfig {
        algorithm: algorithm(algo),
        criterion: criterion(cost, link, external)?,
        min_similarity: link.min_sim,
        lookback,
        random_max_id: link.random_max_id,
        rng_seed: link.seed,
        exec,
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn track(args: TrackArgs) -> Result<()> {
    let link = &args.link;
    let mut manifest = RunManifest::new("track", json!({ "link": link, "joint_map": args.joint_map }));
    let external = load_external(link)?;
    let cfg = linker_config(link, link.cost, link.algo, link.lookback, external.as_ref(), Execution::default())?;

    let inputs = manifest.time("load", || load_inputs(&args.pred, Role::Prediction, args.joint_map.as_deref()))?;
    manifest.inputs.push(args.pred.clone());
    let filtered: Vec<VideoSequence> =
        inputs.items.iter().map(|(_, s)| filter_detections(s, link.det_thresh, link.kp_thresh)).collect();
    let tracked = manifest.time("track", || track_many(&filtered, &cfg))?;
    for ((_, s), (_, stats)) in inputs.items.iter().zip(&tracked) {
        log::info!("{}: {} links, {} tracks started", s.video_id, stats.links, stats.new_tracks);
    }
    let items: Vec<(String, VideoSequence)> =
        inputs.items.iter().zip(tracked).map(|((name, _), (s, _))| (name.clone(), s)).collect();
    manifest.outputs = manifest.time("write", || write_outputs(&args.out, inputs.is_dir, &items))?;
    manifest.write_for(&args.out)
}

fn fmt_cell(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:.1}"))
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let mut manifest = RunManifest::new("eval", json!({ "alpha": args.alpha }));
    let gt = manifest.time("load", || load_inputs(&args.gt, Role::GroundTruth, None))?;
    let pred = load_inputs(&args.pred, Role::Prediction, None)?;
    manifest.inputs = vec![args.gt.clone(), args.pred.clone()];
    let pairs = pair_by_video(&gt, &pred)?;
    let report = manifest.time("evaluate", || evaluate_set(&pairs, args.alpha, Execution::default()))?;

    write_json(&args.report, &report)?;
    manifest.outputs.push(args.report.clone());
    if let Some(csv_path) = &args.csv {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(EvalReport::table_header())?;
        w.write_record(report.table_row().into_iter().map(fmt_cell))?;
        write_text(csv_path, &String::from_utf8(w.into_inner()?)?)?;
        manifest.outputs.push(csv_path.clone());
    }
    println!("{}", report.summary_line());
    manifest.write_for(&args.report)
}

#[derive(Debug, Clone, Serialize)]
struct SweepPoint {
    det_thresh: f64,
    algo: AlgoArg,
    cost: CostArg,
    lookback: usize,
}

pub fn sweep(args: SweepArgs) -> Result<()> {
    let link = &args.link;
    fn or<T: Clone>(v: &[T], d: T) -> Vec<T> {
        if v.is_empty() {
            vec![d]
        } else {
            v.to_vec()
        }
    }
    let thresholds = or(&args.thresholds, link.det_thresh);
    let algos = or(&args.algos, link.algo);
    let costs = or(&args.costs, link.cost);
    let lookbacks = or(&args.lookbacks, link.lookback);
    let mut points = Vec::new();
    for &det_thresh in &thresholds {
        for &algo in &algos {
            for &cost in &costs {
                for &lookback in &lookbacks {
                    points.push(SweepPoint { det_thresh, algo, cost, lookback });
                }
            }
        }
    }
    let mut manifest = RunManifest::new("sweep", json!({ "link": link, "alpha": args.alpha, "points": points }));
    let external = load_external(link)?;
    let gt = manifest.time("load", || load_inputs(&args.gt, Role::GroundTruth, None))?;
    let pred = load_inputs(&args.pred, Role::Prediction, None)?;
    manifest.inputs = vec![args.gt.clone(), args.pred.clone()];
    let pairs = pair_by_video(&gt, &pred)?;

    // configurations fan out; each one runs its videos sequentially
    let rows = manifest.time("sweep", || {
        Execution::default().try_map(&points, |pt| -> Result<(f64, EvalReport)> {
            let cfg = linker_config(link, pt.cost, pt.algo, pt.lookback, external.as_ref(), Execution::Sequential)?;
            let filtered: Vec<VideoSequence> =
                pairs.iter().map(|(_, p)| filter_detections(p, pt.det_thresh, link.kp_thresh)).collect();
            let tracked = track_many(&filtered, &cfg)?;
            let matched: f64 = tracked.iter().map(|(_, s)| s.matched_cost).sum();
            let eval_pairs: Vec<(&VideoSequence, &VideoSequence)> =
                pairs.iter().map(|(g, _)| *g).zip(tracked.iter().map(|(s, _)| s)).collect();
            Ok((matched, evaluate_set(&eval_pairs, args.alpha, Execution::Sequential)?))
        })
    })?;

    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> =
        ["det_thresh", "kp_thresh", "algo", "cost", "lookback", "matched_cost"].map(String::from).to_vec();
    header.extend(EvalReport::table_header());
    w.write_record(&header)?;
    for (pt, (matched, report)) in points.iter().zip(&rows) {
        let mut rec = vec![
            pt.det_thresh.to_string(),
            link.kp_thresh.to_string(),
            serde_json::to_value(pt.algo)?.as_str().unwrap_or_default().to_string(),
            serde_json::to_value(pt.cost)?.as_str().unwrap_or_default().to_string(),
            pt.lookback.to_string(),
            format!("{matched:.6}"),
        ];
        rec.extend(report.table_row().into_iter().map(fmt_cell));
        w.write_record(&rec)?;
        println!("det {:.2} {} {} K={} -> {}", pt.det_thresh, rec[2], rec[3], pt.lookback, report.summary_line());
    }
    write_text(&args.out, &String::from_utf8(w.into_inner()?)?)?;
    manifest.outputs.push(args.out.clone());
    manifest.write_for(&args.out)
}

pub fn oracle(args: OracleArgs) -> Result<()> {
    let mode = match args.mode {
        OracleArg::Assoc => OracleMode::PerfectAssociation,
        OracleArg::Kpts => OracleMode::PerfectKeypoints,
        OracleArg::Both => OracleMode::Both,
        OracleArg::BothAssocFirst => OracleMode::BothAssociationFirst,
    };
    let mut manifest = RunManifest::new("oracle", json!({ "mode": mode, "alpha": args.alpha }));
    let gt = load_inputs(&args.gt, Role::GroundTruth, None)?;
    let pred = load_inputs(&args.pred, Role::Prediction, None)?;
    manifest.inputs = vec![args.gt.clone(), args.pred.clone()];
    let pairs = pair_by_video(&gt, &pred)?;
    let items = manifest.time("oracle", || {
        pairs
            .iter()
            .map(|(g, p)| {
                let name = pred.items.iter().find(|(_, s)| std::ptr::eq(s, *p)).map(|(n, _)| n.clone());
                apply_oracle(mode, g, p, args.alpha).map(|s| (name.unwrap_or_default(), s))
            })
            .collect::<Result<Vec<_>, _>>()
    })?;
    manifest.outputs = write_outputs(&args.out, pred.is_dir, &items)?;
    manifest.write_for(&args.out)
}

fn scenario(args: &SynthArgs) -> Result<ScenarioConfig> {
    let mut cfg = match &args.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing scenario {}", p.display()))?
        }
        None if args.noiseless => ScenarioConfig::noiseless(0),
        None => ScenarioConfig::default(),
    };
    if args.config.is_some() && args.noiseless {
        cfg = ScenarioConfig { seed: cfg.seed, frames: cfg.frames, actors: cfg.actors, ..ScenarioConfig::noiseless(0) };
    }
    macro_rules! set {
        ($flag:expr, $field:expr) => {
            if let Some(v) = $flag {
                $field = v;
            }
        };
    }
    set!(args.seed, cfg.seed);
    set!(args.frames, cfg.frames);
    set!(args.actors, cfg.actors);
    set!(args.width, cfg.image_width);
    set!(args.height, cfg.image_height);
    set!(args.occlusion, cfg.occlusion_probability);
    set!(args.kp_jitter, cfg.noise.keypoint_jitter);
    set!(args.box_jitter, cfg.noise.box_jitter);
    set!(args.miss_prob, cfg.noise.miss_probability);
    set!(args.fp_rate, cfg.noise.false_positive_rate);
    set!(args.hard_fraction, cfg.noise.hard_fraction);
    set!(args.label_every, cfg.label_every);
    if let Some(m) = args.motion {
        cfg.motion = match m {
            MotionArg::Linear => Motion::Linear,
            MotionArg::Sinusoidal => Motion::Sinusoidal,
        };
    }
    if let Some(l) = args.layout {
        cfg.layout = match l {
            LayoutArg::Free => Layout::Free,
            LayoutArg::Columns => Layout::Columns,
        };
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn synth(args: SynthArgs) -> Result<()> {
    let cfg = scenario(&args)?;
    let mut manifest = RunManifest::new("synth", json!({ "scenario": cfg, "videos": args.videos }));
    let suite =
        manifest.time("generate", || generate_suite(&cfg, cfg.seed, args.videos as usize, Execution::default()))?;
    for (gt, pred) in &suite {
        for (sub, seq) in [("gt", gt), ("pred", pred)] {
            let path = args.out.join(sub).join(format!("{}.json", seq.video_id));
            crate::io::write_sequence(&path, seq)?;
            manifest.outputs.push(path);
        }
    }
    println!("wrote {} video pair(s) to {}", suite.len(), args.out.display());
    manifest.write_for(&args.out)
}

#[derive(Serialize)]
struct BenchRow {
    frames: usize,
    detections: usize,
    median_seconds: f64,
    ratio_to_previous: Option<f64>,
}

fn r_squared(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    if sxx == 0.0 || syy == 0.0 {
        return 1.0;
    }
    sxy * sxy / (sxx * syy)
}

pub fn bench(args: BenchArgs) -> Result<()> {
    if args.repeats == 0 {
        bail!("--repeats must be at least 1");
    }
    let cfg = LinkerConfig::default();
    let mut rows: Vec<BenchRow> = Vec::new();
    for &frames in &args.frames {
        let scenario = ScenarioConfig { seed: args.seed, frames, actors: args.actors, ..Default::default() };
        let (_, pred) = posetrack_core::synth::generate_pair(&scenario)?;
        track_many(std::slice::from_ref(&pred), &cfg)?; // warm-up
        let mut times: Vec<f64> = (0..args.repeats)
            .map(|_| {
                let start = Instant::now();
                let out = posetrack_core::track_video(&pred, &cfg);
                let t = start.elapsed().as_secs_f64();
                out.map(|_| t)
            })
            .collect::<Result<_, _>>()?;
        times.sort_by(f64::total_cmp);
        let median = times[times.len() / 2];
        let ratio = rows.last().map(|r| median / r.median_seconds);
        rows.push(BenchRow {
            frames,
            detections: pred.detection_count(),
            median_seconds: median,
            ratio_to_previous: ratio,
        });
    }
    println!("{:>8} {:>11} {:>12} {:>10} {:>8}", "frames", "detections", "median_ms", "us/frame", "ratio");
    for r in &rows {
        println!(
            "{:>8} {:>11} {:>12.3} {:>10.2} {:>8}",
            r.frames,
            r.detections,
            r.median_seconds * 1e3,
            r.median_seconds * 1e6 / r.frames.max(1) as f64,
            r.ratio_to_previous.map_or("-".into(), |x| format!("{x:.2}"))
        );
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.frames as f64).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.median_seconds).collect();
    let r2 = if rows.len() >= 2 { Some(r_squared(&xs, &ys)) } else { None };
    if let Some(r2) = r2 {
        println!("linear fit R^2 = {r2:.4}");
    }
    if let Some(out) = &args.out {
        let mut manifest = RunManifest::new(
            "bench",
            json!({ "frames": args.frames, "actors": args.actors, "repeats": args.repeats, "seed": args.seed }),
        );
        write_json(out, &json!({ "rows": rows, "r_squared": r2 }))?;
        manifest.outputs.push(out.clone());
        manifest.write_for(out)?;
    }
    Ok(())
}

pub fn anchors(args: AnchorArgs) -> Result<()> {
    let grid = AnchorGrid { stride: args.stride, ..AnchorGrid::default() };
    let anchors = generate_anchors(&grid, args.width, args.height, args.frames)?;
    println!(
        "{} anchors ({} per position, stride {}, {} frames per tube)",
        anchors.len(),
        grid.anchors_per_position(),
        grid.stride,
        args.frames
    );
    if let Some(out) = &args.out {
        let boxes: Vec<[f64; 4]> = anchors.iter().map(|a| a.base.to_array()).collect();
        let manifest = RunManifest::new(
            "anchors",
            json!({ "grid": grid, "width": args.width, "height": args.height, "frames": args.frames }),
        );
        write_json(out, &json!({ "frames": args.frames, "boxes": boxes }))?;
        manifest.write_for(out)?;
    }
    Ok(())
}
