use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use posetrack_core::model::{load_sequence, sequence_to_json, write_atomic, Role, VideoSequence};
use serde::Serialize;

/// Loaded sequences with the file name each came from.
pub struct Inputs {
    pub is_dir: bool,
    pub items: Vec<(String, VideoSequence)>,
}

fn is_manifest(p: &Path) -> bool {
    p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.ends_with(".manifest.json"))
}

/// A single sequence file, or every `*.json` in a directory (sorted by
/// name, manifests skipped).
pub fn load_inputs(path: &Path, role: Role, joint_map: Option<&[usize]>) -> Result<Inputs> {
    if path.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(path)
            .with_context(|| format!("reading directory {}", path.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json") && !is_manifest(p))
            .collect();
        files.sort();
        if files.is_empty() {
            bail!("no .json sequence files in {}", path.display());
        }
        let items = files
            .iter()
            .map(|f| {
                let name = f.file_name().unwrap().to_string_lossy().into_owned();
                load_sequence(f, role, joint_map).map(|s| (name, s))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Inputs { is_dir: true, items })
    } else {
        let seq = load_sequence(path, role, joint_map)?;
        let name = path.file_name().map_or("sequence.json".into(), |n| n.to_string_lossy().into_owned());
        Ok(Inputs { is_dir: false, items: vec![(name, seq)] })
    }
}

/// Pair predictions with ground truth. Two single files pair directly (the
/// evaluator then checks video ids); otherwise pairs are matched by video id.
pub fn pair_by_video<'a>(gt: &'a Inputs, pred: &'a Inputs) -> Result<Vec<(&'a VideoSequence, &'a VideoSequence)>> {
    if !gt.is_dir && !pred.is_dir {
        return Ok(vec![(&gt.items[0].1, &pred.items[0].1)]);
    }
    let mut pairs = Vec::with_capacity(gt.items.len());
    for (_, g) in &gt.items {
        let p = pred
            .items
            .iter()
            .find(|(_, p)| p.video_id == g.video_id)
            .with_context(|| format!("no prediction for video `{}`", g.video_id))?;
        pairs.push((g, &p.1));
    }
    for (_, p) in &pred.items {
        if !gt.items.iter().any(|(_, g)| g.video_id == p.video_id) {
            bail!("prediction for video `{}` has no ground truth", p.video_id);
        }
    }
    Ok(pairs)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

pub fn write_sequence(path: &Path, seq: &VideoSequence) -> Result<()> {
    let mut text = sequence_to_json(seq);
    text.push('\n');
    write_text(path, &text)
}

/// Write outputs mirroring the input layout: one file, or one file per
/// input name inside `out`.
pub fn write_outputs(out: &Path, is_dir: bool, items: &[(String, VideoSequence)]) -> Result<Vec<PathBuf>> {
    if is_dir {
        std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        items
            .iter()
            .map(|(name, s)| {
                let p = out.join(name);
                write_sequence(&p, s).map(|_| p)
            })
            .collect()
    } else {
        write_sequence(out, &items[0].1)?;
        Ok(vec![out.to_path_buf()])
    }
}

#[derive(Serialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

/// Record of one command invocation, written next to its output.
#[derive(Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: &'static str,
    pub parallel: bool,
    pub config: serde_json::Value,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub timings: Vec<StageTiming>,
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value) -> Self {
        RunManifest {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION"),
            parallel: cfg!(feature = "parallel"),
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
            timings: Vec::new(),
        }
    }

    /// Run `f`, recording its wall time under `stage`.
    pub fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        let seconds = start.elapsed().as_secs_f64();
        log::info!("{stage}: {seconds:.3}s");
        self.timings.push(StageTiming { stage: stage.into(), seconds });
        out
    }

    /// `<output>.manifest.json`, next to `output`.
    pub fn write_for(&self, output: &Path) -> Result<()> {
        let mut name = output.file_name().map_or_else(|| "out".into(), |n| n.to_os_string());
        name.push(".manifest.json");
        write_json(&output.with_file_name(name), self)
    }
}
