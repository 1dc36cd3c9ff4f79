//! Subcommand implementations shared by the binary and by replays.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use dyn4d_core::aggregator::gradcheck::gradcheck_all;
use dyn4d_core::metrics::{evaluate_depth, pointcloud_metrics, rpe, sample_frames, MetricsReport, Trajectory};
use dyn4d_core::scene_sim::dump::{write_header, write_observation, write_scene};
use dyn4d_core::scene_sim::{generate_scene, render_correspondences};
use log::info;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::formats::{pfm, ply, tum};
use crate::manifest::{digest, unix_now, RunManifest};
use crate::sweep::{rows_csv, run_sweep, summary_csv};

/// Seconds between simulated frames in trajectory files.
pub const FRAME_INTERVAL: f64 = 1.0 / 30.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "subcommand", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Invocation {
    Simulate,
    PoseSweep,
    EvalTraj { pred: PathBuf, gt: PathBuf },
    EvalDepth { pred_dir: PathBuf, gt_dir: PathBuf },
    EvalPoints { pred: PathBuf, gt: PathBuf },
    Gradcheck,
}

impl Invocation {
    pub fn name(&self) -> &'static str {
        match self {
            Invocation::Simulate => "simulate",
            Invocation::PoseSweep => "pose-sweep",
            Invocation::EvalTraj { .. } => "eval-traj",
            Invocation::EvalDepth { .. } => "eval-depth",
            Invocation::EvalPoints { .. } => "eval-points",
            Invocation::Gradcheck => "gradcheck",
        }
    }
}

#[derive(Debug, Default)]
pub struct RunOutput {
    /// File names inside the output directory, in write order.
    pub outputs: Vec<String>,
    pub inputs: Vec<PathBuf>,
    pub report: String,
    /// Set when the run completed but a check it performs failed.
    pub failure: Option<String>,
}

struct Outputs<'a> {
    dir: &'a Path,
    names: Vec<String>,
}

impl Outputs<'_> {
    fn write(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> Result<()> {
        let p = self.dir.join(name);
        fs::write(&p, bytes).map_err(CliError::io(&p))?;
        self.names.push(name.to_string());
        Ok(())
    }
}

fn data_err(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

fn simulate(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<String> {
    let scene = generate_scene(&cfg.scene).map_err(|e| CliError::Config(e.to_string()))?;
    let mut buf = Vec::new();
    write_scene(&mut buf, &scene).expect("write to Vec");
    out.write("scene.txt", &buf)?;
    let mut buf = Vec::new();
    write_header(&mut buf).expect("write to Vec");
    let mut total = 0;
    for f in 0..scene.n_frames().saturating_sub(1) {
        let obs = render_correspondences(&scene, f, f + 1, cfg.scene.noise_px, cfg.seed)
            .map_err(|e| CliError::Config(e.to_string()))?;
        total += obs.correspondences.len();
        write_observation(&mut buf, &obs).expect("write to Vec");
    }
    out.write("correspondences.txt", &buf)?;
    let poses = scene.camera_to_world();
    let traj = Trajectory::new((0..poses.len()).map(|f| f as f64 * FRAME_INTERVAL).collect(), poses)
        .expect("frame times increase");
    out.write("trajectory_gt.txt", tum::format(&traj))?;
    Ok(format!(
        "simulated {} frames, {} static and {} dynamic points, {total} correspondences\n",
        scene.n_frames(),
        scene.static_points.len(),
        scene.dynamic_tracks.len()
    ))
}

fn pose_sweep(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<String> {
    let rows = run_sweep(&cfg.scene, &cfg.ransac, &cfg.sweep, cfg.seed)?;
    out.write("sweep.csv", rows_csv(&rows))?;
    let summary = summary_csv(&rows);
    out.write("summary.csv", &summary)?;
    Ok(summary)
}

fn eval_traj(cfg: &ExperimentConfig, pred: &Path, gt: &Path, out: &mut Outputs) -> Result<String> {
    let p = tum::read(pred)?;
    let g = tum::read(gt)?;
    let (mut p, mut g) = dyn4d_core::metrics::associate(&p, &g, cfg.trajectory.tolerance).map_err(data_err)?;
    let n_matched = p.len();
    if cfg.trajectory.sample10 {
        let idx = sample_frames(n_matched, 10);
        p = p.subset(&idx);
        g = g.subset(&idx);
    }
    let ate = dyn4d_core::metrics::ate(&p, &g).map_err(data_err)?;
    let (rt, rr) = rpe(&p, &g, cfg.trajectory.rpe_delta).map_err(data_err)?;
    let mut r = MetricsReport::default();
    r.push("ate", ate);
    r.push("rpe_trans", rt);
    r.push("rpe_rot", rr);
    r.push("n_matched", n_matched as f64);
    r.push("n_evaluated", p.len() as f64);
    r.meta("alignment", "sim3_umeyama");
    r.meta("units", "ate and rpe_trans in trajectory units, rpe_rot in degrees");
    r.meta("rpe_delta", cfg.trajectory.rpe_delta.to_string());
    let csv = r.to_csv();
    out.write("traj_metrics.csv", &csv)?;
    Ok(csv)
}

fn pfm_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(CliError::io(dir))?
        .map(|e| e.map(|e| e.path()).map_err(CliError::io(dir)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("pfm")))
        .collect();
    v.sort();
    Ok(v)
}

fn eval_depth(
    cfg: &ExperimentConfig,
    pred_dir: &Path,
    gt_dir: &Path,
    out: &mut Outputs,
    inputs: &mut Vec<PathBuf>,
) -> Result<String> {
    let pf = pfm_files(pred_dir)?;
    let gf = pfm_files(gt_dir)?;
    let names = |v: &[PathBuf]| v.iter().map(|p| p.file_name().unwrap_or_default().to_owned()).collect::<Vec<_>>();
    if names(&pf) != names(&gf) {
        return Err(CliError::Data(format!(
            "{} and {} hold different .pfm file lists",
            pred_dir.display(),
            gt_dir.display()
        )));
    }
    if pf.is_empty() {
        return Err(CliError::Data(format!("no .pfm files in {}", pred_dir.display())));
    }
    let preds = pf.iter().map(|p| pfm::read(p)).collect::<Result<Vec<_>>>()?;
    let gts = gf.iter().map(|p| pfm::read(p)).collect::<Result<Vec<_>>>()?;
    inputs.extend(pf.iter().cloned());
    inputs.extend(gf.iter().cloned());
    let r = evaluate_depth(&preds, &gts, None, &cfg.depth).map_err(data_err)?;
    let mut csv = String::from("frame,abs_rel,delta_acc,n_valid,scale,shift\n");
    for (i, ((ar, da, n), (s, b))) in r.per_frame.iter().zip(&r.alignment).enumerate() {
        let name = pf[i].file_name().unwrap_or_default().to_string_lossy();
        writeln!(csv, "{name},{ar},{da},{n},{s},{b}").expect("write to String");
    }
    writeln!(csv, "all,{},{},{},,", r.abs_rel, r.delta_acc, r.n_valid).expect("write to String");
    out.write("depth_metrics.csv", &csv)?;
    Ok(format!(
        "alignment {}: abs_rel {} delta<{} {} over {} pixels\n",
        cfg.depth.alignment.as_str(),
        r.abs_rel,
        cfg.depth.threshold,
        r.delta_acc,
        r.n_valid
    ))
}

fn eval_points(cfg: &ExperimentConfig, pred: &Path, gt: &Path, out: &mut Outputs) -> Result<String> {
    let p = ply::read(pred)?;
    let g = ply::read(gt)?;
    let m = pointcloud_metrics(&p, &g, cfg.points.method).map_err(data_err)?;
    let mut r = MetricsReport::default();
    r.push("acc_mean", m.acc_mean);
    r.push("acc_median", m.acc_median);
    r.push("comp_mean", m.comp_mean);
    r.push("comp_median", m.comp_median);
    r.push("overall_mean", m.overall_mean);
    r.push("overall_median", m.overall_median);
    let csv = r.to_csv();
    out.write("points_metrics.csv", &csv)?;
    Ok(csv)
}

fn gradcheck(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<(String, Option<String>)> {
    let rep = gradcheck_all(&cfg.gradcheck).map_err(|e| CliError::Config(e.to_string()))?;
    let mut csv = String::from("group,n_checked,max_rel_err,max_abs_err,passed\n");
    for g in &rep.groups {
        writeln!(csv, "{},{},{},{},{}", g.name, g.n_checked, g.max_rel_err, g.max_abs_err, u8::from(g.passed))
            .expect("write to String");
    }
    out.write("gradcheck.csv", &csv)?;
    let failing = rep.failing();
    let failure = (!failing.is_empty()).then(|| format!("gradient check failed for {}", failing.join(", ")));
    Ok((
        format!(
            "{} groups over {} configurations, max relative error {:e}\n",
            rep.groups.len(),
            rep.n_configs,
            rep.max_rel_err()
        ),
        failure,
    ))
}

/// Runs `inv` into `out_dir` without writing a manifest.
pub fn execute(inv: &Invocation, cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunOutput> {
    cfg.validate()?;
    fs::create_dir_all(out_dir).map_err(CliError::io(out_dir))?;
    let mut out = Outputs {
        dir: out_dir,
        names: Vec::new(),
    };
    let mut inputs = Vec::new();
    let mut failure = None;
    let report = match inv {
        Invocation::Simulate => simulate(cfg, &mut out)?,
        Invocation::PoseSweep => pose_sweep(cfg, &mut out)?,
        Invocation::EvalTraj { pred, gt } => {
            inputs.extend([pred.clone(), gt.clone()]);
            eval_traj(cfg, pred, gt, &mut out)?
        }
        Invocation::EvalDepth { pred_dir, gt_dir } => eval_depth(cfg, pred_dir, gt_dir, &mut out, &mut inputs)?,
        Invocation::EvalPoints { pred, gt } => {
            inputs.extend([pred.clone(), gt.clone()]);
            eval_points(cfg, pred, gt, &mut out)?
        }
        Invocation::Gradcheck => {
            let (r, f) = gradcheck(cfg, &mut out)?;
            failure = f;
            r
        }
    };
    Ok(RunOutput {
        outputs: out.names,
        inputs,
        report,
        failure,
    })
}

/// Runs `inv` and records a manifest next to its outputs.
pub fn run(inv: &Invocation, cfg: &ExperimentConfig, out_dir: &Path) -> Result<(RunManifest, RunOutput)> {
    let started = unix_now();
    info!("{} -> {}", inv.name(), out_dir.display());
    let result = execute(inv, cfg, out_dir)?;
    let outputs = result
        .outputs
        .iter()
        .map(|n| digest(&out_dir.join(n), n.clone()))
        .collect::<Result<Vec<_>>>()?;
    let inputs = result
        .inputs
        .iter()
        .map(|p| digest(p, p.to_string_lossy().into_owned()))
        .collect::<Result<Vec<_>>>()?;
    let manifest = RunManifest {
        tool: "dyn4d".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed: cfg.seed,
        started_unix: started,
        finished_unix: unix_now(),
        invocation: inv.clone(),
        outputs,
        inputs,
        config: cfg.clone(),
    };
    manifest.write(out_dir)?;
    Ok((manifest, result))
}

#[derive(Debug)]
pub struct Replay {
    pub checked: usize,
    pub mismatched: Vec<String>,
}

/// Re-executes a recorded run into `out_dir` and compares output digests.
pub fn rerun(manifest_path: &Path, out_dir: &Path) -> Result<Replay> {
    let m = RunManifest::load(manifest_path)?;
    let original = manifest_path.parent().unwrap_or(Path::new("."));
    if fs::canonicalize(original).ok() == fs::canonicalize(out_dir).ok() {
        return Err(CliError::Usage("replay output directory must differ from the recorded one".into()));
    }
    m.verify_inputs()?;
    execute(&m.invocation, &m.config, out_dir)?;
    Ok(Replay {
        checked: m.outputs.len(),
        mismatched: m.mismatched_outputs(out_dir)?,
    })
}
