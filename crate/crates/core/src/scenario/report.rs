//! Summary metrics and file output.
//!
//! A run directory contains
//!
//! * `depth_errors.csv`: one row per agent, point and step where the point was observed;
//! * `relpose.csv`: one row per step (`duration * rate + 1` rows), with A's
//!   pose estimate when A runs a filter;
//! * `relpose_b.csv`: same for B, only when both robots run filters;
//! * `summary.json`: convergence times, final errors, counters and the resolved config;
//! * `config.toml`: the resolved config, loadable with `run --config`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::{AgentId, PointId};

use super::config::ScenarioConfig;
use super::run::{AgentRunStats, PoseRecord, RunReport};

/// First time from which `within` holds for every remaining sample, or
/// `None` if the last sample is outside the band.
pub fn convergence_time(times: &[f64], within: &[bool]) -> Option<f64> {
    debug_assert_eq!(times.len(), within.len());
    let mut start = None;
    for (t, ok) in times.iter().zip(within).rev() {
        if !*ok {
            break;
        }
        start = Some(*t);
    }
    start
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DepthSummary {
    pub agent: AgentId,
    pub point_id: PointId,
    pub samples: usize,
    pub first_seen_s: f64,
    pub last_seen_s: f64,
    pub initial_error_m: f64,
    pub final_error_m: f64,
    pub final_relative_error: f64,
    /// Absolute band `metrics.depth_threshold_m`.
    pub convergence_time_s: Option<f64>,
    /// Relative band `metrics.depth_threshold_rel`.
    pub convergence_time_rel_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PoseSummary {
    pub agent: AgentId,
    /// Both position components and the heading inside their bands.
    pub convergence_time_s: Option<f64>,
    pub final_error_x_m: f64,
    pub final_error_y_m: f64,
    pub final_error_theta_deg: f64,
    pub max_position_error_m: f64,
    pub max_heading_error_deg: f64,
    pub updates: u64,
    pub rejections: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub scenario: String,
    pub seed: u64,
    pub steps: usize,
    pub dt_s: f64,
    pub depth: Vec<DepthSummary>,
    pub relpose: Vec<PoseSummary>,
    pub agents: Vec<AgentRunStats>,
    pub config: ScenarioConfig,
}

impl Summary {
    pub fn depth(&self, agent: AgentId, id: PointId) -> Option<&DepthSummary> {
        self.depth.iter().find(|d| d.agent == agent && d.point_id == id)
    }

    pub fn relpose(&self, agent: AgentId) -> Option<&PoseSummary> {
        self.relpose.iter().find(|p| p.agent == agent)
    }
}

fn depth_summary(report: &RunReport, agent: AgentId, id: PointId) -> Option<DepthSummary> {
    let series = report.depth_series(agent, id);
    let first = series.first()?;
    let last = series.last()?;
    let m = &report.config.metrics;
    let times: Vec<f64> = series.iter().map(|s| s.0).collect();
    let abs_ok: Vec<bool> = series.iter().map(|s| s.2.abs() < m.depth_threshold_m).collect();
    let rel_ok: Vec<bool> = series
        .iter()
        .map(|s| s.2.abs() < m.depth_threshold_rel * s.1)
        .collect();
    Some(DepthSummary {
        agent,
        point_id: id,
        samples: series.len(),
        first_seen_s: first.0,
        last_seen_s: last.0,
        initial_error_m: first.2,
        final_error_m: last.2,
        final_relative_error: last.2 / last.1,
        convergence_time_s: convergence_time(&times, &abs_ok),
        convergence_time_rel_s: convergence_time(&times, &rel_ok),
    })
}

fn pose_summary(report: &RunReport, agent: AgentId) -> Option<PoseSummary> {
    let series = report.pose_series(agent);
    let (_, last) = series.last()?;
    let m = &report.config.metrics;
    let heading_band = m.heading_threshold_deg.to_radians();
    let times: Vec<f64> = series.iter().map(|s| s.0).collect();
    let ok: Vec<bool> = series
        .iter()
        .map(|(_, p)| p.position_error() < m.position_threshold_m && p.error[2].abs() < heading_band)
        .collect();
    let max_of = |f: &dyn Fn(&PoseRecord) -> f64| series.iter().map(|(_, p)| f(p)).fold(0.0, f64::max);
    Some(PoseSummary {
        agent,
        convergence_time_s: convergence_time(&times, &ok),
        final_error_x_m: last.error[0],
        final_error_y_m: last.error[1],
        final_error_theta_deg: last.error[2].to_degrees(),
        max_position_error_m: max_of(&|p| p.position_error()),
        max_heading_error_deg: max_of(&|p| p.error[2].abs().to_degrees()),
        updates: last.updates,
        rejections: last.rejections,
    })
}

/// Derives the summary from the record stream.
pub fn summarize(report: &RunReport) -> Summary {
    let cfg = &report.config;
    let mut depth = Vec::new();
    for agent in [AgentId::A, AgentId::B] {
        for id in cfg.point_ids() {
            depth.extend(depth_summary(report, agent, id));
        }
    }
    let relpose = [AgentId::A, AgentId::B]
        .into_iter()
        .filter_map(|a| pose_summary(report, a))
        .collect();
    Summary {
        scenario: cfg.name.clone(),
        seed: cfg.seed,
        steps: cfg.steps(),
        dt_s: cfg.dt(),
        depth,
        relpose,
        agents: report.agents.clone(),
        config: cfg.clone(),
    }
}

#[derive(Debug, Serialize)]
struct DepthRow {
    time: f64,
    agent: AgentId,
    point_id: PointId,
    z_true: f64,
    z_est: f64,
    error: f64,
    depth_std: f64,
    pe: f64,
    pe_window: f64,
}

#[derive(Debug, Serialize)]
struct PoseRow {
    time: f64,
    x_est: Option<f64>,
    y_est: Option<f64>,
    theta_est: Option<f64>,
    x_true: Option<f64>,
    y_true: Option<f64>,
    theta_true: Option<f64>,
    err_x: Option<f64>,
    err_y: Option<f64>,
    err_theta: Option<f64>,
    cov_trace: Option<f64>,
    updates: Option<u64>,
    rejections: Option<u64>,
}

impl PoseRow {
    fn new(time: f64, truth: Option<crate::geometry::SE2Pose>, p: Option<PoseRecord>) -> Self {
        let truth = p.map(|p| p.truth).or(truth);
        Self {
            time,
            x_est: p.map(|p| p.estimate.x),
            y_est: p.map(|p| p.estimate.y),
            theta_est: p.map(|p| p.estimate.theta),
            x_true: truth.map(|t| t.x),
            y_true: truth.map(|t| t.y),
            theta_true: truth.map(|t| t.theta),
            err_x: p.map(|p| p.error[0]),
            err_y: p.map(|p| p.error[1]),
            err_theta: p.map(|p| p.error[2]),
            cov_trace: p.map(|p| p.covariance_trace),
            updates: p.map(|p| p.updates),
            rejections: p.map(|p| p.rejections),
        }
    }
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

fn write_csv<R: Serialize>(path: &Path, rows: impl IntoIterator<Item = R>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    for row in rows {
        w.serialize(row).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Paths written by [`emit`].
#[derive(Debug, Clone, PartialEq)]
pub struct EmittedFiles {
    pub depth_errors: PathBuf,
    pub relpose: PathBuf,
    pub relpose_b: Option<PathBuf>,
    pub summary: PathBuf,
    pub config: PathBuf,
}

/// Writes the CSV files, `summary.json` and `config.toml` into `dir`.
pub fn emit(report: &RunReport, dir: &Path) -> Result<EmittedFiles> {
    std::fs::create_dir_all(dir)?;
    let files = EmittedFiles {
        depth_errors: dir.join("depth_errors.csv"),
        relpose: dir.join("relpose.csv"),
        relpose_b: report
            .records
            .iter()
            .any(|r| r.pose_b.is_some())
            .then(|| dir.join("relpose_b.csv")),
        summary: dir.join("summary.json"),
        config: dir.join("config.toml"),
    };

    write_csv(
        &files.depth_errors,
        report.records.iter().flat_map(|r| {
            r.depth.iter().map(move |d| DepthRow {
                time: r.time,
                agent: d.agent,
                point_id: d.point_id,
                z_true: d.z_true,
                z_est: d.z_est,
                error: d.error,
                depth_std: d.depth_std,
                pe: d.pe,
                pe_window: d.pe_window,
            })
        }),
    )?;
    write_csv(
        &files.relpose,
        report.records.iter().map(|r| PoseRow::new(r.time, r.truth, r.pose_a)),
    )?;
    if let Some(path) = &files.relpose_b {
        write_csv(
            path,
            report.records.iter().map(|r| PoseRow::new(r.time, None, r.pose_b)),
        )?;
    }

    let summary = summarize(report);
    let mut out = BufWriter::new(File::create(&files.summary)?);
    serde_json::to_writer_pretty(&mut out, &summary).map_err(|e| Error::Io(e.into()))?;
    out.write_all(b"\n")?;
    out.flush()?;

    std::fs::write(&files.config, report.config.to_toml_string()?)?;
    Ok(files)
}
