//! File formats: scenario descriptions, episode logs, metrics, benchmark
//! tables, decoder weights and demonstration datasets.
//!
//! Scenarios are human-editable TOML. Logs, metrics and tables are plain CSV
//! with fixed documented headers. Decoder weights and datasets are
//! line-oriented numeric text. Every format round-trips, and all files are
//! written atomically (temp file then rename).

use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::TrainedDecoder;
use crate::sim::{EpisodeLog, RunMetrics, StepRecord};

/// A complete scripted benchmark scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub sim: SimConfig,
    pub world: WorldConfig,
    pub limits: LimitsConfig,
    #[serde(default)]
    pub planner: PlannerConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Simulation step (s).
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Replanning period (s); must be a multiple of `dt`.
    #[serde(default = "default_replan_dt")]
    pub replan_dt: f64,
    pub duration_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub robot_start: [f64; 2],
    pub obstacle_radius: f64,
    pub target: ScriptConfig,
    #[serde(default)]
    pub obstacles: Vec<ScriptConfig>,
}

/// A constant-speed polyline script. A single waypoint (or zero speed) is a
/// stationary entity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptConfig {
    pub speed: f64,
    pub waypoints: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitsConfig {
    pub v_max: f64,
    pub a_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_coeff_std")]
    pub coeff_std: f64,
    #[serde(default)]
    pub q_band_std: f64,
    #[serde(default)]
    pub q_pos_std: f64,
    #[serde(default)]
    pub q_vel_std: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_k_iters")]
    pub k_iters: usize,
    #[serde(default = "default_rho")]
    pub rho: f64,
    #[serde(default = "default_horizon")]
    pub horizon_s: f64,
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default = "default_degree")]
    pub degree: usize,
    #[serde(default = "default_n_obs")]
    pub n_obs: usize,
    #[serde(default = "default_n_beams")]
    pub n_beams: usize,
    #[serde(default = "default_range_max")]
    pub range_max: f64,
    #[serde(default)]
    pub weights: WeightsConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightsConfig {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
}

impl Default for WeightsConfig {
    fn default() -> Self {
        Self {
            w1: 0.05,
            w2: 1.0,
            w3: 0.0,
        }
    }
}

fn default_dt() -> f64 {
    0.05
}
fn default_replan_dt() -> f64 {
    0.1
}
fn default_samples() -> usize {
    16
}
fn default_coeff_std() -> f64 {
    0.4
}
fn default_k_iters() -> usize {
    100
}
fn default_rho() -> f64 {
    crate::projection::DEFAULT_RHO
}
fn default_horizon() -> f64 {
    5.0
}
fn default_m() -> usize {
    50
}
fn default_degree() -> usize {
    10
}
fn default_n_obs() -> usize {
    20
}
fn default_n_beams() -> usize {
    180
}
fn default_range_max() -> f64 {
    15.0
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            samples: default_samples(),
            coeff_std: default_coeff_std(),
            q_band_std: 0.0,
            q_pos_std: 0.0,
            q_vel_std: 0.0,
            seed: 0,
            k_iters: default_k_iters(),
            rho: default_rho(),
            horizon_s: default_horizon(),
            m: default_m(),
            degree: default_degree(),
            n_obs: default_n_obs(),
            n_beams: default_n_beams(),
            range_max: default_range_max(),
            weights: WeightsConfig::default(),
        }
    }
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Scenario(msg));
        if !(self.sim.dt > 0.0) {
            return fail(format!("dt must be positive, got {}", self.sim.dt));
        }
        if !(self.sim.duration_s > 0.0) {
            return fail("duration must be positive".into());
        }
        let ratio = self.sim.replan_dt / self.sim.dt;
        if (ratio - ratio.round()).abs() > 1e-9 || ratio < 1.0 {
            return fail(format!(
                "replan_dt {} must be a positive multiple of dt {}",
                self.sim.replan_dt, self.sim.dt
            ));
        }
        if !(self.world.obstacle_radius > 0.0) {
            return fail("obstacle radius must be positive".into());
        }
        if !(self.limits.v_max > 0.0 && self.limits.a_max > 0.0) {
            return fail("kinematic limits must be positive".into());
        }
        if self.world.target.waypoints.is_empty() {
            return fail("target script needs at least one waypoint".into());
        }
        for (i, o) in self.world.obstacles.iter().enumerate() {
            if o.waypoints.is_empty() {
                return fail(format!("obstacle script {i} needs at least one waypoint"));
            }
        }
        if self.planner.samples == 0 || self.planner.k_iters == 0 {
            return fail("planner needs at least one sample and one iteration".into());
        }
        if self.planner.degree < 4 || self.planner.m < self.planner.degree + 1 {
            return fail("planner polynomial configuration is too small".into());
        }
        Ok(())
    }
}

/// Parse a scenario from TOML text.
pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let sc: Scenario = toml::from_str(text).map_err(|e| Error::Scenario(e.to_string()))?;
    sc.validate()?;
    Ok(sc)
}

pub fn scenario_to_string(sc: &Scenario) -> Result<String> {
    toml::to_string(sc).map_err(|e| Error::Scenario(e.to_string()))
}

pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Scenario(format!("{}: {e}", path.display())))?;
    parse_scenario(&text)
}

pub fn save_scenario(sc: &Scenario, path: &Path) -> Result<()> {
    write_atomic(path, scenario_to_string(sc)?.as_bytes())
}

/// Write a file atomically: temp file in the same directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(
        ".{}.tmp-{}",
        path.file_name().and_then(|n| n.to_str()).unwrap_or("out"),
        std::process::id()
    ));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Episode log CSV header. The timing columns are only populated on replan
/// steps; they are measurements, not simulation state.
pub const LOG_HEADER: &str = "t,px,py,vx,vy,ax,ay,tx,ty,occluded,collided,plan_time_s,plan_failed";

pub fn log_to_csv(log: &EpisodeLog) -> String {
    let mut out = String::with_capacity(64 * log.steps.len() + 64);
    out.push_str(LOG_HEADER);
    out.push('\n');
    for s in &log.steps {
        let plan_time = s.plan_time_s.map(|v| v.to_string()).unwrap_or_default();
        let plan_failed = s
            .plan_failed
            .map(|v| if v { "1" } else { "0" }.to_string())
            .unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            s.t,
            s.robot_p[0],
            s.robot_p[1],
            s.robot_v[0],
            s.robot_v[1],
            s.robot_a[0],
            s.robot_a[1],
            s.target_p[0],
            s.target_p[1],
            u8::from(s.occluded),
            u8::from(s.collided),
            plan_time,
            plan_failed,
        ));
    }
    out
}

pub fn log_from_csv(text: &str) -> Result<EpisodeLog> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::MalformedLog("empty log".into()))?;
    if header.trim() != LOG_HEADER {
        return Err(Error::MalformedLog(format!("unexpected header: {header}")));
    }
    let mut steps = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 13 {
            return Err(Error::MalformedLog(format!(
                "line {}: expected 13 columns, got {}",
                i + 2,
                cols.len()
            )));
        }
        let f = |j: usize| -> Result<f64> {
            cols[j]
                .parse()
                .map_err(|e| Error::MalformedLog(format!("line {}: column {j}: {e}", i + 2)))
        };
        let flag = |j: usize| -> Result<bool> {
            match cols[j] {
                "0" => Ok(false),
                "1" => Ok(true),
                other => Err(Error::MalformedLog(format!(
                    "line {}: column {j}: expected 0/1, got {other}",
                    i + 2
                ))),
            }
        };
        steps.push(StepRecord {
            t: f(0)?,
            robot_p: [f(1)?, f(2)?],
            robot_v: [f(3)?, f(4)?],
            robot_a: [f(5)?, f(6)?],
            target_p: [f(7)?, f(8)?],
            occluded: flag(9)?,
            collided: flag(10)?,
            plan_time_s: if cols[11].is_empty() {
                None
            } else {
                Some(f(11)?)
            },
            plan_failed: if cols[12].is_empty() {
                None
            } else {
                Some(flag(12)?)
            },
        });
    }
    if steps.is_empty() {
        return Err(Error::MalformedLog("log has no step records".into()));
    }
    Ok(EpisodeLog { steps })
}

/// Metrics CSV header. Wall-clock planning time is deliberately excluded so
/// the file is byte-identical across reruns with the same seed; timing is
/// reported in the benchmark table instead.
pub const METRICS_HEADER: &str =
    "occlusion_time_s,acc_mean,acc_min,acc_max,collision_count,success,planner_failures,duration_s";

pub fn metrics_to_csv(m: &RunMetrics) -> String {
    format!(
        "{}\n{},{},{},{},{},{},{},{}\n",
        METRICS_HEADER,
        m.occlusion_time_s,
        m.acc_mean,
        m.acc_min,
        m.acc_max,
        m.collision_count,
        u8::from(m.success),
        m.planner_failures,
        m.duration_s,
    )
}

pub fn metrics_from_csv(text: &str) -> Result<RunMetrics> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::MalformedFile("empty metrics file".into()))?;
    if header.trim() != METRICS_HEADER {
        return Err(Error::MalformedFile(format!(
            "unexpected metrics header: {header}"
        )));
    }
    let line = lines
        .next()
        .ok_or_else(|| Error::MalformedFile("metrics file has no data row".into()))?;
    let cols: Vec<&str> = line.split(',').collect();
    if cols.len() != 8 {
        return Err(Error::MalformedFile(format!(
            "expected 8 metrics columns, got {}",
            cols.len()
        )));
    }
    let f = |j: usize| -> Result<f64> {
        cols[j]
            .parse()
            .map_err(|e| Error::MalformedFile(format!("metrics column {j}: {e}")))
    };
    Ok(RunMetrics {
        occlusion_time_s: f(0)?,
        acc_mean: f(1)?,
        acc_min: f(2)?,
        acc_max: f(3)?,
        collision_count: f(4)? as usize,
        success: cols[5] == "1",
        planner_failures: f(6)? as usize,
        duration_s: f(7)?,
        mean_plan_time_s: 0.0,
    })
}

/// Benchmark comparison table header: the benchmark metric columns plus the
/// measured per-plan wall time.
pub const TABLE_HEADER: &str = "scenario,policy,seed,occlusion_time_s,success,acc_mean,acc_min,acc_max,collision_count,planner_failures,mean_plan_time_s";

/// One row of the benchmark table.
pub fn table_row(scenario: &str, policy: &str, seed: u64, m: &RunMetrics) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{}\n",
        scenario,
        policy,
        seed,
        m.occlusion_time_s,
        u8::from(m.success),
        m.acc_mean,
        m.acc_min,
        m.acc_max,
        m.collision_count,
        m.planner_failures,
        m.mean_plan_time_s,
    )
}

/// Decoder weights as plain numeric text with a header line.
pub fn decoder_to_string(dec: &TrainedDecoder) -> String {
    let mut out = format!(
        "decoder rows {} cols {} n_c {}\n",
        dec.weights.nrows(),
        dec.weights.ncols(),
        dec.n_c
    );
    for r in 0..dec.weights.nrows() {
        let row: Vec<String> = (0..dec.weights.ncols())
            .map(|c| dec.weights[(r, c)].to_string())
            .collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

pub fn decoder_from_string(text: &str) -> Result<TrainedDecoder> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::MalformedFile("empty decoder file".into()))?;
    let toks: Vec<&str> = header.split_whitespace().collect();
    if toks.len() != 7 || toks[0] != "decoder" || toks[1] != "rows" || toks[3] != "cols" || toks[5] != "n_c" {
        return Err(Error::MalformedFile(format!(
            "unexpected decoder header: {header}"
        )));
    }
    let rows: usize = toks[2]
        .parse()
        .map_err(|_| Error::MalformedFile("bad row count".into()))?;
    let cols: usize = toks[4]
        .parse()
        .map_err(|_| Error::MalformedFile("bad column count".into()))?;
    let n_c: usize = toks[6]
        .parse()
        .map_err(|_| Error::MalformedFile("bad coefficient count".into()))?;
    if rows != TrainedDecoder::out_dim(n_c) || cols != crate::policy::FEATURE_DIM + 1 {
        return Err(Error::MalformedFile(format!(
            "decoder shape {rows}x{cols} does not match n_c {n_c}"
        )));
    }
    let mut weights = nalgebra::DMatrix::zeros(rows, cols);
    for r in 0..rows {
        let line = lines
            .next()
            .ok_or_else(|| Error::MalformedFile(format!("decoder file truncated at row {r}")))?;
        let vals: Vec<&str> = line.split_whitespace().collect();
        if vals.len() != cols {
            return Err(Error::MalformedFile(format!(
                "decoder row {r}: expected {cols} values, got {}",
                vals.len()
            )));
        }
        for (c, v) in vals.iter().enumerate() {
            weights[(r, c)] = v
                .parse()
                .map_err(|e| Error::MalformedFile(format!("decoder row {r} col {c}: {e}")))?;
        }
    }
    Ok(TrainedDecoder { weights, n_c })
}

pub fn save_decoder(dec: &TrainedDecoder, path: &Path) -> Result<()> {
    write_atomic(path, decoder_to_string(dec).as_bytes())
}

pub fn load_decoder(path: &Path) -> Result<TrainedDecoder> {
    decoder_from_string(&fs::read_to_string(path)?)
}

/// Demonstration dataset as line-oriented numeric text: a header line, a
/// `config` line fixing the planner shape, then one `demo` line per planning
/// cycle (scene, limits, expert cost, obstacles, expert positions).
pub fn dataset_to_string(ds: &crate::learner::Dataset) -> String {
    let mut out = String::from("# trackplan demonstration dataset\n");
    out.push_str(&format!(
        "config {} {} {} {}\n",
        ds.m, ds.degree, ds.horizon_s, ds.n_obs
    ));
    for d in &ds.demos {
        let mut line = format!(
            "demo {} {} {} {} {} {} {} {} {} {} {} {} {} {}",
            d.scene.obstacle_radius,
            d.limits.v_max,
            d.limits.a_max,
            d.scene.robot_p.x,
            d.scene.robot_p.y,
            d.scene.robot_v.x,
            d.scene.robot_v.y,
            d.scene.robot_a.x,
            d.scene.robot_a.y,
            d.scene.target_p.x,
            d.scene.target_p.y,
            d.scene.target_v.x,
            d.scene.target_v.y,
            d.expert_cost,
        );
        for o in &d.scene.obstacles {
            line.push_str(&format!(
                " {} {} {} {}",
                o.center.x, o.center.y, o.velocity.x, o.velocity.y
            ));
        }
        for i in 0..d.tau.nrows() {
            line.push_str(&format!(" {} {}", d.tau[(i, 0)], d.tau[(i, 1)]));
        }
        out.push_str(&line);
        out.push('\n');
    }
    out
}

pub fn dataset_from_string(text: &str) -> Result<crate::learner::Dataset> {
    use crate::constraints::{KinematicLimits, Obstacle, Scene};
    use nalgebra::{DMatrix, Vector2};
    let mut config: Option<(usize, usize, f64, usize)> = None;
    let mut demos = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut toks = line.split_whitespace();
        match toks.next() {
            Some("config") => {
                let vals: Vec<&str> = toks.collect();
                if vals.len() != 4 {
                    return Err(Error::MalformedFile(format!(
                        "line {}: config needs 4 values",
                        ln + 1
                    )));
                }
                config = Some((
                    vals[0].parse().map_err(|_| bad(ln, "m"))?,
                    vals[1].parse().map_err(|_| bad(ln, "degree"))?,
                    vals[2].parse().map_err(|_| bad(ln, "horizon"))?,
                    vals[3].parse().map_err(|_| bad(ln, "n_obs"))?,
                ));
            }
            Some("demo") => {
                let (m, _, _, n_obs) =
                    config.ok_or_else(|| Error::MalformedFile("demo before config".into()))?;
                let vals: std::result::Result<Vec<f64>, _> =
                    toks.map(|t| t.parse::<f64>()).collect();
                let vals = vals.map_err(|e| {
                    Error::MalformedFile(format!("line {}: {e}", ln + 1))
                })?;
                let expect = 14 + 4 * n_obs + 2 * m;
                if vals.len() != expect {
                    return Err(Error::MalformedFile(format!(
                        "line {}: expected {expect} values, got {}",
                        ln + 1,
                        vals.len()
                    )));
                }
                let mut obstacles = Vec::with_capacity(n_obs);
                for i in 0..n_obs {
                    let o = 14 + 4 * i;
                    obstacles.push(Obstacle {
                        center: Vector2::new(vals[o], vals[o + 1]),
                        velocity: Vector2::new(vals[o + 2], vals[o + 3]),
                    });
                }
                let t0 = 14 + 4 * n_obs;
                let tau = DMatrix::from_fn(m, 2, |i, axis| vals[t0 + 2 * i + axis]);
                demos.push(crate::learner::Demonstration {
                    scene: Scene {
                        robot_p: Vector2::new(vals[3], vals[4]),
                        robot_v: Vector2::new(vals[5], vals[6]),
                        robot_a: Vector2::new(vals[7], vals[8]),
                        target_p: Vector2::new(vals[9], vals[10]),
                        target_v: Vector2::new(vals[11], vals[12]),
                        obstacles,
                        obstacle_radius: vals[0],
                    },
                    limits: KinematicLimits {
                        v_max: vals[1],
                        a_max: vals[2],
                    },
                    tau,
                    expert_cost: vals[13],
                });
            }
            Some(other) => {
                return Err(Error::MalformedFile(format!(
                    "line {}: unknown record '{other}'",
                    ln + 1
                )))
            }
            None => {}
        }
    }
    let (m, degree, horizon_s, n_obs) =
        config.ok_or_else(|| Error::MalformedFile("dataset has no config line".into()))?;
    Ok(crate::learner::Dataset {
        horizon_s,
        m,
        degree,
        n_obs,
        demos,
    })
}

fn bad(ln: usize, what: &str) -> Error {
    Error::MalformedFile(format!("line {}: bad {what}", ln + 1))
}

/// Loss curve CSV (one row per epoch).
pub fn loss_curve_to_csv(curve: &[f64]) -> String {
    let mut out = String::from("epoch,mean_loss\n");
    for (i, l) in curve.iter().enumerate() {
        out.push_str(&format!("{i},{l}\n"));
    }
    out
}
