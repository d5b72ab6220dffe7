//! 2D kinematic world: scripted target and obstacles, synthetic LiDAR,
//! receding-horizon execution of the planner, and benchmark metrics.
//!
//! An episode alternates planning (at a fixed replan period) and executing
//! the head of the most recent plan while the scripted world advances. At
//! every simulation step the robot-target line of sight is tested against all
//! obstacle disks; occluded steps accumulate occlusion time. Metrics can be
//! recomputed from the step log alone, independent of the live run.

use std::sync::Arc;
use std::time::Instant;

use nalgebra::Vector2;

use crate::basis::{build_basis, eval_at, BasisSet, TrajCoeffs};
use crate::constraints::{KinematicLimits, Obstacle, Scene, VIRTUAL_OBSTACLE_DISTANCE};
use crate::error::{Error, Result};
use crate::geom::{point_segment_distance, ray_circle_intersection};
use crate::policy::{
    plan, plan_unprojected, BaseSampler, CostWeights, DecoderSampler, SamplePolicy, TrainedDecoder,
};
use crate::projection::ProjectionWorkspace;
use crate::scenario::Scenario;

/// Success requires less occlusion than this over the whole run (s).
pub const SUCCESS_OCCLUSION_S: f64 = 0.1;

/// Extra radius the planner adds to obstacles beyond their simulated size.
/// Scan returns only cover the visible arc of an obstacle, so a plan sliding
/// around the far side is constrained by stale geometry; the margin absorbs
/// both that gap and the solver's residual tolerance.
pub const PLANNING_RADIUS_MARGIN: f64 = 0.25;

/// Executed steps are capped at slightly above the speed limit. Feasible
/// plans are followed exactly; a plan that commands a jump (possible when
/// the projection is removed) is chased at the cap instead of teleporting.
pub const TRACKING_SPEED_SLACK: f64 = 0.05;

/// A constant-speed polyline motion script. Past the final waypoint the
/// entity stops.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionScript {
    pub waypoints: Vec<Vector2<f64>>,
    pub speed: f64,
    /// Cumulative arc length up to each waypoint.
    cum: Vec<f64>,
}

impl MotionScript {
    pub fn new(waypoints: Vec<Vector2<f64>>, speed: f64) -> Result<Self> {
        if waypoints.is_empty() {
            return Err(Error::Scenario("script needs at least one waypoint".into()));
        }
        let mut cum = vec![0.0];
        for w in waypoints.windows(2) {
            let d = (w[1] - w[0]).norm();
            cum.push(cum.last().unwrap() + d);
        }
        Ok(Self {
            waypoints,
            speed,
            cum,
        })
    }

    pub fn from_config(cfg: &crate::scenario::ScriptConfig) -> Result<Self> {
        Self::new(
            cfg.waypoints
                .iter()
                .map(|w| Vector2::new(w[0], w[1]))
                .collect(),
            cfg.speed,
        )
    }

    /// Position and velocity at time `t`.
    pub fn state_at(&self, t: f64) -> (Vector2<f64>, Vector2<f64>) {
        let total = *self.cum.last().unwrap();
        if self.waypoints.len() == 1 || self.speed <= 0.0 || total == 0.0 {
            return (self.waypoints[0], Vector2::zeros());
        }
        let dist = self.speed * t;
        if dist >= total {
            return (*self.waypoints.last().unwrap(), Vector2::zeros());
        }
        let seg = self.cum.partition_point(|&c| c <= dist).min(self.cum.len() - 1);
        let (a, b) = (self.waypoints[seg - 1], self.waypoints[seg]);
        let seg_len = self.cum[seg] - self.cum[seg - 1];
        let frac = (dist - self.cum[seg - 1]) / seg_len;
        let dir = (b - a) / seg_len;
        (a + (b - a) * frac, dir * self.speed)
    }
}

/// World snapshot at one instant plus the scripts that drive it.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub t: f64,
    pub robot_p: Vector2<f64>,
    pub robot_v: Vector2<f64>,
    pub robot_a: Vector2<f64>,
    pub target_p: Vector2<f64>,
    pub target_v: Vector2<f64>,
    pub obstacles: Vec<Obstacle>,
    pub obstacle_radius: f64,
    target_script: MotionScript,
    obstacle_scripts: Vec<MotionScript>,
}

impl WorldState {
    pub fn from_scenario(sc: &Scenario) -> Result<Self> {
        sc.validate()?;
        let target_script = MotionScript::from_config(&sc.world.target)?;
        let obstacle_scripts: Vec<MotionScript> = sc
            .world
            .obstacles
            .iter()
            .map(MotionScript::from_config)
            .collect::<Result<_>>()?;
        let (target_p, target_v) = target_script.state_at(0.0);
        let obstacles = obstacle_scripts
            .iter()
            .map(|s| {
                let (p, v) = s.state_at(0.0);
                Obstacle {
                    center: p,
                    velocity: v,
                }
            })
            .collect();
        Ok(Self {
            t: 0.0,
            robot_p: Vector2::new(sc.world.robot_start[0], sc.world.robot_start[1]),
            robot_v: Vector2::zeros(),
            robot_a: Vector2::zeros(),
            target_p,
            target_v,
            obstacles,
            obstacle_radius: sc.world.obstacle_radius,
            target_script,
            obstacle_scripts,
        })
    }

    /// Advance the scripted entities to time `t`; the caller moves the robot.
    pub fn advance_scripts(&mut self, t: f64) {
        self.t = t;
        let (p, v) = self.target_script.state_at(t);
        self.target_p = p;
        self.target_v = v;
        for (obs, script) in self.obstacles.iter_mut().zip(&self.obstacle_scripts) {
            let (p, v) = script.state_at(t);
            obs.center = p;
            obs.velocity = v;
        }
    }

    /// True when an obstacle disk intersects the robot-target sight line.
    pub fn occluded(&self) -> bool {
        self.obstacles.iter().any(|o| {
            point_segment_distance(o.center, self.robot_p, self.target_p) <= self.obstacle_radius
        })
    }

    /// True when the robot center lies strictly inside an obstacle disk.
    pub fn collided(&self) -> bool {
        self.obstacles
            .iter()
            .any(|o| (self.robot_p - o.center).norm() < self.obstacle_radius)
    }
}

/// A LiDAR return set in robot-centered coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Scan {
    pub points: Vec<Vector2<f64>>,
}

/// Cast `n_beams` equiangular rays from the robot and return the nearest
/// circle intersection of each within range. A robot inside an obstacle
/// returns contact points at distance zero (the run counts as collided).
pub fn synth_lidar(world: &WorldState, n_beams: usize, range_max: f64) -> Scan {
    if world
        .obstacles
        .iter()
        .any(|o| (world.robot_p - o.center).norm() <= world.obstacle_radius)
    {
        return Scan {
            points: vec![Vector2::zeros(); n_beams],
        };
    }
    let mut points = Vec::new();
    for i in 0..n_beams {
        let angle = std::f64::consts::TAU * i as f64 / n_beams as f64;
        let dir = Vector2::new(angle.cos(), angle.sin());
        let mut nearest: Option<f64> = None;
        for obs in &world.obstacles {
            if let Some(s) =
                ray_circle_intersection(world.robot_p, dir, obs.center, world.obstacle_radius)
            {
                if s <= range_max && nearest.map_or(true, |n| s < n) {
                    nearest = Some(s);
                }
            }
        }
        if let Some(s) = nearest {
            points.push(dir * s);
        }
    }
    Scan { points }
}

/// Prune a scan to the `n_obs` returns nearest the robot and attach the
/// source obstacle's velocity to each; pad with inert far-away points.
/// Input and output are robot-centered.
pub fn prune_scan(scan: &Scan, world: &WorldState, n_obs: usize) -> Vec<Obstacle> {
    let mut indexed: Vec<(f64, usize)> = scan
        .points
        .iter()
        .enumerate()
        .map(|(i, p)| (p.norm(), i))
        .collect();
    indexed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut out = Vec::with_capacity(n_obs);
    for &(_, i) in indexed.iter().take(n_obs) {
        let p_world = scan.points[i] + world.robot_p;
        // A return belongs to the obstacle whose boundary it lies on.
        let velocity = world
            .obstacles
            .iter()
            .min_by(|a, b| {
                let da = ((p_world - a.center).norm() - world.obstacle_radius).abs();
                let db = ((p_world - b.center).norm() - world.obstacle_radius).abs();
                da.total_cmp(&db)
            })
            .map(|o| o.velocity)
            .unwrap_or_else(Vector2::zeros);
        out.push(Obstacle {
            center: scan.points[i],
            velocity,
        });
    }
    while out.len() < n_obs {
        out.push(Obstacle {
            center: Vector2::new(VIRTUAL_OBSTACLE_DISTANCE, VIRTUAL_OBSTACLE_DISTANCE),
            velocity: Vector2::zeros(),
        });
    }
    out
}

/// Execute the head of the most recent plan: the robot tracks the plan
/// polynomial, with the per-step motion capped at the tracking speed limit.
/// Plans that respect the speed bound are followed exactly; discontinuous
/// commands are chased at the cap.
pub fn step_world(world: &mut WorldState, dt: f64, plan: &ActivePlan) {
    let t_next = world.t + dt;
    let tau = t_next - plan.start_t;
    let (p, v, a) = eval_at(&plan.xi, plan.horizon_s, tau);
    let cmd = Vector2::new(p[0], p[1]);
    let delta = cmd - world.robot_p;
    let limit = plan.track_speed * dt;
    if delta.norm() <= limit {
        world.robot_p = cmd;
        world.robot_v = Vector2::new(v[0], v[1]);
        world.robot_a = Vector2::new(a[0], a[1]);
    } else {
        let step = delta.normalize() * limit;
        let new_v = step / dt;
        world.robot_a = (new_v - world.robot_v) / dt;
        world.robot_v = new_v;
        world.robot_p += step;
    }
    world.advance_scripts(t_next);
}

/// The plan currently being executed, in world coordinates.
#[derive(Debug, Clone)]
pub struct ActivePlan {
    pub xi: TrajCoeffs,
    pub start_t: f64,
    pub horizon_s: f64,
    /// Per-step execution speed cap (the scenario's speed limit plus slack).
    pub track_speed: f64,
}

/// Which planner variant drives an episode.
pub enum PolicyArm {
    /// Gaussian base sampler with hand-fixed nominal parameters, projected.
    Base,
    /// Candidates ranked raw, the projection removed.
    RawUnprojected,
    /// Trained decoder provides mean sample, parameters and warm start.
    Trained(TrainedDecoder),
    /// Trained decoder with its parameter prediction replaced by the
    /// hand-fixed nominal values.
    AblationFixedQ(TrainedDecoder),
    /// Keep the initial position forever (diagnostics only).
    Hold,
}

impl PolicyArm {
    pub fn name(&self) -> &'static str {
        match self {
            PolicyArm::Base => "base",
            PolicyArm::RawUnprojected => "raw-unprojected",
            PolicyArm::Trained(_) => "trained",
            PolicyArm::AblationFixedQ(_) => "ablation-fixed-q",
            PolicyArm::Hold => "hold",
        }
    }
}

/// One line of the episode log; everything metrics need is here.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t: f64,
    pub robot_p: [f64; 2],
    pub robot_v: [f64; 2],
    pub robot_a: [f64; 2],
    pub target_p: [f64; 2],
    pub occluded: bool,
    pub collided: bool,
    /// Wall-clock planning time, set on replan steps.
    pub plan_time_s: Option<f64>,
    /// Whether the replan at this step failed (previous plan reused).
    pub plan_failed: Option<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog {
    pub steps: Vec<StepRecord>,
}

/// Benchmark metrics of one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub occlusion_time_s: f64,
    pub acc_mean: f64,
    pub acc_min: f64,
    pub acc_max: f64,
    pub collision_count: usize,
    pub success: bool,
    pub mean_plan_time_s: f64,
    pub planner_failures: usize,
    pub duration_s: f64,
}

struct Accumulators {
    occluded_steps: usize,
    acc_sum: f64,
    acc_min: f64,
    acc_max: f64,
    acc_count: usize,
    collisions: usize,
    plan_time_sum: f64,
    plan_count: usize,
    failures: usize,
}

impl Accumulators {
    fn new() -> Self {
        Self {
            occluded_steps: 0,
            acc_sum: 0.0,
            acc_min: f64::INFINITY,
            acc_max: 0.0,
            acc_count: 0,
            collisions: 0,
            plan_time_sum: 0.0,
            plan_count: 0,
            failures: 0,
        }
    }
}

/// A running episode. `step` advances one simulation step (planning first on
/// replan boundaries); `last_cycle` exposes the most recent planning cycle
/// for callers that harvest demonstrations.
pub struct Episode {
    pub scenario: Scenario,
    world: WorldState,
    basis: Arc<BasisSet>,
    ws: Option<Arc<ProjectionWorkspace>>,
    arm: PolicyArm,
    base_sampler: Option<BaseSampler>,
    decoder_sampler: Option<DecoderSampler>,
    weights: CostWeights,
    limits: KinematicLimits,
    active: Option<ActivePlan>,
    step_idx: usize,
    steps_total: usize,
    replan_every: usize,
    log: EpisodeLog,
    acc: Accumulators,
    last_cycle: Option<CycleRecord>,
    pending_plan: Option<(f64, bool)>,
    cycles_planned: usize,
}

/// The inputs and output of one planning cycle, in the robot-centered frame
/// the planner saw.
#[derive(Debug, Clone)]
pub struct CycleRecord {
    /// Sequence number of the planning cycle within the episode.
    pub cycle_index: usize,
    pub scene: Scene,
    pub xi: TrajCoeffs,
    pub q: crate::constraints::ConstraintParams,
    pub cost: f64,
    pub max_violation: f64,
}

impl Episode {
    pub fn new(scenario: &Scenario, arm: PolicyArm, seed: u64) -> Result<Self> {
        scenario.validate()?;
        let p = &scenario.planner;
        let basis = Arc::new(build_basis(p.horizon_s, p.m, p.degree)?);
        let limits = KinematicLimits {
            v_max: scenario.limits.v_max,
            a_max: scenario.limits.a_max,
        };
        let needs_projection = !matches!(arm, PolicyArm::RawUnprojected | PolicyArm::Hold);
        let ws = if needs_projection {
            Some(Arc::new(ProjectionWorkspace::prefactorize(
                basis.clone(),
                p.n_obs,
                limits,
                p.rho,
                p.k_iters,
            )?))
        } else {
            None
        };
        let mut base_sampler = None;
        let mut decoder_sampler = None;
        match &arm {
            PolicyArm::Base | PolicyArm::RawUnprojected => {
                let mut s = BaseSampler::new(p.samples, seed);
                s.coeff_std = p.coeff_std;
                s.q_band_std = p.q_band_std;
                s.q_pos_std = p.q_pos_std;
                s.q_vel_std = p.q_vel_std;
                base_sampler = Some(s);
            }
            PolicyArm::Trained(dec) | PolicyArm::AblationFixedQ(dec) => {
                if dec.n_c != p.degree + 1 {
                    return Err(Error::Scenario(format!(
                        "decoder expects degree {}, scenario uses {}",
                        dec.n_c - 1,
                        p.degree
                    )));
                }
                let mut s = DecoderSampler::new(dec.clone(), p.samples, seed);
                s.coeff_std = p.coeff_std;
                s.use_nominal_q = matches!(arm, PolicyArm::AblationFixedQ(_));
                decoder_sampler = Some(s);
            }
            PolicyArm::Hold => {}
        }
        let world = WorldState::from_scenario(scenario)?;
        let steps_total = (scenario.sim.duration_s / scenario.sim.dt).round() as usize;
        let replan_every = (scenario.sim.replan_dt / scenario.sim.dt).round() as usize;
        Ok(Self {
            scenario: scenario.clone(),
            world,
            basis,
            ws,
            arm,
            base_sampler,
            decoder_sampler,
            weights: CostWeights {
                w1: scenario.planner.weights.w1,
                w2: scenario.planner.weights.w2,
                w3: scenario.planner.weights.w3,
            },
            limits,
            active: None,
            step_idx: 0,
            steps_total,
            replan_every,
            log: EpisodeLog { steps: Vec::new() },
            acc: Accumulators::new(),
            last_cycle: None,
            pending_plan: None,
            cycles_planned: 0,
        })
    }

    pub fn done(&self) -> bool {
        self.step_idx >= self.steps_total
    }

    pub fn world(&self) -> &WorldState {
        &self.world
    }

    pub fn last_cycle(&self) -> Option<&CycleRecord> {
        self.last_cycle.as_ref()
    }

    /// The robot-centered scene the planner would see right now.
    pub fn observe(&self) -> Scene {
        let p = &self.scenario.planner;
        let scan = synth_lidar(&self.world, p.n_beams, p.range_max);
        let obstacles = prune_scan(&scan, &self.world, p.n_obs);
        Scene {
            robot_p: Vector2::zeros(),
            robot_v: self.world.robot_v,
            robot_a: self.world.robot_a,
            target_p: self.world.target_p - self.world.robot_p,
            target_v: self.world.target_v,
            obstacles,
            // The planner works against an inflated obstacle model; the
            // simulator's occlusion and collision accounting uses the true
            // radius.
            obstacle_radius: self.world.obstacle_radius + PLANNING_RADIUS_MARGIN,
        }
    }

    fn plan_cycle(&mut self) -> Result<()> {
        if matches!(self.arm, PolicyArm::Hold) {
            let started = Instant::now();
            let mut xi = TrajCoeffs::zeros(self.basis.n_coeffs());
            xi.cx[0] = self.world.robot_p.x;
            xi.cy[0] = self.world.robot_p.y;
            self.active = Some(ActivePlan {
                xi,
                start_t: self.world.t,
                horizon_s: self.basis.horizon_s,
                track_speed: self.limits.v_max + TRACKING_SPEED_SLACK,
            });
            self.record_plan(started.elapsed().as_secs_f64(), false);
            return Ok(());
        }
        let scene = self.observe();
        let started = Instant::now();
        let weights = self.weights;
        let outcome = if matches!(self.arm, PolicyArm::RawUnprojected) {
            let basis = self.basis.clone();
            let limits = self.limits;
            let sampler = self.base_sampler.as_mut().unwrap();
            plan_unprojected(&scene, sampler, &basis, &limits, &weights)
        } else {
            let ws = self.ws.clone().expect("projection arms carry a workspace");
            let sampler: &mut dyn SamplePolicy = if matches!(self.arm, PolicyArm::Base) {
                self.base_sampler.as_mut().unwrap()
            } else {
                self.decoder_sampler.as_mut().unwrap()
            };
            plan(&scene, sampler, &ws, &weights)
        };
        let elapsed = started.elapsed().as_secs_f64();
        match outcome {
            Ok((chosen, _diag)) => {
                // Shift the robot-centered plan back into the world frame;
                // only the constant coefficients move.
                let mut xi = chosen.xi.clone();
                xi.cx[0] += self.world.robot_p.x;
                xi.cy[0] += self.world.robot_p.y;
                self.active = Some(ActivePlan {
                    xi,
                    start_t: self.world.t,
                    horizon_s: self.basis.horizon_s,
                    track_speed: self.limits.v_max + TRACKING_SPEED_SLACK,
                });
                self.last_cycle = Some(CycleRecord {
                    cycle_index: self.cycles_planned,
                    scene,
                    xi: chosen.xi,
                    q: chosen.q,
                    cost: chosen.cost,
                    max_violation: chosen.max_violation,
                });
                self.cycles_planned += 1;
                self.record_plan(elapsed, false);
                Ok(())
            }
            Err(e) => {
                if self.active.is_some() {
                    // Keep flying the previous plan.
                    self.acc.failures += 1;
                    self.record_plan(elapsed, true);
                    Ok(())
                } else {
                    Err(e)
                }
            }
        }
    }

    fn record_plan(&mut self, elapsed: f64, failed: bool) {
        self.acc.plan_time_sum += elapsed;
        self.acc.plan_count += 1;
        self.pending_plan = Some((elapsed, failed));
    }

    /// Advance one simulation step. Plans first when on a replan boundary.
    pub fn step(&mut self) -> Result<()> {
        if self.done() {
            return Ok(());
        }
        if self.step_idx % self.replan_every == 0 {
            self.plan_cycle()?;
        }
        let plan = self
            .active
            .as_ref()
            .expect("an active plan exists after a successful cycle")
            .clone();
        step_world(&mut self.world, self.scenario.sim.dt, &plan);

        let occluded = self.world.occluded();
        let collided = self.world.collided();
        if occluded {
            self.acc.occluded_steps += 1;
        }
        if collided {
            self.acc.collisions += 1;
        }
        let acc_norm = self.world.robot_a.norm();
        self.acc.acc_sum += acc_norm;
        self.acc.acc_min = self.acc.acc_min.min(acc_norm);
        self.acc.acc_max = self.acc.acc_max.max(acc_norm);
        self.acc.acc_count += 1;

        let (plan_time_s, plan_failed) = match self.pending_plan.take() {
            Some((t, f)) => (Some(t), Some(f)),
            None => (None, None),
        };
        self.log.steps.push(StepRecord {
            t: self.world.t,
            robot_p: [self.world.robot_p.x, self.world.robot_p.y],
            robot_v: [self.world.robot_v.x, self.world.robot_v.y],
            robot_a: [self.world.robot_a.x, self.world.robot_a.y],
            target_p: [self.world.target_p.x, self.world.target_p.y],
            occluded,
            collided,
            plan_time_s,
            plan_failed,
        });
        self.step_idx += 1;
        Ok(())
    }

    /// Metrics from the live accumulators plus the full log.
    pub fn finish(self) -> (RunMetrics, EpisodeLog) {
        let dt = self.scenario.sim.dt;
        let occlusion_time_s = self.acc.occluded_steps as f64 * dt;
        let metrics = RunMetrics {
            occlusion_time_s,
            acc_mean: if self.acc.acc_count > 0 {
                self.acc.acc_sum / self.acc.acc_count as f64
            } else {
                0.0
            },
            acc_min: if self.acc.acc_count > 0 {
                self.acc.acc_min
            } else {
                0.0
            },
            acc_max: self.acc.acc_max,
            collision_count: self.acc.collisions,
            success: occlusion_time_s < SUCCESS_OCCLUSION_S && self.acc.collisions == 0,
            mean_plan_time_s: if self.acc.plan_count > 0 {
                self.acc.plan_time_sum / self.acc.plan_count as f64
            } else {
                0.0
            },
            planner_failures: self.acc.failures,
            duration_s: self.log.steps.last().map(|s| s.t).unwrap_or(0.0),
        };
        (metrics, self.log)
    }
}

/// Run a full episode with the given policy arm and seed.
pub fn run_episode(scenario: &Scenario, arm: PolicyArm, seed: u64) -> Result<(RunMetrics, EpisodeLog)> {
    let mut ep = Episode::new(scenario, arm, seed)?;
    while !ep.done() {
        ep.step()?;
    }
    Ok(ep.finish())
}

/// Recompute all metrics from a log alone. Must agree exactly with the
/// accumulators of the episode that produced the log.
pub fn compute_metrics(log: &EpisodeLog) -> Result<RunMetrics> {
    if log.steps.is_empty() {
        return Err(Error::MalformedLog("log has no step records".into()));
    }
    let dt = if log.steps.len() >= 2 {
        log.steps[1].t - log.steps[0].t
    } else {
        log.steps[0].t
    };
    if !(dt > 0.0) {
        return Err(Error::MalformedLog(format!("non-increasing time step {dt}")));
    }
    let mut occluded_steps = 0usize;
    let mut collisions = 0usize;
    let mut acc_sum = 0.0;
    let mut acc_min = f64::INFINITY;
    let mut acc_max = 0.0f64;
    let mut plan_time_sum = 0.0;
    let mut plan_count = 0usize;
    let mut failures = 0usize;
    for s in &log.steps {
        if s.occluded {
            occluded_steps += 1;
        }
        if s.collided {
            collisions += 1;
        }
        let a = (s.robot_a[0].powi(2) + s.robot_a[1].powi(2)).sqrt();
        acc_sum += a;
        acc_min = acc_min.min(a);
        acc_max = acc_max.max(a);
        if let Some(t) = s.plan_time_s {
            plan_time_sum += t;
            plan_count += 1;
        }
        if s.plan_failed == Some(true) {
            failures += 1;
        }
    }
    let occlusion_time_s = occluded_steps as f64 * dt;
    Ok(RunMetrics {
        occlusion_time_s,
        acc_mean: acc_sum / log.steps.len() as f64,
        acc_min,
        acc_max,
        collision_count: collisions,
        success: occlusion_time_s < SUCCESS_OCCLUSION_S && collisions == 0,
        mean_plan_time_s: if plan_count > 0 {
            plan_time_sum / plan_count as f64
        } else {
            0.0
        },
        planner_failures: failures,
        duration_s: log.steps.last().unwrap().t,
    })
}
