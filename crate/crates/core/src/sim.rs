//! Longitudinal traffic simulation with an injected acceleration fault.
//!
//! Two vehicles share a lane. In car-following the rear vehicle is the
//! automated vehicle (HAV) behind a constant-speed leader; in cut-in the HAV
//! has just merged ahead of a human-driven IDM follower. The fault is an
//! additive perturbation of the HAV's achieved acceleration that persists from
//! its injection step until the end of the episode.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{fold, Cell, SafetyMatrix};
use crate::error::{Error, Result};
use crate::space::{ConcreteScenario, Fault, ScenarioKind, TestSpace};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdmParameters {
    /// Desired speed (m/s).
    pub desired_speed: f64,
    /// Desired time headway (s).
    pub time_headway: f64,
    /// Maximum acceleration (m/s^2).
    pub max_accel: f64,
    /// Comfortable deceleration (m/s^2).
    pub comfortable_decel: f64,
    /// Jam distance (m).
    pub min_gap: f64,
    pub accel_exponent: f64,
}

impl Default for IdmParameters {
    fn default() -> Self {
        IdmParameters {
            desired_speed: 15.0,
            time_headway: 1.5,
            max_accel: 1.5,
            comfortable_decel: 2.5,
            min_gap: 2.0,
            accel_exponent: 4.0,
        }
    }
}

impl IdmParameters {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("desired_speed", self.desired_speed),
            ("time_headway", self.time_headway),
            ("max_accel", self.max_accel),
            ("comfortable_decel", self.comfortable_decel),
            ("min_gap", self.min_gap),
            ("accel_exponent", self.accel_exponent),
        ];
        for (name, value) in fields {
            if !(value > 0.0) || !value.is_finite() {
                return Err(Error::config(
                    format!("simulator.idm.{name}"),
                    format!("must be positive and finite, got {value}"),
                ));
            }
        }
        Ok(())
    }

    /// Equilibrium bumper gap at speed `v` behind a leader of equal speed.
    pub fn equilibrium_gap(&self, v: f64) -> f64 {
        let free = 1.0 - (v / self.desired_speed).powf(self.accel_exponent);
        (self.min_gap + v * self.time_headway) / free.sqrt()
    }
}

/// IDM acceleration for a vehicle at speed `v` following a leader at `v_lead`
/// with bumper gap `gap`.
pub fn idm_acceleration(v: f64, v_lead: f64, gap: f64, p: &IdmParameters) -> Result<f64> {
    if !(gap > 0.0) {
        return Err(Error::Contact { gap });
    }
    let interaction = v * p.time_headway
        + v * (v - v_lead) / (2.0 * (p.max_accel * p.comfortable_decel).sqrt());
    let desired_gap = p.min_gap + interaction.max(0.0);
    Ok(p.max_accel
        * (1.0 - (v / p.desired_speed).powf(p.accel_exponent) - (desired_gap / gap).powi(2)))
}

/// IDM acceleration with no vehicle ahead.
pub fn free_road_acceleration(v: f64, p: &IdmParameters) -> f64 {
    p.max_accel * (1.0 - (v / p.desired_speed).powf(p.accel_exponent))
}

/// Time to collision for a rear vehicle closing on a front vehicle;
/// `f64::INFINITY` when the gap is not shrinking.
pub fn time_to_collision(gap: f64, v_rear: f64, v_front: f64) -> f64 {
    if v_rear > v_front {
        gap / (v_rear - v_front)
    } else {
        f64::INFINITY
    }
}

/// Initial speeds for one functional scenario kind.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitialSpeeds {
    /// Rear vehicle (m/s).
    pub follower: f64,
    /// Front vehicle (m/s).
    pub leader: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationParameters {
    /// Integration step (s).
    pub dt: f64,
    pub horizon_steps: usize,
    /// Upper bound reported for the minimum TTC (s).
    pub ttc_cap: f64,
    /// Vehicle length (m); positions are tracked at vehicle centers.
    pub vehicle_length: f64,
    /// Braking saturation applied to every controller output (m/s^2).
    pub max_decel: f64,
    pub car_following_speeds: InitialSpeeds,
    pub cut_in_speeds: InitialSpeeds,
    pub fault_sign_car_following: f64,
    pub fault_sign_cut_in: f64,
    /// Step at which the cut-in vehicle becomes the follower's leader.
    pub cut_in_completion_step: usize,
}

impl Default for SimulationParameters {
    fn default() -> Self {
        SimulationParameters {
            dt: 0.1,
            horizon_steps: 300,
            ttc_cap: 10.0,
            vehicle_length: 4.0,
            max_decel: 6.5,
            car_following_speeds: InitialSpeeds {
                follower: 20.0,
                leader: 6.0,
            },
            cut_in_speeds: InitialSpeeds {
                follower: 18.0,
                leader: 10.0,
            },
            fault_sign_car_following: 1.0,
            fault_sign_cut_in: -1.0,
            cut_in_completion_step: 0,
        }
    }
}

impl SimulationParameters {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dt", self.dt),
            ("ttc_cap", self.ttc_cap),
            ("vehicle_length", self.vehicle_length),
            ("max_decel", self.max_decel),
        ];
        for (name, value) in positive {
            if !(value > 0.0) || !value.is_finite() {
                return Err(Error::config(
                    format!("simulator.sim.{name}"),
                    format!("must be positive and finite, got {value}"),
                ));
            }
        }
        if self.horizon_steps == 0 {
            return Err(Error::config("simulator.sim.horizon_steps", "must be at least 1"));
        }
        for (name, sign) in [
            ("fault_sign_car_following", self.fault_sign_car_following),
            ("fault_sign_cut_in", self.fault_sign_cut_in),
        ] {
            if sign != 1.0 && sign != -1.0 {
                return Err(Error::config(
                    format!("simulator.sim.{name}"),
                    format!("must be +1 or -1, got {sign}"),
                ));
            }
        }
        for (name, speeds) in [
            ("car_following_speeds", self.car_following_speeds),
            ("cut_in_speeds", self.cut_in_speeds),
        ] {
            if !(speeds.follower >= 0.0 && speeds.leader >= 0.0)
                || !speeds.follower.is_finite()
                || !speeds.leader.is_finite()
            {
                return Err(Error::config(
                    format!("simulator.sim.{name}"),
                    "speeds must be finite and non-negative",
                ));
            }
        }
        if self.cut_in_completion_step >= self.horizon_steps {
            return Err(Error::config(
                "simulator.sim.cut_in_completion_step",
                format!(
                    "{} is not below horizon_steps {}",
                    self.cut_in_completion_step, self.horizon_steps
                ),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    /// Bumper-to-bumper gap (m); infinite while the cut-in is incomplete.
    pub gap: f64,
    pub v_follower: f64,
    pub v_leader: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    pub collision: bool,
    /// Closing speed at first contact (m/s), zero without collision.
    pub collision_severity: f64,
    /// Minimum TTC from the injection step onward, capped at `ttc_cap`.
    pub min_ttc: f64,
    pub safety_indicator: f64,
    pub trajectory: Option<Vec<TrajectoryPoint>>,
}

impl EpisodeResult {
    pub fn is_critical(&self) -> bool {
        self.safety_indicator > 0.0
    }
}

/// Severity of the collision when one occurred, otherwise the negated
/// minimum TTC. A contact at zero closing speed maps to zero, which is not
/// critical.
pub fn safety_indicator(e: &EpisodeResult) -> f64 {
    if e.collision {
        e.collision_severity.max(0.0)
    } else {
        -e.min_ttc
    }
}

pub fn run_episode(
    scenario: &ConcreteScenario,
    fault: Fault,
    sim: &SimulationParameters,
    idm: &IdmParameters,
) -> Result<EpisodeResult> {
    simulate(scenario, fault, sim, idm, false)
}

/// Like [`run_episode`] but also records the per-step state.
pub fn run_episode_traced(
    scenario: &ConcreteScenario,
    fault: Fault,
    sim: &SimulationParameters,
    idm: &IdmParameters,
) -> Result<EpisodeResult> {
    simulate(scenario, fault, sim, idm, true)
}

fn simulate(
    scenario: &ConcreteScenario,
    fault: Fault,
    sim: &SimulationParameters,
    idm: &IdmParameters,
    trace: bool,
) -> Result<EpisodeResult> {
    if !(fault.value >= 0.0) || !fault.value.is_finite() {
        return Err(Error::config(
            "fault.value",
            format!("must be finite and non-negative, got {}", fault.value),
        ));
    }
    if fault.injection_step >= sim.horizon_steps {
        return Err(Error::Index {
            what: "injection step",
            index: fault.injection_step,
            bound: sim.horizon_steps,
        });
    }
    if !(scenario.parameter_value > 0.0) {
        return Err(Error::config(
            "scenario.parameter_value",
            format!(
                "initial distance must be positive, got {}",
                scenario.parameter_value
            ),
        ));
    }

    let (speeds, sign, hav_is_rear, engage_step) = match scenario.kind {
        ScenarioKind::CarFollowing => {
            (sim.car_following_speeds, sim.fault_sign_car_following, true, 0)
        }
        ScenarioKind::CutIn => (
            sim.cut_in_speeds,
            sim.fault_sign_cut_in,
            false,
            sim.cut_in_completion_step,
        ),
    };

    // Center positions; the initial distance is the bumper-to-bumper gap.
    let mut x_rear = 0.0;
    let mut x_front = scenario.parameter_value + sim.vehicle_length;
    let mut v_rear = speeds.follower;
    let mut v_front = speeds.leader;
    let ttc_start = fault.injection_step.max(engage_step);
    let mut min_ttc = f64::INFINITY;
    let mut trajectory = trace.then(|| Vec::with_capacity(sim.horizon_steps + 1));

    for step in 0..=sim.horizon_steps {
        let engaged = step >= engage_step;
        if step == engage_step && engage_step > 0 {
            // the merge places the HAV at the configured distance
            x_front = x_rear + scenario.parameter_value + sim.vehicle_length;
        }
        let gap = x_front - x_rear - sim.vehicle_length;
        if let Some(t) = trajectory.as_mut() {
            t.push(TrajectoryPoint {
                gap: if engaged { gap } else { f64::INFINITY },
                v_follower: v_rear,
                v_leader: v_front,
            });
        }
        if engaged && step >= ttc_start {
            min_ttc = min_ttc.min(time_to_collision(gap, v_rear, v_front));
        }
        if step == sim.horizon_steps {
            break;
        }

        let perturbation = if step >= fault.injection_step {
            sign * fault.value
        } else {
            0.0
        };
        let mut a_rear = if engaged {
            idm_acceleration(v_rear, v_front, gap, idm)?
        } else {
            free_road_acceleration(v_rear, idm)
        }
        .max(-sim.max_decel);
        let mut a_front = if hav_is_rear {
            0.0
        } else {
            free_road_acceleration(v_front, idm).max(-sim.max_decel)
        };
        if hav_is_rear {
            a_rear += perturbation;
        } else {
            a_front += perturbation;
        }

        x_rear += v_rear * sim.dt;
        x_front += v_front * sim.dt;
        let closing = v_rear - v_front;
        v_rear = (v_rear + a_rear * sim.dt).max(0.0);
        v_front = (v_front + a_front * sim.dt).max(0.0);

        if engaged && x_front - x_rear - sim.vehicle_length <= 0.0 {
            if let Some(t) = trajectory.as_mut() {
                t.push(TrajectoryPoint {
                    gap: x_front - x_rear - sim.vehicle_length,
                    v_follower: v_rear,
                    v_leader: v_front,
                });
            }
            let mut result = EpisodeResult {
                collision: true,
                collision_severity: closing.max(0.0),
                min_ttc: 0.0,
                safety_indicator: 0.0,
                trajectory,
            };
            result.safety_indicator = safety_indicator(&result);
            return Ok(result);
        }
    }

    let mut result = EpisodeResult {
        collision: false,
        collision_severity: 0.0,
        min_ttc: min_ttc.min(sim.ttc_cap),
        safety_indicator: 0.0,
        trajectory,
    };
    result.safety_indicator = safety_indicator(&result);
    Ok(result)
}

/// Ground-truth matrix for a whole test space plus the wall-clock time spent
/// simulating it.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub matrix: SafetyMatrix,
    pub seconds: f64,
}

impl GroundTruth {
    /// Simulation time attributed to `cells` of the space, pro rata.
    pub fn seconds_for(&self, cells: usize) -> f64 {
        self.seconds * cells as f64 / self.matrix.dims.cell_count() as f64
    }
}

/// Simulates every (scenario, fault value, injection step) cell. Cells run in
/// parallel and are folded by coordinates, so the result does not depend on
/// scheduling.
pub fn simulate_full_space(
    space: &TestSpace,
    sim: &SimulationParameters,
    idm: &IdmParameters,
) -> Result<GroundTruth> {
    sim.validate()?;
    idm.validate()?;
    let dims = space.dims();
    if sim.horizon_steps < dims.steps {
        return Err(Error::config(
            "simulator.sim.horizon_steps",
            format!(
                "{} is shorter than the {} injection steps of the fault grid",
                sim.horizon_steps, dims.steps
            ),
        ));
    }
    let start = Instant::now();
    let per_scenario = dims.values * dims.steps;
    let cells = (0..dims.cell_count())
        .into_par_iter()
        .map(|flat| {
            let scenario = flat / per_scenario;
            let row = (flat % per_scenario) / dims.steps;
            let step = flat % dims.steps;
            let fault = space.fault_grid.fault_at(row, step)?;
            let result = run_episode(&space.scenarios[scenario], fault, sim, idm).map_err(|e| {
                Error::Episode {
                    scenario,
                    row,
                    col: step,
                    source: Box::new(e),
                }
            })?;
            Ok(Cell {
                scenario,
                row,
                step,
                value: result.safety_indicator,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let seconds = start.elapsed().as_secs_f64();
    Ok(GroundTruth {
        matrix: fold(&cells, dims)?,
        seconds,
    })
}
