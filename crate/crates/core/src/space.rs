//! Scenario and fault spaces.
//!
//! A test space is the product of a list of concrete scenarios (enumerated
//! from parameter ranges of functional scenarios) and an `I x J` lattice of
//! fault values and injection steps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used when counting lattice points in a floating-point range.
const RANGE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    CarFollowing,
    CutIn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionalScenario {
    pub id: u32,
    pub kind: ScenarioKind,
    pub parameter_name: String,
    pub parameter_min: f64,
    pub parameter_max: f64,
    pub parameter_step: f64,
}

impl FunctionalScenario {
    fn validate(&self) -> Result<()> {
        let field = |name: &str| format!("space.functional_scenarios[{}].{name}", self.id);
        if !(self.parameter_step > 0.0) || !self.parameter_step.is_finite() {
            return Err(Error::config(
                field("parameter_step"),
                format!("must be positive, got {}", self.parameter_step),
            ));
        }
        if !self.parameter_min.is_finite() || !self.parameter_max.is_finite() {
            return Err(Error::config(field("parameter_min"), "range must be finite"));
        }
        if self.parameter_max < self.parameter_min {
            return Err(Error::config(
                field("parameter_max"),
                format!(
                    "max {} is below min {}",
                    self.parameter_max, self.parameter_min
                ),
            ));
        }
        Ok(())
    }

    /// Number of concrete scenarios, `floor((max - min) / step) + 1`.
    pub fn scenario_count(&self) -> usize {
        let span = (self.parameter_max - self.parameter_min) / self.parameter_step;
        (span + RANGE_EPS).floor() as usize + 1
    }

    pub fn parameter_at(&self, local_index: usize) -> f64 {
        self.parameter_min + local_index as f64 * self.parameter_step
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcreteScenario {
    pub global_index: usize,
    pub functional_id: u32,
    pub kind: ScenarioKind,
    /// Position within its functional scenario, ascending by parameter value.
    pub local_index: usize,
    pub parameter_value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaultGrid {
    /// Fault value of row 0 (m/s^2).
    pub value_min: f64,
    pub value_step: f64,
    /// Number of fault values `I`.
    pub value_count: usize,
    /// Number of injection steps `J`.
    pub time_step_count: usize,
}

/// A single injected fault: acceleration perturbation magnitude and the
/// simulation step at which it starts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fault {
    pub value: f64,
    pub injection_step: usize,
}

impl FaultGrid {
    fn validate(&self) -> Result<()> {
        if self.value_count == 0 {
            return Err(Error::config("space.fault_grid.value_count", "must be at least 1"));
        }
        if self.time_step_count == 0 {
            return Err(Error::config(
                "space.fault_grid.time_step_count",
                "must be at least 1",
            ));
        }
        if !(self.value_step > 0.0) || !self.value_step.is_finite() {
            return Err(Error::config(
                "space.fault_grid.value_step",
                format!("must be positive, got {}", self.value_step),
            ));
        }
        if !self.value_min.is_finite() {
            return Err(Error::config("space.fault_grid.value_min", "must be finite"));
        }
        Ok(())
    }

    pub fn fault_at(&self, row: usize, col: usize) -> Result<Fault> {
        if row >= self.value_count {
            return Err(Error::Index {
                what: "fault value",
                index: row,
                bound: self.value_count,
            });
        }
        if col >= self.time_step_count {
            return Err(Error::Index {
                what: "injection step",
                index: col,
                bound: self.time_step_count,
            });
        }
        Ok(Fault {
            value: self.value_min + row as f64 * self.value_step,
            injection_step: col,
        })
    }

    pub fn cells_per_scenario(&self) -> usize {
        self.value_count * self.time_step_count
    }
}

/// Serializable description of a test space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceConfig {
    pub functional_scenarios: Vec<FunctionalScenario>,
    pub fault_grid: FaultGrid,
}

impl Default for SpaceConfig {
    /// Cut-in distances 5..=13 m and car-following distances 16..=25 m, fault
    /// values 0..=4.9 m/s^2 and 50 injection steps.
    fn default() -> Self {
        SpaceConfig {
            functional_scenarios: vec![
                FunctionalScenario {
                    id: 1,
                    kind: ScenarioKind::CutIn,
                    parameter_name: "initial distance".into(),
                    parameter_min: 5.0,
                    parameter_max: 13.0,
                    parameter_step: 1.0,
                },
                FunctionalScenario {
                    id: 2,
                    kind: ScenarioKind::CarFollowing,
                    parameter_name: "initial distance".into(),
                    parameter_min: 16.0,
                    parameter_max: 25.0,
                    parameter_step: 1.0,
                },
            ],
            fault_grid: FaultGrid {
                value_min: 0.0,
                value_step: 0.1,
                value_count: 50,
                time_step_count: 50,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestSpace {
    pub functional_scenarios: Vec<FunctionalScenario>,
    pub scenarios: Vec<ConcreteScenario>,
    pub fault_grid: FaultGrid,
}

impl TestSpace {
    /// Validates the configuration and enumerates concrete scenarios: all of
    /// the first functional scenario in ascending parameter order, then the
    /// second, and so on.
    pub fn build(config: &SpaceConfig) -> Result<Self> {
        if config.functional_scenarios.is_empty() {
            return Err(Error::config(
                "space.functional_scenarios",
                "at least one functional scenario is required",
            ));
        }
        config.fault_grid.validate()?;
        let mut scenarios = Vec::new();
        for functional in &config.functional_scenarios {
            functional.validate()?;
            for local_index in 0..functional.scenario_count() {
                scenarios.push(ConcreteScenario {
                    global_index: scenarios.len(),
                    functional_id: functional.id,
                    kind: functional.kind,
                    local_index,
                    parameter_value: functional.parameter_at(local_index),
                });
            }
        }
        Ok(TestSpace {
            functional_scenarios: config.functional_scenarios.clone(),
            scenarios,
            fault_grid: config.fault_grid,
        })
    }

    /// Number of concrete scenarios `K`.
    pub fn scenario_count(&self) -> usize {
        self.scenarios.len()
    }

    pub fn dims(&self) -> Dims {
        Dims {
            values: self.fault_grid.value_count,
            steps: self.fault_grid.time_step_count,
            scenarios: self.scenarios.len(),
        }
    }

    pub fn cell_count(&self) -> usize {
        self.dims().cell_count()
    }

    pub fn functional(&self, id: u32) -> Option<&FunctionalScenario> {
        self.functional_scenarios.iter().find(|f| f.id == id)
    }
}

/// Shape of the folded test space: `I` fault values, `J` injection steps and
/// `K` scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub values: usize,
    pub steps: usize,
    pub scenarios: usize,
}

impl Dims {
    pub fn new(values: usize, steps: usize, scenarios: usize) -> Self {
        Dims {
            values,
            steps,
            scenarios,
        }
    }

    /// Column count `M = J * K` of the folded matrix.
    pub fn columns(&self) -> usize {
        self.steps * self.scenarios
    }

    pub fn cell_count(&self) -> usize {
        self.values * self.steps * self.scenarios
    }

    pub fn column_of(&self, step: usize, scenario: usize) -> usize {
        step * self.scenarios + scenario
    }

    /// Inverse of [`Dims::column_of`]: `(step, scenario)`.
    pub fn split_column(&self, column: usize) -> (usize, usize) {
        (column / self.scenarios, column % self.scenarios)
    }
}

impl std::fmt::Display for Dims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "I={} J={} K={} ({}x{})",
            self.values,
            self.steps,
            self.scenarios,
            self.values,
            self.columns()
        )
    }
}
