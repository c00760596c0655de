//! Scenario configuration and the assembled problem it describes.

use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::coupling::Coupling;
use crate::error::{Error, Result};
use crate::evolution::{
    project_initial_data, GalerkinState, GalerkinSystem, InitialData, PhysicalParams, TimeSchedule,
    Trajectory,
};
use crate::fem::{FluidOperators, SolidOperators, Viscosity};
use crate::geometry::{
    build_grids, immersion_clearance, verify_assumption, FluidDomainGrid, GeometryConfig,
    MotionKind, PrescribedMotion, SolidReferenceGrid,
};
use crate::spectral::{
    build_divfree_subspace, solve_fluid_eigenproblem, solve_solid_eigenproblem, DivFreeSubspace,
    FluidEigenBasis, SolidEigenBasis,
};

pub const SCHEMA_VERSION: u32 = 1;

/// Time samples used when checking the motion at load time.
const MOTION_SAMPLES: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    pub name: String,
    pub geometry: GeometryConfig,
    pub motion: MotionKind,
    pub params: PhysicalParams,
    pub discretization: Discretization,
    pub initial: InitialSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Discretization {
    pub m: usize,
    /// Solid modes; defaults to `4 m`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<usize>,
    pub final_time: f64,
    pub dt: f64,
    pub dt_out: f64,
}

impl Discretization {
    pub fn solid_modes(&self) -> usize {
        self.r.unwrap_or(4 * self.m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    pub velocity: InitialVelocity,
    #[serde(default)]
    pub displacement: InitialDisplacement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialVelocity {
    Zero,
    FirstFluidMode {
        amplitude: f64,
    },
    /// Coefficients of the first fluid modes; missing entries are zero.
    Coefficients {
        values: Vec<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialDisplacement {
    /// `X0(s) = s`, projected on the first `m` solid modes.
    #[default]
    Reference,
    /// `beta_0 = 0`.
    Zero,
}

impl Scenario {
    pub fn from_json(text: &str, origin: &str) -> Result<Self> {
        let scenario: Scenario = serde_json::from_str(text).map_err(|source| Error::Json {
            path: origin.to_string(),
            source,
        })?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, &path.display().to_string())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    /// SHA-256 of the canonical serialization.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("scenario serializes");
        hex::encode(Sha256::digest(&canonical))
    }

    pub fn motion(&self) -> Result<PrescribedMotion> {
        PrescribedMotion::new(self.motion, self.discretization.final_time)
    }

    pub fn schedule(&self) -> Result<TimeSchedule> {
        let d = &self.discretization;
        TimeSchedule::new(d.dt, d.dt_out, d.final_time)
    }

    pub fn viscosity(&self) -> Viscosity {
        Viscosity {
            nu_f: self.params.nu_f,
            nu_s: self.params.nu_s,
            solid: self.geometry.solid.rect(),
        }
    }

    /// Checks everything that does not need the eigenbases.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Scenario(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.params.validate()?;
        let d = &self.discretization;
        if d.m == 0 {
            return Err(Error::Scenario("m must be at least 1".into()));
        }
        if d.solid_modes() < d.m {
            return Err(Error::Scenario(format!(
                "r = {} must be at least m = {}",
                d.solid_modes(),
                d.m
            )));
        }
        self.schedule()?;
        if let InitialVelocity::Coefficients { values } = &self.initial.velocity {
            if values.len() > d.m || values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Scenario(format!(
                    "initial coefficients must be finite and at most m = {} long",
                    d.m
                )));
            }
        }
        if let InitialVelocity::FirstFluidMode { amplitude } = self.initial.velocity {
            if !amplitude.is_finite() {
                return Err(Error::Scenario("non-finite initial amplitude".into()));
            }
        }

        let (fluid, solid) = build_grids(&self.geometry)?;
        let motion = self.motion()?;
        let displacement = motion.max_displacement(solid.rect(), MOTION_SAMPLES);
        let cell = fluid.grid.hx.max(fluid.grid.hy);
        let clearance = immersion_clearance(fluid.rect(), solid.rect());
        if clearance < cell + displacement {
            return Err(Error::SolidNotImmersed(format!(
                "clearance {clearance:.4} is below one fluid cell ({cell:.4}) plus the maximal displacement ({displacement:.4})"
            )));
        }
        let times: Vec<f64> = (0..=MOTION_SAMPLES)
            .map(|k| motion.final_time * k as f64 / MOTION_SAMPLES as f64)
            .collect();
        let report = verify_assumption(&motion, &solid, fluid.rect(), &times, 1e-10);
        if !report.pass {
            return Err(Error::Scenario(format!(
                "motion violates its assumptions: {report:?}"
            )));
        }
        Ok(())
    }
}

/// Fluid basis with enough modes for several Galerkin dimensions.
#[derive(Debug, Clone)]
pub struct SharedBases {
    pub fluid: FluidDomainGrid,
    pub solid: SolidReferenceGrid,
    pub fluid_ops: FluidOperators,
    pub solid_ops: SolidOperators,
    pub subspace: DivFreeSubspace,
    pub fluid_basis: FluidEigenBasis,
    pub solid_basis: SolidEigenBasis,
}

impl SharedBases {
    pub fn build(scenario: &Scenario, max_m: usize) -> Result<Self> {
        let (fluid, solid) = build_grids(&scenario.geometry)?;
        let viscosity = scenario.viscosity();
        let fluid_ops = FluidOperators::assemble(&fluid, &viscosity);
        let subspace = build_divfree_subspace(&fluid_ops.divergence)?;
        let fluid_basis = solve_fluid_eigenproblem(&fluid_ops, &subspace, &viscosity, max_m)?;
        let solid_ops = SolidOperators::assemble(&solid);
        let r = scenario.discretization.solid_modes().max(max_m);
        let solid_basis = solve_solid_eigenproblem(&solid_ops, r)?;
        Ok(SharedBases {
            fluid,
            solid,
            fluid_ops,
            solid_ops,
            subspace,
            fluid_basis,
            solid_basis,
        })
    }
}

/// A scenario with its grids, operators, bases and Galerkin system.
#[derive(Debug, Clone)]
pub struct Problem {
    pub scenario: Scenario,
    pub fluid: FluidDomainGrid,
    pub solid: SolidReferenceGrid,
    pub fluid_ops: FluidOperators,
    pub solid_ops: SolidOperators,
    pub subspace: DivFreeSubspace,
    pub fluid_basis: FluidEigenBasis,
    pub solid_basis: SolidEigenBasis,
    pub system: GalerkinSystem,
    pub schedule: TimeSchedule,
}

impl Problem {
    pub fn build(scenario: &Scenario) -> Result<Self> {
        scenario.validate()?;
        let bases = SharedBases::build(scenario, scenario.discretization.m)?;
        Self::from_bases(scenario, &bases)
    }

    /// Uses the first `m` fluid and `r` solid modes of prebuilt bases.
    pub fn from_bases(scenario: &Scenario, bases: &SharedBases) -> Result<Self> {
        let d = &scenario.discretization;
        let fluid_basis = bases.fluid_basis.truncated(d.m)?;
        let solid_basis = bases.solid_basis.truncated(d.solid_modes())?;
        let motion = scenario.motion()?;
        let coupling = Coupling::new(
            &bases.fluid,
            &bases.solid,
            &bases.solid_ops,
            &motion,
            &fluid_basis,
            &solid_basis,
        )?;
        let system = GalerkinSystem::new(coupling, scenario.params, &fluid_basis)?;
        Ok(Problem {
            scenario: scenario.clone(),
            fluid: bases.fluid.clone(),
            solid: bases.solid.clone(),
            fluid_ops: bases.fluid_ops.clone(),
            solid_ops: bases.solid_ops.clone(),
            subspace: bases.subspace.clone(),
            fluid_basis,
            solid_basis,
            system,
            schedule: scenario.schedule()?,
        })
    }

    pub fn m(&self) -> usize {
        self.fluid_basis.len()
    }

    pub fn coupling(&self) -> &Coupling {
        &self.system.coupling
    }

    pub fn initial_data(&self) -> Result<InitialData> {
        let m = self.m();
        let coefficients = match &self.scenario.initial.velocity {
            InitialVelocity::Zero => DVector::zeros(m),
            InitialVelocity::FirstFluidMode { amplitude } => {
                DVector::from_fn(m, |j, _| if j == 0 { *amplitude } else { 0.0 })
            }
            InitialVelocity::Coefficients { values } => {
                DVector::from_fn(m, |j, _| values.get(j).copied().unwrap_or(0.0))
            }
        };
        InitialData::from_fluid(&self.fluid_basis.modes * coefficients, self.coupling())
    }

    pub fn initial_state(&self) -> Result<GalerkinState> {
        let mut state = project_initial_data(
            &self.initial_data()?,
            self.coupling(),
            &self.fluid_ops,
            &self.solid_ops,
        )?;
        if self.scenario.initial.displacement == InitialDisplacement::Zero {
            state.beta.fill(0.0);
        }
        Ok(state)
    }

    pub fn run(&self) -> Result<Trajectory> {
        self.run_from(self.initial_state()?)
    }

    pub fn run_from(&self, initial: GalerkinState) -> Result<Trajectory> {
        self.system.run(initial, &self.schedule)
    }

    /// Same problem with a different time step (and output spacing kept).
    pub fn with_dt(&self, dt: f64) -> Result<Self> {
        let mut scenario = self.scenario.clone();
        scenario.discretization.dt = dt;
        let schedule = scenario.schedule()?;
        Ok(Problem {
            scenario,
            schedule,
            ..self.clone()
        })
    }
}
