use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Every quantity the plant can report, in default column order.
pub const VARIABLES: [&str; 7] = ["C_i", "T_i", "C", "T", "T_c", "T_ci", "Q_c"];

/// Plant, controller, noise and integration constants.
///
/// Units: litres, minutes, kelvin, mol, joules. The defaults put mode M1 at
/// 350 K with the coolant valve near 7 % of its range, which leaves room for
/// every fault in the table to be compensated without saturating.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CstrParams {
    pub q: f64,
    pub v: f64,
    pub v_c: f64,
    pub c_i0: f64,
    pub t_i0: f64,
    pub t_ci0: f64,
    pub k0: f64,
    pub e_over_r: f64,
    /// Magnitude of the (exothermic) reaction enthalpy; ΔH_r = −dhr.
    pub dhr: f64,
    pub rho: f64,
    pub rho_c: f64,
    pub cp: f64,
    pub cpc: f64,
    pub a0: f64,
    pub b0: f64,
    /// Process noise std on dC/dt, dT/dt, dT_c/dt, held per sample interval.
    pub noise_std: [f64; 3],
    /// Measurement noise std per quantity, in `VARIABLES` order.
    pub meas_noise_std: [f64; 7],
    pub kp: f64,
    pub ki: f64,
    pub qc_max: f64,
    /// M1 temperature setpoint; M2 and M3 sit 5 K and 10 K above it.
    pub base_setpoint: f64,
    pub dt_min: f64,
    pub sample_interval_min: f64,
    pub duration_min: f64,
    pub steady_state_max_min: f64,
    /// Monitored subset of `VARIABLES`, in output column order.
    pub variables: Vec<String>,
}

impl Default for CstrParams {
    fn default() -> Self {
        CstrParams {
            q: 10.0,
            v: 10.0,
            v_c: 5.0,
            c_i0: 1.0,
            t_i0: 350.0,
            t_ci0: 290.0,
            k0: 1.4e7,
            e_over_r: 6000.0,
            dhr: 2e5,
            rho: 1000.0,
            rho_c: 1000.0,
            cp: 4.184,
            cpc: 4.184,
            a0: 7000.0,
            b0: 0.5,
            noise_std: [2e-3, 0.1, 0.1],
            meas_noise_std: [5e-3, 0.1, 5e-3, 0.1, 0.1, 0.1, 0.05],
            kp: 2.0,
            ki: 0.5,
            qc_max: 100.0,
            base_setpoint: 350.0,
            dt_min: 0.05,
            sample_interval_min: 1.0,
            duration_min: 1200.0,
            steady_state_max_min: 2000.0,
            variables: VARIABLES.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl CstrParams {
    /// Same plant with all noise switched off.
    pub fn noiseless(&self) -> Self {
        CstrParams {
            noise_std: [0.0; 3],
            meas_noise_std: [0.0; 7],
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("q", self.q),
            ("v", self.v),
            ("v_c", self.v_c),
            ("c_i0", self.c_i0),
            ("t_i0", self.t_i0),
            ("t_ci0", self.t_ci0),
            ("k0", self.k0),
            ("e_over_r", self.e_over_r),
            ("dhr", self.dhr),
            ("rho", self.rho),
            ("rho_c", self.rho_c),
            ("cp", self.cp),
            ("cpc", self.cpc),
            ("a0", self.a0),
            ("b0", self.b0),
            ("qc_max", self.qc_max),
            ("base_setpoint", self.base_setpoint),
            ("dt_min", self.dt_min),
            ("sample_interval_min", self.sample_interval_min),
            ("duration_min", self.duration_min),
            ("steady_state_max_min", self.steady_state_max_min),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("cstr.{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("kp", self.kp), ("ki", self.ki)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("cstr.{name} must be non-negative, got {v}")));
            }
        }
        if self
            .noise_std
            .iter()
            .chain(&self.meas_noise_std)
            .any(|v| !(v.is_finite() && *v >= 0.0))
        {
            return Err(Error::Config("noise standard deviations must be non-negative".into()));
        }
        self.steps_per_sample()?;
        self.variable_indices()?;
        Ok(())
    }

    /// RK4 steps per sample interval; the step must divide the interval.
    pub fn steps_per_sample(&self) -> Result<usize> {
        let n = (self.sample_interval_min / self.dt_min).round();
        if n < 1.0 || (n * self.dt_min - self.sample_interval_min).abs() > 1e-9 * self.sample_interval_min {
            return Err(Error::Config(format!(
                "integration step {} min does not divide the sample interval {} min",
                self.dt_min, self.sample_interval_min
            )));
        }
        Ok(n as usize)
    }

    pub fn n_samples(&self) -> usize {
        (self.duration_min / self.sample_interval_min).round() as usize
    }

    /// Positions in `VARIABLES` of the monitored columns.
    pub fn variable_indices(&self) -> Result<Vec<usize>> {
        if self.variables.is_empty() {
            return Err(Error::Config("cstr.variables is empty".into()));
        }
        self.variables
            .iter()
            .map(|name| {
                VARIABLES.iter().position(|v| v == name).ok_or_else(|| {
                    Error::Config(format!(
                        "unknown monitored variable `{name}`; expected one of {}",
                        VARIABLES.join(", ")
                    ))
                })
            })
            .collect()
    }

    /// Starting point for the settling run.
    pub(crate) fn initial_guess(&self, setpoint: f64) -> [f64; 4] {
        [0.6 * self.c_i0, setpoint, setpoint - 35.0, 0.05 * self.qc_max]
    }
}

/// Operating mode identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModeId {
    M1,
    M2,
    M3,
}

impl ModeId {
    pub const ALL: [ModeId; 3] = [ModeId::M1, ModeId::M2, ModeId::M3];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Setpoint offset from M1.
    pub fn setpoint_offset(self) -> f64 {
        5.0 * self.index() as f64
    }
}

impl fmt::Display for ModeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "M{}", self.index() + 1)
    }
}

impl FromStr for ModeId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ModeId::ALL
            .into_iter()
            .find(|m| m.to_string() == s)
            .ok_or_else(|| Error::Usage(format!("unknown mode `{s}`; valid modes are M1, M2, M3")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeSpec {
    pub mode_id: ModeId,
    pub temp_setpoint: f64,
}

impl ModeSpec {
    pub fn new(params: &CstrParams, mode_id: ModeId) -> Self {
        ModeSpec {
            mode_id,
            temp_setpoint: params.base_setpoint + mode_id.setpoint_offset(),
        }
    }
}

/// Health state: `H` or one of the nine faults.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FaultId {
    H,
    F1,
    F2,
    F3,
    F4,
    F5,
    F6,
    F7,
    F8,
    F9,
}

impl FaultId {
    pub const ALL: [FaultId; 10] = [
        FaultId::H,
        FaultId::F1,
        FaultId::F2,
        FaultId::F3,
        FaultId::F4,
        FaultId::F5,
        FaultId::F6,
        FaultId::F7,
        FaultId::F8,
        FaultId::F9,
    ];

    /// Class index: H = 0, Fk = k.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn valid_ids() -> String {
        FaultId::ALL.map(|f| f.to_string()).join(", ")
    }
}

impl fmt::Display for FaultId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FaultId::H => f.write_str("H"),
            other => write!(f, "F{}", other.index()),
        }
    }
}

impl FromStr for FaultId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        FaultId::ALL
            .into_iter()
            .find(|id| id.to_string() == s)
            .ok_or_else(|| {
                Error::Usage(format!("unknown fault `{s}`; valid ids are {}", FaultId::valid_ids()))
            })
    }
}

/// Quantity a fault perturbs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FaultTarget {
    None,
    InletConcentration,
    InletTemperature,
    ConcentrationSensor,
    TemperatureSensor,
    CoolantFlowSensor,
    CoolantInletTemperature,
    JacketTemperatureSensor,
    HeatTransferA,
    HeatTransferB,
}

/// Time course of a perturbation, `t` in minutes since onset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Profile {
    None,
    /// `nominal + slope · t`
    Ramp { slope: f64 },
    /// `nominal · exp(−rate · t)`
    Decay { rate: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaultSpec {
    pub fault_id: FaultId,
    pub target: FaultTarget,
    pub profile: Profile,
    pub onset_min: f64,
}

impl FaultSpec {
    pub const DEFAULT_ONSET_MIN: f64 = 200.0;

    pub fn healthy() -> Self {
        FaultSpec::table(FaultId::H)
    }

    /// The standard fault table with onset at minute 200.
    pub fn table(fault_id: FaultId) -> Self {
        use FaultTarget as T;
        let (target, profile) = match fault_id {
            FaultId::H => (T::None, Profile::None),
            FaultId::F1 => (T::InletConcentration, Profile::Ramp { slope: 0.001 }),
            FaultId::F2 => (T::InletTemperature, Profile::Ramp { slope: 0.05 }),
            FaultId::F3 => (T::ConcentrationSensor, Profile::Ramp { slope: 0.001 }),
            FaultId::F4 => (T::TemperatureSensor, Profile::Ramp { slope: 0.05 }),
            FaultId::F5 => (T::CoolantFlowSensor, Profile::Ramp { slope: -0.1 }),
            FaultId::F6 => (T::CoolantInletTemperature, Profile::Ramp { slope: 0.05 }),
            FaultId::F7 => (T::JacketTemperatureSensor, Profile::Ramp { slope: 0.05 }),
            FaultId::F8 => (T::HeatTransferA, Profile::Decay { rate: 0.0005 }),
            FaultId::F9 => (T::HeatTransferB, Profile::Decay { rate: 0.001 }),
        };
        FaultSpec {
            fault_id,
            target,
            profile,
            onset_min: FaultSpec::DEFAULT_ONSET_MIN,
        }
    }

    pub fn with_onset(mut self, onset_min: f64) -> Self {
        self.onset_min = onset_min;
        self
    }

    pub fn active_at(&self, t: f64) -> bool {
        self.profile != Profile::None && t >= self.onset_min
    }

    /// Perturbed value of a quantity whose nominal value is `nominal`.
    pub fn apply(&self, nominal: f64, t: f64) -> f64 {
        if !self.active_at(t) {
            return nominal;
        }
        let since = t - self.onset_min;
        match self.profile {
            Profile::None => nominal,
            Profile::Ramp { slope } => nominal + slope * since,
            Profile::Decay { rate } => nominal * (-rate * since).exp(),
        }
    }

    /// Time derivative of an additive ramp perturbation.
    pub fn rate_at(&self, t: f64) -> f64 {
        match self.profile {
            Profile::Ramp { slope } if self.active_at(t) => slope,
            _ => 0.0,
        }
    }
}
