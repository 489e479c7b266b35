//! Closed-loop CSTR with three operating modes and nine injectable faults.
//!
//! State `(C, T, T_c, Q_c)`: reactor concentration, reactor temperature,
//! jacket temperature and coolant flow. A velocity-form PI controller drives
//! `Q_c` to hold the reactor temperature at the mode setpoint.
//!
//! ```text
//! dC/dt   = Q/V (C_i − C) − k C
//! dT/dt   = Q/V (T_i − T) + ΔH k C /(ρ C_p) − UA/(ρ C_p V) (T − T_c)
//! dT_c/dt = Q_c/V_c (T_ci − T_c) + UA/(ρ_c C_pc V_c) (T − T_c)
//! k = k₀ exp(−E/RT),  UA = a Q_c^b
//! ```

mod io;
mod params;

pub use io::{export_run, import_run, read_run_csv, RunManifest, RunTable, RUN_SCHEMA_VERSION};
pub use params::{CstrParams, FaultId, FaultSpec, FaultTarget, ModeId, ModeSpec, Profile, VARIABLES};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Divergence bound on any state magnitude.
const DIVERGENCE_LIMIT: f64 = 1e6;

/// One sampled trajectory, simulated or ingested.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimRun {
    pub mode_id: String,
    pub fault_id: String,
    pub variables: Vec<String>,
    pub sample_interval_min: f64,
    /// Row-major `n_samples × variables.len()`.
    pub measurements: Vec<f64>,
    pub onset_index: usize,
    pub seed: u64,
    /// `None` for externally produced series.
    pub params_snapshot: Option<CstrParams>,
}

impl SimRun {
    pub fn n_vars(&self) -> usize {
        self.variables.len()
    }

    pub fn n_samples(&self) -> usize {
        self.measurements.len() / self.n_vars().max(1)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let v = self.n_vars();
        &self.measurements[i * v..(i + 1) * v]
    }

    /// Time series of one variable.
    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n_samples()).map(|i| self.row(i)[j]).collect()
    }

    pub fn column_by_name(&self, name: &str) -> Option<Vec<f64>> {
        self.variables.iter().position(|v| v == name).map(|j| self.column(j))
    }
}

/// Exogenous quantities in effect at time `t`.
#[derive(Debug, Clone, Copy)]
struct Drive {
    c_i: f64,
    t_i: f64,
    t_ci: f64,
    a: f64,
    b: f64,
    /// Temperature-sensor drift and its rate; the controller sees the drifted value.
    t_drift: f64,
    t_drift_rate: f64,
}

/// Exogenous quantities at `t`. `active` decides whether the fault applies;
/// the integrator fixes it per step so that a step ending exactly at onset
/// still sees the pre-fault inputs in all its stages.
fn drive(p: &CstrParams, fault: &FaultSpec, t: f64, active: bool) -> Drive {
    let mut d = Drive {
        c_i: p.c_i0,
        t_i: p.t_i0,
        t_ci: p.t_ci0,
        a: p.a0,
        b: p.b0,
        t_drift: 0.0,
        t_drift_rate: 0.0,
    };
    if !active {
        return d;
    }
    match fault.target {
        FaultTarget::InletConcentration => d.c_i = fault.apply(p.c_i0, t),
        FaultTarget::InletTemperature => d.t_i = fault.apply(p.t_i0, t),
        FaultTarget::CoolantInletTemperature => d.t_ci = fault.apply(p.t_ci0, t),
        FaultTarget::HeatTransferA => d.a = fault.apply(p.a0, t),
        FaultTarget::HeatTransferB => d.b = fault.apply(p.b0, t),
        FaultTarget::TemperatureSensor => {
            d.t_drift = fault.apply(0.0, t);
            d.t_drift_rate = fault.rate_at(t);
        }
        _ => {}
    }
    d
}

/// Closed-loop right-hand side. `w` is the process noise on the three
/// physical state derivatives.
fn rhs(p: &CstrParams, x: [f64; 4], setpoint: f64, d: &Drive, w: [f64; 3]) -> [f64; 4] {
    let [c, temp, tc, qc] = x;
    let k = p.k0 * (-p.e_over_r / temp).exp();
    let ua = d.a * qc.max(0.0).powf(d.b);
    let dilution = p.q / p.v;
    let dc = dilution * (d.c_i - c) - k * c + w[0];
    let dt = dilution * (d.t_i - temp) + p.dhr * k * c / (p.rho * p.cp)
        - ua / (p.rho * p.cp * p.v) * (temp - tc)
        + w[1];
    let dtc = qc / p.v_c * (d.t_ci - tc) + ua / (p.rho_c * p.cpc * p.v_c) * (temp - tc) + w[2];
    // Velocity-form PI on the measured temperature; positive error opens the coolant valve.
    let error = temp + d.t_drift - setpoint;
    let mut dq = p.kp * (dt + d.t_drift_rate) + p.ki * error;
    if (qc <= 0.0 && dq < 0.0) || (qc >= p.qc_max && dq > 0.0) {
        dq = 0.0;
    }
    [dc, dt, dtc, dq]
}

fn axpy(x: [f64; 4], h: f64, k: [f64; 4]) -> [f64; 4] {
    [x[0] + h * k[0], x[1] + h * k[1], x[2] + h * k[2], x[3] + h * k[3]]
}

/// Integrates one sample interval with fixed-step RK4; process noise is held
/// constant over the interval so step refinement does not change its realization.
fn advance(
    p: &CstrParams,
    mut x: [f64; 4],
    t0: f64,
    setpoint: f64,
    fault: &FaultSpec,
    w: [f64; 3],
    dt: f64,
    steps: usize,
) -> Result<[f64; 4]> {
    for s in 0..steps {
        let t = t0 + s as f64 * dt;
        let on = fault.active_at(t);
        let d0 = drive(p, fault, t, on);
        let dh = drive(p, fault, t + 0.5 * dt, on);
        let d1 = drive(p, fault, t + dt, on);
        let k1 = rhs(p, x, setpoint, &d0, w);
        let k2 = rhs(p, axpy(x, 0.5 * dt, k1), setpoint, &dh, w);
        let k3 = rhs(p, axpy(x, 0.5 * dt, k2), setpoint, &dh, w);
        let k4 = rhs(p, axpy(x, dt, k3), setpoint, &d1, w);
        for i in 0..4 {
            x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        x[3] = x[3].clamp(0.0, p.qc_max);
        if x.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_LIMIT) {
            return Err(Error::Simulation {
                time_min: t + dt,
                state: x.to_vec(),
            });
        }
    }
    Ok(x)
}

/// Measured values of the monitored variables at time `t`, before noise.
fn measure(p: &CstrParams, x: [f64; 4], fault: &FaultSpec, t: f64) -> [f64; 7] {
    let d = drive(p, fault, t, fault.active_at(t));
    let [c, temp, tc, qc] = x;
    let mut m = [d.c_i, d.t_i, c, temp + d.t_drift, tc, d.t_ci, qc];
    if fault.active_at(t) {
        match fault.target {
            FaultTarget::ConcentrationSensor => m[2] = fault.apply(c, t),
            FaultTarget::CoolantFlowSensor => m[6] = fault.apply(qc, t),
            FaultTarget::JacketTemperatureSensor => m[4] = fault.apply(tc, t),
            _ => {}
        }
    }
    m
}

/// Simulates one run from the noiseless steady state of `mode`.
///
/// Deterministic in `(params, mode, fault, seed)`.
pub fn simulate(params: &CstrParams, mode: &ModeSpec, fault: &FaultSpec, seed: u64) -> Result<SimRun> {
    params.validate()?;
    let columns = params.variable_indices()?;
    let x0 = steady_state(params, mode)?;
    let steps = params.steps_per_sample()?;
    let n_samples = params.n_samples();
    let si = params.sample_interval_min;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gauss = || -> f64 { StandardNormal.sample(&mut rng) };
    let mut x = x0;
    let mut data = Vec::with_capacity(n_samples * columns.len());
    for m in 0..n_samples {
        let t = m as f64 * si;
        let mut w = [0.0; 3];
        for (wi, s) in w.iter_mut().zip(params.noise_std) {
            let z = gauss();
            *wi = s * z;
        }
        let mut meas = measure(params, x, fault, t);
        for (mi, s) in meas.iter_mut().zip(params.meas_noise_std) {
            let z = gauss();
            *mi += s * z;
        }
        data.extend(columns.iter().map(|&j| meas[j]));
        x = advance(params, x, t, mode.temp_setpoint, fault, w, params.dt_min, steps)?;
    }
    Ok(SimRun {
        mode_id: mode.mode_id.to_string(),
        fault_id: fault.fault_id.to_string(),
        variables: columns.iter().map(|&j| VARIABLES[j].to_string()).collect(),
        sample_interval_min: si,
        measurements: data,
        onset_index: (fault.onset_min / si).round() as usize,
        seed,
        params_snapshot: Some(params.clone()),
    })
}

/// Drift-rate stability test on the window `x[0..window]`, with unit
/// sample spacing: `|x[k] − x[0]| / k < threshold` for every `k` in the window.
///
/// Returns `false` when `x` is shorter than `window`.
pub fn check_mode_stability(x: &[f64], threshold: f64, window: usize) -> Result<bool> {
    if window < 2 {
        return Err(Error::Config(format!("stability window must be ≥ 2, got {window}")));
    }
    if x.len() < window {
        return Ok(false);
    }
    let x0 = x[0];
    Ok((1..window).all(|k| (x[k] - x0).abs() / (k as f64) < threshold))
}

/// Whether every window of length `window` in `x` passes [`check_mode_stability`].
pub fn stable_everywhere(x: &[f64], threshold: f64, window: usize) -> Result<bool> {
    if x.len() < window {
        return check_mode_stability(x, threshold, window);
    }
    for start in 0..=x.len() - window {
        if !check_mode_stability(&x[start..], threshold, window)? {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Stability threshold (K/min) and window (min) used for steady operation.
pub const STABILITY_THRESHOLD: f64 = 0.01;
pub const STABILITY_WINDOW_MIN: usize = 60;

/// Noiseless closed-loop right-hand side at `x` with healthy inputs and the
/// controller output held (its own derivative excluded).
pub fn residual(params: &CstrParams, mode: &ModeSpec, x: [f64; 4]) -> [f64; 3] {
    let d = drive(params, &FaultSpec::healthy(), 0.0, false);
    let r = rhs(params, x, mode.temp_setpoint, &d, [0.0; 3]);
    [r[0], r[1], r[2]]
}

/// Runs the noiseless healthy loop in 60-minute chunks until all states pass
/// the stability test and the plant residual is negligible.
pub fn steady_state(params: &CstrParams, mode: &ModeSpec) -> Result<[f64; 4]> {
    params.validate()?;
    let steps = params.steps_per_sample()?;
    let healthy = FaultSpec::healthy();
    let si = params.sample_interval_min;
    let chunk = ((STABILITY_WINDOW_MIN as f64) / si).round().max(2.0) as usize;
    let max_samples = (params.steady_state_max_min / si).round() as usize;

    let mut x = params.initial_guess(mode.temp_setpoint);
    let mut traj: Vec<[f64; 4]> = Vec::with_capacity(chunk);
    let mut elapsed = 0;
    while elapsed < max_samples {
        traj.clear();
        for _ in 0..chunk {
            traj.push(x);
            x = advance(params, x, elapsed as f64 * si, mode.temp_setpoint, &healthy, [0.0; 3], params.dt_min, steps)?;
            elapsed += 1;
        }
        traj.push(x);
        let mut stable = true;
        for i in 0..4 {
            let series: Vec<f64> = traj.iter().map(|s| s[i] / si).collect();
            stable &= check_mode_stability(&series, STABILITY_THRESHOLD, series.len())?;
        }
        let r = residual(params, mode, x);
        let offset = (x[1] - mode.temp_setpoint).abs();
        if stable && r.iter().all(|v| v.abs() < 1e-6) && offset < 1e-3 {
            return Ok(x);
        }
    }
    Err(Error::Config(format!(
        "closed loop at setpoint {} K did not settle within {} min (state {:?})",
        mode.temp_setpoint, params.steady_state_max_min, x
    )))
}
