//! Two-variable membrane model and stimulation protocol.
//!
//! The reaction term is of Mitchell–Schaeffer type, written for the
//! transmembrane potential `v` in mV through the normalized potential
//! `u_d = (v − v_rest)/(v_peak − v_rest)`:
//!
//! ```text
//!     I_ion(v, w) = −c (v_peak − v_rest) (w u_d² (1 − u_d)/τ_in − u_d/τ_out)
//!     dw/dt       = (1 − w)/τ_open   if u_d < u_gate
//!                   −w/τ_close       otherwise
//! ```
//!
//! This is a stand-in for a detailed ionic model. It only feeds the
//! right-hand side of each time step, so the linear solver does not depend
//! on it. Rest (`v = v_rest`, `w = 1`) is an equilibrium.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IonicParams {
    /// mV
    pub v_rest: f64,
    /// mV
    pub v_peak: f64,
    /// ms
    pub tau_in: f64,
    pub tau_out: f64,
    pub tau_open: f64,
    pub tau_close: f64,
    pub u_gate: f64,
}

impl Default for IonicParams {
    fn default() -> Self {
        IonicParams {
            v_rest: -90.0,
            v_peak: 50.0,
            tau_in: 0.3,
            tau_out: 6.0,
            tau_open: 120.0,
            tau_close: 150.0,
            u_gate: 0.13,
        }
    }
}

impl IonicParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.v_peak > self.v_rest) {
            return Err(Error::InvalidArgument("ionic: v_peak must exceed v_rest".into()));
        }
        for (name, v) in [
            ("tau_in", self.tau_in),
            ("tau_out", self.tau_out),
            ("tau_open", self.tau_open),
            ("tau_close", self.tau_close),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("ionic: {name} must be positive, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.u_gate) {
            return Err(Error::InvalidArgument(format!("ionic: u_gate must lie in [0, 1], got {}", self.u_gate)));
        }
        Ok(())
    }

    pub fn normalized(&self, v: f64) -> f64 {
        (v - self.v_rest) / (self.v_peak - self.v_rest)
    }
}

/// Ionic current in μA/cm² for membrane capacitance `c_m` in μF/cm².
pub fn i_ion(v: f64, w: f64, c_m: f64, p: &IonicParams) -> f64 {
    let u = p.normalized(v);
    let j_in = w * u * u * (1.0 - u) / p.tau_in;
    let j_out = u / p.tau_out;
    -c_m * (p.v_peak - p.v_rest) * (j_in - j_out)
}

/// One explicit Euler step of the gate equation, clamped to `[0, 1]`.
pub fn gate_update(w: f64, v: f64, dt: f64, p: &IonicParams) -> f64 {
    let rate = if p.normalized(v) < p.u_gate { (1.0 - w) / p.tau_open } else { -w / p.tau_close };
    (w + dt * rate).clamp(0.0, 1.0)
}

/// One stimulation site: a ball switched on at `start_ms`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StimulusSite {
    pub center: [f64; 3],
    #[serde(default)]
    pub start_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StimulusProtocol {
    pub sites: Vec<StimulusSite>,
    /// cm
    pub radius: f64,
    /// ms
    pub duration_ms: f64,
    /// μA/cm²
    pub amplitude: f64,
}

impl StimulusProtocol {
    /// One site at the center of the unit cube, at `t = 0`.
    pub fn default_3d() -> Self {
        StimulusProtocol {
            sites: vec![StimulusSite { center: [0.5, 0.5, 0.5], start_ms: 0.0 }],
            radius: 0.1,
            duration_ms: 1.0,
            amplitude: 100.0,
        }
    }

    /// Four sites in the heart block of the 2D slice; the two right-hand
    /// sites fire 5 ms after the left-hand ones.
    pub fn default_2d() -> Self {
        let site = |x: f64, y: f64, start_ms: f64| StimulusSite { center: [x, y, 0.0], start_ms };
        StimulusProtocol {
            sites: vec![
                site(0.375, 0.375, 0.0),
                site(0.375, 0.625, 0.0),
                site(0.625, 0.375, 5.0),
                site(0.625, 0.625, 5.0),
            ],
            ..Self::default_3d()
        }
    }

    pub fn default_for_dim(dim: usize) -> Self {
        if dim == 2 {
            Self::default_2d()
        } else {
            Self::default_3d()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("radius", self.radius), ("duration_ms", self.duration_ms)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("stimulus: {name} must be positive, got {v}")));
            }
        }
        if !self.amplitude.is_finite() {
            return Err(Error::InvalidArgument("stimulus: amplitude must be finite".into()));
        }
        Ok(())
    }

    /// Latest time at which any site is active.
    pub fn end_ms(&self) -> f64 {
        self.sites.iter().map(|s| s.start_ms + self.duration_ms).fold(0.0, f64::max)
    }

    /// Stimulation current at point `x` and time `t`: the amplitude inside
    /// any active ball, zero elsewhere. Overlapping sites do not add up.
    pub fn current(&self, x: [f64; 3], t: f64) -> f64 {
        let r2 = self.radius * self.radius;
        let active = self.sites.iter().any(|s| {
            let on = t >= s.start_ms && t < s.start_ms + self.duration_ms;
            let d2: f64 = (0..3).map(|a| (x[a] - s.center[a]).powi(2)).sum();
            on && d2 <= r2
        });
        if active {
            self.amplitude
        } else {
            0.0
        }
    }
}

/// [`StimulusProtocol::current`], free-function form.
pub fn stimulus(x: [f64; 3], t: f64, protocol: &StimulusProtocol) -> f64 {
    protocol.current(x, t)
}
