//! Discrete-time dynamics behind a uniform black-box step interface.
//!
//! Two built-in models: a constant-speed Dubins car (`dubins3`) and a planar
//! 4D quadrotor driven by pitch/roll commands (`quad4d`).

use std::f64::consts::PI;
use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Gravitational acceleration, m/s².
pub const GRAVITY: f64 = 9.81;

macro_rules! real_vector {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub Vec<f64>);

        impl $name {
            pub fn new(values: Vec<f64>) -> Self {
                Self(values)
            }

            pub fn zeros(dim: usize) -> Self {
                Self(vec![0.0; dim])
            }

            pub fn as_slice(&self) -> &[f64] {
                &self.0
            }

            pub fn into_inner(self) -> Vec<f64> {
                self.0
            }
        }

        impl Deref for $name {
            type Target = [f64];
            fn deref(&self) -> &[f64] {
                &self.0
            }
        }

        impl From<Vec<f64>> for $name {
            fn from(v: Vec<f64>) -> Self {
                Self(v)
            }
        }

        impl From<&[f64]> for $name {
            fn from(v: &[f64]) -> Self {
                Self(v.to_vec())
            }
        }
    };
}

real_vector!(
    /// System state `x`. Length and units are defined by the owning model.
    State
);
real_vector!(
    /// Control input `u` (or the combined input `w = u + d`).
    Control
);
real_vector!(
    /// Additive input disturbance `d`.
    Disturbance
);

/// Wraps an angle to `(-π, π]`.
pub fn wrap_angle(theta: f64) -> f64 {
    PI - (PI - theta).rem_euclid(2.0 * PI)
}

/// Black-box discrete transition `x' = f(x, u)`.
///
/// `step_into` is the allocation-free hot path used by the samplers; it does
/// no dimension or bound checking. `step` is the checked entry point.
pub trait Dynamics: Send + Sync {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    fn dt(&self) -> f64;
    /// Symmetric per-component control bound `ū`.
    fn control_bound(&self) -> &[f64];
    fn step_into(&self, x: &[f64], u: &[f64], out: &mut [f64]);

    /// Planar position used by the safety margin.
    fn position(&self, x: &[f64]) -> [f64; 2] {
        [x[0], x[1]]
    }

    fn step(&self, x: &State, u: &Control) -> Result<State> {
        self.check_dims(x, u)?;
        let mut out = vec![0.0; self.state_dim()];
        self.step_into(x, u, &mut out);
        Ok(State(out))
    }

    fn check_dims(&self, x: &[f64], u: &[f64]) -> Result<()> {
        if x.len() != self.state_dim() {
            return Err(Error::Contract(format!("state has length {}, model expects {}", x.len(), self.state_dim())));
        }
        if u.len() != self.control_dim() {
            return Err(Error::Contract(format!(
                "control has length {}, model expects {}",
                u.len(),
                self.control_dim()
            )));
        }
        Ok(())
    }

    /// Component-wise clamp to `±ū`.
    fn clamp_control(&self, u: &mut [f64]) {
        for (ui, &b) in u.iter_mut().zip(self.control_bound()) {
            *ui = ui.clamp(-b, b);
        }
    }
}

#[derive(Serialize, Deserialize)]
struct DubinsParams {
    dt: f64,
    speed: f64,
    omega_max: f64,
}

/// Constant-speed Dubins car. State `(p_x, p_y, θ)`, control `ω`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "DubinsParams", into = "DubinsParams")]
pub struct Dubins {
    pub dt: f64,
    pub speed: f64,
    bound: [f64; 1],
}

impl Dubins {
    pub fn new(dt: f64, speed: f64, omega_max: f64) -> Self {
        Self { dt, speed, bound: [omega_max] }
    }

    pub fn omega_max(&self) -> f64 {
        self.bound[0]
    }
}

impl From<DubinsParams> for Dubins {
    fn from(p: DubinsParams) -> Self {
        Self::new(p.dt, p.speed, p.omega_max)
    }
}

impl From<Dubins> for DubinsParams {
    fn from(d: Dubins) -> Self {
        Self { dt: d.dt, speed: d.speed, omega_max: d.bound[0] }
    }
}

impl Default for Dubins {
    fn default() -> Self {
        Self::new(0.1, 1.0, 1.0)
    }
}

impl Dynamics for Dubins {
    fn state_dim(&self) -> usize {
        3
    }
    fn control_dim(&self) -> usize {
        1
    }
    fn dt(&self) -> f64 {
        self.dt
    }
    fn control_bound(&self) -> &[f64] {
        &self.bound
    }

    fn step_into(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        let theta = x[2];
        let (s, c) = theta.sin_cos();
        out[0] = x[0] + self.dt * self.speed * c;
        out[1] = x[1] + self.dt * self.speed * s;
        out[2] = wrap_angle(theta + self.dt * u[0]);
    }
}

#[derive(Serialize, Deserialize)]
struct Quad4dParams {
    dt: f64,
    tilt_max: f64,
}

/// Planar quadrotor. State `(p_x, p_y, v_x, v_y)`, control (pitch `θ`, roll `φ`).
/// Forward-Euler integration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "Quad4dParams", into = "Quad4dParams")]
pub struct Quad4d {
    pub dt: f64,
    bound: [f64; 2],
}

impl Quad4d {
    pub fn new(dt: f64, tilt_max: f64) -> Self {
        Self { dt, bound: [tilt_max; 2] }
    }

    pub fn tilt_max(&self) -> f64 {
        self.bound[0]
    }
}

impl From<Quad4dParams> for Quad4d {
    fn from(p: Quad4dParams) -> Self {
        Self::new(p.dt, p.tilt_max)
    }
}

impl From<Quad4d> for Quad4dParams {
    fn from(q: Quad4d) -> Self {
        Self { dt: q.dt, tilt_max: q.bound[0] }
    }
}

impl Default for Quad4d {
    fn default() -> Self {
        Self::new(0.1, 0.1745)
    }
}

impl Dynamics for Quad4d {
    fn state_dim(&self) -> usize {
        4
    }
    fn control_dim(&self) -> usize {
        2
    }
    fn dt(&self) -> f64 {
        self.dt
    }
    fn control_bound(&self) -> &[f64] {
        &self.bound
    }

    fn step_into(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        let dt = self.dt;
        out[0] = x[0] + dt * x[2];
        out[1] = x[1] + dt * x[3];
        out[2] = x[2] + dt * GRAVITY * u[0].tan();
        out[3] = x[3] - dt * GRAVITY * u[1].tan();
    }
}

/// Model selected by string identifier in run configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id")]
pub enum Model {
    #[serde(rename = "dubins3")]
    Dubins(Dubins),
    #[serde(rename = "quad4d")]
    Quad4d(Quad4d),
}

impl Model {
    pub fn id(&self) -> &'static str {
        match self {
            Model::Dubins(_) => "dubins3",
            Model::Quad4d(_) => "quad4d",
        }
    }

    pub fn from_id(id: &str) -> Result<Self> {
        match id {
            "dubins3" => Ok(Model::Dubins(Dubins::default())),
            "quad4d" => Ok(Model::Quad4d(Quad4d::default())),
            other => Err(Error::Config(format!("unknown model id {other:?}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt() > 0.0) {
            return Err(Error::Config("model dt must be positive".into()));
        }
        if self.control_bound().iter().any(|&b| !(b > 0.0)) {
            return Err(Error::Config("control bounds must be positive".into()));
        }
        Ok(())
    }

    fn inner(&self) -> &dyn Dynamics {
        match self {
            Model::Dubins(d) => d,
            Model::Quad4d(q) => q,
        }
    }
}

impl Dynamics for Model {
    fn state_dim(&self) -> usize {
        self.inner().state_dim()
    }
    fn control_dim(&self) -> usize {
        self.inner().control_dim()
    }
    fn dt(&self) -> f64 {
        self.inner().dt()
    }
    fn control_bound(&self) -> &[f64] {
        self.inner().control_bound()
    }
    fn step_into(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        match self {
            Model::Dubins(d) => d.step_into(x, u, out),
            Model::Quad4d(q) => q.step_into(x, u, out),
        }
    }
}

/// Dubins transition with explicit `dt` and speed.
pub fn dubins_step(state: &State, omega: &Control, dt: f64, speed: f64) -> Result<State> {
    if !(dt > 0.0) {
        return Err(Error::Contract("dt must be positive".into()));
    }
    Dubins::new(dt, speed, f64::INFINITY).step(state, omega)
}

/// Quadrotor transition with explicit `dt`.
pub fn quad4d_step(state: &State, cmd: &Control, dt: f64) -> Result<State> {
    if !(dt > 0.0) {
        return Err(Error::Contract("dt must be positive".into()));
    }
    Quad4d::new(dt, f64::INFINITY).step(state, cmd)
}

/// Simulates `x_0..x_H` under `inputs`. Inputs must lie within the model's bounds.
pub fn rollout<M: Dynamics + ?Sized>(model: &M, x0: &State, inputs: &[Control]) -> Result<Vec<State>> {
    let mut traj = Vec::with_capacity(inputs.len() + 1);
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::RolloutDiverged { step: 0 });
    }
    traj.push(x0.clone());
    for (k, u) in inputs.iter().enumerate() {
        let bound = model.control_bound();
        if u.len() == bound.len() && u.iter().zip(bound).any(|(ui, b)| ui.abs() > *b) {
            return Err(Error::Contract(format!("input {k} exceeds the control bound")));
        }
        let next = model.step(&traj[k], u)?;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::RolloutDiverged { step: k + 1 });
        }
        traj.push(next);
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn dubins_examples() {
        let s = |v: &[f64]| State::from(v);
        let u = |w: f64| Control(vec![w]);
        let out = dubins_step(&s(&[0.0, 0.0, 0.0]), &u(0.0), 0.1, 1.0).unwrap();
        assert!(close(&out, &[0.1, 0.0, 0.0], 1e-15));
        let out = dubins_step(&s(&[0.0, 0.0, PI / 2.0]), &u(0.0), 0.1, 1.0).unwrap();
        assert!(close(&out, &[0.0, 0.1, PI / 2.0], 1e-15));
        let out = dubins_step(&s(&[0.0, 0.0, 0.0]), &u(1.0), 0.1, 1.0).unwrap();
        assert!(close(&out, &[0.1, 0.0, 0.1], 1e-15));
    }

    #[test]
    fn quad_examples() {
        let out = quad4d_step(&State(vec![0.0, 0.0, 1.0, 0.0]), &Control(vec![0.0, 0.0]), 0.1).unwrap();
        assert!(close(&out, &[0.1, 0.0, 1.0, 0.0], 1e-15));
        let expected = 9.81 * 0.1f64.tan() * 0.1;
        assert!((expected - 0.0984).abs() < 1e-4);
        let out = quad4d_step(&State(vec![0.0; 4]), &Control(vec![0.1, 0.0]), 0.1).unwrap();
        assert!(close(&out, &[0.0, 0.0, expected, 0.0], 1e-15));
        let out = quad4d_step(&State(vec![0.0; 4]), &Control(vec![0.0, 0.1]), 0.1).unwrap();
        assert!(close(&out, &[0.0, 0.0, 0.0, -expected], 1e-15));
    }

    #[test]
    fn dimension_mismatch_is_contract_error() {
        let err = dubins_step(&State(vec![0.0, 0.0]), &Control(vec![0.0]), 0.1, 1.0).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
        let err = Quad4d::default().step(&State(vec![0.0; 4]), &Control(vec![0.0])).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn rollout_examples() {
        let m = Dubins::default();
        let x0 = State(vec![0.0, 0.0, 0.0]);
        assert_eq!(rollout(&m, &x0, &[]).unwrap(), vec![x0.clone()]);
        let traj = rollout(&m, &x0, &vec![Control(vec![0.0]); 3]).unwrap();
        let xs: Vec<f64> = traj.iter().map(|s| s[0]).collect();
        assert!(close(&xs, &[0.0, 0.1, 0.2, 0.3], 1e-12));

        let q = Quad4d::default();
        let traj = rollout(&q, &State(vec![0.0, 0.0, 1.0, 0.0]), &vec![Control(vec![0.0, 0.0]); 10]).unwrap();
        assert_eq!(traj.len(), 11);
        assert!((traj[10][0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rollout_reports_divergence_step() {
        let q = Quad4d::default();
        let x0 = State(vec![f64::MAX, 0.0, f64::MAX, 0.0]);
        let err = rollout(&q, &x0, &vec![Control(vec![0.1, 0.0]); 3]).unwrap_err();
        // p_x overflows to +inf on the first step.
        assert!(matches!(err, Error::RolloutDiverged { step: 1 }));
    }

    #[test]
    fn rollout_rejects_out_of_bound_inputs() {
        let err = rollout(&Dubins::default(), &State(vec![0.0; 3]), &[Control(vec![1.5])]).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn model_ids_round_trip() {
        for id in ["dubins3", "quad4d"] {
            let m = Model::from_id(id).unwrap();
            assert_eq!(m.id(), id);
            let json = serde_json::to_string(&m).unwrap();
            let back: Model = serde_json::from_str(&json).unwrap();
            back.validate().unwrap();
            assert_eq!(back, m);
        }
        assert!(Model::from_id("bicycle").is_err());
    }

    #[test]
    fn quad_euler_consistency() {
        // One step of dt against two steps of dt/2 along a reference trajectory.
        let cmd = Control(vec![0.12, -0.08]);
        let x = State(vec![0.3, -0.2, 0.8, 0.4]);
        let mut ratios = Vec::new();
        for &dt in &[0.1, 0.05, 0.025] {
            let one = quad4d_step(&x, &cmd, dt).unwrap();
            let half = quad4d_step(&quad4d_step(&x, &cmd, dt / 2.0).unwrap(), &cmd, dt / 2.0).unwrap();
            let diff = one.iter().zip(half.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            ratios.push(diff / (dt * dt));
        }
        // C measured at dt = 0.1; the ratio is constant under constant commands.
        let c = ratios[0];
        assert!(c > 0.0 && c < 1.0);
        for r in &ratios {
            assert!(*r <= c * 1.001, "difference not O(dt²): {ratios:?}");
        }
    }

    proptest! {
        #[test]
        fn dubins_theta_is_wrapped(
            px in -10.0..10.0f64, py in -10.0..10.0f64,
            th in -20.0..20.0f64, w in -1.0..1.0f64,
        ) {
            let out = Dubins::default().step(&State(vec![px, py, th]), &Control(vec![w])).unwrap();
            prop_assert!(out[2] > -PI && out[2] <= PI);
        }

        #[test]
        fn steps_are_deterministic(
            x in proptest::collection::vec(-5.0..5.0f64, 4),
            u in proptest::collection::vec(-0.17..0.17f64, 2),
        ) {
            let q = Quad4d::default();
            let a = q.step(&State(x.clone()), &Control(u.clone())).unwrap();
            let b = q.step(&State(x.clone()), &Control(u.clone())).unwrap();
            prop_assert_eq!(a.0.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                            b.0.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
            let d = Dubins::default();
            let a = d.step(&State(x[..3].to_vec()), &Control(vec![u[0]])).unwrap();
            let b = d.step(&State(x[..3].to_vec()), &Control(vec![u[0]])).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn dubins_theta_superposition(
            th in -3.0..3.0f64, u1 in -0.5..0.5f64, u2 in -0.5..0.5f64,
        ) {
            // θ' − θ is linear in ω; position components do not depend on ω.
            let d = Dubins::default();
            let x = State(vec![0.0, 0.0, th]);
            let step = |w: f64| d.step(&x, &Control(vec![w])).unwrap();
            let base = step(0.0);
            let delta = |s: &State| wrap_angle(s[2] - base[2]);
            let lhs = delta(&step(u1 + u2));
            let rhs = delta(&step(u1)) + delta(&step(u2));
            prop_assert!((lhs - rhs).abs() < 1e-14);
            prop_assert_eq!(step(u1)[0], base[0]);
            prop_assert_eq!(step(u1)[1], base[1]);
        }
    }
}
