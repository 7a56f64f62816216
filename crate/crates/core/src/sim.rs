//! Closed-loop simulation.
//!
//! Each base step samples the disturbances and sensor noise, runs the
//! controller (outer loop at its divided rate, inner loop every step) and then
//! integrates plant and observer together as one ODE with RK4. Controls,
//! noise and stochastic disturbances are held over the step; deterministic
//! disturbances are evaluated at every RK4 stage.

use crate::control::{
    extract_attitude, inner_loop, outer_loop, sliding_surface, AttitudeSetpoint, OuterOutput, PositionRef,
    SetpointFilter,
};
use crate::disturbance::{stream_rng, white_noise, DisturbanceBank, DisturbanceSample};
use crate::integrator::rk4_step;
use crate::model::{
    allocate_rotors, canonical_deriv, euler_rate_matrix, f2, full_nonlinear_deriv, rotation_matrix, rotor_wrench,
    thrust_direction, BodyDisturbance, RigidBodyState, RigidState, Vec3, VehicleParams, WrenchCommand,
};
use crate::observer::{gamma_dot, naive_dot, rotational_forcing, translational_forcing, FilteredDifference};
use crate::scenario::{ConfigError, NaiveDerivative, ObserverVariant, PlantKind, ScenarioConfig};
use nalgebra::{Matrix3, SVector, Vector4};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// First RNG stream used for measurement noise; disturbance sources use the
/// streams below it.
pub const NOISE_STREAM_BASE: u64 = 1 << 40;

type Ode = SVector<f64, 24>;

const PLANT: usize = 0;
const GAMMA1: usize = 12;
const GAMMA2: usize = 15;
const NAIVE1: usize = 18;
const NAIVE2: usize = 21;

/// One recorded instant of a run.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TraceSample {
    pub t: f64,
    /// True state in canonical coordinates (Euler rates in `attitude_rate`).
    pub state: RigidState,
    pub measured_velocity: Vec3,
    pub measured_attitude_rate: Vec3,
    pub reference: PositionRef,
    /// Attitude setpoint `(phi_d, theta_d, psi_d)`.
    pub attitude_ref: Vec3,
    pub e1: Vec3,
    pub e2: Vec3,
    pub s1: Vec3,
    pub s2: Vec3,
    /// Commanded acceleration vector.
    pub u_vec: Vec3,
    /// Applied total thrust (N).
    pub thrust: f64,
    /// Applied body torques (N m).
    pub torque: Vec3,
    /// Rotor speeds (rad/s); zero when allocation is off.
    pub rotor_speeds: Vector4<f64>,
    pub outer_limited: bool,
    pub torque_saturated: bool,
    pub rotor_saturated: bool,
    pub d1: Vec3,
    pub d2: Vec3,
    pub d1_hat: Vec3,
    pub d2_hat: Vec3,
    pub d1_tilde: Vec3,
    pub d2_tilde: Vec3,
    pub lyapunov: f64,
}

const XYZ: [&str; 3] = ["x", "y", "z"];
const ANG: [&str; 3] = ["phi", "theta", "psi"];

impl TraceSample {
    /// Column names in the order used by [`TraceSample::to_row`].
    pub fn columns() -> Vec<String> {
        let mut c = vec!["t".to_string()];
        let mut group = |names: [&str; 3], fmt: &dyn Fn(&str) -> String| {
            c.extend(names.iter().map(|n| fmt(n)));
        };
        group(XYZ, &|n| n.to_string());
        group(XYZ, &|n| format!("v{n}"));
        group(ANG, &|n| n.to_string());
        group(ANG, &|n| format!("{n}_dot"));
        group(XYZ, &|n| format!("v{n}_meas"));
        group(ANG, &|n| format!("{n}_dot_meas"));
        group(XYZ, &|n| format!("{n}_ref"));
        group(XYZ, &|n| format!("v{n}_ref"));
        group(XYZ, &|n| format!("a{n}_ref"));
        group(ANG, &|n| format!("{n}_d"));
        group(XYZ, &|n| format!("e1_{n}"));
        group(ANG, &|n| format!("e2_{n}"));
        group(XYZ, &|n| format!("s1_{n}"));
        group(ANG, &|n| format!("s2_{n}"));
        group(XYZ, &|n| format!("u{n}"));
        c.push("u1".into());
        c.extend(XYZ.iter().map(|n| format!("tau_{n}")));
        c.extend((1..=4).map(|i| format!("omega{i}")));
        c.extend(["outer_limited", "torque_saturated", "rotor_saturated"].map(String::from));
        c.extend(XYZ.iter().map(|n| format!("d1_{n}")));
        c.extend(ANG.iter().map(|n| format!("d2_{n}")));
        c.extend(XYZ.iter().map(|n| format!("d1_hat_{n}")));
        c.extend(ANG.iter().map(|n| format!("d2_hat_{n}")));
        c.extend(XYZ.iter().map(|n| format!("d1_tilde_{n}")));
        c.extend(ANG.iter().map(|n| format!("d2_tilde_{n}")));
        c.push("lyapunov".into());
        c
    }

    pub fn to_row(&self) -> Vec<f64> {
        let mut r = vec![self.t];
        let vecs = [
            self.state.position,
            self.state.velocity,
            self.state.attitude,
            self.state.attitude_rate,
            self.measured_velocity,
            self.measured_attitude_rate,
            self.reference.pos,
            self.reference.vel,
            self.reference.acc,
            self.attitude_ref,
            self.e1,
            self.e2,
            self.s1,
            self.s2,
            self.u_vec,
        ];
        for v in &vecs {
            r.extend(v.iter());
        }
        r.push(self.thrust);
        r.extend(self.torque.iter());
        r.extend(self.rotor_speeds.iter());
        r.extend([self.outer_limited, self.torque_saturated, self.rotor_saturated].map(|b| b as u8 as f64));
        for v in [self.d1, self.d2, self.d1_hat, self.d2_hat, self.d1_tilde, self.d2_tilde] {
            r.extend(v.iter());
        }
        r.push(self.lyapunov);
        r
    }

    /// Inverse of [`TraceSample::to_row`]; `None` on a length mismatch.
    pub fn from_row(row: &[f64]) -> Option<Self> {
        if row.len() != Self::columns().len() {
            return None;
        }
        let mut it = row.iter().copied();
        let mut next = || it.next().unwrap_or(f64::NAN);
        let t = next();
        let mut v3 = || Vec3::new(next(), next(), next());
        let position = v3();
        let velocity = v3();
        let attitude = v3();
        let attitude_rate = v3();
        let measured_velocity = v3();
        let measured_attitude_rate = v3();
        let reference = PositionRef {
            pos: v3(),
            vel: v3(),
            acc: v3(),
        };
        let attitude_ref = v3();
        let e1 = v3();
        let e2 = v3();
        let s1 = v3();
        let s2 = v3();
        let u_vec = v3();
        let thrust = next();
        let torque = Vec3::new(next(), next(), next());
        let rotor_speeds = Vector4::new(next(), next(), next(), next());
        let (outer_limited, torque_saturated, rotor_saturated) = (next() != 0.0, next() != 0.0, next() != 0.0);
        let mut v3 = || Vec3::new(next(), next(), next());
        let (d1, d2, d1_hat, d2_hat, d1_tilde, d2_tilde) = (v3(), v3(), v3(), v3(), v3(), v3());
        let lyapunov = next();
        Some(Self {
            t,
            state: RigidState {
                position,
                velocity,
                attitude,
                attitude_rate,
            },
            measured_velocity,
            measured_attitude_rate,
            reference,
            attitude_ref,
            e1,
            e2,
            s1,
            s2,
            u_vec,
            thrust,
            torque,
            rotor_speeds,
            outer_limited,
            torque_saturated,
            rotor_saturated,
            d1,
            d2,
            d1_hat,
            d2_hat,
            d1_tilde,
            d2_tilde,
            lyapunov,
        })
    }

    /// Disturbance channel `j` (x, y, z, phi, theta, psi).
    pub fn disturbance(&self, j: usize) -> f64 {
        if j < 3 {
            self.d1[j]
        } else {
            self.d2[j - 3]
        }
    }

    /// Estimation error on channel `j`.
    pub fn estimation_error(&self, j: usize) -> f64 {
        if j < 3 {
            self.d1_tilde[j]
        } else {
            self.d2_tilde[j - 3]
        }
    }

    /// Estimate on channel `j`.
    pub fn estimate(&self, j: usize) -> f64 {
        if j < 3 {
            self.d1_hat[j]
        } else {
            self.d2_hat[j - 3]
        }
    }

    /// Tracking error on channel `j` in the order (x, y, z, psi, phi, theta).
    pub fn tracking_error(&self, j: usize) -> f64 {
        match j {
            0..=2 => self.e1[j],
            3 => self.e2.z,
            4 => self.e2.x,
            _ => self.e2.y,
        }
    }
}

/// `V = (|s1|^2 + |s2|^2 + |d1_tilde|^2 + |d2_tilde|^2) / 2`.
pub fn lyapunov(s1: &Vec3, s2: &Vec3, d1_tilde: &Vec3, d2_tilde: &Vec3) -> f64 {
    0.5 * (s1.norm_squared() + s2.norm_squared() + d1_tilde.norm_squared() + d2_tilde.norm_squared())
}

pub fn lyapunov_value(sample: &TraceSample) -> f64 {
    lyapunov(&sample.s1, &sample.s2, &sample.d1_tilde, &sample.d2_tilde)
}

/// Uniformly sampled record of a run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimTrace {
    pub name: String,
    /// The scenario contains a synthetic stand-in disturbance.
    pub synthetic: bool,
    pub dt: f64,
    pub sample_interval: f64,
    pub substeps: u32,
    pub samples: Vec<TraceSample>,
    pub final_time: f64,
    pub final_state: RigidState,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("simulation diverged at t = {t}: {reason}")]
    Diverged {
        t: f64,
        reason: String,
        trace: Box<SimTrace>,
    },
}

/// Time derivative of `H(eta)` along `eta'`.
fn euler_rate_matrix_dot(eta: &Vec3, eta_dot: &Vec3) -> Matrix3<f64> {
    let (sphi, cphi) = eta.x.sin_cos();
    let (sth, cth) = eta.y.sin_cos();
    let tth = sth / cth;
    let sec2 = 1.0 / (cth * cth);
    let d_phi = Matrix3::new(
        0.0,
        cphi * tth,
        -sphi * tth,
        0.0,
        -sphi,
        -cphi,
        0.0,
        cphi / cth,
        -sphi / cth,
    );
    let d_theta = Matrix3::new(
        0.0,
        sphi * sec2,
        cphi * sec2,
        0.0,
        0.0,
        0.0,
        0.0,
        sphi * tth / cth,
        cphi * tth / cth,
    );
    d_phi * eta_dot.x + d_theta * eta_dot.y
}

/// Plant quantities seen by the controller and observer.
struct PlantView {
    position: Vec3,
    velocity: Vec3,
    attitude: Vec3,
    /// Euler-angle rates.
    x4: Vec3,
}

fn plant_view(kind: PlantKind, x: &Ode, p: &VehicleParams) -> Option<PlantView> {
    let s = &x.as_slice()[PLANT..PLANT + 12];
    match kind {
        PlantKind::Canonical => {
            let st = RigidState::from_slice(s);
            Some(PlantView {
                position: st.position,
                velocity: st.velocity,
                attitude: st.attitude,
                x4: st.attitude_rate,
            })
        }
        PlantKind::FullNonlinear => {
            let st = RigidBodyState::from_slice(s);
            let h = euler_rate_matrix(&st.attitude, p.gimbal_guard).ok()?;
            Some(PlantView {
                position: st.position,
                velocity: st.velocity,
                attitude: st.attitude,
                x4: h * st.body_rate,
            })
        }
    }
}

/// Inputs held constant over one base step.
struct Held<'a> {
    cfg: &'a ScenarioConfig,
    bank: &'a DisturbanceBank,
    wrench: WrenchCommand,
    noise2: Vec3,
    noise4: Vec3,
    /// Filtered derivative estimates for the naive observer, when used.
    xdot1: Option<Vec3>,
    xdot2: Option<Vec3>,
}

fn put(out: &mut Ode, at: usize, v: &Vec3) {
    out.fixed_rows_mut::<3>(at).copy_from(v);
}

fn get(x: &Ode, at: usize) -> Vec3 {
    x.fixed_rows::<3>(at).into_owned()
}

fn coupled_deriv(t: f64, x: &Ode, h: &Held) -> Ode {
    let p = &h.cfg.vehicle;
    let mut out = Ode::zeros();
    let s = &x.as_slice()[PLANT..PLANT + 12];
    let u2vec = h.wrench.angular_accel(p);
    let (u1vec, vdot, x2, x4, x4dot);
    match h.cfg.plant {
        PlantKind::Canonical => {
            let st = RigidState::from_slice(s);
            let d = h.bank.sample(t, &st.position);
            u1vec = h.wrench.virtual_accel(&st.attitude, p);
            let ds = canonical_deriv(&st, &u1vec, &u2vec, &d.d1, &d.d2, p);
            out.fixed_rows_mut::<12>(PLANT).copy_from_slice(&ds.to_array());
            vdot = ds.velocity;
            x2 = st.velocity;
            x4 = st.attitude_rate;
            x4dot = ds.attitude_rate;
        }
        PlantKind::FullNonlinear => {
            let st = RigidBodyState::from_slice(s);
            let d = h.bank.sample(t, &st.position);
            let body = BodyDisturbance {
                force: rotation_matrix(&st.attitude).transpose() * d.d1 * p.mass,
                torque: d.d2.component_mul(&p.inertia),
            };
            let Ok(ds) = full_nonlinear_deriv(&st, &h.wrench, &body, p) else {
                return Ode::repeat(f64::NAN);
            };
            let hm = euler_rate_matrix(&st.attitude, p.gimbal_guard).expect("checked by the plant derivative");
            out.fixed_rows_mut::<12>(PLANT).copy_from_slice(&ds.to_array());
            u1vec = h.wrench.virtual_accel(&st.attitude, p);
            vdot = ds.velocity;
            x2 = st.velocity;
            x4 = hm * st.body_rate;
            x4dot = euler_rate_matrix_dot(&st.attitude, &ds.attitude) * st.body_rate + hm * ds.body_rate;
        }
    }
    let obs = &h.cfg.observer;
    let x2m = x2 + h.noise2;
    let x4m = x4 + h.noise4;
    let forcing1 = translational_forcing(&u1vec, p.gravity);
    let forcing2 = rotational_forcing(&f2(&x4m, p), &u2vec);
    match obs.variant {
        ObserverVariant::Auxiliary => {
            put(&mut out, GAMMA1, &gamma_dot(&get(x, GAMMA1), &x2m, &forcing1, obs.epsilon1));
            put(&mut out, GAMMA2, &gamma_dot(&get(x, GAMMA2), &x4m, &forcing2, obs.epsilon2));
        }
        ObserverVariant::Naive => {
            let xd1 = h.xdot1.unwrap_or(vdot);
            let xd2 = h.xdot2.unwrap_or(x4dot);
            put(&mut out, NAIVE1, &naive_dot(&get(x, NAIVE1), &xd1, &forcing1, obs.epsilon1));
            put(&mut out, NAIVE2, &naive_dot(&get(x, NAIVE2), &xd2, &forcing2, obs.epsilon2));
        }
        ObserverVariant::None => {}
    }
    out
}

struct NoiseSource {
    power: Vec3,
    rngs: [ChaCha8Rng; 3],
}

impl NoiseSource {
    fn new(power: Vec3, seed: u64, first_stream: u64) -> Self {
        Self {
            power,
            rngs: std::array::from_fn(|i| stream_rng(seed, NOISE_STREAM_BASE + first_stream + i as u64)),
        }
    }

    fn draw(&mut self, dt: f64) -> Vec3 {
        Vec3::from_fn(|i, _| white_noise(self.power[i], dt, &mut self.rngs[i]))
    }
}

fn initial_ode(cfg: &ScenarioConfig) -> Result<Ode, ConfigError> {
    let init = cfg.initial_state.unwrap_or_else(|| {
        let r = cfg.trajectory.eval(0.0);
        RigidState {
            position: r.pos,
            velocity: r.vel,
            attitude: Vec3::new(0.0, 0.0, cfg.trajectory.yaw(0.0)),
            ..Default::default()
        }
    });
    let plant = match cfg.plant {
        PlantKind::Canonical => init.to_array(),
        PlantKind::FullNonlinear => {
            let h = euler_rate_matrix(&init.attitude, cfg.vehicle.gimbal_guard)
                .map_err(|e| ConfigError::Invalid(format!("initial attitude: {e}")))?;
            let inv = h
                .try_inverse()
                .ok_or_else(|| ConfigError::Invalid("initial attitude is singular".into()))?;
            RigidBodyState {
                position: init.position,
                velocity: init.velocity,
                attitude: init.attitude,
                body_rate: inv * init.attitude_rate,
            }
            .to_array()
        }
    };
    let mut x = Ode::zeros();
    x.fixed_rows_mut::<12>(PLANT).copy_from_slice(&plant);
    Ok(x)
}

/// Run a scenario to completion.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<SimTrace, SimError> {
    cfg.validate()?;
    let p = cfg.vehicle;
    let dt = cfg.dt;
    let steps = cfg.steps();
    let substeps = cfg.substeps();
    if substeps > 1 {
        log::info!(
            "dt = {dt} exceeds eps / 20 for eps = {:?}; integrating with {substeps} sub-steps",
            cfg.min_epsilon()
        );
    }
    let h = dt / substeps as f64;
    let seed = cfg.seed.unwrap_or(0);
    let mut bank = DisturbanceBank::new(&cfg.disturbances, seed, dt)
        .map_err(|e| ConfigError::Invalid(e.to_string()))?;
    let mut noise2 = NoiseSource::new(cfg.noise.velocity, seed, 0);
    let mut noise4 = NoiseSource::new(cfg.noise.attitude_rate, seed, 3);
    let obs = cfg.observer;
    let filtered = |power: &Vec3| match obs.naive_derivative {
        NaiveDerivative::Auto => power.iter().any(|v| *v > 0.0),
        NaiveDerivative::Exact => false,
        NaiveDerivative::Filtered => true,
    };
    let naive = obs.variant == ObserverVariant::Naive;
    let mut fd1 = (naive && filtered(&cfg.noise.velocity)).then(|| FilteredDifference::new(5.0 * dt));
    let mut fd2 = (naive && filtered(&cfg.noise.attitude_rate)).then(|| FilteredDifference::new(5.0 * dt));

    let dt_outer = dt * cfg.outer_divisor as f64;
    let mut sp_filter = SetpointFilter::new(4.0 * dt_outer);
    let mut setpoint = AttitudeSetpoint::default();
    let mut outer = OuterOutput::default();

    let mut x = initial_ode(cfg)?;
    let mut trace = SimTrace {
        name: cfg.name.clone(),
        synthetic: cfg.is_synthetic(),
        dt,
        sample_interval: dt * cfg.record_every as f64,
        substeps,
        samples: Vec::with_capacity(steps / cfg.record_every as usize + 1),
        final_time: 0.0,
        final_state: RigidState::default(),
    };
    let diverged = |t: f64, reason: String, mut trace: SimTrace, state: RigidState| {
        trace.final_time = t;
        trace.final_state = state;
        SimError::Diverged {
            t,
            reason,
            trace: Box::new(trace),
        }
    };

    for k in 0..=steps {
        let t = k as f64 * dt;
        let Some(view) = plant_view(cfg.plant, &x, &p) else {
            return Err(diverged(t, "attitude reached the gimbal-lock guard".into(), trace, RigidState::default()));
        };
        let truth = RigidState {
            position: view.position,
            velocity: view.velocity,
            attitude: view.attitude,
            attitude_rate: view.x4,
        };
        if !truth.is_finite() {
            return Err(diverged(t, "state is not finite".into(), trace, truth));
        }
        let bound = view.position.amax();
        if bound > cfg.divergence_bound {
            return Err(diverged(
                t,
                format!("position component {bound:.3} m exceeds the {} m bound", cfg.divergence_bound),
                trace,
                truth,
            ));
        }

        bank.advance();
        let n2 = noise2.draw(dt);
        let n4 = noise4.draw(dt);
        let x2m = view.velocity + n2;
        let x4m = view.x4 + n4;
        let xdot1 = fd1.as_mut().map(|f| f.update(&x2m, dt));
        let xdot2 = fd2.as_mut().map(|f| f.update(&x4m, dt));

        if k == 0 && obs.variant == ObserverVariant::Auxiliary {
            // Zero initial estimate: gamma(0) = -x(0) / eps.
            put(&mut x, GAMMA1, &(-x2m / obs.epsilon1));
            put(&mut x, GAMMA2, &(-x4m / obs.epsilon2));
        }
        let (d1_hat, d2_hat) = match obs.variant {
            ObserverVariant::Auxiliary => (
                get(&x, GAMMA1) + x2m / obs.epsilon1,
                get(&x, GAMMA2) + x4m / obs.epsilon2,
            ),
            ObserverVariant::Naive => (get(&x, NAIVE1), get(&x, NAIVE2)),
            ObserverVariant::None => (Vec3::zeros(), Vec3::zeros()),
        };

        let reference = cfg.trajectory.eval(t);
        if k % cfg.outer_divisor as usize == 0 {
            outer = outer_loop(&view.position, &x2m, &reference, &d1_hat, &cfg.gains, &p);
            let mut sp = extract_attitude(&outer.u_vec, cfg.trajectory.yaw(t), p.mass, cfg.gains.uz_min)
                .expect("outer loop keeps u_z above the guard");
            let (rate, accel) = sp_filter.update(&sp.eta, dt_outer);
            sp.rate = rate;
            sp.accel = accel;
            setpoint = sp;
        }
        let inner = inner_loop(&view.attitude, &x4m, &setpoint, &d2_hat, &f2(&x4m, &p), &cfg.gains, &p);
        let commanded = WrenchCommand::new(setpoint.thrust, inner.torque);
        let (wrench, rotor_speeds, rotor_saturated) = if cfg.allocation {
            let a = allocate_rotors(&commanded, &p);
            (rotor_wrench(&a.speeds, &p), a.speeds.0, a.saturated())
        } else {
            (commanded, Vector4::zeros(), false)
        };

        if k % cfg.record_every as usize == 0 {
            let d: DisturbanceSample = bank.sample(t, &view.position);
            let e1 = reference.pos - view.position;
            let e1_dot = reference.vel - x2m;
            let s1 = sliding_surface(&e1, &e1_dot, &cfg.gains.lambda1);
            let (d1_tilde, d2_tilde) = (d.d1 - d1_hat, d.d2 - d2_hat);
            trace.samples.push(TraceSample {
                t,
                state: truth,
                measured_velocity: x2m,
                measured_attitude_rate: x4m,
                reference,
                attitude_ref: setpoint.eta,
                e1,
                e2: inner.e,
                s1,
                s2: inner.s,
                u_vec: outer.u_vec,
                thrust: wrench.thrust,
                torque: wrench.torque,
                rotor_speeds,
                outer_limited: outer.limited,
                torque_saturated: inner.saturated,
                rotor_saturated,
                d1: d.d1,
                d2: d.d2,
                d1_hat,
                d2_hat,
                d1_tilde,
                d2_tilde,
                lyapunov: lyapunov(&s1, &inner.s, &d1_tilde, &d2_tilde),
            });
        }
        if k == steps {
            trace.final_time = t;
            trace.final_state = truth;
            break;
        }

        let held = Held {
            cfg,
            bank: &bank,
            wrench,
            noise2: n2,
            noise4: n4,
            xdot1,
            xdot2,
        };
        for j in 0..substeps {
            let tj = t + j as f64 * h;
            x = match rk4_step(|tt, xx: &Ode| coupled_deriv(tt, xx, &held), &x, tj, h) {
                Ok(next) => next,
                Err(e) => return Err(diverged(tj, e.to_string(), trace, truth)),
            };
        }
    }
    Ok(trace)
}

/// Thrust direction scaled by `u1 / m` for a recorded sample.
pub fn applied_accel(sample: &TraceSample, p: &VehicleParams) -> Vec3 {
    thrust_direction(&sample.state.attitude) * (sample.thrust / p.mass)
}
