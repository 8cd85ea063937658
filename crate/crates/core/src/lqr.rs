//! Time-varying LQR gain synthesis on the linearized model and
//! Gaussian-perturbed sample-trajectory generation around an iterate.

use nalgebra::{Matrix3, SMatrix, Vector3};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::socp::TrajectoryIterate;
use crate::transcription::LinearizedSegment;
use crate::vehicle::{euler_from_quat, quat_from_euler, State, StateVector};

pub type CostToGo = SMatrix<f64, 14, 14>;
pub type Gain = SMatrix<f64, 3, 14>;

/// Quadratic weights of the finite-horizon regulator.
#[derive(Debug, Clone)]
pub struct LqrWeights {
    pub q: SMatrix<f64, 14, 14>,
    pub r: Matrix3<f64>,
    pub q_final: SMatrix<f64, 14, 14>,
}

impl Default for LqrWeights {
    fn default() -> Self {
        // Identity running weights with a stiff terminal cost keep samples
        // close to the boundary-pinned endpoint.
        LqrWeights {
            q: SMatrix::identity(),
            r: Matrix3::identity(),
            q_final: SMatrix::identity() * 100.0,
        }
    }
}

/// Feedback gains K(k) for every interval, newest cost-to-go included for
/// diagnostics.
#[derive(Debug, Clone)]
pub struct GainSchedule {
    pub gains: Vec<Gain>,
    pub cost_to_go: Vec<CostToGo>,
}

/// Per-channel initial-state noise levels with geometric decay across GPS
/// iterations.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub sigma_pos: f64,
    pub sigma_vel: f64,
    /// Std of the roll/pitch/yaw perturbations (rad).
    pub sigma_angle: f64,
    /// Geometric decay factor per GPS iteration, in (0, 1].
    pub decay: f64,
    /// Current GPS iteration (0-based).
    pub iteration: u32,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        NoiseSchedule {
            sigma_pos: 0.1,
            sigma_vel: 0.05,
            sigma_angle: 5f64.to_radians(),
            decay: 0.7,
            iteration: 0,
        }
    }
}

impl NoiseSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.sigma_pos < 0.0 || self.sigma_vel < 0.0 || self.sigma_angle < 0.0 {
            return Err(Error::invalid_input("noise sigmas must be nonnegative"));
        }
        if !(0.0 < self.decay && self.decay <= 1.0) {
            return Err(Error::invalid_input("decay must be in (0, 1]"));
        }
        Ok(())
    }

    pub fn at_iteration(&self, iteration: u32) -> Self {
        NoiseSchedule { iteration, ..*self }
    }

    /// Effective sigmas: sigma_0 * decay^iteration.
    pub fn effective(&self) -> (f64, f64, f64) {
        let factor = self.decay.powi(self.iteration as i32);
        (
            self.sigma_pos * factor,
            self.sigma_vel * factor,
            self.sigma_angle * factor,
        )
    }
}

/// Deterministic per-sample RNG streams keyed by (seed, GPS iteration,
/// trajectory index), so parallel sampling reproduces bit-identically.
#[derive(Debug, Clone, Copy)]
pub struct RngStream {
    pub seed: u64,
    pub gps_iteration: u64,
    pub trajectory: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn rng_for_sample(&self, sample: u64) -> ChaCha8Rng {
        let mut key = splitmix64(self.seed);
        key = splitmix64(key ^ self.gps_iteration);
        key = splitmix64(key ^ self.trajectory);
        key = splitmix64(key ^ sample);
        ChaCha8Rng::seed_from_u64(key)
    }
}

/// Backward discrete-time finite-horizon Riccati recursion.
///
/// K(k) = -(R + B' P_{k+1} B)^{-1} B' P_{k+1} A, with the cost-to-go in the
/// Joseph-style form that keeps P symmetric PSD.
pub fn riccati_backward(
    segments: &[LinearizedSegment],
    weights: &LqrWeights,
) -> Result<GainSchedule> {
    let n = segments.len();
    let mut gains = vec![Gain::zeros(); n];
    let mut cost_to_go = vec![CostToGo::zeros(); n + 1];
    cost_to_go[n] = weights.q_final;
    for k in (0..n).rev() {
        let a = &segments[k].a_mat;
        let b = &segments[k].b_mat;
        let p_next = &cost_to_go[k + 1];
        let gram = weights.r + b.transpose() * p_next * b;
        let gram_inv = gram.try_inverse().ok_or(Error::GainSynthesis(k))?;
        let gain = -(gram_inv * b.transpose() * p_next * a);
        let closed = a + b * gain;
        let mut p = weights.q
            + gain.transpose() * weights.r * gain
            + closed.transpose() * p_next * closed;
        // Symmetrize to absorb rounding drift in the recursion.
        p = (p + p.transpose()) * 0.5;
        gains[k] = gain;
        cost_to_go[k] = p;
    }
    Ok(GainSchedule { gains, cost_to_go })
}

/// Add Euler-angle noise to an attitude quaternion.
pub(crate) fn perturb_attitude(
    q: &nalgebra::Vector4<f64>,
    d_roll: f64,
    d_pitch: f64,
    d_yaw: f64,
) -> Result<nalgebra::Vector4<f64>> {
    let (roll, pitch, yaw) = euler_from_quat(q)?;
    quat_from_euler(roll + d_roll, pitch + d_pitch, yaw + d_yaw)
}

/// Gaussian perturbation of position, velocity, and attitude channels.
/// Mass and angular rate stay untouched. Gimbal-lock draws are resampled a
/// bounded number of times.
pub fn perturb_initial_state(
    x_init: &State,
    noise: &NoiseSchedule,
    rng: &mut ChaCha8Rng,
) -> Result<State> {
    noise.validate()?;
    let (s_pos, s_vel, s_ang) = noise.effective();
    let mut out = *x_init;
    if s_pos > 0.0 {
        let n = Normal::new(0.0, s_pos).expect("validated sigma");
        for i in 0..3 {
            out.r_i[i] += n.sample(rng);
        }
    }
    if s_vel > 0.0 {
        let n = Normal::new(0.0, s_vel).expect("validated sigma");
        for i in 0..3 {
            out.v_i[i] += n.sample(rng);
        }
    }
    if s_ang > 0.0 {
        let n = Normal::new(0.0, s_ang).expect("validated sigma");
        let mut attempts = 0;
        loop {
            let draws = (n.sample(rng), n.sample(rng), n.sample(rng));
            match perturb_attitude(&x_init.q_bi, draws.0, draws.1, draws.2) {
                Ok(q) => {
                    out.q_bi = q;
                    break;
                }
                Err(_) if attempts < 8 => attempts += 1,
                Err(e) => return Err(e),
            }
        }
    }
    Ok(out)
}

/// One Gaussian-perturbed closed-loop sample on the linearized model.
#[derive(Debug, Clone)]
pub struct SampledTrajectory {
    pub states: Vec<StateVector>,
    pub controls: Vec<Vector3<f64>>,
}

/// Generate `sample_count` feedback-rolled trajectories around an iterate.
///
/// Controls follow u = u_hat + K(k)(x - x_hat); states follow the linearized
/// model with the iterate's virtual control included. The affine term is
/// taken from the iterate identity x_hat_{k+1} - A x_hat_k - B u_hat_k
/// (= z_k + nu_hat_k up to the solver's feasibility residual), which makes
/// the zero-noise sample reproduce the iterate itself.
pub fn generate_samples(
    iterate: &TrajectoryIterate,
    segments: &[LinearizedSegment],
    gains: &GainSchedule,
    sample_count: usize,
    noise: &NoiseSchedule,
    stream: &RngStream,
) -> Result<Vec<SampledTrajectory>> {
    let n = segments.len();
    if gains.gains.len() != n || iterate.states.len() != n + 1 {
        return Err(Error::invalid_input("gain/segment/iterate length mismatch"));
    }
    let affine: Vec<StateVector> = (0..n)
        .map(|k| {
            iterate.states[k + 1]
                - segments[k].a_mat * iterate.states[k]
                - segments[k].b_mat * iterate.controls[k]
        })
        .collect();

    let mut samples = Vec::with_capacity(sample_count);
    for s in 0..sample_count {
        let mut rng = stream.rng_for_sample(s as u64);
        let x0 = State::from_vector(&iterate.states[0]);
        let perturbed = perturb_initial_state(&x0, noise, &mut rng)?;
        let mut states = Vec::with_capacity(n + 1);
        let mut controls = Vec::with_capacity(n);
        states.push(perturbed.to_vector());
        for k in 0..n {
            let u = iterate.controls[k] + gains.gains[k] * (states[k] - iterate.states[k]);
            let next = segments[k].a_mat * states[k] + segments[k].b_mat * u + affine[k];
            controls.push(u);
            states.push(next);
        }
        samples.push(SampledTrajectory { states, controls });
    }
    Ok(samples)
}
