//! Quasi-static planar simulator of a two-finger tendon-driven compliant hand
//! grasping a prismatic object.
//!
//! Each finger has two spring-loaded passive joints closed by a single tendon.
//! Ground truth is a frictionless-normal quasi-static equilibrium: an 8-unknown
//! Newton solve over joint angles, object position and contact normal forces,
//! with object yaw evolved separately by a rolling-kinematics overlay (no-slip
//! for high-friction objects, threshold slip for standard ones). Sensor
//! readings are synthesized from the equilibrium state: noisy actuator angles,
//! noisy tendon tensions and a tactile pad voltage encoding contact offset and
//! normal force.

mod equilibrium;

pub use equilibrium::{residuals_at, solve_equilibrium};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Object pose relative to the hand base: position in mm, yaw in rad.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, yaw: f64) -> Self {
        Pose { x, y, yaw }
    }

    /// Euclidean distance between positions, ignoring yaw.
    pub fn position_distance(&self, other: &Pose) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }

    /// Reflection across the hand's symmetry axis.
    pub fn mirrored(&self) -> Pose {
        Pose { x: -self.x, y: self.y, yaw: -self.yaw }
    }
}

/// Wraps an angle to (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * std::f64::consts::PI);
    if w > std::f64::consts::PI {
        w -= 2.0 * std::f64::consts::PI;
    }
    w
}

/// Normalized per-step actuator command, one component per finger, in [0, 1].
/// 0.5 is neutral; the angle change is `(2 a - 1) * action_delta_max`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Action(pub [f64; 2]);

impl Action {
    pub const NEUTRAL: Action = Action([0.5, 0.5]);

    pub fn validate(&self) -> Result<(), SimError> {
        for &a in &self.0 {
            if !(0.0..=1.0).contains(&a) || !a.is_finite() {
                return Err(SimError::ActionOutOfRange(a));
            }
        }
        Ok(())
    }

    /// Swaps the two finger commands (mirror image of the action).
    pub fn mirrored(self) -> Action {
        Action([self.0[1], self.0[0]])
    }
}

/// Synthetic tactile pad response parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TactilePad {
    /// Volts per Newton at the bulge.
    pub alpha: f64,
    /// Contact offset (mm) where the signal crosses zero.
    pub xi0: f64,
    /// Saturation voltage (V).
    pub v_sat: f64,
}

impl Default for TactilePad {
    fn default() -> Self {
        TactilePad { alpha: 0.15, xi0: 30.0, v_sat: 2.5 }
    }
}

/// Hand geometry, stiffnesses and actuation parameters. Lengths in mm,
/// stiffnesses in N·mm/rad (joints) and N/mm (tendon), angles in rad.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HandConfig {
    /// Distance between the two finger bases.
    pub base_separation: f64,
    /// Proximal link length.
    pub l1: f64,
    /// Distal link length; the contact pad spans it.
    pub l2: f64,
    /// Proximal joint spring stiffness.
    pub k1: f64,
    /// Distal joint spring stiffness.
    pub k2: f64,
    /// Proximal joint rest angle.
    pub rest1: f64,
    /// Distal joint rest angle.
    pub rest2: f64,
    /// Tendon elastic stiffness.
    pub tendon_stiffness: f64,
    /// Tendon moment arm at the proximal joint.
    pub r1: f64,
    /// Tendon moment arm at the distal joint.
    pub r2: f64,
    /// Tendon displacement per actuator radian (mm/rad).
    pub actuator_gain: f64,
    /// Actuator angle change per step at full action deflection.
    pub action_delta_max: f64,
    /// Pad length; equals `l2` by default.
    pub pad_length: f64,
    /// Contact force below which the grasp counts as lost.
    pub f_min: f64,
    /// Tangential contact displacement per step beyond which a
    /// standard-friction contact slips instead of rolling.
    pub slip_threshold: f64,
    /// Control/sampling period in seconds.
    pub dt: f64,
    /// Tactile pad response.
    pub pad: TactilePad,
    /// Newton iteration cap for the equilibrium solve.
    pub max_newton_iters: usize,
    /// Actuator angle range sampled by `grasp_reset`.
    pub grasp_theta_range: (f64, f64),
    /// Per-finger jitter added to the sampled preload angle.
    pub grasp_theta_jitter: f64,
    /// Max lateral object offset sampled at reset (mm).
    pub grasp_offset_max: f64,
    /// Reset attempts before giving up.
    pub max_reset_tries: usize,
}

impl Default for HandConfig {
    // Calibrated so a 15 mm disk sits mid-pad with 2-8 N of squeeze across
    // the preload range, a multi-centimeter reachable workspace, and per-step
    // pose changes around 0.01-0.2 mm.
    fn default() -> Self {
        HandConfig {
            base_separation: 50.0,
            l1: 50.0,
            l2: 40.0,
            k1: 300.0,
            k2: 200.0,
            rest1: 100f64.to_radians(),
            rest2: (-5f64).to_radians(),
            tendon_stiffness: 5.0,
            r1: 10.0,
            r2: 3.0,
            actuator_gain: 12.0,
            action_delta_max: 0.01,
            pad_length: 40.0,
            f_min: 0.05,
            slip_threshold: 0.3,
            dt: 0.1,
            pad: TactilePad::default(),
            max_newton_iters: 50,
            grasp_theta_range: (1.85, 2.35),
            grasp_theta_jitter: 0.03,
            grasp_offset_max: 3.0,
            max_reset_tries: 100,
        }
    }
}

impl HandConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let positive = [
            ("base_separation", self.base_separation),
            ("l1", self.l1),
            ("l2", self.l2),
            ("k1", self.k1),
            ("k2", self.k2),
            ("tendon_stiffness", self.tendon_stiffness),
            ("r1", self.r1),
            ("r2", self.r2),
            ("actuator_gain", self.actuator_gain),
            ("action_delta_max", self.action_delta_max),
            ("pad_length", self.pad_length),
            ("dt", self.dt),
            ("pad.alpha", self.pad.alpha),
            ("pad.xi0", self.pad.xi0),
            ("pad.v_sat", self.pad.v_sat),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(SimError::InvalidConfig(format!("{name} must be > 0, got {v}")));
            }
        }
        if self.grasp_theta_range.0 > self.grasp_theta_range.1 {
            return Err(SimError::InvalidConfig("grasp_theta_range is empty".into()));
        }
        Ok(())
    }

    /// Tendon tension for one finger: elastic stretch of the tendon between
    /// the actuator spool and its routing over both joints, slack below zero.
    pub fn tendon_tension(&self, theta: f64, q1: f64, q2: f64) -> f64 {
        let stretch = self.actuator_gain * theta - (self.r1 * q1 + self.r2 * q2);
        self.tendon_stiffness * stretch.max(0.0)
    }
}

/// Friction class of the object surface against the pads.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrictionClass {
    /// May slip when the per-step tangential contact displacement exceeds
    /// the slip threshold.
    Standard,
    /// Never slips (sandpaper-wrapped).
    High,
}

/// Object cross-section.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Shape {
    Disk { radius: f64 },
    Square { side: f64 },
}

/// A prismatic test object.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub shape: Shape,
    pub friction: FrictionClass,
    pub label: String,
}

impl ObjectSpec {
    pub fn disk(radius: f64, friction: FrictionClass, label: &str) -> Self {
        ObjectSpec { shape: Shape::Disk { radius }, friction, label: label.to_string() }
    }

    pub fn square(side: f64, friction: FrictionClass, label: &str) -> Self {
        ObjectSpec { shape: Shape::Square { side }, friction, label: label.to_string() }
    }

    /// 15 mm radius disk, the primary benchmark object.
    pub fn disk15() -> Self {
        Self::disk(15.0, FrictionClass::Standard, "circ15")
    }

    /// 10 mm radius disk.
    pub fn disk10() -> Self {
        Self::disk(10.0, FrictionClass::Standard, "circ10")
    }

    /// 15 mm disk with high-friction surface.
    pub fn disk15_high_friction() -> Self {
        Self::disk(15.0, FrictionClass::High, "circ15hf")
    }

    /// 20x20 mm square.
    pub fn square20() -> Self {
        Self::square(20.0, FrictionClass::Standard, "sq20")
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let extent = match self.shape {
            Shape::Disk { radius } => radius,
            Shape::Square { side } => side,
        };
        if !(extent > 0.0) || !extent.is_finite() {
            return Err(SimError::InvalidConfig(format!(
                "object extent must be > 0, got {extent}"
            )));
        }
        Ok(())
    }
}

/// Sensor noise and quantization parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Encoder noise on actuator angles (rad).
    pub sigma_enc: f64,
    /// Load-cell noise on tendon tensions (N).
    pub sigma_load: f64,
    /// Tactile voltage noise (V).
    pub sigma_tac: f64,
    /// ADC resolution for the tactile channel, 8..=16 bits.
    pub adc_bits: u32,
    /// Salt mixed into episode seed derivation by the collection pipeline.
    pub seed: u64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel { sigma_enc: 0.002, sigma_load: 0.02, sigma_tac: 0.01, adc_bits: 10, seed: 0 }
    }
}

impl NoiseModel {
    /// All-zero noise at 16-bit quantization.
    pub fn noiseless() -> Self {
        NoiseModel { sigma_enc: 0.0, sigma_load: 0.0, sigma_tac: 0.0, adc_bits: 16, seed: 0 }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        for (name, v) in [
            ("sigma_enc", self.sigma_enc),
            ("sigma_load", self.sigma_load),
            ("sigma_tac", self.sigma_tac),
        ] {
            if v < 0.0 || !v.is_finite() {
                return Err(SimError::InvalidConfig(format!("{name} must be >= 0, got {v}")));
            }
        }
        if !(8..=16).contains(&self.adc_bits) {
            return Err(SimError::InvalidConfig(format!(
                "adc_bits must be in 8..=16, got {}",
                self.adc_bits
            )));
        }
        Ok(())
    }
}

/// One haptic sample: noisy actuator angles, noisy tendon tensions, quantized
/// tactile voltages, plus the ground-truth pose as a simulator-only side
/// channel standing in for the camera rig.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorReading {
    pub enc_angles: [f64; 2],
    pub loads: [f64; 2],
    pub tactile: [f64; 2],
    pub truth_pose: Pose,
}

/// Full latent simulator state. The learning stack never sees this directly;
/// it sees [`SensorReading`]s.
#[derive(Clone, Debug)]
pub struct SimState {
    /// Actuator (spool) angles.
    pub actuator_angles: [f64; 2],
    /// Joint angles (q11, q12, q21, q22).
    pub joint_angles: [f64; 4],
    pub object_pose: Pose,
    /// Contact offset along each pad, bulge toward fingertip (mm).
    pub contact_offsets: [f64; 2],
    /// Contact normal forces (N).
    pub normal_forces: [f64; 2],
    pub dropped: bool,
    pub rng: ChaCha8Rng,
}

impl SimState {
    /// Field-wise equality over the physical state (rng excluded).
    pub fn physically_eq(&self, other: &SimState) -> bool {
        self.actuator_angles == other.actuator_angles
            && self.joint_angles == other.joint_angles
            && self.object_pose == other.object_pose
            && self.contact_offsets == other.contact_offsets
            && self.normal_forces == other.normal_forces
            && self.dropped == other.dropped
    }
}

/// Outcome of one control step.
#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub next: SimState,
    pub dropped: bool,
}

/// Why an equilibrium solve ended in a lost grasp.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DropReason {
    NonConvergence,
    ForceBelowMin,
    ContactOffPad,
    JointOutOfRange,
}

/// Result of [`solve_equilibrium`]: a converged grasp or a drop.
#[derive(Clone, Debug)]
pub enum SolveOutcome {
    Converged(SimState),
    Dropped(DropReason),
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("action component {0} outside [0, 1]")]
    ActionOutOfRange(f64),
    #[error("operation on a dropped state")]
    DroppedState,
    #[error("no valid grasp after {tries} reset attempts")]
    ResetExhausted { tries: usize },
    #[error("negative contact force {0} passed to tactile model")]
    NegativeForce(f64),
}

/// Synthetic tactile pad voltage for contact offset `xi` (mm from the bulge
/// toward the fingertip) under normal force `f` (N). Linear in force, linear
/// decay with offset, zero crossing at `xi0`, clamped at the saturation rails.
pub fn tactile_voltage(xi: f64, f: f64, pad: &TactilePad) -> Result<f64, SimError> {
    if f < 0.0 {
        return Err(SimError::NegativeForce(f));
    }
    let v = pad.alpha * f * (1.0 - xi / pad.xi0);
    Ok(v.clamp(-pad.v_sat, pad.v_sat))
}

/// Samples a randomized preload and lateral offset, solving to a valid grasp.
/// Retries with fresh samples until one converges, up to `max_reset_tries`.
pub fn grasp_reset(config: &HandConfig, object: &ObjectSpec, seed: u64) -> Result<SimState, SimError> {
    config.validate()?;
    object.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..config.max_reset_tries {
        let (lo, hi) = config.grasp_theta_range;
        let base = rng.gen_range(lo..=hi);
        let j = config.grasp_theta_jitter;
        let theta = [base + rng.gen_range(-j..=j), base + rng.gen_range(-j..=j)];
        let ox = rng.gen_range(-config.grasp_offset_max..=config.grasp_offset_max);
        if let SolveOutcome::Converged(mut st) =
            equilibrium::solve_cold(config, object, theta, ox)?
        {
            st.rng = rng;
            return Ok(st);
        }
    }
    Err(SimError::ResetExhausted { tries: config.max_reset_tries })
}

/// Advances the hand by one action: actuator angles move by
/// `(2 a - 1) * action_delta_max`, the equilibrium re-solves warm-started
/// from the previous state, then the rolling/slip overlay updates yaw.
pub fn step(
    config: &HandConfig,
    object: &ObjectSpec,
    state: &SimState,
    action: Action,
) -> Result<StepOutcome, SimError> {
    if state.dropped {
        return Err(SimError::DroppedState);
    }
    action.validate()?;
    let theta = [
        state.actuator_angles[0] + (2.0 * action.0[0] - 1.0) * config.action_delta_max,
        state.actuator_angles[1] + (2.0 * action.0[1] - 1.0) * config.action_delta_max,
    ];
    match equilibrium::solve_warm(config, object, theta, state)? {
        SolveOutcome::Converged(mut next) => {
            next.object_pose.yaw = equilibrium::rolling_yaw_update(config, object, state, &next);
            next.rng = state.rng.clone();
            Ok(StepOutcome { dropped: false, next })
        }
        SolveOutcome::Dropped(_) => {
            let mut next = state.clone();
            next.actuator_angles = theta;
            next.dropped = true;
            Ok(StepOutcome { dropped: true, next })
        }
    }
}

/// Synthesizes one sensor reading from the state, consuming the state's
/// generator: encoder noise, load noise, tactile noise then quantization, in
/// a fixed draw order.
pub fn read_sensors(
    config: &HandConfig,
    state: &mut SimState,
    noise: &NoiseModel,
) -> Result<SensorReading, SimError> {
    if state.dropped {
        return Err(SimError::DroppedState);
    }
    noise.validate()?;
    let gauss = |rng: &mut ChaCha8Rng, sigma: f64| -> f64 {
        // Box-Muller on two uniform draws; one draw pair per sample keeps the
        // stream layout fixed regardless of sigma.
        let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        sigma * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    };
    let mut enc = [0.0; 2];
    let mut loads = [0.0; 2];
    let mut tactile = [0.0; 2];
    for i in 0..2 {
        enc[i] = state.actuator_angles[i] + gauss(&mut state.rng, noise.sigma_enc);
    }
    for i in 0..2 {
        let q1 = state.joint_angles[2 * i];
        let q2 = state.joint_angles[2 * i + 1];
        let tension = config.tendon_tension(state.actuator_angles[i], q1, q2);
        loads[i] = tension + gauss(&mut state.rng, noise.sigma_load);
    }
    let v_sat = config.pad.v_sat;
    let adc_step = 2.0 * v_sat / ((1u64 << noise.adc_bits) - 1) as f64;
    for i in 0..2 {
        let v = tactile_voltage(state.contact_offsets[i], state.normal_forces[i], &config.pad)?;
        let noisy = (v + gauss(&mut state.rng, noise.sigma_tac)).clamp(-v_sat, v_sat);
        tactile[i] = ((noisy + v_sat) / adc_step).round() * adc_step - v_sat;
    }
    Ok(SensorReading { enc_angles: enc, loads, tactile, truth_pose: state.object_pose })
}

#[cfg(test)]
mod tests;
