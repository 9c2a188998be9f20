//! Quasi-static grasp equilibrium: damped Newton on an 8-unknown system.
//!
//! Unknowns `u = (q11, q12, q21, q22, ox, oy, f1, f2)`; residuals are the four
//! joint torque balances (spring + tendon + contact), two contact constraints
//! (object boundary on each pad line) and the planar force balance of the
//! object under the two frictionless contact normals. Yaw is not an unknown:
//! it is held fixed during the solve and advanced afterwards by the rolling
//! overlay in [`rolling_yaw_update`].
//!
//! Per-finger geometry lives in a mirror-symmetric finger frame (x toward the
//! opposing finger, y up, origin at the finger base): the proximal link points
//! along `(-cos q1, sin q1)` — angle measured from the outward horizontal, so
//! q1 grows as the finger curls in — and the distal link along
//! `(-cos(q1+q2), sin(q1+q2))` with the pad's object-side normal
//! `(sin(q1+q2), cos(q1+q2))`.

use super::{
    DropReason, HandConfig, ObjectSpec, Pose, Shape, SimError, SimState, SolveOutcome,
};
use crate::linalg::lu_solve;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const NEWTON_TOL: f64 = 1e-10;
// Generous joint-range guard; outside this the grasp geometry is gone.
const Q1_RANGE: (f64, f64) = (0.2, 2.9);
const Q2_RANGE: (f64, f64) = (-1.4, 1.5);

#[derive(Clone, Copy)]
struct V2 {
    x: f64,
    y: f64,
}

impl V2 {
    fn dot(self, o: V2) -> f64 {
        self.x * o.x + self.y * o.y
    }
    fn cross(self, o: V2) -> f64 {
        self.x * o.y - self.y * o.x
    }
    fn scale(self, s: f64) -> V2 {
        V2 { x: self.x * s, y: self.y * s }
    }
    fn sub(self, o: V2) -> V2 {
        V2 { x: self.x - o.x, y: self.y - o.y }
    }
}

/// Per-finger contact geometry evaluated at a candidate configuration, in the
/// finger frame.
struct FingerContact {
    /// Distance from object center to the pad line along the pad normal,
    /// minus the object's extent toward the pad (zero at contact).
    gap: f64,
    /// Contact offset along the pad from the knuckle (mm).
    xi: f64,
    /// Pad normal, finger frame.
    normal: V2,
    /// Contact point, finger frame.
    contact: V2,
    /// Knuckle position, finger frame.
    knuckle: V2,
}

fn finger_contact(
    config: &HandConfig,
    object: &ObjectSpec,
    q1: f64,
    q2: f64,
    center_ff: V2,
    yaw: f64,
    side: f64,
) -> FingerContact {
    let beta = q1 + q2;
    let knuckle = V2 { x: -config.l1 * q1.cos(), y: config.l1 * q1.sin() };
    let dir = V2 { x: -beta.cos(), y: beta.sin() };
    let normal = V2 { x: beta.sin(), y: beta.cos() };
    let rel = center_ff.sub(knuckle);
    let (support, contact) = match object.shape {
        Shape::Disk { radius } => (radius, center_ff.sub(normal.scale(radius))),
        Shape::Square { side: s } => {
            // Object axes mapped into the finger frame (x mirrored on the
            // right finger).
            let e1 = V2 { x: side * yaw.cos(), y: -yaw.sin() };
            let e2 = V2 { x: -side * yaw.sin(), y: -yaw.cos() };
            let d1 = normal.dot(e1);
            let d2 = normal.dot(e2);
            let h = 0.5 * s;
            let sup = h * (d1.abs() + d2.abs());
            let cp = center_ff
                .sub(e1.scale(h * d1.signum()))
                .sub(e2.scale(h * d2.signum()));
            (sup, cp)
        }
    };
    let gap = rel.dot(normal) - support;
    let xi = contact.sub(knuckle).dot(dir);
    FingerContact { gap, xi, normal, contact, knuckle }
}

struct ResidualEval {
    r: [f64; 8],
    contacts: [FingerContact; 2],
}

fn eval(
    config: &HandConfig,
    object: &ObjectSpec,
    theta: [f64; 2],
    yaw: f64,
    u: &[f64; 8],
) -> ResidualEval {
    let half = 0.5 * config.base_separation;
    let (ox, oy) = (u[4], u[5]);
    let forces = [u[6], u[7]];
    let mut r = [0.0; 8];
    let mut contacts: [Option<FingerContact>; 2] = [None, None];
    let mut normal_world = [V2 { x: 0.0, y: 0.0 }; 2];
    for i in 0..2 {
        // side: +1 for the left finger (base at -half), -1 for the right.
        // The finger frame flips y: fingers extend downward from the base
        // rail, so the grasped object hangs at negative world y and
        // squeezing pulls it upward (toward the knuckles).
        let side = if i == 0 { 1.0 } else { -1.0 };
        let base_x = -side * half;
        let center_ff = V2 { x: side * (ox - base_x), y: -oy };
        let q1 = u[2 * i];
        let q2 = u[2 * i + 1];
        let fc = finger_contact(config, object, q1, q2, center_ff, yaw, side);
        let tension = config.tendon_tension(theta[i], q1, q2);
        let f = forces[i];
        // Torque balance in the increasing-q sense (clockwise in the finger
        // frame); the contact reaction -f*n on the pad contributes
        // +f*cross(arm, n).
        r[2 * i] = -config.k1 * (q1 - config.rest1)
            + tension * config.r1
            + f * fc.contact.cross(fc.normal);
        r[2 * i + 1] = -config.k2 * (q2 - config.rest2)
            + tension * config.r2
            + f * fc.contact.sub(fc.knuckle).cross(fc.normal);
        normal_world[i] = V2 { x: side * fc.normal.x, y: -fc.normal.y };
        contacts[i] = Some(fc);
    }
    let [c0, c1] = contacts;
    let (c0, c1) = (c0.unwrap(), c1.unwrap());
    r[4] = c0.gap;
    r[5] = c1.gap;
    r[6] = forces[0] * normal_world[0].x + forces[1] * normal_world[1].x;
    r[7] = forces[0] * normal_world[0].y + forces[1] * normal_world[1].y;
    ResidualEval { r, contacts: [c0, c1] }
}

fn inf_norm(r: &[f64; 8]) -> f64 {
    r.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Re-evaluates the eight equilibrium residuals at a solved state, for
/// independent verification.
pub fn residuals_at(config: &HandConfig, object: &ObjectSpec, state: &SimState) -> [f64; 8] {
    let u = pack(state);
    eval(config, object, state.actuator_angles, state.object_pose.yaw, &u).r
}

fn pack(state: &SimState) -> [f64; 8] {
    [
        state.joint_angles[0],
        state.joint_angles[1],
        state.joint_angles[2],
        state.joint_angles[3],
        state.object_pose.x,
        state.object_pose.y,
        state.normal_forces[0],
        state.normal_forces[1],
    ]
}

fn newton(
    config: &HandConfig,
    object: &ObjectSpec,
    theta: [f64; 2],
    yaw: f64,
    mut u: [f64; 8],
) -> Option<[f64; 8]> {
    let mut r = eval(config, object, theta, yaw, &u).r;
    let mut norm = inf_norm(&r);
    for _ in 0..config.max_newton_iters {
        if norm < NEWTON_TOL {
            return Some(u);
        }
        // Forward-difference Jacobian, column per unknown.
        let mut jac = vec![0.0; 64];
        for col in 0..8 {
            let h = 1e-7 * u[col].abs().max(1.0);
            let mut up = u;
            up[col] += h;
            let rp = eval(config, object, theta, yaw, &up).r;
            for row in 0..8 {
                jac[row * 8 + col] = (rp[row] - r[row]) / h;
            }
        }
        let rhs: Vec<f64> = r.iter().map(|v| -v).collect();
        let delta = lu_solve(jac, rhs, 8)?;
        // Backtracking line search on the residual norm.
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..16 {
            let mut trial = u;
            for k in 0..8 {
                trial[k] += alpha * delta[k];
            }
            let rt = eval(config, object, theta, yaw, &trial).r;
            let nt = inf_norm(&rt);
            if nt.is_finite() && nt < norm {
                u = trial;
                r = rt;
                norm = nt;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            return None;
        }
    }
    if norm < NEWTON_TOL {
        Some(u)
    } else {
        None
    }
}

fn classify(
    config: &HandConfig,
    object: &ObjectSpec,
    theta: [f64; 2],
    yaw: f64,
    u: [f64; 8],
) -> SolveOutcome {
    let ev = eval(config, object, theta, yaw, &u);
    let forces = [u[6], u[7]];
    let xi = [ev.contacts[0].xi, ev.contacts[1].xi];
    if forces[0] <= config.f_min || forces[1] <= config.f_min {
        return SolveOutcome::Dropped(DropReason::ForceBelowMin);
    }
    if xi.iter().any(|&x| !(0.0..=config.pad_length).contains(&x)) {
        return SolveOutcome::Dropped(DropReason::ContactOffPad);
    }
    for i in 0..2 {
        let q1 = u[2 * i];
        let q2 = u[2 * i + 1];
        if !(Q1_RANGE.0..=Q1_RANGE.1).contains(&q1) || !(Q2_RANGE.0..=Q2_RANGE.1).contains(&q2) {
            return SolveOutcome::Dropped(DropReason::JointOutOfRange);
        }
    }
    SolveOutcome::Converged(SimState {
        actuator_angles: theta,
        joint_angles: [u[0], u[1], u[2], u[3]],
        object_pose: Pose::new(u[4], u[5], yaw),
        contact_offsets: xi,
        normal_forces: forces,
        dropped: false,
        rng: ChaCha8Rng::seed_from_u64(0),
    })
}

/// Solves the grasp equilibrium at the given actuator angles, warm-started
/// from `guess` when provided.
pub fn solve_equilibrium(
    config: &HandConfig,
    object: &ObjectSpec,
    actuator_angles: [f64; 2],
    guess: Option<&SimState>,
) -> Result<SolveOutcome, SimError> {
    config.validate()?;
    object.validate()?;
    match guess {
        Some(g) => {
            for v in pack(g).iter().chain(g.actuator_angles.iter()) {
                if !v.is_finite() {
                    return Err(SimError::InvalidConfig("non-finite warm-start state".into()));
                }
            }
            solve_warm(config, object, actuator_angles, g)
        }
        None => solve_cold(config, object, actuator_angles, 0.0),
    }
}

pub(super) fn solve_warm(
    config: &HandConfig,
    object: &ObjectSpec,
    theta: [f64; 2],
    prev: &SimState,
) -> Result<SolveOutcome, SimError> {
    let yaw = prev.object_pose.yaw;
    match newton(config, object, theta, yaw, pack(prev)) {
        Some(u) => Ok(classify(config, object, theta, yaw, u)),
        None => Ok(SolveOutcome::Dropped(DropReason::NonConvergence)),
    }
}

/// Cold-start solve: joint angles from the tendon-only (contact-free)
/// equilibrium, object placed mid-pad at lateral offset `ox`.
pub(super) fn solve_cold(
    config: &HandConfig,
    object: &ObjectSpec,
    theta: [f64; 2],
    ox: f64,
) -> Result<SolveOutcome, SimError> {
    let yaw = 0.0;
    let u = cold_guess(config, object, theta, ox);
    match newton(config, object, theta, yaw, u) {
        Some(sol) => Ok(classify(config, object, theta, yaw, sol)),
        None => Ok(SolveOutcome::Dropped(DropReason::NonConvergence)),
    }
}

/// Initial guess on the squeeze branch: vertical pads tangent to the object
/// (beta = 90 deg), contact offset from the tendon moment-arm ratio, forces
/// from the proximal torque balance. The free-finger (zero-force) branch also
/// solves the equations, so the guess must start pressed against the object.
fn cold_guess(config: &HandConfig, object: &ObjectSpec, theta: [f64; 2], ox: f64) -> [f64; 8] {
    let half = 0.5 * config.base_separation;
    let support = match object.shape {
        Shape::Disk { radius } => radius,
        Shape::Square { side } => 0.5 * side,
    };
    let cos_q1 = ((support - half) / config.l1).clamp(-0.95, 0.95);
    let q1 = cos_q1.acos();
    let q2 = std::f64::consts::FRAC_PI_2 - q1;
    let ky = config.l1 * q1.sin();
    let xi = (ky * config.r2 / (config.r1 - config.r2).max(1e-6))
        .clamp(0.2 * config.pad_length, 0.8 * config.pad_length);
    let mut u = [0.0; 8];
    for i in 0..2 {
        u[2 * i] = q1;
        u[2 * i + 1] = q2;
        let tension = config.tendon_tension(theta[i], q1, q2);
        u[6 + i] = ((tension * config.r1 - config.k1 * (q1 - config.rest1)) / (ky + xi)).max(0.2);
    }
    u[4] = ox;
    u[5] = -(ky + xi);
    u
}

#[cfg(test)]
pub(super) fn debug_cold_raw(
    config: &HandConfig,
    object: &ObjectSpec,
    theta: [f64; 2],
) -> Option<([f64; 8], [f64; 2], [f64; 2])> {
    let init = cold_guess(config, object, theta, 0.0);
    let sol = newton(config, object, theta, 0.0, init)?;
    let ev = eval(config, object, theta, 0.0, &sol);
    let tensions = [
        config.tendon_tension(theta[0], sol[0], sol[1]),
        config.tendon_tension(theta[1], sol[2], sol[3]),
    ];
    Some((sol, [ev.contacts[0].xi, ev.contacts[1].xi], tensions))
}

/// Rolling-kinematics yaw overlay. Each contact's tangential displacement
/// along its pad turns into object rotation through the effective rolling
/// radius; standard-friction contacts displacing more than the slip threshold
/// slip and contribute nothing. Left and right pads roll in opposite world
/// senses.
pub(super) fn rolling_yaw_update(
    config: &HandConfig,
    object: &ObjectSpec,
    prev: &SimState,
    next: &SimState,
) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in 0..2 {
        let slide = next.contact_offsets[i] - prev.contact_offsets[i];
        let slips = matches!(object.friction, super::FrictionClass::Standard)
            && slide.abs() > config.slip_threshold;
        if slips {
            continue;
        }
        let radius = effective_radius(object);
        let sign = if i == 0 { -1.0 } else { 1.0 };
        sum += sign * slide / radius;
        count += 1;
    }
    if count == 0 {
        prev.object_pose.yaw
    } else {
        prev.object_pose.yaw + sum / count as f64
    }
}

fn effective_radius(object: &ObjectSpec) -> f64 {
    match object.shape {
        Shape::Disk { radius } => radius,
        // Face contact: center-to-face distance.
        Shape::Square { side } => 0.5 * side,
    }
}
