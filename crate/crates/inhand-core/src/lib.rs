//! Haptic-only in-hand object pose estimation and control for a two-finger
//! tendon-driven underactuated hand.
//!
//! A quasi-static grasp simulator ([`sim`]) stands in for the physical hand and
//! produces ground-truth poses plus synthetic haptic readings (actuator angles,
//! tendon loads, tactile pad voltages). On top of it:
//!
//! * [`data`] — episodic random-action collection, dataset files, feature
//!   combinations and normalization,
//! * [`regress`] — local Gaussian-process, fully-connected and LSTM regressors
//!   with a shared Adam/MSE trainer and gradient checking,
//! * [`percept`] — the pose observation model, its error critic, and the
//!   evaluation protocols (feature table, data-size sweep, cross transfer),
//! * [`dynamics`] — the delta-form learned transition model and its open-loop
//!   error curves,
//! * [`control`] — haptic servoing, random-shooting MPC with a critic-weighted
//!   cost, open-loop planning and the roll-out benchmark.

pub mod control;
pub mod data;
pub mod dynamics;
pub mod linalg;
pub mod percept;
pub mod regress;
pub mod seeding;
pub mod sim;

// re-exports restored as modules land
pub use sim::{Action, HandConfig, NoiseModel, ObjectSpec, Pose, SensorReading, SimState};
