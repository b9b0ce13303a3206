//! Plant simulation: LTI dynamics, output feedback, and sensor attacks.

mod attack;
mod control;
mod model;
mod sim;

pub use attack::{synthesize_stealthy_delta, AttackPlan, AttackStrategy, ALARM_SCALE, STEALTH_EPS};
pub use control::{Controller, ControllerState, Knot, Reference};
pub use model::LtiModel;
pub use sim::{run_closed_loop, trial_rngs, ClosedLoop, SimTrace, Simulation, StepRecord};
