//! Learned message gates: each agent decides per step whether its message
//! is worth sending, trained against a frozen critic's estimate of the
//! message's value.

mod gate;
mod threshold;
mod train;

pub use gate::{
    apply_gate, bce, gate, gating_loss, gating_loss_grads, label, GateDecision, GatingNet, GATE_CUTOFF,
    PROB_CLAMP,
};
pub use threshold::{dynamic_threshold, fixed_threshold, ThresholdMode, ThresholdState, DEFAULT_WINDOW};
pub use train::{
    delta_q, delta_q_batch, gacml_act, train_gate, GateOutcome, GateOverride, GateStats, GateTrainConfig,
    GatedAct,
};
