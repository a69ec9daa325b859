//! Adversarial training of a tabular softmax protagonist against
//! alpha-reward-preserving attacks on dynamics or observations.

mod attacks;
mod buffer;
mod eta_q;
mod policy;
mod train;

pub use attacks::{craft_dynamics_direction, craft_rua_direction, perturbed_row};
pub use buffer::{ReplayBuffer, TransitionRecord};
pub use eta_q::EtaQTable;
pub use policy::TabularPolicy;
pub use train::{
    collect_cycle, evaluate_policy, improve_protagonist, q_update_cycle, train, train_from,
    AttackSurface, CollectStats, LogRow, TableInit, TrainConfig, TrainOutcome, TrainState,
    TrainingLog,
};
