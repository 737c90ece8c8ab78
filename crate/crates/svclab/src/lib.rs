//! svclab — a laboratory for domain adaptation of RL service-management
//! policies in an emulated 5G network.
//!
//! The crate bundles five pieces that together reproduce a complete
//! adaptation study at desk scale:
//!
//! - [`netsim`]: a deterministic, seedable emulator of a multi-cell network
//!   carrying CV, URLLC and mIoT traffic, exposed as a goal-conditioned RL
//!   environment with priority/MBR actions and QoE/PER KPIs.
//! - [`tensorcore`]: a small dense-tensor engine with reverse-mode
//!   differentiation, MLPs, Adam and the loss primitives used by PPO and the
//!   adversarial correspondence learner.
//! - [`policy`]: a goal-conditioned PPO trainer producing per-domain source
//!   and golden reference policies.
//! - [`correspond`]: the cycle-consistency correspondence learner that adapts
//!   a trained source policy to a new domain without target-domain rewards.
//! - [`proximity`]: the service-proximity heuristic that predicts which
//!   source policy to adapt from.
//!
//! [`labctl`] ties everything together behind a CLI (`labctl` binary),
//! configuration files, CSV/SVG artifacts and a consolidated report.

pub mod correspond;
pub mod env;
pub mod guide;
pub mod labctl;
pub mod netsim;
pub mod policy;
pub mod proximity;
pub mod tensorcore;
