//! Partitioning sites into clusters whose diameter stays below a threshold.
//!
//! The objective charges every near pair (`d_ij < D`) its travel time when
//! the two sites share a cluster and the penalty `D` when they do not. Small
//! instances are solved exactly with a subset DP ([`exact`]); larger ones by
//! an edge-selection agent ([`env`], [`neural`]) trained with PPO ([`ppo`]).

pub mod autodiff;
pub mod bench;
pub mod dsu;
pub mod env;
pub mod error;
pub mod exact;
pub mod instance;
pub mod neural;
pub mod objective;
pub mod optim;
pub mod policy;
pub mod ppo;

pub use env::{replay, EnvState, StepOutcome};
pub use error::{edge, Edge, Error, Result};
pub use instance::{CitiesConfig, EnvKind, GeneralConfig, Instance, InstanceSpec};
pub use objective::{evaluate, is_feasible, near_pairs, optimality_gap, savings, Partition};
