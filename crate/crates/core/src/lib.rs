//! Multi-agent general reinforcement learning environments controlled by
//! economic mechanisms.
//!
//! The crate is organised bottom-up:
//!
//! * [`envcore`]: history-based environments and the mechanism interaction loop.
//! * [`mechanisms`]: Clark-pivot VCG and the exponential (differentially private) VCG.
//! * [`oracle`]: exact rational q / social-cost / valuation tables, IC and IR
//!   checks, and the guaranteed utility mechanism.
//! * [`agents`]: KT estimators, Hedge mixtures of abstract-MDP specialists,
//!   the swap-regret master and tabular Q-learning.
//! * [`markovvcg`]: VCG on known episodic MDPs.
//! * [`captrade`]: the refinery permit auction.

pub mod agents;
pub mod captrade;
pub mod envcore;
pub mod error;
pub mod markovvcg;
pub mod mechanisms;
pub mod oracle;

pub use error::{Error, Result};
