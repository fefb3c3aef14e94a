//! Simulation and analysis of privacy leakage in centralized and
//! decentralized federated learning.
//!
//! * [`topology`]: random connected graphs and Metropolis mixing matrices.
//! * [`protocol`]: FedSGD / D-FedSGD rounds and the adversary's view per mode.
//! * [`infotheory`]: Gaussian closed forms and KSG mutual information estimators.
//! * [`leakage`]: the Monte-Carlo leakage sweep and the ordering check.
//! * [`attack`]: gradient inversion on a linear-softmax toy model, scored by SSIM.

pub mod attack;
pub mod infotheory;
pub mod leakage;
pub mod protocol;
pub mod seeds;
pub mod topology;

pub use protocol::{Mode, Topology};
