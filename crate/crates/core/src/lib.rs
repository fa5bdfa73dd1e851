//! Transportation network simulation library.
//!
//! Road networks are modeled as routed graphs, intersections as switching
//! fabrics, and traffic control as a software-defined control plane that
//! programs signals and vehicles through flow tables. A cellular-automaton
//! traffic model drives experiments on top of these pieces.

pub mod fabric;
pub mod fixtures;
pub mod network;
pub mod queueing;
pub mod routing;
pub mod scenario;
pub mod sdt;
pub mod sim;
