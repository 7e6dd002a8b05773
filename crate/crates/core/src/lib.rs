//! Causal counterfactual explanations and recourse actions.
//!
//! The crate fits an additive-noise structural causal model from data and a
//! causal DAG ([`scm`]), then searches for the nearest counterfactual of a
//! classifier decision in the residual space of that model ([`search`]).
//! Because the search moves exogenous residuals rather than features, the
//! proposed changes propagate along the causal graph and the latent shift is
//! directly readable as a recourse action whose feasibility ([`feasibility`])
//! holds by construction. A feature-space baseline and the evaluation metrics
//! used to compare both ([`metrics`]) complete the toolkit, and
//! [`experiment`] wires everything into reproducible runs.
//!
//! ```
//! use ceils::graph::{CausalGraph, NodeSpec};
//!
//! let g = CausalGraph::build(
//!     vec![NodeSpec::continuous("X1"), NodeSpec::continuous("X2")],
//!     &[("X1", "X2")],
//! )?;
//! assert_eq!(g.roots(), vec!["X1"]);
//! # Ok::<(), ceils::Error>(())
//! ```

pub mod data;
pub mod error;
pub mod experiment;
pub mod feasibility;
pub mod graph;
pub mod matrix;
pub mod metrics;
pub mod model;
pub mod scm;
pub mod search;

pub use error::{Error, Result};
pub use feasibility::{ActionVector, Actionability, FeasibilitySpec, Monotonicity};
pub use graph::{CausalGraph, FeatureKind, NodeSpec};
pub use matrix::Matrix;
pub use model::{Architecture, ClassifierModel, RegressorModel, TrainConfig};
pub use scm::{LatentVector, StructuralModel};
pub use search::{CounterfactualResult, Method, SearchConfig};
