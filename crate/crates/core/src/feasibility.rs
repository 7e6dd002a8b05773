//! Action constraints: which latent coordinates may move, and in which
//! direction.
//!
//! Immutable and mutable-but-non-actionable nodes both keep their latent
//! coordinate fixed (`a_v = 0`). The difference only shows in feature space:
//! a non-actionable node still moves when its ancestors do. Immutability is
//! accepted for root nodes only; a non-root that must stay fixed regardless
//! of its parents is modelled by cutting its incoming edges
//! ([`derive_hard_intervention_graph`]) and marking it non-actionable.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{CausalGraph, FeatureKind};

/// Default tolerance for [`is_feasible`].
pub const DEFAULT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Actionability {
    Actionable,
    NonActionable,
    Immutable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Monotonicity {
    #[default]
    Free,
    IncreaseOnly,
    DecreaseOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Constraint {
    pub class: Actionability,
    pub monotone: Monotonicity,
}

impl Constraint {
    pub const FREE: Constraint = Constraint {
        class: Actionability::Actionable,
        monotone: Monotonicity::Free,
    };

    pub fn frozen(&self) -> bool {
        self.class != Actionability::Actionable
    }

    /// Admissible interval for the action on this coordinate.
    pub fn bounds(&self) -> (f64, f64) {
        if self.frozen() {
            return (0.0, 0.0);
        }
        match self.monotone {
            Monotonicity::Free => (f64::NEG_INFINITY, f64::INFINITY),
            Monotonicity::IncreaseOnly => (0.0, f64::INFINITY),
            Monotonicity::DecreaseOnly => (f64::NEG_INFINITY, 0.0),
        }
    }
}

/// Per-node constraints, aligned with a graph's node order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilitySpec {
    names: Vec<String>,
    constraints: Vec<Constraint>,
}

impl FeasibilitySpec {
    /// Builds a spec for `graph` from `(node, constraint)` entries. Every node
    /// must appear exactly once.
    pub fn new<S: AsRef<str>>(graph: &CausalGraph, entries: &[(S, Constraint)]) -> Result<Self> {
        let mut slots: Vec<Option<Constraint>> = vec![None; graph.len()];
        for (name, c) in entries {
            let idx = graph.index_of(name.as_ref()).map_err(|_| {
                Error::KeyMismatch(format!("`{}` is not a graph node", name.as_ref()))
            })?;
            if slots[idx].replace(*c).is_some() {
                return Err(Error::KeyMismatch(format!(
                    "`{}` constrained twice",
                    name.as_ref()
                )));
            }
        }
        let constraints = slots
            .into_iter()
            .enumerate()
            .map(|(i, c)| {
                c.ok_or_else(|| {
                    Error::KeyMismatch(format!("no constraint for `{}`", graph.name(i)))
                })
            })
            .collect::<Result<Vec<_>>>()?;

        for (i, c) in constraints.iter().enumerate() {
            let node = graph.name(i).to_string();
            if c.class == Actionability::Immutable && !graph.is_root(i) {
                return Err(Error::InvalidConstraint {
                    node,
                    reason: "immutable is only supported for root nodes; cut its incoming \
                             edges and mark it non_actionable instead"
                        .into(),
                });
            }
            if c.class == Actionability::Actionable && graph.kind(i) == FeatureKind::Categorical {
                return Err(Error::InvalidConstraint {
                    node,
                    reason: "categorical features cannot be actionable".into(),
                });
            }
        }
        Ok(FeasibilitySpec {
            names: graph.node_names().into_iter().map(String::from).collect(),
            constraints,
        })
    }

    /// Every node actionable and free.
    pub fn unconstrained(graph: &CausalGraph) -> Result<Self> {
        let entries: Vec<(&str, Constraint)> = graph
            .node_names()
            .into_iter()
            .map(|n| (n, Constraint::FREE))
            .collect();
        Self::new(graph, &entries)
    }

    pub fn len(&self) -> usize {
        self.constraints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.constraints.is_empty()
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn get(&self, name: &str) -> Option<&Constraint> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.constraints[i])
    }

    /// Fails unless the spec was built for a graph with the same node names
    /// in the same order.
    pub fn check_graph(&self, graph: &CausalGraph) -> Result<()> {
        if self.names.iter().map(String::as_str).ne(graph.node_names()) {
            return Err(Error::IncompatibleSpec(format!(
                "spec keys {:?} vs graph nodes {:?}",
                self.names,
                graph.node_names()
            )));
        }
        Ok(())
    }

    fn check(&self, a: &ActionVector) -> Result<()> {
        if a.0.len() != self.constraints.len() {
            return Err(Error::KeyMismatch(format!(
                "action has {} entries, spec has {}",
                a.0.len(),
                self.constraints.len()
            )));
        }
        Ok(())
    }
}

/// Latent shift `a` with `u_cf = u0 + a`, aligned with the graph's node order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionVector(pub Vec<f64>);

impl ActionVector {
    pub fn zeros(n: usize) -> Self {
        ActionVector(vec![0.0; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Zeroes frozen coordinates and clamps monotone ones to their sign.
pub fn project_action(a: &ActionVector, spec: &FeasibilitySpec) -> Result<ActionVector> {
    spec.check(a)?;
    Ok(ActionVector(
        a.0.iter()
            .zip(&spec.constraints)
            .map(|(&v, c)| {
                let (lo, hi) = c.bounds();
                v.clamp(lo, hi)
            })
            .collect(),
    ))
}

/// Whether every coordinate of `a` satisfies its constraint up to `tol`.
pub fn is_feasible(a: &ActionVector, spec: &FeasibilitySpec, tol: f64) -> Result<bool> {
    spec.check(a)?;
    Ok(a.0.iter().zip(&spec.constraints).all(|(&v, c)| {
        let (lo, hi) = c.bounds();
        v >= lo - tol && v <= hi + tol
    }))
}

/// Graph in which every node of `frozen` has lost its incoming edges, so that
/// a hard intervention on it becomes a soft one on a root.
pub fn derive_hard_intervention_graph<S: AsRef<str>>(
    graph: &CausalGraph,
    frozen: &[S],
) -> Result<CausalGraph> {
    graph.without_incoming(frozen)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::NodeSpec;
    use proptest::prelude::*;

    fn c(class: Actionability, monotone: Monotonicity) -> Constraint {
        Constraint { class, monotone }
    }

    fn synthetic() -> CausalGraph {
        CausalGraph::build(
            vec![NodeSpec::continuous("X1"), NodeSpec::continuous("X2")],
            &[("X1", "X2")],
        )
        .unwrap()
    }

    fn synthetic2() -> FeasibilitySpec {
        FeasibilitySpec::new(
            &synthetic(),
            &[
                ("X1", Constraint::FREE),
                ("X2", c(Actionability::NonActionable, Monotonicity::Free)),
            ],
        )
        .unwrap()
    }

    fn german() -> CausalGraph {
        CausalGraph::build(
            vec![
                NodeSpec::continuous("age"),
                NodeSpec::categorical("gender"),
                NodeSpec::continuous("amount"),
                NodeSpec::continuous("duration"),
            ],
            &[("age", "amount"), ("gender", "amount"), ("amount", "duration")],
        )
        .unwrap()
    }

    fn german_spec() -> FeasibilitySpec {
        FeasibilitySpec::new(
            &german(),
            &[
                ("age", c(Actionability::Actionable, Monotonicity::IncreaseOnly)),
                ("gender", c(Actionability::Immutable, Monotonicity::Free)),
                ("amount", Constraint::FREE),
                ("duration", Constraint::FREE),
            ],
        )
        .unwrap()
    }

    #[test]
    fn projection_examples() {
        let p = project_action(&ActionVector(vec![0.3, -0.2]), &synthetic2()).unwrap();
        assert_eq!(p.0, vec![0.3, 0.0]);
        let z = project_action(&ActionVector::zeros(2), &synthetic2()).unwrap();
        assert_eq!(z.0, vec![0.0, 0.0]);
        let g = project_action(&ActionVector(vec![-2.0, 1.0, 3.0, -4.0]), &german_spec()).unwrap();
        assert_eq!(g.0, vec![0.0, 0.0, 3.0, -4.0]);
    }

    #[test]
    fn feasibility_examples() {
        let spec = synthetic2();
        assert!(is_feasible(&ActionVector(vec![0.103, 0.0]), &spec, DEFAULT_TOLERANCE).unwrap());
        assert!(!is_feasible(&ActionVector(vec![-0.260, 0.242]), &spec, DEFAULT_TOLERANCE).unwrap());
        assert!(is_feasible(&ActionVector::zeros(4), &german_spec(), 0.0).unwrap());
        assert!(matches!(
            is_feasible(&ActionVector::zeros(3), &spec, 0.0),
            Err(Error::KeyMismatch(_))
        ));
    }

    #[test]
    fn spec_validation() {
        let g = synthetic();
        assert!(matches!(
            FeasibilitySpec::new(&g, &[("X1", Constraint::FREE)]),
            Err(Error::KeyMismatch(_))
        ));
        assert!(matches!(
            FeasibilitySpec::new(
                &g,
                &[
                    ("X1", Constraint::FREE),
                    ("X2", c(Actionability::Immutable, Monotonicity::Free))
                ]
            ),
            Err(Error::InvalidConstraint { node, .. }) if node == "X2"
        ));
        let err = FeasibilitySpec::new(
            &german(),
            &[
                ("age", Constraint::FREE),
                ("gender", Constraint::FREE),
                ("amount", Constraint::FREE),
                ("duration", Constraint::FREE),
            ],
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidConstraint { node, .. } if node == "gender"));
        assert!(german_spec().check_graph(&synthetic()).is_err());
        assert!(german_spec().check_graph(&german()).is_ok());
    }

    #[test]
    fn hard_intervention_graphs() {
        let g = german();
        let cut = derive_hard_intervention_graph(&g, &["amount"]).unwrap();
        assert!(cut.is_root(cut.index_of("amount").unwrap()));
        assert_eq!(cut.parents("duration").unwrap(), vec!["amount"]);
        assert_eq!(derive_hard_intervention_graph::<&str>(&g, &[]).unwrap(), g);
        let all = derive_hard_intervention_graph(&g, &g.node_names()).unwrap();
        assert_eq!(all.edge_count(), 0);
        assert!(matches!(
            derive_hard_intervention_graph(&g, &["rating"]),
            Err(Error::UnknownNode(_))
        ));
    }

    fn any_constraint() -> impl Strategy<Value = Constraint> {
        let class = prop_oneof![
            Just(Actionability::Actionable),
            Just(Actionability::NonActionable)
        ];
        let mono = prop_oneof![
            Just(Monotonicity::Free),
            Just(Monotonicity::IncreaseOnly),
            Just(Monotonicity::DecreaseOnly)
        ];
        (class, mono).prop_map(|(class, monotone)| Constraint { class, monotone })
    }

    proptest! {
        #[test]
        fn projection_properties(
            cs in proptest::collection::vec(any_constraint(), 4),
            a in proptest::collection::vec(-10.0f64..10.0, 4),
        ) {
            let g = CausalGraph::build::<&str>(
                (0..4).map(|i| NodeSpec::continuous(format!("n{i}"))).collect(), &[]).unwrap();
            let entries: Vec<(String, Constraint)> =
                cs.iter().enumerate().map(|(i, c)| (format!("n{i}"), *c)).collect();
            let spec = FeasibilitySpec::new(&g, &entries).unwrap();
            let a = ActionVector(a);
            let p = project_action(&a, &spec).unwrap();
            prop_assert_eq!(&project_action(&p, &spec).unwrap(), &p);
            prop_assert!(is_feasible(&p, &spec, 0.0).unwrap());
            for i in 0..4 {
                let single = ActionVector((0..4).map(|j| if j == i { a.0[i] } else { 0.0 }).collect());
                if is_feasible(&single, &spec, 0.0).unwrap() {
                    prop_assert_eq!(p.0[i], a.0[i]);
                }
            }
            let free = FeasibilitySpec::unconstrained(&g).unwrap();
            prop_assert_eq!(project_action(&a, &free).unwrap(), a);
        }
    }
}
