//! Reachable-state exploration of IoT systems and export of the resulting
//! pLTS as DOT or JSON.

use serde_json::json;

use super::semantics::{StepError, SysObs, SysState, SystemSemantics};
use super::{Model, Process};
use crate::plts::{self, rat_display, Act, Explored, ExploreError};

pub type SystemSpace<'m> = Explored<SystemSemantics<'m>>;

/// Explores the systems reachable from the given root processes (all rooted
/// at the model's initial environment) into one shared pLTS.
pub fn explore_system<'m>(
    model: &'m Model,
    roots: &[Process],
    budget: usize,
) -> Result<(SystemSemantics<'m>, SystemSpace<'m>), ExploreError<StepError>> {
    let semantics = SystemSemantics::new(model);
    let root_states: Vec<SysState> = roots
        .iter()
        .map(|p| semantics.initial_state(p.clone()))
        .collect();
    let explored = plts::explore(&semantics, &root_states, budget)?;
    Ok((semantics, explored))
}

fn act_label(act: &Act<SysObs>) -> String {
    act.to_string()
}

/// DOT rendering of an explored system pLTS: states as nodes, probabilistic
/// transitions as weighted edges.
pub fn to_dot(space: &SystemSpace<'_>) -> String {
    let mut out = String::from("digraph plts {\n  rankdir=LR;\n");
    for id in space.plts.states() {
        if id == plts::DEADLOCK && space.plts.steps(id).is_empty() && !space.roots.contains(&id) {
            // The reserved deadlock node is omitted unless something uses it.
            let used = space.plts.states().any(|s| {
                space
                    .plts
                    .steps(s)
                    .iter()
                    .any(|(_, d)| d.support().any(|t| *t == plts::DEADLOCK))
            });
            if !used {
                continue;
            }
        }
        let shape = if space.roots.contains(&id) {
            "box"
        } else {
            "ellipse"
        };
        out.push_str(&format!(
            "  n{} [shape={}, label=\"{}\"];\n",
            id.0,
            shape,
            escape(space.plts.label(id))
        ));
    }
    for id in space.plts.states() {
        for (act, dist) in space.plts.steps(id) {
            for (target, p) in dist.iter() {
                out.push_str(&format!(
                    "  n{} -> n{} [label=\"{} {}\"];\n",
                    id.0,
                    target.0,
                    escape(&act_label(act)),
                    rat_display(p)
                ));
            }
        }
    }
    out.push_str("}\n");
    out
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// JSON rendering with exact fractions.
pub fn to_json(space: &SystemSpace<'_>) -> serde_json::Value {
    let states: Vec<serde_json::Value> = space
        .plts
        .states()
        .map(|id| {
            json!({
                "id": id.0,
                "label": space.plts.label(id),
            })
        })
        .collect();
    let mut transitions = Vec::new();
    for id in space.plts.states() {
        for (act, dist) in space.plts.steps(id) {
            let support: Vec<serde_json::Value> = dist
                .iter()
                .map(|(t, p)| {
                    json!({
                        "to": t.0,
                        "num": p.numer().to_string(),
                        "den": p.denom().to_string(),
                    })
                })
                .collect();
            transitions.push(json!({
                "from": id.0,
                "action": act_label(act),
                "support": support,
            }));
        }
    }
    let roots: Vec<u32> = space.roots.iter().map(|r| r.0).collect();
    json!({
        "states": states,
        "roots": roots,
        "transitions": transitions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calculus::parse;
    use crate::plts::ExploreError;

    #[test]
    fn nil_system_over_one_boolean_variable_has_two_states() {
        let model = parse(
            "\
values { a, b }
statevar x in { a, b } init a
system S = nil
",
        )
        .unwrap();
        let (_, space) = explore_system(&model, &[Process::Nil], 100).unwrap();
        // deadlock + {x=a} |> nil + {x=b} |> nil
        assert_eq!(space.plts.n_states(), 3);
        let root = space.roots[0];
        let ticks = space.plts.steps(root);
        assert_eq!(ticks.len(), 2);
        let dot = to_dot(&space);
        assert!(dot.contains("tick 1"));
    }

    #[test]
    fn budget_exhaustion_is_reported() {
        let model = parse(
            "\
values { a, b }
statevar x in { a, b } init a
system S = nil
",
        )
        .unwrap();
        match explore_system(&model, &[Process::Nil], 1) {
            Err(ExploreError::BudgetExceeded(1)) => {}
            Err(other) => panic!("unexpected error {}", other),
            Ok(_) => panic!("expected a budget error"),
        }
    }
}
