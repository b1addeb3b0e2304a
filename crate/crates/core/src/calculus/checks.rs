//! Static checks on parsed models: structural well-formedness, time-guarded
//! recursion, and the honest/attack classification of processes.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use super::parser::Diagnostic;
use super::{Model, Prefix, Process};

/// Structural validation: identifier resolution, arities, closedness,
/// sensor-table coverage, and restriction targets.
pub fn validate(model: &Model) -> Vec<Diagnostic> {
    let mut diags = Vec::new();

    for var in &model.statevars {
        if !var.range.contains(&var.init) {
            diags.push(Diagnostic::unpositioned(format!(
                "state variable {}: initial value {} is outside its range",
                var.name, var.init
            )));
        }
    }

    for (name, rows) in &model.sensors {
        let unconditional = rows.iter().filter(|r| r.when.is_none()).count();
        if unconditional > 0 {
            if rows.len() > 1 {
                diags.push(Diagnostic::unpositioned(format!(
                    "sensor {}: an unconditional row must be the only row",
                    name
                )));
            }
            continue;
        }
        let vars: BTreeSet<&String> = rows
            .iter()
            .filter_map(|r| r.when.as_ref().map(|(v, _)| v))
            .collect();
        if vars.len() != 1 {
            diags.push(Diagnostic::unpositioned(format!(
                "sensor {}: all rows must condition on the same state variable",
                name
            )));
            continue;
        }
        let var = vars.into_iter().next().unwrap();
        let Some(decl) = model.statevars.iter().find(|v| &v.name == var) else {
            diags.push(Diagnostic::unpositioned(format!(
                "sensor {}: conditions on unknown state variable {}",
                name, var
            )));
            continue;
        };
        let covered: BTreeSet<_> = rows
            .iter()
            .filter_map(|r| r.when.as_ref().map(|(_, val)| val.clone()))
            .collect();
        if covered.len() != rows.len() {
            diags.push(Diagnostic::unpositioned(format!(
                "sensor {}: duplicate measurement rows",
                name
            )));
        }
        let range: BTreeSet<_> = decl.range.iter().cloned().collect();
        if covered != range {
            diags.push(Diagnostic::unpositioned(format!(
                "sensor {}: measurement rows must cover the range of {} exactly",
                name, var
            )));
        }
    }

    let mut check_body = |owner: &str, params: &[String], body: &Process| {
        let free = body.free_vars();
        for var in &free {
            if !params.contains(var) {
                diags.push(Diagnostic::unpositioned(format!(
                    "{}: unbound communication variable {}",
                    owner, var
                )));
            }
        }
        check_process(owner, body, model, &mut diags);
    };

    for def in model.defs.values() {
        check_body(&format!("definition {}", def.name), &def.params, &def.body);
    }
    for (name, body) in &model.systems {
        check_body(&format!("system {}", name), &[], body);
    }
    for (name, body) in &model.attacks {
        check_body(&format!("attack {}", name), &[], body);
    }
    diags
}

fn check_process(owner: &str, p: &Process, model: &Model, diags: &mut Vec<Diagnostic>) {
    match p {
        Process::Nil => {}
        Process::Tick(q) => check_process(owner, q, model, diags),
        Process::Par(l, r) => {
            check_process(owner, l, model, diags);
            check_process(owner, r, model, diags);
        }
        Process::Timeout { then, alt, .. } => {
            check_process(owner, then, model, diags);
            check_process(owner, alt, model, diags);
        }
        Process::Call { id, args } => match model.defs.get(id) {
            None => diags.push(Diagnostic::unpositioned(format!(
                "{}: unknown identifier {}",
                owner, id
            ))),
            Some(def) => {
                if def.params.len() != args.len() {
                    diags.push(Diagnostic::unpositioned(format!(
                        "{}: call of {} has {} arguments, expected {}",
                        owner,
                        id,
                        args.len(),
                        def.params.len()
                    )));
                }
            }
        },
        Process::If { then, alt, .. } => {
            check_process(owner, then, model, diags);
            check_process(owner, alt, model, diags);
        }
        Process::Restrict { proc, channel } => {
            if model.is_sensor(channel) {
                diags.push(Diagnostic::unpositioned(format!(
                    "{}: restriction of sensor {} (only channels can be restricted)",
                    owner, channel
                )));
            }
            check_process(owner, proc, model, diags);
        }
        Process::Persist { .. } => diags.push(Diagnostic::unpositioned(format!(
            "{}: internal error: persistent prefix survived desugaring",
            owner
        ))),
    }
}

/// Time-guardedness: every cycle of recursive unfoldings must pass through a
/// time-consuming construct. An identifier occurrence is time-guarded when
/// it sits under a `tick.` prefix or in the timeout continuation `Q` of
/// `[pfx.P]Q`; the prefixed continuation `P` is reached by firing an untimed
/// action, so a recursion cycle running only through such positions (or
/// through conditionals and parallel components) would be zeno and is
/// rejected.
pub fn check_time_guarded(model: &Model) -> Result<(), Diagnostic> {
    // Edges H → K for every occurrence of K in the body of H that is not
    // time-guarded, with a sample occurrence path for diagnostics.
    let mut edges: BTreeMap<&str, BTreeMap<&str, String>> = BTreeMap::new();
    for def in model.defs.values() {
        let mut found = BTreeMap::new();
        unguarded_occurrences(&def.body, false, &mut Vec::new(), &mut found);
        edges.insert(def.name.as_str(), found);
    }

    // Depth-first cycle search over the unguarded-call graph.
    let mut state: BTreeMap<&str, u8> = BTreeMap::new(); // 1 = on stack, 2 = done
    for start in model.defs.keys() {
        if state.get(start.as_str()).is_some() {
            continue;
        }
        let mut stack: Vec<(&str, Vec<&str>)> = vec![(
            start.as_str(),
            edges[start.as_str()].keys().copied().collect(),
        )];
        state.insert(start.as_str(), 1);
        let mut trail: Vec<&str> = vec![start.as_str()];
        while let Some((node, succs)) = stack.last_mut() {
            match succs.pop() {
                Some(next) => {
                    if !model.defs.contains_key(next) {
                        continue; // unknown identifiers are reported by validate
                    }
                    match state.get(next) {
                        Some(1) => {
                            let node = *node;
                            let mut cycle: Vec<&str> =
                                trail.iter().copied().skip_while(|n| *n != next).collect();
                            cycle.push(next);
                            let path = &edges[node][next];
                            return Err(Diagnostic::unpositioned(format!(
                                "definition {} is not time-guarded: unguarded occurrence of {} at {} closes the cycle {}",
                                node,
                                next,
                                path,
                                cycle.join(" -> ")
                            )));
                        }
                        Some(_) => {}
                        None => {
                            state.insert(next, 1);
                            trail.push(next);
                            stack.push((next, edges[next].keys().copied().collect()));
                        }
                    }
                }
                None => {
                    state.insert(node, 2);
                    trail.pop();
                    stack.pop();
                }
            }
        }
    }
    Ok(())
}

fn unguarded_occurrences<'a>(
    p: &'a Process,
    guarded: bool,
    path: &mut Vec<&'static str>,
    out: &mut BTreeMap<&'a str, String>,
) {
    match p {
        Process::Nil => {}
        Process::Tick(q) => {
            path.push("tick");
            unguarded_occurrences(q, true, path, out);
            path.pop();
        }
        Process::Par(l, r) => {
            path.push("par-left");
            unguarded_occurrences(l, guarded, path, out);
            path.pop();
            path.push("par-right");
            unguarded_occurrences(r, guarded, path, out);
            path.pop();
        }
        Process::Timeout { then, alt, .. } => {
            path.push("prefix-continuation");
            unguarded_occurrences(then, guarded, path, out);
            path.pop();
            path.push("timeout-continuation");
            unguarded_occurrences(alt, true, path, out);
            path.pop();
        }
        Process::Call { id, .. } => {
            if !guarded {
                out.entry(id.as_str())
                    .or_insert_with(|| if path.is_empty() {
                        "the body root".to_string()
                    } else {
                        path.join(" > ")
                    });
            }
        }
        Process::If { then, alt, .. } => {
            path.push("then");
            unguarded_occurrences(then, guarded, path, out);
            path.pop();
            path.push("else");
            unguarded_occurrences(alt, guarded, path, out);
            path.pop();
        }
        Process::Restrict { proc, .. } => {
            path.push("restriction");
            unguarded_occurrences(proc, guarded, path, out);
            path.pop();
        }
        Process::Persist { body, .. } => {
            path.push("persistent-prefix");
            unguarded_occurrences(body, guarded, path, out);
            path.pop();
        }
    }
}

/// All prefixes reachable from a process through the definitions it calls.
pub fn reachable_prefixes(proc: &Process, model: &Model) -> Vec<Prefix> {
    let mut out: Vec<Prefix> = proc.prefixes().into_iter().cloned().collect();
    let mut seen: BTreeSet<String> = BTreeSet::new();
    let mut queue: VecDeque<String> = proc.called_ids().into_iter().collect();
    while let Some(id) = queue.pop_front() {
        if !seen.insert(id.clone()) {
            continue;
        }
        if let Some(def) = model.defs.get(&id) {
            out.extend(def.body.prefixes().into_iter().cloned());
            for next in def.body.called_ids() {
                if !seen.contains(&next) {
                    queue.push_back(next);
                }
            }
        }
    }
    out
}

/// A process is honest iff it never writes on a sensor, anywhere in its
/// reachable definitions.
pub fn check_honest(proc: &Process, model: &Model) -> bool {
    reachable_prefixes(proc, model).iter().all(|p| match p {
        Prefix::Write { target, .. } => !model.is_sensor(target),
        Prefix::Read { .. } => true,
    })
}

/// A cyber-physical attack writes on at least one sensor and never uses
/// communication channels.
pub fn check_attack(proc: &Process, model: &Model) -> bool {
    let prefixes = reachable_prefixes(proc, model);
    let writes_sensor = prefixes
        .iter()
        .any(|p| matches!(p, Prefix::Write { target, .. } if model.is_sensor(target)));
    let uses_channel = prefixes.iter().any(|p| !model.is_sensor(p.target()));
    writes_sensor && !uses_channel
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calculus::parse;

    #[test]
    fn guarded_forms_are_accepted() {
        let model = parse("values { v }\ndef H = tick.H\n").unwrap();
        assert!(check_time_guarded(&model).is_ok());
        // The timeout continuation is time-guarded.
        let model = parse("values { v }\ndef H = [c!v.nil]H\n").unwrap();
        assert!(check_time_guarded(&model).is_ok());
    }

    #[test]
    fn directly_unguarded_recursion_is_rejected() {
        let model = parse("values { v }\ndef H = H | nil\n").unwrap();
        let err = check_time_guarded(&model).unwrap_err();
        assert!(err.message.contains("H"));
        assert!(err.message.contains("par-left"));
    }

    #[test]
    fn prefix_continuation_cycles_are_zeno_and_rejected() {
        // H can fire c!v forever without time passing.
        let model = parse("values { v }\ndef H = [c!v.H]H\n").unwrap();
        assert!(check_time_guarded(&model).is_err());
    }

    #[test]
    fn persistent_prefix_chains_are_accepted() {
        // The expansion of nested persistent prefixes recurses only through
        // fresh, acyclic definitions.
        let model = parse(
            "values { on }\ndef Mng = c1?z1.c2?z2.if z1=on or z2=on then tick.Mng else tick.Mng\n",
        )
        .unwrap();
        assert!(check_time_guarded(&model).is_ok());
    }

    #[test]
    fn honesty_and_attack_classification() {
        let model = parse(
            "\
values { presence, absence, 0..3 }
statevar r1 in { absence, presence } init absence
sensor s1 when r1=absence gives { absence: 1 }
sensor s1 when r1=presence gives { presence: 1 }
def Ctrl1 = [s1?z.tick.Ctrl1]Ctrl1
def B1(j) = if j=0 then nil else [s1!presence.tick.B1(j-1)]B1(j-1)
def Mixed = [c!presence.[s1!presence.nil]nil]nil
system M1 = Ctrl1
attack Afp1 = B1(3)
",
        )
        .unwrap();
        let ctrl = Process::call("Ctrl1");
        let attack = Process::call("Afp1");
        assert!(check_honest(&ctrl, &model));
        assert!(check_honest(&Process::Nil, &model));
        assert!(!check_honest(&model.attacks["Afp1"], &model));

        assert!(check_attack(&model.attacks["Afp1"], &model));
        assert!(!check_attack(&ctrl, &model));
        // Uses a channel, so it is not a pure cyber-physical attack.
        assert!(!check_attack(&Process::call("Mixed"), &model));
        let _ = attack;
    }

    #[test]
    fn validate_reports_unknown_and_arity() {
        let model = parse("values { v }\ndef H = tick.K\nsystem S = H\n").unwrap();
        let diags = validate(&model);
        assert!(diags.iter().any(|d| d.message.contains("unknown identifier K")));

        let model = parse("values { v, 0..2 }\ndef H(j) = tick.H(j-1)\nsystem S = H\n").unwrap();
        let diags = validate(&model);
        assert!(diags
            .iter()
            .any(|d| d.message.contains("has 0 arguments, expected 1")));
    }

    #[test]
    fn validate_reports_unbound_variables_and_sensor_coverage() {
        let model = parse("values { v }\ndef H = [c!z.nil]nil\n").unwrap();
        let diags = validate(&model);
        assert!(diags
            .iter()
            .any(|d| d.message.contains("unbound communication variable z")));

        let model = parse(
            "\
values { presence, absence }
statevar r1 in { absence, presence } init absence
sensor s1 when r1=absence gives { absence: 1 }
",
        )
        .unwrap();
        let diags = validate(&model);
        assert!(diags.iter().any(|d| d.message.contains("cover the range")));
    }
}
