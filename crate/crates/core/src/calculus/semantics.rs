//! The two-level operational semantics: a labelled transition system for
//! processes and the probabilistic LTS for IoT systems built on top of it.
//!
//! Process-level rules: a prefix with timeout fires its write or read, or
//! times out; `nil` and `tick.P` let time pass; a parallel composition
//! interleaves untimed moves, synchronises matching write/read pairs into τ,
//! and ticks exactly when both components tick; conditionals and recursion
//! are label-transparent; restriction blocks prefixes on the restricted
//! name.
//!
//! System-level rules: channel writes and reads surface as outputs and
//! (one-per-value) inputs; reads of a declared sensor become τ-steps whose
//! derivative follows the measurement map; process τ lifts to system τ; and
//! time passes only when no τ-step is enabled (maximal progress), branching
//! nondeterministically over every admissible next environment. Writes on
//! sensors never surface as system-level actions; they only matter through
//! process-level synchronisation with a sensor read.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use super::checks::reachable_prefixes;
use super::{
    BoolExpr, EnvError, IoTSystem, Model, Prefix, Process, Universe, Value, ValueExpr,
};
use crate::plts::{Act, DistError, Plts, Rat, SubDistribution};

/// Process-level transition labels: `τ`, `tick`, a write `o!v` with an
/// evaluated payload, or a read `o?z` still carrying its bound variable.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PLabel {
    Tau,
    Tick,
    Write(String, Value),
    Read(String, String),
}

impl fmt::Display for PLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PLabel::Tau => write!(f, "tau"),
            PLabel::Tick => write!(f, "tick"),
            PLabel::Write(o, v) => write!(f, "{}!{}", o, v),
            PLabel::Read(o, z) => write!(f, "{}?{}", o, z),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("unbound variable {0}")]
    Unbound(String),
    #[error("{0} is not a natural number")]
    NotNatural(String),
    #[error("value {0} is outside the declared universe")]
    OutOfUniverse(String),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StepError {
    #[error("unknown identifier {0}")]
    UnknownIdentifier(String),
    #[error("call of {id} has {got} arguments, expected {want}")]
    ArityMismatch { id: String, got: usize, want: usize },
    #[error("argument of {id}: {source}")]
    BadArgument { id: String, source: EvalError },
    #[error("condition {cond}: {source}")]
    BadCondition { cond: String, source: EvalError },
    #[error("write payload: {0}")]
    BadPayload(EvalError),
    #[error("recursion unfolding {0} exceeded the depth budget; definitions are not time-guarded")]
    UnfoldDepthExceeded(String),
    #[error("persistent prefix reached the semantics without being desugared")]
    UnexpandedSugar,
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Dist(#[from] DistError),
}

/// Evaluates a ground value expression against the universe.
pub fn eval_value(e: &ValueExpr, universe: &Universe) -> Result<Value, EvalError> {
    match e {
        ValueExpr::Lit(v) => {
            if universe.contains(v) {
                Ok(v.clone())
            } else {
                Err(EvalError::OutOfUniverse(v.to_string()))
            }
        }
        ValueExpr::Var(v) => Err(EvalError::Unbound(v.clone())),
        ValueExpr::Add(a, b) | ValueExpr::Sub(a, b) => {
            let x = as_nat(eval_value(a, universe)?)?;
            let y = as_nat(eval_value(b, universe)?)?;
            let n = if matches!(e, ValueExpr::Add(_, _)) {
                x.checked_add(y)
            } else {
                x.checked_sub(y)
            }
            .ok_or_else(|| EvalError::OutOfUniverse(e.to_string()))?;
            let v = Value::Nat(n);
            if universe.contains(&v) {
                Ok(v)
            } else {
                Err(EvalError::OutOfUniverse(v.to_string()))
            }
        }
    }
}

fn as_nat(v: Value) -> Result<u32, EvalError> {
    match v {
        Value::Nat(n) => Ok(n),
        Value::Atom(a) => Err(EvalError::NotNatural(a)),
    }
}

/// Evaluates a ground boolean expression. Values of different kinds are
/// simply unequal.
pub fn eval_bool(b: &BoolExpr, universe: &Universe) -> Result<bool, EvalError> {
    match b {
        BoolExpr::Eq(x, y) => Ok(eval_value(x, universe)? == eval_value(y, universe)?),
        BoolExpr::Or(x, y) => Ok(eval_bool(x, universe)? || eval_bool(y, universe)?),
        BoolExpr::And(x, y) => Ok(eval_bool(x, universe)? && eval_bool(y, universe)?),
        BoolExpr::Not(x) => Ok(!eval_bool(x, universe)?),
    }
}

/// Depth budget for recursion unfolding inside a single step derivation; it
/// only triggers on definitions that are not time-guarded.
const UNFOLD_DEPTH: usize = 4096;

/// The strong process-level step set of a closed process.
pub fn process_step(p: &Process, model: &Model) -> Result<Vec<(PLabel, Process)>, StepError> {
    let mut out = step_rec(p, model, UNFOLD_DEPTH)?;
    out.sort();
    out.dedup();
    Ok(out)
}

fn step_rec(
    p: &Process,
    model: &Model,
    depth: usize,
) -> Result<Vec<(PLabel, Process)>, StepError> {
    match p {
        Process::Nil => Ok(vec![(PLabel::Tick, Process::Nil)]),
        Process::Tick(q) => Ok(vec![(PLabel::Tick, (**q).clone())]),
        Process::Timeout { prefix, then, alt } => {
            let mut out = Vec::with_capacity(2);
            match prefix {
                Prefix::Write { target, value } => {
                    let v = eval_value(value, &model.universe).map_err(StepError::BadPayload)?;
                    out.push((PLabel::Write(target.clone(), v), (**then).clone()));
                }
                Prefix::Read { target, var } => {
                    out.push((PLabel::Read(target.clone(), var.clone()), (**then).clone()));
                }
            }
            out.push((PLabel::Tick, (**alt).clone()));
            Ok(out)
        }
        Process::Par(l, r) => {
            let ls = step_rec(l, model, depth)?;
            let rs = step_rec(r, model, depth)?;
            let mut out = Vec::new();
            for (lab, l2) in &ls {
                if *lab != PLabel::Tick {
                    out.push((lab.clone(), Process::par(l2.clone(), (**r).clone())));
                }
            }
            for (lab, r2) in &rs {
                if *lab != PLabel::Tick {
                    out.push((lab.clone(), Process::par((**l).clone(), r2.clone())));
                }
            }
            for (ll, l2) in &ls {
                if let PLabel::Write(o, v) = ll {
                    for (rl, r2) in &rs {
                        if let PLabel::Read(o2, z) = rl {
                            if o2 == o {
                                out.push((
                                    PLabel::Tau,
                                    Process::par(l2.clone(), r2.subst_one(z, v)),
                                ));
                            }
                        }
                    }
                }
            }
            for (rl, r2) in &rs {
                if let PLabel::Write(o, v) = rl {
                    for (ll, l2) in &ls {
                        if let PLabel::Read(o2, z) = ll {
                            if o2 == o {
                                out.push((
                                    PLabel::Tau,
                                    Process::par(l2.subst_one(z, v), r2.clone()),
                                ));
                            }
                        }
                    }
                }
            }
            let lt = ls.iter().find(|(lab, _)| *lab == PLabel::Tick);
            let rt = rs.iter().find(|(lab, _)| *lab == PLabel::Tick);
            if let (Some((_, l2)), Some((_, r2))) = (lt, rt) {
                out.push((PLabel::Tick, Process::par(l2.clone(), r2.clone())));
            }
            Ok(out)
        }
        Process::Call { id, args } => {
            if depth == 0 {
                return Err(StepError::UnfoldDepthExceeded(id.clone()));
            }
            let def = model
                .defs
                .get(id)
                .ok_or_else(|| StepError::UnknownIdentifier(id.clone()))?;
            if def.params.len() != args.len() {
                return Err(StepError::ArityMismatch {
                    id: id.clone(),
                    got: args.len(),
                    want: def.params.len(),
                });
            }
            let mut env = BTreeMap::new();
            for (param, arg) in def.params.iter().zip(args) {
                let v = eval_value(arg, &model.universe).map_err(|source| {
                    StepError::BadArgument {
                        id: id.clone(),
                        source,
                    }
                })?;
                env.insert(param.clone(), v);
            }
            let body = def.body.subst(&env);
            step_rec(&body, model, depth - 1)
        }
        Process::If { cond, then, alt } => {
            let b = eval_bool(cond, &model.universe).map_err(|source| StepError::BadCondition {
                cond: cond.to_string(),
                source,
            })?;
            step_rec(if b { then } else { alt }, model, depth)
        }
        Process::Restrict { proc, channel } => {
            let inner = step_rec(proc, model, depth)?;
            Ok(inner
                .into_iter()
                .filter(|(lab, _)| match lab {
                    PLabel::Write(o, _) | PLabel::Read(o, _) => o != channel,
                    _ => true,
                })
                .map(|(lab, p2)| {
                    (
                        lab,
                        Process::Restrict {
                            proc: Box::new(p2),
                            channel: channel.clone(),
                        },
                    )
                })
                .collect())
        }
        Process::Persist { .. } => Err(StepError::UnexpandedSugar),
    }
}

/// System-level observable actions: channel output and channel input.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SysObs {
    Out(String, Value),
    In(String, Value),
}

impl fmt::Display for SysObs {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SysObs::Out(c, v) => write!(f, "{}!{}", c, v),
            SysObs::In(c, v) => write!(f, "{}?{}", c, v),
        }
    }
}

/// A system-level state: the current state-variable assignment and the
/// process. The measurement tables are shared and live in the semantics.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SysState {
    pub statefun: BTreeMap<String, Value>,
    pub proc: Process,
}

impl SysState {
    pub fn render(&self) -> String {
        let parts: Vec<String> = self
            .statefun
            .iter()
            .map(|(k, v)| format!("{}={}", k, v))
            .collect();
        format!("{{{}}} |> {}", parts.join(", "), self.proc)
    }
}

/// The probabilistic transition function of IoT systems over a fixed model.
pub struct SystemSemantics<'m> {
    pub model: &'m Model,
    values: Vec<Value>,
    assignments: Vec<BTreeMap<String, Value>>,
}

impl<'m> SystemSemantics<'m> {
    pub fn new(model: &'m Model) -> Self {
        // next(ξ) ranges over the full Cartesian product of the variable
        // ranges; it does not depend on the current assignment.
        let mut assignments: Vec<BTreeMap<String, Value>> = vec![BTreeMap::new()];
        for var in &model.statevars {
            let mut grown = Vec::with_capacity(assignments.len() * var.range.len());
            for partial in &assignments {
                for value in &var.range {
                    let mut next = partial.clone();
                    next.insert(var.name.clone(), value.clone());
                    grown.push(next);
                }
            }
            assignments = grown;
        }
        SystemSemantics {
            model,
            values: model.universe.values(),
            assignments,
        }
    }

    pub fn initial_state(&self, proc: Process) -> SysState {
        let statefun = self
            .model
            .statevars
            .iter()
            .map(|v| (v.name.clone(), v.init.clone()))
            .collect();
        SysState { statefun, proc }
    }

    pub fn state_of(&self, system: &IoTSystem) -> SysState {
        SysState {
            statefun: system.env.statefun.clone(),
            proc: system.proc.clone(),
        }
    }

    fn measure(
        &self,
        statefun: &BTreeMap<String, Value>,
        sensor: &str,
    ) -> Result<SubDistribution<Value>, EnvError> {
        let rows = self
            .model
            .sensors
            .get(sensor)
            .ok_or_else(|| EnvError::UndefinedSensor(sensor.to_string()))?;
        for row in rows {
            let applies = match &row.when {
                None => true,
                Some((var, val)) => statefun.get(var) == Some(val),
            };
            if applies {
                return SubDistribution::from_entries(
                    row.dist.iter().map(|(v, p)| (v.clone(), p.clone())),
                )
                .map_err(|_| EnvError::NoMeasurementRow(sensor.to_string()));
            }
        }
        Err(EnvError::NoMeasurementRow(sensor.to_string()))
    }

    /// All strong system-level transitions of a state.
    pub fn system_step(
        &self,
        state: &SysState,
    ) -> Result<Vec<(Act<SysObs>, SubDistribution<SysState>)>, StepError> {
        let psteps = process_step(&state.proc, self.model)?;
        let mut out: Vec<(Act<SysObs>, SubDistribution<SysState>)> = Vec::new();
        let mut has_tau = false;

        for (label, proc2) in &psteps {
            match label {
                PLabel::Tau => {
                    has_tau = true;
                    out.push((
                        Act::Tau,
                        SubDistribution::dirac(SysState {
                            statefun: state.statefun.clone(),
                            proc: proc2.clone(),
                        }),
                    ));
                }
                PLabel::Read(target, var) if self.model.is_sensor(target) => {
                    has_tau = true;
                    let measured = self.measure(&state.statefun, target)?;
                    let parts: Vec<(Rat, SubDistribution<SysState>)> = measured
                        .iter()
                        .map(|(v, p)| {
                            (
                                p.clone(),
                                SubDistribution::dirac(SysState {
                                    statefun: state.statefun.clone(),
                                    proc: proc2.subst_one(var, v),
                                }),
                            )
                        })
                        .collect();
                    out.push((Act::Tau, SubDistribution::convex_combine(&parts)?));
                }
                PLabel::Write(target, value) if !self.model.is_sensor(target) => {
                    out.push((
                        Act::Obs(SysObs::Out(target.clone(), value.clone())),
                        SubDistribution::dirac(SysState {
                            statefun: state.statefun.clone(),
                            proc: proc2.clone(),
                        }),
                    ));
                }
                PLabel::Read(target, var) => {
                    // channel input: one transition per admissible value
                    for v in &self.values {
                        out.push((
                            Act::Obs(SysObs::In(target.clone(), v.clone())),
                            SubDistribution::dirac(SysState {
                                statefun: state.statefun.clone(),
                                proc: proc2.subst_one(var, v),
                            }),
                        ));
                    }
                }
                PLabel::Write(_, _) => {
                    // a sensor write with no reader never surfaces at system level
                }
                PLabel::Tick => {}
            }
        }

        // Maximal progress: time may pass only when no τ-step is enabled.
        if !has_tau {
            for (label, proc2) in &psteps {
                if *label == PLabel::Tick {
                    for statefun in &self.assignments {
                        out.push((
                            Act::Tick,
                            SubDistribution::dirac(SysState {
                                statefun: statefun.clone(),
                                proc: proc2.clone(),
                            }),
                        ));
                    }
                }
            }
        }
        out.sort();
        out.dedup();
        Ok(out)
    }
}

impl<'m> Plts for SystemSemantics<'m> {
    type State = SysState;
    type Obs = SysObs;
    type Error = StepError;

    fn step(
        &self,
        state: &Self::State,
    ) -> Result<Vec<(Act<Self::Obs>, SubDistribution<Self::State>)>, Self::Error> {
        self.system_step(state)
    }

    fn label(&self, state: &Self::State) -> String {
        state.render()
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CompositionError {
    #[error("systems have different physical environments")]
    EnvironmentMismatch,
    #[error("process uses sensor {0}, which is not defined in the environment")]
    UndefinedSensor(String),
}

/// `M₁ ∥ M₂`: defined only for identical physical environments.
pub fn compose(m1: &IoTSystem, m2: &IoTSystem) -> Result<IoTSystem, CompositionError> {
    if m1.env != m2.env {
        return Err(CompositionError::EnvironmentMismatch);
    }
    Ok(IoTSystem {
        env: m1.env.clone(),
        proc: Process::par(m1.proc.clone(), m2.proc.clone()),
    })
}

/// `M \ c̃`: channel restriction lifted to systems.
pub fn restrict(m: &IoTSystem, channels: &[String]) -> IoTSystem {
    IoTSystem {
        env: m.env.clone(),
        proc: Process::restrict_all(m.proc.clone(), channels),
    }
}

/// `M ∥ Q` for a process whose sensors are all defined in `M`'s environment.
pub fn attach(m: &IoTSystem, q: &Process, model: &Model) -> Result<IoTSystem, CompositionError> {
    for prefix in reachable_prefixes(q, model) {
        let target = prefix.target();
        if model.is_sensor(target) && !m.env.tables.sensors.contains_key(target) {
            return Err(CompositionError::UndefinedSensor(target.to_string()));
        }
    }
    Ok(IoTSystem {
        env: m.env.clone(),
        proc: Process::par(m.proc.clone(), q.clone()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calculus::parse;

    fn model_fixture() -> Model {
        parse(
            "\
values { absence, off, on, presence, 0..4 }
statevar r1 in { absence, presence } init absence
sensor s1 when r1=absence gives { absence: 9/10, presence: 1/10 }
sensor s1 when r1=presence gives { absence: 1/10, presence: 9/10 }
def B1(j) = if j=0 then nil else [s1!presence.tick.B1(j-1)]B1(j-1)
def Ctrl1 = [s1?z.if z=presence then CtrlOn1 else CtrlOff1]Ctrl1
def CtrlOn1 = [c1!on.tick.Ctrl1]CtrlOn1
def CtrlOff1 = [c1!off.tick.Ctrl1]CtrlOff1
system M1 = Ctrl1
",
        )
        .unwrap()
    }

    #[test]
    fn timeout_write_and_tick() {
        let model = parse("values { v }\ndef P = nil\n").unwrap();
        let p = parse("values { v }\ndef X = [s!v.nil]tick.nil\n").unwrap().defs["X"]
            .body
            .clone();
        let steps = process_step(&p, &model).unwrap();
        assert_eq!(
            steps,
            vec![
                (PLabel::Tick, Process::tick(Process::Nil)),
                (
                    PLabel::Write("s".into(), Value::Atom("v".into())),
                    Process::Nil
                ),
            ]
        );
    }

    #[test]
    fn nil_ticks_forever() {
        let model = model_fixture();
        let steps = process_step(&Process::Nil, &model).unwrap();
        assert_eq!(steps, vec![(PLabel::Tick, Process::Nil)]);
    }

    #[test]
    fn sync_substitutes_the_read_value() {
        let model = parse("values { v }\ndef P = nil\n").unwrap();
        let src = parse("values { v }\ndef X = [c!v.nil]nil | [c?z.[d!z.nil]nil]nil\n").unwrap();
        let p = src.defs["X"].body.clone();
        let steps = process_step(&p, &model).unwrap();
        let taus: Vec<_> = steps
            .iter()
            .filter(|(lab, _)| *lab == PLabel::Tau)
            .collect();
        assert_eq!(taus.len(), 1);
        match &taus[0].1 {
            Process::Par(_, r) => match r.as_ref() {
                Process::Timeout { prefix, .. } => {
                    assert_eq!(
                        *prefix,
                        Prefix::Write {
                            target: "d".into(),
                            value: ValueExpr::atom("v"),
                        }
                    );
                }
                other => panic!("unexpected right component {}", other),
            },
            other => panic!("unexpected sync derivative {}", other),
        }
    }

    #[test]
    fn parallel_ticks_only_when_both_tick() {
        let model = parse("values { v }\ndef P = nil\n").unwrap();
        // Left can tick (timeout), right can tick (nil): joint tick exists.
        let p = Process::par(
            parse("values { v }\ndef X = [c!v.nil]nil\n").unwrap().defs["X"].body.clone(),
            Process::Nil,
        );
        let steps = process_step(&p, &model).unwrap();
        assert!(steps.iter().any(|(lab, _)| *lab == PLabel::Tick));
        // A lone write inside the pair still appears as an untimed move.
        assert!(steps
            .iter()
            .any(|(lab, _)| matches!(lab, PLabel::Write(c, _) if c == "c")));
    }

    #[test]
    fn restriction_blocks_prefixes_on_the_name() {
        let model = parse("values { v }\ndef P = nil\n").unwrap();
        let p = Process::Restrict {
            proc: Box::new(parse("values { v }\ndef X = [c!v.nil]nil\n").unwrap().defs["X"].body.clone()),
            channel: "c".into(),
        };
        let steps = process_step(&p, &model).unwrap();
        assert!(steps.iter().all(|(lab, _)| *lab == PLabel::Tick));
    }

    #[test]
    fn sensor_read_becomes_probabilistic_tau() {
        let model = model_fixture();
        let sem = SystemSemantics::new(&model);
        let state = sem.initial_state(Process::call("Ctrl1"));
        let steps = sem.system_step(&state).unwrap();
        // Maximal progress: the sensor read is a τ, so no tick is offered.
        assert!(steps.iter().all(|(act, _)| act.is_tau()));
        assert_eq!(steps.len(), 1);
        let (_, dist) = &steps[0];
        assert!(dist.is_distribution());
        let probs: Vec<Rat> = dist.iter().map(|(_, p)| p.clone()).collect();
        assert_eq!(probs, vec![crate::plts::rat(9, 10), crate::plts::rat(1, 10)]);
    }

    #[test]
    fn time_branches_over_next_environments() {
        let model = model_fixture();
        let sem = SystemSemantics::new(&model);
        let state = sem.initial_state(Process::Nil);
        let steps = sem.system_step(&state).unwrap();
        assert_eq!(steps.len(), 2);
        assert!(steps.iter().all(|(act, _)| act.is_tick()));
    }

    #[test]
    fn pending_send_offers_out_and_tick() {
        let model = model_fixture();
        let sem = SystemSemantics::new(&model);
        let state = sem.initial_state(Process::call("CtrlOn1"));
        let steps = sem.system_step(&state).unwrap();
        let outs: Vec<_> = steps
            .iter()
            .filter(|(act, _)| matches!(act, Act::Obs(SysObs::Out(c, _)) if c == "c1"))
            .collect();
        assert_eq!(outs.len(), 1);
        assert!(steps.iter().any(|(act, _)| act.is_tick()));
    }

    #[test]
    fn channel_read_fans_out_over_the_universe() {
        let model = model_fixture();
        let sem = SystemSemantics::new(&model);
        let proc = parse("values { v }\ndef X = [c?z.nil]nil\n").unwrap().defs["X"]
            .body
            .clone();
        let state = sem.initial_state(proc);
        let steps = sem.system_step(&state).unwrap();
        let ins: Vec<_> = steps
            .iter()
            .filter(|(act, _)| matches!(act, Act::Obs(SysObs::In(_, _))))
            .collect();
        assert_eq!(ins.len(), model.universe.len());
    }

    #[test]
    fn compose_requires_identical_environments() {
        let model = model_fixture();
        let m1 = model.system("M1").unwrap();
        let mut m2 = m1.clone();
        assert!(compose(&m1, &m2).is_ok());
        m2.env
            .statefun
            .insert("r1".into(), Value::Atom("presence".into()));
        assert_eq!(
            compose(&m1, &m2),
            Err(CompositionError::EnvironmentMismatch)
        );
    }
}
