//! The probabilistic timed calculus of IoT systems: abstract syntax, the
//! model container produced by the parser, physical environments, and the
//! value/boolean expression layer.
//!
//! A model couples a finite value universe, physical state variables with
//! finite ranges, sensors with probabilistic measurement tables, and a set of
//! recursive process definitions with designated systems and attacks.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use num_traits::Zero;
use thiserror::Error;

use crate::plts::{rat_display, Rat, SubDistribution};

pub mod checks;
pub mod explore;
pub mod parser;
pub mod semantics;

pub use parser::parse;

/// A ground value: a declared atom or a bounded natural.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Value {
    Atom(String),
    Nat(u32),
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Atom(a) => write!(f, "{}", a),
            Value::Nat(n) => write!(f, "{}", n),
        }
    }
}

/// Value expressions: literals, communication variables and natural
/// arithmetic, evaluated when a recursive call unfolds or a condition is
/// tested.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ValueExpr {
    Lit(Value),
    Var(String),
    Add(Box<ValueExpr>, Box<ValueExpr>),
    Sub(Box<ValueExpr>, Box<ValueExpr>),
}

impl ValueExpr {
    pub fn nat(n: u32) -> Self {
        ValueExpr::Lit(Value::Nat(n))
    }

    pub fn atom(a: impl Into<String>) -> Self {
        ValueExpr::Lit(Value::Atom(a.into()))
    }

    pub fn is_ground(&self) -> bool {
        match self {
            ValueExpr::Lit(_) => true,
            ValueExpr::Var(_) => false,
            ValueExpr::Add(a, b) | ValueExpr::Sub(a, b) => a.is_ground() && b.is_ground(),
        }
    }

    fn free_vars(&self, out: &mut BTreeSet<String>) {
        match self {
            ValueExpr::Lit(_) => {}
            ValueExpr::Var(v) => {
                out.insert(v.clone());
            }
            ValueExpr::Add(a, b) | ValueExpr::Sub(a, b) => {
                a.free_vars(out);
                b.free_vars(out);
            }
        }
    }

    /// Substitutes values for variables and folds any arithmetic that became
    /// ground and evaluable; unevaluable ground arithmetic (for example a
    /// natural underflow in a dead branch) is kept as-is and only rejected if
    /// an unfolding actually needs its value.
    pub fn subst(&self, env: &BTreeMap<String, Value>) -> ValueExpr {
        let replaced = match self {
            ValueExpr::Lit(v) => ValueExpr::Lit(v.clone()),
            ValueExpr::Var(v) => match env.get(v) {
                Some(val) => ValueExpr::Lit(val.clone()),
                None => ValueExpr::Var(v.clone()),
            },
            ValueExpr::Add(a, b) => {
                ValueExpr::Add(Box::new(a.subst(env)), Box::new(b.subst(env)))
            }
            ValueExpr::Sub(a, b) => {
                ValueExpr::Sub(Box::new(a.subst(env)), Box::new(b.subst(env)))
            }
        };
        match &replaced {
            ValueExpr::Add(a, b) | ValueExpr::Sub(a, b) => {
                if let (ValueExpr::Lit(Value::Nat(x)), ValueExpr::Lit(Value::Nat(y))) =
                    (a.as_ref(), b.as_ref())
                {
                    let folded = if matches!(replaced, ValueExpr::Add(_, _)) {
                        x.checked_add(*y)
                    } else {
                        x.checked_sub(*y)
                    };
                    if let Some(n) = folded {
                        return ValueExpr::nat(n);
                    }
                }
                replaced
            }
            _ => replaced,
        }
    }
}

impl fmt::Display for ValueExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValueExpr::Lit(v) => write!(f, "{}", v),
            ValueExpr::Var(v) => write!(f, "{}", v),
            ValueExpr::Add(a, b) => write!(f, "{}+{}", a, paren_term(b)),
            ValueExpr::Sub(a, b) => write!(f, "{}-{}", a, paren_term(b)),
        }
    }
}

fn paren_term(e: &ValueExpr) -> String {
    match e {
        ValueExpr::Lit(_) | ValueExpr::Var(_) => e.to_string(),
        // Right-nested arithmetic has no surface syntax; the parser only
        // builds left-leaning chains, so this arm is debug output.
        _ => format!("({})", e),
    }
}

/// Boolean conditions: equality tests combined with `or`, `and`, `not`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BoolExpr {
    Eq(ValueExpr, ValueExpr),
    Or(Box<BoolExpr>, Box<BoolExpr>),
    And(Box<BoolExpr>, Box<BoolExpr>),
    Not(Box<BoolExpr>),
}

impl BoolExpr {
    fn free_vars(&self, out: &mut BTreeSet<String>) {
        match self {
            BoolExpr::Eq(a, b) => {
                a.free_vars(out);
                b.free_vars(out);
            }
            BoolExpr::Or(a, b) | BoolExpr::And(a, b) => {
                a.free_vars(out);
                b.free_vars(out);
            }
            BoolExpr::Not(a) => a.free_vars(out),
        }
    }

    pub fn subst(&self, env: &BTreeMap<String, Value>) -> BoolExpr {
        match self {
            BoolExpr::Eq(a, b) => BoolExpr::Eq(a.subst(env), b.subst(env)),
            BoolExpr::Or(a, b) => BoolExpr::Or(Box::new(a.subst(env)), Box::new(b.subst(env))),
            BoolExpr::And(a, b) => {
                BoolExpr::And(Box::new(a.subst(env)), Box::new(b.subst(env)))
            }
            BoolExpr::Not(a) => BoolExpr::Not(Box::new(a.subst(env))),
        }
    }
}

impl fmt::Display for BoolExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BoolExpr::Eq(a, b) => write!(f, "{}={}", a, b),
            BoolExpr::Or(a, b) => write!(f, "{} or {}", a, fmt_band(b)),
            BoolExpr::And(a, b) => write!(f, "{} and {}", fmt_band(a), fmt_bnot(b)),
            BoolExpr::Not(a) => write!(f, "not {}", fmt_bnot(a)),
        }
    }
}

fn fmt_band(e: &BoolExpr) -> String {
    match e {
        BoolExpr::Or(_, _) => format!("({})", e),
        _ => e.to_string(),
    }
}

fn fmt_bnot(e: &BoolExpr) -> String {
    match e {
        BoolExpr::Or(_, _) | BoolExpr::And(_, _) => format!("({})", e),
        _ => e.to_string(),
    }
}

/// A communication prefix: a write `o!e` or a read `o?z`, where the target
/// name is either a channel or a sensor.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Prefix {
    Write { target: String, value: ValueExpr },
    Read { target: String, var: String },
}

impl Prefix {
    pub fn target(&self) -> &str {
        match self {
            Prefix::Write { target, .. } | Prefix::Read { target, .. } => target,
        }
    }
}

impl fmt::Display for Prefix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Prefix::Write { target, value } => write!(f, "{}!{}", target, value),
            Prefix::Read { target, var } => write!(f, "{}?{}", target, var),
        }
    }
}

/// A process term of the calculus.
///
/// `Persist` is the parse-time form of the persistent-prefix abbreviation
/// `pfx.P`; desugaring replaces every occurrence with a call to a fresh
/// definition `H = [pfx.P]H` and no `Persist` node survives in a parsed
/// model.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Process {
    Nil,
    Tick(Box<Process>),
    Par(Box<Process>, Box<Process>),
    Timeout {
        prefix: Prefix,
        then: Box<Process>,
        alt: Box<Process>,
    },
    Call {
        id: String,
        args: Vec<ValueExpr>,
    },
    If {
        cond: BoolExpr,
        then: Box<Process>,
        alt: Box<Process>,
    },
    Restrict {
        proc: Box<Process>,
        channel: String,
    },
    Persist {
        prefix: Prefix,
        body: Box<Process>,
    },
}

impl Process {
    pub fn call(id: impl Into<String>) -> Process {
        Process::Call {
            id: id.into(),
            args: Vec::new(),
        }
    }

    pub fn par(left: Process, right: Process) -> Process {
        Process::Par(Box::new(left), Box::new(right))
    }

    pub fn tick(p: Process) -> Process {
        Process::Tick(Box::new(p))
    }

    pub fn ticks(k: u32, p: Process) -> Process {
        (0..k).fold(p, |acc, _| Process::tick(acc))
    }

    pub fn restrict_all(p: Process, channels: &[String]) -> Process {
        channels.iter().fold(p, |acc, c| Process::Restrict {
            proc: Box::new(acc),
            channel: c.clone(),
        })
    }

    /// Free communication variables.
    pub fn free_vars(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_free_vars(&mut out);
        out
    }

    fn collect_free_vars(&self, out: &mut BTreeSet<String>) {
        match self {
            Process::Nil => {}
            Process::Tick(p) => p.collect_free_vars(out),
            Process::Par(l, r) => {
                l.collect_free_vars(out);
                r.collect_free_vars(out);
            }
            Process::Timeout { prefix, then, alt } => {
                match prefix {
                    Prefix::Write { value, .. } => {
                        value.free_vars(out);
                        then.collect_free_vars(out);
                    }
                    Prefix::Read { var, .. } => {
                        let mut inner = BTreeSet::new();
                        then.collect_free_vars(&mut inner);
                        inner.remove(var);
                        out.extend(inner);
                    }
                }
                alt.collect_free_vars(out);
            }
            Process::Call { args, .. } => {
                for a in args {
                    a.free_vars(out);
                }
            }
            Process::If { cond, then, alt } => {
                cond.free_vars(out);
                then.collect_free_vars(out);
                alt.collect_free_vars(out);
            }
            Process::Restrict { proc, .. } => proc.collect_free_vars(out),
            Process::Persist { prefix, body } => match prefix {
                Prefix::Write { value, .. } => {
                    value.free_vars(out);
                    body.collect_free_vars(out);
                }
                Prefix::Read { var, .. } => {
                    let mut inner = BTreeSet::new();
                    body.collect_free_vars(&mut inner);
                    inner.remove(var);
                    out.extend(inner);
                }
            },
        }
    }

    /// Capture-aware substitution of values for communication variables. A
    /// read prefix binding a variable shadows it in the prefixed
    /// continuation only.
    pub fn subst(&self, env: &BTreeMap<String, Value>) -> Process {
        if env.is_empty() {
            return self.clone();
        }
        match self {
            Process::Nil => Process::Nil,
            Process::Tick(p) => Process::Tick(Box::new(p.subst(env))),
            Process::Par(l, r) => Process::Par(Box::new(l.subst(env)), Box::new(r.subst(env))),
            Process::Timeout { prefix, then, alt } => match prefix {
                Prefix::Write { target, value } => Process::Timeout {
                    prefix: Prefix::Write {
                        target: target.clone(),
                        value: value.subst(env),
                    },
                    then: Box::new(then.subst(env)),
                    alt: Box::new(alt.subst(env)),
                },
                Prefix::Read { var, .. } => {
                    let mut inner = env.clone();
                    inner.remove(var);
                    Process::Timeout {
                        prefix: prefix.clone(),
                        then: Box::new(then.subst(&inner)),
                        alt: Box::new(alt.subst(env)),
                    }
                }
            },
            Process::Call { id, args } => Process::Call {
                id: id.clone(),
                args: args.iter().map(|a| a.subst(env)).collect(),
            },
            Process::If { cond, then, alt } => Process::If {
                cond: cond.subst(env),
                then: Box::new(then.subst(env)),
                alt: Box::new(alt.subst(env)),
            },
            Process::Restrict { proc, channel } => Process::Restrict {
                proc: Box::new(proc.subst(env)),
                channel: channel.clone(),
            },
            Process::Persist { prefix, body } => match prefix {
                Prefix::Write { target, value } => Process::Persist {
                    prefix: Prefix::Write {
                        target: target.clone(),
                        value: value.subst(env),
                    },
                    body: Box::new(body.subst(env)),
                },
                Prefix::Read { var, .. } => {
                    let mut inner = env.clone();
                    inner.remove(var);
                    Process::Persist {
                        prefix: prefix.clone(),
                        body: Box::new(body.subst(&inner)),
                    }
                }
            },
        }
    }

    pub fn subst_one(&self, var: &str, value: &Value) -> Process {
        let mut env = BTreeMap::new();
        env.insert(var.to_string(), value.clone());
        self.subst(&env)
    }

    /// All prefixes occurring syntactically in this term (not descending
    /// into called definitions).
    pub fn prefixes(&self) -> Vec<&Prefix> {
        let mut out = Vec::new();
        self.collect_prefixes(&mut out);
        out
    }

    fn collect_prefixes<'a>(&'a self, out: &mut Vec<&'a Prefix>) {
        match self {
            Process::Nil => {}
            Process::Tick(p) => p.collect_prefixes(out),
            Process::Par(l, r) => {
                l.collect_prefixes(out);
                r.collect_prefixes(out);
            }
            Process::Timeout { prefix, then, alt } => {
                out.push(prefix);
                then.collect_prefixes(out);
                alt.collect_prefixes(out);
            }
            Process::Call { .. } => {}
            Process::If { then, alt, .. } => {
                then.collect_prefixes(out);
                alt.collect_prefixes(out);
            }
            Process::Restrict { proc, .. } => proc.collect_prefixes(out),
            Process::Persist { prefix, body } => {
                out.push(prefix);
                body.collect_prefixes(out);
            }
        }
    }

    /// Identifiers of all definitions called syntactically in this term.
    pub fn called_ids(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_called(&mut out);
        out
    }

    fn collect_called(&self, out: &mut BTreeSet<String>) {
        match self {
            Process::Nil => {}
            Process::Tick(p) => p.collect_called(out),
            Process::Par(l, r) => {
                l.collect_called(out);
                r.collect_called(out);
            }
            Process::Timeout { then, alt, .. } => {
                then.collect_called(out);
                alt.collect_called(out);
            }
            Process::Call { id, .. } => {
                out.insert(id.clone());
            }
            Process::If { then, alt, .. } => {
                then.collect_called(out);
                alt.collect_called(out);
            }
            Process::Restrict { proc, .. } => proc.collect_called(out),
            Process::Persist { body, .. } => body.collect_called(out),
        }
    }
}

fn is_prefix_level(p: &Process) -> bool {
    !matches!(p, Process::Par(_, _) | Process::Restrict { .. })
}

fn fmt_prefix_level(p: &Process) -> String {
    if is_prefix_level(p) {
        p.to_string()
    } else {
        format!("({})", p)
    }
}

impl fmt::Display for Process {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Process::Nil => write!(f, "nil"),
            Process::Tick(_) => {
                let mut k = 0u32;
                let mut cur = self;
                while let Process::Tick(next) = cur {
                    k += 1;
                    cur = next;
                }
                if k == 1 {
                    write!(f, "tick.{}", fmt_prefix_level(cur))
                } else {
                    write!(f, "tick^{}.{}", k, fmt_prefix_level(cur))
                }
            }
            Process::Par(l, r) => {
                // Parallel composition is printed left-associated.
                let left = match l.as_ref() {
                    Process::Par(_, _) => l.to_string(),
                    other => fmt_prefix_level(other),
                };
                let right = fmt_prefix_level(r);
                write!(f, "{} | {}", left, right)
            }
            Process::Timeout { prefix, then, alt } => {
                write!(f, "[{}.{}]{}", prefix, then, fmt_prefix_level(alt))
            }
            Process::Call { id, args } => {
                if args.is_empty() {
                    write!(f, "{}", id)
                } else {
                    let rendered: Vec<String> = args.iter().map(|a| a.to_string()).collect();
                    write!(f, "{}({})", id, rendered.join(", "))
                }
            }
            Process::If { cond, then, alt } => write!(
                f,
                "if {} then {} else {}",
                cond,
                fmt_prefix_level(then),
                fmt_prefix_level(alt)
            ),
            Process::Restrict { .. } => {
                let mut channels = Vec::new();
                let mut cur = self;
                while let Process::Restrict { proc, channel } = cur {
                    channels.push(channel.clone());
                    cur = proc;
                }
                channels.reverse();
                write!(f, "{} \\ {{{}}}", fmt_prefix_level(cur), channels.join(", "))
            }
            Process::Persist { prefix, body } => {
                write!(f, "{}.{}", prefix, fmt_prefix_level(body))
            }
        }
    }
}

/// The finite value universe: declared atoms plus, optionally, the bounded
/// naturals `0..=nat_max`.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Universe {
    pub atoms: BTreeSet<String>,
    pub nat_max: Option<u32>,
}

impl Universe {
    pub fn contains(&self, v: &Value) -> bool {
        match v {
            Value::Atom(a) => self.atoms.contains(a),
            Value::Nat(n) => self.nat_max.is_some_and(|max| *n <= max),
        }
    }

    /// All admissible values, atoms first, in canonical order.
    pub fn values(&self) -> Vec<Value> {
        let mut out: Vec<Value> = self.atoms.iter().cloned().map(Value::Atom).collect();
        if let Some(max) = self.nat_max {
            out.extend((0..=max).map(Value::Nat));
        }
        out
    }

    pub fn len(&self) -> usize {
        self.atoms.len() + self.nat_max.map_or(0, |m| m as usize + 1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One declared physical state variable.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StateVarDecl {
    pub name: String,
    pub range: Vec<Value>,
    pub init: Value,
}

/// One measurement row: when the guard variable has the given value, the
/// sensor reading follows `dist` (a full distribution over values).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SensorRow {
    pub when: Option<(String, Value)>,
    pub dist: BTreeMap<Value, Rat>,
}

/// A recursive process definition `H(z1, …, zk) = P`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Definition {
    pub name: String,
    pub params: Vec<String>,
    pub body: Process,
}

/// A parsed model: the unit of the concrete syntax.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Model {
    pub universe: Universe,
    pub statevars: Vec<StateVarDecl>,
    pub sensors: BTreeMap<String, Vec<SensorRow>>,
    pub defs: BTreeMap<String, Definition>,
    pub systems: BTreeMap<String, Process>,
    pub attacks: BTreeMap<String, Process>,
}

impl Model {
    pub fn is_sensor(&self, name: &str) -> bool {
        self.sensors.contains_key(name)
    }

    /// The shared environment tables (ranges and measurement maps).
    pub fn env_tables(&self) -> Arc<EnvTables> {
        Arc::new(EnvTables {
            vars: self.statevars.clone(),
            sensors: self.sensors.clone(),
        })
    }

    /// The initial physical environment declared by the model.
    pub fn initial_env(&self) -> PhysicalEnvironment {
        let tables = self.env_tables();
        let statefun = self
            .statevars
            .iter()
            .map(|v| (v.name.clone(), v.init.clone()))
            .collect();
        PhysicalEnvironment { statefun, tables }
    }

    /// The IoT system `ξ ▷ P` for a named system.
    pub fn system(&self, name: &str) -> Option<IoTSystem> {
        self.systems.get(name).map(|p| IoTSystem {
            env: self.initial_env(),
            proc: p.clone(),
        })
    }

    pub fn attack(&self, name: &str) -> Option<&Process> {
        self.attacks.get(name)
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut items: Vec<String> = self.universe.atoms.iter().cloned().collect();
        if let Some(max) = self.universe.nat_max {
            items.push(format!("0..{}", max));
        }
        writeln!(f, "values {{ {} }}", items.join(", "))?;
        for v in &self.statevars {
            let range: Vec<String> = v.range.iter().map(|x| x.to_string()).collect();
            writeln!(
                f,
                "statevar {} in {{ {} }} init {}",
                v.name,
                range.join(", "),
                v.init
            )?;
        }
        for (name, rows) in &self.sensors {
            for row in rows {
                let entries: Vec<String> = row
                    .dist
                    .iter()
                    .map(|(v, p)| format!("{}: {}", v, rat_display(p)))
                    .collect();
                match &row.when {
                    Some((var, val)) => writeln!(
                        f,
                        "sensor {} when {}={} gives {{ {} }}",
                        name,
                        var,
                        val,
                        entries.join(", ")
                    )?,
                    None => writeln!(f, "sensor {} gives {{ {} }}", name, entries.join(", "))?,
                }
            }
        }
        for def in self.defs.values() {
            if def.params.is_empty() {
                writeln!(f, "def {} = {}", def.name, def.body)?;
            } else {
                writeln!(
                    f,
                    "def {}({}) = {}",
                    def.name,
                    def.params.join(", "),
                    def.body
                )?;
            }
        }
        for (name, proc) in &self.systems {
            writeln!(f, "system {} = {}", name, proc)?;
        }
        for (name, proc) in &self.attacks {
            writeln!(f, "attack {} = {}", name, proc)?;
        }
        Ok(())
    }
}

/// Shared, immutable part of a physical environment: variable ranges and the
/// measurement map.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EnvTables {
    pub vars: Vec<StateVarDecl>,
    pub sensors: BTreeMap<String, Vec<SensorRow>>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EnvError {
    #[error("sensor {0} is not defined in the physical environment")]
    UndefinedSensor(String),
    #[error("no measurement row of sensor {0} covers the current state")]
    NoMeasurementRow(String),
}

/// A physical environment `ξ = ⟨statefun, measmap⟩`: the current assignment
/// of every state variable plus the shared tables.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PhysicalEnvironment {
    pub statefun: BTreeMap<String, Value>,
    pub tables: Arc<EnvTables>,
}

impl PhysicalEnvironment {
    /// The sensed-value distribution `measmap(statefun)(s)`.
    pub fn measure(&self, sensor: &str) -> Result<SubDistribution<Value>, EnvError> {
        let rows = self
            .tables
            .sensors
            .get(sensor)
            .ok_or_else(|| EnvError::UndefinedSensor(sensor.to_string()))?;
        for row in rows {
            let applies = match &row.when {
                None => true,
                Some((var, val)) => self.statefun.get(var) == Some(val),
            };
            if applies {
                let entries = row
                    .dist
                    .iter()
                    .filter(|(_, p)| !p.is_zero())
                    .map(|(v, p)| (v.clone(), p.clone()));
                return Ok(SubDistribution::from_entries(entries)
                    .expect("validated measurement rows are distributions"));
            }
        }
        Err(EnvError::NoMeasurementRow(sensor.to_string()))
    }

    /// Admissible environments for the next time slot: the full Cartesian
    /// product of the variable ranges, with the measurement map unchanged.
    pub fn next(&self) -> Vec<PhysicalEnvironment> {
        let mut assignments: Vec<BTreeMap<String, Value>> = vec![BTreeMap::new()];
        for var in &self.tables.vars {
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
        assignments
            .into_iter()
            .map(|statefun| PhysicalEnvironment {
                statefun,
                tables: Arc::clone(&self.tables),
            })
            .collect()
    }

    pub fn render(&self) -> String {
        let parts: Vec<String> = self
            .statefun
            .iter()
            .map(|(k, v)| format!("{}={}", k, v))
            .collect();
        format!("{{{}}}", parts.join(", "))
    }
}

/// An IoT system `ξ ▷ P`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IoTSystem {
    pub env: PhysicalEnvironment,
    pub proc: Process,
}

impl IoTSystem {
    pub fn new(env: PhysicalEnvironment, proc: Process) -> Self {
        IoTSystem { env, proc }
    }

    pub fn render(&self) -> String {
        format!("{} |> {}", self.env.render(), self.proc)
    }
}
