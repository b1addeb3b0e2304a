//! Weak transition closure and the timed weak bisimilarity metric tower.
//!
//! The metric `m^k` between states of a finite pLTS is computed bottom-up:
//! `m^0` is the zero table; `m^{k,0}` applies the tick functional to
//! `m^{k-1}`; `m^{k,h}` applies the untimed functional to `m^{k,h-1}`; and
//! `m^k` is the supremum over `h`, reached here as an exact fixpoint because
//! time-guardedness makes the untimed transition graph acyclic. The limit
//! `m^∞` is detected exactly when two consecutive `m^k` tables coincide,
//! which suffices because `m^{k+1}` is a deterministic function of `m^k`.
//!
//! Both functionals challenge each side's strong steps and answer them with
//! the other side's weak derivatives, comparing derivative distributions via
//! the Kantorovich lifting of the current table, with the missing mass of a
//! weak answer paid to the deadlock state. The empty answer set scores 1 and
//! a missing challenge contributes nothing.

use std::collections::{BTreeMap, HashMap, VecDeque};

use num_traits::{One, Zero};
use thiserror::Error;

use crate::plts::{Act, FinitePlts, PltsError, Rat, StateId, SubDistribution, DEADLOCK};
use crate::transport::{kantorovich, TransportError};

#[derive(Clone, Debug)]
pub struct EngineOptions {
    /// Hard cap on the number of sub-distributions materialised while
    /// saturating a weak closure; exceeding it is an error, never a silent
    /// truncation.
    pub weak_limit: usize,
    /// Worker threads for table sweeps. Results are identical for any value.
    pub threads: usize,
}

impl Default for EngineOptions {
    fn default() -> Self {
        EngineOptions {
            weak_limit: 100_000,
            threads: 1,
        }
    }
}

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("weak-closure overflow: more than {limit} derivative sub-distributions")]
    WeakClosureOverflow { limit: usize },
    #[error(transparent)]
    Plts(#[from] PltsError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("untimed iteration did not stabilise within {0} sweeps")]
    Diverged(u32),
}

/// Whether a computed limit table is an exact fixpoint or only a sound lower
/// bound at the iteration cap.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FixStatus {
    Exact,
    LowerBound,
}

/// One weak derivative together with the sequence of lifted steps that
/// produced it.
#[derive(Clone, Debug)]
pub struct WeakDerivative<L> {
    pub dist: SubDistribution<StateId>,
    padded: SubDistribution<StateId>,
    pub trace: Vec<Act<L>>,
}

impl<L> WeakDerivative<L> {
    /// The derivative with its missing mass paid to the deadlock state.
    pub fn padded(&self) -> &SubDistribution<StateId> {
        &self.padded
    }
}

/// The set of state pairs a metric table is defined on. Pairs are stored
/// with the smaller id first; tables over the space are symmetric by
/// construction.
#[derive(Clone, Debug)]
pub struct PairSpace {
    pairs: Vec<(StateId, StateId)>,
    index: HashMap<(u32, u32), u32>,
}

impl PairSpace {
    fn from_pairs(mut pairs: Vec<(StateId, StateId)>) -> Self {
        pairs.sort();
        pairs.dedup();
        let index = pairs
            .iter()
            .enumerate()
            .map(|(i, (a, b))| ((a.0, b.0), i as u32))
            .collect();
        PairSpace { pairs, index }
    }

    /// Every unordered pair of states (including the diagonal) of a pLTS.
    pub fn full<L>(plts: &FinitePlts<L>) -> Self {
        let n = plts.n_states() as u32;
        let mut pairs = Vec::with_capacity((n * (n + 1) / 2) as usize);
        for a in 0..n {
            for b in a..n {
                pairs.push((StateId(a), StateId(b)));
            }
        }
        PairSpace::from_pairs(pairs)
    }

    fn slot(&self, a: StateId, b: StateId) -> usize {
        let key = if a <= b { (a.0, b.0) } else { (b.0, a.0) };
        *self
            .index
            .get(&key)
            .unwrap_or_else(|| panic!("pair ({}, {}) is outside the pair space", a, b))
            as usize
    }

    pub fn contains(&self, a: StateId, b: StateId) -> bool {
        let key = if a <= b { (a.0, b.0) } else { (b.0, a.0) };
        self.index.contains_key(&key)
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> impl Iterator<Item = (StateId, StateId)> + '_ {
        self.pairs.iter().copied()
    }
}

/// A symmetric table of exact distances in [0, 1] over a [`PairSpace`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MetricTable {
    values: Vec<Rat>,
}

impl MetricTable {
    pub fn zero(space: &PairSpace) -> Self {
        MetricTable {
            values: vec![Rat::zero(); space.len()],
        }
    }

    pub fn get(&self, space: &PairSpace, a: StateId, b: StateId) -> &Rat {
        &self.values[space.slot(a, b)]
    }

    fn pointwise_max(mut self, other: &MetricTable) -> MetricTable {
        for (v, o) in self.values.iter_mut().zip(&other.values) {
            if *o > *v {
                *v = o.clone();
            }
        }
        self
    }
}

enum Sweep {
    Untimed,
    Tick,
}

/// The metric engine over one finite pLTS. `prepare_*` methods populate the
/// weak-derivative cache; sweeps then only read it.
pub struct MetricEngine<'p, L: Ord + Clone> {
    plts: &'p FinitePlts<L>,
    opts: EngineOptions,
    weak: HashMap<(StateId, Act<L>), Vec<WeakDerivative<L>>>,
    tau_closures: HashMap<SubDistribution<StateId>, Vec<(SubDistribution<StateId>, Vec<Act<L>>)>>,
    max_untimed_depth: u32,
}

impl<'p, L: Ord + Clone + std::hash::Hash + Send + Sync> MetricEngine<'p, L> {
    /// Fails if the untimed transition graph is cyclic, which would make
    /// weak closures infinite; time-guarded models never are.
    pub fn new(plts: &'p FinitePlts<L>, opts: EngineOptions) -> Result<Self, MetricError> {
        let max_untimed_depth = plts.max_untimed_depth()?;
        Ok(MetricEngine {
            plts,
            opts,
            weak: HashMap::new(),
            tau_closures: HashMap::new(),
            max_untimed_depth,
        })
    }

    pub fn max_untimed_depth(&self) -> u32 {
        self.max_untimed_depth
    }

    /// All lifted strong `→̂α` successors of a sub-distribution: every
    /// support state with an `α`-step picks one derivative (for `τ`,
    /// stuttering in place is always available), states without one drop out
    /// (for `τ` there are none), and the result is the weighted sum. Empty
    /// when no support state can move.
    pub fn lift_step(
        &self,
        delta: &SubDistribution<StateId>,
        act: &Act<L>,
    ) -> Result<Vec<SubDistribution<StateId>>, MetricError> {
        let mut movers: Vec<(Rat, Vec<SubDistribution<StateId>>)> = Vec::new();
        for (state, p) in delta.iter() {
            let mut options: Vec<SubDistribution<StateId>> = self
                .plts
                .steps(*state)
                .iter()
                .filter(|(a, _)| a == act)
                .map(|(_, d)| d.clone())
                .collect();
            if act.is_tau() {
                let stutter = SubDistribution::dirac(*state);
                if !options.contains(&stutter) {
                    options.push(stutter);
                }
            }
            if !options.is_empty() {
                movers.push((p.clone(), options));
            }
        }
        if movers.is_empty() || (act.is_tau() && movers.len() != delta.len()) {
            // For τ every state can stutter, so a shorter mover list can
            // only mean an empty input distribution.
            return Ok(Vec::new());
        }
        let combinations: usize = movers
            .iter()
            .map(|(_, opts)| opts.len())
            .try_fold(1usize, |acc, n| acc.checked_mul(n))
            .unwrap_or(usize::MAX);
        if combinations > self.opts.weak_limit {
            return Err(MetricError::WeakClosureOverflow {
                limit: self.opts.weak_limit,
            });
        }
        let mut results: Vec<SubDistribution<StateId>> = Vec::with_capacity(combinations);
        let mut choice = vec![0usize; movers.len()];
        loop {
            let parts: Vec<(Rat, SubDistribution<StateId>)> = movers
                .iter()
                .zip(&choice)
                .map(|((p, opts), &c)| (p.clone(), opts[c].clone()))
                .collect();
            results.push(
                SubDistribution::convex_combine(&parts)
                    .expect("weights are the probabilities of a sub-distribution"),
            );
            let mut idx = movers.len();
            loop {
                if idx == 0 {
                    results.sort();
                    results.dedup();
                    return Ok(results);
                }
                idx -= 1;
                choice[idx] += 1;
                if choice[idx] < movers[idx].1.len() {
                    break;
                }
                choice[idx] = 0;
            }
        }
    }

    /// The reflexive-transitive closure of lifted `→̂τ` steps from `start`.
    fn tau_closure(
        &mut self,
        start: &SubDistribution<StateId>,
    ) -> Result<&Vec<(SubDistribution<StateId>, Vec<Act<L>>)>, MetricError> {
        if !self.tau_closures.contains_key(start) {
            let mut seen: BTreeMap<SubDistribution<StateId>, Vec<Act<L>>> = BTreeMap::new();
            let mut queue: VecDeque<SubDistribution<StateId>> = VecDeque::new();
            seen.insert(start.clone(), Vec::new());
            queue.push_back(start.clone());
            while let Some(current) = queue.pop_front() {
                let trace = seen[&current].clone();
                for succ in self.lift_step(&current, &Act::Tau)? {
                    if !seen.contains_key(&succ) {
                        if seen.len() >= self.opts.weak_limit {
                            return Err(MetricError::WeakClosureOverflow {
                                limit: self.opts.weak_limit,
                            });
                        }
                        let mut t = trace.clone();
                        t.push(Act::Tau);
                        seen.insert(succ.clone(), t);
                        queue.push_back(succ);
                    }
                }
            }
            let closure: Vec<_> = seen.into_iter().collect();
            self.tau_closures.insert(start.clone(), closure);
        }
        Ok(&self.tau_closures[start])
    }

    /// The complete set of weak `α`-derivative sub-distributions of
    /// `dirac(state)`: `⇒̂τ` for `τ`, and `⇒̂τ →̂α ⇒̂τ` otherwise.
    pub fn weak_derivatives(
        &mut self,
        state: StateId,
        act: &Act<L>,
    ) -> Result<&Vec<WeakDerivative<L>>, MetricError> {
        let key = (state, act.clone());
        if !self.weak.contains_key(&key) {
            let start = SubDistribution::dirac(state);
            let mut found: BTreeMap<SubDistribution<StateId>, Vec<Act<L>>> = BTreeMap::new();
            if act.is_tau() {
                for (dist, trace) in self.tau_closure(&start)?.clone() {
                    found.entry(dist).or_insert(trace);
                }
            } else {
                for (pre, pre_trace) in self.tau_closure(&start)?.clone() {
                    for mid in self.lift_step(&pre, act)? {
                        for (post, post_trace) in self.tau_closure(&mid)?.clone() {
                            if found.len() >= self.opts.weak_limit {
                                return Err(MetricError::WeakClosureOverflow {
                                    limit: self.opts.weak_limit,
                                });
                            }
                            found.entry(post).or_insert_with(|| {
                                let mut t = pre_trace.clone();
                                t.push(act.clone());
                                t.extend(post_trace.iter().cloned());
                                t
                            });
                        }
                    }
                }
            }
            let derivatives: Vec<WeakDerivative<L>> = found
                .into_iter()
                .map(|(dist, trace)| WeakDerivative {
                    padded: dist.pad_with_deadlock(DEADLOCK),
                    dist,
                    trace,
                })
                .collect();
            self.weak.insert(key.clone(), derivatives);
        }
        Ok(&self.weak[&key])
    }

    /// Registers the weak answer sets needed to evaluate a pair, returning
    /// the table cells the evaluation will read.
    fn pair_dependencies(
        &mut self,
        a: StateId,
        b: StateId,
    ) -> Result<Vec<(StateId, StateId)>, MetricError> {
        let mut deps = vec![(a, b), (DEADLOCK, DEADLOCK)];
        for (challenger, defender) in [(a, b), (b, a)] {
            for (act, delta) in self.plts.steps(challenger).to_vec() {
                let answers = self.weak_derivatives(defender, &act)?;
                let mut cols: Vec<StateId> = Vec::new();
                for w in answers {
                    cols.extend(w.padded.support().copied());
                }
                cols.push(DEADLOCK);
                cols.sort();
                cols.dedup();
                for x in delta.support().copied().chain([DEADLOCK]) {
                    for &y in &cols {
                        deps.push((x, y));
                    }
                }
            }
        }
        Ok(deps)
    }

    /// The transitive closure of pairs whose values influence the given root
    /// pairs, with all weak answer sets prepared along the way.
    pub fn pair_closure(
        &mut self,
        roots: &[(StateId, StateId)],
    ) -> Result<PairSpace, MetricError> {
        let canon = |(a, b): (StateId, StateId)| if a <= b { (a, b) } else { (b, a) };
        let mut seen: Vec<(StateId, StateId)> = Vec::new();
        let mut index: HashMap<(StateId, StateId), ()> = HashMap::new();
        let mut queue: VecDeque<(StateId, StateId)> = VecDeque::new();
        for &r in roots.iter().chain([&(DEADLOCK, DEADLOCK)]) {
            let r = canon(r);
            if index.insert(r, ()).is_none() {
                queue.push_back(r);
            }
        }
        while let Some((a, b)) = queue.pop_front() {
            seen.push((a, b));
            for dep in self.pair_dependencies(a, b)? {
                let dep = canon(dep);
                if index.insert(dep, ()).is_none() {
                    queue.push_back(dep);
                }
            }
        }
        Ok(PairSpace::from_pairs(seen))
    }

    /// Prepares every pair of a full space (used when whole-table properties
    /// are being checked rather than a single root distance).
    pub fn prepare_full(&mut self) -> Result<PairSpace, MetricError> {
        let space = PairSpace::full(self.plts);
        for (a, b) in space.pairs().collect::<Vec<_>>() {
            self.pair_dependencies(a, b)?;
        }
        Ok(space)
    }

    fn cell(
        &self,
        space: &PairSpace,
        prev: &MetricTable,
        a: StateId,
        b: StateId,
        sweep: &Sweep,
    ) -> Result<Rat, MetricError> {
        let one = Rat::one();
        let mut best = prev.get(space, a, b).clone();
        for (challenger, defender) in [(a, b), (b, a)] {
            for (act, delta) in self.plts.steps(challenger) {
                let relevant = match sweep {
                    Sweep::Untimed => !act.is_tick(),
                    Sweep::Tick => act.is_tick(),
                };
                if !relevant {
                    continue;
                }
                let answers = self
                    .weak
                    .get(&(defender, act.clone()))
                    .expect("pair space was prepared");
                let candidate = if answers.is_empty() {
                    one.clone()
                } else {
                    let mut min: Option<Rat> = None;
                    for answer in answers {
                        let value = kantorovich(
                            |x: &StateId, y: &StateId| prev.get(space, *x, *y).clone(),
                            delta,
                            &answer.padded,
                        )?;
                        let better = min.as_ref().is_none_or(|m| value < *m);
                        if better {
                            let stop = value.is_zero();
                            min = Some(value);
                            if stop {
                                break;
                            }
                        }
                    }
                    min.expect("answer set is non-empty")
                };
                if candidate > best {
                    best = candidate;
                    if best == one {
                        return Ok(best);
                    }
                }
            }
        }
        Ok(best)
    }

    fn sweep(
        &self,
        space: &PairSpace,
        prev: &MetricTable,
        sweep: Sweep,
    ) -> Result<MetricTable, MetricError> {
        let pairs: Vec<(StateId, StateId)> = space.pairs().collect();
        let values = if self.opts.threads > 1 {
            let chunk = pairs.len().div_ceil(self.opts.threads);
            let mut results: Vec<Result<Vec<Rat>, MetricError>> = Vec::new();
            std::thread::scope(|scope| {
                let handles: Vec<_> = pairs
                    .chunks(chunk.max(1))
                    .map(|slice| {
                        let sweep_ref = &sweep;
                        scope.spawn(move || {
                            slice
                                .iter()
                                .map(|&(a, b)| self.cell(space, prev, a, b, sweep_ref))
                                .collect::<Result<Vec<Rat>, MetricError>>()
                        })
                    })
                    .collect();
                for h in handles {
                    results.push(h.join().expect("sweep worker panicked"));
                }
            });
            let mut values = Vec::with_capacity(pairs.len());
            for r in results {
                values.extend(r?);
            }
            values
        } else {
            let mut values = Vec::with_capacity(pairs.len());
            for &(a, b) in &pairs {
                values.push(self.cell(space, prev, a, b, &sweep)?);
            }
            values
        };
        Ok(MetricTable { values })
    }

    /// One application of the untimed functional.
    pub fn apply_b(
        &self,
        space: &PairSpace,
        prev: &MetricTable,
    ) -> Result<MetricTable, MetricError> {
        self.sweep(space, prev, Sweep::Untimed)
    }

    /// One application of the tick functional.
    pub fn apply_btick(
        &self,
        space: &PairSpace,
        prev: &MetricTable,
    ) -> Result<MetricTable, MetricError> {
        self.sweep(space, prev, Sweep::Tick)
    }

    /// `m^k`: seeds with the tick functional on `m^{k-1}` and iterates the
    /// untimed functional to its exact fixpoint.
    fn next_level(
        &self,
        space: &PairSpace,
        prev: &MetricTable,
    ) -> Result<(MetricTable, u32), MetricError> {
        let mut table = self.apply_btick(space, prev)?;
        let cap = self.max_untimed_depth + 3;
        let mut sweeps = 0;
        loop {
            let next = self.apply_b(space, &table)?;
            sweeps += 1;
            if next == table {
                return Ok((table, sweeps));
            }
            table = next;
            if sweeps > cap {
                return Err(MetricError::Diverged(cap));
            }
        }
    }

    /// Computes `m^0 .. m^k_max`, stopping early once the chain stabilises
    /// (which pins `m^∞` exactly).
    pub fn tower(&self, space: &PairSpace, k_max: usize) -> Result<Tower, MetricError> {
        let mut tables = vec![MetricTable::zero(space)];
        let mut h_sweeps = Vec::new();
        let mut stabilized = None;
        for k in 1..=k_max {
            let (table, sweeps) = self.next_level(space, tables.last().unwrap())?;
            h_sweeps.push(sweeps);
            let same = table == *tables.last().unwrap();
            tables.push(table);
            if same {
                stabilized = Some(k - 1);
                break;
            }
        }
        Ok(Tower {
            tables,
            h_sweeps,
            stabilized,
        })
    }

    /// Kleene iteration of the untimed metric of the literature, which
    /// treats tick like any other action: the pointwise max of both
    /// functionals, iterated from zero until an exact fixpoint or the cap.
    pub fn untimed_metric(
        &self,
        space: &PairSpace,
        iter_max: usize,
    ) -> Result<(MetricTable, FixStatus), MetricError> {
        let mut table = MetricTable::zero(space);
        for _ in 0..iter_max {
            let next = self
                .apply_b(space, &table)?
                .pointwise_max(&self.apply_btick(space, &table)?);
            if next == table {
                return Ok((table, FixStatus::Exact));
            }
            table = next;
        }
        Ok((table, FixStatus::LowerBound))
    }
}

/// The computed chain `m^0 ⊑ m^1 ⊑ …`, with the stabilisation point when
/// one was found within the requested bound.
#[derive(Clone, Debug)]
pub struct Tower {
    /// `tables[k]` is `m^k`; the vector may stop early if the chain
    /// stabilised.
    pub tables: Vec<MetricTable>,
    /// Untimed sweeps needed to reach each level's fixpoint.
    pub h_sweeps: Vec<u32>,
    /// Least `j` with `m^{j+1} = m^j`; then `m^∞ = m^j` exactly.
    pub stabilized: Option<usize>,
}

impl Tower {
    /// `m^k` evaluated at a pair, valid for any `k` once stabilised.
    pub fn value_at(&self, space: &PairSpace, k: usize, a: StateId, b: StateId) -> Option<Rat> {
        if k < self.tables.len() {
            Some(self.tables[k].get(space, a, b).clone())
        } else if self.stabilized.is_some() {
            Some(self.tables.last().unwrap().get(space, a, b).clone())
        } else {
            None
        }
    }

    /// The exact `m^∞` table, when the chain stabilised.
    pub fn exact_inf(&self) -> Option<&MetricTable> {
        self.stabilized.map(|j| &self.tables[j])
    }

    pub fn status(&self) -> FixStatus {
        if self.stabilized.is_some() {
            FixStatus::Exact
        } else {
            FixStatus::LowerBound
        }
    }
}

/// A root-pair distance curve: `curve[k]` is the distance at `k` ticks.
#[derive(Clone, Debug)]
pub struct DistanceCurve {
    pub curve: Vec<Rat>,
    pub stabilized: Option<usize>,
}

impl DistanceCurve {
    /// The distance after `k` ticks, if determined by this curve.
    pub fn at(&self, k: usize) -> Option<Rat> {
        if k < self.curve.len() {
            Some(self.curve[k].clone())
        } else if self.stabilized.is_some() {
            self.curve.last().cloned()
        } else {
            None
        }
    }

    /// The exact limit distance, when the curve stabilised.
    pub fn limit(&self) -> Option<Rat> {
        self.stabilized.map(|j| self.curve[j].clone())
    }

    pub fn status(&self) -> FixStatus {
        if self.stabilized.is_some() {
            FixStatus::Exact
        } else {
            FixStatus::LowerBound
        }
    }
}

/// Distance-vs-k curve between two root states of one pLTS, computed over
/// the reachable pair closure.
pub fn distance_curve<L: Ord + Clone + std::hash::Hash + Send + Sync>(
    plts: &FinitePlts<L>,
    left: StateId,
    right: StateId,
    opts: EngineOptions,
    k_max: usize,
) -> Result<DistanceCurve, MetricError> {
    let mut engine = MetricEngine::new(plts, opts)?;
    let space = engine.pair_closure(&[(left, right)])?;
    let tower = engine.tower(&space, k_max)?;
    let curve = tower
        .tables
        .iter()
        .map(|t| t.get(&space, left, right).clone())
        .collect();
    Ok(DistanceCurve {
        curve,
        stabilized: tower.stabilized,
    })
}

/// JSON dump of a metric table keyed by canonical state strings.
pub fn table_to_json<L: Ord + Clone>(
    plts: &FinitePlts<L>,
    space: &PairSpace,
    table: &MetricTable,
) -> serde_json::Value {
    let mut outer = serde_json::Map::new();
    let mut grouped: BTreeMap<&str, BTreeMap<&str, String>> = BTreeMap::new();
    for (a, b) in space.pairs() {
        let value = crate::plts::rat_display(table.get(space, a, b));
        grouped
            .entry(plts.label(a))
            .or_default()
            .insert(plts.label(b), value.clone());
        grouped
            .entry(plts.label(b))
            .or_default()
            .insert(plts.label(a), value);
    }
    for (left, row) in grouped {
        let mut inner = serde_json::Map::new();
        for (right, value) in row {
            inner.insert(right.to_string(), serde_json::Value::String(value));
        }
        outer.insert(left.to_string(), serde_json::Value::Object(inner));
    }
    serde_json::Value::Object(outer)
}

/// CSV rendering of a distance curve: `k,numerator,denominator,approx`.
pub fn curve_to_csv(curve: &[Rat]) -> String {
    let mut out = String::from("k,numerator,denominator,approx\n");
    for (k, value) in curve.iter().enumerate() {
        out.push_str(&format!(
            "{},{},{},{}\n",
            k,
            value.numer(),
            value.denom(),
            crate::plts::rat_approx(value)
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plts::rat;

    type L = &'static str;

    fn engine(plts: &FinitePlts<L>) -> MetricEngine<'_, L> {
        MetricEngine::new(plts, EngineOptions::default()).unwrap()
    }

    #[test]
    fn lift_step_stutters_on_tau() {
        let mut p: FinitePlts<L> = FinitePlts::new();
        let t = p.add_state("t");
        let eng = engine(&p);
        let derivs = eng.lift_step(&SubDistribution::dirac(t), &Act::Tau).unwrap();
        assert_eq!(derivs, vec![SubDistribution::dirac(t)]);
    }

    #[test]
    fn lift_step_drops_non_movers_for_visible_actions() {
        let mut p: FinitePlts<L> = FinitePlts::new();
        let a = p.add_state("a");
        let b = p.add_state("b");
        let a2 = p.add_state("a'");
        p.add_step(a, Act::Obs("x"), SubDistribution::dirac(a2)).unwrap();
        p.normalize();
        let eng = engine(&p);
        let delta =
            SubDistribution::from_entries([(a, rat(1, 2)), (b, rat(1, 2))]).unwrap();
        let derivs = eng.lift_step(&delta, &Act::Obs("x")).unwrap();
        assert_eq!(derivs.len(), 1);
        assert_eq!(derivs[0].prob(&a2), rat(1, 2));
        assert_eq!(derivs[0].mass(), rat(1, 2));
    }

    #[test]
    fn lift_step_unique_strong_derivative() {
        let mut p: FinitePlts<L> = FinitePlts::new();
        let t = p.add_state("t");
        let u = p.add_state("u");
        p.add_step(t, Act::Obs("x"), SubDistribution::dirac(u)).unwrap();
        p.normalize();
        let eng = engine(&p);
        let derivs = eng
            .lift_step(&SubDistribution::dirac(t), &Act::Obs("x"))
            .unwrap();
        assert_eq!(derivs, vec![SubDistribution::dirac(u)]);
    }

    #[test]
    fn weak_tau_derivatives_unroll_the_chain() {
        let mut p: FinitePlts<L> = FinitePlts::new();
        let t = p.add_state("t");
        let u = p.add_state("u");
        p.add_step(t, Act::Tau, SubDistribution::dirac(u)).unwrap();
        p.normalize();
        let mut eng = engine(&p);
        let derivs = eng.weak_derivatives(t, &Act::Tau).unwrap();
        let dists: Vec<_> = derivs.iter().map(|w| w.dist.clone()).collect();
        assert_eq!(dists, vec![SubDistribution::dirac(t), SubDistribution::dirac(u)]);

        let deadlock = eng.weak_derivatives(DEADLOCK, &Act::Tau).unwrap();
        assert_eq!(deadlock.len(), 1);
        assert_eq!(deadlock[0].dist, SubDistribution::dirac(DEADLOCK));
    }

    #[test]
    fn functional_scores_unanswerable_challenges_with_one() {
        // t offers "x", t' offers nothing.
        let mut p: FinitePlts<L> = FinitePlts::new();
        let t = p.add_state("t");
        let t2 = p.add_state("t'");
        let u = p.add_state("u");
        p.add_step(t, Act::Obs("x"), SubDistribution::dirac(u)).unwrap();
        p.normalize();
        let mut eng = engine(&p);
        let space = eng.pair_closure(&[(t, t2)]).unwrap();
        let zero = MetricTable::zero(&space);
        let b = eng.apply_b(&space, &zero).unwrap();
        assert_eq!(*b.get(&space, t, t2), rat(1, 1));
        // Both stuck: the value stays at the previous table's entry.
        assert_eq!(*b.get(&space, t2, t2), rat(0, 1));
    }

    #[test]
    fn tick_functional_matches_deterministic_ticks() {
        let mut p: FinitePlts<L> = FinitePlts::new();
        let t = p.add_state("t");
        let t2 = p.add_state("t'");
        let u = p.add_state("u");
        p.add_step(t, Act::Tick, SubDistribution::dirac(u)).unwrap();
        p.add_step(t2, Act::Tick, SubDistribution::dirac(u)).unwrap();
        p.add_step(u, Act::Tick, SubDistribution::dirac(u)).unwrap();
        p.normalize();
        let mut eng = engine(&p);
        let space = eng.pair_closure(&[(t, t2)]).unwrap();
        let zero = MetricTable::zero(&space);
        let bt = eng.apply_btick(&space, &zero).unwrap();
        assert_eq!(*bt.get(&space, t, t2), rat(0, 1));

        // A state that ticks against one that cannot scores 1.
        let stuck = {
            let mut q: FinitePlts<L> = FinitePlts::new();
            let a = q.add_state("a");
            let b = q.add_state("b");
            let c = q.add_state("c");
            q.add_step(a, Act::Tick, SubDistribution::dirac(c)).unwrap();
            q.normalize();
            (q, a, b)
        };
        let (q, a, b) = stuck;
        let mut eng = engine(&q);
        let space = eng.pair_closure(&[(a, b)]).unwrap();
        let zero = MetricTable::zero(&space);
        let bt = eng.apply_btick(&space, &zero).unwrap();
        assert_eq!(*bt.get(&space, a, b), rat(1, 1));
    }

    #[test]
    fn tower_level_zero_is_zero_and_identical_states_stay_at_zero() {
        let mut p: FinitePlts<L> = FinitePlts::new();
        let t = p.add_state("t");
        let u = p.add_state("u");
        p.add_step(t, Act::Obs("x"), SubDistribution::dirac(u)).unwrap();
        p.add_step(t, Act::Tick, SubDistribution::dirac(t)).unwrap();
        p.add_step(u, Act::Tick, SubDistribution::dirac(t)).unwrap();
        p.normalize();
        let mut eng = engine(&p);
        let space = eng.pair_closure(&[(t, t)]).unwrap();
        let tower = eng.tower(&space, 8).unwrap();
        assert_eq!(tower.tables[0], MetricTable::zero(&space));
        for table in &tower.tables {
            assert_eq!(*table.get(&space, t, t), rat(0, 1));
        }
        assert_eq!(tower.status(), FixStatus::Exact);
    }

    #[test]
    fn probabilistic_divergence_accumulates_over_ticks() {
        // Each tick, the left state keeps a 1/2 chance of moving to a state
        // that can fire "x" before the next tick; the right state never can.
        // The distance after k ticks is 1 - (1/2)^k.
        let mut p: FinitePlts<L> = FinitePlts::new();
        let l = p.add_state("l");
        let lx = p.add_state("lx");
        let r = p.add_state("r");
        let coin = SubDistribution::from_entries([(l, rat(1, 2)), (lx, rat(1, 2))]).unwrap();
        p.add_step(l, Act::Tick, coin.clone()).unwrap();
        p.add_step(lx, Act::Obs("x"), SubDistribution::dirac(lx)).unwrap();
        p.add_step(r, Act::Tick, SubDistribution::dirac(r)).unwrap();
        p.normalize();
        // lx has an untimed self-loop, so the untimed graph must stay acyclic:
        // reroute x to a fresh sink instead.
        let mut p: FinitePlts<L> = FinitePlts::new();
        let l = p.add_state("l");
        let lx = p.add_state("lx");
        let sink = p.add_state("sink");
        let r = p.add_state("r");
        let coin = SubDistribution::from_entries([(l, rat(1, 2)), (lx, rat(1, 2))]).unwrap();
        p.add_step(l, Act::Tick, coin).unwrap();
        p.add_step(lx, Act::Obs("x"), SubDistribution::dirac(sink)).unwrap();
        p.add_step(lx, Act::Tick, SubDistribution::dirac(lx)).unwrap();
        p.add_step(sink, Act::Tick, SubDistribution::dirac(sink)).unwrap();
        p.add_step(r, Act::Tick, SubDistribution::dirac(r)).unwrap();
        p.normalize();
        let mut eng = engine(&p);
        let space = eng.pair_closure(&[(l, r)]).unwrap();
        let tower = eng.tower(&space, 4).unwrap();
        let d1 = tower.value_at(&space, 1, l, r).unwrap();
        let d2 = tower.value_at(&space, 2, l, r).unwrap();
        let d3 = tower.value_at(&space, 3, l, r).unwrap();
        assert_eq!(d1, rat(1, 2));
        assert_eq!(d2, rat(3, 4));
        assert_eq!(d3, rat(7, 8));
    }

    #[test]
    fn untimed_metric_agrees_on_a_stabilising_example() {
        let mut p: FinitePlts<L> = FinitePlts::new();
        let t = p.add_state("t");
        let t2 = p.add_state("t'");
        let u = p.add_state("u");
        p.add_step(t, Act::Obs("x"), SubDistribution::dirac(u)).unwrap();
        p.add_step(t2, Act::Tau, SubDistribution::dirac(t)).unwrap();
        p.add_step(t, Act::Tick, SubDistribution::dirac(t)).unwrap();
        p.add_step(t2, Act::Tick, SubDistribution::dirac(t2)).unwrap();
        p.add_step(u, Act::Tick, SubDistribution::dirac(u)).unwrap();
        p.normalize();
        let mut eng = engine(&p);
        let space = eng.prepare_full().unwrap();
        let tower = eng.tower(&space, 16).unwrap();
        let (untimed, status) = eng.untimed_metric(&space, 64).unwrap();
        assert_eq!(status, FixStatus::Exact);
        let inf = tower.exact_inf().expect("tower stabilises");
        for (a, b) in space.pairs() {
            assert_eq!(inf.get(&space, a, b), untimed.get(&space, a, b));
        }
    }
}
