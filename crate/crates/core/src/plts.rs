//! Exact sub-distributions, the action alphabet and the finite pLTS
//! representation shared by the calculus semantics and the metric engine.
//!
//! All probabilities are arbitrary-precision rationals; no operation in this
//! module introduces rounding.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt;
use std::hash::Hash;

use num_rational::BigRational;
use num_traits::{One, Zero};
use thiserror::Error;

/// Exact rational probability / distance value.
pub type Rat = BigRational;

/// Shorthand constructor for small rationals. Panics on a zero denominator.
pub fn rat(num: i64, den: i64) -> Rat {
    Rat::new(num.into(), den.into())
}

/// Renders a rational as `num/den` (or just `num` for integers).
pub fn rat_display(r: &Rat) -> String {
    if r.is_integer() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DistError {
    #[error("probability {0} is not in (0, 1]")]
    ProbabilityOutOfRange(String),
    #[error("weight {0} is not in (0, 1]")]
    WeightOutOfRange(String),
    #[error("weights sum to {0} > 1")]
    WeightSumExceedsOne(String),
    #[error("total mass {0} exceeds 1")]
    MassExceedsOne(String),
    #[error("expected a full distribution, found mass {0}")]
    NotADistribution(String),
}

/// A finite-support probability sub-distribution with exact rational
/// probabilities. Every stored probability is strictly positive, so the key
/// set is exactly the support; the total mass never exceeds 1. A
/// distribution is the special case of mass exactly 1.
///
/// The empty sub-distribution (mass 0) is representable as an intermediate
/// value; operations defined only on distributions reject it.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SubDistribution<S: Ord> {
    entries: BTreeMap<S, Rat>,
}

impl<S: Ord + Clone> SubDistribution<S> {
    /// The empty sub-distribution (mass 0).
    pub fn empty() -> Self {
        SubDistribution {
            entries: BTreeMap::new(),
        }
    }

    /// The point (Dirac) distribution at `s`.
    pub fn dirac(s: S) -> Self {
        let mut entries = BTreeMap::new();
        entries.insert(s, Rat::one());
        SubDistribution { entries }
    }

    /// Builds a sub-distribution from `(state, probability)` pairs, merging
    /// duplicate states. Rejects non-positive probabilities and mass > 1.
    pub fn from_entries<I>(pairs: I) -> Result<Self, DistError>
    where
        I: IntoIterator<Item = (S, Rat)>,
    {
        let mut entries: BTreeMap<S, Rat> = BTreeMap::new();
        for (s, p) in pairs {
            if p <= Rat::zero() || p > Rat::one() {
                return Err(DistError::ProbabilityOutOfRange(rat_display(&p)));
            }
            *entries.entry(s).or_insert_with(Rat::zero) += p;
        }
        let d = SubDistribution { entries };
        if d.mass() > Rat::one() {
            return Err(DistError::MassExceedsOne(rat_display(&d.mass())));
        }
        Ok(d)
    }

    /// Total mass `|Δ|`.
    pub fn mass(&self) -> Rat {
        self.entries
            .values()
            .fold(Rat::zero(), |acc, p| acc + p.clone())
    }

    /// True iff this is a full distribution (mass exactly 1).
    pub fn is_distribution(&self) -> bool {
        self.mass().is_one()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of support elements.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    /// The support, in canonical (ordered) state order.
    pub fn support(&self) -> impl Iterator<Item = &S> {
        self.entries.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&S, &Rat)> {
        self.entries.iter()
    }

    /// Probability assigned to `s` (0 outside the support).
    pub fn prob(&self, s: &S) -> Rat {
        self.entries.get(s).cloned().unwrap_or_else(Rat::zero)
    }

    /// Convex combination `Σ_i w_i · Δ_i`. Weights must lie in (0, 1] and sum
    /// to at most 1. Support merging is exact; entries never cancel because
    /// all weights and probabilities are positive.
    pub fn convex_combine(parts: &[(Rat, SubDistribution<S>)]) -> Result<Self, DistError> {
        let mut total = Rat::zero();
        for (w, _) in parts {
            if *w <= Rat::zero() || *w > Rat::one() {
                return Err(DistError::WeightOutOfRange(rat_display(w)));
            }
            total += w.clone();
        }
        if total > Rat::one() {
            return Err(DistError::WeightSumExceedsOne(rat_display(&total)));
        }
        let mut entries: BTreeMap<S, Rat> = BTreeMap::new();
        for (w, part) in parts {
            for (s, p) in part.iter() {
                *entries.entry(s.clone()).or_insert_with(Rat::zero) += w.clone() * p.clone();
            }
        }
        Ok(SubDistribution { entries })
    }

    /// `Δ + (1 − |Δ|)·δ(deadlock)`: pays the missing mass to the deadlock
    /// state, yielding a full distribution. Identity on full distributions.
    pub fn pad_with_deadlock(&self, deadlock: S) -> SubDistribution<S> {
        let missing = Rat::one() - self.mass();
        let mut entries = self.entries.clone();
        if !missing.is_zero() {
            *entries.entry(deadlock).or_insert_with(Rat::zero) += missing;
        }
        SubDistribution { entries }
    }

    /// Maps the support through `f`, merging states that collide.
    pub fn map_support<T: Ord + Clone>(&self, mut f: impl FnMut(&S) -> T) -> SubDistribution<T> {
        let mut entries: BTreeMap<T, Rat> = BTreeMap::new();
        for (s, p) in self.iter() {
            *entries.entry(f(s)).or_insert_with(Rat::zero) += p.clone();
        }
        SubDistribution { entries }
    }
}

impl<S: Ord + Clone + fmt::Display> fmt::Display for SubDistribution<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, (s, p)) in self.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{}: {}", s, rat_display(p))?;
        }
        write!(f, "}}")
    }
}

/// An action of a pLTS: the internal action `τ`, the unique timed action
/// `tick`, or a visible untimed action.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Act<L> {
    Tau,
    Tick,
    Obs(L),
}

impl<L> Act<L> {
    pub fn is_tick(&self) -> bool {
        matches!(self, Act::Tick)
    }

    pub fn is_tau(&self) -> bool {
        matches!(self, Act::Tau)
    }
}

impl<L: fmt::Display> fmt::Display for Act<L> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Act::Tau => write!(f, "tau"),
            Act::Tick => write!(f, "tick"),
            Act::Obs(l) => write!(f, "{}", l),
        }
    }
}

/// Index of a state in a [`FinitePlts`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StateId(pub u32);

impl StateId {
    pub fn idx(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for StateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}", self.0)
    }
}

/// The distinguished deadlocked state, present in every [`FinitePlts`]. It
/// has no outgoing transitions of any kind.
pub const DEADLOCK: StateId = StateId(0);

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PltsError {
    #[error("transition derivative has mass {0}, expected a full distribution")]
    PartialDerivative(String),
    #[error("state {0} is out of range")]
    UnknownState(StateId),
    #[error("the deadlock state admits no transitions")]
    DeadlockStep,
    #[error("untimed transition graph has a cycle through {0}")]
    CyclicUntimedGraph(String),
}

/// A finite, image-finite pLTS over interned states. State 0 is the
/// deadlocked state. Every strong transition leads to a full distribution.
#[derive(Clone, Debug)]
pub struct FinitePlts<L> {
    labels: Vec<String>,
    steps: Vec<Vec<(Act<L>, SubDistribution<StateId>)>>,
}

impl<L: Clone + Ord> FinitePlts<L> {
    pub fn new() -> Self {
        FinitePlts {
            labels: vec!["deadlock".to_string()],
            steps: vec![Vec::new()],
        }
    }

    pub fn add_state(&mut self, label: impl Into<String>) -> StateId {
        let id = StateId(self.labels.len() as u32);
        self.labels.push(label.into());
        self.steps.push(Vec::new());
        id
    }

    pub fn add_step(
        &mut self,
        src: StateId,
        act: Act<L>,
        dist: SubDistribution<StateId>,
    ) -> Result<(), PltsError> {
        if src == DEADLOCK {
            return Err(PltsError::DeadlockStep);
        }
        if src.idx() >= self.steps.len() {
            return Err(PltsError::UnknownState(src));
        }
        if !dist.is_distribution() {
            return Err(PltsError::PartialDerivative(rat_display(&dist.mass())));
        }
        for t in dist.support() {
            if t.idx() >= self.steps.len() {
                return Err(PltsError::UnknownState(*t));
            }
        }
        self.steps[src.idx()].push((act, dist));
        Ok(())
    }

    /// Sorts and deduplicates every transition list, fixing a canonical
    /// iteration order.
    pub fn normalize(&mut self) {
        for list in &mut self.steps {
            list.sort();
            list.dedup();
        }
    }

    pub fn n_states(&self) -> usize {
        self.labels.len()
    }

    pub fn label(&self, s: StateId) -> &str {
        &self.labels[s.idx()]
    }

    pub fn steps(&self, s: StateId) -> &[(Act<L>, SubDistribution<StateId>)] {
        &self.steps[s.idx()]
    }

    pub fn states(&self) -> impl Iterator<Item = StateId> {
        (0..self.labels.len() as u32).map(StateId)
    }

    /// Longest untimed (non-tick) path length from each state. Fails if the
    /// untimed transition graph has a cycle, which a time-guarded model can
    /// never produce.
    pub fn untimed_depths(&self) -> Result<Vec<u32>, PltsError> {
        let n = self.n_states();
        let mut succ: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut indeg = vec![0usize; n];
        for s in 0..n {
            for (act, dist) in &self.steps[s] {
                if act.is_tick() {
                    continue;
                }
                for t in dist.support() {
                    succ[s].push(t.idx());
                    indeg[t.idx()] += 1;
                }
            }
        }
        let mut queue: VecDeque<usize> = (0..n).filter(|&s| indeg[s] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(s) = queue.pop_front() {
            order.push(s);
            for &t in &succ[s] {
                indeg[t] -= 1;
                if indeg[t] == 0 {
                    queue.push_back(t);
                }
            }
        }
        if order.len() != n {
            let culprit = (0..n)
                .find(|&s| indeg[s] > 0)
                .map(|s| self.labels[s].clone())
                .unwrap_or_default();
            return Err(PltsError::CyclicUntimedGraph(culprit));
        }
        let mut depth = vec![0u32; n];
        for &s in order.iter().rev() {
            for &t in &succ[s] {
                depth[s] = depth[s].max(depth[t] + 1);
            }
        }
        Ok(depth)
    }

    /// Maximum untimed path length over the whole state space.
    pub fn max_untimed_depth(&self) -> Result<u32, PltsError> {
        Ok(self.untimed_depths()?.into_iter().max().unwrap_or(0))
    }
}

impl<L: Clone + Ord> Default for FinitePlts<L> {
    fn default() -> Self {
        Self::new()
    }
}

/// A source of probabilistic transitions over structured states, consumed by
/// [`explore`] to build a [`FinitePlts`].
pub trait Plts {
    type State: Clone + Ord + Hash;
    type Obs: Clone + Ord;
    type Error;

    fn step(
        &self,
        state: &Self::State,
    ) -> Result<Vec<(Act<Self::Obs>, SubDistribution<Self::State>)>, Self::Error>;

    fn label(&self, state: &Self::State) -> String;
}

#[derive(Debug, Error)]
pub enum ExploreError<E> {
    #[error("state budget of {0} exceeded during exploration")]
    BudgetExceeded(usize),
    #[error(transparent)]
    Step(E),
}

/// The reachable fragment of a [`Plts`], with interned states.
pub struct Explored<P: Plts> {
    pub plts: FinitePlts<P::Obs>,
    /// Structured state for each non-deadlock id; `states[i]` is `StateId(i+1)`.
    pub states: Vec<P::State>,
    pub roots: Vec<StateId>,
}

impl<P: Plts> Explored<P> {
    pub fn state_of(&self, id: StateId) -> Option<&P::State> {
        if id == DEADLOCK {
            None
        } else {
            self.states.get(id.idx() - 1)
        }
    }
}

/// Breadth-first exploration from the given roots, up to `budget` states
/// (the deadlock state does not count against the budget).
pub fn explore<P: Plts>(
    source: &P,
    roots: &[P::State],
    budget: usize,
) -> Result<Explored<P>, ExploreError<P::Error>> {
    let mut plts = FinitePlts::new();
    let mut states: Vec<P::State> = Vec::new();
    let mut index: HashMap<P::State, StateId> = HashMap::new();
    let mut queue: VecDeque<StateId> = VecDeque::new();

    let intern = |s: &P::State,
                      plts: &mut FinitePlts<P::Obs>,
                      states: &mut Vec<P::State>,
                      index: &mut HashMap<P::State, StateId>,
                      queue: &mut VecDeque<StateId>|
     -> Result<StateId, ExploreError<P::Error>> {
        if let Some(&id) = index.get(s) {
            return Ok(id);
        }
        if states.len() >= budget {
            return Err(ExploreError::BudgetExceeded(budget));
        }
        let id = plts.add_state(source.label(s));
        states.push(s.clone());
        index.insert(s.clone(), id);
        queue.push_back(id);
        Ok(id)
    };

    let mut root_ids = Vec::with_capacity(roots.len());
    for r in roots {
        root_ids.push(intern(r, &mut plts, &mut states, &mut index, &mut queue)?);
    }

    while let Some(id) = queue.pop_front() {
        let state = states[id.idx() - 1].clone();
        let mut out = source.step(&state).map_err(ExploreError::Step)?;
        out.sort();
        out.dedup();
        for (act, dist) in out {
            let interned = dist.map_support(|s| {
                // Interning failures are reported after the closure runs.
                intern(s, &mut plts, &mut states, &mut index, &mut queue)
                    .unwrap_or(StateId(u32::MAX))
            });
            if interned.support().any(|t| t.0 == u32::MAX) {
                return Err(ExploreError::BudgetExceeded(budget));
            }
            plts.add_step(id, act, interned).expect("interned ids are valid");
        }
    }
    plts.normalize();
    Ok(Explored {
        plts,
        states,
        roots: root_ids,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn dirac_basics() {
        let d = SubDistribution::dirac("a");
        assert_eq!(d.prob(&"a"), Rat::one());
        assert_eq!(d.support().collect::<Vec<_>>(), vec![&"a"]);
        assert!(d.is_distribution());
    }

    #[test]
    fn convex_combine_merges_support() {
        let half = rat(1, 2);
        let a = SubDistribution::dirac("a");
        let b = SubDistribution::dirac("b");
        let d =
            SubDistribution::convex_combine(&[(half.clone(), a.clone()), (half.clone(), b)])
                .unwrap();
        assert_eq!(d.prob(&"a"), rat(1, 2));
        assert_eq!(d.prob(&"b"), rat(1, 2));

        let merged =
            SubDistribution::convex_combine(&[(half.clone(), a.clone()), (half, a)]).unwrap();
        assert_eq!(merged, SubDistribution::dirac("a"));
    }

    #[test]
    fn convex_combine_partial_mass() {
        let d = SubDistribution::convex_combine(&[(rat(1, 3), SubDistribution::dirac("a"))])
            .unwrap();
        assert_eq!(d.mass(), rat(1, 3));
        assert!(!d.is_distribution());
    }

    #[test]
    fn convex_combine_rejects_excess_weight() {
        let err = SubDistribution::convex_combine(&[
            (rat(2, 3), SubDistribution::dirac("a")),
            (rat(1, 2), SubDistribution::dirac("b")),
        ])
        .unwrap_err();
        assert_eq!(err, DistError::WeightSumExceedsOne("7/6".into()));
    }

    #[test]
    fn pad_with_deadlock_cases() {
        let half = SubDistribution::from_entries([("a", rat(1, 2))]).unwrap();
        let padded = half.pad_with_deadlock("dead");
        assert_eq!(padded.prob(&"a"), rat(1, 2));
        assert_eq!(padded.prob(&"dead"), rat(1, 2));
        assert!(padded.is_distribution());

        let full = SubDistribution::dirac("a");
        assert_eq!(full.pad_with_deadlock("dead"), full);

        let empty = SubDistribution::<&str>::empty();
        assert_eq!(empty.pad_with_deadlock("dead"), SubDistribution::dirac("dead"));
    }

    #[test]
    fn untimed_depths_and_cycles() {
        let mut p: FinitePlts<&str> = FinitePlts::new();
        let a = p.add_state("a");
        let b = p.add_state("b");
        let c = p.add_state("c");
        p.add_step(a, Act::Tau, SubDistribution::dirac(b)).unwrap();
        p.add_step(b, Act::Obs("x"), SubDistribution::dirac(c)).unwrap();
        p.add_step(c, Act::Tick, SubDistribution::dirac(a)).unwrap();
        assert_eq!(p.max_untimed_depth().unwrap(), 2);

        p.add_step(c, Act::Tau, SubDistribution::dirac(a)).unwrap();
        assert!(matches!(
            p.untimed_depths(),
            Err(PltsError::CyclicUntimedGraph(_))
        ));
    }

    proptest! {
        // mass(convex_combine(w, parts)) = Σ w_i · mass(parts_i), exactly.
        #[test]
        fn combine_mass_is_linear(parts in proptest::collection::vec(
            (1u8..=4, proptest::collection::btree_map(0u8..6, (1u8..=3, 3u8..=6), 1..3)),
            1..4,
        )) {
            let total_weight: u32 = parts.iter().map(|(w, _)| *w as u32).sum();
            prop_assume!(total_weight <= 4);
            let parts: Vec<(Rat, SubDistribution<u8>)> = parts
                .into_iter()
                .map(|(w, m)| {
                    let entries = m.into_iter().map(|(s, (n, d))| (s, rat(n as i64, (n + d) as i64)));
                    (rat(w as i64, 4), SubDistribution::from_entries(entries).unwrap())
                })
                .collect();
            prop_assume!(parts.iter().all(|(_, d)| d.mass() <= Rat::one()));
            let expect: Rat = parts
                .iter()
                .map(|(w, d)| w.clone() * d.mass())
                .fold(Rat::zero(), |a, b| a + b);
            prop_assume!(expect <= Rat::one());
            let combined = SubDistribution::convex_combine(&parts).unwrap();
            prop_assert_eq!(combined.mass(), expect);
        }

        // pad_with_deadlock is idempotent and always yields a distribution.
        #[test]
        fn pad_idempotent(m in proptest::collection::btree_map(1u8..6, (1u8..=2, 5u8..=9), 0..3)) {
            let entries = m.into_iter().map(|(s, (n, d))| (s, rat(n as i64, (n + d) as i64)));
            let sub = SubDistribution::from_entries(entries).unwrap();
            prop_assume!(sub.mass() <= Rat::one());
            let once = sub.pad_with_deadlock(0);
            prop_assert!(once.is_distribution());
            prop_assert_eq!(once.pad_with_deadlock(0), once.clone());
        }
    }
}
