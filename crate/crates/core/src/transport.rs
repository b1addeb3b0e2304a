//! Exact Kantorovich lifting of a state pseudometric to distributions.
//!
//! The lifting `K(d)(Δ, Θ) = min_ω Σ ω(s,t)·d(s,t)` over all matchings ω of
//! (Δ, Θ) is a transportation problem on the two supports. [`kantorovich`]
//! solves it with a network simplex using exact rational pivots;
//! [`kantorovich_oracle`] independently recomputes the optimum by enumerating
//! every spanning-tree basic solution of the transportation polytope and is
//! only intended for small instances.

use std::collections::BTreeMap;
use std::collections::VecDeque;

use num_traits::{One, Zero};
use thiserror::Error;

use crate::plts::{rat_display, Rat, SubDistribution};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TransportError {
    #[error("kantorovich arguments must be full distributions (masses {left} and {right})")]
    MassMismatch { left: String, right: String },
    #[error("cost {0} lies outside [0, 1]")]
    CostOutOfRange(String),
    #[error("oracle instance has {cells} cells, exceeding the bound of {bound}")]
    SizeBoundExceeded { cells: usize, bound: usize },
}

/// A matching (coupling) for a pair of distributions: a joint distribution
/// whose marginals are the two given ones.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Matching<S: Ord> {
    joint: BTreeMap<(S, S), Rat>,
}

impl<S: Ord + Clone> Matching<S> {
    pub fn from_entries<I: IntoIterator<Item = ((S, S), Rat)>>(pairs: I) -> Self {
        let mut joint = BTreeMap::new();
        for (k, p) in pairs {
            if !p.is_zero() {
                *joint.entry(k).or_insert_with(Rat::zero) += p;
            }
        }
        Matching { joint }
    }

    /// The independent (product) matching `ω(s,t) = Δ(s)·Θ(t)`.
    pub fn product(left: &SubDistribution<S>, right: &SubDistribution<S>) -> Self {
        let mut joint = BTreeMap::new();
        for (s, p) in left.iter() {
            for (t, q) in right.iter() {
                joint.insert((s.clone(), t.clone()), p.clone() * q.clone());
            }
        }
        Matching { joint }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(S, S), &Rat)> {
        self.joint.iter()
    }

    pub fn cost(&self, mut d: impl FnMut(&S, &S) -> Rat) -> Rat {
        self.joint
            .iter()
            .fold(Rat::zero(), |acc, ((s, t), w)| acc + w.clone() * d(s, t))
    }
}

/// Checks both marginal equations of Def-style matchings exactly.
pub fn is_matching<S: Ord + Clone>(
    omega: &Matching<S>,
    left: &SubDistribution<S>,
    right: &SubDistribution<S>,
) -> bool {
    let mut row: BTreeMap<&S, Rat> = BTreeMap::new();
    let mut col: BTreeMap<&S, Rat> = BTreeMap::new();
    for ((s, t), w) in omega.iter() {
        *row.entry(s).or_insert_with(Rat::zero) += w.clone();
        *col.entry(t).or_insert_with(Rat::zero) += w.clone();
    }
    let rows_ok = row.iter().all(|(s, m)| left.prob(s) == *m)
        && left.iter().all(|(s, p)| row.get(s).map_or(p.is_zero(), |m| m == p));
    let cols_ok = col.iter().all(|(t, m)| right.prob(t) == *m)
        && right.iter().all(|(t, p)| col.get(t).map_or(p.is_zero(), |m| m == p));
    rows_ok && cols_ok
}

struct Instance<S> {
    sources: Vec<S>,
    sinks: Vec<S>,
    supply: Vec<Rat>,
    demand: Vec<Rat>,
    cost: Vec<Vec<Rat>>,
}

fn build_instance<S: Ord + Clone>(
    mut d: impl FnMut(&S, &S) -> Rat,
    left: &SubDistribution<S>,
    right: &SubDistribution<S>,
) -> Result<Instance<S>, TransportError> {
    if !left.is_distribution() || !right.is_distribution() {
        return Err(TransportError::MassMismatch {
            left: rat_display(&left.mass()),
            right: rat_display(&right.mass()),
        });
    }
    let sources: Vec<S> = left.support().cloned().collect();
    let sinks: Vec<S> = right.support().cloned().collect();
    let supply: Vec<Rat> = left.iter().map(|(_, p)| p.clone()).collect();
    let demand: Vec<Rat> = right.iter().map(|(_, p)| p.clone()).collect();
    let mut cost = Vec::with_capacity(sources.len());
    for s in &sources {
        let mut row = Vec::with_capacity(sinks.len());
        for t in &sinks {
            let c = d(s, t);
            if c < Rat::zero() || c > Rat::one() {
                return Err(TransportError::CostOutOfRange(rat_display(&c)));
            }
            row.push(c);
        }
        cost.push(row);
    }
    Ok(Instance {
        sources,
        sinks,
        supply,
        demand,
        cost,
    })
}

/// Exact optimal value of the Kantorovich lifting of `d` on two full
/// distributions. The minimum is attained because both supports are finite.
pub fn kantorovich<S: Ord + Clone>(
    d: impl FnMut(&S, &S) -> Rat,
    left: &SubDistribution<S>,
    right: &SubDistribution<S>,
) -> Result<Rat, TransportError> {
    kantorovich_with_matching(d, left, right).map(|(v, _)| v)
}

/// As [`kantorovich`], also returning one optimal matching.
pub fn kantorovich_with_matching<S: Ord + Clone>(
    d: impl FnMut(&S, &S) -> Rat,
    left: &SubDistribution<S>,
    right: &SubDistribution<S>,
) -> Result<(Rat, Matching<S>), TransportError> {
    let inst = build_instance(d, left, right)?;
    let m = inst.sources.len();
    let n = inst.sinks.len();

    // A single row or column admits exactly one matching.
    if m == 1 {
        let value = (0..n).fold(Rat::zero(), |acc, j| {
            acc + inst.demand[j].clone() * inst.cost[0][j].clone()
        });
        let matching = Matching::from_entries((0..n).map(|j| {
            (
                (inst.sources[0].clone(), inst.sinks[j].clone()),
                inst.demand[j].clone(),
            )
        }));
        return Ok((value, matching));
    }
    if n == 1 {
        let value = (0..m).fold(Rat::zero(), |acc, i| {
            acc + inst.supply[i].clone() * inst.cost[i][0].clone()
        });
        let matching = Matching::from_entries((0..m).map(|i| {
            (
                (inst.sources[i].clone(), inst.sinks[0].clone()),
                inst.supply[i].clone(),
            )
        }));
        return Ok((value, matching));
    }
    // Equal distributions under a cost that vanishes on their diagonal: the
    // diagonal matching is optimal since costs are non-negative.
    if left == right {
        let diag_zero = (0..m).all(|i| inst.cost[i][i].is_zero());
        if diag_zero {
            let matching = Matching::from_entries((0..m).map(|i| {
                (
                    (inst.sources[i].clone(), inst.sinks[i].clone()),
                    inst.supply[i].clone(),
                )
            }));
            return Ok((Rat::zero(), matching));
        }
    }

    let flows = network_simplex(&inst);
    let mut value = Rat::zero();
    let mut entries = Vec::new();
    for i in 0..m {
        for j in 0..n {
            let f = &flows[i * n + j];
            if !f.is_zero() {
                value += f.clone() * inst.cost[i][j].clone();
                entries.push((
                    (inst.sources[i].clone(), inst.sinks[j].clone()),
                    f.clone(),
                ));
            }
        }
    }
    Ok((value, Matching::from_entries(entries)))
}

/// Network simplex on the bipartite transportation graph. Degenerate pivots
/// are broken by lowest arc index (Bland's rule), which guarantees
/// termination.
fn network_simplex(inst: &Instance<impl Ord>) -> Vec<Rat> {
    let m = inst.supply.len();
    let n = inst.demand.len();
    let arcs = m * n;
    let mut in_basis = vec![false; arcs];
    let mut flow = vec![Rat::zero(); arcs];

    // Northwest-corner initial basis: m + n − 1 arcs forming a spanning tree.
    {
        let mut a = inst.supply.clone();
        let mut b = inst.demand.clone();
        let (mut i, mut j) = (0usize, 0usize);
        loop {
            let arc = i * n + j;
            let f = a[i].clone().min(b[j].clone());
            flow[arc] = f.clone();
            in_basis[arc] = true;
            a[i] -= f.clone();
            b[j] -= f;
            if i == m - 1 && j == n - 1 {
                break;
            }
            if a[i].is_zero() && i < m - 1 {
                i += 1;
            } else {
                j += 1;
            }
        }
    }

    loop {
        // Duals from the basis tree: u_i + v_j = c_ij on basic arcs.
        let nodes = m + n;
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); nodes];
        for arc in 0..arcs {
            if in_basis[arc] {
                let (i, j) = (arc / n, arc % n);
                adj[i].push(arc);
                adj[m + j].push(arc);
            }
        }
        let mut u: Vec<Option<Rat>> = vec![None; m];
        let mut v: Vec<Option<Rat>> = vec![None; n];
        u[0] = Some(Rat::zero());
        let mut queue = VecDeque::from([0usize]);
        while let Some(node) = queue.pop_front() {
            for &arc in &adj[node] {
                let (i, j) = (arc / n, arc % n);
                if node == i && v[j].is_none() {
                    v[j] = Some(inst.cost[i][j].clone() - u[i].clone().unwrap());
                    queue.push_back(m + j);
                } else if node == m + j && u[i].is_none() {
                    u[i] = Some(inst.cost[i][j].clone() - v[j].clone().unwrap());
                    queue.push_back(i);
                }
            }
        }

        // Entering arc: lowest-index non-basic arc with negative reduced cost.
        let mut entering = None;
        for arc in 0..arcs {
            if in_basis[arc] {
                continue;
            }
            let (i, j) = (arc / n, arc % n);
            let reduced =
                inst.cost[i][j].clone() - u[i].clone().unwrap() - v[j].clone().unwrap();
            if reduced < Rat::zero() {
                entering = Some(arc);
                break;
            }
        }
        let Some(entering) = entering else {
            return flow;
        };
        let (ei, ej) = (entering / n, entering % n);

        // Unique tree path from source ei to sink ej; the entering arc closes
        // the cycle and carries +δ.
        let mut parent: Vec<Option<(usize, usize)>> = vec![None; nodes];
        let mut seen = vec![false; nodes];
        seen[ei] = true;
        let mut queue = VecDeque::from([ei]);
        while let Some(node) = queue.pop_front() {
            if node == m + ej {
                break;
            }
            for &arc in &adj[node] {
                let (i, j) = (arc / n, arc % n);
                let other = if node == i { m + j } else { i };
                if !seen[other] {
                    seen[other] = true;
                    parent[other] = Some((node, arc));
                    queue.push_back(other);
                }
            }
        }

        // Walk the path from sink ej back to source ei, classifying each arc
        // by traversal direction: source→sink along the cycle walk gains δ,
        // sink→source loses δ.
        let mut plus: Vec<usize> = vec![entering];
        let mut minus: Vec<usize> = Vec::new();
        let mut node = m + ej;
        while node != ei {
            let (prev, arc) = parent[node].expect("basis tree is connected");
            let (i, _) = (arc / n, arc % n);
            // The cycle walk runs ei → … → ej; the parent chain is oriented
            // the opposite way, so an arc whose tree-path direction is
            // prev→node appears as node→prev in the walk.
            if prev == i {
                // walk traverses sink→source
                minus.push(arc);
            } else {
                plus.push(arc);
            }
            node = prev;
        }

        let delta = minus
            .iter()
            .map(|&arc| flow[arc].clone())
            .min()
            .expect("cycle has at least one reverse arc");
        let leaving = *minus
            .iter()
            .filter(|&&arc| flow[arc] == delta)
            .min()
            .expect("minimum is attained");

        for &arc in &plus {
            flow[arc] += delta.clone();
        }
        for &arc in &minus {
            flow[arc] -= delta.clone();
        }
        in_basis[entering] = true;
        in_basis[leaving] = false;
        flow[leaving] = Rat::zero();
    }
}

/// Default cell bound for [`kantorovich_oracle`].
pub const ORACLE_CELL_BOUND: usize = 12;

/// Independent recomputation of the Kantorovich optimum by enumerating every
/// spanning tree of the complete bipartite support graph, solving its unique
/// basic solution, and keeping the cheapest feasible one. Exponential; the
/// instance must have at most `bound` cells.
pub fn kantorovich_oracle<S: Ord + Clone>(
    d: impl FnMut(&S, &S) -> Rat,
    left: &SubDistribution<S>,
    right: &SubDistribution<S>,
    bound: usize,
) -> Result<Rat, TransportError> {
    let inst = build_instance(d, left, right)?;
    let m = inst.sources.len();
    let n = inst.sinks.len();
    if m * n > bound {
        return Err(TransportError::SizeBoundExceeded {
            cells: m * n,
            bound,
        });
    }

    let arcs = m * n;
    let tree_size = m + n - 1;
    let mut best: Option<Rat> = None;

    // Iterate over all arc subsets of size m+n−1.
    let mut combo: Vec<usize> = (0..tree_size).collect();
    loop {
        if let Some(value) = tree_solution(&inst, &combo) {
            best = Some(match best {
                Some(b) => b.min(value),
                None => value,
            });
        }
        // advance combination
        let mut idx = tree_size;
        loop {
            if idx == 0 {
                return Ok(best.expect("northwest corner tree is always feasible"));
            }
            idx -= 1;
            if combo[idx] != arcs - tree_size + idx {
                combo[idx] += 1;
                for k in idx + 1..tree_size {
                    combo[k] = combo[k - 1] + 1;
                }
                break;
            }
        }
    }
}

/// Solves the unique flow of a candidate basis; `None` if the arc set is not
/// a spanning tree or the basic solution is infeasible.
fn tree_solution(inst: &Instance<impl Ord>, combo: &[usize]) -> Option<Rat> {
    let m = inst.supply.len();
    let n = inst.demand.len();
    let nodes = m + n;

    // Spanning tree check: nodes−1 edges and acyclic implies connected.
    let mut uf: Vec<usize> = (0..nodes).collect();
    fn find(uf: &mut Vec<usize>, x: usize) -> usize {
        let mut r = x;
        while uf[r] != r {
            r = uf[r];
        }
        let mut x = x;
        while uf[x] != r {
            let next = uf[x];
            uf[x] = r;
            x = next;
        }
        r
    }
    for &arc in combo {
        let (i, j) = (arc / n, arc % n);
        let (a, b) = (find(&mut uf, i), find(&mut uf, m + j));
        if a == b {
            return None;
        }
        uf[a] = b;
    }

    // Leaf elimination solves the tree flows uniquely.
    let mut need: Vec<Rat> = inst
        .supply
        .iter()
        .chain(inst.demand.iter())
        .cloned()
        .collect();
    let mut incident: Vec<Vec<usize>> = vec![Vec::new(); nodes];
    for (pos, &arc) in combo.iter().enumerate() {
        let (i, j) = (arc / n, arc % n);
        incident[i].push(pos);
        incident[m + j].push(pos);
    }
    let mut degree: Vec<usize> = incident.iter().map(Vec::len).collect();
    let mut removed = vec![false; combo.len()];
    let mut flows = vec![Rat::zero(); combo.len()];
    let mut leaves: VecDeque<usize> = (0..nodes).filter(|&x| degree[x] == 1).collect();
    let mut value = Rat::zero();
    while let Some(leaf) = leaves.pop_front() {
        let Some(&pos) = incident[leaf].iter().find(|&&p| !removed[p]) else {
            continue;
        };
        let arc = combo[pos];
        let (i, j) = (arc / n, arc % n);
        let f = need[leaf].clone();
        if f < Rat::zero() {
            return None;
        }
        flows[pos] = f.clone();
        value += f.clone() * inst.cost[i][j].clone();
        let other = if leaf == i { m + j } else { i };
        need[other] -= f;
        removed[pos] = true;
        degree[leaf] -= 1;
        degree[other] -= 1;
        if degree[other] == 1 {
            leaves.push_back(other);
        }
    }
    if removed.iter().all(|&r| r) {
        Some(value)
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plts::rat;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn discrete(a: &u8, b: &u8) -> Rat {
        if a == b {
            Rat::zero()
        } else {
            Rat::one()
        }
    }

    #[test]
    fn identical_distributions_have_distance_zero() {
        let d = SubDistribution::from_entries([(0u8, rat(1, 3)), (1, rat(1, 3)), (2, rat(1, 3))])
            .unwrap();
        assert_eq!(kantorovich(discrete, &d, &d).unwrap(), Rat::zero());
    }

    #[test]
    fn discrete_metric_matches_total_variation() {
        // For the 0/1 discrete metric the lifting equals total variation:
        // TV({a:1/2, b:1/2}, {a:1}) = 1/2.
        let left = SubDistribution::from_entries([(0u8, rat(1, 2)), (1, rat(1, 2))]).unwrap();
        let right = SubDistribution::dirac(0u8);
        assert_eq!(kantorovich(discrete, &left, &right).unwrap(), rat(1, 2));
        assert_eq!(
            kantorovich_oracle(discrete, &left, &right, ORACLE_CELL_BOUND).unwrap(),
            rat(1, 2)
        );
    }

    #[test]
    fn dirac_pair_is_the_point_cost() {
        let cost = |a: &u8, b: &u8| if a == b { Rat::zero() } else { rat(1, 4) };
        let left = SubDistribution::dirac(0u8);
        let right = SubDistribution::dirac(1u8);
        assert_eq!(kantorovich(cost, &left, &right).unwrap(), rat(1, 4));
    }

    #[test]
    fn mass_mismatch_is_rejected() {
        let full = SubDistribution::dirac(0u8);
        let half = SubDistribution::from_entries([(0u8, rat(1, 2))]).unwrap();
        assert!(matches!(
            kantorovich(discrete, &full, &half),
            Err(TransportError::MassMismatch { .. })
        ));
    }

    #[test]
    fn out_of_range_cost_is_rejected() {
        let cost = |_: &u8, _: &u8| rat(3, 2);
        let left = SubDistribution::dirac(0u8);
        let right = SubDistribution::dirac(1u8);
        assert!(matches!(
            kantorovich(cost, &left, &right),
            Err(TransportError::CostOutOfRange(_))
        ));
    }

    #[test]
    fn matchings_are_recognised() {
        let left = SubDistribution::from_entries([(0u8, rat(1, 2)), (1, rat(1, 2))]).unwrap();
        let right = SubDistribution::from_entries([(0u8, rat(1, 4)), (2, rat(3, 4))]).unwrap();
        assert!(is_matching(&Matching::product(&left, &right), &left, &right));
        assert!(is_matching(
            &Matching::product(&left, &left),
            &left,
            &left
        ));
        let diagonal =
            Matching::from_entries([((0u8, 0u8), rat(1, 2)), ((1, 1), rat(1, 2))]);
        assert!(is_matching(&diagonal, &left, &left));
        let wrong = Matching::from_entries([((0u8, 0u8), rat(1, 2)), ((1, 2), rat(1, 2))]);
        assert!(!is_matching(&wrong, &left, &right));
    }

    fn random_dist(rng: &mut StdRng, states: u8, max_support: usize) -> SubDistribution<u8> {
        let k = rng.random_range(1..=max_support);
        let mut picks: Vec<u8> = Vec::new();
        while picks.len() < k {
            let s = rng.random_range(0..states);
            if !picks.contains(&s) {
                picks.push(s);
            }
        }
        let weights: Vec<i64> = (0..k).map(|_| rng.random_range(1..6) as i64).collect();
        let total: i64 = weights.iter().sum();
        SubDistribution::from_entries(
            picks
                .into_iter()
                .zip(weights)
                .map(|(s, w)| (s, rat(w, total))),
        )
        .unwrap()
    }

    #[test]
    fn solver_agrees_with_oracle_and_returns_valid_matchings() {
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..80 {
            let left = random_dist(&mut rng, 5, 3);
            let right = random_dist(&mut rng, 5, 3);
            let table: Vec<Vec<Rat>> = (0..5)
                .map(|_| (0..5).map(|_| rat(rng.random_range(0..=4), 4)).collect())
                .collect();
            let cost = |a: &u8, b: &u8| table[*a as usize][*b as usize].clone();
            let (value, matching) = kantorovich_with_matching(cost, &left, &right).unwrap();
            let oracle = kantorovich_oracle(cost, &left, &right, ORACLE_CELL_BOUND).unwrap();
            assert_eq!(value, oracle);
            assert!(is_matching(&matching, &left, &right));
            assert_eq!(matching.cost(cost), value);
        }
    }
}
