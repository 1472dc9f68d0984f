//! Finite continuous-time Markov chains: generator assembly, exact stationary
//! solve, balance residuals, Gillespie simulation and occupation measures.

use alloc::collections::{BTreeMap, VecDeque};
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Debug;

use thiserror::Error;

use crate::linalg::{solve_sparse, CsrMatrix, LinalgError};
use crate::rng::RngStream;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CtmcError {
    #[error("negative rate {rate} from {from} to {to}")]
    NegativeRate { from: String, to: String, rate: f64 },
    #[error("non-finite rate from {from} to {to}")]
    NonFiniteRate { from: String, to: String },
    #[error("chain is reducible: state #{to} cannot be reached from state #{from}")]
    Reducible { from: usize, to: usize },
    #[error("duplicate state label {0}")]
    DuplicateState(String),
    #[error("state {0} is not in the state space")]
    UnknownState(String),
    #[error("state space exceeds the limit of {0} states")]
    TooManyStates(usize),
    #[error("density m must be positive where the environment can move, got {value} at {state}")]
    NonPositiveDensity { state: String, value: f64 },
    #[error("empty averaging window: burn-in {burn} is not below end time {end}")]
    EmptyWindow { burn: f64, end: f64 },
    #[error("stationary solve failed: {0}")]
    Solve(#[from] LinalgError),
    #[error("{0}")]
    Kernel(String),
}

/// Jump rates out of each state of an enumerable chain.
pub trait RateKernel {
    type State: Clone + Ord + Debug;

    /// Appends every `(target, rate)` with `rate > 0` leaving `s`.
    /// Targets equal to `s` must not be produced.
    fn transitions(&self, s: &Self::State, out: &mut Vec<(Self::State, f64)>) -> Result<(), CtmcError>;

    /// Appends a superset of the states that can jump into `s`.
    ///
    /// Only needed for [`balance_residual`]. Duplicates are allowed.
    fn predecessors(&self, _s: &Self::State, _out: &mut Vec<Self::State>) -> Result<(), CtmcError> {
        Err(CtmcError::Kernel(String::from("kernel does not enumerate predecessors")))
    }

    fn rate(&self, s: &Self::State, t: &Self::State) -> Result<f64, CtmcError> {
        let mut out = Vec::new();
        self.transitions(s, &mut out)?;
        Ok(out.iter().filter(|(u, _)| u == t).map(|(_, r)| *r).sum())
    }

    fn exit_rate(&self, s: &Self::State) -> Result<f64, CtmcError> {
        let mut out = Vec::new();
        self.transitions(s, &mut out)?;
        Ok(out.iter().map(|(_, r)| *r).sum())
    }
}

impl<K: RateKernel + ?Sized> RateKernel for &K {
    type State = K::State;
    fn transitions(&self, s: &Self::State, out: &mut Vec<(Self::State, f64)>) -> Result<(), CtmcError> {
        (**self).transitions(s, out)
    }
    fn predecessors(&self, s: &Self::State, out: &mut Vec<Self::State>) -> Result<(), CtmcError> {
        (**self).predecessors(s, out)
    }
}

/// A kernel given by an explicit list of `(from, to, rate)` entries.
#[derive(Debug, Clone)]
pub struct TableKernel<S: Clone + Ord + Debug> {
    out: BTreeMap<S, Vec<(S, f64)>>,
    inc: BTreeMap<S, Vec<S>>,
}

impl<S: Clone + Ord + Debug> TableKernel<S> {
    pub fn new(entries: impl IntoIterator<Item = (S, S, f64)>) -> Result<Self, CtmcError> {
        let mut out: BTreeMap<S, Vec<(S, f64)>> = BTreeMap::new();
        let mut inc: BTreeMap<S, Vec<S>> = BTreeMap::new();
        for (a, b, r) in entries {
            check_rate(&a, &b, r)?;
            if a == b || r == 0.0 {
                continue;
            }
            inc.entry(b.clone()).or_default().push(a.clone());
            out.entry(a).or_default().push((b, r));
        }
        Ok(Self { out, inc })
    }
}

impl<S: Clone + Ord + Debug> RateKernel for TableKernel<S> {
    type State = S;
    fn transitions(&self, s: &S, out: &mut Vec<(S, f64)>) -> Result<(), CtmcError> {
        if let Some(v) = self.out.get(s) {
            out.extend(v.iter().cloned());
        }
        Ok(())
    }
    fn predecessors(&self, s: &S, out: &mut Vec<S>) -> Result<(), CtmcError> {
        if let Some(v) = self.inc.get(s) {
            out.extend(v.iter().cloned());
        }
        Ok(())
    }
}

fn check_rate<S: Debug>(a: &S, b: &S, r: f64) -> Result<(), CtmcError> {
    if !r.is_finite() {
        return Err(CtmcError::NonFiniteRate { from: format!("{a:?}"), to: format!("{b:?}") });
    }
    if r < 0.0 {
        return Err(CtmcError::NegativeRate { from: format!("{a:?}"), to: format!("{b:?}"), rate: r });
    }
    Ok(())
}

/// Ordered list of state labels with its inverse index.
#[derive(Debug, Clone)]
pub struct StateSpace<S: Clone + Ord> {
    states: Vec<S>,
    index: BTreeMap<S, usize>,
}

impl<S: Clone + Ord + Debug> StateSpace<S> {
    pub fn from_states(states: impl IntoIterator<Item = S>) -> Result<Self, CtmcError> {
        let states: Vec<S> = states.into_iter().collect();
        let mut index = BTreeMap::new();
        for (i, s) in states.iter().enumerate() {
            if index.insert(s.clone(), i).is_some() {
                return Err(CtmcError::DuplicateState(format!("{s:?}")));
            }
        }
        Ok(Self { states, index })
    }

    /// Breadth-first closure of `init` under the kernel, keeping only states
    /// accepted by `keep`.
    pub fn reachable<K: RateKernel<State = S>>(
        kernel: &K,
        init: impl IntoIterator<Item = S>,
        keep: impl Fn(&S) -> bool,
        max_states: usize,
    ) -> Result<Self, CtmcError> {
        let mut states = Vec::new();
        let mut index = BTreeMap::new();
        let mut queue = VecDeque::new();
        for s in init {
            if keep(&s) && !index.contains_key(&s) {
                index.insert(s.clone(), states.len());
                states.push(s.clone());
                queue.push_back(s);
            }
        }
        let mut buf = Vec::new();
        while let Some(s) = queue.pop_front() {
            buf.clear();
            kernel.transitions(&s, &mut buf)?;
            for (t, _) in buf.drain(..) {
                if keep(&t) && !index.contains_key(&t) {
                    if states.len() >= max_states {
                        return Err(CtmcError::TooManyStates(max_states));
                    }
                    index.insert(t.clone(), states.len());
                    states.push(t.clone());
                    queue.push_back(t);
                }
            }
        }
        Ok(Self { states, index })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[S] {
        &self.states
    }

    pub fn index_of(&self, s: &S) -> Option<usize> {
        self.index.get(s).copied()
    }

    pub fn label(&self, i: usize) -> &S {
        &self.states[i]
    }
}

/// Sparse generator: nonnegative off-diagonal rates, rows summing to zero.
#[derive(Debug, Clone)]
pub struct GeneratorMatrix {
    matrix: CsrMatrix,
}

impl GeneratorMatrix {
    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.n_rows()
    }

    pub fn max_row_sum(&self) -> f64 {
        (0..self.dim())
            .map(|i| self.matrix.row(i).map(|(_, v)| v).sum::<f64>().abs())
            .fold(0.0, f64::max)
    }

    /// `||pi Q||_inf`.
    pub fn residual(&self, pi: &[f64]) -> f64 {
        self.matrix.left_mul(pi).iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Generator on a finite state space, with the number of transitions that
/// left the space and were dropped.
#[derive(Debug, Clone)]
pub struct BuiltGenerator {
    pub generator: GeneratorMatrix,
    pub dropped: usize,
}

pub fn build_generator<K: RateKernel>(space: &StateSpace<K::State>, kernel: &K) -> Result<BuiltGenerator, CtmcError> {
    let n = space.len();
    let mut triplets = Vec::new();
    let mut dropped = 0usize;
    let mut buf = Vec::new();
    for (i, s) in space.states().iter().enumerate() {
        buf.clear();
        kernel.transitions(s, &mut buf)?;
        let mut diag = 0.0;
        for (t, r) in buf.drain(..) {
            check_rate(s, &t, r)?;
            if r == 0.0 || &t == s {
                continue;
            }
            match space.index_of(&t) {
                Some(j) => {
                    triplets.push((i, j, r));
                    diag -= r;
                }
                None => dropped += 1,
            }
        }
        triplets.push((i, i, diag));
    }
    Ok(BuiltGenerator { generator: GeneratorMatrix { matrix: CsrMatrix::from_triplets(n, n, &triplets) }, dropped })
}

/// Nonnegative weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVector {
    weights: Vec<f64>,
}

impl ProbabilityVector {
    /// Normalizes nonnegative weights.
    pub fn from_weights(mut weights: Vec<f64>) -> Option<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || weights.iter().any(|w| *w < 0.0 || !w.is_finite()) {
            return None;
        }
        weights.iter_mut().for_each(|w| *w /= total);
        Some(Self { weights })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn l1_distance(&self, other: &[f64]) -> f64 {
        self.weights.iter().zip(other).map(|(a, b)| (a - b).abs()).sum()
    }
}

#[derive(Debug, Clone)]
pub struct Stationary {
    pub pi: ProbabilityVector,
    /// `||pi Q||_inf` of the returned vector.
    pub residual: f64,
}

fn reach(q: &CsrMatrix, start: usize) -> Vec<bool> {
    let mut seen = vec![false; q.n_rows()];
    let mut stack = vec![start];
    seen[start] = true;
    while let Some(i) = stack.pop() {
        for (j, v) in q.row(i) {
            if j != i && v > 0.0 && !seen[j] {
                seen[j] = true;
                stack.push(j);
            }
        }
    }
    seen
}

/// Solves `pi Q = 0`, `sum pi = 1` by a sparse direct solve.
///
/// The system `Q^T x = 0` is made nonsingular by replacing one equation with
/// `x_0 = 1`; the result is then normalized and refined.
pub fn stationary_solve(q: &GeneratorMatrix) -> Result<Stationary, CtmcError> {
    let n = q.dim();
    if n == 0 {
        return Err(CtmcError::Kernel(String::from("empty state space")));
    }
    let fwd = reach(&q.matrix, 0);
    if let Some(j) = fwd.iter().position(|s| !s) {
        return Err(CtmcError::Reducible { from: 0, to: j });
    }
    let qt = q.matrix.transpose();
    let bwd = reach(&qt, 0);
    if let Some(j) = bwd.iter().position(|s| !s) {
        return Err(CtmcError::Reducible { from: j, to: 0 });
    }
    let pin = 0usize;
    let mut trip = Vec::with_capacity(qt.nnz());
    for i in 0..n {
        if i == pin {
            trip.push((i, i, 1.0));
        } else {
            trip.extend(qt.row(i).map(|(j, v)| (i, j, v)));
        }
    }
    let a = CsrMatrix::from_triplets(n, n, &trip);
    let mut b = vec![0.0; n];
    b[pin] = 1.0;
    let x = solve_sparse(&a, &b)?;
    let weights: Vec<f64> = x.iter().map(|v| v.max(0.0)).collect();
    let pi = ProbabilityVector::from_weights(weights)
        .ok_or_else(|| CtmcError::Kernel(String::from("stationary solve produced no positive mass")))?;
    let residual = q.residual(pi.as_slice());
    Ok(Stationary { pi, residual })
}

/// Outflow and inflow of probability mass at one state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BalanceFlows {
    pub out_flow: f64,
    pub in_flow: f64,
}

impl BalanceFlows {
    pub fn residual(&self) -> f64 {
        self.out_flow - self.in_flow
    }
}

/// `F_out(s) = nu(s) sum_t rate(s, t)` and `F_in(s) = sum_t nu(t) rate(t, s)`,
/// computed from the kernel directly, so no truncation is involved.
pub fn balance_flows<K: RateKernel>(
    nu: impl Fn(&K::State) -> f64,
    kernel: &K,
    s: &K::State,
) -> Result<BalanceFlows, CtmcError> {
    let out_flow = nu(s) * kernel.exit_rate(s)?;
    let mut preds = Vec::new();
    kernel.predecessors(s, &mut preds)?;
    preds.sort();
    preds.dedup();
    let mut in_flow = 0.0;
    let mut buf = Vec::new();
    for p in preds.iter().filter(|p| *p != s) {
        buf.clear();
        kernel.transitions(p, &mut buf)?;
        let r: f64 = buf.iter().filter(|(t, _)| t == s).map(|(_, r)| *r).sum();
        if r > 0.0 {
            in_flow += nu(p) * r;
        }
    }
    Ok(BalanceFlows { out_flow, in_flow })
}

pub fn balance_residual<K: RateKernel>(
    nu: impl Fn(&K::State) -> f64,
    kernel: &K,
    s: &K::State,
) -> Result<f64, CtmcError> {
    Ok(balance_flows(nu, kernel, s)?.residual())
}

/// `(R f)(s) = sum_t rate(s, t) (f(t) - f(s))`.
pub fn generator_action<K: RateKernel>(kernel: &K, f: impl Fn(&K::State) -> f64, s: &K::State) -> Result<f64, CtmcError> {
    let mut buf = Vec::new();
    kernel.transitions(s, &mut buf)?;
    let fs = f(s);
    Ok(buf.iter().map(|(t, r)| r * (f(t) - fs)).sum())
}

/// Base dynamics indexed by the environment: `Q^(z)(x, x')`.
pub trait BaseFamily {
    type Env: Clone + Ord + Debug;
    type Base: Clone + Ord + Debug;
    fn base_transitions(&self, z: &Self::Env, x: &Self::Base, out: &mut Vec<(Self::Base, f64)>) -> Result<(), CtmcError>;
    fn base_predecessors(&self, z: &Self::Env, x: &Self::Base, out: &mut Vec<Self::Base>) -> Result<(), CtmcError>;
}

/// Environment dynamics indexed by the base state: `tau^(x)(z, z')`.
pub trait EnvFamily {
    type Env: Clone + Ord + Debug;
    type Base: Clone + Ord + Debug;
    fn env_transitions(&self, x: &Self::Base, z: &Self::Env, out: &mut Vec<(Self::Env, f64)>) -> Result<(), CtmcError>;
    fn env_predecessors(&self, x: &Self::Base, z: &Self::Env, out: &mut Vec<Self::Env>) -> Result<(), CtmcError>;
}

/// Combined kernel on `(z, x)`: base moves at `alpha(z) Q^(z)(x, x')`,
/// environment moves at `sigma(z) tau^(x)(z, z') / m(z, x)`.
pub struct CombinedJumpKernel<B, E, M, A, S> {
    pub base: B,
    pub env: E,
    pub m: M,
    pub alpha: A,
    pub sigma: S,
}

impl<B, E, M, A, S> RateKernel for CombinedJumpKernel<B, E, M, A, S>
where
    B: BaseFamily,
    E: EnvFamily<Env = B::Env, Base = B::Base>,
    M: Fn(&B::Env, &B::Base) -> f64,
    A: Fn(&B::Env) -> f64,
    S: Fn(&B::Env) -> f64,
{
    type State = (B::Env, B::Base);

    fn transitions(&self, s: &Self::State, out: &mut Vec<(Self::State, f64)>) -> Result<(), CtmcError> {
        let (z, x) = s;
        let a = (self.alpha)(z);
        if a > 0.0 {
            let mut xs = Vec::new();
            self.base.base_transitions(z, x, &mut xs)?;
            for (x2, r) in xs {
                if r > 0.0 && &x2 != x {
                    out.push(((z.clone(), x2), a * r));
                }
            }
        }
        let mut zs = Vec::new();
        self.env.env_transitions(x, z, &mut zs)?;
        if zs.iter().any(|(z2, r)| *r > 0.0 && z2 != z) {
            let m = (self.m)(z, x);
            if !(m > 0.0) || !m.is_finite() {
                return Err(CtmcError::NonPositiveDensity { state: format!("{s:?}"), value: m });
            }
            let sg = (self.sigma)(z);
            for (z2, t) in zs {
                if t > 0.0 && &z2 != z {
                    out.push(((z2, x.clone()), sg * t / m));
                }
            }
        }
        Ok(())
    }

    fn predecessors(&self, s: &Self::State, out: &mut Vec<Self::State>) -> Result<(), CtmcError> {
        let (z, x) = s;
        let mut xs = Vec::new();
        self.base.base_predecessors(z, x, &mut xs)?;
        out.extend(xs.into_iter().map(|x2| (z.clone(), x2)));
        let mut zs = Vec::new();
        self.env.env_predecessors(x, z, &mut zs)?;
        out.extend(zs.into_iter().map(|z2| (z2, x.clone())));
        Ok(())
    }
}

/// Jump-chain sample path: `(time, state)` events starting at time 0.
#[derive(Debug, Clone)]
pub struct Trajectory<S> {
    pub events: Vec<(f64, S)>,
    pub t_end: f64,
    /// True when the event budget ran out before `t_end`; the path is then
    /// truncated at the last event and may indicate explosion.
    pub budget_exhausted: bool,
}

pub const DEFAULT_MAX_EVENTS: usize = 10_000_000;

/// Exact stochastic simulation of the chain up to `t_end`.
pub fn gillespie_simulate<K: RateKernel>(
    kernel: &K,
    init: K::State,
    t_end: f64,
    rng: &mut RngStream,
    max_events: usize,
) -> Result<Trajectory<K::State>, CtmcError> {
    let mut events = vec![(0.0, init.clone())];
    let mut s = init;
    let mut t = 0.0;
    let mut buf = Vec::new();
    let mut budget_exhausted = false;
    loop {
        buf.clear();
        kernel.transitions(&s, &mut buf)?;
        let total: f64 = buf.iter().map(|(_, r)| *r).sum();
        if !(total > 0.0) {
            break;
        }
        t += rng.exp1() / total;
        if t >= t_end {
            break;
        }
        if events.len() > max_events {
            budget_exhausted = true;
            let last = events.last().map(|e| e.0).unwrap_or(0.0);
            return Ok(Trajectory { events, t_end: last, budget_exhausted });
        }
        let mut u = rng.uniform() * total;
        let mut pick = buf.len() - 1;
        for (k, (_, r)) in buf.iter().enumerate() {
            if u < *r {
                pick = k;
                break;
            }
            u -= *r;
        }
        s = buf.swap_remove(pick).0;
        events.push((t, s.clone()));
    }
    Ok(Trajectory { events, t_end, budget_exhausted })
}

/// Time-weighted fractions of `[t_burn, t_end]` spent in each state.
pub fn occupation_measure<S: Clone + Ord>(traj: &Trajectory<S>, t_burn: f64) -> Result<BTreeMap<S, f64>, CtmcError> {
    if !(t_burn < traj.t_end) {
        return Err(CtmcError::EmptyWindow { burn: t_burn, end: traj.t_end });
    }
    let mut occ: BTreeMap<S, f64> = BTreeMap::new();
    for (k, (t0, s)) in traj.events.iter().enumerate() {
        let t1 = traj.events.get(k + 1).map(|e| e.0).unwrap_or(traj.t_end);
        let d = t1.min(traj.t_end) - t0.max(t_burn);
        if d > 0.0 {
            *occ.entry(s.clone()).or_insert(0.0) += d;
        }
    }
    let span = traj.t_end - t_burn;
    occ.values_mut().for_each(|v| *v /= span);
    Ok(occ)
}
