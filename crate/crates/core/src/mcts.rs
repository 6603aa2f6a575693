//! Partially observable UCT over a generative model.
//!
//! The tree alternates action nodes and observation branches. Each simulation draws a root state
//! from the belief, descends with UCB1, adds one new history node and estimates its value with
//! the model's rollout policy.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// A black-box simulator with a finite, state-independent action list.
pub trait GenerativeModel: Sync {
    type State: Clone;

    fn num_actions(&self) -> usize;

    /// Draw a full state from the current belief.
    fn sample_state(&self, rng: &mut ChaCha8Rng) -> Option<Self::State>;

    /// Returns `(next state, observation key, reward, terminal)`.
    fn step(&self, s: &Self::State, action: usize, rng: &mut ChaCha8Rng) -> (Self::State, u64, f64, bool);

    fn rollout_action(&self, s: &Self::State, rng: &mut ChaCha8Rng) -> usize;
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SearchParams {
    pub num_sims: usize,
    pub max_depth: usize,
    pub exploration: f64,
    pub discount: f64,
    /// Independent trees searched in parallel and merged at the root.
    pub workers: usize,
}

impl Default for SearchParams {
    fn default() -> Self {
        Self { num_sims: 500, max_depth: 10, exploration: 200.0, discount: 0.95, workers: 1 }
    }
}

/// Root statistics of a finished search.
#[derive(Clone, Debug, PartialEq)]
pub struct SearchResult<S> {
    pub best: usize,
    pub visits: Vec<u32>,
    pub values: Vec<f64>,
    /// Next states produced by each root action, kept up to a per-action cap.
    pub root_successors: Vec<Vec<S>>,
}

const SUCCESSOR_CAP: usize = 256;

#[derive(Default)]
struct ActionStats {
    visits: u32,
    value: f64,
    children: Vec<(u64, usize)>,
}

struct HistoryNode {
    visits: u32,
    actions: Vec<ActionStats>,
}

struct Tree<'m, M: GenerativeModel> {
    model: &'m M,
    params: SearchParams,
    nodes: Vec<HistoryNode>,
    successors: Vec<Vec<M::State>>,
}

impl<'m, M: GenerativeModel> Tree<'m, M> {
    fn new(model: &'m M, params: SearchParams) -> Self {
        let n = model.num_actions();
        let mut t = Self { model, params, nodes: Vec::new(), successors: vec![Vec::new(); n] };
        t.add_node();
        t
    }

    fn add_node(&mut self) -> usize {
        let n = self.model.num_actions();
        self.nodes.push(HistoryNode { visits: 0, actions: (0..n).map(|_| ActionStats::default()).collect() });
        self.nodes.len() - 1
    }

    fn select(&self, node: usize) -> usize {
        let h = &self.nodes[node];
        if let Some(a) = h.actions.iter().position(|a| a.visits == 0) {
            return a;
        }
        let ln = (h.visits as f64).ln();
        let mut best = 0;
        let mut best_v = f64::NEG_INFINITY;
        for (i, a) in h.actions.iter().enumerate() {
            let v = a.value + self.params.exploration * (ln / a.visits as f64).sqrt();
            if v > best_v {
                best_v = v;
                best = i;
            }
        }
        best
    }

    fn simulate(&mut self, s: &M::State, node: usize, depth: usize, rng: &mut ChaCha8Rng) -> f64 {
        if depth >= self.params.max_depth {
            return 0.0;
        }
        let a = self.select(node);
        let (next, obs, r, terminal) = self.model.step(s, a, rng);
        if depth == 0 && self.successors[a].len() < SUCCESSOR_CAP {
            self.successors[a].push(next.clone());
        }
        let total = if terminal {
            r
        } else {
            let child = self.nodes[node].actions[a].children.iter().find(|(o, _)| *o == obs).map(|(_, c)| *c);
            match child {
                Some(c) => r + self.params.discount * self.simulate(&next, c, depth + 1, rng),
                None => {
                    let c = self.add_node();
                    self.nodes[node].actions[a].children.push((obs, c));
                    r + self.params.discount * self.rollout(&next, depth + 1, rng)
                }
            }
        };
        let h = &mut self.nodes[node];
        h.visits += 1;
        let st = &mut h.actions[a];
        st.visits += 1;
        st.value += (total - st.value) / st.visits as f64;
        total
    }

    fn rollout(&self, s: &M::State, depth: usize, rng: &mut ChaCha8Rng) -> f64 {
        let mut s = s.clone();
        let mut total = 0.0;
        let mut discount = 1.0;
        for _ in depth..self.params.max_depth {
            let a = self.model.rollout_action(&s, rng);
            let (next, _, r, terminal) = self.model.step(&s, a, rng);
            total += discount * r;
            if terminal {
                break;
            }
            discount *= self.params.discount;
            s = next;
        }
        total
    }
}

fn search_one<M: GenerativeModel>(model: &M, params: SearchParams, sims: usize, seed: u64) -> Option<(Vec<u32>, Vec<f64>, Vec<Vec<M::State>>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tree = Tree::new(model, params);
    for _ in 0..sims {
        let s = model.sample_state(&mut rng)?;
        tree.simulate(&s, 0, 0, &mut rng);
    }
    let root = &tree.nodes[0];
    Some((
        root.actions.iter().map(|a| a.visits).collect(),
        root.actions.iter().map(|a| a.value).collect(),
        tree.successors,
    ))
}

/// Run the search and return root statistics, or `None` when the model has no actions or its
/// belief cannot be sampled.
pub fn search<M, R>(model: &M, params: &SearchParams, rng: &mut R) -> Option<SearchResult<M::State>>
where
    M: GenerativeModel,
    M::State: Send,
    R: Rng + ?Sized,
{
    let n = model.num_actions();
    if n == 0 || params.num_sims == 0 {
        return None;
    }
    let workers = params.workers.max(1);
    let seeds: Vec<u64> = (0..workers).map(|_| rng.gen()).collect();
    let parts: Vec<_> = if workers == 1 {
        vec![search_one(model, *params, params.num_sims, seeds[0])?]
    } else {
        let share = |i: usize| params.num_sims / workers + usize::from(i < params.num_sims % workers);
        seeds
            .par_iter()
            .enumerate()
            .map(|(i, &seed)| search_one(model, *params, share(i), seed))
            .collect::<Option<Vec<_>>>()?
    };
    let mut visits = vec![0u32; n];
    let mut weighted = vec![0.0f64; n];
    let mut root_successors: Vec<Vec<M::State>> = vec![Vec::new(); n];
    for (v, q, succ) in parts {
        for a in 0..n {
            visits[a] += v[a];
            weighted[a] += v[a] as f64 * q[a];
        }
        for (a, s) in succ.into_iter().enumerate() {
            root_successors[a].extend(s);
        }
    }
    let values: Vec<f64> = weighted.iter().zip(&visits).map(|(w, v)| if *v > 0 { w / *v as f64 } else { 0.0 }).collect();
    let mut best = 0;
    for a in 1..n {
        if visits[a] > visits[best] || (visits[a] == visits[best] && values[a] > values[best]) {
            best = a;
        }
    }
    Some(SearchResult { best, visits, values, root_successors })
}
