//! Recursive neural-guided tree search over a program hierarchy.
//!
//! One tree executes one program: nodes are environment states, edges are
//! actions among the legal child programs. Selection maximises `Q + U + L`
//! where `U` is the prior-weighted exploration bonus and `L` a level-proximity
//! bonus. Expanding a leaf evaluates the network once for priors and a value.
//! Choosing a non-atomic action builds a fresh tree for that program in
//! exploitation mode (the environment scope and the interpreter state push
//! and pop around it); a sub-program that fails its post-condition aborts the
//! entire outer search and the episode's data is discarded.
//!
//! Backed-up values keep a per-edge list; the action value is their
//! softmax-weighted mean, which leans toward the best observed outcome —
//! fitting a deterministic single-agent environment.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::env::{legal_actions, Environment, Observation, ProgramId};
use crate::net::{InterpreterState, NpiParams};
use crate::nn::argmax_tie_lowest;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SearchMode {
    /// High simulation budget, Dirichlet noise on priors, sampled actions.
    Exploration,
    /// Low budget, no noise, argmax actions: fully deterministic.
    Exploitation,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchConfig {
    pub c_puct: f64,
    pub c_level: f64,
    pub epsilon_dirichlet: f64,
    pub alpha_dirichlet: f64,
    /// Temperature on backed-up values in the Q estimate (tau_1).
    pub tau_q: f64,
    /// Exponent on visit counts in the tree policy (tau_2).
    pub tau_policy: f64,
    pub gamma: f64,
    pub n_simulations: usize,
    pub n_simulations_exploit: usize,
    /// Per-search depth limit; `None` asks the environment for its default.
    pub max_depth: Option<usize>,
    /// Replace sub-program execution with the environment oracle.
    pub teacher_forcing: bool,
    /// Subtracted from in-tree terminal rewards when a recursive program
    /// solves its task without ever calling itself, steering the search
    /// toward recursive executions.
    pub recursion_penalty: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            c_puct: 0.5,
            c_level: 3.0,
            epsilon_dirichlet: 0.25,
            alpha_dirichlet: 0.03,
            tau_q: 1.0,
            tau_policy: 1.3,
            gamma: 0.97,
            n_simulations: 200,
            n_simulations_exploit: 5,
            max_depth: None,
            teacher_forcing: false,
            recursion_penalty: 0.9,
        }
    }
}

/// One executed step of a program's trace.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceStep {
    pub observation: Observation,
    /// Program whose tree produced this step.
    pub program: ProgramId,
    /// Interpreter state before consuming the observation.
    pub state: InterpreterState,
    /// Visit-count policy over the full action space.
    pub pi_mcts: Vec<f64>,
    pub action: ProgramId,
    pub depth: usize,
    /// Executed sub-program run, when the action was non-atomic.
    pub sub_trace: Option<Box<SearchResult>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchResult {
    pub program: ProgramId,
    pub trace: Vec<TraceStep>,
    /// Undiscounted-by-shaping terminal reward: `gamma^n` on success, -1 on
    /// failure. Recursion-penalty shaping happens in the trainer.
    pub final_reward: f64,
    pub success: bool,
    /// A sub-program failed its post-condition somewhere below: the whole
    /// trace is invalid for training.
    pub aborted: bool,
    /// Sub-trees constructed during this search, nested ones included.
    pub sub_searches_built: usize,
}

impl SearchResult {
    fn failed(program: ProgramId, trace: Vec<TraceStep>, aborted: bool, built: usize) -> Self {
        Self {
            program,
            trace,
            final_reward: -1.0,
            success: false,
            aborted,
            sub_searches_built: built,
        }
    }
}

struct Edge<S> {
    action: ProgramId,
    prior: f64,
    visits: u64,
    q: f64,
    backed_values: Vec<f64>,
    /// Incremental softmax accumulators over `backed_values`; sound because
    /// every backed value lies in [-1, 1].
    sum_exp: f64,
    sum_exp_weighted: f64,
    child: Option<Box<Node<S>>>,
    sub_result: Option<Box<SearchResult>>,
}

impl<S> Edge<S> {
    fn new(action: ProgramId, prior: f64) -> Self {
        Self {
            action,
            prior,
            visits: 0,
            q: 0.0,
            backed_values: Vec::new(),
            sum_exp: 0.0,
            sum_exp_weighted: 0.0,
            child: None,
            sub_result: None,
        }
    }

    fn record(&mut self, value: f64, tau_q: f64) {
        self.backed_values.push(value);
        self.visits += 1;
        let e = (tau_q * value).exp();
        self.sum_exp += e;
        self.sum_exp_weighted += e * value;
        self.q = self.sum_exp_weighted / self.sum_exp;
    }
}

struct Expansion<S> {
    state_out: InterpreterState,
    edges: Vec<Edge<S>>,
}

struct Node<S> {
    snapshot: S,
    observation: Observation,
    /// Actions from episode start to reach this node.
    depth: usize,
    /// Whether a recursive self-call occurred on the path from episode start.
    recursed: bool,
    state_in: InterpreterState,
    expansion: Option<Expansion<S>>,
}

impl<S> Node<S> {
    fn new(
        snapshot: S,
        observation: Observation,
        depth: usize,
        recursed: bool,
        state_in: InterpreterState,
    ) -> Self {
        Self {
            snapshot,
            observation,
            depth,
            recursed,
            state_in,
            expansion: None,
        }
    }
}

enum Backed {
    Value(f64),
    Aborted,
}

/// Per-search constants threaded through the simulation recursion.
struct SimCtx {
    program: ProgramId,
    current_level: u32,
    program_recursive: bool,
    levels: Vec<u32>,
    stop: ProgramId,
    mode: SearchMode,
    max_depth: usize,
}

/// Reward observed at a STOP taken as the `n`-th action: the discounted
/// success reward minus the recursion penalty when a recursive program
/// finished without a self-call, or -1 on failure.
pub fn terminal_value(
    success: bool,
    n: usize,
    gamma: f64,
    program_recursive: bool,
    recursed: bool,
    recursion_penalty: f64,
) -> f64 {
    if !success {
        return -1.0;
    }
    let discounted = gamma.powi(n as i32);
    if program_recursive && !recursed {
        discounted - recursion_penalty
    } else {
        discounted
    }
}

/// Exploration-bonus term: `c_puct * P(e,a) * sqrt(sum_b N(e,b)) / (1 + N(e,a))`.
pub fn compute_u(c_puct: f64, prior: f64, edge_visits: u64, total_visits: u64) -> f64 {
    c_puct * prior * (total_visits as f64).sqrt() / (1.0 + edge_visits as f64)
}

/// Level-proximity term: `c_level * exp(-1)` for STOP or a same-level call,
/// otherwise `c_level * exp(-(level(current) - level(action)))`.
pub fn compute_l(c_level: f64, current_level: u32, action_level: u32, action_is_stop: bool) -> f64 {
    if action_is_stop || action_level == current_level {
        c_level * (-1.0f64).exp()
    } else {
        c_level * (-(current_level as f64 - action_level as f64)).exp()
    }
}

/// Softmax-weighted mean of a backed-value list (the Q estimate).
pub fn softmax_weighted_q(values: &[f64], tau_q: f64) -> f64 {
    assert!(!values.is_empty());
    let weights = crate::nn::softmax(values, tau_q);
    values.iter().zip(weights.iter()).map(|(v, w)| v * w).sum()
}

/// Visit-count policy over the full action space:
/// `pi(a) = N(e,a)^tau / sum_b N(e,b)^tau`, zero for actions outside the tree.
pub fn tree_policy_from_counts(
    actions: &[(ProgramId, u64)],
    tau_policy: f64,
    n_actions: usize,
) -> Result<Vec<f64>> {
    let mut pi = vec![0.0; n_actions];
    let mut total = 0.0;
    for (a, n) in actions {
        let w = (*n as f64).powf(tau_policy);
        pi[*a] = w;
        total += w;
    }
    if total <= 0.0 {
        return Err(Error::Usage(
            "tree policy requested with zero total visits".to_string(),
        ));
    }
    for p in pi.iter_mut() {
        *p /= total;
    }
    Ok(pi)
}

/// Mixes Dirichlet noise into priors: `P <- (1-eps)P + eps*eta`,
/// `eta ~ Dir(alpha)`, sampled as normalized Gammas.
pub fn add_dirichlet_noise(priors: &mut [f64], epsilon: f64, alpha: f64, rng: &mut ChaCha8Rng) {
    if epsilon == 0.0 || priors.is_empty() {
        return;
    }
    let gamma = Gamma::new(alpha, 1.0).expect("alpha > 0");
    let mut eta: Vec<f64> = priors.iter().map(|_| gamma.sample(rng)).collect();
    let sum: f64 = eta.iter().sum();
    if sum > 0.0 && sum.is_finite() {
        eta.iter_mut().for_each(|v| *v /= sum);
    } else {
        // Tiny alphas can underflow to an all-zero sample.
        eta.iter_mut().for_each(|v| *v = 1.0 / priors.len() as f64);
    }
    for (p, n) in priors.iter_mut().zip(eta.iter()) {
        *p = (1.0 - epsilon) * *p + epsilon * n;
    }
}

pub struct Searcher<'a> {
    pub net: &'a NpiParams,
    pub config: &'a SearchConfig,
}

impl<'a> Searcher<'a> {
    pub fn new(net: &'a NpiParams, config: &'a SearchConfig) -> Self {
        Self { net, config }
    }

    /// Executes `program` by repeated search-and-move until STOP or the depth
    /// limit. The task scope is pushed here and popped on return, so a
    /// recursive self-call shrinks the environment exactly once.
    pub fn run_search<E: Environment>(
        &self,
        env: &mut E,
        program: ProgramId,
        mode: SearchMode,
        rng: &mut ChaCha8Rng,
    ) -> Result<SearchResult> {
        env.start_task(program)?;
        let result = self.search_loop(env, program, mode, rng);
        env.end_task()?;
        result
    }

    fn search_loop<E: Environment>(
        &self,
        env: &mut E,
        program: ProgramId,
        mode: SearchMode,
        rng: &mut ChaCha8Rng,
    ) -> Result<SearchResult> {
        let ctx = SimCtx {
            program,
            current_level: env.library().level(program),
            program_recursive: env.library().get(program).recursive,
            levels: env.library().programs.iter().map(|p| p.level).collect(),
            stop: env.library().stop_id(),
            mode,
            max_depth: self
                .config
                .max_depth
                .unwrap_or_else(|| env.default_max_depth()),
        };
        let n_simu = match mode {
            SearchMode::Exploration => self.config.n_simulations,
            SearchMode::Exploitation => self.config.n_simulations_exploit,
        };
        let stop = ctx.stop;
        let max_depth = ctx.max_depth;
        let mut built = 0usize;
        let mut root = Box::new(Node::new(
            env.snapshot(),
            env.observe(),
            0,
            false,
            self.net.zero_state(),
        ));
        let mut trace: Vec<TraceStep> = Vec::new();

        loop {
            for _ in 0..n_simu {
                env.restore(&root.snapshot);
                match self.simulate(&mut root, env, &ctx, rng, &mut built)? {
                    Backed::Value(_) => {}
                    Backed::Aborted => {
                        return Ok(SearchResult::failed(program, trace, true, built));
                    }
                }
            }
            let expansion = root
                .expansion
                .as_ref()
                .ok_or_else(|| Error::Usage("root unexpanded after simulations".to_string()))?;
            let counts: Vec<(ProgramId, u64)> = expansion
                .edges
                .iter()
                .map(|e| (e.action, e.visits))
                .collect();
            let pi_mcts =
                tree_policy_from_counts(&counts, self.config.tau_policy, self.net.n_programs())?;
            let action = match mode {
                SearchMode::Exploration => sample_index(&pi_mcts, rng),
                SearchMode::Exploitation => argmax_tie_lowest(&pi_mcts),
            };
            trace.push(TraceStep {
                observation: root.observation.clone(),
                program,
                state: root.state_in.clone(),
                pi_mcts,
                action,
                depth: root.depth,
                sub_trace: None,
            });
            let trace_len = trace.len();
            if trace_len >= max_depth {
                return Ok(SearchResult::failed(program, trace, false, built));
            }
            if action == stop {
                env.restore(&root.snapshot);
                let success = env.postcondition(program);
                let reward = if success {
                    self.config.gamma.powi(trace_len as i32)
                } else {
                    -1.0
                };
                return Ok(SearchResult {
                    program,
                    trace,
                    final_reward: reward,
                    success,
                    aborted: false,
                    sub_searches_built: built,
                });
            }
            // Re-root on the chosen edge, keeping its subtree.
            let expansion = root.expansion.as_mut().unwrap();
            let edge = expansion
                .edges
                .iter_mut()
                .find(|e| e.action == action)
                .ok_or_else(|| Error::Usage("chosen action has no edge".to_string()))?;
            trace.last_mut().unwrap().sub_trace = edge.sub_result.take();
            let child = edge
                .child
                .take()
                .ok_or_else(|| Error::Usage("chosen action was never traversed".to_string()))?;
            root = child;
            env.restore(&root.snapshot);
        }
    }

    /// One simulation from `node`; the environment must be at `node`'s state.
    fn simulate<E: Environment>(
        &self,
        node: &mut Node<E::Snap>,
        env: &mut E,
        ctx: &SimCtx,
        rng: &mut ChaCha8Rng,
        built: &mut usize,
    ) -> Result<Backed> {
        if node.expansion.is_none() {
            // Expand and evaluate: children are the legal actions, priors the
            // masked and renormalized network policy.
            let legal = legal_actions(env, ctx.program);
            debug_assert!(!legal.is_empty(), "STOP must always be legal");
            let out = self
                .net
                .forward(&node.observation, ctx.program, &node.state_in)?;
            let mut priors: Vec<f64> = legal.iter().map(|&a| out.pi[a]).collect();
            let sum: f64 = priors.iter().sum();
            if sum > 0.0 {
                priors.iter_mut().for_each(|p| *p /= sum);
            } else {
                priors
                    .iter_mut()
                    .for_each(|p| *p = 1.0 / legal.len() as f64);
            }
            if ctx.mode == SearchMode::Exploration {
                add_dirichlet_noise(
                    &mut priors,
                    self.config.epsilon_dirichlet,
                    self.config.alpha_dirichlet,
                    rng,
                );
            }
            node.expansion = Some(Expansion {
                state_out: out.next_state,
                edges: legal
                    .iter()
                    .zip(priors.iter())
                    .map(|(&a, &p)| Edge::new(a, p))
                    .collect(),
            });
            return Ok(Backed::Value(out.value));
        }

        let depth = node.depth;
        let node_recursed = node.recursed;
        let expansion = node.expansion.as_mut().unwrap();
        let edge_idx = select_edge(
            &expansion.edges,
            self.config,
            ctx.current_level,
            &ctx.levels,
            ctx.stop,
        );
        let state_out = expansion.state_out.clone();
        let edge = &mut expansion.edges[edge_idx];
        let new_depth = depth + 1;

        // The depth cap precedes the STOP test, mirroring the move loop.
        if new_depth >= ctx.max_depth {
            edge.record(-1.0, self.config.tau_q);
            return Ok(Backed::Value(-1.0));
        }
        if edge.action == ctx.stop {
            let success = env.postcondition(ctx.program);
            let value = terminal_value(
                success,
                new_depth,
                self.config.gamma,
                ctx.program_recursive,
                node_recursed,
                self.config.recursion_penalty,
            );
            edge.record(value, self.config.tau_q);
            return Ok(Backed::Value(value));
        }

        match edge.child.as_ref() {
            None => {
                // First traversal: apply the action for real, then cache the
                // resulting state. Later traversals restore the snapshot.
                if ctx.levels[edge.action] == 0 {
                    env.apply_atomic(edge.action)?;
                } else if self.config.teacher_forcing {
                    env.oracle_apply(edge.action)?;
                } else {
                    *built += 1;
                    let sub = self.run_search(env, edge.action, SearchMode::Exploitation, rng)?;
                    *built += sub.sub_searches_built;
                    if sub.aborted || !sub.success {
                        return Ok(Backed::Aborted);
                    }
                    edge.sub_result = Some(Box::new(sub));
                }
                edge.child = Some(Box::new(Node::new(
                    env.snapshot(),
                    env.observe(),
                    new_depth,
                    node_recursed || edge.action == ctx.program,
                    state_out,
                )));
            }
            Some(child) => env.restore(&child.snapshot),
        }

        let child = edge.child.as_mut().expect("child materialized above");
        match self.simulate(child, env, ctx, rng, built)? {
            Backed::Aborted => Ok(Backed::Aborted),
            Backed::Value(v) => {
                edge.record(v, self.config.tau_q);
                Ok(Backed::Value(v))
            }
        }
    }
}

/// Edge maximizing `Q + U + L`; exact ties resolve to the lowest action index
/// (edges are kept in ascending action order).
fn select_edge<S>(
    edges: &[Edge<S>],
    config: &SearchConfig,
    current_level: u32,
    levels: &[u32],
    stop: ProgramId,
) -> usize {
    let total: u64 = edges.iter().map(|e| e.visits).sum();
    let scores: Vec<f64> = edges
        .iter()
        .map(|e| {
            e.q + compute_u(config.c_puct, e.prior, e.visits, total)
                + compute_l(
                    config.c_level,
                    current_level,
                    levels[e.action],
                    e.action == stop,
                )
        })
        .collect();
    argmax_tie_lowest(&scores)
}

/// Samples an index from a probability vector.
fn sample_index(pi: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let draw: f64 = rng.random_range(0.0..1.0);
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in pi.iter().enumerate() {
        if p > 0.0 {
            last_positive = i;
            acc += p;
            if draw < acc {
                return i;
            }
        }
    }
    last_positive
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::hanoi::HanoiEnv;
    use crate::env::sorting::{SortEnv, SortMode};
    use crate::env::Environment;
    use crate::net::NetDims;
    use rand::SeedableRng;

    fn cfg() -> SearchConfig {
        SearchConfig::default()
    }

    #[test]
    fn u_term_hand_examples() {
        assert!((compute_u(0.5, 0.5, 0, 4) - 0.5).abs() < 1e-12);
        assert_eq!(compute_u(0.5, 0.9, 0, 0), 0.0);
        let u1 = compute_u(0.5, 0.3, 2, 16);
        let u2 = compute_u(0.5, 0.3, 4, 16);
        assert!(u2 < u1, "U must decrease with edge visits");
    }

    #[test]
    fn l_term_hand_examples() {
        assert!((compute_l(3.0, 2, 2, false) - 1.1036).abs() < 1e-4);
        assert!((compute_l(3.0, 3, 1, false) - 0.4060).abs() < 1e-4);
        assert!((compute_l(3.0, 3, 0, true) - 1.1036).abs() < 1e-4);
    }

    #[test]
    fn q_backup_hand_examples() {
        assert!((softmax_weighted_q(&[0.5, 1.0], 1.0) - 0.8112).abs() < 1e-4);
        assert_eq!(softmax_weighted_q(&[0.42], 1.0), 0.42);
        let gamma: f64 = 0.97;
        assert!((gamma.powi(5) - 0.8587).abs() < 1e-4);
    }

    #[test]
    fn incremental_q_matches_recomputation() {
        let mut edge: Edge<()> = Edge::new(0, 1.0);
        let values = [0.3, -1.0, 0.97, 0.5, 0.5, -0.2];
        for v in values {
            edge.record(v, 1.0);
        }
        let expect = softmax_weighted_q(&values, 1.0);
        assert!((edge.q - expect).abs() < 1e-9);
        assert_eq!(edge.visits, values.len() as u64);
        assert_eq!(edge.backed_values, values.to_vec());
    }

    #[test]
    fn tree_policy_hand_examples() {
        let pi = tree_policy_from_counts(&[(0, 1), (1, 3)], 1.0, 4).unwrap();
        assert!((pi[0] - 0.25).abs() < 1e-12);
        assert!((pi[1] - 0.75).abs() < 1e-12);
        assert_eq!(pi[2], 0.0);

        let pi = tree_policy_from_counts(&[(0, 1), (1, 3)], 1.3, 2).unwrap();
        assert!((pi[0] - 0.1934).abs() < 1e-4);
        assert!((pi[1] - 0.8066).abs() < 1e-4);

        let pi = tree_policy_from_counts(&[(3, 7)], 1.3, 5).unwrap();
        assert_eq!(pi[3], 1.0);

        assert!(tree_policy_from_counts(&[(0, 0)], 1.0, 2).is_err());
    }

    #[test]
    fn dirichlet_noise_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = vec![0.5, 0.3, 0.2];
        let orig = p.clone();
        add_dirichlet_noise(&mut p, 0.0, 0.5, &mut rng);
        assert_eq!(p, orig, "epsilon 0 leaves priors unchanged");

        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut p = vec![0.5, 0.3, 0.2];
            add_dirichlet_noise(&mut p, 0.25, 0.3, &mut rng);
            let sum: f64 = p.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            // Mixture bound: each output >= 0.75 * input.
            assert!(p[2] >= 0.75 * 0.2 - 1e-12);
        }
    }

    fn hanoi_setup(n: usize) -> (HanoiEnv, NpiParams) {
        let env = HanoiEnv::new(n);
        let dims = NetDims {
            observation_dim: env.observation_dim(),
            encoder_hidden: 16,
            encoding_dim: 8,
            program_embedding: 12,
            lstm_hidden: 16,
            n_programs: env.library().len(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let params = NpiParams::init(dims, 1e-4, &mut rng);
        (env, params)
    }

    #[test]
    fn exploitation_search_is_deterministic() {
        let (mut env, params) = hanoi_setup(1);
        let config = cfg();
        let searcher = Searcher::new(&params, &config);
        let toh = env.tower_id();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let snap = env.snapshot();
        let a = searcher
            .run_search(&mut env, toh, SearchMode::Exploitation, &mut rng)
            .unwrap();
        env.restore(&snap);
        let mut rng2 = ChaCha8Rng::seed_from_u64(999);
        let b = searcher
            .run_search(&mut env, toh, SearchMode::Exploitation, &mut rng2)
            .unwrap();
        assert_eq!(a.trace.len(), b.trace.len());
        for (x, y) in a.trace.iter().zip(b.trace.iter()) {
            assert_eq!(x.action, y.action);
            assert_eq!(x.pi_mcts, y.pi_mcts);
            assert_eq!(x.observation, y.observation);
        }
        assert_eq!(a.final_reward, b.final_reward);
    }

    #[test]
    fn untrained_search_solves_one_disk_hanoi() {
        // Two legal actions only; the -1 STOP backup steers the search to
        // MOVEDISK then STOP even with random weights.
        let (mut env, params) = hanoi_setup(1);
        let config = cfg();
        let searcher = Searcher::new(&params, &config);
        let toh = env.tower_id();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let res = searcher
            .run_search(&mut env, toh, SearchMode::Exploitation, &mut rng)
            .unwrap();
        assert!(
            res.success,
            "trace: {:?}",
            res.trace.iter().map(|t| t.action).collect::<Vec<_>>()
        );
        assert_eq!(res.trace.len(), 2);
        assert!((res.final_reward - 0.97f64.powi(2)).abs() < 1e-12);
    }

    #[test]
    fn stop_biased_net_returns_immediate_stop_with_discounted_reward() {
        // A task whose post-condition already holds (the COMPSWAP no-op
        // corner) plus a STOP-biased policy gives the one-action trace and
        // reward gamma^1.
        let mut env = SortEnv::new(SortMode::Iterative, (2, 2));
        env.set_state(vec![5, 3], 0, 0);
        let dims = NetDims {
            observation_dim: env.observation_dim(),
            encoder_hidden: 8,
            encoding_dim: 4,
            program_embedding: 8,
            lstm_hidden: 8,
            n_programs: env.library().len(),
        };
        let mut params = NpiParams::zeros(dims, 1e-4);
        let stop = env.library().stop_id();
        params.actor.layers.last_mut().unwrap().bias[stop] = 50.0;
        let config = cfg();
        let searcher = Searcher::new(&params, &config);
        let compswap = env.library().find("COMPSWAP").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let res = searcher
            .run_search(&mut env, compswap, SearchMode::Exploitation, &mut rng)
            .unwrap();
        assert!(res.success);
        assert_eq!(res.trace.len(), 1);
        assert_eq!(res.trace[0].action, stop);
        assert!((res.final_reward - 0.97).abs() < 1e-12);
    }

    #[test]
    fn search_only_selects_legal_actions_and_policies_normalize() {
        let (mut env, params) = hanoi_setup(2);
        let config = cfg();
        let searcher = Searcher::new(&params, &config);
        let toh = env.tower_id();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let res = searcher
            .run_search(&mut env, toh, SearchMode::Exploration, &mut rng)
            .unwrap();
        fn walk(result: &SearchResult, env_lib_len: usize) {
            for step in &result.trace {
                let sum: f64 = step.pi_mcts.iter().sum();
                assert!((sum - 1.0).abs() < 1e-9);
                assert!(step.action < env_lib_len);
                assert!(step.pi_mcts[step.action] > 0.0);
                if let Some(sub) = &step.sub_trace {
                    walk(sub, env_lib_len);
                }
            }
        }
        walk(&res, 5);
    }

    #[test]
    fn interpreter_state_stack_discipline() {
        // Sub-trace roots carry a zero interpreter state; the outer trace's
        // states evolve from zero through the net's recurrent step.
        let (mut env, params) = hanoi_setup(2);
        let config = cfg();
        let searcher = Searcher::new(&params, &config);
        let toh = env.tower_id();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let res = searcher
            .run_search(&mut env, toh, SearchMode::Exploration, &mut rng)
            .unwrap();
        let zero = params.zero_state();
        assert_eq!(res.trace[0].state, zero);
        let mut expect = zero.clone();
        for step in &res.trace {
            assert_eq!(step.state, expect, "outer state must ignore sub-calls");
            if let Some(sub) = &step.sub_trace {
                assert_eq!(sub.trace[0].state, params.zero_state());
            }
            let out = params.forward(&step.observation, toh, &step.state).unwrap();
            expect = out.next_state;
        }
    }

    #[test]
    fn max_depth_failure_returns_minus_one() {
        let (mut env, params) = hanoi_setup(2);
        let config = SearchConfig {
            max_depth: Some(2),
            ..cfg()
        };
        let searcher = Searcher::new(&params, &config);
        let toh = env.tower_id();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let res = searcher
            .run_search(&mut env, toh, SearchMode::Exploration, &mut rng)
            .unwrap();
        // Cannot solve 2 disks in one action.
        assert!(!res.success);
        assert_eq!(res.final_reward, -1.0);
        assert!(res.trace.len() <= 2);
    }

    #[test]
    fn terminal_value_shaping() {
        let g8 = 0.97f64.powi(8);
        assert_eq!(terminal_value(false, 8, 0.97, true, false, 0.9), -1.0);
        assert!((terminal_value(true, 8, 0.97, true, true, 0.9) - g8).abs() < 1e-12);
        assert!((terminal_value(true, 8, 0.97, true, false, 0.9) - (g8 - 0.9)).abs() < 1e-12);
        assert!((terminal_value(true, 8, 0.97, false, false, 0.9) - g8).abs() < 1e-12);
    }

    #[test]
    fn selection_hand_cases() {
        let cfg = cfg();
        // Single child: trivially selected.
        let edges: Vec<Edge<()>> = vec![Edge::new(2, 1.0)];
        assert_eq!(select_edge(&edges, &cfg, 2, &[0, 0, 1, 0], 3), 0);

        // Fresh node (all N = 0, Q = 0): U is zero, so the argmax reduces to
        // the level bonus, then index order. Levels: action 0 gap 2,
        // action 1 gap 1, action 3 = STOP.
        let edges: Vec<Edge<()>> = vec![Edge::new(0, 0.9), Edge::new(1, 0.05), Edge::new(3, 0.05)];
        let levels = [0, 1, 2, 0];
        let idx = select_edge(&edges, &cfg, 2, &levels, 3);
        // L(gap 1) = L(STOP) = 1.1036 > L(gap 2): tie between edges 1 and 2,
        // broken toward the lower action index.
        assert_eq!(idx, 1);

        // Equal Q and N: the prior decides through U once visits exist.
        let mut edges: Vec<Edge<()>> =
            vec![Edge::new(0, 0.1), Edge::new(1, 0.6), Edge::new(2, 0.3)];
        for e in edges.iter_mut() {
            e.record(0.5, 1.0);
        }
        let levels = [1, 1, 1, 0];
        // All at level gap 0 via same-level rule? Use current level 1 and all
        // actions level 1: equal L; equal Q; U proportional to prior.
        let idx = select_edge(&edges, &cfg, 1, &levels, 3);
        assert_eq!(idx, 1, "highest prior wins at equal Q, N and L");
    }

    #[test]
    fn stop_only_root_expands_to_single_certain_edge() {
        // COMPSWAP on a single-element list: every pointer move and SWAP is
        // illegal, so STOP is the only child; its prior must be 1 and the
        // search returns the one-step trace with reward gamma.
        let mut env = SortEnv::new(SortMode::Iterative, (1, 1));
        env.set_state(vec![5], 0, 0);
        let dims = NetDims {
            observation_dim: env.observation_dim(),
            encoder_hidden: 8,
            encoding_dim: 4,
            program_embedding: 8,
            lstm_hidden: 8,
            n_programs: env.library().len(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let params = NpiParams::init(dims, 1e-4, &mut rng);
        let compswap = env.library().find("COMPSWAP").unwrap();
        let config = cfg();
        let searcher = Searcher::new(&params, &config);
        let res = searcher
            .run_search(&mut env, compswap, SearchMode::Exploitation, &mut rng)
            .unwrap();
        assert!(res.success);
        assert_eq!(res.trace.len(), 1);
        let pi = &res.trace[0].pi_mcts;
        assert_eq!(pi[env.library().stop_id()], 1.0);
        assert!((res.final_reward - 0.97).abs() < 1e-12);
    }

    #[test]
    fn sample_index_respects_zero_mass() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            let i = sample_index(&[0.0, 0.6, 0.0, 0.4], &mut rng);
            assert!(i == 1 || i == 3);
        }
    }
}
