//! Deployment-time evaluation: exploitation-mode search ("net with
//! planning"), greedy network rollouts ("net only"), the per-size success
//! tables, and the Tower of Hanoi generalization certificate.

use serde::{Deserialize, Serialize};

use crate::env::hanoi::{certify_from_traces, Certificate, HanoiEnv};
use crate::env::{legal_actions, Environment, ProgramId};
use crate::mcts::{SearchConfig, SearchMode, SearchResult, Searcher};
use crate::net::NpiParams;
use crate::nn::argmax_tie_lowest;
use crate::{seed_stream, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DeployMode {
    /// Exploitation-mode tree search at every step.
    Planning,
    /// Greedy argmax of the masked network policy, no search.
    NetOnly,
}

/// Greedy network rollout of `program`: argmax over the legal-action-masked
/// policy at each step, recursing on non-atomic actions with a fresh zero
/// interpreter state. A sub-program failing its post-condition fails the
/// whole rollout, mirroring the search's abort rule.
pub fn greedy_rollout<E: Environment>(
    net: &NpiParams,
    env: &mut E,
    program: ProgramId,
) -> Result<bool> {
    env.start_task(program)?;
    let result = greedy_rollout_body(net, env, program);
    env.end_task()?;
    result
}

fn greedy_rollout_body<E: Environment>(
    net: &NpiParams,
    env: &mut E,
    program: ProgramId,
) -> Result<bool> {
    let max_depth = env.default_max_depth();
    let stop = env.library().stop_id();
    let mut state = net.zero_state();
    let mut steps = 0usize;
    loop {
        let legal = legal_actions(env, program);
        let out = net.forward(&env.observe(), program, &state)?;
        let masked: Vec<f64> = legal.iter().map(|&a| out.pi[a]).collect();
        let action = legal[argmax_tie_lowest(&masked)];
        state = out.next_state;
        steps += 1;
        if steps >= max_depth {
            return Ok(false);
        }
        if action == stop {
            return Ok(env.postcondition(program));
        }
        if env.library().level(action) == 0 {
            env.apply_atomic(action)?;
        } else {
            env.start_task(action)?;
            let sub_ok = greedy_rollout_body(net, env, action)?;
            env.end_task()?;
            if !sub_ok {
                return Ok(false);
            }
        }
    }
}

/// Runs one deterministic exploitation episode; the task is already sized
/// and initialized in `env`.
pub fn deploy_episode<E: Environment>(
    net: &NpiParams,
    env: &mut E,
    program: ProgramId,
    search: &SearchConfig,
    mode: DeployMode,
) -> Result<bool> {
    match mode {
        DeployMode::Planning => {
            // The RNG is unused in exploitation mode; any seed works.
            let mut rng = seed_stream(0, 0, 0, 0);
            let config = SearchConfig {
                teacher_forcing: false,
                ..search.clone()
            };
            let searcher = Searcher::new(net, &config);
            let res = searcher.run_search(env, program, SearchMode::Exploitation, &mut rng)?;
            Ok(res.success)
        }
        DeployMode::NetOnly => greedy_rollout(net, env, program),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SizeResult {
    pub size: usize,
    pub episodes: usize,
    pub successes: usize,
    pub success_rate: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub program: String,
    pub mode: DeployMode,
    pub rows: Vec<SizeResult>,
}

/// Evaluation table request: problem sizes, episode count per size,
/// deployment mode and seeding.
#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub sizes: Vec<usize>,
    pub episodes: usize,
    pub mode: DeployMode,
    pub seed: u64,
    pub workers: usize,
}

/// Success table over problem sizes; episodes are seeded independently, so
/// the table is reproducible for a fixed seed regardless of thread count.
pub fn evaluate<E: Environment + Clone + Send + Sync>(
    net: &NpiParams,
    base_env: &E,
    program: ProgramId,
    search: &SearchConfig,
    options: &EvalOptions,
) -> Result<EvalReport> {
    let EvalOptions {
        ref sizes,
        episodes,
        mode,
        seed,
        workers,
    } = *options;
    let mut rows = Vec::new();
    for &size in sizes.iter() {
        let jobs: Vec<usize> = (0..episodes).collect();
        let mut successes = 0usize;
        for chunk in jobs.chunks(workers.max(1)) {
            let outcomes: Result<Vec<bool>> = std::thread::scope(|scope| {
                let handles: Vec<_> = chunk
                    .iter()
                    .map(|&ep| {
                        scope.spawn(move || {
                            let mut env = base_env.clone();
                            let mut rng = seed_stream(seed, size as u64, ep as u64, mode as u64);
                            env.init_for_task(program, &mut rng, Some(size));
                            deploy_episode(net, &mut env, program, search, mode)
                        })
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("evaluation worker panicked"))
                    .collect()
            });
            successes += outcomes?.iter().filter(|&&ok| ok).count();
        }
        rows.push(SizeResult {
            size,
            episodes,
            successes,
            success_rate: successes as f64 / episodes.max(1) as f64,
        });
    }
    Ok(EvalReport {
        program: base_env.library().name(program).to_string(),
        mode,
        rows,
    })
}

/// Runs the deterministic n=1 and n=2 checks and matches the two-disk trace
/// against the canonical sequence; a match certifies every disk count.
pub fn certify_generalization(net: &NpiParams, search: &SearchConfig) -> Result<Certificate> {
    let mut rng = seed_stream(0, 0, 0, 0);
    let config = SearchConfig {
        teacher_forcing: false,
        ..search.clone()
    };

    let mut env1 = HanoiEnv::new(1);
    let toh = env1.tower_id();
    let searcher = Searcher::new(net, &config);
    let res1 = searcher.run_search(&mut env1, toh, SearchMode::Exploitation, &mut rng)?;

    let mut env2 = HanoiEnv::new(2);
    let res2 = searcher.run_search(&mut env2, toh, SearchMode::Exploitation, &mut rng)?;
    let trace2 = top_level_pairs(&env2, &res2);
    Ok(certify_from_traces(res1.success, &trace2, res2.success))
}

fn top_level_pairs(env: &HanoiEnv, result: &SearchResult) -> Vec<(Vec<f64>, String)> {
    result
        .trace
        .iter()
        .map(|step| {
            (
                step.observation.0.clone(),
                env.library().name(step.action).to_string(),
            )
        })
        .collect()
}

/// Export-friendly view of an executed trace with program names and nested
/// sub-program calls.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceExport {
    pub program: String,
    pub success: bool,
    pub reward: f64,
    pub steps: Vec<TraceStepExport>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceStepExport {
    pub observation: Vec<f64>,
    pub program: String,
    pub action: String,
    pub pi_mcts: Vec<f64>,
    pub depth: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sub_trace: Option<Box<TraceExport>>,
}

pub fn export_trace<E: Environment>(env: &E, result: &SearchResult) -> TraceExport {
    let lib = env.library();
    TraceExport {
        program: lib.name(result.program).to_string(),
        success: result.success,
        reward: result.final_reward,
        steps: result
            .trace
            .iter()
            .map(|step| TraceStepExport {
                observation: step.observation.0.clone(),
                program: lib.name(step.program).to_string(),
                action: lib.name(step.action).to_string(),
                pi_mcts: step.pi_mcts.clone(),
                depth: step.depth,
                sub_trace: step
                    .sub_trace
                    .as_ref()
                    .map(|sub| Box::new(export_trace(env, sub))),
            })
            .collect(),
    }
}
