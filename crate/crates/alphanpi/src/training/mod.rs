//! The outer reinforcement-learning loop.
//!
//! Each iteration: pick a program from the curriculum, play episodes with
//! exploration-mode search (teacher forcing replaces sub-program execution
//! while learning programs above level 1), shape rewards, feed the replay
//! buffer (gated on a first success per program), run optimizer batches,
//! then validate every unlocked program in exploitation mode to update the
//! curriculum.
//!
//! Episode and validation RNG streams derive from (seed, iteration, phase,
//! index), so results are independent of the worker count and runs resume
//! exactly from a checkpoint.

mod buffer;
mod curriculum;

pub use buffer::ReplayBuffer;
pub use curriculum::{CurriculumState, ScoreRule};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::env::{Environment, ProgramId};
use crate::mcts::{SearchConfig, SearchMode, SearchResult, Searcher};
use crate::net::{Experience, NetDims, NpiParams};
use crate::{seed_stream, Result};

const PHASE_EPISODES: u64 = 1;
const PHASE_VALIDATION: u64 = 2;
const PHASE_BATCHES: u64 = 3;
const PHASE_CURRICULUM: u64 = 4;
const PHASE_INIT: u64 = 5;

/// Success `gamma^n` reward minus the recursion penalty when a recursive
/// program solved its task without ever calling itself; failures are -1.
pub fn shape_reward(
    program_recursive: bool,
    success: bool,
    discounted_reward: f64,
    recursed: bool,
    penalty: f64,
) -> f64 {
    if !success {
        return -1.0;
    }
    if program_recursive && !recursed {
        discounted_reward - penalty
    } else {
        discounted_reward
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iteration: u64,
    pub program: ProgramId,
    pub program_name: String,
    pub episodes: usize,
    pub successes: usize,
    pub mean_loss: f64,
    pub buffer_size: usize,
    pub l_max: u32,
    /// Moving-average validation reward per trainable program, library order.
    pub r_values: Vec<(String, f64)>,
}

impl IterationMetrics {
    pub fn csv_header(&self) -> String {
        let mut cols = vec![
            "iteration".to_string(),
            "program".to_string(),
            "episodes".to_string(),
            "successes".to_string(),
            "loss".to_string(),
            "buffer_size".to_string(),
            "l_max".to_string(),
        ];
        for (name, _) in &self.r_values {
            cols.push(format!("R_{name}"));
        }
        cols.join(",")
    }

    pub fn csv_row(&self) -> String {
        let mut cols = vec![
            self.iteration.to_string(),
            self.program_name.clone(),
            self.episodes.to_string(),
            self.successes.to_string(),
            format!("{:.6}", self.mean_loss),
            self.buffer_size.to_string(),
            self.l_max.to_string(),
        ];
        for (_, r) in &self.r_values {
            cols.push(format!("{r:.6}"));
        }
        cols.join(",")
    }
}

pub struct Trainer<E: Environment + Clone + Send + Sync> {
    pub env: E,
    pub params: NpiParams,
    pub curriculum: CurriculumState,
    pub buffer: ReplayBuffer,
    pub config: RunConfig,
    pub success_count: Vec<u64>,
    pub iteration: u64,
}

impl<E: Environment + Clone + Send + Sync> Trainer<E> {
    pub fn new(env: E, config: RunConfig) -> Self {
        let dims = NetDims {
            observation_dim: env.observation_dim(),
            encoder_hidden: config.encoder_hidden,
            encoding_dim: config.encoding_dim,
            program_embedding: config.program_embedding,
            lstm_hidden: config.lstm_hidden,
            n_programs: env.library().len(),
        };
        let mut init_rng = seed_stream(config.seed, PHASE_INIT, 0, 0);
        let params = NpiParams::init(dims, config.lr, &mut init_rng);
        let curriculum = CurriculumState::new(
            env.library(),
            config.beta,
            config.tau_curriculum,
            config.delta_curriculum,
            config.curriculum_rule,
        );
        let buffer = ReplayBuffer::new(config.buffer_capacity, config.p_buffer_positive);
        let n = env.library().len();
        Self {
            env,
            params,
            curriculum,
            buffer,
            config,
            success_count: vec![0; n],
            iteration: 0,
        }
    }

    /// Training ends when the top level is unlocked and every program clears
    /// the curriculum threshold.
    pub fn is_done(&self) -> bool {
        self.curriculum.done()
    }

    pub fn run_iteration(&mut self) -> Result<IterationMetrics> {
        let iteration = self.iteration;
        let mut curriculum_rng = seed_stream(self.config.seed, iteration, PHASE_CURRICULUM, 0);
        let program = self.curriculum.next_program(&mut curriculum_rng);

        let episodes = self.generate_episodes(program)?;
        let successes = episodes.iter().filter(|e| e.success).count();
        let n_episodes = episodes.len();
        for episode in &episodes {
            self.absorb_episode(episode);
        }

        let mut losses = Vec::new();
        if !self.buffer.is_empty() {
            for batch_idx in 0..self.config.n_batches {
                let mut rng =
                    seed_stream(self.config.seed, iteration, PHASE_BATCHES, batch_idx as u64);
                let batch = self.buffer.sample(self.config.batch_size, &mut rng)?;
                losses.push(self.params.train_step(&batch)?);
            }
        }

        self.validate(iteration)?;
        self.curriculum.maybe_advance_level();
        self.iteration += 1;

        let lib = self.env.library();
        Ok(IterationMetrics {
            iteration,
            program,
            program_name: lib.name(program).to_string(),
            episodes: n_episodes,
            successes,
            mean_loss: if losses.is_empty() {
                0.0
            } else {
                losses.iter().sum::<f64>() / losses.len() as f64
            },
            buffer_size: self.buffer.len(),
            l_max: self.curriculum.l_max(),
            r_values: lib
                .trainable()
                .map(|i| (lib.name(i).to_string(), self.curriculum.r(i)))
                .collect(),
        })
    }

    /// Plays episodes in worker-sized waves. Stops early once at least five
    /// episodes ran and every one so far succeeded; the kept prefix is
    /// independent of the worker count.
    fn generate_episodes(&self, program: ProgramId) -> Result<Vec<SearchResult>> {
        let forcing = self.config.teacher_forcing && self.env.library().level(program) > 1;
        let search_config = SearchConfig {
            teacher_forcing: forcing,
            ..self.config.search.clone()
        };
        let n_ep = self.config.n_episodes;
        let mut episodes: Vec<SearchResult> = Vec::with_capacity(n_ep);
        let mut start = 0;
        while start < n_ep {
            let wave = (start..n_ep.min(start + self.config.workers)).collect::<Vec<_>>();
            let mut results = self.run_episode_wave(&wave, program, &search_config, |idx| {
                seed_stream(self.config.seed, self.iteration, PHASE_EPISODES, idx as u64)
            })?;
            episodes.append(&mut results);
            if let Some(m) = early_stop_point(&episodes) {
                episodes.truncate(m);
                break;
            }
            start += wave.len();
        }
        Ok(episodes)
    }

    /// Runs one wave of episodes on scoped threads, one per index; results
    /// come back in index order.
    fn run_episode_wave(
        &self,
        indices: &[usize],
        program: ProgramId,
        search_config: &SearchConfig,
        seed_for: impl Fn(usize) -> ChaCha8Rng + Sync,
    ) -> Result<Vec<SearchResult>> {
        let params = &self.params;
        let base_env = &self.env;
        // Training episodes draw their own problem sizes from the environment.
        let size = None;
        std::thread::scope(|scope| {
            let handles: Vec<_> = indices
                .iter()
                .map(|&idx| {
                    let seed_for = &seed_for;
                    scope.spawn(move || {
                        let mut env = base_env.clone();
                        let mut rng = seed_for(idx);
                        env.init_for_task(program, &mut rng, size);
                        Searcher::new(params, search_config).run_search(
                            &mut env,
                            program,
                            SearchMode::Exploration,
                            &mut rng,
                        )
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("episode worker panicked"))
                .collect()
        })
    }

    /// Collects every nested trace of an episode, counts successes and
    /// appends experiences for programs that have already seen a success.
    /// Aborted episodes contribute nothing.
    fn absorb_episode(&mut self, episode: &SearchResult) {
        if episode.aborted {
            return;
        }
        let mut traces: Vec<&SearchResult> = Vec::new();
        collect_traces(episode, &mut traces);
        for result in traces {
            let recursive = self.env.library().get(result.program).recursive;
            let recursed = result.trace.iter().any(|s| s.action == result.program);
            let reward = shape_reward(
                recursive,
                result.success,
                result.final_reward,
                recursed,
                self.config.recursion_penalty,
            );
            if result.success {
                self.success_count[result.program] += 1;
            }
            if self.success_count[result.program] == 0 {
                continue; // no positive reward found for this task yet
            }
            for step in &result.trace {
                self.buffer.push(Experience {
                    observation: step.observation.clone(),
                    program: result.program,
                    state: step.state.clone(),
                    pi_mcts: step.pi_mcts.clone(),
                    reward,
                });
            }
        }
    }

    /// Exploitation-mode validation of every unlocked program, feeding the
    /// curriculum's moving averages. Validation traces never enter the
    /// replay buffer and never use teacher forcing.
    fn validate(&mut self, iteration: u64) -> Result<()> {
        let programs = self.curriculum.eligible();
        let search_config = SearchConfig {
            teacher_forcing: false,
            ..self.config.search.clone()
        };
        let jobs: Vec<(ProgramId, usize)> = programs
            .iter()
            .flat_map(|&p| (0..self.config.n_validation).map(move |k| (p, k)))
            .collect();
        let size = self.config.validation_size;
        let mut outcomes: Vec<(ProgramId, bool)> = Vec::with_capacity(jobs.len());
        for chunk in jobs.chunks(self.config.workers.max(1)) {
            let params = &self.params;
            let base_env = &self.env;
            let cfg = &search_config;
            let seed = self.config.seed;
            let results: Result<Vec<(ProgramId, bool)>> = std::thread::scope(|scope| {
                let handles: Vec<_> = chunk
                    .iter()
                    .map(|&(program, k)| {
                        scope.spawn(move || {
                            let mut env = base_env.clone();
                            let mut rng = seed_stream(
                                seed,
                                iteration,
                                PHASE_VALIDATION,
                                (program as u64) << 32 | k as u64,
                            );
                            env.init_for_task(program, &mut rng, size);
                            Searcher::new(params, cfg)
                                .run_search(&mut env, program, SearchMode::Exploitation, &mut rng)
                                .map(|res| (program, res.success))
                        })
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("validation worker panicked"))
                    .collect()
            });
            outcomes.extend(results?);
        }
        for (program, success) in outcomes {
            self.curriculum
                .record_validation(program, if success { 1.0 } else { 0.0 });
        }
        Ok(())
    }
}

fn collect_traces<'a>(result: &'a SearchResult, out: &mut Vec<&'a SearchResult>) {
    out.push(result);
    for step in &result.trace {
        if let Some(sub) = &step.sub_trace {
            collect_traces(sub, out);
        }
    }
}

/// Earliest prefix length `m >= 5` whose episodes all succeeded, if any.
fn early_stop_point(episodes: &[SearchResult]) -> Option<usize> {
    let mut all_success = true;
    for (i, e) in episodes.iter().enumerate() {
        all_success &= e.success;
        if !all_success {
            return None;
        }
        if i + 1 >= 5 {
            return Some(i + 1);
        }
    }
    None
}
