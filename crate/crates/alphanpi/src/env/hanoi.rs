//! Tower of Hanoi environment with role-switching actions and a recursive
//! TOWEROFHANOI task.
//!
//! Pillars carry roles (source, auxiliary, target) in two tiers: the roles a
//! game started with and the current roles, which the two SWAP actions
//! transpose. A recursive self-call removes the largest in-scope disk and
//! restarts the game with the current roles as the new initial roles; ending
//! the call puts the disk back and restores the caller's roles.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Environment, Observation, ProgramId, ProgramLibrary, ProgramSpec};
use crate::{Error, Result};

pub const ROLE_SOURCE: usize = 0;
pub const ROLE_AUX: usize = 1;
pub const ROLE_TARGET: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Op {
    Stop,
    SwapSA,
    SwapAT,
    MoveDisk,
    TowerOfHanoi,
}

/// Saved caller context for one recursion level.
#[derive(Debug, Clone, PartialEq)]
struct ScopedFrame {
    /// Pillar the removed disk sat on (at the bottom).
    removed_from: usize,
    outer_initial_roles: [usize; 3],
    outer_current_roles: [usize; 3],
}

#[derive(Debug, Clone, PartialEq)]
struct TaskFrame {
    prog: ProgramId,
    scoped: Option<ScopedFrame>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HanoiSnapshot {
    pillars: [Vec<u8>; 3],
    initial_roles: [usize; 3],
    current_roles: [usize; 3],
    n_scope: usize,
    frames: Vec<TaskFrame>,
}

#[derive(Clone)]
pub struct HanoiEnv {
    library: ProgramLibrary,
    ops: Vec<Op>,
    /// `pillars[p]` lists disk sizes bottom-to-top, strictly decreasing.
    pillars: [Vec<u8>; 3],
    /// `initial_roles[role]` / `current_roles[role]` give the pillar index
    /// holding that role.
    initial_roles: [usize; 3],
    current_roles: [usize; 3],
    n_scope: usize,
    frames: Vec<TaskFrame>,
    n_disks_default: usize,
    /// MOVEDISK applications since construction; test instrumentation.
    pub disk_moves: u64,
}

// Library row order follows the task's program table; indices are stable
// action ids persisted in checkpoints.
fn library() -> ProgramLibrary {
    ProgramLibrary::new(vec![
        ProgramSpec::new("TOWEROFHANOI", 1, true),
        ProgramSpec::new("SWAP_S_A", 0, false),
        ProgramSpec::new("SWAP_A_T", 0, false),
        ProgramSpec::new("MOVEDISK", 0, false),
        ProgramSpec::new("STOP", 0, false),
    ])
}

impl HanoiEnv {
    pub fn new(n_disks_default: usize) -> Self {
        assert!(n_disks_default >= 1);
        let lib = library();
        let ops = lib
            .programs
            .iter()
            .map(|p| match p.name.as_str() {
                "TOWEROFHANOI" => Op::TowerOfHanoi,
                "SWAP_S_A" => Op::SwapSA,
                "SWAP_A_T" => Op::SwapAT,
                "MOVEDISK" => Op::MoveDisk,
                "STOP" => Op::Stop,
                other => panic!("unknown hanoi program {other}"),
            })
            .collect();
        let mut env = Self {
            library: lib,
            ops,
            pillars: [Vec::new(), Vec::new(), Vec::new()],
            initial_roles: [0, 1, 2],
            current_roles: [0, 1, 2],
            n_scope: 0,
            frames: Vec::new(),
            n_disks_default,
            disk_moves: 0,
        };
        env.reset(n_disks_default);
        env
    }

    /// All `n` disks on the source pillar, identity roles, empty task stack.
    pub fn reset(&mut self, n: usize) {
        self.pillars = [Vec::new(), Vec::new(), Vec::new()];
        self.initial_roles = [0, 1, 2];
        self.current_roles = [0, 1, 2];
        self.n_scope = n;
        self.frames.clear();
        for disk in (1..=n as u8).rev() {
            self.pillars[0].push(disk);
        }
    }

    pub fn tower_id(&self) -> ProgramId {
        self.library.find("TOWEROFHANOI").unwrap()
    }

    pub fn n_scope(&self) -> usize {
        self.n_scope
    }

    pub fn pillars(&self) -> &[Vec<u8>; 3] {
        &self.pillars
    }

    fn op(&self, prog: ProgramId) -> Op {
        self.ops[prog]
    }

    fn pillar_of(&self, role: usize) -> usize {
        self.current_roles[role]
    }

    /// Whether moving the top disk from role `from` to role `to` is legal.
    fn move_possible(&self, from: usize, to: usize) -> bool {
        let fp = &self.pillars[self.pillar_of(from)];
        let tp = &self.pillars[self.pillar_of(to)];
        match fp.last() {
            None => false,
            Some(&disk) => tp.last().is_none_or(|&top| top > disk),
        }
    }

    fn solved(&self) -> bool {
        let t_init = self.initial_roles[ROLE_TARGET];
        self.pillars[t_init].len() == self.n_scope && self.current_roles[ROLE_TARGET] == t_init
    }

    /// Pillar currently holding the largest in-scope disk. It is always at
    /// the bottom of its pillar: nothing larger exists on the board.
    fn largest_disk_pillar(&self) -> usize {
        let largest = self.n_scope as u8;
        (0..3)
            .find(|&p| self.pillars[p].first() == Some(&largest))
            .expect("largest scoped disk must be on the board")
    }

    /// Simulates the recursive-call precondition: with the largest disk
    /// removed, the remaining disks must all sit on the current source.
    fn scoped_precondition_holds(&self) -> bool {
        if self.n_scope < 2 {
            return false;
        }
        let src = self.pillar_of(ROLE_SOURCE);
        let largest_at = self.largest_disk_pillar();
        let remaining_on_src = self.pillars[src].len() - usize::from(largest_at == src);
        remaining_on_src == self.n_scope - 1
    }
}

impl Environment for HanoiEnv {
    type Snap = HanoiSnapshot;

    fn library(&self) -> &ProgramLibrary {
        &self.library
    }

    fn observation_dim(&self) -> usize {
        5
    }

    /// `(m1, m2, m3, b_n, b_s)`: legality bits for source→aux, aux→target,
    /// source→target, the n==1 bit and the solved bit.
    fn observe(&self) -> Observation {
        Observation(vec![
            self.move_possible(ROLE_SOURCE, ROLE_AUX) as u8 as f64,
            self.move_possible(ROLE_AUX, ROLE_TARGET) as u8 as f64,
            self.move_possible(ROLE_SOURCE, ROLE_TARGET) as u8 as f64,
            (self.n_scope == 1) as u8 as f64,
            self.solved() as u8 as f64,
        ])
    }

    fn snapshot(&self) -> HanoiSnapshot {
        HanoiSnapshot {
            pillars: self.pillars.clone(),
            initial_roles: self.initial_roles,
            current_roles: self.current_roles,
            n_scope: self.n_scope,
            frames: self.frames.clone(),
        }
    }

    fn restore(&mut self, snap: &HanoiSnapshot) {
        self.pillars = snap.pillars.clone();
        self.initial_roles = snap.initial_roles;
        self.current_roles = snap.current_roles;
        self.n_scope = snap.n_scope;
        self.frames = snap.frames.clone();
    }

    fn apply_atomic(&mut self, action: ProgramId) -> Result<()> {
        if !self.precondition(action) {
            return Err(Error::IllegalAction {
                action: self.library.name(action).to_string(),
                reason: "precondition false".to_string(),
            });
        }
        match self.op(action) {
            Op::SwapSA => self.current_roles.swap(ROLE_SOURCE, ROLE_AUX),
            Op::SwapAT => self.current_roles.swap(ROLE_AUX, ROLE_TARGET),
            Op::MoveDisk => {
                let from = self.pillar_of(ROLE_SOURCE);
                let to = self.pillar_of(ROLE_TARGET);
                let disk = self.pillars[from].pop().expect("move checked legal");
                debug_assert!(self.pillars[to].last().is_none_or(|&t| t > disk));
                self.pillars[to].push(disk);
                self.disk_moves += 1;
            }
            _ => {
                return Err(Error::Usage(format!(
                    "apply_atomic on non-atomic action {}",
                    self.library.name(action)
                )))
            }
        }
        Ok(())
    }

    fn precondition(&self, prog: ProgramId) -> bool {
        match self.op(prog) {
            Op::Stop => true,
            Op::SwapSA | Op::SwapAT => self.n_scope > 1,
            Op::MoveDisk => self.move_possible(ROLE_SOURCE, ROLE_TARGET),
            Op::TowerOfHanoi => self.pillars[self.pillar_of(ROLE_SOURCE)].len() == self.n_scope,
        }
    }

    fn postcondition(&self, prog: ProgramId) -> bool {
        if self.op(prog) != Op::TowerOfHanoi {
            return false;
        }
        let t_init = self.initial_roles[ROLE_TARGET];
        self.pillars[t_init].len() == self.n_scope && self.current_roles == self.initial_roles
    }

    fn self_call_allowed(&self, prog: ProgramId) -> bool {
        self.op(prog) == Op::TowerOfHanoi
            && self.current_task() == Some(prog)
            && self.scoped_precondition_holds()
    }

    fn start_task(&mut self, prog: ProgramId) -> Result<()> {
        let self_call = self.current_task() == Some(prog);
        if self_call {
            if !self.self_call_allowed(prog) {
                return Err(Error::IllegalAction {
                    action: self.library.name(prog).to_string(),
                    reason: "recursive call precondition fails in shrunk game".to_string(),
                });
            }
            let removed_from = self.largest_disk_pillar();
            let outer_initial = self.initial_roles;
            let outer_current = self.current_roles;
            // The game restarts one disk smaller; the caller's current roles
            // become the new game's initial roles.
            self.pillars[removed_from].remove(0);
            self.n_scope -= 1;
            self.initial_roles = self.current_roles;
            self.frames.push(TaskFrame {
                prog,
                scoped: Some(ScopedFrame {
                    removed_from,
                    outer_initial_roles: outer_initial,
                    outer_current_roles: outer_current,
                }),
            });
        } else {
            if !self.precondition(prog) {
                return Err(Error::IllegalAction {
                    action: self.library.name(prog).to_string(),
                    reason: "start_task precondition violated".to_string(),
                });
            }
            self.frames.push(TaskFrame { prog, scoped: None });
        }
        Ok(())
    }

    fn end_task(&mut self) -> Result<()> {
        let frame = self
            .frames
            .pop()
            .ok_or_else(|| Error::Usage("end_task with no active task".to_string()))?;
        if let Some(scoped) = frame.scoped {
            self.n_scope += 1;
            let disk = self.n_scope as u8;
            self.pillars[scoped.removed_from].insert(0, disk);
            self.initial_roles = scoped.outer_initial_roles;
            self.current_roles = scoped.outer_current_roles;
        }
        Ok(())
    }

    fn current_task(&self) -> Option<ProgramId> {
        self.frames.last().map(|f| f.prog)
    }

    fn oracle_apply(&mut self, prog: ProgramId) -> Result<()> {
        if self.op(prog) != Op::TowerOfHanoi {
            return Err(Error::Usage(format!(
                "oracle_apply on atomic program {}",
                self.library.name(prog)
            )));
        }
        if !self.precondition(prog) {
            return Err(Error::IllegalAction {
                action: self.library.name(prog).to_string(),
                reason: "oracle_apply precondition violated".to_string(),
            });
        }
        self.start_task(prog)?;
        let r = self.oracle_body();
        let post = self.postcondition(prog);
        self.end_task()?;
        r?;
        assert!(post, "oracle left TOWEROFHANOI unsatisfied");
        Ok(())
    }

    fn init_for_task(&mut self, _prog: ProgramId, _rng: &mut ChaCha8Rng, size: Option<usize>) {
        self.reset(size.unwrap_or(self.n_disks_default));
    }

    fn default_max_depth(&self) -> usize {
        15
    }
}

impl HanoiEnv {
    /// Classic recursive expert, expressed through environment actions
    /// (including recursive task scoping).
    fn oracle_body(&mut self) -> Result<()> {
        let toh = self.tower_id();
        let swap_sa = self.library.find("SWAP_S_A").unwrap();
        let swap_at = self.library.find("SWAP_A_T").unwrap();
        let movedisk = self.library.find("MOVEDISK").unwrap();
        if self.n_scope == 1 {
            self.apply_atomic(movedisk)?;
            return Ok(());
        }
        self.apply_atomic(swap_at)?;
        self.start_task(toh)?;
        self.oracle_body()?;
        self.end_task()?;
        self.apply_atomic(swap_at)?;
        self.apply_atomic(movedisk)?;
        self.apply_atomic(swap_sa)?;
        self.start_task(toh)?;
        self.oracle_body()?;
        self.end_task()?;
        self.apply_atomic(swap_sa)?;
        Ok(())
    }
}

/// Classic recursive solver on raw pillars; returns `(from, to)` pillar moves.
/// Independent of the environment: the oracle for oracle tests.
pub fn optimal_solver(n: usize) -> Vec<(usize, usize)> {
    fn solve(n: usize, from: usize, to: usize, via: usize, out: &mut Vec<(usize, usize)>) {
        if n == 0 {
            return;
        }
        solve(n - 1, from, via, to, out);
        out.push((from, to));
        solve(n - 1, via, to, from, out);
    }
    let mut out = Vec::new();
    solve(n, 0, 2, 1, &mut out);
    out
}

/// The canonical two-disk exploitation trace the generalization certificate
/// matches against: observation, then action name.
pub fn canonical_two_disk_trace() -> Vec<(Vec<f64>, &'static str)> {
    vec![
        (vec![1.0, 0.0, 1.0, 0.0, 0.0], "SWAP_A_T"),
        (vec![1.0, 0.0, 1.0, 0.0, 0.0], "TOWEROFHANOI"),
        (vec![1.0, 0.0, 0.0, 0.0, 0.0], "SWAP_A_T"),
        (vec![0.0, 1.0, 1.0, 0.0, 0.0], "MOVEDISK"),
        (vec![0.0, 1.0, 0.0, 0.0, 0.0], "SWAP_S_A"),
        (vec![1.0, 0.0, 1.0, 0.0, 0.0], "TOWEROFHANOI"),
        (vec![0.0, 0.0, 0.0, 0.0, 1.0], "SWAP_S_A"),
        (vec![0.0, 0.0, 0.0, 0.0, 1.0], "STOP"),
    ]
}

/// Certificate emitted by the generalization check.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Certificate {
    pub verdict: CertificateVerdict,
    /// Top-level `(observation, action)` pairs observed at n = 2.
    pub observed_trace: Vec<(Vec<f64>, String)>,
    pub n1_solved: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CertificateVerdict {
    Certified,
    NotCertified,
}

/// Compares an agent's deterministic n=1 / n=2 behaviour against the
/// canonical trace. Solving n=1 plus reproducing the exact two-disk
/// observation/action sequence certifies every disk count by induction.
pub fn certify_from_traces(
    n1_solved: bool,
    n2_trace: &[(Vec<f64>, String)],
    n2_solved: bool,
) -> Certificate {
    let canonical = canonical_two_disk_trace();
    let matches = n2_solved
        && n2_trace.len() == canonical.len()
        && n2_trace
            .iter()
            .zip(canonical.iter())
            .all(|((obs, act), (c_obs, c_act))| obs == c_obs && act == c_act);
    Certificate {
        verdict: if n1_solved && matches {
            CertificateVerdict::Certified
        } else {
            CertificateVerdict::NotCertified
        },
        observed_trace: n2_trace.to_vec(),
        n1_solved,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;

    fn id(env: &HanoiEnv, name: &str) -> ProgramId {
        env.library().find(name).unwrap()
    }

    #[test]
    fn one_disk_solves_in_one_move() {
        let mut e = HanoiEnv::new(1);
        let toh = e.tower_id();
        e.start_task(toh).unwrap();
        assert_eq!(e.observe().0, vec![1.0, 0.0, 1.0, 1.0, 0.0]);
        e.apply_atomic(id(&e, "MOVEDISK")).unwrap();
        assert!(e.postcondition(toh));
        assert_eq!(e.observe().0[4], 1.0);
    }

    #[test]
    fn swaps_are_involutions_and_gated_on_scope() {
        let mut e = HanoiEnv::new(2);
        let toh = e.tower_id();
        e.start_task(toh).unwrap();
        let before = e.snapshot();
        e.apply_atomic(id(&e, "SWAP_S_A")).unwrap();
        e.apply_atomic(id(&e, "SWAP_S_A")).unwrap();
        assert_eq!(e.snapshot(), before);

        let mut e1 = HanoiEnv::new(1);
        let toh1 = e1.tower_id();
        e1.start_task(toh1).unwrap();
        assert!(!e1.precondition(id(&e1, "SWAP_S_A")));
        assert!(e1.apply_atomic(id(&e1, "SWAP_A_T")).is_err());
    }

    #[test]
    fn recursive_call_shrinks_and_restores() {
        let mut e = HanoiEnv::new(2);
        let toh = e.tower_id();
        e.start_task(toh).unwrap();
        let before = e.snapshot();
        assert!(e.self_call_allowed(toh));
        e.start_task(toh).unwrap();
        assert_eq!(e.n_scope(), 1);
        assert_eq!(e.observe().0[3], 1.0, "b_n flips on");
        assert_eq!(e.pillars()[0], vec![1]);
        e.end_task().unwrap();
        assert_eq!(e.snapshot(), before);
    }

    #[test]
    fn self_call_excluded_at_single_disk() {
        let mut e = HanoiEnv::new(1);
        let toh = e.tower_id();
        e.start_task(toh).unwrap();
        assert!(!e.self_call_allowed(toh));
        let legal = super::super::legal_actions(&e, toh);
        assert_eq!(legal.len(), 2); // STOP + MOVEDISK
    }

    #[test]
    fn canonical_trace_replays_through_the_environment() {
        let mut e = HanoiEnv::new(2);
        let toh = e.tower_id();
        e.start_task(toh).unwrap();
        for (expect_obs, action) in canonical_two_disk_trace() {
            assert_eq!(e.observe().0, expect_obs, "before {action}");
            if action == "STOP" {
                assert!(e.postcondition(toh));
            } else if action == "TOWEROFHANOI" {
                // Recursive sub-call; the sub-game has one disk.
                e.start_task(toh).unwrap();
                assert_eq!(e.n_scope(), 1);
                e.apply_atomic(id(&e, "MOVEDISK")).unwrap();
                assert!(e.postcondition(toh));
                e.end_task().unwrap();
            } else {
                let a = id(&e, action);
                e.apply_atomic(a).unwrap();
            }
        }
    }

    #[test]
    fn oracle_solves_two_disks_in_three_disk_moves() {
        let mut e = HanoiEnv::new(2);
        let toh = e.tower_id();
        e.oracle_apply(toh).unwrap();
        assert!(e.solved());
        assert_eq!(e.disk_moves, 3);
    }

    #[test]
    fn oracle_solves_any_size_with_minimum_moves() {
        for n in 1..=8 {
            let mut e = HanoiEnv::new(n);
            let toh = e.tower_id();
            e.oracle_apply(toh).unwrap();
            let t = e.initial_roles[ROLE_TARGET];
            assert_eq!(e.pillars()[t].len(), n);
            assert_eq!(e.disk_moves, (1 << n) - 1);
        }
    }

    #[test]
    fn optimal_solver_length_and_legality() {
        for n in 1..=12 {
            let moves = optimal_solver(n);
            assert_eq!(moves.len(), (1 << n) - 1);
            // Replay on raw stacks.
            let mut pillars: [Vec<u8>; 3] = [Vec::new(), Vec::new(), Vec::new()];
            for d in (1..=n as u8).rev() {
                pillars[0].push(d);
            }
            for (from, to) in moves {
                let disk = pillars[from].pop().expect("move from empty pillar");
                assert!(pillars[to].last().is_none_or(|&t| t > disk));
                pillars[to].push(disk);
            }
            assert_eq!(pillars[2].len(), n);
            assert!(pillars[0].is_empty() && pillars[1].is_empty());
        }
    }

    #[test]
    fn move_bits_match_independent_recomputation_along_random_walks() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for n in 1..=5 {
            let mut e = HanoiEnv::new(n);
            let toh = e.tower_id();
            e.start_task(toh).unwrap();
            for _ in 0..300 {
                // Independent recomputation of the move bits.
                let obs = e.observe().0;
                let pairs = [
                    (ROLE_SOURCE, ROLE_AUX),
                    (ROLE_AUX, ROLE_TARGET),
                    (ROLE_SOURCE, ROLE_TARGET),
                ];
                for (k, (f, t)) in pairs.iter().enumerate() {
                    let fp = &e.pillars()[e.current_roles[*f]];
                    let tp = &e.pillars()[e.current_roles[*t]];
                    let legal = match fp.last() {
                        None => false,
                        Some(&d) => tp.last().map(|&x| x > d).unwrap_or(true),
                    };
                    assert_eq!(obs[k] == 1.0, legal);
                }
                // Disk ordering invariant on every pillar.
                for p in e.pillars() {
                    assert!(p.windows(2).all(|w| w[0] > w[1]));
                }
                let legal: Vec<ProgramId> = super::super::legal_actions(&e, toh)
                    .into_iter()
                    .filter(|a| e.library().level(*a) == 0 && *a != e.library().stop_id())
                    .collect();
                if legal.is_empty() {
                    break;
                }
                let a = legal[rng.random_range(0..legal.len())];
                e.apply_atomic(a).unwrap();
            }
        }
    }

    #[test]
    fn certificate_matches_only_the_canonical_trace() {
        let canonical: Vec<(Vec<f64>, String)> = canonical_two_disk_trace()
            .into_iter()
            .map(|(o, a)| (o, a.to_string()))
            .collect();
        let cert = certify_from_traces(true, &canonical, true);
        assert_eq!(cert.verdict, CertificateVerdict::Certified);

        let cert = certify_from_traces(false, &canonical, true);
        assert_eq!(cert.verdict, CertificateVerdict::NotCertified);

        let mut wrong = canonical.clone();
        wrong[0].1 = "MOVEDISK".to_string();
        let cert = certify_from_traces(true, &wrong, true);
        assert_eq!(cert.verdict, CertificateVerdict::NotCertified);

        let cert = certify_from_traces(true, &canonical[..7], true);
        assert_eq!(cert.verdict, CertificateVerdict::NotCertified);
    }

    #[test]
    fn snapshot_round_trip_mid_recursion() {
        let mut e = HanoiEnv::new(3);
        let toh = e.tower_id();
        e.start_task(toh).unwrap();
        e.apply_atomic(id(&e, "SWAP_A_T")).unwrap();
        e.start_task(toh).unwrap();
        e.apply_atomic(id(&e, "SWAP_A_T")).unwrap();
        let snap = e.snapshot();
        let obs = e.observe();
        e.apply_atomic(id(&e, "MOVEDISK")).unwrap();
        e.end_task().unwrap();
        e.restore(&snap);
        assert_eq!(e.observe(), obs);
        assert_eq!(e.snapshot(), snap);
    }
}
