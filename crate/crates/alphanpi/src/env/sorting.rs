//! List-sorting environment: a list of digits, two pointers, and a program
//! hierarchy culminating in BUBBLESORT.
//!
//! Three variants share the implementation: the iterative hierarchy, the
//! recursive hierarchy (RESET, BUBBLE and BUBBLESORT may call themselves on a
//! shrinking sub-list scope), and a flat ablation where BUBBLESORT sits
//! directly on the atomic actions.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{legal_actions, Environment, Observation, ProgramId, ProgramLibrary, ProgramSpec};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SortMode {
    Iterative,
    Recursive,
    Flat,
}

/// Role of each library entry, resolved once at construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Op {
    Stop,
    Ptr1L,
    Ptr1R,
    Ptr2L,
    Ptr2R,
    Swap,
    RShift,
    LShift,
    CompSwap,
    Reset,
    Bubble,
    BubbleSort,
}

/// One active task occurrence: its program, the scope it runs in and the
/// pointer positions at entry (post-conditions are entry-relative).
#[derive(Debug, Clone, PartialEq)]
struct TaskFrame {
    prog: ProgramId,
    lo: usize,
    hi: usize,
    entry_p1: usize,
    entry_p2: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SortSnapshot {
    digits: Vec<u8>,
    p1: usize,
    p2: usize,
    frames: Vec<TaskFrame>,
}

/// An action applied to the environment, recorded when logging is enabled.
/// `depth` is the task-stack depth at application time.
#[derive(Debug, Clone, PartialEq)]
pub struct LoggedAction {
    pub depth: usize,
    pub prog: ProgramId,
}

#[derive(Clone)]
pub struct SortEnv {
    mode: SortMode,
    library: ProgramLibrary,
    ops: Vec<Op>,
    digits: Vec<u8>,
    p1: usize,
    p2: usize,
    frames: Vec<TaskFrame>,
    length_range: (usize, usize),
    pub atomic_count: u64,
    action_log: Option<Vec<LoggedAction>>,
}

// Library row order follows the task's program table; indices are stable
// action ids persisted in checkpoints.
fn full_library() -> ProgramLibrary {
    ProgramLibrary::new(vec![
        ProgramSpec::new("BUBBLESORT", 3, false),
        ProgramSpec::new("RESET", 2, false),
        ProgramSpec::new("BUBBLE", 2, false),
        ProgramSpec::new("RSHIFT", 1, false),
        ProgramSpec::new("LSHIFT", 1, false),
        ProgramSpec::new("COMPSWAP", 1, false),
        ProgramSpec::new("PTR_2_L", 0, false),
        ProgramSpec::new("PTR_1_L", 0, false),
        ProgramSpec::new("PTR_1_R", 0, false),
        ProgramSpec::new("PTR_2_R", 0, false),
        ProgramSpec::new("SWAP", 0, false),
        ProgramSpec::new("STOP", 0, false),
    ])
}

fn recursive_library() -> ProgramLibrary {
    let mut lib = full_library();
    for name in ["RESET", "BUBBLE", "BUBBLESORT"] {
        let id = lib.find(name).unwrap();
        lib.programs[id].recursive = true;
    }
    lib
}

fn flat_library() -> ProgramLibrary {
    ProgramLibrary::new(vec![
        ProgramSpec::new("BUBBLESORT", 1, false),
        ProgramSpec::new("PTR_2_L", 0, false),
        ProgramSpec::new("PTR_1_L", 0, false),
        ProgramSpec::new("PTR_1_R", 0, false),
        ProgramSpec::new("PTR_2_R", 0, false),
        ProgramSpec::new("SWAP", 0, false),
        ProgramSpec::new("STOP", 0, false),
    ])
}

fn resolve_ops(lib: &ProgramLibrary) -> Vec<Op> {
    lib.programs
        .iter()
        .map(|p| match p.name.as_str() {
            "STOP" => Op::Stop,
            "PTR_1_L" => Op::Ptr1L,
            "PTR_1_R" => Op::Ptr1R,
            "PTR_2_L" => Op::Ptr2L,
            "PTR_2_R" => Op::Ptr2R,
            "SWAP" => Op::Swap,
            "RSHIFT" => Op::RShift,
            "LSHIFT" => Op::LShift,
            "COMPSWAP" => Op::CompSwap,
            "RESET" => Op::Reset,
            "BUBBLE" => Op::Bubble,
            "BUBBLESORT" => Op::BubbleSort,
            other => panic!("unknown sorting program {other}"),
        })
        .collect()
}

impl SortEnv {
    pub fn new(mode: SortMode, length_range: (usize, usize)) -> Self {
        assert!(length_range.0 >= 1 && length_range.0 <= length_range.1);
        let library = match mode {
            SortMode::Iterative => full_library(),
            SortMode::Recursive => recursive_library(),
            SortMode::Flat => flat_library(),
        };
        let ops = resolve_ops(&library);
        Self {
            mode,
            library,
            ops,
            digits: vec![0],
            p1: 0,
            p2: 0,
            frames: Vec::new(),
            length_range,
            atomic_count: 0,
            action_log: None,
        }
    }

    pub fn mode(&self) -> SortMode {
        self.mode
    }

    pub fn digits(&self) -> &[u8] {
        &self.digits
    }

    pub fn pointers(&self) -> (usize, usize) {
        (self.p1, self.p2)
    }

    /// Loads an explicit state; pointers must lie inside the list.
    pub fn set_state(&mut self, digits: Vec<u8>, p1: usize, p2: usize) {
        assert!(!digits.is_empty() && p1 < digits.len() && p2 < digits.len());
        self.digits = digits;
        self.p1 = p1;
        self.p2 = p2;
        self.frames.clear();
    }

    pub fn enable_action_log(&mut self) {
        self.action_log = Some(Vec::new());
    }

    pub fn take_action_log(&mut self) -> Vec<LoggedAction> {
        self.action_log.take().unwrap_or_default()
    }

    fn log(&mut self, prog: ProgramId) {
        let depth = self.frames.len();
        if let Some(log) = self.action_log.as_mut() {
            log.push(LoggedAction { depth, prog });
        }
    }

    /// Current scope bounds (inclusive); the whole list outside any task.
    fn scope(&self) -> (usize, usize) {
        self.frames
            .last()
            .map(|f| (f.lo, f.hi))
            .unwrap_or((0, self.digits.len() - 1))
    }

    fn scope_len(&self) -> usize {
        let (lo, hi) = self.scope();
        hi - lo + 1
    }

    fn op(&self, prog: ProgramId) -> Op {
        self.ops[prog]
    }

    fn id_of(&self, op: Op) -> ProgramId {
        self.ops.iter().position(|&o| o == op).unwrap()
    }

    fn scoped_sorted(&self) -> bool {
        let (lo, hi) = self.scope();
        self.digits[lo..=hi].windows(2).all(|w| w[0] <= w[1])
    }

    /// Independent sortedness oracle: compares the scoped slice to a sorted
    /// copy instead of scanning adjacency.
    pub fn is_sorted_oracle(&self) -> bool {
        let (lo, hi) = self.scope();
        let mut sorted = self.digits[lo..=hi].to_vec();
        sorted.sort_unstable();
        sorted == self.digits[lo..=hi]
    }

    /// Scope the hypothetical self-call of `prog` would run in.
    fn shrunk_scope(&self, prog: ProgramId) -> Option<(usize, usize)> {
        let (lo, hi) = self.scope();
        if hi == lo {
            return None; // base case: cannot shrink a 1-element scope
        }
        match self.op(prog) {
            // After one pass the maximum is final: drop the last element.
            Op::BubbleSort => Some((lo, hi - 1)),
            // These advance one position then recurse: drop the first.
            Op::Bubble | Op::Reset => Some((lo + 1, hi)),
            _ => None,
        }
    }

    fn precondition_in(&self, prog: ProgramId, lo: usize, hi: usize) -> bool {
        let (p1, p2) = (self.p1, self.p2);
        match self.op(prog) {
            Op::Stop => true,
            Op::Ptr1L => p1 > lo,
            Op::Ptr1R => p1 < hi,
            Op::Ptr2L => p2 > lo,
            Op::Ptr2R => p2 < hi,
            Op::Swap => p1 != p2,
            Op::RShift => p1 < hi && p2 < hi,
            Op::LShift => p1 > lo && p2 > lo,
            Op::CompSwap => p1 == p2 || p1 + 1 == p2,
            Op::Reset => !(p1 == lo && p2 == lo),
            Op::Bubble | Op::BubbleSort => p1 == lo && p2 == lo,
        }
    }

    fn apply_op(&mut self, op: Op) {
        let (lo, hi) = self.scope();
        match op {
            Op::Ptr1L => {
                assert!(self.p1 > lo);
                self.p1 -= 1;
            }
            Op::Ptr1R => {
                assert!(self.p1 < hi);
                self.p1 += 1;
            }
            Op::Ptr2L => {
                assert!(self.p2 > lo);
                self.p2 -= 1;
            }
            Op::Ptr2R => {
                assert!(self.p2 < hi);
                self.p2 += 1;
            }
            Op::Swap => {
                assert_ne!(self.p1, self.p2);
                self.digits.swap(self.p1, self.p2);
            }
            _ => unreachable!("apply_op is for atomic actions"),
        }
    }

    fn atomic(&mut self, op: Op) {
        let id = self.id_of(op);
        self.log(id);
        self.atomic_count += 1;
        self.apply_op(op);
    }

    /// Runs the expert routine for a non-atomic program inside its own task
    /// frame. Callers must have pushed the frame (see [`oracle_apply`]).
    fn oracle_body(&mut self, prog: ProgramId) -> Result<()> {
        let (lo, hi) = self.scope();
        match self.op(prog) {
            Op::RShift => {
                self.atomic(Op::Ptr1R);
                self.atomic(Op::Ptr2R);
            }
            Op::LShift => {
                self.atomic(Op::Ptr1L);
                self.atomic(Op::Ptr2L);
            }
            Op::CompSwap => {
                if self.p1 == self.p2 {
                    if self.p1 == lo {
                        return Ok(()); // cannot move pointer 2 left: no-op
                    }
                    self.atomic(Op::Ptr2L);
                }
                let (a, b) = (self.p1.min(self.p2), self.p1.max(self.p2));
                if self.digits[a] > self.digits[b] {
                    self.atomic(Op::Swap);
                }
            }
            Op::Reset => self.oracle_reset(lo)?,
            Op::Bubble => self.oracle_bubble(lo, hi)?,
            Op::BubbleSort => self.oracle_bubblesort(lo, hi)?,
            _ => {
                return Err(Error::Usage(format!(
                    "oracle_apply on atomic program {}",
                    self.library.name(prog)
                )))
            }
        }
        Ok(())
    }

    fn oracle_sub(&mut self, op: Op) -> Result<()> {
        let id = self.id_of(op);
        self.oracle_apply_internal(id)
    }

    fn oracle_reset(&mut self, lo: usize) -> Result<()> {
        if self.mode == SortMode::Recursive && self.p1 > lo && self.p2 > lo {
            if !(self.p1 == lo + 1 && self.p2 == lo + 1) {
                // Recurse on the sub-list, then one joint left-shift.
                self.oracle_self_call(self.id_of(Op::Reset))?;
            }
            self.oracle_sub(Op::LShift)?;
        } else {
            while self.p1 > lo {
                self.atomic(Op::Ptr1L);
            }
            while self.p2 > lo {
                self.atomic(Op::Ptr2L);
            }
        }
        Ok(())
    }

    fn oracle_bubble(&mut self, lo: usize, hi: usize) -> Result<()> {
        if lo == hi {
            return Ok(());
        }
        if self.mode == SortMode::Recursive {
            self.atomic(Op::Ptr2R);
            self.oracle_sub(Op::CompSwap)?;
            self.atomic(Op::Ptr1R);
            self.oracle_self_call(self.id_of(Op::Bubble))?;
        } else {
            self.atomic(Op::Ptr2R);
            loop {
                self.oracle_sub(Op::CompSwap)?;
                if self.p2 == hi {
                    break;
                }
                self.oracle_sub(Op::RShift)?;
            }
        }
        Ok(())
    }

    fn oracle_bubblesort(&mut self, lo: usize, hi: usize) -> Result<()> {
        if lo == hi {
            return Ok(());
        }
        if self.mode == SortMode::Recursive {
            self.oracle_sub(Op::Bubble)?;
            self.oracle_sub(Op::Reset)?;
            self.oracle_self_call(self.id_of(Op::BubbleSort))?;
        } else if self.mode == SortMode::Flat {
            // Atomic-only bubble sort over the two pointers.
            let n = hi - lo + 1;
            for _ in 0..n - 1 {
                self.atomic(Op::Ptr2R);
                loop {
                    if self.digits[self.p1] > self.digits[self.p2] {
                        self.atomic(Op::Swap);
                    }
                    if self.p2 == hi {
                        break;
                    }
                    self.atomic(Op::Ptr1R);
                    self.atomic(Op::Ptr2R);
                }
                while self.p1 > lo {
                    self.atomic(Op::Ptr1L);
                }
                while self.p2 > lo {
                    self.atomic(Op::Ptr2L);
                }
            }
        } else {
            let n = hi - lo + 1;
            for pass in 0..n - 1 {
                if pass > 0 {
                    self.oracle_sub(Op::Reset)?;
                }
                self.oracle_sub(Op::Bubble)?;
            }
        }
        Ok(())
    }

    /// Recursive self-call inside an oracle routine: shrink, run, restore.
    fn oracle_self_call(&mut self, prog: ProgramId) -> Result<()> {
        self.start_task(prog)?;
        let r = self.oracle_body(prog);
        self.end_task()?;
        r
    }

    fn oracle_apply_internal(&mut self, prog: ProgramId) -> Result<()> {
        if !self.precondition(prog) {
            return Err(Error::IllegalAction {
                action: self.library.name(prog).to_string(),
                reason: "oracle_apply precondition violated".to_string(),
            });
        }
        self.start_task(prog)?;
        let r = self.oracle_body(prog);
        let post = self.postcondition(prog);
        self.end_task()?;
        r?;
        assert!(post, "oracle left {} unsatisfied", self.library.name(prog));
        Ok(())
    }
}

impl Environment for SortEnv {
    type Snap = SortSnapshot;

    fn library(&self) -> &ProgramLibrary {
        &self.library
    }

    fn observation_dim(&self) -> usize {
        26
    }

    /// `(v1, v2, b_1i, b_1e, b_2i, b_2e, b_12, b_s)` with one-hot digit
    /// encodings, all relative to the current scope.
    fn observe(&self) -> Observation {
        let (lo, hi) = self.scope();
        let mut v = vec![0.0; 26];
        v[self.digits[self.p1] as usize] = 1.0;
        v[10 + self.digits[self.p2] as usize] = 1.0;
        v[20] = (self.p1 == lo) as u8 as f64;
        v[21] = (self.p1 == hi) as u8 as f64;
        v[22] = (self.p2 == lo) as u8 as f64;
        v[23] = (self.p2 == hi) as u8 as f64;
        v[24] = (self.p1 == self.p2) as u8 as f64;
        v[25] = self.scoped_sorted() as u8 as f64;
        Observation(v)
    }

    fn snapshot(&self) -> SortSnapshot {
        SortSnapshot {
            digits: self.digits.clone(),
            p1: self.p1,
            p2: self.p2,
            frames: self.frames.clone(),
        }
    }

    fn restore(&mut self, snap: &SortSnapshot) {
        self.digits = snap.digits.clone();
        self.p1 = snap.p1;
        self.p2 = snap.p2;
        self.frames = snap.frames.clone();
    }

    fn apply_atomic(&mut self, action: ProgramId) -> Result<()> {
        let op = self.op(action);
        if op == Op::Stop || self.library.level(action) != 0 {
            return Err(Error::Usage(format!(
                "apply_atomic on non-atomic action {}",
                self.library.name(action)
            )));
        }
        if !self.precondition(action) {
            return Err(Error::IllegalAction {
                action: self.library.name(action).to_string(),
                reason: format!("precondition false at p1={}, p2={}", self.p1, self.p2),
            });
        }
        self.atomic(op);
        Ok(())
    }

    fn precondition(&self, prog: ProgramId) -> bool {
        let (lo, hi) = self.scope();
        self.precondition_in(prog, lo, hi)
    }

    fn postcondition(&self, prog: ProgramId) -> bool {
        let frame = match self.frames.last() {
            Some(f) if f.prog == prog => f.clone(),
            _ => return false,
        };
        let (lo, hi) = (frame.lo, frame.hi);
        match self.op(prog) {
            Op::RShift => self.p1 == frame.entry_p1 + 1 && self.p2 == frame.entry_p2 + 1,
            Op::LShift => {
                frame.entry_p1 > lo
                    && frame.entry_p2 > lo
                    && self.p1 == frame.entry_p1 - 1
                    && self.p2 == frame.entry_p2 - 1
            }
            Op::CompSwap => {
                let (a, b) = if frame.entry_p1 == frame.entry_p2 {
                    if frame.entry_p1 == lo {
                        return true; // no-op corner at scope start
                    }
                    (frame.entry_p1 - 1, frame.entry_p1)
                } else {
                    (frame.entry_p1, frame.entry_p2)
                };
                self.digits[a] <= self.digits[b]
            }
            Op::Reset => self.p1 == lo && self.p2 == lo,
            Op::Bubble => {
                let max = *self.digits[lo..=hi].iter().max().unwrap();
                self.digits[hi] == max
            }
            Op::BubbleSort => self.scoped_sorted(),
            _ => false,
        }
    }

    fn self_call_allowed(&self, prog: ProgramId) -> bool {
        if self.mode != SortMode::Recursive || !self.library.get(prog).recursive {
            return false;
        }
        if self.current_task() != Some(prog) {
            return false;
        }
        let Some((lo, hi)) = self.shrunk_scope(prog) else {
            return false;
        };
        // Pointers must stay inside the shrunk scope and the precondition is
        // tested in the new environment.
        self.p1 >= lo
            && self.p1 <= hi
            && self.p2 >= lo
            && self.p2 <= hi
            && self.precondition_in(prog, lo, hi)
    }

    fn start_task(&mut self, prog: ProgramId) -> Result<()> {
        let self_call = self.current_task() == Some(prog);
        let (lo, hi) = if self_call {
            if !self.self_call_allowed(prog) {
                return Err(Error::IllegalAction {
                    action: self.library.name(prog).to_string(),
                    reason: "recursive self-call not allowed here".to_string(),
                });
            }
            self.shrunk_scope(prog).unwrap()
        } else {
            if !self.precondition(prog) {
                return Err(Error::IllegalAction {
                    action: self.library.name(prog).to_string(),
                    reason: "start_task precondition violated".to_string(),
                });
            }
            self.scope()
        };
        self.log(prog);
        self.frames.push(TaskFrame {
            prog,
            lo,
            hi,
            entry_p1: self.p1,
            entry_p2: self.p2,
        });
        Ok(())
    }

    fn end_task(&mut self) -> Result<()> {
        self.frames
            .pop()
            .map(|_| ())
            .ok_or_else(|| Error::Usage("end_task with no active task".to_string()))
    }

    fn current_task(&self) -> Option<ProgramId> {
        self.frames.last().map(|f| f.prog)
    }

    fn oracle_apply(&mut self, prog: ProgramId) -> Result<()> {
        self.oracle_apply_internal(prog)
    }

    fn init_for_task(&mut self, prog: ProgramId, rng: &mut ChaCha8Rng, size: Option<usize>) {
        let len =
            size.unwrap_or_else(|| rng.random_range(self.length_range.0..=self.length_range.1));
        let len = len.max(1);
        self.digits = (0..len).map(|_| rng.random_range(0..=9u8)).collect();
        self.frames.clear();
        let hi = len - 1;
        match self.op(prog) {
            Op::Bubble | Op::BubbleSort => {
                self.p1 = 0;
                self.p2 = 0;
            }
            Op::Reset => loop {
                self.p1 = rng.random_range(0..=hi);
                self.p2 = rng.random_range(0..=hi);
                if !(self.p1 == 0 && self.p2 == 0) {
                    break;
                }
            },
            Op::RShift => {
                self.p1 = rng.random_range(0..hi.max(1));
                self.p2 = rng.random_range(0..hi.max(1));
            }
            Op::LShift => {
                self.p1 = rng.random_range(1..=hi);
                self.p2 = rng.random_range(1..=hi);
            }
            Op::CompSwap => {
                self.p1 = rng.random_range(0..=hi);
                self.p2 = if self.p1 < hi && rng.random_range(0..2) == 1 {
                    self.p1 + 1
                } else {
                    self.p1
                };
            }
            _ => loop {
                self.p1 = rng.random_range(0..=hi);
                self.p2 = rng.random_range(0..=hi);
                if self.precondition(prog) {
                    break;
                }
            },
        }
        debug_assert!(
            self.precondition(prog),
            "init_for_task left precondition false for {}",
            self.library.name(prog)
        );
    }

    fn default_max_depth(&self) -> usize {
        match self.mode {
            // One pass is ~3n atomics, a full sort ~5n^2.
            SortMode::Iterative | SortMode::Flat => 5 * self.scope_len() * self.scope_len() + 10,
            SortMode::Recursive => 20,
        }
    }
}

/// Convenience used by tests and evaluation.
pub fn legal_action_names(env: &SortEnv, current: ProgramId) -> Vec<String> {
    legal_actions(env, current)
        .into_iter()
        .map(|id| env.library().name(id).to_string())
        .collect()
}
