//! Environment and program-library contract shared by the task environments.
//!
//! A program library is an ordered list of named programs with levels and a
//! recursion flag; level-0 programs are atomic actions. Environments expose
//! pre/post-condition tests, task scoping for recursive calls, exact
//! snapshot/restore, and a built-in expert routine per non-atomic program
//! (the oracle used for teacher forcing and as ground truth in tests).

pub mod hanoi;
pub mod sorting;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Stable action id: index into the owning [`ProgramLibrary`].
pub type ProgramId = usize;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProgramSpec {
    pub name: String,
    pub level: u32,
    pub recursive: bool,
}

impl ProgramSpec {
    fn new(name: &str, level: u32, recursive: bool) -> Self {
        Self {
            name: name.to_string(),
            level,
            recursive,
        }
    }
}

/// Ordered program table defining the action space. Indices are dense and
/// stable; exactly one program is named STOP, at level 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgramLibrary {
    pub programs: Vec<ProgramSpec>,
}

impl ProgramLibrary {
    pub fn new(programs: Vec<ProgramSpec>) -> Self {
        let lib = Self { programs };
        debug_assert_eq!(lib.stop_id(), lib.find("STOP").expect("STOP missing"));
        lib
    }

    pub fn len(&self) -> usize {
        self.programs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.programs.is_empty()
    }

    pub fn get(&self, id: ProgramId) -> &ProgramSpec {
        &self.programs[id]
    }

    pub fn name(&self, id: ProgramId) -> &str {
        &self.programs[id].name
    }

    pub fn level(&self, id: ProgramId) -> u32 {
        self.programs[id].level
    }

    pub fn find(&self, name: &str) -> Option<ProgramId> {
        self.programs.iter().position(|p| p.name == name)
    }

    pub fn stop_id(&self) -> ProgramId {
        self.programs
            .iter()
            .position(|p| p.name == "STOP")
            .expect("library must contain STOP")
    }

    pub fn max_level(&self) -> u32 {
        self.programs.iter().map(|p| p.level).max().unwrap_or(0)
    }

    /// Trainable tasks: every program above level 0.
    pub fn trainable(&self) -> impl Iterator<Item = ProgramId> + '_ {
        self.programs
            .iter()
            .enumerate()
            .filter(|(_, p)| p.level > 0)
            .map(|(i, _)| i)
    }

    /// Checks that a declared table matches this one, for config/checkpoint
    /// validation.
    pub fn validate_against(&self, declared: &[ProgramSpec]) -> Result<()> {
        if declared.len() != self.programs.len() {
            return Err(Error::Config(format!(
                "program library size mismatch: declared {}, built-in {}",
                declared.len(),
                self.programs.len()
            )));
        }
        for (d, b) in declared.iter().zip(self.programs.iter()) {
            if d != b {
                return Err(Error::Config(format!(
                    "program mismatch: declared {:?}, built-in {:?}",
                    d, b
                )));
            }
        }
        Ok(())
    }
}

/// A deterministic encoding of the current environment state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation(pub Vec<f64>);

impl Observation {
    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// Contract every task environment implements.
///
/// Instances are single-threaded mutable state machines; snapshots are plain
/// immutable values and restore exactly (including scope stacks).
pub trait Environment {
    type Snap: Clone + PartialEq + std::fmt::Debug + Send;

    fn library(&self) -> &ProgramLibrary;
    fn observation_dim(&self) -> usize;

    fn observe(&self) -> Observation;
    fn snapshot(&self) -> Self::Snap;
    fn restore(&mut self, snap: &Self::Snap);

    /// Applies a level-0 action (not STOP). Errors if the precondition fails;
    /// the search masks actions so this is never triggered there.
    fn apply_atomic(&mut self, action: ProgramId) -> Result<()>;

    /// Pure boolean precondition test on the current state.
    fn precondition(&self, prog: ProgramId) -> bool;

    /// Post-condition of the currently active task occurrence of `prog`,
    /// evaluated against the state recorded when the task started.
    fn postcondition(&self, prog: ProgramId) -> bool;

    /// Whether a recursive self-call of the active task would be legal in the
    /// shrunk scope (tested in the new environment, base cases excluded).
    fn self_call_allowed(&self, prog: ProgramId) -> bool;

    /// Pushes a task scope. A self-call of the active recursive task shrinks
    /// the scope; any other call is a plain push.
    fn start_task(&mut self, prog: ProgramId) -> Result<()>;

    /// Pops the current task scope, undoing any scope shrink.
    fn end_task(&mut self) -> Result<()>;

    /// Currently active task, if any.
    fn current_task(&self) -> Option<ProgramId>;

    /// Jumps the environment to a state satisfying `postcondition(prog)` by
    /// running the built-in expert routine.
    fn oracle_apply(&mut self, prog: ProgramId) -> Result<()>;

    /// Draws a random state satisfying `precondition(prog)`. `size` overrides
    /// the configured problem size (list length / disk count).
    fn init_for_task(&mut self, prog: ProgramId, rng: &mut ChaCha8Rng, size: Option<usize>);

    /// Search depth limit appropriate for the current task and state.
    fn default_max_depth(&self) -> usize;
}

/// Environment-kind dispatch for code paths driven by run configuration.
#[derive(Clone)]
pub enum AnyEnv {
    Sorting(sorting::SortEnv),
    Hanoi(hanoi::HanoiEnv),
}

#[derive(Debug, Clone, PartialEq)]
pub enum AnySnap {
    Sorting(sorting::SortSnapshot),
    Hanoi(hanoi::HanoiSnapshot),
}

macro_rules! delegate {
    ($self:ident, $e:ident => $body:expr) => {
        match $self {
            AnyEnv::Sorting($e) => $body,
            AnyEnv::Hanoi($e) => $body,
        }
    };
}

impl Environment for AnyEnv {
    type Snap = AnySnap;

    fn library(&self) -> &ProgramLibrary {
        delegate!(self, e => e.library())
    }

    fn observation_dim(&self) -> usize {
        delegate!(self, e => e.observation_dim())
    }

    fn observe(&self) -> Observation {
        delegate!(self, e => e.observe())
    }

    fn snapshot(&self) -> AnySnap {
        match self {
            AnyEnv::Sorting(e) => AnySnap::Sorting(e.snapshot()),
            AnyEnv::Hanoi(e) => AnySnap::Hanoi(e.snapshot()),
        }
    }

    fn restore(&mut self, snap: &AnySnap) {
        match (self, snap) {
            (AnyEnv::Sorting(e), AnySnap::Sorting(s)) => e.restore(s),
            (AnyEnv::Hanoi(e), AnySnap::Hanoi(s)) => e.restore(s),
            _ => panic!("snapshot/environment kind mismatch"),
        }
    }

    fn apply_atomic(&mut self, action: ProgramId) -> Result<()> {
        delegate!(self, e => e.apply_atomic(action))
    }

    fn precondition(&self, prog: ProgramId) -> bool {
        delegate!(self, e => e.precondition(prog))
    }

    fn postcondition(&self, prog: ProgramId) -> bool {
        delegate!(self, e => e.postcondition(prog))
    }

    fn self_call_allowed(&self, prog: ProgramId) -> bool {
        delegate!(self, e => e.self_call_allowed(prog))
    }

    fn start_task(&mut self, prog: ProgramId) -> Result<()> {
        delegate!(self, e => e.start_task(prog))
    }

    fn end_task(&mut self) -> Result<()> {
        delegate!(self, e => e.end_task())
    }

    fn current_task(&self) -> Option<ProgramId> {
        delegate!(self, e => e.current_task())
    }

    fn oracle_apply(&mut self, prog: ProgramId) -> Result<()> {
        delegate!(self, e => e.oracle_apply(prog))
    }

    fn init_for_task(&mut self, prog: ProgramId, rng: &mut ChaCha8Rng, size: Option<usize>) {
        delegate!(self, e => e.init_for_task(prog, rng, size))
    }

    fn default_max_depth(&self) -> usize {
        delegate!(self, e => e.default_max_depth())
    }
}

/// Actions available to `current`: programs of strictly lower level with a
/// satisfied precondition, the program itself when recursive (tested in the
/// shrunk scope), and always STOP.
pub fn legal_actions<E: Environment + ?Sized>(env: &E, current: ProgramId) -> Vec<ProgramId> {
    let lib = env.library();
    let stop = lib.stop_id();
    let cur_level = lib.level(current);
    let mut out = Vec::new();
    for id in 0..lib.len() {
        if id == stop {
            out.push(id);
        } else if id == current {
            if lib.get(id).recursive && env.self_call_allowed(id) {
                out.push(id);
            }
        } else if lib.level(id) < cur_level && env.precondition(id) {
            out.push(id);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lib() -> ProgramLibrary {
        ProgramLibrary::new(vec![
            ProgramSpec::new("STOP", 0, false),
            ProgramSpec::new("A", 0, false),
            ProgramSpec::new("B", 1, true),
        ])
    }

    #[test]
    fn stop_is_found_and_unique() {
        assert_eq!(lib().stop_id(), 0);
        assert_eq!(lib().max_level(), 1);
    }

    #[test]
    fn trainable_excludes_atomics() {
        let l = lib();
        let t: Vec<_> = l.trainable().collect();
        assert_eq!(t, vec![2]);
    }

    #[test]
    fn validation_rejects_mismatches() {
        let l = lib();
        assert!(l.validate_against(&l.programs).is_ok());
        let mut wrong = l.programs.clone();
        wrong[1].level = 2;
        assert!(l.validate_against(&wrong).is_err());
        assert!(l.validate_against(&wrong[..2]).is_err());
    }
}
