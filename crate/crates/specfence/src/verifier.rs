//! Path-exploration engine with four defense modes.
//!
//! Verification runs in phases:
//!
//! 1. Every architectural path is explored depth-first (taken direction
//!    first) from the entry state. Architectural unsafety rejects the
//!    program in every mode. Along the way the engine records, per stack
//!    store, what each path overwrites (for the store-bypass barrier rule)
//!    and every variable map-pointer advance (for index-mask planning).
//! 2. Store-bypass barriers and index masks are finalized: a `nospec_v4`
//!    after every critical stack store unless one already follows it, and a
//!    power-of-two index mask before every variable map advance whose index
//!    is not already bounded by its known bits.
//! 3. In the speculating modes the architectural walk is replayed; at every
//!    conditional branch each direction the CPU could mispredict into is
//!    explored with the branch refinement withheld. Unsafe speculative
//!    behavior rejects the program in `FullReject` mode and plants a
//!    `nospec_v1` before the offending instruction in `Verifence` mode.
//!    Barriers end speculative paths the way `exit` ends architectural
//!    ones, which keeps re-verification of a patched program quiet and cuts
//!    exploration cost. When the shared instruction budget runs out mid
//!    speculation, `Verifence` fences the frontier instead of rejecting.

use crate::absdomain::{
    abstract_step, branch_step, classify_stack_store, variable_map_advance, AbstractState,
    BranchStep, MaskPolicy, StepOutcome, StlObservation, UnsafeKind,
};
use crate::isa::{validate_structure, Instruction, Program, Register};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

/// Which transient-execution defenses are applied.
///
/// Indirect-branch hardening is assumed always-on and needs no program
/// analysis, so the baseline mode performs none beyond architectural
/// verification and index masking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DefenseMode {
    /// Architectural verification only.
    None,
    /// Adds barriers after critical stack stores.
    Stl,
    /// Adds speculative-path verification; unsafe transient behavior
    /// rejects the program.
    FullReject,
    /// Adds speculative-path verification; unsafe transient behavior is
    /// fenced with `nospec_v1` instead of rejecting.
    Verifence,
}

impl DefenseMode {
    /// The store-bypass pass is part of every speculating mode.
    pub fn stl_active(self) -> bool {
        !matches!(self, DefenseMode::None)
    }

    pub fn speculates(self) -> bool {
        matches!(self, DefenseMode::FullReject | DefenseMode::Verifence)
    }

    pub const ALL: [DefenseMode; 4] =
        [DefenseMode::None, DefenseMode::Stl, DefenseMode::FullReject, DefenseMode::Verifence];
}

impl std::fmt::Display for DefenseMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            DefenseMode::None => "none",
            DefenseMode::Stl => "stl",
            DefenseMode::FullReject => "full-reject",
            DefenseMode::Verifence => "verifence",
        };
        f.write_str(s)
    }
}

/// Verifier tuning knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerifierConfig {
    pub mode: DefenseMode,
    /// Max instructions simulated per path.
    pub insn_budget: u64,
    /// Max instructions simulated across all paths, architectural and
    /// speculative combined.
    pub total_budget: u64,
    /// Multiplier applied to both budgets when speculative verification is
    /// active.
    pub limit_factor: u64,
    /// Fraction of the total budget at which speculative paths are cut
    /// short.
    pub premature_fence_threshold: f64,
}

impl VerifierConfig {
    pub fn new(mode: DefenseMode) -> VerifierConfig {
        VerifierConfig {
            mode,
            insn_budget: 10_000,
            total_budget: 1_000_000,
            limit_factor: 4,
            premature_fence_threshold: 0.9,
        }
    }

    fn check(&self) {
        assert!(self.insn_budget > 0 && self.total_budget > 0, "budgets must be positive");
        assert!(self.limit_factor >= 1, "limit factor must be at least 1");
        assert!(
            self.premature_fence_threshold > 0.0 && self.premature_fence_threshold <= 1.0,
            "threshold must be in (0, 1]"
        );
    }

    fn effective_insn_budget(&self) -> u64 {
        if self.mode.speculates() {
            self.insn_budget.saturating_mul(self.limit_factor)
        } else {
            self.insn_budget
        }
    }

    fn effective_total_budget(&self) -> u64 {
        if self.mode.speculates() {
            self.total_budget.saturating_mul(self.limit_factor)
        } else {
            self.total_budget
        }
    }
}

/// Where a patch instruction goes relative to its target index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Placement {
    Before,
    After,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PatchKind {
    /// Barrier before an instruction a mispredicted path must not reach.
    NospecV1,
    /// Barrier after a store whose bypass would be unsafe.
    NospecV4,
    /// `reg &= padded_size - 1` before a variable map-pointer advance.
    MaskIndex { map_id: u32, reg: Register },
}

/// One rewrite the patcher must apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PatchDirective {
    pub index: usize,
    pub kind: PatchKind,
    pub placement: Placement,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RejectionCategory {
    Types,
    VariableStackAccess,
    Breakout,
    TooComplex,
}

impl std::fmt::Display for RejectionCategory {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            RejectionCategory::Types => "types",
            RejectionCategory::VariableStackAccess => "variable-stack-access",
            RejectionCategory::Breakout => "breakout",
            RejectionCategory::TooComplex => "too-complex",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Accept,
    Reject(RejectionCategory),
}

impl Verdict {
    pub fn is_accept(&self) -> bool {
        matches!(self, Verdict::Accept)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifyStats {
    pub paths_explored: u64,
    pub spec_paths_explored: u64,
    pub insns_simulated: u64,
    pub spec_insns_simulated: u64,
    pub v1_count: u64,
    pub v4_count: u64,
    pub mask_count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationResult {
    pub verdict: Verdict,
    /// Empty on rejection; sorted by `(index, kind)`.
    pub patches: Vec<PatchDirective>,
    pub stats: VerifyStats,
}

fn category_of(kind: UnsafeKind) -> RejectionCategory {
    match kind {
        UnsafeKind::TypeViolation => RejectionCategory::Types,
        UnsafeKind::Breakout | UnsafeKind::UninitRead => RejectionCategory::Breakout,
        UnsafeKind::VariableStackAccess => RejectionCategory::VariableStackAccess,
    }
}

/// Verifies a structurally valid program under the configured defense mode.
///
/// Panics if `validate_structure` reports errors; structural validity is
/// the caller's contract, distinct from a `Reject` verdict.
pub fn verify(prog: &Program, cfg: &VerifierConfig) -> VerificationResult {
    cfg.check();
    let structural = validate_structure(prog);
    assert!(structural.is_empty(), "verify requires a structurally valid program: {structural:?}");
    Engine::new(prog, cfg).run()
}

struct Engine<'a> {
    prog: &'a Program,
    cfg: &'a VerifierConfig,
    insn_budget: u64,
    total_budget: u64,
    premature_at: u64,
    /// Shared instruction counter across architectural and speculative
    /// exploration.
    total: u64,
    stats: VerifyStats,
    stl: BTreeMap<usize, StlObservation>,
    mask_sites: BTreeMap<usize, (u32, Register)>,
    mask_pcs: BTreeSet<usize>,
    v4_sites: BTreeSet<usize>,
    v1_sites: BTreeSet<usize>,
}

impl<'a> Engine<'a> {
    fn new(prog: &'a Program, cfg: &'a VerifierConfig) -> Engine<'a> {
        let total_budget = cfg.effective_total_budget();
        let premature_at = (cfg.premature_fence_threshold * total_budget as f64) as u64;
        Engine {
            prog,
            cfg,
            insn_budget: cfg.effective_insn_budget(),
            total_budget,
            premature_at,
            total: 0,
            stats: VerifyStats::default(),
            stl: BTreeMap::new(),
            mask_sites: BTreeMap::new(),
            mask_pcs: BTreeSet::new(),
            v4_sites: BTreeSet::new(),
            v1_sites: BTreeSet::new(),
        }
    }

    fn run(mut self) -> VerificationResult {
        if let Err(category) = self.explore_architectural() {
            return self.reject(category);
        }
        self.finalize_stl_and_masks();
        if self.cfg.mode.speculates() {
            if let Err(category) = self.replay_with_speculation() {
                return self.reject(category);
            }
        }
        self.accept()
    }

    fn reject(self, category: RejectionCategory) -> VerificationResult {
        VerificationResult {
            verdict: Verdict::Reject(category),
            patches: Vec::new(),
            stats: self.stats,
        }
    }

    fn accept(mut self) -> VerificationResult {
        let mut patches: Vec<PatchDirective> = Vec::new();
        for &pc in &self.v1_sites {
            patches.push(PatchDirective {
                index: pc,
                kind: PatchKind::NospecV1,
                placement: Placement::Before,
            });
        }
        for &pc in &self.v4_sites {
            patches.push(PatchDirective {
                index: pc,
                kind: PatchKind::NospecV4,
                placement: Placement::After,
            });
        }
        for (&pc, &(map_id, reg)) in &self.mask_sites {
            patches.push(PatchDirective {
                index: pc,
                kind: PatchKind::MaskIndex { map_id, reg },
                placement: Placement::Before,
            });
        }
        patches.sort_unstable_by_key(|d| (d.index, d.kind, d.placement));
        self.stats.v1_count = self.v1_sites.len() as u64;
        self.stats.v4_count = self.v4_sites.len() as u64;
        self.stats.mask_count = self.mask_sites.len() as u64;
        VerificationResult { verdict: Verdict::Accept, patches, stats: self.stats }
    }

    /// Phase 1: full architectural exploration with recording.
    fn explore_architectural(&mut self) -> Result<(), RejectionCategory> {
        let mut stack = vec![AbstractState::entry()];
        while let Some(state) = stack.pop() {
            if state.budget_used >= self.insn_budget || self.total >= self.total_budget {
                return Err(RejectionCategory::TooComplex);
            }
            self.total += 1;
            self.stats.insns_simulated += 1;
            let insn = &self.prog.instructions[state.pc];
            if let Some(obs) = classify_stack_store(&state, insn) {
                self.stl
                    .entry(state.pc)
                    .and_modify(|existing| {
                        if obs == StlObservation::Critical {
                            *existing = StlObservation::Critical;
                        }
                    })
                    .or_insert(obs);
            }
            if let Some((map_id, reg, needs_mask)) = variable_map_advance(&state, insn, self.prog)
            {
                if needs_mask {
                    self.mask_sites.insert(state.pc, (map_id, reg));
                }
            }
            match abstract_step(&state, insn, self.prog, MaskPolicy::PlanAhead) {
                StepOutcome::Continue(mut succs) => {
                    // LIFO stack: reverse so the first successor (the taken
                    // direction on branches) is explored first.
                    succs.reverse();
                    stack.extend(succs);
                }
                StepOutcome::Exit => self.stats.paths_explored += 1,
                StepOutcome::Unsafe(kind, _) => return Err(category_of(kind)),
            }
        }
        Ok(())
    }

    /// Phase 2: decide barrier and mask placements from the recordings.
    fn finalize_stl_and_masks(&mut self) {
        if self.cfg.mode.stl_active() {
            for (&pc, &obs) in &self.stl {
                if obs != StlObservation::Critical {
                    continue;
                }
                // Idempotence: a store already followed by a barrier needs
                // no second one.
                if self.prog.instructions.get(pc + 1) == Some(&Instruction::NospecV4) {
                    continue;
                }
                self.v4_sites.insert(pc);
            }
        }
        self.mask_pcs = self.mask_sites.keys().copied().collect();
    }

    /// Phase 3: replay the architectural walk; at every conditional branch,
    /// explore each direction the CPU could mispredict into.
    fn replay_with_speculation(&mut self) -> Result<(), RejectionCategory> {
        let mut stack = vec![AbstractState::entry()];
        while let Some(state) = stack.pop() {
            let insn = &self.prog.instructions[state.pc];
            if insn.is_cond_jump() {
                match branch_step(&state, insn) {
                    BranchStep::Unsafe(..) => {
                        unreachable!("architectural phase accepted this branch")
                    }
                    BranchStep::Forks { taken_pc, fallthrough_pc, taken, fallthrough } => {
                        // A misprediction into a direction exists whenever
                        // the opposite direction is architecturally
                        // possible. Taken direction first, as everywhere.
                        if fallthrough.is_some() {
                            self.speculate_from(state.mispredicted(taken_pc))?;
                        }
                        if taken.is_some() {
                            self.speculate_from(state.mispredicted(fallthrough_pc))?;
                        }
                        if let Some(ft) = fallthrough {
                            stack.push(ft);
                        }
                        if let Some(tk) = taken {
                            stack.push(tk);
                        }
                    }
                }
            } else {
                match abstract_step(&state, insn, self.prog, MaskPolicy::PlanAhead) {
                    StepOutcome::Continue(mut succs) => {
                        succs.reverse();
                        stack.extend(succs);
                    }
                    StepOutcome::Exit => {}
                    StepOutcome::Unsafe(..) => {
                        unreachable!("architectural phase accepted this instruction")
                    }
                }
            }
        }
        Ok(())
    }

    /// Depth-first exploration of one mispredicted branch direction.
    /// Further branches inside the path fork both ways unrefined.
    fn speculate_from(&mut self, entry: AbstractState) -> Result<(), RejectionCategory> {
        let mut stack = vec![entry];
        while let Some(state) = stack.pop() {
            let pc = state.pc;
            // Barriers behave like program exits on transient paths: an
            // existing barrier instruction or an already planted fence ends
            // the path before this instruction runs.
            if self.v1_sites.contains(&pc)
                || matches!(
                    self.prog.instructions[pc],
                    Instruction::NospecV1 | Instruction::NospecV4
                )
            {
                self.stats.spec_paths_explored += 1;
                continue;
            }
            // Budget exhaustion mid-speculation: fence the frontier rather
            // than verify further, or reject in strict mode.
            if self.total >= self.premature_at || state.budget_used >= self.insn_budget {
                match self.cfg.mode {
                    DefenseMode::FullReject => return Err(RejectionCategory::TooComplex),
                    DefenseMode::Verifence => {
                        self.v1_sites.insert(pc);
                        self.stats.spec_paths_explored += 1;
                        continue;
                    }
                    _ => unreachable!(),
                }
            }
            self.total += 1;
            self.stats.spec_insns_simulated += 1;
            let insn = &self.prog.instructions[pc];
            match abstract_step(&state, insn, self.prog, MaskPolicy::Planned(&self.mask_pcs)) {
                StepOutcome::Continue(mut succs) => {
                    // A store with a planned after-barrier completes and
                    // then the path ends, same as an existing barrier.
                    if self.v4_sites.contains(&pc) {
                        debug_assert!(insn.is_store());
                        self.stats.spec_paths_explored += 1;
                        continue;
                    }
                    succs.reverse();
                    stack.extend(succs);
                }
                StepOutcome::Exit => self.stats.spec_paths_explored += 1,
                StepOutcome::Unsafe(UnsafeKind::VariableStackAccess, _) => {
                    // No fence fallback for variable stack offsets; they
                    // reject in every mode.
                    return Err(RejectionCategory::VariableStackAccess);
                }
                StepOutcome::Unsafe(kind, _) => match self.cfg.mode {
                    DefenseMode::FullReject => return Err(category_of(kind)),
                    DefenseMode::Verifence => {
                        self.v1_sites.insert(pc);
                        self.stats.spec_paths_explored += 1;
                    }
                    _ => unreachable!(),
                },
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::parse_asm;

    /// The worked speculative-type-confusion example: `reg` is a scalar on
    /// one architectural path and a map pointer on the other; a mispredict
    /// of the guard dereferences the scalar.
    pub(crate) const GADGET: &str = "\
.ctx size=16
.map 0 size=64
    r0 = *(u64)(r1 + 0)   ; selector flag, doubles as exit code
    r6 = *(u64)(r1 + 8)   ; reg := scalar input
    if r0 == 0 goto A     ; select: keep the scalar when the flag is clear
    r6 = map_ptr 0        ; reg := public pointer
A:  if r0 == 0 goto C
B:  r7 = *(u8)(r6 + 0)    ; value = *reg
    r6 += r7              ; channel index advance
    r7 = *(u8)(r6 + 0)    ; touch channel line
C:  exit
";

    fn cfg(mode: DefenseMode) -> VerifierConfig {
        VerifierConfig::new(mode)
    }

    #[test]
    fn gadget_rejected_in_strict_mode_with_type_category() {
        let p = parse_asm(GADGET).unwrap();
        let result = verify(&p, &cfg(DefenseMode::FullReject));
        assert_eq!(result.verdict, Verdict::Reject(RejectionCategory::Types));
        assert!(result.patches.is_empty());
    }

    #[test]
    fn gadget_fenced_at_unsafe_block_only() {
        let p = parse_asm(GADGET).unwrap();
        let result = verify(&p, &cfg(DefenseMode::Verifence));
        assert_eq!(result.verdict, Verdict::Accept);
        let v1: Vec<usize> = result
            .patches
            .iter()
            .filter(|d| d.kind == PatchKind::NospecV1)
            .map(|d| d.index)
            .collect();
        // Exactly one barrier, before the dereference that starts block B
        // (instruction 5); none on the path through block C (instruction 8).
        assert_eq!(v1, vec![5]);
        assert_eq!(result.stats.v1_count, 1);
        assert_eq!(result.stats.v4_count, 0);
        assert_eq!(result.stats.mask_count, 1);
        let mask = result
            .patches
            .iter()
            .find(|d| matches!(d.kind, PatchKind::MaskIndex { .. }))
            .unwrap();
        assert_eq!(mask.index, 6);
    }

    #[test]
    fn gadget_accepted_without_speculation() {
        let p = parse_asm(GADGET).unwrap();
        for mode in [DefenseMode::None, DefenseMode::Stl] {
            let result = verify(&p, &cfg(mode));
            assert_eq!(result.verdict, Verdict::Accept, "{mode:?}");
            assert_eq!(result.stats.v1_count, 0);
        }
    }

    #[test]
    fn trivial_program_accepts_everywhere_with_no_patches() {
        let p = parse_asm("r0 = 0\nexit").unwrap();
        for mode in DefenseMode::ALL {
            let result = verify(&p, &cfg(mode));
            assert_eq!(result.verdict, Verdict::Accept);
            assert!(result.patches.is_empty());
        }
    }

    #[test]
    fn stl_rule_table() {
        // Pointer spilled to the stack: critical, one v4 after it.
        let p = parse_asm("*(u64)(fp - 8) = r1\nr0 = 0\nexit").unwrap();
        let result = verify(&p, &cfg(DefenseMode::Stl));
        assert_eq!(result.verdict, Verdict::Accept);
        assert_eq!(result.stats.v4_count, 1);
        assert_eq!(
            result.patches,
            vec![PatchDirective {
                index: 0,
                kind: PatchKind::NospecV4,
                placement: Placement::After
            }]
        );

        // Scalar over scalar on every path: exempt; only the initializing
        // store before it is critical.
        let p = parse_asm("r2 = 1\n*(u64)(fp - 8) = r2\n*(u64)(fp - 8) = r2\nr0 = 0\nexit")
            .unwrap();
        let result = verify(&p, &cfg(DefenseMode::Stl));
        assert_eq!(result.stats.v4_count, 1);
        assert_eq!(result.patches[0].index, 1);

        // Scalar over an uninitialized slot: critical.
        let p = parse_asm("r2 = 1\n*(u64)(fp - 8) = r2\nr0 = 0\nexit").unwrap();
        let result = verify(&p, &cfg(DefenseMode::Stl));
        assert_eq!(result.stats.v4_count, 1);
    }

    #[test]
    fn stl_is_idempotent_over_existing_barriers() {
        let p = parse_asm("*(u64)(fp - 8) = r1\nnospec_v4\nr0 = 0\nexit").unwrap();
        let result = verify(&p, &cfg(DefenseMode::Stl));
        assert_eq!(result.verdict, Verdict::Accept);
        assert_eq!(result.stats.v4_count, 0);
    }

    #[test]
    fn stores_through_map_pointers_get_no_v4() {
        let p = parse_asm(".map 0 size=16\nr2 = map_ptr 0\n*(u64)(r2 + 0) = r2\nr0 = 0\nexit")
            .unwrap();
        let result = verify(&p, &cfg(DefenseMode::Stl));
        assert_eq!(result.verdict, Verdict::Accept);
        assert_eq!(result.stats.v4_count, 0);
    }

    #[test]
    fn unknown_map_index_gets_masked() {
        // Index loaded from the context: unbounded, so the planner masks it.
        let p = parse_asm(
            ".ctx size=8\n.map 0 size=48\nr3 = *(u8)(r1 + 0)\nr2 = map_ptr 0\nr2 += r3\nr0 = *(u8)(r2 + 0)\nexit",
        )
        .unwrap();
        for mode in DefenseMode::ALL {
            let result = verify(&p, &cfg(mode));
            assert_eq!(result.verdict, Verdict::Accept, "{mode:?}");
            assert_eq!(result.stats.mask_count, 1, "{mode:?}");
            let mask = result
                .patches
                .iter()
                .find(|d| matches!(d.kind, PatchKind::MaskIndex { .. }))
                .unwrap();
            assert_eq!(mask.index, 2);
            assert_eq!(mask.placement, Placement::Before);
        }
    }

    #[test]
    fn self_masked_index_needs_no_directive() {
        let p = parse_asm(
            ".ctx size=8\n.map 0 size=64\nr3 = *(u8)(r1 + 0)\nr3 &= 63\nr2 = map_ptr 0\nr2 += r3\nr0 = *(u8)(r2 + 0)\nexit",
        )
        .unwrap();
        let result = verify(&p, &cfg(DefenseMode::Verifence));
        assert_eq!(result.verdict, Verdict::Accept);
        assert_eq!(result.stats.mask_count, 0);
    }

    #[test]
    fn constant_advance_needs_no_directive() {
        let p = parse_asm(".map 0 size=48\nr2 = map_ptr 0\nr2 += 8\nr0 = *(u8)(r2 + 0)\nexit")
            .unwrap();
        let result = verify(&p, &cfg(DefenseMode::Verifence));
        assert_eq!(result.verdict, Verdict::Accept);
        assert!(result.patches.is_empty());
    }

    #[test]
    fn variable_stack_access_rejects_in_every_mode() {
        let p =
            parse_asm(".ctx size=8\nr3 = *(u8)(r1 + 0)\nr2 = fp\nr2 += r3\nr0 = 0\nexit").unwrap();
        for mode in DefenseMode::ALL {
            let result = verify(&p, &cfg(mode));
            assert_eq!(
                result.verdict,
                Verdict::Reject(RejectionCategory::VariableStackAccess),
                "{mode:?}"
            );
        }
    }

    #[test]
    fn speculative_uninit_read_is_breakout_or_fence() {
        // Architecturally the read only happens on the path that also
        // initializes the slot; mispredicting the second guard reaches the
        // read with the slot untouched.
        let src = "\
.ctx size=8
    r2 = *(u64)(r1 + 0)
    if r2 == 0 goto SKIP
    r3 = 1
    *(u64)(fp - 8) = r3
SKIP:
    if r2 == 0 goto OUT
    r0 = *(u64)(fp - 8)
    exit
OUT: r0 = 0
    exit
";
        let p = parse_asm(src).unwrap();
        let result = verify(&p, &cfg(DefenseMode::FullReject));
        assert_eq!(result.verdict, Verdict::Reject(RejectionCategory::Breakout));
        let result = verify(&p, &cfg(DefenseMode::Verifence));
        assert_eq!(result.verdict, Verdict::Accept);
        assert!(result.stats.v1_count >= 1);
    }

    #[test]
    fn speculative_path_stops_at_existing_barrier() {
        // Same gadget, but a barrier already guards block B.
        let src = "\
.ctx size=16
.map 0 size=64
    r0 = *(u64)(r1 + 0)
    r6 = *(u64)(r1 + 8)
    if r0 == 0 goto A
    r6 = map_ptr 0
A:  if r0 == 0 goto C
    nospec_v1
B:  r7 = *(u8)(r6 + 0)
    r6 += r7
    r7 = *(u8)(r6 + 0)
C:  exit
";
        let p = parse_asm(src).unwrap();
        let result = verify(&p, &cfg(DefenseMode::Verifence));
        assert_eq!(result.verdict, Verdict::Accept);
        assert_eq!(result.stats.v1_count, 0, "existing barrier already covers the path");
        let result = verify(&p, &cfg(DefenseMode::FullReject));
        assert_eq!(result.verdict, Verdict::Accept);
    }

    #[test]
    fn architectural_complexity_rejects_everywhere() {
        // A counted loop longer than the per-path budget.
        let src = "r2 = 200\nL: r2 -= 1\nif r2 != 0 goto L\nr0 = 0\nexit";
        let p = parse_asm(src).unwrap();
        for mode in DefenseMode::ALL {
            let mut c = cfg(mode);
            c.insn_budget = 100;
            c.limit_factor = 1;
            let result = verify(&p, &c);
            assert_eq!(result.verdict, Verdict::Reject(RejectionCategory::TooComplex), "{mode:?}");
        }
    }

    #[test]
    fn mode_monotonicity_on_small_examples() {
        for src in [GADGET, "r0 = 0\nexit", "*(u64)(fp - 8) = r1\nr0 = 0\nexit"] {
            let p = parse_asm(src).unwrap();
            let strict = verify(&p, &cfg(DefenseMode::FullReject));
            let fencing = verify(&p, &cfg(DefenseMode::Verifence));
            if strict.verdict.is_accept() {
                assert!(fencing.verdict.is_accept());
                assert_eq!(fencing.stats.v1_count, 0);
            }
        }
    }

    #[test]
    fn determinism_including_patch_order() {
        let p = parse_asm(GADGET).unwrap();
        let a = verify(&p, &cfg(DefenseMode::Verifence));
        let b = verify(&p, &cfg(DefenseMode::Verifence));
        assert_eq!(a, b);
    }
}
