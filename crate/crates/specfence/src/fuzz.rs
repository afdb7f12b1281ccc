//! Seeded random-program generation and the soundness campaign.
//!
//! The generator tracks a conservative typing state while it emits assembly
//! text, so every produced program is structurally valid and passes
//! architectural verification by construction. It is biased toward the
//! patterns the speculative defenses react to: guarded map indexing,
//! pointer/scalar selection gadgets, stack spills and reloads, and
//! conditionally initialized slots.
//!
//! The campaign verifies each program, applies the patches, and runs the
//! differential leakage oracle over an exhaustively enumerated schedule
//! space. Any leak on an accepted program is a soundness counterexample.

use crate::isa::{parse_asm, validate_structure, Program};
use crate::patcher::apply_patches;
use crate::specsim::{
    differential_leak_check, enumerate_schedules, Filling, LeakVerdict, LeakWitness, ProgramInput,
};
use crate::verifier::{verify, DefenseMode, VerifierConfig, Verdict};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Campaign parameters. Runs are reproducible from the seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FuzzConfig {
    pub seed: u64,
    pub program_count: u32,
    /// Soft cap on instructions per generated program.
    pub max_insns: u32,
    pub max_branches: u32,
    pub max_stores: u32,
    pub max_window: u64,
    pub filling_count: u32,
}

impl Default for FuzzConfig {
    fn default() -> FuzzConfig {
        FuzzConfig {
            seed: 1,
            program_count: 1000,
            max_insns: 40,
            max_branches: 3,
            max_stores: 2,
            max_window: 16,
            filling_count: 2,
        }
    }
}

/// What the generator knows about a register while emitting code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum GType {
    /// Diverged across paths or never set; not touched again except as a
    /// plain overwrite destination.
    Unusable,
    Scalar,
    CtxPtr,
    MapPtr(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SlotGen {
    /// Never stored on any path.
    Free,
    /// Scalar bytes, bit per initialized byte.
    Scalar(u8),
    /// Spilled context pointer.
    CtxPtr,
    /// Initialization differs across paths; never read again.
    Poisoned,
}

struct Gen {
    rng: ChaCha8Rng,
    lines: Vec<String>,
    insns: u32,
    branches: u32,
    labels: u32,
    // r0..r9 tracked; r1 stays the context pointer, fp is not listed.
    regs: [GType; 10],
    slots: [SlotGen; 64],
    ctx_size: u32,
    map_sizes: Vec<u32>,
}

impl Gen {
    fn new(seed: u64) -> Gen {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ctx_size = 8 * rng.gen_range(2..=4);
        let map_count = rng.gen_range(1..=2);
        let map_sizes = (0..map_count)
            .map(|_| *[16u32, 32, 48, 64, 100, 128].choose(&mut rng).unwrap())
            .collect();
        let mut regs = [GType::Unusable; 10];
        regs[0] = GType::Scalar; // set by the prologue
        regs[1] = GType::CtxPtr;
        Gen {
            rng,
            lines: Vec::new(),
            insns: 0,
            branches: 0,
            labels: 0,
            regs,
            slots: [SlotGen::Free; 64],
            ctx_size,
            map_sizes,
        }
    }

    fn emit(&mut self, line: String) {
        self.lines.push(format!("    {line}"));
        self.insns += 1;
    }

    fn label(&mut self) -> String {
        self.labels += 1;
        format!("G{}", self.labels)
    }

    fn place(&mut self, label: &str) {
        self.lines.push(format!("{label}:"));
    }

    /// A register holding a scalar, excluding r0 and r1.
    fn scalar_reg(&mut self) -> Option<usize> {
        let candidates: Vec<usize> =
            (2..10).filter(|&i| self.regs[i] == GType::Scalar).collect();
        candidates.choose(&mut self.rng).copied()
    }

    /// A register free to overwrite.
    fn fresh_reg(&mut self) -> usize {
        let unusable: Vec<usize> =
            (2..10).filter(|&i| self.regs[i] == GType::Unusable).collect();
        if let Some(&r) = unusable.choose(&mut self.rng) {
            return r;
        }
        self.rng.gen_range(2..10)
    }

    /// Aligned offset of a slot that has never been stored on any path.
    fn fresh_slot(&mut self) -> Option<usize> {
        let candidates: Vec<usize> =
            (0..64).filter(|&s| self.slots[s] == SlotGen::Free).collect();
        candidates.choose(&mut self.rng).copied()
    }

    fn slot_off(slot: usize) -> i64 {
        -512 + (slot as i64) * 8
    }

    /// Fully initialized scalar slot, if any.
    fn full_scalar_slot(&mut self) -> Option<usize> {
        let candidates: Vec<usize> =
            (0..64).filter(|&s| self.slots[s] == SlotGen::Scalar(0xff)).collect();
        candidates.choose(&mut self.rng).copied()
    }

    fn aligned_ctx_off(&mut self) -> i64 {
        8 * self.rng.gen_range(0..(self.ctx_size / 8)) as i64
    }

    fn small_imm(&mut self) -> i64 {
        *[0, 1, 2, 5, 7, 8, 16, 63, 255, -1, -8].choose(&mut self.rng).unwrap()
    }

    fn generate(mut self, max_insns: u32, max_branches: u32) -> Program {
        self.lines.push(format!(".ctx size={}", self.ctx_size));
        for (i, size) in self.map_sizes.clone().iter().enumerate() {
            self.lines.push(format!(".map {i} size={size}"));
        }
        let exit_code = self.rng.gen_range(0..16);
        self.emit(format!("r0 = {exit_code}"));

        while self.insns < max_insns {
            let branch_ok = self.branches < max_branches;
            match self.rng.gen_range(0..100) {
                0..=14 => self.tpl_alu(),
                15..=24 => self.tpl_mov(),
                25..=39 => self.tpl_ctx_load(),
                40..=54 => self.tpl_stack_store(),
                55..=64 => self.tpl_stack_load(),
                65..=74 if branch_ok => self.tpl_guarded_index(),
                75..=84 if branch_ok => self.tpl_confusion_gadget(),
                85..=89 if branch_ok => self.tpl_conditional_init(),
                90..=94 if branch_ok => self.tpl_skip_block(),
                95..=97 => self.tpl_masked_index(),
                _ => self.tpl_barrier(),
            }
        }
        self.emit("exit".to_string());

        let source = self.lines.join("\n");
        let prog = parse_asm(&source).expect("generator produced unparsable assembly");
        debug_assert!(
            validate_structure(&prog).is_empty(),
            "generator produced structurally invalid program"
        );
        prog
    }

    fn tpl_alu(&mut self) {
        let Some(dst) = self.scalar_reg() else { return self.tpl_mov() };
        let op = *["+=", "-=", "&=", "|=", "^=", "*="].choose(&mut self.rng).unwrap();
        if self.rng.gen_bool(0.3) {
            if let Some(src) = self.scalar_reg() {
                self.emit(format!("r{dst} {op} r{src}"));
                return;
            }
        }
        if self.rng.gen_bool(0.2) {
            let shift = *["<<=", ">>=", "s>>="].choose(&mut self.rng).unwrap();
            let amt = self.rng.gen_range(0..=63);
            self.emit(format!("r{dst} {shift} {amt}"));
            return;
        }
        let imm = self.small_imm();
        self.emit(format!("r{dst} {op} {imm}"));
    }

    fn tpl_mov(&mut self) {
        let dst = self.fresh_reg();
        if self.rng.gen_bool(0.3) {
            if let Some(src) = self.scalar_reg() {
                self.emit(format!("r{dst} = r{src}"));
                self.regs[dst] = GType::Scalar;
                return;
            }
        }
        let imm = self.small_imm();
        self.emit(format!("r{dst} = {imm}"));
        self.regs[dst] = GType::Scalar;
    }

    fn tpl_ctx_load(&mut self) {
        let dst = self.fresh_reg();
        let size = *["u8", "u16", "u32", "u64"].choose(&mut self.rng).unwrap();
        let off = self.aligned_ctx_off();
        self.emit(format!("r{dst} = *({size})(r1 + {off})"));
        self.regs[dst] = GType::Scalar;
    }

    fn tpl_stack_store(&mut self) {
        // Pointer spill or scalar store; scalar stores may be sub-8-byte.
        if self.rng.gen_bool(0.25) {
            let Some(slot) = self.fresh_slot() else { return };
            let off = Self::slot_off(slot);
            self.emit(format!("*(u64)(fp - {}) = r1", -off));
            self.slots[slot] = SlotGen::CtxPtr;
            return;
        }
        let slot = match self.rng.gen_range(0..3) {
            0 => self.fresh_slot(),
            _ => self.full_scalar_slot().or_else(|| self.fresh_slot()),
        };
        let Some(slot) = slot else { return };
        let base = Self::slot_off(slot);
        let (size, bytes) = *[("u8", 1u8), ("u16", 2), ("u32", 4), ("u64", 8)]
            .choose(&mut self.rng)
            .unwrap();
        let within = if bytes == 8 { 0 } else { self.rng.gen_range(0..(8 / bytes)) * bytes };
        let off = base + within as i64;
        let value = match self.scalar_reg() {
            Some(src) if self.rng.gen_bool(0.7) => format!("r{src}"),
            _ => self.small_imm().to_string(),
        };
        self.emit(format!("*({size})(fp - {}) = {value}", -off));
        let mask = (((1u16 << bytes) - 1) as u8) << within;
        self.slots[slot] = match self.slots[slot] {
            SlotGen::Scalar(init) => SlotGen::Scalar(init | mask),
            _ => SlotGen::Scalar(mask),
        };
    }

    fn tpl_stack_load(&mut self) {
        let dst = self.fresh_reg();
        // Full pointer reload or scalar bytes; only initialized bytes.
        let ptr_slots: Vec<usize> =
            (0..64).filter(|&s| self.slots[s] == SlotGen::CtxPtr).collect();
        if !ptr_slots.is_empty() && self.rng.gen_bool(0.4) {
            let slot = *ptr_slots.choose(&mut self.rng).unwrap();
            self.emit(format!("r{dst} = *(u64)(fp - {})", -Self::slot_off(slot)));
            self.regs[dst] = GType::CtxPtr;
            return;
        }
        let Some(slot) = self.full_scalar_slot() else {
            return self.tpl_ctx_load();
        };
        let size = *["u8", "u32", "u64"].choose(&mut self.rng).unwrap();
        self.emit(format!("r{dst} = *({size})(fp - {})", -Self::slot_off(slot)));
        self.regs[dst] = GType::Scalar;
    }

    /// The array-bounds pattern: a conditional guard proves the index in
    /// range, which a misprediction bypasses; the verifier plans an index
    /// mask at the advance.
    fn tpl_guarded_index(&mut self) {
        let map = self.rng.gen_range(0..self.map_sizes.len());
        let bound = self.map_sizes[map] - 1; // u8 access at the masked index
        let idx = self.fresh_reg();
        let ptr = self.fresh_reg();
        if idx == ptr {
            return;
        }
        let dst = self.fresh_reg();
        let skip = self.label();
        let off = self.aligned_ctx_off();
        self.emit(format!("r{idx} = *(u8)(r1 + {off})"));
        self.regs[idx] = GType::Scalar;
        self.emit(format!("if r{idx} > {bound} goto {skip}"));
        self.branches += 1;
        let snapshot = (self.regs, self.slots);
        self.emit(format!("r{ptr} = map_ptr {map}"));
        self.emit(format!("r{ptr} += r{idx}"));
        self.emit(format!("r{dst} = *(u8)(r{ptr} + 0)"));
        self.place(&skip);
        self.merge(snapshot);
    }

    /// Index already bounded by an AND; no directive should be planned.
    fn tpl_masked_index(&mut self) {
        let map = self.rng.gen_range(0..self.map_sizes.len());
        let padded = self.map_sizes[map].next_power_of_two();
        let Some(idx) = self.scalar_reg() else { return };
        let ptr = self.fresh_reg();
        if ptr == idx {
            return;
        }
        self.emit(format!("r{idx} &= {}", padded - 1));
        self.emit(format!("r{ptr} = map_ptr {map}"));
        // The mask keeps a u8 access at offset 0 inside the padded region.
        self.emit(format!("r{ptr} += r{idx}"));
        let dst = self.fresh_reg();
        if dst != ptr && dst != idx {
            self.emit(format!("r{dst} = *(u8)(r{ptr} + 0)"));
            self.regs[dst] = GType::Scalar;
        }
        self.regs[ptr] = GType::MapPtr(map);
        let _ = self.regs[ptr];
        self.regs[ptr] = GType::Unusable; // variable offset; leave it alone
    }

    /// Pointer-or-scalar selection guarded by the same flag: safe on every
    /// architectural path, type-confused under a mispredicted guard.
    fn tpl_confusion_gadget(&mut self) {
        if self.branches + 2 > 6 {
            return;
        }
        let flag = self.fresh_reg();
        let val = self.fresh_reg();
        if flag == val {
            return;
        }
        let sel = self.label();
        let out = self.label();
        let flag_off = self.aligned_ctx_off();
        let val_off = self.aligned_ctx_off();
        self.emit(format!("r{flag} = *(u64)(r1 + {flag_off})"));
        self.regs[flag] = GType::Scalar;
        self.emit(format!("r{val} = *(u64)(r1 + {val_off})"));
        self.emit(format!("if r{flag} == 0 goto {sel}"));
        self.branches += 1;
        if self.rng.gen_bool(0.5) && !self.map_sizes.is_empty() {
            let map = self.rng.gen_range(0..self.map_sizes.len());
            self.emit(format!("r{val} = map_ptr {map}"));
        } else {
            self.emit(format!("r{val} = r1"));
        }
        self.place(&sel);
        self.emit(format!("if r{flag} == 0 goto {out}"));
        self.branches += 1;
        let snapshot = (self.regs, self.slots);
        let probe = self.fresh_reg();
        if probe != flag && probe != val {
            self.emit(format!("r{probe} = *(u8)(r{val} + 0)"));
        }
        self.place(&out);
        self.merge(snapshot);
        self.regs[val] = GType::Unusable;
    }

    /// A slot written and read only on the flag-set path; a mispredicted
    /// second guard reads it uninitialized.
    fn tpl_conditional_init(&mut self) {
        if self.branches + 2 > 6 {
            return;
        }
        let Some(slot) = self.fresh_slot() else { return };
        let flag = self.fresh_reg();
        let skip = self.label();
        let out = self.label();
        let off = -Self::slot_off(slot);
        let flag_off = self.aligned_ctx_off();
        self.emit(format!("r{flag} = *(u64)(r1 + {flag_off})"));
        self.regs[flag] = GType::Scalar;
        self.emit(format!("if r{flag} == 0 goto {skip}"));
        self.branches += 1;
        let imm = self.small_imm();
        self.emit(format!("*(u64)(fp - {off}) = {imm}"));
        self.place(&skip);
        self.emit(format!("if r{flag} == 0 goto {out}"));
        self.branches += 1;
        let snapshot = (self.regs, self.slots);
        let dst = self.fresh_reg();
        if dst != flag {
            self.emit(format!("r{dst} = *(u64)(fp - {off})"));
        }
        self.place(&out);
        self.merge(snapshot);
        self.slots[slot] = SlotGen::Poisoned;
    }

    /// A plain conditional skip over straight-line work.
    fn tpl_skip_block(&mut self) {
        let Some(cond_reg) = self.scalar_reg() else { return };
        let label = self.label();
        let cond = *["==", "!=", "<", ">=", "s<", "s>"].choose(&mut self.rng).unwrap();
        let imm = self.small_imm();
        self.emit(format!("if r{cond_reg} {cond} {imm} goto {label}"));
        self.branches += 1;
        let snapshot = (self.regs, self.slots);
        for _ in 0..self.rng.gen_range(1..=3) {
            match self.rng.gen_range(0..4) {
                0 => self.tpl_alu(),
                1 => self.tpl_ctx_load(),
                2 => self.tpl_stack_store(),
                _ => self.tpl_mov(),
            }
        }
        self.place(&label);
        self.merge(snapshot);
    }

    fn tpl_barrier(&mut self) {
        let b = if self.rng.gen_bool(0.5) { "nospec_v1" } else { "nospec_v4" };
        self.emit(b.to_string());
    }

    /// Join after a conditionally executed block: anything that changed
    /// becomes unusable, slot state diverging across paths is poisoned.
    fn merge(&mut self, snapshot: ([GType; 10], [SlotGen; 64])) {
        let (regs, slots) = snapshot;
        for i in 0..10 {
            if self.regs[i] != regs[i] {
                self.regs[i] = GType::Unusable;
            }
        }
        for s in 0..64 {
            if self.slots[s] != slots[s] {
                self.slots[s] = SlotGen::Poisoned;
            }
        }
    }
}

/// Generates one structurally valid, architecturally safe program.
pub fn generate_program(seed: u64, max_insns: u32, max_branches: u32) -> Program {
    let mut prog = Gen::new(seed).generate(max_insns, max_branches);
    prog.name = format!("fuzz_{seed:016x}");
    prog
}

/// Random region contents for a generated program.
pub fn random_input(prog: &Program, rng: &mut ChaCha8Rng) -> ProgramInput {
    ProgramInput {
        ctx: (0..prog.ctx_size).map(|_| rng.gen()).collect(),
        maps: prog
            .maps
            .iter()
            .map(|m| (0..m.value_size).map(|_| rng.gen()).collect())
            .collect(),
    }
}

/// One soundness counterexample: an accepted, patched program with a
/// schedule and secret fillings whose traces differ.
#[derive(Debug, Clone)]
pub struct Counterexample {
    pub program_index: u32,
    pub program: Program,
    pub patched: Program,
    pub witness: LeakWitness,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CampaignSummary {
    pub programs: u32,
    pub accepted: u32,
    pub rejected: u32,
    pub fenced_programs: u32,
    pub v1_total: u64,
    pub v4_total: u64,
    pub mask_total: u64,
    pub runs: u64,
}

/// Verifies, patches, and leak-checks `cfg.program_count` seeded programs
/// under the given mode. Returns the summary and every counterexample.
pub fn run_campaign(
    cfg: &FuzzConfig,
    mode: DefenseMode,
) -> (CampaignSummary, Vec<Counterexample>) {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut summary = CampaignSummary::default();
    let mut counterexamples = Vec::new();
    let vcfg = VerifierConfig::new(mode);
    for index in 0..cfg.program_count {
        let program_seed = rng.gen::<u64>();
        let prog = generate_program(program_seed, cfg.max_insns, cfg.max_branches.max(3));
        summary.programs += 1;
        let result = verify(&prog, &vcfg);
        let inputs: Vec<ProgramInput> =
            (0..2).map(|_| random_input(&prog, &mut rng)).collect();
        let fillings: Vec<Filling> =
            (0..cfg.filling_count.max(2)).map(|i| Filling::new(rng.gen::<u64>() ^ i as u64)).collect();
        match result.verdict {
            Verdict::Reject(_) => {
                summary.rejected += 1;
                continue;
            }
            Verdict::Accept => summary.accepted += 1,
        }
        if result.stats.v1_count > 0 {
            summary.fenced_programs += 1;
        }
        summary.v1_total += result.stats.v1_count;
        summary.v4_total += result.stats.v4_count;
        summary.mask_total += result.stats.mask_count;
        let patched = apply_patches(&prog, &result.patches)
            .expect("verifier directives must apply")
            .program;
        let schedules = enumerate_schedules(
            &patched,
            cfg.max_branches,
            cfg.max_stores,
            cfg.max_window,
            1 << 16,
        )
        .expect("schedule space within cap");
        summary.runs += (inputs.len() * schedules.len() * fillings.len()) as u64;
        if let LeakVerdict::Leak(witness) =
            differential_leak_check(&patched, &inputs, &schedules, &fillings)
        {
            counterexamples.push(Counterexample {
                program_index: index,
                program: prog,
                patched,
                witness: *witness,
            });
        }
    }
    (summary, counterexamples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::verifier::RejectionCategory;

    #[test]
    fn generated_programs_are_valid_and_architecturally_safe() {
        for seed in 0..200 {
            let prog = generate_program(seed, 40, 3);
            assert!(validate_structure(&prog).is_empty(), "seed {seed}");
            let result = verify(&prog, &VerifierConfig::new(DefenseMode::None));
            assert_eq!(result.verdict, Verdict::Accept, "seed {seed} not arch-safe");
        }
    }

    #[test]
    fn fencing_mode_accepts_every_generated_program() {
        for seed in 0..200 {
            let prog = generate_program(seed, 40, 3);
            let result = verify(&prog, &VerifierConfig::new(DefenseMode::Verifence));
            match result.verdict {
                Verdict::Accept => {}
                Verdict::Reject(c) => {
                    assert!(
                        matches!(
                            c,
                            RejectionCategory::VariableStackAccess | RejectionCategory::TooComplex
                        ),
                        "seed {seed}: unexpected category {c:?}"
                    );
                }
            }
        }
    }

    #[test]
    fn generator_reaches_interesting_programs() {
        let mut fenced = 0;
        let mut strict_rejects = 0;
        for seed in 0..100 {
            let prog = generate_program(seed, 40, 3);
            let fencing = verify(&prog, &VerifierConfig::new(DefenseMode::Verifence));
            if fencing.stats.v1_count > 0 {
                fenced += 1;
            }
            let strict = verify(&prog, &VerifierConfig::new(DefenseMode::FullReject));
            if !strict.verdict.is_accept() {
                strict_rejects += 1;
            }
        }
        assert!(fenced > 10, "only {fenced} fenced programs in 100");
        assert!(strict_rejects > 10, "only {strict_rejects} strict rejections in 100");
    }

    #[test]
    fn small_campaign_is_clean_and_reproducible() {
        let cfg = FuzzConfig { program_count: 25, ..FuzzConfig::default() };
        let (summary_a, leaks_a) = run_campaign(&cfg, DefenseMode::Verifence);
        assert!(leaks_a.is_empty(), "soundness counterexample: {leaks_a:?}");
        let (summary_b, _) = run_campaign(&cfg, DefenseMode::Verifence);
        assert_eq!(summary_a, summary_b);
        assert_eq!(summary_a.accepted + summary_a.rejected, 25);
    }
}
