//! A verifier toolchain for a small BPF-like sandbox bytecode that defends
//! against transient-execution attacks by *fencing instead of rejecting*.
//!
//! The pipeline has three stages:
//!
//! 1. [`verifier`] — explores every architectural path of a program with an
//!    abstract type/value domain ([`absdomain`]), then re-explores each
//!    conditional branch as if mispredicted. Depending on the configured
//!    defense mode, unsafe speculative behavior either rejects the program
//!    or emits patch directives: `nospec_v1` barriers before unsafe
//!    instructions, `nospec_v4` barriers after critical stack stores, and
//!    power-of-two index masks before variable map accesses.
//! 2. [`patcher`] — materializes directives into a rewritten program,
//!    recomputing every jump displacement, and can lower barriers for
//!    machines that do not need one of the two kinds.
//! 3. [`specsim`] — a concrete interpreter with attacker-scheduled branch
//!    mispredictions and store bypasses under an address-trace leakage
//!    model, plus a differential oracle that decides whether a program can
//!    leak secret memory transiently. The oracle validates the verifier:
//!    anything accepted and patched must show no secret-dependent trace.
//!
//! Programs are written in a line-oriented assembly ([`isa`]); the `fuzz`
//! module generates seeded random programs for soundness campaigns, and
//! [`cli`] wires everything into the `specfence` binary.
//!
//! See the crate `examples/` directory for one runnable walkthrough per
//! capability.

pub mod absdomain;
pub mod cli;
pub mod fuzz;
pub mod isa;
pub mod patcher;
pub mod specsim;
pub mod verifier;
