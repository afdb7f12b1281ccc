fn main() {
    let p = specfence::fuzz::generate_program(88, 40, 3);
    println!("{}", specfence::isa::emit_asm(&p));
    let r = specfence::verifier::verify(&p, &specfence::verifier::VerifierConfig::new(specfence::verifier::DefenseMode::None));
    println!("{:?}", r.verdict);
}
