use std::time::Instant;

use rnf_core::coeff::NGEN;
use rnf_core::index::{enumerate_class, ClassTag, MultiIndex, DEFAULT_ENUMERATION_CAP};
use rnf_core::poly::*;

#[test]
fn z6_oracle_window_eight() {
    let t = Instant::now();
    let o = extract_z6_oracle(8).unwrap();
    let secs = t.elapsed().as_secs_f64();
    assert!(secs < 60.0, "took {secs}s");
    assert!(o.alpha.values().all(|c| c.is_zero()));
    assert!(o.gamma.values().all(|c| c.is_zero()));
    assert_eq!(o.beta.get(&(0, 1)).unwrap(), &beta_closed_form(0, 1));
    for (&(a, b), c) in &o.beta {
        assert_eq!(*c, beta_closed_form(a, b));
    }
    eprintln!("oracle window 8: {secs:.2}s, irreducible resonant monomials: {}", o.irreducible_part.len());
}

#[test]
fn z6_assembles_from_bracket_and_sextic_parts() {
    let w = 4;
    let o = extract_z6_oracle(w).unwrap();
    let p6_actions = p2m_coefficients(3, w).unwrap().restrict(|j| j.laplacian() == 0 && j.irreducible_part().is_empty());
    let assembled = o.action_part.add(&p6_actions);
    assert!(assembled.sub(&z6_formula(w)).is_zero());
}

#[test]
fn homological_identity_window_six() {
    let w = 6;
    let chi = chi4(w).unwrap();
    let lhs = z4_formula(w).sub(&p2m_coefficients(2, w).unwrap()).sub(&z2_poly(w).poisson(&chi));
    assert!(lhs.is_zero());
    assert!(chi.get(&MultiIndex::action(1).union(&MultiIndex::action(2))).is_zero());
}

#[test]
fn quartic_resonances_are_action_only() {
    let t = Instant::now();
    assert!(enumerate_class(2, 50, ClassTag::R, true, DEFAULT_ENUMERATION_CAP).unwrap().is_empty());
    assert!(t.elapsed().as_secs_f64() < 10.0);
}

#[test]
fn sextic_galerkin_normal_form() {
    let nf = birkhoff_normal_form(3, 3).unwrap();
    let gens: [f64; NGEN] = [0.0, 1.0, 0.5, 0.0];
    assert!(nf.actions_only(2).sub(&z4_formula(3)).is_zero());
    assert!(nf.resonant[&3].is_reality_paired());
    let _ = nf.irreducible(3).bind(&gens);
}
