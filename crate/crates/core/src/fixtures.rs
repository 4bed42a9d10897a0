//! Two small reference models shipped with the crate.
//!
//! F1: states `s0 = 0`, `g = 1`, `u = 2`. From `s0`, action `a` reaches `u` or
//! `g` with probability 1/2 each; action `b` reaches `u` w.p. 0.2, stays w.p. 0.3
//! and reaches `g` w.p. 0.5. The minimal unsafe-reach probability from `s0` is 2/7.
//!
//! F2: states `s0 = 0`, `ghi = 1`, `glo = 2`, `u = 3`. `risky` splits evenly
//! between `u` and `ghi` (reward 1), `safe` moves surely to `glo` (reward 0.3).

use crate::mdp::Mdp;

pub const F1_JSON: &str = include_str!("../fixtures/f1.json");
pub const F2_JSON: &str = include_str!("../fixtures/f2.json");

pub fn f1() -> Mdp {
    Mdp::from_json(F1_JSON).expect("fixture F1 is valid")
}

pub fn f2() -> Mdp {
    Mdp::from_json(F2_JSON).expect("fixture F2 is valid")
}
