#![allow(dead_code)]

use std::collections::BTreeMap;
use std::f64::consts::PI;

use hyperarm_core::kinematics::modes_from_codes;
use hyperarm_core::{ArmLayout, FrozenAngles, LinkMode, ReducedConfiguration, SectorDecomposition};
use rand::Rng;

pub const FIG3_CODES: [i64; 16] = [1, -1, -1, 1, 0, 0, 0, 0, -1, 1, 1, 0, 0, 0, -1, 1];

/// Valid random mode vector: roughly 15% damaged, 30% heads, the rest body.
/// Damaged links get random frozen angles.
pub fn random_layout(rng: &mut impl Rng, n: usize, d: f64) -> ArmLayout {
    let mut modes = Vec::with_capacity(n);
    let mut frozen = BTreeMap::new();
    for i in 0..n {
        let r: f64 = rng.random();
        let after_gap = i == 0 || modes[i - 1] == LinkMode::Damaged;
        let mode = if r < 0.15 {
            LinkMode::Damaged
        } else if r < 0.45 || after_gap {
            LinkMode::Head
        } else {
            LinkMode::Body
        };
        if mode == LinkMode::Damaged {
            frozen.insert(
                i,
                FrozenAngles::new(rng.random_range(-PI..PI), rng.random_range(-1.0..1.0)),
            );
        }
        modes.push(mode);
    }
    ArmLayout::new(d, modes, frozen).expect("generated layout is valid")
}

/// Layout from mode codes, damaged links frozen at random angles.
pub fn layout_from_codes(rng: &mut impl Rng, codes: &[i64], d: f64) -> ArmLayout {
    let modes = modes_from_codes(codes).unwrap();
    let frozen = modes
        .iter()
        .enumerate()
        .filter(|(_, m)| **m == LinkMode::Damaged)
        .map(|(i, _)| {
            (
                i,
                FrozenAngles::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)),
            )
        })
        .collect();
    ArmLayout::new(d, modes, frozen).unwrap()
}

/// Head twists in `[-pi, pi]`, head bends in `[-bend, bend]`, body bends in
/// `[-body, body]`.
pub fn random_q(
    rng: &mut impl Rng,
    decomp: &SectorDecomposition,
    bend: f64,
    body: f64,
) -> ReducedConfiguration {
    let mut v = vec![0.0; decomp.num_vars()];
    for s in decomp.sectors() {
        v[s.offset] = rng.random_range(-PI..PI);
        v[s.offset + 1] = rng.random_range(-bend..bend);
        if s.has_body() {
            v[s.offset + 2] = rng.random_range(-body..body);
        }
    }
    ReducedConfiguration::new(v).unwrap()
}
