//! Deterministic seed derivation.
//!
//! Every random stream in the toolkit is seeded through [`derive`], which maps
//! a master seed plus a purpose label plus an index to an independent child
//! seed. The scheme is splittable: child streams never share state, so the
//! order in which subsystems draw from their own streams cannot affect each
//! other. This is what makes parallel evaluation episode-for-episode identical
//! to serial evaluation, and what keeps scheme variants on identical
//! trajectories when only their extra machinery differs.

/// One round of the splitmix64 output function. Full-period mixer over u64.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// FNV-1a over the label bytes; stable across platforms.
fn label_hash(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Derive an independent child seed from `(master, label, index)`.
pub fn derive(master: u64, label: &str, index: u64) -> u64 {
    splitmix64(splitmix64(master ^ label_hash(label)) ^ splitmix64(index))
}
