//! Named, order-independent random substreams derived from one master seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(mut h: u64, bytes: &[u8]) -> u64 {
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stable 64-bit digest of a sequence of labelled parts.
pub fn digest(parts: &[&[u8]]) -> u64 {
    let mut h = FNV_OFFSET;
    for p in parts {
        h = fnv1a(h, &(p.len() as u64).to_le_bytes());
        h = fnv1a(h, p);
    }
    mix64(h)
}

/// Generator for stage `tag` keyed by `parts`. The result depends only on
/// `(master, tag, parts)`, never on how many other streams were drawn before.
pub fn substream(master: u64, tag: &str, parts: &[&[u8]]) -> ChaCha8Rng {
    let key = mix64(master ^ digest(&[tag.as_bytes()]));
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(digest(parts));
    rng
}
