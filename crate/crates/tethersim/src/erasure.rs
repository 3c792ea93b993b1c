//! GF(256) arithmetic and systematic Reed-Solomon erasure coding across
//! groups of packets.
//!
//! The group's k data shards are polynomial values at field points 0..k-1;
//! parity shards are the interpolated polynomial evaluated at points
//! k..n-1 (the systematic Vandermonde construction). Any k distinct shards
//! recover the group exactly.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Reduction polynomial x^8 + x^4 + x^3 + x^2 + 1.
const REDUCER: u16 = 0x11D;

const fn build_exp_log() -> ([u8; 512], [u8; 256]) {
    let mut exp = [0u8; 512];
    let mut log = [0u8; 256];
    let mut x: u16 = 1;
    let mut i = 0;
    while i < 255 {
        exp[i] = x as u8;
        log[x as usize] = i as u8;
        x <<= 1;
        if x & 0x100 != 0 {
            x ^= REDUCER;
        }
        i += 1;
    }
    // Duplicate the table so products of logs index without a mod.
    let mut j = 255;
    while j < 512 {
        exp[j] = exp[j - 255];
        j += 1;
    }
    (exp, log)
}

const TABLES: ([u8; 512], [u8; 256]) = build_exp_log();
const EXP: [u8; 512] = TABLES.0;
const LOG: [u8; 256] = TABLES.1;

#[inline]
pub fn gf_add(a: u8, b: u8) -> u8 {
    a ^ b
}

#[inline]
pub fn gf_mul(a: u8, b: u8) -> u8 {
    if a == 0 || b == 0 {
        0
    } else {
        EXP[LOG[a as usize] as usize + LOG[b as usize] as usize]
    }
}

#[inline]
pub fn gf_inv(a: u8) -> u8 {
    debug_assert!(a != 0, "zero has no inverse");
    EXP[255 - LOG[a as usize] as usize]
}

#[inline]
pub fn gf_div(a: u8, b: u8) -> u8 {
    gf_mul(a, gf_inv(b))
}

/// Group shape: k data shards per group, n total shards, over GF(256).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodingConfig {
    pub k: u8,
    pub n: u8,
}

impl CodingConfig {
    pub fn new(k: u8, n: u8) -> Result<CodingConfig, CodingError> {
        if k == 0 || k > n {
            return Err(CodingError::ConfigError { k, n });
        }
        Ok(CodingConfig { k, n })
    }

    pub fn parity(&self) -> u8 {
        self.n - self.k
    }
}

/// One shard of a coded group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shard {
    pub index: u8,
    pub bytes: Vec<u8>,
    pub is_parity: bool,
}

/// A full encoded group: the k originals (padded) followed by parity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodedGroup {
    pub group_id: u64,
    pub shards: Vec<Shard>,
    pub original_lengths: Vec<u32>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodingError {
    #[error("invalid coding config k={k}, n={n}")]
    ConfigError { k: u8, n: u8 },
    #[error("expected {expected} data packets, got {got}")]
    WrongShardCount { expected: u8, got: usize },
    #[error("only {have} distinct shards received, need {need}")]
    Insufficient { have: usize, need: u8 },
    #[error("shard lengths inconsistent within the group")]
    ShardMismatch,
    #[error("shard index {0} out of range")]
    BadIndex(u8),
}

/// Lagrange basis coefficient l_i(x) for interpolation points 0..k-1,
/// evaluated at x. Field points are the raw byte values of the indices.
fn lagrange_coeff(points: &[u8], i: usize, x: u8) -> u8 {
    let xi = points[i];
    let mut num = 1u8;
    let mut den = 1u8;
    for (m, &xm) in points.iter().enumerate() {
        if m == i {
            continue;
        }
        num = gf_mul(num, gf_add(x, xm)); // subtraction == addition in GF(2^8)
        den = gf_mul(den, gf_add(xi, xm));
    }
    gf_div(num, den)
}

/// Systematic encode: the first k shards are the padded originals, the
/// remaining n-k shards are parity. Deterministic.
pub fn encode_group(
    cfg: &CodingConfig,
    group_id: u64,
    packets: &[Vec<u8>],
) -> Result<CodedGroup, CodingError> {
    CodingConfig::new(cfg.k, cfg.n)?;
    if packets.len() != cfg.k as usize {
        return Err(CodingError::WrongShardCount { expected: cfg.k, got: packets.len() });
    }
    let width = packets.iter().map(Vec::len).max().unwrap_or(0);
    let original_lengths: Vec<u32> = packets.iter().map(|p| p.len() as u32).collect();

    let mut shards: Vec<Shard> = packets
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut bytes = p.clone();
            bytes.resize(width, 0);
            Shard { index: i as u8, bytes, is_parity: false }
        })
        .collect();

    let data_points: Vec<u8> = (0..cfg.k).collect();
    for j in 0..cfg.parity() {
        let x = cfg.k + j;
        let coeffs: Vec<u8> =
            (0..cfg.k as usize).map(|i| lagrange_coeff(&data_points, i, x)).collect();
        let mut bytes = vec![0u8; width];
        for (i, c) in coeffs.iter().enumerate() {
            if *c == 0 {
                continue;
            }
            for (b, out) in shards[i].bytes.iter().zip(bytes.iter_mut()) {
                *out ^= gf_mul(*c, *b);
            }
        }
        shards.push(Shard { index: x, bytes, is_parity: true });
    }
    Ok(CodedGroup { group_id, shards, original_lengths })
}

/// Reconstruct the k original packets from any k distinct shards, stripping
/// the padding recorded in `original_lengths`.
pub fn decode_group(
    cfg: &CodingConfig,
    received: &[Shard],
    original_lengths: &[u32],
) -> Result<Vec<Vec<u8>>, CodingError> {
    CodingConfig::new(cfg.k, cfg.n)?;
    if original_lengths.len() != cfg.k as usize {
        return Err(CodingError::WrongShardCount { expected: cfg.k, got: original_lengths.len() });
    }
    let mut by_index: std::collections::BTreeMap<u8, &Shard> = std::collections::BTreeMap::new();
    for s in received {
        if s.index >= cfg.n {
            return Err(CodingError::BadIndex(s.index));
        }
        by_index.entry(s.index).or_insert(s);
    }
    if by_index.len() < cfg.k as usize {
        return Err(CodingError::Insufficient { have: by_index.len(), need: cfg.k });
    }
    let width = by_index.values().next().map(|s| s.bytes.len()).unwrap_or(0);
    if by_index.values().any(|s| s.bytes.len() != width) {
        return Err(CodingError::ShardMismatch);
    }

    let strip = |mut bytes: Vec<u8>, len: u32| {
        bytes.truncate(len as usize);
        bytes
    };

    // Fast path: all data shards present.
    if (0..cfg.k).all(|i| by_index.contains_key(&i)) {
        return Ok((0..cfg.k)
            .map(|i| strip(by_index[&i].bytes.clone(), original_lengths[i as usize]))
            .collect());
    }

    // Interpolate through the first k received shards.
    let chosen: Vec<&Shard> = by_index.values().take(cfg.k as usize).copied().collect();
    let points: Vec<u8> = chosen.iter().map(|s| s.index).collect();
    let mut out = Vec::with_capacity(cfg.k as usize);
    for target in 0..cfg.k {
        if let Some(s) = by_index.get(&target) {
            out.push(strip(s.bytes.clone(), original_lengths[target as usize]));
            continue;
        }
        let coeffs: Vec<u8> =
            (0..chosen.len()).map(|i| lagrange_coeff(&points, i, target)).collect();
        let mut bytes = vec![0u8; width];
        for (shard, c) in chosen.iter().zip(coeffs.iter()) {
            if *c == 0 {
                continue;
            }
            for (b, o) in shard.bytes.iter().zip(bytes.iter_mut()) {
                *o ^= gf_mul(*c, *b);
            }
        }
        out.push(strip(bytes, original_lengths[target as usize]));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn random_packets(rng: &mut ChaCha12Rng, k: usize, max_len: usize) -> Vec<Vec<u8>> {
        (0..k)
            .map(|_| {
                let len = rng.gen_range(0..=max_len);
                (0..len).map(|_| rng.gen()).collect()
            })
            .collect()
    }

    #[test]
    fn gf_field_axioms_spot_checks() {
        for a in 1..=255u8 {
            assert_eq!(gf_mul(a, gf_inv(a)), 1, "a={a}");
            assert_eq!(gf_mul(a, 1), a);
            assert_eq!(gf_mul(a, 0), 0);
        }
        // Associativity and distributivity on a sample grid.
        for a in [1u8, 2, 3, 29, 76, 143, 255] {
            for b in [1u8, 2, 5, 80, 200, 254] {
                for c in [0u8, 1, 7, 90, 255] {
                    assert_eq!(gf_mul(gf_mul(a, b), c), gf_mul(a, gf_mul(b, c)));
                    assert_eq!(gf_mul(a, gf_add(b, c)), gf_add(gf_mul(a, b), gf_mul(a, c)));
                }
            }
        }
    }

    #[test]
    fn n_equals_k_is_passthrough() {
        let cfg = CodingConfig::new(3, 3).unwrap();
        let packets = vec![vec![1, 2, 3], vec![4], vec![]];
        let g = encode_group(&cfg, 0, &packets).unwrap();
        assert_eq!(g.shards.len(), 3);
        assert!(g.shards.iter().all(|s| !s.is_parity));
        let out = decode_group(&cfg, &g.shards, &g.original_lengths).unwrap();
        assert_eq!(out, packets);
    }

    #[test]
    fn single_data_shard_parity_is_repetition() {
        let cfg = CodingConfig::new(1, 2).unwrap();
        let g = encode_group(&cfg, 0, &[vec![9, 8, 7]]).unwrap();
        assert_eq!(g.shards[0].bytes, g.shards[1].bytes);
        assert!(g.shards[1].is_parity);
        let out = decode_group(&cfg, &g.shards[1..], &g.original_lengths).unwrap();
        assert_eq!(out, vec![vec![9, 8, 7]]);
    }

    #[test]
    fn systematic_prefix_is_the_originals_padded() {
        let cfg = CodingConfig::new(4, 6).unwrap();
        let packets = vec![vec![1, 2, 3, 4], vec![5, 6], vec![7], vec![8, 9, 10]];
        let g = encode_group(&cfg, 0, &packets).unwrap();
        for (i, p) in packets.iter().enumerate() {
            assert_eq!(&g.shards[i].bytes[..p.len()], &p[..]);
            assert!(g.shards[i].bytes[p.len()..].iter().all(|&b| b == 0));
        }
    }

    fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        let mut idx: Vec<usize> = (0..k).collect();
        loop {
            out.push(idx.clone());
            let mut i = k;
            loop {
                if i == 0 {
                    return out;
                }
                i -= 1;
                if idx[i] != i + n - k {
                    break;
                }
                if i == 0 {
                    return out;
                }
            }
            idx[i] += 1;
            for j in i + 1..k {
                idx[j] = idx[j - 1] + 1;
            }
        }
    }

    #[test]
    fn k4_n6_every_four_shard_subset_decodes() {
        let cfg = CodingConfig::new(4, 6).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(99);
        let packets = random_packets(&mut rng, 4, 48);
        let g = encode_group(&cfg, 1, &packets).unwrap();
        let all = subsets(6, 4);
        assert_eq!(all.len(), 15);
        for subset in all {
            let received: Vec<Shard> = subset.iter().map(|&i| g.shards[i].clone()).collect();
            let out = decode_group(&cfg, &received, &g.original_lengths).unwrap();
            assert_eq!(out, packets, "subset {subset:?}");
        }
    }

    #[test]
    fn mds_exhaustive_up_to_n8() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        for n in 1..=8u8 {
            for k in 1..=n {
                let cfg = CodingConfig::new(k, n).unwrap();
                let packets = random_packets(&mut rng, k as usize, 16);
                let g = encode_group(&cfg, 7, &packets).unwrap();
                for subset in subsets(n as usize, k as usize) {
                    let received: Vec<Shard> =
                        subset.iter().map(|&i| g.shards[i].clone()).collect();
                    let out = decode_group(&cfg, &received, &g.original_lengths).unwrap();
                    assert_eq!(out, packets, "k={k} n={n} subset {subset:?}");
                }
            }
        }
    }

    #[test]
    fn below_k_shards_is_insufficient() {
        let cfg = CodingConfig::new(4, 6).unwrap();
        let packets = vec![vec![1], vec![2], vec![3], vec![4]];
        let g = encode_group(&cfg, 0, &packets).unwrap();
        let received: Vec<Shard> = g.shards[..3].to_vec();
        assert_eq!(
            decode_group(&cfg, &received, &g.original_lengths),
            Err(CodingError::Insufficient { have: 3, need: 4 })
        );
    }

    #[test]
    fn config_bounds_enforced() {
        assert!(CodingConfig::new(0, 4).is_err());
        assert!(CodingConfig::new(5, 4).is_err());
        assert!(CodingConfig::new(4, 4).is_ok());
        let bad = CodingConfig { k: 0, n: 3 };
        assert!(encode_group(&bad, 0, &[]).is_err());
    }

    #[test]
    fn wrong_packet_count_rejected() {
        let cfg = CodingConfig::new(4, 6).unwrap();
        assert_eq!(
            encode_group(&cfg, 0, &vec![vec![1]; 3]),
            Err(CodingError::WrongShardCount { expected: 4, got: 3 })
        );
    }
}
