use std::hash::Hasher;

use fnv::FnvHasher;

pub fn fnv64(salt: u64, s: &str) -> u64 {
    let mut h = FnvHasher::with_key(0xcbf2_9ce4_8422_2325 ^ salt);
    h.write(s.as_bytes());
    h.finish()
}

/// Derives a child seed from a parent seed and a list of integer keys.
pub fn derive_seed(parent: u64, keys: &[u64]) -> u64 {
    let mut h = FnvHasher::with_key(0xcbf2_9ce4_8422_2325 ^ parent);
    for k in keys {
        h.write_u64(*k);
    }
    h.finish()
}

/// Signed feature hashing of `tokens` into `dims` buckets, L2-normalized.
/// Returns a zero vector when there are no tokens.
pub fn hashed_vector<'a>(salt: u64, dims: usize, tokens: impl IntoIterator<Item = &'a str>) -> Vec<f64> {
    let mut v = vec![0.0; dims];
    for t in tokens {
        let h = fnv64(salt, t);
        let bucket = (h % dims as u64) as usize;
        let sign = if (h >> 63) & 1 == 1 { -1.0 } else { 1.0 };
        v[bucket] += sign;
    }
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes))
}

/// Hex SHA-256 of the JSON form of a configuration value.
pub fn config_hash<T: serde::Serialize>(config: &T) -> String {
    sha256_hex(&serde_json::to_vec(config).expect("configuration serializes"))
}
