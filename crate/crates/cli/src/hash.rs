//! Stable configuration hashing; every artifact embeds this hash so
//! reports can refuse to mix incompatible runs.

use crate::config::ExperimentConfig;
use anyhow::Result;

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// 16-hex-digit hash of the resolved configuration (seed included, output
/// directory excluded so re-rooting does not change identity).
pub fn config_hash(cfg: &ExperimentConfig) -> Result<String> {
    let mut clone = cfg.clone();
    clone.output_dir = std::path::PathBuf::new();
    let canonical = toml::to_string(&clone)?;
    Ok(format!("{:016x}", fnv1a64(canonical.as_bytes())))
}
