//! Bundled benchmark reference tables: published per-pretraining-dataset
//! scores (AUC on CC-18, R² on CTR-23) with instance/feature counts and
//! domain tags. Shipped as checksummed assets; 83 records per benchmark.

use crate::error::CoreError;
use crate::table::DomainTag;
use sha2::{Digest, Sha256};

const CC18_CSV: &str = include_str!("../assets/reference/cc18_auc.csv");
const CTR23_CSV: &str = include_str!("../assets/reference/ctr23_r2.csv");

const CC18_SHA256: &str = "e4ff6963670330772cd3d708a0eed617a293419c3c5db88132bc436e6d19f8c2";
const CTR23_SHA256: &str = "753946587f032f26e7df4de1e902179298f993f9b76e23332686f6997a76ec8c";

/// Which benchmark suite a record's score was measured on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Benchmark {
    /// Classification suite; scores are AUC in [0, 1].
    Cc18,
    /// Regression suite; scores are R² (any real <= 1).
    Ctr23,
}

impl std::fmt::Display for Benchmark {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Benchmark::Cc18 => "cc18",
            Benchmark::Ctr23 => "ctr23",
        })
    }
}

/// One row of a bundled reference table.
#[derive(Debug, Clone)]
pub struct ReferenceRecord {
    pub dataset_name: String,
    pub score: f64,
    pub n_instances: u64,
    pub n_features: u64,
    pub domain: DomainTag,
    pub benchmark: Benchmark,
}

fn parse_records(
    csv_text: &str,
    expected_sha: &str,
    asset: &'static str,
    benchmark: Benchmark,
) -> Result<Vec<ReferenceRecord>, CoreError> {
    let digest = Sha256::digest(csv_text.as_bytes());
    let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
    if hex != expected_sha {
        return Err(CoreError::AssetChecksum { name: asset });
    }

    let mut out = Vec::new();
    for (i, line) in csv_text.lines().enumerate().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(CoreError::parse(asset, format!("line {}: bad field count", i + 1)));
        }
        let score: f64 = fields[1]
            .parse()
            .map_err(|_| CoreError::parse(asset, format!("line {}: bad score", i + 1)))?;
        let n_instances: u64 = fields[2]
            .parse()
            .map_err(|_| CoreError::parse(asset, format!("line {}: bad instances", i + 1)))?;
        let n_features: u64 = fields[3]
            .parse()
            .map_err(|_| CoreError::parse(asset, format!("line {}: bad features", i + 1)))?;
        let domain: DomainTag = fields[4]
            .parse()
            .map_err(|e| CoreError::parse(asset, format!("line {}: {e}", i + 1)))?;
        let ok_score = match benchmark {
            Benchmark::Cc18 => (0.0..=1.0).contains(&score),
            Benchmark::Ctr23 => score <= 1.0,
        };
        if !ok_score {
            return Err(CoreError::parse(
                asset,
                format!("line {}: score {score} out of range", i + 1),
            ));
        }
        out.push(ReferenceRecord {
            dataset_name: fields[0].to_string(),
            score,
            n_instances,
            n_features,
            domain,
            benchmark,
        });
    }
    Ok(out)
}

/// All bundled reference records, CC-18 first, values exactly as published.
pub fn load_reference_records() -> Result<Vec<ReferenceRecord>, CoreError> {
    let mut all = parse_records(CC18_CSV, CC18_SHA256, "cc18_auc.csv", Benchmark::Cc18)?;
    all.extend(parse_records(
        CTR23_CSV,
        CTR23_SHA256,
        "ctr23_r2.csv",
        Benchmark::Ctr23,
    )?);
    Ok(all)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_counts_match_the_printed_tables() {
        let all = load_reference_records().unwrap();
        let cc18: Vec<_> = all.iter().filter(|r| r.benchmark == Benchmark::Cc18).collect();
        let ctr23: Vec<_> = all.iter().filter(|r| r.benchmark == Benchmark::Ctr23).collect();
        assert_eq!(cc18.len(), 83);
        assert_eq!(ctr23.len(), 83);
    }

    #[test]
    fn spot_check_first_and_last_rows() {
        let all = load_reference_records().unwrap();
        let cc18: Vec<_> = all.iter().filter(|r| r.benchmark == Benchmark::Cc18).collect();
        let top = cc18.first().unwrap();
        assert_eq!(top.dataset_name, "colleges");
        assert_eq!(top.score, 0.916);
        assert_eq!(top.n_instances, 7063);
        assert_eq!(top.n_features, 45);
        assert_eq!(top.domain, DomainTag::Other);

        let bottom = cc18.last().unwrap();
        assert_eq!(bottom.dataset_name, "analcatdata_supreme");
        assert_eq!(bottom.score, 0.668);
        assert_eq!(bottom.n_instances, 4052);
        assert_eq!(bottom.n_features, 8);

        let ctr_top = all
            .iter()
            .find(|r| r.benchmark == Benchmark::Ctr23)
            .unwrap();
        assert_eq!(ctr_top.dataset_name, "colleges");
        assert_eq!(ctr_top.score, 0.694);
        assert_eq!(ctr_top.n_instances, 7063);
        assert_eq!(ctr_top.n_features, 45);
    }

    #[test]
    fn every_domain_tag_is_in_the_closed_set() {
        // parsing into DomainTag already enforces this; assert it loads
        let all = load_reference_records().unwrap();
        assert!(all.iter().all(|r| DomainTag::ALL.contains(&r.domain)));
    }
}
