//! Per-query nearest-neighbor context retrieval over z-scored rows.

use crate::error::CoreError;

/// Indices of the `k` pool rows closest to `query` in Euclidean distance,
/// ordered by ascending distance with ties broken by lower row index.
pub fn retrieve_context(
    pool: &[Vec<f64>],
    query: &[f64],
    k: usize,
) -> Result<Vec<usize>, CoreError> {
    if k > pool.len() {
        return Err(CoreError::InvalidInput(format!(
            "retrieval k {} exceeds pool size {}",
            k,
            pool.len()
        )));
    }
    let mut dist: Vec<(f64, usize)> = pool
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let d: f64 = row
                .iter()
                .zip(query)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            (d, i)
        })
        .collect();
    dist.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    Ok(dist.into_iter().take(k).map(|(_, i)| i).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_match_is_rank_one() {
        let pool = vec![vec![1.0, 1.0], vec![0.5, -0.2], vec![3.0, 0.0]];
        let got = retrieve_context(&pool, &[0.5, -0.2], 2).unwrap();
        assert_eq!(got[0], 1);
    }

    #[test]
    fn full_k_returns_all_indices_sorted_by_distance() {
        let pool = vec![vec![0.0], vec![10.0], vec![2.0], vec![-1.0]];
        let got = retrieve_context(&pool, &[0.0], 4).unwrap();
        assert_eq!(got, vec![0, 3, 2, 1]);
    }

    // Brute-force oracle on a 5-point 2-D toy, distances computed by hand
    // in the test.
    #[test]
    fn five_point_toy_matches_brute_force_sort() {
        let pool = vec![
            vec![0.0, 0.0],
            vec![1.0, 1.0],
            vec![-1.0, 0.5],
            vec![0.3, -0.4],
            vec![2.0, -2.0],
        ];
        let query = [0.2, 0.1];
        let mut oracle: Vec<(f64, usize)> = pool
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let dx = p[0] - query[0];
                let dy = p[1] - query[1];
                (dx * dx + dy * dy, i)
            })
            .collect();
        oracle.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        let want: Vec<usize> = oracle.iter().map(|&(_, i)| i).collect();
        let got = retrieve_context(&pool, &query, 5).unwrap();
        assert_eq!(got, want);
    }

    #[test]
    fn tied_distances_break_toward_lower_index() {
        let pool = vec![vec![1.0], vec![-1.0], vec![1.0]];
        let got = retrieve_context(&pool, &[0.0], 3).unwrap();
        assert_eq!(got, vec![0, 1, 2]); // all at distance 1; index order
    }

    #[test]
    fn oversized_k_is_an_error() {
        let pool = vec![vec![0.0]];
        assert!(retrieve_context(&pool, &[0.0], 2).is_err());
    }
}
