use crate::error::{Error, Result};

/// Minimum-cost one-to-one assignment on an `n×m` cost matrix.
///
/// Returns `min(n, m)` `(row, col)` pairs sorted by row. Shortest
/// augmenting path with dual potentials, `O(n²m)`.
pub fn hungarian_match(cost: &[Vec<f64>]) -> Result<Vec<(usize, usize)>> {
    let n = cost.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let m = cost[0].len();
    if cost.iter().any(|r| r.len() != m) {
        return Err(Error::invalid("hungarian_match", "ragged cost matrix"));
    }
    if let Some((i, j)) = (0..n)
        .flat_map(|i| (0..m).map(move |j| (i, j)))
        .find(|&(i, j)| !cost[i][j].is_finite())
    {
        return Err(Error::invalid(
            "hungarian_match",
            format!("non-finite cost {} at ({i}, {j})", cost[i][j]),
        ));
    }
    if m == 0 {
        return Ok(Vec::new());
    }
    if n > m {
        let t: Vec<Vec<f64>> = (0..m).map(|j| (0..n).map(|i| cost[i][j]).collect()).collect();
        let mut pairs: Vec<(usize, usize)> =
            solve(&t).into_iter().map(|(j, i)| (i, j)).collect();
        pairs.sort_unstable();
        return Ok(pairs);
    }
    Ok(solve(cost))
}

/// Rows ≤ columns. One-based arrays with a virtual column 0.
fn solve(a: &[Vec<f64>]) -> Vec<(usize, usize)> {
    let (n, m) = (a.len(), a[0].len());
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    // p[j]: row assigned to column j; way[j]: previous column on the path.
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = a[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut pairs: Vec<(usize, usize)> = (1..=m)
        .filter(|&j| p[j] != 0)
        .map(|j| (p[j] - 1, j - 1))
        .collect();
    pairs.sort_unstable();
    pairs
}

/// Sum of matched costs in row order.
pub fn assignment_cost(cost: &[Vec<f64>], pairs: &[(usize, usize)]) -> f64 {
    pairs.iter().map(|&(i, j)| cost[i][j]).sum()
}
