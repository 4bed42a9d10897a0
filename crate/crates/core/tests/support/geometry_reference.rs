//! Independent vertex enumeration used as a test oracle.

/// Solves `a x = b` by Gaussian elimination; `None` when singular.
pub fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))?;
        if a[piv][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in 0..n {
            if r != col {
                let f = a[r][col] / a[col][col];
                for k in col..n {
                    a[r][k] -= f * a[col][k];
                }
                b[r] -= f * b[col];
            }
        }
    }
    Some((0..n).map(|i| b[i] / a[i][i]).collect())
}

/// Vertices by basis enumeration: `Σx = 1` plus every choice of `d − 1`
/// active constraints among `x_k = 0` and `c·x = q`.
pub fn reference_vertices(c: &[f64], q: f64) -> Vec<Vec<f64>> {
    let d = c.len();
    let m = d + 1;
    let mut out: Vec<Vec<f64>> = Vec::new();
    for mask in 0u32..(1 << m) {
        if mask.count_ones() as usize != d - 1 {
            continue;
        }
        let mut a = vec![vec![1.0; d]];
        let mut b = vec![1.0];
        for k in 0..m {
            if mask & (1 << k) == 0 {
                continue;
            }
            if k < d {
                let mut row = vec![0.0; d];
                row[k] = 1.0;
                a.push(row);
                b.push(0.0);
            } else {
                a.push(c.to_vec());
                b.push(q);
            }
        }
        let Some(x) = solve(a, b) else { continue };
        let ok = x.iter().all(|&v| v >= -1e-12)
            && x.iter().zip(c).map(|(x, c)| x * c).sum::<f64>() <= q + 1e-12;
        if ok && !out.iter().any(|v| dist(v, &x) < 1e-9) {
            out.push(x);
        }
    }
    out
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}
