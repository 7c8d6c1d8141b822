//! Small exact linear algebra: integer lattices (Hermite/Smith forms, left
//! kernels) and dense matrices over cyclotomic fields.

use num::Integer;

use crate::cyclotomic::Cyclo;
use crate::error::{Error, Result};

pub type IMat = Vec<Vec<i128>>;

/// Row-style Hermite normal form: the nonzero rows of an echelon basis of
/// the row lattice, pivots positive, entries above pivots reduced.
pub fn hermite_rows(rows: &[Vec<i128>]) -> IMat {
    let mut m: IMat = rows.to_vec();
    if m.is_empty() {
        return m;
    }
    let ncols = m[0].len();
    let mut r = 0;
    for c in 0..ncols {
        if r == m.len() {
            break;
        }
        // Euclid on column c among rows r.. until one nonzero entry remains.
        loop {
            let nz: Vec<usize> = (r..m.len()).filter(|&i| m[i][c] != 0).collect();
            if nz.is_empty() {
                break;
            }
            let piv = *nz.iter().min_by_key(|&&i| m[i][c].abs()).unwrap();
            m.swap(r, piv);
            let mut done = true;
            for i in r + 1..m.len() {
                if m[i][c] != 0 {
                    let f = m[i][c].div_euclid(m[r][c]);
                    for j in 0..ncols {
                        m[i][j] -= f * m[r][j];
                    }
                    if m[i][c] != 0 {
                        done = false;
                    }
                }
            }
            if done {
                break;
            }
        }
        if m[r][c] == 0 {
            continue;
        }
        if m[r][c] < 0 {
            for x in m[r].iter_mut() {
                *x = -*x;
            }
        }
        for i in 0..r {
            let f = m[i][c].div_euclid(m[r][c]);
            if f != 0 {
                for j in 0..ncols {
                    m[i][j] -= f * m[r][j];
                }
            }
        }
        r += 1;
    }
    m.truncate(r);
    m
}

/// Nonzero Smith invariants `d_1 | d_2 | …` of an integer matrix.
pub fn smith_diagonal(rows: &[Vec<i128>]) -> Vec<i128> {
    let mut m: IMat = rows.iter().filter(|r| r.iter().any(|&x| x != 0)).cloned().collect();
    if m.is_empty() {
        return vec![];
    }
    let ncols = m[0].len();
    let nrows = m.len();
    let mut diag = Vec::new();
    let mut t = 0;
    while t < nrows.min(ncols) {
        // Pick the smallest nonzero entry in the trailing block.
        let mut best: Option<(usize, usize)> = None;
        for i in t..nrows {
            for j in t..ncols {
                if m[i][j] != 0 && best.map(|(a, b)| m[i][j].abs() < m[a][b].abs()).unwrap_or(true) {
                    best = Some((i, j));
                }
            }
        }
        let Some((bi, bj)) = best else { break };
        m.swap(t, bi);
        for row in m.iter_mut() {
            row.swap(t, bj);
        }
        loop {
            let p = m[t][t];
            let mut changed = false;
            for i in t + 1..nrows {
                if m[i][t] != 0 {
                    let f = m[i][t].div_euclid(p);
                    for j in t..ncols {
                        m[i][j] -= f * m[t][j];
                    }
                    if m[i][t] != 0 {
                        m.swap(t, i);
                        changed = true;
                        break;
                    }
                }
            }
            if changed {
                continue;
            }
            for j in t + 1..ncols {
                if m[t][j] != 0 {
                    let f = m[t][j].div_euclid(p);
                    for row in m.iter_mut().skip(t) {
                        row[j] -= f * row[t];
                    }
                    if m[t][j] != 0 {
                        for row in m.iter_mut() {
                            row.swap(t, j);
                        }
                        changed = true;
                        break;
                    }
                }
            }
            if changed {
                continue;
            }
            // Enforce divisibility of the rest of the block.
            let mut bad = None;
            'outer: for i in t + 1..nrows {
                for j in t + 1..ncols {
                    if m[i][j] % p != 0 {
                        bad = Some(i);
                        break 'outer;
                    }
                }
            }
            match bad {
                Some(i) => {
                    for j in t..ncols {
                        let v = m[i][j];
                        m[t][j] += v;
                    }
                }
                None => break,
            }
        }
        diag.push(m[t][t].abs());
        t += 1;
    }
    diag
}

/// Basis of the left kernel `{λ ∈ Z^m : λ·A = 0}` of an `m × n` integer matrix.
pub fn left_kernel(a: &[Vec<i128>]) -> IMat {
    let m = a.len();
    if m == 0 {
        return vec![];
    }
    let n = a[0].len();
    // Augment with the identity and row-reduce the left block.
    let aug: IMat = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..m).map(|j| i128::from(i == j)));
            r
        })
        .collect();
    let h = hermite_full(&aug, n);
    h.into_iter()
        .filter(|r| r[..n].iter().all(|&x| x == 0))
        .map(|r| r[n..].to_vec())
        .collect()
}

/// Unimodular row reduction on the first `lead` columns, keeping all rows.
fn hermite_full(rows: &[Vec<i128>], lead: usize) -> IMat {
    let mut m: IMat = rows.to_vec();
    let ncols = m[0].len();
    let mut r = 0;
    for c in 0..lead {
        if r == m.len() {
            break;
        }
        loop {
            let nz: Vec<usize> = (r..m.len()).filter(|&i| m[i][c] != 0).collect();
            if nz.is_empty() {
                break;
            }
            let piv = *nz.iter().min_by_key(|&&i| m[i][c].abs()).unwrap();
            m.swap(r, piv);
            let mut done = true;
            for i in r + 1..m.len() {
                if m[i][c] != 0 {
                    let f = m[i][c].div_euclid(m[r][c]);
                    for j in 0..ncols {
                        m[i][j] -= f * m[r][j];
                    }
                    if m[i][c] != 0 {
                        done = false;
                    }
                }
            }
            if done {
                break;
            }
        }
        if m[r][c] != 0 {
            r += 1;
        }
    }
    // Rows r.. have zero leading block; reduce their kernel part for tidiness.
    let tail: IMat = m[r..].iter().map(|row| row[lead..].to_vec()).collect();
    let tail = hermite_rows(&tail);
    let mut out: IMat = m[..r].to_vec();
    for t in tail {
        let mut row = vec![0; lead];
        row.extend(t);
        out.push(row);
    }
    out
}

/// Rank of an integer matrix.
pub fn int_rank(a: &[Vec<i128>]) -> usize {
    hermite_rows(a).len()
}

/// `gcd` over a slice (0 for an empty slice).
pub fn gcd_all(v: &[i128]) -> i128 {
    v.iter().fold(0i128, |g, &x| g.gcd(&x))
}

pub type CMat = Vec<Vec<Cyclo>>;

/// Determinant by Gaussian elimination over the cyclotomic field.
pub fn det(m: &CMat) -> Cyclo {
    let n = m.len();
    let mut a = m.clone();
    let mut d = Cyclo::one();
    for c in 0..n {
        let Some(p) = (c..n).find(|&r| !a[r][c].is_zero()) else {
            return Cyclo::zero();
        };
        if p != c {
            a.swap(p, c);
            d = -d;
        }
        let inv = a[c][c].inverse().expect("nonzero pivot");
        d = &d * &a[c][c];
        for r in c + 1..n {
            if a[r][c].is_zero() {
                continue;
            }
            let f = &a[r][c] * &inv;
            for j in c..n {
                let t = &f * &a[c][j];
                a[r][j] = &a[r][j] - &t;
            }
        }
    }
    d
}

/// Rank over the cyclotomic field.
pub fn rank(m: &CMat) -> usize {
    if m.is_empty() {
        return 0;
    }
    let rows = m.len();
    let cols = m[0].len();
    let mut a = m.clone();
    let mut r = 0;
    for c in 0..cols {
        let Some(p) = (r..rows).find(|&i| !a[i][c].is_zero()) else {
            continue;
        };
        a.swap(r, p);
        let inv = a[r][c].inverse().expect("nonzero pivot");
        for i in r + 1..rows {
            if a[i][c].is_zero() {
                continue;
            }
            let f = &a[i][c] * &inv;
            for j in c..cols {
                let t = &f * &a[r][j];
                a[i][j] = &a[i][j] - &t;
            }
        }
        r += 1;
        if r == rows {
            break;
        }
    }
    r
}

/// Inverse of a square matrix, or an error when singular.
pub fn inverse(m: &CMat) -> Result<CMat> {
    let n = m.len();
    let mut a: CMat = m
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { Cyclo::one() } else { Cyclo::zero() }));
            r
        })
        .collect();
    for c in 0..n {
        let p = (c..n)
            .find(|&r| !a[r][c].is_zero())
            .ok_or_else(|| Error::DegenerateInput("singular matrix".into()))?;
        a.swap(p, c);
        let inv = a[c][c].inverse()?;
        for x in a[c].iter_mut() {
            *x = &*x * &inv;
        }
        for r in 0..n {
            if r == c || a[r][c].is_zero() {
                continue;
            }
            let f = a[r][c].clone();
            for j in 0..2 * n {
                let t = &f * &a[c][j];
                a[r][j] = &a[r][j] - &t;
            }
        }
    }
    Ok(a.into_iter().map(|r| r[n..].to_vec()).collect())
}

pub fn mat_mul(a: &CMat, b: &CMat) -> CMat {
    let n = a.len();
    let m = b[0].len();
    let k = b.len();
    (0..n)
        .map(|i| {
            (0..m)
                .map(|j| {
                    let mut s = Cyclo::zero();
                    for t in 0..k {
                        if !a[i][t].is_zero() && !b[t][j].is_zero() {
                            s = &s + &(&a[i][t] * &b[t][j]);
                        }
                    }
                    s
                })
                .collect()
        })
        .collect()
}
