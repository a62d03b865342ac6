//! Dense linear solves and least-squares fits for a handful of parameters.

/// Solves `A x = b` in place by Gaussian elimination with partial pivoting.
/// `a` is row-major `n x n`. Panics on a numerically singular system.
pub fn solve_dense(a: &mut [f64], b: &mut [f64], n: usize) -> Vec<f64> {
    assert_eq!(a.len(), n * n);
    assert_eq!(b.len(), n);
    for col in 0..n {
        let mut piv = col;
        for r in col + 1..n {
            if a[r * n + col].abs() > a[piv * n + col].abs() {
                piv = r;
            }
        }
        assert!(a[piv * n + col].abs() > 1e-300, "singular system");
        if piv != col {
            for c in 0..n {
                a.swap(col * n + c, piv * n + c);
            }
            b.swap(col, piv);
        }
        for r in col + 1..n {
            let f = a[r * n + col] / a[col * n + col];
            if f == 0.0 {
                continue;
            }
            for c in col..n {
                a[r * n + c] -= f * a[col * n + c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut s = b[row];
        for c in row + 1..n {
            s -= a[row * n + c] * x[c];
        }
        x[row] = s / a[row * n + row];
    }
    x
}

/// Least squares `min ‖R β − y‖` via normal equations; `rows[i]` is the i-th
/// regressor row. Suitable for the small, well-scaled designs used here.
pub fn least_squares(rows: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let n = rows[0].len();
    let mut ata = vec![0.0; n * n];
    let mut aty = vec![0.0; n];
    for (row, &yi) in rows.iter().zip(y) {
        debug_assert_eq!(row.len(), n);
        for i in 0..n {
            aty[i] += row[i] * yi;
            for j in 0..n {
                ata[i * n + j] += row[i] * row[j];
            }
        }
    }
    solve_dense(&mut ata, &mut aty, n)
}

/// Ordinary least-squares line `y = intercept + slope x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let xm = x.iter().sum::<f64>() / n;
    let ym = y.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (&xi, &yi) in x.iter().zip(y) {
        sxx += (xi - xm) * (xi - xm);
        sxy += (xi - xm) * (yi - ym);
    }
    let slope = sxy / sxx;
    (ym - slope * xm, slope)
}

/// Zero-intercept least-squares slope of `y = slope · x`.
pub fn slope_through_origin(x: &[f64], y: &[f64]) -> f64 {
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    sxy / sxx
}
