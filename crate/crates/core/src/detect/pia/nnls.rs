//! Non-negative least squares by accelerated projected gradient on the normal equations.

const MAX_ITERATIONS: usize = 500;
const TOLERANCE: f64 = 1e-10;

/// Minimizes `||A x - b||` over `x >= 0`, where `columns` holds the columns of `A`.
pub fn nnls(columns: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let k = columns.len();
    if k == 0 {
        return Vec::new();
    }
    let dot = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(x, y)| x * y).sum::<f64>();
    let mut gram = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in i..k {
            let v = dot(&columns[i], &columns[j]);
            gram[i][j] = v;
            gram[j][i] = v;
        }
    }
    let rhs: Vec<f64> = columns.iter().map(|c| dot(c, b)).collect();
    // Gershgorin bound on the largest eigenvalue of the Gram matrix
    let lipschitz = gram
        .iter()
        .map(|row| row.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    if lipschitz <= 0.0 {
        return vec![0.0; k];
    }
    let step = 1.0 / lipschitz;
    let mut x = vec![0.0; k];
    let mut y = x.clone();
    let mut momentum = 1.0f64;
    for _ in 0..MAX_ITERATIONS {
        let next: Vec<f64> = (0..k)
            .map(|i| {
                let g = dot(&gram[i], &y) - rhs[i];
                (y[i] - step * g).max(0.0)
            })
            .collect();
        let change = next.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let scale = next.iter().map(|v| v.abs()).fold(1.0, f64::max);
        let next_momentum = (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt()) / 2.0;
        let beta = (momentum - 1.0) / next_momentum;
        // restart the momentum whenever the objective would increase
        let restart = (0..k)
            .map(|i| (dot(&gram[i], &y) - rhs[i]) * (next[i] - x[i]))
            .sum::<f64>()
            > 0.0;
        if restart {
            y = next.clone();
            momentum = 1.0;
        } else {
            y = next
                .iter()
                .zip(&x)
                .map(|(n, o)| (n + beta * (n - o)).max(0.0))
                .collect();
            momentum = next_momentum;
        }
        x = next;
        if change <= TOLERANCE * scale {
            break;
        }
    }
    x
}
