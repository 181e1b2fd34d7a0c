//! Gauss-Hermite quadrature nodes via the Golub-Welsch eigenvalue
//! construction on the Jacobi matrix of the Hermite recurrence.

use nalgebra::{DMatrix, SymmetricEigen};

/// Nodes and weights for \int f(x) e^{-x^2} dx with `n` points.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut jacobi = DMatrix::zeros(n, n);
    for k in 1..n {
        let b = (k as f64 / 2.0).sqrt();
        jacobi[(k - 1, k)] = b;
        jacobi[(k, k - 1)] = b;
    }
    let eig = SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let node = eig.eigenvalues[i];
            let v0 = eig.eigenvectors[(0, i)];
            (node, std::f64::consts::PI.sqrt() * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    pairs.into_iter().unzip()
}

/// E[f(X)] for X ~ N(mean, sd^2), by change of variables x = mean + sqrt(2) sd t.
pub fn gauss_hermite_expect(mean: f64, sd: f64, n: usize, f: impl Fn(f64) -> f64) -> f64 {
    let (nodes, weights) = gauss_hermite(n);
    let norm = 1.0 / std::f64::consts::PI.sqrt();
    nodes
        .iter()
        .zip(&weights)
        .map(|(&t, &w)| w * f(mean + std::f64::consts::SQRT_2 * sd * t))
        .sum::<f64>()
        * norm
}
