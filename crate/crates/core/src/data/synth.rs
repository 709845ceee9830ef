use super::Dataset;
use crate::numerics::{Matrix, Rng};

/// Isotropic unit-variance Gaussian blobs, class-major order.
///
/// Class `c < m` is centred at `separation/√2 · e_c` and class `m ≤ c < 2m`
/// at `-separation/√2 · e_{c-m}`, so distinct centres are at least
/// `separation` apart. Beyond `2m` classes the centre directions are drawn
/// at random with norm `separation`.
pub fn synth_blobs(
    rng: &mut Rng,
    points_per_class: usize,
    classes: usize,
    input_dim: usize,
    separation: f64,
) -> Dataset {
    assert!(points_per_class >= 1 && classes >= 1 && input_dim >= 1, "counts must be >= 1");
    let radius = separation / std::f64::consts::SQRT_2;
    let centers: Vec<Vec<f64>> = (0..classes)
        .map(|c| {
            let mut center = vec![0.0; input_dim];
            if c < input_dim {
                center[c] = radius;
            } else if c < 2 * input_dim {
                center[c - input_dim] = -radius;
            } else {
                let dir = rng.normal_matrix(1, input_dim, 1.0).into_vec();
                let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
                for (x, v) in center.iter_mut().zip(dir) {
                    *x = separation * v / norm;
                }
            }
            center
        })
        .collect();
    let n = points_per_class * classes;
    let mut inputs = Matrix::zeros(n, input_dim);
    let mut labels = Vec::with_capacity(n);
    for (c, center) in centers.iter().enumerate() {
        for k in 0..points_per_class {
            let row = inputs.row_mut(c * points_per_class + k);
            for (x, mu) in row.iter_mut().zip(center) {
                *x = mu + rng.normal();
            }
            labels.push(c);
        }
    }
    let names = (0..classes).map(|c| format!("blob{c}")).collect();
    Dataset::from_class_indices(inputs, &labels, names).expect("valid by construction")
}
