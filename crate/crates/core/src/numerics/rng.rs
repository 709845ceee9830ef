//! Portable seeded pseudo-randomness.
//!
//! The generator is SplitMix64. Its full state is one `u64`; each draw does
//!
//! ```text
//! state = state + 0x9E3779B97F4A7C15          (wrapping)
//! z = state
//! z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9    (wrapping)
//! z = (z ^ (z >> 27)) * 0x94D049BB133111EB    (wrapping)
//! return z ^ (z >> 31)
//! ```
//!
//! and a seed is used as the initial state verbatim. Derived draws:
//!
//! - `uniform()`: `(next_u64() >> 11) * 2^-53`, in `[0, 1)`.
//! - `normal()`: Box–Muller. Two uniforms `u1, u2` are drawn in that order,
//!   `r = sqrt(-2 ln(1 - u1))`, and the pair `(r cos 2πu2, r sin 2πu2)` is
//!   returned over two consecutive calls (cosine first).
//! - `below(n)`: `(next_u64() as u128 * n) >> 64`.
//!
//! Any implementation following these rules reproduces the same streams.

use super::Matrix;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Clone, Debug)]
pub struct Rng {
    state: u64,
    spare_normal: Option<f64>,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            state: seed,
            spare_normal: None,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * (1.0 - u1).ln()).sqrt();
        let angle = 2.0 * std::f64::consts::PI * u2;
        self.spare_normal = Some(r * angle.sin());
        r * angle.cos()
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Fisher–Yates shuffle, swapping from the back.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// An independent stream seeded from this one.
    pub fn fork(&mut self) -> Rng {
        Rng::new(self.next_u64())
    }

    /// `rows × cols` i.i.d. `N(0, std²)` entries in row-major order.
    pub fn normal_matrix(&mut self, rows: usize, cols: usize, std: f64) -> Matrix {
        assert!(std >= 0.0, "negative standard deviation");
        let data = (0..rows * cols).map(|_| std * self.normal()).collect();
        Matrix::from_vec(rows, cols, data).expect("length matches by construction")
    }
}

/// Free-function form of [`Rng::normal_matrix`].
pub fn normal_sample(rng: &mut Rng, rows: usize, cols: usize, std: f64) -> Matrix {
    rng.normal_matrix(rows, cols, std)
}
