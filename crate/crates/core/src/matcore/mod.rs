//! Deterministic dense matrix arithmetic and seeded random generation.

mod matrix;
mod rng;

pub use matrix::Matrix;
pub use rng::{gaussian, orthonormal_columns, SeededRng};

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_is_deterministic_per_seed() {
        let a = gaussian(4, 4, &mut SeededRng::new(1), 1.0).unwrap();
        let b = gaussian(4, 4, &mut SeededRng::new(1), 1.0).unwrap();
        assert!(a.bits_eq(&b));
    }

    #[test]
    fn gaussian_differs_across_seeds() {
        let a = gaussian(2, 3, &mut SeededRng::new(3), 1.0).unwrap();
        let b = gaussian(2, 3, &mut SeededRng::new(4), 1.0).unwrap();
        assert!(!a.bits_eq(&b));
    }

    #[test]
    fn gaussian_large_sample_statistics() {
        let m = gaussian(1000, 1000, &mut SeededRng::new(2), 0.02).unwrap();
        let n = m.data().len() as f64;
        let mean: f64 = m.data().iter().sum::<f64>() / n;
        let var: f64 = m.data().iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
        let stddev = var.sqrt();
        assert!(mean.abs() < 0.001, "mean {mean}");
        assert!((0.0198..=0.0202).contains(&stddev), "stddev {stddev}");
    }

    #[test]
    fn gaussian_rejects_bad_arguments() {
        assert!(gaussian(0, 4, &mut SeededRng::new(1), 1.0).is_err());
        assert!(gaussian(4, 0, &mut SeededRng::new(1), 1.0).is_err());
        assert!(gaussian(4, 4, &mut SeededRng::new(1), 0.0).is_err());
        assert!(gaussian(4, 4, &mut SeededRng::new(1), -1.0).is_err());
    }

    #[test]
    fn substreams_are_independent_and_reproducible() {
        let a = gaussian(2, 2, &mut SeededRng::substream(9, 0), 1.0).unwrap();
        let b = gaussian(2, 2, &mut SeededRng::substream(9, 1), 1.0).unwrap();
        let a2 = gaussian(2, 2, &mut SeededRng::substream(9, 0), 1.0).unwrap();
        assert!(!a.bits_eq(&b));
        assert!(a.bits_eq(&a2));
    }

    #[test]
    fn orthonormal_columns_square_is_orthogonal() {
        let q = orthonormal_columns(4, 4, &mut SeededRng::new(7)).unwrap();
        let gram = q.transpose().matmul(&q).unwrap();
        assert!(gram.max_abs_diff(&Matrix::identity(4)) <= 1e-12);
    }

    #[test]
    fn orthonormal_columns_unit_norms() {
        let q = orthonormal_columns(8, 2, &mut SeededRng::new(9)).unwrap();
        for j in 0..2 {
            let norm_sq: f64 = (0..8).map(|i| q.get(i, j) * q.get(i, j)).sum();
            assert!((norm_sq.sqrt() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn orthonormal_determinant_is_unit() {
        // Cofactor-expansion determinant, independent of the matmul path.
        fn det3(m: &Matrix) -> f64 {
            m.get(0, 0) * (m.get(1, 1) * m.get(2, 2) - m.get(1, 2) * m.get(2, 1))
                - m.get(0, 1) * (m.get(1, 0) * m.get(2, 2) - m.get(1, 2) * m.get(2, 0))
                + m.get(0, 2) * (m.get(1, 0) * m.get(2, 1) - m.get(1, 1) * m.get(2, 0))
        }
        let q = orthonormal_columns(3, 3, &mut SeededRng::new(11)).unwrap();
        assert!((det3(&q).abs() - 1.0).abs() <= 1e-10);
    }

    #[test]
    fn orthonormal_rejects_wide_shapes() {
        assert!(orthonormal_columns(2, 3, &mut SeededRng::new(1)).is_err());
    }
}
