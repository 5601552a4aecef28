use nalgebra::DMatrix;
use proptest::prelude::*;
use tlasso::special::digamma;
use tlasso::spillover::gfevd;
use tlasso::tlasso::e_step_weights;
use tlasso::var::{ErrorDistribution, VarModel};
use tlasso::volatility::parkinson_variance;

fn matrix(dim: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-1.0f64..1.0, dim * dim)
        .prop_map(move |v| DMatrix::from_row_slice(dim, dim, &v))
}

fn scale(dim: usize) -> impl Strategy<Value = DMatrix<f64>> {
    matrix(dim).prop_map(move |a| &a * a.transpose() + DMatrix::identity(dim, dim) * 0.5)
}

fn stable_var1(dim: usize) -> impl Strategy<Value = VarModel> {
    (matrix(dim), scale(dim), 0.1f64..0.95).prop_map(|(a, sigma, radius)| {
        let norm = a.norm().max(1e-12);
        let b = a * (radius / norm);
        VarModel::new(vec![b], ErrorDistribution::gaussian(sigma).unwrap()).unwrap()
    })
}

fn permuted(model: &VarModel, perm: &[usize]) -> VarModel {
    let j = perm.len();
    let b = &model.coefficients()[0];
    let s = model.error().scale();
    let pb = DMatrix::from_fn(j, j, |r, c| b[(perm[r], perm[c])]);
    let ps = DMatrix::from_fn(j, j, |r, c| s[(perm[r], perm[c])]);
    VarModel::new(vec![pb], ErrorDistribution::gaussian(ps).unwrap()).unwrap()
}

proptest! {
    #[test]
    fn decomposition_rows_sum_to_one(model in (2usize..6).prop_flat_map(stable_var1), h in 1usize..12) {
        let result = gfevd(&model, h).unwrap();
        for r in 0..model.dim() {
            prop_assert!((result.normalized.row(r).sum() - 1.0).abs() < 1e-10);
            prop_assert!(result.normalized.row(r).iter().all(|v| *v >= 0.0));
        }
        prop_assert!(result.index >= 0.0 && result.index <= 100.0 * model.dim() as f64);
    }

    #[test]
    fn relabelling_series_permutes_spillovers(model in stable_var1(4), shift in 1usize..4) {
        let perm: Vec<usize> = (0..4).map(|k| (k + shift) % 4).collect();
        let base = gfevd(&model, 5).unwrap();
        let moved = gfevd(&permuted(&model, &perm), 5).unwrap();
        prop_assert!((base.index - moved.index).abs() < 1e-9);
        for r in 0..4 {
            for c in 0..4 {
                prop_assert!((moved.spillovers[(r, c)] - base.spillovers[(perm[r], perm[c])]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn range_variance_ignores_price_level(
        open in 1.0f64..100.0,
        up in 0.0f64..0.1,
        down in 0.0f64..0.1,
        level in 0.01f64..1000.0,
    ) {
        let (high, low) = (open * up.exp(), open * (-down).exp());
        let base = parkinson_variance(open, high, low).unwrap();
        let scaled = parkinson_variance(open * level, high * level, low * level).unwrap();
        prop_assert!(base >= 0.0);
        prop_assert!((base - scaled).abs() <= 1e-12 * base.max(1e-12));
    }

    #[test]
    fn weights_lie_in_their_range(
        residuals in prop::collection::vec(-20.0f64..20.0, 3 * 30),
        omega in scale(3),
        nu in 0.05f64..1000.0,
    ) {
        let e = DMatrix::from_row_slice(30, 3, &residuals);
        let w = e_step_weights(&e, &omega, nu).unwrap();
        let top = (nu + 3.0) / nu;
        prop_assert!(w.iter().all(|v| *v > 0.0 && *v <= top * (1.0 + 1e-12)));
    }

    #[test]
    fn digamma_recurrence(x in 0.01f64..50.0) {
        let lhs = digamma(x + 1.0);
        let rhs = digamma(x) + 1.0 / x;
        prop_assert!((lhs - rhs).abs() < 1e-10 * rhs.abs().max(1.0));
    }
}
