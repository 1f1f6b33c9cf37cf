use gpm_core::feature_prep::{fit_pca, project};
use gpm_testkit::{grid_rows, pca_discrepancy, pca_oracle, random_feature_grids};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn matches_jacobi_on_500_by_64() {
    let mut rng = ChaCha8Rng::seed_from_u64(500);
    let grids = random_feature_grids(&mut rng, 5, 10, 10, 64);
    let model = fit_pca(&grids).unwrap();
    let oracle = pca_oracle(&grid_rows(&grids), 10);
    let (axis, var) = pca_discrepancy(&model, &oracle);
    assert!(axis < 1e-4, "axis error {axis}");
    assert!(var < 1e-6, "variance error {var}");
    for (m, o) in model.mean.iter().zip(&oracle.mean) {
        assert!((m - o).abs() < 1e-9);
    }
}

#[test]
fn matches_jacobi_on_varied_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for (n, w, h, d) in [(1, 4, 4, 3), (2, 8, 8, 10), (3, 6, 5, 17), (2, 16, 16, 128)] {
        let grids = random_feature_grids(&mut rng, n, w, h, d);
        let model = fit_pca(&grids).unwrap();
        assert_eq!(model.n_components, d.min(10));
        let oracle = pca_oracle(&grid_rows(&grids), model.n_components);
        let (axis, _) = pca_discrepancy(&model, &oracle);
        assert!(axis < 1e-4, "D={d}: axis error {axis}");
    }
}

#[test]
fn projection_variance_matches_eigenvalues() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let grids = random_feature_grids(&mut rng, 2, 12, 12, 24);
    let model = fit_pca(&grids).unwrap();
    let reduced = project(&model, &grids).unwrap();
    let n = (2 * 144) as f64;
    for k in 0..model.n_components {
        let vals: Vec<f64> = reduced
            .images
            .iter()
            .flat_map(|img| img.chunks_exact(model.n_components).map(move |c| c[k]))
            .collect();
        let mean = vals.iter().sum::<f64>() / n;
        assert!(mean.abs() < 1e-6, "component {k} mean {mean}");
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let want = model.explained_variance[k];
        assert!((var - want).abs() / want < 1e-6, "component {k}: {var} vs {want}");
    }
}

#[test]
fn fit_is_bit_reproducible() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let grids = random_feature_grids(&mut rng, 3, 40, 40, 32);
    assert_eq!(fit_pca(&grids).unwrap(), fit_pca(&grids).unwrap());
}
