mod common;

use annoselect::binmat;
use annoselect::dataset::FeatureMatrix;
use annoselect::projection::{
    calibrate_affinities, compute_pca, compute_tsne, import_projection, initial_embedding, joint_probabilities,
    kl_divergence, kl_gradient, optimize_line_search, squared_distances, Detached, ProjectionError, TsneConfig,
    TsneOptimizer,
};
use common::oracle;
use rand::Rng;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[test]
fn pca_matches_svd_oracle() {
    let mut r = common::rng(11);
    for t in 0..20 {
        let m = common::random_matrix(&mut r, 100, 10);
        let pca = compute_pca(&m).unwrap();
        let [a, b] = &pca.components;
        assert!((dot(a, a) - 1.0).abs() < 1e-8, "matrix {t}");
        assert!((dot(b, b) - 1.0).abs() < 1e-8, "matrix {t}");
        assert!(dot(a, b).abs() < 1e-8, "matrix {t}");

        let (vals, comps) = oracle::pca_variances_by_svd(&m);
        let ev = pca.explained_variance();
        assert!((ev[0] - vals[0]).abs() < 1e-8, "matrix {t}: {} vs {}", ev[0], vals[0]);
        assert!((ev[1] - vals[1]).abs() < 1e-8, "matrix {t}: {} vs {}", ev[1], vals[1]);
        for (k, c) in pca.components.iter().enumerate() {
            let o: Vec<f64> = comps.row(k).iter().copied().collect();
            assert!((dot(c, &o).abs() - 1.0).abs() < 1e-6, "matrix {t} axis {k}");
        }
    }
}

#[test]
fn pca_coordinates_are_centered_projections() {
    let m = common::random_matrix(&mut common::rng(3), 30, 4);
    let pca = compute_pca(&m).unwrap();
    for (i, row) in m.rows().enumerate() {
        let c: Vec<f64> = row.iter().zip(&pca.mean).map(|(x, mu)| x - mu).collect();
        assert!((pca.projection.coords[i][0] - dot(&c, &pca.components[0])).abs() < 1e-10);
        assert!((pca.projection.coords[i][1] - dot(&c, &pca.components[1])).abs() < 1e-10);
    }
}

fn tsne_problem(seed: u64) -> (FeatureMatrix, Vec<f64>) {
    let m = common::random_matrix(&mut common::rng(seed), 40, 5);
    let cal = calibrate_affinities(&squared_distances(&m), 40, 10.0).unwrap();
    let p = joint_probabilities(&cal.conditional, 40);
    (m, p)
}

#[test]
fn tsne_gradient_matches_central_differences() {
    let (_, p) = tsne_problem(21);
    let n = 40;
    let mut r = common::rng(22);
    let h = 1e-6;
    for iterate in 0..5 {
        let y: Vec<f64> = (0..2 * n).map(|_| r.gen_range(-3.0..3.0)).collect();
        let g = kl_gradient(&p, &y, n, 1.0);
        let mut num = 0.0;
        let mut den = 0.0;
        for k in 0..2 * n {
            let mut yp = y.clone();
            let mut ym = y.clone();
            yp[k] += h;
            ym[k] -= h;
            let fd = (kl_divergence(&p, &yp, n) - kl_divergence(&p, &ym, n)) / (2.0 * h);
            num += (g[k] - fd).powi(2);
            den += fd.powi(2);
        }
        let rel = (num / den).sqrt();
        assert!(rel <= 1e-4, "iterate {iterate}: relative error {rel}");
    }
}

#[test]
fn affinities_are_symmetric_and_sum_to_one() {
    let (_, p) = tsne_problem(23);
    let n = 40;
    let total: f64 = p.iter().sum();
    assert!((total - 1.0).abs() <= 1e-10, "sum {total}");
    for i in 0..n {
        assert_eq!(p[i * n + i], 0.0);
        for j in 0..n {
            assert!((p[i * n + j] - p[j * n + i]).abs() <= 1e-10);
        }
    }
}

#[test]
fn calibration_hits_target_perplexity() {
    let m = common::random_matrix(&mut common::rng(24), 60, 6);
    let cal = calibrate_affinities(&squared_distances(&m), 60, 15.0).unwrap();
    for (i, h) in cal.entropies.iter().enumerate() {
        assert!((2f64.powf(*h) - 15.0).abs() <= 1e-5, "point {i}: perplexity {}", 2f64.powf(*h));
        let row_sum: f64 = cal.conditional[i * 60..(i + 1) * 60].iter().sum();
        assert!((row_sum - 1.0).abs() < 1e-12);
    }
}

#[test]
fn tsne_is_bit_deterministic() {
    let m = common::random_matrix(&mut common::rng(25), 40, 5);
    let cfg = TsneConfig {
        perplexity: 10.0,
        n_iterations: 300,
        seed: 99,
        ..TsneConfig::default()
    };
    let a = compute_tsne(&m, &cfg).unwrap();
    let b = compute_tsne(&m, &cfg).unwrap();
    let bits = |p: &annoselect::projection::Projection2D| -> Vec<u64> { p.flat().iter().map(|v| v.to_bits()).collect() };
    assert_eq!(bits(&a), bits(&b));
    let c = compute_tsne(&m, &TsneConfig { seed: 100, ..cfg }).unwrap();
    assert_ne!(bits(&a), bits(&c));
}

#[test]
fn line_search_never_increases_kl() {
    let (_, p) = tsne_problem(26);
    let mut y = initial_embedding(40, 5);
    let cfg = TsneConfig {
        perplexity: 10.0,
        n_iterations: 100,
        optimizer: TsneOptimizer::LineSearch,
        ..TsneConfig::default()
    };
    let trace = optimize_line_search(&p, &mut y, 40, &cfg, &Detached).unwrap();
    assert_eq!(trace.len(), 101);
    assert!(trace.windows(2).all(|w| w[1] <= w[0]));
    assert!(trace[100] < trace[0]);
}

#[test]
fn tsne_separates_clusters() {
    let ds = common::clustered_dataset(90, 3, 6, 8.0, 27);
    // the default step of 200 overshoots on a problem this small
    let cfg = TsneConfig {
        perplexity: 10.0,
        n_iterations: 500,
        learning_rate: 10.0,
        ..TsneConfig::default()
    };
    let p = compute_tsne(&ds.features, &cfg).unwrap();
    // mean intra-cluster distance well below mean inter-cluster distance
    let (mut intra, mut ni, mut inter, mut ne) = (0.0, 0, 0.0, 0);
    for i in 0..90 {
        for j in i + 1..90 {
            let d = ((p.coords[i][0] - p.coords[j][0]).powi(2) + (p.coords[i][1] - p.coords[j][1]).powi(2)).sqrt();
            if i % 3 == j % 3 {
                intra += d;
                ni += 1;
            } else {
                inter += d;
                ne += 1;
            }
        }
    }
    assert!(intra / (ni as f64) < 0.5 * inter / (ne as f64));
}

#[test]
fn momentum_run_ends_below_starting_kl() {
    let (m, p) = tsne_problem(29);
    let cfg = TsneConfig {
        perplexity: 10.0,
        seed: 3,
        ..TsneConfig::default()
    };
    let start = kl_divergence(&p, &initial_embedding(40, 3), 40);
    let end = kl_divergence(&p, &compute_tsne(&m, &cfg).unwrap().flat(), 40);
    assert!(end <= start, "{end} > {start}");
}

#[test]
fn tsne_config_rejects_large_perplexity() {
    let m = common::random_matrix(&mut common::rng(28), 30, 3);
    let err = compute_tsne(&m, &TsneConfig { perplexity: 10.0, ..TsneConfig::default() }).unwrap_err();
    assert!(matches!(err, ProjectionError::InvalidConfig(_)));
}

#[test]
fn imported_projection_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("umap.bin");
    let coords = [0.5, -1.0, 2.0, 3.25, 0.0, 0.0];
    binmat::write_file(&path, 3, 2, &coords).unwrap();
    let p = import_projection("umap", &path, 3).unwrap();
    assert_eq!(p.flat(), coords.to_vec());
    assert_eq!(p.to_bytes(), std::fs::read(&path).unwrap());
    assert!(matches!(
        import_projection("umap", &path, 4),
        Err(ProjectionError::ShapeMismatch { expected_rows: 4, rows: 3, cols: 2 })
    ));
}
