mod common;

use proptest::prelude::*;
use streetctx::labeler::StreetContext;
use streetctx::rng::Rng;
use streetctx::tsne::*;

fn random_matrix(n: usize, d: usize, seed: u64) -> FeatureMatrix {
    let mut rng = Rng::seed_from_u64(seed);
    FeatureMatrix::new(n, d, (0..n * d).map(|_| rng.gaussian()).collect()).unwrap()
}

fn naive_sq_dists(x: &FeatureMatrix) -> Vec<f64> {
    let n = x.n();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            for k in 0..x.d() {
                out[i * n + j] += (x.row(i)[k] - x.row(j)[k]).powi(2);
            }
        }
    }
    out
}

fn random_distribution(len: usize, rng: &mut Rng) -> Vec<f64> {
    let raw: Vec<f64> = (0..len).map(|_| rng.next_f64().max(PROB_FLOOR)).collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|v| v / s).collect()
}

#[test]
fn distances_match_naive_loops() {
    let x = random_matrix(10, 5, 1);
    let fast = pairwise_sq_dists(&x);
    for (a, b) in fast.iter().zip(naive_sq_dists(&x)) {
        assert!((a - b).abs() <= 1e-12);
    }
}

#[test]
fn kl_matches_naive_sum() {
    let mut rng = Rng::seed_from_u64(2);
    let p = random_distribution(64, &mut rng);
    let q = random_distribution(64, &mut rng);
    let mut naive = 0.0;
    for i in 0..64 {
        naive += p[i] * (p[i].ln() - q[i].ln());
    }
    assert!((kl_divergence(&p, &q) - naive).abs() <= 1e-12);
    assert!(kl_divergence(&p, &p).abs() <= 1e-15);
}

fn entropy_bits(row: &[f64]) -> f64 {
    row.iter().filter(|&&v| v > 0.0).map(|&v| -v * v.log2()).sum()
}

#[test]
fn calibration_entropy_within_tolerance() {
    let x = random_matrix(50, 10, 3);
    let cfg = TsneConfig::default();
    let cal = perplexity_calibrate(&pairwise_sq_dists(&x), 50, 10.0, cfg.tolerance, cfg.max_steps).unwrap();
    assert!(cal.unconverged.is_empty());
    for i in 0..50 {
        let row = &cal.p[i * 50..(i + 1) * 50];
        assert_eq!(row[i], 0.0);
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((entropy_bits(row) - 10f64.log2()).abs() <= 1e-4, "row {i}");
    }
}

#[test]
fn symmetrize_matches_formula() {
    let n = 8;
    let mut rng = Rng::seed_from_u64(4);
    let mut pcond = vec![0.0; n * n];
    for i in 0..n {
        let row = random_distribution(n - 1, &mut rng);
        let mut k = 0;
        for j in 0..n {
            if j != i {
                pcond[i * n + j] = row[k];
                k += 1;
            }
        }
    }
    let p = symmetrize(&pcond, n);
    for i in 0..n {
        for j in 0..n {
            let want = if i == j { 0.0 } else { (pcond[i * n + j] + pcond[j * n + i]) / (2.0 * n as f64) };
            assert!((p[i * n + j] - want).abs() <= 1e-15);
            assert_eq!(p[i * n + j], p[j * n + i]);
        }
    }
    assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
}

#[test]
fn gradient_matches_finite_differences() {
    let (p, y) = common::toy_problem();
    let analytic = tsne_gradient(&p, &y, 6);
    let numeric = common::numeric_grad_scalar(&y, |v| tsne_objective(&p, v, 6));
    let err = common::max_rel_error(&analytic, &numeric);
    assert!(err <= 1e-5, "{err:e}");
}

#[test]
fn clusters_stay_separated() {
    let x = common::three_clusters(7);
    let emb = tsne_embed(&x, &TsneConfig::default()).unwrap();
    let points: Vec<[f64; 2]> = (0..90).map(|i| emb.point(i)).collect();
    let s = common::silhouette(&points, x.labels().unwrap());
    assert!(s >= 0.6, "silhouette {s}");

    let tail = &emb.kl_trace[100..];
    let steps = tail.windows(2).count();
    let down = tail.windows(2).filter(|w| w[1] <= w[0]).count();
    assert!(down as f64 >= 0.95 * steps as f64, "{down}/{steps}");
    assert!(emb.kl >= 0.0);

    assert_eq!(emb, tsne_embed(&x, &TsneConfig::default()).unwrap());
    let img = render_scatter(&emb, x.labels());
    let ink = img.pixels().chunks(3).filter(|p| p != &[255, 255, 255]).count();
    assert!((ink as f64) < 0.05 * (SCATTER_SIZE * SCATTER_SIZE) as f64);
}

#[test]
fn export_round_trips_at_nine_digits() {
    let emb = tsne_embed(&random_matrix(12, 3, 9), &TsneConfig { iterations: 50, ..TsneConfig::default() }).unwrap();
    let ids: Vec<String> = (0..12).map(|i| format!("p{i}_L")).collect();
    let labels: Vec<StreetContext> = (0..12).map(|i| StreetContext::ALL[i % 11]).collect();
    let rows = parse_embedding_csv(&export_embedding(&emb, &ids, Some(&labels)).unwrap()).unwrap();
    assert_eq!(rows.len(), 12);
    for (i, (id, label, xy)) in rows.iter().enumerate() {
        assert_eq!((id, *label), (&ids[i], Some(labels[i])));
        for (got, want) in xy.iter().zip(emb.point(i)) {
            assert!((got - want).abs() <= 5e-9 * want.abs().max(1e-300));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn affinities_are_distributions(n in 4usize..14, seed in any::<u64>()) {
        let x = random_matrix(n, 3, seed);
        let perp = (n - 1) as f64 / 3.0;
        let cal = perplexity_calibrate(&pairwise_sq_dists(&x), n, perp, 1e-5, 200).unwrap();
        let p = symmetrize(&cal.p, n);
        let mut rng = Rng::seed_from_u64(seed ^ 1);
        let y: Vec<f64> = (0..2 * n).map(|_| rng.gaussian()).collect();
        let q = low_dim_affinities(&y, n);
        for m in [&p, &q] {
            prop_assert!((m.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            for i in 0..n {
                for j in 0..n {
                    prop_assert!(m[i * n + j] >= 0.0);
                    prop_assert_eq!(m[i * n + j], m[j * n + i]);
                }
            }
        }
        prop_assert!(kl_divergence(&p, &q) >= -1e-12);
    }
}
