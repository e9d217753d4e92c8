use std::collections::BTreeMap;
use std::f64::consts::{E, PI};

use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use ritini::baselines::*;
use ritini::data::{default_vertex_names, Dataset, MultivariateTimeSeries};
use ritini::sim::{simulate_five_node, FiveNodeConfig};

fn normals(rng: &mut ChaCha8Rng, m: usize) -> Vec<f64> {
    (0..m).map(|_| StandardNormal.sample(rng)).collect()
}

fn column(v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_column_slice(v.len(), 1, v)
}

fn samples(cols: &[Vec<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(cols[0].len(), cols.len(), |r, c| cols[c][r])
}

fn dataset(cols: &[Vec<f64>]) -> Dataset {
    let t = cols[0].len();
    let s = MultivariateTimeSeries::new(
        (0..t).map(|i| i as f64).collect(),
        samples(cols),
        default_vertex_names(cols.len()),
    )
    .unwrap();
    Dataset::new(vec![s], BTreeMap::new(), None, None).unwrap()
}

fn half_log_2pie(var: f64) -> f64 {
    0.5 * (2.0 * PI * E * var).ln()
}

fn info(n_perm: usize) -> InfoConfig {
    let mut c = InfoConfig::default();
    c.significance.n_perm = n_perm;
    c
}

/// `x` white, `y_t = 0.8 x_{t-1} + e`, `z_t = 0.8 y_{t-1} + e`.
fn lagged_chain(seed: u64, t: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = normals(&mut rng, t);
    let (ey, ez) = (normals(&mut rng, t), normals(&mut rng, t));
    let mut y = vec![0.0; t];
    let mut z = vec![0.0; t];
    for i in 1..t {
        y[i] = 0.8 * x[i - 1] + 0.5 * ey[i];
        z[i] = 0.8 * y[i - 1] + 0.5 * ez[i];
    }
    vec![x, y, z]
}

#[test]
fn entropy_of_standard_normal() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = column(&normals(&mut rng, 5000));
    let h = gaussian_conditional_entropy(&x, &DMatrix::zeros(5000, 0), 1e-8).unwrap();
    assert!((h - half_log_2pie(1.0)).abs() < 0.02, "{h}");
    assert!((half_log_2pie(1.0) - 1.4189).abs() < 1e-4);
}

#[test]
fn conditional_entropy_of_correlated_pair() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let rho: f64 = 0.5;
    let a = normals(&mut rng, 5000);
    let b = normals(&mut rng, 5000);
    let y: Vec<f64> = a.clone();
    let x: Vec<f64> = a.iter().zip(&b).map(|(a, b)| rho * a + (1.0 - rho * rho).sqrt() * b).collect();
    let h = gaussian_conditional_entropy(&column(&x), &column(&y), 1e-8).unwrap();
    assert!((h - half_log_2pie(0.75)).abs() < 0.02, "{h}");
    assert!((half_log_2pie(0.75) - 1.2751).abs() < 1e-4);
}

#[test]
fn independent_conditioning_leaves_entropy_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = column(&normals(&mut rng, 5000));
    let y = samples(&[normals(&mut rng, 5000), normals(&mut rng, 5000)]);
    let h = gaussian_conditional_entropy(&x, &y, 1e-8).unwrap();
    let h0 = gaussian_conditional_entropy(&x, &DMatrix::zeros(5000, 0), 1e-8).unwrap();
    assert!((h - h0).abs() < 0.005, "{h} vs {h0}");
}

#[test]
fn knn_entropy_matches_gaussian_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = column(&normals(&mut rng, 2000));
    let h = knn_entropy(&x, 4).unwrap();
    assert!((h - half_log_2pie(1.0)).abs() < 0.05, "{h}");
}

fn spd(entries: &[f64], d: usize) -> DMatrix<f64> {
    let a = DMatrix::from_column_slice(d, d, &entries[..d * d]);
    &a * a.transpose() + DMatrix::identity(d, d) * 0.1
}

fn h_of(cov: &DMatrix<f64>, idx: &[usize]) -> f64 {
    if idx.is_empty() {
        return 0.0;
    }
    let sub = DMatrix::from_fn(idx.len(), idx.len(), |i, j| cov[(idx[i], idx[j])]);
    gaussian_entropy_from_cov(&sub).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn conditioning_never_increases_entropy(entries in prop::collection::vec(-2.0f64..2.0, 16)) {
        let cov = spd(&entries, 4);
        // h(X | Y, Z) <= h(X | Y) <= h(X) with X = 0, Y = {1}, Z = {2, 3}.
        let h_x = h_of(&cov, &[0]);
        let h_x_y = h_of(&cov, &[0, 1]) - h_of(&cov, &[1]);
        let h_x_yz = h_of(&cov, &[0, 1, 2, 3]) - h_of(&cov, &[1, 2, 3]);
        prop_assert!(h_x_y <= h_x + 1e-10);
        prop_assert!(h_x_yz <= h_x_y + 1e-10);
    }
}

#[test]
fn granger_detects_lagged_driver_only() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let t = 500;
    let x = normals(&mut rng, t);
    let e = normals(&mut rng, t);
    let mut y = vec![0.0; t];
    for i in 1..t {
        y[i] = 0.9 * y[i - 1] + 0.5 * x[i - 1] + e[i];
    }
    let g = granger_graph(&dataset(&[x, y]), &GrangerConfig::default()).unwrap();
    assert!(g.has_edge(0, 1));
    assert!(!g.has_edge(1, 0));
}

#[test]
fn granger_finds_nothing_between_independent_noise() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let cols = vec![normals(&mut rng, 400), normals(&mut rng, 400)];
    let cfg = GrangerConfig {
        alpha: 0.01,
        ..GrangerConfig::default()
    };
    assert_eq!(granger_graph(&dataset(&cols), &cfg).unwrap().num_edges(), 0);
}

#[test]
fn granger_false_positive_rate_is_nominal() {
    let alpha = 0.05;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut hits = 0;
    for _ in 0..200 {
        let x = normals(&mut rng, 300);
        let y = normals(&mut rng, 300);
        let r = granger_test(&[(&x, &y)], 2, 0, 1).unwrap();
        hits += (r.p_value < alpha) as usize;
    }
    let rate = hits as f64 / 200.0;
    assert!(rate <= 2.0 * alpha && rate >= alpha / 2.0, "false-positive rate {rate}");
}

#[test]
fn granger_recovers_linear_coupling_of_five_node_system() {
    let cfg = FiveNodeConfig {
        steps: 500,
        ..FiveNodeConfig::default()
    };
    let d = simulate_five_node(&cfg).unwrap();
    for p in [3, 5] {
        let gc = GrangerConfig {
            lags: p,
            ..GrangerConfig::default()
        };
        assert!(granger_graph(&d, &gc).unwrap().has_edge(0, 2), "lags {p}");
    }
}

#[test]
fn granger_names_collinear_pair() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = normals(&mut rng, 200);
    let err = granger_graph(&dataset(&[x.clone(), x]), &GrangerConfig::default()).unwrap_err();
    assert!(err.to_string().contains("0") && err.to_string().contains("1"), "{err}");
}

#[test]
fn info_methods_find_nothing_in_independent_noise() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let cols: Vec<Vec<f64>> = (0..3).map(|_| normals(&mut rng, 600)).collect();
    let d = dataset(&cols);
    let cfg = InfoConfig {
        significance: SignificanceConfig {
            alpha: 0.01,
            ..SignificanceConfig::default()
        },
        ..InfoConfig::default()
    };
    assert_eq!(oce_graph(&d, &cfg).unwrap().without_self_loops().num_edges(), 0);
    assert_eq!(mte_graph(&d, &cfg).unwrap().num_edges(), 0);
    assert_eq!(mmi_graph(&d, &cfg).unwrap().num_edges(), 0);
}

#[test]
fn oce_prunes_indirect_cause_in_chain() {
    let d = dataset(&lagged_chain(10, 1000));
    let g = oce_graph(&d, &info(100)).unwrap().without_self_loops();
    assert!(g.has_edge(1, 2));
    assert!(!g.has_edge(0, 2));
    assert!(g.has_edge(0, 1));
}

#[test]
fn mte_admits_the_driver() {
    let d = dataset(&lagged_chain(11, 1000));
    let (g, scores) = mte_graph_scored(&d, &info(100)).unwrap();
    assert!(g.has_edge(0, 1) && g.has_edge(1, 2));
    assert!(!g.has_edge(0, 2));
    let first_for_y = scores.iter().find(|s| s.dst == 1).unwrap();
    assert_eq!(first_for_y.src, 0);
    assert!(first_for_y.selected);
}

#[test]
fn mte_admits_one_of_two_duplicated_sources() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let t = 1000;
    let x = normals(&mut rng, t);
    let e = normals(&mut rng, t);
    let dup: Vec<f64> = x.clone();
    let mut y = vec![0.0; t];
    for i in 1..t {
        y[i] = 0.8 * x[i - 1] + 0.5 * e[i];
    }
    let g = mte_graph(&dataset(&[x, dup, y]), &info(100)).unwrap();
    assert!(g.has_edge(0, 2), "lower index wins the tie");
    assert!(!g.has_edge(1, 2));
}

#[test]
fn mmi_score_matches_gaussian_closed_form() {
    // y_{t+1} = x_t + 0.5 e with x_t independent of y_t. Series are
    // z-scored first, so var(y') = 1 and var(y' | x) = 0.25 / 1.25.
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let t = 20000;
    let x = normals(&mut rng, t);
    let e = normals(&mut rng, t);
    let mut y = vec![0.0; t];
    for i in 1..t {
        y[i] = x[i - 1] + 0.5 * e[i];
    }
    let (g, scores) = mmi_graph_scored(&dataset(&[x, y]), &info(99)).unwrap();
    assert!(g.has_edge(0, 1));
    let c = scores.iter().find(|s| s.src == 0 && s.dst == 1).unwrap().score;
    let expect = 1.0 - half_log_2pie(0.2) / half_log_2pie(1.0);
    assert!((c - expect).abs() < 0.02, "{c} vs {expect}");
}

#[test]
fn baselines_are_deterministic() {
    let d = dataset(&lagged_chain(14, 400));
    let cfg = BaselineConfig::default();
    for m in BaselineMethod::ALL {
        let a = run_baseline(m, &d, &cfg).unwrap();
        let b = run_baseline(m, &d, &cfg).unwrap();
        assert_eq!(a, b, "{}", m.name());
    }
}

#[test]
fn score_table_has_one_row_per_tested_pair() {
    let d = dataset(&lagged_chain(15, 400));
    let (_, scores) = run_baseline(BaselineMethod::Gc, &d, &BaselineConfig::default()).unwrap();
    assert_eq!(scores.len(), 6);
    let csv = scores_to_csv(&scores);
    assert_eq!(csv.lines().count(), 7);
}

fn collider(seed: u64, m: usize) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (x, y, e) = (normals(&mut rng, m), normals(&mut rng, m), normals(&mut rng, m));
    let z: Vec<f64> = (0..m).map(|i| x[i] + y[i] + 0.5 * e[i]).collect();
    samples(&[x, y, z])
}

fn chain(seed: u64, m: usize) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (x, e1, e2) = (normals(&mut rng, m), normals(&mut rng, m), normals(&mut rng, m));
    let y: Vec<f64> = (0..m).map(|i| x[i] + e1[i]).collect();
    let z: Vec<f64> = (0..m).map(|i| y[i] + e2[i]).collect();
    samples(&[x, y, z])
}

// At alpha = 0.05 one run in twenty keeps X - Y through a type-I error on the
// marginal test, so the canonical cases use alpha = 0.01.
fn canonical() -> PcConfig {
    PcConfig {
        alpha: 0.01,
        ..PcConfig::default()
    }
}

#[test]
fn pc_orients_collider() {
    for seed in 0..10 {
        let g = pc_analyze_samples(&collider(seed, 2000), &canonical()).unwrap();
        assert!(!g.adjacent(0, 1), "seed {seed}");
        assert!(g.oriented(0, 2) && g.oriented(1, 2), "seed {seed}");
        assert!(!g.oriented(2, 0) && !g.oriented(2, 1), "seed {seed}");
    }
}

#[test]
fn pc_leaves_chain_unoriented() {
    for seed in 0..10 {
        let g = pc_analyze_samples(&chain(seed, 2000), &canonical()).unwrap();
        assert!(g.adjacent(0, 1) && g.adjacent(1, 2) && !g.adjacent(0, 2), "seed {seed}");
        assert!(g.undirected(0, 1) && g.undirected(1, 2), "seed {seed}");
        assert_eq!(g.sepset(0, 2), Some(&[1][..]), "seed {seed}");
        let d = g.to_digraph();
        assert!(d.has_edge(0, 1) && d.has_edge(1, 0) && d.has_edge(1, 2) && d.has_edge(2, 1));
    }
}

#[test]
fn pc_on_independent_variables_is_empty() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let cols: Vec<Vec<f64>> = (0..4).map(|_| normals(&mut rng, 2000)).collect();
    let cfg = PcConfig {
        alpha: 0.01,
        ..PcConfig::default()
    };
    assert_eq!(pc_analyze_samples(&samples(&cols), &cfg).unwrap().to_digraph().num_edges(), 0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn pc_never_orients_a_directed_cycle(seed in 0u64..10_000, n in 3usize..7) {
        // Random linear DAG in index order plus noise.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = 500;
        let mut cols: Vec<Vec<f64>> = Vec::new();
        for v in 0..n {
            let mut c = normals(&mut rng, m);
            for u in 0..v {
                let w: f64 = StandardNormal.sample(&mut rng);
                if w.abs() > 0.7 {
                    for i in 0..m {
                        c[i] += w * cols[u][i];
                    }
                }
            }
            cols.push(c);
        }
        let g = pc_analyze_samples(&samples(&cols), &PcConfig::default()).unwrap();
        prop_assert!(!g.has_directed_cycle());
    }
}
