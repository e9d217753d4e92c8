use std::collections::{BTreeMap, VecDeque};

use nalgebra::DMatrix;
use proptest::prelude::*;
use ritini::data::*;
use ritini::graph::*;

/// Off-diagonal slots of an `n`-vertex digraph, in a fixed order.
fn slots(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).collect()
}

fn from_mask(n: usize, mask: u32) -> WeightedDigraph {
    let pairs: Vec<(usize, usize)> = slots(n)
        .into_iter()
        .enumerate()
        .filter(|(b, _)| mask >> b & 1 == 1)
        .map(|(_, p)| p)
        .collect();
    WeightedDigraph::from_pairs(n, &pairs).unwrap()
}

/// Minimum number of single-edge insertions or deletions turning `from`
/// into every other graph, by breadth-first search over all graphs.
fn edit_costs(k: usize, from: u32) -> Vec<u32> {
    let mut dist = vec![u32::MAX; 1 << k];
    dist[from as usize] = 0;
    let mut queue = VecDeque::from([from]);
    while let Some(g) = queue.pop_front() {
        for b in 0..k {
            let h = g ^ (1 << b);
            if dist[h as usize] == u32::MAX {
                dist[h as usize] = dist[g as usize] + 1;
                queue.push_back(h);
            }
        }
    }
    dist
}

#[test]
fn ged_equals_brute_force_edit_cost_for_all_small_digraphs() {
    for n in 1..=4 {
        let k = slots(n).len();
        let graphs: Vec<WeightedDigraph> = (0..1u32 << k).map(|m| from_mask(n, m)).collect();
        for a in 0..graphs.len() {
            let cost = edit_costs(k, a as u32);
            for (b, g) in graphs.iter().enumerate() {
                assert_eq!(graph_edit_distance(&graphs[a], g).unwrap() as u32, cost[b], "n {n}: {a} -> {b}");
            }
        }
    }
}

fn graph(n: usize) -> impl Strategy<Value = WeightedDigraph> {
    prop::collection::vec((0..n, 0..n, 0.01f64..1.0), 0..3 * n).prop_map(move |es| {
        let mut g = WeightedDigraph::empty(n);
        for (s, d, w) in es {
            let _ = g.add_edge(s, d, w);
        }
        g
    })
}

fn triple() -> impl Strategy<Value = (WeightedDigraph, WeightedDigraph, WeightedDigraph)> {
    (1usize..=8).prop_flat_map(|n| (graph(n), graph(n), graph(n)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn ged_is_a_metric((a, b, c) in triple()) {
        let d = |x: &WeightedDigraph, y: &WeightedDigraph| graph_edit_distance(x, y).unwrap();
        prop_assert_eq!(d(&a, &a), 0);
        prop_assert_eq!(d(&a, &b), d(&b, &a));
        prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c));
        if d(&a, &b) == 0 {
            prop_assert_eq!(a.without_self_loops().edge_set(), b.without_self_loops().edge_set());
        }
    }

    #[test]
    fn binarize_is_monotone(g in (1usize..=8).prop_flat_map(graph), lo in 0.0f64..1.0, hi in 0.0f64..1.0) {
        let (lo, hi) = (lo.min(hi), lo.max(hi));
        let strict = binarize(&g, hi).unwrap().edge_set();
        let loose = binarize(&g, lo).unwrap().edge_set();
        prop_assert!(strict.is_subset(&loose));
    }

    #[test]
    fn time_average_of_identical_snapshots_is_the_snapshot(
        n in 1usize..6,
        k in 1usize..5,
        seed in prop::collection::vec(0.0f64..1.0, 36),
    ) {
        let snap = DMatrix::from_fn(n, n, |i, j| seed[i * 6 + j]);
        let traj = AttentionTrajectory::new((0..k).map(|t| t as f64).collect(), vec![snap.clone(); k]).unwrap();
        prop_assert_eq!(traj.mean_matrix().unwrap(), snap.clone());
        let avg = time_average(&traj).unwrap();
        prop_assert_eq!(avg, attention_to_digraph(&snap));
    }

    #[test]
    fn graph_json_round_trips(g in (1usize..=8).prop_flat_map(graph)) {
        let back = WeightedDigraph::from_json(&g.to_json()).unwrap();
        prop_assert_eq!(&back, &g);
        prop_assert_eq!(back.to_json(), g.to_json());
    }
}

fn series(values: &[f64], n: usize) -> MultivariateTimeSeries {
    let t = values.len() / n;
    MultivariateTimeSeries::from_grid(0.0, 0.5, DMatrix::from_row_slice(t, n, values)).unwrap()
}

fn values(max_t: usize, n: usize) -> impl Strategy<Value = Vec<f64>> {
    (2..max_t).prop_flat_map(move |t| prop::collection::vec(-1e3f64..1e3, t * n))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn lag_window_pads_first_grid_point(v in values(20, 3), lags in 1usize..6) {
        let s = series(&v, 3);
        let w = lag_window(&s, 0.0, lags, None).unwrap();
        for l in 0..lags {
            for c in 0..3 {
                prop_assert_eq!(w[(l, c)], s.value(0, c));
            }
        }
    }

    #[test]
    fn perturbation_changes_exactly_one_cell(v in values(20, 3), r in 0usize..100, c in 0usize..3, eps in 0.01f64..5.0) {
        let s = series(&v, 3);
        let row = r % s.len();
        let p = apply_perturbation(&s, &PerturbationRecord::additive(c, s.times()[row], eps)).unwrap();
        let diff = s.values().iter().zip(p.values().iter()).filter(|(a, b)| a != b).count();
        prop_assert_eq!(diff, 1);
        prop_assert_eq!(p.value(row, c), s.value(row, c) + eps);
    }

    #[test]
    fn holdout_partitions_interior(len in 4usize..300, f in 0.01f64..0.5, seed in any::<u64>()) {
        let (train, held) = split_holdout(len, f, seed).unwrap();
        let mut all: Vec<usize> = train.iter().chain(&held).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..len).collect::<Vec<_>>());
        prop_assert!(!held.contains(&0) && !held.contains(&(len - 1)));
        prop_assert_eq!(held.len(), (f * len as f64 + 1e-9).floor() as usize);
        prop_assert_eq!(split_holdout(len, f, seed).unwrap(), (train, held));
    }

    #[test]
    fn dataset_round_trips_bit_for_bit(v in values(30, 2), w in values(30, 2)) {
        let a = series(&v, 2);
        let len = a.len().min(w.len() / 2);
        let b = series(&w[..2 * len], 2);
        let a = series(&v[..2 * len], 2);
        let rec = PerturbationRecord::additive(1, b.times()[len / 2], 0.5);
        let d = Dataset::new(
            vec![a, b],
            BTreeMap::from([(1, vec![rec])]),
            Some(WeightedDigraph::from_pairs(2, &[(0, 1)]).unwrap()),
            None,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&d, dir.path()).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        prop_assert_eq!(back.series.len(), 2);
        for (x, y) in back.series.iter().zip(&d.series) {
            prop_assert!(x.values().iter().zip(y.values().iter()).all(|(p, q)| p.to_bits() == q.to_bits()));
            prop_assert_eq!(x.times(), y.times());
        }
        prop_assert_eq!(back.perturbations, d.perturbations);
        prop_assert_eq!(back.ground_truth, d.ground_truth);
    }
}

#[test]
fn load_reports_missing_meta_and_bad_time_column() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load_dataset(dir.path()), Err(ritini::Error::MissingFile(_))));

    let s = series(&[0.0, 1.0, 2.0, 3.0, 4.0, 5.0], 2);
    let d = Dataset::new(vec![s], BTreeMap::new(), None, None).unwrap();
    save_dataset(&d, dir.path()).unwrap();
    assert!(load_dataset(dir.path()).is_ok());
    let csv = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|x| x == "csv"))
        .unwrap();
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    lines.swap(1, 2);
    std::fs::write(&csv, lines.join("\n") + "\n").unwrap();
    assert!(load_dataset(dir.path()).is_err());
}

#[test]
fn without_perturbations_keeps_only_unperturbed_series() {
    let a = series(&[0.0; 10], 2);
    let mut b = a.clone();
    b = apply_perturbation(&b, &PerturbationRecord::additive(0, 1.0, 1.0)).unwrap();
    let rec = PerturbationRecord::additive(0, 1.0, 1.0);
    let d = Dataset::new(vec![a.clone(), b], BTreeMap::from([(1, vec![rec])]), None, None).unwrap();
    let plain = d.without_perturbations();
    assert_eq!(plain.series, vec![a]);
    assert!(plain.perturbations.is_empty());
}
