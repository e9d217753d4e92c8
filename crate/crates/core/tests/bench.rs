use ritini::bench::{evaluate, evaluate_graphs, run_benchmark, simulate_system, BenchmarkConfig, Method, Metric};
use ritini::data::load_dataset;
use ritini::graph::{graph_edit_distance, WeightedDigraph};

fn g(pairs: &[(usize, usize)]) -> WeightedDigraph {
    WeightedDigraph::from_pairs(5, pairs).unwrap()
}

fn truth() -> WeightedDigraph {
    g(&[(0, 1), (0, 2), (0, 3), (3, 4), (4, 3)])
}

// Short series and few epochs keep a full pipeline run to seconds.
fn quick(methods: &str, seeds: &str, extra: &str) -> BenchmarkConfig {
    BenchmarkConfig::from_toml(&format!(
        r#"
[systems.five-node]
system = "five-node"
steps = 40
noise = [0.1]
seeds = {seeds}

[methods]
run = {methods}

[methods.ritini.train]
epochs = 3
solver_steps = 1

[methods.ritini.train.model]
hidden = 4
attention_hidden = 4
dynamics_hidden = 4
{extra}
"#
    ))
    .unwrap()
}

#[test]
fn evaluate_identical_graphs() {
    let t = truth();
    assert_eq!(evaluate_graphs(&t, &t, Metric::Ged).unwrap(), 0.0);
    assert_eq!(evaluate_graphs(&t, &t, Metric::Precision).unwrap(), 1.0);
    assert_eq!(evaluate_graphs(&t, &t, Metric::Recall).unwrap(), 1.0);
}

#[test]
fn evaluate_correct_subset() {
    let p = g(&[(0, 1), (0, 2), (3, 4)]);
    assert_eq!(evaluate_graphs(&p, &truth(), Metric::Precision).unwrap(), 1.0);
    assert!((evaluate_graphs(&p, &truth(), Metric::Recall).unwrap() - 0.6).abs() < 1e-15);
    assert_eq!(evaluate_graphs(&p, &truth(), Metric::Ged).unwrap(), 2.0);
}

#[test]
fn evaluate_disjoint_edge_sets() {
    let a = g(&[(1, 0), (2, 0)]);
    let b = g(&[(0, 1), (0, 2), (3, 4)]);
    assert_eq!(evaluate_graphs(&a, &b, Metric::Ged).unwrap(), 5.0);
}

#[test]
fn evaluate_ignores_self_loops_and_handles_empty_predictions() {
    let p = g(&[(0, 0), (0, 1)]);
    assert_eq!(evaluate_graphs(&p, &truth(), Metric::Precision).unwrap(), 1.0);
    let empty = WeightedDigraph::empty(5);
    assert_eq!(evaluate_graphs(&empty, &truth(), Metric::Precision).unwrap(), 0.0);
    assert_eq!(evaluate_graphs(&empty, &truth(), Metric::Recall).unwrap(), 0.0);
}

#[test]
fn evaluate_rejects_size_mismatch() {
    let small = WeightedDigraph::from_pairs(3, &[(0, 1)]).unwrap();
    assert!(evaluate_graphs(&small, &truth(), Metric::Ged).is_err());
}

#[test]
fn evaluate_reads_graph_files() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    g(&[(0, 1)]).save(&a).unwrap();
    truth().save(&b).unwrap();
    assert_eq!(evaluate(&a, &b, Metric::Ged).unwrap(), 4.0);
    assert!("f1".parse::<Metric>().is_err());
    assert!(evaluate(dir.path().join("missing.json"), &b, Metric::Ged).is_err());
}

#[test]
fn full_row_has_every_method_with_sd() {
    let cfg = quick(r#"["ritini", "gc", "oce", "pc", "mte", "mmi"]"#, "[0, 1]", "");
    let report = run_benchmark(&cfg, None).unwrap();
    let csv = report.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "system,ritini,gc,oce,pc,mte,mmi");
    assert_eq!(lines.len(), 2);
    let cells: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(cells[0], "five-node");
    assert_eq!(cells.len(), 7);
    assert!(cells[1..].iter().all(|c| c.contains(" ± ")), "{csv}");
    assert_eq!(report.cells.len(), 12);
    for c in &report.cells {
        assert!(!c.failed(), "{c:?}");
        assert!(c.wall_seconds >= 0.0);
    }
    let rit = report.cells_for("five-node", "ritini").next().unwrap();
    let h = rit.held_out.expect("held-out scores");
    assert!(h.points > 0 && h.mse.is_finite() && h.interpolation_mse.is_finite());
}

#[test]
fn single_replicate_has_no_sd() {
    let cfg = quick(r#"["gc", "mmi"]"#, "[3]", "");
    let report = run_benchmark(&cfg, None).unwrap();
    let a = report.aggregate("five-node", "gc").unwrap();
    assert!(a.mean_ged.is_some());
    assert_eq!(a.sd_ged, None);
    let row = report.to_csv().lines().nth(1).unwrap().to_string();
    assert!(!row.contains('±'), "{row}");
}

#[test]
fn gc_only_gives_single_column() {
    let cfg = quick(r#"["gc"]"#, "[0, 1, 2]", "");
    let csv = run_benchmark(&cfg, None).unwrap().to_csv();
    assert_eq!(csv.lines().next().unwrap(), "system,gc");
    assert_eq!(csv.lines().nth(1).unwrap().split(',').count(), 2);
}

#[test]
fn ablation_adds_a_column_next_to_ritini() {
    let mut cfg = quick(r#"["gc", "ritini"]"#, "[0]", "");
    cfg.report.ablation = true;
    assert_eq!(cfg.methods(), vec![Method::Ritini, Method::RitiniNoPerturb, Method::Gc]);
    let report = run_benchmark(&cfg, None).unwrap();
    assert!(report.to_csv().starts_with("system,ritini,ritini-noperturb,gc\n"));
}

#[test]
fn aggregate_csv_is_reproducible() {
    let cfg = quick(r#"["ritini", "gc", "pc"]"#, "[0, 1]", "");
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_benchmark(&cfg, Some(a.path())).unwrap();
    run_benchmark(&cfg, Some(b.path())).unwrap();
    let ra = std::fs::read(a.path().join("report.csv")).unwrap();
    let rb = std::fs::read(b.path().join("report.csv")).unwrap();
    assert_eq!(ra, rb);
}

#[test]
fn harness_ged_matches_saved_graphs() {
    let cfg = quick(r#"["ritini", "gc", "oce", "pc", "mte", "mmi"]"#, "[0, 2]", "");
    let out = tempfile::tempdir().unwrap();
    let report = run_benchmark(&cfg, Some(out.path())).unwrap();
    assert!(out.path().join("report.json").exists());
    for c in &report.cells {
        let run = out.path().join("five-node").join(format!("seed-{}", c.seed));
        let data = load_dataset(run.join("data")).unwrap();
        let pred = WeightedDigraph::load(run.join(&c.method).join("graph.json")).unwrap();
        let t = data.ground_truth.as_ref().unwrap();
        assert_eq!(Some(graph_edit_distance(&pred, t).unwrap()), c.ged, "{c:?}");
        assert_eq!(c.edges, Some(pred.without_self_loops().num_edges()));
    }
    let rit = out.path().join("five-node/seed-0/ritini");
    for f in ["static_graph.json", "dynamic_graph.json", "prior_graph.json", "trajectories.csv", "model.json"] {
        assert!(rit.join(f).exists(), "{f}");
    }
}

#[test]
fn failed_cells_are_recorded_and_others_continue() {
    let cfg = quick(r#"["ritini", "gc"]"#, "[0, 1]", "init_scale = 1e200");
    let report = run_benchmark(&cfg, None).unwrap();
    let failed: Vec<_> = report.cells.iter().filter(|c| c.failed()).collect();
    assert_eq!(failed.len(), 2);
    assert!(failed.iter().all(|c| c.method == "ritini" && c.ged.is_none()));
    assert_eq!(report.aggregate("five-node", "ritini").unwrap().cell_text(), "failed");
    assert_eq!(report.aggregate("five-node", "gc").unwrap().failures, 0);
    assert!(report.cells_for("five-node", "gc").all(|c| c.ged.is_some()));
}

#[test]
fn pooled_dataset_layout() {
    let cfg = BenchmarkConfig::from_toml(
        r#"
[systems.a]
system = "five-node"
steps = 30
noise = [0.05, 0.15, 0.25]
perturbations = 1
"#,
    )
    .unwrap();
    let d = simulate_system(&cfg.systems["a"], 2).unwrap();
    assert_eq!(d.series.len(), 6);
    let perturbed: Vec<usize> = (0..6).filter(|&k| d.is_perturbed(k)).collect();
    assert_eq!(perturbed, vec![1, 3, 5]);
    assert_eq!(d.ground_truth.as_ref().unwrap().num_edges(), 5);
    assert_eq!(simulate_system(&cfg.systems["a"], 2).unwrap().series, d.series);
}

#[test]
fn config_rejects_bad_input() {
    let base = "[systems.a]\nsystem = \"five-node\"\n";
    assert!(BenchmarkConfig::from_toml("[methods]\nrun = [\"gc\"]\n").is_err());
    assert!(BenchmarkConfig::from_toml(&format!("{base}seeds = []\n")).is_err());
    assert!(BenchmarkConfig::from_toml(&format!("{base}steps = 5000\n")).is_err());
    assert!(BenchmarkConfig::from_toml(&format!("{base}colour = 1\n")).is_err());
    assert!(BenchmarkConfig::from_toml(&format!("{base}noise = [-0.1]\n")).is_err());
    assert!(BenchmarkConfig::from_toml(&format!("{base}[methods]\nrun = [\"lasso\"]\n")).is_err());
    assert!(BenchmarkConfig::from_toml(&format!("{base}[systems.a.ritini]\nthreshold = -1.0\n")).is_err());
    let big = "[systems.b]\nsystem = \"wilson-cowan\"\nnodes = 60\n";
    assert!(BenchmarkConfig::from_toml(big).is_err());
    assert!(BenchmarkConfig::from_toml(&format!("{big}[report]\nlarge = true\n")).is_ok());
}

#[test]
fn system_overrides_merge_over_method_defaults() {
    let cfg = BenchmarkConfig::from_toml(
        r#"
[systems.a]
system = "five-node"
[systems.a.ritini]
threshold = 0.3
train.model.lags = 3

[systems.b]
system = "five-node"

[methods.ritini.train]
epochs = 7
"#,
    )
    .unwrap();
    let a = cfg.ritini_for("a").unwrap();
    assert_eq!((a.threshold, a.train.model.lags, a.train.epochs), (0.3, 3, 7));
    assert_eq!(a.train.model.hidden, cfg.methods.ritini.train.model.hidden);
    assert_eq!(cfg.ritini_for("b").unwrap(), cfg.methods.ritini);
    assert!(cfg.ritini_for("c").is_err());
}
