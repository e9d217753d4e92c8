use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::forward::{attention, dynamics, pooled_signal, Layout};
use super::params::{BoundParams, ModelConfig, ModelParameters};
use super::solver::rk4_integrate;
use crate::autodiff::{MomentumSgd, Tape, Tensor, Var};
use crate::data::{Dataset, MultivariateTimeSeries};
use crate::error::{Error, Result};
use crate::graph::{AttentionTrajectory, PriorGraph};

/// Training hyper-parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelConfig,
    /// Weight of the Frobenius distance between attention and the prior.
    pub lambda1: f64,
    /// Weight of the L1 norm of the attention.
    pub lambda2: f64,
    pub epochs: usize,
    pub optimizer: MomentumSgd,
    /// RK4 steps per sampling interval.
    pub solver_steps: usize,
    /// Loss weight of perturbed replicates relative to unperturbed ones.
    pub perturbation_weight: f64,
    /// Let every vertex attend to every other; the prior then acts only
    /// through the Frobenius penalty.
    pub dense_support: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            lambda1: 0.1,
            lambda2: 0.01,
            epochs: 500,
            optimizer: MomentumSgd::default(),
            solver_steps: 4,
            perturbation_weight: 1.0,
            dense_support: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return Err(Error::Config("lambda1 and lambda2 must be nonnegative".into()));
        }
        if self.solver_steps == 0 {
            return Err(Error::Config("solver_steps must be at least 1".into()));
        }
        if !(self.perturbation_weight >= 0.0) {
            return Err(Error::Config("perturbation_weight must be nonnegative".into()));
        }
        let o = &self.optimizer;
        if !(o.learning_rate > 0.0 && (0.0..1.0).contains(&o.momentum) && o.clip_norm > 0.0) {
            return Err(Error::Config(format!("bad optimizer settings {o:?}")));
        }
        Ok(())
    }
}

/// Per-vertex affine map to zero mean, unit variance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    fn fit(rows: &[Vec<f64>], n: usize) -> Self {
        let m = rows.len().max(1) as f64;
        let mean: Vec<f64> = (0..n).map(|v| rows.iter().map(|r| r[v]).sum::<f64>() / m).collect();
        let std = (0..n)
            .map(|v| {
                let var = rows.iter().map(|r| (r[v] - mean[v]).powi(2)).sum::<f64>() / m;
                if var > 1e-24 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(v, &y)| (y - self.mean[v]) / self.std[v])
            .collect()
    }

    pub fn inverse(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .enumerate()
            .map(|(v, &y)| y * self.std[v] + self.mean[v])
            .collect()
    }
}

/// Observed (standardized) samples of one series on the model clock, where
/// one sampling step is one time unit.
struct Track {
    times: Vec<f64>,
    values: Vec<Vec<f64>>,
}

impl Track {
    /// Linear interpolation; clamps before the first sample and after the
    /// last.
    fn at(&self, u: f64) -> Vec<f64> {
        let k = self.times.partition_point(|&t| t <= u + 1e-9);
        if k == 0 {
            return self.values[0].clone();
        }
        let lo = k - 1;
        if lo + 1 == self.times.len() || (u - self.times[lo]).abs() <= 1e-9 {
            return self.values[lo].clone();
        }
        let (t0, t1) = (self.times[lo], self.times[lo + 1]);
        let f = (u - t0) / (t1 - t0);
        self.values[lo]
            .iter()
            .zip(&self.values[lo + 1])
            .map(|(a, b)| a + f * (b - a))
            .collect()
    }
}

enum LagSource {
    Observed(Tensor),
    /// Interpolate solver grid states `j` and `j + 1`.
    Grid { j: usize, frac: f64 },
}

struct Stage {
    time_col: Tensor,
    lags: Vec<LagSource>,
}

/// Intervals of equal duration solved as one batch.
struct Group {
    lay: Layout,
    steps: usize,
    duration: f64,
    windows: Tensor,
    init: Tensor,
    target: Option<Tensor>,
    weights: Tensor,
    stages: Vec<Stage>,
    /// Per block: series index and start time on the model clock.
    starts: Vec<(usize, f64)>,
    prior_rep: Tensor,
}

struct Interval {
    series: usize,
    start: f64,
    duration: f64,
    target: Option<Vec<f64>>,
    weight: f64,
}

struct Clock {
    dt: f64,
    u_min: f64,
    span: f64,
}

impl Clock {
    fn t_norm(&self, u: f64) -> f64 {
        (u - self.u_min) / self.span
    }
}

#[allow(clippy::too_many_arguments)]
fn build_group(
    intervals: &[&Interval],
    tracks: &[Track],
    n: usize,
    lags: usize,
    solver_steps: usize,
    mask: &[bool],
    prior: &DMatrix<f64>,
    clock: &Clock,
) -> Result<Group> {
    let b = intervals.len();
    let duration = intervals[0].duration;
    let steps = ((duration * solver_steps as f64) - 1e-9).ceil().max(1.0) as usize;
    let h = duration / steps as f64;
    let lay = Layout::new(b, n, mask)?;
    let rows = b * n;

    let mut windows = Tensor::zeros(rows, lags);
    let mut init = Tensor::zeros(rows, 1);
    let mut weights = Tensor::zeros(rows, 1);
    let mut target = intervals[0].target.as_ref().map(|_| Tensor::zeros(rows, 1));
    for (k, iv) in intervals.iter().enumerate() {
        let tr = &tracks[iv.series];
        for d in 0..lags {
            let x = tr.at(iv.start - d as f64);
            for i in 0..n {
                windows.set(k * n + i, d, x[i]);
            }
        }
        let x0 = tr.at(iv.start);
        for i in 0..n {
            init.set(k * n + i, 0, x0[i]);
            weights.set(k * n + i, 0, iv.weight);
        }
        if let (Some(t), Some(y)) = (target.as_mut(), iv.target.as_ref()) {
            for i in 0..n {
                t.set(k * n + i, 0, y[i]);
            }
        }
    }

    let mut stages = Vec::with_capacity(4 * steps);
    for c in 0..steps {
        let base = c as f64 * h;
        for off in [base, base + 0.5 * h, base + 0.5 * h, base + h] {
            let mut time_col = Tensor::zeros(rows, 1);
            for (k, iv) in intervals.iter().enumerate() {
                let tn = clock.t_norm(iv.start + off);
                for i in 0..n {
                    time_col.set(k * n + i, 0, tn);
                }
            }
            let mut srcs = Vec::with_capacity(lags.saturating_sub(1));
            for d in 1..lags {
                let o = off - d as f64;
                if o <= 1e-9 {
                    let mut col = Tensor::zeros(rows, 1);
                    for (k, iv) in intervals.iter().enumerate() {
                        let x = tracks[iv.series].at(iv.start + o);
                        for i in 0..n {
                            col.set(k * n + i, 0, x[i]);
                        }
                    }
                    srcs.push(LagSource::Observed(col));
                } else {
                    let pos = o / h;
                    let mut j = pos.floor() as usize;
                    let mut frac = pos - j as f64;
                    if frac > 1.0 - 1e-9 {
                        j += 1;
                        frac = 0.0;
                    } else if frac < 1e-9 {
                        frac = 0.0;
                    }
                    debug_assert!(j + usize::from(frac > 0.0) <= c);
                    srcs.push(LagSource::Grid { j, frac });
                }
            }
            stages.push(Stage {
                time_col,
                lags: srcs,
            });
        }
    }

    let prior_rep = Tensor::from_fn(rows, n, |r, j| prior[(r % n, j)]);
    Ok(Group {
        lay,
        steps,
        duration,
        windows,
        init,
        target,
        weights,
        stages,
        starts: intervals.iter().map(|iv| (iv.series, iv.start)).collect(),
        prior_rep,
    })
}

/// Forward pass of one group: attention (`BN x N`) and final state (`BN x 1`).
fn run_group(tape: &Tape, p: &BoundParams, g: &Group) -> Result<(Var, Var)> {
    let windows = tape.constant(g.windows.clone());
    let att = attention(tape, p, &g.lay, windows)?;
    let h = g.duration / g.steps as f64;
    let mut stage = 0usize;
    let grid = rk4_integrate(
        |_, x: &Var, grid: &[Var]| {
            let st = &g.stages[stage];
            stage += 1;
            let mut lagged = Vec::with_capacity(st.lags.len() + 1);
            lagged.push(*x);
            for src in &st.lags {
                lagged.push(match src {
                    LagSource::Observed(col) => tape.constant(col.clone()),
                    LagSource::Grid { j, frac } if *frac == 0.0 => grid[*j],
                    LagSource::Grid { j, frac } => {
                        tape.lincomb(&[(grid[*j], 1.0 - frac), (grid[*j + 1], *frac)])?
                    }
                });
            }
            let pooled = pooled_signal(tape, p, &g.lay, att, &lagged)?;
            let time = tape.constant(st.time_col.clone());
            dynamics(tape, p, pooled, time)
        },
        |terms: &[(&Var, f64)]| {
            let t: Vec<(Var, f64)> = terms.iter().map(|(v, c)| (**v, *c)).collect();
            tape.lincomb(&t)
        },
        tape.constant(g.init.clone()),
        0.0,
        g.steps as f64 * h,
        g.steps,
    )?;
    Ok((att, *grid.last().expect("grid is nonempty")))
}

struct Plan {
    groups: Vec<Group>,
    total_weight: f64,
    snapshots: usize,
    n: usize,
}

fn duration_key(d: f64) -> i64 {
    (d * 1e6).round() as i64
}

#[allow(clippy::too_many_arguments)]
fn build_plan(
    intervals: &[Interval],
    tracks: &[Track],
    n: usize,
    lags: usize,
    solver_steps: usize,
    mask: &[bool],
    prior: &DMatrix<f64>,
    clock: &Clock,
) -> Result<Plan> {
    let mut by_duration: BTreeMap<i64, Vec<&Interval>> = BTreeMap::new();
    for iv in intervals {
        by_duration.entry(duration_key(iv.duration)).or_default().push(iv);
    }
    let groups = by_duration
        .values()
        .map(|ivs| build_group(ivs, tracks, n, lags, solver_steps, mask, prior, clock))
        .collect::<Result<Vec<_>>>()?;
    Ok(Plan {
        groups,
        total_weight: intervals.iter().map(|iv| iv.weight).sum(),
        snapshots: intervals.len(),
        n,
    })
}

fn plan_loss(tape: &Tape, p: &BoundParams, plan: &Plan, lambda1: f64, lambda2: f64) -> Result<Var> {
    let mut sq_terms = Vec::new();
    let mut frob_terms = Vec::new();
    let mut l1_terms = Vec::new();
    let ones = tape.constant(Tensor::filled(plan.n, 1, 1.0));
    for g in &plan.groups {
        let (att, state) = run_group(tape, p, g)?;
        let target = g
            .target
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("training group without targets".into()))?;
        let err = tape.sub(state, tape.constant(target.clone()))?;
        let sq = tape.mul(tape.mul(err, err)?, tape.constant(g.weights.clone()))?;
        sq_terms.push((tape.sum(sq), 1.0 / plan.total_weight.max(f64::MIN_POSITIVE)));

        let diff = tape.sub(att, tape.constant(g.prior_rep.clone()))?;
        let rows = tape.matmul(tape.mul(diff, diff)?, ones)?;
        let per_block = tape.matmul(tape.reshape(rows, g.lay.blocks, plan.n)?, ones)?;
        frob_terms.push((tape.sum(tape.sqrt(per_block)), 1.0 / plan.snapshots as f64));
        l1_terms.push((tape.sum(tape.abs(att)), 1.0 / plan.snapshots as f64));
    }
    let mse = tape.lincomb(&sq_terms)?;
    let frob = tape.lincomb(&frob_terms)?;
    let l1 = tape.lincomb(&l1_terms)?;
    tape.lincomb(&[(mse, 1.0), (frob, lambda1), (l1, lambda2)])
}

/// A fitted model with everything needed to predict and extract graphs.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub params: ModelParameters,
    pub config: TrainConfig,
    pub normalization: Standardizer,
    /// Sampling step of the training data.
    pub dt: f64,
    pub t_min: f64,
    pub t_max: f64,
    /// Target-major support, `support[i * n + j]` iff `i` may attend to `j`.
    pub support: Vec<bool>,
    /// Binary prior adjacency in attention orientation.
    pub prior_adjacency: DMatrix<f64>,
    /// Attention at each training interval start, averaged across series.
    pub attention: AttentionTrajectory,
    pub loss_history: Vec<f64>,
}

/// Binary attention-orientation adjacency: `(i, j) = 1` iff the prior has
/// `j -> i`.
pub fn prior_indicator(prior: &PriorGraph) -> DMatrix<f64> {
    let n = prior.n();
    let mut m = DMatrix::zeros(n, n);
    for e in prior.digraph().edges() {
        m[(e.dst, e.src)] = 1.0;
    }
    m
}

/// Composite objective on plain arrays: per-vertex mean squared error summed
/// over vertices, plus `lambda1` times the mean Frobenius distance of the
/// attention snapshots to `prior` and `lambda2` times their mean L1 norm.
/// `predicted` and `observed` are `T x N`.
pub fn loss(
    predicted: &DMatrix<f64>,
    observed: &DMatrix<f64>,
    snapshots: &[DMatrix<f64>],
    prior: &DMatrix<f64>,
    lambda1: f64,
    lambda2: f64,
) -> Result<f64> {
    if predicted.shape() != observed.shape() {
        return Err(Error::SizeMismatch(format!(
            "predictions {:?} vs observations {:?}",
            predicted.shape(),
            observed.shape()
        )));
    }
    let t = predicted.nrows().max(1) as f64;
    let mse = (predicted - observed).map(|x| x * x).sum() / t;
    if snapshots.is_empty() {
        return Ok(mse);
    }
    let mut frob = 0.0;
    let mut l1 = 0.0;
    for s in snapshots {
        if s.shape() != prior.shape() {
            return Err(Error::SizeMismatch(format!(
                "snapshot {:?} vs prior {:?}",
                s.shape(),
                prior.shape()
            )));
        }
        frob += (s - prior).norm();
        l1 += s.iter().map(|x| x.abs()).sum::<f64>();
    }
    let k = snapshots.len() as f64;
    Ok(mse + lambda1 * frob / k + lambda2 * l1 / k)
}

fn observed_indices(dataset: &Dataset, observed: Option<&[Vec<usize>]>) -> Result<Vec<Vec<usize>>> {
    match observed {
        None => Ok(dataset.series.iter().map(|s| (0..s.len()).collect()).collect()),
        Some(o) => {
            if o.len() != dataset.series.len() {
                return Err(Error::SizeMismatch(format!(
                    "{} observation lists for {} series",
                    o.len(),
                    dataset.series.len()
                )));
            }
            for (k, idx) in o.iter().enumerate() {
                if idx.windows(2).any(|w| w[1] <= w[0]) || idx.last().is_some_and(|&i| i >= dataset.series[k].len()) {
                    return Err(Error::Validation(format!(
                        "observation indices of series {k} must ascend within range"
                    )));
                }
            }
            Ok(o.to_vec())
        }
    }
}

fn training_intervals(tracks: &[Track], dataset: &Dataset, perturbation_weight: f64) -> Vec<Interval> {
    let mut intervals = Vec::new();
    for (k, tr) in tracks.iter().enumerate() {
        let w = if dataset.is_perturbed(k) { perturbation_weight } else { 1.0 };
        for p in 0..tr.times.len().saturating_sub(1) {
            intervals.push(Interval {
                series: k,
                start: tr.times[p],
                duration: tr.times[p + 1] - tr.times[p],
                target: Some(tr.values[p + 1].clone()),
                weight: w,
            });
        }
    }
    intervals
}

/// Trains on every sample of every series.
pub fn train(dataset: &Dataset, prior: &PriorGraph, config: &TrainConfig) -> Result<TrainedModel> {
    train_on(dataset, prior, config, None)
}

/// Trains using only the samples listed in `observed` (one ascending index
/// list per series); the others stay unseen, e.g. for held-out evaluation.
pub fn train_on(
    dataset: &Dataset,
    prior: &PriorGraph,
    config: &TrainConfig,
    observed: Option<&[Vec<usize>]>,
) -> Result<TrainedModel> {
    config.validate()?;
    dataset.validate()?;
    let n = dataset.n_vertices();
    if prior.n() != n {
        return Err(Error::SizeMismatch(format!(
            "prior has {} vertices, data has {n}",
            prior.n()
        )));
    }
    let obs = observed_indices(dataset, observed)?;
    let dt = dataset.dt();
    let raw: Vec<Vec<f64>> = obs
        .iter()
        .enumerate()
        .flat_map(|(k, idx)| {
            let s = &dataset.series[k];
            idx.iter()
                .map(move |&r| (0..n).map(|v| s.value(r, v)).collect::<Vec<f64>>())
        })
        .collect();
    let normalization = Standardizer::fit(&raw, n);

    let times: Vec<f64> = obs
        .iter()
        .enumerate()
        .flat_map(|(k, idx)| idx.iter().map(move |&r| dataset.series[k].times()[r]))
        .collect();
    let t_min = times.iter().copied().fold(f64::INFINITY, f64::min);
    let t_max = times.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    let support_graph = if config.dense_support {
        PriorGraph::dense(prior.digraph().clone())
    } else {
        prior.clone()
    };
    let support = support_graph.attention_mask();
    let prior_adjacency = prior_indicator(prior);

    let mut model = TrainedModel {
        params: ModelParameters::init(config.model, config.seed)?,
        config: *config,
        normalization,
        dt,
        t_min,
        t_max,
        support,
        prior_adjacency,
        attention: AttentionTrajectory::new(vec![], vec![])?,
        loss_history: Vec::with_capacity(config.epochs),
    };

    let tracks: Vec<Track> = obs
        .iter()
        .enumerate()
        .map(|(k, idx)| model.track(&dataset.series[k], idx))
        .collect();
    let intervals = training_intervals(&tracks, dataset, config.perturbation_weight);
    if intervals.is_empty() {
        return Err(Error::InsufficientData("no observation intervals to train on".into()));
    }
    let clock = model.clock();
    let plan = build_plan(
        &intervals,
        &tracks,
        n,
        config.model.lags,
        config.solver_steps,
        &model.support,
        &model.prior_adjacency,
        &clock,
    )?;

    for epoch in 0..config.epochs {
        let tape = Tape::new();
        let p = BoundParams::bind(&tape, &model.params, true)?;
        let total = plan_loss(&tape, &p, &plan, config.lambda1, config.lambda2)?;
        let value = tape.value(total).item();
        if !value.is_finite() || tape.check_finite().is_err() {
            return Err(Error::Diverged { epoch });
        }
        let grads = tape.backward(total)?;
        model
            .params
            .store
            .step(&grads, &p.leaves, &config.optimizer)
            .map_err(|_| Error::Diverged { epoch })?;
        model.loss_history.push(value);
        if epoch % 50 == 0 {
            log::debug!("epoch {epoch}: loss {value:.6}");
        }
    }

    model.params.store.reset_velocity();
    model.attention = model.collect_attention(&plan)?;
    Ok(model)
}

impl TrainedModel {
    pub fn n_vertices(&self) -> usize {
        self.normalization.mean.len()
    }

    fn clock(&self) -> Clock {
        let u_min = self.t_min / self.dt;
        let span = (self.t_max - self.t_min) / self.dt;
        Clock {
            dt: self.dt,
            u_min,
            span: if span > 0.0 { span } else { 1.0 },
        }
    }

    fn track(&self, series: &MultivariateTimeSeries, idx: &[usize]) -> Track {
        let n = series.n_vertices();
        Track {
            times: idx.iter().map(|&r| series.times()[r] / self.dt).collect(),
            values: idx
                .iter()
                .map(|&r| {
                    let x: Vec<f64> = (0..n).map(|v| series.value(r, v)).collect();
                    self.normalization.forward(&x)
                })
                .collect(),
        }
    }

    fn collect_attention(&self, plan: &Plan) -> Result<AttentionTrajectory> {
        let tape = Tape::new();
        let p = BoundParams::bind(&tape, &self.params, false)?;
        let n = plan.n;
        let clock = self.clock();
        let mut acc: BTreeMap<i64, (DMatrix<f64>, usize)> = BTreeMap::new();
        for g in &plan.groups {
            let windows = tape.constant(g.windows.clone());
            let att = attention(&tape, &p, &g.lay, windows)?;
            let a = tape.value(att);
            for (b, &(_, u)) in g.starts.iter().enumerate() {
                let key = (u - clock.u_min).round() as i64;
                let entry = acc.entry(key).or_insert_with(|| (DMatrix::zeros(n, n), 0));
                for i in 0..n {
                    for j in 0..n {
                        entry.0[(i, j)] += a.get(b * n + i, j);
                    }
                }
                entry.1 += 1;
            }
        }
        let times = acc.keys().map(|&k| (k as f64 + clock.u_min) * clock.dt).collect();
        let snaps = acc.into_values().map(|(m, c)| m / c as f64).collect();
        AttentionTrajectory::new(times, snaps)
    }

    /// Predictions at `queries`, each integrated from the closest observed
    /// sample strictly before it (a query at the first observation returns
    /// that observation). `observed` lists the usable sample indices of
    /// `series`; `None` means all. Returns `Q x N` in data units.
    pub fn predict(
        &self,
        series: &MultivariateTimeSeries,
        observed: Option<&[usize]>,
        queries: &[f64],
    ) -> Result<DMatrix<f64>> {
        let n = self.n_vertices();
        if series.n_vertices() != n {
            return Err(Error::SizeMismatch(format!(
                "series has {} vertices, model has {n}",
                series.n_vertices()
            )));
        }
        let all: Vec<usize> = (0..series.len()).collect();
        let idx = observed.unwrap_or(&all);
        if idx.is_empty() {
            return Err(Error::EmptyInput("no observed samples to predict from".into()));
        }
        let track = self.track(series, idx);
        let tracks = [track];
        let (start, end) = (tracks[0].times[0], *tracks[0].times.last().expect("nonempty"));
        let mut out = DMatrix::zeros(queries.len(), n);
        let mut intervals = Vec::new();
        let mut slots = Vec::new();
        for (q, &t) in queries.iter().enumerate() {
            let u = t / self.dt;
            if !(u >= start - 1e-9 && u <= end + 1e-9) {
                return Err(Error::Extrapolation {
                    time: t,
                    start: start * self.dt,
                    end: end * self.dt,
                });
            }
            let k = tracks[0].times.partition_point(|&s| s < u - 1e-9);
            if k == 0 {
                let x = self.normalization.inverse(&tracks[0].values[0]);
                out.row_mut(q).copy_from_slice(&x);
                continue;
            }
            let s = tracks[0].times[k - 1];
            intervals.push(Interval {
                series: 0,
                start: s,
                duration: u - s,
                target: None,
                weight: 1.0,
            });
            slots.push(q);
        }
        if intervals.is_empty() {
            return Ok(out);
        }
        let mut by_duration: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
        for (k, iv) in intervals.iter().enumerate() {
            by_duration.entry(duration_key(iv.duration)).or_default().push(k);
        }
        let clock = self.clock();
        let tape = Tape::new();
        let p = BoundParams::bind(&tape, &self.params, false)?;
        for members in by_duration.values() {
            let ivs: Vec<&Interval> = members.iter().map(|&k| &intervals[k]).collect();
            let g = build_group(
                &ivs,
                &tracks,
                n,
                self.params.lags(),
                self.config.solver_steps,
                &self.support,
                &self.prior_adjacency,
                &clock,
            )?;
            let (_, state) = run_group(&tape, &p, &g)?;
            let v = tape.value(state);
            for (b, &k) in members.iter().enumerate() {
                let z: Vec<f64> = (0..n).map(|i| v.get(b * n + i, 0)).collect();
                if z.iter().any(|x| !x.is_finite()) {
                    return Err(Error::BlowUp {
                        step: g.steps,
                        detail: format!("prediction at t = {} is not finite", queries[slots[k]]),
                    });
                }
                out.row_mut(slots[k]).copy_from_slice(&self.normalization.inverse(&z));
            }
        }
        Ok(out)
    }

    fn dataset_plan(&self, dataset: &Dataset) -> Result<Plan> {
        let tracks: Vec<Track> = dataset
            .series
            .iter()
            .map(|s| self.track(s, &(0..s.len()).collect::<Vec<_>>()))
            .collect();
        let intervals = training_intervals(&tracks, dataset, self.config.perturbation_weight);
        if intervals.is_empty() {
            return Err(Error::InsufficientData("no observation intervals".into()));
        }
        build_plan(
            &intervals,
            &tracks,
            self.n_vertices(),
            self.params.lags(),
            self.config.solver_steps,
            &self.support,
            &self.prior_adjacency,
            &self.clock(),
        )
    }

    /// Training objective of this model on `dataset`, without updating
    /// anything.
    pub fn evaluate_loss(&self, dataset: &Dataset) -> Result<f64> {
        let plan = self.dataset_plan(dataset)?;
        let tape = Tape::new();
        let p = BoundParams::bind(&tape, &self.params, false)?;
        let total = plan_loss(&tape, &p, &plan, self.config.lambda1, self.config.lambda2)?;
        let v = tape.value(total).item();
        Ok(v)
    }
}

/// Full training loss of `dataset` as a differentiable function of the
/// parameter nodes `vars` (in storage order). Used to verify gradients.
pub fn training_loss_fn(
    model: &TrainedModel,
    dataset: &Dataset,
) -> Result<impl Fn(&Tape, &[Var]) -> Result<Var>> {
    let plan = model.dataset_plan(dataset)?;
    let (l1, l2) = (model.config.lambda1, model.config.lambda2);
    Ok(move |tape: &Tape, vars: &[Var]| {
        let p = BoundParams::from_vars(tape, vars)?;
        plan_loss(tape, &p, &plan, l1, l2)
    })
}
