//! Model families for the downstream tasks. Every model is fitted on
//! standardized features; the caller owns standardization.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// Regression of the 0–100 intelligibility score.
    Intelligibility,
    /// Classification of the pathology label.
    Pathology,
}

impl Task {
    pub fn metric_name(self) -> &'static str {
        match self {
            Task::Intelligibility => "rmse",
            Task::Pathology => "accuracy",
        }
    }

    /// Whether a larger metric is better.
    pub fn maximize(self) -> bool {
        matches!(self, Task::Pathology)
    }
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "intelligibility" => Ok(Task::Intelligibility),
            "pathology" => Ok(Task::Pathology),
            _ => Err(Error::Config(format!("unknown task {s:?}"))),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Intelligibility => "intelligibility",
            Task::Pathology => "pathology",
        })
    }
}

/// One grid point: a model family with its hyperparameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum Candidate {
    /// Training mean (regression) or majority class (classification).
    Baseline,
    Ridge {
        lambda: f64,
    },
    Logistic {
        l2: f64,
    },
    Tree {
        max_depth: usize,
    },
    Mlp {
        hidden: usize,
    },
}

impl Candidate {
    pub fn family(&self) -> &'static str {
        match self {
            Candidate::Baseline => "baseline",
            Candidate::Ridge { .. } => "ridge",
            Candidate::Logistic { .. } => "logistic",
            Candidate::Tree { .. } => "tree",
            Candidate::Mlp { .. } => "mlp",
        }
    }

    pub fn hyperparameters(&self) -> String {
        match self {
            Candidate::Baseline => String::new(),
            Candidate::Ridge { lambda } => format!("lambda={lambda}"),
            Candidate::Logistic { l2 } => format!("l2={l2}"),
            Candidate::Tree { max_depth } => format!("max_depth={max_depth}"),
            Candidate::Mlp { hidden } => format!("hidden={hidden}"),
        }
    }

    pub fn supports(&self, task: Task) -> bool {
        !matches!(
            (self, task),
            (Candidate::Ridge { .. }, Task::Pathology) | (Candidate::Logistic { .. }, Task::Intelligibility)
        )
    }
}

impl fmt::Display for Candidate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({})", self.family(), self.hyperparameters())
    }
}

/// The grid searched for a task, in enumeration order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpace {
    pub candidates: Vec<Candidate>,
}

impl ModelSpace {
    pub fn default_for(task: Task) -> Self {
        let mut candidates = vec![Candidate::Baseline];
        for v in [0.01, 0.1, 1.0, 10.0] {
            candidates.push(match task {
                Task::Intelligibility => Candidate::Ridge { lambda: v },
                Task::Pathology => Candidate::Logistic { l2: v },
            });
        }
        candidates.extend([2, 4, 8].map(|max_depth| Candidate::Tree { max_depth }));
        candidates.extend([16, 64].map(|hidden| Candidate::Mlp { hidden }));
        Self { candidates }
    }

    pub fn baseline() -> Self {
        Self {
            candidates: vec![Candidate::Baseline],
        }
    }

    pub fn validate(&self, task: Task) -> Result<()> {
        if self.candidates.is_empty() {
            return Err(Error::Config("empty model space".into()));
        }
        for c in &self.candidates {
            if !c.supports(task) {
                return Err(Error::Config(format!("{c} cannot be used for {task}")));
            }
            let ok = match *c {
                Candidate::Ridge { lambda } => lambda > 0.0 && lambda.is_finite(),
                Candidate::Logistic { l2 } => l2 >= 0.0 && l2.is_finite(),
                Candidate::Tree { max_depth } => max_depth >= 1,
                Candidate::Mlp { hidden } => hidden >= 1,
                Candidate::Baseline => true,
            };
            if !ok {
                return Err(Error::Config(format!("invalid hyperparameter in {c}")));
            }
        }
        Ok(())
    }
}

/// Training targets.
#[derive(Debug, Clone, Copy)]
pub enum Targets<'a> {
    Regression(&'a [f64]),
    Classification { labels: &'a [usize], classes: usize },
}

impl Targets<'_> {
    fn len(&self) -> usize {
        match self {
            Targets::Regression(y) => y.len(),
            Targets::Classification { labels, .. } => labels.len(),
        }
    }
}

/// Per-column z-scoring with statistics from the training rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    mean: Array1<f64>,
    std: Array1<f64>,
}

impl Standardizer {
    pub fn fit(x: &Array2<f64>) -> Self {
        let mean = x.mean_axis(Axis(0)).expect("non-empty");
        let std = x.std_axis(Axis(0), 0.0).mapv(|s| if s > 1e-12 { s } else { 1.0 });
        Self { mean, std }
    }

    pub fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        (x - &self.mean) / &self.std
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

impl Node {
    fn eval(&self, x: ArrayView1<f64>) -> f64 {
        match self {
            Node::Leaf(v) => *v,
            Node::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                if x[*feature] <= *threshold {
                    left.eval(x)
                } else {
                    right.eval(x)
                }
            }
        }
    }
}

/// Fitted one-hidden-layer ReLU network.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    w1: Array2<f64>,
    b1: Array1<f64>,
    w2: Array2<f64>,
    b2: Array1<f64>,
}

impl Mlp {
    fn hidden(&self, x: &Array2<f64>) -> Array2<f64> {
        (x.dot(&self.w1) + &self.b1).mapv(|v| v.max(0.0))
    }

    fn output(&self, x: &Array2<f64>) -> Array2<f64> {
        self.hidden(x).dot(&self.w2) + &self.b2
    }
}

/// A fitted model.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Constant(f64),
    Majority(usize),
    Linear { w: Array1<f64>, b: f64 },
    Softmax { w: Array2<f64>, b: Array1<f64> },
    RegressionTree(Tree),
    ClassificationTree(Tree),
    MlpRegressor { net: Box<Mlp>, y_mean: f64, y_std: f64 },
    MlpClassifier(Box<Mlp>),
}

/// Fitted CART tree.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree(Node);

fn argmax_row(r: ArrayView1<f64>) -> usize {
    (0..r.len()).fold(0, |b, i| if r[i] > r[b] { i } else { b })
}

impl Model {
    /// Regression outputs clamped to `[0, 100]`, or class indices as reals.
    pub fn predict(&self, x: &Array2<f64>) -> Vec<f64> {
        let clamp = |v: f64| v.clamp(0.0, 100.0);
        match self {
            Model::Constant(c) => vec![clamp(*c); x.nrows()],
            Model::Majority(k) => vec![*k as f64; x.nrows()],
            Model::Linear { w, b } => x.dot(w).iter().map(|v| clamp(v + b)).collect(),
            Model::Softmax { w, b } => (x.dot(w) + b)
                .rows()
                .into_iter()
                .map(|r| argmax_row(r) as f64)
                .collect(),
            Model::RegressionTree(t) => x.rows().into_iter().map(|r| clamp(t.0.eval(r))).collect(),
            Model::ClassificationTree(t) => x.rows().into_iter().map(|r| t.0.eval(r)).collect(),
            Model::MlpRegressor { net, y_mean, y_std } => net
                .output(x)
                .column(0)
                .iter()
                .map(|v| clamp(v * y_std + y_mean))
                .collect(),
            Model::MlpClassifier(net) => net.output(x).rows().into_iter().map(|r| argmax_row(r) as f64).collect(),
        }
    }
}

fn majority(labels: &[usize], classes: usize) -> usize {
    let mut counts = vec![0usize; classes];
    for &l in labels {
        counts[l] += 1;
    }
    (0..classes).fold(0, |b, k| if counts[k] > counts[b] { k } else { b })
}

fn ridge(x: &Array2<f64>, y: &[f64], lambda: f64) -> Result<Model> {
    let (n, d) = x.dim();
    let x_mean = x.mean_axis(Axis(0)).expect("non-empty");
    let y_mean = y.iter().sum::<f64>() / n as f64;
    let xc = x - &x_mean;
    let a = DMatrix::from_fn(d, d, |i, j| {
        xc.column(i).dot(&xc.column(j)) + if i == j { lambda } else { 0.0 }
    });
    let rhs = DVector::from_fn(d, |i, _| {
        xc.column(i).iter().zip(y).map(|(a, b)| a * (b - y_mean)).sum()
    });
    let chol = a
        .cholesky()
        .ok_or_else(|| Error::Validation("ridge system is not positive definite".into()))?;
    let w = Array1::from_iter(chol.solve(&rhs).iter().copied());
    let b = y_mean - x_mean.dot(&w);
    Ok(Model::Linear { w, b })
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
}

impl Adam {
    fn new(n: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            lr,
        }
    }

    fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) {
        self.t += 1;
        let (b1, b2) = (0.9f64, 0.999f64);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let mut k = 0;
        for (p, g) in params.iter_mut().zip(grads) {
            for (pi, gi) in p.iter_mut().zip(g.iter()) {
                self.m[k] = b1 * self.m[k] + (1.0 - b1) * gi;
                self.v[k] = b2 * self.v[k] + (1.0 - b2) * gi * gi;
                *pi -= self.lr * (self.m[k] / c1) / ((self.v[k] / c2).sqrt() + 1e-8);
                k += 1;
            }
        }
    }
}

/// Row-major copy regardless of memory layout.
fn flat<D: ndarray::Dimension>(a: &ndarray::Array<f64, D>) -> Vec<f64> {
    a.iter().copied().collect()
}

const LOGISTIC_STEPS: usize = 500;
const MLP_STEPS: usize = 400;

fn softmax_rows(z: &mut Array2<f64>) {
    for mut r in z.rows_mut() {
        let m = r.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        r.mapv_inplace(|v| (v - m).exp());
        let s = r.sum();
        r /= s;
    }
}

/// `(probabilities − one_hot) / n`: gradient of mean cross-entropy wrt logits.
fn ce_grad(z: &Array2<f64>, labels: &[usize]) -> Array2<f64> {
    let mut p = z.clone();
    softmax_rows(&mut p);
    for (i, &l) in labels.iter().enumerate() {
        p[[i, l]] -= 1.0;
    }
    p / labels.len() as f64
}

fn logistic(x: &Array2<f64>, labels: &[usize], classes: usize, l2: f64) -> Model {
    let (n, d) = x.dim();
    let mut w = Array2::<f64>::zeros((d, classes));
    let mut b = Array1::<f64>::zeros(classes);
    let mut opt = Adam::new(d * classes + classes, 0.05);
    for _ in 0..LOGISTIC_STEPS {
        let dz = ce_grad(&(x.dot(&w) + &b), labels);
        let gw = x.t().dot(&dz) + &w * (l2 / n as f64);
        let gb = dz.sum_axis(Axis(0));
        opt.step(
            &mut [w.as_slice_mut().expect("standard"), b.as_slice_mut().expect("standard")],
            &[&flat(&gw), &flat(&gb)],
        );
    }
    Model::Softmax { w, b }
}

struct TreeBuilder<'a> {
    x: &'a Array2<f64>,
    y: &'a [f64],
    classes: Option<usize>,
    max_depth: usize,
}

impl TreeBuilder<'_> {
    fn leaf(&self, idx: &[usize]) -> f64 {
        match self.classes {
            None => idx.iter().map(|&i| self.y[i]).sum::<f64>() / idx.len() as f64,
            Some(k) => {
                let labels: Vec<usize> = idx.iter().map(|&i| self.y[i] as usize).collect();
                majority(&labels, k) as f64
            }
        }
    }

    /// Node impurity times node size (SSE, or Gini times count).
    fn impurity(&self, stats: &[f64], count: usize) -> f64 {
        let n = count as f64;
        match self.classes {
            None => stats[1] - stats[0] * stats[0] / n,
            Some(_) => n - stats.iter().map(|c| c * c).sum::<f64>() / n,
        }
    }

    fn add(&self, stats: &mut [f64], i: usize, sign: f64) {
        match self.classes {
            None => {
                stats[0] += sign * self.y[i];
                stats[1] += sign * self.y[i] * self.y[i];
            }
            Some(_) => stats[self.y[i] as usize] += sign,
        }
    }

    fn build(&self, idx: Vec<usize>, depth: usize) -> Node {
        if depth >= self.max_depth || idx.len() < 2 {
            return Node::Leaf(self.leaf(&idx));
        }
        let width = self.classes.unwrap_or(2);
        let mut total = vec![0.0; width];
        for &i in &idx {
            self.add(&mut total, i, 1.0);
        }
        let parent = self.impurity(&total, idx.len());
        let mut best: Option<(f64, usize, f64)> = None;
        for f in 0..self.x.ncols() {
            let mut order = idx.clone();
            order.sort_by(|&a, &b| self.x[[a, f]].total_cmp(&self.x[[b, f]]));
            let mut left = vec![0.0; width];
            let mut right = total.clone();
            for k in 0..order.len() - 1 {
                self.add(&mut left, order[k], 1.0);
                self.add(&mut right, order[k], -1.0);
                let (a, b) = (self.x[[order[k], f]], self.x[[order[k + 1], f]]);
                if a == b {
                    continue;
                }
                let cost = self.impurity(&left, k + 1) + self.impurity(&right, order.len() - k - 1);
                if best.is_none_or(|(c, _, _)| cost < c) {
                    best = Some((cost, f, 0.5 * (a + b)));
                }
            }
        }
        match best {
            Some((cost, feature, threshold)) if cost < parent - 1e-12 => {
                let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| self.x[[i, feature]] <= threshold);
                Node::Split {
                    feature,
                    threshold,
                    left: Box::new(self.build(l, depth + 1)),
                    right: Box::new(self.build(r, depth + 1)),
                }
            }
            _ => Node::Leaf(self.leaf(&idx)),
        }
    }
}

fn mlp(x: &Array2<f64>, targets: Targets<'_>, hidden: usize, seed: u64) -> Model {
    let (n, d) = x.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (out_dim, y_mean, y_std) = match targets {
        Targets::Regression(y) => {
            let m = y.iter().sum::<f64>() / n as f64;
            let s = (y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64).sqrt();
            (1, m, if s > 1e-12 { s } else { 1.0 })
        }
        Targets::Classification { classes, .. } => (classes, 0.0, 1.0),
    };
    let he = |fan_in: usize| Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
    let (n1, n2) = (he(d), he(hidden));
    let mut net = Mlp {
        w1: Array2::from_shape_simple_fn((d, hidden), || n1.sample(&mut rng)),
        b1: Array1::zeros(hidden),
        w2: Array2::from_shape_simple_fn((hidden, out_dim), || n2.sample(&mut rng) * 0.5),
        b2: Array1::zeros(out_dim),
    };
    let weight_decay = 1e-4;
    let mut opt = Adam::new(d * hidden + hidden + hidden * out_dim + out_dim, 0.01);
    for _ in 0..MLP_STEPS {
        let h = net.hidden(x);
        let z = h.dot(&net.w2) + &net.b2;
        let dz = match targets {
            Targets::Regression(y) => {
                let mut dz = z;
                for (i, v) in dz.column_mut(0).iter_mut().enumerate() {
                    *v = 2.0 * (*v - (y[i] - y_mean) / y_std) / n as f64;
                }
                dz
            }
            Targets::Classification { labels, .. } => ce_grad(&z, labels),
        };
        let gw2 = h.t().dot(&dz) + &net.w2 * weight_decay;
        let gb2 = dz.sum_axis(Axis(0));
        let mut dh = dz.dot(&net.w2.t());
        dh.zip_mut_with(&h, |g, &a| {
            if a <= 0.0 {
                *g = 0.0;
            }
        });
        let gw1 = x.t().dot(&dh) + &net.w1 * weight_decay;
        let gb1 = dh.sum_axis(Axis(0));
        opt.step(
            &mut [
                net.w1.as_slice_mut().expect("standard"),
                net.b1.as_slice_mut().expect("standard"),
                net.w2.as_slice_mut().expect("standard"),
                net.b2.as_slice_mut().expect("standard"),
            ],
            &[&flat(&gw1), &flat(&gb1), &flat(&gw2), &flat(&gb2)],
        );
    }
    let net = Box::new(net);
    match targets {
        Targets::Regression(_) => Model::MlpRegressor { net, y_mean, y_std },
        Targets::Classification { .. } => Model::MlpClassifier(net),
    }
}

/// Fits one candidate on (already standardized) features.
pub fn fit(candidate: &Candidate, x: &Array2<f64>, targets: Targets<'_>, seed: u64) -> Result<Model> {
    if x.nrows() == 0 {
        return Err(Error::InsufficientData("no training rows".into()));
    }
    if x.nrows() != targets.len() {
        return Err(Error::Dimension(format!(
            "{} rows but {} targets",
            x.nrows(),
            targets.len()
        )));
    }
    let bad = || Error::Config(format!("{candidate} does not fit this task"));
    Ok(match (*candidate, targets) {
        (Candidate::Baseline, Targets::Regression(y)) => Model::Constant(y.iter().sum::<f64>() / y.len() as f64),
        (Candidate::Baseline, Targets::Classification { labels, classes }) => {
            Model::Majority(majority(labels, classes))
        }
        (Candidate::Ridge { lambda }, Targets::Regression(y)) => ridge(x, y, lambda)?,
        (Candidate::Logistic { l2 }, Targets::Classification { labels, classes }) => logistic(x, labels, classes, l2),
        (Candidate::Tree { max_depth }, t) => {
            let (y, classes): (Vec<f64>, Option<usize>) = match t {
                Targets::Regression(y) => (y.to_vec(), None),
                Targets::Classification { labels, classes } => {
                    (labels.iter().map(|&l| l as f64).collect(), Some(classes))
                }
            };
            let builder = TreeBuilder {
                x,
                y: &y,
                classes,
                max_depth,
            };
            let root = Tree(builder.build((0..x.nrows()).collect(), 0));
            match classes {
                None => Model::RegressionTree(root),
                Some(_) => Model::ClassificationTree(root),
            }
        }
        (Candidate::Mlp { hidden }, t) => mlp(x, t, hidden, seed),
        _ => return Err(bad()),
    })
}

pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_lengths(pred.len(), truth.len())?;
    let sse: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum();
    Ok((sse / pred.len() as f64).sqrt())
}

pub fn accuracy(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_lengths(pred.len(), truth.len())?;
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / pred.len() as f64)
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Dimension(format!("{a} predictions for {b} targets")));
    }
    if a == 0 {
        return Err(Error::EmptyInput("no predictions".into()));
    }
    Ok(())
}

pub fn evaluate(task: Task, pred: &[f64], truth: &[f64]) -> Result<f64> {
    match task {
        Task::Intelligibility => rmse(pred, truth),
        Task::Pathology => accuracy(pred, truth),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn metric_examples() {
        assert_eq!(rmse(&[50.0, 50.0], &[40.0, 60.0]).unwrap(), 10.0);
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(accuracy(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 1.0);
        assert!(matches!(rmse(&[1.0], &[1.0, 2.0]), Err(Error::Dimension(_))));
        let y = [10.0, 20.0, 60.0, 30.0];
        let m = y.iter().sum::<f64>() / 4.0;
        let sd = (y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 4.0).sqrt();
        assert!((rmse(&[m; 4], &y).unwrap() - sd).abs() < 1e-12);
    }

    #[test]
    fn ridge_recovers_linear_map_and_shrinks() {
        let x = Array2::from_shape_fn((30, 2), |(i, j)| ((i * (j + 3)) % 7) as f64 - 3.0);
        let y: Vec<f64> = x.rows().into_iter().map(|r| 50.0 + 2.0 * r[0] - r[1]).collect();
        let m = fit(&Candidate::Ridge { lambda: 1e-8 }, &x, Targets::Regression(&y), 0).unwrap();
        for (p, t) in m.predict(&x).iter().zip(&y) {
            assert!((p - t).abs() < 1e-6);
        }
        let mean = y.iter().sum::<f64>() / 30.0;
        let m = fit(&Candidate::Ridge { lambda: 1e12 }, &x, Targets::Regression(&y), 0).unwrap();
        for p in m.predict(&x) {
            assert!((p - mean).abs() < 1e-6);
        }
    }

    #[test]
    fn baseline_predicts_mean_and_majority() {
        let x = Array2::zeros((4, 1));
        let m = fit(
            &Candidate::Baseline,
            &x,
            Targets::Regression(&[10.0, 20.0, 30.0, 40.0]),
            0,
        )
        .unwrap();
        assert_eq!(m.predict(&x), vec![25.0; 4]);
        let m = fit(
            &Candidate::Baseline,
            &x,
            Targets::Classification {
                labels: &[2, 1, 1, 2],
                classes: 3,
            },
            0,
        )
        .unwrap();
        assert_eq!(m.predict(&x), vec![1.0; 4]);
    }

    #[test]
    fn regression_outputs_are_clamped() {
        let x = array![[0.0], [1.0], [2.0]];
        let m = fit(
            &Candidate::Ridge { lambda: 1e-9 },
            &x,
            Targets::Regression(&[0.0, 100.0, 200.0]),
            0,
        );
        let p = m.unwrap().predict(&array![[5.0], [-5.0]]);
        assert_eq!(p, vec![100.0, 0.0]);
    }

    #[test]
    fn tree_and_logistic_separate_classes() {
        let x = Array2::from_shape_fn(
            (40, 2),
            |(i, j)| if j == 0 { i as f64 / 40.0 } else { ((i * 7) % 5) as f64 },
        );
        let labels: Vec<usize> = (0..40).map(|i| usize::from(i >= 20)).collect();
        let t = Targets::Classification {
            labels: &labels,
            classes: 2,
        };
        let truth: Vec<f64> = labels.iter().map(|&l| l as f64).collect();
        let xs = Standardizer::fit(&x).apply(&x);
        for c in [
            Candidate::Tree { max_depth: 2 },
            Candidate::Logistic { l2: 0.01 },
            Candidate::Mlp { hidden: 16 },
        ] {
            let m = fit(&c, &xs, t, 3).unwrap();
            assert_eq!(accuracy(&m.predict(&xs), &truth).unwrap(), 1.0, "{c}");
        }
    }

    #[test]
    fn regression_tree_fits_steps() {
        let x = Array2::from_shape_fn((20, 1), |(i, _)| i as f64);
        let y: Vec<f64> = (0..20).map(|i| if i < 10 { 20.0 } else { 70.0 }).collect();
        let m = fit(&Candidate::Tree { max_depth: 1 }, &x, Targets::Regression(&y), 0).unwrap();
        assert_eq!(m.predict(&x), y);
    }

    #[test]
    fn mismatched_family_is_rejected() {
        let x = Array2::zeros((2, 1));
        assert!(fit(
            &Candidate::Ridge { lambda: 1.0 },
            &x,
            Targets::Classification {
                labels: &[0, 1],
                classes: 2
            },
            0
        )
        .is_err());
        assert!(ModelSpace::default_for(Task::Pathology)
            .validate(Task::Pathology)
            .is_ok());
        assert!(ModelSpace::default_for(Task::Pathology)
            .validate(Task::Intelligibility)
            .is_err());
    }
}
