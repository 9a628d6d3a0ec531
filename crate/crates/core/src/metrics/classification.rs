//! Node-classification probe and confusion arithmetic.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::encoders::Mlp;
use crate::error::{Error, Result};
use crate::optim::{Adam, AdamConfig};
use crate::params::{ParameterSet, VarMap};
use crate::rng;
use crate::tensor::Tensor;

/// Binary confusion counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn from_predictions(truth: &[bool], pred: &[bool]) -> Self {
        let mut c = ConfusionCounts::default();
        for (&t, &p) in truth.iter().zip(pred) {
            match (t, p) {
                (true, true) => c.tp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fp += 1,
                (true, false) => c.fn_ += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }

    fn ratio(num: usize, den: usize) -> f64 {
        if den == 0 {
            0.0
        } else {
            num as f64 / den as f64
        }
    }

    pub fn accuracy(&self) -> f64 {
        Self::ratio(self.tp + self.tn, self.total())
    }

    /// 0 when nothing was predicted positive.
    pub fn precision(&self) -> f64 {
        Self::ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        Self::ratio(self.tp, self.tp + self.fn_)
    }

    pub fn specificity(&self) -> f64 {
        Self::ratio(self.tn, self.tn + self.fp)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

/// Accuracy and macro-averaged precision, recall and F1, all in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassificationScores {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Scores of `pred` against `truth`. Classes absent from `truth` are left
/// out of the macro averages and returned in the second slot.
pub fn classification_scores(
    truth: &[usize],
    pred: &[usize],
    classes: usize,
) -> (ClassificationScores, Vec<usize>) {
    let correct = truth.iter().zip(pred).filter(|(t, p)| t == p).count();
    let mut present = Vec::new();
    let mut missing = Vec::new();
    for c in 0..classes {
        if truth.contains(&c) {
            present.push(c);
        } else {
            missing.push(c);
        }
    }
    let (mut p, mut r, mut f) = (0.0, 0.0, 0.0);
    for &c in &present {
        let t: Vec<bool> = truth.iter().map(|&x| x == c).collect();
        let q: Vec<bool> = pred.iter().map(|&x| x == c).collect();
        let cc = ConfusionCounts::from_predictions(&t, &q);
        p += cc.precision();
        r += cc.recall();
        f += cc.f1();
    }
    let k = present.len().max(1) as f64;
    (
        ClassificationScores {
            accuracy: if truth.is_empty() {
                0.0
            } else {
                correct as f64 / truth.len() as f64
            },
            precision: p / k,
            recall: r / k,
            f1: f / k,
        },
        missing,
    )
}

/// Node index sets of a train/validation/test split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Per-class shuffled split of the labeled nodes with the given fractions
/// for train and validation; the remainder is test.
pub fn stratified_split(
    labels: &[Option<usize>],
    train: f64,
    val: f64,
    seed: u64,
) -> Result<NodeSplit> {
    if !(train > 0.0 && val >= 0.0 && train + val < 1.0) {
        return Err(Error::invalid(format!("bad split fractions {train}/{val}")));
    }
    let classes = labels.iter().flatten().max().map_or(0, |&m| m + 1);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, l) in labels.iter().enumerate() {
        if let Some(c) = l {
            by_class[*c].push(i);
        }
    }
    let mut r = rng::stream(seed, "node_split");
    let mut split = NodeSplit {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for mut members in by_class {
        members.shuffle(&mut r);
        let m = members.len();
        let a = (train * m as f64).round() as usize;
        let b = ((val * m as f64).round() as usize).min(m - a);
        split.train.extend_from_slice(&members[..a]);
        split.val.extend_from_slice(&members[a..a + b]);
        split.test.extend_from_slice(&members[a + b..]);
    }
    split.train.sort_unstable();
    split.val.sort_unstable();
    split.test.sort_unstable();
    Ok(split)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub repeats: usize,
    pub train_frac: f64,
    pub val_frac: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            hidden: 64,
            epochs: 200,
            lr: 1e-2,
            repeats: 5,
            train_frac: 0.6,
            val_frac: 0.2,
        }
    }
}

/// Mean and population standard deviation across probe repeats.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeReport {
    pub mean: ClassificationScores,
    pub std: ClassificationScores,
    /// Classes with no test node, left out of the macro averages.
    pub missing_classes: Vec<usize>,
}

fn argmax_rows(t: &Tensor) -> Vec<usize> {
    (0..t.rows())
        .map(|r| {
            let row = t.row(r);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Centers and scales every column by its training-row mean and population
/// std, so the probe sees the same problem whatever the embedding's scale.
/// Constant columns are only centered.
fn standardize(train: &Tensor, eval: &Tensor) -> (Tensor, Tensor) {
    let (n, d) = train.shape();
    let mut mean = vec![0.0; d];
    let mut sd = vec![0.0; d];
    for c in 0..d {
        let col: Vec<f64> = (0..n).map(|r| train.get(r, c)).collect();
        mean[c] = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|x| (x - mean[c]).powi(2)).sum::<f64>() / n as f64;
        let s = var.sqrt();
        sd[c] = if s > 0.0 { s } else { 1.0 };
    }
    let apply = |t: &Tensor| {
        let mut out = t.clone();
        for r in 0..t.rows() {
            for c in 0..d {
                out.set(r, c, (t.get(r, c) - mean[c]) / sd[c]);
            }
        }
        out
    };
    (apply(train), apply(eval))
}

/// One hidden-layer perceptron trained by full-batch Adam on cross-entropy.
/// Returns test predictions from the epoch with the best validation
/// accuracy (the earliest on ties).
fn train_probe(
    z: &Tensor,
    labels: &[usize],
    classes: usize,
    split: &NodeSplit,
    cfg: &ProbeConfig,
    seed: u64,
) -> Result<Vec<usize>> {
    let d = z.cols();
    let mut params = ParameterSet::new(seed);
    params.insert_glorot("probe.w1", d, cfg.hidden);
    params.insert_zeros("probe.b1", 1, cfg.hidden);
    params.insert_glorot("probe.w2", cfg.hidden, classes);
    params.insert_zeros("probe.b2", 1, classes);
    let mut adam = Adam::new(
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
        params.values(),
    );
    let (x_train, x_eval) = standardize(
        &z.select_rows(&split.train),
        &z.select_rows(&[split.val.as_slice(), split.test.as_slice()].concat()),
    );
    let mut onehot = Tensor::zeros(split.train.len(), classes);
    for (r, &i) in split.train.iter().enumerate() {
        onehot.set(r, labels[i], 1.0);
    }
    let val_truth: Vec<usize> = split.val.iter().map(|&i| labels[i]).collect();

    let forward = |tape: &mut Tape,
                   params: &ParameterSet,
                   x: &Tensor,
                   trainable: bool|
     -> Result<(Var, VarMap)> {
        let v = params.bind(tape, trainable);
        let mlp = Mlp {
            w1: v.get("probe.w1")?,
            b1: v.get("probe.b1")?,
            w2: v.get("probe.w2")?,
            b2: v.get("probe.b2")?,
        };
        let xv = tape.constant(x.clone());
        Ok((mlp.forward(tape, xv)?, v))
    };

    let mut best: Option<(usize, Vec<usize>)> = None;
    for _ in 0..cfg.epochs {
        let mut tape = Tape::new();
        let (logits, vars) = forward(&mut tape, &params, &x_train, true)?;
        // log-softmax with a constant per-row shift
        let shift: Vec<f64> = (0..split.train.len())
            .map(|r| {
                tape.value(logits)
                    .row(r)
                    .iter()
                    .cloned()
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        let c = tape.constant(Tensor::column(shift));
        let shifted = tape.sub(logits, c)?;
        let e = tape.exp(shifted);
        let s = tape.sum(e, 1)?;
        let lse = tape.log(s)?;
        let y = tape.constant(onehot.clone());
        let picked = tape.mul(shifted, y)?;
        let target = tape.sum(picked, 1)?;
        let logp = tape.sub(target, lse)?;
        let nll = tape.mean_all(logp);
        let loss = tape.scale(nll, -1.0);
        let grads = tape.backward(loss)?;
        let g: Vec<&Tensor> = vars
            .vars()
            .iter()
            .map(|&v| grads.get(v).expect("probe parameter gradient"))
            .collect();
        adam.step(params.values_mut(), &g)?;

        let mut tape = Tape::new();
        let (out, _) = forward(&mut tape, &params, &x_eval, false)?;
        let pred = argmax_rows(tape.value(out));
        let val_correct = pred[..split.val.len()]
            .iter()
            .zip(&val_truth)
            .filter(|(a, b)| a == b)
            .count();
        if best.as_ref().is_none_or(|(c, _)| val_correct > *c) {
            best = Some((val_correct, pred[split.val.len()..].to_vec()));
        }
    }
    Ok(best.map(|(_, p)| p).unwrap_or_default())
}

/// Trains `cfg.repeats` fresh probes on frozen `z` and scores each on the
/// test nodes.
pub fn node_cls_probe(
    z: &Tensor,
    labels: &[Option<usize>],
    split: &NodeSplit,
    cfg: &ProbeConfig,
    seed: u64,
) -> Result<ProbeReport> {
    let classes = labels.iter().flatten().max().map_or(0, |&m| m + 1);
    let label_of = |i: usize| labels[i].ok_or(Error::NoLabeledNode);
    let dense: Vec<usize> = (0..labels.len()).map(|i| labels[i].unwrap_or(0)).collect();
    for &i in split.train.iter().chain(&split.val).chain(&split.test) {
        label_of(i)?;
    }
    let distinct = |idx: &[usize]| {
        let mut c: Vec<usize> = idx.iter().map(|&i| dense[i]).collect();
        c.sort_unstable();
        c.dedup();
        c.len()
    };
    if distinct(&split.train) < 2 || distinct(&split.test) < 2 {
        return Err(Error::invalid(
            "probe needs at least two classes in both train and test",
        ));
    }
    if cfg.repeats == 0 || cfg.epochs == 0 {
        return Err(Error::invalid(
            "probe needs at least one repeat and one epoch",
        ));
    }
    let truth: Vec<usize> = split.test.iter().map(|&i| dense[i]).collect();
    let mut runs = Vec::with_capacity(cfg.repeats);
    let mut missing = Vec::new();
    for rep in 0..cfg.repeats {
        let pred = train_probe(
            z,
            &dense,
            classes,
            split,
            cfg,
            rng::derive(seed, "probe", rep as u64),
        )?;
        let (scores, miss) = classification_scores(&truth, &pred, classes);
        missing = miss;
        runs.push(scores);
    }
    let stat = |f: fn(&ClassificationScores) -> f64| {
        let xs: Vec<f64> = runs.iter().map(f).collect();
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64;
        (m, v.sqrt())
    };
    let (a, b, c, d) = (
        stat(|s| s.accuracy),
        stat(|s| s.precision),
        stat(|s| s.recall),
        stat(|s| s.f1),
    );
    Ok(ProbeReport {
        mean: ClassificationScores {
            accuracy: a.0,
            precision: b.0,
            recall: c.0,
            f1: d.0,
        },
        std: ClassificationScores {
            accuracy: a.1,
            precision: b.1,
            recall: c.1,
            f1: d.1,
        },
        missing_classes: missing,
    })
}
