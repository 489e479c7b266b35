use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best
}

/// Confusion matrix (rows true, columns predicted), overall accuracy and
/// per-class detection and false-positive rates. A class absent from the
/// labels has an undefined detection rate, reported as `None`.
pub fn compute_metrics(preds: &[usize], labels: &[usize], k: usize) -> (Vec<Vec<usize>>, f64, Vec<Option<f64>>, Vec<Option<f64>>) {
    let mut confusion = vec![vec![0usize; k]; k];
    for (&p, &y) in preds.iter().zip(labels) {
        confusion[y][p] += 1;
    }
    let n = labels.len();
    let tp_sum: usize = (0..k).map(|i| confusion[i][i]).sum();
    let acc = tp_sum as f64 / n as f64;
    let mut fdr = Vec::with_capacity(k);
    let mut fpr = Vec::with_capacity(k);
    for l in 0..k {
        let tp = confusion[l][l];
        let fn_: usize = confusion[l].iter().sum::<usize>() - tp;
        let fp: usize = (0..k).map(|i| confusion[i][l]).sum::<usize>() - tp;
        let tn = n - tp - fn_ - fp;
        fdr.push((tp + fn_ > 0).then(|| tp as f64 / (tp + fn_) as f64));
        fpr.push((fp + tn > 0).then(|| fp as f64 / (fp + tn) as f64));
    }
    (confusion, acc, fdr, fpr)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairAccuracy {
    pub domain: String,
    pub category: String,
    pub n: usize,
    pub correct: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub categories: Vec<String>,
    pub n: usize,
    pub acc: f64,
    pub fdr: Vec<Option<f64>>,
    pub fpr: Vec<Option<f64>>,
    /// Means over the classes where the rate is defined.
    pub mean_fdr: f64,
    pub mean_fpr: f64,
    pub confusion: Vec<Vec<usize>>,
    pub per_domain: Vec<PairAccuracy>,
}

fn defined_mean(xs: &[Option<f64>]) -> f64 {
    let v: Vec<f64> = xs.iter().flatten().copied().collect();
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

impl EvalReport {
    pub fn new(preds: &[usize], labels: &[usize], domains: &[&str], categories: &[String]) -> EvalReport {
        let (confusion, acc, fdr, fpr) = compute_metrics(preds, labels, categories.len());
        let mut cells: BTreeMap<(&str, usize), (usize, usize)> = BTreeMap::new();
        for ((&p, &y), &d) in preds.iter().zip(labels).zip(domains) {
            let c = cells.entry((d, y)).or_insert((0, 0));
            c.0 += 1;
            c.1 += usize::from(p == y);
        }
        let per_domain = cells
            .into_iter()
            .map(|((d, y), (n, correct))| PairAccuracy {
                domain: d.to_string(),
                category: categories[y].clone(),
                n,
                correct,
                accuracy: correct as f64 / n as f64,
            })
            .collect();
        EvalReport {
            categories: categories.to_vec(),
            n: labels.len(),
            acc,
            mean_fdr: defined_mean(&fdr),
            mean_fpr: defined_mean(&fpr),
            fdr,
            fpr,
            confusion,
            per_domain,
        }
    }

    /// `true,<categories…>` header followed by one row per true class.
    pub fn confusion_csv(&self) -> String {
        let mut s = format!("true,{}\n", self.categories.join(","));
        for (c, row) in self.categories.iter().zip(&self.confusion) {
            let cells: Vec<String> = row.iter().map(|x| x.to_string()).collect();
            s.push_str(&format!("{c},{}\n", cells.join(",")));
        }
        s
    }

    /// Human-readable per-class rate table.
    pub fn class_table(&self) -> String {
        let fmt = |x: Option<f64>| x.map_or("    n/a".to_string(), |v| format!("{v:7.4}"));
        let mut s = format!("{:<6} {:>7} {:>7}\n", "class", "FDR", "FPR");
        for (i, c) in self.categories.iter().enumerate() {
            s.push_str(&format!("{c:<6} {} {}\n", fmt(self.fdr[i]), fmt(self.fpr[i])));
        }
        s
    }
}
