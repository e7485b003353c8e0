//! Headline metrics and the long-tail dissection reports.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gnn::Prediction;
use crate::graph::{Label, Task};

/// Default class-frequency group boundaries.
pub const DEFAULT_BOUNDARIES: [usize; 4] = [100, 500, 1000, 5000];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Accuracy,
    RocAuc,
    Mae,
}

impl Metric {
    pub fn for_task(task: Task) -> Self {
        match task {
            Task::Multiclass(_) => Metric::Accuracy,
            Task::Binary => Metric::RocAuc,
            Task::Regression => Metric::Mae,
        }
    }

    pub fn higher_is_better(self) -> bool {
        !matches!(self, Metric::Mae)
    }

    /// Whether `a` is strictly better than `b`.
    pub fn better(self, a: f64, b: f64) -> bool {
        if self.higher_is_better() {
            a > b
        } else {
            a < b
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::RocAuc => "roc_auc",
            Metric::Mae => "mae",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn check_lengths(op: &'static str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::shape(op, format!("{a} predictions for {b} targets")));
    }
    if a == 0 {
        return Err(Error::InvalidArgument(format!("{op} of an empty set")));
    }
    Ok(())
}

pub fn accuracy(preds: &[usize], labels: &[usize]) -> Result<f64> {
    check_lengths("accuracy", preds.len(), labels.len())?;
    let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / preds.len() as f64)
}

pub fn mae(preds: &[f64], targets: &[f64]) -> Result<f64> {
    check_lengths("mae", preds.len(), targets.len())?;
    let total: f64 = preds.iter().zip(targets).map(|(p, t)| (p - t).abs()).sum();
    Ok(total / preds.len() as f64)
}

/// Mann-Whitney form of ROC-AUC with ties counted half. Runs in
/// `O(n log n)` by ranking scores.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_lengths("roc_auc", scores.len(), labels.len())?;
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidArgument("roc_auc got a NaN score".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::InvalidArgument(
            "roc_auc needs both positive and negative examples".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the pair count, so half credit stays integral.
    let mut twice_wins: u128 = 0;
    let mut neg_below: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let p = order[i..j].iter().filter(|&&o| labels[o]).count() as u128;
        let n = (j - i) as u128 - p;
        twice_wins += p * (2 * neg_below + n);
        neg_below += n;
        i = j;
    }
    Ok(twice_wins as f64 / (2.0 * pos as f64 * neg as f64))
}

/// Headline metric of `task`: accuracy of the argmax class, ROC-AUC of
/// the class-1 probability, or MAE.
pub fn task_metric(task: Task, preds: &[Prediction], labels: &[Label]) -> Result<f64> {
    check_lengths("task_metric", preds.len(), labels.len())?;
    match Metric::for_task(task) {
        Metric::Accuracy => {
            let (p, l) = classes(preds, labels)?;
            accuracy(&p, &l)
        }
        Metric::RocAuc => {
            let (s, l) = binary_scores(preds, labels)?;
            roc_auc(&s, &l)
        }
        Metric::Mae => {
            let (p, t) = reals(preds, labels)?;
            mae(&p, &t)
        }
    }
}

/// Metric used for model selection. Equals [`task_metric`], except that
/// a binary split holding a single class falls back to accuracy.
pub fn selection_metric(task: Task, preds: &[Prediction], labels: &[Label]) -> Result<(Metric, f64)> {
    let metric = Metric::for_task(task);
    if metric == Metric::RocAuc {
        let (_, l) = binary_scores(preds, labels)?;
        if l.iter().all(|&x| x == l[0]) {
            let (p, l) = classes(preds, labels)?;
            return Ok((Metric::Accuracy, accuracy(&p, &l)?));
        }
    }
    Ok((metric, task_metric(task, preds, labels)?))
}

fn classes(preds: &[Prediction], labels: &[Label]) -> Result<(Vec<usize>, Vec<usize>)> {
    let p = preds
        .iter()
        .map(|p| p.argmax().ok_or_else(|| Error::InvalidArgument("expected class probabilities".into())))
        .collect::<Result<Vec<_>>>()?;
    let l = labels
        .iter()
        .map(|l| l.class().ok_or_else(|| Error::InvalidArgument("expected class labels".into())))
        .collect::<Result<Vec<_>>>()?;
    Ok((p, l))
}

fn binary_scores(preds: &[Prediction], labels: &[Label]) -> Result<(Vec<f64>, Vec<bool>)> {
    let s = preds
        .iter()
        .map(|p| match p.probs() {
            Some([_, p1]) => Ok(*p1),
            _ => Err(Error::InvalidArgument("expected two class probabilities".into())),
        })
        .collect::<Result<Vec<_>>>()?;
    let (_, l) = classes(preds, labels)?;
    Ok((s, l.into_iter().map(|c| c == 1).collect()))
}

fn reals(preds: &[Prediction], labels: &[Label]) -> Result<(Vec<f64>, Vec<f64>)> {
    let p = preds
        .iter()
        .map(|p| p.value().ok_or_else(|| Error::InvalidArgument("expected real predictions".into())))
        .collect::<Result<Vec<_>>>()?;
    let t = labels
        .iter()
        .map(|l| l.value().ok_or_else(|| Error::InvalidArgument("expected real labels".into())))
        .collect::<Result<Vec<_>>>()?;
    Ok((p, t))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupStat {
    pub label: String,
    pub count: usize,
    pub value: f64,
}

/// Serialised evaluation result. A single run has `seeds = 1`, `mean`
/// equal to `value` and `std = 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub metric: Metric,
    pub value: f64,
    #[serde(default)]
    pub groups: Vec<GroupStat>,
    pub seeds: usize,
    pub mean: f64,
    pub std: f64,
}

impl MetricsReport {
    pub fn single(metric: Metric, value: f64) -> Self {
        Self {
            metric,
            value,
            groups: Vec::new(),
            seeds: 1,
            mean: value,
            std: 0.0,
        }
    }

    pub fn with_groups(mut self, groups: Vec<GroupStat>) -> Self {
        self.groups = groups;
        self
    }

    pub fn group(&self, label: &str) -> Option<&GroupStat> {
        self.groups.iter().find(|g| g.label == label)
    }

    /// Mean and sample standard deviation across runs. Group values are
    /// averaged label by label; a group missing from some run is averaged
    /// over the runs that have it.
    pub fn aggregate(reports: &[MetricsReport]) -> Result<Self> {
        let Some(first) = reports.first() else {
            return Err(Error::InvalidArgument("nothing to aggregate".into()));
        };
        if reports.iter().any(|r| r.metric != first.metric) {
            return Err(Error::InvalidArgument("cannot aggregate different metrics".into()));
        }
        let values: Vec<f64> = reports.iter().map(|r| r.value).collect();
        let (mean, std) = mean_std(&values);
        let mut groups: Vec<(GroupStat, usize)> = Vec::new();
        for r in reports {
            for g in &r.groups {
                match groups.iter_mut().find(|(s, _)| s.label == g.label) {
                    Some((s, n)) => {
                        s.value += g.value;
                        *n += 1;
                    }
                    None => groups.push((g.clone(), 1)),
                }
            }
        }
        let groups = groups
            .into_iter()
            .map(|(mut g, n)| {
                g.value /= n as f64;
                g
            })
            .collect();
        Ok(Self {
            metric: first.metric,
            value: mean,
            groups,
            seeds: reports.len(),
            mean,
            std,
        })
    }

    /// Plain-text table.
    pub fn render(&self) -> String {
        let mut out = format!("{:<14} {:>10.6}\n", self.metric.name(), self.value);
        if self.seeds > 1 {
            out.push_str(&format!(
                "{:<14} {:>10}\n{:<14} {:>10.6}\n{:<14} {:>10.6}\n",
                "seeds", self.seeds, "mean", self.mean, "std", self.std
            ));
        }
        if !self.groups.is_empty() {
            out.push_str(&format!("\n{:<14} {:>8} {:>10}\n", "group", "count", self.metric.name()));
            for g in &self.groups {
                out.push_str(&format!("{:<14} {:>8} {:>10.6}\n", g.label, g.count, g.value));
            }
        }
        out
    }
}

/// Mean and sample (n - 1) standard deviation; the std of one value is 0.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn check_increasing<T: PartialOrd + fmt::Debug>(xs: &[T], what: &str) -> Result<()> {
    if xs.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument(format!("{what} must be strictly increasing: {xs:?}")));
    }
    Ok(())
}

/// Group labels for class-frequency boundaries, e.g. `<100`, `100-500`,
/// `>=5000`.
pub fn group_labels(boundaries: &[usize]) -> Vec<String> {
    let mut labels = Vec::with_capacity(boundaries.len() + 1);
    if let Some(first) = boundaries.first() {
        labels.push(format!("<{first}"));
    }
    for w in boundaries.windows(2) {
        labels.push(format!("{}-{}", w[0], w[1]));
    }
    match boundaries.last() {
        Some(last) => labels.push(format!(">={last}")),
        None => labels.push("all".into()),
    }
    labels
}

/// Group index of a class with `count` training examples.
pub fn group_of(count: usize, boundaries: &[usize]) -> usize {
    boundaries.iter().take_while(|&&b| count >= b).count()
}

/// Accuracy overall and per class-frequency group. Groups without test
/// examples are omitted.
pub fn longtail_class_report(
    preds: &[usize],
    labels: &[usize],
    train_class_counts: &[usize],
    boundaries: &[usize],
) -> Result<MetricsReport> {
    check_increasing(boundaries, "group boundaries")?;
    let headline = accuracy(preds, labels)?;
    let names = group_labels(boundaries);
    let mut hits = vec![0usize; names.len()];
    let mut counts = vec![0usize; names.len()];
    for (&p, &l) in preds.iter().zip(labels) {
        let Some(&n) = train_class_counts.get(l) else {
            return Err(Error::InvalidArgument(format!(
                "class {l} has no training count"
            )));
        };
        let g = group_of(n, boundaries);
        counts[g] += 1;
        hits[g] += usize::from(p == l);
    }
    let groups = names
        .into_iter()
        .zip(counts.iter().zip(&hits))
        .filter(|(_, (&c, _))| c > 0)
        .map(|(label, (&count, &h))| GroupStat {
            label,
            count,
            value: h as f64 / count as f64,
        })
        .collect();
    Ok(MetricsReport::single(Metric::Accuracy, headline).with_groups(groups))
}

/// Bucket labels `[e0,e1)`, …, `[en,inf)`.
pub fn bucket_labels(edges: &[f64]) -> Vec<String> {
    let mut labels: Vec<String> = edges.windows(2).map(|w| format!("[{},{})", w[0], w[1])).collect();
    if let Some(last) = edges.last() {
        labels.push(format!("[{last},inf)"));
    }
    labels
}

/// Bucket index of a target, or `None` below the first edge.
pub fn bucket_of(target: f64, edges: &[f64]) -> Option<usize> {
    if edges.is_empty() || target < edges[0] {
        return None;
    }
    Some(edges.iter().take_while(|&&e| target >= e).count() - 1)
}

/// MAE overall and per target-value bucket. Targets below the first edge
/// count toward the headline only; empty buckets are omitted.
pub fn value_bucket_report(preds: &[f64], targets: &[f64], edges: &[f64]) -> Result<MetricsReport> {
    check_increasing(edges, "bucket edges")?;
    if edges.iter().any(|e| !e.is_finite()) {
        return Err(Error::InvalidArgument("bucket edges must be finite".into()));
    }
    let headline = mae(preds, targets)?;
    let names = bucket_labels(edges);
    let mut err = vec![0.0; names.len()];
    let mut counts = vec![0usize; names.len()];
    for (&p, &t) in preds.iter().zip(targets) {
        if let Some(b) = bucket_of(t, edges) {
            err[b] += (p - t).abs();
            counts[b] += 1;
        }
    }
    let groups = names
        .into_iter()
        .zip(counts.iter().zip(&err))
        .filter(|(_, (&c, _))| c > 0)
        .map(|(label, (&count, &e))| GroupStat {
            label,
            count,
            value: e / count as f64,
        })
        .collect();
    Ok(MetricsReport::single(Metric::Mae, headline).with_groups(groups))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_cases() {
        assert_eq!(accuracy(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
        assert_eq!(accuracy(&[0, 0], &[1, 1]).unwrap(), 0.0);
        assert_eq!(accuracy(&[1, 2, 3, 4], &[1, 2, 3, 0]).unwrap(), 0.75);
        assert!(accuracy(&[], &[]).is_err());
    }

    #[test]
    fn mae_cases() {
        assert_eq!(mae(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mae(&[0.0, 2.0], &[1.0, 1.0]).unwrap(), 1.0);
    }

    #[test]
    fn auc_cases() {
        assert_eq!(roc_auc(&[0.9, 0.1], &[true, false]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.3; 6], &[true, false, true, false, false, true]).unwrap(), 0.5);
        assert!(roc_auc(&[0.1, 0.2], &[true, true]).is_err());
    }

    #[test]
    fn labels_for_default_boundaries() {
        assert_eq!(
            group_labels(&DEFAULT_BOUNDARIES),
            vec!["<100", "100-500", "500-1000", "1000-5000", ">=5000"]
        );
        assert_eq!(group_of(50, &[100, 500]), 0);
        assert_eq!(group_of(100, &[100, 500]), 1);
        assert_eq!(group_of(9000, &[100, 500]), 2);
    }

    #[test]
    fn bucket_labels_match_ranges() {
        assert_eq!(
            bucket_labels(&[0.0, 10.0, 20.0, 30.0]),
            vec!["[0,10)", "[10,20)", "[20,30)", "[30,inf)"]
        );
        let r = value_bucket_report(&[4.0], &[5.0], &[0.0, 10.0]).unwrap();
        assert_eq!(r.groups.len(), 1);
        assert_eq!(r.groups[0].label, "[0,10)");
    }

    #[test]
    fn single_group_equals_headline() {
        let r = longtail_class_report(&[0, 1, 1], &[0, 1, 0], &[10, 20], &[100]).unwrap();
        assert_eq!(r.groups.len(), 1);
        assert_eq!(r.groups[0].value, r.value);
        assert!(longtail_class_report(&[0], &[5], &[10], &[100]).is_err());
        assert!(longtail_class_report(&[0], &[0], &[10], &[500, 100]).is_err());
    }

    #[test]
    fn aggregate_uses_sample_std() {
        let rs: Vec<_> = [1.0, 3.0].iter().map(|&v| MetricsReport::single(Metric::Mae, v)).collect();
        let agg = MetricsReport::aggregate(&rs).unwrap();
        assert_eq!((agg.seeds, agg.mean), (2, 2.0));
        assert!((agg.std - 2f64.sqrt()).abs() < 1e-12);
        let json = serde_json::to_value(&agg).unwrap();
        for key in ["metric", "value", "groups", "seeds", "mean", "std"] {
            assert!(json.get(key).is_some(), "{key}");
        }
        assert_eq!(json["metric"], "mae");
    }
}
