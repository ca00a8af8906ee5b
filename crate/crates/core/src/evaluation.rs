//! Spectrum classification, per-core majority voting and one-vs-rest
//! accuracy, specificity and sensitivity.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;

use crate::dataset::SpectraSet;
use crate::error::{Error, Result};
use crate::model::{CarenetModel, Head};
use crate::pipeline::class_labels;

pub fn class_name(head: Head, class: usize) -> &'static str {
    match head {
        Head::Type => ["AT", "CA"].get(class).copied().unwrap_or("?"),
        Head::Subtype => ["LA", "LB", "HER2", "TNBC"]
            .get(class)
            .copied()
            .unwrap_or("?"),
    }
}

/// Class probabilities of one output row; the binary head becomes `[1-p, p]`.
pub fn class_probabilities(head: Head, output: &[f32]) -> Vec<f64> {
    match head {
        Head::Type => {
            let p = f64::from(output[0]);
            vec![1.0 - p, p]
        }
        Head::Subtype => output.iter().map(|&v| f64::from(v)).collect(),
    }
}

/// Class and tie flag: class 1 iff p >= 0.5 for the binary head, argmax
/// with ties to the lowest index otherwise.
pub fn classify_spectrum(head: Head, output: &[f32]) -> Result<(usize, bool)> {
    if output.len() != head.n_outputs() || output.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "expected {} finite outputs, got {output:?}",
            head.n_outputs()
        )));
    }
    Ok(match head {
        Head::Type => (usize::from(output[0] >= 0.5), false),
        Head::Subtype => {
            let max = output.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let winners: Vec<usize> = (0..output.len()).filter(|&k| output[k] == max).collect();
            (winners[0], winners.len() > 1)
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientPrediction {
    pub patient_id: u32,
    pub core_id: u32,
    pub votes: Vec<usize>,
    pub mean_probability: Vec<f64>,
    pub class: usize,
    pub tie: bool,
    pub truth: usize,
}

/// Plurality vote. Ties go to the higher mean probability, then the lowest
/// index, and set the tie flag.
pub fn patient_vote(
    classes: &[usize],
    probabilities: &[Vec<f64>],
    n_classes: usize,
) -> Result<(usize, bool, Vec<usize>, Vec<f64>)> {
    if classes.is_empty() {
        return Err(Error::InvalidParameter(
            "cannot vote over zero spectra".into(),
        ));
    }
    if probabilities.len() != classes.len() {
        return Err(Error::LengthMismatch {
            expected: classes.len(),
            got: probabilities.len(),
        });
    }
    let mut votes = vec![0usize; n_classes];
    let mut mean = vec![0.0; n_classes];
    for (&c, p) in classes.iter().zip(probabilities) {
        *votes
            .get_mut(c)
            .ok_or_else(|| Error::Label(format!("class {c} outside {n_classes} classes")))? += 1;
        for (m, v) in mean.iter_mut().zip(p) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= classes.len() as f64);
    let top = *votes.iter().max().expect("n_classes > 0");
    let tied: Vec<usize> = (0..n_classes).filter(|&k| votes[k] == top).collect();
    let mut best = tied[0];
    for &k in &tied[1..] {
        if mean[k] > mean[best] {
            best = k;
        }
    }
    Ok((best, tied.len() > 1, votes, mean))
}

/// Model outputs on a labelled set.
#[derive(Debug, Clone, PartialEq)]
pub struct SetPredictions {
    pub head: Head,
    pub probabilities: Vec<Vec<f64>>,
    pub classes: Vec<usize>,
    pub ties: Vec<bool>,
    pub truths: Vec<usize>,
    /// (patient id, core id) per spectrum.
    pub cores: Vec<(u32, u32)>,
}

pub fn predict_set(model: &CarenetModel, set: &SpectraSet) -> Result<SetPredictions> {
    if set.is_empty() {
        return Err(Error::Label("cannot evaluate an empty set".into()));
    }
    let truths = class_labels(set, model.head)?;
    let rows: Vec<&[f32]> = set.rows().collect();
    let outputs = model.predict(&rows)?;
    let mut classes = Vec::with_capacity(outputs.len());
    let mut ties = Vec::with_capacity(outputs.len());
    for o in &outputs {
        let (c, t) = classify_spectrum(model.head, o)?;
        classes.push(c);
        ties.push(t);
    }
    Ok(SetPredictions {
        head: model.head,
        probabilities: outputs
            .iter()
            .map(|o| class_probabilities(model.head, o))
            .collect(),
        classes,
        ties,
        truths,
        cores: set
            .infos()
            .iter()
            .map(|i| (i.patient_id, i.core_id))
            .collect(),
    })
}

impl SetPredictions {
    /// One vote per core, in core-id order. A core holds one label, so this
    /// is the patient-level decision whenever a patient contributes one core.
    pub fn patient_predictions(&self) -> Result<Vec<PatientPrediction>> {
        let mut groups: BTreeMap<(u32, u32), Vec<usize>> = BTreeMap::new();
        for (i, &(p, c)) in self.cores.iter().enumerate() {
            groups.entry((c, p)).or_default().push(i);
        }
        groups
            .into_iter()
            .map(|((core_id, patient_id), idx)| {
                let classes: Vec<usize> = idx.iter().map(|&i| self.classes[i]).collect();
                let probs: Vec<Vec<f64>> =
                    idx.iter().map(|&i| self.probabilities[i].clone()).collect();
                let (class, tie, votes, mean_probability) =
                    patient_vote(&classes, &probs, self.head.n_classes())?;
                Ok(PatientPrediction {
                    patient_id,
                    core_id,
                    votes,
                    mean_probability,
                    class,
                    tie,
                    truth: self.truths[idx[0]],
                })
            })
            .collect()
    }
}

/// One-vs-rest counts for one class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn from_labels(predictions: &[usize], truths: &[usize], class: usize) -> Result<Self> {
        if predictions.len() != truths.len() {
            return Err(Error::LengthMismatch {
                expected: truths.len(),
                got: predictions.len(),
            });
        }
        let mut c = Self::default();
        for (&p, &t) in predictions.iter().zip(truths) {
            match (p == class, t == class) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn metrics(&self) -> Metrics {
        let ratio = |a: usize, b: usize| (b > 0).then(|| a as f64 / b as f64);
        Metrics {
            accuracy: ratio(self.tp + self.tn, self.total()),
            specificity: ratio(self.tn, self.tn + self.fp),
            sensitivity: ratio(self.tp, self.tp + self.fn_),
        }
    }
}

/// `None` marks an undefined ratio (zero denominator).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: Option<f64>,
    pub specificity: Option<f64>,
    pub sensitivity: Option<f64>,
}

pub fn compute_metrics(predictions: &[usize], truths: &[usize], class: usize) -> Result<Metrics> {
    Ok(ConfusionCounts::from_labels(predictions, truths, class)?.metrics())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    Spectrum,
    Patient,
}

impl Granularity {
    pub fn name(self) -> &'static str {
        match self {
            Granularity::Spectrum => "spectrum",
            Granularity::Patient => "patient",
        }
    }
}

/// One line of the metrics table: a fold, or the mean / std over folds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub set: String,
    pub label: Head,
    pub class: String,
    pub granularity: Granularity,
    pub statistic: String,
    pub metrics: Metrics,
}

fn labels_at(p: &SetPredictions, g: Granularity) -> Result<(Vec<usize>, Vec<usize>)> {
    Ok(match g {
        Granularity::Spectrum => (p.classes.clone(), p.truths.clone()),
        Granularity::Patient => {
            let pp = p.patient_predictions()?;
            (
                pp.iter().map(|x| x.class).collect(),
                pp.iter().map(|x| x.truth).collect(),
            )
        }
    })
}

/// Mean and sample standard deviation over the defined values.
pub fn mean_std(values: &[Option<f64>]) -> (Option<f64>, Option<f64>) {
    let v: Vec<f64> = values.iter().flatten().copied().collect();
    if v.is_empty() {
        return (None, None);
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let sd = (v.len() > 1)
        .then(|| (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt());
    (Some(m), sd)
}

/// Per-fold rows plus mean and std rows for every class and granularity.
pub fn metric_rows(set: &str, folds: &[SetPredictions]) -> Result<Vec<MetricRow>> {
    let Some(first) = folds.first() else {
        return Err(Error::InvalidParameter(
            "no fold predictions to summarise".into(),
        ));
    };
    let head = first.head;
    let mut rows = Vec::new();
    for g in [Granularity::Spectrum, Granularity::Patient] {
        let labelled: Vec<(Vec<usize>, Vec<usize>)> = folds
            .iter()
            .map(|f| labels_at(f, g))
            .collect::<Result<_>>()?;
        for class in 0..head.n_classes() {
            let per_fold: Vec<Metrics> = labelled
                .iter()
                .map(|(p, t)| compute_metrics(p, t, class))
                .collect::<Result<_>>()?;
            let row = |statistic: String, metrics: Metrics| MetricRow {
                set: set.to_string(),
                label: head,
                class: class_name(head, class).to_string(),
                granularity: g,
                statistic,
                metrics,
            };
            for (k, m) in per_fold.iter().enumerate() {
                rows.push(row(format!("fold{k}"), *m));
            }
            let pick = |f: fn(&Metrics) -> Option<f64>| per_fold.iter().map(f).collect::<Vec<_>>();
            let (am, asd) = mean_std(&pick(|m| m.accuracy));
            let (sm, ssd) = mean_std(&pick(|m| m.specificity));
            let (nm, nsd) = mean_std(&pick(|m| m.sensitivity));
            rows.push(row(
                "mean".into(),
                Metrics {
                    accuracy: am,
                    specificity: sm,
                    sensitivity: nm,
                },
            ));
            rows.push(row(
                "std".into(),
                Metrics {
                    accuracy: asd,
                    specificity: ssd,
                    sensitivity: nsd,
                },
            ));
        }
    }
    Ok(rows)
}

fn fmt_metric(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "NA".into())
}

pub const METRICS_HEADER: &str =
    "set,label,class,granularity,statistic,accuracy,specificity,sensitivity";

pub fn write_metrics_csv<W: Write>(rows: &[MetricRow], mut out: W) -> Result<()> {
    writeln!(out, "{METRICS_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.set,
            r.label,
            r.class,
            r.granularity.name(),
            r.statistic,
            fmt_metric(r.metrics.accuracy),
            fmt_metric(r.metrics.specificity),
            fmt_metric(r.metrics.sensitivity)
        )?;
    }
    Ok(())
}

/// Ground truth against each fold's vote, one row per evaluated core.
pub fn write_patient_table<W: Write>(folds: &[SetPredictions], mut out: W) -> Result<()> {
    let Some(first) = folds.first() else {
        return Err(Error::InvalidParameter(
            "no fold predictions to tabulate".into(),
        ));
    };
    let head = first.head;
    let per_fold: Vec<Vec<PatientPrediction>> = folds
        .iter()
        .map(SetPredictions::patient_predictions)
        .collect::<Result<_>>()?;
    write!(out, "label,patient_id,core_id,truth")?;
    for k in 0..folds.len() {
        write!(out, ",fold{k}")?;
    }
    writeln!(out, ",ties")?;
    for (i, p) in per_fold[0].iter().enumerate() {
        write!(
            out,
            "{head},{},{},{}",
            p.patient_id,
            p.core_id,
            class_name(head, p.truth)
        )?;
        let mut ties = 0;
        for f in &per_fold {
            let q = f.get(i).filter(|q| q.core_id == p.core_id).ok_or_else(|| {
                Error::ShapeMismatch("folds were evaluated on different cores".into())
            })?;
            ties += usize::from(q.tie);
            write!(out, ",{}", class_name(head, q.class))?;
        }
        writeln!(out, ",{ties}")?;
    }
    Ok(())
}
