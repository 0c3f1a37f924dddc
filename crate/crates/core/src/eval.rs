//! Average precision, mAP, seed-wise confidence intervals and report
//! assembly (CSV, text tables, SVG plot).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::data::{TestCondition, TEST_SNRS_DB};
use crate::error::{Error, Result};
use crate::pvad::{PvadClass, PvadExample, PvadModel};

/// Step-wise AP: `Σ_n (R_n − R_{n−1}) P_n`, thresholds at the distinct
/// scores in descending order, equal scores entering together.
pub fn average_precision(scores: &[f64], positives: &[bool]) -> Result<f64> {
    if scores.len() != positives.len() {
        return Err(Error::shape(format!(
            "average_precision: {} scores, {} labels",
            scores.len(),
            positives.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("average_precision: NaN score"));
    }
    let n_pos = positives.iter().filter(|&&p| p).count();
    if n_pos == 0 {
        return Err(Error::invalid("average precision is undefined without positives"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp) = (0usize, 0usize);
    let (mut ap, mut prev_recall) = (0.0, 0.0);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if positives[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let precision = tp as f64 / (tp + fp) as f64;
        let recall = tp as f64 / n_pos as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(ap)
}

pub fn map_score(aps: [f64; 3]) -> f64 {
    (aps[0] + aps[1] + aps[2]) / 3.0
}

/// Mean and Student-t 95% half-width over per-seed values.
pub fn ci95(values: &[f64]) -> Result<(f64, f64)> {
    let n = values.len();
    if n < 2 {
        return Err(Error::invalid("a confidence interval needs at least two values"));
    }
    let rough = values.iter().sum::<f64>() / n as f64;
    // second pass removes the rounding of the first
    let mean = rough + values.iter().map(|v| v - rough).sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .map_err(|e| Error::invalid(e.to_string()))?
        .inverse_cdf(0.975);
    Ok((mean, t * var.sqrt() / (n as f64).sqrt()))
}

/// Frame-level scores of one condition, pooled over utterances.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoredFrames {
    pub labels: Vec<PvadClass>,
    /// `[z_ns, z_tss, z_ntss]` per frame.
    pub posteriors: Vec<[f32; 3]>,
}

impl ScoredFrames {
    pub fn push(&mut self, labels: &[PvadClass], posteriors: &Array2<f32>) -> Result<()> {
        if posteriors.dim() != (labels.len(), 3) {
            return Err(Error::shape(format!(
                "{} labels for posteriors of shape {:?}",
                labels.len(),
                posteriors.dim()
            )));
        }
        self.labels.extend_from_slice(labels);
        self.posteriors.extend(posteriors.rows().into_iter().map(|r| [r[0], r[1], r[2]]));
        Ok(())
    }

    /// One-vs-rest AP per class, using the class posterior as the score.
    pub fn class_aps(&self) -> Result<[f64; 3]> {
        let mut out = [0.0; 3];
        for c in PvadClass::ALL {
            let scores: Vec<f64> = self.posteriors.iter().map(|p| p[c.index()] as f64).collect();
            let pos: Vec<bool> = self.labels.iter().map(|&l| l == c).collect();
            out[c.index()] = average_precision(&scores, &pos)
                .map_err(|e| Error::invalid(format!("class {}: {e}", c.name())))?;
        }
        Ok(out)
    }
}

/// Model-ready examples of one test condition.
#[derive(Debug, Clone)]
pub struct EvalSet {
    pub condition: Option<TestCondition>,
    pub examples: Vec<PvadExample>,
}

impl EvalSet {
    pub fn name(&self) -> String {
        condition_name(self.condition.as_ref())
    }
}

pub fn condition_name(c: Option<&TestCondition>) -> String {
    c.map_or_else(|| "clean".to_string(), TestCondition::dir_name)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionResult {
    pub condition: String,
    pub noise_type: String,
    /// Empty for the clean set.
    pub snr_db: Option<i32>,
    pub ap_ns: f64,
    pub ap_tss: f64,
    pub ap_ntss: f64,
    pub map: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub rows: Vec<ConditionResult>,
}

pub fn score_set(model: &PvadModel<f32>, set: &EvalSet) -> Result<ScoredFrames> {
    if set.examples.is_empty() {
        return Err(Error::invalid(format!("test set {} is empty", set.name())));
    }
    let mut frames = ScoredFrames::default();
    for ex in &set.examples {
        let post = model.forward(ex.features.view(), &ex.similarity)?;
        frames.push(&ex.labels, &post)?;
    }
    Ok(frames)
}

pub fn result_row(condition: Option<&TestCondition>, aps: [f64; 3]) -> ConditionResult {
    ConditionResult {
        condition: condition_name(condition),
        noise_type: condition.map_or_else(|| "none".to_string(), |c| c.noise_type.clone()),
        snr_db: condition.map(|c| c.snr_db),
        ap_ns: aps[0],
        ap_tss: aps[1],
        ap_ntss: aps[2],
        map: map_score(aps),
    }
}

/// Scores every set independently (in parallel) and assembles the rows in
/// input order.
pub fn evaluate(model: &PvadModel<f32>, sets: &[EvalSet]) -> Result<EvalReport> {
    if sets.is_empty() {
        return Err(Error::invalid("no test sets to evaluate"));
    }
    let rows = crate::par::map(sets, |_, set| -> Result<ConditionResult> {
        let aps = score_set(model, set)?.class_aps()?;
        Ok(result_row(set.condition.as_ref(), aps))
    });
    Ok(EvalReport {
        rows: rows.into_iter().collect::<Result<_>>()?,
    })
}

impl EvalReport {
    pub fn get(&self, condition: &str) -> Option<&ConditionResult> {
        self.rows.iter().find(|r| r.condition == condition)
    }

    /// Mean mAP over the rows accepted by `pred`.
    pub fn mean_map(&self, pred: impl Fn(&ConditionResult) -> bool) -> Option<f64> {
        let v: Vec<f64> = self.rows.iter().filter(|r| pred(r)).map(|r| r.map).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r).map_err(|e| Error::format(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::format(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::format(e.to_string()))
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let rows = r
            .deserialize()
            .collect::<std::result::Result<Vec<ConditionResult>, _>>()
            .map_err(|e| Error::format(e.to_string()))?;
        Ok(Self { rows })
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()?).map_err(|e| Error::io(path, e))
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_csv(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    /// Per-condition AP table plus per-noise averages over SNR.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<20} {:>7} {:>7} {:>7} {:>7}", "condition", "AP ns", "AP tss", "AP ntss", "mAP");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<20} {:>7.1} {:>7.1} {:>7.1} {:>7.1}",
                r.condition,
                100.0 * r.ap_ns,
                100.0 * r.ap_tss,
                100.0 * r.ap_ntss,
                100.0 * r.map
            );
        }
        s
    }
}

/// Noise regimes of the report: seen noises average the training-pool test
/// types, unseen is café alone.
pub const SEEN_TEST_NOISES: [&str; 3] = ["bus", "babble", "speech_shaped"];
pub const UNSEEN_TEST_NOISES: [&str; 1] = ["cafe"];

pub fn is_seen(r: &ConditionResult) -> bool {
    SEEN_TEST_NOISES.contains(&r.noise_type.as_str())
}

pub fn is_unseen(r: &ConditionResult) -> bool {
    UNSEEN_TEST_NOISES.contains(&r.noise_type.as_str())
}

/// One row of a model comparison: a condition or an average.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub label: String,
    /// Per model: mAP of each run.
    pub values: Vec<Vec<f64>>,
}

/// Several models, each with one or more runs (seeds) over the same
/// condition set.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub models: Vec<String>,
    pub rows: Vec<ComparisonRow>,
}

/// Merge evaluation reports. Every report must cover the same conditions.
pub fn compare(runs: &[(String, EvalReport)]) -> Result<Comparison> {
    if runs.is_empty() {
        return Err(Error::invalid("nothing to report"));
    }
    let conditions: Vec<String> = runs[0].1.rows.iter().map(|r| r.condition.clone()).collect();
    let mut grouped: BTreeMap<&str, Vec<&EvalReport>> = BTreeMap::new();
    let mut models: Vec<String> = Vec::new();
    for (m, rep) in runs {
        let conds: Vec<&str> = rep.rows.iter().map(|r| r.condition.as_str()).collect();
        if conds != conditions.iter().map(String::as_str).collect::<Vec<_>>() {
            return Err(Error::invalid(format!("report for {m} covers a different condition set")));
        }
        if !models.contains(m) {
            models.push(m.clone());
        }
        grouped.entry(m.as_str()).or_default().push(rep);
    }
    let collect = |label: String, f: &dyn Fn(&EvalReport) -> Option<f64>| -> Option<ComparisonRow> {
        let values: Option<Vec<Vec<f64>>> = models
            .iter()
            .map(|m| grouped[m.as_str()].iter().map(|r| f(r)).collect())
            .collect();
        values.map(|values| ComparisonRow { label, values })
    };
    let mut rows = Vec::new();
    for c in &conditions {
        rows.extend(collect(c.clone(), &|r| r.get(c).map(|x| x.map)));
    }
    let regimes: [(&str, fn(&ConditionResult) -> bool); 2] = [("seen", is_seen), ("unseen", is_unseen)];
    for (name, pred) in regimes {
        for &snr in &TEST_SNRS_DB {
            rows.extend(collect(format!("{name} avg {snr}dB"), &|r| {
                r.mean_map(|x| pred(x) && x.snr_db == Some(snr))
            }));
        }
        rows.extend(collect(format!("{name} avg"), &|r| r.mean_map(pred)));
    }
    Ok(Comparison { models, rows })
}

impl Comparison {
    /// Cells are `mean ± halfwidth` in percent when a model has several runs,
    /// otherwise the single value.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = write!(s, "{:<22}", "condition");
        for m in &self.models {
            let _ = write!(s, " {m:>16}");
        }
        s.push('\n');
        for row in &self.rows {
            let _ = write!(s, "{:<22}", row.label);
            for v in &row.values {
                let _ = write!(s, " {:>16}", format_cell(v));
            }
            s.push('\n');
        }
        s
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["condition".to_string()];
        for m in &self.models {
            header.push(format!("{m}_mean"));
            header.push(format!("{m}_ci95"));
            header.push(format!("{m}_runs"));
        }
        w.write_record(&header).map_err(|e| Error::format(e.to_string()))?;
        for row in &self.rows {
            let mut rec = vec![row.label.clone()];
            for v in &row.values {
                let (mean, hw) = mean_and_ci(v);
                rec.push(format!("{mean:.6}"));
                rec.push(hw.map_or_else(String::new, |h| format!("{h:.6}")));
                rec.push(v.len().to_string());
            }
            w.write_record(&rec).map_err(|e| Error::format(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::format(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::format(e.to_string()))
    }

    pub fn mean(&self, label: &str, model: &str) -> Option<f64> {
        let m = self.models.iter().position(|x| x == model)?;
        let row = self.rows.iter().find(|r| r.label == label)?;
        Some(mean_and_ci(&row.values[m]).0)
    }

    /// mAP against SNR, one panel per noise regime, one line per model.
    pub fn to_svg(&self) -> String {
        const W: f64 = 360.0;
        const H: f64 = 260.0;
        const PAD: f64 = 40.0;
        let colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
        let regimes = ["seen", "unseen"];
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" font-family="sans-serif" font-size="11">"#,
            W * regimes.len() as f64,
            H + 20.0 * self.models.len() as f64
        );
        let series = |regime: &str, m: usize| -> Vec<(i32, f64)> {
            TEST_SNRS_DB
                .iter()
                .filter_map(|&snr| {
                    let row = self.rows.iter().find(|r| r.label == format!("{regime} avg {snr}dB"))?;
                    Some((snr, mean_and_ci(&row.values[m]).0))
                })
                .collect()
        };
        let all: Vec<f64> = regimes
            .iter()
            .flat_map(|r| (0..self.models.len()).flat_map(move |m| series(r, m)))
            .map(|(_, v)| v)
            .collect();
        let lo = all.iter().copied().fold(1.0, f64::min).min(0.9);
        let hi = all.iter().copied().fold(0.0, f64::max).max(lo + 0.05);
        let (x0, x1) = (*TEST_SNRS_DB.first().unwrap() as f64, *TEST_SNRS_DB.last().unwrap() as f64);
        for (p, regime) in regimes.iter().enumerate() {
            let ox = p as f64 * W;
            let px = |snr: f64| ox + PAD + (snr - x0) / (x1 - x0) * (W - 2.0 * PAD);
            let py = |v: f64| H - PAD - (v - lo) / (hi - lo) * (H - 2.0 * PAD);
            let _ = writeln!(
                s,
                r#"<rect x="{}" y="{}" width="{}" height="{}" fill="none" stroke="gray"/>"#,
                ox + PAD,
                PAD,
                W - 2.0 * PAD,
                H - 2.0 * PAD
            );
            let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{regime} noise</text>"#, ox + W / 2.0, PAD - 10.0);
            for &snr in &TEST_SNRS_DB {
                let _ = writeln!(
                    s,
                    r#"<text x="{:.1}" y="{}" text-anchor="middle">{snr}</text>"#,
                    px(snr as f64),
                    H - PAD + 14.0
                );
            }
            let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">SNR (dB)</text>"#, ox + W / 2.0, H - 8.0);
            for k in 0..=4 {
                let v = lo + (hi - lo) * k as f64 / 4.0;
                let _ = writeln!(
                    s,
                    r#"<text x="{}" y="{:.1}" text-anchor="end">{:.1}</text>"#,
                    ox + PAD - 4.0,
                    py(v) + 4.0,
                    100.0 * v
                );
            }
            for m in 0..self.models.len() {
                let pts: Vec<String> = series(regime, m)
                    .iter()
                    .map(|&(snr, v)| format!("{:.1},{:.1}", px(snr as f64), py(v)))
                    .collect();
                if !pts.is_empty() {
                    let _ = writeln!(
                        s,
                        r#"<polyline fill="none" stroke="{}" stroke-width="2" points="{}"/>"#,
                        colors[m % colors.len()],
                        pts.join(" ")
                    );
                }
            }
        }
        for (m, name) in self.models.iter().enumerate() {
            let y = H + 14.0 + 20.0 * m as f64;
            let _ = writeln!(
                s,
                r#"<line x1="{PAD}" y1="{}" x2="{}" y2="{}" stroke="{}" stroke-width="2"/><text x="{}" y="{}">{name}</text>"#,
                y - 4.0,
                PAD + 20.0,
                y - 4.0,
                colors[m % colors.len()],
                PAD + 26.0,
                y
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

pub fn mean_and_ci(v: &[f64]) -> (f64, Option<f64>) {
    match ci95(v) {
        Ok((m, h)) => (m, Some(h)),
        Err(_) => (v.iter().sum::<f64>() / v.len().max(1) as f64, None),
    }
}

fn format_cell(v: &[f64]) -> String {
    match mean_and_ci(v) {
        (m, Some(h)) => format!("{:.1} ± {:.1}", 100.0 * m, 100.0 * h),
        (m, None) => format!("{:.1}", 100.0 * m),
    }
}
