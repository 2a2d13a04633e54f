//! Reconstruction evaluation: per-feature Pearson correlation, threshold
//! curves, and the differential-methylation direction check.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::data::{Cohort, Modality};
use crate::error::{Error, Result};
use crate::model::Morpheus;
use crate::tensor::Tensor;

/// Sample Pearson r per column. `None` marks a column that is constant or
/// non-finite in either argument.
pub fn pearson_per_feature(pred: &Tensor, truth: &Tensor) -> Result<Vec<Option<f64>>> {
    if pred.shape() != truth.shape() {
        return Err(Error::Shape(format!(
            "prediction {:?} vs truth {:?}",
            pred.shape(),
            truth.shape()
        )));
    }
    let n = pred.rows();
    if n < 3 {
        return Err(Error::validation(format!("Pearson needs at least 3 patients, got {n}")));
    }
    Ok((0..pred.cols())
        .map(|j| {
            let x: Vec<f64> = (0..n).map(|i| pred.get(i, j)).collect();
            let y: Vec<f64> = (0..n).map(|i| truth.get(i, j)).collect();
            pearson(&x, &y)
        })
        .collect())
}

pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 || x.iter().chain(y).any(|v| !v.is_finite()) {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Median of the defined entries, `None` if there are none.
pub fn median(values: &[Option<f64>]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().flatten().copied().collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// `0.0, 0.05, ..., 1.0`.
pub fn default_grid() -> Vec<f64> {
    (0..=20).map(|i| i as f64 / 20.0).collect()
}

/// Number of defined correlations `>= t` for each `t` in `grid`.
pub fn threshold_curve(r: &[Option<f64>], grid: &[f64]) -> Vec<usize> {
    grid.iter()
        .map(|&t| r.iter().flatten().filter(|&&v| v >= t).count())
        .collect()
}

/// Features whose group means differ under Welch's two-sample t-test at
/// level `alpha`. Columns of `a` and `b` are features.
pub fn significant_features(a: &Tensor, b: &Tensor, alpha: f64) -> Result<Vec<usize>> {
    if a.cols() != b.cols() {
        return Err(Error::Shape(format!("{} vs {} features", a.cols(), b.cols())));
    }
    if a.rows() < 2 || b.rows() < 2 {
        return Err(Error::validation("Welch test needs at least 2 samples per group"));
    }
    Ok((0..a.cols())
        .filter(|&j| {
            let x: Vec<f64> = (0..a.rows()).map(|i| a.get(i, j)).collect();
            let y: Vec<f64> = (0..b.rows()).map(|i| b.get(i, j)).collect();
            welch_p_value(&x, &y) < alpha
        })
        .collect())
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    (m, x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0))
}

/// Two-sided Welch p-value.
pub fn welch_p_value(x: &[f64], y: &[f64]) -> f64 {
    let (mx, vx) = mean_var(x);
    let (my, vy) = mean_var(y);
    let (sx, sy) = (vx / x.len() as f64, vy / y.len() as f64);
    let se2 = sx + sy;
    if se2 == 0.0 {
        return if mx == my { 1.0 } else { 0.0 };
    }
    let t = (mx - my) / se2.sqrt();
    let df = se2 * se2 / (sx * sx / (x.len() as f64 - 1.0) + sy * sy / (y.len() as f64 - 1.0));
    match StudentsT::new(0.0, 1.0, df) {
        Ok(dist) => 2.0 * dist.sf(t.abs()),
        Err(_) => f64::NAN,
    }
}

fn column_means(t: &Tensor) -> Vec<f64> {
    t.column_means()
}

/// Percentage of `significant` features on which the predicted A−B mean
/// difference has the sign of the true difference. A zero predicted
/// difference counts as wrong.
pub fn direction_accuracy(
    pred_a: &Tensor,
    pred_b: &Tensor,
    true_a: &Tensor,
    true_b: &Tensor,
    significant: &[usize],
) -> Result<f64> {
    if significant.is_empty() {
        return Err(Error::Undefined("no significant features".into()));
    }
    if [pred_a, pred_b, true_a, true_b].iter().any(|t| t.rows() == 0) {
        return Err(Error::validation("direction accuracy needs non-empty groups"));
    }
    let cols = true_a.cols();
    if [pred_a.cols(), pred_b.cols(), true_b.cols()].iter().any(|&c| c != cols) {
        return Err(Error::Shape("group feature counts differ".into()));
    }
    let (pa, pb, ta, tb) = (
        column_means(pred_a),
        column_means(pred_b),
        column_means(true_a),
        column_means(true_b),
    );
    let mut correct = 0usize;
    for &j in significant {
        if j >= cols {
            return Err(Error::Shape(format!("feature {j} out of range {cols}")));
        }
        let p = sign(pa[j] - pb[j]);
        if p != 0 && p == sign(ta[j] - tb[j]) {
            correct += 1;
        }
    }
    Ok(100.0 * correct as f64 / significant.len() as f64)
}

fn sign(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

/// One generation scenario: reconstruct `target` from the patches plus the
/// `inputs` omics.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Combo {
    pub inputs: Vec<Modality>,
    pub target: Modality,
}

impl Combo {
    pub fn new(inputs: &[Modality], target: Modality) -> Self {
        let mut inputs = inputs.to_vec();
        inputs.sort();
        inputs.dedup();
        Self { inputs, target }
    }

    /// Every `WSI → o` and `WSI + o' → o` combination over `modalities`.
    pub fn standard(modalities: &[Modality]) -> Vec<Combo> {
        let mut out = Vec::new();
        for &t in modalities {
            out.push(Combo::new(&[], t));
            for &i in modalities {
                if i != t {
                    out.push(Combo::new(&[i], t));
                }
            }
        }
        out
    }
}

impl fmt::Display for Combo {
    /// `wsi+rna->dnam`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "wsi")?;
        for m in &self.inputs {
            write!(f, "+{m}")?;
        }
        write!(f, "->{}", self.target)
    }
}

impl std::str::FromStr for Combo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::config("combos", format!("cannot parse combo `{s}`; expected e.g. `wsi+rna->dnam`"));
        let (lhs, rhs) = s.split_once("->").ok_or_else(bad)?;
        let target: Modality = rhs.trim().parse().map_err(|_| bad())?;
        let mut inputs = Vec::new();
        for part in lhs.split('+').map(str::trim) {
            if part.eq_ignore_ascii_case("wsi") {
                continue;
            }
            inputs.push(part.parse::<Modality>().map_err(|_| bad())?);
        }
        if inputs.contains(&target) {
            return Err(Error::config("combos", format!("`{s}` lists its target as an input")));
        }
        Ok(Combo::new(&inputs, target))
    }
}

impl TryFrom<String> for Combo {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Combo> for String {
    fn from(c: Combo) -> String {
        c.to_string()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReconReport {
    pub combo: String,
    pub target: Modality,
    pub pearson: Vec<Option<f64>>,
    pub median: Option<f64>,
    pub grid: Vec<f64>,
    pub curve: Vec<usize>,
    /// Features with an undefined correlation.
    pub excluded: Vec<usize>,
}

impl ReconReport {
    pub fn from_pearson(combo: &Combo, pearson: Vec<Option<f64>>, grid: &[f64]) -> Self {
        Self {
            combo: combo.to_string(),
            target: combo.target,
            median: median(&pearson),
            curve: threshold_curve(&pearson, grid),
            grid: grid.to_vec(),
            excluded: pearson
                .iter()
                .enumerate()
                .filter(|(_, r)| r.is_none())
                .map(|(i, _)| i)
                .collect(),
            pearson,
        }
    }
}

/// Reconstructions of `combo.target` for every patient in `patients`, as a
/// `patients × features` matrix.
pub fn reconstruct(model: &Morpheus, cohort: &Cohort, patients: &[usize], combo: &Combo) -> Result<Tensor> {
    let run = |&i: &usize| -> Result<Vec<f64>> {
        let record = &cohort.patients[i];
        let mut out = model.generate(record, &combo.inputs, &[combo.target])?;
        Ok(out.pop().map(|(_, v)| v).unwrap_or_default())
    };
    let rows = crate::parallel::try_map(patients, run)?;
    Tensor::from_rows(&rows)
}

fn truth_matrix(cohort: &Cohort, patients: &[usize], target: Modality) -> Result<Tensor> {
    let rows = patients
        .iter()
        .map(|&i| {
            let r = &cohort.patients[i];
            r.omics(target)
                .map(|p| p.values.clone())
                .ok_or_else(|| Error::patient(&r.id, target.name(), "target modality missing"))
        })
        .collect::<Result<Vec<_>>>()?;
    Tensor::from_rows(&rows)
}

/// One combo's predictions, ground truth and scores, rows in `patients` order.
#[derive(Clone, Debug)]
pub struct ComboOutput {
    pub predicted: Tensor,
    pub truth: Tensor,
    pub report: ReconReport,
}

fn check_combos(model: &Morpheus, cohort: &Cohort, patients: &[usize], combos: &[Combo]) -> Result<()> {
    for c in combos {
        for &m in c.inputs.iter().chain([&c.target]) {
            if model.scheme(m).is_none() || cohort.scheme(m).is_none() {
                return Err(Error::config("combos", format!("combo {c} needs {m}, which is unavailable")));
            }
        }
        for &i in patients {
            let r = &cohort.patients[i];
            if let Some(m) = c.inputs.iter().chain([&c.target]).find(|m| !r.has(**m)) {
                return Err(Error::patient(&r.id, m.name(), format!("required by combo {c}")));
            }
        }
    }
    Ok(())
}

/// Generate and score every combo on the `patients` of `cohort`, keeping
/// the reconstructed profiles.
pub fn generate_combinations(
    model: &Morpheus,
    cohort: &Cohort,
    patients: &[usize],
    combos: &[Combo],
    grid: &[f64],
) -> Result<Vec<ComboOutput>> {
    check_combos(model, cohort, patients, combos)?;
    combos
        .iter()
        .map(|c| {
            let predicted = reconstruct(model, cohort, patients, c)?;
            let truth = truth_matrix(cohort, patients, c.target)?;
            let report = ReconReport::from_pearson(c, pearson_per_feature(&predicted, &truth)?, grid);
            Ok(ComboOutput { predicted, truth, report })
        })
        .collect()
}

/// Generate and score every combo on the `patients` of `cohort`.
pub fn evaluate_combinations(
    model: &Morpheus,
    cohort: &Cohort,
    patients: &[usize],
    combos: &[Combo],
    grid: &[f64],
) -> Result<Vec<ReconReport>> {
    Ok(generate_combinations(model, cohort, patients, combos, grid)?
        .into_iter()
        .map(|o| o.report)
        .collect())
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format {
            path: path.to_path_buf(),
            message: format!("{other:?}"),
        },
    }
}

fn fmt_r(r: Option<f64>) -> String {
    r.map_or_else(|| "NA".to_string(), |v| format!("{v}"))
}

/// Write `{combo}.csv` (feature_id, r), `{combo}.curve.txt` (t, count) per
/// report and `summary.csv` into `dir`. Returns the written paths.
pub fn write_reports(dir: &Path, reports: &[ReconReport], feature_names: &dyn Fn(Modality, usize) -> String) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for rep in reports {
        let stem = rep.combo.replace("->", "_to_");
        let path = dir.join(format!("{stem}.csv"));
        let mut w = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
        w.write_record(["feature_id", "r"]).map_err(csv_err(&path))?;
        for (j, r) in rep.pearson.iter().enumerate() {
            w.write_record([feature_names(rep.target, j), fmt_r(*r)]).map_err(csv_err(&path))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        written.push(path);

        let path = dir.join(format!("{stem}.curve.txt"));
        let text: String = rep
            .grid
            .iter()
            .zip(&rep.curve)
            .map(|(t, c)| format!("{t}\t{c}\n"))
            .collect();
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    let path = dir.join("summary.csv");
    let mut w = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
    let grid = reports.first().map(|r| r.grid.clone()).unwrap_or_else(default_grid);
    let mut header = vec!["combo".to_string(), "median".to_string(), "excluded".to_string()];
    header.extend(grid.iter().map(|t| format!("r>={t}")));
    w.write_record(&header).map_err(csv_err(&path))?;
    for rep in reports {
        let mut row = vec![rep.combo.clone(), fmt_r(rep.median), rep.excluded.len().to_string()];
        row.extend(rep.curve.iter().map(usize::to_string));
        w.write_record(&row).map_err(csv_err(&path))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(written)
}
