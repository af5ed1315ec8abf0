//! Utterance- and system-level agreement between predicted and reference scores.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricError {
    #[error("no scores to evaluate")]
    EmptyInput,
    #[error("{predicted} predictions for {reference} references")]
    LengthMismatch { predicted: usize, reference: usize },
    #[error("correlation needs at least 2 points, got {0}")]
    TooFew(usize),
    #[error("correlation undefined: one side is constant")]
    ConstantInput,
    #[error("non-finite score")]
    NonFinite,
    #[error("no utterance carries a system id")]
    NoSystemIds,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KendallVariant {
    /// `(C - D) / (n (n - 1) / 2)`.
    TauA,
    /// `(C - D) / sqrt((C + D + T_x)(C + D + T_y))`.
    #[default]
    TauB,
}

impl std::str::FromStr for KendallVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tau-a" | "a" => Ok(Self::TauA),
            "tau-b" | "b" => Ok(Self::TauB),
            other => Err(format!("unknown Kendall variant `{other}` (tau-a|tau-b)")),
        }
    }
}

fn check<T: Scalar>(pred: &[T], reference: &[T]) -> Result<(), MetricError> {
    if pred.len() != reference.len() {
        return Err(MetricError::LengthMismatch {
            predicted: pred.len(),
            reference: reference.len(),
        });
    }
    if pred.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    if pred.iter().chain(reference).any(|v| !v.is_finite()) {
        return Err(MetricError::NonFinite);
    }
    Ok(())
}

fn check_corr<T: Scalar>(pred: &[T], reference: &[T]) -> Result<(), MetricError> {
    check(pred, reference)?;
    if pred.len() < 2 {
        return Err(MetricError::TooFew(pred.len()));
    }
    let constant = |v: &[T]| v.iter().all(|&x| x == v[0]);
    if constant(pred) || constant(reference) {
        return Err(MetricError::ConstantInput);
    }
    Ok(())
}

pub fn mse<T: Scalar>(pred: &[T], reference: &[T]) -> Result<T, MetricError> {
    check(pred, reference)?;
    let s: T = pred.iter().zip(reference).map(|(&p, &r)| (p - r) * (p - r)).sum();
    Ok(s / T::of_usize(pred.len()))
}

/// Linear correlation coefficient.
pub fn pearson<T: Scalar>(pred: &[T], reference: &[T]) -> Result<T, MetricError> {
    check_corr(pred, reference)?;
    let n = T::of_usize(pred.len());
    let mp = pred.iter().copied().sum::<T>() / n;
    let mr = reference.iter().copied().sum::<T>() / n;
    let (mut sxy, mut sxx, mut syy) = (T::zero(), T::zero(), T::zero());
    for (&p, &r) in pred.iter().zip(reference) {
        let (dp, dr) = (p - mp, r - mr);
        sxy = sxy + dp * dr;
        sxx = sxx + dp * dp;
        syy = syy + dr * dr;
    }
    let r = sxy / (sxx.sqrt() * syy.sqrt());
    Ok(r.max(-T::one()).min(T::one()))
}

/// 1-based ranks; tied values share the mean of the positions they occupy.
pub fn average_ranks<T: Scalar>(values: &[T]) -> Vec<T> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite scores"));
    let mut ranks = vec![T::zero(); values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        // positions i..=j (0-based) -> mean 1-based rank
        let rank = T::of((i + j) as f64 / 2.0 + 1.0);
        for &k in &idx[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman's rank correlation: Pearson correlation of average ranks.
pub fn spearman<T: Scalar>(pred: &[T], reference: &[T]) -> Result<T, MetricError> {
    check_corr(pred, reference)?;
    pearson(&average_ranks(pred), &average_ranks(reference))
}

/// Number of adjacent swaps a stable merge sort performs on `v`; sorts `v`.
fn count_inversions<T: Scalar>(v: &mut [T], buf: &mut Vec<T>) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = count_inversions(&mut v[..mid], buf) + count_inversions(&mut v[mid..], buf);
    buf.clear();
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if v[j] < v[i] {
            swaps += (mid - i) as u64;
            buf.push(v[j]);
            j += 1;
        } else {
            buf.push(v[i]);
            i += 1;
        }
    }
    buf.extend_from_slice(&v[i..mid]);
    buf.extend_from_slice(&v[j..n]);
    v.copy_from_slice(buf);
    swaps
}

/// Sum of `t (t - 1) / 2` over runs of equal adjacent values of a sorted sequence.
fn tied_pairs<T: PartialEq>(sorted: impl Iterator<Item = T>) -> u64 {
    let mut total = 0u64;
    let mut run = 0u64;
    let mut prev: Option<T> = None;
    for v in sorted {
        if prev.as_ref() == Some(&v) {
            run += 1;
        } else {
            total += run * (run + 1) / 2;
            run = 0;
        }
        prev = Some(v);
    }
    total + run * (run + 1) / 2
}

/// Kendall rank correlation in `O(n log n)` (Knight's merge-sort method).
pub fn kendall_tau<T: Scalar>(pred: &[T], reference: &[T], variant: KendallVariant) -> Result<T, MetricError> {
    check_corr(pred, reference)?;
    let n = pred.len() as u64;
    let mut pairs: Vec<(T, T)> = pred.iter().copied().zip(reference.iter().copied()).collect();
    pairs.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));

    let n0 = n * (n - 1) / 2;
    let tied_x = tied_pairs(pairs.iter().map(|p| p.0));
    let tied_xy = tied_pairs(pairs.iter().copied());
    let mut ys: Vec<T> = pairs.iter().map(|p| p.1).collect();
    let mut buf = Vec::with_capacity(ys.len());
    let swaps = count_inversions(&mut ys, &mut buf);
    let tied_y = tied_pairs(ys.iter().copied());

    // concordant - discordant
    let diff = n0 as f64 - tied_x as f64 - tied_y as f64 + tied_xy as f64 - 2.0 * swaps as f64;
    let tau = match variant {
        KendallVariant::TauA => diff / n0 as f64,
        KendallVariant::TauB => diff / (((n0 - tied_x) as f64) * ((n0 - tied_y) as f64)).sqrt(),
    };
    Ok(T::of(tau.clamp(-1.0, 1.0)))
}

/// One predicted/reference score pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorePair {
    pub utterance_id: String,
    pub system_id: Option<String>,
    pub predicted: f64,
    pub reference: f64,
}

/// Per-system means of predicted and reference scores, ordered by system id.
///
/// Pairs without a system id are skipped; the second value counts them.
pub fn system_level(pairs: &[ScorePair]) -> Result<(Vec<ScorePair>, usize), MetricError> {
    let mut groups: BTreeMap<&str, (f64, f64, usize)> = BTreeMap::new();
    let mut skipped = 0;
    for p in pairs {
        match &p.system_id {
            Some(s) => {
                let e = groups.entry(s.as_str()).or_insert((0.0, 0.0, 0));
                e.0 += p.predicted;
                e.1 += p.reference;
                e.2 += 1;
            }
            None => skipped += 1,
        }
    }
    if skipped > 0 {
        log::warn!("{skipped} utterance(s) without a system id left out of system-level metrics");
    }
    if groups.is_empty() {
        return Err(MetricError::NoSystemIds);
    }
    let systems = groups
        .into_iter()
        .map(|(s, (p, r, n))| ScorePair {
            utterance_id: s.to_string(),
            system_id: Some(s.to_string()),
            predicted: p / n as f64,
            reference: r / n as f64,
        })
        .collect();
    Ok((systems, skipped))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Utterance,
    System,
}

impl Level {
    pub fn tag(self) -> &'static str {
        match self {
            Level::Utterance => "U",
            Level::System => "S",
        }
    }
}

/// The four challenge metrics at one level. Correlations are `None` when undefined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub level: Level,
    pub n: usize,
    pub mse: f64,
    pub lcc: Option<f64>,
    pub srcc: Option<f64>,
    pub ktau: Option<f64>,
}

fn defined(r: Result<f64, MetricError>) -> Result<Option<f64>, MetricError> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(MetricError::ConstantInput | MetricError::TooFew(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

impl MetricReport {
    pub fn compute(level: Level, pairs: &[ScorePair], variant: KendallVariant) -> Result<Self, MetricError> {
        let pred: Vec<f64> = pairs.iter().map(|p| p.predicted).collect();
        let reference: Vec<f64> = pairs.iter().map(|p| p.reference).collect();
        Ok(Self {
            level,
            n: pairs.len(),
            mse: mse(&pred, &reference)?,
            lcc: defined(pearson(&pred, &reference))?,
            srcc: defined(spearman(&pred, &reference))?,
            ktau: defined(kendall_tau(&pred, &reference, variant))?,
        })
    }
}

/// Utterance-level report and, when any system ids exist, the system-level one.
pub fn evaluate(
    pairs: &[ScorePair],
    variant: KendallVariant,
) -> Result<(MetricReport, Option<MetricReport>), MetricError> {
    let utt = MetricReport::compute(Level::Utterance, pairs, variant)?;
    let sys = match system_level(pairs) {
        Ok((systems, _)) => Some(MetricReport::compute(Level::System, &systems, variant)?),
        Err(MetricError::NoSystemIds) => None,
        Err(e) => return Err(e),
    };
    Ok((utt, sys))
}

pub const REPORT_CSV_HEADER: &str = "level,n,mse,lcc,srcc,ktau";

/// One CSV row per report; undefined correlations are empty fields.
pub fn render_csv(reports: &[&MetricReport]) -> String {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut out = format!("{REPORT_CSV_HEADER}\n");
    for r in reports {
        let level = match r.level {
            Level::Utterance => "utterance",
            Level::System => "system",
        };
        let _ = writeln!(out, "{level},{},{},{},{},{}", r.n, r.mse, opt(r.lcc), opt(r.srcc), opt(r.ktau));
    }
    out
}

/// Table with metric rows (`MSE↓`, `LCC↑`, `SRCC↑`, `KTAU↑`) and one column per level.
pub fn render_table(reports: &[&MetricReport]) -> String {
    const LABEL_W: usize = 6;
    const COL_W: usize = 8;
    let cell = |v: Option<f64>| v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "n/a".into());
    let mut out = format!("{:<LABEL_W$}", "");
    for r in reports {
        let _ = write!(out, "{:>COL_W$}", r.level.tag());
    }
    out.push('\n');
    let rows: [(&str, fn(&MetricReport) -> Option<f64>); 4] = [
        ("MSE↓", |r| Some(r.mse)),
        ("LCC↑", |r| r.lcc),
        ("SRCC↑", |r| r.srcc),
        ("KTAU↑", |r| r.ktau),
    ];
    for (label, get) in rows {
        // labels carry one multi-byte arrow; pad by characters, not bytes
        let pad = LABEL_W.saturating_sub(label.chars().count());
        let _ = write!(out, "{label}{}", " ".repeat(pad));
        for r in reports {
            let _ = write!(out, "{:>COL_W$}", cell(get(r)));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_examples() {
        let r = [1.0, 2.0, 3.5];
        assert_eq!(mse(&r, &r).unwrap(), 0.0);
        let p: Vec<f64> = r.iter().map(|v| v + 0.5).collect();
        assert_eq!(mse(&p, &r).unwrap(), 0.25);
        assert_eq!(mse::<f64>(&[], &[]), Err(MetricError::EmptyInput));
        assert!(matches!(mse(&[1.0], &[1.0, 2.0]), Err(MetricError::LengthMismatch { .. })));
    }

    #[test]
    fn pearson_examples() {
        let r = [1.0, 2.5, 2.0, 4.0, 3.3];
        let p: Vec<f64> = r.iter().map(|v| 2.0 * v + 1.0).collect();
        assert!((pearson(&p, &r).unwrap() - 1.0).abs() < 1e-12);
        let n: Vec<f64> = r.iter().map(|v| -v).collect();
        assert!((pearson(&n, &r).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(pearson(&[3.0, 3.0, 3.0], &r[..3]), Err(MetricError::ConstantInput));
        assert_eq!(pearson(&[1.0], &[2.0]), Err(MetricError::TooFew(1)));
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[10.0, 20.0, 10.0, 30.0]), vec![1.5, 3.0, 1.5, 4.0]);
        assert_eq!(average_ranks(&[2.0, 2.0, 2.0]), vec![2.0, 2.0, 2.0]);
    }

    #[test]
    fn spearman_examples() {
        let r = [0.3, 1.0, -2.0, 5.0, 4.0];
        let p: Vec<f64> = r.iter().map(|v: &f64| v.powi(3) + 7.0).collect();
        assert!((spearman(&p, &r).unwrap() - 1.0).abs() < 1e-12);
        let q: Vec<f64> = r.iter().map(|v: &f64| (-v).exp()).collect();
        assert!((spearman(&q, &r).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn kendall_examples() {
        let x = [1.0f64, 2.0, 3.0, 4.0];
        assert_eq!(kendall_tau(&x, &x, KendallVariant::TauB).unwrap(), 1.0);
        // ranks (1,2,3) vs (1,3,2): one discordant pair out of three
        let t = kendall_tau(&[1.0f64, 2.0, 3.0], &[1.0, 3.0, 2.0], KendallVariant::TauB).unwrap();
        assert!((t - 1.0 / 3.0).abs() < 1e-15);
        let ta = kendall_tau(&[1.0f64, 2.0, 3.0], &[1.0, 3.0, 2.0], KendallVariant::TauA).unwrap();
        assert!((ta - 1.0 / 3.0).abs() < 1e-15);
        // ties lower tau-a but not tau-b for a perfect ordering
        let p = [1.0f64, 1.0, 2.0, 3.0];
        let r = [1.0, 1.0, 2.0, 3.0];
        assert_eq!(kendall_tau(&p, &r, KendallVariant::TauB).unwrap(), 1.0);
        assert!((kendall_tau(&p, &r, KendallVariant::TauA).unwrap() - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(kendall_tau(&[1.0, 1.0], &[1.0, 2.0], KendallVariant::TauB), Err(MetricError::ConstantInput));
    }

    fn pair(utt: &str, sys: Option<&str>, p: f64, r: f64) -> ScorePair {
        ScorePair {
            utterance_id: utt.into(),
            system_id: sys.map(Into::into),
            predicted: p,
            reference: r,
        }
    }

    #[test]
    fn system_means() {
        let pairs = vec![
            pair("a", Some("s1"), 2.0, 3.0),
            pair("b", Some("s2"), 4.0, 4.5),
            pair("c", Some("s1"), 3.0, 2.0),
            pair("d", Some("s2"), 5.0, 3.5),
            pair("e", None, 1.0, 1.0),
        ];
        let (sys, skipped) = system_level(&pairs).unwrap();
        assert_eq!(skipped, 1);
        assert_eq!(sys.len(), 2);
        assert_eq!((sys[0].predicted, sys[0].reference), (2.5, 2.5));
        assert_eq!((sys[1].predicted, sys[1].reference), (4.5, 4.0));
        assert_eq!(system_level(&pairs[4..]), Err(MetricError::NoSystemIds));
    }

    #[test]
    fn single_system_has_undefined_correlations() {
        let pairs = vec![pair("a", Some("s"), 2.0, 3.0), pair("b", Some("s"), 4.0, 1.0)];
        let (u, s) = evaluate(&pairs, KendallVariant::TauB).unwrap();
        assert_eq!(u.n, 2);
        let s = s.unwrap();
        assert_eq!(s.n, 1);
        assert_eq!((s.lcc, s.srcc, s.ktau), (None, None, None));
        assert_eq!(s.mse, 1.0);
    }

    #[test]
    fn table_layout() {
        let u = MetricReport { level: Level::Utterance, n: 4, mse: 0.25, lcc: Some(0.9), srcc: Some(0.8), ktau: Some(0.6667) };
        let s = MetricReport { level: Level::System, n: 2, mse: 0.0625, lcc: None, srcc: Some(1.0), ktau: Some(1.0) };
        let expected = "             U       S\n\
                        MSE↓     0.250   0.062\n\
                        LCC↑     0.900     n/a\n\
                        SRCC↑    0.800   1.000\n\
                        KTAU↑    0.667   1.000\n";
        assert_eq!(render_table(&[&u, &s]), expected);
        assert_eq!(
            render_csv(&[&u, &s]),
            "level,n,mse,lcc,srcc,ktau\nutterance,4,0.25,0.9,0.8,0.6667\nsystem,2,0.0625,,1,1\n"
        );
    }
}
