//! Confusion matrices, exact and asymptotic tests, Wald intervals and
//! pairwise agreement between prediction sets.
//!
//! `Yes` is the positive class. Confusion matrices are laid out with
//! predicted labels as rows and actual labels as columns:
//!
//! ```text
//!               actual Yes  actual No
//! predicted Yes     tp          fp
//! predicted No      fn          tn
//! ```

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::models::{ModelKind, PredictionSet};
use crate::{Error, Label, Result};

/// Relative slack when comparing hypergeometric point probabilities.
pub const FISHER_RELATIVE_SLACK: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TestConfig {
    pub alpha: f64,
    /// Discordant-pair count at and above which McNemar switches from the
    /// exact binomial test to continuity-corrected chi-squared.
    pub mcnemar_exact_cutoff: u64,
    pub z_for_ci: f64,
}

impl Default for TestConfig {
    fn default() -> Self {
        TestConfig {
            alpha: 0.05,
            mcnemar_exact_cutoff: 25,
            z_for_ci: 1.959964,
        }
    }
}

impl TestConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidArgument(format!("alpha {} outside (0, 1)", self.alpha)));
        }
        if !(self.z_for_ci > 0.0) {
            return Err(Error::InvalidArgument("z_for_ci must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConfusionMatrix2x2 {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionMatrix2x2 {
    pub fn new(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        ConfusionMatrix2x2 { tp, fp, fn_, tn }
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (Label, Label)>) -> Self {
        let mut cm = Self::default();
        for (pred, actual) in pairs {
            cm.add(pred, actual);
        }
        cm
    }

    pub fn add(&mut self, predicted: Label, actual: Label) {
        match (predicted, actual) {
            (Label::Yes, Label::Yes) => self.tp += 1,
            (Label::Yes, Label::No) => self.fp += 1,
            (Label::No, Label::Yes) => self.fn_ += 1,
            (Label::No, Label::No) => self.tn += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn accuracy(&self) -> Option<f64> {
        ratio(self.tp + self.tn, self.total())
    }

    /// Predicted and actual swapped.
    pub fn transpose(&self) -> Self {
        ConfusionMatrix2x2::new(self.tp, self.fn_, self.fp, self.tn)
    }

    /// Counts as fractions of the total, in `[tp, fp, fn, tn]` order.
    pub fn normalized(&self) -> Option<[f64; 4]> {
        let n = self.total();
        (n > 0).then(|| {
            let f = |x: u64| x as f64 / n as f64;
            [f(self.tp), f(self.fp), f(self.fn_), f(self.tn)]
        })
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Confusion matrix of `pred` against `truth`; both must cover the same ids.
pub fn confusion(
    pred: &BTreeMap<String, Label>,
    truth: &BTreeMap<String, Label>,
) -> Result<ConfusionMatrix2x2> {
    check_same_ids(pred, truth)?;
    Ok(ConfusionMatrix2x2::from_pairs(
        pred.iter().map(|(id, &p)| (p, truth[id])),
    ))
}

fn check_same_ids(a: &BTreeMap<String, Label>, b: &BTreeMap<String, Label>) -> Result<()> {
    if a.len() != b.len() || a.keys().zip(b.keys()).any(|(x, y)| x != y) {
        let only_a = a.keys().find(|k| !b.contains_key(*k));
        let only_b = b.keys().find(|k| !a.contains_key(*k));
        return Err(Error::IdMismatch(format!(
            "{} vs {} ids (first unmatched: {:?} / {:?})",
            a.len(),
            b.len(),
            only_a,
            only_b
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Precision {
    /// tp / (tp + fp); `None` when nothing was predicted Yes.
    pub yes: Option<f64>,
    /// tn / (tn + fn); `None` when nothing was predicted No.
    pub no: Option<f64>,
}

pub fn precision(cm: &ConfusionMatrix2x2) -> Precision {
    Precision {
        yes: ratio(cm.tp, cm.tp + cm.fp),
        no: ratio(cm.tn, cm.tn + cm.fn_),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestMethod {
    FisherExact,
    McNemarExact,
    McNemarChi2,
    WaldCi,
}

impl fmt::Display for TestMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TestMethod::FisherExact => "fisher_exact",
            TestMethod::McNemarExact => "mcnemar_exact",
            TestMethod::McNemarChi2 => "mcnemar_chi2",
            TestMethod::WaldCi => "wald_ci",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatTestResult {
    pub method: TestMethod,
    pub statistic: Option<f64>,
    pub p_value: Option<f64>,
    /// Echoed inputs and secondary outputs (counts, alpha, ci bounds).
    #[serde(default)]
    pub extras: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl StatTestResult {
    fn new(method: TestMethod) -> Self {
        StatTestResult {
            method,
            statistic: None,
            p_value: None,
            extras: BTreeMap::new(),
            notes: Vec::new(),
        }
    }

    fn extra(mut self, key: &str, value: f64) -> Self {
        self.extras.insert(key.to_string(), value);
        self
    }

    pub fn is_significant(&self, alpha: f64) -> bool {
        self.p_value.is_some_and(|p| p < alpha)
    }
}

fn ln_factorial(n: u64) -> f64 {
    libm::lgamma(n as f64 + 1.0)
}

fn ln_choose(n: u64, k: u64) -> f64 {
    ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k)
}

/// Two-sided Fisher exact test on the confusion matrix.
///
/// Sums the hypergeometric probabilities of every table with the observed
/// margins whose probability is at most the observed one (with a relative
/// slack of [`FISHER_RELATIVE_SLACK`]). Tables with an empty row or column
/// get p = 1.
pub fn fisher_exact(cm: &ConfusionMatrix2x2, config: &TestConfig) -> StatTestResult {
    let ConfusionMatrix2x2 { tp, fp, fn_, tn } = *cm;
    let (r1, r2, c1, c2) = (tp + fp, fn_ + tn, tp + fn_, fp + tn);
    let n = r1 + r2;
    let mut result = StatTestResult::new(TestMethod::FisherExact)
        .extra("tp", tp as f64)
        .extra("fp", fp as f64)
        .extra("fn", fn_ as f64)
        .extra("tn", tn as f64)
        .extra("alpha", config.alpha);
    if fp > 0 && fn_ > 0 {
        result.statistic = Some((tp as f64 * tn as f64) / (fp as f64 * fn_ as f64));
    }
    if r1 == 0 || r2 == 0 || c1 == 0 || c2 == 0 {
        result.p_value = Some(1.0);
        result.notes.push("degenerate margins: a row or column sums to zero".into());
        return result;
    }

    let denom = ln_choose(n, c1);
    let ln_p = |a: u64| ln_choose(r1, a) + ln_choose(r2, c1 - a) - denom;
    let observed = ln_p(tp);
    let cutoff = observed + FISHER_RELATIVE_SLACK.ln_1p();
    let lo = (r1 + c1).saturating_sub(n);
    let hi = r1.min(c1);
    let p: f64 = (lo..=hi)
        .map(ln_p)
        .filter(|&lp| lp <= cutoff)
        .map(f64::exp)
        .sum();
    result.p_value = Some(p.clamp(0.0, 1.0));
    result.extras.insert("table_probability".into(), observed.exp());
    result
}

/// Exact two-sided McNemar test from discordant counts:
/// `min(1, 2 * P(X <= min(b, c)))` with `X ~ Binomial(b + c, 1/2)`.
pub fn mcnemar_exact(b: u64, c: u64, config: &TestConfig) -> StatTestResult {
    let n = b + c;
    let mut result = mcnemar_base(TestMethod::McNemarExact, b, c, config);
    result.statistic = Some(b.min(c) as f64);
    if n == 0 {
        result.p_value = Some(1.0);
        return result;
    }
    let ln_half_n = -(n as f64) * std::f64::consts::LN_2;
    let tail: f64 = (0..=b.min(c))
        .map(|i| (ln_choose(n, i) + ln_half_n).exp())
        .sum();
    result.p_value = Some((2.0 * tail).min(1.0));
    result
}

/// Continuity-corrected McNemar chi-squared test (1 df).
///
/// The corrected difference `|b - c| - 1` is floored at zero so that equal
/// discordant counts give p = 1.
pub fn mcnemar_chi2(b: u64, c: u64, config: &TestConfig) -> StatTestResult {
    let n = b + c;
    let mut result = mcnemar_base(TestMethod::McNemarChi2, b, c, config);
    if n == 0 {
        result.statistic = Some(0.0);
        result.p_value = Some(1.0);
        return result;
    }
    let diff = (b.abs_diff(c) as f64 - 1.0).max(0.0);
    let chi2 = diff * diff / n as f64;
    result.statistic = Some(chi2);
    result.p_value = Some(chi2_1df_upper_tail(chi2));
    result
}

fn mcnemar_base(method: TestMethod, b: u64, c: u64, config: &TestConfig) -> StatTestResult {
    StatTestResult::new(method)
        .extra("b", b as f64)
        .extra("c", c as f64)
        .extra("alpha", config.alpha)
}

/// `P(X > x)` for a chi-squared variable with one degree of freedom.
pub fn chi2_1df_upper_tail(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    libm::erfc((x / 2.0).sqrt()).clamp(0.0, 1.0)
}

/// McNemar from discordant counts, exact below the configured cutoff.
pub fn mcnemar_counts(b: u64, c: u64, config: &TestConfig) -> StatTestResult {
    if b + c < config.mcnemar_exact_cutoff {
        mcnemar_exact(b, c, config)
    } else {
        mcnemar_chi2(b, c, config)
    }
}

/// Discordant counts between two paired labelings: `b` = a Yes / b No,
/// `c` = a No / b Yes.
pub fn discordant_counts(
    a: &BTreeMap<String, Label>,
    b: &BTreeMap<String, Label>,
) -> Result<(u64, u64)> {
    check_same_ids(a, b)?;
    let mut counts = (0, 0);
    for (id, &la) in a {
        match (la, b[id]) {
            (Label::Yes, Label::No) => counts.0 += 1,
            (Label::No, Label::Yes) => counts.1 += 1,
            _ => {}
        }
    }
    Ok(counts)
}

/// McNemar test between two labelings of the same ids.
pub fn mcnemar(
    a: &BTreeMap<String, Label>,
    b: &BTreeMap<String, Label>,
    config: &TestConfig,
) -> Result<StatTestResult> {
    let (x, y) = discordant_counts(a, b)?;
    Ok(mcnemar_counts(x, y, config))
}

/// Wald interval `p ± z * sqrt(p (1 - p) / n)`, clipped to [0, 1].
pub fn proportion_ci(successes: u64, n: u64, config: &TestConfig) -> Result<StatTestResult> {
    if n == 0 {
        return Err(Error::InvalidArgument("proportion over n = 0".into()));
    }
    if successes > n {
        return Err(Error::InvalidArgument(format!("{successes} successes out of {n}")));
    }
    let p = successes as f64 / n as f64;
    let half = config.z_for_ci * (p * (1.0 - p) / n as f64).sqrt();
    let mut result = StatTestResult::new(TestMethod::WaldCi)
        .extra("successes", successes as f64)
        .extra("n", n as f64)
        .extra("z", config.z_for_ci)
        .extra("p_hat", p)
        .extra("half_width", half)
        .extra("ci_low", (p - half).max(0.0))
        .extra("ci_high", (p + half).min(1.0));
    result.statistic = Some(p);
    result.notes.push(format!(
        "Wald half-width {:.2} percentage points at n = {n}; it shrinks as 1/sqrt(n), so \
         intervals computed over a different n (for example the full generated corpus rather \
         than the tagged sample) are not comparable",
        half * 100.0
    ));
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementCell {
    pub model_a: ModelKind,
    pub model_b: ModelKind,
    /// Fraction of ids on which both models give the same label.
    pub agreement: f64,
    pub mcnemar_p: f64,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementMatrix {
    pub models: Vec<ModelKind>,
    /// Row-major `models.len()` squared cells, diagonal included.
    pub cells: Vec<AgreementCell>,
}

impl AgreementMatrix {
    pub fn cell(&self, i: usize, j: usize) -> &AgreementCell {
        &self.cells[i * self.models.len() + j]
    }

    /// Unordered pairs `i < j`.
    pub fn pairs(&self) -> Vec<&AgreementCell> {
        let m = self.models.len();
        (0..m)
            .flat_map(|i| (i + 1..m).map(move |j| (i, j)))
            .map(|(i, j)| self.cell(i, j))
            .collect()
    }
}

/// Pairwise agreement and McNemar significance over prediction sets that
/// cover the same ids.
pub fn agreement_matrix(predictions: &[PredictionSet], config: &TestConfig) -> Result<AgreementMatrix> {
    if let Some(first) = predictions.first() {
        for p in &predictions[1..] {
            check_same_ids(&first.predictions, &p.predictions)
                .map_err(|e| Error::CoverageMismatch(format!("{} vs {}: {e}", first.model, p.model)))?;
        }
    }
    let m = predictions.len();
    let mut cells = Vec::with_capacity(m * m);
    for a in predictions {
        for b in predictions {
            let n = a.predictions.len();
            let matches = a
                .predictions
                .iter()
                .filter(|(id, l)| b.predictions[*id] == **l)
                .count();
            let test = mcnemar(&a.predictions, &b.predictions, config)?;
            let p = test.p_value.unwrap_or(1.0);
            cells.push(AgreementCell {
                model_a: a.model.clone(),
                model_b: b.model.clone(),
                agreement: if n == 0 { 1.0 } else { matches as f64 / n as f64 },
                mcnemar_p: p,
                significant: p < config.alpha,
            });
        }
    }
    Ok(AgreementMatrix {
        models: predictions.iter().map(|p| p.model.clone()).collect(),
        cells,
    })
}
