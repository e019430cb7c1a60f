//! Multiple imputation by chained equations (fully conditional
//! specification).
//!
//! Each of the M chains initializes missing cells with draws from the
//! observed marginal of the column, then sweeps the partially observed
//! columns in declaration order for a fixed number of cycles. Continuous
//! columns are refit with a Bayesian normal linear model (coefficients and
//! residual variance drawn from their posterior), binary columns with a
//! logistic model whose coefficients are drawn from the large-sample normal
//! posterior; imputations are then drawn from the corresponding predictive
//! distribution. Observed cells are never modified.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::numstat::{
    expit, fit_linear_bayes_draw, fit_logistic, logistic_posterior_draw, RngStream,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnKind {
    Continuous,
    Binary,
}

/// One variable: values with a per-cell missingness mask. Masked cells hold
/// NaN so that accidental use of a missing value poisons the result.
#[derive(Debug, Clone)]
pub struct Column {
    pub name: String,
    pub kind: ColumnKind,
    values: Vec<f64>,
    missing: Vec<bool>,
}

/// Bitwise value equality, so datasets compare equal cell-for-cell even
/// through the NaN sentinels on masked cells.
impl PartialEq for Column {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
            && self.kind == other.kind
            && self.missing == other.missing
            && self.values.len() == other.values.len()
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl Column {
    pub fn new(
        name: impl Into<String>,
        kind: ColumnKind,
        mut values: Vec<f64>,
        missing: Vec<bool>,
    ) -> Result<Self> {
        let name = name.into();
        if values.len() != missing.len() {
            return Err(Error::Parameter(format!(
                "column {name}: {} values but {} mask entries",
                values.len(),
                missing.len()
            )));
        }
        for i in 0..values.len() {
            if missing[i] {
                values[i] = f64::NAN;
            } else if !values[i].is_finite() {
                return Err(Error::Input(format!(
                    "column {name}: non-finite value at row {i} not marked missing"
                )));
            } else if kind == ColumnKind::Binary && values[i] != 0.0 && values[i] != 1.0 {
                return Err(Error::Input(format!(
                    "column {name}: binary value {} at row {i}",
                    values[i]
                )));
            }
        }
        Ok(Column {
            name,
            kind,
            values,
            missing,
        })
    }

    pub fn continuous(
        name: impl Into<String>,
        values: Vec<f64>,
        missing: Vec<bool>,
    ) -> Result<Self> {
        Column::new(name, ColumnKind::Continuous, values, missing)
    }

    pub fn binary(name: impl Into<String>, values: Vec<f64>, missing: Vec<bool>) -> Result<Self> {
        Column::new(name, ColumnKind::Binary, values, missing)
    }

    pub fn complete(name: impl Into<String>, kind: ColumnKind, values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        Column::new(name, kind, values, vec![false; n])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mask(&self) -> &[bool] {
        &self.missing
    }

    pub fn is_missing(&self, row: usize) -> bool {
        self.missing[row]
    }

    pub fn missing_count(&self) -> usize {
        self.missing.iter().filter(|&&m| m).count()
    }

    pub fn missing_rate(&self) -> f64 {
        if self.values.is_empty() {
            0.0
        } else {
            self.missing_count() as f64 / self.values.len() as f64
        }
    }

    pub fn fully_observed(&self) -> bool {
        self.missing_count() == 0
    }

    /// Values at observed rows, in row order.
    pub fn observed_values(&self) -> Vec<f64> {
        self.values
            .iter()
            .zip(&self.missing)
            .filter(|(_, &m)| !m)
            .map(|(&v, _)| v)
            .collect()
    }
}

/// Rectangular table of outcome, treatment and covariates with per-cell
/// missingness.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub y: Column,
    pub z: Column,
    pub covariates: Vec<Column>,
}

impl Dataset {
    pub fn new(y: Column, z: Column, covariates: Vec<Column>) -> Result<Self> {
        let n = y.len();
        if y.kind != ColumnKind::Binary || z.kind != ColumnKind::Binary {
            return Err(Error::Parameter(
                "outcome and treatment must be binary columns".into(),
            ));
        }
        if z.len() != n || covariates.iter().any(|c| c.len() != n) {
            return Err(Error::Parameter(
                "all columns must have the same length".into(),
            ));
        }
        let mut names: Vec<&str> = covariates.iter().map(|c| c.name.as_str()).collect();
        names.push(&y.name);
        names.push(&z.name);
        let mut sorted = names.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != names.len() {
            return Err(Error::Parameter("column names must be unique".into()));
        }
        Ok(Dataset { y, z, covariates })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn covariate(&self, name: &str) -> Option<&Column> {
        self.covariates.iter().find(|c| c.name == name)
    }

    /// True when no cell anywhere is missing.
    pub fn fully_observed(&self) -> bool {
        self.y.fully_observed()
            && self.z.fully_observed()
            && self.covariates.iter().all(|c| c.fully_observed())
    }

    /// Rows where the outcome, treatment and every covariate are observed.
    pub fn complete_rows(&self) -> Vec<usize> {
        (0..self.n())
            .filter(|&i| {
                !self.y.is_missing(i)
                    && !self.z.is_missing(i)
                    && self.covariates.iter().all(|c| !c.is_missing(i))
            })
            .collect()
    }

    /// Intercept-plus-covariates design over the given rows (all rows when
    /// `None`). Errors if any included cell is missing.
    pub fn design_matrix(&self, rows: Option<&[usize]>) -> Result<DMatrix<f64>> {
        let idx: Vec<usize> = match rows {
            Some(r) => r.to_vec(),
            None => (0..self.n()).collect(),
        };
        let p = self.covariates.len();
        let mut m = DMatrix::zeros(idx.len(), p + 1);
        for (out_row, &i) in idx.iter().enumerate() {
            m[(out_row, 0)] = 1.0;
            for (j, c) in self.covariates.iter().enumerate() {
                if c.is_missing(i) {
                    return Err(Error::Estimation(format!(
                        "design requires observed covariates; {} is missing at row {i}",
                        c.name
                    )));
                }
                m[(out_row, j + 1)] = c.values()[i];
            }
        }
        Ok(m)
    }

    /// Restrict every column to the given rows.
    pub fn subset(&self, rows: &[usize]) -> Result<Dataset> {
        let take = |c: &Column| -> Result<Column> {
            Column::new(
                c.name.clone(),
                c.kind,
                rows.iter().map(|&i| c.values()[i]).collect(),
                rows.iter().map(|&i| c.is_missing(i)).collect(),
            )
        };
        Dataset::new(
            take(&self.y)?,
            take(&self.z)?,
            self.covariates.iter().map(take).collect::<Result<_>>()?,
        )
    }
}

/// Per-column missing rates plus the table of distinct covariate
/// missingness patterns.
#[derive(Debug, Clone)]
pub struct MissingnessSummary {
    /// (column name, missing rate) for y, z, then covariates.
    pub rates: Vec<(String, f64)>,
    /// Distinct covariate masks (true = missing) with their row counts,
    /// sorted by descending count.
    pub patterns: Vec<(Vec<bool>, usize)>,
}

pub fn missingness_summary(dataset: &Dataset) -> MissingnessSummary {
    let mut rates = vec![
        (dataset.y.name.clone(), dataset.y.missing_rate()),
        (dataset.z.name.clone(), dataset.z.missing_rate()),
    ];
    for c in &dataset.covariates {
        rates.push((c.name.clone(), c.missing_rate()));
    }
    let mut counts: std::collections::BTreeMap<Vec<bool>, usize> =
        std::collections::BTreeMap::new();
    for i in 0..dataset.n() {
        let mask: Vec<bool> = dataset.covariates.iter().map(|c| c.is_missing(i)).collect();
        *counts.entry(mask).or_insert(0) += 1;
    }
    let mut patterns: Vec<(Vec<bool>, usize)> = counts.into_iter().collect();
    patterns.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    MissingnessSummary { rates, patterns }
}

/// Settings for the chained-equations engine.
#[derive(Debug, Clone)]
pub struct ImputationConfig {
    /// Number of imputed datasets.
    pub m: usize,
    /// Sweeps of the full visit order per chain.
    pub cycles: usize,
    /// Include the outcome as a predictor in every conditional model.
    pub include_outcome: bool,
    /// Predictive mean matching for continuous columns instead of normal
    /// draws (5 nearest donors).
    pub pmm: bool,
    pub stream: RngStream,
}

impl ImputationConfig {
    pub fn new(stream: RngStream) -> Self {
        ImputationConfig {
            m: 10,
            cycles: 10,
            include_outcome: true,
            pmm: false,
            stream,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.m < 2 {
            return Err(Error::Parameter("imputation needs M >= 2".into()));
        }
        if self.cycles == 0 {
            return Err(Error::Parameter(
                "imputation needs at least one cycle".into(),
            ));
        }
        Ok(())
    }
}

/// M completed copies of a dataset. Observed cells are identical across
/// copies; only originally missing cells differ.
#[derive(Debug, Clone)]
pub struct ImputationSet {
    pub completed: Vec<Dataset>,
    pub m: usize,
    pub include_outcome: bool,
}

/// Identifies a column being imputed within the working matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Target {
    Covariate(usize),
    Treatment,
    Outcome,
}

const SEPARATION_RETRIES: usize = 5;

/// Run chained equations, producing `config.m` completed datasets.
///
/// Visit order is the declaration order of the partially observed
/// covariates, then treatment, then outcome. Predictors for each target are
/// all other covariates plus the treatment, plus the outcome when
/// `include_outcome` is set (the outcome's own model always uses the rest).
pub fn impute(dataset: &Dataset, config: &ImputationConfig) -> Result<ImputationSet> {
    config.validate()?;
    let n = dataset.n();
    let p = dataset.covariates.len();

    let mut targets: Vec<Target> = Vec::new();
    for (j, c) in dataset.covariates.iter().enumerate() {
        if !c.fully_observed() {
            targets.push(Target::Covariate(j));
        }
    }
    if !dataset.z.fully_observed() {
        targets.push(Target::Treatment);
    }
    if !dataset.y.fully_observed() {
        targets.push(Target::Outcome);
    }

    if targets.is_empty() {
        return Ok(ImputationSet {
            completed: vec![dataset.clone(); config.m],
            m: config.m,
            include_outcome: config.include_outcome,
        });
    }

    // each partially observed column needs enough observed rows to fit its
    // conditional model: predictors + intercept + one residual df
    let max_predictors = p + 1; // other covariates + z + possibly y
    for t in &targets {
        let col = target_column(dataset, *t);
        let observed = n - col.missing_count();
        if observed < max_predictors + 2 {
            return Err(Error::Imputation(format!(
                "column {} has only {observed} observed rows; need at least {}",
                col.name,
                max_predictors + 2
            )));
        }
    }

    let mut completed = Vec::with_capacity(config.m);
    for k in 0..config.m {
        let mut rng = config.stream.substream(k as u64).rng();
        let chain = run_chain(dataset, config, &targets, &mut rng)
            .map_err(|e| Error::Imputation(format!("chain {k}: {e}")))?;
        completed.push(chain);
    }
    Ok(ImputationSet {
        completed,
        m: config.m,
        include_outcome: config.include_outcome,
    })
}

fn target_column(dataset: &Dataset, t: Target) -> &Column {
    match t {
        Target::Covariate(j) => &dataset.covariates[j],
        Target::Treatment => &dataset.z,
        Target::Outcome => &dataset.y,
    }
}

fn run_chain(
    dataset: &Dataset,
    config: &ImputationConfig,
    targets: &[Target],
    rng: &mut ChaCha12Rng,
) -> Result<Dataset> {
    let n = dataset.n();

    // working copies, initialized from the observed marginals
    let mut work: Vec<Vec<f64>> = Vec::new();
    let mut masks: Vec<&[bool]> = Vec::new();
    let mut kinds: Vec<ColumnKind> = Vec::new();
    for t in targets {
        let col = target_column(dataset, *t);
        let observed = col.observed_values();
        let mut vals = col.values().to_vec();
        for (i, v) in vals.iter_mut().enumerate() {
            if col.is_missing(i) {
                *v = observed[rng.gen_range(0..observed.len())];
            }
        }
        work.push(vals);
        masks.push(col.mask());
        kinds.push(col.kind);
    }

    let current = |work: &[Vec<f64>], t: Target| -> Vec<f64> {
        match targets.iter().position(|&u| u == t) {
            Some(slot) => work[slot].clone(),
            None => target_column(dataset, t).values().to_vec(),
        }
    };

    for _cycle in 0..config.cycles {
        for (slot, t) in targets.iter().enumerate() {
            // assemble predictors: everything except the target
            let mut pred_cols: Vec<Vec<f64>> = Vec::new();
            for j in 0..dataset.covariates.len() {
                if *t != Target::Covariate(j) {
                    pred_cols.push(current(&work, Target::Covariate(j)));
                }
            }
            if *t != Target::Treatment {
                pred_cols.push(current(&work, Target::Treatment));
            }
            if *t != Target::Outcome && config.include_outcome {
                pred_cols.push(current(&work, Target::Outcome));
            }

            let mask = masks[slot];
            let obs_rows: Vec<usize> = (0..n).filter(|&i| !mask[i]).collect();
            let mis_rows: Vec<usize> = (0..n).filter(|&i| mask[i]).collect();
            if mis_rows.is_empty() {
                continue;
            }

            let design_for = |rows: &[usize]| -> DMatrix<f64> {
                let mut m = DMatrix::zeros(rows.len(), pred_cols.len() + 1);
                for (r, &i) in rows.iter().enumerate() {
                    m[(r, 0)] = 1.0;
                    for (c, col) in pred_cols.iter().enumerate() {
                        m[(r, c + 1)] = col[i];
                    }
                }
                m
            };
            let x_obs = design_for(&obs_rows);
            let x_mis = design_for(&mis_rows);
            let y_obs: Vec<f64> = obs_rows.iter().map(|&i| work[slot][i]).collect();

            match kinds[slot] {
                ColumnKind::Continuous => {
                    let (beta, sigma) = fit_linear_bayes_draw(&x_obs, &y_obs, rng)?;
                    let pred_mis = &x_mis * &beta;
                    if config.pmm {
                        let pred_obs = &x_obs * &beta;
                        for (r, &i) in mis_rows.iter().enumerate() {
                            work[slot][i] = pmm_donor(pred_mis[r], &pred_obs, &y_obs, rng);
                        }
                    } else {
                        for (r, &i) in mis_rows.iter().enumerate() {
                            work[slot][i] =
                                pred_mis[r] + sigma * rng.sample::<f64, _>(StandardNormal);
                        }
                    }
                }
                ColumnKind::Binary => {
                    // separation can depend on the current imputed predictor
                    // values; re-initialize this column and retry a few times
                    let mut attempts = 0;
                    let alpha = loop {
                        match fit_logistic(&x_obs, &y_obs)
                            .and_then(|fit| logistic_posterior_draw(&fit, rng))
                        {
                            Ok(draw) => break draw,
                            Err(Error::Separation { .. }) if attempts < SEPARATION_RETRIES => {
                                attempts += 1;
                                let observed = target_column(dataset, *t).observed_values();
                                for &i in &mis_rows {
                                    work[slot][i] = observed[rng.gen_range(0..observed.len())];
                                }
                            }
                            Err(e) => {
                                return Err(Error::Imputation(format!(
                                    "conditional model for {} failed after {attempts} retries: {e}",
                                    target_column(dataset, *t).name
                                )))
                            }
                        }
                    };
                    let eta = &x_mis * &alpha;
                    for (r, &i) in mis_rows.iter().enumerate() {
                        let pr = expit(eta[r]);
                        work[slot][i] = if rng.gen::<f64>() < pr { 1.0 } else { 0.0 };
                    }
                }
            }
        }
    }

    // assemble the completed dataset (masks cleared on imputed columns)
    let finish = |t: Target, filled: Option<&Vec<f64>>| -> Result<Column> {
        let col = target_column(dataset, t);
        match filled {
            Some(values) => Column::new(col.name.clone(), col.kind, values.clone(), vec![false; n]),
            None => Ok(col.clone()),
        }
    };
    let slot_of = |t: Target| targets.iter().position(|&u| u == t);
    let y = finish(Target::Outcome, slot_of(Target::Outcome).map(|s| &work[s]))?;
    let z = finish(
        Target::Treatment,
        slot_of(Target::Treatment).map(|s| &work[s]),
    )?;
    let covariates = (0..dataset.covariates.len())
        .map(|j| {
            finish(
                Target::Covariate(j),
                slot_of(Target::Covariate(j)).map(|s| &work[s]),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(y, z, covariates)
}

/// Draw one donor among the 5 observed values whose predicted means are
/// closest to the target's predicted mean.
fn pmm_donor(
    pred: f64,
    pred_obs: &nalgebra::DVector<f64>,
    y_obs: &[f64],
    rng: &mut ChaCha12Rng,
) -> f64 {
    const DONORS: usize = 5;
    let mut dist: Vec<(f64, usize)> = pred_obs
        .iter()
        .enumerate()
        .map(|(i, &p)| ((p - pred).abs(), i))
        .collect();
    let k = DONORS.min(dist.len());
    dist.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0));
    let pick = rng.gen_range(0..k);
    y_obs[dist[pick].1]
}

/// Draw a Bernoulli value. Exposed for the generator.
pub(crate) fn bernoulli(rng: &mut ChaCha12Rng, p: f64) -> f64 {
    if rng.gen::<f64>() < p {
        1.0
    } else {
        0.0
    }
}
