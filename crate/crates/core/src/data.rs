//! Claims, payments, CSV ingestion and censoring at a valuation date.
//!
//! All times live on one calendar axis measured in months (real-valued).
//! Each development stage is bounded by the maximum settlement duration ω:
//! the reporting delay `U = R - T` and every payment delay `V = W - R` lie in
//! `[0, ω]`, so a claim is fully developed `2ω` after its accident.

use std::collections::HashMap;
use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ReserveError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Claim {
    pub claim_id: String,
    pub accident_time: f64,
    pub reporting_time: f64,
    pub covariates: Vec<f64>,
}

impl Claim {
    pub fn reporting_delay(&self) -> f64 {
        self.reporting_time - self.accident_time
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Payment {
    pub claim_id: String,
    pub payment_time: f64,
    pub amount: f64,
}

/// A validated collection of claims and their payments.
#[derive(Debug, Clone, PartialEq)]
pub struct Portfolio {
    claims: Vec<Claim>,
    payments: Vec<Payment>,
    feature_names: Vec<String>,
    max_settlement: f64,
    payment_claim: Vec<usize>,
    complete: bool,
}

impl Portfolio {
    /// Validates referential and ordering invariants and indexes payments by claim.
    pub fn new(
        claims: Vec<Claim>,
        payments: Vec<Payment>,
        feature_names: Vec<String>,
        max_settlement: f64,
    ) -> Result<Self> {
        if !(max_settlement.is_finite() && max_settlement > 0.0) {
            return Err(ReserveError::InvalidPortfolio(format!(
                "maximum settlement must be positive, got {max_settlement}"
            )));
        }
        let mut index = HashMap::with_capacity(claims.len());
        for (row, claim) in claims.iter().enumerate() {
            validate_claim(claim, feature_names.len(), max_settlement).map_err(|m| {
                ReserveError::InvalidPortfolio(format!("claim row {}: {m}", row + 1))
            })?;
            if index.insert(claim.claim_id.as_str(), row).is_some() {
                return Err(ReserveError::InvalidPortfolio(format!(
                    "duplicate claim id `{}`",
                    claim.claim_id
                )));
            }
        }
        let mut payment_claim = Vec::with_capacity(payments.len());
        for (row, payment) in payments.iter().enumerate() {
            let Some(&c) = index.get(payment.claim_id.as_str()) else {
                return Err(ReserveError::UnknownClaim {
                    file: "<payments>".into(),
                    line: row as u64 + 1,
                    claim_id: payment.claim_id.clone(),
                });
            };
            validate_payment(payment, &claims[c], max_settlement).map_err(|m| {
                ReserveError::InvalidPortfolio(format!("payment row {}: {m}", row + 1))
            })?;
            payment_claim.push(c);
        }
        Ok(Portfolio {
            claims,
            payments,
            feature_names,
            max_settlement,
            payment_claim,
            complete: false,
        })
    }

    pub fn claims(&self) -> &[Claim] {
        &self.claims
    }

    pub fn payments(&self) -> &[Payment] {
        &self.payments
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    /// ω, the bound on each of the reporting and payment delays.
    pub fn max_settlement(&self) -> f64 {
        self.max_settlement
    }

    /// Row in [`Portfolio::claims`] of the claim that made payment `payment_row`.
    pub fn claim_of(&self, payment_row: usize) -> usize {
        self.payment_claim[payment_row]
    }

    pub fn total_amount(&self) -> f64 {
        self.payments.iter().map(|p| p.amount).sum()
    }

    /// Marks the portfolio as the full (uncensored) payment population, as
    /// produced by the simulator. Snapshots then report `n_total`.
    pub fn mark_complete(&mut self) {
        self.complete = true;
    }

    pub fn is_complete(&self) -> bool {
        self.complete
    }

    /// Z-scores every feature column that is not a 0/1 indicator, renaming it
    /// `<name>:std`. Returns the applied transform.
    pub fn standardize_continuous_features(&mut self) -> FeatureScaling {
        let k = self.n_features();
        let n = self.claims.len();
        let mut scaling = FeatureScaling {
            columns: Vec::new(),
            means: Vec::new(),
            std_devs: Vec::new(),
        };
        if n < 2 {
            return scaling;
        }
        for col in 0..k {
            let indicator = self
                .claims
                .iter()
                .all(|c| c.covariates[col] == 0.0 || c.covariates[col] == 1.0);
            if indicator {
                continue;
            }
            let mean = self.claims.iter().map(|c| c.covariates[col]).sum::<f64>() / n as f64;
            let var = self
                .claims
                .iter()
                .map(|c| (c.covariates[col] - mean).powi(2))
                .sum::<f64>()
                / (n - 1) as f64;
            let sd = var.sqrt();
            if sd == 0.0 {
                continue;
            }
            for c in &mut self.claims {
                c.covariates[col] = (c.covariates[col] - mean) / sd;
            }
            self.feature_names[col] = format!("{}:std", self.feature_names[col]);
            scaling.columns.push(col);
            scaling.means.push(mean);
            scaling.std_devs.push(sd);
        }
        scaling
    }
}

/// Record of the standardisation applied at ingestion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaling {
    pub columns: Vec<usize>,
    pub means: Vec<f64>,
    pub std_devs: Vec<f64>,
}

fn validate_claim(claim: &Claim, n_features: usize, omega: f64) -> Result<(), String> {
    let (t, r) = (claim.accident_time, claim.reporting_time);
    if !t.is_finite() || !r.is_finite() {
        return Err("non-finite time".into());
    }
    if r < t {
        return Err(format!("reporting time {r} precedes accident time {t}"));
    }
    if r - t > omega {
        return Err(format!(
            "reporting delay {} exceeds maximum settlement {omega}",
            r - t
        ));
    }
    if claim.covariates.len() != n_features {
        return Err(format!(
            "expected {n_features} covariates, found {}",
            claim.covariates.len()
        ));
    }
    if claim.covariates.iter().any(|x| !x.is_finite()) {
        return Err("non-finite covariate".into());
    }
    Ok(())
}

fn validate_payment(payment: &Payment, claim: &Claim, omega: f64) -> Result<(), String> {
    let w = payment.payment_time;
    if !w.is_finite() {
        return Err("non-finite payment time".into());
    }
    if !(payment.amount.is_finite() && payment.amount >= 0.0) {
        return Err(format!(
            "amount must be finite and non-negative, got {}",
            payment.amount
        ));
    }
    if w < claim.reporting_time {
        return Err(format!(
            "payment time {w} precedes reporting time {}",
            claim.reporting_time
        ));
    }
    if w - claim.reporting_time > omega {
        return Err(format!(
            "payment delay {} exceeds maximum settlement {omega}",
            w - claim.reporting_time
        ));
    }
    Ok(())
}

/// Reads `claims.csv` and `payments.csv`.
///
/// Claims header: `claim_id,accident_time,reporting_time,<feature_1>,...`.
/// Payments header: `claim_id,payment_time,amount`.
pub fn load_portfolio(
    claims_file: impl AsRef<Path>,
    payments_file: impl AsRef<Path>,
    max_settlement: f64,
) -> Result<Portfolio> {
    let claims_file = claims_file.as_ref();
    let payments_file = payments_file.as_ref();
    let (claims, feature_names) = read_claims(claims_file)?;

    let index: HashMap<&str, usize> = claims
        .iter()
        .enumerate()
        .map(|(i, c)| (c.claim_id.as_str(), i))
        .collect();
    let payments = read_payments(payments_file)?;
    let pname = payments_file.display().to_string();
    for (line, p) in &payments {
        let Some(&c) = index.get(p.claim_id.as_str()) else {
            return Err(ReserveError::UnknownClaim {
                file: pname,
                line: *line,
                claim_id: p.claim_id.clone(),
            });
        };
        if p.payment_time < claims[c].reporting_time {
            return Err(ReserveError::Malformed {
                file: pname,
                line: *line,
                message: format!(
                    "payment time {} precedes reporting time {}",
                    p.payment_time, claims[c].reporting_time
                ),
            });
        }
    }
    let payments = payments.into_iter().map(|(_, p)| p).collect();
    Portfolio::new(claims, payments, feature_names, max_settlement)
}

fn open_reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| ReserveError::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn parse_field(file: &str, line: u64, name: &str, raw: &str) -> Result<f64> {
    raw.parse::<f64>().map_err(|_| ReserveError::Malformed {
        file: file.to_string(),
        line,
        message: format!("column `{name}`: cannot parse `{raw}` as a number"),
    })
}

fn read_claims(path: &Path) -> Result<(Vec<Claim>, Vec<String>)> {
    let fname = path.display().to_string();
    let mut reader = open_reader(path)?;
    let headers = reader.headers()?.clone();
    let expected = ["claim_id", "accident_time", "reporting_time"];
    if headers.len() < 3 || headers.iter().take(3).ne(expected) {
        return Err(ReserveError::Malformed {
            file: fname,
            line: 1,
            message: format!("header must start with `{}`", expected.join(",")),
        });
    }
    let feature_names: Vec<String> = headers.iter().skip(3).map(str::to_string).collect();
    let mut claims = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| malformed_from_csv(&fname, e))?;
        let line = record.position().map_or(0, |p| p.line());
        let id = record[0].to_string();
        let accident_time = parse_field(&fname, line, "accident_time", &record[1])?;
        let reporting_time = parse_field(&fname, line, "reporting_time", &record[2])?;
        if reporting_time < accident_time {
            return Err(ReserveError::Malformed {
                file: fname,
                line,
                message: format!(
                    "reporting time {reporting_time} precedes accident time {accident_time}"
                ),
            });
        }
        let covariates = feature_names
            .iter()
            .enumerate()
            .map(|(k, name)| parse_field(&fname, line, name, &record[3 + k]))
            .collect::<Result<Vec<_>>>()?;
        claims.push(Claim {
            claim_id: id,
            accident_time,
            reporting_time,
            covariates,
        });
    }
    Ok((claims, feature_names))
}

fn read_payments(path: &Path) -> Result<Vec<(u64, Payment)>> {
    let fname = path.display().to_string();
    let mut reader = open_reader(path)?;
    let headers = reader.headers()?.clone();
    if headers.iter().ne(["claim_id", "payment_time", "amount"]) {
        return Err(ReserveError::Malformed {
            file: fname,
            line: 1,
            message: "header must be `claim_id,payment_time,amount`".into(),
        });
    }
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| malformed_from_csv(&fname, e))?;
        let line = record.position().map_or(0, |p| p.line());
        let payment_time = parse_field(&fname, line, "payment_time", &record[1])?;
        let amount = parse_field(&fname, line, "amount", &record[2])?;
        if !(amount.is_finite() && amount >= 0.0) {
            return Err(ReserveError::Malformed {
                file: fname,
                line,
                message: format!("amount must be non-negative, got {amount}"),
            });
        }
        out.push((
            line,
            Payment {
                claim_id: record[0].to_string(),
                payment_time,
                amount,
            },
        ));
    }
    Ok(out)
}

fn malformed_from_csv(file: &str, err: csv::Error) -> ReserveError {
    let line = err.position().map_or(0, |p| p.line());
    ReserveError::Malformed {
        file: file.to_string(),
        line,
        message: err.to_string(),
    }
}

/// Writes a portfolio back out in the ingestion schema.
pub fn write_portfolio(
    portfolio: &Portfolio,
    claims_file: impl AsRef<Path>,
    payments_file: impl AsRef<Path>,
) -> Result<()> {
    let claims_file = claims_file.as_ref();
    let mut w = csv::Writer::from_path(claims_file)?;
    let mut header = vec![
        "claim_id".to_string(),
        "accident_time".into(),
        "reporting_time".into(),
    ];
    header.extend(portfolio.feature_names().iter().cloned());
    w.write_record(&header)?;
    for c in portfolio.claims() {
        let mut row = vec![
            c.claim_id.clone(),
            crate::report::fmt_f64(c.accident_time),
            crate::report::fmt_f64(c.reporting_time),
        ];
        row.extend(c.covariates.iter().map(|&x| crate::report::fmt_f64(x)));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| ReserveError::io(claims_file, e))?;

    let payments_file = payments_file.as_ref();
    let mut w = csv::Writer::from_path(payments_file)?;
    w.write_record(["claim_id", "payment_time", "amount"])?;
    for p in portfolio.payments() {
        w.write_record([
            p.claim_id.clone(),
            crate::report::fmt_f64(p.payment_time),
            crate::report::fmt_f64(p.amount),
        ])?;
    }
    w.flush().map_err(|e| ReserveError::io(payments_file, e))?;
    Ok(())
}

/// A payment made on or before the valuation date, with its derived delays.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservedPayment {
    pub payment_row: usize,
    pub claim_row: usize,
    pub accident_time: f64,
    pub reporting_time: f64,
    pub payment_time: f64,
    pub amount: f64,
    /// U = R - T.
    pub reporting_delay: f64,
    /// V = W - R.
    pub payment_delay: f64,
    /// Z, stored as U + V so the decomposition is exact in floating point.
    pub total_delay: f64,
}

/// The portfolio as seen at valuation time τ.
#[derive(Debug, Clone)]
pub struct ObservedSnapshot<'a> {
    portfolio: &'a Portfolio,
    valuation_time: f64,
    payments: Vec<ObservedPayment>,
    reported_claims: Vec<usize>,
    membership: Vec<bool>,
}

/// Censors the portfolio at `valuation_time`. A payment at exactly τ is observed.
pub fn snapshot(portfolio: &Portfolio, valuation_time: f64) -> ObservedSnapshot<'_> {
    let membership: Vec<bool> = portfolio
        .payments()
        .iter()
        .map(|p| p.payment_time <= valuation_time)
        .collect();
    let payments = portfolio
        .payments()
        .iter()
        .enumerate()
        .filter(|(i, _)| membership[*i])
        .map(|(i, p)| {
            let c = portfolio.claim_of(i);
            let claim = &portfolio.claims()[c];
            let u = claim.reporting_time - claim.accident_time;
            let v = p.payment_time - claim.reporting_time;
            ObservedPayment {
                payment_row: i,
                claim_row: c,
                accident_time: claim.accident_time,
                reporting_time: claim.reporting_time,
                payment_time: p.payment_time,
                amount: p.amount,
                reporting_delay: u,
                payment_delay: v,
                total_delay: u + v,
            }
        })
        .collect();
    let reported_claims = portfolio
        .claims()
        .iter()
        .enumerate()
        .filter(|(_, c)| c.reporting_time <= valuation_time)
        .map(|(i, _)| i)
        .collect();
    ObservedSnapshot {
        portfolio,
        valuation_time,
        payments,
        reported_claims,
        membership,
    }
}

impl<'a> ObservedSnapshot<'a> {
    pub fn portfolio(&self) -> &'a Portfolio {
        self.portfolio
    }

    pub fn valuation_time(&self) -> f64 {
        self.valuation_time
    }

    pub fn payments(&self) -> &[ObservedPayment] {
        &self.payments
    }

    /// Rows of claims with R ≤ τ.
    pub fn reported_claims(&self) -> &[usize] {
        &self.reported_claims
    }

    /// Membership indicator per portfolio payment (1 if W ≤ τ).
    pub fn membership(&self) -> &[bool] {
        &self.membership
    }

    /// N^P(τ).
    pub fn n_paid(&self) -> usize {
        self.payments.len()
    }

    /// Population size N(τ), known only when the portfolio is a complete simulated population.
    pub fn n_total(&self) -> Option<usize> {
        self.portfolio.is_complete().then(|| {
            self.portfolio
                .payments()
                .iter()
                .enumerate()
                .filter(|(i, _)| {
                    self.portfolio.claims()[self.portfolio.claim_of(*i)].accident_time
                        <= self.valuation_time
                })
                .count()
        })
    }

    pub fn amounts(&self) -> Vec<f64> {
        self.payments.iter().map(|p| p.amount).collect()
    }

    /// Observed paid amount per claim row (zero for claims without observed payments).
    pub fn paid_by_claim(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.portfolio.claims().len()];
        for p in &self.payments {
            out[p.claim_row] += p.amount;
        }
        out
    }

    /// Restricts the snapshot to claims whose accident time is at least `from`
    /// (a rolling fitting window).
    pub fn restrict_accidents_from(&self, from: f64) -> ObservedSnapshot<'a> {
        let claims = self.portfolio.claims();
        ObservedSnapshot {
            portfolio: self.portfolio,
            valuation_time: self.valuation_time,
            payments: self
                .payments
                .iter()
                .filter(|p| p.accident_time >= from)
                .copied()
                .collect(),
            reported_claims: self
                .reported_claims
                .iter()
                .filter(|&&c| claims[c].accident_time >= from)
                .copied()
                .collect(),
            membership: self.membership.clone(),
        }
    }
}

/// L^P(τ): the amount paid by the valuation date.
pub fn paid_amount(snapshot: &ObservedSnapshot<'_>) -> f64 {
    snapshot.payments.iter().map(|p| p.amount).sum()
}
