//! Claims reserving by inverse probability weighting.
//!
//! Every payment observed at the valuation date `τ` is weighted by the inverse
//! of its probability of having been observed. That probability factors into
//! a reporting part (the claim was reported by `τ`) and a payment part (the
//! payment fell before `τ` given the claim was reported), each modelled by a
//! piecewise-exponential hazard. The weighted sums give the outstanding
//! liability split into claims reported but not settled (RBNS) and claims
//! incurred but not reported (IBNR).

pub mod chain_ladder;
pub mod data;
pub mod error;
pub mod estimators;
pub mod hazard;
pub mod pipeline;
pub mod report;
pub mod simulator;

pub use data::{
    load_portfolio, paid_amount, snapshot, write_portfolio, Claim, ObservedPayment,
    ObservedSnapshot, Payment, Portfolio,
};
pub use error::{ReserveError, Result};
