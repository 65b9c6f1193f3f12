use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

use super::{ExecError, JobRecord};
use crate::requirements::Budget;

/// Points charged for one job: `elapsed_s x rate x gpus`, exact.
pub fn compute_points(elapsed_s: Decimal, gpus: u32, rate: Decimal) -> Result<Decimal, ExecError> {
    if elapsed_s.is_sign_negative() && !elapsed_s.is_zero() || rate.is_sign_negative() && !rate.is_zero() {
        return Err(ExecError::NegativeInput);
    }
    Ok(elapsed_s * rate * Decimal::from(gpus))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BudgetStatus {
    UnderMin,
    InRange,
    NearMax,
    Exceeded,
}

impl std::fmt::Display for BudgetStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::UnderMin => "under minimum",
            Self::InRange => "in range",
            Self::NearMax => "near maximum",
            Self::Exceeded => "exceeded",
        })
    }
}

/// Fraction of `max_points` where the caution band starts.
pub const NEAR_MAX_FRACTION: Decimal = Decimal::from_parts(9, 0, 0, false, 1);

pub fn budget_status(ledger: &BudgetLedger, budget: &Budget) -> BudgetStatus {
    status_for(ledger.spent_points, budget)
}

pub fn status_for(spent: Decimal, budget: &Budget) -> BudgetStatus {
    if spent > budget.max_points {
        BudgetStatus::Exceeded
    } else if spent >= NEAR_MAX_FRACTION * budget.max_points {
        BudgetStatus::NearMax
    } else if spent < budget.min_points {
        BudgetStatus::UnderMin
    } else {
        BudgetStatus::InRange
    }
}

/// Cumulative spend. `spent_points` is always the exact sum of charged jobs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct BudgetLedger {
    pub spent_points: Decimal,
    pub job_count: u64,
    pub thresholds: Budget,
}

impl BudgetLedger {
    pub fn new(thresholds: Budget) -> Self {
        Self { spent_points: Decimal::ZERO, job_count: 0, thresholds }
    }

    pub fn charge(&mut self, job: &JobRecord) {
        self.spent_points += job.points;
        self.job_count += 1;
    }

    pub fn status(&self) -> BudgetStatus {
        status_for(self.spent_points, &self.thresholds)
    }

    /// No headroom left: either over the limit or exactly at it.
    pub fn exhausted(&self) -> bool {
        self.spent_points >= self.thresholds.max_points
    }
}
