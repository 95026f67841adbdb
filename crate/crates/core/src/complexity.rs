//! Macro-operation cost model of the privatization step of SPOF and DP-SGD.

use num_rational::Ratio;
use serde::Serialize;

use crate::error::{Error, Result};

/// Macro-ops per primitive operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct OpCosts {
    pub add: u64,
    pub sub: u64,
    pub mul: u64,
    pub div: u64,
    pub not: u64,
    pub and: u64,
    pub or: u64,
}

/// Named cost profiles. The first entry is the default.
pub const PROFILES: &[(&str, OpCosts)] = &[
    ("amd-k7", OpCosts { add: 1, sub: 1, mul: 3, div: 32, not: 1, and: 1, or: 1 }),
    ("unit", OpCosts { add: 1, sub: 1, mul: 1, div: 1, not: 1, and: 1, or: 1 }),
];

/// Newton–Raphson iterations charged for one square root.
pub const SQRT_ITERATIONS: u64 = 7;

impl Default for OpCosts {
    fn default() -> Self {
        PROFILES[0].1
    }
}

impl OpCosts {
    pub fn profile(name: &str) -> Result<Self> {
        PROFILES
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, c)| *c)
            .ok_or_else(|| {
                let known: Vec<&str> = PROFILES.iter().map(|(n, _)| *n).collect();
                Error::Config(format!("unknown cost profile {name:?}; known: {}", known.join(", ")))
            })
    }

    /// Reading one pre-generated noise sample: two adds and a 2:1 multiplexer.
    pub fn noise_read(&self) -> u64 {
        2 * self.add + self.not + 2 * self.and + self.or
    }

    /// One `σ(a) − x` gradient term (the exponential is a table lookup, cost 0).
    pub fn grad_term(&self) -> u64 {
        self.add + self.sub + self.div
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LineItem {
    pub label: &'static str,
    pub cost: u64,
}

fn check_sizes(n: usize, l: usize) -> Result<()> {
    if n == 0 || l == 0 {
        return Err(Error::Config(format!("n and l must be >= 1, got n={n}, l={l}")));
    }
    Ok(())
}

pub fn spof_items(n: usize, l: usize, c: &OpCosts) -> Result<Vec<LineItem>> {
    check_sizes(n, l)?;
    let (n, l) = (n as u64, l as u64);
    Ok(vec![
        LineItem { label: "perturbation adds", cost: 2 * n * c.add },
        LineItem { label: "noise reads", cost: 2 * n * c.noise_read() },
        LineItem { label: "coefficient subs", cost: 2 * n * c.sub },
        LineItem { label: "coefficient muls", cost: n * c.mul },
        LineItem { label: "stabilization adds", cost: n * l * c.add },
    ])
}

pub fn dpsgd_items(n: usize, c: &OpCosts) -> Result<Vec<LineItem>> {
    check_sizes(n, 1)?;
    let n = n as u64;
    Ok(vec![
        LineItem { label: "perturbation adds", cost: n * c.add },
        LineItem { label: "noise reads", cost: n * c.noise_read() },
        LineItem { label: "clipping divisions", cost: (n + 1) * c.div },
        LineItem { label: "norm adds", cost: (n - 1) * c.add },
        LineItem { label: "norm squaring", cost: 2 * n * c.mul },
        LineItem { label: "square root", cost: SQRT_ITERATIONS * (c.add + c.mul + c.div) },
        LineItem { label: "gradient terms", cost: n * c.grad_term() },
    ])
}

fn total(items: &[LineItem]) -> u64 {
    items.iter().map(|i| i.cost).sum()
}

pub fn c_spof(n: usize, l: usize, costs: &OpCosts) -> Result<u64> {
    Ok(total(&spof_items(n, l, costs)?))
}

pub fn c_dpsgd(n: usize, costs: &OpCosts) -> Result<u64> {
    Ok(total(&dpsgd_items(n, costs)?))
}

/// `(19 + l) n` under the default profile.
pub fn c_spof_closed_form(n: u64, l: u64) -> u64 {
    (19 + l) * n
}

/// `80 n + 283` under the default profile.
pub fn c_dpsgd_closed_form(n: u64) -> u64 {
    80 * n + 283
}

/// Exact percentage `100 (c_dpsgd − c_spof) / c_dpsgd`.
pub fn reduction(n: usize, l: usize, costs: &OpCosts) -> Result<Ratio<i64>> {
    let s = c_spof(n, l, costs)? as i64;
    let d = c_dpsgd(n, costs)? as i64;
    Ok(Ratio::new(100 * (d - s), d))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComplexityReport {
    pub n: usize,
    pub l: usize,
    pub profile: String,
    pub c_spof: u64,
    pub c_dpsgd: u64,
    /// Exact reduction as `numerator/denominator` percent.
    pub reduction_exact: String,
    pub reduction_percent: f64,
}

impl ComplexityReport {
    pub fn compute(n: usize, l: usize, profile: &str) -> Result<Self> {
        let costs = OpCosts::profile(profile)?;
        let r = reduction(n, l, &costs)?;
        Ok(Self {
            n,
            l,
            profile: profile.to_string(),
            c_spof: c_spof(n, l, &costs)?,
            c_dpsgd: c_dpsgd(n, &costs)?,
            reduction_exact: format!("{}/{}", r.numer(), r.denom()),
            reduction_percent: *r.numer() as f64 / *r.denom() as f64,
        })
    }
}
