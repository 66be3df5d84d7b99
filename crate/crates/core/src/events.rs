//! Conditioning events over covariate columns.
//!
//! Events have a canonical textual form used by the command line:
//! `all`, `gt:Z:1.5`, `lt:Z:-0.3`, `band:Z:0.4:0.1` (upper quantile, width)
//! and `rect:Z1:-1:1,Z2:0:2`.

use crate::error::{EccError, Result};
use crate::sample::Sample;
use crate::stats;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bound {
    pub column: String,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum EventSpec {
    /// The whole sample space.
    All,
    /// `column > threshold`.
    Above { column: String, threshold: f64 },
    /// `column < threshold`.
    Below { column: String, threshold: f64 },
    /// `Q(upper - width) <= column < Q(upper)` with empirical quantiles of the
    /// full sample; the band reaching `upper = 1` is closed on the right.
    QuantileBand { column: String, upper: f64, width: f64 },
    /// `lo <= column < hi` for every bound.
    Rectangle(Vec<Bound>),
}

/// A numeric interval on one column, with explicit endpoint closure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub column: usize,
    pub lo: f64,
    pub hi: f64,
    pub lo_closed: bool,
    pub hi_closed: bool,
}

impl Interval {
    pub fn contains(&self, v: f64) -> bool {
        let above = if self.lo_closed { v >= self.lo } else { v > self.lo };
        let below = if self.hi_closed { v <= self.hi } else { v < self.hi };
        above && below
    }
}

fn snap(p: f64) -> f64 {
    (p * 1e12).round() / 1e12
}

impl EventSpec {
    pub fn above(column: &str, threshold: f64) -> Self {
        EventSpec::Above {
            column: column.into(),
            threshold,
        }
    }

    pub fn below(column: &str, threshold: f64) -> Self {
        EventSpec::Below {
            column: column.into(),
            threshold,
        }
    }

    pub fn band(column: &str, upper: f64, width: f64) -> Result<Self> {
        let e = EventSpec::QuantileBand {
            column: column.into(),
            upper,
            width,
        };
        e.validate()?;
        Ok(e)
    }

    pub fn rectangle(bounds: Vec<Bound>) -> Result<Self> {
        let e = EventSpec::Rectangle(bounds);
        e.validate()?;
        Ok(e)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            EventSpec::QuantileBand { upper, width, .. } => {
                if !(*upper > 0.0 && *upper <= 1.0 + 1e-12) {
                    return Err(EccError::InvalidInput(format!(
                        "band upper quantile {upper} outside (0, 1]"
                    )));
                }
                if !(*width > 0.0 && *width <= upper + 1e-12) {
                    return Err(EccError::InvalidInput(format!(
                        "band width {width} outside (0, {upper}]"
                    )));
                }
            }
            EventSpec::Rectangle(bounds) => {
                if bounds.is_empty() {
                    return Err(EccError::InvalidInput("rectangle without bounds".into()));
                }
                if let Some(b) = bounds.iter().find(|b| !(b.lo < b.hi)) {
                    return Err(EccError::InvalidInput(format!(
                        "rectangle bound on '{}' needs lo < hi",
                        b.column
                    )));
                }
            }
            EventSpec::Above { threshold, .. } | EventSpec::Below { threshold, .. } => {
                if threshold.is_nan() {
                    return Err(EccError::InvalidInput("NaN threshold".into()));
                }
            }
            EventSpec::All => {}
        }
        Ok(())
    }

    /// Names of the columns the event reads.
    pub fn columns(&self) -> Vec<&str> {
        match self {
            EventSpec::All => vec![],
            EventSpec::Above { column, .. }
            | EventSpec::Below { column, .. }
            | EventSpec::QuantileBand { column, .. } => vec![column.as_str()],
            EventSpec::Rectangle(b) => b.iter().map(|b| b.column.as_str()).collect(),
        }
    }

    /// Resolves quantiles and column names against `sample`.
    pub fn resolve(&self, sample: &Sample) -> Result<Vec<Interval>> {
        self.validate()?;
        let idx = |name: &str| {
            sample
                .column_index(name)
                .ok_or_else(|| EccError::InvalidInput(format!("event column '{name}' not found")))
        };
        Ok(match self {
            EventSpec::All => vec![],
            EventSpec::Above { column, threshold } => vec![Interval {
                column: idx(column)?,
                lo: *threshold,
                hi: f64::INFINITY,
                lo_closed: false,
                hi_closed: true,
            }],
            EventSpec::Below { column, threshold } => vec![Interval {
                column: idx(column)?,
                lo: f64::NEG_INFINITY,
                hi: *threshold,
                lo_closed: true,
                hi_closed: false,
            }],
            EventSpec::QuantileBand {
                column,
                upper,
                width,
            } => {
                let c = idx(column)?;
                let mut sorted = sample.column(c).to_vec();
                sorted.sort_by(f64::total_cmp);
                let upper = snap(*upper);
                let lower = snap(upper - width).max(0.0);
                let last = upper >= 1.0;
                vec![Interval {
                    column: c,
                    lo: stats::quantile_sorted(&sorted, lower),
                    hi: stats::quantile_sorted(&sorted, upper),
                    lo_closed: true,
                    hi_closed: last,
                }]
            }
            EventSpec::Rectangle(bounds) => bounds
                .iter()
                .map(|b| {
                    Ok(Interval {
                        column: idx(&b.column)?,
                        lo: b.lo,
                        hi: b.hi,
                        lo_closed: true,
                        hi_closed: false,
                    })
                })
                .collect::<Result<_>>()?,
        })
    }

    /// Numeric intervals without reference to data; quantile bands have none.
    pub fn numeric_bounds(&self) -> Option<Vec<(String, f64, f64)>> {
        match self {
            EventSpec::All => Some(vec![]),
            EventSpec::Above { column, threshold } => {
                Some(vec![(column.clone(), *threshold, f64::INFINITY)])
            }
            EventSpec::Below { column, threshold } => {
                Some(vec![(column.clone(), f64::NEG_INFINITY, *threshold)])
            }
            EventSpec::QuantileBand { .. } => None,
            EventSpec::Rectangle(b) => Some(b.iter().map(|b| (b.column.clone(), b.lo, b.hi)).collect()),
        }
    }
}

pub fn mask_from_intervals(sample: &Sample, intervals: &[Interval]) -> Vec<bool> {
    (0..sample.n())
        .map(|r| intervals.iter().all(|iv| iv.contains(sample.column(iv.column)[r])))
        .collect()
}

/// Row-wise membership of `event`; errors when nothing is selected.
pub fn event_mask(sample: &Sample, event: &EventSpec) -> Result<Vec<bool>> {
    let intervals = event.resolve(sample)?;
    let mask = mask_from_intervals(sample, &intervals);
    if !mask.iter().any(|&m| m) {
        return Err(EccError::InsufficientEventSample {
            count: 0,
            required: 1,
        });
    }
    Ok(mask)
}

/// Contiguous quantile bands of the given width, indexed by upper quantile.
pub fn decile_sweep(column: &str, width: f64) -> Vec<(f64, EventSpec)> {
    let k = (1.0 / width).round() as usize;
    (1..=k)
        .map(|j| {
            let upper = snap(j as f64 * width).min(1.0);
            (
                upper,
                EventSpec::QuantileBand {
                    column: column.into(),
                    upper,
                    width,
                },
            )
        })
        .collect()
}

fn num(s: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| EccError::InvalidInput(format!("bad number '{s}' in event")))
}

impl FromStr for EventSpec {
    type Err = EccError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "all" {
            return Ok(EventSpec::All);
        }
        let (kind, rest) = s
            .split_once(':')
            .ok_or_else(|| EccError::InvalidInput(format!("malformed event '{s}'")))?;
        let parts: Vec<&str> = rest.split(':').collect();
        let event = match (kind, parts.as_slice()) {
            ("gt", [c, z]) => EventSpec::above(c, num(z)?),
            ("lt", [c, z]) => EventSpec::below(c, num(z)?),
            ("band", [c, i, w]) => EventSpec::QuantileBand {
                column: c.to_string(),
                upper: num(i)?,
                width: num(w)?,
            },
            ("rect", _) => {
                let bounds = rest
                    .split(',')
                    .map(|b| match b.split(':').collect::<Vec<_>>().as_slice() {
                        [c, lo, hi] => Ok(Bound {
                            column: c.to_string(),
                            lo: num(lo)?,
                            hi: num(hi)?,
                        }),
                        _ => Err(EccError::InvalidInput(format!("malformed rectangle bound '{b}'"))),
                    })
                    .collect::<Result<Vec<_>>>()?;
                EventSpec::Rectangle(bounds)
            }
            _ => return Err(EccError::InvalidInput(format!("malformed event '{s}'"))),
        };
        event.validate()?;
        Ok(event)
    }
}

impl fmt::Display for EventSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EventSpec::All => write!(f, "all"),
            EventSpec::Above { column, threshold } => write!(f, "gt:{column}:{threshold}"),
            EventSpec::Below { column, threshold } => write!(f, "lt:{column}:{threshold}"),
            EventSpec::QuantileBand {
                column,
                upper,
                width,
            } => write!(f, "band:{column}:{upper}:{width}"),
            EventSpec::Rectangle(b) => {
                let parts: Vec<String> = b
                    .iter()
                    .map(|b| format!("{}:{}:{}", b.column, b.lo, b.hi))
                    .collect();
                write!(f, "rect:{}", parts.join(","))
            }
        }
    }
}
