use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::backtest::BacktestReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Ic,
    Icir,
    Ar,
    Ir,
    Mdd,
}

impl Metric {
    /// Value where higher is better. MDD is stored non-positive, so it
    /// already orders that way.
    pub fn of(self, r: &BacktestReport) -> Option<f64> {
        match self {
            Metric::Ic => r.ic,
            Metric::Icir => r.icir,
            Metric::Ar => r.ar,
            Metric::Ir => r.ir,
            Metric::Mdd => r.mdd,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub metric: Metric,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum ObjectiveSpec {
    Single(Metric),
    Weighted(Vec<Term>),
}

/// J: a weighted sum of validation metrics. Serialized as a bare metric
/// name when it has a single unit-weight term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ObjectiveSpec", into = "ObjectiveSpec")]
pub struct Objective {
    terms: Vec<Term>,
}

impl TryFrom<ObjectiveSpec> for Objective {
    type Error = String;

    fn try_from(s: ObjectiveSpec) -> Result<Self, String> {
        match s {
            ObjectiveSpec::Single(m) => Ok(Objective::single(m)),
            ObjectiveSpec::Weighted(terms) => Objective::weighted(terms),
        }
    }
}

impl From<Objective> for ObjectiveSpec {
    fn from(o: Objective) -> Self {
        match o.terms.as_slice() {
            [t] if t.weight == 1.0 => ObjectiveSpec::Single(t.metric),
            _ => ObjectiveSpec::Weighted(o.terms),
        }
    }
}

impl Default for Objective {
    fn default() -> Self {
        Objective::single(Metric::Ir)
    }
}

impl Objective {
    pub fn single(metric: Metric) -> Self {
        Objective { terms: vec![Term { metric, weight: 1.0 }] }
    }

    pub fn weighted(terms: Vec<Term>) -> Result<Self, String> {
        if terms.is_empty() {
            return Err("objective needs at least one term".into());
        }
        if let Some(t) = terms.iter().find(|t| !t.weight.is_finite()) {
            return Err(format!("weight for {:?} is not finite", t.metric));
        }
        Ok(Objective { terms })
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    /// `None` when any contributing metric is undefined.
    pub fn score(&self, r: &BacktestReport) -> Option<f64> {
        self.terms.iter().try_fold(0.0, |acc, t| Some(acc + t.weight * t.metric.of(r)?))
    }
}

/// A comparable (J, ICIR) pair; the ICIR only breaks ties.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standing {
    pub j: f64,
    pub icir: Option<f64>,
}

impl Standing {
    pub fn of(objective: &Objective, r: &BacktestReport) -> Option<Standing> {
        objective.score(r).map(|j| Standing { j, icir: r.icir })
    }

    /// Strict improvement in J alone.
    pub fn improves_on(&self, best: Option<&Standing>) -> bool {
        best.is_none_or(|b| self.j > b.j)
    }

    /// Ordering used for argmax selection: J, then ICIR. Equal standings keep
    /// the earlier entry.
    pub fn ranks_above(&self, other: &Standing) -> bool {
        match self.j.partial_cmp(&other.j) {
            Some(Ordering::Greater) => true,
            Some(Ordering::Equal) => self.icir.unwrap_or(f64::NEG_INFINITY) > other.icir.unwrap_or(f64::NEG_INFINITY),
            _ => false,
        }
    }
}

/// Index of the best standing; ties go to the earliest.
pub fn argmax(standings: impl IntoIterator<Item = Option<Standing>>) -> Option<usize> {
    let mut best: Option<(usize, Standing)> = None;
    for (i, s) in standings.into_iter().enumerate() {
        let Some(s) = s else { continue };
        if best.as_ref().is_none_or(|(_, b)| s.ranks_above(b)) {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i)
}
