use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetRecord, Ethnicity, Expression, Gender};
use crate::error::{Error, Result};

/// Age ranges, in years: lower bound inclusive, upper exclusive except for
/// the last range, which includes 60.
pub const AGE_RANGES: [(u32, u32); 6] = [(0, 10), (10, 20), (20, 30), (30, 40), (40, 50), (50, 60)];

pub fn age_bin(years: u32) -> Option<usize> {
    match years {
        60 => Some(AGE_RANGES.len() - 1),
        y => AGE_RANGES.iter().position(|&(lo, hi)| y >= lo && y < hi),
    }
}

pub fn age_label(bin: usize) -> String {
    let (lo, hi) = AGE_RANGES[bin];
    format!("{lo}-{hi}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Task {
    Gender,
    Age,
    AgeMale,
    AgeFemale,
    Expression,
    Ethnicity,
}

impl Task {
    pub const ALL: [Task; 6] = [
        Task::Gender,
        Task::Age,
        Task::AgeMale,
        Task::AgeFemale,
        Task::Expression,
        Task::Ethnicity,
    ];

    pub fn token(self) -> &'static str {
        match self {
            Task::Gender => "gender",
            Task::Age => "age",
            Task::AgeMale => "age-male",
            Task::AgeFemale => "age-female",
            Task::Expression => "expression",
            Task::Ethnicity => "ethnicity",
        }
    }

    /// Ordered output labels of the task's classifier.
    pub fn labels(self) -> Vec<String> {
        match self {
            Task::Gender => Gender::ALL.iter().map(|g| g.token().to_string()).collect(),
            Task::Age | Task::AgeMale | Task::AgeFemale => (0..AGE_RANGES.len()).map(age_label).collect(),
            Task::Expression => Expression::ALL.iter().map(|e| e.token().to_string()).collect(),
            Task::Ethnicity => Ethnicity::ALL.iter().map(|e| e.token().to_string()).collect(),
        }
    }

    pub fn is_age(self) -> bool {
        matches!(self, Task::Age | Task::AgeMale | Task::AgeFemale)
    }

    /// Gender partition an age head is restricted to.
    pub fn gender_partition(self) -> Option<Gender> {
        match self {
            Task::AgeMale => Some(Gender::Male),
            Task::AgeFemale => Some(Gender::Female),
            _ => None,
        }
    }

    /// Class index of a record for this task, `None` when unlabeled.
    pub fn class_of(self, record: &DatasetRecord) -> Result<Option<usize>> {
        Ok(match self {
            Task::Gender => record.gender.map(|g| g as usize),
            Task::Expression => record.expression.map(|e| e as usize),
            Task::Ethnicity => record.ethnicity.map(|e| e as usize),
            Task::Age | Task::AgeMale | Task::AgeFemale => match record.age_years {
                None => None,
                Some(years) => Some(age_bin(years).ok_or_else(|| {
                    Error::Label(format!(
                        "{}: age {years} lies outside the modelled 0-60 range",
                        record.image_path.display()
                    ))
                })?),
            },
        })
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Task::ALL
            .iter()
            .copied()
            .find(|t| t.token() == s)
            .ok_or_else(|| Error::UnknownToken {
                kind: "task",
                token: s.to_string(),
                allowed: Task::ALL.map(Task::token).join(", "),
            })
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn age_bins_are_lower_inclusive() {
        assert_eq!(age_bin(0), Some(0));
        assert_eq!(age_bin(9), Some(0));
        assert_eq!(age_bin(10), Some(1));
        assert_eq!(age_bin(29), Some(2));
        assert_eq!(age_bin(50), Some(5));
        assert_eq!(age_bin(60), Some(5));
        assert_eq!(age_bin(61), None);
        assert_eq!(age_label(2), "20-30");
    }

    #[test]
    fn label_sets() {
        assert_eq!(Task::Gender.labels(), ["male", "female"]);
        assert_eq!(
            Task::Expression.labels(),
            ["anger", "disgust", "fear", "happy", "sad", "surprise"]
        );
        assert_eq!(Task::Ethnicity.labels().len(), 4);
        assert_eq!(Task::AgeFemale.labels(), ["0-10", "10-20", "20-30", "30-40", "40-50", "50-60"]);
    }

    #[test]
    fn tokens_round_trip() {
        for t in Task::ALL {
            assert_eq!(t.token().parse::<Task>().unwrap(), t);
        }
        let err = "colour".parse::<Task>().unwrap_err().to_string();
        assert!(err.contains("age-male"));
    }
}
