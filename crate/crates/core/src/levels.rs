//! Length-level plans: a partition of caption lengths `[1, max]` into
//! contiguous ranges, one learned embedding per range.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LevelError {
    #[error("invalid level plan: {0}")]
    Invalid(String),
    #[error("length {length} outside plan range [1, {max}]")]
    LengthOutOfRange { length: usize, max: usize },
    #[error("level {level} not in plan with {count} levels")]
    UnknownLevel { level: usize, count: usize },
}

/// Inclusive length range `[low, high]` of one level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelRange {
    pub low: usize,
    pub high: usize,
}

impl LevelRange {
    pub fn contains(&self, length: usize) -> bool {
        (self.low..=self.high).contains(&length)
    }
}

/// Levels are addressed by zero-based index everywhere in the API; reports
/// print them one-based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct LengthLevelPlan {
    levels: Vec<LevelRange>,
}

impl<'de> Deserialize<'de> for LengthLevelPlan {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let ranges = Vec::<LevelRange>::deserialize(d)?;
        LengthLevelPlan::custom(ranges.into_iter().map(|r| (r.low, r.high)).collect())
            .map_err(serde::de::Error::custom)
    }
}

impl LengthLevelPlan {
    /// `[1,9] [10,14] [15,19] [20,25]`.
    pub fn four_level() -> Self {
        Self::custom(vec![(1, 9), (10, 14), (15, 19), (20, 25)]).expect("valid plan")
    }

    /// `[1,9] [10,13] [14,17] [18,21] [22,25]`.
    pub fn five_level() -> Self {
        Self::custom(vec![(1, 9), (10, 13), (14, 17), (18, 21), (22, 25)]).expect("valid plan")
    }

    /// One level covering `[1, max]`.
    pub fn single_level(max: usize) -> Self {
        Self::custom(vec![(1, max)]).expect("valid plan")
    }

    /// Validates contiguity from 1 with no gaps or overlaps.
    pub fn custom(ranges: Vec<(usize, usize)>) -> Result<Self, LevelError> {
        if ranges.is_empty() {
            return Err(LevelError::Invalid("plan has no levels".into()));
        }
        let mut problems = Vec::new();
        let mut expected_low = 1;
        for (i, &(low, high)) in ranges.iter().enumerate() {
            if low == 0 {
                problems.push(format!("level {} has zero lower bound", i + 1));
            }
            if low > high {
                problems.push(format!("level {} has low {low} > high {high}", i + 1));
            }
            if low != expected_low {
                let kind = if low > expected_low { "gap" } else { "overlap or disorder" };
                problems.push(format!("level {} starts at {low}, expected {expected_low} ({kind})", i + 1));
            }
            expected_low = high + 1;
        }
        if !problems.is_empty() {
            return Err(LevelError::Invalid(problems.join("; ")));
        }
        let levels = ranges.into_iter().map(|(low, high)| LevelRange { low, high }).collect();
        Ok(LengthLevelPlan { levels })
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn levels(&self) -> &[LevelRange] {
        &self.levels
    }

    pub fn max_length(&self) -> usize {
        self.levels.last().expect("non-empty").high
    }

    pub fn range(&self, level: usize) -> Result<LevelRange, LevelError> {
        self.levels
            .get(level)
            .copied()
            .ok_or(LevelError::UnknownLevel { level, count: self.levels.len() })
    }

    /// Zero-based index of the level containing `length`.
    pub fn assign_level(&self, length: usize) -> Result<usize, LevelError> {
        if length == 0 || length > self.max_length() {
            return Err(LevelError::LengthOutOfRange { length, max: self.max_length() });
        }
        Ok(self.levels.partition_point(|r| r.high < length))
    }

    /// Like [`assign_level`](Self::assign_level) but returns `None` instead of an
    /// error, e.g. for bucketing decoded lengths (which may be 0 or too long).
    pub fn bucket(&self, length: usize) -> Option<usize> {
        self.assign_level(length).ok()
    }
}

/// Accepts `4-level`, `5-level`, `single` (one level `[1,25]`) or explicit
/// ranges such as `1-9,10-14,15-19,20-25`.
impl std::str::FromStr for LengthLevelPlan {
    type Err = LevelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "4-level" | "4" => return Ok(Self::four_level()),
            "5-level" | "5" => return Ok(Self::five_level()),
            "single" | "1" => return Ok(Self::single_level(25)),
            _ => {}
        }
        let ranges = s
            .split(',')
            .map(|part| {
                let (lo, hi) = part.trim().split_once('-').ok_or_else(|| LevelError::Invalid(format!("range {part:?} is not LOW-HIGH")))?;
                let num = |x: &str| x.trim().parse::<usize>().map_err(|e| LevelError::Invalid(format!("{x:?}: {e}")));
                Ok((num(lo)?, num(hi)?))
            })
            .collect::<Result<Vec<_>, LevelError>>()?;
        Self::custom(ranges)
    }
}

impl std::fmt::Display for LengthLevelPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.levels.iter().map(|r| format!("{}-{}", r.low, r.high)).collect();
        f.write_str(&parts.join(","))
    }
}
