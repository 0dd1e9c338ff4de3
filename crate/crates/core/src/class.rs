use core::fmt;
use core::str::FromStr;

use crate::Error;

/// The four obstacle height classes.
///
/// Bounds are half-open: `Lowest` is below 0.10 m, `Low` covers
/// [0.10, 0.30), `High` covers [0.30, 0.50) and `Highest` is 0.50 m and up.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum HeightClass {
    Lowest,
    Low,
    High,
    Highest,
}

impl HeightClass {
    pub const COUNT: usize = 4;
    pub const ALL: [HeightClass; 4] = [Self::Lowest, Self::Low, Self::High, Self::Highest];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Lowest => "lowest",
            Self::Low => "low",
            Self::High => "high",
            Self::Highest => "highest",
        }
    }

    /// Height bounds in meters as `[lower, upper)`; `upper` is infinite for `Highest`.
    pub fn bounds_m(self) -> (f64, f64) {
        match self {
            Self::Lowest => (0.0, 0.10),
            Self::Low => (0.10, 0.30),
            Self::High => (0.30, 0.50),
            Self::Highest => (0.50, f64::INFINITY),
        }
    }

    pub fn from_height(height_m: f64) -> Option<Self> {
        if !(height_m >= 0.0) {
            return None;
        }
        Self::ALL.into_iter().find(|c| {
            let (lo, hi) = c.bounds_m();
            height_m >= lo && height_m < hi
        })
    }
}

impl fmt::Display for HeightClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for HeightClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Argument(alloc::format!("unknown height class {s:?}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn class_boundaries() {
        assert_eq!(HeightClass::from_height(0.0999), Some(HeightClass::Lowest));
        assert_eq!(HeightClass::from_height(0.10), Some(HeightClass::Low));
        assert_eq!(HeightClass::from_height(0.30), Some(HeightClass::High));
        assert_eq!(HeightClass::from_height(0.50), Some(HeightClass::Highest));
        assert_eq!(HeightClass::from_height(-0.1), None);
        assert_eq!(HeightClass::from_height(f64::NAN), None);
    }

    #[test]
    fn names_round_trip() {
        for c in HeightClass::ALL {
            assert_eq!(c.name().parse::<HeightClass>().unwrap(), c);
            assert_eq!(HeightClass::from_index(c.index()), Some(c));
        }
        assert!("medium".parse::<HeightClass>().is_err());
    }
}
