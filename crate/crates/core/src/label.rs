use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Ripeness level, encoded 0..=3 for training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Level {
    A,
    B,
    C,
    D,
}

pub const NUM_LEVELS: usize = 4;

impl Level {
    pub const ALL: [Level; NUM_LEVELS] = [Level::A, Level::B, Level::C, Level::D];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Level> {
        Level::ALL.get(i).copied().ok_or(Error::Label {
            label: i,
            classes: NUM_LEVELS,
        })
    }

    pub fn letter(self) -> char {
        ['A', 'B', 'C', 'D'][self.index()]
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

impl FromStr for Level {
    type Err = Error;

    fn from_str(s: &str) -> Result<Level> {
        match s.trim() {
            "A" | "a" => Ok(Level::A),
            "B" | "b" => Ok(Level::B),
            "C" | "c" => Ok(Level::C),
            "D" | "d" => Ok(Level::D),
            other => Err(Error::Config(format!("unknown ripeness level '{other}'"))),
        }
    }
}

/// Ripening-schedule labeling: days 1-6 A, 7-14 B, 15-22 C, 23-28 D.
pub fn day_to_level(day: u32) -> Result<Level> {
    match day {
        1..=6 => Ok(Level::A),
        7..=14 => Ok(Level::B),
        15..=22 => Ok(Level::C),
        23..=28 => Ok(Level::D),
        _ => Err(Error::DayOutOfRange(day)),
    }
}
