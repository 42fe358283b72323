use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A decade label such as 1920 (the 1920s).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u16", into = "u16")]
pub struct Decade(u16);

impl Decade {
    pub fn new(year: u16) -> Result<Self> {
        if year % 10 != 0 {
            return Err(Error::InvalidInput(format!(
                "decade label {year} is not a multiple of 10"
            )));
        }
        Ok(Self(year))
    }

    /// The decade containing `year`.
    pub fn containing(year: i32) -> Result<Self> {
        if !(0..=9999).contains(&year) {
            return Err(Error::InvalidInput(format!("year {year} out of range")));
        }
        Ok(Self((year - year.rem_euclid(10)) as u16))
    }

    pub fn year(self) -> u16 {
        self.0
    }

    /// Signed distance in decades.
    pub fn steps_to(self, other: Decade) -> i32 {
        (other.0 as i32 - self.0 as i32) / 10
    }
}

impl TryFrom<u16> for Decade {
    type Error = Error;

    fn try_from(year: u16) -> Result<Self> {
        Decade::new(year)
    }
}

impl From<Decade> for u16 {
    fn from(d: Decade) -> u16 {
        d.0
    }
}

impl fmt::Display for Decade {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}s", self.0)
    }
}

impl std::str::FromStr for Decade {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().trim_end_matches('s');
        let y: u16 = t
            .parse()
            .map_err(|_| Error::InvalidInput(format!("bad decade label `{s}`")))?;
        Decade::new(y)
    }
}

/// True when `decades` (sorted ascending) step by exactly ten years.
pub fn is_contiguous(decades: &[Decade]) -> bool {
    decades.windows(2).all(|w| w[1].0 == w[0].0 + 10)
}
