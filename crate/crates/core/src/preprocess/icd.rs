//! ICD-10 aggregation and age grouping.

use crate::error::{Error, Result};

/// Collapses a diagnosis to its three-character category unless it is a
/// neoplasm (C00–D48), which keeps full detail.
pub fn aggregate_icd10(code: &str) -> Result<String> {
    let code = code.trim();
    let b = code.as_bytes();
    let well_formed = b.len() >= 3
        && b[0].is_ascii_uppercase()
        && b[1].is_ascii_digit()
        && b[2].is_ascii_digit()
        && (b.len() == 3
            || (b.len() > 4 && b[3] == b'.' && b[4..].iter().all(|c| c.is_ascii_alphanumeric())));
    if !well_formed {
        return Err(Error::Encoding(format!("malformed ICD-10 code `{code}`")));
    }
    let number = (b[1] - b'0') * 10 + (b[2] - b'0');
    let neoplasm = b[0] == b'C' || (b[0] == b'D' && number <= 48);
    Ok(if neoplasm {
        code.to_string()
    } else {
        code[..3].to_string()
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum AgeGroup {
    Youth,
    Adult,
    Senior,
}

impl AgeGroup {
    pub const ALL: [AgeGroup; 3] = [AgeGroup::Youth, AgeGroup::Adult, AgeGroup::Senior];

    pub fn name(self) -> &'static str {
        match self {
            AgeGroup::Youth => "youth",
            AgeGroup::Adult => "adult",
            AgeGroup::Senior => "senior",
        }
    }
}

/// `<25` youth, `25..=64` adult, `>64` senior, by age at window start.
pub fn encode_age(birth_year: i32, window_start_year: i32) -> Result<AgeGroup> {
    if window_start_year < birth_year {
        return Err(Error::Encoding(format!(
            "window start {window_start_year} precedes birth year {birth_year}"
        )));
    }
    let age = window_start_year - birth_year;
    Ok(match age {
        a if a < 25 => AgeGroup::Youth,
        a if a <= 64 => AgeGroup::Adult,
        _ => AgeGroup::Senior,
    })
}

/// One-hot over [`AgeGroup::ALL`].
pub fn age_one_hot(group: AgeGroup) -> [f64; 3] {
    let mut v = [0.0; 3];
    v[group as usize] = 1.0;
    v
}
