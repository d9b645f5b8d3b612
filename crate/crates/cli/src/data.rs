//! Plain-text data files and their digests.

use std::path::Path;

use emlaplace::CoinRecord;
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// Raw file contents plus the SHA-256 of the bytes.
#[derive(Debug, Clone)]
pub struct DataFile {
    pub text: String,
    pub sha256: String,
}

impl DataFile {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let bytes =
            std::fs::read(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        let sha256 = hex::encode(Sha256::digest(&bytes));
        let text = String::from_utf8(bytes)
            .map_err(|_| CliError::Input(format!("{}: not valid UTF-8", path.display())))?;
        Ok(Self { text, sha256 })
    }
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
}

fn parse_real(line: usize, field: &str) -> Result<f64, CliError> {
    let v: f64 = field.trim().parse().map_err(|_| {
        CliError::Input(format!(
            "line {line}: expected a real number, found {field:?}"
        ))
    })?;
    if !v.is_finite() {
        return Err(CliError::Input(format!("line {line}: value is not finite")));
    }
    Ok(v)
}

fn parse_count(line: usize, field: &str) -> Result<u64, CliError> {
    field.trim().parse().map_err(|_| {
        CliError::Input(format!(
            "line {line}: expected a non-negative integer, found {field:?}"
        ))
    })
}

fn non_empty<T>(records: Vec<T>) -> Result<Vec<T>, CliError> {
    if records.is_empty() {
        Err(CliError::Input("data file contains no records".into()))
    } else {
        Ok(records)
    }
}

/// One real number per non-blank line.
pub fn parse_reals(text: &str) -> Result<Vec<f64>, CliError> {
    let records = data_lines(text)
        .map(|(line, l)| parse_real(line, l))
        .collect::<Result<Vec<_>, _>>()?;
    non_empty(records)
}

/// `successes,trials` per non-blank line.
pub fn parse_coins(text: &str) -> Result<Vec<CoinRecord>, CliError> {
    let records = data_lines(text)
        .map(|(line, l)| {
            let (s, t) = l.split_once(',').ok_or_else(|| {
                CliError::Input(format!(
                    "line {line}: expected `successes,trials`, found {l:?}"
                ))
            })?;
            let (s, t) = (parse_count(line, s)?, parse_count(line, t)?);
            CoinRecord::new(s, t).map_err(|e| CliError::Input(format!("line {line}: {e}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    non_empty(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reals_skip_blank_lines() {
        assert_eq!(
            parse_reals("1.5\n\n -2 \n3e-1\n").unwrap(),
            vec![1.5, -2.0, 0.3]
        );
    }

    #[test]
    fn bad_real_reports_line() {
        let err = parse_reals("1\n2\nabc\n").unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
        assert!(parse_reals("inf\n").is_err());
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(parse_reals("").is_err());
        assert!(parse_reals("\n  \n").is_err());
        assert!(parse_coins("").is_err());
    }

    #[test]
    fn coins_parse_and_validate() {
        let recs = parse_coins("3,10\n 0 , 1\n").unwrap();
        assert_eq!(
            recs,
            vec![
                CoinRecord::new(3, 10).unwrap(),
                CoinRecord::new(0, 1).unwrap()
            ]
        );
        let err = parse_coins("1,2\n5,3\n").unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
        assert!(parse_coins("1;2\n")
            .unwrap_err()
            .to_string()
            .contains("line 1"));
        assert!(parse_coins("-1,2\n").is_err());
    }
}
