//! Moment tables for orders 1 through 10 shipped with the crate.
//!
//! Orders 9 and 10 are stored on and above the anti-diagonal only and are
//! expanded with [`complete_persymmetric`] on load.

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::wick::{complete_persymmetric, MomentTable};

/// Highest order with a bundled table.
pub const MAX_BUNDLED_ORDER: usize = 10;

const FIXTURES: [&str; MAX_BUNDLED_ORDER] = [
    include_str!("../fixtures/moments_k01.json"),
    include_str!("../fixtures/moments_k02.json"),
    include_str!("../fixtures/moments_k03.json"),
    include_str!("../fixtures/moments_k04.json"),
    include_str!("../fixtures/moments_k05.json"),
    include_str!("../fixtures/moments_k06.json"),
    include_str!("../fixtures/moments_k07.json"),
    include_str!("../fixtures/moments_k08.json"),
    include_str!("../fixtures/moments_k09.json"),
    include_str!("../fixtures/moments_k10.json"),
];

#[derive(Deserialize)]
struct Fixture {
    k: usize,
    complete: bool,
    rows: Vec<Vec<u64>>,
}

/// Raw rows of the bundled fixture, possibly ragged.
pub fn bundled_rows(k: usize) -> Result<(bool, Vec<Vec<u64>>)> {
    let text = k
        .checked_sub(1)
        .and_then(|i| FIXTURES.get(i))
        .ok_or(Error::MissingTable(k))?;
    let fixture: Fixture = serde_json::from_str(text).map_err(|e| Error::Fixture(e.to_string()))?;
    if fixture.k != k {
        return Err(Error::Fixture(format!(
            "fixture for order {k} is labelled {}",
            fixture.k
        )));
    }
    Ok((fixture.complete, fixture.rows))
}

/// The bundled table of order `k`, completed where needed.
pub fn bundled_table(k: usize) -> Result<MomentTable> {
    let (_, rows) = bundled_rows(k)?;
    complete_persymmetric(&rows, k)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn only_large_orders_are_partial() {
        for k in 1..=MAX_BUNDLED_ORDER {
            let (complete, rows) = bundled_rows(k).unwrap();
            assert_eq!(complete, k <= 8);
            assert_eq!(rows.len(), k);
        }
        assert!(bundled_rows(0).is_err());
        assert!(bundled_rows(11).is_err());
    }

    #[test]
    fn completion_examples() {
        let t9 = bundled_table(9).unwrap();
        assert_eq!(t9.entry(0, 0), 1);
        assert_eq!(t9.entry(8, 8), 1);
        let t10 = bundled_table(10).unwrap();
        assert_eq!(t10.entry(1, 0), 45);
        assert_eq!(t10.entry(9, 8), 45);
        assert_eq!(t10.entry(8, 1), 105_232_400);
    }
}
