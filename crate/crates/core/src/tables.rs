//! Bundled expected classification rows and the two generator fixtures,
//! used by the golden-table verification command and the acceptance suite.

use crate::error::Result;
use crate::group::CongruenceGroup;
use crate::matrix::ResidueMatrix;

/// One expected row: (level, label, mu, nu_inf, nu2, nu3, genus, classes).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ExpectedRow {
    pub level: u32,
    pub label: &'static str,
    pub mu: u64,
    pub nu_inf: u64,
    pub nu2: u64,
    pub nu3: u64,
    pub genus: u64,
    pub classes: u32,
}

const fn row(
    level: u32,
    label: &'static str,
    mu: u64,
    nu_inf: u64,
    nu2: u64,
    nu3: u64,
    genus: u64,
    classes: u32,
) -> ExpectedRow {
    ExpectedRow {
        level,
        label,
        mu,
        nu_inf,
        nu2,
        nu3,
        genus,
        classes,
    }
}

/// The eight semisimple rows at prime level (11 classes in total).
pub const TABLE_1A: [ExpectedRow; 8] = [
    row(2, "C3", 2, 1, 0, 2, 0, 1),
    row(3, "C2", 6, 2, 2, 0, 0, 1),
    row(3, "D2", 3, 1, 3, 0, 0, 1),
    row(5, "D3", 10, 2, 2, 1, 0, 1),
    row(5, "A4", 5, 1, 1, 2, 0, 1),
    row(7, "A4", 14, 2, 2, 2, 0, 2),
    row(7, "S4", 7, 1, 3, 1, 0, 2),
    row(11, "A5", 11, 1, 3, 2, 0, 2),
];

/// The triangular (Gamma_0(p)) rows at prime level: (p, mu, nu_inf, nu2,
/// nu3, genus). Primes outside this list give genus >= 1.
pub const TABLE_1B: [(u32, u64, u64, u64, u64, u64); 5] = [
    (2, 3, 2, 1, 0, 0),
    (3, 4, 2, 0, 1, 0),
    (5, 6, 2, 2, 0, 0),
    (7, 8, 2, 0, 2, 0),
    (13, 14, 2, 2, 2, 0),
];

/// The seventeen non-Siegelian classes of exact level p^e with e > 1.
pub const TABLE_3: [ExpectedRow; 13] = [
    row(4, "C2", 6, 2, 2, 0, 0, 1),
    row(8, "C2", 12, 2, 4, 0, 0, 1),
    row(16, "C2", 24, 2, 8, 0, 0, 1),
    row(4, "C3", 8, 2, 0, 2, 0, 1),
    row(8, "C3", 16, 2, 0, 4, 0, 1),
    row(16, "C3", 32, 2, 0, 8, 0, 1),
    row(4, "SL2", 4, 1, 2, 1, 0, 1),
    row(8, "SL2", 16, 2, 4, 1, 0, 1),
    row(8, "SL2", 8, 1, 2, 2, 0, 2),
    row(16, "SL2", 16, 1, 2, 4, 0, 4),
    row(9, "ST", 12, 2, 0, 3, 0, 1),
    row(9, "C2", 18, 2, 6, 0, 0, 1),
    row(9, "D2", 9, 1, 5, 0, 0, 1),
];

/// The three Siegelian classes that still fail the subgroup criterion:
/// (level, label, genus, unique class).
pub const SIEGELIAN_EXTRAS: [(u32, &str, u64); 3] =
    [(25, "D3", 2), (27, "ST", 1), (32, "C2", 1)];

/// Generators of the exceptional exact-level-9 group (entries normalized
/// into [0, 9)).
pub fn level9_fixture() -> Result<CongruenceGroup> {
    let gens = [
        ResidueMatrix::new(9, [2, 8, 3, 8])?,
        ResidueMatrix::new(9, [1, 3, 0, 1])?,
        ResidueMatrix::new(9, [4, 0, 0, 7])?,
    ];
    CongruenceGroup::close(&gens, 9)
}

/// Generators of the exact-level-25 genus-two group.
pub fn level25_fixture() -> Result<CongruenceGroup> {
    let gens = [
        ResidueMatrix::new(25, [0, 1, 24, 0])?,
        ResidueMatrix::new(25, [0, 7, 7, 24])?,
        ResidueMatrix::new(25, [1, 5, 20, 1])?,
        ResidueMatrix::new(25, [11, 20, 0, 16])?,
    ];
    CongruenceGroup::close(&gens, 25)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_class_totals() {
        let total_1a: u32 = TABLE_1A.iter().map(|r| r.classes).sum();
        assert_eq!(total_1a, 11);
        let total_3: u32 = TABLE_3.iter().map(|r| r.classes).sum();
        assert_eq!(total_3, 17);
        // 1 (level one) + 11 + 5 + 17 = 34 non-Siegelian curves
        assert_eq!(1 + total_1a + TABLE_1B.len() as u32 + total_3, 34);
    }

    #[test]
    fn fixtures_close() {
        let g9 = level9_fixture().unwrap();
        assert_eq!(g9.order(), 54);
        assert_eq!(g9.exact_level(), 9);
        let g25 = level25_fixture().unwrap();
        assert_eq!(g25.exact_level(), 25);
        // |G_1| = 12 (the D3 pullback), kernel a plane
        assert_eq!(g25.order(), 300);
    }
}
