//! Mixed-level analysis: CRT factor data of a group, the subdirect-product
//! index-divisibility constraint, normal-subgroup index checks, and the
//! composite level bound assembled from the prime-power classification.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::classify::{Catalog, CLASSIFIED_PRIMES};
use crate::error::{Error, Result};
use crate::group::{normal_subgroups, sl2_ambient, Budget, CongruenceGroup};
use crate::matrix::{prime_power_factorization, sl2_order, ResidueMatrix};

/// Per-prime-power factor data of a group at composite modulus.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FactorData {
    /// prime power q = p^{v_p(n)} dividing the modulus
    pub q: u32,
    pub p: u32,
    /// v_p of the exact level of the group
    pub e: u32,
    /// v_p of the exact level of the image modulo q
    pub e_prime: u32,
    /// |G_q|, the image modulo q
    pub image_order: u64,
    /// |H_q|, the image mod q of the kernel of reduction modulo n/q
    pub cokernel_order: u64,
    /// r = [G_q : H_q]
    pub index: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MixedDecomposition {
    pub modulus: u32,
    pub exact_level: u32,
    pub factors: Vec<FactorData>,
}

/// Splits a group along the CRT factors of its modulus and checks the
/// structural facts: each H_q is normal in G_q, each index r_j divides the
/// product of the others, and p^{e-e'} | r | p^{3e-2}(p+1)(p-1). Violations
/// are hard failures.
pub fn decompose(g: &CongruenceGroup) -> Result<MixedDecomposition> {
    let n = g.modulus();
    let exact = g.exact_level();
    let fac = prime_power_factorization(n);
    let mut factors = Vec::new();
    for &(p, ep) in &fac {
        let q = p.pow(ep);
        let image = g.reduce(q)?;
        let complement = n / q;
        // elements congruent to I modulo n/q, pushed down modulo q
        let idc = ResidueMatrix::identity(complement);
        let mut kernel_keys: Vec<u128> = g
            .elements()
            .filter(|m| complement == 1 || m.reduce_mod(complement).expect("divides") == idc)
            .map(|m| m.reduce_mod(q).expect("divides").key())
            .collect();
        kernel_keys.sort_unstable();
        kernel_keys.dedup();
        let cokernel_order = kernel_keys.len() as u64;
        // normality of H_q in G_q
        let in_h = |k: u128| kernel_keys.binary_search(&k).is_ok();
        for x in image.small_generating_set() {
            for &hk in &kernel_keys {
                let h = ResidueMatrix::from_key(q, hk);
                if !in_h(x.conj(&h).key()) {
                    return Err(Error::Inconsistency(format!(
                        "cokernel at q = {q} is not normal in the image"
                    )));
                }
            }
        }
        if image.order() % cokernel_order != 0 {
            return Err(Error::Inconsistency("cokernel order does not divide".into()));
        }
        let index = image.order() / cokernel_order;
        let e = valuation(exact, p);
        let e_prime = valuation(image.exact_level(), p);
        if e == 0 {
            if index != 1 {
                return Err(Error::Inconsistency(format!(
                    "prime {p} is absent from the exact level but r = {index}"
                )));
            }
        } else {
            let pe = (p as u64).pow(e - e_prime.min(e));
            if index % pe != 0 {
                return Err(Error::Inconsistency(format!(
                    "p^(e-e') = {pe} does not divide r = {index} at p = {p}"
                )));
            }
            let bound = (p as u64).pow(3 * e - 2) * (p as u64 + 1) * (p as u64 - 1);
            if bound % index != 0 {
                return Err(Error::Inconsistency(format!(
                    "r = {index} does not divide p^(3e-2)(p+1)(p-1) = {bound} at p = {p}"
                )));
            }
        }
        factors.push(FactorData {
            q,
            p,
            e,
            e_prime,
            image_order: image.order(),
            cokernel_order,
            index,
        });
    }
    let orders: Vec<(u64, u64)> = factors
        .iter()
        .map(|f| (f.image_order, f.cokernel_order))
        .collect();
    if !goursat_check(&orders)? {
        return Err(Error::Inconsistency(
            "subdirect-product index divisibility fails".into(),
        ));
    }
    Ok(MixedDecomposition {
        modulus: n,
        exact_level: exact,
        factors,
    })
}

fn valuation(mut n: u32, p: u32) -> u32 {
    let mut v = 0;
    while n % p == 0 && n > 0 {
        n /= p;
        v += 1;
    }
    v
}

/// Abstract form of the index-divisibility proposition: given per-factor
/// orders (|T_i|, |U_i|) with U_i <= T_i normal, the indices r_i = |T_i|/|U_i|
/// must satisfy r_j | prod_{i != j} r_i for every j.
pub fn goursat_check(orders: &[(u64, u64)]) -> Result<bool> {
    let mut r = Vec::with_capacity(orders.len());
    for &(t, u) in orders {
        if u == 0 || t % u != 0 {
            return Err(Error::BadFactorization(format!(
                "|U| = {u} does not divide |T| = {t}"
            )));
        }
        r.push(t / u);
    }
    for j in 0..r.len() {
        let mut prod: u128 = 1;
        for (i, &ri) in r.iter().enumerate() {
            if i != j {
                prod = prod.saturating_mul(ri as u128);
            }
        }
        if prod % r[j] as u128 != 0 {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Every proper normal subgroup of SL2(Z/p^sZ) has index divisible by p;
/// verified by enumerating the normal subgroups. Returning false would
/// contradict the proposition.
pub fn normal_index_check(p: u32, s: u32, budget: &Budget) -> Result<bool> {
    let n = p.pow(s);
    let ambient = sl2_ambient(n, budget)?;
    let total = ambient.order();
    for h in normal_subgroups(&ambient, budget)? {
        if h.order() == total {
            continue;
        }
        let index = total / h.order();
        if index % p as u64 != 0 {
            return Ok(false);
        }
    }
    Ok(true)
}

/// The classification-derived caps on e_p' (largest exponent with a
/// non-Siegelian or Unknown record at exact level p^{e'}).
pub const EXPECTED_CAPS: [(u32, u32); 6] = [(2, 4), (3, 2), (5, 2), (7, 1), (11, 1), (13, 1)];

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MixedBound {
    /// e_p: the final exponent per prime
    pub exponents: BTreeMap<u32, u32>,
    /// the e_p' caps read from the classification
    pub caps: BTreeMap<u32, u32>,
    /// v_p(prod_{q != p} (q+1)(q-1)) per prime
    pub crt_valuations: BTreeMap<u32, u32>,
}

impl MixedBound {
    /// "2^20·3^7·5^3·7^2·11·13"
    pub fn factored_string(&self) -> String {
        self.exponents
            .iter()
            .map(|(&p, &e)| {
                if e == 1 {
                    format!("{p}")
                } else {
                    format!("{p}^{e}")
                }
            })
            .collect::<Vec<_>>()
            .join("\u{b7}")
    }

    pub fn level(&self) -> u64 {
        self.exponents
            .iter()
            .map(|(&p, &e)| (p as u64).pow(e))
            .product()
    }
}

/// Assembles the mixed-level exponent bound e_p <= cap_p + v_p(prod of
/// (q+1)(q-1) over the other classified primes) from caps derived from the
/// prime-power classification. A cap mismatch signals an upstream
/// classification bug and is an error.
pub fn mixed_bound(caps: &BTreeMap<u32, u32>) -> Result<MixedBound> {
    let expected: BTreeMap<u32, u32> = EXPECTED_CAPS.iter().copied().collect();
    if caps != &expected {
        return Err(Error::Inconsistency(format!(
            "classification caps {caps:?} do not match the expected {expected:?}"
        )));
    }
    let mut exponents = BTreeMap::new();
    let mut crt_valuations = BTreeMap::new();
    for &p in &CLASSIFIED_PRIMES {
        let mut v = 0u32;
        for &q in &CLASSIFIED_PRIMES {
            if q == p {
                continue;
            }
            v += valuation(q + 1, p) + valuation(q - 1, p);
        }
        crt_valuations.insert(p, v);
        exponents.insert(p, caps[&p] + v);
    }
    Ok(MixedBound {
        exponents,
        caps: caps.clone(),
        crt_valuations,
    })
}

pub fn mixed_bound_from_catalog(catalog: &Catalog) -> Result<MixedBound> {
    mixed_bound(&catalog.effectivity_caps())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LargestPrimeReport {
    pub exact_level: u32,
    /// largest prime divisor of the exact level, if > 3
    pub prime: Option<u32>,
    /// the image modulo the p-part is proper (vacuously true when prime is
    /// None)
    pub image_proper: bool,
    /// effectivity guaranteed outright because the largest prime exceeds 13
    pub effective_guarantee: bool,
}

/// For a group of exact level n with largest prime divisor p > 3, the image
/// modulo the p-part of n cannot be all of SL2; p > 13 then guarantees
/// effectivity.
pub fn largest_prime_check(g: &CongruenceGroup) -> Result<LargestPrimeReport> {
    let exact = g.exact_level();
    let fac = prime_power_factorization(exact);
    let Some(&(p, e)) = fac.last().filter(|&&(p, _)| p > 3) else {
        return Ok(LargestPrimeReport {
            exact_level: exact,
            prime: None,
            image_proper: true,
            effective_guarantee: false,
        });
    };
    let q = p.pow(e);
    let image = g.reduce(q)?;
    let image_proper = image.order() != sl2_order(q);
    if !image_proper {
        return Err(Error::Inconsistency(format!(
            "exact level {exact} has p-part {q} but the image mod {q} is full"
        )));
    }
    Ok(LargestPrimeReport {
        exact_level: exact,
        prime: Some(p),
        image_proper,
        effective_guarantee: p > 13,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn budget() -> Budget {
        Budget::default()
    }

    fn expected_caps() -> BTreeMap<u32, u32> {
        EXPECTED_CAPS.iter().copied().collect()
    }

    #[test]
    fn decompose_full_sl2_mod_6() {
        let full6 = sl2_ambient(6, &budget()).unwrap();
        let d = decompose(&full6).unwrap();
        assert_eq!(d.factors.len(), 2);
        assert!(d.factors.iter().all(|f| f.index == 1));
    }

    #[test]
    fn decompose_glued_c4_mod_6() {
        // x = T mod 2 glued with S mod 3: x^2 = -I, so <x> already
        // contains -I and has order 4
        let x = ResidueMatrix::new(6, [3, 1, 2, 3]).unwrap();
        let g = CongruenceGroup::close(&[x], 6).unwrap();
        assert_eq!(g.order(), 4);
        let d = decompose(&g).unwrap();
        let by_q: BTreeMap<u32, &FactorData> = d.factors.iter().map(|f| (f.q, f)).collect();
        assert_eq!(by_q[&2].image_order, 2);
        assert_eq!(by_q[&2].cokernel_order, 1);
        assert_eq!(by_q[&2].index, 2);
        assert_eq!(by_q[&3].image_order, 4);
        assert_eq!(by_q[&3].cokernel_order, 2);
        assert_eq!(by_q[&3].index, 2);
    }

    #[test]
    fn two_factor_indices_are_equal() {
        // the mutual divisibility r_1 | r_2 and r_2 | r_1 forces equality
        for gens in [
            vec![ResidueMatrix::new(6, [3, 1, 2, 3]).unwrap()],
            vec![
                ResidueMatrix::t_matrix(6),
                ResidueMatrix::new(6, [5, 0, 0, 5]).unwrap(),
            ],
        ] {
            let g = CongruenceGroup::close(&gens, 6).unwrap();
            let d = decompose(&g).unwrap();
            assert_eq!(d.factors[0].index, d.factors[1].index);
        }
    }

    #[test]
    fn goursat_examples() {
        assert!(goursat_check(&[(2, 1), (3, 1), (6, 1)]).unwrap());
        assert!(!goursat_check(&[(1, 1), (1, 1), (5, 1)]).unwrap());
        // diagonal C2 inside C2 x C2
        assert!(goursat_check(&[(2, 1), (2, 1)]).unwrap());
        assert!(goursat_check(&[]).unwrap());
        assert!(goursat_check(&[(4, 3)]).is_err());
    }

    #[test]
    fn normal_index_checks() {
        assert!(normal_index_check(3, 1, &budget()).unwrap());
        assert!(normal_index_check(2, 2, &budget()).unwrap());
        assert!(normal_index_check(5, 1, &budget()).unwrap());
    }

    #[test]
    fn mixed_bound_exponents() {
        let b = mixed_bound(&expected_caps()).unwrap();
        let want: BTreeMap<u32, u32> =
            [(2, 20), (3, 7), (5, 3), (7, 2), (11, 1), (13, 1)].into_iter().collect();
        assert_eq!(b.exponents, want);
        assert_eq!(b.crt_valuations[&2], 16);
        assert_eq!(b.crt_valuations[&3], 5);
        assert_eq!(b.factored_string(), "2^20\u{b7}3^7\u{b7}5^3\u{b7}7^2\u{b7}11\u{b7}13");
        assert_eq!(
            b.level(),
            2u64.pow(20) * 3u64.pow(7) * 5u64.pow(3) * 7u64.pow(2) * 11 * 13
        );
    }

    #[test]
    fn mixed_bound_rejects_bad_caps() {
        let mut caps = expected_caps();
        caps.insert(5, 3);
        assert!(mixed_bound(&caps).is_err());
    }

    #[test]
    fn largest_prime_vacuous_for_full_group() {
        let full35 = CongruenceGroup::close(
            &[ResidueMatrix::s_matrix(35), ResidueMatrix::t_matrix(35)],
            35,
        )
        .unwrap();
        let r = largest_prime_check(&full35).unwrap();
        assert_eq!(r.exact_level, 1);
        assert_eq!(r.prime, None);
    }

    #[test]
    fn largest_prime_image_is_proper_at_level_15() {
        // the triangular group mod 15 has exact level 15 and proper images
        let g = CongruenceGroup::close(
            &[
                ResidueMatrix::t_matrix(15),
                ResidueMatrix::new(15, [2, 0, 0, 8]).unwrap(),
            ],
            15,
        )
        .unwrap();
        let r = largest_prime_check(&g).unwrap();
        assert_eq!(r.exact_level % 5, 0);
        assert!(r.image_proper);
        assert_eq!(r.prime, Some(5));
        assert!(!r.effective_guarantee);
    }
}
