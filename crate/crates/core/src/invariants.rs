//! Modular-curve invariants of a congruence group and the effectiveness
//! verdict pipeline.
//!
//! The cusp number is the number of orbits of the group acting on the set
//! M_n of vectors of exact additive order n in (Z/nZ)^2. Whenever the
//! ambient PSL2(Z/nZ) fits the budget, the count is cross-checked against
//! the number of T-orbits on the coset space; a disagreement is a hard
//! failure, never a warning.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::group::{coset_space, Budget, CongruenceGroup};
use crate::matrix::{gcd, prime_power_factorization, psl2_order, ResidueMatrix};

/// All vectors of exact additive order n in (Z/nZ)^2.
pub struct ExactOrderSet {
    modulus: u32,
    vectors: Vec<(u32, u32)>,
}

impl ExactOrderSet {
    pub fn modulus(&self) -> u32 {
        self.modulus
    }

    pub fn vectors(&self) -> &[(u32, u32)] {
        &self.vectors
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

/// Enumerates M_n; the additive order of (a, b) is n / gcd(a, b, n).
pub fn exact_order_set(n: u32) -> ExactOrderSet {
    let mut vectors = Vec::new();
    for a in 0..n.max(1) {
        for b in 0..n.max(1) {
            if gcd(gcd(a as u64, b as u64), n as u64) == 1 {
                vectors.push((a, b));
            }
        }
    }
    debug_assert_eq!(vectors.len() as u64, exact_order_count(n));
    ExactOrderSet {
        modulus: n,
        vectors,
    }
}

/// |M_n| = n^2 prod_{p|n} (1 - p^-2).
pub fn exact_order_count(n: u32) -> u64 {
    let mut count = (n as u64) * (n as u64);
    for (p, _) in prime_power_factorization(n) {
        let p = p as u64;
        count = count / (p * p) * (p * p - 1);
    }
    count
}

fn orbit_count_on_vectors(group: &CongruenceGroup, set: &ExactOrderSet) -> u64 {
    let n = set.modulus;
    let gens = group.small_generating_set();
    let index = |v: (u32, u32)| -> usize { (v.0 as usize) * (n as usize) + v.1 as usize };
    let mut member = vec![false; (n as usize) * (n as usize).max(1)];
    for &v in &set.vectors {
        member[index(v)] = true;
    }
    let mut seen = vec![false; member.len()];
    let mut orbits = 0;
    for &v in &set.vectors {
        if seen[index(v)] {
            continue;
        }
        orbits += 1;
        let mut stack = vec![v];
        seen[index(v)] = true;
        while let Some(w) = stack.pop() {
            for g in &gens {
                let u = g.apply(w);
                let i = index(u);
                debug_assert!(member[i], "group action must preserve exact order");
                if !seen[i] {
                    seen[i] = true;
                    stack.push(u);
                }
            }
        }
    }
    orbits
}

/// Number of cusps: orbits of the group on M_n, cross-checked against the
/// T-orbit count on the coset space when the ambient fits the budget.
pub fn cusp_count(group: &CongruenceGroup, budget: &Budget) -> Result<u64> {
    let n = group.modulus();
    let set = exact_order_set(n);
    let by_vectors = orbit_count_on_vectors(group, &set);
    if psl2_order(n) <= budget.max_ambient_order {
        let cs = coset_space(group, budget)?;
        let by_cosets = cs.t_orbit_count();
        if by_cosets != by_vectors {
            return Err(Error::Inconsistency(format!(
                "cusp count mismatch at modulus {n}: {by_vectors} by vector orbits, {by_cosets} by coset T-orbits"
            )));
        }
    }
    // |G| >= |M_n|/2 whenever there are at most two cusps.
    if by_vectors <= 2 && 2 * group.order() < exact_order_count(n) {
        return Err(Error::Inconsistency(format!(
            "group of order {} at modulus {n} has {by_vectors} cusps but |M_n| = {}",
            group.order(),
            exact_order_count(n)
        )));
    }
    Ok(by_vectors)
}

/// (nu2, nu3): cosets fixed by right multiplication by the images of S and
/// of the order-3 rotation.
pub fn elliptic_counts(group: &CongruenceGroup, budget: &Budget) -> Result<(u64, u64)> {
    let cs = coset_space(group, budget)?;
    Ok((cs.s_fixed_points(), cs.r3_fixed_points()))
}

/// Subgroup generated by -I and all elements whose trace residue lies in
/// {0, 1, n-1}: the level-n stand-in for the subgroup generated by the
/// elliptic elements. Such elements satisfy x^2 = -I, x^3 = -I or x^3 = I
/// by Cayley-Hamilton, so they all have order dividing 12.
pub fn elliptic_closure(group: &CongruenceGroup) -> CongruenceGroup {
    let n = group.modulus();
    let interesting: Vec<ResidueMatrix> = group
        .elements()
        .filter(|m| {
            let t = m.trace();
            t == 0 % n.max(1) || t == 1 % n || t == (n - 1) % n
        })
        .collect();
    let mut gens = vec![ResidueMatrix::neg_identity(n)];
    gens.extend(interesting);
    CongruenceGroup::close(&gens, n).expect("moduli agree")
}

/// Subgroup generated by -I and all elements of order dividing 12; contains
/// the trace-based closure and is used to flag groups whose classification
/// would differ between the two notions.
pub fn order12_hull(group: &CongruenceGroup) -> CongruenceGroup {
    let n = group.modulus();
    let id = ResidueMatrix::identity(n);
    let interesting: Vec<ResidueMatrix> = group
        .elements()
        .filter(|m| m.pow(12) == id)
        .collect();
    let mut gens = vec![ResidueMatrix::neg_identity(n)];
    gens.extend(interesting);
    CongruenceGroup::close(&gens, n).expect("moduli agree")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    NonSiegelian,
    EffectiveThreeCusps,
    EffectiveEllipticSubgroup,
    EffectiveGenusOne,
    EffectiveGalois,
    Unknown,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Verdict::NonSiegelian => "NonSiegelian",
            Verdict::EffectiveThreeCusps => "EffectiveThreeCusps",
            Verdict::EffectiveEllipticSubgroup => "EffectiveEllipticSubgroup",
            Verdict::EffectiveGenusOne => "EffectiveGenusOne",
            Verdict::EffectiveGalois => "EffectiveGalois",
            Verdict::Unknown => "Unknown",
        };
        f.write_str(s)
    }
}

/// The invariant vector of the modular curve attached to a group, plus the
/// Siegelian flag and the effectiveness verdict.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvariantRecord {
    pub mu: u64,
    pub nu2: u64,
    pub nu3: u64,
    pub nu_inf: u64,
    pub genus: u64,
    pub siegelian: bool,
    pub verdict: Verdict,
}

/// g = 1 + mu/12 - nu2/4 - nu3/3 - nu_inf/2; must be a nonnegative integer.
fn genus_from(mu: u64, nu2: u64, nu3: u64, nu_inf: u64) -> Result<u64> {
    let twelve_g = 12 + mu as i64 - 3 * nu2 as i64 - 4 * nu3 as i64 - 6 * nu_inf as i64;
    if twelve_g < 0 || twelve_g % 12 != 0 {
        return Err(Error::Inconsistency(format!(
            "non-integral or negative genus from (mu, nu2, nu3, nu_inf) = ({mu}, {nu2}, {nu3}, {nu_inf})"
        )));
    }
    Ok((twelve_g / 12) as u64)
}

/// Computes the full invariant record. mu is the index of the PSL image in
/// PSL2(Z/nZ), which equals the index of the congruence subgroup in PSL2(Z).
pub fn invariant_record(group: &CongruenceGroup, budget: &Budget) -> Result<InvariantRecord> {
    let n = group.modulus();
    let gbar = group.psl_image();
    let mu = psl2_order(n) / gbar.order();
    let nu_inf = cusp_count(group, budget)?;
    let (nu2, nu3) = elliptic_counts(group, budget)?;
    let genus = genus_from(mu, nu2, nu3, nu_inf)?;
    let siegelian = genus >= 1 || nu_inf >= 3;
    let verdict = verdict_from_parts(group, budget, genus, nu_inf, siegelian)?;
    Ok(InvariantRecord {
        mu,
        nu2,
        nu3,
        nu_inf,
        genus,
        siegelian,
        verdict,
    })
}

fn verdict_from_parts(
    group: &CongruenceGroup,
    budget: &Budget,
    genus: u64,
    nu_inf: u64,
    siegelian: bool,
) -> Result<Verdict> {
    if !siegelian {
        return Ok(Verdict::NonSiegelian);
    }
    if nu_inf >= 3 {
        return Ok(Verdict::EffectiveThreeCusps);
    }
    let closure = elliptic_closure(group);
    if cusp_count(&closure, budget)? >= 3 {
        return Ok(Verdict::EffectiveEllipticSubgroup);
    }
    if genus == 1 {
        return Ok(Verdict::EffectiveGenusOne);
    }
    if genus >= 1 && group.is_normal_in_ambient() {
        return Ok(Verdict::EffectiveGalois);
    }
    Ok(Verdict::Unknown)
}

/// First-matching-rule verdict, recomputed from scratch.
pub fn effectiveness_verdict(group: &CongruenceGroup, budget: &Budget) -> Result<Verdict> {
    Ok(invariant_record(group, budget)?.verdict)
}

/// Does the group satisfy the classification filter: every congruence
/// subgroup containing its elliptic elements has at most 2 cusps, tested at
/// the group's own level via the trace-based closure.
pub fn satisfies_few_cusp_condition(group: &CongruenceGroup, budget: &Budget) -> Result<bool> {
    Ok(cusp_count(&elliptic_closure(group), budget)? <= 2)
}

/// Helper for the standard upper-triangular group mod p, i.e. the image of
/// Gamma_0(p).
pub fn borel_group(p: u32) -> Result<CongruenceGroup> {
    let mut gens = vec![ResidueMatrix::t_matrix(p)];
    if p > 2 {
        let g = primitive_root(p)
            .ok_or_else(|| Error::BadFactorization(format!("{p} is not prime")))?;
        let ginv = mod_inv(g, p);
        gens.push(ResidueMatrix::new(p, [g as i64, 0, 0, ginv as i64])?);
    }
    CongruenceGroup::close(&gens, p)
}

fn mod_inv(a: u32, p: u32) -> u32 {
    let mut result = 1u64;
    let mut base = a as u64 % p as u64;
    let mut e = p as u64 - 2;
    while e > 0 {
        if e & 1 == 1 {
            result = result * base % p as u64;
        }
        base = base * base % p as u64;
        e >>= 1;
    }
    result as u32
}

fn primitive_root(p: u32) -> Option<u32> {
    if p == 2 {
        return Some(1);
    }
    let phi = (p - 1) as u64;
    let factors = prime_power_factorization(p - 1);
    'outer: for g in 2..p {
        for &(q, _) in &factors {
            let mut x = 1u64;
            let mut base = g as u64;
            let mut e = phi / q as u64;
            while e > 0 {
                if e & 1 == 1 {
                    x = x * base % p as u64;
                }
                base = base * base % p as u64;
                e >>= 1;
            }
            if x == 1 {
                continue 'outer;
            }
        }
        return Some(g);
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::sl2_ambient;

    fn budget() -> Budget {
        Budget::default()
    }

    #[test]
    fn exact_order_set_sizes() {
        assert_eq!(exact_order_set(1).len(), 1);
        assert_eq!(exact_order_set(12).len(), 96);
        assert_eq!(exact_order_set(25).len(), 600);
        // direct pair enumeration oracle for a composite modulus
        let n = 12u32;
        let brute = (0..n)
            .flat_map(|a| (0..n).map(move |b| (a, b)))
            .filter(|&(a, b)| {
                // additive order of (a,b) is n / gcd(a,b,n)
                let g = gcd(gcd(a as u64, b as u64), n as u64);
                n as u64 / g == n as u64
            })
            .count();
        assert_eq!(brute, 96);
    }

    #[test]
    fn cusp_counts() {
        let full7 = sl2_ambient(7, &budget()).unwrap();
        assert_eq!(cusp_count(&full7, &budget()).unwrap(), 1);

        let borel5 = borel_group(5).unwrap();
        assert_eq!(cusp_count(&borel5, &budget()).unwrap(), 2);

        let pm5 = CongruenceGroup::close(&[], 5).unwrap();
        assert_eq!(cusp_count(&pm5, &budget()).unwrap(), 12);
    }

    #[test]
    fn elliptic_point_counts_for_borel_groups() {
        assert_eq!(
            elliptic_counts(&borel_group(2).unwrap(), &budget()).unwrap(),
            (1, 0)
        );
        assert_eq!(
            elliptic_counts(&borel_group(7).unwrap(), &budget()).unwrap(),
            (0, 2)
        );
    }

    #[test]
    fn gamma0_13_record() {
        let rec = invariant_record(&borel_group(13).unwrap(), &budget()).unwrap();
        assert_eq!(
            (rec.mu, rec.nu_inf, rec.nu2, rec.nu3, rec.genus),
            (14, 2, 2, 2, 0)
        );
        assert!(!rec.siegelian);
        assert_eq!(rec.verdict, Verdict::NonSiegelian);
    }

    #[test]
    fn gamma0_11_has_genus_one_and_elliptic_subgroup_route() {
        let rec = invariant_record(&borel_group(11).unwrap(), &budget()).unwrap();
        assert_eq!((rec.mu, rec.nu2, rec.nu3, rec.nu_inf), (12, 0, 0, 2));
        assert_eq!(rec.genus, 1);
        assert!(rec.siegelian);
        // Gamma_0(11) has no elliptic elements, so the closure is {-I, I}
        // with 60 cusps and the subgroup criterion fires before the
        // genus-one rule.
        assert_eq!(rec.verdict, Verdict::EffectiveEllipticSubgroup);
    }

    #[test]
    fn elliptic_closure_examples() {
        let pm5 = CongruenceGroup::close(&[], 5).unwrap();
        assert_eq!(elliptic_closure(&pm5).order(), 2);

        let full5 = sl2_ambient(5, &budget()).unwrap();
        assert_eq!(elliptic_closure(&full5).order(), 120);
    }

    #[test]
    fn verdict_three_cusps_for_pm5() {
        let pm5 = CongruenceGroup::close(&[], 5).unwrap();
        let rec = invariant_record(&pm5, &budget()).unwrap();
        assert_eq!(rec.nu_inf, 12);
        assert_eq!(rec.verdict, Verdict::EffectiveThreeCusps);
    }

    #[test]
    fn level_one_record() {
        let g = CongruenceGroup::close(&[], 1).unwrap();
        let rec = invariant_record(&g, &budget()).unwrap();
        assert_eq!((rec.mu, rec.nu_inf, rec.genus), (1, 1, 0));
        assert_eq!(rec.verdict, Verdict::NonSiegelian);
    }

    #[test]
    fn record_json_field_names() {
        let rec = invariant_record(&borel_group(13).unwrap(), &budget()).unwrap();
        let v = serde_json::to_value(&rec).unwrap();
        assert_eq!(
            v,
            serde_json::json!({
                "mu": 14, "nu2": 2, "nu3": 2, "nu_inf": 2,
                "genus": 0, "siegelian": false, "verdict": "NonSiegelian"
            })
        );
    }

    #[test]
    fn semisimple_identity_nu_inf_times_order() {
        // the trivial-PSL case: {+-I} mod 5 has 12 cusps and order 2;
        // 12 * 2 = 24 = |M_5|
        let pm5 = CongruenceGroup::close(&[], 5).unwrap();
        let nu = cusp_count(&pm5, &budget()).unwrap();
        assert_eq!(nu * pm5.order(), exact_order_count(5));
    }
}
