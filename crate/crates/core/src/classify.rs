//! Classification of congruence groups with few cusps at prime and
//! prime-power levels.
//!
//! The prime-power driver proceeds by lifting: a group modulo p^s lifts to
//! the groups modulo p^{s+1} that project onto it, and every lift's kernel
//! is (under the exponential map) a subspace V of sl2(F_p) stable under the
//! mod-p image. Branches are pruned by the structural facts checked in
//! `adjoint::check_v_chain`: V-chains grow, a full V forces the exact level
//! down, and the e-th level of an exact-level-p^e group is exact at every
//! intermediate step, so pullback tops never need further lifting.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::adjoint::{
    abstract_type, check_v_chain, exp_vector, invariant_subspaces, AbstractType, ReductionChain,
    TracelessSubspace,
};
use crate::error::{Error, Result};
use crate::group::{
    sl2_ambient, subgroups_up_to_conjugacy, Budget, CongruenceGroup, ConjugacyCollector,
};
use crate::invariants::{
    borel_group, cusp_count, elliptic_closure, exact_order_count, invariant_record, order12_hull,
    InvariantRecord,
};
use crate::matrix::{prime_power_factorization, ResidueMatrix, MAX_MODULUS};

/// Structure label of the mod-p image of a classified group.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GroupLabel {
    Type(AbstractType),
    SpecialTriangular,
    FullSl2,
}

impl std::fmt::Display for GroupLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GroupLabel::Type(t) => write!(f, "{t}"),
            GroupLabel::SpecialTriangular => write!(f, "ST"),
            GroupLabel::FullSl2 => write!(f, "SL2"),
        }
    }
}

/// One conjugacy class in the classification output.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassificationRecord {
    pub digest: String,
    pub n: u32,
    pub exact_level: u32,
    pub label: String,
    pub invariants: InvariantRecord,
    pub multiplicity: u32,
    pub gens: Vec<[u32; 4]>,
}

/// A lift of a group modulo p^s to modulo p^{s+1}, with its kernel space.
pub struct Lift {
    pub group: CongruenceGroup,
    pub v: TracelessSubspace,
}

/// All subgroups of SL2(Z/p^{s+1}Z) projecting onto `g` and containing -I,
/// one per conjugacy class (equivalently: up to conjugation by the
/// normalizer of the full preimage of `g`).
pub fn lift_subgroups(g: &CongruenceGroup, budget: &Budget) -> Result<Vec<Lift>> {
    lift_subgroups_filtered(g, |_| true, budget)
}

/// Lift enumeration with a caller-supplied predicate on the kernel space;
/// candidate generators are the corrected lifts of a small generating set
/// of `g` together with exponentials of a basis of V, which reaches every
/// lift with kernel exactly exp(V).
pub fn lift_subgroups_filtered(
    g: &CongruenceGroup,
    v_ok: impl Fn(&TracelessSubspace) -> bool,
    budget: &Budget,
) -> Result<Vec<Lift>> {
    let fac = prime_power_factorization(g.modulus());
    if fac.len() != 1 {
        return Err(Error::BadFactorization(format!(
            "modulus {} is not a prime power",
            g.modulus()
        )));
    }
    let (p, s) = fac[0];
    let target = (g.modulus() as u64) * (p as u64);
    if target > MAX_MODULUS as u64 {
        return Err(Error::BudgetExceeded("modulus overflow in lift".into()));
    }
    let target = target as u32;

    let g1 = g.reduce(p)?;
    let mut stable = invariant_subspaces(&g1);
    stable.sort_by_key(|v| (v.dim(), v.basis().to_vec()));

    let mut gens = g.small_generating_set();
    if gens.is_empty() {
        gens.push(ResidueMatrix::identity(g.modulus()));
    }
    let lifted: Vec<ResidueMatrix> = gens.iter().map(|m| lift_unit_det(m, target, p, s)).collect();
    let minus_i_key = ResidueMatrix::neg_identity(target).key();

    let mut counter = 0u64;
    let mut collector = ConjugacyCollector::new(target);
    let mut lifts: Vec<Lift> = Vec::new();
    for v in stable {
        if !v_ok(&v) {
            continue;
        }
        let expected = g.order() * (p as u64).pow(v.dim() as u32);
        let kernel_gens: Vec<ResidueMatrix> = v
            .basis()
            .iter()
            .map(|&b| exp_vector(b, p, s).expect("basis vectors are traceless"))
            .collect();
        let reps = v.complement_representatives();
        let k = lifted.len();
        let mut odo = vec![0usize; k];
        loop {
            budget.charge(&mut counter, "lift corrections")?;
            let mut cand: Vec<ResidueMatrix> = Vec::with_capacity(k + kernel_gens.len());
            for (i, base) in lifted.iter().enumerate() {
                let w = reps[odo[i]];
                let corr = exp_vector(w, p, s).expect("traceless");
                cand.push(base.mul(&corr));
            }
            cand.extend_from_slice(&kernel_gens);
            if let Some(keys) = crate::group::closure_capped(target, &cand, expected) {
                if keys.len() as u64 == expected && keys.binary_search(&minus_i_key).is_ok() {
                    let group = CongruenceGroup::from_keys(target, keys, cand)?;
                    debug_assert_eq!(&group.reduce(g.modulus())?, g);
                    let (_, fresh) = collector.insert(group.clone());
                    if fresh {
                        lifts.push(Lift {
                            group,
                            v: v.clone(),
                        });
                    }
                }
            }
            // advance the odometer over correction tuples
            let mut i = 0;
            while i < k {
                odo[i] += 1;
                if odo[i] < reps.len() {
                    break;
                }
                odo[i] = 0;
                i += 1;
            }
            if i == k {
                break;
            }
        }
    }
    Ok(lifts)
}

/// Lift entries as-is, then rescale the first row so the determinant is 1
/// modulo the larger modulus.
fn lift_unit_det(m: &ResidueMatrix, target: u32, p: u32, s: u32) -> ResidueMatrix {
    let e = m.entries().map(|x| x as i64);
    let n = target as i64;
    let det = (e[0] * e[3] - e[1] * e[2]).rem_euclid(n);
    // det = 1 + k p^s; (1 + k p^s)(1 - k p^s) = 1 mod p^{s+1}
    let ps = (p as i64).pow(s);
    let k = (det - 1) / ps;
    let u = (1 - k * ps).rem_euclid(n);
    ResidueMatrix::new(target, [e[0] * u, e[1] * u, e[2], e[3]]).expect("rescaled determinant")
}

/// Which mod-p classes to seed a prime-power search from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SeedClass {
    All,
    /// p divides the order of the PSL image (the special-triangular branch).
    UnipotentOnly,
    /// p does not divide the order of the PSL image.
    SemisimpleOnly,
}

/// One branch of the prime-power search: the current top group and the
/// kernel spaces accumulated along its reduction chain.
pub struct ChainState {
    pub group: CongruenceGroup,
    pub label: GroupLabel,
    pub v_history: Vec<TracelessSubspace>,
}

pub struct PowerClassification {
    pub records: Vec<ClassificationRecord>,
    pub survivors: Vec<ChainState>,
    /// Groups rejected by the trace-based elliptic closure that the
    /// order-12 hull would have kept; expected empty.
    pub hull_divergences: Vec<String>,
}

/// Does every congruence subgroup containing the elliptic elements have at
/// most 2 cusps, tested via the trace-based closure at the group's level?
fn survives_filter(
    group: &CongruenceGroup,
    budget: &Budget,
    divergences: &mut Vec<String>,
) -> Result<bool> {
    let keep = cusp_count(&elliptic_closure(group), budget)? <= 2;
    if !keep {
        // the order-12 hull contains the trace closure, so it can only
        // disagree by keeping what the closure rejected
        let hull_keep = cusp_count(&order12_hull(group), budget)? <= 2;
        if hull_keep {
            divergences.push(format!(
                "group of order {} mod {} kept by order-12 hull but rejected by trace closure",
                group.order(),
                group.modulus()
            ));
        }
    }
    Ok(keep)
}

fn label_of_mod_p_class(g: &CongruenceGroup, p: u32) -> Result<GroupLabel> {
    if g.is_full_sl2() {
        return Ok(GroupLabel::FullSl2);
    }
    let gbar = g.psl_image();
    if p > 2 && gbar.order() % p as u64 == 0 {
        // the few-cusp filter admits exactly the special triangular class
        // among proper p-divisible subgroups
        if !g.is_conjugate(&borel_group(p)?)? {
            return Err(Error::Inconsistency(format!(
                "p-divisible few-cusp class mod {p} is not conjugate to the triangular group"
            )));
        }
        return Ok(GroupLabel::SpecialTriangular);
    }
    Ok(GroupLabel::Type(abstract_type(&gbar)?))
}

/// Conjugacy classes of subgroups of SL2(F_p) containing -I that pass the
/// few-cusp filter, labelled; includes the full group.
fn classification_seeds(
    p: u32,
    budget: &Budget,
    divergences: &mut Vec<String>,
) -> Result<Vec<ChainState>> {
    let ambient = sl2_ambient(p, budget)?;
    let classes = subgroups_up_to_conjugacy(&ambient, None, budget)?;
    let mut seeds = Vec::new();
    for g in classes {
        if !survives_filter(&g, budget, divergences)? {
            continue;
        }
        let label = label_of_mod_p_class(&g, p)?;
        seeds.push(ChainState {
            group: g,
            label,
            v_history: Vec::new(),
        });
    }
    Ok(seeds)
}

/// Exact-prime-level classification. For p <= 13 the search is exhaustive.
/// For p > 13 no class passes: a semisimple image has order at least
/// (p^2-1)/4 > max(p+1, 60), and the triangular group is generated by its
/// elements of order dividing 12 only for p in {2, 3, 5, 7, 13}.
pub fn classify_prime(p: u32, budget: &Budget) -> Result<Vec<ClassificationRecord>> {
    if p > 13 {
        return Ok(Vec::new());
    }
    let mut divergences = Vec::new();
    let seeds = classification_seeds(p, budget, &mut divergences)?;
    if !divergences.is_empty() {
        return Err(Error::Inconsistency(divergences.join("; ")));
    }
    let mut records = Vec::new();
    for seed in seeds {
        if seed.group.is_full_sl2() {
            continue; // exact level 1
        }
        records.push(make_record(&seed.group, seed.label, budget)?);
    }
    finalize_records(&mut records);
    Ok(records)
}

/// Exact-level-p^e classification by iterated lifting of the mod-p seeds.
pub fn classify_prime_power(
    p: u32,
    e: u32,
    seed_class: SeedClass,
    budget: &Budget,
) -> Result<PowerClassification> {
    assert!(e >= 2, "use classify_prime for e = 1");
    let mut divergences = Vec::new();
    let seeds = classification_seeds(p, budget, &mut divergences)?;
    let mut pool: Vec<ChainState> = seeds
        .into_iter()
        .filter(|c| match seed_class {
            SeedClass::All => true,
            SeedClass::UnipotentOnly => c.label == GroupLabel::SpecialTriangular,
            SeedClass::SemisimpleOnly => matches!(c.label, GroupLabel::Type(_)),
        })
        // A full mod-p image with at most 2 cusps forces the whole group to
        // be full at every level (its V-chain starts at sl2), so for odd p
        // the full seed only reproduces level-1 pullbacks. For p = 2 the
        // full seed carries real branches.
        .filter(|c| p == 2 || c.label != GroupLabel::FullSl2)
        .collect();

    for s in 1..e {
        let mut next: Vec<ChainState> = Vec::new();
        let level = p.pow(s + 1);
        let min_order = (exact_order_count(level) + 1) / 2;
        for chain in &pool {
            let g = &chain.group;
            let prev_v = chain.v_history.last();
            // smallest kernel dimension compatible with the few-cusp bound
            // |H| >= |M_{p^{s+1}}| / 2
            let mut min_dim = 0u32;
            while g.order() * (p as u64).pow(min_dim) < min_order && min_dim <= 3 {
                min_dim += 1;
            }
            let v_ok = |v: &TracelessSubspace| -> bool {
                if v.is_full() || (v.dim() as u32) < min_dim {
                    // a full kernel makes the lift a pullback with smaller
                    // exact level, never an exact-level-p^{s+1} record
                    return false;
                }
                if p == 2 && s == 1 && !v.contains([1, 0, 0]) {
                    return false; // -I = I + 2I forces I into V_1
                }
                if let Some(prev) = prev_v {
                    if p.pow(s - 1) == 2 {
                        // V_1 c V_2 + <I> is all that holds at p^{s-1} = 2
                        let with_i =
                            v.sum(&TracelessSubspace::from_vectors(p, &[[1, 0, 0]]));
                        if !with_i.contains_subspace(prev) {
                            return false;
                        }
                    } else if !v.contains_subspace(prev) {
                        return false;
                    }
                }
                true
            };
            for lift in lift_subgroups_filtered(g, v_ok, budget)? {
                if !survives_filter(&lift.group, budget, &mut divergences)? {
                    continue;
                }
                // only exact-level tops continue: intermediate reductions of
                // an exact-level-p^e group are themselves exact
                if lift.group.exact_level() != level {
                    continue;
                }
                let mut v_history = chain.v_history.clone();
                v_history.push(lift.v);
                next.push(ChainState {
                    group: lift.group,
                    label: chain.label,
                    v_history,
                });
            }
        }
        pool = next;
    }

    let mut records = Vec::new();
    for chain in &pool {
        let rebuilt = ReductionChain::new(&chain.group)?;
        if rebuilt.v_spaces() != chain.v_history.as_slice() {
            return Err(Error::Inconsistency(
                "lift kernels disagree with the recomputed reduction chain".into(),
            ));
        }
        let report = check_v_chain(&rebuilt);
        if !report.violations.is_empty() {
            return Err(Error::Inconsistency(format!(
                "V-chain violations on a classified group: {:?}",
                report.violations
            )));
        }
        records.push(make_record(&chain.group, chain.label, budget)?);
    }
    finalize_records(&mut records);
    Ok(PowerClassification {
        records,
        survivors: pool,
        hull_divergences: divergences,
    })
}

fn make_record(
    group: &CongruenceGroup,
    label: GroupLabel,
    budget: &Budget,
) -> Result<ClassificationRecord> {
    let invariants = invariant_record(group, budget)?;
    let gens = group
        .small_generating_set()
        .iter()
        .map(|m| m.entries())
        .collect();
    Ok(ClassificationRecord {
        digest: group.canonical_form().digest(),
        n: group.modulus(),
        exact_level: group.exact_level(),
        label: label.to_string(),
        invariants,
        multiplicity: 0,
        gens,
    })
}

/// Fill multiplicities (classes sharing a table row) and order output by
/// (exact level, digest).
fn finalize_records(records: &mut Vec<ClassificationRecord>) {
    let mut counts: BTreeMap<(u32, String, String), u32> = BTreeMap::new();
    for r in records.iter() {
        let key = (
            r.exact_level,
            r.label.clone(),
            serde_json::to_string(&r.invariants).expect("serializable"),
        );
        *counts.entry(key).or_insert(0) += 1;
    }
    for r in records.iter_mut() {
        let key = (
            r.exact_level,
            r.label.clone(),
            serde_json::to_string(&r.invariants).expect("serializable"),
        );
        r.multiplicity = counts[&key];
    }
    records.sort_by(|a, b| (a.exact_level, &a.digest).cmp(&(b.exact_level, &b.digest)));
}

/// The full prime-power catalog: the level-1 record, the prime-level
/// records for p <= 13, and the ladder of prime-power records continued
/// until every branch dies.
pub struct Catalog {
    pub level_one: ClassificationRecord,
    pub prime: BTreeMap<u32, Vec<ClassificationRecord>>,
    pub prime_power: Vec<ClassificationRecord>,
    pub hull_divergences: Vec<String>,
}

pub const CLASSIFIED_PRIMES: [u32; 6] = [2, 3, 5, 7, 11, 13];

/// Hard cap on ladder length; the searches terminate well below it, and
/// reaching it would contradict the classification.
const MAX_LADDER_EXPONENT: u32 = 8;

pub fn full_catalog(budget: &Budget) -> Result<Catalog> {
    let one = CongruenceGroup::close(&[], 1)?;
    let level_one = make_record(&one, GroupLabel::FullSl2, budget)?;

    let mut prime = BTreeMap::new();
    let mut prime_power = Vec::new();
    let mut hull_divergences = Vec::new();
    for &p in &CLASSIFIED_PRIMES {
        prime.insert(p, classify_prime(p, budget)?);
        for e in 2..=MAX_LADDER_EXPONENT {
            let out = classify_prime_power(p, e, SeedClass::All, budget)?;
            hull_divergences.extend(out.hull_divergences);
            if out.records.is_empty() {
                break;
            }
            prime_power.extend(out.records);
            if e == MAX_LADDER_EXPONENT {
                return Err(Error::Inconsistency(format!(
                    "classification ladder for p = {p} did not terminate"
                )));
            }
        }
    }
    let mut records = prime_power;
    finalize_records(&mut records);
    let mut catalog = Catalog {
        level_one,
        prime,
        prime_power: records,
        hull_divergences,
    };
    catalog.level_one.multiplicity = 1;
    Ok(catalog)
}

impl Catalog {
    /// Every record, level 1 first, then primes, then higher prime powers.
    pub fn all_records(&self) -> Vec<&ClassificationRecord> {
        let mut out = vec![&self.level_one];
        for recs in self.prime.values() {
            out.extend(recs.iter());
        }
        out.extend(self.prime_power.iter());
        out
    }

    /// Records for which effectivity is not established: the non-Siegelian
    /// ones plus the Unknown verdicts.
    pub fn non_effective_records(&self) -> Vec<&ClassificationRecord> {
        self.all_records()
            .into_iter()
            .filter(|r| {
                !r.invariants.siegelian
                    || r.invariants.verdict == crate::invariants::Verdict::Unknown
            })
            .collect()
    }

    /// For each classified prime, the largest exponent e' such that some
    /// record of exact level p^{e'} is non-Siegelian or Unknown.
    pub fn effectivity_caps(&self) -> BTreeMap<u32, u32> {
        let mut caps: BTreeMap<u32, u32> = CLASSIFIED_PRIMES.iter().map(|&p| (p, 0)).collect();
        for r in self.non_effective_records() {
            for (p, e) in prime_power_factorization(r.exact_level) {
                if let Some(cap) = caps.get_mut(&p) {
                    *cap = (*cap).max(e);
                }
            }
        }
        caps
    }
}

/// The inner lift enumeration needs closure-with-cap from the group module.
#[cfg(test)]
mod tests {
    use super::*;
    use crate::invariants::Verdict;

    fn budget() -> Budget {
        Budget::default()
    }

    #[test]
    fn lifts_of_full_sl2_f3() {
        let full3 = sl2_ambient(3, &budget()).unwrap();
        let lifts = lift_subgroups(&full3, &budget()).unwrap();
        // the full preimage is always among the lifts
        assert!(lifts.iter().any(|l| l.group.is_full_sl2()));
        for l in &lifts {
            assert_eq!(&l.group.reduce(3).unwrap(), full3.as_ref());
        }
        // frozen from the independent subgroup scan of SL2(Z/9) in the
        // oracle integration test: the full preimage plus one section class
        // (the binary tetrahedral group embeds in SL2(Z/9))
        assert_eq!(lifts.len(), 2);
        let orders: Vec<u64> = lifts.iter().map(|l| l.group.order()).collect();
        assert!(orders.contains(&24) && orders.contains(&648));
    }

    #[test]
    fn lifts_of_st_f3_include_the_a_b_plane_class() {
        let st3 = borel_group(3).unwrap();
        let lifts = lift_subgroups(&st3, &budget()).unwrap();
        let ab = TracelessSubspace::from_vectors(3, &[[1, 0, 0], [0, 1, 0]]);
        assert!(lifts.iter().any(|l| l.v == ab && l.group.exact_level() == 9));
    }

    #[test]
    fn classify_prime_5() {
        let recs = classify_prime(5, &budget()).unwrap();
        assert_eq!(recs.len(), 3);
        let mut rows: Vec<(String, u64, u64, u64, u64, u64)> = recs
            .iter()
            .map(|r| {
                (
                    r.label.clone(),
                    r.invariants.mu,
                    r.invariants.nu_inf,
                    r.invariants.nu2,
                    r.invariants.nu3,
                    r.invariants.genus,
                )
            })
            .collect();
        rows.sort();
        assert_eq!(
            rows,
            vec![
                ("A4".into(), 5, 1, 1, 2, 0),
                ("D3".into(), 10, 2, 2, 1, 0),
                ("ST".into(), 6, 2, 2, 0, 0),
            ]
        );
        assert!(recs.iter().all(|r| r.invariants.verdict == Verdict::NonSiegelian));
    }

    #[test]
    fn classify_prime_13_is_only_the_triangular_class() {
        let recs = classify_prime(13, &budget()).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].label, "ST");
        assert_eq!(recs[0].invariants.mu, 14);
    }

    #[test]
    fn classify_prime_large_p_is_empty() {
        assert!(classify_prime(17, &budget()).unwrap().is_empty());
    }

    #[test]
    fn classify_nine() {
        let out = classify_prime_power(3, 2, SeedClass::All, &budget()).unwrap();
        assert_eq!(out.records.len(), 3);
        let mut rows: Vec<(String, u64, u64, u64, u64, u64)> = out
            .records
            .iter()
            .map(|r| {
                (
                    r.label.clone(),
                    r.invariants.mu,
                    r.invariants.nu_inf,
                    r.invariants.nu2,
                    r.invariants.nu3,
                    r.invariants.genus,
                )
            })
            .collect();
        rows.sort();
        assert_eq!(
            rows,
            vec![
                ("C2".into(), 18, 2, 6, 0, 0),
                ("D2".into(), 9, 1, 5, 0, 0),
                ("ST".into(), 12, 2, 0, 3, 0),
            ]
        );
        // the two genus-one order-36 groups with two cusps are rejected by
        // the trace closure (6 cusps) but equal their own order-12 hull;
        // they satisfy the subgroup criterion, so they belong outside the
        // classification, and the divergence report records them
        assert_eq!(out.hull_divergences.len(), 2);
    }

    #[test]
    fn classify_25_finds_the_genus_two_group() {
        let out = classify_prime_power(5, 2, SeedClass::All, &budget()).unwrap();
        assert_eq!(out.records.len(), 1);
        let r = &out.records[0];
        assert_eq!(r.label, "D3");
        assert_eq!(r.invariants.genus, 2);
        assert_eq!(r.invariants.verdict, Verdict::Unknown);
    }
}
