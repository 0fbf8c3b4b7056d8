//! Finite matrix groups inside SL2(Z/nZ): closure from generators, exact
//! level, conjugacy and canonical forms, subgroup enumeration, coset spaces.
//!
//! Groups are explicit sorted element sets (the largest ambient in scope is
//! |SL2(Z/32Z)| = 24576), which keeps orbits, quotients and conjugacy cheap.
//! Every `CongruenceGroup` contains -I: construction force-adjoins it and
//! records whether it had to.

use std::collections::{HashMap, HashSet};
use std::sync::{Arc, Mutex};

use once_cell::sync::Lazy;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::matrix::{sl2_order, ResidueMatrix};

/// Search budgets. `max_ambient_order` caps any computation that has to
/// materialize or scan a full SL2(Z/nZ); `max_branches` caps the number of
/// candidate closures attempted by enumeration searches.
#[derive(Clone, Copy, Debug)]
pub struct Budget {
    pub max_ambient_order: u64,
    pub max_branches: u64,
}

impl Default for Budget {
    fn default() -> Self {
        Budget {
            max_ambient_order: 25_000,
            max_branches: 100_000,
        }
    }
}

impl Budget {
    pub(crate) fn charge(&self, counter: &mut u64, what: &str) -> Result<()> {
        *counter += 1;
        if *counter > self.max_branches {
            return Err(Error::BudgetExceeded(format!(
                "{what}: more than {} branches",
                self.max_branches
            )));
        }
        Ok(())
    }
}

/// BFS closure of the monoid generated by `gens`; equals the generated group
/// because every generator has finite order.
fn closure_keys(n: u32, gens: &[ResidueMatrix]) -> Vec<u128> {
    let id = ResidueMatrix::identity(n);
    let mut seen: HashSet<u128> = HashSet::new();
    seen.insert(id.key());
    let mut frontier = vec![id];
    while let Some(x) = frontier.pop() {
        for g in gens {
            let y = x.mul(g);
            if seen.insert(y.key()) {
                frontier.push(y);
            }
        }
    }
    let mut keys: Vec<u128> = seen.into_iter().collect();
    keys.sort_unstable();
    keys
}

/// Closure BFS that aborts as soon as the set would exceed `cap`.
pub(crate) fn closure_capped(n: u32, gens: &[ResidueMatrix], cap: u64) -> Option<Vec<u128>> {
    let id = ResidueMatrix::identity(n);
    let mut seen: HashSet<u128> = HashSet::new();
    seen.insert(id.key());
    let mut frontier = vec![id];
    while let Some(x) = frontier.pop() {
        for g in gens {
            let y = x.mul(g);
            if seen.insert(y.key()) {
                if seen.len() as u64 > cap {
                    return None;
                }
                frontier.push(y);
            }
        }
    }
    let mut keys: Vec<u128> = seen.into_iter().collect();
    keys.sort_unstable();
    Some(keys)
}

/// Greedy small generating set for an explicitly listed subgroup.
fn small_gens_of_keys(n: u32, keys: &[u128]) -> Vec<ResidueMatrix> {
    let mut gens: Vec<ResidueMatrix> = Vec::new();
    let mut span = closure_keys(n, &gens);
    for &k in keys {
        if span.binary_search(&k).is_err() {
            gens.push(ResidueMatrix::from_key(n, k));
            span = closure_keys(n, &gens);
            if span.len() == keys.len() {
                break;
            }
        }
    }
    gens
}

/// A subgroup of SL2(Z/nZ) containing -I, stored as a sorted element set.
/// Stands for the congruence subgroup of SL2(Z) obtained by pullback.
#[derive(Clone)]
pub struct CongruenceGroup {
    modulus: u32,
    keys: Vec<u128>,
    gens: Vec<ResidueMatrix>,
    adjoined_minus_identity: bool,
}

impl PartialEq for CongruenceGroup {
    fn eq(&self, other: &Self) -> bool {
        self.modulus == other.modulus && self.keys == other.keys
    }
}
impl Eq for CongruenceGroup {}

impl std::fmt::Debug for CongruenceGroup {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "CongruenceGroup(mod {}, order {})",
            self.modulus,
            self.keys.len()
        )
    }
}

impl CongruenceGroup {
    /// Smallest subgroup containing the generators and -I. Records whether
    /// -I had to be adjoined.
    pub fn close(gens: &[ResidueMatrix], n: u32) -> Result<Self> {
        for g in gens {
            if g.modulus() != n {
                return Err(Error::ModulusMismatch {
                    left: n,
                    right: g.modulus(),
                });
            }
        }
        let mut keys = closure_keys(n, gens);
        let minus_i = ResidueMatrix::neg_identity(n);
        let adjoined = keys.binary_search(&minus_i.key()).is_err();
        if adjoined {
            // -I is central, so adjoining it just doubles the set.
            let mut extra: Vec<u128> = keys
                .iter()
                .map(|&k| ResidueMatrix::from_key(n, k).neg().key())
                .collect();
            keys.append(&mut extra);
            keys.sort_unstable();
            keys.dedup();
        }
        let mut all_gens = gens.to_vec();
        if adjoined {
            all_gens.push(minus_i);
        }
        Ok(CongruenceGroup {
            modulus: n,
            keys,
            gens: all_gens,
            adjoined_minus_identity: adjoined,
        })
    }

    /// Wrap an already-closed element set. Fails if -I is missing.
    pub(crate) fn from_keys(n: u32, keys: Vec<u128>, gens: Vec<ResidueMatrix>) -> Result<Self> {
        debug_assert!(keys.windows(2).all(|w| w[0] < w[1]));
        if keys
            .binary_search(&ResidueMatrix::neg_identity(n).key())
            .is_err()
        {
            return Err(Error::Inconsistency(
                "element set does not contain -I".into(),
            ));
        }
        Ok(CongruenceGroup {
            modulus: n,
            keys,
            gens,
            adjoined_minus_identity: false,
        })
    }

    pub fn modulus(&self) -> u32 {
        self.modulus
    }

    pub fn order(&self) -> u64 {
        self.keys.len() as u64
    }

    pub fn minus_identity_adjoined(&self) -> bool {
        self.adjoined_minus_identity
    }

    /// The defining generator list (with -I appended when it was adjoined).
    pub fn generators(&self) -> &[ResidueMatrix] {
        &self.gens
    }

    pub fn element_keys(&self) -> &[u128] {
        &self.keys
    }

    pub fn elements(&self) -> impl Iterator<Item = ResidueMatrix> + '_ {
        let n = self.modulus;
        self.keys.iter().map(move |&k| ResidueMatrix::from_key(n, k))
    }

    pub fn contains(&self, m: &ResidueMatrix) -> bool {
        m.modulus() == self.modulus && self.keys.binary_search(&m.key()).is_ok()
    }

    pub fn is_full_sl2(&self) -> bool {
        self.order() == sl2_order(self.modulus)
    }

    pub fn small_generating_set(&self) -> Vec<ResidueMatrix> {
        small_gens_of_keys(self.modulus, &self.keys)
    }

    /// Image under reduction modulo a divisor d of n.
    pub fn reduce(&self, d: u32) -> Result<CongruenceGroup> {
        if d == 0 || self.modulus % d != 0 {
            return Err(Error::InvalidDivisor {
                modulus: self.modulus,
                divisor: d,
            });
        }
        let mut keys: Vec<u128> = self
            .elements()
            .map(|m| m.reduce_mod(d).expect("divisor checked").key())
            .collect();
        keys.sort_unstable();
        keys.dedup();
        let gens = self
            .gens
            .iter()
            .map(|g| g.reduce_mod(d).expect("divisor checked"))
            .collect();
        CongruenceGroup::from_keys(d, keys, gens)
    }

    /// Full preimage under SL2(Z/nZ) -> SL2(Z/dZ) where d = self.modulus.
    pub fn full_preimage(&self, n: u32, budget: &Budget) -> Result<CongruenceGroup> {
        if n % self.modulus != 0 {
            return Err(Error::InvalidDivisor {
                modulus: n,
                divisor: self.modulus,
            });
        }
        let ambient = sl2_ambient(n, budget)?;
        let d = self.modulus;
        let keys: Vec<u128> = ambient
            .elements()
            .filter(|m| self.contains(&m.reduce_mod(d).expect("divides")))
            .map(|m| m.key())
            .collect();
        let mut gens = small_gens_of_keys(n, &keys);
        if gens.is_empty() {
            gens.push(ResidueMatrix::identity(n));
        }
        CongruenceGroup::from_keys(n, keys, gens)
    }

    /// Smallest divisor d of n such that the group contains the full kernel
    /// of reduction mod d (equivalently: the group is the pullback of its
    /// mod-d image).
    pub fn exact_level(&self) -> u32 {
        let n = self.modulus;
        for d in divisors(n) {
            if self.contains_reduction_kernel(d) {
                return d;
            }
        }
        n
    }

    /// Does the group contain ker(SL2(Z/nZ) -> SL2(Z/dZ))?
    fn contains_reduction_kernel(&self, d: u32) -> bool {
        let n = self.modulus;
        if d == n {
            return true;
        }
        let kernel_order = sl2_order(n) / sl2_order(d);
        if self.order() % kernel_order != 0 {
            return false;
        }
        if d == 1 {
            return self.is_full_sl2();
        }
        // Kernel elements are I + dM; scan all candidates, stop at the first
        // one missing.
        let q = n / d;
        let idm = |i: u32| -> u64 { (i as u64 * d as u64) % n as u64 };
        for a in 0..q {
            for b in 0..q {
                for c in 0..q {
                    for dd in 0..q {
                        let m = [
                            ((1 + idm(a)) % n as u64) as u32,
                            idm(b) as u32,
                            idm(c) as u32,
                            ((1 + idm(dd)) % n as u64) as u32,
                        ];
                        let det = (m[0] as u64 * m[3] as u64 + (n as u64) * (n as u64)
                            - m[1] as u64 * m[2] as u64)
                            % n as u64;
                        if det != 1 % n as u64 {
                            continue;
                        }
                        let key = ((m[0] as u128) << 96)
                            | ((m[1] as u128) << 64)
                            | ((m[2] as u128) << 32)
                            | (m[3] as u128);
                        if self.keys.binary_search(&key).is_err() {
                            return false;
                        }
                    }
                }
            }
        }
        true
    }

    pub fn conjugate_by(&self, x: &ResidueMatrix) -> CongruenceGroup {
        let mut keys: Vec<u128> = self.elements().map(|g| x.conj(&g).key()).collect();
        keys.sort_unstable();
        let gens = self.gens.iter().map(|g| x.conj(g)).collect();
        CongruenceGroup {
            modulus: self.modulus,
            keys,
            gens,
            adjoined_minus_identity: self.adjoined_minus_identity,
        }
    }

    /// Normality in SL2(Z/nZ): S and T generate the ambient group, so
    /// stability under both conjugations suffices.
    pub fn is_normal_in_ambient(&self) -> bool {
        let n = self.modulus;
        for x in [ResidueMatrix::s_matrix(n), ResidueMatrix::t_matrix(n)] {
            for g in &self.gens {
                if !self.contains(&x.conj(g)) {
                    return false;
                }
            }
        }
        true
    }

    /// Canonical form: the lexicographically least sorted element list over
    /// the full SL2(Z/nZ)-conjugation orbit, serialized as bytes.
    pub fn canonical_form(&self) -> CanonicalForm {
        let (min_keys, _) = conjugation_orbit(self.modulus, &self.keys, None);
        CanonicalForm::from_keys(self.modulus, &min_keys)
    }

    /// Conjugacy under SL2(Z/nZ).
    pub fn is_conjugate(&self, other: &CongruenceGroup) -> Result<bool> {
        if self.modulus != other.modulus {
            return Err(Error::ModulusMismatch {
                left: self.modulus,
                right: other.modulus,
            });
        }
        if self.order() != other.order() {
            return Ok(false);
        }
        Ok(self.canonical_form() == other.canonical_form())
    }

    /// All elements of the ambient group normalizing this subgroup.
    pub fn normalizer_in_ambient(&self, budget: &Budget) -> Result<Vec<ResidueMatrix>> {
        let ambient = sl2_ambient(self.modulus, budget)?;
        let gens = self.small_generating_set();
        Ok(ambient
            .elements()
            .filter(|x| gens.iter().all(|g| self.contains(&x.conj(g))))
            .collect())
    }

    /// Group JSON encoding: {"n": 9, "gens": [[2,8,3,8], ...]}.
    pub fn to_json(&self) -> serde_json::Value {
        let gens: Vec<[u32; 4]> = self.gens.iter().map(|g| g.entries()).collect();
        serde_json::json!({ "n": self.modulus, "gens": gens })
    }

    pub fn from_json(v: &serde_json::Value) -> Result<CongruenceGroup> {
        let enc: GroupJson = serde_json::from_value(v.clone())?;
        let gens = enc
            .gens
            .iter()
            .map(|e| ResidueMatrix::new(enc.n, e.map(|x| x as i64)))
            .collect::<Result<Vec<_>>>()?;
        CongruenceGroup::close(&gens, enc.n)
    }
}

#[derive(Serialize, Deserialize)]
struct GroupJson {
    n: u32,
    gens: Vec<[u32; 4]>,
}

/// Canonical byte string for a conjugacy class of subgroups; equal for
/// conjugates, distinct otherwise.
#[derive(Clone, PartialEq, Eq)]
pub struct CanonicalForm {
    bytes: Vec<u8>,
}

impl CanonicalForm {
    fn from_keys(modulus: u32, keys: &[u128]) -> Self {
        let mut bytes = Vec::with_capacity(4 + keys.len() * 16);
        bytes.extend_from_slice(&modulus.to_le_bytes());
        for k in keys {
            bytes.extend_from_slice(&k.to_le_bytes());
        }
        CanonicalForm { bytes }
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    /// Lowercase hex digest used in classification output and cache keys.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(&self.bytes))
    }
}

fn set_digest(modulus: u32, keys: &[u128]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(modulus.to_le_bytes());
    for k in keys {
        h.update(k.to_le_bytes());
    }
    h.finalize().into()
}

/// Walk the orbit of an element set under conjugation by S and T (which
/// generate the ambient group). Returns the lexicographically least sorted
/// set and, when `collect` is set, the digests of every set in the orbit.
fn conjugation_orbit(
    n: u32,
    keys: &[u128],
    mut collect: Option<&mut Vec<[u8; 32]>>,
) -> (Vec<u128>, usize) {
    let conjugators = [ResidueMatrix::s_matrix(n), ResidueMatrix::t_matrix(n)];
    let mut seen: HashSet<[u8; 32]> = HashSet::new();
    let start = keys.to_vec();
    seen.insert(set_digest(n, &start));
    if let Some(ref mut v) = collect {
        v.push(set_digest(n, &start));
    }
    let mut best = start.clone();
    let mut frontier = vec![start];
    let mut orbit = 1usize;
    while let Some(cur) = frontier.pop() {
        for x in &conjugators {
            let mut img: Vec<u128> = cur
                .iter()
                .map(|&k| x.conj(&ResidueMatrix::from_key(n, k)).key())
                .collect();
            img.sort_unstable();
            let d = set_digest(n, &img);
            if seen.insert(d) {
                orbit += 1;
                if img < best {
                    best = img.clone();
                }
                if let Some(ref mut v) = collect {
                    v.push(d);
                }
                frontier.push(img);
            }
        }
    }
    (best, orbit)
}

/// Deduplicates groups up to SL2(Z/nZ)-conjugacy. The first time a class is
/// seen, its whole conjugation orbit is indexed, so subsequent members cost
/// one digest lookup.
pub struct ConjugacyCollector {
    modulus: u32,
    seen: HashMap<[u8; 32], usize>,
    classes: Vec<(CongruenceGroup, String)>,
}

impl ConjugacyCollector {
    pub fn new(modulus: u32) -> Self {
        ConjugacyCollector {
            modulus,
            seen: HashMap::new(),
            classes: Vec::new(),
        }
    }

    /// Returns (class id, freshly inserted?).
    pub fn insert(&mut self, group: CongruenceGroup) -> (usize, bool) {
        debug_assert_eq!(group.modulus, self.modulus);
        let d = set_digest(self.modulus, &group.keys);
        if let Some(&id) = self.seen.get(&d) {
            return (id, false);
        }
        let mut digests = Vec::new();
        let (min_keys, _) = conjugation_orbit(self.modulus, &group.keys, Some(&mut digests));
        let canonical = CanonicalForm::from_keys(self.modulus, &min_keys).digest();
        let id = self.classes.len();
        for dg in digests {
            self.seen.insert(dg, id);
        }
        self.classes.push((group, canonical));
        (id, true)
    }

    pub fn contains_digest_of(&self, group: &CongruenceGroup) -> Option<usize> {
        self.seen
            .get(&set_digest(self.modulus, &group.keys))
            .copied()
    }

    pub fn classes(&self) -> &[(CongruenceGroup, String)] {
        &self.classes
    }

    pub fn into_classes(self) -> Vec<(CongruenceGroup, String)> {
        self.classes
    }
}

static AMBIENT_CACHE: Lazy<Mutex<HashMap<u32, Arc<CongruenceGroup>>>> =
    Lazy::new(|| Mutex::new(HashMap::new()));

/// The full SL2(Z/nZ) as an explicit group, cached per modulus. Generated by
/// S and T (surjectivity of SL2(Z) -> SL2(Z/nZ)).
pub fn sl2_ambient(n: u32, budget: &Budget) -> Result<Arc<CongruenceGroup>> {
    if sl2_order(n) > budget.max_ambient_order {
        return Err(Error::BudgetExceeded(format!(
            "|SL2(Z/{n})| = {} exceeds ambient budget {}",
            sl2_order(n),
            budget.max_ambient_order
        )));
    }
    let mut cache = AMBIENT_CACHE.lock().unwrap();
    if let Some(g) = cache.get(&n) {
        return Ok(Arc::clone(g));
    }
    let gens = vec![ResidueMatrix::s_matrix(n), ResidueMatrix::t_matrix(n)];
    let group = CongruenceGroup::close(&gens, n)?;
    debug_assert_eq!(group.order(), sl2_order(n));
    let arc = Arc::new(group);
    cache.insert(n, Arc::clone(&arc));
    Ok(arc)
}

pub fn divisors(n: u32) -> Vec<u32> {
    let mut out: Vec<u32> = (1..=n).filter(|d| n % d == 0).collect();
    out.sort_unstable();
    out
}

/// One representative per conjugacy class of subgroups of SL2(Z/nZ) that
/// contain -I, found by bottom-up extension from {-I, I}: every such
/// subgroup tops a chain of -I-subgroups in which each step is generated by
/// its predecessor and one extra element.
pub fn subgroups_up_to_conjugacy(
    ambient: &CongruenceGroup,
    max_order: Option<u64>,
    budget: &Budget,
) -> Result<Vec<CongruenceGroup>> {
    if ambient.order() > budget.max_ambient_order {
        return Err(Error::BudgetExceeded(format!(
            "ambient order {} exceeds budget {}",
            ambient.order(),
            budget.max_ambient_order
        )));
    }
    let n = ambient.modulus();
    let cap = max_order.unwrap_or(u64::MAX);
    let mut counter = 0u64;
    let mut collector = ConjugacyCollector::new(n);
    let seed = CongruenceGroup::close(&[], n)?;
    if seed.order() > cap {
        return Ok(Vec::new());
    }
    let (seed_id, _) = collector.insert(seed);
    let mut worklist = vec![seed_id];
    while let Some(id) = worklist.pop() {
        let group = collector.classes()[id].0.clone();
        if group.order() == ambient.order() {
            continue;
        }
        let gens = group.small_generating_set();
        // Conjugation by the normalizer permutes the extensions of this
        // class, so one g per normalizer-orbit suffices.
        let normalizer: Vec<ResidueMatrix> = ambient
            .elements()
            .filter(|x| gens.iter().all(|g| group.contains(&x.conj(g))))
            .collect();
        let norm_keys: Vec<u128> = {
            let mut v: Vec<u128> = normalizer.iter().map(|m| m.key()).collect();
            v.sort_unstable();
            v
        };
        let norm_gens = small_gens_of_keys(n, &norm_keys);
        let mut visited: HashSet<u128> = HashSet::new();
        for x in ambient.elements() {
            let xk = x.key();
            if visited.contains(&xk) || group.contains(&x) {
                continue;
            }
            // orbit of x under conjugation by the normalizer
            let mut orbit = vec![xk];
            visited.insert(xk);
            let mut i = 0;
            while i < orbit.len() {
                let y = ResidueMatrix::from_key(n, orbit[i]);
                for u in &norm_gens {
                    let z = u.conj(&y).key();
                    if visited.insert(z) {
                        orbit.push(z);
                    }
                }
                i += 1;
            }
            budget.charge(&mut counter, "subgroup enumeration")?;
            let mut ext_gens = gens.clone();
            ext_gens.push(x);
            ext_gens.push(ResidueMatrix::neg_identity(n));
            let extended = CongruenceGroup::close(&ext_gens, n)?;
            if extended.order() > cap {
                continue;
            }
            let (new_id, fresh) = collector.insert(extended);
            if fresh {
                worklist.push(new_id);
            }
        }
    }
    let mut out: Vec<CongruenceGroup> = collector
        .into_classes()
        .into_iter()
        .map(|(g, _)| g)
        .collect();
    out.sort_by_key(|g| (g.order(), g.element_keys().to_vec()));
    Ok(out)
}

/// A raw subgroup (no -I requirement): used for normal-subgroup enumeration
/// and oracle-style sweeps.
#[derive(Clone, PartialEq, Eq)]
pub struct RawSubgroup {
    pub modulus: u32,
    pub keys: Vec<u128>,
}

impl RawSubgroup {
    pub fn order(&self) -> u64 {
        self.keys.len() as u64
    }

    pub fn contains_key(&self, k: u128) -> bool {
        self.keys.binary_search(&k).is_ok()
    }
}

/// All normal subgroups of `ambient`, via joins of normal closures of
/// conjugacy classes. Every normal subgroup is the join of the normal
/// closures of its elements, so the fixpoint is exhaustive.
pub fn normal_subgroups(ambient: &CongruenceGroup, budget: &Budget) -> Result<Vec<RawSubgroup>> {
    let n = ambient.modulus();
    if ambient.order() > budget.max_ambient_order {
        return Err(Error::BudgetExceeded("normal subgroup enumeration".into()));
    }
    let mut counter = 0u64;
    // conjugacy classes of elements
    let mut class_of: HashMap<u128, usize> = HashMap::new();
    let mut reps: Vec<ResidueMatrix> = Vec::new();
    let conj_gens = [ResidueMatrix::s_matrix(n), ResidueMatrix::t_matrix(n)];
    for x in ambient.elements() {
        if class_of.contains_key(&x.key()) {
            continue;
        }
        let cid = reps.len();
        reps.push(x);
        let mut orbit = vec![x.key()];
        class_of.insert(x.key(), cid);
        let mut i = 0;
        while i < orbit.len() {
            let y = ResidueMatrix::from_key(n, orbit[i]);
            for u in &conj_gens {
                let z = u.conj(&y).key();
                if let std::collections::hash_map::Entry::Vacant(e) = class_of.entry(z) {
                    e.insert(cid);
                    orbit.push(z);
                }
            }
            i += 1;
        }
    }
    // normal closures of single classes
    let mut by_digest: HashMap<[u8; 32], usize> = HashMap::new();
    let mut found: Vec<RawSubgroup> = Vec::new();
    let push = |keys: Vec<u128>, found: &mut Vec<RawSubgroup>,
                    by_digest: &mut HashMap<[u8; 32], usize>|
     -> bool {
        let d = set_digest(n, &keys);
        if by_digest.contains_key(&d) {
            return false;
        }
        by_digest.insert(d, found.len());
        found.push(RawSubgroup { modulus: n, keys });
        true
    };
    push(
        vec![ResidueMatrix::identity(n).key()],
        &mut found,
        &mut by_digest,
    );
    for rep in &reps {
        budget.charge(&mut counter, "normal closures")?;
        // normal closure = subgroup generated by the whole conjugacy class
        let class_members: Vec<ResidueMatrix> = ambient
            .elements()
            .filter(|x| class_of[&x.key()] == class_of[&rep.key()])
            .collect();
        let keys = closure_keys(n, &class_members);
        push(keys, &mut found, &mut by_digest);
    }
    // joins to fixpoint
    let mut i = 0;
    while i < found.len() {
        let mut j = 0;
        while j < found.len() {
            if found[i].keys.len() < ambient.order() as usize
                && found[j].keys.len() < ambient.order() as usize
            {
                let a = &found[i];
                let b = &found[j];
                if !(a.keys.iter().all(|k| b.contains_key(*k))
                    || b.keys.iter().all(|k| a.contains_key(*k)))
                {
                    budget.charge(&mut counter, "normal joins")?;
                    let gens: Vec<ResidueMatrix> = a
                        .keys
                        .iter()
                        .chain(b.keys.iter())
                        .map(|&k| ResidueMatrix::from_key(n, k))
                        .collect();
                    let keys = closure_keys(n, &gens);
                    push(keys, &mut found, &mut by_digest);
                }
            }
            j += 1;
        }
        i += 1;
    }
    found.sort_by_key(|g| (g.order(), g.keys.clone()));
    Ok(found)
}

/// The PSL image: elements identified with their negatives, represented by
/// the lexicographically smaller of {x, -x}.
#[derive(Clone, PartialEq, Eq)]
pub struct PslGroup {
    modulus: u32,
    reps: Vec<u128>,
}

pub fn psl_canon(m: &ResidueMatrix) -> u128 {
    m.key().min(m.neg().key())
}

impl PslGroup {
    pub fn modulus(&self) -> u32 {
        self.modulus
    }

    pub fn order(&self) -> u64 {
        self.reps.len() as u64
    }

    pub fn rep_keys(&self) -> &[u128] {
        &self.reps
    }

    pub fn contains_key(&self, canon: u128) -> bool {
        self.reps.binary_search(&canon).is_ok()
    }

    pub fn mul_canon(&self, a: u128, b: u128) -> u128 {
        let x = ResidueMatrix::from_key(self.modulus, a);
        let y = ResidueMatrix::from_key(self.modulus, b);
        psl_canon(&x.mul(&y))
    }

    /// Order of an element in the quotient.
    pub fn element_order(&self, a: u128) -> u64 {
        let id = psl_canon(&ResidueMatrix::identity(self.modulus));
        let mut x = a;
        let mut k = 1;
        while x != id {
            x = self.mul_canon(x, a);
            k += 1;
        }
        k
    }
}

impl CongruenceGroup {
    /// |image| = |G|/2 for n > 2, |G| for n <= 2.
    pub fn psl_image(&self) -> PslGroup {
        let mut reps: Vec<u128> = self.elements().map(|m| psl_canon(&m)).collect();
        reps.sort_unstable();
        reps.dedup();
        PslGroup {
            modulus: self.modulus,
            reps,
        }
    }
}

/// Right cosets of the PSL image inside PSL2(Z/nZ), with the right
/// multiplication action of the images of S, T and [[0,-1],[1,-1]].
pub struct CosetSpace {
    subgroup_order: u64,
    s_action: Vec<u32>,
    t_action: Vec<u32>,
    r3_action: Vec<u32>,
}

impl CosetSpace {
    pub fn index(&self) -> u64 {
        self.s_action.len() as u64
    }

    pub fn subgroup_order(&self) -> u64 {
        self.subgroup_order
    }

    pub fn s_fixed_points(&self) -> u64 {
        count_fixed(&self.s_action)
    }

    pub fn r3_fixed_points(&self) -> u64 {
        count_fixed(&self.r3_action)
    }

    pub fn t_orbit_count(&self) -> u64 {
        count_cycles(&self.t_action)
    }
}

fn count_fixed(perm: &[u32]) -> u64 {
    perm.iter()
        .enumerate()
        .filter(|(i, &v)| *i as u32 == v)
        .count() as u64
}

fn count_cycles(perm: &[u32]) -> u64 {
    let mut seen = vec![false; perm.len()];
    let mut cycles = 0;
    for start in 0..perm.len() {
        if seen[start] {
            continue;
        }
        cycles += 1;
        let mut i = start;
        while !seen[i] {
            seen[i] = true;
            i = perm[i] as usize;
        }
    }
    cycles
}

/// Builds the coset space of the PSL image of `group`. Requires -I (a
/// construction invariant) and an ambient within budget.
pub fn coset_space(group: &CongruenceGroup, budget: &Budget) -> Result<CosetSpace> {
    let n = group.modulus();
    let ambient = sl2_ambient(n, budget)?;
    let gbar = group.psl_image();

    // canonical PSL element list of the ambient group
    let mut psl_elems: Vec<u128> = ambient.elements().map(|m| psl_canon(&m)).collect();
    psl_elems.sort_unstable();
    psl_elems.dedup();

    let mut label: HashMap<u128, u32> = HashMap::with_capacity(psl_elems.len());
    let mut rep_of: Vec<u128> = Vec::new();
    for &y in &psl_elems {
        if label.contains_key(&y) {
            continue;
        }
        let lab = rep_of.len() as u32;
        rep_of.push(y);
        let ym = ResidueMatrix::from_key(n, y);
        for gk in gbar.rep_keys() {
            let g = ResidueMatrix::from_key(n, *gk);
            label.insert(psl_canon(&g.mul(&ym)), lab);
        }
    }
    let cosets = rep_of.len() as u64;
    let expected = crate::matrix::psl2_order(n) / gbar.order();
    if cosets != expected {
        return Err(Error::Inconsistency(format!(
            "coset count {cosets} != |PSL|/|Gbar| = {expected}"
        )));
    }

    let act = |m: &ResidueMatrix| -> Vec<u32> {
        rep_of
            .iter()
            .map(|&rk| {
                let r = ResidueMatrix::from_key(n, rk);
                label[&psl_canon(&r.mul(m))]
            })
            .collect()
    };
    Ok(CosetSpace {
        subgroup_order: gbar.order(),
        s_action: act(&ResidueMatrix::s_matrix(n)),
        t_action: act(&ResidueMatrix::t_matrix(n)),
        r3_action: act(&ResidueMatrix::elliptic_rotation(n)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn budget() -> Budget {
        Budget::default()
    }

    #[test]
    fn closure_of_s_and_t_mod_2_is_whole_group() {
        let g = CongruenceGroup::close(
            &[ResidueMatrix::s_matrix(2), ResidueMatrix::t_matrix(2)],
            2,
        )
        .unwrap();
        assert_eq!(g.order(), 6);
        assert!(g.is_full_sl2());
    }

    #[test]
    fn closure_of_minus_identity_mod_5() {
        let g = CongruenceGroup::close(&[ResidueMatrix::neg_identity(5)], 5).unwrap();
        assert_eq!(g.order(), 2);
        assert!(!g.minus_identity_adjoined());
        let h = CongruenceGroup::close(&[], 5).unwrap();
        assert_eq!(h.order(), 2);
        assert!(h.minus_identity_adjoined());
    }

    fn level9_exceptional() -> CongruenceGroup {
        let gens = [
            ResidueMatrix::new(9, [2, 8, 3, 8]).unwrap(),
            ResidueMatrix::new(9, [1, 3, 0, 1]).unwrap(),
            ResidueMatrix::new(9, [4, 0, 0, 7]).unwrap(),
        ];
        CongruenceGroup::close(&gens, 9).unwrap()
    }

    #[test]
    fn level9_group_has_exact_level_9() {
        let g = level9_exceptional();
        assert_eq!(g.order(), 54);
        assert_eq!(g.exact_level(), 9);
    }

    #[test]
    fn psl_image_sizes() {
        let pm = CongruenceGroup::close(&[], 5).unwrap();
        assert_eq!(pm.psl_image().order(), 1);

        let sl3 = sl2_ambient(3, &budget()).unwrap();
        assert_eq!(sl3.order(), 24);
        assert_eq!(sl3.psl_image().order(), 12);

        let sl2 = sl2_ambient(2, &budget()).unwrap();
        assert_eq!(sl2.psl_image().order(), 6);
    }

    #[test]
    fn exact_levels() {
        let full9 = sl2_ambient(9, &budget()).unwrap();
        assert_eq!(full9.exact_level(), 1);

        // full preimage of the special triangular group mod 3
        let st3 = CongruenceGroup::close(
            &[
                ResidueMatrix::t_matrix(3),
                ResidueMatrix::new(3, [2, 0, 0, 2]).unwrap(),
            ],
            3,
        )
        .unwrap();
        let pre = st3.full_preimage(9, &budget()).unwrap();
        assert_eq!(pre.order(), st3.order() * 27);
        assert_eq!(pre.exact_level(), 3);
    }

    #[test]
    fn conjugates_share_canonical_form() {
        let g = level9_exceptional();
        let x = ResidueMatrix::new(9, [1, 4, 2, 0]).unwrap();
        let conj = g.conjugate_by(&x);
        assert!(g.is_conjugate(&conj).unwrap());
        assert_eq!(
            g.canonical_form().digest(),
            conj.canonical_form().digest()
        );
    }

    #[test]
    fn borel_conjugates_mod_5_have_one_canonical_form() {
        let borel = CongruenceGroup::close(
            &[
                ResidueMatrix::t_matrix(5),
                ResidueMatrix::new(5, [2, 0, 0, 3]).unwrap(),
            ],
            5,
        )
        .unwrap();
        let ambient = sl2_ambient(5, &budget()).unwrap();
        let mut digests: HashSet<String> = HashSet::new();
        for x in ambient.elements().take(40) {
            digests.insert(borel.conjugate_by(&x).canonical_form().digest());
        }
        assert_eq!(digests.len(), 1);
    }

    #[test]
    fn subgroup_classes_of_sl2_mod_2() {
        let ambient = sl2_ambient(2, &budget()).unwrap();
        let classes = subgroups_up_to_conjugacy(&ambient, None, &budget()).unwrap();
        let orders: Vec<u64> = classes.iter().map(|g| g.order()).collect();
        assert_eq!(orders, vec![1, 2, 3, 6]);
    }

    #[test]
    fn lagrange_holds_for_enumerated_subgroups() {
        for n in [3u32, 4, 5] {
            let ambient = sl2_ambient(n, &budget()).unwrap();
            let classes = subgroups_up_to_conjugacy(&ambient, None, &budget()).unwrap();
            for g in &classes {
                assert_eq!(ambient.order() % g.order(), 0, "n={n}");
            }
        }
    }

    #[test]
    fn canonical_form_invariance_exhaustive_small_moduli() {
        for n in [2u32, 3, 4] {
            let ambient = sl2_ambient(n, &budget()).unwrap();
            let classes = subgroups_up_to_conjugacy(&ambient, None, &budget()).unwrap();
            for g in &classes {
                let d = g.canonical_form().digest();
                for x in ambient.elements() {
                    assert_eq!(g.conjugate_by(&x).canonical_form().digest(), d);
                }
            }
        }
    }

    #[test]
    fn coset_space_counts() {
        let full7 = sl2_ambient(7, &budget()).unwrap();
        assert_eq!(coset_space(&full7, &budget()).unwrap().index(), 1);

        let borel13 = CongruenceGroup::close(
            &[
                ResidueMatrix::t_matrix(13),
                ResidueMatrix::new(13, [2, 0, 0, 7]).unwrap(),
            ],
            13,
        )
        .unwrap();
        assert_eq!(coset_space(&borel13, &budget()).unwrap().index(), 14);

        let pm3 = CongruenceGroup::close(&[], 3).unwrap();
        assert_eq!(coset_space(&pm3, &budget()).unwrap().index(), 12);
    }

    #[test]
    fn exact_level_of_reduction_pullback_divides() {
        let g = level9_exceptional();
        let red = g.reduce(3).unwrap();
        let pre = red.full_preimage(9, &budget()).unwrap();
        assert!(3 % pre.exact_level() == 0);
    }

    #[test]
    fn normal_subgroups_of_sl2_f5() {
        let ambient = sl2_ambient(5, &budget()).unwrap();
        let normals = normal_subgroups(&ambient, &budget()).unwrap();
        let orders: Vec<u64> = normals.iter().map(|g| g.order()).collect();
        assert_eq!(orders, vec![1, 2, 120]);
    }

    #[test]
    fn group_json_round_trip() {
        let g = level9_exceptional();
        let v = g.to_json();
        let back = CongruenceGroup::from_json(&v).unwrap();
        assert_eq!(g, back);
    }
}
