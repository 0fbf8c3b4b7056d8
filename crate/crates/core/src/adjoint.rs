//! The traceless 2x2 matrices over F_p under the conjugation action, the
//! exponential map identifying reduction kernels with subspaces, and the
//! structural checks on chains of reductions modulo p^s.
//!
//! Coordinates are always taken in the basis A = [[1,0],[0,-1]],
//! B = [[0,1],[0,0]], C = [[0,0],[1,0]]; a coordinate triple (a, b, c) is
//! the matrix [[a, b], [c, -a]]. For p = 2 the matrix A equals I, which is
//! traceless in characteristic 2.

use crate::error::{Error, Result};
use crate::group::{Budget, CongruenceGroup, PslGroup};
use crate::matrix::{prime_power_factorization, ResidueMatrix};

/// A subspace of sl2(F_p), stored as a reduced row-echelon basis of
/// coordinate triples, so equal subspaces compare equal.
#[derive(Clone, PartialEq, Eq)]
pub struct TracelessSubspace {
    p: u32,
    rows: Vec<[u32; 3]>,
}

impl std::fmt::Debug for TracelessSubspace {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "span{:?} over F_{}", self.rows, self.p)
    }
}

fn mod_inv_prime(a: u64, p: u64) -> u64 {
    // p prime, a nonzero mod p
    let mut result = 1u64;
    let mut base = a % p;
    let mut e = p - 2;
    while e > 0 {
        if e & 1 == 1 {
            result = result * base % p;
        }
        base = base * base % p;
        e >>= 1;
    }
    result
}

impl TracelessSubspace {
    pub fn zero(p: u32) -> Self {
        TracelessSubspace { p, rows: Vec::new() }
    }

    pub fn full(p: u32) -> Self {
        TracelessSubspace::from_vectors(p, &[[1, 0, 0], [0, 1, 0], [0, 0, 1]])
    }

    /// Row-reduce the given coordinate vectors into a canonical basis.
    pub fn from_vectors(p: u32, vectors: &[[u32; 3]]) -> Self {
        let pp = p as u64;
        let mut rows: Vec<[u64; 3]> = vectors
            .iter()
            .map(|v| [v[0] as u64 % pp, v[1] as u64 % pp, v[2] as u64 % pp])
            .collect();
        let mut basis: Vec<[u64; 3]> = Vec::new();
        let mut pivot_cols: Vec<usize> = Vec::new();
        for col in 0..3 {
            // find a row with nonzero entry in col
            let Some(idx) = rows.iter().position(|r| r[col] != 0) else {
                continue;
            };
            let mut pivot = rows.swap_remove(idx);
            let inv = mod_inv_prime(pivot[col], pp);
            for x in pivot.iter_mut() {
                *x = *x * inv % pp;
            }
            for r in rows.iter_mut() {
                let f = r[col];
                if f != 0 {
                    for c in 0..3 {
                        r[c] = (r[c] + (pp - f) * pivot[c]) % pp;
                    }
                }
            }
            for b in basis.iter_mut() {
                let f = b[col];
                if f != 0 {
                    for c in 0..3 {
                        b[c] = (b[c] + (pp - f) * pivot[c]) % pp;
                    }
                }
            }
            basis.push(pivot);
            pivot_cols.push(col);
            rows.retain(|r| r.iter().any(|&x| x != 0));
        }
        TracelessSubspace {
            p,
            rows: basis
                .into_iter()
                .map(|r| [r[0] as u32, r[1] as u32, r[2] as u32])
                .collect(),
        }
    }

    pub fn prime(&self) -> u32 {
        self.p
    }

    pub fn dim(&self) -> usize {
        self.rows.len()
    }

    pub fn is_full(&self) -> bool {
        self.dim() == 3
    }

    pub fn basis(&self) -> &[[u32; 3]] {
        &self.rows
    }

    pub fn contains(&self, v: [u32; 3]) -> bool {
        let pp = self.p as u64;
        let mut v = [v[0] as u64 % pp, v[1] as u64 % pp, v[2] as u64 % pp];
        for row in &self.rows {
            let col = row.iter().position(|&x| x == 1).unwrap_or(3);
            let col = (0..3)
                .find(|&c| row[c] != 0)
                .unwrap_or(col);
            let f = v[col];
            if f != 0 {
                for c in 0..3 {
                    v[c] = (v[c] + (pp - f) * row[c] as u64) % pp;
                }
            }
        }
        v.iter().all(|&x| x == 0)
    }

    pub fn contains_subspace(&self, other: &TracelessSubspace) -> bool {
        other.rows.iter().all(|&r| self.contains(r))
    }

    pub fn sum(&self, other: &TracelessSubspace) -> TracelessSubspace {
        let mut vs: Vec<[u32; 3]> = self.rows.clone();
        vs.extend_from_slice(&other.rows);
        TracelessSubspace::from_vectors(self.p, &vs)
    }

    /// All vectors of the subspace, |V| = p^dim of them.
    pub fn all_vectors(&self) -> Vec<[u32; 3]> {
        let p = self.p as u64;
        let mut out = vec![[0u32; 3]];
        for row in &self.rows {
            let mut next = Vec::with_capacity(out.len() * self.p as usize);
            for v in &out {
                for k in 0..p {
                    next.push([
                        ((v[0] as u64 + k * row[0] as u64) % p) as u32,
                        ((v[1] as u64 + k * row[1] as u64) % p) as u32,
                        ((v[2] as u64 + k * row[2] as u64) % p) as u32,
                    ]);
                }
            }
            out = next;
        }
        out
    }

    /// Coset representatives of this subspace inside sl2(F_p).
    pub fn complement_representatives(&self) -> Vec<[u32; 3]> {
        let p = self.p;
        let mut reps = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for a in 0..p {
            for b in 0..p {
                for c in 0..p {
                    let v = [a, b, c];
                    let canon = self.reduce_vector(v);
                    if seen.insert(canon) {
                        reps.push(canon);
                    }
                }
            }
        }
        reps.sort_unstable();
        reps
    }

    /// Canonical representative of v + V.
    fn reduce_vector(&self, v: [u32; 3]) -> [u32; 3] {
        let pp = self.p as u64;
        let mut v = [v[0] as u64, v[1] as u64, v[2] as u64];
        for row in &self.rows {
            let col = (0..3).find(|&c| row[c] != 0).expect("nonzero row");
            let f = v[col];
            if f != 0 {
                for c in 0..3 {
                    v[c] = (v[c] + (pp - f) * row[c] as u64) % pp;
                }
            }
        }
        [v[0] as u32, v[1] as u32, v[2] as u32]
    }
}

/// Coordinates of the traceless matrix [[a,b],[c,-a]] mod p read off a
/// kernel element, i.e. the inverse of `matrix_of_coords`.
pub fn coords_of_matrix(m00: u32, m01: u32, m10: u32) -> [u32; 3] {
    [m00, m01, m10]
}

/// The matrix a*A + b*B + c*C reduced mod m (entries only; no determinant
/// requirement).
pub fn matrix_of_coords(v: [u32; 3], m: u32) -> [u32; 4] {
    let a = v[0] % m;
    [a, v[1] % m, v[2] % m, (m - a) % m]
}

/// exp(M) = I + p^s * lift(M) in SL2(Z/p^{r+s}Z), for M traceless over
/// Z/p^rZ with r <= s. The determinant is 1 + p^s tr + p^{2s} det, so the
/// image lands in SL2 and does not depend on the lift.
pub fn exp_map(entries: [i64; 4], p: u32, r: u32, s: u32) -> Result<ResidueMatrix> {
    if r > s {
        return Err(Error::ExpDomain(format!("r = {r} exceeds s = {s}")));
    }
    let pr = (p as u64).checked_pow(r).ok_or_else(overflow)?;
    let prs = (p as u64)
        .checked_pow(r + s)
        .filter(|&m| m <= crate::matrix::MAX_MODULUS as u64)
        .ok_or_else(overflow)?;
    let trace = (entries[0] + entries[3]).rem_euclid(pr as i64);
    if trace != 0 {
        return Err(Error::ExpDomain(format!(
            "trace {trace} is nonzero modulo p^r = {pr}"
        )));
    }
    let ps = (p as u64).pow(s) as i64;
    let n = prs as i64;
    let e = [
        1 + ps * entries[0].rem_euclid(n),
        ps * entries[1].rem_euclid(n),
        ps * entries[2].rem_euclid(n),
        1 + ps * entries[3].rem_euclid(n),
    ];
    ResidueMatrix::new(prs as u32, e)
}

fn overflow() -> Error {
    Error::ExpDomain("modulus overflow".into())
}

/// exp of a coordinate triple with r = 1: I + p^s (aA + bB + cC) mod p^{s+1}.
pub fn exp_vector(v: [u32; 3], p: u32, s: u32) -> Result<ResidueMatrix> {
    exp_map(
        [v[0] as i64, v[1] as i64, v[2] as i64, -(v[0] as i64)],
        p,
        1,
        s,
    )
}

/// All subspaces of sl2(F_p): 1 + 2(p^2 + p + 1) + 1 of them.
pub fn all_subspaces(p: u32) -> Vec<TracelessSubspace> {
    let mut out = vec![TracelessSubspace::zero(p)];
    // lines: one normalized direction vector each
    let mut lines = Vec::new();
    for a in 0..p {
        for b in 0..p {
            for c in 0..p {
                let v = [a, b, c];
                if v == [0, 0, 0] {
                    continue;
                }
                let first = *v.iter().find(|&&x| x != 0).unwrap();
                if first != 1 {
                    continue;
                }
                lines.push(TracelessSubspace::from_vectors(p, &[v]));
            }
        }
    }
    out.extend(lines.iter().cloned());
    // planes: kernels of normalized functionals
    for a in 0..p {
        for b in 0..p {
            for c in 0..p {
                let f = [a, b, c];
                if f == [0, 0, 0] {
                    continue;
                }
                let first = *f.iter().find(|&&x| x != 0).unwrap();
                if first != 1 {
                    continue;
                }
                let mut vs = Vec::new();
                for x in 0..p {
                    for y in 0..p {
                        for z in 0..p {
                            if (a as u64 * x as u64 + b as u64 * y as u64 + c as u64 * z as u64)
                                % p as u64
                                == 0
                            {
                                vs.push([x, y, z]);
                            }
                        }
                    }
                }
                out.push(TracelessSubspace::from_vectors(p, &vs));
            }
        }
    }
    out.push(TracelessSubspace::full(p));
    out.dedup_by(|a, b| a == b);
    out
}

/// Conjugation action of g on coordinates: g M g^-1 in A,B,C coordinates.
pub fn adjoint_action(g: &ResidueMatrix, v: [u32; 3]) -> [u32; 3] {
    let p = g.modulus();
    let m = matrix_of_coords(v, p);
    let e = g.entries().map(|x| x as i64);
    let minv = [e[3], -e[1], -e[2], e[0]];
    // g * M * g^-1, all mod p
    let mm = m.map(|x| x as i64);
    let gm = [
        e[0] * mm[0] + e[1] * mm[2],
        e[0] * mm[1] + e[1] * mm[3],
        e[2] * mm[0] + e[3] * mm[2],
        e[2] * mm[1] + e[3] * mm[3],
    ];
    let gmg = [
        gm[0] * minv[0] + gm[1] * minv[2],
        gm[0] * minv[1] + gm[1] * minv[3],
        gm[2] * minv[0] + gm[2 + 1] * minv[2],
        gm[2] * minv[1] + gm[3] * minv[3],
    ];
    let pp = p as i64;
    [
        gmg[0].rem_euclid(pp) as u32,
        gmg[1].rem_euclid(pp) as u32,
        gmg[2].rem_euclid(pp) as u32,
    ]
}

/// Is W stable under conjugation by every generator of H?
pub fn is_invariant_under(w: &TracelessSubspace, h: &CongruenceGroup) -> bool {
    let gens = h.small_generating_set();
    w.basis().iter().all(|&v| {
        gens.iter()
            .all(|g| w.contains(adjoint_action(g, v)))
    })
}

/// All subspaces of sl2(F_p) stable under conjugation by H <= SL2(F_p).
pub fn invariant_subspaces(h: &CongruenceGroup) -> Vec<TracelessSubspace> {
    let p = h.modulus();
    all_subspaces(p)
        .into_iter()
        .filter(|w| is_invariant_under(w, h))
        .collect()
}

/// A chain of reductions G mod p^s for s = 1..e together with the kernel
/// subspaces V_s identified through the exponential map.
pub struct ReductionChain {
    p: u32,
    e: u32,
    groups: Vec<CongruenceGroup>,
    v_spaces: Vec<TracelessSubspace>,
}

impl ReductionChain {
    /// Build the chain from a group of prime-power modulus p^e.
    pub fn new(top: &CongruenceGroup) -> Result<ReductionChain> {
        let fac = prime_power_factorization(top.modulus());
        if fac.len() != 1 {
            return Err(Error::BadFactorization(format!(
                "modulus {} is not a prime power",
                top.modulus()
            )));
        }
        let (p, e) = fac[0];
        let mut groups = Vec::with_capacity(e as usize);
        for s in 1..=e {
            groups.push(top.reduce(p.pow(s))?);
        }
        let mut v_spaces = Vec::new();
        for s in 1..e {
            v_spaces.push(v_space_between(&groups[s as usize], &groups[s as usize - 1], p, s)?);
        }
        Ok(ReductionChain {
            p,
            e,
            groups,
            v_spaces,
        })
    }

    pub fn prime(&self) -> u32 {
        self.p
    }

    pub fn top_exponent(&self) -> u32 {
        self.e
    }

    /// G mod p^s, 1 <= s <= e.
    pub fn group(&self, s: u32) -> &CongruenceGroup {
        &self.groups[s as usize - 1]
    }

    /// V_s, 1 <= s <= e-1.
    pub fn v_space(&self, s: u32) -> &TracelessSubspace {
        &self.v_spaces[s as usize - 1]
    }

    pub fn v_spaces(&self) -> &[TracelessSubspace] {
        &self.v_spaces
    }
}

/// V_s = exp^{-1} of the kernel of G mod p^{s+1} -> G mod p^s.
pub fn v_space_between(
    upper: &CongruenceGroup,
    lower: &CongruenceGroup,
    p: u32,
    s: u32,
) -> Result<TracelessSubspace> {
    let ps = p.pow(s);
    let ps1 = p.pow(s + 1);
    if upper.modulus() != ps1 || lower.modulus() != ps {
        return Err(Error::InvalidDivisor {
            modulus: upper.modulus(),
            divisor: ps,
        });
    }
    let id = ResidueMatrix::identity(ps);
    let mut coords = Vec::new();
    for m in upper.elements() {
        if m.reduce_mod(ps)? != id {
            continue;
        }
        let e = m.entries();
        // m = I + p^s * Mtilde; tr Mtilde = 0 mod p is forced by det = 1
        let a = ((e[0] + ps1 - 1) % ps1) / ps;
        let b = e[1] / ps;
        let c = e[2] / ps;
        debug_assert_eq!(e[1] % ps, 0);
        coords.push([a % p, b % p, c % p]);
    }
    let v = TracelessSubspace::from_vectors(p, &coords);
    let expected = (p as u64).pow(v.dim() as u32);
    if coords.len() as u64 != expected {
        return Err(Error::Inconsistency(format!(
            "kernel of size {} is not the exponential of a subspace (expected p^{} = {expected})",
            coords.len(),
            v.dim()
        )));
    }
    // kernel order must be |upper|/|lower|
    if upper.order() != lower.order() * expected {
        return Err(Error::Inconsistency(
            "kernel size does not match the index of the reduction".into(),
        ));
    }
    Ok(v)
}

/// Structural report on a reduction chain; `violations` is expected empty.
pub struct VChainReport {
    pub violations: Vec<String>,
}

/// Verifies, on an explicit chain: containment V_s c V_{s+1} (with the
/// p^s = 2 exception, where only V_1 c V_2 + <I> holds), commutator
/// containment [V_s1, V_s2] c V_{s1+s2}, invariance of each V_s under the
/// conjugation action of G_1, and that V_s = sl2 forces exact level <= p^s.
pub fn check_v_chain(chain: &ReductionChain) -> VChainReport {
    let mut violations = Vec::new();
    let p = chain.p;
    let e = chain.e;
    for s in 1..e.saturating_sub(1) {
        let cur = chain.v_space(s);
        let next = chain.v_space(s + 1);
        if p.pow(s) != 2 {
            if !next.contains_subspace(cur) {
                violations.push(format!("V_{s} not contained in V_{}", s + 1));
            }
        } else {
            let with_i = next.sum(&TracelessSubspace::from_vectors(p, &[[1, 0, 0]]));
            if !with_i.contains_subspace(cur) {
                violations.push("V_1 not contained in V_2 + <I> at p = 2".into());
            }
        }
    }
    for s1 in 1..e {
        for s2 in s1..e {
            if s1 + s2 > e - 1 {
                continue;
            }
            let target = chain.v_space(s1 + s2);
            for &v1 in chain.v_space(s1).basis() {
                for &v2 in chain.v_space(s2).basis() {
                    let c = commutator_coords(p, v1, v2);
                    if !target.contains(c) {
                        violations.push(format!(
                            "[V_{s1}, V_{s2}] escapes V_{}",
                            s1 + s2
                        ));
                    }
                }
            }
        }
    }
    let g1 = chain.group(1);
    for s in 1..e {
        if !is_invariant_under(chain.v_space(s), g1) {
            violations.push(format!("V_{s} is not G_1-invariant"));
        }
    }
    let exact = chain.group(e).exact_level();
    for s in 1..e {
        if chain.v_space(s).is_full() && exact > p.pow(s) {
            violations.push(format!(
                "V_{s} = sl2 but exact level {exact} exceeds p^{s}"
            ));
        }
    }
    VChainReport { violations }
}

/// Coordinates of [M1, M2] = M1 M2 - M2 M1 over F_p.
fn commutator_coords(p: u32, v1: [u32; 3], v2: [u32; 3]) -> [u32; 3] {
    let pp = p as i64;
    let m1 = matrix_of_coords(v1, p).map(|x| x as i64);
    let m2 = matrix_of_coords(v2, p).map(|x| x as i64);
    let prod = |x: [i64; 4], y: [i64; 4]| {
        [
            x[0] * y[0] + x[1] * y[2],
            x[0] * y[1] + x[1] * y[3],
            x[2] * y[0] + x[3] * y[2],
            x[2] * y[1] + x[3] * y[3],
        ]
    };
    let a = prod(m1, m2);
    let b = prod(m2, m1);
    [
        (a[0] - b[0]).rem_euclid(pp) as u32,
        (a[1] - b[1]).rem_euclid(pp) as u32,
        (a[2] - b[2]).rem_euclid(pp) as u32,
    ]
}

/// Abstract isomorphism type of a subgroup of PSL2(F_p) of order prime to
/// p: cyclic, dihedral, A4, S4 or A5. Anything else is a hard failure.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum AbstractType {
    Cyclic(u64),
    Dihedral(u64),
    A4,
    S4,
    A5,
}

impl std::fmt::Display for AbstractType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AbstractType::Cyclic(n) => write!(f, "C{n}"),
            AbstractType::Dihedral(n) => write!(f, "D{n}"),
            AbstractType::A4 => write!(f, "A4"),
            AbstractType::S4 => write!(f, "S4"),
            AbstractType::A5 => write!(f, "A5"),
        }
    }
}

pub fn abstract_type(h: &PslGroup) -> Result<AbstractType> {
    let ord = h.order();
    if ord == 1 {
        return Ok(AbstractType::Cyclic(1));
    }
    let orders: Vec<u64> = h.rep_keys().iter().map(|&k| h.element_order(k)).collect();
    let max_order = *orders.iter().max().unwrap();
    if max_order == ord {
        return Ok(AbstractType::Cyclic(ord));
    }
    if ord % 2 == 0 && max_order == ord / 2 {
        // look for a dihedral pair: x of order ord/2, s of order 2 outside
        // <x> inverting x
        let x = h.rep_keys()[orders.iter().position(|&o| o == ord / 2).unwrap()];
        let mut powers = std::collections::HashSet::new();
        let mut cur = x;
        for _ in 0..ord / 2 {
            powers.insert(cur);
            cur = h.mul_canon(cur, x);
        }
        let xinv = {
            let mut y = x;
            for _ in 0..ord / 2 - 2 {
                y = h.mul_canon(y, x);
            }
            y
        };
        for (&s, &so) in h.rep_keys().iter().zip(orders.iter()) {
            if so == 2 && !powers.contains(&s) {
                let sxs = h.mul_canon(h.mul_canon(s, x), s);
                if sxs == xinv {
                    return Ok(AbstractType::Dihedral(ord / 2));
                }
            }
        }
    }
    let signature = |targets: &[(u64, usize)]| {
        targets
            .iter()
            .all(|&(o, c)| orders.iter().filter(|&&x| x == o).count() == c)
    };
    match ord {
        12 if signature(&[(1, 1), (2, 3), (3, 8)]) => Ok(AbstractType::A4),
        24 if signature(&[(1, 1), (2, 9), (3, 8), (4, 6)]) => Ok(AbstractType::S4),
        60 if signature(&[(1, 1), (2, 15), (3, 20), (5, 24)]) => Ok(AbstractType::A5),
        _ => Err(Error::Inconsistency(format!(
            "group of order {ord} matches no semisimple type"
        ))),
    }
}

/// Pairwise anticommuting invertible matrices over F_p (p odd) are linearly
/// independent; returns the independence verdict after validating the
/// hypotheses.
pub fn anticommuting_independence_check(mats: &[ResidueMatrix]) -> Result<bool> {
    if mats.is_empty() {
        return Ok(true);
    }
    let p = mats[0].modulus();
    if p == 2 {
        return Err(Error::ExpDomain(
            "anticommuting independence requires characteristic != 2".into(),
        ));
    }
    for (i, x) in mats.iter().enumerate() {
        if x.modulus() != p {
            return Err(Error::ModulusMismatch {
                left: p,
                right: x.modulus(),
            });
        }
        for y in mats.iter().skip(i + 1) {
            let xy = x.mul(y);
            let yx = y.mul(x);
            let anti = xy
                .entries()
                .iter()
                .zip(yx.entries().iter())
                .all(|(&a, &b)| (a as u64 + b as u64) % p as u64 == 0);
            if !anti {
                return Err(Error::ExpDomain(
                    "matrices do not pairwise anticommute".into(),
                ));
            }
        }
    }
    // rank of the k x 4 coefficient matrix over F_p
    let pp = p as u64;
    let mut rows: Vec<[u64; 4]> = mats
        .iter()
        .map(|m| m.entries().map(|x| x as u64 % pp))
        .collect();
    let mut rank = 0;
    for col in 0..4 {
        let Some(idx) = rows.iter().skip(rank).position(|r| r[col] != 0) else {
            continue;
        };
        rows.swap(rank, rank + idx);
        let inv = mod_inv_prime(rows[rank][col], pp);
        for c in 0..4 {
            rows[rank][c] = rows[rank][c] * inv % pp;
        }
        for r in 0..rows.len() {
            if r != rank && rows[r][col] != 0 {
                let f = rows[r][col];
                for c in 0..4 {
                    rows[r][c] = (rows[r][c] + (pp - f) * rows[rank][c]) % pp;
                }
            }
        }
        rank += 1;
    }
    Ok(rank == mats.len())
}

/// The special triangular group ST(F_p): upper triangular with determinant
/// one; image of Gamma_0(p) at prime level.
pub fn special_triangular(p: u32, budget: &Budget) -> Result<CongruenceGroup> {
    let _ = budget;
    crate::invariants::borel_group(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::sl2_ambient;
    use crate::invariants::borel_group;

    fn budget() -> Budget {
        Budget::default()
    }

    #[test]
    fn exp_examples() {
        // exp(0) = I
        assert_eq!(
            exp_map([0, 0, 0, 0], 3, 1, 1).unwrap(),
            ResidueMatrix::identity(9)
        );
        // exp(A) at p = 3, r = s = 1: I + 3A = [[4,0],[0,-2]] = [[4,0],[0,7]]
        let m = exp_map([1, 0, 0, -1], 3, 1, 1).unwrap();
        assert_eq!(m.entries(), [4, 0, 0, 7]);
        assert_eq!(m.det(), 1);
        assert!(exp_map([1, 0, 0, -1], 3, 2, 1).is_err());
        assert!(exp_map([1, 0, 0, 1], 3, 1, 1).is_err());
    }

    #[test]
    fn exp_is_additive_when_2s_geq_r_plus_s() {
        // exhaustive for p = 3, r = s = 1
        for a1 in 0..3i64 {
            for b1 in 0..3i64 {
                for c1 in 0..3i64 {
                    for a2 in 0..3i64 {
                        for b2 in 0..3i64 {
                            for c2 in 0..3i64 {
                                let m1 = [a1, b1, c1, -a1];
                                let m2 = [a2, b2, c2, -a2];
                                let sum = [a1 + a2, b1 + b2, c1 + c2, -(a1 + a2)];
                                let lhs = exp_map(sum, 3, 1, 1).unwrap();
                                let rhs = exp_map(m1, 3, 1, 1)
                                    .unwrap()
                                    .mat_mul(&exp_map(m2, 3, 1, 1).unwrap())
                                    .unwrap();
                                assert_eq!(lhs, rhs);
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn rref_canonicalizes() {
        let v1 = TracelessSubspace::from_vectors(5, &[[1, 2, 3], [0, 1, 1]]);
        let v2 = TracelessSubspace::from_vectors(5, &[[1, 3, 4], [0, 2, 2]]);
        assert_eq!(v1, v2);
        assert_eq!(v1.dim(), 2);
        assert!(v1.contains([2, 4, 6].map(|x| x % 5)));
        assert!(!v1.contains([0, 0, 1]));
    }

    #[test]
    fn subspace_counts() {
        // 0, p^2+p+1 lines, p^2+p+1 planes, full
        assert_eq!(all_subspaces(3).len(), 2 + 2 * 13);
        assert_eq!(all_subspaces(5).len(), 2 + 2 * 31);
    }

    fn level9_exceptional() -> CongruenceGroup {
        CongruenceGroup::close(
            &[
                ResidueMatrix::new(9, [2, 8, 3, 8]).unwrap(),
                ResidueMatrix::new(9, [1, 3, 0, 1]).unwrap(),
                ResidueMatrix::new(9, [4, 0, 0, 7]).unwrap(),
            ],
            9,
        )
        .unwrap()
    }

    #[test]
    fn v_space_of_full_preimage_chain_is_everything() {
        let full9 = sl2_ambient(9, &budget()).unwrap();
        let chain = ReductionChain::new(&full9).unwrap();
        assert!(chain.v_space(1).is_full());
    }

    #[test]
    fn v_space_of_level9_group_is_a_b_plane() {
        let chain = ReductionChain::new(&level9_exceptional()).unwrap();
        let v = chain.v_space(1);
        assert_eq!(v.dim(), 2);
        // <A, B> = vectors with zero C-coordinate
        assert!(v.contains([1, 0, 0]));
        assert!(v.contains([0, 1, 0]));
        assert!(!v.contains([0, 0, 1]));
    }

    #[test]
    fn identity_lies_in_v1_for_even_chains() {
        // the pullback of <T> mod 2 to mod 4 contains -I = I + 2I
        let t2 = CongruenceGroup::close(&[ResidueMatrix::t_matrix(2)], 2).unwrap();
        let pre = t2.full_preimage(4, &budget()).unwrap();
        let chain = ReductionChain::new(&pre).unwrap();
        assert!(chain.v_space(1).contains([1, 0, 0]));
    }

    #[test]
    fn v_chain_checks_pass_on_full_preimages() {
        for top in [sl2_ambient(8, &budget()).unwrap(), sl2_ambient(9, &budget()).unwrap()] {
            let chain = ReductionChain::new(&top).unwrap();
            assert!(check_v_chain(&chain).violations.is_empty());
        }
        let chain = ReductionChain::new(&level9_exceptional()).unwrap();
        assert!(check_v_chain(&chain).violations.is_empty());
    }

    #[test]
    fn st_invariant_subspaces_mod_5() {
        let st = borel_group(5).unwrap();
        let mut subs = invariant_subspaces(&st);
        subs.sort_by_key(|v| v.dim());
        assert_eq!(subs.len(), 4);
        assert_eq!(subs[0].dim(), 0);
        // <B>
        assert_eq!(subs[1].basis(), &[[0, 1, 0]]);
        // <A, B>
        assert_eq!(subs[2].dim(), 2);
        assert!(subs[2].contains([1, 0, 0]) && subs[2].contains([0, 1, 0]));
        assert!(subs[3].is_full());
    }

    #[test]
    fn sl2_has_no_proper_invariant_subspaces() {
        let full7 = sl2_ambient(7, &budget()).unwrap();
        let subs = invariant_subspaces(&full7);
        assert_eq!(subs.len(), 2);
    }

    #[test]
    fn klein_pullback_invariant_subspaces_mod_3() {
        // the D2-bar pullback in SL2(F_3) is the quaternion group generated
        // by S and [[1,1],[1,-1]]
        let x = ResidueMatrix::s_matrix(3);
        let y = ResidueMatrix::new(3, [1, 1, 1, -1]).unwrap();
        let q8 = CongruenceGroup::close(&[x, y], 3).unwrap();
        assert_eq!(q8.order(), 8);
        let subs = invariant_subspaces(&q8);
        assert_eq!(subs.len(), 8);
    }

    #[test]
    fn abstract_types() {
        // trivial
        let pm = CongruenceGroup::close(&[], 5).unwrap();
        assert_eq!(abstract_type(&pm.psl_image()).unwrap(), AbstractType::Cyclic(1));
        // ST(F_3) maps to <T> of order 3 in PSL
        let st3 = borel_group(3).unwrap();
        assert_eq!(
            abstract_type(&st3.psl_image()).unwrap(),
            AbstractType::Cyclic(3)
        );
        // order-6 nonabelian subgroup of PSL2(F_5): an order-3 rotation and
        // a trace-zero involution inverting it
        let u = ResidueMatrix::elliptic_rotation(5);
        let s = ResidueMatrix::new(5, [0, 2, 2, 0]).unwrap();
        let d3 = CongruenceGroup::close(&[u, s], 5).unwrap();
        assert_eq!(d3.order(), 12);
        assert_eq!(
            abstract_type(&d3.psl_image()).unwrap(),
            AbstractType::Dihedral(3)
        );
        // Klein image of the quaternion group mod 3
        let q8 = CongruenceGroup::close(
            &[
                ResidueMatrix::s_matrix(3),
                ResidueMatrix::new(3, [1, 1, 1, -1]).unwrap(),
            ],
            3,
        )
        .unwrap();
        assert_eq!(
            abstract_type(&q8.psl_image()).unwrap(),
            AbstractType::Dihedral(2)
        );
        let full2 = sl2_ambient(2, &budget()).unwrap();
        assert_eq!(
            abstract_type(&full2.psl_image()).unwrap(),
            AbstractType::Dihedral(3)
        );
    }

    #[test]
    fn anticommuting_basis_from_klein_pullback() {
        let x = ResidueMatrix::s_matrix(5);
        let y = ResidueMatrix::new(5, [2, 0, 0, -2]).unwrap(); // 2*A, det 1? 2*(-2) = -4 = 1 mod 5
        let xy = x.mul(&y);
        assert!(anticommuting_independence_check(&[x, y, xy]).unwrap());
        assert!(anticommuting_independence_check(&[x]).unwrap());
    }

    #[test]
    fn anticommuting_pairs_exhaustive_f3() {
        // every invertible anticommuting pair over F_3 is independent
        let p = 3u32;
        let singles: Vec<[i64; 4]> = (0..81)
            .map(|i| [i / 27 % 3, i / 9 % 3, i / 3 % 3, i % 3])
            .collect();
        let det = |m: &[i64; 4]| (m[0] * m[3] - m[1] * m[2]).rem_euclid(3);
        for x in singles.iter().filter(|m| det(m) != 0) {
            for y in singles.iter().filter(|m| det(m) != 0) {
                let anti = (0..2).all(|r| {
                    (0..2).all(|c| {
                        let xy = x[2 * r] * y[c] + x[2 * r + 1] * y[2 + c];
                        let yx = y[2 * r] * x[c] + y[2 * r + 1] * x[2 + c];
                        (xy + yx) % 3 == 0
                    })
                });
                if anti {
                    // rank check over F_3
                    let mut rows = [x.map(|v| v.rem_euclid(3)), y.map(|v| v.rem_euclid(3))];
                    let mut rank = 0;
                    for col in 0..4 {
                        if let Some(i) = (rank..2).find(|&i| rows[i][col] != 0) {
                            rows.swap(rank, i);
                            let inv = if rows[rank][col] == 1 { 1 } else { 2 };
                            for c in 0..4 {
                                rows[rank][c] = rows[rank][c] * inv % 3;
                            }
                            for r in 0..2 {
                                if r != rank && rows[r][col] != 0 {
                                    let f = rows[r][col];
                                    for c in 0..4 {
                                        rows[r][c] = (rows[r][c] + (3 - f) * rows[rank][c]) % 3;
                                    }
                                }
                            }
                            rank += 1;
                        }
                    }
                    assert_eq!(rank, 2, "anticommuting invertible pair must be independent");
                }
            }
        }
        let _ = p;
    }
}
