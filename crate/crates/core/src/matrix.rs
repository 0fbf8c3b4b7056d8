//! Exact arithmetic for 2x2 matrices over Z/nZ with determinant 1, plus the
//! CRT (de)composition of SL2(Z/nZ) into prime-power factors.
//!
//! Entries are always stored as least nonnegative residues, so equality is
//! entrywise and every matrix packs into a single `u128` key. Moduli are
//! capped at 2^31 - 1 and all products go through `u64` intermediates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_MODULUS: u32 = i32::MAX as u32;

/// A 2x2 matrix over Z/nZ with determinant 1, entries row-major in [0, n).
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ResidueMatrix {
    n: u32,
    e: [u32; 4],
}

impl std::fmt::Debug for ResidueMatrix {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "[[{},{}],[{},{}]] mod {}",
            self.e[0], self.e[1], self.e[2], self.e[3], self.n
        )
    }
}

#[inline]
fn reduce_i64(v: i64, n: u32) -> u32 {
    let n = n as i64;
    (((v % n) + n) % n) as u32
}

impl ResidueMatrix {
    /// Construct from row-major entries, reducing into [0, n). Fails unless
    /// the determinant is 1 mod n: GL2 is intentionally not modeled.
    pub fn new(n: u32, entries: [i64; 4]) -> Result<Self> {
        assert!(n >= 1 && n <= MAX_MODULUS, "modulus out of range");
        let e = [
            reduce_i64(entries[0], n),
            reduce_i64(entries[1], n),
            reduce_i64(entries[2], n),
            reduce_i64(entries[3], n),
        ];
        let m = ResidueMatrix { n, e };
        let d = m.det();
        if d != 1 % n {
            return Err(Error::NonUnitDeterminant { modulus: n, det: d });
        }
        Ok(m)
    }

    pub fn modulus(&self) -> u32 {
        self.n
    }

    pub fn entries(&self) -> [u32; 4] {
        self.e
    }

    pub fn identity(n: u32) -> Self {
        ResidueMatrix {
            n,
            e: [1 % n, 0, 0, 1 % n],
        }
    }

    pub fn neg_identity(n: u32) -> Self {
        let m = (n as i64 - 1).rem_euclid(n as i64) as u32;
        ResidueMatrix { n, e: [m, 0, 0, m] }
    }

    /// S = [[0,1],[-1,0]], the order-4 inversion; its image fixes the
    /// 2-elliptic points.
    pub fn s_matrix(n: u32) -> Self {
        ResidueMatrix::new(n, [0, 1, -1, 0]).expect("det 1")
    }

    /// T = [[1,1],[0,1]], the unit translation.
    pub fn t_matrix(n: u32) -> Self {
        ResidueMatrix::new(n, [1, 1, 0, 1]).expect("det 1")
    }

    /// [[0,-1],[1,-1]], the order-3 rotation; its image fixes the 3-elliptic
    /// points.
    pub fn elliptic_rotation(n: u32) -> Self {
        ResidueMatrix::new(n, [0, -1, 1, -1]).expect("det 1")
    }

    pub fn det(&self) -> u32 {
        let n = self.n as u64;
        let ad = (self.e[0] as u64) * (self.e[3] as u64) % n;
        let bc = (self.e[1] as u64) * (self.e[2] as u64) % n;
        ((ad + n - bc) % n) as u32
    }

    pub fn trace(&self) -> u32 {
        ((self.e[0] as u64 + self.e[3] as u64) % self.n as u64) as u32
    }

    /// Entrywise product reduced mod n.
    pub fn mat_mul(&self, rhs: &Self) -> Result<Self> {
        if self.n != rhs.n {
            return Err(Error::ModulusMismatch {
                left: self.n,
                right: rhs.n,
            });
        }
        Ok(self.mul(rhs))
    }

    /// Same-modulus product; callers guarantee equal moduli.
    #[inline]
    pub(crate) fn mul(&self, rhs: &Self) -> Self {
        debug_assert_eq!(self.n, rhs.n);
        let n = self.n as u64;
        let a = self.e.map(|x| x as u64);
        let b = rhs.e.map(|x| x as u64);
        ResidueMatrix {
            n: self.n,
            e: [
                ((a[0] * b[0] + a[1] * b[2]) % n) as u32,
                ((a[0] * b[1] + a[1] * b[3]) % n) as u32,
                ((a[2] * b[0] + a[3] * b[2]) % n) as u32,
                ((a[2] * b[1] + a[3] * b[3]) % n) as u32,
            ],
        }
    }

    /// Inverse via the adjugate; valid because determinant 1 is a
    /// construction invariant.
    pub fn inv(&self) -> Self {
        ResidueMatrix {
            n: self.n,
            e: [
                self.e[3],
                reduce_i64(-(self.e[1] as i64), self.n),
                reduce_i64(-(self.e[2] as i64), self.n),
                self.e[0],
            ],
        }
    }

    pub fn neg(&self) -> Self {
        ResidueMatrix {
            n: self.n,
            e: self.e.map(|x| reduce_i64(-(x as i64), self.n)),
        }
    }

    /// x g x^-1.
    pub fn conj(&self, g: &Self) -> Self {
        self.mul(g).mul(&self.inv())
    }

    pub fn pow(&self, mut k: u64) -> Self {
        let mut acc = ResidueMatrix::identity(self.n);
        let mut base = *self;
        while k > 0 {
            if k & 1 == 1 {
                acc = acc.mul(&base);
            }
            base = base.mul(&base);
            k >>= 1;
        }
        acc
    }

    /// Multiplicative order; finite because the group is finite.
    pub fn order(&self) -> u64 {
        let id = ResidueMatrix::identity(self.n);
        let mut x = *self;
        let mut k = 1u64;
        while x != id {
            x = x.mul(self);
            k += 1;
        }
        k
    }

    /// Matrix-vector action on (Z/nZ)^2.
    pub fn apply(&self, v: (u32, u32)) -> (u32, u32) {
        let n = self.n as u64;
        (
            ((self.e[0] as u64 * v.0 as u64 + self.e[1] as u64 * v.1 as u64) % n) as u32,
            ((self.e[2] as u64 * v.0 as u64 + self.e[3] as u64 * v.1 as u64) % n) as u32,
        )
    }

    /// The reduction map modulo a divisor d of n.
    pub fn reduce_mod(&self, d: u32) -> Result<Self> {
        if d == 0 || self.n % d != 0 {
            return Err(Error::InvalidDivisor {
                modulus: self.n,
                divisor: d,
            });
        }
        Ok(ResidueMatrix {
            n: d,
            e: self.e.map(|x| x % d),
        })
    }

    /// Packs (a,b,c,d) into a u128; numeric order of keys is lexicographic
    /// order of entry tuples, which the canonical forms rely on.
    #[inline]
    pub fn key(&self) -> u128 {
        ((self.e[0] as u128) << 96)
            | ((self.e[1] as u128) << 64)
            | ((self.e[2] as u128) << 32)
            | (self.e[3] as u128)
    }

    #[inline]
    pub fn from_key(n: u32, key: u128) -> Self {
        ResidueMatrix {
            n,
            e: [
                ((key >> 96) & 0xffff_ffff) as u32,
                ((key >> 64) & 0xffff_ffff) as u32,
                ((key >> 32) & 0xffff_ffff) as u32,
                (key & 0xffff_ffff) as u32,
            ],
        }
    }

    /// CRT split along pairwise-coprime prime powers multiplying to n.
    pub fn crt_split(&self, parts: &[u32]) -> Result<Vec<ResidueMatrix>> {
        validate_factorization(self.n, parts)?;
        parts.iter().map(|&q| self.reduce_mod(q)).collect()
    }

    /// CRT recombination; inverse of `crt_split`.
    pub fn crt_combine(components: &[ResidueMatrix]) -> Result<ResidueMatrix> {
        if components.is_empty() {
            return Err(Error::BadFactorization("no components".into()));
        }
        let mut n: u64 = 1;
        for c in components {
            n = n
                .checked_mul(c.n as u64)
                .filter(|&m| m <= MAX_MODULUS as u64)
                .ok_or_else(|| Error::BadFactorization("product exceeds modulus cap".into()))?;
        }
        let parts: Vec<u32> = components.iter().map(|c| c.n).collect();
        validate_factorization(n as u32, &parts)?;
        let n = n as u32;
        let mut e = [0i64; 4];
        for (i, slot) in e.iter_mut().enumerate() {
            let mut x: i64 = 0;
            let mut m: i64 = 1;
            for c in components {
                // solve x = c.e[i] (mod c.n), preserving x mod m
                let q = c.n as i64;
                let r = c.e[i] as i64;
                let minv = mod_inverse(m.rem_euclid(q), q).ok_or_else(|| {
                    Error::BadFactorization("components not pairwise coprime".into())
                })?;
                let t = ((r - x).rem_euclid(q) * minv).rem_euclid(q);
                x += m * t;
                m *= q;
            }
            *slot = x;
        }
        ResidueMatrix::new(n, e)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({ "n": self.n, "m": self.e })
    }

    pub fn from_json(v: &serde_json::Value) -> Result<Self> {
        let enc: MatrixJson = serde_json::from_value(v.clone())?;
        ResidueMatrix::new(enc.n, enc.m.map(|x| x as i64))
    }
}

#[derive(Serialize, Deserialize)]
struct MatrixJson {
    n: u32,
    m: [u32; 4],
}

fn mod_inverse(a: i64, m: i64) -> Option<i64> {
    let (mut old_r, mut r) = (a.rem_euclid(m), m);
    let (mut old_s, mut s) = (1i64, 0i64);
    while r != 0 {
        let q = old_r / r;
        (old_r, r) = (r, old_r - q * r);
        (old_s, s) = (s, old_s - q * s);
    }
    if old_r != 1 {
        return None;
    }
    Some(old_s.rem_euclid(m))
}

fn validate_factorization(n: u32, parts: &[u32]) -> Result<()> {
    let mut prod: u64 = 1;
    for &q in parts {
        if q < 2 {
            return Err(Error::BadFactorization(format!("factor {q} < 2")));
        }
        prod *= q as u64;
    }
    if prod != n as u64 {
        return Err(Error::BadFactorization(format!(
            "factors multiply to {prod}, not {n}"
        )));
    }
    for i in 0..parts.len() {
        for j in 0..i {
            if gcd(parts[i] as u64, parts[j] as u64) != 1 {
                return Err(Error::BadFactorization(format!(
                    "factors {} and {} are not coprime",
                    parts[i], parts[j]
                )));
            }
        }
    }
    Ok(())
}

pub fn gcd(a: u64, b: u64) -> u64 {
    let (mut a, mut b) = (a, b);
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Prime-power factorization of n, smallest prime first.
pub fn prime_power_factorization(n: u32) -> Vec<(u32, u32)> {
    let mut out = Vec::new();
    let mut m = n;
    let mut p = 2u32;
    while p as u64 * p as u64 <= m as u64 {
        if m % p == 0 {
            let mut e = 0;
            while m % p == 0 {
                m /= p;
                e += 1;
            }
            out.push((p, e));
        }
        p += 1;
    }
    if m > 1 {
        out.push((m, 1));
    }
    out
}

/// |SL2(Z/nZ)| = n^3 * prod_{p|n} (1 - p^-2), as a product over prime powers.
pub fn sl2_order(n: u32) -> u64 {
    if n == 1 {
        return 1;
    }
    let mut ord: u64 = 1;
    for (p, e) in prime_power_factorization(n) {
        let p = p as u64;
        ord *= p.pow(3 * e - 2) * (p + 1) * (p - 1);
    }
    ord
}

/// |PSL2(Z/nZ)|: halves |SL2| once -I differs from I, i.e. for n > 2.
pub fn psl2_order(n: u32) -> u64 {
    let ord = sl2_order(n);
    if n > 2 {
        ord / 2
    } else {
        ord
    }
}
