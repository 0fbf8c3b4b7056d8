use cuspidal::classify::{classify_prime_power, SeedClass};
use cuspidal::group::{Budget, CongruenceGroup};
use cuspidal::matrix::ResidueMatrix;
use std::collections::HashSet;

fn main() {
    let b = Budget::default();
    let out = classify_prime_power(2, 3, SeedClass::All, &b).unwrap();
    for chain in &out.survivors {
        let g = &chain.group;
        if g.order() != 48 {
            continue;
        }
        let p = g.full_preimage(16, &b).unwrap();
        println!("parent {} preimage order {}", &g.canonical_form().digest()[..12], p.order());
        // index-2 subgroups of P = kernels of maps P -> C2, i.e. subgroups
        // containing Q = <squares and commutators>
        let elems: Vec<ResidueMatrix> = p.elements().collect();
        let mut qgens: Vec<ResidueMatrix> = Vec::new();
        for x in &elems {
            qgens.push(x.mat_mul(x).unwrap());
        }
        // commutators of a generating set suffice for the normal closure
        // under squares... take all pairwise commutators of small gens with
        // all elements to be safe
        let sg = p.small_generating_set();
        for x in &sg {
            for y in &elems {
                let c = x.mat_mul(y).unwrap().mat_mul(&x.inv()).unwrap().mat_mul(&y.inv()).unwrap();
                qgens.push(c);
            }
        }
        let q = CongruenceGroup::close(&qgens, 16).unwrap();
        println!("  Q order {} index {}", q.order(), p.order() / q.order());
        // cosets of Q in P form an elementary abelian 2-group; index-2
        // subgroups correspond to hyperplanes; enumerate all unions of Q-
        // cosets forming subgroups of index 2: equivalently kernels of all
        // homs P/Q -> C2
        let qset: HashSet<u128> = q.element_keys().iter().copied().collect();
        let mut coset_reps: Vec<ResidueMatrix> = Vec::new();
        let mut covered: HashSet<u128> = HashSet::new();
        for x in &elems {
            if covered.contains(&x.key()) {
                continue;
            }
            coset_reps.push(*x);
            for qk in &qset {
                let qm = ResidueMatrix::from_key(16, *qk);
                covered.insert(x.mat_mul(&qm).unwrap().key());
            }
        }
        let m = coset_reps.len();
        println!("  quotient size {m}");
        // basis of the F2-vector space P/Q
        // brute force: try every subset of coset reps closed under product=subgroup of index 2
        // simpler: iterate over all subgroups of the quotient group of order m/2...
        // use: for each hom determined by values on a generating set of P
        let mut found: Vec<CongruenceGroup> = Vec::new();
        let sgens = p.small_generating_set();
        let k = sgens.len();
        for mask in 1..(1u32 << k) {
            // candidate hom: gen i -> bit i; kernel = closure of gens with
            // value 0 plus products of pairs with value 1
            let mut hgens: Vec<ResidueMatrix> = Vec::new();
            let mut first_one: Option<ResidueMatrix> = None;
            for (i, x) in sgens.iter().enumerate() {
                if mask & (1 << i) == 0 {
                    hgens.push(*x);
                } else if let Some(f) = first_one {
                    hgens.push(f.mat_mul(x).unwrap());
                } else {
                    first_one = Some(*x);
                }
            }
            hgens.extend(q.small_generating_set());
            let h = CongruenceGroup::close(&hgens, 16).unwrap();
            if h.order() == p.order() / 2 {
                found.push(h);
            }
        }
        let mut classes: Vec<String> = Vec::new();
        for h in &found {
            if h.reduce(8).unwrap() != *g {
                continue;
            }
            let d = h.canonical_form().digest();
            if !classes.contains(&d) {
                classes.push(d);
                println!(
                    "  index-2 subgroup onto parent: order {} exact {} digest {}",
                    h.order(), h.exact_level(), &h.canonical_form().digest()[..12]
                );
            }
        }
        println!("  classes projecting onto parent: {}", classes.len());
    }
}
