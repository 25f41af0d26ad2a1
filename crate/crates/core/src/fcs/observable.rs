//! Local observables on the chain: finite sums of product terms over an
//! interval of sites.

use crate::algebra::{CMat, Element, Norm, TracialAlgebra, C64, ONE, ZERO};
use crate::error::{Error, Result};

/// Largest dense dimension for which the operator norm is computed exactly.
pub const DENSE_NORM_LIMIT: usize = 64;

/// `Σₜ cₜ aₜ,ₛ ⊗ ⋯ ⊗ aₜ,ₛ₊ₗ₋₁` on the sites `s..s+L−1`.
#[derive(Debug, Clone)]
pub struct LocalObservable {
    alg: TracialAlgebra,
    start: i64,
    sites: usize,
    terms: Vec<(C64, Vec<Element>)>,
    norm_inf: f64,
    norm_exact: bool,
}

impl LocalObservable {
    pub fn from_terms(alg: &TracialAlgebra, start: i64, sites: usize, terms: Vec<(C64, Vec<Element>)>) -> Result<Self> {
        if sites == 0 {
            return Err(Error::InvalidInput("local observable needs at least one site".into()));
        }
        if terms.is_empty() {
            return Err(Error::InvalidInput("local observable needs at least one term".into()));
        }
        for (c, ops) in &terms {
            if !(c.re.is_finite() && c.im.is_finite()) {
                return Err(Error::InvalidInput("non-finite coefficient".into()));
            }
            if ops.len() != sites {
                return Err(Error::ShapeMismatch(format!("term has {} factors on an interval of {sites} sites", ops.len())));
            }
            for a in ops {
                alg.check(a)?;
            }
        }
        let mut out = Self { alg: alg.clone(), start, sites, terms, norm_inf: 0.0, norm_exact: false };
        out.refresh_norm();
        Ok(out)
    }

    /// `a_s ⊗ ⋯ ⊗ a_{s+L−1}`.
    pub fn product(alg: &TracialAlgebra, start: i64, ops: Vec<Element>) -> Result<Self> {
        let n = ops.len();
        Self::from_terms(alg, start, n, vec![(ONE, ops)])
    }

    /// `a` at a single site.
    pub fn single(alg: &TracialAlgebra, site: i64, a: Element) -> Result<Self> {
        Self::product(alg, site, vec![a])
    }

    pub fn identity(alg: &TracialAlgebra, site: i64) -> Self {
        Self::single(alg, site, alg.identity()).expect("identity is valid")
    }

    /// Expansion of a dense operator on `(H_M)^{⊗L}` into matrix units.
    /// Entries that couple different blocks of a site are rejected.
    pub fn from_dense(alg: &TracialAlgebra, start: i64, sites: usize, dense: &CMat) -> Result<Self> {
        let p = alg.hilbert_dim();
        let dim = p.checked_pow(sites as u32).ok_or_else(|| Error::InvalidInput("interval too long".into()))?;
        if dense.nrows() != dim || dense.ncols() != dim {
            return Err(Error::ShapeMismatch(format!(
                "dense observable is {}x{}, expected {dim}x{dim}",
                dense.nrows(),
                dense.ncols()
            )));
        }
        let digits = |mut i: usize| {
            let mut d = vec![0; sites];
            for s in (0..sites).rev() {
                d[s] = i % p;
                i /= p;
            }
            d
        };
        let mut terms = Vec::new();
        for r in 0..dim {
            for c in 0..dim {
                let v = dense[(r, c)];
                if v == ZERO {
                    continue;
                }
                let (dr, dc) = (digits(r), digits(c));
                let mut ops = Vec::with_capacity(sites);
                for s in 0..sites {
                    let (br, ir) = alg.locate(dr[s]);
                    let (bc, ic) = alg.locate(dc[s]);
                    if br != bc {
                        return Err(Error::InvalidInput(format!(
                            "entry ({r}, {c}) couples blocks {br} and {bc} at site {}",
                            start + s as i64
                        )));
                    }
                    let mut e = alg.zero();
                    e.blocks[br][(ir, ic)] = ONE;
                    ops.push(e);
                }
                terms.push((v, ops));
            }
        }
        if terms.is_empty() {
            terms.push((ZERO, vec![alg.identity(); sites]));
        }
        Self::from_terms(alg, start, sites, terms)
    }

    pub fn algebra(&self) -> &TracialAlgebra {
        &self.alg
    }

    pub fn start(&self) -> i64 {
        self.start
    }

    /// Last site of the interval.
    pub fn end(&self) -> i64 {
        self.start + self.sites as i64 - 1
    }

    pub fn sites(&self) -> usize {
        self.sites
    }

    pub fn terms(&self) -> &[(C64, Vec<Element>)] {
        &self.terms
    }

    pub fn norm_inf(&self) -> f64 {
        self.norm_inf
    }

    /// False when `norm_inf` is the triangle-inequality bound.
    pub fn norm_exact(&self) -> bool {
        self.norm_exact
    }

    /// Factor of `term` at chain site `j` (identity outside the interval).
    pub fn factor(&self, term: usize, j: i64) -> Option<&Element> {
        if j < self.start || j > self.end() {
            None
        } else {
            Some(&self.terms[term].1[(j - self.start) as usize])
        }
    }

    /// `α_k`: the same operator `k` sites to the right.
    pub fn shifted(&self, k: i64) -> Self {
        Self { start: self.start + k, ..self.clone() }
    }

    /// The same operator on `[start, start + sites − 1]`, padded with identities.
    pub fn embedded(&self, start: i64, sites: usize) -> Result<Self> {
        let end = start + sites as i64 - 1;
        if start > self.start || end < self.end() {
            return Err(Error::SupportExceeded(format!(
                "[{}, {}] not inside [{start}, {end}]",
                self.start,
                self.end()
            )));
        }
        let one = self.alg.identity();
        let terms = self
            .terms
            .iter()
            .map(|(c, ops)| {
                let v = (0..sites)
                    .map(|s| {
                        let j = start + s as i64;
                        if j < self.start || j > self.end() { one.clone() } else { ops[(j - self.start) as usize].clone() }
                    })
                    .collect();
                (*c, v)
            })
            .collect();
        Ok(Self { alg: self.alg.clone(), start, sites, terms, norm_inf: self.norm_inf, norm_exact: self.norm_exact })
    }

    /// `self · other` on the union of the two intervals.
    pub fn mul(&self, other: &Self) -> Result<Self> {
        if self.alg != other.alg {
            return Err(Error::ShapeMismatch("observables live on different on-site algebras".into()));
        }
        let start = self.start.min(other.start);
        let end = self.end().max(other.end());
        let sites = (end - start + 1) as usize;
        let a = self.embedded(start, sites)?;
        let b = other.embedded(start, sites)?;
        let mut terms = Vec::with_capacity(a.terms.len() * b.terms.len());
        for (ca, oa) in &a.terms {
            for (cb, ob) in &b.terms {
                terms.push((ca * cb, oa.iter().zip(ob).map(|(x, y)| x * y).collect()));
            }
        }
        Self::from_terms(&self.alg, start, sites, terms)
    }

    pub fn adjoint(&self) -> Self {
        let terms = self.terms.iter().map(|(c, ops)| (c.conj(), ops.iter().map(Element::adjoint).collect())).collect();
        Self { terms, ..self.clone() }
    }

    /// Product trace `Σₜ cₜ Πⱼ τ(aₜ,ⱼ)`.
    pub fn tau(&self) -> C64 {
        self.terms.iter().map(|(c, ops)| ops.iter().fold(*c, |acc, a| acc * self.alg.trace(a))).sum()
    }

    /// Dense matrix on `(H_M)^{⊗L}`.
    pub fn to_dense(&self) -> CMat {
        let mut out: Option<CMat> = None;
        for (c, ops) in &self.terms {
            let mut t = self.alg.to_dense(&ops[0]);
            for a in &ops[1..] {
                t = t.kronecker(&self.alg.to_dense(a));
            }
            t *= *c;
            out = Some(match out {
                None => t,
                Some(acc) => acc + t,
            });
        }
        out.expect("at least one term")
    }

    fn refresh_norm(&mut self) {
        if self.terms.len() == 1 {
            let (c, ops) = &self.terms[0];
            self.norm_inf = ops.iter().fold(c.norm(), |acc, a| acc * self.alg.norm(a, Norm::Inf));
            self.norm_exact = true;
            return;
        }
        let dim = self.alg.hilbert_dim().checked_pow(self.sites as u32);
        if dim.is_some_and(|d| d <= DENSE_NORM_LIMIT) {
            let d = self.to_dense();
            self.norm_inf = d.singular_values().iter().fold(0.0_f64, |m, v| m.max(*v));
            self.norm_exact = true;
        } else {
            self.norm_inf = self
                .terms
                .iter()
                .map(|(c, ops)| ops.iter().fold(c.norm(), |acc, a| acc * self.alg.norm(a, Norm::Inf)))
                .sum();
            self.norm_exact = false;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn dense_round_trip_and_norm() {
        let alg = TracialAlgebra::full(2);
        let mut rng = stream(2, "obs", 0);
        let a = alg.random_element(&mut rng);
        let b = alg.random_element(&mut rng);
        let dense = alg.to_dense(&a).kronecker(&alg.to_dense(&b));
        let o = LocalObservable::from_dense(&alg, 3, 2, &dense).unwrap();
        assert!((o.to_dense() - &dense).iter().all(|z| z.norm() < 1e-14));
        let p = LocalObservable::product(&alg, 3, vec![a.clone(), b.clone()]).unwrap();
        assert!((o.norm_inf() - p.norm_inf()).abs() < 1e-12 * p.norm_inf());
        assert!(o.norm_exact());
        let big = o.embedded(0, 6).unwrap();
        assert_eq!(big.norm_inf(), o.norm_inf());
        assert_eq!((big.start(), big.end()), (0, 5));
    }

    #[test]
    fn rejects_cross_block_entries() {
        let alg = TracialAlgebra::new(&[1, 1], &[0.5, 0.5]).unwrap();
        let mut d = CMat::zeros(2, 2);
        d[(0, 1)] = ONE;
        assert!(LocalObservable::from_dense(&alg, 0, 1, &d).is_err());
    }

    #[test]
    fn disjoint_product_and_trace() {
        let alg = TracialAlgebra::full(2);
        let z = alg.diag(&[&[1.0, -1.0]]).unwrap();
        let a = LocalObservable::single(&alg, -2, alg.identity().scale(2.0)).unwrap();
        let b = LocalObservable::single(&alg, 1, z).unwrap();
        let ab = a.mul(&b).unwrap();
        assert_eq!((ab.start(), ab.sites()), (-2, 4));
        assert!((ab.tau() - C64::new(0.0, 0.0)).norm() < 1e-15);
        assert!((ab.norm_inf() - 2.0).abs() < 1e-14);
        assert!(a.embedded(-1, 3).is_err());
    }
}
