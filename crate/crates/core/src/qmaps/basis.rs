//! τ-orthonormal Hermitian basis of a multimatrix algebra.
//!
//! Per block of size `n` with weight `c`: the diagonal matrix units
//! `E_kk`, the symmetric pairs `(E_kl + E_lk)/√2` and the antisymmetric
//! pairs `(−iE_kl + iE_lk)/√2` for `k < l`, all divided by `√c`. In this
//! basis `τ(xy)` is the Euclidean inner product of coordinates for
//! Hermitian `x, y`, and a Hermiticity-preserving map has a real matrix.

use nalgebra::DVector;

use crate::algebra::{CMat, Element, TracialAlgebra, C64};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Diag,
    Sym,
    Anti,
}

#[derive(Debug, Clone, Copy)]
struct Entry {
    block: usize,
    kind: Kind,
    k: usize,
    l: usize,
}

#[derive(Debug, Clone)]
pub struct HermitianBasis {
    dims: Vec<usize>,
    sqrt_w: Vec<f64>,
    entries: Vec<Entry>,
}

impl HermitianBasis {
    pub fn new(alg: &TracialAlgebra) -> Self {
        let mut entries = Vec::with_capacity(alg.coord_dim());
        for (b, &n) in alg.dims().iter().enumerate() {
            for k in 0..n {
                entries.push(Entry { block: b, kind: Kind::Diag, k, l: k });
            }
            for k in 0..n {
                for l in (k + 1)..n {
                    entries.push(Entry { block: b, kind: Kind::Sym, k, l });
                    entries.push(Entry { block: b, kind: Kind::Anti, k, l });
                }
            }
        }
        Self { dims: alg.dims().to_vec(), sqrt_w: alg.weights().iter().map(|c| c.sqrt()).collect(), entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Complex coordinates `τ(eᵢ x)`, returned as real and imaginary parts.
    pub fn coords(&self, x: &Element) -> (DVector<f64>, DVector<f64>) {
        let d = self.entries.len();
        let mut re = DVector::zeros(d);
        let mut im = DVector::zeros(d);
        let r2 = std::f64::consts::FRAC_1_SQRT_2;
        for (i, e) in self.entries.iter().enumerate() {
            let m = &x.blocks[e.block];
            let s = self.sqrt_w[e.block];
            let z = match e.kind {
                Kind::Diag => m[(e.k, e.k)] * s,
                Kind::Sym => (m[(e.l, e.k)] + m[(e.k, e.l)]) * (s * r2),
                Kind::Anti => (m[(e.k, e.l)] - m[(e.l, e.k)]) * C64::new(0.0, s * r2),
            };
            re[i] = z.re;
            im[i] = z.im;
        }
        (re, im)
    }

    /// Real coordinates of the Hermitian part of `x`.
    pub fn coords_herm(&self, x: &Element) -> DVector<f64> {
        self.coords(x).0
    }

    /// `Σᵢ (reᵢ + i·imᵢ) eᵢ`.
    pub fn element(&self, re: &DVector<f64>, im: Option<&DVector<f64>>) -> Element {
        let mut blocks: Vec<CMat> = self.dims.iter().map(|&n| CMat::zeros(n, n)).collect();
        let r2 = std::f64::consts::FRAC_1_SQRT_2;
        for (i, e) in self.entries.iter().enumerate() {
            let z = C64::new(re[i], im.map_or(0.0, |v| v[i]));
            if z.re == 0.0 && z.im == 0.0 {
                continue;
            }
            let s = 1.0 / self.sqrt_w[e.block];
            let m = &mut blocks[e.block];
            match e.kind {
                Kind::Diag => m[(e.k, e.k)] += z * s,
                Kind::Sym => {
                    let v = z * (s * r2);
                    m[(e.k, e.l)] += v;
                    m[(e.l, e.k)] += v;
                }
                Kind::Anti => {
                    let v = z * (s * r2);
                    m[(e.k, e.l)] += v * C64::new(0.0, -1.0);
                    m[(e.l, e.k)] += v * C64::new(0.0, 1.0);
                }
            }
        }
        Element { blocks }
    }

    /// The `i`-th basis element.
    pub fn basis_element(&self, i: usize) -> Element {
        let mut v = DVector::zeros(self.len());
        v[i] = 1.0;
        self.element(&v, None)
    }

    /// `true` at indices of antisymmetric pairs, the basis elements that
    /// change sign under transposition.
    pub fn antisymmetric_mask(&self) -> Vec<bool> {
        self.entries.iter().map(|e| e.kind == Kind::Anti).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn basis_is_tau_orthonormal() {
        let alg = TracialAlgebra::new(&[2, 3], &[1.0, 2.0]).unwrap();
        let b = HermitianBasis::new(&alg);
        assert_eq!(b.len(), 13);
        for i in 0..b.len() {
            let ei = b.basis_element(i);
            assert!(ei.max_asymmetry() < 1e-15);
            for j in 0..b.len() {
                let g = alg.trace_product(&ei, &b.basis_element(j));
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((g.re - want).abs() < 1e-14 && g.im.abs() < 1e-14);
            }
        }
    }

    #[test]
    fn coordinates_round_trip() {
        let alg = TracialAlgebra::new(&[2, 1, 3], &[1.0, 3.0, 0.5]).unwrap();
        let b = HermitianBasis::new(&alg);
        let mut rng = stream(4, "basis-test", 0);
        let x = alg.random_element(&mut rng);
        let (re, im) = b.coords(&x);
        assert!(b.element(&re, Some(&im)).max_abs_diff(&x) < 1e-13);
        let h = x.hermitian_part();
        let (re, im) = b.coords(&h);
        assert!(im.amax() < 1e-14);
        // τ(hh) = |coords|²
        assert!((alg.trace_product(&h, &h).re - re.norm_squared()).abs() < 1e-12);
    }
}
