//! On-disk map descriptors.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{Provenance, SuperOperator};
use crate::algebra::{blocks_from_json, blocks_to_json, AlgebraSpec, BlocksJson, CMat, TracialAlgebra, C64};
use crate::config::Tolerances;
use crate::error::{Error, Result};

/// Dense complex matrix as rows of `[re, im]` pairs.
pub type DenseJson = Vec<Vec<[f64; 2]>>;

fn dense_to_json(m: &CMat) -> DenseJson {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect()).collect()
}

fn dense_from_json(raw: &DenseJson, what: &str) -> Result<CMat> {
    let n = raw.len();
    let c = raw.first().map_or(0, Vec::len);
    if raw.iter().any(|r| r.len() != c) {
        return Err(Error::ShapeMismatch(format!("{what}: ragged rows")));
    }
    Ok(CMat::from_fn(n, c, |i, j| C64::new(raw[i][j][0], raw[i][j][1])))
}

/// `{"kind": "kraus" | "matrix" | "strongly_summable" | "composition", ...}`.
///
/// `matrix` is the superoperator in the τ-orthonormal Hermitian basis.
/// `composition` lists factors outermost first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MapFile {
    Kraus { algebra: AlgebraSpec, ops: Vec<DenseJson> },
    Matrix { algebra: AlgebraSpec, matrix: DenseJson },
    StronglySummable { algebra: AlgebraSpec, pairs: Vec<(BlocksJson, BlocksJson)> },
    Composition { factors: Vec<MapFile> },
}

impl MapFile {
    /// Descriptor of `s`; maps without a Kraus or pair provenance are
    /// stored by their matrix.
    pub fn from_operator(s: &SuperOperator) -> Self {
        let algebra = AlgebraSpec::from(s.algebra());
        match s.provenance() {
            Provenance::Kraus(ops) => MapFile::Kraus { algebra, ops: ops.iter().map(dense_to_json).collect() },
            Provenance::StronglySummable(pairs) => MapFile::StronglySummable {
                algebra,
                pairs: pairs.iter().map(|(a, m)| (blocks_to_json(a), blocks_to_json(m))).collect(),
            },
            _ => MapFile::Matrix { algebra, matrix: dense_to_json(&s.matrix().map(|v| C64::new(v, 0.0))) },
        }
    }

    pub fn build(&self, tol: &Tolerances) -> Result<SuperOperator> {
        match self {
            MapFile::Kraus { algebra, ops } => {
                let alg = algebra.build()?;
                let ops = ops.iter().map(|o| dense_from_json(o, "Kraus operator")).collect::<Result<Vec<_>>>()?;
                SuperOperator::from_kraus_dense(&alg, ops, tol)
            }
            MapFile::Matrix { algebra, matrix } => {
                let alg = algebra.build()?;
                let m: DMatrix<C64> = dense_from_json(matrix, "superoperator matrix")?;
                SuperOperator::from_complex_matrix(&alg, &m, tol)
            }
            MapFile::StronglySummable { algebra, pairs } => {
                let alg = algebra.build()?;
                let pairs = pairs
                    .iter()
                    .map(|(a, m)| Ok((blocks_from_json(&alg, a)?, blocks_from_json(&alg, m)?)))
                    .collect::<Result<Vec<_>>>()?;
                SuperOperator::from_strongly_summable(&alg, &pairs, tol)
            }
            MapFile::Composition { factors } => {
                let mut it = factors.iter().rev();
                let first = it.next().ok_or_else(|| Error::InvalidInput("empty composition".into()))?;
                let mut acc = first.build(tol)?;
                for f in it {
                    acc = f.build(tol)?.compose(&acc)?;
                }
                Ok(acc.validated(tol))
            }
        }
    }

    pub fn algebra(&self) -> Result<TracialAlgebra> {
        match self {
            MapFile::Kraus { algebra, .. } | MapFile::Matrix { algebra, .. } | MapFile::StronglySummable { algebra, .. } => {
                algebra.build()
            }
            MapFile::Composition { factors } => {
                factors.first().ok_or_else(|| Error::InvalidInput("empty composition".into()))?.algebra()
            }
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::InvalidInput(format!("map file: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }
}
