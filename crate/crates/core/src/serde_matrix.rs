//! JSON-friendly matrix encoding: `{"rows": r, "cols": c, "data": [..]}` with
//! `data` in row-major order.

use nalgebra::DMatrix;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowMajor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl From<&DMatrix<f64>> for RowMajor {
    fn from(m: &DMatrix<f64>) -> Self {
        let mut data = Vec::with_capacity(m.len());
        for i in 0..m.nrows() {
            data.extend(m.row(i).iter().copied());
        }
        RowMajor {
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
    }
}

impl TryFrom<RowMajor> for DMatrix<f64> {
    type Error = String;

    fn try_from(r: RowMajor) -> Result<Self, Self::Error> {
        if r.rows * r.cols != r.data.len() {
            return Err(format!(
                "matrix declares {}x{} but carries {} entries",
                r.rows,
                r.cols,
                r.data.len()
            ));
        }
        Ok(DMatrix::from_row_slice(r.rows, r.cols, &r.data))
    }
}

pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
    RowMajor::from(m).serialize(s)
}

pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
    let r = RowMajor::deserialize(d)?;
    DMatrix::try_from(r).map_err(serde::de::Error::custom)
}
