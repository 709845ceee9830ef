//! Model checkpoints, tagged `nftk-v1`.
//!
//! Binary layout (all integers `u64` little-endian, all floats IEEE-754
//! `f64` little-endian):
//!
//! ```text
//! b"nftk-v1\n"
//! input_dim width depth output_dim
//! activation: u8 (0 relu, 1 erf, 2 identity)
//! parameterization: u8 (0 standard, 1 ntk) [+ sigma_w sigma_b sigma_v if ntk]
//! theta, then theta0: for each layer: W, b, V
//! omega
//! ```
//!
//! A matrix is `rows cols data...` (row-major); a vector is `len data...`.
//! The JSON form carries the same content under `"format": "nftk-v1"`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Activation, Architecture, OmegaMatrix, ParamSet, Parameterization, Theta};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const FORMAT_TAG: &str = "nftk-v1";
const MAGIC: &[u8; 8] = b"nftk-v1\n";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub arch: Architecture,
    pub params: ParamSet,
    pub omega: OmegaMatrix,
}

#[derive(Serialize, Deserialize)]
struct JsonCheckpoint {
    format: String,
    architecture: Architecture,
    theta: Theta,
    theta0: Theta,
    omega: OmegaMatrix,
}

impl Checkpoint {
    pub fn new(arch: Architecture, params: ParamSet, omega: OmegaMatrix) -> Result<Self> {
        arch.validate()?;
        params.theta.check_shape(&arch)?;
        omega.check_shape(&arch)?;
        Ok(Checkpoint { arch, params, omega })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        let a = &self.arch;
        for v in [a.input_dim, a.width, a.depth, a.output_dim] {
            put_u64(&mut out, v as u64);
        }
        out.push(match a.activation {
            Activation::Relu => 0,
            Activation::Erf => 1,
            Activation::Identity => 2,
        });
        match a.parameterization {
            Parameterization::Standard => out.push(0),
            Parameterization::Ntk {
                sigma_w,
                sigma_b,
                sigma_v,
            } => {
                out.push(1);
                for v in [sigma_w, sigma_b, sigma_v] {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        for theta in [&self.params.theta, self.params.theta0()] {
            for l in 0..a.depth {
                put_matrix(&mut out, &theta.weights[l]);
                put_vec(&mut out, &theta.biases[l]);
                put_matrix(&mut out, &theta.readouts[l]);
            }
        }
        put_matrix(&mut out, self.omega.as_matrix());
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, path };
        let magic = r.take(8)?;
        if magic != MAGIC {
            return Err(Error::format(path, "offset 0", "missing nftk-v1 magic"));
        }
        let input_dim = r.usize()?;
        let width = r.usize()?;
        let depth = r.usize()?;
        let output_dim = r.usize()?;
        let activation = match r.u8()? {
            0 => Activation::Relu,
            1 => Activation::Erf,
            2 => Activation::Identity,
            t => return Err(r.error(format!("unknown activation tag {t}"))),
        };
        let parameterization = match r.u8()? {
            0 => Parameterization::Standard,
            1 => Parameterization::Ntk {
                sigma_w: r.f64()?,
                sigma_b: r.f64()?,
                sigma_v: r.f64()?,
            },
            t => return Err(r.error(format!("unknown parameterization tag {t}"))),
        };
        let arch = Architecture {
            input_dim,
            width,
            depth,
            output_dim,
            activation,
            parameterization,
        };
        arch.validate()
            .map_err(|e| Error::format(path, "header", e.to_string()))?;
        let mut thetas = Vec::with_capacity(2);
        for _ in 0..2 {
            let mut theta = Theta {
                weights: Vec::with_capacity(depth),
                biases: Vec::with_capacity(depth),
                readouts: Vec::with_capacity(depth),
            };
            for _ in 0..depth {
                theta.weights.push(r.matrix()?);
                theta.biases.push(r.vec()?);
                theta.readouts.push(r.matrix()?);
            }
            theta
                .check_shape(&arch)
                .map_err(|e| Error::format(path, format!("offset {}", r.pos), e.to_string()))?;
            thetas.push(theta);
        }
        let omega_pos = r.pos;
        let omega = OmegaMatrix::new(r.matrix()?)
            .map_err(|e| Error::format(path, format!("offset {omega_pos}"), e.to_string()))?;
        if r.pos != bytes.len() {
            return Err(r.error("trailing bytes after omega".into()));
        }
        let theta0 = thetas.pop().expect("two thetas");
        let theta = thetas.pop().expect("two thetas");
        let params = ParamSet::from_parts(theta, theta0)?;
        Checkpoint::new(arch, params, omega)
            .map_err(|e| Error::format(path, "body", e.to_string()))
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = JsonCheckpoint {
            format: FORMAT_TAG.to_string(),
            architecture: self.arch,
            theta: self.params.theta.clone(),
            theta0: self.params.theta0().clone(),
            omega: self.omega.clone(),
        };
        Ok(serde_json::to_string(&doc)?)
    }

    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        let doc: JsonCheckpoint = serde_json::from_str(text)
            .map_err(|e| Error::format(path, format!("line {}", e.line()), e.to_string()))?;
        if doc.format != FORMAT_TAG {
            return Err(Error::format(
                path,
                "format",
                format!("expected {FORMAT_TAG}, found {}", doc.format),
            ));
        }
        let params = ParamSet::from_parts(doc.theta, doc.theta0)?;
        Checkpoint::new(doc.architecture, params, doc.omega)
            .map_err(|e| Error::format(path, "body", e.to_string()))
    }

    /// Writes the binary form.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    /// Reads either form, detected from the first byte.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.first() == Some(&b'{') {
            let text = std::str::from_utf8(&bytes)
                .map_err(|e| Error::format(path, "utf-8", e.to_string()))?;
            Checkpoint::from_json(text, path)
        } else {
            Checkpoint::from_bytes(&bytes, path)
        }
    }
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_vec(out: &mut Vec<u8>, v: &[f64]) {
    put_u64(out, v.len() as u64);
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

fn put_matrix(out: &mut Vec<u8>, m: &Matrix) {
    put_u64(out, m.rows() as u64);
    put_u64(out, m.cols() as u64);
    for x in m.as_slice() {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn error(&self, detail: String) -> Error {
        Error::format(self.path, format!("offset {}", self.pos), detail)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.error(format!("truncated: needed {n} more bytes")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn usize(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| self.error(format!("count {v} out of range")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len_checked(&mut self, count: usize) -> Result<()> {
        if count.checked_mul(8).is_none_or(|b| b > self.bytes.len() - self.pos) {
            return Err(self.error(format!("truncated: {count} values announced")));
        }
        Ok(())
    }

    fn vec(&mut self) -> Result<Vec<f64>> {
        let len = self.usize()?;
        self.len_checked(len)?;
        (0..len).map(|_| self.f64()).collect()
    }

    fn matrix(&mut self) -> Result<Matrix> {
        let rows = self.usize()?;
        let cols = self.usize()?;
        let count = rows
            .checked_mul(cols)
            .ok_or_else(|| self.error("matrix size overflow".into()))?;
        self.len_checked(count)?;
        let data = (0..count).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
        Matrix::from_vec(rows, cols, data)
    }
}
