//! Binary model files.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! "NESM"            4 bytes magic
//! version           u32 (currently 1)
//! variant tag       u8  (0 = NES-I, 1 = NES-B, 2 = NES-G)
//! shape             7 x u64: n_ctx, D, M, K, F, L, n_classes
//! parameters        f64, row-major, in this order:
//!   F_0 .. F_{n_ctx-1}               D x D each
//!   M                                M x D          (NES-B, NES-G)
//!   W, b_h, b_x, σ                   D x K, K, D, D (NES-I, NES-B)
//!   Wfx, Wfy, Wfh, b_x, b_y, b_h,    D x F, M x F, K x F, D, M, K,
//!   σx, σy                           D, M           (NES-G)
//!   J                                K x L
//!   softmax W, b                     L x C, C       (when n_classes > 0)
//! ```
//!
//! Floats are stored bit-for-bit, so a save/load round trip is exact.

use std::path::Path;

use ndarray::{Array1, Array2};

use crate::error::{NesError, Result};
use crate::factored_rbm::FactoredRbm;
use crate::gaussian_rbm::GaussianRbm;
use crate::layers::{BiasMap, ContextTransform, SpeechProjection};
use crate::model::{Core, ModelShape, NesModel, SoftmaxHead, Variant};

pub const MAGIC: &[u8; 4] = b"NESM";
pub const FORMAT_VERSION: u32 = 1;

pub fn encode(model: &NesModel) -> Result<Vec<u8>> {
    model.validate()?;
    let s = model.shape();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(model.variant.tag());
    for v in [s.n_ctx, s.d, s.m_dim, s.k, s.factors, s.l, s.n_classes] {
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
    let mut put = |values: &mut dyn Iterator<Item = &f64>| {
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    };
    for f in &model.context.mats {
        put(&mut f.iter());
    }
    if let Some(bm) = &model.bias_map {
        put(&mut bm.m.iter());
    }
    match &model.core {
        Core::Gaussian(r) => {
            for a in [&r.w] {
                put(&mut a.iter());
            }
            for b in [&r.b_h, &r.b_x, &r.sigma] {
                put(&mut b.iter());
            }
        }
        Core::Factored(r) => {
            for a in [&r.w_fx, &r.w_fy, &r.w_fh] {
                put(&mut a.iter());
            }
            for b in [&r.b_x, &r.b_y, &r.b_h, &r.sigma_x, &r.sigma_y] {
                put(&mut b.iter());
            }
        }
    }
    put(&mut model.projection.j.iter());
    if let Some(head) = &model.head {
        put(&mut head.w.iter());
        put(&mut head.b.iter());
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let out = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err(NesError::Corrupt(format!(
                "file ends inside {what} (offset {}, {} bytes total)",
                self.pos,
                self.bytes.len()
            ))),
        }
    }

    fn u64(&mut self, what: &str) -> Result<usize> {
        let b = self.take(8, what)?;
        let v = u64::from_le_bytes(b.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| NesError::Corrupt(format!("{what} {v} is out of range")))
    }

    fn floats(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let len = n
            .checked_mul(8)
            .ok_or_else(|| NesError::Corrupt(format!("{what} is implausibly large")))?;
        let b = self.take(len, what)?;
        Ok(b.chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn matrix(&mut self, rows: usize, cols: usize, what: &str) -> Result<Array2<f64>> {
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| NesError::Corrupt(format!("{what} is implausibly large")))?;
        let v = self.floats(n, what)?;
        Ok(Array2::from_shape_vec((rows, cols), v).expect("length checked"))
    }

    fn vector(&mut self, n: usize, what: &str) -> Result<Array1<f64>> {
        Ok(Array1::from(self.floats(n, what)?))
    }
}

pub fn decode(bytes: &[u8]) -> Result<NesModel> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(NesError::Corrupt("not a model file (bad magic bytes)".into()));
    }
    let version = u32::from_le_bytes(r.take(4, "version")?.try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(NesError::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let tag = r.take(1, "variant tag")?[0];
    let variant = Variant::from_tag(tag)
        .ok_or_else(|| NesError::Corrupt(format!("unknown variant tag {tag}")))?;
    let mut dims = [0usize; 7];
    for (i, d) in dims.iter_mut().enumerate() {
        *d = r.u64(&format!("shape field {i}"))?;
    }
    let [n_ctx, d, m_dim, k, factors, l, n_classes] = dims;
    let shape = ModelShape {
        n_ctx,
        d,
        m_dim,
        k,
        factors,
        l,
        n_classes,
    };
    shape
        .validate(variant)
        .map_err(|e| NesError::Corrupt(format!("bad shape header: {e}")))?;

    let mats = (0..n_ctx)
        .map(|i| r.matrix(d, d, &format!("context matrix {i}")))
        .collect::<Result<Vec<_>>>()?;
    let bias_map = if variant.uses_spoken() {
        Some(BiasMap {
            m: r.matrix(m_dim, d, "bias map")?,
        })
    } else {
        None
    };
    let core = if variant == Variant::G {
        Core::Factored(FactoredRbm {
            w_fx: r.matrix(d, factors, "Wfx")?,
            w_fy: r.matrix(m_dim, factors, "Wfy")?,
            w_fh: r.matrix(k, factors, "Wfh")?,
            b_x: r.vector(d, "input bias")?,
            b_y: r.vector(m_dim, "visible bias")?,
            b_h: r.vector(k, "hidden bias")?,
            sigma_x: r.vector(d, "input sigma")?,
            sigma_y: r.vector(m_dim, "visible sigma")?,
        })
    } else {
        Core::Gaussian(GaussianRbm {
            w: r.matrix(d, k, "RBM weights")?,
            b_h: r.vector(k, "hidden bias")?,
            b_x: r.vector(d, "visible bias")?,
            sigma: r.vector(d, "sigma")?,
        })
    };
    let projection = SpeechProjection {
        j: r.matrix(k, l, "projection")?,
    };
    let head = if n_classes > 0 {
        Some(SoftmaxHead {
            w: r.matrix(l, n_classes, "softmax weights")?,
            b: r.vector(n_classes, "softmax bias")?,
        })
    } else {
        None
    };
    if r.pos != bytes.len() {
        return Err(NesError::Corrupt(format!(
            "{} trailing bytes after the parameters",
            bytes.len() - r.pos
        )));
    }
    let context =
        ContextTransform::new(mats).map_err(|e| NesError::Corrupt(format!("context: {e}")))?;
    let model = NesModel {
        variant,
        context,
        bias_map,
        projection,
        core,
        head,
    };
    model
        .validate()
        .map_err(|e| NesError::Corrupt(format!("inconsistent parameters: {e}")))?;
    Ok(model)
}

pub fn save_model(model: &NesModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(model)?;
    std::fs::write(path, bytes).map_err(|e| NesError::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<NesModel> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| NesError::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        NesError::Corrupt(msg) => NesError::Corrupt(format!("{}: {msg}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::seeded_rng;

    fn models() -> Vec<NesModel> {
        let shape = ModelShape {
            n_ctx: 3,
            d: 5,
            m_dim: 4,
            k: 6,
            factors: 7,
            l: 5,
            n_classes: 3,
        };
        let mut out = Vec::new();
        for v in Variant::ALL {
            for n_classes in [0, 3] {
                let s = ModelShape { n_classes, ..shape };
                out.push(NesModel::new(v, &s, &mut seeded_rng(v.tag() as u64)).unwrap());
            }
        }
        out
    }

    #[test]
    fn round_trip_is_exact() {
        for m in models() {
            let bytes = encode(&m).unwrap();
            let back = decode(&bytes).unwrap();
            assert_eq!(back, m);
            assert_eq!(encode(&back).unwrap(), bytes);
        }
    }

    #[test]
    fn round_trip_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.nesm");
        let m = &models()[5];
        save_model(m, &path).unwrap();
        assert_eq!(&load_model(&path).unwrap(), m);
        assert!(matches!(load_model(dir.path().join("absent")), Err(NesError::Io { .. })));
    }

    #[test]
    fn truncation_and_tampering_are_detected() {
        let bytes = encode(&models()[4]).unwrap();
        for cut in [0, 3, 8, 20, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(decode(&bytes[..cut]), Err(NesError::Corrupt(_))), "cut {cut}");
        }
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(decode(&long), Err(NesError::Corrupt(_))));

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode(&bad), Err(NesError::Corrupt(_))));

        let mut v2 = bytes.clone();
        v2[4..8].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(
            decode(&v2),
            Err(NesError::Version {
                found: 2,
                expected: 1
            })
        ));

        let mut tag = bytes.clone();
        tag[8] = 9;
        assert!(matches!(decode(&tag), Err(NesError::Corrupt(_))));

        let mut huge = bytes;
        huge[9..17].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(matches!(decode(&huge), Err(NesError::Corrupt(_))));
    }
}
