//! Binary model container. All integers and floats are little endian.
//!
//! ```text
//! offset  size      field
//! 0       4         magic "FGMM"
//! 4       2         format version (u16)
//! 6       1         feature mask: 0 = FF, 1 = FM, 2 = FF+FM
//! 7       1         reserved, 0
//! 8       4         input dim D (u32)
//! 12      4         hidden units H (u32, 128)
//! 16      4         classes C (u32, 2)
//! 20      8         dropout rate (f64)
//! 28      8*D       scaler mean
//! ..      8*D       scaler std
//! ..      8*H*D     W1, row-major H x D
//! ..      8*H       b1
//! ..      8*C*H     W2, row-major C x H
//! ..      8*C       b2
//! ..      32        SHA-256 of every preceding byte
//! ```

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{ClassifierError, MlpModel, CLASSES, HIDDEN_UNITS};
use crate::features::{FeatureMask, Scaler};

pub const MODEL_MAGIC: &[u8; 4] = b"FGMM";
pub const MODEL_FORMAT_VERSION: u16 = 1;
const HEADER_LEN: usize = 28;
const DIGEST_LEN: usize = 32;

fn mask_code(mask: FeatureMask) -> u8 {
    match mask {
        FeatureMask::Ff => 0,
        FeatureMask::Fm => 1,
        FeatureMask::FfFm => 2,
    }
}

pub fn write_model(model: &MlpModel) -> Vec<u8> {
    let d = model.input_dim();
    let mut buf = Vec::with_capacity(HEADER_LEN + 8 * (2 * d + model.parameter_count()) + DIGEST_LEN);
    buf.extend_from_slice(MODEL_MAGIC);
    buf.extend_from_slice(&MODEL_FORMAT_VERSION.to_le_bytes());
    buf.push(mask_code(model.mask));
    buf.push(0);
    buf.extend_from_slice(&(d as u32).to_le_bytes());
    buf.extend_from_slice(&(HIDDEN_UNITS as u32).to_le_bytes());
    buf.extend_from_slice(&(CLASSES as u32).to_le_bytes());
    buf.extend_from_slice(&model.dropout_rate.to_le_bytes());
    let sections: [&[f64]; 6] = [
        &model.scaler.mean,
        &model.scaler.std,
        &model.w1,
        &model.b1,
        &model.w2,
        &model.b2,
    ];
    for v in sections.iter().flat_map(|s| s.iter()) {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    buf
}

fn format_err(msg: impl Into<String>) -> ClassifierError {
    ClassifierError::Format(msg.into())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], ClassifierError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| format_err("truncated model file"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, ClassifierError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, ClassifierError> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| format_err("section too large"))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

pub fn read_model(bytes: &[u8]) -> Result<MlpModel, ClassifierError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MODEL_MAGIC {
        return Err(format_err("not a facegate model file (bad magic)"));
    }
    let version = u16::from_le_bytes(r.take(2)?.try_into().expect("2 bytes"));
    if version > MODEL_FORMAT_VERSION || version == 0 {
        return Err(ClassifierError::UnsupportedVersion {
            found: version,
            supported: MODEL_FORMAT_VERSION,
        });
    }
    let mask = match r.take(2)?[0] {
        0 => FeatureMask::Ff,
        1 => FeatureMask::Fm,
        2 => FeatureMask::FfFm,
        other => return Err(format_err(format!("unknown mask code {other}"))),
    };
    let d = r.u32()? as usize;
    let h = r.u32()? as usize;
    let c = r.u32()? as usize;
    if d != mask.dim() || h != HIDDEN_UNITS || c != CLASSES {
        return Err(format_err(format!(
            "shape {d}x{h}x{c} does not match mask {mask} ({}x{HIDDEN_UNITS}x{CLASSES})",
            mask.dim()
        )));
    }
    let expected_len = HEADER_LEN + 8 * (2 * d + h * d + h + c * h + c) + DIGEST_LEN;
    if bytes.len() != expected_len {
        return Err(format_err(format!(
            "expected {expected_len} bytes, found {}",
            bytes.len()
        )));
    }
    let body = &bytes[..expected_len - DIGEST_LEN];
    if Sha256::digest(body).as_slice() != &bytes[expected_len - DIGEST_LEN..] {
        return Err(format_err("checksum mismatch"));
    }
    let dropout_rate = f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
    let mean = r.f64s(d)?;
    let std = r.f64s(d)?;
    let w1 = r.f64s(h * d)?;
    let b1 = r.f64s(h)?;
    let w2 = r.f64s(c * h)?;
    let b2 = r.f64s(c)?;
    let model = MlpModel {
        mask,
        w1,
        b1,
        w2,
        b2: [b2[0], b2[1]],
        dropout_rate,
        scaler: Scaler { mean, std },
    };
    let all_finite = [&model.w1, &model.b1, &model.w2, &model.scaler.mean, &model.scaler.std]
        .iter()
        .all(|s| s.iter().all(|v| v.is_finite()))
        && model.b2.iter().all(|v| v.is_finite());
    if !all_finite || !(0.0..1.0).contains(&model.dropout_rate) {
        return Err(format_err("non-finite parameter or invalid dropout rate"));
    }
    Ok(model)
}

pub fn save_model(model: &MlpModel, path: &Path) -> Result<(), ClassifierError> {
    fs::write(path, write_model(model)).map_err(|source| ClassifierError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_model(path: &Path) -> Result<MlpModel, ClassifierError> {
    let bytes = fs::read(path).map_err(|source| ClassifierError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_model(&bytes)
}
