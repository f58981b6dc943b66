//! Binary containers for fields, spectra, and network parameters.
//!
//! Field container: 16-byte ASCII magic ("SOBFLD01" padded with spaces), then
//! H and W as 8-byte little-endian unsigned integers, then H·W doubles
//! (8-byte little-endian IEEE-754) in row-major order. Spectra reuse the same
//! container under magic "SOBSPC01". Parameter files use magic "SOBPRM01"
//! with the same numeric encoding: grid H, grid W, hidden width, and
//! parameter count as four u64, then the flat parameter vector.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::field::{Field2D, Spectrum2D};
use crate::net::FieldParams;

pub const FIELD_MAGIC: &[u8; 8] = b"SOBFLD01";
pub const SPECTRUM_MAGIC: &[u8; 8] = b"SOBSPC01";
pub const PARAMS_MAGIC: &[u8; 8] = b"SOBPRM01";

const MAGIC_LEN: usize = 16;

fn padded_magic(tag: &[u8; 8]) -> [u8; MAGIC_LEN] {
    let mut m = [b' '; MAGIC_LEN];
    m[..8].copy_from_slice(tag);
    m
}

fn push_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn push_f64(buf: &mut Vec<u8>, v: f64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::malformed(self.path, "truncated file"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn read_u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }

    fn read_f64(&mut self) -> Result<f64> {
        let b = self.take(8)?;
        Ok(f64::from_le_bytes(b.try_into().unwrap()))
    }

    fn expect_magic(&mut self, tag: &[u8; 8]) -> Result<()> {
        let m = self.take(MAGIC_LEN)?;
        if m != padded_magic(tag) {
            return Err(Error::malformed(
                self.path,
                format!("bad magic, expected {}", String::from_utf8_lossy(tag)),
            ));
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::malformed(self.path, "trailing bytes"));
        }
        Ok(())
    }
}

fn grid_to_bytes(tag: &[u8; 8], h: usize, w: usize, data: &[f64]) -> Vec<u8> {
    let mut buf = Vec::with_capacity(MAGIC_LEN + 16 + 8 * data.len());
    buf.extend_from_slice(&padded_magic(tag));
    push_u64(&mut buf, h as u64);
    push_u64(&mut buf, w as u64);
    for &v in data {
        push_f64(&mut buf, v);
    }
    buf
}

pub fn field_to_bytes(f: &Field2D) -> Vec<u8> {
    grid_to_bytes(FIELD_MAGIC, f.height(), f.width(), f.as_slice())
}

pub fn spectrum_to_bytes(s: &Spectrum2D) -> Vec<u8> {
    grid_to_bytes(SPECTRUM_MAGIC, s.height(), s.width(), s.as_slice())
}

pub fn write_field(path: impl AsRef<Path>, f: &Field2D) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, field_to_bytes(f)).map_err(|e| Error::io(path, e))
}

pub fn write_spectrum(path: impl AsRef<Path>, s: &Spectrum2D) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, spectrum_to_bytes(s)).map_err(|e| Error::io(path, e))
}

fn read_grid(path: &Path, tag: &[u8; 8]) -> Result<(usize, usize, Vec<f64>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
        path,
    };
    r.expect_magic(tag)?;
    let h = r.read_u64()? as usize;
    let w = r.read_u64()? as usize;
    let n = h
        .checked_mul(w)
        .ok_or_else(|| Error::malformed(path, "dimension overflow"))?;
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        data.push(r.read_f64()?);
    }
    r.finish()?;
    Ok((h, w, data))
}

pub fn read_field(path: impl AsRef<Path>) -> Result<Field2D> {
    let path = path.as_ref();
    let (h, w, data) = read_grid(path, FIELD_MAGIC)?;
    Field2D::new(h, w, data)
        .map_err(|e| Error::malformed(path, format!("invalid field payload: {e}")))
}

pub fn read_spectrum(path: impl AsRef<Path>) -> Result<Spectrum2D> {
    let path = path.as_ref();
    let (h, w, data) = read_grid(path, SPECTRUM_MAGIC)?;
    Spectrum2D::new(h, w, data)
        .map_err(|e| Error::malformed(path, format!("invalid spectrum payload: {e}")))
}

pub fn params_to_bytes(p: &FieldParams) -> Vec<u8> {
    let (h, w) = p.grid();
    let data = p.as_slice();
    let mut buf = Vec::with_capacity(MAGIC_LEN + 32 + 8 * data.len());
    buf.extend_from_slice(&padded_magic(PARAMS_MAGIC));
    push_u64(&mut buf, h as u64);
    push_u64(&mut buf, w as u64);
    push_u64(&mut buf, p.hidden() as u64);
    push_u64(&mut buf, data.len() as u64);
    for &v in data {
        push_f64(&mut buf, v);
    }
    buf
}

pub fn write_params(path: impl AsRef<Path>, p: &FieldParams) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, params_to_bytes(p)).map_err(|e| Error::io(path, e))
}

pub fn read_params(path: impl AsRef<Path>) -> Result<FieldParams> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
        path,
    };
    r.expect_magic(PARAMS_MAGIC)?;
    let h = r.read_u64()? as usize;
    let w = r.read_u64()? as usize;
    let hidden = r.read_u64()? as usize;
    let count = r.read_u64()? as usize;
    let mut data = Vec::with_capacity(count);
    for _ in 0..count {
        data.push(r.read_f64()?);
    }
    r.finish()?;
    FieldParams::from_flat((h, w), hidden, data)
        .map_err(|e| Error::malformed(path, format!("invalid parameter payload: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    #[test]
    fn field_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.fld");
        let mut rng = SplitMix64::new(9);
        let f = Field2D::from_fn(5, 7, |_, _| rng.normal());
        write_field(&path, &f).unwrap();
        let back = read_field(&path).unwrap();
        assert_eq!(f, back);
    }

    #[test]
    fn header_layout_exact() {
        let f = Field2D::constant(2, 3, 1.5);
        let bytes = field_to_bytes(&f);
        assert_eq!(&bytes[..8], b"SOBFLD01");
        assert_eq!(&bytes[8..16], b"        ");
        assert_eq!(u64::from_le_bytes(bytes[16..24].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(bytes[24..32].try_into().unwrap()), 3);
        assert_eq!(bytes.len(), 16 + 16 + 6 * 8);
        assert_eq!(
            f64::from_le_bytes(bytes[32..40].try_into().unwrap()),
            1.5
        );
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.fld");
        std::fs::write(&path, b"NOTMAGIC        junkjunkjunk").unwrap();
        assert!(matches!(read_field(&path), Err(Error::Malformed { .. })));
    }

    #[test]
    fn truncated_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.fld");
        let f = Field2D::constant(4, 4, 2.0);
        let bytes = field_to_bytes(&f);
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(read_field(&path), Err(Error::Malformed { .. })));
    }

    #[test]
    fn non_finite_payload_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nan.fld");
        let mut bytes = field_to_bytes(&Field2D::constant(1, 2, 0.0));
        let nan = f64::NAN.to_le_bytes();
        let n = bytes.len();
        bytes[n - 8..].copy_from_slice(&nan);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_field(&path), Err(Error::Malformed { .. })));
    }

    #[test]
    fn spectrum_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.spc");
        let mut s = Spectrum2D::zeros(3, 3);
        s.set_coefficient(1, 2, -4.25);
        write_spectrum(&path, &s).unwrap();
        assert_eq!(read_spectrum(&path).unwrap(), s);
    }
}
