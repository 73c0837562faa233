//! Little-endian binary primitives shared by the dataset container, the
//! checkpoint format, and the atlas matrix files.

use std::io::{Read, Write};

use crate::error::ContainerError;

pub(crate) fn write_u64(w: &mut impl Write, v: u64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub(crate) fn read_u64(r: &mut impl Read) -> Result<u64, ContainerError> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)
        .map_err(|_| ContainerError::Truncated {
            needed: 8,
            available: 0,
        })?;
    Ok(u64::from_le_bytes(buf))
}

pub(crate) fn write_str(w: &mut impl Write, s: &str) -> std::io::Result<()> {
    write_u64(w, s.len() as u64)?;
    w.write_all(s.as_bytes())
}

pub(crate) fn read_str(r: &mut impl Read, max_len: u64) -> Result<String, ContainerError> {
    let len = read_u64(r)?;
    if len > max_len {
        return Err(ContainerError::Consistency(format!(
            "declared string length {len} exceeds limit {max_len}"
        )));
    }
    let mut buf = vec![0u8; len as usize];
    r.read_exact(&mut buf)
        .map_err(|_| ContainerError::Truncated {
            needed: len,
            available: 0,
        })?;
    String::from_utf8(buf)
        .map_err(|_| ContainerError::Consistency("string payload is not UTF-8".into()))
}

pub(crate) fn write_f64s(w: &mut impl Write, xs: &[f64]) -> std::io::Result<()> {
    for x in xs {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

pub(crate) fn read_f64s(r: &mut impl Read, count: usize) -> Result<Vec<f64>, ContainerError> {
    let mut buf = vec![0u8; count * 8];
    r.read_exact(&mut buf)
        .map_err(|_| ContainerError::Truncated {
            needed: (count * 8) as u64,
            available: 0,
        })?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// FNV-1a, 64-bit. Used as the payload checksum in the dataset container.
pub(crate) fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xCBF29CE484222325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001B3);
    }
    hash
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn u64_and_str_round_trip() {
        let mut buf = Vec::new();
        write_u64(&mut buf, 0xDEADBEEF).unwrap();
        write_str(&mut buf, "hello").unwrap();
        let mut r = buf.as_slice();
        assert_eq!(read_u64(&mut r).unwrap(), 0xDEADBEEF);
        assert_eq!(read_str(&mut r, 1024).unwrap(), "hello");
    }

    #[test]
    fn fnv_known_vectors() {
        // Standard FNV-1a test vectors.
        assert_eq!(fnv1a64(b""), 0xCBF29CE484222325);
        assert_eq!(fnv1a64(b"a"), 0xAF63DC4C8601EC8C);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171F73967E8);
    }

    #[test]
    fn truncated_reads_are_detected() {
        let mut buf = Vec::new();
        write_u64(&mut buf, 10).unwrap();
        let mut r = &buf[..4];
        assert!(matches!(
            read_u64(&mut r),
            Err(ContainerError::Truncated { .. })
        ));
        let mut r2 = buf.as_slice();
        // declared length 10 but no bytes follow
        assert!(matches!(
            read_str(&mut r2, 1024),
            Err(ContainerError::Truncated { .. })
        ));
    }
}
