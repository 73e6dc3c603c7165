//! `EIGH` factor files and spectrum CSV export.
//!
//! Layout (little-endian): magic `EIGH`, version `u32`, `J`, `K`, `r` as `u64`, then
//! `sigma` (r values), `W` column by column (r x J values), `T` column by column (r x K
//! values), all `f64`.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use super::{singular_spectrum, SvdFactors};
use crate::binio::{ByteReader, ByteWriter};
use crate::error::{Error, Result};

pub const FACTORS_MAGIC: &[u8; 4] = b"EIGH";
pub const FACTORS_VERSION: u32 = 1;

pub fn encode_factors(factors: &SvdFactors) -> Vec<u8> {
    let (j, k) = factors.source_shape();
    let mut w = ByteWriter::new();
    w.bytes(FACTORS_MAGIC);
    w.u32(FACTORS_VERSION);
    w.usize(j);
    w.usize(k);
    w.usize(factors.rank());
    w.f64s(factors.singular_values());
    w.f64s(factors.left_vectors().as_slice());
    w.f64s(factors.right_vectors().as_slice());
    w.finish()
}

pub fn decode_factors(bytes: &[u8], path: &Path) -> Result<SvdFactors> {
    let mut r = ByteReader::new(bytes, path);
    r.magic(FACTORS_MAGIC)?;
    r.version(FACTORS_VERSION)?;
    let j = r.count(0)?;
    let k = r.count(0)?;
    let rank = r.count(8)?;
    let sigma = r.f64s(rank)?;
    let left = DMatrix::from_vec(j, rank, r.f64s(j * rank)?);
    let right = DMatrix::from_vec(k, rank, r.f64s(k * rank)?);
    r.finish()?;
    SvdFactors::new(left, sigma, right, (j, k))
}

pub fn write_factors(path: &Path, factors: &SvdFactors) -> Result<()> {
    fs::write(path, encode_factors(factors)).map_err(|e| Error::io(path, e))
}

pub fn read_factors(path: &Path) -> Result<SvdFactors> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_factors(&bytes, path)
}

/// `j,sigma,cumulative_energy` with 17 significant digits.
pub fn spectrum_csv(factors: &SvdFactors) -> String {
    let mut out = String::from("j,sigma,cumulative_energy\n");
    for p in singular_spectrum(factors) {
        out.push_str(&format!(
            "{},{:.16e},{:.16e}\n",
            p.index, p.sigma, p.cumulative_energy
        ));
    }
    out
}

pub fn write_spectrum_csv(path: &Path, factors: &SvdFactors) -> Result<()> {
    fs::write(path, spectrum_csv(factors)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::svd::svd_thin;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample_factors() -> SvdFactors {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        svd_thin(&DMatrix::from_fn(9, 4, |_, _| rng.random::<f64>())).unwrap()
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let f = sample_factors();
        let bytes = encode_factors(&f);
        assert_eq!(bytes.len(), 4 + 4 + 24 + 8 * (4 + 9 * 4 + 4 * 4));
        let back = decode_factors(&bytes, Path::new("mem")).unwrap();
        assert_eq!(encode_factors(&back), bytes);
        assert_eq!(back, f);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let mut bytes = encode_factors(&sample_factors());
        let truncated = &bytes[..bytes.len() - 3];
        assert!(matches!(
            decode_factors(truncated, Path::new("mem")),
            Err(Error::Io { .. })
        ));
        bytes[0] = b'X';
        assert!(matches!(
            decode_factors(&bytes, Path::new("mem")),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn csv_ends_at_full_energy() {
        let csv = spectrum_csv(&sample_factors());
        let last = csv.lines().last().unwrap();
        assert!(last.ends_with(",1.0000000000000000e0"), "{last}");
        assert!(csv.starts_with("j,sigma,cumulative_energy\n"));
    }
}
