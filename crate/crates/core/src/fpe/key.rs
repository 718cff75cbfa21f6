//! Binary encryption keys and their hex file format.
//!
//! Hex layout: `L/4` lowercase digits; key bit `i` is bit `i mod 4` of digit
//! `i / 4` (least significant bit first within each digit).

use num_bigint::BigUint;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

use crate::error::{invalid, Error, Result};

pub const MIN_KEY_BITS: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct EncryptionKey {
    bits: Vec<bool>,
}

impl EncryptionKey {
    pub fn from_bits(bits: Vec<bool>) -> Result<Self> {
        if bits.len() < MIN_KEY_BITS {
            return Err(invalid(format!("key needs at least {MIN_KEY_BITS} bits, got {}", bits.len())));
        }
        Ok(Self { bits })
    }

    /// Builds a key from 0/1 values, `k_0` first.
    pub fn from_slice(bits: &[u8]) -> Result<Self> {
        if bits.iter().any(|&b| b > 1) {
            return Err(invalid("key bits must be 0 or 1"));
        }
        Self::from_bits(bits.iter().map(|&b| b == 1).collect())
    }

    pub fn random(len: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        Self::from_bits((0..len).map(|_| rng.random::<bool>()).collect())
    }

    pub fn from_hex(s: &str) -> Result<Self> {
        let s = s.trim();
        let mut bits = Vec::with_capacity(4 * s.len());
        for ch in s.chars() {
            let d = ch
                .to_digit(16)
                .ok_or_else(|| Error::Format(format!("invalid hex digit {ch:?} in key")))?;
            bits.extend((0..4).map(|j| (d >> j) & 1 == 1));
        }
        Self::from_bits(bits)
    }

    /// Lowercase hex; a trailing partial digit is zero-padded.
    pub fn to_hex(&self) -> String {
        self.bits
            .chunks(4)
            .map(|c| {
                let d = c.iter().enumerate().fold(0u32, |acc, (j, &b)| acc | ((b as u32) << j));
                std::char::from_digit(d, 16).unwrap()
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bit(&self, i: usize) -> bool {
        self.bits[i]
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn with_bit_flipped(&self, i: usize) -> Self {
        let mut bits = self.bits.clone();
        bits[i] = !bits[i];
        Self { bits }
    }

    /// Key entropy under the uniform key model, in bits.
    pub fn entropy_bits(&self) -> usize {
        self.bits.len()
    }

    /// First 8 hex characters of SHA-256 over the key's hex form.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.to_hex().as_bytes());
        digest.iter().take(4).map(|b| format!("{b:02x}")).collect()
    }
}

/// Binary-weighted seed `Σ k_i 2^i`.
pub fn derive_seed(key: &EncryptionKey) -> BigUint {
    let mut bytes = vec![0u8; key.len().div_ceil(8)];
    for (i, &b) in key.bits().iter().enumerate() {
        if b {
            bytes[i / 8] |= 1 << (i % 8);
        }
    }
    BigUint::from_bytes_le(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_examples() {
        let zero = EncryptionKey::from_slice(&[0; 8]).unwrap();
        assert_eq!(derive_seed(&zero), BigUint::from(0u32));
        let k = EncryptionKey::from_slice(&[1, 0, 0, 0, 0, 0, 0, 1]).unwrap();
        assert_eq!(derive_seed(&k), BigUint::from(129u32));
        let ones = EncryptionKey::from_slice(&[1; 8]).unwrap();
        assert_eq!(derive_seed(&ones), BigUint::from(255u32));
    }

    #[test]
    fn hex_layout_is_lsb_first_within_digit() {
        let k = EncryptionKey::from_slice(&[1, 0, 0, 0, 0, 0, 0, 1]).unwrap();
        assert_eq!(k.to_hex(), "18");
        assert_eq!(EncryptionKey::from_hex("18").unwrap(), k);
        assert_eq!(derive_seed(&EncryptionKey::from_hex("18").unwrap()), BigUint::from(129u32));
        assert!(EncryptionKey::from_hex("1").is_err());
        assert!(EncryptionKey::from_hex("zz").is_err());
    }

    #[test]
    fn short_keys_rejected() {
        assert!(EncryptionKey::from_slice(&[1; 7]).is_err());
        assert!(EncryptionKey::from_slice(&[2; 8]).is_err());
    }

    #[test]
    fn fingerprint_is_eight_hex_chars_and_key_dependent() {
        let a = EncryptionKey::random(16, 1).unwrap();
        let b = a.with_bit_flipped(3);
        assert_eq!(a.fingerprint().len(), 8);
        assert_ne!(a.fingerprint(), b.fingerprint());
        assert_eq!(a.entropy_bits(), 16);
    }
}
