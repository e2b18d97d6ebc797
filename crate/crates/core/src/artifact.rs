//! Artifact kinds and the five-bit degradation vector shared by the
//! degradation generator, the detection prompt and the synthetic metrics.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// One of the five synthetic artifact types. The discriminant is the bit
/// position in a [`DegradationVector`] and matches the flag order of
/// [`crate::protocol::DetectionFlags`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    Blur = 0,
    Noise = 1,
    LowRes = 2,
    Compression = 3,
    BadLighting = 4,
}

impl ArtifactKind {
    /// All kinds in ascending bit order, which is also the canonical
    /// application order.
    pub const ALL: [ArtifactKind; 5] = [
        ArtifactKind::Blur,
        ArtifactKind::Noise,
        ArtifactKind::LowRes,
        ArtifactKind::Compression,
        ArtifactKind::BadLighting,
    ];

    pub fn bit(self) -> usize {
        self as usize
    }

    pub fn from_bit(bit: usize) -> Option<Self> {
        Self::ALL.get(bit).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ArtifactKind::Blur => "blur",
            ArtifactKind::Noise => "noise",
            ArtifactKind::LowRes => "low_res",
            ArtifactKind::Compression => "compression",
            ArtifactKind::BadLighting => "bad_lighting",
        }
    }
}

impl fmt::Display for ArtifactKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ArtifactKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown artifact kind {s:?}"))
    }
}

/// A vector in {0,1}^5; bit `i` marks the presence of `ArtifactKind::ALL[i]`.
///
/// Serialized as a JSON array of five 0/1 integers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct DegradationVector(u8);

impl DegradationVector {
    pub const LEN: usize = 5;
    const MASK: u8 = 0b1_1111;

    pub const ZERO: DegradationVector = DegradationVector(0);
    pub const ALL_SET: DegradationVector = DegradationVector(Self::MASK);

    pub fn from_mask(mask: u8) -> Option<Self> {
        (mask & !Self::MASK == 0).then_some(Self(mask))
    }

    pub fn from_bits(bits: [bool; 5]) -> Self {
        let mask = bits
            .iter()
            .enumerate()
            .fold(0u8, |m, (i, &b)| if b { m | (1 << i) } else { m });
        Self(mask)
    }

    pub fn from_kinds<I: IntoIterator<Item = ArtifactKind>>(kinds: I) -> Self {
        Self(kinds.into_iter().fold(0u8, |m, k| m | (1 << k.bit())))
    }

    /// Parses a 0/1 slice, rejecting wrong lengths and non-binary entries.
    pub fn from_slice(values: &[u8]) -> Result<Self, String> {
        if values.len() != Self::LEN {
            return Err(format!(
                "degradation vector must have {} entries, got {}",
                Self::LEN,
                values.len()
            ));
        }
        let mut bits = [false; 5];
        for (i, &v) in values.iter().enumerate() {
            bits[i] = match v {
                0 => false,
                1 => true,
                other => return Err(format!("degradation vector entry {i} is {other}, expected 0 or 1")),
            };
        }
        Ok(Self::from_bits(bits))
    }

    pub fn mask(self) -> u8 {
        self.0
    }

    pub fn get(self, bit: usize) -> bool {
        bit < Self::LEN && self.0 & (1 << bit) != 0
    }

    pub fn contains(self, kind: ArtifactKind) -> bool {
        self.get(kind.bit())
    }

    pub fn count_ones(self) -> u32 {
        self.0.count_ones()
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }

    pub fn intersection(self, other: Self) -> Self {
        Self(self.0 & other.0)
    }

    pub fn hamming(self, other: Self) -> u32 {
        (self.0 ^ other.0).count_ones()
    }

    pub fn to_array(self) -> [u8; 5] {
        std::array::from_fn(|i| u8::from(self.get(i)))
    }

    pub fn kinds(self) -> impl Iterator<Item = ArtifactKind> {
        ArtifactKind::ALL.into_iter().filter(move |k| self.contains(*k))
    }
}

impl fmt::Display for DegradationVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let a = self.to_array();
        write!(f, "({},{},{},{},{})", a[0], a[1], a[2], a[3], a[4])
    }
}

impl Serialize for DegradationVector {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_array().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for DegradationVector {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let values = Vec::<u8>::deserialize(deserializer)?;
        Self::from_slice(&values).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bit_positions_are_fixed() {
        let bits: Vec<usize> = ArtifactKind::ALL.iter().map(|k| k.bit()).collect();
        assert_eq!(bits, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn vector_serializes_as_array() {
        let v = DegradationVector::from_kinds([ArtifactKind::Blur, ArtifactKind::Noise, ArtifactKind::Compression]);
        assert_eq!(serde_json::to_string(&v).unwrap(), "[1,1,0,1,0]");
        let back: DegradationVector = serde_json::from_str("[1,1,0,1,0]").unwrap();
        assert_eq!(back, v);
    }

    #[test]
    fn vector_rejects_bad_length_and_values() {
        assert!(serde_json::from_str::<DegradationVector>("[1,0,0,0]").is_err());
        assert!(serde_json::from_str::<DegradationVector>("[1,0,0,0,0,0]").is_err());
        assert!(serde_json::from_str::<DegradationVector>("[2,0,0,0,0]").is_err());
    }

    #[test]
    fn hamming_counts_differing_bits() {
        let a = DegradationVector::from_bits([true, false, false, false, false]);
        let b = DegradationVector::from_bits([true, true, false, false, false]);
        assert_eq!(a.hamming(b), 1);
        assert_eq!(DegradationVector::ZERO.hamming(DegradationVector::ALL_SET), 5);
    }
}
