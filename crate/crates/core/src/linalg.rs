//! Dense and sparse real vectors, and the `CRS1` sparse wire format.
//!
//! Layout (little-endian):
//!
//! ```text
//! "CRS1" | codec_id: u8 | dim: u32 | entry_count: u32 | threshold: f64
//!        | entry_count x [ index: u32 | value: f32 ]
//! ```
//!
//! The header is 21 bytes and each entry 8 bytes, so the encoded size is a
//! closed-form function of the entry count. Values are held as `f64` in memory
//! and narrowed to `f32` only on the wire.

use std::fmt;
use std::ops::{Deref, Index};

use crate::error::WireError;

pub const MAGIC: [u8; 4] = *b"CRS1";
pub const HEADER_BYTES: usize = 21;
pub const ENTRY_BYTES: usize = 8;
/// Bytes per weight of a dense model broadcast (32-bit floats, no header).
pub const DENSE_BYTES_PER_WEIGHT: usize = 4;

/// Dense `d`-dimensional real vector: a gradient, an update or model weights.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GradientVector(Vec<f64>);

impl GradientVector {
    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// Index of the first non-finite element, if any.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.0.iter().position(|v| !v.is_finite())
    }

    pub fn is_finite(&self) -> bool {
        self.first_non_finite().is_none()
    }

    pub fn squared_l2(&self) -> f64 {
        squared_l2(&self.0)
    }

    pub fn count_nonzero(&self) -> usize {
        self.0.iter().filter(|v| **v != 0.0).count()
    }

    /// `self += scale * other`.
    pub fn axpy(&mut self, scale: f64, other: &[f64]) {
        debug_assert_eq!(self.0.len(), other.len());
        for (a, b) in self.0.iter_mut().zip(other) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.0.iter_mut().for_each(|v| *v *= factor);
    }
}

impl Deref for GradientVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for GradientVector {
    fn from(values: Vec<f64>) -> Self {
        Self(values)
    }
}

impl Index<usize> for GradientVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// `Σ v_j²`.
pub fn squared_l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// Per-coordinate priority weight `v_j²`.
pub fn coordinate_weight(v: &[f64], j: usize) -> f64 {
    v[j] * v[j]
}

/// Which compressor produced a payload. The discriminant is the wire byte.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum CodecId {
    Identity = 0,
    Crs = 1,
    MinMax = 2,
    GSpar = 3,
    TopK = 4,
    Poisson = 5,
}

impl CodecId {
    pub const ALL: [CodecId; 6] = [
        CodecId::Identity,
        CodecId::Crs,
        CodecId::MinMax,
        CodecId::GSpar,
        CodecId::TopK,
        CodecId::Poisson,
    ];

    pub fn from_byte(b: u8) -> Result<Self, WireError> {
        Self::ALL
            .get(b as usize)
            .copied()
            .ok_or(WireError::UnknownCodec(b))
    }

    pub fn as_byte(self) -> u8 {
        self as u8
    }
}

impl fmt::Display for CodecId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            CodecId::Identity => "identity",
            CodecId::Crs => "crs",
            CodecId::MinMax => "minmax",
            CodecId::GSpar => "gspar",
            CodecId::TopK => "topk",
            CodecId::Poisson => "poisson",
        };
        f.write_str(name)
    }
}

/// Compressed update: strictly increasing indices with their estimator values.
///
/// Construction validates every invariant, so a `SparseUpdate` in hand is
/// always encodable.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseUpdate {
    dim: usize,
    indices: Vec<u32>,
    values: Vec<f64>,
    threshold: f64,
    codec: CodecId,
}

impl SparseUpdate {
    pub fn new(
        dim: usize,
        indices: Vec<u32>,
        values: Vec<f64>,
        threshold: f64,
        codec: CodecId,
    ) -> Result<Self, WireError> {
        if dim > u32::MAX as usize {
            return Err(WireError::DimensionTooLarge(dim));
        }
        if indices.len() != values.len() {
            return Err(WireError::LengthMismatch {
                indices: indices.len(),
                values: values.len(),
            });
        }
        if indices.len() > dim {
            return Err(WireError::EntryCountExceedsDim {
                count: indices.len(),
                dim,
            });
        }
        validate_indices(dim, &indices)?;
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(WireError::NonFiniteValue(indices[pos] as usize));
        }
        if !threshold.is_finite() {
            return Err(WireError::NonFiniteThreshold);
        }
        Ok(Self {
            dim,
            indices,
            values,
            threshold,
            codec,
        })
    }

    /// An update with no entries.
    pub fn empty(dim: usize, codec: CodecId) -> Self {
        Self {
            dim,
            indices: Vec::new(),
            values: Vec::new(),
            threshold: 0.0,
            codec,
        }
    }

    /// Every nonzero coordinate of `v`, unscaled.
    pub fn from_dense_nonzeros(v: &[f64], codec: CodecId) -> Result<Self, WireError> {
        let (indices, values): (Vec<u32>, Vec<f64>) = v
            .iter()
            .enumerate()
            .filter(|(_, x)| **x != 0.0)
            .map(|(i, x)| (i as u32, *x))
            .unzip();
        Self::new(v.len(), indices, values, 0.0, codec)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn codec(&self) -> CodecId {
        self.codec
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices
            .iter()
            .zip(&self.values)
            .map(|(&i, &v)| (i as usize, v))
    }

    /// Reconstruct the dense vector; coordinates without an entry are 0.
    pub fn densify(&self) -> GradientVector {
        let mut out = vec![0.0; self.dim];
        self.add_into(1.0, &mut out);
        GradientVector(out)
    }

    /// `out[i] += scale * value` for every entry.
    pub fn add_into(&self, scale: f64, out: &mut [f64]) {
        for (i, v) in self.entries() {
            out[i] += scale * v;
        }
    }

    /// Exact encoded size, without encoding.
    pub fn payload_bytes(&self) -> usize {
        sparse_payload_bytes(self.len())
    }

    /// Encode to the `CRS1` wire format.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.payload_bytes());
        out.extend_from_slice(&MAGIC);
        out.push(self.codec.as_byte());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.threshold.to_le_bytes());
        for (&i, &v) in self.indices.iter().zip(&self.values) {
            out.extend_from_slice(&i.to_le_bytes());
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out
    }

    /// Decode a `CRS1` payload. The whole buffer must be consumed.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, WireError> {
        if bytes.len() < HEADER_BYTES {
            return Err(WireError::Truncated {
                needed: HEADER_BYTES,
                available: bytes.len(),
            });
        }
        let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
        if magic != MAGIC {
            return Err(WireError::BadMagic(magic));
        }
        let codec = CodecId::from_byte(bytes[4])?;
        let dim = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
        let count = u32::from_le_bytes(bytes[9..13].try_into().unwrap()) as usize;
        let threshold = f64::from_le_bytes(bytes[13..21].try_into().unwrap());
        if count > dim {
            return Err(WireError::EntryCountExceedsDim { count, dim });
        }
        let needed = sparse_payload_bytes(count);
        if bytes.len() < needed {
            return Err(WireError::Truncated {
                needed,
                available: bytes.len(),
            });
        }
        if bytes.len() > needed {
            return Err(WireError::TrailingBytes(bytes.len() - needed));
        }
        let mut indices = Vec::with_capacity(count);
        let mut values = Vec::with_capacity(count);
        for chunk in bytes[HEADER_BYTES..].chunks_exact(ENTRY_BYTES) {
            indices.push(u32::from_le_bytes(chunk[0..4].try_into().unwrap()));
            values.push(f32::from_le_bytes(chunk[4..8].try_into().unwrap()) as f64);
        }
        Self::new(dim, indices, values, threshold, codec)
    }
}

fn validate_indices(dim: usize, indices: &[u32]) -> Result<(), WireError> {
    let mut prev: Option<usize> = None;
    for &raw in indices {
        let i = raw as usize;
        if i >= dim {
            return Err(WireError::IndexOutOfRange { index: i, dim });
        }
        if let Some(p) = prev {
            if i == p {
                return Err(WireError::DuplicateIndex(i));
            }
            if i < p {
                return Err(WireError::NonIncreasingIndices { prev: p, next: i });
            }
        }
        prev = Some(i);
    }
    Ok(())
}

/// Encoded size of a sparse payload with `entries` entries.
pub const fn sparse_payload_bytes(entries: usize) -> usize {
    HEADER_BYTES + ENTRY_BYTES * entries
}

/// Size of a dense model broadcast of dimension `dim`.
pub const fn dense_broadcast_bytes(dim: usize) -> usize {
    DENSE_BYTES_PER_WEIGHT * dim
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn upd(dim: usize, entries: &[(u32, f64)]) -> SparseUpdate {
        let (i, v): (Vec<_>, Vec<_>) = entries.iter().copied().unzip();
        SparseUpdate::new(dim, i, v, 0.0, CodecId::Crs).unwrap()
    }

    #[test]
    fn squared_norms() {
        assert_eq!(squared_l2(&[0.0, 0.0, 0.0]), 0.0);
        assert_eq!(squared_l2(&[3.0, 4.0]), 25.0);
        assert_eq!(squared_l2(&[1.5, -2.0, 0.25]), 6.3125);
        assert_eq!(coordinate_weight(&[1.5, -2.0, 0.25], 1), 4.0);
    }

    #[test]
    fn densify_places_entries() {
        assert_eq!(upd(4, &[]).densify().as_slice(), &[0.0; 4]);
        assert_eq!(upd(3, &[(1, 5.0)]).densify().as_slice(), &[0.0, 5.0, 0.0]);
        assert_eq!(
            upd(5, &[(0, 1.0), (4, -2.0)]).densify().as_slice(),
            &[1.0, 0.0, 0.0, 0.0, -2.0]
        );
    }

    #[test]
    fn construction_rejects_bad_indices() {
        let err = SparseUpdate::new(3, vec![3], vec![1.0], 0.0, CodecId::Crs).unwrap_err();
        assert_eq!(err, WireError::IndexOutOfRange { index: 3, dim: 3 });
        let err = SparseUpdate::new(3, vec![1, 1], vec![1.0, 2.0], 0.0, CodecId::Crs).unwrap_err();
        assert_eq!(err, WireError::DuplicateIndex(1));
        let err = SparseUpdate::new(3, vec![2, 1], vec![1.0, 2.0], 0.0, CodecId::Crs).unwrap_err();
        assert_eq!(err, WireError::NonIncreasingIndices { prev: 2, next: 1 });
        let err = SparseUpdate::new(3, vec![0], vec![f64::NAN], 0.0, CodecId::Crs).unwrap_err();
        assert_eq!(err, WireError::NonFiniteValue(0));
    }

    #[test]
    fn encoded_sizes() {
        assert_eq!(upd(10, &[]).to_bytes().len(), 21);
        assert_eq!(upd(10, &[(1, 1.0), (3, 2.0), (9, 3.0)]).to_bytes().len(), 45);
        assert_eq!(upd(10, &[]).payload_bytes(), 21);
        assert_eq!(sparse_payload_bytes(7), 21 + 56);
        assert_eq!(dense_broadcast_bytes(100), 400);
    }

    #[test]
    fn header_layout_is_little_endian() {
        let u = SparseUpdate::new(10, vec![2], vec![1.5], 0.25, CodecId::TopK).unwrap();
        let b = u.to_bytes();
        assert_eq!(&b[0..4], b"CRS1");
        assert_eq!(b[4], 4);
        assert_eq!(&b[5..9], &[10, 0, 0, 0]);
        assert_eq!(&b[9..13], &[1, 0, 0, 0]);
        assert_eq!(&b[13..21], &0.25f64.to_le_bytes());
        assert_eq!(&b[21..25], &[2, 0, 0, 0]);
        assert_eq!(&b[25..29], &1.5f32.to_le_bytes());
    }

    #[test]
    fn decode_errors_are_distinct() {
        let empty = upd(10, &[]).to_bytes();
        assert_eq!(SparseUpdate::from_bytes(&empty).unwrap(), upd(10, &[]));

        assert!(matches!(
            SparseUpdate::from_bytes(&empty[..20]),
            Err(WireError::Truncated { needed: 21, available: 20 })
        ));

        let mut bad = empty.clone();
        bad[0] = b'X';
        assert!(matches!(SparseUpdate::from_bytes(&bad), Err(WireError::BadMagic(_))));

        let mut bad = empty.clone();
        bad[4] = 9;
        assert_eq!(SparseUpdate::from_bytes(&bad), Err(WireError::UnknownCodec(9)));

        // Hand-built payload with indices [2, 2].
        let mut dup = Vec::new();
        dup.extend_from_slice(b"CRS1");
        dup.push(1);
        dup.extend_from_slice(&5u32.to_le_bytes());
        dup.extend_from_slice(&2u32.to_le_bytes());
        dup.extend_from_slice(&0.0f64.to_le_bytes());
        for _ in 0..2 {
            dup.extend_from_slice(&2u32.to_le_bytes());
            dup.extend_from_slice(&1.0f32.to_le_bytes());
        }
        assert_eq!(SparseUpdate::from_bytes(&dup), Err(WireError::DuplicateIndex(2)));

        let mut oob = dup.clone();
        oob[21..25].copy_from_slice(&0u32.to_le_bytes());
        oob[29..33].copy_from_slice(&7u32.to_le_bytes());
        assert_eq!(
            SparseUpdate::from_bytes(&oob),
            Err(WireError::IndexOutOfRange { index: 7, dim: 5 })
        );

        let mut dec = dup.clone();
        dec[21..25].copy_from_slice(&3u32.to_le_bytes());
        assert_eq!(
            SparseUpdate::from_bytes(&dec),
            Err(WireError::NonIncreasingIndices { prev: 3, next: 2 })
        );

        let mut over = empty.clone();
        over[9..13].copy_from_slice(&11u32.to_le_bytes());
        assert_eq!(
            SparseUpdate::from_bytes(&over),
            Err(WireError::EntryCountExceedsDim { count: 11, dim: 10 })
        );

        let mut trailing = empty;
        trailing.push(0);
        assert_eq!(SparseUpdate::from_bytes(&trailing), Err(WireError::TrailingBytes(1)));
    }

    #[test]
    fn identity_encoding_preserves_nonzeros() {
        let v = [0.0, 1.0, 0.0, -3.5, 2.0];
        let u = SparseUpdate::from_dense_nonzeros(&v, CodecId::Identity).unwrap();
        assert_eq!(u.len(), 3);
        assert_eq!(u.densify().as_slice(), &v);
    }

    fn arb_update() -> impl Strategy<Value = SparseUpdate> {
        (1usize..200).prop_flat_map(|dim| {
            (
                Just(dim),
                proptest::collection::btree_map(0..dim as u32, -1e6f64..1e6, 0..=dim.min(64)),
                0.0f64..1e3,
                0u8..6,
            )
                .prop_map(|(dim, map, threshold, codec)| {
                    let (i, v): (Vec<_>, Vec<_>) = map.into_iter().unzip();
                    SparseUpdate::new(dim, i, v, threshold, CodecId::from_byte(codec).unwrap())
                        .unwrap()
                })
        })
    }

    proptest! {
        #[test]
        fn round_trip_within_f32(u in arb_update()) {
            let bytes = u.to_bytes();
            prop_assert_eq!(bytes.len(), u.payload_bytes());
            let back = SparseUpdate::from_bytes(&bytes).unwrap();
            prop_assert_eq!(back.dim(), u.dim());
            prop_assert_eq!(back.indices(), u.indices());
            prop_assert_eq!(back.threshold(), u.threshold());
            prop_assert_eq!(back.codec(), u.codec());
            for (a, b) in back.values().iter().zip(u.values()) {
                prop_assert_eq!(*a, (*b as f32) as f64);
            }
            // A decoded image re-encodes to the same bytes.
            prop_assert_eq!(back.to_bytes(), bytes);
        }

        #[test]
        fn header_mutations_never_decode_silently(u in arb_update(), pos in 0usize..13, flip in 1u8..=255) {
            let mut bytes = u.to_bytes();
            bytes[pos] ^= flip;
            // Magic and count mutations must be caught. A mutated codec or dim
            // may still describe a valid payload, but never the original one.
            if let Ok(d) = SparseUpdate::from_bytes(&bytes) {
                prop_assert!((4..9).contains(&pos));
                prop_assert!(d.dim() != u.dim() || d.codec() != u.codec());
            }
        }
    }
}
