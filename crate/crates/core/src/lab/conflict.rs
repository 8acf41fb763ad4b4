use serde::Serialize;

use crate::error::{Error, Result};
use crate::merge::TaskVector;

/// Sign-conflict statistics over aligned task vectors.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct ConflictStats {
    /// Parameters where at least two vectors are nonzero.
    pub overlapping: u64,
    /// Overlapping parameters holding both a positive and a negative entry.
    pub conflicting: u64,
}

impl ConflictStats {
    /// `conflicting / overlapping`, or 0 when nothing overlaps.
    pub fn rate(&self) -> f64 {
        if self.overlapping == 0 {
            0.0
        } else {
            self.conflicting as f64 / self.overlapping as f64
        }
    }

    pub fn no_overlap(&self) -> bool {
        self.overlapping == 0
    }

    /// Adds the counts for one tensor, given the same tensor from every vector.
    pub fn accumulate(&mut self, slices: &[&[f32]]) {
        let n = slices.first().map_or(0, |s| s.len());
        debug_assert!(slices.iter().all(|s| s.len() == n));
        for p in 0..n {
            let (mut pos, mut neg) = (0u32, 0u32);
            for s in slices {
                let v = s[p];
                if v > 0.0 {
                    pos += 1;
                } else if v < 0.0 {
                    neg += 1;
                }
            }
            if pos + neg >= 2 {
                self.overlapping += 1;
                if pos > 0 && neg > 0 {
                    self.conflicting += 1;
                }
            }
        }
    }

    pub fn merge(&mut self, other: ConflictStats) {
        self.overlapping += other.overlapping;
        self.conflicting += other.conflicting;
    }
}

/// Fraction of overlapping-support parameters with opposite-signed entries.
pub fn conflict_rate(tvs: &[TaskVector]) -> Result<ConflictStats> {
    if tvs.len() < 2 {
        return Err(Error::invalid(
            "task vectors",
            format!("conflict rate needs at least 2, got {}", tvs.len()),
        ));
    }
    let first = &tvs[0];
    let mut stats = ConflictStats::default();
    for (ti, t) in first.deltas.iter().enumerate() {
        let mut slices = Vec::with_capacity(tvs.len());
        for tv in tvs {
            let other = tv.deltas.get(ti).filter(|o| o.meta.name == t.meta.name && o.meta.shape == t.meta.shape);
            let other = other.ok_or_else(|| {
                Error::StructureMismatch(format!(
                    "task vector `{}` does not line up with `{}` at tensor `{}`",
                    tv.expert_id, first.expert_id, t.meta.name
                ))
            })?;
            slices.push(other.values.as_slice());
        }
        stats.accumulate(&slices);
    }
    if tvs.iter().any(|tv| tv.deltas.len() != first.deltas.len()) {
        return Err(Error::StructureMismatch("task vectors have different tensor counts".into()));
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::DenseTensor;

    fn tv(id: &str, values: Vec<f32>) -> TaskVector {
        TaskVector::new("base", id, vec![DenseTensor::vector("w", values)])
    }

    #[test]
    fn hand_counted_examples() {
        let s = conflict_rate(&[tv("a", vec![1.0, -1.0]), tv("b", vec![1.0, 1.0])]).unwrap();
        assert_eq!((s.overlapping, s.conflicting), (2, 1));
        assert_eq!(s.rate(), 0.5);

        let same = vec![0.5, -2.0, 0.0, 3.0];
        let s = conflict_rate(&[tv("a", same.clone()), tv("b", same)]).unwrap();
        assert_eq!(s.rate(), 0.0);
        assert!(!s.no_overlap());

        let s = conflict_rate(&[tv("a", vec![1.0, 0.0]), tv("b", vec![0.0, 1.0])]).unwrap();
        assert_eq!(s.rate(), 0.0);
        assert!(s.no_overlap());
    }

    #[test]
    fn needs_two_vectors() {
        assert!(conflict_rate(&[tv("a", vec![1.0])]).is_err());
        assert!(conflict_rate(&[]).is_err());
    }

    #[test]
    fn misaligned_rejected() {
        let b = TaskVector::new("base", "b", vec![DenseTensor::vector("v", vec![1.0])]);
        let err = conflict_rate(&[tv("a", vec![1.0]), b]).unwrap_err();
        assert!(matches!(err, Error::StructureMismatch(_)));
    }
}
