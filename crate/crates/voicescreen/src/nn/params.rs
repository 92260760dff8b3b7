//! Named parameter collections shared by models, optimizers, and checkpoints.

use super::real::Real;
use super::tensor::Mat;
use crate::{Error, Result};

/// One named tensor with its training metadata.
#[derive(Debug, Clone)]
pub struct ParamEntry<F> {
    pub name: String,
    pub value: Mat<F>,
    /// Whether gradients flow into this tensor.
    pub trainable: bool,
    /// Whether the optimizer applies weight decay (off for bias rows and
    /// ordinal thresholds).
    pub weight_decay: bool,
}

/// Ordered set of parameters addressed by name.
#[derive(Debug, Clone, Default)]
pub struct ParamSet<F> {
    entries: Vec<ParamEntry<F>>,
}

impl<F: Real> ParamSet<F> {
    pub fn new() -> Self {
        ParamSet { entries: Vec::new() }
    }

    pub fn push(&mut self, name: &str, value: Mat<F>, trainable: bool, weight_decay: bool) {
        assert!(
            self.index_of(name).is_none(),
            "duplicate parameter name {name}"
        );
        self.entries.push(ParamEntry {
            name: name.to_string(),
            value,
            trainable,
            weight_decay,
        });
    }

    pub fn entries(&self) -> &[ParamEntry<F>] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry<F>] {
        &mut self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name == name)
    }

    pub fn get(&self, name: &str) -> Result<&ParamEntry<F>> {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| Error::invalid(format!("unknown parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut ParamEntry<F>> {
        self.entries
            .iter_mut()
            .find(|e| e.name == name)
            .ok_or_else(|| Error::invalid(format!("unknown parameter {name}")))
    }

    /// Extend with every entry of `other`, prefixing names with `prefix.`.
    pub fn absorb(&mut self, prefix: &str, other: ParamSet<F>) {
        for e in other.entries {
            self.push(
                &format!("{prefix}.{}", e.name),
                e.value,
                e.trainable,
                e.weight_decay,
            );
        }
    }

    /// Subset whose names start with `prefix.`, with the prefix stripped.
    pub fn strip_prefix(&self, prefix: &str) -> ParamSet<F> {
        let full = format!("{prefix}.");
        let mut out = ParamSet::new();
        for e in &self.entries {
            if let Some(rest) = e.name.strip_prefix(&full) {
                out.push(rest, e.value.clone(), e.trainable, e.weight_decay);
            }
        }
        out
    }

    /// Mark every entry non-trainable.
    pub fn freeze(&mut self) {
        for e in &mut self.entries {
            e.trainable = false;
        }
    }

    pub fn trainable_scalar_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.value.len())
            .sum()
    }

    pub fn total_scalar_count(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    /// Convert every tensor to another precision (metadata preserved).
    pub fn map_precision<G: Real>(&self) -> ParamSet<G> {
        ParamSet {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    name: e.name.clone(),
                    value: e.value.map_precision(),
                    trainable: e.trainable,
                    weight_decay: e.weight_decay,
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lookup_and_counts() {
        let mut p = ParamSet::<f32>::new();
        p.push("w", Mat::zeros(2, 3), true, true);
        p.push("b", Mat::zeros(1, 3), true, false);
        p.push("frozen", Mat::zeros(4, 4), false, true);
        assert_eq!(p.trainable_scalar_count(), 9);
        assert_eq!(p.total_scalar_count(), 25);
        assert_eq!(p.index_of("b"), Some(1));
        assert!(p.get("nope").is_err());
    }

    #[test]
    #[should_panic(expected = "duplicate parameter name")]
    fn duplicate_names_rejected() {
        let mut p = ParamSet::<f32>::new();
        p.push("w", Mat::zeros(1, 1), true, true);
        p.push("w", Mat::zeros(1, 1), true, true);
    }

    #[test]
    fn absorb_and_strip_round_trip() {
        let mut inner = ParamSet::<f32>::new();
        inner.push("w", Mat::scalar(1.5), true, true);
        inner.push("b", Mat::scalar(0.5), true, false);
        let mut outer = ParamSet::<f32>::new();
        outer.absorb("enc", inner);
        assert!(outer.get("enc.w").is_ok());
        let back = outer.strip_prefix("enc");
        assert_eq!(back.len(), 2);
        assert_eq!(back.entries()[0].name, "w");
        assert!((back.get("b").unwrap().value.item() - 0.5).abs() < 1e-7);
    }

    #[test]
    fn precision_round_trip_preserves_metadata() {
        let mut p = ParamSet::<f32>::new();
        p.push("coral", Mat::zeros(1, 27), true, false);
        let q: ParamSet<f64> = p.map_precision();
        assert!(q.entries()[0].trainable);
        assert!(!q.entries()[0].weight_decay);
        assert_eq!(q.entries()[0].value.cols, 27);
    }
}
