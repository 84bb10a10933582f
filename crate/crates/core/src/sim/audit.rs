//! Leak audits: search byte streams for any encoding of a value that must
//! stay private (individual model updates, raw training data).

use std::collections::HashSet;

use super::run::LocalUpdate;
use crate::field::{encode_fixed, FieldParams};

/// Byte patterns of private values. Floats are matched as 8 raw bytes in
/// either byte order; field encodings as the 12-byte length-prefixed form
/// they take on the wire.
#[derive(Debug, Default)]
pub struct Needles {
    floats: HashSet<[u8; 8]>,
    elements: HashSet<[u8; 12]>,
}

impl Needles {
    pub fn len(&self) -> usize {
        self.floats.len() + self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn add_float(&mut self, x: f64) {
        if x == 0.0 || !x.is_finite() {
            return;
        }
        self.floats.insert(x.to_be_bytes());
        self.floats.insert(x.to_le_bytes());
    }

    pub fn add_encoded(&mut self, x: f64, params: &FieldParams) {
        if let Ok(e) = encode_fixed(x, params) {
            if e.0 == 0 {
                return;
            }
            let mut pat = [0u8; 12];
            pat[3] = 8;
            pat[4..].copy_from_slice(&e.0.to_be_bytes());
            self.elements.insert(pat);
        }
    }

    /// Every individual update (as floats, as encoded weights and as the
    /// encoded sample-weighted value actually shared) plus every raw value.
    pub fn private_values(updates: &[LocalUpdate], raw_values: &[f64], params: &FieldParams) -> Self {
        let mut n = Needles::default();
        for u in updates {
            for &w in &u.weights {
                n.add_float(w);
                n.add_encoded(w, params);
                n.add_encoded(u.n_samples as f64 * w, params);
            }
        }
        for &v in raw_values {
            n.add_float(v);
            n.add_encoded(v, params);
        }
        n
    }

    /// Number of byte offsets in `haystack` where some needle starts.
    pub fn count_in(&self, haystack: &[u8]) -> usize {
        let floats = haystack
            .windows(8)
            .filter(|w| self.floats.contains(<&[u8; 8]>::try_from(*w).unwrap()))
            .count();
        let elements = haystack
            .windows(12)
            .filter(|w| self.elements.contains(<&[u8; 12]>::try_from(*w).unwrap()))
            .count();
        floats + elements
    }
}

/// Raw block bytes of a chain export (one hex line per block), plus the
/// text itself so that textual encodings are searched too.
pub fn export_bytes(export: &str) -> Vec<u8> {
    let mut out = Vec::with_capacity(export.len() * 3 / 2);
    for line in export.lines() {
        if let Ok(bytes) = hex::decode(line.trim()) {
            out.extend_from_slice(&bytes);
        }
    }
    out.extend_from_slice(export.as_bytes());
    out
}
