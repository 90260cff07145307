use crate::certify::positivity_certificate;
use crate::modelio::Hyperrect;

use super::Segment;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Safety {
    Safe,
    /// Index of the first segment whose enclosure meets an unsafe box that
    /// no certificate of the segment excludes.
    Unknown(usize),
}

/// Order used for `-B > 0` when none is given: the degree of `B`, then one more.
fn orders(degree: u32, order: Option<u32>) -> Vec<u32> {
    match order {
        Some(m) => vec![m],
        None => vec![degree.max(1), degree.max(1) + 1],
    }
}

/// Each unsafe box must miss the enclosure of every segment in its mode, or
/// some certificate of that segment must be negative on the overlap.
pub fn check_safety(segments: &[Segment], unsafe_sets: &[(usize, Hyperrect)], order: Option<u32>) -> Safety {
    for (k, s) in segments.iter().enumerate() {
        for (mode, bad) in unsafe_sets {
            if *mode != s.mode {
                continue;
            }
            let Some(overlap) = s.e.intersect(bad) else { continue };
            let excluded = s.certs.iter().any(|c| {
                let neg = c.b.scale(-1.0);
                orders(c.degree, order)
                    .into_iter()
                    .any(|m| matches!(positivity_certificate(&neg, &overlap, m), Ok(Some(_))))
            });
            if !excluded {
                return Safety::Unknown(k);
            }
        }
    }
    Safety::Safe
}
