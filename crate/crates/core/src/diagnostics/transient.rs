use serde::Serialize;

/// Default tolerance factor over the centralized curve.
pub const DEFAULT_TRANSIENT_FACTOR: f64 = 1.2;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransientEstimate {
    pub factor: f64,
    /// First recorded iteration from which the decentralized curve stays
    /// within `factor` times the centralized one.
    pub k: Option<usize>,
    pub diagnostic: Option<String>,
}

/// Transient time of a seed-averaged decentralized curve against a
/// centralized one; both are `(k, value)` series on the same iterations.
///
/// A crossing that only happens in the final tenth of the horizon is not
/// counted, since the horizon is then too short to tell a plateau from
/// noise.
pub fn transient_time(decentralized: &[(usize, f64)], centralized: &[(usize, f64)], factor: f64) -> TransientEstimate {
    let none = |why: String| TransientEstimate { factor, k: None, diagnostic: Some(why) };
    if decentralized.len() != centralized.len() || decentralized.iter().zip(centralized).any(|(a, b)| a.0 != b.0) {
        return none("curves are recorded at different iterations".into());
    }
    let m = decentralized.len();
    if m < 2 {
        return none(format!("horizon of {m} recorded points is too short"));
    }
    let mut first = m;
    for i in (0..m).rev() {
        if decentralized[i].1 <= factor * centralized[i].1 {
            first = i;
        } else {
            break;
        }
    }
    if first == m {
        return none("the decentralized curve ends above the threshold".into());
    }
    let window = (m / 10).max(1);
    if m - first < window {
        return none(format!(
            "the curve only stays below the threshold for the last {} of {m} points",
            m - first
        ));
    }
    TransientEstimate { factor, k: Some(decentralized[first].0), diagnostic: None }
}

/// [`transient_time`] for several factors.
pub fn transient_sensitivity(
    decentralized: &[(usize, f64)],
    centralized: &[(usize, f64)],
    factors: &[f64],
) -> Vec<TransientEstimate> {
    factors.iter().map(|&f| transient_time(decentralized, centralized, f)).collect()
}
