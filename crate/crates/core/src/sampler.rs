//! Seeded input sampling from interval domains.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::domain::{DomainMap, Interval, MAX_DOUBLE};
use crate::eval::Point;

/// Intervals spanning at least this many decades are sampled log-uniformly.
pub const LOG_SPAN_DECADES: f64 = 6.0;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SampleError {
    #[error("no sample point satisfied the domain after {attempts} attempts")]
    NoValidPoints { attempts: usize },
    #[error("invalid sample plan: {0}")]
    InvalidPlan(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplePlan {
    pub n: usize,
    pub seed: u64,
    pub stream: u64,
    /// Attempts allowed per requested point.
    pub rejection_factor: usize,
}

impl SamplePlan {
    pub fn new(n: usize, seed: u64, stream: u64) -> SamplePlan {
        SamplePlan { n, seed, stream, rejection_factor: 64 }
    }

    /// Plan whose stream is derived from a record or expression id.
    pub fn for_id(n: usize, seed: u64, id: &str) -> SamplePlan {
        SamplePlan::new(n, seed, stream_id(id))
    }

    pub fn rng(&self) -> ChaCha20Rng {
        seeded_rng(self.seed, self.stream)
    }
}

/// First eight bytes (little-endian) of the SHA-256 of `id`.
pub fn stream_id(id: &str) -> u64 {
    let digest = Sha256::digest(id.as_bytes());
    let mut b = [0u8; 8];
    b.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(b)
}

pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub points: Vec<Point>,
    /// Fewer than the requested number of points were accepted.
    pub short: bool,
    pub attempts: usize,
}

/// Whether `iv` is drawn log-uniformly rather than uniformly in value.
pub fn uses_log_scale(iv: &Interval) -> bool {
    if iv.lo <= -MAX_DOUBLE || iv.hi >= MAX_DOUBLE {
        return true;
    }
    let (near, far) = magnitude_range(iv);
    far > 0.0 && far.log10() - near.log10() >= LOG_SPAN_DECADES
}

/// Smallest and largest magnitudes in `iv`, the smallest floored at the
/// smallest positive normal.
fn magnitude_range(iv: &Interval) -> (f64, f64) {
    let (a, b) = (iv.lo.abs(), iv.hi.abs());
    let near = if iv.lo <= 0.0 && iv.hi >= 0.0 { 0.0 } else { a.min(b) };
    (near.max(f64::MIN_POSITIVE), a.max(b))
}

fn log_uniform(rng: &mut ChaCha20Rng, near: f64, far: f64) -> f64 {
    let (l0, l1) = (near.log2(), far.log2());
    let e = l0 + (l1 - l0) * rng.gen::<f64>();
    e.exp2().clamp(near, far)
}

/// One draw from `iv`. Open endpoints are handled by the caller's rejection.
pub fn draw(rng: &mut ChaCha20Rng, iv: &Interval) -> f64 {
    if iv.lo == iv.hi {
        return iv.lo;
    }
    if !uses_log_scale(iv) {
        let u: f64 = rng.gen();
        return (iv.lo * (1.0 - u) + iv.hi * u).clamp(iv.lo, iv.hi);
    }
    let tiny = f64::MIN_POSITIVE;
    if iv.lo >= 0.0 {
        let (near, far) = magnitude_range(iv);
        return log_uniform(rng, near, far.max(near));
    }
    if iv.hi <= 0.0 {
        let (near, far) = magnitude_range(iv);
        return -log_uniform(rng, near, far.max(near));
    }
    // straddles zero: pick a side by its share of log-mass
    let neg_far = (-iv.lo).max(tiny);
    let pos_far = iv.hi.max(tiny);
    let neg_mass = neg_far.log2() - tiny.log2();
    let pos_mass = pos_far.log2() - tiny.log2();
    let total = neg_mass + pos_mass;
    let negative = total > 0.0 && rng.gen::<f64>() * total < neg_mass;
    if negative {
        -log_uniform(rng, tiny, neg_far)
    } else {
        log_uniform(rng, tiny, pos_far)
    }
}

/// Draws up to `plan.n` points accepted by `domains`.
pub fn sample(domains: &DomainMap, plan: &SamplePlan) -> Result<SampleSet, SampleError> {
    if plan.n == 0 {
        return Err(SampleError::InvalidPlan("sample count must be at least 1".into()));
    }
    let budget = plan.n.saturating_mul(plan.rejection_factor.max(1));
    let mut rng = plan.rng();
    let mut points = Vec::with_capacity(plan.n);
    let mut attempts = 0;
    while points.len() < plan.n && attempts < budget {
        attempts += 1;
        let pt: Point = domains
            .vars
            .iter()
            .map(|(v, iv)| (v.clone(), draw(&mut rng, iv)))
            .collect();
        if domains.accepts(&pt) {
            points.push(pt);
        }
    }
    if points.is_empty() {
        return Err(SampleError::NoValidPoints { attempts });
    }
    Ok(SampleSet {
        short: points.len() < plan.n,
        points,
        attempts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::default_domain;
    use crate::expr::parse_cond;

    fn one(iv: Interval) -> DomainMap {
        let mut d = DomainMap::default();
        d.set("x", iv);
        d
    }

    fn xs(set: &SampleSet) -> Vec<f64> {
        set.points.iter().map(|p| p["x"]).collect()
    }

    #[test]
    fn degenerate_interval() {
        let s = sample(&one(Interval::point(2.0)), &SamplePlan::new(16, 1, 0)).unwrap();
        assert!(xs(&s).iter().all(|x| *x == 2.0));
        assert!(!s.short);
    }

    #[test]
    fn deterministic_and_stream_sensitive() {
        let d = default_domain(&["x", "y"]);
        let a = sample(&d, &SamplePlan::for_id(64, 7, "expr-1")).unwrap();
        let b = sample(&d, &SamplePlan::for_id(64, 7, "expr-1")).unwrap();
        let c = sample(&d, &SamplePlan::for_id(64, 7, "expr-2")).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn full_range_has_both_signs() {
        let s = sample(&default_domain(&["x"]), &SamplePlan::new(256, 3, 0)).unwrap();
        let v = xs(&s);
        assert!(v.iter().any(|x| *x < 0.0) && v.iter().any(|x| *x > 0.0));
        assert!(v.iter().all(|x| x.abs() <= MAX_DOUBLE));
    }

    #[test]
    fn narrow_interval_is_uniform() {
        let iv = Interval::closed(1.0, 2.0).unwrap();
        assert!(!uses_log_scale(&iv));
        let s = sample(&one(iv), &SamplePlan::new(4000, 5, 0)).unwrap();
        let below = xs(&s).iter().filter(|x| **x < 1.5).count() as f64 / 4000.0;
        assert!((below - 0.5).abs() < 0.05, "{below}");
    }

    #[test]
    fn zero_straddling_unit_interval_is_log_sampled() {
        assert!(uses_log_scale(&Interval::closed(-1.0, 1.0).unwrap()));
        assert!(!uses_log_scale(&Interval::closed(1.0, 1e5).unwrap()));
        assert!(uses_log_scale(&Interval::closed(1.0, 1e6).unwrap()));
    }

    #[test]
    fn open_endpoints_and_residual_are_respected() {
        let mut d = one(Interval::new(0.0, 1e6, true, false).unwrap());
        d.add_residual(parse_cond("(> x 10)").unwrap());
        let s = sample(&d, &SamplePlan::new(200, 11, 0)).unwrap();
        assert!(xs(&s).iter().all(|x| *x > 10.0 && *x <= 1e6));
    }

    #[test]
    fn unsatisfiable_residual() {
        let mut d = one(Interval::closed(0.0, 1.0).unwrap());
        d.add_residual(parse_cond("(> x 2)").unwrap());
        let err = sample(&d, &SamplePlan::new(4, 1, 0)).unwrap_err();
        assert_eq!(err, SampleError::NoValidPoints { attempts: 256 });
    }

    #[test]
    fn short_sample_flag() {
        let mut d = one(Interval::closed(1.0, 2.0).unwrap());
        d.add_residual(parse_cond("(> x 1.9)").unwrap());
        let mut plan = SamplePlan::new(100, 9, 0);
        plan.rejection_factor = 1;
        let s = sample(&d, &plan).unwrap();
        assert!(s.short && !s.points.is_empty() && s.points.len() < 100);
    }
}
