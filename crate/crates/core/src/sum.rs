//! Order-independent summation.
//!
//! [`ExactSum`] accumulates `f64` values into a wide fixed-point register so
//! the result depends only on the multiset of inputs, never on their order.
//! Full-batch EM updates use it so that permuting dataset rows, or splitting
//! the rows across workers, reproduces a fit bit for bit.

const LIMB_BITS: u32 = 32;
const LIMB_MASK: i64 = (1 << LIMB_BITS) - 1;
// bit positions 0..=2045 for finite doubles, plus headroom for carries
const LIMBS: usize = 72;
const NORMALIZE_EVERY: u32 = 1 << 29;

#[derive(Clone, Debug)]
pub struct ExactSum {
    limbs: [i64; LIMBS],
    pending: u32,
    nan: bool,
    pos_inf: bool,
    neg_inf: bool,
}

impl Default for ExactSum {
    fn default() -> Self {
        Self::new()
    }
}

impl ExactSum {
    pub fn new() -> Self {
        Self {
            limbs: [0; LIMBS],
            pending: 0,
            nan: false,
            pos_inf: false,
            neg_inf: false,
        }
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        if !x.is_finite() {
            if x.is_nan() {
                self.nan = true;
            } else if x > 0.0 {
                self.pos_inf = true;
            } else {
                self.neg_inf = true;
            }
            return;
        }
        let bits = x.to_bits();
        let biased = ((bits >> 52) & 0x7ff) as i64;
        let frac = bits & ((1u64 << 52) - 1);
        if biased == 0 && frac == 0 {
            return;
        }
        let (mant, pos) = if biased == 0 {
            (frac, 0u32)
        } else {
            (frac | (1u64 << 52), (biased - 1) as u32)
        };
        let k = (pos / LIMB_BITS) as usize;
        let shift = pos % LIMB_BITS;
        let wide = (mant as u128) << shift;
        let c0 = (wide as u64 & LIMB_MASK as u64) as i64;
        let c1 = ((wide >> 32) as u64 & LIMB_MASK as u64) as i64;
        let c2 = ((wide >> 64) as u64 & LIMB_MASK as u64) as i64;
        if bits >> 63 == 0 {
            self.limbs[k] += c0;
            self.limbs[k + 1] += c1;
            self.limbs[k + 2] += c2;
        } else {
            self.limbs[k] -= c0;
            self.limbs[k + 1] -= c1;
            self.limbs[k + 2] -= c2;
        }
        self.pending += 1;
        if self.pending >= NORMALIZE_EVERY {
            self.normalize();
        }
    }

    pub fn merge(&mut self, other: &ExactSum) {
        self.normalize();
        let mut o = other.clone();
        o.normalize();
        for (a, b) in self.limbs.iter_mut().zip(o.limbs.iter()) {
            *a += *b;
        }
        self.nan |= o.nan;
        self.pos_inf |= o.pos_inf;
        self.neg_inf |= o.neg_inf;
        self.normalize();
    }

    fn normalize(&mut self) {
        for k in 0..LIMBS - 1 {
            let carry = self.limbs[k] >> LIMB_BITS;
            self.limbs[k] -= carry << LIMB_BITS;
            self.limbs[k + 1] += carry;
        }
        self.pending = 0;
    }

    /// Rounds the exact register to a double. Deterministic in the register
    /// contents, accurate to roughly 2^-64 relative.
    pub fn value(&self) -> f64 {
        if self.nan || (self.pos_inf && self.neg_inf) {
            return f64::NAN;
        }
        if self.pos_inf {
            return f64::INFINITY;
        }
        if self.neg_inf {
            return f64::NEG_INFINITY;
        }
        let mut reg = self.clone();
        reg.normalize();
        let negative = reg.limbs[LIMBS - 1] < 0;
        if negative {
            for l in reg.limbs.iter_mut() {
                *l = -*l;
            }
            reg.normalize();
        }
        let top = match (0..LIMBS).rev().find(|&k| reg.limbs[k] != 0) {
            Some(t) => t,
            None => return 0.0,
        };
        let lo = top.saturating_sub(2);
        let mut mag = 0.0f64;
        for k in (lo..=top).rev() {
            mag = mag * 4294967296.0 + reg.limbs[k] as f64;
        }
        let exp = (lo as i32) * LIMB_BITS as i32 - 1074;
        let v = ldexp(mag, exp);
        if negative {
            -v
        } else {
            v
        }
    }
}

fn ldexp(mut x: f64, mut e: i32) -> f64 {
    let big = 2f64.powi(600);
    let small = 2f64.powi(-600);
    while e > 600 {
        x *= big;
        e -= 600;
    }
    while e < -600 {
        x *= small;
        e += 600;
    }
    x * 2f64.powi(e)
}

/// Order-independent sum of a slice.
pub fn exact_sum(values: &[f64]) -> f64 {
    let mut acc = ExactSum::new();
    for &v in values {
        acc.add(v);
    }
    acc.value()
}

/// Order-independent sum of an iterator.
pub fn exact_sum_iter<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut acc = ExactSum::new();
    for v in values {
        acc.add(v);
    }
    acc.value()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn simple_values() {
        assert_eq!(exact_sum(&[]), 0.0);
        assert_eq!(exact_sum(&[1.5]), 1.5);
        assert_eq!(exact_sum(&[1.0, 2.0, 3.0]), 6.0);
        assert_eq!(exact_sum(&[0.1, -0.1]), 0.0);
        assert_eq!(exact_sum(&[-2.5, 1.0]), -1.5);
        assert_eq!(exact_sum(&[1e308, 1e308, -1e308]), 1e308);
        assert_eq!(exact_sum(&[5e-324, 5e-324]), 1e-323);
    }

    #[test]
    fn catastrophic_cancellation_is_exact() {
        let v = [1e16, 1.0, -1e16];
        assert_eq!(exact_sum(&v), 1.0);
        let v = [1e100, 3.0, -1e100, 4.0];
        assert_eq!(exact_sum(&v), 7.0);
    }

    #[test]
    fn non_finite() {
        assert!(exact_sum(&[1.0, f64::NAN]).is_nan());
        assert_eq!(exact_sum(&[1.0, f64::INFINITY]), f64::INFINITY);
        assert!(exact_sum(&[f64::NEG_INFINITY, f64::INFINITY]).is_nan());
    }

    #[test]
    fn merge_matches_single_pass() {
        let v: Vec<f64> = (0..1000).map(|i| ((i as f64) * 0.37).sin() * 10f64.powi(i % 7)).collect();
        let mut a = ExactSum::new();
        let mut b = ExactSum::new();
        for (i, &x) in v.iter().enumerate() {
            if i % 3 == 0 {
                a.add(x)
            } else {
                b.add(x)
            }
        }
        a.merge(&b);
        assert_eq!(a.value().to_bits(), exact_sum(&v).to_bits());
    }

    proptest! {
        #[test]
        fn order_independent(mut v in proptest::collection::vec(-1e6f64..1e6, 0..200), seed in 0u64..1000) {
            let forward = exact_sum(&v);
            // deterministic shuffle
            let n = v.len();
            let mut s = seed;
            for i in (1..n).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                let j = (s >> 33) as usize % (i + 1);
                v.swap(i, j);
            }
            prop_assert_eq!(forward.to_bits(), exact_sum(&v).to_bits());
        }

        #[test]
        fn close_to_naive(v in proptest::collection::vec(-1e3f64..1e3, 1..200)) {
            let naive: f64 = v.iter().sum();
            let scale: f64 = v.iter().map(|x| x.abs()).sum();
            prop_assert!((exact_sum(&v) - naive).abs() <= 1e-12 * scale.max(1.0));
        }
    }
}
