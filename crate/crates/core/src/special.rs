//! Normal and beta special functions.
//!
//! Everything here runs without `std`: elementary functions come from `libm`,
//! the normal quantile is Wichura's AS241 rational approximation (relative
//! accuracy about 1e-16) and the regularized incomplete beta function uses the
//! Lentz continued fraction.

use core::f64::consts::{PI, SQRT_2};

/// `1 / sqrt(2π)`.
pub const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn powf(x: f64, y: f64) -> f64 {
    libm::pow(x, y)
}

#[inline]
pub fn floor(x: f64) -> f64 {
    libm::floor(x)
}

/// Standard normal density.
#[must_use]
pub fn normal_pdf(z: f64) -> f64 {
    if !z.is_finite() {
        return 0.0;
    }
    FRAC_1_SQRT_2PI * exp(-0.5 * z * z)
}

/// Standard normal cdf, accurate in both tails.
#[must_use]
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / SQRT_2)
}

/// Inverse of the standard normal cdf. Returns `±∞` at the endpoints and
/// exactly `0` at `p = 0.5`.
#[must_use]
#[allow(clippy::excessive_precision)]
pub fn normal_quantile(p: f64) -> f64 {
    if p.is_nan() {
        return f64::NAN;
    }
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        let num = ((((((r * 2509.080_928_730_122_7 + 33430.575_583_588_128)
            * r
            + 67265.770_927_008_700)
            * r
            + 45921.953_931_549_871)
            * r
            + 13731.693_765_509_461)
            * r
            + 1971.590_950_306_551_4)
            * r
            + 133.141_667_891_784_38)
            * r
            + 3.387_132_872_796_366_6;
        let den = ((((((r * 5226.495_278_852_545_9 + 28729.085_735_721_943)
            * r
            + 39307.895_800_092_711)
            * r
            + 21213.794_301_586_596)
            * r
            + 5394.196_021_424_751_1)
            * r
            + 687.187_007_492_057_91)
            * r
            + 42.313_330_701_600_911)
            * r
            + 1.0;
        return q * num / den;
    }
    let tail = if q < 0.0 { p } else { 1.0 - p };
    let mut r = sqrt(-ln(tail));
    let value = if r <= 5.0 {
        r -= 1.6;
        let num = ((((((r * 7.745_450_142_783_414_1e-4 + 0.022_723_844_989_269_184)
            * r
            + 0.241_780_725_177_450_61)
            * r
            + 1.270_458_252_452_368_4)
            * r
            + 3.647_848_324_763_204_6)
            * r
            + 5.769_497_221_460_691_4)
            * r
            + 4.630_337_846_156_545_3)
            * r
            + 1.423_437_110_749_683_6;
        let den = ((((((r * 1.050_750_071_644_416_8e-9 + 5.475_938_084_995_345e-4)
            * r
            + 0.015_198_666_563_616_457)
            * r
            + 0.148_103_976_427_480_07)
            * r
            + 0.689_767_334_985_100_05)
            * r
            + 1.676_384_830_183_803_8)
            * r
            + 2.053_191_626_637_758_8)
            * r
            + 1.0;
        num / den
    } else {
        r -= 5.0;
        let num = ((((((r * 2.010_334_399_292_288_1e-7 + 2.711_555_568_743_487_6e-5)
            * r
            + 0.001_242_660_947_388_078_4)
            * r
            + 0.026_532_189_526_576_123)
            * r
            + 0.296_560_571_828_504_89)
            * r
            + 1.784_826_539_917_291_3)
            * r
            + 5.463_784_911_164_114_4)
            * r
            + 6.657_904_643_501_103_8;
        let den = ((((((r * 2.044_263_103_389_939_8e-15 + 1.421_511_758_316_445_9e-7)
            * r
            + 1.846_318_317_510_054_7e-5)
            * r
            + 7.868_691_311_456_132_6e-4)
            * r
            + 0.014_875_361_290_850_615)
            * r
            + 0.136_929_880_922_735_81)
            * r
            + 0.599_832_206_555_887_94)
            * r
            + 1.0;
        num / den
    };
    if q < 0.0 {
        -value
    } else {
        value
    }
}

/// `∫_a^b Φ⁻¹(u) du` for `0 ≤ a ≤ b ≤ 1`.
#[must_use]
pub fn integral_normal_quantile(a: f64, b: f64) -> f64 {
    normal_pdf(normal_quantile(a)) - normal_pdf(normal_quantile(b))
}

/// `∫_a^b u Φ⁻¹(u) du` for `0 ≤ a ≤ b ≤ 1`.
#[must_use]
pub fn integral_u_normal_quantile(a: f64, b: f64) -> f64 {
    // Antiderivative of z φ(z) Φ(z) in z = Φ⁻¹(u).
    let anti = |u: f64| -> f64 {
        let z = normal_quantile(u);
        if !z.is_finite() {
            return if z > 0.0 {
                1.0 / (2.0 * sqrt(PI))
            } else {
                0.0
            };
        }
        -normal_pdf(z) * u + normal_cdf(SQRT_2 * z) / (2.0 * sqrt(PI))
    };
    anti(b) - anti(a)
}

/// Natural log of the gamma function.
#[must_use]
pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

/// Natural log of the beta function.
#[must_use]
pub fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=500 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < 1e-16 {
            break;
        }
    }
    h
}

/// Regularized incomplete beta function `I_x(a, b)`.
#[must_use]
pub fn beta_inc(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = a * ln(x) + b * ln(1.0 - x) - ln_beta(a, b);
    if x < (a + 1.0) / (a + b + 2.0) {
        exp(ln_front) * beta_continued_fraction(a, b, x) / a
    } else {
        1.0 - exp(ln_front) * beta_continued_fraction(b, a, 1.0 - x) / b
    }
}

/// Density of the Beta(a, b) law on [0, 1].
#[must_use]
pub fn beta_pdf(a: f64, b: f64, x: f64) -> f64 {
    if !(0.0..=1.0).contains(&x) {
        return 0.0;
    }
    if x == 0.0 || x == 1.0 {
        let edge = if x == 0.0 { a } else { b };
        return if edge < 1.0 {
            f64::INFINITY
        } else if edge == 1.0 {
            exp(-ln_beta(a, b))
        } else {
            0.0
        };
    }
    exp((a - 1.0) * ln(x) + (b - 1.0) * ln(1.0 - x) - ln_beta(a, b))
}

/// Inverse of the regularized incomplete beta function in `x`.
///
/// Safeguarded Newton iteration inside a shrinking bisection bracket.
#[must_use]
pub fn beta_inc_inv(a: f64, b: f64, p: f64) -> f64 {
    if p <= 0.0 {
        return 0.0;
    }
    if p >= 1.0 {
        return 1.0;
    }
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    let mut x = a / (a + b);
    for _ in 0..200 {
        let f = beta_inc(a, b, x) - p;
        if f.abs() < 1e-15 {
            return x;
        }
        if f < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let dens = beta_pdf(a, b, x);
        let mut next = if dens.is_finite() && dens > 0.0 {
            x - f / dens
        } else {
            0.5 * (lo + hi)
        };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 1e-16 * x.max(1e-300) || hi - lo < 1e-16 {
            return next;
        }
        x = next;
    }
    x
}

/// Neumaier-compensated sum; the result does not depend on the magnitude
/// ordering of the inputs beyond the last bit in practice.
#[must_use]
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0_f64;
    let mut comp = 0.0_f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Arithmetic mean with compensated summation; `NaN` for an empty slice.
#[must_use]
pub fn mean(values: &[f64]) -> f64 {
    compensated_sum(values.iter().copied()) / values.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1.0)
    }

    #[test]
    fn quantile_matches_reference_values() {
        let cases = [
            (0.85, 1.036_433_389_493_789_8),
            (0.975, 1.959_963_984_540_054),
            (1e-10, -6.361_340_902_404_056),
            (0.3, -0.524_400_512_708_040_9),
            (0.999_999, 4.753_424_308_817_087),
            (0.024_25, -1.972_961_051_311_885),
        ];
        for (p, z) in cases {
            assert!(close(normal_quantile(p), z, 1e-14), "p = {p}");
        }
        assert_eq!(normal_quantile(0.5), 0.0);
    }

    #[test]
    fn cdf_matches_reference_values() {
        let cases = [
            (1.0, 0.841_344_746_068_542_9),
            (-2.5, 0.006_209_665_325_776_132),
            (0.3, 0.617_911_422_188_952_6),
        ];
        for (z, p) in cases {
            assert!(close(normal_cdf(z), p, 1e-15), "z = {z}");
        }
        assert!((normal_cdf(-8.0) / 6.220_960_574_271_74e-16 - 1.0).abs() < 1e-10);
    }

    #[test]
    fn quantile_inverts_cdf() {
        for i in 1..1000 {
            let p = i as f64 / 1000.0;
            assert!((normal_cdf(normal_quantile(p)) - p).abs() < 1e-15);
        }
    }

    #[test]
    fn beta_reference_values() {
        let cases = [
            (2.0, 3.0, 0.4, 0.524_8, 0.272_383_942_075_105_36),
            (0.5, 0.5, 0.2, 0.295_167_235_300_866_5, 0.206_107_373_853_763_4),
            (5.0, 1.5, 0.9, 0.776_172_134_316_215_9, 0.704_561_462_753_066_7),
        ];
        for (a, b, x, cdf, q30) in cases {
            assert!((beta_inc(a, b, x) - cdf).abs() < 1e-13);
            assert!((beta_inc_inv(a, b, 0.3) - q30).abs() < 1e-12);
        }
    }

    #[test]
    fn normal_quantile_integrals_match_quadrature() {
        let (a, b) = (0.1, 0.93);
        let n = 200_000;
        let h = (b - a) / n as f64;
        let (mut i0, mut i1) = (0.0, 0.0);
        for k in 0..n {
            let u = a + (k as f64 + 0.5) * h;
            let z = normal_quantile(u);
            i0 += z * h;
            i1 += u * z * h;
        }
        assert!((integral_normal_quantile(a, b) - i0).abs() < 1e-9);
        assert!((integral_u_normal_quantile(a, b) - i1).abs() < 1e-9);
        // ∫_0^1 u Φ⁻¹(u) du = 1 / (2√π)
        assert!((integral_u_normal_quantile(0.0, 1.0) - 0.282_094_791_773_878_14).abs() < 1e-15);
    }
}
