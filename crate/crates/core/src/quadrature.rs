//! Globally adaptive Gauss–Kronrod (7/15) quadrature on finite intervals and
//! on the real line.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

#[allow(clippy::excessive_precision)]
const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];

#[allow(clippy::excessive_precision)]
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];

// Gauss weights for XGK[1], XGK[3], XGK[5], XGK[7].
#[allow(clippy::excessive_precision)]
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

const MAX_SEGMENTS: usize = 4000;

/// Integral estimate with its error bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadrature {
    pub value: f64,
    pub error: f64,
    pub segments: usize,
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error.total_cmp(&other.error) == Ordering::Equal
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> Segment {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for k in 0..7 {
        let dx = half * XGK[k];
        let pair = f(center - dx) + f(center + dx);
        kronrod += WGK[k] * pair;
        if k % 2 == 1 {
            gauss += WG[k / 2] * pair;
        }
    }
    Segment { a, b, value: kronrod * half, error: ((kronrod - gauss) * half).abs() }
}

fn adaptive<F: Fn(f64) -> f64>(f: &F, pieces: &[(f64, f64)], abs_tol: f64) -> Quadrature {
    let mut heap: BinaryHeap<Segment> = pieces.iter().map(|&(a, b)| gk15(f, a, b)).collect();
    let mut segments = heap.len();
    loop {
        let error: f64 = heap.iter().map(|s| s.error).sum();
        if error <= abs_tol || segments >= MAX_SEGMENTS {
            break;
        }
        let worst = heap.pop().expect("nonempty heap");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // interval no longer divisible in floating point
            heap.push(Segment { error: 0.0, ..worst });
            continue;
        }
        heap.push(gk15(f, worst.a, mid));
        heap.push(gk15(f, mid, worst.b));
        segments += 1;
    }
    let mut parts: Vec<Segment> = heap.into_vec();
    parts.sort_by(|x, y| x.a.total_cmp(&y.a));
    let value = crate::numeric::compensated_sum(parts.iter().map(|s| s.value));
    let error = parts.iter().map(|s| s.error).sum();
    Quadrature { value, error, segments }
}

/// `∫_a^b f` to absolute tolerance `abs_tol`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, abs_tol: f64) -> Quadrature {
    if a == b {
        return Quadrature { value: 0.0, error: 0.0, segments: 0 };
    }
    if a > b {
        let q = integrate(f, b, a, abs_tol);
        return Quadrature { value: -q.value, ..q };
    }
    adaptive(&f, &[(a, b)], abs_tol)
}

const BREAK_MULTIPLES: [f64; 6] = [0.0, 1.0, 3.0, 8.0, 16.0, 40.0];

/// `∫_ℝ f` for an integrand whose mass sits near the given `(center, scale)`
/// bumps. Breakpoints are placed around every bump; the two tails are mapped
/// onto `[0, 1)` by `y = c ± t/(1−t)`.
pub fn integrate_real_line_detailed<F: Fn(f64) -> f64>(f: F, bumps: &[(f64, f64)], abs_tol: f64) -> Quadrature {
    let mut points: Vec<f64> = Vec::new();
    for &(c, s) in bumps {
        let s = s.abs().max(f64::MIN_POSITIVE);
        for m in BREAK_MULTIPLES {
            points.push(c - m * s);
            points.push(c + m * s);
        }
    }
    if points.is_empty() {
        points.push(0.0);
    }
    points.sort_by(f64::total_cmp);
    points.dedup();
    let lo = points[0];
    let hi = points[points.len() - 1];
    let finite: Vec<(f64, f64)> = points.windows(2).map(|w| (w[0], w[1])).collect();

    let inner = if finite.is_empty() {
        Quadrature { value: 0.0, error: 0.0, segments: 0 }
    } else {
        adaptive(&f, &finite, abs_tol / 2.0)
    };
    let upper = adaptive(
        &|t: f64| {
            let u = 1.0 - t;
            f(hi + t / u) / (u * u)
        },
        &[(0.0, 1.0)],
        abs_tol / 4.0,
    );
    let lower = adaptive(
        &|t: f64| {
            let u = 1.0 - t;
            f(lo - t / u) / (u * u)
        },
        &[(0.0, 1.0)],
        abs_tol / 4.0,
    );
    Quadrature {
        value: crate::numeric::compensated_sum([lower.value, inner.value, upper.value]),
        error: lower.error + inner.error + upper.error,
        segments: lower.segments + inner.segments + upper.segments,
    }
}

/// Value-only form of [`integrate_real_line_detailed`].
pub fn integrate_real_line<F: Fn(f64) -> f64>(f: F, bumps: &[(f64, f64)], abs_tol: f64) -> f64 {
    integrate_real_line_detailed(f, bumps, abs_tol).value
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn polynomials_are_exact() {
        let q = integrate(|x| x.powi(5) - 3.0 * x * x + 1.0, -1.0, 2.0, 1e-14);
        let exact = (64.0 - 1.0) / 6.0 - (8.0 + 1.0) + 3.0;
        assert!((q.value - exact).abs() < 1e-13);
        assert_eq!(q.segments, 1);
    }

    #[test]
    fn reversed_limits_flip_sign() {
        let a = integrate(f64::sin, 0.0, 2.0, 1e-12).value;
        let b = integrate(f64::sin, 2.0, 0.0, 1e-12).value;
        assert_eq!(a, -b);
        assert!((a - (1.0 - 2f64.cos())).abs() < 1e-12);
    }

    #[test]
    fn sqrt_singularity() {
        let q = integrate(f64::sqrt, 0.0, 1.0, 1e-10);
        assert!((q.value - 2.0 / 3.0).abs() < 1e-10);
    }

    #[test]
    fn gaussian_mass_and_moments() {
        let (mu, sd) = (3.0, 0.7);
        let pdf = |y: f64| (-(y - mu) * (y - mu) / (2.0 * sd * sd)).exp() / (2.0 * PI * sd * sd).sqrt();
        let bumps = [(mu, sd)];
        assert!((integrate_real_line(pdf, &bumps, 1e-12) - 1.0).abs() < 1e-11);
        let mean = integrate_real_line(|y| y * pdf(y), &bumps, 1e-12);
        assert!((mean - mu).abs() < 1e-10);
        let var = integrate_real_line(|y| (y - mu).powi(2) * pdf(y), &bumps, 1e-12);
        assert!((var - sd * sd).abs() < 1e-10);
    }

    #[test]
    fn narrow_far_bump_is_found() {
        let sd = 0.01;
        let pdf = |y: f64| (-(y - 40.0) * (y - 40.0) / (2.0 * sd * sd)).exp() / (2.0 * PI * sd * sd).sqrt();
        let total = integrate_real_line(pdf, &[(0.0, 1.0), (40.0, sd)], 1e-12);
        assert!((total - 1.0).abs() < 1e-10, "{total}");
    }

    #[test]
    fn heavy_tail() {
        // Cauchy density
        let total = integrate_real_line(|y| 1.0 / (PI * (1.0 + y * y)), &[(0.0, 1.0)], 1e-10);
        assert!((total - 1.0).abs() < 1e-9, "{total}");
    }
}
