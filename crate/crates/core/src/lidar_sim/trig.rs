//! Cosine evaluated in double-double precision from a multiple of pi.

const PI_HI: f64 = std::f64::consts::PI;
const PI_LO: f64 = 1.224_646_799_147_353_2e-16;

#[derive(Clone, Copy)]
struct Dd(f64, f64);

fn two_sum(a: f64, b: f64) -> Dd {
    let s = a + b;
    let bb = s - a;
    Dd(s, (a - (s - bb)) + (b - bb))
}

fn add(a: Dd, b: Dd) -> Dd {
    let s = two_sum(a.0, b.0);
    let lo = s.1 + a.1 + b.1;
    let hi = s.0 + lo;
    Dd(hi, lo - (hi - s.0))
}

fn mul(a: Dd, b: Dd) -> Dd {
    let p = a.0 * b.0;
    let e = a.0.mul_add(b.0, -p) + (a.0 * b.1 + a.1 * b.0);
    let hi = p + e;
    Dd(hi, e - (hi - p))
}

fn scale(a: Dd, s: f64) -> Dd {
    mul(a, Dd(s, 0.0))
}

/// Taylor series for `cos(x)` or `sin(x)` with `|x| <= pi/4`.
fn series(x: Dd, sine: bool) -> f64 {
    let x2 = mul(x, x);
    let (mut term, mut k) = if sine { (x, 1.0) } else { (Dd(1.0, 0.0), 0.0) };
    let mut sum = term;
    for _ in 0..16 {
        term = scale(mul(term, x2), -1.0 / ((k + 1.0) * (k + 2.0)));
        k += 2.0;
        sum = add(sum, term);
    }
    sum.0 + sum.1
}

/// `cos(pi * r)` for `r` in `[0, 1/2]`, accurate enough that exact values
/// such as `r = 1/3` round to `0.5`.
pub fn cos_pi(r: f64) -> f64 {
    debug_assert!((0.0..=0.5).contains(&r));
    let pi = Dd(PI_HI, PI_LO);
    if r <= 0.25 {
        series(scale(pi, r), false)
    } else {
        series(scale(pi, 0.5 - r), true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_landmarks() {
        assert_eq!(cos_pi(0.0), 1.0);
        assert_eq!(cos_pi(1.0 / 3.0), 0.5);
        assert_eq!(cos_pi(0.5), 0.0);
        assert_eq!(cos_pi(0.25), std::f64::consts::FRAC_1_SQRT_2);
    }

    #[test]
    fn agrees_with_libm() {
        for i in 0..=1000 {
            let r = i as f64 / 2000.0;
            let a = cos_pi(r);
            let b = (std::f64::consts::PI * r).cos();
            assert!((a - b).abs() <= 4.0 * f64::EPSILON, "{r}: {a} vs {b}");
        }
    }
}
