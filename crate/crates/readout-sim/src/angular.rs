//! Wigner 3j and 6j symbols via the Racah single-sum formulas.
//!
//! Arguments are physical (possibly half-integer) angular momenta passed as
//! f64; internally everything is doubled to exact integers. Selection-rule
//! violations return 0.0 by convention rather than erroring, which keeps
//! sum-over-states code free of branches.

use once_cell::sync::Lazy;

const LN_FACT_LEN: usize = 256;

static LN_FACT: Lazy<[f64; LN_FACT_LEN]> = Lazy::new(|| {
    let mut t = [0.0; LN_FACT_LEN];
    for i in 2..LN_FACT_LEN {
        t[i] = t[i - 1] + (i as f64).ln();
    }
    t
});

fn ln_fact(n: i64) -> f64 {
    debug_assert!(n >= 0 && (n as usize) < LN_FACT_LEN);
    LN_FACT[n as usize]
}

/// Doubled-integer representation of a (half-)integer angular momentum.
fn twice(x: f64) -> i64 {
    let t = (2.0 * x).round();
    debug_assert!((2.0 * x - t).abs() < 1e-9, "argument {x} is not half-integer");
    t as i64
}

fn triangle_violated(tj1: i64, tj2: i64, tj3: i64) -> bool {
    tj3 < (tj1 - tj2).abs() || tj3 > tj1 + tj2 || (tj1 + tj2 + tj3) % 2 != 0
}

/// log of the triangle coefficient Δ(j1 j2 j3), doubled args.
fn ln_triangle(tj1: i64, tj2: i64, tj3: i64) -> f64 {
    ln_fact((tj1 + tj2 - tj3) / 2) + ln_fact((tj1 - tj2 + tj3) / 2)
        + ln_fact((-tj1 + tj2 + tj3) / 2)
        - ln_fact((tj1 + tj2 + tj3) / 2 + 1)
}

/// Wigner 3j symbol (j1 j2 j3; m1 m2 m3).
pub fn wigner3j(j1: f64, j2: f64, j3: f64, m1: f64, m2: f64, m3: f64) -> f64 {
    let (tj1, tj2, tj3) = (twice(j1), twice(j2), twice(j3));
    let (tm1, tm2, tm3) = (twice(m1), twice(m2), twice(m3));
    if tj1 < 0 || tj2 < 0 || tj3 < 0 {
        return 0.0;
    }
    if tm1 + tm2 + tm3 != 0
        || tm1.abs() > tj1
        || tm2.abs() > tj2
        || tm3.abs() > tj3
        || (tj1 + tm1) % 2 != 0
        || (tj2 + tm2) % 2 != 0
        || (tj3 + tm3) % 2 != 0
        || triangle_violated(tj1, tj2, tj3)
    {
        return 0.0;
    }

    // Racah sum: t runs over all values keeping every factorial argument >= 0.
    let a1 = (tj3 - tj2 + tm1) / 2; // j3 - j2 + m1
    let a2 = (tj3 - tj1 - tm2) / 2; // j3 - j1 - m2
    let k1 = (tj1 + tj2 - tj3) / 2;
    let k2 = (tj1 - tm1) / 2;
    let k3 = (tj2 + tm2) / 2;
    let tmin = 0.max(-a1).max(-a2);
    let tmax = k1.min(k2).min(k3);
    if tmin > tmax {
        return 0.0;
    }

    let ln_pref = 0.5
        * (ln_triangle(tj1, tj2, tj3)
            + ln_fact((tj1 + tm1) / 2)
            + ln_fact((tj1 - tm1) / 2)
            + ln_fact((tj2 + tm2) / 2)
            + ln_fact((tj2 - tm2) / 2)
            + ln_fact((tj3 + tm3) / 2)
            + ln_fact((tj3 - tm3) / 2));

    let mut sum = 0.0f64;
    for t in tmin..=tmax {
        let ln_den = ln_fact(t)
            + ln_fact(k1 - t)
            + ln_fact(k2 - t)
            + ln_fact(k3 - t)
            + ln_fact(a1 + t)
            + ln_fact(a2 + t);
        let sign = if t % 2 == 0 { 1.0 } else { -1.0 };
        sum += sign * (ln_pref - ln_den).exp();
    }
    let phase = if ((tj1 - tj2 - tm3) / 2).rem_euclid(2) == 0 { 1.0 } else { -1.0 };
    phase * sum
}

/// Wigner 6j symbol {j1 j2 j3; j4 j5 j6}.
pub fn wigner6j(j1: f64, j2: f64, j3: f64, j4: f64, j5: f64, j6: f64) -> f64 {
    let t = [twice(j1), twice(j2), twice(j3), twice(j4), twice(j5), twice(j6)];
    if t.iter().any(|&x| x < 0) {
        return 0.0;
    }
    let triads = [
        (t[0], t[1], t[2]),
        (t[0], t[4], t[5]),
        (t[3], t[1], t[5]),
        (t[3], t[4], t[2]),
    ];
    for &(a, b, c) in &triads {
        if triangle_violated(a, b, c) {
            return 0.0;
        }
    }

    let ln_pref: f64 = triads.iter().map(|&(a, b, c)| ln_triangle(a, b, c)).sum::<f64>() * 0.5;

    // sum bounds from the four triad sums and three "square" sums
    let s1 = (t[0] + t[1] + t[2]) / 2;
    let s2 = (t[0] + t[4] + t[5]) / 2;
    let s3 = (t[3] + t[1] + t[5]) / 2;
    let s4 = (t[3] + t[4] + t[2]) / 2;
    let q1 = (t[0] + t[1] + t[3] + t[4]) / 2;
    let q2 = (t[1] + t[2] + t[4] + t[5]) / 2;
    let q3 = (t[2] + t[0] + t[5] + t[3]) / 2;
    let zmin = s1.max(s2).max(s3).max(s4);
    let zmax = q1.min(q2).min(q3);
    if zmin > zmax {
        return 0.0;
    }

    let mut sum = 0.0f64;
    for z in zmin..=zmax {
        let ln_num = ln_fact(z + 1);
        let ln_den = ln_fact(z - s1)
            + ln_fact(z - s2)
            + ln_fact(z - s3)
            + ln_fact(z - s4)
            + ln_fact(q1 - z)
            + ln_fact(q2 - z)
            + ln_fact(q3 - z);
        let sign = if z % 2 == 0 { 1.0 } else { -1.0 };
        sum += sign * (ln_pref + ln_num - ln_den).exp();
    }
    sum
}

/// Clebsch-Gordan coefficient <j1 m1 j2 m2 | j3 m3>.
pub fn clebsch_gordan(j1: f64, m1: f64, j2: f64, m2: f64, j3: f64, m3: f64) -> f64 {
    let phase_exp = twice(j1) - twice(j2) + twice(m3);
    let phase = if (phase_exp / 2).rem_euclid(2) == 0 { 1.0 } else { -1.0 };
    phase * (2.0 * j3 + 1.0).sqrt() * wigner3j(j1, j2, j3, m1, m2, -m3)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn threej_known_values() {
        // (1 1 0; 0 0 0) = -1/sqrt(3)
        assert_abs_diff_eq!(wigner3j(1.0, 1.0, 0.0, 0.0, 0.0, 0.0), -1.0 / 3f64.sqrt(), epsilon = 1e-12);
        // (1 1 2; 0 0 0) = sqrt(2/15)
        assert_abs_diff_eq!(wigner3j(1.0, 1.0, 2.0, 0.0, 0.0, 0.0), (2.0f64 / 15.0).sqrt(), epsilon = 1e-12);
        // (1/2 1/2 1; 1/2 1/2 -1) = -1/sqrt(3)
        assert_abs_diff_eq!(
            wigner3j(0.5, 0.5, 1.0, 0.5, 0.5, -1.0),
            -1.0 / 3f64.sqrt(),
            epsilon = 1e-12
        );
        // (2 1 1; 1 -1 0) = -1/sqrt(10)
        assert_abs_diff_eq!(wigner3j(2.0, 1.0, 1.0, 1.0, -1.0, 0.0), -(1.0f64 / 10.0).sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn threej_selection_rules_zero() {
        assert_eq!(wigner3j(1.0, 1.0, 3.0, 0.0, 0.0, 0.0), 0.0);
        assert_eq!(wigner3j(1.0, 1.0, 1.0, 1.0, 1.0, -2.0), 0.0);
        assert_eq!(wigner3j(1.0, 1.0, 2.0, 0.0, 1.0, 0.0), 0.0);
        // odd sum with m = 0
        assert_eq!(wigner3j(1.0, 1.0, 1.0, 0.0, 0.0, 0.0), 0.0);
    }

    #[test]
    fn sixj_known_values() {
        // {1 1 1; 1 1 1} = 1/6
        assert_abs_diff_eq!(wigner6j(1.0, 1.0, 1.0, 1.0, 1.0, 1.0), 1.0 / 6.0, epsilon = 1e-12);
        // {1 1 0; 1 1 1} = (-1)^(1+1+1)/3 = -1/3
        assert_abs_diff_eq!(wigner6j(1.0, 1.0, 0.0, 1.0, 1.0, 1.0), -1.0 / 3.0, epsilon = 1e-12);
        // {1/2 1/2 1; 1/2 1/2 1} = 1/6
        assert_abs_diff_eq!(wigner6j(0.5, 0.5, 1.0, 0.5, 0.5, 1.0), 1.0 / 6.0, epsilon = 1e-12);
        // {2 1 1; 1 1 1} = 1/6
        assert_abs_diff_eq!(wigner6j(2.0, 1.0, 1.0, 1.0, 1.0, 1.0), 1.0 / 6.0, epsilon = 1e-12);
    }

    #[test]
    fn sixj_triangle_zero() {
        assert_eq!(wigner6j(1.0, 1.0, 3.0, 1.0, 1.0, 1.0), 0.0);
        assert_eq!(wigner6j(0.5, 0.5, 0.5, 0.5, 0.5, 0.5), 0.0);
    }

    #[test]
    fn cg_simple() {
        // <1/2 1/2, 1/2 1/2 | 1 1> = 1
        assert_abs_diff_eq!(clebsch_gordan(0.5, 0.5, 0.5, 0.5, 1.0, 1.0), 1.0, epsilon = 1e-12);
        // <1/2 1/2, 1/2 -1/2 | 0 0> = 1/sqrt(2)
        assert_abs_diff_eq!(
            clebsch_gordan(0.5, 0.5, 0.5, -0.5, 0.0, 0.0),
            1.0 / 2f64.sqrt(),
            epsilon = 1e-12
        );
    }
}
