//! Bessel functions of the first kind for integer order.

/// Below this argument the ascending series is used.
const SERIES_LIMIT: f64 = 12.0;

/// `J_n(x)` for `n ≥ 0`, `x ≥ 0`.
pub fn bessel_j(n: u32, x: f64) -> f64 {
    if x == 0.0 {
        return if n == 0 { 1.0 } else { 0.0 };
    }
    if x < SERIES_LIMIT {
        series(n, x)
    } else {
        miller(n, x)
    }
}

/// `J_n(x)` for any integer order, using `J_{-n} = (-1)^n J_n`.
pub fn bessel_j_signed(n: i64, x: f64) -> f64 {
    let j = bessel_j(n.unsigned_abs() as u32, x);
    if n < 0 && n % 2 != 0 {
        -j
    } else {
        j
    }
}

/// `J_n'(x) = (J_{n-1}(x) - J_{n+1}(x)) / 2`.
pub fn bessel_j_prime(n: i64, x: f64) -> f64 {
    0.5 * (bessel_j_signed(n - 1, x) - bessel_j_signed(n + 1, x))
}

fn series(n: u32, x: f64) -> f64 {
    let half = 0.5 * x;
    // (x/2)^n / n! as a running product; each factor is below 6.
    let mut term = (1..=n).fold(1.0, |t, k| t * half / k as f64);
    if term == 0.0 {
        return 0.0;
    }
    let q = half * half;
    let mut sum = term;
    for k in 1..200u32 {
        term *= -q / (k as f64 * (k + n) as f64);
        sum += term;
        if term.abs() < 1e-17 * sum.abs() {
            break;
        }
    }
    sum
}

/// `J_0(x), …, J_nmax(x)` from one downward recurrence, `x ≥ 0`.
pub fn bessel_j_orders(nmax: u32, x: f64) -> Vec<f64> {
    let mut out = vec![0.0; nmax as usize + 1];
    if x == 0.0 {
        out[0] = 1.0;
        return out;
    }
    let top = (nmax as f64).max(x);
    let mut m = (top + 30.0 + (50.0 * top).sqrt()) as u32;
    m += m % 2;
    let (mut jp1, mut j) = (0.0_f64, 1e-300_f64);
    let mut norm = 0.0;
    let two_over_x = 2.0 / x;
    for k in (1..=m).rev() {
        let jm1 = k as f64 * two_over_x * j - jp1;
        jp1 = j;
        j = jm1;
        let order = k - 1;
        if order <= nmax {
            out[order as usize] = j;
        }
        if order % 2 == 0 && order > 0 {
            norm += 2.0 * j;
        }
        if j.abs() > 1e250 {
            j *= 1e-250;
            jp1 *= 1e-250;
            norm *= 1e-250;
            out.iter_mut().for_each(|v| *v *= 1e-250);
        }
    }
    norm += j;
    out.iter_mut().for_each(|v| *v /= norm);
    out
}

/// Miller's downward recurrence normalised by `J_0 + 2 Σ J_{2k} = 1`.
fn miller(n: u32, x: f64) -> f64 {
    let top = (n as f64).max(x);
    let mut m = (top + 30.0 + (50.0 * top).sqrt()) as u32;
    m += m % 2;
    let (mut jp1, mut j) = (0.0_f64, 1e-300_f64);
    let mut norm = 0.0;
    let mut wanted = 0.0;
    for k in (1..=m).rev() {
        let jm1 = 2.0 * k as f64 / x * j - jp1;
        jp1 = j;
        j = jm1;
        let order = k - 1;
        if order == n {
            wanted = j;
        }
        if order % 2 == 0 && order > 0 {
            norm += 2.0 * j;
        }
        if j.abs() > 1e250 {
            j *= 1e-250;
            jp1 *= 1e-250;
            norm *= 1e-250;
            wanted *= 1e-250;
        }
    }
    norm += j;
    if n == 0 {
        wanted = j;
    }
    wanted / norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    /// Trapezoid rule on the integral representation; spectrally accurate for
    /// periodic integrands.
    fn integral_oracle(n: u32, x: f64) -> f64 {
        let m = 512;
        (0..m)
            .map(|k| {
                let t = 2.0 * PI * k as f64 / m as f64;
                (n as f64 * t - x * t.sin()).cos()
            })
            .sum::<f64>()
            / m as f64
    }

    #[test]
    fn values_at_origin() {
        assert_eq!(bessel_j(0, 0.0), 1.0);
        assert_eq!(bessel_j(1, 0.0), 0.0);
    }

    #[test]
    fn first_zero_of_j0() {
        assert!(bessel_j(0, 2.404825557695773).abs() < 1e-9);
    }

    #[test]
    fn matches_integral_oracle() {
        for n in [0u32, 1, 2, 5, 12, 30] {
            for i in 0..=100 {
                let x = 0.5 * i as f64;
                let e = (bessel_j(n, x) - integral_oracle(n, x)).abs();
                assert!(e < 1e-10, "n={n} x={x} err={e:e}");
            }
        }
    }

    #[test]
    fn all_orders_match_single_order() {
        for i in 0..=100 {
            let x = 0.5 * i as f64;
            let all = bessel_j_orders(40, x);
            for (n, v) in all.iter().enumerate() {
                let e = (v - integral_oracle(n as u32, x)).abs();
                assert!(e < 1e-10, "n={n} x={x} err={e:e}");
            }
        }
    }

    #[test]
    fn negative_order_parity() {
        assert!((bessel_j_signed(-3, 1.7) + bessel_j(3, 1.7)).abs() < 1e-15);
        assert!((bessel_j_signed(-2, 1.7) - bessel_j(2, 1.7)).abs() < 1e-15);
    }

    #[test]
    fn derivative_matches_finite_difference() {
        for n in [0i64, 1, 4] {
            let x = 2.3;
            let h = 1e-5;
            let fd = (bessel_j_signed(n, x + h) - bessel_j_signed(n, x - h)) / (2.0 * h);
            assert!((bessel_j_prime(n, x) - fd).abs() < 1e-9);
        }
    }
}
