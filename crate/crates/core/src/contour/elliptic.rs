//! Complete elliptic integrals and Jacobi elliptic functions (real modulus,
//! complex argument) via the arithmetic-geometric mean.

use faer::c64;

fn agm(mut a: f64, mut b: f64) -> f64 {
    for _ in 0..64 {
        if (a - b).abs() <= 1e-16 * a {
            break;
        }
        let next = 0.5 * (a + b);
        b = (a * b).sqrt();
        a = next;
    }
    0.5 * (a + b)
}

/// `K(k)` given the modulus and its complement `k' = sqrt(1 - k²)`.
/// Passing both avoids cancellation when `k` is close to 1.
pub fn complete_k(kp: f64) -> f64 {
    std::f64::consts::PI / (2.0 * agm(1.0, kp))
}

/// `(sn, cn, dn)(u | k)` for real `u`, with `kp = sqrt(1 - k²)`.
pub fn jacobi_real(u: f64, k: f64, kp: f64) -> (f64, f64, f64) {
    if k == 0.0 {
        return (u.sin(), u.cos(), 1.0);
    }
    if kp == 0.0 {
        let sech = 1.0 / u.cosh();
        return (u.tanh(), sech, sech);
    }
    // descending Landen / AGM scheme
    let mut a = vec![1.0];
    let mut c = vec![k];
    let mut b = kp;
    while c.last().unwrap().abs() > 1e-16 && a.len() < 64 {
        let an = *a.last().unwrap();
        let cn = 0.5 * (an - b);
        let next_a = 0.5 * (an + b);
        b = (an * b).sqrt();
        a.push(next_a);
        c.push(cn);
    }
    let n = a.len() - 1;
    let mut phi = (1u64 << n) as f64 * a[n] * u;
    for j in (1..=n).rev() {
        phi = 0.5 * (phi + (c[j] / a[j] * phi.sin()).asin());
    }
    let sn = phi.sin();
    let cn = phi.cos();
    // dn² = k'² + k² cn², free of cancellation for real arguments
    let dn = (kp * kp + k * k * cn * cn).sqrt();
    (sn, cn, dn)
}

/// `(sn, cn, dn)(x + iy | k)` from the real-argument values at `x` (modulus
/// `k`) and `y` (complementary modulus).
pub fn jacobi_complex(x: f64, y: f64, k: f64, kp: f64) -> (c64, c64, c64) {
    let (s, c, d) = jacobi_real(x, k, kp);
    let (s1, c1, d1) = jacobi_real(y, kp, k);
    let m = k * k;
    let den = c1 * c1 + m * s * s * s1 * s1;
    (
        c64::new(s * d1, c * d * s1 * c1) / den,
        c64::new(c * c1, -s * d * s1 * d1) / den,
        c64::new(d * c1 * d1, -m * s * c * s1) / den,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn complete_integral_reference_values() {
        // K(0) = π/2 and K(1/√2) = Γ(1/4)² / (4√π)
        assert!((complete_k(1.0) - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
        let k = std::f64::consts::FRAC_1_SQRT_2;
        let expected = 1.854_074_677_301_372;
        assert!((complete_k((1.0 - k * k).sqrt()) - expected).abs() < 1e-14);
    }

    #[test]
    fn real_identities_and_quarter_period() {
        for &k in &[0.1_f64, 0.5, 0.9, 0.999] {
            let kp = ((1.0 - k) * (1.0 + k)).sqrt();
            let kk = complete_k(kp);
            let (s, c, d) = jacobi_real(kk, k, kp);
            assert!((s - 1.0).abs() < 1e-12 && c.abs() < 1e-7 && (d - kp).abs() < 1e-10);
            for &u in &[-1.3, 0.2, 0.9, 2.5] {
                let (s, c, d) = jacobi_real(u, k, kp);
                assert!((s * s + c * c - 1.0).abs() < 1e-14);
                assert!((d * d + k * k * s * s - 1.0).abs() < 1e-14);
                let h = 1e-6;
                let ds = (jacobi_real(u + h, k, kp).0 - jacobi_real(u - h, k, kp).0) / (2.0 * h);
                assert!((ds - c * d).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn complex_argument_identities() {
        let k: f64 = 0.8;
        let kp = (1.0 - k * k).sqrt();
        let kk = complete_k(kp);
        let kkp = complete_k(k);
        // sn(K + iK'/2) = 1/√k
        let (s, _, _) = jacobi_complex(kk, 0.5 * kkp, k, kp);
        assert!((s.re - 1.0 / k.sqrt()).abs() < 1e-12 && s.im.abs() < 1e-12);
        for &(x, y) in &[(0.3, 0.4), (-1.1, 0.9), (1.7, 0.2)] {
            let (s, c, d) = jacobi_complex(x, y, k, kp);
            let one = c64::new(1.0, 0.0);
            assert!((s * s + c * c - one).norm() < 1e-13);
            assert!((d * d + s * s * (k * k) - one).norm() < 1e-13);
            // complex derivative along the real direction
            let h = 1e-6;
            let (sp, _, _) = jacobi_complex(x + h, y, k, kp);
            let (sm, _, _) = jacobi_complex(x - h, y, k, kp);
            assert!(((sp - sm) / (2.0 * h) - c * d).norm() < 1e-7);
        }
    }
}
