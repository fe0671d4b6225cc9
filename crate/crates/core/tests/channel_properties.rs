use epicg::channel::{sample_kronecker, sample_rayleigh, snr_to_sigma2, stack_complex, to_real_system};
use epicg::linalg::dot;
use epicg::rng::stream_rng;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

fn complex_vec<R: Rng>(n: usize, rng: &mut R) -> Vec<Complex64> {
    (0..n)
        .map(|_| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
        .collect()
}

#[test]
fn real_product_reproduces_complex_product() {
    let mut rng = stream_rng(11, 0);
    let h = sample_kronecker(6, 9, 0.7, &mut rng).unwrap();
    let sys = to_real_system(&h, &[Complex64::new(0.0, 0.0); 9], 1.0).unwrap();
    for _ in 0..100 {
        let x = complex_vec(6, &mut rng);
        let want = stack_complex(&h.mul_vec(&x));
        let got = sys.h.matvec(&stack_complex(&x));
        let err = want.iter().zip(&got).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err <= 1e-12, "{err}");
    }
}

#[test]
fn gram_is_symmetric_psd() {
    let mut rng = stream_rng(12, 0);
    let h = sample_rayleigh(8, 5, &mut rng).unwrap();
    let g = h.to_real_matrix().gram();
    assert!(g.relative_asymmetry() < 1e-10);
    for _ in 0..200 {
        let v: Vec<f64> = (0..16).map(|_| rng.sample(StandardNormal)).collect();
        assert!(dot(&v, &g.matvec(&v)) >= -1e-10);
    }
}

#[test]
fn empirical_snr_matches_mapping() {
    let (nt, nr, snr_db) = (4, 4, 12.0);
    let sigma2 = snr_to_sigma2(snr_db, nt, 1.0);
    let mut rng = stream_rng(13, 0);
    let (mut signal, mut noise) = (0.0, 0.0);
    for _ in 0..10_000 {
        let h = sample_rayleigh(nt, nr, &mut rng).unwrap();
        // Unit-energy symbols: each component variance 1/2.
        let x: Vec<Complex64> = complex_vec(nt, &mut rng)
            .iter()
            .map(|v| v * std::f64::consts::FRAC_1_SQRT_2)
            .collect();
        signal += h.mul_vec(&x).iter().map(|v| v.norm_sqr()).sum::<f64>();
        noise += complex_vec(nr, &mut rng)
            .iter()
            .map(|v| v.norm_sqr() * sigma2)
            .sum::<f64>();
    }
    let measured = 10.0 * (signal / noise).log10();
    assert!((measured - snr_db).abs() <= 0.1, "{measured}");
}
