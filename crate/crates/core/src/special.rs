//! Scalar special functions used by the variational objectives and their
//! stationarity equations.
//!
//! `digamma` and `trigamma` shift the argument upward with the recurrences
//! ψ(x+1) = ψ(x) + 1/x and ψ′(x+1) = ψ′(x) − 1/x² until x ≥ 6, then apply the
//! asymptotic series. `log_gamma` uses a Taylor series about 2 on [1.5, 2.5]
//! and Stirling's series for large arguments.
//!
//! The checked functions reject non-positive or non-finite input. The
//! `*_pos` variants skip validation for callers that have already checked
//! their state.

use crate::error::{Error, Result};

/// Euler–Mascheroni constant.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

const ASYMPTOTIC_FROM: f64 = 6.0;
const STIRLING_FROM: f64 = 7.0;

/// ζ(k) − 1 for k = 2, 3, ….
const ZETA_MINUS_ONE: [f64; 38] = [
    0.644_934_066_848_226_4,
    0.202_056_903_159_594_3,
    0.082_323_233_711_138_19,
    0.036_927_755_143_369_93,
    0.017_343_061_984_449_14,
    0.008_349_277_381_922_827,
    0.004_077_356_197_944_339,
    0.002_008_392_826_082_214,
    0.000_994_575_127_818_085_3,
    0.000_494_188_604_119_464_6,
    0.000_246_086_553_308_048_3,
    0.000_122_713_347_578_489_1,
    6.124_813_505_870_483e-5,
    3.058_823_630_702_049e-5,
    1.528_225_940_865_187e-5,
    7.637_197_637_899_762e-6,
    3.817_293_264_999_84e-6,
    1.908_212_716_553_939e-6,
    9.539_620_338_727_961e-7,
    4.769_329_867_878_065e-7,
    2.384_505_027_277_33e-7,
    1.192_199_259_653_111e-7,
    5.960_818_905_125_948e-8,
    2.980_350_351_465_228e-8,
    1.490_155_482_836_504e-8,
    7.450_711_789_835_429e-9,
    3.725_334_024_788_457e-9,
    1.862_659_723_513_049e-9,
    9.313_274_324_196_682e-10,
    4.656_629_065_033_784e-10,
    2.328_311_833_676_505e-10,
    1.164_155_017_270_052e-10,
    5.820_772_087_902_701e-11,
    2.910_385_044_497_1e-11,
    1.455_192_189_104_198e-11,
    7.275_959_835_057_481e-12,
    3.637_979_547_378_651e-12,
    1.818_989_650_307_066e-12,
];

fn check_positive(context: &'static str, x: f64) -> Result<()> {
    if x.is_finite() && x > 0.0 {
        Ok(())
    } else {
        Err(Error::domain(context, format!("argument must be positive and finite, got {x}")))
    }
}

/// Natural log of the gamma function for x > 0.
pub fn log_gamma(x: f64) -> Result<f64> {
    check_positive("log_gamma", x)?;
    Ok(log_gamma_pos(x))
}

/// ψ(x), the logarithmic derivative of Γ.
pub fn digamma(x: f64) -> Result<f64> {
    check_positive("digamma", x)?;
    Ok(digamma_pos(x))
}

/// ψ′(x).
pub fn trigamma(x: f64) -> Result<f64> {
    check_positive("trigamma", x)?;
    Ok(trigamma_pos(x))
}

/// Jaakkola–Jordan coefficient λ(ξ) = (σ(ξ) − 1/2) / (2ξ).
///
/// Even in ξ, equal to 1/8 at the origin and decreasing in |ξ|.
pub fn jj_lambda(xi: f64) -> Result<f64> {
    if !xi.is_finite() {
        return Err(Error::domain("jj_lambda", format!("argument must be finite, got {xi}")));
    }
    Ok(jj_lambda_finite(xi))
}

/// ψ″(x), used as the Newton derivative of trigamma-based equations.
pub fn tetragamma(x: f64) -> Result<f64> {
    check_positive("tetragamma", x)?;
    Ok(tetragamma_pos(x))
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// log σ(z) without overflow for large |z|.
pub fn log_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

pub(crate) fn jj_lambda_finite(xi: f64) -> f64 {
    let a = xi.abs();
    if a < 1e-6 {
        0.125 - a * a / 96.0
    } else {
        // σ(ξ) − 1/2 = tanh(ξ/2) / 2
        (0.5 * a).tanh() / (4.0 * a)
    }
}

pub(crate) fn log_gamma_pos(x: f64) -> f64 {
    if x == 1.0 || x == 2.0 {
        return 0.0;
    }
    if x < 1.5 {
        // ln x near 1 via ln_1p keeps the cancellation against lnΓ(x+1) benign
        let ln_x = if (x - 1.0).abs() < 0.5 { (x - 1.0).ln_1p() } else { x.ln() };
        return log_gamma_pos(x + 1.0) - ln_x;
    }
    if x <= 2.5 {
        return log_gamma_near_two(x - 2.0);
    }
    if x < STIRLING_FROM {
        let mut y = x;
        let mut prod = 1.0;
        while y > 2.5 {
            y -= 1.0;
            prod *= y;
        }
        return log_gamma_near_two(y - 2.0) + prod.ln();
    }
    stirling(x)
}

/// lnΓ(2 + z) = (1 − γ)z + Σ_{k≥2} (−1)^k (ζ(k) − 1) z^k / k, for |z| ≤ 1/2.
fn log_gamma_near_two(z: f64) -> f64 {
    let mut sum = 0.0;
    let mut zk = z;
    for (i, c) in ZETA_MINUS_ONE.iter().enumerate() {
        zk *= z;
        let k = (i + 2) as f64;
        let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
        let term = sign * c * zk / k;
        sum += term;
        if term.abs() < 1e-18 * sum.abs().max(1e-300) {
            break;
        }
    }
    (1.0 - EULER_GAMMA) * z + sum
}

fn stirling(x: f64) -> f64 {
    let r = 1.0 / x;
    let r2 = r * r;
    let series = r
        * (1.0 / 12.0
            + r2 * (-1.0 / 360.0
                + r2 * (1.0 / 1260.0
                    + r2 * (-1.0 / 1680.0
                        + r2 * (1.0 / 1188.0
                            + r2 * (-691.0 / 360_360.0 + r2 * (1.0 / 156.0 + r2 * (-3617.0 / 122_400.0))))))));
    (x - 0.5) * x.ln() - x + HALF_LN_2PI + series
}

pub(crate) fn digamma_pos(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < ASYMPTOTIC_FROM {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let r = 1.0 / x;
    let r2 = r * r;
    let series = r2
        * (1.0 / 12.0
            + r2 * (-1.0 / 120.0
                + r2 * (1.0 / 252.0
                    + r2 * (-1.0 / 240.0
                        + r2 * (1.0 / 132.0
                            + r2 * (-691.0 / 32_760.0 + r2 * (1.0 / 12.0 + r2 * (-3617.0 / 8160.0))))))));
    acc + x.ln() - 0.5 * r - series
}

pub(crate) fn trigamma_pos(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < ASYMPTOTIC_FROM {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let r = 1.0 / x;
    let r2 = r * r;
    // Σ B_{2k} / x^{2k+1}
    let series = r
        * r2
        * (1.0 / 6.0
            + r2 * (-1.0 / 30.0
                + r2 * (1.0 / 42.0
                    + r2 * (-1.0 / 30.0
                        + r2 * (5.0 / 66.0 + r2 * (-691.0 / 2730.0 + r2 * (7.0 / 6.0 + r2 * (-3617.0 / 510.0))))))));
    acc + r + 0.5 * r2 + series
}

pub(crate) fn tetragamma_pos(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < ASYMPTOTIC_FROM {
        acc -= 2.0 / (x * x * x);
        x += 1.0;
    }
    let r = 1.0 / x;
    let r2 = r * r;
    // −Σ (2k+1) B_{2k} / x^{2k+2}
    let series = r2
        * r2
        * (-0.5
            + r2 * (1.0 / 6.0
                + r2 * (-1.0 / 6.0 + r2 * (0.3 + r2 * (-5.0 / 6.0 + r2 * (691.0 / 210.0 + r2 * (-17.5)))))));
    acc - r2 - r2 * r + series
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    // (x, lnΓ(x), ψ(x), ψ′(x)) at 40 significant digits, rounded to f64.
    const REFERENCE: [(f64, f64, f64, f64); 22] = [
        (0.001, 6.9071788853838536825, -1000.5755719318103005, 1000001.642533195869),
        (0.01, 4.5994798780420217225, -100.5608854578686745, 10001.62121352831322),
        (0.1, 2.2527126517342059599, -10.423754940411076795, 101.43329915079275882),
        (0.5, 0.57236494292470008707, -1.9635100260214234794, 4.9348022005446793094),
        (0.9, 0.066376239734742971189, -0.75492694994705139189, 1.9225399594772035165),
        (0.999, 0.00057803853289137972404, -0.57886180210864542646, 1.6473414317770505515),
        (1.001, -0.00057639359828336954163, -0.57557193181030047147, 1.642533195868978033),
        (1.3, -0.10817480950786047095, -0.16919088886679965563, 1.1342534349966193544),
        (1.4616321449683623, -0.1214862905358496081, -3.9928730412463043992e-17, 0.96767224544762120697),
        (1.5, -0.12078223763524522235, 0.036489973978576520559, 0.93480220054467930942),
        (1.999, -0.00042246180069215377611, 0.42213919889235557455, 0.64533842777204454447),
        (2.001, 0.00042310673480016362518, 0.42342906719069852953, 0.64453019986398402599),
        (2.5, 0.28468287047291915963, 0.70315664064524318723, 0.49035775610023486497),
        (3.7, 1.4280723266653879219, 1.1671535393615113859, 0.3100378576700383191),
        (6.0, 4.7874917427820459942, 1.7061176684318004727, 0.18132295573711532536),
        (7.5, 7.5343642367587329552, 1.9467574842460867881, 0.14261589669670379977),
        (10.0, 12.801827480081469611, 2.2517525890667211076, 0.10516633568168574612),
        (25.5, 56.389167643719946744, 3.2189424728839197665, 0.039994669649562924037),
        (100.0, 359.13420536957539878, 4.6001618527380874002, 0.010050166663333571395),
        (1000.0, 5905.2204232091812118, 6.9072551956488120521, 0.0010005001666666333334),
        (12345.6, 103959.18506616845558, 9.4210145024653965941, 0.000081003799033883784862),
        (1.0e6, 12815504.56914761166, 13.815510057964190771, 1.0000005000001666667e-6),
    ];

    #[test]
    fn log_gamma_matches_reference_to_relative_1e12() {
        for &(x, lg, _, _) in REFERENCE.iter() {
            let got = log_gamma(x).unwrap();
            let rel = (got - lg).abs() / lg.abs();
            assert!(rel <= 1e-12, "x={x}: got {got}, want {lg}, rel {rel:e}");
        }
    }

    #[test]
    fn digamma_and_trigamma_match_reference_to_1e10() {
        for &(x, _, psi, psi1) in REFERENCE.iter() {
            let d = digamma(x).unwrap();
            assert!((d - psi).abs() <= 1e-10, "digamma({x}) = {d}, want {psi}");
            let t = trigamma(x).unwrap();
            // trigamma(1e-3) is ~1e6, so compare relatively there
            let err = (t - psi1).abs() / psi1.max(1.0);
            assert!(err <= 1e-10, "trigamma({x}) = {t}, want {psi1}");
        }
    }

    #[test]
    fn known_values() {
        assert_eq!(log_gamma(1.0).unwrap(), 0.0);
        assert!((log_gamma(0.5).unwrap() - PI.sqrt().ln()).abs() < 1e-14);
        assert!((log_gamma(10.0).unwrap() - 362_880f64.ln()).abs() < 1e-12);
        assert!((digamma(1.0).unwrap() + EULER_GAMMA).abs() < 1e-12);
        assert!((digamma(2.0).unwrap() - (1.0 - EULER_GAMMA)).abs() < 1e-12);
        assert!((digamma(0.5).unwrap() - (-EULER_GAMMA - 2.0 * 2f64.ln())).abs() < 1e-12);
        assert!((trigamma(1.0).unwrap() - PI * PI / 6.0).abs() < 1e-12);
        assert!((trigamma(0.5).unwrap() - PI * PI / 2.0).abs() < 1e-12);
        assert!((trigamma(2.0).unwrap() - (PI * PI / 6.0 - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_arguments() {
        for f in [log_gamma, digamma, trigamma] {
            assert!(f(0.0).is_err());
            assert!(f(-1.0).is_err());
            assert!(f(f64::NAN).is_err());
            assert!(f(f64::INFINITY).is_err());
        }
        assert!(jj_lambda(f64::NAN).is_err());
        assert!(jj_lambda(f64::NEG_INFINITY).is_err());
    }

    fn log_grid(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
        let (a, b) = (lo.ln(), hi.ln());
        (0..n).map(move |i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
    }

    #[test]
    fn digamma_recurrence_on_log_grid() {
        for x in log_grid(1e-2, 1e4, 400) {
            let lhs = digamma(x + 1.0).unwrap() - digamma(x).unwrap();
            assert!((lhs - 1.0 / x).abs() <= 1e-10 * (1.0 / x).max(1.0), "x={x}");
        }
    }

    #[test]
    fn trigamma_is_derivative_of_digamma() {
        let h = 1e-5;
        for x in log_grid(0.1, 100.0, 200) {
            let fd = (digamma(x + h).unwrap() - digamma(x - h).unwrap()) / (2.0 * h);
            assert!((fd - trigamma(x).unwrap()).abs() <= 1e-5, "x={x}");
        }
    }

    #[test]
    fn tetragamma_is_derivative_of_trigamma() {
        let h = 1e-5;
        for x in log_grid(0.05, 1e4, 200) {
            let fd = (trigamma(x + h).unwrap() - trigamma(x - h).unwrap()) / (2.0 * h);
            let t = tetragamma(x).unwrap();
            assert!((fd - t).abs() <= 1e-6 * t.abs().max(1.0), "x={x}: fd {fd} vs {t}");
        }
        // ψ″(1) = −2ζ(3)
        assert!((tetragamma(1.0).unwrap() + 2.0 * 1.202_056_903_159_594_3).abs() < 1e-12);
    }

    #[test]
    fn digamma_increasing_trigamma_positive_decreasing() {
        let xs: Vec<f64> = log_grid(1e-3, 1e6, 2000).collect();
        for w in xs.windows(2) {
            assert!(digamma(w[1]).unwrap() > digamma(w[0]).unwrap());
            let (t0, t1) = (trigamma(w[0]).unwrap(), trigamma(w[1]).unwrap());
            assert!(t1 > 0.0 && t1 < t0);
        }
    }

    #[test]
    fn jj_lambda_values() {
        assert_eq!(jj_lambda(0.0).unwrap(), 0.125);
        let s1 = 1.0 / (1.0 + (-1.0f64).exp());
        assert!((jj_lambda(1.0).unwrap() - (s1 - 0.5) / 2.0).abs() < 1e-15);
        for xi in [0.3, 2.0, 10.0] {
            assert_eq!(jj_lambda(xi).unwrap(), jj_lambda(-xi).unwrap());
        }
        // continuity across the series switch
        let below = jj_lambda(0.999e-6).unwrap();
        let above = jj_lambda(1.001e-6).unwrap();
        assert!((below - above).abs() < 1e-15);
    }

    #[test]
    fn jj_lambda_positive_even_decreasing() {
        let mut prev = f64::INFINITY;
        for i in 0..=5000 {
            let xi = 50.0 * i as f64 / 5000.0;
            let l = jj_lambda(xi).unwrap();
            assert!(l > 0.0 && l <= prev, "xi={xi}");
            assert_eq!(l, jj_lambda(-xi).unwrap());
            prev = l;
        }
    }

    #[test]
    fn sigmoid_saturates_without_overflow() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((sigmoid(1e3) - 1.0).abs() < 1e-12);
        assert!(sigmoid(-1e3) >= 0.0);
        assert!((log_sigmoid(-800.0) + 800.0).abs() < 1e-9);
        assert!(log_sigmoid(800.0).abs() < 1e-300);
    }
}
