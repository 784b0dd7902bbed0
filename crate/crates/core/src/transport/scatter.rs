//! Henyey-Greenstein scattering direction sampling.

use std::f64::consts::TAU;

use crate::transport::vec3::{add_scaled, normalize, orthonormal_frame, V3};

/// Anisotropy magnitudes below this sample the isotropic limit directly.
const ISOTROPIC_EPS: f64 = 1e-6;

/// Inverse CDF of the Henyey-Greenstein deflection cosine.
#[inline]
pub fn hg_cos_theta(g: f64, u: f64) -> f64 {
    // Clamp to the open interval; the phase function is undefined at |g| = 1.
    let g = g.clamp(-1.0 + 1e-9, 1.0 - 1e-9);
    if g.abs() < ISOTROPIC_EPS {
        return 2.0 * u - 1.0;
    }
    let s = (1.0 - g * g) / (1.0 + g * (2.0 * u - 1.0));
    ((1.0 + g * g - s * s) / (2.0 * g)).clamp(-1.0, 1.0)
}

/// Sample a new unit direction after scattering with anisotropy `g`.
///
/// The deflection cosine follows the Henyey-Greenstein inverse CDF driven by
/// `u1`; the azimuth around the incoming direction is uniform in `u2`.
pub fn sample_scatter_direction(g: f64, incoming: V3, u1: f64, u2: f64) -> V3 {
    let cos_theta = hg_cos_theta(g, u1);
    let sin_theta = (1.0 - cos_theta * cos_theta).max(0.0).sqrt();
    let phi = TAU * u2;
    let (e1, e2) = orthonormal_frame(incoming);
    let mut out = add_scaled(
        add_scaled(
            [
                cos_theta * incoming[0],
                cos_theta * incoming[1],
                cos_theta * incoming[2],
            ],
            e1,
            sin_theta * phi.cos(),
        ),
        e2,
        sin_theta * phi.sin(),
    );
    out = normalize(out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;
    use crate::transport::vec3::{dot, norm};

    #[test]
    fn isotropic_limit_is_linear_in_u() {
        for u in [0.0, 0.25, 0.5, 0.75, 0.999] {
            let c = hg_cos_theta(0.0, u);
            assert!((c - (2.0 * u - 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn closed_form_value_at_half() {
        // cos(theta) = (1 + g^2 - ((1 - g^2) / (1 + g(2u-1)))^2) / (2g)
        let g: f64 = 0.9;
        let u = 0.5;
        let s = (1.0 - g * g) / (1.0 + g * (2.0 * u - 1.0));
        let expected = (1.0 + g * g - s * s) / (2.0 * g);
        assert!((hg_cos_theta(g, u) - expected).abs() < 1e-15);
        assert!((expected - 0.9855).abs() < 1e-12);
    }

    #[test]
    fn endpoints_cover_full_range() {
        assert!((hg_cos_theta(0.9, 0.0) + 1.0).abs() < 1e-9);
        assert!((hg_cos_theta(0.9, 1.0) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn empirical_mean_cosine_matches_g() {
        let g = 0.9;
        let incoming = normalize([0.3, -0.4, 0.866]);
        let mut stream = Stream::from_key(&[0xC0_51]);
        let n = 1_000_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let u1 = stream.next_f64();
            let u2 = stream.next_f64();
            let out = sample_scatter_direction(g, incoming, u1, u2);
            acc += dot(out, incoming);
        }
        let mean = acc / n as f64;
        // Var of the HG cosine is (1 - g^2)/3, so the Monte Carlo error at
        // 1e6 draws is about 2.5e-4; 1e-3 is a 4-sigma band.
        assert!((mean - g).abs() < 1e-3, "mean cosine {mean}");
    }

    #[test]
    fn outputs_are_unit_norm() {
        let mut stream = Stream::from_key(&[0xC0_52]);
        for _ in 0..1000 {
            let d = normalize([
                stream.next_range(-1.0, 1.0),
                stream.next_range(-1.0, 1.0),
                stream.next_range(-1.0, 1.0),
            ]);
            let out = sample_scatter_direction(0.9, d, stream.next_f64(), stream.next_f64());
            assert!((norm(out) - 1.0).abs() < 1e-12);
        }
    }
}
