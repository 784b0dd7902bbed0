//! Fresnel reflection at the tissue-air boundary.

use crate::transport::vec3::{add_scaled, dot, V3};

/// Result of a packet meeting the domain boundary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BoundaryOutcome {
    /// The packet leaves the domain along the refracted direction.
    Exit { direction: V3 },
    /// The packet is reflected back inside along the mirrored direction.
    Reflect { direction: V3 },
}

/// Unpolarized Fresnel reflectance for a ray crossing from index `nu_i`
/// into `nu_t` with incidence cosine `cos_i` (> 0). Returns 1 beyond the
/// critical angle.
pub fn fresnel_reflectance(nu_i: f64, nu_t: f64, cos_i: f64) -> f64 {
    let cos_i = cos_i.clamp(0.0, 1.0);
    let sin_i2 = 1.0 - cos_i * cos_i;
    let ratio = nu_i / nu_t;
    let sin_t2 = ratio * ratio * sin_i2;
    if sin_t2 >= 1.0 {
        return 1.0; // total internal reflection
    }
    let cos_t = (1.0 - sin_t2).sqrt();
    let rs = (nu_i * cos_i - nu_t * cos_t) / (nu_i * cos_i + nu_t * cos_t);
    let rp = (nu_t * cos_i - nu_i * cos_t) / (nu_t * cos_i + nu_i * cos_t);
    0.5 * (rs * rs + rp * rp)
}

/// Decide whether an outgoing packet exits or reflects at the boundary.
///
/// `surface_normal` is the outward unit normal of the crossed face and
/// `direction` must satisfy `direction . normal > 0`. The uniform draw `u`
/// is compared against the Fresnel reflectance.
pub fn boundary_interaction(
    nu_inside: f64,
    nu_outside: f64,
    direction: V3,
    surface_normal: V3,
    u: f64,
) -> BoundaryOutcome {
    let cos_i = dot(direction, surface_normal);
    debug_assert!(cos_i > 0.0, "boundary interaction needs an outgoing ray");
    let reflectance = fresnel_reflectance(nu_inside, nu_outside, cos_i);
    if u < reflectance {
        BoundaryOutcome::Reflect {
            direction: add_scaled(direction, surface_normal, -2.0 * cos_i),
        }
    } else {
        let ratio = nu_inside / nu_outside;
        let sin_t2 = ratio * ratio * (1.0 - cos_i * cos_i);
        let cos_t = (1.0 - sin_t2).max(0.0).sqrt();
        let direction = add_scaled(
            [ratio * direction[0], ratio * direction[1], ratio * direction[2]],
            surface_normal,
            cos_t - ratio * cos_i,
        );
        BoundaryOutcome::Exit { direction }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::vec3::norm;

    #[test]
    fn normal_incidence_closed_form() {
        let r = fresnel_reflectance(1.4, 1.0, 1.0);
        let expected = ((1.4f64 - 1.0) / (1.4 + 1.0)).powi(2);
        assert!((r - expected).abs() < 1e-12, "R = {r}, expected {expected}");
        assert!((expected - 0.027_777_777_777_777_776).abs() < 1e-15);
    }

    #[test]
    fn matched_indices_always_exit() {
        assert!(fresnel_reflectance(1.4, 1.4, 0.3) < 1e-30);
        let out = boundary_interaction(1.4, 1.4, [0.0, 0.0, 1.0], [0.0, 0.0, 1.0], 0.0);
        assert!(matches!(out, BoundaryOutcome::Exit { .. }));
    }

    #[test]
    fn beyond_critical_angle_total_reflection() {
        // critical angle asin(1/1.4) ~ 45.585 degrees
        let critical = (1.0f64 / 1.4).asin();
        let cos_i = (critical + 1e-6).cos();
        assert_eq!(fresnel_reflectance(1.4, 1.0, cos_i), 1.0);
        // Slightly inside the critical angle reflectance is below 1.
        let cos_i = (critical - 1e-3).cos();
        assert!(fresnel_reflectance(1.4, 1.0, cos_i) < 1.0);
    }

    #[test]
    fn reflection_mirrors_the_normal_component() {
        let d = crate::transport::vec3::normalize([0.3, -0.2, 0.93]);
        let n = [0.0, 0.0, 1.0];
        let out = boundary_interaction(1.4, 1.0, d, n, 0.0); // u=0 < R forces reflection
        match out {
            BoundaryOutcome::Reflect { direction } => {
                assert!((direction[0] - d[0]).abs() < 1e-15);
                assert!((direction[1] - d[1]).abs() < 1e-15);
                assert!((direction[2] + d[2]).abs() < 1e-15);
            }
            other => panic!("expected reflection, got {other:?}"),
        }
    }

    #[test]
    fn normal_exit_keeps_direction() {
        let out = boundary_interaction(1.4, 1.0, [0.0, 0.0, 1.0], [0.0, 0.0, 1.0], 0.999);
        match out {
            BoundaryOutcome::Exit { direction } => {
                assert!((norm(direction) - 1.0).abs() < 1e-12);
                assert!((direction[2] - 1.0).abs() < 1e-12);
            }
            other => panic!("expected exit, got {other:?}"),
        }
    }

    #[test]
    fn refraction_obeys_snell() {
        let theta_i: f64 = 0.5;
        let d = [theta_i.sin(), 0.0, theta_i.cos()];
        let out = boundary_interaction(1.4, 1.0, d, [0.0, 0.0, 1.0], 0.999);
        match out {
            BoundaryOutcome::Exit { direction } => {
                assert!((norm(direction) - 1.0).abs() < 1e-12);
                let sin_t = direction[0];
                assert!((sin_t - 1.4 * theta_i.sin()).abs() < 1e-12);
            }
            other => panic!("expected exit, got {other:?}"),
        }
    }
}
