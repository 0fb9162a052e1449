//! Planar three-link (shank, thigh, upper body) rigid-body model.
//!
//! Angles: `q[0]` is the shank angle measured from the horizontal ground,
//! `q[1]` and `q[2]` are measured relative to the previous link. The ankle is
//! pinned to the ground. Link inertias are taken about each link's center of
//! mass.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

pub const STANDARD_GRAVITY: f64 = 9.81;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkParams {
    pub mass: f64,
    pub length: f64,
    /// Distance from the proximal (lower) joint to the center of mass.
    pub com_distance: f64,
    /// Moment of inertia about the center of mass.
    pub inertia: f64,
}

impl LinkParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.mass > 0.0
            && self.length > 0.0
            && self.inertia >= 0.0
            && self.com_distance > 0.0
            && self.com_distance <= self.length
            && [self.mass, self.length, self.com_distance, self.inertia]
                .iter()
                .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("bad link parameters {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BodyParams {
    /// Shank, thigh, upper body.
    pub links: [LinkParams; 3],
    #[serde(default = "default_gravity")]
    pub gravity_accel: f64,
}

fn default_gravity() -> f64 {
    STANDARD_GRAVITY
}

/// Segment fractions for one body (Winter's sagittal table).
///
/// Mass fractions are of total body mass, length fractions of standing height,
/// COM fractions of segment length measured from the lower joint, radius of
/// gyration fractions of segment length about the COM. Shank and thigh carry
/// both legs.
#[derive(Debug, Clone, Copy)]
struct SegmentFractions {
    mass: f64,
    length: f64,
    com_from_lower: f64,
    gyration: f64,
}

const WINTER_SEGMENTS: [SegmentFractions; 3] = [
    // leg: femoral condyles / medial malleolus, 0.0465 per leg
    SegmentFractions {
        mass: 2.0 * 0.0465,
        length: 0.285 - 0.039,
        com_from_lower: 0.567,
        gyration: 0.302,
    },
    // thigh: greater trochanter / femoral condyles, 0.100 per leg
    SegmentFractions {
        mass: 2.0 * 0.100,
        length: 0.530 - 0.285,
        com_from_lower: 0.567,
        gyration: 0.323,
    },
    // head, arms and trunk: greater trochanter / glenohumeral joint
    SegmentFractions {
        mass: 0.678,
        length: 0.818 - 0.530,
        com_from_lower: 0.626,
        gyration: 0.496,
    },
];

/// Human segment parameters from total mass (kg) and standing height (m).
pub fn anthropometry(total_mass: f64, height: f64) -> Result<BodyParams> {
    if !(total_mass > 0.0 && height > 0.0 && total_mass.is_finite() && height.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "anthropometry needs positive mass and height, got {total_mass} kg, {height} m"
        )));
    }
    let links = WINTER_SEGMENTS.map(|f| {
        let mass = f.mass * total_mass;
        let length = f.length * height;
        let radius = f.gyration * length;
        LinkParams {
            mass,
            length,
            com_distance: f.com_from_lower * length,
            inertia: mass * radius * radius,
        }
    });
    Ok(BodyParams {
        links,
        gravity_accel: STANDARD_GRAVITY,
    })
}

impl BodyParams {
    /// Default exoskeleton frame: shank 2.5 kg, thigh 3.5 kg, back frame 5 kg,
    /// link lengths matched to the wearer, uniform-rod inertia.
    pub fn exoskeleton_for(wearer: &BodyParams) -> BodyParams {
        Self::rods(
            [2.5, 3.5, 5.0],
            [
                wearer.links[0].length,
                wearer.links[1].length,
                wearer.links[2].length,
            ],
        )
    }

    /// Uniform rods with COM at mid-length and inertia m·L²/12.
    pub fn rods(masses: [f64; 3], lengths: [f64; 3]) -> BodyParams {
        let mut links = [LinkParams {
            mass: 1.0,
            length: 1.0,
            com_distance: 0.5,
            inertia: 0.0,
        }; 3];
        for i in 0..3 {
            links[i] = LinkParams {
                mass: masses[i],
                length: lengths[i],
                com_distance: 0.5 * lengths[i],
                inertia: masses[i] * lengths[i] * lengths[i] / 12.0,
            };
        }
        BodyParams {
            links,
            gravity_accel: STANDARD_GRAVITY,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for link in &self.links {
            link.validate()?;
        }
        if !(self.gravity_accel > 0.0 && self.gravity_accel.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "gravity_accel must be positive, got {}",
                self.gravity_accel
            )));
        }
        Ok(())
    }

    pub fn total_mass(&self) -> f64 {
        self.links.iter().map(|l| l.mass).sum()
    }

    /// Constant coefficients of the inertia matrix, see [`inertia_matrix`].
    fn inertia_coefficients(&self) -> InertiaCoefficients {
        let [l1, l2, l3] = self.links;
        InertiaCoefficients {
            a1: l1.inertia + l1.mass * l1.com_distance.powi(2) + (l2.mass + l3.mass) * l1.length.powi(2),
            a2: l2.inertia + l2.mass * l2.com_distance.powi(2) + l3.mass * l2.length.powi(2),
            a3: l3.inertia + l3.mass * l3.com_distance.powi(2),
            b12: (l2.mass * l2.com_distance + l3.mass * l2.length) * l1.length,
            b13: l3.mass * l3.com_distance * l1.length,
            b23: l3.mass * l3.com_distance * l2.length,
        }
    }
}

struct InertiaCoefficients {
    a1: f64,
    a2: f64,
    a3: f64,
    b12: f64,
    b13: f64,
    b23: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointState {
    pub q: Vec3,
    pub qd: Vec3,
}

/// Joint envelope; the simulation aborts outside it.
pub const JOINT_LIMIT: f64 = std::f64::consts::PI;

impl JointState {
    pub fn new(q: Vec3, qd: Vec3) -> Self {
        Self { q, qd }
    }

    pub fn at_rest(q: Vec3) -> Self {
        Self { q, qd: Vec3::zeros() }
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(self.qd.iter()).all(|v| v.is_finite())
    }

    /// First joint outside `|q| <= π`, if any.
    pub fn limit_violation(&self) -> Option<(usize, f64)> {
        self.q
            .iter()
            .enumerate()
            .find(|(_, a)| !(a.abs() <= JOINT_LIMIT))
            .map(|(i, a)| (i, *a))
    }
}

/// `value(t) = Σ amplitude·sin(ω t + phase)`, applied to all three joints.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceSpec {
    #[serde(default)]
    pub terms: Vec<SineTerm>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SineTerm {
    pub amplitude: f64,
    pub angular_frequency: f64,
    #[serde(default)]
    pub phase: f64,
}

impl DisturbanceSpec {
    pub fn none() -> Self {
        Self::default()
    }

    /// `5 sin(t) + 0.2 sin(1000 t + π/2)` N·m.
    pub fn squat_test() -> Self {
        Self {
            terms: vec![
                SineTerm {
                    amplitude: 5.0,
                    angular_frequency: 1.0,
                    phase: 0.0,
                },
                SineTerm {
                    amplitude: 0.2,
                    angular_frequency: 1000.0,
                    phase: std::f64::consts::FRAC_PI_2,
                },
            ],
        }
    }

    pub fn value(&self, t: f64) -> f64 {
        self.terms
            .iter()
            .map(|s| s.amplitude * (s.angular_frequency * t + s.phase).sin())
            .sum()
    }

    pub fn vector(&self, t: f64) -> Vec3 {
        Vec3::repeat(self.value(t))
    }
}

/// Joint-space inertia matrix of the planar 3R chain.
pub fn inertia_matrix(params: &BodyParams, q: &Vec3) -> Mat3 {
    let k = params.inertia_coefficients();
    let c2 = q[1].cos();
    let c3 = q[2].cos();
    let c23 = (q[1] + q[2]).cos();

    let m33 = k.a3;
    let m23 = k.a3 + k.b23 * c3;
    let m22 = k.a2 + k.a3 + 2.0 * k.b23 * c3;
    let m13 = k.a3 + k.b23 * c3 + k.b13 * c23;
    let m12 = k.a2 + k.a3 + 2.0 * k.b23 * c3 + k.b12 * c2 + k.b13 * c23;
    let m11 = k.a1 + k.a2 + k.a3 + 2.0 * (k.b12 * c2 + k.b13 * c23 + k.b23 * c3);

    Mat3::new(m11, m12, m13, m12, m22, m23, m13, m23, m33)
}

/// Partial derivatives ∂M/∂q_i. `M` does not depend on `q[0]`.
fn inertia_partials(params: &BodyParams, q: &Vec3) -> [Mat3; 3] {
    let k = params.inertia_coefficients();
    let s2 = q[1].sin();
    let s3 = q[2].sin();
    let s23 = (q[1] + q[2]).sin();

    // d/dq2: c2 -> -s2, c23 -> -s23
    let d2_12 = -k.b12 * s2 - k.b13 * s23;
    let d2_13 = -k.b13 * s23;
    let d2_11 = -2.0 * (k.b12 * s2 + k.b13 * s23);
    let dm_dq2 = Mat3::new(d2_11, d2_12, d2_13, d2_12, 0.0, 0.0, d2_13, 0.0, 0.0);

    // d/dq3: c3 -> -s3, c23 -> -s23
    let d3_23 = -k.b23 * s3;
    let d3_22 = -2.0 * k.b23 * s3;
    let d3_13 = -k.b23 * s3 - k.b13 * s23;
    let d3_12 = -2.0 * k.b23 * s3 - k.b13 * s23;
    let d3_11 = -2.0 * (k.b13 * s23 + k.b23 * s3);
    let dm_dq3 = Mat3::new(d3_11, d3_12, d3_13, d3_12, d3_22, d3_23, d3_13, d3_23, 0.0);

    [Mat3::zeros(), dm_dq2, dm_dq3]
}

/// Coriolis/centrifugal matrix from Christoffel symbols of the first kind.
pub fn coriolis_matrix(params: &BodyParams, q: &Vec3, qd: &Vec3) -> Mat3 {
    let dm = inertia_partials(params, q);
    let mut c = Mat3::zeros();
    for k in 0..3 {
        for j in 0..3 {
            let mut ckj = 0.0;
            for i in 0..3 {
                let gamma = 0.5 * (dm[i][(k, j)] + dm[j][(k, i)] - dm[k][(i, j)]);
                ckj += gamma * qd[i];
            }
            c[(k, j)] = ckj;
        }
    }
    c
}

/// Gravitational joint torques `∂V/∂q`.
pub fn gravity_vector(params: &BodyParams, q: &Vec3) -> Vec3 {
    let [l1, l2, l3] = params.links;
    let g = params.gravity_accel;
    let c1 = q[0].cos();
    let c12 = (q[0] + q[1]).cos();
    let c123 = (q[0] + q[1] + q[2]).cos();

    let hip = l3.mass * g * l3.com_distance * c123;
    let knee = l2.mass * g * l2.com_distance * c12 + l3.mass * g * l2.length * c12 + hip;
    let ankle = knee + l1.mass * g * l1.com_distance * c1 + (l2.mass + l3.mass) * g * l1.length * c1;
    Vec3::new(ankle, knee, hip)
}

/// Potential energy relative to the ankle height.
pub fn potential_energy(params: &BodyParams, q: &Vec3) -> f64 {
    let [l1, l2, l3] = params.links;
    let s1 = q[0].sin();
    let s12 = (q[0] + q[1]).sin();
    let s123 = (q[0] + q[1] + q[2]).sin();
    let heights = [
        l1.com_distance * s1,
        l1.length * s1 + l2.com_distance * s12,
        l1.length * s1 + l2.length * s12 + l3.com_distance * s123,
    ];
    params.gravity_accel * (l1.mass * heights[0] + l2.mass * heights[1] + l3.mass * heights[2])
}

pub fn kinetic_energy(params: &BodyParams, state: &JointState) -> f64 {
    0.5 * state.qd.dot(&(inertia_matrix(params, &state.q) * state.qd))
}

/// Joint accelerations from `M q̈ + C q̇ + G + d = u`.
pub fn forward_dynamics(
    params: &BodyParams,
    state: &JointState,
    total_torque: &Vec3,
    disturbance: &Vec3,
) -> Vec3 {
    let m = inertia_matrix(params, &state.q);
    let c = coriolis_matrix(params, &state.q, &state.qd);
    let g = gravity_vector(params, &state.q);
    let rhs = total_torque - c * state.qd - g - disturbance;
    match m.cholesky() {
        Some(chol) => chol.solve(&rhs),
        // only reachable with non-finite input; NaN propagates to the caller's check
        None => Vec3::repeat(f64::NAN),
    }
}

/// One classical RK4 step with the torque held over `[t, t + dt]` and the
/// disturbance sampled at the stage times.
pub fn rk4_step(
    params: &BodyParams,
    state: &JointState,
    torque_hold: &Vec3,
    disturbance: &DisturbanceSpec,
    t: f64,
    dt: f64,
) -> Result<JointState> {
    let next = rk4_generic(state, t, dt, |s, ts| {
        forward_dynamics(params, s, torque_hold, &disturbance.vector(ts))
    });
    if next.is_finite() {
        Ok(next)
    } else {
        Err(Error::IntegrationDiverged { t: t + dt })
    }
}

/// RK4 for `q̇ = qd, q̇d = accel(state, t)`.
pub(crate) fn rk4_generic<F>(state: &JointState, t: f64, dt: f64, accel: F) -> JointState
where
    F: Fn(&JointState, f64) -> Vec3,
{
    let half = 0.5 * dt;
    let k1v = state.qd;
    let k1a = accel(state, t);

    let s2 = JointState::new(state.q + half * k1v, state.qd + half * k1a);
    let k2v = s2.qd;
    let k2a = accel(&s2, t + half);

    let s3 = JointState::new(state.q + half * k2v, state.qd + half * k2a);
    let k3v = s3.qd;
    let k3a = accel(&s3, t + half);

    let s4 = JointState::new(state.q + dt * k3v, state.qd + dt * k3a);
    let k4v = s4.qd;
    let k4a = accel(&s4, t + dt);

    JointState::new(
        state.q + dt / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v),
        state.qd + dt / 6.0 * (k1a + 2.0 * k2a + 2.0 * k3a + k4a),
    )
}
