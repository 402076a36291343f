//! Geometry-based single-bounce multipath channel simulator.
//!
//! A [`Scene`] holds base-station sites with uniform linear arrays, point
//! scatterers and mobile single-antenna users in a 2-D plane. The channel of a
//! (site, user) link is the sum of an optional line-of-sight path and one
//! single-bounce path per visible scatterer:
//!
//! `h = Σ_p g_p · a(θ_p)`, with
//! `g_p = ρ_p · (λ / (4π d_p))^(n/2) · exp(-j 2π d_p (1 + δ_b) / λ)`
//!
//! where `d_p` is the total path length, `n` the pathloss exponent and `δ_b`
//! the fractional frequency offset of subcarrier `b`. Two sites observing the
//! same scatterers, or the same user position through LoS, see channels that
//! are non-linearly dependent even though their phases decorrelate.

use std::collections::HashSet;
use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::seed::{rng_for, streams};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("angle {angle} rad is outside the front hemisphere of the array")]
    AngleOutsideHemisphere { angle: f64 },
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("unknown site id `{0}`")]
    UnknownSite(String),
    #[error("unknown user id {0}")]
    UnknownUser(u32),
    #[error("invalid scene: {0}")]
    Invalid(String),
    #[error("invalid scene configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    /// Direction angle of the vector from `self` to `other`.
    pub fn bearing_to(&self, other: &Point) -> f64 {
        (other.y - self.y).atan2(other.x - self.x)
    }

    pub fn offset(&self, dx: f64, dy: f64) -> Point {
        Point::new(self.x + dx, self.y + dy)
    }
}

/// Uniform linear array. `spacing` is measured in carrier wavelengths and
/// `orientation` is the global angle of the array boresight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayGeometry {
    pub num_elements: usize,
    pub spacing: f64,
    pub orientation: f64,
}

impl ArrayGeometry {
    pub fn half_wavelength(num_elements: usize, orientation: f64) -> Self {
        Self {
            num_elements,
            spacing: 0.5,
            orientation,
        }
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        if self.num_elements < 1 {
            return Err(SceneError::Invalid("array needs at least one element".into()));
        }
        if !(self.spacing > 0.0) || !self.spacing.is_finite() {
            return Err(SceneError::Invalid(format!(
                "element spacing must be positive, got {}",
                self.spacing
            )));
        }
        if !(-PI..PI).contains(&self.orientation) {
            return Err(SceneError::Invalid(format!(
                "orientation {} outside [-pi, pi)",
                self.orientation
            )));
        }
        Ok(())
    }

    /// Angle relative to boresight, wrapped to [-pi, pi).
    pub fn relative_angle(&self, global_angle: f64) -> f64 {
        wrap_angle(global_angle - self.orientation)
    }
}

/// Wraps an angle into [-pi, pi).
pub fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w >= PI {
        w - 2.0 * PI
    } else {
        w
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Site {
    pub id: String,
    pub position: Point,
    pub array: ArrayGeometry,
    pub carrier_wavelength: f64,
}

impl Site {
    pub fn num_elements(&self) -> usize {
        self.array.num_elements
    }

    /// Angle of `p` relative to the array boresight.
    pub fn relative_angle_to(&self, p: &Point) -> f64 {
        self.array.relative_angle(self.position.bearing_to(p))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scatterer {
    pub position: Point,
    /// Complex reflection gain, stored as `[re, im]`.
    pub reflectivity: Complex64,
    /// Sites that observe this scatterer; `None` means every site.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sites: Option<Vec<String>>,
}

impl Scatterer {
    pub fn visible_from(&self, site_id: &str) -> bool {
        self.sites
            .as_ref()
            .map_or(true, |s| s.iter().any(|id| id == site_id))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct User {
    pub id: u32,
    pub position: Point,
    /// Meters per slot.
    #[serde(default)]
    pub velocity: Point,
}

impl User {
    pub fn position_at(&self, slot: u64) -> Point {
        let t = slot as f64;
        self.position
            .offset(self.velocity.x * t, self.velocity.y * t)
    }
}

/// Straight wall segment that blocks line-of-sight paths crossing it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub a: Point,
    pub b: Point,
}

impl Segment {
    /// Proper intersection test between this segment and `p`–`q`.
    pub fn intersects(&self, p: &Point, q: &Point) -> bool {
        fn cross(o: &Point, a: &Point, b: &Point) -> f64 {
            (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
        }
        let d1 = cross(&self.a, &self.b, p);
        let d2 = cross(&self.a, &self.b, q);
        let d3 = cross(p, q, &self.a);
        let d4 = cross(p, q, &self.b);
        d1 * d2 < 0.0 && d3 * d4 < 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockedLink {
    pub site: String,
    pub user: u32,
}

/// Per-link line-of-sight policy: a global switch, explicit per-link
/// exclusions and wall segments that block LoS geometrically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LosPolicy {
    pub enabled: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub blocked_links: Vec<BlockedLink>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub blockers: Vec<Segment>,
}

impl Default for LosPolicy {
    fn default() -> Self {
        Self {
            enabled: true,
            blocked_links: Vec::new(),
            blockers: Vec::new(),
        }
    }
}

impl LosPolicy {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }

    pub fn has_los(&self, site: &Site, user_id: u32, user_pos: &Point) -> bool {
        self.enabled
            && !self
                .blocked_links
                .iter()
                .any(|l| l.site == site.id && l.user == user_id)
            && !self
                .blockers
                .iter()
                .any(|w| w.intersects(&site.position, user_pos))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scene {
    pub sites: Vec<Site>,
    #[serde(default)]
    pub scatterers: Vec<Scatterer>,
    #[serde(default)]
    pub users: Vec<User>,
    pub pathloss_exponent: f64,
    pub los_enabled: LosPolicy,
    #[serde(default)]
    pub noise_floor: f64,
    /// Fractional carrier offset between adjacent subcarriers.
    #[serde(default)]
    pub subcarrier_offset: f64,
    pub rng_seed: u64,
}

impl Scene {
    pub fn validate(&self) -> Result<(), SceneError> {
        let mut ids = HashSet::new();
        for s in &self.sites {
            s.array.validate()?;
            if !(s.carrier_wavelength > 0.0) {
                return Err(SceneError::Invalid(format!(
                    "site `{}` has non-positive carrier wavelength",
                    s.id
                )));
            }
            if !ids.insert(s.id.as_str()) {
                return Err(SceneError::Invalid(format!("duplicate site id `{}`", s.id)));
            }
        }
        let mut uids = HashSet::new();
        for u in &self.users {
            if !uids.insert(u.id) {
                return Err(SceneError::Invalid(format!("duplicate user id {}", u.id)));
            }
        }
        for sc in &self.scatterers {
            if sc.reflectivity.norm() > 1.0 + 1e-12 {
                return Err(SceneError::Invalid(format!(
                    "scatterer reflectivity magnitude {} exceeds 1",
                    sc.reflectivity.norm()
                )));
            }
        }
        if !(self.pathloss_exponent > 0.0) {
            return Err(SceneError::Invalid("pathloss exponent must be positive".into()));
        }
        if !(self.noise_floor >= 0.0) {
            return Err(SceneError::Invalid("noise floor must be non-negative".into()));
        }
        Ok(())
    }

    pub fn site(&self, id: &str) -> Result<&Site, SceneError> {
        self.sites
            .iter()
            .find(|s| s.id == id)
            .ok_or_else(|| SceneError::UnknownSite(id.to_string()))
    }

    pub fn user(&self, id: u32) -> Result<&User, SceneError> {
        self.users
            .iter()
            .find(|u| u.id == id)
            .ok_or(SceneError::UnknownUser(id))
    }
}

/// One (site, user, slot, subcarrier) channel vector.
#[derive(Debug, Clone, PartialEq)]
pub struct CsiSample {
    pub site_id: String,
    pub user_id: u32,
    pub slot: u64,
    pub subcarrier: u32,
    pub h: Vec<Complex64>,
}

/// ULA response for a plane wave arriving at `angle` (global frame).
///
/// Element `n` is `exp(j 2π · spacing · n · sin(angle - orientation))`.
pub fn steering_vector(array: &ArrayGeometry, angle: f64) -> Result<Vec<Complex64>, SceneError> {
    let rel = array.relative_angle(angle);
    if rel.abs() > FRAC_PI_2 + 1e-12 {
        return Err(SceneError::AngleOutsideHemisphere { angle });
    }
    Ok(steering_from_sine(array.num_elements, array.spacing, rel.sin()))
}

pub(crate) fn steering_from_sine(m: usize, spacing: f64, sine: f64) -> Vec<Complex64> {
    let phase = 2.0 * PI * spacing * sine;
    (0..m)
        .map(|n| Complex64::from_polar(1.0, phase * n as f64))
        .collect()
}

/// A single propagation path as seen at a site.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathComponent {
    pub gain: Complex64,
    /// Global angle of arrival at the site.
    pub aoa: f64,
    pub length: f64,
    pub los: bool,
}

fn path_gain(
    reflectivity: Complex64,
    length: f64,
    wavelength: f64,
    exponent: f64,
    delta: f64,
) -> Complex64 {
    let amp = (wavelength / (4.0 * PI * length)).powf(exponent / 2.0);
    let phase = -2.0 * PI * length * (1.0 + delta) / wavelength;
    reflectivity * Complex64::from_polar(amp, phase)
}

/// Enumerates the propagation paths of one link. Paths arriving from behind
/// the array are not received.
pub fn path_components(
    scene: &Scene,
    site: &Site,
    user_id: u32,
    user_pos: &Point,
    subcarrier: u32,
) -> Result<Vec<PathComponent>, SceneError> {
    let lambda = site.carrier_wavelength;
    let delta = scene.subcarrier_offset * subcarrier as f64;
    let mut paths = Vec::with_capacity(scene.scatterers.len() + 1);
    if scene.los_enabled.has_los(site, user_id, user_pos) {
        let d = site.position.distance(user_pos);
        if d <= 0.0 {
            return Err(SceneError::DegenerateGeometry(format!(
                "user {user_id} co-located with site `{}`",
                site.id
            )));
        }
        let aoa = site.position.bearing_to(user_pos);
        if site.array.relative_angle(aoa).abs() <= FRAC_PI_2 {
            paths.push(PathComponent {
                gain: path_gain(Complex64::new(1.0, 0.0), d, lambda, scene.pathloss_exponent, delta),
                aoa,
                length: d,
                los: true,
            });
        }
    }
    for (i, sc) in scene.scatterers.iter().enumerate() {
        if !sc.visible_from(&site.id) {
            continue;
        }
        let d1 = site.position.distance(&sc.position);
        let d2 = sc.position.distance(user_pos);
        if d1 <= 0.0 || d2 <= 0.0 {
            return Err(SceneError::DegenerateGeometry(format!(
                "scatterer {i} co-located with site `{}` or user {user_id}",
                site.id
            )));
        }
        let aoa = site.position.bearing_to(&sc.position);
        if site.array.relative_angle(aoa).abs() > FRAC_PI_2 {
            continue;
        }
        paths.push(PathComponent {
            gain: path_gain(sc.reflectivity, d1 + d2, lambda, scene.pathloss_exponent, delta),
            aoa,
            length: d1 + d2,
            los: false,
        });
    }
    Ok(paths)
}

/// Channel between `site_id` and `user_id` at the given slot and subcarrier.
/// User positions advance with their velocity, so slot `t` of a scene equals
/// slot 0 of the scene evolved by `t`.
pub fn generate_channel(
    scene: &Scene,
    site_id: &str,
    user_id: u32,
    slot: u64,
    subcarrier: u32,
) -> Result<CsiSample, SceneError> {
    let site = scene.site(site_id)?;
    let user = scene.user(user_id)?;
    let pos = user.position_at(slot);
    let h = channel_at(scene, site, user_id, &pos, subcarrier)?;
    Ok(CsiSample {
        site_id: site_id.to_string(),
        user_id,
        slot,
        subcarrier,
        h,
    })
}

/// Channel for an explicit user position, bypassing the user table.
pub fn channel_at(
    scene: &Scene,
    site: &Site,
    user_id: u32,
    pos: &Point,
    subcarrier: u32,
) -> Result<Vec<Complex64>, SceneError> {
    let m = site.num_elements();
    let mut h = vec![Complex64::new(0.0, 0.0); m];
    for p in path_components(scene, site, user_id, pos, subcarrier)? {
        let sine = site.array.relative_angle(p.aoa).sin();
        // a_n = exp(j 2π s n sinθ) built by rotation
        let step = Complex64::from_polar(1.0, 2.0 * PI * site.array.spacing * sine);
        let mut rot = p.gain;
        for hn in h.iter_mut() {
            *hn += rot;
            rot *= step;
        }
    }
    Ok(h)
}

/// Advances every user by `dt_slots` times its velocity.
pub fn evolve(scene: &Scene, dt_slots: u64) -> Scene {
    let mut next = scene.clone();
    for u in &mut next.users {
        u.position = u.position_at(dt_slots);
    }
    next
}

/// Planar sampling region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Region {
    Rect { x: [f64; 2], y: [f64; 2] },
    Disc { center: Point, radius: f64 },
    /// Annular sector around `center`; `angle` bounds are global angles.
    Sector {
        center: Point,
        radius: [f64; 2],
        angle: [f64; 2],
    },
    /// Disc of `radius` around one of `centers`, chosen uniformly.
    Hotspots { centers: Vec<Point>, radius: f64 },
}

impl Region {
    pub fn validate(&self) -> Result<(), SceneError> {
        let ok = match self {
            Region::Rect { x, y } => x[0] < x[1] && y[0] < y[1],
            Region::Disc { radius, .. } => *radius > 0.0,
            Region::Sector { radius, angle, .. } => {
                radius[0] >= 0.0 && radius[0] < radius[1] && angle[0] < angle[1]
            }
            Region::Hotspots { centers, radius } => !centers.is_empty() && *radius > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(SceneError::Config(format!("empty region {self:?}")))
        }
    }

    pub fn contains(&self, p: &Point) -> bool {
        match self {
            Region::Rect { x, y } => (x[0]..=x[1]).contains(&p.x) && (y[0]..=y[1]).contains(&p.y),
            Region::Disc { center, radius } => center.distance(p) <= *radius,
            Region::Sector {
                center,
                radius,
                angle,
            } => {
                let r = center.distance(p);
                let a = center.bearing_to(p);
                let within = |a: f64| (angle[0]..=angle[1]).contains(&a);
                (radius[0]..=radius[1]).contains(&r)
                    && (within(a) || within(a + 2.0 * PI) || within(a - 2.0 * PI))
            }
            Region::Hotspots { centers, radius } => centers.iter().any(|c| c.distance(p) <= *radius),
        }
    }

    /// Uniform draw (area-uniform for discs and sectors).
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Point {
        match self {
            Region::Rect { x, y } => Point::new(rng.random_range(x[0]..x[1]), rng.random_range(y[0]..y[1])),
            Region::Disc { center, radius } => {
                let r = radius * rng.random::<f64>().sqrt();
                let a = rng.random_range(-PI..PI);
                center.offset(r * a.cos(), r * a.sin())
            }
            Region::Sector {
                center,
                radius,
                angle,
            } => {
                let (r0, r1) = (radius[0] * radius[0], radius[1] * radius[1]);
                let r = rng.random_range(r0..r1).sqrt();
                let a = rng.random_range(angle[0]..angle[1]);
                center.offset(r * a.cos(), r * a.sin())
            }
            Region::Hotspots { centers, radius } => {
                let c = centers[rng.random_range(0..centers.len())];
                Region::Disc {
                    center: c,
                    radius: *radius,
                }
                .sample(rng)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserDistribution {
    pub count: usize,
    pub region: Region,
    /// Speed range in meters per slot.
    #[serde(default)]
    pub speed: [f64; 2],
    /// Allowed headings in radians; empty means uniform over the circle.
    #[serde(default)]
    pub headings: Vec<f64>,
}

/// Where a scatterer group is placed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScatterPlacement {
    /// Uniform over a fixed region.
    Region { region: Region },
    /// `count` scatterers in a disc around every user.
    AroundUsers { radius: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScattererGroup {
    pub count: usize,
    pub placement: ScatterPlacement,
    /// Reflectivity magnitude range; phases are uniform.
    pub reflectivity: [f64; 2],
    /// When set, positions and gains come from this seed instead of the
    /// scene seed, so the group is a fixed map shared by every draw.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub map_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sites: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub sites: Vec<Site>,
    pub users: UserDistribution,
    #[serde(default)]
    pub scatterer_groups: Vec<ScattererGroup>,
    #[serde(default)]
    pub fixed_scatterers: Vec<Scatterer>,
    pub pathloss_exponent: f64,
    pub los_enabled: LosPolicy,
    #[serde(default)]
    pub noise_floor: f64,
    #[serde(default)]
    pub subcarrier_offset: f64,
}

impl Default for SceneConfig {
    /// One macro site (100 elements) and one small site (20 elements) 500 m
    /// apart on separate carriers, users on a street segment between them and
    /// a cluster of common scatterers within 50 m of every user.
    fn default() -> Self {
        Self {
            sites: vec![
                Site {
                    id: "mbs".into(),
                    position: Point::new(0.0, 0.0),
                    array: ArrayGeometry::half_wavelength(100, FRAC_PI_2),
                    carrier_wavelength: 0.15,
                },
                Site {
                    id: "sbs".into(),
                    position: Point::new(0.0, 500.0),
                    array: ArrayGeometry::half_wavelength(20, -FRAC_PI_2),
                    carrier_wavelength: 0.0857,
                },
            ],
            users: UserDistribution {
                count: 1,
                region: Region::Rect {
                    x: [-150.0, 150.0],
                    y: [445.0, 455.0],
                },
                speed: [0.0, 0.0],
                headings: Vec::new(),
            },
            scatterer_groups: vec![ScattererGroup {
                count: 4,
                placement: ScatterPlacement::AroundUsers { radius: 50.0 },
                reflectivity: [0.1, 0.5],
                map_seed: None,
                sites: None,
            }],
            fixed_scatterers: Vec::new(),
            pathloss_exponent: 2.0,
            los_enabled: LosPolicy::default(),
            noise_floor: 0.0,
            subcarrier_offset: 0.0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), SceneError> {
        self.users.region.validate()?;
        if self.users.speed[0] > self.users.speed[1] || self.users.speed[0] < 0.0 {
            return Err(SceneError::Config("user speed range must be non-negative and ordered".into()));
        }
        for g in &self.scatterer_groups {
            match &g.placement {
                ScatterPlacement::Region { region } => region.validate()?,
                ScatterPlacement::AroundUsers { radius } => {
                    if !(*radius > 0.0) {
                        return Err(SceneError::Config("scatterer radius must be positive".into()));
                    }
                }
            }
            let [lo, hi] = g.reflectivity;
            if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
                return Err(SceneError::Config(format!(
                    "reflectivity range [{lo}, {hi}] must lie within [0, 1]"
                )));
            }
        }
        Ok(())
    }
}

fn draw_scatterer(
    rng: &mut ChaCha8Rng,
    position: Point,
    group: &ScattererGroup,
) -> Scatterer {
    let [lo, hi] = group.reflectivity;
    let mag = if hi > lo { rng.random_range(lo..hi) } else { lo };
    let phase = rng.random_range(-PI..PI);
    Scatterer {
        position,
        reflectivity: Complex64::from_polar(mag, phase),
        sites: group.sites.clone(),
    }
}

/// Draws a scene: users and scatterers uniformly from their configured
/// regions, sites copied verbatim.
pub fn sample_scene(config: &SceneConfig, seed: u64) -> Result<Scene, SceneError> {
    config.validate()?;
    let mut urng = rng_for(seed, streams::SCENE_USERS, 0);
    let mut users = Vec::with_capacity(config.users.count);
    for id in 0..config.users.count {
        let position = config.users.region.sample(&mut urng);
        let [s0, s1] = config.users.speed;
        let speed = if s1 > s0 { urng.random_range(s0..s1) } else { s0 };
        let heading = if config.users.headings.is_empty() {
            urng.random_range(-PI..PI)
        } else {
            config.users.headings[urng.random_range(0..config.users.headings.len())]
        };
        users.push(User {
            id: id as u32,
            position,
            velocity: Point::new(speed * heading.cos(), speed * heading.sin()),
        });
    }

    let mut scatterers = config.fixed_scatterers.clone();
    for (gi, group) in config.scatterer_groups.iter().enumerate() {
        let mut rng = match group.map_seed {
            Some(ms) => rng_for(ms, streams::SCENE_SCATTERERS, gi as u64),
            None => rng_for(seed, streams::SCENE_SCATTERERS, gi as u64),
        };
        match &group.placement {
            ScatterPlacement::Region { region } => {
                for _ in 0..group.count {
                    let p = region.sample(&mut rng);
                    scatterers.push(draw_scatterer(&mut rng, p, group));
                }
            }
            ScatterPlacement::AroundUsers { radius } => {
                for u in &users {
                    let disc = Region::Disc {
                        center: u.position,
                        radius: *radius,
                    };
                    for _ in 0..group.count {
                        let p = disc.sample(&mut rng);
                        scatterers.push(draw_scatterer(&mut rng, p, group));
                    }
                }
            }
        }
    }

    let scene = Scene {
        sites: config.sites.clone(),
        scatterers,
        users,
        pathloss_exponent: config.pathloss_exponent,
        los_enabled: config.los_enabled.clone(),
        noise_floor: config.noise_floor,
        subcarrier_offset: config.subcarrier_offset,
        rng_seed: seed,
    };
    scene.validate()?;
    Ok(scene)
}

#[cfg(test)]
mod tests {
    use super::*;
    macro_rules! assert_close {
        ($a:expr, $b:expr, $tol:expr) => {{
            let (a, b): (f64, f64) = ($a, $b);
            assert!((a - b).abs() <= $tol, "{} vs {} (tol {})", a, b, $tol);
        }};
    }

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn two_site_scene() -> Scene {
        Scene {
            sites: vec![Site {
                id: "a".into(),
                position: Point::new(0.0, 0.0),
                array: ArrayGeometry::half_wavelength(8, FRAC_PI_2),
                carrier_wavelength: 0.1,
            }],
            scatterers: vec![],
            users: vec![User {
                id: 0,
                position: Point::new(30.0, 40.0),
                velocity: Point::new(1.0, 0.5),
            }],
            pathloss_exponent: 2.0,
            los_enabled: LosPolicy::default(),
            noise_floor: 0.0,
            subcarrier_offset: 0.0,
            rng_seed: 1,
        }
    }

    #[test]
    fn test_steering_broadside_is_all_ones() {
        let arr = ArrayGeometry::half_wavelength(4, 0.0);
        let a = steering_vector(&arr, 0.0).unwrap();
        for v in a {
            assert_close!((v - c(1.0, 0.0)).norm(), 0.0, 1e-15);
        }
    }

    #[test]
    fn test_steering_endfire_alternates() {
        let arr = ArrayGeometry::half_wavelength(2, 0.0);
        let a = steering_vector(&arr, FRAC_PI_2).unwrap();
        assert_close!((a[0] - c(1.0, 0.0)).norm(), 0.0, 1e-15);
        assert_close!((a[1] - c(-1.0, 0.0)).norm(), 0.0, 1e-15);
    }

    #[test]
    fn test_steering_thirty_degrees_quarter_turns() {
        let arr = ArrayGeometry::half_wavelength(8, 0.0);
        let a = steering_vector(&arr, PI / 6.0).unwrap();
        let expect = [c(1., 0.), c(0., 1.), c(-1., 0.), c(0., -1.)];
        for (n, v) in a.iter().enumerate() {
            assert_close!((v - expect[n % 4]).norm(), 0.0, 1e-12);
            assert_close!(v.norm(), 1.0, 1e-15);
        }
    }

    #[test]
    fn test_steering_rejects_rear_hemisphere() {
        let arr = ArrayGeometry::half_wavelength(4, 0.0);
        assert!(matches!(
            steering_vector(&arr, 2.0),
            Err(SceneError::AngleOutsideHemisphere { .. })
        ));
        // orientation shifts the hemisphere
        let arr = ArrayGeometry::half_wavelength(4, FRAC_PI_2);
        assert!(steering_vector(&arr, 2.0).is_ok());
    }

    #[test]
    fn test_pure_los_channel_closed_form() {
        let scene = two_site_scene();
        let s = generate_channel(&scene, "a", 0, 0, 0).unwrap();
        let d = 50.0;
        let lambda = 0.1;
        let g = Complex64::from_polar(lambda / (4.0 * PI * d), -2.0 * PI * d / lambda);
        let a = steering_vector(&scene.sites[0].array, Point::new(0.0, 0.0).bearing_to(&Point::new(30.0, 40.0)))
            .unwrap();
        for (hn, an) in s.h.iter().zip(&a) {
            assert!((hn - g * an).norm() <= 1e-12 * g.norm());
        }
    }

    #[test]
    fn test_channel_is_deterministic() {
        let scene = sample_scene(&SceneConfig::default(), 11).unwrap();
        let a = generate_channel(&scene, "mbs", 0, 3, 0).unwrap();
        let b = generate_channel(&scene, "mbs", 0, 3, 0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn test_distance_doubling_halves_norm() {
        let mut scene = two_site_scene();
        let n1: f64 = generate_channel(&scene, "a", 0, 0, 0).unwrap().h.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        scene.users[0].position = Point::new(60.0, 80.0);
        let n2: f64 = generate_channel(&scene, "a", 0, 0, 0).unwrap().h.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        assert_close!(n2 / n1, 0.5, 1e-12);
    }

    #[test]
    fn test_degenerate_geometry_is_an_error() {
        let mut scene = two_site_scene();
        scene.users[0].position = Point::new(0.0, 0.0);
        scene.users[0].velocity = Point::default();
        assert!(matches!(
            generate_channel(&scene, "a", 0, 0, 0),
            Err(SceneError::DegenerateGeometry(_))
        ));
        let mut scene = two_site_scene();
        scene.scatterers.push(Scatterer {
            position: Point::new(30.0, 40.0),
            reflectivity: c(0.5, 0.0),
            sites: None,
        });
        assert!(matches!(
            generate_channel(&scene, "a", 0, 0, 0),
            Err(SceneError::DegenerateGeometry(_))
        ));
    }

    #[test]
    fn test_unknown_ids() {
        let scene = two_site_scene();
        assert!(matches!(generate_channel(&scene, "zz", 0, 0, 0), Err(SceneError::UnknownSite(_))));
        assert!(matches!(generate_channel(&scene, "a", 9, 0, 0), Err(SceneError::UnknownUser(9))));
    }

    #[test]
    fn test_evolve_moves_users_only() {
        let mut scene = two_site_scene();
        scene.users[0].position = Point::new(0.0, 0.0);
        scene.users[0].velocity = Point::new(1.0, 0.0);
        let e = evolve(&scene, 3);
        assert_eq!(e.users[0].position, Point::new(3.0, 0.0));
        assert_eq!(e.sites, scene.sites);
        assert_eq!(evolve(&scene, 0), scene);
    }

    #[test]
    fn test_evolve_is_additive_and_matches_slots() {
        let scene = sample_scene(
            &SceneConfig {
                users: UserDistribution {
                    count: 3,
                    region: Region::Rect { x: [-100.0, 100.0], y: [400.0, 450.0] },
                    speed: [1.0, 2.0],
                    headings: vec![],
                },
                ..SceneConfig::default()
            },
            5,
        )
        .unwrap();
        let twice = evolve(&evolve(&scene, 1), 1);
        let once = evolve(&scene, 2);
        for (a, b) in twice.users.iter().zip(&once.users) {
            assert!(a.position.distance(&b.position) < 1e-9);
            assert_eq!(a.velocity, b.velocity);
        }
        assert_eq!(twice.scatterers, once.scatterers);
        let later = evolve(&scene, 4);
        let a = generate_channel(&scene, "sbs", 1, 4, 0).unwrap().h;
        let b = generate_channel(&later, "sbs", 1, 0, 0).unwrap().h;
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).norm() <= 1e-12 * x.norm().max(1e-300) + 1e-18);
        }
    }

    #[test]
    fn test_sample_scene_reproducible_and_in_region() {
        let cfg = SceneConfig {
            users: UserDistribution {
                count: 50,
                region: Region::Rect { x: [-10.0, 10.0], y: [100.0, 120.0] },
                speed: [0.0, 0.0],
                headings: vec![],
            },
            ..SceneConfig::default()
        };
        let a = sample_scene(&cfg, 3).unwrap();
        assert_eq!(a, sample_scene(&cfg, 3).unwrap());
        assert_ne!(a, sample_scene(&cfg, 4).unwrap());
        assert!(a.users.iter().all(|u| cfg.users.region.contains(&u.position)));
        assert_eq!(a.scatterers.len(), 50 * 4);
    }

    #[test]
    fn test_no_scatterers_single_path() {
        let cfg = SceneConfig {
            scatterer_groups: vec![],
            ..SceneConfig::default()
        };
        let scene = sample_scene(&cfg, 1).unwrap();
        let site = scene.site("sbs").unwrap();
        let u = &scene.users[0];
        let paths = path_components(&scene, site, u.id, &u.position, 0).unwrap();
        assert_eq!(paths.len(), 1);
        assert!(paths[0].los);
    }

    #[test]
    fn test_empty_region_is_config_error() {
        let cfg = SceneConfig {
            users: UserDistribution {
                count: 1,
                region: Region::Rect { x: [1.0, 1.0], y: [0.0, 1.0] },
                speed: [0.0, 0.0],
                headings: vec![],
            },
            ..SceneConfig::default()
        };
        assert!(matches!(sample_scene(&cfg, 0), Err(SceneError::Config(_))));
    }

    #[test]
    fn test_hotspot_region_visits_every_center() {
        let centers = vec![Point::new(0.0, 300.0), Point::new(50.0, 300.0)];
        let region = Region::Hotspots { centers: centers.clone(), radius: 2.0 };
        let mut rng = rng_for(1, streams::SCENE_USERS, 0);
        let mut hits = [0usize; 2];
        for _ in 0..200 {
            let p = region.sample(&mut rng);
            assert!(region.contains(&p));
            let k = centers.iter().position(|c| c.distance(&p) <= 2.0).unwrap();
            hits[k] += 1;
        }
        assert!(hits.iter().all(|&h| h > 60), "{hits:?}");
        assert!(Region::Hotspots { centers: vec![], radius: 1.0 }.validate().is_err());
    }

    #[test]
    fn test_blocker_removes_los() {
        let mut scene = two_site_scene();
        scene.los_enabled.blockers.push(Segment {
            a: Point::new(0.0, 20.0),
            b: Point::new(40.0, 20.0),
        });
        let h = generate_channel(&scene, "a", 0, 0, 0).unwrap().h;
        assert!(h.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn test_map_seed_fixes_group_across_draws() {
        let cfg = SceneConfig {
            scatterer_groups: vec![ScattererGroup {
                count: 5,
                placement: ScatterPlacement::Region {
                    region: Region::Rect { x: [-50.0, 50.0], y: [300.0, 400.0] },
                },
                reflectivity: [0.2, 0.4],
                map_seed: Some(99),
                sites: None,
            }],
            ..SceneConfig::default()
        };
        let a = sample_scene(&cfg, 1).unwrap();
        let b = sample_scene(&cfg, 2).unwrap();
        assert_eq!(a.scatterers, b.scatterers);
        assert_ne!(a.users, b.users);
    }

    #[test]
    fn test_wrap_angle_range() {
        for a in [-7.0, -PI, -1.0, 0.0, PI, 4.0, 10.0] {
            let w = wrap_angle(a);
            assert!((-PI..PI).contains(&w));
            assert_close!(((a - w) / (2.0 * PI)).round() * 2.0 * PI, a - w, 1e-12);
        }
    }
}
