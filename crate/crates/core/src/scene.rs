//! Parametric multi-BS scene: base stations, a convex UE spawn region,
//! straight-line UE trajectories and per-link frequency responses.
//!
//! Each link is a line-of-sight ray plus `n_paths - 1` single-bounce rays off
//! fixed point scatterers. Scatterers depend only on `(seed, bs_index)`, so the
//! position-to-channel map is continuous. Path `p` contributes
//! `a_p e^{j phi_p} r_i(theta_r) t_j(theta_t) e^{-j 2 pi k df tau_p}` where `r`
//! and `t` are half-wavelength ULA responses and `df = bandwidth / Nc`.
//! The common carrier phase `e^{-j 2 pi f_c tau}` is not applied: subcarrier
//! phases are referenced to the first subcarrier.
//!
//! Fixed constants: UE arrays lie along the +x axis, BS arrays are broadside
//! to the spawn-region centroid, antenna heights are not modeled (2D only).

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fingerprint::ChannelTensor;
use crate::geometry::{ConvexPolygon, Point2};
use crate::rng::{rng_for, stream};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Amplitudes use `1 / max(path_length, MIN_PATH_LENGTH)`.
pub const MIN_PATH_LENGTH: f64 = 1.0;

/// Upper bound on the relative Frobenius change of a CFR per centimeter of
/// UE displacement, measured over the desk scene for UEs at least
/// [`LIPSCHITZ_MIN_CLEARANCE`] from every BS. Closer in, the angle of arrival
/// turns quickly and the change grows roughly as `1 / distance`.
pub const CFR_LIPSCHITZ_PER_CM: f64 = 0.05;

pub const LIPSCHITZ_MIN_CLEARANCE: f64 = 5.0;

/// Lower bound on the CIR energy fraction found within one tap of some path
/// delay for off-grid multipath. Sinc leakage of fractional delays keeps this
/// well below 1.
pub const MULTIPATH_TAP_ENERGY_FLOOR: f64 = 0.5;

/// Lower bound on the CIR energy kept by truncating 16 taps past an off-grid
/// LoS delay. Sidelobes at negative delays wrap to the end of the CIR and are
/// cut, which matters most for UEs within a few taps of the BS.
pub const OFF_GRID_TRUNCATION_ENERGY_FLOOR: f64 = 0.85;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub bs_positions: Vec<Point2>,
    /// Defaults to the convex hull of the BS positions.
    pub spawn_polygon: Option<Vec<Point2>>,
    pub n_paths: usize,
    pub carrier_freq_hz: f64,
    pub bandwidth_hz: f64,
    pub n_subcarriers: usize,
    pub n_rx: usize,
    pub n_tx: usize,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl SceneConfig {
    /// Three BSs on a ~60 m triangle with 8x2 antennas and 256 subcarriers.
    pub fn desk() -> Self {
        Self {
            bs_positions: vec![Point2::new(0.0, 0.0), Point2::new(60.0, 0.0), Point2::new(30.0, 52.0)],
            spawn_polygon: None,
            n_paths: 4,
            carrier_freq_hz: 3.6e9,
            bandwidth_hz: 100e6,
            n_subcarriers: 256,
            n_rx: 8,
            n_tx: 2,
            seed: 7,
        }
    }

    pub fn n_bs(&self) -> usize {
        self.bs_positions.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.bs_positions.is_empty() {
            return Err(Error::Config("at least one base station is required".into()));
        }
        for (a, p) in self.bs_positions.iter().enumerate() {
            if !p.is_finite() {
                return Err(Error::Config(format!("BS {a} position is not finite")));
            }
            for q in &self.bs_positions[a + 1..] {
                if p == q {
                    return Err(Error::Config(format!("duplicate BS position {p:?}")));
                }
            }
        }
        if self.n_paths == 0 {
            return Err(Error::Config("n_paths must be at least 1".into()));
        }
        if self.n_subcarriers == 0 || self.n_rx == 0 || self.n_tx == 0 {
            return Err(Error::Config("antenna and subcarrier counts must be at least 1".into()));
        }
        if !(self.bandwidth_hz > 0.0 && self.carrier_freq_hz > 0.0) {
            return Err(Error::Config("carrier frequency and bandwidth must be positive".into()));
        }
        Ok(())
    }

    pub fn subcarrier_spacing_hz(&self) -> f64 {
        self.bandwidth_hz / self.n_subcarriers as f64
    }

    /// Duration of one delay tap after the unitary IDFT.
    pub fn tap_duration_s(&self) -> f64 {
        1.0 / self.bandwidth_hz
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scatterer {
    pub position: Point2,
    pub gain: f64,
    pub phase: f64,
}

/// One propagation path of a link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathComponent {
    pub amplitude: f64,
    pub phase: f64,
    pub delay_s: f64,
    /// `sin` of the arrival angle relative to the BS array broadside.
    pub sin_rx: f64,
    /// `sin` of the departure angle relative to the UE array broadside.
    pub sin_tx: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub user: u32,
    pub positions: Vec<Point2>,
    pub timestamps: Vec<f64>,
    pub speed_mps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySpec {
    pub n_ue: usize,
    pub speed_min: f64,
    pub speed_max: f64,
    pub n_snapshots: usize,
    pub interval_s: f64,
    /// Distinguishes independent trajectory sets drawn from one scene seed.
    pub tag: u64,
}

impl TrajectorySpec {
    pub fn pedestrian(n_ue: usize) -> Self {
        Self { n_ue, speed_min: 1.5, speed_max: 2.5, n_snapshots: 10, interval_s: 1.0, tag: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct Scene {
    cfg: SceneConfig,
    polygon: ConvexPolygon,
    array_axes: Vec<Point2>,
    scatterers: Vec<Vec<Scatterer>>,
}

impl Scene {
    pub fn new(cfg: SceneConfig) -> Result<Self> {
        cfg.validate()?;
        let polygon = match &cfg.spawn_polygon {
            Some(v) => ConvexPolygon::hull(v),
            None => ConvexPolygon::hull(&cfg.bs_positions),
        };
        let centroid = if polygon.area() > 0.0 {
            polygon.centroid()
        } else {
            cfg.bs_positions.iter().fold(Point2::default(), |a, &p| a + p) * (1.0 / cfg.n_bs() as f64)
        };
        let array_axes = cfg
            .bs_positions
            .iter()
            .map(|&bs| {
                let facing = (centroid - bs).unit();
                if facing.norm() == 0.0 {
                    Point2::new(1.0, 0.0)
                } else {
                    Point2::new(-facing.y, facing.x)
                }
            })
            .collect();

        let mut region: Vec<Point2> = polygon.vertices().to_vec();
        region.extend_from_slice(&cfg.bs_positions);
        let bb = crate::geometry::BoundingBox::of(&region).expect("at least one BS");
        let margin = 0.25 * bb.width().max(bb.height()).max(1.0);
        let scatterers = (0..cfg.n_bs())
            .map(|b| {
                let mut rng = rng_for(cfg.seed, stream::SCATTERERS, b as u64);
                (1..cfg.n_paths)
                    .map(|_| Scatterer {
                        position: Point2::new(
                            rng.random_range(bb.min.x - margin..bb.max.x + margin),
                            rng.random_range(bb.min.y - margin..bb.max.y + margin),
                        ),
                        gain: rng.random_range(0.3..0.8),
                        phase: rng.random_range(0.0..2.0 * PI),
                    })
                    .collect()
            })
            .collect();
        Ok(Self { cfg, polygon, array_axes, scatterers })
    }

    pub fn config(&self) -> &SceneConfig {
        &self.cfg
    }

    pub fn n_bs(&self) -> usize {
        self.cfg.n_bs()
    }

    pub fn spawn_polygon(&self) -> &ConvexPolygon {
        &self.polygon
    }

    pub fn scatterers(&self, bs_index: usize) -> &[Scatterer] {
        &self.scatterers[bs_index]
    }

    fn check_bs(&self, bs_index: usize) -> Result<()> {
        if bs_index >= self.n_bs() {
            return Err(Error::arg(format!("bs_index {bs_index} out of range 0..{}", self.n_bs())));
        }
        Ok(())
    }

    /// Line-of-sight path first, then one path per scatterer.
    pub fn paths(&self, ue: Point2, bs_index: usize) -> Result<Vec<PathComponent>> {
        self.check_bs(bs_index)?;
        let bs = self.cfg.bs_positions[bs_index];
        let axis = self.array_axes[bs_index];
        let ue_axis = Point2::new(1.0, 0.0);
        let mut out = Vec::with_capacity(self.cfg.n_paths);
        let los = ue.dist(bs);
        out.push(PathComponent {
            amplitude: 1.0 / los.max(MIN_PATH_LENGTH),
            phase: 0.0,
            delay_s: los / SPEED_OF_LIGHT,
            sin_rx: (ue - bs).unit().dot(axis),
            sin_tx: (bs - ue).unit().dot(ue_axis),
        });
        for s in &self.scatterers[bs_index] {
            let length = s.position.dist(bs) + ue.dist(s.position);
            out.push(PathComponent {
                amplitude: s.gain / length.max(MIN_PATH_LENGTH),
                phase: s.phase,
                delay_s: length / SPEED_OF_LIGHT,
                sin_rx: (s.position - bs).unit().dot(axis),
                sin_tx: (s.position - ue).unit().dot(ue_axis),
            });
        }
        Ok(out)
    }

    /// Frequency response `(Nr x Nt x Nc)` of the link from `ue` to BS `bs_index`.
    pub fn synthesize_cfr(&self, ue: Point2, bs_index: usize) -> Result<ChannelTensor> {
        let paths = self.paths(ue, bs_index)?;
        let (nr, nt, nc) = (self.cfg.n_rx, self.cfg.n_tx, self.cfg.n_subcarriers);
        let df = self.cfg.subcarrier_spacing_hz();
        let mut out = ChannelTensor::zeros((nr, nt, nc));
        let mut freq = vec![Complex64::new(0.0, 0.0); nc];
        for p in &paths {
            let base = Complex64::from_polar(p.amplitude, p.phase);
            for (k, f) in freq.iter_mut().enumerate() {
                *f = Complex64::from_polar(1.0, -2.0 * PI * k as f64 * df * p.delay_s);
            }
            let data = out.data_mut();
            for i in 0..nr {
                let ri = Complex64::from_polar(1.0, -PI * i as f64 * p.sin_rx);
                for j in 0..nt {
                    let tj = Complex64::from_polar(1.0, -PI * j as f64 * p.sin_tx);
                    let w = base * ri * tj;
                    let row = &mut data[(i * nt + j) * nc..(i * nt + j + 1) * nc];
                    for (g, f) in row.iter_mut().zip(&freq) {
                        *g += w * f;
                    }
                }
            }
        }
        Ok(out)
    }

    /// Straight-line constant-speed trajectories fully inside the spawn polygon.
    pub fn sample_trajectories(&self, spec: &TrajectorySpec) -> Result<Vec<Trajectory>> {
        if !(spec.speed_min > 0.0 && spec.speed_max >= spec.speed_min) {
            return Err(Error::arg(format!(
                "speed range [{}, {}] must satisfy 0 < min <= max",
                spec.speed_min, spec.speed_max
            )));
        }
        if spec.n_snapshots == 0 {
            return Err(Error::arg("n_snapshots must be at least 1"));
        }
        if !(spec.interval_s > 0.0) {
            return Err(Error::arg("snapshot interval must be positive"));
        }
        if self.polygon.area() <= 0.0 {
            return Err(Error::Config("spawn polygon is degenerate (zero area)".into()));
        }
        let index_base = spec.tag << 32;
        (0..spec.n_ue)
            .map(|u| {
                let mut rng = rng_for(self.cfg.seed, stream::TRAJECTORIES, index_base | u as u64);
                let speed = if spec.speed_max > spec.speed_min {
                    rng.random_range(spec.speed_min..=spec.speed_max)
                } else {
                    spec.speed_min
                };
                let span = speed * spec.interval_s * (spec.n_snapshots - 1) as f64;
                for _ in 0..1000 {
                    let start = self.polygon.sample_uniform(&mut rng)?;
                    let heading: f64 = rng.random_range(0.0..2.0 * PI);
                    let dir = Point2::new(heading.cos(), heading.sin());
                    if !self.polygon.contains(start + dir * span) {
                        continue;
                    }
                    let step = speed * spec.interval_s;
                    let positions = (0..spec.n_snapshots).map(|s| start + dir * (step * s as f64)).collect();
                    let timestamps = (0..spec.n_snapshots).map(|s| s as f64 * spec.interval_s).collect();
                    return Ok(Trajectory { user: u as u32, positions, timestamps, speed_mps: speed });
                }
                Err(Error::Config(format!(
                    "could not fit a {span:.1} m trajectory inside the spawn polygon"
                )))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn los_scene() -> Scene {
        let mut cfg = SceneConfig::desk();
        cfg.n_paths = 1;
        cfg.n_rx = 4;
        cfg.n_tx = 2;
        cfg.n_subcarriers = 64;
        Scene::new(cfg).unwrap()
    }

    #[test]
    fn los_magnitude_is_equal_across_antennas() {
        let scene = los_scene();
        let g = scene.synthesize_cfr(Point2::new(30.0, 20.0), 1).unwrap();
        for k in 0..64 {
            let m0 = g.get(0, 0, k).norm();
            for i in 0..4 {
                for j in 0..2 {
                    assert!((g.get(i, j, k).norm() - m0).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn doubling_los_distance_halves_magnitude() {
        let scene = los_scene();
        let bs = Point2::new(0.0, 0.0);
        let dir = Point2::new(0.8, 0.6);
        let near = scene.synthesize_cfr(bs + dir * 12.0, 0).unwrap();
        let far = scene.synthesize_cfr(bs + dir * 24.0, 0).unwrap();
        for (a, b) in near.data().iter().zip(far.data()) {
            assert!((b.norm() - 0.5 * a.norm()).abs() < 1e-15);
        }
    }

    #[test]
    fn determinism_and_bs_range() {
        let scene = Scene::new(SceneConfig::desk()).unwrap();
        let again = Scene::new(SceneConfig::desk()).unwrap();
        let p = Point2::new(25.0, 15.0);
        assert_eq!(scene.synthesize_cfr(p, 2).unwrap(), again.synthesize_cfr(p, 2).unwrap());
        assert!(matches!(scene.synthesize_cfr(p, 3), Err(Error::Argument(_))));
    }

    #[test]
    fn scatterers_do_not_depend_on_ue() {
        let scene = Scene::new(SceneConfig::desk()).unwrap();
        let a = scene.paths(Point2::new(20.0, 10.0), 0).unwrap();
        assert_eq!(a.len(), 4);
        assert_eq!(scene.scatterers(0).len(), 3);
        assert_ne!(scene.scatterers(0), scene.scatterers(1));
    }

    #[test]
    fn trajectories_match_contract() {
        let scene = Scene::new(SceneConfig::desk()).unwrap();
        let spec = TrajectorySpec::pedestrian(20);
        let trajs = scene.sample_trajectories(&spec).unwrap();
        assert_eq!(trajs.len(), 20);
        for t in &trajs {
            assert_eq!(t.positions.len(), 10);
            assert!((1.5..=2.5).contains(&t.speed_mps));
            for w in 0..9 {
                let v = t.positions[w].dist(t.positions[w + 1]) / (t.timestamps[w + 1] - t.timestamps[w]);
                assert!((v - t.speed_mps).abs() < 1e-9);
            }
            assert!(t.positions.iter().all(|&p| scene.spawn_polygon().contains(p)));
        }
        assert_eq!(trajs, scene.sample_trajectories(&spec).unwrap());
    }

    #[test]
    fn single_snapshot_accepts_any_speed() {
        let scene = Scene::new(SceneConfig::desk()).unwrap();
        let spec = TrajectorySpec { n_ue: 3, speed_min: 500.0, speed_max: 900.0, n_snapshots: 1, interval_s: 1.0, tag: 0 };
        let trajs = scene.sample_trajectories(&spec).unwrap();
        assert!(trajs.iter().all(|t| t.positions.len() == 1));
    }

    #[test]
    fn trajectory_errors() {
        let scene = Scene::new(SceneConfig::desk()).unwrap();
        let mut spec = TrajectorySpec::pedestrian(1);
        spec.speed_min = 3.0;
        assert!(matches!(scene.sample_trajectories(&spec), Err(Error::Argument(_))));
        let mut cfg = SceneConfig::desk();
        cfg.bs_positions = vec![Point2::new(0.0, 0.0), Point2::new(10.0, 10.0), Point2::new(20.0, 20.0)];
        let flat = Scene::new(cfg).unwrap();
        assert!(matches!(flat.sample_trajectories(&TrajectorySpec::pedestrian(1)), Err(Error::Config(_))));
    }

    #[test]
    fn duplicate_bs_rejected() {
        let mut cfg = SceneConfig::desk();
        cfg.bs_positions[1] = cfg.bs_positions[0];
        assert!(matches!(Scene::new(cfg), Err(Error::Config(_))));
    }

    fn desk_points(scene: &Scene, n: usize, seed: u64) -> Vec<Point2> {
        let mut rng = rng_for(seed, 0xfeed, 0);
        (0..n).map(|_| scene.spawn_polygon().sample_uniform(&mut rng).unwrap()).collect()
    }

    fn relative_change(a: &ChannelTensor, b: &ChannelTensor) -> f64 {
        let diff: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).norm_sqr()).sum();
        diff.sqrt() / a.frobenius_norm()
    }

    #[test]
    fn centimeter_moves_respect_lipschitz_bound() {
        let scene = Scene::new(SceneConfig::desk()).unwrap();
        let mut rng = rng_for(1, 0xfeed, 1);
        let mut worst = 0.0f64;
        let cfg = scene.config().clone();
        for ue in desk_points(&scene, 400, 1) {
            if cfg.bs_positions.iter().any(|bs| bs.dist(ue) < LIPSCHITZ_MIN_CLEARANCE) {
                continue;
            }
            let heading: f64 = rng.random_range(0.0..2.0 * PI);
            let moved = ue + Point2::new(heading.cos(), heading.sin()) * 0.01;
            for b in 0..scene.n_bs() {
                let r = relative_change(&scene.synthesize_cfr(ue, b).unwrap(), &scene.synthesize_cfr(moved, b).unwrap());
                worst = worst.max(r);
            }
        }
        assert!(worst <= CFR_LIPSCHITZ_PER_CM, "worst relative change per cm {worst}");
        eprintln!("worst relative CFR change per cm: {worst:.5}");
    }

    #[test]
    fn distant_positions_are_distinct() {
        use crate::fingerprint::Preprocessor;
        let scene = Scene::new(SceneConfig::desk()).unwrap();
        let pre = Preprocessor::new(256, 32).unwrap();
        let fp = |p: Point2, b: usize| pre.fingerprint(&scene.synthesize_cfr(p, b).unwrap()).unwrap().into_values();
        let dist = |a: &[f64], b: &[f64]| {
            let n: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
            a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt() / n
        };
        let mut rng = rng_for(2, 0xfeed, 2);
        let pts = desk_points(&scene, 60, 2);
        let (mut near, mut far) = (Vec::new(), Vec::new());
        for (i, &p) in pts.iter().enumerate() {
            let q = pts[(i + 1) % pts.len()];
            let heading: f64 = rng.random_range(0.0..2.0 * PI);
            let p_cm = p + Point2::new(heading.cos(), heading.sin()) * 0.01;
            for b in 0..scene.n_bs() {
                let f = fp(p, b);
                near.push(dist(&f, &fp(p_cm, b)));
                if p.dist(q) >= 10.0 {
                    far.push(dist(&f, &fp(q, b)));
                }
            }
        }
        near.sort_by(f64::total_cmp);
        far.sort_by(f64::total_cmp);
        let near_med = near[near.len() / 2];
        let far_min = far[0];
        eprintln!("1 cm median {near_med:.5}, max {:.5}; >=10 m min {far_min:.5}", near[near.len() - 1]);
        assert!(far_min >= 10.0 * near_med);
    }

    #[test]
    fn grid_aligned_los_energy_is_in_one_tap() {
        use crate::fingerprint::cfr_to_cir;
        let mut cfg = SceneConfig::desk();
        cfg.n_paths = 1;
        let scene = Scene::new(cfg.clone()).unwrap();
        let tap_m = SPEED_OF_LIGHT / cfg.bandwidth_hz;
        let bs = cfg.bs_positions[0];
        for m in [7usize, 11, 15] {
            let ue = bs + Point2::new(0.6, 0.8) * (m as f64 * tap_m);
            let cir = cfr_to_cir(&scene.synthesize_cfr(ue, 0).unwrap()).unwrap();
            let (nr, nt, _) = cir.dims();
            let mut near = 0.0;
            for i in 0..nr {
                for j in 0..nt {
                    near += (m - 1..=m + 1).map(|k| cir.get(i, j, k).norm_sqr()).sum::<f64>();
                }
            }
            assert!(near / cir.energy() >= 0.99, "tap {m}: {}", near / cir.energy());
        }
    }

    #[test]
    fn multipath_energy_near_path_delays() {
        use crate::fingerprint::cfr_to_cir;
        let cfg = SceneConfig::desk();
        let scene = Scene::new(cfg.clone()).unwrap();
        let tap_s = cfg.tap_duration_s();
        let mut worst = 1.0f64;
        for ue in desk_points(&scene, 20, 3) {
            for b in 0..scene.n_bs() {
                let cir = cfr_to_cir(&scene.synthesize_cfr(ue, b).unwrap()).unwrap();
                let (nr, nt, nc) = cir.dims();
                let mut keep = vec![false; nc];
                for p in scene.paths(ue, b).unwrap() {
                    let c = (p.delay_s / tap_s).round() as i64;
                    for k in c - 1..=c + 1 {
                        keep[k.rem_euclid(nc as i64) as usize] = true;
                    }
                }
                let mut near = 0.0;
                for i in 0..nr {
                    for j in 0..nt {
                        near += (0..nc).filter(|&k| keep[k]).map(|k| cir.get(i, j, k).norm_sqr()).sum::<f64>();
                    }
                }
                worst = worst.min(near / cir.energy());
            }
        }
        eprintln!("worst multipath energy fraction within one tap of a path delay: {worst:.4}");
        assert!(worst >= MULTIPATH_TAP_ENERGY_FLOOR);
    }

    #[test]
    fn truncation_keeps_grid_aligned_los_energy() {
        use crate::fingerprint::{cfr_to_cir, truncate_cir};
        let mut cfg = SceneConfig::desk();
        cfg.n_paths = 1;
        let scene = Scene::new(cfg.clone()).unwrap();
        let tap_m = SPEED_OF_LIGHT / cfg.bandwidth_hz;
        for b in 0..scene.n_bs() {
            let bs = cfg.bs_positions[b];
            let toward = (scene.spawn_polygon().centroid() - bs).unit();
            for m in [2usize, 5, 9, 14] {
                let ue = bs + toward * (m as f64 * tap_m);
                let cir = cfr_to_cir(&scene.synthesize_cfr(ue, b).unwrap()).unwrap();
                let kept = truncate_cir(&cir, m + 1).unwrap().energy() / cir.energy();
                assert!(kept >= 0.99, "bs {b} tap {m}: {kept}");
            }
        }
    }

    #[test]
    fn truncation_keeps_off_grid_los_energy_above_floor() {
        use crate::fingerprint::{cfr_to_cir, truncate_cir};
        let mut cfg = SceneConfig::desk();
        cfg.n_paths = 1;
        let scene = Scene::new(cfg.clone()).unwrap();
        let mut worst = 1.0f64;
        for ue in desk_points(&scene, 30, 4) {
            for b in 0..scene.n_bs() {
                let cir = cfr_to_cir(&scene.synthesize_cfr(ue, b).unwrap()).unwrap();
                let max_tap = (scene.paths(ue, b).unwrap()[0].delay_s / cfg.tap_duration_s()).ceil() as usize;
                let taps = (max_tap + 16).min(cfg.n_subcarriers);
                let kept = truncate_cir(&cir, taps).unwrap().energy() / cir.energy();
                worst = worst.min(kept);
            }
        }
        eprintln!("worst retained off-grid LoS energy: {worst:.5}");
        assert!(worst >= OFF_GRID_TRUNCATION_ENERGY_FLOOR);
    }
}
