//! Vortex detection from plaquette windings and association of detections over time.

use std::collections::VecDeque;
use std::f64::consts::{PI, TAU};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::field::{current_j, vorticity_field, TangentField};
use crate::geometry::{gauss_curvature, geodesic_distance, min_image, ChartPoint, Surface};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VortexDetection {
    pub position: ChartPoint,
    pub charge: i32,
    /// RMS radius of the vorticity used for the centroid.
    pub confidence: f64,
}

/// Clusters of nonzero-winding cells (8-connectivity) with their summed charge; the
/// position is the centroid of the current's curl dj(u) + κ·area over the cluster and
/// one ring of cells around it. Sphere caps with nonzero winding are reported at the pole.
pub fn detect(u: &TangentField) -> Vec<VortexDetection> {
    detect_with(u, Refine::Centroid)
}

/// Where a detection is placed inside its cluster.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Refine {
    /// Centroid of the positive-signed vorticity over cluster + one ring.
    Centroid,
    /// Zero of the bilinear interpolant of w over the winding cell (single-cell, unit
    /// charge clusters; others keep the centroid). Unlike the centroid it is not pulled
    /// along the background current by the dipolar part ∇|u|² ∧ j of the vorticity.
    Zero,
}

pub fn detect_with(u: &TangentField, refine: Refine) -> Vec<VortexDetection> {
    let g = u.grid;
    let om = vorticity_field(u);
    let j = current_j(u);
    let rows = g.cell_rows();
    let (h1, h2) = g.spacing();
    let kappa = gauss_curvature(&g.surface, ChartPoint::new(PI / 2.0, 0.0));
    let curl = |i: usize, jj: usize| -> f64 {
        let (ip, jp) = (g.next1(i), g.next2(jj));
        j.e1[g.idx(i, jj)] + j.e2[g.idx(ip, jj)] - j.e1[g.idx(i, jp)] - j.e2[g.idx(i, jj)] + kappa * g.cell_area(i)
    };
    let neighbours = |i: usize, jj: usize| -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(8);
        for di in -1i64..=1 {
            for dj in -1i64..=1 {
                if di == 0 && dj == 0 {
                    continue;
                }
                let ii = i as i64 + di;
                let ii = if g.periodic1() {
                    ii.rem_euclid(rows as i64)
                } else if ii < 0 || ii >= rows as i64 {
                    continue;
                } else {
                    ii
                };
                out.push((ii as usize, (jj as i64 + dj).rem_euclid(g.n2 as i64) as usize));
            }
        }
        out
    };
    let centre = |i: usize, jj: usize| ChartPoint::new(g.node(i, jj).x1 + 0.5 * h1, g.node(i, jj).x2 + 0.5 * h2);

    let mut seen = vec![false; rows * g.n2];
    let mut out = Vec::new();
    for start in 0..rows * g.n2 {
        if seen[start] || om.winding(start) == 0 {
            continue;
        }
        let mut cluster = vec![];
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(k) = queue.pop_front() {
            cluster.push(k);
            for (a, b) in neighbours(k / g.n2, k % g.n2) {
                let kk = g.idx(a, b);
                if !seen[kk] && om.winding(kk) != 0 {
                    seen[kk] = true;
                    queue.push_back(kk);
                }
            }
        }
        let charge: i32 = cluster.iter().map(|&k| om.winding(k)).sum();
        if charge == 0 {
            continue;
        }
        let mut region = cluster.clone();
        for &k in &cluster {
            for (a, b) in neighbours(k / g.n2, k % g.n2) {
                region.push(g.idx(a, b));
            }
        }
        region.sort_unstable();
        region.dedup();
        let sign = charge.signum() as f64;
        let seed = centre(start / g.n2, start % g.n2);
        let offset = |p: ChartPoint| -> [f64; 2] {
            match g.surface {
                Surface::FlatTorus { l1, l2 } => [min_image(p.x1 - seed.x1, l1), min_image(p.x2 - seed.x2, l2)],
                Surface::Sphere { .. } => [p.x1 - seed.x1, min_image(p.x2 - seed.x2, TAU)],
            }
        };
        let (mut wsum, mut m1, mut m2) = (0.0, 0.0, 0.0);
        let mut pts = vec![];
        for &k in &region {
            let w = (sign * curl(k / g.n2, k % g.n2)).max(0.0);
            let d = offset(centre(k / g.n2, k % g.n2));
            wsum += w;
            m1 += w * d[0];
            m2 += w * d[1];
            pts.push((w, d));
        }
        let (c1, c2) = if wsum > 0.0 { (m1 / wsum, m2 / wsum) } else { (0.0, 0.0) };
        let mut spread = 0.0;
        for (w, d) in &pts {
            let (a, b) = (d[0] - c1, d[1] - c2);
            let scale2 = match g.surface {
                Surface::FlatTorus { .. } => 1.0,
                Surface::Sphere { radius } => radius * radius,
            };
            let sin2 = match g.surface {
                Surface::FlatTorus { .. } => 1.0,
                Surface::Sphere { .. } => (seed.x1 + c1).sin().powi(2),
            };
            spread += w * scale2 * (a * a + sin2 * b * b);
        }
        let mut position = g.surface.reduce(ChartPoint::new(seed.x1 + c1, seed.x2 + c2));
        if refine == Refine::Zero && cluster.len() == 1 && charge.abs() == 1 {
            if let Some(p) = bilinear_zero(u, cluster[0] / g.n2, cluster[0] % g.n2) {
                position = p;
            }
        }
        out.push(VortexDetection {
            position,
            charge,
            confidence: if wsum > 0.0 { (spread / wsum).sqrt() } else { 0.0 },
        });
    }
    if !g.surface.is_torus() {
        let caps = om.cap_windings();
        for (k, theta) in [(0, 0.0), (1, PI)] {
            if caps[k] != 0 {
                out.push(VortexDetection { position: ChartPoint::new(theta, 0.0), charge: caps[k], confidence: 0.0 });
            }
        }
    }
    out
}

/// Zero of the bilinear interpolant of the cell's corner values, corners transported
/// into the frame of node (i, j). None if Newton leaves the cell's neighbourhood.
fn bilinear_zero(u: &TangentField, i: usize, j: usize) -> Option<ChartPoint> {
    let g = u.grid;
    let (ip, jp) = (g.next1(i), g.next2(j));
    let rot = |ii: usize| Complex64::from_polar(1.0, -g.connection2(ii));
    let w00 = u.at(i, j);
    let w10 = u.at(ip, j);
    let w01 = u.at(i, jp) * rot(i);
    let w11 = u.at(ip, jp) * rot(ip);
    let (mut s, mut t) = (0.5, 0.5);
    for _ in 0..30 {
        let b = w00 * (1.0 - s) * (1.0 - t) + w10 * s * (1.0 - t) + w01 * (1.0 - s) * t + w11 * s * t;
        let bs = (w10 - w00) * (1.0 - t) + (w11 - w01) * t;
        let bt = (w01 - w00) * (1.0 - s) + (w11 - w10) * s;
        let det = bs.re * bt.im - bs.im * bt.re;
        if det.abs() < 1e-300 {
            return None;
        }
        let ds = (b.re * bt.im - b.im * bt.re) / det;
        let dt = (bs.re * b.im - bs.im * b.re) / det;
        s -= ds;
        t -= dt;
        if !(-0.5..=1.5).contains(&s) || !(-0.5..=1.5).contains(&t) {
            return None;
        }
        if ds.abs() + dt.abs() < 1e-13 {
            break;
        }
    }
    let (h1, h2) = g.spacing();
    let n = g.node(i, j);
    Some(g.surface.reduce(ChartPoint::new(n.x1 + s * h1, n.x2 + t * h2)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub t: f64,
    pub detections: Vec<VortexDetection>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub id: usize,
    pub charge: i32,
    pub times: Vec<f64>,
    pub positions: Vec<ChartPoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackSet {
    pub tracks: Vec<Track>,
    /// Time of the last frame before the first collision or disappearance.
    pub t_star: Option<f64>,
    /// Time of the frame where the collision was seen.
    pub collision_frame: Option<f64>,
}

impl TrackSet {
    pub fn position_at(&self, id: usize, t: f64, s: &Surface) -> Option<ChartPoint> {
        let tr = &self.tracks[id];
        interpolate(&tr.times, &tr.positions, t, s)
    }
}

/// Piecewise-geodesic interpolation in the chart (minimal image on the torus).
pub fn interpolate(times: &[f64], pos: &[ChartPoint], t: f64, s: &Surface) -> Option<ChartPoint> {
    let last = *times.last()?;
    if t < times[0] - 1e-12 || t > last + 1e-12 {
        return None;
    }
    let k = times.partition_point(|&x| x <= t).clamp(1, times.len()) - 1;
    if k + 1 >= times.len() {
        return Some(pos[k]);
    }
    let f = (t - times[k]) / (times[k + 1] - times[k]);
    let (p, q) = (pos[k], pos[k + 1]);
    let d = match *s {
        Surface::FlatTorus { l1, l2 } => [min_image(q.x1 - p.x1, l1), min_image(q.x2 - p.x2, l2)],
        Surface::Sphere { .. } => [q.x1 - p.x1, min_image(q.x2 - p.x2, TAU)],
    };
    Some(s.reduce(ChartPoint::new(p.x1 + f * d[0], p.x2 + f * d[1])))
}

fn canonical_order(d: &mut [VortexDetection]) {
    d.sort_by(|a, b| {
        (a.charge, a.position.x1, a.position.x2)
            .partial_cmp(&(b.charge, b.position.x1, b.position.x2))
            .expect("finite positions")
    });
}

/// Greedy nearest matching among equal charges. A frame where two tracks come within
/// `collision_radius`, or where the detection count changes, ends the tracks.
pub fn track(frames: &[Frame], s: &Surface, collision_radius: f64) -> TrackSet {
    let mut set = TrackSet { tracks: vec![], t_star: None, collision_frame: None };
    let Some(first) = frames.first() else { return set };
    let mut init = first.detections.clone();
    canonical_order(&mut init);
    set.tracks = init
        .iter()
        .enumerate()
        .map(|(id, d)| Track { id, charge: d.charge, times: vec![first.t], positions: vec![d.position] })
        .collect();
    let n = set.tracks.len();
    if n == 0 {
        return set;
    }
    let mut prev_t = first.t;
    for fr in &frames[1..] {
        let mut det = fr.detections.clone();
        canonical_order(&mut det);
        if det.len() != n {
            set.t_star = Some(prev_t);
            set.collision_frame = Some(fr.t);
            return set;
        }
        let predicted: Vec<ChartPoint> = set
            .tracks
            .iter()
            .map(|tr| {
                let m = tr.positions.len();
                if m < 2 {
                    return tr.positions[m - 1];
                }
                let (p, q) = (tr.positions[m - 2], tr.positions[m - 1]);
                let f = (fr.t - tr.times[m - 1]) / (tr.times[m - 1] - tr.times[m - 2]);
                let d = match *s {
                    Surface::FlatTorus { l1, l2 } => [min_image(q.x1 - p.x1, l1), min_image(q.x2 - p.x2, l2)],
                    Surface::Sphere { .. } => [q.x1 - p.x1, min_image(q.x2 - p.x2, TAU)],
                };
                s.reduce(ChartPoint::new(q.x1 + f * d[0], q.x2 + f * d[1]))
            })
            .collect();
        let mut cost = vec![vec![f64::INFINITY; n]; n];
        for (a, tr) in set.tracks.iter().enumerate() {
            let last = *tr.positions.last().expect("nonempty track");
            for (b, d) in det.iter().enumerate() {
                if d.charge == tr.charge {
                    cost[a][b] = geodesic_distance(s, last, d.position);
                }
            }
            let mut row: Vec<f64> = cost[a].iter().cloned().filter(|c| c.is_finite()).collect();
            row.sort_by(|x, y| x.partial_cmp(y).expect("finite"));
            if row.len() >= 2 && row[1] <= 1.1 * row[0] {
                log::info!("ambiguous match for track {a} at t = {}, using extrapolation", fr.t);
                for (b, d) in det.iter().enumerate() {
                    if d.charge == tr.charge {
                        cost[a][b] = geodesic_distance(s, predicted[a], d.position);
                    }
                }
            }
        }
        let mut pairs: Vec<(f64, usize, usize)> =
            (0..n).flat_map(|a| (0..n).map(move |b| (a, b))).map(|(a, b)| (cost[a][b], a, b)).collect();
        pairs.retain(|p| p.0.is_finite());
        pairs.sort_by(|x, y| x.partial_cmp(y).expect("finite"));
        let mut assign = vec![usize::MAX; n];
        let mut used = vec![false; n];
        for (_, a, b) in pairs {
            if assign[a] == usize::MAX && !used[b] {
                assign[a] = b;
                used[b] = true;
            }
        }
        if assign.contains(&usize::MAX) {
            set.t_star = Some(prev_t);
            set.collision_frame = Some(fr.t);
            return set;
        }
        let mut close = false;
        for a in 0..n {
            for b in a + 1..n {
                if geodesic_distance(s, det[assign[a]].position, det[assign[b]].position) < collision_radius {
                    close = true;
                }
            }
        }
        if close {
            set.t_star = Some(prev_t);
            set.collision_frame = Some(fr.t);
            return set;
        }
        for (a, tr) in set.tracks.iter_mut().enumerate() {
            tr.times.push(fr.t);
            tr.positions.push(det[assign[a]].position);
        }
        prev_t = fr.t;
    }
    set
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::canonical::{reconstruct_canonical, well_prepared_initial};
    use crate::field::GridSpec;
    use crate::renorm::{nearest_lattice_xi, HarmonicCoeffs, VortexConfig};
    use num_complex::Complex64;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn torus() -> Surface {
        Surface::torus(1.0, 1.0).unwrap()
    }

    #[test]
    fn canonical_dipole_detected_within_h() {
        let g = GridSpec::new(torus(), 128, 128).unwrap();
        let c = VortexConfig::new(vec![ChartPoint::new(0.3, 0.52), ChartPoint::new(0.7, 0.49)], vec![1, -1]);
        let xi = nearest_lattice_xi(&c, &g.surface, &HarmonicCoeffs::zeros(&g.surface)).unwrap();
        let mut d = detect(&reconstruct_canonical(&c, &xi, &g).unwrap());
        d.sort_by_key(|x| -x.charge);
        assert_eq!(d.len(), 2);
        assert_eq!((d[0].charge, d[1].charge), (1, -1));
        for (det, a) in d.iter().zip(&c.a) {
            assert!(geodesic_distance(&g.surface, det.position, *a) <= g.max_edge());
        }
    }

    #[test]
    fn constant_field_has_no_vortices() {
        let g = GridSpec::new(torus(), 32, 32).unwrap();
        assert!(detect(&TangentField::constant(g, Complex64::new(0.3, 0.4))).is_empty());
    }

    #[test]
    fn sphere_pair_total_charge_two() {
        let g = GridSpec::new(Surface::sphere(1.0).unwrap(), 64, 128).unwrap();
        let c = VortexConfig::new(vec![ChartPoint::new(0.7, 1.0), ChartPoint::new(2.0, 5.0)], vec![1, 1]);
        let d = detect(&reconstruct_canonical(&c, &HarmonicCoeffs::empty(), &g).unwrap());
        assert_eq!(d.iter().map(|x| x.charge).sum::<i32>(), 2);
        assert_eq!(d.len(), 2);
        for a in &c.a {
            assert!(d.iter().any(|x| geodesic_distance(&g.surface, x.position, *a) <= g.max_edge()));
        }
    }

    #[test]
    fn well_prepared_positions_within_h_plus_half_eps() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let g = GridSpec::new(torus(), 128, 128).unwrap();
        let eps = 0.04;
        let mut done = 0;
        while done < 20 {
            let c = VortexConfig::new(
                (0..4).map(|_| ChartPoint::new(rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0))).collect(),
                vec![1, -1, 1, -1],
            );
            if c.min_separation(&g.surface) < 8.0 * eps {
                continue;
            }
            done += 1;
            let xi = nearest_lattice_xi(&c, &g.surface, &HarmonicCoeffs::zeros(&g.surface)).unwrap();
            let d = detect(&well_prepared_initial(&c, &xi, eps, &g).unwrap());
            assert_eq!(d.len(), 4);
            for (a, &q) in c.a.iter().zip(&c.d) {
                let best = d
                    .iter()
                    .filter(|x| x.charge == q)
                    .map(|x| geodesic_distance(&g.surface, x.position, *a))
                    .fold(f64::INFINITY, f64::min);
                assert!(best <= g.max_edge() + 0.5 * eps, "{best}");
            }
        }
    }

    #[test]
    fn zero_refinement_is_sub_cell() {
        let g = GridSpec::new(torus(), 128, 128).unwrap();
        let eps = 0.06;
        let mut worst: f64 = 0.0;
        for k in 0..8 {
            let off = k as f64 / 8.0 * g.max_edge();
            let c = VortexConfig::new(
                vec![ChartPoint::new(0.3 + off, 0.51), ChartPoint::new(0.7, 0.49 + 0.5 * off)],
                vec![1, -1],
            );
            let xi = nearest_lattice_xi(&c, &g.surface, &HarmonicCoeffs::zeros(&g.surface)).unwrap();
            let u = well_prepared_initial(&c, &xi, eps, &g).unwrap();
            for d in detect_with(&u, Refine::Zero) {
                let a = if d.charge > 0 { c.a[0] } else { c.a[1] };
                worst = worst.max(geodesic_distance(&g.surface, d.position, a));
            }
        }
        assert!(worst < 0.05 * g.max_edge(), "{worst} vs h = {}", g.max_edge());
    }

    fn det(x: f64, y: f64, q: i32) -> VortexDetection {
        VortexDetection { position: ChartPoint::new(x, y), charge: q, confidence: 0.0 }
    }

    #[test]
    fn static_frames_give_constant_tracks() {
        let frames: Vec<Frame> =
            (0..5).map(|k| Frame { t: k as f64, detections: vec![det(0.2, 0.2, 1), det(0.7, 0.6, -1)] }).collect();
        let ts = track(&frames, &torus(), 0.1);
        assert_eq!(ts.t_star, None);
        assert_eq!(ts.tracks.len(), 2);
        for tr in &ts.tracks {
            assert_eq!(tr.positions.len(), 5);
            assert!(tr.positions.windows(2).all(|w| w[0] == w[1]));
        }
    }

    #[test]
    fn converging_dipole_sets_collision_time() {
        let frames: Vec<Frame> = (0..10)
            .map(|k| {
                let r = 0.4 - 0.04 * k as f64;
                Frame { t: 0.1 * k as f64, detections: vec![det(0.5 - r / 2.0, 0.5, 1), det(0.5 + r / 2.0, 0.5, -1)] }
            })
            .collect();
        // separations 0.4, 0.36, ...; first below 0.25 is frame 4 (0.24)
        let ts = track(&frames, &torus(), 0.25);
        assert!((ts.collision_frame.unwrap() - 0.4).abs() < 1e-12);
        assert!((ts.t_star.unwrap() - 0.3).abs() < 1e-12);
        assert!(ts.tracks.iter().all(|t| t.times.len() == 4));
    }

    #[test]
    fn disappearance_ends_tracks() {
        let frames = vec![
            Frame { t: 0.0, detections: vec![det(0.2, 0.2, 1), det(0.7, 0.6, -1)] },
            Frame { t: 1.0, detections: vec![] },
        ];
        assert_eq!(track(&frames, &torus(), 0.01).t_star, Some(0.0));
    }

    #[test]
    fn tracking_is_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let base: Vec<Frame> = (0..6)
            .map(|k| {
                let t = k as f64 * 0.01;
                Frame {
                    t,
                    detections: vec![
                        det(0.1 + t, 0.2, 1),
                        det(0.5, 0.3 + t, 1),
                        det(0.8 - t, 0.7, -1),
                        det(0.3, 0.9 - t, -1),
                    ],
                }
            })
            .collect();
        let mut shuffled = base.clone();
        for f in &mut shuffled {
            f.detections.shuffle(&mut rng);
        }
        assert_eq!(track(&base, &torus(), 0.05), track(&shuffled, &torus(), 0.05));
        let ts = track(&base, &torus(), 0.05);
        for tr in &ts.tracks {
            assert!(tr.times.len() == 6);
        }
    }

    #[test]
    fn interpolation_wraps() {
        let s = torus();
        let p = interpolate(&[0.0, 1.0], &[ChartPoint::new(0.95, 0.5), ChartPoint::new(0.05, 0.5)], 0.5, &s).unwrap();
        assert!(p.x1.abs() < 1e-12 || (p.x1 - 1.0).abs() < 1e-12);
    }
}
