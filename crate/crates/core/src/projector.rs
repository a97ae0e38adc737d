//! Joseph-style ray-driven projector and its exact transpose.
//!
//! Each source-to-bin ray is sampled once per image column (for mostly
//! horizontal rays) or once per row (for mostly vertical rays). At each
//! sample the image is linearly interpolated between the two neighbouring
//! pixels across the ray, and the sample is weighted by the path length
//! per column/row step. Pixels outside the image read as zero.
//!
//! `backproject` walks the identical traversal and scatters instead of
//! gathers, so it is the transpose of `project` to rounding error.

use crate::error::Result;
use crate::geometry::{FanBeamGeometry, Image, Sinogram};

/// Forward projection `A x`.
pub fn project(img: &Image, geom: &FanBeamGeometry) -> Result<Sinogram> {
    img.check_dims("project", geom.rows(), geom.cols())?;
    let mut sino = Sinogram::for_geometry(geom);
    let nb = geom.num_bins;
    let pixels = img.data();
    for view in 0..geom.num_angles {
        let out = &mut sino.data_mut()[view * nb..(view + 1) * nb];
        for (bin, value) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            trace_ray(geom, view, bin, |idx, w| acc += w * pixels[idx]);
            *value = acc;
        }
    }
    Ok(sino)
}

/// Transposed projection `A^T y`.
pub fn backproject(sino: &Sinogram, geom: &FanBeamGeometry) -> Result<Image> {
    sino.check_geometry("backproject", geom)?;
    let mut img = Image::zeros(geom.rows(), geom.cols());
    let pixels = img.data_mut();
    for view in 0..geom.num_angles {
        for (bin, &s) in sino.row(view).iter().enumerate() {
            if s == 0.0 {
                continue;
            }
            trace_ray(geom, view, bin, |idx, w| pixels[idx] += w * s);
        }
    }
    Ok(img)
}

/// Calls `visit(pixel_index, weight)` for every nonzero coefficient of the
/// system-matrix row belonging to `(view, bin)`. The same pixel may be
/// visited more than once.
#[inline]
pub(crate) fn trace_ray(
    geom: &FanBeamGeometry,
    view: usize,
    bin: usize,
    mut visit: impl FnMut(usize, f64),
) {
    let (rows, cols) = (geom.rows(), geom.cols());
    let p = geom.pixel_size;
    let beta = geom.angle(view);
    let (sin_b, cos_b) = beta.sin_cos();
    let sx = geom.source_axis_dist * cos_b;
    let sy = geom.source_axis_dist * sin_b;
    let u = geom.bin_center(bin);
    let px = -geom.axis_detector_dist * cos_b - u * sin_b;
    let py = -geom.axis_detector_dist * sin_b + u * cos_b;
    let dx = px - sx;
    let dy = py - sy;
    let len = (dx * dx + dy * dy).sqrt();
    let ci = 0.5 * (cols as f64 - 1.0);
    let ri = 0.5 * (rows as f64 - 1.0);

    if dx.abs() >= dy.abs() {
        // One sample per column; interpolate between rows.
        let weight = p * len / dx.abs();
        let slope = dy / dx;
        for j in 0..cols {
            let x = (j as f64 - ci) * p;
            let y = sy + (x - sx) * slope;
            let r = ri - y / p;
            if r <= -1.0 || r >= rows as f64 {
                continue;
            }
            let r0 = r.floor();
            let frac = r - r0;
            let r0 = r0 as isize;
            if r0 >= 0 {
                visit(r0 as usize * cols + j, weight * (1.0 - frac));
            }
            if r0 + 1 < rows as isize && frac != 0.0 {
                visit((r0 + 1) as usize * cols + j, weight * frac);
            }
        }
    } else {
        // One sample per row; interpolate between columns.
        let weight = p * len / dy.abs();
        let slope = dx / dy;
        for i in 0..rows {
            let y = (ri - i as f64) * p;
            let x = sx + (y - sy) * slope;
            let c = ci + x / p;
            if c <= -1.0 || c >= cols as f64 {
                continue;
            }
            let c0 = c.floor();
            let frac = c - c0;
            let c0 = c0 as isize;
            if c0 >= 0 {
                visit(i * cols + c0 as usize, weight * (1.0 - frac));
            }
            if c0 + 1 < cols as isize && frac != 0.0 {
                visit(i * cols + (c0 + 1) as usize, weight * frac);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Image {
        Image::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    /// Column `k` of the system matrix is the projection of unit pixel `k`.
    fn dense_matrix(geom: &FanBeamGeometry) -> Vec<Vec<f64>> {
        let (n, m) = (geom.rows(), geom.cols());
        let rays = geom.num_angles * geom.num_bins;
        let mut a = vec![vec![0.0; n * m]; rays];
        for k in 0..n * m {
            let mut e = Image::zeros(n, m);
            e.data_mut()[k] = 1.0;
            let col = project(&e, geom).unwrap();
            for (r, v) in col.data().iter().enumerate() {
                a[r][k] = *v;
            }
        }
        a
    }

    #[test]
    fn zero_in_zero_out() {
        let g = FanBeamGeometry::desk(16, 10).unwrap();
        let s = project(&Image::zeros(16, 16), &g).unwrap();
        assert!(s.data().iter().all(|&v| v == 0.0));
        let b = backproject(&Sinogram::for_geometry(&g), &g).unwrap();
        assert!(b.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_mismatched_dims() {
        let g = FanBeamGeometry::desk(16, 10).unwrap();
        assert!(project(&Image::zeros(15, 16), &g).is_err());
        assert!(backproject(&Sinogram::zeros(10, g.num_bins + 1), &g).is_err());
    }

    #[test]
    fn matches_dense_matrix_oracle() {
        let g = FanBeamGeometry::with_default_detector(12, [8, 8], 1.0, 50.0, 40.0).unwrap();
        let g = FanBeamGeometry { num_bins: 16, ..g };
        g.validate().unwrap();
        let a = dense_matrix(&g);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let x = random_image(8, 8, &mut rng);
            let s = project(&x, &g).unwrap();
            for (r, row) in a.iter().enumerate() {
                let dense: f64 = row.iter().zip(x.data()).map(|(a, b)| a * b).sum();
                assert!((dense - s.data()[r]).abs() <= 1e-12, "ray {r}");
            }
        }
        // A single bin impulse backprojects onto its matrix row.
        for ray in [0usize, 37, 100, 191] {
            let mut y = Sinogram::for_geometry(&g);
            y.data_mut()[ray] = 1.0;
            let img = backproject(&y, &g).unwrap();
            for (k, v) in img.data().iter().enumerate() {
                assert!((v - a[ray][k]).abs() <= 1e-12);
                if a[ray][k] == 0.0 {
                    assert_eq!(*v, 0.0);
                }
            }
        }
    }

    #[test]
    fn adjoint_dot_product_test() {
        let g = FanBeamGeometry::desk(16, 24).unwrap();
        let g = FanBeamGeometry { num_bins: 32, ..g };
        g.validate().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let x = random_image(16, 16, &mut rng);
            let y = Sinogram::from_vec(
                24,
                32,
                (0..24 * 32).map(|_| rng.random_range(-1.0..1.0)).collect(),
            )
            .unwrap();
            let ax = project(&x, &g).unwrap();
            let aty = backproject(&y, &g).unwrap();
            let mismatch = (ax.dot(&y) - x.dot(&aty)).abs() / (ax.norm() * y.norm());
            assert!(mismatch <= 1e-10, "{mismatch}");
        }
    }

    #[test]
    fn central_ray_through_disk_is_its_diameter() {
        let n = 256;
        let g = FanBeamGeometry::desk(n, 8).unwrap();
        let radius = 0.3 * n as f64 * g.pixel_size;
        let mu = 0.7;
        let c = 0.5 * (n as f64 - 1.0);
        // Supersampled disk so the edge is not a staircase.
        let img = Image::from_fn(n, n, |i, j| {
            let mut hits = 0;
            for a in 0..4 {
                for b in 0..4 {
                    let y = (c - i as f64 + (a as f64 - 1.5) / 4.0) * g.pixel_size;
                    let x = (j as f64 - c + (b as f64 - 1.5) / 4.0) * g.pixel_size;
                    if x * x + y * y <= radius * radius {
                        hits += 1;
                    }
                }
            }
            mu * hits as f64 / 16.0
        });
        let s = project(&img, &g).unwrap();
        // Even bin count: the two middle bins straddle the central ray.
        let nb = g.num_bins;
        for view in 0..8 {
            let central = if nb % 2 == 0 {
                0.5 * (s.get(view, nb / 2 - 1) + s.get(view, nb / 2))
            } else {
                s.get(view, nb / 2)
            };
            let expected = 2.0 * radius * mu;
            assert!(
                ((central - expected) / expected).abs() <= 0.01,
                "view {view}: {central} vs {expected}"
            );
        }
    }

    #[test]
    fn centrally_symmetric_phantom_gives_identical_rows() {
        let n = 128;
        let g = FanBeamGeometry::desk(n, 180).unwrap();
        let c = 0.5 * (n as f64 - 1.0);
        let img = Image::from_fn(n, n, |i, j| {
            let r2 = ((i as f64 - c).powi(2) + (j as f64 - c).powi(2)) / (0.4 * n as f64).powi(2);
            (-3.0 * r2).exp()
        });
        let s = project(&img, &g).unwrap();
        let peak = s.data().iter().copied().fold(0.0, f64::max);
        for view in 1..180 {
            for bin in 0..g.num_bins {
                let d = (s.get(view, bin) - s.get(0, bin)).abs();
                assert!(d <= 0.01 * peak, "view {view} bin {bin}: {d}");
            }
        }
    }

    #[test]
    fn linearity() {
        let g = FanBeamGeometry::desk(16, 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x1 = random_image(16, 16, &mut rng);
        let x2 = random_image(16, 16, &mut rng);
        let (a, b) = (1.7, -0.3);
        let combo = Image::from_fn(16, 16, |i, j| a * x1.get(i, j) + b * x2.get(i, j));
        let lhs = project(&combo, &g).unwrap();
        let p1 = project(&x1, &g).unwrap();
        let p2 = project(&x2, &g).unwrap();
        let mut err = 0.0f64;
        for k in 0..lhs.len() {
            err = err.max((lhs.data()[k] - (a * p1.data()[k] + b * p2.data()[k])).abs());
        }
        assert!(err <= 1e-12 * lhs.norm());
    }
}
