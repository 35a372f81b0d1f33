//! Separable Gaussian filtering on single planes.

use ndarray::Array2;

/// Normalized 1-D Gaussian taps of odd length `size`.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    assert!(size % 2 == 1, "kernel size must be odd");
    let half = (size / 2) as f64;
    let mut k: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - half;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Sigma for a kernel of `size` taps when none is given explicitly
/// (`0.3·((size−1)/2 − 1) + 0.8`).
pub fn sigma_for_kernel(size: usize) -> f64 {
    0.3 * ((size as f64 - 1.0) / 2.0 - 1.0) + 0.8
}

/// Mirror index without repeating the edge sample (`dcb|abcd|cba`).
fn reflect101(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut j = i.rem_euclid(period);
    if j >= n as isize {
        j = period - j;
    }
    j as usize
}

/// Horizontal then vertical pass with reflect-101 borders.
pub fn convolve_separable(plane: &Array2<f64>, taps: &[f64]) -> Array2<f64> {
    let (h, w) = plane.dim();
    let r = (taps.len() / 2) as isize;
    let mut tmp = Array2::<f64>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (t, &k) in taps.iter().enumerate() {
                acc += k * plane[[y, reflect101(x as isize + t as isize - r, w)]];
            }
            tmp[[y, x]] = acc;
        }
    }
    let mut out = Array2::<f64>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (t, &k) in taps.iter().enumerate() {
                acc += k * tmp[[reflect101(y as isize + t as isize - r, h), x]];
            }
            out[[y, x]] = acc;
        }
    }
    out
}

/// Gaussian blur with the kernel truncated at three sigma.
pub fn gaussian_blur(plane: &Array2<f64>, sigma: f64) -> Array2<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as usize;
    convolve_separable(plane, &gaussian_kernel(2 * radius + 1, sigma))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_sums_to_one_and_is_symmetric() {
        for size in [3, 5, 7, 9] {
            let k = gaussian_kernel(size, sigma_for_kernel(size));
            assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for i in 0..size {
                assert_eq!(k[i], k[size - 1 - i]);
            }
        }
    }

    #[test]
    fn sigma_rule_values() {
        assert!((sigma_for_kernel(3) - 0.8).abs() < 1e-12);
        assert!((sigma_for_kernel(9) - 1.7).abs() < 1e-12);
    }

    #[test]
    fn blur_preserves_constants() {
        let p = Array2::from_elem((6, 9), 0.25);
        let b = gaussian_blur(&p, 1.5);
        assert!(b.iter().all(|v| (v - 0.25).abs() < 1e-12));
    }

    #[test]
    fn reflect_indices() {
        assert_eq!(reflect101(-1, 4), 1);
        assert_eq!(reflect101(-2, 4), 2);
        assert_eq!(reflect101(4, 4), 2);
        assert_eq!(reflect101(5, 4), 1);
        assert_eq!(reflect101(-7, 4), 1);
    }
}
