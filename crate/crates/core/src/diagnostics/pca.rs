use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const POWER_TOL: f64 = 1e-8;
pub const POWER_MAX_ITERS: usize = 1000;

/// Top-two principal components of an `n × d` row-major sample matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Pca {
    /// Unit directions, each of length `d`. A missing second direction
    /// (`d == 1`) is all zeros.
    pub directions: [Vec<f64>; 2],
    /// Variance along each direction, non-increasing.
    pub variances: [f64; 2],
    /// Centered samples projected on the directions.
    pub coords: Vec<[f64; 2]>,
    /// The samples have no spread; directions and coordinates are zero.
    pub degenerate: bool,
    pub iterations: [usize; 2],
}

fn covariance(samples: &[f64], n: usize, d: usize) -> (Vec<f64>, Vec<f64>) {
    let mut mean = vec![0.0; d];
    for row in samples.chunks_exact(d) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut cov = vec![0.0; d * d];
    for row in samples.chunks_exact(d) {
        for i in 0..d {
            let ci = row[i] - mean[i];
            for j in i..d {
                cov[i * d + j] += ci * (row[j] - mean[j]);
            }
        }
    }
    let denom = (n.max(2) - 1) as f64;
    for i in 0..d {
        for j in i..d {
            cov[i * d + j] /= denom;
            cov[j * d + i] = cov[i * d + j];
        }
    }
    (mean, cov)
}

fn matvec(a: &[f64], v: &[f64]) -> Vec<f64> {
    let d = v.len();
    (0..d)
        .map(|i| a[i * d..(i + 1) * d].iter().zip(v).map(|(x, y)| x * y).sum())
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        for x in v.iter_mut() {
            *x /= n;
        }
    }
    n
}

/// Leading eigenvector of the symmetric matrix `a`, kept orthogonal to
/// `against`.
fn power_iterate(a: &[f64], d: usize, against: Option<&[f64]>, rng: &mut ChaCha8Rng) -> (Vec<f64>, usize) {
    let project_out = |v: &mut Vec<f64>| {
        if let Some(u) = against {
            let c = dot(v, u);
            for (x, y) in v.iter_mut().zip(u) {
                *x -= c * y;
            }
        }
    };
    let mut v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    project_out(&mut v);
    if normalize(&mut v) == 0.0 {
        return (vec![0.0; d], 0);
    }
    for it in 1..=POWER_MAX_ITERS {
        let mut w = matvec(a, &v);
        project_out(&mut w);
        if normalize(&mut w) == 0.0 {
            return (v, it);
        }
        // Fix the sign so convergence is measured on the direction.
        if dot(&w, &v) < 0.0 {
            for x in &mut w {
                *x = -*x;
            }
        }
        let delta = w
            .iter()
            .zip(&v)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        v = w;
        if delta < POWER_TOL {
            return (v, it);
        }
    }
    (v, POWER_MAX_ITERS)
}

/// Power iteration with deflation for the top two principal directions.
pub fn pca_top2(samples: &[f64], d: usize, rng: &mut ChaCha8Rng) -> Pca {
    assert!(d > 0 && samples.len() % d == 0);
    let n = samples.len() / d;
    let (mean, mut cov) = covariance(samples, n, d);
    let trace: f64 = (0..d).map(|i| cov[i * d + i]).sum();
    if n < 2 || trace <= 1e-12 {
        return Pca {
            directions: [vec![0.0; d], vec![0.0; d]],
            variances: [0.0, 0.0],
            coords: vec![[0.0, 0.0]; n],
            degenerate: true,
            iterations: [0, 0],
        };
    }

    let (v1, it1) = power_iterate(&cov, d, None, rng);
    let l1 = dot(&v1, &matvec(&cov, &v1));
    for i in 0..d {
        for j in 0..d {
            cov[i * d + j] -= l1 * v1[i] * v1[j];
        }
    }
    let (v2, it2, l2) = if d > 1 {
        let (v2, it2) = power_iterate(&cov, d, Some(&v1), rng);
        let l2 = dot(&v2, &matvec(&cov, &v2)).max(0.0);
        (v2, it2, l2)
    } else {
        (vec![0.0; d], 0, 0.0)
    };

    let coords = samples
        .chunks_exact(d)
        .map(|row| {
            let c: Vec<f64> = row.iter().zip(&mean).map(|(x, m)| x - m).collect();
            [dot(&c, &v1), dot(&c, &v2)]
        })
        .collect();
    Pca {
        directions: [v1, v2],
        variances: [l1, l2],
        coords,
        degenerate: false,
        iterations: [it1, it2],
    }
}
