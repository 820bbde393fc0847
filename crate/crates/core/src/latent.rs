//! Latent-space tools over frozen models: style inference and propagation,
//! concept directions, interpolation, consistency and confidence metrics,
//! and a PCA map of style codes.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Float;
use crate::raster::{render, RasterError, Viewbox};
use crate::svg_decoder::{best_of_n, DecoderError, SvgDecoder};
use crate::svg_path::Glyph;
use crate::vae::{LatentStyle, Vae, VaeError};

/// Samples drawn per propagated glyph before picking the best.
pub const DEFAULT_SAMPLES: usize = 10;

#[derive(Debug, thiserror::Error)]
pub enum LatentError {
    #[error("no input glyphs")]
    EmptyInput,
    #[error("need at least 2 glyphs, got {0}")]
    TooFewGlyphs(usize),
    #[error("concept example set is empty")]
    EmptySet,
    #[error("interpolation needs at least 2 steps, got {0}")]
    BadSteps(usize),
    #[error("need at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("non-finite input")]
    NonFinite,
    #[error(transparent)]
    Vae(#[from] VaeError),
    #[error(transparent)]
    Decoder(#[from] DecoderError),
    #[error(transparent)]
    Raster(#[from] RasterError),
}

/// A frozen VAE and SVG decoder with the corpus viewbox they were trained on.
pub struct Models<T: Float> {
    pub vae: Vae<T>,
    pub decoder: SvgDecoder<T>,
    pub viewbox: Viewbox,
    /// Sampling temperature used by propagation.
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptDirection {
    pub name: String,
    pub c: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StyleReport {
    /// Re-encoded `μ` of every generated glyph, in input order.
    pub zs: Vec<Vec<f64>>,
    /// Per-dimension variance of `zs`, averaged over dimensions.
    pub variance: f64,
}

fn encode_glyphs<T: Float>(vae: &Vae<T>, viewbox: &Viewbox, glyphs: &[Glyph]) -> Result<Vec<LatentStyle>, LatentError> {
    let rasters = glyphs
        .iter()
        .map(|g| render(g, viewbox).map(|r| r.as_slice().to_vec()))
        .collect::<Result<Vec<_>, _>>()?;
    let refs: Vec<&[f32]> = rasters.iter().map(|r| r.as_slice()).collect();
    let labels: Vec<usize> = glyphs.iter().map(|g| g.label).collect();
    Ok(vae.encode_batch(&refs, &labels)?)
}

/// Elementwise mean; callers guarantee a non-empty list of equal lengths.
fn mean(vs: &[Vec<f64>]) -> Vec<f64> {
    let mut m = vec![0.0; vs[0].len()];
    for v in vs {
        for (a, b) in m.iter_mut().zip(v) {
            *a += b;
        }
    }
    let n = vs.len() as f64;
    m.iter_mut().for_each(|a| *a /= n);
    m
}

/// Mean `μ` of the glyphs' renderings. Glyphs are in corpus coordinates.
pub fn style_z<T: Float>(vae: &Vae<T>, viewbox: &Viewbox, glyphs: &[Glyph]) -> Result<Vec<f64>, LatentError> {
    if glyphs.is_empty() {
        return Err(LatentError::EmptyInput);
    }
    let mus: Vec<Vec<f64>> = encode_glyphs(vae, viewbox, glyphs)?.into_iter().map(|l| l.mu).collect();
    Ok(mean(&mus))
}

/// Best-of-`n` decoding of `z` for every target label, in order.
pub fn propagate<T: Float, R: Rng + ?Sized>(
    models: &Models<T>,
    z: &[f64],
    targets: &[usize],
    n: usize,
    rng: &mut R,
) -> Result<Vec<Glyph>, LatentError> {
    targets
        .iter()
        .map(|&label| {
            best_of_n(
                &models.decoder,
                &models.vae,
                z,
                label,
                n,
                models.temperature,
                &models.viewbox,
                rng,
            )
            .map(|(g, _)| g)
            .map_err(LatentError::from)
        })
        .collect()
}

/// Population variance per dimension, averaged over dimensions. Welford
/// updates keep a constant set at exactly zero.
pub fn mean_variance(zs: &[Vec<f64>]) -> f64 {
    let d = zs[0].len();
    let mut mean = vec![0.0; d];
    let mut m2 = vec![0.0; d];
    for (k, z) in zs.iter().enumerate() {
        for i in 0..d {
            let delta = z[i] - mean[i];
            mean[i] += delta / (k + 1) as f64;
            m2[i] += delta * (z[i] - mean[i]);
        }
    }
    m2.iter().sum::<f64>() / (zs.len() * d) as f64
}

/// Re-encodes generated glyphs and measures how much their styles spread.
pub fn consistency_variance<T: Float>(
    vae: &Vae<T>,
    viewbox: &Viewbox,
    generated: &[Glyph],
) -> Result<StyleReport, LatentError> {
    if generated.len() < 2 {
        return Err(LatentError::TooFewGlyphs(generated.len()));
    }
    let zs: Vec<Vec<f64>> = encode_glyphs(vae, viewbox, generated)?
        .into_iter()
        .map(|l| l.mu)
        .collect();
    let variance = mean_variance(&zs);
    Ok(StyleReport { zs, variance })
}

/// `mean z(positives) − mean z(negatives)`.
pub fn concept_direction<T: Float>(
    vae: &Vae<T>,
    viewbox: &Viewbox,
    name: &str,
    positives: &[Glyph],
    negatives: &[Glyph],
) -> Result<ConceptDirection, LatentError> {
    if positives.is_empty() || negatives.is_empty() {
        return Err(LatentError::EmptySet);
    }
    let p = style_z(vae, viewbox, positives)?;
    let n = style_z(vae, viewbox, negatives)?;
    Ok(ConceptDirection {
        name: name.to_string(),
        c: p.iter().zip(&n).map(|(a, b)| a - b).collect(),
    })
}

fn check_pair(a: &[f64], b: &[f64]) -> Result<(), LatentError> {
    if a.len() != b.len() {
        return Err(LatentError::DimMismatch(a.len(), b.len()));
    }
    if !a.iter().chain(b).all(|v| v.is_finite()) {
        return Err(LatentError::NonFinite);
    }
    Ok(())
}

/// `z + α·c` for every α, in order.
pub fn apply_concept(z: &[f64], c: &[f64], alphas: &[f64]) -> Result<Vec<Vec<f64>>, LatentError> {
    check_pair(z, c)?;
    if !alphas.iter().all(|a| a.is_finite()) {
        return Err(LatentError::NonFinite);
    }
    Ok(alphas
        .iter()
        .map(|&a| z.iter().zip(c).map(|(zi, ci)| zi + a * ci).collect())
        .collect())
}

/// `steps` evenly spaced points from `z_a` to `z_b`, both included.
pub fn interpolate(z_a: &[f64], z_b: &[f64], steps: usize) -> Result<Vec<Vec<f64>>, LatentError> {
    if steps < 2 {
        return Err(LatentError::BadSteps(steps));
    }
    check_pair(z_a, z_b)?;
    Ok((0..steps)
        .map(|i| {
            let t = i as f64 / (steps - 1) as f64;
            z_a.iter().zip(z_b).map(|(a, b)| (1.0 - t) * a + t * b).collect()
        })
        .collect())
}

/// Mean posterior variance; lower means the model is more certain.
pub fn confidence(latent: &LatentStyle) -> f64 {
    latent.sigma.iter().map(|s| s * s).sum::<f64>() / latent.dim() as f64
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues in descending order with unit eigenvectors as
/// the matching columns.
fn symmetric_eigen(mut a: Vec<Vec<f64>>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    for _ in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        let scale: f64 = (0..n).map(|i| a[i][i] * a[i][i]).sum::<f64>().max(f64::MIN_POSITIVE);
        if off <= 1e-30 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q] == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let sign = if theta >= 0.0 { 1.0 } else { -1.0 };
                let t = sign / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j][j].total_cmp(&a[i][i]));
    let values = order.iter().map(|&i| a[i][i]).collect();
    let vectors = (0..n).map(|r| order.iter().map(|&i| v[r][i]).collect()).collect();
    (values, vectors)
}

/// Mean-centered projection onto the top two principal components. Each
/// component's sign makes its largest-magnitude loading positive.
pub fn project_2d(zs: &[Vec<f64>]) -> Result<Vec<(f64, f64)>, LatentError> {
    if zs.len() < 2 {
        return Err(LatentError::TooFewPoints(zs.len()));
    }
    let d = zs[0].len();
    if let Some(z) = zs.iter().find(|z| z.len() != d) {
        return Err(LatentError::DimMismatch(d, z.len()));
    }
    let m = mean(zs);
    let centered: Vec<Vec<f64>> = zs
        .iter()
        .map(|z| z.iter().zip(&m).map(|(a, b)| a - b).collect())
        .collect();
    let mut cov = vec![vec![0.0; d]; d];
    for z in &centered {
        for i in 0..d {
            for j in 0..d {
                cov[i][j] += z[i] * z[j];
            }
        }
    }
    let (_, vectors) = symmetric_eigen(cov);
    let component = |k: usize| -> Vec<f64> {
        let mut c: Vec<f64> = (0..d).map(|r| if k < d { vectors[r][k] } else { 0.0 }).collect();
        let lead = c
            .iter()
            .copied()
            .fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        if lead < 0.0 {
            c.iter_mut().for_each(|x| *x = -*x);
        }
        c
    };
    let (c1, c2) = (component(0), component(1));
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    Ok(centered.iter().map(|z| (dot(z, &c1), dot(z, &c2))).collect())
}

/// Area under the ROC curve for scores of positive vs negative examples;
/// ties count one half.
pub fn auc(positives: &[f64], negatives: &[f64]) -> f64 {
    let mut wins = 0.0;
    for p in positives {
        for n in negatives {
            wins += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    wins / (positives.len() * negatives.len()) as f64
}

/// Scalar projection of `z` onto the direction `c`.
pub fn project_onto(z: &[f64], c: &[f64]) -> f64 {
    let norm = c.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return 0.0;
    }
    z.iter().zip(c).map(|(a, b)| a * b).sum::<f64>() / norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vae::VaeConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn square(label: usize, s: f64) -> Glyph {
        Glyph::from_path(label, &format!("M 0 0 L {s} 0 L {s} {s} L 0 {s} L 0 0")).unwrap()
    }

    #[test]
    fn affine_ops() {
        let z = vec![1.0, -2.0, 0.5];
        let c = vec![0.25, 1.0, -1.0];
        let out = apply_concept(&z, &c, &[0.0, 1.0, -1.0]).unwrap();
        assert_eq!(out[0], z);
        for i in 0..3 {
            assert_eq!(out[1][i] - z[i], z[i] - out[2][i]);
        }
        let half = apply_concept(&z, &c, &[0.5]).unwrap().remove(0);
        assert_eq!(apply_concept(&half, &c, &[0.5]).unwrap()[0], out[1]);
        assert!(apply_concept(&z, &[1.0], &[1.0]).is_err());

        let path = interpolate(&z, &c, 3).unwrap();
        assert_eq!(path[0], z);
        assert_eq!(path[2], c);
        for i in 0..3 {
            assert!((path[1][i] - (z[i] + c[i]) / 2.0).abs() < 1e-15);
        }
        assert_eq!(interpolate(&z, &c, 2).unwrap(), vec![z.clone(), c.clone()]);
        assert!(matches!(interpolate(&z, &c, 1), Err(LatentError::BadSteps(1))));
    }

    #[test]
    fn confidence_values() {
        let l = LatentStyle {
            mu: vec![0.0; 4],
            sigma: vec![1.0; 4],
        };
        assert_eq!(confidence(&l), 1.0);
        let mut wider = l.clone();
        wider.sigma[2] = 1.5;
        assert!(confidence(&wider) > confidence(&l));
    }

    #[test]
    fn variance_of_constant_set_is_zero() {
        assert_eq!(mean_variance(&[vec![1.0, 2.0], vec![1.0, 2.0], vec![1.0, 2.0]]), 0.0);
        assert_eq!(mean_variance(&[vec![0.0], vec![2.0]]), 1.0);
    }

    #[test]
    fn model_backed_invariants() {
        let vae = Vae::<f64>::new(VaeConfig::small(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let vb = Viewbox::new(-0.2, -0.2, 1.4);
        let a = square(10, 1.0);
        let b = square(11, 0.6);
        let za = style_z(&vae, &vb, std::slice::from_ref(&a)).unwrap();
        assert_eq!(za, vae.encode(render(&a, &vb).unwrap().as_slice(), 10).unwrap().mu);
        let zab = style_z(&vae, &vb, &[a.clone(), b.clone()]).unwrap();
        let zba = style_z(&vae, &vb, &[b.clone(), a.clone()]).unwrap();
        for (x, y) in zab.iter().zip(&zba) {
            assert!((x - y).abs() < 1e-12);
        }
        let zaa = style_z(&vae, &vb, &[a.clone(), a.clone()]).unwrap();
        for (x, y) in zaa.iter().zip(&za) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!(matches!(style_z(&vae, &vb, &[]), Err(LatentError::EmptyInput)));

        let same = consistency_variance(&vae, &vb, &[a.clone(), a.clone(), a.clone()]).unwrap();
        assert_eq!(same.variance, 0.0);
        assert!(matches!(
            consistency_variance(&vae, &vb, std::slice::from_ref(&a)),
            Err(LatentError::TooFewGlyphs(1))
        ));

        let c = concept_direction(&vae, &vb, "big", std::slice::from_ref(&a), std::slice::from_ref(&b)).unwrap();
        let r = concept_direction(&vae, &vb, "big", std::slice::from_ref(&b), std::slice::from_ref(&a)).unwrap();
        assert!(c.c.iter().zip(&r.c).all(|(x, y)| *x == -*y));
        assert!(c.c.iter().any(|x| *x != 0.0));
        let zero = concept_direction(&vae, &vb, "none", std::slice::from_ref(&a), std::slice::from_ref(&a)).unwrap();
        assert!(zero.c.iter().all(|x| *x == 0.0));
        assert!(matches!(
            concept_direction(&vae, &vb, "x", &[], &[a]),
            Err(LatentError::EmptySet)
        ));
    }

    #[test]
    fn pca_recovers_planted_plane() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = 32;
        let basis: Vec<Vec<f64>> = (0..2)
            .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let offset: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let coords: Vec<(f64, f64)> = (0..40)
            .map(|_| (rng.random_range(-3.0..3.0), rng.random_range(-1.0..1.0)))
            .collect();
        let zs: Vec<Vec<f64>> = coords
            .iter()
            .map(|(u, v)| (0..d).map(|i| offset[i] + u * basis[0][i] + v * basis[1][i]).collect())
            .collect();
        let proj = project_2d(&zs).unwrap();
        // the projection is an isometry of the plane, so pairwise distances survive
        for i in 0..zs.len() {
            for j in 0..i {
                let dz: f64 = zs[i]
                    .iter()
                    .zip(&zs[j])
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt();
                let dp = (proj[i].0 - proj[j].0).hypot(proj[i].1 - proj[j].1);
                assert!((dz - dp).abs() < 1e-8 * (1.0 + dz));
            }
        }
        let var = |f: fn(&(f64, f64)) -> f64| proj.iter().map(|p| f(p).powi(2)).sum::<f64>();
        assert!(var(|p| p.0) >= var(|p| p.1));
        let mut dup = zs.clone();
        dup.extend(zs.iter().cloned());
        let pd = project_2d(&dup).unwrap();
        for (a, b) in pd[..zs.len()].iter().zip(&pd[zs.len()..]) {
            assert_eq!(a, b);
        }
        assert!(matches!(project_2d(&zs[..1]), Err(LatentError::TooFewPoints(1))));
    }

    #[test]
    fn auc_counts_ties_half() {
        assert_eq!(auc(&[2.0, 3.0], &[1.0, 0.0]), 1.0);
        assert_eq!(auc(&[1.0], &[1.0]), 0.5);
        assert_eq!(auc(&[0.0], &[1.0]), 0.0);
        assert!((project_onto(&[3.0, 4.0], &[0.0, 2.0]) - 4.0).abs() < 1e-15);
    }
}
