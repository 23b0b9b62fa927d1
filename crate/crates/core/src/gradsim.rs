//! How well the gradient of a subsampled batch tracks the full-batch gradient.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::{cross_entropy_losses, Gradients, Network};
use crate::strategies::top_k_positions;

/// All weight and bias gradients, layer by layer (weights row-major, then biases).
#[derive(Debug, Clone, PartialEq)]
pub struct GradVector(pub Vec<f64>);

/// `(rows, cols)` of each weight matrix; bias length equals `rows`.
pub type ShapeTable = Vec<(usize, usize)>;

pub fn flatten(grads: &Gradients) -> GradVector {
    GradVector(grads.iter().copied().collect())
}

pub fn shape_table(grads: &Gradients) -> ShapeTable {
    grads.weights.iter().map(|w| (w.rows(), w.cols())).collect()
}

pub fn unflatten(v: &GradVector, shapes: &ShapeTable) -> Result<Gradients> {
    let need: usize = shapes.iter().map(|&(r, c)| r * c + r).sum();
    if v.0.len() != need {
        return Err(Error::Shape(format!("{} values for {need} parameters", v.0.len())));
    }
    let mut at = 0;
    let mut weights = Vec::with_capacity(shapes.len());
    let mut biases = Vec::with_capacity(shapes.len());
    for &(r, c) in shapes {
        weights.push(Matrix::from_vec(r, c, v.0[at..at + r * c].to_vec())?);
        at += r * c;
        biases.push(v.0[at..at + r].to_vec());
        at += r;
    }
    Ok(Gradients { weights, biases })
}

fn same_len(a: &GradVector, b: &GradVector) -> Result<()> {
    if a.0.len() != b.0.len() {
        return Err(Error::Shape(format!(
            "gradient vectors of length {} and {}",
            a.0.len(),
            b.0.len()
        )));
    }
    Ok(())
}

/// `a.b / (|a||b|)`. Exactly one zero vector gives 0; two zero vectors are undefined.
pub fn cosine_similarity(a: &GradVector, b: &GradVector) -> Result<f64> {
    same_len(a, b)?;
    let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    let na = a.0.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.0.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 && nb == 0.0 {
        return Err(Error::Undefined("cosine similarity of two zero vectors".into()));
    }
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

fn sign(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

/// Fraction of components whose signs match; zero only matches zero.
pub fn sign_agreement(a: &GradVector, b: &GradVector) -> Result<f64> {
    same_len(a, b)?;
    if a.0.is_empty() {
        return Ok(1.0);
    }
    let same = a.0.iter().zip(&b.0).filter(|(x, y)| sign(**x) == sign(**y)).count();
    Ok(same as f64 / a.0.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubsampleMode {
    TopLoss,
    Random,
    LowLoss,
}

impl SubsampleMode {
    pub fn name(self) -> &'static str {
        match self {
            SubsampleMode::TopLoss => "top-loss",
            SubsampleMode::Random => "random",
            SubsampleMode::LowLoss => "low-loss",
        }
    }
}

impl fmt::Display for SubsampleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SubsampleMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "top-loss" => Ok(SubsampleMode::TopLoss),
            "random" => Ok(SubsampleMode::Random),
            "low-loss" => Ok(SubsampleMode::LowLoss),
            other => Err(format!("unknown mode `{other}` (expected top-loss, random or low-loss)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    pub cosine: f64,
    pub sign_fraction: f64,
}

/// Positions of the subsample for `mode`; only `Random` draws from `rng`.
pub fn subsample_positions<R: Rng + ?Sized>(losses: &[f64], k: usize, mode: SubsampleMode, rng: &mut R) -> Vec<usize> {
    match mode {
        SubsampleMode::TopLoss => top_k_positions(losses, k),
        SubsampleMode::LowLoss => {
            let neg: Vec<f64> = losses.iter().map(|l| -l).collect();
            top_k_positions(&neg, k)
        }
        SubsampleMode::Random => {
            let mut p = index::sample(rng, losses.len(), k).into_vec();
            p.sort_unstable();
            p
        }
    }
}

/// Compare the full-batch gradient over `rows` with the gradient over the
/// `ceil(fraction * B)` rows chosen by `mode`.
pub fn subsample_comparison<R: Rng + ?Sized>(
    net: &Network,
    data: &Dataset,
    rows: &[usize],
    fraction: f64,
    mode: SubsampleMode,
    rng: &mut R,
) -> Result<Similarity> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::config("fraction", format!("must lie in (0, 1], got {fraction}")));
    }
    if rows.is_empty() {
        return Err(Error::config("batch", "batch is empty"));
    }
    let (x, y) = data.batch(rows);
    let trace = net.forward(&x)?;
    let full = flatten(&net.backward(&trace, &y)?);
    let losses = cross_entropy_losses(trace.logits(), &y)?;
    let k = crate::strategies::keep_count(fraction, rows.len());
    let picks = subsample_positions(&losses, k, mode, rng);
    let sub_rows: Vec<usize> = picks.iter().map(|&p| rows[p]).collect();
    let (xs, ys) = data.batch(&sub_rows);
    let sub = flatten(&net.backward(&net.forward(&xs)?, &ys)?);
    Ok(Similarity {
        cosine: cosine_similarity(&full, &sub)?,
        sign_fraction: sign_agreement(&full, &sub)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};
    use proptest::prelude::*;

    fn gv(v: &[f64]) -> GradVector {
        GradVector(v.to_vec())
    }

    #[test]
    fn flatten_length_and_round_trip() {
        let net = Network::init(&[2, 3], 0).unwrap();
        let mut g = Gradients::zeros_like(&net);
        assert_eq!(flatten(&g).0, vec![0.0; 9]);
        for (i, w) in g.weights[0].as_mut_slice().iter_mut().enumerate() {
            *w = i as f64;
        }
        g.biases[0] = vec![-1.0, -2.0, -3.0];
        let flat = flatten(&g);
        assert_eq!(flat.0.len(), 9);
        assert_eq!(unflatten(&flat, &shape_table(&g)).unwrap(), g);
    }

    #[test]
    fn cosine_basics() {
        let a = gv(&[1.0, 2.0, -3.0]);
        assert!((cosine_similarity(&a, &a).unwrap() - 1.0).abs() < 1e-15);
        let neg = gv(&[-1.0, -2.0, 3.0]);
        assert!((cosine_similarity(&a, &neg).unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&gv(&[1.0, 0.0]), &gv(&[0.0, 1.0])).unwrap(), 0.0);
        assert!(matches!(
            cosine_similarity(&gv(&[0.0, 0.0]), &gv(&[0.0, 0.0])),
            Err(Error::Undefined(_))
        ));
    }

    #[test]
    fn sign_rules() {
        let a = gv(&[1.0, -1.0, 0.0, 2.0]);
        assert_eq!(sign_agreement(&a, &a).unwrap(), 1.0);
        let b = gv(&[3.0, -5.0, 0.0, -1.0]);
        assert_eq!(sign_agreement(&a, &b).unwrap(), 0.75);
        let c = gv(&[1.0, -2.0, 3.0]);
        let nc = gv(&[-1.0, 2.0, -3.0]);
        assert_eq!(sign_agreement(&c, &nc).unwrap(), 0.0);
    }

    #[test]
    fn full_fraction_is_identical() {
        let (tr, _) = crate::data::synth_blobs(200, 3, 4, 0.5, 1).unwrap();
        let net = Network::init(&[4, 8, 3], 1).unwrap();
        let rows: Vec<usize> = (0..32).collect();
        for mode in [SubsampleMode::TopLoss, SubsampleMode::Random, SubsampleMode::LowLoss] {
            let mut r = stream(0, Stream::Selection);
            let s = subsample_comparison(&net, &tr, &rows, 1.0, mode, &mut r).unwrap();
            assert!((s.cosine - 1.0).abs() < 1e-12, "{mode}: {}", s.cosine);
            assert_eq!(s.sign_fraction, 1.0);
        }
    }

    #[test]
    fn duplicated_pair_half_fraction() {
        let x = Matrix::from_rows(&[vec![0.3, -0.2], vec![0.3, -0.2]]).unwrap();
        let d = Dataset::new(x, vec![1, 1], 2).unwrap();
        let net = Network::init(&[2, 4, 2], 5).unwrap();
        let mut r = stream(0, Stream::Selection);
        let s = subsample_comparison(&net, &d, &[0, 1], 0.5, SubsampleMode::Random, &mut r).unwrap();
        assert!((s.cosine - 1.0).abs() < 1e-12);
    }

    #[test]
    fn top_loss_consumes_no_randomness() {
        let (tr, _) = crate::data::synth_blobs(200, 3, 4, 0.5, 1).unwrap();
        let net = Network::init(&[4, 8, 3], 1).unwrap();
        let rows: Vec<usize> = (0..40).collect();
        let mut r = stream(0, Stream::Selection);
        let before = r.clone();
        subsample_comparison(&net, &tr, &rows, 0.1, SubsampleMode::TopLoss, &mut r).unwrap();
        assert_eq!(r, before);
        subsample_comparison(&net, &tr, &rows, 0.1, SubsampleMode::Random, &mut r).unwrap();
        assert_ne!(r, before);
    }

    proptest! {
        #[test]
        fn cosine_scale_invariant(
            v in prop::collection::vec((-5f64..5.0, -5f64..5.0), 1..30),
            c in 0.01f64..100.0,
        ) {
            let a = GradVector(v.iter().map(|p| p.0).collect());
            let b = GradVector(v.iter().map(|p| p.1).collect());
            let scaled = GradVector(a.0.iter().map(|x| x * c).collect());
            if let (Ok(x), Ok(y)) = (cosine_similarity(&a, &b), cosine_similarity(&scaled, &b)) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }

        #[test]
        fn sign_agreement_symmetric_and_scale_free(
            v in prop::collection::vec((-5i32..5, -5i32..5, 1u32..50), 1..30),
        ) {
            let a = GradVector(v.iter().map(|p| p.0 as f64).collect());
            let b = GradVector(v.iter().map(|p| p.1 as f64).collect());
            let scaled = GradVector(v.iter().map(|p| p.0 as f64 * p.2 as f64 * 0.37).collect());
            let s = sign_agreement(&a, &b).unwrap();
            prop_assert_eq!(s, sign_agreement(&b, &a).unwrap());
            prop_assert_eq!(s, sign_agreement(&scaled, &b).unwrap());
        }
    }
}
