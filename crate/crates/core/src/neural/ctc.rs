//! Connectionist temporal classification loss (forward-backward in log space).

use super::autograd::log_softmax_rows;
use super::tensor::{Mat, Scalar};
use super::NeuralError;

/// Fewest frames able to emit `target`: one per label plus one blank
/// between each pair of equal neighbours.
pub fn min_frames(target: &[u32]) -> usize {
    target.len() + target.windows(2).filter(|w| w[0] == w[1]).count()
}

fn lse2(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

struct Lattice {
    labels: Vec<u32>,
    alpha: Vec<f64>,
    beta: Vec<f64>,
    log_p: f64,
}

fn lattice(lp: &[f64], frames: usize, vocab: usize, target: &[u32], blank: u32) -> Lattice {
    let mut labels = Vec::with_capacity(2 * target.len() + 1);
    labels.push(blank);
    for &t in target {
        labels.push(t);
        labels.push(blank);
    }
    let s_len = labels.len();
    let at = |t: usize, k: u32| lp[t * vocab + k as usize];
    let skip = |s: usize| s >= 2 && labels[s] != blank && labels[s] != labels[s - 2];

    let ninf = f64::NEG_INFINITY;
    let mut alpha = vec![ninf; frames * s_len];
    alpha[0] = at(0, labels[0]);
    if s_len > 1 {
        alpha[1] = at(0, labels[1]);
    }
    for t in 1..frames {
        for s in 0..s_len {
            let prev = &alpha[(t - 1) * s_len..t * s_len];
            let mut a = prev[s];
            if s >= 1 {
                a = lse2(a, prev[s - 1]);
            }
            if skip(s) {
                a = lse2(a, prev[s - 2]);
            }
            alpha[t * s_len + s] = a + at(t, labels[s]);
        }
    }

    let mut beta = vec![ninf; frames * s_len];
    let last = (frames - 1) * s_len;
    beta[last + s_len - 1] = at(frames - 1, labels[s_len - 1]);
    if s_len > 1 {
        beta[last + s_len - 2] = at(frames - 1, labels[s_len - 2]);
    }
    for t in (0..frames - 1).rev() {
        for s in 0..s_len {
            let next = &beta[(t + 1) * s_len..(t + 2) * s_len];
            let mut b = next[s];
            if s + 1 < s_len {
                b = lse2(b, next[s + 1]);
            }
            if s + 2 < s_len && labels[s] != blank && labels[s] != labels[s + 2] {
                b = lse2(b, next[s + 2]);
            }
            beta[t * s_len + s] = b + at(t, labels[s]);
        }
    }
    let end = (frames - 1) * s_len;
    let mut log_p = alpha[end + s_len - 1];
    if s_len > 1 {
        log_p = lse2(log_p, alpha[end + s_len - 2]);
    }
    Lattice {
        labels,
        alpha,
        beta,
        log_p,
    }
}

fn check(frames: usize, vocab: usize, target: &[u32], blank: u32) -> Result<(), NeuralError> {
    if blank as usize >= vocab || target.iter().any(|&t| t as usize >= vocab || t == blank) {
        return Err(NeuralError::ShapeMismatch("ctc label outside vocabulary or equal to blank".into()));
    }
    let needed = min_frames(target).max(1);
    if frames < needed {
        return Err(NeuralError::TargetTooLong { frames, needed });
    }
    Ok(())
}

/// `-log p(target | log_probs)` for row-normalized log-probabilities
/// (`frames x vocab`).
pub fn ctc_loss<T: Scalar>(log_probs: &Mat<T>, target: &[u32], blank: u32) -> Result<T, NeuralError> {
    check(log_probs.rows, log_probs.cols, target, blank)?;
    let lp: Vec<f64> = log_probs.data.iter().map(|v| v.to_f64().unwrap()).collect();
    let lat = lattice(&lp, log_probs.rows, log_probs.cols, target, blank);
    Ok(T::from_f64_lossy(-lat.log_p))
}

/// Loss and its gradient with respect to unnormalized `logits`.
pub(crate) fn ctc_loss_and_grad<T: Scalar>(
    logits: &Mat<T>,
    target: &[u32],
    blank: u32,
) -> Result<(T, Mat<T>), NeuralError> {
    let (frames, vocab) = logits.shape();
    check(frames, vocab, target, blank)?;
    let lp: Vec<f64> = log_softmax_rows(logits).data.iter().map(|v| v.to_f64().unwrap()).collect();
    let lat = lattice(&lp, frames, vocab, target, blank);
    let s_len = lat.labels.len();
    // grad = softmax - posterior label occupancy
    let mut occ = vec![f64::NEG_INFINITY; frames * vocab];
    for t in 0..frames {
        for s in 0..s_len {
            let k = lat.labels[s] as usize;
            let v = lat.alpha[t * s_len + s] + lat.beta[t * s_len + s];
            occ[t * vocab + k] = lse2(occ[t * vocab + k], v);
        }
    }
    let mut grad = Mat::zeros(frames, vocab);
    for t in 0..frames {
        for k in 0..vocab {
            let i = t * vocab + k;
            let post = (occ[i] - lp[i] - lat.log_p).exp();
            grad.data[i] = T::from_f64_lossy(lp[i].exp() - post);
        }
    }
    Ok((T::from_f64_lossy(-lat.log_p), grad))
}
