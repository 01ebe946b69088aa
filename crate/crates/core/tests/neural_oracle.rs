//! The tape-based model against a direct, loop-by-loop reimplementation,
//! and the CTC lattice against brute-force path enumeration.

use subseg::corpus::FeatureMatrix;
use subseg::neural::{ctc_loss, Mat, Mode, Model, ModelInput, ModelShape, Parameters, Vocab};

type M = Vec<Vec<f64>>;

fn get(p: &Parameters<f64>, name: &str) -> M {
    let m = p.by_name(name).unwrap_or_else(|| panic!("missing {name}"));
    (0..m.rows).map(|r| m.row(r).to_vec()).collect()
}

fn row(p: &Parameters<f64>, name: &str) -> Vec<f64> {
    get(p, name).remove(0)
}

fn matmul(a: &M, b: &M) -> M {
    a.iter()
        .map(|r| (0..b[0].len()).map(|j| r.iter().zip(b).map(|(x, br)| x * br[j]).sum()).collect())
        .collect()
}

fn affine(x: &M, p: &Parameters<f64>, name: &str) -> M {
    let b = row(p, &format!("{name}.bias"));
    matmul(x, &get(p, &format!("{name}.weight")))
        .into_iter()
        .map(|r| r.iter().zip(&b).map(|(v, c)| v + c).collect())
        .collect()
}

fn add(a: &M, b: &M) -> M {
    a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(u, v)| u + v).collect()).collect()
}

fn norm(x: &M, p: &Parameters<f64>, name: &str) -> M {
    let g = row(p, &format!("{name}.gain"));
    let b = row(p, &format!("{name}.bias"));
    x.iter()
        .map(|r| {
            let n = r.len() as f64;
            let mean = r.iter().sum::<f64>() / n;
            let var = r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            r.iter()
                .enumerate()
                .map(|(i, v)| (v - mean) / (var + 1e-5).sqrt() * g[i] + b[i])
                .collect()
        })
        .collect()
}

fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

fn attend(q_in: &M, kv: &M, p: &Parameters<f64>, name: &str, heads: usize, causal: bool) -> M {
    let q = affine(q_in, p, &format!("{name}.q"));
    let k = affine(kv, p, &format!("{name}.k"));
    let v = affine(kv, p, &format!("{name}.v"));
    let d = q[0].len();
    let dh = d / heads;
    let mut out = vec![vec![0.0; d]; q.len()];
    for h in 0..heads {
        let cols = h * dh..(h + 1) * dh;
        for i in 0..q.len() {
            let visible = if causal { i + 1 } else { k.len() };
            let scores: Vec<f64> = (0..visible)
                .map(|j| cols.clone().map(|c| q[i][c] * k[j][c]).sum::<f64>() / (dh as f64).sqrt())
                .collect();
            let w = softmax(&scores);
            for c in cols.clone() {
                out[i][c] = (0..visible).map(|j| w[j] * v[j][c]).sum();
            }
        }
    }
    affine(&out, p, &format!("{name}.out"))
}

fn feed_forward(x: &M, p: &Parameters<f64>, name: &str) -> M {
    let h: M = affine(x, p, &format!("{name}.ffn_in"))
        .into_iter()
        .map(|r| r.into_iter().map(|v| v.max(0.0)).collect())
        .collect();
    affine(&h, p, &format!("{name}.ffn_out"))
}

fn sinusoid(n: usize, d: usize) -> M {
    (0..n)
        .map(|pos| {
            (0..d)
                .map(|c| {
                    let a = pos as f64 / 10000f64.powf((2 * (c / 2)) as f64 / d as f64);
                    if c % 2 == 0 {
                        a.sin()
                    } else {
                        a.cos()
                    }
                })
                .collect()
        })
        .collect()
}

fn embed(ids: &[u32], p: &Parameters<f64>) -> M {
    let e = get(p, "embed");
    let d = e[0].len();
    let rows: M = ids
        .iter()
        .map(|&i| e[i as usize].iter().map(|v| v * (d as f64).sqrt()).collect())
        .collect();
    add(&rows, &sinusoid(ids.len(), d))
}

fn encoder(mut x: M, p: &Parameters<f64>, prefix: &str, layers: usize, heads: usize) -> M {
    for i in 0..layers {
        let n = format!("{prefix}.{i}");
        let h = norm(&x, p, &format!("{n}.attn_norm"));
        x = add(&x, &attend(&h, &h, p, &format!("{n}.attn"), heads, false));
        let h = norm(&x, p, &format!("{n}.ffn_norm"));
        x = add(&x, &feed_forward(&h, p, &n));
    }
    norm(&x, p, &format!("{prefix}.norm"))
}

fn speech_encoder(f: &FeatureMatrix, p: &Parameters<f64>, convs: usize, layers: usize, heads: usize) -> M {
    let mut x: M = (0..f.frames()).map(|t| f.row(t).iter().map(|&v| v as f64).collect()).collect();
    for c in 0..convs {
        let width = x[0].len();
        let n_out = (x.len() + 2 - 3) / 2 + 1;
        let windows: M = (0..n_out)
            .map(|t| {
                let mut w = Vec::with_capacity(3 * width);
                for j in 0..3 {
                    let src = 2 * t as isize + j - 1;
                    if src >= 0 && (src as usize) < x.len() {
                        w.extend_from_slice(&x[src as usize]);
                    } else {
                        w.extend(std::iter::repeat_n(0.0, width));
                    }
                }
                w
            })
            .collect();
        x = affine(&windows, p, &format!("speech_enc.conv{c}"))
            .into_iter()
            .map(|r| r.into_iter().map(|v| v.max(0.0)).collect())
            .collect();
    }
    let d = x[0].len();
    let x = add(&x, &sinusoid(x.len(), d));
    encoder(x, p, "speech_enc", layers, heads)
}

fn decoder(prefix: &[u32], text: Option<&M>, speech: Option<&M>, p: &Parameters<f64>, layers: usize, heads: usize) -> M {
    let mut y = embed(prefix, p);
    for i in 0..layers {
        let n = format!("dec.{i}");
        let h = norm(&y, p, &format!("{n}.self_norm"));
        y = add(&y, &attend(&h, &h, p, &format!("{n}.self_attn"), heads, true));
        let q = norm(&y, p, &format!("{n}.cross_norm"));
        if let Some(m) = text {
            y = add(&y, &attend(&q, m, p, &format!("{n}.cross_text"), heads, false));
        }
        if let Some(m) = speech {
            y = add(&y, &attend(&q, m, p, &format!("{n}.cross_speech"), heads, false));
        }
        let h = norm(&y, p, &format!("{n}.ffn_norm"));
        y = add(&y, &feed_forward(&h, p, &n));
    }
    let y = norm(&y, p, "dec.norm");
    let e = get(p, "embed");
    y.iter()
        .map(|r| e.iter().map(|er| r.iter().zip(er).map(|(a, b)| a * b).sum()).collect())
        .collect()
}

fn perturbed_params(model: &Model, seed: u64) -> Parameters<f64> {
    let mut p = model.init_params::<f64>(seed);
    // Move every norm and bias away from its initial constant.
    for i in 0..p.len() {
        if p.name(i).ends_with(".bias") || p.name(i).ends_with(".gain") {
            let m = p.get_mut(i);
            for (k, v) in m.data.iter_mut().enumerate() {
                *v += 0.1 * ((k * 7 + i * 3) % 5) as f64 - 0.2;
            }
        }
    }
    p
}

fn max_diff(a: &Mat<f64>, b: &M) -> f64 {
    assert_eq!(a.rows, b.len());
    (0..a.rows)
        .flat_map(|r| a.row(r).iter().zip(&b[r]).map(|(x, y)| (x - y).abs()).collect::<Vec<_>>())
        .fold(0.0, f64::max)
}

#[test]
fn textual_forward_matches_direct_computation() {
    let vocab = Vocab::build(&[], ["ab"]);
    assert_eq!(vocab.len(), 10);
    let shape = ModelShape::tiny(Mode::Textual, 0);
    let model = Model::new(shape.clone().with_vocab(&vocab)).unwrap();
    let p = perturbed_params(&model, 3);
    let src = [8u32, 9, 5, 8, 8];
    let prefix = [1u32, 9, 6, 8];
    let out = model
        .forward(&p, &ModelInput { src: Some(&src), speech: None }, &prefix)
        .unwrap();
    let mem = encoder(embed(&src, &p), &p, "text_enc", shape.text_enc_layers, shape.n_heads);
    let want = decoder(&prefix, Some(&mem), None, &p, shape.dec_layers, shape.n_heads);
    let diff = max_diff(&out.logits, &want);
    assert!(diff < 1e-5, "max abs difference {diff}");
}

#[test]
fn multimodal_forward_matches_direct_computation() {
    let vocab = Vocab::build(&["xx"], ["ab"]);
    let shape = ModelShape::tiny(Mode::Multimodal, 3);
    let model = Model::new(shape.clone().with_vocab(&vocab)).unwrap();
    let p = perturbed_params(&model, 4);
    let data: Vec<f32> = (0..11 * 3).map(|i| ((i * 29 % 13) as f32) / 13.0 - 0.4).collect();
    let f = FeatureMatrix::new(11, 3, data, 10).unwrap();
    let src = [9u32, 10, 5, 9];
    let prefix = [1u32, 8, 10, 7];
    let out = model
        .forward(&p, &ModelInput { src: Some(&src), speech: Some(&f) }, &prefix)
        .unwrap();
    let text = encoder(embed(&src, &p), &p, "text_enc", shape.text_enc_layers, shape.n_heads);
    let convs = shape.speech_downsample.trailing_zeros() as usize;
    let speech = speech_encoder(&f, &p, convs, shape.speech_enc_layers, shape.n_heads);
    assert_eq!(speech.len(), model.speech_steps(11));
    let want = decoder(&prefix, Some(&text), Some(&speech), &p, shape.dec_layers, shape.n_heads);
    let diff = max_diff(&out.logits, &want);
    assert!(diff < 1e-5, "max abs difference {diff}");
    let ctc = affine(&speech, &p, "ctc");
    let diff = max_diff(out.ctc_logits.as_ref().unwrap(), &ctc);
    assert!(diff < 1e-5, "ctc head difference {diff}");
}

/// Probability of `target` as the sum over every frame-level path that
/// collapses to it.
fn enumerate_ctc(probs: &[Vec<f64>], target: &[u32], blank: u32) -> f64 {
    let frames = probs.len();
    let vocab = probs[0].len();
    let mut total = 0.0;
    for code in 0..vocab.pow(frames as u32) {
        let mut c = code;
        let path: Vec<u32> = (0..frames)
            .map(|_| {
                let s = (c % vocab) as u32;
                c /= vocab;
                s
            })
            .collect();
        let mut collapsed = Vec::new();
        let mut prev = None;
        for &s in &path {
            if Some(s) != prev && s != blank {
                collapsed.push(s);
            }
            prev = Some(s);
        }
        if collapsed == target {
            total += path.iter().enumerate().map(|(t, &s)| probs[t][s as usize]).product::<f64>();
        }
    }
    total
}

#[test]
fn ctc_matches_path_enumeration() {
    let vocab = 3usize;
    let blank = 0u32;
    let mut cases = 0;
    for frames in 1..=4usize {
        let probs: Vec<Vec<f64>> = (0..frames)
            .map(|t| softmax(&(0..vocab).map(|k| ((t * 5 + k * 3) % 7) as f64 * 0.4 - 1.0).collect::<Vec<_>>()))
            .collect();
        let lp = Mat::from_fn(frames, vocab, |t, k| probs[t][k].ln());
        let mut targets: Vec<Vec<u32>> = vec![vec![]];
        for a in 1..vocab as u32 {
            targets.push(vec![a]);
            for b in 1..vocab as u32 {
                targets.push(vec![a, b]);
            }
        }
        for target in targets {
            cases += 1;
            let p = enumerate_ctc(&probs, &target, blank);
            match ctc_loss(&lp, &target, blank) {
                Ok(loss) => {
                    assert!(p > 0.0);
                    assert!((loss - (-p.ln())).abs() < 1e-9, "frames {frames} target {target:?}");
                }
                Err(_) => assert_eq!(p, 0.0, "frames {frames} target {target:?}"),
            }
        }
    }
    assert_eq!(cases, 4 * 7);
}
