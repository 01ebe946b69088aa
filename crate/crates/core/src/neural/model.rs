//! Encoder-decoder transformer with optional text and speech encoders.
//!
//! All blocks are pre-norm. The decoder queries every available encoder
//! from the same normalized self-attention output and sums the
//! cross-attention results before the feed-forward sublayer.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::autograd::{unfold_len, Parameters, Tape, Var};
use super::config::{Mode, ModelConfig};
use super::tensor::{Mat, Scalar};
use super::vocab::{Vocab, PAD};
use super::NeuralError;
use crate::corpus::FeatureMatrix;
use crate::rng::{self, Prng};

const CONV_KERNEL: usize = 3;

#[derive(Debug, Clone, Copy)]
pub(crate) struct Lin {
    pub w: usize,
    pub b: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Norm {
    pub g: usize,
    pub b: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Attn {
    pub q: Lin,
    pub k: Lin,
    pub v: Lin,
    pub o: Lin,
}

#[derive(Debug, Clone)]
pub(crate) struct EncLayer {
    pub ln_attn: Norm,
    pub attn: Attn,
    pub ln_ffn: Norm,
    pub ffn_in: Lin,
    pub ffn_out: Lin,
}

#[derive(Debug, Clone)]
pub(crate) struct DecLayer {
    pub ln_self: Norm,
    pub self_attn: Attn,
    pub ln_cross: Norm,
    pub cross_text: Option<Attn>,
    pub cross_speech: Option<Attn>,
    pub ln_ffn: Norm,
    pub ffn_in: Lin,
    pub ffn_out: Lin,
}

#[derive(Debug, Clone, Copy)]
enum Init {
    Zeros,
    Ones,
    /// Uniform Glorot with the given fan-in and fan-out.
    Glorot(usize, usize),
    /// Normal with standard deviation `d^-1/2`; the padding row is zero.
    Embedding,
}

#[derive(Debug, Clone)]
struct Spec {
    name: String,
    rows: usize,
    cols: usize,
    init: Init,
}

#[derive(Default)]
struct Registry {
    specs: Vec<Spec>,
}

impl Registry {
    fn add(&mut self, name: String, rows: usize, cols: usize, init: Init) -> usize {
        self.specs.push(Spec { name, rows, cols, init });
        self.specs.len() - 1
    }

    fn lin(&mut self, name: &str, i: usize, o: usize) -> Lin {
        Lin {
            w: self.add(format!("{name}.weight"), i, o, Init::Glorot(i, o)),
            b: self.add(format!("{name}.bias"), 1, o, Init::Zeros),
        }
    }

    fn norm(&mut self, name: &str, d: usize) -> Norm {
        Norm {
            g: self.add(format!("{name}.gain"), 1, d, Init::Ones),
            b: self.add(format!("{name}.bias"), 1, d, Init::Zeros),
        }
    }

    fn attn(&mut self, name: &str, d: usize) -> Attn {
        Attn {
            q: self.lin(&format!("{name}.q"), d, d),
            k: self.lin(&format!("{name}.k"), d, d),
            v: self.lin(&format!("{name}.v"), d, d),
            o: self.lin(&format!("{name}.out"), d, d),
        }
    }

    fn enc_layer(&mut self, name: &str, d: usize, f: usize) -> EncLayer {
        EncLayer {
            ln_attn: self.norm(&format!("{name}.attn_norm"), d),
            attn: self.attn(&format!("{name}.attn"), d),
            ln_ffn: self.norm(&format!("{name}.ffn_norm"), d),
            ffn_in: self.lin(&format!("{name}.ffn_in"), d, f),
            ffn_out: self.lin(&format!("{name}.ffn_out"), f, d),
        }
    }
}

/// Model architecture bound to a parameter layout. Parameters live in a
/// separate [`Parameters`] set so one model can drive f32 training and f64
/// checks.
#[derive(Debug, Clone)]
pub struct Model {
    cfg: ModelConfig,
    vocab: Vocab,
    specs: Vec<Spec>,
    pub(crate) embed: usize,
    pub(crate) text_layers: Vec<EncLayer>,
    pub(crate) text_norm: Option<Norm>,
    pub(crate) convs: Vec<Lin>,
    pub(crate) speech_layers: Vec<EncLayer>,
    pub(crate) speech_norm: Option<Norm>,
    pub(crate) ctc_proj: Option<Lin>,
    pub(crate) dec_layers: Vec<DecLayer>,
    pub(crate) dec_norm: Norm,
}

/// Encoder outputs on a tape.
#[derive(Debug, Clone, Copy, Default)]
pub struct Encoded {
    pub text: Option<Var>,
    pub speech: Option<Var>,
    pub ctc_logits: Option<Var>,
}

/// Inputs of one example; which ones are required depends on the [`Mode`].
#[derive(Debug, Clone, Copy, Default)]
pub struct ModelInput<'a> {
    pub src: Option<&'a [u32]>,
    pub speech: Option<&'a FeatureMatrix>,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput<T> {
    pub logits: Mat<T>,
    pub ctc_logits: Option<Mat<T>>,
}

/// `n x d` sinusoidal position table.
pub fn positions<T: Scalar>(n: usize, d: usize) -> Mat<T> {
    Mat::from_fn(n, d, |p, c| {
        let i = (c / 2) as f64;
        let angle = p as f64 / 10000f64.powf(2.0 * i / d as f64);
        T::from_f64_lossy(if c % 2 == 0 { angle.sin() } else { angle.cos() })
    })
}

impl Model {
    pub fn new(cfg: ModelConfig) -> Result<Model, NeuralError> {
        let vocab = cfg.validate()?;
        let s = cfg.shape.clone();
        let d = s.d_model;
        let mut r = Registry::default();
        let embed = r.add("embed".into(), vocab.len(), d, Init::Embedding);

        let text_layers: Vec<EncLayer> = (0..s.text_enc_layers)
            .map(|i| r.enc_layer(&format!("text_enc.{i}"), d, s.ffn_dim))
            .collect();
        let text_norm = s.mode.uses_text().then(|| r.norm("text_enc.norm", d));

        let mut convs = Vec::new();
        let mut speech_layers = Vec::new();
        let mut speech_norm = None;
        let mut ctc_proj = None;
        if s.mode.uses_speech() {
            let n_convs = s.speech_downsample.trailing_zeros() as usize;
            let mut width = s.feature_dims;
            for i in 0..n_convs {
                convs.push(r.lin(&format!("speech_enc.conv{i}"), CONV_KERNEL * width, d));
                width = d;
            }
            speech_layers = (0..s.speech_enc_layers)
                .map(|i| r.enc_layer(&format!("speech_enc.{i}"), d, s.ffn_dim))
                .collect();
            speech_norm = Some(r.norm("speech_enc.norm", d));
            ctc_proj = Some(r.lin("ctc", d, vocab.len()));
        }

        let dec_layers = (0..s.dec_layers)
            .map(|i| {
                let n = format!("dec.{i}");
                DecLayer {
                    ln_self: r.norm(&format!("{n}.self_norm"), d),
                    self_attn: r.attn(&format!("{n}.self_attn"), d),
                    ln_cross: r.norm(&format!("{n}.cross_norm"), d),
                    cross_text: s.mode.uses_text().then(|| r.attn(&format!("{n}.cross_text"), d)),
                    cross_speech: s.mode.uses_speech().then(|| r.attn(&format!("{n}.cross_speech"), d)),
                    ln_ffn: r.norm(&format!("{n}.ffn_norm"), d),
                    ffn_in: r.lin(&format!("{n}.ffn_in"), d, s.ffn_dim),
                    ffn_out: r.lin(&format!("{n}.ffn_out"), s.ffn_dim, d),
                }
            })
            .collect();
        let dec_norm = r.norm("dec.norm", d);

        Ok(Model {
            cfg,
            vocab,
            specs: r.specs,
            embed,
            text_layers,
            text_norm,
            convs,
            speech_layers,
            speech_norm,
            ctc_proj,
            dec_layers,
            dec_norm,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn mode(&self) -> Mode {
        self.cfg.shape.mode
    }

    pub fn init_params<T: Scalar>(&self, seed: u64) -> Parameters<T> {
        let mut rng = rng::seeded(seed);
        let mut p = Parameters::new();
        let d = self.cfg.shape.d_model;
        for s in &self.specs {
            let m = match s.init {
                Init::Zeros => Mat::zeros(s.rows, s.cols),
                Init::Ones => Mat::from_fn(s.rows, s.cols, |_, _| T::one()),
                Init::Glorot(i, o) => {
                    let a = (6.0 / (i + o) as f64).sqrt();
                    Mat::from_fn(s.rows, s.cols, |_, _| T::from_f64_lossy(rng.random_range(-a..a)))
                }
                Init::Embedding => {
                    let dist = Normal::new(0.0, (d as f64).powf(-0.5)).expect("valid std");
                    Mat::from_fn(s.rows, s.cols, |r, _| {
                        let v = dist.sample(&mut rng);
                        if r == PAD as usize {
                            T::zero()
                        } else {
                            T::from_f64_lossy(v)
                        }
                    })
                }
            };
            p.push(s.name.clone(), m);
        }
        p
    }

    /// Checks that `params` has exactly this model's names and shapes.
    pub fn check_params<T: Scalar>(&self, params: &Parameters<T>) -> Result<(), NeuralError> {
        if params.len() != self.specs.len() {
            return Err(NeuralError::ShapeMismatch(format!(
                "expected {} tensors, found {}",
                self.specs.len(),
                params.len()
            )));
        }
        for (i, s) in self.specs.iter().enumerate() {
            let (name, m) = (params.name(i), params.get(i));
            if name != s.name || m.shape() != (s.rows, s.cols) {
                return Err(NeuralError::ShapeMismatch(format!(
                    "tensor {i}: expected {} {}x{}, found {name} {}x{}",
                    s.name, s.rows, s.cols, m.rows, m.cols
                )));
            }
        }
        Ok(())
    }

    /// Encoder time steps produced for `frames` input frames.
    pub fn speech_steps(&self, frames: usize) -> usize {
        (0..self.convs.len()).fold(frames, |n, _| unfold_len(n, CONV_KERNEL, 2, 1))
    }

    fn check_input(&self, input: &ModelInput) -> Result<(), NeuralError> {
        let mode = self.mode();
        if mode.uses_text() != input.src.is_some() || mode.uses_speech() != input.speech.is_some() {
            return Err(NeuralError::ModeMismatch {
                mode,
                text: input.src.is_some(),
                speech: input.speech.is_some(),
            });
        }
        if let Some(src) = input.src {
            if src.is_empty() {
                return Err(NeuralError::ShapeMismatch("empty source text".into()));
            }
            if let Some(&bad) = src.iter().find(|&&t| t as usize >= self.vocab.len()) {
                return Err(NeuralError::ShapeMismatch(format!("token id {bad} outside vocabulary")));
            }
        }
        if let Some(f) = input.speech {
            if f.dims() != self.cfg.shape.feature_dims {
                return Err(NeuralError::ShapeMismatch(format!(
                    "features have {} dims, model expects {}",
                    f.dims(),
                    self.cfg.shape.feature_dims
                )));
            }
            if f.frames() == 0 {
                return Err(NeuralError::ShapeMismatch("no speech frames".into()));
            }
        }
        Ok(())
    }

    fn dropout<T: Scalar>(&self, t: &mut Tape<T>, x: Var, rng: &mut Option<&mut Prng>) -> Var {
        match rng {
            Some(r) => t.dropout(x, self.cfg.shape.dropout, &mut **r),
            None => x,
        }
    }

    fn mha<T: Scalar>(&self, t: &mut Tape<T>, a: &Attn, q_in: Var, kv_in: Var, causal: bool) -> Var {
        let q = t.linear(q_in, a.q.w, a.q.b);
        let k = t.linear(kv_in, a.k.w, a.k.b);
        let v = t.linear(kv_in, a.v.w, a.v.b);
        let o = t.attention(q, k, v, self.cfg.shape.n_heads, causal);
        t.linear(o, a.o.w, a.o.b)
    }

    fn ffn<T: Scalar>(&self, t: &mut Tape<T>, ffn_in: Lin, ffn_out: Lin, x: Var, rng: &mut Option<&mut Prng>) -> Var {
        let h = t.linear(x, ffn_in.w, ffn_in.b);
        let h = t.relu(h);
        let h = self.dropout(t, h, rng);
        t.linear(h, ffn_out.w, ffn_out.b)
    }

    fn encoder_stack<T: Scalar>(
        &self,
        t: &mut Tape<T>,
        layers: &[EncLayer],
        norm: Norm,
        mut x: Var,
        rng: &mut Option<&mut Prng>,
    ) -> Var {
        for l in layers {
            let h = t.layer_norm(x, l.ln_attn.g, l.ln_attn.b);
            let a = self.mha(t, &l.attn, h, h, false);
            let a = self.dropout(t, a, rng);
            x = t.add(x, a);
            let h = t.layer_norm(x, l.ln_ffn.g, l.ln_ffn.b);
            let f = self.ffn(t, l.ffn_in, l.ffn_out, h, rng);
            let f = self.dropout(t, f, rng);
            x = t.add(x, f);
        }
        t.layer_norm(x, norm.g, norm.b)
    }

    /// Scaled shared embeddings plus positions.
    fn embed_tokens<T: Scalar>(&self, t: &mut Tape<T>, ids: &[u32], rng: &mut Option<&mut Prng>) -> Var {
        let d = self.cfg.shape.d_model;
        let e = t.gather(self.embed, ids);
        let e = t.scale(e, T::from_usize(d).unwrap().sqrt());
        let pe = t.input(positions(ids.len(), d));
        let x = t.add(e, pe);
        self.dropout(t, x, rng)
    }

    /// Runs the encoders. `rng` enables dropout.
    pub fn encode<T: Scalar>(
        &self,
        t: &mut Tape<T>,
        input: &ModelInput,
        mut rng: Option<&mut Prng>,
    ) -> Result<Encoded, NeuralError> {
        self.check_input(input)?;
        let mut enc = Encoded::default();
        if let Some(src) = input.src {
            let x = self.embed_tokens(t, src, &mut rng);
            enc.text = Some(self.encoder_stack(t, &self.text_layers, self.text_norm.unwrap(), x, &mut rng));
        }
        if let Some(f) = input.speech {
            let feats = Mat::from_vec(f.frames(), f.dims(), f.data().iter().map(|&v| T::from_f32(v).unwrap()).collect());
            let mut x = t.input(feats);
            for c in &self.convs {
                let u = t.unfold(x, CONV_KERNEL, 2, 1);
                let h = t.linear(u, c.w, c.b);
                x = t.relu(h);
            }
            let n = t.value(x).rows;
            let pe = t.input(positions(n, self.cfg.shape.d_model));
            let x = t.add(x, pe);
            let x = self.dropout(t, x, &mut rng);
            let out = self.encoder_stack(t, &self.speech_layers, self.speech_norm.unwrap(), x, &mut rng);
            let ctc = self.ctc_proj.unwrap();
            enc.ctc_logits = Some(t.linear(out, ctc.w, ctc.b));
            enc.speech = Some(out);
        }
        Ok(enc)
    }

    /// Decoder logits (`prefix.len() x vocab`) for every prefix position.
    pub fn decode<T: Scalar>(
        &self,
        t: &mut Tape<T>,
        enc: &Encoded,
        prefix: &[u32],
        mut rng: Option<&mut Prng>,
    ) -> Result<Var, NeuralError> {
        if prefix.is_empty() {
            return Err(NeuralError::ShapeMismatch("empty decoder prefix".into()));
        }
        let mut y = self.embed_tokens(t, prefix, &mut rng);
        for l in &self.dec_layers {
            let h = t.layer_norm(y, l.ln_self.g, l.ln_self.b);
            let a = self.mha(t, &l.self_attn, h, h, true);
            let a = self.dropout(t, a, &mut rng);
            y = t.add(y, a);

            let q = t.layer_norm(y, l.ln_cross.g, l.ln_cross.b);
            let mut cross: Option<Var> = None;
            for (branch, mem) in [(&l.cross_text, enc.text), (&l.cross_speech, enc.speech)] {
                if let (Some(a), Some(m)) = (branch, mem) {
                    let c = self.mha(t, a, q, m, false);
                    cross = Some(match cross {
                        Some(acc) => t.add(acc, c),
                        None => c,
                    });
                }
            }
            if let Some(c) = cross {
                let c = self.dropout(t, c, &mut rng);
                y = t.add(y, c);
            }

            let h = t.layer_norm(y, l.ln_ffn.g, l.ln_ffn.b);
            let f = self.ffn(t, l.ffn_in, l.ffn_out, h, &mut rng);
            let f = self.dropout(t, f, &mut rng);
            y = t.add(y, f);
        }
        let y = t.layer_norm(y, self.dec_norm.g, self.dec_norm.b);
        let e = t.param(self.embed);
        Ok(t.matmul(y, false, e, true))
    }

    /// Inference-mode forward pass.
    pub fn forward<T: Scalar>(
        &self,
        params: &Parameters<T>,
        input: &ModelInput,
        prefix: &[u32],
    ) -> Result<ForwardOutput<T>, NeuralError> {
        let mut t = Tape::new(params);
        let enc = self.encode(&mut t, input, None)?;
        let logits = self.decode(&mut t, &enc, prefix, None)?;
        Ok(ForwardOutput {
            logits: t.value(logits).clone(),
            ctc_logits: enc.ctc_logits.map(|v| t.value(v).clone()),
        })
    }
}
