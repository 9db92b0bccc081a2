use ndarray::{s, Array1, Array2, Array3, ArrayView2, ArrayViewMut1, ArrayViewMut2, ArrayViewMut3, Axis};

use super::layers::{
    avg_pool, avg_pool_backward, conv_backward, conv_forward, fdy_backward, fdy_forward, from_sequence, gru_backward,
    gru_forward, linear_softmax, linear_softmax_backward, sigmoid, silu_backward, silu_forward, to_sequence, FdyCache,
    FdyGrads, FdyParams, GruCache, GruGrads, GruWeights,
};
use super::params::{split_slots, ParamStore, Slot};
use super::{ModelConfig, Pool, Posteriors, Real};
use crate::error::{Error, Result};
use crate::frontend::LogMel;

#[derive(Debug, Clone)]
struct ConvLayer {
    w: Slot,
    b: Slot,
    cin: usize,
    cout: usize,
    kernel: usize,
    pool: Pool,
}

#[derive(Debug, Clone)]
struct FdyLayer {
    kernels: Slot,
    biases: Slot,
    attention: Option<(Slot, Slot)>,
    cin: usize,
    cout: usize,
    kernel: usize,
    basis: usize,
    pool: Pool,
}

#[derive(Debug, Clone)]
struct GruLayer {
    w_ih: Slot,
    w_hh: Slot,
    b_ih: Slot,
    b_hh: Slot,
    input: usize,
    hidden: usize,
}

#[derive(Debug, Clone)]
struct Branch {
    blocks: Vec<FdyLayer>,
    forward: GruLayer,
    backward: GruLayer,
    head_w: Slot,
    head_b: Slot,
    classes: usize,
    freq_out: usize,
}

/// The shared block plus the SED branch and an optional ACC branch, with all
/// parameters in one [`ParamStore`].
#[derive(Debug, Clone)]
pub struct ModelGraph<R> {
    config: ModelConfig,
    seed: u64,
    params: ParamStore<R>,
    shared: ConvLayer,
    sed: Branch,
    acc: Option<Branch>,
    acc_offset: usize,
}

/// Gradients of a scalar loss with respect to one branch's outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchGrads {
    pub frame: Array2<f64>,
    pub clip: Array1<f64>,
}

impl BranchGrads {
    pub fn zeros(frames: usize, classes: usize) -> Self {
        BranchGrads {
            frame: Array2::zeros((frames, classes)),
            clip: Array1::zeros(classes),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputGrads {
    pub sed: BranchGrads,
    pub acc: Option<BranchGrads>,
}

struct ConvTape<R> {
    cols: Array2<R>,
    pre: Array3<R>,
    in_dims: (usize, usize, usize),
}

struct FdyTape<R> {
    cache: FdyCache<R>,
    pre: Array3<R>,
    in_dims: (usize, usize, usize),
}

struct BranchTape<R> {
    blocks: Vec<FdyTape<R>>,
    fwd: GruCache<R>,
    bwd: GruCache<R>,
    rnn_out: Array2<R>,
    probs: Array2<R>,
    clip: Array1<R>,
}

/// Intermediate values of one forward pass, consumed by the backward pass.
pub struct Tape<R> {
    shared: ConvTape<R>,
    sed: BranchTape<R>,
    acc: Option<BranchTape<R>>,
}

fn register_gru<R: Real>(p: &mut ParamStore<R>, prefix: &str, input: usize, hidden: usize, seed: u64) -> GruLayer {
    GruLayer {
        w_ih: p.register(&format!("{prefix}.w_ih"), &[input, 3 * hidden], hidden, seed),
        w_hh: p.register(&format!("{prefix}.w_hh"), &[hidden, 3 * hidden], hidden, seed),
        b_ih: p.register(&format!("{prefix}.b_ih"), &[3 * hidden], hidden, seed),
        b_hh: p.register(&format!("{prefix}.b_hh"), &[3 * hidden], hidden, seed),
        input,
        hidden,
    }
}

fn register_branch<R: Real>(p: &mut ParamStore<R>, c: &ModelConfig, name: &str, classes: usize, seed: u64) -> Branch {
    let mut cin = c.shared_block.channels;
    let mut freq = c.mel_bins.div_ceil(c.shared_block.pool.freq);
    let mut blocks = Vec::new();
    for (i, b) in c.branch_blocks.iter().enumerate() {
        let rows = b.kernel * b.kernel * cin;
        let prefix = format!("{name}.block{i}");
        let kernels = p.register(&format!("{prefix}.kernels"), &[b.basis, rows, b.channels], rows, seed);
        let biases = p.register(&format!("{prefix}.biases"), &[b.basis, b.channels], rows, seed);
        let attention = (b.basis > 1).then(|| {
            (
                p.register(&format!("{prefix}.attention.weight"), &[cin, b.basis], cin, seed),
                p.register(&format!("{prefix}.attention.bias"), &[b.basis], cin, seed),
            )
        });
        blocks.push(FdyLayer {
            kernels,
            biases,
            attention,
            cin,
            cout: b.channels,
            kernel: b.kernel,
            basis: b.basis,
            pool: b.pool,
        });
        cin = b.channels;
        freq = freq.div_ceil(b.pool.freq);
    }
    let h = c.recurrent_hidden;
    let input = freq * cin;
    let forward = register_gru(p, &format!("{name}.gru.forward"), input, h, seed);
    let backward = register_gru(p, &format!("{name}.gru.backward"), input, h, seed);
    Branch {
        blocks,
        forward,
        backward,
        head_w: p.register(&format!("{name}.head.weight"), &[2 * h, classes], 2 * h, seed),
        head_b: p.register(&format!("{name}.head.bias"), &[classes], 2 * h, seed),
        classes,
        freq_out: freq,
    }
}

impl FdyLayer {
    fn params<'a, R: Real>(&self, data: &'a [R], temperature: f64) -> FdyParams<'a, R> {
        let rows = self.kernel * self.kernel * self.cin;
        FdyParams {
            kernels: self.kernels.v3(data, (self.basis, rows, self.cout)),
            biases: self.biases.v2(data, (self.basis, self.cout)),
            attention: self
                .attention
                .map(|(w, b)| (w.v2(data, (self.cin, self.basis)), b.v1(data))),
            kernel: self.kernel,
            temperature,
        }
    }
}

impl GruLayer {
    fn weights<'a, R: Real>(&self, data: &'a [R]) -> GruWeights<'a, R> {
        let h3 = 3 * self.hidden;
        GruWeights {
            w_ih: self.w_ih.v2(data, (self.input, h3)),
            w_hh: self.w_hh.v2(data, (self.hidden, h3)),
            b_ih: self.b_ih.v1(data),
            b_hh: self.b_hh.v1(data),
        }
    }

    fn backward<R: Real>(&self, data: &[R], cache: &GruCache<R>, dout: &Array2<R>, grads: &mut [R]) -> Array2<R> {
        let h3 = 3 * self.hidden;
        let mut parts = split_slots(grads, &[self.w_ih, self.w_hh, self.b_ih, self.b_hh]).into_iter();
        let mut g = GruGrads {
            w_ih: ArrayViewMut2::from_shape((self.input, h3), parts.next().expect("4 slots")).expect("shape"),
            w_hh: ArrayViewMut2::from_shape((self.hidden, h3), parts.next().expect("4 slots")).expect("shape"),
            b_ih: ArrayViewMut1::from(parts.next().expect("4 slots")),
            b_hh: ArrayViewMut1::from(parts.next().expect("4 slots")),
        };
        gru_backward(&self.weights(data), cache, dout, &mut g)
    }
}

fn probs_f64<R: Real>(a: &Array2<R>) -> Array2<f64> {
    a.mapv(|v| v.as_f64())
}

impl<R: Real> ModelGraph<R> {
    /// Builds and initialises the network. Parameters are drawn per tensor
    /// name, so the shared block and SED branch are identical between the
    /// two-branch model and its single-branch counterpart.
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let sb = config.shared_block;
        let rows = sb.kernel * sb.kernel;
        let shared = ConvLayer {
            w: params.register("shared.conv.weight", &[rows, sb.channels], rows, seed),
            b: params.register("shared.conv.bias", &[sb.channels], rows, seed),
            cin: 1,
            cout: sb.channels,
            kernel: sb.kernel,
            pool: sb.pool,
        };
        let sed = register_branch(&mut params, config, "sed", config.sed_classes, seed);
        let acc_offset = params.len();
        let acc = config
            .has_acc()
            .then(|| register_branch(&mut params, config, "acc", config.acc_classes, seed));
        Ok(ModelGraph {
            config: config.clone(),
            seed,
            params,
            shared,
            sed,
            acc,
            acc_offset,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &ParamStore<R> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<R> {
        &mut self.params
    }

    pub fn has_acc(&self) -> bool {
        self.acc.is_some()
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Number of parameters that belong to the ACC branch (0 once stripped).
    pub fn acc_param_count(&self) -> usize {
        self.params.len() - self.acc_offset
    }

    /// Parameters of the shared block and SED branch, which are everything
    /// that survives [`strip_acc`](Self::strip_acc).
    pub fn sed_params(&self) -> &[R] {
        &self.params.data()[..self.acc_offset]
    }

    /// Removes the ACC branch. SED outputs are unchanged.
    pub fn strip_acc(&self) -> Result<Self> {
        if self.acc.is_none() {
            return Err(Error::AlreadyStripped);
        }
        let mut out = self.clone();
        out.params.truncate(self.acc_offset);
        out.acc = None;
        Ok(out)
    }

    pub fn forward(&self, f: &LogMel) -> Result<Posteriors> {
        self.forward_values(f.values.view())
    }

    /// Inference on a `frames x mel_bins` matrix.
    pub fn forward_values(&self, x: ArrayView2<f32>) -> Result<Posteriors> {
        Ok(self.forward_tape(x)?.0)
    }

    fn input(&self, x: ArrayView2<f32>) -> Result<Array3<R>> {
        let (frames, bins) = x.dim();
        if bins != self.config.mel_bins {
            return Err(Error::Shape(format!(
                "input has {bins} mel bins, model expects {}",
                self.config.mel_bins
            )));
        }
        if frames == 0 {
            return Err(Error::Shape("input has no frames".into()));
        }
        let t = x.t().mapv(|v| R::of(v as f64));
        Ok(t.insert_axis(Axis(2)).as_standard_layout().into_owned())
    }

    /// Forward pass that keeps what the backward pass needs.
    pub fn forward_tape(&self, x: ArrayView2<f32>) -> Result<(Posteriors, Tape<R>)> {
        let data = self.params.data();
        let x = self.input(x)?;
        let sh = &self.shared;
        let w = sh.w.v2(data, (sh.kernel * sh.kernel * sh.cin, sh.cout));
        let (pre, cols) = conv_forward(x.view(), w, sh.b.v1(data), sh.kernel);
        let h = avg_pool(&silu_forward(&pre), sh.pool);
        let shared = ConvTape {
            cols,
            pre,
            in_dims: x.dim(),
        };
        let sed = self.branch_forward(&self.sed, &h);
        let acc = self.acc.as_ref().map(|b| self.branch_forward(b, &h));
        let posteriors = Posteriors {
            sed_frame: probs_f64(&sed.probs),
            sed_clip: sed.clip.mapv(|v| v.as_f64()),
            acc_frame: acc.as_ref().map(|a| probs_f64(&a.probs)),
            acc_clip: acc.as_ref().map(|a| a.clip.mapv(|v| v.as_f64())),
        };
        Ok((posteriors, Tape { shared, sed, acc }))
    }

    fn branch_forward(&self, b: &Branch, input: &Array3<R>) -> BranchTape<R> {
        let data = self.params.data();
        let mut h = input.clone();
        let mut blocks = Vec::with_capacity(b.blocks.len());
        for layer in &b.blocks {
            let p = layer.params(data, self.config.attention_temperature);
            let (pre, cache) = fdy_forward(h.view(), &p);
            let in_dims = h.dim();
            h = avg_pool(&silu_forward(&pre), layer.pool);
            blocks.push(FdyTape { cache, pre, in_dims });
        }
        let seq = to_sequence(&h);
        let (hf, fwd) = gru_forward(seq.clone(), &b.forward.weights(data), false);
        let (hb, bwd) = gru_forward(seq, &b.backward.weights(data), true);
        let nh = b.forward.hidden;
        let mut rnn_out = Array2::zeros((hf.nrows(), 2 * nh));
        rnn_out.slice_mut(s![.., ..nh]).assign(&hf);
        rnn_out.slice_mut(s![.., nh..]).assign(&hb);
        let logits = rnn_out.dot(&b.head_w.v2(data, (2 * nh, b.classes))) + &b.head_b.v1(data);
        let probs = logits.mapv(sigmoid);
        let clip = linear_softmax(&probs);
        BranchTape {
            blocks,
            fwd,
            bwd,
            rnn_out,
            probs,
            clip,
        }
    }

    /// Accumulates parameter gradients into `grads` (same layout as the
    /// parameter store) given gradients with respect to the outputs.
    pub fn backward(&self, tape: &Tape<R>, out: &OutputGrads, grads: &mut [R]) -> Result<()> {
        if grads.len() != self.params.len() {
            return Err(Error::Shape(format!(
                "gradient buffer has {} entries, model has {}",
                grads.len(),
                self.params.len()
            )));
        }
        let mut dh = self.branch_backward(&self.sed, &tape.sed, &out.sed, grads)?;
        match (&self.acc, &tape.acc, &out.acc) {
            (Some(b), Some(t), Some(g)) => dh += &self.branch_backward(b, t, g, grads)?,
            (Some(_), _, None) | (None, None, None) => {}
            _ => return Err(Error::Shape("ACC gradients do not match the model's branches".into())),
        }
        let data = self.params.data();
        let sh = &self.shared;
        let st = &tape.shared;
        let dact = avg_pool_backward(&dh, st.pre.dim(), sh.pool);
        let dpre = silu_backward(&st.pre, &dact);
        let rows = sh.kernel * sh.kernel * sh.cin;
        let mut parts = split_slots(grads, &[sh.w, sh.b]).into_iter();
        conv_backward(
            &st.cols,
            &dpre,
            sh.w.v2(data, (rows, sh.cout)),
            st.in_dims,
            sh.kernel,
            ArrayViewMut2::from_shape((rows, sh.cout), parts.next().expect("2 slots")).expect("shape"),
            ArrayViewMut1::from(parts.next().expect("2 slots")),
        );
        Ok(())
    }

    fn branch_backward(&self, b: &Branch, t: &BranchTape<R>, g: &BranchGrads, grads: &mut [R]) -> Result<Array3<R>> {
        if g.frame.dim() != t.probs.dim() || g.clip.len() != b.classes {
            return Err(Error::Shape(format!(
                "output gradient {:?} does not match posteriors {:?}",
                g.frame.dim(),
                t.probs.dim()
            )));
        }
        let data = self.params.data();
        let mut dprob = g.frame.mapv(R::of);
        let dclip = g.clip.mapv(R::of);
        linear_softmax_backward(&t.probs, &t.clip, dclip.view(), &mut dprob);
        let dlogit = ndarray::Zip::from(&dprob)
            .and(&t.probs)
            .map_collect(|&d, &p| d * p * (R::one() - p));
        let nh = b.forward.hidden;
        {
            let mut gw = b.head_w.m2(grads, (2 * nh, b.classes));
            gw += &t.rnn_out.t().dot(&dlogit);
        }
        {
            let mut gb = b.head_b.m1(grads);
            gb += &dlogit.sum_axis(Axis(0));
        }
        let drnn = dlogit.dot(&b.head_w.v2(data, (2 * nh, b.classes)).t());
        let dh_f = drnn.slice(s![.., ..nh]).to_owned();
        let dh_b = drnn.slice(s![.., nh..]).to_owned();
        let mut dseq = b.forward.backward(data, &t.fwd, &dh_f, grads);
        dseq += &b.backward.backward(data, &t.bwd, &dh_b, grads);
        let mut dh = from_sequence(&dseq, b.freq_out);
        for (layer, tape) in b.blocks.iter().zip(&t.blocks).rev() {
            let dact = avg_pool_backward(&dh, tape.pre.dim(), layer.pool);
            let dpre = silu_backward(&tape.pre, &dact);
            let p = layer.params(data, self.config.attention_temperature);
            let rows = layer.kernel * layer.kernel * layer.cin;
            let mut slots = vec![layer.kernels, layer.biases];
            if let Some((w, b)) = layer.attention {
                slots.extend([w, b]);
            }
            let mut parts = split_slots(grads, &slots).into_iter();
            let kernels = ArrayViewMut3::from_shape((layer.basis, rows, layer.cout), parts.next().expect("slot")).expect("shape");
            let biases = ArrayViewMut2::from_shape((layer.basis, layer.cout), parts.next().expect("slot")).expect("shape");
            let attention = match (parts.next(), parts.next()) {
                (Some(w), Some(b)) => Some((
                    ArrayViewMut2::from_shape((layer.cin, layer.basis), w).expect("shape"),
                    ArrayViewMut1::from(b),
                )),
                _ => None,
            };
            let mut fg = FdyGrads {
                kernels,
                biases,
                attention,
            };
            dh = fdy_backward(&p, &tape.cache, &dpre, &mut fg);
            debug_assert_eq!(dh.dim(), tape.in_dims);
        }
        Ok(dh)
    }

    /// Same network in another precision (used for gradient checking).
    pub fn cast<S: Real>(&self) -> ModelGraph<S> {
        let mut out = ModelGraph::<S>::build(&self.config, self.seed).expect("config already validated");
        if self.acc.is_none() {
            out = out.strip_acc().expect("fresh build has ACC when self had it");
        }
        for (d, s) in out.params.data_mut().iter_mut().zip(self.params.data()) {
            *d = S::of(s.as_f64());
        }
        out
    }
}
