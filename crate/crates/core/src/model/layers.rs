use rand::Rng;

use crate::autodiff::{ConvGeom, Graph, ParamId, ParamStore, Real, Tensor, Var};
use crate::error::Result;

pub(crate) const NORM_EPS: f64 = 1e-8;

/// Weight and bias of a convolution.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Conv {
    pub w: ParamId,
    pub b: ParamId,
}

impl Conv {
    /// `cout x cin x k` weights.
    pub fn new<S: Real>(store: &mut ParamStore<S>, rng: &mut impl Rng, name: &str, cout: usize, cin: usize, k: usize) -> Result<Self> {
        Ok(Self {
            w: store.add_uniform(format!("{name}.w"), &[cout, cin, k], cin * k, rng)?,
            b: store.add_uniform(format!("{name}.b"), &[cout], cin * k, rng)?,
        })
    }

    /// `cin x cout x k` weights for a transposed convolution.
    pub fn transposed<S: Real>(store: &mut ParamStore<S>, rng: &mut impl Rng, name: &str, cin: usize, cout: usize, k: usize) -> Result<Self> {
        Ok(Self {
            w: store.add_uniform(format!("{name}.w"), &[cin, cout, k], cin * k, rng)?,
            b: store.add_uniform(format!("{name}.b"), &[cout], cin * k, rng)?,
        })
    }

    /// `c x 1 x k` depthwise weights.
    pub fn depthwise<S: Real>(store: &mut ParamStore<S>, rng: &mut impl Rng, name: &str, c: usize, k: usize) -> Result<Self> {
        Self::new(store, rng, name, c, 1, k)
    }

    pub fn apply<S: Real>(&self, g: &mut Graph<'_, S>, x: Var, geom: ConvGeom) -> Result<Var> {
        let (w, b) = (g.param(self.w), g.param(self.b));
        g.conv1d(x, w, Some(b), geom)
    }

    pub fn pointwise<S: Real>(&self, g: &mut Graph<'_, S>, x: Var) -> Result<Var> {
        self.apply(g, x, ConvGeom::new(1, 1, 0))
    }

    pub fn apply_transposed<S: Real>(&self, g: &mut Graph<'_, S>, x: Var, stride: usize) -> Result<Var> {
        let (w, b) = (g.param(self.w), g.param(self.b));
        g.conv_transpose1d(x, w, Some(b), stride, 0)
    }

    /// Stride-1 depthwise convolution keeping the frame count.
    pub fn apply_depthwise<S: Real>(&self, g: &mut Graph<'_, S>, x: Var, kernel: usize, dilation: usize) -> Result<Var> {
        let (w, b) = (g.param(self.w), g.param(self.b));
        g.depthwise_conv1d(x, w, Some(b), dilation, ConvGeom::same(kernel, dilation).padding)
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct PRelu(pub ParamId);

impl PRelu {
    pub fn new<S: Real>(store: &mut ParamStore<S>, name: &str) -> Result<Self> {
        Ok(Self(store.add(format!("{name}.slope"), Tensor::scalar(S::of(0.25)))?))
    }

    pub fn apply<S: Real>(&self, g: &mut Graph<'_, S>, x: Var) -> Result<Var> {
        let a = g.param(self.0);
        g.prelu(x, a)
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Norm {
    pub gain: ParamId,
    pub bias: ParamId,
    pub groups: usize,
}

impl Norm {
    pub fn new<S: Real>(store: &mut ParamStore<S>, name: &str, c: usize, groups: usize) -> Result<Self> {
        Ok(Self {
            gain: store.add(format!("{name}.gain"), Tensor::full(&[c], S::one()))?,
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[c]))?,
            groups,
        })
    }

    pub fn apply<S: Real>(&self, g: &mut Graph<'_, S>, x: Var) -> Result<Var> {
        let (gain, bias) = (g.param(self.gain), g.param(self.bias));
        g.group_norm(x, self.groups, gain, bias, NORM_EPS)
    }
}

/// Residual block: 1x1 expand, PReLU, norm, dilated depthwise, PReLU, norm,
/// then 1x1 residual and (optionally) 1x1 skip projections.
#[derive(Debug, Clone)]
pub(crate) struct DepthConvBlock {
    expand: Conv,
    act1: PRelu,
    norm1: Norm,
    depthwise: Conv,
    act2: PRelu,
    norm2: Norm,
    residual: Option<Conv>,
    skip: Option<Conv>,
    kernel: usize,
    dilation: usize,
}

impl DepthConvBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new<S: Real>(
        store: &mut ParamStore<S>,
        rng: &mut impl Rng,
        name: &str,
        channels: usize,
        hidden: usize,
        kernel: usize,
        dilation: usize,
        with_residual: bool,
        with_skip: bool,
    ) -> Result<Self> {
        Ok(Self {
            expand: Conv::new(store, rng, &format!("{name}.expand"), hidden, channels, 1)?,
            act1: PRelu::new(store, &format!("{name}.act1"))?,
            norm1: Norm::new(store, &format!("{name}.norm1"), hidden, 1)?,
            depthwise: Conv::depthwise(store, rng, &format!("{name}.depthwise"), hidden, kernel)?,
            act2: PRelu::new(store, &format!("{name}.act2"))?,
            norm2: Norm::new(store, &format!("{name}.norm2"), hidden, 1)?,
            residual: if with_residual {
                Some(Conv::new(store, rng, &format!("{name}.residual"), channels, hidden, 1)?)
            } else {
                None
            },
            skip: if with_skip {
                Some(Conv::new(store, rng, &format!("{name}.skip"), channels, hidden, 1)?)
            } else {
                None
            },
            kernel,
            dilation,
        })
    }

    #[cfg(test)]
    pub fn dilation(&self) -> usize {
        self.dilation
    }

    /// Returns the block output `x + residual` (just `x` without a residual
    /// projection) and the skip projection.
    pub fn apply<S: Real>(&self, g: &mut Graph<'_, S>, x: Var) -> Result<(Var, Option<Var>)> {
        let h = self.expand.pointwise(g, x)?;
        let h = self.act1.apply(g, h)?;
        let h = self.norm1.apply(g, h)?;
        let h = self.depthwise.apply_depthwise(g, h, self.kernel, self.dilation)?;
        let h = self.act2.apply(g, h)?;
        let h = self.norm2.apply(g, h)?;
        let out = match &self.residual {
            Some(res) => {
                let r = res.pointwise(g, h)?;
                g.add(x, r)?
            }
            None => x,
        };
        let skip = match &self.skip {
            Some(s) => Some(s.pointwise(g, h)?),
            None => None,
        };
        Ok((out, skip))
    }
}

/// `depth` blocks with dilations 1, 2, 4, ... The final stack of a separator
/// drops the residual projection of its last block, whose output is unused.
#[derive(Debug, Clone)]
pub(crate) struct Stack {
    pub blocks: Vec<DepthConvBlock>,
}

impl Stack {
    #[allow(clippy::too_many_arguments)]
    pub fn new<S: Real>(
        store: &mut ParamStore<S>,
        rng: &mut impl Rng,
        name: &str,
        depth: usize,
        channels: usize,
        hidden: usize,
        kernel: usize,
        last: bool,
    ) -> Result<Self> {
        let blocks = (0..depth)
            .map(|d| {
                let residual = !(last && d + 1 == depth);
                DepthConvBlock::new(store, rng, &format!("{name}.{d}"), channels, hidden, kernel, 1 << d, residual, true)
            })
            .collect::<Result<_>>()?;
        Ok(Self { blocks })
    }

    /// Output of the last block and the sum of all skip projections.
    pub fn apply<S: Real>(&self, g: &mut Graph<'_, S>, x: Var) -> Result<(Var, Var)> {
        let mut h = x;
        let mut skips: Option<Var> = None;
        for b in &self.blocks {
            let (out, skip) = b.apply(g, h)?;
            h = out;
            let s = skip.expect("stack blocks carry skip projections");
            skips = Some(match skips {
                Some(acc) => g.add(acc, s)?,
                None => s,
            });
        }
        Ok((h, skips.expect("stack has at least one block")))
    }
}

/// Q from one modality, K and V from the other, each through a depthwise
/// convolution.
#[derive(Debug, Clone)]
pub(crate) struct CrossAttention {
    pub q: Conv,
    pub k: Conv,
    pub v: Conv,
    kernel: usize,
}

/// Intermediate values of one cross-attention pass.
pub(crate) struct AttentionVars {
    #[cfg_attr(not(test), allow(dead_code))]
    pub weights: Var,
    pub attended: Var,
}

impl CrossAttention {
    pub fn new<S: Real>(store: &mut ParamStore<S>, rng: &mut impl Rng, name: &str, channels: usize, kernel: usize) -> Result<Self> {
        Ok(Self {
            q: Conv::depthwise(store, rng, &format!("{name}.q"), channels, kernel)?,
            k: Conv::depthwise(store, rng, &format!("{name}.k"), channels, kernel)?,
            v: Conv::depthwise(store, rng, &format!("{name}.v"), channels, kernel)?,
            kernel,
        })
    }

    pub fn apply<S: Real>(&self, g: &mut Graph<'_, S>, query_src: Var, kv_src: Var) -> Result<AttentionVars> {
        let q = self.q.apply_depthwise(g, query_src, self.kernel, 1)?;
        let k = self.k.apply_depthwise(g, kv_src, self.kernel, 1)?;
        let v = self.v.apply_depthwise(g, kv_src, self.kernel, 1)?;
        attend(g, q, k, v)
    }
}

/// `softmax_rows(Q K^T / sqrt(L)) V`.
pub(crate) fn attend<S: Real>(g: &mut Graph<'_, S>, q: Var, k: Var, v: Var) -> Result<AttentionVars> {
    let len = g.shape(q)[1];
    let logits = g.matmul_nt(q, k)?;
    let logits = g.scale(logits, 1.0 / (len as f64).sqrt());
    let weights = g.softmax_rows(logits)?;
    let attended = g.matmul(weights, v)?;
    Ok(AttentionVars { weights, attended })
}

/// One coupled layer: each branch attends to the other, adds its own input
/// and is normalized.
#[derive(Debug, Clone)]
pub(crate) struct CmcaLayer {
    pub audio_att: CrossAttention,
    pub audio_norm: Norm,
    pub eeg_att: CrossAttention,
    pub eeg_norm: Norm,
}

impl CmcaLayer {
    pub fn new<S: Real>(store: &mut ParamStore<S>, rng: &mut impl Rng, name: &str, channels: usize, kernel: usize, groups: usize) -> Result<Self> {
        Ok(Self {
            audio_att: CrossAttention::new(store, rng, &format!("{name}.audio_att"), channels, kernel)?,
            audio_norm: Norm::new(store, &format!("{name}.audio_norm"), channels, groups)?,
            eeg_att: CrossAttention::new(store, rng, &format!("{name}.eeg_att"), channels, kernel)?,
            eeg_norm: Norm::new(store, &format!("{name}.eeg_norm"), channels, groups)?,
        })
    }

    pub fn apply<S: Real>(&self, g: &mut Graph<'_, S>, a: Var, e: Var) -> Result<(Var, Var)> {
        let att_a = self.audio_att.apply(g, e, a)?.attended;
        let sum_a = g.add(a, att_a)?;
        let a_next = self.audio_norm.apply(g, sum_a)?;
        let att_e = self.eeg_att.apply(g, a, e)?.attended;
        let sum_e = g.add(e, att_e)?;
        let e_next = self.eeg_norm.apply(g, sum_e)?;
        Ok((a_next, e_next))
    }
}

/// Stacked coupled layers; layer outputs of each branch are summed and
/// concatenated with both inputs before a 1x1 projection.
#[derive(Debug, Clone)]
pub(crate) struct Cmca {
    pub layers: Vec<CmcaLayer>,
    pub out: Conv,
}

impl Cmca {
    pub fn new<S: Real>(store: &mut ParamStore<S>, rng: &mut impl Rng, n: usize, channels: usize, kernel: usize, groups: usize) -> Result<Self> {
        let layers = (0..n)
            .map(|i| CmcaLayer::new(store, rng, &format!("cmca.{i}"), channels, kernel, groups))
            .collect::<Result<_>>()?;
        let out = Conv::new(store, rng, "cmca.out", channels, 4 * channels, 1)?;
        Ok(Self { layers, out })
    }

    pub fn apply<S: Real>(&self, g: &mut Graph<'_, S>, a_x: Var, e_x: Var) -> Result<Var> {
        let (mut a, mut e) = (a_x, e_x);
        let (mut sum_a, mut sum_e): (Option<Var>, Option<Var>) = (None, None);
        for layer in &self.layers {
            let (a_i, e_i) = layer.apply(g, a, e)?;
            sum_a = Some(match sum_a {
                Some(s) => g.add(s, a_i)?,
                None => a_i,
            });
            sum_e = Some(match sum_e {
                Some(s) => g.add(s, e_i)?,
                None => e_i,
            });
            a = a_i;
            e = e_i;
        }
        let (sa, se) = (sum_a.expect("at least one layer"), sum_e.expect("at least one layer"));
        let cat = g.concat_rows(&[sa, se, a_x, e_x])?;
        self.out.pointwise(g, cat)
    }
}
