//! Attentional copula.
//!
//! Missing tokens are visited in a permutation order. The first one is
//! uniform on `[0, 1]`; every later one gets a piecewise-constant density
//! whose bin weights come from attention over the observed tokens and the
//! missing tokens that precede it. Training evaluates all factors at once
//! with a causal mask; sampling walks the permutation and caches the keys
//! and values of memory entries.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::autodiff::{log_sum_exp, Tape, Tensor, TensorError, Var};
use crate::nn::{
    activation, attention, merge_heads, split_heads, Forward, LayerNorm, Linear, Mlp, ParamId, ParamStore,
};
use crate::rng::RngStream;
use crate::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CopulaConfig {
    pub bins: usize,
    pub layers: usize,
    pub heads: usize,
    pub attention_dim: usize,
    /// Hidden layers of every small network (key, value, query, reshape,
    /// bin weights, flow parameters).
    pub mlp_layers: usize,
    pub mlp_dim: usize,
}

impl Default for CopulaConfig {
    fn default() -> Self {
        CopulaConfig {
            bins: 20,
            layers: 1,
            heads: 2,
            attention_dim: 16,
            mlp_layers: 1,
            mlp_dim: 16,
        }
    }
}

impl CopulaConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.bins == 0 || self.layers == 0 || self.mlp_layers == 0 || self.mlp_dim == 0 {
            return Err(ModelError::Config(
                "copula.bins, copula.layers, copula.mlp_layers and copula.mlp_dim must be positive",
            ));
        }
        if self.heads == 0 || !self.attention_dim.is_multiple_of(self.heads) || self.attention_dim == 0 {
            return Err(ModelError::Config(
                "copula.attention_dim must be a positive multiple of copula.heads",
            ));
        }
        Ok(())
    }

    /// Layer sizes `[input, hidden..., output]` of the small networks.
    pub fn mlp_sizes(&self, input: usize, output: usize) -> Vec<usize> {
        let mut sizes = vec![input];
        sizes.extend(core::iter::repeat_n(self.mlp_dim, self.mlp_layers));
        sizes.push(output);
        sizes
    }
}

/// `min(⌊u B⌋, B - 1)`: bins are half-open except the last, which holds 1.
pub fn bin_index(u: f64, bins: usize) -> usize {
    ((u * bins as f64) as usize).min(bins - 1)
}

/// Piecewise-constant density on `[0, 1]` with equal-width bins.
#[derive(Debug, Clone, PartialEq)]
pub struct BinDistribution {
    log_weights: Vec<f64>,
}

impl BinDistribution {
    /// Normalizes arbitrary logits.
    pub fn from_logits(logits: &[f64]) -> Self {
        let lse = log_sum_exp(logits);
        BinDistribution {
            log_weights: logits.iter().map(|l| l - lse).collect(),
        }
    }

    pub fn bins(&self) -> usize {
        self.log_weights.len()
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    pub fn log_density(&self, u: f64) -> Result<f64, ModelError> {
        if !(0.0..=1.0).contains(&u) {
            return Err(ModelError::OutsideUnitInterval(u));
        }
        let b = self.bins();
        Ok(libm::log(b as f64) + self.log_weights[bin_index(u, b)])
    }

    /// Picks a bin by its weight, then a uniform point inside it.
    pub fn sample(&self, rng: &mut RngStream) -> f64 {
        sample_bins(&self.log_weights, rng)
    }
}

fn sample_bins(log_weights: &[f64], rng: &mut RngStream) -> f64 {
    let b = log_weights.len();
    let r: f64 = rng.random();
    let mut acc = 0.0;
    let mut bin = b - 1;
    for (k, lw) in log_weights.iter().enumerate() {
        acc += libm::exp(*lw);
        if r < acc {
            bin = k;
            break;
        }
    }
    let v: f64 = rng.random();
    ((bin as f64 + v) / b as f64).min(1.0)
}

/// `u` rescaled to unit variance: U[0, 1] has standard deviation 1/√12.
const U_SCALE: f64 = 3.464_101_615_137_754_6;

/// Network of an encoding `z` and a scalar `u`, with the first layer split
/// so that `z` is projected once and `u` enters by broadcasting.
#[derive(Debug, Clone)]
struct PairNet {
    first: Linear,
    u_weight: ParamId,
    rest: Mlp,
}

impl PairNet {
    fn new(store: &mut ParamStore, name: &str, cfg: &CopulaConfig, input: usize, rng: &mut RngStream) -> Self {
        let sizes = cfg.mlp_sizes(input + 1, cfg.attention_dim);
        // One Glorot draw for the joint first layer over [z, u], split in two.
        let first = Linear::new(store, &alloc::format!("{name}.first"), input, sizes[1], rng);
        let joint = crate::nn::glorot(sizes[0], sizes[1], rng);
        let (wz, wu) = joint.data().split_at(input * sizes[1]);
        store.get_mut(first.weight).data_mut().copy_from_slice(wz);
        let u_weight = store.add(alloc::format!("{name}.first.u_weight"), Tensor::vector(wu.to_vec()));
        let rest = Mlp::new(store, &alloc::format!("{name}.rest"), &sizes[1..], rng);
        PairNet { first, u_weight, rest }
    }

    /// `z` is `[..., M, d]`; `u` is `[..., M, 1]` and may carry extra leading axes.
    /// `u` enters centred with unit variance, on the scale of the encodings.
    fn forward<'t>(&self, f: &Forward<'t, '_>, z: Var<'t>, u: Var<'t>) -> Result<Var<'t>, TensorError> {
        let u = u.offset(-0.5).scale(U_SCALE);
        let h = activation(self.first.forward(f, z)?.add(u.mul(f.p(self.u_weight))?)?);
        self.rest.forward(f, h)
    }
}

#[derive(Debug, Clone)]
struct CondLayer {
    key: PairNet,
    value: PairNet,
    query: Mlp,
    reshape: Mlp,
    norm: LayerNorm,
}

/// Parameters of the conditioner and the bin-weight head.
#[derive(Debug, Clone)]
pub struct Copula {
    pub config: CopulaConfig,
    layers: Vec<CondLayer>,
    dist: Mlp,
}

/// Keys and values of memory entries for every conditioner layer, stored
/// per sample stream so that new entries can be appended cheaply.
#[derive(Debug, Clone)]
pub struct MemoryCache {
    streams: usize,
    dim: usize,
    len: usize,
    /// `[layer][stream]` flat `len × dim` buffers.
    keys: Vec<Vec<Vec<f64>>>,
    values: Vec<Vec<Vec<f64>>>,
}

impl MemoryCache {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn streams(&self) -> usize {
        self.streams
    }

    fn tensor(&self, buf: &[Vec<f64>]) -> Tensor {
        let mut data = Vec::with_capacity(self.streams * self.len * self.dim);
        for s in buf {
            data.extend_from_slice(s);
        }
        Tensor::new(vec![self.streams, self.len, self.dim], data).expect("cache shape")
    }
}

impl Copula {
    pub fn new(
        store: &mut ParamStore,
        config: CopulaConfig,
        embed_dim: usize,
        rng: &mut RngStream,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        let att = config.attention_dim;
        let layers = (0..config.layers)
            .map(|i| {
                let input = if i == 0 { embed_dim } else { att };
                let name = alloc::format!("copula.layer{i}");
                CondLayer {
                    key: PairNet::new(store, &alloc::format!("{name}.key"), &config, embed_dim, rng),
                    value: PairNet::new(store, &alloc::format!("{name}.value"), &config, embed_dim, rng),
                    query: Mlp::new(
                        store,
                        &alloc::format!("{name}.query"),
                        &config.mlp_sizes(input, att),
                        rng,
                    ),
                    reshape: Mlp::new(
                        store,
                        &alloc::format!("{name}.reshape"),
                        &config.mlp_sizes(input, att),
                        rng,
                    ),
                    norm: LayerNorm::new(store, &alloc::format!("{name}.norm"), att),
                }
            })
            .collect();
        let dist = Mlp::new(store, "copula.dist", &config.mlp_sizes(att, config.bins), rng);
        // Start from the independence copula: a random head is far from flat
        // and the first steps spent flattening it tend to kill its ReLUs.
        let last = dist.layers.last().expect("mlp has an output layer");
        store.get_mut(last.weight).data_mut().fill(0.0);
        Ok(Copula { config, layers, dist })
    }

    /// Conditional bin log-weights `[G, Q, bins]` of queries `cur` (`[G, Q, d]`)
    /// attending to keys and values `[G, M, att]` per layer, with an
    /// optional hiding mask over `[G, Q, M]`.
    fn condition<'t>(
        &self,
        f: &Forward<'t, '_>,
        mut cur: Var<'t>,
        memory: &[(Var<'t>, Var<'t>)],
        mask: Option<&[bool]>,
    ) -> Result<Var<'t>, TensorError> {
        let h = self.config.heads;
        for (layer, &(k, v)) in self.layers.iter().zip(memory) {
            let q = split_heads(layer.query.forward(f, cur)?, h)?;
            let (att, _) = attention(q, split_heads(k, h)?, split_heads(v, h)?, mask)?;
            let skip = layer.reshape.forward(f, cur)?;
            cur = layer.norm.forward(f, merge_heads(att, h)?.add(skip)?)?;
        }
        Ok(self.dist.forward(f, cur)?.log_softmax())
    }

    /// Copula log-density of every window in a batch, shape `[B]`.
    ///
    /// `z` is `[B, N, d]` and `u` is `[B, N]`. `missing` lists, per window, the
    /// `Q` token indices that are missing and `rank` their positions in the
    /// permutation. `observed` flags every token.
    pub fn log_density_batched<'t>(
        &self,
        f: &Forward<'t, '_>,
        z: Var<'t>,
        u: Var<'t>,
        missing: &[usize],
        rank: &[usize],
        observed: &[bool],
    ) -> Result<Var<'t>, ModelError> {
        let zs = z.shape();
        let (b, n) = (zs[0], zs[1]);
        if b == 0 || !missing.len().is_multiple_of(b) || rank.len() != missing.len() || observed.len() != b * n {
            return Err(ModelError::Shape(
                "copula batch bookkeeping does not match the encodings",
            ));
        }
        let q = missing.len() / b;
        let uv = u.to_vec();
        for &x in &uv {
            if !(0.0..=1.0).contains(&x) {
                return Err(ModelError::OutsideUnitInterval(x));
            }
        }
        let mut token_rank = vec![usize::MAX; b * n];
        for w in 0..b {
            for k in 0..q {
                token_rank[w * n + missing[w * q + k]] = rank[w * q + k];
            }
        }
        let mut hidden = Vec::with_capacity(b * q * n);
        for w in 0..b {
            for k in 0..q {
                let r = rank[w * q + k];
                for j in 0..n {
                    let visible = observed[w * n + j] || token_rank[w * n + j] < r;
                    hidden.push(!visible);
                }
            }
        }
        let mem_u = u.reshape(&[b, n, 1])?;
        let mut memory = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            memory.push((layer.key.forward(f, z, mem_u)?, layer.value.forward(f, z, mem_u)?));
        }
        let zq = z.gather(1, missing, q)?;
        let log_w = self.condition(f, zq, &memory, Some(&hidden))?;
        let bins = self.config.bins;
        let mut index = Vec::with_capacity(b * q);
        let mut keep = Vec::with_capacity(b * q);
        for w in 0..b {
            for k in 0..q {
                index.push(bin_index(uv[w * n + missing[w * q + k]], bins));
                keep.push(if rank[w * q + k] == 0 { 0.0 } else { 1.0 });
            }
        }
        let picked = log_w.reshape(&[b * q, bins])?.gather(1, &index, 1)?.reshape(&[b, q])?;
        let tape = f.tape();
        let keep = tape.constant(Tensor::new(vec![b, q], keep)?);
        let terms = picked.offset(libm::log(bins as f64)).mul(keep)?;
        Ok(terms.sum_axis(1)?)
    }

    /// Keys and values of the entries `(z, u)` for `streams` sample streams.
    /// `z` is `[M, d]`; `u` holds `M` values shared by all streams, or
    /// `streams × M` values.
    pub fn memory(&self, store: &ParamStore, z: &Tensor, u: &[f64], streams: usize) -> Result<MemoryCache, ModelError> {
        let m = z.shape()[0];
        let dim = self.config.attention_dim;
        let mut cache = MemoryCache {
            streams,
            dim,
            len: 0,
            keys: vec![vec![Vec::new(); streams]; self.layers.len()],
            values: vec![vec![Vec::new(); streams]; self.layers.len()],
        };
        if m > 0 {
            self.append(store, &mut cache, z, u)?;
        }
        Ok(cache)
    }

    /// Appends entries with encodings `z` (`[M, d]`) and per-stream values
    /// `u` (`M` shared or `streams × M`).
    pub fn append(&self, store: &ParamStore, cache: &mut MemoryCache, z: &Tensor, u: &[f64]) -> Result<(), ModelError> {
        let m = z.shape()[0];
        let s = cache.streams;
        let shared = u.len() == m;
        if !shared && u.len() != s * m {
            return Err(ModelError::Shape("memory values do not match the encodings"));
        }
        if u.iter().any(|x| !(0.0..=1.0).contains(x)) {
            return Err(ModelError::OutsideUnitInterval(
                u.iter().copied().find(|x| !(0.0..=1.0).contains(x)).unwrap_or(f64::NAN),
            ));
        }
        let tape = Tape::new();
        let bound = store.bind(&tape, false);
        let f = Forward::eval(&bound);
        let zv = tape.constant(z.clone());
        let g = if shared { 1 } else { s };
        let uv = tape.constant(Tensor::new(vec![g, m, 1], u.to_vec())?);
        let dim = cache.dim;
        for (l, layer) in self.layers.iter().enumerate() {
            for (buf, net) in [(&mut cache.keys[l], &layer.key), (&mut cache.values[l], &layer.value)] {
                let out = net.forward(&f, zv, uv)?.to_vec();
                for (st, b) in buf.iter_mut().enumerate() {
                    let src = if shared { 0 } else { st };
                    b.extend_from_slice(&out[src * m * dim..(src + 1) * m * dim]);
                }
            }
        }
        cache.len += m;
        Ok(())
    }

    /// Conditional bin log-weights `[streams][bins]` of a target with encoding
    /// `z_target` (`d` values) given the cached memory.
    pub fn conditioner(
        &self,
        store: &ParamStore,
        z_target: &[f64],
        cache: &MemoryCache,
    ) -> Result<Vec<Vec<f64>>, ModelError> {
        if cache.is_empty() {
            return Err(ModelError::EmptyMemory);
        }
        let s = cache.streams;
        let tape = Tape::new();
        let bound = store.bind(&tape, false);
        let f = Forward::eval(&bound);
        let d = z_target.len();
        let mut zt = Vec::with_capacity(s * d);
        for _ in 0..s {
            zt.extend_from_slice(z_target);
        }
        let cur = tape.constant(Tensor::new(vec![s, 1, d], zt)?);
        let memory: Vec<(Var, Var)> = (0..self.layers.len())
            .map(|l| {
                (
                    tape.constant(cache.tensor(&cache.keys[l])),
                    tape.constant(cache.tensor(&cache.values[l])),
                )
            })
            .collect();
        let log_w = self.condition(&f, cur, &memory, None)?.to_vec();
        Ok(log_w.chunks(self.config.bins).map(<[f64]>::to_vec).collect())
    }

    /// Walks the permutation over the missing tokens. `z_missing` is
    /// `[Q, d]` and `perm[k]` is the missing token visited at step `k`. With
    /// `given` (`streams × Q` values) the walk scores those values and returns
    /// their log-densities per stream; otherwise it draws them.
    pub fn walk(
        &self,
        store: &ParamStore,
        mut cache: MemoryCache,
        z_missing: &Tensor,
        perm: &[usize],
        given: Option<&[f64]>,
        rng: &mut RngStream,
    ) -> Result<(Vec<f64>, Vec<f64>), ModelError> {
        let s = cache.streams;
        let (q, d) = (z_missing.shape()[0], z_missing.shape()[1]);
        check_permutation(perm, q)?;
        if let Some(g) = given {
            if g.len() != s * q {
                return Err(ModelError::Shape("given values must hold streams × missing entries"));
            }
        }
        let mut u = vec![0.0; s * q];
        let mut log_density = vec![0.0; s];
        for (k, &t) in perm.iter().enumerate() {
            let zt = &z_missing.data()[t * d..(t + 1) * d];
            let weights = if k == 0 {
                None
            } else {
                Some(self.conditioner(store, zt, &cache)?)
            };
            let mut drawn = Vec::with_capacity(s);
            for st in 0..s {
                let v = match (given, &weights) {
                    (Some(g), w) => {
                        let v = g[st * q + t];
                        if !(0.0..=1.0).contains(&v) {
                            return Err(ModelError::OutsideUnitInterval(v));
                        }
                        if let Some(w) = w {
                            log_density[st] +=
                                libm::log(self.config.bins as f64) + w[st][bin_index(v, self.config.bins)];
                        }
                        v
                    }
                    (None, Some(w)) => sample_bins(&w[st], rng),
                    (None, None) => rng.random(),
                };
                u[st * q + t] = v;
                drawn.push(v);
            }
            if k + 1 < q {
                let ztensor = Tensor::new(vec![1, d], zt.to_vec())?;
                self.append(store, &mut cache, &ztensor, &drawn)?;
            }
        }
        Ok((u, log_density))
    }
}

pub fn check_permutation(perm: &[usize], q: usize) -> Result<(), ModelError> {
    let mut seen = vec![false; q];
    if perm.len() != q {
        return Err(ModelError::Invalid(alloc::format!(
            "permutation of length {} for {q} entries",
            perm.len()
        )));
    }
    for &p in perm {
        if p >= q || seen[p] {
            return Err(ModelError::Invalid(alloc::format!("{perm:?} is not a permutation")));
        }
        seen[p] = true;
    }
    Ok(())
}

/// Uniformly random permutation of `0..q`.
pub fn random_permutation(q: usize, rng: &mut RngStream) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut p: Vec<usize> = (0..q).collect();
    p.shuffle(rng);
    p
}
