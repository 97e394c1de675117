//! Desk-scale end-to-end run: a small convolutional backbone with CF-AA
//! blocks, trained with batch-hard triplet plus cross-entropy on synthetic
//! tracklets and evaluated by clip-averaged retrieval.

mod conv;
mod data;

pub use conv::{Conv2d, ConvCache};
pub use data::{
    augment_clip, flip_frame, Appearance, SyntheticIdentityDataset, ToyDataConfig, ToyTracklet,
};

use crate::aggregation::{
    mask_downsample, masked_avg_pool, masked_avg_pool_backward, temporal_mean, BatchNorm,
    ValidityMask,
};
use crate::attention::{
    cfaa_backward_cached, cfaa_forward_cached, AttentionConfig, CfaaCache, CfaaParams, Encoding,
    Extents,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalDataset, EvalResult, Protocol, TrackletMeta};
use crate::losses::{batch_hard_triplet, cross_entropy, BatchLabels, DEFAULT_MARGIN};
use crate::params::Parameters;
use crate::rng::SeededRng;
use crate::tensor::Tensor;

/// CF-AA settings for one insertion point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyAttention {
    /// Index of the conv block the module follows.
    pub after: usize,
    pub scales: usize,
    pub heads: usize,
    pub encoding: Encoding,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyModelSpec {
    pub channels: Vec<usize>,
    pub strides: Vec<usize>,
    pub attention: Vec<ToyAttention>,
    pub classes: usize,
    pub frame_hw: (usize, usize),
    /// Frames per clip, in training and at test time.
    pub clip_len: usize,
}

impl Default for ToyModelSpec {
    fn default() -> Self {
        Self {
            channels: vec![12, 24, 32],
            strides: vec![1, 2, 1],
            attention: vec![ToyAttention {
                after: 2,
                scales: 4,
                heads: 2,
                encoding: Encoding::Relative,
            }],
            classes: 20,
            frame_hw: (32, 16),
            clip_len: 6,
        }
    }
}

impl ToyModelSpec {
    /// Same backbone without attention.
    pub fn baseline(&self) -> Self {
        Self {
            attention: Vec::new(),
            ..self.clone()
        }
    }

    /// Spatial size after each conv block.
    pub fn feature_hw(&self) -> Vec<(usize, usize)> {
        let mut hw = self.frame_hw;
        self.strides
            .iter()
            .map(|&s| {
                hw = ((hw.0 - 1) / s + 1, (hw.1 - 1) / s + 1);
                hw
            })
            .collect()
    }

    /// Attention configs in insertion order: `c_qk = C/2`, `c_out = C`.
    pub fn attention_configs(&self) -> Result<Vec<AttentionConfig>> {
        let hw = self.feature_hw();
        self.attention
            .iter()
            .map(|a| {
                let c = *self
                    .channels
                    .get(a.after)
                    .ok_or_else(|| Error::config(format!("no conv block {} to follow", a.after)))?;
                let cfg = AttentionConfig {
                    c_in: c,
                    c_qk: c / 2,
                    c_out: c,
                    heads: a.heads,
                    scales: a.scales,
                    encoding: a.encoding,
                    extents: Extents::new(self.clip_len, hw[a.after].0, hw[a.after].1),
                };
                cfg.validate()?;
                Ok(cfg)
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.channels.len() != self.strides.len() {
            return Err(Error::config(
                "channels and strides must be non-empty and of equal length",
            ));
        }
        if self.channels.contains(&0)
            || self.strides.contains(&0)
            || self.classes == 0
            || self.clip_len == 0
        {
            return Err(Error::config("sizes must be positive"));
        }
        let mut afters: Vec<usize> = self.attention.iter().map(|a| a.after).collect();
        afters.dedup();
        if afters.len() != self.attention.len() || afters.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config(
                "attention insertion points must be strictly increasing",
            ));
        }
        let (h, w) = *self.feature_hw().last().expect("non-empty");
        if self.frame_hw.0 % h != 0 || self.frame_hw.1 % w != 0 {
            return Err(Error::config(
                "frame size must be a multiple of the final feature size",
            ));
        }
        self.attention_configs().map(|_| ())
    }

    pub fn feature_dim(&self) -> usize {
        *self.channels.last().expect("validated")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    pub spec: ToyModelSpec,
    pub convs: Vec<Conv2d>,
    pub attention: Vec<CfaaParams>,
    attention_configs: Vec<AttentionConfig>,
    pub bn: BatchNorm,
    /// `[classes, C]`, no bias.
    pub classifier: Tensor,
}

impl Parameters for ToyModel {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        for (i, c) in self.convs.iter().enumerate() {
            c.collect(&format!("{prefix}conv{i}."), out);
        }
        for (i, a) in self.attention.iter().enumerate() {
            a.collect(&format!("{prefix}cfaa{i}."), out);
        }
        out.push((format!("{prefix}bn.gamma"), &self.bn.gamma));
        out.push((format!("{prefix}bn.beta"), &self.bn.beta));
        out.push((format!("{prefix}classifier"), &self.classifier));
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        for (i, c) in self.convs.iter_mut().enumerate() {
            c.collect_mut(&format!("{prefix}conv{i}."), out);
        }
        for (i, a) in self.attention.iter_mut().enumerate() {
            a.collect_mut(&format!("{prefix}cfaa{i}."), out);
        }
        out.push((format!("{prefix}bn.gamma"), &mut self.bn.gamma));
        out.push((format!("{prefix}bn.beta"), &mut self.bn.beta));
        out.push((format!("{prefix}classifier"), &mut self.classifier));
    }
}

enum Stage {
    Conv(Vec<(ConvCache, Tensor)>),
    Attn(CfaaCache),
}

/// Everything the backward pass of one clip needs.
pub struct ClipCache {
    stages: Vec<Stage>,
    pooled_mask: ValidityMask,
}

fn stack_frames(frames: &[Tensor]) -> Result<Tensor> {
    let parts: Vec<Tensor> = frames
        .iter()
        .map(|f| {
            let mut s = vec![1];
            s.extend_from_slice(f.shape());
            f.reshape(&s)
        })
        .collect::<Result<_>>()?;
    Tensor::concat0(&parts)
}

fn split_frames(x: &Tensor) -> Result<Vec<Tensor>> {
    (0..x.shape()[0])
        .map(|t| x.narrow0(t, 1)?.reshape(&x.shape()[1..]))
        .collect()
}

impl ToyModel {
    pub fn init(spec: &ToyModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = SeededRng::new(seed);
        let mut c_in = 3;
        let convs = spec
            .channels
            .iter()
            .zip(&spec.strides)
            .map(|(&c, &s)| {
                let conv = Conv2d::init(c_in, c, 3, s, &mut rng);
                c_in = c;
                conv
            })
            .collect();
        let attention_configs = spec.attention_configs()?;
        let mut attention = Vec::with_capacity(attention_configs.len());
        for cfg in &attention_configs {
            let mut p = CfaaParams::init(cfg, &mut rng)?;
            // Start as the identity map so the backbone trains from a sane state.
            p.w_o.data_mut().fill(0.0);
            attention.push(p);
        }
        let d = spec.feature_dim();
        Ok(Self {
            spec: spec.clone(),
            convs,
            attention,
            attention_configs,
            bn: BatchNorm::new(d),
            classifier: rng.normal_tensor(&[spec.classes, d], 0.01),
        })
    }

    fn check_clip(&self, frames: &[Tensor], mask: &ValidityMask) -> Result<()> {
        let (h, w) = self.spec.frame_hw;
        if frames.len() != self.spec.clip_len || mask.frames() != frames.len() {
            return Err(Error::invalid(format!(
                "clips must hold {} frames, got {} (mask {})",
                self.spec.clip_len,
                frames.len(),
                mask.frames()
            )));
        }
        if (mask.height(), mask.width()) != (h, w) {
            return Err(Error::shape(
                "toy mask",
                &[mask.height(), mask.width()],
                &[h, w],
            ));
        }
        for f in frames {
            if f.shape() != [3, h, w] {
                return Err(Error::shape("toy frame", f.shape(), &[3, h, w]));
            }
        }
        Ok(())
    }

    /// Tracklet-level feature `f_pre` of one clip, with the backward cache.
    pub fn forward_clip(
        &self,
        frames: &[Tensor],
        mask: &ValidityMask,
    ) -> Result<(Tensor, ClipCache)> {
        self.check_clip(frames, mask)?;
        let hw = self.spec.frame_hw.0 * self.spec.frame_hw.1;
        // Inputs are centred; padded pixels are zeroed so nothing outside the
        // mask reaches the features.
        let mut feats: Vec<Tensor> = frames
            .iter()
            .enumerate()
            .map(|(t, f)| {
                let m = mask.frame(t);
                let mut x = f.clone();
                for (i, v) in x.data_mut().iter_mut().enumerate() {
                    *v = if m[i % hw] { *v - 0.5 } else { 0.0 };
                }
                x
            })
            .collect();
        let mut stages = Vec::new();
        let mut next_attn = 0;
        for (i, conv) in self.convs.iter().enumerate() {
            let mut caches = Vec::with_capacity(feats.len());
            for f in feats.iter_mut() {
                let (y, cache) = conv.forward(f)?;
                let y = y.map(|v| v.max(0.0));
                *f = y.clone();
                caches.push((cache, y));
            }
            stages.push(Stage::Conv(caches));
            if self
                .spec
                .attention
                .get(next_attn)
                .is_some_and(|a| a.after == i)
            {
                let x = stack_frames(&feats)?.permute(&[1, 0, 2, 3])?;
                let (y, cache) = cfaa_forward_cached(
                    &x,
                    &self.attention[next_attn],
                    &self.attention_configs[next_attn],
                )?;
                feats = split_frames(&y.permute(&[1, 0, 2, 3])?)?;
                stages.push(Stage::Attn(cache));
                next_attn += 1;
            }
        }
        let stacked = stack_frames(&feats)?;
        let (fh, fw) = (stacked.shape()[2], stacked.shape()[3]);
        let pooled_mask = mask_downsample(mask, (fh, fw))?;
        let f_pre = temporal_mean(&masked_avg_pool(&stacked, &pooled_mask)?)?;
        Ok((
            f_pre,
            ClipCache {
                stages,
                pooled_mask,
            },
        ))
    }

    /// Accumulates parameter gradients of `<g_pre, f_pre>` into `grads`.
    pub fn backward_clip(
        &self,
        cache: &ClipCache,
        g_pre: &Tensor,
        grads: &mut ToyModel,
    ) -> Result<()> {
        let t = cache.pooled_mask.frames();
        let c = g_pre.len();
        let per_frame = Tensor::from_vec(
            &[t, c],
            (0..t)
                .flat_map(|_| g_pre.data().iter().map(|g| g / t as f64))
                .collect(),
        )?;
        let mut g = split_frames(&masked_avg_pool_backward(&per_frame, &cache.pooled_mask)?)?;
        let mut conv_idx = self.convs.len();
        let mut attn_idx = self.attention.len();
        for stage in cache.stages.iter().rev() {
            match stage {
                Stage::Attn(ac) => {
                    attn_idx -= 1;
                    let up = stack_frames(&g)?.permute(&[1, 0, 2, 3])?;
                    let bundle = cfaa_backward_cached(
                        ac,
                        &self.attention[attn_idx],
                        &self.attention_configs[attn_idx],
                        &up,
                    )?;
                    for ((_, dst), (_, src)) in grads.attention[attn_idx]
                        .named_mut()
                        .into_iter()
                        .zip(bundle.params.named())
                    {
                        dst.add_assign(src)?;
                    }
                    g = split_frames(&bundle.input.permute(&[1, 0, 2, 3])?)?;
                }
                Stage::Conv(caches) => {
                    conv_idx -= 1;
                    let conv = &self.convs[conv_idx];
                    for (gf, (cc, y)) in g.iter_mut().zip(caches) {
                        let gy = Tensor::from_vec(
                            y.shape(),
                            gf.data()
                                .iter()
                                .zip(y.data())
                                .map(|(g, y)| if *y > 0.0 { *g } else { 0.0 })
                                .collect(),
                        )?;
                        let (gw, gb, gx) = conv.backward(cc, &gy, conv_idx > 0)?;
                        grads.convs[conv_idx].weight.add_assign(&gw)?;
                        grads.convs[conv_idx].bias.add_assign(&gb)?;
                        if let Some(gx) = gx {
                            *gf = gx;
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Average of clip-level `f_pre` over consecutive clips covering the
    /// tracklet; a trailing remainder is covered by one final clip aligned
    /// to the end.
    pub fn tracklet_feature(&self, tracklet: &ToyTracklet) -> Result<Tensor> {
        let n = tracklet.len();
        let t = self.spec.clip_len;
        if n < t {
            return Err(Error::invalid(format!(
                "tracklet {} has {n} frames, fewer than a clip",
                tracklet.tid
            )));
        }
        let mut starts: Vec<usize> = (0..=n - t).step_by(t).collect();
        if n % t != 0 {
            starts.push(n - t);
        }
        let mut acc = Tensor::zeros(&[self.spec.feature_dim()]);
        for &s in &starts {
            let (frames, mask) = tracklet.clip(s, t)?;
            acc.add_assign(&self.forward_clip(&frames, &mask)?.0)?;
        }
        Ok(acc.scale(1.0 / starts.len() as f64))
    }

    /// Retrieval embedding: batch-normalised tracklet feature.
    pub fn embed(&self, tracklet: &ToyTracklet) -> Result<Tensor> {
        self.bn.forward_eval(&self.tracklet_feature(tracklet)?)
    }

    /// Combined loss of one batch of clips; accumulates parameter gradients
    /// into `grads` and updates the batch-norm running statistics.
    pub fn loss_and_grads(
        &mut self,
        clips: &[(Vec<Tensor>, ValidityMask)],
        labels: &[usize],
        cfg: &TrainConfig,
        grads: &mut ToyModel,
    ) -> Result<f64> {
        let d = self.spec.feature_dim();
        let mut rows = Vec::with_capacity(clips.len() * d);
        let mut caches = Vec::with_capacity(clips.len());
        for (frames, mask) in clips {
            let (f, c) = self.forward_clip(frames, mask)?;
            rows.extend_from_slice(f.data());
            caches.push(c);
        }
        let f_pre = Tensor::from_vec(&[clips.len(), d], rows)?;
        let mut loss = 0.0;
        let mut g_pre = Tensor::zeros(f_pre.shape());
        if cfg.triplet {
            let out = batch_hard_triplet(&f_pre, &BatchLabels::new(labels.to_vec())?, cfg.margin)?;
            loss += out.loss;
            g_pre.add_assign(&out.grad)?;
        }
        if cfg.cross_entropy {
            let (f_post, bn_cache) = self.bn.forward_train(&f_pre)?;
            let logits = f_post.matmul(&self.classifier.transpose2()?)?;
            let out = cross_entropy(&logits, labels)?;
            loss += out.loss;
            grads
                .classifier
                .add_assign(&out.grad.transpose2()?.matmul(&f_post)?)?;
            let g_post = out.grad.matmul(&self.classifier)?;
            let (gx, gg, gb) = self.bn.backward(&bn_cache, &g_post)?;
            grads.bn.gamma.add_assign(&gg)?;
            grads.bn.beta.add_assign(&gb)?;
            g_pre.add_assign(&gx)?;
        } else {
            // Keep the running statistics meaningful for retrieval.
            self.bn.forward_train(&f_pre)?;
        }
        for (b, cache) in caches.iter().enumerate() {
            let g = g_pre.narrow0(b, 1)?.reshape(&[d])?;
            self.backward_clip(cache, &g, grads)?;
        }
        Ok(loss)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Identities per batch.
    pub p: usize,
    /// Tracklets per identity per batch.
    pub k: usize,
    pub margin: f64,
    pub triplet: bool,
    pub cross_entropy: bool,
    pub flip: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            lr: 0.02,
            momentum: 0.9,
            weight_decay: 5e-4,
            p: 4,
            k: 4,
            margin: DEFAULT_MARGIN,
            triplet: true,
            cross_entropy: true,
            flip: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean combined loss of each epoch.
    pub losses: Vec<f64>,
    pub steps: usize,
}

impl TrainReport {
    /// `1 - last / first`, or zero without at least one epoch.
    pub fn relative_decrease(&self) -> f64 {
        match (self.losses.first(), self.losses.last()) {
            (Some(&a), Some(&b)) if a > 0.0 => 1.0 - b / a,
            _ => 0.0,
        }
    }
}

fn check_batching(
    data: &SyntheticIdentityDataset,
    model: &ToyModel,
    cfg: &TrainConfig,
) -> Result<()> {
    if !cfg.triplet && !cfg.cross_entropy {
        return Err(Error::invalid("at least one loss must be enabled"));
    }
    if cfg.p == 0 || cfg.k == 0 || cfg.p * cfg.k < 2 {
        return Err(Error::invalid("a batch needs at least two clips"));
    }
    if cfg.triplet && (cfg.p < 2 || cfg.k < 2) {
        return Err(Error::invalid(format!(
            "triplet batches need P >= 2 and K >= 2, got P={} K={}",
            cfg.p, cfg.k
        )));
    }
    let ids = data.config.identities;
    if ids < cfg.p {
        return Err(Error::invalid(format!(
            "P={} exceeds the {ids} identities",
            cfg.p
        )));
    }
    if data.config.train_tracklets < cfg.k {
        return Err(Error::invalid(format!(
            "K={} exceeds the {} training tracklets per identity",
            cfg.k, data.config.train_tracklets
        )));
    }
    if ids > model.spec.classes {
        return Err(Error::invalid(format!(
            "{ids} identities do not fit a {}-way classifier",
            model.spec.classes
        )));
    }
    if data.config.frames < model.spec.clip_len {
        return Err(Error::invalid("tracklets are shorter than a clip"));
    }
    if !(cfg.lr >= 0.0 && cfg.momentum >= 0.0 && cfg.weight_decay >= 0.0) {
        return Err(Error::invalid(
            "learning rate, momentum and weight decay must be non-negative",
        ));
    }
    Ok(())
}

/// SGD with momentum over `P×K` batches drawn from the training split.
/// Every epoch visits each identity once; a trailing group smaller than
/// `P` is dropped.
pub fn train(
    model: &mut ToyModel,
    data: &SyntheticIdentityDataset,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    check_batching(data, model, cfg)?;
    let mut rng = SeededRng::new(cfg.seed);
    let mut velocity = model.zeros_like();
    let per_id = data.config.train_tracklets;
    let clip = model.spec.clip_len;
    let mut losses = Vec::with_capacity(cfg.epochs);
    let mut steps = 0;
    for epoch in 0..cfg.epochs {
        let mut ids: Vec<usize> = (0..data.config.identities).collect();
        rng.shuffle(&mut ids);
        let mut total = 0.0;
        let mut batches = 0;
        for group in ids.chunks_exact(cfg.p) {
            let mut clips = Vec::with_capacity(cfg.p * cfg.k);
            let mut labels = Vec::with_capacity(cfg.p * cfg.k);
            for &id in group {
                let mut pool: Vec<usize> = (0..per_id).collect();
                rng.shuffle(&mut pool);
                for &j in &pool[..cfg.k] {
                    let tr = &data.train[id * per_id + j];
                    let start = rng.below(tr.len() - clip + 1);
                    let (mut frames, mut mask) = tr.clip(start, clip)?;
                    if cfg.flip {
                        augment_clip(&mut frames, &mut mask, &mut rng);
                    }
                    clips.push((frames, mask));
                    labels.push(id);
                }
            }
            let mut grads = model.zeros_like();
            total += model.loss_and_grads(&clips, &labels, cfg, &mut grads)?;
            batches += 1;
            let decayed: Vec<bool> = model
                .named()
                .iter()
                .map(|(n, _)| n.ends_with("weight") || n == "classifier")
                .collect();
            for ((((_, p), (_, g)), (_, v)), decay) in model
                .named_mut()
                .into_iter()
                .zip(grads.named())
                .zip(velocity.named_mut())
                .zip(decayed)
            {
                let wd = if decay { cfg.weight_decay } else { 0.0 };
                for ((pv, gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                    *vv = cfg.momentum * *vv + gv + wd * *pv;
                    *pv -= cfg.lr * *vv;
                }
            }
            steps += 1;
        }
        let mean = total / batches as f64;
        if !mean.is_finite() {
            return Err(Error::invalid(format!(
                "training diverged at epoch {}",
                epoch + 1
            )));
        }
        log::info!("epoch {} loss {mean:.4}", epoch + 1);
        losses.push(mean);
    }
    Ok(TrainReport { losses, steps })
}

fn meta(t: &ToyTracklet) -> TrackletMeta {
    TrackletMeta::new(t.tid, t.identity as u32 + 1, t.camera)
}

/// Euclidean distances between clip-averaged embeddings.
pub fn retrieve(
    model: &ToyModel,
    query: &[ToyTracklet],
    gallery: &[ToyTracklet],
) -> Result<EvalDataset> {
    let qf: Vec<Tensor> = query
        .iter()
        .map(|t| model.embed(t))
        .collect::<Result<_>>()?;
    let gf: Vec<Tensor> = gallery
        .iter()
        .map(|t| model.embed(t))
        .collect::<Result<_>>()?;
    let mut d = Vec::with_capacity(qf.len() * gf.len());
    for q in &qf {
        for g in &gf {
            d.push(q.sub(g)?.data().iter().map(|v| v * v).sum::<f64>().sqrt());
        }
    }
    EvalDataset::new(
        query.iter().map(meta).collect(),
        gallery.iter().map(meta).collect(),
        Tensor::from_vec(&[qf.len(), gf.len()], d)?,
    )
}

/// Expected metrics of a ranking that ignores the input: mean over `draws`
/// uniformly random distance matrices on the same metadata.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChanceLevel {
    pub map: f64,
    pub rank1: f64,
    pub draws: usize,
}

pub fn chance_level(
    query: &[TrackletMeta],
    gallery: &[TrackletMeta],
    draws: usize,
    seed: u64,
) -> Result<ChanceLevel> {
    if draws == 0 {
        return Err(Error::invalid("at least one draw is needed"));
    }
    let mut rng = SeededRng::new(seed);
    let (mut map, mut rank1) = (0.0, 0.0);
    for _ in 0..draws {
        let d = rng
            .uniform_tensor(&[query.len(), gallery.len()], 1.0)
            .map(|v| v + 1.0);
        let r = evaluate(
            &EvalDataset::new(query.to_vec(), gallery.to_vec(), d)?,
            Protocol::Old,
        )?;
        map += r.map;
        rank1 += r.rank(1);
    }
    Ok(ChanceLevel {
        map: map / draws as f64,
        rank1: rank1 / draws as f64,
        draws,
    })
}

/// One full run: generate, initialise, train, retrieve, evaluate.
#[derive(Debug, Clone)]
pub struct DemoReport {
    pub train: TrainReport,
    pub eval: EvalResult,
    pub chance: ChanceLevel,
}

pub fn run_demo(
    data_cfg: &ToyDataConfig,
    spec: &ToyModelSpec,
    train_cfg: &TrainConfig,
) -> Result<(ToyModel, DemoReport)> {
    let data = SyntheticIdentityDataset::generate(data_cfg, train_cfg.seed)?;
    let mut model = ToyModel::init(spec, train_cfg.seed.wrapping_add(1))?;
    let report = if train_cfg.epochs == 0 {
        TrainReport {
            losses: Vec::new(),
            steps: 0,
        }
    } else {
        train(&mut model, &data, train_cfg)?
    };
    let ds = retrieve(&model, &data.query, &data.gallery)?;
    let eval = evaluate(&ds, Protocol::Old)?;
    let chance = chance_level(&ds.query, &ds.gallery, 200, train_cfg.seed)?;
    Ok((
        model,
        DemoReport {
            train: report,
            eval,
            chance,
        },
    ))
}
