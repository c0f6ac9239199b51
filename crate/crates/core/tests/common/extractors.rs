//! Tiny hand-weighted extractors and nested-loop oracles for their taps.

use std::collections::HashMap;

use blindsr::losses::{Backbone, FeatureExtractor, ResNetSpec, VggSpec, IMAGENET_MEAN, IMAGENET_STD};
use candle_core::{DType, Tensor};

use super::*;

pub const BN_EPS: f64 = 1e-5;

pub fn known(n: usize, salt: usize) -> Vec<f64> {
    (0..n).map(|i| (((i * 7 + salt * 3) % 11) as f64 - 5.0) / 10.0).collect()
}

pub fn tiny_vgg() -> (FeatureExtractor, HashMap<String, Tensor>) {
    let mut map = HashMap::new();
    map.insert("features.0.weight".into(), tensor(&known(2 * 3 * 9, 0), &[2, 3, 3, 3]));
    map.insert("features.0.bias".into(), tensor(&[0.05, -0.1], &[2]));
    map.insert("features.3.weight".into(), tensor(&known(2 * 2 * 9, 1), &[2, 2, 3, 3]));
    map.insert("features.3.bias".into(), tensor(&[-0.02, 0.07], &[2]));
    let spec = VggSpec { stages: vec![vec![2], vec![2]] };
    let ex = FeatureExtractor::from_named(Backbone::Vgg(spec), vec![0.1, 1.0], true, DType::F64, &map).unwrap();
    (ex, map)
}

pub fn tiny_resnet_spec() -> ResNetSpec {
    ResNetSpec { stem: 2, blocks: vec![1, 1], widths: vec![1, 1], expansion: 2 }
}

pub fn tiny_resnet() -> (FeatureExtractor, HashMap<String, Tensor>) {
    let convs: [(&str, &str, [usize; 4]); 7] = [
        ("conv1", "bn1", [2, 3, 7, 7]),
        ("layer1.0.conv1", "layer1.0.bn1", [1, 2, 1, 1]),
        ("layer1.0.conv2", "layer1.0.bn2", [1, 1, 3, 3]),
        ("layer1.0.conv3", "layer1.0.bn3", [2, 1, 1, 1]),
        ("layer2.0.conv1", "layer2.0.bn1", [1, 2, 1, 1]),
        ("layer2.0.conv2", "layer2.0.bn2", [1, 1, 3, 3]),
        ("layer2.0.conv3", "layer2.0.bn3", [2, 1, 1, 1]),
    ];
    let mut map = HashMap::new();
    let mut add = |c: &str, bn: &str, dims: [usize; 4], salt: usize| {
        let n: usize = dims.iter().product();
        map.insert(format!("{c}.weight"), tensor(&known(n, salt), &dims));
        let o = dims[0];
        let pos: Vec<f64> = (0..o).map(|i| 0.8 + 0.1 * ((i + salt) % 3) as f64).collect();
        map.insert(format!("{bn}.weight"), tensor(&pos, &[o]));
        map.insert(format!("{bn}.running_var"), tensor(&pos.iter().map(|v| v * 1.5).collect::<Vec<_>>(), &[o]));
        map.insert(format!("{bn}.bias"), tensor(&known(o, salt + 1), &[o]));
        map.insert(format!("{bn}.running_mean"), tensor(&known(o, salt + 2), &[o]));
    };
    for (i, (c, bn, dims)) in convs.iter().enumerate() {
        add(c, bn, *dims, i);
    }
    add("layer2.0.downsample.0", "layer2.0.downsample.1", [2, 2, 1, 1], 9);
    let ex = FeatureExtractor::from_named(Backbone::ResNet(tiny_resnet_spec()), vec![1.0, 0.5], true, DType::F64, &map)
        .unwrap();
    (ex, map)
}

pub fn normalize(x: &Nd) -> Nd {
    let mut out = x.clone();
    let [n, c, h, w] = x.dims;
    for b in 0..n {
        for ch in 0..c {
            for i in 0..h * w {
                let at = (b * c + ch) * h * w + i;
                out.data[at] = (x.data[at] - IMAGENET_MEAN[ch]) / IMAGENET_STD[ch];
            }
        }
    }
    out
}

pub fn vgg_oracle(x: &Nd, map: &HashMap<String, Tensor>) -> Vec<Nd> {
    let p = |k: &str| values(&map[k]);
    let x = normalize(x);
    let t1 = conv(&x, &p("features.0.weight"), &p("features.0.bias"), 2, 3, 1, 1);
    let y = max_pool(&relu(&t1), 2, 2, 0);
    let t2 = conv(&y, &p("features.3.weight"), &p("features.3.bias"), 2, 3, 1, 1);
    vec![t1, t2]
}

pub fn conv_bn(x: &Nd, map: &HashMap<String, Tensor>, c: &str, bn: &str, stride: usize) -> Nd {
    let w = &map[&format!("{c}.weight")];
    let (o, _, k, _) = w.dims4().unwrap();
    let y = conv(x, &values(w), &vec![0.0; o], o, k, stride, k / 2);
    let g = |s: &str| values(&map[&format!("{bn}.{s}")]);
    let (gamma, beta, mean, var) = (g("weight"), g("bias"), g("running_mean"), g("running_var"));
    let [n, _, h, wd] = y.dims;
    let mut out = y.clone();
    for b in 0..n {
        for ch in 0..o {
            for i in 0..h * wd {
                let at = (b * o + ch) * h * wd + i;
                out.data[at] = (y.data[at] - mean[ch]) / (var[ch] + BN_EPS).sqrt() * gamma[ch] + beta[ch];
            }
        }
    }
    out
}

pub fn resnet_oracle(x: &Nd, map: &HashMap<String, Tensor>) -> Vec<Nd> {
    let x = normalize(x);
    let mut x = max_pool(&relu(&conv_bn(&x, map, "conv1", "bn1", 2)), 3, 2, 1);
    let mut taps = Vec::new();
    for (layer, stride) in [("layer1.0", 1), ("layer2.0", 2)] {
        let n = |s: &str| format!("{layer}.{s}");
        let y = relu(&conv_bn(&x, map, &n("conv1"), &n("bn1"), 1));
        let y = relu(&conv_bn(&y, map, &n("conv2"), &n("bn2"), stride));
        let y = conv_bn(&y, map, &n("conv3"), &n("bn3"), 1);
        let shortcut = if map.contains_key(&n("downsample.0.weight")) {
            conv_bn(&x, map, &n("downsample.0"), &n("downsample.1"), stride)
        } else {
            x.clone()
        };
        x = relu(&y.add(&shortcut));
        taps.push(x.clone());
    }
    taps
}

pub fn perceptual_oracle(a: &Nd, b: &Nd, taps: impl Fn(&Nd) -> Vec<Nd>, weights: &[f64]) -> f64 {
    taps(a).iter().zip(taps(b)).zip(weights).map(|((fa, fb), w)| w * mean_abs_diff(fa, &fb)).sum()
}

pub fn image(dims: [usize; 4], seed: u64) -> (Nd, Tensor) {
    let data = uniform(&dims, 0.0, 1.0, seed);
    (Nd::new(dims, data.clone()), tensor(&data, &dims))
}
