//! Frozen toy feature extractor.
//!
//! A fixed-seed stack of stride-2 3x3 convolution + ReLU stages stands in
//! for a pretrained backbone: two stages down to stride 4, then one per
//! pyramid level, all sharing channel width `d`. The parameters are
//! registered frozen and the forward pass runs on plain arrays outside any
//! gradient graph, so nothing can ever update them.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{xavier_uniform, ParamId, ParamStore};
use crate::tensor::{Graph, Var};

pub const STRIDES: [usize; 4] = [4, 8, 16, 32];

/// One feature map: `d` channels of `h` x `w`, row-major `[c][y][x]`.
#[derive(Debug, Clone)]
pub struct LevelMap {
    pub data: Vec<f64>,
    pub d: usize,
    pub h: usize,
    pub w: usize,
}

impl LevelMap {
    /// Inserts the map into a graph as a constant `[d, h, w]` tensor.
    pub fn to_var(&self, g: &mut Graph) -> crate::tensor::Result<Var> {
        g.constant(self.data.clone(), &[self.d, self.h, self.w])
    }
}

/// Per-image maps F2..F5 at strides {4, 8, 16, 32}.
#[derive(Debug, Clone)]
pub struct FeaturePyramid {
    levels: [LevelMap; 4],
}

impl FeaturePyramid {
    /// `level` is the backbone layer index, 2..=5.
    pub fn level(&self, level: usize) -> &LevelMap {
        assert!((2..=5).contains(&level), "pyramid level must be 2..=5");
        &self.levels[level - 2]
    }
}

pub struct ToyEncoder {
    convs: Vec<(ParamId, ParamId)>,
    pub d: usize,
}

impl ToyEncoder {
    /// Registers the (frozen) convolution stack under `encoder.*`. Biases
    /// are drawn with a per-channel spread so that spatial positions where
    /// every pre-activation is negative still emit feature rows with
    /// cross-channel variance; an all-constant row would make downstream
    /// layer norms numerically hostile.
    pub fn new<R: Rng>(store: &mut ParamStore, d: usize, rng: &mut R) -> Self {
        let mut convs = Vec::with_capacity(5);
        for i in 0..5 {
            let cin = if i == 0 { 3 } else { d };
            let fan_in = cin * 9;
            let fan_out = d * 9;
            let w = xavier_uniform(rng, fan_in, fan_out, d * cin * 9);
            let wid = store.register(&format!("encoder.conv{i}.w"), &[d, cin, 3, 3], w);
            let b: Vec<f64> = (0..d).map(|_| rng.gen_range(0.02..0.3)).collect();
            let bid = store.register(&format!("encoder.conv{i}.b"), &[d], b);
            convs.push((wid, bid));
        }
        store.freeze_subtree("encoder.");
        ToyEncoder { convs, d }
    }

    /// Produces the stride-{4,8,16,32} pyramid for a `[3, h, w]` image in
    /// row-major layout. `h` and `w` must be divisible by 32.
    pub fn encode(&self, store: &ParamStore, image: &[f64], h: usize, w: usize) -> Result<FeaturePyramid> {
        if h % 32 != 0 || w % 32 != 0 || h == 0 || w == 0 {
            return Err(Error::config(format!(
                "image_size: {h}x{w} is not divisible by 32"
            )));
        }
        if image.len() != 3 * h * w {
            return Err(Error::config(format!(
                "image buffer has {} values, expected {}",
                image.len(),
                3 * h * w
            )));
        }
        let mut cur = image.to_vec();
        let (mut ch, mut cw, mut cc) = (h, w, 3);
        let mut maps: Vec<LevelMap> = Vec::with_capacity(4);
        for (i, &(conv, bias)) in self.convs.iter().enumerate() {
            let wgt = store.get(conv).value();
            let b = store.get(bias).value();
            let (next, nh, nw) = conv3x3_s2_relu(&cur, cc, ch, cw, wgt, b, self.d);
            cur = next;
            ch = nh;
            cw = nw;
            cc = self.d;
            if i >= 1 {
                maps.push(LevelMap { data: cur.clone(), d: self.d, h: ch, w: cw });
            }
        }
        let levels: [LevelMap; 4] = maps.try_into().expect("four pyramid levels");
        Ok(FeaturePyramid { levels })
    }
}

/// 3x3 convolution with stride 2, zero padding 1, followed by ReLU.
/// Padding only ever clips the top row and left column of taps (even
/// extents), so the inner loops are branch-free.
fn conv3x3_s2_relu(
    input: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    weights: &[f64],
    bias: &[f64],
    cout: usize,
) -> (Vec<f64>, usize, usize) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; cout * oh * ow];
    for oc in 0..cout {
        let wbase = oc * cin * 9;
        let out_plane = &mut out[oc * oh * ow..(oc + 1) * oh * ow];
        out_plane.fill(bias[oc]);
        for ic in 0..cin {
            let kern = &weights[wbase + ic * 9..wbase + ic * 9 + 9];
            let plane = &input[ic * h * w..(ic + 1) * h * w];
            for oy in 0..oh {
                let orow = &mut out_plane[oy * ow..(oy + 1) * ow];
                for ky in 0..3usize {
                    let iy = 2 * oy + ky;
                    if iy == 0 || iy > h {
                        continue;
                    }
                    let row = &plane[(iy - 1) * w..iy * w];
                    let (k0, k1, k2) = (kern[ky * 3], kern[ky * 3 + 1], kern[ky * 3 + 2]);
                    orow[0] += k1 * row[0] + k2 * row[1];
                    for ox in 1..ow {
                        let base = 2 * ox - 1;
                        orow[ox] += k0 * row[base] + k1 * row[base + 1] + k2 * row[base + 2];
                    }
                }
            }
        }
    }
    for v in &mut out {
        *v = v.max(0.0);
    }
    (out, oh, ow)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn image(seed: u64, h: usize, w: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..3 * h * w).map(|_| rng.gen_range(0.0..1.0)).collect()
    }

    #[test]
    fn pyramid_shapes_for_64x64() {
        let mut store = ParamStore::new();
        let enc = ToyEncoder::new(&mut store, 32, &mut ChaCha8Rng::seed_from_u64(1));
        let pyr = enc.encode(&store, &image(0, 64, 64), 64, 64).unwrap();
        for (level, stride) in (2..=5).zip(STRIDES) {
            let m = pyr.level(level);
            assert_eq!((m.d, m.h, m.w), (32, 64 / stride, 64 / stride));
        }
    }

    #[test]
    fn encoding_is_deterministic() {
        let mut store = ParamStore::new();
        let enc = ToyEncoder::new(&mut store, 16, &mut ChaCha8Rng::seed_from_u64(2));
        let img = image(3, 32, 32);
        let a = enc.encode(&store, &img, 32, 32).unwrap();
        let b = enc.encode(&store, &img, 32, 32).unwrap();
        for lvl in 2..=5 {
            assert_eq!(a.level(lvl).data, b.level(lvl).data);
        }
    }

    #[test]
    fn different_images_give_different_features() {
        let mut store = ParamStore::new();
        let enc = ToyEncoder::new(&mut store, 16, &mut ChaCha8Rng::seed_from_u64(2));
        let a = enc.encode(&store, &image(3, 32, 32), 32, 32).unwrap();
        let b = enc.encode(&store, &image(4, 32, 32), 32, 32).unwrap();
        assert!(a.level(2).data != b.level(2).data);
    }

    #[test]
    fn indivisible_size_is_config_error() {
        let mut store = ParamStore::new();
        let enc = ToyEncoder::new(&mut store, 8, &mut ChaCha8Rng::seed_from_u64(5));
        let err = enc.encode(&store, &image(0, 48, 48), 48, 48).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn encoder_parameters_are_registered_frozen() {
        let mut store = ParamStore::new();
        let _ = ToyEncoder::new(&mut store, 8, &mut ChaCha8Rng::seed_from_u64(6));
        assert_eq!(store.frozen_count(), 10);
        assert!(store.trainable_ids().is_empty());
        // Bound into a graph, the features enter as constants: gradients
        // can never reach the encoder.
        let mut g = Graph::new();
        let bind = store.bind(&mut g).unwrap();
        let first = store.iter().next().unwrap();
        let v = bind.var(store.id_of(first.name()).unwrap());
        assert!(!g.tensor(v).requires_grad());
    }
}
