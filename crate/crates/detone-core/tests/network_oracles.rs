//! Independent oracles for the network module: a counting oracle for
//! parameter totals, a naive definitional re-evaluation of the full
//! forward pass, and checkpoint codec round trips.

use detone_core::network::{
    build_baseline_dcnn, Checkpoint, NetworkSpec, Stage, StructureAwareNet, Subnet,
};
use detone_core::tensor::{Dims, Tensor};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

/// Count parameters straight from the layer plan: each layer has
/// `cin*k*k` weights per filter plus one bias, times `cout` filters.
fn counting_oracle(depth: usize, cin_first: usize, hidden: usize, k: usize) -> usize {
    let mut total = 0;
    for i in 0..depth {
        let cin = if i == 0 { cin_first } else { hidden };
        let cout = if i == depth - 1 { 1 } else { hidden };
        total += (cin * k * k + 1) * cout;
    }
    total
}

#[test]
fn default_irs_parameter_count() {
    let spec = NetworkSpec::default();
    let oracle = counting_oracle(16, 1, 64, 5);
    assert_eq!(oracle, 1_437_761);
    assert_eq!(spec.irs.parameter_count(), oracle);
    let net = StructureAwareNet::<f32>::build(&spec, 1).unwrap();
    assert_eq!(net.irs().parameter_count(), oracle);
}

#[test]
fn default_network_counts_per_subnet() {
    let spec = NetworkSpec::default();
    assert_eq!(spec.ismp.parameter_count(), counting_oracle(6, 1, 64, 5));
    assert_eq!(spec.rs.parameter_count(), counting_oracle(16, 3, 64, 5));
    assert_eq!(
        spec.parameter_count(),
        spec.irs.parameter_count() + spec.ismp.parameter_count() + spec.rs.parameter_count()
    );
}

#[test]
fn baseline_depth_17_parameter_count() {
    let oracle = counting_oracle(17, 1, 64, 5);
    assert_eq!(oracle, 1_540_225);
    let net = build_baseline_dcnn::<f32>(17, 64, 2).unwrap();
    assert_eq!(net.parameter_count(), oracle);
}

/// Naive f64 re-implementation of the definitional formulas: same-size
/// cross-correlation with zero padding, ReLU between layers, channel
/// stacking. Shares no code with the production path.
mod naive {
    use super::*;

    #[allow(clippy::needless_range_loop)]
    pub fn conv(
        input: &[Vec<Vec<f64>>],
        weights: &Tensor<f32>,
        bias: &[f32],
        relu: bool,
    ) -> Vec<Vec<Vec<f64>>> {
        let d = weights.dims();
        let (cout, cin, k) = (d.n, d.c, d.h);
        let h = input[0].len();
        let w = input[0][0].len();
        let pad = (k - 1) / 2;
        let mut out = vec![vec![vec![0.0f64; w]; h]; cout];
        for oc in 0..cout {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = bias[oc] as f64;
                    for ic in 0..cin {
                        for i in 0..k {
                            for j in 0..k {
                                let iy = y as isize + i as isize - pad as isize;
                                let ix = x as isize + j as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                acc += weights.at(oc, ic, i, j) as f64
                                    * input[ic][iy as usize][ix as usize];
                            }
                        }
                    }
                    out[oc][y][x] = if relu { acc.max(0.0) } else { acc };
                }
            }
        }
        out
    }

    pub fn subnet(input: &[Vec<Vec<f64>>], net: &Subnet<f32>) -> Vec<Vec<Vec<f64>>> {
        let mut cur = input.to_vec();
        let last = net.layers().len() - 1;
        for (i, layer) in net.layers().iter().enumerate() {
            cur = conv(&cur, layer.weights(), layer.bias(), i != last);
        }
        cur
    }
}

#[test]
fn forward_full_matches_definitional_reimplementation() {
    let spec = NetworkSpec::new(3, 2, 3, 4, 5).unwrap();
    let net = StructureAwareNet::<f32>::build(&spec, 77).unwrap();
    let mut rng = StdRng::seed_from_u64(78);
    let (h, w) = (12, 10);
    let ht: Vec<Vec<f64>> = (0..h)
        .map(|_| (0..w).map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 }).collect())
        .collect();

    let naive_initial = naive::subnet(std::slice::from_ref(&ht), net.irs());
    let naive_smap = naive::subnet(&naive_initial, net.ismp());
    let fused = vec![
        ht.clone(),
        naive_initial[0].clone(),
        naive_smap[0].clone(),
    ];
    let naive_final = naive::subnet(&fused, net.rs());

    let ht_tensor = Tensor::from_fn(Dims::new(1, 1, h, w), |i| ht[i / w][i % w] as f32);
    let out = net.infer(&ht_tensor).unwrap();

    let scale = out
        .reconstruction
        .data()
        .iter()
        .fold(0.0f32, |m, v| m.max(v.abs())) as f64;
    for y in 0..h {
        for x in 0..w {
            let got = out.reconstruction.at(0, 0, y, x) as f64;
            let want = naive_final[0][y][x];
            assert!(
                (got - want).abs() <= 1e-5 * scale.max(1.0),
                "({y},{x}): {got} vs {want}"
            );
            let gi = out.initial.at(0, 0, y, x) as f64;
            assert!((gi - naive_initial[0][y][x]).abs() <= 1e-5 * scale.max(1.0));
            let gs = out.structure_map.at(0, 0, y, x) as f64;
            assert!((gs - naive_smap[0][y][x]).abs() <= 1e-5 * scale.max(1.0));
        }
    }
}

#[test]
fn checkpoint_survives_both_stages() {
    let spec = NetworkSpec::new(3, 2, 3, 8, 5).unwrap();
    for stage in [Stage::IrsPretrained, Stage::EndToEnd] {
        let net = StructureAwareNet::<f32>::build(&spec, 5).unwrap();
        let ck = Checkpoint::new(net, stage, 999, 5);
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back.stage, stage);
        let mut rng = StdRng::seed_from_u64(6);
        let ht = Tensor::from_fn(Dims::new(1, 1, 16, 16), |_| {
            if rng.random_bool(0.5) {
                1.0
            } else {
                0.0
            }
        });
        // Identical weights mean identical inference, bitwise.
        let a = ck.net.infer(&ht).unwrap();
        let b = back.net.infer(&ht).unwrap();
        assert_eq!(a.reconstruction, b.reconstruction);
    }
}

#[test]
fn structure_aware_build_is_deterministic() {
    let spec = NetworkSpec::new(3, 3, 3, 8, 5).unwrap();
    let a = StructureAwareNet::<f32>::build(&spec, 123).unwrap();
    let b = StructureAwareNet::<f32>::build(&spec, 123).unwrap();
    for (sa, sb) in [
        (a.irs(), b.irs()),
        (a.ismp(), b.ismp()),
        (a.rs(), b.rs()),
    ] {
        for (la, lb) in sa.layers().iter().zip(sb.layers()) {
            assert_eq!(la.weights(), lb.weights());
        }
    }
    // Subnets draw from distinct streams: identical shapes, different values.
    assert_ne!(
        a.irs().layers()[1].weights().data(),
        a.rs().layers()[1].weights().data()
    );
}
