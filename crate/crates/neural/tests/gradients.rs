//! Every operation's adjoint against central finite differences.

use std::sync::Arc;

use qst_core::measurement::{enumerate_bases, Alphabet};
use qst_core::seed::rng_for;
use qst_core::{BasisSet, Method};
use qst_neural::graph::{ConvGeometry, Graph, ParamId, Tensor, Var};
use qst_neural::network::{build_discriminator, build_network, Architecture, BuildOptions};
use qst_neural::StatisticsPlan;
use rand::Rng;

const STEP: f64 = 1e-5;
const TOLERANCE: f64 = 1e-4;

/// Builds `f` on fresh leaves holding `values`, scalarizes it with an MSE
/// against a fixed random target, and compares every partial derivative.
fn check(name: &str, shapes: &[Vec<usize>], seed: u64, f: impl Fn(&mut Graph<'_>, &[Var]) -> Var) {
    let mut rng = rng_for(seed, "fd", 0);
    let values: Vec<Vec<f64>> = shapes
        .iter()
        .map(|s| {
            (0..s.iter().product::<usize>())
                .map(|_| {
                    // keep away from the LeakyReLU kink
                    let v: f64 = rng.gen_range(0.1..1.0);
                    if rng.gen_bool(0.5) {
                        v
                    } else {
                        -v
                    }
                })
                .collect()
        })
        .collect();
    let out_len = {
        let mut g = Graph::new();
        let vars: Vec<Var> = shapes
            .iter()
            .zip(&values)
            .map(|(s, v)| g.constant(Tensor::new(s.clone(), v.clone())))
            .collect();
        let out = f(&mut g, &vars);
        g.value(out).len()
    };
    let target: Vec<f64> = (0..out_len).map(|_| rng.gen_range(-1.0..1.0)).collect();

    let loss_of = |vals: &[Vec<f64>]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = shapes
            .iter()
            .zip(vals)
            .map(|(s, v)| g.constant(Tensor::new(s.clone(), v.clone())))
            .collect();
        let out = f(&mut g, &vars);
        let l = g.mse(out, &target).unwrap();
        g.value(l)[0]
    };

    let analytic = {
        let mut g = Graph::new();
        let vars: Vec<Var> = shapes
            .iter()
            .zip(&values)
            .enumerate()
            .map(|(k, (s, v))| g.param(ParamId(k), s, v))
            .collect();
        let out = f(&mut g, &vars);
        let l = g.mse(out, &target).unwrap();
        let grads = g.backward(l).params();
        let mut full: Vec<Vec<f64>> = values.iter().map(|v| vec![0.0; v.len()]).collect();
        for (id, gr) in grads {
            full[id.0] = gr;
        }
        full
    };

    let mut worst = 0.0f64;
    for k in 0..values.len() {
        for i in 0..values[k].len() {
            let mut plus = values.clone();
            plus[k][i] += STEP;
            let mut minus = values.clone();
            minus[k][i] -= STEP;
            let numeric = (loss_of(&plus) - loss_of(&minus)) / (2.0 * STEP);
            let a = analytic[k][i];
            let err = (a - numeric).abs();
            let scale = a.abs().max(numeric.abs());
            if err > 1e-9 {
                let rel = err / scale;
                worst = worst.max(rel);
                assert!(rel < TOLERANCE, "{name}: input {k}[{i}] analytic {a} numeric {numeric} rel {rel}");
            }
        }
    }
    eprintln!("{name}: worst relative error {worst:e}");
}

#[test]
fn matmul_and_bias() {
    check("matmul", &[vec![4, 3], vec![3, 2]], 1, |g, v| g.matmul(v[0], v[1]).unwrap());
    check("add_bias", &[vec![3, 4], vec![4]], 2, |g, v| g.add_bias(v[0], v[1]).unwrap());
    check("add", &[vec![2, 3], vec![2, 3]], 3, |g, v| g.add(v[0], v[1]).unwrap());
}

#[test]
fn shape_and_pointwise_ops() {
    check("reshape", &[vec![2, 6]], 4, |g, v| {
        let r = g.reshape(v[0], &[3, 4]).unwrap();
        g.tanh(r)
    });
    check("concat", &[vec![1, 3], vec![2, 2]], 5, |g, v| {
        let c = g.concat(&[v[0], v[1]]);
        g.sigmoid(c)
    });
    check("slice_row", &[vec![3, 4]], 6, |g, v| {
        let a = g.slice_row(v[0], 1).unwrap();
        let b = g.slice_row(v[0], 2).unwrap();
        let b = g.scale(b, 3.0);
        g.add(a, b).unwrap()
    });
    check("leaky_relu", &[vec![1, 10]], 7, |g, v| g.leaky_relu(v[0], 0.2));
    check("tanh", &[vec![1, 10]], 8, |g, v| g.tanh(v[0]));
    check("sigmoid", &[vec![1, 10]], 9, |g, v| g.sigmoid(v[0]));
    check("softplus_mean", &[vec![1, 10]], 10, |g, v| {
        let s = g.softplus(v[0]);
        g.mean(s)
    });
}

#[test]
fn conv_transpose_and_instance_norm() {
    let geom = ConvGeometry {
        c_in: 2,
        c_out: 3,
        kernel: 4,
        stride: 2,
        h_in: 2,
        w_in: 2,
    };
    check("conv2d_transpose_stride2", &[vec![2, 2, 2], vec![2, 3, 4, 4]], 11, move |g, v| {
        g.conv2d_transpose(v[0], v[1], geom).unwrap()
    });
    let geom1 = ConvGeometry {
        c_in: 3,
        c_out: 2,
        kernel: 4,
        stride: 1,
        h_in: 4,
        w_in: 4,
    };
    check("conv2d_transpose_stride1", &[vec![3, 4, 4], vec![3, 2, 4, 4]], 12, move |g, v| {
        g.conv2d_transpose(v[0], v[1], geom1).unwrap()
    });
    check("instance_norm", &[vec![3, 2, 3], vec![3], vec![3]], 13, |g, v| {
        g.instance_norm(v[0], v[1], v[2]).unwrap()
    });
    check("channels_last", &[vec![2, 3, 3]], 14, |g, v| {
        let c = g.channels_last(v[0]).unwrap();
        g.tanh(c)
    });
}

#[test]
fn simple_rnn_over_a_sequence() {
    check("simple_rnn", &[vec![4, 2], vec![2, 3], vec![3, 3], vec![3]], 15, |g, v| {
        let mut h = g.constant(Tensor::zeros(vec![1, 3]));
        for t in 0..4 {
            let x = g.slice_row(v[0], t).unwrap();
            h = g.rnn_cell(x, h, v[1], v[2], v[3]).unwrap();
        }
        h
    });
}

#[test]
fn density_and_statistics_layers() {
    for n in 1..=2usize {
        let d = 1 << n;
        check(&format!("density_matrix_{n}"), &[vec![d, d, 2]], 20 + n as u64, |g, v| {
            g.density_matrix(v[0]).unwrap()
        });
    }
    let bases = enumerate_bases(2, Alphabet::XyzOnly).unwrap();
    for method in [Method::M1, Method::M2] {
        let plan = Arc::new(StatisticsPlan::new(&bases, method));
        check(&format!("statistics_{method:?}"), &[vec![4, 4, 2]], 30, move |g, v| {
            let rho = g.density_matrix(v[0]).unwrap();
            g.statistics(rho, Arc::clone(&plan)).unwrap()
        });
    }
    // mixed-letter strings with identities
    let bases = BasisSet::parse(3, &["XIY", "ZZI", "IYX"]).unwrap();
    let plan = Arc::new(StatisticsPlan::new(&bases, Method::M1));
    check("statistics_identity_letters", &[vec![8, 8, 2]], 31, move |g, v| {
        let rho = g.density_matrix(v[0]).unwrap();
        g.statistics(rho, Arc::clone(&plan)).unwrap()
    });
}

/// Whole networks, end to end through the physical layers: perturb a sample
/// of parameters of each tensor.
#[test]
fn composed_networks() {
    let bases = BasisSet::parse(2, &["ZZ", "XX", "YX"]).unwrap();
    for arch in [Architecture::Fcn, Architecture::Cnn, Architecture::Rnn] {
        for method in [Method::M1, Method::M2] {
            let net = build_network(arch, 2, method, &bases, 5, BuildOptions { use_bias: Some(true) }).unwrap();
            let mut rng = rng_for(9, "input", 0);
            let input: Vec<f64> = (0..net.spec.input_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let target: Vec<f64> = (0..net.plan().unwrap().output_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();

            let loss_of = |store: &qst_neural::ParamStore| -> f64 {
                let mut probe = net.clone();
                probe.params = store.clone();
                let mut g = Graph::new();
                let x = g.constant(Tensor::row(input.clone()));
                let out = probe.forward(&mut g, x, false).unwrap();
                let l = g.mse(out.stats.unwrap(), &target).unwrap();
                g.value(l)[0]
            };
            let grads = {
                let mut g = Graph::new();
                let x = g.constant(Tensor::row(input.clone()));
                let out = net.forward(&mut g, x, true).unwrap();
                let l = g.mse(out.stats.unwrap(), &target).unwrap();
                g.backward(l).params()
            };
            assert_eq!(grads.len(), net.params.len(), "{arch} {method:?}: every tensor gets a gradient");
            for (id, grad) in grads {
                let len = grad.len();
                for pick in 0..4 {
                    let i = (pick * 7919 + 13) % len;
                    let mut plus = net.params.clone();
                    plus.get_mut(id).data[i] += STEP;
                    let mut minus = net.params.clone();
                    minus.get_mut(id).data[i] -= STEP;
                    let numeric = (loss_of(&plus) - loss_of(&minus)) / (2.0 * STEP);
                    let a = grad[i];
                    let err = (a - numeric).abs();
                    if err > 1e-9 {
                        let rel = err / a.abs().max(numeric.abs());
                        assert!(
                            rel < TOLERANCE,
                            "{arch} {method:?} {}[{i}]: analytic {a} numeric {numeric}",
                            net.params.get(id).name
                        );
                    }
                }
            }
        }
    }
}

#[test]
fn discriminator_gradients_reach_generator() {
    let bases = BasisSet::parse(2, &["ZZ", "XX"]).unwrap();
    let gen = build_network(Architecture::Cgan, 2, Method::M1, &bases, 3, BuildOptions::default()).unwrap();
    let mut disc = build_discriminator(&gen.spec, 4, BuildOptions::default()).unwrap();
    // a nonzero head, otherwise the adversarial gradient vanishes at start
    let last = disc.params.len() - 2;
    disc.params.get_mut(ParamId(last)).data.iter_mut().enumerate().for_each(|(i, w)| *w = 0.1 * (i as f64 - 30.0) / 30.0);
    let input = vec![0.9, -0.4];
    let loss = |g_params: &qst_neural::ParamStore| -> (f64, Vec<(ParamId, Vec<f64>)>) {
        let mut gen2 = gen.clone();
        gen2.params = g_params.clone();
        let mut g = Graph::new();
        let x = g.constant(Tensor::row(input.clone()));
        let out = gen2.forward(&mut g, x, true).unwrap();
        let pair = g.concat(&[x, out.stats.unwrap()]);
        let logit = disc.forward(&mut g, pair, false).unwrap().raw;
        let neg = g.scale(logit, -1.0);
        let sp = g.softplus(neg);
        let l = g.mean(sp);
        (g.value(l)[0], g.backward(l).params())
    };
    let (_, grads) = loss(&gen.params);
    assert_eq!(grads.len(), gen.params.len());
    for (id, grad) in grads.iter().take(3) {
        let i = grad.len() / 2;
        let mut plus = gen.params.clone();
        plus.get_mut(*id).data[i] += STEP;
        let mut minus = gen.params.clone();
        minus.get_mut(*id).data[i] -= STEP;
        let numeric = (loss(&plus).0 - loss(&minus).0) / (2.0 * STEP);
        let err = (grad[i] - numeric).abs();
        assert!(err <= 1e-9 || err / grad[i].abs().max(numeric.abs()) < TOLERANCE);
    }
}
