use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sc_harmon_autodiff::{chebconv, BatchNormMode, Graph, ParamStore, RescaledLaplacian, Result, Tensor, Var};
use sc_harmon_core::cohort::split_cohort;
use sc_harmon_core::linalg::{normalized_laplacian, symmetric_eigen, SquareMatrix};
use sc_harmon_core::site::standard_sites;
use sc_harmon_core::synthetic::{generate_synthetic_cohort, SyntheticConfig, SyntheticSiteEffect};
use sc_harmon_core::{ConnectivityMatrix, SplitRatios};
use sc_harmon_deep::{ArchKind, ArchitectureConfig, HarmonizerModel, Module};

use crate::oracles::chebyshev;
use crate::Outcome;

const H: f64 = 1e-5;
const RTOL: f64 = 1e-4;
const ATOL: f64 = 1e-8;
const TRIALS: usize = 20;

type Build<'a> = dyn Fn(&mut Graph, &[Var]) -> Result<Var> + 'a;

fn signed(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    // Magnitudes in [0.1, 1.5) keep ReLU and max-pool inputs off their kinks.
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m: f64 = rng.random_range(0.1..1.5);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

/// Scalar `Σ probe ⊙ f(inputs)` and its analytic gradients.
fn evaluate(inputs: &[Tensor], build: &Build, probe: &mut Option<Tensor>) -> (f64, Vec<Tensor>) {
    let mut store = ParamStore::new();
    let ids: Vec<_> = inputs
        .iter()
        .enumerate()
        .map(|(k, t)| store.add_param(&format!("x{k}"), t.clone(), "g").unwrap())
        .collect();
    let mut g = Graph::new();
    let vars: Vec<Var> = ids.iter().map(|&id| g.param(&store, id)).collect();
    let out = build(&mut g, &vars).unwrap();
    let out_shape = g.value(out).shape().to_vec();
    let loss = if out_shape.is_empty() {
        out
    } else {
        let w = probe.get_or_insert_with(|| signed(&mut ChaCha8Rng::seed_from_u64(99), &out_shape));
        g.weighted_sum(out, w).unwrap()
    };
    g.backward(loss).unwrap();
    let grads = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();
    (g.value(loss).item(), grads)
}

#[derive(Default)]
struct Tally {
    cases: usize,
    elements: usize,
    failures: Vec<String>,
}

impl Tally {
    fn check(&mut self, name: &str, inputs: Vec<Tensor>, build: &Build) {
        self.cases += 1;
        let mut probe = None;
        let (_, analytic) = evaluate(&inputs, build, &mut probe);
        for (k, t) in inputs.iter().enumerate() {
            for e in 0..t.len() {
                let mut plus = inputs.clone();
                plus[k].data_mut()[e] += H;
                let mut minus = inputs.clone();
                minus[k].data_mut()[e] -= H;
                let numeric = (evaluate(&plus, build, &mut probe).0 - evaluate(&minus, build, &mut probe).0) / (2.0 * H);
                let a = analytic[k].data()[e];
                self.elements += 1;
                if (a - numeric).abs() > RTOL * a.abs().max(numeric.abs()) + ATOL {
                    self.failures.push(format!("{name}[{k}][{e}]: {a} vs {numeric}"));
                }
            }
        }
    }
}

fn dim(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    rng.random_range(lo..=hi)
}

fn small_symmetric(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let x: f64 = rng.random_range(-scale..scale);
            a[i * n + j] = x;
            a[j * n + i] = x;
        }
    }
    a
}

pub fn gradients() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut tally = Tally::default();
    for t in 0..TRIALS {
        let (m, k, n) = (dim(&mut rng, 1, 4), dim(&mut rng, 1, 4), dim(&mut rng, 1, 4));
        let lhs: Vec<usize> = if t % 2 == 0 { vec![m, k] } else { vec![2, m, k] };
        let inputs = vec![signed(&mut rng, &lhs), signed(&mut rng, &[k, n]), signed(&mut rng, &[n])];
        tally.check("matmul+bias", inputs, &|g, v| {
            let y = g.matmul(v[0], v[1])?;
            g.add_bias(y, v[2])
        });

        let shape = [dim(&mut rng, 1, 3), dim(&mut rng, 1, 4)];
        let inputs = vec![signed(&mut rng, &shape), signed(&mut rng, &shape)];
        tally.check("add/lincomb/relu/scale", inputs, &|g, v| {
            let s = g.add(v[0], v[1])?;
            let l = g.lincomb(s, v[1], 0.7, -1.3)?;
            let r = g.relu(l)?;
            let c = g.scale(v[0], 2.5)?;
            g.add(r, c)
        });

        let (b, f) = (dim(&mut rng, 2, 5), dim(&mut rng, 1, 4));
        let inputs = vec![signed(&mut rng, &[b, f]), signed(&mut rng, &[f]), signed(&mut rng, &[f])];
        let rm = signed(&mut rng, &[f]);
        let rv = Tensor::new(&[f], (0..f).map(|c| 0.5 + c as f64).collect()).unwrap();
        let train = t % 2 == 0;
        tally.check("batch_norm", inputs, &|g, v| {
            let (mut mean, mut var) = (Tensor::zeros(&[f]), Tensor::full(&[f], 1.0));
            let mode = if train {
                BatchNormMode::Train {
                    running_mean: &mut mean,
                    running_var: &mut var,
                    momentum: 0.1,
                }
            } else {
                BatchNormMode::Eval {
                    running_mean: &rm,
                    running_var: &rv,
                }
            };
            g.batch_norm(v[0], v[1], v[2], mode, 1e-5)
        });

        let f = dim(&mut rng, 2, 5);
        let shape: Vec<usize> = if t % 2 == 0 { vec![3, f] } else { vec![2, 3, f] };
        let inputs = vec![signed(&mut rng, &shape), signed(&mut rng, &[f]), signed(&mut rng, &[f])];
        tally.check("layer_norm", inputs, &|g, v| g.layer_norm(v[0], v[1], v[2], 1e-5));

        let (b, fa, fb) = (dim(&mut rng, 1, 3), dim(&mut rng, 1, 3), dim(&mut rng, 1, 3));
        let inputs = vec![signed(&mut rng, &[b, fa]), signed(&mut rng, &[b, fb])];
        tally.check("concat/reshape", inputs, &|g, v| {
            let c = g.concat(v[0], v[1])?;
            g.reshape(c, &[b * (fa + fb)])
        });

        let (b, n, k) = (dim(&mut rng, 1, 3), dim(&mut rng, 2, 4), dim(&mut rng, 1, 3));
        let inputs = vec![signed(&mut rng, &[b, n, k]), signed(&mut rng, &[b, k]), signed(&mut rng, &[b, k])];
        tally.check("adain", inputs, &|g, v| g.adain(v[0], v[1], v[2], 1e-5));

        let (b, n, f) = (dim(&mut rng, 1, 3), dim(&mut rng, 2, 4), dim(&mut rng, 1, 3));
        let l = if t % 2 == 0 {
            Tensor::new(&[n, n], small_symmetric(&mut rng, n, 0.3)).unwrap()
        } else {
            let data: Vec<f64> = (0..b).flat_map(|_| small_symmetric(&mut rng, n, 0.3)).collect();
            Tensor::new(&[b, n, n], data).unwrap()
        };
        let l = Arc::new(l);
        let inputs = vec![signed(&mut rng, &[b, n, f])];
        tally.check("left_matmul/pools", inputs, &|g, v| {
            let y = g.left_matmul_const(&l, v[0])?;
            let mean = g.mean_pool_nodes(y)?;
            let max = g.max_pool_nodes(v[0])?;
            g.concat(mean, max)
        });

        let (b, n) = (dim(&mut rng, 1, 3), dim(&mut rng, 2, 5));
        let inputs = vec![signed(&mut rng, &[b, n, n])];
        tally.check("symmetrize/upper_triangle", inputs, &|g, v| {
            let s = g.symmetrize(v[0])?;
            g.upper_triangle(s)
        });

        let (b, c) = (dim(&mut rng, 1, 4), dim(&mut rng, 2, 5));
        let target = Tensor::new(
            &[b, c],
            (0..b * c).map(|k| if k % 3 == 0 { 0.0 } else { rng.random_range(2.0..5.0) }).collect(),
        )
        .unwrap();
        let mut labels = Tensor::zeros(&[b, c]);
        for r in 0..b {
            let k = rng.random_range(0..c);
            labels.data_mut()[r * c + k] = 1.0;
        }
        let bits = Tensor::new(&[b, c], (0..b * c).map(|k| ((k + t) % 2) as f64).collect()).unwrap();
        let inputs = vec![signed(&mut rng, &[b, c])];
        tally.check("mae/ce/bce", inputs, &|g, v| {
            let mae = g.weighted_mae(v[0], &target, 2.5)?;
            let ce = g.softmax_cross_entropy(v[0], &labels)?;
            let bce = g.sigmoid_bce(v[0], &bits)?;
            let s = g.add(mae, ce)?;
            g.add(s, bce)
        });

        let (b, n, din, dout) = (dim(&mut rng, 1, 2), dim(&mut rng, 2, 4), dim(&mut rng, 1, 3), dim(&mut rng, 1, 3));
        let order = t % 4;
        let lap = RescaledLaplacian::new(Tensor::new(&[n, n], small_symmetric(&mut rng, n, 0.3 / n as f64)).unwrap()).unwrap();
        let mut inputs = vec![signed(&mut rng, &[b, n, din])];
        for _ in 0..=order {
            inputs.push(signed(&mut rng, &[din, dout]));
        }
        inputs.push(signed(&mut rng, &[dout]));
        tally.check("chebconv", inputs, &|g, v| {
            chebconv(g, v[0], &lap, &v[1..v.len() - 1], Some(v[v.len() - 1]))
        });
    }
    let secs = start.elapsed().as_secs_f64();
    let first = tally.failures.first().cloned().unwrap_or_default();
    Outcome::new(
        tally.failures.is_empty() && secs < 60.0,
        format!(
            "{} cases ({TRIALS} per op family), {} partials, {} outside rtol {RTOL}; {secs:.1}s {first}",
            tally.cases,
            tally.elements,
            tally.failures.len()
        ),
    )
}

fn random_graph(rng: &mut ChaCha8Rng, n: usize) -> ConnectivityMatrix {
    // A weighted ring keeps the graph connected; chords are random.
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let ring = j == i + 1 || (i == 0 && j == n - 1);
            if ring || rng.random_bool(0.3) {
                let w = rng.random_range(1..20) as f64;
                v[i * n + j] = w;
                v[j * n + i] = w;
            }
        }
    }
    ConnectivityMatrix::new(n, v).unwrap()
}

pub fn chebconv_spectral() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    let instances = 50;
    for k in 0..instances {
        let n = 2 + k % 7;
        let order = k % 4;
        let (b, din, dout) = (1 + k % 2, dim(&mut rng, 1, 3), dim(&mut rng, 1, 3));
        let lap = normalized_laplacian(&random_graph(&mut rng, n));
        let lt = RescaledLaplacian::from_normalized(&Tensor::new(&[n, n], lap.values).unwrap()).unwrap();
        let xs: Vec<f64> = (0..b * n * din).map(|_| rng.random_range(-1.0..1.0)).collect();
        let thetas: Vec<Vec<f64>> =
            (0..=order).map(|_| (0..din * dout).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();

        let mut g = Graph::new();
        let x = g.input(Tensor::new(&[b, n, din], xs.clone()).unwrap());
        let th: Vec<Var> = thetas.iter().map(|d| g.input(Tensor::new(&[din, dout], d.clone()).unwrap())).collect();
        let z = chebconv(&mut g, x, &lt, &th, None).unwrap();
        let got = g.value(z).data().to_vec();

        // U · diag(T_m(λ)) · Uᵀ · X · θ_m summed over m.
        let e = symmetric_eigen(&SquareMatrix::new(n, lt.tensor().data().to_vec()).unwrap()).unwrap();
        let u = &e.eigenvectors;
        let mut want = vec![0.0; b * n * dout];
        for (m, theta) in thetas.iter().enumerate() {
            let tm: Vec<f64> = e.eigenvalues.iter().map(|&lam| chebyshev(m, lam)).collect();
            let p: Vec<f64> = (0..n * n)
                .map(|ij| (0..n).map(|q| u.get(ij / n, q) * tm[q] * u.get(ij % n, q)).sum())
                .collect();
            for bb in 0..b {
                for i in 0..n {
                    for o in 0..dout {
                        let mut acc = 0.0;
                        for j in 0..n {
                            for c in 0..din {
                                acc += p[i * n + j] * xs[(bb * n + j) * din + c] * theta[c * dout + o];
                            }
                        }
                        want[(bb * n + i) * dout + o] += acc;
                    }
                }
            }
        }
        for (a, w) in got.iter().zip(&want) {
            worst = worst.max((a - w).abs());
        }
    }
    Outcome::new(worst <= 1e-8, format!("{instances} instances (N 2..8, M 0..3), max deviation {worst:.2e}"))
}

fn reversal_contract(rng: &mut ChaCha8Rng) -> (bool, f64) {
    let mut bit_exact = true;
    let mut worst = 0.0f64;
    for lambda in [0.0, 0.3, 1.0, 2.5] {
        for _ in 0..10 {
            let shape = [dim(rng, 1, 4), dim(rng, 1, 6)];
            let x0 = Tensor::new(&shape, (0..shape[0] * shape[1]).map(|_| rng.random_range(-1e3..1e3)).collect()).unwrap();
            let upstream = Tensor::new(&shape, (0..x0.len()).map(|_| rng.random_range(-5.0..5.0)).collect()).unwrap();
            let mut store = ParamStore::new();
            let id = store.add_param("x", x0.clone(), "g").unwrap();
            let mut g = Graph::new();
            let x = g.param(&store, id);
            let y = g.grad_reversal(x, lambda).unwrap();
            bit_exact &= g.value(y).data().iter().zip(x0.data()).all(|(a, b)| a.to_bits() == b.to_bits());
            let l = g.weighted_sum(y, &upstream).unwrap();
            g.backward(l).unwrap();
            for (gx, u) in g.grad(x).unwrap().data().iter().zip(upstream.data()) {
                worst = worst.max((gx + lambda * u).abs());
            }
        }
    }
    (bit_exact, worst)
}

/// Linear encoder, GRL, linear classifier on two Gaussian sites. Returns
/// (initial CE, CE after a classifier step, CE after an encoder step).
fn toy_direction(rng: &mut ChaCha8Rng) -> (f64, f64, f64) {
    let (per_site, d, k) = (16, 6, 4);
    let mut xs = Vec::new();
    let mut labels = Tensor::zeros(&[2 * per_site, 2]);
    for s in 0..2 {
        for i in 0..per_site {
            for c in 0..d {
                let centre = if s == 0 { -1.0 } else { 1.0 } * (c as f64 + 1.0) / d as f64;
                xs.push(centre + rng.random_range(-0.5..0.5));
            }
            labels.data_mut()[(s * per_site + i) * 2 + s] = 1.0;
        }
    }
    let x = Tensor::new(&[2 * per_site, d], xs).unwrap();
    let mut store = ParamStore::new();
    let we = store.add_param("enc", signed(rng, &[d, k]), "encdec").unwrap();
    let wc = store.add_param("cls", signed(rng, &[k, 2]), "aux").unwrap();
    let bc = store.add_param("cls_b", Tensor::zeros(&[2]), "aux").unwrap();
    let loss = |store: &ParamStore| {
        let mut g = Graph::new();
        let xv = g.input(x.clone());
        let (e, c, b) = (g.param(store, we), g.param(store, wc), g.param(store, bc));
        let h = g.matmul(xv, e).unwrap();
        let r = g.grad_reversal(h, 1.0).unwrap();
        let z = g.matmul(r, c).unwrap();
        let z = g.add_bias(z, b).unwrap();
        let ce = g.softmax_cross_entropy(z, &labels).unwrap();
        g.backward(ce).unwrap();
        (g.value(ce).item(), g.param_grads(store))
    };
    let (l0, grads) = loss(&store);
    let stepped = |ids: &[sc_harmon_autodiff::ParamId]| {
        let mut s = store.clone();
        for &id in ids {
            let gd = grads[id.index()].as_ref().unwrap();
            for (v, d) in s.value_mut(id).data_mut().iter_mut().zip(gd.data()) {
                *v -= 1e-2 * d;
            }
        }
        loss(&s).0
    };
    (l0, stepped(&[wc, bc]), stepped(&[we]))
}

fn model_direction(kind: ArchKind) -> (f64, f64, f64) {
    let n = 8;
    let cfg = SyntheticConfig {
        n_nodes: n,
        n_subjects: 12,
        seed: 7,
        ..Default::default()
    };
    let cohort = generate_synthetic_cohort(&cfg, &standard_sites(), &SyntheticSiteEffect::default_for(n)).unwrap();
    let cohort = split_cohort(&cohort, SplitRatios::DEFAULT, 7).unwrap();
    let samples: Vec<(&ConnectivityMatrix, usize)> = cohort
        .subjects
        .iter()
        .filter(|r| r.site.site_index == 0 || r.site.site_index == 3)
        .map(|r| (&r.matrix, usize::from(r.site.site_index == 3)))
        .collect();
    let mut arch = ArchitectureConfig::default_for(kind, n, 2);
    arch.n_sites = 2;
    let mut model = HarmonizerModel::new(arch.clone(), 7).unwrap();
    // The output layer of the classifier starts at zero, which would block
    // every gradient into the encoder.
    let last = format!("cls.{}.", arch.classifier_hidden.len());
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let store = model.params_mut();
    let ids: Vec<_> = store.ids().filter(|&id| store.name(id).starts_with(&last)).collect();
    for id in ids {
        for v in store.value_mut(id).data_mut() {
            *v = rng.random_range(-0.05..0.05);
        }
    }
    let (l0, grads) = model.site_loss_and_grads(&samples, 1.0).unwrap();
    let stepped = |module: Module| {
        let mut m = model.clone();
        let store = m.params_mut();
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let Some(gd) = &grads[id.index()] else { continue };
            if Module::of(store.name(id)) != Some(module) {
                continue;
            }
            for (v, d) in store.value_mut(id).data_mut().iter_mut().zip(gd.data()) {
                *v -= 1e-4 * d;
            }
        }
        m.site_loss_and_grads(&samples, 1.0).unwrap().0
    };
    (l0, stepped(Module::Classifier), stepped(Module::Encoder))
}

pub fn grad_reversal() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (bit_exact, worst) = reversal_contract(&mut rng);
    let mut directions = vec![("toy", toy_direction(&mut rng))];
    directions.push(("fae", model_direction(ArchKind::Fae)));
    directions.push(("gae", model_direction(ArchKind::Gae)));
    let adversarial = directions.iter().all(|(_, (l0, lc, le))| lc < l0 && le > l0);
    let summary: Vec<String> = directions
        .iter()
        .map(|(name, (l0, lc, le))| format!("{name} CE {l0:.5}: cls step {lc:.5}, enc step {le:.5}"))
        .collect();
    Outcome::new(
        bit_exact && worst <= 1e-12 && adversarial,
        format!(
            "forward bit-exact {bit_exact}, max |grad + lambda*upstream| {worst:.1e}; {}",
            summary.join("; ")
        ),
    )
}

pub fn adain_statistics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst_mean = 0.0f64;
    let mut worst_std = 0.0f64;
    let mut columns = 0;
    for _ in 0..50 {
        let (b, n, k) = (dim(&mut rng, 1, 4), dim(&mut rng, 2, 40), dim(&mut rng, 1, 8));
        let xs: Vec<f64> = (0..b * n * k).map(|_| rng.random_range(-5.0..5.0) * rng.random_range(0.1..10.0)).collect();
        let scale: Vec<f64> = (0..b * k).map(|_| rng.random_range(-3.0..3.0)).collect();
        let shift: Vec<f64> = (0..b * k).map(|_| rng.random_range(-10.0..10.0)).collect();
        // eps is set from the smallest input deviation so that it stays
        // below 1e-12·σ for every column.
        let mut min_sd = f64::INFINITY;
        for bb in 0..b {
            for c in 0..k {
                let col: Vec<f64> = (0..n).map(|i| xs[(bb * n + i) * k + c]).collect();
                let (_, sd) = moments(&col);
                min_sd = min_sd.min(sd);
            }
        }
        let eps = 1e-12 * min_sd * min_sd.min(1.0);
        let mut g = Graph::new();
        let x = g.input(Tensor::new(&[b, n, k], xs).unwrap());
        let s = g.input(Tensor::new(&[b, k], scale.clone()).unwrap());
        let h = g.input(Tensor::new(&[b, k], shift.clone()).unwrap());
        let y = g.adain(x, s, h, eps).unwrap();
        let out = g.value(y).data();
        for bb in 0..b {
            for c in 0..k {
                let col: Vec<f64> = (0..n).map(|i| out[(bb * n + i) * k + c]).collect();
                let (mean, sd) = moments(&col);
                worst_mean = worst_mean.max((mean - shift[bb * k + c]).abs());
                worst_std = worst_std.max((sd - scale[bb * k + c].abs()).abs());
                columns += 1;
            }
        }
    }
    Outcome::new(
        worst_mean <= 1e-9 && worst_std <= 1e-9,
        format!("{columns} columns, max mean error {worst_mean:.1e}, max std error {worst_std:.1e}"),
    )
}

fn moments(col: &[f64]) -> (f64, f64) {
    let mean = col.iter().sum::<f64>() / col.len() as f64;
    let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / col.len() as f64;
    (mean, var.sqrt())
}
