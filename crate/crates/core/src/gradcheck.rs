//! Finite-difference verification suites: every tensor operation, every
//! network layer, the hand layer, every loss term, and the full
//! grid-to-total-loss pipeline. The command-line `gradcheck` subcommand and
//! the acceptance tests both run these.
//!
//! Step sizes scale with the depth of the function under test: raw
//! operations probe at 1e-5; composed layers and pipelines probe at 1e-4,
//! where central-difference round-off on near-zero gradient coordinates
//! would otherwise dominate the quotient.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::config::Config;
use crate::fusion::{fuse_sequence, AggregationMode};
use crate::handmodel::{hand_forward, template_from_seed, POSE_DIM, SHAPE_DIM};
use crate::losses::{
    adv_generator_loss, discriminator_loss, l2d, max_mse, motion_loss, smooth_loss, LossKind,
    MotionTarget,
};
use crate::nn::{
    BiGru, Decoder, Encoder, GruLayer, LayerNorm, LinearLayer, Mlp2, MultiHeadAttention,
    ParamStore, Session,
};
use crate::seeding::{derive_rng, stream};
use crate::synthdata::generate_splits;
use crate::tensor::{finite_diff_check_multi, Array, Tensor};
use crate::training::{generator_losses, prepare, run_generator, Models, Prepared};
use crate::Result;

pub const TOLERANCE: f64 = 1e-4;
const OP_STEP: f64 = 1e-5;
const LAYER_STEP: f64 = 1e-4;

/// Outcome of one named check.
#[derive(Clone, Debug)]
pub struct Check {
    pub name: String,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }
}

fn rand_array(shape: &[usize], rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Array {
    let len = shape.iter().product();
    Array::new(
        shape.to_vec(),
        (0..len).map(|_| rng.gen_range(lo..hi)).collect(),
    )
    .expect("shape/data agree")
}

type LossFn<'a> = Box<dyn Fn(&[Tensor]) -> Result<Tensor> + 'a>;

fn run_trials(
    name: &str,
    trials: usize,
    step: f64,
    rng: &mut ChaCha8Rng,
    make: impl Fn(&mut ChaCha8Rng) -> (Vec<Array>, LossFn<'static>),
) -> Result<Check> {
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let (inputs, f) = make(rng);
        let err = finite_diff_check_multi(|xs| f(xs), &inputs, step)?;
        worst = worst.max(err);
    }
    Ok(Check {
        name: name.to_string(),
        max_rel_err: worst,
        tolerance: TOLERANCE,
    })
}

/// Randomized gradient checks for every differentiable tensor operation.
pub fn ops_suite(seed: u64, trials: usize) -> Result<Vec<Check>> {
    let mut rng = derive_rng(seed, &[stream::GRADCHECK, 1]);
    let mut checks = Vec::new();
    // unary elementwise ops and their input domains
    let unary: Vec<(&str, f64, f64, fn(&Tensor) -> Result<Tensor>)> = vec![
        ("exp", -2.0, 2.0, |x| x.exp()),
        ("log", 0.5, 3.0, |x| x.log()),
        ("pow", 0.5, 2.0, |x| x.powf(2.5)),
        ("relu", -2.0, 2.0, |x| x.relu()),
        ("tanh", -2.0, 2.0, |x| x.tanh()),
        ("sigmoid", -2.0, 2.0, |x| x.sigmoid()),
        ("sin", -3.0, 3.0, |x| x.sin()),
        ("cos", -3.0, 3.0, |x| x.cos()),
        ("sqrt", 0.5, 4.0, |x| x.sqrt()),
        ("neg", -2.0, 2.0, |x| x.neg()),
    ];
    for (name, lo, hi, op) in unary {
        checks.push(run_trials(name, trials, OP_STEP, &mut rng, |rng| {
            let x = rand_array(&[2, 3], rng, lo, hi);
            let probe = Tensor::from_array(rand_array(&[2, 3], rng, -1.0, 1.0));
            (
                vec![x],
                Box::new(move |xs: &[Tensor]| op(&xs[0])?.mul(&probe)?.sum()),
            )
        })?);
    }
    // binary elementwise with broadcasting
    let binary: Vec<(&str, fn(&Tensor, &Tensor) -> Result<Tensor>)> = vec![
        ("add", |a, b| a.add(b)),
        ("sub", |a, b| a.sub(b)),
        ("mul", |a, b| a.mul(b)),
        ("div", |a, b| a.div(&b.add_scalar(4.0)?)),
    ];
    for (name, op) in binary {
        checks.push(run_trials(name, trials, OP_STEP, &mut rng, |rng| {
            let a = rand_array(&[3, 4], rng, -2.0, 2.0);
            let b = rand_array(&[4], rng, -1.5, 1.5);
            (
                vec![a, b],
                Box::new(move |xs: &[Tensor]| op(&xs[0], &xs[1])?.powf(2.0)?.sum()),
            )
        })?);
    }
    checks.push(run_trials("matmul", trials, OP_STEP, &mut rng, |rng| {
        let a = rand_array(&[3, 4], rng, -1.0, 1.0);
        let b = rand_array(&[4, 2], rng, -1.0, 1.0);
        (
            vec![a, b],
            Box::new(|xs: &[Tensor]| xs[0].matmul(&xs[1])?.powf(2.0)?.sum()),
        )
    })?);
    checks.push(run_trials("transpose", trials, OP_STEP, &mut rng, |rng| {
        let a = rand_array(&[3, 4], rng, -1.0, 1.0);
        let probe = Tensor::from_array(rand_array(&[4, 3], rng, -1.0, 1.0));
        (
            vec![a],
            Box::new(move |xs: &[Tensor]| xs[0].transpose()?.mul(&probe)?.sum()),
        )
    })?);
    checks.push(run_trials("softmax", trials, OP_STEP, &mut rng, |rng| {
        let a = rand_array(&[3, 5], rng, -2.0, 2.0);
        let probe = Tensor::from_array(rand_array(&[3, 5], rng, -1.0, 1.0));
        (
            vec![a],
            Box::new(move |xs: &[Tensor]| xs[0].softmax(1)?.mul(&probe)?.sum()),
        )
    })?);
    let reductions: Vec<(&str, fn(&Tensor) -> Result<Tensor>)> = vec![
        ("sum", |x| x.powf(2.0)?.sum()),
        ("sum_axis", |x| x.sum_axis(1)?.powf(2.0)?.sum()),
        ("mean", |x| x.powf(2.0)?.mean()),
        ("mean_axis", |x| x.mean_axis(0)?.powf(2.0)?.sum()),
        ("max", |x| x.max()),
        ("max_axis", |x| x.max_axis(1)?.sum()),
    ];
    for (name, op) in reductions {
        checks.push(run_trials(name, trials, OP_STEP, &mut rng, |rng| {
            let a = rand_array(&[3, 4], rng, -2.0, 2.0);
            (vec![a], Box::new(move |xs: &[Tensor]| op(&xs[0])))
        })?);
    }
    checks.push(run_trials("narrow", trials, OP_STEP, &mut rng, |rng| {
        let a = rand_array(&[4, 5], rng, -1.0, 1.0);
        (
            vec![a],
            Box::new(|xs: &[Tensor]| xs[0].narrow(1, 1, 3)?.powf(2.0)?.sum()),
        )
    })?);
    checks.push(run_trials("concat", trials, OP_STEP, &mut rng, |rng| {
        let a = rand_array(&[2, 3], rng, -1.0, 1.0);
        let b = rand_array(&[2, 3], rng, -1.0, 1.0);
        (
            vec![a, b],
            Box::new(|xs: &[Tensor]| {
                Tensor::concat(&[&xs[0], &xs[1]], 0)?.powf(2.0)?.sum()
            }),
        )
    })?);
    checks.push(run_trials("reshape", trials, OP_STEP, &mut rng, |rng| {
        let a = rand_array(&[2, 6], rng, -1.0, 1.0);
        (
            vec![a],
            Box::new(|xs: &[Tensor]| xs[0].reshape(&[3, 4])?.sum_axis(0)?.powf(2.0)?.sum()),
        )
    })?);
    Ok(checks)
}

/// Gradient checks through each network layer, the hand layer, the fusion
/// arithmetic, and every loss term, plus store-parameter spot checks.
pub fn layers_suite(seed: u64) -> Result<Vec<Check>> {
    let mut rng = derive_rng(seed, &[stream::GRADCHECK, 2]);
    let mut checks = Vec::new();
    let trials = 3;
    let dim = 8;

    // linear
    {
        let mut store = ParamStore::new();
        let lin = LinearLayer::new(&mut store, &mut rng, "lin", dim, 6);
        checks.push(run_trials("layer.linear", trials, LAYER_STEP, &mut rng, |rng| {
            let x = rand_array(&[3, dim], rng, -1.0, 1.0);
            let store = store.clone();
            let lin = LinearLayer {
                weight: lin.weight,
                bias: lin.bias,
                in_dim: lin.in_dim,
                out_dim: lin.out_dim,
            };
            (
                vec![x],
                Box::new(move |xs: &[Tensor]| {
                    let s = Session::eval(&store);
                    lin.forward(&s, &xs[0])?.powf(2.0)?.sum()
                }),
            )
        })?);
    }
    // layer norm
    {
        let mut store = ParamStore::new();
        let norm = LayerNorm::new(&mut store, "ln", dim);
        checks.push(run_trials(
            "layer.layer_norm",
            trials,
            LAYER_STEP,
            &mut rng,
            |rng| {
                let x = rand_array(&[3, dim], rng, -1.0, 1.0);
                let store = store.clone();
                let norm = LayerNorm {
                    gain: norm.gain,
                    bias: norm.bias,
                    dim: norm.dim,
                };
                (
                    vec![x],
                    Box::new(move |xs: &[Tensor]| {
                        let s = Session::eval(&store);
                        norm.forward(&s, &xs[0])?.powf(2.0)?.sum()
                    }),
                )
            },
        )?);
    }
    // multi-head attention (queries, keys, values all differentiated)
    {
        let mut store = ParamStore::new();
        let mha = MultiHeadAttention::new(&mut store, &mut rng, "mha", dim, 2);
        let store = std::rc::Rc::new(store);
        let mha = std::rc::Rc::new(mha);
        checks.push(run_trials(
            "layer.attention",
            trials,
            LAYER_STEP,
            &mut rng,
            |rng| {
                let q = rand_array(&[2, dim], rng, -1.0, 1.0);
                let kv = rand_array(&[4, dim], rng, -1.0, 1.0);
                let store = store.clone();
                let mha = mha.clone();
                (
                    vec![q, kv],
                    Box::new(move |xs: &[Tensor]| {
                        let s = Session::eval(&store);
                        mha.forward(&s, &xs[0], &xs[1], &xs[1])?.powf(2.0)?.sum()
                    }),
                )
            },
        )?);
    }
    // encoder / decoder stacks
    {
        let mut store = ParamStore::new();
        let enc = Encoder::new(&mut store, &mut rng, "enc", 2, dim, 2, 16);
        let store = std::rc::Rc::new(store);
        let enc = std::rc::Rc::new(enc);
        checks.push(run_trials(
            "layer.encoder",
            trials,
            LAYER_STEP,
            &mut rng,
            |rng| {
                let x = rand_array(&[4, dim], rng, -1.0, 1.0);
                let store = store.clone();
                let enc = enc.clone();
                (
                    vec![x],
                    Box::new(move |xs: &[Tensor]| {
                        let s = Session::eval(&store);
                        enc.forward(&s, &xs[0])?.powf(2.0)?.sum()
                    }),
                )
            },
        )?);
    }
    {
        let mut store = ParamStore::new();
        let dec = Decoder::new(&mut store, &mut rng, "dec", 2, dim, 2, 16);
        let store = std::rc::Rc::new(store);
        let dec = std::rc::Rc::new(dec);
        checks.push(run_trials(
            "layer.decoder",
            trials,
            LAYER_STEP,
            &mut rng,
            |rng| {
                let q = rand_array(&[1, dim], rng, -1.0, 1.0);
                let mem = rand_array(&[4, dim], rng, -1.0, 1.0);
                let store = store.clone();
                let dec = dec.clone();
                (
                    vec![q, mem],
                    Box::new(move |xs: &[Tensor]| {
                        let s = Session::eval(&store);
                        dec.forward(&s, &xs[0], &xs[1])?.powf(2.0)?.sum()
                    }),
                )
            },
        )?);
    }
    // GRU / BiGRU
    {
        let mut store = ParamStore::new();
        let gru = GruLayer::new(&mut store, &mut rng, "gru", 5, 6);
        let store = std::rc::Rc::new(store);
        let gru = std::rc::Rc::new(gru);
        checks.push(run_trials("layer.gru", trials, LAYER_STEP, &mut rng, |rng| {
            let x = rand_array(&[4, 5], rng, -1.0, 1.0);
            let store = store.clone();
            let gru = gru.clone();
            (
                vec![x],
                Box::new(move |xs: &[Tensor]| {
                    let s = Session::eval(&store);
                    gru.forward(&s, &xs[0], false)?.powf(2.0)?.sum()
                }),
            )
        })?);
    }
    {
        let mut store = ParamStore::new();
        let gru = BiGru::new(&mut store, &mut rng, "bigru", 5, 4);
        let store = std::rc::Rc::new(store);
        let gru = std::rc::Rc::new(gru);
        checks.push(run_trials(
            "layer.bigru",
            trials,
            LAYER_STEP,
            &mut rng,
            |rng| {
                let x = rand_array(&[4, 5], rng, -1.0, 1.0);
                let store = store.clone();
                let gru = gru.clone();
                (
                    vec![x],
                    Box::new(move |xs: &[Tensor]| {
                        let s = Session::eval(&store);
                        gru.forward(&s, &xs[0])?.powf(2.0)?.sum()
                    }),
                )
            },
        )?);
    }
    // tanh MLP head
    {
        let mut store = ParamStore::new();
        let mlp = Mlp2::new(&mut store, &mut rng, "mlp", dim, dim, 5);
        let store = std::rc::Rc::new(store);
        let mlp = std::rc::Rc::new(mlp);
        checks.push(run_trials("layer.mlp2", trials, LAYER_STEP, &mut rng, |rng| {
            let x = rand_array(&[3, dim], rng, -1.0, 1.0);
            let store = store.clone();
            let mlp = mlp.clone();
            (
                vec![x],
                Box::new(move |xs: &[Tensor]| {
                    let s = Session::eval(&store);
                    mlp.forward(&s, &xs[0])?.powf(2.0)?.sum()
                }),
            )
        })?);
    }
    // hand layer with respect to pose and shape
    {
        let template = std::rc::Rc::new(template_from_seed(7));
        checks.push(run_trials(
            "hand_forward",
            trials,
            OP_STEP,
            &mut rng,
            |rng| {
                let theta = rand_array(&[POSE_DIM], rng, -0.7, 0.7);
                let beta = rand_array(&[SHAPE_DIM], rng, -1.5, 1.5);
                let probe = Tensor::from_array(rand_array(&[21, 3], rng, -1.0, 1.0));
                let template = template.clone();
                (
                    vec![theta, beta],
                    Box::new(move |xs: &[Tensor]| {
                        let mesh = hand_forward(&xs[0], &xs[1], &template)?;
                        mesh.joints.mul(&probe)?.sum()?.mul_scalar(1e-2)
                    }),
                )
            },
        )?);
    }
    // fusion
    checks.push(run_trials(
        "fusion.dynamic",
        trials,
        OP_STEP,
        &mut rng,
        |rng| {
            let poses = rand_array(&[4, 6], rng, -1.0, 1.0);
            let fw = rand_array(&[4, 6], rng, -0.5, 0.5);
            let bw = rand_array(&[4, 6], rng, -0.5, 0.5);
            let conf = rand_array(&[4], rng, -1.0, 1.0);
            (
                vec![poses, fw, bw, conf],
                Box::new(|xs: &[Tensor]| {
                    fuse_sequence(
                        &xs[0],
                        &xs[1],
                        &xs[2],
                        &xs[3],
                        AggregationMode::Dynamic,
                        None,
                    )?
                    .powf(2.0)?
                    .sum()
                }),
            )
        },
    )?);
    // loss terms
    checks.push(run_trials("loss.max_mse", trials, OP_STEP, &mut rng, |rng| {
        let p = rand_array(&[6, 3], rng, -3.0, 3.0);
        let q = rand_array(&[6, 3], rng, -3.0, 3.0);
        (
            vec![p],
            Box::new(move |xs: &[Tensor]| max_mse(&xs[0], &Tensor::from_array(q.clone()))),
        )
    })?);
    checks.push(run_trials("loss.l2d", trials, OP_STEP, &mut rng, |rng| {
        let p = rand_array(&[21, 2], rng, -3.0, 3.0);
        let q = rand_array(&[21, 2], rng, -3.0, 3.0);
        (
            vec![p],
            Box::new(move |xs: &[Tensor]| l2d(&xs[0], &Tensor::from_array(q.clone()))),
        )
    })?);
    checks.push(run_trials("loss.smooth", trials, OP_STEP, &mut rng, |rng| {
        let x = rand_array(&[5, 6], rng, -1.0, 1.0);
        (
            vec![x],
            Box::new(|xs: &[Tensor]| smooth_loss(&xs[0], 0.7, 1.3)),
        )
    })?);
    checks.push(run_trials("loss.motion", trials, OP_STEP, &mut rng, |rng| {
        let gt = rand_array(&[4, POSE_DIM], rng, -0.5, 0.5);
        let poses = rand_array(&[4, POSE_DIM], rng, -0.5, 0.5);
        let fw = rand_array(&[4, POSE_DIM], rng, -0.2, 0.2);
        let bw = rand_array(&[4, POSE_DIM], rng, -0.2, 0.2);
        (
            vec![poses, fw, bw],
            Box::new(move |xs: &[Tensor]| {
                motion_loss(
                    LossKind::MaxMse,
                    &xs[0],
                    &xs[1],
                    &xs[2],
                    &gt,
                    MotionTarget::GroundTruth,
                )
            }),
        )
    })?);
    checks.push(run_trials(
        "loss.adversarial",
        trials,
        OP_STEP,
        &mut rng,
        |rng| {
            let logits_g = rand_array(&[3], rng, -1.0, 1.0);
            let logits_r = rand_array(&[3], rng, -1.0, 1.0);
            (
                vec![logits_g, logits_r],
                Box::new(|xs: &[Tensor]| {
                    // probe both objectives through a sigmoid so scores stay
                    // in range
                    let g = xs[0].sigmoid()?;
                    let r = xs[1].sigmoid()?;
                    adv_generator_loss(&g)?.add(&discriminator_loss(&g, &r)?)
                }),
            )
        },
    )?);
    Ok(checks)
}

fn tiny_pipeline_config() -> Config {
    let mut c = Config::desk();
    c.train_sequences = 1;
    c.test_sequences = 1;
    c.grid_h = 4;
    c.grid_w = 4;
    c.grid_c = 3;
    c.model_dim = 8;
    c.enc_layers = 1;
    c.dec_layers = 1;
    c.heads = 2;
    c.ffn_dim = 16;
    c.disc_hidden = 8;
    c.t_len = 3;
    c
}

/// Full-pipeline check: total training loss differentiated with respect to
/// every cell of every input grid, plus spot checks on sampled generator
/// parameters through the same loss.
pub fn end2end_suite(seed: u64) -> Result<Vec<Check>> {
    let config = tiny_pipeline_config();
    let models = Models::new(&config)?;
    let (train, _) = generate_splits(&config)?;
    let prepared = prepare(&train, &models.template)?;
    let prep = &prepared[0];

    let loss_for = |models: &Models, prep: &Prepared| -> Result<f64> {
        let session = Session::eval(&models.gen_store);
        let fwd = run_generator(models, &session, prep, config.fusion_mode)?;
        let (total, _) = generator_losses(models, prep, &fwd)?;
        total.item()
    };

    // with respect to the input grids
    let grids: Vec<Array> = prep.sample.grids.clone();
    let grid_err = finite_diff_check_multi(
        |xs| {
            let session = Session::eval(&models.gen_store);
            let fwd = crate::training::run_generator_on(
                &models,
                &session,
                xs,
                &prep.visibility,
                config.fusion_mode,
            )?;
            let (total, _) = generator_losses(&models, prep, &fwd)?;
            Ok(total)
        },
        &grids,
        1e-3,
    )?;
    let mut checks = vec![Check {
        name: "end2end.grid_to_loss".into(),
        max_rel_err: grid_err,
        tolerance: TOLERANCE,
    }];

    // parameter spot checks: perturb sampled coordinates of sampled
    // parameters and compare against the session gradients
    let session = Session::train(&models.gen_store);
    let fwd = run_generator(&models, &session, prep, config.fusion_mode)?;
    let (total, _) = generator_losses(&models, prep, &fwd)?;
    let analytic = session.backward(&total)?;

    let loss_scale = total.item()?.abs().max(1.0);
    let mut rng = derive_rng(seed, &[stream::GRADCHECK, 3]);
    let mut worst = 0.0f64;
    let h = 1e-4;
    for _ in 0..8 {
        let pid = rng.gen_range(0..models.gen_store.len());
        let Some(g) = &analytic[pid] else { continue };
        let coord = rng.gen_range(0..g.len());
        let mut perturbed = Models::new(&config)?;
        let mut eval_at = |delta: f64| -> Result<f64> {
            let id = crate::nn::param_id(pid);
            perturbed.gen_store.value_mut(id).data_mut()[coord] += delta;
            let v = loss_for(&perturbed, prep)?;
            perturbed.gen_store.value_mut(id).data_mut()[coord] -= delta;
            Ok(v)
        };
        let ana = g.data()[coord];
        let fp = eval_at(h)?;
        let fm = eval_at(-h)?;
        let numeric = (fp - fm) / (2.0 * h);
        // both sides zero at the loss's own scale count as agreement; the
        // fixed 1e-12 guard is meaningless against a ~1e3-magnitude loss
        if ana.abs().max(numeric.abs()) < 1e-10 * loss_scale {
            continue;
        }
        let rel = (ana - numeric).abs() / (ana.abs() + numeric.abs() + 1e-12);
        worst = worst.max(rel);
    }
    checks.push(Check {
        name: "end2end.params_to_loss".into(),
        max_rel_err: worst,
        tolerance: TOLERANCE,
    });
    Ok(checks)
}
