use super::cost::{count_flops, count_nonzero, count_params, layer_shapes};
use crate::error::{Error, Result};
use crate::nn::{Layer, LayerSelector, Model};
use crate::tensor::{Param, Scalar, Tensor};

/// Relative logit tolerance for masked-versus-compacted agreement.
pub const EQUIVALENCE_TOL: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct CompactionReport {
    /// `(layer name, units removed)` for each fully connected layer touched.
    pub removed_neurons: Vec<(String, usize)>,
    /// `(layer name, channels removed)` for each convolution touched.
    pub removed_channels: Vec<(String, usize)>,
    pub params_before: usize,
    pub params_after: usize,
    pub nonzero_before: usize,
    pub nonzero_after: usize,
    pub flops_before: u64,
    pub flops_after: u64,
    /// `max |a − b| / max |a|` over a probe batch, when one was given.
    pub max_output_divergence: Option<f64>,
}

/// New parameter from `idx` (flat indices into `p`), keeping freeze flags.
fn gather<T: Scalar>(p: &Param<T>, shape: &[usize], idx: &[usize]) -> Result<Param<T>> {
    let data = idx.iter().map(|&i| p.value.data()[i]).collect();
    let mut out = Param::new(Tensor::new(shape, data)?);
    out.trainable = p.trainable;
    out.set_frozen(p.frozen().map(|f| idx.iter().map(|&i| f[i]).collect()));
    Ok(out)
}

fn pick<T: Copy>(v: &[T], keep: &[usize]) -> Vec<T> {
    keep.iter().map(|&i| v[i]).collect()
}

/// Conv weight with only the given output and input channels.
fn conv_weight<T: Scalar>(p: &Param<T>, outs: &[usize], ins: &[usize]) -> Result<Param<T>> {
    let s = p.value.shape().to_vec();
    let (cin, kk) = (s[1], s[2] * s[3]);
    let mut idx = Vec::with_capacity(outs.len() * ins.len() * kk);
    for &o in outs {
        for &i in ins {
            idx.extend((0..kk).map(|t| (o * cin + i) * kk + t));
        }
    }
    gather(p, &[outs.len(), ins.len(), s[2], s[3]], &idx)
}

/// Linear weight with only the given rows and columns.
fn linear_weight<T: Scalar>(p: &Param<T>, rows: &[usize], cols: &[usize]) -> Result<Param<T>> {
    let d = p.value.shape()[1];
    let idx: Vec<usize> = rows
        .iter()
        .flat_map(|&r| cols.iter().map(move |&c| r * d + c))
        .collect();
    gather(p, &[rows.len(), cols.len()], &idx)
}

fn vector<T: Scalar>(p: &Param<T>, keep: &[usize]) -> Result<Param<T>> {
    gather(p, &[keep.len()], keep)
}

/// Keep-list from a dead predicate, never emptying the layer: if everything
/// is dead the lowest index stays.
fn survivors(n: usize, dead: impl Fn(usize) -> bool) -> Vec<usize> {
    let keep: Vec<usize> = (0..n).filter(|&i| !dead(i)).collect();
    if keep.is_empty() {
        vec![0]
    } else {
        keep
    }
}

/// Deletes channels whose batch-norm `γ` and `β` are both zero from every
/// batch-normalized convolution except the first, together with their BN
/// entries and the matching input slices of the consumer. Returns
/// `(layer index, removed)` pairs.
pub fn remove_zero_channels<T: Scalar>(model: &mut Model<T>) -> Result<Vec<(usize, usize)>> {
    let first = model.select_layers(&LayerSelector::Conv)?.first().copied();
    let mut removed = Vec::new();
    for li in 0..model.layers.len() {
        if Some(li) == first {
            continue;
        }
        let (Layer::Conv2d(conv), Some(Layer::BatchNorm(bn))) = (&model.layers[li], model.layers.get(li + 1)) else {
            continue;
        };
        let cout = conv.out_channels();
        let g = bn.state.gamma.value.data();
        let b = bn.state.beta.value.data();
        let keep = survivors(cout, |c| g[c] == T::zero() && b[c] == T::zero());
        if keep.len() == cout {
            continue;
        }
        let shapes = layer_shapes(model)?;
        let consumer = find_consumer(model, li + 2)?;

        let Layer::Conv2d(conv) = &mut model.layers[li] else {
            unreachable!()
        };
        let all_in: Vec<usize> = (0..conv.in_channels()).collect();
        conv.weight = conv_weight(&conv.weight, &keep, &all_in)?;
        if let Some(bias) = &conv.bias {
            conv.bias = Some(vector(bias, &keep)?);
        }
        let Layer::BatchNorm(bn) = &mut model.layers[li + 1] else {
            unreachable!()
        };
        bn.state.gamma = vector(&bn.state.gamma, &keep)?;
        bn.state.beta = vector(&bn.state.beta, &keep)?;
        bn.state.running_mean = pick(&bn.state.running_mean, &keep);
        bn.state.running_var = pick(&bn.state.running_var, &keep);

        match consumer {
            Consumer::Conv(j) => {
                let Layer::Conv2d(next) = &mut model.layers[j] else {
                    unreachable!()
                };
                let outs: Vec<usize> = (0..next.out_channels()).collect();
                next.weight = conv_weight(&next.weight, &outs, &keep)?;
            }
            Consumer::Flatten(j) => {
                let plane: usize = shapes[j][1..].iter().product();
                let Layer::Linear(next) = &mut model.layers[j + 1] else {
                    unreachable!()
                };
                let rows: Vec<usize> = (0..next.outputs()).collect();
                let cols: Vec<usize> = keep.iter().flat_map(|&c| c * plane..(c + 1) * plane).collect();
                next.weight = linear_weight(&next.weight, &rows, &cols)?;
            }
        }
        removed.push((li, cout - keep.len()));
    }
    Ok(removed)
}

enum Consumer {
    Conv(usize),
    /// Flatten at this index, followed by a fully connected layer.
    Flatten(usize),
}

fn find_consumer<T: Scalar>(model: &Model<T>, from: usize) -> Result<Consumer> {
    for j in from..model.layers.len() {
        match &model.layers[j] {
            Layer::Relu { .. } | Layer::MaxPool2 { .. } => continue,
            Layer::Conv2d(_) => return Ok(Consumer::Conv(j)),
            Layer::Flatten { .. } if matches!(model.layers.get(j + 1), Some(Layer::Linear(_))) => {
                return Ok(Consumer::Flatten(j))
            }
            _ => break,
        }
    }
    Err(Error::Compaction(format!(
        "channels before layer {from} feed a consumer that cannot drop input slices"
    )))
}

/// Removes hidden units with an all-zero incoming row (their constant
/// `relu(b)` is folded into the next layer's bias) or an all-zero outgoing
/// column. Returns `(layer index, removed)` pairs for one pass.
pub fn remove_dead_neurons<T: Scalar>(model: &mut Model<T>) -> Result<Vec<(usize, usize)>> {
    let mut removed = Vec::new();
    for li in 0..model.layers.len() {
        let Some(nl) = model.next_linear(li) else { continue };
        let (Layer::Linear(lin), Layer::Linear(next)) = (&model.layers[li], &model.layers[nl]) else {
            continue;
        };
        let (d, h, o) = (lin.inputs(), lin.outputs(), next.outputs());
        let w = lin.weight.value.data();
        let w2 = next.weight.value.data();
        let dead_in = |j: usize| w[j * d..(j + 1) * d].iter().all(|&v| v == T::zero());
        let dead_out = |j: usize| (0..o).all(|r| w2[r * h + j] == T::zero());
        let keep = survivors(h, |j| dead_in(j) || dead_out(j));
        if keep.len() == h {
            continue;
        }
        let folds: Vec<(usize, T)> = (0..h)
            .filter(|j| !keep.contains(j) && dead_in(*j) && !dead_out(*j))
            .map(|j| {
                let c = lin.bias.value.data()[j];
                (j, if c > T::zero() { c } else { T::zero() })
            })
            .filter(|&(_, c)| c != T::zero())
            .collect();

        let Layer::Linear(lin) = &mut model.layers[li] else {
            unreachable!()
        };
        let all_in: Vec<usize> = (0..d).collect();
        lin.weight = linear_weight(&lin.weight, &keep, &all_in)?;
        lin.bias = vector(&lin.bias, &keep)?;

        let Layer::Linear(next) = &mut model.layers[nl] else {
            unreachable!()
        };
        for &(j, c) in &folds {
            for r in 0..o {
                let add = c * next.weight.value.data()[r * h + j];
                if add != T::zero() {
                    next.bias.unfreeze(r);
                    next.bias.value.data_mut()[r] += add;
                }
            }
        }
        let rows: Vec<usize> = (0..o).collect();
        next.weight = linear_weight(&next.weight, &rows, &keep)?;
        removed.push((li, h - keep.len()));
    }
    Ok(removed)
}

fn max_divergence(a: &Tensor<f32>, b: &Tensor<f32>) -> f64 {
    let scale = a.data().iter().fold(0.0f64, |m, &v| m.max(f64::from(v).abs()));
    let diff = a
        .data()
        .iter()
        .zip(b.data())
        .fold(0.0f64, |m, (&x, &y)| m.max((f64::from(x) - f64::from(y)).abs()));
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}

/// Channel then neuron removal, repeated to a fixpoint. With a probe batch,
/// masked and compacted eval-mode logits must agree within
/// [`EQUIVALENCE_TOL`], otherwise the result is a compaction error.
pub fn compact(model: &Model<f32>, probe: Option<&Tensor<f32>>) -> Result<(Model<f32>, CompactionReport)> {
    let names = model.layer_names();
    let mut out = model.clone();
    out.clear_caches();
    let mut neurons = vec![0usize; names.len()];
    let mut channels = vec![0usize; names.len()];
    loop {
        let ch = remove_zero_channels(&mut out)?;
        let nr = remove_dead_neurons(&mut out)?;
        if ch.is_empty() && nr.is_empty() {
            break;
        }
        for (li, n) in ch {
            channels[li] += n;
        }
        for (li, n) in nr {
            neurons[li] += n;
        }
    }
    let tally = |v: &[usize]| -> Vec<(String, usize)> {
        v.iter()
            .enumerate()
            .filter(|(_, &n)| n > 0)
            .map(|(i, &n)| (names[i].clone(), n))
            .collect()
    };
    let divergence = match probe {
        Some(x) => {
            let d = max_divergence(&model.predict(x)?, &out.predict(x)?);
            if !(d <= EQUIVALENCE_TOL) {
                return Err(Error::Compaction(format!(
                    "compacted logits diverge by {d:.3e} (tolerance {EQUIVALENCE_TOL:.0e})"
                )));
            }
            Some(d)
        }
        None => None,
    };
    let report = CompactionReport {
        removed_neurons: tally(&neurons),
        removed_channels: tally(&channels),
        params_before: count_params(model),
        params_after: count_params(&out),
        nonzero_before: count_nonzero(model),
        nonzero_after: count_nonzero(&out),
        flops_before: count_flops(model)?,
        flops_after: count_flops(&out)?,
        max_output_divergence: divergence,
    };
    Ok((out, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compact::count_unmasked;
    use crate::nn::{LayerDesc, ModelSpec, ParamRole};
    use crate::prune::{prune_event, AnnealSchedule, PruneMask, PruneSpace, SpaceConfig, SpaceKind};
    use crate::tensor::BnMode;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn probe(shape: &[usize], seed: u64) -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    fn randomize_biases(m: &mut Model<f32>, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (_, role, p) in m.params_mut() {
            if role == ParamRole::Bias {
                p.value
                    .data_mut()
                    .iter_mut()
                    .for_each(|v| *v = rng.random_range(-0.5..0.5));
            }
        }
    }

    #[test]
    fn dense_model_is_unchanged() {
        let m = Model::<f32>::build(&ModelSpec::lenet_300_100(), 0).unwrap();
        let (c, r) = compact(&m, Some(&probe(&[8, 1, 28, 28], 0))).unwrap();
        assert_eq!(c.layer_descs(), m.layer_descs());
        assert_eq!(r.params_after, r.params_before);
        assert_eq!(r.flops_after, r.flops_before);
        assert_eq!(r.max_output_divergence, Some(0.0));
    }

    #[test]
    fn dead_incoming_unit_is_folded_out() {
        let mut m = Model::<f32>::build(&ModelSpec::mlp_parity(5, 4), 1).unwrap();
        randomize_biases(&mut m, 1);
        let w = m.param_mut(0, ParamRole::Weight).unwrap();
        w.value.data_mut()[5..10].fill(0.0);
        m.param_mut(0, ParamRole::Bias).unwrap().value.data_mut()[1] = 0.3;
        let x = probe(&[256, 5], 2);
        let (c, r) = compact(&m, Some(&x)).unwrap();
        assert_eq!(r.removed_neurons, vec![("fc1".to_string(), 1)]);
        assert_eq!(c.layer_descs()[0], LayerDesc::Linear { inputs: 5, outputs: 3 });
        assert!(r.max_output_divergence.unwrap() <= EQUIVALENCE_TOL);
    }

    #[test]
    fn cascade_reaches_fixpoint() {
        // 3 → 2 → 2 → 2: unit A of layer 1 loses its inputs; it is the only
        // input of unit B in layer 2, so B goes too.
        let mut m = Model::<f32>::build(&ModelSpec::lenet_300_100(), 0).unwrap();
        let mut spec = ModelSpec::mlp_parity(3, 2);
        spec.input_shape = vec![3];
        let descs = [
            LayerDesc::Linear { inputs: 3, outputs: 2 },
            LayerDesc::Relu,
            LayerDesc::Linear { inputs: 2, outputs: 2 },
            LayerDesc::Relu,
            LayerDesc::Linear { inputs: 2, outputs: 2 },
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        m.layers = descs.iter().map(|d| Layer::from_desc(d, &mut rng).unwrap()).collect();
        m.spec = spec;
        m.param_mut(0, ParamRole::Weight).unwrap().value.data_mut()[..3].fill(0.0);
        let w2 = m.param_mut(2, ParamRole::Weight).unwrap();
        w2.value.data_mut().copy_from_slice(&[0.7, 0.0, 0.0, 0.9]);
        let (c, r) = compact(&m, Some(&probe(&[64, 3], 1))).unwrap();
        assert_eq!(r.removed_neurons, vec![("fc1".to_string(), 1), ("fc2".to_string(), 1)]);
        assert_eq!(c.param_count(), (3 + 1) + (1 + 1) + (2 + 2));
        let (again, r2) = compact(&c, None).unwrap();
        assert_eq!(again.layer_descs(), c.layer_descs());
        assert!(r2.removed_neurons.is_empty());
    }

    fn vgg_small(seed: u64) -> Model<f32> {
        let descs = [
            LayerDesc::Conv2d {
                in_channels: 3,
                out_channels: 4,
                kernel: 3,
                stride: 1,
                pad: 1,
                bias: false,
            },
            LayerDesc::BatchNorm { channels: 4 },
            LayerDesc::Relu,
            LayerDesc::Conv2d {
                in_channels: 4,
                out_channels: 6,
                kernel: 3,
                stride: 1,
                pad: 1,
                bias: false,
            },
            LayerDesc::BatchNorm { channels: 6 },
            LayerDesc::Relu,
            LayerDesc::MaxPool2,
            LayerDesc::Conv2d {
                in_channels: 6,
                out_channels: 5,
                kernel: 3,
                stride: 1,
                pad: 1,
                bias: false,
            },
            LayerDesc::BatchNorm { channels: 5 },
            LayerDesc::Relu,
            LayerDesc::MaxPool2,
            LayerDesc::Flatten,
            LayerDesc::Linear { inputs: 20, outputs: 7 },
            LayerDesc::Relu,
            LayerDesc::Linear { inputs: 7, outputs: 3 },
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = descs.iter().map(|d| Layer::from_desc(d, &mut rng).unwrap()).collect();
        let mut spec = ModelSpec::small_vgg_bn(3);
        spec.input_shape = vec![3, 8, 8];
        let mut m = Model { spec, layers };
        // give BN non-trivial running statistics
        let x = probe(&[16, 3, 8, 8], seed + 7);
        for _ in 0..3 {
            m.forward(&x, BnMode::Train).unwrap();
        }
        m.clear_caches();
        m
    }

    fn channel_prune(m: &mut Model<f32>, keep: usize) -> PruneMask {
        let space = PruneSpace::build(
            m,
            &SpaceConfig {
                name: "c".into(),
                kind: SpaceKind::Channel,
                layers: LayerSelector::ConvExceptFirst,
                include_bias: true,
                schedule: AnnealSchedule::immediate(0.5, 1),
                alpha: Some(0.5),
            },
        )
        .unwrap();
        prune_event(m, &space, &PruneMask::full(space.len()), keep, false).unwrap()
    }

    #[test]
    fn killed_channels_compact_equivalently() {
        for seed in 0..5 {
            let mut m = vgg_small(seed);
            channel_prune(&mut m, 5);
            let x = probe(&[256, 3, 8, 8], seed);
            let (c, r) = compact(&m, Some(&x)).unwrap();
            // independent recount of surviving shapes; a fully dead layer
            // keeps one channel
            let live: Vec<usize> = crate::compact::channel_counts(&m).iter().map(|c| c.1.max(1)).collect();
            let removed: usize = r.removed_channels.iter().map(|(_, n)| n).sum();
            assert_eq!(removed, (6 - live[1]) + (5 - live[2]));
            assert!(live[1] + live[2] >= 5);
            assert!(r.flops_after < r.flops_before);
            assert!(r.params_after < r.params_before);
            assert!(r.max_output_divergence.unwrap() <= EQUIVALENCE_TOL);
            let want = (4 * 3 * 9)
                + 8
                + (live[1] * 4 * 9)
                + 2 * live[1]
                + (live[2] * live[1] * 9)
                + 2 * live[2]
                + (7 * live[2] * 4 + 7)
                + (3 * 7 + 3);
            let hidden_removed: usize = r.removed_neurons.iter().map(|(_, n)| n).sum();
            assert_eq!(hidden_removed, 0);
            assert_eq!(c.param_count(), want);
            let fully_dead = crate::compact::channel_counts(&m).iter().any(|c| c.1 == 0);
            if !fully_dead {
                assert_eq!(count_unmasked(&c), c.param_count());
            }
        }
    }

    #[test]
    fn single_channel_kill_drops_one_input_slice() {
        let mut m = vgg_small(3);
        channel_prune(&mut m, 10);
        let (c, r) = compact(&m, Some(&probe(&[32, 3, 8, 8], 1))).unwrap();
        assert_eq!(r.removed_channels.iter().map(|(_, n)| n).sum::<usize>(), 1);
        let before: usize = m
            .layers
            .iter()
            .filter_map(|l| {
                if let Layer::Conv2d(c) = l {
                    Some(c.in_channels())
                } else {
                    None
                }
            })
            .sum();
        let after: usize = c
            .layers
            .iter()
            .filter_map(|l| {
                if let Layer::Conv2d(c) = l {
                    Some(c.in_channels())
                } else {
                    None
                }
            })
            .sum();
        let fc_before = m
            .layers
            .iter()
            .find_map(|l| {
                if let Layer::Linear(l) = l {
                    Some(l.inputs())
                } else {
                    None
                }
            })
            .unwrap();
        let fc_after = c
            .layers
            .iter()
            .find_map(|l| {
                if let Layer::Linear(l) = l {
                    Some(l.inputs())
                } else {
                    None
                }
            })
            .unwrap();
        assert_eq!((before - after) + (fc_before - fc_after) / 4, 1);
    }

    #[test]
    fn first_conv_never_compacted() {
        let mut m = vgg_small(4);
        let Layer::BatchNorm(bn) = &mut m.layers[1] else {
            panic!()
        };
        bn.state.gamma.value.data_mut()[0] = 0.0;
        bn.state.beta.value.data_mut()[0] = 0.0;
        let (c, r) = compact(&m, Some(&probe(&[16, 3, 8, 8], 2))).unwrap();
        assert!(r.removed_channels.is_empty());
        assert_eq!(c.layer_descs(), m.layer_descs());
    }

    /// Nonzeros lost in compaction are exactly the consumer weights that read
    /// a dead channel; the dead channel's own parameters are already zero.
    #[test]
    fn nonzero_loss_is_consumer_slices_only() {
        let mut m = vgg_small(5);
        randomize_biases(&mut m, 5);
        channel_prune(&mut m, 7);
        let dead = |li: usize| -> Vec<usize> {
            let Layer::BatchNorm(bn) = &m.layers[li + 1] else {
                panic!()
            };
            let (g, b) = (bn.state.gamma.value.data(), bn.state.beta.value.data());
            (0..g.len()).filter(|&c| g[c] == 0.0 && b[c] == 0.0).collect()
        };
        let nz = |v: &[f32]| v.iter().filter(|&&x| x != 0.0).count();
        let mut lost = 0;
        // conv2 (index 3) feeds conv3 (index 7): w3[o, c, :, :]
        let w3 = m.param(7, ParamRole::Weight).unwrap().value.data();
        for c in dead(3) {
            for o in 0..5 {
                lost += nz(&w3[(o * 6 + c) * 9..(o * 6 + c + 1) * 9]);
            }
        }
        // conv3 feeds fc1 (index 12) through a 2×2 plane
        let w4 = m.param(12, ParamRole::Weight).unwrap().value.data();
        for c in dead(7) {
            for r in 0..7 {
                lost += nz(&w4[r * 20 + c * 4..r * 20 + c * 4 + 4]);
            }
        }
        assert!(lost > 0);
        let (c, r) = compact(&m, None).unwrap();
        assert_eq!(r.nonzero_before - r.nonzero_after, lost);
        assert_eq!(count_nonzero(&c), r.nonzero_after);
    }

    #[test]
    fn unsupported_consumer_is_an_error() {
        let mut m = vgg_small(6);
        // A convolution whose BN output reaches a second BN directly.
        let extra = Layer::from_desc(&LayerDesc::BatchNorm { channels: 6 }, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        m.layers.insert(5, extra);
        m.layers.remove(6);
        let Layer::BatchNorm(bn) = &mut m.layers[4] else {
            panic!()
        };
        bn.state.gamma.value.data_mut()[2] = 0.0;
        bn.state.beta.value.data_mut()[2] = 0.0;
        assert!(matches!(remove_zero_channels(&mut m), Err(Error::Compaction(_))));
    }
}
