//! Batched forward and backward passes for the LSTM + FC regressor.
//!
//! The batch dimension is carried through dense matrix products
//! (one input and one recurrent GEMM per timestep), with the gate
//! nonlinearities applied in a single scalar pass per row. Backward
//! is analytic backpropagation through time over cached activations.
//!
//! Gate packing along the second weight axis is `[i | f | g | o]`
//! (input, forget, cell candidate, output), each block `hidden` wide.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, Array3, ArrayView2, ArrayView3, Axis};

use super::{Gradients, NetConfig, NetworkState};

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Preallocated activations and scratch for one batch shape. Reused
/// across batches; a smaller final batch uses leading sub-views.
pub struct Workspace {
    pub(crate) hidden: usize,
    pub(crate) output_dim: usize,
    pub(crate) max_batch: usize,
    pub(crate) n_steps: usize,
    /// Gathered inputs, `[S, B, D]`.
    xs: Array3<f64>,
    /// Post-activation gates `[i f g o]`, `[S, B, 4H]`.
    gates: Array3<f64>,
    /// Cell states, `[S, B, H]`.
    cells: Array3<f64>,
    /// Hidden states, `[S, B, H]`.
    hiddens: Array3<f64>,
    /// FC hidden activations, `[B, F1]`.
    a1: Array2<f64>,
    /// Network outputs, `[B, M]`.
    out: Array2<f64>,
    /// dL/d(out), `[B, M]`.
    dout: Array2<f64>,
    d_a1: Array2<f64>,
    dz: Array2<f64>,
    dh: Array2<f64>,
    dc: Array2<f64>,
}

impl Workspace {
    pub fn new(cfg: &NetConfig, max_batch: usize, n_steps: usize) -> Self {
        assert!(max_batch > 0 && n_steps > 0);
        let h = cfg.hidden_dim;
        Workspace {
            hidden: h,
            output_dim: cfg.output_dim,
            max_batch,
            n_steps,
            xs: Array3::zeros((n_steps, max_batch, cfg.input_dim)),
            gates: Array3::zeros((n_steps, max_batch, 4 * h)),
            cells: Array3::zeros((n_steps, max_batch, h)),
            hiddens: Array3::zeros((n_steps, max_batch, h)),
            a1: Array2::zeros((max_batch, cfg.fc_hidden)),
            out: Array2::zeros((max_batch, cfg.output_dim)),
            dout: Array2::zeros((max_batch, cfg.output_dim)),
            d_a1: Array2::zeros((max_batch, cfg.fc_hidden)),
            dz: Array2::zeros((max_batch, 4 * h)),
            dh: Array2::zeros((max_batch, h)),
            dc: Array2::zeros((max_batch, h)),
        }
    }

    /// Network outputs for the first `b` rows of the last batch.
    pub fn out_view(&self, b: usize) -> ArrayView2<'_, f64> {
        self.out.slice(s![0..b, ..])
    }
}

fn gate_row_step(
    z: &mut [f64],
    bias: &[f64],
    c_prev: Option<&[f64]>,
    c_out: &mut [f64],
    h_out: &mut [f64],
    h: usize,
) {
    for k in 0..h {
        let i = sigmoid(z[k] + bias[k]);
        let f = sigmoid(z[h + k] + bias[h + k]);
        let g = (z[2 * h + k] + bias[2 * h + k]).tanh();
        let o = sigmoid(z[3 * h + k] + bias[3 * h + k]);
        z[k] = i;
        z[h + k] = f;
        z[2 * h + k] = g;
        z[3 * h + k] = o;
        let cp = c_prev.map_or(0.0, |c| c[k]);
        let c_new = f * cp + i * g;
        c_out[k] = c_new;
        h_out[k] = o * c_new.tanh();
    }
}

/// Runs the network on the samples selected by `idx`, caching all
/// activations in `ws`. Outputs land in `ws.out[0..b]`.
pub(crate) fn forward_batch(
    net: &NetworkState,
    inputs: ArrayView3<f64>,
    idx: &[usize],
    ws: &mut Workspace,
) {
    let b = idx.len();
    let s = inputs.dim().1;
    debug_assert!(b > 0 && b <= ws.max_batch);
    debug_assert_eq!(s, ws.n_steps);
    debug_assert_eq!(inputs.dim().2, net.config.input_dim);
    let h = ws.hidden;

    for (r, &i) in idx.iter().enumerate() {
        for t in 0..s {
            ws.xs
                .slice_mut(s![t, r, ..])
                .assign(&inputs.slice(s![i, t, ..]));
        }
    }

    let bias = net.lstm.bias.as_slice().expect("contiguous bias");
    for t in 0..s {
        let xs_t = ws.xs.index_axis(Axis(0), t);
        let xs_t = xs_t.slice(s![0..b, ..]);
        let mut gates_t = ws.gates.index_axis_mut(Axis(0), t);
        let mut z = gates_t.slice_mut(s![0..b, ..]);
        general_mat_mul(1.0, &xs_t, &net.lstm.w_ih, 0.0, &mut z);
        if t > 0 {
            let h_prev = ws.hiddens.index_axis(Axis(0), t - 1);
            let h_prev = h_prev.slice(s![0..b, ..]);
            general_mat_mul(1.0, &h_prev, &net.lstm.w_hh, 1.0, &mut z);
        }

        let (cells_head, mut cells_tail) = ws.cells.view_mut().split_at(Axis(0), t);
        let mut c_t = cells_tail.index_axis_mut(Axis(0), 0);
        let mut h_t = ws.hiddens.index_axis_mut(Axis(0), t);
        for r in 0..b {
            let z_row = z.row_mut(r);
            let z_row = z_row.into_slice().expect("contiguous gate row");
            let c_row = c_t.row_mut(r);
            let c_row = c_row.into_slice().expect("contiguous cell row");
            let h_row = h_t.row_mut(r);
            let h_row = h_row.into_slice().expect("contiguous hidden row");
            if t > 0 {
                let cp = cells_head.index_axis(Axis(0), t - 1);
                let cp_row = cp.row(r);
                let cp_row = cp_row.to_slice().expect("contiguous cell row");
                gate_row_step(z_row, bias, Some(cp_row), c_row, h_row, h);
            } else {
                gate_row_step(z_row, bias, None, c_row, h_row, h);
            }
        }
    }

    // FC head: a1 = tanh(h_last W1 + b1), out = a1 W2 + b2.
    {
        let h_last = ws.hiddens.index_axis(Axis(0), s - 1);
        let h_last = h_last.slice(s![0..b, ..]);
        let mut a1 = ws.a1.slice_mut(s![0..b, ..]);
        general_mat_mul(1.0, &h_last, &net.fc.w1, 0.0, &mut a1);
        let b1 = net.fc.b1.as_slice().expect("contiguous b1");
        for r in 0..b {
            let row = a1.row_mut(r);
            let row = row.into_slice().expect("contiguous a1 row");
            for (v, bb) in row.iter_mut().zip(b1) {
                *v = (*v + bb).tanh();
            }
        }
    }
    {
        let a1 = ws.a1.slice(s![0..b, ..]);
        let mut out = ws.out.slice_mut(s![0..b, ..]);
        general_mat_mul(1.0, &a1, &net.fc.w2, 0.0, &mut out);
        let b2 = net.fc.b2.as_slice().expect("contiguous b2");
        for r in 0..b {
            let row = out.row_mut(r);
            let row = row.into_slice().expect("contiguous out row");
            for (v, bb) in row.iter_mut().zip(b2) {
                *v += bb;
            }
        }
    }
}

/// Batch-mean MSE against the selected targets; also fills `ws.dout`
/// with dL/d(out) for the backward pass.
pub(crate) fn loss_and_grad_out(
    ws: &mut Workspace,
    idx: &[usize],
    targets: ArrayView2<f64>,
) -> f64 {
    let b = idx.len();
    let m = ws.output_dim;
    let scale = 1.0 / (m * b) as f64;
    let mut loss = 0.0;
    for (r, &i) in idx.iter().enumerate() {
        for c in 0..m {
            let d = ws.out[[r, c]] - targets[[i, c]];
            loss += d * d;
            ws.dout[[r, c]] = 2.0 * d * scale;
        }
    }
    loss * scale
}

/// Backpropagation through time over the activations cached by the
/// latest `forward_batch`. Gradients accumulate into `grads` (callers
/// zero it per batch).
pub(crate) fn backward_batch(
    net: &NetworkState,
    b: usize,
    ws: &mut Workspace,
    grads: &mut Gradients,
) {
    let s = ws.n_steps;
    let h = ws.hidden;

    // Head: out = a1 W2 + b2 with a1 = tanh(h_last W1 + b1).
    {
        let dout = ws.dout.slice(s![0..b, ..]);
        let a1 = ws.a1.slice(s![0..b, ..]);
        general_mat_mul(1.0, &a1.t(), &dout, 1.0, &mut grads.w2);
        let b2_acc = grads.b2.as_slice_mut().expect("contiguous b2 grad");
        for r in 0..b {
            let row = dout.row(r);
            let row = row.to_slice().expect("contiguous dout row");
            for (acc, v) in b2_acc.iter_mut().zip(row) {
                *acc += v;
            }
        }
        let mut d_a1 = ws.d_a1.slice_mut(s![0..b, ..]);
        general_mat_mul(1.0, &dout, &net.fc.w2.t(), 0.0, &mut d_a1);
    }
    {
        // Through the tanh: d_y1 = d_a1 * (1 - a1^2).
        let mut d_a1 = ws.d_a1.slice_mut(s![0..b, ..]);
        let a1 = ws.a1.slice(s![0..b, ..]);
        for r in 0..b {
            let d_row = d_a1.row_mut(r);
            let d_row = d_row.into_slice().expect("contiguous d_a1 row");
            let a_row = a1.row(r);
            let a_row = a_row.to_slice().expect("contiguous a1 row");
            for (d, a) in d_row.iter_mut().zip(a_row) {
                *d *= 1.0 - a * a;
            }
        }
    }
    {
        let d_y1 = ws.d_a1.slice(s![0..b, ..]);
        let h_last = ws.hiddens.index_axis(Axis(0), s - 1);
        let h_last = h_last.slice(s![0..b, ..]);
        general_mat_mul(1.0, &h_last.t(), &d_y1, 1.0, &mut grads.w1);
        let b1_acc = grads.b1.as_slice_mut().expect("contiguous b1 grad");
        for r in 0..b {
            let row = d_y1.row(r);
            let row = row.to_slice().expect("contiguous d_y1 row");
            for (acc, v) in b1_acc.iter_mut().zip(row) {
                *acc += v;
            }
        }
        let mut dh = ws.dh.slice_mut(s![0..b, ..]);
        general_mat_mul(1.0, &d_y1, &net.fc.w1.t(), 0.0, &mut dh);
    }
    ws.dc.slice_mut(s![0..b, ..]).fill(0.0);

    for t in (0..s).rev() {
        // Gate-level gradients for this step, written into ws.dz.
        {
            let gates_t = ws.gates.index_axis(Axis(0), t);
            let cells_t = ws.cells.index_axis(Axis(0), t);
            let cells_prev = if t > 0 {
                Some(ws.cells.index_axis(Axis(0), t - 1))
            } else {
                None
            };
            let dh_v = ws.dh.slice(s![0..b, ..]);
            let mut dc_v = ws.dc.slice_mut(s![0..b, ..]);
            let mut dz_v = ws.dz.slice_mut(s![0..b, ..]);
            for r in 0..b {
                let g_row = gates_t.row(r);
                let g_row = g_row.to_slice().expect("contiguous gate row");
                let c_row = cells_t.row(r);
                let c_row = c_row.to_slice().expect("contiguous cell row");
                let cp_row = cells_prev.as_ref().map(|cp| {
                    let row = cp.row(r);
                    row.to_slice().expect("contiguous cell row")
                });
                let dh_row = dh_v.row(r);
                let dh_row = dh_row.to_slice().expect("contiguous dh row");
                let dz_row = dz_v.row_mut(r);
                let dz_row = dz_row.into_slice().expect("contiguous dz row");
                let dc_row = dc_v.row_mut(r);
                let dc_row = dc_row.into_slice().expect("contiguous dc row");
                for k in 0..h {
                    let ig = g_row[k];
                    let fg = g_row[h + k];
                    let gg = g_row[2 * h + k];
                    let og = g_row[3 * h + k];
                    let tc = c_row[k].tanh();
                    let dht = dh_row[k];
                    // Carry-in dc_row[k] holds dL/dc_{t+1} * f_{t+1}.
                    let dc_total = dc_row[k] + dht * og * (1.0 - tc * tc);
                    let d_o = dht * tc;
                    dz_row[3 * h + k] = d_o * og * (1.0 - og);
                    dz_row[k] = dc_total * gg * ig * (1.0 - ig);
                    let cp = cp_row.map_or(0.0, |c| c[k]);
                    dz_row[h + k] = dc_total * cp * fg * (1.0 - fg);
                    dz_row[2 * h + k] = dc_total * ig * (1.0 - gg * gg);
                    dc_row[k] = dc_total * fg;
                }
            }
        }
        // Weight gradients and the recurrent gradient for step t-1.
        {
            let dz = ws.dz.slice(s![0..b, ..]);
            let xs_t = ws.xs.index_axis(Axis(0), t);
            let xs_t = xs_t.slice(s![0..b, ..]);
            general_mat_mul(1.0, &xs_t.t(), &dz, 1.0, &mut grads.w_ih);
            if t > 0 {
                let h_prev = ws.hiddens.index_axis(Axis(0), t - 1);
                let h_prev = h_prev.slice(s![0..b, ..]);
                general_mat_mul(1.0, &h_prev.t(), &dz, 1.0, &mut grads.w_hh);
            }
            let bias_acc = grads.bias.as_slice_mut().expect("contiguous bias grad");
            for r in 0..b {
                let row = dz.row(r);
                let row = row.to_slice().expect("contiguous dz row");
                for (acc, v) in bias_acc.iter_mut().zip(row) {
                    *acc += v;
                }
            }
            let mut dh = ws.dh.slice_mut(s![0..b, ..]);
            general_mat_mul(1.0, &dz, &net.lstm.w_hh.t(), 0.0, &mut dh);
        }
    }
}

/// Forward pass over `inputs[idx]` without touching gradients;
/// returns a view of the outputs.
pub(crate) fn predict_into<'w>(
    net: &NetworkState,
    inputs: ArrayView3<f64>,
    idx: &[usize],
    ws: &'w mut Workspace,
) -> ArrayView2<'w, f64> {
    forward_batch(net, inputs, idx, ws);
    ws.out_view(idx.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{loss_mse, NetConfig, NetworkState, TrainConfig};
    use crate::rng;
    use ndarray::{Array2, Array3};
    use rand::Rng;

    fn tiny_cfg() -> NetConfig {
        NetConfig {
            input_dim: 18,
            hidden_dim: 4,
            fc_hidden: 3,
            output_dim: 3,
        }
    }

    fn random_inputs(n: usize, s: usize, f: usize, seed: u64) -> Array3<f64> {
        let mut r = rng::stream_from(seed);
        let mut a = Array3::zeros((n, s, f));
        for v in a.iter_mut() {
            *v = r.gen_range(-1.0..1.0);
        }
        a
    }

    fn random_targets(n: usize, m: usize, seed: u64) -> Array2<f64> {
        let mut r = rng::stream_from(seed);
        let mut a = Array2::zeros((n, m));
        for v in a.iter_mut() {
            *v = r.gen_range(-1.0..1.0);
        }
        a
    }

    #[test]
    fn zero_network_outputs_zero() {
        let cfg = tiny_cfg();
        let mut net = NetworkState::init(&cfg, 1).unwrap();
        for s in net.param_slices_mut() {
            for v in s.iter_mut() {
                *v = 0.0;
            }
        }
        let inputs = random_inputs(2, 5, 18, 3);
        let mut ws = Workspace::new(&cfg, 2, 5);
        forward_batch(&net, inputs.view(), &[0, 1], &mut ws);
        for v in ws.out_view(2).iter() {
            assert_eq!(*v, 0.0);
        }
    }

    /// Scalar re-implementation of a single LSTM cell step plus the
    /// head, used as an oracle for the batched forward pass.
    fn scalar_forward(net: &NetworkState, xs: &Array2<f64>) -> Vec<f64> {
        let cfg = &net.config;
        let h_dim = cfg.hidden_dim;
        let mut h = vec![0.0; h_dim];
        let mut c = vec![0.0; h_dim];
        for t in 0..xs.dim().0 {
            let mut z = vec![0.0; 4 * h_dim];
            for k in 0..4 * h_dim {
                let mut acc = net.lstm.bias[k];
                for d in 0..cfg.input_dim {
                    acc += xs[[t, d]] * net.lstm.w_ih[[d, k]];
                }
                for d in 0..h_dim {
                    acc += h[d] * net.lstm.w_hh[[d, k]];
                }
                z[k] = acc;
            }
            for k in 0..h_dim {
                let i = sigmoid(z[k]);
                let f = sigmoid(z[h_dim + k]);
                let g = z[2 * h_dim + k].tanh();
                let o = sigmoid(z[3 * h_dim + k]);
                c[k] = f * c[k] + i * g;
                h[k] = o * c[k].tanh();
            }
        }
        let mut a1 = vec![0.0; cfg.fc_hidden];
        for j in 0..cfg.fc_hidden {
            let mut acc = net.fc.b1[j];
            for d in 0..h_dim {
                acc += h[d] * net.fc.w1[[d, j]];
            }
            a1[j] = acc.tanh();
        }
        (0..cfg.output_dim)
            .map(|m| {
                let mut acc = net.fc.b2[m];
                for j in 0..cfg.fc_hidden {
                    acc += a1[j] * net.fc.w2[[j, m]];
                }
                acc
            })
            .collect()
    }

    #[test]
    fn batched_forward_matches_scalar_oracle() {
        let cfg = tiny_cfg();
        let net = NetworkState::init(&cfg, 21).unwrap();
        let inputs = random_inputs(3, 4, 18, 8);
        let mut ws = Workspace::new(&cfg, 3, 4);
        forward_batch(&net, inputs.view(), &[0, 1, 2], &mut ws);
        for n in 0..3 {
            let want = scalar_forward(&net, &inputs.index_axis(Axis(0), n).to_owned());
            for m in 0..3 {
                assert!(
                    (ws.out[[n, m]] - want[m]).abs() < 1e-12,
                    "sample {n} output {m}"
                );
            }
        }
    }

    #[test]
    fn permuting_timesteps_changes_the_output() {
        let cfg = tiny_cfg();
        let net = NetworkState::init(&cfg, 5).unwrap();
        let inputs = random_inputs(1, 6, 18, 13);
        let mut reversed = inputs.clone();
        for t in 0..6 {
            reversed
                .slice_mut(s![0, t, ..])
                .assign(&inputs.slice(s![0, 5 - t, ..]));
        }
        let mut ws = Workspace::new(&cfg, 1, 6);
        forward_batch(&net, inputs.view(), &[0], &mut ws);
        let a = ws.out_view(1).to_owned();
        forward_batch(&net, reversed.view(), &[0], &mut ws);
        let b = ws.out_view(1).to_owned();
        let max_dev = a
            .iter()
            .zip(b.iter())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0f64, f64::max);
        assert!(max_dev > 1e-6, "output ignored temporal order");
    }

    #[test]
    fn zero_residual_zeroes_output_layer_gradients() {
        let cfg = tiny_cfg();
        let net = NetworkState::init(&cfg, 2).unwrap();
        let inputs = random_inputs(2, 3, 18, 4);
        let mut ws = Workspace::new(&cfg, 2, 3);
        forward_batch(&net, inputs.view(), &[0, 1], &mut ws);
        // Targets equal to the outputs: the loss gradient vanishes.
        let targets = ws.out_view(2).to_owned();
        let loss = loss_and_grad_out(&mut ws, &[0, 1], targets.view());
        assert_eq!(loss, 0.0);
        let mut grads = super::super::Gradients::zeros(&cfg);
        backward_batch(&net, 2, &mut ws, &mut grads);
        assert!(grads.w2.iter().all(|v| *v == 0.0));
        assert!(grads.b2.iter().all(|v| *v == 0.0));
        assert!(grads.w_ih.iter().all(|v| *v == 0.0));
    }

    /// Central finite differences over every weight.
    fn finite_difference_check(
        cfg: &NetConfig,
        n: usize,
        s: usize,
        seed: u64,
        h_step: f64,
        tol: f64,
    ) {
        let net = NetworkState::init(cfg, seed).unwrap();
        let inputs = random_inputs(n, s, cfg.input_dim, seed ^ 1);
        let targets = random_targets(n, cfg.output_dim, seed ^ 2);
        let idx: Vec<usize> = (0..n).collect();

        let mut ws = Workspace::new(cfg, n, s);
        forward_batch(&net, inputs.view(), &idx, &mut ws);
        let _ = loss_and_grad_out(&mut ws, &idx, targets.view());
        let mut grads = super::super::Gradients::zeros(cfg);
        backward_batch(&net, n, &mut ws, &mut grads);

        let loss_at = |net: &NetworkState, ws: &mut Workspace| -> f64 {
            forward_batch(net, inputs.view(), &idx, ws);
            let mut acc = 0.0;
            for (r, &i) in idx.iter().enumerate() {
                for c in 0..cfg.output_dim {
                    let d = ws.out[[r, c]] - targets[[i, c]];
                    acc += d * d;
                }
            }
            acc / (n * cfg.output_dim) as f64
        };

        let analytic: Vec<f64> = grads
            .slices()
            .iter()
            .flat_map(|(_, s)| s.iter().copied())
            .collect();
        let mut worst = 0.0f64;
        let mut flat = 0usize;
        let n_arrays = 7;
        for a in 0..n_arrays {
            let len = {
                let mut probe = net.clone();
                probe.param_slices_mut()[a].len()
            };
            for k in 0..len {
                let mut plus = net.clone();
                plus.param_slices_mut()[a][k] += h_step;
                let lp = loss_at(&plus, &mut ws);
                let mut minus = net.clone();
                minus.param_slices_mut()[a][k] -= h_step;
                let lm = loss_at(&minus, &mut ws);
                let numeric = (lp - lm) / (2.0 * h_step);
                let ana = analytic[flat + k];
                let rel = (ana - numeric).abs() / ana.abs().max(numeric.abs()).max(1e-6);
                if rel > worst {
                    worst = rel;
                }
                assert!(
                    rel < tol,
                    "array {a} weight {k}: analytic {ana:e}, numeric {numeric:e}, rel {rel:e}"
                );
            }
            flat += len;
        }
        eprintln!("gradient check worst relative error: {worst:e}");
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        finite_difference_check(&tiny_cfg(), 2, 3, 31, 1e-6, 1e-5);
    }

    #[test]
    fn duplicated_sample_keeps_the_mean_gradient() {
        // Batch mean: [x, x] must produce the same gradient as [x].
        let cfg = tiny_cfg();
        let net = NetworkState::init(&cfg, 77).unwrap();
        let inputs = random_inputs(1, 3, 18, 9);
        let targets = random_targets(1, 3, 10);

        let mut ws = Workspace::new(&cfg, 2, 3);
        forward_batch(&net, inputs.view(), &[0], &mut ws);
        let _ = loss_and_grad_out(&mut ws, &[0], targets.view());
        let mut g_single = super::super::Gradients::zeros(&cfg);
        backward_batch(&net, 1, &mut ws, &mut g_single);

        forward_batch(&net, inputs.view(), &[0, 0], &mut ws);
        let _ = loss_and_grad_out(&mut ws, &[0, 0], targets.view());
        let mut g_double = super::super::Gradients::zeros(&cfg);
        backward_batch(&net, 2, &mut ws, &mut g_double);

        for ((_, a), (_, b)) in g_single.slices().iter().zip(g_double.slices().iter()) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert!((x - y).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn training_step_reduces_loss_on_a_fixed_batch() {
        let cfg = tiny_cfg();
        let mut net = NetworkState::init(&cfg, 3).unwrap();
        let inputs = random_inputs(8, 4, 18, 20);
        let targets = random_targets(8, 3, 21);
        let idx: Vec<usize> = (0..8).collect();
        let mut ws = Workspace::new(&cfg, 8, 4);
        let tc = TrainConfig {
            learning_rate: 1e-2,
            ..TrainConfig::default()
        };
        forward_batch(&net, inputs.view(), &idx, &mut ws);
        let before = loss_mse(ws.out_view(8), targets.view());
        for _ in 0..200 {
            forward_batch(&net, inputs.view(), &idx, &mut ws);
            let _ = loss_and_grad_out(&mut ws, &idx, targets.view());
            let mut grads = super::super::Gradients::zeros(&cfg);
            backward_batch(&net, 8, &mut ws, &mut grads);
            crate::neural::adam_step(&mut net, &grads, &tc).unwrap();
        }
        forward_batch(&net, inputs.view(), &idx, &mut ws);
        let after = loss_mse(ws.out_view(8), targets.view());
        assert!(after < 0.2 * before, "loss {before} -> {after}");
    }
}
