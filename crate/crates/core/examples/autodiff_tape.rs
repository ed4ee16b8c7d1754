//! Fit a two-layer MLP to `sin(3x)` with the reverse-mode tape and the
//! parameter-level Adam used by meta-training.

use splatopt::autodiff::{adam_step_params, Init, ModelParameters, ParamAdamState, Tape, Tensor2};
use splatopt::optim::AdamHyper;

fn main() -> anyhow::Result<()> {
    let layout = [
        ("l1.w".to_string(), 1, 32, Init::Kaiming),
        ("l1.b".to_string(), 1, 32, Init::Zeros),
        ("l2.w".to_string(), 32, 1, Init::Kaiming),
        ("l2.b".to_string(), 1, 1, Init::Zeros),
    ];
    let mut params = ModelParameters::<f64>::init(&layout, 1);
    let mut state = ParamAdamState::new(&params);
    let n = 64;
    let x = Tensor2::from_fn(n, 1, |i, _| -1.0 + 2.0 * i as f64 / (n - 1) as f64);
    let y = Tensor2::from_fn(n, 1, |i, _| (3.0 * x.get(i, 0)).sin());

    for step in 0..=2000 {
        let mut tape = Tape::new();
        let pv = params.register(&mut tape);
        let xv = tape.constant(x.clone());
        let h = tape.matmul(xv, pv.get("l1.w")?)?;
        let h = tape.add_row(h, pv.get("l1.b")?)?;
        let h = tape.gelu(h)?;
        let o = tape.matmul(h, pv.get("l2.w")?)?;
        let o = tape.add_row(o, pv.get("l2.b")?)?;
        let yv = tape.constant(y.clone());
        let r = tape.sub(o, yv)?;
        let sq = tape.mul(r, r)?;
        let loss = tape.sum_all(sq)?;
        let value = tape.value(loss).get(0, 0) / n as f64;
        if step % 500 == 0 {
            println!("step {step:>5}: mse {value:.3e}");
        }
        let grads = tape.backward(&[(loss, Tensor2::filled(1, 1, 1.0 / n as f64))])?;
        let g = pv.gradients(&params, &grads);
        adam_step_params(&mut params, &g, &mut state, 1e-2, AdamHyper::default())?;
    }
    Ok(())
}
