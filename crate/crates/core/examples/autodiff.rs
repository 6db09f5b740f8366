//! Reverse-mode differentiation on the tape: a gradient checked against
//! central differences, then Adam fitting a tiny regression.

use anyhow::Result;
use qfreq::tensor::{Adam, Tape, Tensor};

fn loss_of(w: &Tensor, x: &Tensor, y: &Tensor) -> Result<f64> {
    let mut tape = Tape::new();
    let w = tape.constant(w.clone());
    let x = tape.constant(x.clone());
    let y = tape.constant(y.clone());
    let h = tape.matmul(x, w)?;
    let h = tape.tanh(h);
    let l = tape.squared_error_mean(h, y)?;
    Ok(tape.value(l).item())
}

fn main() -> Result<()> {
    let x = Tensor::from_fn(16, 3, |r, c| ((r * 7 + c * 3) % 11) as f64 / 11.0 - 0.5);
    let truth = Tensor::column(vec![0.8, -1.2, 0.4]);
    let y = x.matmul(&truth)?.map(f64::tanh);
    let mut w = Tensor::column(vec![0.1, 0.1, 0.1]);

    let mut tape = Tape::new();
    let wv = tape.param(w.clone());
    let xv = tape.constant(x.clone());
    let yv = tape.constant(y.clone());
    let h = tape.matmul(xv, wv)?;
    let h = tape.tanh(h);
    let l = tape.squared_error_mean(h, yv)?;
    let grads = tape.backward(l)?;
    let g = grads.get(wv);
    for i in 0..3 {
        let eps = 1e-6;
        let mut up = w.clone();
        up.data_mut()[i] += eps;
        let mut dn = w.clone();
        dn.data_mut()[i] -= eps;
        let fd = (loss_of(&up, &x, &y)? - loss_of(&dn, &x, &y)?) / (2.0 * eps);
        println!("dL/dw{i}: tape {:+.8}  finite difference {fd:+.8}", g.data()[i]);
    }

    let mut params = vec![w.clone()];
    let mut opt = Adam::new(&params, 0.05);
    for step in 0..=300 {
        let mut tape = Tape::new();
        let wv = tape.param(params[0].clone());
        let xv = tape.constant(x.clone());
        let yv = tape.constant(y.clone());
        let h = tape.matmul(xv, wv)?;
        let h = tape.tanh(h);
        let l = tape.squared_error_mean(h, yv)?;
        if step % 100 == 0 {
            println!("step {step:>3}: loss {:.3e}", tape.value(l).item());
        }
        let grads = tape.backward(l)?;
        opt.step(&mut params, &[grads.get(wv)])?;
    }
    w = params.remove(0);
    println!("fitted {:?} vs truth {:?}", w.data(), truth.data());
    Ok(())
}
