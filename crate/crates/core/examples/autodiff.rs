//! Reverse-mode differentiation on the gradient tape, checked against
//! central finite differences.
//!
//! Run with: cargo run --example autodiff

use vnsgru::gradcheck::{finite_diff_check, DEFAULT_STEP};
use vnsgru::tape::GradTape;
use vnsgru::Tensor;

/// loss = -log softmax(LN(W x))[target]
fn loss(w: &[f64], x: &[f64], target: usize, grads: bool) -> vnsgru::Result<(f64, Vec<f64>)> {
    let mut tape = GradTape::new();
    let wv = tape.leaf(Tensor::matrix(3, 2, w.to_vec())?);
    let xv = tape.leaf(Tensor::vector(x.to_vec())?);
    let gain = tape.leaf(Tensor::filled(&[3], 1.0));
    let bias = tape.leaf(Tensor::zeros(&[3]));
    let a = tape.matvec(wv, xv)?;
    let n = tape.layer_norm(a, gain, bias, 1e-5)?;
    let l = tape.neg_log_likelihood(n, target)?;
    if !grads {
        return Ok((tape.scalar(l), vec![]));
    }
    let g = tape.backward(l)?;
    Ok((tape.scalar(l), g.get(wv).expect("w is on the path").data().to_vec()))
}

fn main() -> vnsgru::Result<()> {
    let w = [0.3, -0.8, 1.1, 0.4, -0.5, 0.9];
    let x = [0.7, -1.2];
    let (value, dw) = loss(&w, &x, 2, true)?;
    println!("loss = {value:.6}");
    for (i, row) in dw.chunks(2).enumerate() {
        println!("dL/dW[{i}] = [{:+.6}, {:+.6}]", row[0], row[1]);
    }
    let err = finite_diff_check(|t| Ok(loss(t, &x, 2, false)?.0), &w, &dw, DEFAULT_STEP)?;
    println!("max relative error vs finite differences: {err:.2e}");
    Ok(())
}
