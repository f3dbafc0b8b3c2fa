//! Reverse-mode gradients on the tape, checked against central differences.

use dbp::tensor::gradcheck::{check_gradients, FD_STEP};
use dbp::tensor::{Tape, Tensor};

fn main() -> dbp::Result<()> {
    let tape = Tape::new();
    let x = tape.param(Tensor::new(&[2, 3], vec![0.5, -1.0, 2.0, 0.1, 0.3, -0.7])?);
    let w = tape.param(Tensor::new(&[3, 2], vec![1.0, 0.0, -0.5, 0.2, 0.3, 0.9])?);
    // softmax(x·W) weighted by a fixed target, then squared.
    let y = x.matmul(w)?.softmax(1)?;
    let target = tape.constant(Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 1.0])?);
    let loss = y.sub(target)?.square().sum();
    tape.backward(loss)?;
    println!("loss = {:.6}", loss.item());
    println!("dL/dx = {:?}", tape.grad(x).unwrap().data());
    println!("dL/dW = {:?}", tape.grad(w).unwrap().data());

    let inputs = [tape.grad(x).unwrap().clone(), Tensor::eye(3)];
    let report = check_gradients(
        &inputs,
        |t, v| Ok(v[0].matmul(v[1])?.tanh().layer_norm(1, 1e-5)?.mul(t.constant(Tensor::full(&[2, 3], 0.3)))?.sum()),
        FD_STEP,
    )?;
    println!("layer-norm chain vs finite differences: max rel err {:.2e}", report.max_rel_err);
    Ok(())
}
