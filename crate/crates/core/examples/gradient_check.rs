//! Check reverse-mode gradients against central finite differences, for a
//! few primitive compositions and for a transformer block's parameters.
//!
//! cargo run --release --example gradient_check

use reverie_agent::autodiff::gradcheck::{check_inputs, check_params};
use reverie_agent::autodiff::{Array, ParamStore, RngStream};
use reverie_agent::nn::{LstmCell, TransformerBlock};

fn random(rows: usize, cols: usize, rng: &mut RngStream) -> Array {
    Array::matrix(rows, cols, (0..rows * cols).map(|_| rng.normal()).collect()).expect("shape matches data")
}

fn main() -> reverie_agent::Result<()> {
    let mut rng = RngStream::new(11);
    let a = random(3, 4, &mut rng);
    let b = random(4, 2, &mut rng);

    let r = check_inputs(&[a.clone(), b.clone()], |_, v| Ok(v[0].matmul(v[1])?.tanh().square().sum()))?;
    println!("tanh(AB)² summed:        {} coords, max rel err {:.2e}", r.checked, r.max_rel_err);
    let r = check_inputs(std::slice::from_ref(&a), |_, v| v[0].softmax(1)?.log().pick(1, 2))?;
    println!("log softmax pick:        {} coords, max rel err {:.2e}", r.checked, r.max_rel_err);
    let r = check_inputs(std::slice::from_ref(&a), |_, v| Ok(v[0].layer_norm(1e-5).sigmoid().mean()))?;
    println!("sigmoid(layer norm):     {} coords, max rel err {:.2e}", r.checked, r.max_rel_err);

    let mut store = ParamStore::new();
    let block = TransformerBlock::new(&mut store, "block", 8, 2, 16, 1e-5, &mut rng);
    let cell = LstmCell::new(&mut store, "lstm", 8, 6, &mut rng);
    let query = random(2, 8, &mut rng);
    let context = random(5, 8, &mut rng);
    let ids: Vec<_> = store.ids().collect();
    let r = check_params(&mut store, &ids, Some(4), &mut rng.fork("coords"), |g, s| {
        let y = block.forward(g, s, g.constant(query.clone()), g.constant(context.clone()))?.output;
        let (h0, c0) = cell.zero_state(g);
        let (h, _) = cell.step(g, s, y.row(0)?, h0, c0)?;
        Ok(h.square().sum())
    })?;
    println!("block -> LSTM params:    {} coords, max rel err {:.2e}", r.checked, r.max_rel_err);
    if let Some((name, i, analytic, numeric)) = r.worst {
        println!("  worst: {name}[{i}] analytic {analytic:.6e} numeric {numeric:.6e}");
    }
    Ok(())
}
