//! One step of each recurrent cell: plain GRU, semantic GRU and the
//! variational normalized semantic GRU, plus a two-layer stack where the
//! same dropout masks are reused at every step.
//!
//! Run with: cargo run --example cell_step

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vnsgru::cells::*;
use vnsgru::Tensor;

fn show(name: &str, t: &Tensor<f64>) {
    let v: Vec<String> = t.data().iter().map(|x| format!("{x:+.4}")).collect();
    println!("{name:>14}: [{}]", v.join(", "));
}

fn main() -> vnsgru::Result<()> {
    let dims = CellDims {
        n_x: 4,
        n_h: 5,
        n_f: 3,
        n_s: 6,
        n_v: 4,
    };
    let params = init_params::<f64>(dims, 1)?;
    println!("semantic cell with {} parameters", params.param_count());

    let x = Tensor::vector(vec![0.5, -0.2, 0.1, 0.9])?;
    let h = Tensor::zeros(&[dims.n_h]);
    let s = Tensor::vector(vec![0.9, 0.1, 0.0, 0.3, 0.0, 0.7])?;
    let v = Tensor::vector(vec![0.2, 0.8, 0.5, 0.1])?;

    let gru = GruParams::<Tensor<f64>>::init(dims.n_x, dims.n_h, 1)?;
    show("gru", &gru_step(&x, &h, &gru)?.h);
    show("semantic", &semantic_gru_step(&x, &h, &s, &v, &params)?.h);

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let masks = sample_masks::<f64>(KeepRates::default(), &dims, &mut rng)?;
    show("vns (train)", &vns_gru_step(&x, &h, &s, &v, &params, &masks, Normalization::default())?.h);
    let ones = unit_masks::<f64>(&dims);
    show("vns (eval)", &vns_gru_step(&x, &h, &s, &v, &params, &ones, Normalization::default())?.h);

    // a second layer consumes the first layer's hidden state
    let dims2 = CellDims { n_x: dims.n_h, ..dims };
    let layer2 = init_params::<f64>(dims2, 2)?;
    let masks2 = sample_masks::<f64>(KeepRates::default(), &dims2, &mut rng)?;
    let xs = vec![x.clone(), x.map(|a| -a), x.scale(0.5)];
    let trace = stacked_forward_traced(&xs, &s, &v, &params, &layer2, &masks, &masks2, Normalization::default())?;
    for (t, [l1, l2]) in trace.iter().enumerate() {
        println!(
            "step {t}: layer 1 mask nodes {:?}..., layer 2 |h| = {:.4}",
            &l1.mask_nodes[..3],
            l2.h.norm_sq().sqrt()
        );
    }
    Ok(())
}
