//! How the nested softmax of the router sharpens routing weights as the
//! temperature grows.

use adaf::autodiff::Graph;
use adaf::frontend::sparsify;
use adaf::Tensor;

fn main() -> adaf::Result<()> {
    let logits = [0.3, 0.1, -0.4, 0.0, 0.05, 1.2, -1.0, 0.9];
    for alpha in [1.0, 10.0, 100.0] {
        let g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_f64(&[2, 4], &logits)?);
        let w = sparsify(x, alpha)?.value().clone();
        for (i, row) in w.rows().enumerate() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.4}")).collect();
            println!("alpha {alpha:>5}  row {i}: [{}]", cells.join(", "));
        }
    }
    Ok(())
}
