//! Fits a 2-8-1 tanh network to XOR with Adam, then checks its gradients
//! against central differences in f64.

use ndnet::{check_param_grads, AdamConfig, AdamState, Linear, ParamStore, Result, Tape, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const DATA: [([f64; 2], f64); 4] = [
    ([0., 0.], 0.),
    ([0., 1.], 1.),
    ([1., 0.], 1.),
    ([1., 1.], 0.),
];

struct Net {
    l1: Linear,
    l2: Linear,
}

impl Net {
    fn loss<T: ndnet::Real>(&self, t: &mut Tape<'_, T>) -> Result<Var> {
        let mut terms = Vec::new();
        for (x, y) in DATA {
            let xv: Vec<T> = x.iter().map(|&v| T::lit(v)).collect();
            let xi = t.input_vec(&xv)?;
            let h = self.l1.forward(t, xi)?;
            let h = t.tanh(h)?;
            let o = self.l2.forward(t, h)?;
            let d = t.add_scalar(o, -y)?;
            terms.push(t.square(d)?);
        }
        let all = t.concat(&terms)?;
        t.mean(all)
    }
}

fn main() -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::<f32>::new();
    let net = Net {
        l1: Linear::new(&mut store, "l1", 2, 8, &mut rng)?,
        l2: Linear::new(&mut store, "l2", 8, 1, &mut rng)?,
    };
    let mut adam = AdamState::new(&store, AdamConfig::with_lr(0.05));
    for step in 0..=300 {
        let grads = {
            let mut t = Tape::new(&store);
            let l = net.loss(&mut t)?;
            if step % 50 == 0 {
                println!("step {step:>3}  mse {:.5}", t.scalar(l));
            }
            t.backward(l)?.into_params()
        };
        adam.step(&mut store, &grads)?;
    }

    let wide = store.cast::<f64>();
    let report = check_param_grads(&wide, 1e-6, None, &mut rng, |t| net.loss(t))?;
    println!(
        "gradient check over {} coordinates: max relative error {:.2e}",
        report.coords_checked, report.max_rel_error
    );
    Ok(())
}
