//! One forward pass through the attention network, stage by stage, and a
//! checkpoint round trip.

use hdfd::diffcore::{gru_forward, Graph, GruVars, Tensor};
use hdfd::network::{
    load_checkpoint, msdc_forward, sain_forward, save_checkpoint, tsam_forward, ArchConfig, Model, ModelCheckpoint,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> hdfd::Result<()> {
    let arch = ArchConfig::new(7, 10);
    let model = Model::new(arch.clone(), 42)?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = Tensor::from_fn([4, 7, 64], |_| rng.random_range(-1.0..1.0));

    let mut g = Graph::new();
    let b = model.params.bind(&mut g);
    let xv = g.input(x.clone());
    let f = msdc_forward(&mut g, &b, &arch, xv)?;
    println!("msdc  {:?}", g.shape(f));
    let f = sain_forward(&mut g, &b, &arch, f)?;
    println!("sain  {:?}", g.shape(f));
    let f = gru_forward(&mut g, f, &GruVars::from_bound(&b, "gru"), None)?;
    println!("gru   {:?}", g.shape(f));
    let t = tsam_forward(&mut g, &b, &arch, f)?;
    let a = t.attention.expect("attention enabled");
    println!("tsam  fused {:?}, attention map {:?}", g.shape(t.fused), g.shape(a));

    // Attention starts small, so an untrained model is close to uniform.
    let probs = model.forward(x.clone())?;
    for row in probs.data().chunks(10) {
        let best = hdfd::trainer::argmax(row);
        let spread = row[best] - row.iter().copied().fold(1.0, f64::min);
        println!("argmax class {best}, p = {:.6}, max - min = {spread:.2e}", row[best]);
    }

    let path = std::env::temp_dir().join("hdfd-example-checkpoint.json");
    save_checkpoint(&path, &ModelCheckpoint::from_model(&model, &[], None, serde_json::Value::Null))?;
    let back = load_checkpoint(&path)?.to_model()?;
    println!("checkpoint round trip identical: {}", back.forward(x)? == probs);
    Ok(())
}
