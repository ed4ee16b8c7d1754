//! The image losses and the three meta-loss terms on small hand-made inputs.

use splatopt::image::Image;
use splatopt::loss::{
    d_ssim, inner_loss, l1, low_visibility_loss, meta_loss, render_loss, stability_loss, DSsim, LVS_EPSILON,
};

fn main() {
    let a = Image::<f64>::from_fn(16, 16, |x, y, c| ((x + 2 * y + c) % 7) as f64 / 6.0);
    let b = Image::<f64>::from_fn(16, 16, |x, y, c| ((x * y + c) % 5) as f64 / 4.0);
    println!("l1 {:.4}  d-ssim {:.4}  inner {:.4}", l1(&a, &b), d_ssim(&a, &b), inner_loss(&a, &b).value);

    // older steps count less
    let traj = vec![vec![(&a, &b)], vec![(&a, &a)]];
    let (r, _) = render_loss(&traj, 0.9, &DSsim);
    println!("render loss over two steps {r:.4}");

    let updates = [0.3, -0.2, 0.1, 0.0];
    let raw = [0.0, 1.0, 1.0, 1.0];
    let adam = [1.0, 1.0, 1.0, -1.0];
    let (lvs, _) = low_visibility_loss(&updates, &raw, &adam, LVS_EPSILON);
    println!("low-visibility {lvs:.2} (vanishing 0.3 + disagreeing 0.2)");

    let (stab, _) = stability_loss(&[0.5, 0.7, 0.6]);
    println!("stability {stab:.2}");

    let report = meta_loss(r, lvs, stab);
    for (name, v) in &report.terms {
        println!("  {name:>7} {v:.4}");
    }
    println!("meta loss {:.4}", report.value);
}
