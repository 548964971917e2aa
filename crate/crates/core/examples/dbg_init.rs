use surfrec_core::networks::{Model, NetworkConfig, PoseMode};
use surfrec_core::cameras::Pose;

fn main() {
    let m: Model<f64> = Model::new(&NetworkConfig::default(), 2, PoseMode::Absolute, vec![Pose::identity(); 2], 11);
    // radial profile along several directions
    for dir in [[1.0,0.0,0.0],[0.0,1.0,0.0],[0.577,0.577,0.577],[-0.3,0.8,-0.52]] {
        let n = (dir[0]*dir[0]+dir[1]*dir[1]+dir[2]*dir[2] as f64).sqrt();
        print!("dir {:?}:", dir);
        for r in [0.0f64, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5] {
            let p = [dir[0]/n*r, dir[1]/n*r, dir[2]/n*r];
            let f = m.sdf.sdf_values(&m.params, &p, 0.0)[0];
            print!("  r={:.2}: f={:+.3} (want {:+.3})", r, f, r-0.5);
        }
        println!();
    }
}
