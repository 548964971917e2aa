use surfrec_core::cameras::{add3, pixel_to_ray, project, scale3};
use surfrec_core::features::{FeatureBank, FeatureMap};
use surfrec_core::scenes::{default_intrinsics, sphere_trace, AnalyticScene, RigConfig, SceneDataset, SceneKind};

fn bilinear_rgb(img: &[[f64;3]], w: usize, h: usize, px: f64, py: f64) -> [f64;3] {
    let x = (px - 0.5).clamp(0.0, (w - 2) as f64);
    let y = (py - 0.5).clamp(0.0, (h - 2) as f64);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let mut out = [0.0; 3];
    for c in 0..3 {
        let top = img[y0*w+x0][c]*(1.0-fx) + img[y0*w+x0+1][c]*fx;
        let bot = img[(y0+1)*w+x0][c]*(1.0-fx) + img[(y0+1)*w+x0+1][c]*fx;
        out[c] = top*(1.0-fy) + bot*fy;
    }
    out
}

fn main() {
    let scene = AnalyticScene::new(SceneKind::Sphere { radius: 0.5 });
    let ds = SceneDataset::generate(scene, RigConfig::default(), default_intrinsics(96), 31).unwrap();
    let bank = FeatureBank::new(31);
    let maps: Vec<FeatureMap> = ds.views.iter().map(|v| bank.extract(&v.image, 96, 96)).collect();
    let (rv, sv) = (0usize, 1usize);
    let mut rgb_diff = 0.0; let mut feat_diff = 0.0; let mut n = 0;
    for pix in (0..96*96).step_by(7) {
        if !ds.views[rv].mask[pix] { continue; }
        let (row, col) = (pix / 96, pix % 96);
        let ray = pixel_to_ray(row, col, &ds.intrinsics, &ds.views[rv].pose_gt);
        let Some(t) = sphere_trace(&scene, ray.origin, ray.dir) else { continue };
        let x = add3(ray.origin, scale3(ray.dir, t));
        // visible in source? trace from source toward x
        let Ok(([px, py], _z)) = project(x, &ds.intrinsics, &ds.views[sv].pose_gt) else { continue };
        if px < 4.0 || py < 4.0 || px > 92.0 || py > 92.0 { continue; }
        // occlusion check via source depth
        let spix = (py as usize).min(95) * 96 + (px as usize).min(95);
        if !ds.views[sv].mask[spix] { continue; }
        // compare rgb
        let c_ref = ds.views[rv].image[pix];
        let c_src = bilinear_rgb(&ds.views[sv].image, 96, 96, px, py);
        // reject occluded (back side) matches via distorted depth? use true depth from re-trace
        let ray2 = pixel_to_ray(py as usize, px as usize, &ds.intrinsics, &ds.views[sv].pose_gt);
        let Some(t2) = sphere_trace(&scene, ray2.origin, ray2.dir) else { continue };
        let x2 = add3(ray2.origin, scale3(ray2.dir, t2));
        let d = ((x[0]-x2[0]).powi(2)+(x[1]-x2[1]).powi(2)+(x[2]-x2[2]).powi(2)).sqrt();
        if d > 0.05 { continue; } // occluded
        for c in 0..3 { rgb_diff += (c_ref[c] - c_src[c]).abs(); }
        // compare features
        let u0 = FeatureMap::pixel_to_cell(col as f64 + 0.5);
        let v0 = FeatureMap::pixel_to_cell(row as f64 + 0.5);
        let f_ref = maps[rv].sample(u0, v0);
        let f_src = maps[sv].sample(FeatureMap::pixel_to_cell(px), FeatureMap::pixel_to_cell(py));
        for c in 0..32 { feat_diff += (f_ref[c] - f_src[c]).abs(); }
        n += 1;
    }
    println!("matched pairs: {n}");
    println!("mean |rgb diff| per channel: {:.4}", rgb_diff / (3 * n) as f64);
    println!("mean |feat diff| per channel: {:.4}", feat_diff / (32 * n) as f64);

    // neighbor-cell roughness within one map (how fast features vary)
    let fm = &maps[0];
    let mut rough = 0.0;
    let mut cnt = 0;
    for y in 2..fm.height - 2 {
        for x in 2..fm.width - 3 {
            for c in 0..fm.channels {
                rough += (fm.cell(y, x)[c] as f64 - fm.cell(y, x + 1)[c] as f64).abs();
                cnt += 1;
            }
        }
    }
    println!("mean |neighbor cell diff|: {:.4}", rough / cnt as f64);

    // interior-margin sweep: mismatch vs distance from the silhouette
    for margin in [0.0f64, 6.0, 10.0, 14.0, 18.0] {
        let mut fd = 0.0;
        let mut m = 0;
        for pix in (0..96 * 96).step_by(3) {
            if !ds.views[rv].mask[pix] { continue; }
            let (row, col) = (pix / 96, pix % 96);
            if FeatureMap::rim_distance(&ds.views[rv].mask, 96, 96, col as f64 + 0.5, row as f64 + 0.5, 24) < margin { continue; }
            let ray = pixel_to_ray(row, col, &ds.intrinsics, &ds.views[rv].pose_gt);
            let Some(t) = sphere_trace(&scene, ray.origin, ray.dir) else { continue };
            let x = add3(ray.origin, scale3(ray.dir, t));
            let Ok(([px, py], _z)) = project(x, &ds.intrinsics, &ds.views[sv].pose_gt) else { continue };
            if px < 4.0 || py < 4.0 || px > 92.0 || py > 92.0 { continue; }
            if FeatureMap::rim_distance(&ds.views[sv].mask, 96, 96, px, py, 24) < margin { continue; }
            let ray2 = pixel_to_ray(py as usize, px as usize, &ds.intrinsics, &ds.views[sv].pose_gt);
            let Some(t2) = sphere_trace(&scene, ray2.origin, ray2.dir) else { continue };
            let x2 = add3(ray2.origin, scale3(ray2.dir, t2));
            let d = ((x[0]-x2[0]).powi(2)+(x[1]-x2[1]).powi(2)+(x[2]-x2[2]).powi(2)).sqrt();
            if d > 0.05 { continue; }
            let f_ref = maps[rv].sample(FeatureMap::pixel_to_cell(col as f64 + 0.5), FeatureMap::pixel_to_cell(row as f64 + 0.5));
            let f_src = maps[sv].sample(FeatureMap::pixel_to_cell(px), FeatureMap::pixel_to_cell(py));
            for c in 0..32 { fd += (f_ref[c] - f_src[c]).abs(); }
            m += 1;
        }
        if m > 0 {
            println!("margin {margin:>4.0}px: mean |feat diff| {:.4} over {m}", fd / (32 * m) as f64);
        }
    }

    // offset sweep: does shifting source lookups reduce the mismatch?
    for (du, dv) in [(0.0, 0.0), (0.5, 0.0), (-0.5, 0.0), (0.0, 0.5), (0.0, -0.5), (0.25, 0.25)] {
        let mut fd = 0.0;
        let mut m = 0;
        for pix in (0..96 * 96).step_by(7) {
            if !ds.views[rv].mask[pix] { continue; }
            let (row, col) = (pix / 96, pix % 96);
            let ray = pixel_to_ray(row, col, &ds.intrinsics, &ds.views[rv].pose_gt);
            let Some(t) = sphere_trace(&scene, ray.origin, ray.dir) else { continue };
            let x = add3(ray.origin, scale3(ray.dir, t));
            let Ok(([px, py], _z)) = project(x, &ds.intrinsics, &ds.views[sv].pose_gt) else { continue };
            if px < 8.0 || py < 8.0 || px > 88.0 || py > 88.0 { continue; }
            let ray2 = pixel_to_ray(py as usize, px as usize, &ds.intrinsics, &ds.views[sv].pose_gt);
            let Some(t2) = sphere_trace(&scene, ray2.origin, ray2.dir) else { continue };
            let x2 = add3(ray2.origin, scale3(ray2.dir, t2));
            let d = ((x[0]-x2[0]).powi(2)+(x[1]-x2[1]).powi(2)+(x[2]-x2[2]).powi(2)).sqrt();
            if d > 0.05 { continue; }
            let f_ref = maps[rv].sample(FeatureMap::pixel_to_cell(col as f64 + 0.5), FeatureMap::pixel_to_cell(row as f64 + 0.5));
            let f_src = maps[sv].sample(FeatureMap::pixel_to_cell(px) + du, FeatureMap::pixel_to_cell(py) + dv);
            for c in 0..32 { fd += (f_ref[c] - f_src[c]).abs(); }
            m += 1;
        }
        println!("offset ({du:+.2},{dv:+.2}): mean |feat diff| {:.4} over {m}", fd / (32 * m) as f64);
    }
}

#[allow(dead_code)]
fn extra() {}
