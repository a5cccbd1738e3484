use scanreg_cli::scene::*;

fn probe(name: &str, suite: &[SceneSpec]) {
    let mut worst: f64 = 0.0;
    for (i, s) in suite.iter().enumerate() {
        match generate_pair(s) {
            Ok(p) => {
                let m = measured_overlap(&p.src, &p.tgt, &p.gt).unwrap();
                let dev = (m - s.overlap).abs();
                worst = worst.max(dev);
                if dev > 0.05 {
                    println!("{name} pair {i}: kind {} target {} measured {m:.4}", s.kind, s.overlap);
                }
            }
            Err(e) => println!("{name} pair {i}: kind {} target {} ERR {e}", s.kind, s.overlap),
        }
    }
    println!("{name}: worst |measured - target| = {worst:.4}");
}

#[test]
fn probe_coverage() {
    probe("easy", &easy_suite(30, 11));
    probe("low", &low_overlap_suite(30, 11));
    probe("exact", &exact_suite(30, 11));
}
