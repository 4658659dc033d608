use chainsde::ensemble::{map_paths, path_seed};
use chainsde::noise::BrownianPath;

fn ulps_apart(a: f64, b: f64) -> u64 {
    if a == b {
        return 0;
    }
    let key = |x: f64| {
        let bits = x.to_bits() as i64;
        if bits < 0 {
            i64::MIN - bits
        } else {
            bits
        }
    };
    key(a).abs_diff(key(b))
}

#[test]
fn refinement_sums_back_to_parent() {
    let mut worst = 0;
    for op in 0..1000u64 {
        let level = (op % 9) as u32;
        let path = BrownianPath::generate(path_seed(77, op), 1.0 + (op % 5) as f64, level).unwrap();
        let fine = path.refine().unwrap();
        for (k, &parent) in path.increments().iter().enumerate() {
            let sum = fine.increments()[2 * k] + fine.increments()[2 * k + 1];
            worst = worst.max(ulps_apart(sum, parent));
        }
    }
    assert!(worst <= 4, "{worst}");
}

#[test]
fn deep_refinement_sums_back_to_every_level() {
    let fine = BrownianPath::canonical(5, 2.0, 14).unwrap();
    for j in 0..14 {
        let coarse = BrownianPath::canonical(5, 2.0, j).unwrap();
        let ratio = 1 << (14 - j);
        for (k, &c) in coarse.increments().iter().enumerate() {
            let s: f64 = fine.increments()[k * ratio..(k + 1) * ratio].iter().sum();
            assert!((s - c).abs() <= 64.0 * f64::EPSILON * (1.0 + c.abs()), "level {j} cell {k}");
        }
        assert_eq!(fine.coarsen_to(j).unwrap(), coarse);
    }
}

#[test]
fn quadratic_variation_at_level_sixteen() {
    let qv = map_paths(1000, |i| {
        let p = BrownianPath::canonical(path_seed(31, i as u64), 1.0, 16).unwrap();
        p.increments().iter().map(|d| d * d).sum::<f64>()
    });
    let mean = qv.iter().sum::<f64>() / qv.len() as f64;
    assert!((0.98..=1.02).contains(&mean), "{mean}");
}

#[test]
fn endpoints_are_uncorrelated_across_seeds() {
    let pairs: Vec<(f64, f64)> = (0..10_000u64)
        .map(|i| {
            let a = BrownianPath::generate(path_seed(1, 2 * i), 1.0, 0).unwrap().increments()[0];
            let b = BrownianPath::generate(path_seed(1, 2 * i + 1), 1.0, 0).unwrap().increments()[0];
            (a, b)
        })
        .collect();
    let n = pairs.len() as f64;
    let ma = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let mb = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let cov: f64 = pairs.iter().map(|p| (p.0 - ma) * (p.1 - mb)).sum();
    let va: f64 = pairs.iter().map(|p| (p.0 - ma).powi(2)).sum();
    let vb: f64 = pairs.iter().map(|p| (p.1 - mb).powi(2)).sum();
    let rho = cov / (va * vb).sqrt();
    assert!(rho.abs() <= 0.05, "{rho}");
    assert!((va / n - 1.0).abs() < 0.05);
}

#[test]
fn children_have_half_the_parent_variance() {
    let children: Vec<f64> = (0..4000u64)
        .flat_map(|i| {
            let p = BrownianPath::generate(path_seed(9, i), 1.0, 0).unwrap().refine().unwrap();
            p.increments().to_vec()
        })
        .collect();
    let var = children.iter().map(|d| d * d).sum::<f64>() / children.len() as f64;
    assert!((var - 0.5).abs() <= 0.025, "{var}");
}

#[test]
fn dump_roundtrip_preserves_bits() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("p.bpath");
    let p = BrownianPath::canonical(12, 0.75, 9).unwrap();
    p.save(&file).unwrap();
    let q = BrownianPath::load(&file).unwrap();
    assert_eq!(p, q);
    let bytes = std::fs::read(&file).unwrap();
    assert_eq!(&bytes[..6], b"BPATH1");
    assert_eq!(bytes.len(), 6 + 8 + 8 + 4 + 8 * 512);
}
