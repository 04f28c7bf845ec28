use chrono::{TimeZone, Utc};
use stackinsights_core::cluster::{kmeans_dense, partition_objective, KMeansConfig};
use stackinsights_core::features::{fit_spec, FeatureCategory, FitOptions};
use stackinsights_core::scan::FileMeta;
use stackinsights_core::select::top_k;

fn file(name: &str, path: &str, size: u64, day: u32) -> FileMeta {
    let t = Utc.with_ymd_and_hms(2016, 3, day, 12, 0, 0).unwrap();
    let extension = name.rfind('.').map(|p| name[p..].to_lowercase()).unwrap_or_default();
    FileMeta {
        volume_id: "V1".into(),
        file_name: name.into(),
        extension,
        path: path.into(),
        last_accessed: t,
        created: t,
        changed: t,
        last_modified: t,
        file_size: size,
        bytes_used: size,
        user_folder: path.split('/').next().unwrap_or("").into(),
        timestamps_substituted: false,
    }
}

#[test]
fn planted_extension_ranks_first() {
    let mut files = Vec::new();
    let mut labels = Vec::new();
    for i in 0..200u32 {
        let secret = i % 4 == 0;
        let name = if secret {
            format!("report{i}.secret")
        } else {
            format!("report{i}.{}", ["txt", "log", "csv"][i as usize % 3])
        };
        let folder = ["alice/docs", "bob/docs", "carol/misc"][i as usize % 3];
        files.push(file(&name, folder, 1000 + u64::from(i) * 37, 1 + i % 28));
        labels.push(secret);
    }
    let spec = fit_spec(&files, FitOptions::default()).unwrap();
    let x = spec.encoder().matrix(&files);
    let ranked = top_k(&x, &labels, 5, &spec, 10).unwrap();
    assert_eq!(ranked[0].name, ".secret");
    assert_eq!(ranked[0].category, FeatureCategory::Extension);
    assert!(ranked.windows(2).all(|w| w[0].mi >= w[1].mi));
}

#[test]
fn kmeans_with_one_cluster_per_point_is_exact() {
    let points: Vec<Vec<f64>> = (0..6).map(|i| vec![f64::from(i * i), f64::from(3 - i)]).collect();
    let cfg = KMeansConfig::new(points.len());
    let a = kmeans_dense(&points, &cfg).unwrap();
    assert!(a.objective.abs() < 1e-12);
    assert!(a.sizes().iter().all(|&s| s == 1));
}

#[test]
fn kmeans_partition_ignores_input_order() {
    let points: Vec<Vec<f64>> = vec![
        vec![0.0, 0.0],
        vec![0.2, 0.1],
        vec![5.0, 5.0],
        vec![5.1, 4.9],
        vec![10.0, 0.0],
        vec![9.8, 0.3],
    ];
    let order = [4, 1, 5, 0, 3, 2];
    let shuffled: Vec<Vec<f64>> = order.iter().map(|&i| points[i].clone()).collect();
    let cfg = KMeansConfig::new(3);
    let a = kmeans_dense(&points, &cfg).unwrap();
    let b = kmeans_dense(&shuffled, &cfg).unwrap();
    assert!((a.objective - b.objective).abs() < 1e-9);
    for (i, &oi) in order.iter().enumerate() {
        for (j, &oj) in order.iter().enumerate() {
            let together_a = a.assignments[oi] == a.assignments[oj];
            let together_b = b.assignments[i] == b.assignments[j];
            assert_eq!(together_a, together_b);
        }
    }
    let obj = partition_objective(&points, &a.assignments, 3);
    assert!((obj - a.objective).abs() < 1e-9);
}
