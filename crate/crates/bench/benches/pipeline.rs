use criterion::{criterion_group, criterion_main, BatchSize, Criterion};

use stackinsights_core::cluster::{kmeans, KMeansConfig};
use stackinsights_core::dictionary::{compile_dictionary, scan_content};
use stackinsights_core::features::{fit_spec, FitOptions};
use stackinsights_core::learn::{predict, train, ModelFamily, TrainConfig};
use stackinsights_core::scan::{scan_volume, FileMeta};
use stackinsights_core::synth::{gen_corpus, SynthConfig};

fn corpus(files: usize) -> (tempfile::TempDir, Vec<FileMeta>) {
    let dir = tempfile::tempdir().expect("tempdir");
    let dest = dir.path().join("c");
    let cfg = SynthConfig {
        total_files: files,
        ..SynthConfig::default()
    };
    gen_corpus(&cfg, &dest).expect("generate corpus");
    let mut all = Vec::new();
    for v in &cfg.volumes {
        let out = scan_volume(&dest.join("volumes").join(&v.id), &v.id).expect("scan");
        all.extend(out.records);
    }
    all.sort_by_key(|f| f.key());
    (dir, all)
}

fn benches(c: &mut Criterion) {
    let (_dir, files) = corpus(5000);
    let spec = fit_spec(&files, FitOptions::default()).expect("fit spec");
    let encoder = spec.encoder();

    c.bench_function("encode_5000", |b| b.iter(|| encoder.matrix(&files)));

    let x = encoder.matrix(&files);
    let y: Vec<bool> = files.iter().map(|f| matches!(f.extension.as_str(), ".csv" | ".eml" | ".sql" | ".txt")).collect();
    let fp = spec.fingerprint();
    let train_idx: Vec<usize> = (0..files.len()).step_by(10).collect();
    let xt = x.select_rows(&train_idx);
    let yt: Vec<bool> = train_idx.iter().map(|&i| y[i]).collect();

    let mut group = c.benchmark_group("train_500");
    group.sample_size(10);
    for family in ModelFamily::ALL {
        let cfg = TrainConfig::for_family(family);
        group.bench_function(family.as_str(), |b| b.iter(|| train(&xt, &yt, &cfg, &fp).expect("train")));
    }
    group.finish();

    let model = train(&xt, &yt, &TrainConfig::for_family(ModelFamily::RandomForest), &fp).expect("train");
    c.bench_function("predict_rf_5000", |b| b.iter(|| predict(&model, &x, &fp).expect("predict")));

    let dict = compile_dictionary(None).expect("dictionary");
    let text = "Quarterly payroll for employee 123-45-6789, contact jane.doe@example.com or 555-123-4567. \
                Card 4111 1111 1111 1111 is confidential.\n"
        .repeat(200);
    c.bench_function("scan_content_20kb", |b| b.iter(|| scan_content(&text, &dict)));

    let mut group = c.benchmark_group("kmeans");
    group.sample_size(10);
    group.bench_function("k8_5000", |b| {
        b.iter_batched(
            || KMeansConfig {
                restarts: 3,
                ..KMeansConfig::new(8)
            },
            |cfg| kmeans(&x, &cfg).expect("kmeans"),
            BatchSize::SmallInput,
        )
    });
    group.finish();
}

criterion_group!(pipeline, benches);
criterion_main!(pipeline);
