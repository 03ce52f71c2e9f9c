use criterion::{black_box, criterion_group, criterion_main, Criterion};
use faceprobe::gabor::{build_gabor_bank, gabor_features, GaborParams};
use faceprobe::lbp::{lbp_block_histograms, lbp_image, LbpParams};
use faceprobe::wavelet::{wavelet_features, WaveletParams};
use faceprobe::ImageMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random face-sized image.
fn face() -> ImageMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    ImageMatrix::from_fn(65, 60, |_, _| rng.gen_range(0.0..256.0))
}

fn lbp(c: &mut Criterion) {
    let img = face();
    c.bench_function("lbp codes 65x60", |b| b.iter(|| lbp_image(black_box(&img)).unwrap()));
    c.bench_function("lbp histograms 65x60", |b| {
        b.iter(|| lbp_block_histograms(black_box(&img), LbpParams::default()).unwrap())
    });
}

fn wavelet(c: &mut Criterion) {
    let img = face();
    let params = WaveletParams::default();
    c.bench_function("db8 features 65x60", |b| b.iter(|| wavelet_features(black_box(&img), &params).unwrap()));
}

fn gabor(c: &mut Criterion) {
    let img = face();
    let bank = build_gabor_bank(GaborParams::default()).unwrap();
    // Warm the cached kernel spectra.
    gabor_features(&img, &bank, 4).unwrap();
    c.bench_function("gabor features 65x60", |b| b.iter(|| gabor_features(black_box(&img), &bank, 4).unwrap()));
}

criterion_group!(benches, lbp, wavelet, gabor);
criterion_main!(benches);
