
use criterion::{criterion_group, criterion_main};

criterion_group!(benches, filters::bench, estimation::bench);
criterion_main!(benches);
