use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use proptest::prelude::*;
use streetctx::geodata::LatLon;
use streetctx::imagery::*;
use streetctx::labeler::StreetContext;
use streetctx::rng::Rng;
use streetctx::sampler::{build_manifest_sized, SampleRecord};
use streetctx::util::sha256_hex;

/// Counts calls and the peak number of concurrent ones, delegating to the
/// synthetic renderer.
struct CountingProvider {
    inner: SyntheticProvider,
    calls: AtomicUsize,
    in_flight: AtomicUsize,
    peak: AtomicUsize,
}

impl CountingProvider {
    fn new() -> Self {
        Self { inner: SyntheticProvider::new(0), calls: 0.into(), in_flight: 0.into(), peak: 0.into() }
    }
}

impl ImageProvider for CountingProvider {
    fn name(&self) -> &str {
        "counting"
    }

    fn fetch(&self, req: &ImageRequest, label: StreetContext) -> Result<Vec<u8>, ImageryError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak.fetch_max(now, Ordering::SeqCst);
        std::thread::sleep(Duration::from_millis(2));
        let out = self.inner.fetch(req, label);
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        out
    }
}

fn manifest(n: usize) -> Vec<SampleRecord> {
    let city = streetctx::pipeline::synthetic_city(10, &streetctx::pipeline::SYNTHETIC_CLASSES, 3);
    let labeled = streetctx::pipeline::label_segments(city, None, "SanFrancisco", 0.5).unwrap();
    build_manifest_sized(&labeled, n, 7, 32, 32).unwrap()
}

fn files_under(dir: &std::path::Path) -> usize {
    let Ok(entries) = std::fs::read_dir(dir) else { return 0 };
    entries.map(|e| e.unwrap().path()).map(|p| if p.is_dir() { files_under(&p) } else { 1 }).sum()
}

#[test]
fn cached_pair_needs_no_provider_calls() {
    let dir = tempfile::tempdir().unwrap();
    let cache = DiskCache::new(dir.path());
    let sample = &manifest(1)[0];
    let provider = CountingProvider::new();
    let first = fetch_pair(sample, &provider, &cache, 32, 32).unwrap();
    assert_eq!(provider.calls.load(Ordering::SeqCst), 2);

    let again = CountingProvider::new();
    let fetcher = Fetcher::new(&again, &cache, 32, 32);
    let second = fetcher.fetch_pair(sample).unwrap();
    assert_eq!(again.calls.load(Ordering::SeqCst), 0);
    assert_eq!((fetcher.stats.hits(), fetcher.stats.calls()), (2, 0));
    // cache idempotence: bit-identical images
    assert_eq!(first, second);
}

#[test]
fn concurrency_is_bounded() {
    let dir = tempfile::tempdir().unwrap();
    let cache = DiskCache::new(dir.path());
    let samples = manifest(24);
    for limit in [1, 3] {
        let provider = CountingProvider::new();
        let sub = tempfile::tempdir_in(dir.path()).unwrap();
        let cache = DiskCache::new(sub.path());
        let outcomes = Fetcher::new(&provider, &cache, 32, 32).prefetch(&samples, limit);
        assert!(outcomes.iter().all(|o| matches!(o, FetchOutcome::Ok)));
        assert_eq!(provider.calls.load(Ordering::SeqCst), 48);
        let peak = provider.peak.load(Ordering::SeqCst);
        assert!(peak <= limit && peak >= 1, "peak {peak} with limit {limit}");
    }
    drop(cache);
}

/// Serves one canned HTTP response per connection, `count` times.
fn serve(status_line: &'static str, body: &'static [u8], count: usize) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    std::thread::spawn(move || {
        for stream in listener.incoming().take(count) {
            let mut s = stream.unwrap();
            let mut buf = [0u8; 4096];
            let _ = s.read(&mut buf);
            let head = format!("HTTP/1.1 {status_line}\r\nContent-Length: {}\r\nConnection: close\r\n\r\n", body.len());
            s.write_all(head.as_bytes()).unwrap();
            s.write_all(body).unwrap();
        }
    });
    format!("http://{addr}/sv")
}

#[test]
fn forbidden_is_an_auth_error_and_not_cached() {
    let endpoint = serve("403 Forbidden", b"denied", 1);
    let provider = StreetViewProvider::new(endpoint, "test-key", 100.0);
    let dir = tempfile::tempdir().unwrap();
    let cache = DiskCache::new(dir.path().join("cache"));
    let err = fetch_pair(&manifest(1)[0], &provider, &cache, 32, 32).unwrap_err();
    assert!(matches!(err, ImageryError::Auth { status: 403, .. }), "{err:?}");
    assert!(!err.to_string().contains("test-key"));
    assert_eq!(files_under(&dir.path().join("cache")), 0);
}

#[test]
fn live_status_codes_map_to_typed_errors() {
    let req = ImageRequest::new(LatLon::new(42.35, -71.06).unwrap(), 45.0, 32, 32);
    for (line, check) in [
        ("404 Not Found", (|e: &ImageryError| matches!(e, ImageryError::NoCoverage { .. })) as fn(&ImageryError) -> bool),
        ("429 Too Many Requests", |e| matches!(e, ImageryError::RateLimited { .. }) && e.is_retryable()),
        (
            "500 Internal Server Error",
            |e| matches!(e, ImageryError::Http { status: 500, request } if request.contains("heading=45.0")),
        ),
    ] {
        let provider = StreetViewProvider::new(serve(line, b"", 1), "k", 100.0);
        let err = provider.fetch(&req, StreetContext::Alley).unwrap_err();
        assert!(check(&err), "{line}: {err:?}");
    }
    let body = b"P6\n1 1\n255\n\x01\x02\x03";
    let provider = StreetViewProvider::new(serve("200 OK", body, 1), "k", 100.0);
    assert_eq!(provider.fetch(&req, StreetContext::Alley).unwrap(), body);
}

#[test]
fn undecodable_payload_reports_length() {
    let provider = StreetViewProvider::new(serve("200 OK", b"JFIF....", 1), "k", 100.0);
    let dir = tempfile::tempdir().unwrap();
    let cache = DiskCache::new(dir.path());
    let req = ImageRequest::new(LatLon::new(1.0, 2.0).unwrap(), 0.0, 8, 8);
    let err = Fetcher::new(&provider, &cache, 8, 8).fetch_image(&req, StreetContext::Park).unwrap_err();
    assert!(matches!(err, ImageryError::Decode { len: 8, .. }), "{err:?}");
    assert_eq!(files_under(dir.path()), 0);
}

/// sha256 of the encoded left and right images for the first fixture
/// sample, synthetic seed 0, frozen from the first render.
const FROZEN_PAIR_SHA256: [&str; 2] = [
    "0b1551bf8e0b1c6231377d204aa4ff131ecbab0db5fe63d6c69719f823030cb8",
    "a6b15888fda6b60d50a9a7f0eda7a49bd1ea9c8c8d2f051a7c1b0d3ff8d05a9c",
];

#[test]
fn synthetic_pair_hashes_are_frozen() {
    let dir = tempfile::tempdir().unwrap();
    let cache = DiskCache::new(dir.path());
    let (l, r) = fetch_pair(&manifest(1)[0], &SyntheticProvider::new(0), &cache, 32, 32).unwrap();
    assert_eq!([sha256_hex(&encode_ppm(&l)), sha256_hex(&encode_ppm(&r))], FROZEN_PAIR_SHA256);
}

#[test]
fn canonical_requests_are_injective() {
    let mut rng = Rng::seed_from_u64(5);
    let mut strings = BTreeSet::new();
    let mut keys = BTreeSet::new();
    for _ in 0..10_000 {
        // values quantized to the canonical precision so distinct draws stay distinct
        let lat = (rng.uniform(-80.0, 80.0) * 1e6).round() / 1e6;
        let lon = (rng.uniform(-179.0, 179.0) * 1e6).round() / 1e6;
        let heading = (rng.uniform(0.0, 360.0) * 10.0).floor() / 10.0;
        let size = 1 + rng.below(640) as u32;
        let req = ImageRequest::new(LatLon::new(lat, lon).unwrap(), heading, size, size);
        let fresh = strings.insert(req.canonical());
        assert_eq!(fresh, keys.insert(req.cache_key()));
    }
    assert!(strings.len() > 9_990);
    assert_eq!(strings.len(), keys.len());
}

#[test]
fn synthetic_motifs_separate_quadrants() {
    for label in StreetContext::ALL {
        assert_eq!(synth_render(label, 9, 64, 64), synth_render(label, 9, 64, 64));
    }
    // same quadrant, different palettes; different quadrants, different layouts
    let means = |label: StreetContext, q: u32| {
        let img = synth_render(label, 4, 64, 64);
        let (x0, y0, x1, y1) = quadrant_bounds(q, 64, 64);
        img.channel_means(x0, y0, x1, y1)
    };
    for a in StreetContext::ALL {
        for b in StreetContext::ALL {
            if a.code() % 4 != b.code() % 4 {
                let q = motif_quadrant(a);
                let (ma, mb) = (means(a, q), means(b, q));
                let gap = ma.iter().zip(mb).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
                assert!(gap > 10.0, "{a} vs {b}: {gap}");
            }
        }
    }
}

proptest! {
    #[test]
    fn ppm_round_trip(w in 1u32..20, h in 1u32..20, seed in any::<u64>()) {
        let mut rng = Rng::seed_from_u64(seed);
        let pixels: Vec<u8> = (0..3 * w * h).map(|_| rng.below(256) as u8).collect();
        let img = RgbImage::new(w, h, pixels).unwrap();
        let bytes = encode_ppm(&img);
        let header = format!("P6\n{w} {h}\n255\n");
        prop_assert!(bytes.starts_with(header.as_bytes()));
        prop_assert_eq!(decode_ppm(&bytes).unwrap(), img);
    }
}
