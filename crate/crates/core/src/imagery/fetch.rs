use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::{CacheEntry, DiskCache, ImageDecoder, ImageProvider, ImageRequest, ImageryError, PpmDecoder, RgbImage};
use crate::labeler::StreetContext;
use crate::sampler::{SampleRecord, Side};

#[derive(Debug, Default)]
pub struct FetchStats {
    pub cache_hits: AtomicUsize,
    pub provider_calls: AtomicUsize,
}

impl FetchStats {
    pub fn hits(&self) -> usize {
        self.cache_hits.load(Ordering::SeqCst)
    }

    pub fn calls(&self) -> usize {
        self.provider_calls.load(Ordering::SeqCst)
    }
}

/// Result of prefetching one sample point.
#[derive(Debug)]
pub enum FetchOutcome {
    Ok,
    NoCoverage,
    Failed(ImageryError),
}

/// Cache-first image retrieval for manifest samples.
pub struct Fetcher<'a> {
    provider: &'a dyn ImageProvider,
    cache: &'a DiskCache,
    decoder: &'a dyn ImageDecoder,
    width: u32,
    height: u32,
    pub stats: FetchStats,
}

impl<'a> Fetcher<'a> {
    pub fn new(provider: &'a dyn ImageProvider, cache: &'a DiskCache, width: u32, height: u32) -> Self {
        Self { provider, cache, decoder: &PpmDecoder, width, height, stats: FetchStats::default() }
    }

    pub fn with_decoder(mut self, decoder: &'a dyn ImageDecoder) -> Self {
        self.decoder = decoder;
        self
    }

    /// Returns the decoded image for a request, calling the provider only
    /// on a cache miss. Payloads that fail to decode are not cached.
    pub fn fetch_image(&self, req: &ImageRequest, label: StreetContext) -> Result<RgbImage, ImageryError> {
        let key = req.cache_key();
        if let Some(entry) = self.cache.get(&key)? {
            self.stats.cache_hits.fetch_add(1, Ordering::SeqCst);
            return self.decoder.decode(&entry.bytes);
        }
        self.stats.provider_calls.fetch_add(1, Ordering::SeqCst);
        let bytes = self.provider.fetch(req, label)?;
        let image = self.decoder.decode(&bytes)?;
        self.cache.put(&CacheEntry::new(&req.canonical(), self.provider.name(), bytes))?;
        Ok(image)
    }

    /// Left and right images of one sample point.
    pub fn fetch_pair(&self, sample: &SampleRecord) -> Result<(RgbImage, RgbImage), ImageryError> {
        let left = self.fetch_image(&sample.request(Side::Left, self.width, self.height), sample.label)?;
        let right = self.fetch_image(&sample.request(Side::Right, self.width, self.height), sample.label)?;
        Ok((left, right))
    }

    /// Fetches every sample with at most `parallelism` requests in flight.
    /// Outcomes are returned in manifest order.
    pub fn prefetch(&self, samples: &[SampleRecord], parallelism: usize) -> Vec<FetchOutcome> {
        let workers = parallelism.max(1).min(samples.len().max(1));
        let next = AtomicUsize::new(0);
        let results: Mutex<Vec<Option<FetchOutcome>>> = Mutex::new((0..samples.len()).map(|_| None).collect());
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(sample) = samples.get(i) else { break };
                    let outcome = match self.fetch_pair(sample) {
                        Ok(_) => FetchOutcome::Ok,
                        Err(ImageryError::NoCoverage { .. }) => FetchOutcome::NoCoverage,
                        Err(e) => FetchOutcome::Failed(e),
                    };
                    results.lock().unwrap_or_else(|p| p.into_inner())[i] = Some(outcome);
                });
            }
        });
        results.into_inner().unwrap_or_else(|p| p.into_inner()).into_iter().map(|o| o.expect("every index visited")).collect()
    }
}

/// Fetches both views of `sample` at the given size, decoding PPM payloads.
pub fn fetch_pair(
    sample: &SampleRecord,
    provider: &dyn ImageProvider,
    cache: &DiskCache,
    width: u32,
    height: u32,
) -> Result<(RgbImage, RgbImage), ImageryError> {
    Fetcher::new(provider, cache, width, height).fetch_pair(sample)
}
