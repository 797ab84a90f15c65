use crate::error::{BasenError, Result};

/// Absolute RMS each source is brought to before mixing. Two equal-level
/// sources at this level peak well inside the 16-bit WAV range.
pub const MIX_TARGET_RMS: f64 = 0.1;

fn check_rate(rate: f64) -> Result<()> {
    if rate.is_finite() && rate > 0.0 {
        Ok(())
    } else {
        Err(BasenError::invalid(format!("sample rate must be positive, got {rate}")))
    }
}

/// Mono waveform.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBuffer {
    samples: Vec<f64>,
    rate: f64,
}

impl SampleBuffer {
    pub fn new(samples: Vec<f64>, rate: f64) -> Result<Self> {
        check_rate(rate)?;
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(BasenError::NonFinite("sample buffer"));
        }
        Ok(Self { samples, rate })
    }

    pub fn zeros(len: usize, rate: f64) -> Result<Self> {
        Self::new(vec![0.0; len], rate)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.rate
    }

    /// Multiplies every sample by `gain`.
    pub fn scaled(&self, gain: f64) -> Result<Self> {
        Self::new(self.samples.iter().map(|s| s * gain).collect(), self.rate)
    }
}

/// Channels × time matrix with a shared sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiChannelSeries {
    data: Vec<Vec<f64>>,
    rate: f64,
}

impl MultiChannelSeries {
    pub fn new(data: Vec<Vec<f64>>, rate: f64) -> Result<Self> {
        check_rate(rate)?;
        if data.is_empty() {
            return Err(BasenError::invalid("series needs at least one channel"));
        }
        let len = data[0].len();
        if let Some((c, row)) = data.iter().enumerate().find(|(_, r)| r.len() != len) {
            return Err(BasenError::shape(format!(
                "channel {c} has {} samples, channel 0 has {len}",
                row.len()
            )));
        }
        if data.iter().flatten().any(|v| !v.is_finite()) {
            return Err(BasenError::NonFinite("multichannel series"));
        }
        Ok(Self { data, rate })
    }

    pub fn zeros(channels: usize, len: usize, rate: f64) -> Result<Self> {
        Self::new(vec![vec![0.0; len]; channels], rate)
    }

    pub fn channel_count(&self) -> usize {
        self.data.len()
    }

    pub fn len(&self) -> usize {
        self.data[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.data[c]
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.data
    }

    pub fn into_channels(self) -> Vec<Vec<f64>> {
        self.data
    }

    /// Applies `f` to every channel independently.
    pub fn map_channels<F>(&self, f: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> Result<Vec<f64>>,
    {
        let data = self.data.iter().map(|r| f(r)).collect::<Result<Vec<_>>>()?;
        Self::new(data, self.rate)
    }
}

/// Fixed-length segmentation request.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentationSpec {
    pub segment_seconds: f64,
    pub drop_remainder: bool,
}

impl SegmentationSpec {
    pub fn new(segment_seconds: f64) -> Result<Self> {
        if !(segment_seconds.is_finite() && segment_seconds > 0.0) {
            return Err(BasenError::invalid(format!(
                "segment length must be positive, got {segment_seconds}"
            )));
        }
        Ok(Self {
            segment_seconds,
            drop_remainder: true,
        })
    }

    pub fn keep_remainder(mut self) -> Self {
        self.drop_remainder = false;
        self
    }
}

/// Anything with a time axis that can be cut and resampled.
pub trait TimeSeries: Sized {
    fn frames(&self) -> usize;
    fn sample_rate(&self) -> f64;
    fn slice_frames(&self, start: usize, end: usize) -> Self;
}

impl TimeSeries for SampleBuffer {
    fn frames(&self) -> usize {
        self.len()
    }

    fn sample_rate(&self) -> f64 {
        self.rate
    }

    fn slice_frames(&self, start: usize, end: usize) -> Self {
        Self {
            samples: self.samples[start..end].to_vec(),
            rate: self.rate,
        }
    }
}

impl TimeSeries for MultiChannelSeries {
    fn frames(&self) -> usize {
        self.len()
    }

    fn sample_rate(&self) -> f64 {
        self.rate
    }

    fn slice_frames(&self, start: usize, end: usize) -> Self {
        Self {
            data: self.data.iter().map(|r| r[start..end].to_vec()).collect(),
            rate: self.rate,
        }
    }
}

pub fn rms(x: &SampleBuffer) -> Result<f64> {
    rms_slice(x.samples())
}

pub(crate) fn rms_slice(x: &[f64]) -> Result<f64> {
    if x.is_empty() {
        return Err(BasenError::EmptySignal);
    }
    Ok((x.iter().map(|s| s * s).sum::<f64>() / x.len() as f64).sqrt())
}

/// Scales `x` by a single positive gain so its RMS equals `target_rms`.
pub fn normalize_rms(x: &SampleBuffer, target_rms: f64) -> Result<SampleBuffer> {
    if !(target_rms.is_finite() && target_rms > 0.0) {
        return Err(BasenError::invalid(format!(
            "target RMS must be positive, got {target_rms}"
        )));
    }
    let level = rms(x)?;
    if level == 0.0 {
        return Err(BasenError::Silence);
    }
    x.scaled(target_rms / level)
}

/// RMS-equalizes both inputs so that their level ratio is `snr_db`, then sums.
/// The target lands at [`MIX_TARGET_RMS`].
pub fn mix_at_snr(target: &SampleBuffer, interferer: &SampleBuffer, snr_db: f64) -> Result<SampleBuffer> {
    let (t, i) = scale_pair(target, interferer, snr_db)?;
    let mixed = t.samples().iter().zip(i.samples()).map(|(a, b)| a + b).collect();
    SampleBuffer::new(mixed, target.rate())
}

/// The two scaled addends used by [`mix_at_snr`].
pub(crate) fn scale_pair(
    target: &SampleBuffer,
    interferer: &SampleBuffer,
    snr_db: f64,
) -> Result<(SampleBuffer, SampleBuffer)> {
    if target.len() != interferer.len() {
        return Err(BasenError::shape(format!(
            "mixing length mismatch: {} vs {}",
            target.len(),
            interferer.len()
        )));
    }
    if target.rate() != interferer.rate() {
        return Err(BasenError::shape(format!(
            "mixing rate mismatch: {} vs {}",
            target.rate(),
            interferer.rate()
        )));
    }
    if !snr_db.is_finite() {
        return Err(BasenError::invalid("SNR must be finite"));
    }
    let t = normalize_rms(target, MIX_TARGET_RMS)?;
    let i = normalize_rms(interferer, MIX_TARGET_RMS * 10f64.powf(-snr_db / 20.0))?;
    Ok((t, i))
}

/// Cuts `x` into consecutive, non-overlapping segments of
/// `round(segment_seconds * rate)` frames.
pub fn segment<T: TimeSeries>(x: &T, spec: &SegmentationSpec) -> Vec<T> {
    let seg = (spec.segment_seconds * x.sample_rate()).round() as usize;
    let total = x.frames();
    if seg == 0 || seg > total {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(total / seg + 1);
    let mut start = 0;
    while start + seg <= total {
        out.push(x.slice_frames(start, start + seg));
        start += seg;
    }
    if !spec.drop_remainder && start < total {
        out.push(x.slice_frames(start, total));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn buf(v: &[f64]) -> SampleBuffer {
        SampleBuffer::new(v.to_vec(), 8000.0).unwrap()
    }

    #[test]
    fn rms_examples() {
        assert_eq!(rms(&buf(&[0.0; 4])).unwrap(), 0.0);
        assert_eq!(rms(&buf(&[1.0; 4])).unwrap(), 1.0);
        assert!((rms(&buf(&[1.0, -1.0, 2.0, -2.0])).unwrap() - 2.5f64.sqrt()).abs() < 1e-12);
        assert!(matches!(rms(&buf(&[])), Err(BasenError::EmptySignal)));
    }

    #[test]
    fn rejects_bad_containers() {
        assert!(SampleBuffer::new(vec![f64::NAN], 8000.0).is_err());
        assert!(SampleBuffer::new(vec![0.0], 0.0).is_err());
        assert!(MultiChannelSeries::new(vec![vec![0.0; 3], vec![0.0; 2]], 128.0).is_err());
    }

    #[test]
    fn normalize_examples() {
        let x = buf(&[2.0, -2.0, 2.0, -2.0]);
        assert_eq!(normalize_rms(&x, 1.0).unwrap().samples(), &[1.0, -1.0, 1.0, -1.0]);
        let y = buf(&[1.0, -1.0]);
        assert_eq!(normalize_rms(&y, 1.0).unwrap(), y);
        let z = normalize_rms(&buf(&[3.0, -3.0]), 0.5).unwrap();
        assert_eq!(z.samples(), &[0.5, -0.5]);
        let err = normalize_rms(&buf(&[0.0, 0.0]), 1.0).unwrap_err();
        assert_eq!(err.to_string(), "cannot normalize silence");
    }

    #[test]
    fn mix_identical_inputs_doubles() {
        let s = buf(&[0.3, -0.1, 0.2, 0.5]);
        let m = mix_at_snr(&s, &s, 0.0).unwrap();
        let n = normalize_rms(&s, MIX_TARGET_RMS).unwrap();
        for (a, b) in m.samples().iter().zip(n.samples()) {
            assert!((a - 2.0 * b).abs() < 1e-15);
        }
    }

    #[test]
    fn mix_scale_factors() {
        // rms 2 and rms 0.5 at 0 dB: gains 0.05 and 0.2 at the 0.1 target,
        // i.e. in ratio 0.5 : 2 relative to unit level.
        let t = buf(&[2.0, -2.0]);
        let i = buf(&[0.5, 0.5]);
        let (ts, is) = scale_pair(&t, &i, 0.0).unwrap();
        assert!((ts.samples()[0] / t.samples()[0] - 0.5 * MIX_TARGET_RMS).abs() < 1e-15);
        assert!((is.samples()[0] / i.samples()[0] - 2.0 * MIX_TARGET_RMS).abs() < 1e-15);
    }

    #[test]
    fn mix_errors() {
        let a = buf(&[1.0, 2.0]);
        assert!(mix_at_snr(&a, &buf(&[1.0]), 0.0).is_err());
        let other_rate = SampleBuffer::new(vec![1.0, 2.0], 16000.0).unwrap();
        assert!(mix_at_snr(&a, &other_rate, 0.0).is_err());
        assert!(mix_at_snr(&a, &buf(&[0.0, 0.0]), 0.0).is_err());
    }

    #[test]
    fn segment_counts() {
        let sixty = SampleBuffer::zeros(60 * 100, 100.0).unwrap();
        assert_eq!(segment(&sixty, &SegmentationSpec::new(2.0).unwrap()).len(), 30);
        assert_eq!(segment(&sixty, &SegmentationSpec::new(20.0).unwrap()).len(), 3);
        let five = SampleBuffer::zeros(500, 100.0).unwrap();
        assert_eq!(segment(&five, &SegmentationSpec::new(2.0).unwrap()).len(), 2);
        assert_eq!(segment(&five, &SegmentationSpec::new(2.0).unwrap().keep_remainder()).len(), 3);
        assert!(segment(&five, &SegmentationSpec::new(10.0).unwrap()).is_empty());
        assert!(SegmentationSpec::new(0.0).is_err());

        let eeg = MultiChannelSeries::zeros(3, 60 * 128, 128.0).unwrap();
        let segs = segment(&eeg, &SegmentationSpec::new(2.0).unwrap());
        assert_eq!(segs.len(), 30);
        assert_eq!(segs[0].channel_count(), 3);
        assert_eq!(segs[0].len(), 256);
    }

    proptest! {
        #[test]
        fn normalize_hits_target(v in prop::collection::vec(-1.0f64..1.0, 1..200), t in 0.01f64..3.0) {
            let x = buf(&v);
            prop_assume!(rms(&x).unwrap() > 1e-9);
            let y = normalize_rms(&x, t).unwrap();
            prop_assert!((rms(&y).unwrap() - t).abs() <= 1e-6 * t);
        }

        #[test]
        fn mix_levels_equal_at_zero_db(
            a in prop::collection::vec(-1.0f64..1.0, 16),
            b in prop::collection::vec(-1.0f64..1.0, 16),
        ) {
            let (x, y) = (buf(&a), buf(&b));
            prop_assume!(rms(&x).unwrap() > 1e-6 && rms(&y).unwrap() > 1e-6);
            let (ts, is) = scale_pair(&x, &y, 0.0).unwrap();
            let (rt, ri) = (rms(&ts).unwrap(), rms(&is).unwrap());
            prop_assert!((rt - ri).abs() <= 1e-6 * rt);
        }

        #[test]
        fn segment_concat_roundtrip(n_seg in 1usize..6, seg_len in 1usize..50) {
            let v: Vec<f64> = (0..n_seg * seg_len).map(|i| (i as f64).sin()).collect();
            let x = SampleBuffer::new(v.clone(), 10.0).unwrap();
            let spec = SegmentationSpec::new(seg_len as f64 / 10.0).unwrap().keep_remainder();
            let joined: Vec<f64> = segment(&x, &spec).iter().flat_map(|s| s.samples().to_vec()).collect();
            prop_assert_eq!(joined, v);
        }
    }
}
