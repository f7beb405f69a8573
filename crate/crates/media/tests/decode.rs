use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vidpipe_core::pixels::RgbImage;
use vidpipe_core::{ClipRequest, CropRect, FrameSampling, SampleSeed};
use vidpipe_media::decode::{decode_all, frame_at};
use vidpipe_media::encode::EncodeSettings;
use vidpipe_media::{
    corpus::write_pattern_video, decode_fused, decode_then_crop, frames_decoded_total, probe, read_code,
    DecoderOptions, Pattern,
};

const W: u32 = 160;
const H: u32 = 128;
const FPS: u32 = 10;
const FRAMES: u32 = 60;

struct Fixture {
    _dir: tempfile::TempDir,
    path: PathBuf,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pattern.mp4");
        let mut settings = EncodeSettings::h264(W, H, FPS, 400_000);
        settings.gop = 10;
        write_pattern_video(&path, Pattern::new(W, H, 7, 2), FRAMES, &settings).unwrap();
        Fixture { _dir: dir, path }
    })
}

fn request(path: &Path, start: f64, end: f64, n: usize, crop: CropRect, hflip: bool, seed: u64) -> ClipRequest {
    ClipRequest {
        chunk_path: path.to_path_buf(),
        local_start: start,
        local_end: end,
        num_frames: n,
        crop,
        hflip,
        target_h: 32,
        target_w: 40,
        frame_sampling: FrameSampling::UniformRandom,
        seed: SampleSeed::new(seed, 0, 0),
    }
}

#[test]
fn probe_reads_headers_only() {
    let path = &fixture().path;
    let before = frames_decoded_total();
    let info = probe(path).unwrap();
    assert_eq!(frames_decoded_total(), before);
    assert_eq!((info.width, info.height), (W, H));
    assert!((info.duration - f64::from(FRAMES) / f64::from(FPS)).abs() < 1.0 / f64::from(FPS) + 1e-9, "{}", info.duration);
    assert!((info.fps - f64::from(FPS)).abs() < 1e-6);
    assert_eq!(info.keyframes.len(), (FRAMES / 10) as usize);
    assert_eq!(info.codec, "h264");
}

#[test]
fn probe_rejects_missing_and_truncated_files() {
    assert!(probe(Path::new("/nonexistent/clip.mp4")).is_err());
    let dir = tempfile::tempdir().unwrap();
    let data = std::fs::read(&fixture().path).unwrap();
    let cut = dir.path().join("cut.mp4");
    std::fs::write(&cut, &data[..data.len() / 2]).unwrap();
    let e = probe(&cut).err().unwrap();
    assert!(e.is_data_error(), "{e}");
}

#[test]
fn baked_frame_index_matches_timestamps() {
    let frames = decode_all(&fixture().path, DecoderOptions::default()).unwrap();
    assert_eq!(frames.len(), FRAMES as usize);
    for (i, (pts, img)) in frames.iter().enumerate() {
        assert_eq!(read_code(img), (i as u32, 7));
        assert!((pts - i as f64 / f64::from(FPS)).abs() < 1e-6);
    }
    let (pts, img) = frame_at(&fixture().path, 3.27, DecoderOptions::default()).unwrap();
    assert_eq!(read_code(&img).0, 32);
    assert!((pts - 3.2).abs() < 1e-6);
}

// Oracle: pick frames from a straight full decode and crop them by hand.
fn oracle(frames: &[(f64, RgbImage)], req: &ClipRequest) -> Vec<RgbImage> {
    req.timestamps()
        .iter()
        .map(|&t| {
            let idx = frames.iter().rposition(|(pts, _)| *pts <= t + 1e-9).unwrap_or(0);
            let img = frames[idx].1.crop(req.crop);
            if req.hflip {
                img.hflip()
            } else {
                img
            }
        })
        .collect()
}

#[test]
fn fused_matches_reference_on_fuzzed_requests() {
    let path = &fixture().path;
    let all = decode_all(path, DecoderOptions::default()).unwrap();
    let duration = f64::from(FRAMES) / f64::from(FPS);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..200u64 {
        let len = rng.random_range(0.05..3.0);
        let start = rng.random_range(0.0..duration - len);
        let cw = rng.random_range(1..=W);
        let ch = rng.random_range(1..=H);
        let crop = CropRect::new(rng.random_range(0..=W - cw), rng.random_range(0..=H - ch), cw, ch);
        let req = request(path, start, start + len, rng.random_range(1..8), crop, rng.random_bool(0.5), case);
        let fused = decode_fused(&req, DecoderOptions::default()).unwrap();
        let reference = decode_then_crop(&req, DecoderOptions::default()).unwrap();
        assert_eq!(fused.frames, reference.frames, "case {case}: {req:?}");
        assert_eq!(fused.frame_pts, reference.frame_pts, "case {case}");
        assert!(fused.counters.frames_decoded <= reference.counters.frames_decoded, "case {case}");
        assert!(fused.counters.pixels_converted < reference.counters.pixels_converted || crop == CropRect::new(0, 0, W, H));

        let mut expected = vec![0u8; fused.frames.len()];
        let frame_len = 3 * 32 * 40;
        for (i, img) in oracle(&all, &req).iter().enumerate() {
            vidpipe_core::pixels::resize_bilinear_chw(img, 40, 32, &mut expected[i * frame_len..(i + 1) * frame_len]);
        }
        assert_eq!(fused.frames, expected, "case {case}");
    }
}
