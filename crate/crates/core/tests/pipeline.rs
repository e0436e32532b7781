use intake_core::graph::CANONICAL_NODES;
use intake_core::numeric::{Mode, Tensor};
use intake_core::pipeline::*;
use intake_core::Error;
use proptest::prelude::*;
use std::io::Write;
use std::path::Path;

fn write(path: &Path, text: &str) {
    std::fs::File::create(path).unwrap().write_all(text.as_bytes()).unwrap();
}

fn kp_line(frame: usize, conf: f64) -> String {
    let kp: Vec<String> = (0..CANONICAL_NODES).map(|j| format!("[{}, {}, {conf}]", 10 + j, 20 + j)).collect();
    format!("{{\"frame\": {frame}, \"kp\": [{}]}}\n", kp.join(", "))
}

#[test]
fn confident_frames_load_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.jsonl");
    write(&path, &kp_line(0, 0.9));
    let seq = load_keypoints(&path, 0.3, 24.0).unwrap();
    assert_eq!(seq.len(), 1);
    assert_eq!(&seq.frames.data()[..3], &[10.0, 20.0, 0.9]);
    assert_eq!(seq.source_id, "a");
}

#[test]
fn low_confidence_is_zeroed_and_gaps_filled() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("b.jsonl");
    let mut text = kp_line(6, 0.9) + &kp_line(8, 0.9);
    text = text.replacen("[10, 20, 0.9]", "[10, 20, 0.1]", 1);
    write(&path, &text);
    let seq = load_keypoints(&path, 0.3, 24.0).unwrap();
    assert_eq!(seq.len(), 9);
    let row = |f: usize| &seq.frames.data()[f * CANONICAL_NODES * 3..(f + 1) * CANONICAL_NODES * 3];
    assert_eq!(&row(6)[..3], &[0.0, 0.0, 0.0]);
    assert_eq!(&row(6)[3..6], &[11.0, 21.0, 0.9]);
    assert!(row(7).iter().all(|v| *v == 0.0));
    assert!(row(0).iter().all(|v| *v == 0.0));
}

#[test]
fn malformed_lines_report_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.jsonl");
    write(&path, &(kp_line(0, 0.9) + "{not json}\n"));
    match load_keypoints(&path, 0.3, 24.0) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
        other => panic!("{other:?}"),
    }
    write(&path, "{\"frame\": 4, \"kp\": [[1, 2, 0.5]]}\n");
    let msg = load_keypoints(&path, 0.3, 24.0).unwrap_err().to_string();
    assert!(msg.contains("frame 4") && msg.contains("23"), "{msg}");
}

#[test]
fn label_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("l.csv");
    write(&path, "frame,label\n3,1\n4,1\n");
    assert_eq!(load_labels(&path, 6).unwrap(), vec![0, 0, 0, 1, 1, 0]);
    write(&path, "");
    assert_eq!(load_labels(&path, 4).unwrap(), vec![0; 4]);
    write(&path, "frame,label\n1,1\n1,2\n");
    assert!(load_labels(&path, 4).is_err());
    write(&path, "frame,label\n1,3\n");
    assert!(load_labels(&path, 4).is_err());
    write(&path, "frame,label\n4,1\n");
    assert!(load_labels(&path, 4).is_err());
}

#[test]
fn normalization_examples() {
    let mut data = vec![0.0; 2 * CANONICAL_NODES * 3];
    data[..3].copy_from_slice(&[70.0, 70.0, 0.8]);
    data[3..6].copy_from_slice(&[140.0, 140.0, 0.7]);
    data[6..9].copy_from_slice(&[200.0, 10.0, 0.7]);
    let seq = SkeletonSequence::new(Tensor::from_vec(&[2, CANONICAL_NODES, 3], data).unwrap(), 24.0, "n").unwrap();
    let (out, outside) = normalize_coordinates(&seq, 140.0, 140.0).unwrap();
    assert_eq!(&out.frames.data()[..6], &[0.5, 0.5, 0.8, 1.0, 1.0, 0.7]);
    assert_eq!(&out.frames.data()[9..12], &[0.0, 0.0, 0.0]);
    assert_eq!(outside, 1);
    assert!(normalize_coordinates(&out, 140.0, 140.0).is_err());
}

#[test]
fn three_hundred_frames_tile_into_three_windows() {
    let seq = SkeletonSequence::new(Tensor::zeros(&[300, CANONICAL_NODES, 3]), 24.0, "t").unwrap();
    let w = make_windows(&seq, 6.0, 0.5, Mode::Infer).unwrap();
    assert_eq!(w.len(), 3);
    assert_eq!(w.valid_mask[2 * 144..].iter().filter(|m| !**m).count(), 132);
    let probs = Tensor::full(&[3, 144, 3], 1.0 / 3.0);
    assert_eq!(stitch_predictions(&probs, &w.origin, 300).unwrap().len(), 300);
}

#[test]
fn prediction_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.csv");
    let probs = vec![vec![0.2, 0.7, 0.1], vec![0.4, 0.4, 0.2], vec![1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]];
    write_predictions(&path, &probs).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().next().unwrap(), "frame,label,p_none,p_eat,p_drink");
    assert_eq!(text.lines().nth(3).unwrap(), "2,0,0.333334,0.333333,0.333333");
    assert_eq!(load_prediction_labels(&path).unwrap(), vec![1, 0, 0]);
}

proptest! {
    #[test]
    fn one_hot_round_trip(total in 2usize..700, fps in prop::sample::select(vec![10.0, 24.0, 30.0]), seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let labels: Vec<usize> = (0..total).map(|_| rng.gen_range(0..3)).collect();
        let seq = SkeletonSequence::new(Tensor::zeros(&[total, CANONICAL_NODES, 3]), fps, "r")
            .unwrap()
            .with_labels(labels.clone())
            .unwrap();
        let w = make_windows(&seq, 6.0, 0.5, Mode::Infer).unwrap();
        prop_assert_eq!(w.len(), total.div_ceil(w.window_len()));
        let mut probs = Tensor::zeros(&[w.len(), w.window_len(), 3]);
        for (i, l) in w.labels.iter().enumerate() {
            probs.data_mut()[i * 3 + l] = 1.0;
        }
        prop_assert_eq!(stitch_predictions(&probs, &w.origin, total).unwrap(), labels);
    }

    #[test]
    fn train_windows_copy_their_source(total in 2usize..500, stride in 0.1f64..=1.0) {
        let data: Vec<f64> = (0..total * CANONICAL_NODES * 3).map(|i| i as f64).collect();
        let labels: Vec<usize> = (0..total).map(|f| f % 3).collect();
        let seq = SkeletonSequence::new(Tensor::from_vec(&[total, CANONICAL_NODES, 3], data).unwrap(), 24.0, "s")
            .unwrap()
            .with_labels(labels.clone())
            .unwrap();
        let w = make_windows(&seq, 6.0, stride, Mode::Train).unwrap();
        let t = w.window_len();
        let mut covered = vec![false; total];
        for (n, o) in w.origin.iter().enumerate() {
            for i in 0..t {
                let f = o.start + i;
                if f < total {
                    prop_assert!(w.valid_mask[n * t + i]);
                    prop_assert_eq!(w.labels[n * t + i], labels[f]);
                    covered[f] = true;
                } else {
                    prop_assert!(!w.valid_mask[n * t + i]);
                }
            }
        }
        prop_assert!(covered.iter().all(|c| *c));
    }
}
