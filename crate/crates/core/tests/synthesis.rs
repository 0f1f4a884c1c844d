use asap_stream::synth::{
    gen_scene, oracle_detector, DetectorNoise, ObjectSpec, SceneSpec, ScoreModel,
};

fn crowd() -> SceneSpec {
    let objects = (0..50)
        .map(|i| {
            ObjectSpec::new("pedestrian", [i as f64 * 5.0, 0.0, 0.0], [0.6, 0.7, 1.7])
                .moving(1.0, 0.5)
        })
        .collect();
    SceneSpec::new(200.0 / 12.0, 12.0, objects)
}

#[test]
fn position_noise_matches_sigma() {
    let dense = gen_scene(&crowd()).unwrap();
    let noise = DetectorNoise {
        pos_sigma: 0.2,
        ..DetectorNoise::default()
    };
    let det = oracle_detector(&dense, &noise, 3).unwrap();
    let (mut sq, mut n) = (0.0, 0usize);
    for f in &dense {
        for (d, g) in det[&f.timestamp_us].boxes.iter().zip(&f.boxes) {
            sq += (d.center.x - g.center.x).powi(2) + (d.center.y - g.center.y).powi(2);
            n += 1;
        }
    }
    assert!(n >= 10_000);
    let rms = (sq / n as f64).sqrt();
    let want = 0.2 * 2f64.sqrt();
    assert!((rms - want).abs() < 0.05 * want, "{rms} vs {want}");
}

#[test]
fn drop_rate_matches() {
    let dense = gen_scene(&crowd()).unwrap();
    let noise = DetectorNoise {
        drop_rate: 0.5,
        ..DetectorNoise::default()
    };
    let det = oracle_detector(&dense, &noise, 4).unwrap();
    let total: usize = dense.iter().map(|f| f.boxes.len()).sum();
    let kept: usize = det.values().map(|d| d.boxes.len()).sum();
    let rate = 1.0 - kept as f64 / total as f64;
    assert!((rate - 0.5).abs() < 0.02, "{rate}");
}

#[test]
fn noise_free_copy_without_ids() {
    let dense = gen_scene(&crowd()).unwrap();
    let noise = DetectorNoise {
        score: ScoreModel::Constant { score: 0.7 },
        ..DetectorNoise::default()
    };
    let det = oracle_detector(&dense, &noise, 0).unwrap();
    for f in &dense {
        let d = &det[&f.timestamp_us];
        assert_eq!(d.boxes.len(), f.boxes.len());
        for (b, g) in d.boxes.iter().zip(&f.boxes) {
            assert!(b.instance_id.is_none());
            assert_eq!((b.center, b.velocity, b.score), (g.center, g.velocity, 0.7));
        }
    }
}

#[test]
fn frame_draws_independent_of_scene_length() {
    let mut short = crowd();
    short.duration_s = 1.0;
    let noise = DetectorNoise {
        pos_sigma: 0.5,
        drop_rate: 0.3,
        ..DetectorNoise::default()
    };
    let long = oracle_detector(&gen_scene(&crowd()).unwrap(), &noise, 9).unwrap();
    let short = oracle_detector(&gen_scene(&short).unwrap(), &noise, 9).unwrap();
    for (t, d) in &short {
        assert_eq!(d, &long[t]);
    }
}
