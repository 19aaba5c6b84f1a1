use polarqkd_py::{bsc, estimate_fer, secret_key_length, Profile, Session};

#[test]
fn encode_decode_through_bindings() {
    let code = Profile::new(0.05, 7, "bsc").unwrap().code(64).unwrap();
    let info: Vec<u8> = (0..64).map(|i| (i * 7 % 3 == 0) as u8).collect();
    let x = code.encode(info.clone()).unwrap();
    assert_eq!(x.len(), 128);
    assert_eq!(code.decode(x, 0.05, false).unwrap(), info);
}

#[test]
fn bit_values_are_checked() {
    let code = Profile::new(0.05, 3, "bsc").unwrap().code(4).unwrap();
    assert!(code.encode(vec![0, 1, 2, 0]).is_err());
    assert!(Profile::new(0.05, 3, "awgn").is_err());
}

#[test]
fn profile_json_round_trip() {
    let p = Profile::new(0.2, 5, "bec").unwrap();
    let q = Profile::from_json(&p.to_json().unwrap()).unwrap();
    assert_eq!(p.order(), q.order());
    assert_eq!(q.kind(), p.kind());
}

#[test]
fn session_and_helpers() {
    let s = Session::new(
        10, 450, 0.02, 3, "full", None, None, false, true, 0.05, 0.5e-10,
    )
    .unwrap();
    let o = s.run(0).unwrap();
    assert!(o.agreed && o.verified);
    assert!(
        Session::new(10, 450, 0.02, 3, "bogus", None, None, false, true, 0.05, 0.5e-10).is_err()
    );

    let y = bsc(vec![0; 1000], 0.5, 1, 0).unwrap();
    assert!(y.contains(&1));
    assert_eq!(bsc(vec![1; 10], 0.0, 1, 0).unwrap(), vec![1; 10]);

    assert_eq!(
        secret_key_length(1024, 512, 0.01, None, 0.05, 0.5e-10).unwrap(),
        0
    );
    let r = estimate_fer(8, 64, 0.01, 10, 0, None, Some(1)).unwrap();
    assert_eq!(r.trials, 10);
}
