use sigscore_bench::walks;

#[test]
fn walks_are_seeded_and_time_augmented() {
    let a = walks(3, 26, 4, 9);
    assert_eq!(a, walks(3, 26, 4, 9));
    assert_ne!(a, walks(3, 26, 4, 10));
    for p in &a {
        assert_eq!((p.rows(), p.channels()), (26, 5));
        assert_eq!(p.row(0)[4], 0.0);
        assert_eq!(p.row(25)[4], 1.0);
    }
}
