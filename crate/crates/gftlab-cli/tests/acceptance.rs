use gftlab_cli::selftest;

#[test]
fn acceptance() {
    let verdicts = selftest::run_all();
    for v in &verdicts {
        eprintln!("{}", v.report());
    }
    for v in &verdicts {
        println!("{}", v.line());
    }
    let failed: Vec<u8> = verdicts.iter().filter(|v| !v.passed).map(|v| v.id).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
