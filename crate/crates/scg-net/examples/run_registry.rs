use scg_net::gradcheck::run_all;
fn main() {
    let start = std::time::Instant::now();
    for report in run_all(42).unwrap() {
        println!(
            "{:<24} max_rel_err {:>12.3e}  tol {:>8.0e}  {}",
            report.scope,
            report.max_rel_error(),
            report.tolerance,
            if report.passed() { "PASS" } else { "FAIL" }
        );
    }
    println!("total {:.1?}", start.elapsed());
}
