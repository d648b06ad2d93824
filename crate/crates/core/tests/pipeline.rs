//! Config to covariance to replicates to empirical correlation, end to end.

use std::path::Path;

use covkit::config::validate_config;
use covkit::diagnostics::{cov_to_corr, empirical_correlation, export_corr_strips};
use covkit::linalg::JitterPolicy;
use covkit::simulate::Sampler;

#[test]
fn empirical_correlation_tracks_the_model() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/cressie.toml");
    let cfg = validate_config(&path).unwrap();
    let sigma = cfg.model.build(&cfg.grid, cfg.ordering).unwrap();
    let sampler = Sampler::new(&sigma, &cfg.grid, None, JitterPolicy::default()).unwrap();
    let draws: Vec<_> = (0..4000u64).map(|s| sampler.draw(s)).collect();
    let emp = empirical_correlation(&draws, cfg.grid.len(), cfg.p()).unwrap();
    assert_eq!(emp.ordering(), sigma.ordering());
    let truth = cov_to_corr(&sigma).unwrap();
    assert!((emp.matrix() - truth.matrix()).abs().max() < 0.08);

    let strips = export_corr_strips(&emp, &[(1, 50), (51, 100)], (1, 2)).unwrap();
    assert_eq!(strips.len(), 2);
    assert_eq!(strips[0].shape(), (50, 50));
}
