fn main() {
    for steps in [128usize, 512, 2048] {
        let report = kyleback::bridge::gaussian_fixed_point_check::<f64>(
            16.0, &[0.25], 10_000, steps, 13, 64, true,
        )
        .unwrap();
        let row = &report.rows[0];
        println!(
            "steps={steps}: frac<1e-3={:.4} median={:.3e} max={:.3e}",
            row.frac_below_1e3, row.median_rel_defect, row.max_rel_defect
        );
    }
}
