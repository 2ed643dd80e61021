//! CSV output for sweep results.
//!
//! The column set and number formats are fixed so that downstream plotting
//! scripts and the byte-identity checks in the test suite can rely on them.

use scfde::link_sim::BerRecord;

pub const CSV_HEADER: &str =
    "scheme,power_alloc,n_r,n_d,l_h,l_g,sigma_t,snr_db,trials,bits,bit_errors,ber,ci95,opa_nonconv";

pub fn csv_row(record: &BerRecord) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{:.5e},{:.5e},{}",
        record.scheme.as_str(),
        record.power_alloc.as_str(),
        record.n_r,
        record.n_d,
        record.l_h,
        record.l_g,
        record.sigma_t,
        record.snr_db,
        record.trials,
        record.bits,
        record.bit_errors,
        record.ber,
        record.ci95_halfwidth,
        record.opa_nonconvergence_count,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use scfde::link_sim::{PowerAllocStrategy, Scheme};

    fn sample() -> BerRecord {
        BerRecord {
            scheme: Scheme::FdeDfe,
            power_alloc: PowerAllocStrategy::Opa,
            n_r: 2,
            n_d: 3,
            l_h: 3,
            l_g: 3,
            sigma_t: 2.0,
            snr_db: 12.0,
            trials: 100,
            bits: 102_400,
            bit_errors: 231,
            ber: 231.0 / 102_400.0,
            ci95_halfwidth: 2.9e-4,
            opa_nonconvergence_count: 0,
        }
    }

    #[test]
    fn row_matches_the_header_column_for_column() {
        let row = csv_row(&sample());
        assert_eq!(
            row.split(',').count(),
            CSV_HEADER.split(',').count(),
            "row: {row}"
        );
    }

    #[test]
    fn rates_use_scientific_notation_and_counts_stay_integral() {
        let row = csv_row(&sample());
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields[0], "fde-dfe");
        assert_eq!(fields[1], "opa");
        assert_eq!(fields[7], "12");
        assert_eq!(fields[10], "231");
        assert_eq!(fields[11], "2.25586e-3");
        assert_eq!(fields[12], "2.90000e-4");
    }
}
