use std::cmp::Ordering;

use crate::error::{Error, Result};

/// Kendall's tau-b:
///
/// `tau_b = (P − Q) / sqrt((P + Q + T_x)(P + Q + T_y))`
///
/// where `P`/`Q` count concordant/discordant pairs and `T_x`/`T_y` count
/// pairs tied only in `x`/only in `y`. Computed in `O(n log n)` with
/// Knight's merge-sort method.
pub fn kendall_tau(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Dimension {
            op: "kendall_tau",
            lhs: vec![x.len()],
            rhs: vec![y.len()],
        });
    }
    let n = x.len();
    if n < 2 {
        return Err(Error::DegenerateTau(format!("need at least 2 pairs, got {n}")));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::DegenerateTau("inputs must be finite".into()));
    }

    let mut pairs: Vec<(f64, f64)> = x.iter().copied().zip(y.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));

    let total = (n * (n - 1) / 2) as u64;
    let tied_x = tie_pairs(&pairs, |a, b| a.0 == b.0);
    let tied_xy = tie_pairs(&pairs, |a, b| a.0 == b.0 && a.1 == b.1);

    let mut ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let mut buf = vec![0.0; n];
    let swaps = merge_count(&mut ys, &mut buf);
    let tied_y = tie_pairs(&ys, |a, b| a == b);

    let not_tied_x = total - tied_x;
    let not_tied_y = total - tied_y;
    if not_tied_x == 0 || not_tied_y == 0 {
        return Err(Error::DegenerateTau("one of the inputs is constant".into()));
    }
    let numerator = not_tied_x as i64 - tied_y as i64 + tied_xy as i64 - 2 * swaps as i64;
    Ok(numerator as f64 / ((not_tied_x as f64) * (not_tied_y as f64)).sqrt())
}

/// Number of pairs inside runs of consecutive equal elements.
fn tie_pairs<T>(sorted: &[T], eq: impl Fn(&T, &T) -> bool) -> u64 {
    let mut total = 0u64;
    let mut run = 1u64;
    for w in sorted.windows(2) {
        if eq(&w[0], &w[1]) {
            run += 1;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    total + run * (run - 1) / 2
}

/// Stable merge sort that returns the number of inversions (strictly
/// decreasing pairs).
fn merge_count(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = merge_count(&mut v[..mid], &mut buf[..mid]);
    swaps += merge_count(&mut v[mid..], &mut buf[mid..]);
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[j].total_cmp(&v[i]) == Ordering::Less {
            swaps += (mid - i) as u64;
            buf[k] = v[j];
            j += 1;
        } else {
            buf[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
    k += mid - i;
    buf[k..k + n - j].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    swaps
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basic_cases() {
        assert_eq!(kendall_tau(&[1., 2., 3.], &[10., 20., 30.]).unwrap(), 1.0);
        assert_eq!(kendall_tau(&[1., 2., 3.], &[30., 20., 10.]).unwrap(), -1.0);
        let t = kendall_tau(&[1., 2., 3., 4.], &[1., 3., 2., 4.]).unwrap();
        assert!((t - 4.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn ties_use_tau_b() {
        // P=4, Q=0, T_x=1, T_y=0 over 5 pairs... x=[1,1,2], y=[1,2,3]:
        // pairs (0,1) tied in x; (0,2),(1,2) concordant → 2/sqrt(2·3)
        let t = kendall_tau(&[1., 1., 2.], &[1., 2., 3.]).unwrap();
        assert!((t - 2.0 / 6f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        assert!(matches!(kendall_tau(&[1.], &[1.]), Err(Error::DegenerateTau(_))));
        assert!(matches!(kendall_tau(&[1., 2.], &[1.]), Err(Error::Dimension { .. })));
        assert!(matches!(
            kendall_tau(&[3., 3., 3.], &[1., 2., 3.]),
            Err(Error::DegenerateTau(_))
        ));
    }
}
