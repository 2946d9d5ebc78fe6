/// Renormalized `row^beta`. `beta = 1` returns the row unchanged and
/// `beta = inf` puts all mass on the first maximum.
pub fn tempered_scores(row: &[f64], beta: f64) -> Vec<f64> {
    let mut out = row.to_vec();
    tempered_in_place(&mut out, beta);
    out
}

pub(crate) fn tempered_in_place(row: &mut [f64], beta: f64) {
    if beta == 1.0 {
        return;
    }
    let m = row.iter().copied().fold(0.0, f64::max);
    if beta.is_infinite() {
        let arg = row.iter().position(|&p| p == m).unwrap_or(0);
        row.fill(0.0);
        row[arg] = 1.0;
        return;
    }
    // powers of the max-scaled row stay in range for any beta
    let mut s = 0.0;
    for p in row.iter_mut() {
        *p = (*p / m).powf(beta);
        s += *p;
    }
    for p in row.iter_mut() {
        *p /= s;
    }
}

/// Top-p truncation: keeps the shortest prefix of the descending-sorted row
/// whose mass reaches `p` (the crossing token included) and renormalizes.
/// `p >= 1` returns the row unchanged. Ties are ordered by index.
pub fn nucleus_filter(row: &[f64], p: f64) -> Vec<f64> {
    let mut out = row.to_vec();
    nucleus_in_place(&mut out, p, &mut Vec::new());
    out
}

pub(crate) fn nucleus_in_place(row: &mut [f64], p: f64, order: &mut Vec<usize>) {
    if p >= 1.0 {
        return;
    }
    order.clear();
    order.extend(0..row.len());
    order.sort_unstable_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
    let mut acc = 0.0;
    let mut keep = row.len();
    for (n, &j) in order.iter().enumerate() {
        acc += row[j];
        if acc >= p {
            keep = n + 1;
            break;
        }
    }
    for &j in &order[keep..] {
        row[j] = 0.0;
    }
    for p in row.iter_mut() {
        *p /= acc;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn temperature_examples() {
        let r = [0.3, 0.7];
        assert_eq!(tempered_scores(&r, 1.0), r);
        assert_eq!(tempered_scores(&[0.5, 0.5], 10.0), vec![0.5, 0.5]);
        let t = tempered_scores(&[0.8, 0.2], 2.0);
        assert!((t[0] - 0.64 / 0.68).abs() < 1e-15);
        assert!((t[1] - 0.04 / 0.68).abs() < 1e-15);
        assert_eq!(tempered_scores(&[0.2, 0.5, 0.3], f64::INFINITY), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn nucleus_examples() {
        let r = [0.5, 0.3, 0.2];
        assert_eq!(nucleus_filter(&r, 1.0), r);
        let f = nucleus_filter(&r, 0.7);
        assert!((f[0] - 0.625).abs() < 1e-15 && (f[1] - 0.375).abs() < 1e-15 && f[2] == 0.0);
        assert_eq!(nucleus_filter(&r, 0.5), vec![1.0, 0.0, 0.0]);
        let f = nucleus_filter(&[0.2, 0.5, 0.3], 0.6);
        assert!(f[0] == 0.0 && (f[1] - 0.625).abs() < 1e-15 && (f[2] - 0.375).abs() < 1e-15);
    }

    fn arb_row() -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.001f64..1.0, 1..30).prop_map(|w| {
            let s: f64 = w.iter().sum();
            w.into_iter().map(|x| x / s).collect()
        })
    }

    fn argmax(r: &[f64]) -> usize {
        let m = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        r.iter().position(|&x| x == m).unwrap()
    }

    proptest! {
        #[test]
        fn temperature_preserves_argmax(row in arb_row(), beta in 0.05f64..50.0) {
            let t = tempered_scores(&row, beta);
            prop_assert_eq!(argmax(&t), argmax(&row));
            prop_assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn nucleus_keeps_minimal_prefix(row in arb_row(), p in 0.01f64..1.0) {
            let f = nucleus_filter(&row, p);
            prop_assert!((f.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let kept: f64 = row.iter().zip(&f).filter(|(_, &y)| y > 0.0).map(|(&x, _)| x).sum();
            prop_assert!(kept >= p - 1e-12);
            // every kept token is at least as likely as every dropped one
            let min_kept = row.iter().zip(&f).filter(|(_, &y)| y > 0.0).map(|(&x, _)| x).fold(1.0, f64::min);
            let max_dropped = row.iter().zip(&f).filter(|(_, &y)| y == 0.0).map(|(&x, _)| x).fold(0.0, f64::max);
            prop_assert!(min_kept >= max_dropped);
            // dropping the smallest kept token would fall below p
            prop_assert!(kept - min_kept < p + 1e-12);
        }
    }
}
