/// Maximum-weight assignment on a rectangular matrix. Returns, per row, the
/// assigned column (rows left over in a wide or tall matrix get `None`)
/// and the total weight.
pub fn max_weight_assignment(weights: &[Vec<i64>]) -> (Vec<Option<usize>>, i64) {
    let rows = weights.len();
    let cols = weights.iter().map(Vec::len).max().unwrap_or(0);
    let n = rows.max(cols);
    if n == 0 {
        return (Vec::new(), 0);
    }
    let top = weights.iter().flatten().copied().max().unwrap_or(0).max(0);
    // minimize top - w on a padded square matrix; dummy cells weigh zero
    let cost = |i: usize, j: usize| -> i64 { top - weights.get(i).and_then(|r| r.get(j)).copied().unwrap_or(0) };

    // potentials and matching are 1-based with 0 as the virtual start column
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![i64::MAX; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = i64::MAX;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![None; rows];
    let mut total = 0;
    for j in 1..=n {
        let i = owner[j] - 1;
        if i < rows && j - 1 < weights[i].len() {
            assignment[i] = Some(j - 1);
            total += weights[i][j - 1];
        }
    }
    (assignment, total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two() {
        let (a, t) = max_weight_assignment(&[vec![5, 1], vec![2, 6]]);
        assert_eq!(a, vec![Some(0), Some(1)]);
        assert_eq!(t, 11);
    }

    #[test]
    fn rectangular() {
        let (a, t) = max_weight_assignment(&[vec![1, 9, 3]]);
        assert_eq!((a, t), (vec![Some(1)], 9));
        let (a, t) = max_weight_assignment(&[vec![4], vec![7], vec![2]]);
        assert_eq!((a, t), (vec![None, Some(0), None], 7));
        assert_eq!(max_weight_assignment(&[]), (vec![], 0));
    }
}
