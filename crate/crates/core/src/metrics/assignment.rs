//! Minimum-cost perfect matching on dense square cost matrices.

/// Exact solution by shortest augmenting paths with row/column potentials
/// (the O(n³) Hungarian method). `cost` is row-major `n × n`. Returns the
/// column assigned to each row.
pub fn hungarian(n: usize, cost: &[f64]) -> Vec<usize> {
    assert_eq!(cost.len(), n * n);
    const NONE: usize = usize::MAX;
    // Potentials for rows (u) and columns (v); column n is a virtual root.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of = vec![NONE; n + 1];
    let mut way = vec![NONE; n + 1];
    for row in 0..n {
        row_of[n] = row;
        let mut col = n;
        let mut min_to = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[col] = true;
            let r = row_of[col];
            let mut delta = f64::INFINITY;
            let mut next = NONE;
            for j in 0..n {
                if used[j] {
                    continue;
                }
                let reduced = cost[r * n + j] - u[r] - v[j];
                if reduced < min_to[j] {
                    min_to[j] = reduced;
                    way[j] = col;
                }
                if min_to[j] < delta {
                    delta = min_to[j];
                    next = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    let rj = row_of[j];
                    u[rj] += delta;
                    v[j] -= delta;
                } else {
                    min_to[j] -= delta;
                }
            }
            col = next;
            if row_of[col] == NONE {
                break;
            }
        }
        // Flip the augmenting path back to the root.
        loop {
            let prev = way[col];
            row_of[col] = row_of[prev];
            col = prev;
            if col == n {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 0..n {
        assignment[row_of[j]] = j;
    }
    assignment
}

/// Approximate matching with its certificate.
#[derive(Clone, Debug, PartialEq)]
pub struct AuctionResult {
    pub assignment: Vec<usize>,
    pub cost: f64,
    /// Dual lower bound on the optimal total cost.
    pub lower_bound: f64,
}

impl AuctionResult {
    /// Relative optimality gap `(cost - lower_bound) / cost`.
    pub fn gap(&self) -> f64 {
        if self.cost > 0.0 {
            ((self.cost - self.lower_bound) / self.cost).max(0.0)
        } else {
            0.0
        }
    }
}

/// ε-scaling forward auction on a cost given as a function of `(row, col)`.
/// Phases shrink ε until the dual certificate proves a relative gap of at
/// most `max_gap`.
pub fn auction(n: usize, cost: impl Fn(usize, usize) -> f64, max_gap: f64) -> AuctionResult {
    const NONE: usize = usize::MAX;
    let mut max_cost: f64 = 0.0;
    for i in (0..n).step_by((n / 64).max(1)) {
        for j in 0..n {
            max_cost = max_cost.max(cost(i, j));
        }
    }
    let mut prices = vec![0.0; n];
    let mut eps = (max_cost / 4.0).max(f64::MIN_POSITIVE);
    loop {
        let mut owner = vec![NONE; n];
        let mut assigned = vec![NONE; n];
        let mut queue: Vec<usize> = (0..n).rev().collect();
        while let Some(i) = queue.pop() {
            let (mut best, mut second, mut best_j) = (f64::INFINITY, f64::INFINITY, 0);
            for j in 0..n {
                let v = cost(i, j) + prices[j];
                if v < best {
                    second = best;
                    best = v;
                    best_j = j;
                } else if v < second {
                    second = v;
                }
            }
            let raise = if second.is_finite() { second - best } else { 0.0 };
            prices[best_j] += raise + eps;
            if owner[best_j] != NONE {
                assigned[owner[best_j]] = NONE;
                queue.push(owner[best_j]);
            }
            owner[best_j] = i;
            assigned[i] = best_j;
        }
        let total: f64 = (0..n).map(|i| cost(i, assigned[i])).sum();
        let dual: f64 = (0..n)
            .map(|i| (0..n).map(|j| cost(i, j) + prices[j]).fold(f64::INFINITY, f64::min))
            .sum::<f64>()
            - prices.iter().sum::<f64>();
        let result = AuctionResult {
            assignment: assigned,
            cost: total,
            lower_bound: dual,
        };
        if result.gap() <= max_gap || eps < 1e-15 * max_cost.max(1e-300) {
            return result;
        }
        eps /= 5.0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn brute_force(n: usize, cost: &[f64]) -> f64 {
        fn rec(row: usize, n: usize, cost: &[f64], used: &mut [bool], acc: f64, best: &mut f64) {
            if row == n {
                *best = best.min(acc);
                return;
            }
            for j in 0..n {
                if !used[j] {
                    used[j] = true;
                    rec(row + 1, n, cost, used, acc + cost[row * n + j], best);
                    used[j] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        rec(0, n, cost, &mut vec![false; n], 0.0, &mut best);
        best
    }

    fn total(cost: &[f64], n: usize, assignment: &[usize]) -> f64 {
        (0..n).map(|i| cost[i * n + assignment[i]]).sum()
    }

    #[test]
    fn hungarian_matches_brute_force() {
        let mut rng = crate::rng::stream(1, 0);
        for n in 1..=7 {
            for _ in 0..20 {
                let cost: Vec<f64> = (0..n * n).map(|_| rng.random_range(0.0..10.0)).collect();
                let a = hungarian(n, &cost);
                let mut seen = a.clone();
                seen.sort();
                assert_eq!(seen, (0..n).collect::<Vec<_>>());
                assert!((total(&cost, n, &a) - brute_force(n, &cost)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn auction_certificate_brackets_optimum() {
        let mut rng = crate::rng::stream(2, 0);
        for _ in 0..30 {
            let n = 7;
            let cost: Vec<f64> = (0..n * n).map(|_| rng.random_range(0.0..3.0)).collect();
            let r = auction(n, |i, j| cost[i * n + j], 0.01);
            let opt = brute_force(n, &cost);
            assert!(r.lower_bound <= opt + 1e-9);
            assert!(r.cost >= opt - 1e-9);
            assert!(r.gap() <= 0.01);
        }
    }

    #[test]
    fn auction_agrees_with_hungarian_on_larger_instances() {
        let mut rng = crate::rng::stream(3, 0);
        let n = 120;
        let cost: Vec<f64> = (0..n * n).map(|_| rng.random_range(0.0..1.0)).collect();
        let exact = total(&cost, n, &hungarian(n, &cost));
        let r = auction(n, |i, j| cost[i * n + j], 0.01);
        assert!(r.lower_bound <= exact + 1e-9 && exact <= r.cost + 1e-9);
        assert!((r.cost - exact) / exact <= 0.01);
    }
}
