use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum GameError {
    #[error("arrival rate {phi} saturates residual capacity {capacity}")]
    Saturated { phi: f64, capacity: f64 },
    #[error("no machines")]
    NoMachines,
}

/// Optimal split of one player's rate `phi` over machines with residual
/// rates `residual`, minimising the player's mean M/M/1 response time.
pub fn best_reply(phi: f64, residual: &[f64]) -> Result<Vec<f64>, GameError> {
    if residual.is_empty() {
        return Err(GameError::NoMachines);
    }
    let capacity: f64 = residual.iter().filter(|m| **m > 0.0).sum();
    if phi >= capacity {
        return Err(GameError::Saturated { phi, capacity });
    }
    let mut order: Vec<usize> = (0..residual.len()).filter(|&i| residual[i] > 0.0).collect();
    order.sort_by(|&a, &b| residual[b].total_cmp(&residual[a]).then(a.cmp(&b)));
    let mut s = vec![0.0; residual.len()];
    if phi <= 0.0 {
        // no traffic: any split is optimal, send it to the fastest machines
        let top = residual[order[0]];
        let best: Vec<usize> = order.iter().copied().filter(|&i| residual[i] == top).collect();
        for &i in &best {
            s[i] = 1.0 / best.len() as f64;
        }
        return Ok(s);
    }
    let mut c = order.len();
    loop {
        let prefix = &order[..c];
        let sum_mu: f64 = prefix.iter().map(|&i| residual[i]).sum();
        let sum_sqrt: f64 = prefix.iter().map(|&i| residual[i].sqrt()).sum();
        let t = (sum_mu - phi) / sum_sqrt;
        let last = residual[prefix[c - 1]];
        if last - t * last.sqrt() >= 0.0 || c == 1 {
            for &i in prefix {
                s[i] = ((residual[i] - t * residual[i].sqrt()) / phi).max(0.0);
            }
            let total: f64 = s.iter().sum();
            for v in &mut s {
                *v /= total;
            }
            return Ok(s);
        }
        c -= 1;
    }
}

/// Mean response time of a player, given everyone's fractions.
pub fn player_response(j: usize, phi: &[f64], mu: &[f64], s: &[Vec<f64>]) -> f64 {
    (0..mu.len())
        .filter(|&i| s[j][i] > 0.0)
        .map(|i| {
            let load: f64 = (0..phi.len()).map(|k| s[k][i] * phi[k]).sum();
            let free = mu[i] - load;
            if free > 0.0 {
                s[j][i] / free
            } else {
                f64::INFINITY
            }
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GameOutcome {
    pub fractions: Vec<Vec<f64>>,
    pub rounds: usize,
    pub converged: bool,
}

/// Round-robin best replies until no player's response time changes by
/// `epsilon` or more over a full round. Play starts from fractions
/// proportional to machine rates.
pub fn play_game(phi: &[f64], mu: &[f64], epsilon: f64, max_rounds: usize) -> Result<GameOutcome, GameError> {
    if mu.is_empty() {
        return Err(GameError::NoMachines);
    }
    let total_mu: f64 = mu.iter().sum();
    let total_phi: f64 = phi.iter().sum();
    if total_phi >= total_mu {
        return Err(GameError::Saturated {
            phi: total_phi,
            capacity: total_mu,
        });
    }
    let mut s: Vec<Vec<f64>> = phi.iter().map(|_| mu.iter().map(|m| m / total_mu).collect()).collect();
    let mut prev: Vec<f64> = (0..phi.len()).map(|j| player_response(j, phi, mu, &s)).collect();
    for round in 1..=max_rounds {
        for j in 0..phi.len() {
            let residual: Vec<f64> = (0..mu.len())
                .map(|i| mu[i] - (0..phi.len()).filter(|&k| k != j).map(|k| s[k][i] * phi[k]).sum::<f64>())
                .collect();
            s[j] = best_reply(phi[j], &residual)?;
        }
        let now: Vec<f64> = (0..phi.len()).map(|j| player_response(j, phi, mu, &s)).collect();
        let delta = now
            .iter()
            .zip(&prev)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        prev = now;
        if delta < epsilon {
            return Ok(GameOutcome {
                fractions: s,
                rounds: round,
                converged: true,
            });
        }
    }
    Ok(GameOutcome {
        fractions: s,
        rounds: max_rounds,
        converged: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn homogeneous_machines_get_equal_shares() {
        for phi in [0.1, 1.0, 5.0, 9.9] {
            let s = best_reply(phi, &[3.0, 3.0, 3.0, 3.0]).unwrap();
            for v in s {
                assert!((v - 0.25).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_machine_takes_everything() {
        assert_eq!(best_reply(0.5, &[1.0]).unwrap(), vec![1.0]);
        let g = play_game(&[0.5], &[1.0], 1e-4, 10_000).unwrap();
        assert_eq!(g.rounds, 1);
        assert_eq!(g.fractions, vec![vec![1.0]]);
    }

    #[test]
    fn two_machine_case_matches_oracle() {
        let s = best_reply(1.0, &[2.0, 1.0]).unwrap();
        let o = crate::verify::minimize_reply(1.0, &[2.0, 1.0]);
        for (a, b) in s.iter().zip(&o) {
            assert!((a - b).abs() < 1e-6, "{s:?} vs {o:?}");
        }
    }

    #[test]
    fn slow_machine_dropped_at_low_rate() {
        let s = best_reply(0.1, &[10.0, 0.5]).unwrap();
        assert_eq!(s[1], 0.0);
        assert!((s[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn saturation_is_reported() {
        assert!(matches!(best_reply(3.0, &[1.0, 2.0]), Err(GameError::Saturated { .. })));
        assert!(play_game(&[2.0, 2.0], &[1.0, 2.0], 1e-4, 10).is_err());
    }

    #[test]
    fn randomized_best_reply_matches_oracle() {
        let mut rng = crate::rng::stream(42, "best-reply", 0);
        for _ in 0..200 {
            let n = rng.random_range(2..=5);
            let mu: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..10.0)).collect();
            let cap: f64 = mu.iter().sum();
            let phi = rng.random_range(0.01..0.95) * cap;
            let s = best_reply(phi, &mu).unwrap();
            let o = crate::verify::minimize_reply(phi, &mu);
            for (a, b) in s.iter().zip(&o) {
                assert!((a - b).abs() < 1e-6, "mu {mu:?} phi {phi}: {s:?} vs {o:?}");
            }
        }
    }

    #[test]
    fn homogeneous_game_is_uniform_within_two_rounds() {
        let phi = [3.0, 7.0, 1.0, 12.0, 4.0];
        let mu = [10.0; 4];
        let g = play_game(&phi, &mu, 1e-4, 10_000).unwrap();
        assert!(g.converged && g.rounds <= 2);
        for row in &g.fractions {
            for v in row {
                assert!((v - 0.25).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn heterogeneous_game_converges_and_is_feasible() {
        let mut rng = crate::rng::stream(5, "game", 0);
        let mu: Vec<f64> = (0..8).map(|_| rng.random_range(1.0..2.0)).collect();
        let total: f64 = mu.iter().sum();
        let phi: Vec<f64> = (0..20).map(|_| 0.9 * total / 20.0).collect();
        let g = play_game(&phi, &mu, 1e-4, 10_000).unwrap();
        assert!(g.converged);
        for row in &g.fractions {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|v| *v >= 0.0));
        }
        for i in 0..mu.len() {
            let load: f64 = (0..phi.len()).map(|k| g.fractions[k][i] * phi[k]).sum();
            assert!(load < mu[i]);
        }
    }
}
