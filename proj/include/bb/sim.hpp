#pragma once

#include <cstdint>
#include <vector>

#include "bb/rng.hpp"

namespace bb::sim {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

struct WorldConfig {
  double box_side = 10.0;
  int n_balls = 3;
  double radius = 1.2;
  double speed = 0.5;
  std::uint64_t seed = 0;

  // Throws ConfigError when the invariants do not hold.
  void validate() const;
};

struct WorldState {
  std::vector<Vec2> positions;
  std::vector<Vec2> velocities;

  int n_balls() const { return static_cast<int>(positions.size()); }
};

/// Overlap tolerance on the pairwise distance between centers.
inline constexpr double kOverlapEpsilon = 1e-9;
/// Rejection-sampling budget for placing balls.
inline constexpr int kMaxPlacementAttempts = 10000;

/// Places balls uniformly without overlap and gives each an isotropic
/// velocity of norm `config.speed`.
WorldState init_world(const WorldConfig& config, Rng& rng);

/// Advances one frame: free flight, mirror reflection at the walls, then a
/// single ascending-index pass of equal-mass elastic pair collisions.
WorldState step(const WorldState& state, const WorldConfig& config);

/// `n_steps` states starting from `init_world`.
std::vector<WorldState> simulate(const WorldConfig& config, int n_steps, Rng& rng);

/// Sum of squared speeds (mass and the 1/2 factor omitted).
double kinetic_energy(const WorldState& state);

}  // namespace bb::sim
