#include "bb/sim.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "bb/error.hpp"

namespace bb::sim {

void WorldConfig::validate() const {
  if (n_balls < 1) throw ConfigError("n_balls must be >= 1, got " + std::to_string(n_balls));
  if (!(radius > 0.0)) throw ConfigError("radius must be > 0");
  if (!(speed >= 0.0)) throw ConfigError("speed must be >= 0");
  if (!(box_side > 4.0 * radius)) {
    throw ConfigError("box_side must exceed 4*radius (box_side=" + std::to_string(box_side) +
                      ", radius=" + std::to_string(radius) + ")");
  }
}

WorldState init_world(const WorldConfig& config, Rng& rng) {
  config.validate();
  const double lo = config.radius;
  const double hi = config.box_side - config.radius;
  const double min_dist2 = 4.0 * config.radius * config.radius;

  WorldState state;
  state.positions.reserve(config.n_balls);
  int attempts = 0;
  while (state.n_balls() < config.n_balls) {
    if (++attempts > kMaxPlacementAttempts) {
      throw ConfigError("box too crowded: could not place " + std::to_string(config.n_balls) +
                        " balls in " + std::to_string(kMaxPlacementAttempts) + " attempts");
    }
    const Vec2 p{uniform(rng, lo, hi), uniform(rng, lo, hi)};
    bool free = true;
    for (const Vec2& q : state.positions) {
      const double dx = p.x - q.x;
      const double dy = p.y - q.y;
      if (dx * dx + dy * dy < min_dist2) {
        free = false;
        break;
      }
    }
    if (free) state.positions.push_back(p);
  }

  state.velocities.reserve(config.n_balls);
  for (int i = 0; i < config.n_balls; ++i) {
    const double angle = 2.0 * std::numbers::pi * uniform01(rng);
    Vec2 v{std::cos(angle), std::sin(angle)};
    const double norm = std::hypot(v.x, v.y);
    v.x *= config.speed / norm;
    v.y *= config.speed / norm;
    state.velocities.push_back(v);
  }
  return state;
}

namespace {

// Mirrors a coordinate that crossed a wall plane; returns true if it did.
bool reflect(double& pos, double& vel, double lo, double hi) {
  if (pos > hi) {
    pos = 2.0 * hi - pos;
    vel = -vel;
    return true;
  }
  if (pos < lo) {
    pos = 2.0 * lo - pos;
    vel = -vel;
    return true;
  }
  return false;
}

void clamp_to_walls(Vec2& p, Vec2& v, double lo, double hi) {
  reflect(p.x, v.x, lo, hi);
  reflect(p.y, v.y, lo, hi);
}

}  // namespace

WorldState step(const WorldState& state, const WorldConfig& config) {
  WorldState next = state;
  const double lo = config.radius;
  const double hi = config.box_side - config.radius;
  const int n = next.n_balls();

  for (int i = 0; i < n; ++i) {
    Vec2& p = next.positions[i];
    Vec2& v = next.velocities[i];
    p.x += v.x;
    p.y += v.y;
    clamp_to_walls(p, v, lo, hi);
  }

  const double contact = 2.0 * config.radius;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      Vec2& pi = next.positions[i];
      Vec2& pj = next.positions[j];
      const double dx = pj.x - pi.x;
      const double dy = pj.y - pi.y;
      const double dist = std::hypot(dx, dy);
      if (dist >= contact - kOverlapEpsilon || dist == 0.0) continue;
      const double nx = dx / dist;
      const double ny = dy / dist;
      Vec2& vi = next.velocities[i];
      Vec2& vj = next.velocities[j];
      const double ui = vi.x * nx + vi.y * ny;
      const double uj = vj.x * nx + vj.y * ny;
      // Already separating.
      if (uj - ui >= 0.0) continue;
      vi.x += (uj - ui) * nx;
      vi.y += (uj - ui) * ny;
      vj.x += (ui - uj) * nx;
      vj.y += (ui - uj) * ny;
      // Mirror the penetration about the contact distance, like the walls.
      const double push = contact - dist;
      pi.x -= push * nx;
      pi.y -= push * ny;
      pj.x += push * nx;
      pj.y += push * ny;
      clamp_to_walls(pi, vi, lo, hi);
      clamp_to_walls(pj, vj, lo, hi);
    }
  }
  return next;
}

std::vector<WorldState> simulate(const WorldConfig& config, int n_steps, Rng& rng) {
  if (n_steps < 1) throw ConfigError("n_steps must be >= 1");
  std::vector<WorldState> trajectory;
  trajectory.reserve(n_steps);
  trajectory.push_back(init_world(config, rng));
  for (int s = 1; s < n_steps; ++s) trajectory.push_back(step(trajectory.back(), config));
  return trajectory;
}

double kinetic_energy(const WorldState& state) {
  double e = 0.0;
  for (const Vec2& v : state.velocities) e += v.x * v.x + v.y * v.y;
  return e;
}

}  // namespace bb::sim
