// Acceptance criteria 1-10. Prints one PASS/FAIL line per criterion with
// the measured values, also written to <work-dir>/acceptance.log; exits
// non-zero when any criterion fails.
//
//   acceptance [--work-dir DIR] [--only 1,4,9]

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "bb/eval.hpp"
#include "bb/experiment.hpp"
#include "bb/models.hpp"
#include "bb/sim.hpp"
#include "bb/training.hpp"
#include "gradcheck.hpp"

using namespace bb;
namespace fs = std::filesystem;
using bb::testing::gradcheck;
using bb::testing::random_tensor;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// --- 1: gradients -------------------------------------------------------------

template <typename Cell>
double cell_gradcheck(Rng& rng, ag::Shape x_shape, ag::Shape w_shape, ag::Shape u_shape,
                      ag::Shape b_shape, ag::Shape h_shape, Cell cell) {
  std::vector<ag::Tensor<double>> w;
  for (int g = 0; g < 4; ++g) w.push_back(random_tensor(w_shape, rng));
  for (int g = 0; g < 4; ++g) w.push_back(random_tensor(u_shape, rng));
  for (int g = 0; g < 8; ++g) w.push_back(random_tensor(b_shape, rng));
  auto x = random_tensor(x_shape, rng), h = random_tensor(h_shape, rng), c = random_tensor(h_shape, rng);
  std::vector<ag::Tensor<double>*> ps{&x, &h, &c};
  for (auto& t : w) ps.push_back(&t);
  return gradcheck(ps, [&](ag::Tape<double>& tape) {
           models::CellWeights<double> cw;
           ag::Var<double>* slots[] = {&cw.w_ii, &cw.w_if, &cw.w_io, &cw.w_ig, &cw.w_hi, &cw.w_hf,
                                       &cw.w_ho, &cw.w_hg, &cw.b_ii, &cw.b_if, &cw.b_io, &cw.b_ig,
                                       &cw.b_hi, &cw.b_hf, &cw.b_ho, &cw.b_hg};
           for (int i = 0; i < 16; ++i) *slots[i] = tape.parameter(w[i]);
           const auto s = cell(tape.parameter(x), models::CellState<double>{tape.parameter(h), tape.parameter(c), false}, cw);
           return ag::add(ag::sum(s.h), ag::scale(ag::sum(ag::hadamard(s.c, s.c)), 0.5));
         })
      .max_rel_error;
}

Outcome criterion_gradients() {
  using namespace ag;
  Rng rng(101);
  std::vector<std::pair<std::string, double>> errors;
  auto a = random_tensor({2, 3}, rng), b = random_tensor({2, 3}, rng);
  const auto probe = random_tensor({2, 3}, rng);
  auto weigh = [&](Tape<double>& t, Var<double> v) { return sum(hadamard(v, t.input(probe))); };
  auto check = [&](const std::string& name, std::vector<Tensor<double>*> ps, const testing::LossBuilder& f) {
    errors.emplace_back(name, gradcheck(ps, f).max_rel_error);
  };
  check("add", {&a, &b}, [&](Tape<double>& t) { return weigh(t, add(t.parameter(a), t.parameter(b))); });
  check("sub", {&a, &b}, [&](Tape<double>& t) { return weigh(t, sub(t.parameter(a), t.parameter(b))); });
  check("hadamard", {&a, &b}, [&](Tape<double>& t) { return weigh(t, hadamard(t.parameter(a), t.parameter(b))); });
  check("sigmoid", {&a}, [&](Tape<double>& t) { return weigh(t, sigmoid(t.parameter(a))); });
  check("tanh", {&a}, [&](Tape<double>& t) { return weigh(t, ag::tanh(t.parameter(a))); });
  check("scale", {&a}, [&](Tape<double>& t) { return weigh(t, scale(t.parameter(a), -1.5)); });
  check("affine", {&a}, [&](Tape<double>& t) { return weigh(t, affine(t.parameter(a), 2.0, -1.0)); });
  auto w = random_tensor({4, 6}, rng), x = random_tensor({6}, rng);
  check("matvec", {&w, &x}, [&](Tape<double>& t) { return sum(ag::tanh(matvec(t.parameter(w), t.parameter(x)))); });
  for (int k : {1, 3, 5}) {
    auto kern = random_tensor({2, 3, k, k}, rng), img = random_tensor({3, 5, 6}, rng);
    check(fmt("conv2d k=%d", k), {&kern, &img}, [&](Tape<double>& t) {
      return sum(ag::tanh(conv2d(t.parameter(kern), t.parameter(img))));
    });
  }
  auto img = random_tensor({2, 3, 4}, rng), bias = random_tensor({2}, rng);
  check("add_channel_bias+reshape+mean", {&img, &bias}, [&](Tape<double>& t) {
    return mean(ag::tanh(reshape(add_channel_bias(t.parameter(img), t.parameter(bias)), {24})));
  });
  auto target = random_tensor({2, 3}, rng);
  check("mse", {&a, &target}, [&](Tape<double>& t) { return mse(t.parameter(a), t.parameter(target)); });

  errors.emplace_back("LSTM cell", cell_gradcheck(rng, {4}, {3, 4}, {3, 3}, {3}, {3},
                                                  [](auto x, auto s, const auto& cw) {
                                                    return models::lstm_cell_step<double>(x, s, cw);
                                                  }));
  errors.emplace_back("ConvLSTM cell", cell_gradcheck(rng, {1, 5, 5}, {2, 1, 3, 3}, {2, 2, 3, 3}, {2}, {2, 5, 5},
                                                      [](auto x, auto s, const auto& cw) {
                                                        return models::convlstm_cell_step<double>(x, s, cw);
                                                      }));

  for (auto arch : {models::Architecture::lstm, models::Architecture::convlstm,
                    models::Architecture::seq2seq, models::Architecture::seq2seq_multi}) {
    models::ModelSpec s;
    s.arch = arch;
    if (arch == models::Architecture::lstm) {
      s.hidden_units = {5, 16};
      s.height = s.width = 4;
    } else {
      s.kernels = {3, 3};
      s.channels = {2, 1};
      s.height = s.width = 6;
    }
    s.context = 3;
    models::Model<double> m(s);
    m.init_params(rng);
    std::vector<ag::Tensor<double>> frames;
    for (int i = 0; i < 4; ++i) frames.push_back(random_tensor({1, s.height, s.width}, rng));
    std::vector<ag::Tensor<double>*> ps;
    for (std::size_t p = 0; p < m.params().size(); ++p) ps.push_back(&m.params().tensor(p));
    errors.emplace_back(models::to_string(arch), gradcheck(ps, [&](ag::Tape<double>& tape) {
                                                  const auto bound = models::bind(tape, m);
                                                  std::vector<ag::Var<double>> vars;
                                                  for (const auto& f : frames) vars.push_back(tape.input(f));
                                                  return training::teacher_forced_loss<double>(bound, vars, 3, 1);
                                                }).max_rel_error);
  }

  double worst = 0.0;
  std::string worst_name;
  for (const auto& [name, e] : errors) {
    if (e >= worst) {
      worst = e;
      worst_name = name;
    }
  }
  return {worst < 1e-4, fmt("%zu checks (ops, cells, 4 architectures), max relative error %.2e (%s)",
                            errors.size(), worst, worst_name.c_str())};
}

// --- 2: physics ---------------------------------------------------------------

Outcome criterion_physics() {
  sim::WorldConfig cfg;
  Rng rng(cfg.seed);
  const auto traj = sim::simulate(cfg, 4001, rng);  // 4000 steps after the initial state
  auto energy = [](const sim::WorldState& s) {
    double e = 0.0;
    for (const auto& v : s.velocities) e += v.x * v.x + v.y * v.y;
    return e;
  };
  const double e0 = energy(traj.front());
  double drift = 0.0;
  long escapes = 0;
  for (const auto& s : traj) {
    drift = std::max(drift, std::abs(energy(s) - e0) / e0);
    for (const auto& p : s.positions) {
      escapes += p.x < cfg.radius || p.x > cfg.box_side - cfg.radius || p.y < cfg.radius ||
                 p.y > cfg.box_side - cfg.radius;
    }
  }
  sim::WorldConfig two = cfg;
  two.n_balls = 2;
  const sim::WorldState head_on{{{3.0, 5.0}, {5.5, 5.0}}, {{1.0, 0.0}, {-1.0, 0.0}}};
  const auto after = sim::step(head_on, two);
  const bool swapped = after.velocities[0].x == -1.0 && after.velocities[0].y == 0.0 &&
                       after.velocities[1].x == 1.0 && after.velocities[1].y == 0.0;
  return {drift < 1e-9 && escapes == 0 && swapped,
          fmt("%zu steps: max relative energy drift %.2e, wall escapes %ld, head-on swap %s",
              traj.size() - 1, drift, escapes, swapped ? "exact" : "WRONG")};
}

// --- 3: metric anchors ------------------------------------------------------------

Outcome criterion_metrics() {
  sim::WorldConfig cfg;
  Rng rng(3);
  const auto world = sim::init_world(cfg, rng);
  const auto balls = raster::render(world, cfg, 60);
  const raster::Frame empty(60, 60);
  const double d_empty = eval::centroid_distance(empty, balls);
  const double d_same = eval::centroid_distance(balls, balls);
  raster::Frame a(60, 60), b(60, 60);
  for (int r = -2; r <= 2; ++r) {
    for (int c = -2; c <= 2; ++c) {
      a.at(20 + r, 20 + c) = 1.0;
      b.at(24 + r, 23 + c) = 1.0;
    }
  }
  const double d_offset = eval::centroid_distance(a, b);
  const bool pass = std::abs(d_empty - 3 * 60 * std::sqrt(2.0)) < 1e-9 &&
                    fmt("%.2f", d_empty) == "254.56" && d_same == 0.0 && d_offset == 5.0;
  return {pass, fmt("empty vs 3 balls %.6f (254.56 to 2 d.p.), identical %.1f, (3,4) offset %.17g",
                    d_empty, d_same, d_offset)};
}

// --- 4: null-model MSE --------------------------------------------------------

Outcome criterion_null_mse() {
  const auto cfg = experiment::paper_profile();
  const auto test = experiment::generate_split(cfg.data, 4, raster::Split::test);
  const auto r = eval::evaluate(eval::null_predictor(), test, 10, 20);
  const double m = r.mse_horizon_mean();
  return {m >= 60.0 && m <= 130.0,
          fmt("empty-frame baseline on %d fresh 60x60 sequences: scaled MSE %.2f (reference 93.07, accepted [60, 130])",
              r.n_sequences, m)};
}

// --- 5: oracle equivalences -----------------------------------------------------

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Outcome criterion_oracles() {
  // 1x1 single-channel ConvLSTM against a scalar LSTM per pixel.
  models::ModelSpec s;
  s.kernels = {1};
  s.channels = {1};
  s.height = s.width = 4;
  models::Model<double> m(s);
  Rng rng(105);
  for (std::size_t p = 0; p < m.params().size(); ++p) {
    for (auto& v : m.params().tensor(p).values) v = uniform(rng, -1.5, 1.5);
  }
  auto scalar = [&](const std::string& n) { return m.params().at("l0." + n).values[0]; };
  const char* gates = "ifog";
  double max_diff = 0.0;
  {
    ag::Tape<double> tape;
    const auto bound = models::bind_const(tape, m);
    auto state = models::zero_state(tape, s);
    std::vector<double> h(16, 0.0), c(16, 0.0);
    for (int step = 0; step < 6; ++step) {
      const auto frame = random_tensor({1, 4, 4}, rng);
      const auto out = models::stack_step<double>(s, bound.main, state, tape.input(frame));
      for (int p = 0; p < 16; ++p) {
        double z[4];
        for (int g = 0; g < 4; ++g) {
          const std::string gs(1, gates[g]);
          z[g] = scalar("W_i" + gs) * frame.values[p] + scalar("b_i" + gs) + scalar("W_h" + gs) * h[p] +
                 scalar("b_h" + gs);
        }
        c[p] = sig(z[1]) * c[p] + sig(z[0]) * std::tanh(z[3]);
        h[p] = sig(z[2]) * std::tanh(c[p]);
        max_diff = std::max({max_diff, std::abs(state[0].h.values()[p] - h[p]),
                             std::abs(state[0].c.values()[p] - c[p]), std::abs(out.values()[p] - (2 * h[p] - 1))});
      }
    }
  }

  // Curriculum endpoints and generate(k=1) versus forward_stack, bitwise.
  bool endpoints = true, gen_equal = true;
  raster::GenerateOptions g;
  g.n_sequences = 1;
  g.n_frames = 8;
  g.resolution = 8;
  g.world.seed = 105;
  const auto data = raster::generate(g);
  auto same = [](const auto& x, const auto& y) {
    return std::equal(x.values().begin(), x.values().end(), y.values().begin(), y.values().end());
  };
  for (auto arch : {models::Architecture::convlstm, models::Architecture::seq2seq,
                    models::Architecture::seq2seq_multi, models::Architecture::lstm}) {
    models::ModelSpec t;
    t.arch = arch;
    t.kernels = {3, 3};
    t.channels = {2, 1};
    t.hidden_units = {6, 64};
    t.height = t.width = 8;
    models::Model<double> model(t);
    model.init_params(rng);
    ag::Tape<double> tape;
    const auto bound = models::bind_const(tape, model);
    const auto frames = training::sequence_frames<double>(tape, data.sequences[0], 3, 4);
    for (auto strategy : {training::CurriculumStrategy::tail, training::CurriculumStrategy::head}) {
      endpoints &= same(training::curriculum_loss<double>(bound, frames, 3, 4, 0, strategy),
                        training::teacher_forced_loss<double>(bound, frames, 3, 4));
      endpoints &= same(training::curriculum_loss<double>(bound, frames, 3, 4, 4, strategy),
                        training::blind_loss<double>(bound, frames, 3, 4));
    }
    if (!t.has_decoder()) {
      std::vector<ag::Tensor<double>> ctx;
      for (int i = 0; i < 3; ++i) ctx.emplace_back(ag::Shape{1, 8, 8}, data.sequences[0].normalized<double>(i));
      const auto gen = models::generate<double>(model, ctx, 1);
      const std::vector<ag::Var<double>> ctx_vars(frames.begin(), frames.begin() + 3);
      const auto fs1 = models::forward_stack<double>(bound, ctx_vars);
      gen_equal &= std::equal(gen[0].values.begin(), gen[0].values.end(), fs1.values().begin(), fs1.values().end());
    }
  }
  return {max_diff < 1e-10 && endpoints && gen_equal,
          fmt("1x1 ConvLSTM vs scalar LSTM max |diff| %.2e; curriculum endpoints %s; generate(k=1) %s forward_stack",
              max_diff, endpoints ? "bitwise equal" : "DIFFER", gen_equal ? "bitwise equals" : "DIFFERS from")};
}

// --- 6: schedule ------------------------------------------------------------------

Outcome criterion_schedule() {
  long checked = 0, bad = 0;
  for (int k : {1, 5, 20}) {
    int previous = 0;
    for (int epoch = 0; epoch <= 300; ++epoch) {
      int blocks = 0;
      for (int e = 10; e <= epoch; e += 10) ++blocks;
      const int n = training::curriculum_schedule(epoch, k);
      bad += n != std::min(blocks, k) || n < previous;
      previous = n;
      ++checked;
    }
    bad += training::curriculum_schedule(0, k) != 0 || training::curriculum_schedule(10, k) != 1;
  }
  return {bad == 0, fmt("%ld (epoch, k) pairs, %ld mismatches; epoch 0 -> 0, 10 -> 1, capped at k", checked, bad)};
}

// --- 7, 8, 10: smoke pipeline -----------------------------------------------------

struct SmokeRun {
  experiment::PipelineResult result;
  std::string csv_bytes;
  double train_seconds = 0.0;
};

SmokeRun run_smoke(const fs::path& dir) {
  fs::remove_all(dir);
  auto cfg = experiment::smoke_profile(models::Architecture::convlstm);
  cfg.seed = 2024;
  SmokeRun run;
  const auto t0 = std::chrono::steady_clock::now();
  run.result = experiment::run_pipeline(cfg, dir, [](int epoch, double loss) {
    std::fprintf(stderr, "  smoke epoch %d loss %.5f\n", epoch, loss);
  });
  run.train_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!run.result.csv.empty()) {
    std::ifstream in(run.result.csv, std::ios::binary);
    run.csv_bytes.assign(std::istreambuf_iterator<char>(in), {});
  }
  return run;
}

Outcome criterion_learning(const SmokeRun& run, const fs::path& dir) {
  if (run.result.training.diverged) return {false, "training diverged: " + run.result.training.divergence};
  const auto test = experiment::load_split(dir / "data", raster::Split::test);
  const auto null_report = eval::evaluate(eval::null_predictor(), test, 10, 1);
  const double model = run.result.report.mse_mean.front();
  const double baseline = null_report.mse_mean.front();
  return {model < 0.5 * baseline,
          fmt("smoke ConvLSTM one-step scaled MSE %.3f vs empty-frame %.3f (ratio %.2f, need < 0.50); pipeline %.0f s",
              model, baseline, model / baseline, run.train_seconds)};
}

Outcome criterion_trend(const SmokeRun& run) {
  if (run.result.training.diverged) return {false, "training diverged"};
  const auto& cd = run.result.report.cd_mean;
  const int n = static_cast<int>(cd.size());
  double mx = 0.0, my = 0.0;
  for (int i = 0; i < n; ++i) {
    mx += i + 1;
    my += cd[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0;
  for (int i = 0; i < n; ++i) {
    sxy += (i + 1 - mx) * (cd[i] - my);
    sxx += (i + 1 - mx) * (i + 1 - mx);
  }
  const double slope = sxy / sxx;
  const bool available = std::all_of(run.result.report.cd_available.begin(),
                                     run.result.report.cd_available.end(), [](bool b) { return b; });
  return {n == 20 && cd.back() >= 2 * cd.front() && slope > 0 && available,
          fmt("centroid distance frame 1 %.2f, frame 20 %.2f (ratio %.2f, need >= 2), slope %.3f px/frame",
              cd.front(), cd.back(), cd.back() / cd.front(), slope)};
}

Outcome criterion_reproducible(const SmokeRun& a, const SmokeRun& b) {
  const bool same = !a.csv_bytes.empty() && a.csv_bytes == b.csv_bytes;
  return {same, fmt("two seeded smoke pipelines: report.csv %zu vs %zu bytes, %s", a.csv_bytes.size(),
                    b.csv_bytes.size(), same ? "byte-identical" : "DIFFERENT")};
}

// --- 9: detection -----------------------------------------------------------------

Outcome criterion_detection() {
  sim::WorldConfig cfg;
  Rng rng(109);
  int worlds = 0, exact_count = 0;
  double worst = 0.0;
  while (worlds < 100) {
    const auto s = sim::init_world(cfg, rng);
    bool touching = false;
    for (int i = 0; i < s.n_balls(); ++i) {
      for (int j = i + 1; j < s.n_balls(); ++j) {
        touching |= std::hypot(s.positions[i].x - s.positions[j].x, s.positions[i].y - s.positions[j].y) <
                    2.2 * cfg.radius;
      }
    }
    if (touching) continue;
    ++worlds;
    const auto found = eval::detect_balls(raster::render(s, cfg, 60));
    if (found.size() != 3) continue;
    ++exact_count;
    for (const auto& p : s.positions) {
      const double px = p.x * 60 / cfg.box_side - 0.5, py = p.y * 60 / cfg.box_side - 0.5;
      double best = 1e9;
      for (const auto& c : found) best = std::min(best, std::hypot(c.x - px, c.y - py));
      worst = std::max(worst, best);
    }
  }
  return {exact_count == 100 && worst < 1.0,
          fmt("%d/100 non-touching worlds with exactly 3 detections, worst centre error %.3f px", exact_count, worst)};
}

}  // namespace

int main(int argc, char** argv) {
  fs::path work = fs::temp_directory_path() / "bb_acceptance";
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--work-dir" && i + 1 < argc) {
      work = argv[++i];
    } else if (arg == "--only" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      std::string item;
      while (std::getline(ss, item, ',')) only.insert(std::stoi(item));
    } else {
      std::fprintf(stderr, "usage: acceptance [--work-dir DIR] [--only 1,2,...]\n");
      return 2;
    }
  }
  auto wanted = [&](int c) { return only.empty() || only.count(c) > 0; };

  fs::create_directories(work);
  std::ofstream log(work / "acceptance.log");
  auto emit = [&](const std::string& line) {
    std::printf("%s\n", line.c_str());
    std::fflush(stdout);
    log << line << '\n' << std::flush;
  };

  int failures = 0;
  auto report = [&](int id, const std::function<Outcome()>& f) {
    if (!wanted(id)) return;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = f();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failures += !o.pass;
    emit(fmt("%s criterion %d: %s [%.1f s]", o.pass ? "PASS" : "FAIL", id, o.detail.c_str(), secs));
  };

  emit(fmt("acceptance: %d thread(s), work dir %s", omp_get_max_threads(), work.string().c_str()));
  report(1, criterion_gradients);
  report(2, criterion_physics);
  report(3, criterion_metrics);
  report(4, criterion_null_mse);
  report(5, criterion_oracles);
  report(6, criterion_schedule);

  if (wanted(7) || wanted(8) || wanted(10)) {
    SmokeRun first, second;
    std::string error;
    try {
      first = run_smoke(work / "smoke_a");
      if (wanted(10)) second = run_smoke(work / "smoke_b");
    } catch (const std::exception& e) {
      error = e.what();
    }
    auto guarded = [&](const std::function<Outcome()>& f) {
      return [&, f]() -> Outcome { return error.empty() ? f() : Outcome{false, "pipeline failed: " + error}; };
    };
    report(7, guarded([&] { return criterion_learning(first, work / "smoke_a"); }));
    report(8, guarded([&] { return criterion_trend(first); }));
    report(9, criterion_detection);
    report(10, guarded([&] { return criterion_reproducible(first, second); }));
  } else {
    report(9, criterion_detection);
  }

  emit(fmt("%s: %d criterion(s) failed", failures == 0 ? "ALL PASS" : "FAILURES", failures));
  return failures == 0 ? 0 : 1;
}
