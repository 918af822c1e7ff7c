#include <gtest/gtest.h>

#include <cmath>

#include "bb/error.hpp"
#include "bb/models.hpp"
#include "gradcheck.hpp"

using namespace bb;
using namespace bb::models;
using bb::testing::gradcheck;
using bb::testing::random_tensor;

namespace {

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Independent scalar LSTM: 16 numbers {w_i*, w_h*, b_i*, b_h*} per gate order i, f, o, g.
struct ScalarLstm {
  double wi[4], wh[4], bi[4], bh[4];
  void step(double x, double& h, double& c) const {
    double z[4];
    for (int g = 0; g < 4; ++g) z[g] = wi[g] * x + bi[g] + wh[g] * h + bh[g];
    const double i = sig(z[0]), f = sig(z[1]), o = sig(z[2]), gg = std::tanh(z[3]);
    c = f * c + i * gg;
    h = o * std::tanh(c);
  }
};

ModelSpec toy_conv(Architecture arch) {
  ModelSpec s;
  s.arch = arch;
  s.kernels = {3, 3};
  s.channels = {2, 1};
  s.height = s.width = 6;
  s.context = 3;
  s.horizon = 2;
  return s;
}

ModelSpec toy_lstm() {
  ModelSpec s;
  s.arch = Architecture::lstm;
  s.hidden_units = {5, 16};
  s.height = s.width = 4;
  s.context = 3;
  s.horizon = 2;
  return s;
}

std::vector<ag::Tensor<double>> random_frames(const ModelSpec& s, int n, Rng& rng) {
  std::vector<ag::Tensor<double>> frames;
  for (int i = 0; i < n; ++i) frames.push_back(random_tensor({1, s.height, s.width}, rng));
  return frames;
}

std::vector<ag::Tensor<double>*> all_params(Model<double>& m) {
  std::vector<ag::Tensor<double>*> out;
  for (std::size_t p = 0; p < m.params().size(); ++p) out.push_back(&m.params().tensor(p));
  return out;
}

}  // namespace

TEST(Models, ZeroWeightsCellAnchors) {
  ag::Tape<double> tape;
  ag::Tensor<double> w({3, 2}), u({3, 3}), b({3});
  CellWeights<double> cw;
  for (auto* v : {&cw.w_ii, &cw.w_if, &cw.w_io, &cw.w_ig}) *v = tape.input(w);
  for (auto* v : {&cw.w_hi, &cw.w_hf, &cw.w_ho, &cw.w_hg}) *v = tape.input(u);
  for (auto* v : {&cw.b_ii, &cw.b_if, &cw.b_io, &cw.b_ig, &cw.b_hi, &cw.b_hf, &cw.b_ho, &cw.b_hg}) {
    *v = tape.input(b);
  }
  auto x = tape.constant(ag::Tensor<double>({2}, std::vector<double>{0.3, -0.7}));
  auto zeros = tape.constant(ag::Tensor<double>({3}));
  const auto s = lstm_cell_step<double>(x, {zeros, zeros, false}, cw);
  for (double v : s.h.values()) EXPECT_EQ(v, 0.0);
  for (double v : s.c.values()) EXPECT_EQ(v, 0.0);
  auto cv = tape.constant(ag::Tensor<double>({3}, std::vector<double>{1.0, -2.0, 4.0}));
  const auto s2 = lstm_cell_step<double>(x, {zeros, cv, false}, cw);
  EXPECT_EQ(std::vector<double>(s2.c.values().begin(), s2.c.values().end()),
            (std::vector<double>{0.5, -1.0, 2.0}));
}

TEST(Models, ConvLstm1x1EqualsPerPixelScalarLstm) {
  ModelSpec s;
  s.arch = Architecture::convlstm;
  s.kernels = {1};
  s.channels = {1};
  s.height = s.width = 4;
  Model<double> m(s);
  Rng rng(21);
  m.init_params(rng);
  for (std::size_t p = 0; p < m.params().size(); ++p) {
    for (auto& v : m.params().tensor(p).values) v = uniform(rng, -1.5, 1.5);
  }
  ScalarLstm oracle{};
  const char* gates[] = {"i", "f", "o", "g"};
  for (int g = 0; g < 4; ++g) {
    const std::string gs = gates[g];
    oracle.wi[g] = m.params().at("l0.W_i" + gs).values[0];
    oracle.wh[g] = m.params().at("l0.W_h" + gs).values[0];
    oracle.bi[g] = m.params().at("l0.b_i" + gs).values[0];
    oracle.bh[g] = m.params().at("l0.b_h" + gs).values[0];
  }
  const auto frames = random_frames(s, 6, rng);
  ag::Tape<double> tape;
  auto bound = bind_const(tape, m);
  auto state = zero_state(tape, s);
  std::vector<double> h(16, 0.0), c(16, 0.0);
  for (const auto& f : frames) {
    auto out = stack_step<double>(s, bound.main, state, tape.input(f));
    for (int p = 0; p < 16; ++p) {
      oracle.step(f.values[p], h[p], c[p]);
      ASSERT_NEAR(out.values()[p], 2 * h[p] - 1, 1e-10);
      ASSERT_NEAR(state[0].c.values()[p], c[p], 1e-10);
    }
  }
}

TEST(Models, ConvSpatialShapePreserved) {
  for (int k : {3, 5, 7}) {
    ModelSpec s;
    s.arch = Architecture::convlstm;
    s.kernels = {k, k};
    s.channels = {3, 1};
    s.height = 9;
    s.width = 11;
    Model<double> m(s);
    Rng rng(k);
    m.init_params(rng);
    ag::Tape<double> tape;
    auto bound = bind_const(tape, m);
    auto state = zero_state(tape, s);
    auto f = random_tensor({1, 9, 11}, rng);
    auto out = stack_step<double>(s, bound.main, state, tape.input(f));
    EXPECT_EQ(out.shape(), (ag::Shape{1, 9, 11}));
    EXPECT_EQ(state[0].h.shape(), (ag::Shape{3, 9, 11}));
  }
}

TEST(Models, GatesAndCellBounded) {
  const auto s = toy_conv(Architecture::convlstm);
  Model<double> m(s);
  Rng rng(22);
  m.init_params(rng);
  const auto frames = random_frames(s, 12, rng);
  ag::Tape<double> tape;
  auto bound = bind_const(tape, m);
  auto state = zero_state(tape, s);
  int n = 0;
  for (const auto& f : frames) {
    stack_step<double>(s, bound.main, state, tape.input(f));
    ++n;
    for (const auto& layer : state) {
      for (double v : layer.c.values()) ASSERT_LT(std::abs(v), n);
      for (double v : layer.h.values()) ASSERT_LT(std::abs(v), 1.0);
    }
  }
}

TEST(Models, ZeroParamsGiveBlackFrame) {
  ModelSpec s = toy_conv(Architecture::convlstm);
  s.kernels = {3};
  s.channels = {1};
  Model<double> m(s);  // all zeros
  Rng rng(23);
  const auto frames = random_frames(s, 3, rng);
  const auto out = generate<double>(m, frames, 1);
  for (double v : out[0].values) EXPECT_EQ(v, -1.0);
}

TEST(Models, IdenticalContextPermutationInvariant) {
  const auto s = toy_conv(Architecture::convlstm);
  Model<double> m(s);
  Rng rng(24);
  m.init_params(rng);
  const auto f = random_tensor({1, 6, 6}, rng);
  std::vector<ag::Tensor<double>> ctx(4, f);
  const auto a = generate<double>(m, ctx, 1);
  std::reverse(ctx.begin(), ctx.end());
  const auto b = generate<double>(m, ctx, 1);
  EXPECT_EQ(a[0].values, b[0].values);
}

TEST(Models, GenerateK1EqualsForwardStackBitwise) {
  for (const auto& s : {toy_conv(Architecture::convlstm), toy_lstm()}) {
    Model<float> m(s);
    Rng rng(25);
    m.init_params(rng);
    std::vector<ag::Tensor<float>> ctx;
    for (int i = 0; i < 4; ++i) {
      ag::Tensor<float> t({1, s.height, s.width});
      for (auto& v : t.values) v = static_cast<float>(uniform(rng, -1, 1));
      ctx.push_back(t);
    }
    const auto gen = generate<float>(m, ctx, 1);
    ag::Tape<float> tape;
    auto bound = bind_const(tape, m);
    std::vector<ag::Var<float>> vars;
    for (const auto& c : ctx) vars.push_back(tape.input(c));
    const auto fs = forward_stack<float>(bound, vars);
    EXPECT_EQ(gen[0].values, std::vector<float>(fs.values().begin(), fs.values().end()));
  }
}

TEST(Models, RolloutLengthsAndDeterminism) {
  for (auto arch : {Architecture::convlstm, Architecture::seq2seq, Architecture::seq2seq_multi}) {
    const auto s = toy_conv(arch);
    Model<double> m(s);
    Rng rng(26);
    m.init_params(rng);
    const auto ctx = random_frames(s, 10, rng);
    const auto a = generate<double>(m, ctx, 20);
    const auto b = generate<double>(m, ctx, 20);
    ASSERT_EQ(a.size(), 20u);
    for (int i = 0; i < 20; ++i) EXPECT_EQ(a[i].values, b[i].values);
  }
}

TEST(Models, Seq2SeqDecoderStartsFromEncoderStateAndLastFrame) {
  const auto s = toy_conv(Architecture::seq2seq);
  Model<double> m(s);
  Rng rng(27);
  m.init_params(rng);
  const auto ctx = random_frames(s, 4, rng);
  ag::Tape<double> tape;
  auto bound = bind_const(tape, m);
  std::vector<ag::Var<double>> vars;
  for (const auto& c : ctx) vars.push_back(tape.input(c));
  const auto out = seq2seq_forward<double>(bound, vars, 1);
  // Oracle: encode, copy states, feed the last context frame to the decoder.
  auto state = encode<double>(bound, vars);
  auto first = stack_step<double>(s, bound.decoder, state, vars.back());
  EXPECT_EQ(std::vector<double>(out[0].values().begin(), out[0].values().end()),
            std::vector<double>(first.values().begin(), first.values().end()));
}

TEST(Models, ZeroEncoderGivesZeroDecoderState) {
  const auto s = toy_conv(Architecture::seq2seq);
  Model<double> m(s);  // zero parameters
  Rng rng(28);
  const auto ctx = random_frames(s, 3, rng);
  ag::Tape<double> tape;
  auto bound = bind_const(tape, m);
  std::vector<ag::Var<double>> vars;
  for (const auto& c : ctx) vars.push_back(tape.input(c));
  const auto state = encode<double>(bound, vars);
  for (const auto& layer : state) {
    for (double v : layer.h.values()) EXPECT_EQ(v, 0.0);
    for (double v : layer.c.values()) EXPECT_EQ(v, 0.0);
  }
}

TEST(Models, MultiDecoderReconstructsContextLength) {
  const auto s = toy_conv(Architecture::seq2seq_multi);
  Model<double> m(s);
  Rng rng(29);
  m.init_params(rng);
  const auto ctx = random_frames(s, 5, rng);
  ag::Tape<double> tape;
  auto bound = bind_const(tape, m);
  std::vector<ag::Var<double>> vars;
  for (const auto& c : ctx) vars.push_back(tape.input(c));
  const auto r = multidecoder_forward<double>(bound, vars, 3);
  EXPECT_EQ(r.future.size(), 3u);
  EXPECT_EQ(r.reconstruction.size(), 5u);
  // Future decoder matches plain seq2seq decoding with the same weights.
  const auto plain = seq2seq_forward<double>(bound, vars, 3);
  for (int i = 0; i < 3; ++i) {
    EXPECT_EQ(std::vector<double>(r.future[i].values().begin(), r.future[i].values().end()),
              std::vector<double>(plain[i].values().begin(), plain[i].values().end()));
  }
}

TEST(Models, ParameterCounts) {
  const auto conv = best_spec(Architecture::convlstm, 60);
  const auto lstm = best_spec(Architecture::lstm, 60);
  EXPECT_LT(conv.parameter_count(), lstm.parameter_count());
  for (const auto& s : {conv, lstm, best_spec(Architecture::seq2seq, 60),
                        best_spec(Architecture::seq2seq_multi, 60)}) {
    Model<float> m(s);
    EXPECT_EQ(m.params().n_values(), s.parameter_count()) << to_string(s.arch);
  }
  // Oracle for one ConvLSTM layer: 4 gates x (K_in + K_h + 2 biases).
  ModelSpec one;
  one.kernels = {3};
  one.channels = {1};
  EXPECT_EQ(one.parameter_count(), 4u * (9 + 9 + 2));
}

TEST(Models, InitForgetBiasOne) {
  Model<float> m(toy_conv(Architecture::convlstm));
  Rng rng(30);
  m.init_params(rng);
  for (std::size_t p = 0; p < m.params().size(); ++p) {
    const auto& name = m.params().name(p);
    const auto leaf = name.substr(name.rfind('.') + 1);
    const auto& t = m.params().tensor(p);
    if (leaf == "b_if") {
      for (float v : t.values) EXPECT_EQ(v, 1.0f);
    } else if (leaf[0] == 'b') {
      for (float v : t.values) EXPECT_EQ(v, 0.0f);
    } else {
      std::size_t fan_in = 1;
      for (std::size_t d = 1; d < t.shape.size(); ++d) fan_in *= t.shape[d];
      for (float v : t.values) EXPECT_LE(std::abs(v), 1.0 / std::sqrt(static_cast<double>(fan_in)));
    }
  }
}

TEST(Models, SpecValidationAndJson) {
  ModelSpec s;
  s.channels = {10, 2};
  s.kernels = {3, 3};
  EXPECT_THROW(s.validate(), ConfigError);
  s.channels = {10, 1};
  s.kernels = {3, 4};
  EXPECT_THROW(s.validate(), ConfigError);
  ModelSpec l;
  l.arch = Architecture::lstm;
  l.hidden_units = {10, 100};
  EXPECT_THROW(l.validate(), ConfigError);
  const auto multi = best_spec(Architecture::seq2seq_multi, 30);
  const auto back = ModelSpec::from_json(multi.to_json());
  EXPECT_EQ(back.arch, multi.arch);
  EXPECT_EQ(back.kernels, multi.kernels);
  EXPECT_EQ(back.channels, multi.channels);
  EXPECT_EQ(architecture_from_string("seq2seq-multi"), Architecture::seq2seq_multi);
  EXPECT_THROW(architecture_from_string("gru"), ConfigError);
}

TEST(Models, FrameShapeMismatchThrows) {
  const auto s = toy_conv(Architecture::convlstm);
  Model<double> m(s);
  ag::Tape<double> tape;
  auto bound = bind_const(tape, m);
  auto state = zero_state(tape, s);
  EXPECT_THROW(stack_step<double>(s, bound.main, state, tape.constant(ag::Tensor<double>({1, 5, 6}))),
               ShapeError);
}

// Finite-difference oracle on cells and on each architecture's one-step loss.

TEST(ModelsFD, LstmCell) {
  Rng rng(31);
  std::vector<ag::Tensor<double>> w;
  for (int g = 0; g < 4; ++g) w.push_back(random_tensor({3, 4}, rng));
  for (int g = 0; g < 4; ++g) w.push_back(random_tensor({3, 3}, rng));
  for (int g = 0; g < 8; ++g) w.push_back(random_tensor({3}, rng));
  auto x = random_tensor({4}, rng), h = random_tensor({3}, rng), c = random_tensor({3}, rng);
  std::vector<ag::Tensor<double>*> ps{&x, &h, &c};
  for (auto& t : w) ps.push_back(&t);
  const auto r = gradcheck(ps, [&](ag::Tape<double>& tape) {
    CellWeights<double> cw;
    ag::Var<double>* slots[] = {&cw.w_ii, &cw.w_if, &cw.w_io, &cw.w_ig, &cw.w_hi, &cw.w_hf,
                                &cw.w_ho, &cw.w_hg, &cw.b_ii, &cw.b_if, &cw.b_io, &cw.b_ig,
                                &cw.b_hi, &cw.b_hf, &cw.b_ho, &cw.b_hg};
    for (int i = 0; i < 16; ++i) *slots[i] = tape.parameter(w[i]);
    const auto s = lstm_cell_step<double>(tape.parameter(x), {tape.parameter(h), tape.parameter(c), false}, cw);
    return ag::add(ag::sum(s.h), ag::scale(ag::sum(ag::hadamard(s.c, s.c)), 0.5));
  });
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(ModelsFD, ConvLstmCell) {
  Rng rng(32);
  std::vector<ag::Tensor<double>> w;
  for (int g = 0; g < 4; ++g) w.push_back(random_tensor({2, 1, 3, 3}, rng));
  for (int g = 0; g < 4; ++g) w.push_back(random_tensor({2, 2, 3, 3}, rng));
  for (int g = 0; g < 8; ++g) w.push_back(random_tensor({2}, rng));
  auto x = random_tensor({1, 5, 5}, rng), h = random_tensor({2, 5, 5}, rng), c = random_tensor({2, 5, 5}, rng);
  std::vector<ag::Tensor<double>*> ps{&x, &h, &c};
  for (auto& t : w) ps.push_back(&t);
  const auto r = gradcheck(ps, [&](ag::Tape<double>& tape) {
    CellWeights<double> cw;
    ag::Var<double>* slots[] = {&cw.w_ii, &cw.w_if, &cw.w_io, &cw.w_ig, &cw.w_hi, &cw.w_hf,
                                &cw.w_ho, &cw.w_hg, &cw.b_ii, &cw.b_if, &cw.b_io, &cw.b_ig,
                                &cw.b_hi, &cw.b_hf, &cw.b_ho, &cw.b_hg};
    for (int i = 0; i < 16; ++i) *slots[i] = tape.parameter(w[i]);
    const auto s = convlstm_cell_step<double>(tape.parameter(x), {tape.parameter(h), tape.parameter(c), false}, cw);
    return ag::add(ag::sum(s.h), ag::scale(ag::sum(ag::hadamard(s.c, s.c)), 0.5));
  });
  EXPECT_LT(r.max_rel_error, 1e-4);
}

class ArchitectureFD : public ::testing::TestWithParam<Architecture> {};

TEST_P(ArchitectureFD, OneStepLossMatchesFiniteDifferences) {
  const auto s = GetParam() == Architecture::lstm ? toy_lstm() : toy_conv(GetParam());
  Model<double> m(s);
  Rng rng(33);
  m.init_params(rng);
  const auto frames = random_frames(s, s.context + 1, rng);
  const auto r = gradcheck(all_params(m), [&](ag::Tape<double>& tape) {
    auto bound = bind(tape, m);
    std::vector<ag::Var<double>> vars;
    for (const auto& f : frames) vars.push_back(tape.input(f));
    const auto out = unroll<double>(bound, vars, s.context, 1, FeedPlan::forced(1, s.context));
    auto loss = ag::mse(out.future[0], vars.back());
    if (!out.reconstruction.empty()) {
      for (int i = 0; i < s.context; ++i) {
        loss = ag::add(loss, ag::mse(out.reconstruction[i], vars[s.context - 1 - i]));
      }
    }
    return loss;
  });
  EXPECT_LT(r.max_rel_error, 1e-4) << to_string(s.arch);
  EXPECT_EQ(r.checked, s.parameter_count());
}

INSTANTIATE_TEST_SUITE_P(All, ArchitectureFD,
                         ::testing::Values(Architecture::lstm, Architecture::convlstm,
                                           Architecture::seq2seq, Architecture::seq2seq_multi),
                         [](const auto& info) {
                           auto n = to_string(info.param);
                           std::replace(n.begin(), n.end(), '-', '_');
                           return n;
                         });

TEST(Models, ConvertRoundTrip) {
  Model<double> m(toy_conv(Architecture::convlstm));
  Rng rng(34);
  m.init_params(rng);
  const auto f = convert<float>(m);
  const auto d = convert<double>(f);
  for (std::size_t p = 0; p < m.params().size(); ++p) {
    for (std::size_t i = 0; i < m.params().tensor(p).size(); ++i) {
      EXPECT_EQ(d.params().tensor(p).values[i], static_cast<double>(static_cast<float>(m.params().tensor(p).values[i])));
    }
  }
}
