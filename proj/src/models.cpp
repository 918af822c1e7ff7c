#include "bb/models.hpp"

#include <cmath>

#include "bb/error.hpp"

namespace bb::models {

std::string to_string(Architecture arch) {
  switch (arch) {
    case Architecture::lstm: return "lstm";
    case Architecture::convlstm: return "convlstm";
    case Architecture::seq2seq: return "seq2seq";
    case Architecture::seq2seq_multi: return "seq2seq_multi";
  }
  return "convlstm";
}

Architecture architecture_from_string(const std::string& name) {
  if (name == "lstm") return Architecture::lstm;
  if (name == "convlstm") return Architecture::convlstm;
  if (name == "seq2seq") return Architecture::seq2seq;
  if (name == "seq2seq_multi" || name == "seq2seq-multi") return Architecture::seq2seq_multi;
  throw ConfigError("unknown architecture '" + name +
                    "' (expected lstm, convlstm, seq2seq or seq2seq-multi)");
}

int ModelSpec::n_layers() const {
  return static_cast<int>(convolutional() ? channels.size() : hidden_units.size());
}

namespace {

int stack_count(Architecture arch) {
  switch (arch) {
    case Architecture::seq2seq: return 2;
    case Architecture::seq2seq_multi: return 3;
    default: return 1;
  }
}

// (input size, hidden size, kernel) per layer; kernel is 0 for dense layers.
struct LayerDims {
  int in;
  int hidden;
  int kernel;
};

std::vector<LayerDims> layer_dims(const ModelSpec& spec) {
  std::vector<LayerDims> dims;
  if (spec.convolutional()) {
    for (std::size_t l = 0; l < spec.channels.size(); ++l) {
      dims.push_back({l == 0 ? 1 : spec.channels[l - 1], spec.channels[l], spec.kernels[l]});
    }
  } else {
    for (std::size_t l = 0; l < spec.hidden_units.size(); ++l) {
      dims.push_back({l == 0 ? spec.frame_size() : spec.hidden_units[l - 1], spec.hidden_units[l], 0});
    }
  }
  return dims;
}

constexpr const char* kGates[] = {"i", "f", "o", "g"};

}  // namespace

std::size_t ModelSpec::parameter_count() const {
  std::size_t per_stack = 0;
  for (const auto& d : layer_dims(*this)) {
    const std::size_t k2 = d.kernel > 0 ? static_cast<std::size_t>(d.kernel) * d.kernel : 1;
    const std::size_t h = d.hidden;
    per_stack += 4 * (h * d.in * k2 + h * h * k2 + 2 * h);
  }
  return per_stack * stack_count(arch);
}

void ModelSpec::validate() const {
  if (height < 1 || width < 1) throw ConfigError("model frame size must be positive");
  if (context < 1) throw ConfigError("context must be >= 1");
  if (horizon < 1) throw ConfigError("horizon must be >= 1");
  if (convolutional()) {
    if (channels.empty()) throw ConfigError("convolutional model needs at least one layer");
    if (kernels.size() != channels.size()) {
      throw ConfigError("kernels and channels must have one entry per layer (" +
                        std::to_string(kernels.size()) + " vs " + std::to_string(channels.size()) +
                        ")");
    }
    for (int k : kernels) {
      if (k < 1 || k % 2 == 0) throw ConfigError("kernel sizes must be odd and positive");
    }
    for (int c : channels) {
      if (c < 1) throw ConfigError("channel counts must be positive");
    }
    if (channels.back() != 1) throw ConfigError("last layer must emit 1 channel");
  } else {
    if (hidden_units.empty()) throw ConfigError("lstm model needs at least one layer");
    for (int u : hidden_units) {
      if (u < 1) throw ConfigError("hidden units must be positive");
    }
    if (hidden_units.back() != frame_size()) {
      throw ConfigError("last lstm layer must have height*width = " +
                        std::to_string(frame_size()) + " units");
    }
  }
}

nlohmann::json ModelSpec::to_json() const {
  nlohmann::json j{{"architecture", to_string(arch)},
                   {"height", height},
                   {"width", width},
                   {"context", context},
                   {"horizon", horizon}};
  if (convolutional()) {
    j["kernels"] = kernels;
    j["channels"] = channels;
  } else {
    j["hidden_units"] = hidden_units;
  }
  return j;
}

ModelSpec ModelSpec::from_json(const nlohmann::json& j) {
  ModelSpec spec;
  try {
    spec.arch = architecture_from_string(j.at("architecture").get<std::string>());
    spec.height = j.value("height", spec.height);
    spec.width = j.value("width", spec.width);
    spec.context = j.value("context", spec.context);
    spec.horizon = j.value("horizon", spec.horizon);
    if (j.contains("kernels")) spec.kernels = j["kernels"].get<std::vector<int>>();
    if (j.contains("channels")) spec.channels = j["channels"].get<std::vector<int>>();
    if (j.contains("hidden_units")) spec.hidden_units = j["hidden_units"].get<std::vector<int>>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed model spec: ") + e.what());
  }
  if (!spec.convolutional() && !j.contains("hidden_units")) {
    spec.hidden_units.back() = spec.frame_size();
  }
  spec.validate();
  return spec;
}

ModelSpec best_spec(Architecture arch, int resolution) {
  ModelSpec spec;
  spec.arch = arch;
  spec.height = spec.width = resolution;
  if (arch == Architecture::seq2seq_multi) {
    spec.kernels = {7, 5, 3, 3, 3};
    spec.channels = {10, 10, 10, 10, 1};
  }
  spec.hidden_units.back() = resolution * resolution;
  return spec;
}

std::vector<std::string> stack_names(Architecture arch) {
  switch (arch) {
    case Architecture::seq2seq: return {"enc", "dec"};
    case Architecture::seq2seq_multi: return {"enc", "dec", "rec"};
    default: return {""};
  }
}

namespace {

std::string param_name(const std::string& stack, int layer, const std::string& leaf) {
  std::string name = stack.empty() ? "" : stack + ".";
  return name + "l" + std::to_string(layer) + "." + leaf;
}

// Pre-activation of one gate: W_i x + b_i + W_h h + b_h.
template <typename T, typename Affine>
ag::Var<T> gate(Affine affine, ag::Var<T> x, const CellState<T>& prev, ag::Var<T> w_i,
                ag::Var<T> b_i, ag::Var<T> w_h, ag::Var<T> b_h) {
  ag::Var<T> z = affine(w_i, x, b_i);
  if (prev.zero) {
    // W_h * 0 vanishes; the recurrent bias still applies.
    return affine.bias_only(z, b_h);
  }
  return ag::add(z, affine(w_h, prev.h, b_h));
}

template <typename T, typename Affine>
CellState<T> cell_step(Affine affine, ag::Var<T> x, const CellState<T>& prev,
                       const CellWeights<T>& w) {
  ag::Var<T> i = ag::sigmoid(gate<T>(affine, x, prev, w.w_ii, w.b_ii, w.w_hi, w.b_hi));
  ag::Var<T> f = ag::sigmoid(gate<T>(affine, x, prev, w.w_if, w.b_if, w.w_hf, w.b_hf));
  ag::Var<T> o = ag::sigmoid(gate<T>(affine, x, prev, w.w_io, w.b_io, w.w_ho, w.b_ho));
  ag::Var<T> g = ag::tanh(gate<T>(affine, x, prev, w.w_ig, w.b_ig, w.w_hg, w.b_hg));
  ag::Var<T> ig = ag::hadamard(i, g);
  ag::Var<T> c = prev.zero ? ig : ag::add(ag::hadamard(f, prev.c), ig);
  ag::Var<T> h = ag::hadamard(o, ag::tanh(c));
  return {h, c, false};
}

template <typename T>
struct DenseAffine {
  ag::Var<T> operator()(ag::Var<T> w, ag::Var<T> x, ag::Var<T> b) const {
    return ag::add(ag::matvec(w, x), b);
  }
  ag::Var<T> bias_only(ag::Var<T> z, ag::Var<T> b) const { return ag::add(z, b); }
};

template <typename T>
struct ConvAffine {
  ag::Var<T> operator()(ag::Var<T> w, ag::Var<T> x, ag::Var<T> b) const {
    return ag::add_channel_bias(ag::conv2d(w, x), b);
  }
  ag::Var<T> bias_only(ag::Var<T> z, ag::Var<T> b) const { return ag::add_channel_bias(z, b); }
};

template <typename T>
void check_state(ag::Var<T> x, const CellState<T>& prev, const CellWeights<T>& w, bool conv) {
  const auto& ws = w.w_ii.shape();
  const auto& hs = w.w_hi.shape();
  const std::size_t rank = conv ? 3 : 1;
  if (x.shape().size() != rank || ws.size() != (conv ? 4u : 2u) || ws[1] != x.shape()[0]) {
    throw ShapeError(std::string(conv ? "convlstm" : "lstm") + "_cell_step: input " +
                     ag::to_string(x.shape()) + " incompatible with W_ii " + ag::to_string(ws));
  }
  if (hs[0] != hs[1]) {
    throw ShapeError("recurrent weights must be square in the hidden dimension, got " +
                     ag::to_string(hs));
  }
  if (!prev.zero && (prev.h.shape()[0] != hs[0] || prev.c.shape() != prev.h.shape())) {
    throw ShapeError("cell state " + ag::to_string(prev.h.shape()) +
                     " incompatible with W_hi " + ag::to_string(hs));
  }
}

}  // namespace

template <typename T>
CellState<T> lstm_cell_step(ag::Var<T> x, const CellState<T>& prev, const CellWeights<T>& w) {
  check_state(x, prev, w, false);
  return cell_step<T>(DenseAffine<T>{}, x, prev, w);
}

template <typename T>
CellState<T> convlstm_cell_step(ag::Var<T> x, const CellState<T>& prev, const CellWeights<T>& w) {
  check_state(x, prev, w, true);
  return cell_step<T>(ConvAffine<T>{}, x, prev, w);
}

// --- Model -------------------------------------------------------------------

template <typename T>
Model<T>::Model(ModelSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  const auto dims = layer_dims(spec_);
  for (const auto& stack : stack_names(spec_.arch)) {
    for (std::size_t l = 0; l < dims.size(); ++l) {
      const auto& d = dims[l];
      const int layer = static_cast<int>(l);
      for (const char* g : kGates) {
        const std::string gs = g;
        if (d.kernel > 0) {
          params_.add(param_name(stack, layer, "W_i" + gs), {d.hidden, d.in, d.kernel, d.kernel});
          params_.add(param_name(stack, layer, "W_h" + gs),
                      {d.hidden, d.hidden, d.kernel, d.kernel});
        } else {
          params_.add(param_name(stack, layer, "W_i" + gs), {d.hidden, d.in});
          params_.add(param_name(stack, layer, "W_h" + gs), {d.hidden, d.hidden});
        }
        params_.add(param_name(stack, layer, "b_i" + gs), {d.hidden});
        params_.add(param_name(stack, layer, "b_h" + gs), {d.hidden});
      }
    }
  }
}

template <typename T>
void Model<T>::init_params(Rng& rng) {
  for (std::size_t p = 0; p < params_.size(); ++p) {
    auto& t = params_.tensor(p);
    const std::string& name = params_.name(p);
    const std::string leaf = name.substr(name.rfind('.') + 1);
    if (leaf[0] == 'b') {
      const T value = leaf == "b_if" ? T{1} : T{0};
      std::fill(t.values.begin(), t.values.end(), value);
      continue;
    }
    std::size_t fan_in = 1;
    for (std::size_t d = 1; d < t.shape.size(); ++d) fan_in *= t.shape[d];
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (T& v : t.values) v = static_cast<T>(uniform(rng, -bound, bound));
  }
}

namespace {

template <typename T, typename Binder>
std::vector<CellWeights<T>> bind_stack(const ModelSpec& spec, const std::string& stack,
                                       Binder bind_one) {
  std::vector<CellWeights<T>> layers;
  for (int l = 0; l < spec.n_layers(); ++l) {
    auto p = [&](const char* leaf) { return bind_one(param_name(stack, l, leaf)); };
    layers.push_back({p("W_ii"), p("W_if"), p("W_io"), p("W_ig"), p("W_hi"), p("W_hf"),
                      p("W_ho"), p("W_hg"), p("b_ii"), p("b_if"), p("b_io"), p("b_ig"),
                      p("b_hi"), p("b_hf"), p("b_ho"), p("b_hg")});
  }
  return layers;
}

template <typename T, typename Binder>
BoundModel<T> bind_with(ag::Tape<T>& tape, const ModelSpec& spec, Binder bind_one) {
  BoundModel<T> bound;
  bound.spec = &spec;
  bound.tape = &tape;
  const auto names = stack_names(spec.arch);
  bound.main = bind_stack<T>(spec, names[0], bind_one);
  if (names.size() > 1) bound.decoder = bind_stack<T>(spec, names[1], bind_one);
  if (names.size() > 2) bound.reconstruction = bind_stack<T>(spec, names[2], bind_one);
  return bound;
}

}  // namespace

template <typename T>
BoundModel<T> bind(ag::Tape<T>& tape, Model<T>& model) {
  return bind_with<T>(tape, model.spec(), [&](const std::string& name) {
    return tape.parameter(model.params().at(name));
  });
}

template <typename T>
BoundModel<T> bind_const(ag::Tape<T>& tape, const Model<T>& model) {
  return bind_with<T>(tape, model.spec(), [&](const std::string& name) {
    return tape.input(model.params().at(name));
  });
}

template <typename T>
StackState<T> zero_state(ag::Tape<T>& tape, const ModelSpec& spec) {
  StackState<T> state;
  for (const auto& d : layer_dims(spec)) {
    const ag::Shape shape = d.kernel > 0 ? ag::Shape{d.hidden, spec.height, spec.width}
                                         : ag::Shape{d.hidden};
    ag::Var<T> zeros = tape.constant(ag::Tensor<T>(shape));
    state.push_back({zeros, zeros, true});
  }
  return state;
}

template <typename T>
ag::Var<T> stack_step(const ModelSpec& spec, std::span<const CellWeights<T>> stack,
                      StackState<T>& state, ag::Var<T> frame) {
  const ag::Shape frame_shape{1, spec.height, spec.width};
  if (frame.shape() != frame_shape) {
    throw ShapeError("stack_step: frame " + ag::to_string(frame.shape()) + " but model expects " +
                     ag::to_string(frame_shape));
  }
  if (stack.size() != state.size()) throw ShapeError("stack_step: state/layer count mismatch");
  ag::Var<T> x = spec.convolutional() ? frame : ag::reshape(frame, {spec.frame_size()});
  for (std::size_t l = 0; l < stack.size(); ++l) {
    state[l] = spec.convolutional() ? convlstm_cell_step(x, state[l], stack[l])
                                    : lstm_cell_step(x, state[l], stack[l]);
    x = state[l].h;
  }
  // The top layer's h is read as an intensity in [0, 1] view: y = 2h - 1.
  x = ag::affine(x, T{2}, T{-1});
  return spec.convolutional() ? x : ag::reshape(x, frame_shape);
}

template <typename T>
StackState<T> encode(const BoundModel<T>& model, std::span<const ag::Var<T>> frames) {
  StackState<T> state = zero_state(*model.tape, *model.spec);
  for (const auto& f : frames) stack_step<T>(*model.spec, model.main, state, f);
  return state;
}

FeedPlan FeedPlan::blind(int horizon, int context) {
  return {std::vector<bool>(horizon, true), std::vector<bool>(context, true)};
}

FeedPlan FeedPlan::forced(int horizon, int context) {
  return {std::vector<bool>(horizon, false), std::vector<bool>(context, false)};
}

namespace {

// Steps 2..k of a decoder or single stack. `first` is the output of step 1;
// ground-truth input for step i + 1 is targets[i - 1].
template <typename T>
std::vector<ag::Var<T>> continue_rollout(const ModelSpec& spec,
                                         std::span<const CellWeights<T>> stack,
                                         StackState<T>& state, ag::Var<T> first, int steps,
                                         const std::vector<bool>& self_fed,
                                         const std::vector<ag::Var<T>>& truth) {
  std::vector<ag::Var<T>> out{first};
  for (int i = 1; i < steps; ++i) {
    ag::Var<T> input;
    if (self_fed[i]) {
      input = out.back();
    } else {
      if (static_cast<std::size_t>(i) > truth.size()) {
        throw ShapeError("rollout: plan reads ground-truth frame " + std::to_string(i) +
                         " but only " + std::to_string(truth.size()) + " were given");
      }
      input = truth[i - 1];
    }
    out.push_back(stack_step<T>(spec, stack, state, input));
  }
  return out;
}

}  // namespace

template <typename T>
Rollout<T> unroll(const BoundModel<T>& model, std::span<const ag::Var<T>> frames, int context,
                  int horizon, const FeedPlan& plan) {
  const ModelSpec& spec = *model.spec;
  if (context < 1 || horizon < 1) throw ConfigError("unroll: context and horizon must be >= 1");
  if (frames.size() < static_cast<std::size_t>(context)) {
    throw ShapeError("unroll: need " + std::to_string(context) + " context frames, got " +
                     std::to_string(frames.size()));
  }
  if (plan.future.size() != static_cast<std::size_t>(horizon)) {
    throw ShapeError("unroll: feed plan length differs from horizon");
  }
  const auto ctx = frames.subspan(0, context);
  // Ground truth for future frames t, t+1, ...
  std::vector<ag::Var<T>> future_truth(frames.begin() + context, frames.end());

  Rollout<T> result;
  if (!spec.has_decoder()) {
    StackState<T> state = zero_state(*model.tape, spec);
    ag::Var<T> out;
    for (const auto& f : ctx) out = stack_step<T>(spec, model.main, state, f);
    result.future =
        continue_rollout<T>(spec, model.main, state, out, horizon, plan.future, future_truth);
    return result;
  }

  const StackState<T> encoded = encode(model, ctx);
  StackState<T> dec_state = encoded;
  ag::Var<T> first = stack_step<T>(spec, model.decoder, dec_state, ctx.back());
  result.future =
      continue_rollout<T>(spec, model.decoder, dec_state, first, horizon, plan.future, future_truth);

  if (spec.arch == Architecture::seq2seq_multi) {
    if (plan.reconstruction.size() != static_cast<std::size_t>(context)) {
      throw ShapeError("unroll: reconstruction plan length differs from context");
    }
    std::vector<ag::Var<T>> reversed(ctx.rbegin(), ctx.rend());
    StackState<T> rec_state = encoded;
    ag::Var<T> black =
        model.tape->constant(ag::Tensor<T>({1, spec.height, spec.width}, T{-1}));
    ag::Var<T> rec_first = stack_step<T>(spec, model.reconstruction, rec_state, black);
    result.reconstruction = continue_rollout<T>(spec, model.reconstruction, rec_state, rec_first,
                                                context, plan.reconstruction, reversed);
  }
  return result;
}

template <typename T>
ag::Var<T> forward_stack(const BoundModel<T>& model, std::span<const ag::Var<T>> context) {
  if (model.spec->has_decoder()) {
    throw ConfigError("forward_stack applies to lstm and convlstm models");
  }
  const int t = static_cast<int>(context.size());
  return unroll(model, context, t, 1, FeedPlan::blind(1, t)).future.front();
}

template <typename T>
std::vector<ag::Var<T>> seq2seq_forward(const BoundModel<T>& model,
                                        std::span<const ag::Var<T>> context, int horizon) {
  if (!model.spec->has_decoder()) throw ConfigError("seq2seq_forward needs an encoder-decoder model");
  const int t = static_cast<int>(context.size());
  return unroll(model, context, t, horizon, FeedPlan::blind(horizon, t)).future;
}

template <typename T>
Rollout<T> multidecoder_forward(const BoundModel<T>& model, std::span<const ag::Var<T>> context,
                                int horizon) {
  if (model.spec->arch != Architecture::seq2seq_multi) {
    throw ConfigError("multidecoder_forward needs a seq2seq-multi model");
  }
  const int t = static_cast<int>(context.size());
  return unroll(model, context, t, horizon, FeedPlan::blind(horizon, t));
}

template <typename T>
std::vector<ag::Tensor<T>> generate(const Model<T>& model,
                                    std::span<const ag::Tensor<T>> context, int horizon) {
  if (horizon < 1) throw ConfigError("generate: horizon must be >= 1");
  ag::Tape<T> tape;
  BoundModel<T> bound = bind_const(tape, model);
  std::vector<ag::Var<T>> frames;
  for (const auto& f : context) frames.push_back(tape.input(f));
  const int t = static_cast<int>(frames.size());
  auto rollout = unroll<T>(bound, frames, t, horizon, FeedPlan::blind(horizon, t));
  std::vector<ag::Tensor<T>> out;
  for (const auto& v : rollout.future) {
    out.emplace_back(v.shape(), std::vector<T>(v.values().begin(), v.values().end()));
  }
  return out;
}

template <typename To, typename From>
Model<To> convert(const Model<From>& model) {
  Model<To> out(model.spec());
  for (std::size_t p = 0; p < model.params().size(); ++p) {
    const auto& src = model.params().tensor(p).values;
    auto& dst = out.params().tensor(p).values;
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<To>(src[i]);
  }
  return out;
}

#define BB_INSTANTIATE_MODELS(T)                                                                 \
  template CellState<T> lstm_cell_step(ag::Var<T>, const CellState<T>&, const CellWeights<T>&); \
  template CellState<T> convlstm_cell_step(ag::Var<T>, const CellState<T>&,                      \
                                           const CellWeights<T>&);                               \
  template class Model<T>;                                                                       \
  template BoundModel<T> bind(ag::Tape<T>&, Model<T>&);                                          \
  template BoundModel<T> bind_const(ag::Tape<T>&, const Model<T>&);                              \
  template StackState<T> zero_state(ag::Tape<T>&, const ModelSpec&);                             \
  template ag::Var<T> stack_step(const ModelSpec&, std::span<const CellWeights<T>>,             \
                                 StackState<T>&, ag::Var<T>);                                    \
  template StackState<T> encode(const BoundModel<T>&, std::span<const ag::Var<T>>);             \
  template Rollout<T> unroll(const BoundModel<T>&, std::span<const ag::Var<T>>, int, int,       \
                             const FeedPlan&);                                                   \
  template ag::Var<T> forward_stack(const BoundModel<T>&, std::span<const ag::Var<T>>);         \
  template std::vector<ag::Var<T>> seq2seq_forward(const BoundModel<T>&,                         \
                                                   std::span<const ag::Var<T>>, int);            \
  template Rollout<T> multidecoder_forward(const BoundModel<T>&, std::span<const ag::Var<T>>,   \
                                           int);                                                 \
  template std::vector<ag::Tensor<T>> generate(const Model<T>&, std::span<const ag::Tensor<T>>, \
                                               int);

BB_INSTANTIATE_MODELS(float)
BB_INSTANTIATE_MODELS(double)

#undef BB_INSTANTIATE_MODELS

template Model<float> convert(const Model<double>&);
template Model<double> convert(const Model<float>&);
template Model<float> convert(const Model<float>&);
template Model<double> convert(const Model<double>&);

}  // namespace bb::models
