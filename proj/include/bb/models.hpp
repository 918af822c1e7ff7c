#pragma once

#include <nlohmann/json.hpp>
#include <span>
#include <string>
#include <vector>

#include "bb/autograd.hpp"
#include "bb/rng.hpp"

namespace bb::models {

enum class Architecture { lstm, convlstm, seq2seq, seq2seq_multi };

std::string to_string(Architecture arch);
/// Accepts "seq2seq-multi" as well as "seq2seq_multi".
Architecture architecture_from_string(const std::string& name);

struct ModelSpec {
  Architecture arch = Architecture::convlstm;
  // Convolutional architectures: one entry per layer, last layer has 1 channel.
  std::vector<int> kernels{7, 5, 3, 3};
  std::vector<int> channels{10, 10, 10, 1};
  // Fully connected LSTM: units per layer, last layer equals height * width.
  std::vector<int> hidden_units{2048, 1024, 1024, 3600};
  int height = 60;
  int width = 60;
  int context = 10;
  int horizon = 20;

  bool convolutional() const { return arch != Architecture::lstm; }
  bool has_decoder() const {
    return arch == Architecture::seq2seq || arch == Architecture::seq2seq_multi;
  }
  int n_layers() const;
  int frame_size() const { return height * width; }
  /// Number of scalar parameters this configuration implies.
  std::size_t parameter_count() const;
  /// Throws ConfigError describing the first violated invariant.
  void validate() const;

  nlohmann::json to_json() const;
  static ModelSpec from_json(const nlohmann::json& j);
};

/// Best configurations found by the one-at-a-time search, scaled to `resolution`.
ModelSpec best_spec(Architecture arch, int resolution);

/// Parameter tensors of one LSTM or ConvLSTM layer, bound to a tape. The
/// weights for gate g are W_i{g} (input) and W_h{g} (recurrent), each with
/// its own bias, for g in {i, f, o, g}. No peephole connections.
template <typename T>
struct CellWeights {
  ag::Var<T> w_ii, w_if, w_io, w_ig;
  ag::Var<T> w_hi, w_hf, w_ho, w_hg;
  ag::Var<T> b_ii, b_if, b_io, b_ig;
  ag::Var<T> b_hi, b_hf, b_ho, b_hg;
};

template <typename T>
struct CellState {
  ag::Var<T> h;
  ag::Var<T> c;
  // Both tensors are known to be zero; the recurrent products are skipped.
  bool zero = false;
};

template <typename T>
using StackState = std::vector<CellState<T>>;

/// i, f, o = sigmoid(W_i x + b_i + W_h h + b_h); g = tanh(...);
/// c = f * c_prev + i * g; h = o * tanh(c). Inputs are vectors.
template <typename T>
CellState<T> lstm_cell_step(ag::Var<T> x, const CellState<T>& prev, const CellWeights<T>& w);

/// Same algebra with every matrix product replaced by a same-padded
/// convolution and per-channel biases. Inputs are [channels x H x W].
template <typename T>
CellState<T> convlstm_cell_step(ag::Var<T> x, const CellState<T>& prev, const CellWeights<T>& w);

/// Layer names of a stack: "l0", "l1", ... prefixed by the stack name
/// ("enc", "dec", "rec") for encoder-decoder architectures.
std::vector<std::string> stack_names(Architecture arch);

template <typename T>
class Model {
 public:
  /// Allocates zero-valued parameters for `spec`.
  explicit Model(ModelSpec spec);

  /// Weights uniform in +-1/sqrt(fan_in); biases zero except the input-side
  /// forget-gate bias, which is 1.
  void init_params(Rng& rng);

  const ModelSpec& spec() const { return spec_; }
  ag::ParamSet<T>& params() { return params_; }
  const ag::ParamSet<T>& params() const { return params_; }

 private:
  ModelSpec spec_;
  ag::ParamSet<T> params_;
};

/// A model's parameters bound to one tape.
template <typename T>
struct BoundModel {
  const ModelSpec* spec = nullptr;
  ag::Tape<T>* tape = nullptr;
  std::vector<CellWeights<T>> main;  // lstm / convlstm stack, or the encoder
  std::vector<CellWeights<T>> decoder;
  std::vector<CellWeights<T>> reconstruction;
};

/// Binds parameters as trainable; gradients accumulate into `model`.
template <typename T>
BoundModel<T> bind(ag::Tape<T>& tape, Model<T>& model);
/// Binds parameters read-only.
template <typename T>
BoundModel<T> bind_const(ag::Tape<T>& tape, const Model<T>& model);

template <typename T>
StackState<T> zero_state(ag::Tape<T>& tape, const ModelSpec& spec);

/// Feeds one frame [1 x H x W] through a stack and returns the prediction
/// 2h - 1 of the top layer's output h, as a frame [1 x H x W] in the [-1, 1]
/// view; h = 0 is black. `state` is advanced in place.
template <typename T>
ag::Var<T> stack_step(const ModelSpec& spec, std::span<const CellWeights<T>> stack,
                      StackState<T>& state, ag::Var<T> frame);

/// Runs `frames` through the main stack (the encoder for seq2seq models) and
/// returns the per-layer states after the last frame.
template <typename T>
StackState<T> encode(const BoundModel<T>& model, std::span<const ag::Var<T>> frames);

/// Input schedule for a multi-step rollout. `self_fed[i]` selects the input
/// of prediction step i + 1: the model's previous output (true) or the
/// ground-truth previous frame (false). Step 1 always reads the last context
/// frame, so `self_fed[0]` is ignored.
struct FeedPlan {
  std::vector<bool> future;
  std::vector<bool> reconstruction;  // multi-decoder only; size == context

  static FeedPlan blind(int horizon, int context);
  static FeedPlan forced(int horizon, int context);
};

template <typename T>
struct Rollout {
  std::vector<ag::Var<T>> future;          // predictions of frames t .. t+k-1
  std::vector<ag::Var<T>> reconstruction;  // predictions of frames t-1 .. 0 (multi-decoder)
};

/// Unified rollout for every architecture. `frames` holds the context
/// followed by as many ground-truth future frames as the plan reads
/// (possibly none when the plan is fully self-fed).
template <typename T>
Rollout<T> unroll(const BoundModel<T>& model, std::span<const ag::Var<T>> frames, int context,
                  int horizon, const FeedPlan& plan);

/// Context frames in, prediction of the next frame out (single-stack models).
template <typename T>
ag::Var<T> forward_stack(const BoundModel<T>& model, std::span<const ag::Var<T>> context);

/// Encoder-decoder: encoder states are copied into the decoder, whose first
/// input is the last context frame; later inputs are its own outputs.
template <typename T>
std::vector<ag::Var<T>> seq2seq_forward(const BoundModel<T>& model,
                                        std::span<const ag::Var<T>> context, int horizon);

/// Shared encoder with two decoders: the first reconstructs the context in
/// reverse order starting from a black frame, the second predicts the future.
template <typename T>
Rollout<T> multidecoder_forward(const BoundModel<T>& model, std::span<const ag::Var<T>> context,
                                int horizon);

/// Inference: autoregressive rollout of `horizon` frames from normalized
/// context frames, dispatching on the architecture.
template <typename T>
std::vector<ag::Tensor<T>> generate(const Model<T>& model,
                                    std::span<const ag::Tensor<T>> context, int horizon);

/// Converts parameters between precisions.
template <typename To, typename From>
Model<To> convert(const Model<From>& model);

}  // namespace bb::models
