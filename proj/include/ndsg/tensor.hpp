#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string_view>
#include <vector>

#include "ndsg/errors.hpp"
#include "ndsg/rng.hpp"

namespace ndsg {

/// Dense n-dimensional array of 32-bit floats in row-major order. The 32-bit
/// storage is a cross-module contract: the side-information codec manipulates
/// the least significant bit of exactly these words.
struct Tensor {
  std::vector<int> shape;
  std::vector<float> data;
  std::vector<float> grad;  // same length as data once ensure_grad() ran
  bool requires_grad = false;

  Tensor() = default;
  explicit Tensor(std::vector<int> s, bool rg = false);

  static Tensor zeros(std::vector<int> s, bool rg = false);
  static Tensor from(std::vector<int> s, std::vector<float> values, bool rg = false);
  static Tensor scalar(float v, bool rg = false);

  size_t size() const { return data.size(); }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }

  void ensure_grad();
  void zero_grad();
  bool all_finite() const;
};

using TensorPtr = std::shared_ptr<Tensor>;

TensorPtr make_tensor(std::vector<int> shape, bool rg = false);
TensorPtr make_tensor(std::vector<int> shape, std::vector<float> values, bool rg = false);
TensorPtr make_scalar(float v, bool rg = false);

size_t shape_numel(const std::vector<int>& shape);
void check_finite(const Tensor& t, const char* what);

/// Reverse-mode tape. Ops append one node per executed primitive; backward()
/// re-seeds the loss gradient, clears intermediate (op output) gradients and
/// replays the nodes in exact reverse execution order. Leaf gradients
/// accumulate additively across backward() calls until explicitly zeroed.
class Tape {
 public:
  void record(TensorPtr output, std::function<void()> backprop);
  void backward(const TensorPtr& loss);
  void clear();
  bool empty() const { return nodes_.empty(); }
  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    TensorPtr output;
    std::function<void()> backprop;
  };
  std::vector<Node> nodes_;
};

struct Conv2dAttrs {
  int stride = 1;
  int pad = 0;
};

enum class BnMode {
  Eval,           // normalize with running statistics
  Train,          // batch statistics + running-buffer update
  BatchStatsOnly  // batch statistics, running buffers untouched (scoring)
};

struct BatchNormAttrs {
  BnMode mode = BnMode::Eval;
  float momentum = 0.1f;
  float eps = 1e-5f;
};

// Primitive ops. Output is recorded on the tape whenever an input requires
// gradients. Inputs must be finite; shape mismatches throw ErrorKind::Shape.
TensorPtr conv2d(Tape& tape, const TensorPtr& input, const TensorPtr& weight,
                 const TensorPtr& bias, const Conv2dAttrs& attrs);
TensorPtr dense(Tape& tape, const TensorPtr& input, const TensorPtr& weight,
                const TensorPtr& bias);
TensorPtr batchnorm(Tape& tape, const TensorPtr& input, const TensorPtr& gamma,
                    const TensorPtr& beta, const TensorPtr& running_mean,
                    const TensorPtr& running_var, const BatchNormAttrs& attrs);
TensorPtr relu(Tape& tape, const TensorPtr& input);
TensorPtr maxpool2x2(Tape& tape, const TensorPtr& input);
TensorPtr avgpool_global(Tape& tape, const TensorPtr& input);
TensorPtr softmax_crossentropy(Tape& tape, const TensorPtr& logits,
                               const TensorPtr& labels);
TensorPtr mse(Tape& tape, const TensorPtr& prediction, const TensorPtr& target);
TensorPtr sigmoid_bce(Tape& tape, const TensorPtr& logits, const TensorPtr& targets);

struct OpAttrs {
  Conv2dAttrs conv;
  BatchNormAttrs bn;
};

/// Generic dispatcher over the primitive set; unknown names throw.
TensorPtr forward_op(Tape& tape, std::string_view op,
                     const std::vector<TensorPtr>& inputs, const OpAttrs& attrs = {});

/// Adam over an explicit parameter list. Moment buffers exist only for the
/// trainable entries of each tensor, so frozen entries are never touched.
class Adam {
 public:
  struct Hyper {
    float lr = 1e-3f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
  };

  /// `trainable`, when non-empty, holds one index list per parameter; an
  /// empty inner list means "every entry of this tensor".
  Adam(std::vector<TensorPtr> params, Hyper hyper,
       std::vector<std::vector<uint32_t>> trainable = {});

  void step();
  void zero_grad();
  long step_count() const { return t_; }

 private:
  std::vector<TensorPtr> params_;
  Hyper hyper_;
  std::vector<std::vector<uint32_t>> trainable_;  // aligned with params_
  std::vector<std::vector<float>> m_, v_;         // sized per trainable list
  long t_ = 0;
};

/// Fan-in of a weight shape: product of all dims past the first (conv
/// [d,c,s1,s2] -> c*s1*s2, dense [out,in] -> in).
int fan_in_of(const std::vector<int>& shape);

/// He-normal initialization, std = sqrt(2 / fan_in), deterministic per rng.
Tensor kaiming_init(const std::vector<int>& shape, Rng& rng);

}  // namespace ndsg
