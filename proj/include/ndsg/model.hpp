#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "ndsg/tensor.hpp"

namespace ndsg {

enum class LayerKind : uint8_t {
  Conv2d = 1,
  Dense = 2,
  BatchNorm = 3,
  Relu = 4,
  MaxPool = 5,
  AvgPoolGlobal = 6,
};

const char* layer_kind_name(LayerKind kind);

/// One node of the (strictly sequential) architecture.
///  conv2d:    out_ch filters over in_ch channels, kernel kh x kw, stride/pad
///  dense:     out_ch rows over in_ch inputs; viewed as out_ch filters of
///             shape in_ch x 1 x 1 for selection purposes
///  batchnorm: out_ch == in_ch == channel count
struct LayerSpec {
  LayerKind kind = LayerKind::Relu;
  int out_ch = 0;
  int in_ch = 0;
  int kh = 0;
  int kw = 0;
  int stride = 1;
  int pad = 0;

  static LayerSpec conv(int out, int in, int kernel, int stride = 1, int pad = 0);
  static LayerSpec dense_layer(int out, int in);
  static LayerSpec batchnorm_layer(int channels);
  static LayerSpec plain(LayerKind kind);

  bool has_weights() const { return kind == LayerKind::Conv2d || kind == LayerKind::Dense; }
  size_t weight_count() const;
  size_t param_count() const;
};

/// Flat offsets of one layer inside the canonical parameter vector. Order:
/// conv/dense weights [out][in][kh][kw] then biases; batchnorm gamma, beta,
/// running_mean, running_var.
struct LayerLayout {
  size_t offset = 0;
  size_t count = 0;
  size_t weight = 0;
  size_t weight_count = 0;
  size_t bias = 0;
  size_t bias_count = 0;
  size_t gamma = 0;
  size_t beta = 0;
  size_t running_mean = 0;
  size_t running_var = 0;
  size_t channels = 0;
};

struct ModelGraph {
  std::vector<LayerSpec> layers;
  std::vector<float> params;  // canonical flat order

  size_t param_count() const { return params.size(); }
  /// Chain-consistency check; throws ErrorKind::Shape on violations.
  void validate() const;
};

std::vector<LayerLayout> build_layout(const std::vector<LayerSpec>& layers);
size_t total_param_count(const std::vector<LayerSpec>& layers);

// -------------------------------------------------------------- topology

/// Indices of conv/dense layers in chain order.
std::vector<int> weighted_layer_indices(const ModelGraph& g);
/// Nearest conv/dense layer strictly before `layer`, or -1.
int previous_weighted(const ModelGraph& g, int layer);
/// Nearest conv/dense layer strictly after `layer`, or -1.
int next_weighted(const ModelGraph& g, int layer);
/// Input columns of a dense layer spanned by one channel of the producing
/// layer (handles the implicit flatten of spatial maps).
int dense_channel_group(const ModelGraph& g, int dense_layer);
/// BatchNorm layers normalizing the output channels of weighted layer
/// `layer` (those between it and the next weighted layer).
std::vector<int> batchnorm_layers_after(const ModelGraph& g, int layer);
/// Indices of BatchNorm layers in chain order.
std::vector<int> batchnorm_layer_indices(const ModelGraph& g);

// -------------------------------------------------------------- selection

/// Per weighted layer: sorted set of selected filter indices. Selected
/// filters restricted to selected input channels form the secret subset.
struct FilterSelection {
  std::map<int, std::vector<int>> sel;  // weighted layer index -> sorted filters

  bool selected(int layer, int filter) const;
  const std::vector<int>& at(int layer) const;
  size_t total_selected() const;
};

/// Full selection (every filter of every weighted layer).
FilterSelection full_selection(const ModelGraph& g);

struct AdaptationMeta {
  enum class Mode : uint8_t { None = 0, Upsample = 1, HiddenExtend = 2 };
  Mode mode = Mode::None;
  uint32_t original_output_dim = 0;
  uint32_t stego_output_dim = 0;
  uint32_t added_neurons = 0;
  bool appended_final_layer = false;
};

const char* adaptation_mode_name(AdaptationMeta::Mode mode);

/// Binary mask aligned with the flat parameter vector: 0 = frozen secret
/// parameter, 1 = trainable.
struct ParameterMask {
  std::vector<uint8_t> m;

  size_t frozen_count() const;
};

/// Secret running statistics, one entry per BatchNorm layer in chain order,
/// always full width of the (stego) graph.
struct BnStats {
  std::vector<std::vector<float>> mean;
  std::vector<std::vector<float>> var;
};

BnStats collect_bn_stats(const ModelGraph& g);
void install_bn_stats(ModelGraph& g, const BnStats& stats);

/// Marks as frozen (0): selected-filter weights restricted to selected input
/// channels, their biases, and batchnorm gamma/beta of selected channels.
/// Adaptation-added parameters are always trainable; `adapt` is used to
/// verify the selection never reaches into them.
ParameterMask selection_to_mask(const ModelGraph& g, const FilterSelection& sel,
                                const AdaptationMeta& adapt);

/// Builds the pruned secret network: selected filters wired to selected
/// input channels, batchnorm slices with gamma/beta from the graph and
/// mean/var from `secret_stats`, output layer de-adapted per `adapt`.
/// Copied parameter words are bit-identical to the source graph.
ModelGraph extract_subnetwork(const ModelGraph& g, const FilterSelection& sel,
                              const BnStats& secret_stats, const AdaptationMeta& adapt);

// -------------------------------------------------------------- forward

struct BoundLayer {
  TensorPtr weight, bias;                            // conv/dense
  TensorPtr gamma, beta, running_mean, running_var;  // batchnorm
};

/// Parameter tensors gathered from the flat vector. Gather/scatter is a
/// bit-exact round trip.
struct BoundModel {
  std::vector<BoundLayer> layers;  // aligned with graph.layers
  std::vector<TensorPtr> trainable_params() const;
};

BoundModel bind_params(const ModelGraph& g, bool for_training);
void scatter_params(ModelGraph& g, const BoundModel& bound);

TensorPtr forward(Tape& tape, const ModelGraph& g, const BoundModel& bound,
                  const TensorPtr& input, const BatchNormAttrs& bn);

/// Inference on a frozen model (no gradients, running statistics).
Tensor forward_eval(const ModelGraph& g, const Tensor& input);

// -------------------------------------------------------------- builder

/// Architecture descriptor prior to dimension resolution (mirrors the JSON
/// accepted by the CLI).
struct ArchLayer {
  LayerKind kind = LayerKind::Relu;
  int filters = 0;  // conv2d
  int kernel = 3;
  int stride = 1;
  int pad = 1;
  int width = 0;  // dense; 0 = resolve to the task output dimension
};

/// Resolves channel/width chaining from the input shape, appends a final
/// dense layer if the description does not end in one, and initializes
/// weights (He-normal, biases zero, batchnorm identity).
ModelGraph build_graph(const std::vector<ArchLayer>& arch, int in_channels,
                       int height, int width, int output_dim, uint64_t init_seed);

// -------------------------------------------------------------- storage

/// Binary little-endian model file:
///   magic "NDSG" | version u16 | layer count u16
///   per layer: kind u8 + fixed attribute words (u32 each):
///     conv2d: out,in,kh,kw,stride,pad | dense: out,in | batchnorm: channels
///   parameter blob: count u64 + raw 32-bit words in canonical flat order
///   CRC-32 over every preceding byte
/// Round trips are bit-exact on every parameter word.
inline constexpr uint16_t kModelFormatVersion = 1;

void save_model(const ModelGraph& g, const std::string& path);
ModelGraph load_model(const std::string& path);

std::vector<uint8_t> serialize_model(const ModelGraph& g);
ModelGraph deserialize_model(const std::vector<uint8_t>& bytes);

}  // namespace ndsg
