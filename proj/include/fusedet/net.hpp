#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "fusedet/layers.hpp"
#include "fusedet/tensor.hpp"

namespace fusedet {

enum class LayerKind { conv, sepconv, maxpool, relu, flatten, dense, branch };

const char* to_string(LayerKind kind);
LayerKind layer_kind_from_string(const std::string& s);

// One layer of a network. `branch` layers run their branches on the same input
// and concatenate the outputs along the channel axis.
struct LayerDesc {
  LayerKind kind = LayerKind::relu;
  std::string name;
  std::size_t units = 0;   // conv/sepconv filters, dense outputs
  std::size_t kernel = 0;  // conv/sepconv kernel size; maxpool window
  std::size_t stride = 1;
  std::size_t pad = 0;
  std::vector<std::vector<LayerDesc>> branches;

  friend bool operator==(const LayerDesc&, const LayerDesc&) = default;
};

struct NetworkSpec {
  std::string model_id;
  Shape input_shape;
  std::vector<LayerDesc> layers;
  std::size_t num_classes = 2;

  friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

inline constexpr const char* kPlainNet = "plainnet";
inline constexpr const char* kBranchNet = "branchnet";
inline constexpr const char* kSepNet = "sepnet";

const std::vector<std::string>& builtin_model_ids();

// Parameter tensors keyed by "<layer>.<role>" (roles: weight, bias, depthwise,
// pointwise).
using ParamSet = std::map<std::string, Tensor>;

struct CheckpointMeta {
  std::uint64_t seed = 0;
  std::size_t epochs_trained = 0;
  std::string config_digest;

  friend bool operator==(const CheckpointMeta&, const CheckpointMeta&) = default;
};

struct Checkpoint {
  NetworkSpec spec;
  ParamSet params;
  CheckpointMeta meta;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

// Layer names excluded from optimizer updates. For branch layers the name
// covers every layer nested inside it.
struct FreezeMask {
  std::set<std::string> frozen;

  bool covers(const std::string& param_name) const;
};

// Layer widths for the built-in architectures; reduced-size instances for
// gradient checks use smaller values and small inputs.
struct ArchWidths {
  std::size_t base = 8;
};

// Validates shape flow and returns the output shape of every top-level layer.
std::vector<Shape> infer_shapes(const NetworkSpec& spec);

// Parameter names and shapes in layer order.
std::vector<std::pair<std::string, Shape>> param_shapes(const NetworkSpec& spec);

// Names of the top-level layers, in order.
std::vector<std::string> layer_names(const NetworkSpec& spec);

// Layer-kind sequence flattened depth-first, used for structural comparisons.
std::vector<LayerKind> kind_sequence(const NetworkSpec& spec);

// Architecture for a built-in model id at any input shape divisible by 8.
NetworkSpec make_spec(const std::string& model_id, const Shape& input_shape,
                      ArchWidths widths = {});

// He-uniform weights, zero biases, drawn in param_shapes order.
ParamSet init_params(const NetworkSpec& spec, std::uint64_t seed);

std::size_t parameter_count(const ParamSet& params);

// Built-in network for a production input shape ([3,64,64] or [3,128,128]).
Checkpoint build_net(const std::string& model_id, const Shape& input_shape, std::uint64_t seed);

// Any validated spec, e.g. dense-only models.
Checkpoint build_custom_net(NetworkSpec spec, std::uint64_t seed);

// FreezeMask for the first `count` top-level layers carrying parameters,
// including the activation/pooling layers between them.
FreezeMask freeze_prefix(const NetworkSpec& spec, std::size_t count);

struct LayerCache;

struct BranchCache {
  std::vector<std::vector<LayerCache>> branches;
  std::vector<std::size_t> channels;
};

struct FlattenCache {
  Shape input_shape;
};

struct LayerCache {
  std::variant<std::monostate, Conv2dCache, SepConv2dCache, MaxPool2dCache, ReluCache,
               FlattenCache, DenseCache, BranchCache>
      state;
};

struct NetCaches {
  std::uint64_t params_fingerprint = 0;
  Shape input_shape;
  std::vector<LayerCache> layers;
  Tensor logits;
};

struct ForwardResult {
  Tensor logits;
  Tensor probs;
  NetCaches caches;
};

struct BackwardResult {
  ParamSet param_grads;
  Tensor input_grad;
  double loss = 0.0;
};

std::uint64_t params_fingerprint(const ParamSet& params);

ForwardResult net_forward(const Checkpoint& ckpt, const Tensor& image);
// Logits and probabilities only; skips cache construction.
Tensor net_probs(const Checkpoint& ckpt, const Tensor& image);

// Cross-entropy gradients for `label` through the cached forward pass.
BackwardResult net_backward(const Checkpoint& ckpt, const NetCaches& caches, Label label);
// Backward from an arbitrary upstream gradient on the logits.
BackwardResult net_backward_logits(const Checkpoint& ckpt, const NetCaches& caches,
                                   const Tensor& grad_logits);

void to_json(nlohmann::json& j, const LayerDesc& layer);
void from_json(const nlohmann::json& j, LayerDesc& layer);
void to_json(nlohmann::json& j, const NetworkSpec& spec);
void from_json(const nlohmann::json& j, NetworkSpec& spec);

}  // namespace fusedet
