#include "fusedet/net.hpp"

#include <cmath>
#include <set>

#include <nlohmann/json.hpp>

#include "fusedet/rng.hpp"

namespace fusedet {

using nlohmann::json;

const char* to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv: return "conv";
    case LayerKind::sepconv: return "sepconv";
    case LayerKind::maxpool: return "maxpool";
    case LayerKind::relu: return "relu";
    case LayerKind::flatten: return "flatten";
    case LayerKind::dense: return "dense";
    case LayerKind::branch: return "branch";
  }
  return "?";
}

LayerKind layer_kind_from_string(const std::string& s) {
  for (LayerKind k : {LayerKind::conv, LayerKind::sepconv, LayerKind::maxpool, LayerKind::relu,
                      LayerKind::flatten, LayerKind::dense, LayerKind::branch})
    if (s == to_string(k)) return k;
  throw ConfigError("unknown layer kind '" + s + "'");
}

const std::vector<std::string>& builtin_model_ids() {
  static const std::vector<std::string> ids{kPlainNet, kBranchNet, kSepNet};
  return ids;
}

bool FreezeMask::covers(const std::string& param_name) const {
  for (const std::string& layer : frozen)
    if (param_name.size() > layer.size() && param_name.compare(0, layer.size(), layer) == 0 &&
        param_name[layer.size()] == '.')
      return true;
  return false;
}

namespace {

bool has_params(LayerKind k) {
  return k == LayerKind::conv || k == LayerKind::sepconv || k == LayerKind::dense ||
         k == LayerKind::branch;
}

void collect_names(const std::vector<LayerDesc>& layers, std::set<std::string>& seen) {
  for (const LayerDesc& l : layers) {
    if (l.name.empty()) throw ConfigError("network layer without a name");
    if (!seen.insert(l.name).second) throw ConfigError("duplicate layer name '" + l.name + "'");
    for (const auto& b : l.branches) collect_names(b, seen);
  }
}

Shape layer_output_shape(const LayerDesc& l, const Shape& in,
                         std::vector<std::pair<std::string, Shape>>* params);

Shape sequence_output_shape(const std::vector<LayerDesc>& layers, Shape shape,
                            std::vector<std::pair<std::string, Shape>>* params,
                            std::vector<Shape>* per_layer) {
  for (const LayerDesc& l : layers) {
    shape = layer_output_shape(l, shape, params);
    if (per_layer) per_layer->push_back(shape);
  }
  return shape;
}

Shape layer_output_shape(const LayerDesc& l, const Shape& in,
                         std::vector<std::pair<std::string, Shape>>* params) {
  auto need_image = [&](const char* what) {
    if (in.size() != 3)
      throw ShapeError(l.name + ": " + what + " needs a [C,H,W] input, got " + shape_string(in));
  };
  switch (l.kind) {
    case LayerKind::conv: {
      need_image("conv");
      if (l.units == 0 || l.kernel == 0) throw ConfigError(l.name + ": conv needs units and kernel");
      const Shape k{l.units, in[0], l.kernel, l.kernel};
      const Shape out = conv2d_output_shape(in, k, l.stride, l.pad);
      if (params) {
        params->emplace_back(l.name + ".weight", k);
        params->emplace_back(l.name + ".bias", Shape{l.units});
      }
      return out;
    }
    case LayerKind::sepconv: {
      need_image("sepconv");
      if (l.units == 0 || l.kernel == 0)
        throw ConfigError(l.name + ": sepconv needs units and kernel");
      const Shape out =
          conv2d_output_shape(in, {l.units, in[0], l.kernel, l.kernel}, l.stride, l.pad);
      if (params) {
        params->emplace_back(l.name + ".depthwise", Shape{in[0], l.kernel, l.kernel});
        params->emplace_back(l.name + ".pointwise", Shape{l.units, in[0], 1, 1});
        params->emplace_back(l.name + ".bias", Shape{l.units});
      }
      return out;
    }
    case LayerKind::maxpool: {
      need_image("maxpool");
      const std::size_t w = l.kernel == 0 ? 2 : l.kernel;
      if (in[1] % w != 0 || in[2] % w != 0)
        throw ShapeError(l.name + ": maxpool window " + std::to_string(w) +
                         " does not divide input " + shape_string(in));
      return {in[0], in[1] / w, in[2] / w};
    }
    case LayerKind::relu:
      return in;
    case LayerKind::flatten:
      return {shape_size(in)};
    case LayerKind::dense: {
      if (in.size() != 1)
        throw ShapeError(l.name + ": dense needs a flat input, got " + shape_string(in));
      if (l.units == 0) throw ConfigError(l.name + ": dense needs units");
      if (params) {
        params->emplace_back(l.name + ".weight", Shape{l.units, in[0]});
        params->emplace_back(l.name + ".bias", Shape{l.units});
      }
      return {l.units};
    }
    case LayerKind::branch: {
      need_image("branch");
      if (l.branches.empty()) throw ConfigError(l.name + ": branch layer without branches");
      std::size_t channels = 0;
      Shape spatial;
      for (const auto& b : l.branches) {
        const Shape out = sequence_output_shape(b, in, params, nullptr);
        if (out.size() != 3) throw ShapeError(l.name + ": branch output must be [C,H,W]");
        if (spatial.empty()) spatial = {out[1], out[2]};
        if (spatial[0] != out[1] || spatial[1] != out[2])
          throw ShapeError(l.name + ": branch outputs disagree on spatial size");
        channels += out[0];
      }
      return {channels, spatial[0], spatial[1]};
    }
  }
  throw ConfigError("unreachable layer kind");
}

void kinds_of(const std::vector<LayerDesc>& layers, std::vector<LayerKind>& out) {
  for (const LayerDesc& l : layers) {
    out.push_back(l.kind);
    for (const auto& b : l.branches) kinds_of(b, out);
  }
}

LayerDesc conv(std::string name, std::size_t units, std::size_t kernel) {
  return {LayerKind::conv, std::move(name), units, kernel, 1, kernel / 2, {}};
}
LayerDesc sepconv(std::string name, std::size_t units, std::size_t kernel) {
  return {LayerKind::sepconv, std::move(name), units, kernel, 1, kernel / 2, {}};
}
LayerDesc relu(std::string name) { return {LayerKind::relu, std::move(name), 0, 0, 1, 0, {}}; }
LayerDesc pool(std::string name) { return {LayerKind::maxpool, std::move(name), 0, 2, 2, 0, {}}; }
LayerDesc flatten(std::string name) {
  return {LayerKind::flatten, std::move(name), 0, 0, 1, 0, {}};
}
LayerDesc dense(std::string name, std::size_t units) {
  return {LayerKind::dense, std::move(name), units, 0, 1, 0, {}};
}

}  // namespace

std::vector<Shape> infer_shapes(const NetworkSpec& spec) {
  std::set<std::string> names;
  collect_names(spec.layers, names);
  if (spec.input_shape.empty() || shape_size(spec.input_shape) == 0)
    throw ShapeError("network input shape must be non-empty");
  std::vector<Shape> shapes;
  const Shape out = sequence_output_shape(spec.layers, spec.input_shape, nullptr, &shapes);
  if (out != Shape{spec.num_classes})
    throw ShapeError("network must end in " + std::to_string(spec.num_classes) +
                     " logits, got " + shape_string(out));
  return shapes;
}

std::vector<std::pair<std::string, Shape>> param_shapes(const NetworkSpec& spec) {
  std::vector<std::pair<std::string, Shape>> params;
  sequence_output_shape(spec.layers, spec.input_shape, &params, nullptr);
  return params;
}

std::vector<std::string> layer_names(const NetworkSpec& spec) {
  std::vector<std::string> names;
  for (const LayerDesc& l : spec.layers) names.push_back(l.name);
  return names;
}

std::vector<LayerKind> kind_sequence(const NetworkSpec& spec) {
  std::vector<LayerKind> kinds;
  kinds_of(spec.layers, kinds);
  return kinds;
}

NetworkSpec make_spec(const std::string& model_id, const Shape& input_shape, ArchWidths widths) {
  if (input_shape.size() != 3 || input_shape[0] != 3 || input_shape[1] % 8 != 0 ||
      input_shape[2] % 8 != 0 || input_shape[1] == 0 || input_shape[2] == 0)
    throw ConfigError("input shape " + shape_string(input_shape) +
                      " must be [3,H,W] with H and W divisible by 8");
  const std::size_t b = widths.base;
  if (b < 2 || b % 2 != 0) throw ConfigError("base width must be an even number >= 2");
  NetworkSpec spec{model_id, input_shape, {}, 2};
  auto& L = spec.layers;
  if (model_id == kPlainNet) {
    // stacked 3x3 convolutions with pooling between blocks
    L = {conv("conv1", b, 3),      relu("relu1"),  pool("pool1"),
         conv("conv2", 2 * b, 3),  relu("relu2"),  pool("pool2"),
         conv("conv3", 2 * b, 3),  relu("relu3"),  conv("conv4", 2 * b, 3),
         relu("relu4"),            pool("pool3"),  flatten("flatten"),
         dense("fc", 2)};
  } else if (model_id == kBranchNet) {
    // parallel 1x1 / 3x3 / 5x5 branches concatenated on channels
    LayerDesc mix{LayerKind::branch, "mix1", 0, 0, 1, 0, {}};
    mix.branches = {{conv("mix1.b1x1", b / 2, 1), relu("mix1.b1x1_relu")},
                    {conv("mix1.b3x3", b, 3), relu("mix1.b3x3_relu")},
                    {conv("mix1.b5x5", b / 2, 5), relu("mix1.b5x5_relu")}};
    L = {conv("stem", b, 3), relu("stem_relu"), pool("pool1"),
         mix,                pool("pool2"),     conv("conv2", 2 * b, 3),
         relu("relu2"),      pool("pool3"),     flatten("flatten"),
         dense("fc", 2)};
  } else if (model_id == kSepNet) {
    // depthwise-separable convolutions after a dense stem
    L = {conv("stem", b, 3),         relu("stem_relu"), pool("pool1"),
         sepconv("sep1", 2 * b, 3),  relu("sep1_relu"), sepconv("sep2", 2 * b, 3),
         relu("sep2_relu"),          pool("pool2"),     sepconv("sep3", 4 * b, 3),
         relu("sep3_relu"),          pool("pool3"),     flatten("flatten"),
         dense("fc", 2)};
  } else {
    throw ConfigError("unknown model id '" + model_id + "' (expected plainnet, branchnet or sepnet)");
  }
  infer_shapes(spec);
  return spec;
}

ParamSet init_params(const NetworkSpec& spec, std::uint64_t seed) {
  Rng rng(seed);
  ParamSet params;
  for (const auto& [name, shape] : param_shapes(spec)) {
    Tensor t(shape);
    const bool is_bias = name.size() >= 5 && name.compare(name.size() - 5, 5, ".bias") == 0;
    if (!is_bias) {
      // fan_in is the product of all but the leading dim for every weight
      // layout: [F,C,k,k], [C,k,k] (depthwise), [F,C,1,1], [m,n]
      std::size_t fan_in = 1;
      for (std::size_t i = 1; i < shape.size(); ++i) fan_in *= shape[i];
      const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
      for (double& v : t.data()) v = rng.uniform(-limit, limit);
    }
    params.emplace(name, std::move(t));
  }
  return params;
}

std::size_t parameter_count(const ParamSet& params) {
  std::size_t n = 0;
  for (const auto& [name, t] : params) n += t.size();
  return n;
}

Checkpoint build_net(const std::string& model_id, const Shape& input_shape, std::uint64_t seed) {
  if (input_shape != Shape{3, 64, 64} && input_shape != Shape{3, 128, 128})
    throw ConfigError("unsupported input shape " + shape_string(input_shape) +
                      " (expected [3,64,64] or [3,128,128])");
  NetworkSpec spec = make_spec(model_id, input_shape);
  ParamSet params = init_params(spec, derive_seed(seed, "init", model_id));
  return {std::move(spec), std::move(params), CheckpointMeta{seed, 0, ""}};
}

Checkpoint build_custom_net(NetworkSpec spec, std::uint64_t seed) {
  infer_shapes(spec);
  ParamSet params = init_params(spec, derive_seed(seed, "init", spec.model_id));
  return {std::move(spec), std::move(params), CheckpointMeta{seed, 0, ""}};
}

FreezeMask freeze_prefix(const NetworkSpec& spec, std::size_t count) {
  FreezeMask mask;
  std::size_t seen = 0;
  for (const LayerDesc& l : spec.layers) {
    if (has_params(l.kind)) {
      if (seen == count) break;
      ++seen;
    }
    if (seen == 0) continue;
    mask.frozen.insert(l.name);
  }
  return mask;
}

std::uint64_t params_fingerprint(const ParamSet& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& [name, t] : params) {
    for (unsigned char c : name) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    h = fingerprint(t, h);
  }
  return h;
}

namespace {

const Tensor& param(const ParamSet& params, const std::string& name) {
  auto it = params.find(name);
  if (it == params.end()) throw ShapeError("checkpoint is missing parameter '" + name + "'");
  return it->second;
}

Tensor forward_sequence(const std::vector<LayerDesc>& layers, const ParamSet& params, Tensor x,
                        std::vector<LayerCache>* caches);

Tensor forward_layer(const LayerDesc& l, const ParamSet& params, const Tensor& x,
                     LayerCache* cache) {
  switch (l.kind) {
    case LayerKind::conv: {
      Conv2dCache c;
      Tensor y = conv2d_forward(x, param(params, l.name + ".weight"), param(params, l.name + ".bias"),
                                l.stride, l.pad, cache ? &c : nullptr);
      if (cache) cache->state = std::move(c);
      return y;
    }
    case LayerKind::sepconv: {
      SepConv2dCache c;
      Tensor y = sepconv2d_forward(x, param(params, l.name + ".depthwise"),
                                   param(params, l.name + ".pointwise"),
                                   param(params, l.name + ".bias"), l.stride, l.pad,
                                   cache ? &c : nullptr);
      if (cache) cache->state = std::move(c);
      return y;
    }
    case LayerKind::maxpool: {
      MaxPool2dCache c;
      Tensor y = maxpool2d_forward(x, l.kernel == 0 ? 2 : l.kernel, cache ? &c : nullptr);
      if (cache) cache->state = std::move(c);
      return y;
    }
    case LayerKind::relu: {
      ReluCache c;
      Tensor y = relu_forward(x, cache ? &c : nullptr);
      if (cache) cache->state = std::move(c);
      return y;
    }
    case LayerKind::flatten:
      if (cache) cache->state = FlattenCache{x.shape()};
      return x.reshaped({x.size()});
    case LayerKind::dense: {
      DenseCache c;
      Tensor y = dense_forward(x, param(params, l.name + ".weight"),
                               param(params, l.name + ".bias"), cache ? &c : nullptr);
      if (cache) cache->state = std::move(c);
      return y;
    }
    case LayerKind::branch: {
      BranchCache bc;
      std::vector<Tensor> outs;
      std::size_t channels = 0;
      for (const auto& branch : l.branches) {
        std::vector<LayerCache> sub;
        outs.push_back(forward_sequence(branch, params, x, cache ? &sub : nullptr));
        channels += outs.back().dim(0);
        bc.channels.push_back(outs.back().dim(0));
        if (cache) bc.branches.push_back(std::move(sub));
      }
      const std::size_t plane = outs.front().dim(1) * outs.front().dim(2);
      Tensor y({channels, outs.front().dim(1), outs.front().dim(2)});
      std::size_t offset = 0;
      for (const Tensor& o : outs) {
        std::copy(o.data().begin(), o.data().end(), y.data().begin() + offset * plane);
        offset += o.dim(0);
      }
      if (cache) cache->state = std::move(bc);
      return y;
    }
  }
  throw ConfigError("unreachable layer kind");
}

Tensor forward_sequence(const std::vector<LayerDesc>& layers, const ParamSet& params, Tensor x,
                        std::vector<LayerCache>* caches) {
  if (caches) caches->resize(layers.size());
  for (std::size_t i = 0; i < layers.size(); ++i)
    x = forward_layer(layers[i], params, x, caches ? &(*caches)[i] : nullptr);
  return x;
}

template <typename T>
const T& cache_as(const LayerCache& c, const LayerDesc& l) {
  const T* p = std::get_if<T>(&c.state);
  if (!p) throw CacheError("cache for layer '" + l.name + "' is of the wrong kind");
  return *p;
}

void accumulate(ParamSet& grads, const std::string& name, Tensor g) {
  auto [it, inserted] = grads.try_emplace(name, std::move(g));
  if (!inserted) throw CacheError("parameter '" + name + "' produced two gradients");
}

Tensor backward_sequence(const std::vector<LayerDesc>& layers,
                         const std::vector<LayerCache>& caches, Tensor grad, ParamSet& grads);

Tensor backward_layer(const LayerDesc& l, const LayerCache& cache, const Tensor& grad,
                      ParamSet& grads) {
  switch (l.kind) {
    case LayerKind::conv: {
      Conv2dGrads g = conv2d_backward(cache_as<Conv2dCache>(cache, l), grad);
      accumulate(grads, l.name + ".weight", std::move(g.kernels));
      accumulate(grads, l.name + ".bias", std::move(g.bias));
      return std::move(g.input);
    }
    case LayerKind::sepconv: {
      SepConv2dGrads g = sepconv2d_backward(cache_as<SepConv2dCache>(cache, l), grad);
      accumulate(grads, l.name + ".depthwise", std::move(g.depthwise));
      accumulate(grads, l.name + ".pointwise", std::move(g.pointwise));
      accumulate(grads, l.name + ".bias", std::move(g.bias));
      return std::move(g.input);
    }
    case LayerKind::maxpool:
      return maxpool2d_backward(cache_as<MaxPool2dCache>(cache, l), grad);
    case LayerKind::relu:
      return relu_backward(cache_as<ReluCache>(cache, l), grad);
    case LayerKind::flatten:
      return grad.reshaped(cache_as<FlattenCache>(cache, l).input_shape);
    case LayerKind::dense: {
      DenseGrads g = dense_backward(cache_as<DenseCache>(cache, l), grad);
      accumulate(grads, l.name + ".weight", std::move(g.weights));
      accumulate(grads, l.name + ".bias", std::move(g.bias));
      return std::move(g.input);
    }
    case LayerKind::branch: {
      const BranchCache& bc = cache_as<BranchCache>(cache, l);
      if (bc.branches.size() != l.branches.size())
        throw CacheError("cache for branch layer '" + l.name + "' has the wrong branch count");
      const std::size_t plane = grad.dim(1) * grad.dim(2);
      Tensor gin;
      std::size_t offset = 0;
      for (std::size_t b = 0; b < l.branches.size(); ++b) {
        const std::size_t ch = bc.channels[b];
        Tensor gb({ch, grad.dim(1), grad.dim(2)});
        std::copy(grad.data().begin() + offset * plane,
                  grad.data().begin() + (offset + ch) * plane, gb.data().begin());
        offset += ch;
        Tensor gi = backward_sequence(l.branches[b], bc.branches[b], std::move(gb), grads);
        if (gin.empty()) {
          gin = std::move(gi);
        } else {
          for (std::size_t i = 0; i < gin.size(); ++i) gin[i] += gi[i];
        }
      }
      return gin;
    }
  }
  throw ConfigError("unreachable layer kind");
}

Tensor backward_sequence(const std::vector<LayerDesc>& layers,
                         const std::vector<LayerCache>& caches, Tensor grad, ParamSet& grads) {
  if (caches.size() != layers.size())
    throw CacheError("cache holds " + std::to_string(caches.size()) + " layers, network has " +
                     std::to_string(layers.size()));
  for (std::size_t i = layers.size(); i-- > 0;)
    grad = backward_layer(layers[i], caches[i], grad, grads);
  return grad;
}

void check_image(const Checkpoint& ckpt, const Tensor& image) {
  if (image.shape() != ckpt.spec.input_shape)
    throw ShapeError("image " + shape_string(image.shape()) + " does not match " +
                     ckpt.spec.model_id + " input " + shape_string(ckpt.spec.input_shape));
}

}  // namespace

ForwardResult net_forward(const Checkpoint& ckpt, const Tensor& image) {
  check_image(ckpt, image);
  ForwardResult r;
  r.caches.params_fingerprint = params_fingerprint(ckpt.params);
  r.caches.input_shape = image.shape();
  r.logits = forward_sequence(ckpt.spec.layers, ckpt.params, image, &r.caches.layers);
  r.caches.logits = r.logits;
  r.probs = softmax_xent(r.logits, Label::fake).probs;
  return r;
}

Tensor net_probs(const Checkpoint& ckpt, const Tensor& image) {
  check_image(ckpt, image);
  const Tensor logits = forward_sequence(ckpt.spec.layers, ckpt.params, image, nullptr);
  return softmax_xent(logits, Label::fake).probs;
}

namespace {

void check_caches(const Checkpoint& ckpt, const NetCaches& caches) {
  if (caches.layers.empty() || caches.input_shape != ckpt.spec.input_shape)
    throw CacheError("caches do not come from a forward pass of " + ckpt.spec.model_id);
  if (caches.params_fingerprint != params_fingerprint(ckpt.params))
    throw CacheError("caches were produced with different parameters than " + ckpt.spec.model_id);
}

}  // namespace

BackwardResult net_backward_logits(const Checkpoint& ckpt, const NetCaches& caches,
                                   const Tensor& grad_logits) {
  check_caches(ckpt, caches);
  if (grad_logits.shape() != caches.logits.shape())
    throw ShapeError("grad_logits " + shape_string(grad_logits.shape()) +
                     " does not match logits " + shape_string(caches.logits.shape()));
  BackwardResult r;
  r.input_grad = backward_sequence(ckpt.spec.layers, caches.layers, grad_logits, r.param_grads);
  return r;
}

BackwardResult net_backward(const Checkpoint& ckpt, const NetCaches& caches, Label label) {
  check_caches(ckpt, caches);
  const SoftmaxXent sx = softmax_xent(caches.logits, label);
  BackwardResult r = net_backward_logits(ckpt, caches, sx.grad_logits);
  r.loss = sx.loss;
  return r;
}

void to_json(json& j, const LayerDesc& l) {
  j = json{{"kind", to_string(l.kind)}, {"name", l.name}};
  if (l.units) j["units"] = l.units;
  if (l.kernel) j["kernel"] = l.kernel;
  if (l.kind == LayerKind::conv || l.kind == LayerKind::sepconv || l.kind == LayerKind::maxpool) {
    j["stride"] = l.stride;
    j["pad"] = l.pad;
  }
  if (!l.branches.empty()) j["branches"] = l.branches;
}

void from_json(const json& j, LayerDesc& l) {
  l = LayerDesc{};
  l.kind = layer_kind_from_string(j.at("kind").get<std::string>());
  l.name = j.at("name").get<std::string>();
  l.units = j.value("units", std::size_t{0});
  l.kernel = j.value("kernel", std::size_t{0});
  l.stride = j.value("stride", std::size_t{1});
  l.pad = j.value("pad", std::size_t{0});
  if (j.contains("branches")) l.branches = j.at("branches").get<std::vector<std::vector<LayerDesc>>>();
}

void to_json(json& j, const NetworkSpec& s) {
  j = json{{"model_id", s.model_id},
           {"input_shape", s.input_shape},
           {"num_classes", s.num_classes},
           {"layers", s.layers}};
}

void from_json(const json& j, NetworkSpec& s) {
  s.model_id = j.at("model_id").get<std::string>();
  s.input_shape = j.at("input_shape").get<Shape>();
  s.num_classes = j.at("num_classes").get<std::size_t>();
  s.layers = j.at("layers").get<std::vector<LayerDesc>>();
}

}  // namespace fusedet
